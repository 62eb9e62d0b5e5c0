#include "hvc/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "hvc/errors.hpp"

namespace hvc {
namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const std::string& expect) {
  throw ConfigError("bad value '" + value + "' for config key '" + key +
                    "' (expected " + expect + ")");
}

long long parse_int(const std::string& key, const std::string& value) {
  long long out = 0;
  auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || p != value.data() + value.size())
    bad_value(key, value, "an integer");
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || p != value.data() + value.size())
    bad_value(key, value, "an unsigned integer");
  return out;
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    double out = std::stod(value, &used);
    if (used != value.size()) bad_value(key, value, "a number");
    return out;
  } catch (const std::logic_error&) {
    bad_value(key, value, "a number");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "on" || value == "true" || value == "1") return true;
  if (value == "off" || value == "false" || value == "0") return false;
  bad_value(key, value, "on|off");
}

}  // namespace

data::AugmentConfig RunConfig::augment() const {
  auto a = data::AugmentConfig::for_strategy(strategy);
  if (rotate) a.rotate = *rotate;
  if (translate) a.translate = *translate;
  if (width) a.width = *width;
  if (erase) a.erase = *erase;
  if (translate_cap) a.translate_cap = *translate_cap;
  if (rotation_max_deg) a.rotation_max_deg = *rotation_max_deg;
  if (rotation_prob) a.rotation_prob = *rotation_prob;
  if (width_squeeze_max) a.width_squeeze_max = *width_squeeze_max;
  if (erase_patch) a.erase_patch = *erase_patch;
  return a;
}

void RunConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 2)
    throw ConfigError("batch_size must be >= 2 (train-mode batch norm)");
  if (eval_batch < 1) throw ConfigError("eval_batch must be >= 1");
  if (!(base_lr > 0)) throw ConfigError("base_lr must be > 0");
  if (!(lr_decay > 0 && lr_decay <= 1))
    throw ConfigError("lr_decay must be in (0, 1]");
  if (!(ema_decay >= 0 && ema_decay < 1))
    throw ConfigError("ema_decay must be in [0, 1)");
  if (threads < 0) throw ConfigError("threads must be >= 0");
  if (queue_depth < 1) throw ConfigError("queue_depth must be >= 1");
  auto a = augment();
  if (a.translate_cap < 0) throw ConfigError("augment.translate_cap must be >= 0");
  if (!(a.rotation_prob >= 0 && a.rotation_prob <= 1))
    throw ConfigError("augment.rotation_prob must be in [0, 1]");
  if (!(a.rotation_max_deg >= 0))
    throw ConfigError("augment.rotation_max_deg must be >= 0");
  if (!(a.width_squeeze_max >= 0 && a.width_squeeze_max < 1))
    throw ConfigError("augment.width_squeeze_max must be in [0, 1)");
  if (a.erase_patch < 0 || a.erase_patch > 20)
    throw ConfigError("augment.erase_patch must be in [0, 20]");
  model.validate();
}

const std::vector<ConfigKeyDoc>& config_key_docs() {
  static const std::vector<ConfigKeyDoc> docs = {
      {"epochs", "training epochs (default 300)"},
      {"base_lr", "initial Adam learning rate (default 0.001)"},
      {"lr_decay", "per-epoch learning-rate decay factor (default 0.98)"},
      {"ema_decay", "per-step shadow-weight decay (default 0.999)"},
      {"batch_size", "training minibatch size, >= 2 (default 120)"},
      {"eval_batch", "evaluation minibatch size (default 250)"},
      {"seed", "master RNG seed (default 1)"},
      {"threads", "worker thread cap, 0 = all hardware threads"},
      {"queue_depth", "augmentation lookahead in batches (default 4)"},
      {"out_dir", "directory for checkpoints, logs and predictions"},
      {"model.head", "classification head: hvc | fc"},
      {"model.derivation", "capsule derivation: z | xy"},
      {"model.branches", "branch count: 1 | 3"},
      {"model.merge", "3-branch merge weights: fixed | random | ones"},
      {"model.classes", "output classes (default 10)"},
      {"model.capsule_bn",
       "capsule-grid batch-norm granularity: per-class | shared"},
      {"augment.strategy",
       "base toggles: full | translate2 | translate-margin | none"},
      {"augment.rotate", "override rotation on|off"},
      {"augment.translate", "override translation on|off"},
      {"augment.width", "override width squeeze on|off"},
      {"augment.erase", "override erasure on|off"},
      {"augment.translate_cap",
       "translation cap in pixels, 0 = full margin (default per strategy)"},
      {"augment.rotation_max_deg", "max rotation angle (default 30)"},
      {"augment.rotation_prob", "rotation apply probability (default 0.5)"},
      {"augment.width_squeeze_max", "max width squeeze fraction (default 0.25)"},
      {"augment.erase_patch", "erasure patch side in pixels (default 4)"},
      {"data.train_images", "IDX image file for training"},
      {"data.train_labels", "IDX label file for training"},
      {"data.test_images", "IDX image file for evaluation"},
      {"data.test_labels", "IDX label file for evaluation"},
  };
  return docs;
}

void apply_config_kv(RunConfig& cfg, const std::string& key,
                     const std::string& value) {
  if (key == "epochs") {
    cfg.epochs = static_cast<int>(parse_int(key, value));
  } else if (key == "base_lr") {
    cfg.base_lr = parse_double(key, value);
  } else if (key == "lr_decay") {
    cfg.lr_decay = parse_double(key, value);
  } else if (key == "ema_decay") {
    cfg.ema_decay = parse_double(key, value);
  } else if (key == "batch_size") {
    cfg.batch_size = static_cast<int>(parse_int(key, value));
  } else if (key == "eval_batch") {
    cfg.eval_batch = static_cast<int>(parse_int(key, value));
  } else if (key == "seed") {
    cfg.seed = parse_u64(key, value);
  } else if (key == "threads") {
    cfg.threads = static_cast<int>(parse_int(key, value));
  } else if (key == "queue_depth") {
    cfg.queue_depth = static_cast<int>(parse_int(key, value));
  } else if (key == "out_dir") {
    cfg.out_dir = value;
  } else if (key == "model.head") {
    if (value == "hvc")
      cfg.model.head = HeadKind::kHvc;
    else if (value == "fc")
      cfg.model.head = HeadKind::kFullyConnected;
    else
      bad_value(key, value, "hvc|fc");
  } else if (key == "model.derivation") {
    if (value == "z")
      cfg.model.derivation = CapsuleDerivation::kZ;
    else if (value == "xy")
      cfg.model.derivation = CapsuleDerivation::kXY;
    else
      bad_value(key, value, "z|xy");
  } else if (key == "model.branches") {
    cfg.model.branches = static_cast<int>(parse_int(key, value));
  } else if (key == "model.merge") {
    if (value == "fixed")
      cfg.model.merge = MergeKind::kNotLearnable;
    else if (value == "random")
      cfg.model.merge = MergeKind::kRandomInit;
    else if (value == "ones")
      cfg.model.merge = MergeKind::kOnesInit;
    else
      bad_value(key, value, "fixed|random|ones");
  } else if (key == "model.classes") {
    cfg.model.classes = static_cast<int>(parse_int(key, value));
  } else if (key == "model.capsule_bn") {
    if (value == "per-class")
      cfg.model.capsule_bn_per_class = true;
    else if (value == "shared")
      cfg.model.capsule_bn_per_class = false;
    else
      bad_value(key, value, "per-class|shared");
  } else if (key == "augment.strategy") {
    if (value == "full")
      cfg.strategy = data::AugmentStrategy::kFull;
    else if (value == "translate2")
      cfg.strategy = data::AugmentStrategy::kTwoPixelTranslateOnly;
    else if (value == "translate-margin")
      cfg.strategy = data::AugmentStrategy::kFullMarginTranslateOnly;
    else if (value == "none")
      cfg.strategy = data::AugmentStrategy::kNone;
    else
      bad_value(key, value, "full|translate2|translate-margin|none");
  } else if (key == "augment.rotate") {
    cfg.rotate = parse_bool(key, value);
  } else if (key == "augment.translate") {
    cfg.translate = parse_bool(key, value);
  } else if (key == "augment.width") {
    cfg.width = parse_bool(key, value);
  } else if (key == "augment.erase") {
    cfg.erase = parse_bool(key, value);
  } else if (key == "augment.translate_cap") {
    cfg.translate_cap = static_cast<int>(parse_int(key, value));
  } else if (key == "augment.rotation_max_deg") {
    cfg.rotation_max_deg = parse_double(key, value);
  } else if (key == "augment.rotation_prob") {
    cfg.rotation_prob = parse_double(key, value);
  } else if (key == "augment.width_squeeze_max") {
    cfg.width_squeeze_max = parse_double(key, value);
  } else if (key == "augment.erase_patch") {
    cfg.erase_patch = static_cast<int>(parse_int(key, value));
  } else if (key == "data.train_images") {
    cfg.train_images = value;
  } else if (key == "data.train_labels") {
    cfg.train_labels = value;
  } else if (key == "data.test_images") {
    cfg.test_images = value;
  } else if (key == "data.test_labels") {
    cfg.test_labels = value;
  } else {
    std::string known;
    for (const auto& d : config_key_docs()) {
      if (!known.empty()) known += ", ";
      known += d.key;
    }
    throw ConfigError("unknown config key '" + key + "'; valid keys: " + known);
  }
}

void apply_config_text(RunConfig& cfg, const std::string& text,
                       const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos)
      line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) +
                        ": expected 'key = value', got '" + line + "'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError(origin + ":" + std::to_string(lineno) +
                        ": empty key");
    try {
      apply_config_kv(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " +
                        e.what());
    }
  }
}

RunConfig load_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  RunConfig cfg;
  apply_config_text(cfg, buf.str(), path);
  return cfg;
}

std::string dump_config(const RunConfig& cfg) {
  std::ostringstream out;
  out.precision(17);
  out << "epochs = " << cfg.epochs << "\n";
  out << "base_lr = " << cfg.base_lr << "\n";
  out << "lr_decay = " << cfg.lr_decay << "\n";
  out << "ema_decay = " << cfg.ema_decay << "\n";
  out << "batch_size = " << cfg.batch_size << "\n";
  out << "eval_batch = " << cfg.eval_batch << "\n";
  out << "seed = " << cfg.seed << "\n";
  out << "threads = " << cfg.threads << "\n";
  out << "queue_depth = " << cfg.queue_depth << "\n";
  out << "out_dir = " << cfg.out_dir << "\n";
  out << "model.head = "
      << (cfg.model.head == HeadKind::kHvc ? "hvc" : "fc") << "\n";
  out << "model.derivation = "
      << (cfg.model.derivation == CapsuleDerivation::kZ ? "z" : "xy") << "\n";
  out << "model.branches = " << cfg.model.branches << "\n";
  const char* merge = cfg.model.merge == MergeKind::kNotLearnable ? "fixed"
                      : cfg.model.merge == MergeKind::kRandomInit ? "random"
                                                                  : "ones";
  out << "model.merge = " << merge << "\n";
  out << "model.classes = " << cfg.model.classes << "\n";
  out << "model.capsule_bn = "
      << (cfg.model.capsule_bn_per_class ? "per-class" : "shared") << "\n";
  const char* strat = "full";
  switch (cfg.strategy) {
    case data::AugmentStrategy::kFull: strat = "full"; break;
    case data::AugmentStrategy::kTwoPixelTranslateOnly: strat = "translate2"; break;
    case data::AugmentStrategy::kFullMarginTranslateOnly: strat = "translate-margin"; break;
    case data::AugmentStrategy::kNone: strat = "none"; break;
  }
  out << "augment.strategy = " << strat << "\n";
  auto a = cfg.augment();
  out << "augment.rotate = " << (a.rotate ? "on" : "off") << "\n";
  out << "augment.translate = " << (a.translate ? "on" : "off") << "\n";
  out << "augment.width = " << (a.width ? "on" : "off") << "\n";
  out << "augment.erase = " << (a.erase ? "on" : "off") << "\n";
  out << "augment.translate_cap = " << a.translate_cap << "\n";
  out << "augment.rotation_max_deg = " << a.rotation_max_deg << "\n";
  out << "augment.rotation_prob = " << a.rotation_prob << "\n";
  out << "augment.width_squeeze_max = " << a.width_squeeze_max << "\n";
  out << "augment.erase_patch = " << a.erase_patch << "\n";
  out << "data.train_images = " << cfg.train_images << "\n";
  out << "data.train_labels = " << cfg.train_labels << "\n";
  out << "data.test_images = " << cfg.test_images << "\n";
  out << "data.test_labels = " << cfg.test_labels << "\n";
  return out.str();
}

}  // namespace hvc
