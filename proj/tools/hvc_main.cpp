#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hvc/augment.hpp"
#include "hvc/checkpoint.hpp"
#include "hvc/config.hpp"
#include "hvc/ensemble.hpp"
#include "hvc/errors.hpp"
#include "hvc/gradcheck.hpp"
#include "hvc/mnist.hpp"
#include "hvc/model.hpp"
#include "hvc/parallel.hpp"
#include "hvc/predictions.hpp"
#include "hvc/train.hpp"

namespace {

namespace fs = std::filesystem;

std::string trim(const std::string& s) {
  auto a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return "";
  auto b = s.find_last_not_of(" \t");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string item;
  while (std::getline(in, item, sep)) out.push_back(trim(item));
  return out;
}

void apply_set_flag(hvc::RunConfig& cfg, const std::string& kv) {
  auto eq = kv.find('=');
  if (eq == std::string::npos)
    throw hvc::ConfigError("--set expects key=value, got '" + kv + "'");
  hvc::apply_config_kv(cfg, trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
}

std::string config_key_footer() {
  std::ostringstream out;
  out << "Config file keys (key = value per line, # comments):\n";
  for (const auto& d : hvc::config_key_docs())
    out << "  " << std::left << std::setw(28) << d.key << d.doc << "\n";
  return out.str();
}

hvc::ensemble::TieBreak parse_tie(const std::string& s) {
  if (s == "lowest") return hvc::ensemble::TieBreak::kLowestClass;
  if (s == "first") return hvc::ensemble::TieBreak::kFirstModel;
  throw hvc::ConfigError("--tie expects lowest|first, got '" + s + "'");
}

std::vector<std::uint32_t> parse_thresholds(const std::string& s) {
  std::vector<std::uint32_t> out;
  for (const auto& part : split(s, ',')) {
    if (part.empty()) continue;
    try {
      out.push_back(hvc::ensemble::accuracy_units(std::stod(part)));
    } catch (const std::logic_error&) {
      throw hvc::ConfigError("bad threshold '" + part + "'");
    }
  }
  if (out.empty()) throw hvc::ConfigError("--thresholds lists no values");
  return out;
}

std::vector<int> parse_models(const std::string& s, std::size_t k) {
  std::vector<int> out;
  for (const auto& part : split(s, ',')) {
    if (part.empty()) continue;
    try {
      out.push_back(std::stoi(part));
    } catch (const std::logic_error&) {
      throw hvc::ConfigError("bad model index '" + part + "'");
    }
    if (out.back() < 0 || static_cast<std::size_t>(out.back()) >= k)
      throw hvc::ConfigError("model index " + std::to_string(out.back()) +
                             " out of range for a " + std::to_string(k) +
                             "-model matrix");
  }
  if (out.empty()) throw hvc::ConfigError("--models lists no indices");
  return out;
}

std::string shape_str(const hvc::Shape& s) {
  if (s.empty()) return "scalar";
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out;
}

void print_gradcheck(const std::vector<hvc::gradcheck::SuiteResult>& rs) {
  std::cout << std::left << std::setw(26) << "op" << std::setw(11)
            << "instances" << "max rel err\n";
  for (const auto& r : rs)
    std::cout << std::left << std::setw(26) << r.op << std::setw(11)
              << r.instances << std::scientific << std::setprecision(3)
              << r.max_rel_err << std::defaultfloat << "\n";
}

void print_count_report(const hvc::ensemble::SubsetCountReport& r,
                        bool histogram) {
  std::cout << "models " << r.model_count << ", samples " << r.sample_count
            << "\n";
  std::cout << "family " << r.family << ", tie-break " << r.tie_break << "\n";
  std::cout << "subsets " << (r.exact ? "enumerated " : "sampled ")
            << r.subsets_enumerated;
  if (!r.exact)
    std::cout << " (counts scaled by " << std::setprecision(6) << r.scale
              << ")";
  std::cout << "\n";
  for (std::size_t i = 0; i < r.thresholds.size(); ++i) {
    std::uint32_t u = r.thresholds[i];
    std::cout << ">= " << u / 100 << "." << std::setw(2) << std::setfill('0')
              << u % 100 << std::setfill(' ') << "%  " << r.counts[i] << "\n";
  }
  if (histogram) {
    std::cout << "correct,count\n";
    for (std::size_t c = 0; c < r.histogram.size(); ++c)
      if (r.histogram[c]) std::cout << c << "," << r.histogram[c] << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Branching/merging convolutional network with homogeneous vector "
      "capsules: training, evaluation and ensemble analysis"};
  app.require_subcommand(1);
  app.footer(config_key_footer());

  // train
  auto* t = app.add_subcommand("train", "Train a model");
  std::string t_config, t_resume, t_out;
  std::string t_train_images, t_train_labels, t_test_images, t_test_labels;
  std::vector<std::string> t_sets;
  int t_threads = -1, t_epochs = -1, t_batch = -1;
  std::uint64_t t_seed = 0;
  bool t_fp64 = false;
  t->add_option("--config", t_config, "flat key = value config file");
  t->add_option("--resume", t_resume, "checkpoint to continue from");
  t->add_option("--out", t_out, "output directory (overrides out_dir)");
  t->add_option("--threads", t_threads, "worker thread cap, 0 = hardware");
  t->add_option("--seed", t_seed, "master seed (overrides seed)");
  t->add_option("--epochs", t_epochs, "epoch count (overrides epochs)");
  t->add_option("--batch-size", t_batch, "minibatch size");
  t->add_option("--train-images", t_train_images, "IDX training images");
  t->add_option("--train-labels", t_train_labels, "IDX training labels");
  t->add_option("--test-images", t_test_images, "IDX test images");
  t->add_option("--test-labels", t_test_labels, "IDX test labels");
  t->add_option("--set", t_sets,
                "any config key override, key=value (repeatable)");
  t->add_flag("--fp64-verify", t_fp64,
              "run the fp64 finite-difference gradient suite first");
  t->footer(config_key_footer());
  t->callback([&] {
    hvc::RunConfig cfg;
    if (!t_config.empty()) cfg = hvc::load_config_file(t_config);
    for (const auto& kv : t_sets) apply_set_flag(cfg, kv);
    if (t->count("--seed")) cfg.seed = t_seed;
    if (t_epochs >= 0) cfg.epochs = t_epochs;
    if (t_batch >= 0) cfg.batch_size = t_batch;
    if (t_threads >= 0) {
      cfg.threads = t_threads;
      hvc::set_max_threads(t_threads);
    }
    if (!t_out.empty()) cfg.out_dir = t_out;
    if (!t_train_images.empty()) cfg.train_images = t_train_images;
    if (!t_train_labels.empty()) cfg.train_labels = t_train_labels;
    if (!t_test_images.empty()) cfg.test_images = t_test_images;
    if (!t_test_labels.empty()) cfg.test_labels = t_test_labels;

    if (t_fp64) {
      std::cout << "fp64 gradient verification:\n";
      auto rs = hvc::gradcheck::run_suite(cfg.seed);
      print_gradcheck(rs);
      if (!hvc::gradcheck::all_within(rs))
        throw hvc::NumericError(
            "fp64 gradient verification failed (max rel err >= 1e-4)");
      std::cout << "all ops within 1e-4\n";
    }

    if (cfg.train_images.empty() || cfg.train_labels.empty() ||
        cfg.test_images.empty() || cfg.test_labels.empty())
      throw hvc::ConfigError(
          "data.train_images, data.train_labels, data.test_images and "
          "data.test_labels must all be set (config file or flags)");

    auto train_set = hvc::data::load_idx(cfg.train_images, cfg.train_labels);
    auto test_set = hvc::data::load_idx(cfg.test_images, cfg.test_labels);
    std::cout << "train " << train_set.count << " samples, test "
              << test_set.count << " samples\n";
    auto res = hvc::train(cfg, train_set, test_set, t_resume, &std::cout);
    std::cout << std::setprecision(6) << "best ema accuracy "
              << res.best_accuracy << " at epoch " << res.best_epoch << "\n"
              << "checkpoints: " << res.best_checkpoint << ", "
              << res.last_checkpoint << "\n"
              << "metrics: " << res.metrics_path << "\n";
  });

  // eval
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string e_ckpt, e_images, e_labels;
  int e_batch = 250, e_threads = 0;
  bool e_raw = false;
  e->add_option("--checkpoint", e_ckpt, "checkpoint file")->required();
  e->add_option("--images", e_images, "IDX image file")->required();
  e->add_option("--labels", e_labels, "IDX label file")->required();
  e->add_option("--batch", e_batch, "evaluation batch size");
  e->add_option("--threads", e_threads, "worker thread cap");
  e->add_flag("--raw", e_raw, "use instantaneous weights instead of the EMA");
  e->callback([&] {
    if (e_threads > 0) hvc::set_max_threads(e_threads);
    auto loaded = hvc::load_checkpoint(e_ckpt);
    auto set = hvc::data::load_idx(e_images, e_labels);
    hvc::EvalResult r;
    if (e_raw) {
      r = hvc::evaluate(loaded.model, set, e_batch, e_threads);
    } else {
      hvc::EmaScope ema(loaded.model, loaded.state);
      r = hvc::evaluate(loaded.model, set, e_batch, e_threads);
    }
    auto correct = static_cast<std::uint64_t>(r.accuracy * set.count + 0.5);
    std::cout << std::setprecision(6) << "accuracy " << r.accuracy << " ("
              << correct << "/" << set.count << ")"
              << (e_raw ? " [raw weights]" : " [ema weights]") << "\n";
  });

  // dump-preds
  auto* d = app.add_subcommand(
      "dump-preds", "Evaluate checkpoints and write a prediction matrix");
  std::vector<std::string> d_ckpts;
  std::string d_images, d_labels, d_out;
  int d_batch = 250, d_threads = 0;
  bool d_raw = false;
  d->add_option("--checkpoint", d_ckpts, "checkpoint file (repeatable)")
      ->required();
  d->add_option("--images", d_images, "IDX image file")->required();
  d->add_option("--labels", d_labels, "IDX label file")->required();
  d->add_option("--out", d_out, "output prediction-matrix file")->required();
  d->add_option("--batch", d_batch, "evaluation batch size");
  d->add_option("--threads", d_threads, "worker thread cap");
  d->add_flag("--raw", d_raw, "use instantaneous weights instead of the EMA");
  d->callback([&] {
    if (d_threads > 0) hvc::set_max_threads(d_threads);
    auto set = hvc::data::load_idx(d_images, d_labels);
    hvc::PredictionMatrix mat;
    mat.labels = set.labels;
    for (const auto& path : d_ckpts) {
      auto loaded = hvc::load_checkpoint(path);
      mat.classes = static_cast<std::uint32_t>(loaded.config.classes);
      hvc::EvalResult r;
      if (d_raw) {
        r = hvc::evaluate(loaded.model, set, d_batch, d_threads);
      } else {
        hvc::EmaScope ema(loaded.model, loaded.state);
        r = hvc::evaluate(loaded.model, set, d_batch, d_threads);
      }
      std::cout << fs::path(path).stem().string() << ": accuracy "
                << std::setprecision(6) << r.accuracy << "\n";
      mat.rows.push_back(std::move(r.preds));
      mat.names.push_back(fs::path(path).stem().string());
    }
    hvc::write_prediction_matrix(d_out, mat);
    std::cout << "wrote " << mat.models() << "x" << mat.samples()
              << " prediction matrix to " << d_out << "\n";
  });

  // params
  auto* p = app.add_subcommand("params", "Print the parameter manifest");
  std::string p_head = "hvc-z", p_merge = "ones", p_bn = "per-class";
  int p_branches = 3, p_classes = 10;
  p->add_option("--head", p_head, "hvc-z | hvc-xy | fc");
  p->add_option("--branches", p_branches, "1 | 3");
  p->add_option("--merge", p_merge, "fixed | random | ones");
  p->add_option("--classes", p_classes, "output classes");
  p->add_option("--capsule-bn", p_bn, "per-class | shared");
  p->callback([&] {
    hvc::ModelConfig mc;
    if (p_head == "hvc-z") {
      mc.head = hvc::HeadKind::kHvc;
      mc.derivation = hvc::CapsuleDerivation::kZ;
    } else if (p_head == "hvc-xy") {
      mc.head = hvc::HeadKind::kHvc;
      mc.derivation = hvc::CapsuleDerivation::kXY;
    } else if (p_head == "fc") {
      mc.head = hvc::HeadKind::kFullyConnected;
    } else {
      throw hvc::ConfigError("--head expects hvc-z|hvc-xy|fc, got '" +
                             p_head + "'");
    }
    mc.branches = p_branches;
    if (p_merge == "fixed")
      mc.merge = hvc::MergeKind::kNotLearnable;
    else if (p_merge == "random")
      mc.merge = hvc::MergeKind::kRandomInit;
    else if (p_merge == "ones")
      mc.merge = hvc::MergeKind::kOnesInit;
    else
      throw hvc::ConfigError("--merge expects fixed|random|ones");
    mc.classes = p_classes;
    if (p_bn == "per-class")
      mc.capsule_bn_per_class = true;
    else if (p_bn == "shared")
      mc.capsule_bn_per_class = false;
    else
      throw hvc::ConfigError("--capsule-bn expects per-class|shared");

    hvc::Model model(mc, 1);
    auto man = model.manifest();
    std::cout << std::left << std::setw(22) << "parameter" << std::setw(16)
              << "shape" << std::setw(12) << "count" << "trainable\n";
    for (const auto& en : man.entries)
      std::cout << std::left << std::setw(22) << en.name << std::setw(16)
                << shape_str(en.shape) << std::setw(12) << en.count
                << (en.trainable ? "yes" : "no") << "\n";
    std::cout << "core weights (conv + head): " << man.core_weight_total()
              << "\n";
    std::cout << "trainable parameters:       " << man.trainable_total()
              << "\n";
    std::cout << "grand total:                " << man.total() << "\n";
  });

  // augment preview
  auto* a = app.add_subcommand("augment",
                               "Write augmentation previews as PGM files");
  std::string a_images, a_labels, a_out, a_strategy = "full";
  std::uint64_t a_seed = 1;
  std::vector<std::size_t> a_indices;
  int a_variants = 4;
  a->add_option("--images", a_images, "IDX image file")->required();
  a->add_option("--labels", a_labels, "IDX label file")->required();
  a->add_option("--out", a_out, "output directory")->required();
  a->add_option("--seed", a_seed, "augmentation seed");
  a->add_option("--index", a_indices, "sample index (repeatable, default 0)");
  a->add_option("--variants", a_variants, "variants per sample");
  a->add_option("--strategy", a_strategy,
                "full | translate2 | translate-margin | none");
  a->callback([&] {
    hvc::RunConfig probe;
    hvc::apply_config_kv(probe, "augment.strategy", a_strategy);
    auto cfg = probe.augment();
    auto set = hvc::data::load_idx(a_images, a_labels);
    if (a_indices.empty()) a_indices.push_back(0);
    fs::create_directories(a_out);
    for (auto idx : a_indices) {
      if (idx >= set.count)
        throw hvc::ConfigError("--index " + std::to_string(idx) +
                               " out of range (" + std::to_string(set.count) +
                               " samples)");
      auto orig = set.image_copy(idx);
      auto base = fs::path(a_out) / ("sample" + std::to_string(idx));
      hvc::data::write_pgm(base.string() + "_orig.pgm",
                           {orig.data(), orig.size()});
      for (int v = 0; v < a_variants; ++v) {
        std::vector<hvc::data::AugmentOp> trace;
        auto im = hvc::data::augment_pipeline(orig, cfg, a_seed, v, idx,
                                              &trace);
        hvc::data::write_pgm(base.string() + "_v" + std::to_string(v) +
                                 ".pgm",
                             {im.data(), im.size()});
        std::cout << "sample " << idx << " variant " << v << " (label "
                  << int(set.labels[idx]) << "): ops";
        if (trace.empty()) std::cout << " none";
        for (auto op : trace) {
          switch (op) {
            case hvc::data::AugmentOp::kRotate: std::cout << " rotate"; break;
            case hvc::data::AugmentOp::kTranslate:
              std::cout << " translate";
              break;
            case hvc::data::AugmentOp::kWidth: std::cout << " width"; break;
            case hvc::data::AugmentOp::kErase: std::cout << " erase"; break;
          }
        }
        std::cout << "\n";
      }
    }
    std::cout << "wrote previews to " << a_out << "\n";
  });

  // ensemble
  auto* en = app.add_subcommand("ensemble", "Majority-vote ensemble analysis");
  en->require_subcommand(1);

  auto* ec = en->add_subcommand(
      "count", "Count subsets reaching accuracy thresholds");
  std::string c_matrix, c_sizes = "ge2", c_thresholds, c_tie = "lowest";
  int c_threads = 0;
  std::uint64_t c_sample = 0, c_sample_seed = 1;
  bool c_hist = false;
  ec->add_option("--matrix", c_matrix, "prediction-matrix file")->required();
  ec->add_option("--sizes", c_sizes, "all | ge2 | odd | range:<lo>-<hi>");
  ec->add_option("--thresholds", c_thresholds,
                 "comma-separated accuracy percentages, e.g. 99.80,99.82")
      ->required();
  ec->add_option("--tie", c_tie, "lowest | first");
  ec->add_option("--threads", c_threads, "worker thread cap");
  ec->add_option("--sample", c_sample,
                 "Monte-Carlo draws instead of exact enumeration");
  ec->add_option("--sample-seed", c_sample_seed, "sampling seed");
  ec->add_flag("--histogram", c_hist, "also print the correct-count histogram");
  ec->callback([&] {
    if (c_threads > 0) hvc::set_max_threads(c_threads);
    auto mat = hvc::read_prediction_matrix(c_matrix);
    auto family = hvc::ensemble::SubsetFamily::parse(c_sizes);
    auto thresholds = parse_thresholds(c_thresholds);
    auto tie = parse_tie(c_tie);
    auto report =
        c_sample > 0
            ? hvc::ensemble::sample_subsets(mat, family, thresholds, c_sample,
                                            c_sample_seed, tie)
            : hvc::ensemble::enumerate_subsets(mat, family, thresholds, tie,
                                               c_threads);
    print_count_report(report, c_hist);
  });

  auto* ev = en->add_subcommand("vote", "Majority vote of chosen models");
  std::string v_matrix, v_models, v_tie = "lowest";
  ev->add_option("--matrix", v_matrix, "prediction-matrix file")->required();
  ev->add_option("--models", v_models, "comma-separated model indices")
      ->required();
  ev->add_option("--tie", v_tie, "lowest | first");
  ev->callback([&] {
    auto mat = hvc::read_prediction_matrix(v_matrix);
    auto models = parse_models(v_models, mat.models());
    auto tie = parse_tie(v_tie);
    auto preds = hvc::ensemble::majority_vote(mat, models, tie);
    std::uint64_t correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i)
      if (preds[i] == mat.labels[i]) ++correct;
    std::cout << "models";
    for (int m : models) std::cout << " " << m << " (" << mat.names[m] << ")";
    std::cout << "\naccuracy " << std::setprecision(6)
              << (mat.samples() ? double(correct) / mat.samples() : 0.0)
              << " (" << correct << "/" << mat.samples() << ")\n";
  });

  auto* et = en->add_subcommand(
      "troublesome", "Samples that resist the ensembles");
  std::string tr_matrix;
  int tr_limit = 25;
  et->add_option("--matrix", tr_matrix, "prediction-matrix file")->required();
  et->add_option("--limit", tr_limit, "max indices to list per section");
  et->callback([&] {
    auto mat = hvc::read_prediction_matrix(tr_matrix);
    auto r = hvc::ensemble::troublesome_digits(mat);
    std::cout << "models " << r.model_count << ", samples " << r.sample_count
              << "\n";
    std::cout << "full agreement (identical predictions) on "
              << r.full_agreement << " samples\n";
    auto list = [&](const char* title, const auto& items) {
      std::cout << title << ": " << items.size() << " samples\n";
      int shown = 0;
      for (const auto& it : items) {
        if (shown++ >= tr_limit) {
          std::cout << "  ...\n";
          break;
        }
        std::cout << "  index " << it.index << " label " << int(it.label)
                  << " (" << it.correct_models << "/" << r.model_count
                  << " models correct)\n";
      }
    };
    list("misclassified by all models", r.misclassified_by_all);
    list("misclassified by the majority", r.misclassified_by_majority);
  });

  // gradcheck (also reachable through train --fp64-verify)
  auto* gc = app.add_subcommand(
      "gradcheck", "Run the fp64 finite-difference gradient suite");
  std::uint64_t g_seed = 1;
  int g_instances = 20;
  gc->add_option("--seed", g_seed, "suite seed");
  gc->add_option("--instances", g_instances, "instances per op");
  gc->callback([&] {
    auto rs = hvc::gradcheck::run_suite(g_seed, g_instances);
    print_gradcheck(rs);
    if (!hvc::gradcheck::all_within(rs))
      throw hvc::NumericError(
          "fp64 gradient verification failed (max rel err >= 1e-4)");
    std::cout << "all ops within 1e-4\n";
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& ex) {
    int code = app.exit(ex);
    return code == 0 ? 0 : 1;
  } catch (const hvc::ConfigError& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  } catch (const hvc::NumericError& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 3;
  } catch (const hvc::Error& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 2;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 2;
  }
  return 0;
}
