#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hvc/augment.hpp"
#include "hvc/model.hpp"

namespace hvc {

// Everything a training run needs, assembled from a flat `key = value`
// config file plus command-line overrides (flags win).
struct RunConfig {
  int epochs = 300;
  double base_lr = 1e-3;
  double lr_decay = 0.98;
  double ema_decay = 0.999;
  int batch_size = 120;
  int eval_batch = 250;
  std::uint64_t seed = 1;
  int threads = 0;      // 0 = all hardware threads
  int queue_depth = 4;  // augmentation lookahead, in batches
  std::string out_dir = "runs/latest";

  ModelConfig model;

  // Augmentation: strategy picks the base toggles, the optional fields
  // override them afterwards regardless of assignment order.
  data::AugmentStrategy strategy = data::AugmentStrategy::kFull;
  std::optional<bool> rotate, translate, width, erase;
  std::optional<int> translate_cap;
  std::optional<double> rotation_max_deg, rotation_prob, width_squeeze_max;
  std::optional<int> erase_patch;

  std::string train_images, train_labels, test_images, test_labels;

  data::AugmentConfig augment() const;
  void validate() const;
};

struct ConfigKeyDoc {
  std::string key;
  std::string doc;
};

// Every key accepted in a config file, with one-line docs (surfaced by
// --help).
const std::vector<ConfigKeyDoc>& config_key_docs();

// Applies one assignment. Unknown keys and malformed values raise
// ConfigError naming the offender.
void apply_config_kv(RunConfig& cfg, const std::string& key,
                     const std::string& value);

// `key = value` per line, `#` starts a comment, blank lines ignored.
void apply_config_text(RunConfig& cfg, const std::string& text,
                       const std::string& origin);
RunConfig load_config_file(const std::string& path);

// Full round-trippable dump of the resolved config (for run records).
std::string dump_config(const RunConfig& cfg);

}  // namespace hvc
