#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "hvc/checkpoint.hpp"
#include "hvc/config.hpp"
#include "hvc/mnist.hpp"
#include "hvc/model.hpp"

namespace hvc {

struct EvalResult {
  double accuracy = 0;
  std::vector<std::uint8_t> preds;  // one predicted class per sample
};

// Eval-mode forward over the whole set. Results are independent of the
// thread count; ties in the logit argmax go to the lowest class index.
EvalResult evaluate(Model& model, const data::ImageSet& set, int batch = 250,
                    int threads = 0);

// Swaps the EMA shadows into the model for evaluation and back out when
// the scope ends. Checkpoints must be written outside the scope.
class EmaScope {
 public:
  EmaScope(Model& model, TrainState& state);
  ~EmaScope();
  EmaScope(const EmaScope&) = delete;
  EmaScope& operator=(const EmaScope&) = delete;

 private:
  std::vector<Tensor<float>*> params_;
  TrainState& state_;
};

struct TrainResult {
  int epochs_run = 0;
  double best_accuracy = 0;
  int best_epoch = 0;  // 1-based epoch that produced best.hvck
  double last_accuracy = 0;
  std::string best_checkpoint;
  std::string last_checkpoint;
  std::string metrics_path;
};

// The full loop: per-epoch shuffle from a dedicated stream, keyed
// augmentation, Adam at lr_at(epoch), per-step EMA, EMA-swapped
// evaluation after every epoch, best/last checkpoints plus an
// append-only metrics log (`epoch, lr, train_loss, test_acc_ema, w1,
// w2, w3`) under cfg.out_dir. Batch assembly runs in a producer thread
// behind a bounded queue; batch content is deterministic either way.
// `resume` continues a checkpoint whose manifest must match the config.
// Non-finite loss aborts with the offending batch index.
TrainResult train(const RunConfig& cfg, const data::ImageSet& train_set,
                  const data::ImageSet& test_set,
                  const std::string& resume = "",
                  std::ostream* progress = nullptr);

}  // namespace hvc
