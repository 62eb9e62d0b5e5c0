#include "hvc/train.hpp"

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numeric>
#include <thread>
#include <utility>

#include "hvc/augment.hpp"
#include "hvc/errors.hpp"
#include "hvc/ops.hpp"
#include "hvc/optim.hpp"
#include "hvc/parallel.hpp"
#include "hvc/rng.hpp"

namespace hvc {
namespace {

namespace fs = std::filesystem;

constexpr std::uint64_t kShuffleStream = 400;

void fill_normalized(float* dst, std::span<const std::uint8_t> src) {
  for (std::size_t i = 0; i < src.size(); ++i)
    dst[i] = static_cast<float>(src[i]) * (1.0f / 255.0f);
}

std::vector<std::uint8_t> argmax_rows(const Tensor<float>& logits) {
  std::size_t n = logits.dim(0), m = logits.dim(1);
  std::vector<std::uint8_t> out(n);
  const float* p = logits.data();
  for (std::size_t r = 0; r < n; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < m; ++c)
      if (p[r * m + c] > p[r * m + best]) best = c;
    out[r] = static_cast<std::uint8_t>(best);
  }
  return out;
}

struct PreparedBatch {
  Tensor<float> x;
  std::vector<std::int32_t> labels;
  std::size_t index = 0;  // batch index within the epoch
};

// Bounded MPSC queue; the producer prepares batches in epoch order.
class BatchQueue {
 public:
  explicit BatchQueue(std::size_t depth) : depth_(depth) {}

  void push(PreparedBatch&& b) {
    std::unique_lock lk(mu_);
    cv_room_.wait(lk, [&] { return q_.size() < depth_ || closed_; });
    if (closed_) return;
    q_.push_back(std::move(b));
    cv_data_.notify_one();
  }

  bool pop(PreparedBatch& out) {
    std::unique_lock lk(mu_);
    cv_data_.wait(lk, [&] { return !q_.empty() || done_ || closed_; });
    if (q_.empty()) return false;
    out = std::move(q_.front());
    q_.pop_front();
    cv_room_.notify_one();
    return true;
  }

  void finish() {  // producer: no more batches
    std::lock_guard lk(mu_);
    done_ = true;
    cv_data_.notify_all();
  }

  void close() {  // consumer: stop the producer early
    std::lock_guard lk(mu_);
    closed_ = true;
    cv_room_.notify_all();
    cv_data_.notify_all();
  }

 private:
  std::size_t depth_;
  std::deque<PreparedBatch> q_;
  std::mutex mu_;
  std::condition_variable cv_data_, cv_room_;
  bool done_ = false, closed_ = false;
};

PreparedBatch make_batch(const data::ImageSet& set,
                         std::span<const std::uint32_t> order,
                         std::size_t batch_index, std::size_t batch_size,
                         const data::AugmentConfig& aug, bool augment_on,
                         std::uint64_t seed, std::uint64_t epoch) {
  PreparedBatch b;
  b.index = batch_index;
  b.x = Tensor<float>({batch_size, data::kSide, data::kSide, 1});
  b.labels.resize(batch_size);
  float* dst = b.x.data();
  for (std::size_t i = 0; i < batch_size; ++i) {
    std::size_t sample = order[batch_index * batch_size + i];
    b.labels[i] = set.labels[sample];
    if (augment_on) {
      data::Image im = data::augment_pipeline(set.image_copy(sample), aug,
                                              seed, epoch, sample);
      fill_normalized(dst + i * data::kPixels, {im.data(), im.size()});
    } else {
      fill_normalized(dst + i * data::kPixels, set.image(sample));
    }
  }
  return b;
}

std::array<float, 3> merge_weight_log(Model& model) {
  std::array<float, 3> w = {1.0f, 1.0f, 1.0f};
  for (auto& p : model.params())
    if (p.name == "merge/weights")
      for (std::size_t i = 0; i < 3 && i < p.tensor->size(); ++i)
        w[i] = p.tensor->values()[i];
  return w;
}

}  // namespace

EvalResult evaluate(Model& model, const data::ImageSet& set, int batch,
                    int threads) {
  if (batch < 1) throw ConfigError("eval batch must be >= 1");
  EvalResult r;
  r.preds.reserve(set.count);
  std::size_t done = 0, correct = 0;
  while (done < set.count) {
    std::size_t n = std::min<std::size_t>(batch, set.count - done);
    Tensor<float> x({n, data::kSide, data::kSide, 1});
    for (std::size_t i = 0; i < n; ++i)
      fill_normalized(x.data() + i * data::kPixels, set.image(done + i));
    auto out = model.forward(nullptr, x, ops::BnMode::kEval, threads);
    auto preds = argmax_rows(out.logits);
    for (std::size_t i = 0; i < n; ++i)
      if (preds[i] == set.labels[done + i]) ++correct;
    r.preds.insert(r.preds.end(), preds.begin(), preds.end());
    done += n;
  }
  r.accuracy = set.count ? static_cast<double>(correct) / set.count : 0.0;
  return r;
}

EmaScope::EmaScope(Model& model, TrainState& state) : state_(state) {
  for (auto& p : model.trainable_params()) params_.push_back(p.tensor);
  if (params_.size() != state_.ema.size())
    throw DimensionError("EMA shadow count " +
                         std::to_string(state_.ema.size()) +
                         " does not match trainable parameter count " +
                         std::to_string(params_.size()));
  for (std::size_t i = 0; i < params_.size(); ++i)
    params_[i]->swap_data(state_.ema[i]);
}

EmaScope::~EmaScope() {
  for (std::size_t i = 0; i < params_.size(); ++i)
    params_[i]->swap_data(state_.ema[i]);
}

TrainResult train(const RunConfig& cfg, const data::ImageSet& train_set,
                  const data::ImageSet& test_set, const std::string& resume,
                  std::ostream* progress) {
  cfg.validate();
  if (train_set.count < static_cast<std::size_t>(cfg.batch_size))
    throw ConfigError("batch_size " + std::to_string(cfg.batch_size) +
                      " exceeds training-set size " +
                      std::to_string(train_set.count));

  fs::create_directories(cfg.out_dir);

  Model model(cfg.model, cfg.seed);
  TrainState state = TrainState::init(model, cfg.seed);
  if (!resume.empty()) {
    auto loaded = load_checkpoint(resume);
    if (!(loaded.config == cfg.model))
      throw ConfigError("resume checkpoint '" + resume +
                        "' holds a different model configuration");
    if (loaded.state.seed != cfg.seed)
      throw ConfigError("resume checkpoint seed " +
                        std::to_string(loaded.state.seed) +
                        " does not match configured seed " +
                        std::to_string(cfg.seed));
    model = std::move(loaded.model);
    state = std::move(loaded.state);
  }

  {
    std::ofstream rec(fs::path(cfg.out_dir) / "config.txt", std::ios::binary);
    rec << dump_config(cfg);
  }

  auto trainable = model.trainable_params();
  std::vector<std::pair<std::string, Tensor<float>*>> named;
  std::vector<Tensor<float>*> ptrs;
  for (auto& p : trainable) {
    named.emplace_back(p.name, p.tensor);
    ptrs.push_back(p.tensor);
  }

  const auto aug = cfg.augment();
  const bool augment_on =
      aug.rotate || aug.translate || aug.width || aug.erase;
  const std::size_t steps_per_epoch = train_set.count / cfg.batch_size;

  TrainResult result;
  result.metrics_path = (fs::path(cfg.out_dir) / "metrics.csv").string();
  result.best_checkpoint = (fs::path(cfg.out_dir) / "best.hvck").string();
  result.last_checkpoint = (fs::path(cfg.out_dir) / "last.hvck").string();
  std::ofstream metrics(result.metrics_path,
                        std::ios::binary | std::ios::app);
  if (!metrics)
    throw DataError("cannot open metrics log '" + result.metrics_path + "'");
  metrics.precision(10);

  for (std::uint32_t epoch = state.epoch;
       epoch < static_cast<std::uint32_t>(cfg.epochs); ++epoch) {
    const double lr = lr_at(epoch, cfg.base_lr, cfg.lr_decay);

    std::vector<std::uint32_t> order(train_set.count);
    std::iota(order.begin(), order.end(), 0u);
    Rng shuffle = Rng::stream(cfg.seed, {kShuffleStream, epoch});
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle.next_below(i)]);

    BatchQueue queue(cfg.queue_depth);
    std::exception_ptr producer_error;
    std::thread producer([&] {
      try {
        for (std::size_t b = 0; b < steps_per_epoch; ++b)
          queue.push(make_batch(train_set, order, b, cfg.batch_size, aug,
                                augment_on, cfg.seed, epoch));
      } catch (...) {
        producer_error = std::current_exception();
      }
      queue.finish();
    });

    double loss_sum = 0;
    PreparedBatch batch;
    try {
      while (queue.pop(batch)) {
        Graph<float> g;
        auto out = model.forward(&g, batch.x, ops::BnMode::kTrain,
                                 cfg.threads);
        auto sm = ops::softmax_cross_entropy(&g, out.logits, batch.labels);
        float loss = sm.loss.item();
        if (!std::isfinite(loss))
          throw NumericError("non-finite loss " + std::to_string(loss) +
                             " at epoch " + std::to_string(epoch + 1) +
                             ", batch " + std::to_string(batch.index) +
                             " (step " + std::to_string(state.adam.step + 1) +
                             ")");
        g.backward(sm.loss);
        adam_step<float>(named, state.adam, static_cast<float>(lr));
        ema_update<float>(state.ema, ptrs, static_cast<float>(cfg.ema_decay));
        loss_sum += loss;
      }
    } catch (...) {
      queue.close();
      producer.join();
      throw;
    }
    producer.join();
    if (producer_error) std::rethrow_exception(producer_error);

    state.epoch = epoch + 1;
    double train_loss = steps_per_epoch ? loss_sum / steps_per_epoch : 0.0;

    double acc = 0;
    {
      EmaScope ema(model, state);
      auto ev = evaluate(model, test_set, cfg.eval_batch, cfg.threads);
      acc = ev.accuracy;
    }

    auto w = merge_weight_log(model);
    metrics << (epoch + 1) << ", " << lr << ", " << train_loss << ", " << acc
            << ", " << w[0] << ", " << w[1] << ", " << w[2] << "\n";
    metrics.flush();
    if (progress)
      (*progress) << "epoch " << (epoch + 1) << "/" << cfg.epochs
                  << "  lr " << lr << "  loss " << train_loss
                  << "  ema acc " << acc << "\n";

    save_checkpoint(result.last_checkpoint, model, state);
    if (acc > result.best_accuracy || result.best_epoch == 0) {
      result.best_accuracy = acc;
      result.best_epoch = static_cast<int>(epoch + 1);
      save_checkpoint(result.best_checkpoint, model, state);
    }
    result.last_accuracy = acc;
    ++result.epochs_run;
  }

  return result;
}

}  // namespace hvc
