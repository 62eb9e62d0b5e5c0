#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "hvc/errors.hpp"

namespace hvc {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

// Dense row-major tensor with shared payload. Gradient storage lives in a
// side Meta block so ops taking const references can still participate in
// autograd; a tensor never allocates a gradient unless it is flagged
// requires_grad or produced while recording on a Graph.
template <typename T>
class Tensor {
 public:
  struct Meta {
    std::shared_ptr<std::vector<T>> grad;
    std::uint64_t graph = 0;  // serial of the graph the node id belongs to
    int node = -1;
    bool wants = false;
  };

  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    check_dims(shape_);
    data_ = std::make_shared<std::vector<T>>(shape_numel(shape_), T(0));
  }

  Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)) {
    check_dims(shape_);
    if (values.size() != shape_numel(shape_))
      throw DimensionError("tensor init: " + std::to_string(values.size()) +
                           " values for shape " + shape_str(shape_));
    data_ = std::make_shared<std::vector<T>>(std::move(values));
  }

  static Tensor full(Shape shape, T value) {
    Tensor t(std::move(shape));
    for (T& v : *t.data_) v = value;
    return t;
  }

  static Tensor scalar(T value) { return full({}, value); }

  bool defined() const { return static_cast<bool>(data_); }
  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_ ? data_->size() : 0; }
  std::size_t dim(std::size_t axis) const {
    if (axis >= shape_.size())
      throw DimensionError("axis " + std::to_string(axis) +
                           " out of range for shape " + shape_str(shape_));
    return shape_[axis];
  }

  T* data() { return data_->data(); }
  const T* data() const { return data_->data(); }
  std::span<T> values() { return {data_->data(), data_->size()}; }
  std::span<const T> values() const { return {data_->data(), data_->size()}; }
  T item() const {
    if (size() != 1)
      throw DimensionError("item() on tensor of shape " + shape_str(shape_));
    return (*data_)[0];
  }

  const std::shared_ptr<std::vector<T>>& data_ptr() const { return data_; }

  void set_requires_grad(bool on) {
    if (on) {
      auto& m = ensure_meta();
      m->wants = true;
      if (!m->grad) m->grad = std::make_shared<std::vector<T>>(size(), T(0));
    } else if (meta_) {
      meta_->wants = false;
      meta_->grad.reset();
      meta_->node = -1;
    }
  }

  bool requires_grad() const { return meta_ && meta_->wants; }
  bool has_grad() const { return meta_ && meta_->grad; }

  std::span<T> grad() {
    if (!has_grad()) throw Error("tensor has no gradient buffer");
    return {meta_->grad->data(), meta_->grad->size()};
  }
  std::span<const T> grad() const {
    if (!has_grad()) throw Error("tensor has no gradient buffer");
    return {meta_->grad->data(), meta_->grad->size()};
  }
  const std::shared_ptr<std::vector<T>>& grad_ptr() const {
    static const std::shared_ptr<std::vector<T>> none;
    return meta_ && meta_->grad ? meta_->grad : none;
  }

  void zero_grad() {
    if (has_grad()) std::fill(meta_->grad->begin(), meta_->grad->end(), T(0));
  }

  // Deep copy of the payload only; the copy is detached.
  Tensor clone() const {
    Tensor t;
    t.shape_ = shape_;
    if (data_) t.data_ = std::make_shared<std::vector<T>>(*data_);
    return t;
  }

  // Swaps payload buffers with `other` (shapes must match). Used for the
  // EMA swap-in/swap-out around evaluation.
  void swap_data(Tensor& other) {
    if (shape_ != other.shape_)
      throw DimensionError("swap_data: shape " + shape_str(shape_) + " vs " +
                           shape_str(other.shape_));
    std::swap(data_, other.data_);
  }

  const std::shared_ptr<Meta>& meta() const { return meta_; }
  // Meta is shared bookkeeping, not value state, so it may be created
  // through a const reference (ops take const inputs but still attach them
  // to a graph).
  std::shared_ptr<Meta>& ensure_meta() const {
    if (!meta_) meta_ = std::make_shared<Meta>();
    return meta_;
  }

  // View over an existing payload under a new shape (used by reshape).
  static Tensor share(Shape shape, std::shared_ptr<std::vector<T>> data) {
    if (!data || data->size() != shape_numel(shape))
      throw DimensionError("share: payload of " +
                           std::to_string(data ? data->size() : 0) +
                           " values for shape " + shape_str(shape));
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::move(data);
    return t;
  }

 private:
  static void check_dims(const Shape& s) {
    for (std::size_t d : s)
      if (d == 0)
        throw DimensionError("zero dimension in shape " + shape_str(s));
  }

  Shape shape_;
  std::shared_ptr<std::vector<T>> data_;
  mutable std::shared_ptr<Meta> meta_;
};

// Tape of backward closures recorded in forward order. backward() replays
// the tape exactly once in reverse; a second call is an error, as is a
// loss that never got attached (e.g. computed outside this graph).
template <typename T>
class Graph {
 public:
  Graph() : serial_(next_serial_.fetch_add(1) + 1) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  std::uint64_t serial() const { return serial_; }
  std::size_t num_ops() const { return steps_.size(); }
  bool consumed() const { return consumed_; }

  bool on_graph(const Tensor<T>& t) const {
    const auto& m = t.meta();
    return m && m->graph == serial_ && m->node >= 0;
  }

  // True if an op taking `t` as input should produce gradients for it.
  bool wants_grad(const Tensor<T>& t) const {
    const auto& m = t.meta();
    if (!m) return false;
    return m->wants || (m->graph == serial_ && m->node >= 0);
  }

  // Gives `t` a node id on this graph and guarantees a gradient buffer.
  // The first attachment per graph zeroes the buffer, so leaf gradients
  // from a previous step never leak into this one.
  int attach(const Tensor<T>& t) {
    auto& m = t.ensure_meta();
    if (m->graph == serial_ && m->node >= 0) return m->node;
    if (!m->grad) m->grad = std::make_shared<std::vector<T>>(t.size(), T(0));
    else std::fill(m->grad->begin(), m->grad->end(), T(0));
    m->graph = serial_;
    m->node = next_node_++;
    return m->node;
  }

  void record(std::function<void()> fn) {
    if (consumed_) throw Error("cannot record on a consumed graph");
    steps_.push_back(std::move(fn));
  }

  void backward(Tensor<T>& loss) {
    if (consumed_) throw Error("backward already ran on this graph");
    if (loss.size() != 1)
      throw DimensionError("backward: loss must be a scalar, got shape " +
                           shape_str(loss.shape()));
    if (!on_graph(loss))
      throw Error("backward: loss is not attached to this graph "
                  "(detached tensor or recorded elsewhere)");
    consumed_ = true;
    (*loss.meta()->grad)[0] = T(1);
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
  }

 private:
  std::vector<std::function<void()>> steps_;
  std::uint64_t serial_;
  int next_node_ = 0;
  bool consumed_ = false;

  static inline std::atomic<std::uint64_t> next_serial_{0};
};

}  // namespace hvc
