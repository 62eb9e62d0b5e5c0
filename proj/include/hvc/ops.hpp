#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "hvc/tensor.hpp"

namespace hvc::ops {

// Valid (no padding) stride-1 convolution, channels-last.
// input [N,H,W,Cin], kernels [3,3,Cin,Cout] -> [N,H-2,W-2,Cout]. No bias.
template <typename T>
Tensor<T> conv2d_valid(Graph<T>* g, const Tensor<T>& input,
                       const Tensor<T>& kernels, int threads = 0);

enum class BnMode { kTrain, kEval };

template <typename T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  static BatchNormState init(std::size_t features) {
    BatchNormState s;
    s.running_mean = Tensor<T>({features});
    s.running_var = Tensor<T>::full({features}, T(1));
    return s;
  }
};

// Batch norm over all axes except the trailing `feature_axes` axes, which
// form the feature shape (gamma/beta/state are flat over those axes).
// feature_axes=1 covers the per-channel conv case ([N,H,W,C] -> C);
// feature_axes=2 covers per-(class,component) capsule grids ([N,m,d]).
// Train mode uses batch statistics (biased variance) and updates the
// running state in place; eval mode reads the running state only.
template <typename T>
Tensor<T> batch_norm(Graph<T>* g, const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, BatchNormState<T>& state,
                     BnMode mode, int feature_axes = 1, T eps = T(1e-5),
                     T momentum = T(0.99));

// max(x, 0); the subgradient at exactly 0 is 0.
template <typename T>
Tensor<T> relu(Graph<T>* g, const Tensor<T>& x);

// Elementwise a*b / a+b. b may have the same shape as a, be a single
// element, or match a trailing suffix of a's shape (broadcast over the
// leading axes).
template <typename T>
Tensor<T> elementwise_mul(Graph<T>* g, const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> add(Graph<T>* g, const Tensor<T>& a, const Tensor<T>& b);

// Sum over the given axes (removed from the shape; empty = copy, all axes
// = scalar).
template <typename T>
Tensor<T> reduce_sum(Graph<T>* g, const Tensor<T>& x,
                     std::vector<std::size_t> axes);

// Same payload, new shape (element count must match).
template <typename T>
Tensor<T> reshape(Graph<T>* g, const Tensor<T>& x, Shape shape);

// x [N,F] @ w [F,M] + b [M] -> [N,M].
template <typename T>
Tensor<T> linear(Graph<T>* g, const Tensor<T>& x, const Tensor<T>& w,
                 const Tensor<T>& b);

template <typename T>
struct SoftmaxLossResult {
  Tensor<T> loss;   // scalar, mean over the batch
  Tensor<T> probs;  // [N,M], detached
};

// Fused max-subtracted softmax + cross entropy. logits [N,M], labels in
// [0,M). Gradients flow to logits only.
template <typename T>
SoftmaxLossResult<T> softmax_cross_entropy(Graph<T>* g, const Tensor<T>& logits,
                                           std::span<const std::int32_t> labels);

}  // namespace hvc::ops
