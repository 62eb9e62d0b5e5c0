#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hvc/tensor.hpp"

namespace hvc {

template <typename T>
struct AdamParams {
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);
};

// One bias-corrected Adam update on a single tensor. `step` is the
// 1-based step count this update represents.
template <typename T>
void adam_update(Tensor<T>& param, std::span<const T> grad, Tensor<T>& m,
                 Tensor<T>& v, std::uint64_t step, T lr,
                 const AdamParams<T>& hp = {});

// Adam over a named parameter group; moments are owned externally so
// checkpoints can serialize them.
template <typename T>
struct AdamState {
  std::uint64_t step = 0;
  std::vector<Tensor<T>> m, v;

  static AdamState init(std::span<Tensor<T>* const> params) {
    AdamState s;
    for (const auto* p : params) {
      s.m.emplace_back(p->shape());
      s.v.emplace_back(p->shape());
    }
    return s;
  }
};

// Applies one step to every parameter. A parameter without a populated
// gradient buffer is an error naming it.
template <typename T>
void adam_step(std::span<const std::pair<std::string, Tensor<T>*>> params,
               AdamState<T>& state, T lr, const AdamParams<T>& hp = {});

// 0.001 * 0.98^epoch, built by repeated multiplication so the ratio of
// consecutive epochs is exactly the decay factor in floating point.
double lr_at(int epoch, double base = 1e-3, double decay = 0.98);

// shadow <- decay*shadow + (1-decay)*param for each pair.
template <typename T>
void ema_update(std::span<Tensor<T>> shadows,
                std::span<Tensor<T>* const> params, T decay);

}  // namespace hvc
