#include "hvc/optim.hpp"

#include <cmath>

namespace hvc {

template <typename T>
void adam_update(Tensor<T>& param, std::span<const T> grad, Tensor<T>& m,
                 Tensor<T>& v, std::uint64_t step, T lr,
                 const AdamParams<T>& hp) {
  if (grad.size() != param.size() || m.size() != param.size() ||
      v.size() != param.size())
    throw DimensionError("adam_update: size mismatch for param of shape " +
                         shape_str(param.shape()));
  const T b1 = hp.beta1, b2 = hp.beta2;
  const T bc1 = T(1) - T(std::pow(double(b1), double(step)));
  const T bc2 = T(1) - T(std::pow(double(b2), double(step)));
  T* __restrict p = param.data();
  T* __restrict mv = m.data();
  T* __restrict vv = v.data();
  const T* __restrict g = grad.data();
  const std::size_t n = param.size();
  for (std::size_t i = 0; i < n; ++i) {
    mv[i] = b1 * mv[i] + (T(1) - b1) * g[i];
    vv[i] = b2 * vv[i] + (T(1) - b2) * g[i] * g[i];
    const T mhat = mv[i] / bc1;
    const T vhat = vv[i] / bc2;
    p[i] -= lr * mhat / (T(std::sqrt(double(vhat))) + hp.eps);
  }
}

template <typename T>
void adam_step(std::span<const std::pair<std::string, Tensor<T>*>> params,
               AdamState<T>& state, T lr, const AdamParams<T>& hp) {
  if (params.size() != state.m.size())
    throw ConfigError("adam_step: state holds " +
                      std::to_string(state.m.size()) + " moments for " +
                      std::to_string(params.size()) + " parameters");
  ++state.step;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& p = *params[i].second;
    if (!p.has_grad())
      throw Error("adam_step: no gradient for parameter " + params[i].first);
    adam_update(p, std::span<const T>(p.grad().data(), p.grad().size()),
                state.m[i], state.v[i], state.step, lr, hp);
  }
}

double lr_at(int epoch, double base, double decay) {
  double lr = base;
  for (int e = 0; e < epoch; ++e) lr *= decay;
  return lr;
}

template <typename T>
void ema_update(std::span<Tensor<T>> shadows,
                std::span<Tensor<T>* const> params, T decay) {
  if (shadows.size() != params.size())
    throw ConfigError("ema_update: " + std::to_string(shadows.size()) +
                      " shadows for " + std::to_string(params.size()) +
                      " parameters");
  for (std::size_t i = 0; i < shadows.size(); ++i) {
    T* __restrict s = shadows[i].data();
    const T* __restrict p = params[i]->data();
    const std::size_t n = shadows[i].size();
    for (std::size_t j = 0; j < n; ++j)
      s[j] = decay * s[j] + (T(1) - decay) * p[j];
  }
}

#define HVC_INSTANTIATE_OPTIM(T)                                             \
  template void adam_update<T>(Tensor<T>&, std::span<const T>, Tensor<T>&,   \
                               Tensor<T>&, std::uint64_t, T,                 \
                               const AdamParams<T>&);                        \
  template void adam_step<T>(                                                \
      std::span<const std::pair<std::string, Tensor<T>*>>, AdamState<T>&, T, \
      const AdamParams<T>&);                                                 \
  template void ema_update<T>(std::span<Tensor<T>>,                          \
                              std::span<Tensor<T>* const>, T);

HVC_INSTANTIATE_OPTIM(float)
HVC_INSTANTIATE_OPTIM(double)

}  // namespace hvc
