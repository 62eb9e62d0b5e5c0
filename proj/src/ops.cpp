#include "hvc/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "hvc/parallel.hpp"

namespace hvc::ops {

namespace {

template <typename T>
void check_rank(const Tensor<T>& t, std::size_t rank, const char* op,
                const char* name) {
  if (t.rank() != rank)
    throw DimensionError(std::string(op) + ": " + name + " must have rank " +
                         std::to_string(rank) + ", got shape " +
                         shape_str(t.shape()));
}

enum class Broadcast { kSame, kScalar, kSuffix };

template <typename T>
Broadcast broadcast_mode(const Tensor<T>& a, const Tensor<T>& b,
                         const char* op) {
  if (a.shape() == b.shape()) return Broadcast::kSame;
  if (b.size() == 1) return Broadcast::kScalar;
  if (b.rank() <= a.rank() &&
      std::equal(b.shape().begin(), b.shape().end(),
                 a.shape().end() - static_cast<std::ptrdiff_t>(b.rank())))
    return Broadcast::kSuffix;
  throw DimensionError(std::string(op) + ": shape " + shape_str(b.shape()) +
                       " does not broadcast over " + shape_str(a.shape()) +
                       " (same shape, single element, or trailing suffix)");
}

}  // namespace

template <typename T>
Tensor<T> conv2d_valid(Graph<T>* g, const Tensor<T>& input,
                       const Tensor<T>& kernels, int threads) {
  check_rank(input, 4, "conv2d_valid", "input");
  check_rank(kernels, 4, "conv2d_valid", "kernels");
  const std::size_t n = input.dim(0), h = input.dim(1), w = input.dim(2),
                    ci = input.dim(3);
  const std::size_t kh = kernels.dim(0), kw = kernels.dim(1);
  if (kh != 3 || kw != 3)
    throw DimensionError("conv2d_valid: kernels must be [3,3,Cin,Cout], got " +
                         shape_str(kernels.shape()));
  if (kernels.dim(2) != ci)
    throw DimensionError(
        "conv2d_valid: input channel axis 3 is " + std::to_string(ci) +
        " but kernel axis 2 is " + std::to_string(kernels.dim(2)));
  if (h < kh || w < kw)
    throw DimensionError("conv2d_valid: input " + shape_str(input.shape()) +
                         " is smaller than the kernel window " +
                         std::to_string(kh) + "x" + std::to_string(kw));
  const std::size_t co = kernels.dim(3);
  const std::size_t oh = h - kh + 1, ow = w - kw + 1;

  Tensor<T> out({n, oh, ow, co});
  const T* __restrict in = input.data();
  const T* __restrict kk = kernels.data();
  T* __restrict ob = out.data();

  parallel_for(
      n,
      [&](std::size_t b0, std::size_t b1, int) {
        for (std::size_t b = b0; b < b1; ++b) {
          for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t x = 0; x < ow; ++x) {
              T* __restrict o = ob + ((b * oh + y) * ow + x) * co;
              std::fill(o, o + co, T(0));
              for (std::size_t dy = 0; dy < kh; ++dy) {
                const T* __restrict irow =
                    in + ((b * h + y + dy) * w + x) * ci;
                const T* __restrict krow = kk + dy * kw * ci * co;
                for (std::size_t dx = 0; dx < kw * ci; ++dx) {
                  const T a = irow[dx];
                  const T* __restrict kr = krow + dx * co;
                  for (std::size_t c = 0; c < co; ++c) o[c] += a * kr[c];
                }
              }
            }
          }
        }
      },
      threads);

  if (g == nullptr) return out;
  const bool want_in = g->wants_grad(input);
  const bool want_k = g->wants_grad(kernels);
  if (!want_in && !want_k) return out;

  if (want_in) g->attach(input);
  if (want_k) g->attach(kernels);
  g->attach(out);
  auto in_data = input.data_ptr();
  auto k_data = kernels.data_ptr();
  auto out_grad = out.grad_ptr();
  auto in_grad = want_in ? input.grad_ptr() : nullptr;
  auto k_grad = want_k ? kernels.grad_ptr() : nullptr;

  g->record([=] {
    const T* __restrict go = out_grad->data();
    const T* __restrict kb = k_data->data();
    if (in_grad) {
      T* __restrict gi = in_grad->data();
      parallel_for(
          n,
          [&](std::size_t b0, std::size_t b1, int) {
            for (std::size_t b = b0; b < b1; ++b) {
              for (std::size_t y = 0; y < oh; ++y) {
                for (std::size_t x = 0; x < ow; ++x) {
                  const T* __restrict o = go + ((b * oh + y) * ow + x) * co;
                  for (std::size_t dy = 0; dy < kh; ++dy) {
                    T* __restrict grow = gi + ((b * h + y + dy) * w + x) * ci;
                    const T* __restrict krow = kb + dy * kw * ci * co;
                    for (std::size_t dx = 0; dx < kw * ci; ++dx) {
                      const T* __restrict kr = krow + dx * co;
                      T acc = T(0);
                      for (std::size_t c = 0; c < co; ++c) acc += kr[c] * o[c];
                      grow[dx] += acc;
                    }
                  }
                }
              }
            }
          },
          threads);
    }
    if (k_grad) {
      const T* __restrict ib = in_data->data();
      const std::size_t kcount = k_grad->size();
      const int workers = plan_threads(n, threads);
      std::vector<std::vector<T>> partial;
      if (workers > 1)
        partial.assign(workers, std::vector<T>(kcount, T(0)));
      parallel_for(
          n,
          [&](std::size_t b0, std::size_t b1, int wkr) {
            T* __restrict kg =
                workers > 1 ? partial[wkr].data() : k_grad->data();
            for (std::size_t b = b0; b < b1; ++b) {
              for (std::size_t y = 0; y < oh; ++y) {
                for (std::size_t x = 0; x < ow; ++x) {
                  const T* __restrict o = go + ((b * oh + y) * ow + x) * co;
                  for (std::size_t dy = 0; dy < kh; ++dy) {
                    const T* __restrict irow =
                        ib + ((b * h + y + dy) * w + x) * ci;
                    T* __restrict krow = kg + dy * kw * ci * co;
                    for (std::size_t dx = 0; dx < kw * ci; ++dx) {
                      const T a = irow[dx];
                      T* __restrict kr = krow + dx * co;
                      for (std::size_t c = 0; c < co; ++c) kr[c] += a * o[c];
                    }
                  }
                }
              }
            }
          },
          threads);
      if (workers > 1) {
        T* __restrict kg = k_grad->data();
        for (int wkr = 0; wkr < workers; ++wkr) {
          const T* __restrict p = partial[wkr].data();
          for (std::size_t i = 0; i < kcount; ++i) kg[i] += p[i];
        }
      }
    }
  });
  return out;
}

template <typename T>
Tensor<T> batch_norm(Graph<T>* g, const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, BatchNormState<T>& state,
                     BnMode mode, int feature_axes, T eps, T momentum) {
  if (feature_axes < 1 || static_cast<std::size_t>(feature_axes) >= x.rank())
    throw DimensionError("batch_norm: feature_axes " +
                         std::to_string(feature_axes) +
                         " invalid for input of shape " + shape_str(x.shape()));
  std::size_t features = 1;
  for (std::size_t a = x.rank() - feature_axes; a < x.rank(); ++a)
    features *= x.dim(a);
  const std::size_t rows = x.size() / features;
  if (gamma.size() != features || beta.size() != features)
    throw DimensionError("batch_norm: gamma/beta of sizes " +
                         std::to_string(gamma.size()) + "/" +
                         std::to_string(beta.size()) + " for " +
                         std::to_string(features) + " features");
  if (state.running_mean.size() != features ||
      state.running_var.size() != features)
    throw DimensionError("batch_norm: running state sized " +
                         std::to_string(state.running_mean.size()) + " for " +
                         std::to_string(features) + " features");
  if (mode == BnMode::kTrain && x.dim(0) < 2)
    throw ConfigError(
        "batch_norm: train mode needs a batch of at least 2 samples, got " +
        std::to_string(x.dim(0)));

  Tensor<T> out(x.shape());
  const T* __restrict xb = x.data();
  T* __restrict ob = out.data();
  const T* __restrict gb = gamma.data();
  const T* __restrict bb = beta.data();

  std::vector<T> mean(features), invstd(features);
  if (mode == BnMode::kTrain) {
    // Two-pass batch statistics with double accumulation; per-worker
    // partials merge in worker order.
    const int workers = plan_threads(rows, 0);
    std::vector<std::vector<double>> psum(workers,
                                          std::vector<double>(features, 0.0));
    parallel_for(rows, [&](std::size_t r0, std::size_t r1, int wkr) {
      double* __restrict acc = psum[wkr].data();
      for (std::size_t r = r0; r < r1; ++r) {
        const T* __restrict row = xb + r * features;
        for (std::size_t f = 0; f < features; ++f) acc[f] += row[f];
      }
    });
    std::vector<double> mu(features, 0.0);
    for (int wkr = 0; wkr < workers; ++wkr)
      for (std::size_t f = 0; f < features; ++f) mu[f] += psum[wkr][f];
    for (std::size_t f = 0; f < features; ++f) mu[f] /= double(rows);

    for (auto& p : psum) std::fill(p.begin(), p.end(), 0.0);
    parallel_for(rows, [&](std::size_t r0, std::size_t r1, int wkr) {
      double* __restrict acc = psum[wkr].data();
      for (std::size_t r = r0; r < r1; ++r) {
        const T* __restrict row = xb + r * features;
        for (std::size_t f = 0; f < features; ++f) {
          const double d = double(row[f]) - mu[f];
          acc[f] += d * d;
        }
      }
    });
    std::vector<double> var(features, 0.0);
    for (int wkr = 0; wkr < workers; ++wkr)
      for (std::size_t f = 0; f < features; ++f) var[f] += psum[wkr][f];

    T* __restrict rm = state.running_mean.data();
    T* __restrict rv = state.running_var.data();
    for (std::size_t f = 0; f < features; ++f) {
      var[f] /= double(rows);  // biased
      mean[f] = T(mu[f]);
      invstd[f] = T(1.0 / std::sqrt(var[f] + double(eps)));
      rm[f] = momentum * rm[f] + (T(1) - momentum) * T(mu[f]);
      rv[f] = momentum * rv[f] + (T(1) - momentum) * T(var[f]);
    }
  } else {
    const T* __restrict rm = state.running_mean.data();
    const T* __restrict rv = state.running_var.data();
    for (std::size_t f = 0; f < features; ++f) {
      mean[f] = rm[f];
      invstd[f] = T(1.0 / std::sqrt(double(rv[f]) + double(eps)));
    }
  }

  {
    // y = scale*x + shift with per-feature constants.
    std::vector<T> scale(features), shift(features);
    for (std::size_t f = 0; f < features; ++f) {
      scale[f] = gb[f] * invstd[f];
      shift[f] = bb[f] - scale[f] * mean[f];
    }
    const T* __restrict sc = scale.data();
    const T* __restrict sh = shift.data();
    parallel_for(rows, [&](std::size_t r0, std::size_t r1, int) {
      for (std::size_t r = r0; r < r1; ++r) {
        const T* __restrict row = xb + r * features;
        T* __restrict orow = ob + r * features;
        for (std::size_t f = 0; f < features; ++f)
          orow[f] = sc[f] * row[f] + sh[f];
      }
    });
  }

  if (g == nullptr) return out;
  const bool want_x = g->wants_grad(x);
  const bool want_g = g->wants_grad(gamma);
  const bool want_b = g->wants_grad(beta);
  if (!want_x && !want_g && !want_b) return out;

  if (want_x) g->attach(x);
  if (want_g) g->attach(gamma);
  if (want_b) g->attach(beta);
  g->attach(out);
  auto x_data = x.data_ptr();
  auto gamma_data = gamma.data_ptr();
  auto out_grad = out.grad_ptr();
  auto x_grad = want_x ? x.grad_ptr() : nullptr;
  auto gamma_grad = want_g ? gamma.grad_ptr() : nullptr;
  auto beta_grad = want_b ? beta.grad_ptr() : nullptr;
  const bool train = mode == BnMode::kTrain;

  g->record([=, mean = std::move(mean), invstd = std::move(invstd)] {
    const T* __restrict go = out_grad->data();
    const T* __restrict xd = x_data->data();
    const T* __restrict gm = gamma_data->data();
    // s1[f] = sum_r go, s2[f] = sum_r go*xhat
    const int workers = plan_threads(rows, 0);
    std::vector<std::vector<double>> p1(workers,
                                        std::vector<double>(features, 0.0)),
        p2(workers, std::vector<double>(features, 0.0));
    parallel_for(rows, [&](std::size_t r0, std::size_t r1, int wkr) {
      double* __restrict a1 = p1[wkr].data();
      double* __restrict a2 = p2[wkr].data();
      for (std::size_t r = r0; r < r1; ++r) {
        const T* __restrict grow = go + r * features;
        const T* __restrict xrow = xd + r * features;
        for (std::size_t f = 0; f < features; ++f) {
          const double xhat = (double(xrow[f]) - double(mean[f])) * double(invstd[f]);
          a1[f] += double(grow[f]);
          a2[f] += double(grow[f]) * xhat;
        }
      }
    });
    std::vector<double> s1(features, 0.0), s2(features, 0.0);
    for (int wkr = 0; wkr < workers; ++wkr)
      for (std::size_t f = 0; f < features; ++f) {
        s1[f] += p1[wkr][f];
        s2[f] += p2[wkr][f];
      }
    if (beta_grad) {
      T* __restrict gbeta = beta_grad->data();
      for (std::size_t f = 0; f < features; ++f) gbeta[f] += T(s1[f]);
    }
    if (gamma_grad) {
      T* __restrict ggamma = gamma_grad->data();
      for (std::size_t f = 0; f < features; ++f) ggamma[f] += T(s2[f]);
    }
    if (x_grad) {
      T* __restrict gx = x_grad->data();
      if (train) {
        std::vector<T> c1(features), c2(features), c3(features);
        for (std::size_t f = 0; f < features; ++f) {
          const T a = gm[f] * invstd[f];
          c1[f] = a;
          c2[f] = T(a * T(s1[f]) / T(double(rows)));
          c3[f] = T(a * T(s2[f]) / T(double(rows)));
        }
        parallel_for(rows, [&](std::size_t r0, std::size_t r1, int) {
          for (std::size_t r = r0; r < r1; ++r) {
            const T* __restrict grow = go + r * features;
            const T* __restrict xrow = xd + r * features;
            T* __restrict gxrow = gx + r * features;
            for (std::size_t f = 0; f < features; ++f) {
              const T xhat = (xrow[f] - mean[f]) * invstd[f];
              gxrow[f] += c1[f] * grow[f] - c2[f] - xhat * c3[f];
            }
          }
        });
      } else {
        std::vector<T> a(features);
        for (std::size_t f = 0; f < features; ++f) a[f] = gm[f] * invstd[f];
        parallel_for(rows, [&](std::size_t r0, std::size_t r1, int) {
          for (std::size_t r = r0; r < r1; ++r) {
            const T* __restrict grow = go + r * features;
            T* __restrict gxrow = gx + r * features;
            for (std::size_t f = 0; f < features; ++f)
              gxrow[f] += a[f] * grow[f];
          }
        });
      }
    }
  });
  return out;
}

template <typename T>
Tensor<T> relu(Graph<T>* g, const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  const T* __restrict xb = x.data();
  T* __restrict ob = out.data();
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) ob[i] = xb[i] > T(0) ? xb[i] : T(0);

  if (g == nullptr || !g->wants_grad(x)) return out;
  g->attach(x);
  g->attach(out);
  auto x_data = x.data_ptr();
  auto x_grad = x.grad_ptr();
  auto out_grad = out.grad_ptr();
  g->record([=] {
    const T* __restrict xd = x_data->data();
    const T* __restrict go = out_grad->data();
    T* __restrict gx = x_grad->data();
    for (std::size_t i = 0; i < n; ++i)
      if (xd[i] > T(0)) gx[i] += go[i];
  });
  return out;
}

namespace {

// Shared shape plumbing for mul/add.
template <typename T>
struct BinaryPlan {
  Broadcast mode;
  std::size_t outer, inner;
};

template <typename T>
BinaryPlan<T> plan_binary(const Tensor<T>& a, const Tensor<T>& b,
                          const char* op) {
  BinaryPlan<T> p;
  p.mode = broadcast_mode(a, b, op);
  p.inner = p.mode == Broadcast::kSuffix ? b.size() : a.size();
  p.outer = p.inner == 0 ? 0 : a.size() / p.inner;
  return p;
}

}  // namespace

template <typename T>
Tensor<T> elementwise_mul(Graph<T>* g, const Tensor<T>& a, const Tensor<T>& b) {
  const auto plan = plan_binary(a, b, "elementwise_mul");
  Tensor<T> out(a.shape());
  const T* __restrict ab = a.data();
  const T* __restrict bb = b.data();
  T* __restrict ob = out.data();
  const std::size_t n = a.size();
  switch (plan.mode) {
    case Broadcast::kSame:
      for (std::size_t i = 0; i < n; ++i) ob[i] = ab[i] * bb[i];
      break;
    case Broadcast::kScalar: {
      const T s = bb[0];
      for (std::size_t i = 0; i < n; ++i) ob[i] = ab[i] * s;
      break;
    }
    case Broadcast::kSuffix:
      for (std::size_t o = 0; o < plan.outer; ++o) {
        const T* __restrict ar = ab + o * plan.inner;
        T* __restrict orow = ob + o * plan.inner;
        for (std::size_t j = 0; j < plan.inner; ++j) orow[j] = ar[j] * bb[j];
      }
      break;
  }

  if (g == nullptr) return out;
  const bool want_a = g->wants_grad(a);
  const bool want_b = g->wants_grad(b);
  if (!want_a && !want_b) return out;
  if (want_a) g->attach(a);
  if (want_b) g->attach(b);
  g->attach(out);
  auto a_data = a.data_ptr();
  auto b_data = b.data_ptr();
  auto out_grad = out.grad_ptr();
  auto a_grad = want_a ? a.grad_ptr() : nullptr;
  auto b_grad = want_b ? b.grad_ptr() : nullptr;
  g->record([=] {
    const T* __restrict go = out_grad->data();
    if (a_grad) {
      T* __restrict ga = a_grad->data();
      const T* __restrict bd = b_data->data();
      switch (plan.mode) {
        case Broadcast::kSame:
          for (std::size_t i = 0; i < n; ++i) ga[i] += go[i] * bd[i];
          break;
        case Broadcast::kScalar: {
          const T s = bd[0];
          for (std::size_t i = 0; i < n; ++i) ga[i] += go[i] * s;
          break;
        }
        case Broadcast::kSuffix:
          for (std::size_t o = 0; o < plan.outer; ++o)
            for (std::size_t j = 0; j < plan.inner; ++j)
              ga[o * plan.inner + j] += go[o * plan.inner + j] * bd[j];
          break;
      }
    }
    if (b_grad) {
      T* __restrict gb2 = b_grad->data();
      const T* __restrict ad = a_data->data();
      switch (plan.mode) {
        case Broadcast::kSame:
          for (std::size_t i = 0; i < n; ++i) gb2[i] += go[i] * ad[i];
          break;
        case Broadcast::kScalar: {
          T acc = T(0);
          for (std::size_t i = 0; i < n; ++i) acc += go[i] * ad[i];
          gb2[0] += acc;
          break;
        }
        case Broadcast::kSuffix:
          for (std::size_t o = 0; o < plan.outer; ++o)
            for (std::size_t j = 0; j < plan.inner; ++j)
              gb2[j] += go[o * plan.inner + j] * ad[o * plan.inner + j];
          break;
      }
    }
  });
  return out;
}

template <typename T>
Tensor<T> add(Graph<T>* g, const Tensor<T>& a, const Tensor<T>& b) {
  const auto plan = plan_binary(a, b, "add");
  Tensor<T> out(a.shape());
  const T* __restrict ab = a.data();
  const T* __restrict bb = b.data();
  T* __restrict ob = out.data();
  const std::size_t n = a.size();
  switch (plan.mode) {
    case Broadcast::kSame:
      for (std::size_t i = 0; i < n; ++i) ob[i] = ab[i] + bb[i];
      break;
    case Broadcast::kScalar: {
      const T s = bb[0];
      for (std::size_t i = 0; i < n; ++i) ob[i] = ab[i] + s;
      break;
    }
    case Broadcast::kSuffix:
      for (std::size_t o = 0; o < plan.outer; ++o)
        for (std::size_t j = 0; j < plan.inner; ++j)
          ob[o * plan.inner + j] = ab[o * plan.inner + j] + bb[j];
      break;
  }

  if (g == nullptr) return out;
  const bool want_a = g->wants_grad(a);
  const bool want_b = g->wants_grad(b);
  if (!want_a && !want_b) return out;
  if (want_a) g->attach(a);
  if (want_b) g->attach(b);
  g->attach(out);
  auto out_grad = out.grad_ptr();
  auto a_grad = want_a ? a.grad_ptr() : nullptr;
  auto b_grad = want_b ? b.grad_ptr() : nullptr;
  g->record([=] {
    const T* __restrict go = out_grad->data();
    if (a_grad) {
      T* __restrict ga = a_grad->data();
      for (std::size_t i = 0; i < n; ++i) ga[i] += go[i];
    }
    if (b_grad) {
      T* __restrict gb2 = b_grad->data();
      switch (plan.mode) {
        case Broadcast::kSame:
          for (std::size_t i = 0; i < n; ++i) gb2[i] += go[i];
          break;
        case Broadcast::kScalar: {
          T acc = T(0);
          for (std::size_t i = 0; i < n; ++i) acc += go[i];
          gb2[0] += acc;
          break;
        }
        case Broadcast::kSuffix:
          for (std::size_t o = 0; o < plan.outer; ++o)
            for (std::size_t j = 0; j < plan.inner; ++j)
              gb2[j] += go[o * plan.inner + j];
          break;
      }
    }
  });
  return out;
}

template <typename T>
Tensor<T> reduce_sum(Graph<T>* g, const Tensor<T>& x,
                     std::vector<std::size_t> axes) {
  const std::size_t rank = x.rank();
  std::vector<bool> drop(rank, false);
  for (std::size_t a : axes) {
    if (a >= rank)
      throw DimensionError("reduce_sum: axis " + std::to_string(a) +
                           " out of range for shape " + shape_str(x.shape()));
    if (drop[a])
      throw DimensionError("reduce_sum: duplicate axis " + std::to_string(a));
    drop[a] = true;
  }
  Shape oshape;
  for (std::size_t a = 0; a < rank; ++a)
    if (!drop[a]) oshape.push_back(x.dim(a));

  // contrib[a] = output stride for kept axes, 0 for reduced axes.
  std::vector<std::size_t> istride(rank, 1), contrib(rank, 0);
  for (std::size_t a = rank; a-- > 1;) istride[a - 1] = istride[a] * x.dim(a);
  std::size_t os = 1;
  for (std::size_t a = rank; a-- > 0;)
    if (!drop[a]) {
      contrib[a] = os;
      os *= x.dim(a);
    }

  Tensor<T> out(oshape);
  const T* __restrict xb = x.data();
  T* __restrict ob = out.data();
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t rem = i, oi = 0;
    for (std::size_t a = 0; a < rank; ++a) {
      oi += (rem / istride[a]) * contrib[a];
      rem %= istride[a];
    }
    ob[oi] += xb[i];
  }

  if (g == nullptr || !g->wants_grad(x)) return out;
  g->attach(x);
  g->attach(out);
  auto x_grad = x.grad_ptr();
  auto out_grad = out.grad_ptr();
  g->record([=, istride = std::move(istride), contrib = std::move(contrib)] {
    const T* __restrict go = out_grad->data();
    T* __restrict gx = x_grad->data();
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t rem = i, oi = 0;
      for (std::size_t a = 0; a < rank; ++a) {
        oi += (rem / istride[a]) * contrib[a];
        rem %= istride[a];
      }
      gx[i] += go[oi];
    }
  });
  return out;
}

template <typename T>
Tensor<T> reshape(Graph<T>* g, const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.size())
    throw DimensionError("reshape: " + shape_str(x.shape()) + " to " +
                         shape_str(shape) + " changes the element count");
  Tensor<T> out = Tensor<T>::share(std::move(shape), x.data_ptr());
  if (g == nullptr || !g->wants_grad(x)) return out;
  g->attach(x);
  g->attach(out);
  auto x_grad = x.grad_ptr();
  auto out_grad = out.grad_ptr();
  const std::size_t n = x.size();
  g->record([=] {
    const T* __restrict go = out_grad->data();
    T* __restrict gx = x_grad->data();
    for (std::size_t i = 0; i < n; ++i) gx[i] += go[i];
  });
  return out;
}

template <typename T>
Tensor<T> linear(Graph<T>* g, const Tensor<T>& x, const Tensor<T>& w,
                 const Tensor<T>& b) {
  check_rank(x, 2, "linear", "input");
  check_rank(w, 2, "linear", "weights");
  check_rank(b, 1, "linear", "bias");
  const std::size_t n = x.dim(0), f = x.dim(1), m = w.dim(1);
  if (w.dim(0) != f)
    throw DimensionError("linear: input features " + std::to_string(f) +
                         " vs weight rows " + std::to_string(w.dim(0)));
  if (b.dim(0) != m)
    throw DimensionError("linear: bias of size " + std::to_string(b.dim(0)) +
                         " for " + std::to_string(m) + " outputs");

  Tensor<T> out({n, m});
  {
    const T* __restrict xb = x.data();
    const T* __restrict wb = w.data();
    const T* __restrict bb = b.data();
    T* __restrict ob = out.data();
    parallel_for(n, [&](std::size_t r0, std::size_t r1, int) {
      for (std::size_t r = r0; r < r1; ++r) {
        T* __restrict orow = ob + r * m;
        std::copy(bb, bb + m, orow);
        const T* __restrict xrow = xb + r * f;
        for (std::size_t k = 0; k < f; ++k) {
          const T a = xrow[k];
          const T* __restrict wrow = wb + k * m;
          for (std::size_t c = 0; c < m; ++c) orow[c] += a * wrow[c];
        }
      }
    });
  }

  if (g == nullptr) return out;
  const bool want_x = g->wants_grad(x);
  const bool want_w = g->wants_grad(w);
  const bool want_b = g->wants_grad(b);
  if (!want_x && !want_w && !want_b) return out;
  if (want_x) g->attach(x);
  if (want_w) g->attach(w);
  if (want_b) g->attach(b);
  g->attach(out);
  auto x_data = x.data_ptr();
  auto w_data = w.data_ptr();
  auto out_grad = out.grad_ptr();
  auto x_grad = want_x ? x.grad_ptr() : nullptr;
  auto w_grad = want_w ? w.grad_ptr() : nullptr;
  auto b_grad = want_b ? b.grad_ptr() : nullptr;
  g->record([=] {
    const T* __restrict go = out_grad->data();
    if (x_grad) {
      const T* __restrict wb = w_data->data();
      T* __restrict gx = x_grad->data();
      parallel_for(n, [&](std::size_t r0, std::size_t r1, int) {
        for (std::size_t r = r0; r < r1; ++r) {
          const T* __restrict grow = go + r * m;
          T* __restrict gxrow = gx + r * f;
          for (std::size_t k = 0; k < f; ++k) {
            const T* __restrict wrow = wb + k * m;
            T acc = T(0);
            for (std::size_t c = 0; c < m; ++c) acc += wrow[c] * grow[c];
            gxrow[k] += acc;
          }
        }
      });
    }
    if (w_grad) {
      const T* __restrict xd = x_data->data();
      T* __restrict gw = w_grad->data();
      parallel_for(f, [&](std::size_t k0, std::size_t k1, int) {
        for (std::size_t k = k0; k < k1; ++k) {
          T* __restrict gwrow = gw + k * m;
          for (std::size_t r = 0; r < n; ++r) {
            const T a = xd[r * f + k];
            const T* __restrict grow = go + r * m;
            for (std::size_t c = 0; c < m; ++c) gwrow[c] += a * grow[c];
          }
        }
      });
    }
    if (b_grad) {
      T* __restrict gbv = b_grad->data();
      for (std::size_t r = 0; r < n; ++r) {
        const T* __restrict grow = go + r * m;
        for (std::size_t c = 0; c < m; ++c) gbv[c] += grow[c];
      }
    }
  });
  return out;
}

template <typename T>
SoftmaxLossResult<T> softmax_cross_entropy(Graph<T>* g, const Tensor<T>& logits,
                                           std::span<const std::int32_t> labels) {
  check_rank(logits, 2, "softmax_cross_entropy", "logits");
  const std::size_t n = logits.dim(0), m = logits.dim(1);
  if (labels.size() != n)
    throw DimensionError("softmax_cross_entropy: " +
                         std::to_string(labels.size()) + " labels for " +
                         std::to_string(n) + " rows");
  for (std::size_t b = 0; b < n; ++b)
    if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= m)
      throw DataError("softmax_cross_entropy: label " +
                      std::to_string(labels[b]) + " out of range [0," +
                      std::to_string(m) + ") at sample " + std::to_string(b));

  SoftmaxLossResult<T> res;
  res.probs = Tensor<T>({n, m});
  const T* __restrict lb = logits.data();
  T* __restrict pb = res.probs.data();
  double total = 0.0;
  std::vector<double> e(m);
  for (std::size_t b = 0; b < n; ++b) {
    const T* __restrict row = lb + b * m;
    double mx = double(row[0]);
    for (std::size_t c = 1; c < m; ++c) mx = std::max(mx, double(row[c]));
    double s = 0.0;
    for (std::size_t c = 0; c < m; ++c) {
      e[c] = std::exp(double(row[c]) - mx);
      s += e[c];
    }
    for (std::size_t c = 0; c < m; ++c) pb[b * m + c] = T(e[c] / s);
    total -= double(row[labels[b]]) - mx - std::log(s);
  }
  res.loss = Tensor<T>::scalar(T(total / double(n)));

  if (g == nullptr || !g->wants_grad(logits)) return res;
  g->attach(logits);
  g->attach(res.loss);
  auto probs_data = res.probs.data_ptr();
  auto logits_grad = logits.grad_ptr();
  auto loss_grad = res.loss.grad_ptr();
  std::vector<std::int32_t> lab(labels.begin(), labels.end());
  g->record([=, lab = std::move(lab)] {
    const T gl = (*loss_grad)[0] / T(double(n));
    const T* __restrict pd = probs_data->data();
    T* __restrict gx = logits_grad->data();
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t c = 0; c < m; ++c) {
        const T ind = static_cast<std::size_t>(lab[b]) == c ? T(1) : T(0);
        gx[b * m + c] += gl * (pd[b * m + c] - ind);
      }
  });
  return res;
}

#define HVC_INSTANTIATE_OPS(T)                                                \
  template Tensor<T> conv2d_valid<T>(Graph<T>*, const Tensor<T>&,             \
                                     const Tensor<T>&, int);                  \
  template Tensor<T> batch_norm<T>(Graph<T>*, const Tensor<T>&,               \
                                   const Tensor<T>&, const Tensor<T>&,        \
                                   BatchNormState<T>&, BnMode, int, T, T);    \
  template Tensor<T> relu<T>(Graph<T>*, const Tensor<T>&);                    \
  template Tensor<T> elementwise_mul<T>(Graph<T>*, const Tensor<T>&,          \
                                        const Tensor<T>&);                    \
  template Tensor<T> add<T>(Graph<T>*, const Tensor<T>&, const Tensor<T>&);   \
  template Tensor<T> reduce_sum<T>(Graph<T>*, const Tensor<T>&,               \
                                   std::vector<std::size_t>);                 \
  template Tensor<T> reshape<T>(Graph<T>*, const Tensor<T>&, Shape);          \
  template Tensor<T> linear<T>(Graph<T>*, const Tensor<T>&, const Tensor<T>&, \
                               const Tensor<T>&);                             \
  template SoftmaxLossResult<T> softmax_cross_entropy<T>(                     \
      Graph<T>*, const Tensor<T>&, std::span<const std::int32_t>);

HVC_INSTANTIATE_OPS(float)
HVC_INSTANTIATE_OPS(double)

}  // namespace hvc::ops
