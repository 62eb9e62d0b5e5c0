#include "hvc/capsule.hpp"

#include <algorithm>

#include "hvc/ops.hpp"
#include "hvc/parallel.hpp"

namespace hvc {

namespace {

// fmaps [N,H,W,C] -> caps. kZ is a straight copy (layout is already
// [N,HW,C]); kXY transposes the trailing axes.
template <typename T>
void scatter_xy(const T* __restrict src, T* __restrict dst, std::size_t n,
                std::size_t hw, std::size_t c, bool forward) {
  for (std::size_t b = 0; b < n; ++b) {
    const std::size_t base = b * hw * c;
    for (std::size_t p = 0; p < hw; ++p)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t fm = base + p * c + ch;   // [.., p, ch]
        const std::size_t cp = base + ch * hw + p;  // [.., ch, p]
        if (forward) dst[cp] = src[fm];
        else dst[fm] = src[cp];
      }
  }
}

}  // namespace

template <typename T>
Tensor<T> derive_capsules(Graph<T>* g, const Tensor<T>& fmaps,
                          CapsuleDerivation mode) {
  if (fmaps.rank() != 4)
    throw DimensionError("derive_capsules: feature maps must be [N,H,W,C], got " +
                         shape_str(fmaps.shape()));
  const std::size_t n = fmaps.dim(0), h = fmaps.dim(1), w = fmaps.dim(2),
                    c = fmaps.dim(3);
  const std::size_t hw = h * w;
  Shape oshape = mode == CapsuleDerivation::kZ ? Shape{n, hw, c}
                                               : Shape{n, c, hw};
  Tensor<T> out(oshape);
  if (mode == CapsuleDerivation::kZ)
    std::copy(fmaps.data(), fmaps.data() + fmaps.size(), out.data());
  else
    scatter_xy(fmaps.data(), out.data(), n, hw, c, true);

  if (g == nullptr || !g->wants_grad(fmaps)) return out;
  g->attach(fmaps);
  g->attach(out);
  auto x_grad = fmaps.grad_ptr();
  auto out_grad = out.grad_ptr();
  g->record([=] {
    const T* __restrict go = out_grad->data();
    T* __restrict gx = x_grad->data();
    if (mode == CapsuleDerivation::kZ) {
      const std::size_t total = n * hw * c;
      for (std::size_t i = 0; i < total; ++i) gx[i] += go[i];
    } else {
      for (std::size_t b = 0; b < n; ++b) {
        const std::size_t base = b * hw * c;
        for (std::size_t p = 0; p < hw; ++p)
          for (std::size_t ch = 0; ch < c; ++ch)
            gx[base + p * c + ch] += go[base + ch * hw + p];
      }
    }
  });
  return out;
}

template <typename T>
Tensor<T> underive_capsules(Graph<T>* g, const Tensor<T>& caps,
                            CapsuleDerivation mode, std::size_t h,
                            std::size_t w, std::size_t c) {
  if (caps.rank() != 3)
    throw DimensionError("underive_capsules: capsules must be [N,n,d], got " +
                         shape_str(caps.shape()));
  const std::size_t n = caps.dim(0), hw = h * w;
  const std::size_t want_n = mode == CapsuleDerivation::kZ ? hw : c;
  const std::size_t want_d = mode == CapsuleDerivation::kZ ? c : hw;
  if (caps.dim(1) != want_n || caps.dim(2) != want_d)
    throw DimensionError("underive_capsules: capsules " +
                         shape_str(caps.shape()) + " do not match maps [" +
                         std::to_string(h) + "," + std::to_string(w) + "," +
                         std::to_string(c) + "]");
  Tensor<T> out({n, h, w, c});
  if (mode == CapsuleDerivation::kZ)
    std::copy(caps.data(), caps.data() + caps.size(), out.data());
  else
    scatter_xy(caps.data(), out.data(), n, hw, c, false);

  if (g == nullptr || !g->wants_grad(caps)) return out;
  g->attach(caps);
  g->attach(out);
  auto x_grad = caps.grad_ptr();
  auto out_grad = out.grad_ptr();
  g->record([=] {
    const T* __restrict go = out_grad->data();
    T* __restrict gx = x_grad->data();
    if (mode == CapsuleDerivation::kZ) {
      const std::size_t total = n * hw * c;
      for (std::size_t i = 0; i < total; ++i) gx[i] += go[i];
    } else {
      for (std::size_t b = 0; b < n; ++b) {
        const std::size_t base = b * hw * c;
        for (std::size_t p = 0; p < hw; ++p)
          for (std::size_t ch = 0; ch < c; ++ch)
            gx[base + ch * hw + p] += go[base + p * c + ch];
      }
    }
  });
  return out;
}

template <typename T>
Tensor<T> hvc_class_vectors(Graph<T>* g, const Tensor<T>& caps,
                            const Tensor<T>& w, int threads) {
  if (caps.rank() != 3)
    throw DimensionError("hvc_class_vectors: capsules must be [N,n,d], got " +
                         shape_str(caps.shape()));
  if (w.rank() != 3)
    throw DimensionError("hvc_class_vectors: weights must be [n,m,d], got " +
                         shape_str(w.shape()));
  const std::size_t bsz = caps.dim(0), nc = caps.dim(1), d = caps.dim(2);
  const std::size_t m = w.dim(1);
  if (w.dim(0) != nc || w.dim(2) != d)
    throw DimensionError("hvc_class_vectors: capsules " +
                         shape_str(caps.shape()) + " vs weights " +
                         shape_str(w.shape()));

  Tensor<T> out({bsz, m, d});
  const T* __restrict cb = caps.data();
  const T* __restrict wb = w.data();
  T* __restrict ob = out.data();
  parallel_for(
      bsz,
      [&](std::size_t b0, std::size_t b1, int) {
        for (std::size_t b = b0; b < b1; ++b) {
          T* __restrict orow = ob + b * m * d;
          std::fill(orow, orow + m * d, T(0));
          for (std::size_t i = 0; i < nc; ++i) {
            const T* __restrict crow = cb + (b * nc + i) * d;
            const T* __restrict wrow = wb + i * m * d;
            for (std::size_t c = 0; c < m; ++c) {
              T* __restrict o = orow + c * d;
              const T* __restrict wr = wrow + c * d;
              for (std::size_t t = 0; t < d; ++t) o[t] += crow[t] * wr[t];
            }
          }
        }
      },
      threads);

  if (g == nullptr) return out;
  const bool want_c = g->wants_grad(caps);
  const bool want_w = g->wants_grad(w);
  if (!want_c && !want_w) return out;
  if (want_c) g->attach(caps);
  if (want_w) g->attach(w);
  g->attach(out);
  auto caps_data = caps.data_ptr();
  auto w_data = w.data_ptr();
  auto out_grad = out.grad_ptr();
  auto caps_grad = want_c ? caps.grad_ptr() : nullptr;
  auto w_grad = want_w ? w.grad_ptr() : nullptr;
  g->record([=] {
    const T* __restrict go = out_grad->data();
    if (caps_grad) {
      const T* __restrict wd = w_data->data();
      T* __restrict gc = caps_grad->data();
      parallel_for(
          bsz,
          [&](std::size_t b0, std::size_t b1, int) {
            for (std::size_t b = b0; b < b1; ++b) {
              const T* __restrict grow = go + b * m * d;
              for (std::size_t i = 0; i < nc; ++i) {
                T* __restrict gcrow = gc + (b * nc + i) * d;
                const T* __restrict wrow = wd + i * m * d;
                for (std::size_t c = 0; c < m; ++c) {
                  const T* __restrict gr = grow + c * d;
                  const T* __restrict wr = wrow + c * d;
                  for (std::size_t t = 0; t < d; ++t) gcrow[t] += gr[t] * wr[t];
                }
              }
            }
          },
          threads);
    }
    if (w_grad) {
      const T* __restrict cd = caps_data->data();
      const std::size_t wcount = w_grad->size();
      const int workers = plan_threads(bsz, threads);
      std::vector<std::vector<T>> partial;
      if (workers > 1) partial.assign(workers, std::vector<T>(wcount, T(0)));
      parallel_for(
          bsz,
          [&](std::size_t b0, std::size_t b1, int wkr) {
            T* __restrict gw =
                workers > 1 ? partial[wkr].data() : w_grad->data();
            for (std::size_t b = b0; b < b1; ++b) {
              const T* __restrict grow = go + b * m * d;
              for (std::size_t i = 0; i < nc; ++i) {
                const T* __restrict crow = cd + (b * nc + i) * d;
                T* __restrict gwrow = gw + i * m * d;
                for (std::size_t c = 0; c < m; ++c) {
                  const T* __restrict gr = grow + c * d;
                  T* __restrict wr = gwrow + c * d;
                  for (std::size_t t = 0; t < d; ++t) wr[t] += crow[t] * gr[t];
                }
              }
            }
          },
          threads);
      if (workers > 1) {
        T* __restrict gw = w_grad->data();
        for (int wkr = 0; wkr < workers; ++wkr) {
          const T* __restrict p = partial[wkr].data();
          for (std::size_t i = 0; i < wcount; ++i) gw[i] += p[i];
        }
      }
    }
  });
  return out;
}

template <typename T>
Tensor<T> branch_logits(Graph<T>* g, const Tensor<T>& class_vectors) {
  if (class_vectors.rank() != 3)
    throw DimensionError("branch_logits: class vectors must be [N,m,d], got " +
                         shape_str(class_vectors.shape()));
  return ops::reduce_sum(g, class_vectors, {2});
}

template <typename T>
Tensor<T> merge_branches(Graph<T>* g, std::span<const Tensor<T>> branches,
                         const Tensor<T>& weights) {
  if (branches.empty())
    throw DimensionError("merge_branches: no branch logits given");
  const std::size_t k = branches.size();
  if (weights.size() != k)
    throw DimensionError("merge_branches: " + std::to_string(k) +
                         " branches but " + std::to_string(weights.size()) +
                         " merge weights");
  const Shape& shape = branches[0].shape();
  for (std::size_t i = 1; i < k; ++i)
    if (branches[i].shape() != shape)
      throw DimensionError("merge_branches: branch 0 is " + shape_str(shape) +
                           " but branch " + std::to_string(i) + " is " +
                           shape_str(branches[i].shape()));

  const std::size_t n = branches[0].size();
  Tensor<T> out(shape);
  const T* __restrict wv = weights.data();
  {
    T* __restrict ob = out.data();
    const T* __restrict first = branches[0].data();
    const T w0 = wv[0];
    for (std::size_t i = 0; i < n; ++i) ob[i] = w0 * first[i];
    for (std::size_t b = 1; b < k; ++b) {
      const T* __restrict lb = branches[b].data();
      const T wb = wv[b];
      for (std::size_t i = 0; i < n; ++i) ob[i] += wb * lb[i];
    }
  }

  if (g == nullptr) return out;
  const bool want_w = g->wants_grad(weights);
  std::vector<std::shared_ptr<std::vector<T>>> br_grad(k), br_data(k);
  bool any = want_w;
  for (std::size_t b = 0; b < k; ++b) {
    br_data[b] = branches[b].data_ptr();
    if (g->wants_grad(branches[b])) {
      g->attach(branches[b]);
      br_grad[b] = branches[b].grad_ptr();
      any = true;
    }
  }
  if (!any) return out;
  if (want_w) g->attach(weights);
  g->attach(out);
  auto w_data = weights.data_ptr();
  auto w_grad = want_w ? weights.grad_ptr() : nullptr;
  auto out_grad = out.grad_ptr();
  g->record([=] {
    const T* __restrict go = out_grad->data();
    const T* __restrict wd = w_data->data();
    for (std::size_t b = 0; b < k; ++b) {
      if (br_grad[b]) {
        T* __restrict gl = br_grad[b]->data();
        const T wb = wd[b];
        for (std::size_t i = 0; i < n; ++i) gl[i] += wb * go[i];
      }
      if (w_grad) {
        const T* __restrict lb = br_data[b]->data();
        T acc = T(0);
        for (std::size_t i = 0; i < n; ++i) acc += go[i] * lb[i];
        (*w_grad)[b] += acc;
      }
    }
  });
  return out;
}

#define HVC_INSTANTIATE_CAPSULE(T)                                          \
  template Tensor<T> derive_capsules<T>(Graph<T>*, const Tensor<T>&,        \
                                        CapsuleDerivation);                 \
  template Tensor<T> underive_capsules<T>(Graph<T>*, const Tensor<T>&,      \
                                          CapsuleDerivation, std::size_t,   \
                                          std::size_t, std::size_t);        \
  template Tensor<T> hvc_class_vectors<T>(Graph<T>*, const Tensor<T>&,      \
                                          const Tensor<T>&, int);           \
  template Tensor<T> branch_logits<T>(Graph<T>*, const Tensor<T>&);         \
  template Tensor<T> merge_branches<T>(Graph<T>*,                           \
                                       std::span<const Tensor<T>>,          \
                                       const Tensor<T>&);

HVC_INSTANTIATE_CAPSULE(float)
HVC_INSTANTIATE_CAPSULE(double)

}  // namespace hvc
