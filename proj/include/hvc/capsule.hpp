#pragma once

#include <span>

#include "hvc/tensor.hpp"

namespace hvc {

// How capsules are carved out of a [N,H,W,C] feature-map stack.
//  kXY: one capsule per channel, components are the spatial positions
//       -> [N, C, H*W]  (n=C capsules of dimension d=H*W)
//  kZ:  one capsule per spatial position, components are the channels
//       -> [N, H*W, C]  (n=H*W capsules of dimension d=C)
enum class CapsuleDerivation { kXY, kZ };

template <typename T>
Tensor<T> derive_capsules(Graph<T>* g, const Tensor<T>& fmaps,
                          CapsuleDerivation mode);

// Inverse of derive_capsules: [N,n,d] back to [N,H,W,C].
template <typename T>
Tensor<T> underive_capsules(Graph<T>* g, const Tensor<T>& caps,
                            CapsuleDerivation mode, std::size_t h,
                            std::size_t w, std::size_t c);

// Homogeneous vector capsule head: caps [N,n,d] combined with weight
// capsules w [n,m,d] by elementwise multiply, summed over the n input
// capsules: out[b,c,:] = sum_i caps[b,i,:] * w[i,c,:]  -> [N,m,d].
template <typename T>
Tensor<T> hvc_class_vectors(Graph<T>* g, const Tensor<T>& caps,
                            const Tensor<T>& w, int threads = 0);

// Component sum per class vector: [N,m,d] -> [N,m].
template <typename T>
Tensor<T> branch_logits(Graph<T>* g, const Tensor<T>& class_vectors);

enum class MergeKind { kNotLearnable, kRandomInit, kOnesInit };

// Weighted sum of per-branch logit sets (all [N,m]); weights has one
// scalar per branch. With unit weights this reproduces the plain sum
// bit-for-bit.
template <typename T>
Tensor<T> merge_branches(Graph<T>* g, std::span<const Tensor<T>> branches,
                         const Tensor<T>& weights);

}  // namespace hvc
