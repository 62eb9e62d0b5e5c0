#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hvc/capsule.hpp"
#include "hvc/ops.hpp"
#include "hvc/tensor.hpp"

namespace hvc {

enum class HeadKind { kHvc, kFullyConnected };

struct ModelConfig {
  HeadKind head = HeadKind::kHvc;
  CapsuleDerivation derivation = CapsuleDerivation::kZ;
  int branches = 3;  // 1 (tap after conv 9 only) or 3 (taps after 3/6/9)
  MergeKind merge = MergeKind::kOnesInit;
  int classes = 10;
  // Capsule-grid batch norm granularity: true = per (class, component)
  // pair (2*m*d parameters), false = per component only (2*d).
  bool capsule_bn_per_class = true;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// The fixed trunk: nine 3x3 valid convolutions, 32 filters growing by 16
// per layer, batch norm + ReLU after each, no pooling, no padding, no
// bias. Branch taps sit after convs 3, 6 and 9.
inline constexpr int kConvLayers = 9;
inline constexpr std::array<int, kConvLayers> kConvFilters = {
    32, 48, 64, 80, 96, 112, 128, 144, 160};
inline constexpr std::array<int, 3> kBranchTaps = {3, 6, 9};
inline constexpr int kInputSide = 28;

struct ManifestEntry {
  std::string name;
  std::string role;
  Shape shape;
  std::size_t count = 0;
  bool trainable = false;
};

struct ParamManifest {
  std::vector<ManifestEntry> entries;
  std::size_t total() const;
  std::size_t trainable_total() const;
  // Convolution kernels plus head weights only (no BN, no merge).
  std::size_t core_weight_total() const;
};

struct NamedParam {
  std::string name;
  std::string role;
  Tensor<float>* tensor;
  bool trainable;
};

class Model {
 public:
  Model(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }

  struct ForwardResult {
    Tensor<float> logits;                       // [N,classes]
    std::vector<Tensor<float>> branch_logits;   // per branch, [N,classes]
  };
  ForwardResult forward(Graph<float>* g, const Tensor<float>& batch,
                        ops::BnMode mode, int threads = 0);

  // All manifest-visible tensors, in manifest order.
  std::vector<NamedParam> params();
  std::vector<NamedParam> trainable_params();
  ParamManifest manifest();

  // Receptive field side length at each branch tap.
  std::vector<int> receptive_fields() const;
  // (capsule count n, capsule dimension d) per branch.
  std::vector<std::pair<std::size_t, std::size_t>> capsule_geometry() const;
  // Feature-map side length at each branch tap.
  std::vector<int> tap_sides() const;

  void zero_grads();

 private:
  struct ConvLayer {
    Tensor<float> kernel;
    Tensor<float> gamma, beta;
    ops::BatchNormState<float> bn;
  };
  struct Branch {
    int tap;                 // conv index (1-based) feeding this branch
    std::size_t side, chan;  // feature-map geometry at the tap
    // HVC head
    Tensor<float> hvc_w;                 // [n,m,d]
    Tensor<float> cap_gamma, cap_beta;   // capsule-grid BN
    ops::BatchNormState<float> cap_bn;
    // FC head
    Tensor<float> fc_w, fc_b;
  };

  ModelConfig cfg_;
  std::array<ConvLayer, kConvLayers> convs_;
  std::vector<Branch> branches_;
  Tensor<float> merge_w_;  // defined only for 3-branch models

  Tensor<float> head_logits(Graph<float>* g, Branch& br,
                            const Tensor<float>& maps, ops::BnMode mode,
                            int threads);
};

std::string head_kind_str(HeadKind k);
std::string derivation_str(CapsuleDerivation d);
std::string merge_kind_str(MergeKind m);

}  // namespace hvc
