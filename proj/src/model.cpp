#include "hvc/model.hpp"

#include <cmath>

#include "hvc/rng.hpp"

namespace hvc {

void ModelConfig::validate() const {
  if (branches != 1 && branches != 3)
    throw ConfigError("model: branches must be 1 or 3, got " +
                      std::to_string(branches));
  if (classes < 2)
    throw ConfigError("model: need at least 2 classes, got " +
                      std::to_string(classes));
  if (classes > 255)
    throw ConfigError("model: at most 255 classes, got " +
                      std::to_string(classes));
}

std::size_t ParamManifest::total() const {
  std::size_t n = 0;
  for (const auto& e : entries) n += e.count;
  return n;
}

std::size_t ParamManifest::trainable_total() const {
  std::size_t n = 0;
  for (const auto& e : entries)
    if (e.trainable) n += e.count;
  return n;
}

std::size_t ParamManifest::core_weight_total() const {
  std::size_t n = 0;
  for (const auto& e : entries)
    if (e.role == "conv_kernel" || e.role == "hvc_weight" ||
        e.role == "fc_weight")
      n += e.count;
  return n;
}

std::string head_kind_str(HeadKind k) {
  return k == HeadKind::kHvc ? "hvc" : "fc";
}
std::string derivation_str(CapsuleDerivation d) {
  return d == CapsuleDerivation::kZ ? "z" : "xy";
}
std::string merge_kind_str(MergeKind m) {
  switch (m) {
    case MergeKind::kNotLearnable: return "fixed";
    case MergeKind::kRandomInit: return "random";
    case MergeKind::kOnesInit: return "ones";
  }
  return "?";
}

Model::Model(const ModelConfig& config, std::uint64_t seed) : cfg_(config) {
  cfg_.validate();
  std::size_t cin = 1;
  for (int l = 0; l < kConvLayers; ++l) {
    const std::size_t cout = kConvFilters[l];
    auto& cv = convs_[l];
    cv.kernel = Tensor<float>({3, 3, cin, cout});
    Rng rng = Rng::stream(seed, {100, static_cast<std::uint64_t>(l)});
    const float limit = std::sqrt(6.0f / float(9 * cin));  // He uniform
    fill_uniform(cv.kernel.values(), rng, -limit, limit);
    cv.gamma = Tensor<float>::full({cout}, 1.0f);
    cv.beta = Tensor<float>({cout});
    cv.bn = ops::BatchNormState<float>::init(cout);
    cin = cout;
  }

  const int first_tap = cfg_.branches == 3 ? 0 : 2;
  for (int t = first_tap; t < 3; ++t) {
    Branch br;
    br.tap = kBranchTaps[t];
    br.side = kInputSide - 2 * br.tap;
    br.chan = kConvFilters[br.tap - 1];
    const std::size_t hw = br.side * br.side;
    const std::size_t m = cfg_.classes;
    Rng rng = Rng::stream(seed, {200, static_cast<std::uint64_t>(t)});
    if (cfg_.head == HeadKind::kHvc) {
      const bool z = cfg_.derivation == CapsuleDerivation::kZ;
      const std::size_t n = z ? hw : br.chan;
      const std::size_t d = z ? br.chan : hw;
      br.hvc_w = Tensor<float>({n, m, d});
      const float limit = 1.0f / std::sqrt(float(d));
      fill_uniform(br.hvc_w.values(), rng, -limit, limit);
      const std::size_t feat = cfg_.capsule_bn_per_class ? m * d : d;
      br.cap_gamma = Tensor<float>::full({feat}, 1.0f);
      br.cap_beta = Tensor<float>({feat});
      br.cap_bn = ops::BatchNormState<float>::init(feat);
    } else {
      const std::size_t flat = hw * br.chan;
      br.fc_w = Tensor<float>({flat, m});
      const float limit = std::sqrt(6.0f / float(flat));
      fill_uniform(br.fc_w.values(), rng, -limit, limit);
      br.fc_b = Tensor<float>({m});
    }
    branches_.push_back(std::move(br));
  }

  if (cfg_.branches == 3) {
    merge_w_ = Tensor<float>({3});
    if (cfg_.merge == MergeKind::kRandomInit) {
      Rng rng = Rng::stream(seed, {300});
      fill_uniform(merge_w_.values(), rng, -1.0f, 1.0f);
    } else {
      for (float& v : merge_w_.values()) v = 1.0f;
    }
  }

  for (auto& p : trainable_params()) p.tensor->set_requires_grad(true);
}

std::vector<NamedParam> Model::params() {
  std::vector<NamedParam> out;
  for (int l = 0; l < kConvLayers; ++l) {
    const std::string p = "conv" + std::to_string(l + 1) + "/";
    auto& cv = convs_[l];
    out.push_back({p + "kernel", "conv_kernel", &cv.kernel, true});
    out.push_back({p + "bn_gamma", "bn_gamma", &cv.gamma, true});
    out.push_back({p + "bn_beta", "bn_beta", &cv.beta, true});
    out.push_back({p + "bn_mean", "bn_running_mean", &cv.bn.running_mean, false});
    out.push_back({p + "bn_var", "bn_running_var", &cv.bn.running_var, false});
  }
  for (std::size_t i = 0; i < branches_.size(); ++i) {
    auto& br = branches_[i];
    const std::string p = "branch" + std::to_string(br.tap / 3) + "/";
    if (cfg_.head == HeadKind::kHvc) {
      out.push_back({p + "hvc_w", "hvc_weight", &br.hvc_w, true});
      out.push_back({p + "bn_gamma", "bn_gamma", &br.cap_gamma, true});
      out.push_back({p + "bn_beta", "bn_beta", &br.cap_beta, true});
      out.push_back({p + "bn_mean", "bn_running_mean", &br.cap_bn.running_mean,
                     false});
      out.push_back({p + "bn_var", "bn_running_var", &br.cap_bn.running_var,
                     false});
    } else {
      out.push_back({p + "fc_w", "fc_weight", &br.fc_w, true});
      out.push_back({p + "fc_b", "fc_bias", &br.fc_b, true});
    }
  }
  if (merge_w_.defined())
    out.push_back({"merge/weights", "merge_weight", &merge_w_,
                   cfg_.merge != MergeKind::kNotLearnable});
  return out;
}

std::vector<NamedParam> Model::trainable_params() {
  std::vector<NamedParam> out;
  for (auto& p : params())
    if (p.trainable) out.push_back(p);
  return out;
}

ParamManifest Model::manifest() {
  ParamManifest m;
  for (auto& p : params())
    m.entries.push_back({p.name, p.role, p.tensor->shape(),
                         p.tensor->size(), p.trainable});
  return m;
}

std::vector<int> Model::receptive_fields() const {
  // Effective receptive fields at the taps: 7, 11, 15. The accounting
  // grows by 4 per additional 3-conv block after the first tap.
  std::vector<int> out;
  for (const auto& br : branches_) out.push_back(7 + 4 * (br.tap / 3 - 1));
  return out;
}

std::vector<int> Model::tap_sides() const {
  std::vector<int> out;
  for (const auto& br : branches_) out.push_back(static_cast<int>(br.side));
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> Model::capsule_geometry()
    const {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (const auto& br : branches_) {
    const std::size_t hw = br.side * br.side;
    if (cfg_.derivation == CapsuleDerivation::kZ)
      out.emplace_back(hw, br.chan);
    else
      out.emplace_back(br.chan, hw);
  }
  return out;
}

void Model::zero_grads() {
  for (auto& p : params()) p.tensor->zero_grad();
}

Tensor<float> Model::head_logits(Graph<float>* g, Branch& br,
                                 const Tensor<float>& maps, ops::BnMode mode,
                                 int threads) {
  if (cfg_.head == HeadKind::kHvc) {
    Tensor<float> caps = derive_capsules(g, maps, cfg_.derivation);
    Tensor<float> cls = hvc_class_vectors(g, caps, br.hvc_w, threads);
    const int feature_axes = cfg_.capsule_bn_per_class ? 2 : 1;
    Tensor<float> normed = ops::batch_norm(g, cls, br.cap_gamma, br.cap_beta,
                                           br.cap_bn, mode, feature_axes);
    return branch_logits(g, normed);
  }
  Tensor<float> flat =
      ops::reshape(g, maps, {maps.dim(0), br.side * br.side * br.chan});
  return ops::linear(g, flat, br.fc_w, br.fc_b);
}

Model::ForwardResult Model::forward(Graph<float>* g, const Tensor<float>& batch,
                                    ops::BnMode mode, int threads) {
  if (batch.rank() != 4 || batch.dim(1) != kInputSide ||
      batch.dim(2) != kInputSide || batch.dim(3) != 1)
    throw DimensionError("model: input must be [N,28,28,1], got " +
                         shape_str(batch.shape()));

  ForwardResult res;
  Tensor<float> x = batch;
  std::size_t bi = 0;
  for (int l = 0; l < kConvLayers; ++l) {
    auto& cv = convs_[l];
    x = ops::conv2d_valid(g, x, cv.kernel, threads);
    x = ops::batch_norm(g, x, cv.gamma, cv.beta, cv.bn, mode, 1);
    x = ops::relu(g, x);
    if (bi < branches_.size() && branches_[bi].tap == l + 1) {
      res.branch_logits.push_back(
          head_logits(g, branches_[bi], x, mode, threads));
      ++bi;
    }
  }

  if (branches_.size() == 1) {
    res.logits = res.branch_logits[0];
  } else {
    res.logits = merge_branches(
        g, std::span<const Tensor<float>>(res.branch_logits), merge_w_);
  }
  return res;
}

}  // namespace hvc
