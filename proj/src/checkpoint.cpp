#include "hvc/checkpoint.hpp"

#include "binio.hpp"

namespace hvc {

TrainState TrainState::init(Model& model, std::uint64_t seed) {
  TrainState st;
  st.seed = seed;
  std::vector<Tensor<float>*> tp;
  for (auto& p : model.trainable_params()) {
    st.ema.push_back(p.tensor->clone());
    tp.push_back(p.tensor);
  }
  st.adam = AdamState<float>::init(std::span<Tensor<float>* const>(tp));
  return st;
}

void save_checkpoint(const std::string& path, Model& model,
                     const TrainState& state) {
  auto params = model.params();
  std::size_t trainable = 0;
  for (auto& p : params) trainable += p.trainable;
  if (state.ema.size() != trainable || state.adam.m.size() != trainable)
    throw ConfigError("save_checkpoint: state holds " +
                      std::to_string(state.ema.size()) + " shadows and " +
                      std::to_string(state.adam.m.size()) + " moments for " +
                      std::to_string(trainable) + " trainable parameters");

  io::Writer w(path);
  w.bytes("HVCK", 4);
  w.u32(1);  // format version
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (auto& p : params) {
    w.str(p.name);
    w.u8(p.trainable ? 1 : 0);
    w.u8(static_cast<std::uint8_t>(p.tensor->rank()));
    for (std::size_t d : p.tensor->shape())
      w.u32(static_cast<std::uint32_t>(d));
  }
  for (auto& p : params)
    for (float v : p.tensor->values()) w.f32(v);
  w.u32(static_cast<std::uint32_t>(trainable));
  for (auto& t : state.ema)
    for (float v : t.values()) w.f32(v);
  w.u64(state.adam.step);
  for (std::size_t i = 0; i < state.adam.m.size(); ++i) {
    for (float v : state.adam.m[i].values()) w.f32(v);
    for (float v : state.adam.v[i].values()) w.f32(v);
  }
  w.u32(state.epoch);
  w.u64(state.seed);
  w.close();
}

ModelConfig config_from_manifest(const ParamManifest& manifest) {
  ModelConfig cfg;
  auto find = [&](const std::string& name) -> const ManifestEntry* {
    for (const auto& e : manifest.entries)
      if (e.name == name) return &e;
    return nullptr;
  };

  cfg.branches = find("branch1/hvc_w") || find("branch1/fc_w") ? 3 : 1;
  const ManifestEntry* hvc = find("branch3/hvc_w");
  const ManifestEntry* fc = find("branch3/fc_w");
  if (!hvc && !fc)
    throw DataError("checkpoint manifest has no branch3 head entry");
  if (hvc) {
    cfg.head = HeadKind::kHvc;
    if (hvc->shape.size() != 3)
      throw DataError("checkpoint manifest: branch3/hvc_w is not rank 3");
    const std::size_t n = hvc->shape[0];
    cfg.classes = static_cast<int>(hvc->shape[1]);
    const std::size_t d = hvc->shape[2];
    // Deepest tap: 10x10 maps with 160 channels.
    if (n == 100 && d == 160)
      cfg.derivation = CapsuleDerivation::kZ;
    else if (n == 160 && d == 100)
      cfg.derivation = CapsuleDerivation::kXY;
    else
      throw DataError("checkpoint manifest: branch3/hvc_w shape " +
                      shape_str(hvc->shape) + " matches no known tap");
    const ManifestEntry* gamma = find("branch3/bn_gamma");
    if (!gamma)
      throw DataError("checkpoint manifest: missing branch3/bn_gamma");
    cfg.capsule_bn_per_class =
        gamma->count == std::size_t(cfg.classes) * d;
  } else {
    cfg.head = HeadKind::kFullyConnected;
    if (fc->shape.size() != 2)
      throw DataError("checkpoint manifest: branch3/fc_w is not rank 2");
    cfg.classes = static_cast<int>(fc->shape[1]);
  }
  if (const ManifestEntry* mw = find("merge/weights"))
    cfg.merge = mw->trainable ? MergeKind::kOnesInit : MergeKind::kNotLearnable;
  return cfg;
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  io::Reader r(path);
  r.expect_magic("HVCK");
  const std::uint32_t version = r.u32();
  if (version != 1)
    throw DataError(path + ": unsupported format version " +
                    std::to_string(version) + " at offset 4");

  const std::uint32_t entries = r.u32();
  ParamManifest manifest;
  for (std::uint32_t i = 0; i < entries; ++i) {
    ManifestEntry e;
    e.name = r.str(4096);
    e.trainable = r.u8() != 0;
    const std::uint8_t rank = r.u8();
    for (std::uint8_t a = 0; a < rank; ++a) e.shape.push_back(r.u32());
    e.count = shape_numel(e.shape);
    manifest.entries.push_back(std::move(e));
  }

  const ModelConfig cfg = config_from_manifest(manifest);
  Model model(cfg, 0);
  auto params = model.params();
  if (params.size() != manifest.entries.size())
    throw DataError(path + ": manifest has " +
                    std::to_string(manifest.entries.size()) +
                    " entries but the inferred model has " +
                    std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& e = manifest.entries[i];
    if (e.name != params[i].name || e.shape != params[i].tensor->shape() ||
        e.trainable != params[i].trainable)
      throw DataError(path + ": manifest entry " + std::to_string(i) + " (" +
                      e.name + " " + shape_str(e.shape) +
                      ") does not match the inferred model layout (" +
                      params[i].name + " " +
                      shape_str(params[i].tensor->shape()) + ")");
  }
  for (auto& p : params)
    for (float& v : p.tensor->values()) v = r.f32();

  TrainState state;
  const std::uint32_t trainable = r.u32();
  std::vector<Tensor<float>*> tp;
  for (auto& p : params)
    if (p.trainable) tp.push_back(p.tensor);
  if (trainable != tp.size())
    throw DataError(path + ": checkpoint declares " +
                    std::to_string(trainable) +
                    " trainable payloads, manifest implies " +
                    std::to_string(tp.size()));
  for (auto* t : tp) {
    Tensor<float> shadow(t->shape());
    for (float& v : shadow.values()) v = r.f32();
    state.ema.push_back(std::move(shadow));
  }
  state.adam.step = r.u64();
  for (auto* t : tp) {
    Tensor<float> m(t->shape()), v(t->shape());
    for (float& x : m.values()) x = r.f32();
    for (float& x : v.values()) x = r.f32();
    state.adam.m.push_back(std::move(m));
    state.adam.v.push_back(std::move(v));
  }
  state.epoch = r.u32();
  state.seed = r.u64();
  r.expect_done();

  return LoadedCheckpoint{cfg, std::move(model), std::move(state)};
}

}  // namespace hvc
