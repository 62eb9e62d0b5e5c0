#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hvc/model.hpp"
#include "hvc/optim.hpp"

namespace hvc {

// Everything the training loop carries besides the model parameters:
// EMA shadows and Adam moments (one per trainable manifest entry, in
// manifest order), the optimizer step count, completed epochs, and the
// run seed.
struct TrainState {
  std::vector<Tensor<float>> ema;
  AdamState<float> adam;
  std::uint32_t epoch = 0;
  std::uint64_t seed = 0;

  static TrainState init(Model& model, std::uint64_t seed);
};

// On disk ("HVCK", version 1, little-endian): the manifest (name,
// trainable flag, shape per entry), fp32 payload for every entry (BN
// running stats included), EMA payload for trainable entries, Adam step
// plus first/second moments, epoch counter, seed. Bit-exact round-trip.
void save_checkpoint(const std::string& path, Model& model,
                     const TrainState& state);

struct LoadedCheckpoint {
  ModelConfig config;
  Model model;
  TrainState state;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

// Reconstructs the ModelConfig a manifest describes. The merge kind of a
// trainable merge entry is reported as OnesInit (random vs ones matters
// only at initialization, which a checkpoint has already passed).
ModelConfig config_from_manifest(const ParamManifest& manifest);

}  // namespace hvc
