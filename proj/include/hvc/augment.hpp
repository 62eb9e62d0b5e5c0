#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "hvc/mnist.hpp"
#include "hvc/rng.hpp"

namespace hvc::data {

struct Margins {
  int left = 0, right = 0, top = 0, bottom = 0;
  // All-zero image: margins are 28 on every side by convention.
  bool degenerate = false;
  bool operator==(const Margins&) const = default;
};

Margins compute_margins(const Image& image);

enum class AugmentStrategy {
  kFull,
  kTwoPixelTranslateOnly,
  kFullMarginTranslateOnly,
  kNone,
};

struct AugmentConfig {
  AugmentStrategy strategy = AugmentStrategy::kFull;
  bool rotate = true, translate = true, width = true, erase = true;
  int translate_cap = 0;  // 0 = full available margin, 2 = two-pixel cap
  double rotation_max_deg = 30.0;
  double rotation_prob = 0.5;
  double width_squeeze_max = 0.25;  // squeeze drawn uniform in [0, max]
  int erase_patch = 4;              // inside the central 20x20 region

  // Base toggles for a strategy; individual fields can be overridden after.
  static AugmentConfig for_strategy(AugmentStrategy s);
};

// Deterministic kernels (no rng):
Image rotate_bilinear(const Image& in, double degrees);  // about (13.5,13.5)
Image translate_image(const Image& in, int dx, int dy);  // +x right, +y down
Image squeeze_width(const Image& in, double factor);     // ink-box resample
Image erase_at(const Image& in, int corner_x, int corner_y, int patch);

// Sampling wrappers; each consumes draws from its own stream.
Image augment_rotate(const Image& in, Rng& rng, const AugmentConfig& cfg);
Image augment_translate(const Image& in, const Margins& m, Rng& rng, int cap);
Image augment_width(const Image& in, Rng& rng, const AugmentConfig& cfg);
Image augment_erase(const Image& in, Rng& rng, const AugmentConfig& cfg);

enum class AugmentOp { kRotate = 0, kTranslate = 1, kWidth = 2, kErase = 3 };

// Ops in fixed order rotation -> translation -> width -> erasure, each
// drawing from the stream keyed (seed, epoch, index, op). `trace`, when
// given, records which ops were invoked, in order.
Image augment_pipeline(const Image& in, const AugmentConfig& cfg,
                       std::uint64_t seed, std::uint64_t epoch,
                       std::uint64_t index,
                       std::vector<AugmentOp>* trace = nullptr);

}  // namespace hvc::data
