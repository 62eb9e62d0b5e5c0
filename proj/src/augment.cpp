#include "hvc/augment.hpp"

#include <algorithm>
#include <cmath>

namespace hvc::data {

namespace {

inline std::uint8_t px(const Image& im, int x, int y) {
  if (x < 0 || x >= kSide || y < 0 || y >= kSide) return 0;
  return im[y * kSide + x];
}

// Bilinear sample with zero fill outside the canvas.
double sample(const Image& im, double sx, double sy) {
  const int x0 = static_cast<int>(std::floor(sx));
  const int y0 = static_cast<int>(std::floor(sy));
  const double fx = sx - x0, fy = sy - y0;
  return (1 - fx) * (1 - fy) * px(im, x0, y0) +
         fx * (1 - fy) * px(im, x0 + 1, y0) +
         (1 - fx) * fy * px(im, x0, y0 + 1) +
         fx * fy * px(im, x0 + 1, y0 + 1);
}

std::uint8_t to_u8(double v) {
  return static_cast<std::uint8_t>(
      std::lround(std::clamp(v, 0.0, 255.0)));
}

}  // namespace

Margins compute_margins(const Image& image) {
  auto col_zero = [&](int x) {
    for (int y = 0; y < kSide; ++y)
      if (image[y * kSide + x]) return false;
    return true;
  };
  auto row_zero = [&](int y) {
    for (int x = 0; x < kSide; ++x)
      if (image[y * kSide + x]) return false;
    return true;
  };
  Margins m;
  while (m.left < kSide && col_zero(m.left)) ++m.left;
  if (m.left == kSide) {
    m.right = m.top = m.bottom = kSide;
    m.degenerate = true;
    return m;
  }
  while (col_zero(kSide - 1 - m.right)) ++m.right;
  while (row_zero(m.top)) ++m.top;
  while (row_zero(kSide - 1 - m.bottom)) ++m.bottom;
  return m;
}

AugmentConfig AugmentConfig::for_strategy(AugmentStrategy s) {
  AugmentConfig c;
  c.strategy = s;
  switch (s) {
    case AugmentStrategy::kFull:
      break;
    case AugmentStrategy::kTwoPixelTranslateOnly:
      c.rotate = c.width = c.erase = false;
      c.translate_cap = 2;
      break;
    case AugmentStrategy::kFullMarginTranslateOnly:
      c.rotate = c.width = c.erase = false;
      break;
    case AugmentStrategy::kNone:
      c.rotate = c.translate = c.width = c.erase = false;
      break;
  }
  return c;
}

Image rotate_bilinear(const Image& in, double degrees) {
  const double rad = degrees * 3.14159265358979323846 / 180.0;
  const double c = std::cos(rad), s = std::sin(rad);
  const double ctr = (kSide - 1) / 2.0;
  Image out;
  for (int y = 0; y < kSide; ++y)
    for (int x = 0; x < kSide; ++x) {
      const double dx = x - ctr, dy = y - ctr;
      const double sx = ctr + c * dx + s * dy;
      const double sy = ctr - s * dx + c * dy;
      out[y * kSide + x] = to_u8(sample(in, sx, sy));
    }
  return out;
}

Image translate_image(const Image& in, int dx, int dy) {
  Image out;
  for (int y = 0; y < kSide; ++y)
    for (int x = 0; x < kSide; ++x)
      out[y * kSide + x] = px(in, x - dx, y - dy);
  return out;
}

Image squeeze_width(const Image& in, double factor) {
  const Margins m = compute_margins(in);
  if (m.degenerate) return in;
  const int c0 = m.left, c1 = kSide - 1 - m.right;
  const int box = c1 - c0 + 1;
  const int neww =
      std::max(1, static_cast<int>(std::lround(box * factor)));
  // Re-center on the old box center, equal padding either side.
  const double center = (c0 + c1) / 2.0;
  int n0 = static_cast<int>(std::lround(center - (neww - 1) / 2.0));
  n0 = std::clamp(n0, 0, kSide - neww);
  Image out{};
  const double scale = static_cast<double>(box) / neww;
  for (int y = 0; y < kSide; ++y)
    for (int j = 0; j < neww; ++j) {
      const double sx = c0 + (j + 0.5) * scale - 0.5;
      const int x0 = static_cast<int>(std::floor(sx));
      const double fx = sx - x0;
      const double v =
          (1 - fx) * px(in, x0, y) + fx * px(in, x0 + 1, y);
      out[y * kSide + n0 + j] = to_u8(v);
    }
  return out;
}

Image erase_at(const Image& in, int corner_x, int corner_y, int patch) {
  Image out = in;
  for (int y = corner_y; y < corner_y + patch; ++y)
    for (int x = corner_x; x < corner_x + patch; ++x)
      if (x >= 0 && x < kSide && y >= 0 && y < kSide) out[y * kSide + x] = 0;
  return out;
}

Image augment_rotate(const Image& in, Rng& rng, const AugmentConfig& cfg) {
  if (!rng.next_coin(cfg.rotation_prob)) return in;
  const double angle =
      rng.next_uniform(-cfg.rotation_max_deg, cfg.rotation_max_deg);
  return rotate_bilinear(in, angle);
}

Image augment_translate(const Image& in, const Margins& m, Rng& rng, int cap) {
  // Direction coins first, then a magnitude uniform over that side's
  // margin (clamped when capped). Margin 0 yields identity on that axis.
  const bool go_left = rng.next_coin();
  std::int64_t mx = rng.next_int(0, go_left ? m.left : m.right);
  const bool go_up = rng.next_coin();
  std::int64_t my = rng.next_int(0, go_up ? m.top : m.bottom);
  if (cap > 0) {
    mx = std::min<std::int64_t>(mx, cap);
    my = std::min<std::int64_t>(my, cap);
  }
  const int dx = go_left ? -static_cast<int>(mx) : static_cast<int>(mx);
  const int dy = go_up ? -static_cast<int>(my) : static_cast<int>(my);
  if (dx == 0 && dy == 0) return in;
  return translate_image(in, dx, dy);
}

Image augment_width(const Image& in, Rng& rng, const AugmentConfig& cfg) {
  const double squeeze = rng.next_uniform(0.0, cfg.width_squeeze_max);
  return squeeze_width(in, 1.0 - squeeze);
}

Image augment_erase(const Image& in, Rng& rng, const AugmentConfig& cfg) {
  const int lo = 4, hi = 24 - cfg.erase_patch;
  const int cx = static_cast<int>(rng.next_int(lo, hi));
  const int cy = static_cast<int>(rng.next_int(lo, hi));
  return erase_at(in, cx, cy, cfg.erase_patch);
}

Image augment_pipeline(const Image& in, const AugmentConfig& cfg,
                       std::uint64_t seed, std::uint64_t epoch,
                       std::uint64_t index, std::vector<AugmentOp>* trace) {
  auto stream = [&](AugmentOp op) {
    if (trace) trace->push_back(op);
    return Rng::stream(seed, {epoch, index, static_cast<std::uint64_t>(op)});
  };
  Image img = in;
  if (cfg.rotate) {
    Rng rng = stream(AugmentOp::kRotate);
    img = augment_rotate(img, rng, cfg);
  }
  if (cfg.translate) {
    Rng rng = stream(AugmentOp::kTranslate);
    const Margins m = compute_margins(img);
    img = augment_translate(img, m, rng, cfg.translate_cap);
  }
  if (cfg.width) {
    Rng rng = stream(AugmentOp::kWidth);
    img = augment_width(img, rng, cfg);
  }
  if (cfg.erase) {
    Rng rng = stream(AugmentOp::kErase);
    img = augment_erase(img, rng, cfg);
  }
  return img;
}

}  // namespace hvc::data
