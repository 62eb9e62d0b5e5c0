#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <thread>
#include <vector>

#include "doctest.h"
#include "hvc/augment.hpp"
#include "testutil.hpp"

namespace data = hvc::data;
using data::AugmentConfig;
using data::AugmentOp;
using data::AugmentStrategy;
using data::Image;

namespace {

Image blob_image(std::uint64_t seed) {
  auto set = testutil::synthetic_set(1, seed);
  return set.image_copy(0);
}

Image solid_block(int x0, int y0, int w, int h) {
  Image im{};
  for (int y = y0; y < y0 + h; ++y)
    for (int x = x0; x < x0 + w; ++x) im[y * 28 + x] = 255;
  return im;
}

std::vector<std::uint8_t> sorted_nonzero(const Image& im) {
  std::vector<std::uint8_t> v;
  for (auto p : im)
    if (p) v.push_back(p);
  std::sort(v.begin(), v.end());
  return v;
}

}  // namespace

TEST_CASE("margins of a single pixel") {
  Image im{};
  im[5 * 28 + 11] = 200;
  auto m = data::compute_margins(im);
  CHECK(m.left == 11);
  CHECK(m.right == 28 - 1 - 11);
  CHECK(m.top == 5);
  CHECK(m.bottom == 28 - 1 - 5);
  CHECK_FALSE(m.degenerate);
  CHECK(m.left + m.right <= 27);
  CHECK(m.top + m.bottom <= 27);
}

TEST_CASE("margins of an empty image are degenerate") {
  Image im{};
  auto m = data::compute_margins(im);
  CHECK(m.degenerate);
  CHECK(m.left == 28);
  CHECK(m.right == 28);
  CHECK(m.top == 28);
  CHECK(m.bottom == 28);
}

TEST_CASE("margin sums stay within the canvas for inked images") {
  for (std::uint64_t s = 0; s < 50; ++s) {
    auto im = blob_image(s);
    auto m = data::compute_margins(im);
    CHECK(m.left + m.right <= 27);
    CHECK(m.top + m.bottom <= 27);
  }
}

TEST_CASE("rotation by zero degrees is the identity") {
  auto im = blob_image(1);
  auto out = data::rotate_bilinear(im, 0.0);
  CHECK(out == im);
}

TEST_CASE("translate_image shifts by (dx, dy) with zero fill") {
  Image im{};
  im[10 * 28 + 10] = 77;
  auto out = data::translate_image(im, 3, -2);
  CHECK(out[8 * 28 + 13] == 77);
  int nonzero = 0;
  for (auto p : out) nonzero += p != 0;
  CHECK(nonzero == 1);
}

TEST_CASE("full-margin translation preserves the nonzero multiset") {
  int moved = 0;
  for (std::uint64_t trial = 0; trial < 300; ++trial) {
    auto im = trial % 2 ? blob_image(trial % 20)
                        : solid_block(3 + trial % 9, 5 + trial % 7, 8, 8);
    auto before = sorted_nonzero(im);
    hvc::Rng rng = hvc::Rng::stream(trial, {7});
    auto m = data::compute_margins(im);
    auto out = data::augment_translate(im, m, rng, 0);
    CHECK(sorted_nonzero(out) == before);
    moved += out != im;
  }
  CHECK(moved > 100);
}

TEST_CASE("capped translation moves the ink box at most two pixels") {
  for (std::uint64_t trial = 0; trial < 200; ++trial) {
    auto im = solid_block(4 + trial % 8, 6 + trial % 6, 9, 9);
    auto before = data::compute_margins(im);
    hvc::Rng rng = hvc::Rng::stream(trial, {8});
    auto out = data::augment_translate(im, before, rng, 2);
    auto after = data::compute_margins(out);
    CHECK(std::abs(after.left - before.left) <= 2);
    CHECK(std::abs(after.top - before.top) <= 2);
    CHECK(sorted_nonzero(out) == sorted_nonzero(im));
  }
}

TEST_CASE("width squeeze by factor one is the identity") {
  auto im = blob_image(2);
  CHECK(data::squeeze_width(im, 1.0) == im);
}

TEST_CASE("width squeeze narrows the ink box to the rounded target") {
  for (double factor : {0.9, 0.8, 0.75}) {
    auto im = solid_block(6, 10, 14, 8);
    auto out = data::squeeze_width(im, factor);
    auto m2 = data::compute_margins(out);
    int box2 = 28 - m2.left - m2.right;
    CHECK(box2 == std::lround(14 * factor));
    // Rows are resampled in place, so height is untouched.
    CHECK(m2.top == 10);
    CHECK(m2.bottom == 28 - 18);
  }
}

TEST_CASE("erasure zeroes at most a 4x4 patch inside the central window") {
  for (std::uint64_t trial = 0; trial < 300; ++trial) {
    Image im;
    im.fill(255);
    hvc::Rng rng = hvc::Rng::stream(trial, {9});
    AugmentConfig cfg;
    auto out = data::augment_erase(im, rng, cfg);
    int changed = 0;
    for (int y = 0; y < 28; ++y)
      for (int x = 0; x < 28; ++x) {
        if (out[y * 28 + x] == im[y * 28 + x]) continue;
        ++changed;
        CHECK(out[y * 28 + x] == 0);
        CHECK(x >= 4);
        CHECK(x <= 23);
        CHECK(y >= 4);
        CHECK(y <= 23);
      }
    CHECK(changed == 16);  // all-255 input, patch always fully inside
  }
}

TEST_CASE("strategies toggle the documented ops") {
  auto full = AugmentConfig::for_strategy(AugmentStrategy::kFull);
  CHECK(full.rotate);
  CHECK(full.translate);
  CHECK(full.width);
  CHECK(full.erase);
  CHECK(full.translate_cap == 0);

  auto two = AugmentConfig::for_strategy(AugmentStrategy::kTwoPixelTranslateOnly);
  CHECK_FALSE(two.rotate);
  CHECK(two.translate);
  CHECK_FALSE(two.width);
  CHECK_FALSE(two.erase);
  CHECK(two.translate_cap == 2);

  auto margin =
      AugmentConfig::for_strategy(AugmentStrategy::kFullMarginTranslateOnly);
  CHECK(margin.translate);
  CHECK(margin.translate_cap == 0);
  CHECK_FALSE(margin.rotate);

  auto none = AugmentConfig::for_strategy(AugmentStrategy::kNone);
  CHECK_FALSE(none.rotate);
  CHECK_FALSE(none.translate);
  CHECK_FALSE(none.width);
  CHECK_FALSE(none.erase);
}

TEST_CASE("pipeline trace lists ops in fixed order") {
  auto im = blob_image(4);
  std::vector<AugmentOp> trace;
  data::augment_pipeline(im, AugmentConfig::for_strategy(AugmentStrategy::kFull),
                         1, 0, 0, &trace);
  REQUIRE(trace.size() == 4);
  CHECK(trace[0] == AugmentOp::kRotate);
  CHECK(trace[1] == AugmentOp::kTranslate);
  CHECK(trace[2] == AugmentOp::kWidth);
  CHECK(trace[3] == AugmentOp::kErase);

  trace.clear();
  data::augment_pipeline(im, AugmentConfig::for_strategy(AugmentStrategy::kNone),
                         1, 0, 0, &trace);
  CHECK(trace.empty());
  CHECK(data::augment_pipeline(
            im, AugmentConfig::for_strategy(AugmentStrategy::kNone), 1, 0,
            0) == im);
}

TEST_CASE("pipeline is deterministic in (seed, epoch, index)") {
  auto im = blob_image(5);
  auto cfg = AugmentConfig::for_strategy(AugmentStrategy::kFull);
  auto a = data::augment_pipeline(im, cfg, 11, 3, 17);
  auto b = data::augment_pipeline(im, cfg, 11, 3, 17);
  CHECK(a == b);
  int distinct = 0;
  distinct += data::augment_pipeline(im, cfg, 12, 3, 17) != a;
  distinct += data::augment_pipeline(im, cfg, 11, 4, 17) != a;
  distinct += data::augment_pipeline(im, cfg, 11, 3, 18) != a;
  CHECK(distinct == 3);
}

TEST_CASE("pipeline results do not depend on the calling thread layout") {
  auto cfg = AugmentConfig::for_strategy(AugmentStrategy::kFull);
  std::vector<Image> inputs;
  for (std::uint64_t i = 0; i < 16; ++i) inputs.push_back(blob_image(i));

  std::vector<Image> serial(16);
  for (std::uint64_t i = 0; i < 16; ++i)
    serial[i] = data::augment_pipeline(inputs[i], cfg, 99, 2, i);

  for (int workers : {2, 4}) {
    std::vector<Image> parallel(16);
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::uint64_t i = w; i < 16; i += workers)
          parallel[i] = data::augment_pipeline(inputs[i], cfg, 99, 2, i);
      });
    for (auto& th : pool) th.join();
    CHECK(parallel == serial);
  }
}

TEST_CASE("rotation probability zero leaves the image alone") {
  auto im = blob_image(6);
  AugmentConfig cfg;
  cfg.rotation_prob = 0.0;
  for (std::uint64_t t = 0; t < 20; ++t) {
    hvc::Rng rng = hvc::Rng::stream(t, {10});
    CHECK(data::augment_rotate(im, rng, cfg) == im);
  }
  cfg.rotation_prob = 1.0;
  int rotated = 0;
  for (std::uint64_t t = 0; t < 20; ++t) {
    hvc::Rng rng = hvc::Rng::stream(t, {11});
    rotated += data::augment_rotate(im, rng, cfg) != im;
  }
  CHECK(rotated >= 19);  // an exactly-zero angle draw is vanishingly rare
}

TEST_CASE("rotation coin applies about half the time") {
  auto im = blob_image(7);
  AugmentConfig cfg;
  int applied = 0;
  for (std::uint64_t t = 0; t < 400; ++t) {
    hvc::Rng rng = hvc::Rng::stream(t, {12});
    applied += data::augment_rotate(im, rng, cfg) != im;
  }
  CHECK(applied > 140);
  CHECK(applied < 260);
}
