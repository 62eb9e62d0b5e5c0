#pragma once

#include <unistd.h>

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "hvc/mnist.hpp"
#include "hvc/predictions.hpp"
#include "hvc/rng.hpp"
#include "hvc/tensor.hpp"

namespace testutil {

inline std::filesystem::path temp_dir(const std::string& tag) {
  auto base = std::filesystem::temp_directory_path() / "hvc_tests";
  std::filesystem::create_directories(base);
  auto dir = base / (tag + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline void be32(std::ofstream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

// Writes a matched IDX image/label pair.
inline void write_idx_pair(const std::string& images_path,
                           const std::string& labels_path,
                           const std::vector<std::uint8_t>& pixels,
                           const std::vector<std::uint8_t>& labels) {
  std::size_t n = labels.size();
  {
    std::ofstream out(images_path, std::ios::binary);
    be32(out, 0x00000803);
    be32(out, static_cast<std::uint32_t>(n));
    be32(out, 28);
    be32(out, 28);
    out.write(reinterpret_cast<const char*>(pixels.data()),
              static_cast<std::streamsize>(pixels.size()));
  }
  {
    std::ofstream out(labels_path, std::ios::binary);
    be32(out, 0x00000801);
    be32(out, static_cast<std::uint32_t>(n));
    out.write(reinterpret_cast<const char*>(labels.data()),
              static_cast<std::streamsize>(labels.size()));
  }
}

// A learnable toy set: each class gets a distinct bright 8x8 block
// position on a 3x4 grid, plus mild pixel noise.
inline hvc::data::ImageSet synthetic_set(std::size_t n, std::uint64_t seed,
                                         int classes = 10) {
  hvc::data::ImageSet set;
  set.count = n;
  set.pixels.assign(n * hvc::data::kPixels, 0);
  set.labels.resize(n);
  hvc::Rng rng = hvc::Rng::stream(seed, {9100});
  for (std::size_t i = 0; i < n; ++i) {
    int c = static_cast<int>(i % classes);
    set.labels[i] = static_cast<std::uint8_t>(c);
    std::uint8_t* img = set.pixels.data() + i * hvc::data::kPixels;
    int bx = 2 + (c % 3) * 9, by = 2 + (c / 3) * 6;
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x)
        img[(by + y) * 28 + (bx + x)] =
            static_cast<std::uint8_t>(180 + rng.next_below(60));
    for (int j = 0; j < 30; ++j)
      img[rng.next_below(hvc::data::kPixels)] =
          static_cast<std::uint8_t>(rng.next_below(50));
  }
  return set;
}

// Random prediction matrix: each model answers correctly with the given
// probability, otherwise a uniformly wrong class.
inline hvc::PredictionMatrix random_matrix(std::size_t k, std::size_t n,
                                           double accuracy,
                                           std::uint64_t seed,
                                           int classes = 10) {
  hvc::PredictionMatrix m;
  m.classes = static_cast<std::uint32_t>(classes);
  m.labels.resize(n);
  hvc::Rng rng = hvc::Rng::stream(seed, {9200});
  for (auto& l : m.labels)
    l = static_cast<std::uint8_t>(rng.next_below(classes));
  for (std::size_t r = 0; r < k; ++r) {
    std::vector<std::uint8_t> row(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (rng.next_double() < accuracy) {
        row[i] = m.labels[i];
      } else {
        auto wrong = static_cast<std::uint8_t>(rng.next_below(classes - 1));
        row[i] = wrong + (wrong >= m.labels[i] ? 1 : 0);
      }
    }
    m.rows.push_back(std::move(row));
    m.names.push_back("m" + std::to_string(r));
  }
  return m;
}

// Naive majority vote for one subset, independent of the library path.
inline std::uint64_t naive_subset_correct(const hvc::PredictionMatrix& m,
                                          std::uint32_t subset_mask,
                                          bool first_model_tie = false) {
  std::uint64_t correct = 0;
  for (std::size_t s = 0; s < m.samples(); ++s) {
    int votes[256] = {0};
    for (std::size_t r = 0; r < m.models(); ++r)
      if (subset_mask >> r & 1u) ++votes[m.rows[r][s]];
    int best = 0;
    for (int c = 1; c < static_cast<int>(m.classes); ++c)
      if (votes[c] > votes[best]) best = c;
    if (first_model_tie) {
      for (std::size_t r = 0; r < m.models(); ++r) {
        if (!(subset_mask >> r & 1u)) continue;
        if (votes[m.rows[r][s]] == votes[best]) {
          best = m.rows[r][s];
          break;
        }
      }
    }
    if (best == m.labels[s]) ++correct;
  }
  return correct;
}

struct NaiveCensus {
  std::vector<std::uint64_t> histogram;  // index = correct count
  std::uint64_t subsets = 0;
};

template <typename FamilyPred>
NaiveCensus naive_census(const hvc::PredictionMatrix& m,
                         FamilyPred in_family, bool first_model_tie = false) {
  NaiveCensus out;
  out.histogram.assign(m.samples() + 1, 0);
  std::uint32_t k = static_cast<std::uint32_t>(m.models());
  for (std::uint32_t mask = 1; mask < (1u << k); ++mask) {
    if (!in_family(std::popcount(mask))) continue;
    ++out.subsets;
    ++out.histogram[naive_subset_correct(m, mask, first_model_tie)];
  }
  return out;
}

// Reference convolution, plain quintuple loop.
inline hvc::Tensor<float> naive_conv2d(const hvc::Tensor<float>& x,
                                       const hvc::Tensor<float>& k) {
  std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), cin = x.dim(3);
  std::size_t cout = k.dim(3);
  std::size_t oh = h - 2, ow = w - 2;
  hvc::Tensor<float> y({n, oh, ow, cout});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox)
        for (std::size_t co = 0; co < cout; ++co) {
          float acc = 0;
          for (std::size_t ky = 0; ky < 3; ++ky)
            for (std::size_t kx = 0; kx < 3; ++kx)
              for (std::size_t ci = 0; ci < cin; ++ci)
                acc += x.values()[((b * h + oy + ky) * w + ox + kx) * cin + ci] *
                       k.values()[((ky * 3 + kx) * cin + ci) * cout + co];
          y.values()[((b * oh + oy) * ow + ox) * cout + co] = acc;
        }
  return y;
}

// Reference HVC head, plain quadruple loop.
inline hvc::Tensor<float> naive_hvc(const hvc::Tensor<float>& caps,
                                    const hvc::Tensor<float>& w) {
  std::size_t n = caps.dim(0), nc = caps.dim(1), d = caps.dim(2);
  std::size_t m = w.dim(1);
  hvc::Tensor<float> out({n, m, d});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t c = 0; c < m; ++c)
      for (std::size_t j = 0; j < d; ++j) {
        float acc = 0;
        for (std::size_t i = 0; i < nc; ++i)
          acc += caps.values()[(b * nc + i) * d + j] *
                 w.values()[(i * m + c) * d + j];
        out.values()[(b * m + c) * d + j] = acc;
      }
  return out;
}

inline hvc::Tensor<float> random_tensor(hvc::Shape shape, std::uint64_t seed,
                                        float lo = -1.0f, float hi = 1.0f) {
  hvc::Tensor<float> t(std::move(shape));
  hvc::Rng rng = hvc::Rng::stream(seed, {9300});
  for (auto& v : t.values())
    v = static_cast<float>(rng.next_uniform(lo, hi));
  return t;
}

}  // namespace testutil
