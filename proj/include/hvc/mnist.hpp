#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace hvc::data {

inline constexpr int kSide = 28;
inline constexpr int kPixels = kSide * kSide;

using Image = std::array<std::uint8_t, kPixels>;

struct ImageSet {
  std::size_t count = 0;
  std::vector<std::uint8_t> pixels;  // count * 784, row-major
  std::vector<std::uint8_t> labels;  // count

  std::span<const std::uint8_t> image(std::size_t i) const {
    return {pixels.data() + i * kPixels, kPixels};
  }
  Image image_copy(std::size_t i) const {
    Image im;
    std::copy_n(pixels.data() + i * kPixels, kPixels, im.begin());
    return im;
  }
};

// IDX container pair (big-endian headers, magics 0x00000803 / 0x00000801).
// Pixels stay u8 here; batches normalize to [0,1] floats.
ImageSet load_idx(const std::string& images_path,
                  const std::string& labels_path);

// Raw PGM (P5, 28x28, maxval 255) for visual inspection.
void write_pgm(const std::string& path, std::span<const std::uint8_t> image);

}  // namespace hvc::data
