#include "hvc/mnist.hpp"

#include <cstdio>
#include <fstream>

#include "hvc/errors.hpp"

namespace hvc::data {

namespace {

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path);
  f.seekg(0, std::ios::end);
  const auto len = f.tellg();
  f.seekg(0, std::ios::beg);
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(len));
  f.read(reinterpret_cast<char*>(buf.data()), len);
  if (!f) throw DataError("short read on " + path);
  return buf;
}

std::uint32_t be32(const std::uint8_t* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
         (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

void need(const std::vector<std::uint8_t>& buf, std::size_t want,
          const std::string& path) {
  if (buf.size() < want)
    throw DataError(path + ": truncated, expected " + std::to_string(want) +
                    " bytes but file has " + std::to_string(buf.size()));
}

}  // namespace

ImageSet load_idx(const std::string& images_path,
                  const std::string& labels_path) {
  auto ibuf = read_file(images_path);
  need(ibuf, 16, images_path);
  const std::uint32_t imagic = be32(ibuf.data());
  if (imagic != 0x00000803u) {
    char msg[160];
    std::snprintf(msg, sizeof msg,
                  "%s: bad magic 0x%08x at offset 0, expected 0x00000803",
                  images_path.c_str(), imagic);
    throw DataError(msg);
  }
  const std::uint32_t n = be32(ibuf.data() + 4);
  const std::uint32_t rows = be32(ibuf.data() + 8);
  const std::uint32_t cols = be32(ibuf.data() + 12);
  if (rows != kSide || cols != kSide)
    throw DataError(images_path + ": image extents " + std::to_string(rows) +
                    "x" + std::to_string(cols) + " at offset 8, expected 28x28");
  need(ibuf, 16 + std::size_t(n) * kPixels, images_path);
  if (ibuf.size() != 16 + std::size_t(n) * kPixels)
    throw DataError(images_path + ": expected " +
                    std::to_string(16 + std::size_t(n) * kPixels) +
                    " bytes, file has " + std::to_string(ibuf.size()));

  auto lbuf = read_file(labels_path);
  need(lbuf, 8, labels_path);
  const std::uint32_t lmagic = be32(lbuf.data());
  if (lmagic != 0x00000801u) {
    char msg[160];
    std::snprintf(msg, sizeof msg,
                  "%s: bad magic 0x%08x at offset 0, expected 0x00000801",
                  labels_path.c_str(), lmagic);
    throw DataError(msg);
  }
  const std::uint32_t ln = be32(lbuf.data() + 4);
  if (ln != n)
    throw DataError(labels_path + ": " + std::to_string(ln) + " labels for " +
                    std::to_string(n) + " images");
  if (lbuf.size() != 8 + std::size_t(ln))
    throw DataError(labels_path + ": expected " +
                    std::to_string(8 + std::size_t(ln)) + " bytes, file has " +
                    std::to_string(lbuf.size()));

  ImageSet set;
  set.count = n;
  set.pixels.assign(ibuf.begin() + 16, ibuf.end());
  set.labels.assign(lbuf.begin() + 8, lbuf.end());
  return set;
}

void write_pgm(const std::string& path, std::span<const std::uint8_t> image) {
  if (image.size() != kPixels)
    throw DataError("write_pgm: image has " + std::to_string(image.size()) +
                    " pixels, expected 784");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path);
  f << "P5\n28 28\n255\n";
  f.write(reinterpret_cast<const char*>(image.data()),
          static_cast<std::streamsize>(image.size()));
  if (!f) throw DataError("short write on " + path);
}

}  // namespace hvc::data
