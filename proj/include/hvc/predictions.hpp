#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace hvc {

// Per-model per-sample predicted labels plus ground truth; the input to
// all ensemble analysis. On disk: magic "HVCP", version u32, k u32,
// n u32, m u32, labels n x u8, k rows of n x u8, k null-terminated model
// names. All integers little-endian.
struct PredictionMatrix {
  std::uint32_t classes = 10;
  std::vector<std::uint8_t> labels;            // n
  std::vector<std::vector<std::uint8_t>> rows;  // k rows of n
  std::vector<std::string> names;              // k

  std::size_t models() const { return rows.size(); }
  std::size_t samples() const { return labels.size(); }
  void validate() const;
  double row_accuracy(std::size_t model) const;
};

void write_prediction_matrix(const std::string& path,
                             const PredictionMatrix& m);
PredictionMatrix read_prediction_matrix(const std::string& path);

}  // namespace hvc
