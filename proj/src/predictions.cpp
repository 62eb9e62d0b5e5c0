#include "hvc/predictions.hpp"

#include "binio.hpp"

namespace hvc {

void PredictionMatrix::validate() const {
  if (rows.size() != names.size())
    throw DataError("prediction matrix: " + std::to_string(rows.size()) +
                    " rows but " + std::to_string(names.size()) + " names");
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k].size() != labels.size())
      throw DataError("prediction matrix: row " + std::to_string(k) + " has " +
                      std::to_string(rows[k].size()) + " entries for " +
                      std::to_string(labels.size()) + " samples");
    for (std::size_t i = 0; i < rows[k].size(); ++i)
      if (rows[k][i] >= classes)
        throw DataError("prediction matrix: prediction " +
                        std::to_string(rows[k][i]) + " out of range [0," +
                        std::to_string(classes) + ") in row " +
                        std::to_string(k) + " sample " + std::to_string(i));
  }
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] >= classes)
      throw DataError("prediction matrix: label " + std::to_string(labels[i]) +
                      " out of range [0," + std::to_string(classes) +
                      ") at sample " + std::to_string(i));
}

double PredictionMatrix::row_accuracy(std::size_t model) const {
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    hit += rows[model][i] == labels[i];
  return labels.empty() ? 0.0 : double(hit) / double(labels.size());
}

void write_prediction_matrix(const std::string& path,
                             const PredictionMatrix& m) {
  m.validate();
  io::Writer w(path);
  w.bytes("HVCP", 4);
  w.u32(1);  // format version
  w.u32(static_cast<std::uint32_t>(m.models()));
  w.u32(static_cast<std::uint32_t>(m.samples()));
  w.u32(m.classes);
  if (!m.labels.empty()) w.bytes(m.labels.data(), m.labels.size());
  for (const auto& row : m.rows)
    if (!row.empty()) w.bytes(row.data(), row.size());
  for (const auto& name : m.names) {
    w.bytes(name.data(), name.size());
    w.u8(0);
  }
  w.close();
}

PredictionMatrix read_prediction_matrix(const std::string& path) {
  io::Reader r(path);
  r.expect_magic("HVCP");
  const std::uint32_t version = r.u32();
  if (version != 1)
    throw DataError(path + ": unsupported format version " +
                    std::to_string(version) + " at offset 4");
  const std::uint32_t k = r.u32();
  const std::uint32_t n = r.u32();
  PredictionMatrix m;
  m.classes = r.u32();
  m.labels.resize(n);
  if (n) r.bytes(m.labels.data(), n);
  m.rows.assign(k, std::vector<std::uint8_t>(n));
  for (auto& row : m.rows)
    if (n) r.bytes(row.data(), n);
  m.names.resize(k);
  for (auto& name : m.names) {
    for (;;) {
      const char c = static_cast<char>(r.u8());
      if (c == '\0') break;
      name.push_back(c);
    }
  }
  r.expect_done();
  m.validate();
  return m;
}

}  // namespace hvc
