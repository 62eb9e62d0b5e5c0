#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hvc/predictions.hpp"

namespace hvc::ensemble {

// Tie resolution for even vote splits: lowest class index among the tied
// classes (order-independent, the default), or the vote of the earliest
// model in the subset whose prediction is among the tied classes.
enum class TieBreak { kLowestClass, kFirstModel };

std::vector<std::uint8_t> majority_vote(const PredictionMatrix& mat,
                                        std::span<const int> models,
                                        TieBreak tie = TieBreak::kLowestClass);

double ensemble_accuracy(const PredictionMatrix& mat,
                         std::span<const int> models,
                         TieBreak tie = TieBreak::kLowestClass);

struct SubsetFamily {
  enum class Kind { kAll, kMinTwo, kOdd, kRange };
  Kind kind = Kind::kMinTwo;
  int lo = 1, hi = 1 << 30;  // kRange bounds, inclusive

  bool contains(int size) const;
  std::string describe() const;
  // "all" | "ge2" | "odd" | "range:<lo>-<hi>"
  static SubsetFamily parse(const std::string& text);
};

// Accuracy thresholds are integers in hundredths of a percent
// (99.80% -> 9980), the report's native granularity.
std::uint32_t accuracy_units(double percent);
std::uint64_t min_correct(std::uint32_t units, std::uint64_t samples);

struct SubsetCountReport {
  std::string family;
  std::string tie_break;
  std::uint32_t model_count = 0;
  std::uint64_t sample_count = 0;
  std::uint64_t subsets_enumerated = 0;
  bool exact = true;
  double scale = 1.0;  // sampling expansion factor when !exact
  std::vector<std::uint32_t> thresholds;  // hundredths of a percent
  std::vector<std::uint64_t> counts;      // subsets with accuracy >= threshold
  std::vector<std::uint64_t> histogram;   // index = correct-sample count
};

// Exact count per threshold of subsets whose majority-vote accuracy
// reaches it. Walks subsets in Gray-code order so each transition costs
// only the per-sample bookkeeping of contested samples (samples on which
// all models already agree contribute a constant). k is capped at 32.
SubsetCountReport enumerate_subsets(const PredictionMatrix& mat,
                                    const SubsetFamily& family,
                                    std::span<const std::uint32_t> thresholds,
                                    TieBreak tie = TieBreak::kLowestClass,
                                    int threads = 0);

// Monte-Carlo fallback for k > 32 (or on request): uniform subsets from
// the family, counts scaled by family size.
SubsetCountReport sample_subsets(const PredictionMatrix& mat,
                                 const SubsetFamily& family,
                                 std::span<const std::uint32_t> thresholds,
                                 std::uint64_t draws, std::uint64_t seed,
                                 TieBreak tie = TieBreak::kLowestClass);

struct TroublesomeReport {
  std::uint32_t model_count = 0;
  std::uint64_t sample_count = 0;
  std::uint64_t full_agreement = 0;  // samples where every model concurs
  std::vector<std::uint32_t> correct_counts;  // per sample
  struct Item {
    std::uint32_t index;
    std::uint8_t label;
    std::uint32_t correct_models;
  };
  std::vector<Item> misclassified_by_all;
  std::vector<Item> misclassified_by_majority;  // wrong > correct
};

TroublesomeReport troublesome_digits(const PredictionMatrix& mat);

}  // namespace hvc::ensemble
