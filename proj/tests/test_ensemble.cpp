#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "hvc/ensemble.hpp"
#include "testutil.hpp"

namespace ens = hvc::ensemble;
using ens::SubsetFamily;
using ens::TieBreak;
using hvc::PredictionMatrix;

namespace {

PredictionMatrix literal_matrix(std::vector<std::uint8_t> labels,
                                std::vector<std::vector<std::uint8_t>> rows) {
  PredictionMatrix m;
  m.classes = 10;
  m.labels = std::move(labels);
  m.rows = std::move(rows);
  for (std::size_t r = 0; r < m.rows.size(); ++r)
    m.names.push_back("m" + std::to_string(r));
  return m;
}

bool family_has(const SubsetFamily& f, int size) { return f.contains(size); }

}  // namespace

TEST_CASE("majority vote follows the plurality and is order invariant") {
  auto m = literal_matrix({3, 1}, {{3, 1}, {3, 2}, {5, 2}});
  std::vector<int> order_a = {0, 1, 2};
  std::vector<int> order_b = {2, 0, 1};
  auto va = ens::majority_vote(m, order_a);
  auto vb = ens::majority_vote(m, order_b);
  CHECK(va == vb);
  REQUIRE(va.size() == 2);
  CHECK(va[0] == 3);  // two votes for 3, one for 5
  CHECK(va[1] == 2);  // two votes for 2, one for 1
  CHECK(ens::ensemble_accuracy(m, order_a) == doctest::Approx(0.5));
}

TEST_CASE("vote ties resolve per the configured rule") {
  auto m = literal_matrix({1}, {{1}, {1}, {7}, {7}});
  std::vector<int> all = {0, 1, 2, 3};
  CHECK(ens::majority_vote(m, all, TieBreak::kLowestClass)[0] == 1);
  CHECK(ens::majority_vote(m, all, TieBreak::kFirstModel)[0] == 1);
  std::vector<int> reversed = {2, 3, 0, 1};
  // First listed model voted 7; lowest-class still picks 1.
  CHECK(ens::majority_vote(m, reversed, TieBreak::kFirstModel)[0] == 7);
  CHECK(ens::majority_vote(m, reversed, TieBreak::kLowestClass)[0] == 1);
}

TEST_CASE("duplicated rows never change a two-thirds majority") {
  auto base = testutil::random_matrix(3, 50, 0.7, 8);
  std::vector<int> trio = {0, 1, 2};
  auto votes = ens::majority_vote(base, trio);
  PredictionMatrix doubled = base;
  doubled.rows.push_back(base.rows[0]);
  doubled.rows.push_back(base.rows[1]);
  doubled.rows.push_back(base.rows[2]);
  doubled.names = {"a", "b", "c", "d", "e", "f"};
  std::vector<int> six = {0, 1, 2, 3, 4, 5};
  CHECK(ens::majority_vote(doubled, six) == votes);
}

TEST_CASE("accuracy units and thresholds") {
  CHECK(ens::accuracy_units(99.80) == 9980);
  CHECK(ens::accuracy_units(100.0) == 10000);
  CHECK(ens::accuracy_units(0.0) == 0);
  CHECK(ens::accuracy_units(99.99) == 9999);
  CHECK_THROWS_AS(ens::accuracy_units(-0.5), hvc::ConfigError);
  CHECK_THROWS_AS(ens::accuracy_units(100.5), hvc::ConfigError);

  // ceil(units * n / 10000)
  CHECK(ens::min_correct(9980, 10000) == 9980);
  CHECK(ens::min_correct(9980, 1000) == 998);
  CHECK(ens::min_correct(9975, 1000) == 998);
  CHECK(ens::min_correct(0, 1000) == 0);
  CHECK(ens::min_correct(10000, 7) == 7);
  CHECK(ens::min_correct(9999, 7) == 7);
}

TEST_CASE("subset family predicates and parsing") {
  auto all = SubsetFamily::parse("all");
  CHECK(family_has(all, 1));
  CHECK(family_has(all, 12));

  auto ge2 = SubsetFamily::parse("ge2");
  CHECK_FALSE(family_has(ge2, 1));
  CHECK(family_has(ge2, 2));
  CHECK(family_has(ge2, 31));

  auto odd = SubsetFamily::parse("odd");
  CHECK(family_has(odd, 1));
  CHECK_FALSE(family_has(odd, 2));
  CHECK(family_has(odd, 9));

  auto range = SubsetFamily::parse("range:3-5");
  CHECK_FALSE(family_has(range, 2));
  CHECK(family_has(range, 3));
  CHECK(family_has(range, 4));
  CHECK(family_has(range, 5));
  CHECK_FALSE(family_has(range, 6));

  CHECK_THROWS_AS(SubsetFamily::parse("bogus"), hvc::ConfigError);
  CHECK_THROWS_AS(SubsetFamily::parse("range:5-3"), hvc::ConfigError);
  CHECK_THROWS_AS(SubsetFamily::parse("range:x-y"), hvc::ConfigError);
}

TEST_CASE("enumeration matches the naive census exactly") {
  const std::uint32_t thresholds[] = {0, 5000, 9000, 9800, 10000};
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    std::size_t k = 3 + seed;  // 3..8 models
    auto m = testutil::random_matrix(k, 40 + 11 * seed, 0.82, seed);
    struct Case {
      const char* family;
      bool first_tie;
    };
    for (const auto& c :
         {Case{"all", false}, Case{"ge2", false}, Case{"odd", false},
          Case{"range:2-4", false}, Case{"all", true}, Case{"ge2", true}}) {
      auto fam = SubsetFamily::parse(c.family);
      auto tie = c.first_tie ? TieBreak::kFirstModel : TieBreak::kLowestClass;
      auto report = ens::enumerate_subsets(m, fam, thresholds, tie, 1);
      auto naive = testutil::naive_census(
          m, [&](int size) { return fam.contains(size); }, c.first_tie);

      CHECK(report.exact);
      CHECK(report.subsets_enumerated == naive.subsets);
      REQUIRE(report.histogram.size() == naive.histogram.size());
      CHECK(report.histogram == naive.histogram);
      REQUIRE(report.counts.size() == 5);
      for (std::size_t t = 0; t < 5; ++t) {
        std::uint64_t need = ens::min_correct(thresholds[t], m.samples());
        std::uint64_t expect = 0;
        for (std::size_t c2 = need; c2 < naive.histogram.size(); ++c2)
          expect += naive.histogram[c2];
        CHECK(report.counts[t] == expect);
      }
      std::uint64_t hist_total = std::accumulate(
          report.histogram.begin(), report.histogram.end(), std::uint64_t{0});
      CHECK(hist_total == report.subsets_enumerated);
    }
  }
}

TEST_CASE("enumeration is thread-count independent") {
  // 19 models so the walk splits into more than one high-bit chunk.
  auto m = testutil::random_matrix(19, 60, 0.85, 3);
  const std::uint32_t thresholds[] = {8000, 9500};
  auto fam = SubsetFamily::parse("ge2");
  auto one =
      ens::enumerate_subsets(m, fam, thresholds, TieBreak::kLowestClass, 1);
  CHECK(one.subsets_enumerated == (1u << 19) - 1 - 19);
  for (int t : {2}) {
    auto r = ens::enumerate_subsets(m, fam, thresholds,
                                    TieBreak::kLowestClass, t);
    CHECK(r.histogram == one.histogram);
    CHECK(r.counts == one.counts);
    CHECK(r.subsets_enumerated == one.subsets_enumerated);
  }
}

TEST_CASE("family size bookkeeping matches binomial sums") {
  auto m = testutil::random_matrix(7, 30, 0.8, 5);
  const std::uint32_t thresholds[] = {0};
  auto all = ens::enumerate_subsets(m, SubsetFamily::parse("all"), thresholds);
  CHECK(all.subsets_enumerated == (1u << 7) - 1);
  CHECK(all.counts[0] == all.subsets_enumerated);  // every subset clears 0%
  auto ge2 = ens::enumerate_subsets(m, SubsetFamily::parse("ge2"), thresholds);
  CHECK(ge2.subsets_enumerated == (1u << 7) - 1 - 7);
  auto odd = ens::enumerate_subsets(m, SubsetFamily::parse("odd"), thresholds);
  CHECK(odd.subsets_enumerated == (1u << 6));  // sum of odd binomials = 2^(k-1)
}

TEST_CASE("enumeration rejects more than 32 models") {
  PredictionMatrix m;
  m.classes = 10;
  m.labels.assign(4, 0);
  for (int r = 0; r < 33; ++r) {
    m.rows.push_back({0, 0, 0, 0});
    m.names.push_back("m" + std::to_string(r));
  }
  const std::uint32_t thresholds[] = {0};
  CHECK_THROWS_WITH_AS(
      ens::enumerate_subsets(m, SubsetFamily::parse("all"), thresholds),
      doctest::Contains("sampl"), hvc::ConfigError);
}

TEST_CASE("sampling is deterministic and self-consistent") {
  auto m = testutil::random_matrix(9, 60, 0.8, 9);
  const std::uint32_t thresholds[] = {0, 8000};
  auto fam = SubsetFamily::parse("ge2");
  auto a = ens::sample_subsets(m, fam, thresholds, 500, 42);
  auto b = ens::sample_subsets(m, fam, thresholds, 500, 42);
  CHECK_FALSE(a.exact);
  CHECK(a.counts == b.counts);
  CHECK(a.histogram == b.histogram);
  CHECK(a.scale == b.scale);
  // 500 draws scaled by family-size/draws estimates the family size.
  double family_size = (1u << 9) - 1 - 9;
  CHECK(a.scale == doctest::Approx(family_size / 500.0));
  CHECK(static_cast<double>(a.counts[0]) ==
        doctest::Approx(family_size).epsilon(0.01));

  auto c = ens::sample_subsets(m, fam, thresholds, 500, 43);
  CHECK(c.subsets_enumerated == 500);
}

TEST_CASE("vote rejects empty or out-of-range model lists") {
  auto m = literal_matrix({1, 2}, {{1, 2}, {1, 2}});
  std::vector<int> none;
  CHECK_THROWS_AS(ens::majority_vote(m, none), hvc::ConfigError);
  std::vector<int> bad = {0, 2};
  CHECK_THROWS_AS(ens::majority_vote(m, bad), hvc::ConfigError);
  std::vector<int> neg = {-1};
  CHECK_THROWS_AS(ens::majority_vote(m, neg), hvc::ConfigError);
}

TEST_CASE("troublesome digit report") {
  // 3 models, 6 samples. Sample 2 is missed by all, sample 4 by two of
  // three, sample 5 by one; samples 0,1,3 are unanimous and correct.
  auto m = literal_matrix({0, 1, 2, 3, 4, 5},
                          {{0, 1, 7, 3, 9, 5},
                           {0, 1, 8, 3, 9, 5},
                           {0, 1, 9, 3, 4, 8}});
  auto rep = ens::troublesome_digits(m);
  CHECK(rep.model_count == 3);
  CHECK(rep.sample_count == 6);
  CHECK(rep.full_agreement == 3);  // samples 0, 1, 3 (sample 2 disagrees)
  REQUIRE(rep.correct_counts.size() == 6);
  CHECK(rep.correct_counts[0] == 3);
  CHECK(rep.correct_counts[2] == 0);
  CHECK(rep.correct_counts[4] == 1);
  CHECK(rep.correct_counts[5] == 2);

  REQUIRE(rep.misclassified_by_all.size() == 1);
  CHECK(rep.misclassified_by_all[0].index == 2);
  CHECK(rep.misclassified_by_all[0].label == 2);
  CHECK(rep.misclassified_by_all[0].correct_models == 0);

  REQUIRE(rep.misclassified_by_majority.size() == 2);
  CHECK(rep.misclassified_by_majority[0].index == 2);
  CHECK(rep.misclassified_by_majority[1].index == 4);
  CHECK(rep.misclassified_by_majority[1].correct_models == 1);
}

TEST_CASE("troublesome report on a perfect matrix is empty") {
  auto m = literal_matrix({1, 2, 3}, {{1, 2, 3}, {1, 2, 3}});
  auto rep = ens::troublesome_digits(m);
  CHECK(rep.full_agreement == 3);
  CHECK(rep.misclassified_by_all.empty());
  CHECK(rep.misclassified_by_majority.empty());
}

TEST_CASE("single wrong model leaves majority reports empty") {
  auto m = literal_matrix({1, 1, 1}, {{1, 1, 1}, {1, 1, 1}, {1, 1, 2}});
  auto rep = ens::troublesome_digits(m);
  CHECK(rep.full_agreement == 2);
  CHECK(rep.misclassified_by_all.empty());
  CHECK(rep.misclassified_by_majority.empty());
  CHECK(rep.correct_counts[2] == 2);
}
