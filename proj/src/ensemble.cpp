#include "hvc/ensemble.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "hvc/errors.hpp"
#include "hvc/parallel.hpp"
#include "hvc/rng.hpp"

namespace hvc::ensemble {

namespace {

void check_models(const PredictionMatrix& mat, std::span<const int> models) {
  if (models.empty())
    throw ConfigError("ensemble: need at least one model index");
  for (int idx : models)
    if (idx < 0 || static_cast<std::size_t>(idx) >= mat.models())
      throw ConfigError("ensemble: model index " + std::to_string(idx) +
                        " out of range [0," + std::to_string(mat.models()) +
                        ")");
}

std::uint8_t vote_one(const PredictionMatrix& mat,
                      std::span<const int> models, std::size_t sample,
                      TieBreak tie, std::vector<int>& cnt) {
  std::fill(cnt.begin(), cnt.end(), 0);
  for (int j : models) ++cnt[mat.rows[j][sample]];
  int best = 0;
  for (std::size_t c = 1; c < cnt.size(); ++c)
    if (cnt[c] > cnt[best]) best = static_cast<int>(c);
  if (tie == TieBreak::kLowestClass) {
    for (std::size_t c = 0; c < cnt.size(); ++c)
      if (cnt[c] == cnt[best]) return static_cast<std::uint8_t>(c);
  }
  for (int j : models)
    if (cnt[mat.rows[j][sample]] == cnt[best]) return mat.rows[j][sample];
  return static_cast<std::uint8_t>(best);
}

}  // namespace

std::vector<std::uint8_t> majority_vote(const PredictionMatrix& mat,
                                        std::span<const int> models,
                                        TieBreak tie) {
  check_models(mat, models);
  std::vector<std::uint8_t> out(mat.samples());
  std::vector<int> cnt(mat.classes);
  for (std::size_t i = 0; i < mat.samples(); ++i)
    out[i] = vote_one(mat, models, i, tie, cnt);
  return out;
}

double ensemble_accuracy(const PredictionMatrix& mat,
                         std::span<const int> models, TieBreak tie) {
  const auto preds = majority_vote(mat, models, tie);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < preds.size(); ++i)
    hit += preds[i] == mat.labels[i];
  return mat.samples() == 0 ? 0.0 : double(hit) / double(mat.samples());
}

bool SubsetFamily::contains(int size) const {
  if (size < 1) return false;
  switch (kind) {
    case Kind::kAll: return true;
    case Kind::kMinTwo: return size >= 2;
    case Kind::kOdd: return size % 2 == 1;
    case Kind::kRange: return size >= lo && size <= hi;
  }
  return false;
}

std::string SubsetFamily::describe() const {
  switch (kind) {
    case Kind::kAll: return "all";
    case Kind::kMinTwo: return "ge2";
    case Kind::kOdd: return "odd";
    case Kind::kRange:
      return "range:" + std::to_string(lo) + "-" + std::to_string(hi);
  }
  return "?";
}

SubsetFamily SubsetFamily::parse(const std::string& text) {
  SubsetFamily f;
  if (text == "all") {
    f.kind = Kind::kAll;
  } else if (text == "ge2") {
    f.kind = Kind::kMinTwo;
  } else if (text == "odd") {
    f.kind = Kind::kOdd;
  } else if (text.rfind("range:", 0) == 0) {
    f.kind = Kind::kRange;
    const auto dash = text.find('-', 6);
    if (dash == std::string::npos)
      throw ConfigError("subset family '" + text +
                        "' is not of the form range:<lo>-<hi>");
    const std::string lo_text = text.substr(6, dash - 6);
    const std::string hi_text = text.substr(dash + 1);
    std::size_t lo_used = 0, hi_used = 0;
    try {
      f.lo = std::stoi(lo_text, &lo_used);
      f.hi = std::stoi(hi_text, &hi_used);
    } catch (const std::exception&) {
      throw ConfigError("subset family '" + text +
                        "' is not of the form range:<lo>-<hi>");
    }
    if (lo_used != lo_text.size() || hi_used != hi_text.size())
      throw ConfigError("subset family '" + text +
                        "' is not of the form range:<lo>-<hi>");
    if (f.lo < 1 || f.hi < f.lo)
      throw ConfigError("subset family '" + text + "' has an empty range");
  } else {
    throw ConfigError("unknown subset family '" + text +
                      "' (expected all, ge2, odd, or range:<lo>-<hi>)");
  }
  return f;
}

std::uint32_t accuracy_units(double percent) {
  if (!(percent >= 0.0) || percent > 100.0)
    throw ConfigError("accuracy threshold " + std::to_string(percent) +
                      " outside [0,100]");
  return static_cast<std::uint32_t>(std::lround(percent * 100.0));
}

std::uint64_t min_correct(std::uint32_t units, std::uint64_t samples) {
  // ceil(units/10000 * samples)
  return (static_cast<std::uint64_t>(units) * samples + 9999) / 10000;
}

namespace {

// Shared, read-only view of the contested samples. Samples on which all
// k models agree are either always-correct (a constant added to every
// subset's score) or always-wrong (ignored); only the rest get per-subset
// bookkeeping.
struct Contested {
  std::size_t tracked = 0, padded = 0;
  std::uint64_t base_correct = 0;
  std::vector<std::uint8_t> label;               // [padded]
  std::vector<std::vector<std::uint8_t>> pred;   // [k][padded]
  std::vector<std::vector<std::uint8_t>> maskc;  // [k][padded], 1 = correct
  std::vector<std::vector<std::uint32_t>> wrong; // [k] contested positions

  Contested(const PredictionMatrix& mat) {
    const std::size_t k = mat.models(), n = mat.samples();
    std::vector<std::uint32_t> keep;
    for (std::size_t i = 0; i < n; ++i) {
      bool agree = true;
      for (std::size_t j = 1; j < k && agree; ++j)
        agree = mat.rows[j][i] == mat.rows[0][i];
      if (agree) {
        base_correct += mat.rows[0][i] == mat.labels[i];
      } else {
        keep.push_back(static_cast<std::uint32_t>(i));
      }
    }
    tracked = keep.size();
    padded = (tracked + 63) / 64 * 64;
    label.assign(padded, 0);
    pred.assign(k, std::vector<std::uint8_t>(padded, 0));
    maskc.assign(k, std::vector<std::uint8_t>(padded, 0));
    wrong.assign(k, {});
    for (std::size_t t = 0; t < tracked; ++t) {
      const std::uint32_t i = keep[t];
      label[t] = mat.labels[i];
      for (std::size_t j = 0; j < k; ++j) {
        pred[j][t] = mat.rows[j][i];
        if (mat.rows[j][i] == mat.labels[i])
          maskc[j][t] = 1;
        else
          wrong[j].push_back(static_cast<std::uint32_t>(t));
      }
    }
  }
};

// Per-worker incremental state under the lowest-class tie rule. For each
// tracked sample: cnt holds votes for classes other than the label, t is
// the winning threshold those votes imply, diff = (votes for label) - t.
// The sample is correct for the current subset iff diff >= 0. Toggling a
// model adds/removes 1 vote: on samples it gets right only diff moves
// (a dense, vectorizable pass); on samples it gets wrong only t can move
// (sparse recompute via its wrong-list).
struct VoteState {
  const Contested& cs;
  std::uint32_t classes;
  std::vector<std::uint8_t> cnt;  // [tracked * classes], non-label votes
  std::vector<std::uint8_t> t;    // [padded]
  std::vector<std::int8_t> diff;  // [padded], pad slots stay very negative
  std::uint64_t correct = 0;

  VoteState(const Contested& c, std::uint32_t m)
      : cs(c), classes(m), cnt(c.tracked * m, 0), t(c.padded, 0),
        diff(c.padded, -100) {}

  void refresh_sample(std::size_t i, int cv) {
    const std::uint8_t l = cs.label[i];
    const std::uint8_t* c = cnt.data() + i * classes;
    int best = -1, cstar = 0;
    for (std::uint32_t cc = 0; cc < classes; ++cc) {
      if (cc == l) continue;
      if (int(c[cc]) > best) {
        best = c[cc];
        cstar = int(cc);
      }
    }
    const int tt = best + (int(l) > cstar ? 1 : 0);
    t[i] = static_cast<std::uint8_t>(tt);
    diff[i] = static_cast<std::int8_t>(cv - tt);
  }

  // Rebuild from scratch for the subset in `mask`.
  void reset(std::uint32_t mask) {
    std::fill(cnt.begin(), cnt.end(), 0);
    std::fill(diff.begin(), diff.end(), std::int8_t(-100));
    correct = 0;
    for (std::size_t i = 0; i < cs.tracked; ++i) {
      int cv = 0;
      for (std::uint32_t j = 0; j < cs.pred.size(); ++j) {
        if (!(mask >> j & 1u)) continue;
        const std::uint8_t p = cs.pred[j][i];
        if (p == cs.label[i]) ++cv;
        else ++cnt[i * classes + p];
      }
      refresh_sample(i, cv);
      correct += diff[i] >= 0;
    }
  }

  void toggle(std::uint32_t j, bool insert) {
    const std::uint8_t* __restrict mk = cs.maskc[j].data();
    std::int8_t* __restrict df = diff.data();
    const std::size_t padded = cs.padded;
    std::uint32_t flips = 0;
    if (insert) {
      for (std::size_t i = 0; i < padded; ++i) {
        flips += std::uint32_t(mk[i] & std::uint8_t(df[i] == -1));
        df[i] = static_cast<std::int8_t>(df[i] + mk[i]);
      }
      correct += flips;
    } else {
      for (std::size_t i = 0; i < padded; ++i) {
        flips += std::uint32_t(mk[i] & std::uint8_t(df[i] == 0));
        df[i] = static_cast<std::int8_t>(df[i] - mk[i]);
      }
      correct -= flips;
    }
    const std::uint8_t* pj = cs.pred[j].data();
    for (std::uint32_t i : cs.wrong[j]) {
      const bool was = diff[i] >= 0;
      std::uint8_t* c = cnt.data() + std::size_t(i) * classes;
      if (insert) ++c[pj[i]];
      else --c[pj[i]];
      const int cv = int(diff[i]) + int(t[i]);
      refresh_sample(i, cv);
      const bool now = diff[i] >= 0;
      correct += int(now) - int(was);
    }
  }
};

// Naive per-subset evaluation over the contested samples (first-model
// tie rule has no incremental form).
std::uint64_t eval_subset_naive(const Contested& cs, std::uint32_t classes,
                                std::uint32_t mask, TieBreak tie,
                                std::vector<int>& cnt) {
  std::uint64_t correct = 0;
  const std::uint32_t k = static_cast<std::uint32_t>(cs.pred.size());
  for (std::size_t i = 0; i < cs.tracked; ++i) {
    std::fill(cnt.begin(), cnt.end(), 0);
    for (std::uint32_t j = 0; j < k; ++j)
      if (mask >> j & 1u) ++cnt[cs.pred[j][i]];
    int best = 0;
    for (std::uint32_t c = 1; c < classes; ++c)
      if (cnt[c] > cnt[best]) best = int(c);
    std::uint8_t winner = 0;
    if (tie == TieBreak::kLowestClass) {
      for (std::uint32_t c = 0; c < classes; ++c)
        if (cnt[c] == cnt[best]) {
          winner = static_cast<std::uint8_t>(c);
          break;
        }
    } else {
      for (std::uint32_t j = 0; j < k; ++j)
        if ((mask >> j & 1u) && cnt[cs.pred[j][i]] == cnt[best]) {
          winner = cs.pred[j][i];
          break;
        }
    }
    correct += winner == cs.label[i];
  }
  return correct;
}

}  // namespace

SubsetCountReport enumerate_subsets(const PredictionMatrix& mat,
                                    const SubsetFamily& family,
                                    std::span<const std::uint32_t> thresholds,
                                    TieBreak tie, int threads) {
  mat.validate();
  const std::size_t k = mat.models();
  if (k == 0) throw ConfigError("enumerate_subsets: matrix has no models");
  if (k > 32)
    throw ConfigError("enumerate_subsets: " + std::to_string(k) +
                      " models exceeds the exhaustive limit of 32; use the "
                      "sampling mode (--sample) instead");
  const std::uint64_t n = mat.samples();
  const Contested cs(mat);

  // Split the subset space by high-bit prefix; each worker walks the low
  // bits of its chunks in Gray-code order.
  const std::uint32_t low_bits =
      static_cast<std::uint32_t>(std::min<std::size_t>(k, 18));
  const std::uint32_t chunks = 1u << (k - low_bits);
  const std::uint64_t walk = 1ull << low_bits;

  const int workers = plan_threads(chunks, threads);
  std::vector<std::vector<std::uint64_t>> hist(
      workers, std::vector<std::uint64_t>(n + 1, 0));
  std::vector<std::uint64_t> enumerated(workers, 0);

  parallel_for(
      chunks,
      [&](std::size_t c0, std::size_t c1, int wkr) {
        auto& h = hist[wkr];
        std::uint64_t& cnt_enum = enumerated[wkr];
        VoteState state(cs, mat.classes);
        std::vector<int> scratch(mat.classes);
        for (std::size_t chunk = c0; chunk < c1; ++chunk) {
          const std::uint32_t high = static_cast<std::uint32_t>(chunk)
                                     << low_bits;
          std::uint32_t mask = high;
          int size = std::popcount(high);
          const bool fast = tie == TieBreak::kLowestClass;
          if (fast) state.reset(mask);
          auto visit = [&] {
            if (size >= 1 && family.contains(size)) {
              const std::uint64_t correct =
                  fast ? cs.base_correct + state.correct
                       : cs.base_correct +
                             eval_subset_naive(cs, mat.classes, mask, tie,
                                               scratch);
              ++h[correct];
              ++cnt_enum;
            }
          };
          visit();
          for (std::uint64_t step = 1; step < walk; ++step) {
            const std::uint32_t j =
                static_cast<std::uint32_t>(std::countr_zero(step));
            mask ^= 1u << j;
            const bool insert = (mask >> j) & 1u;
            size += insert ? 1 : -1;
            if (fast) state.toggle(j, insert);
            visit();
          }
        }
      },
      threads);

  SubsetCountReport rep;
  rep.family = family.describe();
  rep.tie_break = tie == TieBreak::kLowestClass ? "lowest-class" : "first-model";
  rep.model_count = static_cast<std::uint32_t>(k);
  rep.sample_count = n;
  rep.histogram.assign(n + 1, 0);
  for (int w = 0; w < workers; ++w) {
    rep.subsets_enumerated += enumerated[w];
    for (std::size_t i = 0; i <= n; ++i) rep.histogram[i] += hist[w][i];
  }
  rep.thresholds.assign(thresholds.begin(), thresholds.end());
  for (std::uint32_t u : rep.thresholds) {
    const std::uint64_t need = min_correct(u, n);
    std::uint64_t count = 0;
    for (std::size_t c = need; c <= n; ++c) count += rep.histogram[c];
    rep.counts.push_back(count);
  }
  return rep;
}

SubsetCountReport sample_subsets(const PredictionMatrix& mat,
                                 const SubsetFamily& family,
                                 std::span<const std::uint32_t> thresholds,
                                 std::uint64_t draws, std::uint64_t seed,
                                 TieBreak tie) {
  mat.validate();
  const std::size_t k = mat.models();
  if (k == 0 || k > 63)
    throw ConfigError("sample_subsets: model count " + std::to_string(k) +
                      " outside [1,63]");
  if (draws == 0) throw ConfigError("sample_subsets: zero draws");
  const std::uint64_t n = mat.samples();
  const Contested cs(mat);

  // Family size for the expansion factor.
  long double family_size = 0;
  {
    long double binom = 1;  // C(k,0)
    for (std::size_t s = 1; s <= k; ++s) {
      binom = binom * (long double)(k - s + 1) / (long double)s;
      if (family.contains(static_cast<int>(s))) family_size += binom;
    }
  }
  if (family_size <= 0)
    throw ConfigError("sample_subsets: family contains no subsets");

  std::vector<std::uint64_t> hist(n + 1, 0);
  Rng rng = Rng::stream(seed, {0xe5u});
  std::vector<int> scratch(mat.classes);
  const std::uint64_t full = k == 63 ? ~0ull : (1ull << k) - 1;
  for (std::uint64_t d = 0; d < draws; ++d) {
    std::uint64_t mask;
    do {
      mask = rng.next_u64() & full;
    } while (!family.contains(std::popcount(mask)));
    // Naive evaluation; sampling targets large k where the exact walk is
    // out of reach anyway.
    std::uint64_t correct = cs.base_correct;
    for (std::size_t i = 0; i < cs.tracked; ++i) {
      std::fill(scratch.begin(), scratch.end(), 0);
      for (std::size_t j = 0; j < k; ++j)
        if (mask >> j & 1ull) ++scratch[cs.pred[j][i]];
      int best = 0;
      for (std::uint32_t c = 1; c < mat.classes; ++c)
        if (scratch[c] > scratch[best]) best = int(c);
      std::uint8_t winner = 0;
      if (tie == TieBreak::kLowestClass) {
        for (std::uint32_t c = 0; c < mat.classes; ++c)
          if (scratch[c] == scratch[best]) {
            winner = static_cast<std::uint8_t>(c);
            break;
          }
      } else {
        for (std::size_t j = 0; j < k; ++j)
          if ((mask >> j & 1ull) &&
              scratch[cs.pred[j][i]] == scratch[best]) {
            winner = cs.pred[j][i];
            break;
          }
      }
      correct += winner == cs.label[i];
    }
    ++hist[correct];
  }

  SubsetCountReport rep;
  rep.family = family.describe();
  rep.tie_break = tie == TieBreak::kLowestClass ? "lowest-class" : "first-model";
  rep.model_count = static_cast<std::uint32_t>(k);
  rep.sample_count = n;
  rep.subsets_enumerated = draws;
  rep.exact = false;
  rep.scale = static_cast<double>(family_size / (long double)draws);
  rep.histogram = std::move(hist);
  rep.thresholds.assign(thresholds.begin(), thresholds.end());
  for (std::uint32_t u : rep.thresholds) {
    const std::uint64_t need = min_correct(u, n);
    std::uint64_t count = 0;
    for (std::size_t c = need; c <= n; ++c) count += rep.histogram[c];
    rep.counts.push_back(
        static_cast<std::uint64_t>(std::llround(double(count) * rep.scale)));
  }
  return rep;
}

TroublesomeReport troublesome_digits(const PredictionMatrix& mat) {
  mat.validate();
  const std::size_t k = mat.models(), n = mat.samples();
  if (k == 0) throw ConfigError("troublesome_digits: matrix has no models");
  TroublesomeReport rep;
  rep.model_count = static_cast<std::uint32_t>(k);
  rep.sample_count = n;
  rep.correct_counts.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t correct = 0;
    bool agree = true;
    for (std::size_t j = 0; j < k; ++j) {
      correct += mat.rows[j][i] == mat.labels[i];
      agree = agree && mat.rows[j][i] == mat.rows[0][i];
    }
    rep.correct_counts[i] = correct;
    rep.full_agreement += agree;
    const TroublesomeReport::Item item{static_cast<std::uint32_t>(i),
                                       mat.labels[i], correct};
    if (correct == 0) rep.misclassified_by_all.push_back(item);
    if (std::uint64_t(correct) * 2 < k)
      rep.misclassified_by_majority.push_back(item);
  }
  return rep;
}

}  // namespace hvc::ensemble
