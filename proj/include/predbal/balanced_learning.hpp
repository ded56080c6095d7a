#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "predbal/dataset.hpp"
#include "predbal/errors.hpp"
#include "predbal/rng.hpp"
#include "predbal/scorer.hpp"

namespace predbal {

// Per-predicate information content I(z) = -log_base(count_z / total).
// Zero-count predicates get the largest finite IC plus one so sorts stay
// total and unseen classes land on the informative side.
struct ICTable {
  std::string source_name;
  double base = 2.0;
  std::vector<double> ic;
  std::vector<std::int64_t> counts;
  std::int64_t total = 0;

  int k() const { return static_cast<int>(ic.size()); }
};

inline ICTable information_content(const FrequencyTable& freq, double base = 2.0) {
  if (!(base > 1.0)) throw InvalidBase("information content base must be > 1");
  if (freq.total <= 0) throw EmptyDataset("frequency table has no observations");
  ICTable t;
  t.source_name = freq.source_name;
  t.base = base;
  t.counts = freq.counts;
  t.total = freq.total;
  t.ic.resize(freq.counts.size());
  const double log_base = std::log(base);
  double max_finite = 0.0;
  bool any_zero = false;
  for (std::size_t i = 0; i < freq.counts.size(); ++i) {
    if (freq.counts[i] > 0) {
      t.ic[i] = -std::log(static_cast<double>(freq.counts[i]) / static_cast<double>(freq.total)) /
                log_base;
      max_finite = std::max(max_finite, t.ic[i]);
    } else {
      any_zero = true;
    }
  }
  if (any_zero) {
    const double surrogate = max_finite + 1.0;
    for (std::size_t i = 0; i < freq.counts.size(); ++i)
      if (freq.counts[i] == 0) t.ic[i] = surrogate;
  }
  return t;
}

enum class SamplingStrategy { Random, Confidence };

inline SamplingStrategy strategy_from_string(const std::string& s) {
  if (s == "random") return SamplingStrategy::Random;
  if (s == "confidence") return SamplingStrategy::Confidence;
  throw ConfigError("unknown undersampling strategy: " + s + " (expected random|confidence)");
}

inline const char* to_string(SamplingStrategy s) {
  return s == SamplingStrategy::Random ? "random" : "confidence";
}

// The common/informative split plus the undersampling policy for target-domain
// construction: the M lowest-IC predicates are common and capped at N samples
// each, everything else is informative and kept in full.
struct DomainSpec {
  std::vector<int> common;       // ordered by ascending IC
  std::vector<int> informative;  // ascending id
  int m = 0;
  std::int64_t n = 0;
  SamplingStrategy strategy = SamplingStrategy::Random;
  std::uint64_t seed = 0;

  bool is_common(int pred) const {
    return std::find(common.begin(), common.end(), pred) != common.end();
  }

  nlohmann::ordered_json to_json(const PredicateVocab& predicates) const {
    nlohmann::ordered_json j;
    j["m"] = m;
    j["n"] = n;
    j["strategy"] = to_string(strategy);
    j["seed"] = seed;
    auto names_of = [&](const std::vector<int>& ids) {
      nlohmann::ordered_json arr = nlohmann::ordered_json::array();
      for (int id : ids) arr.push_back(predicates.name(id));
      return arr;
    };
    j["common"] = names_of(common);
    j["informative"] = names_of(informative);
    return j;
  }
};

// Sorts predicates by ascending information content; ties break toward the
// higher raw count, then the lower id.
inline DomainSpec partition(const ICTable& ic, int m) {
  const int k = ic.k();
  if (m < 1 || m >= k) throw InvalidM("m must lie in [1, K)");
  std::vector<int> order(static_cast<std::size_t>(k));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const auto ia = static_cast<std::size_t>(a);
    const auto ib = static_cast<std::size_t>(b);
    if (ic.ic[ia] != ic.ic[ib]) return ic.ic[ia] < ic.ic[ib];
    if (ic.counts[ia] != ic.counts[ib]) return ic.counts[ia] > ic.counts[ib];
    return a < b;
  });
  DomainSpec spec;
  spec.m = m;
  spec.common.assign(order.begin(), order.begin() + m);
  spec.informative.assign(order.begin() + m, order.end());
  std::sort(spec.informative.begin(), spec.informative.end());
  return spec;
}

// Separation undersampling: every informative-labeled triplet moves to the
// target unchanged; each common predicate keeps min(N, count) samples, chosen
// uniformly at random under spec.seed or by descending model confidence
// (ties toward the lower sample index).
inline Dataset build_target_domain(const Dataset& train, const DomainSpec& spec,
                                   const Scorer* model = nullptr) {
  if (spec.common.empty() || spec.m <= 0 || spec.n <= 0)
    throw EmptySpec("domain spec is incomplete");
  if (spec.strategy == SamplingStrategy::Confidence && model == nullptr)
    throw MissingModel("confidence undersampling requires a stage-1 model");
  if (train.empty()) throw EmptyDataset("cannot build a target domain from an empty dataset");

  const int k = train.predicates().size();
  std::vector<char> common_mask(static_cast<std::size_t>(k), 0);
  for (int id : spec.common) common_mask[static_cast<std::size_t>(id)] = 1;

  // sample indexes per common predicate, in input order
  std::vector<std::vector<std::size_t>> by_common(static_cast<std::size_t>(k));
  const auto& triplets = train.triplets();
  for (std::size_t i = 0; i < triplets.size(); ++i)
    if (common_mask[static_cast<std::size_t>(triplets[i].pred)])
      by_common[static_cast<std::size_t>(triplets[i].pred)].push_back(i);

  std::vector<char> keep(triplets.size(), 1);
  for (int pred : spec.common) {
    auto& idx = by_common[static_cast<std::size_t>(pred)];
    if (static_cast<std::int64_t>(idx.size()) <= spec.n) continue;
    if (spec.strategy == SamplingStrategy::Random) {
      Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(pred)));
      rng.shuffle(idx);
    } else {
      std::vector<double> conf(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) {
        const Triplet& t = triplets[idx[i]];
        conf[i] = model->probabilities(t.subj, t.obj)[static_cast<std::size_t>(pred)];
      }
      std::vector<std::size_t> rank(idx.size());
      std::iota(rank.begin(), rank.end(), 0);
      std::stable_sort(rank.begin(), rank.end(), [&](std::size_t a, std::size_t b) {
        if (conf[a] != conf[b]) return conf[a] > conf[b];
        return idx[a] < idx[b];
      });
      std::vector<std::size_t> reordered(idx.size());
      for (std::size_t i = 0; i < rank.size(); ++i) reordered[i] = idx[rank[i]];
      idx = std::move(reordered);
    }
    for (std::size_t i = static_cast<std::size_t>(spec.n); i < idx.size(); ++i) keep[idx[i]] = 0;
  }

  std::vector<Triplet> kept;
  for (std::size_t i = 0; i < triplets.size(); ++i)
    if (keep[i]) kept.push_back(triplets[i]);
  return Dataset(train.objects(), train.predicates(), std::move(kept), train.tag() + "/target");
}

}  // namespace predbal
