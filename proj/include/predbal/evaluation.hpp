#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "predbal/balanced_learning.hpp"
#include "predbal/dataset.hpp"
#include "predbal/errors.hpp"
#include "predbal/scorer.hpp"
#include "predbal/semantic_adjustment.hpp"

namespace predbal {

// Per-image ranked predictions under the graph constraint: one predicate per
// (subject, object) pair, pairs sorted by descending confidence with ties by
// input order.
struct RankedPrediction {
  struct Entry {
    int subj = 0;
    int obj = 0;
    int pred = 0;          // argmax of the pair's score vector
    double confidence = 0; // softmax probability of pred
    std::size_t pair_index = 0;
  };
  std::int64_t image_id = 0;
  std::vector<Entry> entries;
};

inline RankedPrediction rank_triplets(const Scorer& scorer,
                                      std::span<const Triplet> image_pairs,
                                      std::int64_t image_id) {
  if (image_pairs.empty()) throw EmptyImage("image has no pairs to rank");
  RankedPrediction ranked;
  ranked.image_id = image_id;
  ranked.entries.reserve(image_pairs.size());
  for (std::size_t i = 0; i < image_pairs.size(); ++i) {
    const Triplet& pair = image_pairs[i];
    const auto p = scorer.probabilities(pair.subj, pair.obj);
    const auto best = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
    ranked.entries.push_back(
        {pair.subj, pair.obj, best, p[static_cast<std::size_t>(best)], i});
  }
  std::stable_sort(ranked.entries.begin(), ranked.entries.end(),
                   [](const RankedPrediction::Entry& a, const RankedPrediction::Entry& b) {
                     return a.confidence > b.confidence;
                   });
  return ranked;
}

// |top-K intersect gold| / |gold|, matching on (subj, obj, pred) exactly.
inline double recall_at_k(const RankedPrediction& ranked, std::span<const Triplet> gold, int k) {
  if (k < 1) throw ConfigError("recall K must be at least 1");
  if (gold.empty()) throw NoGold("image has no gold triplets");
  const std::size_t cutoff = std::min(ranked.entries.size(), static_cast<std::size_t>(k));
  std::int64_t hits = 0;
  for (const Triplet& g : gold) {
    for (std::size_t i = 0; i < cutoff; ++i) {
      const auto& e = ranked.entries[i];
      if (e.subj == g.subj && e.obj == g.obj && e.pred == g.pred) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(gold.size());
}

// Evaluation over a dataset for several K cutoffs at once.
struct EvalResult {
  std::vector<int> ks;
  std::vector<double> recall;                        // R@K per cutoff
  std::vector<double> mean_recall;                   // mR@K per cutoff
  std::vector<std::vector<double>> per_pred_recall;  // [cutoff][predicate]
  std::vector<char> present;                         // predicate has >= 1 gold instance
  std::vector<std::int64_t> gold_counts;             // per predicate
  ConfusionMatrix confusion;                         // gold vs argmax, all pairs
  std::int64_t images = 0;
};

// Aggregation is a deterministic fold in ascending image-id order.
inline EvalResult evaluate(const Scorer& scorer, const Dataset& test, std::span<const int> ks) {
  if (test.empty()) throw EmptyDataset("cannot evaluate on an empty dataset");
  if (scorer.k() != test.predicates().size())
    throw VocabMismatch("scorer predicate count does not match dataset vocab");
  const int k_pred = test.predicates().size();
  EvalResult r;
  r.ks.assign(ks.begin(), ks.end());
  for (int k : r.ks)
    if (k < 1) throw ConfigError("recall K must be at least 1");
  r.recall.assign(r.ks.size(), 0.0);
  r.mean_recall.assign(r.ks.size(), 0.0);
  r.per_pred_recall.assign(r.ks.size(),
                           std::vector<double>(static_cast<std::size_t>(k_pred), 0.0));
  r.present.assign(static_cast<std::size_t>(k_pred), 0);
  r.gold_counts.assign(static_cast<std::size_t>(k_pred), 0);
  r.confusion.k = k_pred;
  r.confusion.counts.assign(
      static_cast<std::size_t>(k_pred) * static_cast<std::size_t>(k_pred), 0);

  std::vector<const ImageRange*> order;
  order.reserve(test.image_count());
  for (const auto& img : test.images()) order.push_back(&img);
  std::sort(order.begin(), order.end(),
            [](const ImageRange* a, const ImageRange* b) { return a->image_id < b->image_id; });

  std::vector<std::vector<std::int64_t>> matched(
      r.ks.size(), std::vector<std::int64_t>(static_cast<std::size_t>(k_pred), 0));

  for (const ImageRange* img : order) {
    const auto gold = test.image_triplets(*img);
    const RankedPrediction ranked = rank_triplets(scorer, gold, img->image_id);
    for (const auto& e : ranked.entries)
      ++r.confusion.at(gold[e.pair_index].pred, e.pred);
    for (const Triplet& g : gold) ++r.gold_counts[static_cast<std::size_t>(g.pred)];
    for (std::size_t ki = 0; ki < r.ks.size(); ++ki) {
      const std::size_t cutoff =
          std::min(ranked.entries.size(), static_cast<std::size_t>(r.ks[ki]));
      std::int64_t hits = 0;
      for (std::size_t i = 0; i < cutoff; ++i) {
        const auto& e = ranked.entries[i];
        if (gold[e.pair_index].pred == e.pred) {
          ++hits;
          ++matched[ki][static_cast<std::size_t>(e.pred)];
        }
      }
      r.recall[ki] += static_cast<double>(hits) / static_cast<double>(gold.size());
    }
    ++r.images;
  }

  for (int p = 0; p < k_pred; ++p)
    if (r.gold_counts[static_cast<std::size_t>(p)] > 0) r.present[static_cast<std::size_t>(p)] = 1;

  for (std::size_t ki = 0; ki < r.ks.size(); ++ki) {
    r.recall[ki] /= static_cast<double>(r.images);
    double sum = 0.0;
    int present_count = 0;
    for (int p = 0; p < k_pred; ++p) {
      const auto pi = static_cast<std::size_t>(p);
      if (!r.present[pi]) continue;
      r.per_pred_recall[ki][pi] =
          static_cast<double>(matched[ki][pi]) / static_cast<double>(r.gold_counts[pi]);
      sum += r.per_pred_recall[ki][pi];
      ++present_count;
    }
    r.mean_recall[ki] = present_count > 0 ? sum / static_cast<double>(present_count) : 0.0;
  }
  return r;
}

// mR@K from a per-predicate recall vector, exposed to match the aggregation
// in evaluate() for callers that fold their own hit counts.
inline double mean_recall(std::span<const double> per_pred_recall, std::span<const char> present) {
  double sum = 0.0;
  int count = 0;
  for (std::size_t i = 0; i < per_pred_recall.size(); ++i) {
    if (!present[i]) continue;
    sum += per_pred_recall[i];
    ++count;
  }
  return count > 0 ? sum / static_cast<double>(count) : 0.0;
}

// Mean over present predicates of recall * information content.
inline double mric(std::span<const double> per_pred_recall, std::span<const char> present,
                   const ICTable& ic) {
  if (per_pred_recall.size() != ic.ic.size() || present.size() != ic.ic.size())
    throw VocabMismatch("information-content table does not match the recall vector");
  double sum = 0.0;
  int count = 0;
  for (std::size_t i = 0; i < per_pred_recall.size(); ++i) {
    if (!present[i]) continue;
    sum += per_pred_recall[i] * ic.ic[i];
    ++count;
  }
  return count > 0 ? sum / static_cast<double>(count) : 0.0;
}

// Ascending-IC predicate ordering for confusion heatmap exports.
inline std::vector<int> ic_order(const ICTable& ic) {
  std::vector<int> order(ic.ic.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const auto ia = static_cast<std::size_t>(a);
    const auto ib = static_cast<std::size_t>(b);
    if (ic.ic[ia] != ic.ic[ib]) return ic.ic[ia] < ic.ic[ib];
    return a < b;
  });
  return order;
}

// Gold-vs-argmax confusion over every pair of the dataset, exported with rows
// and columns ordered by ascending information content.
inline ConfusionMatrix export_confusion(const Scorer& scorer, const Dataset& ds,
                                        const ICTable& ic, const std::string& csv_path) {
  if (ds.empty()) throw EmptyDataset("cannot export a confusion matrix for an empty dataset");
  const int k = ds.predicates().size();
  ConfusionMatrix m;
  m.k = k;
  m.counts.assign(static_cast<std::size_t>(k) * static_cast<std::size_t>(k), 0);
  for (const Triplet& t : ds.triplets()) ++m.at(t.pred, scorer.predict(t.subj, t.obj));
  const auto order = ic_order(ic);
  write_confusion_csv(csv_path, m, ds.predicates().names(), order);
  return m;
}

}  // namespace predbal
