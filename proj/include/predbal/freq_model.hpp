#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "predbal/dataset.hpp"
#include "predbal/errors.hpp"

namespace predbal {

// Count-based baseline: predicts predicate log-probabilities from the
// (subject-class, object-class) pair. Immutable after fit.
class FreqModel {
 public:
  static FreqModel fit(const Dataset& train, double epsilon) {
    if (train.empty()) throw EmptyDataset("cannot fit frequency model on an empty dataset");
    if (epsilon < 0) throw ConfigError("smoothing epsilon must be non-negative");
    FreqModel m;
    m.s_ = train.objects().size();
    m.k_ = train.predicates().size();
    m.eps_ = epsilon;
    for (const Triplet& t : train.triplets()) {
      auto& counts = m.table_[pair_key(t.subj, t.obj)];
      if (counts.empty()) counts.assign(static_cast<std::size_t>(m.k_), 0);
      ++counts[static_cast<std::size_t>(t.pred)];
    }
    return m;
  }

  int object_classes() const { return s_; }
  int k() const { return k_; }
  double epsilon() const { return eps_; }

  // Pair counts; empty span means the pair was never observed.
  std::span<const std::int64_t> pair_counts(int subj, int obj) const {
    check_ids(subj, obj);
    auto it = table_.find(pair_key(subj, obj));
    if (it == table_.end()) return {};
    return it->second;
  }

  // scores[k] = log((count_k + eps) / (pair_total + eps*K)). For eps = 0,
  // predicates unseen at the pair get (min finite score over the pair) - 40
  // so downstream matrix products stay finite; a fully unseen pair scores
  // uniform log(1/K).
  std::vector<double> predict_logits(int subj, int obj) const {
    check_ids(subj, obj);
    std::vector<double> scores(static_cast<std::size_t>(k_));
    auto it = table_.find(pair_key(subj, obj));
    std::int64_t total = 0;
    if (it != table_.end())
      for (std::int64_t c : it->second) total += c;
    const double denom = static_cast<double>(total) + eps_ * static_cast<double>(k_);
    if (denom <= 0.0) {
      const double uniform = -std::log(static_cast<double>(k_));
      std::fill(scores.begin(), scores.end(), uniform);
      return scores;
    }
    if (eps_ > 0.0) {
      for (int p = 0; p < k_; ++p) {
        const auto c = it == table_.end() ? 0 : it->second[static_cast<std::size_t>(p)];
        scores[static_cast<std::size_t>(p)] = std::log((static_cast<double>(c) + eps_) / denom);
      }
      return scores;
    }
    double min_finite = 0.0;
    for (int p = 0; p < k_; ++p) {
      const auto c = it == table_.end() ? 0 : it->second[static_cast<std::size_t>(p)];
      if (c > 0) {
        scores[static_cast<std::size_t>(p)] = std::log(static_cast<double>(c) / denom);
        min_finite = std::min(min_finite, scores[static_cast<std::size_t>(p)]);
      } else {
        scores[static_cast<std::size_t>(p)] = std::numeric_limits<double>::quiet_NaN();
      }
    }
    const double sentinel = min_finite - 40.0;
    for (double& v : scores)
      if (std::isnan(v)) v = sentinel;
    return scores;
  }

  // Hard argmax of the pair's counts; ties break toward the lower id.
  int predict(int subj, int obj) const {
    const auto scores = predict_logits(subj, obj);
    return static_cast<int>(std::max_element(scores.begin(), scores.end()) - scores.begin());
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["format"] = "predbal/freq_model";
    j["object_classes"] = s_;
    j["predicates"] = k_;
    j["epsilon"] = eps_;
    auto& pairs = j["pairs"] = nlohmann::ordered_json::array();
    for (const auto& [key, counts] : table_) {
      nlohmann::ordered_json entry;
      entry["subj"] = static_cast<int>(key >> 32);
      entry["obj"] = static_cast<int>(key & 0xffffffffULL);
      entry["counts"] = counts;
      pairs.push_back(std::move(entry));
    }
    return j;
  }

  static FreqModel from_json(const nlohmann::json& j) {
    if (!j.is_object() || j.value("format", "") != "predbal/freq_model")
      throw DataError("not a frequency model document");
    FreqModel m;
    m.s_ = j.at("object_classes").get<int>();
    m.k_ = j.at("predicates").get<int>();
    m.eps_ = j.at("epsilon").get<double>();
    for (const auto& entry : j.at("pairs")) {
      const int subj = entry.at("subj").get<int>();
      const int obj = entry.at("obj").get<int>();
      auto counts = entry.at("counts").get<std::vector<std::int64_t>>();
      if (static_cast<int>(counts.size()) != m.k_)
        throw DataError("frequency model count vector has wrong length");
      m.table_[pair_key(subj, obj)] = std::move(counts);
    }
    return m;
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write frequency model: " + path);
    out << to_json().dump(2) << "\n";
  }

  static FreqModel load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open frequency model: " + path);
    nlohmann::json j;
    in >> j;
    return from_json(j);
  }

 private:
  static std::uint64_t pair_key(int subj, int obj) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(subj)) << 32) |
           static_cast<std::uint32_t>(obj);
  }

  void check_ids(int subj, int obj) const {
    if (subj < 0 || subj >= s_ || obj < 0 || obj >= s_)
      throw InvalidId("object id out of range for frequency model");
  }

  int s_ = 0;
  int k_ = 0;
  double eps_ = 1.0;
  std::map<std::uint64_t, std::vector<std::int64_t>> table_;  // ordered for stable serialization
};

}  // namespace predbal
