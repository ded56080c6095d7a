#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "predbal/errors.hpp"
#include "predbal/hash.hpp"
#include "predbal/vocab.hpp"

namespace predbal {

// Entry (k, l) counts samples labeled k but predicted l.
struct ConfusionMatrix {
  int k = 0;
  std::vector<std::int64_t> counts;  // row-major, k*k

  std::int64_t at(int gold, int pred) const {
    return counts[static_cast<std::size_t>(gold) * static_cast<std::size_t>(k) +
                  static_cast<std::size_t>(pred)];
  }
  std::int64_t& at(int gold, int pred) {
    return counts[static_cast<std::size_t>(gold) * static_cast<std::size_t>(k) +
                  static_cast<std::size_t>(pred)];
  }
  std::int64_t row_sum(int gold) const {
    std::int64_t sum = 0;
    for (int l = 0; l < k; ++l) sum += at(gold, l);
    return sum;
  }
  std::int64_t total() const {
    std::int64_t sum = 0;
    for (std::int64_t c : counts) sum += c;
    return sum;
  }
};

inline ConfusionMatrix build_confusion(std::span<const int> gold, std::span<const int> predicted,
                                       int k) {
  if (gold.size() != predicted.size())
    throw LengthMismatch("gold and predicted lists differ in length");
  if (gold.empty()) throw LengthMismatch("cannot build a confusion matrix from empty lists");
  ConfusionMatrix c;
  c.k = k;
  c.counts.assign(static_cast<std::size_t>(k) * static_cast<std::size_t>(k), 0);
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i] < 0 || gold[i] >= k || predicted[i] < 0 || predicted[i] >= k)
      throw InvalidId("predicate id out of range in confusion input");
    ++c.at(gold[i], predicted[i]);
  }
  return c;
}

// Each non-zero row is scaled to sum 1; a zero row becomes one-hot on the
// diagonal so a never-observed class passes through unadjusted.
inline std::vector<double> row_normalize(std::span<const double> m, int k) {
  if (m.size() != static_cast<std::size_t>(k) * static_cast<std::size_t>(k))
    throw ShapeMismatch("row_normalize expects a k*k matrix");
  std::vector<double> out(m.size(), 0.0);
  for (int r = 0; r < k; ++r) {
    double sum = 0.0;
    for (int c = 0; c < k; ++c) {
      const double v = m[static_cast<std::size_t>(r) * static_cast<std::size_t>(k) +
                         static_cast<std::size_t>(c)];
      if (v < 0) throw NegativeEntry("row_normalize input has a negative entry");
      sum += v;
    }
    if (sum == 0.0) {
      out[static_cast<std::size_t>(r) * static_cast<std::size_t>(k) + static_cast<std::size_t>(r)] =
          1.0;
      continue;
    }
    for (int c = 0; c < k; ++c) {
      const std::size_t i =
          static_cast<std::size_t>(r) * static_cast<std::size_t>(k) + static_cast<std::size_t>(c);
      out[i] = m[i] / sum;
    }
  }
  return out;
}

inline std::vector<double> row_normalize(const ConfusionMatrix& c) {
  std::vector<double> m(c.counts.size());
  std::transform(c.counts.begin(), c.counts.end(), m.begin(),
                 [](std::int64_t v) { return static_cast<double>(v); });
  return row_normalize(m, c.k);
}

// Row-stochastic transition between predicate labels; frozen after
// construction (no mutation API).
class TransitionMatrix {
 public:
  // values = row_normalize(c_prime + alpha * I). c_prime rows must already be
  // normalized (to 1e-6); alpha >= 0.
  static TransitionMatrix build(std::span<const double> c_prime, int k, double alpha,
                                std::string provenance) {
    if (alpha < 0 || !std::isfinite(alpha)) throw InvalidAlpha("alpha must be finite and >= 0");
    if (c_prime.size() != static_cast<std::size_t>(k) * static_cast<std::size_t>(k))
      throw ShapeMismatch("transition input must be a k*k matrix");
    for (int r = 0; r < k; ++r) {
      double sum = 0.0;
      for (int c = 0; c < k; ++c)
        sum += c_prime[static_cast<std::size_t>(r) * static_cast<std::size_t>(k) +
                       static_cast<std::size_t>(c)];
      if (std::abs(sum - 1.0) > 1e-6)
        throw ShapeMismatch("transition input row " + std::to_string(r) + " does not sum to 1");
    }
    std::vector<double> augmented(c_prime.begin(), c_prime.end());
    for (int r = 0; r < k; ++r)
      augmented[static_cast<std::size_t>(r) * static_cast<std::size_t>(k) +
                static_cast<std::size_t>(r)] += alpha;
    TransitionMatrix t;
    t.k_ = k;
    t.alpha_ = alpha;
    t.provenance_ = std::move(provenance);
    t.values_ = row_normalize(augmented, k);
    return t;
  }

  static TransitionMatrix identity(int k) {
    std::vector<double> eye(static_cast<std::size_t>(k) * static_cast<std::size_t>(k), 0.0);
    for (int i = 0; i < k; ++i)
      eye[static_cast<std::size_t>(i) * static_cast<std::size_t>(k) + static_cast<std::size_t>(i)] =
          1.0;
    return build(eye, k, 0.0, "identity");
  }

  int k() const { return k_; }
  double alpha() const { return alpha_; }
  const std::string& provenance() const { return provenance_; }
  std::span<const double> values() const { return values_; }
  double at(int row, int col) const {
    return values_[static_cast<std::size_t>(row) * static_cast<std::size_t>(k_) +
                   static_cast<std::size_t>(col)];
  }

  // Bitwise checksum over the values; constant across any training run that
  // consumes the matrix.
  std::uint64_t checksum() const { return fnv1a64_span(values_.data(), values_.size()); }

  nlohmann::ordered_json to_json(const PredicateVocab* predicates = nullptr) const {
    nlohmann::ordered_json j;
    j["format"] = "predbal/transition";
    j["k"] = k_;
    j["alpha"] = alpha_;
    j["provenance"] = provenance_;
    if (predicates) j["predicates"] = predicates->names();
    j["values"] = values_;
    return j;
  }

  static TransitionMatrix from_json(const nlohmann::json& j) {
    if (!j.is_object() || j.value("format", "") != "predbal/transition")
      throw DataError("not a transition matrix document");
    TransitionMatrix t;
    t.k_ = j.at("k").get<int>();
    t.alpha_ = j.at("alpha").get<double>();
    t.provenance_ = j.at("provenance").get<std::string>();
    t.values_ = j.at("values").get<std::vector<double>>();
    if (t.values_.size() != static_cast<std::size_t>(t.k_) * static_cast<std::size_t>(t.k_))
      throw DataError("transition matrix has wrong number of values");
    return t;
  }

  void save(const std::string& path, const PredicateVocab* predicates = nullptr) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write transition matrix: " + path);
    out << to_json(predicates).dump(2) << "\n";
  }

  static TransitionMatrix load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open transition matrix: " + path);
    nlohmann::json j;
    in >> j;
    return from_json(j);
  }

 private:
  TransitionMatrix() = default;
  int k_ = 0;
  double alpha_ = 0.0;
  std::string provenance_;
  std::vector<double> values_;
};

// Multiplication orientation for the adjustment. Rows (default): the adjusted
// score of label l gathers raw score from each label k in proportion to how
// often l-labeled samples are predicted as k, a[l] = sum_k T[l][k] z[k].
// Cols: the transposed product, a[l] = sum_k T[k][l] z[k].
enum class Orientation { Rows, Cols };

inline Orientation orientation_from_string(const std::string& s) {
  if (s == "rows") return Orientation::Rows;
  if (s == "cols") return Orientation::Cols;
  throw ConfigError("unknown adjustment orientation: " + s + " (expected rows|cols)");
}

inline const char* to_string(Orientation o) {
  return o == Orientation::Rows ? "rows" : "cols";
}

inline std::vector<double> apply_adjustment(std::span<const double> values, int k,
                                            std::span<const double> z,
                                            Orientation orientation = Orientation::Rows) {
  if (z.size() != static_cast<std::size_t>(k))
    throw ShapeMismatch("score vector length does not match transition size");
  for (double v : z)
    if (!std::isfinite(v)) throw NonFiniteInput("score vector has a non-finite entry");
  std::vector<double> a(static_cast<std::size_t>(k), 0.0);
  if (orientation == Orientation::Rows) {
    for (int l = 0; l < k; ++l) {
      double sum = 0.0;
      const std::size_t row = static_cast<std::size_t>(l) * static_cast<std::size_t>(k);
      for (int c = 0; c < k; ++c) sum += values[row + static_cast<std::size_t>(c)] * z[static_cast<std::size_t>(c)];
      a[static_cast<std::size_t>(l)] = sum;
    }
  } else {
    for (int r = 0; r < k; ++r) {
      const std::size_t row = static_cast<std::size_t>(r) * static_cast<std::size_t>(k);
      const double zr = z[static_cast<std::size_t>(r)];
      for (int c = 0; c < k; ++c) a[static_cast<std::size_t>(c)] += values[row + static_cast<std::size_t>(c)] * zr;
    }
  }
  return a;
}

inline std::vector<double> apply_adjustment(const TransitionMatrix& t, std::span<const double> z,
                                            Orientation orientation = Orientation::Rows) {
  return apply_adjustment(t.values(), t.k(), z, orientation);
}

// -- CSV export -------------------------------------------------------------
// K rows by K comma-separated values with a header row of predicate names.
// An optional permutation reorders rows and columns (e.g. by ascending
// information content for heatmap rendering).

inline void write_matrix_csv(const std::string& path, std::span<const double> values, int k,
                             const std::vector<std::string>& names,
                             std::span<const int> order = {}) {
  if (static_cast<int>(names.size()) != k) throw VocabMismatch("header names do not match k");
  std::vector<int> perm(order.begin(), order.end());
  if (perm.empty()) {
    perm.resize(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) perm[static_cast<std::size_t>(i)] = i;
  }
  std::ofstream out(path);
  if (!out) throw DataError("cannot write matrix csv: " + path);
  for (int c = 0; c < k; ++c) out << (c ? "," : "") << names[static_cast<std::size_t>(perm[static_cast<std::size_t>(c)])];
  out << "\n";
  out.precision(17);
  for (int r = 0; r < k; ++r) {
    const std::size_t row =
        static_cast<std::size_t>(perm[static_cast<std::size_t>(r)]) * static_cast<std::size_t>(k);
    for (int c = 0; c < k; ++c)
      out << (c ? "," : "") << values[row + static_cast<std::size_t>(perm[static_cast<std::size_t>(c)])];
    out << "\n";
  }
}

inline void write_confusion_csv(const std::string& path, const ConfusionMatrix& m,
                                const std::vector<std::string>& names,
                                std::span<const int> order = {}) {
  std::vector<double> values(m.counts.size());
  std::transform(m.counts.begin(), m.counts.end(), values.begin(),
                 [](std::int64_t v) { return static_cast<double>(v); });
  write_matrix_csv(path, values, m.k, names, order);
}

}  // namespace predbal
