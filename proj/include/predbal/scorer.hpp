#pragma once

#include <algorithm>
#include <span>
#include <vector>

#include "predbal/freq_model.hpp"
#include "predbal/head_model.hpp"
#include "predbal/semantic_adjustment.hpp"

namespace predbal {

// A scorer maps a (subject, object) pair to K predicate logits. Pure and
// thread-safe; implementations hold const references owned by the caller.
class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual int k() const = 0;
  virtual std::vector<double> scores(int subj, int obj) const = 0;

  std::vector<double> probabilities(int subj, int obj) const { return softmax(scores(subj, obj)); }

  // Argmax with ties toward the lower predicate id.
  int predict(int subj, int obj) const {
    const auto z = scores(subj, obj);
    return static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
  }
};

class FreqScorer : public Scorer {
 public:
  explicit FreqScorer(const FreqModel& model) : model_(model) {}
  int k() const override { return model_.k(); }
  std::vector<double> scores(int subj, int obj) const override {
    return model_.predict_logits(subj, obj);
  }

 private:
  const FreqModel& model_;
};

class HeadScorer : public Scorer {
 public:
  explicit HeadScorer(const HeadModel& model) : model_(model) {}
  int k() const override { return model_.k; }
  std::vector<double> scores(int subj, int obj) const override {
    return model_.forward_pair(subj, obj);
  }

 private:
  const HeadModel& model_;
};

// Wraps another scorer with a transition product (fixed matrix or the learned
// values from a trainable-transition ablation run).
class AdjustedScorer : public Scorer {
 public:
  AdjustedScorer(const Scorer& inner, const TransitionMatrix& t,
                 Orientation orientation = Orientation::Rows)
      : inner_(inner), values_(t.values()), k_(t.k()), orientation_(orientation) {}
  AdjustedScorer(const Scorer& inner, std::span<const double> values, int k,
                 Orientation orientation = Orientation::Rows)
      : inner_(inner), values_(values), k_(k), orientation_(orientation) {}

  int k() const override { return k_; }
  std::vector<double> scores(int subj, int obj) const override {
    return apply_adjustment(values_, k_, inner_.scores(subj, obj), orientation_);
  }

 private:
  const Scorer& inner_;
  std::span<const double> values_;
  int k_;
  Orientation orientation_;
};

}  // namespace predbal
