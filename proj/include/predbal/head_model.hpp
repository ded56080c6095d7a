#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "predbal/dataset.hpp"
#include "predbal/errors.hpp"
#include "predbal/hash.hpp"
#include "predbal/rng.hpp"
#include "predbal/semantic_adjustment.hpp"

namespace predbal {

// Input encoding for a pair: one-hot(subject) (+) one-hot(object) (+) constant
// 1, so D = 2S + 1 and every feature has exactly three non-zero entries. The
// constant channel lets a hidden unit act as a pair conjunction detector.
inline std::vector<double> make_feature(int subj, int obj, int object_classes) {
  if (subj < 0 || subj >= object_classes || obj < 0 || obj >= object_classes)
    throw InvalidId("object id out of range for feature encoding");
  std::vector<double> f(static_cast<std::size_t>(2 * object_classes + 1), 0.0);
  f[static_cast<std::size_t>(subj)] = 1.0;
  f[static_cast<std::size_t>(object_classes + obj)] = 1.0;
  f.back() = 1.0;
  return f;
}

// Two-layer predicate classifier: a rectified embedding layer over pair
// features and a final recognition layer producing K logits. The split exists
// so the embedding can be frozen while only the recognition layer finetunes.
struct HeadModel {
  int s = 0;  // object classes
  int k = 0;  // predicates
  int h = 0;  // hidden width
  std::uint64_t init_seed = 0;
  std::vector<double> embed;  // h x d, row-major
  std::vector<double> recog;  // k x h, row-major
  std::vector<double> bias;   // k

  int d() const { return 2 * s + 1; }

  static HeadModel init(int s, int k, int h, std::uint64_t seed) {
    if (s < 1 || k < 1 || h < 1) throw InvalidDims("model dimensions must be positive");
    HeadModel m;
    m.s = s;
    m.k = k;
    m.h = h;
    m.init_seed = seed;
    const int d = m.d();
    m.embed.resize(static_cast<std::size_t>(h) * static_cast<std::size_t>(d));
    m.recog.resize(static_cast<std::size_t>(k) * static_cast<std::size_t>(h));
    m.bias.assign(static_cast<std::size_t>(k), 0.0);
    Rng rng(seed);
    const double embed_range = 1.0 / std::sqrt(static_cast<double>(d));
    for (double& w : m.embed) w = (2.0 * rng.unit() - 1.0) * embed_range;
    const double recog_range = 1.0 / std::sqrt(static_cast<double>(h));
    for (double& w : m.recog) w = (2.0 * rng.unit() - 1.0) * recog_range;
    return m;
  }

  // relu(E_subj + E_{S+obj} + E_{2S}), exploiting the three-non-zero feature.
  std::vector<double> hidden(int subj, int obj) const {
    if (subj < 0 || subj >= s || obj < 0 || obj >= s)
      throw InvalidId("object id out of range for head model");
    const std::size_t dd = static_cast<std::size_t>(d());
    std::vector<double> hh(static_cast<std::size_t>(h));
    const std::size_t c1 = static_cast<std::size_t>(subj);
    const std::size_t c2 = static_cast<std::size_t>(s + obj);
    const std::size_t c3 = static_cast<std::size_t>(2 * s);
    for (int i = 0; i < h; ++i) {
      const std::size_t row = static_cast<std::size_t>(i) * dd;
      const double pre = embed[row + c1] + embed[row + c2] + embed[row + c3];
      hh[static_cast<std::size_t>(i)] = pre > 0.0 ? pre : 0.0;
    }
    return hh;
  }

  std::vector<double> forward_pair(int subj, int obj) const {
    return logits_from_hidden(hidden(subj, obj));
  }

  // Dense-feature forward: z = W * relu(E * f) + b.
  std::vector<double> forward(std::span<const double> feature) const {
    if (feature.size() != static_cast<std::size_t>(d()))
      throw ShapeMismatch("feature length does not match model input size");
    const std::size_t dd = static_cast<std::size_t>(d());
    std::vector<double> hh(static_cast<std::size_t>(h));
    for (int i = 0; i < h; ++i) {
      const std::size_t row = static_cast<std::size_t>(i) * dd;
      double pre = 0.0;
      for (std::size_t j = 0; j < dd; ++j) pre += embed[row + j] * feature[j];
      hh[static_cast<std::size_t>(i)] = pre > 0.0 ? pre : 0.0;
    }
    return logits_from_hidden(hh);
  }

  std::uint64_t embed_checksum() const { return fnv1a64_span(embed.data(), embed.size()); }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["format"] = "predbal/head_model";
    j["object_classes"] = s;
    j["predicates"] = k;
    j["hidden"] = h;
    j["init_seed"] = init_seed;
    j["embed"] = embed;
    j["recog"] = recog;
    j["bias"] = bias;
    return j;
  }

  static HeadModel from_json(const nlohmann::json& j) {
    if (!j.is_object() || j.value("format", "") != "predbal/head_model")
      throw DataError("not a head model document");
    HeadModel m;
    m.s = j.at("object_classes").get<int>();
    m.k = j.at("predicates").get<int>();
    m.h = j.at("hidden").get<int>();
    m.init_seed = j.at("init_seed").get<std::uint64_t>();
    m.embed = j.at("embed").get<std::vector<double>>();
    m.recog = j.at("recog").get<std::vector<double>>();
    m.bias = j.at("bias").get<std::vector<double>>();
    if (m.embed.size() != static_cast<std::size_t>(m.h) * static_cast<std::size_t>(m.d()) ||
        m.recog.size() != static_cast<std::size_t>(m.k) * static_cast<std::size_t>(m.h) ||
        m.bias.size() != static_cast<std::size_t>(m.k))
      throw DataError("head model weight arrays have wrong shapes");
    return m;
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write head model: " + path);
    out << to_json().dump(2) << "\n";
  }

  static HeadModel load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open head model: " + path);
    nlohmann::json j;
    in >> j;
    return from_json(j);
  }

 private:
  std::vector<double> logits_from_hidden(const std::vector<double>& hh) const {
    std::vector<double> z(static_cast<std::size_t>(k));
    for (int c = 0; c < k; ++c) {
      const std::size_t row = static_cast<std::size_t>(c) * static_cast<std::size_t>(h);
      double sum = bias[static_cast<std::size_t>(c)];
      for (int i = 0; i < h; ++i) sum += recog[row + static_cast<std::size_t>(i)] * hh[static_cast<std::size_t>(i)];
      z[static_cast<std::size_t>(c)] = sum;
    }
    return z;
  }
};

inline std::vector<double> softmax(std::span<const double> z) {
  std::vector<double> p(z.size());
  const double zmax = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp(z[i] - zmax);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

struct TrainConfig {
  int epochs = 10;
  int batch_size = 64;
  double step_size = 0.1;
  double momentum = 0.9;
  std::uint64_t seed = 0;
  bool freeze_embedding = false;
  // When set, the loss is cross-entropy over softmax of the adjusted vector
  // (the matrix sits frozen in the training graph).
  std::optional<TransitionMatrix> transition;
  Orientation orientation = Orientation::Rows;
  std::vector<double> class_weights;  // empty = unweighted
  // Ablation only: a transition updated by gradient during training. Mutually
  // exclusive with `transition`. Values are the k*k initial matrix.
  std::optional<std::vector<double>> trainable_transition;

  void validate(int k) const {
    if (epochs < 1) throw ConfigError("epochs must be positive");
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (!(step_size > 0)) throw ConfigError("step_size must be positive");
    if (momentum < 0 || momentum >= 1) throw ConfigError("momentum must lie in [0, 1)");
    if (transition && trainable_transition)
      throw ConfigError("fixed and trainable transitions are mutually exclusive");
    if (transition && transition->k() != k)
      throw ShapeMismatch("transition size does not match predicate count");
    if (trainable_transition &&
        trainable_transition->size() != static_cast<std::size_t>(k) * static_cast<std::size_t>(k))
      throw ShapeMismatch("trainable transition must be a k*k matrix");
    if (!class_weights.empty() && class_weights.size() != static_cast<std::size_t>(k))
      throw ShapeMismatch("class_weights length does not match predicate count");
  }
};

struct TrainResult {
  HeadModel model;
  std::vector<double> loss_history;  // epoch-averaged cross-entropy
  // Present iff the config asked for a trainable transition.
  std::optional<std::vector<double>> learned_transition;
};

namespace detail {

// Per-sample loss and gradient accumulation. Gradients are accumulated into
// the provided buffers; returns the (optionally class-weighted) loss.
struct HeadGradients {
  std::vector<double> embed;
  std::vector<double> recog;
  std::vector<double> bias;
  std::vector<double> transition;  // empty unless trainable

  void resize_like(const HeadModel& m, bool trainable_t) {
    embed.assign(m.embed.size(), 0.0);
    recog.assign(m.recog.size(), 0.0);
    bias.assign(m.bias.size(), 0.0);
    transition.assign(trainable_t ? static_cast<std::size_t>(m.k) * static_cast<std::size_t>(m.k) : 0,
                      0.0);
  }
  void zero() {
    std::fill(embed.begin(), embed.end(), 0.0);
    std::fill(recog.begin(), recog.end(), 0.0);
    std::fill(bias.begin(), bias.end(), 0.0);
    std::fill(transition.begin(), transition.end(), 0.0);
  }
};

inline double accumulate_sample_gradient(const HeadModel& m, int subj, int obj, int label,
                                         const double* t_values, Orientation orientation,
                                         bool t_trainable, double weight, HeadGradients& g) {
  const int k = m.k;
  const int h = m.h;
  const std::size_t dd = static_cast<std::size_t>(m.d());
  const std::size_t c1 = static_cast<std::size_t>(subj);
  const std::size_t c2 = static_cast<std::size_t>(m.s + obj);
  const std::size_t c3 = static_cast<std::size_t>(2 * m.s);

  // forward
  std::vector<double> hh(static_cast<std::size_t>(h));
  for (int i = 0; i < h; ++i) {
    const std::size_t row = static_cast<std::size_t>(i) * dd;
    const double pre = m.embed[row + c1] + m.embed[row + c2] + m.embed[row + c3];
    hh[static_cast<std::size_t>(i)] = pre > 0.0 ? pre : 0.0;
  }
  std::vector<double> z(static_cast<std::size_t>(k));
  for (int c = 0; c < k; ++c) {
    const std::size_t row = static_cast<std::size_t>(c) * static_cast<std::size_t>(h);
    double sum = m.bias[static_cast<std::size_t>(c)];
    for (int i = 0; i < h; ++i) sum += m.recog[row + static_cast<std::size_t>(i)] * hh[static_cast<std::size_t>(i)];
    z[static_cast<std::size_t>(c)] = sum;
  }

  std::vector<double> a = z;
  if (t_values) a = apply_adjustment({t_values, static_cast<std::size_t>(k) * static_cast<std::size_t>(k)}, k, z, orientation);

  const std::vector<double> p = softmax(a);
  const double loss = -std::log(std::max(p[static_cast<std::size_t>(label)], 1e-300)) * weight;

  // backward: dL/da = p - e_y
  std::vector<double> da(static_cast<std::size_t>(k));
  for (int c = 0; c < k; ++c)
    da[static_cast<std::size_t>(c)] =
        (p[static_cast<std::size_t>(c)] - (c == label ? 1.0 : 0.0)) * weight;

  std::vector<double> dz(static_cast<std::size_t>(k), 0.0);
  if (t_values) {
    // chain rule through the matrix product, in either orientation
    if (orientation == Orientation::Rows) {
      for (int l = 0; l < k; ++l) {
        const std::size_t row = static_cast<std::size_t>(l) * static_cast<std::size_t>(k);
        const double dal = da[static_cast<std::size_t>(l)];
        for (int c = 0; c < k; ++c) dz[static_cast<std::size_t>(c)] += t_values[row + static_cast<std::size_t>(c)] * dal;
      }
      if (t_trainable)
        for (int l = 0; l < k; ++l) {
          const std::size_t row = static_cast<std::size_t>(l) * static_cast<std::size_t>(k);
          const double dal = da[static_cast<std::size_t>(l)];
          for (int c = 0; c < k; ++c) g.transition[row + static_cast<std::size_t>(c)] += dal * z[static_cast<std::size_t>(c)];
        }
    } else {
      for (int r = 0; r < k; ++r) {
        const std::size_t row = static_cast<std::size_t>(r) * static_cast<std::size_t>(k);
        double sum = 0.0;
        for (int c = 0; c < k; ++c) sum += t_values[row + static_cast<std::size_t>(c)] * da[static_cast<std::size_t>(c)];
        dz[static_cast<std::size_t>(r)] = sum;
      }
      if (t_trainable)
        for (int r = 0; r < k; ++r) {
          const std::size_t row = static_cast<std::size_t>(r) * static_cast<std::size_t>(k);
          const double zr = z[static_cast<std::size_t>(r)];
          for (int c = 0; c < k; ++c) g.transition[row + static_cast<std::size_t>(c)] += zr * da[static_cast<std::size_t>(c)];
        }
    }
  } else {
    dz = da;
  }

  // recognition layer
  std::vector<double> dh(static_cast<std::size_t>(h), 0.0);
  for (int c = 0; c < k; ++c) {
    const std::size_t row = static_cast<std::size_t>(c) * static_cast<std::size_t>(h);
    const double dzc = dz[static_cast<std::size_t>(c)];
    g.bias[static_cast<std::size_t>(c)] += dzc;
    for (int i = 0; i < h; ++i) {
      g.recog[row + static_cast<std::size_t>(i)] += dzc * hh[static_cast<std::size_t>(i)];
      dh[static_cast<std::size_t>(i)] += m.recog[row + static_cast<std::size_t>(i)] * dzc;
    }
  }

  // embedding layer: gradient only lands on the three active columns
  for (int i = 0; i < h; ++i) {
    if (hh[static_cast<std::size_t>(i)] <= 0.0) continue;
    const std::size_t row = static_cast<std::size_t>(i) * dd;
    const double dpre = dh[static_cast<std::size_t>(i)];
    g.embed[row + c1] += dpre;
    g.embed[row + c2] += dpre;
    g.embed[row + c3] += dpre;
  }
  return loss;
}

}  // namespace detail

// Momentum gradient descent on the cross-entropy of softmax(adjusted or raw
// logits). Deterministic per seed: one shuffle per epoch with a seed derived
// from (cfg.seed, epoch), consecutive batch partition. A frozen embedding is
// returned bit-identical; a supplied transition is never copied into mutable
// state.
inline TrainResult train(const HeadModel& start, const Dataset& data, const TrainConfig& cfg) {
  if (data.empty()) throw EmptyDataset("cannot train on an empty dataset");
  cfg.validate(start.k);
  if (data.objects().size() != start.s || data.predicates().size() != start.k)
    throw ShapeMismatch("dataset vocabs do not match model dimensions");
  if (cfg.freeze_embedding && start.embed.empty())
    throw ConfigError("freeze_embedding requires an initialized model");

  TrainResult result{start, {}, std::nullopt};
  HeadModel& m = result.model;
  const bool trainable_t = cfg.trainable_transition.has_value();
  std::vector<double> t_learned;
  const double* t_values = nullptr;
  if (cfg.transition) t_values = cfg.transition->values().data();
  if (trainable_t) {
    t_learned = *cfg.trainable_transition;
    t_values = t_learned.data();
  }

  detail::HeadGradients grads;
  grads.resize_like(m, trainable_t);
  detail::HeadGradients velocity;
  velocity.resize_like(m, trainable_t);

  const std::size_t n = data.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const auto& triplets = data.triplets();

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;
    int batch_index = 0;
    for (std::size_t at = 0; at < n; at += static_cast<std::size_t>(cfg.batch_size), ++batch_index) {
      const std::size_t batch_end = std::min(n, at + static_cast<std::size_t>(cfg.batch_size));
      const double inv = 1.0 / static_cast<double>(batch_end - at);
      grads.zero();
      double batch_loss = 0.0;
      for (std::size_t i = at; i < batch_end; ++i) {
        const Triplet& t = triplets[order[i]];
        const double w =
            cfg.class_weights.empty() ? 1.0 : cfg.class_weights[static_cast<std::size_t>(t.pred)];
        batch_loss += detail::accumulate_sample_gradient(m, t.subj, t.obj, t.pred, t_values,
                                                         cfg.orientation, trainable_t, w, grads);
      }
      epoch_loss += batch_loss;

      double max_abs_grad = 0.0;
      auto step = [&](std::vector<double>& param, std::vector<double>& vel,
                      const std::vector<double>& grad) {
        for (std::size_t i = 0; i < param.size(); ++i) {
          const double gi = grad[i] * inv;
          max_abs_grad = std::max(max_abs_grad, std::abs(gi));
          vel[i] = cfg.momentum * vel[i] + gi;
          param[i] -= cfg.step_size * vel[i];
        }
      };
      if (!cfg.freeze_embedding) step(m.embed, velocity.embed, grads.embed);
      step(m.recog, velocity.recog, grads.recog);
      step(m.bias, velocity.bias, grads.bias);
      if (trainable_t) step(t_learned, velocity.transition, grads.transition);

      if (!std::isfinite(batch_loss)) throw NonFiniteLoss(epoch, batch_index, max_abs_grad);
    }
    result.loss_history.push_back(epoch_loss / static_cast<double>(n));
    if (!std::isfinite(result.loss_history.back()))
      throw NonFiniteLoss(epoch, batch_index, 0.0);
  }
  if (trainable_t) result.learned_transition = std::move(t_learned);
  return result;
}

// Central finite differences over every parameter against the analytic
// gradient; returns max over parameters of |g_a - g_n| / max(1, |g_a| + |g_n|).
inline double grad_check(const HeadModel& model, const Triplet& sample,
                         const std::optional<TransitionMatrix>& transition, double fd_step,
                         Orientation orientation = Orientation::Rows) {
  if (fd_step < 1e-6 || fd_step > 1e-3)
    throw ConfigError("finite-difference step must lie in [1e-6, 1e-3]");
  const double* t_values = transition ? transition->values().data() : nullptr;

  detail::HeadGradients analytic;
  analytic.resize_like(model, false);
  detail::accumulate_sample_gradient(model, sample.subj, sample.obj, sample.pred, t_values,
                                     orientation, false, 1.0, analytic);

  HeadModel probe = model;
  auto loss_at = [&]() {
    detail::HeadGradients scratch;
    scratch.resize_like(probe, false);
    return detail::accumulate_sample_gradient(probe, sample.subj, sample.obj, sample.pred,
                                              t_values, orientation, false, 1.0, scratch);
  };
  double max_err = 0.0;
  auto check_param = [&](std::vector<double>& param, const std::vector<double>& grad) {
    for (std::size_t i = 0; i < param.size(); ++i) {
      const double saved = param[i];
      param[i] = saved + fd_step;
      const double up = loss_at();
      param[i] = saved - fd_step;
      const double down = loss_at();
      param[i] = saved;
      const double numeric = (up - down) / (2.0 * fd_step);
      const double err = std::abs(grad[i] - numeric) / std::max(1.0, std::abs(grad[i]) + std::abs(numeric));
      max_err = std::max(max_err, err);
    }
  };
  check_param(probe.embed, analytic.embed);
  check_param(probe.recog, analytic.recog);
  check_param(probe.bias, analytic.bias);
  return max_err;
}

}  // namespace predbal
