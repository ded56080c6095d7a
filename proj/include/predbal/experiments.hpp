#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "predbal/pipeline.hpp"

namespace predbal {

// How a finetune run is initialized and what sits in its training graph.
struct FinetuneVariant {
  bool from_stage1 = true;  // false: fresh init trained on the target domain
  bool freeze_embedding = true;
  std::optional<TransitionMatrix> transition;             // fixed, frozen
  std::optional<std::vector<double>> trainable_transition;  // ablation only
  Orientation orientation = Orientation::Rows;
};

// One experiment's in-memory pipeline: stage products computed on demand and
// cached, seeded identically to the file-based stages so results agree.
class PipelineRun {
 public:
  PipelineRun(const PipelineConfig& cfg, const LoadedData& data) : cfg_(cfg), data_(data) {}

  const PipelineConfig& config() const { return cfg_; }
  const LoadedData& data() const { return data_; }

  const HeadModel& stage1() {
    if (!stage1_) {
      HeadModel model = HeadModel::init(data_.objects.size(), data_.predicates.size(), cfg_.hidden,
                                        derive_seed(cfg_.seed, seed_stream::model_init));
      TrainConfig tc;
      tc.epochs = cfg_.source_train.epochs;
      tc.batch_size = cfg_.source_train.batch_size;
      tc.step_size = cfg_.source_train.step_size;
      tc.momentum = cfg_.source_train.momentum;
      tc.seed = derive_seed(derive_seed(cfg_.seed, seed_stream::source_train),
                            cfg_.source_train.seed);
      stage1_ = train(model, data_.train, tc).model;
    }
    return *stage1_;
  }

  const FreqModel& freq() {
    if (!freq_) freq_ = FreqModel::fit(data_.train, cfg_.epsilon);
    return *freq_;
  }

  const std::vector<double>& c_prime() {
    if (c_prime_.empty()) {
      const FreqModel& f = freq();
      std::vector<int> gold;
      std::vector<int> predicted;
      gold.reserve(data_.train.size());
      predicted.reserve(data_.train.size());
      for (const Triplet& t : data_.train.triplets()) {
        gold.push_back(t.pred);
        predicted.push_back(f.predict(t.subj, t.obj));
      }
      c_prime_ = row_normalize(build_confusion(gold, predicted, data_.predicates.size()));
    }
    return c_prime_;
  }

  TransitionMatrix c_star(double alpha) {
    return TransitionMatrix::build(c_prime(), data_.predicates.size(), alpha,
                                   "freq_model(eps=" + std::to_string(cfg_.epsilon) + ")");
  }

  ICTable ic(const std::string& source) {
    return information_content(ic_source_frequencies(cfg_, data_, source), cfg_.ic_base);
  }

  DomainSpec domain_spec(const std::string& ic_source, SamplingStrategy strategy) {
    DomainSpec spec = partition(ic(ic_source), cfg_.m);
    spec.n = cfg_.n;
    spec.strategy = strategy;
    spec.seed = derive_seed(cfg_.seed, seed_stream::target_sampling);
    return spec;
  }

  Dataset target(const std::string& ic_source, SamplingStrategy strategy) {
    const DomainSpec spec = domain_spec(ic_source, strategy);
    std::optional<HeadScorer> scorer;
    if (strategy == SamplingStrategy::Confidence) scorer.emplace(stage1());
    return build_target_domain(data_.train, spec, scorer ? &*scorer : nullptr);
  }

  // Default target per the config's bpl block.
  const Dataset& default_target() {
    if (!target_) target_ = target(cfg_.ic_source, cfg_.strategy);
    return *target_;
  }

  TrainResult finetune(const Dataset& target_domain, const FinetuneVariant& variant) {
    TrainConfig tc;
    const StageTrainParams& p = variant.from_stage1 ? cfg_.finetune_train : cfg_.source_train;
    tc.epochs = p.epochs;
    tc.batch_size = p.batch_size;
    tc.step_size = p.step_size;
    tc.momentum = p.momentum;
    tc.seed = derive_seed(derive_seed(cfg_.seed, seed_stream::finetune_train), p.seed);
    tc.freeze_embedding = variant.freeze_embedding;
    tc.orientation = variant.orientation;
    if (variant.transition) tc.transition = variant.transition;
    if (variant.trainable_transition) tc.trainable_transition = variant.trainable_transition;
    if (variant.from_stage1) return train(stage1(), target_domain, tc);
    HeadModel fresh = HeadModel::init(data_.objects.size(), data_.predicates.size(), cfg_.hidden,
                                      derive_seed(cfg_.seed, seed_stream::model_init));
    tc.freeze_embedding = false;
    return train(fresh, target_domain, tc);
  }

  EvalResult eval_raw(const HeadModel& model) {
    const HeadScorer scorer(model);
    return evaluate(scorer, data_.test, cfg_.eval_ks);
  }

  EvalResult eval_adjusted(const HeadModel& model, const TransitionMatrix& t,
                           Orientation orientation) {
    const HeadScorer inner(model);
    const AdjustedScorer scorer(inner, t, orientation);
    return evaluate(scorer, data_.test, cfg_.eval_ks);
  }

  EvalResult eval_adjusted(const HeadModel& model, std::span<const double> values,
                           Orientation orientation) {
    const HeadScorer inner(model);
    const AdjustedScorer scorer(inner, values, data_.predicates.size(), orientation);
    return evaluate(scorer, data_.test, cfg_.eval_ks);
  }

  // Random row-stochastic matrix for the trainable-transition ablation.
  std::vector<double> random_transition_init() {
    const int k = data_.predicates.size();
    std::vector<double> values(static_cast<std::size_t>(k) * static_cast<std::size_t>(k));
    Rng rng(derive_seed(cfg_.seed, 0xAB17));
    for (double& v : values) v = rng.unit();
    return row_normalize(values, k);
  }

 private:
  const PipelineConfig& cfg_;
  const LoadedData& data_;
  std::optional<HeadModel> stage1_;
  std::optional<FreqModel> freq_;
  std::vector<double> c_prime_;
  std::optional<Dataset> target_;
};

// -- ablations ------------------------------------------------------------------

namespace detail {

inline void write_ablation_csv(const std::string& path, const std::string& header,
                               const std::vector<std::string>& rows) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write ablation table: " + path);
  out << header << "\n";
  for (const auto& row : rows) out << row << "\n";
}

inline std::string metric_cells(const EvalResult& r, const std::vector<double>& values) {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t i = 0; i < r.ks.size(); ++i) os << "," << values[i];
  return os.str();
}

inline std::string mric_cells(const EvalResult& r, const ICTable& ic) {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t i = 0; i < r.ks.size(); ++i)
    os << "," << mric(r.per_pred_recall[i], r.present, ic);
  return os.str();
}

inline std::string k_header(const std::vector<int>& ks, const std::string& name) {
  std::ostringstream os;
  for (int k : ks) os << "," << name << "@" << k;
  return os.str();
}

}  // namespace detail

// Runs one of the named comparison sweeps with shared seeds and writes a CSV
// with one row per setting.
inline std::string cmd_ablate(const PipelineConfig& cfg, const std::string& which) {
  const LoadedData data = load_pipeline_data(cfg);
  PipelineRun run(cfg, data);
  fsys::create_directories(cfg.ablate_dir());
  const std::string path = cfg.ablate_dir() + "/" + which + ".csv";

  if (which == "alpha") {
    const std::vector<double> grid = {0.0, 0.3, 0.6, 1.0};
    std::vector<std::string> rows;
    for (double alpha : grid) {
      const TransitionMatrix t = run.c_star(alpha);
      const TrainResult ft = run.finetune(
          run.default_target(),
          {true, cfg.finetune_freeze, t, std::nullopt, cfg.orientation});
      const EvalResult r = run.eval_adjusted(ft.model, t, cfg.orientation);
      std::ostringstream label;
      label << alpha;  // grid labels print short (0.3, not 0.2999...)
      rows.push_back(label.str() + detail::metric_cells(r, r.mean_recall));
    }
    detail::write_ablation_csv(path, "alpha" + detail::k_header(cfg.eval_ks, "mR"), rows);
    return path;
  }

  if (which == "transition-variant") {
    std::vector<std::string> rows;
    auto emit = [&](const std::string& name, const EvalResult& r) {
      rows.push_back(name + detail::metric_cells(r, r.mean_recall));
    };
    {  // 1: target-domain training without any transition
      const TrainResult ft = run.finetune(
          run.default_target(),
          {true, cfg.finetune_freeze, std::nullopt, std::nullopt, cfg.orientation});
      emit("none", run.eval_raw(ft.model));
    }
    {  // 2: random init, updated during training
      const TrainResult ft =
          run.finetune(run.default_target(), {true, cfg.finetune_freeze, std::nullopt,
                                              run.random_transition_init(), cfg.orientation});
      emit("random_trainable",
           run.eval_adjusted(ft.model, *ft.learned_transition, cfg.orientation));
    }
    {  // 3: prediction-prior init, updated during training
      const TransitionMatrix t = run.c_star(cfg.alpha);
      std::vector<double> init(t.values().begin(), t.values().end());
      const TrainResult ft = run.finetune(
          run.default_target(),
          {true, cfg.finetune_freeze, std::nullopt, init, cfg.orientation});
      emit("sa_trainable", run.eval_adjusted(ft.model, *ft.learned_transition, cfg.orientation));
    }
    {  // 4: prediction-prior, fixed during training
      const TransitionMatrix t = run.c_star(cfg.alpha);
      const TrainResult ft = run.finetune(
          run.default_target(), {true, cfg.finetune_freeze, t, std::nullopt, cfg.orientation});
      emit("sa_fixed", run.eval_adjusted(ft.model, t, cfg.orientation));
    }
    detail::write_ablation_csv(path, "transition" + detail::k_header(cfg.eval_ks, "mR"), rows);
    return path;
  }

  if (which == "strategy") {
    std::vector<std::string> rows;
    for (SamplingStrategy strategy : {SamplingStrategy::Random, SamplingStrategy::Confidence}) {
      const Dataset target_domain = run.target(cfg.ic_source, strategy);
      std::optional<TransitionMatrix> t;
      if (cfg.sa_enabled) t = run.c_star(cfg.alpha);
      const TrainResult ft = run.finetune(
          target_domain, {true, cfg.finetune_freeze, t, std::nullopt, cfg.orientation});
      const EvalResult r = t ? run.eval_adjusted(ft.model, *t, cfg.orientation)
                             : run.eval_raw(ft.model);
      rows.push_back(std::string(to_string(strategy)) + detail::metric_cells(r, r.mean_recall));
    }
    detail::write_ablation_csv(path, "strategy" + detail::k_header(cfg.eval_ks, "mR"), rows);
    return path;
  }

  if (which == "training-approach") {
    // Transition removed here: the comparison isolates the training scheme.
    std::vector<std::string> rows;
    auto emit = [&](const std::string& name, const FinetuneVariant& v) {
      const TrainResult ft = run.finetune(run.default_target(), v);
      const EvalResult r = run.eval_raw(ft.model);
      rows.push_back(name + detail::metric_cells(r, r.recall) +
                     detail::metric_cells(r, r.mean_recall));
    };
    emit("scratch", {false, false, std::nullopt, std::nullopt, cfg.orientation});
    emit("full_finetune", {true, false, std::nullopt, std::nullopt, cfg.orientation});
    emit("head_only", {true, true, std::nullopt, std::nullopt, cfg.orientation});
    detail::write_ablation_csv(
        path, "approach" + detail::k_header(cfg.eval_ks, "R") + detail::k_header(cfg.eval_ks, "mR"),
        rows);
    return path;
  }

  if (which == "ic-source") {
    if (!cfg.corpus_counts_path)
      throw ConfigError("ic-source ablation requires paths.corpus_counts");
    const ICTable ic_dataset = run.ic("dataset");
    const ICTable ic_corpus = run.ic("corpus");
    std::vector<std::string> rows;
    auto emit = [&](const std::string& name, const EvalResult& r) {
      rows.push_back(name + detail::metric_cells(r, r.mean_recall) +
                     detail::mric_cells(r, ic_dataset) + detail::mric_cells(r, ic_corpus));
    };
    emit("general", run.eval_raw(run.stage1()));
    for (const char* source : {"corpus", "dataset"}) {
      const Dataset target_domain = run.target(source, cfg.strategy);
      std::optional<TransitionMatrix> t;
      if (cfg.sa_enabled) t = run.c_star(cfg.alpha);
      const TrainResult ft = run.finetune(
          target_domain, {true, cfg.finetune_freeze, t, std::nullopt, cfg.orientation});
      emit(source, t ? run.eval_adjusted(ft.model, *t, cfg.orientation) : run.eval_raw(ft.model));
    }
    detail::write_ablation_csv(path,
                               "target_domain" + detail::k_header(cfg.eval_ks, "mR") +
                                   detail::k_header(cfg.eval_ks, "mRIC(dataset)") +
                                   detail::k_header(cfg.eval_ks, "mRIC(corpus)"),
                               rows);
    return path;
  }

  if (which == "orientation") {
    std::vector<std::string> rows;
    for (Orientation o : {Orientation::Rows, Orientation::Cols}) {
      const TransitionMatrix t = run.c_star(cfg.alpha);
      const TrainResult ft =
          run.finetune(run.default_target(), {true, cfg.finetune_freeze, t, std::nullopt, o});
      const EvalResult r = run.eval_adjusted(ft.model, t, o);
      rows.push_back(std::string(to_string(o)) + detail::metric_cells(r, r.mean_recall));
    }
    detail::write_ablation_csv(path, "orientation" + detail::k_header(cfg.eval_ks, "mR"), rows);
    return path;
  }

  throw UnknownAblation("unknown ablation: " + which +
                        " (expected alpha|transition-variant|strategy|training-approach|"
                        "ic-source|orientation)");
}

}  // namespace predbal
