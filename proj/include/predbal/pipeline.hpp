#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "predbal/balanced_learning.hpp"
#include "predbal/dataset.hpp"
#include "predbal/errors.hpp"
#include "predbal/evaluation.hpp"
#include "predbal/freq_model.hpp"
#include "predbal/hash.hpp"
#include "predbal/head_model.hpp"
#include "predbal/scorer.hpp"
#include "predbal/semantic_adjustment.hpp"
#include "predbal/synthetic.hpp"
#include "predbal/vocab.hpp"

namespace predbal {

namespace fsys = std::filesystem;

// Seed stream tags so every randomized stage draws from a distinct stream of
// the master seed.
namespace seed_stream {
constexpr std::uint64_t synth = 101;
constexpr std::uint64_t model_init = 102;
constexpr std::uint64_t source_train = 103;
constexpr std::uint64_t target_sampling = 104;
constexpr std::uint64_t finetune_train = 105;
}  // namespace seed_stream

inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                       const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    (void)value;
    bool ok = false;
    for (const char* a : allowed)
      if (key == a) ok = true;
    if (!ok) throw ConfigError("unknown key \"" + key + "\" in " + where);
  }
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open file: " + path);
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw DataError("invalid JSON in " + path);
  return j;
}

inline void write_json_file(const std::string& path, const nlohmann::ordered_json& j) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write file: " + path);
  out << j.dump(2) << "\n";
}

struct StageTrainParams {
  int epochs = 20;
  int batch_size = 64;
  double step_size = 0.1;
  double momentum = 0.9;
  std::uint64_t seed = 0;

  static StageTrainParams from_json(const nlohmann::json& j, const std::string& where) {
    check_keys(j, {"epochs", "batch_size", "step_size", "momentum", "seed"}, where);
    StageTrainParams p;
    if (j.contains("epochs")) p.epochs = j.at("epochs").get<int>();
    if (j.contains("batch_size")) p.batch_size = j.at("batch_size").get<int>();
    if (j.contains("step_size")) p.step_size = j.at("step_size").get<double>();
    if (j.contains("momentum")) p.momentum = j.at("momentum").get<double>();
    if (j.contains("seed")) p.seed = j.at("seed").get<std::uint64_t>();
    return p;
  }

  nlohmann::ordered_json to_json() const {
    return {{"epochs", epochs},
            {"batch_size", batch_size},
            {"step_size", step_size},
            {"momentum", momentum},
            {"seed", seed}};
  }
};

struct PipelineConfig {
  std::uint64_t seed = 1;

  // paths
  std::string out_dir = "out";
  std::optional<std::string> synth_config_path;
  std::optional<std::string> dataset_path;
  std::optional<std::string> object_vocab_path;
  std::optional<std::string> predicate_vocab_path;
  std::optional<std::string> corpus_counts_path;
  SplitFractions split_fractions{0.7, 0.1, 0.2};
  std::uint64_t split_seed = 7;

  // model
  int hidden = 192;
  StageTrainParams source_train;
  StageTrainParams finetune_train;
  bool finetune_freeze = true;

  // semantic adjustment
  bool sa_enabled = true;
  double alpha = 1.0;
  Orientation orientation = Orientation::Rows;
  double epsilon = 1.0;

  // balanced predicate learning
  int m = 3;
  std::int64_t n = 200;
  SamplingStrategy strategy = SamplingStrategy::Random;
  std::string ic_source = "dataset";  // dataset | corpus
  double ic_base = 2.0;

  // evaluation
  std::vector<int> eval_ks = {20, 50, 100};
  std::vector<std::string> eval_ic_sources = {"dataset"};

  std::string config_path;
  std::string raw_text;

  static PipelineConfig from_json(const nlohmann::json& j) {
    check_keys(j, {"seed", "paths", "model", "sa", "bpl", "eval"}, "config");
    PipelineConfig c;
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("paths")) {
      const auto& p = j.at("paths");
      check_keys(p,
                 {"out_dir", "synth_config", "dataset", "object_vocab", "predicate_vocab",
                  "corpus_counts", "split"},
                 "paths");
      if (p.contains("out_dir")) c.out_dir = p.at("out_dir").get<std::string>();
      if (p.contains("synth_config")) c.synth_config_path = p.at("synth_config").get<std::string>();
      if (p.contains("dataset")) c.dataset_path = p.at("dataset").get<std::string>();
      if (p.contains("object_vocab")) c.object_vocab_path = p.at("object_vocab").get<std::string>();
      if (p.contains("predicate_vocab"))
        c.predicate_vocab_path = p.at("predicate_vocab").get<std::string>();
      if (p.contains("corpus_counts"))
        c.corpus_counts_path = p.at("corpus_counts").get<std::string>();
      if (p.contains("split")) {
        const auto& s = p.at("split");
        check_keys(s, {"train", "val", "test", "seed"}, "paths.split");
        c.split_fractions.train = s.at("train").get<double>();
        c.split_fractions.val = s.at("val").get<double>();
        c.split_fractions.test = s.at("test").get<double>();
        if (s.contains("seed")) c.split_seed = s.at("seed").get<std::uint64_t>();
      }
    }
    if (j.contains("model")) {
      const auto& m = j.at("model");
      check_keys(m, {"hidden", "source", "finetune", "finetune_freeze"}, "model");
      if (m.contains("hidden")) c.hidden = m.at("hidden").get<int>();
      if (m.contains("source"))
        c.source_train = StageTrainParams::from_json(m.at("source"), "model.source");
      if (m.contains("finetune"))
        c.finetune_train = StageTrainParams::from_json(m.at("finetune"), "model.finetune");
      if (m.contains("finetune_freeze")) c.finetune_freeze = m.at("finetune_freeze").get<bool>();
    }
    if (j.contains("sa")) {
      const auto& s = j.at("sa");
      check_keys(s, {"enabled", "alpha", "orientation", "epsilon"}, "sa");
      if (s.contains("enabled")) c.sa_enabled = s.at("enabled").get<bool>();
      if (s.contains("alpha")) c.alpha = s.at("alpha").get<double>();
      if (s.contains("orientation"))
        c.orientation = orientation_from_string(s.at("orientation").get<std::string>());
      if (s.contains("epsilon")) c.epsilon = s.at("epsilon").get<double>();
    }
    if (j.contains("bpl")) {
      const auto& b = j.at("bpl");
      check_keys(b, {"m", "n", "strategy", "ic_source", "ic_base"}, "bpl");
      if (b.contains("m")) c.m = b.at("m").get<int>();
      if (b.contains("n")) c.n = b.at("n").get<std::int64_t>();
      if (b.contains("strategy"))
        c.strategy = strategy_from_string(b.at("strategy").get<std::string>());
      if (b.contains("ic_source")) c.ic_source = b.at("ic_source").get<std::string>();
      if (b.contains("ic_base")) c.ic_base = b.at("ic_base").get<double>();
    }
    if (j.contains("eval")) {
      const auto& e = j.at("eval");
      check_keys(e, {"k", "ic_sources"}, "eval");
      if (e.contains("k")) c.eval_ks = e.at("k").get<std::vector<int>>();
      if (e.contains("ic_sources"))
        c.eval_ic_sources = e.at("ic_sources").get<std::vector<std::string>>();
    }
    c.validate();
    return c;
  }

  void validate() const {
    if (!synth_config_path && !dataset_path)
      throw ConfigError("config must name either paths.synth_config or paths.dataset");
    if (synth_config_path && dataset_path)
      throw ConfigError("paths.synth_config and paths.dataset are mutually exclusive");
    if (dataset_path && (!object_vocab_path || !predicate_vocab_path))
      throw ConfigError("paths.dataset requires object_vocab and predicate_vocab");
    if (hidden < 1) throw ConfigError("model.hidden must be positive");
    if (alpha < 0) throw InvalidAlpha("sa.alpha must be >= 0");
    if (epsilon < 0) throw ConfigError("sa.epsilon must be >= 0");
    if (m < 1) throw InvalidM("bpl.m must be at least 1");
    if (n < 1) throw ConfigError("bpl.n must be at least 1");
    if (ic_source != "dataset" && ic_source != "corpus")
      throw ConfigError("bpl.ic_source must be dataset or corpus");
    if (eval_ks.empty()) throw ConfigError("eval.k must list at least one cutoff");
    for (int k : eval_ks)
      if (k < 1) throw ConfigError("eval.k entries must be positive");
    if (eval_ic_sources.empty())
      throw ConfigError("eval.ic_sources must list at least one information source");
    for (const auto& src : eval_ic_sources)
      if (src != "dataset" && src != "corpus")
        throw ConfigError("eval.ic_sources entries must be dataset or corpus");
    if ((ic_source == "corpus" ||
         std::find(eval_ic_sources.begin(), eval_ic_sources.end(), "corpus") !=
             eval_ic_sources.end()) &&
        !corpus_counts_path)
      throw ConfigError("corpus information source requires paths.corpus_counts");
  }

  static PipelineConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    nlohmann::json j = nlohmann::json::parse(buf.str(), nullptr, false);
    if (j.is_discarded()) throw ConfigError("config file is not valid JSON: " + path);
    PipelineConfig c = from_json(j);
    c.config_path = path;
    c.raw_text = buf.str();
    return c;
  }

  nlohmann::ordered_json echo() const {
    nlohmann::ordered_json j;
    j["seed"] = seed;
    auto& p = j["paths"] = nlohmann::ordered_json::object();
    p["out_dir"] = out_dir;
    if (synth_config_path) p["synth_config"] = *synth_config_path;
    if (dataset_path) {
      p["dataset"] = *dataset_path;
      p["object_vocab"] = *object_vocab_path;
      p["predicate_vocab"] = *predicate_vocab_path;
      p["split"] = {{"train", split_fractions.train},
                    {"val", split_fractions.val},
                    {"test", split_fractions.test},
                    {"seed", split_seed}};
    }
    if (corpus_counts_path) p["corpus_counts"] = *corpus_counts_path;
    j["model"] = {{"hidden", hidden},
                  {"source", source_train.to_json()},
                  {"finetune", finetune_train.to_json()},
                  {"finetune_freeze", finetune_freeze}};
    j["sa"] = {{"enabled", sa_enabled},
               {"alpha", alpha},
               {"orientation", to_string(orientation)},
               {"epsilon", epsilon}};
    j["bpl"] = {{"m", m},
                {"n", n},
                {"strategy", to_string(strategy)},
                {"ic_source", ic_source},
                {"ic_base", ic_base}};
    j["eval"] = {{"k", eval_ks}, {"ic_sources", eval_ic_sources}};
    return j;
  }

  // conventional stage artifact locations under out_dir
  std::string data_dir() const { return out_dir + "/data"; }
  std::string train_file() const { return data_dir() + "/train.jsonl"; }
  std::string val_file() const { return data_dir() + "/val.jsonl"; }
  std::string test_file() const { return data_dir() + "/test.jsonl"; }
  std::string objects_file() const { return data_dir() + "/objects.txt"; }
  std::string predicates_file() const { return data_dir() + "/predicates.txt"; }
  std::string parent_map_file() const { return data_dir() + "/parent_map.json"; }
  std::string stats_file() const { return data_dir() + "/stats.json"; }
  std::string stage1_dir() const { return out_dir + "/stage1"; }
  std::string stage1_checkpoint() const { return stage1_dir() + "/checkpoint.json"; }
  std::string stage1_loss() const { return stage1_dir() + "/loss_history.json"; }
  std::string transition_dir() const { return out_dir + "/transition"; }
  std::string freq_model_file() const { return transition_dir() + "/freq_model.json"; }
  std::string confusion_csv() const { return transition_dir() + "/confusion.csv"; }
  std::string c_prime_csv() const { return transition_dir() + "/c_prime.csv"; }
  std::string c_star_csv() const { return transition_dir() + "/c_star.csv"; }
  std::string transition_file() const { return transition_dir() + "/transition.json"; }
  std::string target_dir() const { return out_dir + "/target"; }
  std::string target_file() const { return target_dir() + "/target.jsonl"; }
  std::string domain_spec_file() const { return target_dir() + "/domain_spec.json"; }
  std::string stage2_dir() const { return out_dir + "/stage2"; }
  std::string stage2_checkpoint() const { return stage2_dir() + "/checkpoint.json"; }
  std::string stage2_loss() const { return stage2_dir() + "/loss_history.json"; }
  std::string eval_dir() const { return out_dir + "/eval"; }
  std::string ablate_dir() const { return out_dir + "/ablate"; }
  std::string report_dir() const { return out_dir + "/report"; }
};

// -- data loading -----------------------------------------------------------

struct LoadedData {
  ObjectVocab objects;
  PredicateVocab predicates;
  Dataset train;
  Dataset val;
  Dataset test;
  std::optional<ParentMap> parents;
  std::map<std::string, std::string> input_hashes;  // path -> content hash
};

inline LoadedData load_pipeline_data(const PipelineConfig& cfg) {
  if (cfg.synth_config_path) {
    if (!fsys::exists(cfg.train_file()))
      throw DataError("synthetic data not found under " + cfg.data_dir() +
                      "; run the synth stage first");
    ObjectVocab objects = ObjectVocab::load(cfg.objects_file());
    PredicateVocab predicates = PredicateVocab::load(cfg.predicates_file());
    // val/test may legitimately be empty (zero-image splits); train may not
    auto load_split = [&](const std::string& path, const char* tag) {
      if (fsys::file_size(path) == 0) return Dataset(objects, predicates, {}, tag);
      return load_dataset(path, objects, predicates, tag);
    };
    Dataset train = load_dataset(cfg.train_file(), objects, predicates, "train");
    Dataset val = load_split(cfg.val_file(), "val");
    Dataset test = load_split(cfg.test_file(), "test");
    std::optional<ParentMap> parents;
    if (fsys::exists(cfg.parent_map_file()))
      parents = ParentMap::from_json(read_json_file(cfg.parent_map_file()), predicates);
    std::map<std::string, std::string> hashes;
    for (const auto& p : {cfg.train_file(), cfg.val_file(), cfg.test_file(), cfg.objects_file(),
                          cfg.predicates_file()})
      hashes[p] = file_content_hash(p);
    return LoadedData{std::move(objects), std::move(predicates), std::move(train), std::move(val),
                      std::move(test), std::move(parents), std::move(hashes)};
  }
  ObjectVocab objects = ObjectVocab::load(*cfg.object_vocab_path);
  PredicateVocab predicates = PredicateVocab::load(*cfg.predicate_vocab_path);
  Dataset all = load_dataset(*cfg.dataset_path, objects, predicates, "dataset");
  auto parts = split(all, cfg.split_fractions, cfg.split_seed);
  std::map<std::string, std::string> hashes;
  for (const auto& p : {*cfg.dataset_path, *cfg.object_vocab_path, *cfg.predicate_vocab_path})
    hashes[p] = file_content_hash(p);
  return LoadedData{std::move(objects),   std::move(predicates), std::move(parts[0]),
                    std::move(parts[1]),  std::move(parts[2]),   std::nullopt,
                    std::move(hashes)};
}

// -- stage: synth -------------------------------------------------------------

inline nlohmann::ordered_json split_stats(const Dataset& ds, const PredicateVocab& predicates) {
  nlohmann::ordered_json j;
  j["images"] = ds.image_count();
  j["triplets"] = ds.size();
  auto& counts = j["predicate_counts"] = nlohmann::ordered_json::object();
  if (!ds.empty()) {
    const FrequencyTable f = predicate_frequencies(ds);
    for (int k = 0; k < predicates.size(); ++k)
      counts[predicates.name(k)] = f.counts[static_cast<std::size_t>(k)];
  }
  return j;
}

inline void cmd_synth(const PipelineConfig& cfg) {
  if (!cfg.synth_config_path)
    throw ConfigError("synth requires paths.synth_config in the pipeline config");
  const SynthConfig sc = SynthConfig::from_json(read_json_file(*cfg.synth_config_path));
  const std::uint64_t synth_seed = derive_seed(cfg.seed, seed_stream::synth);
  const SyntheticBundle bundle = generate_synthetic(sc, synth_seed);

  fsys::create_directories(cfg.data_dir());
  bundle.dataset.objects().save(cfg.objects_file());
  bundle.dataset.predicates().save(cfg.predicates_file());
  const Dataset train = bundle.train();
  const Dataset val = bundle.val();
  const Dataset test = bundle.test();
  save_dataset(train, cfg.train_file());
  save_dataset(val, cfg.val_file());
  save_dataset(test, cfg.test_file());
  write_json_file(cfg.parent_map_file(), bundle.parents.to_json(bundle.dataset.predicates()));

  nlohmann::ordered_json stats;
  stats["synth_config"] = sc.to_json();
  stats["seed"] = synth_seed;
  stats["train"] = split_stats(train, bundle.dataset.predicates());
  stats["val"] = split_stats(val, bundle.dataset.predicates());
  stats["test"] = split_stats(test, bundle.dataset.predicates());
  std::int64_t root_labels = 0;
  for (const Triplet& t : train.triplets())
    if (bundle.parents.is_root(t.pred)) ++root_labels;
  stats["root_share_train"] =
      static_cast<double>(root_labels) / static_cast<double>(train.size());
  write_json_file(cfg.stats_file(), stats);
}

// -- stage: train-source -------------------------------------------------------

inline void write_loss_history(const std::string& path, const std::vector<double>& loss) {
  nlohmann::ordered_json j;
  j["epochs"] = loss.size();
  j["loss"] = loss;
  write_json_file(path, j);
}

inline void cmd_train_source(const PipelineConfig& cfg) {
  const LoadedData data = load_pipeline_data(cfg);
  HeadModel model = HeadModel::init(data.objects.size(), data.predicates.size(), cfg.hidden,
                                    derive_seed(cfg.seed, seed_stream::model_init));
  TrainConfig tc;
  tc.epochs = cfg.source_train.epochs;
  tc.batch_size = cfg.source_train.batch_size;
  tc.step_size = cfg.source_train.step_size;
  tc.momentum = cfg.source_train.momentum;
  tc.seed = derive_seed(derive_seed(cfg.seed, seed_stream::source_train), cfg.source_train.seed);
  const TrainResult result = train(model, data.train, tc);
  fsys::create_directories(cfg.stage1_dir());
  result.model.save(cfg.stage1_checkpoint());
  write_loss_history(cfg.stage1_loss(), result.loss_history);
}

// -- stage: build-transition ----------------------------------------------------

inline void cmd_build_transition(const PipelineConfig& cfg) {
  const LoadedData data = load_pipeline_data(cfg);
  const FreqModel freq = FreqModel::fit(data.train, cfg.epsilon);
  fsys::create_directories(cfg.transition_dir());
  freq.save(cfg.freq_model_file());

  std::vector<int> gold;
  std::vector<int> predicted;
  gold.reserve(data.train.size());
  predicted.reserve(data.train.size());
  for (const Triplet& t : data.train.triplets()) {
    gold.push_back(t.pred);
    predicted.push_back(freq.predict(t.subj, t.obj));
  }
  const ConfusionMatrix confusion = build_confusion(gold, predicted, data.predicates.size());
  const std::vector<double> c_prime = row_normalize(confusion);
  const std::string provenance = "freq_model(eps=" + std::to_string(cfg.epsilon) + ") on " +
                                 data.train.tag() + "@" +
                                 hex64(fnv1a64_span(gold.data(), gold.size()));
  const TransitionMatrix c_star =
      TransitionMatrix::build(c_prime, data.predicates.size(), cfg.alpha, provenance);

  const auto& names = data.predicates.names();
  write_confusion_csv(cfg.confusion_csv(), confusion, names);
  write_matrix_csv(cfg.c_prime_csv(), c_prime, data.predicates.size(), names);
  write_matrix_csv(cfg.c_star_csv(), c_star.values(), data.predicates.size(), names);
  c_star.save(cfg.transition_file(), &data.predicates);
}

// -- stage: build-target ---------------------------------------------------------

inline FrequencyTable ic_source_frequencies(const PipelineConfig& cfg, const LoadedData& data,
                                            const std::string& source) {
  if (source == "dataset") return predicate_frequencies(data.train);
  if (source == "corpus") {
    if (!cfg.corpus_counts_path)
      throw ConfigError("corpus information source requires paths.corpus_counts");
    return load_corpus_counts(*cfg.corpus_counts_path, data.predicates);
  }
  throw ConfigError("unknown information source: " + source);
}

inline void cmd_build_target(const PipelineConfig& cfg) {
  const LoadedData data = load_pipeline_data(cfg);
  const ICTable ic = information_content(ic_source_frequencies(cfg, data, cfg.ic_source),
                                         cfg.ic_base);
  DomainSpec spec = partition(ic, cfg.m);
  spec.n = cfg.n;
  spec.strategy = cfg.strategy;
  spec.seed = derive_seed(cfg.seed, seed_stream::target_sampling);

  std::optional<HeadModel> stage1;
  std::optional<HeadScorer> scorer;
  if (spec.strategy == SamplingStrategy::Confidence) {
    if (!fsys::exists(cfg.stage1_checkpoint()))
      throw MissingModel("confidence undersampling requires the stage-1 checkpoint");
    stage1 = HeadModel::load(cfg.stage1_checkpoint());
    scorer.emplace(*stage1);
  }
  const Dataset target = build_target_domain(data.train, spec, scorer ? &*scorer : nullptr);

  fsys::create_directories(cfg.target_dir());
  save_dataset(target, cfg.target_file());

  nlohmann::ordered_json audit = spec.to_json(data.predicates);
  audit["ic_source"] = ic.source_name;
  audit["ic_base"] = ic.base;
  const FrequencyTable kept = predicate_frequencies(target);
  auto& kept_counts = audit["kept_counts"] = nlohmann::ordered_json::object();
  auto& source_counts = audit["source_counts"] = nlohmann::ordered_json::object();
  const FrequencyTable source_freq = predicate_frequencies(data.train);
  for (int k = 0; k < data.predicates.size(); ++k) {
    kept_counts[data.predicates.name(k)] = kept.counts[static_cast<std::size_t>(k)];
    source_counts[data.predicates.name(k)] = source_freq.counts[static_cast<std::size_t>(k)];
  }
  auto& ic_values = audit["ic"] = nlohmann::ordered_json::object();
  for (int k = 0; k < data.predicates.size(); ++k)
    ic_values[data.predicates.name(k)] = ic.ic[static_cast<std::size_t>(k)];
  write_json_file(cfg.domain_spec_file(), audit);
}

// -- stage: finetune ---------------------------------------------------------------

inline TrainConfig finetune_train_config(const PipelineConfig& cfg,
                                         const std::optional<TransitionMatrix>& transition) {
  TrainConfig tc;
  tc.epochs = cfg.finetune_train.epochs;
  tc.batch_size = cfg.finetune_train.batch_size;
  tc.step_size = cfg.finetune_train.step_size;
  tc.momentum = cfg.finetune_train.momentum;
  tc.seed =
      derive_seed(derive_seed(cfg.seed, seed_stream::finetune_train), cfg.finetune_train.seed);
  tc.freeze_embedding = cfg.finetune_freeze;
  tc.orientation = cfg.orientation;
  if (transition) tc.transition = *transition;
  return tc;
}

inline void cmd_finetune(const PipelineConfig& cfg,
                         std::optional<std::string> checkpoint_path = std::nullopt,
                         std::optional<std::string> target_path = std::nullopt,
                         std::optional<std::string> transition_path = std::nullopt) {
  const LoadedData data = load_pipeline_data(cfg);
  const std::string ckpt = checkpoint_path.value_or(cfg.stage1_checkpoint());
  if (!fsys::exists(ckpt)) throw DataError("stage-1 checkpoint not found: " + ckpt);
  const HeadModel stage1 = HeadModel::load(ckpt);
  const std::string target_file = target_path.value_or(cfg.target_file());
  if (!fsys::exists(target_file)) throw DataError("target domain not found: " + target_file);
  const Dataset target = load_dataset(target_file, data.objects, data.predicates, "target");

  std::optional<TransitionMatrix> transition;
  if (transition_path) {
    transition = TransitionMatrix::load(*transition_path);
  } else if (cfg.sa_enabled) {
    if (!fsys::exists(cfg.transition_file()))
      throw DataError("sa.enabled but transition not found: " + cfg.transition_file() +
                      "; run build-transition first");
    transition = TransitionMatrix::load(cfg.transition_file());
  }
  const TrainResult result = train(stage1, target, finetune_train_config(cfg, transition));
  fsys::create_directories(cfg.stage2_dir());
  result.model.save(cfg.stage2_checkpoint());
  write_loss_history(cfg.stage2_loss(), result.loss_history);
}

// -- stage: eval --------------------------------------------------------------------

struct MetricsReport {
  std::string tag;
  EvalResult eval;
  std::map<std::string, ICTable> ic_tables;  // per information source
  nlohmann::ordered_json document;           // full JSON report
};

inline nlohmann::ordered_json metrics_json(const PipelineConfig& cfg, const std::string& tag,
                                           const EvalResult& r,
                                           const std::map<std::string, ICTable>& ic_tables,
                                           const LoadedData& data,
                                           const nlohmann::ordered_json& scorer_desc) {
  nlohmann::ordered_json j;
  j["tag"] = tag;
  j["config_echo"] = cfg.echo();
  j["config_text"] = cfg.raw_text;
  auto& inputs = j["inputs"] = nlohmann::ordered_json::array();
  for (const auto& [path, hash] : data.input_hashes)
    inputs.push_back({{"path", path}, {"fnv1a64", hash}});
  j["scorer"] = scorer_desc;
  if (fsys::exists(cfg.domain_spec_file()))
    j["domain_spec"] = read_json_file(cfg.domain_spec_file());
  else
    j["domain_spec"] = nullptr;
  j["images"] = r.images;
  j["ks"] = r.ks;
  auto per_k = [&](const std::vector<double>& v) {
    nlohmann::ordered_json o = nlohmann::ordered_json::object();
    for (std::size_t i = 0; i < r.ks.size(); ++i) o[std::to_string(r.ks[i])] = v[i];
    return o;
  };
  auto& metrics = j["metrics"] = nlohmann::ordered_json::object();
  metrics["R"] = per_k(r.recall);
  metrics["mR"] = per_k(r.mean_recall);
  auto& mric_out = metrics["mRIC"] = nlohmann::ordered_json::object();
  for (const auto& [source, ic] : ic_tables) {
    nlohmann::ordered_json o = nlohmann::ordered_json::object();
    for (std::size_t i = 0; i < r.ks.size(); ++i)
      o[std::to_string(r.ks[i])] = mric(r.per_pred_recall[i], r.present, ic);
    mric_out[source] = std::move(o);
  }
  auto& per_pred = j["per_predicate"] = nlohmann::ordered_json::array();
  for (int p = 0; p < data.predicates.size(); ++p) {
    const auto pi = static_cast<std::size_t>(p);
    nlohmann::ordered_json row;
    row["name"] = data.predicates.name(p);
    row["gold"] = r.gold_counts[pi];
    if (r.present[pi]) {
      nlohmann::ordered_json rec = nlohmann::ordered_json::object();
      for (std::size_t i = 0; i < r.ks.size(); ++i)
        rec[std::to_string(r.ks[i])] = r.per_pred_recall[i][pi];
      row["recall"] = std::move(rec);
    } else {
      row["recall"] = nullptr;  // absent from test gold; excluded from means
    }
    auto& ics = row["ic"] = nlohmann::ordered_json::object();
    for (const auto& [source, ic] : ic_tables) ics[source] = ic.ic[pi];
    per_pred.push_back(std::move(row));
  }
  return j;
}

inline void write_metrics_csv(const std::string& path, const std::string& tag,
                              const EvalResult& r,
                              const std::map<std::string, ICTable>& ic_tables) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write metrics csv: " + path);
  out << "tag,K,R,mR";
  for (const auto& [source, ic] : ic_tables) {
    (void)ic;
    out << ",mRIC(" << source << ")";
  }
  out << "\n";
  out.precision(17);
  for (std::size_t i = 0; i < r.ks.size(); ++i) {
    out << tag << "," << r.ks[i] << "," << r.recall[i] << "," << r.mean_recall[i];
    for (const auto& [source, ic] : ic_tables)
      out << "," << mric(r.per_pred_recall[i], r.present, ic);
    out << "\n";
  }
}

// Evaluates a checkpoint (stage-2 by default, stage-1 otherwise) on the test
// split. SA follows the model configuration unless overridden.
inline MetricsReport cmd_eval(const PipelineConfig& cfg, const std::string& tag = "model",
                              std::optional<std::string> checkpoint_path = std::nullopt,
                              std::optional<std::string> transition_path = std::nullopt,
                              std::optional<bool> sa_override = std::nullopt) {
  const LoadedData data = load_pipeline_data(cfg);
  std::string ckpt;
  if (checkpoint_path) {
    ckpt = *checkpoint_path;
  } else if (fsys::exists(cfg.stage2_checkpoint())) {
    ckpt = cfg.stage2_checkpoint();
  } else if (fsys::exists(cfg.stage1_checkpoint())) {
    ckpt = cfg.stage1_checkpoint();
  } else {
    throw DataError("no checkpoint found; run train-source or finetune first");
  }
  const HeadModel model = HeadModel::load(ckpt);

  const bool use_sa = sa_override.value_or(cfg.sa_enabled || transition_path.has_value());
  std::optional<TransitionMatrix> transition;
  if (use_sa) {
    const std::string tpath = transition_path.value_or(cfg.transition_file());
    if (!fsys::exists(tpath))
      throw DataError("semantic adjustment requested but transition not found: " + tpath);
    transition = TransitionMatrix::load(tpath);
  }

  const HeadScorer head_scorer(model);
  std::optional<AdjustedScorer> adjusted;
  if (transition) adjusted.emplace(head_scorer, *transition, cfg.orientation);
  const Scorer& scorer = transition ? static_cast<const Scorer&>(*adjusted)
                                    : static_cast<const Scorer&>(head_scorer);

  MetricsReport report;
  report.tag = tag;
  report.eval = evaluate(scorer, data.test, cfg.eval_ks);
  for (const auto& source : cfg.eval_ic_sources)
    report.ic_tables.emplace(
        source, information_content(ic_source_frequencies(cfg, data, source), cfg.ic_base));

  nlohmann::ordered_json scorer_desc;
  scorer_desc["checkpoint"] = ckpt;
  scorer_desc["checkpoint_hash"] = file_content_hash(ckpt);
  if (transition) {
    scorer_desc["transition"] = transition_path.value_or(cfg.transition_file());
    scorer_desc["transition_checksum"] = hex64(transition->checksum());
    scorer_desc["orientation"] = to_string(cfg.orientation);
  } else {
    scorer_desc["transition"] = nullptr;
  }
  report.document = metrics_json(cfg, tag, report.eval, report.ic_tables, data, scorer_desc);

  fsys::create_directories(cfg.eval_dir());
  write_json_file(cfg.eval_dir() + "/metrics_" + tag + ".json", report.document);
  write_metrics_csv(cfg.eval_dir() + "/metrics_" + tag + ".csv", tag, report.eval,
                    report.ic_tables);
  const ICTable& order_ic =
      report.ic_tables.count("dataset") ? report.ic_tables.at("dataset")
                                        : report.ic_tables.begin()->second;
  export_confusion(scorer, data.test, order_ic, cfg.eval_dir() + "/confusion_" + tag + ".csv");
  return report;
}

// -- stage: report ---------------------------------------------------------------

inline void cmd_report(const PipelineConfig& cfg) {
  if (!fsys::exists(cfg.eval_dir()))
    throw DataError("no eval artifacts under " + cfg.eval_dir());
  std::vector<std::string> files;
  for (const auto& entry : fsys::directory_iterator(cfg.eval_dir())) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("metrics_", 0) == 0 && entry.path().extension() == ".json")
      files.push_back(entry.path().string());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no metrics documents under " + cfg.eval_dir());

  // one row per evaluated configuration, one column per metric/K
  fsys::create_directories(cfg.report_dir());
  std::ofstream out(cfg.report_dir() + "/summary.csv");
  if (!out) throw DataError("cannot write report summary");
  out << "tag";
  for (int k : cfg.eval_ks) out << ",R@" << k;
  for (int k : cfg.eval_ks) out << ",mR@" << k;
  for (const auto& source : cfg.eval_ic_sources)
    for (int k : cfg.eval_ks) out << ",mRIC(" << source << ")@" << k;
  out << "\n";
  out.precision(17);
  for (const auto& file : files) {
    const nlohmann::json j = read_json_file(file);
    const auto& metrics = j.at("metrics");
    out << j.at("tag").get<std::string>();
    auto cell = [&](const nlohmann::json& table, int k) {
      const std::string ks = std::to_string(k);
      if (table.contains(ks))
        out << "," << table.at(ks).get<double>();
      else
        out << ",";
    };
    for (int k : cfg.eval_ks) cell(metrics.at("R"), k);
    for (int k : cfg.eval_ks) cell(metrics.at("mR"), k);
    for (const auto& source : cfg.eval_ic_sources)
      for (int k : cfg.eval_ks) {
        if (metrics.at("mRIC").contains(source))
          cell(metrics.at("mRIC").at(source), k);
        else
          out << ",";
      }
    out << "\n";
  }
}

}  // namespace predbal
