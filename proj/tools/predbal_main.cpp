// Pipeline driver: three-stage balanced predicate learning around a trainable
// predicate classifier, with confusion-derived score adjustment and a
// recall/information-content evaluation harness. Stages communicate only
// through files under the output directory.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "predbal/predbal.hpp"

namespace {

struct GlobalArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
};

predbal::PipelineConfig load_config(const GlobalArgs& g) {
  predbal::PipelineConfig cfg = predbal::PipelineConfig::load(g.config_path);
  if (g.seed) cfg.seed = *g.seed;
  if (g.out_dir) cfg.out_dir = *g.out_dir;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Balanced predicate learning pipeline"};
  app.require_subcommand(1);

  GlobalArgs global;
  app.add_option("--config", global.config_path, "Pipeline config (JSON)")->required();
  app.add_option("--seed", global.seed, "Master seed (overrides config)");
  app.add_option("--out", global.out_dir, "Output directory (overrides config)");

  auto* synth = app.add_subcommand("synth", "Generate synthetic datasets with a known ontology");
  auto* train_source = app.add_subcommand("train-source", "Stage 1: train on the source domain");
  auto* build_transition =
      app.add_subcommand("build-transition", "Build the confusion-derived transition matrix");
  auto* build_target =
      app.add_subcommand("build-target", "Stage 2: construct the balanced target domain");
  auto* finetune = app.add_subcommand("finetune", "Stage 3: finetune on the target domain");
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  auto* ablate = app.add_subcommand("ablate", "Run a named comparison sweep");
  auto* report = app.add_subcommand("report", "Aggregate eval metrics into a summary table");

  std::optional<std::string> ft_checkpoint, ft_target, ft_transition;
  finetune->add_option("--checkpoint", ft_checkpoint, "Stage-1 checkpoint (default: out/stage1)");
  finetune->add_option("--target", ft_target, "Target-domain dataset (default: out/target)");
  finetune->add_option("--transition", ft_transition,
                       "Transition matrix (default: out/transition when sa.enabled)");

  std::string eval_tag = "model";
  std::optional<std::string> eval_checkpoint, eval_transition;
  bool eval_sa = false, eval_no_sa = false;
  eval->add_option("--tag", eval_tag, "Row label for the metrics artifacts");
  eval->add_option("--checkpoint", eval_checkpoint,
                   "Checkpoint to score (default: stage2, then stage1)");
  eval->add_option("--transition", eval_transition, "Transition matrix to apply");
  eval->add_flag("--sa", eval_sa, "Apply semantic adjustment regardless of config");
  eval->add_flag("--no-sa", eval_no_sa, "Skip semantic adjustment regardless of config");

  std::string which;
  ablate->add_option("--which", which,
                     "alpha|transition-variant|strategy|training-approach|ic-source|orientation")
      ->required();

  CLI11_PARSE(app, argc, argv);

  try {
    const predbal::PipelineConfig cfg = load_config(global);
    if (synth->parsed()) {
      predbal::cmd_synth(cfg);
      std::cout << "wrote " << cfg.data_dir() << "\n";
    } else if (train_source->parsed()) {
      predbal::cmd_train_source(cfg);
      std::cout << "wrote " << cfg.stage1_checkpoint() << "\n";
    } else if (build_transition->parsed()) {
      predbal::cmd_build_transition(cfg);
      std::cout << "wrote " << cfg.transition_file() << "\n";
    } else if (build_target->parsed()) {
      predbal::cmd_build_target(cfg);
      std::cout << "wrote " << cfg.target_file() << "\n";
    } else if (finetune->parsed()) {
      predbal::cmd_finetune(cfg, ft_checkpoint, ft_target, ft_transition);
      std::cout << "wrote " << cfg.stage2_checkpoint() << "\n";
    } else if (eval->parsed()) {
      if (eval_sa && eval_no_sa) throw predbal::ConfigError("--sa and --no-sa are exclusive");
      std::optional<bool> sa_override;
      if (eval_sa) sa_override = true;
      if (eval_no_sa) sa_override = false;
      const auto metrics = predbal::cmd_eval(cfg, eval_tag, eval_checkpoint, eval_transition,
                                             sa_override);
      std::cout << "wrote " << cfg.eval_dir() << "/metrics_" << eval_tag << ".json\n";
      for (std::size_t i = 0; i < metrics.eval.ks.size(); ++i)
        std::cout << "K=" << metrics.eval.ks[i] << "  R=" << metrics.eval.recall[i]
                  << "  mR=" << metrics.eval.mean_recall[i] << "\n";
    } else if (ablate->parsed()) {
      const std::string path = predbal::cmd_ablate(cfg, which);
      std::cout << "wrote " << path << "\n";
    } else if (report->parsed()) {
      predbal::cmd_report(cfg);
      std::cout << "wrote " << cfg.report_dir() << "/summary.csv\n";
    }
  } catch (const predbal::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const predbal::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 4;
  } catch (const predbal::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
