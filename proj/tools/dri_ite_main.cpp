// dri-ite: command-line front end for data generation, training, evaluation
// and the loss ablation.
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "dri/error.hpp"
#include "dri/experiment.hpp"

namespace {

enum ExitCode { kOk = 0, kConfig = 1, kData = 2, kNumeric = 3 };

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Disentangled-representation ITE estimation"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> workers;
  std::optional<std::string> profile;
  std::optional<std::string> checkpoint;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "experiment config (JSON)")->required();
    cmd->add_option("--seed", seed, "base seed; replication r uses seed + r");
    cmd->add_option("--out", out, "output directory");
    cmd->add_option("--workers", workers, "concurrent replications (default: DRI_ITE_WORKERS or 1)");
    cmd->add_option("--profile", profile, "training profile")
        ->check(CLI::IsMember({"paper", "desk"}));
  };

  auto* gen = app.add_subcommand("gen-data", "write synthetic datasets and a manifest");
  auto* augment = app.add_subcommand("augment", "append artificial contrasts and write datasets");
  auto* train = app.add_subcommand("train", "train every replication");
  auto* eval = app.add_subcommand("eval", "evaluate trained checkpoints");
  auto* importance = app.add_subcommand("importance", "permutation feature importance");
  auto* weights = app.add_subcommand("weights-report", "encoder weight contributions");
  auto* ablation = app.add_subcommand("ablation", "loss ablation over the omega grid");
  for (auto* cmd : {gen, augment, train, eval, importance, weights, ablation}) add_common(cmd);
  for (auto* cmd : {eval, importance, weights}) {
    cmd->add_option("--checkpoint", checkpoint, "single checkpoint instead of the output directory");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    dri::ConfigOverrides ov;
    ov.seed = seed;
    if (out) ov.output_dir = *out;
    ov.workers = dri::resolve_workers(workers);
    ov.profile = profile;
    const dri::ExperimentConfig cfg = dri::load_config(config_path, ov);
    std::optional<std::filesystem::path> ckpt;
    if (checkpoint) ckpt = *checkpoint;

    if (*gen) dri::cmd_gen_data(cfg);
    if (*augment) dri::cmd_augment(cfg);
    if (*train) dri::cmd_train(cfg);
    if (*eval) dri::cmd_eval(cfg, ckpt);
    if (*importance) dri::cmd_importance(cfg, ckpt);
    if (*weights) dri::cmd_weights_report(cfg, ckpt);
    if (*ablation) dri::cmd_ablation(cfg);
  } catch (const dri::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const dri::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const dri::ShapeError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const dri::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfig;
  }
  return kOk;
}
