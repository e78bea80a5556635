#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "dri/data.hpp"
#include "dri/evaluation.hpp"
#include "dri/trainer.hpp"

namespace dri {

struct CsvSource {
  // May contain "{r}", replaced by the 1-based replication index.
  std::string path;
  CsvSchema schema;
};

struct ExperimentConfig {
  std::optional<SyntheticSpec> synthetic;
  std::optional<CsvSource> csv;
  std::size_t contrasts = 0;  // artificial contrasts appended to a CSV source

  std::string profile = "desk";
  TrainConfig training = TrainConfig::desk();
  PolicyConfig policy;
  std::size_t importance_repeats = 5;
  std::vector<Metric> importance_metrics = {Metric::kBce, Metric::kMse, Metric::kPehe};

  std::size_t replications = 1;
  std::uint64_t base_seed = 1;
  double test_fraction = 0.3;
  std::vector<std::size_t> ablation_omega = {5, 10, 15, 20, 25};

  std::filesystem::path output_dir = "out";
  std::size_t workers = 1;

  void validate() const;
  std::uint64_t replication_seed(std::size_t r) const { return base_seed + r; }
};

// Command-line values that take precedence over the file.
struct ConfigOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> output_dir;
  std::optional<std::size_t> workers;
  std::optional<std::string> profile;
};

// Precedence, lowest first: built-in defaults, the training profile, values in
// the file, command-line overrides.
ExperimentConfig config_from_json(const nlohmann::json& j, const ConfigOverrides& overrides = {});
ExperimentConfig load_config(const std::filesystem::path& path,
                             const ConfigOverrides& overrides = {});
// Everything that determines the outputs; the worker count is left out.
nlohmann::json config_to_json(const ExperimentConfig& cfg);
std::string config_hash(const ExperimentConfig& cfg);

// Dataset of replication r: synthetic draw with the replication seed, or the
// CSV realization, plus any artificial contrasts.
Dataset resolve_dataset(const ExperimentConfig& cfg, std::size_t r);
std::string resolve_path(const std::string& pattern, std::size_t r);

struct PreparedSplit {
  Dataset train;  // covariates standardized with training statistics
  Dataset test;
  ColumnScaler scaler;
};

PreparedSplit prepare_split(const ExperimentConfig& cfg, const Dataset& data, std::size_t r);

struct ReplicationResult {
  std::size_t replication = 0;
  std::uint64_t seed = 0;
  TrainedModel model;
  ColumnScaler scaler;
  EvaluationReport report;
};

// Split, train and evaluate one replication, with no file output.
ReplicationResult run_replication(const ExperimentConfig& cfg, std::size_t r,
                                  bool with_importance);

// Checkpoint with the covariate scaler and replication index.
nlohmann::json replication_checkpoint(const ReplicationResult& result);

struct Summary {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for one value
  std::size_t count = 0;
};
Summary summarize(const std::vector<double>& values);
std::string format_mean_std(const Summary& s);

// Runs job(i) for i in [0, count) on up to `workers` threads. The first
// exception (lowest index) is rethrown after all jobs have finished.
void parallel_for(std::size_t count, std::size_t workers, const std::function<void(std::size_t)>& job);

// Worker count from --workers, else DRI_ITE_WORKERS, else 1.
std::size_t resolve_workers(std::optional<std::size_t> flag);

void cmd_gen_data(const ExperimentConfig& cfg);
void cmd_augment(const ExperimentConfig& cfg);
void cmd_train(const ExperimentConfig& cfg);
// Evaluates every replication's checkpoint under the output directory, or a
// single checkpoint file when given.
void cmd_eval(const ExperimentConfig& cfg, const std::optional<std::filesystem::path>& checkpoint);
void cmd_importance(const ExperimentConfig& cfg,
                    const std::optional<std::filesystem::path>& checkpoint);
void cmd_weights_report(const ExperimentConfig& cfg,
                        const std::optional<std::filesystem::path>& checkpoint);

enum class LossVariant { kBase, kOrth, kFull };
std::string_view loss_variant_name(LossVariant v);
LossWeights variant_weights(const LossWeights& full, LossVariant v);

struct AblationCell {
  LossVariant variant = LossVariant::kFull;
  std::size_t omega = 0;
  std::size_t replication = 0;
  std::uint64_t seed = 0;
  std::optional<double> pehe;
  std::string error;
};

// Configuration of one ablation cell: the loss variant and omega dimension
// applied on top of `cfg`.
ExperimentConfig ablation_cell_config(const ExperimentConfig& cfg, LossVariant v, std::size_t omega);
std::vector<AblationCell> run_ablation(const ExperimentConfig& cfg);
void cmd_ablation(const ExperimentConfig& cfg);

}  // namespace dri
