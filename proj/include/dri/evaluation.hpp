#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "dri/data.hpp"
#include "dri/networks.hpp"
#include "dri/trainer.hpp"

namespace dri {

// Root mean squared difference of predicted and true effects.
double pehe(std::span<const double> ite_hat, std::span<const double> ite_true);

struct PolicyConfig {
  double threshold = 0.0;  // treat when the predicted effect exceeds it

  void validate() const;
};

struct PolicyRisk {
  double risk = 0.0;
  double treat_fraction = 0.0;
  // Set when no unit supports E[Y1 | pi = 1] (resp. E[Y0 | pi = 0]); the
  // corresponding term then contributes 0.
  bool treated_term_missing = false;
  bool control_term_missing = false;
};

// 1 - (E[Y1|pi=1] p(pi=1) + E[Y0|pi=0] p(pi=0)), with the conditional means
// estimated from units whose factual treatment agrees with the policy.
PolicyRisk policy_risk(std::span<const int> t, std::span<const double> y,
                       std::span<const double> ite_hat, const PolicyConfig& cfg = {});

enum class Metric { kBce, kMse, kPehe };
inline constexpr std::array<Metric, 3> kAllMetrics = {Metric::kBce, Metric::kMse, Metric::kPehe};
std::string_view metric_name(Metric m);
Metric metric_from_name(std::string_view name);

// BCE of the treatment head, factual MSE on the original outcome scale, or
// PEHE against the known effects.
double model_metric(const TrainedModel& model, const Dataset& data, Metric metric);

// Produces the row order used to permute one column.
using PermutationFn = std::function<std::vector<std::size_t>(std::size_t n, std::mt19937_64& rng)>;

// Per column: mean metric over `repeats` row permutations of that column
// minus the unpermuted metric. Each column draws from its own stream.
std::vector<double> permutation_importance(const TrainedModel& model, const Dataset& data,
                                           Metric metric, std::size_t repeats,
                                           std::uint64_t seed, const PermutationFn& permute = {});

struct GroupMeans {
  double in_group = 0.0;   // NaN when the encoder's factor has no columns
  double out_group = 0.0;  // NaN when every column belongs to the factor
  std::size_t in_count = 0;
  std::size_t out_count = 0;
};

// Partitions each encoder's weight contribution by whether the column's role
// matches the encoder's factor. Throws DataError for unknown roles.
std::array<GroupMeans, 4> identification_report(const FactorNetworks& nets,
                                                std::span<const FeatureRole> roles);

struct EvaluationOptions {
  PolicyConfig policy;
  std::size_t importance_repeats = 5;
  std::vector<Metric> importance_metrics;  // empty: no permutation importance
  std::uint64_t seed = 1;
  std::string config_hash;
};

struct EvaluationReport {
  std::optional<double> pehe;
  std::optional<PolicyRisk> policy;
  std::map<Metric, std::vector<double>> importance;
  WeightContribution weights;
  std::optional<std::array<GroupMeans, 4>> identification;
  std::vector<FeatureRole> roles;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::size_t units = 0;
};

EvaluationReport evaluate(const TrainedModel& model, const Dataset& data,
                          const EvaluationOptions& options);

nlohmann::json report_to_json(const EvaluationReport& report);
// Tidy rows: feature_index,role,metric,value
void write_importance_csv(const std::filesystem::path& path, const EvaluationReport& report);
// Tidy rows: feature_index,role,encoder,value
void write_weights_csv(const std::filesystem::path& path, const EvaluationReport& report);

// 64-bit FNV-1a of a string, as 16 hex digits.
std::string fnv1a_hex(std::string_view text);

}  // namespace dri
