#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "dri/adam.hpp"
#include "dri/data.hpp"
#include "dri/losses.hpp"
#include "dri/networks.hpp"
#include "dri/sinkhorn.hpp"

namespace dri {

struct TrainConfig {
  LossWeights weights;
  std::size_t batch_size = 256;
  std::size_t max_epochs = 1000;
  double learning_rate = 1e-4;
  AdamConfig adam;
  std::size_t eval_every = 10;
  std::uint64_t seed = 1;
  SinkhornConfig sinkhorn;
  std::size_t latent_dim = 15;
  std::size_t head_hidden = 100;
  std::size_t decoder_hidden = 100;
  double validation_fraction = 0.2;

  // Settings reported for the original experiments.
  static TrainConfig paper();
  // Shorter schedule with a larger step, used for the acceptance runs.
  static TrainConfig desk();
  static TrainConfig profile(const std::string& name);

  NetworkShape network_shape(std::size_t covariate_dim) const;
  void validate() const;
};

nlohmann::json train_config_to_json(const TrainConfig& cfg);
// Missing keys keep the values of `base`.
TrainConfig train_config_from_json(const nlohmann::json& j, const TrainConfig& base);

// Loss components on outcome-standardized data; unweighted.
struct LossComponents {
  double regression = 0.0;
  double classification = 0.0;
  double discrepancy = 0.0;
  double reconstruction = 0.0;
  double orthogonality = 0.0;
  double regularization = 0.0;
  double total = 0.0;
};

struct HistoryRow {
  std::size_t epoch = 0;
  LossComponents losses;  // over the training portion
  double pehe_nn = 0.0;   // on the validation portion
};

struct TrainedModel {
  FactorNetworks nets;  // best checkpoint
  OutcomeScaler outcome_scaler;
  std::vector<HistoryRow> history;
  double selection_score = 0.0;
  std::size_t best_epoch = 0;
  TrainConfig config;
};

struct TrainProgress {
  std::size_t epoch = 0;
  double pehe_nn = 0.0;
  double best = 0.0;
};
using ProgressCallback = std::function<void(const TrainProgress&)>;

struct ObjectiveNodes {
  LossParts parts{};
  NodeId total{};
};

// The per-batch objective on an existing graph. Upsilon embeddings are
// standardized before the discrepancy; the discrepancy is a constant zero when
// the batch holds a single group, or when beta is zero and full_report is off.
ObjectiveNodes build_objective(Graph& graph, const BoundNetworks& nets, NodeId x,
                               std::span<const int> t, NodeId y_scaled, const TrainConfig& cfg,
                               bool full_report);

// Minibatch Adam on the full objective with best-checkpoint selection by
// nearest-neighbor PEHE on a stratified validation split. Covariates are
// expected to be standardized already.
TrainedModel train(const Dataset& data, const TrainConfig& cfg,
                   const ProgressCallback& progress = {});

// Components for fixed networks on (x, t, y) with y already outcome-scaled.
LossComponents evaluate_losses(const FactorNetworks& nets, const Tensor& x,
                               std::span<const int> t, std::span<const double> y_scaled,
                               const TrainConfig& cfg);

struct Predictions {
  std::vector<double> y1;
  std::vector<double> y0;
  std::vector<double> ite;
  std::vector<double> propensity;
};

// Outcomes on the original scale.
Predictions predict_ite(const TrainedModel& model, const Tensor& x);

// For every unit the lowest-index unit of the opposite group at minimal
// Euclidean distance. Throws DataError if a group is empty.
std::vector<std::size_t> nearest_opposite(const Tensor& x, std::span<const int> t);

// PEHE of `ite_hat` against surrogate effects built from each unit's
// nearest opposite-group factual outcome.
double pehe_nn(std::span<const double> ite_hat, std::span<const int> t, std::span<const double> y,
               std::span<const std::size_t> neighbors);
double pehe_nn(std::span<const double> ite_hat, const Tensor& x, std::span<const int> t,
               std::span<const double> y);
double pehe_nn(const TrainedModel& model, const Dataset& split);

// ---- checkpoints ----

nlohmann::json checkpoint_to_json(const TrainedModel& model);
TrainedModel checkpoint_from_json(const nlohmann::json& doc);
void write_history_csv(const std::filesystem::path& path, std::span<const HistoryRow> history);

}  // namespace dri
