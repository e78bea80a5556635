#include "dri/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "dri/config_keys.hpp"
#include "dri/error.hpp"
#include "dri/random.hpp"

namespace dri {
namespace {

struct Objective {
  Graph graph;
  BoundNetworks bound;
  LossParts parts{};
  NodeId total{};
};

std::unique_ptr<Objective> build_batch_objective(const FactorNetworks& nets, const Tensor& x,
                                                 std::span<const int> t,
                                                 std::span<const double> y_scaled,
                                                 const TrainConfig& cfg, bool full_report) {
  auto obj = std::make_unique<Objective>();
  Graph& g = obj->graph;
  obj->bound = bind_parameters(g, nets);
  const NodeId xin = g.input(x);
  const NodeId yin = g.input(Tensor::column({y_scaled.begin(), y_scaled.end()}));
  const ObjectiveNodes nodes = build_objective(g, obj->bound, xin, t, yin, cfg, full_report);
  obj->parts = nodes.parts;
  obj->total = nodes.total;
  return obj;
}

LossComponents read_components(const Objective& obj) {
  const Graph& g = obj.graph;
  LossComponents c;
  c.regression = g.value(obj.parts.regression).item();
  c.classification = g.value(obj.parts.classification).item();
  c.discrepancy = g.value(obj.parts.discrepancy).item();
  c.reconstruction = g.value(obj.parts.reconstruction).item();
  c.orthogonality = g.value(obj.parts.orthogonality).item();
  c.regularization = g.value(obj.parts.regularization).item();
  c.total = g.value(obj.total).item();
  return c;
}

std::vector<double> pick(std::span<const double> v, std::span<const std::size_t> rows) {
  std::vector<double> out;
  out.reserve(rows.size());
  for (std::size_t r : rows) out.push_back(v[r]);
  return out;
}

std::vector<int> pick(std::span<const int> v, std::span<const std::size_t> rows) {
  std::vector<int> out;
  out.reserve(rows.size());
  for (std::size_t r : rows) out.push_back(v[r]);
  return out;
}

std::vector<double> scaled_ite(const FactorNetworks& nets, const Tensor& x, double scale) {
  const FactorValues v = forward_all(nets, x);
  std::vector<double> ite(x.rows());
  for (std::size_t i = 0; i < ite.size(); ++i) ite[i] = (v.y1_hat[i] - v.y0_hat[i]) * scale;
  return ite;
}

}  // namespace

ObjectiveNodes build_objective(Graph& g, const BoundNetworks& nets, NodeId x,
                               std::span<const int> t, NodeId y_scaled, const TrainConfig& cfg,
                               bool full_report) {
  const FactorOutputs out = forward_all(g, nets, x);
  const bool both_groups = std::find(t.begin(), t.end(), 0) != t.end() &&
                           std::find(t.begin(), t.end(), 1) != t.end();
  ObjectiveNodes o;
  LossParts& p = o.parts;
  p.regression = regression_loss(g, y_scaled, t, out.y0_hat, out.y1_hat);
  p.classification = classification_loss(g, t, out.t_hat);
  const NodeId upsilon = out.embeddings[static_cast<std::size_t>(Factor::kUpsilon)];
  p.discrepancy = both_groups && (full_report || cfg.weights.beta > 0.0)
                      ? discrepancy_loss(g, g.standardize(upsilon), t, cfg.sinkhorn)
                      : g.input(Tensor::scalar(0.0));
  p.reconstruction = reconstruction_loss(g, x, out.x_recon);
  p.orthogonality = orthogonality_loss(g, weight_contribution(g, nets));
  p.regularization = parameter_regularization(g, nets);
  o.total = total_loss(g, p, cfg.weights);
  return o;
}

TrainConfig TrainConfig::paper() {
  TrainConfig c;
  c.batch_size = 256;
  c.max_epochs = 5000;
  c.learning_rate = 1e-5;
  return c;
}

TrainConfig TrainConfig::desk() {
  TrainConfig c;
  c.batch_size = 256;
  c.max_epochs = 1000;
  c.learning_rate = 1e-4;
  return c;
}

TrainConfig TrainConfig::profile(const std::string& name) {
  if (name == "paper") return paper();
  if (name == "desk") return desk();
  throw ConfigError("unknown profile '" + name + "' (expected paper or desk)");
}

NetworkShape TrainConfig::network_shape(std::size_t covariate_dim) const {
  NetworkShape s;
  s.covariate_dim = covariate_dim;
  s.latent_dims = {latent_dim, latent_dim, latent_dim, latent_dim};
  s.head_hidden = head_hidden;
  s.decoder_hidden = decoder_hidden;
  return s;
}

void TrainConfig::validate() const {
  weights.validate();
  sinkhorn.validate();
  if (batch_size < 2) throw ConfigError("batch size must be >= 2");
  if (max_epochs < 1) throw ConfigError("max epochs must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning rate must be > 0");
  }
  if (eval_every < 1) throw ConfigError("eval-every must be >= 1");
  if (latent_dim < 1 || head_hidden < 1 || decoder_hidden < 1) {
    throw ConfigError("network widths must be >= 1");
  }
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    throw ConfigError("validation fraction must lie in (0, 1)");
  }
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0 &&
        adam.eps > 0.0)) {
    throw ConfigError("invalid Adam settings");
  }
}

nlohmann::json train_config_to_json(const TrainConfig& c) {
  nlohmann::json j;
  j["loss_weights"] = {{"alpha", c.weights.alpha}, {"beta", c.weights.beta},
                       {"gamma", c.weights.gamma}, {"lambda", c.weights.lambda},
                       {"mu", c.weights.mu}};
  j["batch_size"] = c.batch_size;
  j["max_epochs"] = c.max_epochs;
  j["learning_rate"] = c.learning_rate;
  j["adam_betas"] = {c.adam.beta1, c.adam.beta2};
  j["adam_eps"] = c.adam.eps;
  j["eval_every"] = c.eval_every;
  j["seed"] = c.seed;
  j["sinkhorn"] = {{"epsilon", c.sinkhorn.epsilon}, {"iterations", c.sinkhorn.iterations}};
  j["latent_dim"] = c.latent_dim;
  j["head_hidden"] = c.head_hidden;
  j["decoder_hidden"] = c.decoder_hidden;
  j["validation_fraction"] = c.validation_fraction;
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j, const TrainConfig& base) {
  TrainConfig c = base;
  check_keys(j, {"loss_weights", "batch_size", "max_epochs", "learning_rate", "adam_betas",
                     "adam_eps", "eval_every", "seed", "sinkhorn", "latent_dim", "head_hidden",
                     "decoder_hidden", "validation_fraction"},
                 "training");
  if (j.contains("loss_weights")) {
    check_keys(j.at("loss_weights"), {"alpha", "beta", "gamma", "lambda", "mu"},
                   "training.loss_weights");
  }
  if (j.contains("sinkhorn")) {
    check_keys(j.at("sinkhorn"), {"epsilon", "iterations"}, "training.sinkhorn");
  }
  try {
    if (j.contains("loss_weights")) {
      const auto& w = j.at("loss_weights");
      c.weights.alpha = w.value("alpha", c.weights.alpha);
      c.weights.beta = w.value("beta", c.weights.beta);
      c.weights.gamma = w.value("gamma", c.weights.gamma);
      c.weights.lambda = w.value("lambda", c.weights.lambda);
      c.weights.mu = w.value("mu", c.weights.mu);
    }
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    if (j.contains("adam_betas")) {
      const auto b = j.at("adam_betas").get<std::vector<double>>();
      if (b.size() != 2) throw ConfigError("adam_betas needs two entries");
      c.adam.beta1 = b[0];
      c.adam.beta2 = b[1];
    }
    c.adam.eps = j.value("adam_eps", c.adam.eps);
    c.eval_every = j.value("eval_every", c.eval_every);
    c.seed = j.value("seed", c.seed);
    if (j.contains("sinkhorn")) {
      c.sinkhorn.epsilon = j.at("sinkhorn").value("epsilon", c.sinkhorn.epsilon);
      c.sinkhorn.iterations = j.at("sinkhorn").value("iterations", c.sinkhorn.iterations);
    }
    c.latent_dim = j.value("latent_dim", c.latent_dim);
    c.head_hidden = j.value("head_hidden", c.head_hidden);
    c.decoder_hidden = j.value("decoder_hidden", c.decoder_hidden);
    c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("training section: ") + e.what());
  }
  c.validate();
  return c;
}

LossComponents evaluate_losses(const FactorNetworks& nets, const Tensor& x,
                               std::span<const int> t, std::span<const double> y_scaled,
                               const TrainConfig& cfg) {
  return read_components(*build_batch_objective(nets, x, t, y_scaled, cfg, true));
}

TrainedModel train(const Dataset& data, const TrainConfig& cfg, const ProgressCallback& progress) {
  cfg.validate();
  data.validate();
  if (data.treated_count() == 0 || data.control_count() == 0) {
    throw DataError("training data must contain both treatment groups");
  }
  const double vf = cfg.validation_fraction;
  const SplitIndices parts = split(data.t, {1.0 - vf, vf, 0.0}, cfg.seed, true);
  if (parts.train.size() < 2) throw DataError("training portion has fewer than 2 units");

  const Tensor x_train = data.x.select_rows(parts.train);
  const std::vector<int> t_train = pick(std::span<const int>(data.t), parts.train);
  const std::vector<double> y_train_raw = pick(std::span<const double>(data.y), parts.train);
  const Tensor x_val = data.x.select_rows(parts.validation);
  const std::vector<int> t_val = pick(std::span<const int>(data.t), parts.validation);
  const std::vector<double> y_val = pick(std::span<const double>(data.y), parts.validation);
  const std::vector<std::size_t> val_neighbors = nearest_opposite(x_val, t_val);

  TrainedModel model;
  model.config = cfg;
  model.outcome_scaler = OutcomeScaler::fit(y_train_raw);
  std::vector<double> y_train(y_train_raw.size());
  for (std::size_t i = 0; i < y_train.size(); ++i) {
    y_train[i] = model.outcome_scaler.forward(y_train_raw[i]);
  }

  const FactorNetworksSpec spec = cfg.network_shape(data.covariate_dim()).to_spec();
  FactorNetworks nets = init_networks(spec, cfg.seed);
  std::vector<Tensor*> params = nets.parameters();
  AdamState adam;
  auto rng = make_rng(cfg.seed, streams::kShuffle);

  const std::size_t n = parts.train.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  // A trailing batch of one unit is folded into its predecessor.
  std::vector<std::size_t> bounds;
  for (std::size_t b = 0; b < n; b += cfg.batch_size) bounds.push_back(b);
  if (bounds.size() > 1 && n - bounds.back() < 2) bounds.pop_back();
  bounds.push_back(n);

  model.selection_score = std::numeric_limits<double>::infinity();
  std::vector<Tensor> grads(params.size());
  std::vector<std::size_t> batch;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    try {
      for (std::size_t b = 0; b + 1 < bounds.size(); ++b) {
        batch.clear();
        for (std::size_t i = bounds[b]; i < bounds[b + 1]; ++i) batch.push_back(order[i]);
        std::sort(batch.begin(), batch.end());
        const Tensor xb = x_train.select_rows(batch);
        const auto tb = pick(std::span<const int>(t_train), batch);
        const auto yb = pick(std::span<const double>(y_train), batch);
        auto obj = build_batch_objective(nets, xb, tb, yb, cfg, false);
        if (!std::isfinite(obj->graph.value(obj->total).item())) {
          throw NumericError("non-finite loss");
        }
        GradientMap gm = obj->graph.backward(obj->total);
        const auto ids = obj->bound.parameter_ids();
        for (std::size_t k = 0; k < ids.size(); ++k) grads[k] = std::move(gm.at(ids[k]));
        adam_step(params, grads, adam, cfg.learning_rate, cfg.adam);
      }
    } catch (const NumericError& e) {
      throw NumericError("training diverged at epoch " + std::to_string(epoch) + ": " + e.what());
    }

    if (epoch % cfg.eval_every != 0 && epoch != cfg.max_epochs) continue;
    HistoryRow row;
    row.epoch = epoch;
    try {
      row.losses = evaluate_losses(nets, x_train, t_train, y_train, cfg);
      row.pehe_nn = pehe_nn(scaled_ite(nets, x_val, model.outcome_scaler.scale), t_val, y_val,
                            val_neighbors);
    } catch (const NumericError& e) {
      throw NumericError("training diverged at epoch " + std::to_string(epoch) + ": " + e.what());
    }
    if (!std::isfinite(row.losses.total) || !std::isfinite(row.pehe_nn)) {
      throw NumericError("training diverged at epoch " + std::to_string(epoch) +
                         ": non-finite loss");
    }
    model.history.push_back(row);
    if (row.pehe_nn < model.selection_score) {
      model.selection_score = row.pehe_nn;
      model.best_epoch = epoch;
      model.nets = nets;
    }
    if (progress) progress({epoch, row.pehe_nn, model.selection_score});
  }
  return model;
}

Predictions predict_ite(const TrainedModel& model, const Tensor& x) {
  const FactorValues v = forward_all(model.nets, x);
  const OutcomeScaler& s = model.outcome_scaler;
  Predictions p;
  const std::size_t n = x.rows();
  p.y1.resize(n);
  p.y0.resize(n);
  p.ite.resize(n);
  p.propensity.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    p.y1[i] = s.inverse(v.y1_hat[i]);
    p.y0[i] = s.inverse(v.y0_hat[i]);
    p.ite[i] = (v.y1_hat[i] - v.y0_hat[i]) * s.scale;
    p.propensity[i] = v.t_hat[i];
  }
  return p;
}

std::vector<std::size_t> nearest_opposite(const Tensor& x, std::span<const int> t) {
  if (t.size() != x.rows()) throw ShapeError("nearest_opposite: treatment length mismatch");
  std::vector<std::size_t> groups[2];
  for (std::size_t i = 0; i < t.size(); ++i) groups[t[i] == 1 ? 1 : 0].push_back(i);
  if (groups[0].empty() || groups[1].empty()) {
    throw DataError("nearest-neighbor PEHE needs both treatment groups");
  }
  const std::size_t k = x.cols();
  std::vector<std::size_t> out(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    const auto& candidates = groups[t[i] == 1 ? 0 : 1];
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = candidates.front();
    for (std::size_t j : candidates) {  // ascending, so strict < keeps the lowest index
      double d = 0.0;
      for (std::size_t c = 0; c < k; ++c) {
        const double diff = x(i, c) - x(j, c);
        d += diff * diff;
      }
      if (d < best) {
        best = d;
        arg = j;
      }
    }
    out[i] = arg;
  }
  return out;
}

double pehe_nn(std::span<const double> ite_hat, std::span<const int> t, std::span<const double> y,
               std::span<const std::size_t> neighbors) {
  const std::size_t n = t.size();
  if (n == 0) throw DataError("pehe_nn on an empty split");
  if (ite_hat.size() != n || y.size() != n || neighbors.size() != n) {
    throw ShapeError("pehe_nn: inputs differ in length");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double cf = y[neighbors[i]];
    const double effect = t[i] == 1 ? y[i] - cf : cf - y[i];
    const double err = ite_hat[i] - effect;
    sum += err * err;
  }
  return std::sqrt(sum / static_cast<double>(n));
}

double pehe_nn(std::span<const double> ite_hat, const Tensor& x, std::span<const int> t,
               std::span<const double> y) {
  return pehe_nn(ite_hat, t, y, nearest_opposite(x, t));
}

double pehe_nn(const TrainedModel& model, const Dataset& split) {
  const Predictions p = predict_ite(model, split.x);
  return pehe_nn(p.ite, split.x, split.t, split.y);
}

nlohmann::json checkpoint_to_json(const TrainedModel& model) {
  nlohmann::json j;
  j["format"] = "dri-ite-checkpoint/1";
  j["config"] = train_config_to_json(model.config);
  j["outcome_scaler"] = {{"mean", model.outcome_scaler.mean},
                         {"scale", model.outcome_scaler.scale}};
  j["selection_score"] = model.selection_score;
  j["best_epoch"] = model.best_epoch;
  j["networks"] = networks_to_json(model.nets);
  return j;
}

TrainedModel checkpoint_from_json(const nlohmann::json& doc) {
  try {
    if (doc.value("format", std::string()) != "dri-ite-checkpoint/1") {
      throw ConfigError("not a dri-ite checkpoint");
    }
    TrainedModel m;
    m.config = train_config_from_json(doc.at("config"), TrainConfig{});
    m.outcome_scaler.mean = doc.at("outcome_scaler").at("mean").get<double>();
    m.outcome_scaler.scale = doc.at("outcome_scaler").at("scale").get<double>();
    m.selection_score = doc.at("selection_score").get<double>();
    m.best_epoch = doc.at("best_epoch").get<std::size_t>();
    m.nets = networks_from_json(doc.at("networks"));
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed checkpoint: ") + e.what());
  }
}

void write_history_csv(const std::filesystem::path& path, std::span<const HistoryRow> history) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "epoch,L_reg,L_class,L_disc,L_recons,L_orth,Reg,total,pehe_nn\n";
  for (const HistoryRow& r : history) {
    const LossComponents& c = r.losses;
    out << r.epoch;
    for (double v : {c.regression, c.classification, c.discrepancy, c.reconstruction,
                     c.orthogonality, c.regularization, c.total, r.pehe_nn}) {
      out << ',' << format_double(v);
    }
    out << '\n';
  }
  if (!out) throw DataError("failed writing " + path.string());
}

}  // namespace dri
