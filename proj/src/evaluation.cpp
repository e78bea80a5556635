#include "dri/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include "dri/error.hpp"
#include "dri/losses.hpp"
#include "dri/random.hpp"

namespace dri {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

nlohmann::json number_or_null(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

std::vector<std::size_t> shuffled_order(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

}  // namespace

double pehe(std::span<const double> ite_hat, std::span<const double> ite_true) {
  if (ite_hat.empty()) throw DataError("pehe of an empty set");
  if (ite_hat.size() != ite_true.size()) throw ShapeError("pehe: inputs differ in length");
  double sum = 0.0;
  for (std::size_t i = 0; i < ite_hat.size(); ++i) {
    const double d = ite_hat[i] - ite_true[i];
    sum += d * d;
  }
  return std::sqrt(sum / static_cast<double>(ite_hat.size()));
}

void PolicyConfig::validate() const {
  if (!std::isfinite(threshold)) throw ConfigError("policy threshold must be finite");
}

PolicyRisk policy_risk(std::span<const int> t, std::span<const double> y,
                       std::span<const double> ite_hat, const PolicyConfig& cfg) {
  cfg.validate();
  const std::size_t n = t.size();
  if (n == 0) throw DataError("policy risk of an empty set");
  if (y.size() != n || ite_hat.size() != n) throw ShapeError("policy_risk: inputs differ in length");
  double sum1 = 0.0, sum0 = 0.0;
  std::size_t n1 = 0, n0 = 0, treat = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (t[i] != 0 && t[i] != 1) throw DataError("policy_risk: treatment must be 0 or 1");
    const bool pi = ite_hat[i] > cfg.threshold;
    if (pi) ++treat;
    if (pi && t[i] == 1) {
      sum1 += y[i];
      ++n1;
    } else if (!pi && t[i] == 0) {
      sum0 += y[i];
      ++n0;
    }
  }
  PolicyRisk r;
  r.treat_fraction = static_cast<double>(treat) / static_cast<double>(n);
  r.treated_term_missing = n1 == 0;
  r.control_term_missing = n0 == 0;
  const double v1 = n1 ? sum1 / static_cast<double>(n1) * r.treat_fraction : 0.0;
  const double v0 = n0 ? sum0 / static_cast<double>(n0) * (1.0 - r.treat_fraction) : 0.0;
  r.risk = 1.0 - (v1 + v0);
  return r;
}

std::string_view metric_name(Metric m) {
  switch (m) {
    case Metric::kBce: return "bce";
    case Metric::kMse: return "mse";
    case Metric::kPehe: return "pehe";
  }
  return "unknown";
}

Metric metric_from_name(std::string_view name) {
  if (name == "bce") return Metric::kBce;
  if (name == "mse") return Metric::kMse;
  if (name == "pehe") return Metric::kPehe;
  throw ConfigError("unknown metric '" + std::string(name) + "'");
}

double model_metric(const TrainedModel& model, const Dataset& data, Metric metric) {
  const Predictions p = predict_ite(model, data.x);
  const std::size_t n = data.size();
  if (n == 0) throw DataError("metric of an empty set");
  double sum = 0.0;
  switch (metric) {
    case Metric::kBce:
      for (std::size_t i = 0; i < n; ++i) {
        const double q = std::clamp(p.propensity[i], kProbabilityClamp, 1.0 - kProbabilityClamp);
        sum -= data.t[i] == 1 ? std::log(q) : std::log(1.0 - q);
      }
      return sum / static_cast<double>(n);
    case Metric::kMse:
      for (std::size_t i = 0; i < n; ++i) {
        const double d = (data.t[i] == 1 ? p.y1[i] : p.y0[i]) - data.y[i];
        sum += d * d;
      }
      return sum / static_cast<double>(n);
    case Metric::kPehe:
      return pehe(p.ite, data.true_effect());
  }
  throw ConfigError("unknown metric");
}

std::vector<double> permutation_importance(const TrainedModel& model, const Dataset& data,
                                           Metric metric, std::size_t repeats,
                                           std::uint64_t seed, const PermutationFn& permute) {
  if (repeats < 1) throw ConfigError("importance repeats must be >= 1");
  const double baseline = model_metric(model, data, metric);
  const std::size_t n = data.size();
  const std::size_t k = data.covariate_dim();
  std::vector<double> out(k, 0.0);
  Dataset work = data;
  for (std::size_t j = 0; j < k; ++j) {
    auto rng = make_rng(seed, (streams::kImportance << 32) + j);
    double acc = 0.0;
    for (std::size_t r = 0; r < repeats; ++r) {
      const std::vector<std::size_t> order = permute ? permute(n, rng) : shuffled_order(n, rng);
      if (order.size() != n) throw ShapeError("permutation has the wrong length");
      for (std::size_t i = 0; i < n; ++i) work.x(i, j) = data.x(order[i], j);
      acc += model_metric(model, work, metric) - baseline;
    }
    for (std::size_t i = 0; i < n; ++i) work.x(i, j) = data.x(i, j);
    out[j] = acc / static_cast<double>(repeats);
  }
  return out;
}

std::array<GroupMeans, 4> identification_report(const FactorNetworks& nets,
                                                std::span<const FeatureRole> roles) {
  if (roles.size() != nets.spec.covariate_dim()) {
    throw ShapeError("identification_report: roles do not match the covariate count");
  }
  for (FeatureRole r : roles) {
    if (r == FeatureRole::kUnknown) throw DataError("identification needs known feature roles");
  }
  const WeightContribution wc = weight_contribution(nets);
  std::array<GroupMeans, 4> out{};
  for (std::size_t f = 0; f < 4; ++f) {
    const auto own = static_cast<FeatureRole>(f);
    double in = 0.0, outside = 0.0;
    GroupMeans& g = out[f];
    for (std::size_t j = 0; j < roles.size(); ++j) {
      if (roles[j] == own) {
        in += wc.per_encoder[f][j];
        ++g.in_count;
      } else {
        outside += wc.per_encoder[f][j];
        ++g.out_count;
      }
    }
    g.in_group = g.in_count ? in / static_cast<double>(g.in_count) : kNaN;
    g.out_group = g.out_count ? outside / static_cast<double>(g.out_count) : kNaN;
  }
  return out;
}

EvaluationReport evaluate(const TrainedModel& model, const Dataset& data,
                          const EvaluationOptions& options) {
  data.validate();
  EvaluationReport rep;
  rep.units = data.size();
  rep.seed = options.seed;
  rep.config_hash = options.config_hash;
  rep.roles = data.roles;
  const Predictions p = predict_ite(model, data.x);
  if (data.has_true_effect()) rep.pehe = pehe(p.ite, data.true_effect());
  rep.policy = policy_risk(data.t, data.y, p.ite, options.policy);
  for (Metric m : options.importance_metrics) {
    if (m == Metric::kPehe && !data.has_true_effect()) continue;
    rep.importance[m] =
        permutation_importance(model, data, m, options.importance_repeats, options.seed);
  }
  rep.weights = weight_contribution(model.nets);
  const bool roles_known = std::none_of(data.roles.begin(), data.roles.end(),
                                        [](FeatureRole r) { return r == FeatureRole::kUnknown; });
  if (roles_known) rep.identification = identification_report(model.nets, data.roles);
  return rep;
}

nlohmann::json report_to_json(const EvaluationReport& r) {
  nlohmann::json j;
  j["units"] = r.units;
  j["seed"] = r.seed;
  j["config_hash"] = r.config_hash;
  j["pehe"] = r.pehe ? number_or_null(*r.pehe) : nlohmann::json(nullptr);
  if (r.policy) {
    j["policy_risk"] = {{"risk", r.policy->risk},
                        {"treat_fraction", r.policy->treat_fraction},
                        {"treated_term_missing", r.policy->treated_term_missing},
                        {"control_term_missing", r.policy->control_term_missing}};
  } else {
    j["policy_risk"] = nullptr;
  }
  nlohmann::json imp = nlohmann::json::object();
  for (const auto& [m, v] : r.importance) imp[std::string(metric_name(m))] = v;
  j["importance"] = imp;
  nlohmann::json w = nlohmann::json::object();
  for (Factor f : kAllFactors) {
    w[std::string(factor_name(f))] = r.weights[f];
  }
  j["weight_contribution"] = w;
  if (r.identification) {
    nlohmann::json id = nlohmann::json::object();
    for (Factor f : kAllFactors) {
      const GroupMeans& g = (*r.identification)[static_cast<std::size_t>(f)];
      id[std::string(factor_name(f))] = {{"in_group", number_or_null(g.in_group)},
                                         {"out_group", number_or_null(g.out_group)},
                                         {"in_count", g.in_count},
                                         {"out_count", g.out_count}};
    }
    j["identification"] = id;
  } else {
    j["identification"] = nullptr;
  }
  std::vector<std::string> roles;
  for (FeatureRole role : r.roles) roles.emplace_back(role_name(role));
  j["roles"] = roles;
  return j;
}

void write_importance_csv(const std::filesystem::path& path, const EvaluationReport& r) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "feature_index,role,metric,value\n";
  for (const auto& [m, v] : r.importance) {
    for (std::size_t j = 0; j < v.size(); ++j) {
      const FeatureRole role = j < r.roles.size() ? r.roles[j] : FeatureRole::kUnknown;
      out << j << ',' << role_name(role) << ',' << metric_name(m) << ',' << format_double(v[j])
          << '\n';
    }
  }
  if (!out) throw DataError("failed writing " + path.string());
}

void write_weights_csv(const std::filesystem::path& path, const EvaluationReport& r) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "feature_index,role,encoder,value\n";
  for (Factor f : kAllFactors) {
    const auto& v = r.weights[f];
    for (std::size_t j = 0; j < v.size(); ++j) {
      const FeatureRole role = j < r.roles.size() ? r.roles[j] : FeatureRole::kUnknown;
      out << j << ',' << role_name(role) << ',' << factor_name(f) << ',' << format_double(v[j])
          << '\n';
    }
  }
  if (!out) throw DataError("failed writing " + path.string());
}

std::string fnv1a_hex(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace dri
