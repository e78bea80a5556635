#include "dri/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

#include "dri/config_keys.hpp"
#include "dri/error.hpp"

namespace fs = std::filesystem;

namespace dri {
namespace {

using json = nlohmann::json;

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("failed writing " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
}

std::string replication_dir_name(std::size_t r) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "rep_%03zu", r + 1);
  return buf;
}

// Re-throws with the replication index prepended, keeping the error type.
template <typename F>
auto with_replication(std::size_t r, F&& f) -> decltype(f()) {
  const std::string prefix = "replication " + std::to_string(r + 1) + ": ";
  try {
    return f();
  } catch (const ConfigError& e) {
    throw ConfigError(prefix + e.what());
  } catch (const DataError& e) {
    throw DataError(prefix + e.what());
  } catch (const NumericError& e) {
    throw NumericError(prefix + e.what());
  } catch (const ShapeError& e) {
    throw ShapeError(prefix + e.what());
  }
}

json scaler_to_json(const ColumnScaler& s) { return {{"mean", s.mean}, {"scale", s.scale}}; }

ColumnScaler scaler_from_json(const json& j) {
  ColumnScaler s;
  s.mean = j.at("mean").get<std::vector<double>>();
  s.scale = j.at("scale").get<std::vector<double>>();
  if (s.mean.size() != s.scale.size()) throw ConfigError("malformed covariate scaler");
  return s;
}

struct TrainedReplication {
  TrainedModel model;
  ColumnScaler scaler;
  std::uint64_t seed = 0;
};

TrainedReplication train_replication(const ExperimentConfig& cfg, std::size_t r) {
  const Dataset data = resolve_dataset(cfg, r);
  PreparedSplit ps = prepare_split(cfg, data, r);
  TrainConfig tc = cfg.training;
  tc.seed = cfg.replication_seed(r);
  TrainedReplication out;
  out.seed = tc.seed;
  out.scaler = std::move(ps.scaler);
  out.model = train(ps.train, tc);
  return out;
}

EvaluationOptions evaluation_options(const ExperimentConfig& cfg, std::size_t r,
                                     bool with_importance) {
  EvaluationOptions o;
  o.policy = cfg.policy;
  o.importance_repeats = cfg.importance_repeats;
  if (with_importance) o.importance_metrics = cfg.importance_metrics;
  o.seed = cfg.replication_seed(r);
  o.config_hash = config_hash(cfg);
  return o;
}

struct LoadedCheckpoint {
  std::size_t replication = 0;
  TrainedModel model;
  ColumnScaler scaler;
};

LoadedCheckpoint load_checkpoint(const fs::path& path) {
  const json doc = read_json(path);
  try {
    LoadedCheckpoint c;
    c.replication = doc.at("replication").get<std::size_t>() - 1;
    c.scaler = scaler_from_json(doc.at("covariate_scaler"));
    c.model = checkpoint_from_json(doc.at("model"));
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": malformed checkpoint: " + e.what());
  }
}

std::vector<LoadedCheckpoint> find_checkpoints(const ExperimentConfig& cfg,
                                               const std::optional<fs::path>& single) {
  std::vector<LoadedCheckpoint> out;
  if (single) {
    out.push_back(load_checkpoint(*single));
    return out;
  }
  for (std::size_t r = 0; r < cfg.replications; ++r) {
    const fs::path p = cfg.output_dir / replication_dir_name(r) / "checkpoint.json";
    if (!fs::exists(p)) throw ConfigError("missing checkpoint " + p.string() + " (run train first)");
    out.push_back(load_checkpoint(p));
  }
  return out;
}

// Rebuilds the held-out split of a checkpoint's replication with its stored scaler.
Dataset checkpoint_test_set(const ExperimentConfig& cfg, const LoadedCheckpoint& c) {
  const Dataset data = resolve_dataset(cfg, c.replication);
  if (data.covariate_dim() != c.model.nets.spec.covariate_dim() ||
      c.scaler.mean.size() != data.covariate_dim()) {
    throw DataError("checkpoint expects " + std::to_string(c.model.nets.spec.covariate_dim()) +
                    " covariates, dataset has " + std::to_string(data.covariate_dim()));
  }
  const double tf = cfg.test_fraction;
  const SplitIndices s = split(data.t, {1.0 - tf, 0.0, tf}, cfg.replication_seed(c.replication), true);
  Dataset test = data.subset(s.test);
  test.x = c.scaler.apply(test.x);
  return test;
}

void write_dataset_files(const ExperimentConfig& cfg, const char* what) {
  ensure_dir(cfg.output_dir);
  write_json(cfg.output_dir / "config.json", config_to_json(cfg));
  json manifest;
  manifest["command"] = what;
  manifest["config_hash"] = config_hash(cfg);
  if (cfg.synthetic) {
    json spec = synthetic_spec_to_json(*cfg.synthetic);
    spec.erase("seed");  // each file records its own
    manifest["synthetic"] = spec;
  }
  manifest["contrasts"] = cfg.contrasts;
  json files = json::array();
  for (std::size_t r = 0; r < cfg.replications; ++r) {
    const Dataset data = with_replication(r, [&] { return resolve_dataset(cfg, r); });
    char name[32];
    std::snprintf(name, sizeof(name), "data_%03zu.csv", r + 1);
    write_dataset_csv(cfg.output_dir / name, data);
    std::vector<std::string> roles;
    for (FeatureRole role : data.roles) roles.emplace_back(role_name(role));
    std::vector<std::string> columns;
    for (std::size_t j = 0; j < data.covariate_dim(); ++j) columns.push_back("x" + std::to_string(j + 1));
    columns.push_back("t");
    columns.push_back("y");
    if (data.y_cf) columns.push_back("y_cf");
    if (data.mu0) {
      columns.push_back("mu0");
      columns.push_back("mu1");
    }
    json entry = {{"file", name},
                  {"replication", r + 1},
                  {"seed", cfg.replication_seed(r)},
                  {"rows", data.size()},
                  {"treated", data.treated_count()},
                  {"covariates", data.covariate_dim()},
                  {"columns", columns},
                  {"roles", roles}};
    if (cfg.synthetic) {
      SyntheticSpec spec = *cfg.synthetic;
      spec.seed = cfg.replication_seed(r);
      const SyntheticCoefficients coef = synthetic_coefficients(spec);
      entry["coefficients"] = {{"treatment", coef.treatment},
                               {"outcome0", coef.outcome0},
                               {"outcome1", coef.outcome1},
                               {"effect", coef.effect}};
    }
    files.push_back(entry);
  }
  manifest["files"] = files;
  write_json(cfg.output_dir / "manifest.json", manifest);
}

json summary_to_json(const Summary& s) {
  return {{"mean", s.mean}, {"std", s.std}, {"count", s.count}};
}

}  // namespace

// ---- configuration ----

void ExperimentConfig::validate() const {
  if (synthetic.has_value() == csv.has_value()) {
    throw ConfigError("dataset section needs exactly one of 'synthetic' or 'csv'");
  }
  if (synthetic) synthetic->validate();
  if (csv && csv->path.empty()) throw ConfigError("csv dataset needs a path");
  if (replications < 1) throw ConfigError("replication count must be >= 1");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ConfigError("test fraction must lie in (0, 1)");
  }
  if (importance_repeats < 1) throw ConfigError("importance repeats must be >= 1");
  if (ablation_omega.empty()) throw ConfigError("ablation omega grid is empty");
  if (workers < 1) throw ConfigError("workers must be >= 1");
  policy.validate();
  training.validate();
}

ExperimentConfig config_from_json(const json& j, const ConfigOverrides& ov) {
  ExperimentConfig c;
  try {
    check_keys(j, {"dataset", "model", "training", "evaluation", "replication", "split",
                   "ablation", "output_dir", "workers"},
               "config");
    const json training = j.value("training", json::object());
    c.profile = ov.profile ? *ov.profile : training.value("profile", std::string("desk"));
    c.training = TrainConfig::profile(c.profile);

    const json dataset = j.value("dataset", json::object());
    check_keys(dataset, {"synthetic", "csv", "contrasts"}, "dataset");
    if (dataset.contains("synthetic")) c.synthetic = synthetic_spec_from_json(dataset.at("synthetic"));
    if (dataset.contains("csv")) {
      const json& src = dataset.at("csv");
      check_keys(src, {"path", "schema"}, "dataset.csv");
      CsvSource s;
      s.path = src.at("path").get<std::string>();
      s.schema = schema_from_json(src.value("schema", json{{"preset", "ihdp"}}));
      c.csv = std::move(s);
    }
    c.contrasts = dataset.value("contrasts", c.contrasts);

    json train_section = training;
    train_section.erase("profile");
    if (j.contains("model")) {
      const json& m = j.at("model");
      check_keys(m, {"latent_dim", "head_hidden", "decoder_hidden"}, "model");
      for (const char* key : {"latent_dim", "head_hidden", "decoder_hidden"}) {
        if (m.contains(key)) train_section[key] = m.at(key);
      }
    }
    c.training = train_config_from_json(train_section, c.training);

    if (j.contains("evaluation")) {
      const json& e = j.at("evaluation");
      check_keys(e, {"policy_threshold", "importance_repeats", "importance_metrics"}, "evaluation");
      c.policy.threshold = e.value("policy_threshold", c.policy.threshold);
      c.importance_repeats = e.value("importance_repeats", c.importance_repeats);
      if (e.contains("importance_metrics")) {
        c.importance_metrics.clear();
        for (const auto& m : e.at("importance_metrics")) {
          c.importance_metrics.push_back(metric_from_name(m.get<std::string>()));
        }
      }
    }
    if (j.contains("replication")) {
      const json& r = j.at("replication");
      check_keys(r, {"count", "base_seed"}, "replication");
      c.replications = r.value("count", c.replications);
      c.base_seed = r.value("base_seed", c.base_seed);
    }
    if (j.contains("split")) {
      check_keys(j.at("split"), {"test_fraction"}, "split");
      c.test_fraction = j.at("split").value("test_fraction", c.test_fraction);
    }
    if (j.contains("ablation")) {
      check_keys(j.at("ablation"), {"omega_dims"}, "ablation");
      c.ablation_omega = j.at("ablation").value("omega_dims", c.ablation_omega);
    }
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
    c.workers = j.value("workers", c.workers);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (ov.seed) c.base_seed = *ov.seed;
  if (ov.output_dir) c.output_dir = *ov.output_dir;
  if (ov.workers) c.workers = *ov.workers;
  c.validate();
  return c;
}

ExperimentConfig load_config(const fs::path& path, const ConfigOverrides& overrides) {
  return config_from_json(read_json(path), overrides);
}

json config_to_json(const ExperimentConfig& c) {
  json j;
  json dataset;
  if (c.synthetic) {
    json s = synthetic_spec_to_json(*c.synthetic);
    s.erase("seed");  // replaced by the replication seed
    dataset["synthetic"] = s;
  }
  if (c.csv) dataset["csv"] = {{"path", c.csv->path}, {"schema", schema_to_json(c.csv->schema)}};
  dataset["contrasts"] = c.contrasts;
  j["dataset"] = dataset;
  json training = train_config_to_json(c.training);
  training.erase("seed");  // replaced by the replication seed
  training["profile"] = c.profile;
  j["training"] = training;
  std::vector<std::string> metrics;
  for (Metric m : c.importance_metrics) metrics.emplace_back(metric_name(m));
  j["evaluation"] = {{"policy_threshold", c.policy.threshold},
                     {"importance_repeats", c.importance_repeats},
                     {"importance_metrics", metrics}};
  j["replication"] = {{"count", c.replications}, {"base_seed", c.base_seed}};
  j["split"] = {{"test_fraction", c.test_fraction}};
  j["ablation"] = {{"omega_dims", c.ablation_omega}};
  j["output_dir"] = c.output_dir.string();
  return j;
}

std::string config_hash(const ExperimentConfig& cfg) {
  json j = config_to_json(cfg);
  j.erase("output_dir");
  return fnv1a_hex(j.dump());
}

// ---- datasets ----

std::string resolve_path(const std::string& pattern, std::size_t r) {
  std::string out = pattern;
  const std::string token = "{r}";
  for (std::size_t pos = out.find(token); pos != std::string::npos; pos = out.find(token, pos)) {
    const std::string index = std::to_string(r + 1);
    out.replace(pos, token.size(), index);
    pos += index.size();
  }
  return out;
}

Dataset resolve_dataset(const ExperimentConfig& cfg, std::size_t r) {
  const std::uint64_t seed = cfg.replication_seed(r);
  if (cfg.synthetic) {
    SyntheticSpec spec = *cfg.synthetic;
    spec.seed = seed;
    // One contrast stream for both sources of omega columns.
    spec.dims[3] += cfg.contrasts;
    return generate_synthetic(spec);
  }
  if (!cfg.csv) throw ConfigError("no dataset source configured");
  Dataset d = load_csv(resolve_path(cfg.csv->path, r), cfg.csv->schema);
  return cfg.contrasts ? add_artificial_contrasts(d, cfg.contrasts, seed) : d;
}

PreparedSplit prepare_split(const ExperimentConfig& cfg, const Dataset& data, std::size_t r) {
  const double tf = cfg.test_fraction;
  const SplitIndices s = split(data.t, {1.0 - tf, 0.0, tf}, cfg.replication_seed(r), true);
  PreparedSplit p;
  p.train = data.subset(s.train);
  p.test = data.subset(s.test);
  p.scaler = ColumnScaler::fit(p.train.x);
  p.train.x = p.scaler.apply(p.train.x);
  p.test.x = p.scaler.apply(p.test.x);
  return p;
}

ReplicationResult run_replication(const ExperimentConfig& cfg, std::size_t r, bool with_importance) {
  return with_replication(r, [&] {
    const Dataset data = resolve_dataset(cfg, r);
    PreparedSplit ps = prepare_split(cfg, data, r);
    TrainConfig tc = cfg.training;
    tc.seed = cfg.replication_seed(r);
    ReplicationResult out;
    out.replication = r;
    out.seed = tc.seed;
    out.model = train(ps.train, tc);
    out.scaler = std::move(ps.scaler);
    out.report = evaluate(out.model, ps.test, evaluation_options(cfg, r, with_importance));
    return out;
  });
}

json replication_checkpoint(const ReplicationResult& result) {
  return {{"replication", result.replication + 1},
          {"seed", result.seed},
          {"covariate_scaler", scaler_to_json(result.scaler)},
          {"model", checkpoint_to_json(result.model)}};
}

// ---- aggregation and workers ----

Summary summarize(const std::vector<double>& values) {
  Summary s;
  s.count = values.size();
  if (values.empty()) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double sq = 0.0;
    for (double v : values) sq += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(sq / static_cast<double>(values.size() - 1));
  }
  return s;
}

std::string format_mean_std(const Summary& s) {
  if (s.count == 0) return "NA";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f(%.4f)", s.mean, s.std);
  return buf;
}

void parallel_for(std::size_t count, std::size_t workers,
                  const std::function<void(std::size_t)>& job) {
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        job(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(workers, count));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < n; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::size_t resolve_workers(std::optional<std::size_t> flag) {
  if (flag) {
    if (*flag < 1) throw ConfigError("--workers must be >= 1");
    return *flag;
  }
  if (const char* env = std::getenv("DRI_ITE_WORKERS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1) {
      throw ConfigError("DRI_ITE_WORKERS must be a positive integer");
    }
    return static_cast<std::size_t>(v);
  }
  return 1;
}

// ---- commands ----

void cmd_gen_data(const ExperimentConfig& cfg) {
  if (!cfg.synthetic) throw ConfigError("gen-data needs a synthetic dataset section");
  write_dataset_files(cfg, "gen-data");
}

void cmd_augment(const ExperimentConfig& cfg) {
  if (cfg.contrasts == 0 && !(cfg.synthetic && cfg.synthetic->dims[3] > 0)) {
    throw ConfigError("augment needs a positive contrasts count");
  }
  write_dataset_files(cfg, "augment");
}

void cmd_train(const ExperimentConfig& cfg) {
  ensure_dir(cfg.output_dir);
  write_json(cfg.output_dir / "config.json", config_to_json(cfg));
  std::vector<TrainedReplication> results(cfg.replications);
  std::mutex log_mutex;
  parallel_for(cfg.replications, cfg.workers, [&](std::size_t r) {
    results[r] = with_replication(r, [&] { return train_replication(cfg, r); });
    std::lock_guard lock(log_mutex);
    std::cerr << "replication " << r + 1 << ": pehe_nn " << results[r].model.selection_score
              << " at epoch " << results[r].model.best_epoch << "\n";
  });
  std::vector<double> scores;
  json reps = json::array();
  for (std::size_t r = 0; r < cfg.replications; ++r) {
    const fs::path dir = cfg.output_dir / replication_dir_name(r);
    ensure_dir(dir);
    ReplicationResult rr;
    rr.replication = r;
    rr.seed = results[r].seed;
    rr.model = results[r].model;
    rr.scaler = results[r].scaler;
    write_json(dir / "checkpoint.json", replication_checkpoint(rr));
    write_history_csv(dir / "history.csv", rr.model.history);
    scores.push_back(rr.model.selection_score);
    reps.push_back({{"replication", r + 1},
                    {"seed", rr.seed},
                    {"selection_score", rr.model.selection_score},
                    {"best_epoch", rr.model.best_epoch}});
  }
  json summary;
  summary["config_hash"] = config_hash(cfg);
  summary["selection_score"] = summary_to_json(summarize(scores));
  summary["replications"] = reps;
  write_json(cfg.output_dir / "train_summary.json", summary);
}

namespace {

enum class EvalOutput { kFull, kImportance, kWeights };

void run_eval(const ExperimentConfig& cfg, const std::optional<fs::path>& checkpoint,
              EvalOutput what) {
  ensure_dir(cfg.output_dir);
  write_json(cfg.output_dir / "config.json", config_to_json(cfg));
  const auto checkpoints = find_checkpoints(cfg, checkpoint);
  std::vector<EvaluationReport> reports(checkpoints.size());
  parallel_for(checkpoints.size(), cfg.workers, [&](std::size_t i) {
    const LoadedCheckpoint& c = checkpoints[i];
    reports[i] = with_replication(c.replication, [&] {
      const Dataset test = checkpoint_test_set(cfg, c);
      EvaluationOptions o = evaluation_options(cfg, c.replication, what != EvalOutput::kWeights);
      if (what == EvalOutput::kImportance) {
        o.importance_metrics = {Metric::kBce, Metric::kMse, Metric::kPehe};
      }
      return evaluate(c.model, test, o);
    });
  });

  std::vector<double> pehes, risks;
  json reps = json::array();
  json ident_rows = json::array();
  std::string ident_csv = "replication,encoder,in_group,out_group\n";
  for (std::size_t i = 0; i < checkpoints.size(); ++i) {
    const std::size_t r = checkpoints[i].replication;
    const EvaluationReport& rep = reports[i];
    const fs::path dir = cfg.output_dir / replication_dir_name(r);
    ensure_dir(dir);
    switch (what) {
      case EvalOutput::kFull:
        write_json(dir / "report.json", report_to_json(rep));
        write_importance_csv(dir / "importance.csv", rep);
        write_weights_csv(dir / "weights.csv", rep);
        break;
      case EvalOutput::kImportance:
        write_importance_csv(dir / "importance.csv", rep);
        break;
      case EvalOutput::kWeights:
        write_weights_csv(dir / "weights.csv", rep);
        break;
    }
    if (rep.pehe) pehes.push_back(*rep.pehe);
    if (rep.policy) risks.push_back(rep.policy->risk);
    reps.push_back({{"replication", r + 1},
                    {"pehe", rep.pehe ? json(*rep.pehe) : json(nullptr)},
                    {"policy_risk", rep.policy ? json(rep.policy->risk) : json(nullptr)}});
    if (rep.identification) {
      for (Factor f : kAllFactors) {
        const GroupMeans& g = (*rep.identification)[static_cast<std::size_t>(f)];
        ident_csv += std::to_string(r + 1) + "," + std::string(factor_name(f)) + "," +
                     (std::isfinite(g.in_group) ? format_double(g.in_group) : "NA") + "," +
                     (std::isfinite(g.out_group) ? format_double(g.out_group) : "NA") + "\n";
      }
    }
  }
  switch (what) {
    case EvalOutput::kFull: {
      json summary;
      summary["config_hash"] = config_hash(cfg);
      summary["pehe"] = pehes.empty() ? json(nullptr) : summary_to_json(summarize(pehes));
      summary["pehe_table"] = pehes.empty() ? "NA" : format_mean_std(summarize(pehes));
      summary["policy_risk"] = risks.empty() ? json(nullptr) : summary_to_json(summarize(risks));
      summary["replications"] = reps;
      write_json(cfg.output_dir / "eval_summary.json", summary);
      break;
    }
    case EvalOutput::kImportance:
      break;
    case EvalOutput::kWeights:
      write_text(cfg.output_dir / "identification.csv", ident_csv);
      break;
  }
}

}  // namespace

void cmd_eval(const ExperimentConfig& cfg, const std::optional<fs::path>& checkpoint) {
  run_eval(cfg, checkpoint, EvalOutput::kFull);
}

void cmd_importance(const ExperimentConfig& cfg, const std::optional<fs::path>& checkpoint) {
  run_eval(cfg, checkpoint, EvalOutput::kImportance);
}

void cmd_weights_report(const ExperimentConfig& cfg, const std::optional<fs::path>& checkpoint) {
  run_eval(cfg, checkpoint, EvalOutput::kWeights);
}

// ---- ablation ----

std::string_view loss_variant_name(LossVariant v) {
  switch (v) {
    case LossVariant::kBase: return "base";
    case LossVariant::kOrth: return "base+orth";
    case LossVariant::kFull: return "base+orth+recons";
  }
  return "unknown";
}

LossWeights variant_weights(const LossWeights& full, LossVariant v) {
  LossWeights w = full;
  if (v == LossVariant::kBase) w.lambda = 0.0;
  if (v != LossVariant::kFull) w.gamma = 0.0;
  return w;
}

ExperimentConfig ablation_cell_config(const ExperimentConfig& cfg, LossVariant v, std::size_t omega) {
  ExperimentConfig c = cfg;
  c.training.weights = variant_weights(cfg.training.weights, v);
  if (c.synthetic) {
    c.synthetic->dims[3] = omega;
  } else {
    c.contrasts = omega;
  }
  return c;
}

std::vector<AblationCell> run_ablation(const ExperimentConfig& cfg) {
  constexpr std::array<LossVariant, 3> kVariants = {LossVariant::kBase, LossVariant::kOrth,
                                                    LossVariant::kFull};
  std::vector<AblationCell> cells;
  for (LossVariant v : kVariants) {
    for (std::size_t omega : cfg.ablation_omega) {
      for (std::size_t r = 0; r < cfg.replications; ++r) {
        cells.push_back({v, omega, r, cfg.replication_seed(r), std::nullopt, {}});
      }
    }
  }
  std::mutex log_mutex;
  parallel_for(cells.size(), cfg.workers, [&](std::size_t i) {
    AblationCell& cell = cells[i];
    try {
      const ExperimentConfig cc = ablation_cell_config(cfg, cell.variant, cell.omega);
      const ReplicationResult res = run_replication(cc, cell.replication, false);
      cell.pehe = res.report.pehe;
      if (!cell.pehe) cell.error = "dataset has no true effects";
    } catch (const std::exception& e) {
      cell.error = e.what();
    }
    std::lock_guard lock(log_mutex);
    std::cerr << loss_variant_name(cell.variant) << " omega=" << cell.omega << " rep "
              << cell.replication + 1 << ": "
              << (cell.pehe ? std::to_string(*cell.pehe) : "error: " + cell.error) << "\n";
  });
  return cells;
}

void cmd_ablation(const ExperimentConfig& cfg) {
  ensure_dir(cfg.output_dir);
  write_json(cfg.output_dir / "config.json", config_to_json(cfg));
  const std::vector<AblationCell> cells = run_ablation(cfg);

  std::string tidy = "loss,omega,replication,seed,pehe,error\n";
  for (const AblationCell& c : cells) {
    std::string err = c.error;
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    tidy += std::string(loss_variant_name(c.variant)) + "," + std::to_string(c.omega) + "," +
            std::to_string(c.replication + 1) + "," + std::to_string(c.seed) + "," +
            (c.pehe ? format_double(*c.pehe) : "NA") + "," + err + "\n";
  }
  write_text(cfg.output_dir / "ablation_cells.csv", tidy);

  std::string table = "loss";
  for (std::size_t omega : cfg.ablation_omega) table += ",omega_" + std::to_string(omega);
  table += "\n";
  json summary = json::array();
  for (LossVariant v : {LossVariant::kBase, LossVariant::kOrth, LossVariant::kFull}) {
    table += std::string(loss_variant_name(v));
    for (std::size_t omega : cfg.ablation_omega) {
      std::vector<double> values;
      std::size_t failed = 0;
      for (const AblationCell& c : cells) {
        if (c.variant != v || c.omega != omega) continue;
        if (c.pehe) {
          values.push_back(*c.pehe);
        } else {
          ++failed;
        }
      }
      const Summary s = summarize(values);
      table += "," + format_mean_std(s);
      summary.push_back({{"loss", loss_variant_name(v)},
                         {"omega", omega},
                         {"pehe", values.empty() ? json(nullptr) : summary_to_json(s)},
                         {"failed", failed}});
    }
    table += "\n";
  }
  write_text(cfg.output_dir / "ablation.csv", table);
  write_json(cfg.output_dir / "ablation.json",
             {{"config_hash", config_hash(cfg)}, {"cells", summary}});
}

}  // namespace dri
