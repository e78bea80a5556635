#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"

#include "dri/error.hpp"
#include "dri/experiment.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kFixtures = DRI_TEST_FIXTURES;

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "dri_test_experiment" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read(const fs::path& p) { return json::parse(slurp(p)); }

// Small enough to train in well under a second.
json fast_config(const fs::path& out) {
  return {{"dataset", {{"synthetic", {{"n", 160}, {"dims", {2, 2, 2, 2}}}}}},
          {"model", {{"latent_dim", 3}, {"head_hidden", 8}, {"decoder_hidden", 8}}},
          {"training",
           {{"max_epochs", 6}, {"eval_every", 2}, {"batch_size", 32}, {"learning_rate", 1e-3}}},
          {"evaluation", {{"importance_repeats", 2}}},
          {"replication", {{"count", 2}, {"base_seed", 11}}},
          {"ablation", {{"omega_dims", {1, 3}}}},
          {"output_dir", out.string()}};
}

}  // namespace

TEST_CASE("config precedence: defaults, profile, file, flags") {
  json j = {{"dataset", {{"synthetic", {{"n", 100}}}}}};
  auto c = dri::config_from_json(j);
  CHECK(c.profile == "desk");
  CHECK(c.training.max_epochs == 1000);
  CHECK(c.training.learning_rate == 1e-4);
  CHECK(c.replications == 1);
  CHECK(c.training.latent_dim == 15);

  j["training"] = {{"profile", "paper"}};
  c = dri::config_from_json(j);
  CHECK(c.training.max_epochs == 5000);
  CHECK(c.training.learning_rate == 1e-5);

  j["training"]["max_epochs"] = 40;
  c = dri::config_from_json(j);
  CHECK(c.training.max_epochs == 40);
  CHECK(c.training.learning_rate == 1e-5);

  dri::ConfigOverrides ov;
  ov.profile = "desk";
  ov.seed = 77;
  ov.output_dir = "elsewhere";
  ov.workers = 3;
  c = dri::config_from_json(j, ov);
  CHECK(c.profile == "desk");
  CHECK(c.training.learning_rate == 1e-4);
  CHECK(c.training.max_epochs == 40);  // the file still wins over the profile
  CHECK(c.base_seed == 77);
  CHECK(c.replication_seed(2) == 79);
  CHECK(c.output_dir == "elsewhere");
  CHECK(c.workers == 3);
}

TEST_CASE("config errors") {
  CHECK_THROWS_AS(dri::config_from_json(json::object()), dri::ConfigError);
  CHECK_THROWS_AS(dri::config_from_json({{"dataset", {{"synthetic", json::object()}}},
                                         {"trainig", json::object()}}),
                  dri::ConfigError);
  CHECK_THROWS_AS(
      dri::config_from_json({{"dataset", {{"synthetic", json::object()}, {"csv", {{"path", "a"}}}}}}),
      dri::ConfigError);
  CHECK_THROWS_AS(dri::config_from_json({{"dataset", {{"synthetic", json::object()}}},
                                         {"replication", {{"count", 0}}}}),
                  dri::ConfigError);
  CHECK_THROWS_AS(dri::config_from_json({{"dataset", {{"synthetic", json::object()}}},
                                         {"training", {{"profile", "huge"}}}}),
                  dri::ConfigError);
  CHECK_THROWS_AS(dri::config_from_json({{"dataset", {{"synthetic", json::object()}}},
                                         {"training", {{"max_epochs", 0}}}}),
                  dri::ConfigError);
  CHECK_THROWS_AS(dri::load_config("/nonexistent/config.json"), dri::ConfigError);
}

TEST_CASE("config echo reloads to the same configuration") {
  const auto c = dri::config_from_json(fast_config("x"));
  const auto back = dri::config_from_json(dri::config_to_json(c));
  CHECK(dri::config_to_json(back) == dri::config_to_json(c));
  CHECK(dri::config_hash(back) == dri::config_hash(c));
  auto moved = c;
  moved.output_dir = "y";
  CHECK(dri::config_hash(moved) == dri::config_hash(c));
  moved.base_seed += 1;
  CHECK(dri::config_hash(moved) != dri::config_hash(c));
}

TEST_CASE("resolve_path and workers") {
  CHECK(dri::resolve_path("data/ihdp_npci_{r}.csv", 0) == "data/ihdp_npci_1.csv");
  CHECK(dri::resolve_path("{r}/{r}", 9) == "10/10");
  CHECK(dri::resolve_workers(4) == 4);
  CHECK_THROWS_AS(dri::resolve_workers(0), dri::ConfigError);
  ::setenv("DRI_ITE_WORKERS", "3", 1);
  CHECK(dri::resolve_workers(std::nullopt) == 3);
  CHECK(dri::resolve_workers(2) == 2);
  ::setenv("DRI_ITE_WORKERS", "many", 1);
  CHECK_THROWS_AS(dri::resolve_workers(std::nullopt), dri::ConfigError);
  ::unsetenv("DRI_ITE_WORKERS");
  CHECK(dri::resolve_workers(std::nullopt) == 1);
}

TEST_CASE("summaries use the sample standard deviation") {
  const auto s = dri::summarize({1.0, 2.0, 3.0, 4.0});
  CHECK(s.mean == 2.5);
  CHECK(s.std == doctest::Approx(std::sqrt(5.0 / 3.0)));
  CHECK(dri::format_mean_std(s) == "2.5000(1.2910)");
  CHECK(dri::summarize({0.7}).std == 0.0);
  CHECK(dri::format_mean_std(dri::summarize({})) == "NA");
}

TEST_CASE("parallel_for runs every job and rethrows the lowest failing index") {
  std::vector<int> hit(20, 0);
  dri::parallel_for(20, 4, [&](std::size_t i) { hit[i] += 1; });
  for (int h : hit) CHECK(h == 1);
  try {
    dri::parallel_for(10, 3, [&](std::size_t i) {
      if (i == 7 || i == 4) throw dri::DataError("job " + std::to_string(i));
    });
    FAIL("expected an error");
  } catch (const dri::DataError& e) {
    CHECK(std::string(e.what()) == "job 4");
  }
}

TEST_CASE("gen-data writes 8_8_8_15 files with manifest, byte-identical on rerun") {
  const fs::path out = scratch("gen");
  json j = {{"dataset", {{"synthetic", {{"n", 300}, {"dims", {8, 8, 8, 15}}}}}},
            {"replication", {{"count", 2}, {"base_seed", 5}}},
            {"output_dir", out.string()}};
  const auto cfg = dri::config_from_json(j);
  dri::cmd_gen_data(cfg);
  const std::string csv = slurp(out / "data_001.csv");
  const std::string header = csv.substr(0, csv.find('\n'));
  std::string expected;
  for (int i = 1; i <= 39; ++i) expected += "x" + std::to_string(i) + ",";
  expected += "t,y,mu0,mu1";
  CHECK(header == expected);

  const json manifest = read(out / "manifest.json");
  REQUIRE(manifest.at("files").size() == 2);
  const json& f = manifest.at("files")[0];
  CHECK(f.at("seed") == 5);
  CHECK(f.at("rows") == 300);
  CHECK(f.at("roles").size() == 39);
  CHECK(f.at("roles")[38] == "omega");
  CHECK(f.at("coefficients").at("treatment").size() == 16);
  CHECK(manifest.at("files")[1].at("seed") == 6);
  CHECK(manifest.at("synthetic").at("dims") == json({8, 8, 8, 15}));

  const std::string manifest_text = slurp(out / "manifest.json");
  const std::string second = slurp(out / "data_002.csv");
  dri::cmd_gen_data(cfg);
  CHECK(slurp(out / "data_001.csv") == csv);
  CHECK(slurp(out / "data_002.csv") == second);
  CHECK(slurp(out / "manifest.json") == manifest_text);
  CHECK(second != csv);

  // The echo alone reproduces the run.
  const fs::path replay = scratch("gen_replay");
  auto again = dri::load_config(out / "config.json");
  again.output_dir = replay;
  dri::cmd_gen_data(again);
  CHECK(slurp(replay / "data_001.csv") == csv);
}

TEST_CASE("gen-data requires a synthetic source") {
  const fs::path out = scratch("gen_csv");
  json j = {{"dataset", {{"csv", {{"path", (kFixtures / "ihdp_like.csv").string()}}}}},
            {"output_dir", out.string()}};
  CHECK_THROWS_AS(dri::cmd_gen_data(dri::config_from_json(j)), dri::ConfigError);
}

TEST_CASE("augment on an IHDP-format file with 20 contrasts gives 45 covariates") {
  const fs::path out = scratch("augment");
  json j = {{"dataset",
             {{"csv", {{"path", (kFixtures / "ihdp_like.csv").string()}}}, {"contrasts", 20}}},
            {"output_dir", out.string()}};
  dri::cmd_augment(dri::config_from_json(j));
  const json manifest = read(out / "manifest.json");
  CHECK(manifest.at("files")[0].at("covariates") == 45);
  CHECK(manifest.at("files")[0].at("treated") == 5);
  const std::string csv = slurp(out / "data_001.csv");
  CHECK(csv.substr(0, csv.find('\n')).find("x45,t,y,y_cf,mu0,mu1") != std::string::npos);

  json none = j;
  none["dataset"]["contrasts"] = 0;
  CHECK_THROWS_AS(dri::cmd_augment(dri::config_from_json(none)), dri::ConfigError);
}

TEST_CASE("train then eval writes checkpoints, histories and summaries") {
  const fs::path out = scratch("train_eval");
  const auto cfg = dri::config_from_json(fast_config(out));
  dri::cmd_train(cfg);
  for (const char* rep : {"rep_001", "rep_002"}) {
    CHECK(fs::exists(out / rep / "checkpoint.json"));
    const std::string hist = slurp(out / rep / "history.csv");
    CHECK(hist.substr(0, hist.find('\n')) ==
          "epoch,L_reg,L_class,L_disc,L_recons,L_orth,Reg,total,pehe_nn");
  }
  const json ts = read(out / "train_summary.json");
  CHECK(ts.at("replications").size() == 2);
  CHECK(ts.at("replications")[1].at("seed") == 12);

  dri::cmd_eval(cfg, std::nullopt);
  const json es = read(out / "eval_summary.json");
  CHECK(es.at("pehe").at("count") == 2);
  CHECK(es.at("pehe_table").get<std::string>().find('(') != std::string::npos);
  CHECK(fs::exists(out / "rep_001" / "report.json"));
  CHECK(fs::exists(out / "rep_002" / "importance.csv"));
  CHECK(fs::exists(out / "rep_002" / "weights.csv"));

  // Eval output equals the in-memory replication.
  const auto direct = dri::run_replication(cfg, 1, true);
  CHECK(es.at("replications")[1].at("pehe").get<double>() == *direct.report.pehe);

  // Rerun is byte-identical.
  const std::string report = slurp(out / "rep_001" / "report.json");
  const std::string ckpt = slurp(out / "rep_001" / "checkpoint.json");
  dri::cmd_train(cfg);
  dri::cmd_eval(cfg, std::nullopt);
  CHECK(slurp(out / "rep_001" / "checkpoint.json") == ckpt);
  CHECK(slurp(out / "rep_001" / "report.json") == report);

  // Single checkpoint, weights report with identification table.
  const fs::path wr = scratch("weights_report");
  auto cfg2 = cfg;
  cfg2.output_dir = wr;
  dri::cmd_weights_report(cfg2, out / "rep_002" / "checkpoint.json");
  const std::string ident = slurp(wr / "identification.csv");
  CHECK(ident.substr(0, ident.find('\n')) == "replication,encoder,in_group,out_group");
  CHECK(fs::exists(wr / "rep_002" / "weights.csv"));
  dri::cmd_importance(cfg2, out / "rep_001" / "checkpoint.json");
  CHECK(fs::exists(wr / "rep_001" / "importance.csv"));
}

TEST_CASE("eval rejects a checkpoint whose schema does not match the dataset") {
  const fs::path out = scratch("mismatch");
  const auto cfg = dri::config_from_json(fast_config(out));
  dri::cmd_train(cfg);
  json other = fast_config(out);
  other["dataset"]["synthetic"]["dims"] = {2, 2, 2, 5};
  CHECK_THROWS_AS(dri::cmd_eval(dri::config_from_json(other), std::nullopt), dri::DataError);
  const fs::path empty = scratch("no_checkpoints");
  CHECK_THROWS_AS(dri::cmd_eval(dri::config_from_json(fast_config(empty)), std::nullopt),
                  dri::ConfigError);
}

TEST_CASE("ablation grid shape and cell equivalence with train plus eval") {
  const fs::path out = scratch("ablation");
  auto cfg = dri::config_from_json(fast_config(out));
  cfg.replications = 1;
  dri::cmd_ablation(cfg);
  const std::string table = slurp(out / "ablation.csv");
  std::istringstream lines(table);
  std::string line;
  std::getline(lines, line);
  CHECK(line == "loss,omega_1,omega_3");
  std::vector<std::string> rows;
  while (std::getline(lines, line)) rows.push_back(line.substr(0, line.find(',')));
  CHECK(rows == std::vector<std::string>{"base", "base+orth", "base+orth+recons"});

  const auto cells = dri::run_ablation(cfg);
  CHECK(cells.size() == 6);
  const auto full = std::find_if(cells.begin(), cells.end(), [](const dri::AblationCell& c) {
    return c.variant == dri::LossVariant::kFull && c.omega == 3;
  });
  REQUIRE(full != cells.end());
  REQUIRE(full->pehe);

  const fs::path single = scratch("ablation_cell");
  auto cell_cfg = dri::ablation_cell_config(cfg, dri::LossVariant::kFull, 3);
  cell_cfg.output_dir = single;
  dri::cmd_train(cell_cfg);
  dri::cmd_eval(cell_cfg, std::nullopt);
  CHECK(read(single / "eval_summary.json").at("replications")[0].at("pehe").get<double>() ==
        *full->pehe);

  const auto base = dri::variant_weights(cfg.training.weights, dri::LossVariant::kBase);
  CHECK(base.gamma == 0.0);
  CHECK(base.lambda == 0.0);
  CHECK(base.alpha == cfg.training.weights.alpha);
  const auto orth = dri::variant_weights(cfg.training.weights, dri::LossVariant::kOrth);
  CHECK(orth.gamma == 0.0);
  CHECK(orth.lambda == cfg.training.weights.lambda);
}

TEST_CASE("ablation records failing cells without aborting") {
  const fs::path out = scratch("ablation_fail");
  json j = fast_config(out);
  j["dataset"] = {{"csv", {{"path", (out / "missing_{r}.csv").string()}}}};
  auto cfg = dri::config_from_json(j);
  cfg.replications = 1;
  dri::cmd_ablation(cfg);
  const std::string cells = slurp(out / "ablation_cells.csv");
  CHECK(cells.find("cannot open") != std::string::npos);
  CHECK(slurp(out / "ablation.csv").find("NA") != std::string::npos);
}
