#include "dri/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "dri/config_keys.hpp"
#include "dri/error.hpp"
#include "dri/random.hpp"

namespace dri {
namespace {

double sigmoid(double v) {
  return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '"')) {
    s.remove_prefix(1);
  }
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' ||
                        s.back() == '"')) {
    s.remove_suffix(1);
  }
  return s;
}

std::vector<std::string_view> split_line(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      cells.push_back(trim(line.substr(start)));
      break;
    }
    cells.push_back(trim(line.substr(start, comma - start)));
    start = comma + 1;
  }
  return cells;
}

std::optional<double> parse_double(std::string_view cell) {
  if (cell.empty()) return std::nullopt;
  if (cell.front() == '+') cell.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(v)) {
    return std::nullopt;
  }
  return v;
}

// Cholesky factor of a row-major m x m covariance; identity when empty.
Eigen::MatrixXd cholesky_factor(const std::vector<double>& cov, std::size_t m,
                                const char* factor) {
  if (cov.empty()) return Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(m),
                                                    static_cast<Eigen::Index>(m));
  if (cov.size() != m * m) {
    throw ConfigError(std::string("covariance of ") + factor + " must have " +
                      std::to_string(m * m) + " entries");
  }
  const Eigen::Map<const RowMatrix> s(cov.data(), static_cast<Eigen::Index>(m),
                                      static_cast<Eigen::Index>(m));
  if (!s.isApprox(s.transpose(), 1e-12)) {
    throw ConfigError(std::string("covariance of ") + factor + " is not symmetric");
  }
  Eigen::LLT<Eigen::MatrixXd> llt(s);
  if (llt.info() != Eigen::Success) {
    throw ConfigError(std::string("covariance of ") + factor + " is not positive definite");
  }
  return llt.matrixL();
}

std::vector<double> draw_normal(std::mt19937_64& rng, std::size_t n) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> out(n);
  for (double& v : out) v = dist(rng);
  return out;
}

}  // namespace

std::string_view role_name(FeatureRole role) {
  switch (role) {
    case FeatureRole::kGamma: return "gamma";
    case FeatureRole::kDelta: return "delta";
    case FeatureRole::kUpsilon: return "upsilon";
    case FeatureRole::kOmega: return "omega";
    case FeatureRole::kUnknown: return "unknown";
  }
  return "unknown";
}

FeatureRole role_from_name(std::string_view name) {
  if (name == "gamma") return FeatureRole::kGamma;
  if (name == "delta") return FeatureRole::kDelta;
  if (name == "upsilon") return FeatureRole::kUpsilon;
  if (name == "omega") return FeatureRole::kOmega;
  if (name == "unknown") return FeatureRole::kUnknown;
  throw ConfigError("unknown feature role '" + std::string(name) + "'");
}

std::size_t Dataset::treated_count() const {
  return static_cast<std::size_t>(std::count(t.begin(), t.end(), 1));
}

std::vector<double> Dataset::true_effect() const {
  std::vector<double> e(size());
  if (mu0 && mu1) {
    for (std::size_t i = 0; i < e.size(); ++i) e[i] = (*mu1)[i] - (*mu0)[i];
  } else if (y_cf) {
    for (std::size_t i = 0; i < e.size(); ++i) {
      e[i] = t[i] == 1 ? y[i] - (*y_cf)[i] : (*y_cf)[i] - y[i];
    }
  } else {
    throw DataError("dataset has no counterfactual information");
  }
  return e;
}

void Dataset::validate() const {
  const std::size_t n = t.size();
  if (n == 0) throw DataError("dataset is empty");
  if (x.rows() != n || y.size() != n) throw DataError("dataset fields have inconsistent lengths");
  if (roles.size() != x.cols()) throw DataError("feature roles must match covariate columns");
  for (const auto* opt : {&y_cf, &mu0, &mu1}) {
    if (opt->has_value() && (*opt)->size() != n) {
      throw DataError("optional outcome column has inconsistent length");
    }
  }
  if (mu0.has_value() != mu1.has_value()) throw DataError("mu0 and mu1 must come together");
  for (int v : t) {
    if (v != 0 && v != 1) throw DataError("treatment must be binary");
  }
  if (!x.all_finite()) throw DataError("covariates contain NaN/Inf");
  auto finite = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double d) { return std::isfinite(d); });
  };
  if (!finite(y)) throw DataError("outcomes contain NaN/Inf");
  for (const auto* opt : {&y_cf, &mu0, &mu1}) {
    if (opt->has_value() && !finite(**opt)) throw DataError("outcomes contain NaN/Inf");
  }
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  Dataset out;
  out.x = x.select_rows(rows);
  out.roles = roles;
  auto pick = [&](const std::vector<double>& src) {
    std::vector<double> v;
    v.reserve(rows.size());
    for (std::size_t r : rows) v.push_back(src.at(r));
    return v;
  };
  for (std::size_t r : rows) out.t.push_back(t.at(r));
  out.y = pick(y);
  if (y_cf) out.y_cf = pick(*y_cf);
  if (mu0) out.mu0 = pick(*mu0);
  if (mu1) out.mu1 = pick(*mu1);
  return out;
}

// ---- synthetic ----

void SyntheticSpec::validate() const {
  if (n < 2) throw ConfigError("synthetic n must be >= 2");
  if (dims[0] + dims[1] + dims[2] < 1) {
    throw ConfigError("synthetic data needs at least one gamma/delta/upsilon column");
  }
  for (std::size_t f = 0; f < 3; ++f) {
    if (!means[f].empty() && means[f].size() != dims[f]) {
      throw ConfigError("mean vector length must match its factor dim");
    }
    cholesky_factor(covariances[f], dims[f], "factor");
  }
  for (double v : {treatment_scale, outcome_scale, effect_scale, noise_std}) {
    if (!std::isfinite(v)) throw ConfigError("synthetic scales must be finite");
  }
  if (noise_std < 0.0) throw ConfigError("noise std must be non-negative");
}

SyntheticCoefficients synthetic_coefficients(const SyntheticSpec& spec) {
  auto rng = make_rng(spec.seed, streams::kCoefficients);
  const std::size_t selection = spec.dims[0] + spec.dims[1];
  const std::size_t outcome = spec.dims[1] + spec.dims[2];
  SyntheticCoefficients c;
  c.treatment = draw_normal(rng, selection);
  c.outcome0 = draw_normal(rng, outcome);
  c.outcome1 = draw_normal(rng, outcome);
  c.effect = draw_normal(rng, outcome);
  return c;
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const auto coef = synthetic_coefficients(spec);
  const std::size_t n = spec.n;
  const auto& dims = spec.dims;
  const std::size_t k = dims[0] + dims[1] + dims[2];
  auto rng = make_rng(spec.seed, streams::kUnits);
  std::normal_distribution<double> normal(0.0, 1.0);

  Dataset data;
  data.x = Tensor(n, k);
  std::size_t offset = 0;
  const std::array<FeatureRole, 3> roles = {FeatureRole::kGamma, FeatureRole::kDelta,
                                            FeatureRole::kUpsilon};
  const std::array<const char*, 3> names = {"gamma", "delta", "upsilon"};
  for (std::size_t f = 0; f < 3; ++f) {
    const std::size_t m = dims[f];
    if (m == 0) continue;
    const Eigen::MatrixXd chol = cholesky_factor(spec.covariances[f], m, names[f]);
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m));
    if (!spec.means[f].empty()) {
      mean = Eigen::Map<const Eigen::VectorXd>(spec.means[f].data(), static_cast<Eigen::Index>(m));
    }
    Eigen::VectorXd z(static_cast<Eigen::Index>(m));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) z[static_cast<Eigen::Index>(j)] = normal(rng);
      const Eigen::VectorXd draw = mean + chol * z;
      for (std::size_t j = 0; j < m; ++j) data.x(i, offset + j) = draw[static_cast<Eigen::Index>(j)];
    }
    data.roles.insert(data.roles.end(), m, roles[f]);
    offset += m;
  }

  const std::size_t selection = dims[0] + dims[1];
  const std::size_t outcome = dims[1] + dims[2];
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  data.t.resize(n);
  data.y.resize(n);
  data.mu0 = std::vector<double>(n);
  data.mu1 = std::vector<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    double logit = 0.0;
    for (std::size_t j = 0; j < selection; ++j) logit += coef.treatment[j] * data.x(i, j);
    if (selection > 0) logit *= spec.treatment_scale / static_cast<double>(selection);
    data.t[i] = unit(rng) < sigmoid(logit) ? 1 : 0;

    double lin0 = 0.0, lin1 = 0.0, het = 0.0;
    for (std::size_t j = 0; j < outcome; ++j) {
      const double v = data.x(i, dims[0] + j);
      lin0 += coef.outcome0[j] * v;
      lin1 += coef.outcome1[j] * v;
      het += coef.effect[j] * v;
    }
    if (outcome > 0) {
      const double inv = 1.0 / static_cast<double>(outcome);
      lin0 *= spec.outcome_scale * inv;
      lin1 *= spec.outcome_scale * inv;
      het *= spec.effect_scale * inv;
    }
    (*data.mu0)[i] = lin0;
    (*data.mu1)[i] = lin1 + het * het;
    const double mu = data.t[i] == 1 ? (*data.mu1)[i] : (*data.mu0)[i];
    data.y[i] = mu + spec.noise_std * normal(rng);
  }
  data.validate();
  if (dims[3] > 0) return add_artificial_contrasts(data, dims[3], spec.seed);
  return data;
}

Dataset add_artificial_contrasts(const Dataset& data, std::size_t count, std::uint64_t seed) {
  if (count == 0) return data;
  if (data.covariate_dim() == 0) throw DataError("contrasts need at least one base column");
  std::vector<std::size_t> relevant;
  for (std::size_t j = 0; j < data.roles.size(); ++j) {
    if (data.roles[j] != FeatureRole::kOmega) relevant.push_back(j);
  }
  if (relevant.empty()) throw DataError("no relevant column to permute");

  auto rng = make_rng(seed, streams::kContrasts);
  const std::size_t n = data.size();
  const std::size_t k = data.covariate_dim();
  Dataset out = data;
  out.x = Tensor(n, k + count);
  out.x.mat().leftCols(static_cast<Eigen::Index>(k)) = data.x.mat();
  std::vector<std::size_t> perm(n);
  for (std::size_t c = 0; c < count; ++c) {
    std::uniform_int_distribution<std::size_t> pick(0, relevant.size() - 1);
    const std::size_t source = relevant[pick(rng)];
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t i = 0; i < n; ++i) out.x(i, k + c) = data.x(perm[i], source);
    out.roles.push_back(FeatureRole::kOmega);
  }
  return out;
}

// ---- CSV ----

CsvSchema CsvSchema::ihdp(bool header) {
  CsvSchema s;
  for (int i = 1; i <= 25; ++i) s.covariates.push_back("x" + std::to_string(i));
  s.treatment = "treatment";
  s.outcome = "y_factual";
  s.y_cfactual = "y_cfactual";
  s.mu0 = "mu0";
  s.mu1 = "mu1";
  s.header = header;
  if (!header) {
    s.column_names = {"treatment", "y_factual", "y_cfactual", "mu0", "mu1"};
    s.column_names.insert(s.column_names.end(), s.covariates.begin(), s.covariates.end());
  }
  return s;
}

CsvSchema CsvSchema::jobs() {
  CsvSchema s;
  s.covariates = {"age", "educ", "black", "hisp", "married", "nodegr", "re74", "re75"};
  s.treatment = "treatment";
  s.outcome = "re78";
  return s;
}

CsvSchema CsvSchema::generated(std::size_t covariate_dim, bool with_cf, bool with_mu) {
  CsvSchema s;
  for (std::size_t i = 1; i <= covariate_dim; ++i) s.covariates.push_back("x" + std::to_string(i));
  s.treatment = "t";
  s.outcome = "y";
  if (with_cf) s.y_cfactual = "y_cf";
  if (with_mu) {
    s.mu0 = "mu0";
    s.mu1 = "mu1";
  }
  return s;
}

Dataset load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  if (schema.covariates.empty()) throw ConfigError("csv schema declares no covariates");
  if (!schema.roles.empty() && schema.roles.size() != schema.covariates.size()) {
    throw ConfigError("csv schema roles must match covariates");
  }

  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  if (schema.header) {
    while (std::getline(in, line)) {
      ++line_no;
      if (!trim(line).empty()) break;
    }
    for (auto cell : split_line(line)) header.emplace_back(cell);
  } else {
    header = schema.column_names;
  }
  if (header.empty()) throw DataError(path.string() + ": no header");
  std::unordered_map<std::string, std::size_t> position;
  for (std::size_t i = 0; i < header.size(); ++i) position.emplace(header[i], i);
  auto column = [&](const std::string& name) -> std::size_t {
    const auto it = position.find(name);
    if (it == position.end()) throw DataError(path.string() + ": missing column '" + name + "'");
    return it->second;
  };

  std::vector<std::size_t> cov_cols;
  for (const auto& c : schema.covariates) cov_cols.push_back(column(c));
  const std::size_t t_col = column(schema.treatment);
  const std::size_t y_col = column(schema.outcome);
  constexpr std::size_t kAbsent = static_cast<std::size_t>(-1);
  const std::size_t cf_col = schema.y_cfactual.empty() ? kAbsent : column(schema.y_cfactual);
  const std::size_t mu0_col = schema.mu0.empty() ? kAbsent : column(schema.mu0);
  const std::size_t mu1_col = schema.mu1.empty() ? kAbsent : column(schema.mu1);

  std::vector<double> xs;
  Dataset data;
  std::vector<double> cf, mu0, mu1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_line(line);
    auto cell = [&](std::size_t col) -> double {
      const std::string& name = col < header.size() ? header[col] : std::string("?");
      if (col >= cells.size()) {
        throw DataError(path.string() + ": row " + std::to_string(line_no) + ", column '" +
                        name + "': missing cell");
      }
      const auto v = parse_double(cells[col]);
      if (!v) {
        throw DataError(path.string() + ": row " + std::to_string(line_no) + ", column '" +
                        name + "': non-numeric cell '" + std::string(cells[col]) + "'");
      }
      return *v;
    };
    for (std::size_t c : cov_cols) xs.push_back(cell(c));
    const double tv = cell(t_col);
    if (tv != 0.0 && tv != 1.0) {
      throw DataError(path.string() + ": row " + std::to_string(line_no) +
                      ": treatment must be 0 or 1, got " + std::string(cells[t_col]));
    }
    data.t.push_back(static_cast<int>(tv));
    data.y.push_back(cell(y_col));
    if (cf_col != kAbsent) cf.push_back(cell(cf_col));
    if (mu0_col != kAbsent) mu0.push_back(cell(mu0_col));
    if (mu1_col != kAbsent) mu1.push_back(cell(mu1_col));
  }
  if (data.t.empty()) throw DataError(path.string() + ": no data rows");
  data.x = Tensor(data.t.size(), cov_cols.size(), std::move(xs));
  if (cf_col != kAbsent) data.y_cf = std::move(cf);
  if (mu0_col != kAbsent) data.mu0 = std::move(mu0);
  if (mu1_col != kAbsent) data.mu1 = std::move(mu1);
  data.roles = schema.roles.empty()
                   ? std::vector<FeatureRole>(cov_cols.size(), FeatureRole::kUnknown)
                   : schema.roles;
  data.validate();
  return data;
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw std::runtime_error("double formatting failed");
  return std::string(buf, ptr);
}

void write_dataset_csv(const std::filesystem::path& path, const Dataset& data) {
  data.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  const std::size_t k = data.covariate_dim();
  for (std::size_t j = 0; j < k; ++j) out << 'x' << (j + 1) << ',';
  out << "t,y";
  if (data.y_cf) out << ",y_cf";
  if (data.mu0) out << ",mu0,mu1";
  out << '\n';
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t j = 0; j < k; ++j) out << format_double(data.x(i, j)) << ',';
    out << data.t[i] << ',' << format_double(data.y[i]);
    if (data.y_cf) out << ',' << format_double((*data.y_cf)[i]);
    if (data.mu0) out << ',' << format_double((*data.mu0)[i]) << ',' << format_double((*data.mu1)[i]);
    out << '\n';
  }
  if (!out) throw DataError("failed writing " + path.string());
}

nlohmann::json schema_to_json(const CsvSchema& s) {
  nlohmann::json j;
  j["covariates"] = s.covariates;
  j["treatment"] = s.treatment;
  j["outcome"] = s.outcome;
  j["y_cfactual"] = s.y_cfactual;
  j["mu0"] = s.mu0;
  j["mu1"] = s.mu1;
  j["header"] = s.header;
  j["column_names"] = s.column_names;
  std::vector<std::string> roles;
  for (auto r : s.roles) roles.emplace_back(role_name(r));
  j["roles"] = roles;
  return j;
}

namespace {

CsvSchema schema_from_checked_json(const nlohmann::json& j) {
  CsvSchema s;
  if (j.contains("preset")) {
    const auto preset = j.at("preset").get<std::string>();
    if (preset == "ihdp") {
      s = CsvSchema::ihdp(j.value("header", true));
    } else if (preset == "jobs") {
      s = CsvSchema::jobs();
    } else if (preset == "generated") {
      s = CsvSchema::generated(j.at("covariate_dim").get<std::size_t>(),
                               j.value("with_cf", true), j.value("with_mu", true));
    } else {
      throw ConfigError("unknown csv schema preset '" + preset + "'");
    }
  }
  if (j.contains("covariates")) s.covariates = j.at("covariates").get<std::vector<std::string>>();
  if (j.contains("treatment")) s.treatment = j.at("treatment").get<std::string>();
  if (j.contains("outcome")) s.outcome = j.at("outcome").get<std::string>();
  if (j.contains("y_cfactual")) s.y_cfactual = j.at("y_cfactual").get<std::string>();
  if (j.contains("mu0")) s.mu0 = j.at("mu0").get<std::string>();
  if (j.contains("mu1")) s.mu1 = j.at("mu1").get<std::string>();
  if (j.contains("header") && !j.contains("preset")) s.header = j.at("header").get<bool>();
  if (j.contains("column_names")) {
    s.column_names = j.at("column_names").get<std::vector<std::string>>();
  }
  if (j.contains("roles")) {
    s.roles.clear();
    for (const auto& r : j.at("roles")) s.roles.push_back(role_from_name(r.get<std::string>()));
  }
  if (s.treatment.empty() || s.outcome.empty()) {
    throw ConfigError("csv schema needs treatment and outcome columns");
  }
  return s;
}

}  // namespace

CsvSchema schema_from_json(const nlohmann::json& j) {
  check_keys(j, {"preset", "covariate_dim", "with_cf", "with_mu", "covariates", "treatment",
                 "outcome", "y_cfactual", "mu0", "mu1", "header", "column_names", "roles"},
             "csv schema");
  try {
    return schema_from_checked_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("csv schema: ") + e.what());
  }
}

nlohmann::json synthetic_spec_to_json(const SyntheticSpec& s) {
  nlohmann::json j;
  j["n"] = s.n;
  j["dims"] = s.dims;
  j["means"] = s.means;
  j["covariances"] = s.covariances;
  j["treatment_scale"] = s.treatment_scale;
  j["outcome_scale"] = s.outcome_scale;
  j["effect_scale"] = s.effect_scale;
  j["noise_std"] = s.noise_std;
  j["seed"] = s.seed;
  return j;
}

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
  check_keys(j, {"n", "dims", "means", "covariances", "treatment_scale", "outcome_scale",
                 "effect_scale", "noise_std", "seed"},
             "synthetic");
  SyntheticSpec s;
  try {
  s.n = j.value("n", s.n);
  if (j.contains("dims")) {
    const auto dims = j.at("dims").get<std::vector<std::size_t>>();
    if (dims.size() != 4) throw ConfigError("synthetic dims must have 4 entries");
    std::copy(dims.begin(), dims.end(), s.dims.begin());
  }
  if (j.contains("means")) s.means = j.at("means").get<std::array<std::vector<double>, 3>>();
  if (j.contains("covariances")) {
    s.covariances = j.at("covariances").get<std::array<std::vector<double>, 3>>();
  }
  s.treatment_scale = j.value("treatment_scale", s.treatment_scale);
  s.outcome_scale = j.value("outcome_scale", s.outcome_scale);
  s.effect_scale = j.value("effect_scale", s.effect_scale);
  s.noise_std = j.value("noise_std", s.noise_std);
  s.seed = j.value("seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("synthetic: ") + e.what());
  }
  s.validate();
  return s;
}

// ---- split / scale ----

SplitIndices split(std::span<const int> t, const std::array<double, 3>& fractions,
                   std::uint64_t seed, bool stratify) {
  double total = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0) || !std::isfinite(f)) throw ConfigError("split fractions must be >= 0");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
  auto rng = make_rng(seed, streams::kSplit);
  SplitIndices out;
  std::array<std::vector<std::size_t>*, 3> parts = {&out.train, &out.validation, &out.test};

  auto allocate = [&](std::vector<std::size_t> pool) {
    std::shuffle(pool.begin(), pool.end(), rng);
    const std::size_t n = pool.size();
    const std::size_t n_train = static_cast<std::size_t>(std::llround(fractions[0] * n));
    const std::size_t n_val = std::min(
        n - std::min(n, n_train), static_cast<std::size_t>(std::llround(fractions[1] * n)));
    const std::size_t train_end = std::min(n, n_train);
    const std::size_t val_end = fractions[2] == 0.0 ? n : train_end + n_val;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t part = i < train_end ? 0 : (i < val_end ? 1 : 2);
      parts[part]->push_back(pool[i]);
    }
  };

  if (stratify) {
    std::vector<std::size_t> control, treated;
    for (std::size_t i = 0; i < t.size(); ++i) (t[i] == 1 ? treated : control).push_back(i);
    allocate(std::move(control));
    allocate(std::move(treated));
    for (std::size_t p = 0; p < 3; ++p) {
      if (fractions[p] <= 0.0) continue;
      const auto& idx = *parts[p];
      const bool has_t = std::any_of(idx.begin(), idx.end(), [&](std::size_t i) { return t[i] == 1; });
      const bool has_c = std::any_of(idx.begin(), idx.end(), [&](std::size_t i) { return t[i] == 0; });
      if (!has_t || !has_c) {
        throw DataError("stratified split leaves a part without one treatment group");
      }
    }
  } else {
    std::vector<std::size_t> all(t.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    allocate(std::move(all));
  }
  for (auto* p : parts) std::sort(p->begin(), p->end());
  return out;
}

ColumnScaler ColumnScaler::fit(const Tensor& x) {
  ColumnScaler s;
  const auto m = x.mat();
  const double n = static_cast<double>(x.rows());
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    const double mean = m.col(c).sum() / n;
    const double var = (m.col(c).array() - mean).square().sum() / n;
    const double sd = std::sqrt(var);
    s.mean.push_back(mean);
    s.scale.push_back(sd > 1e-12 ? sd : 1.0);
  }
  return s;
}

Tensor ColumnScaler::apply(const Tensor& x) const {
  if (x.cols() != mean.size()) throw ShapeError("scaler fitted on a different column count");
  Tensor out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = (x(i, j) - mean[j]) / scale[j];
  }
  return out;
}

OutcomeScaler OutcomeScaler::fit(std::span<const double> y) {
  if (y.empty()) throw DataError("cannot fit an outcome scaler on no data");
  OutcomeScaler s;
  const double n = static_cast<double>(y.size());
  s.mean = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double var = 0.0;
  for (double v : y) var += (v - s.mean) * (v - s.mean);
  const double sd = std::sqrt(var / n);
  s.scale = sd > 1e-12 ? sd : 1.0;
  return s;
}

}  // namespace dri
