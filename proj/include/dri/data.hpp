#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "dri/tensor.hpp"

namespace dri {

enum class FeatureRole { kGamma, kDelta, kUpsilon, kOmega, kUnknown };

std::string_view role_name(FeatureRole role);
FeatureRole role_from_name(std::string_view name);

struct Dataset {
  Tensor x;                // N x K covariates
  std::vector<int> t;      // N binary treatments
  std::vector<double> y;   // N factual outcomes
  std::optional<std::vector<double>> y_cf;
  std::optional<std::vector<double>> mu0;
  std::optional<std::vector<double>> mu1;
  std::vector<FeatureRole> roles;  // K entries

  std::size_t size() const { return t.size(); }
  std::size_t covariate_dim() const { return x.cols(); }
  std::size_t treated_count() const;
  std::size_t control_count() const { return size() - treated_count(); }
  bool has_true_effect() const { return (mu0 && mu1) || y_cf.has_value(); }
  // mu1 - mu0 when the noiseless outcomes are known, otherwise the signed
  // difference of factual and counterfactual outcomes.
  std::vector<double> true_effect() const;

  // Throws DataError on inconsistent lengths, non-binary t, or NaN/Inf.
  void validate() const;
  Dataset subset(std::span<const std::size_t> rows) const;
};

// ---- synthetic generation ----

struct SyntheticSpec {
  std::size_t n = 3000;
  // Latent block sizes (gamma, delta, upsilon, omega). Omega columns are
  // artificial contrasts appended after generation.
  std::array<std::size_t, 4> dims = {8, 8, 8, 0};
  // Per-factor mean and row-major covariance for gamma, delta, upsilon;
  // empty means zero mean / identity covariance.
  std::array<std::vector<double>, 3> means;
  std::array<std::vector<double>, 3> covariances;
  double treatment_scale = 3.0;
  double outcome_scale = 1.0;
  double effect_scale = 1.0;
  double noise_std = 0.1;
  std::uint64_t seed = 1;

  void validate() const;
};

// DGP coefficients; drawn from the seed independently of the unit draws.
struct SyntheticCoefficients {
  std::vector<double> treatment;  // over [gamma; delta]
  std::vector<double> outcome0;   // over [delta; upsilon]
  std::vector<double> outcome1;   // over [delta; upsilon]
  std::vector<double> effect;     // over [delta; upsilon]
};

SyntheticCoefficients synthetic_coefficients(const SyntheticSpec& spec);

// x = [gamma | delta | upsilon] drawn from multivariate normals, then
//   t  ~ Bernoulli(sigmoid(a * w_t . [gamma; delta] / (m_g + m_d)))
//   mu_t = s_y * w_yt . [delta; upsilon] / (m_d + m_u)
//          + t * (s_e * w_e . [delta; upsilon] / (m_d + m_u))^2
//   y  = mu_t + N(0, noise_std^2)
// followed by dims[3] artificial contrasts.
Dataset generate_synthetic(const SyntheticSpec& spec);

// Appends `count` columns, each an independent row permutation of a uniformly
// chosen relevant (non-omega) column, labeled omega.
Dataset add_artificial_contrasts(const Dataset& data, std::size_t count, std::uint64_t seed);

// ---- CSV ingestion/export ----

struct CsvSchema {
  std::vector<std::string> covariates;
  std::string treatment;
  std::string outcome;
  std::string y_cfactual;  // empty when absent
  std::string mu0;         // empty when absent
  std::string mu1;         // empty when absent
  bool header = true;
  // Column names for files without a header row.
  std::vector<std::string> column_names;
  // Optional per-covariate roles; unknown when empty.
  std::vector<FeatureRole> roles;

  // Per-realization IHDP layout: treatment, y_factual, y_cfactual, mu0, mu1, x1..x25.
  static CsvSchema ihdp(bool header = true);
  // Lalonde/Jobs layout with the 8 named covariates and re78 as outcome.
  static CsvSchema jobs();
  // Layout written by write_dataset_csv.
  static CsvSchema generated(std::size_t covariate_dim, bool with_cf, bool with_mu);
};

Dataset load_csv(const std::filesystem::path& path, const CsvSchema& schema);

// Header x1..xK,t,y[,y_cf][,mu0,mu1]; values in shortest round-trip form.
void write_dataset_csv(const std::filesystem::path& path, const Dataset& data);
std::string format_double(double v);

nlohmann::json schema_to_json(const CsvSchema& schema);
CsvSchema schema_from_json(const nlohmann::json& j);
nlohmann::json synthetic_spec_to_json(const SyntheticSpec& spec);
SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j);

// ---- splitting and scaling ----

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
};

// Disjoint, exhaustive, sorted index sets. Stratified splits allocate each
// treatment group separately; a positive-fraction split left without one of
// the groups is an error.
SplitIndices split(std::span<const int> t, const std::array<double, 3>& fractions,
                   std::uint64_t seed, bool stratify);

struct ColumnScaler {
  std::vector<double> mean;
  std::vector<double> scale;

  static ColumnScaler fit(const Tensor& x);
  Tensor apply(const Tensor& x) const;
};

struct OutcomeScaler {
  double mean = 0.0;
  double scale = 1.0;

  static OutcomeScaler fit(std::span<const double> y);
  double forward(double v) const { return (v - mean) / scale; }
  double inverse(double v) const { return v * scale + mean; }
};

}  // namespace dri
