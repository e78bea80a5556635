#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "dri/autodiff.hpp"
#include "dri/tensor.hpp"

namespace dri {

enum class FinalActivation { kIdentity, kSigmoid };

// Fully connected network: ELU after every layer but the last, whose
// activation is configurable.
struct MlpSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> widths;  // hidden widths, then output width
  FinalActivation final_activation = FinalActivation::kIdentity;

  void validate() const;
  std::size_t output_dim() const { return widths.back(); }
  std::size_t parameter_count() const;
};

struct DenseLayer {
  Tensor weight;  // fan_in x fan_out
  Tensor bias;    // 1 x fan_out
};

struct Mlp {
  MlpSpec spec;
  std::vector<DenseLayer> layers;
};

// The four latent factors: instrumental, confounding, adjustment, irrelevant.
enum class Factor : std::size_t { kGamma = 0, kDelta = 1, kUpsilon = 2, kOmega = 3 };
inline constexpr std::array<Factor, 4> kAllFactors = {Factor::kGamma, Factor::kDelta,
                                                      Factor::kUpsilon, Factor::kOmega};
std::string_view factor_name(Factor f);

struct FactorNetworksSpec {
  std::array<MlpSpec, 4> encoders;  // indexed by Factor
  MlpSpec head_y0;                  // over [delta, upsilon]
  MlpSpec head_y1;                  // over [delta, upsilon]
  MlpSpec head_treat;               // over [gamma, delta], sigmoid output
  MlpSpec decoder;                  // over [gamma, delta, upsilon, omega], K outputs

  std::size_t covariate_dim() const { return encoders[0].input_dim; }
  void validate() const;
};

// Compact description from which the full spec is derived.
struct NetworkShape {
  std::size_t covariate_dim = 0;
  std::array<std::size_t, 4> latent_dims = {15, 15, 15, 15};
  std::size_t encoder_layers = 3;
  std::size_t head_hidden = 100;
  std::size_t head_layers = 3;
  std::size_t decoder_hidden = 100;
  std::size_t decoder_layers = 3;

  FactorNetworksSpec to_spec() const;
};

struct FactorNetworks {
  FactorNetworksSpec spec;
  std::array<Mlp, 4> encoders;
  Mlp head_y0;
  Mlp head_y1;
  Mlp head_treat;
  Mlp decoder;

  // Networks in canonical order with their export names.
  std::vector<std::pair<std::string, const Mlp*>> named() const;
  std::vector<std::pair<std::string, Mlp*>> named();
  // Weight and bias tensors in canonical order (network, layer, weight, bias).
  std::vector<Tensor*> parameters();
  std::size_t parameter_count() const;
};

// Fan-in scaled uniform weights, zero biases. Deterministic for a seed.
FactorNetworks init_networks(const FactorNetworksSpec& spec, std::uint64_t seed);

// Per-encoder feature contribution: row means of |W_1 W_2 ... W_L| (biases
// excluded), one entry per covariate.
struct WeightContribution {
  std::array<std::vector<double>, 4> per_encoder;  // indexed by Factor

  const std::vector<double>& operator[](Factor f) const {
    return per_encoder[static_cast<std::size_t>(f)];
  }
};

std::vector<double> weight_contribution(const Mlp& encoder);
WeightContribution weight_contribution(const FactorNetworks& nets);

// ---- graph binding ----

struct BoundMlp {
  std::vector<NodeId> weights;
  std::vector<NodeId> biases;
  FinalActivation final_activation = FinalActivation::kIdentity;
};

struct BoundNetworks {
  std::array<BoundMlp, 4> encoders;
  BoundMlp head_y0;
  BoundMlp head_y1;
  BoundMlp head_treat;
  BoundMlp decoder;

  // Same order as FactorNetworks::parameters().
  std::vector<NodeId> parameter_ids() const;
};

BoundNetworks bind_parameters(Graph& graph, const FactorNetworks& nets);
// Binds existing nodes, given in parameters() order, to the layout of `nets`.
BoundNetworks bind_parameters(const FactorNetworks& nets, std::span<const NodeId> ids);
NodeId apply_mlp(Graph& graph, const BoundMlp& mlp, NodeId x);

struct FactorOutputs {
  std::array<NodeId, 4> embeddings;  // indexed by Factor
  NodeId y0_hat;
  NodeId y1_hat;
  NodeId t_hat;
  NodeId x_recon;
};

// All eight outputs on one graph so a single backward covers the objective.
FactorOutputs forward_all(Graph& graph, const BoundNetworks& nets, NodeId x);

// Graph form of weight_contribution: one K x 1 node per encoder.
std::array<NodeId, 4> weight_contribution(Graph& graph, const BoundNetworks& nets);

struct FactorValues {
  std::array<Tensor, 4> embeddings;
  Tensor y0_hat;
  Tensor y1_hat;
  Tensor t_hat;
  Tensor x_recon;
};

FactorValues forward_all(const FactorNetworks& nets, const Tensor& x);

// ---- persistence ----

nlohmann::json networks_to_json(const FactorNetworks& nets);
FactorNetworks networks_from_json(const nlohmann::json& doc);

}  // namespace dri
