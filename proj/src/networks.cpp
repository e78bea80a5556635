#include "dri/networks.hpp"

#include <cmath>
#include <random>

#include "dri/error.hpp"

namespace dri {
namespace {

constexpr const char* kNetworkFormat = "dri-ite-networks/1";

const char* activation_name(FinalActivation a) {
  return a == FinalActivation::kSigmoid ? "sigmoid" : "identity";
}

FinalActivation activation_from_name(const std::string& name) {
  if (name == "sigmoid") return FinalActivation::kSigmoid;
  if (name == "identity") return FinalActivation::kIdentity;
  throw ConfigError("unknown final activation '" + name + "'");
}

Mlp make_mlp(const MlpSpec& spec, std::mt19937_64& rng) {
  Mlp mlp;
  mlp.spec = spec;
  std::size_t fan_in = spec.input_dim;
  for (std::size_t width : spec.widths) {
    DenseLayer layer{Tensor(fan_in, width), Tensor(1, width)};
    const double limit = std::sqrt(3.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (double& w : layer.weight.storage()) w = dist(rng);
    mlp.layers.push_back(std::move(layer));
    fan_in = width;
  }
  return mlp;
}

void check_mlp_matches(const Mlp& mlp, const std::string& name) {
  mlp.spec.validate();
  if (mlp.layers.size() != mlp.spec.widths.size()) {
    throw ShapeError(name + ": layer count does not match its spec");
  }
  std::size_t fan_in = mlp.spec.input_dim;
  for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
    const auto& layer = mlp.layers[l];
    const std::size_t width = mlp.spec.widths[l];
    if (layer.weight.rows() != fan_in || layer.weight.cols() != width ||
        layer.bias.rows() != 1 || layer.bias.cols() != width) {
      throw ShapeError(name + " layer " + std::to_string(l) + ": weight " +
                       layer.weight.shape_string() + " / bias " + layer.bias.shape_string() +
                       " do not match the spec");
    }
    fan_in = width;
  }
}

BoundMlp bind_mlp(Graph& graph, const Mlp& mlp) {
  BoundMlp bound;
  bound.final_activation = mlp.spec.final_activation;
  for (const auto& layer : mlp.layers) {
    bound.weights.push_back(graph.parameter(layer.weight));
    bound.biases.push_back(graph.parameter(layer.bias));
  }
  return bound;
}

nlohmann::json mlp_to_json(const Mlp& mlp) {
  nlohmann::json j;
  j["input_dim"] = mlp.spec.input_dim;
  j["widths"] = mlp.spec.widths;
  j["final_activation"] = activation_name(mlp.spec.final_activation);
  nlohmann::json layers = nlohmann::json::object();
  for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
    const auto& layer = mlp.layers[l];
    layers[std::to_string(l)] = {
        {"rows", layer.weight.rows()},
        {"cols", layer.weight.cols()},
        {"weight", layer.weight.storage()},
        {"bias", layer.bias.storage()},
    };
  }
  j["layers"] = std::move(layers);
  return j;
}

Mlp mlp_from_json(const nlohmann::json& j, const std::string& name) {
  Mlp mlp;
  mlp.spec.input_dim = j.at("input_dim").get<std::size_t>();
  mlp.spec.widths = j.at("widths").get<std::vector<std::size_t>>();
  mlp.spec.final_activation = activation_from_name(j.at("final_activation").get<std::string>());
  mlp.spec.validate();
  const auto& layers = j.at("layers");
  for (std::size_t l = 0; l < mlp.spec.widths.size(); ++l) {
    const auto& lj = layers.at(std::to_string(l));
    const auto rows = lj.at("rows").get<std::size_t>();
    const auto cols = lj.at("cols").get<std::size_t>();
    auto weight = lj.at("weight").get<std::vector<double>>();
    auto bias = lj.at("bias").get<std::vector<double>>();
    if (weight.size() != rows * cols || bias.size() != cols) {
      throw ShapeError(name + " layer " + std::to_string(l) + ": array sizes do not match");
    }
    mlp.layers.push_back(DenseLayer{Tensor(rows, cols, std::move(weight)),
                                    Tensor(1, cols, std::move(bias))});
  }
  check_mlp_matches(mlp, name);
  return mlp;
}

}  // namespace

std::string_view factor_name(Factor f) {
  switch (f) {
    case Factor::kGamma: return "gamma";
    case Factor::kDelta: return "delta";
    case Factor::kUpsilon: return "upsilon";
    case Factor::kOmega: return "omega";
  }
  return "unknown";
}

void MlpSpec::validate() const {
  if (input_dim == 0) throw ShapeError("mlp input dim must be positive");
  if (widths.empty()) throw ShapeError("mlp needs at least one layer");
  for (std::size_t w : widths) {
    if (w == 0) throw ShapeError("mlp layer widths must be positive");
  }
}

std::size_t MlpSpec::parameter_count() const {
  std::size_t count = 0;
  std::size_t fan_in = input_dim;
  for (std::size_t w : widths) {
    count += fan_in * w + w;
    fan_in = w;
  }
  return count;
}

void FactorNetworksSpec::validate() const {
  for (const auto& e : encoders) e.validate();
  head_y0.validate();
  head_y1.validate();
  head_treat.validate();
  decoder.validate();
  const std::size_t k = covariate_dim();
  for (const auto& e : encoders) {
    if (e.input_dim != k) throw ShapeError("all encoders must read the same covariate dim");
  }
  auto out = [&](Factor f) { return encoders[static_cast<std::size_t>(f)].output_dim(); };
  const std::size_t outcome_in = out(Factor::kDelta) + out(Factor::kUpsilon);
  if (head_y0.input_dim != outcome_in || head_y1.input_dim != outcome_in) {
    throw ShapeError("outcome heads must read delta+upsilon (" + std::to_string(outcome_in) +
                     " dims)");
  }
  if (head_treat.input_dim != out(Factor::kGamma) + out(Factor::kDelta)) {
    throw ShapeError("treatment head must read gamma+delta");
  }
  if (head_y0.output_dim() != 1 || head_y1.output_dim() != 1 || head_treat.output_dim() != 1) {
    throw ShapeError("outcome and treatment heads must have one output");
  }
  if (head_treat.final_activation != FinalActivation::kSigmoid) {
    throw ShapeError("treatment head must end in a sigmoid");
  }
  std::size_t all = 0;
  for (Factor f : kAllFactors) all += out(f);
  if (decoder.input_dim != all) throw ShapeError("decoder must read all four embeddings");
  if (decoder.output_dim() != k) throw ShapeError("decoder output dim must equal covariate dim");
}

FactorNetworksSpec NetworkShape::to_spec() const {
  if (encoder_layers == 0 || head_layers == 0 || decoder_layers == 0) {
    throw ShapeError("every network needs at least one layer");
  }
  FactorNetworksSpec spec;
  for (Factor f : kAllFactors) {
    const std::size_t d = latent_dims[static_cast<std::size_t>(f)];
    spec.encoders[static_cast<std::size_t>(f)] =
        MlpSpec{covariate_dim, std::vector<std::size_t>(encoder_layers, d),
                FinalActivation::kIdentity};
  }
  auto head = [&](std::size_t in, std::size_t hidden, std::size_t layers, std::size_t out,
                  FinalActivation act) {
    std::vector<std::size_t> widths(layers - 1, hidden);
    widths.push_back(out);
    return MlpSpec{in, std::move(widths), act};
  };
  const auto& d = latent_dims;
  spec.head_y0 = head(d[1] + d[2], head_hidden, head_layers, 1, FinalActivation::kIdentity);
  spec.head_y1 = spec.head_y0;
  spec.head_treat = head(d[0] + d[1], head_hidden, head_layers, 1, FinalActivation::kSigmoid);
  spec.decoder = head(d[0] + d[1] + d[2] + d[3], decoder_hidden, decoder_layers, covariate_dim,
                      FinalActivation::kIdentity);
  spec.validate();
  return spec;
}

std::vector<std::pair<std::string, const Mlp*>> FactorNetworks::named() const {
  return {{"encoder_gamma", &encoders[0]},   {"encoder_delta", &encoders[1]},
          {"encoder_upsilon", &encoders[2]}, {"encoder_omega", &encoders[3]},
          {"head_y0", &head_y0},             {"head_y1", &head_y1},
          {"head_treat", &head_treat},       {"decoder", &decoder}};
}

std::vector<std::pair<std::string, Mlp*>> FactorNetworks::named() {
  return {{"encoder_gamma", &encoders[0]},   {"encoder_delta", &encoders[1]},
          {"encoder_upsilon", &encoders[2]}, {"encoder_omega", &encoders[3]},
          {"head_y0", &head_y0},             {"head_y1", &head_y1},
          {"head_treat", &head_treat},       {"decoder", &decoder}};
}

std::vector<Tensor*> FactorNetworks::parameters() {
  std::vector<Tensor*> out;
  for (auto& [name, mlp] : named()) {
    for (auto& layer : mlp->layers) {
      out.push_back(&layer.weight);
      out.push_back(&layer.bias);
    }
  }
  return out;
}

std::size_t FactorNetworks::parameter_count() const {
  std::size_t count = 0;
  for (const auto& [name, mlp] : named()) count += mlp->spec.parameter_count();
  return count;
}

FactorNetworks init_networks(const FactorNetworksSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  FactorNetworks nets;
  nets.spec = spec;
  for (std::size_t i = 0; i < 4; ++i) nets.encoders[i] = make_mlp(spec.encoders[i], rng);
  nets.head_y0 = make_mlp(spec.head_y0, rng);
  nets.head_y1 = make_mlp(spec.head_y1, rng);
  nets.head_treat = make_mlp(spec.head_treat, rng);
  nets.decoder = make_mlp(spec.decoder, rng);
  return nets;
}

std::vector<double> weight_contribution(const Mlp& encoder) {
  RowMatrix product = encoder.layers.front().weight.mat();
  for (std::size_t l = 1; l < encoder.layers.size(); ++l) {
    product = product * encoder.layers[l].weight.mat();
  }
  const Eigen::VectorXd means = product.cwiseAbs().rowwise().mean();
  return std::vector<double>(means.data(), means.data() + means.size());
}

WeightContribution weight_contribution(const FactorNetworks& nets) {
  WeightContribution wc;
  for (std::size_t i = 0; i < 4; ++i) wc.per_encoder[i] = weight_contribution(nets.encoders[i]);
  return wc;
}

std::vector<NodeId> BoundNetworks::parameter_ids() const {
  std::vector<NodeId> out;
  auto add = [&](const BoundMlp& m) {
    for (std::size_t l = 0; l < m.weights.size(); ++l) {
      out.push_back(m.weights[l]);
      out.push_back(m.biases[l]);
    }
  };
  for (const auto& e : encoders) add(e);
  add(head_y0);
  add(head_y1);
  add(head_treat);
  add(decoder);
  return out;
}

BoundNetworks bind_parameters(Graph& graph, const FactorNetworks& nets) {
  BoundNetworks bound;
  for (std::size_t i = 0; i < 4; ++i) bound.encoders[i] = bind_mlp(graph, nets.encoders[i]);
  bound.head_y0 = bind_mlp(graph, nets.head_y0);
  bound.head_y1 = bind_mlp(graph, nets.head_y1);
  bound.head_treat = bind_mlp(graph, nets.head_treat);
  bound.decoder = bind_mlp(graph, nets.decoder);
  return bound;
}

BoundNetworks bind_parameters(const FactorNetworks& nets, std::span<const NodeId> ids) {
  BoundNetworks bound;
  std::size_t next = 0;
  auto take = [&](const Mlp& mlp) {
    BoundMlp b;
    b.final_activation = mlp.spec.final_activation;
    for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
      if (next + 2 > ids.size()) throw ShapeError("bind_parameters: too few parameter nodes");
      b.weights.push_back(ids[next++]);
      b.biases.push_back(ids[next++]);
    }
    return b;
  };
  for (std::size_t i = 0; i < 4; ++i) bound.encoders[i] = take(nets.encoders[i]);
  bound.head_y0 = take(nets.head_y0);
  bound.head_y1 = take(nets.head_y1);
  bound.head_treat = take(nets.head_treat);
  bound.decoder = take(nets.decoder);
  if (next != ids.size()) throw ShapeError("bind_parameters: too many parameter nodes");
  return bound;
}

NodeId apply_mlp(Graph& graph, const BoundMlp& mlp, NodeId x) {
  NodeId h = x;
  const std::size_t depth = mlp.weights.size();
  for (std::size_t l = 0; l < depth; ++l) {
    h = graph.affine(h, mlp.weights[l], mlp.biases[l]);
    if (l + 1 < depth) {
      h = graph.elu(h);
    } else if (mlp.final_activation == FinalActivation::kSigmoid) {
      h = graph.sigmoid(h);
    }
  }
  return h;
}

FactorOutputs forward_all(Graph& graph, const BoundNetworks& nets, NodeId x) {
  FactorOutputs out{};
  for (std::size_t i = 0; i < 4; ++i) out.embeddings[i] = apply_mlp(graph, nets.encoders[i], x);
  const auto& e = out.embeddings;
  const std::array<NodeId, 2> outcome_parts = {e[1], e[2]};
  const NodeId outcome_in = graph.concat(outcome_parts);
  out.y0_hat = apply_mlp(graph, nets.head_y0, outcome_in);
  out.y1_hat = apply_mlp(graph, nets.head_y1, outcome_in);
  const std::array<NodeId, 2> treat_parts = {e[0], e[1]};
  out.t_hat = apply_mlp(graph, nets.head_treat, graph.concat(treat_parts));
  out.x_recon = apply_mlp(graph, nets.decoder, graph.concat(e));
  return out;
}

std::array<NodeId, 4> weight_contribution(Graph& graph, const BoundNetworks& nets) {
  std::array<NodeId, 4> out{};
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& w = nets.encoders[i].weights;
    NodeId product = w.front();
    for (std::size_t l = 1; l < w.size(); ++l) product = graph.matmul(product, w[l]);
    out[i] = graph.reduce_mean(graph.abs(product), Axis::kCols);
  }
  return out;
}

FactorValues forward_all(const FactorNetworks& nets, const Tensor& x) {
  if (x.cols() != nets.spec.covariate_dim()) {
    throw ShapeError("covariates have " + std::to_string(x.cols()) + " columns, networks expect " +
                     std::to_string(nets.spec.covariate_dim()));
  }
  Graph graph;
  const BoundNetworks bound = bind_parameters(graph, nets);
  const FactorOutputs out = forward_all(graph, bound, graph.input(x));
  FactorValues values;
  for (std::size_t i = 0; i < 4; ++i) values.embeddings[i] = graph.value(out.embeddings[i]);
  values.y0_hat = graph.value(out.y0_hat);
  values.y1_hat = graph.value(out.y1_hat);
  values.t_hat = graph.value(out.t_hat);
  values.x_recon = graph.value(out.x_recon);
  return values;
}

nlohmann::json networks_to_json(const FactorNetworks& nets) {
  nlohmann::json doc;
  doc["format"] = kNetworkFormat;
  doc["covariate_dim"] = nets.spec.covariate_dim();
  nlohmann::json all = nlohmann::json::object();
  for (const auto& [name, mlp] : nets.named()) all[name] = mlp_to_json(*mlp);
  doc["networks"] = std::move(all);
  return doc;
}

FactorNetworks networks_from_json(const nlohmann::json& doc) {
  if (doc.value("format", std::string()) != kNetworkFormat) {
    throw ConfigError("not a networks document (format tag missing or unknown)");
  }
  const auto& all = doc.at("networks");
  FactorNetworks nets;
  for (auto& [name, mlp] : nets.named()) *mlp = mlp_from_json(all.at(name), name);
  for (std::size_t i = 0; i < 4; ++i) nets.spec.encoders[i] = nets.encoders[i].spec;
  nets.spec.head_y0 = nets.head_y0.spec;
  nets.spec.head_y1 = nets.head_y1.spec;
  nets.spec.head_treat = nets.head_treat.spec;
  nets.spec.decoder = nets.decoder.spec;
  nets.spec.validate();
  return nets;
}

}  // namespace dri
