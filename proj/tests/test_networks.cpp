#include <cmath>
#include <random>

#include "doctest.h"

#include "dri/error.hpp"
#include "dri/networks.hpp"
#include "test_util.hpp"

using dri::FactorNetworks;
using dri::FinalActivation;
using dri::MlpSpec;
using dri::NetworkShape;
using dri::Tensor;

namespace {

FactorNetworks small_networks(std::size_t k = 6, std::size_t latent = 3, std::uint64_t seed = 1) {
  NetworkShape shape;
  shape.covariate_dim = k;
  shape.latent_dims = {latent, latent, latent, latent};
  shape.head_hidden = 5;
  shape.decoder_hidden = 4;
  return dri::init_networks(shape.to_spec(), seed);
}

void zero_all(dri::Mlp& m) {
  for (auto& layer : m.layers) {
    layer.weight.fill(0.0);
    layer.bias.fill(0.0);
  }
}

}  // namespace

TEST_CASE("initialization is deterministic per seed") {
  const FactorNetworks a = small_networks(6, 3, 42);
  const FactorNetworks b = small_networks(6, 3, 42);
  const FactorNetworks c = small_networks(6, 3, 43);
  auto pa = const_cast<FactorNetworks&>(a).parameters();
  auto pb = const_cast<FactorNetworks&>(b).parameters();
  auto pc = const_cast<FactorNetworks&>(c).parameters();
  REQUIRE(pa.size() == pb.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(*pa[i] == *pb[i]);
    any_diff = any_diff || !(*pa[i] == *pc[i]);
  }
  CHECK(any_diff);
}

TEST_CASE("parameter count of a three-layer encoder") {
  const MlpSpec spec{24, {10, 10, 10}, FinalActivation::kIdentity};
  CHECK(spec.parameter_count() == 24 * 10 + 10 + 2 * (10 * 10 + 10));
  CHECK(spec.parameter_count() == 470);
}

TEST_CASE("biases start at zero and weights respect the fan-in bound") {
  FactorNetworks nets = small_networks(7, 4, 5);
  for (const auto& [name, mlp] : std::as_const(nets).named()) {
    for (const auto& layer : mlp->layers) {
      CHECK(layer.bias == Tensor(1, layer.bias.cols(), 0.0));
      const double bound = std::sqrt(3.0 / static_cast<double>(layer.weight.rows()));
      for (double w : layer.weight.values()) CHECK(std::abs(w) <= bound);
    }
  }
}

TEST_CASE("forward_all shape contract") {
  const FactorNetworks nets = small_networks(6, 3);
  std::mt19937_64 rng(1);
  const Tensor x = testutil::random_tensor(rng, 9, 6);
  const auto v = dri::forward_all(nets, x);
  for (const auto& e : v.embeddings) CHECK(e.shape() == std::vector<std::size_t>{9, 3});
  CHECK(v.y0_hat.shape() == std::vector<std::size_t>{9, 1});
  CHECK(v.y1_hat.shape() == std::vector<std::size_t>{9, 1});
  CHECK(v.x_recon.shape() == std::vector<std::size_t>{9, 6});
  for (double p : v.t_hat.values()) {
    CHECK(p > 0.0);
    CHECK(p < 1.0);
  }
  CHECK_THROWS_AS(dri::forward_all(nets, Tensor(3, 5)), dri::ShapeError);
}

TEST_CASE("zero-weight treatment head predicts one half; zero decoder reconstructs zeros") {
  FactorNetworks nets = small_networks(6, 3);
  zero_all(nets.head_treat);
  zero_all(nets.decoder);
  std::mt19937_64 rng(2);
  const auto v = dri::forward_all(nets, testutil::random_tensor(rng, 4, 6));
  for (double p : v.t_hat.values()) CHECK(p == 0.5);
  for (double r : v.x_recon.values()) CHECK(r == 0.0);
}

TEST_CASE("weight contribution examples") {
  const std::size_t d = 4;
  dri::Mlp single;
  single.spec = MlpSpec{d, {d}, FinalActivation::kIdentity};
  single.layers = {{Tensor::identity(d), Tensor(1, d)}};
  for (double w : dri::weight_contribution(single)) CHECK(w == 1.0 / d);

  dri::Mlp two;
  two.spec = MlpSpec{d, {d, d}, FinalActivation::kIdentity};
  Tensor w1 = Tensor::identity(d), w2 = Tensor::identity(d);
  for (double& v : w1.storage()) v *= 2.0;
  for (double& v : w2.storage()) v *= 3.0;
  two.layers = {{w1, Tensor(1, d)}, {w2, Tensor(1, d)}};
  for (double w : dri::weight_contribution(two)) CHECK(w == doctest::Approx(6.0 / d).epsilon(1e-15));

  FactorNetworks nets = small_networks(6, 3);
  auto& first = nets.encoders[1].layers.front().weight;
  for (std::size_t c = 0; c < first.cols(); ++c) first(2, c) = 0.0;
  const auto wc = dri::weight_contribution(nets);
  CHECK(wc[dri::Factor::kDelta][2] == 0.0);
}

TEST_CASE("weight contribution vectors are non-negative with length K") {
  const FactorNetworks nets = small_networks(8, 4, 9);
  const auto wc = dri::weight_contribution(nets);
  for (const auto& v : wc.per_encoder) {
    CHECK(v.size() == 8);
    for (double w : v) CHECK(w >= 0.0);
  }
}

TEST_CASE("scaling one layer scales the contribution exactly") {
  FactorNetworks nets = small_networks(6, 3, 4);
  const auto before = dri::weight_contribution(nets.encoders[2]);
  for (double& w : nets.encoders[2].layers[1].weight.storage()) w *= 4.0;
  const auto after = dri::weight_contribution(nets.encoders[2]);
  for (std::size_t j = 0; j < before.size(); ++j) {
    CHECK(after[j] == doctest::Approx(4.0 * before[j]).epsilon(1e-14));
  }
}

TEST_CASE("graph weight contribution equals the numeric one") {
  const FactorNetworks nets = small_networks(5, 3, 12);
  dri::Graph g;
  const auto bound = dri::bind_parameters(g, nets);
  const auto nodes = dri::weight_contribution(g, bound);
  const auto numeric = dri::weight_contribution(nets);
  for (std::size_t f = 0; f < 4; ++f) {
    const Tensor& v = g.value(nodes[f]);
    REQUIRE(v.size() == 5);
    for (std::size_t j = 0; j < 5; ++j) {
      CHECK(v[j] == doctest::Approx(numeric.per_encoder[f][j]).epsilon(1e-14));
    }
  }
}

TEST_CASE("forward has no coupling between rows") {
  const FactorNetworks nets = small_networks(6, 3, 8);
  std::mt19937_64 rng(3);
  const Tensor x = testutil::random_tensor(rng, 7, 6);
  const auto full = dri::forward_all(nets, x);
  for (std::size_t i = 0; i < 7; ++i) {
    const std::vector<std::size_t> row = {i};
    const auto one = dri::forward_all(nets, x.select_rows(row));
    CHECK(one.y0_hat[0] == doctest::Approx(full.y0_hat[i]).epsilon(1e-13));
    CHECK(one.y1_hat[0] == doctest::Approx(full.y1_hat[i]).epsilon(1e-13));
    CHECK(one.t_hat[0] == doctest::Approx(full.t_hat[i]).epsilon(1e-13));
    for (std::size_t j = 0; j < 6; ++j) {
      CHECK(one.x_recon[j] == doctest::Approx(full.x_recon(i, j)).epsilon(1e-13));
    }
  }
}

TEST_CASE("inconsistent network specs are rejected") {
  NetworkShape shape;
  shape.covariate_dim = 6;
  shape.latent_dims = {3, 3, 3, 3};
  dri::FactorNetworksSpec spec = shape.to_spec();
  SUBCASE("decoder output") {
    spec.decoder.widths.back() = 5;
    CHECK_THROWS_AS(spec.validate(), dri::ShapeError);
  }
  SUBCASE("head input") {
    spec.head_y0.input_dim = 5;
    CHECK_THROWS_AS(spec.validate(), dri::ShapeError);
  }
  SUBCASE("encoder input") {
    spec.encoders[3].input_dim = 7;
    CHECK_THROWS_AS(spec.validate(), dri::ShapeError);
  }
  SUBCASE("empty widths") {
    spec.head_treat.widths.clear();
    CHECK_THROWS_AS(spec.validate(), dri::ShapeError);
  }
  SUBCASE("treatment head must end in a sigmoid") {
    spec.head_treat.final_activation = FinalActivation::kIdentity;
    CHECK_THROWS_AS(spec.validate(), dri::ShapeError);
  }
}

TEST_CASE("JSON export round-trips bit-exactly") {
  const FactorNetworks nets = small_networks(6, 3, 77);
  const auto doc = dri::networks_to_json(nets);
  const auto text = doc.dump();
  FactorNetworks back = dri::networks_from_json(nlohmann::json::parse(text));
  auto pa = const_cast<FactorNetworks&>(nets).parameters();
  auto pb = back.parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(*pa[i] == *pb[i]);
  CHECK(doc["networks"].contains("encoder_gamma"));
  CHECK(doc["networks"]["decoder"]["layers"].contains("0"));
  CHECK_THROWS(dri::networks_from_json(nlohmann::json::object()));
}
