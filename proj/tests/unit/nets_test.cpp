#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "kdda/nets.hpp"

namespace kdda {
namespace {

std::filesystem::path temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "kdda_nets_test";
  std::filesystem::create_directories(dir);
  return dir / name;
}

TEST(Nets, MlpSpecShapes) {
  const NetworkSpec spec = make_mlp_spec(2, {8, 4}, 3);
  ASSERT_EQ(spec.layers.size(), 3u);
  EXPECT_EQ(spec.input_dim(), 2u);
  EXPECT_EQ(spec.embedding_dim(), 4u);
  EXPECT_EQ(spec.layers.back().activation, Activation::kNone);
  ASSERT_EQ(spec.tap_layers.size(), 1u);
  EXPECT_EQ(spec.tap_dim(spec.tap_layers[0]), 4u);
  EXPECT_EQ(spec.parameter_count(), (2 * 8 + 8) + (8 * 4 + 4) + (4 * 3 + 3));
  spec.validate();
}

TEST(Nets, SpecValidation) {
  NetworkSpec spec = make_mlp_spec(2, {8}, 2);
  spec.layers[1].in_dim = 7;
  EXPECT_THROW(spec.validate(), ConfigError);
  spec = make_mlp_spec(2, {8}, 2);
  spec.tap_layers = {5};
  EXPECT_THROW(spec.validate(), ConfigError);
  spec = make_mlp_spec(2, {8}, 2);
  spec.class_count = 3;
  EXPECT_THROW(spec.validate(), ConfigError);
}

TEST(Nets, InitDeterministicAndShaped) {
  const NetworkSpec spec = make_mlp_spec(4, {8}, 2);
  const NetworkState a = init_network(spec, 42);
  const NetworkState b = init_network(spec, 42);
  const NetworkState c = init_network(spec, 43);
  EXPECT_EQ(a.layers[0].weight.shape(), (Shape{4, 8}));
  EXPECT_EQ(a.layers[0].bias.shape(), (Shape{8}));
  bool differs = false;
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    for (std::size_t i = 0; i < a.layers[l].weight.size(); ++i) {
      EXPECT_EQ(a.layers[l].weight.at(i), b.layers[l].weight.at(i));
      differs |= a.layers[l].weight.at(i) != c.layers[l].weight.at(i);
    }
    for (double v : a.layers[l].bias.data()) EXPECT_EQ(v, 0.0);
  }
  EXPECT_TRUE(differs);
}

TEST(Nets, InitMomentsMatchHe) {
  const NetworkSpec spec = make_mlp_spec(50, {200}, 2);
  const NetworkState s = init_network(spec, 9);
  const auto w = s.layers[0].weight.data();  // 10k draws
  double mean = 0.0;
  for (double v : w) mean += v;
  mean /= static_cast<double>(w.size());
  double var = 0.0;
  for (double v : w) var += (v - mean) * (v - mean);
  var /= static_cast<double>(w.size() - 1);
  const double sd = std::sqrt(2.0 / 50.0);
  EXPECT_LT(std::abs(mean), 3.0 * sd / std::sqrt(static_cast<double>(w.size())));
  EXPECT_NEAR(var, sd * sd, 0.05 * sd * sd);
}

TEST(Nets, ZeroWeightsGiveZeroLogits) {
  const NetworkSpec spec = make_mlp_spec(3, {5}, 2);
  NetworkState s = init_network(spec, 1);
  for (auto& l : s.layers) {
    for (double& v : l.weight.mutable_data()) v = 0.0;
  }
  const ForwardResult out = forward(s, spec, DiffTensor::matrix(2, 3, {1, -2, 3, 4, 5, -6}));
  for (double v : out.logits.data()) EXPECT_EQ(v, 0.0);
}

TEST(Nets, IdentityLayer) {
  NetworkSpec spec;
  spec.layers = {{3, 3, Activation::kNone}};
  spec.class_count = 3;
  NetworkState s = init_network(spec, 0);
  auto w = s.layers[0].weight.mutable_data();
  for (std::size_t i = 0; i < 9; ++i) w[i] = (i % 4 == 0) ? 1.0 : 0.0;
  const DiffTensor x = DiffTensor::matrix(1, 3, {0.5, -1.5, 2.0});
  const ForwardResult out = forward(s, spec, x);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(out.logits.at(i), x.at(i));
}

TEST(Nets, ForwardMatchesHandEvaluation) {
  const NetworkSpec spec = make_mlp_spec(3, {4}, 2);
  const NetworkState s = init_network(spec, 77);
  const DiffTensor x = DiffTensor::matrix(2, 3, {0.1, -0.7, 1.3, 2.0, 0.4, -0.9});
  const ForwardResult out = forward(s, spec, x);
  const auto& w0 = s.layers[0].weight;
  const auto& w1 = s.layers[1].weight;
  for (std::size_t r = 0; r < 2; ++r) {
    double h[4];
    for (std::size_t j = 0; j < 4; ++j) {
      double a = 0.0;
      for (std::size_t i = 0; i < 3; ++i) a += x.at(r, i) * w0.at(i, j);
      EXPECT_NEAR(out.features.at(0).at(r, j), a, 1e-12);
      h[j] = a > 0.0 ? a : 0.0;
      EXPECT_NEAR(out.embedding.at(r, j), h[j], 1e-12);
    }
    for (std::size_t k = 0; k < 2; ++k) {
      double z = 0.0;
      for (std::size_t j = 0; j < 4; ++j) z += h[j] * w1.at(j, k);
      EXPECT_NEAR(out.logits.at(r, k), z, 1e-12);
    }
  }
}

TEST(Nets, CheckpointRoundTrip) {
  const NetworkSpec spec = make_mlp_spec(2, {6, 3}, 2);
  const NetworkState s = init_network(spec, 5);
  const auto path = temp_path("roundtrip.ckpt");
  save_state(s, spec, path);
  EXPECT_EQ(read_checkpoint_spec(path), spec);
  const NetworkState t = load_state(path, spec);
  EXPECT_EQ(t.init_seed, 5u);
  for (std::size_t l = 0; l < s.layers.size(); ++l) {
    for (std::size_t i = 0; i < s.layers[l].weight.size(); ++i) {
      EXPECT_EQ(s.layers[l].weight.at(i), t.layers[l].weight.at(i));
    }
  }
}

TEST(Nets, CheckpointMismatchNamesLayer) {
  const NetworkSpec spec = make_mlp_spec(2, {6, 3}, 2);
  const auto path = temp_path("mismatch.ckpt");
  save_state(init_network(spec, 1), spec, path);
  try {
    load_state(path, make_mlp_spec(2, {6, 4}, 2));
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("layer 1"), std::string::npos) << e.what();
  }
}

TEST(Nets, CorruptCheckpoint) {
  const auto path = temp_path("corrupt.ckpt");
  std::ofstream(path) << "not a checkpoint";
  EXPECT_THROW(load_state(path, make_mlp_spec(2, {2}, 2)), ConfigError);
  EXPECT_THROW(load_state(temp_path("missing.ckpt"), make_mlp_spec(2, {2}, 2)), ConfigError);
}

TEST(Nets, EmptyNetworkCheckpoint) {
  const auto path = temp_path("empty.ckpt");
  save_state(NetworkState{}, NetworkSpec{}, path);
  const NetworkState t = load_state(path, NetworkSpec{});
  EXPECT_TRUE(t.layers.empty());
}

TEST(Nets, TapReluGivesNextInput) {
  const NetworkSpec spec = make_mlp_spec(2, {5, 4}, 2);
  NetworkSpec tapped = spec;
  tapped.tap_layers = {0, 1};
  const NetworkState s = init_network(spec, 3);
  const DiffTensor x = DiffTensor::matrix(3, 2, {1, 2, -1, 0.5, 0, -3});
  const ForwardResult out = forward(s, tapped, x);
  const DiffTensor next = add(matmul(relu(out.features.at(0)), s.layers[1].weight),
                              expand_rows(s.layers[1].bias, 3));
  for (std::size_t i = 0; i < next.size(); ++i) EXPECT_EQ(next.at(i), out.features.at(1).at(i));
}

TEST(Nets, DomainClassifierAndRegressor) {
  const NetworkSpec dc = make_domain_classifier_spec(16, {32, 32});
  EXPECT_EQ(dc.input_dim(), 16u);
  EXPECT_EQ(dc.class_count, 2u);
  EXPECT_EQ(dc.layers.size(), 3u);

  const RegressorState r = init_regressor(4, 7, 2);
  EXPECT_EQ(r.in_dim(), 4u);
  EXPECT_EQ(r.out_dim(), 7u);
  const RegressorState id = identity_regressor(3);
  const DiffTensor x = DiffTensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  const DiffTensor y = id.apply(x);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(y.at(i), x.at(i));
}

TEST(Nets, CloneIsIndependent) {
  const NetworkSpec spec = make_mlp_spec(2, {3}, 2);
  NetworkState a = init_network(spec, 1);
  NetworkState b = a.clone();
  const double before = b.layers[0].weight.at(0);
  a.layers[0].weight.mutable_data()[0] += 1.0;
  EXPECT_EQ(b.layers[0].weight.at(0), before);
}

}  // namespace
}  // namespace kdda
