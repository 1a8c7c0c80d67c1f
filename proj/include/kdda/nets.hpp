// Copyright 2026 The kdda Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "kdda/tensor.hpp"

namespace kdda {

enum class Activation { kRelu, kNone };

struct DenseLayer {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  Activation activation = Activation::kRelu;

  bool operator==(const DenseLayer&) const = default;
};

// Dense stack. Taps expose the pre-activation output of a layer; the final
// layer emits raw logits.
struct NetworkSpec {
  std::vector<DenseLayer> layers;
  std::vector<std::size_t> tap_layers;
  std::size_t class_count = 0;

  // Throws ConfigError naming the first violated constraint.
  void validate() const;
  std::size_t input_dim() const;
  std::size_t parameter_count() const;
  // Width of the input to the final layer: the adaptation feature phi(x).
  std::size_t embedding_dim() const;
  std::size_t tap_dim(std::size_t tap) const;

  bool operator==(const NetworkSpec&) const = default;
};

// input -> hidden... (relu) -> classes. Taps default to the last hidden layer.
NetworkSpec make_mlp_spec(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                          std::size_t class_count);

struct LayerParams {
  DiffTensor weight;  // [in x out]
  DiffTensor bias;    // [out]
};

struct NetworkState {
  std::vector<LayerParams> layers;
  std::uint64_t init_seed = 0;

  std::vector<DiffTensor> parameters() const;
  // Deep copy: parameters of the copy are independent leaves.
  NetworkState clone() const;
};

// He-normal weights N(0, 2 / in_dim), zero biases. Deterministic in seed.
NetworkState init_network(const NetworkSpec& spec, std::uint64_t seed);

struct ForwardResult {
  DiffTensor logits;
  std::map<std::size_t, DiffTensor> features;  // tap layer -> pre-activation
  DiffTensor embedding;                        // input of the final layer
};

ForwardResult forward(const NetworkState& state, const NetworkSpec& spec,
                      const DiffTensor& batch);

// A spec together with the parameters it describes.
struct Network {
  NetworkSpec spec;
  NetworkState state;

  ForwardResult forward(const DiffTensor& batch) const {
    return kdda::forward(state, spec, batch);
  }
  std::vector<DiffTensor> parameters() const { return state.parameters(); }
};

// Domain classifier head on the adaptation features: two hidden relu layers
// and two outputs (source = 0, target = 1).
NetworkSpec make_domain_classifier_spec(std::size_t feature_dim,
                                        const std::vector<std::size_t>& hidden);

// Linear map from student tap width to teacher tap width (the dense analogue
// of a 1x1 convolution).
struct RegressorState {
  DiffTensor weight;  // [student_dim x teacher_dim]
  DiffTensor bias;    // [teacher_dim]

  std::size_t in_dim() const { return weight.rows(); }
  std::size_t out_dim() const { return weight.cols(); }
  std::vector<DiffTensor> parameters() const { return {weight, bias}; }
  RegressorState clone() const { return {weight.clone(), bias.clone()}; }
  DiffTensor apply(const DiffTensor& student_features) const;
};

RegressorState init_regressor(std::size_t student_dim, std::size_t teacher_dim,
                              std::uint64_t seed);
// Identity when dims agree; used by tests and fixtures.
RegressorState identity_regressor(std::size_t dim);

// Checkpoint layout (all integers little-endian):
//   bytes 0..7    magic "KDDACKPT"
//   bytes 8..15   uint64 header length H
//   next H bytes  UTF-8 JSON header {"format_version", "spec", "init_seed"}
//   remainder     float64 parameters, layer order, weight (row-major) then bias
inline constexpr int kCheckpointFormatVersion = 1;

void save_state(const NetworkState& state, const NetworkSpec& spec,
                const std::filesystem::path& path);
// Throws ConfigError on a corrupt file or when the stored spec differs from
// `expected` (the message names the first offending layer).
NetworkState load_state(const std::filesystem::path& path, const NetworkSpec& expected);
// Reads the spec stored in a checkpoint header.
NetworkSpec read_checkpoint_spec(const std::filesystem::path& path);

}  // namespace kdda
