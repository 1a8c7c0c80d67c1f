// Copyright 2026 The kdda Authors
// SPDX-License-Identifier: Apache-2.0

#include "kdda/nets.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "kdda/random.hpp"

namespace kdda {

using nlohmann::json;

void NetworkSpec::validate() const {
  if (layers.empty()) throw ConfigError("network spec: no layers");
  if (class_count == 0) throw ConfigError("network spec: class_count must be positive");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const DenseLayer& l = layers[i];
    if (l.in_dim == 0 || l.out_dim == 0) {
      throw ConfigError("network spec: layer " + std::to_string(i) + " has a zero dim");
    }
    if (i > 0 && layers[i - 1].out_dim != l.in_dim) {
      throw ConfigError("network spec: layer " + std::to_string(i) + " in_dim " +
                        std::to_string(l.in_dim) + " does not chain from out_dim " +
                        std::to_string(layers[i - 1].out_dim));
    }
  }
  const DenseLayer& last = layers.back();
  if (last.out_dim != class_count || last.activation != Activation::kNone) {
    throw ConfigError("network spec: final layer must emit class_count raw logits");
  }
  for (std::size_t tap : tap_layers) {
    if (tap >= layers.size()) {
      throw ConfigError("network spec: tap layer " + std::to_string(tap) + " out of range");
    }
  }
}

std::size_t NetworkSpec::input_dim() const {
  return layers.empty() ? 0 : layers.front().in_dim;
}

std::size_t NetworkSpec::parameter_count() const {
  std::size_t total = 0;
  for (const DenseLayer& l : layers) total += l.in_dim * l.out_dim + l.out_dim;
  return total;
}

std::size_t NetworkSpec::embedding_dim() const { return layers.back().in_dim; }

std::size_t NetworkSpec::tap_dim(std::size_t tap) const { return layers.at(tap).out_dim; }

NetworkSpec make_mlp_spec(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                          std::size_t class_count) {
  NetworkSpec spec;
  std::size_t in = input_dim;
  for (std::size_t width : hidden) {
    spec.layers.push_back({in, width, Activation::kRelu});
    in = width;
  }
  spec.layers.push_back({in, class_count, Activation::kNone});
  if (!hidden.empty()) spec.tap_layers = {hidden.size() - 1};
  spec.class_count = class_count;
  spec.validate();
  return spec;
}

std::vector<DiffTensor> NetworkState::parameters() const {
  std::vector<DiffTensor> params;
  for (const LayerParams& l : layers) {
    params.push_back(l.weight);
    params.push_back(l.bias);
  }
  return params;
}

NetworkState NetworkState::clone() const {
  NetworkState copy;
  copy.init_seed = init_seed;
  for (const LayerParams& l : layers) copy.layers.push_back({l.weight.clone(), l.bias.clone()});
  return copy;
}

NetworkState init_network(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  NetworkState state;
  state.init_seed = seed;
  for (const DenseLayer& l : spec.layers) {
    const double sd = std::sqrt(2.0 / static_cast<double>(l.in_dim));
    std::vector<double> w(l.in_dim * l.out_dim);
    for (double& v : w) v = rng.normal(0.0, sd);
    state.layers.push_back({DiffTensor::matrix(l.in_dim, l.out_dim, std::move(w), true),
                            DiffTensor::zeros({l.out_dim}, true)});
  }
  return state;
}

ForwardResult forward(const NetworkState& state, const NetworkSpec& spec,
                      const DiffTensor& batch) {
  if (state.layers.size() != spec.layers.size()) {
    throw ShapeError("forward: state has " + std::to_string(state.layers.size()) +
                     " layers, spec has " + std::to_string(spec.layers.size()));
  }
  if (batch.rank() != 2 || batch.cols() != spec.input_dim()) {
    throw ShapeError("forward: batch " + shape_string(batch.shape()) +
                     " does not match input dim " + std::to_string(spec.input_dim()));
  }
  ForwardResult result;
  DiffTensor h = batch;
  const std::size_t n = batch.rows();
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (i + 1 == spec.layers.size()) result.embedding = h;
    const LayerParams& p = state.layers[i];
    DiffTensor pre = add(matmul(h, p.weight), expand_rows(p.bias, n));
    if (std::find(spec.tap_layers.begin(), spec.tap_layers.end(), i) != spec.tap_layers.end()) {
      result.features.emplace(i, pre);
    }
    h = spec.layers[i].activation == Activation::kRelu ? relu(pre) : pre;
  }
  result.logits = h;
  return result;
}

NetworkSpec make_domain_classifier_spec(std::size_t feature_dim,
                                        const std::vector<std::size_t>& hidden) {
  return make_mlp_spec(feature_dim, hidden, 2);
}

DiffTensor RegressorState::apply(const DiffTensor& student_features) const {
  return add(matmul(student_features, weight), expand_rows(bias, student_features.rows()));
}

RegressorState init_regressor(std::size_t student_dim, std::size_t teacher_dim,
                              std::uint64_t seed) {
  Rng rng(seed);
  const double sd = std::sqrt(1.0 / static_cast<double>(student_dim));
  std::vector<double> w(student_dim * teacher_dim);
  for (double& v : w) v = rng.normal(0.0, sd);
  return {DiffTensor::matrix(student_dim, teacher_dim, std::move(w), true),
          DiffTensor::zeros({teacher_dim}, true)};
}

RegressorState identity_regressor(std::size_t dim) {
  std::vector<double> w(dim * dim, 0.0);
  for (std::size_t i = 0; i < dim; ++i) w[i * dim + i] = 1.0;
  return {DiffTensor::matrix(dim, dim, std::move(w), true), DiffTensor::zeros({dim}, true)};
}

// ---- checkpoints ------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'K', 'D', 'D', 'A', 'C', 'K', 'P', 'T'};

json spec_to_json(const NetworkSpec& spec) {
  json layers = json::array();
  for (const DenseLayer& l : spec.layers) {
    layers.push_back({{"in", l.in_dim},
                      {"out", l.out_dim},
                      {"activation", l.activation == Activation::kRelu ? "relu" : "none"}});
  }
  return {{"layers", layers}, {"tap_layers", spec.tap_layers}, {"class_count", spec.class_count}};
}

NetworkSpec spec_from_json(const json& j) {
  NetworkSpec spec;
  for (const json& l : j.at("layers")) {
    const std::string act = l.at("activation").get<std::string>();
    if (act != "relu" && act != "none") throw ConfigError("checkpoint: unknown activation " + act);
    spec.layers.push_back({l.at("in").get<std::size_t>(), l.at("out").get<std::size_t>(),
                           act == "relu" ? Activation::kRelu : Activation::kNone});
  }
  spec.tap_layers = j.at("tap_layers").get<std::vector<std::size_t>>();
  spec.class_count = j.at("class_count").get<std::size_t>();
  return spec;
}

void write_u64_le(std::ostream& out, std::uint64_t v) {
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes), 8);
}

std::uint64_t read_u64_le(const unsigned char* bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return v;
}

void write_doubles_le(std::ostream& out, std::span<const double> values) {
  for (double d : values) write_u64_le(out, std::bit_cast<std::uint64_t>(d));
}

struct RawCheckpoint {
  json header;
  std::vector<double> payload;
};

RawCheckpoint read_raw(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("checkpoint: cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw ConfigError("checkpoint: " + path.string() + " is not a kdda checkpoint");
  }
  const std::uint64_t header_len = read_u64_le(bytes.data() + 8);
  if (header_len > bytes.size() - 16) {
    throw ConfigError("checkpoint: truncated header in " + path.string());
  }
  RawCheckpoint raw;
  try {
    raw.header = json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<long>(header_len));
  } catch (const json::exception& e) {
    throw ConfigError("checkpoint: corrupt header in " + path.string() + ": " + e.what());
  }
  const std::size_t body = bytes.size() - 16 - header_len;
  if (body % 8 != 0) throw ConfigError("checkpoint: payload not a multiple of 8 bytes");
  raw.payload.resize(body / 8);
  const unsigned char* p = bytes.data() + 16 + header_len;
  for (std::size_t i = 0; i < raw.payload.size(); ++i) {
    raw.payload[i] = std::bit_cast<double>(read_u64_le(p + 8 * i));
  }
  if (!raw.header.is_object() || raw.header.value("format_version", -1) != kCheckpointFormatVersion) {
    throw ConfigError("checkpoint: unsupported format version in " + path.string());
  }
  return raw;
}

}  // namespace

void save_state(const NetworkState& state, const NetworkSpec& spec,
                const std::filesystem::path& path) {
  if (state.layers.size() != spec.layers.size()) {
    throw ShapeError("save_state: state/spec layer count mismatch");
  }
  json header = {{"format_version", kCheckpointFormatVersion},
                 {"spec", spec_to_json(spec)},
                 {"init_seed", state.init_seed}};
  const std::string text = header.dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("save_state: cannot write " + path.string());
  out.write(kMagic, 8);
  write_u64_le(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const LayerParams& l : state.layers) {
    write_doubles_le(out, l.weight.data());
    write_doubles_le(out, l.bias.data());
  }
  if (!out) throw ConfigError("save_state: write failed for " + path.string());
}

NetworkSpec read_checkpoint_spec(const std::filesystem::path& path) {
  const RawCheckpoint raw = read_raw(path);
  try {
    return spec_from_json(raw.header.at("spec"));
  } catch (const json::exception& e) {
    throw ConfigError("checkpoint: malformed spec in " + path.string() + ": " + e.what());
  }
}

NetworkState load_state(const std::filesystem::path& path, const NetworkSpec& expected) {
  const RawCheckpoint raw = read_raw(path);
  NetworkSpec stored;
  try {
    stored = spec_from_json(raw.header.at("spec"));
  } catch (const json::exception& e) {
    throw ConfigError("checkpoint: malformed spec in " + path.string() + ": " + e.what());
  }
  const std::size_t common = std::min(stored.layers.size(), expected.layers.size());
  for (std::size_t i = 0; i < common; ++i) {
    if (!(stored.layers[i] == expected.layers[i])) {
      std::ostringstream msg;
      msg << "checkpoint: layer " << i << " mismatch: stored " << stored.layers[i].in_dim << "->"
          << stored.layers[i].out_dim << ", expected " << expected.layers[i].in_dim << "->"
          << expected.layers[i].out_dim;
      throw ConfigError(msg.str());
    }
  }
  if (stored.layers.size() != expected.layers.size()) {
    throw ConfigError("checkpoint: layer " + std::to_string(common) +
                      " mismatch: stored spec has " + std::to_string(stored.layers.size()) +
                      " layers, expected " + std::to_string(expected.layers.size()));
  }
  if (stored.tap_layers != expected.tap_layers || stored.class_count != expected.class_count) {
    throw ConfigError("checkpoint: tap layers or class count differ from expected spec");
  }
  if (raw.payload.size() != expected.parameter_count()) {
    throw ConfigError("checkpoint: payload holds " + std::to_string(raw.payload.size()) +
                      " values, spec needs " + std::to_string(expected.parameter_count()));
  }
  NetworkState state;
  state.init_seed = raw.header.value("init_seed", std::uint64_t{0});
  std::size_t offset = 0;
  auto take = [&](std::size_t n) {
    std::vector<double> v(raw.payload.begin() + static_cast<long>(offset),
                          raw.payload.begin() + static_cast<long>(offset + n));
    offset += n;
    return v;
  };
  for (const DenseLayer& l : expected.layers) {
    DiffTensor w = DiffTensor::matrix(l.in_dim, l.out_dim, take(l.in_dim * l.out_dim), true);
    DiffTensor b = DiffTensor::vector(take(l.out_dim), true);
    state.layers.push_back({std::move(w), std::move(b)});
  }
  return state;
}

}  // namespace kdda
