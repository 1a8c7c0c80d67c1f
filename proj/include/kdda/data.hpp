// Copyright 2026 The kdda Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "kdda/tensor.hpp"

namespace kdda {

// Samples of one domain. Target datasets may carry labels, but training code
// only ever sees them through FeatureView, which has no label accessor.
class DomainDataset {
 public:
  DomainDataset() = default;
  DomainDataset(std::size_t rows, std::size_t dim, std::vector<double> features,
                std::optional<std::vector<int>> labels, std::string domain_id,
                nlohmann::json generator_params = nlohmann::json::object());

  std::size_t size() const { return rows_; }
  std::size_t dim() const { return dim_; }
  const std::string& domain_id() const { return domain_id_; }
  const nlohmann::json& generator_params() const { return generator_params_; }
  bool labeled() const { return labels_.has_value(); }
  std::span<const double> features() const { return features_; }
  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(features_).subspan(i * dim_, dim_);
  }

  // Labels for evaluation and for labeled source training; throws when absent.
  std::span<const int> labels() const;
  // Largest label + 1, or 0 when unlabeled.
  std::size_t class_count() const;

  DomainDataset without_labels() const;
  DomainDataset with_domain_id(std::string id) const;
  DomainDataset subset(std::span<const std::size_t> indices) const;

  DiffTensor gather(std::span<const std::size_t> indices) const;
  std::vector<int> gather_labels(std::span<const std::size_t> indices) const;

 private:
  std::size_t rows_ = 0;
  std::size_t dim_ = 0;
  std::vector<double> features_;
  std::optional<std::vector<int>> labels_;
  std::string domain_id_;
  nlohmann::json generator_params_ = nlohmann::json::object();
};

// Feature-only training view of a dataset.
class FeatureView {
 public:
  explicit FeatureView(const DomainDataset& dataset) : dataset_(&dataset) {}
  std::size_t size() const { return dataset_->size(); }
  std::size_t dim() const { return dataset_->dim(); }
  const std::string& domain_id() const { return dataset_->domain_id(); }
  DiffTensor gather(std::span<const std::size_t> indices) const {
    return dataset_->gather(indices);
  }

 private:
  const DomainDataset* dataset_;
};

struct TwoMoonsParams {
  std::size_t n = 400;
  double noise_sigma = 0.1;
  double rotation_deg = 0.0;
  std::array<double, 2> rotation_center = {0.5, 0.25};
  std::array<double, 2> translation = {0.0, 0.0};
  double label_flip_frac = 0.0;
  std::uint64_t seed = 0;
  std::string domain_id = "source";
};

// Two interleaved half circles (outer label 0, inner label 1) with isotropic
// Gaussian noise, then rotated about rotation_center and translated.
DomainDataset gen_two_moons(const TwoMoonsParams& params);

struct BlobsParams {
  std::size_t n = 300;
  std::vector<std::vector<double>> centers;  // one center per class
  double sigma = 0.5;
  std::uint64_t seed = 0;
  std::string domain_id = "source";
};

// Isotropic Gaussian clusters; class i receives n / K samples (+1 for the
// first n % K classes).
DomainDataset gen_blobs(const BlobsParams& params);

struct CsvSchema {
  // Keep only rows of this domain; when unset all rows must share a domain.
  std::optional<std::string> domain;
  // Labels must lie in [0, class_count) when set.
  std::optional<std::size_t> class_count;
};

// Header row with f0..f{d-1}, optional `label`, required `domain`.
DomainDataset load_csv(const std::filesystem::path& path, const CsvSchema& schema = {});
void save_csv(const DomainDataset& dataset, const std::filesystem::path& path);

// Row concatenation under a new domain id; all parts must share the feature
// dim and either all be labeled or all unlabeled.
DomainDataset merge_datasets(std::span<const DomainDataset> parts, std::string domain_id);

struct Split {
  DomainDataset train;
  DomainDataset eval;
};

// Seeded shuffle, then the first round(eval_fraction * N) rows go to eval.
Split split_dataset(const DomainDataset& dataset, double eval_fraction, std::uint64_t seed);

struct BatchPlan {
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  std::size_t epoch = 0;
};

// Fisher-Yates permutation of [0, n) for (seed, stream, epoch, cycle).
std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed,
                                           std::size_t stream, std::size_t epoch,
                                           std::size_t cycle);

struct Batch {
  std::vector<std::size_t> indices;
  DiffTensor features;
  std::vector<int> labels;  // empty for unlabeled datasets
};

// One epoch over a single dataset; the last batch may be short.
std::vector<Batch> batches(const DomainDataset& dataset, const BatchPlan& plan);

// Index plan for iterating several datasets in lockstep. The longest dataset
// is consumed exactly once per epoch; shorter ones cycle, reshuffled on each
// cycle. Result: steps x streams x indices.
using StepIndices = std::vector<std::vector<std::size_t>>;
std::vector<StepIndices> paired_batch_indices(std::span<const std::size_t> sizes,
                                              const BatchPlan& plan);

}  // namespace kdda
