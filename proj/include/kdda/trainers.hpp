// Copyright 2026 The kdda Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kdda/data.hpp"
#include "kdda/losses.hpp"
#include "kdda/nets.hpp"
#include "kdda/schedule.hpp"

namespace kdda {

// ---- optimizer -----------------------------------------------------------------

struct SgdConfig {
  double learning_rate = 0.01;
  double weight_decay = 5e-4;
  double momentum = 0.9;

  void validate() const;
};

// v <- momentum * v + (g + weight_decay * w);  w <- w - lr * v.
void sgd_step(std::span<double> w, std::span<const double> g, std::span<double> velocity,
              const SgdConfig& cfg);

// Momentum SGD over a fixed parameter list. Parameters without a gradient
// buffer at step() time are left untouched, velocity included.
class SgdOptimizer {
 public:
  SgdOptimizer(std::vector<DiffTensor> params, SgdConfig cfg);

  void step();
  void zero_grad();
  const SgdConfig& config() const { return cfg_; }

 private:
  std::vector<DiffTensor> params_;
  std::vector<std::vector<double>> velocity_;
  SgdConfig cfg_;
};

// ---- configuration -----------------------------------------------------------------

enum class UdaMethod { kMmd, kRevGrad };

struct TrainConfig {
  std::size_t epochs = 40;
  std::size_t batch_size = 32;
  LossWeights weights;
  double beta_start = 0.1;
  double beta_end = 0.8;
  BetaUpdate beta_update = BetaUpdate::kPerEpoch;
  std::optional<double> beta_fixed;  // overrides the schedule when set
  UdaMethod uda_method = UdaMethod::kMmd;
  KdMode kd_mode = KdMode::kLogits;
  // Multiplies feature-mode distillation terms (the partial L2 sums over all
  // teacher channels, so its scale grows with the tap width).
  double feature_kd_weight = 1.0;
  // Replaces weights.gamma per adaptation epoch (zero-based, counted within
  // the adaptation phase). Programmatic only; config files keep gamma fixed.
  std::function<double(std::size_t)> gamma_schedule;
  SoftmaxConvention softmax = SoftmaxConvention::kStandardDivide;
  KlDirection kl_direction = KlDirection::kTeacherStudent;
  KernelConfig kernel;
  MarginMode margin_mode = MarginMode::kCountWeighted;
  double margin_momentum = 0.9;
  SgdConfig uda_optimizer;  // one instance per teacher
  SgdConfig kd_optimizer;   // the student
  std::vector<std::size_t> domain_classifier_hidden = {32, 32};
  std::uint64_t seed = 0;
  std::size_t eval_every = 1;

  // Throws ConfigError naming the first violated constraint.
  void validate() const;
  DistillConfig distill_config() const;
};

// ---- results -----------------------------------------------------------------------

struct MetricRecord {
  std::size_t epoch = 0;  // one-based; phases of a baseline continue the count
  std::string model;      // "student", "teacher" or "teacher_<i>"
  std::string domain;     // dataset domain id, or "target_mean"
  double accuracy = 0.0;
  std::map<std::string, double> losses;  // epoch means of the model's loss terms
};

struct TrainResult {
  Network student;
  std::vector<Network> teachers;
  std::vector<Network> domain_classifiers;  // revgrad only, one per adapted model
  std::vector<RegressorState> regressors;   // feature mode only, one per teacher
  std::vector<MetricRecord> metrics;
};

// Fraction of rows whose logits argmax equals the label (ties pick the lower
// class index).
double evaluate(const Network& network, const DomainDataset& dataset);

// Evaluation sets are labeled held-out splits; a student record averaging
// every non-source set is added under domain "target_mean".
struct EvalSets {
  std::string source_domain = "source";
  std::vector<DomainDataset> sets;
};

// ---- procedures ------------------------------------------------------------------------

// Joint teacher adaptation and student distillation on one target.
TrainResult train_stda(const NetworkSpec& teacher_spec, const NetworkSpec& student_spec,
                       const DomainDataset& source, const DomainDataset& target,
                       const TrainConfig& cfg, const EvalSets& eval = {});

// One teacher per target; within every batch step teacher i adapts to
// (source, target i) and the student then takes one step on teacher i's
// distillation objective, for i in order.
TrainResult train_mtda(std::span<const NetworkSpec> teacher_specs,
                       const NetworkSpec& student_spec, const DomainDataset& source,
                       std::span<const DomainDataset> targets, const TrainConfig& cfg,
                       const EvalSets& eval = {});

// UDA alone on one network (the teacher routine of train_stda with beta = 0).
// `role` picks the model id and the seed stream: "teacher" or "student".
TrainResult train_uda(const NetworkSpec& spec, const DomainDataset& source,
                      const DomainDataset& target, const TrainConfig& cfg,
                      const EvalSets& eval = {}, const std::string& role = "student");

enum class BaselineOrdering { kUdaThenKd, kKdThenUda, kUdaOnly, kSourceOnly };

std::string to_string(BaselineOrdering ordering);
BaselineOrdering parse_baseline_ordering(const std::string& name);

// Sequential pipelines; every phase runs cfg.epochs epochs.
//   uda_then_kd: teacher UDA, then target-only distillation into the student.
//   kd_then_uda: teacher source CE, source distillation, then student UDA.
//   uda_only:    train_uda on the student.
//   source_only: student source CE; the target is never read.
TrainResult train_baseline(BaselineOrdering ordering, const NetworkSpec& teacher_spec,
                           const NetworkSpec& student_spec, const DomainDataset& source,
                           const DomainDataset& target, const TrainConfig& cfg,
                           const EvalSets& eval = {});

}  // namespace kdda
