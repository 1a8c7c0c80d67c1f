// Copyright 2026 The kdda Authors
// SPDX-License-Identifier: Apache-2.0

// Adaptation losses for the teachers and distillation losses for the student.
// Every loss returns a scalar DiffTensor; teacher outputs entering a
// distillation loss are always detached.

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "kdda/nets.hpp"
#include "kdda/tensor.hpp"

namespace kdda {

// ---- kernels and MMD ---------------------------------------------------------

struct KernelConfig {
  enum class Strategy {
    kFixed,            // values are sigma^2 directly
    kMedianHeuristic,  // values multiply the median pooled squared distance
  };
  Strategy strategy = Strategy::kMedianHeuristic;
  std::vector<double> values = {0.5, 1.0, 2.0};

  void validate() const;
};

// sigma^2 values used for one (source, target) feature pair. The median is
// taken over distinct pooled pairs and treated as a constant; a zero median
// falls back to 1.
std::vector<double> resolve_bandwidths(const DiffTensor& feat_s, const DiffTensor& feat_t,
                                       const KernelConfig& cfg);

// Biased (V-statistic) squared MMD with k(x, y) = exp(-||x - y||^2 / (2 sigma^2)),
// summed over bandwidths.
DiffTensor mmd_gaussian(const DiffTensor& feat_s, const DiffTensor& feat_t,
                        const KernelConfig& cfg);

// ---- weights -------------------------------------------------------------------

struct LossWeights {
  double gamma = 0.5;       // source CE weight in the MMD teacher loss
  double alpha_dc = 0.5;    // domain-confusion weight in the RevGrad teacher loss
  double alpha_ce = 0.5;    // source CE weight in the source-consistency loss
  double tau = 20.0;        // distillation temperature
  double beta = 0.0;        // current KD/UDA balance
  double grl_lambda = 1.0;  // gradient reversal strength

  void validate() const;
};

struct LabeledBatch {
  DiffTensor features;
  std::vector<int> labels;
};

// Mean cross-entropy of raw logits [N x K] against class indices.
DiffTensor cross_entropy(const DiffTensor& logits, std::span<const int> labels);

// ---- teacher adaptation -----------------------------------------------------------

struct UdaLoss {
  DiffTensor total;
  DiffTensor source_ce;
  DiffTensor adaptation;  // MMD or domain confusion
};

// L_MMD(phi(x_s), phi(x_t)) + gamma * CE(teacher(x_s), y_s).
UdaLoss teacher_uda_mmd(const Network& teacher, const LabeledBatch& source,
                        const DiffTensor& target, const LossWeights& weights,
                        const KernelConfig& kernel);

// Mean CE of the domain classifier over [features_s; features_t] with domain
// labels 0 / 1. grad_reverse(lambda) sits between the features and the
// classifier, so the features receive the negated gradient.
DiffTensor domain_confusion(const DiffTensor& features_s, const DiffTensor& features_t,
                            const Network& classifier, double lambda);

// CE(teacher(x_s), y_s) + alpha_dc * domain_confusion.
UdaLoss teacher_uda_revgrad(const Network& teacher, const Network& classifier,
                            const LabeledBatch& source, const DiffTensor& target,
                            const LossWeights& weights);

// ---- distillation -------------------------------------------------------------------

enum class KlDirection {
  kTeacherStudent,  // KL(teacher || student)
  kStudentTeacher,  // KL(student || teacher)
};

// Batch-mean KL divergence between temperature-softened distributions. The
// teacher side is treated as a constant.
DiffTensor logits_distill(const DiffTensor& student_logits, const DiffTensor& teacher_logits,
                          double tau, SoftmaxConvention convention,
                          KlDirection direction = KlDirection::kTeacherStudent);

// max(x, m_c) per channel; x is [C] or [N x C], margins has C entries.
DiffTensor margin_relu(const DiffTensor& x, std::span<const double> margins);

enum class MarginMode {
  kCountWeighted,  // exact conditional mean over every negative seen so far
  kMomentum,       // exponential moving average of per-batch negative means
};

// Per-channel estimate of E[F | F < 0] over teacher features.
struct MarginState {
  std::vector<double> margins;
  std::vector<double> negative_counts;
  MarginMode mode = MarginMode::kCountWeighted;
  double momentum = 0.9;
};

MarginState make_margin_state(std::size_t channels,
                              MarginMode mode = MarginMode::kCountWeighted,
                              double momentum = 0.9);

// Incorporates the negative values of teacher_features [N x C]. Channels that
// have never produced a negative keep margin 0.
MarginState update_margins(MarginState state, const DiffTensor& teacher_features);

// Sum over components of 0 when student <= teacher <= 0, (teacher - student)^2
// otherwise. 2-D inputs are averaged over rows (per-sample sums).
DiffTensor partial_l2(const DiffTensor& teacher, const DiffTensor& student);

// partial_l2(margin_relu(teacher, margins), regressor(student)).
DiffTensor feature_distill(const DiffTensor& teacher_features,
                           const DiffTensor& student_features,
                           std::span<const double> margins, const RegressorState& regressor);

enum class KdMode { kLogits, kFeature };

struct DistillConfig {
  KdMode mode = KdMode::kLogits;
  double tau = 20.0;
  SoftmaxConvention convention = SoftmaxConvention::kStandardDivide;
  KlDirection direction = KlDirection::kTeacherStudent;
};

// Feature-mode state owned by the student side of one teacher/student pair.
struct FeatureLink {
  std::size_t teacher_tap = 0;
  std::size_t student_tap = 0;
  RegressorState regressor;
  MarginState margins;
};

// Teacher forward without recording; all outputs are constants.
ForwardResult teacher_outputs(const Network& teacher, const DiffTensor& batch);

// Distillation term between already-computed outputs. `link` is required in
// feature mode.
DiffTensor distill(const ForwardResult& teacher_out, const ForwardResult& student_out,
                   const DistillConfig& cfg, const FeatureLink* link);

// Distillation on the unlabeled target batch; no label term.
DiffTensor target_kd(const Network& teacher, const Network& student, const DiffTensor& target,
                     const DistillConfig& cfg, const FeatureLink* link);

struct SourceKdLoss {
  DiffTensor total;
  DiffTensor distill;
  DiffTensor source_ce;
};

// Distillation on the source batch plus alpha_ce * CE(student(x_s), y_s).
SourceKdLoss source_kd(const Network& teacher, const Network& student,
                       const LabeledBatch& source, const DistillConfig& cfg,
                       double alpha_ce, const FeatureLink* link);

// ---- composition ----------------------------------------------------------------------

struct LossComponents {
  DiffTensor tda;  // teacher adaptation loss
  DiffTensor tkd;  // target distillation
  DiffTensor skd;  // source consistency distillation
};

struct Objectives {
  DiffTensor teacher;  // (1 - beta) * tda
  DiffTensor student;  // beta * (tkd + skd)
};

Objectives total_stda_loss(const LossComponents& parts, double beta);
// One pair per teacher i, built from (teacher i, target i) components.
std::vector<Objectives> total_mtda_loss(std::span<const LossComponents> parts, double beta);

}  // namespace kdda
