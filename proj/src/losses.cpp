// Copyright 2026 The kdda Authors
// SPDX-License-Identifier: Apache-2.0

#include "kdda/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "kdda/simd/kernels.hpp"

namespace kdda {

namespace {

DiffTensor constant_scalar(double v) { return DiffTensor::scalar(v); }

std::size_t channel_count(std::string_view op, const DiffTensor& x) {
  if (x.rank() == 1) return x.size();
  if (x.rank() == 2) return x.cols();
  throw ShapeError(std::string(op) + ": expected [C] or [N x C], got " + shape_string(x.shape()));
}

}  // namespace

// ---- kernels and MMD ---------------------------------------------------------

void KernelConfig::validate() const {
  if (values.empty()) throw std::invalid_argument("kernel config: at least one bandwidth");
  for (double v : values) {
    if (!(v > 0.0)) throw std::invalid_argument("kernel config: bandwidths must be > 0");
  }
}

std::vector<double> resolve_bandwidths(const DiffTensor& feat_s, const DiffTensor& feat_t,
                                       const KernelConfig& cfg) {
  cfg.validate();
  if (cfg.strategy == KernelConfig::Strategy::kFixed) return cfg.values;

  const std::size_t d = feat_s.cols();
  const std::size_t ns = feat_s.rows(), nt = feat_t.rows();
  std::vector<double> pooled;
  pooled.reserve((ns + nt) * d);
  pooled.insert(pooled.end(), feat_s.data().begin(), feat_s.data().end());
  pooled.insert(pooled.end(), feat_t.data().begin(), feat_t.data().end());
  const std::size_t n = ns + nt;
  std::vector<double> dist(n * n);
  simd::active_kernels().pairwise_sq_dist(pooled.data(), pooled.data(), dist.data(), n, n, d);
  std::vector<double> upper;
  upper.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) upper.push_back(dist[i * n + j]);
  }
  double median = 1.0;
  if (!upper.empty()) {
    auto mid = upper.begin() + static_cast<long>(upper.size() / 2);
    std::nth_element(upper.begin(), mid, upper.end());
    median = *mid;
    if (upper.size() % 2 == 0) {
      median = 0.5 * (median + *std::max_element(upper.begin(), mid));
    }
  }
  if (!(median > 0.0)) median = 1.0;
  std::vector<double> sigmas;
  for (double m : cfg.values) sigmas.push_back(m * median);
  return sigmas;
}

DiffTensor mmd_gaussian(const DiffTensor& feat_s, const DiffTensor& feat_t,
                        const KernelConfig& cfg) {
  if (feat_s.rank() != 2 || feat_t.rank() != 2) {
    throw ShapeError("mmd_gaussian: expected [N x d] features, got " +
                     shape_string(feat_s.shape()) + " and " + shape_string(feat_t.shape()));
  }
  if (feat_s.cols() != feat_t.cols()) {
    throw ShapeError("mmd_gaussian: feature dims differ " + shape_string(feat_s.shape()) +
                     " vs " + shape_string(feat_t.shape()));
  }
  const std::vector<double> sigmas = resolve_bandwidths(feat_s, feat_t, cfg);
  const DiffTensor d_ss = pairwise_sq_dist(feat_s, feat_s);
  const DiffTensor d_tt = pairwise_sq_dist(feat_t, feat_t);
  const DiffTensor d_st = pairwise_sq_dist(feat_s, feat_t);
  DiffTensor total;
  for (double sigma2 : sigmas) {
    const double c = -1.0 / (2.0 * sigma2);
    DiffTensor term = reduce_mean(exp(scale(d_ss, c))) + reduce_mean(exp(scale(d_tt, c))) -
                      scale(reduce_mean(exp(scale(d_st, c))), 2.0);
    total = total.defined() ? total + term : term;
  }
  return total;
}

void LossWeights::validate() const {
  if (gamma < 0 || alpha_dc < 0 || alpha_ce < 0 || grl_lambda < 0) {
    throw std::invalid_argument("loss weights: gamma, alpha_dc, alpha_ce, grl_lambda must be >= 0");
  }
  if (!(tau > 0)) throw std::invalid_argument("loss weights: tau must be > 0");
  if (beta < 0 || beta > 1) throw std::invalid_argument("loss weights: beta must lie in [0, 1]");
}

DiffTensor cross_entropy(const DiffTensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.rows() != labels.size()) {
    throw ShapeError("cross_entropy: logits " + shape_string(logits.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = logits.rows(), k = logits.cols();
  std::vector<double> one_hot(n * k, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(labels[i]) +
                              " outside [0, " + std::to_string(k) + ")");
    }
    one_hot[i * k + static_cast<std::size_t>(labels[i])] = 1.0;
  }
  const DiffTensor logp = log_softmax(logits, 1.0, SoftmaxConvention::kStandardDivide);
  const DiffTensor picked = mul(DiffTensor({n, k}, std::move(one_hot)), logp);
  return scale(reduce_sum(picked), -1.0 / static_cast<double>(n));
}

// ---- teacher adaptation -------------------------------------------------------

UdaLoss teacher_uda_mmd(const Network& teacher, const LabeledBatch& source,
                        const DiffTensor& target, const LossWeights& weights,
                        const KernelConfig& kernel) {
  const ForwardResult out_s = teacher.forward(source.features);
  const ForwardResult out_t = teacher.forward(target);
  UdaLoss loss;
  loss.adaptation = mmd_gaussian(out_s.embedding, out_t.embedding, kernel);
  loss.source_ce = cross_entropy(out_s.logits, source.labels);
  loss.total = loss.adaptation + scale(loss.source_ce, weights.gamma);
  return loss;
}

DiffTensor domain_confusion(const DiffTensor& features_s, const DiffTensor& features_t,
                            const Network& classifier, double lambda) {
  if (features_s.rank() != 2 || features_t.rank() != 2 ||
      features_s.cols() != classifier.spec.input_dim() ||
      features_t.cols() != classifier.spec.input_dim()) {
    throw ShapeError("domain_confusion: features " + shape_string(features_s.shape()) + " / " +
                     shape_string(features_t.shape()) + " do not match classifier input dim " +
                     std::to_string(classifier.spec.input_dim()));
  }
  const DiffTensor pooled = grad_reverse(concat({features_s, features_t}), lambda);
  std::vector<int> domains(features_s.rows(), 0);
  domains.resize(features_s.rows() + features_t.rows(), 1);
  return cross_entropy(classifier.forward(pooled).logits, domains);
}

UdaLoss teacher_uda_revgrad(const Network& teacher, const Network& classifier,
                            const LabeledBatch& source, const DiffTensor& target,
                            const LossWeights& weights) {
  const ForwardResult out_s = teacher.forward(source.features);
  const ForwardResult out_t = teacher.forward(target);
  UdaLoss loss;
  loss.source_ce = cross_entropy(out_s.logits, source.labels);
  loss.adaptation = domain_confusion(out_s.embedding, out_t.embedding, classifier,
                                     weights.grl_lambda);
  loss.total = loss.source_ce + scale(loss.adaptation, weights.alpha_dc);
  return loss;
}

// ---- distillation ---------------------------------------------------------------

DiffTensor logits_distill(const DiffTensor& student_logits, const DiffTensor& teacher_logits,
                          double tau, SoftmaxConvention convention, KlDirection direction) {
  if (student_logits.shape() != teacher_logits.shape()) {
    throw ShapeError("logits_distill: student " + shape_string(student_logits.shape()) +
                     " vs teacher " + shape_string(teacher_logits.shape()));
  }
  const std::size_t rows = student_logits.rank() == 2 ? student_logits.rows() : 1;
  const double inv_n = 1.0 / static_cast<double>(rows);

  DiffTensor teacher_logp;
  {
    NoGradGuard no_grad;
    teacher_logp = log_softmax(teacher_logits.detach(), tau, convention);
  }
  const DiffTensor student_logp = log_softmax(student_logits, tau, convention);

  if (direction == KlDirection::kTeacherStudent) {
    // sum p_t (log p_t - log p_s) = const - sum p_t log p_s
    const auto lt = teacher_logp.data();
    std::vector<double> pt(lt.size());
    double entropy_term = 0.0;
    for (std::size_t i = 0; i < lt.size(); ++i) {
      pt[i] = std::exp(lt[i]);
      entropy_term += pt[i] * lt[i];
    }
    const DiffTensor cross = reduce_sum(mul(DiffTensor(student_logits.shape(), std::move(pt)),
                                            student_logp));
    return scale(constant_scalar(entropy_term) - cross, inv_n);
  }
  const DiffTensor ps = exp(student_logp);
  return scale(reduce_sum(mul(ps, student_logp - teacher_logp)), inv_n);
}

DiffTensor margin_relu(const DiffTensor& x, std::span<const double> margins) {
  const std::size_t c = channel_count("margin_relu", x);
  if (margins.size() != c) {
    throw ShapeError("margin_relu: " + std::to_string(margins.size()) + " margins for " +
                     std::to_string(c) + " channels");
  }
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = std::max(xv[i], margins[i % c]);
  std::vector<double> m(margins.begin(), margins.end());
  return make_op("margin_relu", x.shape(), std::move(out), {x},
                 [x, m = std::move(m), c](std::span<const double> g,
                                          std::span<const std::span<double>> gi) {
                   const auto xv = x.data();
                   for (std::size_t i = 0; i < g.size(); ++i) {
                     if (xv[i] > m[i % c]) gi[0][i] += g[i];
                   }
                 });
}

MarginState make_margin_state(std::size_t channels, MarginMode mode, double momentum) {
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw std::invalid_argument("margin state: momentum must lie in [0, 1)");
  }
  return {std::vector<double>(channels, 0.0), std::vector<double>(channels, 0.0), mode, momentum};
}

MarginState update_margins(MarginState state, const DiffTensor& teacher_features) {
  const std::size_t c = channel_count("update_margins", teacher_features);
  if (c != state.margins.size()) {
    throw ShapeError("update_margins: features have " + std::to_string(c) +
                     " channels, state has " + std::to_string(state.margins.size()));
  }
  std::vector<double> neg_sum(c, 0.0), neg_count(c, 0.0);
  const auto v = teacher_features.data();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] < 0.0) {
      neg_sum[i % c] += v[i];
      neg_count[i % c] += 1.0;
    }
  }
  for (std::size_t ch = 0; ch < c; ++ch) {
    if (neg_count[ch] == 0.0) continue;
    const double seen = state.negative_counts[ch];
    if (state.mode == MarginMode::kCountWeighted || seen == 0.0) {
      const double total = seen + neg_count[ch];
      state.margins[ch] = (state.margins[ch] * seen + neg_sum[ch]) / total;
    } else {
      state.margins[ch] = state.momentum * state.margins[ch] +
                          (1.0 - state.momentum) * (neg_sum[ch] / neg_count[ch]);
    }
    state.negative_counts[ch] = seen + neg_count[ch];
  }
  return state;
}

DiffTensor partial_l2(const DiffTensor& teacher, const DiffTensor& student) {
  if (teacher.shape() != student.shape()) {
    throw ShapeError("partial_l2: teacher " + shape_string(teacher.shape()) + " vs student " +
                     shape_string(student.shape()));
  }
  const double inv_rows = teacher.rank() == 2 ? 1.0 / static_cast<double>(teacher.rows()) : 1.0;
  const auto t = teacher.data();
  const auto s = student.data();
  std::vector<char> active(t.size());
  double total = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    active[i] = !(s[i] <= t[i] && t[i] <= 0.0);
    if (active[i]) total += (t[i] - s[i]) * (t[i] - s[i]);
  }
  return make_op("partial_l2", {1}, {total * inv_rows}, {teacher, student},
                 [teacher, student, active = std::move(active), inv_rows](
                     std::span<const double> g, std::span<const std::span<double>> gi) {
                   const auto t = teacher.data();
                   const auto s = student.data();
                   const double w = 2.0 * g[0] * inv_rows;
                   for (std::size_t i = 0; i < t.size(); ++i) {
                     if (!active[i]) continue;
                     if (!gi[0].empty()) gi[0][i] += w * (t[i] - s[i]);
                     if (!gi[1].empty()) gi[1][i] += w * (s[i] - t[i]);
                   }
                 });
}

DiffTensor feature_distill(const DiffTensor& teacher_features,
                           const DiffTensor& student_features,
                           std::span<const double> margins, const RegressorState& regressor) {
  DiffTensor rectified;
  {
    NoGradGuard no_grad;
    rectified = margin_relu(teacher_features.detach(), margins);
  }
  const DiffTensor s2d = student_features.rank() == 1
                             ? reshape(student_features, {1, student_features.size()})
                             : student_features;
  DiffTensor mapped = regressor.apply(s2d);
  if (rectified.rank() == 1) mapped = reshape(mapped, rectified.shape());
  return partial_l2(rectified, mapped);
}

ForwardResult teacher_outputs(const Network& teacher, const DiffTensor& batch) {
  NoGradGuard no_grad;
  return teacher.forward(batch);
}

DiffTensor distill(const ForwardResult& teacher_out, const ForwardResult& student_out,
                   const DistillConfig& cfg, const FeatureLink* link) {
  if (cfg.mode == KdMode::kLogits) {
    return logits_distill(student_out.logits, teacher_out.logits, cfg.tau, cfg.convention,
                          cfg.direction);
  }
  if (link == nullptr) throw std::invalid_argument("distill: feature mode needs a FeatureLink");
  const auto t = teacher_out.features.find(link->teacher_tap);
  const auto s = student_out.features.find(link->student_tap);
  if (t == teacher_out.features.end() || s == student_out.features.end()) {
    throw std::invalid_argument("distill: configured tap layer is not exposed by the network");
  }
  return feature_distill(t->second, s->second, link->margins.margins, link->regressor);
}

DiffTensor target_kd(const Network& teacher, const Network& student, const DiffTensor& target,
                     const DistillConfig& cfg, const FeatureLink* link) {
  return distill(teacher_outputs(teacher, target), student.forward(target), cfg, link);
}

SourceKdLoss source_kd(const Network& teacher, const Network& student,
                       const LabeledBatch& source, const DistillConfig& cfg, double alpha_ce,
                       const FeatureLink* link) {
  const ForwardResult t_out = teacher_outputs(teacher, source.features);
  const ForwardResult s_out = student.forward(source.features);
  SourceKdLoss loss;
  loss.distill = distill(t_out, s_out, cfg, link);
  loss.source_ce = cross_entropy(s_out.logits, source.labels);
  loss.total = loss.distill + scale(loss.source_ce, alpha_ce);
  return loss;
}

// ---- composition ------------------------------------------------------------------

Objectives total_stda_loss(const LossComponents& parts, double beta) {
  if (beta < 0.0 || beta > 1.0) throw std::invalid_argument("total loss: beta outside [0, 1]");
  return {scale(parts.tda, 1.0 - beta), scale(parts.tkd + parts.skd, beta)};
}

std::vector<Objectives> total_mtda_loss(std::span<const LossComponents> parts, double beta) {
  std::vector<Objectives> out;
  out.reserve(parts.size());
  for (const LossComponents& p : parts) out.push_back(total_stda_loss(p, beta));
  return out;
}

}  // namespace kdda
