// Copyright 2026 The kdda Authors
// SPDX-License-Identifier: Apache-2.0

#include "kdda/trainers.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>

#include "kdda/errors.hpp"
#include "kdda/random.hpp"
#include "kdda/simd/kernels.hpp"

namespace kdda {

// ---- optimizer -----------------------------------------------------------------

void SgdConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("sgd: learning_rate must be > 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("sgd: weight_decay must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("sgd: momentum must lie in [0, 1)");
}

void sgd_step(std::span<double> w, std::span<const double> g, std::span<double> velocity,
              const SgdConfig& cfg) {
  if (w.size() != g.size() || w.size() != velocity.size()) {
    throw ShapeError("sgd_step: parameter, gradient and velocity sizes differ");
  }
  simd::active_kernels().momentum_step(w.size(), w.data(), g.data(), velocity.data(),
                                       cfg.learning_rate, cfg.weight_decay, cfg.momentum);
}

SgdOptimizer::SgdOptimizer(std::vector<DiffTensor> params, SgdConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  cfg_.validate();
  velocity_.reserve(params_.size());
  for (const DiffTensor& p : params_) {
    if (!p.is_leaf() || !p.requires_grad()) {
      throw GraphError("SgdOptimizer: parameters must be leaves that require grad");
    }
    velocity_.emplace_back(p.size(), 0.0);
  }
}

void SgdOptimizer::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    DiffTensor& p = params_[i];
    if (!p.has_grad()) continue;
    sgd_step(p.mutable_data(), p.grad(), velocity_[i], cfg_);
  }
}

void SgdOptimizer::zero_grad() {
  for (DiffTensor& p : params_) p.zero_grad();
}

// ---- configuration -----------------------------------------------------------------

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("train: batch_size must be positive");
  if (eval_every == 0) throw ConfigError("train: eval_every must be positive");
  try {
    weights.validate();
    kernel.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("train: ") + e.what());
  }
  if (!(beta_start > 0.0)) throw ConfigError("train: beta_start must be > 0");
  if (!(beta_end >= beta_start && beta_end <= 1.0)) {
    throw ConfigError("train: beta_end must lie in [beta_start, 1]");
  }
  if (beta_fixed && !(*beta_fixed >= 0.0 && *beta_fixed <= 1.0)) {
    throw ConfigError("train: beta_fixed must lie in [0, 1]");
  }
  if (!(margin_momentum >= 0.0 && margin_momentum < 1.0)) {
    throw ConfigError("train: margin_momentum must lie in [0, 1)");
  }
  for (std::size_t h : domain_classifier_hidden) {
    if (h == 0) throw ConfigError("train: domain_classifier_hidden widths must be positive");
  }
  if (!(feature_kd_weight > 0.0)) throw ConfigError("train: feature_kd_weight must be > 0");
  uda_optimizer.validate();
  kd_optimizer.validate();
}

DistillConfig TrainConfig::distill_config() const {
  return {kd_mode, weights.tau, softmax, kl_direction};
}

// ---- evaluation --------------------------------------------------------------------

double evaluate(const Network& network, const DomainDataset& dataset) {
  const std::span<const int> labels = dataset.labels();
  std::vector<std::size_t> all(dataset.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  NoGradGuard no_grad;
  const DiffTensor logits = network.forward(dataset.gather(all)).logits;
  const std::size_t k = logits.cols();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < all.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c) {
      if (logits.at(i, c) > logits.at(i, best)) best = c;
    }
    if (static_cast<int>(best) == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(all.size());
}

namespace {

// ---- shared plumbing ---------------------------------------------------------------

class LossMeans {
 public:
  void add(const std::string& name, double value) {
    auto& [sum, count] = acc_[name];
    sum += value;
    ++count;
  }
  std::map<std::string, double> means() const {
    std::map<std::string, double> out;
    for (const auto& [name, acc] : acc_) out[name] = acc.first / static_cast<double>(acc.second);
    return out;
  }

 private:
  std::map<std::string, std::pair<double, std::size_t>> acc_;
};

double checked_value(const DiffTensor& loss, const std::string& term, std::size_t epoch,
                     std::size_t batch) {
  const double v = loss.item();
  if (!std::isfinite(v)) {
    throw NumericError("non-finite " + term + " loss (" + std::to_string(v) + ") at epoch " +
                       std::to_string(epoch + 1) + ", batch " + std::to_string(batch));
  }
  return v;
}

struct Context {
  const TrainConfig& cfg;
  const EvalSets& eval;
  std::vector<MetricRecord>& metrics;
};

bool eval_due(const TrainConfig& cfg, std::size_t local_epoch, std::size_t phase_epochs) {
  return (local_epoch + 1) % cfg.eval_every == 0 || local_epoch + 1 == phase_epochs;
}

void record(Context& ctx, std::size_t epoch, const std::string& model, const Network& net,
            const std::map<std::string, double>& losses) {
  double target_sum = 0.0;
  std::size_t targets = 0;
  for (const DomainDataset& ds : ctx.eval.sets) {
    const double acc = evaluate(net, ds);
    ctx.metrics.push_back({epoch + 1, model, ds.domain_id(), acc, losses});
    if (ds.domain_id() != ctx.eval.source_domain) {
      target_sum += acc;
      ++targets;
    }
  }
  if (model == "student" && targets > 0) {
    ctx.metrics.push_back(
        {epoch + 1, model, "target_mean", target_sum / static_cast<double>(targets), losses});
  }
}

// Runs one epoch of lockstep batches over `sizes`; fn(batch, batches, indices).
template <typename Fn>
void for_each_step(const TrainConfig& cfg, std::span<const std::size_t> sizes, std::size_t epoch,
                   Fn&& fn) {
  const BatchPlan plan{cfg.batch_size, derive_seed(cfg.seed, "batches"), epoch};
  const std::vector<StepIndices> steps = paired_batch_indices(sizes, plan);
  for (std::size_t b = 0; b < steps.size(); ++b) fn(b, steps.size(), steps[b]);
}

LabeledBatch labeled_batch(const DomainDataset& source, std::span<const std::size_t> idx) {
  return {source.gather(idx), source.gather_labels(idx)};
}

// A network trained with an adaptation objective, plus its optimizer and (for
// revgrad) its domain classifier.
struct Adapted {
  Network net;
  std::optional<Network> classifier;
  std::unique_ptr<SgdOptimizer> opt;
};

Adapted make_adapted(Network net, const std::string& role, std::size_t index,
                     const TrainConfig& cfg, bool with_classifier) {
  Adapted a{std::move(net), std::nullopt, nullptr};
  std::vector<DiffTensor> params = a.net.parameters();
  if (with_classifier && cfg.uda_method == UdaMethod::kRevGrad) {
    NetworkSpec spec =
        make_domain_classifier_spec(a.net.spec.embedding_dim(), cfg.domain_classifier_hidden);
    a.classifier = Network{spec, init_network(spec, derive_seed(cfg.seed, "dc." + role, {index}))};
    for (const DiffTensor& p : a.classifier->parameters()) params.push_back(p);
  }
  a.opt = std::make_unique<SgdOptimizer>(std::move(params), cfg.uda_optimizer);
  return a;
}

Network fresh_network(const NetworkSpec& spec, const std::string& role, std::size_t index,
                      const TrainConfig& cfg) {
  return Network{spec, init_network(spec, derive_seed(cfg.seed, role, {index}))};
}

LossWeights weights_at(const TrainConfig& cfg, std::size_t adaptation_epoch) {
  LossWeights w = cfg.weights;
  if (cfg.gamma_schedule) {
    w.gamma = cfg.gamma_schedule(adaptation_epoch);
    if (!std::isfinite(w.gamma) || w.gamma < 0.0) {
      throw ConfigError("train: gamma_schedule returned an invalid value at epoch " +
                        std::to_string(adaptation_epoch));
    }
  }
  return w;
}

// One optimizer step on weight * (teacher adaptation loss).
void uda_step(Adapted& m, const LabeledBatch& source, const DiffTensor& target, double weight,
              const LossWeights& weights, const TrainConfig& cfg, LossMeans& means,
              std::size_t epoch, std::size_t batch) {
  const UdaLoss loss = cfg.uda_method == UdaMethod::kMmd
                           ? teacher_uda_mmd(m.net, source, target, weights, cfg.kernel)
                           : teacher_uda_revgrad(m.net, *m.classifier, source, target, weights);
  means.add("tda", checked_value(loss.total, "adaptation objective", epoch, batch));
  means.add("source_ce", loss.source_ce.item());
  means.add("adaptation", loss.adaptation.item());
  backward(scale(loss.total, weight));
  m.opt->step();
  m.opt->zero_grad();
}

void ce_step(Network& net, SgdOptimizer& opt, const LabeledBatch& source, LossMeans& means,
             std::size_t epoch, std::size_t batch) {
  const DiffTensor loss = cross_entropy(net.forward(source.features).logits, source.labels);
  means.add("source_ce", checked_value(loss, "source cross-entropy", epoch, batch));
  backward(loss);
  opt.step();
  opt.zero_grad();
}

FeatureLink make_link(const NetworkSpec& teacher, const NetworkSpec& student, std::size_t index,
                      const TrainConfig& cfg) {
  if (teacher.tap_layers.empty() || student.tap_layers.empty()) {
    throw ConfigError("feature distillation needs a tap layer on teacher and student");
  }
  FeatureLink link;
  link.teacher_tap = teacher.tap_layers.back();
  link.student_tap = student.tap_layers.back();
  link.regressor = init_regressor(student.tap_dim(link.student_tap),
                                  teacher.tap_dim(link.teacher_tap),
                                  derive_seed(cfg.seed, "regressor", {index}));
  link.margins =
      make_margin_state(teacher.tap_dim(link.teacher_tap), cfg.margin_mode, cfg.margin_momentum);
  return link;
}

// Distillation term with the feature-mode weight applied.
DiffTensor weighted_distill(const ForwardResult& teacher_out, const ForwardResult& student_out,
                            const TrainConfig& cfg, const FeatureLink* link) {
  const DiffTensor d = distill(teacher_out, student_out, cfg.distill_config(), link);
  return cfg.kd_mode == KdMode::kFeature ? scale(d, cfg.feature_kd_weight) : d;
}

void observe_margins(FeatureLink* link, const ForwardResult& teacher_out) {
  if (link == nullptr) return;
  link->margins = update_margins(std::move(link->margins),
                                 teacher_out.features.at(link->teacher_tap));
}

std::vector<DiffTensor> student_parameters(const Network& student,
                                           const std::vector<FeatureLink>& links) {
  std::vector<DiffTensor> params = student.parameters();
  for (const FeatureLink& l : links) {
    for (const DiffTensor& p : l.regressor.parameters()) params.push_back(p);
  }
  return params;
}

std::string teacher_id(std::size_t i, bool multi) {
  return multi ? "teacher_" + std::to_string(i) : "teacher";
}

// ---- joint training ------------------------------------------------------------------

TrainResult train_joint(std::span<const NetworkSpec> teacher_specs,
                        const NetworkSpec& student_spec, const DomainDataset& source,
                        std::span<const DomainDataset> targets, const TrainConfig& cfg,
                        const EvalSets& eval, bool multi) {
  cfg.validate();
  if (teacher_specs.size() != targets.size()) {
    throw ConfigError("train: " + std::to_string(teacher_specs.size()) + " teachers for " +
                      std::to_string(targets.size()) + " targets");
  }
  if (targets.empty()) throw ConfigError("train: at least one target domain");
  const std::size_t n = targets.size();

  std::vector<FeatureView> views;
  for (const DomainDataset& t : targets) views.emplace_back(t);
  std::vector<std::size_t> sizes = {source.size()};
  for (const FeatureView& v : views) sizes.push_back(v.size());

  std::vector<Adapted> teachers;
  for (std::size_t i = 0; i < n; ++i) {
    teachers.push_back(
        make_adapted(fresh_network(teacher_specs[i], "teacher", i, cfg), "teacher", i, cfg, true));
  }
  Network student = fresh_network(student_spec, "student", 0, cfg);
  std::vector<FeatureLink> links;
  if (cfg.kd_mode == KdMode::kFeature) {
    for (std::size_t i = 0; i < n; ++i) links.push_back(make_link(teacher_specs[i], student_spec, i, cfg));
  }
  SgdOptimizer student_opt(student_parameters(student, links), cfg.kd_optimizer);

  TrainResult result;
  Context ctx{cfg, eval, result.metrics};
  const std::optional<BetaSchedule> schedule =
      cfg.epochs > 0 ? std::optional(make_beta_schedule(cfg.beta_start, cfg.beta_end, cfg.epochs))
                     : std::nullopt;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<LossMeans> teacher_means(n);
    LossMeans student_means;
    const LossWeights weights = weights_at(cfg, epoch);
    for_each_step(cfg, sizes, epoch, [&](std::size_t b, std::size_t nb, const StepIndices& idx) {
      const double beta =
          cfg.beta_fixed ? *cfg.beta_fixed
                         : beta_at(*schedule, schedule_time(cfg.beta_update, epoch, b, nb));
      student_means.add("beta", beta);
      const LabeledBatch src = labeled_batch(source, idx[0]);
      for (std::size_t i = 0; i < n; ++i) {
        const DiffTensor xt = views[i].gather(idx[i + 1]);
        uda_step(teachers[i], src, xt, 1.0 - beta, weights, cfg, teacher_means[i], epoch, b);
        if (beta == 0.0) continue;

        FeatureLink* link = links.empty() ? nullptr : &links[i];
        const ForwardResult t_src = teacher_outputs(teachers[i].net, src.features);
        const ForwardResult t_tgt = teacher_outputs(teachers[i].net, xt);
        observe_margins(link, t_src);
        observe_margins(link, t_tgt);

        const DiffTensor tkd = weighted_distill(t_tgt, student.forward(xt), cfg, link);
        const ForwardResult s_src = student.forward(src.features);
        const DiffTensor skd_distill = weighted_distill(t_src, s_src, cfg, link);
        const DiffTensor skd_ce = cross_entropy(s_src.logits, src.labels);
        const DiffTensor skd = skd_distill + scale(skd_ce, cfg.weights.alpha_ce);
        const double tkd_v = checked_value(tkd, "target distillation", epoch, b);
        const double skd_v = checked_value(skd, "source consistency", epoch, b);
        student_means.add("tkd", tkd_v);
        student_means.add("skd", skd_v);
        student_means.add("skd_ce", skd_ce.item());
        backward(scale(tkd + skd, beta));
        student_opt.step();
        student_opt.zero_grad();
      }
    });
    if (!eval_due(cfg, epoch, cfg.epochs)) continue;
    for (std::size_t i = 0; i < n; ++i) {
      record(ctx, epoch, teacher_id(i, multi), teachers[i].net, teacher_means[i].means());
    }
    record(ctx, epoch, "student", student, student_means.means());
  }

  result.student = std::move(student);
  for (Adapted& t : teachers) {
    result.teachers.push_back(std::move(t.net));
    if (t.classifier) result.domain_classifiers.push_back(std::move(*t.classifier));
  }
  for (FeatureLink& l : links) result.regressors.push_back(std::move(l.regressor));
  return result;
}

// UDA epochs [offset, offset + cfg.epochs) on an existing network.
void run_uda_phase(Adapted& m, const std::string& model, const DomainDataset& source,
                   const DomainDataset& target, std::size_t offset, Context& ctx) {
  const FeatureView view(target);
  const std::size_t sizes[] = {source.size(), view.size()};
  for (std::size_t e = 0; e < ctx.cfg.epochs; ++e) {
    LossMeans means;
    const LossWeights weights = weights_at(ctx.cfg, e);
    for_each_step(ctx.cfg, sizes, offset + e,
                  [&](std::size_t b, std::size_t, const StepIndices& idx) {
                    uda_step(m, labeled_batch(source, idx[0]), view.gather(idx[1]), 1.0, weights,
                             ctx.cfg, means, offset + e, b);
                  });
    if (eval_due(ctx.cfg, e, ctx.cfg.epochs)) record(ctx, offset + e, model, m.net, means.means());
  }
}

// Supervised source epochs [offset, offset + cfg.epochs).
void run_source_phase(Network& net, const std::string& model, const DomainDataset& source,
                      std::size_t offset, Context& ctx) {
  SgdOptimizer opt(net.parameters(), ctx.cfg.uda_optimizer);
  const std::size_t sizes[] = {source.size()};
  for (std::size_t e = 0; e < ctx.cfg.epochs; ++e) {
    LossMeans means;
    for_each_step(ctx.cfg, sizes, offset + e,
                  [&](std::size_t b, std::size_t, const StepIndices& idx) {
                    ce_step(net, opt, labeled_batch(source, idx[0]), means, offset + e, b);
                  });
    if (eval_due(ctx.cfg, e, ctx.cfg.epochs)) record(ctx, offset + e, model, net, means.means());
  }
}

// Distillation from a frozen teacher, either on the unlabeled target alone or
// on the labeled source with the consistency cross-entropy.
void run_distill_phase(const Network& teacher, Network& student, const DomainDataset& data,
                       bool source_consistency, std::size_t offset, Context& ctx,
                       TrainResult& result) {
  const TrainConfig& cfg = ctx.cfg;
  std::vector<FeatureLink> links;
  if (cfg.kd_mode == KdMode::kFeature) links.push_back(make_link(teacher.spec, student.spec, 0, cfg));
  FeatureLink* link = links.empty() ? nullptr : &links[0];
  SgdOptimizer opt(student_parameters(student, links), cfg.kd_optimizer);
  const std::optional<FeatureView> view =
      source_consistency ? std::nullopt : std::optional<FeatureView>(FeatureView(data));
  const std::size_t sizes[] = {data.size()};
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    LossMeans means;
    for_each_step(cfg, sizes, offset + e, [&](std::size_t b, std::size_t, const StepIndices& idx) {
      const DiffTensor x = view ? view->gather(idx[0]) : data.gather(idx[0]);
      const ForwardResult t_out = teacher_outputs(teacher, x);
      observe_margins(link, t_out);
      const ForwardResult s_out = student.forward(x);
      DiffTensor loss = weighted_distill(t_out, s_out, cfg, link);
      if (source_consistency) {
        const std::vector<int> labels = data.gather_labels(idx[0]);
        const DiffTensor ce = cross_entropy(s_out.logits, labels);
        means.add("skd_ce", ce.item());
        loss = loss + scale(ce, cfg.weights.alpha_ce);
      }
      means.add(source_consistency ? "skd" : "tkd",
                checked_value(loss, source_consistency ? "source consistency" : "target distillation",
                              offset + e, b));
      backward(loss);
      opt.step();
      opt.zero_grad();
    });
    if (eval_due(cfg, e, cfg.epochs)) record(ctx, offset + e, "student", student, means.means());
  }
  for (FeatureLink& l : links) result.regressors.push_back(std::move(l.regressor));
}

}  // namespace

// ---- public procedures -------------------------------------------------------------------

TrainResult train_stda(const NetworkSpec& teacher_spec, const NetworkSpec& student_spec,
                       const DomainDataset& source, const DomainDataset& target,
                       const TrainConfig& cfg, const EvalSets& eval) {
  return train_joint(std::span(&teacher_spec, 1), student_spec, source, std::span(&target, 1), cfg,
                     eval, false);
}

TrainResult train_mtda(std::span<const NetworkSpec> teacher_specs,
                       const NetworkSpec& student_spec, const DomainDataset& source,
                       std::span<const DomainDataset> targets, const TrainConfig& cfg,
                       const EvalSets& eval) {
  return train_joint(teacher_specs, student_spec, source, targets, cfg, eval, true);
}

TrainResult train_uda(const NetworkSpec& spec, const DomainDataset& source,
                      const DomainDataset& target, const TrainConfig& cfg, const EvalSets& eval,
                      const std::string& role) {
  cfg.validate();
  if (role != "teacher" && role != "student") {
    throw ConfigError("train_uda: role must be 'teacher' or 'student'");
  }
  TrainResult result;
  Context ctx{cfg, eval, result.metrics};
  Adapted m = make_adapted(fresh_network(spec, role, 0, cfg), role, 0, cfg, true);
  run_uda_phase(m, role, source, target, 0, ctx);
  if (m.classifier) result.domain_classifiers.push_back(std::move(*m.classifier));
  if (role == "student") {
    result.student = std::move(m.net);
  } else {
    result.teachers.push_back(std::move(m.net));
  }
  return result;
}

std::string to_string(BaselineOrdering ordering) {
  switch (ordering) {
    case BaselineOrdering::kUdaThenKd: return "uda_then_kd";
    case BaselineOrdering::kKdThenUda: return "kd_then_uda";
    case BaselineOrdering::kUdaOnly: return "uda_only";
    case BaselineOrdering::kSourceOnly: return "source_only";
  }
  return "unknown";
}

BaselineOrdering parse_baseline_ordering(const std::string& name) {
  for (BaselineOrdering o : {BaselineOrdering::kUdaThenKd, BaselineOrdering::kKdThenUda,
                             BaselineOrdering::kUdaOnly, BaselineOrdering::kSourceOnly}) {
    if (to_string(o) == name) return o;
  }
  throw ConfigError("unknown baseline ordering '" + name + "'");
}

TrainResult train_baseline(BaselineOrdering ordering, const NetworkSpec& teacher_spec,
                           const NetworkSpec& student_spec, const DomainDataset& source,
                           const DomainDataset& target, const TrainConfig& cfg,
                           const EvalSets& eval) {
  cfg.validate();
  TrainResult result;
  Context ctx{cfg, eval, result.metrics};
  const std::size_t ne = cfg.epochs;
  switch (ordering) {
    case BaselineOrdering::kSourceOnly: {
      Network student = fresh_network(student_spec, "student", 0, cfg);
      run_source_phase(student, "student", source, 0, ctx);
      result.student = std::move(student);
      break;
    }
    case BaselineOrdering::kUdaOnly:
      return train_uda(student_spec, source, target, cfg, eval, "student");
    case BaselineOrdering::kUdaThenKd: {
      Adapted teacher =
          make_adapted(fresh_network(teacher_spec, "teacher", 0, cfg), "teacher", 0, cfg, true);
      run_uda_phase(teacher, "teacher", source, target, 0, ctx);
      Network student = fresh_network(student_spec, "student", 0, cfg);
      run_distill_phase(teacher.net, student, target, false, ne, ctx, result);
      if (teacher.classifier) result.domain_classifiers.push_back(std::move(*teacher.classifier));
      result.teachers.push_back(std::move(teacher.net));
      result.student = std::move(student);
      break;
    }
    case BaselineOrdering::kKdThenUda: {
      Network teacher = fresh_network(teacher_spec, "teacher", 0, cfg);
      run_source_phase(teacher, "teacher", source, 0, ctx);
      Network student = fresh_network(student_spec, "student", 0, cfg);
      run_distill_phase(teacher, student, source, true, ne, ctx, result);
      Adapted adapted = make_adapted(std::move(student), "student", 0, cfg, true);
      run_uda_phase(adapted, "student", source, target, 2 * ne, ctx);
      if (adapted.classifier) result.domain_classifiers.push_back(std::move(*adapted.classifier));
      result.teachers.push_back(std::move(teacher));
      result.student = std::move(adapted.net);
      break;
    }
  }
  return result;
}

}  // namespace kdda
