// Copyright 2026 The kdda Authors
// SPDX-License-Identifier: Apache-2.0

#include "kdda/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "kdda/losses.hpp"
#include "kdda/nets.hpp"

namespace kdda {

bool GradcheckReport::passed() const {
  return std::all_of(ops.begin(), ops.end(), [](const auto& op) { return op.passed; });
}

std::vector<std::string> GradcheckReport::failures() const {
  std::vector<std::string> out;
  for (const auto& op : ops) {
    if (!op.passed) out.push_back(op.op);
  }
  return out;
}

double relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-8});
}

double check_instance(const GradcheckInstance& instance, double step) {
  const std::vector<DiffTensor>& inputs = instance.inputs;
  for (DiffTensor x : inputs) x.zero_grad();
  backward(instance.objective());

  double worst = 0.0;
  for (std::size_t j = 0; j < inputs.size(); ++j) {
    DiffTensor x = inputs[j];
    std::vector<double> analytic(x.size(), 0.0);
    if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());

    std::vector<NumericTerm> terms;
    if (instance.numeric.empty() || instance.numeric[j].empty()) {
      terms.push_back({1.0, instance.objective});
    } else {
      terms = instance.numeric[j];
    }
    std::vector<double> numeric(x.size(), 0.0);
    NoGradGuard no_grad;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double original = x.data()[i];
      for (const NumericTerm& term : terms) {
        x.mutable_data()[i] = original + step;
        const double up = term.fn().item();
        x.mutable_data()[i] = original - step;
        const double down = term.fn().item();
        numeric[i] += term.factor * (up - down) / (2.0 * step);
      }
      x.mutable_data()[i] = original;
    }
    worst = std::max(worst, relative_error(analytic, numeric));
  }
  for (DiffTensor x : inputs) x.zero_grad();
  return worst;
}

GradcheckOpReport check_op(const GradcheckOp& op, const GradcheckOptions& options) {
  GradcheckOpReport report;
  report.op = op.name;
  report.kind = op.exact ? "exact" : "finite-difference";
  Rng rng(derive_seed(options.seed, "gradcheck." + op.name));
  for (std::size_t i = 0; i < options.instances; ++i) {
    const double err = op.exact ? op.exact(rng) : check_instance(op.make(rng), options.step);
    report.worst_error = std::max(report.worst_error, std::isnan(err) ? INFINITY : err);
    ++report.instances;
  }
  const double limit = op.exact ? 1e-12 : options.tolerance;
  report.passed = report.worst_error < limit;
  return report;
}

GradcheckReport run_gradcheck(const GradcheckOptions& options, std::span<const GradcheckOp> ops) {
  GradcheckReport report;
  report.tolerance = options.tolerance;
  for (const GradcheckOp& op : ops) report.ops.push_back(check_op(op, options));
  return report;
}

std::string format_report(const GradcheckReport& report) {
  std::ostringstream out;
  char line[160];
  for (const auto& op : report.ops) {
    std::snprintf(line, sizeof line, "%-4s %-34s %-17s n=%-4zu worst=%.3e\n",
                  op.passed ? "ok" : "FAIL", op.op.c_str(), op.kind.c_str(), op.instances,
                  op.worst_error);
    out << line;
  }
  const auto failed = report.failures();
  out << (failed.empty() ? "gradcheck passed: " : "gradcheck FAILED: ") << report.ops.size() - failed.size()
      << "/" << report.ops.size() << " ops within tolerance\n";
  return out.str();
}

namespace {

double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * rng.uniform(); }

std::size_t dim(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
}

// Uniform values at least `gap` away from every kink.
std::vector<double> values(Rng& rng, std::size_t n, double lo, double hi,
                           std::span<const double> kinks = {}, double gap = 0.05) {
  std::vector<double> out(n);
  for (double& v : out) {
    do {
      v = uniform(rng, lo, hi);
    } while (std::any_of(kinks.begin(), kinks.end(),
                         [&](double k) { return std::abs(v - k) < gap; }));
  }
  return out;
}

DiffTensor leaf(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  const std::size_t n = shape_size(shape);
  return DiffTensor(std::move(shape), values(rng, n, lo, hi), true);
}

// Scalar probe sum(out * w) for a fixed random weight w.
Objective probe(std::function<DiffTensor()> fn, Rng& rng) {
  Shape shape;
  {
    NoGradGuard no_grad;
    shape = fn().shape();
  }
  const DiffTensor w(shape, values(rng, shape_size(shape), -1.0, 1.0));
  return [fn = std::move(fn), w] { return reduce_sum(mul(fn(), w)); };
}

std::vector<int> random_labels(Rng& rng, std::size_t n, std::size_t k) {
  std::vector<int> out(n);
  for (int& l : out) l = static_cast<int>(rng.below(k));
  return out;
}

Network small_net(Rng& rng, std::size_t in, std::vector<std::size_t> hidden, std::size_t k) {
  NetworkSpec spec = make_mlp_spec(in, hidden, k);
  Network net{spec, init_network(spec, rng.below(UINT64_MAX))};
  for (LayerParams& l : net.state.layers) {
    for (double& b : l.bias.mutable_data()) b = uniform(rng, -0.3, 0.3);
  }
  return net;
}

void append(std::vector<DiffTensor>& dst, const std::vector<DiffTensor>& src) {
  dst.insert(dst.end(), src.begin(), src.end());
}

GradcheckOp unary(std::string name, std::function<DiffTensor(const DiffTensor&)> f, double lo,
                  double hi, std::vector<double> kinks = {}) {
  return {name, [f, lo, hi, kinks](Rng& rng) {
            const Shape shape = {dim(rng, 1, 4), dim(rng, 1, 4)};
            DiffTensor x(shape, values(rng, shape_size(shape), lo, hi, kinks), true);
            return GradcheckInstance{{x}, probe([f, x] { return f(x); }, rng), {}};
          },
          {}};
}

GradcheckOp binary(std::string name, std::function<DiffTensor(const DiffTensor&, const DiffTensor&)> f) {
  return {name, [f](Rng& rng) {
            const Shape shape = {dim(rng, 1, 4), dim(rng, 1, 4)};
            DiffTensor a = leaf(rng, shape), b = leaf(rng, shape);
            return GradcheckInstance{{a, b}, probe([f, a, b] { return f(a, b); }, rng), {}};
          },
          {}};
}

std::string convention_name(SoftmaxConvention c) {
  return c == SoftmaxConvention::kStandardDivide ? "divide" : "multiply";
}

KernelConfig fixed_kernel(Rng& rng) {
  KernelConfig k;
  k.strategy = KernelConfig::Strategy::kFixed;
  k.values = {uniform(rng, 0.3, 1.0), uniform(rng, 1.0, 3.0)};
  return k;
}

// Teacher/student pair with a feature link, sized for cheap differencing.
struct KdFixture {
  Network teacher;
  Network student;
  FeatureLink link;
  DiffTensor xs, xt;
  std::vector<int> ys;
};

KdFixture kd_fixture(Rng& rng) {
  const std::size_t d = 3, k = 3;
  KdFixture f{small_net(rng, d, {5, 4}, k), small_net(rng, d, {3}, k), {}, {}, {}, {}};
  f.link.teacher_tap = f.teacher.spec.tap_layers.back();
  f.link.student_tap = f.student.spec.tap_layers.back();
  f.link.regressor = init_regressor(3, 4, rng.below(UINT64_MAX));
  f.link.margins = make_margin_state(4);
  f.link.margins.margins = values(rng, 4, -1.0, -0.1);
  const std::size_t ns = dim(rng, 2, 4), nt = dim(rng, 2, 4);
  f.xs = leaf(rng, {ns, d});
  f.xt = leaf(rng, {nt, d});
  f.ys = random_labels(rng, ns, k);
  return f;
}

std::vector<GradcheckOp> primitive_ops() {
  std::vector<GradcheckOp> ops;
  ops.push_back(binary("add", [](const DiffTensor& a, const DiffTensor& b) { return add(a, b); }));
  ops.push_back(binary("subtract", [](const DiffTensor& a, const DiffTensor& b) { return sub(a, b); }));
  ops.push_back(binary("multiply", [](const DiffTensor& a, const DiffTensor& b) { return mul(a, b); }));
  ops.push_back({"scale", [](Rng& rng) {
                   DiffTensor x = leaf(rng, {dim(rng, 1, 4), dim(rng, 1, 4)});
                   const double c = uniform(rng, -3.0, 3.0);
                   return GradcheckInstance{{x}, probe([x, c] { return scale(x, c); }, rng), {}};
                 },
                 {}});
  ops.push_back({"matmul", [](Rng& rng) {
                   const std::size_t m = dim(rng, 1, 4), k = dim(rng, 1, 4), n = dim(rng, 1, 4);
                   DiffTensor a = leaf(rng, {m, k}), b = leaf(rng, {k, n});
                   return GradcheckInstance{{a, b}, probe([a, b] { return matmul(a, b); }, rng), {}};
                 },
                 {}});
  ops.push_back(unary("relu", [](const DiffTensor& x) { return relu(x); }, -2.0, 2.0, {0.0}));
  ops.push_back(unary("exp", [](const DiffTensor& x) { return exp(x); }, -2.0, 2.0));
  ops.push_back(unary("log", [](const DiffTensor& x) { return log(x); }, 0.5, 3.0));
  ops.push_back({"reduce_sum", [](Rng& rng) {
                   DiffTensor x = leaf(rng, {dim(rng, 1, 4), dim(rng, 1, 4)});
                   return GradcheckInstance{{x}, [x] { return scale(reduce_sum(x), 1.7); }, {}};
                 },
                 {}});
  ops.push_back({"reduce_mean", [](Rng& rng) {
                   DiffTensor x = leaf(rng, {dim(rng, 1, 4), dim(rng, 1, 4)});
                   return GradcheckInstance{{x}, [x] { return scale(reduce_mean(x), 1.7); }, {}};
                 },
                 {}});
  ops.push_back({"concat", [](Rng& rng) {
                   const std::size_t c = dim(rng, 1, 4);
                   DiffTensor a = leaf(rng, {dim(rng, 1, 3), c}), b = leaf(rng, {dim(rng, 1, 3), c});
                   return GradcheckInstance{{a, b}, probe([a, b] { return concat({a, b}); }, rng), {}};
                 },
                 {}});
  ops.push_back({"reshape", [](Rng& rng) {
                   const std::size_t r = dim(rng, 1, 4), c = dim(rng, 1, 4);
                   DiffTensor x = leaf(rng, {r, c});
                   return GradcheckInstance{{x}, probe([x, r, c] { return reshape(x, {c, r}); }, rng), {}};
                 },
                 {}});
  ops.push_back({"squared_l2_norm", [](Rng& rng) {
                   DiffTensor x = leaf(rng, {dim(rng, 1, 4), dim(rng, 1, 4)});
                   return GradcheckInstance{{x}, [x] { return squared_l2_norm(x); }, {}};
                 },
                 {}});
  ops.push_back({"grad_reverse", [](Rng& rng) {
                   DiffTensor x = leaf(rng, {dim(rng, 1, 4), dim(rng, 1, 4)});
                   const double lambda = uniform(rng, 0.1, 2.0);
                   const DiffTensor w(x.shape(), values(rng, x.size(), -1.0, 1.0));
                   Objective obj = [x, w, lambda] { return reduce_sum(mul(grad_reverse(x, lambda), w)); };
                   Objective ref = [x, w] { return reduce_sum(mul(x, w)); };
                   return GradcheckInstance{{x}, obj, {{{-lambda, ref}}}};
                 },
                 {}});
  ops.push_back({"expand_rows", [](Rng& rng) {
                   DiffTensor x = leaf(rng, {dim(rng, 1, 4)});
                   const std::size_t rows = dim(rng, 1, 4);
                   return GradcheckInstance{{x}, probe([x, rows] { return expand_rows(x, rows); }, rng), {}};
                 },
                 {}});
  for (SoftmaxConvention c : {SoftmaxConvention::kStandardDivide, SoftmaxConvention::kMultiply}) {
    ops.push_back({"log_softmax[" + convention_name(c) + "]", [c](Rng& rng) {
                     DiffTensor z = leaf(rng, {dim(rng, 1, 4), dim(rng, 2, 4)}, -2.0, 2.0);
                     const double tau = uniform(rng, 0.5, 3.0);
                     return GradcheckInstance{
                         {z}, probe([z, tau, c] { return log_softmax(z, tau, c); }, rng), {}};
                   },
                   {}});
    ops.push_back({"softmax_temperature[" + convention_name(c) + "]", [c](Rng& rng) {
                     DiffTensor z = leaf(rng, {dim(rng, 1, 4), dim(rng, 2, 4)}, -2.0, 2.0);
                     const double tau = uniform(rng, 0.5, 3.0);
                     return GradcheckInstance{
                         {z}, probe([z, tau, c] { return softmax_temperature(z, tau, c); }, rng), {}};
                   },
                   {}});
  }
  ops.push_back({"pairwise_sq_dist", [](Rng& rng) {
                   const std::size_t d = dim(rng, 1, 4);
                   DiffTensor a = leaf(rng, {dim(rng, 1, 4), d}), b = leaf(rng, {dim(rng, 1, 4), d});
                   return GradcheckInstance{{a, b}, probe([a, b] { return pairwise_sq_dist(a, b); }, rng), {}};
                 },
                 {}});
  ops.push_back({"dense_forward", [](Rng& rng) {
                   Network net = small_net(rng, 3, {4, 3}, 2);
                   DiffTensor x = leaf(rng, {dim(rng, 1, 4), 3});
                   std::vector<DiffTensor> inputs = {x};
                   append(inputs, net.parameters());
                   Objective logits = probe([net, x] { return net.forward(x).logits; }, rng);
                   const std::size_t tap = net.spec.tap_layers.back();
                   Objective feats = probe([net, x, tap] { return net.forward(x).features.at(tap); }, rng);
                   return GradcheckInstance{inputs, [logits, feats] { return logits() + feats(); }, {}};
                 },
                 {}});
  return ops;
}

std::vector<GradcheckOp> loss_ops() {
  std::vector<GradcheckOp> ops;
  ops.push_back({"mmd_gaussian", [](Rng& rng) {
                   const std::size_t d = dim(rng, 1, 3);
                   DiffTensor s = leaf(rng, {dim(rng, 1, 4), d}), t = leaf(rng, {dim(rng, 1, 4), d});
                   const KernelConfig k = fixed_kernel(rng);
                   return GradcheckInstance{{s, t}, [s, t, k] { return mmd_gaussian(s, t, k); }, {}};
                 },
                 {}});
  ops.push_back({"cross_entropy", [](Rng& rng) {
                   const std::size_t n = dim(rng, 1, 4), k = dim(rng, 2, 4);
                   DiffTensor z = leaf(rng, {n, k}, -2.0, 2.0);
                   const std::vector<int> y = random_labels(rng, n, k);
                   return GradcheckInstance{{z}, [z, y] { return cross_entropy(z, y); }, {}};
                 },
                 {}});
  ops.push_back({"teacher_uda_mmd", [](Rng& rng) {
                   KdFixture f = kd_fixture(rng);
                   LossWeights w;
                   w.gamma = uniform(rng, 0.1, 1.0);
                   const KernelConfig k = fixed_kernel(rng);
                   std::vector<DiffTensor> inputs = {f.xs, f.xt};
                   append(inputs, f.teacher.parameters());
                   const LabeledBatch src{f.xs, f.ys};
                   return GradcheckInstance{
                       inputs, [f, src, w, k] { return teacher_uda_mmd(f.teacher, src, f.xt, w, k).total; }, {}};
                 },
                 {}});
  ops.push_back({"domain_confusion", [](Rng& rng) {
                   const std::size_t d = dim(rng, 1, 3);
                   DiffTensor fs = leaf(rng, {dim(rng, 1, 4), d}), ft = leaf(rng, {dim(rng, 1, 4), d});
                   Network c = small_net(rng, d, {4, 3}, 2);
                   const double lambda = uniform(rng, 0.1, 2.0);
                   Objective obj = [fs, ft, c, lambda] { return domain_confusion(fs, ft, c, lambda); };
                   std::vector<DiffTensor> inputs = {fs, ft};
                   append(inputs, c.parameters());
                   std::vector<std::vector<NumericTerm>> numeric(inputs.size());
                   numeric[0] = {{-lambda, obj}};
                   numeric[1] = {{-lambda, obj}};
                   return GradcheckInstance{inputs, obj, numeric};
                 },
                 {}});
  ops.push_back({"teacher_uda_revgrad", [](Rng& rng) {
                   KdFixture f = kd_fixture(rng);
                   Network c = small_net(rng, f.teacher.spec.embedding_dim(), {4, 3}, 2);
                   LossWeights w;
                   w.alpha_dc = uniform(rng, 0.1, 1.0);
                   w.grl_lambda = uniform(rng, 0.1, 2.0);
                   const LabeledBatch src{f.xs, f.ys};
                   Objective obj = [f, c, src, w] {
                     return teacher_uda_revgrad(f.teacher, c, src, f.xt, w).total;
                   };
                   Objective ce = [f, src] { return cross_entropy(f.teacher.forward(src.features).logits, src.labels); };
                   Objective dc = [f, c, w] {
                     return scale(domain_confusion(f.teacher.forward(f.xs).embedding,
                                                   f.teacher.forward(f.xt).embedding, c, w.grl_lambda),
                                  w.alpha_dc);
                   };
                   std::vector<DiffTensor> inputs = {f.xs, f.xt};
                   append(inputs, f.teacher.parameters());
                   const std::size_t feature_side = inputs.size();
                   append(inputs, c.parameters());
                   std::vector<std::vector<NumericTerm>> numeric(inputs.size());
                   for (std::size_t i = 0; i < feature_side; ++i) numeric[i] = {{1.0, ce}, {-w.grl_lambda, dc}};
                   return GradcheckInstance{inputs, obj, numeric};
                 },
                 {}});
  for (SoftmaxConvention c : {SoftmaxConvention::kStandardDivide, SoftmaxConvention::kMultiply}) {
    for (KlDirection dir : {KlDirection::kTeacherStudent, KlDirection::kStudentTeacher}) {
      const std::string name = "logits_distill[" + convention_name(c) + "," +
                               (dir == KlDirection::kTeacherStudent ? "kl(t||s)" : "kl(s||t)") + "]";
      ops.push_back({name, [c, dir](Rng& rng) {
                       const std::size_t n = dim(rng, 1, 4), k = dim(rng, 2, 4);
                       DiffTensor s = leaf(rng, {n, k}, -2.0, 2.0);
                       const DiffTensor t(Shape{n, k}, values(rng, n * k, -2.0, 2.0));
                       const double tau = uniform(rng, 0.5, 3.0);
                       return GradcheckInstance{{s}, [s, t, tau, c, dir] { return logits_distill(s, t, tau, c, dir); }, {}};
                     },
                     {}});
    }
  }
  ops.push_back({"margin_relu", [](Rng& rng) {
                   const std::size_t n = dim(rng, 1, 4), ch = dim(rng, 1, 4);
                   const std::vector<double> m = values(rng, ch, -1.0, 0.0);
                   std::vector<double> x(n * ch);
                   for (std::size_t i = 0; i < n; ++i) {
                     for (std::size_t j = 0; j < ch; ++j) {
                       const double kink[] = {m[j]};
                       x[i * ch + j] = values(rng, 1, -2.0, 2.0, kink)[0];
                     }
                   }
                   DiffTensor xt(Shape{n, ch}, x, true);
                   return GradcheckInstance{{xt}, probe([xt, m] { return margin_relu(xt, m); }, rng), {}};
                 },
                 {}});
  ops.push_back({"update_margins", {}, [](Rng& rng) {
                   // Sequential count-weighted updates against the direct
                   // conditional mean of the concatenated batches.
                   const std::size_t ch = dim(rng, 1, 4), n1 = dim(rng, 1, 6), n2 = dim(rng, 1, 6);
                   const DiffTensor a(Shape{n1, ch}, values(rng, n1 * ch, -2.0, 2.0));
                   const DiffTensor b(Shape{n2, ch}, values(rng, n2 * ch, -2.0, 2.0));
                   const MarginState s = update_margins(update_margins(make_margin_state(ch), a), b);
                   double err = 0.0;
                   for (std::size_t j = 0; j < ch; ++j) {
                     double sum = 0.0;
                     std::size_t count = 0;
                     for (const DiffTensor* t : {&a, &b}) {
                       for (std::size_t i = 0; i < t->rows(); ++i) {
                         if (t->at(i, j) < 0.0) {
                           sum += t->at(i, j);
                           ++count;
                         }
                       }
                     }
                     const double expect = count == 0 ? 0.0 : sum / static_cast<double>(count);
                     err = std::max(err, std::abs(s.margins[j] - expect));
                   }
                   return err;
                 }});
  ops.push_back({"partial_l2", [](Rng& rng) {
                   const std::size_t n = dim(rng, 1, 4), ch = dim(rng, 1, 4);
                   std::vector<double> t(n * ch), s(n * ch);
                   for (std::size_t i = 0; i < t.size(); ++i) {
                     const double zero[] = {0.0};
                     t[i] = values(rng, 1, -2.0, 2.0, zero)[0];
                     const double kink[] = {t[i]};
                     s[i] = values(rng, 1, -3.0, 3.0, kink)[0];
                   }
                   DiffTensor tt(Shape{n, ch}, t, true), st(Shape{n, ch}, s, true);
                   return GradcheckInstance{{tt, st}, [tt, st] { return partial_l2(tt, st); }, {}};
                 },
                 {}});
  ops.push_back({"feature_distill", [](Rng& rng) {
                   const std::size_t n = dim(rng, 1, 4), cs = dim(rng, 1, 3), ct = dim(rng, 1, 3);
                   const DiffTensor teacher(Shape{n, ct}, values(rng, n * ct, -2.0, 2.0));
                   DiffTensor student = leaf(rng, {n, cs});
                   const RegressorState r = init_regressor(cs, ct, rng.below(UINT64_MAX));
                   const std::vector<double> m = values(rng, ct, -1.0, -0.1);
                   std::vector<DiffTensor> inputs = {student};
                   append(inputs, r.parameters());
                   return GradcheckInstance{
                       inputs, [teacher, student, m, r] { return feature_distill(teacher, student, m, r); }, {}};
                 },
                 {}});
  for (KdMode mode : {KdMode::kLogits, KdMode::kFeature}) {
    const std::string suffix = mode == KdMode::kLogits ? "[logits]" : "[feature]";
    ops.push_back({"target_kd" + suffix, [mode](Rng& rng) {
                     KdFixture f = kd_fixture(rng);
                     const DistillConfig cfg{mode, uniform(rng, 0.5, 3.0), SoftmaxConvention::kStandardDivide,
                                             KlDirection::kTeacherStudent};
                     std::vector<DiffTensor> inputs = f.student.parameters();
                     append(inputs, f.link.regressor.parameters());
                     return GradcheckInstance{
                         inputs, [f, cfg] { return target_kd(f.teacher, f.student, f.xt, cfg, &f.link); }, {}};
                   },
                   {}});
    ops.push_back({"source_kd" + suffix, [mode](Rng& rng) {
                     KdFixture f = kd_fixture(rng);
                     const DistillConfig cfg{mode, uniform(rng, 0.5, 3.0), SoftmaxConvention::kStandardDivide,
                                             KlDirection::kTeacherStudent};
                     const double alpha = uniform(rng, 0.1, 1.0);
                     const LabeledBatch src{f.xs, f.ys};
                     std::vector<DiffTensor> inputs = f.student.parameters();
                     append(inputs, f.link.regressor.parameters());
                     return GradcheckInstance{
                         inputs,
                         [f, cfg, src, alpha] { return source_kd(f.teacher, f.student, src, cfg, alpha, &f.link).total; },
                         {}};
                   },
                   {}});
  }
  ops.push_back({"total_stda_loss", [](Rng& rng) {
                   KdFixture f = kd_fixture(rng);
                   const double beta = uniform(rng, 0.1, 0.9);
                   const KernelConfig k = fixed_kernel(rng);
                   const DistillConfig cfg{KdMode::kLogits, 2.0, SoftmaxConvention::kStandardDivide,
                                           KlDirection::kTeacherStudent};
                   const LabeledBatch src{f.xs, f.ys};
                   auto objectives = [f, src, k, cfg, beta] {
                     LossComponents parts;
                     parts.tda = teacher_uda_mmd(f.teacher, src, f.xt, LossWeights{}, k).total;
                     parts.tkd = target_kd(f.teacher, f.student, f.xt, cfg, nullptr);
                     parts.skd = source_kd(f.teacher, f.student, src, cfg, 0.5, nullptr).total;
                     return total_stda_loss(parts, beta);
                   };
                   // The student objective sees the teacher only through
                   // detached outputs, so each side is referenced against its
                   // own objective.
                   Objective teacher_obj = [objectives] { return objectives().teacher; };
                   Objective student_obj = [objectives] { return objectives().student; };
                   Objective obj = [objectives] {
                     const Objectives o = objectives();
                     return o.teacher + o.student;
                   };
                   std::vector<DiffTensor> inputs = f.teacher.parameters();
                   const std::size_t teacher_count = inputs.size();
                   append(inputs, f.student.parameters());
                   std::vector<std::vector<NumericTerm>> numeric(inputs.size());
                   for (std::size_t i = 0; i < inputs.size(); ++i) {
                     numeric[i] = {{1.0, i < teacher_count ? teacher_obj : student_obj}};
                   }
                   return GradcheckInstance{inputs, obj, numeric};
                 },
                 {}});
  return ops;
}

}  // namespace

std::vector<GradcheckOp> default_gradcheck_ops() {
  std::vector<GradcheckOp> ops = primitive_ops();
  for (GradcheckOp& op : loss_ops()) ops.push_back(std::move(op));
  return ops;
}

GradcheckOp corrupted_gradcheck_op() {
  return {"corrupted_square", [](Rng& rng) {
            DiffTensor x = leaf(rng, {dim(rng, 1, 4)});
            Objective obj = [x] {
              std::vector<double> v(x.data().begin(), x.data().end());
              for (double& e : v) e *= e;
              const DiffTensor y = make_op(
                  "corrupted_square", x.shape(), std::move(v), {x},
                  [x](std::span<const double> g, std::span<const std::span<double>> grads) {
                    // Wrong on purpose: d(x^2)/dx is 2x, not 3x.
                    for (std::size_t i = 0; i < g.size(); ++i) grads[0][i] += 3.0 * x.data()[i] * g[i];
                  });
              return reduce_sum(y);
            };
            return GradcheckInstance{{x}, obj, {}};
          },
          {}};
}

}  // namespace kdda
