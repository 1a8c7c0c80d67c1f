// Acceptance runner: checks the eight acceptance criteria and prints one
// PASS/FAIL line per criterion. Exit status is nonzero when any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "kdda/experiment.hpp"
#include "kdda/gradcheck.hpp"
#include "kdda/losses.hpp"
#include "kdda/schedule.hpp"
#include "kdda/trainers.hpp"

#ifndef KDDA_ACCEPTANCE_CONFIG_DIR
#define KDDA_ACCEPTANCE_CONFIG_DIR "configs/acceptance"
#endif

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

struct Options {
  fs::path config_dir = KDDA_ACCEPTANCE_CONFIG_DIR;
  fs::path work_dir = fs::temp_directory_path() / "kdda_acceptance";
  std::size_t seeds = 5;
  std::size_t threads = 0;
  std::set<int> only;
};

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string pct(double v) { return fmt("%.1f%%", 100.0 * v); }

json load(const Options& o, const std::string& name) {
  return kdda::read_json_file(o.config_dir / name);
}

// Runs fn(i) for i in [0, n) on up to `threads` workers; results keep index order.
template <typename T>
std::vector<T> parallel_map(std::size_t n, std::size_t threads, const std::function<T(std::size_t)>& fn) {
  std::vector<T> out(n);
  std::atomic<std::size_t> next{0};
  std::vector<std::future<void>> workers;
  const std::size_t w = std::max<std::size_t>(1, std::min(threads, n));
  for (std::size_t t = 0; t < w; ++t) {
    workers.push_back(std::async(std::launch::async, [&] {
      for (std::size_t i = next++; i < n; i = next++) out[i] = fn(i);
    }));
  }
  for (auto& f : workers) f.get();
  return out;
}

// Student mean target accuracy of one run.
double student_target(const json& cfg) {
  const kdda::RunOutcome r = kdda::run_experiment(kdda::parse_config(cfg));
  if (!r.student_target_mean) throw std::runtime_error("run produced no target accuracy");
  return *r.student_target_mean;
}

json with(json cfg, const std::vector<std::string>& overrides) {
  return kdda::apply_overrides(std::move(cfg), overrides);
}

// Per-variant means over seeds 0..seeds-1. All runs share one pool.
std::vector<double> seed_means(const Options& o, const std::vector<json>& variants) {
  const std::size_t n = variants.size() * o.seeds;
  const std::vector<double> acc = parallel_map<double>(n, o.threads, [&](std::size_t i) {
    return student_target(with(variants[i / o.seeds], {"train.seed=" + std::to_string(i % o.seeds)}));
  });
  std::vector<double> means(variants.size(), 0.0);
  for (std::size_t i = 0; i < n; ++i) means[i / o.seeds] += acc[i] / static_cast<double>(o.seeds);
  return means;
}

// ---- 1: gradient suite -------------------------------------------------------------

Outcome gradient_suite(const Options&) {
  Timer t;
  kdda::GradcheckOptions opts;
  opts.instances = 100;
  opts.tolerance = 1e-4;
  const auto ops = kdda::default_gradcheck_ops();
  const kdda::GradcheckReport report = kdda::run_gradcheck(opts, ops);
  double worst = 0.0;
  for (const auto& r : report.ops) worst = std::max(worst, r.worst_error);
  kdda::GradcheckOptions probe = opts;
  probe.instances = 5;
  const bool control_caught = !kdda::check_op(kdda::corrupted_gradcheck_op(), probe).passed;
  const double secs = t.seconds();
  std::ostringstream d;
  d << report.ops.size() << " ops x 100 instances, worst rel err " << fmt("%.2e", worst)
    << ", corrupted control " << (control_caught ? "caught" : "MISSED") << ", " << fmt("%.1f", secs)
    << " s";
  for (const std::string& f : report.failures()) d << "; failed: " << f;
  return {report.passed() && control_caught && secs < 120.0, d.str()};
}

// ---- 2: loss oracles ----------------------------------------------------------------

Outcome loss_oracles(const Options&) {
  using kdda::DiffTensor;
  std::vector<std::string> bad;
  auto check = [&](bool ok, const std::string& what) {
    if (!ok) bad.push_back(what);
  };

  kdda::KernelConfig k;
  k.strategy = kdda::KernelConfig::Strategy::kFixed;
  k.values = {0.5};
  const double mmd = kdda::mmd_gaussian(DiffTensor::matrix(1, 1, {0.0}),
                                        DiffTensor::matrix(1, 1, {1.0}), k)
                         .item();
  check(std::abs(mmd - (2.0 - 2.0 * std::exp(-1.0))) <= 1e-10, "mmd two-point");

  const double kl = kdda::logits_distill(DiffTensor::matrix(1, 2, {0.0, 0.0}),
                                         DiffTensor::matrix(1, 2, {std::log(2.0), 0.0}), 1.0,
                                         kdda::SoftmaxConvention::kStandardDivide)
                        .item();
  const double kl_ref = (2.0 / 3.0) * std::log(4.0 / 3.0) + (1.0 / 3.0) * std::log(2.0 / 3.0);
  check(std::abs(kl - kl_ref) <= 1e-10, "kl fixture");

  const double cases[4][3] = {{-1, -2, 0}, {-2, -1, 1}, {2, 1, 1}, {-1, 2, 9}};
  for (const auto& c : cases) {
    const double v =
        kdda::partial_l2(DiffTensor::vector({c[0]}), DiffTensor::vector({c[1]})).item();
    check(v == c[2], "partial_l2(" + std::to_string(c[0]) + ", " + std::to_string(c[1]) + ")");
  }

  const kdda::MarginState m =
      kdda::update_margins(kdda::make_margin_state(1), DiffTensor::matrix(4, 1, {-1, 2, -3, 4}));
  check(m.margins[0] == -2.0, "margin conditional mean");

  const kdda::BetaSchedule s = kdda::make_beta_schedule(0.1, 0.8, 400);
  check(std::abs(kdda::beta_at(s, 0.0) - 0.1) <= 1e-12, "beta_0");
  check(std::abs(kdda::beta_at(s, 400.0) - 0.8) <= 1e-12, "beta_N");
  const double ratio = std::exp(s.growth);
  double worst_ratio = 0.0;
  for (int e = 0; e < 400; ++e) {
    worst_ratio = std::max(worst_ratio,
                           std::abs(kdda::beta_at(s, e + 1.0) / kdda::beta_at(s, e) - ratio));
  }
  check(worst_ratio <= 1e-12, "geometric ratio");

  std::ostringstream d;
  d << "mmd err " << fmt("%.1e", std::abs(mmd - (2.0 - 2.0 * std::exp(-1.0)))) << ", kl err "
    << fmt("%.1e", std::abs(kl - kl_ref)) << ", partial-L2 table, margin -2, beta ratio err "
    << fmt("%.1e", worst_ratio);
  for (const std::string& b : bad) d << "; failed: " << b;
  return {bad.empty(), d.str()};
}

// ---- 3: gradient reversal ---------------------------------------------------------------

// Parameter change of the extractor and classifier after one plain SGD step.
struct Deltas {
  std::vector<double> extractor;
  std::vector<double> classifier;
};

Deltas one_step(const kdda::Network& extractor0, const kdda::Network& classifier0,
                const kdda::DiffTensor& xs, const kdda::DiffTensor& xt,
                const std::optional<double>& lambda) {
  kdda::Network ext{extractor0.spec, extractor0.state.clone()};
  kdda::Network cls{classifier0.spec, classifier0.state.clone()};
  std::vector<kdda::DiffTensor> params = ext.parameters();
  const std::size_t n_ext = params.size();
  for (const auto& p : cls.parameters()) params.push_back(p);
  std::vector<std::vector<double>> before;
  for (const auto& p : params) before.emplace_back(p.data().begin(), p.data().end());

  const kdda::DiffTensor fs = ext.forward(xs).embedding;
  const kdda::DiffTensor ft = ext.forward(xt).embedding;
  kdda::DiffTensor loss;
  if (lambda) {
    loss = kdda::domain_confusion(fs, ft, cls, *lambda);
  } else {
    std::vector<int> domains(fs.rows(), 0);
    domains.resize(fs.rows() + ft.rows(), 1);
    loss = kdda::cross_entropy(cls.forward(kdda::concat({fs, ft})).logits, domains);
  }
  kdda::backward(loss);
  kdda::SgdOptimizer opt(params, kdda::SgdConfig{0.1, 0.0, 0.0});
  opt.step();

  Deltas d;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& out = i < n_ext ? d.extractor : d.classifier;
    for (std::size_t j = 0; j < params[i].size(); ++j) out.push_back(params[i].at(j) - before[i][j]);
  }
  return d;
}

Outcome gradient_reversal(const Options&) {
  const kdda::NetworkSpec spec = kdda::make_mlp_spec(2, {16, 8}, 2);
  const kdda::NetworkSpec dc = kdda::make_domain_classifier_spec(spec.embedding_dim(), {8, 8});
  const kdda::Network extractor{spec, kdda::init_network(spec, 11)};
  const kdda::Network classifier{dc, kdda::init_network(dc, 12)};
  kdda::Rng rng(13);
  std::vector<double> a(20), b(24);
  for (double& v : a) v = rng.normal();
  for (double& v : b) v = rng.normal(0.5, 1.0);
  const kdda::DiffTensor xs = kdda::DiffTensor::matrix(10, 2, a);
  const kdda::DiffTensor xt = kdda::DiffTensor::matrix(12, 2, b);

  const Deltas plain = one_step(extractor, classifier, xs, xt, std::nullopt);
  double worst = 0.0, scale = 0.0;
  for (double lambda : {1.0, 0.5, 2.0}) {
    const Deltas rev = one_step(extractor, classifier, xs, xt, lambda);
    for (std::size_t i = 0; i < rev.extractor.size(); ++i) {
      worst = std::max(worst, std::abs(rev.extractor[i] + lambda * plain.extractor[i]));
      scale = std::max(scale, std::abs(plain.extractor[i]));
    }
    for (std::size_t i = 0; i < rev.classifier.size(); ++i) {
      worst = std::max(worst, std::abs(rev.classifier[i] - plain.classifier[i]));
    }
  }
  return {worst <= 1e-10 && scale > 0.0,
          "max |delta_rev + lambda * delta_plain| = " + fmt("%.2e", worst) +
              " over lambda in {1, 0.5, 2} (largest extractor delta " + fmt("%.2e", scale) +
              "); classifier deltas unchanged"};
}

// ---- 4: ordering ----------------------------------------------------------------------

Outcome ordering(const Options& o) {
  Timer t;
  const json base = load(o, "stda_moons.json");
  const std::vector<std::string> names = {"uda_then_kd", "kd_then_uda", "uda_only", "stda"};
  std::vector<json> variants;
  for (const std::string& n : names) {
    variants.push_back(n == "stda" ? with(base, {"procedure=stda"})
                                   : with(base, {"procedure=baseline", "baseline=" + n}));
  }
  const std::vector<double> m = seed_means(o, variants);
  bool lowest = true, highest = true;
  for (std::size_t i = 1; i < m.size(); ++i) lowest = lowest && m[0] < m[i];
  for (std::size_t i = 0; i + 1 < m.size(); ++i) highest = highest && m[3] > m[i];
  const double secs = t.seconds();
  std::ostringstream d;
  for (std::size_t i = 0; i < names.size(); ++i) d << names[i] << " " << pct(m[i]) << ", ";
  d << "uda_then_kd lowest: " << (lowest ? "yes" : "no") << ", stda highest: "
    << (highest ? "yes" : "no") << ", " << fmt("%.0f", secs) << " s";
  return {lowest && highest && secs < 600.0, d.str()};
}

// ---- 5: STDA gain over source-only ------------------------------------------------------

Outcome stda_gain(const Options& o) {
  Timer t;
  const json base = load(o, "stda_moons.json");
  std::vector<json> variants = {with(base, {"procedure=baseline", "baseline=source_only"})};
  std::vector<std::string> labels;
  for (const char* uda : {"mmd", "revgrad"}) {
    for (const char* kd : {"logits", "feature"}) {
      variants.push_back(with(base, {"procedure=stda", std::string("uda_method=") + uda,
                                     std::string("kd_mode=") + kd}));
      labels.push_back(std::string(uda) + "/" + kd);
    }
  }
  const std::vector<double> m = seed_means(o, variants);
  bool ok = true;
  std::ostringstream d;
  d << "source_only " << pct(m[0]);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double gain = m[i + 1] - m[0];
    ok = ok && gain >= 0.10;
    d << ", " << labels[i] << " " << pct(m[i + 1]) << " (" << fmt("%+.1f", 100.0 * gain) << " pp)";
  }
  const double secs = t.seconds();
  d << ", " << fmt("%.0f", secs) << " s";
  return {ok && secs < 1200.0, d.str()};
}

// ---- 6: MTDA ------------------------------------------------------------------------------

Outcome mtda(const Options& o) {
  Timer t;
  const json base = load(o, "mtda_moons.json");
  std::vector<json> variants = {with(base, {"procedure=mtda"}),
                                with(base, {"procedure=mixed_stda"})};
  const std::size_t n_targets = base.at("targets").size();
  for (std::size_t i = 0; i < n_targets; ++i) {
    json single = with(base, {"procedure=stda"});
    single["targets"] = json::array({base["targets"][i]});
    variants.push_back(single);
  }
  const std::vector<double> m = seed_means(o, variants);
  double per_target = 0.0;
  for (std::size_t i = 0; i < n_targets; ++i) per_target += m[2 + i] / static_cast<double>(n_targets);
  const bool beats_mixed = m[0] >= m[1];
  const bool close = std::abs(m[0] - per_target) <= 0.05;
  const double secs = t.seconds();
  std::ostringstream d;
  d << "mtda " << pct(m[0]) << ", mixed-target stda " << pct(m[1]) << ", per-target stda mean "
    << pct(per_target) << " (";
  for (std::size_t i = 0; i < n_targets; ++i) d << (i ? " " : "") << pct(m[2 + i]);
  d << "), gap " << fmt("%+.1f", 100.0 * (m[0] - per_target)) << " pp, " << fmt("%.0f", secs)
    << " s";
  return {beats_mixed && close && secs < 1200.0, d.str()};
}

// ---- 7: determinism ----------------------------------------------------------------------

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome determinism(const Options& o) {
  std::vector<json> cfgs = {with(load(o, "stda_moons.json"), {"uda_method=revgrad", "kd_mode=feature"}),
                            load(o, "mtda_moons.json")};
  std::size_t bytes = 0;
  for (std::size_t c = 0; c < cfgs.size(); ++c) {
    std::string first;
    for (int rep = 0; rep < 2; ++rep) {
      json j = with(cfgs[c], {"train.seed=3", "save_checkpoints=false"});
      j["out_dir"] = (o.work_dir / ("determinism_" + std::to_string(rep))).string();
      const kdda::ExperimentConfig cfg = kdda::parse_config(j);
      const fs::path dir = kdda::write_run(cfg, kdda::run_experiment(cfg));
      const std::string csv = read_bytes(dir / "metrics.csv");
      if (rep == 0) {
        first = csv;
      } else if (csv != first || csv.empty()) {
        return {false, "metrics.csv differs between repeated runs of " + cfg.run_name};
      }
      bytes += csv.size();
    }
  }
  return {true, "stda (revgrad/feature) and mtda runs repeated: metrics.csv byte-identical (" +
                    std::to_string(bytes / 2) + " bytes per repetition)"};
}

// ---- 8: target labels ----------------------------------------------------------------------

bool same_params(const kdda::Network& a, const kdda::Network& b) {
  const auto pa = a.parameters(), pb = b.parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (!std::equal(pa[i].data().begin(), pa[i].data().end(), pb[i].data().begin(),
                    pb[i].data().end())) {
      return false;
    }
  }
  return true;
}

bool same_outputs(const kdda::TrainResult& a, const kdda::TrainResult& b) {
  if (kdda::metrics_csv("x", a.metrics) != kdda::metrics_csv("x", b.metrics)) return false;
  if (!same_params(a.student, b.student) || a.teachers.size() != b.teachers.size()) return false;
  for (std::size_t i = 0; i < a.teachers.size(); ++i) {
    if (!same_params(a.teachers[i], b.teachers[i])) return false;
  }
  return true;
}

Outcome unlabeled_targets(const Options& o) {
  const kdda::ExperimentConfig cfg = kdda::parse_config(load(o, "stda_moons.json"));
  const kdda::PreparedData data = kdda::prepare_data(cfg);
  // Labeled twin of the training target: same generator, same split.
  kdda::TwoMoonsParams p = cfg.targets[0].moons;
  if (!cfg.targets[0].seed_given) p.seed = kdda::derive_seed(cfg.train.seed, "data." + p.domain_id);
  const kdda::DomainDataset labeled =
      kdda::split_dataset(kdda::gen_two_moons(p), cfg.eval_fraction,
                          kdda::derive_seed(cfg.train.seed, "split." + p.domain_id))
          .train;
  const kdda::DomainDataset stripped = labeled.without_labels();
  if (!labeled.labeled() ||
      !std::equal(stripped.features().begin(), stripped.features().end(),
                  data.target_train[0].features().begin(), data.target_train[0].features().end())) {
    return {false, "could not rebuild the labeled training target"};
  }
  const kdda::NetworkSpec ts = kdda::teacher_spec(cfg, data.input_dim, data.class_count);
  const kdda::NetworkSpec ss = kdda::student_spec(cfg, data.input_dim, data.class_count);
  std::size_t checked = 0;
  for (auto uda : {kdda::UdaMethod::kMmd, kdda::UdaMethod::kRevGrad}) {
    for (auto kd : {kdda::KdMode::kLogits, kdda::KdMode::kFeature}) {
      kdda::TrainConfig tc = cfg.train;
      tc.uda_method = uda;
      tc.kd_mode = kd;
      const auto a = kdda::train_stda(ts, ss, data.source_train, labeled, tc, data.eval);
      const auto b = kdda::train_stda(ts, ss, data.source_train, stripped, tc, data.eval);
      if (!same_outputs(a, b)) return {false, "stda outputs depend on target labels"};
      ++checked;
    }
  }
  for (auto ordering : {kdda::BaselineOrdering::kUdaThenKd, kdda::BaselineOrdering::kKdThenUda,
                        kdda::BaselineOrdering::kUdaOnly}) {
    const auto a = kdda::train_baseline(ordering, ts, ss, data.source_train, labeled, cfg.train, data.eval);
    const auto b = kdda::train_baseline(ordering, ts, ss, data.source_train, stripped, cfg.train, data.eval);
    if (!same_outputs(a, b)) return {false, kdda::to_string(ordering) + " depends on target labels"};
    ++checked;
  }
  return {true, std::to_string(checked) +
                    " trainings (4 stda variants, 3 baselines) bit-identical with and without "
                    "target labels"};
}

}  // namespace

int main(int argc, char** argv) {
  Options o;
  CLI::App app{"kdda acceptance criteria"};
  std::vector<int> only;
  app.add_option("--config-dir", o.config_dir, "directory with stda_moons.json and mtda_moons.json");
  app.add_option("--work-dir", o.work_dir, "scratch directory for run artifacts");
  app.add_option("--seeds", o.seeds, "seeds per comparison")->check(CLI::PositiveNumber);
  app.add_option("--threads", o.threads, "worker threads (default: DA_THREADS or all cores)");
  app.add_option("--only", only, "criterion numbers to run");
  CLI11_PARSE(app, argc, argv);
  o.only.insert(only.begin(), only.end());
  if (o.threads == 0) o.threads = kdda::sweep_thread_limit();

  const std::vector<std::pair<std::string, std::function<Outcome(const Options&)>>> criteria = {
      {"gradient suite", gradient_suite},
      {"loss oracles", loss_oracles},
      {"gradient reversal", gradient_reversal},
      {"ordering", ordering},
      {"stda gain", stda_gain},
      {"mtda", mtda},
      {"determinism", determinism},
      {"unlabeled targets", unlabeled_targets},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!o.only.empty() && !o.only.count(id)) continue;
    Outcome r;
    try {
      r = criteria[i].second(o);
    } catch (const std::exception& e) {
      r = {false, std::string("error: ") + e.what()};
    }
    failed += r.passed ? 0 : 1;
    std::cout << (r.passed ? "PASS" : "FAIL") << "  criterion " << id << " (" << criteria[i].first
              << "): " << r.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
