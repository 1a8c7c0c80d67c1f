// Copyright 2026 The kdda Authors
// SPDX-License-Identifier: Apache-2.0

#include "kdda/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "kdda/errors.hpp"
#include "kdda/random.hpp"

namespace kdda {

using nlohmann::json;

namespace {

bool is_count(const json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

// Typed access to one JSON object that remembers which keys were read, so
// leftovers can be reported as unknown.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) && !j_.at(key).is_null();
  }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  std::string where(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  double number(const std::string& key, double fallback) {
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (!v.is_number()) throw ConfigError(where(key) + ": expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw ConfigError(where(key) + ": must be finite");
    return d;
  }

  std::uint64_t count(const std::string& key, std::uint64_t fallback) {
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (!is_count(v)) throw ConfigError(where(key) + ": expected a non-negative integer");
    return v.get<std::uint64_t>();
  }

  bool boolean(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (!v.is_boolean()) throw ConfigError(where(key) + ": expected true or false");
    return v.get<bool>();
  }

  std::string text(const std::string& key, const std::string& fallback) {
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (!v.is_string()) throw ConfigError(where(key) + ": expected a string");
    return v.get<std::string>();
  }

  std::vector<std::size_t> sizes(const std::string& key, std::vector<std::size_t> fallback) {
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (!v.is_array()) throw ConfigError(where(key) + ": expected an array of integers");
    std::vector<std::size_t> out;
    for (const json& e : v) {
      if (!is_count(e)) throw ConfigError(where(key) + ": expected non-negative integers");
      out.push_back(e.get<std::size_t>());
    }
    return out;
  }

  std::vector<double> numbers(const std::string& key, std::vector<double> fallback) {
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (!v.is_array()) throw ConfigError(where(key) + ": expected an array of numbers");
    std::vector<double> out;
    for (const json& e : v) {
      if (!e.is_number()) throw ConfigError(where(key) + ": expected numbers");
      out.push_back(e.get<double>());
    }
    return out;
  }

  template <typename E>
  E choice(const std::string& key, E fallback, const std::vector<std::pair<std::string, E>>& options) {
    if (!has(key)) return fallback;
    const std::string v = text(key, "");
    for (const auto& [name, value] : options) {
      if (name == v) return value;
    }
    std::string allowed;
    for (const auto& [name, value] : options) allowed += (allowed.empty() ? "" : ", ") + name;
    throw ConfigError(where(key) + ": '" + v + "' is not one of {" + allowed + "}");
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(where(key) + ": unknown key");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename E>
std::string name_of(E value, const std::vector<std::pair<std::string, E>>& options) {
  for (const auto& [name, v] : options) {
    if (v == value) return name;
  }
  return "unknown";
}

const std::vector<std::pair<std::string, Procedure>> kProcedures = {
    {"stda", Procedure::kStda},
    {"mtda", Procedure::kMtda},
    {"mixed_stda", Procedure::kMixedStda},
    {"baseline", Procedure::kBaseline}};
const std::vector<std::pair<std::string, BaselineOrdering>> kOrderings = {
    {"uda_then_kd", BaselineOrdering::kUdaThenKd},
    {"kd_then_uda", BaselineOrdering::kKdThenUda},
    {"uda_only", BaselineOrdering::kUdaOnly},
    {"source_only", BaselineOrdering::kSourceOnly}};
const std::vector<std::pair<std::string, BetaUpdate>> kBetaUpdates = {
    {"per_epoch", BetaUpdate::kPerEpoch}, {"per_batch", BetaUpdate::kPerBatch}};
const std::vector<std::pair<std::string, UdaMethod>> kUdaMethods = {
    {"mmd", UdaMethod::kMmd}, {"revgrad", UdaMethod::kRevGrad}};
const std::vector<std::pair<std::string, KdMode>> kKdModes = {
    {"logits", KdMode::kLogits}, {"feature", KdMode::kFeature}};
const std::vector<std::pair<std::string, SoftmaxConvention>> kConventions = {
    {"divide", SoftmaxConvention::kStandardDivide}, {"multiply", SoftmaxConvention::kMultiply}};
const std::vector<std::pair<std::string, KlDirection>> kDirections = {
    {"teacher_student", KlDirection::kTeacherStudent},
    {"student_teacher", KlDirection::kStudentTeacher}};
const std::vector<std::pair<std::string, MarginMode>> kMarginModes = {
    {"count_weighted", MarginMode::kCountWeighted}, {"momentum", MarginMode::kMomentum}};
const std::vector<std::pair<std::string, KernelConfig::Strategy>> kKernelStrategies = {
    {"median", KernelConfig::Strategy::kMedianHeuristic}, {"fixed", KernelConfig::Strategy::kFixed}};

SgdConfig parse_sgd(const json& j, const std::string& path, SgdConfig fallback) {
  Section s(j, path);
  SgdConfig c;
  c.learning_rate = s.number("learning_rate", fallback.learning_rate);
  c.weight_decay = s.number("weight_decay", fallback.weight_decay);
  c.momentum = s.number("momentum", fallback.momentum);
  s.finish();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return c;
}

json sgd_json(const SgdConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"weight_decay", c.weight_decay}, {"momentum", c.momentum}};
}

TrainConfig parse_train(const json& j) {
  Section s(j, "train");
  TrainConfig c;
  c.epochs = s.count("epochs", c.epochs);
  c.batch_size = s.count("batch_size", c.batch_size);
  if (s.has("alpha")) {
    c.weights.alpha_dc = c.weights.alpha_ce = s.number("alpha", 0.0);
  }
  c.weights.gamma = s.number("gamma", c.weights.gamma);
  c.weights.alpha_dc = s.number("alpha_dc", c.weights.alpha_dc);
  c.weights.alpha_ce = s.number("alpha_ce", c.weights.alpha_ce);
  c.weights.tau = s.number("tau", c.weights.tau);
  c.weights.grl_lambda = s.number("grl_lambda", c.weights.grl_lambda);
  c.beta_start = s.number("beta_start", c.beta_start);
  c.beta_end = s.number("beta_end", c.beta_end);
  c.beta_update = s.choice("beta_update", c.beta_update, kBetaUpdates);
  if (s.has("beta_fixed")) c.beta_fixed = s.number("beta_fixed", 0.0);
  c.uda_method = s.choice("uda_method", c.uda_method, kUdaMethods);
  c.kd_mode = s.choice("kd_mode", c.kd_mode, kKdModes);
  c.feature_kd_weight = s.number("feature_kd_weight", c.feature_kd_weight);
  c.softmax = s.choice("softmax", c.softmax, kConventions);
  c.kl_direction = s.choice("kl_direction", c.kl_direction, kDirections);
  if (s.has("kernel")) {
    Section k(s.raw("kernel"), "train.kernel");
    c.kernel.strategy = k.choice("strategy", c.kernel.strategy, kKernelStrategies);
    c.kernel.values = k.numbers("values", c.kernel.values);
    k.finish();
  }
  c.margin_mode = s.choice("margin_mode", c.margin_mode, kMarginModes);
  c.margin_momentum = s.number("margin_momentum", c.margin_momentum);
  if (s.has("uda_optimizer")) {
    c.uda_optimizer = parse_sgd(s.raw("uda_optimizer"), "train.uda_optimizer", c.uda_optimizer);
  }
  if (s.has("kd_optimizer")) {
    c.kd_optimizer = parse_sgd(s.raw("kd_optimizer"), "train.kd_optimizer", c.kd_optimizer);
  }
  c.domain_classifier_hidden = s.sizes("domain_classifier_hidden", c.domain_classifier_hidden);
  c.seed = s.count("seed", c.seed);
  c.eval_every = s.count("eval_every", c.eval_every);
  s.finish();
  c.validate();
  return c;
}

json train_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"gamma", c.weights.gamma},
          {"alpha_dc", c.weights.alpha_dc},
          {"alpha_ce", c.weights.alpha_ce},
          {"tau", c.weights.tau},
          {"grl_lambda", c.weights.grl_lambda},
          {"beta_start", c.beta_start},
          {"beta_end", c.beta_end},
          {"beta_update", name_of(c.beta_update, kBetaUpdates)},
          {"beta_fixed", c.beta_fixed ? json(*c.beta_fixed) : json(nullptr)},
          {"uda_method", name_of(c.uda_method, kUdaMethods)},
          {"kd_mode", name_of(c.kd_mode, kKdModes)},
          {"feature_kd_weight", c.feature_kd_weight},
          {"softmax", name_of(c.softmax, kConventions)},
          {"kl_direction", name_of(c.kl_direction, kDirections)},
          {"kernel",
           {{"strategy", name_of(c.kernel.strategy, kKernelStrategies)}, {"values", c.kernel.values}}},
          {"margin_mode", name_of(c.margin_mode, kMarginModes)},
          {"margin_momentum", c.margin_momentum},
          {"uda_optimizer", sgd_json(c.uda_optimizer)},
          {"kd_optimizer", sgd_json(c.kd_optimizer)},
          {"domain_classifier_hidden", c.domain_classifier_hidden},
          {"seed", c.seed},
          {"eval_every", c.eval_every}};
}

std::array<double, 2> pair_of(Section& s, const std::string& key, std::array<double, 2> fallback) {
  const std::vector<double> v = s.numbers(key, {fallback[0], fallback[1]});
  if (v.size() != 2) throw ConfigError(s.where(key) + ": expected two numbers");
  return {v[0], v[1]};
}

DomainSource parse_domain(const json& j, const std::string& path, const std::string& default_id) {
  Section s(j, path);
  DomainSource d;
  d.kind = s.text("kind", d.kind);
  if (d.kind == "two_moons") {
    TwoMoonsParams& p = d.moons;
    p.n = s.count("n", p.n);
    p.noise_sigma = s.number("noise", p.noise_sigma);
    p.rotation_deg = s.number("rotation_deg", p.rotation_deg);
    p.rotation_center = pair_of(s, "rotation_center", p.rotation_center);
    p.translation = pair_of(s, "translation", p.translation);
    p.label_flip_frac = s.number("label_flip_frac", p.label_flip_frac);
    d.seed_given = s.has("seed");
    p.seed = s.count("seed", 0);
    p.domain_id = s.text("domain_id", default_id);
    if (p.n < 2) throw ConfigError(s.where("n") + ": must be >= 2");
    if (p.noise_sigma < 0) throw ConfigError(s.where("noise") + ": must be >= 0");
    if (p.label_flip_frac < 0 || p.label_flip_frac > 1) {
      throw ConfigError(s.where("label_flip_frac") + ": must lie in [0, 1]");
    }
  } else if (d.kind == "blobs") {
    BlobsParams& p = d.blobs;
    p.n = s.count("n", p.n);
    p.sigma = s.number("sigma", p.sigma);
    if (!s.has("centers")) throw ConfigError(s.where("centers") + ": required for blobs");
    const json& centers = s.raw("centers");
    if (!centers.is_array() || centers.empty()) throw ConfigError(s.where("centers") + ": expected a nonempty array");
    for (const json& c : centers) {
      if (!c.is_array() || c.empty()) throw ConfigError(s.where("centers") + ": each center is a nonempty array");
      std::vector<double> row;
      for (const json& v : c) {
        if (!v.is_number()) throw ConfigError(s.where("centers") + ": expected numbers");
        row.push_back(v.get<double>());
      }
      if (!p.centers.empty() && row.size() != p.centers[0].size()) {
        throw ConfigError(s.where("centers") + ": centers differ in dimension");
      }
      p.centers.push_back(std::move(row));
    }
    d.seed_given = s.has("seed");
    p.seed = s.count("seed", 0);
    p.domain_id = s.text("domain_id", default_id);
    if (p.n < p.centers.size()) throw ConfigError(s.where("n") + ": fewer rows than classes");
    if (p.sigma < 0) throw ConfigError(s.where("sigma") + ": must be >= 0");
  } else if (d.kind == "csv") {
    if (!s.has("path")) throw ConfigError(s.where("path") + ": required for csv");
    d.csv_path = s.text("path", "");
    if (s.has("domain")) d.csv.domain = s.text("domain", "");
    if (s.has("class_count")) d.csv.class_count = s.count("class_count", 0);
  } else {
    throw ConfigError(s.where("kind") + ": '" + d.kind + "' is not one of {two_moons, blobs, csv}");
  }
  s.finish();
  return d;
}

json domain_json(const DomainSource& d) {
  json j = {{"kind", d.kind}};
  if (d.kind == "two_moons") {
    const TwoMoonsParams& p = d.moons;
    j.update({{"n", p.n},
              {"noise", p.noise_sigma},
              {"rotation_deg", p.rotation_deg},
              {"rotation_center", p.rotation_center},
              {"translation", p.translation},
              {"label_flip_frac", p.label_flip_frac},
              {"domain_id", p.domain_id}});
    if (d.seed_given) j["seed"] = p.seed;
  } else if (d.kind == "blobs") {
    const BlobsParams& p = d.blobs;
    j.update({{"n", p.n}, {"centers", p.centers}, {"sigma", p.sigma}, {"domain_id", p.domain_id}});
    if (d.seed_given) j["seed"] = p.seed;
  } else {
    j["path"] = d.csv_path.string();
    if (d.csv.domain) j["domain"] = *d.csv.domain;
    if (d.csv.class_count) j["class_count"] = *d.csv.class_count;
  }
  return j;
}

std::string domain_label(const DomainSource& d) {
  if (d.kind == "two_moons") return d.moons.domain_id;
  if (d.kind == "blobs") return d.blobs.domain_id;
  return d.csv.domain.value_or(d.csv_path.stem().string());
}

DomainDataset build_domain(const DomainSource& d, std::uint64_t run_seed) {
  if (d.kind == "two_moons") {
    TwoMoonsParams p = d.moons;
    if (!d.seed_given) p.seed = derive_seed(run_seed, "data." + p.domain_id);
    return gen_two_moons(p);
  }
  if (d.kind == "blobs") {
    BlobsParams p = d.blobs;
    if (!d.seed_given) p.seed = derive_seed(run_seed, "data." + p.domain_id);
    return gen_blobs(p);
  }
  return load_csv(d.csv_path, d.csv);
}

std::vector<std::string> split_path(const std::string& key) {
  std::vector<std::string> parts;
  std::string part;
  std::istringstream in(key);
  while (std::getline(in, part, '.')) {
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty segment");
    parts.push_back(part);
  }
  if (parts.empty()) throw ConfigError("empty override key");
  return parts;
}

std::vector<std::string> resolve_key(const std::string& key) {
  if (key.find('.') != std::string::npos) return split_path(key);
  const json defaults = to_json(ExperimentConfig{});
  if (defaults.contains(key) || key == "source" || key == "targets") return {key};
  if (defaults.at("train").contains(key) || key == "alpha") return {"train", key};
  throw ConfigError("override key '" + key + "' matches no top-level or train setting");
}

void set_path(json& j, const std::vector<std::string>& path, const json& value,
              const std::string& key) {
  json* node = &j;
  for (std::size_t i = 0; i < path.size(); ++i) {
    const std::string& part = path[i];
    const bool last = i + 1 == path.size();
    if (node->is_array()) {
      std::size_t idx = 0;
      try {
        std::size_t used = 0;
        idx = std::stoul(part, &used);
        if (used != part.size()) throw std::invalid_argument(part);
      } catch (const std::exception&) {
        throw ConfigError("override key '" + key + "': '" + part + "' is not an array index");
      }
      if (idx >= node->size()) {
        throw ConfigError("override key '" + key + "': index " + part + " out of range");
      }
      node = &(*node)[idx];
    } else {
      if (node->is_null()) *node = json::object();
      if (!node->is_object()) {
        throw ConfigError("override key '" + key + "': '" + part + "' is not inside an object");
      }
      node = &(*node)[part];
    }
    if (last) *node = value;
  }
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
}

std::string csv_field(std::string s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string value_label(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

std::string sanitize(std::string s) {
  for (char& c : s) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.' || c == '=')) c = '_';
  }
  return s;
}

}  // namespace

// ---- configuration -----------------------------------------------------------------

ExperimentConfig parse_config(const json& j) {
  Section s(j, "");
  ExperimentConfig c;
  c.run_name = s.text("run_name", c.run_name);
  if (c.run_name.empty() || c.run_name.find('/') != std::string::npos) {
    throw ConfigError("run_name: must be nonempty and contain no '/'");
  }
  c.out_dir = s.text("out_dir", c.out_dir.string());
  c.procedure = s.choice("procedure", c.procedure, kProcedures);
  c.baseline = s.choice("baseline", c.baseline, kOrderings);
  c.teacher_hidden = s.sizes("teacher_hidden", c.teacher_hidden);
  c.student_hidden = s.sizes("student_hidden", c.student_hidden);
  c.eval_fraction = s.number("eval_fraction", c.eval_fraction);
  if (!(c.eval_fraction > 0.0 && c.eval_fraction < 1.0)) {
    throw ConfigError("eval_fraction: must lie in (0, 1)");
  }
  c.save_checkpoints = s.boolean("save_checkpoints", c.save_checkpoints);
  c.train = s.has("train") ? parse_train(s.raw("train")) : TrainConfig{};
  if (s.has("source")) c.source = parse_domain(s.raw("source"), "source", "source");
  if (!s.has("targets")) throw ConfigError("targets: at least one target domain is required");
  const json& targets = s.raw("targets");
  if (!targets.is_array() || targets.empty()) {
    throw ConfigError("targets: expected a nonempty array");
  }
  for (std::size_t i = 0; i < targets.size(); ++i) {
    c.targets.push_back(parse_domain(targets[i], "targets." + std::to_string(i),
                                     "target_" + std::to_string(i)));
  }
  s.finish();

  for (std::size_t h : c.teacher_hidden) {
    if (h == 0) throw ConfigError("teacher_hidden: widths must be positive");
  }
  for (std::size_t h : c.student_hidden) {
    if (h == 0) throw ConfigError("student_hidden: widths must be positive");
  }
  if (c.train.kd_mode == KdMode::kFeature && (c.teacher_hidden.empty() || c.student_hidden.empty())) {
    throw ConfigError("train.kd_mode: feature distillation needs hidden layers on both networks");
  }
  if ((c.procedure == Procedure::kStda || c.procedure == Procedure::kBaseline) &&
      c.targets.size() != 1) {
    throw ConfigError("targets: procedure '" + name_of(c.procedure, kProcedures) +
                      "' takes exactly one target, got " + std::to_string(c.targets.size()));
  }
  std::set<std::string> ids = {domain_label(c.source)};
  for (const DomainSource& t : c.targets) {
    if (!ids.insert(domain_label(t)).second) {
      throw ConfigError("targets: duplicate domain id '" + domain_label(t) + "'");
    }
  }
  return c;
}

json to_json(const ExperimentConfig& c) {
  json targets = json::array();
  for (const DomainSource& t : c.targets) targets.push_back(domain_json(t));
  return {{"run_name", c.run_name},
          {"out_dir", c.out_dir.string()},
          {"procedure", name_of(c.procedure, kProcedures)},
          {"baseline", name_of(c.baseline, kOrderings)},
          {"teacher_hidden", c.teacher_hidden},
          {"student_hidden", c.student_hidden},
          {"eval_fraction", c.eval_fraction},
          {"save_checkpoints", c.save_checkpoints},
          {"source", domain_json(c.source)},
          {"targets", targets},
          {"train", train_json(c.train)}};
}

json parse_override_value(const std::string& text) {
  json v = json::parse(text, nullptr, false);
  if (v.is_discarded()) return json(text);
  return v;
}

json apply_overrides(json j, const std::vector<std::string>& overrides) {
  for (const std::string& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("override '" + o + "' is not of the form key=value");
    }
    const std::string key = o.substr(0, eq);
    set_path(j, resolve_key(key), parse_override_value(o.substr(eq + 1)), key);
  }
  return j;
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config file " + path.string() + " is not valid JSON");
  return j;
}

ExperimentConfig load_config(const std::filesystem::path& path,
                             const std::vector<std::string>& overrides) {
  return parse_config(apply_overrides(read_json_file(path), overrides));
}

NetworkSpec teacher_spec(const ExperimentConfig& cfg, std::size_t input_dim, std::size_t classes) {
  return make_mlp_spec(input_dim, cfg.teacher_hidden, classes);
}

NetworkSpec student_spec(const ExperimentConfig& cfg, std::size_t input_dim, std::size_t classes) {
  return make_mlp_spec(input_dim, cfg.student_hidden, classes);
}

// ---- execution -------------------------------------------------------------------------

PreparedData prepare_data(const ExperimentConfig& cfg) {
  const std::uint64_t seed = cfg.train.seed;
  PreparedData out;
  const DomainDataset source = build_domain(cfg.source, seed);
  if (!source.labeled()) throw ConfigError("source: dataset must be labeled");
  const Split src = split_dataset(source, cfg.eval_fraction,
                                  derive_seed(seed, "split." + source.domain_id()));
  out.source_train = src.train;
  out.eval.source_domain = source.domain_id();
  out.eval.sets.push_back(src.eval);
  out.input_dim = source.dim();
  out.class_count = source.class_count();
  if (out.class_count < 2) throw ConfigError("source: need at least two classes");
  for (const DomainSource& spec : cfg.targets) {
    const DomainDataset target = build_domain(spec, seed);
    if (target.dim() != source.dim()) {
      throw ConfigError("target '" + target.domain_id() + "': feature dim " +
                        std::to_string(target.dim()) + " differs from source " +
                        std::to_string(source.dim()));
    }
    const Split t = split_dataset(target, cfg.eval_fraction,
                                  derive_seed(seed, "split." + target.domain_id()));
    out.target_train.push_back(t.train.without_labels());
    if (t.eval.labeled()) {
      if (t.eval.class_count() > out.class_count) {
        throw ConfigError("target '" + target.domain_id() + "': labels exceed source classes");
      }
      out.eval.sets.push_back(t.eval);
    }
  }
  return out;
}

RunOutcome run_experiment(const ExperimentConfig& cfg) {
  const PreparedData data = prepare_data(cfg);
  const NetworkSpec tspec = teacher_spec(cfg, data.input_dim, data.class_count);
  const NetworkSpec sspec = student_spec(cfg, data.input_dim, data.class_count);
  RunOutcome out;
  switch (cfg.procedure) {
    case Procedure::kStda:
      out.result = train_stda(tspec, sspec, data.source_train, data.target_train[0], cfg.train, data.eval);
      break;
    case Procedure::kMtda: {
      const std::vector<NetworkSpec> specs(data.target_train.size(), tspec);
      out.result = train_mtda(specs, sspec, data.source_train, data.target_train, cfg.train, data.eval);
      break;
    }
    case Procedure::kMixedStda: {
      const DomainDataset mixed = merge_datasets(data.target_train, "mixed_targets");
      out.result = train_stda(tspec, sspec, data.source_train, mixed, cfg.train, data.eval);
      break;
    }
    case Procedure::kBaseline:
      out.result = train_baseline(cfg.baseline, tspec, sspec, data.source_train,
                                  data.target_train[0], cfg.train, data.eval);
      break;
  }
  for (const MetricRecord& r : out.result.metrics) out.final_accuracy[r.model][r.domain] = r.accuracy;
  const auto student = out.final_accuracy.find("student");
  if (student != out.final_accuracy.end()) {
    const auto mean = student->second.find("target_mean");
    if (mean != student->second.end()) out.student_target_mean = mean->second;
  }
  return out;
}

std::string metrics_csv(const std::string& run_name, const std::vector<MetricRecord>& metrics,
                        bool header) {
  std::string out = header ? "run,epoch,model,domain,metric,value\n" : "";
  const std::string run = csv_field(run_name);
  for (const MetricRecord& r : metrics) {
    const std::string prefix = run + "," + std::to_string(r.epoch) + "," + csv_field(r.model) + "," +
                               csv_field(r.domain) + ",";
    out += prefix + "accuracy," + format_double(r.accuracy) + "\n";
    for (const auto& [name, value] : r.losses) {
      out += prefix + csv_field("loss." + name) + "," + format_double(value) + "\n";
    }
  }
  return out;
}

json summary_json(const ExperimentConfig& cfg, const RunOutcome& outcome) {
  json final_acc = json::object();
  for (const auto& [model, domains] : outcome.final_accuracy) {
    for (const auto& [domain, acc] : domains) final_acc[model][domain] = acc;
  }
  std::size_t last_epoch = 0;
  for (const MetricRecord& r : outcome.result.metrics) last_epoch = std::max(last_epoch, r.epoch);
  return {{"run_name", cfg.run_name},
          {"procedure", name_of(cfg.procedure, kProcedures)},
          {"seed", cfg.train.seed},
          {"last_evaluated_epoch", last_epoch},
          {"final_accuracy", final_acc},
          {"student_target_mean",
           outcome.student_target_mean ? json(*outcome.student_target_mean) : json(nullptr)},
          {"teacher_parameters", outcome.result.teachers.empty()
                                     ? json(nullptr)
                                     : json(outcome.result.teachers[0].spec.parameter_count())},
          {"student_parameters", outcome.result.student.spec.layers.empty()
                                     ? json(nullptr)
                                     : json(outcome.result.student.spec.parameter_count())}};
}

std::filesystem::path write_run(const ExperimentConfig& cfg, const RunOutcome& outcome) {
  const std::filesystem::path dir = cfg.out_dir / cfg.run_name;
  std::filesystem::create_directories(dir);
  write_text(dir / "config.resolved.json", to_json(cfg).dump(2) + "\n");
  write_text(dir / "metrics.csv", metrics_csv(cfg.run_name, outcome.result.metrics));
  write_text(dir / "summary.json", summary_json(cfg, outcome).dump(2) + "\n");
  if (cfg.save_checkpoints) {
    const std::filesystem::path ckpt = dir / "checkpoints";
    std::filesystem::create_directories(ckpt);
    const TrainResult& r = outcome.result;
    if (!r.student.spec.layers.empty()) save_state(r.student.state, r.student.spec, ckpt / "student.ckpt");
    for (std::size_t i = 0; i < r.teachers.size(); ++i) {
      const std::string name = r.teachers.size() == 1 ? "teacher" : "teacher_" + std::to_string(i);
      save_state(r.teachers[i].state, r.teachers[i].spec, ckpt / (name + ".ckpt"));
    }
  }
  return dir;
}

// ---- sweeps ------------------------------------------------------------------------------

SweepAxis parse_sweep_axis(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("sweep axis '" + text + "' is not of the form key=v1,v2,...");
  }
  SweepAxis axis;
  axis.key = text.substr(0, eq);
  std::istringstream in(text.substr(eq + 1));
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) throw ConfigError("sweep axis '" + axis.key + "': empty value");
    axis.values.push_back(parse_override_value(item));
  }
  if (axis.values.empty()) throw ConfigError("sweep axis '" + axis.key + "': empty value list");
  return axis;
}

std::size_t sweep_thread_limit() {
  if (const char* env = std::getenv("DA_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

SweepOutcome run_sweep(const json& base, const std::vector<SweepAxis>& axes, std::size_t threads) {
  if (axes.empty()) throw ConfigError("sweep: at least one --axis is required");
  for (const SweepAxis& a : axes) {
    if (a.values.empty()) throw ConfigError("sweep axis '" + a.key + "': empty value list");
  }
  const ExperimentConfig base_cfg = parse_config(base);

  struct Job {
    ExperimentConfig cfg;
    std::map<std::string, std::string> group;
  };
  std::vector<Job> jobs;
  std::size_t total = 1;
  for (const SweepAxis& a : axes) total *= a.values.size();
  for (std::size_t combo = 0; combo < total; ++combo) {
    std::vector<std::size_t> pos(axes.size());
    for (std::size_t a = axes.size(), rem = combo; a-- > 0;) {
      pos[a] = rem % axes[a].values.size();
      rem /= axes[a].values.size();
    }
    std::map<std::string, std::string> group;
    std::string name;
    json j = base;
    for (std::size_t a = 0; a < axes.size(); ++a) {
      const json& v = axes[a].values[pos[a]];
      const std::vector<std::string> path = resolve_key(axes[a].key);
      set_path(j, path, v, axes[a].key);
      const std::string label = value_label(v);
      name += (name.empty() ? "" : "__") + sanitize(axes[a].key + "=" + label);
      if (path != std::vector<std::string>{"train", "seed"}) group[axes[a].key] = label;
    }
    j["run_name"] = name;
    j["out_dir"] = (base_cfg.out_dir / base_cfg.run_name).string();
    jobs.push_back({parse_config(j), group});
  }

  std::vector<RunOutcome> outcomes(jobs.size());
  std::vector<std::filesystem::path> dirs(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        outcomes[i] = run_experiment(jobs[i].cfg);
        dirs[i] = write_run(jobs[i].cfg, outcomes[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::clamp<std::size_t>(threads, 1, jobs.size());
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (std::thread& t : pool) t.join();
  for (const std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  // Aggregate final accuracies over runs sharing all non-seed axis values.
  std::map<std::tuple<std::map<std::string, std::string>, std::string, std::string>, std::vector<double>>
      groups;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    for (const auto& [model, domains] : outcomes[i].final_accuracy) {
      for (const auto& [domain, acc] : domains) groups[{jobs[i].group, model, domain}].push_back(acc);
    }
  }
  SweepOutcome out;
  out.run_dirs = dirs;
  std::vector<std::string> group_keys;
  for (const SweepAxis& a : axes) {
    if (resolve_key(a.key) != std::vector<std::string>{"train", "seed"}) group_keys.push_back(a.key);
  }
  std::string csv;
  for (const std::string& k : group_keys) csv += csv_field(k) + ",";
  csv += "model,domain,metric,mean,std,n\n";
  for (const auto& [key, accs] : groups) {
    const auto& [group, model, domain] = key;
    SweepRow row{group, model, domain, 0.0, 0.0, accs.size()};
    for (double a : accs) row.mean += a;
    row.mean /= static_cast<double>(accs.size());
    if (accs.size() > 1) {
      double ss = 0.0;
      for (double a : accs) ss += (a - row.mean) * (a - row.mean);
      row.stddev = std::sqrt(ss / static_cast<double>(accs.size() - 1));
    }
    for (const std::string& k : group_keys) csv += csv_field(group.at(k)) + ",";
    csv += csv_field(model) + "," + csv_field(domain) + ",accuracy," + format_double(row.mean) + "," +
           format_double(row.stddev) + "," + std::to_string(row.runs) + "\n";
    out.rows.push_back(std::move(row));
  }
  const std::filesystem::path dir = base_cfg.out_dir / base_cfg.run_name;
  std::filesystem::create_directories(dir);
  out.aggregate_csv = dir / "aggregate.csv";
  write_text(out.aggregate_csv, csv);
  return out;
}

}  // namespace kdda
