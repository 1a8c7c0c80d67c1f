// Copyright 2026 The kdda Authors
// SPDX-License-Identifier: Apache-2.0

// kdda: train, gradcheck, sweep and eval subcommands.

#include <cstdio>
#include <exception>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "kdda/errors.hpp"
#include "kdda/experiment.hpp"
#include "kdda/gradcheck.hpp"

namespace {

struct CommonFlags {
  std::string config;
  std::string out;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "experiment config (JSON)")->required();
  cmd->add_option("--out", f.out, "output directory (overrides out_dir)");
  cmd->add_option("--override", f.overrides, "KEY=VALUE, repeatable")->allow_extra_args(false);
  cmd->add_option("--seed", f.seed, "run seed (overrides train.seed)");
}

nlohmann::json resolved_json(const CommonFlags& f) {
  std::vector<std::string> overrides = f.overrides;
  if (!f.out.empty()) overrides.push_back("out_dir=\"" + f.out + "\"");
  if (f.seed) overrides.push_back("train.seed=" + std::to_string(*f.seed));
  nlohmann::json j = kdda::apply_overrides(kdda::read_json_file(f.config), overrides);
  kdda::parse_config(j);  // validate before any compute
  return j;
}

int cmd_train(const CommonFlags& f) {
  const kdda::ExperimentConfig cfg = kdda::parse_config(resolved_json(f));
  const kdda::RunOutcome outcome = kdda::run_experiment(cfg);
  const auto dir = kdda::write_run(cfg, outcome);
  std::cout << kdda::summary_json(cfg, outcome).dump(2) << "\n";
  std::cerr << "wrote " << dir.string() << "\n";
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, std::size_t instances, bool fault_fixture) {
  kdda::GradcheckOptions options;
  options.seed = seed;
  options.instances = instances;
  std::vector<kdda::GradcheckOp> ops = kdda::default_gradcheck_ops();
  if (fault_fixture) ops.push_back(kdda::corrupted_gradcheck_op());
  const kdda::GradcheckReport report = kdda::run_gradcheck(options, ops);
  std::cout << kdda::format_report(report);
  return report.passed() ? 0 : 1;
}

int cmd_sweep(const CommonFlags& f, const std::vector<std::string>& axis_flags) {
  std::vector<kdda::SweepAxis> axes;
  for (const std::string& a : axis_flags) axes.push_back(kdda::parse_sweep_axis(a));
  const kdda::SweepOutcome out =
      kdda::run_sweep(resolved_json(f), axes, kdda::sweep_thread_limit());
  for (const auto& d : out.run_dirs) std::cerr << "wrote " << d.string() << "\n";
  std::cout << "aggregate: " << out.aggregate_csv.string() << "\n";
  return 0;
}

int cmd_eval(const CommonFlags& f, const std::string& checkpoint) {
  const kdda::ExperimentConfig cfg = kdda::parse_config(resolved_json(f));
  const kdda::NetworkSpec spec = kdda::read_checkpoint_spec(checkpoint);
  const kdda::Network net{spec, kdda::load_state(checkpoint, spec)};
  const kdda::PreparedData data = kdda::prepare_data(cfg);
  nlohmann::json out = nlohmann::json::object();
  for (const kdda::DomainDataset& ds : data.eval.sets) out[ds.domain_id()] = kdda::evaluate(net, ds);
  std::cout << out.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint knowledge distillation and unsupervised domain adaptation"};
  app.require_subcommand(1);

  CommonFlags train_flags, sweep_flags, eval_flags;
  CLI::App* train = app.add_subcommand("train", "run one experiment");
  add_common(train, train_flags);

  std::uint64_t gc_seed = 0;
  std::size_t gc_instances = 100;
  bool gc_fault = false;
  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  gradcheck->add_option("--seed", gc_seed, "instance seed");
  gradcheck->add_option("--instances", gc_instances, "random instances per op")
      ->check(CLI::PositiveNumber);
  gradcheck->add_flag("--fault-fixture", gc_fault, "append an op with a wrong backward rule");

  std::vector<std::string> axes;
  CLI::App* sweep = app.add_subcommand("sweep", "cross product of config values");
  add_common(sweep, sweep_flags);
  sweep->add_option("--axis", axes, "KEY=V1,V2,..., repeatable")->required();

  std::string checkpoint;
  CLI::App* eval = app.add_subcommand("eval", "accuracy of a checkpoint on the eval splits");
  add_common(eval, eval_flags);
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) return cmd_train(train_flags);
    if (*gradcheck) return cmd_gradcheck(gc_seed, gc_instances, gc_fault);
    if (*sweep) return cmd_sweep(sweep_flags, axes);
    if (*eval) return cmd_eval(eval_flags, checkpoint);
  } catch (const kdda::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
