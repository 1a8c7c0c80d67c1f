// Copyright 2026 The kdda Authors
// SPDX-License-Identifier: Apache-2.0

// Experiment configuration, execution and artifact writing shared by the CLI
// and the acceptance runner.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "kdda/data.hpp"
#include "kdda/trainers.hpp"

namespace kdda {

enum class Procedure {
  kStda,       // one teacher, one target
  kMtda,       // one teacher per target
  kMixedStda,  // one teacher on the union of all targets
  kBaseline,   // a sequential ordering, see BaselineOrdering
};

struct DomainSource {
  std::string kind = "two_moons";  // two_moons | blobs | csv
  TwoMoonsParams moons;
  BlobsParams blobs;
  std::filesystem::path csv_path;
  CsvSchema csv;
  bool seed_given = false;  // otherwise derived from the run seed and domain id
};

struct ExperimentConfig {
  std::string run_name = "run";
  std::filesystem::path out_dir = "runs";
  Procedure procedure = Procedure::kStda;
  BaselineOrdering baseline = BaselineOrdering::kSourceOnly;
  std::vector<std::size_t> teacher_hidden = {128, 128, 64};
  std::vector<std::size_t> student_hidden = {32, 16};
  DomainSource source;
  std::vector<DomainSource> targets;
  double eval_fraction = 0.2;
  bool save_checkpoints = true;
  TrainConfig train;
};

// Throws ConfigError naming the offending key; unknown keys are rejected.
ExperimentConfig parse_config(const nlohmann::json& j);
// Fully resolved form; parse_config(to_json(c)) reproduces c.
nlohmann::json to_json(const ExperimentConfig& cfg);

// Applies "key=value" overrides. Keys are dotted paths ("train.epochs",
// "targets.0.rotation_deg"); a bare key resolves to the top level or, failing
// that, to the train section. Values are parsed as JSON, falling back to a
// string.
nlohmann::json apply_overrides(nlohmann::json j, const std::vector<std::string>& overrides);
nlohmann::json parse_override_value(const std::string& text);

nlohmann::json read_json_file(const std::filesystem::path& path);
ExperimentConfig load_config(const std::filesystem::path& path,
                             const std::vector<std::string>& overrides = {});

NetworkSpec teacher_spec(const ExperimentConfig& cfg, std::size_t input_dim, std::size_t classes);
NetworkSpec student_spec(const ExperimentConfig& cfg, std::size_t input_dim, std::size_t classes);

// Train/eval splits of every domain. Training targets have their labels
// removed; eval splits keep them.
struct PreparedData {
  DomainDataset source_train;
  std::vector<DomainDataset> target_train;
  EvalSets eval;
  std::size_t input_dim = 0;
  std::size_t class_count = 0;
};

PreparedData prepare_data(const ExperimentConfig& cfg);

struct RunOutcome {
  TrainResult result;
  // Accuracy of the last evaluated epoch: model -> domain -> accuracy.
  std::map<std::string, std::map<std::string, double>> final_accuracy;
  std::optional<double> student_target_mean;
};

RunOutcome run_experiment(const ExperimentConfig& cfg);

// Rows "run,epoch,model,domain,metric,value" with values printed as %.17g.
std::string metrics_csv(const std::string& run_name, const std::vector<MetricRecord>& metrics,
                        bool header = true);
nlohmann::json summary_json(const ExperimentConfig& cfg, const RunOutcome& outcome);

// Writes metrics.csv, summary.json, config.resolved.json and checkpoints into
// out_dir / run_name; returns that directory.
std::filesystem::path write_run(const ExperimentConfig& cfg, const RunOutcome& outcome);

struct SweepAxis {
  std::string key;
  std::vector<nlohmann::json> values;
};

// "key=v1,v2,..."; an empty value list is an error.
SweepAxis parse_sweep_axis(const std::string& text);

struct SweepRow {
  std::map<std::string, std::string> group;  // axis values except the seed axis
  std::string model;
  std::string domain;
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation, 0 for a single run
  std::size_t runs = 0;
};

struct SweepOutcome {
  std::vector<std::filesystem::path> run_dirs;
  std::vector<SweepRow> rows;
  std::filesystem::path aggregate_csv;
};

// Runs the cross product of the axes over the base config. Runs execute on up
// to `threads` worker threads and the aggregate groups runs that differ only
// in train.seed.
SweepOutcome run_sweep(const nlohmann::json& base, const std::vector<SweepAxis>& axes,
                       std::size_t threads);

// DA_THREADS when set and positive, otherwise the hardware concurrency.
std::size_t sweep_thread_limit();

}  // namespace kdda
