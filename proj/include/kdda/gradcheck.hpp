// Copyright 2026 The kdda Authors
// SPDX-License-Identifier: Apache-2.0

// Randomized central finite-difference checks of every differentiable
// primitive and loss.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "kdda/random.hpp"
#include "kdda/tensor.hpp"

namespace kdda {

using Objective = std::function<DiffTensor()>;

// Contribution factor * d(fn)/d(input) to the reference gradient of one input.
struct NumericTerm {
  double factor = 1.0;
  Objective fn;
};

// One random instance. Inputs are leaves that require grad; the objective
// reads them on every call, so perturbing their data changes its value.
struct GradcheckInstance {
  std::vector<DiffTensor> inputs;
  Objective objective;
  // Per input; empty means {1, objective}. Reversal layers use factor -lambda.
  std::vector<std::vector<NumericTerm>> numeric;
};

struct GradcheckOp {
  std::string name;
  std::function<GradcheckInstance(Rng&)> make;
  // Non-gradient checks (exact statistics) return their own error instead.
  std::function<double(Rng&)> exact;
};

struct GradcheckOptions {
  std::uint64_t seed = 0;
  std::size_t instances = 100;
  double step = 1e-5;
  double tolerance = 1e-4;
};

struct GradcheckOpReport {
  std::string op;
  std::string kind;  // "finite-difference" or "exact"
  std::size_t instances = 0;
  double worst_error = 0.0;
  bool passed = false;
};

struct GradcheckReport {
  std::vector<GradcheckOpReport> ops;
  double tolerance = 0.0;

  bool passed() const;
  std::vector<std::string> failures() const;
};

// ||a - n|| / max(||a||, ||n||, 1e-8).
double relative_error(std::span<const double> analytic, std::span<const double> numeric);

// Worst error over the inputs of one instance.
double check_instance(const GradcheckInstance& instance, double step);

GradcheckOpReport check_op(const GradcheckOp& op, const GradcheckOptions& options);

// Every tensor primitive and every loss function.
std::vector<GradcheckOp> default_gradcheck_ops();

// An op whose backward rule is deliberately wrong; used as a negative control.
GradcheckOp corrupted_gradcheck_op();

GradcheckReport run_gradcheck(const GradcheckOptions& options, std::span<const GradcheckOp> ops);

std::string format_report(const GradcheckReport& report);

}  // namespace kdda
