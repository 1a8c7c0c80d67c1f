// Copyright 2026 The kdda Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>

namespace kdda {

// Exponential growth of the distillation weight from b to f over N_e epochs:
//   g = ln(f / b) / N_e,   beta_t = b * exp(g * t).
struct BetaSchedule {
  double start = 0.1;  // b
  double end = 0.8;    // f
  std::size_t epochs = 1;
  double growth = 0.0;  // g
};

double growth_rate(double start, double end, std::size_t epochs);
BetaSchedule make_beta_schedule(double start, double end, std::size_t epochs);

// t in [0, epochs]; fractional t supports per-batch updates. The result is
// clamped to [start, end] and beta_at(s, 0) == start exactly.
double beta_at(const BetaSchedule& schedule, double t);

enum class BetaUpdate { kPerEpoch, kPerBatch };

// Schedule position used for batch `batch` of `batches` in zero-based epoch.
double schedule_time(BetaUpdate mode, std::size_t epoch, std::size_t batch,
                     std::size_t batches);

}  // namespace kdda
