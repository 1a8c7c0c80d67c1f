// Copyright 2026 The kdda Authors
// SPDX-License-Identifier: Apache-2.0

#include "kdda/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace kdda {

double growth_rate(double start, double end, std::size_t epochs) {
  if (!(start > 0.0)) throw std::invalid_argument("beta schedule: start must be > 0");
  if (!(end >= start)) throw std::invalid_argument("beta schedule: end must be >= start");
  if (end > 1.0) throw std::invalid_argument("beta schedule: end must be <= 1");
  if (epochs < 1) throw std::invalid_argument("beta schedule: epochs must be >= 1");
  return std::log(end / start) / static_cast<double>(epochs);
}

BetaSchedule make_beta_schedule(double start, double end, std::size_t epochs) {
  return {start, end, epochs, growth_rate(start, end, epochs)};
}

double beta_at(const BetaSchedule& schedule, double t) {
  if (!(t >= 0.0) || t > static_cast<double>(schedule.epochs)) {
    throw std::out_of_range("beta_at: t=" + std::to_string(t) + " outside [0, " +
                            std::to_string(schedule.epochs) + "]");
  }
  const double beta = schedule.start * std::exp(schedule.growth * t);
  return std::clamp(beta, schedule.start, schedule.end);
}

double schedule_time(BetaUpdate mode, std::size_t epoch, std::size_t batch,
                     std::size_t batches) {
  const double e = static_cast<double>(epoch);
  if (mode == BetaUpdate::kPerEpoch || batches == 0) return e;
  return e + static_cast<double>(batch) / static_cast<double>(batches);
}

}  // namespace kdda
