// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "conseq/matrix.hpp"

namespace conseq {

struct StepRule {
  enum class Kind { kSgd, kMomentum, kNesterov, kAdam };
  Kind kind = Kind::kSgd;
  double mu = 0.01;
  double beta = 0.0;  // momentum / nesterov
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_adam = 1e-8;

  static StepRule sgd(double mu) { return {Kind::kSgd, mu}; }
  static StepRule momentum(double mu, double beta) { return {Kind::kMomentum, mu, beta}; }
  static StepRule nesterov(double mu, double beta) { return {Kind::kNesterov, mu, beta}; }
  static StepRule adam(double mu, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
    return {Kind::kAdam, mu, 0.0, beta1, beta2, eps};
  }

  // Throws InvalidArgument for mu < 0, betas outside [0, 1) or eps_adam <= 0.
  void validate() const;
};

// Per-layer optimizer memory. Buffers are sized on the first step.
struct OptState {
  std::vector<Matrix> velocity;
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
  std::int64_t t = 0;
};

// Turns per-layer gradients into per-layer weight deltas and advances `state`.
//   sgd:      delta = -mu g
//   momentum: v <- beta v - mu g;  delta = v
//   nesterov: v <- beta v - mu g;  delta = beta v - mu g
//   adam:     bias-corrected moments, delta = -mu mhat / (sqrt(vhat) + eps)
// The gradient may already be consequentialism-transformed; the rule does not care.
std::vector<Matrix> step(const StepRule& rule, OptState& state, std::span<const Matrix> grads);

}  // namespace conseq
