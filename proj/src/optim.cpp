// SPDX-License-Identifier: Apache-2.0
#include "conseq/optim.hpp"

#include <cmath>
#include <string>

#include "conseq/error.hpp"

namespace conseq {

namespace {

void ensure_buffers(std::vector<Matrix>& buffers, std::span<const Matrix> grads) {
  if (buffers.empty()) {
    for (const Matrix& g : grads) buffers.emplace_back(g.rows(), g.cols());
    return;
  }
  if (buffers.size() != grads.size()) {
    throw ShapeMismatch("optimizer state tracks " + std::to_string(buffers.size()) +
                        " layers, got " + std::to_string(grads.size()) + " gradients");
  }
  for (std::size_t l = 0; l < grads.size(); ++l) {
    if (buffers[l].rows() != grads[l].rows() || buffers[l].cols() != grads[l].cols()) {
      throw ShapeMismatch("layer " + std::to_string(l) + " gradient " + grads[l].shape_string() +
                          " vs state " + buffers[l].shape_string());
    }
  }
}

bool unit_interval(double b) { return b >= 0.0 && b < 1.0; }

}  // namespace

void StepRule::validate() const {
  if (!(mu >= 0.0) || !std::isfinite(mu)) throw InvalidArgument("mu must be non-negative");
  if ((kind == Kind::kMomentum || kind == Kind::kNesterov) && !unit_interval(beta)) {
    throw InvalidArgument("momentum beta must lie in [0, 1)");
  }
  if (kind == Kind::kAdam) {
    if (!unit_interval(beta1) || !unit_interval(beta2)) {
      throw InvalidArgument("adam betas must lie in [0, 1)");
    }
    if (!(eps_adam > 0.0)) throw InvalidArgument("adam epsilon must be positive");
  }
}

std::vector<Matrix> step(const StepRule& rule, OptState& state, std::span<const Matrix> grads) {
  rule.validate();
  std::vector<Matrix> deltas;
  deltas.reserve(grads.size());
  switch (rule.kind) {
    case StepRule::Kind::kSgd:
      for (const Matrix& g : grads) deltas.push_back(g * -rule.mu);
      break;
    case StepRule::Kind::kMomentum:
    case StepRule::Kind::kNesterov: {
      ensure_buffers(state.velocity, grads);
      const bool nesterov = rule.kind == StepRule::Kind::kNesterov;
      for (std::size_t l = 0; l < grads.size(); ++l) {
        auto v = state.velocity[l].data();
        auto g = grads[l].data();
        Matrix delta(grads[l].rows(), grads[l].cols());
        auto d = delta.data();
        for (std::size_t i = 0; i < g.size(); ++i) {
          v[i] = rule.beta * v[i] - rule.mu * g[i];
          d[i] = nesterov ? rule.beta * v[i] - rule.mu * g[i] : v[i];
        }
        deltas.push_back(std::move(delta));
      }
      break;
    }
    case StepRule::Kind::kAdam: {
      ensure_buffers(state.first_moment, grads);
      ensure_buffers(state.second_moment, grads);
      const double t = static_cast<double>(state.t + 1);
      const double c1 = 1.0 - std::pow(rule.beta1, t);
      const double c2 = 1.0 - std::pow(rule.beta2, t);
      for (std::size_t l = 0; l < grads.size(); ++l) {
        auto m = state.first_moment[l].data();
        auto v = state.second_moment[l].data();
        auto g = grads[l].data();
        Matrix delta(grads[l].rows(), grads[l].cols());
        auto d = delta.data();
        for (std::size_t i = 0; i < g.size(); ++i) {
          m[i] = rule.beta1 * m[i] + (1.0 - rule.beta1) * g[i];
          v[i] = rule.beta2 * v[i] + (1.0 - rule.beta2) * g[i] * g[i];
          d[i] = -rule.mu * (m[i] / c1) / (std::sqrt(v[i] / c2) + rule.eps_adam);
        }
        deltas.push_back(std::move(delta));
      }
      break;
    }
  }
  ++state.t;
  return deltas;
}

}  // namespace conseq
