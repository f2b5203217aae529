// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "conseq/matrix.hpp"

namespace conseq {

enum class Activation { kLinear, kRelu, kSoftmax };

// kSoftmaxCrossEntropy is always fused with a softmax output layer; its
// gradient is taken with respect to the pre-softmax logits.
enum class Loss { kMse, kSoftmaxCrossEntropy };

struct Layer {
  // D_out x D_in, or D_out x (D_in + 1) when `bias` appends a constant-1 input row.
  Matrix weights;
  Activation activation = Activation::kLinear;
  // Scales the weight change of this layer after any gradient transform.
  double lr_multiplier = 1.0;
  bool bias = false;

  std::size_t in_dim() const { return weights.cols() - (bias ? 1 : 0); }
  std::size_t out_dim() const { return weights.rows(); }
};

class Network {
 public:
  Network() = default;
  // Validates the dimension chain and activation placement.
  explicit Network(std::vector<Layer> layers);

  // Zero-initialized MLP with sizes {D0, D1, ..., DL}. Every layer but the last
  // uses `hidden`; the last uses `output`.
  static Network mlp(std::span<const std::size_t> sizes, Activation hidden, Activation output,
                     bool bias = false);

  std::size_t depth() const { return layers_.size(); }
  std::size_t input_dim() const { return layers_.front().in_dim(); }
  std::size_t output_dim() const { return layers_.back().out_dim(); }
  const std::vector<Layer>& layers() const { return layers_; }
  const Layer& layer(std::size_t i) const { return layers_.at(i); }
  Layer& layer(std::size_t i) { return layers_.at(i); }

  // W[l] += deltas[l] for every layer. Throws ShapeMismatch on a shape error and
  // InvalidArgument if an update would leave non-finite weights.
  void apply(std::span<const Matrix> deltas);

 private:
  std::vector<Layer> layers_;
};

struct ForwardCache {
  std::vector<Matrix> x;  // X^(0..L), layer inputs without the bias row
  std::vector<Matrix> z;  // Z^(0..L-1)
  double loss = 0.0;
  Matrix targets;
  Loss loss_kind = Loss::kMse;
};

struct GradBundle {
  std::vector<Matrix> dz;  // dL/dZ^(l)
  std::vector<Matrix> dw;  // proposed weight changes, sign included
  // dL/dX^(l) for l = 1..L-1. Entry 0 is left empty, as the input layer has no
  // predecessor to feed.
  std::vector<Matrix> dx;
  std::optional<std::vector<Matrix>> vt;
};

struct GradientTransform {
  enum class Kind { kPlain, kConsequentialism };
  Kind kind = Kind::kPlain;
  double lambda = 0.0;

  static GradientTransform plain() { return {}; }
  static GradientTransform consequentialism(double lambda) {
    return {Kind::kConsequentialism, lambda};
  }
};

// Raw per-layer quantities of one backward sweep. `grad[l]` is what a step
// rule consumes: dZ X' for the plain transform and dZ (X'X + lambda I)^-1 X'
// for consequentialism. No learning rate or layer multiplier is applied.
struct Backprop {
  std::vector<Matrix> dz;
  std::vector<Matrix> dx;
  std::vector<Matrix> grad;
};

Matrix apply_activation(Activation act, const Matrix& z);
Matrix activation_derivative(Activation act, const Matrix& z);
Matrix softmax(const Matrix& logits);

// Throws UnsupportedCombination unless softmax output and cross-entropy appear together.
void check_loss_compatible(const Network& net, Loss loss);

// Loss summed over the batch and its gradient. For kMse `output` is X^(L) and
// the loss is 1/2 sum (t - x)^2 with gradient -(T - X). For
// kSoftmaxCrossEntropy `output` holds the logits and the gradient is
// softmax(Z) - T.
std::pair<double, Matrix> loss_and_output_grad(const Matrix& output, const Matrix& targets,
                                               Loss loss);

ForwardCache forward(const Network& net, const Matrix& x0, const Matrix& targets, Loss loss);

// Network output X^(L) without computing a loss.
Matrix predict(const Network& net, const Matrix& x0);

Backprop backprop(const Network& net, const ForwardCache& cache, GradientTransform transform);

// dw[l] = -mu * dZ X' * lr_multiplier.
GradBundle backward_bp(const Network& net, const ForwardCache& cache, double mu);

// dw[l] = -mu * dZ (X'X + lambda I)^-1 X' * lr_multiplier; dz and dx match backward_bp.
GradBundle backward_consequentialism(const Network& net, const ForwardCache& cache, double mu,
                                     double lambda);

// Z - dZ.
Matrix virtual_targets(const Matrix& z, const Matrix& dz);

// Fills grads.vt with Z^(l) - dZ^(l) for every layer.
void attach_virtual_targets(const ForwardCache& cache, GradBundle& grads);

// mu * (vt - z) * x'.
Matrix lms_update_from_virtual_targets(const Matrix& x, const Matrix& z, const Matrix& vt,
                                       double mu);

// mu * E~ * Xhat' with columns xhat_n = x_n / (|x_n|^2 + epsilon). Kept for
// diagnostics: this per-sample normalization ignores inter-sample interference.
Matrix naive_normalized_update(const Matrix& x, const Matrix& e_tilde, double mu,
                               double epsilon);

struct InterferenceMode {
  enum class Kind { kPlain, kNaiveNormalized, kConsequentialism };
  Kind kind = Kind::kPlain;
  double lambda = 0.0;   // consequentialism ridge
  double epsilon = 0.0;  // naive normalization regularizer
};

// N x N matrix M such that a weight change yields an error change mu E~ M on
// the same batch: X'X, Xhat'X, or (X'X + lambda I)^-1 X'X.
Matrix interference_matrix(const Matrix& x, InterferenceMode mode);

// dw * x, the output change the update causes on the same batch.
Matrix predicted_error_change(const Matrix& dw, const Matrix& x);

enum class InitScheme { kXavier, kKaiming };

// Xavier: Glorot uniform on +-sqrt(6 / (fan_in + fan_out)). Kaiming: normal
// with std sqrt(2 / fan_in). Bias columns start at zero.
void init_weights(Network& net, InitScheme scheme, std::uint64_t seed);

}  // namespace conseq
