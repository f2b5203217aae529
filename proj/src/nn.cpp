// SPDX-License-Identifier: Apache-2.0
#include "conseq/nn.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "conseq/error.hpp"
#include "conseq/linalg.hpp"

namespace conseq {

namespace {

// [x; 1] when the layer carries a bias, x otherwise.
Matrix layer_input(const Matrix& x, bool bias) {
  if (!bias) return x;
  Matrix out(x.rows() + 1, x.cols(), 1.0);
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = x(r, c);
  return out;
}

Matrix drop_last_row(const Matrix& m) {
  Matrix out(m.rows() - 1, m.cols());
  for (std::size_t r = 0; r + 1 < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out(r, c) = m(r, c);
  return out;
}

GradBundle scaled_changes(const Network& net, Backprop&& bp, double mu) {
  GradBundle out;
  out.dw.reserve(bp.grad.size());
  for (std::size_t l = 0; l < bp.grad.size(); ++l) {
    out.dw.push_back(std::move(bp.grad[l]) * (-mu * net.layer(l).lr_multiplier));
  }
  out.dz = std::move(bp.dz);
  out.dx = std::move(bp.dx);
  return out;
}

}  // namespace

Network::Network(std::vector<Layer> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw InvalidArgument("network needs at least one layer");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& layer = layers_[l];
    if (layer.weights.rows() == 0 || layer.weights.cols() <= (layer.bias ? 1u : 0u)) {
      throw DimensionMismatch("layer " + std::to_string(l) + " has empty weights " +
                              layer.weights.shape_string());
    }
    if (layer.activation == Activation::kSoftmax && l + 1 != layers_.size()) {
      throw UnsupportedCombination("softmax is only allowed on the final layer, found on layer " +
                                   std::to_string(l));
    }
    if (!(layer.lr_multiplier > 0.0)) {
      throw InvalidArgument("layer " + std::to_string(l) + " lr_multiplier must be positive");
    }
    if (l > 0 && layers_[l - 1].out_dim() != layer.in_dim()) {
      throw DimensionMismatch("layer " + std::to_string(l - 1) + " outputs " +
                              std::to_string(layers_[l - 1].out_dim()) + " but layer " +
                              std::to_string(l) + " expects " + std::to_string(layer.in_dim()));
    }
  }
}

Network Network::mlp(std::span<const std::size_t> sizes, Activation hidden, Activation output,
                     bool bias) {
  if (sizes.size() < 2) throw InvalidArgument("an MLP needs at least input and output sizes");
  std::vector<Layer> layers;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    Layer layer;
    layer.weights = Matrix(sizes[l + 1], sizes[l] + (bias ? 1 : 0));
    layer.activation = l + 2 == sizes.size() ? output : hidden;
    layer.bias = bias;
    layers.push_back(std::move(layer));
  }
  return Network(std::move(layers));
}

void Network::apply(std::span<const Matrix> deltas) {
  if (deltas.size() != layers_.size()) {
    throw ShapeMismatch("expected " + std::to_string(layers_.size()) + " weight deltas, got " +
                        std::to_string(deltas.size()));
  }
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (deltas[l].rows() != layers_[l].weights.rows() ||
        deltas[l].cols() != layers_[l].weights.cols()) {
      throw ShapeMismatch("delta " + deltas[l].shape_string() + " for layer " +
                          std::to_string(l) + " weights " + layers_[l].weights.shape_string());
    }
  }
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Matrix updated = layers_[l].weights + deltas[l];
    if (!updated.all_finite()) {
      throw InvalidArgument("update would make layer " + std::to_string(l) +
                            " weights non-finite");
    }
    layers_[l].weights = std::move(updated);
  }
}

Matrix softmax(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t c = 0; c < logits.cols(); ++c) {
    double top = logits(0, c);
    for (std::size_t r = 1; r < logits.rows(); ++r) top = std::max(top, logits(r, c));
    double sum = 0.0;
    for (std::size_t r = 0; r < logits.rows(); ++r) {
      out(r, c) = std::exp(logits(r, c) - top);
      sum += out(r, c);
    }
    for (std::size_t r = 0; r < logits.rows(); ++r) out(r, c) /= sum;
  }
  return out;
}

Matrix apply_activation(Activation act, const Matrix& z) {
  switch (act) {
    case Activation::kLinear:
      return z;
    case Activation::kRelu: {
      Matrix out = z;
      for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
      return out;
    }
    case Activation::kSoftmax:
      return softmax(z);
  }
  return z;
}

Matrix activation_derivative(Activation act, const Matrix& z) {
  switch (act) {
    case Activation::kLinear:
      return Matrix(z.rows(), z.cols(), 1.0);
    case Activation::kRelu: {
      // Subgradient at exactly 0 is 0.
      Matrix out(z.rows(), z.cols());
      auto zd = z.data();
      auto od = out.data();
      for (std::size_t i = 0; i < zd.size(); ++i) od[i] = zd[i] > 0.0 ? 1.0 : 0.0;
      return out;
    }
    case Activation::kSoftmax:
      throw UnsupportedCombination("softmax has no elementwise derivative; it is fused with cross-entropy");
  }
  return z;
}

void check_loss_compatible(const Network& net, Loss loss) {
  const bool softmax_out = net.layers().back().activation == Activation::kSoftmax;
  if (softmax_out && loss != Loss::kSoftmaxCrossEntropy) {
    throw UnsupportedCombination("softmax output requires the cross-entropy loss");
  }
  if (!softmax_out && loss == Loss::kSoftmaxCrossEntropy) {
    throw UnsupportedCombination("cross-entropy loss requires a softmax output layer");
  }
}

std::pair<double, Matrix> loss_and_output_grad(const Matrix& output, const Matrix& targets,
                                               Loss loss) {
  require_same_shape(output, targets, "loss output vs targets");
  if (loss == Loss::kMse) {
    Matrix grad = output - targets;
    double sum = 0.0;
    for (double v : grad.data()) sum += v * v;
    return {0.5 * sum, std::move(grad)};
  }
  Matrix probs = softmax(output);
  double total = 0.0;
  for (std::size_t c = 0; c < output.cols(); ++c) {
    double top = output(0, c);
    for (std::size_t r = 1; r < output.rows(); ++r) top = std::max(top, output(r, c));
    double sum = 0.0;
    for (std::size_t r = 0; r < output.rows(); ++r) sum += std::exp(output(r, c) - top);
    const double log_norm = top + std::log(sum);
    for (std::size_t r = 0; r < output.rows(); ++r) {
      if (targets(r, c) != 0.0) total -= targets(r, c) * (output(r, c) - log_norm);
    }
  }
  probs -= targets;
  return {total, std::move(probs)};
}

ForwardCache forward(const Network& net, const Matrix& x0, const Matrix& targets, Loss loss) {
  check_loss_compatible(net, loss);
  if (x0.rows() != net.input_dim()) {
    throw DimensionMismatch("input has " + std::to_string(x0.rows()) +
                            " features, network expects " + std::to_string(net.input_dim()));
  }
  if (targets.rows() != net.output_dim() || targets.cols() != x0.cols()) {
    throw DimensionMismatch("targets " + targets.shape_string() + " do not match output " +
                            std::to_string(net.output_dim()) + "x" + std::to_string(x0.cols()));
  }
  ForwardCache cache;
  cache.x.reserve(net.depth() + 1);
  cache.z.reserve(net.depth());
  cache.x.push_back(x0);
  for (const Layer& layer : net.layers()) {
    cache.z.push_back(gemm(layer.weights, layer_input(cache.x.back(), layer.bias)));
    cache.x.push_back(apply_activation(layer.activation, cache.z.back()));
  }
  const Matrix& scored = loss == Loss::kSoftmaxCrossEntropy ? cache.z.back() : cache.x.back();
  cache.loss = loss_and_output_grad(scored, targets, loss).first;
  cache.targets = targets;
  cache.loss_kind = loss;
  return cache;
}

Matrix predict(const Network& net, const Matrix& x0) {
  if (x0.rows() != net.input_dim()) {
    throw DimensionMismatch("input has " + std::to_string(x0.rows()) +
                            " features, network expects " + std::to_string(net.input_dim()));
  }
  Matrix x = x0;
  for (const Layer& layer : net.layers()) {
    x = apply_activation(layer.activation, gemm(layer.weights, layer_input(x, layer.bias)));
  }
  return x;
}

Backprop backprop(const Network& net, const ForwardCache& cache, GradientTransform transform) {
  const std::size_t depth = net.depth();
  if (cache.z.size() != depth || cache.x.size() != depth + 1) {
    throw ShapeMismatch("forward cache does not belong to this network");
  }
  Backprop out;
  out.dz.resize(depth);
  out.dx.resize(depth);
  out.grad.resize(depth);

  const bool fused = cache.loss_kind == Loss::kSoftmaxCrossEntropy;
  const Matrix& scored = fused ? cache.z.back() : cache.x.back();
  Matrix upstream = loss_and_output_grad(scored, cache.targets, cache.loss_kind).second;

  for (std::size_t l = depth; l-- > 0;) {
    const Layer& layer = net.layer(l);
    if (l + 1 == depth && fused) {
      out.dz[l] = std::move(upstream);
    } else {
      out.dz[l] = hadamard(upstream, activation_derivative(layer.activation, cache.z[l]));
    }
    const Matrix input = layer_input(cache.x[l], layer.bias);
    if (transform.kind == GradientTransform::Kind::kPlain) {
      out.grad[l] = gemm(out.dz[l], input, Op::kNone, Op::kTranspose);
    } else {
      out.grad[l] = ridge_right_pinv_apply(out.dz[l], input, transform.lambda);
    }
    if (l >= 1) {
      Matrix back = gemm(layer.weights, out.dz[l], Op::kTranspose, Op::kNone);
      out.dx[l] = layer.bias ? drop_last_row(back) : std::move(back);
      upstream = out.dx[l];
    }
  }
  return out;
}

GradBundle backward_bp(const Network& net, const ForwardCache& cache, double mu) {
  return scaled_changes(net, backprop(net, cache, GradientTransform::plain()), mu);
}

GradBundle backward_consequentialism(const Network& net, const ForwardCache& cache, double mu,
                                     double lambda) {
  return scaled_changes(net, backprop(net, cache, GradientTransform::consequentialism(lambda)),
                        mu);
}

Matrix virtual_targets(const Matrix& z, const Matrix& dz) {
  require_same_shape(z, dz, "virtual_targets");
  return z - dz;
}

void attach_virtual_targets(const ForwardCache& cache, GradBundle& grads) {
  std::vector<Matrix> vt;
  vt.reserve(grads.dz.size());
  for (std::size_t l = 0; l < grads.dz.size(); ++l) {
    vt.push_back(virtual_targets(cache.z.at(l), grads.dz[l]));
  }
  grads.vt = std::move(vt);
}

Matrix lms_update_from_virtual_targets(const Matrix& x, const Matrix& z, const Matrix& vt,
                                       double mu) {
  require_same_shape(z, vt, "lms_update_from_virtual_targets");
  Matrix update = gemm(vt - z, x, Op::kNone, Op::kTranspose);
  return update *= mu;
}

Matrix naive_normalized_update(const Matrix& x, const Matrix& e_tilde, double mu,
                               double epsilon) {
  Matrix xhat = x;
  for (std::size_t c = 0; c < x.cols(); ++c) {
    double sq = 0.0;
    for (std::size_t r = 0; r < x.rows(); ++r) sq += x(r, c) * x(r, c);
    const double denom = sq + epsilon;
    if (denom == 0.0) {
      throw DegenerateInput("column " + std::to_string(c) + " is zero and epsilon = 0");
    }
    for (std::size_t r = 0; r < x.rows(); ++r) xhat(r, c) /= denom;
  }
  Matrix update = gemm(e_tilde, xhat, Op::kNone, Op::kTranspose);
  return update *= mu;
}

Matrix interference_matrix(const Matrix& x, InterferenceMode mode) {
  using Kind = InterferenceMode::Kind;
  switch (mode.kind) {
    case Kind::kPlain:
      return gram(x);
    case Kind::kNaiveNormalized: {
      // Row n of Xhat'X is x_n' X / (|x_n|^2 + epsilon).
      Matrix g = gram(x);
      for (std::size_t n = 0; n < g.rows(); ++n) {
        const double denom = g(n, n) + mode.epsilon;
        if (denom == 0.0) throw DegenerateInput("column " + std::to_string(n) + " is zero");
        for (std::size_t m = 0; m < g.cols(); ++m) g(n, m) /= denom;
      }
      return g;
    }
    case Kind::kConsequentialism: {
      const Matrix g = gram(x);
      Matrix system = g;
      for (std::size_t i = 0; i < system.rows(); ++i) system(i, i) += mode.lambda;
      return cholesky_solve(system, g);
    }
  }
  return gram(x);
}

Matrix predicted_error_change(const Matrix& dw, const Matrix& x) { return gemm(dw, x); }

void init_weights(Network& net, InitScheme scheme, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l < net.depth(); ++l) {
    Layer& layer = net.layer(l);
    const double fan_in = static_cast<double>(layer.in_dim());
    const double fan_out = static_cast<double>(layer.out_dim());
    const std::size_t weight_cols = layer.in_dim();
    if (scheme == InitScheme::kXavier) {
      const double bound = std::sqrt(6.0 / (fan_in + fan_out));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (std::size_t r = 0; r < layer.weights.rows(); ++r)
        for (std::size_t c = 0; c < weight_cols; ++c) layer.weights(r, c) = dist(rng);
    } else {
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
      for (std::size_t r = 0; r < layer.weights.rows(); ++r)
        for (std::size_t c = 0; c < weight_cols; ++c) layer.weights(r, c) = dist(rng);
    }
    if (layer.bias) {
      for (std::size_t r = 0; r < layer.weights.rows(); ++r) layer.weights(r, weight_cols) = 0.0;
    }
  }
}

}  // namespace conseq
