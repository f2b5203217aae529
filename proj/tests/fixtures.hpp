// SPDX-License-Identifier: Apache-2.0
// Test helpers without third-party dependencies, shared with the acceptance run.
#pragma once

#include <algorithm>
#include <cmath>
#include <random>

#include "conseq/conv.hpp"
#include "conseq/matrix.hpp"
#include "conseq/nn.hpp"

namespace conseq::oracle {

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng,
                            double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  Matrix m(rows, cols);
  for (double& v : m.data()) v = dist(rng);
  return m;
}

// Textbook nested-loop cross-correlation with zero padding.
inline ImageBatch direct_conv(const ImageBatch& img, const Matrix& weights, const ConvSpec& spec) {
  const ImageDims& d = img.dims;
  const std::size_t oh = (d.h + 2 * spec.pad - spec.kernel_h) / spec.stride + 1;
  const std::size_t ow = (d.w + 2 * spec.pad - spec.kernel_w) / spec.stride + 1;
  ImageBatch out(ImageDims{d.n, spec.out_channels, oh, ow});
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t o = 0; o < spec.out_channels; ++o)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          double acc = 0.0;
          for (std::size_t c = 0; c < d.c; ++c)
            for (std::size_t ky = 0; ky < spec.kernel_h; ++ky)
              for (std::size_t kx = 0; kx < spec.kernel_w; ++kx) {
                const long iy = long(y * spec.stride + ky) - long(spec.pad);
                const long ix = long(x * spec.stride + kx) - long(spec.pad);
                if (iy < 0 || ix < 0 || iy >= long(d.h) || ix >= long(d.w)) continue;
                acc += weights(o, (c * spec.kernel_h + ky) * spec.kernel_w + kx) *
                       img.at(n, c, iy, ix);
              }
          out.at(n, o, y, x) = acc;
        }
  return out;
}

struct Problem {
  Network net;
  Matrix x, t;
  Loss loss;
};

// Random net with 1..3 layers of 1..8 units.
inline Problem random_problem(std::mt19937_64& rng, Loss loss, bool bias = false) {
  std::uniform_int_distribution<std::size_t> width(1, 8), depth(1, 3), batch(1, 6);
  std::vector<std::size_t> sizes{width(rng)};
  const std::size_t layers = depth(rng);
  for (std::size_t l = 0; l < layers; ++l) sizes.push_back(width(rng));
  if (loss == Loss::kSoftmaxCrossEntropy) sizes.back() = std::max<std::size_t>(2, sizes.back());
  const Activation out =
      loss == Loss::kSoftmaxCrossEntropy ? Activation::kSoftmax : Activation::kLinear;
  Problem p{Network::mlp(sizes, Activation::kRelu, out, bias), {}, {}, loss};
  init_weights(p.net, InitScheme::kXavier, rng());
  if (bias) {
    for (std::size_t l = 0; l < p.net.depth(); ++l) {
      Layer& layer = p.net.layer(l);
      for (std::size_t r = 0; r < layer.out_dim(); ++r) layer.weights(r, layer.in_dim()) = 0.1;
    }
  }
  const std::size_t n = batch(rng);
  p.x = random_matrix(sizes.front(), n, rng);
  if (loss == Loss::kMse) {
    p.t = random_matrix(sizes.back(), n, rng);
  } else {
    p.t = Matrix(sizes.back(), n);
    std::uniform_int_distribution<std::size_t> cls(0, sizes.back() - 1);
    for (std::size_t c = 0; c < n; ++c) p.t(cls(rng), c) = 1.0;
  }
  return p;
}

// Central differences of the forward loss, one weight at a time.
inline std::vector<Matrix> finite_difference_grads(Network net, const Matrix& x, const Matrix& t,
                                                   Loss loss, double h) {
  std::vector<Matrix> grads;
  for (std::size_t l = 0; l < net.depth(); ++l) {
    Matrix& w = net.layer(l).weights;
    Matrix g(w.rows(), w.cols());
    for (std::size_t r = 0; r < w.rows(); ++r)
      for (std::size_t c = 0; c < w.cols(); ++c) {
        const double saved = w(r, c);
        w(r, c) = saved + h;
        const double plus = forward(net, x, t, loss).loss;
        w(r, c) = saved - h;
        const double minus = forward(net, x, t, loss).loss;
        w(r, c) = saved;
        g(r, c) = (plus - minus) / (2.0 * h);
      }
    grads.push_back(std::move(g));
  }
  return grads;
}

inline double max_relative_error(const Matrix& a, const Matrix& b, double floor) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = a.data()[i], y = b.data()[i];
    worst = std::max(worst, std::abs(x - y) / std::max({std::abs(x), std::abs(y), floor}));
  }
  return worst;
}

}  // namespace conseq::oracle
