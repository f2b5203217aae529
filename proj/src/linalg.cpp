// SPDX-License-Identifier: Apache-2.0
#include "conseq/linalg.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "conseq/error.hpp"

namespace conseq {

namespace {

std::string op_shape(const Matrix& m, Op op) {
  return op == Op::kTranspose ? m.shape_string() + "^T" : m.shape_string();
}

}  // namespace

Matrix gemm(const Matrix& a, const Matrix& b, Op op_a, Op op_b) {
  const bool ta = op_a == Op::kTranspose;
  const bool tb = op_b == Op::kTranspose;
  const std::size_t m = ta ? a.cols() : a.rows();
  const std::size_t k = ta ? a.rows() : a.cols();
  const std::size_t kb = tb ? b.cols() : b.rows();
  const std::size_t n = tb ? b.rows() : b.cols();
  if (k != kb) {
    throw DimensionMismatch("gemm inner dimensions differ: " + op_shape(a, op_a) + " * " +
                            op_shape(b, op_b));
  }
  Matrix c(m, n);
  // i-p-j loop order keeps the inner loop contiguous for the untransposed b.
  for (std::size_t i = 0; i < m; ++i) {
    auto crow = c.row_span(i);
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ta ? a(p, i) : a(i, p);
      if (aip == 0.0) continue;
      if (!tb) {
        auto brow = b.row_span(p);
        for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
      } else {
        for (std::size_t j = 0; j < n; ++j) crow[j] += aip * b(j, p);
      }
    }
  }
  return c;
}

Matrix gram(const Matrix& a) {
  const std::size_t n = a.cols();
  Matrix g(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      double s = 0.0;
      for (std::size_t r = 0; r < a.rows(); ++r) s += a(r, i) * a(r, j);
      g(i, j) = s;
      g(j, i) = s;
    }
  }
  return g;
}

Matrix cholesky_solve(const Matrix& a, const Matrix& b) {
  const std::size_t n = a.rows();
  if (a.cols() != n) throw DimensionMismatch("cholesky_solve needs a square matrix, got " + a.shape_string());
  if (b.rows() != n) {
    throw DimensionMismatch("cholesky_solve right-hand side " + b.shape_string() +
                            " does not match " + a.shape_string());
  }
  const double tol = 1e-10 * std::max(1.0, max_abs(a));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (std::abs(a(i, j) - a(j, i)) > tol) {
        throw NotPositiveDefinite("matrix is not symmetric at (" + std::to_string(i) + "," +
                                  std::to_string(j) + ")");
      }

  // Lower factor, a = L L'.
  Matrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double d = a(j, j);
    for (std::size_t p = 0; p < j; ++p) d -= l(j, p) * l(j, p);
    // A pivot lost to cancellation (at the level of rounding noise relative
    // to the diagonal entry) counts as non-positive.
    const double noise = static_cast<double>(n) * std::numeric_limits<double>::epsilon() * a(j, j);
    if (!(d > noise) || !std::isfinite(d)) {
      throw NotPositiveDefinite("non-positive pivot " + std::to_string(d) + " at column " +
                                std::to_string(j));
    }
    const double ljj = std::sqrt(d);
    l(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (std::size_t p = 0; p < j; ++p) s -= l(i, p) * l(j, p);
      l(i, j) = s / ljj;
    }
  }

  Matrix s = b;
  const std::size_t k = b.cols();
  // Forward substitution L y = b.
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < i; ++p) {
      const double lip = l(i, p);
      for (std::size_t c = 0; c < k; ++c) s(i, c) -= lip * s(p, c);
    }
    for (std::size_t c = 0; c < k; ++c) s(i, c) /= l(i, i);
  }
  // Back substitution L' x = y.
  for (std::size_t ii = n; ii-- > 0;) {
    for (std::size_t p = ii + 1; p < n; ++p) {
      const double lpi = l(p, ii);
      for (std::size_t c = 0; c < k; ++c) s(ii, c) -= lpi * s(p, c);
    }
    for (std::size_t c = 0; c < k; ++c) s(ii, c) /= l(ii, ii);
  }
  if (!s.all_finite()) throw NotPositiveDefinite("solution is not finite (system too ill-conditioned)");
  return s;
}

Matrix ridge_right_pinv_apply(const Matrix& g, const Matrix& x, double lambda) {
  if (g.cols() != x.cols()) {
    throw DimensionMismatch("ridge_right_pinv_apply batch sizes differ: g " + g.shape_string() +
                            ", x " + x.shape_string());
  }
  if (!(lambda >= 0.0)) throw InvalidArgument("ridge_right_pinv_apply needs lambda >= 0");
  Matrix system = gram(x);
  for (std::size_t i = 0; i < system.rows(); ++i) system(i, i) += lambda;
  // S = (x'x + lambda I)^-1 g', so the result g (x'x + lambda I)^-1 x' = S' x'.
  const Matrix s = cholesky_solve(system, transpose(g));
  return gemm(s, x, Op::kTranspose, Op::kTranspose);
}

Matrix vector_pinv(std::span<const double> x, double epsilon) {
  double sq = 0.0;
  for (double v : x) sq += v * v;
  const double denom = sq + epsilon;
  if (denom == 0.0) throw DegenerateInput("pseudoinverse of a zero vector with epsilon = 0");
  Matrix out = Matrix::row(x);
  for (double& v : out.data()) v /= denom;
  return out;
}

}  // namespace conseq
