// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>

#include "conseq/matrix.hpp"

namespace conseq {

enum class Op { kNone, kTranspose };

// op(a) * op(b). Throws DimensionMismatch naming both shapes.
Matrix gemm(const Matrix& a, const Matrix& b, Op op_a = Op::kNone, Op op_b = Op::kNone);

// a' a for a D x N matrix, i.e. the N x N Gram matrix of its columns.
Matrix gram(const Matrix& a);

// Solves a * S = b for symmetric positive-definite a via Cholesky.
// Throws NotPositiveDefinite on an asymmetric input or a non-positive pivot.
Matrix cholesky_solve(const Matrix& a, const Matrix& b);

// g * (x'x + lambda I)^-1 * x', evaluated through the N x N batch Gram system.
// g is D2 x N, x is D x N, result is D2 x D. With lambda = 0 and dependent
// columns the Gram matrix is singular and NotPositiveDefinite propagates; no
// jitter is ever added.
Matrix ridge_right_pinv_apply(const Matrix& g, const Matrix& x, double lambda);

// x' / (|x|^2 + epsilon) as a 1 x D row.
Matrix vector_pinv(std::span<const double> x, double epsilon);

}  // namespace conseq
