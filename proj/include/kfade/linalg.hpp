// Copyright (c) 2026, the kfade authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "kfade/error.hpp"

namespace kfade {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Spectral decomposition of a symmetric matrix: columns of q are
/// eigenvectors, eigenvalues sorted ascending, q * diag(eigenvalues) * q^T
/// reconstructs the input.
struct SymEigen {
  Matrix q;
  Vector eigenvalues;
};

/// Entrywise symmetry check: max_ij |m_ij - m_ji| <= tol.
bool is_symmetric(const Matrix& m, double tol = 1e-10);

/// Plain matrix product with an explicit inner-dimension check.
Matrix matmul(const Matrix& a, const Matrix& b);

/// Symmetric eigendecomposition. Throws on non-square or non-symmetric
/// input (tolerance 1e-10 per entry) and on solver non-convergence.
SymEigen sym_eigen(const Matrix& m);

/// Applies the operator (q_left (x) q_right) diag(vec(scale)) (q_left (x) q_right)^T
/// to vec(v) under the row-major vec convention, returned in matrix form:
///   q_left * ((q_left^T v q_right) .* scale) * q_right^T.
/// v and scale are d_out x d_in; q_left is d_out x d_out; q_right is d_in x d_in.
Matrix kron_quadratic_apply(const Matrix& q_right, const Matrix& q_left,
                            const Matrix& scale, const Matrix& v);

/// Dense Kronecker product a (x) b, used by test oracles and dense
/// reconstructions only.
Matrix kron(const Matrix& a, const Matrix& b);

/// Row-major flattening: element (i, j) of m lands at index i*cols + j.
/// Under this convention vec(ds a^T) = ds (x) a and the layer curvature is
/// S (x) A.
Vector flatten_row_major(const Matrix& m);
Matrix unflatten_row_major(const Vector& v, Eigen::Index rows, Eigen::Index cols);

/// FNV-1a 64-bit over raw bytes; the project-wide content hash.
std::uint64_t fnv1a(const void* data, std::size_t size,
                    std::uint64_t basis = 0xcbf29ce484222325ULL);
std::uint64_t hash_matrix(const Matrix& m, std::uint64_t basis = 0xcbf29ce484222325ULL);
std::uint64_t hash_matrices(const std::vector<Matrix>& ms);

bool all_finite(const Matrix& m);

}  // namespace kfade
