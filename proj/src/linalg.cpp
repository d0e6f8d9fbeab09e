// Copyright (c) 2026, the kfade authors.
// SPDX-License-Identifier: Apache-2.0

#include "kfade/linalg.hpp"

#include <cstring>
#include <string>

namespace kfade {

bool is_symmetric(const Matrix& m, double tol) {
  if (m.rows() != m.cols()) return false;
  return (m - m.transpose()).cwiseAbs().maxCoeff() <= tol;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw Error::config("matmul: inner dimensions " + std::to_string(a.cols()) +
                        " and " + std::to_string(b.rows()) + " do not match");
  }
  return a * b;
}

SymEigen sym_eigen(const Matrix& m) {
  if (m.rows() != m.cols()) {
    throw Error::config("sym_eigen: matrix is not square");
  }
  if (m.size() > 0 && !is_symmetric(m)) {
    throw Error::numeric("sym_eigen: matrix is not symmetric within 1e-10");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> solver(m);
  if (solver.info() != Eigen::Success) {
    throw Error::numeric("sym_eigen: eigensolver did not converge");
  }
  return SymEigen{solver.eigenvectors(), solver.eigenvalues()};
}

Matrix kron_quadratic_apply(const Matrix& q_right, const Matrix& q_left,
                            const Matrix& scale, const Matrix& v) {
  if (q_left.rows() != q_left.cols() || q_right.rows() != q_right.cols()) {
    throw Error::config("kron_quadratic_apply: basis matrices must be square");
  }
  if (v.rows() != q_left.rows() || v.cols() != q_right.rows() ||
      scale.rows() != v.rows() || scale.cols() != v.cols()) {
    throw Error::config("kron_quadratic_apply: dimension mismatch");
  }
  const Matrix rotated = q_left.transpose() * v * q_right;
  return q_left * rotated.cwiseProduct(scale) * q_right.transpose();
}

Matrix kron(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    }
  }
  return out;
}

Vector flatten_row_major(const Matrix& m) {
  Vector v(m.size());
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      v(k++) = m(i, j);
    }
  }
  return v;
}

Matrix unflatten_row_major(const Vector& v, Eigen::Index rows, Eigen::Index cols) {
  if (v.size() != rows * cols) {
    throw Error::config("unflatten_row_major: size mismatch");
  }
  Matrix m(rows, cols);
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      m(i, j) = v(k++);
    }
  }
  return m;
}

std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t basis) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  std::uint64_t h = basis;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t hash_matrix(const Matrix& m, std::uint64_t basis) {
  std::uint64_t h = basis;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const double value = m(i, j);
      std::uint64_t bits;
      std::memcpy(&bits, &value, sizeof bits);
      h = fnv1a(&bits, sizeof bits, h);
    }
  }
  return h;
}

std::uint64_t hash_matrices(const std::vector<Matrix>& ms) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Matrix& m : ms) {
    const std::uint64_t dims[2] = {static_cast<std::uint64_t>(m.rows()),
                                   static_cast<std::uint64_t>(m.cols())};
    h = fnv1a(dims, sizeof dims, h);
    h = hash_matrix(m, h);
  }
  return h;
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace kfade
