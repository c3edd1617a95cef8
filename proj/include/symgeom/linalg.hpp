#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "symgeom/error.hpp"

namespace symgeom {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Eigenpairs of a real symmetric matrix in a caller-chosen order.
struct SymmetricEigen {
  VectorXd values;
  MatrixXd vectors;  // column j pairs with values(j)
};

enum class ModeOrder {
  magnitude,  // |lambda| descending, the asymmetric-factorization convention
  value,      // lambda descending
};

inline MatrixXd symmetrized(const MatrixXd& m) { return 0.5 * (m + m.transpose()); }

inline double relative_frobenius(const MatrixXd& a, const MatrixXd& b) {
  const double denom = b.norm();
  return denom == 0.0 ? a.norm() : (a - b).norm() / denom;
}

// I - (1/n) 11^T
inline MatrixXd centering_matrix(Eigen::Index n) {
  return MatrixXd::Identity(n, n) - MatrixXd::Constant(n, n, 1.0 / static_cast<double>(n));
}

inline std::vector<Eigen::Index> mode_permutation(const VectorXd& values, ModeOrder order) {
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(values.size()));
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  // Eigen returns ascending values; stable sort keeps ties deterministic.
  std::stable_sort(perm.begin(), perm.end(), [&](Eigen::Index a, Eigen::Index b) {
    if (order == ModeOrder::magnitude) return std::abs(values(a)) > std::abs(values(b));
    return values(a) > values(b);
  });
  return perm;
}

// Full dense eigendecomposition, reordered.
inline SymmetricEigen eigen_symmetric(const MatrixXd& m, ModeOrder order = ModeOrder::magnitude) {
  if (m.rows() != m.cols()) throw DataError("eigen_symmetric: matrix is not square");
  Eigen::SelfAdjointEigenSolver<MatrixXd> solver(m);
  if (solver.info() != Eigen::Success) {
    throw NumericalError("eigen_symmetric: eigensolver failed on " + std::to_string(m.rows()) + "x" +
                         std::to_string(m.cols()) + " matrix, norm " + std::to_string(m.norm()));
  }
  const auto perm = mode_permutation(solver.eigenvalues(), order);
  SymmetricEigen out;
  out.values.resize(m.rows());
  out.vectors.resize(m.rows(), m.rows());
  for (std::size_t j = 0; j < perm.size(); ++j) {
    out.values(static_cast<Eigen::Index>(j)) = solver.eigenvalues()(perm[j]);
    out.vectors.col(static_cast<Eigen::Index>(j)) = solver.eigenvectors().col(perm[j]);
  }
  return out;
}

// Half-open index ranges [first, last) of consecutive values that agree to
// rel_tol relative to the largest |value|.
inline std::vector<std::pair<Eigen::Index, Eigen::Index>> degenerate_groups(const VectorXd& values,
                                                                            double rel_tol = 1e-8) {
  std::vector<std::pair<Eigen::Index, Eigen::Index>> groups;
  const double scale = values.size() ? values.cwiseAbs().maxCoeff() : 0.0;
  Eigen::Index start = 0;
  for (Eigen::Index i = 1; i <= values.size(); ++i) {
    if (i == values.size() || std::abs(values(i) - values(i - 1)) > rel_tol * scale) {
      groups.emplace_back(start, i);
      start = i;
    }
  }
  return groups;
}

// Orthonormal basis of the column span (rank-revealing).
inline MatrixXd orthonormal_basis(const MatrixXd& a, double rel_tol = 1e-12) {
  if (a.cols() == 0) return MatrixXd(a.rows(), 0);
  Eigen::BDCSVD<MatrixXd> svd(a, Eigen::ComputeThinU);
  const auto& s = svd.singularValues();
  Eigen::Index rank = 0;
  while (rank < s.size() && s(rank) > rel_tol * s(0)) ++rank;
  return svd.matrixU().leftCols(rank);
}

// Principal angles (radians, ascending) between the column spans of a and b.
// Cosines and sines are both computed so that tiny angles keep full accuracy.
inline VectorXd principal_angles(const MatrixXd& a, const MatrixXd& b) {
  if (a.rows() != b.rows()) throw DataError("principal_angles: row counts differ");
  const MatrixXd qa = orthonormal_basis(a);
  const MatrixXd qb = orthonormal_basis(b);
  const Eigen::Index k = std::min(qa.cols(), qb.cols());
  if (k == 0) throw DataError("principal_angles: empty subspace");
  const MatrixXd& small = qa.cols() <= qb.cols() ? qa : qb;
  const MatrixXd& large = qa.cols() <= qb.cols() ? qb : qa;

  Eigen::JacobiSVD<MatrixXd> cos_svd(large.transpose() * small);
  VectorXd cosines = cos_svd.singularValues();  // descending
  const MatrixXd residual = small - large * (large.transpose() * small);
  Eigen::JacobiSVD<MatrixXd> sin_svd(residual);
  VectorXd sines = sin_svd.singularValues();  // descending

  VectorXd angles(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const double c = std::min(1.0, cosines(i));
    const double s = std::min(1.0, sines(k - 1 - i));
    angles(i) = std::atan2(s, c);
  }
  std::sort(angles.data(), angles.data() + k);
  return angles;
}

inline double max_principal_angle(const MatrixXd& a, const MatrixXd& b) {
  return principal_angles(a, b).maxCoeff();
}

inline double pearson(const VectorXd& x, const VectorXd& y) {
  if (x.size() != y.size() || x.size() < 2) throw DataError("pearson: size mismatch");
  const VectorXd xc = x.array() - x.mean();
  const VectorXd yc = y.array() - y.mean();
  const double denom = xc.norm() * yc.norm();
  return denom == 0.0 ? 0.0 : xc.dot(yc) / denom;
}

inline double cosine_similarity(const VectorXd& x, const VectorXd& y) {
  const double denom = x.norm() * y.norm();
  return denom == 0.0 ? 0.0 : x.dot(y) / denom;
}

// Least-squares slope of log(y) against log(x).
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw DataError("loglog_slope: need >= 2 points");
  const auto n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double lx = std::log(x[i]);
    const double ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

// Top-k eigenpairs by |lambda| of a symmetric operator given only through
// products, via block subspace iteration with Rayleigh-Ritz. Used when the
// matrix is too large for a dense solve.
struct TopKOptions {
  Eigen::Index oversample = 10;
  int max_iterations = 1000;
  double tolerance = 1e-10;  // relative residual ||Av - lambda v|| / |lambda_1|
  std::uint64_t seed = 12345;
};

inline SymmetricEigen top_k_eigen(const std::function<MatrixXd(const MatrixXd&)>& apply, Eigen::Index n,
                                  Eigen::Index k, const TopKOptions& opts = {}) {
  if (k < 1 || k > n) throw UsageError("top_k_eigen: need 1 <= k <= n");
  const Eigen::Index block = std::min(n, k + opts.oversample);
  std::mt19937_64 rng(opts.seed);
  std::normal_distribution<double> normal;
  MatrixXd q(n, block);
  for (Eigen::Index j = 0; j < block; ++j)
    for (Eigen::Index i = 0; i < n; ++i) q(i, j) = normal(rng);
  q = Eigen::HouseholderQR<MatrixXd>(q).householderQ() * MatrixXd::Identity(n, block);

  double residual = 0.0;
  for (int it = 0; it < opts.max_iterations; ++it) {
    const MatrixXd aq = apply(q);
    const MatrixXd h = symmetrized(q.transpose() * aq);
    const SymmetricEigen ritz = eigen_symmetric(h, ModeOrder::magnitude);
    const MatrixXd vecs = q * ritz.vectors.leftCols(k);
    const MatrixXd avecs = aq * ritz.vectors.leftCols(k);
    residual = 0.0;
    const double scale = std::max(std::abs(ritz.values(0)), 1e-300);
    for (Eigen::Index j = 0; j < k; ++j)
      residual = std::max(residual, (avecs.col(j) - ritz.values(j) * vecs.col(j)).norm() / scale);
    if (residual < opts.tolerance) {
      return {ritz.values.head(k), vecs};
    }
    q = Eigen::HouseholderQR<MatrixXd>(aq).householderQ() * MatrixXd::Identity(n, block);
  }
  throw NumericalError("top_k_eigen: no convergence after " + std::to_string(opts.max_iterations) +
                       " iterations, residual " + std::to_string(residual));
}

} // namespace symgeom
