#pragma once

// Embeddings from the signed spectrum of a target matrix, PCA projection of
// word subsets, and Procrustes alignment.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "symgeom/linalg.hpp"
#include "symgeom/matrix_builder.hpp"

namespace symgeom {

struct EmbeddingSet {
  MatrixXd W;          // rows are word vectors, W_{i mu} = Phi_{i mu} sqrt|lambda_mu|
  VectorXd eigvals;    // signed, in selection order
  MatrixXd modes;      // orthonormal columns
  std::vector<std::string> labels;
  std::vector<TokenId> subset;
  ModeOrder order = ModeOrder::magnitude;
  bool boundary_tie = false;  // truncation splits a degenerate group

  Eigen::Index dim() const { return W.cols(); }

  // sum_mu lambda_mu phi_mu phi_mu^T with signs restored.
  MatrixXd recompose() const { return modes * eigvals.asDiagonal() * modes.transpose(); }
};

struct FactorizeOptions {
  ModeOrder order = ModeOrder::magnitude;
  Eigen::Index dense_limit = 5000;
  double tie_tolerance = 1e-8;
};

// Top-d modes of a symmetric target. With ModeOrder::value only the
// positive part is representable, so negative selections get zero amplitude.
inline EmbeddingSet factorize(const TargetMatrix& m, Eigen::Index d, const FactorizeOptions& opts = {}) {
  if (d < 1) throw UsageError("factorize: dimension must be >= 1");
  const Eigen::Index n = m.size();
  if (n == 0) throw DataError("factorize: empty matrix");
  d = std::min(d, n);
  SymmetricEigen eig;
  bool full = true;
  if (n <= opts.dense_limit) {
    eig = eigen_symmetric(m.values, opts.order);
  } else {
    if (opts.order != ModeOrder::magnitude) throw UsageError("factorize: iterative solver supports magnitude order only");
    const Eigen::Index k = std::min(n, d + 1);
    eig = top_k_eigen([&](const MatrixXd& x) { return MatrixXd(m.values * x); }, n, k);
    full = k == n;
  }
  EmbeddingSet e;
  e.order = opts.order;
  e.eigvals = eig.values.head(d);
  e.modes = eig.vectors.leftCols(d);
  e.labels = m.labels;
  e.subset = m.subset;
  VectorXd amp(d);
  for (Eigen::Index j = 0; j < d; ++j)
    amp(j) = opts.order == ModeOrder::magnitude ? std::sqrt(std::abs(e.eigvals(j))) : std::sqrt(std::max(0.0, e.eigvals(j)));
  e.W = e.modes * amp.asDiagonal();
  if (d < eig.values.size() || (!full && d < n)) {
    const double scale = std::max(std::abs(eig.values(0)), 1e-300);
    const double a = opts.order == ModeOrder::magnitude ? std::abs(eig.values(d - 1)) : eig.values(d - 1);
    const double b = opts.order == ModeOrder::magnitude ? std::abs(eig.values(d)) : eig.values(d);
    e.boundary_tie = std::abs(a - b) <= opts.tie_tolerance * scale;
  }
  return e;
}

inline MatrixXd gram(const MatrixXd& W, bool centered) {
  if (!centered) return W * W.transpose();
  const MatrixXd c = W.rowwise() - W.colwise().mean();
  return c * c.transpose();
}

struct ProjectedGeometry {
  MatrixXd Wbar;                 // |S| x r PCA coordinates
  VectorXd singular_values;      // of the centered, non-excluded rows
  bool centered = true;
  std::vector<std::string> labels;
  std::vector<std::string> excluded;

  MatrixXd gram() const { return Wbar * Wbar.transpose(); }
};

struct ProjectOptions {
  std::vector<std::string> exclude;
  bool center = true;
  double rank_tolerance = 1e-12;  // relative to the largest singular value
};

// PCA coordinates. The mean and the singular basis come from non-excluded
// rows only; excluded rows are then expressed in that basis. Each column is
// signed so that its largest-|entry| (among non-excluded rows) is positive.
inline ProjectedGeometry project_pca(const MatrixXd& W, const std::vector<std::string>& labels,
                                     const ProjectOptions& opts = {}) {
  if (!labels.empty() && static_cast<Eigen::Index>(labels.size()) != W.rows())
    throw DataError("project_pca: label count does not match rows");
  std::vector<char> skip(static_cast<std::size_t>(W.rows()), 0);
  for (const auto& x : opts.exclude) {
    auto it = std::find(labels.begin(), labels.end(), x);
    if (it == labels.end()) throw DataError("project_pca: excluded word '" + x + "' not in subset");
    skip[static_cast<std::size_t>(it - labels.begin())] = 1;
  }
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < W.rows(); ++i)
    if (!skip[static_cast<std::size_t>(i)]) keep.push_back(i);
  if (keep.size() < 2) throw DataError("project_pca: need at least two non-excluded rows");

  MatrixXd kept(static_cast<Eigen::Index>(keep.size()), W.cols());
  for (std::size_t a = 0; a < keep.size(); ++a) kept.row(static_cast<Eigen::Index>(a)) = W.row(keep[a]);
  Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(W.cols());
  if (opts.center) mean = kept.colwise().mean();
  kept = kept.rowwise() - mean;

  Eigen::BDCSVD<MatrixXd> svd(kept, Eigen::ComputeThinV);
  const VectorXd& s = svd.singularValues();
  Eigen::Index rank = 0;
  while (rank < s.size() && s(rank) > opts.rank_tolerance * std::max(s(0), 1e-300) && s(rank) > 0.0) ++rank;
  if (rank == 0 || s(0) == 0.0) throw DataError("project_pca: centered embeddings have rank 0");

  MatrixXd basis = svd.matrixV().leftCols(rank);
  MatrixXd coords = (W.rowwise() - mean) * basis;
  for (Eigen::Index c = 0; c < rank; ++c) {
    Eigen::Index arg = keep.front();
    for (auto i : keep)
      if (std::abs(coords(i, c)) > std::abs(coords(arg, c))) arg = i;
    if (coords(arg, c) < 0) coords.col(c) *= -1.0;
  }
  ProjectedGeometry g;
  g.Wbar = std::move(coords);
  g.singular_values = s.head(rank);
  g.centered = opts.center;
  g.labels = labels;
  g.excluded = opts.exclude;
  return g;
}

inline ProjectedGeometry project_pca(const EmbeddingSet& e, const ProjectOptions& opts = {}) {
  return project_pca(e.W, e.labels, opts);
}

struct ProcrustesResult {
  MatrixXd rotation;   // orthogonal Q minimizing ||A Q - B||_F
  double residual;     // ||A Q - B||_F / ||B||_F
};

// Orthogonal Procrustes. The narrower matrix is padded with zero columns.
inline ProcrustesResult align_procrustes(MatrixXd a, MatrixXd b) {
  if (a.rows() != b.rows()) throw DataError("align_procrustes: row counts differ");
  const Eigen::Index cols = std::max(a.cols(), b.cols());
  if (a.cols() < cols) a.conservativeResizeLike(MatrixXd::Zero(a.rows(), cols));
  if (b.cols() < cols) b.conservativeResizeLike(MatrixXd::Zero(b.rows(), cols));
  if (a.norm() == 0.0 || b.norm() == 0.0) throw DataError("align_procrustes: degenerate (zero) input");
  Eigen::JacobiSVD<MatrixXd> svd(a.transpose() * b, Eigen::ComputeFullU | Eigen::ComputeFullV);
  ProcrustesResult r;
  r.rotation = svd.matrixU() * svd.matrixV().transpose();
  r.residual = (a * r.rotation - b).norm() / b.norm();
  return r;
}

} // namespace symgeom
