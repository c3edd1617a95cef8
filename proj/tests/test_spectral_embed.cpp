#include <gtest/gtest.h>

#include <random>

#include "symgeom/lattice_theory.hpp"
#include "symgeom/spectral_embed.hpp"

using namespace symgeom;

namespace {

TargetMatrix wrap(MatrixXd v) {
  std::vector<std::string> labels;
  for (Eigen::Index i = 0; i < v.rows(); ++i) labels.push_back("w" + std::to_string(i));
  return {MatrixKind::kernel, std::move(v), {}, std::move(labels), ""};
}

MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  MatrixXd m(r, c);
  for (auto& x : m.reshaped()) x = g(rng);
  return m;
}

MatrixXd random_orthogonal(Eigen::Index n, std::uint64_t seed) {
  Eigen::HouseholderQR<MatrixXd> qr(random_matrix(n, n, seed));
  return qr.householderQ() * MatrixXd::Identity(n, n);
}

std::vector<std::string> months() {
  return {"january", "february", "march", "april", "may", "june",
          "july", "august", "september", "october", "november", "december"};
}

// Fourier-geometry month embeddings from the periodized exponential kernel.
EmbeddingSet month_embeddings(double sigma = 0.35) {
  auto lat = SemanticLattice::with_words(12, Boundary::periodic, months());
  auto m = lattice_kernel_matrix(lat, [&](double d) { return periodized_exponential(d, sigma); }, 2.0 / 12);
  return factorize(m, 12);
}

double toeplitz_deviation(const MatrixXd& g) {
  double worst = 0.0;
  for (Eigen::Index i = 1; i < g.rows(); ++i)
    for (Eigen::Index j = 1; j < g.cols(); ++j) worst = std::max(worst, std::abs(g(i, j) - g(i - 1, j - 1)));
  return worst;
}

} // namespace

TEST(Factorize, IdentityTarget) {
  auto e = factorize(wrap(MatrixXd::Identity(3, 3)), 3);
  EXPECT_LT((gram(e.W, false) - MatrixXd::Identity(3, 3)).norm(), 1e-14);
}

TEST(Factorize, PsdRecovery) {
  const MatrixXd a = random_matrix(20, 7, 1);
  const MatrixXd m = a * a.transpose();
  for (Eigen::Index d : {7, 10, 20}) {
    auto e = factorize(wrap(m), d);
    EXPECT_LT(relative_frobenius(gram(e.W, false), m), 1e-10);
  }
}

TEST(Factorize, MagnitudeOrderingPicksNegativeMode) {
  MatrixXd m = MatrixXd::Zero(2, 2);
  m(0, 0) = 1.0;
  m(1, 1) = -4.0;
  auto e = factorize(wrap(m), 1);
  EXPECT_DOUBLE_EQ(e.eigvals(0), -4.0);
  MatrixXd expect = MatrixXd::Zero(2, 2);
  expect(1, 1) = 4.0;
  EXPECT_LT((gram(e.W, false) - expect).norm(), 1e-14);
  auto v = factorize(wrap(m), 1, {ModeOrder::value});
  EXPECT_DOUBLE_EQ(v.eigvals(0), 1.0);
}

TEST(Factorize, RecomposeRestoresSigns) {
  const MatrixXd m = symmetrized(random_matrix(15, 15, 2));
  auto e = factorize(wrap(m), 15);
  EXPECT_LT(relative_frobenius(e.recompose(), m), 1e-12);
  EXPECT_LT((e.modes.transpose() * e.modes - MatrixXd::Identity(15, 15)).cwiseAbs().maxCoeff(), 1e-10);
  for (Eigen::Index j = 0; j < 15; ++j)
    EXPECT_NEAR(e.W.col(j).norm(), std::sqrt(std::abs(e.eigvals(j))), 1e-12);
}

TEST(Factorize, BoundaryTieReported) {
  auto e = month_embeddings();
  // Modes 2..3 are the first sin/cos pair; cutting at d = 2 splits it.
  EXPECT_TRUE(factorize(wrap(e.recompose()), 2).boundary_tie);
  EXPECT_FALSE(factorize(wrap(e.recompose()), 3).boundary_tie);
}

TEST(Factorize, IterativePathMatchesDense) {
  const MatrixXd a = random_matrix(60, 60, 3);
  const MatrixXd m = symmetrized(a);
  auto dense = factorize(wrap(m), 5);
  FactorizeOptions opts;
  opts.dense_limit = 10;
  auto iter = factorize(wrap(m), 5, opts);
  for (Eigen::Index j = 0; j < 5; ++j) EXPECT_NEAR(iter.eigvals(j), dense.eigvals(j), 1e-8);
  EXPECT_LT(max_principal_angle(iter.modes, dense.modes), 1e-6);
}

TEST(Factorize, RejectsZeroDimension) { EXPECT_THROW(factorize(wrap(MatrixXd::Identity(2, 2)), 0), UsageError); }

TEST(Project, CenteredGramMatchesInput) {
  const MatrixXd w = random_matrix(12, 5, 4);
  auto g = project_pca(w, {});
  const MatrixXd p = centering_matrix(12);
  EXPECT_LT(relative_frobenius(g.gram(), p * w * w.transpose() * p), 1e-10);
  const MatrixXd c = g.Wbar.transpose() * g.Wbar;
  for (Eigen::Index i = 0; i < c.rows(); ++i) {
    EXPECT_NEAR(std::sqrt(c(i, i)), g.singular_values(i), 1e-10);
    for (Eigen::Index j = 0; j < c.cols(); ++j)
      if (i != j) EXPECT_NEAR(c(i, j), 0.0, 1e-10);
  }
}

TEST(Project, SignConvention) {
  auto g = project_pca(random_matrix(10, 4, 5), {});
  for (Eigen::Index c = 0; c < g.Wbar.cols(); ++c) {
    Eigen::Index arg;
    g.Wbar.col(c).cwiseAbs().maxCoeff(&arg);
    EXPECT_GT(g.Wbar(arg, c), 0.0);
  }
}

TEST(Project, Idempotent) {
  auto g = project_pca(random_matrix(10, 4, 6), {});
  auto h = project_pca(g.Wbar, {});
  EXPECT_LT((h.Wbar - g.Wbar).norm(), 1e-10);
}

TEST(Project, ConstantRowsRejected) {
  MatrixXd w = MatrixXd::Ones(5, 3);
  EXPECT_THROW(project_pca(w, {}), DataError);
  EXPECT_THROW(project_pca(random_matrix(2, 2, 1), {"a", "b"}, {{"a"}}), DataError);
}

TEST(Project, MonthsAreSinusoidPairs) {
  auto e = month_embeddings();
  auto g = project_pca(e);
  const int L = 12;
  auto pred = periodized_exp_spectrum(L, 0.35);
  // Pair projectors, compared as subspaces.
  for (int pair = 0; pair < 5; ++pair) {
    MatrixXd empirical = g.Wbar.middleCols(2 * pair, 2);
    MatrixXd analytic = pred.samples.middleCols(1 + 2 * pair, 2);
    EXPECT_LT(max_principal_angle(empirical, analytic), 1e-8) << "pair " << pair;
  }
}

TEST(Project, ExcludingMayKeepsOthersGeometry) {
  auto e = month_embeddings();
  MatrixXd w = e.W + 0.01 * random_matrix(12, 12, 8);
  auto labels = months();
  auto with = project_pca(w, labels, {{"may"}});
  // Reference: the 11 remaining words alone.
  MatrixXd rest(11, w.cols());
  std::vector<std::string> rest_labels;
  for (int i = 0, r = 0; i < 12; ++i)
    if (labels[static_cast<std::size_t>(i)] != "may") {
      rest.row(r++) = w.row(i);
      rest_labels.push_back(labels[static_cast<std::size_t>(i)]);
    }
  auto alone = project_pca(rest, rest_labels);
  MatrixXd with_rest(11, with.Wbar.cols());
  for (int i = 0, r = 0; i < 12; ++i)
    if (i != 4) with_rest.row(r++) = with.Wbar.row(i);
  EXPECT_LT(relative_frobenius(with_rest * with_rest.transpose(), alone.gram()), 1e-10);
  EXPECT_THROW(project_pca(w, labels, {{"smarch"}}), DataError);
}

TEST(Gram, CenteredMonthsIsCirculantMinusConstant) {
  auto e = month_embeddings();
  const MatrixXd u = gram(e.W, false);
  const MatrixXd c = gram(e.W, true);
  // Centering a circulant Gram subtracts a multiple of the all-ones matrix.
  const MatrixXd diff = u - c;
  EXPECT_LT((diff.array() - diff(0, 0)).abs().maxCoeff(), 1e-12);
  EXPECT_LT(toeplitz_deviation(c), 1e-12);
}

TEST(Gram, AlwaysPsd) {
  const MatrixXd g = gram(random_matrix(8, 3, 9), true);
  EXPECT_GE(Eigen::SelfAdjointEigenSolver<MatrixXd>(g).eigenvalues().minCoeff(), -1e-12);
}

TEST(Gram, OpenBoundaryYearsToeplitz) {
  const int L = 80;
  auto lat = SemanticLattice::make(1, L, Boundary::open);
  auto m = lattice_kernel_matrix(lat, [](double d) { return std::exp(-d / 0.2); }, 2.0 / L);
  auto e = factorize(m, L);
  EXPECT_LT(toeplitz_deviation(gram(e.W, false)), 1e-8);
}

TEST(Procrustes, ExactRecovery) {
  const MatrixXd a = random_matrix(30, 4, 10);
  const MatrixXd q = random_orthogonal(4, 11);
  auto r = align_procrustes(a, a * q);
  EXPECT_LT(r.residual, 1e-10);
  EXPECT_LT((r.rotation - q).norm(), 1e-10);
}

TEST(Procrustes, ResidualGrowsWithNoise) {
  const MatrixXd a = random_matrix(40, 3, 12);
  double prev = -1.0;
  for (double sigma : {0.01, 0.03, 0.1, 0.3, 1.0}) {
    double mean = 0.0;
    for (std::uint64_t s = 0; s < 50; ++s) mean += align_procrustes(a, a + sigma * random_matrix(40, 3, 100 + s)).residual;
    EXPECT_GT(mean, prev);
    prev = mean;
  }
}

TEST(Procrustes, PadsAndRejectsZero) {
  const MatrixXd a = random_matrix(6, 2, 13);
  MatrixXd b(6, 3);
  b << a, MatrixXd::Zero(6, 1);
  EXPECT_LT(align_procrustes(a, b).residual, 1e-12);
  EXPECT_THROW(align_procrustes(MatrixXd::Zero(6, 2), b), DataError);
  EXPECT_THROW(align_procrustes(a, MatrixXd::Zero(5, 2)), DataError);
}
