#pragma once

// Linear coordinate decoding from rank-r PCA coordinates: OLS/ridge probes,
// the analytic error bound, and the train/test double-descent harness.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <thread>
#include <vector>

#include "symgeom/hash.hpp"
#include "symgeom/lattice_theory.hpp"
#include "symgeom/linalg.hpp"
#include "symgeom/spectral_embed.hpp"

namespace symgeom {

struct Probe {
  MatrixXd omega;          // r x D
  double ridge = 0.0;
  bool min_norm = false;   // ridgeless and rank deficient / underdetermined
};

// Thin SVD of a training design, reusable across ridge values.
struct ProbeDesign {
  MatrixXd U;
  VectorXd s;
  MatrixXd V;

  explicit ProbeDesign(const MatrixXd& w) {
    Eigen::BDCSVD<MatrixXd> svd(w, Eigen::ComputeThinU | Eigen::ComputeThinV);
    U = svd.matrixU();
    s = svd.singularValues();
    V = svd.matrixV();
  }

  Eigen::Index rank(double rel_tol) const {
    if (s.size() == 0 || s(0) == 0.0) return 0;
    Eigen::Index k = 0;
    while (k < s.size() && s(k) > rel_tol * s(0)) ++k;
    return k;
  }

  // argmin ||W Omega - X||^2 + ridge ||Omega||^2; ridge = 0 gives the
  // minimum-norm least-squares solution.
  Probe solve(const MatrixXd& x, double ridge) const {
    Probe p;
    p.ridge = ridge;
    const double tol = std::numeric_limits<double>::epsilon() * static_cast<double>(std::max(U.rows(), V.rows()));
    const Eigen::Index k = rank(tol);
    VectorXd filt = VectorXd::Zero(s.size());
    for (Eigen::Index i = 0; i < k; ++i) filt(i) = ridge == 0.0 ? 1.0 / s(i) : s(i) / (s(i) * s(i) + ridge);
    p.omega = V * filt.asDiagonal() * (U.transpose() * x);
    p.min_norm = ridge == 0.0 && (k < V.rows());
    return p;
  }
};

inline Probe fit_probe(const MatrixXd& w, const MatrixXd& x, double ridge) {
  if (ridge < 0.0) throw UsageError("fit_probe: ridge must be >= 0");
  if (w.rows() != x.rows()) throw DataError("fit_probe: embeddings and coordinates differ in row count");
  return ProbeDesign(w).solve(x, ridge);
}

// ||W Omega - X||_F^2 / ||X||_F^2.
inline double decoding_error(const MatrixXd& w, const MatrixXd& x, const MatrixXd& omega) {
  const double denom = x.squaredNorm();
  if (denom == 0.0) throw DataError("decoding_error: coordinates are all zero");
  return (w * omega - x).squaredNorm() / denom;
}

struct ProbeResult {
  int r = 0;
  double error = 0.0;
  Probe probe;
};

// Full-population probe on the top-r PCA coordinates. No intercept: the
// coordinates are expected to share the centering of the geometry.
inline ProbeResult decode_ols(const ProjectedGeometry& g, const MatrixXd& x, int r, double ridge = 0.0) {
  if (r < 1 || r > g.Wbar.cols()) throw UsageError("decode_ols: rank must be in [1, " + std::to_string(g.Wbar.cols()) + "]");
  const MatrixXd w = g.Wbar.leftCols(r);
  ProbeResult out;
  out.r = r;
  out.probe = fit_probe(w, x, ridge);
  out.error = decoding_error(w, x, out.probe.omega);
  return out;
}

inline double unit_sphere_volume(int D) {
  return std::pow(std::numbers::pi, D / 2.0) / std::tgamma(D / 2.0 + 1.0);
}

// (6/pi^2) (L^2/(L^2-1)) ((r/Vol_D)^(1/D) - sqrt(D)/2)^(-1).
inline double decoding_bound(double r, int L, int D) {
  if (L % 2 == 0) throw UsageError("decoding_bound: the bound is stated for odd L");
  if (D < 1) throw UsageError("decoding_bound: D must be >= 1");
  const double half = std::sqrt(static_cast<double>(D)) / 2.0;
  const double arg = std::pow(r / unit_sphere_volume(D), 1.0 / D) - half;
  // Vol_D comes from tgamma, so the r = 1, D = 1 edge lands near 1e-16 rather than 0.
  if (!(arg > 1e-12 * half)) throw DataError("decoding_bound: rank too small for bound");
  const double l2 = static_cast<double>(L) * L;
  return 6.0 / (std::numbers::pi * std::numbers::pi) * l2 / (l2 - 1.0) / arg;
}

// Closed form of sum_{x=-M}^{M} x sin(2 pi n x / L), L = 2M + 1.
inline double trig_sum_identity(int n, int L) {
  const double sign = n % 2 == 1 ? 1.0 : -1.0;
  return sign * L / (2.0 * std::sin(std::numbers::pi * n / L));
}

// Ranks that do not split a degenerate group of singular values.
inline std::vector<int> admissible_ranks(const VectorXd& singular_values, double rel_tol = 1e-8) {
  std::vector<int> out;
  const VectorXd sq = singular_values.array().square();
  for (auto [a, b] : degenerate_groups(sq, rel_tol)) out.push_back(static_cast<int>(b));
  return out;
}

// Full-population ridgeless errors at each rank. One Householder QR of the
// embeddings serves every prefix: the first r columns of Q span W_r, so the
// least-squares residual is ||X||^2 - ||Q_r^T X||^2. A column that is
// numerically dependent on its predecessors adds nothing.
inline std::vector<double> full_population_errors(const ProjectedGeometry& g, const MatrixXd& x,
                                                  const std::vector<int>& ranks) {
  if (x.rows() != g.Wbar.rows()) throw DataError("full_population_errors: coordinate rows do not match embeddings");
  const double denom = x.squaredNorm();
  if (denom == 0.0) throw DataError("full_population_errors: coordinates are all zero");
  Eigen::HouseholderQR<MatrixXd> qr(g.Wbar);
  const MatrixXd qtx = qr.householderQ().adjoint() * x;
  const MatrixXd& rr = qr.matrixQR();
  const Eigen::Index k = std::min(g.Wbar.rows(), g.Wbar.cols());
  const double tol = std::numeric_limits<double>::epsilon() * static_cast<double>(g.Wbar.rows()) *
                     (k ? rr.diagonal().head(k).cwiseAbs().maxCoeff() : 0.0);
  std::vector<double> captured(static_cast<std::size_t>(k) + 1, 0.0);
  for (Eigen::Index c = 0; c < k; ++c)
    captured[static_cast<std::size_t>(c) + 1] =
        captured[static_cast<std::size_t>(c)] + (std::abs(rr(c, c)) > tol ? qtx.row(c).squaredNorm() : 0.0);
  std::vector<double> out;
  for (int r : ranks) {
    if (r < 1 || r > g.Wbar.cols()) throw UsageError("full_population_errors: rank " + std::to_string(r) + " out of range");
    out.push_back(std::max(0.0, denom - captured[static_cast<std::size_t>(std::min<Eigen::Index>(r, k))]) / denom);
  }
  return out;
}

// Predicted PCA coordinates of a Fourier geometry: columns phi_mu a_mu with
// the constant mode removed; singular values are the amplitudes.
inline ProjectedGeometry predicted_geometry(const SpectralPrediction& p) {
  ProjectedGeometry g;
  g.Wbar = p.embedding(true);
  g.labels = p.labels;
  std::vector<double> s;
  for (const auto& m : p.modes)
    if (m.type != ModeType::constant) s.push_back(m.amplitude);
  g.singular_values = Eigen::Map<VectorXd>(s.data(), static_cast<Eigen::Index>(s.size()));
  return g;
}

// Log-log slope over the decade centered (geometrically) between the
// smallest and largest rank with nonzero error.
inline double middle_decade_slope(const std::vector<int>& ranks, const std::vector<double>& errors,
                                  double zero_tol = 1e-12) {
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (std::size_t i = 0; i < ranks.size(); ++i)
    if (errors[i] > zero_tol) {
      lo = std::min(lo, static_cast<double>(ranks[i]));
      hi = std::max(hi, static_cast<double>(ranks[i]));
    }
  const double c = std::sqrt(lo * hi);
  std::vector<double> xs, ys;
  for (std::size_t i = 0; i < ranks.size(); ++i)
    if (errors[i] > zero_tol && ranks[i] >= c / std::sqrt(10.0) && ranks[i] <= c * std::sqrt(10.0)) {
      xs.push_back(ranks[i]);
      ys.push_back(errors[i]);
    }
  if (xs.size() < 2) throw DataError("middle_decade_slope: fewer than two ranks in the middle decade");
  return loglog_slope(xs, ys);
}

struct DoubleDescentConfig {
  std::vector<int> ranks;
  int trials = 100;
  int n_train = 60;
  int n_test = 60;
  std::vector<double> ridge_grid;  // relative to the largest squared singular value; empty = default grid
  std::uint64_t seed = 7;
  unsigned threads = 0;            // 0 = hardware concurrency

  static std::vector<double> default_ridge_grid() {
    std::vector<double> g{0.0};
    for (int e = -12; e <= -1; ++e) g.push_back(std::pow(10.0, e));
    return g;
  }
};

struct RankCurve {
  int r = 0;
  double train_mean = 0, train_std = 0, test_mean = 0, test_std = 0;  // ridgeless
  double ridge_train_mean = 0, ridge_test_mean = 0, ridge_test_std = 0;
  double best_ridge = 0.0;  // relative ridge minimizing mean test error
};

struct DoubleDescentResult {
  std::vector<RankCurve> curves;
  std::vector<std::uint64_t> trial_seeds;
};

namespace detail {

inline double mean_of(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

inline double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

} // namespace detail

// Random train/test splits; per rank, ridgeless curves and the curve at the
// ridge value with the lowest mean test error.
inline DoubleDescentResult double_descent_experiment(const MatrixXd& w, const MatrixXd& x, const DoubleDescentConfig& cfg) {
  const Eigen::Index n = w.rows();
  if (cfg.n_train < 1 || cfg.n_test < 1 || n < cfg.n_train + cfg.n_test)
    throw DataError("double_descent_experiment: need at least train + test rows");
  if (x.rows() != n) throw DataError("double_descent_experiment: coordinate rows do not match embeddings");
  for (int r : cfg.ranks)
    if (r < 1 || r > w.cols()) throw UsageError("double_descent_experiment: rank " + std::to_string(r) + " out of range");
  const auto grid = cfg.ridge_grid.empty() ? DoubleDescentConfig::default_ridge_grid() : cfg.ridge_grid;
  if (std::find(grid.begin(), grid.end(), 0.0) == grid.end())
    throw UsageError("double_descent_experiment: ridge grid must include 0");

  const std::size_t R = cfg.ranks.size(), G = grid.size(), T = static_cast<std::size_t>(cfg.trials);
  // errors[trial][rank][ridge] for train and test
  std::vector<double> train(T * R * G), test(T * R * G);
  DoubleDescentResult out;
  for (std::size_t t = 0; t < T; ++t) out.trial_seeds.push_back(mix_seed(cfg.seed, t));

  auto run_trial = [&](std::size_t t) {
    std::mt19937_64 rng(out.trial_seeds[t]);
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    // Fisher-Yates with an explicit bounded draw, so splits are identical on every platform.
    for (std::size_t i = perm.size() - 1; i > 0; --i) {
      const std::uint64_t bound = i + 1;
      const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
      std::uint64_t v;
      do v = rng(); while (v >= limit);
      std::swap(perm[i], perm[static_cast<std::size_t>(v % bound)]);
    }
    MatrixXd wtr(cfg.n_train, w.cols()), xtr(cfg.n_train, x.cols()), wte(cfg.n_test, w.cols()), xte(cfg.n_test, x.cols());
    for (int i = 0; i < cfg.n_train; ++i) {
      wtr.row(i) = w.row(perm[static_cast<std::size_t>(i)]);
      xtr.row(i) = x.row(perm[static_cast<std::size_t>(i)]);
    }
    for (int i = 0; i < cfg.n_test; ++i) {
      wte.row(i) = w.row(perm[static_cast<std::size_t>(cfg.n_train + i)]);
      xte.row(i) = x.row(perm[static_cast<std::size_t>(cfg.n_train + i)]);
    }
    for (std::size_t ri = 0; ri < R; ++ri) {
      const int r = cfg.ranks[ri];
      const ProbeDesign design(wtr.leftCols(r));
      const double scale = design.s.size() ? design.s(0) * design.s(0) : 0.0;
      for (std::size_t gi = 0; gi < G; ++gi) {
        const Probe p = design.solve(xtr, grid[gi] * scale);
        const std::size_t k = (t * R + ri) * G + gi;
        train[k] = decoding_error(wtr.leftCols(r), xtr, p.omega);
        test[k] = decoding_error(wte.leftCols(r), xte, p.omega);
      }
    }
  };

  unsigned threads = cfg.threads ? cfg.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(T, 1)));
  std::vector<std::thread> pool;
  for (unsigned k = 0; k < threads; ++k)
    pool.emplace_back([&, k] {
      for (std::size_t t = k; t < T; t += threads) run_trial(t);
    });
  for (auto& th : pool) th.join();

  const std::size_t zero = static_cast<std::size_t>(std::find(grid.begin(), grid.end(), 0.0) - grid.begin());
  for (std::size_t ri = 0; ri < R; ++ri) {
    auto column = [&](const std::vector<double>& src, std::size_t gi) {
      std::vector<double> v;
      for (std::size_t t = 0; t < T; ++t) v.push_back(src[(t * R + ri) * G + gi]);
      return v;
    };
    RankCurve c;
    c.r = cfg.ranks[ri];
    c.train_mean = detail::mean_of(column(train, zero));
    c.train_std = detail::std_of(column(train, zero));
    c.test_mean = detail::mean_of(column(test, zero));
    c.test_std = detail::std_of(column(test, zero));
    std::size_t best = zero;
    double best_mean = c.test_mean;
    for (std::size_t gi = 0; gi < G; ++gi) {
      const double m = detail::mean_of(column(test, gi));
      if (m < best_mean) {
        best_mean = m;
        best = gi;
      }
    }
    c.best_ridge = grid[best];
    c.ridge_test_mean = best_mean;
    c.ridge_test_std = detail::std_of(column(test, best));
    c.ridge_train_mean = detail::mean_of(column(train, best));
    out.curves.push_back(c);
  }
  return out;
}

} // namespace symgeom
