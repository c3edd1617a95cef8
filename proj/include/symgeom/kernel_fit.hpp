#pragma once

// Exponential kernel fits to per-distance statistics of a lattice-mapped
// target matrix.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <string>
#include <vector>

#include "symgeom/lattice_theory.hpp"

namespace symgeom {

struct DistanceBin {
  int steps = 0;          // lattice steps (minimum image for periodic)
  double distance = 0.0;  // in [-1, 1] coordinate units, 2 * steps / L
  double mean = 0.0;
  double stddev = 0.0;    // population standard deviation
  std::size_t count = 0;
};

struct KernelStats {
  std::vector<DistanceBin> bins;  // ascending distance; bin 0 is the diagonal
  Boundary bc = Boundary::periodic;
  int L = 0;
};

// Groups the entries of `m` by lattice distance between the words' sites.
inline KernelStats empirical_kernel(const TargetMatrix& m, const SemanticLattice& lat) {
  if (lat.D != 1) throw UsageError("empirical_kernel: lattice must be one-dimensional");
  if (lat.words.empty()) throw UsageError("empirical_kernel: lattice has no word map");
  std::vector<Eigen::Index> site(static_cast<std::size_t>(m.size()));
  std::string unmapped;
  for (std::size_t a = 0; a < site.size(); ++a) {
    auto s = lat.site_of(m.labels.at(a));
    if (!s) unmapped += (unmapped.empty() ? "" : ", ") + m.labels[a];
    else site[a] = *s;
  }
  if (!unmapped.empty()) throw DataError("empirical_kernel: words not on the lattice: " + unmapped);

  std::map<int, std::vector<double>> groups;
  for (Eigen::Index a = 0; a < m.size(); ++a)
    for (Eigen::Index b = 0; b < m.size(); ++b) {
      int steps = static_cast<int>(std::abs(lat.indices[static_cast<std::size_t>(site[static_cast<std::size_t>(a)])][0] -
                                            lat.indices[static_cast<std::size_t>(site[static_cast<std::size_t>(b)])][0]));
      if (lat.bc == Boundary::periodic) steps = std::min(steps, lat.L - steps);
      groups[steps].push_back(m.values(a, b));
    }
  KernelStats out;
  out.bc = lat.bc;
  out.L = lat.L;
  for (const auto& [steps, vals] : groups) {
    DistanceBin b;
    b.steps = steps;
    b.distance = 2.0 * steps / lat.L;
    b.count = vals.size();
    for (double v : vals) b.mean += v;
    b.mean /= static_cast<double>(vals.size());
    for (double v : vals) b.stddev += (v - b.mean) * (v - b.mean);
    b.stddev = std::sqrt(b.stddev / static_cast<double>(vals.size()));
    out.bins.push_back(b);
  }
  return out;
}

struct FitOptions {
  bool periodized = false;
  bool fit_shift = false;
  bool exclude_diagonal = true;
  int max_iterations = 200;
};

struct KernelFit {
  ExponentialKernel kernel;
  std::vector<DistanceBin> bins;  // all bins, including any excluded from the fit
  double residual = 0.0;          // RMS over fitted bins
  bool diagonal_included = false;
  int iterations = 0;
};

namespace detail {

inline double kernel_base(double d, double sigma, bool periodized) {
  return periodized ? periodized_exponential(d, sigma) : std::exp(-d / sigma);
}

} // namespace detail

// Unweighted least squares on the per-distance means. Parameters are
// (amplitude, log sigma[, shift]); the seed comes from a straight-line fit of
// log(mean - shift) against distance.
inline KernelFit fit_exponential(const KernelStats& stats, const FitOptions& opts = {}) {
  std::vector<double> d, y;
  for (const auto& b : stats.bins) {
    if (opts.exclude_diagonal && b.steps == 0) continue;
    d.push_back(b.distance);
    y.push_back(b.mean);
  }
  const std::size_t n = d.size();
  const std::size_t p = opts.fit_shift ? 3 : 2;
  if (n < 3 || n < p) throw DataError("fit_exponential: need at least 3 distance bins, have " + std::to_string(n));

  // Seed.
  const double lo = *std::min_element(y.begin(), y.end());
  const double hi = *std::max_element(y.begin(), y.end());
  double shift = opts.fit_shift ? lo - 0.05 * std::max(hi - lo, 1e-12) : 0.0;
  double sx = 0, sy = 0, sxx = 0, sxy = 0, m = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (y[k] - shift <= 0.0) continue;
    const double ly = std::log(y[k] - shift);
    sx += d[k];
    sy += ly;
    sxx += d[k] * d[k];
    sxy += d[k] * ly;
    m += 1;
  }
  double log_sigma = std::log(0.5 * (d.back() - d.front() + 1e-12));
  double amp = hi - shift;
  if (m >= 2 && m * sxx - sx * sx > 0) {
    const double slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
    if (slope < 0) {
      log_sigma = std::log(-1.0 / slope);
      amp = std::exp((sy - slope * sx) / m);
    }
  }
  if (opts.periodized) amp *= -std::expm1(-2.0 / std::exp(log_sigma));

  VectorXd theta(p);
  theta(0) = amp;
  theta(1) = log_sigma;
  if (opts.fit_shift) theta(2) = shift;

  auto residuals = [&](const VectorXd& th) {
    VectorXd r(static_cast<Eigen::Index>(n));
    const double sigma = std::exp(th(1));
    for (std::size_t k = 0; k < n; ++k)
      r(static_cast<Eigen::Index>(k)) = th(0) * detail::kernel_base(d[k], sigma, opts.periodized) +
                                        (opts.fit_shift ? th(2) : 0.0) - y[k];
    return r;
  };
  auto jacobian = [&](const VectorXd& th) {
    MatrixXd j(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
    const double sigma = std::exp(th(1));
    const double h = 1e-6;
    for (std::size_t k = 0; k < n; ++k) {
      const auto r = static_cast<Eigen::Index>(k);
      j(r, 0) = detail::kernel_base(d[k], sigma, opts.periodized);
      if (opts.periodized)
        j(r, 1) = th(0) * (detail::kernel_base(d[k], std::exp(th(1) + h), true) -
                           detail::kernel_base(d[k], std::exp(th(1) - h), true)) / (2 * h);
      else
        j(r, 1) = th(0) * j(r, 0) * d[k] / sigma;
      if (opts.fit_shift) j(r, 2) = 1.0;
    }
    return j;
  };

  double cost = residuals(theta).squaredNorm();
  double damping = 1e-3;
  int it = 0;
  bool converged = false;
  std::string trace;
  for (; it < opts.max_iterations; ++it) {
    const MatrixXd J = jacobian(theta);
    const VectorXd r = residuals(theta);
    const MatrixXd jtj = J.transpose() * J;
    const VectorXd g = J.transpose() * r;
    if (g.cwiseAbs().maxCoeff() <= 1e-15 * std::max(1.0, cost)) {
      converged = true;
      break;
    }
    bool accepted = false;
    for (int tries = 0; tries < 40 && !accepted; ++tries) {
      MatrixXd a = jtj;
      a.diagonal() += damping * jtj.diagonal().cwiseMax(1e-12);
      const VectorXd step = a.ldlt().solve(-g);
      const VectorXd next = theta + step;
      const double next_cost = residuals(next).squaredNorm();
      if (std::isfinite(next_cost) && next_cost <= cost) {
        const double drop = cost - next_cost;
        theta = next;
        cost = next_cost;
        damping = std::max(damping / 3.0, 1e-12);
        accepted = true;
        if (step.norm() <= 1e-12 * (1.0 + theta.norm()) || drop <= 1e-16 * std::max(cost, 1e-300)) converged = true;
      } else {
        damping *= 4.0;
      }
    }
    if (it < 8) trace += (trace.empty() ? "" : ", ") + std::to_string(std::sqrt(cost / static_cast<double>(n)));
    if (!accepted) {
      converged = true;  // no descent direction left at machine precision
      break;
    }
    if (converged) break;
  }
  if (!converged || !std::isfinite(cost))
    throw NumericalError("fit_exponential: did not converge after " + std::to_string(it) +
                         " iterations; RMS residual trace " + trace);

  KernelFit fit;
  fit.kernel = {std::exp(theta(1)), theta(0), opts.fit_shift ? theta(2) : 0.0, opts.periodized};
  if (!(fit.kernel.sigma > 0.0) || !std::isfinite(fit.kernel.sigma))
    throw NumericalError("fit_exponential: fitted sigma is not positive and finite");
  fit.bins = stats.bins;
  fit.residual = std::sqrt(cost / static_cast<double>(n));
  fit.diagonal_included = !opts.exclude_diagonal;
  fit.iterations = it + 1;
  return fit;
}

// sigma in [-1, 1] lattice units to natural units, given the natural length
// spanned by the lattice (the period T for periodic lattices).
inline double sigma_to_natural(double sigma, double span) { return sigma * span / 2.0; }
inline double sigma_from_natural(double sigma, double span) { return 2.0 * sigma / span; }

} // namespace symgeom
