#pragma once

// Latent lattices, reciprocal-lattice wavevectors, and closed-form predictions
// of embedding geometry under translation-symmetric kernels.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "symgeom/linalg.hpp"
#include "symgeom/matrix_builder.hpp"

namespace symgeom {

enum class Boundary { periodic, open };

inline std::string to_string(Boundary b) { return b == Boundary::periodic ? "periodic" : "open"; }

inline Boundary boundary_from_string(const std::string& s) {
  if (s == "periodic") return Boundary::periodic;
  if (s == "open") return Boundary::open;
  throw UsageError("unknown boundary condition '" + s + "' (periodic|open)");
}

// Centered index set: {-L/2, ..., L/2-1} for even L, {-(L-1)/2, ..., (L-1)/2} for odd L.
inline int centered_index_min(int L) { return L % 2 == 0 ? -L / 2 : -(L - 1) / 2; }

struct SemanticLattice {
  int D = 1;
  int L = 1;
  Boundary bc = Boundary::periodic;
  std::vector<std::vector<int>> indices;  // n_i, first axis varies slowest
  MatrixXd coords;                        // x_i = 2 n_i / L
  std::vector<std::string> words;         // optional: words[i] sits on site i

  static SemanticLattice make(int D, int L, Boundary bc) {
    if (D < 1 || L < 1) throw UsageError("lattice needs D >= 1 and L >= 1");
    SemanticLattice lat;
    lat.D = D;
    lat.L = L;
    lat.bc = bc;
    std::size_t total = 1;
    for (int a = 0; a < D; ++a) total *= static_cast<std::size_t>(L);
    lat.coords.resize(static_cast<Eigen::Index>(total), D);
    const int lo = centered_index_min(L);
    for (std::size_t s = 0; s < total; ++s) {
      std::vector<int> n(static_cast<std::size_t>(D));
      std::size_t rem = s;
      for (int a = D - 1; a >= 0; --a) {
        n[static_cast<std::size_t>(a)] = lo + static_cast<int>(rem % static_cast<std::size_t>(L));
        rem /= static_cast<std::size_t>(L);
      }
      for (int a = 0; a < D; ++a)
        lat.coords(static_cast<Eigen::Index>(s), a) = 2.0 * n[static_cast<std::size_t>(a)] / L;
      lat.indices.push_back(std::move(n));
    }
    return lat;
  }

  static SemanticLattice with_words(int L, Boundary bc, std::vector<std::string> words) {
    SemanticLattice lat = make(1, L, bc);
    if (static_cast<int>(words.size()) != L) throw DataError("lattice word list must have one word per site");
    lat.words = std::move(words);
    return lat;
  }

  Eigen::Index size() const { return coords.rows(); }

  std::optional<Eigen::Index> site_of(const std::string& word) const {
    auto it = std::find(words.begin(), words.end(), word);
    if (it == words.end()) return std::nullopt;
    return static_cast<Eigen::Index>(it - words.begin());
  }

  // Per-axis displacement in coordinate units (minimum image for periodic).
  double axis_delta(Eigen::Index i, Eigen::Index j, int axis) const {
    double d = coords(i, axis) - coords(j, axis);
    if (bc == Boundary::periodic) d -= 2.0 * std::round(d / 2.0);
    return d;
  }

  double distance(Eigen::Index i, Eigen::Index j) const {
    double s = 0.0;
    for (int a = 0; a < D; ++a) s += axis_delta(i, j, a) * axis_delta(i, j, a);
    return std::sqrt(s);
  }

  // Riemann weight of one site, (2/L)^D.
  double site_measure() const { return std::pow(2.0 / L, D); }

  std::vector<std::string> site_labels() const {
    if (!words.empty()) return words;
    std::vector<std::string> out;
    for (Eigen::Index i = 0; i < size(); ++i) out.push_back("site" + std::to_string(i));
    return out;
  }
};

enum class ModeType { sin_pair, cos_pair, self_conjugate, constant, open_odd, open_even };

inline std::string to_string(ModeType t) {
  switch (t) {
    case ModeType::sin_pair: return "sin-pair";
    case ModeType::cos_pair: return "cos-pair";
    case ModeType::self_conjugate: return "self-conjugate";
    case ModeType::constant: return "constant";
    case ModeType::open_odd: return "open-odd";
    case ModeType::open_even: return "open-even";
  }
  return "unknown";
}

// Wavevectors k = pi n ordered as conjugate pairs (k+, k-), then nonzero
// self-conjugate modes, then k = 0.
struct WavevectorSet {
  int D = 1;
  std::vector<std::vector<int>> n;
  std::size_t pairs = 0;           // P
  std::size_t self_conjugate = 0;  // S

  std::size_t size() const { return n.size(); }
  std::vector<double> k(std::size_t mu) const {
    std::vector<double> out;
    for (int c : n.at(mu)) out.push_back(std::numbers::pi * c);
    return out;
  }
};

inline std::vector<int> periodized_negation(const std::vector<int>& n, int L) {
  const int lo = centered_index_min(L);
  std::vector<int> out;
  for (int c : n) out.push_back(((-c - lo) % L + L) % L + lo);
  return out;
}

// Representative of the pair {n, ⊖n}. For odd L this is the half-space with
// first nonzero component positive; for even L a component at -L/2 is its own
// negation, so the tie is broken lexicographically.
inline bool positive_half_space(const std::vector<int>& n, int L) {
  return n > periodized_negation(n, L);
}

inline WavevectorSet enumerate_wavevectors(const SemanticLattice& lat) {
  if (lat.bc != Boundary::periodic) throw UsageError("enumerate_wavevectors: requires periodic boundary conditions");
  auto norm2 = [](const std::vector<int>& v) {
    long s = 0;
    for (int c : v) s += static_cast<long>(c) * c;
    return s;
  };
  std::vector<std::vector<int>> plus, sc;
  for (const auto& n : lat.indices) {
    const bool zero = std::all_of(n.begin(), n.end(), [](int c) { return c == 0; });
    if (zero) continue;
    const auto neg = periodized_negation(n, lat.L);
    if (neg == n) sc.push_back(n);
    else if (positive_half_space(n, lat.L)) plus.push_back(n);
  }
  auto by_norm = [&](const std::vector<int>& a, const std::vector<int>& b) {
    return norm2(a) != norm2(b) ? norm2(a) < norm2(b) : a > b;
  };
  std::sort(plus.begin(), plus.end(), by_norm);
  std::sort(sc.begin(), sc.end(), by_norm);
  WavevectorSet w;
  w.D = lat.D;
  for (const auto& p : plus) {
    w.n.push_back(p);
    w.n.push_back(periodized_negation(p, lat.L));
  }
  for (const auto& s : sc) w.n.push_back(s);
  w.n.push_back(std::vector<int>(static_cast<std::size_t>(lat.D), 0));
  w.pairs = plus.size();
  w.self_conjugate = sc.size();
  return w;
}

struct ModePrediction {
  int mu = 0;                // 1-based rank after sorting
  std::vector<double> k;     // wavevector (or wavenumber for D = 1)
  double lambda = 0.0;       // eigenvalue of the lattice operator
  double amplitude = 0.0;    // sqrt|lambda|
  double norm = 0.0;         // normalization applied to the sampled mode
  ModeType type = ModeType::constant;
  double residual = 0.0;     // quantization residual (open BC only)
};

struct SpectralPrediction {
  std::vector<ModePrediction> modes;  // |lambda| descending; pairs stay adjacent
  MatrixXd samples;                   // unit-norm (or asymptotically unit-norm) mode vectors at the sites
  std::vector<std::string> labels;

  // Column mu: samples * amplitude. The constant mode is annihilated by
  // centering and is dropped when `centered` is set.
  MatrixXd embedding(bool centered = true) const {
    std::vector<Eigen::Index> cols;
    for (std::size_t m = 0; m < modes.size(); ++m)
      if (!(centered && modes[m].type == ModeType::constant)) cols.push_back(static_cast<Eigen::Index>(m));
    MatrixXd out(samples.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c)
      out.col(static_cast<Eigen::Index>(c)) = samples.col(cols[c]) * modes[static_cast<std::size_t>(cols[c])].amplitude;
    return out;
  }

  MatrixXd gram(bool centered = true) const {
    MatrixXd g = MatrixXd::Zero(samples.rows(), samples.rows());
    for (std::size_t m = 0; m < modes.size(); ++m) {
      if (centered && modes[m].type == ModeType::constant) continue;
      const VectorXd v = samples.col(static_cast<Eigen::Index>(m));
      g += modes[m].lambda * v * v.transpose();
    }
    return g;
  }
};

namespace detail {

// Sorts modes by |lambda| descending, moving each conjugate pair as a unit.
inline SpectralPrediction sort_prediction(std::vector<ModePrediction> modes, const MatrixXd& samples,
                                          std::vector<std::string> labels) {
  struct Unit {
    std::size_t first, count;
    double key;
  };
  std::vector<Unit> units;
  for (std::size_t m = 0; m < modes.size();) {
    const std::size_t c = modes[m].type == ModeType::sin_pair ? 2 : 1;
    units.push_back({m, c, std::abs(modes[m].lambda)});
    m += c;
  }
  std::stable_sort(units.begin(), units.end(), [](const Unit& a, const Unit& b) { return a.key > b.key; });
  SpectralPrediction out;
  out.samples.resize(samples.rows(), samples.cols());
  out.labels = std::move(labels);
  Eigen::Index col = 0;
  for (const auto& u : units)
    for (std::size_t c = 0; c < u.count; ++c, ++col) {
      ModePrediction mp = modes[u.first + c];
      mp.mu = static_cast<int>(col) + 1;
      out.samples.col(col) = samples.col(static_cast<Eigen::Index>(u.first + c));
      out.modes.push_back(std::move(mp));
    }
  return out;
}

} // namespace detail

// Lattice samples of a kernel of distance, m(x_i) = scale * C(dist(x_i, 0)),
// and the transfer function tilde m(k) = sum_x m(x) cos(k . x).
inline VectorXd kernel_samples(const SemanticLattice& lat, const std::function<double(double)>& kernel,
                               double scale = 1.0) {
  // Site whose index vector is all zeros.
  Eigen::Index origin = 0;
  for (Eigen::Index i = 0; i < lat.size(); ++i)
    if (lat.coords.row(i).cwiseAbs().maxCoeff() == 0.0) origin = i;
  VectorXd m(lat.size());
  for (Eigen::Index i = 0; i < lat.size(); ++i) m(i) = scale * kernel(lat.distance(i, origin));
  return m;
}

inline double transfer_function(const SemanticLattice& lat, const VectorXd& samples, const std::vector<double>& k) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < lat.size(); ++i) {
    double phase = 0.0;
    for (int a = 0; a < lat.D; ++a) phase += k[static_cast<std::size_t>(a)] * lat.coords(i, a);
    s += samples(i) * std::cos(phase);
  }
  return s;
}

// H_ij = scale * C(dist(x_i, x_j)); the numerical counterpart of the predictions.
inline TargetMatrix lattice_kernel_matrix(const SemanticLattice& lat, const std::function<double(double)>& kernel,
                                          double scale = 1.0) {
  const Eigen::Index n = lat.size();
  TargetMatrix m{MatrixKind::kernel, MatrixXd(n, n), {}, lat.site_labels(), "lattice-kernel"};
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i; j < n; ++j) m.values(i, j) = m.values(j, i) = scale * kernel(lat.distance(i, j));
  return m;
}

namespace detail {

inline SpectralPrediction fourier_prediction(const SemanticLattice& lat, const std::function<double(const std::vector<double>&)>& transfer) {
  const WavevectorSet w = enumerate_wavevectors(lat);
  const auto n_sites = static_cast<double>(lat.size());
  MatrixXd samples(lat.size(), static_cast<Eigen::Index>(w.size()));
  std::vector<ModePrediction> modes;
  for (std::size_t mu = 0; mu < w.size(); ++mu) {
    ModePrediction mp;
    mp.k = w.k(mu);
    const bool in_pairs = mu < 2 * w.pairs;
    // Both members of a pair are built from k+, which fixes the sign of sin.
    const std::vector<double> wave = in_pairs ? w.k(mu - (mu % 2)) : mp.k;
    if (in_pairs) {
      mp.type = mu % 2 == 0 ? ModeType::sin_pair : ModeType::cos_pair;
      mp.norm = std::sqrt(2.0 / n_sites);
    } else if (mu < 2 * w.pairs + w.self_conjugate) {
      mp.type = ModeType::self_conjugate;
      mp.norm = std::sqrt(1.0 / n_sites);
    } else {
      mp.type = ModeType::constant;
      mp.norm = std::sqrt(1.0 / n_sites);
    }
    mp.lambda = transfer(mp.k);
    mp.amplitude = std::sqrt(std::abs(mp.lambda));
    for (Eigen::Index i = 0; i < lat.size(); ++i) {
      double phase = 0.0;
      for (int a = 0; a < lat.D; ++a) phase += wave[static_cast<std::size_t>(a)] * lat.coords(i, a);
      samples(i, static_cast<Eigen::Index>(mu)) =
          mp.norm * (mp.type == ModeType::sin_pair ? std::sin(phase) : std::cos(phase));
    }
    modes.push_back(std::move(mp));
  }
  return sort_prediction(std::move(modes), samples, lat.site_labels());
}

} // namespace detail

// Fourier geometry of a periodic lattice from kernel samples m(x).
inline SpectralPrediction predict_fourier_geometry(const SemanticLattice& lat, const VectorXd& samples) {
  if (lat.bc != Boundary::periodic) throw UsageError("predict_fourier_geometry: requires periodic boundary conditions");
  if (samples.size() != lat.size()) throw DataError("predict_fourier_geometry: one kernel sample per site required");
  return detail::fourier_prediction(lat, [&](const std::vector<double>& k) { return transfer_function(lat, samples, k); });
}

inline SpectralPrediction predict_fourier_geometry(const SemanticLattice& lat,
                                                   const std::function<double(double)>& kernel, double scale = 1.0) {
  return predict_fourier_geometry(lat, kernel_samples(lat, kernel, scale));
}

// Fourier geometry from a prescribed transfer function tilde m(k).
inline SpectralPrediction predict_fourier_geometry(const SemanticLattice& lat,
                                                   const std::function<double(const std::vector<double>&)>& transfer) {
  if (lat.bc != Boundary::periodic) throw UsageError("predict_fourier_geometry: requires periodic boundary conditions");
  return detail::fourier_prediction(lat, transfer);
}

// sum_n exp(-|dx + 2n| / sigma), evaluated in closed form.
inline double periodized_exponential(double dx, double sigma) {
  double d = std::fmod(std::abs(dx), 2.0);
  d = std::min(d, 2.0 - d);
  return std::exp(-d / sigma) * (1.0 + std::exp(-2.0 * (1.0 - d) / sigma)) / (-std::expm1(-2.0 / sigma));
}

// Transfer function of the periodized exponential kernel on an L-site ring
// with site weight 2/L:  (2/L) (1 - q^2) / (1 - 2 q cos(2k/L) + q^2),  q = exp(-2/(sigma L)).
inline double periodized_exp_transfer(double k, int L, double sigma) {
  const double q = std::exp(-2.0 / (sigma * L));
  return (2.0 / L) * (1.0 - q * q) / (1.0 - 2.0 * q * std::cos(2.0 * k / L) + q * q);
}

// Continuum-limit amplitude sqrt(2 sigma / (1 + sigma^2 k^2)).
inline double continuum_amplitude(double k, double sigma) {
  return std::sqrt(2.0 * sigma / (1.0 + sigma * sigma * k * k));
}

inline SpectralPrediction periodized_exp_spectrum(int L, double sigma) {
  if (!(sigma > 0.0)) throw UsageError("periodized_exp_spectrum: sigma must be > 0");
  const SemanticLattice lat = SemanticLattice::make(1, L, Boundary::periodic);
  return detail::fourier_prediction(lat, [&](const std::vector<double>& k) { return periodized_exp_transfer(k[0], L, sigma); });
}

// Open boundary, exponential kernel exp(-|dx|/sigma).

namespace detail {

// k - rhs(k) for the quantization condition of mode mu.
inline double open_quantization_gap(double k, int mu, double sigma) {
  if (mu % 2 == 1) return k - ((mu + 1) * std::numbers::pi / 2.0 - std::atan(sigma * k));
  return k - (mu * std::numbers::pi / 2.0 + std::atan(k / (1.0 + sigma * (1.0 + sigma) * k * k)));
}

} // namespace detail

inline double open_mode_norm(double k, bool odd) {
  if (odd) return std::sqrt(0.5 - std::sin(2.0 * k) / (4.0 * k));
  const double sinc = std::sin(k) / k;
  return std::sqrt(0.5 + std::sin(2.0 * k) / (4.0 * k) - sinc * sinc);
}

// Continuum eigenfunction of the centered operator, normalized so that
// (1/2) int_{-1}^{1} phi^2 dx = 1.
inline double open_mode_value(const ModePrediction& m, double x) {
  const double k = m.k.at(0);
  if (m.type == ModeType::open_odd) return std::sin(k * x) / m.norm;
  return (std::cos(k * x) - std::sin(k) / k) / m.norm;
}

// Solves the quantization conditions by bisection on their bracketing
// intervals: odd mu in (mu pi/2, (mu+1) pi/2), even mu likewise.
inline std::vector<ModePrediction> solve_open_bc_modes(double sigma, int n_modes) {
  if (!(sigma > 0.0)) throw UsageError("solve_open_bc_modes: sigma must be > 0");
  if (n_modes < 1) throw UsageError("solve_open_bc_modes: need at least one mode");
  std::vector<ModePrediction> out;
  for (int mu = 1; mu <= n_modes; ++mu) {
    double lo = mu * std::numbers::pi / 2.0;
    double hi = (mu + 1) * std::numbers::pi / 2.0;
    double glo = detail::open_quantization_gap(lo, mu, sigma);
    double ghi = detail::open_quantization_gap(hi, mu, sigma);
    if (!(glo < 0.0 && ghi > 0.0))
      throw NumericalError("solve_open_bc_modes: root not bracketed for mode " + std::to_string(mu) + " in [" +
                           std::to_string(lo) + ", " + std::to_string(hi) + "], gaps " + std::to_string(glo) + ", " +
                           std::to_string(ghi));
    for (int it = 0; it < 200 && hi - lo > 0.0; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (mid == lo || mid == hi) break;
      const double g = detail::open_quantization_gap(mid, mu, sigma);
      if (g == 0.0) {
        lo = hi = mid;
        break;
      }
      (g < 0.0 ? lo : hi) = mid;
    }
    const double k = std::abs(detail::open_quantization_gap(lo, mu, sigma)) <=
                             std::abs(detail::open_quantization_gap(hi, mu, sigma))
                         ? lo
                         : hi;
    ModePrediction mp;
    mp.mu = mu;
    mp.k = {k};
    mp.type = mu % 2 == 1 ? ModeType::open_odd : ModeType::open_even;
    mp.norm = open_mode_norm(k, mu % 2 == 1);
    mp.lambda = 2.0 * sigma / (1.0 + sigma * sigma * k * k);
    mp.amplitude = std::sqrt(mp.lambda);
    mp.residual = std::abs(detail::open_quantization_gap(k, mu, sigma));
    if (mp.residual > 1e-12)
      throw NumericalError("solve_open_bc_modes: residual " + std::to_string(mp.residual) + " for mode " +
                           std::to_string(mu));
    out.push_back(std::move(mp));
  }
  return out;
}

// Mode samples at the lattice sites, scaled by 1/sqrt(L) so that each column
// has unit norm as L grows; the embedding is samples * a_mu.
inline SpectralPrediction predict_open_geometry(int L, double sigma, int n_modes) {
  const SemanticLattice lat = SemanticLattice::make(1, L, Boundary::open);
  auto modes = solve_open_bc_modes(sigma, n_modes);
  SpectralPrediction p;
  p.labels = lat.site_labels();
  p.samples.resize(lat.size(), n_modes);
  for (int m = 0; m < n_modes; ++m)
    for (Eigen::Index i = 0; i < lat.size(); ++i)
      p.samples(i, m) = open_mode_value(modes[static_cast<std::size_t>(m)], lat.coords(i, 0)) / std::sqrt(static_cast<double>(L));
  p.modes = std::move(modes);
  return p;
}

// Exponential kernel amplitude * C(d / sigma) + shift.
struct ExponentialKernel {
  double sigma = 1.0;
  double amplitude = 1.0;
  double shift = 0.0;
  bool periodized = false;

  double operator()(double d) const {
    const double base = periodized ? periodized_exponential(d, sigma) : std::exp(-std::abs(d) / sigma);
    return amplitude * base + shift;
  }
};

// M_ij = amplitude exp(-d_ij / sigma) + shift, d_ij^2 = sum_a w_a (dx_a)^2.
inline TargetMatrix kernel_matrix_points(const MatrixXd& points, const ExponentialKernel& kernel,
                                         const VectorXd& axis_weights, std::vector<std::string> labels = {}) {
  if (!(kernel.sigma > 0.0)) throw UsageError("kernel_matrix_points: sigma must be > 0");
  if (axis_weights.size() != points.cols()) throw DataError("kernel_matrix_points: one weight per coordinate axis");
  const Eigen::Index n = points.rows();
  if (labels.empty())
    for (Eigen::Index i = 0; i < n; ++i) labels.push_back("p" + std::to_string(i));
  TargetMatrix m{MatrixKind::kernel, MatrixXd(n, n), {}, std::move(labels), "point-kernel"};
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i; j < n; ++j) {
      const VectorXd diff = (points.row(i) - points.row(j)).transpose();
      if (i != j && diff.cwiseAbs().maxCoeff() == 0.0)
        throw DataError("kernel_matrix_points: duplicate point at rows " + std::to_string(i) + " and " + std::to_string(j));
      const double d = std::sqrt((diff.array().square() * axis_weights.array()).sum());
      m.values(i, j) = m.values(j, i) = kernel(d);
    }
  return m;
}

} // namespace symgeom
