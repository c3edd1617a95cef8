#pragma once

// Seasonal latent-variable model: words modulated by a periodic latent t,
// its exact circulant PMI, the combined seasonal + binary-attribute model,
// a corpus sampler and the block-ablation / helper-word experiments.

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "symgeom/corpus_stats.hpp"
#include "symgeom/hash.hpp"
#include "symgeom/linalg.hpp"
#include "symgeom/matrix_builder.hpp"
#include "symgeom/spectral_embed.hpp"

namespace symgeom {

enum class ModulationFamily { gaussian, cosine };

inline std::string to_string(ModulationFamily f) { return f == ModulationFamily::gaussian ? "gaussian" : "cosine"; }

inline ModulationFamily modulation_family_from_string(const std::string& s) {
  if (s == "gaussian") return ModulationFamily::gaussian;
  if (s == "cosine") return ModulationFamily::cosine;
  throw UsageError("unknown modulation family '" + s + "' (gaussian|cosine)");
}

// Unit-height modulation shape: periodic with period T, even, zero mean, g(0) = 1.
// The gaussian family is a wrapped Gaussian of the given width with its mean
// over one period subtracted.
struct ModulationShape {
  ModulationFamily family = ModulationFamily::gaussian;
  double period = 12.0;
  double width = 1.5;

  double wrapped(double t) const {
    const int m = static_cast<int>(std::ceil(10.0 * width / period)) + 1;
    double s = 0.0;
    for (int j = -m; j <= m; ++j) {
      const double u = t - j * period;
      s += std::exp(-u * u / (2.0 * width * width));
    }
    return s;
  }

  double operator()(double t) const {
    if (family == ModulationFamily::cosine) return std::cos(2.0 * std::numbers::pi * t / period);
    const double mean = width * std::sqrt(2.0 * std::numbers::pi) / period;
    return (wrapped(t) - mean) / (wrapped(0.0) - mean);
  }

  void validate(int points = 4096) const {
    if (!(period > 0.0)) throw UsageError("modulation: period must be positive");
    if (family == ModulationFamily::gaussian && !(width > 0.0)) throw UsageError("modulation: width must be positive");
    if (family == ModulationFamily::gaussian && width < 4.0 * period / points)
      throw UsageError("modulation: width too small for the quadrature grid");
    double mean = 0.0, asym = 0.0;
    for (int q = 0; q < points; ++q) {
      const double t = -period / 2 + period * q / points;
      mean += (*this)(t) / points;
      asym = std::max(asym, std::abs((*this)(t) - (*this)(-t)));
    }
    if (std::abs(mean) > 1e-10) throw DataError("modulation: mean over one period is not zero");
    if (asym > 1e-10) throw DataError("modulation: shape is not symmetric");
  }
};

// Circular autocorrelation (1/T) int g(u) g(u + delta) du of a unit-height
// shape, from trapezoid-rule Fourier coefficients of g.
class CircularAutocorrelation {
public:
  CircularAutocorrelation() = default;

  explicit CircularAutocorrelation(const ModulationShape& g, int points = 4096) : period_(g.period) {
    std::vector<double> samples(static_cast<std::size_t>(points));
    for (int q = 0; q < points; ++q) samples[static_cast<std::size_t>(q)] = g(-g.period / 2 + g.period * q / points);
    double largest = 0.0;
    int quiet = 0;
    for (int k = 0; k < points / 2 && quiet < 8; ++k) {
      double a = 0.0, b = 0.0;
      for (int q = 0; q < points; ++q) {
        const double phase = 2.0 * std::numbers::pi * k * (-0.5 + static_cast<double>(q) / points);
        a += samples[static_cast<std::size_t>(q)] * std::cos(phase);
        b += samples[static_cast<std::size_t>(q)] * std::sin(phase);
      }
      a /= points;
      b /= points;
      const double power = (k == 0 ? 1.0 : 2.0) * (a * a + b * b);
      weights_.push_back(power);
      largest = std::max(largest, power);
      quiet = power <= 1e-22 * largest ? quiet + 1 : 0;
    }
  }

  double operator()(double delta) const {
    double s = 0.0;
    for (std::size_t k = 0; k < weights_.size(); ++k)
      s += weights_[k] * std::cos(2.0 * std::numbers::pi * static_cast<double>(k) * delta / period_);
    return s;
  }

  // Weight of cos(2 pi k delta / T) in the series.
  const std::vector<double>& weights() const { return weights_; }

private:
  double period_ = 1.0;
  std::vector<double> weights_;
};

struct SeasonalModel {
  ModulationShape shape;
  std::vector<std::string> words;
  std::vector<double> centers;
  std::vector<double> heights;  // per-word modulation height h_i; 0 means non-seasonal
  std::vector<double> base;     // P(i)

  std::size_t size() const { return words.size(); }
  double period() const { return shape.period; }

  // N words at t_i = (i/N - 1/2) T, common height, uniform P(i) = 1/N.
  static SeasonalModel equispaced(int n, double period, double width, double height,
                                  ModulationFamily family = ModulationFamily::gaussian,
                                  const std::string& prefix = "w") {
    if (n < 1) throw UsageError("seasonal model: need at least one word");
    SeasonalModel m;
    m.shape = {family, period, width};
    const int digits = static_cast<int>(std::to_string(n - 1).size());
    for (int i = 0; i < n; ++i) {
      std::ostringstream name;
      name << prefix << std::setw(digits) << std::setfill('0') << i;
      m.add_word(name.str(), (static_cast<double>(i) / n - 0.5) * period, height);
    }
    return m;
  }

  void add_word(std::string word, double center, double height, double p = 1.0) {
    words.push_back(std::move(word));
    centers.push_back(center);
    heights.push_back(height);
    base.push_back(p);
  }

  void normalize_base() {
    double s = 0.0;
    for (double p : base) s += p;
    for (double& p : base) p /= s;
  }

  // Unnormalized P(i | t).
  double conditional(std::size_t i, double t) const { return base[i] * (1.0 + heights[i] * shape(t - centers[i])); }

  std::vector<Eigen::Index> indices_of(const std::vector<std::string>& names) const {
    std::vector<Eigen::Index> out;
    for (const auto& n : names) {
      auto it = std::find(words.begin(), words.end(), n);
      if (it == words.end()) throw DataError("seasonal model: no word '" + n + "'");
      out.push_back(it - words.begin());
    }
    return out;
  }

  void validate() const {
    shape.validate();
    const std::size_t n = words.size();
    if (n == 0) throw DataError("seasonal model: no words");
    if (centers.size() != n || heights.size() != n || base.size() != n)
      throw DataError("seasonal model: per-word arrays have inconsistent lengths");
    for (std::size_t i = 0; i < n; ++i) {
      if (!(base[i] > 0.0)) throw DataError("seasonal model: P(" + words[i] + ") must be positive");
      if (heights[i] < 0.0) throw DataError("seasonal model: negative height for " + words[i]);
    }
  }

  // Needed to sample; the PMI formula itself only needs 1 + K~ > 0.
  void check_nonnegative() const {
    double lo = 0.0;
    for (int q = 0; q < 4096; ++q) lo = std::min(lo, shape(-period() / 2 + period() * q / 4096));
    for (std::size_t i = 0; i < size(); ++i)
      if (1.0 + heights[i] * lo < 0.0)
        throw DataError("seasonal model: P(" + words[i] + " | t) goes negative; lower the height");
  }
};

// K~_ij = h_i h_j K~(t_i - t_j), the modulation overlap of words i and j.
inline MatrixXd seasonal_overlap(const SeasonalModel& m) {
  m.validate();
  const CircularAutocorrelation ac(m.shape);
  const auto n = static_cast<Eigen::Index>(m.size());
  MatrixXd k(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i; j < n; ++j) {
      const auto a = static_cast<std::size_t>(i), b = static_cast<std::size_t>(j);
      k(i, j) = k(j, i) = m.heights[a] * m.heights[b] * ac(m.centers[a] - m.centers[b]);
    }
  return k;
}

namespace detail {

inline void check_overlap(const MatrixXd& k) {
  const double lo = k.minCoeff();
  if (1.0 + lo <= 0.0)
    throw DataError("modulation too strong: 1 + K~ = " + std::to_string(1.0 + lo) + " <= 0 at some separation");
}

} // namespace detail

// PMI(i, j) = log(1 + K~(t_i - t_j)).
inline TargetMatrix seasonal_pmi(const SeasonalModel& m) {
  MatrixXd k = seasonal_overlap(m);
  detail::check_overlap(k);
  return {MatrixKind::pmi, k.array().log1p().matrix(), {}, m.words, "seasonal-model"};
}

// M* of the same joint: P_ij / (P_i P_j) = 1 + K~.
inline TargetMatrix seasonal_mstar(const SeasonalModel& m) {
  MatrixXd k = seasonal_overlap(m);
  detail::check_overlap(k);
  return {MatrixKind::mstar, (2.0 * k.array() / (2.0 + k.array())).matrix(), {}, m.words, "seasonal-model"};
}

inline double circulant_deviation(const MatrixXd& k) {
  const Eigen::Index n = k.rows();
  double worst = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) worst = std::max(worst, std::abs(k(i, j) - k((i + 1) % n, (j + 1) % n)));
  return worst;
}

// Real orthonormal Fourier basis vector for DFT index k on N points:
// constant for k = 0, cos for 0 < k < N/2, sin of N - k for k > N/2,
// alternating signs for k = N/2.
inline VectorXd fourier_mode_real(Eigen::Index n, Eigen::Index k) {
  VectorXd v(n);
  const double w = 2.0 * std::numbers::pi / static_cast<double>(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    if (k == 0) v(j) = 1.0;
    else if (2 * k == n) v(j) = (j % 2 == 0) ? 1.0 : -1.0;
    else if (2 * k < n) v(j) = std::cos(w * static_cast<double>(k * j));
    else v(j) = std::sin(w * static_cast<double>((n - k) * j));
  }
  return v.normalized();
}

struct CirculantSpectrum {
  VectorXd mu;            // mu(k), k = 0..N-1 (mu(k) = mu(N-k))
  double max_imag = 0.0;  // largest imaginary part before it was dropped

  Eigen::Index size() const { return mu.size(); }
  // Signed frequency of DFT index k.
  Eigen::Index frequency(Eigen::Index k) const { return 2 * k <= mu.size() ? k : k - mu.size(); }
  MatrixXd basis() const {
    MatrixXd b(mu.size(), mu.size());
    for (Eigen::Index k = 0; k < mu.size(); ++k) b.col(k) = fourier_mode_real(mu.size(), k);
    return b;
  }
};

// mu_k = sum_j exp(2 pi i k j / N) K(0, j).
inline CirculantSpectrum circulant_spectrum(const MatrixXd& k, double tol = 1e-10) {
  if (k.rows() != k.cols() || k.rows() == 0) throw DataError("circulant_spectrum: matrix must be square");
  const double scale = std::max(1.0, k.cwiseAbs().maxCoeff());
  const double dev = circulant_deviation(k);
  if (dev > tol * scale)
    throw DataError("circulant_spectrum: matrix is not circulant (deviation " + std::to_string(dev) + ")");
  const Eigen::Index n = k.rows();
  CirculantSpectrum s;
  s.mu.resize(n);
  for (Eigen::Index f = 0; f < n; ++f) {
    std::complex<double> acc = 0.0;
    for (Eigen::Index j = 0; j < n; ++j)
      acc += std::polar(1.0, 2.0 * std::numbers::pi * static_cast<double>((f * j) % n) / static_cast<double>(n)) * k(0, j);
    s.mu(f) = acc.real();
    s.max_imag = std::max(s.max_imag, std::abs(acc.imag()));
  }
  if (s.max_imag > tol * scale * static_cast<double>(n))
    throw DataError("circulant_spectrum: spectrum is not real (matrix is not symmetric)");
  return s;
}

inline CirculantSpectrum circulant_spectrum(const TargetMatrix& m, double tol = 1e-10) {
  return circulant_spectrum(m.values, tol);
}

struct AttributeModel {
  std::vector<double> strengths;  // s_r in (-1, 1)

  int d() const { return static_cast<int>(strengths.size()); }
  double alpha(int r) const {
    const double s = strengths.at(static_cast<std::size_t>(r));
    return 0.5 * (std::log1p(s) + std::log1p(-s));
  }
  double beta(int r) const {
    const double s = strengths.at(static_cast<std::size_t>(r));
    return 0.5 * (std::log1p(s) - std::log1p(-s));
  }
  double A() const {
    double a = 0.0;
    for (int r = 0; r < d(); ++r) a += alpha(r);
    return a;
  }
  void validate() const {
    if (d() > 20) throw UsageError("attribute model: too many attributes");
    for (double s : strengths)
      if (!(s > -1.0 && s < 1.0)) throw DataError("attribute model: strengths must lie in (-1, 1)");
  }
};

// a_r = 1 - 2 * (bit r of the attribute index).
inline int attribute_sign(unsigned bits, int r) { return ((bits >> r) & 1u) ? -1 : 1; }

// psi_S(a) = prod_{r in S} a_r.
inline int walsh_character(unsigned subset, unsigned bits) { return (std::popcount(subset & bits) % 2 == 0) ? 1 : -1; }

// Combined PMI over N * 2^d items, item index x * 2^d + bits:
// K_t(x, y) + A + sum_r beta_r a_r b_r.
inline TargetMatrix combined_model_matrix(const MatrixXd& kt, const AttributeModel& attrs, std::size_t size_guard = 6000) {
  attrs.validate();
  const Eigen::Index n = kt.rows();
  const Eigen::Index q = Eigen::Index{1} << attrs.d();
  if (static_cast<std::size_t>(n * q) > size_guard)
    throw UsageError("combined model: " + std::to_string(n * q) + " items exceed the size guard " +
                     std::to_string(size_guard));
  MatrixXd kattr(q, q);
  for (Eigen::Index a = 0; a < q; ++a)
    for (Eigen::Index b = 0; b < q; ++b) {
      double s = 0.0;
      for (int r = 0; r < attrs.d(); ++r)
        s += attrs.beta(r) * attribute_sign(static_cast<unsigned>(a), r) * attribute_sign(static_cast<unsigned>(b), r);
      kattr(a, b) = s;
    }
  const double A = attrs.A();
  TargetMatrix out;
  out.kind = MatrixKind::pmi;
  out.values.resize(n * q, n * q);
  for (Eigen::Index x = 0; x < n; ++x)
    for (Eigen::Index y = 0; y < n; ++y) out.values.block(x * q, y * q, q, q) = (kt(x, y) + A) * MatrixXd::Ones(q, q) + kattr;
  for (Eigen::Index x = 0; x < n; ++x)
    for (Eigen::Index a = 0; a < q; ++a) {
      std::string bits;
      for (int r = 0; r < attrs.d(); ++r) bits += attribute_sign(static_cast<unsigned>(a), r) > 0 ? '+' : '-';
      out.labels.push_back("x" + std::to_string(x) + (bits.empty() ? "" : ":" + bits));
    }
  out.provenance = "combined-model;d=" + std::to_string(attrs.d());
  return out;
}

struct CombinedMode {
  double value;
  Eigen::Index k;   // DFT index of the seasonal factor
  unsigned subset;  // Walsh subset S as a bit mask
};

// Closed-form eigenvalues of the combined model given the seasonal spectrum.
inline std::vector<CombinedMode> combined_model_spectrum(const VectorXd& mu, const AttributeModel& attrs) {
  attrs.validate();
  const double q = std::ldexp(1.0, attrs.d());
  const auto n = static_cast<double>(mu.size());
  const double A = attrs.A();
  std::vector<CombinedMode> out;
  for (Eigen::Index k = 0; k < mu.size(); ++k)
    for (unsigned s = 0; s < (1u << attrs.d()); ++s) {
      double v = 0.0;
      if (s == 0) v = q * mu(k) + (k == 0 ? A * n * q : 0.0);
      else if (k == 0 && std::popcount(s) == 1) v = n * q * attrs.beta(std::countr_zero(s));
      out.push_back({v, k, s});
    }
  return out;
}

// Phi_{k,S}(x, a) = phi_k(x) psi_S(a), normalized.
inline VectorXd combined_mode_vector(Eigen::Index n, int d, Eigen::Index k, unsigned subset) {
  const VectorXd phi = fourier_mode_real(n, k);
  const Eigen::Index q = Eigen::Index{1} << d;
  VectorXd v(n * q);
  for (Eigen::Index x = 0; x < n; ++x)
    for (Eigen::Index a = 0; a < q; ++a) v(x * q + a) = phi(x) * walsh_character(subset, static_cast<unsigned>(a));
  return v / std::sqrt(static_cast<double>(q));
}

struct SampleOptions {
  std::size_t n_tokens = 1000000;
  int window = 10;  // tokens per latent draw; count with the same window
  std::uint64_t seed = 0;
  unsigned threads = 0;
  int table_points = 1 << 14;
  std::size_t chunk_blocks = 4096;  // blocks sharing one derived seed
};

struct SampledCorpus {
  Vocabulary vocab;
  std::vector<Document> blocks;  // one document per latent draw
};

namespace detail {

inline double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

// Box-Muller; std::normal_distribution is not specified bit-for-bit.
inline double standard_normal(std::mt19937_64& rng) {
  const double u = 1.0 - unit_uniform(rng);
  const double v = unit_uniform(rng);
  return std::sqrt(-2.0 * std::log(u)) * std::cos(2.0 * std::numbers::pi * v);
}

} // namespace detail

// Blocks of `window` tokens, each drawn i.i.d. from P(. | t) for one uniform
// t; P(. | t) is renormalized at every t. Output depends only on the seed.
inline SampledCorpus sample_corpus(const SeasonalModel& m, const SampleOptions& opts) {
  m.validate();
  m.check_nonnegative();
  if (opts.n_tokens < 1) throw UsageError("sample_corpus: need at least one token");
  if (opts.window < 1) throw UsageError("sample_corpus: window must be >= 1");
  const double T = m.period();
  const int G = opts.table_points;
  std::vector<double> table(static_cast<std::size_t>(G) + 1);
  for (int q = 0; q <= G; ++q) table[static_cast<std::size_t>(q)] = m.shape(-T / 2 + T * q / G);
  auto shape_at = [&](double t) {
    double u = (t + T / 2) / T;
    u -= std::floor(u);
    const double pos = u * G;
    const auto q = std::min(static_cast<std::size_t>(pos), static_cast<std::size_t>(G) - 1);
    const double f = pos - static_cast<double>(q);
    return (1.0 - f) * table[q] + f * table[q + 1];
  };

  const std::size_t n = m.size();
  const auto w = static_cast<std::size_t>(opts.window);
  const std::size_t n_blocks = (opts.n_tokens + w - 1) / w;
  const std::size_t n_chunks = (n_blocks + opts.chunk_blocks - 1) / opts.chunk_blocks;
  std::vector<Document> blocks(n_blocks);

  auto run_chunk = [&](std::size_t c) {
    std::mt19937_64 rng(mix_seed(opts.seed, c));
    std::vector<double> cdf(n);
    const std::size_t end = std::min(n_blocks, (c + 1) * opts.chunk_blocks);
    for (std::size_t b = c * opts.chunk_blocks; b < end; ++b) {
      const double t = -T / 2 + T * detail::unit_uniform(rng);
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        acc += std::max(0.0, m.base[i] * (1.0 + m.heights[i] * shape_at(t - m.centers[i])));
        cdf[i] = acc;
      }
      const std::size_t len = (b + 1 == n_blocks) ? opts.n_tokens - b * w : w;
      Document& doc = blocks[b];
      doc.resize(len);
      for (auto& tok : doc) {
        const double u = detail::unit_uniform(rng) * acc;
        const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
        tok = static_cast<TokenId>(std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), n - 1));
      }
    }
  };

  unsigned threads = opts.threads ? opts.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, n_chunks));
  if (threads <= 1) {
    for (std::size_t c = 0; c < n_chunks; ++c) run_chunk(c);
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t)
      pool.emplace_back([&, t] {
        for (std::size_t c = t; c < n_chunks; c += threads) run_chunk(c);
      });
    for (auto& th : pool) th.join();
  }

  std::vector<std::uint64_t> counts(n, 0);
  for (const auto& d : blocks)
    for (TokenId tok : d) ++counts[static_cast<std::size_t>(tok)];
  std::vector<std::pair<std::string, std::uint64_t>> items;
  for (std::size_t i = 0; i < n; ++i) items.emplace_back(m.words[i], counts[i]);
  return {Vocabulary::from_list(items), std::move(blocks)};
}

// One line per block, space separated.
inline std::string corpus_text(const SampledCorpus& c) {
  std::string out;
  for (const auto& d : c.blocks) {
    for (std::size_t k = 0; k < d.size(); ++k) {
      if (k) out += ' ';
      out += c.vocab.token(d[k]);
    }
    out += '\n';
  }
  return out;
}

// Angular order of 2-D points (counterclockwise from the first point's angle).
// Empty when the geometry is degenerate: a point at the origin, or all points
// collinear through it.
inline std::vector<Eigen::Index> circular_order(const MatrixXd& pts) {
  if (pts.cols() < 2 || pts.rows() < 3) return {};
  const double scale = pts.leftCols(2).rowwise().norm().maxCoeff();
  if (!(scale > 0.0)) return {};
  std::vector<double> angle(static_cast<std::size_t>(pts.rows()));
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    if (pts.row(i).head(2).norm() < 1e-9 * scale) return {};
    angle[static_cast<std::size_t>(i)] = std::atan2(pts(i, 1), pts(i, 0));
  }
  std::vector<Eigen::Index> order(angle.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<Eigen::Index>(i);
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    return angle[static_cast<std::size_t>(a)] < angle[static_cast<std::size_t>(b)];
  });
  for (std::size_t i = 0; i + 1 < order.size(); ++i)
    if (angle[static_cast<std::size_t>(order[i + 1])] - angle[static_cast<std::size_t>(order[i])] < 1e-12) return {};
  return order;
}

// True when the angular order of the rows is 0, 1, ..., n-1 up to rotation
// and reflection.
inline bool circular_order_recovered(const MatrixXd& pts) {
  const auto order = circular_order(pts);
  const auto n = static_cast<Eigen::Index>(order.size());
  if (n == 0) return false;
  for (int dir : {1, -1}) {
    bool ok = true;
    for (Eigen::Index i = 0; i + 1 < n && ok; ++i) ok = ((order[static_cast<std::size_t>(i + 1)] - order[static_cast<std::size_t>(i)]) * dir % n + n) % n == 1;
    if (ok) return true;
  }
  return false;
}

struct AblationReport {
  Eigen::Index d_embed = 0;
  std::vector<double> group_angles;  // largest principal angle per degenerate group of the top d modes (rad)
  double top_pair_angle = 0.0;       // top non-constant pair, before vs after (rad)
  double procrustes_residual = 0.0;  // block rows, after aligned to before
  double gram_pearson = 0.0;         // centered block Gram after ablation vs original block
  MatrixXd original_block;
  MatrixXd gram_after;
  MatrixXd block_coords;             // top-2 PCA coordinates of the block rows after ablation
  bool order_recovered = false;
};

namespace detail {

// First two modes (in the factorization's order) that are not mostly constant.
inline MatrixXd top_nonconstant_pair(const EmbeddingSet& e) {
  const Eigen::Index n = e.modes.rows();
  const VectorXd ones = VectorXd::Ones(n) / std::sqrt(static_cast<double>(n));
  MatrixXd out(n, 2);
  int found = 0;
  for (Eigen::Index c = 0; c < e.modes.cols() && found < 2; ++c)
    if (std::pow(e.modes.col(c).dot(ones), 2) < 0.5) out.col(found++) = e.modes.col(c);
  if (found < 2) throw DataError("ablation: fewer than two non-constant modes in the embedding");
  return out;
}

inline VectorXd flatten(const MatrixXd& m) { return Eigen::Map<const VectorXd>(m.data(), m.size()); }

inline MatrixXd rows_of(const MatrixXd& m, const std::vector<Eigen::Index>& rows) {
  MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

} // namespace detail

// Sets the block x block entries to zero (independence), re-factorizes at
// d_embed and compares with the unablated factorization. `block` must list
// the block words in their true circular order.
inline AblationReport robustness_ablation(const TargetMatrix& m, const std::vector<Eigen::Index>& block,
                                          Eigen::Index d_embed) {
  if (block.size() < 3) throw UsageError("ablation: block needs at least 3 words");
  for (auto b : block)
    if (b < 0 || b >= m.size()) throw DataError("ablation: block index out of range");
  AblationReport rep;
  rep.d_embed = d_embed;
  const auto before = factorize(m, d_embed);
  const auto after = factorize(ablate_matrix_block(m, block), d_embed);
  for (auto [a, b] : degenerate_groups(before.eigvals.cwiseAbs())) {
    if (b == before.eigvals.size() && before.boundary_tie) break;  // group cut by d_embed
    rep.group_angles.push_back(max_principal_angle(before.modes.middleCols(a, b - a), after.modes.middleCols(a, b - a)));
  }
  rep.top_pair_angle = max_principal_angle(detail::top_nonconstant_pair(before), detail::top_nonconstant_pair(after));

  const MatrixXd wb = detail::rows_of(before.W, block);
  const MatrixXd wa = detail::rows_of(after.W, block);
  rep.procrustes_residual = (wa.norm() > 0.0 && wb.norm() > 0.0) ? align_procrustes(wa, wb).residual : 1.0;

  rep.original_block = detail::rows_of(detail::rows_of(m.values, block).transpose(), block);
  rep.gram_after = gram(wa, true);
  rep.gram_pearson = pearson(detail::flatten(rep.gram_after), detail::flatten(rep.original_block));
  try {
    auto g = project_pca(wa, {});
    rep.block_coords = g.Wbar.leftCols(std::min<Eigen::Index>(2, g.Wbar.cols()));
    rep.order_recovered = circular_order_recovered(rep.block_coords);
  } catch (const DataError&) {
    rep.order_recovered = false;  // block rows carry no geometry
  }
  return rep;
}

struct SeasonalityScore {
  std::string word;
  std::complex<double> score;
  double magnitude = 0.0;
  double phase = 0.0;         // in (-pi, pi]
  double month_center = 0.0;  // phase * 12 / (2 pi), wrapped to [0, 12)
};

// A = Q_words pinv(Q_months), score = sum_m A(., m) exp(2 pi i m / 12), sorted
// by |score|, largest first.
inline std::vector<SeasonalityScore> seasonality_scores(const MatrixXd& q_words, const std::vector<std::string>& words,
                                                        const MatrixXd& q_months, double max_condition = 1e8) {
  if (q_words.cols() != q_months.cols()) throw DataError("seasonality_scores: embedding dimensions differ");
  if (static_cast<std::size_t>(q_words.rows()) != words.size()) throw DataError("seasonality_scores: label count mismatch");
  const Eigen::Index months = q_months.rows();
  Eigen::JacobiSVD<MatrixXd> svd(q_months, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const VectorXd& s = svd.singularValues();
  const double cond = s(s.size() - 1) > 0.0 ? s(0) / s(s.size() - 1) : std::numeric_limits<double>::infinity();
  if (!(cond <= max_condition))
    throw DataError("seasonality_scores: month embeddings are rank deficient (condition number " +
                    std::to_string(cond) + ")");
  const MatrixXd pinv = svd.matrixV() * s.cwiseInverse().asDiagonal() * svd.matrixU().transpose();
  const MatrixXd a = q_words * pinv;
  std::vector<SeasonalityScore> out;
  for (Eigen::Index w = 0; w < a.rows(); ++w) {
    std::complex<double> z = 0.0;
    for (Eigen::Index mm = 0; mm < months; ++mm)
      z += a(w, mm) * std::polar(1.0, 2.0 * std::numbers::pi * static_cast<double>(mm) / static_cast<double>(months));
    SeasonalityScore sc;
    sc.word = words[static_cast<std::size_t>(w)];
    sc.score = z;
    sc.magnitude = std::abs(z);
    sc.phase = std::arg(z);
    double c = sc.phase * static_cast<double>(months) / (2.0 * std::numbers::pi);
    sc.month_center = c - static_cast<double>(months) * std::floor(c / static_cast<double>(months));
    out.push_back(sc);
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& x, const auto& y) { return x.magnitude > y.magnitude; });
  return out;
}

struct HelperScalingConfig {
  std::vector<int> helper_counts{8, 16, 32, 64, 128, 256};
  int months = 12;
  double period = 12.0;
  double width = 1.5;
  double height = 0.8;
  double noise = 0.1;  // std of symmetric Gaussian noise added to every PMI entry
  Eigen::Index d_embed = 2;
  int trials = 40;
  std::uint64_t seed = 11;
};

struct HelperScalingPoint {
  int helpers = 0;
  double mean_error = 0.0;
  double std_error = 0.0;
};

struct HelperScalingResult {
  std::vector<HelperScalingPoint> points;
  double slope = 0.0;
};

// Months at equispaced centers plus H helpers with uniformly random centers;
// the PMI gets i.i.d. symmetric noise standing in for estimation error. The
// month block is ablated, months + helpers are factorized, and the months'
// top-2 PCA coordinates are Procrustes-aligned (both sides unit Frobenius)
// to the ideal circle.
inline HelperScalingResult helper_scaling_experiment(const HelperScalingConfig& cfg) {
  if (cfg.months < 3) throw UsageError("helper scaling: need at least 3 months");
  if (cfg.trials < 1 || cfg.helper_counts.size() < 2) throw UsageError("helper scaling: need trials and >= 2 helper counts");
  HelperScalingResult res;
  MatrixXd circle(cfg.months, 2);
  for (int i = 0; i < cfg.months; ++i) {
    const double a = 2.0 * std::numbers::pi * i / cfg.months;
    circle(i, 0) = std::cos(a);
    circle(i, 1) = std::sin(a);
  }
  circle /= circle.norm();
  std::vector<Eigen::Index> block(static_cast<std::size_t>(cfg.months));
  for (int i = 0; i < cfg.months; ++i) block[static_cast<std::size_t>(i)] = i;
  std::vector<double> hs, errs;
  for (int h : cfg.helper_counts) {
    if (h < 1) throw UsageError("helper scaling: helper counts must be positive");
    std::vector<double> e;
    for (int t = 0; t < cfg.trials; ++t) {
      std::mt19937_64 rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(h) * 100003u + static_cast<std::uint64_t>(t)));
      SeasonalModel m = SeasonalModel::equispaced(cfg.months, cfg.period, cfg.width, cfg.height);
      for (int j = 0; j < h; ++j)
        m.add_word("h" + std::to_string(j), (detail::unit_uniform(rng) - 0.5) * cfg.period, cfg.height);
      m.normalize_base();
      auto pmi = seasonal_pmi(m);
      for (Eigen::Index i = 0; i < pmi.size(); ++i)
        for (Eigen::Index j = i; j < pmi.size(); ++j) {
          const double z = cfg.noise * detail::standard_normal(rng);
          pmi.values(i, j) += z;
          if (i != j) pmi.values(j, i) += z;
        }
      pmi = ablate_matrix_block(pmi, block);
      auto emb = factorize(pmi, std::min<Eigen::Index>(cfg.d_embed, pmi.size()));
      auto g = project_pca(detail::rows_of(emb.W, block), {});
      if (g.Wbar.cols() < 2) throw DataError("helper scaling: month rows span fewer than 2 dimensions");
      MatrixXd xy = g.Wbar.leftCols(2);
      xy /= xy.norm();
      e.push_back(align_procrustes(xy, circle).residual);
    }
    HelperScalingPoint p;
    p.helpers = h;
    for (double v : e) p.mean_error += v / static_cast<double>(e.size());
    for (double v : e) p.std_error += (v - p.mean_error) * (v - p.mean_error) / static_cast<double>(e.size());
    p.std_error = std::sqrt(p.std_error);
    res.points.push_back(p);
    hs.push_back(h);
    errs.push_back(p.mean_error);
  }
  res.slope = loglog_slope(hs, errs);
  return res;
}

} // namespace symgeom
