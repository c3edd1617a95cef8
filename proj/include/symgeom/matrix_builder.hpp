#pragma once

// Target matrices built from co-occurrence statistics.

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "symgeom/corpus_stats.hpp"
#include "symgeom/linalg.hpp"

namespace symgeom {

enum class MatrixKind { mstar, pmi, pmi_eps, abs_mstar, kernel, psd_part, nsd_part, gram };

inline std::string to_string(MatrixKind k) {
  switch (k) {
    case MatrixKind::mstar: return "mstar";
    case MatrixKind::pmi: return "pmi";
    case MatrixKind::pmi_eps: return "pmi-eps";
    case MatrixKind::abs_mstar: return "abs-mstar";
    case MatrixKind::kernel: return "kernel";
    case MatrixKind::psd_part: return "psd-part";
    case MatrixKind::nsd_part: return "nsd-part";
    case MatrixKind::gram: return "gram";
  }
  return "unknown";
}

inline MatrixKind matrix_kind_from_string(const std::string& s) {
  for (auto k : {MatrixKind::mstar, MatrixKind::pmi, MatrixKind::pmi_eps, MatrixKind::abs_mstar, MatrixKind::kernel,
                 MatrixKind::psd_part, MatrixKind::nsd_part, MatrixKind::gram})
    if (to_string(k) == s) return k;
  throw UsageError("unknown matrix kind '" + s + "'");
}

// Dense symmetric matrix over an ordered word subset.
struct TargetMatrix {
  MatrixKind kind = MatrixKind::mstar;
  MatrixXd values;
  std::vector<TokenId> subset;       // vocabulary ids (may be empty for synthetic matrices)
  std::vector<std::string> labels;   // one per row
  std::string provenance;

  Eigen::Index size() const { return values.rows(); }
};

// Elementwise map of the co-occurrence ratio y = P_ij / (P_i P_j).
inline double mstar_from_ratio(double y) { return 2.0 * (y - 1.0) / (y + 1.0); }

namespace detail {

inline std::vector<std::string> labels_for(const std::vector<TokenId>& subset, const Vocabulary* vocab) {
  std::vector<std::string> out;
  out.reserve(subset.size());
  for (TokenId id : subset) out.push_back(vocab ? vocab->token(id) : std::to_string(id));
  return out;
}

inline std::string table_provenance(const CooccurrenceTable& t) {
  Fnv1a h;
  h.update(Fnv1a::to_hex(t.vocab_fingerprint()));
  h.update("L=" + std::to_string(t.window()) + ";f=" + t.weighting_id());
  std::string out = "vocab=" + Fnv1a::to_hex(t.vocab_fingerprint()) + ";window=" + std::to_string(t.window()) +
                    ";weighting=" + t.weighting_id() + ";config=" + h.hex();
  if (!t.ablated().empty()) out += ";ablated=" + std::to_string(t.ablated().size());
  return out;
}

inline void check_subset(const CooccurrenceTable& t, const std::vector<TokenId>& subset, const Vocabulary* vocab) {
  if (!t.valid()) throw DataError("co-occurrence table has zero total mass");
  for (TokenId id : subset) {
    if (id < 0 || static_cast<std::size_t>(id) >= t.vocab_size()) throw DataError("subset id out of range");
    if (t.unigram(id) <= 0.0)
      throw DataError("zero unigram probability for word '" + (vocab ? vocab->token(id) : std::to_string(id)) + "'");
  }
}

} // namespace detail

// M*_ij = (P_ij - P_i P_j) / (0.5 (P_ij + P_i P_j)). P_ij = 0 with positive
// marginals gives -2; only the 0/0 case maps to 0.
inline TargetMatrix build_mstar(const CooccurrenceTable& t, const std::vector<TokenId>& subset,
                                const Vocabulary* vocab = nullptr) {
  detail::check_subset(t, subset, vocab);
  const auto n = static_cast<Eigen::Index>(subset.size());
  TargetMatrix m{MatrixKind::mstar, MatrixXd::Zero(n, n), subset, detail::labels_for(subset, vocab),
                 detail::table_provenance(t)};
  for (Eigen::Index a = 0; a < n; ++a) {
    const double pa = t.unigram(subset[static_cast<std::size_t>(a)]);
    for (Eigen::Index b = a; b < n; ++b) {
      const double pb = t.unigram(subset[static_cast<std::size_t>(b)]);
      const double pij = t.probability(subset[static_cast<std::size_t>(a)], subset[static_cast<std::size_t>(b)]);
      const double indep = pa * pb;
      const double denom = 0.5 * (pij + indep);
      const double v = denom == 0.0 ? 0.0 : (pij - indep) / denom;
      m.values(a, b) = v;
      m.values(b, a) = v;
    }
  }
  m.values = symmetrized(m.values);
  return m;
}

// log(P_ij / (P_i P_j) + eps). eps = 0 is the plain PMI.
inline TargetMatrix build_pmi(const CooccurrenceTable& t, const std::vector<TokenId>& subset, double eps,
                              const Vocabulary* vocab = nullptr) {
  if (eps < 0.0) throw UsageError("build_pmi: eps must be >= 0");
  detail::check_subset(t, subset, vocab);
  const auto n = static_cast<Eigen::Index>(subset.size());
  TargetMatrix m{eps == 0.0 ? MatrixKind::pmi : MatrixKind::pmi_eps, MatrixXd::Zero(n, n), subset,
                 detail::labels_for(subset, vocab), detail::table_provenance(t)};
  if (eps != 0.0) m.provenance += ";eps=" + std::to_string(eps);
  for (Eigen::Index a = 0; a < n; ++a) {
    const TokenId ia = subset[static_cast<std::size_t>(a)];
    for (Eigen::Index b = a; b < n; ++b) {
      const TokenId ib = subset[static_cast<std::size_t>(b)];
      const double ratio = t.probability(ia, ib) / (t.unigram(ia) * t.unigram(ib));
      if (ratio + eps <= 0.0)
        throw DataError("build_pmi: zero co-occurrence for pair (" + m.labels[static_cast<std::size_t>(a)] + ", " +
                        m.labels[static_cast<std::size_t>(b)] + ") with eps = 0");
      m.values(a, b) = m.values(b, a) = std::log(ratio + eps);
    }
  }
  return m;
}

// Sets P_ij = P_i P_j on S x S while leaving every other ordered mass
// untouched. The new marginals P'_i and total Z' solve the coupled system
// exactly:  U = R / (Z_out - R),  Z' = Z_out / (1 - U^2),
// P'_i = r_i / (Z' (1 - U)),  mass'_ij = Z' P'_i P'_j,
// where r_i is the mass row i shares with words outside S, R = sum r_i and
// Z_out is the total mass outside the S x S block.
inline CooccurrenceTable ablate_block(const CooccurrenceTable& t, const std::vector<TokenId>& subset) {
  if (subset.empty()) throw UsageError("ablate_block: empty subset");
  const std::size_t V = t.vocab_size();
  std::vector<char> in_block(V, 0);
  for (TokenId id : subset) {
    if (id < 0 || static_cast<std::size_t>(id) >= V) throw DataError("ablate_block: id out of range");
    in_block[static_cast<std::size_t>(id)] = 1;
  }
  std::vector<double> outside(V, 0.0), inside(V, 0.0);
  double block_total = 0.0;
  std::vector<PairEntry> kept;
  for (const auto& e : t.entries()) {
    const bool bi = in_block[static_cast<std::size_t>(e.i)], bj = in_block[static_cast<std::size_t>(e.j)];
    if (bi && bj) {
      block_total += e.i == e.j ? e.mass : 2.0 * e.mass;
      inside[static_cast<std::size_t>(e.i)] += e.mass;
      if (e.i != e.j) inside[static_cast<std::size_t>(e.j)] += e.mass;
      continue;
    }
    if (bi) outside[static_cast<std::size_t>(e.i)] += e.mass;
    if (bj) outside[static_cast<std::size_t>(e.j)] += e.mass;
    kept.push_back(e);
  }
  std::vector<TokenId> ids;
  for (std::size_t i = 0; i < V; ++i)
    if (in_block[i]) ids.push_back(static_cast<TokenId>(i));

  double cross = 0.0;
  for (TokenId id : ids) cross += outside[static_cast<std::size_t>(id)];
  const double z_out = t.total_mass() - block_total;

  std::vector<double> p_new(V, 0.0);
  double z_new = 0.0;
  if (cross == 0.0) {
    // With no cross mass, P_ij = P_i P_j on S forces sum_{i in S} P_i = 1,
    // which only holds if nothing lives outside the block.
    if (z_out > 0.0)
      throw DataError("ablate_block: block shares no co-occurrence mass with other words; independence block is undefined");
    z_new = block_total;
    for (TokenId id : ids) p_new[static_cast<std::size_t>(id)] = block_total > 0 ? inside[static_cast<std::size_t>(id)] / block_total : 0.0;
  } else {
    const double rest = z_out - 2.0 * cross;
    if (rest <= 0.0)
      throw DataError("ablate_block: words outside the block never co-occur with each other; independence block is undefined");
    const double u = cross / (z_out - cross);
    z_new = z_out / (1.0 - u * u);
    for (TokenId id : ids) p_new[static_cast<std::size_t>(id)] = outside[static_cast<std::size_t>(id)] / (z_new * (1.0 - u));
  }
  for (std::size_t a = 0; a < ids.size(); ++a)
    for (std::size_t b = a; b < ids.size(); ++b) {
      const double m = z_new * p_new[static_cast<std::size_t>(ids[a])] * p_new[static_cast<std::size_t>(ids[b])];
      if (m != 0.0) kept.push_back({ids[a], ids[b], m});
    }
  CooccurrenceTable out(V, t.vocab_fingerprint(), t.window(), t.weighting_id(), std::move(kept));
  std::vector<TokenId> record = t.ablated();
  record.insert(record.end(), ids.begin(), ids.end());
  out.set_ablated(std::move(record));
  return out;
}

// Matrix-level variant: replace the block with zeros (independence).
inline TargetMatrix ablate_matrix_block(const TargetMatrix& m, const std::vector<Eigen::Index>& rows) {
  TargetMatrix out = m;
  for (auto a : rows)
    for (auto b : rows) out.values(a, b) = 0.0;
  out.provenance += ";block-ablated=" + std::to_string(rows.size());
  return out;
}

// Full V x V M* (guarded; the dense spectrum of the whole vocabulary is only
// feasible for small V).
inline TargetMatrix build_full_mstar(const CooccurrenceTable& t, const Vocabulary* vocab,
                                     std::size_t size_guard = 6000) {
  if (t.vocab_size() > size_guard)
    throw UsageError("full-vocabulary matrix of size " + std::to_string(t.vocab_size()) +
                     " exceeds the size guard " + std::to_string(size_guard));
  std::vector<TokenId> all(t.vocab_size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<TokenId>(i);
  return build_mstar(t, all, vocab);
}

struct PsdNsdSplit {
  TargetMatrix positive;  // M+
  TargetMatrix negative;  // M-, also PSD
  TargetMatrix absolute;  // |M| = M+ + M-
};

// M = M+ - M-, with M+ M- = 0, from the signed eigenpairs.
inline PsdNsdSplit psd_nsd_split(const TargetMatrix& m) {
  if ((m.values - m.values.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, m.values.cwiseAbs().maxCoeff()))
    throw DataError("psd_nsd_split: matrix is not symmetric");
  Eigen::SelfAdjointEigenSolver<MatrixXd> solver(m.values);
  if (solver.info() != Eigen::Success) {
    Eigen::JacobiSVD<MatrixXd> svd(m.values);
    const auto& s = svd.singularValues();
    throw NumericalError("psd_nsd_split: eigensolver failed; condition number " +
                         std::to_string(s(0) / s(s.size() - 1)));
  }
  const VectorXd& lam = solver.eigenvalues();
  const MatrixXd& phi = solver.eigenvectors();
  const VectorXd pos = lam.cwiseMax(0.0);
  const VectorXd neg = (-lam).cwiseMax(0.0);
  PsdNsdSplit out{m, m, m};
  out.positive.kind = MatrixKind::psd_part;
  out.positive.values = symmetrized(phi * pos.asDiagonal() * phi.transpose());
  out.negative.kind = MatrixKind::nsd_part;
  out.negative.values = symmetrized(phi * neg.asDiagonal() * phi.transpose());
  out.absolute.kind = MatrixKind::abs_mstar;
  out.absolute.values = out.positive.values + out.negative.values;
  return out;
}

} // namespace symgeom
