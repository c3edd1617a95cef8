#pragma once

// Stage runners shared by the CLI subcommands and `run`, the parameter
// schema both are validated against, and the geometry comparison report.
//
// A stage takes one JSON parameter block. The CLI builds that block from its
// flags (flag names are the block keys), so a block in a run config and the
// flags of the matching subcommand are interchangeable.

#include <fstream>
#include <iostream>
#include <functional>
#include <map>
#include <set>

#include "symgeom/io.hpp"
#include "symgeom/kernel_fit.hpp"
#include "symgeom/latent_model.hpp"
#include "symgeom/probe_decoder.hpp"

namespace symgeom {

// ---- geometry comparison ----

struct ModeGroupAngle {
  Eigen::Index first = 0;  // [first, last) in predicted non-constant mode order
  Eigen::Index last = 0;
  double lambda = 0.0;
  double angle = 0.0;      // largest principal angle (rad)
};

struct GeometryComparison {
  std::vector<std::string> labels;
  std::vector<ModeGroupAngle> groups;
  std::vector<double> amplitude_ratios;  // empirical / predicted column norm
  double top_pair_angle = 0.0;           // span of the first two columns (rad)
  double gram_error = 0.0;               // ||G_emp - G_pred||_F / ||G_pred||_F
  double gram_error_scaled = 0.0;        // same after the best single scale on G_pred
  MatrixXd empirical;                    // first columns of the empirical PCA coordinates
  MatrixXd predicted;                    // matching predicted columns, rotated within each group onto the empirical ones
};

// Rows of `empirical` must be in the same order as the prediction's sites.
// Groups are degenerate runs of the predicted eigenvalues; only groups that
// fit inside both column counts are compared.
inline GeometryComparison compare_geometry(const ProjectedGeometry& empirical, const SpectralPrediction& predicted,
                                           int lissajous_modes = 6, double rel_tol = 1e-8) {
  const MatrixXd& E = empirical.Wbar;
  const MatrixXd P = predicted.embedding(true);
  if (E.rows() != P.rows())
    throw DataError("compare_geometry: " + std::to_string(E.rows()) + " empirical rows vs " + std::to_string(P.rows()) +
                    " predicted sites");
  std::vector<double> lam;
  for (const auto& m : predicted.modes)
    if (m.type != ModeType::constant) lam.push_back(m.lambda);
  const Eigen::Index k = std::min(E.cols(), P.cols());
  if (k < 1) throw DataError("compare_geometry: no modes to compare");

  GeometryComparison out;
  out.labels = predicted.labels;
  const VectorXd lv = Eigen::Map<const VectorXd>(lam.data(), static_cast<Eigen::Index>(lam.size()));
  const Eigen::Index m = std::min<Eigen::Index>(k, std::max(lissajous_modes, 2));
  out.empirical = E.leftCols(m);
  out.predicted = P.leftCols(m);
  for (auto [a, b] : degenerate_groups(lv, rel_tol)) {
    if (b > k) break;
    const MatrixXd eg = E.middleCols(a, b - a), pg = P.middleCols(a, b - a);
    out.groups.push_back({a, b, lv(a), max_principal_angle(eg, pg)});
    if (b <= m) out.predicted.middleCols(a, b - a) = pg * align_procrustes(pg, eg).rotation;
  }
  for (Eigen::Index c = 0; c < k; ++c) out.amplitude_ratios.push_back(E.col(c).norm() / P.col(c).norm());
  if (k >= 2) out.top_pair_angle = max_principal_angle(E.leftCols(2), P.leftCols(2));
  const MatrixXd ge = E * E.transpose(), gp = P * P.transpose();
  out.gram_error = relative_frobenius(ge, gp);
  const double s = (ge.array() * gp.array()).sum() / std::max(gp.squaredNorm(), 1e-300);
  out.gram_error_scaled = relative_frobenius(ge, s * gp);
  return out;
}

inline Json comparison_json(const GeometryComparison& c) {
  Json groups = Json::array();
  for (const auto& g : c.groups)
    groups.push_back({{"first", g.first + 1}, {"last", g.last}, {"lambda", g.lambda}, {"angle_rad", g.angle},
                      {"angle_deg", g.angle * 180.0 / std::numbers::pi}});
  return {{"rows", c.labels.size()},
          {"labels", c.labels},
          {"groups", groups},
          {"top_pair_angle_deg", c.top_pair_angle * 180.0 / std::numbers::pi},
          {"amplitude_ratios", c.amplitude_ratios},
          {"gram_relative_error", c.gram_error},
          {"gram_relative_error_scaled", c.gram_error_scaled}};
}

// word, emp1..empk, pred1..predk
inline std::string lissajous_csv(const GeometryComparison& c) {
  MatrixXd both(c.empirical.rows(), c.empirical.cols() + c.predicted.cols());
  both << c.empirical, c.predicted;
  auto cols = numbered("emp", c.empirical.cols());
  for (auto& p : numbered("pred", c.predicted.cols())) cols.push_back(p);
  return labeled_matrix_csv(both, c.labels, cols);
}

// ---- parameter schema ----

enum class ParamType { text, integer, number, flag, texts, numbers, integers };
enum class ParamRole { value, input, output };

struct ParamSpec {
  std::string key;
  ParamType type = ParamType::text;
  Json def;                  // null: no default
  std::string help;
  ParamRole role = ParamRole::value;
  std::string artifact;      // for inputs / outputs that chain between stages
  bool optional_output = false;  // not auto-named by `run` (skipped, or derived by the stage)
  bool required = false;         // inputs that must be given or produced upstream
};

struct StageSchema {
  std::string name;
  std::string summary;
  std::vector<ParamSpec> params;

  const ParamSpec* find(const std::string& key) const {
    for (const auto& p : params)
      if (p.key == key) return &p;
    return nullptr;
  }
};

namespace detail {

inline ParamSpec in(std::string key, std::string artifact, std::string help, bool required = true) {
  return {std::move(key), ParamType::text, "", std::move(help), ParamRole::input, std::move(artifact), false, required};
}
inline ParamSpec out(std::string key, std::string artifact, std::string help, bool optional = false) {
  return {std::move(key), ParamType::text, "", std::move(help), ParamRole::output, std::move(artifact), optional, false};
}
inline ParamSpec val(std::string key, ParamType t, Json def, std::string help) {
  return {std::move(key), t, std::move(def), std::move(help), ParamRole::value, "", false, false};
}

inline std::vector<ParamSpec> seasonal_shape_params() {
  return {val("period", ParamType::number, 12.0, "period T of the latent variable"),
          val("mod-width", ParamType::number, 1.5, "modulation width w (units of t)"),
          val("mod-height", ParamType::number, 0.8, "modulation height h"),
          val("family", ParamType::text, "gaussian", "modulation family: gaussian|cosine")};
}

template <class... V>
std::vector<ParamSpec> join(std::vector<ParamSpec> a, V... rest) {
  (a.insert(a.end(), rest.begin(), rest.end()), ...);
  return a;
}

} // namespace detail

inline const std::vector<StageSchema>& stage_schemas() {
  using detail::in;
  using detail::out;
  using detail::val;
  using T = ParamType;
  static const std::vector<StageSchema> schemas = {
      {"synth", "sample a corpus from the latent seasonal model",
       detail::join(
           {val("model", T::text, "seasonal", "generative model (seasonal)"),
            val("N", T::integer, 720, "number of equispaced seasonal words"),
            val("names", T::text, "", "word names: empty for w000.., or 'months' (needs N = 12)")},
           detail::seasonal_shape_params(),
           std::vector<ParamSpec>{
               val("helpers", T::integer, 0, "extra helper words"),
               val("helper-height", T::number, -1.0, "helper modulation height (negative: same as mod-height)"),
               val("helper-layout", T::text, "equispaced", "helper centers: equispaced|random"),
               val("tokens", T::number, 1e6, "corpus length in tokens"),
               val("window", T::integer, 10, "tokens per latent draw (one block per line)"),
               val("seed", T::integer, 0, "root seed"), val("threads", T::integer, 0, "worker threads (0: all cores)"),
               out("out", "corpus", "corpus text"), out("model-out", "model", "model description JSON")})},
      {"count", "tokenize a corpus and count windowed co-occurrences",
       {in("corpus", "corpus", "corpus text, one document per line"),
        val("window", T::integer, 16, "window length L"),
        val("weighting", T::text, "linear", "distance weighting: linear|uniform|harmonic"),
        val("vocab-size", T::integer, 25000, "vocabulary cap"),
        val("min-doc-len", T::integer, 0, "drop shorter documents (tokens)"),
        val("keep-case", T::flag, false, "do not lowercase"),
        val("keep-numerals", T::flag, false, "keep numerals with separators"),
        val("probe-words", T::texts, Json::array(), "words that must survive the vocabulary cap"),
        val("threads", T::integer, 0, "worker threads (0: all cores)"),
        out("out", "cooc", "co-occurrence CSV"), out("vocab-out", "vocab", "vocabulary TSV (default: <out stem>.vocab.tsv)", true)}},
      {"build", "build a target matrix over a word subset",
       {in("stats", "cooc", "co-occurrence CSV"), in("vocab", "vocab", "vocabulary TSV (default: <stats stem>.vocab.tsv)", false),
        val("kind", T::text, "mstar", "mstar|pmi|pmi-eps|abs-mstar|psd-part|nsd-part"),
        in("subset", "", "word list file", false), val("words", T::texts, Json::array(), "inline word list"),
        val("all-words", T::flag, false, "use the whole vocabulary"),
        val("eps", T::number, 0.0, "smoothing for pmi-eps"), in("ablate", "", "word list whose block is ablated", false),
        val("ablate-words", T::texts, Json::array(), "inline ablation list"),
        val("full-spectrum", T::flag, false, "allow the full-vocabulary split (abs-mstar, psd-part, nsd-part)"),
        val("size-guard", T::integer, 6000, "largest dense matrix"), out("out", "matrix", "matrix file"),
        out("csv", "matrix-csv", "CSV export", true)}},
      {"fit-kernel", "fit an exponential kernel to per-distance means",
       {in("matrix", "matrix", "matrix file"),
        val("lattice", T::text, "periodic", "bc[:wordlist file]; words default to the matrix labels"),
        val("lattice-words", T::texts, Json::array(), "inline lattice word order"),
        val("periodized", T::flag, false, "periodized kernel"), val("shift", T::flag, false, "fit an additive shift"),
        val("include-diagonal", T::flag, false, "fit the distance-0 bin too"),
        val("natural-span", T::number, 0.0, "natural length of the lattice (e.g. 12 months) for sigma conversion"),
        out("out", "fit", "fit JSON")}},
      {"embed", "factorize a matrix into embeddings",
       {in("matrix", "matrix", "matrix file"), val("d", T::integer, 10, "embedding dimension"),
        val("order", T::text, "magnitude", "mode order: magnitude|value"),
        val("size-guard", T::integer, 6000, "largest dense eigendecomposition"),
        out("out", "embedding", "embedding file")}},
      {"project", "PCA coordinates of a word subset",
       {in("embeddings", "embedding", "embedding file"), in("subset", "", "word list file restricting rows", false),
        val("words", T::texts, Json::array(), "inline row restriction"),
        val("exclude", T::texts, Json::array(), "rows left out of the PCA basis"),
        val("no-center", T::flag, false, "skip centering"), out("out", "projection", "projection file"),
        out("csv", "geometry", "geometry CSV (default: next to --out)")}},
      {"gram", "Gram matrix of embeddings or projected coordinates",
       {in("embeddings", "", "embedding file (takes precedence over --projection)", false),
        in("projection", "projection", "projection file", false),
        in("subset", "", "word list file restricting rows", false), val("words", T::texts, Json::array(), "inline row restriction"),
        val("centered", T::flag, false, "center the rows first"), out("out", "gram", "Gram CSV")}},
      {"predict", "analytic Fourier / open-boundary geometry of an exponential kernel",
       {val("bc", T::text, "periodic", "periodic|open"), val("dim", T::integer, 1, "lattice dimension D"),
        val("L", T::integer, 12, "sites per axis"), val("sigma", T::number, 0.35, "kernel width in [-1,1] units"),
        val("modes", T::integer, 0, "modes kept (0: all; required for open)"),
        val("scale", T::number, 1.0, "eigenvalue scale"),
        in("fit", "fit", "fit JSON: takes sigma, lattice and scale from it", false),
        val("lattice-words", T::texts, Json::array(), "site labels"), out("out", "prediction", "prediction CSV")}},
      {"compare", "compare projected empirical geometry with a prediction",
       {in("projection", "projection", "projection file"), in("prediction", "prediction", "prediction CSV"),
        val("lissajous-modes", T::integer, 6, "mode columns written for Lissajous plots"),
        out("out", "comparison", "comparison JSON"), out("lissajous", "lissajous", "Lissajous CSV (default: next to --out)")}},
      {"decode", "linear coordinate decoding and double descent",
       {in("embeddings", "", "embedding file (takes precedence over --projection)", false),
        in("projection", "projection", "projection file", false), in("coords", "", "CSV: label, coordinate columns"), val("ranks", T::integers, "1..120", "ranks, e.g. 1..120 or 2,4,8"),
        val("trials", T::integer, 100, "random splits"), val("train", T::integer, 60, "training rows"),
        val("test", T::integer, 60, "test rows"), val("ridge", T::text, "auto", "auto (log grid) or none"),
        val("seed", T::integer, 7, "root seed"), val("threads", T::integer, 0, "worker threads (0: all cores)"),
        val("allow-split", T::flag, false, "allow ranks that split a degenerate group"),
        val("lattice-L", T::integer, 0, "sites per axis, enables the bound column"),
        out("out", "decode", "decoding CSV")}},
      {"geo-kernel", "exponential kernel on 2-D points and its geometry",
       {in("points", "", "CSV: label, x, y"), val("sigma", T::number, 20.0, "kernel width"),
        val("amp", T::number, 10.0, "kernel amplitude"), val("aspect", T::number, 0.78, "weight of the second axis"),
        val("d", T::integer, 6, "embedding dimension for the geometry CSV"), out("out", "matrix", "matrix file"),
        out("csv", "geometry", "geometry CSV (default: next to --out)")}},
      {"combined-spectrum", "closed-form vs dense spectrum of the seasonal-attribute model",
       detail::join({val("N", T::integer, 24, "seasonal words"),
                     val("attrs", T::numbers, Json::array({0.3, 0.5, 0.7}), "attribute strengths in (-1, 1)")},
                    detail::seasonal_shape_params(),
                    std::vector<ParamSpec>{val("dense-check", T::flag, true, "also diagonalize the assembled matrix"),
                                           val("size-guard", T::integer, 6000, "largest dense matrix"),
                                           out("out", "combined", "spectrum JSON")})},
      {"ablate-experiment", "ablate a block and refactorize",
       detail::join({in("matrix", "", "matrix file (default: synthetic seasonal PMI)", false),
                     val("N", T::integer, 720, "synthetic model size"),
                     val("target", T::text, "pmi", "synthetic target: pmi|mstar")},
                    detail::seasonal_shape_params(),
                    std::vector<ParamSpec>{in("block", "", "word list file (default: 12 equispaced words)", false),
                                           val("block-words", T::texts, Json::array(), "inline block"),
                                           val("dims", T::integers, Json::array({3, 6, 12, 50}), "embedding dimensions"),
                                           out("out", "ablation", "report JSON")})},
      {"helper-scaling", "reconstruction error vs number of helper words",
       {val("helper-counts", T::integers, Json::array({8, 16, 32, 64, 128, 256}), "helper counts H"),
        val("months", T::integer, 12, "block size"), val("period", T::number, 12.0, "period T"),
        val("mod-width", T::number, 1.5, "modulation width"), val("mod-height", T::number, 0.8, "modulation height"),
        val("noise", T::number, 0.1, "std of noise added to the PMI"), val("d", T::integer, 2, "embedding dimension"),
        val("trials", T::integer, 40, "trials per H"), val("seed", T::integer, 11, "root seed"),
        out("out", "helper-scaling", "report JSON")}},
      {"seasonality", "seasonality scores of words against month embeddings",
       {in("embeddings", "embedding", "embedding file"), in("months", "", "word list file of the 12 months in order", false),
        val("month-words", T::texts, Json::array(), "inline month list"),
        val("words", T::texts, Json::array(), "words to score (default: all rows)"),
        out("out", "seasonality", "scores CSV")}},
  };
  return schemas;
}

inline const StageSchema& stage_schema(const std::string& name) {
  for (const auto& s : stage_schemas())
    if (s.name == name) return s;
  throw UsageError("unknown stage '" + name + "'");
}

// Integers accept "a..b" ranges and comma lists.
inline Json parse_param_text(const ParamSpec& p, const std::string& text) {
  auto num = [&](const std::string& s) {
    try {
      return parse_double(s, "--" + p.key);
    } catch (const DataError& e) {
      throw UsageError(e.what());
    }
  };
  auto integer = [&](const std::string& s) {
    const double v = num(s);
    if (v != std::floor(v) || std::abs(v) > 9e15) throw UsageError("--" + p.key + ": expected an integer, got '" + s + "'");
    return static_cast<long long>(v);
  };
  switch (p.type) {
    case ParamType::text: return text;
    case ParamType::integer: return integer(text);
    case ParamType::number: return num(text);
    case ParamType::flag:
      if (text == "true" || text == "1") return true;
      if (text == "false" || text == "0") return false;
      throw UsageError("--" + p.key + ": expected true|false");
    case ParamType::texts: {
      Json a = Json::array();
      for (auto& s : split(text, ','))
        if (!s.empty()) a.push_back(s);
      return a;
    }
    case ParamType::numbers: {
      Json a = Json::array();
      for (auto& s : split(text, ',')) a.push_back(num(s));
      return a;
    }
    case ParamType::integers: {
      Json a = Json::array();
      for (auto& s : split(text, ',')) {
        const auto dots = s.find("..");
        if (dots == std::string::npos) {
          a.push_back(integer(s));
          continue;
        }
        const long long lo = integer(s.substr(0, dots)), hi = integer(s.substr(dots + 2));
        if (hi < lo || hi - lo > 1000000) throw UsageError("--" + p.key + ": bad range '" + s + "'");
        for (long long v = lo; v <= hi; ++v) a.push_back(v);
      }
      return a;
    }
  }
  return text;
}

// Checks keys and types and fills defaults.
inline Json validate_params(const StageSchema& schema, const Json& block) {
  if (!block.is_object()) throw UsageError("stage '" + schema.name + "': parameters must be an object");
  Json out = Json::object();
  for (const auto& [key, v] : block.items()) {
    const ParamSpec* p = schema.find(key);
    if (!p) throw UsageError("stage '" + schema.name + "': unknown parameter '" + key + "'");
    auto bad = [&](const char* want) {
      return UsageError("stage '" + schema.name + "': parameter '" + key + "' must be " + want);
    };
    Json val = v;
    switch (p->type) {
      case ParamType::text:
        if (!v.is_string()) throw bad("a string");
        break;
      case ParamType::integer:
        if (v.is_number_float() && v.get<double>() == std::floor(v.get<double>())) val = static_cast<long long>(v.get<double>());
        else if (!v.is_number_integer()) throw bad("an integer");
        break;
      case ParamType::number:
        if (!v.is_number()) throw bad("a number");
        val = v.get<double>();
        break;
      case ParamType::flag:
        if (!v.is_boolean()) throw bad("true or false");
        break;
      case ParamType::texts:
        if (v.is_string()) val = Json::array({v});
        else if (!v.is_array() || !std::all_of(v.begin(), v.end(), [](const Json& x) { return x.is_string(); }))
          throw bad("a list of strings");
        break;
      case ParamType::numbers:
        if (v.is_number()) val = Json::array({v});
        else if (!v.is_array() || !std::all_of(v.begin(), v.end(), [](const Json& x) { return x.is_number(); }))
          throw bad("a list of numbers");
        break;
      case ParamType::integers:
        if (v.is_string()) val = parse_param_text(*p, v.get<std::string>());
        else if (v.is_number_integer()) val = Json::array({v});
        else if (!v.is_array() || !std::all_of(v.begin(), v.end(), [](const Json& x) { return x.is_number_integer(); }))
          throw bad("a list of integers or a range string");
        break;
    }
    out[key] = val;
  }
  for (const auto& p : schema.params)
    if (!out.contains(p.key)) out[p.key] = p.type == ParamType::integers && p.def.is_string() ? parse_param_text(p, p.def) : p.def;
  return out;
}

// ---- stage context ----

struct EmittedFile {
  std::string stage;
  std::string artifact;
  fs::path path;
  std::uintmax_t bytes = 0;
  std::string hash;
};

struct StageContext {
  std::string config_hash;
  std::string stage;
  std::vector<EmittedFile> files;

  void emit(const std::string& artifact, const fs::path& path, const std::string& bytes) {
    write_file_atomic(path, bytes);
    files.push_back({stage, artifact, path, bytes.size(), Fnv1a::to_hex(fnv1a(bytes))});
  }
  void emit_csv(const std::string& artifact, const fs::path& path, const std::string& csv) {
    emit(artifact, path, config_hash.empty() ? csv : "# config_hash=" + config_hash + "\n" + csv);
  }
  void emit_json(const std::string& artifact, const fs::path& path, Json j) {
    if (!config_hash.empty()) j["config_hash"] = config_hash;
    emit(artifact, path, j.dump(2) + "\n");
  }
};

namespace detail {

inline std::string text_param(const Json& p, const std::string& key) { return p.at(key).get<std::string>(); }

inline fs::path required_path(const Json& p, const std::string& key) {
  const auto s = text_param(p, key);
  if (s.empty()) throw UsageError("--" + key + " is required");
  return s;
}

// Explicit path, or `base` with its extension replaced by `suffix`.
inline fs::path derived_path(const Json& p, const std::string& key, const fs::path& base, const std::string& suffix) {
  const auto s = text_param(p, key);
  if (!s.empty()) return s;
  fs::path d = base;
  d.replace_extension(suffix);
  return d;
}

inline std::vector<std::string> word_params(const Json& p, const std::string& file_key, const std::string& inline_key) {
  std::vector<std::string> words;
  if (!text_param(p, file_key).empty()) words = read_wordlist(text_param(p, file_key));
  for (const auto& w : p.at(inline_key)) words.push_back(w.get<std::string>());
  return words;
}

inline std::vector<Eigen::Index> rows_for(const std::vector<std::string>& labels, const std::vector<std::string>& words,
                                          const std::string& what) {
  std::vector<Eigen::Index> rows;
  std::string missing;
  for (const auto& w : words) {
    auto it = std::find(labels.begin(), labels.end(), w);
    if (it == labels.end()) missing += (missing.empty() ? "" : ", ") + w;
    else rows.push_back(static_cast<Eigen::Index>(it - labels.begin()));
  }
  if (!missing.empty()) throw DataError(what + ": words not found: " + missing);
  return rows;
}

inline MatrixXd take_rows(const MatrixXd& m, const std::vector<Eigen::Index>& rows) {
  MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t a = 0; a < rows.size(); ++a) out.row(static_cast<Eigen::Index>(a)) = m.row(rows[a]);
  return out;
}

inline TargetMatrix submatrix(const TargetMatrix& m, const std::vector<Eigen::Index>& rows) {
  TargetMatrix out;
  out.kind = m.kind;
  out.provenance = m.provenance;
  const auto n = static_cast<Eigen::Index>(rows.size());
  out.values.resize(n, n);
  for (Eigen::Index a = 0; a < n; ++a) {
    out.labels.push_back(m.labels[static_cast<std::size_t>(rows[static_cast<std::size_t>(a)])]);
    if (!m.subset.empty()) out.subset.push_back(m.subset[static_cast<std::size_t>(rows[static_cast<std::size_t>(a)])]);
    for (Eigen::Index b = 0; b < n; ++b) out.values(a, b) = m.values(rows[static_cast<std::size_t>(a)], rows[static_cast<std::size_t>(b)]);
  }
  return out;
}

inline unsigned thread_param(const Json& p) {
  const auto t = p.at("threads").get<long long>();
  if (t < 0) throw UsageError("--threads must be >= 0");
  return t == 0 ? std::max(1u, std::thread::hardware_concurrency()) : static_cast<unsigned>(t);
}

inline long long positive_int(const Json& p, const std::string& key) {
  const auto v = p.at(key).get<long long>();
  if (v < 1) throw UsageError("--" + key + " must be >= 1");
  return v;
}

inline ModulationShape shape_params(const Json& p) {
  return {modulation_family_from_string(text_param(p, "family")), p.at("period").get<double>(),
          p.at("mod-width").get<double>()};
}

inline std::vector<double> matrix_rows_json(const MatrixXd& m, Eigen::Index r) {
  std::vector<double> out(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index c = 0; c < m.cols(); ++c) out[static_cast<std::size_t>(c)] = m(r, c);
  return out;
}

inline const std::vector<std::string>& month_names() {
  static const std::vector<std::string> names{"january", "february", "march",     "april",   "may",      "june",
                                              "july",    "august",   "september", "october", "november", "december"};
  return names;
}

} // namespace detail

// ---- seasonal model description ----

inline Json seasonal_model_json(const SeasonalModel& m) {
  return {{"model", "seasonal"},     {"family", to_string(m.shape.family)}, {"period", m.shape.period},
          {"width", m.shape.width},  {"words", m.words},                    {"centers", m.centers},
          {"heights", m.heights},    {"base", m.base}};
}

inline SeasonalModel seasonal_model_from_json(const Json& j) {
  try {
    SeasonalModel m;
    m.shape = {modulation_family_from_string(j.at("family").get<std::string>()), j.at("period").get<double>(),
               j.at("width").get<double>()};
    m.words = j.at("words").get<std::vector<std::string>>();
    m.centers = j.at("centers").get<std::vector<double>>();
    m.heights = j.at("heights").get<std::vector<double>>();
    m.base = j.at("base").get<std::vector<double>>();
    m.validate();
    return m;
  } catch (const Json::exception& e) {
    throw DataError(std::string("seasonal model description: ") + e.what());
  }
}

// Equispaced seasonal words plus optional helpers, uniform base rates.
inline SeasonalModel synth_model(const Json& p) {
  if (detail::text_param(p, "model") != "seasonal") throw UsageError("synth: only --model seasonal is supported");
  const auto shape = detail::shape_params(p);
  const auto n = static_cast<int>(detail::positive_int(p, "N"));
  const double h = p.at("mod-height").get<double>();
  SeasonalModel m = SeasonalModel::equispaced(n, shape.period, shape.width, h, shape.family);
  const auto names = detail::text_param(p, "names");
  if (names == "months") {
    if (n != 12) throw UsageError("synth: --names months needs --N 12");
    m.words = detail::month_names();
  } else if (!names.empty()) {
    throw UsageError("synth: --names must be empty or 'months'");
  }
  const auto helpers = p.at("helpers").get<long long>();
  if (helpers < 0) throw UsageError("synth: --helpers must be >= 0");
  const double hh = p.at("helper-height").get<double>() < 0 ? h : p.at("helper-height").get<double>();
  const auto layout = detail::text_param(p, "helper-layout");
  if (layout != "equispaced" && layout != "random") throw UsageError("synth: --helper-layout must be equispaced|random");
  std::mt19937_64 rng(mix_seed(static_cast<std::uint64_t>(p.at("seed").get<long long>()), 0x68656c70));
  const int digits = static_cast<int>(std::to_string(std::max<long long>(helpers - 1, 0)).size());
  for (long long j = 0; j < helpers; ++j) {
    const double u = layout == "random" ? detail::unit_uniform(rng) : (static_cast<double>(j) + 0.5) / static_cast<double>(helpers);
    std::ostringstream name;
    name << "h" << std::setw(digits) << std::setfill('0') << j;
    m.add_word(name.str(), (u - 0.5) * shape.period, hh);
  }
  m.normalize_base();
  m.validate();
  return m;
}

// ---- stages ----

namespace stages {

inline Json synth(const Json& p, StageContext& ctx) {
  const SeasonalModel m = synth_model(p);
  const double tokens = p.at("tokens").get<double>();
  if (!(tokens >= 1.0) || tokens != std::floor(tokens)) throw UsageError("synth: --tokens must be a positive integer");
  SampleOptions opts;
  opts.n_tokens = static_cast<std::size_t>(tokens);
  opts.window = static_cast<int>(detail::positive_int(p, "window"));
  opts.seed = static_cast<std::uint64_t>(p.at("seed").get<long long>());
  opts.threads = detail::thread_param(p);
  const auto corpus = sample_corpus(m, opts);
  const fs::path out = detail::required_path(p, "out");
  ctx.emit("corpus", out, corpus_text(corpus));
  ctx.emit_json("model", detail::derived_path(p, "model-out", out, ".model.json"), seasonal_model_json(m));
  return {{"words", m.size()}, {"blocks", corpus.blocks.size()}};
}

inline Json count(const Json& p, StageContext& ctx) {
  const fs::path corpus = detail::required_path(p, "corpus");
  require_file(corpus);
  TokenizeRules rules;
  rules.lowercase = !p.at("keep-case").get<bool>();
  rules.strip_formatted_numerals = !p.at("keep-numerals").get<bool>();
  rules.vocab_size = static_cast<std::size_t>(detail::positive_int(p, "vocab-size"));
  const auto mdl = p.at("min-doc-len").get<long long>();
  if (mdl < 0) throw UsageError("--min-doc-len must be >= 0");
  rules.min_doc_length = static_cast<std::size_t>(mdl);
  rules.probe_words = p.at("probe-words").get<std::vector<std::string>>();
  std::ifstream in(corpus, std::ios::binary);
  const auto tc = tokenize_corpus(in, rules);
  const auto weighting = WindowWeighting::make(detail::text_param(p, "weighting"), static_cast<int>(p.at("window").get<long long>()));
  const auto table = count_sharded(tc.documents, tc.vocab, weighting, detail::thread_param(p));
  const fs::path out = detail::required_path(p, "out");
  ctx.emit("cooc", out, cooccurrence_csv(table, ctx.config_hash));
  ctx.emit_csv("vocab", detail::derived_path(p, "vocab-out", out, ".vocab.tsv"), vocabulary_tsv(tc.vocab));
  return {{"documents", tc.documents.size()}, {"vocab", tc.vocab.size()}, {"pairs", table.entries().size()},
          {"Z", table.total_mass()}};
}

inline Json build(const Json& p, StageContext& ctx) {
  const fs::path stats = detail::required_path(p, "stats");
  const fs::path vocab_path = detail::derived_path(p, "vocab", stats, ".vocab.tsv");
  require_file(stats);
  require_file(vocab_path);
  CooccurrenceTable table = read_cooccurrence(stats);
  const Vocabulary vocab = read_vocabulary(vocab_path);
  if (vocab.fingerprint() != table.vocab_fingerprint() || vocab.size() != table.vocab_size())
    throw DataError("build: vocabulary " + vocab_path.string() + " does not match " + stats.string());
  const auto guard = static_cast<std::size_t>(detail::positive_int(p, "size-guard"));

  auto words = detail::word_params(p, "subset", "words");
  std::vector<TokenId> subset;
  if (words.empty()) {
    if (!p.at("all-words").get<bool>()) throw UsageError("build: give --subset/--words, or --all-words for the whole vocabulary");
    if (vocab.size() > guard)
      throw UsageError("build: vocabulary of " + std::to_string(vocab.size()) + " exceeds the size guard " + std::to_string(guard));
    for (std::size_t i = 0; i < vocab.size(); ++i) subset.push_back(static_cast<TokenId>(i));
  } else {
    subset = vocab.ids(words);
  }
  const auto ablate = detail::word_params(p, "ablate", "ablate-words");
  if (!ablate.empty()) table = ablate_block(table, vocab.ids(ablate));

  const auto kind = matrix_kind_from_string(detail::text_param(p, "kind"));
  TargetMatrix m;
  switch (kind) {
    case MatrixKind::mstar: m = build_mstar(table, subset, &vocab); break;
    case MatrixKind::pmi: m = build_pmi(table, subset, 0.0, &vocab); break;
    case MatrixKind::pmi_eps: {
      const double eps = p.at("eps").get<double>();
      if (!(eps > 0.0)) throw UsageError("build: pmi-eps needs --eps > 0");
      m = build_pmi(table, subset, eps, &vocab);
      break;
    }
    case MatrixKind::abs_mstar:
    case MatrixKind::psd_part:
    case MatrixKind::nsd_part: {
      if (!p.at("full-spectrum").get<bool>())
        throw UsageError("build: --kind " + to_string(kind) + " diagonalizes the full vocabulary; pass --full-spectrum");
      const auto split_parts = psd_nsd_split(build_full_mstar(table, &vocab, guard));
      const TargetMatrix& whole = kind == MatrixKind::abs_mstar ? split_parts.absolute
                                  : kind == MatrixKind::psd_part ? split_parts.positive
                                                                 : split_parts.negative;
      std::vector<Eigen::Index> rows(subset.begin(), subset.end());
      m = detail::submatrix(whole, rows);
      break;
    }
    default: throw UsageError("build: unsupported --kind " + to_string(kind));
  }
  ctx.emit("matrix", detail::required_path(p, "out"), matrix_bytes(m, ctx.config_hash));
  if (!detail::text_param(p, "csv").empty()) ctx.emit_csv("matrix-csv", detail::text_param(p, "csv"), matrix_csv(m));
  return {{"kind", to_string(m.kind)}, {"size", m.size()}};
}

struct LatticeSpec {
  Boundary bc = Boundary::periodic;
  std::vector<std::string> words;
};

inline LatticeSpec lattice_spec(const Json& p, const std::vector<std::string>& fallback) {
  const auto spec = detail::text_param(p, "lattice");
  const auto colon = spec.find(':');
  LatticeSpec out;
  out.bc = boundary_from_string(spec.substr(0, colon));
  if (colon != std::string::npos) {
    require_file(spec.substr(colon + 1));
    out.words = read_wordlist(spec.substr(colon + 1));
  }
  for (const auto& w : p.at("lattice-words")) out.words.push_back(w.get<std::string>());
  if (out.words.empty()) out.words = fallback;
  return out;
}

inline Json fit_kernel(const Json& p, StageContext& ctx) {
  const fs::path mpath = detail::required_path(p, "matrix");
  require_file(mpath);
  const TargetMatrix full = read_matrix(mpath);
  const auto ls = lattice_spec(p, full.labels);
  const auto lat = SemanticLattice::with_words(static_cast<int>(ls.words.size()), ls.bc, ls.words);
  const TargetMatrix m = detail::submatrix(full, detail::rows_for(full.labels, ls.words, "fit-kernel"));
  FitOptions fo;
  fo.periodized = p.at("periodized").get<bool>();
  fo.fit_shift = p.at("shift").get<bool>();
  fo.exclude_diagonal = !p.at("include-diagonal").get<bool>();
  const KernelFit fit = fit_exponential(empirical_kernel(m, lat), fo);
  Json bins = Json::array();
  for (const auto& b : fit.bins)
    bins.push_back({{"steps", b.steps}, {"distance", b.distance}, {"mean", b.mean}, {"stddev", b.stddev},
                    {"count", b.count}, {"fitted", fit.kernel(b.distance)},
                    {"used", !(fo.exclude_diagonal && b.steps == 0)}});
  Json j{{"kernel",
          {{"sigma", fit.kernel.sigma}, {"amplitude", fit.kernel.amplitude}, {"shift", fit.kernel.shift},
           {"periodized", fit.kernel.periodized}}},
         {"residual", fit.residual},
         {"iterations", fit.iterations},
         {"diagonal_included", fit.diagonal_included},
         {"lattice", {{"bc", to_string(ls.bc)}, {"L", lat.L}, {"words", ls.words}}},
         {"bins", bins}};
  const double span = p.at("natural-span").get<double>();
  if (span > 0.0) j["sigma_natural"] = sigma_to_natural(fit.kernel.sigma, span);
  ctx.emit_json("fit", detail::required_path(p, "out"), j);
  return {{"sigma", fit.kernel.sigma}, {"amplitude", fit.kernel.amplitude}, {"residual", fit.residual}};
}

inline Json embed(const Json& p, StageContext& ctx) {
  const fs::path mpath = detail::required_path(p, "matrix");
  require_file(mpath);
  const TargetMatrix m = read_matrix(mpath);
  FactorizeOptions fo;
  const auto order = detail::text_param(p, "order");
  if (order != "magnitude" && order != "value") throw UsageError("embed: --order must be magnitude|value");
  fo.order = order == "value" ? ModeOrder::value : ModeOrder::magnitude;
  fo.dense_limit = static_cast<Eigen::Index>(detail::positive_int(p, "size-guard"));
  const auto e = factorize(m, static_cast<Eigen::Index>(detail::positive_int(p, "d")), fo);
  ctx.emit("embedding", detail::required_path(p, "out"), embedding_bytes(e, ctx.config_hash));
  return {{"d", e.dim()}, {"boundary_tie", e.boundary_tie}};
}

inline Json project(const Json& p, StageContext& ctx) {
  const fs::path epath = detail::required_path(p, "embeddings");
  require_file(epath);
  const auto e = read_embeddings(epath);
  MatrixXd W = e.W;
  auto labels = e.labels;
  const auto words = detail::word_params(p, "subset", "words");
  if (!words.empty()) {
    W = detail::take_rows(W, detail::rows_for(labels, words, "project"));
    labels = words;
  }
  ProjectOptions po;
  po.exclude = p.at("exclude").get<std::vector<std::string>>();
  po.center = !p.at("no-center").get<bool>();
  const auto g = project_pca(W, labels, po);
  const fs::path out = detail::required_path(p, "out");
  ctx.emit("projection", out, projection_bytes(g, ctx.config_hash));
  ctx.emit_csv("geometry", detail::derived_path(p, "csv", out, ".csv"), geometry_csv(g));
  return {{"rows", g.Wbar.rows()}, {"rank", g.Wbar.cols()}};
}

inline Json gram_stage(const Json& p, StageContext& ctx) {
  const auto epath = detail::text_param(p, "embeddings"), ppath = detail::text_param(p, "projection");
  if (epath.empty() && ppath.empty()) throw UsageError("gram: give --embeddings or --projection");
  MatrixXd W;
  std::vector<std::string> labels;
  if (!epath.empty()) {
    require_file(epath);
    auto e = read_embeddings(epath);
    W = e.W;
    labels = e.labels;
  } else {
    require_file(ppath);
    auto g = read_projection(ppath);
    W = g.Wbar;
    labels = g.labels;
  }
  const auto words = detail::word_params(p, "subset", "words");
  if (!words.empty()) {
    W = detail::take_rows(W, detail::rows_for(labels, words, "gram"));
    labels = words;
  }
  ctx.emit_csv("gram", detail::required_path(p, "out"), labeled_matrix_csv(gram(W, p.at("centered").get<bool>()), labels, labels));
  return {{"rows", W.rows()}};
}

inline SpectralPrediction prediction_for(const Json& p) {
  auto bc = boundary_from_string(detail::text_param(p, "bc"));
  int D = static_cast<int>(detail::positive_int(p, "dim"));
  int L = static_cast<int>(detail::positive_int(p, "L"));
  double sigma = p.at("sigma").get<double>();
  double scale = p.at("scale").get<double>();
  bool periodized = bc == Boundary::periodic;
  auto words = p.at("lattice-words").get<std::vector<std::string>>();
  if (!detail::text_param(p, "fit").empty()) {
    require_file(detail::text_param(p, "fit"));
    const Json fit = read_json(detail::text_param(p, "fit"));
    try {
      sigma = fit.at("kernel").at("sigma").get<double>();
      bc = boundary_from_string(fit.at("lattice").at("bc").get<std::string>());
      L = fit.at("lattice").at("L").get<int>();
      D = 1;
      periodized = fit.at("kernel").at("periodized").get<bool>();
      // Operator normalization (site weight 2/L) to matrix entries.
      scale = fit.at("kernel").at("amplitude").get<double>() * L / 2.0;
      if (words.empty()) words = fit.at("lattice").at("words").get<std::vector<std::string>>();
    } catch (const Json::exception& e) {
      throw DataError(std::string("predict: malformed fit file: ") + e.what());
    }
  }
  if (!(sigma > 0.0)) throw UsageError("predict: --sigma must be > 0");
  const auto n_modes = p.at("modes").get<long long>();
  if (n_modes < 0) throw UsageError("predict: --modes must be >= 0");
  SpectralPrediction pred;
  if (bc == Boundary::open) {
    if (D != 1) throw UsageError("predict: open boundary conditions are one-dimensional");
    if (n_modes == 0) throw UsageError("predict: open boundary needs --modes");
    pred = predict_open_geometry(L, sigma, static_cast<int>(n_modes));
  } else if (D == 1 && periodized) {
    pred = periodized_exp_spectrum(L, sigma);
  } else {
    const auto lat = SemanticLattice::make(D, L, Boundary::periodic);
    pred = predict_fourier_geometry(lat, [&](double d) { return periodized ? periodized_exponential(d, sigma) : std::exp(-d / sigma); },
                                    lat.site_measure());
  }
  if (!(scale > 0.0)) throw UsageError("predict: --scale must be > 0");
  for (auto& m : pred.modes) {
    m.lambda *= scale;
    m.amplitude *= std::sqrt(scale);
  }
  if (n_modes > 0 && static_cast<std::size_t>(n_modes) < pred.modes.size()) {
    pred.modes.resize(static_cast<std::size_t>(n_modes));
    pred.samples = pred.samples.leftCols(n_modes).eval();
  }
  if (!words.empty()) {
    if (static_cast<Eigen::Index>(words.size()) != pred.samples.rows())
      throw DataError("predict: " + std::to_string(words.size()) + " lattice words for " + std::to_string(pred.samples.rows()) + " sites");
    pred.labels = words;
  }
  return pred;
}

inline Json predict(const Json& p, StageContext& ctx) {
  const auto pred = prediction_for(p);
  const int D = pred.modes.empty() ? 1 : static_cast<int>(std::max<std::size_t>(1, pred.modes.front().k.size()));
  ctx.emit_csv("prediction", detail::required_path(p, "out"), prediction_csv(pred, D));
  return {{"modes", pred.modes.size()}, {"sites", pred.samples.rows()}};
}

inline Json compare(const Json& p, StageContext& ctx) {
  const fs::path gp = detail::required_path(p, "projection"), pp = detail::required_path(p, "prediction");
  require_file(gp);
  require_file(pp);
  auto g = read_projection(gp);
  const auto pred = read_prediction_csv(pp);
  std::string matched = "label";
  if (std::all_of(pred.labels.begin(), pred.labels.end(),
                  [&](const std::string& l) { return std::find(g.labels.begin(), g.labels.end(), l) != g.labels.end(); })) {
    g.Wbar = detail::take_rows(g.Wbar, detail::rows_for(g.labels, pred.labels, "compare"));
    g.labels = pred.labels;
  } else if (g.labels.size() == pred.labels.size()) {
    matched = "position";
  } else {
    throw DataError("compare: projection rows and prediction sites do not match");
  }
  const auto c = compare_geometry(g, pred, static_cast<int>(p.at("lissajous-modes").get<long long>()));
  Json j = comparison_json(c);
  j["matched_by"] = matched;
  if (g.Wbar.cols() >= 2) j["empirical_circular_order"] = circular_order_recovered(g.Wbar.leftCols(2));
  const fs::path out = detail::required_path(p, "out");
  ctx.emit_json("comparison", out, j);
  ctx.emit_csv("lissajous", detail::derived_path(p, "lissajous", out, ".lissajous.csv"), lissajous_csv(c));
  return {{"top_pair_angle_deg", j["top_pair_angle_deg"]}, {"gram_relative_error_scaled", c.gram_error_scaled}};
}

inline Json decode(const Json& p, StageContext& ctx) {
  const auto epath = detail::text_param(p, "embeddings"), ppath = detail::text_param(p, "projection");
  if (epath.empty() && ppath.empty()) throw UsageError("decode: give --embeddings or --projection");
  const fs::path cpath = detail::required_path(p, "coords");
  require_file(cpath);
  const auto pts = read_points_csv(cpath);
  ProjectedGeometry g;
  if (!epath.empty()) {
    require_file(epath);
    const auto e = read_embeddings(epath);
    g = project_pca(detail::take_rows(e.W, detail::rows_for(e.labels, pts.labels, "decode")), pts.labels);
  } else {
    require_file(ppath);
    g = read_projection(ppath);
    g.Wbar = detail::take_rows(g.Wbar, detail::rows_for(g.labels, pts.labels, "decode"));
    g.labels = pts.labels;
  }
  MatrixXd x = pts.coords;
  x = x.rowwise() - x.colwise().mean();

  const auto admissible = admissible_ranks(g.singular_values);
  const bool allow_split = p.at("allow-split").get<bool>();
  std::vector<int> ranks;
  for (const auto& r : p.at("ranks")) {
    const int v = r.get<int>();
    if (v < 1 || v > g.Wbar.cols()) continue;
    if (!allow_split && std::find(admissible.begin(), admissible.end(), v) == admissible.end()) continue;
    ranks.push_back(v);
  }
  if (allow_split) std::cerr << "warning: ranks may split degenerate groups\n";
  if (ranks.empty()) throw UsageError("decode: no usable ranks (embedding rank " + std::to_string(g.Wbar.cols()) + ")");

  DoubleDescentConfig cfg;
  cfg.ranks = ranks;
  cfg.trials = static_cast<int>(detail::positive_int(p, "trials"));
  cfg.n_train = static_cast<int>(detail::positive_int(p, "train"));
  cfg.n_test = static_cast<int>(detail::positive_int(p, "test"));
  cfg.seed = static_cast<std::uint64_t>(p.at("seed").get<long long>());
  cfg.threads = detail::thread_param(p);
  const auto ridge = detail::text_param(p, "ridge");
  if (ridge == "none") cfg.ridge_grid = {0.0};
  else if (ridge != "auto") throw UsageError("decode: --ridge must be auto|none");
  const auto res = double_descent_experiment(g.Wbar, x, cfg);
  const auto pop = full_population_errors(g, x, ranks);
  const auto L = p.at("lattice-L").get<long long>();

  std::string csv = "r,train_mean,train_std,test_mean,test_std,ridge_train_mean,ridge_test_mean,ridge_test_std,best_ridge,"
                    "population_error,bound\n";
  for (std::size_t i = 0; i < res.curves.size(); ++i) {
    const auto& c = res.curves[i];
    std::string bound;
    if (L > 0) {
      try {
        bound = format_double(decoding_bound(c.r, static_cast<int>(L), static_cast<int>(x.cols())));
      } catch (const DataError&) {
      }
    }
    csv += std::to_string(c.r);
    for (double v : {c.train_mean, c.train_std, c.test_mean, c.test_std, c.ridge_train_mean, c.ridge_test_mean,
                     c.ridge_test_std, c.best_ridge, pop[i]})
      csv += "," + format_double(v);
    csv += "," + bound + "\n";
  }
  ctx.emit_csv("decode", detail::required_path(p, "out"), csv);
  return {{"ranks", ranks.size()}};
}

inline Json geo_kernel(const Json& p, StageContext& ctx) {
  const fs::path pts_path = detail::required_path(p, "points");
  require_file(pts_path);
  const auto pts = read_points_csv(pts_path);
  if (pts.coords.cols() != 2) throw DataError("geo-kernel: points need exactly two coordinates");
  ExponentialKernel k;
  k.sigma = p.at("sigma").get<double>();
  k.amplitude = p.at("amp").get<double>();
  const auto m = kernel_matrix_points(pts.coords, k, Eigen::Vector2d(1.0, p.at("aspect").get<double>()), pts.labels);
  const fs::path out = detail::required_path(p, "out");
  ctx.emit("matrix", out, matrix_bytes(m, ctx.config_hash));
  const auto g = project_pca(factorize(m, static_cast<Eigen::Index>(detail::positive_int(p, "d"))));
  ctx.emit_csv("geometry", detail::derived_path(p, "csv", out, ".csv"), geometry_csv(g));
  return {{"points", pts.labels.size()}};
}

inline Json combined_spectrum(const Json& p, StageContext& ctx) {
  const auto shape = detail::shape_params(p);
  const auto n = static_cast<int>(detail::positive_int(p, "N"));
  const SeasonalModel model = SeasonalModel::equispaced(n, shape.period, shape.width, p.at("mod-height").get<double>(), shape.family);
  const MatrixXd kt = seasonal_pmi(model).values;
  AttributeModel attrs{p.at("attrs").get<std::vector<double>>()};
  attrs.validate();
  const auto spec = circulant_spectrum(kt);
  auto modes = combined_model_spectrum(spec.mu, attrs);
  std::stable_sort(modes.begin(), modes.end(), [](const auto& a, const auto& b) { return a.value > b.value; });
  Json list = Json::array();
  std::vector<double> predicted;
  for (const auto& m : modes) {
    std::vector<int> subset;
    for (int r = 0; r < attrs.d(); ++r)
      if ((m.subset >> r) & 1u) subset.push_back(r + 1);
    list.push_back({{"value", m.value}, {"k", m.k}, {"subset", subset}});
    predicted.push_back(m.value);
  }
  Json j{{"N", n}, {"attrs", attrs.strengths}, {"alpha", Json::array()}, {"beta", Json::array()}, {"A", attrs.A()},
         {"seasonal_mu", std::vector<double>(spec.mu.data(), spec.mu.data() + spec.mu.size())}, {"modes", list}};
  for (int r = 0; r < attrs.d(); ++r) {
    j["alpha"].push_back(attrs.alpha(r));
    j["beta"].push_back(attrs.beta(r));
  }
  const auto total = static_cast<std::size_t>(n) << attrs.d();
  const auto guard = static_cast<std::size_t>(detail::positive_int(p, "size-guard"));
  if (p.at("dense-check").get<bool>()) {
    if (total > guard) throw UsageError("combined-spectrum: dense check of " + std::to_string(total) + " items exceeds the size guard");
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(combined_model_matrix(kt, attrs, guard).values, Eigen::EigenvaluesOnly);
    std::vector<double> dense(es.eigenvalues().data(), es.eigenvalues().data() + es.eigenvalues().size());
    std::sort(dense.begin(), dense.end());
    std::sort(predicted.begin(), predicted.end());
    double worst = 0.0;
    for (std::size_t i = 0; i < dense.size(); ++i) worst = std::max(worst, std::abs(dense[i] - predicted[i]));
    j["dense_max_abs_diff"] = worst;
  }
  ctx.emit_json("combined", detail::required_path(p, "out"), j);
  return {{"items", total}};
}

inline Json ablate_experiment(const Json& p, StageContext& ctx) {
  TargetMatrix m;
  if (!detail::text_param(p, "matrix").empty()) {
    require_file(detail::text_param(p, "matrix"));
    m = read_matrix(detail::text_param(p, "matrix"));
  } else {
    const auto shape = detail::shape_params(p);
    const auto model = SeasonalModel::equispaced(static_cast<int>(detail::positive_int(p, "N")), shape.period, shape.width,
                                                 p.at("mod-height").get<double>(), shape.family);
    const auto target = detail::text_param(p, "target");
    if (target == "pmi") m = seasonal_pmi(model);
    else if (target == "mstar") m = seasonal_mstar(model);
    else throw UsageError("ablate-experiment: --target must be pmi|mstar");
  }
  auto block = detail::word_params(p, "block", "block-words");
  if (block.empty()) {
    if (m.size() % 12 != 0) throw UsageError("ablate-experiment: give --block (matrix size is not a multiple of 12)");
    for (Eigen::Index i = 0; i < m.size(); i += m.size() / 12) block.push_back(m.labels[static_cast<std::size_t>(i)]);
  }
  const auto rows = detail::rows_for(m.labels, block, "ablate-experiment");
  Json runs = Json::array();
  for (const auto& d : p.at("dims")) {
    const auto rep = robustness_ablation(m, rows, d.get<Eigen::Index>());
    Json angles = Json::array();
    for (double a : rep.group_angles) angles.push_back(a * 180.0 / std::numbers::pi);
    Json coords = Json::array();
    for (Eigen::Index i = 0; i < rep.block_coords.rows(); ++i) coords.push_back(detail::matrix_rows_json(rep.block_coords, i));
    runs.push_back({{"d_embed", rep.d_embed},
                    {"top_pair_angle_deg", rep.top_pair_angle * 180.0 / std::numbers::pi},
                    {"group_angles_deg", angles},
                    {"procrustes_residual", rep.procrustes_residual},
                    {"gram_pearson", rep.gram_pearson},
                    {"order_recovered", rep.order_recovered},
                    {"block_coords", coords}});
  }
  ctx.emit_json("ablation", detail::required_path(p, "out"),
                {{"matrix", m.provenance}, {"size", m.size()}, {"block", block}, {"runs", runs}});
  return {{"runs", runs.size()}};
}

inline Json helper_scaling(const Json& p, StageContext& ctx) {
  HelperScalingConfig cfg;
  cfg.helper_counts = p.at("helper-counts").get<std::vector<int>>();
  cfg.months = static_cast<int>(detail::positive_int(p, "months"));
  cfg.period = p.at("period").get<double>();
  cfg.width = p.at("mod-width").get<double>();
  cfg.height = p.at("mod-height").get<double>();
  cfg.noise = p.at("noise").get<double>();
  cfg.d_embed = static_cast<Eigen::Index>(detail::positive_int(p, "d"));
  cfg.trials = static_cast<int>(detail::positive_int(p, "trials"));
  cfg.seed = static_cast<std::uint64_t>(p.at("seed").get<long long>());
  const auto res = helper_scaling_experiment(cfg);
  Json pts = Json::array();
  for (const auto& pt : res.points) pts.push_back({{"helpers", pt.helpers}, {"mean_error", pt.mean_error}, {"std_error", pt.std_error}});
  ctx.emit_json("helper-scaling", detail::required_path(p, "out"), {{"points", pts}, {"slope", res.slope}});
  return {{"slope", res.slope}};
}

inline Json seasonality(const Json& p, StageContext& ctx) {
  const fs::path epath = detail::required_path(p, "embeddings");
  require_file(epath);
  const auto e = read_embeddings(epath);
  const auto months = detail::word_params(p, "months", "month-words");
  if (months.empty()) throw UsageError("seasonality: give --months or --month-words");
  auto words = p.at("words").get<std::vector<std::string>>();
  if (words.empty()) words = e.labels;
  const auto scores = seasonality_scores(detail::take_rows(e.W, detail::rows_for(e.labels, words, "seasonality")), words,
                                         detail::take_rows(e.W, detail::rows_for(e.labels, months, "seasonality")));
  std::string csv = "word,magnitude,phase,month_center,re,im\n";
  for (const auto& s : scores)
    csv += s.word + "," + format_double(s.magnitude) + "," + format_double(s.phase) + "," + format_double(s.month_center) +
           "," + format_double(s.score.real()) + "," + format_double(s.score.imag()) + "\n";
  ctx.emit_csv("seasonality", detail::required_path(p, "out"), csv);
  return {{"words", scores.size()}};
}

} // namespace stages

using StageFn = std::function<Json(const Json&, StageContext&)>;

inline const std::map<std::string, StageFn>& stage_functions() {
  static const std::map<std::string, StageFn> fns = {
      {"synth", stages::synth},
      {"count", stages::count},
      {"build", stages::build},
      {"fit-kernel", stages::fit_kernel},
      {"embed", stages::embed},
      {"project", stages::project},
      {"gram", stages::gram_stage},
      {"predict", stages::predict},
      {"compare", stages::compare},
      {"decode", stages::decode},
      {"geo-kernel", stages::geo_kernel},
      {"combined-spectrum", stages::combined_spectrum},
      {"ablate-experiment", stages::ablate_experiment},
      {"helper-scaling", stages::helper_scaling},
      {"seasonality", stages::seasonality},
  };
  return fns;
}

// Hash of a parameter block or config, independent of key order.
inline std::string config_hash(const Json& j) { return Fnv1a::to_hex(fnv1a(nlohmann::json(j).dump())); }

// Runs one stage on a validated block.
inline Json run_stage(const std::string& name, const Json& params, StageContext& ctx) {
  ctx.stage = name;
  return stage_functions().at(name)(params, ctx);
}

// ---- run config ----
//
// {
//   "output_dir": "out", "seed": 3, "size_guard": 6000, "threads": 0,
//   "stages": ["synth", "count", "build", "build:months", ...],
//   "synth": {...}, "build:months": {...}
// }
//
// A stage label is a stage name with an optional ":tag". Unset inputs are
// taken from the latest earlier stage producing that artifact; unset outputs
// go to output_dir under a name derived from the artifact (and tag). Unset
// seed / size-guard / threads come from the top level.

struct ResolvedStage {
  std::string label;
  std::string name;
  Json params;
};

struct RunPlan {
  fs::path output_dir;
  std::string hash;
  std::vector<ResolvedStage> stages;
};

namespace detail {

inline std::string artifact_file(const std::string& artifact) {
  static const std::map<std::string, std::string> names = {
      {"corpus", "corpus.txt"},         {"model", "model.json"},          {"cooc", "cooc.csv"},
      {"vocab", "vocab.tsv"},           {"matrix", "matrix.bin"},         {"matrix-csv", "matrix.csv"},
      {"fit", "kernel_fit.json"},       {"embedding", "embeddings.bin"},  {"projection", "projection.bin"},
      {"geometry", "geometry.csv"},     {"gram", "gram.csv"},             {"prediction", "prediction.csv"},
      {"comparison", "comparison.json"}, {"lissajous", "lissajous.csv"}, {"decode", "decode.csv"},
      {"combined", "combined_spectrum.json"}, {"ablation", "ablation.json"}, {"helper-scaling", "helper_scaling.json"},
      {"seasonality", "seasonality.csv"}};
  auto it = names.find(artifact);
  return it == names.end() ? artifact : it->second;
}

} // namespace detail

inline RunPlan plan_run(const Json& cfg, const fs::path& base_dir = ".") {
  if (!cfg.is_object()) throw UsageError("run config must be a JSON object");
  if (!cfg.contains("stages") || !cfg["stages"].is_array() || cfg["stages"].empty())
    throw UsageError("run config: 'stages' must be a non-empty list");
  if (!cfg.contains("output_dir") || !cfg["output_dir"].is_string())
    throw UsageError("run config: 'output_dir' (string) is required");
  std::set<std::string> labels;
  for (const auto& s : cfg["stages"]) {
    if (!s.is_string()) throw UsageError("run config: stage labels must be strings");
    if (!labels.insert(s.get<std::string>()).second) throw UsageError("run config: duplicate stage '" + s.get<std::string>() + "'");
  }
  for (const auto& [key, v] : cfg.items()) {
    if (key == "stages" || key == "output_dir") continue;
    if (key == "seed" || key == "size_guard" || key == "threads") {
      if (!v.is_number_integer() || v.get<long long>() < 0) throw UsageError("run config: '" + key + "' must be a non-negative integer");
      continue;
    }
    // Blocks of stages not in the list are allowed (and still validated).
    if (!labels.count(key)) {
      const auto name = key.substr(0, key.find(':'));
      const auto& all = stage_schemas();
      auto it = std::find_if(all.begin(), all.end(), [&](const StageSchema& s) { return s.name == name; });
      if (it == all.end()) throw UsageError("run config: unknown key '" + key + "'");
      validate_params(*it, v);
    }
  }
  RunPlan plan;
  const fs::path out_dir = cfg["output_dir"].get<std::string>();
  plan.output_dir = out_dir.is_absolute() ? out_dir : base_dir / out_dir;
  const long long seed = cfg.value("seed", 0LL), guard = cfg.value("size_guard", 6000LL), threads = cfg.value("threads", 0LL);

  Json canonical = Json::object();
  canonical["output_dir"] = cfg["output_dir"];
  canonical["seed"] = seed;
  canonical["size_guard"] = guard;
  canonical["threads"] = threads;
  canonical["stages"] = cfg["stages"];
  std::map<std::string, fs::path> produced;
  for (const auto& s : cfg["stages"]) {
    const std::string label = s.get<std::string>();
    const auto colon = label.find(':');
    const std::string name = label.substr(0, colon), tag = colon == std::string::npos ? "" : label.substr(colon + 1);
    const StageSchema& schema = stage_schema(name);
    Json block = cfg.contains(label) ? cfg[label] : Json::object();
    if (!block.is_object()) throw UsageError("run config: block '" + label + "' must be an object");
    if (schema.find("seed") && !block.contains("seed")) block["seed"] = seed;
    if (schema.find("size-guard") && !block.contains("size-guard")) block["size-guard"] = guard;
    if (schema.find("threads") && !block.contains("threads")) block["threads"] = threads;
    Json params = validate_params(schema, block);
    canonical[label] = params;
    for (const auto& ps : schema.params) {
      auto& v = params[ps.key];
      if (ps.role == ParamRole::input && !v.get<std::string>().empty()) {
        const fs::path given = v.get<std::string>();
        v = (given.is_absolute() ? given : base_dir / given).string();
      } else if (ps.role == ParamRole::input && !ps.artifact.empty() && produced.count(ps.artifact)) {
        v = produced[ps.artifact].string();
      }
      if (ps.role == ParamRole::output) {
        if (v.get<std::string>().empty()) {
          if (ps.optional_output) continue;
          v = (plan.output_dir / ((tag.empty() ? "" : tag + "_") + detail::artifact_file(ps.artifact))).string();
        } else if (!fs::path(v.get<std::string>()).is_absolute()) {
          v = (plan.output_dir / v.get<std::string>()).string();
        }
        produced[ps.artifact] = v.get<std::string>();
      }
    }
    plan.stages.push_back({label, name, params});
  }
  plan.hash = config_hash(canonical);

  // Inputs that no earlier stage writes must exist before anything runs.
  std::set<std::string> written;
  for (const auto& st : plan.stages) {
    for (const auto& ps : stage_schema(st.name).params) {
      if (ps.role != ParamRole::input) continue;
      const auto v = st.params[ps.key].get<std::string>();
      if (ps.role == ParamRole::input && !v.empty() && !written.count(v) && !fs::is_regular_file(v))
        throw DataError("stage '" + st.label + "': missing input file: " + v);
      if (ps.role == ParamRole::input && ps.required && v.empty())
        throw UsageError("stage '" + st.label + "': no input for '" + ps.key + "'" +
                         (ps.artifact.empty() ? "" : " and no earlier stage produces " + ps.artifact));
    }
    for (const auto& ps : stage_schema(st.name).params)
      if (ps.role == ParamRole::output && !st.params[ps.key].get<std::string>().empty()) written.insert(st.params[ps.key].get<std::string>());
  }
  return plan;
}

struct RunFailure : Error {
  RunFailure(const Error& e, Json manifest) : Error(e.kind(), e.what()), manifest(std::move(manifest)) {}
  Json manifest;
};

// Executes the plan; writes output_dir/manifest.json (partial on failure)
// and returns it.
inline Json run_pipeline(const RunPlan& plan) {
  StageContext ctx;
  ctx.config_hash = plan.hash;
  Json manifest{{"config_hash", plan.hash}, {"status", "running"}, {"stages", Json::array()}, {"files", Json::array()}};
  auto finish = [&]() {
    manifest["files"] = Json::array();
    for (const auto& f : ctx.files) {
      const auto rel = fs::path(f.path).lexically_relative(plan.output_dir);
      const bool inside = !rel.empty() && *rel.begin() != "..";
      manifest["files"].push_back({{"stage", f.stage}, {"artifact", f.artifact},
                                   {"path", (inside ? rel : f.path).generic_string()}, {"bytes", f.bytes}, {"fnv1a", f.hash}});
    }
    write_json(plan.output_dir / "manifest.json", manifest);
  };
  fs::create_directories(plan.output_dir);
  for (const auto& st : plan.stages) {
    try {
      ctx.stage = st.label;
      Json summary = stage_functions().at(st.name)(st.params, ctx);
      manifest["stages"].push_back({{"stage", st.label}, {"summary", summary}});
    } catch (const Error& e) {
      manifest["status"] = "failed";
      manifest["failed_stage"] = st.label;
      manifest["error"] = e.what();
      finish();
      throw RunFailure(e, manifest);
    } catch (const std::exception& e) {
      const NumericalError wrapped(std::string("stage '") + st.label + "': " + e.what());
      manifest["status"] = "failed";
      manifest["failed_stage"] = st.label;
      manifest["error"] = wrapped.what();
      finish();
      throw RunFailure(wrapped, manifest);
    }
  }
  manifest["status"] = "complete";
  finish();
  return manifest;
}

inline Json run_pipeline(const Json& cfg, const fs::path& base_dir = ".") { return run_pipeline(plan_run(cfg, base_dir)); }

// "stage.key=value" override for a run config; the value is parsed with the
// stage schema (or as JSON for top-level keys).
inline void apply_override(Json& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw UsageError("--set expects stage.key=value, got '" + assignment + "'");
  const std::string lhs = assignment.substr(0, eq), value = assignment.substr(eq + 1);
  const auto dot = lhs.rfind('.');
  if (dot == std::string::npos) {
    try {
      cfg[lhs] = Json::parse(value);
    } catch (const Json::parse_error&) {
      cfg[lhs] = value;
    }
    return;
  }
  const std::string label = lhs.substr(0, dot), key = lhs.substr(dot + 1);
  const auto& schema = stage_schema(label.substr(0, label.find(':')));
  const ParamSpec* ps = schema.find(key);
  if (!ps) throw UsageError("--set: stage '" + schema.name + "' has no parameter '" + key + "'");
  cfg[label][key] = parse_param_text(*ps, value);
}

} // namespace symgeom
