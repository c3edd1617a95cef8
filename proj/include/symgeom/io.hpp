#pragma once

// File formats: vocabulary TSV, co-occurrence CSV, a binary container for
// matrices / embeddings / projections, CSV exports and JSON.

#include <bit>
#include <charconv>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "symgeom/corpus_stats.hpp"
#include "symgeom/lattice_theory.hpp"
#include "symgeom/matrix_builder.hpp"
#include "symgeom/spectral_embed.hpp"

namespace symgeom {

using Json = nlohmann::ordered_json;
namespace fs = std::filesystem;

// Shortest round-trip decimal form.
inline std::string format_double(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline double parse_double(std::string_view s, const std::string& what) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  double v = 0.0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw DataError(what + ": cannot parse number '" + std::string(s) + "'");
  return v;
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i)
    if (i == s.size() || s[i] == sep) {
      out.emplace_back(s.substr(start, i - start));
      start = i + 1;
    }
  return out;
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open input file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void require_file(const fs::path& path) {
  if (!fs::is_regular_file(path)) throw DataError("missing input file: " + path.string());
}

// Writes next to the target and renames, so readers never see a partial file.
inline void write_file_atomic(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::random_device rd;
  const fs::path tmp = path.string() + ".tmp-" + std::to_string(rd());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write file: " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      fs::remove(tmp);
      throw DataError("write failed: " + path.string());
    }
  }
  fs::rename(tmp, path);
}

inline void write_json(const fs::path& path, const Json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

inline Json read_json(const fs::path& path) {
  const std::string text = read_text(path);
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw DataError("invalid JSON in " + path.string() + ": " + e.what());
  }
}

// One word per line; blank lines and lines starting with '#' are skipped.
inline std::vector<std::string> read_wordlist(const fs::path& path) {
  std::vector<std::string> out;
  std::istringstream in(read_text(path));
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    out.push_back(line);
  }
  return out;
}

// ---- vocabulary ----

inline std::string vocabulary_tsv(const Vocabulary& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i)
    out += v.token(static_cast<TokenId>(i)) + "\t" + std::to_string(v.count(static_cast<TokenId>(i))) + "\n";
  return out;
}

inline Vocabulary read_vocabulary(const fs::path& path) {
  std::vector<std::pair<std::string, std::uint64_t>> items;
  std::istringstream in(read_text(path));
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || (lineno == 1 && line.rfind("# config_hash=", 0) == 0)) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected token<TAB>count");
    std::uint64_t c = 0;
    auto r = std::from_chars(line.data() + tab + 1, line.data() + line.size(), c);
    if (r.ec != std::errc()) throw DataError(path.string() + ":" + std::to_string(lineno) + ": bad count");
    items.emplace_back(line.substr(0, tab), c);
  }
  return Vocabulary::from_list(items);
}

// ---- co-occurrence table ----

inline std::string cooccurrence_csv(const CooccurrenceTable& t, const std::string& config_hash = "") {
  std::string out = "# V=" + std::to_string(t.vocab_size()) + ",L=" + std::to_string(t.window()) +
                    ",weighting_id=" + t.weighting_id() + ",Z=" + format_double(t.total_mass()) +
                    ",vocab_fingerprint=" + Fnv1a::to_hex(t.vocab_fingerprint());
  if (!t.ablated().empty()) {
    out += ",ablated=";
    for (std::size_t k = 0; k < t.ablated().size(); ++k) out += (k ? ";" : "") + std::to_string(t.ablated()[k]);
  }
  if (!config_hash.empty()) out += ",config_hash=" + config_hash;
  out += "\ni,j,mass\n";
  for (const auto& e : t.entries())
    out += std::to_string(e.i) + "," + std::to_string(e.j) + "," + format_double(e.mass) + "\n";
  return out;
}

inline CooccurrenceTable read_cooccurrence(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::string line;
  if (!std::getline(in, line) || line.rfind("# ", 0) != 0) throw DataError(path.string() + ": missing co-occurrence header");
  std::map<std::string, std::string> h;
  for (const auto& kv : split(line.substr(2), ',')) {
    auto eq = kv.find('=');
    if (eq != std::string::npos) h[kv.substr(0, eq)] = kv.substr(eq + 1);
  }
  for (const char* key : {"V", "L", "weighting_id", "Z", "vocab_fingerprint"})
    if (!h.count(key)) throw DataError(path.string() + ": header lacks " + key);
  std::getline(in, line);  // column names
  std::vector<PairEntry> entries;
  std::size_t lineno = 2;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto f = split(line, ',');
    if (f.size() != 3) throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected i,j,mass");
    entries.push_back({static_cast<TokenId>(std::stol(f[0])), static_cast<TokenId>(std::stol(f[1])),
                       parse_double(f[2], path.string())});
  }
  CooccurrenceTable t(std::stoull(h["V"]), std::stoull(h["vocab_fingerprint"], nullptr, 16), std::stoi(h["L"]),
                      h["weighting_id"], std::move(entries));
  if (std::abs(t.total_mass() - parse_double(h["Z"], path.string())) > 1e-9 * std::max(1.0, t.total_mass()))
    throw DataError(path.string() + ": Z in header does not match the entries");
  if (h.count("ablated")) {
    std::vector<TokenId> ids;
    for (const auto& s : split(h["ablated"], ';')) ids.push_back(static_cast<TokenId>(std::stol(s)));
    t.set_ablated(std::move(ids));
  }
  return t;
}

// ---- binary container ----
// "SYMGEOM1\n", one JSON header line, then the blocks listed in
// header["blocks"] as row-major little-endian float64.

struct Container {
  Json header;
  std::vector<MatrixXd> blocks;

  const MatrixXd& block(const std::string& name) const {
    const auto& names = header.at("blocks");
    for (std::size_t k = 0; k < names.size(); ++k)
      if (names[k].at("name") == name) return blocks.at(k);
    throw DataError("container has no block '" + name + "'");
  }
};

namespace detail {

inline constexpr std::string_view container_magic = "SYMGEOM1\n";

inline void append_double(std::string& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
}

inline double load_double(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(p[b]) << (8 * b);
  return std::bit_cast<double>(bits);
}

} // namespace detail

inline std::string container_bytes(Json header, const std::vector<std::pair<std::string, const MatrixXd*>>& blocks) {
  header["blocks"] = Json::array();
  for (const auto& [name, m] : blocks) header["blocks"].push_back({{"name", name}, {"rows", m->rows()}, {"cols", m->cols()}});
  std::string out(detail::container_magic);
  out += header.dump() + "\n";
  for (const auto& [name, m] : blocks)
    for (Eigen::Index i = 0; i < m->rows(); ++i)
      for (Eigen::Index j = 0; j < m->cols(); ++j) detail::append_double(out, (*m)(i, j));
  return out;
}

inline Container read_container(const fs::path& path, const std::string& type) {
  const std::string bytes = read_text(path);
  if (bytes.compare(0, detail::container_magic.size(), detail::container_magic) != 0)
    throw DataError(path.string() + ": not a symgeom container");
  const auto eol = bytes.find('\n', detail::container_magic.size());
  if (eol == std::string::npos) throw DataError(path.string() + ": truncated header");
  Container c;
  try {
    c.header = Json::parse(bytes.substr(detail::container_magic.size(), eol - detail::container_magic.size()));
  } catch (const Json::parse_error& e) {
    throw DataError(path.string() + ": bad header: " + e.what());
  }
  if (c.header.value("type", "") != type)
    throw DataError(path.string() + ": expected a " + type + " file, found '" + c.header.value("type", "") + "'");
  std::size_t pos = eol + 1;
  for (const auto& b : c.header.at("blocks")) {
    const auto rows = b.at("rows").get<Eigen::Index>(), cols = b.at("cols").get<Eigen::Index>();
    if (pos + static_cast<std::size_t>(rows * cols) * 8 > bytes.size()) throw DataError(path.string() + ": truncated data");
    MatrixXd m(rows, cols);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j, p += 8) m(i, j) = detail::load_double(p);
    pos += static_cast<std::size_t>(rows * cols) * 8;
    c.blocks.push_back(std::move(m));
  }
  if (pos != bytes.size()) throw DataError(path.string() + ": trailing bytes after data");
  return c;
}

inline std::string matrix_bytes(const TargetMatrix& m, const std::string& config_hash = "") {
  Json h{{"type", "matrix"}, {"kind", to_string(m.kind)}, {"labels", m.labels}, {"subset", m.subset},
         {"provenance", m.provenance}};
  if (!config_hash.empty()) h["config_hash"] = config_hash;
  return container_bytes(h, {{"values", &m.values}});
}

inline TargetMatrix read_matrix(const fs::path& path) {
  auto c = read_container(path, "matrix");
  TargetMatrix m;
  m.kind = matrix_kind_from_string(c.header.at("kind").get<std::string>());
  m.labels = c.header.at("labels").get<std::vector<std::string>>();
  m.subset = c.header.at("subset").get<std::vector<TokenId>>();
  m.provenance = c.header.at("provenance").get<std::string>();
  m.values = c.block("values");
  if (m.values.rows() != m.values.cols() || static_cast<std::size_t>(m.values.rows()) != m.labels.size())
    throw DataError(path.string() + ": matrix shape does not match its labels");
  return m;
}

inline std::string embedding_bytes(const EmbeddingSet& e, const std::string& config_hash = "") {
  Json h{{"type", "embedding"},
         {"d", e.dim()},
         {"labels", e.labels},
         {"subset", e.subset},
         {"order", e.order == ModeOrder::magnitude ? "magnitude" : "value"},
         {"boundary_tie", e.boundary_tie},
         {"eigvals", std::vector<double>(e.eigvals.data(), e.eigvals.data() + e.eigvals.size())}};
  if (!config_hash.empty()) h["config_hash"] = config_hash;
  return container_bytes(h, {{"W", &e.W}, {"modes", &e.modes}});
}

inline EmbeddingSet read_embeddings(const fs::path& path) {
  auto c = read_container(path, "embedding");
  EmbeddingSet e;
  e.labels = c.header.at("labels").get<std::vector<std::string>>();
  e.subset = c.header.at("subset").get<std::vector<TokenId>>();
  e.order = c.header.at("order") == "value" ? ModeOrder::value : ModeOrder::magnitude;
  e.boundary_tie = c.header.at("boundary_tie").get<bool>();
  const auto ev = c.header.at("eigvals").get<std::vector<double>>();
  e.eigvals = Eigen::Map<const VectorXd>(ev.data(), static_cast<Eigen::Index>(ev.size()));
  e.W = c.block("W");
  e.modes = c.block("modes");
  return e;
}

inline std::string projection_bytes(const ProjectedGeometry& g, const std::string& config_hash = "") {
  Json h{{"type", "projection"},
         {"labels", g.labels},
         {"excluded", g.excluded},
         {"centered", g.centered},
         {"singular_values",
          std::vector<double>(g.singular_values.data(), g.singular_values.data() + g.singular_values.size())}};
  if (!config_hash.empty()) h["config_hash"] = config_hash;
  return container_bytes(h, {{"Wbar", &g.Wbar}});
}

inline ProjectedGeometry read_projection(const fs::path& path) {
  auto c = read_container(path, "projection");
  ProjectedGeometry g;
  g.labels = c.header.at("labels").get<std::vector<std::string>>();
  g.excluded = c.header.at("excluded").get<std::vector<std::string>>();
  g.centered = c.header.at("centered").get<bool>();
  const auto sv = c.header.at("singular_values").get<std::vector<double>>();
  g.singular_values = Eigen::Map<const VectorXd>(sv.data(), static_cast<Eigen::Index>(sv.size()));
  g.Wbar = c.block("Wbar");
  return g;
}

// ---- CSV ----

// First column holds the row labels.
inline std::string labeled_matrix_csv(const MatrixXd& m, const std::vector<std::string>& row_labels,
                                      const std::vector<std::string>& col_names, const std::string& corner = "word") {
  std::string out = corner;
  for (const auto& c : col_names) out += "," + c;
  out += "\n";
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    out += i < static_cast<Eigen::Index>(row_labels.size()) ? row_labels[static_cast<std::size_t>(i)] : std::to_string(i);
    for (Eigen::Index j = 0; j < m.cols(); ++j) out += "," + format_double(m(i, j));
    out += "\n";
  }
  return out;
}

inline std::vector<std::string> numbered(const std::string& prefix, Eigen::Index n, int first = 1) {
  std::vector<std::string> out;
  for (Eigen::Index i = 0; i < n; ++i) out.push_back(prefix + std::to_string(i + first));
  return out;
}

inline std::string matrix_csv(const TargetMatrix& m) { return labeled_matrix_csv(m.values, m.labels, m.labels); }

// Columns: word, pc1..pcr. Excluded rows are flagged in the last column.
inline std::string geometry_csv(const ProjectedGeometry& g) {
  std::string out = "word";
  for (Eigen::Index c = 0; c < g.Wbar.cols(); ++c) out += ",pc" + std::to_string(c + 1);
  out += ",excluded\n";
  for (Eigen::Index i = 0; i < g.Wbar.rows(); ++i) {
    const auto& w = g.labels[static_cast<std::size_t>(i)];
    out += w;
    for (Eigen::Index c = 0; c < g.Wbar.cols(); ++c) out += "," + format_double(g.Wbar(i, c));
    out += std::find(g.excluded.begin(), g.excluded.end(), w) != g.excluded.end() ? ",1\n" : ",0\n";
  }
  return out;
}

// One row per mode: mu, type, k_1..k_D, lambda, amplitude, norm, residual,
// then the sampled mode value at every site (columns named by site label).
inline std::string prediction_csv(const SpectralPrediction& p, int D) {
  std::string out = "mu,type";
  for (int a = 1; a <= D; ++a) out += ",k" + std::to_string(a);
  out += ",lambda,amplitude,norm,residual";
  for (const auto& l : p.labels) out += "," + l;
  out += "\n";
  for (std::size_t m = 0; m < p.modes.size(); ++m) {
    const auto& md = p.modes[m];
    out += std::to_string(md.mu) + "," + to_string(md.type);
    for (int a = 0; a < D; ++a) out += "," + format_double(a < static_cast<int>(md.k.size()) ? md.k[static_cast<std::size_t>(a)] : 0.0);
    out += "," + format_double(md.lambda) + "," + format_double(md.amplitude) + "," + format_double(md.norm) + "," +
           format_double(md.residual);
    for (Eigen::Index s = 0; s < p.samples.rows(); ++s) out += "," + format_double(p.samples(s, static_cast<Eigen::Index>(m)));
    out += "\n";
  }
  return out;
}

inline ModeType mode_type_from_string(const std::string& s) {
  for (auto t : {ModeType::sin_pair, ModeType::cos_pair, ModeType::self_conjugate, ModeType::constant, ModeType::open_odd,
                 ModeType::open_even})
    if (to_string(t) == s) return t;
  throw DataError("unknown mode type '" + s + "'");
}

// Lines starting with '#' before the header row are comments.
inline std::vector<std::string> csv_lines(const fs::path& path) {
  std::vector<std::string> out;
  std::istringstream in(read_text(path));
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (out.empty() && (line.empty() || line[0] == '#')) continue;
    if (!line.empty()) out.push_back(line);
  }
  if (out.empty()) throw DataError(path.string() + ": empty file");
  return out;
}

inline SpectralPrediction read_prediction_csv(const fs::path& path) {
  const auto lines = csv_lines(path);
  const auto head = split(lines[0], ',');
  const auto lam = std::find(head.begin(), head.end(), "lambda");
  if (head.size() < 2 || head[0] != "mu" || head[1] != "type" || lam == head.end() || head.end() - lam < 4)
    throw DataError(path.string() + ": not a prediction file");
  const auto D = static_cast<std::size_t>(lam - head.begin()) - 2;
  const std::size_t first_site = D + 6;
  SpectralPrediction p;
  p.labels.assign(head.begin() + static_cast<std::ptrdiff_t>(first_site), head.end());
  p.samples.resize(static_cast<Eigen::Index>(p.labels.size()), static_cast<Eigen::Index>(lines.size() - 1));
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const auto f = split(lines[r], ',');
    if (f.size() != head.size()) throw DataError(path.string() + ":" + std::to_string(r + 1) + ": wrong field count");
    const std::string where = path.string() + ":" + std::to_string(r + 1);
    ModePrediction m;
    m.mu = static_cast<int>(parse_double(f[0], where));
    m.type = mode_type_from_string(f[1]);
    for (std::size_t a = 0; a < D; ++a) m.k.push_back(parse_double(f[2 + a], where));
    m.lambda = parse_double(f[2 + D], where);
    m.amplitude = parse_double(f[3 + D], where);
    m.norm = parse_double(f[4 + D], where);
    m.residual = parse_double(f[5 + D], where);
    for (std::size_t s = 0; s < p.labels.size(); ++s)
      p.samples(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(r - 1)) = parse_double(f[first_site + s], where);
    p.modes.push_back(std::move(m));
  }
  return p;
}

struct LabeledPoints {
  std::vector<std::string> labels;
  MatrixXd coords;
};

// CSV with a header row; first column is the label, the rest numbers.
inline LabeledPoints read_points_csv(const fs::path& path) {
  const auto lines = csv_lines(path);
  const auto cols = split(lines[0], ',').size();
  if (cols < 2) throw DataError(path.string() + ": need a label column and at least one coordinate");
  std::vector<std::vector<double>> rows;
  LabeledPoints out;
  for (std::size_t lineno = 2; lineno <= lines.size(); ++lineno) {
    auto f = split(lines[lineno - 1], ',');
    if (f.size() != cols) throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected " + std::to_string(cols) + " fields");
    out.labels.push_back(f[0]);
    std::vector<double> r;
    for (std::size_t k = 1; k < f.size(); ++k) r.push_back(parse_double(f[k], path.string() + ":" + std::to_string(lineno)));
    rows.push_back(std::move(r));
  }
  out.coords.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols - 1));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t k = 0; k + 1 < cols; ++k) out.coords(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
  return out;
}

} // namespace symgeom
