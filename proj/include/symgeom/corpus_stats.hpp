#pragma once

// Tokenization, vocabularies and windowed co-occurrence counting.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <vector>

#include "symgeom/error.hpp"
#include "symgeom/hash.hpp"

namespace symgeom {

using TokenId = std::int32_t;
using Document = std::vector<TokenId>;

struct TokenizeRules {
  bool lowercase = true;
  // Drop numerals written with thousands separators or decimal points
  // ("1,000", "3.14"); plain integers such as years are kept.
  bool strip_formatted_numerals = true;
  // Replace every byte that is not an ASCII letter/digit with whitespace.
  // Bytes >= 0x80 are kept so UTF-8 words survive intact.
  bool replace_non_alnum = true;
  std::size_t vocab_size = 25000;
  std::size_t min_doc_length = 0;
  std::vector<std::string> probe_words;
};

class Vocabulary {
public:
  Vocabulary() = default;

  // Keeps the `cap` most frequent tokens; ties broken lexicographically.
  static Vocabulary from_counts(const std::unordered_map<std::string, std::uint64_t>& counts, std::size_t cap) {
    std::vector<std::pair<std::string, std::uint64_t>> items(counts.begin(), counts.end());
    std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
      return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    if (items.size() > cap) items.resize(cap);
    Vocabulary v;
    for (auto& [tok, c] : items) v.push_back(tok, c);
    return v;
  }

  // Vocabulary in the given order (ids follow the list).
  static Vocabulary from_list(const std::vector<std::pair<std::string, std::uint64_t>>& items) {
    Vocabulary v;
    for (const auto& [tok, c] : items) {
      if (v.index_.count(tok)) throw DataError("vocabulary: duplicate token '" + tok + "'");
      v.push_back(tok, c);
    }
    return v;
  }

  std::size_t size() const { return tokens_.size(); }
  bool empty() const { return tokens_.empty(); }
  const std::string& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::uint64_t count(TokenId id) const { return counts_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::optional<TokenId> find(std::string_view tok) const {
    auto it = index_.find(std::string(tok));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  TokenId id(std::string_view tok) const {
    auto found = find(tok);
    if (!found) throw DataError("word not in vocabulary: '" + std::string(tok) + "'");
    return *found;
  }

  std::vector<TokenId> ids(const std::vector<std::string>& words) const {
    std::vector<TokenId> out;
    out.reserve(words.size());
    for (const auto& w : words) out.push_back(id(w));
    return out;
  }

  // Order-sensitive fingerprint of the token list.
  std::uint64_t fingerprint() const {
    Fnv1a h;
    for (const auto& t : tokens_) {
      h.update(t);
      h.update(std::string_view("\n"));
    }
    return h.digest();
  }

private:
  void push_back(const std::string& tok, std::uint64_t c) {
    index_.emplace(tok, static_cast<TokenId>(tokens_.size()));
    tokens_.push_back(tok);
    counts_.push_back(c);
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
  std::vector<std::uint64_t> counts_;
};

namespace detail {

inline bool is_ascii_alnum(unsigned char c) { return std::isalnum(c) && c < 0x80; }

inline void strip_formatted_numerals(std::string& s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    const bool at_boundary = i == 0 || !is_ascii_alnum(static_cast<unsigned char>(s[i - 1]));
    if (!std::isdigit(c) || !at_boundary) {
      ++i;
      continue;
    }
    std::size_t j = i;
    bool separated = false;
    while (j < s.size()) {
      const auto cj = static_cast<unsigned char>(s[j]);
      if (std::isdigit(cj)) {
        ++j;
      } else if ((cj == ',' || cj == '.') && j + 1 < s.size() &&
                 std::isdigit(static_cast<unsigned char>(s[j + 1]))) {
        separated = true;
        ++j;
      } else {
        break;
      }
    }
    const bool ends_cleanly = j == s.size() || !is_ascii_alnum(static_cast<unsigned char>(s[j]));
    if (separated && ends_cleanly) std::fill(s.begin() + static_cast<std::ptrdiff_t>(i), s.begin() + static_cast<std::ptrdiff_t>(j), ' ');
    i = j;
  }
}

} // namespace detail

// Normalizes one document and splits it on whitespace.
inline std::vector<std::string> normalize_document(std::string_view raw, const TokenizeRules& rules) {
  std::string s(raw);
  if (rules.lowercase)
    for (auto& c : s)
      if (static_cast<unsigned char>(c) < 0x80) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (rules.strip_formatted_numerals) detail::strip_formatted_numerals(s);
  if (rules.replace_non_alnum)
    for (auto& c : s) {
      const auto uc = static_cast<unsigned char>(c);
      if (uc < 0x80 && !std::isalnum(uc)) c = ' ';
    }
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    std::size_t j = i;
    while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
    if (j > i) out.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

// Calls `fn` with the normalized tokens of every document (one per line)
// that meets the minimum length.
inline void for_each_document(std::istream& in, const TokenizeRules& rules,
                              const std::function<void(std::vector<std::string>&)>& fn) {
  std::string line;
  while (std::getline(in, line)) {
    auto toks = normalize_document(line, rules);
    if (toks.empty() || toks.size() < rules.min_doc_length) continue;
    fn(toks);
  }
}

inline void check_probe_words(const Vocabulary& vocab, const TokenizeRules& rules) {
  std::string missing;
  for (const auto& w : rules.probe_words)
    if (!vocab.find(w)) missing += (missing.empty() ? "" : ", ") + w;
  if (!missing.empty())
    throw DataError("vocabulary cap " + std::to_string(rules.vocab_size) + " excludes probe words: " + missing);
}

// First pass: token frequencies over the retained documents.
inline Vocabulary build_vocabulary(std::istream& in, const TokenizeRules& rules) {
  std::unordered_map<std::string, std::uint64_t> counts;
  std::size_t docs = 0;
  for_each_document(in, rules, [&](std::vector<std::string>& toks) {
    ++docs;
    for (auto& t : toks) ++counts[t];
  });
  if (docs == 0) throw DataError("empty corpus: no document survived filtering");
  Vocabulary vocab = Vocabulary::from_counts(counts, rules.vocab_size);
  check_probe_words(vocab, rules);
  return vocab;
}

// Maps tokens to ids, discarding out-of-vocabulary tokens.
inline Document encode_tokens(const std::vector<std::string>& toks, const Vocabulary& vocab) {
  Document doc;
  doc.reserve(toks.size());
  for (const auto& t : toks)
    if (auto id = vocab.find(t)) doc.push_back(*id);
  return doc;
}

struct TokenizedCorpus {
  Vocabulary vocab;
  std::vector<Document> documents;

  Document stream() const {
    Document out;
    for (const auto& d : documents) out.insert(out.end(), d.begin(), d.end());
    return out;
  }
};

inline TokenizedCorpus tokenize_corpus(std::istream& in, const TokenizeRules& rules) {
  std::vector<std::vector<std::string>> kept;
  std::unordered_map<std::string, std::uint64_t> counts;
  for_each_document(in, rules, [&](std::vector<std::string>& toks) {
    for (auto& t : toks) ++counts[t];
    kept.push_back(std::move(toks));
  });
  if (kept.empty()) throw DataError("empty corpus: no document survived filtering");
  TokenizedCorpus out;
  out.vocab = Vocabulary::from_counts(counts, rules.vocab_size);
  check_probe_words(out.vocab, rules);
  for (const auto& toks : kept) {
    Document d = encode_tokens(toks, out.vocab);
    if (!d.empty()) out.documents.push_back(std::move(d));
  }
  if (out.documents.empty()) throw DataError("empty corpus: no in-vocabulary tokens");
  return out;
}

inline TokenizedCorpus tokenize_corpus(std::string_view text, const TokenizeRules& rules) {
  std::istringstream in{std::string(text)};
  return tokenize_corpus(in, rules);
}

// Distance weighting f(d) for d = 1..L.
struct WindowWeighting {
  std::string id;
  std::vector<double> weights;  // weights[d-1] = f(d)

  int window() const { return static_cast<int>(weights.size()); }
  double operator()(int d) const { return weights.at(static_cast<std::size_t>(d - 1)); }

  static WindowWeighting make(const std::string& id, int window) {
    if (window < 1) throw UsageError("window must be >= 1");
    WindowWeighting w{id, {}};
    for (int d = 1; d <= window; ++d) {
      if (id == "linear") w.weights.push_back(window + 1.0 - d);
      else if (id == "uniform") w.weights.push_back(1.0);
      else if (id == "harmonic") w.weights.push_back(1.0 / d);
      else throw UsageError("unknown weighting '" + id + "' (linear|uniform|harmonic)");
    }
    return w;
  }

  static WindowWeighting custom(std::string id, std::vector<double> weights) {
    if (weights.empty()) throw UsageError("window must be >= 1");
    for (double f : weights)
      if (!(f > 0.0)) throw UsageError("weighting values must be positive");
    return {std::move(id), std::move(weights)};
  }
};

// One stored entry of the upper triangle.
struct PairEntry {
  TokenId i;
  TokenId j;  // i <= j
  double mass;
};

// Immutable symmetric co-occurrence statistics. `mass(i, j)` is the weighted
// count for the ordered pair (i, j); it equals mass(j, i), and Z is its sum
// over all ordered pairs, so P_ij = mass(i, j) / Z.
class CooccurrenceTable {
public:
  CooccurrenceTable() = default;

  CooccurrenceTable(std::size_t vocab_size, std::uint64_t vocab_fingerprint, int window, std::string weighting_id,
                    std::vector<PairEntry> entries)
      : vocab_size_(vocab_size),
        vocab_fingerprint_(vocab_fingerprint),
        window_(window),
        weighting_id_(std::move(weighting_id)),
        entries_(std::move(entries)) {
    std::sort(entries_.begin(), entries_.end(),
              [](const PairEntry& a, const PairEntry& b) { return a.i != b.i ? a.i < b.i : a.j < b.j; });
    row_mass_.assign(vocab_size_, 0.0);
    total_ = 0.0;
    for (const auto& e : entries_) {
      if (e.i > e.j || e.j >= static_cast<TokenId>(vocab_size_) || e.i < 0)
        throw DataError("co-occurrence entry out of range or not upper-triangular");
      if (e.mass < 0.0) throw DataError("negative co-occurrence mass");
      row_mass_[static_cast<std::size_t>(e.i)] += e.mass;
      if (e.i != e.j) {
        row_mass_[static_cast<std::size_t>(e.j)] += e.mass;
        total_ += 2.0 * e.mass;
      } else {
        total_ += e.mass;
      }
    }
  }

  std::size_t vocab_size() const { return vocab_size_; }
  std::uint64_t vocab_fingerprint() const { return vocab_fingerprint_; }
  int window() const { return window_; }
  const std::string& weighting_id() const { return weighting_id_; }
  double total_mass() const { return total_; }
  bool valid() const { return total_ > 0.0; }
  const std::vector<PairEntry>& entries() const { return entries_; }
  const std::vector<TokenId>& ablated() const { return ablated_; }

  double mass(TokenId i, TokenId j) const {
    if (i > j) std::swap(i, j);
    auto it = std::lower_bound(entries_.begin(), entries_.end(), std::pair{i, j},
                               [](const PairEntry& e, const std::pair<TokenId, TokenId>& k) {
                                 return e.i != k.first ? e.i < k.first : e.j < k.second;
                               });
    return (it != entries_.end() && it->i == i && it->j == j) ? it->mass : 0.0;
  }

  // Combined mass of the unordered pair: both orientations for i != j.
  double pair_mass(TokenId i, TokenId j) const { return i == j ? mass(i, i) : 2.0 * mass(i, j); }

  double probability(TokenId i, TokenId j) const {
    if (!valid()) throw DataError("co-occurrence table has zero total mass");
    return mass(i, j) / total_;
  }

  double unigram(TokenId i) const {
    if (!valid()) throw DataError("co-occurrence table has zero total mass");
    return row_mass_.at(static_cast<std::size_t>(i)) / total_;
  }

  std::vector<double> unigrams() const {
    std::vector<double> p(vocab_size_, 0.0);
    if (valid())
      for (std::size_t i = 0; i < vocab_size_; ++i) p[i] = row_mass_[i] / total_;
    return p;
  }

  bool compatible(const CooccurrenceTable& o) const {
    return vocab_size_ == o.vocab_size_ && vocab_fingerprint_ == o.vocab_fingerprint_ && window_ == o.window_ &&
           weighting_id_ == o.weighting_id_;
  }

  void set_ablated(std::vector<TokenId> ids) { ablated_ = std::move(ids); }

private:
  std::size_t vocab_size_ = 0;
  std::uint64_t vocab_fingerprint_ = 0;
  int window_ = 0;
  std::string weighting_id_;
  std::vector<PairEntry> entries_;
  std::vector<double> row_mass_;
  double total_ = 0.0;
  std::vector<TokenId> ablated_;
};

// Mutable accumulator owned by one worker. Small vocabularies use a dense
// upper triangle, larger ones a hash map.
class CooccurrenceCounter {
public:
  static constexpr std::size_t dense_limit = 4096;

  CooccurrenceCounter(std::size_t vocab_size, std::uint64_t vocab_fingerprint, WindowWeighting weighting)
      : vocab_size_(vocab_size), vocab_fingerprint_(vocab_fingerprint), weighting_(std::move(weighting)) {
    if (vocab_size_ <= dense_limit) dense_.assign(vocab_size_ * (vocab_size_ + 1) / 2, 0.0);
  }

  // Windows never cross the document boundary.
  void add_document(std::span<const TokenId> doc) {
    const int L = weighting_.window();
    const std::size_t n = doc.size();
    for (std::size_t nu = 0; nu < n; ++nu) {
      const std::size_t last = std::min(n - 1, nu + static_cast<std::size_t>(L));
      for (std::size_t mu = nu + 1; mu <= last; ++mu) {
        const double f = weighting_(static_cast<int>(mu - nu));
        // (i, j) at offset +d and (j, i) at offset -d; a self pair lands on
        // the same diagonal cell twice.
        add(doc[nu], doc[mu], doc[nu] == doc[mu] ? 2.0 * f : f);
      }
    }
  }

  CooccurrenceTable finish() const {
    std::vector<PairEntry> entries;
    if (!dense_.empty()) {
      std::size_t k = 0;
      for (std::size_t i = 0; i < vocab_size_; ++i)
        for (std::size_t j = i; j < vocab_size_; ++j, ++k)
          if (dense_[k] != 0.0) entries.push_back({static_cast<TokenId>(i), static_cast<TokenId>(j), dense_[k]});
    } else {
      entries.reserve(sparse_.size());
      for (const auto& [key, m] : sparse_)
        entries.push_back({static_cast<TokenId>(key / vocab_size_), static_cast<TokenId>(key % vocab_size_), m});
    }
    return {vocab_size_, vocab_fingerprint_, weighting_.window(), weighting_.id, std::move(entries)};
  }

private:
  void add(TokenId a, TokenId b, double w) {
    auto i = static_cast<std::size_t>(std::min(a, b));
    auto j = static_cast<std::size_t>(std::max(a, b));
    if (j >= vocab_size_) throw DataError("token id out of vocabulary range");
    if (!dense_.empty()) {
      dense_[i * vocab_size_ - i * (i - 1) / 2 + (j - i)] += w;
    } else {
      sparse_[static_cast<std::uint64_t>(i) * vocab_size_ + j] += w;
    }
  }

  std::size_t vocab_size_;
  std::uint64_t vocab_fingerprint_;
  WindowWeighting weighting_;
  std::vector<double> dense_;
  std::unordered_map<std::uint64_t, double> sparse_;
};

inline CooccurrenceTable count_cooccurrences(std::span<const Document> docs, const Vocabulary& vocab,
                                             const WindowWeighting& weighting) {
  CooccurrenceCounter counter(vocab.size(), vocab.fingerprint(), weighting);
  for (const auto& d : docs) counter.add_document(d);
  return counter.finish();
}

// Elementwise sum; requires identical vocabulary, window and weighting.
inline CooccurrenceTable merge_tables(const CooccurrenceTable& a, const CooccurrenceTable& b) {
  if (!a.compatible(b))
    throw DataError("merge_tables: tables differ in vocabulary, window or weighting");
  const auto& ea = a.entries();
  const auto& eb = b.entries();
  std::vector<PairEntry> out;
  out.reserve(ea.size() + eb.size());
  std::size_t p = 0, q = 0;
  auto less = [](const PairEntry& x, const PairEntry& y) { return x.i != y.i ? x.i < y.i : x.j < y.j; };
  while (p < ea.size() || q < eb.size()) {
    if (q == eb.size() || (p < ea.size() && less(ea[p], eb[q]))) {
      out.push_back(ea[p++]);
    } else if (p == ea.size() || less(eb[q], ea[p])) {
      out.push_back(eb[q++]);
    } else {
      out.push_back({ea[p].i, ea[p].j, ea[p].mass + eb[q].mass});
      ++p;
      ++q;
    }
  }
  return {a.vocab_size(), a.vocab_fingerprint(), a.window(), a.weighting_id(), std::move(out)};
}

// Splits documents into contiguous shards, counts each on its own thread and
// reduces the shard tables in shard order.
inline CooccurrenceTable count_sharded(std::span<const Document> docs, const Vocabulary& vocab,
                                       const WindowWeighting& weighting, unsigned threads) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(1, docs.size()))));
  std::vector<CooccurrenceTable> shards(threads);
  std::vector<std::thread> pool;
  const std::size_t per = (docs.size() + threads - 1) / threads;
  for (unsigned t = 0; t < threads; ++t) {
    const std::size_t lo = std::min(docs.size(), t * per);
    const std::size_t hi = std::min(docs.size(), lo + per);
    pool.emplace_back([&, t, lo, hi] { shards[t] = count_cooccurrences(docs.subspan(lo, hi - lo), vocab, weighting); });
  }
  for (auto& th : pool) th.join();
  CooccurrenceTable acc = shards.front();
  for (std::size_t t = 1; t < shards.size(); ++t) acc = merge_tables(acc, shards[t]);
  return acc;
}

} // namespace symgeom
