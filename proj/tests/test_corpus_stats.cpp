#include <gtest/gtest.h>

#include <map>
#include <random>

#include "symgeom/corpus_stats.hpp"

using namespace symgeom;

namespace {

Vocabulary abc() { return Vocabulary::from_list({{"a", 1}, {"b", 1}, {"c", 1}}); }

// Brute-force oracle: every (nu, mu) with 0 < |nu - mu| <= L contributes f to
// the ordered pair (w_nu, w_mu).
std::map<std::pair<TokenId, TokenId>, double> brute_force(const std::vector<Document>& docs, const WindowWeighting& f) {
  std::map<std::pair<TokenId, TokenId>, double> out;
  for (const auto& d : docs)
    for (std::size_t nu = 0; nu < d.size(); ++nu)
      for (std::size_t mu = 0; mu < d.size(); ++mu) {
        const auto dist = static_cast<int>(nu > mu ? nu - mu : mu - nu);
        if (dist == 0 || dist > f.window()) continue;
        out[{d[nu], d[mu]}] += f(dist);
      }
  return out;
}

std::vector<Document> random_docs(std::size_t n_docs, std::size_t V, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Document> docs(n_docs);
  for (auto& d : docs) {
    d.resize(5 + rng() % 40);
    for (auto& t : d) t = static_cast<TokenId>(rng() % V);
  }
  return docs;
}

} // namespace

TEST(Tokenize, LowercaseAndPunctuation) {
  TokenizeRules rules;
  rules.vocab_size = 2;
  auto c = tokenize_corpus("The cat. THE CAT", rules);
  ASSERT_EQ(c.vocab.size(), 2u);
  EXPECT_EQ(c.vocab.token(0), "cat");  // tie on count, lexicographic
  EXPECT_EQ(c.vocab.token(1), "the");
  Document expect{c.vocab.id("the"), c.vocab.id("cat"), c.vocab.id("the"), c.vocab.id("cat")};
  EXPECT_EQ(c.stream(), expect);
}

TEST(Tokenize, ShortDocumentsDropped) {
  TokenizeRules rules;
  rules.min_doc_length = 200;
  EXPECT_THROW(tokenize_corpus("one two three four five", rules), DataError);
  try {
    tokenize_corpus("one two three four five", rules);
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("empty corpus"), std::string::npos);
  }
}

TEST(Tokenize, OutOfVocabularyDiscarded) {
  TokenizeRules rules;
  rules.vocab_size = 1;
  auto c = tokenize_corpus("x x y\nx z", rules);
  EXPECT_EQ(c.stream(), (Document{0, 0, 0}));
}

TEST(Tokenize, FrequencyOrdering) {
  TokenizeRules rules;
  auto c = tokenize_corpus("b a b c b a", rules);
  EXPECT_EQ(c.vocab.tokens(), (std::vector<std::string>{"b", "a", "c"}));
  EXPECT_EQ(c.vocab.count(0), 3u);
}

TEST(Tokenize, ProbeWordsMissing) {
  TokenizeRules rules;
  rules.vocab_size = 1;
  rules.probe_words = {"january", "may"};
  try {
    tokenize_corpus("the the january may", rules);
    FAIL();
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("january"), std::string::npos);
    EXPECT_NE(msg.find("may"), std::string::npos);
  }
}

TEST(Tokenize, FormattedNumeralsStripped) {
  TokenizeRules rules;
  auto toks = normalize_document("In 1984, 1,000 people paid 3.50 each", rules);
  EXPECT_EQ(toks, (std::vector<std::string>{"in", "1984", "people", "paid", "each"}));
  rules.strip_formatted_numerals = false;
  toks = normalize_document("1,000", rules);
  EXPECT_EQ(toks, (std::vector<std::string>{"1", "000"}));
}

TEST(Cooccurrence, TwoTokens) {
  auto t = count_cooccurrences(std::vector<Document>{{0, 1}}, abc(), WindowWeighting::make("uniform", 1));
  EXPECT_DOUBLE_EQ(t.pair_mass(0, 1), 2.0);
  EXPECT_DOUBLE_EQ(t.pair_mass(1, 0), 2.0);
  EXPECT_DOUBLE_EQ(t.total_mass(), 2.0);
}

TEST(Cooccurrence, LinearWeightingHandCount) {
  auto t = count_cooccurrences(std::vector<Document>{{0, 1, 2}}, abc(), WindowWeighting::make("linear", 2));
  EXPECT_DOUBLE_EQ(t.pair_mass(0, 1), 4.0);
  EXPECT_DOUBLE_EQ(t.pair_mass(0, 2), 2.0);
  EXPECT_DOUBLE_EQ(t.pair_mass(1, 2), 4.0);
}

TEST(Cooccurrence, EmptyStreamInvalid) {
  auto t = count_cooccurrences(std::vector<Document>{}, abc(), WindowWeighting::make("linear", 4));
  EXPECT_FALSE(t.valid());
  EXPECT_THROW(t.unigram(0), DataError);
}

TEST(Cooccurrence, NoCrossDocumentPairs) {
  auto t = count_cooccurrences(std::vector<Document>{{0}, {1}}, abc(), WindowWeighting::make("uniform", 5));
  EXPECT_EQ(t.mass(0, 1), 0.0);
}

TEST(Cooccurrence, MatchesBruteForceAndNormalizes) {
  const std::size_t V = 17;
  auto docs = random_docs(30, V, 11);
  std::vector<std::pair<std::string, std::uint64_t>> items;
  for (std::size_t i = 0; i < V; ++i) items.push_back({"w" + std::to_string(i), 1});
  auto vocab = Vocabulary::from_list(items);
  for (const char* id : {"linear", "uniform", "harmonic"}) {
    auto f = WindowWeighting::make(id, 6);
    auto t = count_cooccurrences(docs, vocab, f);
    auto oracle = brute_force(docs, f);
    double z = 0.0;
    for (const auto& [k, v] : oracle) z += v;
    EXPECT_NEAR(t.total_mass(), z, 1e-9 * z);
    double psum = 0.0, usum = 0.0;
    for (TokenId i = 0; i < static_cast<TokenId>(V); ++i) {
      usum += t.unigram(i);
      for (TokenId j = 0; j < static_cast<TokenId>(V); ++j) {
        auto it = oracle.find({i, j});
        EXPECT_NEAR(t.mass(i, j), it == oracle.end() ? 0.0 : it->second, 1e-9);
        EXPECT_EQ(t.mass(i, j), t.mass(j, i));
        psum += t.probability(i, j);
      }
    }
    EXPECT_NEAR(psum, 1.0, 1e-12);
    EXPECT_NEAR(usum, 1.0, 1e-12);
  }
}

TEST(Cooccurrence, ShardingAndMergeInvariance) {
  const std::size_t V = 5000;  // above the dense limit: exercises the hash-map path
  auto docs = random_docs(200, V, 5);
  std::vector<std::pair<std::string, std::uint64_t>> items;
  for (std::size_t i = 0; i < V; ++i) items.push_back({"w" + std::to_string(i), 1});
  auto vocab = Vocabulary::from_list(items);
  auto f = WindowWeighting::make("linear", 16);
  auto whole = count_cooccurrences(docs, vocab, f);
  for (unsigned threads : {1u, 2u, 3u, 7u}) {
    auto sharded = count_sharded(docs, vocab, f, threads);
    ASSERT_EQ(sharded.entries().size(), whole.entries().size());
    for (std::size_t k = 0; k < whole.entries().size(); ++k) {
      EXPECT_EQ(sharded.entries()[k].i, whole.entries()[k].i);
      EXPECT_EQ(sharded.entries()[k].j, whole.entries()[k].j);
      EXPECT_EQ(sharded.entries()[k].mass, whole.entries()[k].mass);
    }
  }
  auto other = count_cooccurrences(docs, vocab, WindowWeighting::make("linear", 8));
  EXPECT_THROW(merge_tables(whole, other), DataError);
}

TEST(Cooccurrence, SelfPairsCountBothOffsets) {
  auto t = count_cooccurrences(std::vector<Document>{{0, 0}}, abc(), WindowWeighting::make("uniform", 1));
  EXPECT_DOUBLE_EQ(t.mass(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(t.total_mass(), 2.0);
  EXPECT_DOUBLE_EQ(t.unigram(0), 1.0);
}
