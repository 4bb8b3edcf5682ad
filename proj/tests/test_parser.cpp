#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "pcfgi/corpus.hpp"
#include "pcfgi/grammar_io.hpp"
#include "pcfgi/induction.hpp"
#include "pcfgi/parser.hpp"
#include "support.hpp"

namespace pcfgi {
namespace {

EncodedSentence encode(const Pcfg& g, std::string_view text) {
  std::istringstream in{std::string(text)};
  Sentence s;
  for (std::string w; in >> w;) s.push_back(w);
  return encode_sentence(g, s);
}

const char* kBinaryA = "start: S\nS -> S S 0.4\nS -> 'a' 0.6\n";

TEST(Viterbi, DeterministicSingleRule) {
  const Pcfg g = parse_grammar("start: S\nS -> 'a' 1\n");
  const auto r = viterbi_parse(g, encode(g, "a"));
  EXPECT_EQ(r.log_prob, 0.0);
  EXPECT_TRUE(r.tree.children.empty());
  EXPECT_EQ(r.tree.span.begin, 0u);
  EXPECT_EQ(r.tree.span.end, 1u);
}

TEST(Viterbi, TwoTokensOneDerivation) {
  const Pcfg g = parse_grammar(kBinaryA);
  const auto s = encode(g, "a a");
  const auto r = viterbi_parse(g, s);
  EXPECT_NEAR(r.log_prob, std::log(0.144), 1e-14);
  EXPECT_NEAR(r.log_prob, testing::oracle_scores(g, s).viterbi, 1e-14);
}

TEST(Inside, TwoAndThreeTokens) {
  const Pcfg g = parse_grammar(kBinaryA);
  EXPECT_NEAR(inside_logprob(g, encode(g, "a a")), std::log(0.144), 1e-14);
  EXPECT_NEAR(inside_logprob(g, encode(g, "a a a")), std::log(0.06912), 1e-14);
}

TEST(Viterbi, TiesGoToTheSmallerSplit) {
  const Pcfg g = parse_grammar(kBinaryA);
  const auto r = viterbi_parse(g, encode(g, "a a a"));
  EXPECT_EQ(to_bracketed(g, r.tree), "(S (S a) (S (S a) (S a)))");
}

TEST(Viterbi, TiesGoToTheLowerRuleIndex) {
  const Pcfg g = parse_grammar(
      "start: S\nS -> A 0.5\nS -> B 0.5\nA -> 'a' 1\nB -> 'a' 1\n");
  const auto r = viterbi_parse(g, encode(g, "a"));
  EXPECT_EQ(to_bracketed(g, r.tree), "(S (A a))");
}

TEST(Viterbi, InitialGrammarParseOfBobTalksSlowly) {
  const double eps = 0.01;
  const std::vector<std::string> vocab{"Bob", "Mary", "slowly", "talks"};
  const Pcfg g = initial_grammar(vocab, eps);
  const auto r = viterbi_parse(g, encode(g, "Bob talks slowly"));
  EXPECT_EQ(to_bracketed(g, r.tree),
            "(S (S (S (X (A_Bob Bob))) (X (A_talks talks))) (X (A_slowly slowly)))");
  const double expected = std::log((1 - eps) * (1 - eps) * eps * 0.25 * 0.25 * 0.25);
  EXPECT_NEAR(r.log_prob, expected, 1e-12);
}

TEST(TreeRuleCounts, BobTalksSlowly) {
  const std::vector<std::string> vocab{"Bob", "Mary", "slowly", "talks"};
  const Pcfg g = initial_grammar(vocab, 0.01);
  const auto counts = tree_rule_counts(viterbi_parse(g, encode(g, "Bob talks slowly")).tree);
  auto nt = [&](const char* n) { return *g.symbols().find_nonterminal(n); };
  auto t = [&](const char* n) { return *g.symbols().find_terminal(n); };
  auto count = [&](SymbolId lhs, std::initializer_list<SymbolId> rhs) {
    auto it = counts.find(*g.find_rule(lhs, rhs));
    return it == counts.end() ? 0 : it->second;
  };
  EXPECT_EQ(count(nt("S"), {nt("S"), nt("X")}), 2);
  EXPECT_EQ(count(nt("S"), {nt("X")}), 1);
  for (const char* w : {"Bob", "talks", "slowly"}) {
    const std::string a = std::string("A_") + w;
    EXPECT_EQ(count(nt("X"), {nt(a.c_str())}), 1);
    EXPECT_EQ(count(nt(a.c_str()), {t(w)}), 1);
  }
  EXPECT_EQ(count(nt("X"), {nt("A_Mary")}), 0);
  std::int64_t total = 0;
  for (const auto& [r, c] : counts) total += c;
  EXPECT_EQ(total, 9);
}

TEST(TreeRuleCounts, SingleLeaf) {
  const Pcfg g = parse_grammar("start: S\nS -> 'a' 1\n");
  const auto counts = tree_rule_counts(viterbi_parse(g, encode(g, "a")).tree);
  ASSERT_EQ(counts.size(), 1u);
  EXPECT_EQ(counts.begin()->second, 1);
}

TEST(Parser, Errors) {
  const Pcfg g = parse_grammar("start: S\nS -> A A 1\nA -> 'a' 1\nB -> 'b' 1\n");
  EXPECT_THROW(encode(g, "a c"), UnknownTokenError);
  EXPECT_THROW(viterbi_parse(g, encode(g, "a")), NoParseError);
  EXPECT_THROW(inside_logprob(g, encode(g, "a b")), NoParseError);
  const SymbolId nonterminal = *g.symbols().find_nonterminal("A");
  const std::vector<SymbolId> bad{nonterminal};
  EXPECT_THROW(viterbi_parse(g, bad), UnknownTokenError);
  EXPECT_THROW(viterbi_parse(g, std::vector<SymbolId>{}), Error);
}

TEST(Parser, UnaryCyclesConverge) {
  const Pcfg g = parse_grammar(
      "start: S\nS -> A 0.5\nS -> 'a' 0.5\nA -> S 0.5\nA -> 'b' 0.5\n");
  EXPECT_NEAR(viterbi_parse(g, encode(g, "a")).log_prob, std::log(0.5), 1e-14);
  EXPECT_NEAR(viterbi_parse(g, encode(g, "b")).log_prob, std::log(0.25), 1e-14);
  // Geometric sums over the S -> A -> S cycle (probability 1/4 per turn).
  EXPECT_NEAR(inside_logprob(g, encode(g, "a")), std::log(2.0 / 3.0), 1e-12);
  EXPECT_NEAR(inside_logprob(g, encode(g, "b")), std::log(1.0 / 3.0), 1e-12);
}

TEST(Parser, MatchesEnumerationOnRandomGrammars) {
  std::mt19937_64 rng(2024);
  std::size_t parsed = 0;
  for (int i = 0; i < 60; ++i) {
    const Pcfg g = testing::random_grammar(rng);
    testing::for_each_sentence(g, 5, [&](std::span<const SymbolId> s) {
      const auto oracle = testing::oracle_scores(g, s);
      if (!oracle.parsed) {
        EXPECT_THROW(viterbi_parse(g, s), NoParseError);
        EXPECT_THROW(inside_logprob(g, s), NoParseError);
        return;
      }
      ++parsed;
      const auto v = viterbi_parse(g, s);
      const double in = inside_logprob(g, s);
      EXPECT_TRUE(testing::close_relative(v.log_prob, oracle.viterbi, 1e-12))
          << grammar_to_string(g) << v.log_prob << " vs " << oracle.viterbi;
      EXPECT_TRUE(testing::close_relative(in, oracle.inside, 1e-12))
          << grammar_to_string(g) << in << " vs " << oracle.inside;
      EXPECT_GE(in, v.log_prob - 1e-12);
      EXPECT_NEAR(tree_log_prob(g, v.tree), v.log_prob, 1e-12);
      std::vector<SymbolId> yield;
      tree_yield(g, v.tree, yield);
      EXPECT_TRUE(std::equal(yield.begin(), yield.end(), s.begin(), s.end()));
    });
  }
  EXPECT_GT(parsed, 100u);
}

TEST(Parser, ChildSpansPartitionParent) {
  const Pcfg g = parse_grammar(kBinaryA);
  const auto r = viterbi_parse(g, encode(g, "a a a a a"));
  std::function<void(const ParseTree&)> check = [&](const ParseTree& t) {
    if (t.children.size() == 2) {
      EXPECT_EQ(t.children[0].span.begin, t.span.begin);
      EXPECT_EQ(t.children[0].span.end, t.children[1].span.begin);
      EXPECT_EQ(t.children[1].span.end, t.span.end);
    }
    for (const auto& c : t.children) check(c);
  };
  check(r.tree);
}

}  // namespace
}  // namespace pcfgi
