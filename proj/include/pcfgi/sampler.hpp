#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pcfgi/corpus.hpp"
#include "pcfgi/error.hpp"
#include "pcfgi/grammar.hpp"
#include "pcfgi/rng.hpp"

namespace pcfgi {

inline constexpr std::size_t kDefaultMaxSentenceLength = 30;
inline constexpr std::size_t kMaxConsecutiveRejections = 1000;

namespace detail {

inline RuleId choose_rule(const Pcfg& g, SymbolId lhs, Rng& rng) {
  const auto ids = g.rules_for(lhs);
  if (ids.empty()) throw SamplingError("nonterminal " + g.symbols().name(lhs) + " has no rules");
  const double u = rng.uniform();
  double cumulative = 0.0;
  for (RuleId r : ids) {
    cumulative += g.rule(r).prob();
    if (u < cumulative) return r;
  }
  // Rounding left u above the cumulative sum: take the last rule with mass.
  for (auto it = ids.rbegin(); it != ids.rend(); ++it) {
    if (g.rule(*it).log_prob != kNegInf) return *it;
  }
  return ids.back();
}

// One leftmost derivation; returns false once the yield exceeds max_len.
inline bool try_sample(const Pcfg& g, Rng& rng, std::size_t max_len, Sentence& out) {
  out.clear();
  std::vector<SymbolId> stack{g.start()};
  while (!stack.empty()) {
    const SymbolId s = stack.back();
    stack.pop_back();
    if (g.symbols().is_terminal(s)) {
      out.push_back(g.symbols().name(s));
      if (out.size() > max_len) return false;
      continue;
    }
    // Every pending nonterminal yields at least one token.
    if (out.size() + stack.size() + 1 > max_len) return false;
    const Rule& r = g.rule(choose_rule(g, s, rng));
    for (std::size_t i = r.arity; i-- > 0;) stack.push_back(r.rhs[i]);
  }
  return true;
}

}  // namespace detail

// Top-down leftmost expansion from the start symbol. Derivations whose yield
// would exceed max_len are rejected and redrawn.
inline Sentence sample_sentence(const Pcfg& g, Rng& rng,
                                std::size_t max_len = kDefaultMaxSentenceLength) {
  if (max_len == 0) throw ConfigError("max_len must be at least 1");
  if (g.start() == kNoSymbol) throw SamplingError("grammar has no start symbol");
  Sentence s;
  for (std::size_t attempt = 0; attempt < kMaxConsecutiveRejections; ++attempt) {
    if (detail::try_sample(g, rng, max_len, s)) return s;
  }
  throw SamplingError("1000 consecutive samples exceeded max_len " + std::to_string(max_len));
}

// Sentences are drawn sequentially from a single stream seeded with `seed`.
inline Corpus sample_corpus(const Pcfg& g, std::uint64_t seed, std::size_t n_sentences,
                            std::size_t max_len = kDefaultMaxSentenceLength) {
  Rng rng(seed);
  Corpus corpus;
  corpus.reserve(n_sentences);
  for (std::size_t i = 0; i < n_sentences; ++i) corpus.push_back(sample_sentence(g, rng, max_len));
  return corpus;
}

}  // namespace pcfgi
