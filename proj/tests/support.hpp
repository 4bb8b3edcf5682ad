#pragma once

// Brute-force derivation enumeration and random small grammars.

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pcfgi/grammar.hpp"
#include "pcfgi/grammar_io.hpp"

namespace pcfgi::testing {

struct Derivation {
  double prob = 1.0;             // linear-space product of rule probabilities
  std::vector<int> rule_counts;  // per rule id
};

// Every derivation of `sentence[begin, end)` from `symbol`. Unary rules between
// nonterminals must be acyclic.
inline std::vector<Derivation> enumerate_derivations(const Pcfg& g,
                                                     std::span<const SymbolId> sentence,
                                                     std::size_t begin, std::size_t end,
                                                     SymbolId symbol) {
  std::vector<Derivation> out;
  for (RuleId r : g.rules_for(symbol)) {
    const Rule& rule = g.rule(r);
    const double p = std::exp(rule.log_prob);
    auto extend = [&](Derivation d) {
      d.prob *= p;
      d.rule_counts[r] += 1;
      out.push_back(std::move(d));
    };
    if (rule.arity == 1 && g.symbols().is_terminal(rule.rhs[0])) {
      if (end - begin == 1 && sentence[begin] == rule.rhs[0]) {
        extend(Derivation{1.0, std::vector<int>(g.num_rules(), 0)});
      }
    } else if (rule.arity == 1) {
      for (auto& d : enumerate_derivations(g, sentence, begin, end, rule.rhs[0])) extend(d);
    } else {
      for (std::size_t k = begin + 1; k < end; ++k) {
        const auto left = enumerate_derivations(g, sentence, begin, k, rule.rhs[0]);
        if (left.empty()) continue;
        const auto right = enumerate_derivations(g, sentence, k, end, rule.rhs[1]);
        for (const auto& a : left) {
          for (const auto& b : right) {
            Derivation d{a.prob * b.prob, a.rule_counts};
            for (std::size_t i = 0; i < d.rule_counts.size(); ++i) d.rule_counts[i] += b.rule_counts[i];
            extend(std::move(d));
          }
        }
      }
    }
  }
  return out;
}

inline std::vector<Derivation> enumerate_derivations(const Pcfg& g,
                                                     std::span<const SymbolId> sentence) {
  return enumerate_derivations(g, sentence, 0, sentence.size(), g.start());
}

struct OracleScores {
  bool parsed = false;
  double viterbi = 0.0;  // log of the best derivation
  double inside = 0.0;   // log of the sum
};

// Probabilities of every derivation of sentence[begin, end) from `symbol`.
inline void enumerate_derivation_probs(const Pcfg& g, std::span<const SymbolId> sentence,
                                       std::size_t begin, std::size_t end, SymbolId symbol,
                                       std::vector<double>& out) {
  for (RuleId r : g.rules_for(symbol)) {
    const Rule& rule = g.rule(r);
    const double p = std::exp(rule.log_prob);
    if (rule.arity == 1 && g.symbols().is_terminal(rule.rhs[0])) {
      if (end - begin == 1 && sentence[begin] == rule.rhs[0]) out.push_back(p);
    } else if (rule.arity == 1) {
      std::vector<double> sub;
      enumerate_derivation_probs(g, sentence, begin, end, rule.rhs[0], sub);
      for (double d : sub) out.push_back(p * d);
    } else {
      for (std::size_t k = begin + 1; k < end; ++k) {
        std::vector<double> left, right;
        enumerate_derivation_probs(g, sentence, begin, k, rule.rhs[0], left);
        if (left.empty()) continue;
        enumerate_derivation_probs(g, sentence, k, end, rule.rhs[1], right);
        for (double a : left) {
          for (double b : right) out.push_back(p * a * b);
        }
      }
    }
  }
}

inline OracleScores oracle_scores(const Pcfg& g, std::span<const SymbolId> sentence) {
  std::vector<double> all;
  enumerate_derivation_probs(g, sentence, 0, sentence.size(), g.start(), all);
  OracleScores s;
  double best = 0.0, total = 0.0;
  for (double d : all) {
    best = std::max(best, d);
    total += d;
  }
  s.parsed = !all.empty();
  s.viterbi = std::log(best);
  s.inside = std::log(total);
  return s;
}

// Expected rule counts for one sentence: sum_d p(d) c_r(d) / sum_d p(d).
inline std::vector<double> oracle_expected_counts(const Pcfg& g,
                                                  std::span<const SymbolId> sentence) {
  const auto all = enumerate_derivations(g, sentence);
  std::vector<double> counts(g.num_rules(), 0.0);
  double total = 0.0;
  for (const auto& d : all) {
    total += d.prob;
    for (std::size_t r = 0; r < counts.size(); ++r) counts[r] += d.prob * d.rule_counts[r];
  }
  for (auto& c : counts) c /= total;
  return counts;
}

// Random grammar with up to `max_nt` nonterminals, `max_t` terminals and
// `max_rules` rules. Nonterminal unary rules only point to higher indices.
inline Pcfg random_grammar(std::mt19937_64& rng, std::size_t max_nt = 6, std::size_t max_t = 3,
                           std::size_t max_rules = 8) {
  auto pick = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  const std::size_t nt = pick(1, max_nt);
  const std::size_t nterm = pick(1, max_t);
  const std::size_t nrules = pick(2, max_rules);
  Pcfg g;
  std::vector<SymbolId> n(nt), t(nterm);
  for (std::size_t i = 0; i < nt; ++i) n[i] = g.add_nonterminal("N" + std::to_string(i));
  for (std::size_t i = 0; i < nterm; ++i) {
    t[i] = g.add_terminal(std::string(1, static_cast<char>('a' + i)));
  }
  std::uniform_real_distribution<double> weight(0.05, 1.0);
  std::size_t attempts = 0;
  while (g.num_rules() < nrules && attempts++ < 200) {
    const std::size_t lhs = g.num_rules() == 0 ? 0 : pick(0, nt - 1);
    const std::size_t kind = g.num_rules() < 2 ? g.num_rules() : pick(0, 2);
    std::vector<SymbolId> rhs;
    if (kind == 0) {
      rhs = {t[pick(0, nterm - 1)]};
    } else if (kind == 1) {
      rhs = {n[pick(0, nt - 1)], n[pick(0, nt - 1)]};
    } else {
      if (lhs + 1 >= nt) continue;
      rhs = {n[pick(lhs + 1, nt - 1)]};
    }
    if (g.find_rule(n[lhs], rhs)) continue;
    g.add_rule(n[lhs], rhs, std::log(weight(rng)));
  }
  for (SymbolId s : n) {
    if (!g.rules_for(s).empty()) g.normalize(s);
  }
  g.set_start(n[0]);
  return g;
}

// Every sentence of length 1..max_len over the grammar's terminals.
inline void for_each_sentence(const Pcfg& g, std::size_t max_len,
                              const std::function<void(std::span<const SymbolId>)>& f) {
  std::vector<SymbolId> terminals;
  for (SymbolId s = 0; s < g.num_symbols(); ++s) {
    if (g.symbols().is_terminal(s)) terminals.push_back(s);
  }
  std::vector<SymbolId> sentence;
  std::function<void()> rec = [&] {
    if (!sentence.empty()) f(sentence);
    if (sentence.size() == max_len) return;
    for (SymbolId t : terminals) {
      sentence.push_back(t);
      rec();
      sentence.pop_back();
    }
  };
  rec();
}

inline bool close_relative(double a, double b, double tol) {
  return std::abs(a - b) <= tol * std::max(1.0, std::max(std::abs(a), std::abs(b)));
}

}  // namespace pcfgi::testing
