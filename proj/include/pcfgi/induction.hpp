#pragma once

// Greedy Bayesian grammar induction.
//
// The hypothesis grammar always has the shape
//
//   S -> S X   (1 - eps)        X -> A   for every A other than S, X
//   S -> X     (eps)            A_a -> 'a'
//
// plus rules introduced by moves. Sentences are processed one at a time: the
// new sentence is parsed exactly (Viterbi) with the current grammar, then
// moves triggered by that parse are scored by predicting how they would
// rewrite every stored parse, and the best move is applied while it raises
// log p(O|G) + log p(G). Parameters are a fixed function of the Viterbi rule
// counts, so the likelihood of stored parses is sum_r count(r) log p(r) and
// move deltas are computed from count changes alone.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "pcfgi/corpus.hpp"
#include "pcfgi/error.hpp"
#include "pcfgi/grammar.hpp"
#include "pcfgi/log_math.hpp"
#include "pcfgi/parser.hpp"

namespace pcfgi {

inline constexpr double kDefaultEpsilon = 0.01;
inline constexpr std::string_view kSentenceSymbol = "S";
inline constexpr std::string_view kExpansionSymbol = "X";
inline constexpr std::string_view kPreterminalPrefix = "A_";

enum class MoveKind : std::uint8_t { concat, disjoin, iterate };

// Concat(B, C) adds A -> B C; Disjoin(B, C) adds A -> B | C; Iterate(B) adds
// A -> A B | B. Every move also adds X -> A for its fresh symbol A.
struct Move {
  MoveKind kind = MoveKind::concat;
  SymbolId first = kNoSymbol;
  SymbolId second = kNoSymbol;

  static Move concat(SymbolId b, SymbolId c) { return {MoveKind::concat, b, c}; }
  static Move disjoin(SymbolId b, SymbolId c) {
    return {MoveKind::disjoin, std::min(b, c), std::max(b, c)};
  }
  static Move iterate(SymbolId b) { return {MoveKind::iterate, b, kNoSymbol}; }

  friend auto operator<=>(const Move&, const Move&) = default;
};

inline std::string to_string(const Move& m, const Pcfg& g) {
  const auto& n = g.symbols();
  switch (m.kind) {
    case MoveKind::concat:
      return "concat(" + n.name(m.first) + ", " + n.name(m.second) + ")";
    case MoveKind::disjoin:
      return "disjoin(" + n.name(m.first) + ", " + n.name(m.second) + ")";
    case MoveKind::iterate:
      return "iterate(" + n.name(m.first) + ")";
  }
  return "?";
}

// Top level of a stored parse: the subtrees below each X, left to right.
struct StoredParse {
  std::vector<ParseTree> items;
};

// Items [begin, begin + length) collapse into one node of the fresh symbol.
struct CollapseRange {
  std::uint32_t begin = 0;
  std::uint32_t length = 0;
};

struct SentenceEdit {
  std::uint32_t sentence = 0;
  std::vector<CollapseRange> ranges;
};

struct CountChange {
  std::int64_t spine = 0;  // S -> S X
  std::vector<std::pair<SymbolId, std::int64_t>> expansion;  // X -> B, existing B
  std::int64_t new_expansion = 0;                            // X -> A
  std::array<std::int64_t, 2> new_rules{};  // the move's rules, in creation order
};

struct Prediction {
  Move move;
  std::vector<SentenceEdit> edits;
  CountChange change;
  double delta_log_likelihood = 0.0;

  std::size_t num_rewrites() const {
    std::size_t n = 0;
    for (const auto& e : edits) n += e.ranges.size();
    return n;
  }
};

struct MoveEvaluation {
  Prediction prediction;
  double delta_log_prior = 0.0;
  double delta_objective = 0.0;
};

// Table-1 grammar over `vocab`, X expanding uniformly.
inline Pcfg initial_grammar(std::span<const std::string> vocab, double epsilon) {
  if (vocab.empty()) throw ConfigError("initial grammar needs a non-empty vocabulary");
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw ConfigError("epsilon must lie in (0, 1)");
  std::vector<std::string> words(vocab.begin(), vocab.end());
  std::sort(words.begin(), words.end());
  words.erase(std::unique(words.begin(), words.end()), words.end());

  Pcfg g;
  const SymbolId s = g.add_nonterminal(kSentenceSymbol);
  const SymbolId x = g.add_nonterminal(kExpansionSymbol);
  std::vector<SymbolId> pre, term;
  for (const auto& w : words) pre.push_back(g.add_nonterminal(std::string(kPreterminalPrefix) + w));
  for (const auto& w : words) term.push_back(g.add_terminal(w));
  g.set_start(s);
  g.add_rule(s, {s, x}, std::log1p(-epsilon));
  g.add_rule(s, {x}, std::log(epsilon));
  const double uniform = -std::log(static_cast<double>(words.size()));
  for (SymbolId a : pre) g.add_rule(x, {a}, uniform);
  for (std::size_t i = 0; i < words.size(); ++i) g.add_rule(pre[i], {term[i]}, 0.0);
  return g;
}

inline SymbolId expansion_symbol_of(const Pcfg& g) {
  const auto x = g.symbols().find_nonterminal(kExpansionSymbol);
  if (!x) throw ConfigError("grammar has no expansion symbol X");
  return *x;
}

// S -> S X gets 1 - eps, S -> X gets eps, X -> A gets its add-one smoothed
// Viterbi frequency, and every other nonterminal expands uniformly.
inline void assign_parameters(Pcfg& g, std::span<const std::int64_t> counts, double epsilon) {
  const SymbolId s = g.start();
  const SymbolId x = expansion_symbol_of(g);
  auto count_of = [&](RuleId r) { return r < counts.size() ? counts[r] : std::int64_t{0}; };
  for (SymbolId lhs = 0; lhs < g.num_symbols(); ++lhs) {
    const auto ids = g.rules_for(lhs);
    if (ids.empty()) continue;
    if (lhs == s) {
      for (RuleId r : ids) {
        const Rule& rule = g.rule(r);
        if (rule.arity == 2 && rule.rhs[0] == s && rule.rhs[1] == x) {
          g.set_log_prob(r, std::log1p(-epsilon));
        } else if (rule.arity == 1 && rule.rhs[0] == x) {
          g.set_log_prob(r, std::log(epsilon));
        } else {
          throw ConfigError("unexpected rule for the sentence symbol");
        }
      }
    } else if (lhs == x) {
      double total = 0.0;
      for (RuleId r : ids) total += static_cast<double>(count_of(r));
      const double denom = std::log(total + static_cast<double>(ids.size()));
      for (RuleId r : ids) {
        g.set_log_prob(r, std::log(static_cast<double>(count_of(r)) + 1.0) - denom);
      }
    } else {
      const double uniform = -std::log(static_cast<double>(ids.size()));
      for (RuleId r : ids) g.set_log_prob(r, uniform);
    }
  }
}

inline Pcfg set_parameters(std::span<const std::int64_t> counts, const Pcfg& skeleton,
                           double epsilon) {
  Pcfg g = skeleton;
  assign_parameters(g, counts, epsilon);
  return g;
}

class HypothesisState {
 public:
  HypothesisState(std::span<const std::string> vocab, double epsilon)
      : grammar_(initial_grammar(vocab, epsilon)), epsilon_(epsilon) {
    sentence_ = grammar_.start();
    expansion_ = expansion_symbol_of(grammar_);
    spine_rule_ = *grammar_.find_rule(sentence_, {sentence_, expansion_});
    single_rule_ = *grammar_.find_rule(sentence_, {expansion_});
    expansion_rule_.assign(grammar_.num_symbols(), kNoRule);
    for (RuleId r : grammar_.rules_for(expansion_)) expansion_rule_[grammar_.rule(r).rhs[0]] = r;
    counts_.assign(grammar_.num_rules(), 0);
    occurrences_.resize(grammar_.num_symbols());
  }

  const Pcfg& grammar() const noexcept { return grammar_; }
  std::span<const std::int64_t> viterbi_counts() const noexcept { return counts_; }
  const std::vector<StoredParse>& parse_store() const noexcept { return parses_; }
  const EncodedCorpus& sentences() const noexcept { return sentences_; }
  std::size_t n_processed() const noexcept { return parses_.size(); }
  double epsilon() const noexcept { return epsilon_; }
  std::size_t accepted_moves() const noexcept { return accepted_; }

  SymbolId sentence_symbol() const noexcept { return sentence_; }
  SymbolId expansion_symbol() const noexcept { return expansion_; }
  RuleId spine_rule() const noexcept { return spine_rule_; }
  RuleId single_rule() const noexcept { return single_rule_; }
  RuleId expansion_rule(SymbolId a) const {
    return a < expansion_rule_.size() ? expansion_rule_[a] : kNoRule;
  }

  // Sentences whose top level may contain `a` (a superset: entries are not
  // removed when a move rewrites the symbol away).
  std::span<const std::uint32_t> sentences_containing(SymbolId a) const {
    if (a >= occurrences_.size()) return {};
    return occurrences_[a];
  }

  // Splits a derivation from S into the subtrees under each X.
  std::vector<ParseTree> expansion_items(const ParseTree& tree) const {
    std::vector<ParseTree> items;
    const ParseTree* node = &tree;
    while (true) {
      if (node->symbol != sentence_) throw Error("parse is not rooted in the sentence symbol");
      const ParseTree* x_node = nullptr;
      if (node->rule == spine_rule_) {
        x_node = &node->children.at(1);
      } else if (node->rule == single_rule_) {
        x_node = &node->children.at(0);
      } else {
        throw Error("unexpected rule on the sentence spine");
      }
      if (x_node->symbol != expansion_ || x_node->children.size() != 1) {
        throw Error("malformed expansion node");
      }
      items.push_back(x_node->children.front());
      if (node->rule == single_rule_) break;
      node = &node->children.at(0);
    }
    std::reverse(items.begin(), items.end());
    return items;
  }

  ParseTree full_tree(std::size_t sentence) const {
    const auto& items = parses_.at(sentence).items;
    ParseTree root;
    for (std::size_t t = 0; t < items.size(); ++t) {
      ParseTree x_node{expansion_, expansion_rule(items[t].symbol), items[t].span, {items[t]}};
      if (t == 0) {
        root = ParseTree{sentence_, single_rule_, items[t].span, {std::move(x_node)}};
      } else {
        Span span{0, items[t].span.end};
        ParseTree next{sentence_, spine_rule_, span, {}};
        next.children.push_back(std::move(root));
        next.children.push_back(std::move(x_node));
        root = std::move(next);
      }
    }
    return root;
  }

  // Stores the Viterbi parse of a new sentence and adds its rule counts.
  void add_parse(const ParseTree& tree, EncodedSentence sentence) {
    StoredParse parse{expansion_items(tree)};
    const auto id = static_cast<std::uint32_t>(parses_.size());
    add_counts(parse, +1);
    for (const auto& item : parse.items) note_occurrence(item.symbol, id);
    parses_.push_back(std::move(parse));
    sentences_.push_back(std::move(sentence));
    refresh_parameters();
  }

  // Adds the move's fresh symbol and rules and rewrites the stored parses as
  // predicted. Returns the fresh symbol.
  SymbolId apply(const Prediction& p) {
    const Move& m = p.move;
    std::string name;
    do {
      name = "N" + std::to_string(next_symbol_++);
    } while (grammar_.symbols().find_nonterminal(name));
    const SymbolId a = grammar_.add_nonterminal(name);
    std::array<RuleId, 2> own{kNoRule, kNoRule};
    switch (m.kind) {
      case MoveKind::concat:
        own[0] = grammar_.add_rule(a, {m.first, m.second}, 0.0);
        break;
      case MoveKind::disjoin:
        own[0] = grammar_.add_rule(a, {m.first}, 0.0);
        own[1] = grammar_.add_rule(a, {m.second}, 0.0);
        break;
      case MoveKind::iterate:
        own[0] = grammar_.add_rule(a, {a, m.first}, 0.0);
        own[1] = grammar_.add_rule(a, {m.first}, 0.0);
        break;
    }
    const RuleId x_rule = grammar_.add_rule(expansion_, {a}, 0.0);
    expansion_rule_.resize(grammar_.num_symbols(), kNoRule);
    expansion_rule_[a] = x_rule;
    occurrences_.resize(grammar_.num_symbols());
    counts_.resize(grammar_.num_rules(), 0);

    for (const SentenceEdit& edit : p.edits) {
      auto& items = parses_.at(edit.sentence).items;
      std::vector<ParseTree> rewritten;
      rewritten.reserve(items.size());
      std::size_t pos = 0;
      for (const CollapseRange& range : edit.ranges) {
        for (; pos < range.begin; ++pos) rewritten.push_back(std::move(items[pos]));
        rewritten.push_back(collapse(m, a, own, std::span(items).subspan(range.begin, range.length)));
        pos = range.begin + range.length;
      }
      for (; pos < items.size(); ++pos) rewritten.push_back(std::move(items[pos]));
      items = std::move(rewritten);
      note_occurrence(a, edit.sentence);
    }

    counts_[spine_rule_] += p.change.spine;
    for (const auto& [b, d] : p.change.expansion) counts_[expansion_rule(b)] += d;
    counts_[x_rule] += p.change.new_expansion;
    for (std::size_t i = 0; i < own.size(); ++i) {
      if (own[i] != kNoRule) counts_[own[i]] += p.change.new_rules[i];
    }
    ++accepted_;
    refresh_parameters();
    return a;
  }

  // Replaces every stored parse by its exact Viterbi parse under the current
  // grammar. Returns {log-likelihood before, after}.
  std::pair<double, double> reparse_all() {
    const double before = log_likelihood();
    std::fill(counts_.begin(), counts_.end(), 0);
    for (auto& occ : occurrences_) occ.clear();
    const Pcfg snapshot = grammar_;
    for (std::size_t i = 0; i < parses_.size(); ++i) {
      auto result = viterbi_parse(snapshot, sentences_[i]);
      parses_[i].items = expansion_items(result.tree);
      add_counts(parses_[i], +1);
      for (const auto& item : parses_[i].items) {
        note_occurrence(item.symbol, static_cast<std::uint32_t>(i));
      }
    }
    refresh_parameters();
    return {before, log_likelihood()};
  }

  // sum_r count(r) log p(r) over the stored parses.
  double log_likelihood() const {
    double ll = 0.0;
    for (RuleId r = 0; r < counts_.size(); ++r) {
      if (counts_[r] != 0) ll += static_cast<double>(counts_[r]) * grammar_.rule(r).log_prob;
    }
    return ll;
  }

  double log_objective() const { return log_likelihood() + log_prior(grammar_); }

 private:
  ParseTree collapse(const Move& m, SymbolId a, const std::array<RuleId, 2>& own,
                     std::span<ParseTree> run) const {
    switch (m.kind) {
      case MoveKind::concat: {
        ParseTree node{a, own[0], {run[0].span.begin, run[1].span.end}, {}};
        node.children.push_back(std::move(run[0]));
        node.children.push_back(std::move(run[1]));
        return node;
      }
      case MoveKind::disjoin: {
        const RuleId r = run[0].symbol == m.first ? own[0] : own[1];
        ParseTree node{a, r, run[0].span, {}};
        node.children.push_back(std::move(run[0]));
        return node;
      }
      case MoveKind::iterate: {
        ParseTree node{a, own[1], run[0].span, {}};
        node.children.push_back(std::move(run[0]));
        for (std::size_t t = 1; t < run.size(); ++t) {
          ParseTree next{a, own[0], {node.span.begin, run[t].span.end}, {}};
          next.children.push_back(std::move(node));
          next.children.push_back(std::move(run[t]));
          node = std::move(next);
        }
        return node;
      }
    }
    throw std::logic_error("unknown move kind");
  }

  void add_counts(const StoredParse& parse, std::int64_t sign) {
    if (parse.items.empty()) return;
    counts_[single_rule_] += sign;
    counts_[spine_rule_] += sign * static_cast<std::int64_t>(parse.items.size() - 1);
    std::map<RuleId, std::int64_t> sub;
    for (const auto& item : parse.items) {
      counts_[expansion_rule(item.symbol)] += sign;
      add_rule_counts(item, sub);
    }
    for (const auto& [r, c] : sub) counts_[r] += sign * c;
  }

  void note_occurrence(SymbolId a, std::uint32_t sentence) {
    auto& occ = occurrences_.at(a);
    if (occ.empty() || occ.back() < sentence) {
      occ.push_back(sentence);
    } else if (!std::binary_search(occ.begin(), occ.end(), sentence)) {
      occ.insert(std::lower_bound(occ.begin(), occ.end(), sentence), sentence);
    }
  }

  void refresh_parameters() { assign_parameters(grammar_, counts_, epsilon_); }

  Pcfg grammar_;
  double epsilon_;
  SymbolId sentence_ = kNoSymbol;
  SymbolId expansion_ = kNoSymbol;
  RuleId spine_rule_ = kNoRule;
  RuleId single_rule_ = kNoRule;
  std::vector<RuleId> expansion_rule_;
  std::vector<std::int64_t> counts_;
  std::vector<StoredParse> parses_;
  EncodedCorpus sentences_;
  std::vector<std::vector<std::uint32_t>> occurrences_;
  std::size_t next_symbol_ = 1;
  std::size_t accepted_ = 0;
};

struct TriggerOptions {
  bool concat = true;
  bool disjoin = true;
  bool iterate = true;
};

// True when the grammar already holds the rules this move would create.
inline bool move_exists(const HypothesisState& state, const Move& m) {
  const Pcfg& g = state.grammar();
  switch (m.kind) {
    case MoveKind::concat:
      return !g.rules_with_rhs({m.first, m.second}).empty();
    case MoveKind::disjoin:
      for (RuleId r : g.rules_with_rhs({m.first})) {
        const SymbolId lhs = g.rule(r).lhs;
        if (lhs != state.expansion_symbol() && g.rules_for(lhs).size() == 2 &&
            g.find_rule(lhs, {m.second})) {
          return true;
        }
      }
      return false;
    case MoveKind::iterate:
      for (RuleId r : g.rules_with_rhs({m.first})) {
        const SymbolId lhs = g.rule(r).lhs;
        if (g.find_rule(lhs, {lhs, m.first})) return true;
      }
      return false;
  }
  return false;
}

// Moves licensed by adjacency in the top level of a parse:
//   Concat(B, C)  for each adjacent pair X->B, X->C;
//   Iterate(B)    for each maximal run of two or more X->B;
//   Disjoin(B, C) for B != C both adjacent, on the same side, to a common D.
// Moves whose rules already exist are dropped. Result is sorted and unique.
inline std::vector<Move> enumerate_triggers(const HypothesisState& state,
                                            std::span<const ParseTree> items,
                                            const TriggerOptions& options = {}) {
  std::set<Move> moves;
  const std::size_t m = items.size();
  if (options.concat) {
    for (std::size_t t = 0; t + 1 < m; ++t) {
      moves.insert(Move::concat(items[t].symbol, items[t + 1].symbol));
    }
  }
  if (options.iterate) {
    for (std::size_t t = 0; t < m;) {
      std::size_t u = t + 1;
      while (u < m && items[u].symbol == items[t].symbol) ++u;
      if (u - t >= 2) moves.insert(Move::iterate(items[t].symbol));
      t = u;
    }
  }
  if (options.disjoin) {
    std::map<SymbolId, std::set<SymbolId>> right_of, left_of;
    for (std::size_t t = 0; t + 1 < m; ++t) {
      right_of[items[t].symbol].insert(items[t + 1].symbol);
      left_of[items[t + 1].symbol].insert(items[t].symbol);
    }
    for (const auto* table : {&right_of, &left_of}) {
      for (const auto& [d, neighbours] : *table) {
        for (auto b = neighbours.begin(); b != neighbours.end(); ++b) {
          for (auto c = std::next(b); c != neighbours.end(); ++c) {
            moves.insert(Move::disjoin(*b, *c));
          }
        }
      }
    }
  }
  std::vector<Move> out;
  for (const Move& mv : moves) {
    if (mv.first == state.sentence_symbol() || mv.first == state.expansion_symbol()) continue;
    if (mv.second == state.sentence_symbol() || mv.second == state.expansion_symbol()) continue;
    if (!move_exists(state, mv)) out.push_back(mv);
  }
  return out;
}

inline std::vector<Move> enumerate_triggers(const HypothesisState& state, const ParseTree& tree,
                                            const TriggerOptions& options = {}) {
  const auto items = state.expansion_items(tree);
  return enumerate_triggers(state, std::span<const ParseTree>(items), options);
}

namespace detail {

inline double xlog1p_count(std::int64_t c) {
  return c > 0 ? static_cast<double>(c) * std::log(static_cast<double>(c) + 1.0) : 0.0;
}

inline std::vector<std::uint32_t> merge_sorted(std::span<const std::uint32_t> a,
                                               std::span<const std::uint32_t> b) {
  std::vector<std::uint32_t> out;
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

}  // namespace detail

// Predicts the rewrite of every stored parse under move `m` and the resulting
// change in the count-based log-likelihood.
inline Prediction predict_viterbi_delta(const HypothesisState& state, const Move& m) {
  Prediction p;
  p.move = m;
  std::int64_t first_uses = 0, second_uses = 0;
  auto scan = [&](std::span<const std::uint32_t> candidates, auto&& find_ranges) {
    for (std::uint32_t sid : candidates) {
      SentenceEdit edit{sid, {}};
      find_ranges(state.parse_store()[sid].items, edit.ranges);
      if (!edit.ranges.empty()) p.edits.push_back(std::move(edit));
    }
  };

  switch (m.kind) {
    case MoveKind::concat: {
      const auto lb = state.sentences_containing(m.first);
      const auto lc = state.sentences_containing(m.second);
      scan(lb.size() <= lc.size() ? lb : lc, [&](const auto& items, auto& ranges) {
        for (std::size_t t = 0; t + 1 < items.size();) {
          if (items[t].symbol == m.first && items[t + 1].symbol == m.second) {
            ranges.push_back({static_cast<std::uint32_t>(t), 2});
            t += 2;
          } else {
            ++t;
          }
        }
      });
      const auto pairs = static_cast<std::int64_t>(p.num_rewrites());
      p.change.spine = -pairs;
      if (m.first == m.second) {
        p.change.expansion = {{m.first, -2 * pairs}};
      } else {
        p.change.expansion = {{m.first, -pairs}, {m.second, -pairs}};
      }
      p.change.new_expansion = pairs;
      p.change.new_rules = {pairs, 0};
      break;
    }
    case MoveKind::disjoin: {
      const auto candidates = detail::merge_sorted(state.sentences_containing(m.first),
                                                   state.sentences_containing(m.second));
      scan(candidates, [&](const auto& items, auto& ranges) {
        for (std::size_t t = 0; t < items.size(); ++t) {
          if (items[t].symbol == m.first) {
            ++first_uses;
            ranges.push_back({static_cast<std::uint32_t>(t), 1});
          } else if (items[t].symbol == m.second) {
            ++second_uses;
            ranges.push_back({static_cast<std::uint32_t>(t), 1});
          }
        }
      });
      p.change.expansion = {{m.first, -first_uses}, {m.second, -second_uses}};
      p.change.new_expansion = first_uses + second_uses;
      p.change.new_rules = {first_uses, second_uses};
      break;
    }
    case MoveKind::iterate: {
      std::int64_t runs = 0, members = 0;
      scan(state.sentences_containing(m.first), [&](const auto& items, auto& ranges) {
        for (std::size_t t = 0; t < items.size();) {
          std::size_t u = t;
          while (u < items.size() && items[u].symbol == m.first) ++u;
          if (u - t >= 2) {
            ranges.push_back({static_cast<std::uint32_t>(t), static_cast<std::uint32_t>(u - t)});
            ++runs;
            members += static_cast<std::int64_t>(u - t);
          }
          t = u > t ? u : t + 1;
        }
      });
      p.change.spine = -(members - runs);
      p.change.expansion = {{m.first, -members}};
      p.change.new_expansion = runs;
      p.change.new_rules = {members - runs, runs};
      break;
    }
  }

  // X part of the likelihood: sum_A c_A log(c_A + 1) - N log(N + K).
  const Pcfg& g = state.grammar();
  const auto counts = state.viterbi_counts();
  double s1 = 0.0;
  std::int64_t total = 0;
  const auto x_rules = g.rules_for(state.expansion_symbol());
  for (RuleId r : x_rules) {
    s1 += detail::xlog1p_count(counts[r]);
    total += counts[r];
  }
  const auto k = static_cast<double>(x_rules.size());
  const double x_before = s1 - static_cast<double>(total) * std::log(static_cast<double>(total) + k);

  double s1_after = s1;
  std::int64_t total_after = total + p.change.new_expansion;
  for (const auto& [b, d] : p.change.expansion) {
    const std::int64_t c = counts[state.expansion_rule(b)];
    s1_after += detail::xlog1p_count(c + d) - detail::xlog1p_count(c);
    total_after += d;
  }
  s1_after += detail::xlog1p_count(p.change.new_expansion);
  const double x_after = s1_after - static_cast<double>(total_after) *
                                        std::log(static_cast<double>(total_after) + k + 1.0);

  double own = 0.0;
  if (m.kind != MoveKind::concat) {
    own = -static_cast<double>(p.change.new_rules[0] + p.change.new_rules[1]) * kLn2;
  }
  p.delta_log_likelihood =
      static_cast<double>(p.change.spine) * std::log1p(-state.epsilon()) + (x_after - x_before) + own;
  return p;
}

// Description-length codes added by a move: its own rules plus X -> A.
inline std::size_t added_codes(MoveKind kind) {
  switch (kind) {
    case MoveKind::concat:
      return 3 + 2;
    case MoveKind::disjoin:
      return 2 + 2 + 2;
    case MoveKind::iterate:
      return 3 + 2 + 2;
  }
  return 0;
}

inline MoveEvaluation evaluate_move(const HypothesisState& state, const Move& m) {
  MoveEvaluation ev;
  ev.prediction = predict_viterbi_delta(state, m);
  const Pcfg& g = state.grammar();
  std::size_t codes = 0;
  for (const Rule& r : g.rules()) codes += static_cast<std::size_t>(r.arity) + 1;
  const double symbols = static_cast<double>(g.num_symbols());
  const double before = static_cast<double>(codes) * std::log2(symbols + 1.0);
  const double after =
      static_cast<double>(codes + added_codes(m.kind)) * std::log2(symbols + 2.0);
  ev.delta_log_prior = -(after - before) * kLn2;
  ev.delta_objective = ev.prediction.delta_log_likelihood + ev.delta_log_prior;
  return ev;
}

inline double objective_delta(const HypothesisState& state, const Move& m) {
  return evaluate_move(state, m).delta_objective;
}

struct InductionConfig {
  double epsilon = kDefaultEpsilon;
  std::size_t max_sentence_length = 40;
  // Re-derive every stored parse exactly after this many sentences; 0 = never.
  std::size_t checkpoint_every = 0;
  TriggerOptions triggers;
  // Terminal set; empty means the training corpus vocabulary.
  std::vector<std::string> vocabulary;
};

struct ProgressRecord {
  std::size_t sentence = 0;
  std::size_t rules = 0;
  std::size_t symbols = 0;
  std::size_t accepted_moves = 0;
  double log_objective = 0.0;
  bool skipped = false;
};

struct CheckpointRecord {
  std::size_t sentence = 0;
  double predicted_log_likelihood = 0.0;
  double exact_log_likelihood = 0.0;
};

struct InductionCallbacks {
  std::function<void(const ProgressRecord&)> on_progress;
  std::function<void(const HypothesisState&, const MoveEvaluation&)> on_move;
  std::function<void(const CheckpointRecord&)> on_checkpoint;
  std::function<void(const std::string&)> on_warning;
};

struct InductionResult {
  HypothesisState state;
  std::size_t skipped_sentences = 0;
  std::vector<CheckpointRecord> checkpoints;

  const Pcfg& grammar() const noexcept { return state.grammar(); }
};

// Runs the search over one sentence's parse until no triggered move improves
// the objective. Returns the number of moves applied.
inline std::size_t search_sentence(HypothesisState& state, const TriggerOptions& triggers,
                                   const InductionCallbacks& callbacks = {}) {
  std::size_t applied = 0;
  const std::size_t guard = 4 * state.parse_store().back().items.size() + 16;
  while (true) {
    const auto moves = enumerate_triggers(
        state, std::span<const ParseTree>(state.parse_store().back().items), triggers);
    std::optional<MoveEvaluation> best;
    for (const Move& m : moves) {
      auto ev = evaluate_move(state, m);
      if (!best || ev.delta_objective > best->delta_objective) best = std::move(ev);
    }
    if (!best || !(best->delta_objective > 0.0)) break;
    state.apply(best->prediction);
    ++applied;
    if (callbacks.on_move) callbacks.on_move(state, *best);
    if (applied > guard) throw std::logic_error("move search failed to terminate");
  }
  return applied;
}

inline InductionResult induce(const Corpus& corpus, const InductionConfig& config,
                              const InductionCallbacks& callbacks = {}) {
  if (corpus.empty()) throw ConfigError("induction needs a non-empty corpus");
  const std::vector<std::string> vocab =
      config.vocabulary.empty() ? vocabulary(corpus) : config.vocabulary;
  InductionResult result{HypothesisState(vocab, config.epsilon), 0, {}};
  HypothesisState& state = result.state;
  const EncodedCorpus encoded = encode_corpus(state.grammar(), corpus);

  for (std::size_t i = 0; i < encoded.size(); ++i) {
    ProgressRecord record;
    record.sentence = i;
    if (encoded[i].empty() || encoded[i].size() > config.max_sentence_length) {
      ++result.skipped_sentences;
      record.skipped = true;
      if (callbacks.on_warning) {
        callbacks.on_warning("skipping sentence " + std::to_string(i) + " of length " +
                             std::to_string(encoded[i].size()));
      }
    } else {
      auto parse = viterbi_parse(state.grammar(), encoded[i]);
      state.add_parse(parse.tree, encoded[i]);
      search_sentence(state, config.triggers, callbacks);
      if (config.checkpoint_every && state.n_processed() % config.checkpoint_every == 0) {
        const auto [before, after] = state.reparse_all();
        CheckpointRecord cp{i, before, after};
        result.checkpoints.push_back(cp);
        if (callbacks.on_checkpoint) callbacks.on_checkpoint(cp);
      }
    }
    record.rules = state.grammar().num_rules();
    record.symbols = state.grammar().num_symbols();
    record.accepted_moves = state.accepted_moves();
    record.log_objective = state.log_objective();
    if (callbacks.on_progress) callbacks.on_progress(record);
  }
  return result;
}

// Exact objective: sum of Viterbi log-probabilities plus the log prior.
inline double viterbi_objective(const Pcfg& g, const EncodedCorpus& corpus) {
  double ll = 0.0;
  for (const auto& s : corpus) ll += viterbi_parse(g, s).log_prob;
  return ll + log_prior(g);
}

}  // namespace pcfgi
