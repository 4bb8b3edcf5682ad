#pragma once

// Bottom-up CYK chart parsing over grammars with binary, unary and lexical
// rules. Spans are half-open token ranges [begin, end).
//
// Unary rules are closed per cell after the binary pass. The Viterbi closure
// relaxes until no entry improves; with every unary cycle having probability
// below one, at most |N| passes are needed. The inside closure sums unary
// paths pass by pass (each pass extends every path by one unary step) and
// stops when a pass adds less than 1e-15 of relative mass, which is exact for
// acyclic unary structure.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pcfgi/error.hpp"
#include "pcfgi/grammar.hpp"
#include "pcfgi/log_math.hpp"

namespace pcfgi {

struct Span {
  std::uint32_t begin = 0;
  std::uint32_t end = 0;

  std::uint32_t width() const noexcept { return end - begin; }
  friend bool operator==(const Span&, const Span&) = default;
};

// A derivation. Nodes built by lexical rules (A -> 'a') are leaves; the
// terminal itself is not a node.
struct ParseTree {
  SymbolId symbol = kNoSymbol;
  RuleId rule = kNoRule;
  Span span;
  std::vector<ParseTree> children;

  friend bool operator==(const ParseTree&, const ParseTree&) = default;
};

struct ViterbiResult {
  ParseTree tree;
  double log_prob = kNegInf;
};

inline std::vector<double> rule_probabilities(const Pcfg& g) {
  std::vector<double> probs(g.num_rules());
  for (RuleId r = 0; r < g.num_rules(); ++r) probs[r] = std::exp(g.rule(r).log_prob);
  return probs;
}

namespace detail {

inline void check_sentence(const Pcfg& g, std::span<const SymbolId> sentence) {
  if (sentence.empty()) throw Error("cannot parse an empty sentence");
  if (g.start() == kNoSymbol) throw Error("grammar has no start symbol");
  for (SymbolId t : sentence) {
    if (t >= g.num_symbols() || !g.symbols().is_terminal(t)) {
      throw UnknownTokenError(t < g.num_symbols() ? g.symbols().name(t)
                                                  : "#" + std::to_string(t));
    }
  }
}

// Dense (L+1) x (L+1) cell layout, one slot per symbol.
class CellLayout {
 public:
  CellLayout() = default;
  CellLayout(std::size_t length, std::size_t num_symbols)
      : length_(length), num_symbols_(num_symbols) {}

  std::size_t cell(std::size_t begin, std::size_t end) const noexcept {
    return begin * (length_ + 1) + end;
  }
  std::size_t slot(std::size_t begin, std::size_t end, SymbolId s) const noexcept {
    return cell(begin, end) * num_symbols_ + s;
  }
  std::size_t num_cells() const noexcept { return (length_ + 1) * (length_ + 1); }
  std::size_t length() const noexcept { return length_; }
  std::size_t num_symbols() const noexcept { return num_symbols_; }

 private:
  std::size_t length_ = 0;
  std::size_t num_symbols_ = 0;
};

// Closure of a cell (log domain, one slot per symbol) under unary
// nonterminal rules. upward: values[lhs] += p * values[child] (inside).
// downward: values[child] += p * values[lhs] (outside). Sums run in linear
// space relative to the cell maximum; acyclic chains finish within
// num_nonterminals passes, cycles are summed until the added mass is
// negligible.
class UnaryClosure {
 public:
  UnaryClosure(const Pcfg& g, std::span<const double> probs, bool upward)
      : offsets_(g.num_symbols() + 1, 0),
        max_passes_(std::max<std::size_t>(g.symbols().num_nonterminals() + 1, 100000)) {
    const auto unary = g.unary_nonterminal_rules();
    auto from_of = [&](RuleId r) { return upward ? g.rule(r).rhs[0] : g.rule(r).lhs; };
    for (RuleId r : unary) {
      if (probs[r] > 0.0) ++offsets_[from_of(r) + 1];
    }
    for (std::size_t s = 0; s < g.num_symbols(); ++s) offsets_[s + 1] += offsets_[s];
    edges_.resize(offsets_.back());
    std::vector<std::size_t> fill(offsets_.begin(), offsets_.end() - 1);
    for (RuleId r : unary) {
      if (!(probs[r] > 0.0)) continue;
      const SymbolId to = upward ? g.rule(r).lhs : g.rule(r).rhs[0];
      edges_[fill[from_of(r)]++] = {to, probs[r]};
    }
    const std::size_t n = g.num_symbols();
    base_.assign(n, 0.0);
    added_.assign(n, 0.0);
    delta_.assign(n, 0.0);
    next_.assign(n, 0.0);
  }

  bool empty() const noexcept { return edges_.empty(); }

  void apply(std::span<double> values) {
    if (edges_.empty()) return;
    double top = kNegInf;
    for (double v : values) top = std::max(top, v);
    if (top == kNegInf) return;
    frontier_.clear();
    for (SymbolId s = 0; s < values.size(); ++s) {
      if (values[s] == kNegInf || offsets_[s] == offsets_[s + 1]) continue;
      delta_[s] = std::exp(values[s] - top);
      frontier_.push_back(s);
    }
    touched_.clear();
    for (std::size_t pass = 0; pass < max_passes_ && !frontier_.empty(); ++pass) {
      reached_.clear();
      for (SymbolId from : frontier_) {
        const double d = delta_[from];
        delta_[from] = 0.0;
        for (std::size_t e = offsets_[from]; e < offsets_[from + 1]; ++e) {
          const auto [to, p] = edges_[e];
          if (next_[to] == 0.0) reached_.push_back(to);
          next_[to] += p * d;
        }
      }
      frontier_.clear();
      double max_gain = 0.0;
      for (SymbolId to : reached_) {
        if (added_[to] == 0.0) {
          touched_.push_back(to);
          base_[to] = values[to] == kNegInf ? 0.0 : std::exp(values[to] - top);
        }
        added_[to] += next_[to];
        max_gain = std::max(max_gain, next_[to] / (base_[to] + added_[to]));
        if (offsets_[to] != offsets_[to + 1]) {
          delta_[to] = next_[to];
          frontier_.push_back(to);
        }
        next_[to] = 0.0;
      }
      if (max_gain < 1e-15) break;
    }
    for (SymbolId s : frontier_) delta_[s] = 0.0;
    for (SymbolId s : touched_) {
      values[s] = std::log(base_[s] + added_[s]) + top;
      added_[s] = 0.0;
    }
  }

 private:
  struct Edge {
    SymbolId to;
    double prob;
  };
  std::vector<std::size_t> offsets_;
  std::vector<Edge> edges_;
  std::size_t max_passes_;
  std::vector<double> base_, added_, delta_, next_;
  std::vector<SymbolId> frontier_, reached_, touched_;
};

// Binary rules in flat arrays, grouped by distinct right-hand side (b, c),
// with the right-hand sides grouped by left child b.
struct BinaryIndex {
  std::vector<std::uint32_t> offsets;       // pairs by left child
  std::vector<SymbolId> right;              // per pair
  std::vector<std::uint32_t> rule_offsets;  // rules by pair
  std::vector<SymbolId> lhs;
  std::vector<double> prob;
  std::vector<RuleId> rule;

  BinaryIndex(const Pcfg& g, std::span<const double> probs) : offsets(g.num_symbols() + 1, 0) {
    rule_offsets.push_back(0);
    std::map<SymbolId, std::vector<RuleId>> by_right;
    for (SymbolId b = 0; b < g.num_symbols(); ++b) {
      by_right.clear();
      for (RuleId r : g.binary_rules_by_left(b)) {
        if (probs[r] > 0.0) by_right[g.rule(r).rhs[1]].push_back(r);
      }
      for (const auto& [c, rules] : by_right) {
        right.push_back(c);
        for (RuleId r : rules) {
          lhs.push_back(g.rule(r).lhs);
          prob.push_back(probs[r]);
          rule.push_back(r);
        }
        rule_offsets.push_back(static_cast<std::uint32_t>(rule.size()));
      }
      offsets[b + 1] = static_cast<std::uint32_t>(right.size());
    }
  }

  std::size_t num_pairs() const { return right.size(); }
};

}  // namespace detail

// Max-product chart with backpointers. Ties between equal-probability
// derivations go to the lowest rule index, then to the smaller left child.
class ViterbiChart {
 public:
  ViterbiChart(const Pcfg& g, std::span<const SymbolId> sentence)
      : grammar_(&g), sentence_(sentence.begin(), sentence.end()) {
    detail::check_sentence(g, sentence);
    const std::size_t L = sentence.size();
    const std::size_t N = g.num_symbols();
    layout_ = detail::CellLayout(L, N);
    score_.assign(layout_.num_cells() * N, kNegInf);
    rule_.assign(layout_.num_cells() * N, kNoRule);
    split_.assign(layout_.num_cells() * N, 0);
    active_.resize(layout_.num_cells());
    fill();
  }

  double score(std::size_t begin, std::size_t end, SymbolId s) const {
    return score_[layout_.slot(begin, end, s)];
  }
  double log_prob() const { return score(0, sentence_.size(), grammar_->start()); }
  bool parsed() const { return log_prob() != kNegInf; }

  ParseTree tree() const {
    if (!parsed()) throw NoParseError();
    std::size_t budget = (sentence_.size() * 2) * (grammar_->num_symbols() + 1) + 8;
    return build(0, sentence_.size(), grammar_->start(), budget);
  }

 private:
  bool offer(std::size_t slot, double cand, RuleId r, std::uint32_t split) {
    const double cur = score_[slot];
    if (cand > cur || (cand == cur && cand != kNegInf &&
                       (r < rule_[slot] || (r == rule_[slot] && split < split_[slot])))) {
      score_[slot] = cand;
      rule_[slot] = r;
      split_[slot] = split;
      return true;
    }
    return false;
  }

  void fill() {
    const Pcfg& g = *grammar_;
    const std::size_t L = sentence_.size();
    for (std::size_t i = 0; i < L; ++i) {
      for (RuleId r : g.rules_with_rhs({sentence_[i]})) {
        const Rule& rule = g.rule(r);
        if (rule.log_prob == kNegInf) continue;
        offer(layout_.slot(i, i + 1, rule.lhs), rule.log_prob, r, 0);
      }
      close(i, i + 1);
    }
    for (std::size_t width = 2; width <= L; ++width) {
      for (std::size_t i = 0; i + width <= L; ++i) {
        const std::size_t j = i + width;
        for (std::size_t k = i + 1; k < j; ++k) {
          const auto& left_active = active_[layout_.cell(i, k)];
          for (SymbolId b : left_active) {
            const double left = score(i, k, b);
            for (RuleId r : g.binary_rules_by_left(b)) {
              const Rule& rule = g.rule(r);
              if (rule.log_prob == kNegInf) continue;
              const double right = score(k, j, rule.rhs[1]);
              if (right == kNegInf) continue;
              offer(layout_.slot(i, j, rule.lhs), rule.log_prob + left + right, r,
                    static_cast<std::uint32_t>(k));
            }
          }
        }
        close(i, j);
      }
    }
  }

  void close(std::size_t i, std::size_t j) {
    const Pcfg& g = *grammar_;
    const auto unary = g.unary_nonterminal_rules();
    const std::size_t max_passes = g.symbols().num_nonterminals() + 1;
    bool changed = !unary.empty();
    for (std::size_t pass = 0; changed && pass < max_passes; ++pass) {
      changed = false;
      for (RuleId r : unary) {
        const Rule& rule = g.rule(r);
        if (rule.log_prob == kNegInf) continue;
        const double child = score(i, j, rule.rhs[0]);
        if (child == kNegInf) continue;
        changed |= offer(layout_.slot(i, j, rule.lhs), rule.log_prob + child, r, 0);
      }
    }
    if (changed) throw std::logic_error("unary closure did not reach a fixpoint");
    auto& act = active_[layout_.cell(i, j)];
    for (SymbolId s = 0; s < layout_.num_symbols(); ++s) {
      if (score(i, j, s) != kNegInf) act.push_back(s);
    }
  }

  ParseTree build(std::size_t i, std::size_t j, SymbolId s, std::size_t& budget) const {
    if (budget-- == 0) throw std::logic_error("cyclic Viterbi backpointers");
    const std::size_t slot = layout_.slot(i, j, s);
    ParseTree node;
    node.symbol = s;
    node.rule = rule_[slot];
    node.span = {static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j)};
    const Rule& rule = grammar_->rule(node.rule);
    if (rule.binary()) {
      const std::size_t k = split_[slot];
      node.children.push_back(build(i, k, rule.rhs[0], budget));
      node.children.push_back(build(k, j, rule.rhs[1], budget));
    } else if (grammar_->symbols().is_nonterminal(rule.rhs[0])) {
      node.children.push_back(build(i, j, rule.rhs[0], budget));
    }
    return node;
  }

  const Pcfg* grammar_;
  std::vector<SymbolId> sentence_;
  detail::CellLayout layout_;
  std::vector<double> score_;
  std::vector<RuleId> rule_;
  std::vector<std::uint32_t> split_;
  std::vector<std::vector<SymbolId>> active_;
};

// Sum-product chart. Each cell keeps log inside values plus a linear copy
// scaled by the cell maximum, which the binary pass multiplies directly;
// per-split results are combined in log space.
class InsideChart {
 public:
  InsideChart(const Pcfg& g, std::span<const SymbolId> sentence,
              std::span<const double> rule_probs)
      : InsideChart(g, sentence, rule_probs, detail::BinaryIndex(g, rule_probs)) {}

  // `binary` must have been built from the same grammar and probabilities.
  InsideChart(const Pcfg& g, std::span<const SymbolId> sentence,
              std::span<const double> rule_probs, const detail::BinaryIndex& binary)
      : grammar_(&g), sentence_(sentence.begin(), sentence.end()) {
    detail::check_sentence(g, sentence);
    if (rule_probs.size() != g.num_rules()) throw Error("rule probability table size mismatch");
    const std::size_t L = sentence.size();
    const std::size_t N = g.num_symbols();
    layout_ = detail::CellLayout(L, N);
    log_.assign(layout_.num_cells() * N, kNegInf);
    lin_.assign(layout_.num_cells() * N, 0.0);
    scale_.assign(layout_.num_cells(), kNegInf);
    active_.resize(layout_.num_cells());
    fill(rule_probs, binary);
  }

  InsideChart(const Pcfg& g, std::span<const SymbolId> sentence)
      : InsideChart(g, sentence, rule_probabilities(g)) {}

  double log_inside(std::size_t begin, std::size_t end, SymbolId s) const {
    return log_[layout_.slot(begin, end, s)];
  }
  const double* linear_cell(std::size_t begin, std::size_t end) const {
    return &lin_[layout_.slot(begin, end, 0)];
  }
  double linear(std::size_t begin, std::size_t end, SymbolId s) const {
    return lin_[layout_.slot(begin, end, s)];
  }
  double scale(std::size_t begin, std::size_t end) const {
    return scale_[layout_.cell(begin, end)];
  }
  const std::vector<SymbolId>& active(std::size_t begin, std::size_t end) const {
    return active_[layout_.cell(begin, end)];
  }
  double log_total() const { return log_inside(0, sentence_.size(), grammar_->start()); }
  std::size_t length() const noexcept { return sentence_.size(); }
  std::span<const SymbolId> sentence() const noexcept { return sentence_; }
  const detail::CellLayout& layout() const noexcept { return layout_; }

 private:
  void fill(std::span<const double> probs, const detail::BinaryIndex& binary) {
    const Pcfg& g = *grammar_;
    const std::size_t L = sentence_.size();
    const std::size_t N = layout_.num_symbols();
    std::vector<double> acc(N, 0.0);
    std::vector<double> pair_sum(binary.num_pairs(), 0.0);
    std::vector<SymbolId> touched;
    std::vector<std::uint32_t> pairs;
    detail::UnaryClosure closure(g, probs, /*upward=*/true);
    for (std::size_t i = 0; i < L; ++i) {
      double* cell = &log_[layout_.slot(i, i + 1, 0)];
      for (RuleId r : g.rules_with_rhs({sentence_[i]})) {
        const Rule& rule = g.rule(r);
        if (rule.log_prob == kNegInf) continue;
        cell[rule.lhs] = log_add(cell[rule.lhs], rule.log_prob);
      }
      finish(i, i + 1, closure);
    }
    for (std::size_t width = 2; width <= L; ++width) {
      for (std::size_t i = 0; i + width <= L; ++i) {
        const std::size_t j = i + width;
        double* cell = &log_[layout_.slot(i, j, 0)];
        double ref = kNegInf;
        for (std::size_t k = i + 1; k < j; ++k) ref = std::max(ref, scale(i, k) + scale(k, j));
        if (ref != kNegInf) {
          for (std::size_t k = i + 1; k < j; ++k) {
            const double offset = scale(i, k) + scale(k, j);
            if (offset == kNegInf) continue;
            const double s = std::exp(offset - ref);
            const double* right = &lin_[layout_.slot(k, j, 0)];
            for (SymbolId b : active(i, k)) {
              const double left = linear(i, k, b) * s;
              if (left == 0.0) continue;
              for (std::uint32_t p = binary.offsets[b]; p < binary.offsets[b + 1]; ++p) {
                const double v = left * right[binary.right[p]];
                if (v == 0.0) continue;
                if (pair_sum[p] == 0.0) pairs.push_back(p);
                pair_sum[p] += v;
              }
            }
          }
          for (std::uint32_t p : pairs) {
            const double m = pair_sum[p];
            for (std::uint32_t e = binary.rule_offsets[p]; e < binary.rule_offsets[p + 1]; ++e) {
              const SymbolId a = binary.lhs[e];
              if (acc[a] == 0.0) touched.push_back(a);
              acc[a] += binary.prob[e] * m;
            }
            pair_sum[p] = 0.0;
          }
          pairs.clear();
          for (SymbolId a : touched) {
            cell[a] = log_add(cell[a], std::log(acc[a]) + ref);
            acc[a] = 0.0;
          }
          touched.clear();
        }
        finish(i, j, closure);
      }
    }
  }

  void finish(std::size_t i, std::size_t j, detail::UnaryClosure& closure) {
    const std::size_t N = layout_.num_symbols();
    std::span<double> cell(&log_[layout_.slot(i, j, 0)], N);
    closure.apply(cell);
    double top = kNegInf;
    auto& act = active_[layout_.cell(i, j)];
    for (SymbolId s = 0; s < N; ++s) {
      if (cell[s] == kNegInf) continue;
      act.push_back(s);
      top = std::max(top, cell[s]);
    }
    scale_[layout_.cell(i, j)] = top;
    if (top == kNegInf) return;
    double* lin = &lin_[layout_.slot(i, j, 0)];
    for (SymbolId s : act) lin[s] = std::exp(cell[s] - top);
  }

  const Pcfg* grammar_;
  std::vector<SymbolId> sentence_;
  detail::CellLayout layout_;
  std::vector<double> log_;
  std::vector<double> lin_;
  std::vector<double> scale_;
  std::vector<std::vector<SymbolId>> active_;
};

inline ViterbiResult viterbi_parse(const Pcfg& g, std::span<const SymbolId> sentence) {
  ViterbiChart chart(g, sentence);
  if (!chart.parsed()) throw NoParseError();
  return {chart.tree(), chart.log_prob()};
}

inline double inside_logprob(const Pcfg& g, std::span<const SymbolId> sentence,
                             std::span<const double> rule_probs) {
  InsideChart chart(g, sentence, rule_probs);
  const double lp = chart.log_total();
  if (lp == kNegInf) throw NoParseError();
  return lp;
}

inline double inside_logprob(const Pcfg& g, std::span<const SymbolId> sentence) {
  return inside_logprob(g, sentence, rule_probabilities(g));
}

inline void add_rule_counts(const ParseTree& t, std::map<RuleId, std::int64_t>& counts) {
  ++counts[t.rule];
  for (const ParseTree& c : t.children) add_rule_counts(c, counts);
}

inline std::map<RuleId, std::int64_t> tree_rule_counts(const ParseTree& t) {
  std::map<RuleId, std::int64_t> counts;
  add_rule_counts(t, counts);
  return counts;
}

inline double tree_log_prob(const Pcfg& g, const ParseTree& t) {
  double lp = g.rule(t.rule).log_prob;
  for (const ParseTree& c : t.children) lp += tree_log_prob(g, c);
  return lp;
}

// Yield of the tree as terminal ids.
inline void tree_yield(const Pcfg& g, const ParseTree& t, std::vector<SymbolId>& out) {
  if (t.children.empty()) {
    out.push_back(g.rule(t.rule).rhs[0]);
    return;
  }
  for (const ParseTree& c : t.children) tree_yield(g, c, out);
}

// (S (X (A_Bob Bob)) ...)
inline void write_bracketed(std::ostream& out, const Pcfg& g, const ParseTree& t) {
  out << '(' << g.symbols().name(t.symbol);
  if (t.children.empty()) {
    out << ' ' << g.symbols().name(g.rule(t.rule).rhs[0]);
  }
  for (const ParseTree& c : t.children) {
    out << ' ';
    write_bracketed(out, g, c);
  }
  out << ')';
}

inline std::string to_bracketed(const Pcfg& g, const ParseTree& t) {
  std::ostringstream out;
  write_bracketed(out, g, t);
  return out.str();
}

}  // namespace pcfgi
