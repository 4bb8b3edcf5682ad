#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "pcfgi/error.hpp"
#include "pcfgi/log_math.hpp"

namespace pcfgi {

using SymbolId = std::uint32_t;
using RuleId = std::uint32_t;

inline constexpr SymbolId kNoSymbol = std::numeric_limits<SymbolId>::max();
inline constexpr RuleId kNoRule = std::numeric_limits<RuleId>::max();

enum class SymbolKind : std::uint8_t { terminal, nonterminal };

// Dense symbol ids. Terminals and nonterminals live in separate namespaces,
// so a terminal 'X' and a nonterminal X may coexist.
class SymbolTable {
 public:
  SymbolId add(std::string_view name, SymbolKind kind) {
    if (auto id = find(name, kind)) return *id;
    const auto id = static_cast<SymbolId>(names_.size());
    names_.emplace_back(name);
    kinds_.push_back(kind);
    index_.emplace(key(name, kind), id);
    if (kind == SymbolKind::terminal) ++terminals_;
    return id;
  }

  std::optional<SymbolId> find(std::string_view name, SymbolKind kind) const {
    auto it = index_.find(key(name, kind));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::optional<SymbolId> find_terminal(std::string_view name) const {
    return find(name, SymbolKind::terminal);
  }
  std::optional<SymbolId> find_nonterminal(std::string_view name) const {
    return find(name, SymbolKind::nonterminal);
  }

  const std::string& name(SymbolId id) const { return names_.at(id); }
  SymbolKind kind(SymbolId id) const { return kinds_.at(id); }
  bool is_terminal(SymbolId id) const { return kinds_.at(id) == SymbolKind::terminal; }
  bool is_nonterminal(SymbolId id) const { return !is_terminal(id); }

  std::size_t size() const noexcept { return names_.size(); }
  std::size_t num_terminals() const noexcept { return terminals_; }
  std::size_t num_nonterminals() const noexcept { return names_.size() - terminals_; }

 private:
  static std::string key(std::string_view name, SymbolKind kind) {
    std::string k;
    k.reserve(name.size() + 1);
    k.push_back(kind == SymbolKind::terminal ? 't' : 'n');
    k.append(name);
    return k;
  }

  std::vector<std::string> names_;
  std::vector<SymbolKind> kinds_;
  std::unordered_map<std::string, SymbolId> index_;
  std::size_t terminals_ = 0;
};

struct Rule {
  SymbolId lhs = kNoSymbol;
  std::array<SymbolId, 2> rhs{kNoSymbol, kNoSymbol};
  std::uint8_t arity = 0;
  double log_prob = 0.0;

  std::span<const SymbolId> children() const noexcept { return {rhs.data(), arity}; }
  bool binary() const noexcept { return arity == 2; }
  double prob() const noexcept { return std::exp(log_prob); }
};

// Probabilistic context-free grammar with rules of the forms A -> B C
// (nonterminals only), A -> B and A -> 'a'. Log-probabilities are natural
// logs; a rule may carry -inf (probability zero) and still be part of the
// expansion space. Rules are never removed, so rule ids are stable.
class Pcfg {
 public:
  const SymbolTable& symbols() const noexcept { return symbols_; }
  std::size_t num_symbols() const noexcept { return symbols_.size(); }

  SymbolId add_terminal(std::string_view name) { return add_symbol(name, SymbolKind::terminal); }
  SymbolId add_nonterminal(std::string_view name) {
    return add_symbol(name, SymbolKind::nonterminal);
  }
  SymbolId add_symbol(std::string_view name, SymbolKind kind) {
    const SymbolId id = symbols_.add(name, kind);
    if (by_lhs_.size() < symbols_.size()) {
      by_lhs_.resize(symbols_.size());
      binary_by_left_.resize(symbols_.size());
    }
    return id;
  }

  // `log_weight` need not be normalized; call normalize() afterwards.
  RuleId add_rule(SymbolId lhs, std::span<const SymbolId> rhs, double log_weight) {
    check_symbol(lhs);
    if (symbols_.is_terminal(lhs)) throw Error("rule lhs must be a nonterminal");
    if (rhs.empty() || rhs.size() > 2) throw Error("rule rhs must have 1 or 2 symbols");
    for (SymbolId s : rhs) check_symbol(s);
    if (rhs.size() == 2 && (symbols_.is_terminal(rhs[0]) || symbols_.is_terminal(rhs[1])))
      throw Error("binary rules may only rewrite to nonterminals");
    if (find_rule(lhs, rhs)) {
      throw Error("duplicate rule for " + symbols_.name(lhs));
    }
    Rule r;
    r.lhs = lhs;
    r.arity = static_cast<std::uint8_t>(rhs.size());
    for (std::size_t i = 0; i < rhs.size(); ++i) r.rhs[i] = rhs[i];
    r.log_prob = log_weight;
    const auto id = static_cast<RuleId>(rules_.size());
    rules_.push_back(r);
    by_lhs_[lhs].push_back(id);
    by_rhs_[rhs_key(rhs)].push_back(id);
    if (r.binary()) {
      binary_by_left_[r.rhs[0]].push_back(id);
    } else if (symbols_.is_nonterminal(r.rhs[0])) {
      unary_nonterminal_.push_back(id);
    }
    return id;
  }
  RuleId add_rule(SymbolId lhs, std::initializer_list<SymbolId> rhs, double log_weight) {
    return add_rule(lhs, std::span<const SymbolId>(rhs.begin(), rhs.size()), log_weight);
  }

  void set_log_prob(RuleId r, double log_prob) { rules_.at(r).log_prob = log_prob; }

  void set_start(SymbolId s) {
    check_symbol(s);
    if (symbols_.is_terminal(s)) throw Error("start symbol must be a nonterminal");
    start_ = s;
  }
  SymbolId start() const noexcept { return start_; }

  const std::vector<Rule>& rules() const noexcept { return rules_; }
  const Rule& rule(RuleId r) const { return rules_.at(r); }
  std::size_t num_rules() const noexcept { return rules_.size(); }

  std::span<const RuleId> rules_for(SymbolId lhs) const {
    if (lhs >= by_lhs_.size()) return {};
    return by_lhs_[lhs];
  }

  std::span<const RuleId> rules_with_rhs(std::span<const SymbolId> rhs) const {
    if (rhs.empty() || rhs.size() > 2) return {};
    auto it = by_rhs_.find(rhs_key(rhs));
    if (it == by_rhs_.end()) return {};
    return it->second;
  }
  std::span<const RuleId> rules_with_rhs(std::initializer_list<SymbolId> rhs) const {
    return rules_with_rhs(std::span<const SymbolId>(rhs.begin(), rhs.size()));
  }

  std::optional<RuleId> find_rule(SymbolId lhs, std::span<const SymbolId> rhs) const {
    for (RuleId r : rules_with_rhs(rhs)) {
      if (rules_[r].lhs == lhs) return r;
    }
    return std::nullopt;
  }
  std::optional<RuleId> find_rule(SymbolId lhs, std::initializer_list<SymbolId> rhs) const {
    return find_rule(lhs, std::span<const SymbolId>(rhs.begin(), rhs.size()));
  }

  // Parser indexes.
  std::span<const RuleId> binary_rules_by_left(SymbolId left) const {
    if (left >= binary_by_left_.size()) return {};
    return binary_by_left_[left];
  }
  std::span<const RuleId> unary_nonterminal_rules() const noexcept { return unary_nonterminal_; }

  // Rescales the rules of `lhs` so their probabilities sum to one.
  void normalize(SymbolId lhs) {
    const auto ids = rules_for(lhs);
    if (ids.empty()) throw NormalizationError("no rules for " + symbols_.name(lhs));
    double total = kNegInf;
    for (RuleId r : ids) total = log_add(total, rules_[r].log_prob);
    if (total == kNegInf || !std::isfinite(total)) {
      throw NormalizationError("all rule weights are zero for " + symbols_.name(lhs));
    }
    for (RuleId r : ids) rules_[r].log_prob -= total;
  }

  void normalize_all() {
    for (SymbolId s = 0; s < symbols_.size(); ++s) {
      if (!rules_for(s).empty()) normalize(s);
    }
  }

  // Throws Error when a structural invariant or per-lhs normalization fails.
  void validate(double tol = 1e-9) const {
    if (start_ == kNoSymbol) throw Error("grammar has no start symbol");
    for (SymbolId s = 0; s < symbols_.size(); ++s) {
      const auto ids = rules_for(s);
      if (ids.empty()) continue;
      double total = 0.0;
      for (RuleId r : ids) {
        if (rules_[r].log_prob > 0.0) throw Error("rule log-probability above zero");
        total += rules_[r].prob();
      }
      if (std::abs(total - 1.0) > tol) {
        throw NormalizationError("rules of " + symbols_.name(s) + " sum to " + std::to_string(total));
      }
    }
  }

 private:
  static std::uint64_t rhs_key(std::span<const SymbolId> rhs) noexcept {
    const std::uint64_t second = rhs.size() == 2 ? rhs[1] : 0xffffffffULL;
    return (static_cast<std::uint64_t>(rhs[0]) << 32) | second;
  }

  void check_symbol(SymbolId s) const {
    if (s >= symbols_.size()) throw Error("symbol id out of range");
  }

  SymbolTable symbols_;
  std::vector<Rule> rules_;
  SymbolId start_ = kNoSymbol;
  std::vector<std::vector<RuleId>> by_lhs_;
  std::unordered_map<std::uint64_t, std::vector<RuleId>> by_rhs_;
  std::vector<std::vector<RuleId>> binary_by_left_;
  std::vector<RuleId> unary_nonterminal_;
};

inline Pcfg normalize(Pcfg g, SymbolId lhs) {
  g.normalize(lhs);
  return g;
}

// Bits needed to write the grammar down: every rule is its lhs followed by its
// rhs symbols, each drawn from a code over all symbols plus one separator code.
// Rule probabilities are not charged.
inline double description_length(const Pcfg& g) {
  std::size_t codes = 0;
  for (const Rule& r : g.rules()) codes += static_cast<std::size_t>(r.arity) + 1;
  if (codes == 0) return 0.0;
  return static_cast<double>(codes) * std::log2(static_cast<double>(g.num_symbols()) + 1.0);
}

// Natural log of the (unnormalized) prior 2^-l(G).
inline double log_prior(const Pcfg& g) { return -description_length(g) * kLn2; }

}  // namespace pcfgi
