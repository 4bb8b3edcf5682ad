#pragma once

// Text grammar files.
//
//   # comment
//   start: S
//   nonterminals: S NP VP        (optional; fixes symbol order)
//   terminals: 'the' 'dog'       (optional; fixes symbol order)
//   S -> NP VP 1.0
//   DET -> 'the' 0.6
//
// One rule per line, `LHS -> RHS1 [RHS2] <prob>`. Terminals are single-quoted
// with \' and \\ escapes; nonterminals are bare words. Probabilities are
// renormalized per lhs on load, with a warning when a lhs sums to something
// farther than 1e-6 from one.

#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "pcfgi/grammar.hpp"

namespace pcfgi {

namespace detail {

inline std::string quote_terminal(std::string_view name) {
  std::string out = "'";
  for (char c : name) {
    if (c == '\'' || c == '\\') out.push_back('\\');
    out.push_back(c);
  }
  out.push_back('\'');
  return out;
}

inline std::string format_probability(double log_prob) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", log_prob == kNegInf ? 0.0 : std::exp(log_prob));
  return buf;
}

// Splits on whitespace, keeping quoted terminals (which may contain no
// whitespace) as single fields with their quotes.
inline std::vector<std::string> split_fields(std::string_view line) {
  std::vector<std::string> fields;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i == line.size()) break;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    fields.emplace_back(line.substr(i, j - i));
    i = j;
  }
  return fields;
}

struct SymbolRef {
  std::string name;
  SymbolKind kind;
};

inline SymbolRef parse_symbol(std::string_view field, std::size_t line_no) {
  if (field.empty()) throw FormatError("empty symbol", line_no);
  if (field.front() != '\'') {
    return {std::string(field), SymbolKind::nonterminal};
  }
  if (field.size() < 2 || field.back() != '\'') {
    throw FormatError("unterminated terminal " + std::string(field), line_no);
  }
  std::string name;
  for (std::size_t i = 1; i + 1 < field.size(); ++i) {
    char c = field[i];
    if (c == '\\') {
      if (i + 2 >= field.size()) throw FormatError("dangling escape", line_no);
      c = field[++i];
    } else if (c == '\'') {
      throw FormatError("unescaped quote in " + std::string(field), line_no);
    }
    name.push_back(c);
  }
  if (name.empty()) throw FormatError("empty terminal", line_no);
  return {std::move(name), SymbolKind::terminal};
}

inline double parse_probability(const std::string& field, std::size_t line_no) {
  // strtod rather than stod: subnormal values set ERANGE but are still valid.
  char* end = nullptr;
  const double p = std::strtod(field.c_str(), &end);
  if (field.empty() || end != field.c_str() + field.size() || !(p >= 0.0) || !std::isfinite(p)) {
    throw FormatError("bad probability '" + field + "'", line_no);
  }
  return p;
}

}  // namespace detail

inline void write_grammar(std::ostream& out, const Pcfg& g) {
  const SymbolTable& syms = g.symbols();
  if (g.start() == kNoSymbol) throw Error("cannot write a grammar without a start symbol");
  out << "start: " << syms.name(g.start()) << '\n';
  out << "nonterminals:";
  for (SymbolId s = 0; s < syms.size(); ++s) {
    if (syms.is_nonterminal(s)) out << ' ' << syms.name(s);
  }
  out << "\nterminals:";
  for (SymbolId s = 0; s < syms.size(); ++s) {
    if (syms.is_terminal(s)) out << ' ' << detail::quote_terminal(syms.name(s));
  }
  out << '\n';
  for (const Rule& r : g.rules()) {
    out << syms.name(r.lhs) << " ->";
    for (SymbolId c : r.children()) {
      out << ' ' << (syms.is_terminal(c) ? detail::quote_terminal(syms.name(c)) : syms.name(c));
    }
    out << ' ' << detail::format_probability(r.log_prob) << '\n';
  }
}

inline Pcfg read_grammar(std::istream& in, std::vector<std::string>* warnings = nullptr) {
  Pcfg g;
  std::string start_name;
  std::size_t start_line = 0;
  std::vector<std::size_t> first_line_of;  // per symbol, for error reporting
  std::string line;
  std::size_t line_no = 0;
  auto intern = [&](const detail::SymbolRef& ref) {
    const SymbolId id = g.add_symbol(ref.name, ref.kind);
    if (first_line_of.size() <= id) first_line_of.resize(id + 1, line_no);
    return id;
  };
  while (std::getline(in, line)) {
    ++line_no;
    const auto fields = detail::split_fields(line);
    if (fields.empty() || fields.front().front() == '#') continue;
    const std::string& head = fields.front();
    if (head == "start:") {
      if (fields.size() != 2) throw FormatError("expected 'start: <symbol>'", line_no);
      start_name = fields[1];
      start_line = line_no;
      continue;
    }
    if (head == "nonterminals:" || head == "terminals:") {
      const auto kind = head == "terminals:" ? SymbolKind::terminal : SymbolKind::nonterminal;
      for (std::size_t i = 1; i < fields.size(); ++i) {
        auto ref = detail::parse_symbol(fields[i], line_no);
        if (ref.kind != kind) throw FormatError("symbol kind mismatch: " + fields[i], line_no);
        intern(ref);
      }
      continue;
    }
    if (fields.size() < 4 || fields.size() > 5 || fields[1] != "->") {
      throw FormatError("expected 'LHS -> RHS1 [RHS2] prob'", line_no);
    }
    const auto lhs_ref = detail::parse_symbol(fields[0], line_no);
    if (lhs_ref.kind != SymbolKind::nonterminal) {
      throw FormatError("lhs must be a nonterminal", line_no);
    }
    const SymbolId lhs = intern(lhs_ref);
    std::vector<SymbolId> rhs;
    for (std::size_t i = 2; i + 1 < fields.size(); ++i) {
      rhs.push_back(intern(detail::parse_symbol(fields[i], line_no)));
    }
    const double p = detail::parse_probability(fields.back(), line_no);
    try {
      g.add_rule(lhs, rhs, safe_log(p));
    } catch (const FormatError&) {
      throw;
    } catch (const Error& e) {
      throw FormatError(e.what(), line_no);
    }
  }
  if (start_name.empty()) throw FormatError("missing 'start:' line", 0);
  const auto start = g.symbols().find_nonterminal(start_name);
  if (!start) throw FormatError("start symbol " + start_name + " is never defined", start_line);
  g.set_start(*start);

  for (SymbolId s = 0; s < g.num_symbols(); ++s) {
    const auto ids = g.rules_for(s);
    if (ids.empty()) continue;
    double total = 0.0;
    for (RuleId r : ids) total += g.rule(r).prob();
    if (std::abs(total - 1.0) > 1e-6 && warnings) {
      warnings->push_back("rules of " + g.symbols().name(s) + " sum to " + std::to_string(total) +
                          "; renormalized");
    }
    try {
      g.normalize(s);
    } catch (const NormalizationError& e) {
      throw FormatError(e.what(), s < first_line_of.size() ? first_line_of[s] : 0);
    }
  }
  return g;
}

inline Pcfg parse_grammar(std::string_view text, std::vector<std::string>* warnings = nullptr) {
  std::istringstream in{std::string(text)};
  return read_grammar(in, warnings);
}

inline std::string grammar_to_string(const Pcfg& g) {
  std::ostringstream out;
  write_grammar(out, g);
  return out.str();
}

inline Pcfg load_grammar(const std::string& path, std::vector<std::string>* warnings = nullptr) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open grammar file " + path);
  return read_grammar(in, warnings);
}

inline void save_grammar(const std::string& path, const Pcfg& g) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write grammar file " + path);
  write_grammar(out, g);
}

}  // namespace pcfgi
