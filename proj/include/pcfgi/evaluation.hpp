#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "pcfgi/corpus.hpp"
#include "pcfgi/grammar.hpp"
#include "pcfgi/log_math.hpp"
#include "pcfgi/parser.hpp"

namespace pcfgi {

struct PcfgEntropy {
  double bits_per_token = 0.0;
  double log2_prob = 0.0;
  std::size_t tokens = 0;     // words plus one end marker per sentence
  std::size_t unparsed = 0;   // sentences with probability zero
};

// Tokens unknown to the grammar become <unk> when the grammar has that
// terminal. A sentence's probability is charged to its length + 1 tokens so
// the figure is comparable with n-gram models that score </s>.
inline PcfgEntropy pcfg_entropy(const Pcfg& g, const Corpus& test) {
  PcfgEntropy e;
  const auto unk = g.symbols().find_terminal(kUnknownToken);
  const auto probs = rule_probabilities(g);
  EncodedSentence encoded;
  for (const auto& s : test) {
    e.tokens += s.size() + 1;
    encoded.clear();
    for (const auto& w : s) {
      auto id = g.symbols().find_terminal(w);
      if (!id) {
        if (!unk) throw UnknownTokenError(w);
        id = unk;
      }
      encoded.push_back(*id);
    }
    const double lp = encoded.empty() ? kNegInf : InsideChart(g, encoded, probs).log_total();
    if (lp == kNegInf) {
      ++e.unparsed;
      e.log2_prob = kNegInf;
    } else if (e.log2_prob != kNegInf) {
      e.log2_prob += lp / kLn2;
    }
  }
  if (e.tokens == 0) throw ConfigError("test corpus is empty");
  e.bits_per_token = e.log2_prob == kNegInf ? std::numeric_limits<double>::infinity()
                                            : -e.log2_prob / static_cast<double>(e.tokens);
  return e;
}

// Rules minus one per left-hand side.
inline std::size_t free_parameters(const Pcfg& g) {
  std::size_t n = 0;
  for (SymbolId s = 0; s < g.num_symbols(); ++s) {
    const auto k = g.rules_for(s).size();
    if (k) n += k - 1;
  }
  return n;
}

}  // namespace pcfgi
