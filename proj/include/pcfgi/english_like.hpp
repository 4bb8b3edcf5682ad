#pragma once

// The bundled English-like reference grammar (also shipped as
// data/english_like.pcfg).

#include <string_view>

#include "pcfgi/grammar_io.hpp"

namespace pcfgi {

inline constexpr std::string_view kEnglishLikeGrammar = R"pcfg(# Small English-like grammar: 11 nonterminals, 21 terminals, 30 rules.
start: S
S -> NP VP 1
NP -> DET NOM 0.55
NP -> NP PP 0.15
NP -> 'john' 0.15
NP -> 'mary' 0.15
NOM -> ADJ NOM 0.25
NOM -> N 0.75
VP -> V NP 0.5
VP -> VP PP 0.15
VP -> IV 0.35
PP -> P NP 1
DET -> 'the' 0.6
DET -> 'a' 0.4
N -> 'dog' 0.25
N -> 'cat' 0.2
N -> 'man' 0.2
N -> 'woman' 0.15
N -> 'park' 0.1
N -> 'telescope' 0.1
ADJ -> 'big' 0.4
ADJ -> 'small' 0.35
ADJ -> 'old' 0.25
V -> 'saw' 0.4
V -> 'chased' 0.3
V -> 'liked' 0.3
IV -> 'slept' 0.5
IV -> 'ran' 0.5
P -> 'with' 0.4
P -> 'in' 0.35
P -> 'on' 0.25
)pcfg";

inline Pcfg english_like_grammar() { return parse_grammar(kEnglishLikeGrammar); }

}  // namespace pcfgi
