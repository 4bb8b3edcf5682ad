#pragma once

// Corpus files hold one sentence per line, tokens separated by whitespace.

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "pcfgi/error.hpp"
#include "pcfgi/grammar.hpp"

namespace pcfgi {

using Sentence = std::vector<std::string>;
using Corpus = std::vector<Sentence>;
using EncodedSentence = std::vector<SymbolId>;
using EncodedCorpus = std::vector<EncodedSentence>;

inline constexpr std::string_view kUnknownToken = "<unk>";

inline Corpus read_corpus(std::istream& in) {
  Corpus corpus;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream fields(line);
    Sentence s;
    for (std::string tok; fields >> tok;) s.push_back(std::move(tok));
    if (!s.empty()) corpus.push_back(std::move(s));
  }
  return corpus;
}

inline Corpus load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open corpus file " + path);
  return read_corpus(in);
}

inline void write_corpus(std::ostream& out, const Corpus& corpus) {
  for (const Sentence& s : corpus) {
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i) out << ' ';
      out << s[i];
    }
    out << '\n';
  }
}

inline void save_corpus(const std::string& path, const Corpus& corpus) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write corpus file " + path);
  write_corpus(out, corpus);
}

// Sorted distinct tokens.
inline std::vector<std::string> vocabulary(const Corpus& corpus) {
  std::set<std::string> words;
  for (const Sentence& s : corpus) words.insert(s.begin(), s.end());
  return {words.begin(), words.end()};
}

inline std::size_t token_count(const Corpus& corpus) {
  std::size_t n = 0;
  for (const Sentence& s : corpus) n += s.size();
  return n;
}

// Replaces tokens outside `vocab` (sorted) with <unk>.
inline Corpus map_unknown(const Corpus& corpus, std::span<const std::string> vocab) {
  Corpus out = corpus;
  for (Sentence& s : out) {
    for (std::string& tok : s) {
      if (!std::binary_search(vocab.begin(), vocab.end(), tok)) tok = kUnknownToken;
    }
  }
  return out;
}

inline EncodedSentence encode_sentence(const Pcfg& g, std::span<const std::string> sentence) {
  EncodedSentence out;
  out.reserve(sentence.size());
  for (const std::string& tok : sentence) {
    const auto id = g.symbols().find_terminal(tok);
    if (!id) throw UnknownTokenError(tok);
    out.push_back(*id);
  }
  return out;
}

inline EncodedCorpus encode_corpus(const Pcfg& g, const Corpus& corpus) {
  EncodedCorpus out;
  out.reserve(corpus.size());
  for (const Sentence& s : corpus) out.push_back(encode_sentence(g, s));
  return out;
}

}  // namespace pcfgi
