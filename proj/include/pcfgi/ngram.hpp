#pragma once

// Interpolated n-gram models with count-bucketed interpolation weights.
//
//   p_i(w | W) = lambda_i(c(W)) * c(W w) / c(W) + (1 - lambda_i(c(W))) * p_{i-1}(w | W')
//
// where W' drops the oldest token of W, p_0 is uniform over the vocabulary,
// and lambda is tied within buckets {0}, {1}, {2,3}, {4..7}, ... of c(W).

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "pcfgi/corpus.hpp"
#include "pcfgi/error.hpp"
#include "pcfgi/log_math.hpp"

namespace pcfgi {

using TokenId = std::uint32_t;
using TokenSequence = std::vector<TokenId>;

inline constexpr std::string_view kSentenceEnd = "</s>";
inline constexpr std::string_view kSentenceBegin = "<s>";

// Token ids 0, 1, 2 are <unk>, </s> and <s>; the training words follow in
// sorted order. <s> only pads histories and is never predicted.
class NgramVocabulary {
 public:
  static constexpr TokenId unk = 0;
  static constexpr TokenId end = 1;
  static constexpr TokenId begin = 2;

  NgramVocabulary() {
    for (auto t : {kUnknownToken, kSentenceEnd, kSentenceBegin}) intern(std::string(t));
  }

  explicit NgramVocabulary(std::span<const std::string> words) : NgramVocabulary() {
    std::vector<std::string> sorted(words.begin(), words.end());
    std::sort(sorted.begin(), sorted.end());
    for (const auto& w : sorted) intern(w);
  }

  TokenId id(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? unk : it->second;
  }
  const std::string& token(TokenId id) const { return tokens_.at(id); }
  // Predictable outcomes: every token except <s>.
  std::size_t size() const noexcept { return tokens_.size() - 1; }
  std::size_t num_ids() const noexcept { return tokens_.size(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

 private:
  void intern(const std::string& t) {
    if (ids_.emplace(t, static_cast<TokenId>(tokens_.size())).second) tokens_.push_back(t);
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
};

// <s>^(n-1) w_1 ... w_L </s>
inline TokenSequence pad_sentence(const NgramVocabulary& vocab, std::span<const std::string> s,
                                  std::size_t order) {
  TokenSequence out(order - 1, NgramVocabulary::begin);
  for (const auto& w : s) out.push_back(vocab.id(w));
  out.push_back(NgramVocabulary::end);
  return out;
}

struct TokenSequenceHash {
  std::size_t operator()(const TokenSequence& v) const noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (TokenId t : v) {
      h ^= t;
      h *= 0x100000001b3ULL;
    }
    return static_cast<std::size_t>(h);
  }
};

using NgramMap = std::unordered_map<TokenSequence, std::uint64_t, TokenSequenceHash>;

// Counts of every k-gram, k = 1..n, over padded sentences, plus history
// counts c(W) = sum_w c(W w).
class CountTable {
 public:
  CountTable() = default;
  explicit CountTable(std::size_t order) : order_(order), ngrams_(order), contexts_(order) {
    if (order == 0) throw ConfigError("n-gram order must be at least 1");
  }

  std::size_t order() const noexcept { return order_; }

  void add_sentence(std::span<const TokenId> padded) {
    const std::size_t pad = order_ - 1;
    for (std::size_t pos = pad; pos < padded.size(); ++pos) {
      for (std::size_t k = 1; k <= order_; ++k) {
        add(TokenSequence(padded.begin() + static_cast<std::ptrdiff_t>(pos + 1 - k),
                          padded.begin() + static_cast<std::ptrdiff_t>(pos + 1)),
            1);
      }
    }
  }

  void add(const TokenSequence& ngram, std::uint64_t c) {
    if (ngram.empty() || ngram.size() > order_) throw Error("n-gram length out of range");
    ngrams_[ngram.size() - 1][ngram] += c;
    if (ngram.size() == 1) {
      total_ += c;
    } else {
      contexts_[ngram.size() - 1][TokenSequence(ngram.begin(), ngram.end() - 1)] += c;
    }
  }

  std::uint64_t count(std::span<const TokenId> ngram) const {
    if (ngram.empty() || ngram.size() > order_) return 0;
    const auto& m = ngrams_[ngram.size() - 1];
    auto it = m.find(TokenSequence(ngram.begin(), ngram.end()));
    return it == m.end() ? 0 : it->second;
  }

  // c(W) for a history of length 0..n-1.
  std::uint64_t context_count(std::span<const TokenId> context) const {
    if (context.empty()) return total_;
    if (context.size() >= order_) return 0;
    const auto& m = contexts_[context.size()];
    auto it = m.find(TokenSequence(context.begin(), context.end()));
    return it == m.end() ? 0 : it->second;
  }

  std::uint64_t total() const noexcept { return total_; }

  std::size_t num_entries() const {
    std::size_t n = 0;
    for (const auto& m : ngrams_) n += m.size();
    return n;
  }

  const NgramMap& ngrams(std::size_t length) const { return ngrams_.at(length - 1); }
  // contexts(k) holds histories of length k, k = 1..n-1.
  const NgramMap& contexts(std::size_t length) const { return contexts_.at(length); }

 private:
  std::size_t order_ = 0;
  std::uint64_t total_ = 0;
  std::vector<NgramMap> ngrams_;
  std::vector<NgramMap> contexts_;
};

inline CountTable count_ngrams(const Corpus& corpus, const NgramVocabulary& vocab,
                               std::size_t order) {
  CountTable table(order);
  for (const auto& s : corpus) table.add_sentence(pad_sentence(vocab, s, order));
  return table;
}

// One lambda per (order, bucket of c(W)).
class LambdaBuckets {
 public:
  static constexpr std::size_t kNumBuckets = 65;
  static constexpr double kInitial = 0.5;

  LambdaBuckets() = default;
  explicit LambdaBuckets(std::size_t order)
      : values_(order, std::vector<double>(kNumBuckets, kInitial)),
        seen_(order, std::vector<bool>(kNumBuckets, false)) {}

  static std::size_t bucket(std::uint64_t context_count) noexcept {
    return static_cast<std::size_t>(std::bit_width(context_count));
  }

  std::size_t order() const noexcept { return values_.size(); }
  double get(std::size_t k, std::size_t b) const { return values_.at(k - 1).at(b); }
  void set(std::size_t k, std::size_t b, double v) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
    values_.at(k - 1).at(b) = v;
  }
  bool seen(std::size_t k, std::size_t b) const { return seen_.at(k - 1).at(b); }
  void mark_seen(std::size_t k, std::size_t b) { seen_.at(k - 1).at(b) = true; }

 private:
  std::vector<std::vector<double>> values_;
  std::vector<std::vector<bool>> seen_;
};

struct NgramEntropy {
  double bits_per_token = 0.0;
  double log2_prob = 0.0;
  std::size_t tokens = 0;
};

class InterpolatedNgram {
 public:
  InterpolatedNgram() = default;
  InterpolatedNgram(NgramVocabulary vocab, CountTable counts)
      : vocab_(std::move(vocab)), counts_(std::move(counts)), lambdas_(counts_.order()) {}

  std::size_t order() const noexcept { return counts_.order(); }
  const NgramVocabulary& vocabulary() const noexcept { return vocab_; }
  const CountTable& counts() const noexcept { return counts_; }
  const LambdaBuckets& lambdas() const noexcept { return lambdas_; }
  bool trained() const noexcept { return trained_; }

  void set_lambdas(LambdaBuckets lambdas) {
    if (lambdas.order() != order()) throw ConfigError("lambda table order mismatch");
    lambdas_ = std::move(lambdas);
    trained_ = true;
  }

  // Maximum-likelihood estimate c(W w) / c(W); history is the last k-1 tokens
  // of `ngram`, w its last token.
  double ml(std::span<const TokenId> ngram) const {
    const auto c = counts_.context_count(ngram.first(ngram.size() - 1));
    if (c == 0) return 0.0;
    return static_cast<double>(counts_.count(ngram)) / static_cast<double>(c);
  }

  // p(w | history); only the last n-1 tokens of history are used.
  double prob(TokenId w, std::span<const TokenId> history) const {
    if (!trained_) throw StateError("interpolation weights have not been trained");
    return prob_unchecked(w, history);
  }

  double prob_unchecked(TokenId w, std::span<const TokenId> history) const {
    const std::size_t usable = std::min(history.size(), order() - 1);
    TokenSequence ngram(history.end() - static_cast<std::ptrdiff_t>(usable), history.end());
    ngram.push_back(w);
    double p = 1.0 / static_cast<double>(vocab_.size());
    for (std::size_t k = 1; k <= usable + 1; ++k) {
      const std::span<const TokenId> g(ngram.end() - static_cast<std::ptrdiff_t>(k), ngram.end());
      const auto c = counts_.context_count(g.first(k - 1));
      if (c == 0) continue;  // no evidence at this order
      const double lambda = lambdas_.get(k, LambdaBuckets::bucket(c));
      p = lambda * ml(g) + (1.0 - lambda) * p;
    }
    return p;
  }

  double sentence_log2_prob(std::span<const std::string> s) const {
    const auto padded = pad_sentence(vocab_, s, order());
    double lp = 0.0;
    for (std::size_t pos = order() - 1; pos < padded.size(); ++pos) {
      const std::span<const TokenId> history(padded.data(), pos);
      lp += std::log2(prob(padded[pos], history));
    }
    return lp;
  }

  // Cross-entropy in bits per token; </s> counts as a token.
  NgramEntropy entropy(const Corpus& test) const {
    NgramEntropy e;
    for (const auto& s : test) {
      e.log2_prob += sentence_log2_prob(s);
      e.tokens += s.size() + 1;
    }
    if (e.tokens == 0) throw ConfigError("test corpus is empty");
    e.bits_per_token = -e.log2_prob / static_cast<double>(e.tokens);
    return e;
  }

  // Buckets of order k that a seen history can fall into. Unseen histories
  // (bucket 0) skip their order entirely and carry no weight.
  std::vector<std::size_t> reachable_buckets(std::size_t k) const {
    std::vector<bool> used(LambdaBuckets::kNumBuckets, false);
    if (k == 1) {
      if (counts_.total() > 0) used[LambdaBuckets::bucket(counts_.total())] = true;
    } else {
      for (const auto& [ctx, c] : counts_.contexts(k - 1)) used[LambdaBuckets::bucket(c)] = true;
    }
    std::vector<std::size_t> out;
    for (std::size_t b = 0; b < used.size(); ++b) {
      if (used[b]) out.push_back(b);
    }
    return out;
  }

  // Stored counts plus reachable lambda buckets.
  std::size_t num_parameters() const {
    std::size_t n = counts_.num_entries();
    for (std::size_t k = 1; k <= order(); ++k) n += reachable_buckets(k).size();
    return n;
  }

  void save(std::ostream& out) const;
  static InterpolatedNgram load(std::istream& in);

 private:
  NgramVocabulary vocab_;
  CountTable counts_;
  LambdaBuckets lambdas_;
  bool trained_ = false;
};

inline InterpolatedNgram count_model(const Corpus& train, std::size_t order) {
  if (order == 0) throw ConfigError("n-gram order must be at least 1");
  NgramVocabulary vocab(vocabulary(train));
  CountTable counts = count_ngrams(train, vocab, order);
  return InterpolatedNgram(std::move(vocab), std::move(counts));
}

struct LambdaTraining {
  LambdaBuckets lambdas;
  std::vector<double> trace;  // held-out log-likelihood (nats) per iteration
  std::vector<std::pair<std::size_t, std::size_t>> unseen;  // (order, bucket) with no data
};

// Trained weights stay below one so unseen tokens keep nonzero probability.
inline constexpr double kMaxTrainedLambda = 1.0 - 1e-6;

// EM over held-out text until the relative log-likelihood gain drops below
// rel_tol. Buckets with no held-out events keep their initial value.
inline LambdaTraining train_lambdas(const InterpolatedNgram& model, const Corpus& heldout,
                                    double rel_tol = 1e-6, std::size_t max_iterations = 1000) {
  if (heldout.empty()) throw ConfigError("held-out corpus is empty");
  const std::size_t n = model.order();
  struct Event {
    std::vector<double> ml;
    std::vector<std::uint8_t> bucket;
  };
  std::vector<Event> events;
  LambdaTraining result{LambdaBuckets(n), {}, {}};
  for (const auto& s : heldout) {
    const auto padded = pad_sentence(model.vocabulary(), s, n);
    for (std::size_t pos = n - 1; pos < padded.size(); ++pos) {
      Event e;
      for (std::size_t k = 1; k <= n; ++k) {
        const std::span<const TokenId> g(padded.data() + pos + 1 - k, k);
        e.ml.push_back(model.ml(g));
        const auto b = LambdaBuckets::bucket(model.counts().context_count(g.first(k - 1)));
        e.bucket.push_back(static_cast<std::uint8_t>(b));
        if (b != 0) result.lambdas.mark_seen(k, b);
      }
      events.push_back(std::move(e));
    }
  }

  const double uniform = 1.0 / static_cast<double>(model.vocabulary().size());
  constexpr std::size_t B = LambdaBuckets::kNumBuckets;
  std::vector<double> num(n * B), den(n * B), p(n + 1);
  auto lambda_of = [&](std::size_t k, std::size_t b) { return result.lambdas.get(k, b); };
  for (std::size_t it = 0; it < max_iterations; ++it) {
    std::fill(num.begin(), num.end(), 0.0);
    std::fill(den.begin(), den.end(), 0.0);
    double ll = 0.0;
    for (const Event& e : events) {
      p[0] = uniform;
      for (std::size_t k = 1; k <= n; ++k) {
        const std::size_t b = e.bucket[k - 1];
        p[k] = b == 0 ? p[k - 1] : lambda_of(k, b) * e.ml[k - 1] + (1.0 - lambda_of(k, b)) * p[k - 1];
      }
      ll += std::log(p[n]);
      // q: posterior probability that the draw reaches level k.
      double q = 1.0;
      for (std::size_t k = n; k >= 1 && q > 0.0; --k) {
        if (e.bucket[k - 1] == 0) continue;
        const double lambda = lambda_of(k, e.bucket[k - 1]);
        const std::size_t slot = (k - 1) * B + e.bucket[k - 1];
        if (p[k] > 0.0) num[slot] += q * lambda * e.ml[k - 1] / p[k];
        den[slot] += q;
        q = p[k] > 0.0 ? q * (1.0 - lambda) * p[k - 1] / p[k] : 0.0;
      }
    }
    if (!result.trace.empty()) {
      const double previous = result.trace.back();
      result.trace.push_back(ll);
      if ((ll - previous) / std::abs(previous) < rel_tol) break;
    } else {
      result.trace.push_back(ll);
    }
    for (std::size_t k = 1; k <= n; ++k) {
      for (std::size_t b = 0; b < B; ++b) {
        const std::size_t slot = (k - 1) * B + b;
        if (den[slot] > 0.0) {
          result.lambdas.set(k, b, std::clamp(num[slot] / den[slot], 0.0, kMaxTrainedLambda));
        }
      }
    }
  }
  for (std::size_t k = 1; k <= n; ++k) {
    for (std::size_t b : model.reachable_buckets(k)) {
      if (!result.lambdas.seen(k, b)) result.unseen.emplace_back(k, b);
    }
  }
  return result;
}

inline InterpolatedNgram train_ngram(const Corpus& train, const Corpus& heldout, std::size_t order) {
  auto model = count_model(train, order);
  model.set_lambdas(train_lambdas(model, heldout).lambdas);
  return model;
}

// Text format:
//   pcfgi-ngram 1
//   order <n>
//   vocab <count>        followed by one token per line (ids 0..count-1)
//   lambdas              followed by n lines of kNumBuckets values
//   counts <k> <entries> followed by "<id> ... <id> <count>" lines, k = 1..n
inline void InterpolatedNgram::save(std::ostream& out) const {
  char buf[40];
  out << "pcfgi-ngram 1\norder " << order() << "\nvocab " << vocab_.num_ids() << '\n';
  for (const auto& t : vocab_.tokens()) out << t << '\n';
  out << "lambdas " << (trained_ ? "trained" : "initial") << '\n';
  for (std::size_t k = 1; k <= order(); ++k) {
    for (std::size_t b = 0; b < LambdaBuckets::kNumBuckets; ++b) {
      std::snprintf(buf, sizeof buf, "%.17g", lambdas_.get(k, b));
      out << (b ? " " : "") << buf;
    }
    out << '\n';
  }
  for (std::size_t k = 1; k <= order(); ++k) {
    std::vector<std::pair<TokenSequence, std::uint64_t>> entries(counts_.ngrams(k).begin(),
                                                                 counts_.ngrams(k).end());
    std::sort(entries.begin(), entries.end());
    out << "counts " << k << ' ' << entries.size() << '\n';
    for (const auto& [g, c] : entries) {
      for (TokenId t : g) out << t << ' ';
      out << c << '\n';
    }
  }
}

inline InterpolatedNgram InterpolatedNgram::load(std::istream& in) {
  std::size_t line_no = 0;
  std::string line;
  auto next_line = [&]() -> std::istringstream {
    if (!std::getline(in, line)) throw FormatError("unexpected end of n-gram model", line_no + 1);
    ++line_no;
    return std::istringstream(line);
  };
  auto expect = [&](std::istringstream& s, const std::string& word) {
    std::string w;
    if (!(s >> w) || w != word) throw FormatError("expected '" + word + "'", line_no);
  };
  auto fields = next_line();
  expect(fields, "pcfgi-ngram");
  fields = next_line();
  expect(fields, "order");
  std::size_t order = 0;
  if (!(fields >> order) || order == 0) throw FormatError("bad order", line_no);
  fields = next_line();
  expect(fields, "vocab");
  std::size_t num_tokens = 0;
  if (!(fields >> num_tokens) || num_tokens < 3) throw FormatError("bad vocabulary size", line_no);
  std::vector<std::string> words;
  for (std::size_t i = 0; i < num_tokens; ++i) {
    next_line();
    if (i < 3) {
      if (line != NgramVocabulary().token(static_cast<TokenId>(i))) {
        throw FormatError("reserved token mismatch", line_no);
      }
    } else {
      words.push_back(line);
    }
  }
  NgramVocabulary vocab(words);
  if (vocab.num_ids() != num_tokens) throw FormatError("duplicate vocabulary entries", line_no);
  fields = next_line();
  expect(fields, "lambdas");
  std::string state;
  fields >> state;
  LambdaBuckets lambdas(order);
  for (std::size_t k = 1; k <= order; ++k) {
    fields = next_line();
    for (std::size_t b = 0; b < LambdaBuckets::kNumBuckets; ++b) {
      double v = 0.0;
      if (!(fields >> v) || !(v >= 0.0 && v <= 1.0)) throw FormatError("bad lambda", line_no);
      lambdas.set(k, b, v);
    }
  }
  CountTable counts(order);
  for (std::size_t k = 1; k <= order; ++k) {
    fields = next_line();
    expect(fields, "counts");
    std::size_t kk = 0, entries = 0;
    if (!(fields >> kk >> entries) || kk != k) throw FormatError("bad counts header", line_no);
    for (std::size_t e = 0; e < entries; ++e) {
      fields = next_line();
      TokenSequence g(k);
      std::uint64_t c = 0;
      for (auto& t : g) {
        if (!(fields >> t) || t >= num_tokens) throw FormatError("bad token id", line_no);
      }
      if (!(fields >> c)) throw FormatError("bad count", line_no);
      counts.add(g, c);
    }
  }
  InterpolatedNgram model(std::move(vocab), std::move(counts));
  if (state == "trained") model.set_lambdas(std::move(lambdas));
  return model;
}

inline void save_ngram(const std::string& path, const InterpolatedNgram& model) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write n-gram model " + path);
  model.save(out);
}

inline InterpolatedNgram load_ngram(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open n-gram model " + path);
  return InterpolatedNgram::load(in);
}

}  // namespace pcfgi
