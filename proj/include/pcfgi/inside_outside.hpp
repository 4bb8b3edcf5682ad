#pragma once

// Inside-Outside (EM) training for PCFGs, the Lari-Young all-rules grammar,
// the post-pass grammar built on top of an induced grammar, and the
// uniform-mixture smoothing used when evaluating either.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "pcfgi/corpus.hpp"
#include "pcfgi/error.hpp"
#include "pcfgi/grammar.hpp"
#include "pcfgi/induction.hpp"
#include "pcfgi/log_math.hpp"
#include "pcfgi/parser.hpp"
#include "pcfgi/rng.hpp"

namespace pcfgi {

struct EmConfig {
  std::size_t max_iterations = 100;
  double rel_tol = 1e-4;
  std::uint64_t seed = 1;
  double lambda = 0.0;
  std::size_t threads = 1;

  void validate() const {
    if (!(rel_tol > 0.0)) throw ConfigError("rel_tol must be positive");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
  }
};

inline std::string expansion_name(std::size_t i) { return "X_" + std::to_string(i); }

// All rules X_i -> X_j X_k and X_i -> a, randomly initialized; start X_1.
inline Pcfg lari_young_grammar(std::size_t n, std::span<const std::string> terminals,
                               std::uint64_t seed) {
  if (n == 0) throw ConfigError("need at least one nonterminal");
  if (terminals.empty()) throw ConfigError("need at least one terminal");
  std::vector<std::string> words(terminals.begin(), terminals.end());
  std::sort(words.begin(), words.end());
  words.erase(std::unique(words.begin(), words.end()), words.end());

  Pcfg g;
  std::vector<SymbolId> x(n), t;
  for (std::size_t i = 0; i < n; ++i) x[i] = g.add_nonterminal(expansion_name(i + 1));
  for (const auto& w : words) t.push_back(g.add_terminal(w));
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t k = 0; k < n; ++k) {
        g.add_rule(x[i], {x[j], x[k]}, std::log(rng.uniform_positive()));
      }
    }
    for (SymbolId a : t) g.add_rule(x[i], {a}, std::log(rng.uniform_positive()));
    g.normalize(x[i]);
  }
  g.set_start(x[0]);
  return g;
}

// Replaces the S and X rules of an induced grammar by X_i -> X_j X_k and
// X_i -> A for every other induced nonterminal A, randomly initialized.
// Remaining rules keep their probabilities. X_1 becomes the start symbol.
inline Pcfg postpass_grammar(std::size_t n, const Pcfg& old, std::uint64_t seed) {
  if (n == 0) throw ConfigError("need at least one nonterminal");
  const SymbolId old_s = old.start();
  const SymbolId old_x = expansion_symbol_of(old);
  const auto& syms = old.symbols();
  std::vector<SymbolId> retained;
  for (SymbolId s = 0; s < syms.size(); ++s) {
    if (syms.is_nonterminal(s) && s != old_s && s != old_x) retained.push_back(s);
  }
  if (retained.empty()) throw ConfigError("induced grammar has no symbols besides S and X");
  for (std::size_t i = 1; i <= n; ++i) {
    if (syms.find_nonterminal(expansion_name(i))) {
      throw ConfigError("induced grammar already uses the name " + expansion_name(i));
    }
  }

  Pcfg g;
  std::vector<SymbolId> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = g.add_nonterminal(expansion_name(i + 1));
  std::vector<SymbolId> remap(syms.size(), kNoSymbol);
  for (SymbolId s = 0; s < syms.size(); ++s) {
    if (s == old_s || s == old_x) continue;
    remap[s] = g.add_symbol(syms.name(s), syms.kind(s));
  }
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t k = 0; k < n; ++k) {
        g.add_rule(x[i], {x[j], x[k]}, std::log(rng.uniform_positive()));
      }
    }
    for (SymbolId a : retained) g.add_rule(x[i], {remap[a]}, std::log(rng.uniform_positive()));
    g.normalize(x[i]);
  }
  for (const Rule& r : old.rules()) {
    if (r.lhs == old_s || r.lhs == old_x) continue;
    std::vector<SymbolId> rhs;
    for (SymbolId c : r.children()) rhs.push_back(remap.at(c));
    g.add_rule(remap[r.lhs], rhs, r.log_prob);
  }
  g.set_start(x[0]);
  return g;
}

// Adds one sentence's expected rule counts into `counts`; returns log p(s).
inline double accumulate_expected_counts(const Pcfg& g, std::span<const double> probs,
                                         const detail::BinaryIndex& binary,
                                         std::span<const SymbolId> sentence,
                                         std::span<double> counts) {
  InsideChart in(g, sentence, probs, binary);
  const double log_z = in.log_total();
  if (log_z == kNegInf) throw NoParseError();
  const std::size_t L = sentence.size();
  const std::size_t N = g.num_symbols();
  const auto& layout = in.layout();
  std::vector<double> out(layout.num_cells() * N, kNegInf);
  out[layout.slot(0, L, g.start())] = 0.0;

  std::vector<double> lin_out(N, 0.0), acc_right(N, 0.0);
  std::vector<double> pair_sum(binary.num_pairs(), 0.0), pair_out(binary.num_pairs(), 0.0);
  std::vector<SymbolId> touched_right;
  std::vector<std::uint32_t> pairs;
  detail::UnaryClosure closure(g, probs, /*upward=*/false);
  std::vector<std::uint32_t> unary_offsets(N + 1, 0);
  std::vector<RuleId> unary_by_child;
  for (RuleId r : g.unary_nonterminal_rules()) ++unary_offsets[g.rule(r).rhs[0] + 1];
  for (std::size_t s = 0; s < N; ++s) unary_offsets[s + 1] += unary_offsets[s];
  unary_by_child.resize(unary_offsets.back());
  {
    std::vector<std::uint32_t> fill(unary_offsets.begin(), unary_offsets.end() - 1);
    for (RuleId r : g.unary_nonterminal_rules()) unary_by_child[fill[g.rule(r).rhs[0]]++] = r;
  }

  for (std::size_t width = L; width >= 1; --width) {
    for (std::size_t i = 0; i + width <= L; ++i) {
      const std::size_t j = i + width;
      std::span<double> cell(&out[layout.slot(i, j, 0)], N);
      if (in.active(i, j).empty()) continue;
      closure.apply(cell);

      double top = kNegInf;
      for (SymbolId s = 0; s < N; ++s) top = std::max(top, cell[s]);
      if (top == kNegInf) continue;
      for (SymbolId s = 0; s < N; ++s) lin_out[s] = cell[s] == kNegInf ? 0.0 : std::exp(cell[s] - top);

      const double unary_factor = std::exp(top + in.scale(i, j) - log_z);
      for (SymbolId c : in.active(i, j)) {
        const double rc = in.linear(i, j, c);
        if (rc == 0.0) continue;
        for (std::uint32_t e = unary_offsets[c]; e < unary_offsets[c + 1]; ++e) {
          const RuleId r = unary_by_child[e];
          const double a = lin_out[g.rule(r).lhs];
          if (a != 0.0) counts[r] += a * probs[r] * rc * unary_factor;
        }
      }
      if (width == 1) {
        const double lexical_factor = std::exp(top - log_z);
        for (RuleId r : g.rules_with_rhs({sentence[i]})) {
          counts[r] += lin_out[g.rule(r).lhs] * probs[r] * lexical_factor;
        }
        continue;
      }

      for (std::uint32_t p = 0; p < binary.num_pairs(); ++p) {
        double q = 0.0;
        for (std::uint32_t e = binary.rule_offsets[p]; e < binary.rule_offsets[p + 1]; ++e) {
          q += binary.prob[e] * lin_out[binary.lhs[e]];
        }
        pair_out[p] = q;
      }
      double ref = kNegInf;
      for (std::size_t k = i + 1; k < j; ++k) ref = std::max(ref, in.scale(i, k) + in.scale(k, j));
      if (ref == kNegInf) continue;

      for (std::size_t k = i + 1; k < j; ++k) {
        const double left_scale = in.scale(i, k);
        const double right_scale = in.scale(k, j);
        if (left_scale == kNegInf || right_scale == kNegInf) continue;
        const double s = std::exp(left_scale + right_scale - ref);
        const double* right = in.linear_cell(k, j);
        double* left_cell = &out[layout.slot(i, k, 0)];
        for (SymbolId b : in.active(i, k)) {
          const double lb = in.linear(i, k, b);
          if (lb == 0.0) continue;
          const double lbs = lb * s;
          double to_left = 0.0;
          for (std::uint32_t p = binary.offsets[b]; p < binary.offsets[b + 1]; ++p) {
            const SymbolId c = binary.right[p];
            const double rc = right[c];
            if (rc == 0.0) continue;
            const double v = lbs * rc;
            if (v != 0.0) {
              if (pair_sum[p] == 0.0) pairs.push_back(p);
              pair_sum[p] += v;
            }
            const double q = pair_out[p];
            if (q == 0.0) continue;
            to_left += q * rc;
            if (acc_right[c] == 0.0) touched_right.push_back(c);
            acc_right[c] += q * lb;
          }
          if (to_left > 0.0) left_cell[b] = log_add(left_cell[b], std::log(to_left) + top + right_scale);
        }
        double* right_cell = &out[layout.slot(k, j, 0)];
        for (SymbolId c : touched_right) {
          right_cell[c] = log_add(right_cell[c], std::log(acc_right[c]) + top + left_scale);
          acc_right[c] = 0.0;
        }
        touched_right.clear();
      }

      const double factor = std::exp(top + ref - log_z);
      for (std::uint32_t p : pairs) {
        const double m = pair_sum[p] * factor;
        for (std::uint32_t e = binary.rule_offsets[p]; e < binary.rule_offsets[p + 1]; ++e) {
          counts[binary.rule[e]] += binary.prob[e] * lin_out[binary.lhs[e]] * m;
        }
        pair_sum[p] = 0.0;
      }
      pairs.clear();
    }
  }
  return log_z;
}

inline double accumulate_expected_counts(const Pcfg& g, std::span<const double> probs,
                                         std::span<const SymbolId> sentence,
                                         std::span<double> counts) {
  return accumulate_expected_counts(g, probs, detail::BinaryIndex(g, probs), sentence, counts);
}

struct ExpectedCounts {
  std::vector<double> rule_counts;
  double log_likelihood = 0.0;
};

// E-step over a corpus. Sentences are grouped into fixed chunks whose partial
// sums are reduced in chunk order, so the result does not depend on `threads`.
inline ExpectedCounts expected_counts(const Pcfg& g, const EncodedCorpus& corpus,
                                      std::size_t threads = 1) {
  constexpr std::size_t kChunk = 32;
  const auto probs = rule_probabilities(g);
  const detail::BinaryIndex binary(g, probs);
  const std::size_t num_chunks = (corpus.size() + kChunk - 1) / kChunk;
  std::vector<std::vector<double>> partial(num_chunks);
  std::vector<double> chunk_ll(num_chunks, 0.0);
  std::atomic<std::size_t> next_chunk{0};
  std::exception_ptr failure;
  std::size_t failed_sentence = corpus.size();
  std::mutex failure_mutex;

  auto work = [&] {
    for (std::size_t c; (c = next_chunk.fetch_add(1)) < num_chunks;) {
      partial[c].assign(g.num_rules(), 0.0);
      const std::size_t end = std::min(corpus.size(), (c + 1) * kChunk);
      for (std::size_t s = c * kChunk; s < end; ++s) {
        try {
          chunk_ll[c] += accumulate_expected_counts(g, probs, binary, corpus[s], partial[c]);
        } catch (const NoParseError&) {
          // Report the first unparseable sentence whatever the thread timing.
          std::lock_guard lock(failure_mutex);
          if (s < failed_sentence) {
            failed_sentence = s;
            failure = std::make_exception_ptr(NoParseError(s));
          }
          return;
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          return;
        }
      }
    }
  };
  if (threads <= 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work);
  }
  if (failure) std::rethrow_exception(failure);

  ExpectedCounts result;
  result.rule_counts.assign(g.num_rules(), 0.0);
  for (std::size_t c = 0; c < num_chunks; ++c) {
    for (std::size_t r = 0; r < g.num_rules(); ++r) result.rule_counts[r] += partial[c][r];
    result.log_likelihood += chunk_ll[c];
  }
  return result;
}

inline double corpus_log_likelihood(const Pcfg& g, const EncodedCorpus& corpus) {
  const auto probs = rule_probabilities(g);
  double ll = 0.0;
  for (std::size_t s = 0; s < corpus.size(); ++s) {
    InsideChart chart(g, corpus[s], probs);
    const double lp = chart.log_total();
    if (lp == kNegInf) return kNegInf;
    ll += lp;
  }
  return ll;
}

struct EmIteration {
  std::size_t index = 0;
  double log_likelihood = 0.0;
  double max_param_change = 0.0;
};

struct EmResult {
  Pcfg grammar;
  std::vector<EmIteration> trace;  // entry t: grammar after t M-steps
  bool converged = false;
};

// Per-lhs relative frequencies of the expected counts. A lhs without expected
// uses keeps its previous distribution. Returns the largest probability change.
inline double maximization_step(Pcfg& g, std::span<const double> counts) {
  double max_change = 0.0;
  for (SymbolId lhs = 0; lhs < g.num_symbols(); ++lhs) {
    const auto ids = g.rules_for(lhs);
    if (ids.empty()) continue;
    double total = 0.0;
    for (RuleId r : ids) total += counts[r];
    if (!(total > 0.0)) continue;
    for (RuleId r : ids) {
      const double p = counts[r] / total;
      max_change = std::max(max_change, std::abs(p - g.rule(r).prob()));
      g.set_log_prob(r, safe_log(p));
    }
  }
  return max_change;
}

inline EmResult em_train(Pcfg g, const EncodedCorpus& corpus, const EmConfig& config,
                         const std::function<void(const EmIteration&)>& on_iteration = {}) {
  config.validate();
  EmResult result;
  auto stats = expected_counts(g, corpus, config.threads);
  result.trace.push_back({0, stats.log_likelihood, 0.0});
  if (on_iteration) on_iteration(result.trace.back());
  for (std::size_t it = 1; it <= config.max_iterations; ++it) {
    const double change = maximization_step(g, stats.rule_counts);
    const double previous = stats.log_likelihood;
    stats = expected_counts(g, corpus, config.threads);
    result.trace.push_back({it, stats.log_likelihood, change});
    if (on_iteration) on_iteration(result.trace.back());
    const double gain = stats.log_likelihood - previous;
    const double relative = previous != 0.0 ? gain / std::abs(previous) : gain;
    if (relative < config.rel_tol) {
      result.converged = true;
      break;
    }
  }
  result.grammar = std::move(g);
  return result;
}

// How the uniform component of the smoothing mixture is sized.
//   per_symbol:  1 / (number of expansions of that symbol), a proper
//                distribution per symbol (n^2 + |T| for Lari-Young, n^2 + m
//                for the post-pass).
//   total_rules: 1 / (total expansions over all smoothed symbols), i.e.
//                n^3 + n|T| for Lari-Young; leaves each symbol's
//                distribution summing to less than one when lambda > 0.
enum class UniformBase : std::uint8_t { per_symbol, total_rules };

struct Smoothing {
  std::vector<SymbolId> symbols;
  UniformBase base = UniformBase::per_symbol;
};

// Smooths the X_1..X_n expansion symbols of a Lari-Young or post-pass grammar.
inline Smoothing expansion_smoothing(const Pcfg& g, UniformBase base = UniformBase::per_symbol) {
  Smoothing s;
  s.base = base;
  for (std::size_t i = 1;; ++i) {
    const auto id = g.symbols().find_nonterminal(expansion_name(i));
    if (!id) break;
    s.symbols.push_back(*id);
  }
  return s;
}

inline double smoothed_probability(double p, double lambda, double expansions) {
  return (1.0 - lambda) * p + lambda / expansions;
}

// p_s(A -> a) = (1 - lambda) p(A -> a) + lambda / D for every smoothed A.
inline Pcfg smooth(const Pcfg& g, double lambda, const Smoothing& smoothing) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
  double total = 0.0;
  for (SymbolId a : smoothing.symbols) total += static_cast<double>(g.rules_for(a).size());
  Pcfg out = g;
  for (SymbolId a : smoothing.symbols) {
    const auto ids = g.rules_for(a);
    const double d = smoothing.base == UniformBase::per_symbol
                         ? static_cast<double>(ids.size())
                         : total;
    for (RuleId r : ids) {
      out.set_log_prob(r, safe_log(smoothed_probability(g.rule(r).prob(), lambda, d)));
    }
  }
  return out;
}

struct LambdaFit {
  double lambda = 0.0;
  double log_likelihood = kNegInf;
};

// Maximizes held-out log-likelihood of smooth(g, lambda) over [0, 1] by
// golden-section search to width 1e-4; the endpoints are always compared.
inline LambdaFit tune_lambda(const Pcfg& g, const EncodedCorpus& heldout,
                             const Smoothing& smoothing, double tol = 1e-4) {
  if (heldout.empty()) throw ConfigError("held-out corpus is empty");
  LambdaFit best;
  auto eval = [&](double lambda) {
    const double ll = corpus_log_likelihood(smooth(g, lambda, smoothing), heldout);
    if (ll > best.log_likelihood || (ll == best.log_likelihood && lambda < best.lambda)) {
      best = {lambda, ll};
    }
    return ll;
  };
  eval(0.0);
  eval(1.0);
  const double ratio = (std::sqrt(5.0) - 1.0) / 2.0;
  double lo = 0.0, hi = 1.0;
  double c = hi - ratio * (hi - lo), d = lo + ratio * (hi - lo);
  double fc = eval(c), fd = eval(d);
  while (hi - lo > tol) {
    if (fc > fd) {
      hi = d;
      d = c;
      fd = fc;
      c = hi - ratio * (hi - lo);
      fc = eval(c);
    } else {
      lo = c;
      c = d;
      fc = fd;
      d = lo + ratio * (hi - lo);
      fd = eval(d);
    }
  }
  return best;
}

}  // namespace pcfgi
