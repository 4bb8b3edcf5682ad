#pragma once

// End-to-end comparison of induced grammars, Lari-Young Inside-Outside
// grammars and interpolated n-gram models by test-set entropy.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "pcfgi/corpus.hpp"
#include "pcfgi/error.hpp"
#include "pcfgi/evaluation.hpp"
#include "pcfgi/grammar.hpp"
#include "pcfgi/grammar_io.hpp"
#include "pcfgi/induction.hpp"
#include "pcfgi/inside_outside.hpp"
#include "pcfgi/ngram.hpp"
#include "pcfgi/rng.hpp"
#include "pcfgi/sampler.hpp"

namespace pcfgi {

struct ExperimentConfig {
  // Exactly one domain source: a reference grammar to sample from, or a
  // tokenized corpus (one sentence per line) split in file order.
  std::string grammar_path;
  std::string corpus_path;
  std::size_t train_size = 4000;
  std::size_t heldout_size = 500;
  std::size_t test_size = 500;
  std::uint64_t data_seed = 42;
  std::size_t max_length = kDefaultMaxSentenceLength;

  std::vector<std::size_t> ngram_orders{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  std::vector<std::size_t> io_sizes{3, 4, 5, 6, 7, 8, 9, 10};
  bool induction = true;
  std::vector<std::size_t> postpass_sizes{3, 4, 5, 6, 7, 8, 9, 10};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  double epsilon = kDefaultEpsilon;
  std::size_t em_max_iterations = 100;
  double em_rel_tol = 1e-4;
  UniformBase uniform_base = UniformBase::per_symbol;
  std::size_t jobs = 1;
  std::string output_dir = "pcfgi-out";

  bool synthetic() const { return !grammar_path.empty(); }

  void validate() const {
    if (grammar_path.empty() == corpus_path.empty()) {
      throw ConfigError("give exactly one of a reference grammar or a corpus");
    }
    if (train_size == 0 || heldout_size == 0 || test_size == 0) {
      throw ConfigError("split sizes must be positive");
    }
    if (ngram_orders.empty() && io_sizes.empty() && !induction) {
      throw ConfigError("model roster is empty");
    }
    if (induction && postpass_sizes.empty()) throw ConfigError("induction needs post-pass sizes");
    if ((!io_sizes.empty() || induction) && seeds.empty()) throw ConfigError("no seeds given");
    for (auto n : ngram_orders) {
      if (n == 0) throw ConfigError("n-gram orders must be positive");
    }
    for (auto n : io_sizes) {
      if (n == 0) throw ConfigError("Inside-Outside sizes must be positive");
    }
    for (auto n : postpass_sizes) {
      if (n == 0) throw ConfigError("post-pass sizes must be positive");
    }
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw ConfigError("epsilon must lie in (0, 1)");
    if (!(em_rel_tol > 0.0)) throw ConfigError("rel_tol must be positive");
  }
};

struct DomainData {
  Corpus train, heldout, test;
  std::optional<Pcfg> reference;
  std::vector<std::string> vocabulary;  // sorted terminal set for grammar models
};

inline std::vector<std::string> terminals_of(const Pcfg& g) {
  std::vector<std::string> out;
  for (SymbolId s = 0; s < g.num_symbols(); ++s) {
    if (g.symbols().is_terminal(s)) out.push_back(g.symbols().name(s));
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Synthetic domains sample train, held-out and test in that order from one
// stream. Natural corpora get an <unk> terminal; unseen held-out and test
// tokens are mapped to it.
inline DomainData prepare_data(const ExperimentConfig& config) {
  config.validate();
  DomainData d;
  const std::size_t total = config.train_size + config.heldout_size + config.test_size;
  Corpus all;
  if (config.synthetic()) {
    d.reference = load_grammar(config.grammar_path);
    all = sample_corpus(*d.reference, config.data_seed, total, config.max_length);
    d.vocabulary = terminals_of(*d.reference);
  } else {
    all = load_corpus(config.corpus_path);
    if (all.size() < total) {
      throw ConfigError("corpus has " + std::to_string(all.size()) + " sentences, need " +
                        std::to_string(total));
    }
  }
  const auto at = [&](std::size_t i) { return all.begin() + static_cast<std::ptrdiff_t>(i); };
  d.train.assign(at(0), at(config.train_size));
  d.heldout.assign(at(config.train_size), at(config.train_size + config.heldout_size));
  d.test.assign(at(config.train_size + config.heldout_size), at(total));
  if (!config.synthetic()) {
    d.vocabulary = vocabulary(d.train);
    d.vocabulary.emplace_back(kUnknownToken);
    std::sort(d.vocabulary.begin(), d.vocabulary.end());
    d.heldout = map_unknown(d.heldout, d.vocabulary);
    d.test = map_unknown(d.test, d.vocabulary);
  }
  return d;
}

struct DataFiles {
  std::string train, heldout, test;
};

inline DataFiles write_data(const DomainData& d, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path base(dir);
  DataFiles f{(base / "train.txt").string(), (base / "heldout.txt").string(),
              (base / "test.txt").string()};
  save_corpus(f.train, d.train);
  save_corpus(f.heldout, d.heldout);
  save_corpus(f.test, d.test);
  return f;
}

inline DataFiles cmd_generate(const ExperimentConfig& config) {
  return write_data(prepare_data(config), config.output_dir);
}

enum class ModelFamily : std::uint8_t { ideal, postpass, induced, ngram, inside_outside };

inline std::string family_name(ModelFamily f) {
  switch (f) {
    case ModelFamily::ideal: return "ideal grammar";
    case ModelFamily::postpass: return "induced + post-pass";
    case ModelFamily::induced: return "induced (no post-pass)";
    case ModelFamily::ngram: return "n-gram model";
    case ModelFamily::inside_outside: return "Inside-Outside";
  }
  return "?";
}

inline std::string family_key(ModelFamily f) {
  switch (f) {
    case ModelFamily::ideal: return "ideal";
    case ModelFamily::postpass: return "postpass";
    case ModelFamily::induced: return "induced";
    case ModelFamily::ngram: return "ngram";
    case ModelFamily::inside_outside: return "io";
  }
  return "?";
}

// One trained roster entry; for seeded families, the seed with the best
// held-out log-likelihood.
struct ModelRun {
  ModelFamily family = ModelFamily::ngram;
  std::size_t n = 0;
  std::uint64_t seed = 0;
  double lambda = 0.0;
  double heldout_loglik = 0.0;
  double entropy = 0.0;
  std::size_t params = 0;
  std::size_t iterations = 0;
  double seconds = 0.0;
  std::string artifact;
  std::string error;

  bool ok() const { return error.empty(); }
};

struct EvalResult {
  std::string kind;  // "pcfg" or "ngram"
  double bits_per_token = 0.0;
  std::size_t tokens = 0;
  std::size_t unparsed = 0;
};

inline bool is_ngram_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open model " + path);
  std::string first;
  in >> first;
  return first == "pcfgi-ngram";
}

// Scores any saved model on a test corpus.
inline EvalResult evaluate_model_file(const std::string& model_path, const Corpus& test) {
  if (is_ngram_file(model_path)) {
    const auto model = load_ngram(model_path);
    const auto e = model.entropy(test);
    return {"ngram", e.bits_per_token, e.tokens, 0};
  }
  const auto g = load_grammar(model_path);
  const auto e = pcfg_entropy(g, test);
  return {"pcfg", e.bits_per_token, e.tokens, e.unparsed};
}

struct ExperimentReport {
  bool synthetic = false;
  std::vector<ModelRun> runs;
  double induction_seconds = 0.0;
  std::string induction_error;

  // Lowest-entropy successful run of a family.
  std::optional<ModelRun> best(ModelFamily f) const {
    std::optional<ModelRun> out;
    for (const auto& r : runs) {
      if (r.family != f || !r.ok()) continue;
      if (!out || r.entropy < out->entropy) out = r;
    }
    return out;
  }

  bool any_failed() const {
    if (!induction_error.empty()) return true;
    return std::any_of(runs.begin(), runs.end(), [](const ModelRun& r) { return !r.ok(); });
  }
};

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

// Saves the grammar, reloads it, and scores the reloaded copy so the reported
// entropy is exactly what evaluating the artifact reproduces.
inline double save_and_score(const Pcfg& g, const std::string& path, const Corpus& test) {
  save_grammar(path, g);
  return pcfg_entropy(load_grammar(path), test).bits_per_token;
}

struct SeededFit {
  Pcfg grammar;
  std::uint64_t seed = 0;
  double lambda = 0.0;
  double heldout_loglik = kNegInf;
  std::size_t iterations = 0;
};

// EM from each seed's initial grammar; keeps the smoothed grammar with the
// best held-out log-likelihood.
inline SeededFit fit_best_seed(const std::function<Pcfg(std::uint64_t)>& initial,
                               const DomainData& d, const ExperimentConfig& config) {
  std::optional<SeededFit> best;
  for (std::uint64_t seed : config.seeds) {
    EmConfig em;
    em.max_iterations = config.em_max_iterations;
    em.rel_tol = config.em_rel_tol;
    em.seed = seed;
    Pcfg g0 = initial(seed);
    const auto train = encode_corpus(g0, d.train);
    auto trained = em_train(std::move(g0), train, em);
    const auto heldout = encode_corpus(trained.grammar, d.heldout);
    const auto smoothing = expansion_smoothing(trained.grammar, config.uniform_base);
    const auto fit = tune_lambda(trained.grammar, heldout, smoothing);
    if (!best || fit.log_likelihood > best->heldout_loglik) {
      best = SeededFit{smooth(trained.grammar, fit.lambda, smoothing), seed, fit.lambda,
                       fit.log_likelihood, trained.trace.size() - 1};
    }
  }
  return std::move(*best);
}

template <class Job>
void run_jobs(std::vector<Job>& jobs, std::size_t threads) {
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < jobs.size();) jobs[i]();
  };
  if (threads <= 1) {
    work();
    return;
  }
  std::vector<std::jthread> pool;
  for (std::size_t t = 0; t < std::min(threads, jobs.size()); ++t) pool.emplace_back(work);
}

}  // namespace detail

struct ExperimentCallbacks {
  std::function<void(const ModelRun&)> on_run;
  std::function<void(const std::string&)> on_message;
};

inline ExperimentReport run_experiment(const ExperimentConfig& config, const DomainData& d,
                                       const ExperimentCallbacks& callbacks = {}) {
  namespace fs = std::filesystem;
  const fs::path models = fs::path(config.output_dir) / "models";
  fs::create_directories(models);
  ExperimentReport report;
  report.synthetic = d.reference.has_value();
  std::mutex report_mutex;
  auto say = [&](const std::string& m) {
    if (callbacks.on_message) {
      std::lock_guard lock(report_mutex);
      callbacks.on_message(m);
    }
  };

  if (d.reference) {
    ModelRun r;
    r.family = ModelFamily::ideal;
    r.artifact = (models / "ideal.pcfg").string();
    r.params = free_parameters(*d.reference);
    try {
      r.entropy = detail::save_and_score(*d.reference, r.artifact, d.test);
    } catch (const std::exception& e) {
      r.error = e.what();
    }
    report.runs.push_back(r);
  }

  std::optional<Pcfg> induced;
  if (config.induction) {
    say("inducing grammar from " + std::to_string(d.train.size()) + " sentences");
    const auto t0 = std::chrono::steady_clock::now();
    ModelRun r;
    r.family = ModelFamily::induced;
    r.artifact = (models / "induced.pcfg").string();
    try {
      InductionConfig ic;
      ic.epsilon = config.epsilon;
      ic.max_sentence_length = std::max<std::size_t>(ic.max_sentence_length, config.max_length);
      ic.vocabulary = d.vocabulary;
      auto result = induce(d.train, ic);
      induced = result.grammar();
      report.induction_seconds = detail::seconds_since(t0);
      r.seconds = report.induction_seconds;
      r.params = free_parameters(*induced);
      r.iterations = result.state.accepted_moves();
      r.entropy = detail::save_and_score(*induced, r.artifact, d.test);
    } catch (const std::exception& e) {
      r.error = e.what();
      report.induction_error = e.what();
    }
    report.runs.push_back(r);
  }

  std::vector<ModelRun> slots;
  std::vector<std::function<void()>> jobs;
  auto add_slot = [&](ModelFamily f, std::size_t n, std::string artifact) {
    ModelRun r;
    r.family = f;
    r.n = n;
    r.artifact = std::move(artifact);
    slots.push_back(std::move(r));
    return slots.size() - 1;
  };
  auto finish = [&](ModelRun& r) {
    say(family_key(r.family) + " n=" + std::to_string(r.n) +
        (r.ok() ? " entropy " + std::to_string(r.entropy) : " failed: " + r.error));
    if (callbacks.on_run) {
      std::lock_guard lock(report_mutex);
      callbacks.on_run(r);
    }
  };

  for (std::size_t n : config.ngram_orders) {
    const auto i = add_slot(ModelFamily::ngram, n, (models / ("ngram_" + std::to_string(n) + ".txt")).string());
    jobs.emplace_back([&, i, n] {
      ModelRun& r = slots[i];
      const auto t0 = std::chrono::steady_clock::now();
      try {
        auto model = count_model(d.train, n);
        const auto fit = train_lambdas(model, d.heldout);
        model.set_lambdas(fit.lambdas);
        r.seconds = detail::seconds_since(t0);
        r.heldout_loglik = fit.trace.back();
        r.iterations = fit.trace.size();
        r.params = model.num_parameters();
        save_ngram(r.artifact, model);
        r.entropy = load_ngram(r.artifact).entropy(d.test).bits_per_token;
      } catch (const std::exception& e) {
        r.error = e.what();
      }
      finish(r);
    });
  }

  auto seeded_job = [&](std::size_t i, std::function<Pcfg(std::uint64_t)> initial,
                        double extra_seconds) {
    return [&, i, initial = std::move(initial), extra_seconds] {
      ModelRun& r = slots[i];
      const auto t0 = std::chrono::steady_clock::now();
      try {
        auto fit = detail::fit_best_seed(initial, d, config);
        r.seconds = detail::seconds_since(t0) + extra_seconds;
        r.seed = fit.seed;
        r.lambda = fit.lambda;
        r.heldout_loglik = fit.heldout_loglik;
        r.iterations = fit.iterations;
        r.params = free_parameters(fit.grammar);
        r.entropy = detail::save_and_score(fit.grammar, r.artifact, d.test);
      } catch (const std::exception& e) {
        r.error = e.what();
      }
      finish(r);
    };
  };

  for (std::size_t n : config.io_sizes) {
    const auto i = add_slot(ModelFamily::inside_outside, n,
                            (models / ("io_" + std::to_string(n) + ".pcfg")).string());
    jobs.emplace_back(seeded_job(
        i,
        [&d, n](std::uint64_t seed) {
          return lari_young_grammar(n, d.vocabulary, derive_seed(seed, n));
        },
        0.0));
  }

  if (induced) {
    for (std::size_t n : config.postpass_sizes) {
      const auto i = add_slot(ModelFamily::postpass, n,
                              (models / ("postpass_" + std::to_string(n) + ".pcfg")).string());
      jobs.emplace_back(seeded_job(
          i,
          [&induced, n](std::uint64_t seed) {
            return postpass_grammar(n, *induced, derive_seed(seed, 1000 + n));
          },
          report.induction_seconds));
    }
  } else if (config.induction) {
    for (std::size_t n : config.postpass_sizes) {
      const auto i = add_slot(ModelFamily::postpass, n, "");
      slots[i].error = "induction failed: " + report.induction_error;
    }
  }

  detail::run_jobs(jobs, config.jobs);
  report.runs.insert(report.runs.end(), slots.begin(), slots.end());
  return report;
}

inline std::string format_fixed(double v, int digits) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline std::string format_exact(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Signed percentage (model - ngram) / ngram; empty for the n-gram row itself.
inline std::string relative_to_ngram(const ModelRun& r, const std::optional<ModelRun>& ngram) {
  if (r.family == ModelFamily::ngram || !ngram || !r.ok()) return "";
  const double rel = 100.0 * (r.entropy - ngram->entropy) / ngram->entropy;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%+.1f%%", rel);
  if (std::string_view(buf + 1) == "0.0%") return "0.0%";
  return buf;
}

inline constexpr std::string_view kReportFooter =
    "params: free rule probabilities (rules minus one per left-hand side) for grammars;\n"
    "        stored n-gram counts plus reachable lambda buckets for n-gram models.\n"
    "time:   wall-clock training seconds over all seeds; post-pass rows include the\n"
    "        induction search time.\n"
    "best n: the size with the lowest test entropy; seeds are chosen by held-out likelihood.\n";

inline void write_report_table(std::ostream& out, const ExperimentReport& report) {
  const auto ngram = report.best(ModelFamily::ngram);
  struct Row {
    std::string cells[6];
  };
  std::vector<Row> rows;
  rows.push_back({{"model", "best n", "entropy", "rel. to n-gram", "params", "time (s)"}});
  for (ModelFamily f : {ModelFamily::ideal, ModelFamily::postpass, ModelFamily::induced,
                        ModelFamily::ngram, ModelFamily::inside_outside}) {
    const bool present = std::any_of(report.runs.begin(), report.runs.end(),
                                     [f](const ModelRun& r) { return r.family == f; });
    if (!present) continue;
    const auto b = report.best(f);
    if (!b) {
      rows.push_back({{family_name(f), "", "failed", "", "", ""}});
      continue;
    }
    const bool sized = f != ModelFamily::ideal && f != ModelFamily::induced;
    rows.push_back({{family_name(f), sized ? std::to_string(b->n) : "",
                     format_fixed(b->entropy, 4), relative_to_ngram(*b, ngram),
                     std::to_string(b->params), format_fixed(b->seconds, 1)}});
  }
  std::size_t width[6] = {};
  for (const auto& r : rows) {
    for (int c = 0; c < 6; ++c) width[c] = std::max(width[c], r.cells[c].size());
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (int c = 0; c < 6; ++c) {
      if (c) out << "  ";
      if (c == 0) {
        out << std::left << std::setw(static_cast<int>(width[c])) << rows[i].cells[c];
      } else {
        out << std::right << std::setw(static_cast<int>(width[c])) << rows[i].cells[c];
      }
    }
    out << '\n';
    if (i == 0) {
      std::size_t total = 10;
      for (auto w : width) total += w;
      out << std::string(total, '-') << '\n';
    }
  }
  for (const auto& r : report.runs) {
    if (!r.ok()) out << "FAILED " << family_key(r.family) << " n=" << r.n << ": " << r.error << '\n';
  }
  out << '\n' << kReportFooter;
}

// One record per run; `best` marks the row shown in the table.
inline void write_report_records(std::ostream& out, const ExperimentReport& report) {
  const auto ngram = report.best(ModelFamily::ngram);
  out << "family\tn\tseed\tlambda\theldout_loglik\tentropy\trelative\tparams\titerations\tseconds"
         "\tbest\tstatus\tartifact\n";
  for (const auto& r : report.runs) {
    const auto b = report.best(r.family);
    const bool is_best = b && r.ok() && b->n == r.n;
    out << family_key(r.family) << '\t' << r.n << '\t' << r.seed << '\t' << format_exact(r.lambda)
        << '\t' << format_exact(r.heldout_loglik) << '\t' << format_exact(r.entropy) << '\t'
        << relative_to_ngram(r, ngram) << '\t' << r.params << '\t' << r.iterations << '\t'
        << format_fixed(r.seconds, 3) << '\t' << (is_best ? 1 : 0) << '\t'
        << (r.ok() ? "ok" : "error: " + r.error) << '\t' << r.artifact << '\n';
  }
}

inline ExperimentReport cmd_experiment(const ExperimentConfig& config,
                                       const ExperimentCallbacks& callbacks = {}) {
  const auto data = prepare_data(config);
  write_data(data, config.output_dir);
  auto report = run_experiment(config, data, callbacks);
  const std::filesystem::path base(config.output_dir);
  std::ofstream table(base / "report.txt");
  write_report_table(table, report);
  std::ofstream records(base / "report.tsv");
  write_report_records(records, report);
  return report;
}

}  // namespace pcfgi
