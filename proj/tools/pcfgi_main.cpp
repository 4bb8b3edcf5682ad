// pcfgi: grammar induction, Inside-Outside and n-gram baselines, entropy
// comparison.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pcfgi/corpus.hpp"
#include "pcfgi/error.hpp"
#include "pcfgi/evaluation.hpp"
#include "pcfgi/experiment.hpp"
#include "pcfgi/grammar_io.hpp"
#include "pcfgi/induction.hpp"
#include "pcfgi/inside_outside.hpp"
#include "pcfgi/ngram.hpp"

namespace {

using nlohmann::json;
using namespace pcfgi;

void add_domain_options(CLI::App* cmd, ExperimentConfig& c) {
  cmd->add_option("--grammar", c.grammar_path, "Reference grammar to sample the domain from");
  cmd->add_option("--corpus", c.corpus_path, "Tokenized corpus, one sentence per line");
  cmd->add_option("--train-size", c.train_size)->capture_default_str();
  cmd->add_option("--heldout-size", c.heldout_size)->capture_default_str();
  cmd->add_option("--test-size", c.test_size)->capture_default_str();
  cmd->add_option("--data-seed", c.data_seed)->capture_default_str();
  cmd->add_option("--max-length", c.max_length, "Longest sampled sentence")->capture_default_str();
  cmd->add_option("--out", c.output_dir, "Output directory")->capture_default_str();
}

std::vector<std::string> grammar_vocabulary(const std::string& reference, const Corpus& train) {
  if (!reference.empty()) return terminals_of(load_grammar(reference));
  return vocabulary(train);
}

json iteration_record(const EmIteration& it) {
  return {{"iteration", it.index},
          {"loglik", it.log_likelihood},
          {"max_param_change", it.max_param_change}};
}

int run_induce(const std::string& train_path, const std::string& out_path,
               const std::string& reference, double epsilon, std::size_t checkpoint_every,
               bool quiet) {
  const auto train = load_corpus(train_path);
  InductionConfig config;
  config.epsilon = epsilon;
  config.checkpoint_every = checkpoint_every;
  config.vocabulary = grammar_vocabulary(reference, train);
  InductionCallbacks callbacks;
  if (!quiet) {
    callbacks.on_progress = [](const ProgressRecord& r) {
      std::cout << json{{"sentence", r.sentence},
                        {"rules", r.rules},
                        {"symbols", r.symbols},
                        {"moves", r.accepted_moves},
                        {"log_objective", r.log_objective},
                        {"skipped", r.skipped}}
                << '\n';
    };
    callbacks.on_checkpoint = [](const CheckpointRecord& r) {
      std::cout << json{{"checkpoint", r.sentence},
                        {"predicted_loglik", r.predicted_log_likelihood},
                        {"exact_loglik", r.exact_log_likelihood}}
                << '\n';
    };
  }
  callbacks.on_warning = [](const std::string& w) { std::cerr << "warning: " << w << '\n'; };
  const auto result = induce(train, config, callbacks);
  save_grammar(out_path, result.grammar());
  std::cerr << "induced " << result.grammar().num_rules() << " rules, "
            << result.state.accepted_moves() << " moves\n";
  return 0;
}

struct TrainIoOptions {
  std::string train, heldout, out, reference, induced;
  std::size_t n = 5;
  std::vector<std::uint64_t> seeds{1};
  std::size_t max_iterations = 100;
  double rel_tol = 1e-4;
  double lambda = -1.0;
  std::string uniform_base = "per-symbol";
  std::size_t threads = 1;
  bool quiet = false;
};

int run_train_io(const TrainIoOptions& o) {
  const auto train = load_corpus(o.train);
  const auto heldout = o.heldout.empty() ? Corpus{} : load_corpus(o.heldout);
  if (o.lambda < 0.0 && heldout.empty()) {
    throw ConfigError("give --heldout to tune lambda, or fix it with --lambda");
  }
  std::optional<Pcfg> induced;
  if (!o.induced.empty()) induced = load_grammar(o.induced);
  const auto vocab = grammar_vocabulary(o.reference, train);
  const auto base =
      o.uniform_base == "total-rules" ? UniformBase::total_rules : UniformBase::per_symbol;

  std::optional<Pcfg> best;
  double best_ll = kNegInf;
  for (std::uint64_t seed : o.seeds) {
    Pcfg g0 = induced ? postpass_grammar(o.n, *induced, seed)
                      : lari_young_grammar(o.n, vocab, seed);
    std::cerr << "seed " << seed << ": " << g0.num_rules() << " rules before training\n";
    EmConfig em;
    em.max_iterations = o.max_iterations;
    em.rel_tol = o.rel_tol;
    em.seed = seed;
    em.threads = o.threads;
    em.lambda = std::max(o.lambda, 0.0);
    const auto encoded = encode_corpus(g0, train);
    auto result = em_train(std::move(g0), encoded, em, [&](const EmIteration& it) {
      if (!o.quiet) std::cout << iteration_record(it).dump() << '\n';
    });
    const auto smoothing = expansion_smoothing(result.grammar, base);
    LambdaFit fit{em.lambda, kNegInf};
    if (o.lambda < 0.0) {
      fit = tune_lambda(result.grammar, encode_corpus(result.grammar, heldout), smoothing);
    } else if (!heldout.empty()) {
      fit.log_likelihood = corpus_log_likelihood(smooth(result.grammar, em.lambda, smoothing),
                                                 encode_corpus(result.grammar, heldout));
    }
    std::cerr << "seed " << seed << ": lambda " << fit.lambda << ", held-out loglik "
              << fit.log_likelihood << '\n';
    if (!best || fit.log_likelihood > best_ll) {
      best = smooth(result.grammar, fit.lambda, smoothing);
      best_ll = fit.log_likelihood;
    }
  }
  save_grammar(o.out, *best);
  return 0;
}

int run_train_ngram(const std::string& train_path, const std::string& heldout_path,
                    std::size_t order, const std::string& out_path) {
  auto model = count_model(load_corpus(train_path), order);
  const auto fit = train_lambdas(model, load_corpus(heldout_path));
  model.set_lambdas(fit.lambdas);
  for (const auto& [k, b] : fit.unseen) {
    std::cerr << "note: lambda bucket " << b << " of order " << k
              << " has no held-out events; kept at " << LambdaBuckets::kInitial << '\n';
  }
  std::cerr << "held-out loglik " << fit.trace.back() << " after " << fit.trace.size()
            << " iterations\n";
  save_ngram(out_path, model);
  return 0;
}

int run_eval(const std::string& model_path, const std::string& test_path, bool verbose) {
  const auto r = evaluate_model_file(model_path, load_corpus(test_path));
  std::printf("%.4f\n", r.bits_per_token + 0.0);
  if (verbose) {
    std::printf("%s\t%.17g\t%zu tokens\t%zu unparsed\n", r.kind.c_str(), r.bits_per_token,
                r.tokens, r.unparsed);
  }
  return 0;
}

int run_experiment_cmd(ExperimentConfig config, const std::string& uniform_base, bool quiet) {
  config.uniform_base =
      uniform_base == "total-rules" ? UniformBase::total_rules : UniformBase::per_symbol;
  ExperimentCallbacks callbacks;
  if (!quiet) callbacks.on_message = [](const std::string& m) { std::cerr << m << '\n'; };
  const auto report = cmd_experiment(config, callbacks);
  write_report_table(std::cout, report);
  std::cout << "\nrecords: " << config.output_dir << "/report.tsv\n";
  return report.any_failed() ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Probabilistic grammar induction and language-model comparison"};
  app.set_config("--config", "", "Key-value config file; sections name subcommands");
  app.require_subcommand(1);

  ExperimentConfig gen_config;
  auto* generate = app.add_subcommand("generate", "Sample or split train/held-out/test corpora");
  add_domain_options(generate, gen_config);

  std::string train, heldout, test, out, model, reference;
  double epsilon = kDefaultEpsilon;
  std::size_t checkpoint_every = 0;
  bool quiet = false;
  auto* induce_cmd = app.add_subcommand("induce", "Induce a grammar from a training corpus");
  induce_cmd->add_option("--train", train)->required();
  induce_cmd->add_option("--out", out)->required();
  induce_cmd->add_option("--reference", reference, "Take the terminal set from this grammar");
  induce_cmd->add_option("--epsilon", epsilon)->capture_default_str();
  induce_cmd->add_option("--checkpoint-every", checkpoint_every,
                         "Re-parse exactly every N sentences and report the drift");
  induce_cmd->add_flag("--quiet", quiet, "Suppress JSON progress records");

  TrainIoOptions io;
  auto* train_io = app.add_subcommand("train-io", "Train a Lari-Young or post-pass grammar by EM");
  train_io->add_option("--train", io.train)->required();
  train_io->add_option("--heldout", io.heldout, "Held-out corpus for tuning lambda");
  train_io->add_option("--out", io.out)->required();
  train_io->add_option("-n,--nonterminals", io.n)->capture_default_str();
  train_io->add_option("--seeds", io.seeds)->delimiter(',')->capture_default_str();
  train_io->add_option("--induced", io.induced, "Build the post-pass grammar on this grammar");
  train_io->add_option("--reference", io.reference, "Take the terminal set from this grammar");
  train_io->add_option("--max-iterations", io.max_iterations)->capture_default_str();
  train_io->add_option("--rel-tol", io.rel_tol)->capture_default_str();
  train_io->add_option("--lambda", io.lambda, "Fixed smoothing weight instead of tuning");
  train_io->add_option("--uniform-base", io.uniform_base)
      ->check(CLI::IsMember({"per-symbol", "total-rules"}))
      ->capture_default_str();
  train_io->add_option("--threads", io.threads)->capture_default_str();
  train_io->add_flag("--quiet", io.quiet, "Suppress JSON iteration records");

  std::size_t order = 3;
  auto* train_ngram = app.add_subcommand("train-ngram", "Train an interpolated n-gram model");
  train_ngram->add_option("--train", train)->required();
  train_ngram->add_option("--heldout", heldout)->required();
  train_ngram->add_option("-n,--order", order)->capture_default_str();
  train_ngram->add_option("--out", out)->required();

  bool verbose = false;
  auto* eval = app.add_subcommand("eval", "Print a model's test entropy in bits per token");
  eval->add_option("--model", model)->required();
  eval->add_option("--test", test)->required();
  eval->add_flag("--verbose", verbose);

  ExperimentConfig exp_config;
  std::string uniform_base = "per-symbol";
  auto* experiment = app.add_subcommand("experiment", "Train the full roster and report entropies");
  add_domain_options(experiment, exp_config);
  experiment->add_option("--ngram-orders", exp_config.ngram_orders)->delimiter(',');
  experiment->add_option("--io-sizes", exp_config.io_sizes)->delimiter(',');
  experiment->add_option("--postpass-sizes", exp_config.postpass_sizes)->delimiter(',');
  experiment->add_option("--seeds", exp_config.seeds)->delimiter(',');
  experiment->add_option("--induction", exp_config.induction)->capture_default_str();
  experiment->add_option("--epsilon", exp_config.epsilon)->capture_default_str();
  experiment->add_option("--max-iterations", exp_config.em_max_iterations)->capture_default_str();
  experiment->add_option("--rel-tol", exp_config.em_rel_tol)->capture_default_str();
  experiment->add_option("--uniform-base", uniform_base)
      ->check(CLI::IsMember({"per-symbol", "total-rules"}))
      ->capture_default_str();
  experiment->add_option("--jobs", exp_config.jobs, "Roster models trained in parallel")
      ->capture_default_str();
  experiment->add_flag("--quiet", quiet);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*generate) {
      const auto files = cmd_generate(gen_config);
      std::cout << files.train << '\n' << files.heldout << '\n' << files.test << '\n';
      return 0;
    }
    if (*induce_cmd) return run_induce(train, out, reference, epsilon, checkpoint_every, quiet);
    if (*train_io) return run_train_io(io);
    if (*train_ngram) return run_train_ngram(train, heldout, order, out);
    if (*eval) return run_eval(model, test, verbose);
    if (*experiment) return run_experiment_cmd(exp_config, uniform_base, quiet);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
