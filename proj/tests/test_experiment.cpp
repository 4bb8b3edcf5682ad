#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pcfgi/english_like.hpp"
#include "pcfgi/evaluation.hpp"
#include "pcfgi/experiment.hpp"
#include "pcfgi/grammar_io.hpp"

namespace pcfgi {
namespace {

namespace fs = std::filesystem;

fs::path scratch_dir() {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  const fs::path dir =
      fs::temp_directory_path() / "pcfgi-tests" / (std::string(info->test_suite_name()) + "." + info->name());
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string english_like_path() { return std::string(PCFGI_DATA_DIR) + "/english_like.pcfg"; }

struct Command {
  int status = -1;
  std::string out;
};

Command run(const std::string& args) {
  const std::string cmd = std::string(PCFGI_CLI) + " " + args + " 2>/dev/null";
  Command c;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return c;
  std::array<char, 4096> buf;
  for (std::size_t n; (n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0;) c.out.append(buf.data(), n);
  const int raw = pclose(pipe);
  c.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

ExperimentConfig tiny_config(const fs::path& out) {
  ExperimentConfig c;
  c.grammar_path = english_like_path();
  c.train_size = 150;
  c.heldout_size = 40;
  c.test_size = 40;
  c.ngram_orders = {1, 2};
  c.io_sizes = {2};
  c.postpass_sizes = {2};
  c.seeds = {1, 2};
  c.em_max_iterations = 3;
  c.output_dir = out.string();
  return c;
}

TEST(PrepareData, SyntheticSplitsAreDeterministic) {
  ExperimentConfig c;
  c.grammar_path = english_like_path();
  c.train_size = 30;
  c.heldout_size = 5;
  c.test_size = 7;
  const auto a = prepare_data(c);
  const auto b = prepare_data(c);
  EXPECT_EQ(a.train.size(), 30u);
  EXPECT_EQ(a.heldout.size(), 5u);
  EXPECT_EQ(a.test.size(), 7u);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);
  ASSERT_TRUE(a.reference.has_value());
  EXPECT_EQ(a.vocabulary, terminals_of(english_like_grammar()));
  c.data_seed = 43;
  EXPECT_NE(prepare_data(c).train, a.train);
}

TEST(PrepareData, NaturalCorpusMapsUnknownTokens) {
  const auto dir = scratch_dir();
  const auto path = (dir / "corpus.txt").string();
  std::ofstream(path) << "the cat sat\nthe dog\n\na cat ran\nthe bird sat\nthe cat\n";
  ExperimentConfig c;
  c.corpus_path = path;
  c.train_size = 2;
  c.heldout_size = 1;
  c.test_size = 2;
  const auto d = prepare_data(c);
  EXPECT_FALSE(d.reference.has_value());
  EXPECT_EQ(d.vocabulary, (std::vector<std::string>{"<unk>", "cat", "dog", "sat", "the"}));
  EXPECT_EQ(d.heldout[0], (Sentence{"<unk>", "cat", "<unk>"}));
  EXPECT_EQ(d.test[0], (Sentence{"the", "<unk>", "sat"}));
  c.test_size = 3;
  EXPECT_THROW(prepare_data(c), ConfigError);
}

TEST(ExperimentConfig, Validation) {
  ExperimentConfig c;
  EXPECT_THROW(c.validate(), ConfigError);
  c.grammar_path = "g";
  EXPECT_NO_THROW(c.validate());
  c.corpus_path = "c";
  EXPECT_THROW(c.validate(), ConfigError);
  c.corpus_path.clear();
  c.seeds.clear();
  EXPECT_THROW(c.validate(), ConfigError);
  c.seeds = {1};
  c.ngram_orders = {0};
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Report, RelativeColumn) {
  ModelRun ngram;
  ngram.entropy = 2.0;
  ModelRun better;
  better.family = ModelFamily::postpass;
  better.entropy = 1.9;
  ModelRun worse = better;
  worse.entropy = 2.1;
  ModelRun same = better;
  same.entropy = 2.0;
  EXPECT_EQ(relative_to_ngram(better, ngram), "-5.0%");
  EXPECT_EQ(relative_to_ngram(worse, ngram), "+5.0%");
  EXPECT_EQ(relative_to_ngram(same, ngram), "0.0%");
  EXPECT_EQ(relative_to_ngram(ngram, ngram), "");
  EXPECT_EQ(relative_to_ngram(better, std::nullopt), "");
}

TEST(RunExperiment, TinyRosterEndToEnd) {
  const auto dir = scratch_dir();
  const auto config = tiny_config(dir);
  std::vector<std::string> finished;
  ExperimentCallbacks callbacks;
  callbacks.on_run = [&](const ModelRun& r) { finished.push_back(family_key(r.family)); };
  const auto report = cmd_experiment(config, callbacks);
  EXPECT_FALSE(report.any_failed());
  EXPECT_TRUE(report.synthetic);
  // ideal, induced, two n-grams, one IO size, one post-pass size.
  ASSERT_EQ(report.runs.size(), 6u);
  EXPECT_EQ(finished.size(), 4u);
  for (const auto& r : report.runs) {
    ASSERT_TRUE(r.ok()) << family_key(r.family) << ": " << r.error;
    EXPECT_TRUE(std::isfinite(r.entropy));
    EXPECT_GT(r.params, 0u);
    // Every reported entropy is reproduced from the saved artifact.
    const auto e = evaluate_model_file(r.artifact, load_corpus((dir / "test.txt").string()));
    EXPECT_NEAR(e.bits_per_token, r.entropy, 1e-9) << r.artifact;
    if (r.family == ModelFamily::inside_outside || r.family == ModelFamily::postpass) {
      EXPECT_TRUE(r.seed == 1 || r.seed == 2);
      EXPECT_GE(r.lambda, 0.0);
      EXPECT_LE(r.lambda, 1.0);
      EXPECT_LE(r.iterations, 3u);
    }
  }
  const auto post = report.best(ModelFamily::postpass);
  ASSERT_TRUE(post);
  EXPECT_GE(post->seconds, report.induction_seconds);

  const auto table = slurp(dir / "report.txt");
  for (const char* row : {"ideal grammar", "induced + post-pass", "n-gram", "Inside-Outside"}) {
    EXPECT_NE(table.find(row), std::string::npos) << row << "\n" << table;
  }
  EXPECT_NE(table.find("params:"), std::string::npos);
  const auto tsv = slurp(dir / "report.tsv");
  EXPECT_EQ(std::count(tsv.begin(), tsv.end(), '\n'), 7);
  EXPECT_EQ(tsv.rfind("family\tn\tseed", 0), 0u);
  for (const char* f : {"train.txt", "heldout.txt", "test.txt", "models/ngram_2.txt", "models/io_2.pcfg",
                        "models/postpass_2.pcfg", "models/induced.pcfg", "models/ideal.pcfg"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
}

TEST(RunExperiment, RepeatRunsAgreeExceptForTiming) {
  const auto a = cmd_experiment(tiny_config(scratch_dir() / "a"));
  const auto b = cmd_experiment(tiny_config(scratch_dir() / "b"));
  ASSERT_EQ(a.runs.size(), b.runs.size());
  for (std::size_t i = 0; i < a.runs.size(); ++i) {
    EXPECT_EQ(a.runs[i].entropy, b.runs[i].entropy);
    EXPECT_EQ(a.runs[i].heldout_loglik, b.runs[i].heldout_loglik);
    EXPECT_EQ(a.runs[i].lambda, b.runs[i].lambda);
    EXPECT_EQ(a.runs[i].seed, b.runs[i].seed);
    EXPECT_EQ(a.runs[i].params, b.runs[i].params);
  }
}

TEST(RunExperiment, ParallelJobsMatchSerial) {
  auto config = tiny_config(scratch_dir() / "serial");
  const auto serial = cmd_experiment(config);
  config.output_dir = (scratch_dir() / "parallel").string();
  config.jobs = 3;
  const auto parallel = cmd_experiment(config);
  ASSERT_EQ(serial.runs.size(), parallel.runs.size());
  for (std::size_t i = 0; i < serial.runs.size(); ++i) {
    EXPECT_EQ(serial.runs[i].entropy, parallel.runs[i].entropy);
  }
}

TEST(RunExperiment, FailedModelIsRecordedAndRunContinues) {
  const auto dir = scratch_dir();
  auto config = tiny_config(dir);
  config.postpass_sizes = {};
  config.induction = false;
  // A directory where the artifact should go makes that one save fail.
  fs::create_directories(dir / "models" / "io_2.pcfg");
  const auto report = cmd_experiment(config);
  EXPECT_TRUE(report.any_failed());
  std::size_t failed = 0;
  for (const auto& r : report.runs) {
    if (r.ok()) continue;
    ++failed;
    EXPECT_EQ(r.family, ModelFamily::inside_outside);
  }
  EXPECT_EQ(failed, 1u);
  EXPECT_TRUE(report.best(ModelFamily::ngram));
  EXPECT_NE(slurp(dir / "report.txt").find("FAILED io"), std::string::npos);
}

TEST(Cli, GenerateIsDeterministic) {
  const auto dir = scratch_dir();
  const std::string common = "generate --grammar " + english_like_path() +
                             " --train-size 1 --heldout-size 1 --test-size 1 --data-seed 5 --out ";
  ASSERT_EQ(run(common + (dir / "a").string()).status, 0);
  ASSERT_EQ(run(common + (dir / "b").string()).status, 0);
  for (const char* f : {"train.txt", "heldout.txt", "test.txt"}) {
    const auto a = slurp(dir / "a" / f);
    EXPECT_EQ(a, slurp(dir / "b" / f));
    EXPECT_EQ(std::count(a.begin(), a.end(), '\n'), 1);
  }
}

TEST(Cli, EvalPrintsBitsPerToken) {
  const auto dir = scratch_dir();
  const auto g = (dir / "uniform.pcfg").string();
  std::ofstream(g) << "start: S\nS -> 'a' 0.25\nS -> 'b' 0.25\nS -> 'c' 0.25\nS -> 'd' 0.25\n";
  const auto test = (dir / "test.txt").string();
  std::ofstream(test) << "a\nb\nc\nd\n";
  // 4 sentences of probability 1/4 over 8 tokens: 1 bit per token.
  const auto r = run("eval --model " + g + " --test " + test);
  EXPECT_EQ(r.status, 0);
  EXPECT_EQ(r.out, "1.0000\n");
}

TEST(Cli, NgramTrainAndEval) {
  const auto dir = scratch_dir();
  ASSERT_EQ(run("generate --grammar " + english_like_path() +
                " --train-size 200 --heldout-size 50 --test-size 50 --out " + dir.string())
                .status,
            0);
  const auto model = (dir / "bigram.txt").string();
  ASSERT_EQ(run("train-ngram --train " + (dir / "train.txt").string() + " --heldout " +
                (dir / "heldout.txt").string() + " -n 2 --out " + model)
                .status,
            0);
  const auto r = run("eval --verbose --model " + model + " --test " + (dir / "test.txt").string());
  EXPECT_EQ(r.status, 0);
  const auto expected = load_ngram(model).entropy(load_corpus((dir / "test.txt").string()));
  char line[64];
  std::snprintf(line, sizeof line, "%.4f\n", expected.bits_per_token);
  EXPECT_EQ(r.out.rfind(line, 0), 0u) << r.out;
  EXPECT_NE(r.out.find("ngram\t"), std::string::npos);
}

TEST(Cli, InduceThenEvalRoundTrip) {
  const auto dir = scratch_dir();
  ASSERT_EQ(run("generate --grammar " + english_like_path() +
                " --train-size 150 --heldout-size 10 --test-size 30 --out " + dir.string())
                .status,
            0);
  const auto out = (dir / "induced.pcfg").string();
  const auto induce = run("induce --train " + (dir / "train.txt").string() + " --reference " +
                          english_like_path() + " --out " + out);
  ASSERT_EQ(induce.status, 0);
  EXPECT_NE(induce.out.find("\"moves\""), std::string::npos);
  const auto test = load_corpus((dir / "test.txt").string());
  const double direct = pcfg_entropy(load_grammar(out), test).bits_per_token;
  const auto r = run("eval --verbose --model " + out + " --test " + (dir / "test.txt").string());
  ASSERT_EQ(r.status, 0);
  const auto tab = r.out.find('\t');
  ASSERT_NE(tab, std::string::npos);
  EXPECT_NEAR(std::stod(r.out.substr(tab + 1)), direct, 1e-9);
}

TEST(Cli, TrainIoBuildsTheFullRuleSet) {
  const auto dir = scratch_dir();
  const auto train = (dir / "train.txt").string();
  std::ofstream(train) << "a b\nc d\na\n";
  const auto out = (dir / "io.pcfg").string();
  const auto r = run("train-io --train " + train + " -n 3 --lambda 0 --max-iterations 2 --out " + out);
  ASSERT_EQ(r.status, 0);
  EXPECT_EQ(load_grammar(out).num_rules(), 39u);
  EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 3);
  EXPECT_NE(r.out.find("\"loglik\""), std::string::npos);
}

TEST(Cli, ExitCodes) {
  const auto dir = scratch_dir();
  EXPECT_NE(run("").status, 0);
  EXPECT_EQ(run("eval --model " + (dir / "missing").string() + " --test " + (dir / "missing").string())
                .status,
            2);
  const auto train = (dir / "train.txt").string();
  std::ofstream(train) << "a b\n";
  EXPECT_EQ(run("train-io --train " + train + " --out " + (dir / "x.pcfg").string()).status, 2);

  fs::create_directories(dir / "exp" / "models" / "io_2.pcfg");
  const auto exp = run("experiment --quiet --grammar " + english_like_path() +
                       " --train-size 60 --heldout-size 20 --test-size 20 --ngram-orders 1 "
                       "--io-sizes 2 --seeds 1 --induction false --max-iterations 2 --out " +
                       (dir / "exp").string());
  EXPECT_EQ(exp.status, 1);
  EXPECT_NE(exp.out.find("FAILED io"), std::string::npos);
}

}  // namespace
}  // namespace pcfgi
