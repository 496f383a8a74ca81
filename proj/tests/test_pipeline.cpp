#include "doctest.h"

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <iomanip>
#include <sstream>

#include "perturbqe/data_io.hpp"
#include "perturbqe/errors.hpp"
#include "perturbqe/pipeline.hpp"
#include "support.hpp"

using namespace pqe;
using namespace pqe::testing;
namespace fs = std::filesystem;

namespace {

// Writes a copy of the corpus config with `patch` merged in.
fs::path patched_config(const PlantedCorpus& corpus, const nlohmann::json& patch, const std::string& name) {
  auto j = nlohmann::json::parse(slurp(corpus.config));
  j.merge_patch(patch);
  const auto path = corpus.dir / name;
  write_text_file(path, j.dump(2));
  return path;
}

PlantedOptions small(std::size_t sentences = 20) {
  PlantedOptions o;
  o.sentences = sentences;
  o.n = 6;
  return o;
}

int run_cli(const std::string& args) {
  const std::string command = std::string(PQE_CLI_PATH) + " " + args + " -q > /dev/null 2>&1";
  const int status = std::system(command.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("planted corpus: run recovers every planted BAD token") {
  TempDir tmp;
  const auto corpus = make_planted_corpus(tmp.path(), small());
  auto pipeline = Pipeline::from_config(load_config(corpus.config));
  const auto summary = pipeline.run();
  CHECK(summary.sentences == 20);
  CHECK(summary.skipped.empty());
  REQUIRE(summary.metrics);
  CHECK(summary.metrics->mcc == doctest::Approx(1.0));
  REQUIRE(summary.metrics->targeted);
  CHECK(summary.metrics->targeted->recall == 1.0);
  CHECK(summary.metrics->targeted->precision == 1.0);

  const auto out = tmp.path() / "out";
  const auto predictions = read_predictions(out / artifacts::kPredictions);
  REQUIRE(predictions.size() == 20);
  for (std::size_t s = 0; s < predictions.size(); ++s) {
    for (std::size_t j = 0; j < predictions[s].size(); ++j) {
      CHECK((predictions[s][j] == QualityLabel::BAD) == (corpus.influence[s][j] > 2));
    }
  }
  for (const char* name : {artifacts::kPerturbations, artifacts::kTranslations, artifacts::kAlignments,
                           artifacts::kVerdicts, artifacts::kExplanationsJson, artifacts::kExplanationsHtml,
                           artifacts::kMetrics, artifacts::kManifest}) {
    CHECK_MESSAGE(fs::exists(out / name), name);
  }
}

TEST_CASE("explanations name exactly the planted influencers") {
  TempDir tmp;
  const auto corpus = make_planted_corpus(tmp.path(), small(10));
  Pipeline::from_config(load_config(corpus.config)).run();
  const auto records = read_explanations(tmp.path() / "out" / artifacts::kExplanationsJson);
  REQUIRE(records.size() == 10);
  for (std::size_t s = 0; s < records.size(); ++s) {
    for (const auto& token : records[s].tokens) {
      std::set<std::size_t> named;
      for (const auto& inf : token.influencers) named.insert(inf.source_index);
      CHECK(named == corpus.influencers[s][token.index]);
    }
  }
}

TEST_CASE("run equals the composition of the individual stages") {
  TempDir tmp;
  const auto corpus = make_planted_corpus(tmp.path(), small(8));
  const auto staged = patched_config(corpus, {{"output_dir", "staged"}}, "staged.json");
  Pipeline::from_config(load_config(corpus.config)).run();
  {
    auto p = Pipeline::from_config(load_config(staged));
    p.perturb();
    p.translate();
    p.align();
    p.predict();
    p.explain();
    p.evaluate();
  }
  // Each stage also works from a fresh process reading only the artifacts.
  auto again = Pipeline::from_config(load_config(staged));
  again.predict();
  for (const char* name : {artifacts::kPredictions, artifacts::kVerdicts, artifacts::kExplanationsJson,
                           artifacts::kExplanationsHtml, artifacts::kMetrics}) {
    CHECK_MESSAGE(slurp(tmp.path() / "out" / name) == slurp(tmp.path() / "staged" / name), name);
  }
}

TEST_CASE("a warm cache makes no backend calls") {
  TempDir tmp;
  const auto corpus = make_planted_corpus(tmp.path(), small(8));
  auto first = Pipeline::from_config(load_config(corpus.config));
  first.run();
  CHECK(first.backend_calls() > 0);
  const auto predictions = slurp(tmp.path() / "out" / artifacts::kPredictions);
  auto second = Pipeline::from_config(load_config(corpus.config));
  second.run();
  CHECK(second.backend_calls() == 0);
  CHECK(slurp(tmp.path() / "out" / artifacts::kPredictions) == predictions);
}

TEST_CASE("a zero-sentence dataset yields empty artifacts") {
  TempDir tmp;
  write_text_file(tmp / "src.txt", "");
  write_text_file(tmp / "mt.txt", "");
  write_text_file(tmp / "mock.json", "[]");
  write_text_file(tmp / "lex.tsv", "");
  write_text_file(tmp / "config.json", R"({
    "dataset": {"src": "src.txt", "mt": "mt.txt"},
    "backend": {"kind": "mock", "mock_rules": "mock.json"},
    "provider": {"id": "lex", "kind": "lexicon", "fixture": "lex.tsv"},
    "hyperparameters": {"target_mode": "all_words", "provider_id": "lex"}
  })");
  auto p = Pipeline::from_config(load_config(tmp / "config.json"));
  const auto summary = p.run();
  CHECK(summary.sentences == 0);
  CHECK(p.backend_calls() == 0);
  CHECK_FALSE(summary.metrics);
  CHECK(slurp(tmp / "out/predictions.txt").empty());
  CHECK(slurp(tmp / "out/explanations.html").find("No sentences.") != std::string::npos);
}

TEST_CASE("configuration errors") {
  TempDir tmp;
  const auto corpus = make_planted_corpus(tmp.path(), small(2));
  CHECK_THROWS_AS(load_config(tmp / "absent.json"), ConfigError);
  CHECK_THROWS_AS(load_config(patched_config(corpus, {{"colour", "blue"}}, "a.json")), ConfigError);
  CHECK_THROWS_AS(load_config(patched_config(corpus, {{"backend", {{"kind", "carrier-pigeon"}}}}, "b.json")),
                  ConfigError);
  CHECK_THROWS_AS(load_config(patched_config(corpus, {{"dataset", {{"src", "nope.txt"}}}}, "c.json")),
                  ConfigError);
  CHECK_THROWS_AS(load_config(patched_config(corpus, {{"hyperparameters", {{"c", 2.0}}}}, "d.json")),
                  ConfigError);
  CHECK_THROWS_AS(load_config(patched_config(corpus, {{"hyperparameters", {{"provider_id", "bert"}}}}, "e.json")),
                  ConfigError);
  write_text_file(tmp / "broken.json", "{not json");
  CHECK_THROWS_AS(load_config(tmp / "broken.json"), ConfigError);

  const auto config = load_config(corpus.config);
  CHECK(config.dataset.src == tmp.path() / "src.txt");
  CHECK(config.hp.n == 6);
  const auto round = config_from_json(config_to_json(config));
  CHECK(config_to_json(round) == config_to_json(config));
}

TEST_CASE("skip-errors records a failing sentence and keeps going") {
  TempDir tmp;
  const auto corpus = make_planted_corpus(tmp.path(), small(4));
  // Lengthen source sentence 2 past every mock template so it cannot be translated.
  auto lines = read_lines(tmp / "src.txt");
  for (int k = 0; k < 12; ++k) lines[2] += " extra";
  std::string src;
  for (const auto& line : lines) src += line + "\n";
  write_text_file(tmp / "src.txt", src);

  CHECK_THROWS_AS(Pipeline::from_config(load_config(corpus.config)).run(), BackendError);

  const auto skipping = patched_config(corpus, {{"skip_errors", true}, {"output_dir", "skip"}}, "skip.json");
  const auto summary = Pipeline::from_config(load_config(skipping)).run();
  CHECK(summary.skipped == std::vector<std::string>{"2"});
  const auto predictions = read_lines(tmp / "skip" / artifacts::kPredictions);
  REQUIRE(predictions.size() == 4);
  CHECK(predictions[2].empty());
  CHECK_FALSE(predictions[1].empty());
  REQUIRE(summary.metrics);
  CHECK(summary.metrics->scored_sentences == 3);
  const auto manifest = nlohmann::json::parse(slurp(tmp / "skip" / artifacts::kManifest));
  CHECK(manifest.at("skipped_sentences").size() == 1);
}

TEST_CASE("tune recovers the planted threshold") {
  TempDir tmp;
  const auto corpus = make_planted_corpus(tmp.path(), small(12));
  const auto tuned = patched_config(
      corpus, {{"grid", {{"t", {0, 1, 2, 3, 4, 5}}, {"c", {0.8, 0.95}}, {"p", {0.8, 0.9}}}}}, "tune.json");
  auto p = Pipeline::from_config(load_config(tuned));
  const auto result = p.tune();
  CHECK(result.best.t == 2);
  CHECK(result.best_mcc == doctest::Approx(1.0));
  CHECK(result.leaderboard.size() == 24);
  CHECK(fs::exists(tmp / "out" / artifacts::kLeaderboard));
  const auto best = nlohmann::json::parse(slurp(tmp / "out" / artifacts::kBestHyperparameters));
  CHECK(best.at("t") == 2);
}

TEST_CASE("log-prob baseline from a file") {
  TempDir tmp;
  write_text_file(tmp / "src.txt", "a b\n");
  write_text_file(tmp / "mt.txt", "A B C\n");
  write_text_file(tmp / "tags.txt", "OK BAD BAD\n");
  std::ostringstream lp;
  lp << std::setprecision(17) << -0.1 << ' ' << std::log2(0.45) << ' ' << -3.0 << '\n';
  write_text_file(tmp / "lp.txt", lp.str());
  write_text_file(tmp / "mock.json", "[]");
  write_text_file(tmp / "lex.tsv", "");
  write_text_file(tmp / "config.json", R"({
    "dataset": {"src": "src.txt", "mt": "mt.txt", "tags": "tags.txt"},
    "logprobs": "lp.txt",
    "backend": {"kind": "mock", "mock_rules": "mock.json"},
    "provider": {"id": "lex", "kind": "lexicon", "fixture": "lex.tsv"},
    "hyperparameters": {"provider_id": "lex"}
  })");
  auto p = Pipeline::from_config(load_config(tmp / "config.json"));
  const auto metrics = p.baseline_logprob();
  REQUIRE(metrics);
  CHECK(read_lines(tmp / "out" / artifacts::kBaselinePredictions) == std::vector<std::string>{"OK BAD BAD"});
  CHECK(metrics->mcc == doctest::Approx(1.0));
}

TEST_CASE("command line exit codes") {
  TempDir tmp;
  const auto corpus = make_planted_corpus(tmp.path(), small(3));
  CHECK(run_cli("run --config " + corpus.config.string()) == 0);
  CHECK(fs::exists(tmp / "out" / artifacts::kPredictions));
  CHECK(run_cli("evaluate --config " + corpus.config.string()) == 0);
  CHECK(run_cli("predict --config " + corpus.config.string() + " -t 0 --output-dir " + (tmp / "t0").string()) == 4);
  CHECK(run_cli("run --config " + (tmp / "absent.json").string()) == 2);
  CHECK(run_cli("run") == 2);
  write_text_file(tmp / "mt.txt", "only one line\n");
  CHECK(run_cli("run --config " + corpus.config.string()) == 4);
}
