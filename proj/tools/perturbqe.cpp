// perturbqe: word-level QE for blackbox MT via source perturbation.
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "CLI11.hpp"

#include "perturbqe/errors.hpp"
#include "perturbqe/pipeline.hpp"

namespace {

struct Overrides {
  std::string config;
  std::optional<std::string> output_dir, cache_dir, logprobs;
  std::optional<std::size_t> n, t, batch_size, concurrency, max_inflight;
  std::optional<double> c, p, threshold;
  std::optional<std::string> target_mode, aligner, provider;
  bool fold_case = false;
  bool skip_errors = false;
  bool no_determinism_check = false;
  bool verbose = false;
  bool quiet = false;

  std::vector<std::size_t> grid_n, grid_t;
  std::vector<double> grid_c, grid_p;
  std::vector<std::string> grid_mode, grid_aligner, grid_provider;
};

void add_common(CLI::App& cmd, Overrides& o) {
  cmd.add_option("--config", o.config, "JSON run configuration")->required();
  cmd.add_option("--output-dir", o.output_dir, "Artifact directory");
  cmd.add_option("--cache-dir", o.cache_dir, "Translation cache (else $PERTURBQE_CACHE_DIR)");
  cmd.add_option("--logprobs", o.logprobs, "Per-token log2 probabilities, one line per sentence");
  cmd.add_option("-n,--n", o.n, "Replacements per source word");
  cmd.add_option("-c,--c", o.c, "Consistency threshold");
  cmd.add_option("-p,--p", o.p, "Direct-outcome threshold");
  cmd.add_option("-t,--t", o.t, "Influence threshold");
  cmd.add_option("--target-mode", o.target_mode, "content_words | all_words | all_tokens");
  cmd.add_option("--aligner", o.aligner, "tercom | levenshtein");
  cmd.add_option("--provider", o.provider, "Replacement provider id");
  cmd.add_option("--batch-size", o.batch_size, "Sources per backend request");
  cmd.add_option("--concurrency", o.concurrency, "Sentence worker threads");
  cmd.add_option("--max-inflight", o.max_inflight, "Backend/provider requests in flight");
  cmd.add_option("--threshold", o.threshold, "Log-prob baseline threshold (log2)");
  cmd.add_flag("--fold-case", o.fold_case, "Compare tokens case-insensitively");
  cmd.add_flag("--skip-errors", o.skip_errors, "Log and exclude failing sentences");
  cmd.add_flag("--no-determinism-check", o.no_determinism_check, "Skip the backend determinism probe");
  cmd.add_flag("-v,--verbose", o.verbose, "Debug logging");
  cmd.add_flag("-q,--quiet", o.quiet, "Only log errors");
}

void add_grid(CLI::App& cmd, Overrides& o) {
  cmd.add_option("--grid-n", o.grid_n, "Grid values for n")->delimiter(',');
  cmd.add_option("--grid-c", o.grid_c, "Grid values for c")->delimiter(',');
  cmd.add_option("--grid-p", o.grid_p, "Grid values for p")->delimiter(',');
  cmd.add_option("--grid-t", o.grid_t, "Grid values for t")->delimiter(',');
  cmd.add_option("--grid-target-mode", o.grid_mode, "Grid values for the target mode")->delimiter(',');
  cmd.add_option("--grid-aligner", o.grid_aligner, "Grid values for the aligner")->delimiter(',');
  cmd.add_option("--grid-provider", o.grid_provider, "Grid values for the provider id")->delimiter(',');
}

pqe::RunConfig build_config(const Overrides& o) {
  pqe::RunConfig config = pqe::load_config(o.config);
  try {
    if (o.output_dir) config.output_dir = *o.output_dir;
    if (o.cache_dir) config.cache_dir = *o.cache_dir;
    if (o.logprobs) config.logprobs = *o.logprobs;
    if (o.n) config.hp.n = *o.n;
    if (o.c) config.hp.c = *o.c;
    if (o.p) config.hp.p = *o.p;
    if (o.t) config.hp.t = *o.t;
    if (o.target_mode) config.hp.target_mode = pqe::target_mode_from_string(*o.target_mode);
    if (o.aligner) config.hp.aligner = pqe::aligner_from_string(*o.aligner);
    if (o.provider) config.hp.provider_id = *o.provider;
    if (o.batch_size) config.batch_size = *o.batch_size;
    if (o.concurrency) config.concurrency = *o.concurrency;
    if (o.max_inflight) config.max_inflight_requests = *o.max_inflight;
    if (o.threshold) config.logprob_threshold = *o.threshold;
    if (o.fold_case) config.fold_case = true;
    if (o.skip_errors) config.skip_errors = true;
    if (o.no_determinism_check) config.determinism_check = false;

    const bool any_grid = !o.grid_n.empty() || !o.grid_c.empty() || !o.grid_p.empty() || !o.grid_t.empty() ||
                          !o.grid_mode.empty() || !o.grid_aligner.empty() || !o.grid_provider.empty();
    if (any_grid) {
      pqe::HyperparameterGrid grid = config.grid.value_or(pqe::HyperparameterGrid{});
      if (!o.grid_n.empty()) grid.n = o.grid_n;
      if (!o.grid_c.empty()) grid.c = o.grid_c;
      if (!o.grid_p.empty()) grid.p = o.grid_p;
      if (!o.grid_t.empty()) grid.t = o.grid_t;
      if (!o.grid_mode.empty()) {
        grid.target_mode.clear();
        for (const auto& m : o.grid_mode) grid.target_mode.push_back(pqe::target_mode_from_string(m));
      }
      if (!o.grid_aligner.empty()) {
        grid.aligner.clear();
        for (const auto& a : o.grid_aligner) grid.aligner.push_back(pqe::aligner_from_string(a));
      }
      if (!o.grid_provider.empty()) grid.provider_id = o.grid_provider;
      config.grid = grid;
    }
  } catch (const pqe::InvalidInput& e) {
    throw pqe::ConfigError(e.what());
  }
  return config;
}

void print_metrics(const char* title, const pqe::Metrics& m) {
  std::printf("%s: MCC %.4f (tp=%zu tn=%zu fp=%zu fn=%zu, %zu sentences)\n", title, m.mcc, m.counts.tp,
              m.counts.tn, m.counts.fp, m.counts.fn, m.scored_sentences);
  if (m.targeted) {
    std::printf("%s: targeted recall %.4f, precision %.4f\n", title, m.targeted->recall, m.targeted->precision);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Word-level quality estimation for blackbox machine translation"};
  app.set_version_flag("--version", std::string(pqe::kVersion));
  app.require_subcommand(1);

  Overrides o;
  struct Command {
    const char* name;
    const char* help;
  };
  const std::vector<Command> commands{
      {"run", "Run every stage end to end"},
      {"perturb", "Select source words and generate replacements"},
      {"translate", "Translate the original and perturbed sources (cache-first)"},
      {"align", "Align perturbed translations to the MT output"},
      {"predict", "Classify cells and write OK/BAD predictions"},
      {"explain", "Write JSON and HTML influence explanations"},
      {"evaluate", "Score predictions against gold tags"},
      {"tune", "Grid-search hyperparameters on dev data"},
      {"baseline-logprob", "Log-probability threshold baseline"},
  };
  for (const auto& c : commands) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    add_common(*sub, o);
    if (std::string(c.name) == "tune") add_grid(*sub, o);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  spdlog::set_level(o.quiet ? spdlog::level::err : o.verbose ? spdlog::level::debug : spdlog::level::info);
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    pqe::Pipeline pipeline = pqe::Pipeline::from_config(build_config(o));
    if (command == "run") {
      const auto summary = pipeline.run();
      std::printf("sentences: %zu, skipped: %zu, backend calls: %zu\n", summary.sentences,
                  summary.skipped.size(), summary.backend_calls);
      if (summary.metrics) print_metrics("perturbation QE", *summary.metrics);
      std::printf("artifacts: %s\n", pipeline.config().output_dir.string().c_str());
    } else if (command == "perturb") {
      pipeline.perturb();
    } else if (command == "translate") {
      pipeline.translate();
      std::printf("backend calls: %zu\n", pipeline.backend_calls());
    } else if (command == "align") {
      pipeline.align();
    } else if (command == "predict") {
      pipeline.predict();
    } else if (command == "explain") {
      pipeline.explain();
    } else if (command == "evaluate") {
      if (auto m = pipeline.evaluate()) print_metrics("perturbation QE", *m);
      else std::printf("no gold tags; nothing to evaluate\n");
    } else if (command == "tune") {
      const auto result = pipeline.tune();
      const auto& hp = result.best;
      std::printf("best: n=%zu c=%g p=%g t=%zu target_mode=%s aligner=%s provider=%s MCC %.4f (%zu configs)\n",
                  hp.n, hp.c, hp.p, hp.t, pqe::to_string(hp.target_mode).c_str(),
                  pqe::to_string(hp.aligner).c_str(), hp.provider_id.c_str(), result.best_mcc,
                  result.leaderboard.size());
      std::printf("backend calls: %zu\n", pipeline.backend_calls());
    } else if (command == "baseline-logprob") {
      if (auto m = pipeline.baseline_logprob()) print_metrics("log-prob baseline", *m);
    }
  } catch (const pqe::Error& e) {
    spdlog::error("{}", e.what());
    return e.exit_code();
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
