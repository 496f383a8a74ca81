#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "perturbqe/data_io.hpp"
#include "perturbqe/evaluation.hpp"
#include "perturbqe/mt_client.hpp"
#include "perturbqe/perturbation.hpp"
#include "perturbqe/qe_core.hpp"

namespace pqe {

inline constexpr const char* kVersion = "0.3.0";

struct BackendSpec {
  std::string kind = "mock";  // mock | http | subprocess
  std::string endpoint;
  std::string command;
  std::string prompt_template;
  std::string mock_rules;     // JSON file of MockTemplate records
  std::string id;             // defaults to a value derived from kind and endpoint
  int timeout_s = 120;
};

struct ProviderSpec {
  std::string kind = "lexicon";  // lexicon | remote
  std::string fixture;
  std::string endpoint;
  int timeout_s = 120;
};

struct RunConfig {
  DatasetPaths dataset;
  std::optional<std::filesystem::path> logprobs;
  BackendSpec backend;
  // Keyed by provider id; hp.provider_id selects the one used by `run`.
  std::map<std::string, ProviderSpec> providers;
  Hyperparameters hp;
  std::optional<HyperparameterGrid> grid;
  std::string cache_dir;
  std::filesystem::path output_dir = "out";
  std::size_t concurrency = 4;
  std::size_t max_inflight_requests = 4;
  std::size_t batch_size = 16;
  bool fold_case = false;
  bool skip_errors = false;
  bool determinism_check = true;
  double logprob_threshold = default_logprob_threshold();

  // Throws ConfigError for missing files, unknown kinds or bad thresholds.
  void validate() const;
  ComparisonPolicy policy() const { return {fold_case}; }
};

// Relative paths inside the document are resolved against `base_dir`.
RunConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
nlohmann::json config_to_json(const RunConfig& config);
RunConfig load_config(const std::filesystem::path& path);

// Artifact file names inside the output directory.
namespace artifacts {
inline constexpr const char* kPerturbations = "perturbations.jsonl";
inline constexpr const char* kTranslations = "translations.jsonl";
inline constexpr const char* kAlignments = "alignments.jsonl";
inline constexpr const char* kPredictions = "predictions.txt";
inline constexpr const char* kVerdicts = "verdicts.jsonl";
inline constexpr const char* kExplanationsJson = "explanations.jsonl";
inline constexpr const char* kExplanationsHtml = "explanations.html";
inline constexpr const char* kMetrics = "metrics.json";
inline constexpr const char* kLeaderboard = "leaderboard.jsonl";
inline constexpr const char* kBestHyperparameters = "best_hyperparameters.json";
inline constexpr const char* kBaselinePredictions = "baseline_predictions.txt";
inline constexpr const char* kBaselineMetrics = "baseline_metrics.json";
inline constexpr const char* kManifest = "manifest.json";
}  // namespace artifacts

struct SentencePerturbations {
  std::string sentence_id;
  Tokens source_tokens;
  std::vector<PerturbationSet> sets;
  std::optional<std::string> error;  // set when skipped under --skip-errors
};

struct TranslatedRow {
  std::size_t source_index = 0;
  Tokens replacements;
  std::vector<Tokens> translations;  // one per replacement, normalized
};

struct SentenceTranslations {
  std::string sentence_id;
  Tokens source_tokens;
  Tokens mt_tokens;                  // columns, normalized
  Tokens original_translation;       // backend output for the unperturbed source
  std::vector<TranslatedRow> rows;
  std::optional<std::string> error;
};

struct SentenceAlignments {
  std::string sentence_id;
  Tokens source_tokens;
  Tokens mt_tokens;
  std::vector<PerturbedRow> rows;
  std::vector<std::vector<std::size_t>> dropped;  // per row, per variant
  std::optional<std::string> error;
};

struct Metrics {
  ConfusionCounts counts;
  double mcc = 0.0;
  std::optional<TargetedScores> targeted;
  std::size_t scored_sentences = 0;
};

nlohmann::json metrics_to_json(const Metrics& m);

struct RunSummary {
  std::size_t sentences = 0;
  std::vector<std::string> skipped;
  std::size_t backend_calls = 0;
  std::optional<Metrics> metrics;
};

// End-to-end pipeline. Every stage reads the previous stage's artifact from
// the output directory, so stages can be re-run independently and `run` is
// their composition.
class Pipeline {
 public:
  using ProviderMap = std::map<std::string, std::shared_ptr<const ReplacementProvider>>;

  Pipeline(RunConfig config, std::shared_ptr<TranslationBackend> backend, ProviderMap providers,
           std::shared_ptr<const PosTagger> tagger = nullptr);

  // Instantiates the backend and providers named by the config.
  static Pipeline from_config(RunConfig config);

  void perturb();
  void translate();
  void align();
  void predict();
  void explain();
  std::optional<Metrics> evaluate();
  GridSearchResult tune();
  std::optional<Metrics> baseline_logprob();
  RunSummary run();

  std::size_t backend_calls() const { return counting_->calls(); }
  const RunConfig& config() const { return config_; }
  const QEDataset& dataset();

  // In-memory stage bodies, shared by the file-based stages and by `tune`.
  std::vector<SentencePerturbations> compute_perturbations(TargetMode mode,
                                                           const std::string& provider_id,
                                                           std::size_t n);
  std::vector<SentenceTranslations> compute_translations(
      const std::vector<SentencePerturbations>& perturbations);
  std::vector<SentenceAlignments> compute_alignments(
      const std::vector<SentenceTranslations>& translations, AlignerKind aligner) const;

 private:
  std::filesystem::path out(const char* name) const { return config_.output_dir / name; }
  const ReplacementProvider& provider(const std::string& id) const;
  void record_timing(const std::string& stage, std::chrono::steady_clock::duration d);
  void write_manifest() const;
  TranslateOptions translate_options() const;

  RunConfig config_;
  std::shared_ptr<TranslationBackend> backend_;
  std::unique_ptr<CountingBackend> counting_;
  ProviderMap providers_;
  std::shared_ptr<const PosTagger> tagger_;
  std::unique_ptr<TranslationCache> cache_;
  std::optional<QEDataset> dataset_;
  std::map<std::string, double> timings_ms_;
  std::set<std::string> skipped_;
};

// JSON forms of the stage artifacts (one object per line).
nlohmann::json to_json(const SentencePerturbations& s);
SentencePerturbations perturbations_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SentenceTranslations& s);
SentenceTranslations translations_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SentenceAlignments& s);
SentenceAlignments alignments_from_json(const nlohmann::json& j);

}  // namespace pqe
