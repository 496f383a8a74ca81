#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "perturbqe/text.hpp"

namespace pqe {

// What a backend returns for one input text.
struct BackendResult {
  std::string translation;
  std::optional<Tokens> tokens;
  std::optional<std::vector<double>> logprobs;  // log base 2, one per token
};

// Blackbox translator. translate() must be a deterministic function of the
// input text and safe to call from several threads.
class TranslationBackend {
 public:
  virtual ~TranslationBackend() = default;
  virtual std::string backend_id() const = 0;
  virtual bool returns_logprobs() const { return false; }
  virtual std::vector<BackendResult> translate(std::span<const std::string> texts) = 0;
};

struct TranslationRecord {
  std::string source_text;
  std::string translation_text;
  Tokens target_tokens;
  std::optional<std::vector<double>> token_logprobs;
  std::string backend_id;
  std::string cache_key;

  bool operator==(const TranslationRecord&) const = default;
};

void to_json(nlohmann::json& j, const TranslationRecord& r);
void from_json(const nlohmann::json& j, TranslationRecord& r);

std::string cache_key(std::string_view backend_id, std::string_view source_text);

// Content-addressed on-disk store: <dir>/records/<k0k1>/<key>.json plus an
// append-only <dir>/index.jsonl. Records are written via rename, so a reader
// never sees a partial file.
class TranslationCache {
 public:
  explicit TranslationCache(std::filesystem::path dir);

  std::optional<TranslationRecord> get(const std::string& key) const;
  void put(const TranslationRecord& record);
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path record_path(const std::string& key) const;

  std::filesystem::path dir_;
  mutable std::mutex write_mutex_;
};

// Resolves the cache directory: explicit value, then $PERTURBQE_CACHE_DIR,
// then `fallback`.
std::filesystem::path resolve_cache_dir(const std::string& configured,
                                        const std::filesystem::path& fallback);

struct TranslateOptions {
  std::size_t batch_size = 16;
  std::size_t max_attempts = 5;
  std::chrono::milliseconds initial_backoff{200};
  std::size_t max_inflight_batches = 1;
  Segmentation segmentation = Segmentation::Auto;
};

// Cache-first batched translation. Output order follows `sources`; duplicate
// misses reach the backend once.
std::vector<TranslationRecord> translate_batch(std::span<const std::string> sources,
                                               TranslationBackend& backend,
                                               TranslationCache& cache,
                                               const TranslateOptions& options = {});

// Translates `sample` twice and throws BackendError if the outputs differ.
void check_determinism(TranslationBackend& backend, const std::string& sample);

// Wraps a backend and counts translate() calls.
class CountingBackend final : public TranslationBackend {
 public:
  explicit CountingBackend(TranslationBackend& inner) : inner_(inner) {}
  std::string backend_id() const override { return inner_.backend_id(); }
  bool returns_logprobs() const override { return inner_.returns_logprobs(); }
  std::vector<BackendResult> translate(std::span<const std::string> texts) override;

  std::size_t calls() const { return calls_.load(); }
  std::size_t texts() const { return texts_.load(); }

 private:
  TranslationBackend& inner_;
  std::atomic<std::size_t> calls_{0};
  std::atomic<std::size_t> texts_{0};
};

// Speaks the `/translate` protocol of a model adapter.
class HttpBackend final : public TranslationBackend {
 public:
  HttpBackend(std::string endpoint, std::string prompt_template = {},
              std::chrono::seconds timeout = std::chrono::seconds(120), std::string id = {});

  std::string backend_id() const override { return id_; }
  bool returns_logprobs() const override { return saw_logprobs_.load(); }
  std::vector<BackendResult> translate(std::span<const std::string> texts) override;

  static std::string encode_request(std::span<const std::string> texts);
  static std::vector<BackendResult> decode_response(std::string_view body, std::size_t expected);

 private:
  std::string endpoint_;
  std::string prompt_template_;
  std::chrono::seconds timeout_;
  std::string id_;
  std::atomic<bool> saw_logprobs_{false};
};

// Runs a command with one source per input line and reads one translation per
// output line.
class SubprocessBackend final : public TranslationBackend {
 public:
  explicit SubprocessBackend(std::string command, std::string prompt_template = {},
                             std::string id = {});
  std::string backend_id() const override { return id_; }
  std::vector<BackendResult> translate(std::span<const std::string> texts) override;

 private:
  std::string command_;
  std::string prompt_template_;
  std::string id_;
};

// Substitutes `<English_input>` in the template; an empty template is identity.
std::string apply_prompt(std::string_view prompt_template, std::string_view source);

// Target token at `target_position` flips to one of `choices` whenever a token
// at one of `triggers` differs from the template source.
struct FlipRule {
  std::size_t target_position = 0;
  std::vector<std::size_t> triggers;
  Tokens choices;
  // When true the base token stays a possible outcome, so a perturbation may
  // leave the target unchanged.
  bool include_base = false;
};

// Target token at `target_position` becomes prefix + source token + suffix
// whenever the source token at `source_position` is replaced.
struct DirectRule {
  std::size_t source_position = 0;
  std::size_t target_position = 0;
  std::string prefix;
  std::string suffix;
};

struct MockTemplate {
  Tokens source;
  Tokens target;
  std::vector<FlipRule> flips;
  std::vector<DirectRule> directs;
};

void to_json(nlohmann::json& j, const MockTemplate& t);
void from_json(const nlohmann::json& j, MockTemplate& t);

// Deterministic backend whose influencer sets are known by construction.
// Inputs are matched to the template with the same length and the fewest
// differing tokens (first wins on ties).
class MockBackend final : public TranslationBackend {
 public:
  explicit MockBackend(std::vector<MockTemplate> templates, std::string id = "mock");

  static MockBackend load(const std::filesystem::path& path, std::string id = "mock");

  std::string backend_id() const override { return id_; }
  std::vector<BackendResult> translate(std::span<const std::string> texts) override;

  BackendResult translate_one(const std::string& text) const;
  const std::vector<MockTemplate>& templates() const { return templates_; }

 private:
  std::vector<MockTemplate> templates_;
  std::map<std::string, std::size_t> exact_;
  std::map<std::size_t, std::vector<std::size_t>> by_length_;
  std::string id_;
};

std::uint64_t fnv1a(std::string_view data);

// Per-sentence log-base-2 token probabilities, one line per sentence.
std::map<std::string, std::vector<double>> load_logprobs(
    const std::filesystem::path& path, std::span<const std::string> sentence_ids,
    std::span<const Tokens> mt_tokens);

}  // namespace pqe
