#include "perturbqe/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <semaphore>
#include <thread>
#include <tuple>

#include <spdlog/spdlog.h>

#include "perturbqe/alignment.hpp"
#include "perturbqe/errors.hpp"

namespace pqe {

namespace {

using json = nlohmann::json;

// Rethrows the in-flight exception with `context` prepended, keeping its type
// so the CLI exit code is unchanged.
[[noreturn]] void rethrow_in_context(const std::string& context) {
  try {
    throw;
  } catch (const ProtocolError& e) {
    throw ProtocolError(context + e.what());
  } catch (const ProviderError& e) {
    throw ProviderError(context + e.what(), e.transient());
  } catch (const BackendError& e) {
    throw BackendError(context + e.what(), e.transient());
  } catch (const MissingTags& e) {
    throw MissingTags(context + e.what());
  } catch (const DataError& e) {
    throw DataError(context + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError(context + e.what());
  } catch (const InvalidInput& e) {
    throw InvalidInput(context + e.what());
  } catch (const InternalError& e) {
    throw InternalError(context + e.what());
  } catch (const Error& e) {
    throw Error(context + e.what());
  } catch (const std::exception& e) {
    throw InternalError(context + e.what());
  }
}

std::string context_of(std::string_view stage, std::string_view sentence_id) {
  return "[" + std::string(stage) + "] sentence " + std::string(sentence_id) + ": ";
}

// Runs fn(i) for i in [0, count) on up to `workers` threads. The first
// exception is rethrown after all workers stop.
template <typename Fn>
void parallel_for(std::size_t count, std::size_t workers, Fn&& fn) {
  workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(count, 1));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < count && !failed; i = next++) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(error_mutex);
            if (!error) error = std::current_exception();
            failed = true;
          }
        }
      });
    }
  }
  if (error) std::rethrow_exception(error);
}

// Caps the number of provider requests in flight across sentence workers.
class ThrottledProvider final : public ReplacementProvider {
 public:
  ThrottledProvider(const ReplacementProvider& inner, std::size_t limit)
      : inner_(inner), slots_(static_cast<std::ptrdiff_t>(std::clamp<std::size_t>(limit, 1, 1024))) {}

  Tokens candidates(std::span<const std::string> tokens, std::size_t mask_index,
                    std::size_t n) const override {
    slots_.acquire();
    try {
      Tokens out = inner_.candidates(tokens, mask_index, n);
      slots_.release();
      return out;
    } catch (...) {
      slots_.release();
      throw;
    }
  }

 private:
  const ReplacementProvider& inner_;
  mutable std::counting_semaphore<1024> slots_;
};

template <typename T, typename Parse>
std::vector<T> read_jsonl(const std::filesystem::path& path, Parse parse) {
  if (!std::filesystem::exists(path)) {
    throw DataError("missing artifact " + path.string() + " (run the previous stage first)");
  }
  std::vector<T> out;
  std::size_t line_no = 0;
  for (const auto& line : read_lines(path)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(parse(json::parse(line)));
    } catch (const json::exception& e) {
      throw DataError(path.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

template <typename T>
void write_jsonl(const std::vector<T>& items, const std::filesystem::path& path) {
  std::string content;
  for (const auto& item : items) content += to_json(item).dump() + "\n";
  write_text_file(path, content);
}

json projected_json(const ProjectedToken& t) { return t ? json(*t) : json(nullptr); }

ProjectedToken projected_from_json(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<std::string>();
}

// One line of verdicts.jsonl.
struct SentenceVerdicts {
  std::string sentence_id;
  std::vector<WordVerdict> verdicts;
  std::vector<std::size_t> dropped_rows;
  std::optional<std::string> error;
};

json to_json(const SentenceVerdicts& s) {
  json verdicts = json::array();
  for (const auto& v : s.verdicts) {
    json influencers = json::array();
    for (const auto& inf : v.influencers) {
      json variants = json::array();
      for (const auto& vc : inf.variants) {
        variants.push_back({{"token", projected_json(vc.token)}, {"count", vc.count}});
      }
      influencers.push_back({{"source_index", inf.source_index}, {"variants", std::move(variants)}});
    }
    verdicts.push_back({{"target_index", v.target_index},
                        {"label", to_string(v.label)},
                        {"influence_count", v.influence_count},
                        {"influencers", std::move(influencers)}});
  }
  json j{{"sentence_id", s.sentence_id}, {"verdicts", std::move(verdicts)}, {"dropped_rows", s.dropped_rows}};
  if (s.error) j["error"] = *s.error;
  return j;
}

SentenceVerdicts verdicts_from_json(const json& j) {
  SentenceVerdicts s;
  s.sentence_id = j.at("sentence_id").get<std::string>();
  s.dropped_rows = j.at("dropped_rows").get<std::vector<std::size_t>>();
  if (j.contains("error")) s.error = j.at("error").get<std::string>();
  for (const auto& v : j.at("verdicts")) {
    WordVerdict w;
    w.target_index = v.at("target_index").get<std::size_t>();
    w.label = quality_label_from_string(v.at("label").get<std::string>());
    w.influence_count = v.at("influence_count").get<std::size_t>();
    for (const auto& inf : v.at("influencers")) {
      Influencer i;
      i.source_index = inf.at("source_index").get<std::size_t>();
      for (const auto& vc : inf.at("variants")) {
        i.variants.push_back({projected_from_json(vc.at("token")), vc.at("count").get<std::size_t>()});
      }
      w.influencers.push_back(std::move(i));
    }
    s.verdicts.push_back(std::move(w));
  }
  return s;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& value) {
  if (value.empty()) return {};
  std::filesystem::path p(value);
  return p.is_relative() && !base.empty() ? base / p : p;
}

void check_keys(const json& j, std::initializer_list<std::string_view> allowed, std::string_view where) {
  if (!j.is_object()) throw ConfigError(std::string(where) + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError("unknown key '" + key + "' in " + std::string(where));
    }
  }
}

ProviderSpec provider_from_json(const json& j, const std::filesystem::path& base) {
  check_keys(j, {"kind", "fixture", "endpoint", "timeout_s", "id"}, "provider");
  ProviderSpec spec;
  spec.kind = j.value("kind", spec.kind);
  spec.fixture = resolve(base, j.value("fixture", std::string{})).string();
  spec.endpoint = j.value("endpoint", std::string{});
  spec.timeout_s = j.value("timeout_s", spec.timeout_s);
  return spec;
}

json provider_to_json(const ProviderSpec& p) {
  return {{"kind", p.kind}, {"fixture", p.fixture}, {"endpoint", p.endpoint}, {"timeout_s", p.timeout_s}};
}

void require_file(const std::filesystem::path& path, std::string_view what) {
  if (path.empty()) throw ConfigError(std::string(what) + " is not set");
  if (!std::filesystem::is_regular_file(path)) {
    throw ConfigError(std::string(what) + " not found: " + path.string());
  }
}

}  // namespace

// ---- config ---------------------------------------------------------------

void RunConfig::validate() const {
  require_file(dataset.src, "dataset.src");
  require_file(dataset.mt, "dataset.mt");
  if (dataset.tags) require_file(*dataset.tags, "dataset.tags");
  if (dataset.mask) require_file(*dataset.mask, "dataset.mask");
  if (dataset.pos) require_file(*dataset.pos, "dataset.pos");
  if (logprobs) require_file(*logprobs, "logprobs");

  if (backend.kind == "mock") {
    require_file(backend.mock_rules, "backend.mock_rules");
  } else if (backend.kind == "http") {
    if (backend.endpoint.empty()) throw ConfigError("backend.endpoint is required for http backends");
  } else if (backend.kind == "subprocess") {
    if (backend.command.empty()) throw ConfigError("backend.command is required for subprocess backends");
  } else {
    throw ConfigError("unknown backend kind '" + backend.kind + "' (expected mock, http or subprocess)");
  }
  if (backend.timeout_s <= 0) throw ConfigError("backend.timeout_s must be positive");

  if (providers.empty()) throw ConfigError("no replacement provider configured");
  for (const auto& [id, spec] : providers) {
    if (spec.kind == "lexicon") {
      require_file(spec.fixture, "provider '" + id + "' fixture");
    } else if (spec.kind == "remote") {
      if (spec.endpoint.empty()) throw ConfigError("provider '" + id + "' needs an endpoint");
    } else {
      throw ConfigError("provider '" + id + "' has unknown kind '" + spec.kind + "' (expected lexicon or remote)");
    }
  }
  if (!providers.contains(hp.provider_id)) {
    throw ConfigError("hyperparameters.provider_id '" + hp.provider_id + "' names no configured provider");
  }
  try {
    hp.validate();
  } catch (const InvalidInput& e) {
    throw ConfigError(e.what());
  }
  if (grid) {
    for (const auto& id : grid->provider_id) {
      if (!providers.contains(id)) throw ConfigError("grid provider_id '" + id + "' names no configured provider");
    }
    for (double c : grid->c) {
      if (!(c >= 0.0 && c <= 1.0)) throw ConfigError("grid c values must lie in [0, 1]");
    }
    for (double p : grid->p) {
      if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("grid p values must lie in [0, 1]");
    }
    for (std::size_t n : grid->n) {
      if (n == 0) throw ConfigError("grid n values must be positive");
    }
  }
  if (concurrency == 0) throw ConfigError("concurrency must be at least 1");
  if (max_inflight_requests == 0) throw ConfigError("max_inflight_requests must be at least 1");
  if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
}

RunConfig config_from_json(const json& j, const std::filesystem::path& base_dir) {
  RunConfig config;
  try {
    check_keys(j,
               {"dataset", "logprobs", "backend", "provider", "providers", "hyperparameters", "grid",
                "cache_dir", "output_dir", "concurrency", "max_inflight_requests", "batch_size",
                "fold_case", "skip_errors", "determinism_check", "logprob_threshold"},
               "config");
    if (j.contains("dataset")) {
      const auto& d = j.at("dataset");
      check_keys(d, {"src", "mt", "tags", "mask", "pos", "mt_pretokenized", "segmentation"}, "dataset");
      config.dataset.src = resolve(base_dir, d.value("src", std::string{}));
      config.dataset.mt = resolve(base_dir, d.value("mt", std::string{}));
      if (d.contains("tags") && !d.at("tags").is_null()) config.dataset.tags = resolve(base_dir, d.at("tags").get<std::string>());
      if (d.contains("mask") && !d.at("mask").is_null()) config.dataset.mask = resolve(base_dir, d.at("mask").get<std::string>());
      if (d.contains("pos") && !d.at("pos").is_null()) config.dataset.pos = resolve(base_dir, d.at("pos").get<std::string>());
      config.dataset.mt_pretokenized = d.value("mt_pretokenized", false);
      if (d.contains("segmentation")) {
        config.dataset.segmentation = segmentation_from_string(d.at("segmentation").get<std::string>());
      }
    }
    if (j.contains("logprobs") && !j.at("logprobs").is_null()) {
      config.logprobs = resolve(base_dir, j.at("logprobs").get<std::string>());
    }
    if (j.contains("backend")) {
      const auto& b = j.at("backend");
      check_keys(b, {"kind", "endpoint", "command", "prompt_template", "mock_rules", "id", "timeout_s"}, "backend");
      config.backend.kind = b.value("kind", config.backend.kind);
      config.backend.endpoint = b.value("endpoint", std::string{});
      config.backend.command = b.value("command", std::string{});
      config.backend.prompt_template = b.value("prompt_template", std::string{});
      config.backend.mock_rules = resolve(base_dir, b.value("mock_rules", std::string{})).string();
      config.backend.id = b.value("id", std::string{});
      config.backend.timeout_s = b.value("timeout_s", config.backend.timeout_s);
    }
    if (j.contains("provider")) {
      const auto& p = j.at("provider");
      config.providers[p.value("id", std::string("roberta"))] = provider_from_json(p, base_dir);
    }
    if (j.contains("providers")) {
      for (const auto& [id, p] : j.at("providers").items()) config.providers[id] = provider_from_json(p, base_dir);
    }
    if (j.contains("hyperparameters")) config.hp = j.at("hyperparameters").get<Hyperparameters>();
    // With a single provider, an unset provider_id means that provider.
    const bool explicit_provider = j.contains("hyperparameters") && j.at("hyperparameters").contains("provider_id");
    if (!explicit_provider && config.providers.size() == 1) config.hp.provider_id = config.providers.begin()->first;
    if (j.contains("grid") && !j.at("grid").is_null()) config.grid = j.at("grid").get<HyperparameterGrid>();
    config.cache_dir = resolve(base_dir, j.value("cache_dir", std::string{})).string();
    config.output_dir = resolve(base_dir, j.value("output_dir", config.output_dir.string()));
    config.concurrency = j.value("concurrency", config.concurrency);
    config.max_inflight_requests = j.value("max_inflight_requests", config.max_inflight_requests);
    config.batch_size = j.value("batch_size", config.batch_size);
    config.fold_case = j.value("fold_case", config.fold_case);
    config.skip_errors = j.value("skip_errors", config.skip_errors);
    config.determinism_check = j.value("determinism_check", config.determinism_check);
    config.logprob_threshold = j.value("logprob_threshold", config.logprob_threshold);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  } catch (const InvalidInput& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  } catch (const DataError& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  return config;
}

json config_to_json(const RunConfig& c) {
  json dataset{{"src", c.dataset.src.string()},
               {"mt", c.dataset.mt.string()},
               {"mt_pretokenized", c.dataset.mt_pretokenized},
               {"segmentation", to_string(c.dataset.segmentation)}};
  if (c.dataset.tags) dataset["tags"] = c.dataset.tags->string();
  if (c.dataset.mask) dataset["mask"] = c.dataset.mask->string();
  if (c.dataset.pos) dataset["pos"] = c.dataset.pos->string();
  json providers = json::object();
  for (const auto& [id, p] : c.providers) providers[id] = provider_to_json(p);
  json j{{"dataset", std::move(dataset)},
         {"backend",
          {{"kind", c.backend.kind},
           {"endpoint", c.backend.endpoint},
           {"command", c.backend.command},
           {"prompt_template", c.backend.prompt_template},
           {"mock_rules", c.backend.mock_rules},
           {"id", c.backend.id},
           {"timeout_s", c.backend.timeout_s}}},
         {"providers", std::move(providers)},
         {"hyperparameters", c.hp},
         {"cache_dir", c.cache_dir},
         {"output_dir", c.output_dir.string()},
         {"concurrency", c.concurrency},
         {"max_inflight_requests", c.max_inflight_requests},
         {"batch_size", c.batch_size},
         {"fold_case", c.fold_case},
         {"skip_errors", c.skip_errors},
         {"determinism_check", c.determinism_check},
         {"logprob_threshold", c.logprob_threshold}};
  if (c.logprobs) j["logprobs"] = c.logprobs->string();
  if (c.grid) j["grid"] = *c.grid;
  return j;
}

RunConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) throw ConfigError("config file not found: " + path.string());
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  auto config = config_from_json(j, path.parent_path());
  config.validate();
  return config;
}

json metrics_to_json(const Metrics& m) {
  json j{{"tp", m.counts.tp},
         {"tn", m.counts.tn},
         {"fp", m.counts.fp},
         {"fn", m.counts.fn},
         {"mcc", m.mcc},
         {"scored_sentences", m.scored_sentences}};
  if (m.targeted) j["targeted"] = {{"recall", m.targeted->recall}, {"precision", m.targeted->precision}};
  return j;
}

// ---- artifact JSON --------------------------------------------------------

json to_json(const SentencePerturbations& s) {
  json sets = json::array();
  for (const auto& set : s.sets) {
    sets.push_back({{"source_index", set.source_index},
                    {"replacements", set.replacements},
                    {"variants", set.variants}});
  }
  json j{{"sentence_id", s.sentence_id}, {"source_tokens", s.source_tokens}, {"sets", std::move(sets)}};
  if (s.error) j["error"] = *s.error;
  return j;
}

SentencePerturbations perturbations_from_json(const json& j) {
  SentencePerturbations s;
  s.sentence_id = j.at("sentence_id").get<std::string>();
  s.source_tokens = j.at("source_tokens").get<Tokens>();
  for (const auto& set : j.at("sets")) {
    PerturbationSet p;
    p.source_index = set.at("source_index").get<std::size_t>();
    p.replacements = set.at("replacements").get<Tokens>();
    p.variants = set.at("variants").get<std::vector<Tokens>>();
    s.sets.push_back(std::move(p));
  }
  if (j.contains("error")) s.error = j.at("error").get<std::string>();
  return s;
}

json to_json(const SentenceTranslations& s) {
  json rows = json::array();
  for (const auto& r : s.rows) {
    rows.push_back({{"source_index", r.source_index},
                    {"replacements", r.replacements},
                    {"translations", r.translations}});
  }
  json j{{"sentence_id", s.sentence_id},
         {"source_tokens", s.source_tokens},
         {"mt_tokens", s.mt_tokens},
         {"original_translation", s.original_translation},
         {"rows", std::move(rows)}};
  if (s.error) j["error"] = *s.error;
  return j;
}

SentenceTranslations translations_from_json(const json& j) {
  SentenceTranslations s;
  s.sentence_id = j.at("sentence_id").get<std::string>();
  s.source_tokens = j.at("source_tokens").get<Tokens>();
  s.mt_tokens = j.at("mt_tokens").get<Tokens>();
  s.original_translation = j.at("original_translation").get<Tokens>();
  for (const auto& r : j.at("rows")) {
    TranslatedRow row;
    row.source_index = r.at("source_index").get<std::size_t>();
    row.replacements = r.at("replacements").get<Tokens>();
    row.translations = r.at("translations").get<std::vector<Tokens>>();
    s.rows.push_back(std::move(row));
  }
  if (j.contains("error")) s.error = j.at("error").get<std::string>();
  return s;
}

json to_json(const SentenceAlignments& s) {
  json rows = json::array();
  for (const auto& r : s.rows) {
    json variants = json::array();
    for (const auto& v : r.variants) {
      json projected = json::array();
      for (const auto& t : v) projected.push_back(projected_json(t));
      variants.push_back(std::move(projected));
    }
    rows.push_back({{"source_index", r.source_index},
                    {"replacements", r.replacements},
                    {"variants", std::move(variants)}});
  }
  json j{{"sentence_id", s.sentence_id},
         {"source_tokens", s.source_tokens},
         {"mt_tokens", s.mt_tokens},
         {"rows", std::move(rows)},
         {"dropped", s.dropped}};
  if (s.error) j["error"] = *s.error;
  return j;
}

SentenceAlignments alignments_from_json(const json& j) {
  SentenceAlignments s;
  s.sentence_id = j.at("sentence_id").get<std::string>();
  s.source_tokens = j.at("source_tokens").get<Tokens>();
  s.mt_tokens = j.at("mt_tokens").get<Tokens>();
  for (const auto& r : j.at("rows")) {
    PerturbedRow row;
    row.source_index = r.at("source_index").get<std::size_t>();
    row.replacements = r.at("replacements").get<Tokens>();
    for (const auto& v : r.at("variants")) {
      std::vector<ProjectedToken> projected;
      for (const auto& t : v) projected.push_back(projected_from_json(t));
      row.variants.push_back(std::move(projected));
    }
    s.rows.push_back(std::move(row));
  }
  s.dropped = j.at("dropped").get<std::vector<std::vector<std::size_t>>>();
  if (j.contains("error")) s.error = j.at("error").get<std::string>();
  return s;
}

// ---- pipeline -------------------------------------------------------------

Pipeline::Pipeline(RunConfig config, std::shared_ptr<TranslationBackend> backend,
                   ProviderMap providers, std::shared_ptr<const PosTagger> tagger)
    : config_(std::move(config)),
      backend_(std::move(backend)),
      counting_(std::make_unique<CountingBackend>(*backend_)),
      providers_(std::move(providers)),
      tagger_(tagger ? std::move(tagger) : std::make_shared<LexiconTagger>()),
      cache_(std::make_unique<TranslationCache>(
          resolve_cache_dir(config_.cache_dir, config_.output_dir / "cache"))) {}

Pipeline Pipeline::from_config(RunConfig config) {
  config.validate();
  std::shared_ptr<TranslationBackend> backend;
  const auto& b = config.backend;
  if (b.kind == "mock") {
    backend = std::make_shared<MockBackend>(MockBackend::load(b.mock_rules, b.id.empty() ? "mock" : b.id));
  } else if (b.kind == "http") {
    backend = std::make_shared<HttpBackend>(b.endpoint, b.prompt_template, std::chrono::seconds(b.timeout_s), b.id);
  } else {
    backend = std::make_shared<SubprocessBackend>(b.command, b.prompt_template, b.id);
  }
  ProviderMap providers;
  for (const auto& [id, spec] : config.providers) {
    if (spec.kind == "lexicon") {
      providers[id] = std::make_shared<StaticLexicon>(StaticLexicon::load(spec.fixture));
    } else {
      providers[id] = std::make_shared<RemoteMaskedLM>(spec.endpoint, std::chrono::seconds(spec.timeout_s));
    }
  }
  return Pipeline(std::move(config), std::move(backend), std::move(providers));
}

const QEDataset& Pipeline::dataset() {
  if (!dataset_) dataset_ = load_dataset(config_.dataset);
  return *dataset_;
}

const ReplacementProvider& Pipeline::provider(const std::string& id) const {
  auto it = providers_.find(id);
  if (it == providers_.end() || !it->second) throw ConfigError("no replacement provider named '" + id + "'");
  return *it->second;
}

TranslateOptions Pipeline::translate_options() const {
  TranslateOptions options;
  options.batch_size = config_.batch_size;
  options.max_inflight_batches = config_.max_inflight_requests;
  options.segmentation = config_.dataset.mt_pretokenized ? Segmentation::Whitespace : config_.dataset.segmentation;
  return options;
}

void Pipeline::record_timing(const std::string& stage, std::chrono::steady_clock::duration d) {
  timings_ms_[stage] = std::chrono::duration<double, std::milli>(d).count();
}

std::vector<SentencePerturbations> Pipeline::compute_perturbations(TargetMode mode,
                                                                   const std::string& provider_id,
                                                                   std::size_t n) {
  const auto& data = dataset();
  const ThrottledProvider throttled(provider(provider_id), config_.max_inflight_requests);
  std::vector<SentencePerturbations> out(data.sentences.size());
  parallel_for(data.sentences.size(), config_.concurrency, [&](std::size_t i) {
    const QESentence& s = data.sentences[i];
    SentencePerturbations& result = out[i];
    result.sentence_id = s.id;
    result.source_tokens = s.source_tokens;
    try {
      TokenizedSentence sentence{s.id, s.source_tokens, s.pos};
      if (!sentence.tags) sentence.tags = tagger_->tag(sentence.tokens);
      for (std::size_t position : select_targets(sentence, mode)) {
        result.sets.push_back(generate_replacements(sentence, position, n, throttled));
      }
    } catch (...) {
      if (!config_.skip_errors) rethrow_in_context(context_of("perturb", s.id));
      try {
        rethrow_in_context(context_of("perturb", s.id));
      } catch (const std::exception& e) {
        spdlog::warn("skipping: {}", e.what());
        result.sets.clear();
        result.error = e.what();
      }
    }
  });
  return out;
}

std::vector<SentenceTranslations> Pipeline::compute_translations(
    const std::vector<SentencePerturbations>& perturbations) {
  const TranslateOptions options = translate_options();
  const ComparisonPolicy policy = config_.policy();
  const auto& data = dataset();
  std::map<std::string, const QESentence*> by_id;
  for (const auto& s : data.sentences) by_id[s.id] = &s;

  // Per sentence: original source first, then every variant in row order.
  std::vector<std::vector<std::string>> sources(perturbations.size());
  for (std::size_t i = 0; i < perturbations.size(); ++i) {
    const auto& p = perturbations[i];
    if (p.error) continue;
    sources[i].push_back(join(p.source_tokens));
    for (const auto& set : p.sets) {
      for (const auto& v : set.variants) sources[i].push_back(join(v));
    }
  }

  // The determinism probe only runs when a real backend call is about to
  // happen, so warm-cache reruns stay call-free.
  if (config_.determinism_check) {
    const std::string id = counting_->backend_id();
    for (const auto& list : sources) {
      auto miss = std::find_if(list.begin(), list.end(),
                               [&](const std::string& s) { return !cache_->get(cache_key(id, s)); });
      if (miss != list.end()) {
        check_determinism(*counting_, *miss);
        break;
      }
    }
  }

  std::vector<std::vector<TranslationRecord>> records(perturbations.size());
  std::vector<std::optional<std::string>> errors(perturbations.size());
  if (!config_.skip_errors) {
    // One corpus-wide call keeps batches full.
    std::vector<std::string> flat;
    for (const auto& list : sources) flat.insert(flat.end(), list.begin(), list.end());
    std::vector<TranslationRecord> all;
    try {
      all = translate_batch(flat, *counting_, *cache_, options);
    } catch (...) {
      rethrow_in_context("[translate] ");
    }
    std::size_t offset = 0;
    for (std::size_t i = 0; i < sources.size(); ++i) {
      records[i].assign(std::make_move_iterator(all.begin() + static_cast<std::ptrdiff_t>(offset)),
                        std::make_move_iterator(all.begin() + static_cast<std::ptrdiff_t>(offset + sources[i].size())));
      offset += sources[i].size();
    }
  } else {
    for (std::size_t i = 0; i < sources.size(); ++i) {
      if (sources[i].empty()) continue;
      try {
        records[i] = translate_batch(sources[i], *counting_, *cache_, options);
      } catch (const Error& e) {
        errors[i] = context_of("translate", perturbations[i].sentence_id) + e.what();
        spdlog::warn("skipping: {}", *errors[i]);
      }
    }
  }

  std::vector<SentenceTranslations> out(perturbations.size());
  for (std::size_t i = 0; i < perturbations.size(); ++i) {
    const auto& p = perturbations[i];
    SentenceTranslations& t = out[i];
    t.sentence_id = p.sentence_id;
    t.source_tokens = p.source_tokens;
    auto it = by_id.find(p.sentence_id);
    if (it == by_id.end()) {
      throw DataError("[translate] sentence " + p.sentence_id + " is not in the dataset");
    }
    t.mt_tokens = normalize_all(it->second->mt_tokens, policy);
    t.error = p.error ? p.error : errors[i];
    if (t.error) continue;
    const auto& recs = records[i];
    t.original_translation = normalize_all(recs.at(0).target_tokens, policy);
    if (t.original_translation != t.mt_tokens) {
      spdlog::warn("sentence {}: backend translation of the original source differs from the dataset MT; "
                   "scoring against the dataset MT",
                   p.sentence_id);
    }
    std::size_t k = 1;
    for (const auto& set : p.sets) {
      TranslatedRow row;
      row.source_index = set.source_index;
      row.replacements = set.replacements;
      for (std::size_t v = 0; v < set.variants.size(); ++v) {
        row.translations.push_back(normalize_all(recs.at(k++).target_tokens, policy));
      }
      t.rows.push_back(std::move(row));
    }
  }
  return out;
}

std::vector<SentenceAlignments> Pipeline::compute_alignments(
    const std::vector<SentenceTranslations>& translations, AlignerKind aligner) const {
  std::vector<SentenceAlignments> out(translations.size());
  parallel_for(translations.size(), config_.concurrency, [&](std::size_t i) {
    const auto& t = translations[i];
    SentenceAlignments& a = out[i];
    a.sentence_id = t.sentence_id;
    a.source_tokens = t.source_tokens;
    a.mt_tokens = t.mt_tokens;
    a.error = t.error;
    if (a.error) return;
    try {
      for (const auto& row : t.rows) {
        PerturbedRow projected_row;
        projected_row.source_index = row.source_index;
        projected_row.replacements = row.replacements;
        std::vector<std::size_t> dropped;
        for (const auto& hyp : row.translations) {
          const Alignment alignment = pqe::align(t.mt_tokens, hyp, aligner);
          AlignedVariant v = project(alignment, hyp, t.mt_tokens.size());
          projected_row.variants.push_back(std::move(v.projected));
          dropped.push_back(v.dropped_hyp_tokens);
        }
        a.rows.push_back(std::move(projected_row));
        a.dropped.push_back(std::move(dropped));
      }
    } catch (...) {
      if (!config_.skip_errors) rethrow_in_context(context_of("align", t.sentence_id));
      try {
        rethrow_in_context(context_of("align", t.sentence_id));
      } catch (const std::exception& e) {
        spdlog::warn("skipping: {}", e.what());
        a.rows.clear();
        a.dropped.clear();
        a.error = e.what();
      }
    }
  });
  return out;
}

void Pipeline::perturb() {
  const auto start = std::chrono::steady_clock::now();
  const auto& hp = config_.hp;
  auto result = compute_perturbations(hp.target_mode, hp.provider_id, hp.n);
  for (const auto& s : result) {
    if (s.error) skipped_.insert(s.sentence_id);
  }
  write_jsonl(result, out(artifacts::kPerturbations));
  record_timing("perturb", std::chrono::steady_clock::now() - start);
  write_manifest();
}

void Pipeline::translate() {
  const auto start = std::chrono::steady_clock::now();
  const auto perturbations = read_jsonl<SentencePerturbations>(out(artifacts::kPerturbations), perturbations_from_json);
  auto result = compute_translations(perturbations);
  for (const auto& s : result) {
    if (s.error) skipped_.insert(s.sentence_id);
  }
  write_jsonl(result, out(artifacts::kTranslations));
  record_timing("translate", std::chrono::steady_clock::now() - start);
  write_manifest();
}

void Pipeline::align() {
  const auto start = std::chrono::steady_clock::now();
  const auto translations = read_jsonl<SentenceTranslations>(out(artifacts::kTranslations), translations_from_json);
  auto result = compute_alignments(translations, config_.hp.aligner);
  for (const auto& s : result) {
    if (s.error) skipped_.insert(s.sentence_id);
  }
  write_jsonl(result, out(artifacts::kAlignments));
  record_timing("align", std::chrono::steady_clock::now() - start);
  write_manifest();
}

void Pipeline::predict() {
  const auto start = std::chrono::steady_clock::now();
  const auto alignments = read_jsonl<SentenceAlignments>(out(artifacts::kAlignments), alignments_from_json);
  std::vector<SentenceVerdicts> verdicts(alignments.size());
  parallel_for(alignments.size(), config_.concurrency, [&](std::size_t i) {
    const auto& a = alignments[i];
    auto& v = verdicts[i];
    v.sentence_id = a.sentence_id;
    v.error = a.error;
    if (v.error) return;
    try {
      const auto matrix = build_consistency_matrix(a.sentence_id, a.mt_tokens, a.rows, config_.hp);
      v.verdicts = predict_verdicts(matrix, config_.hp.t);
      v.dropped_rows = matrix.dropped_rows;
    } catch (...) {
      if (!config_.skip_errors) rethrow_in_context(context_of("predict", a.sentence_id));
      try {
        rethrow_in_context(context_of("predict", a.sentence_id));
      } catch (const std::exception& e) {
        spdlog::warn("skipping: {}", e.what());
        v.verdicts.clear();
        v.error = e.what();
      }
    }
  });

  std::vector<Labels> labels;
  labels.reserve(verdicts.size());
  for (const auto& v : verdicts) {
    if (v.error) skipped_.insert(v.sentence_id);
    labels.push_back(labels_of(v.verdicts));
  }
  write_predictions(labels, out(artifacts::kPredictions));
  write_jsonl(verdicts, out(artifacts::kVerdicts));
  record_timing("predict", std::chrono::steady_clock::now() - start);
  write_manifest();
}

void Pipeline::explain() {
  const auto start = std::chrono::steady_clock::now();
  const auto verdicts = read_jsonl<SentenceVerdicts>(out(artifacts::kVerdicts), verdicts_from_json);
  const auto& data = dataset();
  std::map<std::string, const QESentence*> by_id;
  for (const auto& s : data.sentences) by_id[s.id] = &s;
  std::vector<ExplanationRecord> records;
  for (const auto& v : verdicts) {
    if (v.error) continue;
    auto it = by_id.find(v.sentence_id);
    if (it == by_id.end()) throw DataError("[explain] sentence " + v.sentence_id + " is not in the dataset");
    records.push_back(make_explanation(v.sentence_id, it->second->source_tokens, it->second->mt_tokens, v.verdicts));
  }
  emit_explanations(records, ReportFormat::Json, out(artifacts::kExplanationsJson));
  emit_explanations(records, ReportFormat::Html, out(artifacts::kExplanationsHtml));
  record_timing("explain", std::chrono::steady_clock::now() - start);
  write_manifest();
}

std::optional<Metrics> Pipeline::evaluate() {
  const auto start = std::chrono::steady_clock::now();
  const auto& data = dataset();
  if (!data.has_gold()) {
    spdlog::info("dataset has no gold tags; skipping evaluation");
    return std::nullopt;
  }
  const auto verdicts = read_jsonl<SentenceVerdicts>(out(artifacts::kVerdicts), verdicts_from_json);
  if (verdicts.size() != data.sentences.size()) {
    throw DataError("[evaluate] " + std::to_string(verdicts.size()) + " verdict lines for " +
                    std::to_string(data.sentences.size()) + " sentences");
  }
  std::vector<Labels> predicted, gold;
  TargetedMask mask;
  for (std::size_t i = 0; i < verdicts.size(); ++i) {
    if (verdicts[i].error) continue;
    const auto& s = data.sentences[i];
    if (verdicts[i].sentence_id != s.id) throw DataError("[evaluate] verdicts are out of order at sentence " + s.id);
    predicted.push_back(labels_of(verdicts[i].verdicts));
    gold.push_back(*s.gold);
    if (s.mask) mask.push_back(*s.mask);
  }
  Metrics m;
  try {
    m.counts = confusion(predicted, gold);
  } catch (const InvalidInput& e) {
    throw DataError(std::string("[evaluate] ") + e.what());
  }
  m.mcc = mcc(m.counts);
  m.scored_sentences = predicted.size();
  if (data.has_mask()) m.targeted = targeted_scores(predicted, mask);
  write_text_file(out(artifacts::kMetrics), metrics_to_json(m).dump(2) + "\n");
  record_timing("evaluate", std::chrono::steady_clock::now() - start);
  write_manifest();
  return m;
}

GridSearchResult Pipeline::tune() {
  const auto start = std::chrono::steady_clock::now();
  const auto& data = dataset();
  if (!data.has_gold()) throw ConfigError("tune needs gold tags (dataset.tags)");
  const HyperparameterGrid grid = config_.grid.value_or(HyperparameterGrid{}).completed(config_.hp);
  for (const auto& id : grid.provider_id) provider(id);

  std::vector<Labels> gold;
  for (const auto& s : data.sentences) gold.push_back(*s.gold);

  // MT work depends only on (mode, provider, n); alignments add the aligner.
  std::map<std::tuple<TargetMode, std::string, std::size_t>, std::vector<SentenceTranslations>> translated;
  auto stage = [&](TargetMode mode, const std::string& provider_id, std::size_t n, AlignerKind aligner) {
    auto key = std::tuple(mode, provider_id, n);
    auto it = translated.find(key);
    if (it == translated.end()) {
      it = translated.emplace(key, compute_translations(compute_perturbations(mode, provider_id, n))).first;
    }
    std::vector<AlignedSentence> aligned;
    for (auto& a : compute_alignments(it->second, aligner)) {
      if (a.error) throw DataError("[tune] sentence " + a.sentence_id + " failed: " + *a.error);
      aligned.push_back({a.sentence_id, std::move(a.mt_tokens), std::move(a.rows)});
    }
    return aligned;
  };

  GridSearchResult result = grid_search(grid, gold, stage);
  write_leaderboard(result.leaderboard, out(artifacts::kLeaderboard));
  json best = result.best;
  best["mcc"] = result.best_mcc;
  write_text_file(out(artifacts::kBestHyperparameters), best.dump(2) + "\n");
  record_timing("tune", std::chrono::steady_clock::now() - start);
  write_manifest();
  return result;
}

std::optional<Metrics> Pipeline::baseline_logprob() {
  const auto start = std::chrono::steady_clock::now();
  const auto& data = dataset();
  std::vector<std::vector<double>> logprobs;
  if (config_.logprobs) {
    std::vector<Tokens> mt_tokens;
    for (const auto& s : data.sentences) mt_tokens.push_back(s.mt_tokens);
    const auto ids = data.ids();
    auto by_id = load_logprobs(*config_.logprobs, ids, mt_tokens);
    for (const auto& id : ids) logprobs.push_back(by_id.at(id));
  } else {
    // Fall back to the logprobs the backend returned for the original sources.
    const std::string id = counting_->backend_id();
    for (const auto& s : data.sentences) {
      auto record = cache_->get(cache_key(id, join(s.source_tokens)));
      if (!record || !record->token_logprobs) {
        throw DataError("[baseline-logprob] sentence " + s.id +
                        ": no log probabilities (set `logprobs` or use a backend that returns them)");
      }
      if (record->token_logprobs->size() != s.mt_tokens.size()) {
        throw DataError("[baseline-logprob] sentence " + s.id + ": backend returned " +
                        std::to_string(record->token_logprobs->size()) + " logprobs for " +
                        std::to_string(s.mt_tokens.size()) + " MT tokens");
      }
      logprobs.push_back(*record->token_logprobs);
    }
  }

  std::vector<Labels> predicted;
  for (const auto& lp : logprobs) predicted.push_back(logprob_predict(lp, config_.logprob_threshold));
  write_predictions(predicted, out(artifacts::kBaselinePredictions));

  std::optional<Metrics> metrics;
  if (data.has_gold()) {
    std::vector<Labels> gold;
    TargetedMask mask;
    for (const auto& s : data.sentences) {
      gold.push_back(*s.gold);
      if (s.mask) mask.push_back(*s.mask);
    }
    Metrics m;
    m.counts = confusion(predicted, gold);
    m.mcc = mcc(m.counts);
    m.scored_sentences = predicted.size();
    if (data.has_mask()) m.targeted = targeted_scores(predicted, mask);
    json j = metrics_to_json(m);
    j["threshold"] = config_.logprob_threshold;
    write_text_file(out(artifacts::kBaselineMetrics), j.dump(2) + "\n");
    metrics = m;
  }
  record_timing("baseline-logprob", std::chrono::steady_clock::now() - start);
  write_manifest();
  return metrics;
}

RunSummary Pipeline::run() {
  perturb();
  translate();
  align();
  predict();
  explain();
  RunSummary summary;
  summary.metrics = evaluate();
  summary.sentences = dataset().sentences.size();
  summary.skipped.assign(skipped_.begin(), skipped_.end());
  summary.backend_calls = backend_calls();
  return summary;
}

void Pipeline::write_manifest() const {
  const json config = config_to_json(config_);
  json timings = json::object();
  for (const auto& [stage, ms] : timings_ms_) timings[stage] = ms;
  json manifest{{"version", kVersion},
                {"config_hash", sha256_hex(config.dump())},
                {"config", config},
                {"backend_id", counting_->backend_id()},
                {"backend_calls", counting_->calls()},
                {"backend_texts", counting_->texts()},
                {"timings_ms", std::move(timings)},
                {"skipped_sentences", std::vector<std::string>(skipped_.begin(), skipped_.end())}};
  write_text_file(out(artifacts::kManifest), manifest.dump(2) + "\n");
}

}  // namespace pqe
