#include "perturbqe/mt_client.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>
#include <unordered_map>

#include <spdlog/spdlog.h>

#include "perturbqe/data_io.hpp"
#include "perturbqe/errors.hpp"

namespace fs = std::filesystem;

namespace pqe {

void to_json(nlohmann::json& j, const TranslationRecord& r) {
  j = nlohmann::json{{"source_text", r.source_text},
                     {"translation_text", r.translation_text},
                     {"target_tokens", r.target_tokens},
                     {"backend_id", r.backend_id},
                     {"cache_key", r.cache_key}};
  if (r.token_logprobs) j["token_logprobs"] = *r.token_logprobs;
}

void from_json(const nlohmann::json& j, TranslationRecord& r) {
  r.source_text = j.at("source_text").get<std::string>();
  r.translation_text = j.at("translation_text").get<std::string>();
  r.target_tokens = j.at("target_tokens").get<Tokens>();
  r.backend_id = j.at("backend_id").get<std::string>();
  r.cache_key = j.at("cache_key").get<std::string>();
  if (j.contains("token_logprobs")) {
    r.token_logprobs = j.at("token_logprobs").get<std::vector<double>>();
  } else {
    r.token_logprobs.reset();
  }
}

std::string cache_key(std::string_view backend_id, std::string_view source_text) {
  std::string material;
  material.reserve(backend_id.size() + source_text.size() + 1);
  material.append(backend_id);
  material.push_back('\0');
  material.append(source_text);
  return sha256_hex(material);
}

TranslationCache::TranslationCache(fs::path dir) : dir_(std::move(dir)) {
  fs::create_directories(dir_ / "records");
}

fs::path TranslationCache::record_path(const std::string& key) const {
  return dir_ / "records" / key.substr(0, 2) / (key + ".json");
}

std::optional<TranslationRecord> TranslationCache::get(const std::string& key) const {
  const fs::path path = record_path(key);
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  try {
    auto j = nlohmann::json::parse(in);
    auto record = j.get<TranslationRecord>();
    if (record.cache_key != key) {
      spdlog::warn("cache record {} carries key {}; ignoring", path.string(), record.cache_key);
      return std::nullopt;
    }
    return record;
  } catch (const nlohmann::json::exception& e) {
    spdlog::warn("unreadable cache record {}: {}", path.string(), e.what());
    return std::nullopt;
  }
}

void TranslationCache::put(const TranslationRecord& record) {
  const fs::path path = record_path(record.cache_key);
  std::lock_guard lock(write_mutex_);
  if (fs::exists(path)) return;
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << nlohmann::json(record).dump() << '\n';
    out.flush();
    if (!out) throw Error("cannot write cache record " + tmp.string());
  }
  fs::rename(tmp, path);
  std::ofstream index(dir_ / "index.jsonl", std::ios::binary | std::ios::app);
  index << nlohmann::json{{"key", record.cache_key},
                          {"backend_id", record.backend_id},
                          {"source_text", record.source_text}}
               .dump()
        << '\n';
}

fs::path resolve_cache_dir(const std::string& configured, const fs::path& fallback) {
  if (!configured.empty()) return configured;
  if (const char* env = std::getenv("PERTURBQE_CACHE_DIR"); env && *env) return env;
  return fallback;
}

namespace {

std::vector<BackendResult> call_with_retry(TranslationBackend& backend,
                                           std::span<const std::string> batch,
                                           const TranslateOptions& options) {
  auto delay = options.initial_backoff;
  for (std::size_t attempt = 1;; ++attempt) {
    try {
      auto results = backend.translate(batch);
      if (results.size() != batch.size()) {
        throw ProtocolError("backend returned " + std::to_string(results.size()) +
                            " results for " + std::to_string(batch.size()) + " inputs");
      }
      return results;
    } catch (const ProtocolError& e) {
      throw ProtocolError(std::string(e.what()) + " (source \"" + batch.front() + "\")");
    } catch (const BackendError& e) {
      if (!e.transient() || attempt >= options.max_attempts) {
        throw BackendError("translation failed after " + std::to_string(attempt) +
                               " attempt(s) for source \"" + batch.front() + "\"" +
                               (batch.size() > 1 ? " (batch of " + std::to_string(batch.size()) + ")" : "") +
                               ": " + e.what(),
                           false);
      }
      spdlog::warn("transient backend error (attempt {}/{}): {}", attempt, options.max_attempts,
                   e.what());
      std::this_thread::sleep_for(delay);
      delay *= 2;
    }
  }
}

TranslationRecord make_record(const std::string& source, BackendResult result,
                              const std::string& backend_id, const TranslateOptions& options) {
  TranslationRecord record;
  record.source_text = source;
  record.translation_text = std::move(result.translation);
  record.target_tokens = result.tokens ? std::move(*result.tokens)
                                       : segment_target(record.translation_text, options.segmentation);
  if (result.logprobs) {
    if (result.logprobs->size() != record.target_tokens.size()) {
      throw ProtocolError("backend returned " + std::to_string(result.logprobs->size()) +
                          " logprobs for " + std::to_string(record.target_tokens.size()) +
                          " tokens (source \"" + source + "\")");
    }
    record.token_logprobs = std::move(result.logprobs);
  }
  record.backend_id = backend_id;
  record.cache_key = cache_key(backend_id, source);
  return record;
}

}  // namespace

std::vector<TranslationRecord> translate_batch(std::span<const std::string> sources,
                                               TranslationBackend& backend,
                                               TranslationCache& cache,
                                               const TranslateOptions& options) {
  const std::string backend_id = backend.backend_id();
  std::vector<TranslationRecord> records(sources.size());
  std::vector<std::string> misses;
  std::unordered_map<std::string, std::vector<std::size_t>> waiting;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    if (auto hit = cache.get(cache_key(backend_id, sources[i]))) {
      records[i] = std::move(*hit);
      continue;
    }
    auto [it, fresh] = waiting.try_emplace(sources[i]);
    if (fresh) misses.push_back(sources[i]);
    it->second.push_back(i);
  }
  if (misses.empty()) return records;

  const std::size_t batch_size = std::max<std::size_t>(1, options.batch_size);
  const std::size_t batches = (misses.size() + batch_size - 1) / batch_size;

  auto run_batch = [&](std::size_t b) {
    const std::size_t begin = b * batch_size;
    const std::size_t end = std::min(misses.size(), begin + batch_size);
    std::span<const std::string> batch(misses.data() + begin, end - begin);
    auto results = call_with_retry(backend, batch, options);
    for (std::size_t k = 0; k < batch.size(); ++k) {
      TranslationRecord record = make_record(batch[k], std::move(results[k]), backend_id, options);
      cache.put(record);
      for (std::size_t idx : waiting.at(batch[k])) records[idx] = record;
    }
  };

  const std::size_t workers = std::clamp<std::size_t>(options.max_inflight_batches, 1, batches);
  if (workers == 1) {
    for (std::size_t b = 0; b < batches; ++b) run_batch(b);
    return records;
  }

  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t b = next++; b < batches && !failed; b = next++) {
          try {
            run_batch(b);
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
  return records;
}

void check_determinism(TranslationBackend& backend, const std::string& sample) {
  const std::vector<std::string> probe{sample};
  const auto first = backend.translate(probe);
  const auto second = backend.translate(probe);
  if (first.size() != 1 || second.size() != 1) {
    throw ProtocolError("backend returned wrong result count during determinism check");
  }
  if (first[0].translation != second[0].translation) {
    throw BackendError("backend " + backend.backend_id() +
                           " is not deterministic: \"" + sample + "\" translated to \"" +
                           first[0].translation + "\" and \"" + second[0].translation + "\"",
                       false);
  }
}

std::vector<BackendResult> CountingBackend::translate(std::span<const std::string> texts) {
  ++calls_;
  texts_ += texts.size();
  return inner_.translate(texts);
}

std::string apply_prompt(std::string_view prompt_template, std::string_view source) {
  if (prompt_template.empty()) return std::string(source);
  static constexpr std::string_view kPlaceholder = "<English_input>";
  std::string out(prompt_template);
  for (std::size_t pos = out.find(kPlaceholder); pos != std::string::npos;
       pos = out.find(kPlaceholder, pos + source.size())) {
    out.replace(pos, kPlaceholder.size(), source);
  }
  return out;
}

SubprocessBackend::SubprocessBackend(std::string command, std::string prompt_template, std::string id)
    : command_(std::move(command)), prompt_template_(std::move(prompt_template)), id_(std::move(id)) {
  if (id_.empty()) {
    id_ = "subprocess:" + command_;
    if (!prompt_template_.empty()) id_ += "|" + prompt_template_;
  }
}

std::vector<BackendResult> SubprocessBackend::translate(std::span<const std::string> texts) {
  const fs::path input = fs::temp_directory_path() /
                         ("pqe-subprocess-" + std::to_string(fnv1a(texts.empty() ? "" : texts.front())) +
                          "-" + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id())) +
                          ".txt");
  {
    std::ofstream out(input, std::ios::binary | std::ios::trunc);
    for (const auto& text : texts) {
      std::string line = apply_prompt(prompt_template_, text);
      std::replace(line.begin(), line.end(), '\n', ' ');
      out << line << '\n';
    }
  }
  const std::string command = command_ + " < '" + input.string() + "'";
  FILE* pipe = ::popen(command.c_str(), "r");
  if (!pipe) {
    fs::remove(input);
    throw BackendError("cannot start translation command: " + command_, true);
  }
  std::string output;
  char buffer[4096];
  std::size_t got = 0;
  while ((got = std::fread(buffer, 1, sizeof buffer, pipe)) > 0) output.append(buffer, got);
  const int status = ::pclose(pipe);
  fs::remove(input);
  if (status != 0) {
    throw BackendError("translation command exited with status " + std::to_string(status), false);
  }

  std::vector<BackendResult> results;
  std::istringstream lines(output);
  std::string line;
  while (std::getline(lines, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    results.push_back({line, std::nullopt, std::nullopt});
  }
  if (results.size() != texts.size()) {
    throw ProtocolError("translation command produced " + std::to_string(results.size()) +
                        " lines for " + std::to_string(texts.size()) + " inputs");
  }
  return results;
}

std::uint64_t fnv1a(std::string_view data) {
  std::uint64_t hash = 1469598103934665603ULL;
  for (unsigned char ch : data) {
    hash ^= ch;
    hash *= 1099511628211ULL;
  }
  return hash;
}

namespace {

Tokens tokens_field(const nlohmann::json& j) {
  if (j.is_string()) return split_whitespace(j.get<std::string>());
  return j.get<Tokens>();
}

}  // namespace

void to_json(nlohmann::json& j, const MockTemplate& t) {
  j = nlohmann::json{{"source", join(t.source)}, {"target", join(t.target)}};
  auto flips = nlohmann::json::array();
  for (const auto& f : t.flips) {
    flips.push_back({{"target", f.target_position},
                     {"triggers", f.triggers},
                     {"choices", f.choices},
                     {"include_base", f.include_base}});
  }
  auto directs = nlohmann::json::array();
  for (const auto& d : t.directs) {
    directs.push_back({{"source", d.source_position},
                       {"target", d.target_position},
                       {"prefix", d.prefix},
                       {"suffix", d.suffix}});
  }
  j["flips"] = std::move(flips);
  j["directs"] = std::move(directs);
}

void from_json(const nlohmann::json& j, MockTemplate& t) {
  t.source = tokens_field(j.at("source"));
  t.target = tokens_field(j.at("target"));
  t.flips.clear();
  t.directs.clear();
  for (const auto& f : j.value("flips", nlohmann::json::array())) {
    FlipRule rule;
    rule.target_position = f.at("target").get<std::size_t>();
    rule.triggers = f.at("triggers").get<std::vector<std::size_t>>();
    rule.choices = f.at("choices").get<Tokens>();
    rule.include_base = f.value("include_base", false);
    t.flips.push_back(std::move(rule));
  }
  for (const auto& d : j.value("directs", nlohmann::json::array())) {
    DirectRule rule;
    rule.source_position = d.at("source").get<std::size_t>();
    rule.target_position = d.at("target").get<std::size_t>();
    rule.prefix = d.value("prefix", "");
    rule.suffix = d.value("suffix", "");
    t.directs.push_back(std::move(rule));
  }
}

MockBackend::MockBackend(std::vector<MockTemplate> templates, std::string id)
    : templates_(std::move(templates)), id_(std::move(id)) {
  for (std::size_t i = 0; i < templates_.size(); ++i) {
    const auto& t = templates_[i];
    auto check = [&](std::size_t pos, std::size_t limit, const char* what) {
      if (pos >= limit) {
        throw ConfigError("mock template " + std::to_string(i) + ": " + what + " position " +
                          std::to_string(pos) + " out of range");
      }
    };
    for (const auto& f : t.flips) {
      check(f.target_position, t.target.size(), "flip target");
      for (auto trigger : f.triggers) check(trigger, t.source.size(), "trigger");
    }
    for (const auto& d : t.directs) {
      check(d.source_position, t.source.size(), "direct source");
      check(d.target_position, t.target.size(), "direct target");
    }
    exact_.emplace(join(t.source), i);
    by_length_[t.source.size()].push_back(i);
  }
}

MockBackend MockBackend::load(const fs::path& path, std::string id) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("mock rules " + path.string() + ": " + e.what());
  }
  const auto& list = j.is_array() ? j : j.at("templates");
  return MockBackend(list.get<std::vector<MockTemplate>>(), std::move(id));
}

BackendResult MockBackend::translate_one(const std::string& text) const {
  const Tokens tokens = split_whitespace(text);
  const MockTemplate* tmpl = nullptr;
  if (auto it = exact_.find(join(tokens)); it != exact_.end()) {
    tmpl = &templates_[it->second];
  } else if (auto bucket = by_length_.find(tokens.size()); bucket != by_length_.end()) {
    std::size_t best = tokens.size() + 1;
    for (std::size_t idx : bucket->second) {
      const auto& source = templates_[idx].source;
      std::size_t diff = 0;
      for (std::size_t k = 0; k < tokens.size(); ++k) diff += tokens[k] != source[k];
      if (diff < best) {
        best = diff;
        tmpl = &templates_[idx];
      }
    }
  }
  if (!tmpl) throw BackendError("mock backend has no template for \"" + text + "\"", false);

  Tokens out = tmpl->target;
  std::vector<bool> changed(tokens.size(), false);
  for (std::size_t k = 0; k < tokens.size(); ++k) changed[k] = tokens[k] != tmpl->source[k];

  for (const auto& d : tmpl->directs) {
    if (changed[d.source_position]) {
      out[d.target_position] = d.prefix + tokens[d.source_position] + d.suffix;
    }
  }
  for (const auto& f : tmpl->flips) {
    std::string key;
    for (auto trigger : f.triggers) {
      if (!changed[trigger]) continue;
      key += tokens[trigger];
      key.push_back('\x1f');
    }
    if (key.empty()) continue;
    const std::string& base = tmpl->target[f.target_position];
    Tokens options;
    if (f.include_base) options.push_back(base);
    for (const auto& choice : f.choices) {
      if (choice != base) options.push_back(choice);
    }
    if (options.empty()) continue;
    out[f.target_position] = options[fnv1a(key) % options.size()];
  }
  return {join(out), out, std::nullopt};
}

std::vector<BackendResult> MockBackend::translate(std::span<const std::string> texts) {
  std::vector<BackendResult> out;
  out.reserve(texts.size());
  for (const auto& text : texts) out.push_back(translate_one(text));
  return out;
}

std::map<std::string, std::vector<double>> load_logprobs(const fs::path& path,
                                                         std::span<const std::string> sentence_ids,
                                                         std::span<const Tokens> mt_tokens) {
  if (sentence_ids.size() != mt_tokens.size()) {
    throw InvalidInput("load_logprobs: ids and token lists differ in length");
  }
  const auto lines = read_lines(path);
  if (lines.size() != sentence_ids.size()) {
    throw DataError("log-prob file " + path.string() + " has " + std::to_string(lines.size()) +
                    " lines, dataset has " + std::to_string(sentence_ids.size()) + " sentences");
  }
  std::map<std::string, std::vector<double>> out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::vector<double> values;
    for (const auto& field : split_whitespace(lines[i])) {
      double v = 0.0;
      const char* begin = field.data();
      const char* end = begin + field.size();
      if (*begin == '+') ++begin;
      auto [ptr, ec] = std::from_chars(begin, end, v);
      if (ec != std::errc() || ptr != end) {
        throw DataError("log-prob file line " + std::to_string(i + 1) + ": not a number: " + field);
      }
      values.push_back(v);
    }
    if (values.size() != mt_tokens[i].size()) {
      throw DataError("log-prob file line " + std::to_string(i + 1) + " has " +
                      std::to_string(values.size()) + " values for " +
                      std::to_string(mt_tokens[i].size()) + " MT tokens (sentence " +
                      sentence_ids[i] + ")");
    }
    out.emplace(sentence_ids[i], std::move(values));
  }
  return out;
}

}  // namespace pqe
