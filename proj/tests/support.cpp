#include "support.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <sstream>

#include "json.hpp"

namespace pqe::testing {

namespace fs = std::filesystem;

TempDir::TempDir() {
  std::random_device rd;
  const auto base = fs::temp_directory_path();
  for (;;) {
    path_ = base / ("pqe-test-" + std::to_string(rd()));
    if (fs::create_directories(path_)) break;
  }
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

std::set<std::size_t> PlantedCorpus::bad_at(std::size_t sentence, std::size_t t) const {
  std::set<std::size_t> out;
  for (std::size_t j = 0; j < influence[sentence].size(); ++j) {
    if (influence[sentence][j] > t) out.insert(j);
  }
  return out;
}

namespace {

const std::vector<std::string> kSyllables{"ba", "ko", "ti", "su", "me", "ra",
                                          "lu", "no", "pe", "di", "ga", "fo"};

// All words of `count` syllables, shuffled.
std::vector<std::string> words(std::size_t count, std::mt19937& rng) {
  std::vector<std::string> out{""};
  for (std::size_t k = 0; k < count; ++k) {
    std::vector<std::string> next;
    for (const auto& prefix : out) {
      for (const auto& s : kSyllables) next.push_back(prefix + s);
    }
    out = std::move(next);
  }
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

std::string capitalize(std::string w) {
  w[0] = static_cast<char>(w[0] - 'a' + 'A');
  return w;
}

std::string upper(std::string w) {
  for (auto& ch : w) ch = static_cast<char>(ch - 'a' + 'A');
  return w;
}

std::vector<std::size_t> sample(std::size_t k, std::size_t from, std::mt19937& rng) {
  std::vector<std::size_t> all(from);
  for (std::size_t i = 0; i < from; ++i) all[i] = i;
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(k);
  std::sort(all.begin(), all.end());
  return all;
}

void write(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
}

}  // namespace

PlantedCorpus make_planted_corpus(const fs::path& dir, const PlantedOptions& options) {
  std::mt19937 rng(options.seed);
  const auto source_vocab = words(3, rng);       // lowercase, 3 syllables
  const auto replacement_vocab = words(4, rng);  // lowercase, 4 syllables
  auto target_vocab = words(3, rng);
  for (auto& w : target_vocab) w = capitalize(w) + "t";
  auto flip_vocab = words(2, rng);
  for (auto& w : flip_vocab) w = upper(w);

  PlantedCorpus corpus;
  corpus.dir = dir;
  fs::create_directories(dir);

  std::string src, mt, tags, mask, lexicon;
  std::set<std::string> lexicon_done;
  nlohmann::json templates = nlohmann::json::array();
  std::size_t src_cursor = 0, tgt_cursor = 0, flip_cursor = 0, repl_cursor = 0;

  for (std::size_t s = 0; s < options.sentences; ++s) {
    const std::size_t words_in = 6 + rng() % 5;
    std::vector<std::string> source, target;
    for (std::size_t k = 0; k < words_in; ++k) {
      source.push_back(source_vocab[src_cursor++ % source_vocab.size()]);
      target.push_back(target_vocab[tgt_cursor++ % target_vocab.size()]);
    }
    source.push_back(".");
    target.push_back(".");

    std::vector<std::size_t> influence(target.size(), 0);
    std::vector<std::set<std::size_t>> influencers(target.size());
    nlohmann::json flips = nlohmann::json::array();
    nlohmann::json directs = nlohmann::json::array();

    // Three flip targets and two direct targets on distinct word positions.
    const auto slots = sample(5, words_in, rng);
    for (std::size_t f = 0; f < 3; ++f) {
      const std::size_t k = 1 + (s * 3 + f) % std::min(options.max_triggers, words_in);
      const auto triggers = sample(k, words_in, rng);
      std::vector<std::string> choices;
      for (int c = 0; c < 3; ++c) choices.push_back(flip_vocab[flip_cursor++ % flip_vocab.size()]);
      flips.push_back({{"target", slots[f]}, {"triggers", triggers}, {"choices", choices}, {"include_base", false}});
      influence[slots[f]] = k;
      influencers[slots[f]].insert(triggers.begin(), triggers.end());
    }
    for (std::size_t d = 3; d < 5; ++d) {
      directs.push_back({{"source", rng() % words_in}, {"target", slots[d]}, {"prefix", ""}, {"suffix", "en"}});
    }
    templates.push_back({{"source", source}, {"target", target}, {"flips", flips}, {"directs", directs}});

    for (std::size_t k = 0; k < words_in; ++k) {
      if (!lexicon_done.insert(source[k]).second) continue;
      lexicon += source[k];
      // Masked LMs often echo the original; the self-filter must drop it.
      if (k % 2 == 0) lexicon += "\t" + source[k];
      for (std::size_t r = 0; r < options.n + 2; ++r) {
        lexicon += "\t" + replacement_vocab[repl_cursor++ % replacement_vocab.size()];
      }
      lexicon += "\n";
    }

    auto join = [](const std::vector<std::string>& v) {
      std::string out;
      for (std::size_t i = 0; i < v.size(); ++i) out += (i ? " " : "") + v[i];
      return out;
    };
    src += join(source) + "\n";
    mt += join(target) + "\n";
    for (std::size_t j = 0; j < target.size(); ++j) {
      tags += std::string(j ? " " : "") + (influence[j] > options.t ? "BAD" : "OK");
      mask += std::string(j ? " " : "") + (influence[j] > options.t ? "1" : "0");
    }
    tags += "\n";
    mask += "\n";
    corpus.influence.push_back(std::move(influence));
    corpus.influencers.push_back(std::move(influencers));
    corpus.source_tokens.push_back(source);
    corpus.target_tokens.push_back(target);
  }

  write(dir / "src.txt", src);
  write(dir / "mt.txt", mt);
  write(dir / "tags.txt", tags);
  write(dir / "mask.txt", mask);
  write(dir / "lexicon.tsv", lexicon);
  write(dir / "mock.json", nlohmann::json{{"templates", templates}}.dump(1) + "\n");

  nlohmann::json config{
      {"dataset",
       {{"src", "src.txt"}, {"mt", "mt.txt"}, {"tags", "tags.txt"}, {"mask", "mask.txt"}, {"mt_pretokenized", true}}},
      {"backend", {{"kind", "mock"}, {"mock_rules", "mock.json"}}},
      {"providers", {{"lexicon", {{"kind", "lexicon"}, {"fixture", "lexicon.tsv"}}}}},
      {"hyperparameters",
       {{"n", options.n},
        {"c", 0.95},
        {"p", 0.9},
        {"t", options.t},
        {"target_mode", "all_words"},
        {"aligner", "tercom"},
        {"provider_id", "lexicon"}}},
      {"cache_dir", "cache"},
      {"output_dir", "out"},
      {"batch_size", 16},
      {"concurrency", 2}};
  corpus.config = dir / "config.json";
  write(corpus.config, config.dump(2) + "\n");
  return corpus;
}

}  // namespace pqe::testing
