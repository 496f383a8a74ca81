#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

namespace pqe::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

struct PlantedOptions {
  std::size_t sentences = 200;
  std::size_t n = 10;
  std::size_t t = 2;  // gold tags mark tokens with more than t planted influencers
  std::uint32_t seed = 7;
  std::size_t max_triggers = 5;
};

// A synthetic corpus with a mock backend whose influencer sets are known:
// every flip-rule target is influenced by exactly its trigger positions,
// every direct-rule target is a direct outcome, everything else is fixed.
struct PlantedCorpus {
  std::filesystem::path config;  // ready-to-run JSON config
  std::filesystem::path dir;
  // influence[s][j]: number of planted influencers of target token j.
  std::vector<std::vector<std::size_t>> influence;
  // influencers[s][j]: the planted source positions.
  std::vector<std::vector<std::set<std::size_t>>> influencers;
  std::vector<std::vector<std::string>> source_tokens;
  std::vector<std::vector<std::string>> target_tokens;

  std::set<std::size_t> bad_at(std::size_t sentence, std::size_t t) const;
};

// Writes src/mt/tags/mask files, the lexicon fixture, mock rules and a
// config (all_words targets, the given n and t, tercom) into `dir`.
PlantedCorpus make_planted_corpus(const std::filesystem::path& dir, const PlantedOptions& options = {});

std::string slurp(const std::filesystem::path& path);

}  // namespace pqe::testing
