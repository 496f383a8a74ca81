#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "perturbqe/qe_core.hpp"

namespace pqe {

// BAD is the positive class.
struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t tn = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  std::size_t total() const { return tp + tn + fp + fn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o);
  bool operator==(const ConfusionCounts&) const = default;
};

ConfusionCounts confusion(const Labels& predicted, const Labels& gold);

// Pools all sentences into one matrix; sentence i's lengths must agree.
ConfusionCounts confusion(std::span<const Labels> predicted, std::span<const Labels> gold);

// Matthews correlation; 0 when any marginal is zero.
double mcc(const ConfusionCounts& counts);

// Per sentence, the target positions flagged by an external protocol.
using TargetedMask = std::vector<std::set<std::size_t>>;

struct TargetedScores {
  double recall = 0.0;
  double precision = 0.0;
};

TargetedScores targeted_scores(std::span<const Labels> predicted, const TargetedMask& mask);

// OK iff logprob > threshold.
Labels logprob_predict(std::span<const double> token_logprobs, double threshold);

// log2(0.45); the threshold tuned on en-de dev data.
double default_logprob_threshold();

struct HyperparameterGrid {
  std::vector<std::size_t> n;
  std::vector<double> c;
  std::vector<double> p;
  std::vector<std::size_t> t;
  std::vector<TargetMode> target_mode;
  std::vector<AlignerKind> aligner;
  std::vector<std::string> provider_id;

  std::size_t size() const;
  // Fills any empty axis with the corresponding value of `base`.
  HyperparameterGrid completed(const Hyperparameters& base) const;
};

void from_json(const nlohmann::json& j, HyperparameterGrid& g);
void to_json(nlohmann::json& j, const HyperparameterGrid& g);

// Aligned perturbation rows of one sentence, before classification.
struct AlignedSentence {
  std::string sentence_id;
  Tokens mt_tokens;
  std::vector<PerturbedRow> rows;
};

// Supplies aligned rows for the expensive prefix of the pipeline. Called once
// per distinct (target_mode, provider_id, n, aligner) combination.
using AlignedStageFn = std::function<std::vector<AlignedSentence>(
    TargetMode, const std::string& provider_id, std::size_t n, AlignerKind)>;

struct LeaderboardEntry {
  Hyperparameters hp;
  double mcc = 0.0;
  bool operator==(const LeaderboardEntry&) const = default;
};

void to_json(nlohmann::json& j, const LeaderboardEntry& e);
void from_json(const nlohmann::json& j, LeaderboardEntry& e);

struct GridSearchResult {
  Hyperparameters best;
  double best_mcc = 0.0;
  std::vector<LeaderboardEntry> leaderboard;
};

// Exhaustive sweep. MCC is pooled over the dev set; ties go to the smallest
// (t, c, p, target_mode, aligner, provider_id, n).
GridSearchResult grid_search(const HyperparameterGrid& grid, std::span<const Labels> gold,
                             const AlignedStageFn& stage);

void write_leaderboard(const std::vector<LeaderboardEntry>& leaderboard,
                       const std::filesystem::path& path);
std::vector<LeaderboardEntry> read_leaderboard(const std::filesystem::path& path);

}  // namespace pqe
