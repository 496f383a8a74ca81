#include "perturbqe/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <tuple>

#include "perturbqe/data_io.hpp"
#include "perturbqe/errors.hpp"

namespace pqe {

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) {
  tp += o.tp;
  tn += o.tn;
  fp += o.fp;
  fn += o.fn;
  return *this;
}

ConfusionCounts confusion(const Labels& predicted, const Labels& gold) {
  if (predicted.size() != gold.size()) {
    throw InvalidInput("confusion: " + std::to_string(predicted.size()) + " predicted vs " +
                       std::to_string(gold.size()) + " gold labels");
  }
  ConfusionCounts counts;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const bool pred_bad = predicted[i] == QualityLabel::BAD;
    const bool gold_bad = gold[i] == QualityLabel::BAD;
    if (pred_bad && gold_bad) ++counts.tp;
    else if (!pred_bad && !gold_bad) ++counts.tn;
    else if (pred_bad) ++counts.fp;
    else ++counts.fn;
  }
  return counts;
}

ConfusionCounts confusion(std::span<const Labels> predicted, std::span<const Labels> gold) {
  if (predicted.size() != gold.size()) {
    throw InvalidInput("confusion: " + std::to_string(predicted.size()) + " predicted vs " +
                       std::to_string(gold.size()) + " gold sentences");
  }
  ConfusionCounts total;
  for (std::size_t s = 0; s < predicted.size(); ++s) {
    if (predicted[s].size() != gold[s].size()) {
      throw InvalidInput("confusion: length mismatch in sentence " + std::to_string(s) + " (" +
                         std::to_string(predicted[s].size()) + " predicted vs " +
                         std::to_string(gold[s].size()) + " gold)");
    }
    total += confusion(predicted[s], gold[s]);
  }
  return total;
}

double mcc(const ConfusionCounts& k) {
  const double tp = static_cast<double>(k.tp);
  const double tn = static_cast<double>(k.tn);
  const double fp = static_cast<double>(k.fp);
  const double fn = static_cast<double>(k.fn);
  const double a = tp + fp, b = tp + fn, c = tn + fp, d = tn + fn;
  if (a == 0 || b == 0 || c == 0 || d == 0) return 0.0;
  const double value = (tp * tn - fp * fn) / (std::sqrt(a) * std::sqrt(b) * std::sqrt(c) * std::sqrt(d));
  return std::clamp(value, -1.0, 1.0);
}

TargetedScores targeted_scores(std::span<const Labels> predicted, const TargetedMask& mask) {
  if (mask.size() != predicted.size()) {
    throw InvalidInput("targeted_scores: mask covers " + std::to_string(mask.size()) +
                       " sentences, predictions " + std::to_string(predicted.size()));
  }
  std::size_t masked = 0, masked_bad = 0, bad = 0;
  for (std::size_t s = 0; s < predicted.size(); ++s) {
    for (std::size_t idx : mask[s]) {
      if (idx >= predicted[s].size()) {
        throw InvalidInput("targeted_scores: mask index " + std::to_string(idx) +
                           " out of range in sentence " + std::to_string(s));
      }
      ++masked;
      if (predicted[s][idx] == QualityLabel::BAD) ++masked_bad;
    }
    bad += static_cast<std::size_t>(std::count(predicted[s].begin(), predicted[s].end(), QualityLabel::BAD));
  }
  TargetedScores scores;
  if (masked) scores.recall = static_cast<double>(masked_bad) / static_cast<double>(masked);
  if (bad) scores.precision = static_cast<double>(masked_bad) / static_cast<double>(bad);
  return scores;
}

Labels logprob_predict(std::span<const double> token_logprobs, double threshold) {
  Labels out;
  out.reserve(token_logprobs.size());
  for (double lp : token_logprobs) out.push_back(lp > threshold ? QualityLabel::OK : QualityLabel::BAD);
  return out;
}

double default_logprob_threshold() { return std::log2(0.45); }

std::size_t HyperparameterGrid::size() const {
  return n.size() * c.size() * p.size() * t.size() * target_mode.size() * aligner.size() *
         provider_id.size();
}

HyperparameterGrid HyperparameterGrid::completed(const Hyperparameters& base) const {
  HyperparameterGrid g = *this;
  if (g.n.empty()) g.n = {base.n};
  if (g.c.empty()) g.c = {base.c};
  if (g.p.empty()) g.p = {base.p};
  if (g.t.empty()) g.t = {base.t};
  if (g.target_mode.empty()) g.target_mode = {base.target_mode};
  if (g.aligner.empty()) g.aligner = {base.aligner};
  if (g.provider_id.empty()) g.provider_id = {base.provider_id};
  return g;
}

void from_json(const nlohmann::json& j, HyperparameterGrid& g) {
  g = {};
  if (j.contains("n")) g.n = j.at("n").get<std::vector<std::size_t>>();
  if (j.contains("c")) g.c = j.at("c").get<std::vector<double>>();
  if (j.contains("p")) g.p = j.at("p").get<std::vector<double>>();
  if (j.contains("t")) g.t = j.at("t").get<std::vector<std::size_t>>();
  if (j.contains("target_mode")) {
    for (const auto& m : j.at("target_mode")) g.target_mode.push_back(target_mode_from_string(m.get<std::string>()));
  }
  if (j.contains("aligner")) {
    for (const auto& a : j.at("aligner")) g.aligner.push_back(aligner_from_string(a.get<std::string>()));
  }
  if (j.contains("provider_id")) g.provider_id = j.at("provider_id").get<std::vector<std::string>>();
}

void to_json(nlohmann::json& j, const HyperparameterGrid& g) {
  j = nlohmann::json{{"n", g.n}, {"c", g.c}, {"p", g.p}, {"t", g.t}, {"provider_id", g.provider_id}};
  auto modes = nlohmann::json::array();
  for (auto m : g.target_mode) modes.push_back(to_string(m));
  auto aligners = nlohmann::json::array();
  for (auto a : g.aligner) aligners.push_back(to_string(a));
  j["target_mode"] = std::move(modes);
  j["aligner"] = std::move(aligners);
}

void to_json(nlohmann::json& j, const LeaderboardEntry& e) {
  j = nlohmann::json(e.hp);
  j["mcc"] = e.mcc;
}

void from_json(const nlohmann::json& j, LeaderboardEntry& e) {
  e.hp = j.get<Hyperparameters>();
  e.mcc = j.at("mcc").get<double>();
}

namespace {

auto tie_key(const Hyperparameters& hp) {
  return std::tuple(hp.t, hp.c, hp.p, static_cast<int>(hp.target_mode), static_cast<int>(hp.aligner),
                    hp.provider_id, hp.n);
}

}  // namespace

GridSearchResult grid_search(const HyperparameterGrid& grid, std::span<const Labels> gold,
                             const AlignedStageFn& stage) {
  if (grid.size() == 0) throw InvalidInput("grid_search: empty grid");
  GridSearchResult result;
  for (TargetMode mode : grid.target_mode) {
    for (const auto& provider_id : grid.provider_id) {
      for (std::size_t n : grid.n) {
        for (AlignerKind aligner : grid.aligner) {
          const std::vector<AlignedSentence> aligned = stage(mode, provider_id, n, aligner);
          if (aligned.size() != gold.size()) {
            throw DataError("grid_search: stage produced " + std::to_string(aligned.size()) +
                            " sentences for " + std::to_string(gold.size()) + " gold lines");
          }
          Hyperparameters hp;
          hp.n = n;
          hp.target_mode = mode;
          hp.aligner = aligner;
          hp.provider_id = provider_id;
          // Tables are built once per prefix; c/p sweeps only reclassify.
          std::vector<ConsistencyMatrix> base;
          base.reserve(aligned.size());
          for (const auto& s : aligned) {
            base.push_back(build_consistency_matrix(s.sentence_id, s.mt_tokens, s.rows, hp));
          }
          for (double c : grid.c) {
            for (double p : grid.p) {
              hp.c = c;
              hp.p = p;
              hp.validate();
              std::vector<ConsistencyMatrix> matrices;
              matrices.reserve(base.size());
              for (std::size_t s = 0; s < base.size(); ++s) {
                matrices.push_back(reclassify(base[s], aligned[s].mt_tokens, c, p));
              }
              for (std::size_t t : grid.t) {
                hp.t = t;
                std::vector<Labels> predicted;
                predicted.reserve(matrices.size());
                for (const auto& m : matrices) {
                  const auto verdicts = predict_verdicts(m, t);
                  predicted.push_back(labels_of(verdicts));
                }
                result.leaderboard.push_back({hp, mcc(confusion(predicted, gold))});
              }
            }
          }
        }
      }
    }
  }

  const LeaderboardEntry* best = &result.leaderboard.front();
  for (const auto& entry : result.leaderboard) {
    if (entry.mcc > best->mcc || (entry.mcc == best->mcc && tie_key(entry.hp) < tie_key(best->hp))) {
      best = &entry;
    }
  }
  result.best = best->hp;
  result.best_mcc = best->mcc;
  return result;
}

void write_leaderboard(const std::vector<LeaderboardEntry>& leaderboard,
                       const std::filesystem::path& path) {
  std::string content;
  for (const auto& e : leaderboard) content += nlohmann::json(e).dump() + "\n";
  write_text_file(path, content);
}

std::vector<LeaderboardEntry> read_leaderboard(const std::filesystem::path& path) {
  std::vector<LeaderboardEntry> out;
  for (const auto& line : read_lines(path)) {
    if (line.empty()) continue;
    out.push_back(nlohmann::json::parse(line).get<LeaderboardEntry>());
  }
  return out;
}

}  // namespace pqe
