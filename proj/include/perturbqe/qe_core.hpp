#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "perturbqe/text.hpp"

namespace pqe {

enum class TargetMode { ContentWords, AllWords, AllTokens };
enum class AlignerKind { Levenshtein, Tercom };

std::string to_string(TargetMode mode);
std::string to_string(AlignerKind kind);
TargetMode target_mode_from_string(std::string_view name);
AlignerKind aligner_from_string(std::string_view name);

// One pipeline configuration. All thresholds are strict:
//   Consistent    iff  matches / m  > c
//   DirectOutcome iff  distinct / m > p   (checked only when not Consistent)
//   BAD           iff  influence    > t
// where m is the number of variants actually observed for the row.
struct Hyperparameters {
  std::size_t n = 30;
  double c = 0.95;
  double p = 0.9;
  std::size_t t = 2;
  TargetMode target_mode = TargetMode::ContentWords;
  AlignerKind aligner = AlignerKind::Tercom;
  std::string provider_id = "roberta";

  // Throws InvalidInput when a field is out of range.
  void validate() const;

  bool operator==(const Hyperparameters&) const = default;
};

void to_json(nlohmann::json& j, const Hyperparameters& hp);
void from_json(const nlohmann::json& j, Hyperparameters& hp);

enum class ConsistencyLabel { Consistent, Inconsistent, DirectOutcome };
enum class QualityLabel { OK, BAD };

std::string to_string(ConsistencyLabel label);
std::string to_string(QualityLabel label);
QualityLabel quality_label_from_string(std::string_view name);

using Labels = std::vector<QualityLabel>;

// Classifies one (perturbed source word, original target word) cell from the
// tokens projected at that target position by every perturbation.
ConsistencyLabel classify_cell(const ProjectedToken& original,
                               std::span<const ProjectedToken> variants,
                               double c, double p);

// One perturbed source position with the projection of every perturbed
// translation onto the original translation.
struct PerturbedRow {
  std::size_t source_index = 0;
  Tokens replacements;
  // variants[k][j]: token projected at original position j by variant k.
  std::vector<std::vector<ProjectedToken>> variants;
};

struct ConsistencyMatrix {
  std::string sentence_id;
  std::vector<std::size_t> rows;          // perturbed source positions
  std::vector<std::size_t> cols;          // original translation positions
  std::vector<ConsistencyLabel> cells;    // row-major, rows.size() x cols.size()
  // variant_tables[i][j]: tokens observed at column j under row i.
  std::vector<std::vector<std::vector<ProjectedToken>>> variant_tables;
  std::vector<Tokens> row_replacements;
  std::vector<std::size_t> dropped_rows;  // source positions with too few variants

  ConsistencyLabel at(std::size_t row, std::size_t col) const {
    return cells[row * cols.size() + col];
  }
};

// Smallest row size kept when a provider returned fewer than n replacements.
inline constexpr std::size_t kMinShortfallVariants = 3;

ConsistencyMatrix build_consistency_matrix(std::string sentence_id,
                                           const Tokens& original_translation,
                                           const std::vector<PerturbedRow>& rows,
                                           const Hyperparameters& hp);

// Reclassifies an existing matrix under new thresholds, reusing its tables.
ConsistencyMatrix reclassify(const ConsistencyMatrix& matrix, const Tokens& original_translation,
                             double c, double p);

struct VariantCount {
  ProjectedToken token;
  std::size_t count = 0;
  bool operator==(const VariantCount&) const = default;
};

struct Influencer {
  std::size_t source_index = 0;
  std::vector<VariantCount> variants;  // distinct values, most frequent first
  bool operator==(const Influencer&) const = default;
};

struct WordVerdict {
  std::size_t target_index = 0;
  QualityLabel label = QualityLabel::OK;
  std::size_t influence_count = 0;
  std::vector<Influencer> influencers;  // ascending source_index
  bool operator==(const WordVerdict&) const = default;
};

std::vector<VariantCount> count_variants(std::span<const ProjectedToken> tokens);

std::vector<WordVerdict> predict_verdicts(const ConsistencyMatrix& matrix, std::size_t t);

}  // namespace pqe
