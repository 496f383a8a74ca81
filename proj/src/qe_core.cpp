#include "perturbqe/qe_core.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "perturbqe/errors.hpp"

namespace pqe {

std::string to_string(TargetMode mode) {
  switch (mode) {
    case TargetMode::ContentWords: return "content_words";
    case TargetMode::AllWords: return "all_words";
    case TargetMode::AllTokens: return "all_tokens";
  }
  return "content_words";
}

std::string to_string(AlignerKind kind) {
  return kind == AlignerKind::Levenshtein ? "levenshtein" : "tercom";
}

TargetMode target_mode_from_string(std::string_view name) {
  if (name == "content_words") return TargetMode::ContentWords;
  if (name == "all_words") return TargetMode::AllWords;
  if (name == "all_tokens") return TargetMode::AllTokens;
  throw InvalidInput("unknown target mode: " + std::string(name));
}

AlignerKind aligner_from_string(std::string_view name) {
  if (name == "levenshtein") return AlignerKind::Levenshtein;
  if (name == "tercom") return AlignerKind::Tercom;
  throw InvalidInput("unknown aligner: " + std::string(name));
}

void Hyperparameters::validate() const {
  if (n < 1) throw InvalidInput("n must be >= 1");
  if (!(c >= 0.0 && c <= 1.0)) throw InvalidInput("c must lie in [0, 1]");
  if (!(p >= 0.0 && p <= 1.0)) throw InvalidInput("p must lie in [0, 1]");
}

void to_json(nlohmann::json& j, const Hyperparameters& hp) {
  j = nlohmann::json{{"n", hp.n},
                     {"c", hp.c},
                     {"p", hp.p},
                     {"t", hp.t},
                     {"target_mode", to_string(hp.target_mode)},
                     {"aligner", to_string(hp.aligner)},
                     {"provider_id", hp.provider_id}};
}

void from_json(const nlohmann::json& j, Hyperparameters& hp) {
  Hyperparameters out;
  if (j.contains("n")) {
    if (j.at("n").get<long long>() < 1) throw InvalidInput("n must be >= 1");
    out.n = j.at("n").get<std::size_t>();
  }
  if (j.contains("c")) out.c = j.at("c").get<double>();
  if (j.contains("p")) out.p = j.at("p").get<double>();
  if (j.contains("t")) {
    if (j.at("t").get<long long>() < 0) throw InvalidInput("t must be >= 0");
    out.t = j.at("t").get<std::size_t>();
  }
  if (j.contains("target_mode")) out.target_mode = target_mode_from_string(j.at("target_mode").get<std::string>());
  if (j.contains("aligner")) out.aligner = aligner_from_string(j.at("aligner").get<std::string>());
  if (j.contains("provider_id")) out.provider_id = j.at("provider_id").get<std::string>();
  out.validate();
  hp = std::move(out);
}

std::string to_string(ConsistencyLabel label) {
  switch (label) {
    case ConsistencyLabel::Consistent: return "consistent";
    case ConsistencyLabel::Inconsistent: return "inconsistent";
    case ConsistencyLabel::DirectOutcome: return "direct_outcome";
  }
  return "consistent";
}

std::string to_string(QualityLabel label) { return label == QualityLabel::OK ? "OK" : "BAD"; }

QualityLabel quality_label_from_string(std::string_view name) {
  if (name == "OK") return QualityLabel::OK;
  if (name == "BAD") return QualityLabel::BAD;
  throw InvalidInput("not an OK/BAD tag: " + std::string(name));
}

ConsistencyLabel classify_cell(const ProjectedToken& original,
                               std::span<const ProjectedToken> variants, double c, double p) {
  if (variants.empty()) throw InvalidInput("classify_cell: empty variant list");
  const auto m = static_cast<double>(variants.size());
  const auto same = static_cast<double>(std::count(variants.begin(), variants.end(), original));
  if (same / m > c) return ConsistencyLabel::Consistent;
  const std::set<ProjectedToken> distinct(variants.begin(), variants.end());
  if (static_cast<double>(distinct.size()) / m > p) return ConsistencyLabel::DirectOutcome;
  return ConsistencyLabel::Inconsistent;
}

namespace {

void classify_all(ConsistencyMatrix& matrix, const Tokens& original, double c, double p) {
  matrix.cells.assign(matrix.rows.size() * matrix.cols.size(), ConsistencyLabel::Consistent);
  for (std::size_t i = 0; i < matrix.rows.size(); ++i) {
    for (std::size_t j = 0; j < matrix.cols.size(); ++j) {
      matrix.cells[i * matrix.cols.size() + j] =
          classify_cell(ProjectedToken{original[j]}, matrix.variant_tables[i][j], c, p);
    }
  }
}

}  // namespace

ConsistencyMatrix build_consistency_matrix(std::string sentence_id,
                                           const Tokens& original_translation,
                                           const std::vector<PerturbedRow>& rows,
                                           const Hyperparameters& hp) {
  hp.validate();
  ConsistencyMatrix matrix;
  matrix.sentence_id = std::move(sentence_id);
  const std::size_t width = original_translation.size();
  for (std::size_t j = 0; j < width; ++j) matrix.cols.push_back(j);

  const std::size_t keep_at_least = std::min(hp.n, kMinShortfallVariants);
  for (const auto& row : rows) {
    const std::size_t m = row.variants.size();
    if (m > hp.n) {
      throw InvalidInput("row for source position " + std::to_string(row.source_index) + " has " +
                         std::to_string(m) + " variants, expected at most n=" + std::to_string(hp.n));
    }
    if (m == 0 || m < keep_at_least) {
      matrix.dropped_rows.push_back(row.source_index);
      continue;
    }
    std::vector<std::vector<ProjectedToken>> table(width);
    for (const auto& variant : row.variants) {
      if (variant.size() != width) {
        throw InvalidInput("aligned variant for source position " +
                           std::to_string(row.source_index) + " has " +
                           std::to_string(variant.size()) + " positions, expected " +
                           std::to_string(width));
      }
      for (std::size_t j = 0; j < width; ++j) table[j].push_back(variant[j]);
    }
    matrix.rows.push_back(row.source_index);
    matrix.row_replacements.push_back(row.replacements);
    matrix.variant_tables.push_back(std::move(table));
  }
  classify_all(matrix, original_translation, hp.c, hp.p);
  return matrix;
}

ConsistencyMatrix reclassify(const ConsistencyMatrix& matrix, const Tokens& original_translation,
                             double c, double p) {
  if (original_translation.size() != matrix.cols.size()) {
    throw InvalidInput("reclassify: translation length does not match matrix columns");
  }
  ConsistencyMatrix out = matrix;
  classify_all(out, original_translation, c, p);
  return out;
}

std::vector<VariantCount> count_variants(std::span<const ProjectedToken> tokens) {
  std::map<ProjectedToken, std::size_t> counts;
  for (const auto& t : tokens) ++counts[t];
  std::vector<VariantCount> out;
  out.reserve(counts.size());
  for (const auto& [token, count] : counts) out.push_back({token, count});
  std::stable_sort(out.begin(), out.end(), [](const VariantCount& a, const VariantCount& b) {
    if (a.count != b.count) return a.count > b.count;
    if (a.token.has_value() != b.token.has_value()) return a.token.has_value();
    return a.token < b.token;
  });
  return out;
}

std::vector<WordVerdict> predict_verdicts(const ConsistencyMatrix& matrix, std::size_t t) {
  const std::size_t rows = matrix.rows.size();
  const std::size_t cols = matrix.cols.size();
  if (matrix.cells.size() != rows * cols || matrix.variant_tables.size() != rows) {
    throw InvalidInput("predict_verdicts: malformed consistency matrix");
  }
  // Row order must not matter: visit rows by ascending source position.
  std::vector<std::size_t> order(rows);
  for (std::size_t i = 0; i < rows; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return matrix.rows[a] < matrix.rows[b]; });

  std::vector<WordVerdict> verdicts;
  verdicts.reserve(cols);
  for (std::size_t j = 0; j < cols; ++j) {
    WordVerdict verdict;
    verdict.target_index = matrix.cols[j];
    for (std::size_t i : order) {
      if (matrix.at(i, j) != ConsistencyLabel::Inconsistent) continue;
      if (matrix.variant_tables[i].size() != cols) {
        throw InvalidInput("predict_verdicts: variant table width mismatch");
      }
      verdict.influencers.push_back({matrix.rows[i], count_variants(matrix.variant_tables[i][j])});
    }
    verdict.influence_count = verdict.influencers.size();
    verdict.label = verdict.influence_count > t ? QualityLabel::BAD : QualityLabel::OK;
    verdicts.push_back(std::move(verdict));
  }
  return verdicts;
}

}  // namespace pqe
