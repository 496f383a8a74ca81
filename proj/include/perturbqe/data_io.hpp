#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "perturbqe/perturbation.hpp"
#include "perturbqe/qe_core.hpp"
#include "perturbqe/text.hpp"

namespace pqe {

struct DatasetPaths {
  std::filesystem::path src;
  std::filesystem::path mt;
  std::optional<std::filesystem::path> tags;
  std::optional<std::filesystem::path> mask;
  std::optional<std::filesystem::path> pos;
  // MT lines are already word-segmented; split on whitespace only.
  bool mt_pretokenized = false;
  Segmentation segmentation = Segmentation::Auto;
};

struct QESentence {
  std::string id;
  std::string source_text;
  Tokens source_tokens;
  std::string mt_text;
  Tokens mt_tokens;
  std::optional<Labels> gold;
  std::optional<std::set<std::size_t>> mask;
  std::optional<std::vector<PosTag>> pos;
};

struct QEDataset {
  std::vector<QESentence> sentences;

  bool has_gold() const;
  bool has_mask() const;
  std::vector<std::string> ids() const;
};

// Reads a UTF-8 file as LF-separated lines (a trailing CR is stripped; the
// final newline does not start an extra line).
std::vector<std::string> read_lines(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view content);
std::string read_text_file(const std::filesystem::path& path);

// OK/BAD tags for `token_count` words. A line of 2k+1 tags is read as
// gap-interleaved and reduced to its odd positions.
Labels parse_tag_line(std::string_view line, std::size_t token_count, std::string_view sentence_id);

std::set<std::size_t> parse_mask_line(std::string_view line, std::size_t token_count,
                                      std::string_view sentence_id);

QEDataset load_dataset(const DatasetPaths& paths);

void write_predictions(std::span<const Labels> labels, const std::filesystem::path& path);
std::vector<Labels> read_predictions(const std::filesystem::path& path);
Labels labels_of(std::span<const WordVerdict> verdicts);

struct ExplainedInfluencer {
  std::size_t source_index = 0;
  std::string source_token;
  std::vector<VariantCount> variants;
  bool operator==(const ExplainedInfluencer&) const = default;
};

struct ExplainedToken {
  std::size_t index = 0;
  std::string token;
  QualityLabel label = QualityLabel::OK;
  std::size_t influence_count = 0;
  std::vector<ExplainedInfluencer> influencers;
  bool operator==(const ExplainedToken&) const = default;
};

struct ExplanationRecord {
  std::string sentence_id;
  Tokens source_tokens;
  std::vector<ExplainedToken> tokens;
  bool operator==(const ExplanationRecord&) const = default;
};

void to_json(nlohmann::json& j, const ExplanationRecord& r);
void from_json(const nlohmann::json& j, ExplanationRecord& r);

ExplanationRecord make_explanation(std::string sentence_id, const Tokens& source_tokens,
                                   const Tokens& target_tokens,
                                   std::span<const WordVerdict> verdicts);

enum class ReportFormat { Json, Html };

std::string render_html(std::span<const ExplanationRecord> records);
void emit_explanations(std::span<const ExplanationRecord> records, ReportFormat format,
                       const std::filesystem::path& path);
std::vector<ExplanationRecord> read_explanations(const std::filesystem::path& path);

}  // namespace pqe
