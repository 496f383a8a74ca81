#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "perturbqe/qe_core.hpp"
#include "perturbqe/text.hpp"

namespace pqe {

// Coarse part-of-speech tagset.
enum class PosTag { NOUN, VERB, ADJ, ADV, PRON, DET, ADP, NUM, CONJ, PRT, PUNCT, X };

std::string to_string(PosTag tag);
PosTag pos_tag_from_string(std::string_view name);
bool is_content_tag(PosTag tag);

struct TokenizedSentence {
  std::string sentence_id;
  Tokens tokens;
  std::optional<std::vector<PosTag>> tags;

  // Single-space join; the form sent to translation backends.
  std::string text() const { return join(tokens); }
};

std::vector<std::size_t> select_targets(const TokenizedSentence& sentence, TargetMode mode);

class PosTagger {
 public:
  virtual ~PosTagger() = default;
  virtual std::vector<PosTag> tag(const Tokens& tokens) const = 0;
};

// English lexicon + suffix-rule tagger. Good enough to pick content words;
// not a general-purpose tagger.
class LexiconTagger final : public PosTagger {
 public:
  std::vector<PosTag> tag(const Tokens& tokens) const override;
  PosTag tag_word(std::string_view token) const;
};

TokenizedSentence tag_pos(std::string_view text, const PosTagger& tagger = LexiconTagger{});

// Source of masked-LM style substitutes for one position.
class ReplacementProvider {
 public:
  virtual ~ReplacementProvider() = default;
  // Candidates in descending preference. Implementations must be safe to call
  // concurrently.
  virtual Tokens candidates(std::span<const std::string> tokens, std::size_t mask_index,
                            std::size_t n) const = 0;
};

// token -> candidates table; fixture format is `token TAB cand1 TAB cand2 ...`.
class StaticLexicon final : public ReplacementProvider {
 public:
  StaticLexicon() = default;
  explicit StaticLexicon(std::map<std::string, Tokens> table) : table_(std::move(table)) {}

  static StaticLexicon load(const std::filesystem::path& path);
  static StaticLexicon parse(std::string_view content);

  Tokens candidates(std::span<const std::string> tokens, std::size_t mask_index,
                    std::size_t n) const override;

  const std::map<std::string, Tokens>& table() const { return table_; }

 private:
  std::map<std::string, Tokens> table_;
};

// Client for the `/unmask` endpoint of a model adapter.
class RemoteMaskedLM final : public ReplacementProvider {
 public:
  explicit RemoteMaskedLM(std::string endpoint,
                          std::chrono::seconds timeout = std::chrono::seconds(120));

  Tokens candidates(std::span<const std::string> tokens, std::size_t mask_index,
                    std::size_t n) const override;

  static std::string encode_request(std::span<const std::string> tokens, std::size_t mask_index,
                                    std::size_t n);
  static Tokens decode_response(std::string_view body);

 private:
  std::string endpoint_;
  std::chrono::seconds timeout_;
};

struct PerturbationSet {
  std::size_t source_index = 0;
  Tokens replacements;
  std::vector<Tokens> variants;

  bool empty() const { return replacements.empty(); }
};

// Keeps at most n provider candidates that are single, non-blank tokens and
// differ from the original under NFC + case folding. Duplicates are skipped.
PerturbationSet generate_replacements(const TokenizedSentence& sentence, std::size_t position,
                                      std::size_t n, const ReplacementProvider& provider);

// One line per sentence, space-separated coarse tags.
std::vector<std::vector<PosTag>> parse_pos_lines(std::span<const std::string> lines);

}  // namespace pqe
