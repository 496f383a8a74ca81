#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace pqe {

using Tokens = std::vector<std::string>;

// A token projected onto an original-translation position. std::nullopt is the
// empty sentinel: distinct from every real token, including "".
using ProjectedToken = std::optional<std::string>;

struct ComparisonPolicy {
  bool fold_case = false;
};

// NFC normalization, plus Unicode case folding when requested.
std::string normalize(std::string_view text, ComparisonPolicy policy = {});

// Key used for the self-replacement filter: always NFC + case fold.
std::string replacement_key(std::string_view token);

Tokens normalize_all(const Tokens& tokens, ComparisonPolicy policy);

Tokens split_whitespace(std::string_view text);
std::string join(const Tokens& tokens, std::string_view sep = " ");

bool has_letter_or_digit(std::string_view token);
bool is_punctuation(std::string_view token);
bool is_blank(std::string_view token);
bool contains_cjk(std::string_view text);

enum class Segmentation { Auto, Whitespace, Character };

// Whitespace split; under Auto/Character, runs of Han/Hiragana/Katakana are
// further split into single characters. Character additionally splits every
// non-space code point.
Tokens segment_target(std::string_view text, Segmentation mode);

Segmentation segmentation_from_string(std::string_view name);
std::string to_string(Segmentation mode);

// Splits raw text into words and punctuation marks; English clitics
// ('s, n't, 're, ...) become separate tokens.
Tokens tokenize_words(std::string_view text);

std::string sha256_hex(std::string_view data);

}  // namespace pqe
