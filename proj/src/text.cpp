#include "perturbqe/text.hpp"

#include <algorithm>
#include <array>
#include <cstdint>

#include <openssl/evp.h>
#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/uscript.h>
#include <unicode/unistr.h>
#include <unicode/utf8.h>

#include "perturbqe/errors.hpp"

namespace pqe {

namespace {

template <typename Fn>
void for_each_code_point(std::string_view text, Fn&& fn) {
  const auto* s = reinterpret_cast<const uint8_t*>(text.data());
  const auto length = static_cast<int32_t>(text.size());
  int32_t i = 0;
  while (i < length) {
    const int32_t begin = i;
    UChar32 c;
    U8_NEXT(s, i, length, c);
    if (!fn(c, text.substr(begin, i - begin))) return;
  }
}

bool is_cjk(UChar32 c) {
  UErrorCode status = U_ZERO_ERROR;
  const UScriptCode script = uscript_getScript(c, &status);
  if (U_FAILURE(status)) return false;
  return script == USCRIPT_HAN || script == USCRIPT_HIRAGANA || script == USCRIPT_KATAKANA;
}

bool is_space(UChar32 c) { return c >= 0 && u_isUWhiteSpace(c); }

}  // namespace

std::string normalize(std::string_view text, ComparisonPolicy policy) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) throw InternalError("ICU NFC normalizer unavailable");
  icu::UnicodeString unicode =
      icu::UnicodeString::fromUTF8(icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
  if (policy.fold_case) unicode.foldCase();
  icu::UnicodeString normalized = nfc->normalize(unicode, status);
  if (U_FAILURE(status)) throw InvalidInput("cannot normalize token: " + std::string(text));
  std::string out;
  normalized.toUTF8String(out);
  return out;
}

std::string replacement_key(std::string_view token) {
  return normalize(token, ComparisonPolicy{.fold_case = true});
}

Tokens normalize_all(const Tokens& tokens, ComparisonPolicy policy) {
  Tokens out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(normalize(t, policy));
  return out;
}

Tokens split_whitespace(std::string_view text) {
  Tokens out;
  std::string current;
  for_each_code_point(text, [&](UChar32 c, std::string_view bytes) {
    if (is_space(c)) {
      if (!current.empty()) out.push_back(std::move(current));
      current.clear();
    } else {
      current.append(bytes);
    }
    return true;
  });
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

std::string join(const Tokens& tokens, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.append(sep);
    out.append(tokens[i]);
  }
  return out;
}

bool has_letter_or_digit(std::string_view token) {
  bool found = false;
  for_each_code_point(token, [&](UChar32 c, std::string_view) {
    if (c >= 0 && u_isalnum(c)) found = true;
    return !found;
  });
  return found;
}

bool is_punctuation(std::string_view token) {
  if (token.empty()) return false;
  bool all = true;
  for_each_code_point(token, [&](UChar32 c, std::string_view) {
    const auto mask = U_MASK(u_charType(c));
    if (c < 0 || (mask & (U_GC_P_MASK | U_GC_S_MASK)) == 0) all = false;
    return all;
  });
  return all;
}

bool is_blank(std::string_view token) {
  bool blank = true;
  for_each_code_point(token, [&](UChar32 c, std::string_view) {
    if (!is_space(c)) blank = false;
    return blank;
  });
  return blank;
}

bool contains_cjk(std::string_view text) {
  bool found = false;
  for_each_code_point(text, [&](UChar32 c, std::string_view) {
    if (c >= 0 && is_cjk(c)) found = true;
    return !found;
  });
  return found;
}

Tokens segment_target(std::string_view text, Segmentation mode) {
  Tokens words = split_whitespace(text);
  if (mode == Segmentation::Whitespace) return words;
  Tokens out;
  for (const auto& word : words) {
    if (mode == Segmentation::Auto && !contains_cjk(word)) {
      out.push_back(word);
      continue;
    }
    std::string run;
    for_each_code_point(word, [&](UChar32 c, std::string_view bytes) {
      if (mode == Segmentation::Character || (c >= 0 && is_cjk(c))) {
        if (!run.empty()) out.push_back(std::move(run));
        run.clear();
        out.emplace_back(bytes);
      } else {
        run.append(bytes);
      }
      return true;
    });
    if (!run.empty()) out.push_back(std::move(run));
  }
  return out;
}

Segmentation segmentation_from_string(std::string_view name) {
  if (name == "auto") return Segmentation::Auto;
  if (name == "whitespace") return Segmentation::Whitespace;
  if (name == "character") return Segmentation::Character;
  throw InvalidInput("unknown segmentation: " + std::string(name));
}

std::string to_string(Segmentation mode) {
  switch (mode) {
    case Segmentation::Auto: return "auto";
    case Segmentation::Whitespace: return "whitespace";
    case Segmentation::Character: return "character";
  }
  return "auto";
}

namespace {

constexpr std::array<std::string_view, 7> kClitics = {"n't", "'s", "'re", "'ve", "'ll", "'d", "'m"};

bool is_punct_cp(UChar32 c) {
  return c >= 0 && (u_ispunct(c) || u_charType(c) == U_MATH_SYMBOL ||
                    u_charType(c) == U_CURRENCY_SYMBOL);
}

bool ends_with_ci(std::string_view word, std::string_view suffix) {
  if (word.size() <= suffix.size()) return false;
  auto tail = word.substr(word.size() - suffix.size());
  for (std::size_t i = 0; i < suffix.size(); ++i) {
    char a = tail[i];
    if (a >= 'A' && a <= 'Z') a = static_cast<char>(a - 'A' + 'a');
    if (a != suffix[i]) return false;
  }
  return true;
}

}  // namespace

Tokens tokenize_words(std::string_view text) {
  Tokens out;
  for (const auto& chunk : split_whitespace(text)) {
    if (std::find(kClitics.begin(), kClitics.end(), std::string_view(chunk)) != kClitics.end()) {
      out.push_back(chunk);
      continue;
    }
    std::vector<std::string_view> cps;
    std::vector<bool> punct;
    for_each_code_point(chunk, [&](UChar32 c, std::string_view bytes) {
      cps.push_back(bytes);
      punct.push_back(is_punct_cp(c));
      return true;
    });
    std::size_t begin = 0;
    std::size_t end = cps.size();
    while (begin < end && punct[begin]) out.emplace_back(cps[begin++]);
    Tokens trailing;
    while (end > begin && punct[end - 1]) {
      trailing.emplace_back(cps[--end]);
    }
    std::string core;
    for (std::size_t i = begin; i < end; ++i) core.append(cps[i]);
    if (!core.empty()) {
      std::string_view clitic;
      for (auto candidate : kClitics) {
        if (ends_with_ci(core, candidate)) {
          clitic = candidate;
          break;
        }
      }
      if (!clitic.empty()) {
        out.push_back(core.substr(0, core.size() - clitic.size()));
        out.push_back(core.substr(core.size() - clitic.size()));
      } else {
        out.push_back(std::move(core));
      }
    }
    for (auto it = trailing.rbegin(); it != trailing.rend(); ++it) out.push_back(*it);
  }
  return out;
}

std::string sha256_hex(std::string_view data) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int length = 0;
  if (EVP_Digest(data.data(), data.size(), digest.data(), &length, EVP_sha256(), nullptr) != 1) {
    throw InternalError("sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(length * 2);
  for (unsigned int i = 0; i < length; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

}  // namespace pqe
