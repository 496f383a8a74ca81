#include "perturbqe/perturbation.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <unordered_map>

#include "perturbqe/data_io.hpp"
#include "perturbqe/errors.hpp"

namespace pqe {

std::string to_string(PosTag tag) {
  switch (tag) {
    case PosTag::NOUN: return "NOUN";
    case PosTag::VERB: return "VERB";
    case PosTag::ADJ: return "ADJ";
    case PosTag::ADV: return "ADV";
    case PosTag::PRON: return "PRON";
    case PosTag::DET: return "DET";
    case PosTag::ADP: return "ADP";
    case PosTag::NUM: return "NUM";
    case PosTag::CONJ: return "CONJ";
    case PosTag::PRT: return "PRT";
    case PosTag::PUNCT: return "PUNCT";
    case PosTag::X: return "X";
  }
  return "X";
}

PosTag pos_tag_from_string(std::string_view name) {
  static const std::unordered_map<std::string_view, PosTag> kNames = {
      {"NOUN", PosTag::NOUN}, {"VERB", PosTag::VERB}, {"ADJ", PosTag::ADJ},
      {"ADV", PosTag::ADV},   {"PRON", PosTag::PRON}, {"DET", PosTag::DET},
      {"ADP", PosTag::ADP},   {"NUM", PosTag::NUM},   {"CONJ", PosTag::CONJ},
      {"PRT", PosTag::PRT},   {"PUNCT", PosTag::PUNCT}, {".", PosTag::PUNCT},
      {"X", PosTag::X}};
  auto it = kNames.find(name);
  if (it == kNames.end()) throw DataError("unknown POS tag: " + std::string(name));
  return it->second;
}

bool is_content_tag(PosTag tag) {
  return tag == PosTag::NOUN || tag == PosTag::VERB || tag == PosTag::ADJ || tag == PosTag::ADV ||
         tag == PosTag::PRON;
}

std::vector<std::size_t> select_targets(const TokenizedSentence& sentence, TargetMode mode) {
  std::vector<std::size_t> out;
  const auto& tokens = sentence.tokens;
  switch (mode) {
    case TargetMode::ContentWords: {
      if (!sentence.tags) {
        throw MissingTags("sentence " + sentence.sentence_id +
                          ": content-word selection needs POS tags");
      }
      if (sentence.tags->size() != tokens.size()) {
        throw DataError("sentence " + sentence.sentence_id + ": tag count does not match tokens");
      }
      for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (is_content_tag((*sentence.tags)[i])) out.push_back(i);
      }
      break;
    }
    case TargetMode::AllWords:
      for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (has_letter_or_digit(tokens[i])) out.push_back(i);
      }
      break;
    case TargetMode::AllTokens:
      for (std::size_t i = 0; i < tokens.size(); ++i) out.push_back(i);
      break;
  }
  return out;
}

namespace {

struct Lexicon {
  std::unordered_map<std::string, PosTag> words;
  std::set<std::string> verb_stems;
  std::set<std::string> noun_stems;
};

const Lexicon& lexicon() {
  static const Lexicon kLexicon = [] {
    Lexicon lex;
    auto add = [&](PosTag tag, std::initializer_list<const char*> words) {
      for (const char* w : words) lex.words.emplace(w, tag);
    };
    add(PosTag::DET, {"the", "a", "an", "this", "that", "these", "those", "every", "each", "some",
                      "any", "no", "another", "either", "neither", "all", "both"});
    add(PosTag::PRON, {"i", "you", "he", "she", "it", "we", "they", "me", "him", "her", "us",
                       "them", "my", "your", "his", "its", "our", "their", "mine", "yours",
                       "hers", "ours", "theirs", "myself", "yourself", "himself", "herself",
                       "itself", "ourselves", "themselves", "who", "whom", "whose", "what",
                       "which", "someone", "somebody", "something", "anyone", "anything",
                       "everyone", "everything", "nobody", "nothing"});
    add(PosTag::ADP, {"in", "on", "at", "by", "for", "with", "from", "of", "about", "into",
                      "onto", "over", "under", "after", "before", "during", "without",
                      "through", "between", "among", "against", "around", "behind", "near",
                      "across", "along", "since", "until", "upon", "within", "like", "than"});
    add(PosTag::CONJ, {"and", "or", "but", "nor", "yet", "because", "if", "while", "although",
                       "though", "unless", "whether", "so"});
    add(PosTag::PRT, {"'s", "to", "not", "n't", "'re", "'ve", "'ll", "'d", "'m", "up", "off",
                      "out"});
    add(PosTag::NUM, {"one", "two", "three", "four", "five", "six", "seven", "eight", "nine",
                      "ten", "hundred", "thousand", "million", "first", "second", "third"});
    add(PosTag::ADV, {"very", "now", "then", "here", "there", "also", "always", "never", "often",
                      "too", "again", "already", "still", "just", "soon", "today", "tomorrow",
                      "yesterday", "quite", "rather", "almost", "even", "only", "well", "away",
                      "perhaps", "maybe", "however", "ever", "sometimes", "together"});
    add(PosTag::ADJ, {"good", "bad", "new", "old", "big", "small", "large", "little", "long",
                      "short", "high", "low", "young", "great", "happy", "sad", "kind", "nice",
                      "tired", "busy", "late", "early", "hard", "easy", "rich", "poor", "red",
                      "blue", "green", "black", "white", "angry", "calm", "quiet", "loud", "hot",
                      "cold", "warm", "fast", "slow", "smart", "clever", "friendly", "rude",
                      "polite", "strong", "weak", "sick", "healthy", "famous", "important"});
    // Auxiliaries and irregular forms.
    add(PosTag::VERB, {"is", "are", "was", "were", "be", "been", "being", "am", "has", "had",
                       "have", "do", "does", "did", "done", "will", "would", "can", "could",
                       "shall", "should", "may", "might", "must", "said", "went", "gone", "gave",
                       "given", "took", "taken", "made", "saw", "seen", "knew", "known",
                       "thought", "came", "told", "ran", "slept", "wrote", "written", "ate",
                       "eaten", "drank", "spoke", "spoken", "bought", "brought", "felt", "left",
                       "met", "paid", "sat", "stood", "found", "heard", "kept", "sent", "spent",
                       "won", "got", "began", "became", "drove", "flew", "sang", "taught"});
    lex.verb_stems = {"sleep", "run", "say", "go", "give", "take", "make", "see", "know", "think",
                      "come", "want", "ask", "help", "tell", "offer", "travel", "work", "write",
                      "read", "eat", "drink", "walk", "talk", "speak", "like", "love", "hate",
                      "need", "try", "call", "play", "move", "live", "believe", "bring", "happen",
                      "sit", "stand", "lose", "pay", "meet", "learn", "change", "lead",
                      "understand", "watch", "follow", "stop", "create", "open", "close", "visit",
                      "buy", "wait", "serve", "die", "send", "build", "stay", "fall", "cut",
                      "reach", "kill", "raise", "pass", "sell", "decide", "return", "explain",
                      "hope", "develop", "carry", "break", "receive", "agree", "support", "hit",
                      "produce", "cover", "catch", "draw", "choose", "cook", "clean", "drive",
                      "teach", "thank", "answer", "arrive", "rent", "reserve", "wander", "finish",
                      "start", "look", "use", "find", "feel", "leave", "keep", "begin", "show",
                      "hear", "turn", "get", "put", "mean", "let", "hold", "fly", "sing", "swim",
                      "smile", "laugh", "cry", "jump", "listen", "dance", "paint", "fix", "win"};
    lex.noun_stems = {"cat", "dog", "wife", "husband", "man", "woman", "friend", "doctor",
                      "nurse", "coach", "tip", "chief", "housekeeper", "professor", "teacher",
                      "student", "child", "boy", "girl", "house", "car", "book", "city",
                      "country", "day", "night", "time", "year", "week", "job", "money",
                      "family", "mother", "father", "sister", "brother", "table", "door", "room",
                      "school", "office", "letter", "source", "story", "bus", "train", "ship",
                      "degree", "food", "water", "tree", "garden", "street", "trip", "road",
                      "lawyer", "baker", "driver", "farmer", "manager", "clerk", "guard",
                      "cook", "writer", "singer", "dancer", "painter", "pilot", "soldier",
                      "judge", "guest", "customer", "patient", "neighbor", "cousin", "uncle",
                      "aunt", "son", "daughter", "people", "person", "world", "life", "hand",
                      "eye", "head", "word", "name", "idea", "problem", "question", "answer",
                      "music", "song", "game", "team", "company", "report", "paper", "phone",
                      "computer", "window", "market", "river", "mountain", "island", "bank",
                      "bird", "horse", "fish", "apple", "bread", "coffee", "tea", "gift",
                      "party", "meeting", "plan", "news", "dinner", "lunch", "breakfast"};
    for (const auto& n : lex.noun_stems) lex.words.emplace(n, PosTag::NOUN);
    for (const auto& v : lex.verb_stems) lex.words.emplace(v, PosTag::VERB);
    return lex;
  }();
  return kLexicon;
}

std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (auto& ch : out) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return out;
}

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() > suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

bool all_digits(std::string_view s) {
  bool digit = false;
  for (char ch : s) {
    if (std::isdigit(static_cast<unsigned char>(ch))) {
      digit = true;
    } else if (ch != '.' && ch != ',') {
      return false;
    }
  }
  return digit;
}

// Candidate stems for an inflected form: walks -> walk, carries -> carry,
// running -> run, baked -> bake.
std::vector<std::string> stems(std::string_view word, std::string_view suffix) {
  std::vector<std::string> out;
  if (!ends_with(word, suffix)) return out;
  std::string base(word.substr(0, word.size() - suffix.size()));
  out.push_back(base);
  if (suffix == "ies") out.push_back(base + "y");
  if (suffix == "ed" || suffix == "ing") {
    out.push_back(base + "e");
    if (base.size() >= 2 && base[base.size() - 1] == base[base.size() - 2]) {
      out.push_back(base.substr(0, base.size() - 1));
    }
  }
  if (suffix == "ied") out.push_back(base + "y");
  return out;
}

bool has_stem(std::string_view word, std::initializer_list<std::string_view> suffixes,
              const std::set<std::string>& stems_table) {
  for (auto suffix : suffixes) {
    for (const auto& stem : stems(word, suffix)) {
      if (stems_table.count(stem)) return true;
    }
  }
  return false;
}

}  // namespace

PosTag LexiconTagger::tag_word(std::string_view token) const {
  if (token.empty()) return PosTag::X;
  if (is_punctuation(token)) return PosTag::PUNCT;
  if (all_digits(token)) return PosTag::NUM;
  const auto& lex = lexicon();
  const std::string lower = ascii_lower(token);
  if (auto it = lex.words.find(lower); it != lex.words.end()) return it->second;
  if (has_stem(lower, {"s", "es", "ies", "ed", "ied", "ing"}, lex.verb_stems)) return PosTag::VERB;
  if (has_stem(lower, {"s", "es", "ies"}, lex.noun_stems)) return PosTag::NOUN;
  if (ends_with(lower, "ly")) return PosTag::ADV;
  if (std::isupper(static_cast<unsigned char>(token.front()))) return PosTag::NOUN;
  for (auto suffix : {"tion", "sion", "ness", "ment", "ist", "ism", "ity", "ance", "ence", "ship",
                      "er", "or", "ian", "hood"}) {
    if (ends_with(lower, suffix)) return PosTag::NOUN;
  }
  for (auto suffix : {"ous", "ful", "able", "ible", "ive", "al", "ic", "less", "ish", "ary"}) {
    if (ends_with(lower, suffix)) return PosTag::ADJ;
  }
  if (ends_with(lower, "ing") || ends_with(lower, "ed")) return PosTag::VERB;
  return PosTag::X;
}

std::vector<PosTag> LexiconTagger::tag(const Tokens& tokens) const {
  std::vector<PosTag> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(tag_word(t));
  return out;
}

TokenizedSentence tag_pos(std::string_view text, const PosTagger& tagger) {
  if (is_blank(text)) throw InvalidInput("tag_pos: empty text");
  TokenizedSentence sentence;
  sentence.tokens = tokenize_words(text);
  sentence.tags = tagger.tag(sentence.tokens);
  return sentence;
}

StaticLexicon StaticLexicon::parse(std::string_view content) {
  std::map<std::string, Tokens> table;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < content.size()) {
    std::size_t end = content.find('\n', pos);
    if (end == std::string_view::npos) end = content.size();
    std::string_view line = content.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    Tokens fields;
    std::size_t start = 0;
    while (true) {
      std::size_t tab = line.find('\t', start);
      fields.emplace_back(line.substr(start, tab == std::string_view::npos ? line.size() - start
                                                                            : tab - start));
      if (tab == std::string_view::npos) break;
      start = tab + 1;
    }
    if (fields.front().empty()) {
      throw DataError("lexicon line " + std::to_string(line_no) + ": empty key token");
    }
    auto& candidates = table[fields.front()];
    candidates.insert(candidates.end(), fields.begin() + 1, fields.end());
  }
  return StaticLexicon(std::move(table));
}

StaticLexicon StaticLexicon::load(const std::filesystem::path& path) {
  return parse(read_text_file(path));
}

Tokens StaticLexicon::candidates(std::span<const std::string> tokens, std::size_t mask_index,
                                 std::size_t n) const {
  if (mask_index >= tokens.size()) throw InvalidInput("mask index out of range");
  auto it = table_.find(tokens[mask_index]);
  if (it == table_.end()) return {};
  Tokens out(it->second.begin(), it->second.begin() + static_cast<std::ptrdiff_t>(
                                                          std::min(n, it->second.size())));
  return out;
}

PerturbationSet generate_replacements(const TokenizedSentence& sentence, std::size_t position,
                                      std::size_t n, const ReplacementProvider& provider) {
  if (position >= sentence.tokens.size()) {
    throw InvalidInput("generate_replacements: position " + std::to_string(position) +
                       " out of range for sentence " + sentence.sentence_id);
  }
  // One extra slot: masked LMs often propose the original word itself.
  const Tokens raw = provider.candidates(sentence.tokens, position, n + 1);
  const std::string original_key = replacement_key(sentence.tokens[position]);

  PerturbationSet set;
  set.source_index = position;
  std::set<std::string> seen;
  for (const auto& candidate : raw) {
    if (set.replacements.size() == n) break;
    if (is_blank(candidate)) continue;
    if (split_whitespace(candidate).size() != 1) continue;
    if (replacement_key(candidate) == original_key) continue;
    if (!seen.insert(candidate).second) continue;
    set.replacements.push_back(candidate);
  }
  for (const auto& replacement : set.replacements) {
    Tokens variant = sentence.tokens;
    variant[position] = replacement;
    set.variants.push_back(std::move(variant));
  }
  return set;
}

std::vector<std::vector<PosTag>> parse_pos_lines(std::span<const std::string> lines) {
  std::vector<std::vector<PosTag>> out;
  out.reserve(lines.size());
  for (const auto& line : lines) {
    std::vector<PosTag> tags;
    for (const auto& name : split_whitespace(line)) tags.push_back(pos_tag_from_string(name));
    out.push_back(std::move(tags));
  }
  return out;
}

}  // namespace pqe
