#include "doctest.h"

#include "perturbqe/errors.hpp"
#include "perturbqe/perturbation.hpp"

using namespace pqe;

namespace {

TokenizedSentence john() {
  using T = PosTag;
  return {"0",
          {"John", "'s", "wife", "is", "a", "journalist", "."},
          std::vector<PosTag>{T::NOUN, T::PRT, T::NOUN, T::VERB, T::DET, T::NOUN, T::PUNCT}};
}

// Returns a fixed list regardless of context and of n.
class ListProvider final : public ReplacementProvider {
 public:
  explicit ListProvider(Tokens list) : list_(std::move(list)) {}
  Tokens candidates(std::span<const std::string>, std::size_t, std::size_t) const override { return list_; }

 private:
  Tokens list_;
};

}  // namespace

TEST_CASE("select_targets by mode") {
  const auto s = john();
  CHECK(select_targets(s, TargetMode::ContentWords) == std::vector<std::size_t>{0, 2, 3, 5});
  CHECK(select_targets(s, TargetMode::AllTokens) == std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6});
  CHECK(select_targets(s, TargetMode::AllWords) == std::vector<std::size_t>{0, 1, 2, 3, 4, 5});
}

TEST_CASE("select_targets needs tags for content words") {
  TokenizedSentence s = john();
  s.tags.reset();
  CHECK_THROWS_AS(select_targets(s, TargetMode::ContentWords), MissingTags);
  CHECK(select_targets(s, TargetMode::AllWords).size() == 6);
  s.tags = std::vector<PosTag>{PosTag::NOUN};
  CHECK_THROWS_AS(select_targets(s, TargetMode::ContentWords), DataError);
}

TEST_CASE("bundled tagger") {
  using T = PosTag;
  auto s = tag_pos("the cat sleeps .");
  CHECK(s.tokens == Tokens{"the", "cat", "sleeps", "."});
  CHECK(*s.tags == std::vector<PosTag>{T::DET, T::NOUN, T::VERB, T::PUNCT});

  s = tag_pos("John runs");
  CHECK(s.tokens == Tokens{"John", "runs"});
  CHECK(*s.tags == std::vector<PosTag>{T::NOUN, T::VERB});

  s = tag_pos("John's wife is a journalist.");
  CHECK(s.tokens == Tokens{"John", "'s", "wife", "is", "a", "journalist", "."});
  CHECK(select_targets(s, TargetMode::ContentWords) == std::vector<std::size_t>{0, 2, 3, 5});

  CHECK_THROWS_AS(tag_pos(""), InvalidInput);
  CHECK_THROWS_AS(tag_pos("   "), InvalidInput);

  const LexiconTagger tagger;
  CHECK(tagger.tag_word("quickly") == T::ADV);
  CHECK(tagger.tag_word("42") == T::NUM);
  CHECK(tagger.tag_word("she") == T::PRON);
  CHECK(tagger.tag_word("blorft") == T::X);
}

TEST_CASE("static lexicon provider") {
  const auto lex = StaticLexicon::parse("John\tTom\tMary\tAnna\nwife\thusband\n");
  const Tokens tokens{"John", "'s", "wife"};
  CHECK(lex.candidates(tokens, 0, 2) == Tokens{"Tom", "Mary"});
  CHECK(lex.candidates(tokens, 0, 10) == Tokens{"Tom", "Mary", "Anna"});
  CHECK(lex.candidates(tokens, 1, 10).empty());
  CHECK_THROWS_AS(StaticLexicon::parse("\tx\n"), DataError);
}

TEST_CASE("generate_replacements from a lexicon fixture") {
  const auto lex = StaticLexicon::parse("John\tTom\tMary\tAnna\n");
  const auto set = generate_replacements(john(), 0, 3, lex);
  CHECK(set.source_index == 0);
  CHECK(set.replacements == Tokens{"Tom", "Mary", "Anna"});
  REQUIRE(set.variants.size() == 3);
  for (std::size_t k = 0; k < 3; ++k) {
    auto expected = john().tokens;
    expected[0] = set.replacements[k];
    CHECK(set.variants[k] == expected);
  }
}

TEST_CASE("generate_replacements filters self, blank and multi-word candidates") {
  CHECK(generate_replacements(john(), 0, 3, ListProvider({"John"})).empty());
  const auto set = generate_replacements(john(), 0, 3, ListProvider({"john", " ", "Tom Jones", "Tom", "Tom", "Eve"}));
  CHECK(set.replacements == Tokens{"Tom", "Eve"});
}

TEST_CASE("generate_replacements truncates to n in provider order") {
  Tokens fifty;
  for (int k = 0; k < 50; ++k) fifty.push_back("w" + std::to_string(k));
  const auto set = generate_replacements(john(), 2, 30, ListProvider(fifty));
  REQUIRE(set.replacements.size() == 30);
  CHECK(set.replacements.front() == "w0");
  CHECK(set.replacements.back() == "w29");
}

TEST_CASE("generate_replacements rejects a bad position") {
  CHECK_THROWS_AS(generate_replacements(john(), 7, 3, ListProvider({"x"})), InvalidInput);
}

TEST_CASE("POS tag lines") {
  const std::vector<std::string> lines{"NOUN VERB .", ""};
  const auto tags = parse_pos_lines(lines);
  CHECK(tags[0] == std::vector<PosTag>{PosTag::NOUN, PosTag::VERB, PosTag::PUNCT});
  CHECK(tags[1].empty());
  const std::vector<std::string> bad{"NOUN FOO"};
  CHECK_THROWS_AS(parse_pos_lines(bad), DataError);
}
