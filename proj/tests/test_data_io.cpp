#include "doctest.h"

#include <regex>

#include "perturbqe/data_io.hpp"
#include "perturbqe/errors.hpp"
#include "support.hpp"

using namespace pqe;
using pqe::testing::TempDir;

namespace {

constexpr auto OK = QualityLabel::OK;
constexpr auto BAD = QualityLabel::BAD;

DatasetPaths write_dataset(const TempDir& tmp, const std::string& src, const std::string& mt,
                           const std::string& tags) {
  write_text_file(tmp / "src.txt", src);
  write_text_file(tmp / "mt.txt", mt);
  DatasetPaths paths;
  paths.src = tmp / "src.txt";
  paths.mt = tmp / "mt.txt";
  if (!tags.empty()) {
    write_text_file(tmp / "tags.txt", tags);
    paths.tags = tmp / "tags.txt";
  }
  return paths;
}

// A verdict for "Haushälterin" influenced by five source words.
ExplanationRecord housekeeper() {
  const Tokens source{"The", "old", "man", "'s", "housekeeper", "said", "nothing", "."};
  const Tokens target{"Die", "Haush\xC3\xA4lterin", "des", "alten", "Mannes", "schwieg", "."};
  std::vector<WordVerdict> verdicts;
  for (std::size_t j = 0; j < target.size(); ++j) verdicts.push_back({j, OK, 0, {}});
  auto& v = verdicts[1];
  v.label = BAD;
  v.influence_count = 5;
  for (std::size_t s : {0u, 1u, 2u, 5u, 6u}) {
    v.influencers.push_back({s, {{ProjectedToken{"Haushaltshilfe"}, 12}, {std::nullopt, 3}}});
  }
  return make_explanation("3", source, target, verdicts);
}

std::vector<std::string> matches(const std::string& text, const std::string& pattern) {
  std::vector<std::string> out;
  const std::regex re(pattern);
  for (auto it = std::sregex_iterator(text.begin(), text.end(), re); it != std::sregex_iterator(); ++it) {
    out.push_back((*it)[1].str());
  }
  return out;
}

}  // namespace

TEST_CASE("read_lines strips CR and does not invent a trailing line") {
  TempDir tmp;
  write_text_file(tmp / "a.txt", "one\r\ntwo\n\nfour\n");
  CHECK(read_lines(tmp / "a.txt") == std::vector<std::string>{"one", "two", "", "four"});
  write_text_file(tmp / "b.txt", "");
  CHECK(read_lines(tmp / "b.txt").empty());
  write_text_file(tmp / "c.txt", "x");
  CHECK(read_lines(tmp / "c.txt") == std::vector<std::string>{"x"});
  CHECK_THROWS_AS(read_lines(tmp / "missing.txt"), DataError);
}

TEST_CASE("tag lines: plain, gap-interleaved and mismatched") {
  CHECK(parse_tag_line("OK BAD OK", 3, "0") == Labels{OK, BAD, OK});
  // 7 tags for 3 words: gaps at even positions are dropped.
  CHECK(parse_tag_line("OK BAD OK OK BAD BAD OK", 3, "0") == Labels{BAD, OK, BAD});
  try {
    parse_tag_line("OK OK", 3, "17");
    FAIL("expected a data error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("17") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_tag_line("OK MAYBE OK", 3, "0"), DataError);
}

TEST_CASE("mask lines") {
  CHECK(parse_mask_line("0 1 1 0", 4, "0") == std::set<std::size_t>{1, 2});
  CHECK(parse_mask_line("0 0", 2, "0").empty());
  CHECK_THROWS_AS(parse_mask_line("0 1", 3, "0"), DataError);
  CHECK_THROWS_AS(parse_mask_line("0 2", 2, "0"), DataError);
}

TEST_CASE("load_dataset pairs lines and attaches gold tags") {
  TempDir tmp;
  const auto paths = write_dataset(tmp, "John's wife is a journalist.\nHello.\n",
                                   "Johns Frau ist Journalistin .\nHallo .\n",
                                   "OK OK OK OK OK BAD OK OK OK OK OK\nOK OK\n");
  const auto ds = load_dataset(paths);
  REQUIRE(ds.sentences.size() == 2);
  CHECK(ds.ids() == std::vector<std::string>{"0", "1"});
  CHECK(ds.has_gold());
  CHECK_FALSE(ds.has_mask());
  const auto& s = ds.sentences[0];
  CHECK(s.source_tokens == Tokens{"John", "'s", "wife", "is", "a", "journalist", "."});
  CHECK(s.mt_tokens == Tokens{"Johns", "Frau", "ist", "Journalistin", "."});
  CHECK(*s.gold == Labels{OK, OK, BAD, OK, OK});
}

TEST_CASE("load_dataset errors name the offending line") {
  TempDir tmp;
  auto paths = write_dataset(tmp, "a\nb\nc\n", "A\nB\n", "");
  try {
    load_dataset(paths);
    FAIL("expected a data error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find('3') != std::string::npos);
  }
  paths = write_dataset(tmp, "a\nb\n", "A\nB C\n", "OK\nOK\n");
  try {
    load_dataset(paths);
    FAIL("expected a data error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("sentence 1") != std::string::npos);
  }
}

TEST_CASE("an empty dataset loads as zero sentences") {
  TempDir tmp;
  const auto ds = load_dataset(write_dataset(tmp, "", "", ""));
  CHECK(ds.sentences.empty());
}

TEST_CASE("predictions round trip") {
  TempDir tmp;
  const std::vector<Labels> labels{{OK, BAD}, {}, {BAD}};
  write_predictions(labels, tmp / "p.txt");
  CHECK(pqe::testing::slurp(tmp / "p.txt") == "OK BAD\n\nBAD\n");
  CHECK(read_predictions(tmp / "p.txt") == labels);
  write_predictions({}, tmp / "empty.txt");
  CHECK(read_predictions(tmp / "empty.txt").empty());
}

TEST_CASE("labels_of follows verdict order") {
  const std::vector<WordVerdict> v{{0, OK, 0, {}}, {1, BAD, 3, {}}};
  CHECK(labels_of(v) == Labels{OK, BAD});
}

TEST_CASE("explanation records round trip through JSON lines") {
  TempDir tmp;
  const std::vector<ExplanationRecord> records{housekeeper()};
  const auto j = nlohmann::json(records[0]);
  CHECK(j.at("tokens").at(1).at("influencers").size() == 5);
  CHECK(j.at("tokens").at(1).at("influencers").at(0).at("variants").at(1).at("token").is_null());
  emit_explanations(records, ReportFormat::Json, tmp / "e.jsonl");
  CHECK(read_explanations(tmp / "e.jsonl") == records);
}

TEST_CASE("html report highlights BAD tokens and lists their influencers") {
  const std::vector<ExplanationRecord> records{housekeeper()};
  const std::string html = render_html(records);
  CHECK(html.find("<script") == std::string::npos);
  CHECK(matches(html, R"re(data-index="(\d+)")re").size() == 7);
  CHECK(matches(html, R"re(class="tok bad" data-index="(\d+)")re") == std::vector<std::string>{"1"});
  CHECK(matches(html, R"re(data-target-index="(\d+)")re") == std::vector<std::string>{"1"});
  CHECK(matches(html, R"re(<tr data-source-index="(\d+)")re") ==
        std::vector<std::string>{"0", "1", "2", "5", "6"});
  CHECK(html.find("Haush\xC3\xA4lterin") != std::string::npos);
}

TEST_CASE("html report escapes text and handles an empty record set") {
  ExplanationRecord r;
  r.sentence_id = "<0>";
  r.source_tokens = {"a&b"};
  r.tokens = {{0, "<i>", OK, 0, {}}};
  const std::vector<ExplanationRecord> records{r};
  const auto html = render_html(records);
  CHECK(html.find("<i>") == std::string::npos);
  CHECK(html.find("&lt;i&gt;") != std::string::npos);
  CHECK(html.find("a&amp;b") != std::string::npos);
  CHECK(render_html({}).find("No sentences.") != std::string::npos);
}
