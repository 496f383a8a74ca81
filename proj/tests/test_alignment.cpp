#include "doctest.h"

#include "perturbqe/alignment.hpp"
#include "perturbqe/errors.hpp"

using namespace pqe;

namespace {

std::vector<EditKind> kinds(const Alignment& a) {
  std::vector<EditKind> out;
  for (const auto& op : a.ops) out.push_back(op.kind);
  return out;
}

}  // namespace

TEST_CASE("levenshtein: identity, deletion, empty reference") {
  auto a = levenshtein_align({"a", "b", "c"}, {"a", "b", "c"});
  CHECK(a.cost == 0);
  CHECK(kinds(a) == std::vector<EditKind>{EditKind::Match, EditKind::Match, EditKind::Match});

  a = levenshtein_align({"a", "b", "c"}, {"a", "c"});
  CHECK(a.cost == 1);
  REQUIRE(a.ops.size() == 3);
  CHECK(a.ops[0].kind == EditKind::Match);
  CHECK(a.ops[1].kind == EditKind::Delete);
  CHECK(a.ops[1].ref == 1);
  CHECK(a.ops[2].kind == EditKind::Match);
  CHECK(a.ops[2].hyp == 1);

  a = levenshtein_align({}, {"x", "y"});
  CHECK(a.cost == 2);
  CHECK(kinds(a) == std::vector<EditKind>{EditKind::Insert, EditKind::Insert});

  a = levenshtein_align({}, {});
  CHECK(a.cost == 0);
  CHECK(a.ops.empty());
}

TEST_CASE("levenshtein cost equals the count of non-match operations") {
  const auto a = levenshtein_align({"a", "b", "c", "d"}, {"b", "x", "d", "e"});
  std::size_t edits = 0;
  for (const auto& op : a.ops) edits += op.kind != EditKind::Match;
  CHECK(a.cost == edits);
  CHECK(a.cost == edit_distance({"a", "b", "c", "d"}, {"b", "x", "d", "e"}));
}

TEST_CASE("tercom: crossing blocks need one shift") {
  const Tokens ref{"a", "b", "c", "d"};
  const Tokens hyp{"c", "d", "a", "b"};
  const auto t = tercom_align(ref, hyp);
  CHECK(t.cost == 1);
  REQUIRE(t.shifts.size() == 1);
  CHECK(t.shifts[0].length == 2);
  CHECK(apply_shifts(hyp, t.shifts) == ref);
  CHECK(kinds(t) == std::vector<EditKind>(4, EditKind::Match));
  CHECK(levenshtein_align(ref, hyp).cost == 4);
}

TEST_CASE("tercom: identity and disjoint content") {
  CHECK(tercom_align({"a", "b"}, {"a", "b"}).cost == 0);
  const auto t = tercom_align({"a", "b"}, {"x", "y"});
  CHECK(t.cost == 2);
  CHECK(t.shifts.empty());
  CHECK(kinds(t) == std::vector<EditKind>{EditKind::Substitute, EditKind::Substitute});
}

TEST_CASE("tercom moves a single misplaced word") {
  const Tokens ref{"the", "cat", "sat", "on", "the", "mat", "today"};
  const Tokens hyp{"today", "the", "cat", "sat", "on", "the", "mat"};
  const auto t = tercom_align(ref, hyp);
  CHECK(t.cost == 1);
  CHECK(apply_shifts(hyp, t.shifts) == ref);
}

TEST_CASE("apply_shift semantics and bounds") {
  const Tokens hyp{"a", "b", "c", "d", "e"};
  // Remove [b c], reinsert at position 2 of "a d e".
  CHECK(apply_shift(hyp, {1, 2, 2}) == Tokens{"a", "d", "b", "c", "e"});
  CHECK(apply_shift(hyp, {3, 2, 0}) == Tokens{"d", "e", "a", "b", "c"});
  CHECK_THROWS_AS(apply_shift(hyp, {4, 2, 0}), InvalidInput);
  CHECK_THROWS_AS(apply_shift(hyp, {0, 0, 0}), InvalidInput);
}

TEST_CASE("project: worked-example row with a shorter perturbed translation") {
  const Tokens ref{"Johns", "Frau", "ist", "Journalistin", ",", "die", "Quelle", "sagte", "."};
  const Tokens hyp{"Toms", "Frau", "ist", "Journalistin", "."};
  for (auto kind : {AlignerKind::Levenshtein, AlignerKind::Tercom}) {
    const auto a = align(ref, hyp, kind);
    const auto v = project(a, hyp, ref.size());
    const std::vector<ProjectedToken> expected{"Toms", "Frau", "ist", "Journalistin", std::nullopt,
                                               std::nullopt, std::nullopt, std::nullopt, "."};
    CHECK(v.projected == expected);
    CHECK(v.dropped_hyp_tokens == 0);
  }
}

TEST_CASE("project: identity, all deletions, insertions are dropped") {
  const Tokens ref{"a", "b"};
  auto v = project(levenshtein_align(ref, ref), ref, 2);
  CHECK(v.projected == std::vector<ProjectedToken>{"a", "b"});
  CHECK(v.dropped_hyp_tokens == 0);

  Alignment deletes;
  deletes.ops = {{EditKind::Delete, 0, EditOp::kNone}, {EditKind::Delete, 1, EditOp::kNone},
                 {EditKind::Delete, 2, EditOp::kNone}};
  deletes.cost = 3;
  v = project(deletes, {}, 3);
  CHECK(v.projected == std::vector<ProjectedToken>(3, std::nullopt));

  const Tokens hyp{"a", "x", "b", "y"};
  v = project(levenshtein_align(ref, hyp), hyp, 2);
  CHECK(v.projected == std::vector<ProjectedToken>{"a", "b"});
  CHECK(v.dropped_hyp_tokens == 2);
}

TEST_CASE("project rejects alignments that do not cover every token") {
  Alignment broken;
  broken.ops = {{EditKind::Match, 0, 0}};
  CHECK_THROWS_AS(project(broken, {"a", "b"}, 1), InternalError);
  broken.ops = {{EditKind::Match, 0, 0}, {EditKind::Match, 0, 1}};
  CHECK_THROWS_AS(project(broken, {"a", "b"}, 1), InternalError);
}

TEST_CASE("tercom projections follow the shifted hypothesis") {
  const Tokens ref{"a", "b", "c", "d"};
  const Tokens hyp{"c", "d", "a", "b"};
  const auto v = project(tercom_align(ref, hyp), hyp, ref.size());
  CHECK(v.projected == std::vector<ProjectedToken>{"a", "b", "c", "d"});
}
