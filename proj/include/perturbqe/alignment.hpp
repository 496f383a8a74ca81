#pragma once

#include <cstddef>
#include <vector>

#include "perturbqe/qe_core.hpp"
#include "perturbqe/text.hpp"

namespace pqe {

enum class EditKind { Match, Substitute, Delete, Insert };

// One edit step. ref/hyp are indices into the reference and the (shifted)
// hypothesis; the unused side is kNone.
struct EditOp {
  static constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  EditKind kind = EditKind::Match;
  std::size_t ref = kNone;
  std::size_t hyp = kNone;
  bool operator==(const EditOp&) const = default;
};

// Moves hyp[start, start + length) so that it begins at new_start in the
// resulting sequence. Indices refer to the hypothesis as it was right before
// this shift.
struct Shift {
  std::size_t start = 0;
  std::size_t length = 0;
  std::size_t new_start = 0;
  bool operator==(const Shift&) const = default;
};

struct Alignment {
  std::vector<Shift> shifts;  // applied in order before `ops`
  std::vector<EditOp> ops;    // over the shifted hypothesis
  std::size_t cost = 0;       // shifts + non-Match ops

  bool operator==(const Alignment&) const = default;
};

struct AlignedVariant {
  std::vector<ProjectedToken> projected;
  std::size_t dropped_hyp_tokens = 0;
  bool operator==(const AlignedVariant&) const = default;
};

inline constexpr std::size_t kMaxShiftLength = 10;
inline constexpr std::size_t kMaxShiftDistance = 50;

// Unit-cost edit distance alignment. On traceback, ties between equal-cost
// predecessors resolve Match > Substitute > Delete > Insert.
Alignment levenshtein_align(const Tokens& ref, const Tokens& hyp);

std::size_t edit_distance(const Tokens& ref, const Tokens& hyp);

// Greedy block-shift search followed by levenshtein_align on the shifted
// hypothesis. A shift is accepted only if it strictly lowers
// edit_distance + 1 below the current edit distance.
Alignment tercom_align(const Tokens& ref, const Tokens& hyp);

Alignment align(const Tokens& ref, const Tokens& hyp, AlignerKind kind);

Tokens apply_shift(const Tokens& hyp, const Shift& shift);
Tokens apply_shifts(const Tokens& hyp, const std::vector<Shift>& shifts);

// Places every hyp token aligned by Match/Substitute at its ref position;
// Deletes leave the empty sentinel, Inserts are dropped and counted.
AlignedVariant project(const Alignment& alignment, const Tokens& hyp, std::size_t ref_len);

}  // namespace pqe
