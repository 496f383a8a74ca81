#include "perturbqe/alignment.hpp"

#include <algorithm>
#include <cstdint>
#include <optional>
#include <set>
#include <tuple>

#include "perturbqe/errors.hpp"

namespace pqe {

std::size_t edit_distance(const Tokens& ref, const Tokens& hyp) {
  std::vector<std::size_t> prev(hyp.size() + 1);
  std::vector<std::size_t> cur(hyp.size() + 1);
  for (std::size_t j = 0; j <= hyp.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= ref.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= hyp.size(); ++j) {
      const std::size_t diag = prev[j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      cur[j] = std::min({diag, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[hyp.size()];
}

Alignment levenshtein_align(const Tokens& ref, const Tokens& hyp) {
  const std::size_t rows = ref.size() + 1;
  const std::size_t cols = hyp.size() + 1;
  std::vector<std::uint32_t> d(rows * cols);
  auto at = [&](std::size_t i, std::size_t j) -> std::uint32_t& { return d[i * cols + j]; };
  for (std::size_t i = 0; i < rows; ++i) at(i, 0) = static_cast<std::uint32_t>(i);
  for (std::size_t j = 0; j < cols; ++j) at(0, j) = static_cast<std::uint32_t>(j);
  for (std::size_t i = 1; i < rows; ++i) {
    for (std::size_t j = 1; j < cols; ++j) {
      const std::uint32_t diag = at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      at(i, j) = std::min({diag, at(i - 1, j) + 1, at(i, j - 1) + 1});
    }
  }

  Alignment alignment;
  std::size_t i = ref.size();
  std::size_t j = hyp.size();
  while (i > 0 || j > 0) {
    const std::uint32_t here = at(i, j);
    if (i > 0 && j > 0 && ref[i - 1] == hyp[j - 1] && at(i - 1, j - 1) == here) {
      alignment.ops.push_back({EditKind::Match, i - 1, j - 1});
      --i;
      --j;
    } else if (i > 0 && j > 0 && at(i - 1, j - 1) + 1 == here) {
      alignment.ops.push_back({EditKind::Substitute, i - 1, j - 1});
      --i;
      --j;
    } else if (i > 0 && at(i - 1, j) + 1 == here) {
      alignment.ops.push_back({EditKind::Delete, i - 1, EditOp::kNone});
      --i;
    } else {
      alignment.ops.push_back({EditKind::Insert, EditOp::kNone, j - 1});
      --j;
    }
  }
  std::reverse(alignment.ops.begin(), alignment.ops.end());
  alignment.cost = static_cast<std::size_t>(at(ref.size(), hyp.size()));
  return alignment;
}

Tokens apply_shift(const Tokens& hyp, const Shift& shift) {
  if (shift.length == 0 || shift.start + shift.length > hyp.size() ||
      shift.new_start + shift.length > hyp.size()) {
    throw InvalidInput("shift out of range");
  }
  Tokens block(hyp.begin() + static_cast<std::ptrdiff_t>(shift.start),
               hyp.begin() + static_cast<std::ptrdiff_t>(shift.start + shift.length));
  Tokens rest;
  rest.reserve(hyp.size() - shift.length);
  rest.insert(rest.end(), hyp.begin(), hyp.begin() + static_cast<std::ptrdiff_t>(shift.start));
  rest.insert(rest.end(), hyp.begin() + static_cast<std::ptrdiff_t>(shift.start + shift.length),
              hyp.end());
  rest.insert(rest.begin() + static_cast<std::ptrdiff_t>(shift.new_start), block.begin(),
              block.end());
  return rest;
}

Tokens apply_shifts(const Tokens& hyp, const std::vector<Shift>& shifts) {
  Tokens out = hyp;
  for (const auto& s : shifts) out = apply_shift(out, s);
  return out;
}

namespace {

struct ShiftCandidate {
  std::size_t cost = 0;
  Shift shift;

  auto key() const { return std::tuple(cost, shift.start, shift.new_start, shift.length); }
};

// Best strictly improving shift of `hyp`, if any.
std::optional<ShiftCandidate> find_best_shift(const Tokens& ref, const Tokens& hyp,
                                              std::size_t current_cost) {
  const Alignment current = levenshtein_align(ref, hyp);
  std::vector<bool> ref_matched(ref.size(), false);
  std::vector<bool> hyp_matched(hyp.size(), false);
  // after[r]: hyp tokens consumed up to and including the op covering ref r.
  std::vector<std::size_t> after(ref.size(), 0);
  std::size_t consumed = 0;
  for (const auto& op : current.ops) {
    if (op.kind != EditKind::Delete) ++consumed;
    if (op.kind == EditKind::Insert) continue;
    after[op.ref] = consumed;
    if (op.kind == EditKind::Match) {
      ref_matched[op.ref] = true;
      hyp_matched[op.hyp] = true;
    }
  }

  std::optional<ShiftCandidate> best;
  std::set<std::tuple<std::size_t, std::size_t, std::size_t>> tried;
  for (std::size_t start = 0; start < hyp.size(); ++start) {
    const std::size_t max_len = std::min(kMaxShiftLength, hyp.size() - start);
    for (std::size_t len = 1; len <= max_len && len <= ref.size(); ++len) {
      const auto block_begin = hyp.begin() + static_cast<std::ptrdiff_t>(start);
      const bool block_matched =
          std::all_of(hyp_matched.begin() + static_cast<std::ptrdiff_t>(start),
                      hyp_matched.begin() + static_cast<std::ptrdiff_t>(start + len),
                      [](bool b) { return b; });
      for (std::size_t r = 0; r + len <= ref.size(); ++r) {
        if (!std::equal(block_begin, block_begin + static_cast<std::ptrdiff_t>(len),
                        ref.begin() + static_cast<std::ptrdiff_t>(r))) {
          continue;
        }
        const bool span_matched =
            std::all_of(ref_matched.begin() + static_cast<std::ptrdiff_t>(r),
                        ref_matched.begin() + static_cast<std::ptrdiff_t>(r + len),
                        [](bool b) { return b; });
        if (block_matched && span_matched) continue;

        std::vector<std::size_t> targets;
        targets.push_back(r == 0 ? 0 : after[r - 1]);
        for (std::size_t k = r; k < r + len; ++k) targets.push_back(after[k]);
        for (std::size_t boundary : targets) {
          if (boundary >= start && boundary <= start + len) continue;  // no-op
          const std::size_t distance = boundary < start ? start - boundary : boundary - (start + len);
          if (distance > kMaxShiftDistance) continue;
          const std::size_t new_start = boundary < start ? boundary : boundary - len;
          if (!tried.emplace(start, len, new_start).second) continue;
          const Shift shift{start, len, new_start};
          const std::size_t cost = edit_distance(ref, apply_shift(hyp, shift)) + 1;
          if (cost >= current_cost) continue;
          ShiftCandidate candidate{cost, shift};
          if (!best || candidate.key() < best->key()) best = candidate;
        }
      }
    }
  }
  return best;
}

}  // namespace

Alignment tercom_align(const Tokens& ref, const Tokens& hyp) {
  Tokens current = hyp;
  std::vector<Shift> shifts;
  std::size_t cost = edit_distance(ref, current);
  while (cost > 0) {
    auto best = find_best_shift(ref, current, cost);
    if (!best) break;
    current = apply_shift(current, best->shift);
    shifts.push_back(best->shift);
    cost = best->cost - 1;
  }
  Alignment alignment = levenshtein_align(ref, current);
  alignment.shifts = std::move(shifts);
  alignment.cost += alignment.shifts.size();
  return alignment;
}

Alignment align(const Tokens& ref, const Tokens& hyp, AlignerKind kind) {
  return kind == AlignerKind::Tercom ? tercom_align(ref, hyp) : levenshtein_align(ref, hyp);
}

AlignedVariant project(const Alignment& alignment, const Tokens& hyp, std::size_t ref_len) {
  const Tokens shifted = apply_shifts(hyp, alignment.shifts);
  AlignedVariant out;
  out.projected.assign(ref_len, std::nullopt);
  std::vector<bool> ref_seen(ref_len, false);
  std::vector<bool> hyp_seen(shifted.size(), false);

  auto claim_ref = [&](std::size_t r) {
    if (r >= ref_len || ref_seen[r]) throw InternalError("alignment covers ref index twice or out of range");
    ref_seen[r] = true;
  };
  auto claim_hyp = [&](std::size_t h) {
    if (h >= shifted.size() || hyp_seen[h]) throw InternalError("alignment covers hyp index twice or out of range");
    hyp_seen[h] = true;
  };

  for (const auto& op : alignment.ops) {
    switch (op.kind) {
      case EditKind::Match:
      case EditKind::Substitute:
        claim_ref(op.ref);
        claim_hyp(op.hyp);
        out.projected[op.ref] = shifted[op.hyp];
        break;
      case EditKind::Delete:
        claim_ref(op.ref);
        break;
      case EditKind::Insert:
        claim_hyp(op.hyp);
        ++out.dropped_hyp_tokens;
        break;
    }
  }
  if (std::find(ref_seen.begin(), ref_seen.end(), false) != ref_seen.end() ||
      std::find(hyp_seen.begin(), hyp_seen.end(), false) != hyp_seen.end()) {
    throw InternalError("alignment does not cover every token");
  }
  return out;
}

}  // namespace pqe
