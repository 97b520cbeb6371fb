// mlmsc/align.hpp
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "mlmsc/core.hpp"

namespace mlmsc {

enum class EditOp { kMatch, kSub, kDel, kIns };

/// One alignment step. `ref_pos` is -1 for insertions, `hyp_pos` is -1 for
/// deletions.
struct AlignStep {
  EditOp op;
  int ref_pos;
  int hyp_pos;

  bool operator==(const AlignStep&) const = default;
};

struct Alignment {
  std::vector<AlignStep> steps;

  std::size_t cost() const {
    std::size_t c = 0;
    for (const auto& s : steps) c += s.op == EditOp::kMatch ? 0 : 1;
    return c;
  }
};

struct ErrorCounts {
  std::size_t substitutions = 0;
  std::size_t insertions = 0;
  std::size_t deletions = 0;
  std::size_t ref_len = 0;

  std::size_t errors() const { return substitutions + insertions + deletions; }

  /// (S+I+D)/ref_len. An empty reference scores 0 when there are no errors
  /// and one error per inserted unit otherwise.
  double rate() const {
    if (ref_len == 0) return static_cast<double>(errors());
    return static_cast<double>(errors()) / static_cast<double>(ref_len);
  }

  ErrorCounts& operator+=(const ErrorCounts& o) {
    substitutions += o.substitutions;
    insertions += o.insertions;
    deletions += o.deletions;
    ref_len += o.ref_len;
    return *this;
  }

  bool operator==(const ErrorCounts&) const = default;
};

/// Minimum edit-distance alignment with unit costs. When several
/// predecessors tie on cost the backtrace takes the diagonal step
/// (match/substitution) first, then deletion, then insertion.
template <typename T>
Alignment align(std::span<const T> ref, std::span<const T> hyp) {
  const std::size_t n = ref.size();
  const std::size_t m = hyp.size();
  const std::size_t width = m + 1;
  std::vector<std::size_t> dp((n + 1) * width);
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return dp[i * width + j]; };

  for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
  for (std::size_t i = 1; i <= n; ++i) {
    at(i, 0) = i;
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t diag = at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      at(i, j) = std::min({diag, at(i - 1, j) + 1, at(i, j - 1) + 1});
    }
  }

  Alignment out;
  out.steps.reserve(std::max(n, m));
  std::size_t i = n;
  std::size_t j = m;
  while (i > 0 || j > 0) {
    const std::size_t here = at(i, j);
    if (i > 0 && j > 0) {
      const bool same = ref[i - 1] == hyp[j - 1];
      if (at(i - 1, j - 1) + (same ? 0 : 1) == here) {
        out.steps.push_back({same ? EditOp::kMatch : EditOp::kSub, static_cast<int>(i - 1),
                             static_cast<int>(j - 1)});
        --i;
        --j;
        continue;
      }
    }
    if (i > 0 && at(i - 1, j) + 1 == here) {
      out.steps.push_back({EditOp::kDel, static_cast<int>(i - 1), -1});
      --i;
      continue;
    }
    out.steps.push_back({EditOp::kIns, -1, static_cast<int>(j - 1)});
    --j;
  }
  std::reverse(out.steps.begin(), out.steps.end());
  return out;
}

template <typename T>
Alignment align(const std::vector<T>& ref, const std::vector<T>& hyp) {
  return align(std::span<const T>(ref), std::span<const T>(hyp));
}

inline ErrorCounts error_counts(const Alignment& alignment, std::size_t ref_len) {
  ErrorCounts c;
  c.ref_len = ref_len;
  for (const auto& s : alignment.steps) {
    switch (s.op) {
      case EditOp::kMatch: break;
      case EditOp::kSub: ++c.substitutions; break;
      case EditOp::kDel: ++c.deletions; break;
      case EditOp::kIns: ++c.insertions; break;
    }
  }
  if (ref_len == 0 && c.deletions > 0) {
    throw Error("invalid alignment: deletions against an empty reference");
  }
  return c;
}

template <typename T>
ErrorCounts sequence_error_counts(std::span<const T> ref, std::span<const T> hyp) {
  return error_counts(align(ref, hyp), ref.size());
}

template <typename T>
ErrorCounts sequence_error_counts(const std::vector<T>& ref, const std::vector<T>& hyp) {
  return sequence_error_counts(std::span<const T>(ref), std::span<const T>(hyp));
}

/// Error counts over words. Tokens are grouped with the vocabulary's
/// boundary marker and each distinct word is compared as a unit.
inline ErrorCounts word_error_counts(std::span<const TokenId> reference,
                                     std::span<const TokenId> hypothesis,
                                     const Vocabulary& vocab) {
  std::map<TokenSeq, int> interned;
  auto intern = [&interned](const std::vector<TokenSeq>& words) {
    std::vector<int> ids;
    ids.reserve(words.size());
    for (const auto& w : words) {
      auto [it, fresh] = interned.emplace(w, static_cast<int>(interned.size()));
      ids.push_back(it->second);
    }
    return ids;
  };
  const auto ref_words = intern(group_words(reference, vocab));
  const auto hyp_words = intern(group_words(hypothesis, vocab));
  return sequence_error_counts(ref_words, hyp_words);
}

/// Unit used when scoring hypotheses: words (WER) or raw tokens
/// (CER-style, for character corpora).
enum class ErrorUnit { kWord, kToken };

inline ErrorCounts unit_error_counts(std::span<const TokenId> reference,
                                     std::span<const TokenId> hypothesis,
                                     const Vocabulary& vocab, ErrorUnit unit) {
  if (unit == ErrorUnit::kWord) return word_error_counts(reference, hypothesis, vocab);
  return sequence_error_counts(reference, hypothesis);
}

/// Mask that hides exactly the hypothesis positions the alignment marks as
/// substituted or inserted.
inline MaskSolution reference_mask(const Alignment& alignment, std::size_t hyp_len) {
  MaskSolution mask(hyp_len);
  for (const auto& s : alignment.steps) {
    if (s.op == EditOp::kSub || s.op == EditOp::kIns) {
      const auto j = static_cast<std::size_t>(s.hyp_pos);
      if (j >= hyp_len) throw Error("alignment hyp position out of range");
      mask.flags[j] = true;
    }
  }
  return mask;
}

struct ErrorBreakdown {
  ErrorCounts totals;
  double sub_fraction = 0.0;
  double ins_fraction = 0.0;
  double del_fraction = 0.0;
};

inline ErrorBreakdown breakdown_from_totals(const ErrorCounts& totals) {
  ErrorBreakdown b;
  b.totals = totals;
  const double e = static_cast<double>(totals.errors());
  if (e > 0) {
    b.sub_fraction = static_cast<double>(totals.substitutions) / e;
    b.ins_fraction = static_cast<double>(totals.insertions) / e;
    b.del_fraction = static_cast<double>(totals.deletions) / e;
  }
  return b;
}

/// Summed S/I/D over a set of (reference, hypothesis) pairs and each
/// type's share of all errors.
template <typename T>
ErrorBreakdown corpus_breakdown(
    const std::vector<std::pair<std::vector<T>, std::vector<T>>>& pairs) {
  ErrorCounts totals;
  for (const auto& [ref, hyp] : pairs) totals += sequence_error_counts(ref, hyp);
  return breakdown_from_totals(totals);
}

}  // namespace mlmsc
