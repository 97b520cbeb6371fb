// mlmsc/decode.hpp
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

// Second-pass correction: sample mask solutions for each n-best entry, fill
// them with the MLM, fuse MLM and LM scores and keep the best candidate.

#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mlmsc/align.hpp"
#include "mlmsc/core.hpp"
#include "mlmsc/lm.hpp"
#include "mlmsc/masking.hpp"
#include "mlmsc/mlm.hpp"
#include "mlmsc/random.hpp"

namespace mlmsc {

struct FusionWeights {
  double mlm_weight = 1.0;
  double lm_weight = 0.5;
};

inline double fuse(double mlm_score, double lm_score, const FusionWeights& w) {
  return w.mlm_weight * mlm_score + w.lm_weight * lm_score;
}

struct CorrectionCandidate {
  TokenSeq tokens;
  int source_hyp_index = 0;
  MaskSolution mask_used;
  double mlm_score = 0.0;
  double lm_score = 0.0;
  double fused_score = 0.0;
};

struct DecodeConfig {
  MaskConfig mask;
  FusionWeights fusion;
  int nbest_depth = 5;
  /// Divide MLM and LM scores by the candidate's token count before fusing.
  bool length_normalize = false;

  void validate() const {
    mask.validate();
    if (nbest_depth < 1) throw Error("nbest_depth must be >= 1");
  }
};

struct CorrectionResult {
  CorrectionCandidate best;
  std::vector<CorrectionCandidate> all;
};

/// Strict "a ranks above b" for fused selection: higher fused score, then
/// fewer masked positions, then lexicographically smaller tokens, then the
/// earlier source hypothesis and smaller mask.
inline bool fused_better(const CorrectionCandidate& a, const CorrectionCandidate& b) {
  if (a.fused_score != b.fused_score) return a.fused_score > b.fused_score;
  const auto ca = a.mask_used.count();
  const auto cb = b.mask_used.count();
  if (ca != cb) return ca < cb;
  if (a.tokens != b.tokens) return a.tokens < b.tokens;
  if (a.source_hyp_index != b.source_hyp_index) return a.source_hyp_index < b.source_hyp_index;
  return a.mask_used < b.mask_used;
}

inline const CorrectionCandidate& select_best(const std::vector<CorrectionCandidate>& candidates) {
  if (candidates.empty()) throw Error("no candidates to select from");
  const CorrectionCandidate* best = &candidates.front();
  for (const auto& c : candidates) {
    if (fused_better(c, *best)) best = &c;
  }
  return *best;
}

inline CorrectionCandidate score_candidate(FillResult fill, int source, MaskSolution mask,
                                           const LmScorer& lm, const DecodeConfig& cfg) {
  CorrectionCandidate c;
  c.tokens = std::move(fill.tokens);
  c.source_hyp_index = source;
  c.mask_used = std::move(mask);
  c.mlm_score = fill.mlm_score;
  c.lm_score = lm_score(c.tokens, lm);
  double m = c.mlm_score;
  double l = c.lm_score;
  if (cfg.length_normalize && !c.tokens.empty()) {
    m /= static_cast<double>(c.tokens.size());
    l /= static_cast<double>(c.tokens.size());
  }
  c.fused_score = fuse(m, l, cfg.fusion);
  return c;
}

/// Corrects a single hypothesis: one candidate per sampled mask solution.
inline CorrectionResult correct_hypothesis(const Hypothesis& hyp, const AcousticEvidence& acoustic,
                                           const DecodeConfig& cfg, const Vocabulary& vocab,
                                           MlmSession& mlm, const LmScorer& lm, Rng& rng,
                                           int source_index = 0) {
  hyp.validate();
  if (acoustic.size() != hyp.size()) {
    throw Error("utterance '" + hyp.utterance_id + "': acoustic evidence length " +
                std::to_string(acoustic.size()) + " != hypothesis length " +
                std::to_string(hyp.size()));
  }
  mlm.forget_evidence();
  CorrectionResult result;
  for (auto& mask : sample_mask_solutions(hyp, cfg.mask, vocab, rng)) {
    auto fill = mlm_fill_and_score(hyp.tokens, mask, acoustic, mlm);
    result.all.push_back(score_candidate(std::move(fill), source_index, std::move(mask), lm, cfg));
  }
  result.best = select_best(result.all);
  return result;
}

inline CorrectionResult correct_hypothesis(const Hypothesis& hyp, const AcousticEvidence& acoustic,
                                           const DecodeConfig& cfg, const Vocabulary& vocab,
                                           const MlmScorer& mlm, const LmScorer& lm, Rng& rng) {
  auto session = mlm.session();
  return correct_hypothesis(hyp, acoustic, cfg, vocab, *session, lm, rng);
}

/// Random stream for hypothesis `index` of an utterance. Depends only on
/// (seed, utterance id, index), so deeper n-best runs reuse the shallower
/// runs' solutions.
inline Rng hypothesis_rng(std::uint64_t seed, const std::string& utterance_id, std::size_t index) {
  return Rng(derive_seed(seed, utterance_id, index));
}

/// Corrects the top `nbest_depth` hypotheses and selects globally.
/// `acoustics[i]` belongs to `nbest.hypotheses[i]`.
inline CorrectionResult correct_nbest(const NBestList& nbest,
                                      std::span<const AcousticEvidence> acoustics,
                                      const DecodeConfig& cfg, const Vocabulary& vocab,
                                      const MlmScorer& mlm, const LmScorer& lm) {
  cfg.validate();
  if (nbest.hypotheses.empty()) throw Error("utterance '" + nbest.utterance_id + "' has an empty n-best list");
  const std::size_t depth = std::min<std::size_t>(static_cast<std::size_t>(cfg.nbest_depth),
                                                  nbest.hypotheses.size());
  if (acoustics.size() < depth) {
    throw Error("utterance '" + nbest.utterance_id + "': missing acoustic evidence for hypotheses");
  }
  auto session = mlm.session();
  CorrectionResult result;
  for (std::size_t i = 0; i < depth; ++i) {
    Rng rng = hypothesis_rng(cfg.mask.seed, nbest.utterance_id, i);
    auto part = correct_hypothesis(nbest.hypotheses[i], acoustics[i], cfg, vocab, *session, lm, rng,
                                   static_cast<int>(i));
    for (auto& c : part.all) result.all.push_back(std::move(c));
  }
  result.best = select_best(result.all);
  return result;
}

/// Picks the candidate closest to the reference; ties go to the higher
/// fused score, then the lexicographically smaller token sequence.
inline const CorrectionCandidate& oracle_select(const std::vector<CorrectionCandidate>& candidates,
                                                std::span<const TokenId> reference,
                                                const Vocabulary& vocab,
                                                ErrorUnit unit = ErrorUnit::kWord) {
  if (candidates.empty()) throw Error("oracle selection over an empty candidate list");
  const CorrectionCandidate* best = nullptr;
  std::size_t best_errors = 0;
  for (const auto& c : candidates) {
    const std::size_t e = unit_error_counts(reference, c.tokens, vocab, unit).errors();
    const bool better = best == nullptr || e < best_errors ||
                        (e == best_errors && (c.fused_score > best->fused_score ||
                                              (c.fused_score == best->fused_score && c.tokens < best->tokens)));
    if (better) {
      best = &c;
      best_errors = e;
    }
  }
  return *best;
}

}  // namespace mlmsc
