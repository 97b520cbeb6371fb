// mlmsc/masking.hpp
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

#include <cstddef>
#include <cstdint>
#include <set>
#include <span>
#include <vector>

#include "mlmsc/core.hpp"
#include "mlmsc/random.hpp"

namespace mlmsc {

enum class MaskGranularity { kToken, kWord };

struct MaskConfig {
  double threshold = 0.95;
  MaskGranularity granularity = MaskGranularity::kToken;
  int num_samples = 10;
  double sample_prob = 0.5;
  bool include_baseline = true;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(threshold >= 0.0 && threshold <= 1.0)) throw Error("mask threshold must lie in [0,1]");
    if (num_samples < 1) throw Error("num_samples must be >= 1");
    if (!(sample_prob >= 0.0 && sample_prob <= 1.0)) throw Error("sample_prob must lie in [0,1]");
  }
};

/// Masks every token whose confidence is strictly below `threshold`.
inline MaskSolution threshold_mask(const Hypothesis& hyp, double threshold) {
  MaskSolution mask(hyp.size());
  for (std::size_t j = 0; j < hyp.size(); ++j) mask.flags[j] = hyp.confidences[j] < threshold;
  return mask;
}

/// Widens a token mask to whole words: one masked token masks its word.
inline MaskSolution expand_to_words(const MaskSolution& mask, std::span<const TokenId> tokens,
                                    const Vocabulary& vocab) {
  if (mask.size() != tokens.size()) throw Error("mask length does not match token count");
  MaskSolution out = mask;
  const auto starts = word_starts(tokens, vocab);
  for (std::size_t w = 0; w < starts.size(); ++w) {
    const std::size_t end = w + 1 < starts.size() ? starts[w + 1] : tokens.size();
    bool any = false;
    for (std::size_t j = starts[w]; j < end; ++j) any = any || mask.flags[j];
    if (any) {
      for (std::size_t j = starts[w]; j < end; ++j) out.flags[j] = true;
    }
  }
  return out;
}

/// Mask-sample decoding: each low-confidence position is independently
/// masked with probability `sample_prob`; high-confidence positions stay
/// unmasked. Returns distinct solutions. With `include_baseline` the
/// deterministic threshold mask comes first and occupies one of the
/// `num_samples` slots. At most 10 * num_samples draws are made.
inline std::vector<MaskSolution> sample_mask_solutions(const Hypothesis& hyp,
                                                       const MaskConfig& cfg,
                                                       const Vocabulary& vocab, Rng& rng) {
  cfg.validate();
  auto finish = [&](MaskSolution m) {
    return cfg.granularity == MaskGranularity::kWord ? expand_to_words(m, hyp.tokens, vocab) : m;
  };

  const MaskSolution baseline = threshold_mask(hyp, cfg.threshold);
  std::vector<std::size_t> low;
  for (std::size_t j = 0; j < hyp.size(); ++j) {
    if (baseline.flags[j]) low.push_back(j);
  }

  std::vector<MaskSolution> out;
  std::set<MaskSolution> seen;
  const auto target = static_cast<std::size_t>(cfg.num_samples);
  if (cfg.include_baseline) {
    auto b = finish(baseline);
    seen.insert(b);
    out.push_back(std::move(b));
  }

  // Token-level sampling can produce at most 2^|low| distinct solutions.
  const bool bounded = low.size() < 63;
  const std::uint64_t reachable = bounded ? (std::uint64_t{1} << low.size()) : 0;
  const std::size_t max_draws = 10 * target;
  for (std::size_t draw = 0; draw < max_draws && out.size() < target; ++draw) {
    if (bounded && seen.size() >= reachable) break;
    MaskSolution m(hyp.size());
    for (std::size_t j : low) m.flags[j] = rng.bernoulli(cfg.sample_prob);
    m = finish(std::move(m));
    if (seen.insert(m).second) out.push_back(std::move(m));
  }
  return out;
}

}  // namespace mlmsc
