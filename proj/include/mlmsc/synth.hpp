// mlmsc/synth.hpp
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

// Synthetic first-pass source: a seeded toy language with multi-token words,
// and a noisy channel that corrupts references with controlled
// substitution/insertion/deletion rates, attaches confidences whose
// separability is set by a calibration knob, and emits acoustic evidence.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mlmsc/core.hpp"
#include "mlmsc/random.hpp"

namespace mlmsc {

struct Reference {
  std::string id;
  TokenSeq tokens;

  bool operator==(const Reference&) const = default;
};

// ---------------------------------------------------------------------------
// Toy language

struct LanguageConfig {
  int num_initial = 80;       // word-initial (boundary-marked) tokens
  int num_continuation = 120; // word-internal tokens
  int num_words = 150;
  int successors = 8;         // candidate next words per word
  int min_words = 4;
  int max_words = 9;
  std::uint64_t seed = 7;
};

/// Word-level second-order Markov chain. Each word spells 2-3 tokens: one
/// boundary-marked initial token and one or two continuation tokens. The
/// next word is drawn from a per-word successor list whose Zipf weights are
/// re-shaped by the word before.
class SyntheticLanguage {
 public:
  explicit SyntheticLanguage(const LanguageConfig& cfg = {}) : cfg_(cfg) {
    if (cfg.num_initial < 1 || cfg.num_continuation < 1 || cfg.num_words < 2 || cfg.successors < 1 ||
        cfg.min_words < 1 || cfg.max_words < cfg.min_words) {
      throw Error("invalid synthetic language configuration");
    }
    Rng rng(derive_seed(cfg.seed, "language"));
    build_vocabulary(rng);
    build_lexicon(rng);
    build_chain(rng);
  }

  const Vocabulary& vocabulary() const { return vocab_; }
  const std::vector<TokenSeq>& lexicon() const { return lexicon_; }

  TokenSeq sample_sentence(Rng& rng) const {
    const auto n = static_cast<int>(rng.between(cfg_.min_words, cfg_.max_words));
    TokenSeq out;
    int prev2 = start_;
    int prev1 = start_;
    for (int i = 0; i < n; ++i) {
      const int w = next_word(prev2, prev1, rng);
      const auto& spelling = lexicon_[static_cast<std::size_t>(w)];
      out.insert(out.end(), spelling.begin(), spelling.end());
      prev2 = prev1;
      prev1 = w;
    }
    return out;
  }

  std::vector<Reference> sample_references(std::size_t count, Rng& rng,
                                           const std::string& prefix = "utt") const {
    std::vector<Reference> refs;
    refs.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%06zu", i);
      refs.push_back({prefix + "-" + buf, sample_sentence(rng)});
    }
    return refs;
  }

 private:
  void build_vocabulary(Rng& rng) {
    static constexpr const char* kOnsets[] = {"b", "d", "f", "g", "h", "k", "l", "m", "n",
                                              "p", "r", "s", "t", "v", "z", "ch", "sh", "th"};
    static constexpr const char* kVowels[] = {"a", "e", "i", "o", "u", "ai", "ou"};
    static constexpr const char* kCodas[] = {"", "n", "r", "s", "k"};
    std::vector<std::string> syllables;
    for (const char* o : kOnsets)
      for (const char* v : kVowels)
        for (const char* c : kCodas) syllables.push_back(std::string(o) + v + c);
    const auto need = static_cast<std::size_t>(std::max(cfg_.num_initial, cfg_.num_continuation));
    if (syllables.size() < need) throw Error("synthetic language asks for too many tokens");
    for (std::size_t i = syllables.size(); i > 1; --i) std::swap(syllables[i - 1], syllables[rng.below(i)]);

    std::vector<std::string> regular;
    const std::string marker(Vocabulary::kDefaultBoundary);
    for (int i = 0; i < cfg_.num_initial; ++i) regular.push_back(marker + syllables[static_cast<std::size_t>(i)]);
    for (std::size_t i = syllables.size(); i > 1; --i) std::swap(syllables[i - 1], syllables[rng.below(i)]);
    for (int i = 0; i < cfg_.num_continuation; ++i) regular.push_back(syllables[static_cast<std::size_t>(i)]);
    vocab_ = Vocabulary::with_specials(regular);
  }

  void build_lexicon(Rng& rng) {
    std::set<TokenSeq> seen;
    const auto first_cont = Vocabulary::kFirstRegular + cfg_.num_initial;
    while (static_cast<int>(lexicon_.size()) < cfg_.num_words) {
      TokenSeq w;
      w.push_back(static_cast<TokenId>(Vocabulary::kFirstRegular + static_cast<TokenId>(rng.below(static_cast<std::uint64_t>(cfg_.num_initial)))));
      const int extra = rng.bernoulli(0.5) ? 1 : 2;
      for (int i = 0; i < extra; ++i) {
        w.push_back(static_cast<TokenId>(first_cont + static_cast<TokenId>(rng.below(static_cast<std::uint64_t>(cfg_.num_continuation)))));
      }
      if (seen.insert(w).second) lexicon_.push_back(std::move(w));
    }
  }

  void build_chain(Rng& rng) {
    start_ = cfg_.num_words;
    chain_seed_ = rng.next();
    successors_.resize(static_cast<std::size_t>(cfg_.num_words) + 1);
    for (auto& list : successors_) {
      std::vector<int> all(static_cast<std::size_t>(cfg_.num_words));
      std::iota(all.begin(), all.end(), 0);
      const auto k = static_cast<std::size_t>(std::min(cfg_.successors, cfg_.num_words));
      for (std::size_t i = 0; i < k; ++i) std::swap(all[i], all[i + rng.below(all.size() - i)]);
      list.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k));
    }
  }

  int next_word(int prev2, int prev1, Rng& rng) const {
    const auto& cands = successors_[static_cast<std::size_t>(prev1)];
    std::vector<double> weights(cands.size());
    double total = 0.0;
    for (std::size_t i = 0; i < cands.size(); ++i) {
      const std::uint64_t h = splitmix64(chain_seed_ ^ (static_cast<std::uint64_t>(prev2) << 32) ^
                                         (static_cast<std::uint64_t>(prev1) << 12) ^ i);
      const double boost = (h & 3) == 0 ? 4.0 : 1.0;
      weights[i] = boost / static_cast<double>(i + 1);
      total += weights[i];
    }
    double u = rng.uniform() * total;
    for (std::size_t i = 0; i < cands.size(); ++i) {
      u -= weights[i];
      if (u < 0.0) return cands[i];
    }
    return cands.back();
  }

  LanguageConfig cfg_;
  Vocabulary vocab_;
  std::vector<TokenSeq> lexicon_;
  std::vector<std::vector<int>> successors_;
  int start_ = 0;
  std::uint64_t chain_seed_ = 0;
};

// ---------------------------------------------------------------------------
// Noisy channel

/// Beta(alpha, beta) rescaled onto [lo, hi].
struct ConfidenceShape {
  double alpha = 2.0;
  double beta = 2.0;
  double lo = 0.0;
  double hi = 1.0;

  static ConfidenceShape lerp(const ConfidenceShape& from, const ConfidenceShape& to, double t) {
    auto mix = [t](double a, double b) { return a + t * (b - a); };
    return {mix(from.alpha, to.alpha), mix(from.beta, to.beta), mix(from.lo, to.lo), mix(from.hi, to.hi)};
  }

  double sample(Rng& rng) const { return lo + (hi - lo) * rng.beta(alpha, beta); }

  bool operator==(const ConfidenceShape&) const = default;
};

struct CorruptionConfig {
  double sub_rate = 0.08;
  double ins_rate = 0.01;
  double del_rate = 0.01;
  /// 1: correct and erroneous tokens draw confidences from their own
  /// shapes; 0: both draw from `pooled_shape`. Parameters interpolate.
  double calibration = 0.6;
  double acoustic_fidelity = 0.8;
  int nbest_depth = 5;
  std::uint64_t seed = 7;
  double seconds_per_token = 0.15;
  ConfidenceShape correct_shape{8.0, 2.0, 0.0, 1.0};
  ConfidenceShape error_shape{2.0, 8.0, 0.0, 1.0};
  ConfidenceShape pooled_shape{2.0, 2.0, 0.0, 1.0};

  void validate() const {
    for (double r : {sub_rate, ins_rate, del_rate}) {
      if (!(r >= 0.0 && r < 1.0)) throw Error("corruption rates must lie in [0,1)");
    }
    if (!(sub_rate + ins_rate + del_rate < 1.0)) throw Error("sub + ins + del rates must sum to < 1");
    if (!(calibration >= 0.0 && calibration <= 1.0)) throw Error("calibration must lie in [0,1]");
    if (!(acoustic_fidelity >= 0.0 && acoustic_fidelity <= 1.0)) throw Error("acoustic_fidelity must lie in [0,1]");
    if (nbest_depth < 1) throw Error("nbest depth must be >= 1");
    if (!(seconds_per_token >= 0.0)) throw Error("seconds_per_token must be >= 0");
    for (const auto* s : {&correct_shape, &error_shape, &pooled_shape}) {
      if (!(s->alpha > 0.0 && s->beta > 0.0 && s->lo >= 0.0 && s->hi <= 1.0 && s->lo <= s->hi)) {
        throw Error("invalid confidence shape");
      }
    }
  }

  ConfidenceShape correct_at_calibration() const {
    return ConfidenceShape::lerp(pooled_shape, correct_shape, calibration);
  }
  ConfidenceShape error_at_calibration() const {
    return ConfidenceShape::lerp(pooled_shape, error_shape, calibration);
  }
};

/// Compact form of synthetic acoustic evidence: fidelity * one-hot(true
/// token) + (1 - fidelity) * uniform. `truth[j]` is the reference token
/// behind hypothesis position j, or -1 for inserted positions, whose
/// evidence is uniform.
struct EvidenceSketch {
  double fidelity = 0.0;
  TokenSeq truth;

  AcousticEvidence expand(std::size_t vocab_size) const {
    AcousticEvidence ev;
    const double floor = (1.0 - fidelity) / static_cast<double>(vocab_size - 1);
    const double flat = 1.0 / static_cast<double>(vocab_size - 1);
    ev.per_position.reserve(truth.size());
    for (TokenId t : truth) {
      std::vector<double> row(vocab_size, t < 0 ? flat : floor);
      row[Vocabulary::kMask] = 0.0;
      if (t >= 0) row[static_cast<std::size_t>(t)] += fidelity;
      ev.per_position.push_back(std::move(row));
    }
    return ev;
  }

  bool operator==(const EvidenceSketch&) const = default;
};

struct AppliedEdits {
  std::size_t substitutions = 0;
  std::size_t insertions = 0;
  std::size_t deletions = 0;

  AppliedEdits& operator+=(const AppliedEdits& o) {
    substitutions += o.substitutions;
    insertions += o.insertions;
    deletions += o.deletions;
    return *this;
  }
  bool operator==(const AppliedEdits&) const = default;
};

struct CorruptedHypothesis {
  Hypothesis hypothesis;
  EvidenceSketch evidence;
  /// True at substituted and inserted positions.
  std::vector<bool> error_flags;
  AppliedEdits applied;
};

inline CorruptedHypothesis corrupt_reference(std::span<const TokenId> reference,
                                             const CorruptionConfig& cfg, const Vocabulary& vocab,
                                             Rng& rng) {
  cfg.validate();
  if (reference.empty()) throw Error("cannot corrupt an empty reference");
  const auto regular = static_cast<std::uint64_t>(vocab.num_regular());
  if (regular < 2) throw Error("corruption needs at least two regular tokens");
  const ConfidenceShape good = cfg.correct_at_calibration();
  const ConfidenceShape bad = cfg.error_at_calibration();

  CorruptedHypothesis out;
  out.evidence.fidelity = cfg.acoustic_fidelity;
  auto emit = [&](TokenId token, TokenId truth, bool error) {
    out.hypothesis.tokens.push_back(token);
    out.hypothesis.confidences.push_back((error ? bad : good).sample(rng));
    out.evidence.truth.push_back(truth);
    out.error_flags.push_back(error);
  };
  auto random_token = [&] {
    return static_cast<TokenId>(Vocabulary::kFirstRegular + static_cast<TokenId>(rng.below(regular)));
  };
  auto maybe_insert = [&] {
    if (rng.bernoulli(cfg.ins_rate)) {
      emit(random_token(), -1, true);
      ++out.applied.insertions;
    }
  };

  for (TokenId true_token : reference) {
    maybe_insert();
    const double u = rng.uniform();
    if (u < cfg.sub_rate) {
      auto wrong = static_cast<TokenId>(Vocabulary::kFirstRegular + static_cast<TokenId>(rng.below(regular - 1)));
      if (wrong >= true_token) ++wrong;
      emit(wrong, true_token, true);
      ++out.applied.substitutions;
    } else if (u < cfg.sub_rate + cfg.del_rate) {
      ++out.applied.deletions;
    } else {
      emit(true_token, true_token, false);
    }
  }
  maybe_insert();

  double score = 0.0;
  for (double c : out.hypothesis.confidences) score += std::log(std::max(c, 1e-12));
  out.hypothesis.transducer_score = score;
  return out;
}

struct UtteranceTruth {
  std::string id;
  /// One entry per hypothesis, in n-best order.
  std::vector<std::vector<bool>> error_flags;
  std::vector<AppliedEdits> applied;
  std::vector<EvidenceSketch> evidence;

  bool operator==(const UtteranceTruth&) const = default;
};

struct SynthCorpus {
  std::vector<NBestList> corpus;
  std::vector<UtteranceTruth> truth;
};

/// `nbest_depth` independent corruptions per reference, ordered by
/// transducer score (summed log confidence), best first.
inline SynthCorpus build_corpus(const std::vector<Reference>& references, const CorruptionConfig& cfg,
                                const Vocabulary& vocab) {
  cfg.validate();
  if (references.empty()) throw Error("no references to corrupt");
  SynthCorpus out;
  out.corpus.reserve(references.size());
  out.truth.reserve(references.size());
  for (const auto& ref : references) {
    Rng rng(derive_seed(cfg.seed, ref.id));
    std::vector<CorruptedHypothesis> hyps;
    for (int i = 0; i < cfg.nbest_depth; ++i) {
      hyps.push_back(corrupt_reference(ref.tokens, cfg, vocab, rng));
      hyps.back().hypothesis.utterance_id = ref.id;
    }
    std::stable_sort(hyps.begin(), hyps.end(), [](const auto& a, const auto& b) {
      return a.hypothesis.transducer_score > b.hypothesis.transducer_score;
    });
    NBestList nb;
    nb.utterance_id = ref.id;
    nb.audio_seconds = cfg.seconds_per_token * static_cast<double>(ref.tokens.size());
    nb.reference = ref.tokens;
    UtteranceTruth truth;
    truth.id = ref.id;
    for (auto& h : hyps) {
      nb.hypotheses.push_back(std::move(h.hypothesis));
      truth.error_flags.push_back(std::move(h.error_flags));
      truth.applied.push_back(h.applied);
      truth.evidence.push_back(std::move(h.evidence));
    }
    out.corpus.push_back(std::move(nb));
    out.truth.push_back(std::move(truth));
  }
  return out;
}

/// Dense evidence for every hypothesis of an utterance.
inline std::vector<AcousticEvidence> expand_evidence(const UtteranceTruth& truth, std::size_t vocab_size) {
  std::vector<AcousticEvidence> out;
  out.reserve(truth.evidence.size());
  for (const auto& e : truth.evidence) out.push_back(e.expand(vocab_size));
  return out;
}

}  // namespace mlmsc
