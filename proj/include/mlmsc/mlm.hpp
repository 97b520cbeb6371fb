// mlmsc/mlm.hpp
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

// Acoustic-aware masked language model: the scorer interface, the
// count-based reference model, one-pass fill, the masked cross-entropy loss
// and the training-example masking policies.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mlmsc/core.hpp"
#include "mlmsc/random.hpp"

namespace mlmsc {

class MlmSession;

/// Masked LM that conditions on unmasked tokens and per-position acoustic
/// evidence. Implementations are immutable once built and may be shared
/// across threads.
class MlmScorer {
 public:
  virtual ~MlmScorer() = default;

  virtual std::size_t vocab_size() const = 0;

  /// Posterior over the vocabulary for `input[pos]`, where masked positions
  /// of `input` hold Vocabulary::kMask. `out` has vocab_size() entries.
  virtual void position_distribution(std::span<const TokenId> input, std::size_t pos,
                                     std::span<const double> evidence,
                                     std::span<double> out) const = 0;

  /// Scratch state for a run of related calls (one utterance). The default
  /// session forwards to position_distribution.
  virtual std::unique_ptr<MlmSession> session() const;
};

class MlmSession {
 public:
  explicit MlmSession(const MlmScorer& scorer) : scorer_(scorer) {}
  virtual ~MlmSession() = default;

  const MlmScorer& scorer() const { return scorer_; }

  virtual void position_distribution(std::span<const TokenId> input, std::size_t pos,
                                     std::span<const double> evidence, std::span<double> out) {
    scorer_.position_distribution(input, pos, evidence, out);
  }

  /// Argmax token (lowest id on ties) and its log probability.
  virtual std::pair<TokenId, double> choose(std::span<const TokenId> input, std::size_t pos,
                                            std::span<const double> evidence) {
    scratch_.resize(scorer_.vocab_size());
    position_distribution(input, pos, evidence, scratch_);
    const auto best = std::max_element(scratch_.begin(), scratch_.end()) - scratch_.begin();
    return {static_cast<TokenId>(best), std::log(scratch_[static_cast<std::size_t>(best)])};
  }

  /// Drops anything memoized against previously seen evidence. Must be
  /// called before reusing a session with evidence whose storage may have
  /// been recycled.
  virtual void forget_evidence() {}

 private:
  std::vector<double> scratch_;
  const MlmScorer& scorer_;
};

inline std::unique_ptr<MlmSession> MlmScorer::session() const {
  return std::make_unique<MlmSession>(*this);
}

struct FillResult {
  TokenSeq tokens;
  double mlm_score = 0.0;
};

/// One non-autoregressive pass. Every masked position is replaced by the
/// argmax (lowest id on ties) of its distribution given the masked input;
/// fills never see each other. `mlm_score` sums the log probabilities of
/// the chosen tokens. Positions filled with <del> are dropped.
inline FillResult mlm_fill_and_score(std::span<const TokenId> tokens, const MaskSolution& mask,
                                     const AcousticEvidence& acoustic, MlmSession& session) {
  if (mask.size() != tokens.size() || acoustic.size() != tokens.size()) {
    throw Error("mlm fill: tokens, mask and acoustic evidence lengths differ (" +
                std::to_string(tokens.size()) + ", " + std::to_string(mask.size()) + ", " +
                std::to_string(acoustic.size()) + ")");
  }
  TokenSeq input(tokens.begin(), tokens.end());
  for (std::size_t j = 0; j < input.size(); ++j) {
    if (mask.flags[j]) input[j] = Vocabulary::kMask;
  }
  TokenSeq filled = input;
  double score = 0.0;
  for (std::size_t j = 0; j < input.size(); ++j) {
    if (!mask.flags[j]) continue;
    const auto [token, logp] = session.choose(input, j, acoustic.per_position[j]);
    filled[j] = token;
    score += logp;
  }
  FillResult out;
  out.mlm_score = score;
  out.tokens.reserve(filled.size());
  for (TokenId t : filled) {
    if (t != Vocabulary::kDel) out.tokens.push_back(t);
  }
  return out;
}

inline FillResult mlm_fill_and_score(std::span<const TokenId> tokens, const MaskSolution& mask,
                                     const AcousticEvidence& acoustic, const MlmScorer& scorer) {
  auto session = scorer.session();
  return mlm_fill_and_score(tokens, mask, acoustic, *session);
}

/// Masked cross-entropy: minus the summed log probability of the target at
/// every masked position. Unmasked positions contribute nothing.
inline double mlm_loss(const std::vector<std::vector<double>>& log_probs,
                       std::span<const TokenId> targets, const MaskSolution& mask) {
  if (log_probs.size() != targets.size() || mask.size() != targets.size()) {
    throw Error("mlm loss: lengths differ");
  }
  double loss = 0.0;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    if (mask.flags[t]) loss -= log_probs[t][static_cast<std::size_t>(targets[t])];
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Training examples

struct TrainingExample {
  /// What the first pass would have emitted: reference tokens plus any
  /// simulated insertions.
  TokenSeq observed_tokens;
  /// observed_tokens with masked positions replaced by <mask>.
  TokenSeq input_tokens;
  /// Gold token per input position; <del> at simulated insertions.
  TokenSeq target_tokens;
  MaskSolution mask_flags;
  /// Length of the reference the example was built from.
  std::size_t reference_length = 0;

  bool operator==(const TrainingExample&) const = default;
};

/// Largest number of reference tokens one example may mask: floor(frac*len),
/// but never less than one.
inline std::size_t mask_budget(std::size_t length, double max_mask_frac) {
  const auto cap = static_cast<std::size_t>(std::floor(max_mask_frac * static_cast<double>(length) + 1e-12));
  return std::max<std::size_t>(1, cap);
}

/// Draws m uniformly from {1, ..., mask_budget(len)} and masks m distinct
/// uniformly chosen positions.
inline TrainingExample make_training_example(std::span<const TokenId> reference,
                                             double max_mask_frac, Rng& rng) {
  if (reference.empty()) throw Error("cannot build a training example from an empty reference");
  if (!(max_mask_frac > 0.0 && max_mask_frac <= 1.0)) throw Error("max_mask_frac must lie in (0,1]");
  const std::size_t n = reference.size();
  const std::size_t budget = std::min(n, mask_budget(n, max_mask_frac));
  const auto m = static_cast<std::size_t>(rng.between(1, static_cast<std::int64_t>(budget)));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t k = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(order[i], order[k]);
  }

  TrainingExample ex;
  ex.observed_tokens.assign(reference.begin(), reference.end());
  ex.input_tokens = ex.observed_tokens;
  ex.target_tokens = ex.observed_tokens;
  ex.mask_flags = MaskSolution(n);
  ex.reference_length = n;
  for (std::size_t i = 0; i < m; ++i) {
    ex.mask_flags.flags[order[i]] = true;
    ex.input_tokens[order[i]] = Vocabulary::kMask;
  }
  return ex;
}

/// Insertion-error simulation. Each of the len+1 gaps independently
/// receives, with probability `ins_prob`, a uniformly drawn regular token;
/// the inserted position is masked and its target is <del>. The masking
/// budget still applies to the reference tokens; inserted positions are
/// additional noise.
inline TrainingExample simulate_insertions(const TrainingExample& example, double ins_prob,
                                           const Vocabulary& vocab, Rng& rng) {
  if (!(ins_prob >= 0.0 && ins_prob <= 1.0)) throw Error("ins_prob must lie in [0,1]");
  if (vocab.num_regular() == 0) throw Error("vocabulary has no regular tokens");
  TrainingExample out;
  out.reference_length = example.reference_length;
  const std::size_t n = example.observed_tokens.size();
  std::vector<bool> flags;
  auto maybe_insert = [&] {
    if (!rng.bernoulli(ins_prob)) return;
    const auto noise =
        static_cast<TokenId>(Vocabulary::kFirstRegular + static_cast<TokenId>(rng.below(vocab.num_regular())));
    out.observed_tokens.push_back(noise);
    out.input_tokens.push_back(Vocabulary::kMask);
    out.target_tokens.push_back(Vocabulary::kDel);
    flags.push_back(true);
  };
  for (std::size_t i = 0; i < n; ++i) {
    maybe_insert();
    out.observed_tokens.push_back(example.observed_tokens[i]);
    out.input_tokens.push_back(example.input_tokens[i]);
    out.target_tokens.push_back(example.target_tokens[i]);
    flags.push_back(example.mask_flags.flags[i]);
  }
  maybe_insert();
  out.mask_flags = MaskSolution(std::move(flags));

  return out;
}

// ---------------------------------------------------------------------------
// Count-based MLM

struct CountMlmParams {
  /// Dirichlet strength per support entry when backing off.
  double smoothing_k = 0.1;
  /// Exponent on the acoustic evidence in the log-linear combination.
  double acoustic_weight = 0.4;
};

/// Desk-scale acoustic-aware MLM. The center-token distribution combines
/// (left, right) context counts backed off to the product of the
/// single-side distributions, times the acoustic evidence raised to
/// `acoustic_weight`, renormalized. Neighbors that are masked enter the
/// context as <mask>; sequence edges use dedicated boundary contexts.
class CountMlm final : public MlmScorer {
 public:
  using Count = std::uint64_t;

  CountMlm() = default;
  CountMlm(std::size_t vocab_size, CountMlmParams params)
      : vocab_size_(vocab_size),
        params_(params),
        unigram_(vocab_size, 0),
        left_(context_size() * vocab_size, 0),
        right_(context_size() * vocab_size, 0) {
    if (vocab_size < 3) throw Error("count MLM needs at least one regular token");
    if (!(params.smoothing_k > 0.0)) throw Error("smoothing_k must be > 0");
    if (!(params.acoustic_weight >= 0.0)) throw Error("acoustic_weight must be >= 0");
    finalize();
  }

  std::size_t vocab_size() const override { return vocab_size_; }
  const CountMlmParams& params() const { return params_; }
  TokenId bos() const { return static_cast<TokenId>(vocab_size_); }
  TokenId eos() const { return static_cast<TokenId>(vocab_size_ + 1); }
  std::size_t context_size() const { return vocab_size_ + 2; }

  /// Records one (left context, center, right context) observation.
  /// Call finalize() before scoring.
  void add(TokenId left, TokenId center, TokenId right, Count n = 1) {
    check_context(left);
    check_context(right);
    if (center < Vocabulary::kDel || static_cast<std::size_t>(center) >= vocab_size_) {
      throw Error("count MLM center token out of range");
    }
    const auto c = static_cast<std::size_t>(center);
    unigram_[c] += n;
    left_[static_cast<std::size_t>(left) * vocab_size_ + c] += n;
    right_[static_cast<std::size_t>(right) * vocab_size_ + c] += n;
    auto& row = pair_[pair_key(left, right)];
    row.counts[center] += n;
    row.total += n;
    finalized_ = false;
  }

  void add_example(const TrainingExample& ex) {
    const std::size_t n = ex.input_tokens.size();
    for (std::size_t t = 0; t < n; ++t) {
      if (!ex.mask_flags.flags[t]) continue;
      const TokenId l = t > 0 ? ex.input_tokens[t - 1] : bos();
      const TokenId r = t + 1 < n ? ex.input_tokens[t + 1] : eos();
      add(l, ex.target_tokens[t], r);
    }
  }

  /// Rebuilds the dense backoff tables from the counts.
  void finalize() {
    const std::size_t v = vocab_size_;
    support_.clear();
    predicts_del_ = unigram_[Vocabulary::kDel] > 0;
    if (predicts_del_) support_.push_back(Vocabulary::kDel);
    for (std::size_t c = Vocabulary::kFirstRegular; c < v; ++c) support_.push_back(static_cast<TokenId>(c));
    const double s = static_cast<double>(support_.size());
    strength_ = params_.smoothing_k * s;

    Count total = 0;
    for (TokenId c : support_) total += unigram_[static_cast<std::size_t>(c)];
    uni_.assign(v, 0.0);
    inv_uni_.assign(v, 0.0);
    for (TokenId c : support_) {
      const auto ci = static_cast<std::size_t>(c);
      uni_[ci] = (static_cast<double>(unigram_[ci]) + params_.smoothing_k) /
                 (static_cast<double>(total) + strength_);
      inv_uni_[ci] = 1.0 / uni_[ci];
    }
    auto side = [&](const std::vector<Count>& counts, std::vector<double>& probs) {
      probs.assign(context_size() * v, 0.0);
      for (std::size_t ctx = 0; ctx < context_size(); ++ctx) {
        Count row_total = 0;
        for (TokenId c : support_) row_total += counts[ctx * v + static_cast<std::size_t>(c)];
        const double denom = static_cast<double>(row_total) + strength_;
        for (TokenId c : support_) {
          const auto ci = static_cast<std::size_t>(c);
          probs[ctx * v + ci] = (static_cast<double>(counts[ctx * v + ci]) + strength_ * uni_[ci]) / denom;
        }
      }
    };
    side(left_, left_prob_);
    side(right_, right_prob_);
    finalized_ = true;
  }

  bool predicts_del() const { return predicts_del_; }

  /// Context-only distribution (no acoustics) for a (left, right) pair.
  void context_distribution(TokenId left, TokenId right, std::span<double> out) const {
    require_finalized();
    check_context(left);
    check_context(right);
    const std::size_t v = vocab_size_;
    std::fill(out.begin(), out.end(), 0.0);
    const double* pl = &left_prob_[static_cast<std::size_t>(left) * v];
    const double* pr = &right_prob_[static_cast<std::size_t>(right) * v];
    double z = 0.0;
    for (TokenId c : support_) {
      const auto ci = static_cast<std::size_t>(c);
      const double b = pl[ci] * pr[ci] * inv_uni_[ci];
      out[ci] = b;
      z += b;
    }
    double pair_total = 0.0;
    const PairRow* row = nullptr;
    if (auto it = pair_.find(pair_key(left, right)); it != pair_.end()) {
      row = &it->second;
      pair_total = static_cast<double>(row->total);
    }
    const double denom = pair_total + strength_;
    const double back_scale = strength_ / (z * denom);
    for (TokenId c : support_) out[static_cast<std::size_t>(c)] *= back_scale;
    if (row != nullptr) {
      for (const auto& [c, n] : row->counts) out[static_cast<std::size_t>(c)] += static_cast<double>(n) / denom;
    }
  }

  /// Multiplies a context distribution by evidence^acoustic_weight and
  /// renormalizes in place.
  void apply_acoustics(std::span<double> probs, std::span<const double> evidence) const {
    if (evidence.size() != vocab_size_) throw Error("acoustic evidence row has wrong size");
    const double w = params_.acoustic_weight;
    if (w == 0.0) return;
    double z = 0.0;
    double last_e = -1.0;
    double last_f = 0.0;
    for (TokenId c : support_) {
      const auto ci = static_cast<std::size_t>(c);
      const double e = evidence[ci];
      if (e != last_e) {
        last_e = e;
        last_f = e > 0.0 ? std::pow(e, w) : 0.0;
      }
      probs[ci] *= last_f;
      z += probs[ci];
    }
    if (!(z > 0.0)) throw Error("acoustic evidence rules out every token");
    const double inv = 1.0 / z;
    for (TokenId c : support_) probs[static_cast<std::size_t>(c)] *= inv;
  }

  void position_distribution(std::span<const TokenId> input, std::size_t pos,
                             std::span<const double> evidence, std::span<double> out) const override {
    const auto [l, r] = neighbors(input, pos);
    context_distribution(l, r, out);
    apply_acoustics(out, evidence);
  }

  std::pair<TokenId, TokenId> neighbors(std::span<const TokenId> input, std::size_t pos) const {
    if (pos >= input.size()) throw Error("position out of range");
    const TokenId l = pos > 0 ? input[pos - 1] : bos();
    const TokenId r = pos + 1 < input.size() ? input[pos + 1] : eos();
    return {l, r};
  }

  std::unique_ptr<MlmSession> session() const override;

  // Raw counts, for serialization and inspection.
  struct PairRow {
    std::map<TokenId, Count> counts;
    Count total = 0;
  };
  const std::vector<Count>& unigram_counts() const { return unigram_; }
  const std::vector<Count>& left_counts() const { return left_; }
  const std::vector<Count>& right_counts() const { return right_; }
  const std::unordered_map<std::uint64_t, PairRow>& pair_counts() const { return pair_; }
  std::uint64_t pair_key(TokenId left, TokenId right) const {
    return static_cast<std::uint64_t>(left) * context_size() + static_cast<std::uint64_t>(right);
  }
  std::pair<TokenId, TokenId> unpack_pair_key(std::uint64_t key) const {
    return {static_cast<TokenId>(key / context_size()), static_cast<TokenId>(key % context_size())};
  }

 private:
  void check_context(TokenId ctx) const {
    if (ctx < 0 || static_cast<std::size_t>(ctx) >= context_size()) {
      throw Error("count MLM context id out of range: " + std::to_string(ctx));
    }
  }
  void require_finalized() const {
    if (!finalized_) throw Error("count MLM used before finalize()");
  }

  std::size_t vocab_size_ = 0;
  CountMlmParams params_;
  std::vector<Count> unigram_;
  std::vector<Count> left_;
  std::vector<Count> right_;
  std::unordered_map<std::uint64_t, PairRow> pair_;

  bool finalized_ = false;
  bool predicts_del_ = false;
  double strength_ = 0.0;
  std::vector<TokenId> support_;
  std::vector<double> uni_;
  std::vector<double> inv_uni_;
  std::vector<double> left_prob_;
  std::vector<double> right_prob_;
};

/// Session that memoizes context distributions by (left, right) pair, so
/// fills that share a neighborhood only pay for the acoustic product. Fill
/// choices are memoized per evidence row and neighborhood, which is what
/// makes many mask solutions over one hypothesis cheap.
class CountMlmSession final : public MlmSession {
 public:
  explicit CountMlmSession(const CountMlm& mlm) : MlmSession(mlm), mlm_(mlm) {}

  void position_distribution(std::span<const TokenId> input, std::size_t pos,
                             std::span<const double> evidence, std::span<double> out) override {
    const auto [l, r] = mlm_.neighbors(input, pos);
    const auto key = mlm_.pair_key(l, r);
    auto it = cache_.find(key);
    if (it == cache_.end()) {
      std::vector<double> ctx(mlm_.vocab_size());
      mlm_.context_distribution(l, r, ctx);
      it = cache_.emplace(key, std::move(ctx)).first;
    }
    std::copy(it->second.begin(), it->second.end(), out.begin());
    mlm_.apply_acoustics(out, evidence);
  }

  std::pair<TokenId, double> choose(std::span<const TokenId> input, std::size_t pos,
                                    std::span<const double> evidence) override {
    const auto [l, r] = mlm_.neighbors(input, pos);
    const ChoiceKey key{evidence.data(), mlm_.pair_key(l, r)};
    if (auto it = choices_.find(key); it != choices_.end()) return it->second;
    const auto choice = MlmSession::choose(input, pos, evidence);
    choices_.emplace(key, choice);
    return choice;
  }

  void forget_evidence() override { choices_.clear(); }

 private:
  struct ChoiceKey {
    const double* row;
    std::uint64_t pair;
    bool operator==(const ChoiceKey&) const = default;
  };
  struct ChoiceHash {
    std::size_t operator()(const ChoiceKey& k) const {
      return std::hash<const double*>()(k.row) ^ (std::hash<std::uint64_t>()(k.pair) * 0x9E3779B97F4A7C15ull);
    }
  };

  const CountMlm& mlm_;
  std::unordered_map<std::uint64_t, std::vector<double>> cache_;
  std::unordered_map<ChoiceKey, std::pair<TokenId, double>, ChoiceHash> choices_;
};

inline std::unique_ptr<MlmSession> CountMlm::session() const {
  return std::make_unique<CountMlmSession>(*this);
}

struct MlmTrainConfig {
  int passes = 4;
  double max_mask_frac = 0.4;
  bool simulate_insertions = false;
  double ins_prob = 0.05;
  std::uint64_t seed = 0;
  CountMlmParams params;
};

/// Accumulates context counts from masked training examples drawn from
/// `references`, `passes` fresh examples per reference.
inline CountMlm train_count_mlm(const std::vector<TokenSeq>& references, const MlmTrainConfig& cfg,
                                const Vocabulary& vocab) {
  if (references.empty()) throw Error("cannot train a count MLM on an empty corpus");
  if (cfg.passes < 1) throw Error("passes must be >= 1");
  CountMlm mlm(vocab.size(), cfg.params);
  Rng rng(derive_seed(cfg.seed, "count-mlm-train"));
  for (int pass = 0; pass < cfg.passes; ++pass) {
    for (const auto& ref : references) {
      if (ref.empty()) continue;
      auto ex = make_training_example(ref, cfg.max_mask_frac, rng);
      if (cfg.simulate_insertions) ex = simulate_insertions(ex, cfg.ins_prob, vocab, rng);
      mlm.add_example(ex);
    }
  }
  mlm.finalize();
  return mlm;
}

/// Per-position log distributions for a masked input (rows for unmasked
/// positions are left empty). Used to evaluate mlm_loss on held-out data.
inline std::vector<std::vector<double>> mlm_log_distributions(std::span<const TokenId> input,
                                                              const MaskSolution& mask,
                                                              const AcousticEvidence& acoustic,
                                                              const MlmScorer& scorer) {
  std::vector<std::vector<double>> rows(input.size());
  for (std::size_t t = 0; t < input.size(); ++t) {
    if (!mask.flags[t]) continue;
    rows[t].assign(scorer.vocab_size(), 0.0);
    scorer.position_distribution(input, t, acoustic.per_position[t], rows[t]);
    for (double& p : rows[t]) p = std::log(p);
  }
  return rows;
}

}  // namespace mlmsc
