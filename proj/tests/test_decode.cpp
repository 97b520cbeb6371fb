// tests/test_decode.cpp
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

#include <set>

#include "catch_amalgamated.hpp"

#include "mlmsc/decode.hpp"
#include "mlmsc/synth.hpp"
#include "support.hpp"

using namespace mlmsc;
using namespace mlmsc::testing;
using Catch::Matchers::WithinAbs;

namespace {

struct World {
  SyntheticLanguage lang;
  CountMlm mlm;
  NgramLm lm;

  explicit World(double aw = 0.4) {
    Rng rng(61);
    std::vector<TokenSeq> refs;
    for (const auto& r : lang.sample_references(2000, rng, "train")) refs.push_back(r.tokens);
    MlmTrainConfig cfg;
    cfg.params.acoustic_weight = aw;
    mlm = train_count_mlm(refs, cfg, lang.vocabulary());
    lm = train_ngram_lm(refs, lang.vocabulary());
  }
  const Vocabulary& vocab() const { return lang.vocabulary(); }
};

const World& world() {
  static const World w;
  return w;
}

SynthCorpus small_corpus(std::size_t n, std::uint64_t seed, const Vocabulary& v, const SyntheticLanguage& lang) {
  Rng rng(seed);
  CorruptionConfig cfg;
  cfg.seed = seed;
  return build_corpus(lang.sample_references(n, rng, "u"), cfg, v);
}

std::size_t errors(const TokenSeq& ref, const TokenSeq& hyp, const Vocabulary& v) {
  return word_error_counts(ref, hyp, v).errors();
}

}  // namespace

TEST_CASE("fusion arithmetic", "[decode][fusion]") {
  REQUIRE(fuse(-2.0, -4.0, FusionWeights{}) == -4.0);
  REQUIRE(fuse(-2.5, -9.0, FusionWeights{1.0, 0.0}) == -2.5);
}

TEST_CASE("confident hypotheses come back unchanged", "[decode]") {
  const auto& w = world();
  Rng sentence_rng(5);
  Hypothesis h;
  h.tokens = w.lang.sample_sentence(sentence_rng);
  h.confidences.assign(h.tokens.size(), 0.99);
  Rng rng(1);
  const auto res = correct_hypothesis(h, AcousticEvidence::uniform(h.size(), w.vocab().size()), DecodeConfig{},
                                      w.vocab(), w.mlm, w.lm, rng);
  REQUIRE(res.all.size() == 1);
  REQUIRE(res.best.tokens == h.tokens);
  REQUIRE(res.best.mlm_score == 0.0);
  REQUIRE(res.best.mask_used.count() == 0);
}

TEST_CASE("one sample with baseline is plain correction", "[decode]") {
  const auto& w = world();
  const auto synth = small_corpus(100, 3, w.vocab(), w.lang);
  DecodeConfig cfg;
  cfg.mask.num_samples = 1;
  for (std::size_t i = 0; i < synth.corpus.size(); ++i) {
    const auto& h = synth.corpus[i].hypotheses[0];
    const auto ev = synth.truth[i].evidence[0].expand(w.vocab().size());
    Rng rng(9);
    const auto res = correct_hypothesis(h, ev, cfg, w.vocab(), w.mlm, w.lm, rng);
    REQUIRE(res.all.size() == 1);
    const auto plain = mlm_fill_and_score(h.tokens, threshold_mask(h, cfg.mask.threshold), ev, w.mlm);
    REQUIRE(res.best.tokens == plain.tokens);
    REQUIRE(res.best.mlm_score == plain.mlm_score);
  }
}

TEST_CASE("oracle acoustics repair a flagged substitution", "[decode][oracle-acoustic]") {
  static const World strong(50.0);
  const auto& v = strong.vocab();
  Rng rng(62);
  for (int trial = 0; trial < 100; ++trial) {
    const auto ref = strong.lang.sample_sentence(rng);
    Hypothesis h;
    h.tokens = ref;
    h.confidences.assign(ref.size(), 0.99);
    const auto j = static_cast<std::size_t>(rng.below(ref.size()));
    while (h.tokens[j] == ref[j]) h.tokens[j] = random_regular(v, rng);
    h.confidences[j] = 0.2;
    EvidenceSketch sketch{1.0, ref};
    DecodeConfig cfg;
    cfg.mask.num_samples = 1;
    Rng r(3);
    const auto res = correct_hypothesis(h, sketch.expand(v.size()), cfg, v, strong.mlm, strong.lm, r);
    REQUIRE(res.best.tokens == ref);
  }
}

TEST_CASE("fused scores are consistent with their weights", "[decode][fusion]") {
  const auto& w = world();
  const auto synth = small_corpus(30, 4, w.vocab(), w.lang);
  DecodeConfig cfg;
  cfg.fusion = {0.7, 1.3};
  for (std::size_t i = 0; i < synth.corpus.size(); ++i) {
    const auto ev = expand_evidence(synth.truth[i], w.vocab().size());
    const auto res = correct_nbest(synth.corpus[i], ev, cfg, w.vocab(), w.mlm, w.lm);
    for (const auto& c : res.all) {
      REQUIRE(c.fused_score == 0.7 * c.mlm_score + 1.3 * c.lm_score);
      REQUIRE_THAT(c.lm_score, WithinAbs(lm_score(c.tokens, w.lm), 1e-12));
    }
  }
}

TEST_CASE("depth one matches single-hypothesis correction", "[decode][nbest]") {
  const auto& w = world();
  const auto synth = small_corpus(50, 5, w.vocab(), w.lang);
  DecodeConfig cfg;
  cfg.nbest_depth = 1;
  cfg.mask.seed = 17;
  for (std::size_t i = 0; i < synth.corpus.size(); ++i) {
    const auto ev = expand_evidence(synth.truth[i], w.vocab().size());
    const auto nb = correct_nbest(synth.corpus[i], ev, cfg, w.vocab(), w.mlm, w.lm);
    Rng rng = hypothesis_rng(cfg.mask.seed, synth.corpus[i].utterance_id, 0);
    const auto single = correct_hypothesis(synth.corpus[i].hypotheses[0], ev[0], cfg, w.vocab(), w.mlm, w.lm, rng);
    REQUIRE(nb.all.size() == single.all.size());
    REQUIRE(nb.best.tokens == single.best.tokens);
    REQUIRE(nb.best.fused_score == single.best.fused_score);
  }
}

TEST_CASE("candidate counts and set nesting across depth", "[decode][nbest][property]") {
  const auto& w = world();
  const auto synth = small_corpus(200, 6, w.vocab(), w.lang);
  DecodeConfig d1;
  d1.nbest_depth = 1;
  DecodeConfig d5;
  for (std::size_t i = 0; i < synth.corpus.size(); ++i) {
    const auto ev = expand_evidence(synth.truth[i], w.vocab().size());
    const auto a = correct_nbest(synth.corpus[i], ev, d1, w.vocab(), w.mlm, w.lm);
    const auto b = correct_nbest(synth.corpus[i], ev, d5, w.vocab(), w.mlm, w.lm);
    REQUIRE(b.all.size() <= 5u * 10u);
    std::set<std::pair<int, std::vector<bool>>> deep;
    for (const auto& c : b.all) deep.insert({c.source_hyp_index, c.mask_used.flags});
    for (const auto& c : a.all) REQUIRE(deep.count({c.source_hyp_index, c.mask_used.flags}) == 1);
    const auto& ref = *synth.corpus[i].reference;
    REQUIRE(errors(ref, oracle_select(b.all, ref, w.vocab()).tokens, w.vocab()) <=
            errors(ref, oracle_select(a.all, ref, w.vocab()).tokens, w.vocab()));
  }
}

TEST_CASE("oracle selection", "[decode][oracle]") {
  const auto v = toy_vocab();
  CorrectionCandidate a;
  a.tokens = ids(v, {"_a", "x"});
  a.fused_score = -1.0;
  REQUIRE(oracle_select({a}, ids(v, {"_b"}), v).tokens == a.tokens);

  CorrectionCandidate b = a;
  b.tokens = ids(v, {"_b"});
  b.fused_score = -50.0;
  const std::vector<CorrectionCandidate> both{a, b};
  REQUIRE(oracle_select(both, ids(v, {"_b"}), v).tokens == b.tokens);
  REQUIRE_THROWS_AS(oracle_select({}, ids(v, {"_b"}), v), Error);
}

TEST_CASE("oracle never loses to fused selection", "[decode][oracle][property]") {
  const auto v = toy_vocab();
  Rng rng(63);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto ref = random_tokens(v, rng, 1, 8);
    std::vector<CorrectionCandidate> cands(1 + rng.below(8));
    for (auto& c : cands) {
      c.tokens = random_tokens(v, rng, 0, 8);
      c.fused_score = -10.0 * rng.uniform();
      c.mask_used = MaskSolution(c.tokens.size());
    }
    const auto& o = oracle_select(cands, ref, v);
    REQUIRE(errors(ref, o.tokens, v) <= errors(ref, select_best(cands).tokens, v));
  }
}

TEST_CASE("selection ties prefer fewer masks then smaller tokens", "[decode][fusion]") {
  CorrectionCandidate a, b;
  a.tokens = {3, 4};
  b.tokens = {2, 9};
  a.mask_used = MaskSolution({true, false});
  b.mask_used = MaskSolution({true, true});
  a.fused_score = b.fused_score = -3.0;
  REQUIRE(select_best({b, a}).tokens == a.tokens);
  b.mask_used = MaskSolution({false, true});
  REQUIRE(select_best({a, b}).tokens == b.tokens);
}

TEST_CASE("mismatched evidence is rejected", "[decode]") {
  const auto& w = world();
  Hypothesis h{{2, 3}, {0.1, 0.1}, 0.0, "u"};
  Rng rng(1);
  REQUIRE_THROWS_AS(correct_hypothesis(h, AcousticEvidence::uniform(3, w.vocab().size()), DecodeConfig{}, w.vocab(),
                                       w.mlm, w.lm, rng),
                    Error);
  NBestList nb;
  nb.utterance_id = "u";
  nb.hypotheses = {h};
  REQUIRE_THROWS_AS(correct_nbest(nb, {}, DecodeConfig{}, w.vocab(), w.mlm, w.lm), Error);
}
