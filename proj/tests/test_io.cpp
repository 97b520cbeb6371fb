// tests/test_io.cpp
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

#include <filesystem>
#include <fstream>
#include <sstream>

#include "catch_amalgamated.hpp"

#include "mlmsc/io.hpp"
#include "mlmsc/synth.hpp"
#include "support.hpp"

using namespace mlmsc;
using namespace mlmsc::testing;

namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path dir;
  TempDir() {
    dir = fs::temp_directory_path() / ("mlmsc-io-" + std::to_string(derive_seed(std::random_device{}(), "tmp")));
    fs::create_directories(dir);
  }
  ~TempDir() { fs::remove_all(dir); }
  std::string path(const std::string& name) const { return (dir / name).string(); }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

NBestList random_nbest(const Vocabulary& v, Rng& rng, int index) {
  NBestList nb;
  nb.utterance_id = "utt-" + std::to_string(index);
  nb.audio_seconds = 10.0 * rng.uniform();
  if (rng.bernoulli(0.5)) nb.reference = random_tokens(v, rng, 0, 6);
  const auto n = 1 + rng.below(4);
  double score = 0.0;
  for (std::size_t h = 0; h < n; ++h) {
    auto hyp = random_hypothesis(v, rng, 0, 6);
    hyp.utterance_id = nb.utterance_id;
    score -= rng.uniform();
    hyp.transducer_score = score;
    nb.hypotheses.push_back(std::move(hyp));
  }
  return nb;
}

}  // namespace

TEST_CASE("empty corpus file", "[io][corpus]") {
  TempDir t;
  const auto v = toy_vocab();
  write(t.path("empty.jsonl"), "");
  REQUIRE(load_corpus(t.path("empty.jsonl"), v).empty());
  save_corpus({}, t.path("out.jsonl"), v);
  REQUIRE(slurp(t.path("out.jsonl")).empty());
}

TEST_CASE("single record loads", "[io][corpus]") {
  TempDir t;
  const auto v = toy_vocab();
  write(t.path("one.jsonl"),
        "{\"id\":\"u1\",\"audio_seconds\":1.5,\"hyps\":[{\"tokens\":[\"\xE2\x96\x81" "a\",\"x\",\"y\"],"
        "\"confidences\":[0.9,0.5,0.2],\"score\":-3.0}]}\n\n");
  const auto c = load_corpus(t.path("one.jsonl"), v);
  REQUIRE(c.size() == 1);
  REQUIRE(c[0].hypotheses.size() == 1);
  REQUIRE(c[0].hypotheses[0].size() == 3);
  REQUIRE_FALSE(c[0].reference.has_value());
}

TEST_CASE("length mismatch is reported with its line", "[io][corpus]") {
  TempDir t;
  const auto v = toy_vocab();
  write(t.path("bad.jsonl"),
        "{\"id\":\"u1\",\"audio_seconds\":1,\"hyps\":[{\"tokens\":[\"x\",\"y\",\"z\"],"
        "\"confidences\":[0.9,0.5],\"score\":-3.0}]}\n");
  REQUIRE_THROWS_WITH(load_corpus(t.path("bad.jsonl"), v), Catch::Matchers::ContainsSubstring("bad.jsonl:1"));
  write(t.path("junk.jsonl"), "{not json\n");
  REQUIRE_THROWS_AS(load_corpus(t.path("junk.jsonl"), v), Error);
  write(t.path("unknown.jsonl"),
        "{\"id\":\"u1\",\"audio_seconds\":1,\"hyps\":[{\"tokens\":[\"nope\"],\"confidences\":[0.9],\"score\":0}]}\n");
  REQUIRE_THROWS_WITH(load_corpus(t.path("unknown.jsonl"), v), Catch::Matchers::ContainsSubstring("unknown token"));
  REQUIRE_THROWS_AS(load_corpus(t.path("missing.jsonl"), v), Error);
}

TEST_CASE("corpus round trip over random corpora", "[io][corpus][property]") {
  TempDir t;
  const auto v = toy_vocab();
  Rng rng(71);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<NBestList> corpus;
    const auto n = rng.below(6);
    for (std::size_t i = 0; i < n; ++i) corpus.push_back(random_nbest(v, rng, static_cast<int>(i)));
    save_corpus(corpus, t.path("c.jsonl"), v);
    const auto back = load_corpus(t.path("c.jsonl"), v);
    REQUIRE(back == corpus);
  }
}

TEST_CASE("absent reference is omitted", "[io][corpus]") {
  TempDir t;
  const auto v = toy_vocab();
  Rng rng(72);
  auto nb = random_nbest(v, rng, 0);
  nb.reference.reset();
  save_corpus({nb}, t.path("c.jsonl"), v);
  REQUIRE(slurp(t.path("c.jsonl")).find("\"reference\"") == std::string::npos);
}

TEST_CASE("unsorted lists are re-sorted with a warning", "[io][corpus]") {
  TempDir t;
  const auto v = toy_vocab();
  write(t.path("u.jsonl"),
        "{\"id\":\"u\",\"audio_seconds\":1,\"hyps\":["
        "{\"tokens\":[\"x\"],\"confidences\":[0.1],\"score\":-5},"
        "{\"tokens\":[\"y\"],\"confidences\":[0.9],\"score\":-1}]}\n");
  std::vector<std::string> warnings;
  const auto c = load_corpus(t.path("u.jsonl"), v, [&](const std::string& w) { warnings.push_back(w); });
  REQUIRE(warnings.size() == 1);
  REQUIRE(c[0].is_sorted());
  REQUIRE(c[0].hypotheses[0].tokens == ids(v, {"y"}));
}

TEST_CASE("vocabulary, references and truth round trip", "[io]") {
  TempDir t;
  SyntheticLanguage lang;
  const auto& v = lang.vocabulary();
  save_vocabulary(v, t.path("v.txt"));
  const auto back = load_vocabulary(t.path("v.txt"));
  REQUIRE(back == v);
  REQUIRE(back.hash() == v.hash());

  Rng rng(73);
  const auto refs = lang.sample_references(30, rng);
  save_references(refs, t.path("r.jsonl"), v);
  REQUIRE(load_references(t.path("r.jsonl"), v) == refs);

  CorruptionConfig cfg;
  cfg.ins_rate = 0.1;
  const auto synth = build_corpus(refs, cfg, v);
  save_truth(synth.truth, t.path("t.jsonl"), v);
  REQUIRE(load_truth(t.path("t.jsonl"), v) == synth.truth);
}

TEST_CASE("decode records round trip", "[io][decode]") {
  TempDir t;
  const auto v = toy_vocab();
  Rng rng(74);
  DecodeRecord r;
  r.id = "u7";
  for (int i = 0; i < 4; ++i) {
    CorrectionCandidate c;
    c.tokens = random_tokens(v, rng, 0, 5);
    c.source_hyp_index = i % 2;
    c.mask_used = MaskSolution({true, false, true});
    c.mlm_score = -rng.uniform();
    c.lm_score = -10 * rng.uniform();
    c.fused_score = c.mlm_score + 0.5 * c.lm_score;
    r.result.all.push_back(c);
  }
  r.result.best = select_best(r.result.all);
  {
    auto out = open_for_write(t.path("d.jsonl"));
    out << decode_record_to_json(r, v, true).dump() << '\n';
    out << decode_record_to_json(r, v, false).dump() << '\n';
  }
  const auto back = load_decode_results(t.path("d.jsonl"), v);
  REQUIRE(back.size() == 2);
  REQUIRE(back[0].best_tokens == r.result.best.tokens);
  REQUIRE(back[0].fused_score == r.result.best.fused_score);
  REQUIRE(back[0].num_candidates == 4);
  REQUIRE(back[0].candidates.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    REQUIRE(back[0].candidates[i].tokens == r.result.all[i].tokens);
    REQUIRE(back[0].candidates[i].mask_used == r.result.all[i].mask_used);
    REQUIRE(back[0].candidates[i].lm_score == r.result.all[i].lm_score);
  }
  REQUIRE(back[1].candidates.empty());
}

TEST_CASE("checkpoints round trip byte for byte", "[io][checkpoint]") {
  TempDir t;
  SyntheticLanguage lang;
  const auto& v = lang.vocabulary();
  Rng rng(75);
  std::vector<TokenSeq> refs;
  for (const auto& r : lang.sample_references(400, rng)) refs.push_back(r.tokens);
  MlmTrainConfig cfg;
  cfg.simulate_insertions = true;
  const auto mlm = train_count_mlm(refs, cfg, v);
  const auto lm = train_ngram_lm(refs, v, 3, 0.01);
  const Json meta = {{"max_mask_frac", 0.4}};

  save_count_mlm(mlm, v, meta, t.path("m.json"));
  save_ngram_lm(lm, v, meta, t.path("l.json"));
  auto [mlm2, mck] = load_count_mlm(t.path("m.json"), v);
  auto [lm2, lck] = load_ngram_lm(t.path("l.json"), v);
  REQUIRE(mck.training == meta);
  REQUIRE(mck.vocab_hash == hash_hex(v.hash()));
  save_count_mlm(mlm2, v, mck.training, t.path("m2.json"));
  save_ngram_lm(lm2, v, lck.training, t.path("l2.json"));
  REQUIRE(slurp(t.path("m.json")) == slurp(t.path("m2.json")));
  REQUIRE(slurp(t.path("l.json")) == slurp(t.path("l2.json")));

  REQUIRE(mlm2.predicts_del() == mlm.predicts_del());
  std::vector<double> a(v.size()), b(v.size());
  for (int trial = 0; trial < 100; ++trial) {
    const auto l = static_cast<TokenId>(rng.below(mlm.context_size()));
    const auto r = static_cast<TokenId>(rng.below(mlm.context_size()));
    mlm.context_distribution(l, r, a);
    mlm2.context_distribution(l, r, b);
    REQUIRE(a == b);
    const auto hist = random_tokens(v, rng, 0, 3);
    const auto c = random_regular(v, rng);
    REQUIRE(lm.prob(hist, c) == lm2.prob(hist, c));
  }
}

TEST_CASE("checkpoints refuse another vocabulary", "[io][checkpoint]") {
  TempDir t;
  SyntheticLanguage lang;
  const auto& v = lang.vocabulary();
  std::vector<TokenSeq> refs{lang.lexicon()[0], lang.lexicon()[1]};
  save_count_mlm(train_count_mlm(refs, MlmTrainConfig{}, v), v, Json::object(), t.path("m.json"));
  save_ngram_lm(train_ngram_lm(refs, v), v, Json::object(), t.path("l.json"));
  LanguageConfig other;
  other.seed = 99;
  const auto w = SyntheticLanguage(other).vocabulary();
  REQUIRE_THROWS_WITH(load_count_mlm(t.path("m.json"), w), Catch::Matchers::ContainsSubstring("vocabulary hash"));
  REQUIRE_THROWS_WITH(load_ngram_lm(t.path("l.json"), w), Catch::Matchers::ContainsSubstring("vocabulary hash"));
  REQUIRE_THROWS_AS(load_count_mlm(t.path("l.json"), v), Error);
  write(t.path("junk.json"), "[1,2");
  REQUIRE_THROWS_AS(load_ngram_lm(t.path("junk.json"), v), Error);
}
