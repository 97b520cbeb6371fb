// tests/test_lm.cpp
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

#include "catch_amalgamated.hpp"

#include "mlmsc/lm.hpp"
#include "mlmsc/synth.hpp"
#include "support.hpp"

using namespace mlmsc;
using namespace mlmsc::testing;
using Catch::Matchers::WithinAbs;

TEST_CASE("empty sequence scores zero", "[lm]") {
  const auto v = toy_vocab();
  NgramLm lm(v.size(), 3, 0.01);
  REQUIRE(lm_score(TokenSeq{}, lm) == 0.0);
}

TEST_CASE("uniform unigram counts give L log(1/V)", "[lm]") {
  const auto v = toy_vocab();
  NgramLm lm(v.size(), 1, 0.5);
  TokenSeq every;
  for (TokenId t = Vocabulary::kFirstRegular; t < static_cast<TokenId>(v.size()); ++t) every.push_back(t);
  for (int i = 0; i < 3; ++i) lm.add_sentence(every);
  Rng rng(51);
  const double per = std::log(1.0 / static_cast<double>(v.num_regular()));
  for (int trial = 0; trial < 100; ++trial) {
    const auto s = random_tokens(v, rng, 0, 12);
    REQUIRE_THAT(lm_score(s, lm), WithinAbs(static_cast<double>(s.size()) * per, 1e-12));
  }
}

TEST_CASE("add-k interpolation by hand", "[lm]") {
  const auto v = Vocabulary::with_specials({"p", "q"});
  NgramLm uni(v.size(), 1, 1.0);
  NgramLm lm(v.size(), 2, 1.0);
  uni.add_sentence(TokenSeq{2, 2, 3});
  lm.add_sentence(TokenSeq{2, 2, 3});
  // Unigram: n(p)=2, n(q)=1, N=3, k|V|=2 -> P(p)=3/5, P(q)=2/5.
  REQUIRE_THAT(uni.prob({}, 2), WithinAbs(0.6, 1e-15));
  // Bigram after p: n(p,p)=1, n(p,q)=1, n(p)=2 -> (1 + 2*0.4)/(2+2) for q.
  const TokenSeq hist{2};
  REQUIRE_THAT(lm.prob(hist, 3), WithinAbs((1.0 + 2.0 * 0.4) / 4.0, 1e-15));
  // First token conditions on the start symbol: n(<s>,p)=1, n(<s>)=1.
  REQUIRE_THAT(lm.prob({}, 2), WithinAbs((1.0 + 2.0 * 0.6) / 3.0, 1e-15));
  REQUIRE_THAT(lm_score(TokenSeq{2}, lm), WithinAbs(std::log((1.0 + 2.0 * 0.6) / 3.0), 1e-15));
}

TEST_CASE("conditional distributions normalize", "[lm][property]") {
  SyntheticLanguage lang;
  const auto& v = lang.vocabulary();
  Rng rng(52);
  for (int order : {1, 2, 3, 4}) {
    NgramLm lm(v.size(), order, 0.01);
    for (const auto& r : lang.sample_references(300, rng)) lm.add_sentence(r.tokens);
    for (int trial = 0; trial < 50; ++trial) {
      const auto hist = random_tokens(v, rng, 0, 4);
      double sum = 0.0;
      for (TokenId c = Vocabulary::kFirstRegular; c < static_cast<TokenId>(v.size()); ++c) sum += lm.prob(hist, c);
      REQUIRE_THAT(sum, WithinAbs(1.0, 1e-9));
    }
  }
}

TEST_CASE("training sentences outscore their permutations", "[lm]") {
  SyntheticLanguage lang;
  const auto& v = lang.vocabulary();
  Rng rng(53);
  std::vector<TokenSeq> refs;
  for (const auto& r : lang.sample_references(1000, rng)) refs.push_back(r.tokens);
  const auto lm = train_ngram_lm(refs, v, 3, 0.01);
  int checked = 0;
  for (std::size_t i = 0; i < 50; ++i) {
    auto perm = refs[i];
    for (std::size_t k = perm.size(); k > 1; --k) std::swap(perm[k - 1], perm[rng.below(k)]);
    if (perm == refs[i]) continue;
    REQUIRE(lm_score(refs[i], lm) > lm_score(perm, lm));
    ++checked;
  }
  REQUIRE(checked > 40);
}

TEST_CASE("history keys round-trip", "[lm]") {
  const TokenSeq h{5, 0, 199, 1000};
  REQUIRE(NgramLm::unpack(NgramLm::pack(h), h.size()) == h);
}

TEST_CASE("n-gram input checks", "[lm]") {
  const auto v = toy_vocab();
  REQUIRE_THROWS_AS(NgramLm(v.size(), 0, 0.1), Error);
  REQUIRE_THROWS_AS(NgramLm(v.size(), 5, 0.1), Error);
  REQUIRE_THROWS_AS(NgramLm(v.size(), 3, 0.0), Error);
  NgramLm lm(v.size(), 3, 0.1);
  REQUIRE_THROWS_AS(lm.add_sentence(TokenSeq{Vocabulary::kMask}), Error);
  REQUIRE_THROWS_AS(lm.prob({}, Vocabulary::kDel), Error);
  REQUIRE_THROWS_AS(train_ngram_lm({}, v), Error);
}
