// samples/quickstart.cpp
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

// End-to-end in memory: synthesize a small corpus, train both scorers and
// compare plain correction with mask-sampled 5-best correction.

#include <cstdio>

#include "mlmsc/pipeline.hpp"
#include "mlmsc/synth.hpp"

using namespace mlmsc;

int main() {
  SyntheticLanguage lang;
  const Vocabulary& vocab = lang.vocabulary();

  Rng rng(derive_seed(1, "quickstart"));
  std::vector<TokenSeq> train;
  for (const auto& r : lang.sample_references(5000, rng, "train")) train.push_back(r.tokens);
  const auto test = lang.sample_references(500, rng, "test");

  MlmTrainConfig mcfg;
  const CountMlm mlm = train_count_mlm(train, mcfg, vocab);
  const NgramLm lm = train_ngram_lm(train, vocab);

  const SynthCorpus synth = build_corpus(test, CorruptionConfig{}, vocab);
  const auto evidence = truth_evidence(synth.corpus, synth.truth, vocab.size());

  std::vector<TokenSeq> refs, top;
  for (const auto& nb : synth.corpus) {
    refs.push_back(*nb.reference);
    top.push_back(nb.hypotheses.front().tokens);
  }
  auto wer = [&](const std::vector<TokenSeq>& out) {
    return corpus_error_rate(corpus_error_counts(refs, out, vocab, ErrorUnit::kWord));
  };

  auto run = [&](int samples, int depth) {
    DecodeConfig cfg;
    cfg.mask.num_samples = samples;
    cfg.nbest_depth = depth;
    std::vector<TokenSeq> out;
    for (const auto& r : decode_corpus(synth.corpus, evidence, cfg, vocab, mlm, lm)) {
      out.push_back(r.result.best.tokens);
    }
    return wer(out);
  };

  std::printf("first pass      WER %.2f%%\n", 100.0 * wer(top));
  std::printf("plain MLM-SC    WER %.2f%%\n", 100.0 * run(1, 1));
  std::printf("MS-decode 5best WER %.2f%%\n", 100.0 * run(10, 5));
}
