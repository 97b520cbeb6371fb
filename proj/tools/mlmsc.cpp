// tools/mlmsc.cpp
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

// mlmsc command-line tool: generate references, synthesize n-best corpora,
// train scorers, decode and evaluate.
//
// Exit status: 0 success, 1 runtime failure, 2 usage error.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mlmsc/io.hpp"
#include "mlmsc/pipeline.hpp"
#include "mlmsc/synth.hpp"

namespace {

using namespace mlmsc;

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

std::string meta_path(const std::string& results) { return results + ".meta.json"; }

// Bad flag values are usage errors, not runtime failures.
template <class Config>
void validate_flags(const Config& cfg) {
  try {
    cfg.validate();
  } catch (const Error& e) {
    throw CLI::ValidationError(e.what());
  }
}

// ---------------------------------------------------------------------------
// gen-refs

struct GenRefsArgs {
  std::size_t count = 1000;
  std::uint64_t seed = 7;
  std::uint64_t language_seed = 7;
  std::string prefix = "utt";
  std::string vocab_out;
  std::string out;
};

void cmd_gen_refs(const GenRefsArgs& a) {
  LanguageConfig lc;
  lc.seed = a.language_seed;
  SyntheticLanguage lang(lc);
  Rng rng(derive_seed(a.seed, "references"));
  const auto refs = lang.sample_references(a.count, rng, a.prefix);
  save_vocabulary(lang.vocabulary(), a.vocab_out);
  save_references(refs, a.out, lang.vocabulary());
  std::cerr << "wrote " << refs.size() << " references to " << a.out << " and "
            << lang.vocabulary().size() << " vocabulary entries to " << a.vocab_out << "\n";
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
  std::string vocab;
  std::string refs;
  std::string out;
  std::string truth;
  CorruptionConfig cfg;
};

void cmd_synth(SynthArgs a) {
  validate_flags(a.cfg);
  const auto vocab = load_vocabulary(a.vocab);
  const auto refs = load_references(a.refs, vocab);
  const auto synth = build_corpus(refs, a.cfg, vocab);
  if (a.truth.empty()) a.truth = a.out + ".truth.jsonl";
  save_corpus(synth.corpus, a.out, vocab);
  save_truth(synth.truth, a.truth, vocab);
  std::cerr << "wrote " << synth.corpus.size() << " n-best lists to " << a.out << " (truth: " << a.truth
            << ")\n";
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string vocab;
  std::string refs;
  std::string mlm_out;
  std::string lm_out;
  MlmTrainConfig mlm;
  int lm_order = 3;
  double lm_k = 0.01;
};

void cmd_train(const TrainArgs& a) {
  const auto vocab = load_vocabulary(a.vocab);
  const auto refs = load_references(a.refs, vocab);
  std::vector<TokenSeq> tokens;
  tokens.reserve(refs.size());
  for (const auto& r : refs) {
    if (!r.tokens.empty()) tokens.push_back(r.tokens);
  }
  if (tokens.empty()) throw Error("'" + a.refs + "' holds no non-empty references");

  const auto mlm = train_count_mlm(tokens, a.mlm, vocab);
  Json mlm_meta;
  mlm_meta["references"] = a.refs;
  mlm_meta["num_references"] = tokens.size();
  mlm_meta["passes"] = a.mlm.passes;
  mlm_meta["max_mask_frac"] = a.mlm.max_mask_frac;
  mlm_meta["simulate_insertions"] = a.mlm.simulate_insertions;
  mlm_meta["ins_prob"] = a.mlm.ins_prob;
  mlm_meta["seed"] = a.mlm.seed;
  save_count_mlm(mlm, vocab, mlm_meta, a.mlm_out);

  const auto lm = train_ngram_lm(tokens, vocab, a.lm_order, a.lm_k);
  Json lm_meta;
  lm_meta["references"] = a.refs;
  lm_meta["num_references"] = tokens.size();
  save_ngram_lm(lm, vocab, lm_meta, a.lm_out);
  std::cerr << "trained on " << tokens.size() << " references; wrote " << a.mlm_out << " and " << a.lm_out
            << (mlm.predicts_del() ? " (MLM predicts <del>)" : "") << "\n";
}

// ---------------------------------------------------------------------------
// decode

struct DecodeArgs {
  std::string vocab;
  std::string corpus;
  std::string mlm;
  std::string lm;
  std::string truth;
  std::string out;
  std::string granularity = "token";
  bool no_baseline = false;
  bool keep_candidates = false;
  int workers = 1;
  DecodeConfig cfg;
};

void cmd_decode(DecodeArgs a) {
  a.cfg.mask.granularity = a.granularity == "word" ? MaskGranularity::kWord : MaskGranularity::kToken;
  a.cfg.mask.include_baseline = !a.no_baseline;
  validate_flags(a.cfg);
  if (a.workers < 1) throw CLI::ValidationError("--workers must be >= 1");

  const auto vocab = load_vocabulary(a.vocab);
  auto [mlm, mlm_ckpt] = load_count_mlm(a.mlm, vocab);
  auto [lm, lm_ckpt] = load_ngram_lm(a.lm, vocab);
  const auto corpus = load_corpus(a.corpus, vocab, [](const std::string& w) { std::cerr << "warning: " << w << "\n"; });
  std::vector<UtteranceTruth> truth;
  if (!a.truth.empty()) truth = load_truth(a.truth, vocab);
  const auto evidence = a.truth.empty() ? uniform_evidence(corpus, vocab.size())
                                        : truth_evidence(corpus, truth, vocab.size());

  // Timing covers the decode stage only; loading is excluded.
  const auto timed = timed_decode_corpus(corpus, evidence, a.cfg, vocab, mlm, lm, a.workers);

  auto out = open_for_write(a.out);
  for (const auto& r : timed.records) out << decode_record_to_json(r, vocab, a.keep_candidates).dump() << '\n';
  finish_write(out, a.out);

  double audio = 0.0;
  for (const auto& nb : corpus) audio += nb.audio_seconds;
  Json meta;
  meta["corpus"] = a.corpus;
  meta["num_utterances"] = corpus.size();
  meta["wall_seconds"] = timed.wall_seconds;
  meta["total_audio_seconds"] = audio;
  meta["workers"] = a.workers;
  meta["vocab_hash"] = hash_hex(vocab.hash());
  meta["threshold"] = a.cfg.mask.threshold;
  meta["samples"] = a.cfg.mask.num_samples;
  meta["sample_prob"] = a.cfg.mask.sample_prob;
  meta["nbest"] = a.cfg.nbest_depth;
  meta["mlm_weight"] = a.cfg.fusion.mlm_weight;
  meta["lm_weight"] = a.cfg.fusion.lm_weight;
  meta["granularity"] = a.granularity;
  meta["include_baseline"] = a.cfg.mask.include_baseline;
  meta["seed"] = a.cfg.mask.seed;
  meta["acoustics"] = a.truth.empty() ? "uniform" : a.truth;
  write_json_file(meta, meta_path(a.out), 2);
  std::cerr << "decoded " << corpus.size() << " utterances in " << timed.wall_seconds << " s\n";
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateArgs {
  std::string vocab;
  std::string corpus;
  std::string refs;
  std::vector<std::string> conditions;
  std::string unit = "word";
  bool baseline = false;
  bool oracle = false;
  std::string json_out;
};

std::pair<std::string, std::string> split_condition(const std::string& arg) {
  const auto eq = arg.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == arg.size()) {
    throw CLI::ValidationError("--result", "expected NAME=PATH, got '" + arg + "'");
  }
  return {arg.substr(0, eq), arg.substr(eq + 1)};
}

void cmd_evaluate(const EvaluateArgs& a) {
  const auto vocab = load_vocabulary(a.vocab);
  const auto corpus = load_corpus(a.corpus, vocab);
  const ErrorUnit unit = a.unit == "token" ? ErrorUnit::kToken : ErrorUnit::kWord;

  std::map<std::string, TokenSeq> ref_by_id;
  if (!a.refs.empty()) {
    for (auto& r : load_references(a.refs, vocab)) ref_by_id[r.id] = std::move(r.tokens);
  }
  std::vector<TokenSeq> references;
  double audio = 0.0;
  for (const auto& nb : corpus) {
    audio += nb.audio_seconds;
    if (auto it = ref_by_id.find(nb.utterance_id); it != ref_by_id.end()) {
      references.push_back(it->second);
    } else if (nb.reference) {
      references.push_back(*nb.reference);
    } else {
      throw Error("no reference for utterance '" + nb.utterance_id + "'");
    }
  }

  RunReport report;
  report.corpus_id = a.corpus;
  report.unit = a.unit;
  if (a.baseline) {
    std::vector<TokenSeq> top;
    for (const auto& nb : corpus) top.push_back(nb.hypotheses.front().tokens);
    report.rows.push_back(make_condition_row("bm-baseline", references, top, vocab, unit, 0.0, audio));
  }

  std::optional<ConditionRow> oracle_row;
  for (const auto& arg : a.conditions) {
    const auto [name, path] = split_condition(arg);
    const auto results = load_decode_results(path, vocab);
    std::map<std::string, const DecodeSummary*> by_id;
    for (const auto& r : results) by_id[r.id] = &r;
    std::vector<TokenSeq> outputs;
    std::vector<TokenSeq> oracle_outputs;
    bool have_candidates = true;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      auto it = by_id.find(corpus[i].utterance_id);
      if (it == by_id.end()) throw Error("'" + path + "' has no result for '" + corpus[i].utterance_id + "'");
      outputs.push_back(it->second->best_tokens);
      if (it->second->candidates.empty()) {
        have_candidates = false;
      } else if (a.oracle) {
        oracle_outputs.push_back(oracle_select(it->second->candidates, references[i], vocab, unit).tokens);
      }
    }
    double wall = 0.0;
    if (std::ifstream(meta_path(path))) wall = read_json_file(meta_path(path)).at("wall_seconds").get<double>();
    std::optional<std::vector<TokenSeq>> oracle;
    if (a.oracle && have_candidates) oracle = oracle_outputs;
    report.rows.push_back(make_condition_row(name, references, outputs, vocab, unit, wall, audio, oracle));
    if (oracle) oracle_row = make_condition_row("oracle", references, *oracle, vocab, unit, wall, audio);
  }
  if (a.oracle) {
    if (!oracle_row) throw Error("--oracle needs at least one result decoded with --keep-candidates");
    report.rows.push_back(*oracle_row);
  }

  std::cout << format_report(report);
  if (!a.json_out.empty()) write_json_file(report_to_json(report), a.json_out, 2);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mask-sampled MLM correction of n-best ASR hypotheses"};
  app.set_config("--config", "", "TOML/INI file with option defaults; command-line flags override");
  app.require_subcommand(1);

  GenRefsArgs gen;
  auto* g = app.add_subcommand("gen-refs", "Sample references from the synthetic language");
  g->add_option("--count", gen.count, "Number of references")->capture_default_str();
  g->add_option("--seed", gen.seed, "Sampling seed")->capture_default_str();
  g->add_option("--language-seed", gen.language_seed, "Seed of the synthetic language")->capture_default_str();
  g->add_option("--prefix", gen.prefix, "Utterance id prefix")->capture_default_str();
  g->add_option("--vocab-out", gen.vocab_out, "Vocabulary file to write")->required();
  g->add_option("-o,--out", gen.out, "Reference JSONL to write")->required();

  SynthArgs syn;
  auto* s = app.add_subcommand("synth", "Corrupt references into an n-best corpus");
  s->add_option("--vocab", syn.vocab, "Vocabulary file")->required();
  s->add_option("--refs", syn.refs, "Reference JSONL")->required();
  s->add_option("-o,--out", syn.out, "Corpus JSONL to write")->required();
  s->add_option("--truth", syn.truth, "Truth sidecar to write (default: OUT.truth.jsonl)");
  s->add_option("--sub", syn.cfg.sub_rate, "Substitution rate")->capture_default_str();
  s->add_option("--ins", syn.cfg.ins_rate, "Insertion rate per gap")->capture_default_str();
  s->add_option("--del", syn.cfg.del_rate, "Deletion rate")->capture_default_str();
  s->add_option("--calibration", syn.cfg.calibration, "Confidence calibration in [0,1]")->capture_default_str();
  s->add_option("--fidelity", syn.cfg.acoustic_fidelity, "Acoustic evidence fidelity in [0,1]")
      ->capture_default_str();
  s->add_option("--nbest", syn.cfg.nbest_depth, "Hypotheses per utterance")->capture_default_str();
  s->add_option("--seed", syn.cfg.seed, "Corruption seed")->capture_default_str();
  s->add_option("--seconds-per-token", syn.cfg.seconds_per_token, "Nominal audio duration per token")
      ->capture_default_str();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train the count MLM and the n-gram LM");
  t->add_option("--vocab", tr.vocab, "Vocabulary file")->required();
  t->add_option("--refs", tr.refs, "Reference JSONL")->required();
  t->add_option("--mlm-out", tr.mlm_out, "MLM checkpoint to write")->required();
  t->add_option("--lm-out", tr.lm_out, "LM checkpoint to write")->required();
  t->add_flag("--sim-ins", tr.mlm.simulate_insertions, "Simulate insertion errors (teaches <del>)");
  t->add_option("--ins-prob", tr.mlm.ins_prob, "Per-gap insertion probability with --sim-ins")
      ->capture_default_str();
  t->add_option("--max-mask-frac", tr.mlm.max_mask_frac, "Largest masked fraction per example")
      ->capture_default_str();
  t->add_option("--passes", tr.mlm.passes, "Masked examples drawn per reference")->capture_default_str();
  t->add_option("--seed", tr.mlm.seed, "Training seed")->capture_default_str();
  t->add_option("--acoustic-weight", tr.mlm.params.acoustic_weight, "Exponent on acoustic evidence")
      ->capture_default_str();
  t->add_option("--smoothing-k", tr.mlm.params.smoothing_k, "MLM backoff strength per token")
      ->capture_default_str();
  t->add_option("--lm-order", tr.lm_order, "N-gram order (1-4)")->capture_default_str();
  t->add_option("--lm-k", tr.lm_k, "N-gram add-k constant")->capture_default_str();

  DecodeArgs dec;
  auto* d = app.add_subcommand("decode", "Correct every n-best list");
  d->add_option("--vocab", dec.vocab, "Vocabulary file")->required();
  d->add_option("--corpus", dec.corpus, "Corpus JSONL")->required();
  d->add_option("--mlm", dec.mlm, "MLM checkpoint")->required();
  d->add_option("--lm", dec.lm, "LM checkpoint")->required();
  d->add_option("--truth", dec.truth, "Truth sidecar supplying acoustic evidence (default: uniform)");
  d->add_option("-o,--out", dec.out, "Decode-result JSONL to write")->required();
  d->add_option("--threshold", dec.cfg.mask.threshold, "Confidence threshold")->capture_default_str();
  d->add_option("--samples", dec.cfg.mask.num_samples, "Mask solutions per hypothesis")->capture_default_str();
  d->add_option("--sample-prob", dec.cfg.mask.sample_prob, "Keep-mask probability for low-confidence positions")
      ->capture_default_str();
  d->add_option("--nbest", dec.cfg.nbest_depth, "Hypotheses corrected per utterance")->capture_default_str();
  d->add_option("--mlm-weight", dec.cfg.fusion.mlm_weight, "Fusion weight of the MLM score")
      ->capture_default_str();
  d->add_option("--lm-weight", dec.cfg.fusion.lm_weight, "Fusion weight of the LM score")->capture_default_str();
  d->add_option("--granularity", dec.granularity, "Mask unit")
      ->check(CLI::IsMember({"token", "word"}))
      ->capture_default_str();
  d->add_flag("--no-baseline", dec.no_baseline, "Do not force the thresholded mask into the sample set");
  d->add_flag("--length-normalize", dec.cfg.length_normalize, "Divide scores by candidate length");
  d->add_option("--seed", dec.cfg.mask.seed, "Mask sampling seed")->capture_default_str();
  d->add_option("--workers", dec.workers, "Utterance-parallel worker threads")->capture_default_str();
  d->add_flag("--keep-candidates", dec.keep_candidates, "Store every candidate (needed for --oracle)");

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "Score decode results and print the report");
  e->add_option("--vocab", ev.vocab, "Vocabulary file")->required();
  e->add_option("--corpus", ev.corpus, "Corpus JSONL (audio durations, fallback references)")->required();
  e->add_option("--refs", ev.refs, "Reference JSONL overriding the corpus references");
  e->add_option("--result", ev.conditions, "NAME=PATH of a decode-result file; repeatable");
  e->add_option("--unit", ev.unit, "Error unit (token gives CER-style rates)")
      ->check(CLI::IsMember({"word", "token"}))
      ->capture_default_str();
  e->add_flag("--baseline", ev.baseline, "Add the top first-pass hypothesis as bm-baseline");
  e->add_flag("--oracle", ev.oracle, "Add oracle rates from stored candidate sets");
  e->add_option("--json", ev.json_out, "Write the machine-readable report here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForAllHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return kExitUsage;
  }

  try {
    if (g->parsed()) cmd_gen_refs(gen);
    if (s->parsed()) cmd_synth(syn);
    if (t->parsed()) cmd_train(tr);
    if (d->parsed()) cmd_decode(dec);
    if (e->parsed()) cmd_evaluate(ev);
  } catch (const CLI::ValidationError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
