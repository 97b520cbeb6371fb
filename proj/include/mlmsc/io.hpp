// mlmsc/io.hpp
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

// File formats: vocabulary text files, the n-best corpus JSONL, reference
// and truth sidecars, decode results and scorer checkpoints.

#pragma once

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "json.hpp"
#include "mlmsc/core.hpp"
#include "mlmsc/decode.hpp"
#include "mlmsc/lm.hpp"
#include "mlmsc/mlm.hpp"
#include "mlmsc/synth.hpp"

namespace mlmsc {

using Json = nlohmann::ordered_json;

inline std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016" PRIx64, h);
  return buf;
}

inline std::ofstream open_for_write(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  return out;
}

inline std::ifstream open_for_read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "' for reading");
  return in;
}

inline void finish_write(std::ofstream& out, const std::string& path) {
  out.flush();
  if (!out) throw Error("write to '" + path + "' failed");
}

/// Calls `fn(line_number, json)` for every non-blank line of a JSONL file.
inline void for_each_jsonl(const std::string& path,
                           const std::function<void(std::size_t, const Json&)>& fn) {
  auto in = open_for_read(path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::parse_error& e) {
      throw Error(path + ":" + std::to_string(lineno) + ": malformed JSON: " + e.what());
    }
    try {
      fn(lineno, j);
    } catch (const Json::exception& e) {
      throw Error(path + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

// ---------------------------------------------------------------------------
// Vocabulary: one surface per line, line number = id. The first two lines
// are the mask and delete surfaces.

inline Vocabulary load_vocabulary(const std::string& path,
                                  std::string boundary_marker = std::string(Vocabulary::kDefaultBoundary)) {
  auto in = open_for_read(path);
  std::vector<std::string> entries;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    entries.push_back(line);
  }
  while (!entries.empty() && entries.back().empty()) entries.pop_back();
  return Vocabulary(std::move(entries), std::move(boundary_marker));
}

inline void save_vocabulary(const Vocabulary& vocab, const std::string& path) {
  auto out = open_for_write(path);
  for (const auto& e : vocab.entries()) out << e << '\n';
  finish_write(out, path);
}

// ---------------------------------------------------------------------------
// Token helpers

inline Json surfaces_json(std::span<const TokenId> tokens, const Vocabulary& vocab) {
  Json arr = Json::array();
  for (TokenId t : tokens) arr.push_back(vocab.surface(t));
  return arr;
}

inline TokenSeq tokens_from_json(const Json& arr, const Vocabulary& vocab) {
  if (!arr.is_array()) throw Error("expected an array of token surfaces");
  TokenSeq out;
  out.reserve(arr.size());
  for (const auto& s : arr) out.push_back(vocab.id(s.get<std::string>()));
  return out;
}

// ---------------------------------------------------------------------------
// N-best corpus JSONL:
// {"id", "audio_seconds", "reference"?, "hyps": [{"tokens", "confidences", "score"}]}

inline Json nbest_to_json(const NBestList& nb, const Vocabulary& vocab) {
  Json j;
  j["id"] = nb.utterance_id;
  j["audio_seconds"] = nb.audio_seconds;
  if (nb.reference) j["reference"] = surfaces_json(*nb.reference, vocab);
  Json hyps = Json::array();
  for (const auto& h : nb.hypotheses) {
    Json hj;
    hj["tokens"] = surfaces_json(h.tokens, vocab);
    hj["confidences"] = h.confidences;
    hj["score"] = h.transducer_score;
    hyps.push_back(std::move(hj));
  }
  j["hyps"] = std::move(hyps);
  return j;
}

inline NBestList nbest_from_json(const Json& j, const Vocabulary& vocab) {
  NBestList nb;
  nb.utterance_id = j.at("id").get<std::string>();
  nb.audio_seconds = j.at("audio_seconds").get<double>();
  if (j.contains("reference")) nb.reference = tokens_from_json(j.at("reference"), vocab);
  for (const auto& hj : j.at("hyps")) {
    Hypothesis h;
    h.utterance_id = nb.utterance_id;
    h.tokens = tokens_from_json(hj.at("tokens"), vocab);
    h.confidences = hj.at("confidences").get<std::vector<double>>();
    h.transducer_score = hj.at("score").get<double>();
    nb.hypotheses.push_back(std::move(h));
  }
  nb.validate();
  return nb;
}

/// Loads an n-best corpus. Lists whose hypotheses are not ordered by
/// descending score are re-sorted and reported through `warn`.
inline std::vector<NBestList> load_corpus(const std::string& path, const Vocabulary& vocab,
                                          const std::function<void(const std::string&)>& warn = {}) {
  std::vector<NBestList> corpus;
  for_each_jsonl(path, [&](std::size_t lineno, const Json& j) {
    auto nb = nbest_from_json(j, vocab);
    if (!nb.is_sorted()) {
      std::stable_sort(nb.hypotheses.begin(), nb.hypotheses.end(),
                       [](const Hypothesis& a, const Hypothesis& b) {
                         return a.transducer_score > b.transducer_score;
                       });
      if (warn) {
        warn(path + ":" + std::to_string(lineno) + ": hypotheses of '" + nb.utterance_id +
             "' were not sorted by score; re-sorted");
      }
    }
    corpus.push_back(std::move(nb));
  });
  return corpus;
}

inline void save_corpus(const std::vector<NBestList>& corpus, const std::string& path,
                        const Vocabulary& vocab) {
  auto out = open_for_write(path);
  for (const auto& nb : corpus) {
    nb.validate();
    out << nbest_to_json(nb, vocab).dump() << '\n';
  }
  finish_write(out, path);
}

// ---------------------------------------------------------------------------
// References: {"id", "tokens"}

inline std::vector<Reference> load_references(const std::string& path, const Vocabulary& vocab) {
  std::vector<Reference> refs;
  for_each_jsonl(path, [&](std::size_t, const Json& j) {
    refs.push_back({j.at("id").get<std::string>(), tokens_from_json(j.at("tokens"), vocab)});
  });
  return refs;
}

inline void save_references(const std::vector<Reference>& refs, const std::string& path,
                            const Vocabulary& vocab) {
  auto out = open_for_write(path);
  for (const auto& r : refs) {
    Json j;
    j["id"] = r.id;
    j["tokens"] = surfaces_json(r.tokens, vocab);
    out << j.dump() << '\n';
  }
  finish_write(out, path);
}

// ---------------------------------------------------------------------------
// Truth sidecar written by the synthesizer:
// {"id", "error_flags": [[...] per hyp], "applied": [{"S","I","D"} per hyp],
//  "acoustic_fidelity", "aligned_truth": [[surface | null, ...] per hyp]}

inline Json truth_to_json(const UtteranceTruth& t, const Vocabulary& vocab) {
  Json j;
  j["id"] = t.id;
  Json flags = Json::array();
  for (const auto& f : t.error_flags) {
    Json row = Json::array();
    for (bool b : f) row.push_back(b);
    flags.push_back(std::move(row));
  }
  j["error_flags"] = std::move(flags);
  Json applied = Json::array();
  for (const auto& a : t.applied) {
    applied.push_back(Json{{"S", a.substitutions}, {"I", a.insertions}, {"D", a.deletions}});
  }
  j["applied"] = std::move(applied);
  j["acoustic_fidelity"] = t.evidence.empty() ? 0.0 : t.evidence.front().fidelity;
  Json truth = Json::array();
  for (const auto& e : t.evidence) {
    Json row = Json::array();
    for (TokenId id : e.truth) {
      if (id < 0) {
        row.push_back(nullptr);
      } else {
        row.push_back(vocab.surface(id));
      }
    }
    truth.push_back(std::move(row));
  }
  j["aligned_truth"] = std::move(truth);
  return j;
}

inline UtteranceTruth truth_from_json(const Json& j, const Vocabulary& vocab) {
  UtteranceTruth t;
  t.id = j.at("id").get<std::string>();
  for (const auto& row : j.at("error_flags")) t.error_flags.push_back(row.get<std::vector<bool>>());
  for (const auto& a : j.at("applied")) {
    t.applied.push_back({a.at("S").get<std::size_t>(), a.at("I").get<std::size_t>(), a.at("D").get<std::size_t>()});
  }
  const double fidelity = j.at("acoustic_fidelity").get<double>();
  for (const auto& row : j.at("aligned_truth")) {
    EvidenceSketch e;
    e.fidelity = fidelity;
    for (const auto& s : row) e.truth.push_back(s.is_null() ? TokenId{-1} : vocab.id(s.get<std::string>()));
    t.evidence.push_back(std::move(e));
  }
  return t;
}

inline std::vector<UtteranceTruth> load_truth(const std::string& path, const Vocabulary& vocab) {
  std::vector<UtteranceTruth> out;
  for_each_jsonl(path, [&](std::size_t, const Json& j) { out.push_back(truth_from_json(j, vocab)); });
  return out;
}

inline void save_truth(const std::vector<UtteranceTruth>& truth, const std::string& path,
                       const Vocabulary& vocab) {
  auto out = open_for_write(path);
  for (const auto& t : truth) out << truth_to_json(t, vocab).dump() << '\n';
  finish_write(out, path);
}

// ---------------------------------------------------------------------------
// Decode results:
// {"id", "best_tokens", "fused_score", "mlm_score", "lm_score",
//  "source_hyp_index", "num_candidates", "candidates"?}

struct DecodeRecord {
  std::string id;
  CorrectionResult result;
};

inline Json candidate_to_json(const CorrectionCandidate& c, const Vocabulary& vocab) {
  Json j;
  j["tokens"] = surfaces_json(c.tokens, vocab);
  j["source_hyp_index"] = c.source_hyp_index;
  std::string mask;
  for (bool b : c.mask_used.flags) mask.push_back(b ? '1' : '0');
  j["mask"] = mask;
  j["mlm_score"] = c.mlm_score;
  j["lm_score"] = c.lm_score;
  j["fused_score"] = c.fused_score;
  return j;
}

inline CorrectionCandidate candidate_from_json(const Json& j, const Vocabulary& vocab) {
  CorrectionCandidate c;
  c.tokens = tokens_from_json(j.at("tokens"), vocab);
  c.source_hyp_index = j.at("source_hyp_index").get<int>();
  for (char ch : j.at("mask").get<std::string>()) c.mask_used.flags.push_back(ch == '1');
  c.mlm_score = j.at("mlm_score").get<double>();
  c.lm_score = j.at("lm_score").get<double>();
  c.fused_score = j.at("fused_score").get<double>();
  return c;
}

inline Json decode_record_to_json(const DecodeRecord& r, const Vocabulary& vocab, bool keep_candidates) {
  Json j;
  j["id"] = r.id;
  j["best_tokens"] = surfaces_json(r.result.best.tokens, vocab);
  j["fused_score"] = r.result.best.fused_score;
  j["mlm_score"] = r.result.best.mlm_score;
  j["lm_score"] = r.result.best.lm_score;
  j["source_hyp_index"] = r.result.best.source_hyp_index;
  j["num_candidates"] = r.result.all.size();
  if (keep_candidates) {
    Json all = Json::array();
    for (const auto& c : r.result.all) all.push_back(candidate_to_json(c, vocab));
    j["candidates"] = std::move(all);
  }
  return j;
}

/// Decode results as read back for evaluation. `candidates` is empty unless
/// the decoder stored them.
struct DecodeSummary {
  std::string id;
  TokenSeq best_tokens;
  double fused_score = 0.0;
  double mlm_score = 0.0;
  double lm_score = 0.0;
  int source_hyp_index = 0;
  std::size_t num_candidates = 0;
  std::vector<CorrectionCandidate> candidates;
};

inline std::vector<DecodeSummary> load_decode_results(const std::string& path, const Vocabulary& vocab) {
  std::vector<DecodeSummary> out;
  for_each_jsonl(path, [&](std::size_t, const Json& j) {
    DecodeSummary s;
    s.id = j.at("id").get<std::string>();
    s.best_tokens = tokens_from_json(j.at("best_tokens"), vocab);
    s.fused_score = j.at("fused_score").get<double>();
    s.mlm_score = j.at("mlm_score").get<double>();
    s.lm_score = j.at("lm_score").get<double>();
    s.source_hyp_index = j.at("source_hyp_index").get<int>();
    s.num_candidates = j.at("num_candidates").get<std::size_t>();
    if (j.contains("candidates")) {
      for (const auto& c : j.at("candidates")) s.candidates.push_back(candidate_from_json(c, vocab));
    }
    out.push_back(std::move(s));
  });
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints. One JSON document per scorer carrying the vocabulary hash,
// hyperparameters, free-form training metadata and the raw counts in a
// canonical (sorted) order, so load + save reproduces the same bytes.

inline constexpr const char* kCountMlmFormat = "mlmsc-count-mlm";
inline constexpr const char* kNgramLmFormat = "mlmsc-ngram-lm";
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  std::string vocab_hash;
  Json training = Json::object();
};

inline void check_header(const Json& j, const char* format, const std::string& path) {
  if (!j.is_object() || j.value("format", std::string()) != format) {
    throw Error("'" + path + "' is not a " + std::string(format) + " checkpoint");
  }
  if (j.at("version").get<int>() != kCheckpointVersion) {
    throw Error("'" + path + "': unsupported checkpoint version");
  }
}

inline void check_vocab_hash(const std::string& stored, const Vocabulary& vocab, const std::string& path) {
  if (stored != hash_hex(vocab.hash())) {
    throw Error("'" + path + "': vocabulary hash mismatch (checkpoint " + stored + ", vocabulary " +
                hash_hex(vocab.hash()) + ")");
  }
}

inline Json read_json_file(const std::string& path) {
  auto in = open_for_read(path);
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw Error("'" + path + "': malformed JSON: " + e.what());
  }
}

inline void write_json_file(const Json& j, const std::string& path, int indent = -1) {
  auto out = open_for_write(path);
  out << j.dump(indent) << '\n';
  finish_write(out, path);
}

inline Json count_mlm_to_json(const CountMlm& mlm, const Vocabulary& vocab, const Json& training) {
  Json j;
  j["format"] = kCountMlmFormat;
  j["version"] = kCheckpointVersion;
  j["vocab_hash"] = hash_hex(vocab.hash());
  j["vocab_size"] = mlm.vocab_size();
  j["params"] = Json{{"smoothing_k", mlm.params().smoothing_k},
                     {"acoustic_weight", mlm.params().acoustic_weight}};
  j["training"] = training;
  std::vector<std::tuple<TokenId, TokenId, TokenId, CountMlm::Count>> rows;
  for (const auto& [key, row] : mlm.pair_counts()) {
    const auto [l, r] = mlm.unpack_pair_key(key);
    for (const auto& [c, n] : row.counts) rows.emplace_back(l, r, c, n);
  }
  std::sort(rows.begin(), rows.end());
  Json counts = Json::array();
  for (const auto& [l, r, c, n] : rows) counts.push_back(Json::array({l, c, r, n}));
  j["counts"] = std::move(counts);
  return j;
}

inline std::pair<CountMlm, Checkpoint> count_mlm_from_json(const Json& j, const Vocabulary& vocab,
                                                           const std::string& path) {
  check_header(j, kCountMlmFormat, path);
  Checkpoint meta;
  meta.vocab_hash = j.at("vocab_hash").get<std::string>();
  check_vocab_hash(meta.vocab_hash, vocab, path);
  meta.training = j.at("training");
  CountMlmParams params;
  params.smoothing_k = j.at("params").at("smoothing_k").get<double>();
  params.acoustic_weight = j.at("params").at("acoustic_weight").get<double>();
  CountMlm mlm(j.at("vocab_size").get<std::size_t>(), params);
  for (const auto& row : j.at("counts")) {
    mlm.add(row.at(0).get<TokenId>(), row.at(1).get<TokenId>(), row.at(2).get<TokenId>(),
            row.at(3).get<CountMlm::Count>());
  }
  mlm.finalize();
  return {std::move(mlm), std::move(meta)};
}

inline void save_count_mlm(const CountMlm& mlm, const Vocabulary& vocab, const Json& training,
                           const std::string& path) {
  write_json_file(count_mlm_to_json(mlm, vocab, training), path);
}

inline std::pair<CountMlm, Checkpoint> load_count_mlm(const std::string& path, const Vocabulary& vocab) {
  return count_mlm_from_json(read_json_file(path), vocab, path);
}

inline Json ngram_lm_to_json(const NgramLm& lm, const Vocabulary& vocab, const Json& training) {
  Json j;
  j["format"] = kNgramLmFormat;
  j["version"] = kCheckpointVersion;
  j["vocab_hash"] = hash_hex(vocab.hash());
  j["vocab_size"] = lm.vocab_size();
  j["params"] = Json{{"order", lm.order()}, {"k", lm.k()}};
  j["training"] = training;
  Json orders = Json::array();
  for (int n = 1; n <= lm.order(); ++n) {
    std::vector<std::pair<std::vector<TokenId>, std::vector<std::pair<TokenId, NgramLm::Count>>>> rows;
    for (const auto& [key, row] : lm.table(n)) {
      rows.emplace_back(NgramLm::unpack(key, static_cast<std::size_t>(n - 1)),
                        std::vector<std::pair<TokenId, NgramLm::Count>>(row.counts.begin(), row.counts.end()));
    }
    std::sort(rows.begin(), rows.end());
    Json table = Json::array();
    for (const auto& [history, counts] : rows) {
      for (const auto& [c, k] : counts) {
        Json entry = Json::array();
        for (TokenId h : history) entry.push_back(h);
        entry.push_back(c);
        entry.push_back(k);
        table.push_back(std::move(entry));
      }
    }
    orders.push_back(std::move(table));
  }
  j["ngrams"] = std::move(orders);
  return j;
}

inline std::pair<NgramLm, Checkpoint> ngram_lm_from_json(const Json& j, const Vocabulary& vocab,
                                                         const std::string& path) {
  check_header(j, kNgramLmFormat, path);
  Checkpoint meta;
  meta.vocab_hash = j.at("vocab_hash").get<std::string>();
  check_vocab_hash(meta.vocab_hash, vocab, path);
  meta.training = j.at("training");
  NgramLm lm(j.at("vocab_size").get<std::size_t>(), j.at("params").at("order").get<int>(),
             j.at("params").at("k").get<double>());
  const auto& orders = j.at("ngrams");
  if (orders.size() != static_cast<std::size_t>(lm.order())) throw Error("'" + path + "': wrong n-gram table count");
  for (std::size_t n = 0; n < orders.size(); ++n) {
    for (const auto& entry : orders[n]) {
      if (entry.size() != n + 2) throw Error("'" + path + "': malformed n-gram entry");
      std::vector<TokenId> history;
      for (std::size_t a = 0; a < n; ++a) history.push_back(entry.at(a).get<TokenId>());
      lm.add_count(history, entry.at(n).get<TokenId>(), entry.at(n + 1).get<NgramLm::Count>());
    }
  }
  return {std::move(lm), std::move(meta)};
}

inline void save_ngram_lm(const NgramLm& lm, const Vocabulary& vocab, const Json& training,
                          const std::string& path) {
  write_json_file(ngram_lm_to_json(lm, vocab, training), path);
}

inline std::pair<NgramLm, Checkpoint> load_ngram_lm(const std::string& path, const Vocabulary& vocab) {
  return ngram_lm_from_json(read_json_file(path), vocab, path);
}

}  // namespace mlmsc
