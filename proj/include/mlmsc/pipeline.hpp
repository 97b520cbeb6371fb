// mlmsc/pipeline.hpp
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

// Corpus-level driving: utterance-parallel decoding, error-rate
// aggregation, and the run report.

#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <exception>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "mlmsc/align.hpp"
#include "mlmsc/decode.hpp"
#include "mlmsc/io.hpp"

namespace mlmsc {

/// Runs fn(i) for i in [0, n) on `workers` threads. Each index is handled
/// exactly once; results must be written to per-index slots. The first
/// exception thrown by any worker is rethrown.
inline void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  const auto threads = static_cast<std::size_t>(std::max(1, workers));
  if (threads == 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(n);
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < std::min(threads, n); ++t) pool.emplace_back(work);
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

/// Supplies dense acoustic evidence for every hypothesis of utterance i.
using EvidenceProvider = std::function<std::vector<AcousticEvidence>(std::size_t)>;

/// Evidence provider backed by synthesizer truth records, matched by
/// utterance id; utterances without a record get uniform evidence.
inline EvidenceProvider truth_evidence(const std::vector<NBestList>& corpus,
                                       const std::vector<UtteranceTruth>& truth,
                                       std::size_t vocab_size) {
  std::unordered_map<std::string, const UtteranceTruth*> by_id;
  for (const auto& t : truth) by_id[t.id] = &t;
  std::vector<const UtteranceTruth*> aligned(corpus.size(), nullptr);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (auto it = by_id.find(corpus[i].utterance_id); it != by_id.end()) aligned[i] = it->second;
  }
  return [&corpus, aligned = std::move(aligned), vocab_size](std::size_t i) {
    std::vector<AcousticEvidence> out;
    const auto& hyps = corpus[i].hypotheses;
    for (std::size_t h = 0; h < hyps.size(); ++h) {
      const UtteranceTruth* t = aligned[i];
      if (t != nullptr && h < t->evidence.size()) {
        if (t->evidence[h].truth.size() != hyps[h].size()) {
          throw Error("utterance '" + corpus[i].utterance_id + "': truth length does not match hypothesis " +
                      std::to_string(h));
        }
        out.push_back(t->evidence[h].expand(vocab_size));
      } else {
        out.push_back(AcousticEvidence::uniform(hyps[h].size(), vocab_size));
      }
    }
    return out;
  };
}

inline EvidenceProvider uniform_evidence(const std::vector<NBestList>& corpus, std::size_t vocab_size) {
  return [&corpus, vocab_size](std::size_t i) {
    std::vector<AcousticEvidence> out;
    for (const auto& h : corpus[i].hypotheses) out.push_back(AcousticEvidence::uniform(h.size(), vocab_size));
    return out;
  };
}

/// Decodes every utterance. Output order follows the corpus and does not
/// depend on `workers`.
inline std::vector<DecodeRecord> decode_corpus(const std::vector<NBestList>& corpus,
                                               const EvidenceProvider& evidence, const DecodeConfig& cfg,
                                               const Vocabulary& vocab, const MlmScorer& mlm,
                                               const LmScorer& lm, int workers = 1) {
  cfg.validate();
  std::vector<DecodeRecord> out(corpus.size());
  parallel_for(corpus.size(), workers, [&](std::size_t i) {
    const auto acoustics = evidence(i);
    out[i].id = corpus[i].utterance_id;
    out[i].result = correct_nbest(corpus[i], acoustics, cfg, vocab, mlm, lm);
  });
  return out;
}

struct TimedDecode {
  std::vector<DecodeRecord> records;
  double wall_seconds = 0.0;
};

inline TimedDecode timed_decode_corpus(const std::vector<NBestList>& corpus, const EvidenceProvider& evidence,
                                       const DecodeConfig& cfg, const Vocabulary& vocab,
                                       const MlmScorer& mlm, const LmScorer& lm, int workers = 1) {
  const auto start = std::chrono::steady_clock::now();
  TimedDecode t;
  t.records = decode_corpus(corpus, evidence, cfg, vocab, mlm, lm, workers);
  t.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return t;
}

// ---------------------------------------------------------------------------
// Reporting

struct ConditionRow {
  std::string name;
  ErrorCounts counts;
  double error_rate = 0.0;
  std::optional<double> oracle_error_rate;
  double sub_fraction = 0.0;
  double ins_fraction = 0.0;
  double del_fraction = 0.0;
  double wall_seconds = 0.0;
  double total_audio_seconds = 0.0;
  double rtf = 0.0;
};

struct RunReport {
  static constexpr int kSchema = 1;
  std::string corpus_id;
  std::string unit = "word";
  std::vector<ConditionRow> rows;
};

inline double real_time_factor(double wall_seconds, double audio_seconds) {
  if (!(audio_seconds > 0.0)) throw Error("total audio duration must be > 0 to compute RTF");
  return wall_seconds / audio_seconds;
}

/// Corpus-level error counts of `outputs[i]` against `references[i]`.
inline ErrorCounts corpus_error_counts(const std::vector<TokenSeq>& references,
                                       const std::vector<TokenSeq>& outputs, const Vocabulary& vocab,
                                       ErrorUnit unit) {
  if (references.size() != outputs.size()) throw Error("reference and output counts differ");
  ErrorCounts total;
  for (std::size_t i = 0; i < references.size(); ++i) {
    total += unit_error_counts(references[i], outputs[i], vocab, unit);
  }
  return total;
}

inline double corpus_error_rate(const ErrorCounts& c) {
  return c.ref_len == 0 ? 0.0 : static_cast<double>(c.errors()) / static_cast<double>(c.ref_len);
}

inline ConditionRow make_condition_row(std::string name, const std::vector<TokenSeq>& references,
                                       const std::vector<TokenSeq>& outputs, const Vocabulary& vocab,
                                       ErrorUnit unit, double wall_seconds, double audio_seconds,
                                       const std::optional<std::vector<TokenSeq>>& oracle_outputs = std::nullopt) {
  ConditionRow row;
  row.name = std::move(name);
  row.counts = corpus_error_counts(references, outputs, vocab, unit);
  row.error_rate = corpus_error_rate(row.counts);
  const auto b = breakdown_from_totals(row.counts);
  row.sub_fraction = b.sub_fraction;
  row.ins_fraction = b.ins_fraction;
  row.del_fraction = b.del_fraction;
  if (oracle_outputs) {
    row.oracle_error_rate = corpus_error_rate(corpus_error_counts(references, *oracle_outputs, vocab, unit));
  }
  row.wall_seconds = wall_seconds;
  row.total_audio_seconds = audio_seconds;
  row.rtf = real_time_factor(wall_seconds, audio_seconds);
  return row;
}

inline Json report_to_json(const RunReport& r) {
  Json j;
  j["schema"] = RunReport::kSchema;
  j["corpus"] = r.corpus_id;
  j["unit"] = r.unit;
  Json rows = Json::array();
  for (const auto& row : r.rows) {
    Json x;
    x["name"] = row.name;
    x["error_rate"] = row.error_rate;
    x["oracle_error_rate"] = row.oracle_error_rate ? Json(*row.oracle_error_rate) : Json(nullptr);
    x["substitutions"] = row.counts.substitutions;
    x["insertions"] = row.counts.insertions;
    x["deletions"] = row.counts.deletions;
    x["ref_len"] = row.counts.ref_len;
    x["sub_fraction"] = row.sub_fraction;
    x["ins_fraction"] = row.ins_fraction;
    x["del_fraction"] = row.del_fraction;
    x["wall_seconds"] = row.wall_seconds;
    x["total_audio_seconds"] = row.total_audio_seconds;
    x["rtf"] = row.rtf;
    rows.push_back(std::move(x));
  }
  j["conditions"] = std::move(rows);
  return j;
}

inline RunReport report_from_json(const Json& j) {
  if (j.at("schema").get<int>() != RunReport::kSchema) throw Error("unsupported report schema");
  RunReport r;
  r.corpus_id = j.at("corpus").get<std::string>();
  r.unit = j.at("unit").get<std::string>();
  for (const auto& x : j.at("conditions")) {
    ConditionRow row;
    row.name = x.at("name").get<std::string>();
    row.error_rate = x.at("error_rate").get<double>();
    if (!x.at("oracle_error_rate").is_null()) row.oracle_error_rate = x.at("oracle_error_rate").get<double>();
    row.counts.substitutions = x.at("substitutions").get<std::size_t>();
    row.counts.insertions = x.at("insertions").get<std::size_t>();
    row.counts.deletions = x.at("deletions").get<std::size_t>();
    row.counts.ref_len = x.at("ref_len").get<std::size_t>();
    row.sub_fraction = x.at("sub_fraction").get<double>();
    row.ins_fraction = x.at("ins_fraction").get<double>();
    row.del_fraction = x.at("del_fraction").get<double>();
    row.wall_seconds = x.at("wall_seconds").get<double>();
    row.total_audio_seconds = x.at("total_audio_seconds").get<double>();
    row.rtf = x.at("rtf").get<double>();
    r.rows.push_back(std::move(row));
  }
  return r;
}

/// Fixed-width table; every number also appears in report_to_json.
inline std::string format_report(const RunReport& r) {
  std::string out;
  char buf[512];
  std::snprintf(buf, sizeof(buf), "corpus: %s   unit: %s\n", r.corpus_id.c_str(), r.unit.c_str());
  out += buf;
  std::snprintf(buf, sizeof(buf), "%-14s %9s %9s %7s %7s %7s %8s %6s %6s %6s %10s %10s %8s\n", "condition", "err%",
                "oracle%", "S", "I", "D", "ref_len", "S/err", "I/err", "D/err", "wall_s", "audio_s", "rtf");
  out += buf;
  for (const auto& row : r.rows) {
    char oracle[32];
    if (row.oracle_error_rate) {
      std::snprintf(oracle, sizeof(oracle), "%.3f", 100.0 * *row.oracle_error_rate);
    } else {
      std::snprintf(oracle, sizeof(oracle), "-");
    }
    std::snprintf(buf, sizeof(buf), "%-14s %9.3f %9s %7zu %7zu %7zu %8zu %6.3f %6.3f %6.3f %10.4f %10.2f %8.5f\n",
                  row.name.c_str(), 100.0 * row.error_rate, oracle, row.counts.substitutions,
                  row.counts.insertions, row.counts.deletions, row.counts.ref_len, row.sub_fraction,
                  row.ins_fraction, row.del_fraction, row.wall_seconds, row.total_audio_seconds, row.rtf);
    out += buf;
  }
  return out;
}

}  // namespace mlmsc
