// tests/support.hpp
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

// Helpers shared by the unit and acceptance suites. Oracles here are
// written independently of the library code they check.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mlmsc/core.hpp"
#include "mlmsc/random.hpp"

namespace mlmsc::testing {

// Plain recursive edit distance, no memo. Only for short inputs.
template <typename T>
std::size_t brute_distance(const std::vector<T>& a, std::size_t i, const std::vector<T>& b, std::size_t j) {
  if (i == a.size()) return b.size() - j;
  if (j == b.size()) return a.size() - i;
  const std::size_t sub = brute_distance(a, i + 1, b, j + 1) + (a[i] == b[j] ? 0 : 1);
  const std::size_t del = brute_distance(a, i + 1, b, j) + 1;
  const std::size_t ins = brute_distance(a, i, b, j + 1) + 1;
  return std::min({sub, del, ins});
}

template <typename T>
std::size_t brute_distance(const std::vector<T>& a, const std::vector<T>& b) {
  return brute_distance(a, 0, b, 0);
}

// Same recursion with a memo table, fast enough for exhaustive sweeps.
template <typename T>
std::size_t memo_distance(const std::vector<T>& a, const std::vector<T>& b) {
  std::vector<std::size_t> memo((a.size() + 1) * (b.size() + 1), SIZE_MAX);
  auto go = [&](auto&& self, std::size_t i, std::size_t j) -> std::size_t {
    if (i == a.size()) return b.size() - j;
    if (j == b.size()) return a.size() - i;
    auto& slot = memo[i * (b.size() + 1) + j];
    if (slot != SIZE_MAX) return slot;
    slot = std::min({self(self, i + 1, j + 1) + (a[i] == b[j] ? 0 : 1), self(self, i + 1, j) + 1,
                     self(self, i, j + 1) + 1});
    return slot;
  };
  return go(go, 0, 0);
}

// Every sequence over {0..alphabet-1} with length <= max_len.
inline std::vector<std::vector<int>> all_sequences(int alphabet, std::size_t max_len) {
  std::vector<std::vector<int>> out{{}};
  std::vector<std::vector<int>> frontier{{}};
  for (std::size_t len = 1; len <= max_len; ++len) {
    std::vector<std::vector<int>> next;
    for (const auto& s : frontier) {
      for (int c = 0; c < alphabet; ++c) {
        auto t = s;
        t.push_back(c);
        next.push_back(t);
      }
    }
    out.insert(out.end(), next.begin(), next.end());
    frontier = std::move(next);
  }
  return out;
}

// Small vocabulary: words "▁a" "▁b" ... and continuations "x" "y" "z".
inline Vocabulary toy_vocab() {
  const std::string m(Vocabulary::kDefaultBoundary);
  return Vocabulary::with_specials({m + "a", m + "b", m + "c", m + "d", "x", "y", "z"});
}

inline TokenSeq ids(const Vocabulary& v, std::initializer_list<const char*> surfaces) {
  TokenSeq out;
  const std::string m(Vocabulary::kDefaultBoundary);
  for (const char* s : surfaces) {
    std::string str(s);
    if (!str.empty() && str[0] == '_') str = m + str.substr(1);
    out.push_back(v.id(str));
  }
  return out;
}

inline TokenId random_regular(const Vocabulary& v, Rng& rng) {
  return static_cast<TokenId>(Vocabulary::kFirstRegular + static_cast<TokenId>(rng.below(v.num_regular())));
}

inline TokenSeq random_tokens(const Vocabulary& v, Rng& rng, std::size_t min_len, std::size_t max_len) {
  const auto n = static_cast<std::size_t>(rng.between(static_cast<std::int64_t>(min_len),
                                                      static_cast<std::int64_t>(max_len)));
  TokenSeq out(n);
  for (auto& t : out) t = random_regular(v, rng);
  return out;
}

inline Hypothesis random_hypothesis(const Vocabulary& v, Rng& rng, std::size_t min_len, std::size_t max_len) {
  Hypothesis h;
  h.tokens = random_tokens(v, rng, min_len, max_len);
  for (std::size_t i = 0; i < h.tokens.size(); ++i) h.confidences.push_back(rng.uniform());
  h.utterance_id = "r";
  return h;
}

// Evidence rows: random positive vectors with <mask> at zero.
inline AcousticEvidence random_evidence(std::size_t len, std::size_t vocab_size, Rng& rng) {
  AcousticEvidence ev;
  for (std::size_t t = 0; t < len; ++t) {
    std::vector<double> row(vocab_size);
    double z = 0.0;
    for (std::size_t c = 1; c < vocab_size; ++c) {
      row[c] = 0.05 + rng.uniform();
      z += row[c];
    }
    for (auto& p : row) p /= z;
    ev.per_position.push_back(std::move(row));
  }
  return ev;
}

inline AcousticEvidence one_hot_evidence(std::span<const TokenId> truth, std::size_t vocab_size) {
  AcousticEvidence ev;
  for (TokenId t : truth) {
    std::vector<double> row(vocab_size, 0.0);
    row[static_cast<std::size_t>(t)] = 1.0;
    ev.per_position.push_back(std::move(row));
  }
  return ev;
}

// Two-sample Kolmogorov-Smirnov statistic.
inline double ks_statistic(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0;
  std::size_t j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    const double fa = static_cast<double>(i) / static_cast<double>(a.size());
    const double fb = static_cast<double>(j) / static_cast<double>(b.size());
    d = std::max(d, std::abs(fa - fb));
  }
  return d;
}

}  // namespace mlmsc::testing
