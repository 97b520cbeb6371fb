// mlmsc/lm.hpp
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

#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <unordered_map>
#include <vector>

#include "mlmsc/core.hpp"

namespace mlmsc {

/// External language model used to rank corrected candidates.
class LmScorer {
 public:
  virtual ~LmScorer() = default;
  /// log P(token | history); `history` holds the preceding tokens, oldest
  /// first, and may be shorter than the model order.
  virtual double log_prob(std::span<const TokenId> history, TokenId token) const = 0;
  virtual int order() const = 0;
};

/// Sum of conditional log probabilities, left-padded with sentence start.
/// The empty sequence scores 0.
inline double lm_score(std::span<const TokenId> tokens, const LmScorer& lm) {
  double total = 0.0;
  const auto ctx = static_cast<std::size_t>(lm.order() - 1);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::size_t from = i >= ctx ? i - ctx : 0;
    total += lm.log_prob(tokens.subspan(from, i - from), tokens[i]);
  }
  return total;
}

/// Add-k n-gram model over the regular tokens. Each order is smoothed
/// toward the next lower one:
///   P(c | h) = (n(h, c) + k |V| P(c | h')) / (n(h) + k |V|),
/// bottoming out at the add-k unigram (n(c) + k) / (N + k |V|).
/// Histories shorter than the order are padded with a start symbol.
class NgramLm final : public LmScorer {
 public:
  using Count = std::uint64_t;
  static constexpr int kMaxOrder = 4;

  struct Row {
    std::map<TokenId, Count> counts;
    Count total = 0;
  };

  NgramLm() = default;
  NgramLm(std::size_t vocab_size, int order, double k)
      : vocab_size_(vocab_size), order_(order), k_(k), tables_(static_cast<std::size_t>(order)) {
    if (vocab_size < 3) throw Error("n-gram LM needs at least one regular token");
    if (order < 1 || order > kMaxOrder) throw Error("n-gram order must lie in [1, 4]");
    if (!(k > 0.0)) throw Error("add-k constant must be > 0");
    if (vocab_size + 1 >= (std::size_t{1} << kIdBits)) throw Error("vocabulary too large for n-gram keys");
  }

  int order() const override { return order_; }
  double k() const { return k_; }
  std::size_t vocab_size() const { return vocab_size_; }
  std::size_t num_regular() const { return vocab_size_ - 2; }
  TokenId bos() const { return static_cast<TokenId>(vocab_size_); }

  void add_sentence(std::span<const TokenId> tokens) {
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      check_regular(tokens[i]);
      for (int o = 1; o <= order_; ++o) {
        auto& row = tables_[static_cast<std::size_t>(o - 1)][history_key(tokens, i, o - 1)];
        row.counts[tokens[i]] += 1;
        row.total += 1;
      }
    }
  }

  double prob(std::span<const TokenId> history, TokenId token) const {
    check_regular(token);
    const double strength = k_ * static_cast<double>(num_regular());
    // Unigram, then successively longer histories.
    double p = (count(0, 0, token) + k_) / (total(0, 0) + strength);
    for (int o = 2; o <= order_; ++o) {
      const std::uint64_t key = padded_key(history, o - 1);
      p = (count(o - 1, key, token) + strength * p) / (total(o - 1, key) + strength);
    }
    return p;
  }

  double log_prob(std::span<const TokenId> history, TokenId token) const override {
    return std::log(prob(history, token));
  }

  /// Table for n-grams of length `n` (1-based), keyed by packed history.
  const std::unordered_map<std::uint64_t, Row>& table(int n) const {
    return tables_.at(static_cast<std::size_t>(n - 1));
  }

  /// Adds `n` observations of `token` after the exact `history` (length
  /// order-1 at most, start symbols allowed). Used when restoring counts.
  void add_count(std::span<const TokenId> history, TokenId token, Count n) {
    check_regular(token);
    if (history.size() >= static_cast<std::size_t>(order_)) throw Error("n-gram history too long");
    for (TokenId h : history) {
      if (h != bos()) check_regular(h);
    }
    auto& row = tables_[history.size()][pack(history)];
    row.counts[token] += n;
    row.total += n;
  }

  /// Unpacks a history key of length `len`.
  static std::vector<TokenId> unpack(std::uint64_t key, std::size_t len) {
    std::vector<TokenId> ids(len);
    for (std::size_t a = len; a-- > 0;) {
      ids[a] = static_cast<TokenId>((key & ((std::uint64_t{1} << kIdBits) - 1)) - 1);
      key >>= kIdBits;
    }
    return ids;
  }

  /// Packs up to order-1 history ids, most recent in the low bits.
  static std::uint64_t pack(std::span<const TokenId> ids) {
    std::uint64_t key = 0;
    for (TokenId id : ids) key = (key << kIdBits) | (static_cast<std::uint64_t>(id) + 1);
    return key;
  }

 private:
  static constexpr int kIdBits = 20;

  void check_regular(TokenId t) const {
    if (t < Vocabulary::kFirstRegular || static_cast<std::size_t>(t) >= vocab_size_) {
      throw Error("n-gram LM cannot score token id " + std::to_string(t));
    }
  }

  // History of length `len` ending just before position i, start-padded.
  std::uint64_t history_key(std::span<const TokenId> tokens, std::size_t i, int len) const {
    TokenId buf[kMaxOrder];
    for (int a = 0; a < len; ++a) {
      const auto back = static_cast<std::ptrdiff_t>(len - a);
      const auto idx = static_cast<std::ptrdiff_t>(i) - back;
      buf[a] = idx >= 0 ? tokens[static_cast<std::size_t>(idx)] : bos();
    }
    return pack(std::span<const TokenId>(buf, static_cast<std::size_t>(len)));
  }

  std::uint64_t padded_key(std::span<const TokenId> history, int len) const {
    TokenId buf[kMaxOrder];
    const auto h = static_cast<std::ptrdiff_t>(history.size());
    for (int a = 0; a < len; ++a) {
      const auto idx = h - static_cast<std::ptrdiff_t>(len - a);
      buf[a] = idx >= 0 ? history[static_cast<std::size_t>(idx)] : bos();
    }
    return pack(std::span<const TokenId>(buf, static_cast<std::size_t>(len)));
  }

  double count(int table, std::uint64_t key, TokenId token) const {
    const auto& t = tables_[static_cast<std::size_t>(table)];
    auto it = t.find(key);
    if (it == t.end()) return 0.0;
    auto c = it->second.counts.find(token);
    return c == it->second.counts.end() ? 0.0 : static_cast<double>(c->second);
  }

  double total(int table, std::uint64_t key) const {
    const auto& t = tables_[static_cast<std::size_t>(table)];
    auto it = t.find(key);
    return it == t.end() ? 0.0 : static_cast<double>(it->second.total);
  }

  std::size_t vocab_size_ = 0;
  int order_ = 3;
  double k_ = 0.01;
  std::vector<std::unordered_map<std::uint64_t, Row>> tables_;
};

inline NgramLm train_ngram_lm(const std::vector<TokenSeq>& references, const Vocabulary& vocab,
                              int order = 3, double k = 0.01) {
  if (references.empty()) throw Error("cannot train an n-gram LM on an empty corpus");
  NgramLm lm(vocab.size(), order, k);
  for (const auto& ref : references) lm.add_sentence(ref);
  return lm;
}

}  // namespace mlmsc
