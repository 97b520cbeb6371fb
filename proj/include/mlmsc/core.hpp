// mlmsc/core.hpp
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
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace mlmsc {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

/// Raised for malformed inputs: bad files, broken invariants, mismatched
/// lengths. The CLI maps it to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Token inventory with dense ids. Ids 0 and 1 are always the mask and
/// delete symbols; regular tokens start at kFirstRegular.
class Vocabulary {
 public:
  static constexpr TokenId kMask = 0;
  static constexpr TokenId kDel = 1;
  static constexpr TokenId kFirstRegular = 2;
  static constexpr std::string_view kDefaultMaskSurface = "<mask>";
  static constexpr std::string_view kDefaultDelSurface = "<del>";
  static constexpr std::string_view kDefaultBoundary = "\xE2\x96\x81";  // U+2581

  Vocabulary() = default;

  /// `entries[0]` and `entries[1]` are taken as the mask and delete surfaces.
  explicit Vocabulary(std::vector<std::string> entries,
                      std::string boundary_marker = std::string(kDefaultBoundary))
      : entries_(std::move(entries)), boundary_(std::move(boundary_marker)) {
    if (entries_.size() < 2) {
      throw Error("vocabulary needs at least the <mask> and <del> entries");
    }
    if (boundary_.empty()) throw Error("empty word-boundary marker");
    index_.reserve(entries_.size());
    word_start_.reserve(entries_.size());
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (entries_[i].empty()) {
        throw Error("empty vocabulary entry at id " + std::to_string(i));
      }
      auto [it, fresh] = index_.emplace(entries_[i], static_cast<TokenId>(i));
      if (!fresh) throw Error("duplicate vocabulary entry '" + entries_[i] + "'");
      word_start_.push_back(std::string_view(entries_[i]).starts_with(boundary_));
    }
  }

  /// Builds a vocabulary from regular surfaces, prepending the default specials.
  static Vocabulary with_specials(const std::vector<std::string>& regular,
                                  std::string boundary_marker = std::string(kDefaultBoundary)) {
    std::vector<std::string> all;
    all.reserve(regular.size() + 2);
    all.emplace_back(kDefaultMaskSurface);
    all.emplace_back(kDefaultDelSurface);
    all.insert(all.end(), regular.begin(), regular.end());
    return Vocabulary(std::move(all), std::move(boundary_marker));
  }

  std::size_t size() const { return entries_.size(); }
  std::size_t num_regular() const { return entries_.size() - 2; }
  const std::string& boundary_marker() const { return boundary_; }
  const std::vector<std::string>& entries() const { return entries_; }

  const std::string& surface(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= entries_.size()) {
      throw Error("token id out of range: " + std::to_string(id));
    }
    return entries_[static_cast<std::size_t>(id)];
  }

  std::optional<TokenId> find(std::string_view surface) const {
    auto it = index_.find(std::string(surface));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  TokenId id(std::string_view surface) const {
    if (auto found = find(surface)) return *found;
    throw Error("unknown token '" + std::string(surface) + "'");
  }

  bool is_regular(TokenId id) const {
    return id >= kFirstRegular && static_cast<std::size_t>(id) < entries_.size();
  }

  bool is_word_start(TokenId id) const {
    return is_regular(id) && word_start_[static_cast<std::size_t>(id)];
  }

  /// FNV-1a over the surfaces and the boundary marker; checkpoints and
  /// corpora are matched on this value.
  std::uint64_t hash() const {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](std::string_view s) {
      for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
      }
      h ^= 0xff;
      h *= 1099511628211ull;
    };
    mix(boundary_);
    for (const auto& e : entries_) mix(e);
    return h;
  }

  bool operator==(const Vocabulary& other) const {
    return entries_ == other.entries_ && boundary_ == other.boundary_;
  }

 private:
  std::vector<std::string> entries_;
  std::string boundary_;
  std::unordered_map<std::string, TokenId> index_;
  std::vector<bool> word_start_;
};

/// Start offsets of the words in `tokens`. A token carrying the boundary
/// marker opens a word; so does the first token of the sequence.
inline std::vector<std::size_t> word_starts(std::span<const TokenId> tokens,
                                            const Vocabulary& vocab) {
  std::vector<std::size_t> starts;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i == 0 || vocab.is_word_start(tokens[i])) starts.push_back(i);
  }
  return starts;
}

/// Splits a token sequence into its words.
inline std::vector<TokenSeq> group_words(std::span<const TokenId> tokens,
                                         const Vocabulary& vocab) {
  std::vector<TokenSeq> words;
  const auto starts = word_starts(tokens, vocab);
  for (std::size_t w = 0; w < starts.size(); ++w) {
    const std::size_t end = w + 1 < starts.size() ? starts[w + 1] : tokens.size();
    words.emplace_back(tokens.begin() + static_cast<std::ptrdiff_t>(starts[w]),
                       tokens.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return words;
}

/// One first-pass hypothesis. `confidences[j]` is the per-token confidence
/// reported by the first pass; `transducer_score` is log-domain.
struct Hypothesis {
  TokenSeq tokens;
  std::vector<double> confidences;
  double transducer_score = 0.0;
  std::string utterance_id;

  std::size_t size() const { return tokens.size(); }

  void validate() const {
    if (confidences.size() != tokens.size()) {
      throw Error("hypothesis '" + utterance_id + "': " + std::to_string(confidences.size()) +
                  " confidences for " + std::to_string(tokens.size()) + " tokens");
    }
    for (double c : confidences) {
      if (!(c >= 0.0 && c <= 1.0)) {
        throw Error("hypothesis '" + utterance_id + "': confidence " + std::to_string(c) +
                    " outside [0,1]");
      }
    }
  }

  bool operator==(const Hypothesis&) const = default;
};

struct NBestList {
  std::string utterance_id;
  double audio_seconds = 0.0;
  std::vector<Hypothesis> hypotheses;
  std::optional<TokenSeq> reference;

  void validate() const {
    if (hypotheses.empty()) throw Error("utterance '" + utterance_id + "' has no hypotheses");
    if (!(audio_seconds >= 0.0)) throw Error("utterance '" + utterance_id + "': negative audio_seconds");
    for (const auto& h : hypotheses) h.validate();
  }

  bool is_sorted() const {
    for (std::size_t i = 1; i < hypotheses.size(); ++i) {
      if (hypotheses[i].transducer_score > hypotheses[i - 1].transducer_score) return false;
    }
    return true;
  }

  bool operator==(const NBestList&) const = default;
};

/// Per-position categorical distributions over the vocabulary that stand in
/// for encoder states when the MLM conditions on acoustics.
struct AcousticEvidence {
  std::vector<std::vector<double>> per_position;

  std::size_t size() const { return per_position.size(); }

  /// Evidence with no information: uniform over every id except <mask>.
  static AcousticEvidence uniform(std::size_t length, std::size_t vocab_size) {
    AcousticEvidence ev;
    std::vector<double> row(vocab_size, 1.0 / static_cast<double>(vocab_size - 1));
    row[Vocabulary::kMask] = 0.0;
    ev.per_position.assign(length, row);
    return ev;
  }

  void validate(std::size_t vocab_size) const {
    for (std::size_t t = 0; t < per_position.size(); ++t) {
      const auto& row = per_position[t];
      if (row.size() != vocab_size) {
        throw Error("acoustic evidence row " + std::to_string(t) + " has size " +
                    std::to_string(row.size()) + ", expected " + std::to_string(vocab_size));
      }
      double sum = 0.0;
      for (double p : row) {
        if (!(p >= 0.0)) throw Error("negative acoustic evidence at position " + std::to_string(t));
        sum += p;
      }
      if (std::abs(sum - 1.0) > 1e-9) {
        throw Error("acoustic evidence at position " + std::to_string(t) + " sums to " +
                    std::to_string(sum));
      }
    }
  }
};

/// Which hypothesis positions are hidden from the MLM. True = masked.
struct MaskSolution {
  std::vector<bool> flags;

  MaskSolution() = default;
  explicit MaskSolution(std::vector<bool> f) : flags(std::move(f)) {}
  explicit MaskSolution(std::size_t n) : flags(n, false) {}

  std::size_t size() const { return flags.size(); }
  bool operator[](std::size_t i) const { return flags[i]; }

  std::size_t count() const {
    std::size_t n = 0;
    for (bool b : flags) n += b ? 1 : 0;
    return n;
  }

  bool operator==(const MaskSolution& o) const { return flags == o.flags; }
  bool operator<(const MaskSolution& o) const { return flags < o.flags; }
};

}  // namespace mlmsc
