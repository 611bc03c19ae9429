#pragma once

#include <array>
#include <string>
#include <vector>

#include "json.hpp"
#include "rnc/decoder.hpp"

namespace rnc {

using Tokens = std::vector<std::string>;

/// Clipped n-gram matches and candidate n-gram total of order n.
struct NgramCount {
  std::size_t matched = 0;
  std::size_t total = 0;
};
NgramCount clipped_ngrams(const Tokens& candidate, const Tokens& reference, int n);
double modified_precision(const Tokens& candidate, const Tokens& reference, int n);

/// Single-reference BLEU-N: geometric mean of the modified precisions of
/// orders 1..N times the brevity penalty exp(1 - r/c) when c < r. No
/// smoothing: 0 when the candidate is shorter than N or any order has no match.
double bleu_n(const Tokens& candidate, const Tokens& reference, int n);

inline constexpr int kMaxOrder = 4;

struct BleuReport {
  Split split = Split::none;
  /// Per-order averages, scaled to [0, 100].
  std::array<double, kMaxOrder> score{};
  /// Examples whose reference has at least N words.
  std::array<std::size_t, kMaxOrder> count{};

  nlohmann::json to_json() const;
};

struct BleuOptions {
  /// Keep the seed word (the first generated token) in the candidate.
  bool include_seed = true;
};

/// Per-sentence BLEU averaged over the predictions of `split`; order N only
/// uses references with at least N words. Throws DataError on an empty split.
BleuReport bleu_corpus(const std::vector<Prediction>& predictions, Split split, const BleuOptions& options = {});

/// Rows train/val/test, columns BLEU-1..4.
std::string bleu_table(const std::vector<BleuReport>& reports);

}  // namespace rnc
