#include "rnc/bleu.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "rnc/errors.hpp"

namespace rnc {

namespace {

std::map<Tokens, std::size_t> ngrams(const Tokens& t, int n) {
  std::map<Tokens, std::size_t> out;
  const auto un = static_cast<std::size_t>(n);
  for (std::size_t i = 0; i + un <= t.size(); ++i) {
    ++out[Tokens(t.begin() + static_cast<std::ptrdiff_t>(i), t.begin() + static_cast<std::ptrdiff_t>(i + un))];
  }
  return out;
}

}  // namespace

NgramCount clipped_ngrams(const Tokens& candidate, const Tokens& reference, int n) {
  if (n < 1) throw UsageError("n-gram order must be at least 1");
  NgramCount c;
  const auto ref = ngrams(reference, n);
  for (const auto& [gram, count] : ngrams(candidate, n)) {
    c.total += count;
    auto it = ref.find(gram);
    if (it != ref.end()) c.matched += std::min(count, it->second);
  }
  return c;
}

double modified_precision(const Tokens& candidate, const Tokens& reference, int n) {
  auto c = clipped_ngrams(candidate, reference, n);
  return c.total == 0 ? 0.0 : static_cast<double>(c.matched) / static_cast<double>(c.total);
}

double bleu_n(const Tokens& candidate, const Tokens& reference, int n) {
  if (n < 1) throw UsageError("BLEU order must be at least 1");
  if (candidate.size() < static_cast<std::size_t>(n) || reference.empty()) return 0.0;
  double product = 1.0;
  for (int k = 1; k <= n; ++k) {
    const double p = modified_precision(candidate, reference, k);
    if (p == 0.0) return 0.0;
    product *= p;
  }
  const double geo = n == 1 ? product : std::pow(product, 1.0 / n);
  const double c = static_cast<double>(candidate.size()), r = static_cast<double>(reference.size());
  const double bp = c < r ? std::exp(1.0 - r / c) : 1.0;
  return geo * bp;
}

nlohmann::json BleuReport::to_json() const {
  nlohmann::json j{{"split", to_string(split)}};
  for (int k = 0; k < kMaxOrder; ++k) {
    j["bleu" + std::to_string(k + 1)] = score[static_cast<std::size_t>(k)];
    j["count" + std::to_string(k + 1)] = count[static_cast<std::size_t>(k)];
  }
  return j;
}

BleuReport bleu_corpus(const std::vector<Prediction>& predictions, Split split, const BleuOptions& options) {
  BleuReport r;
  r.split = split;
  std::array<double, kMaxOrder> sums{};
  bool any = false;
  for (const auto& p : predictions) {
    if (p.split != split) continue;
    any = true;
    Tokens cand = p.tokens;
    if (!options.include_seed && !cand.empty()) cand.erase(cand.begin());
    for (int k = 1; k <= kMaxOrder; ++k) {
      if (p.reference.size() < static_cast<std::size_t>(k)) continue;
      const auto i = static_cast<std::size_t>(k - 1);
      ++r.count[i];
      sums[i] += bleu_n(cand, p.reference, k);
    }
  }
  if (!any) throw DataError("no predictions for split '" + to_string(split) + "'");
  for (std::size_t i = 0; i < sums.size(); ++i) {
    r.score[i] = r.count[i] ? 100.0 * sums[i] / static_cast<double>(r.count[i]) : 0.0;
  }
  return r;
}

std::string bleu_table(const std::vector<BleuReport>& reports) {
  std::ostringstream os;
  char buf[64];
  os << "split  BLEU-1 BLEU-2 BLEU-3 BLEU-4\n";
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof buf, "%-6s", to_string(r.split).c_str());
    os << buf;
    for (double s : r.score) {
      std::snprintf(buf, sizeof buf, " %6.1f", s);
      os << buf;
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace rnc
