#include "pivotmt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "pivotmt/errors.hpp"

namespace pivotmt {

namespace {

using NGram = std::vector<int>;

std::map<NGram, std::size_t> count_ngrams(const TokenIds& s, std::size_t n) {
  std::map<NGram, std::size_t> out;
  if (s.size() < n) return out;
  for (std::size_t i = 0; i + n <= s.size(); ++i) ++out[NGram(s.begin() + static_cast<std::ptrdiff_t>(i),
                                                             s.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return out;
}

}  // namespace

BleuReport bleu(const std::vector<TokenIds>& hypotheses, const std::vector<TokenIds>& references, bool smoothing) {
  if (hypotheses.size() != references.size()) {
    throw ContractError("bleu: " + std::to_string(hypotheses.size()) + " hypotheses but " +
                        std::to_string(references.size()) + " references");
  }
  BleuReport r;
  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    const auto& hyp = hypotheses[s];
    const auto& ref = references[s];
    r.hyp_tokens += hyp.size();
    r.ref_tokens += ref.size();
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto h = count_ngrams(hyp, n);
      const auto g = count_ngrams(ref, n);
      for (const auto& [gram, c] : h) {
        r.totals[n - 1] += c;
        auto it = g.find(gram);
        if (it != g.end()) r.matches[n - 1] += std::min(c, it->second);
      }
    }
  }
  if (r.hyp_tokens == 0) return r;

  double log_sum = 0.0;
  bool zero = false;
  for (std::size_t n = 0; n < 4; ++n) {
    double p;
    if (r.matches[n] == 0 && smoothing && n >= 1) {
      p = 1.0 / static_cast<double>(r.totals[n] + 1);
    } else if (r.totals[n] == 0) {
      p = 0.0;
    } else {
      p = static_cast<double>(r.matches[n]) / static_cast<double>(r.totals[n]);
    }
    r.precisions[n] = p;
    if (p == 0.0) zero = true;
    else log_sum += std::log(p);
  }
  const double c = static_cast<double>(r.hyp_tokens);
  const double ref_len = static_cast<double>(r.ref_tokens);
  r.brevity_penalty = c > ref_len ? 1.0 : std::exp(1.0 - ref_len / c);
  r.bleu = zero ? 0.0 : 100.0 * r.brevity_penalty * std::exp(log_sum / 4.0);
  return r;
}

double average_lagging(const ActionLog& log, std::size_t src_len, std::size_t tgt_len) {
  if (log.writes() == 0) throw ContractError("average lagging of a log without writes");
  if (src_len == 0 || tgt_len == 0) throw ContractError("average lagging needs nonempty source and target");
  const std::size_t writes = std::min(log.writes(), tgt_len);
  const double rate = static_cast<double>(src_len) / static_cast<double>(tgt_len);
  double sum = 0.0;
  std::size_t tau = 0;
  for (std::size_t i = 1; i <= writes; ++i) {
    const std::size_t g = log.reads_before_write(i);
    sum += static_cast<double>(g) - static_cast<double>(i - 1) * rate;
    tau = i;
    if (g >= src_len) break;
  }
  return sum / static_cast<double>(tau);
}

}  // namespace pivotmt
