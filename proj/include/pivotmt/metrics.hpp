#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "pivotmt/tokens.hpp"
#include "pivotmt/waitk.hpp"

namespace pivotmt {

struct BleuReport {
  double bleu = 0.0;  // 0..100
  std::array<double, 4> precisions{};
  std::array<std::size_t, 4> matches{};
  std::array<std::size_t, 4> totals{};
  double brevity_penalty = 0.0;  // 0 only when every hypothesis is empty
  std::size_t hyp_tokens = 0;
  std::size_t ref_tokens = 0;
};

// Corpus-level BLEU-4 over token ids. With smoothing, an order n >= 2 with
// zero matches uses (0 + 1) / (total + 1). ContractError on a count mismatch.
BleuReport bleu(const std::vector<TokenIds>& hypotheses, const std::vector<TokenIds>& references,
                bool smoothing = true);

// Average lagging of one decode:
//   AL = (1/tau) * sum_{i=1..tau} g(i) - (i-1) * src_len / tgt_len
// where g(i) is the number of reads before write i and tau is the first write
// issued after the whole source was read. Writes beyond tgt_len (a trailing
// EOS) are ignored. ContractError on a log without writes or zero lengths.
double average_lagging(const ActionLog& log, std::size_t src_len, std::size_t tgt_len);

}  // namespace pivotmt
