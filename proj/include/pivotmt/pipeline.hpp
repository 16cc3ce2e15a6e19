#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "pivotmt/corpus.hpp"
#include "pivotmt/transformer.hpp"
#include "pivotmt/waitk.hpp"

namespace pivotmt {

// Per-stage policy: a wait-k value, or nullopt for full-sentence decoding.
using StageK = std::optional<std::size_t>;

struct PipelineConfig {
  std::vector<const Model*> s2p;  // one per pivot
  const Model* p2t = nullptr;     // num_encoders == s2p.size()
  StageK k_s2p;
  StageK k_p2t;
  std::size_t max_steps = 256;  // per stage, further clamped by max_len

  // Optional vocabulary chain check: s2p_target_vocabs[i] must equal
  // p2t_source_vocab.
  std::vector<const Vocab*> s2p_target_vocabs;
  const Vocab* p2t_source_vocab = nullptr;

  // ConfigError on a broken chain.
  void validate() const;
};

struct TraceEvent {
  enum class Kind { SourceRead, SourceEnd, PivotWrite, TargetWrite };
  std::size_t tick = 0;
  Kind kind = Kind::SourceRead;
  std::size_t stream = 0;  // pivot index for PivotWrite
  int token = 0;
  bool operator==(const TraceEvent&) const = default;
};

struct PipelineRun {
  TokenIds source;
  std::vector<TokenIds> pivots;
  TokenIds target;
  std::vector<ActionLog> s2p_logs;
  ActionLog p2t_log;
  // Source reads and target writes in tick order; the latency view.
  ActionLog latency_log;
  std::vector<TraceEvent> trace;
  std::optional<std::size_t> effective_k;
  bool operator==(const PipelineRun&) const = default;
};

// k_s2p + k_p2t; ContractError if either stage is full-sentence.
std::size_t effective_wait_k(const PipelineConfig& config);

// Every s2p model greedy-decodes the whole source, then the p2t model
// greedy-decodes from all pivots.
PipelineRun full_sentence_pipeline(const PipelineConfig& config, const TokenIds& source);

// Lockstep scheduler. Each tick reads one source token; the p2t stage first
// consumes pivot tokens queued in earlier ticks (one per pivot per read
// event) and writes what its schedule allows, then every s2p stage receives
// the new source token and queues the pivot tokens it writes. Pivot EOS is
// forwarded as an end marker. Ticks continue after the source ends until
// every stage is done.
PipelineRun simultaneous_pipeline(const PipelineConfig& config, TokenStream& source);

}  // namespace pivotmt
