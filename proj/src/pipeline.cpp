#include "pivotmt/pipeline.hpp"

#include <algorithm>
#include <deque>

#include "pivotmt/errors.hpp"

namespace pivotmt {

void PipelineConfig::validate() const {
  if (s2p.empty()) throw ConfigError("pipeline needs at least one source-to-pivot model");
  if (!p2t) throw ConfigError("pipeline has no pivot-to-target model");
  for (std::size_t i = 0; i < s2p.size(); ++i)
    if (!s2p[i]) throw ConfigError("source-to-pivot model " + std::to_string(i) + " is missing");
  if (p2t->config().num_encoders != s2p.size()) {
    throw ConfigError("pivot-to-target model has " + std::to_string(p2t->config().num_encoders) +
                      " encoders but the pipeline has " + std::to_string(s2p.size()) + " pivots");
  }
  for (std::size_t i = 0; i < s2p.size(); ++i) {
    if (s2p[i]->config().tgt_vocab != p2t->config().src_vocab) {
      throw ConfigError("pivot " + std::to_string(i) + ": source-to-pivot target vocabulary (" +
                        std::to_string(s2p[i]->config().tgt_vocab) +
                        ") does not match the pivot-to-target source vocabulary (" +
                        std::to_string(p2t->config().src_vocab) + ")");
    }
  }
  if (p2t_source_vocab || !s2p_target_vocabs.empty()) {
    if (!p2t_source_vocab || s2p_target_vocabs.size() != s2p.size()) {
      throw ConfigError("vocabulary chain check needs every stage vocabulary");
    }
    for (std::size_t i = 0; i < s2p.size(); ++i) {
      if (!s2p_target_vocabs[i] || !(*s2p_target_vocabs[i] == *p2t_source_vocab)) {
        throw ConfigError("pivot " + std::to_string(i) + ": vocabulary chain mismatch");
      }
    }
  }
  if (s2p[0]->config().src_vocab == 0) throw ConfigError("empty source vocabulary");
  for (const auto* m : s2p)
    if (m->config().src_vocab != s2p[0]->config().src_vocab) {
      throw ConfigError("source-to-pivot models disagree on the source vocabulary");
    }
}

std::size_t effective_wait_k(const PipelineConfig& config) {
  if (!config.k_s2p || !config.k_p2t) {
    throw ContractError("effective wait-k is undefined when a stage decodes full sentences");
  }
  return *config.k_s2p + *config.k_p2t;
}

PipelineRun full_sentence_pipeline(const PipelineConfig& config, const TokenIds& source) {
  config.validate();
  if (config.k_s2p || config.k_p2t) throw ContractError("full-sentence pipeline with a wait-k stage");
  PipelineRun run;
  run.source = source;
  for (const auto* m : config.s2p) {
    if (source.empty()) {
      run.pivots.emplace_back();
      continue;
    }
    auto enc = encode(*m, source);
    run.pivots.push_back(greedy_decode(*m, std::span<const EncoderStates>(&enc, 1), config.max_steps).tokens);
  }
  const bool any = std::any_of(run.pivots.begin(), run.pivots.end(), [](const TokenIds& p) { return !p.empty(); });
  if (any) {
    std::vector<EncoderStates> enc;
    for (std::size_t i = 0; i < run.pivots.size(); ++i) enc.push_back(encode(*config.p2t, run.pivots[i], i));
    run.target = greedy_decode(*config.p2t, enc, config.max_steps).tokens;
  }
  for (int t : source) run.latency_log.read(0, t);
  for (int t : run.target) run.latency_log.write(t);
  return run;
}

PipelineRun simultaneous_pipeline(const PipelineConfig& config, TokenStream& source) {
  config.validate();
  const std::size_t eff = effective_wait_k(config);
  const std::size_t n = config.s2p.size();

  std::vector<WaitKDecoder> s2p;
  s2p.reserve(n);
  for (const auto* m : config.s2p) s2p.emplace_back(*m, *config.k_s2p, config.max_steps);
  WaitKDecoder p2t(*config.p2t, *config.k_p2t, config.max_steps);
  std::vector<std::deque<std::optional<int>>> queues(n);
  std::vector<bool> forwarded_end(n, false);

  PipelineRun run;
  run.effective_k = eff;
  bool source_ended = false;
  std::size_t tick = 0;

  auto all_s2p_done = [&] {
    return std::all_of(s2p.begin(), s2p.end(), [](const WaitKDecoder& d) { return d.done(); });
  };

  while (!p2t.done() || !all_s2p_done() || !source_ended) {
    ++tick;
    bool progress = false;

    std::optional<int> token;
    bool got_end = false;
    if (!source_ended) {
      token = source.next();
      if (token) {
        run.source.push_back(*token);
        run.latency_log.read(0, *token);
        run.trace.push_back({tick, TraceEvent::Kind::SourceRead, 0, *token});
      } else {
        source_ended = got_end = true;
        run.trace.push_back({tick, TraceEvent::Kind::SourceEnd, 0, 0});
      }
      progress = true;
    }

    // Pivot-to-target stage: only tokens queued in earlier ticks are visible.
    while (!p2t.done()) {
      if (p2t.needs_read()) {
        std::vector<std::size_t> open;
        for (std::size_t s = 0; s < n; ++s)
          if (!p2t.ended(s)) open.push_back(s);
        const bool ready = std::all_of(open.begin(), open.end(), [&](std::size_t s) { return !queues[s].empty(); });
        if (!ready) break;
        for (std::size_t s : open) {
          p2t.deliver(s, queues[s].front());
          queues[s].pop_front();
        }
        progress = true;
      } else {
        const int tok = p2t.write();
        if (tok != kEos) {
          run.latency_log.write(tok);
          run.trace.push_back({tick, TraceEvent::Kind::TargetWrite, 0, tok});
        }
        progress = true;
      }
    }

    // Source-to-pivot stages react to this tick's source event.
    for (std::size_t i = 0; i < n; ++i) {
      auto& dec = s2p[i];
      if (dec.done()) continue;
      if (token) {
        dec.deliver(0, token);
      } else if (got_end) {
        dec.deliver(0, std::nullopt);
      }
      while (dec.can_write()) {
        const int tok = dec.write();
        if (tok == kEos) break;
        queues[i].push_back(tok);
        run.trace.push_back({tick, TraceEvent::Kind::PivotWrite, i, tok});
        progress = true;
      }
      if (dec.done() && !forwarded_end[i]) {
        queues[i].push_back(std::nullopt);
        forwarded_end[i] = true;
        progress = true;
      }
    }
    if (!progress) throw Error("pipeline scheduler made no progress at tick " + std::to_string(tick));
  }

  for (const auto& dec : s2p) {
    run.pivots.push_back(dec.output());
    run.s2p_logs.push_back(dec.log());
  }
  run.target = p2t.output();
  run.p2t_log = p2t.log();
  return run;
}

}  // namespace pivotmt
