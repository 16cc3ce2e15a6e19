#include "pivotmt/waitk.hpp"

#include <algorithm>

#include "pivotmt/errors.hpp"

namespace pivotmt {

std::size_t visible_prefix(std::int64_t k, std::int64_t i, std::int64_t src_len) {
  if (k < 1) throw ContractError("wait-k needs k >= 1, got " + std::to_string(k));
  if (i < 1) throw ContractError("output index is 1-based, got " + std::to_string(i));
  if (src_len < 0) throw ContractError("negative source length");
  return static_cast<std::size_t>(std::min(k + i - 1, src_len));
}

void ActionLog::read(std::size_t stream, int token) {
  events.push_back({Action::Read, stream, token, events.size()});
}

void ActionLog::write(int token) { events.push_back({Action::Write, 0, token, events.size()}); }

std::size_t ActionLog::reads() const {
  return static_cast<std::size_t>(
      std::count_if(events.begin(), events.end(), [](const ActionEvent& e) { return e.action == Action::Read; }));
}

std::size_t ActionLog::writes() const { return events.size() - reads(); }

std::size_t ActionLog::reads_before_write(std::size_t i) const {
  std::size_t reads = 0, writes = 0;
  for (const auto& e : events) {
    if (e.action == Action::Read) {
      ++reads;
    } else if (++writes == i) {
      return reads;
    }
  }
  throw ContractError("log has only " + std::to_string(writes) + " writes, asked for write " + std::to_string(i));
}

ActionLog ActionLog::for_stream(std::size_t stream) const {
  ActionLog out;
  for (const auto& e : events)
    if (e.action == Action::Write || e.stream == stream) out.events.push_back(e);
  return out;
}

std::string ActionLog::str() const {
  std::string s;
  for (const auto& e : events) {
    if (!s.empty()) s += ',';
    s += e.action == Action::Read ? 'R' : 'W';
  }
  return s;
}

// ---------------------------------------------------------------------------

WaitKDecoder::WaitKDecoder(const Model& model, std::size_t k, std::size_t max_steps)
    : k_(k), session_(model) {
  if (!model.config().causal_encoder) {
    throw ConfigError("simultaneous decoding needs a causal (unidirectional) encoder");
  }
  if (k < 1) throw ContractError("wait-k needs k >= 1");
  limit_ = std::min(max_steps, model.config().max_len - 1);
  delivered_.assign(model.config().num_encoders, 0);
  ended_.assign(model.config().num_encoders, false);
  if (limit_ == 0) done_ = truncated_ = true;
}

std::vector<std::size_t> WaitKDecoder::pending_reads() const {
  std::vector<std::size_t> out;
  const std::size_t need = k_ + output_.size();
  for (std::size_t s = 0; s < delivered_.size(); ++s)
    if (!ended_[s] && delivered_[s] < need) out.push_back(s);
  return out;
}

void WaitKDecoder::deliver(std::size_t stream, std::optional<int> token) {
  if (ended_.at(stream)) throw ContractError("stream " + std::to_string(stream) + " already ended");
  if (token) {
    session_.append_source(stream, *token);
    ++delivered_[stream];
    log_.read(stream, *token);
    return;
  }
  ended_[stream] = true;
  const bool all_ended = std::all_of(ended_.begin(), ended_.end(), [](bool b) { return b; });
  const bool no_rows = std::all_of(delivered_.begin(), delivered_.end(), [](std::size_t d) { return d == 0; });
  if (all_ended && no_rows) done_ = true;
}

int WaitKDecoder::write() {
  if (!can_write()) throw ContractError("write before the wait-k schedule allows it");
  const int tok = argmax_token(session_.next_logits());
  log_.write(tok);
  if (tok == kEos) {
    done_ = true;
    return tok;
  }
  output_.push_back(tok);
  session_.advance(tok);
  if (output_.size() >= limit_) done_ = truncated_ = true;
  return tok;
}

SimultaneousResult simultaneous_greedy_decode(const Model& model, TokenStream& source, std::size_t k,
                                              std::size_t max_steps) {
  TokenStream* streams[] = {&source};
  return multi_source_simultaneous_decode(model, streams, k, max_steps);
}

SimultaneousResult multi_source_simultaneous_decode(const Model& model, std::span<TokenStream* const> sources,
                                                    std::size_t k, std::size_t max_steps) {
  if (sources.size() != model.config().num_encoders) {
    throw ContractError("model has " + std::to_string(model.config().num_encoders) + " encoders but " +
                        std::to_string(sources.size()) + " streams were given");
  }
  WaitKDecoder dec(model, k, max_steps);
  while (!dec.done()) {
    if (dec.needs_read()) {
      for (std::size_t s = 0; s < sources.size(); ++s)
        if (!dec.ended(s)) dec.deliver(s, sources[s]->next());
    } else {
      dec.write();
    }
  }
  return {dec.output(), dec.truncated(), dec.log()};
}

}  // namespace pivotmt
