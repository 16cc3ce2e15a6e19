#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pivotmt/tokens.hpp"
#include "pivotmt/transformer.hpp"

namespace pivotmt {

// min(k + i - 1, src_len) for the i-th output (1-based). ContractError when
// k < 1, i < 1 or src_len < 0.
std::size_t visible_prefix(std::int64_t k, std::int64_t i, std::int64_t src_len);

enum class Action { Read, Write };

struct ActionEvent {
  Action action;
  std::size_t stream = 0;  // source stream for reads
  int token = 0;
  std::size_t time = 0;  // event index
  bool operator==(const ActionEvent&) const = default;
};

struct ActionLog {
  std::vector<ActionEvent> events;

  void read(std::size_t stream, int token);
  void write(int token);
  std::size_t reads() const;
  std::size_t writes() const;
  // Reads logged before the i-th write (1-based).
  std::size_t reads_before_write(std::size_t i) const;
  // Reads of one stream plus every write.
  ActionLog for_stream(std::size_t stream) const;
  // "R,R,W,R,W"
  std::string str() const;
  bool operator==(const ActionLog&) const = default;
};

// Source of tokens for simultaneous decoding: tokens, then end (nullopt).
class TokenStream {
 public:
  virtual ~TokenStream() = default;
  virtual std::optional<int> next() = 0;
};

class VectorStream : public TokenStream {
 public:
  explicit VectorStream(TokenIds tokens) : tokens_(std::move(tokens)) {}
  std::optional<int> next() override {
    if (pos_ >= tokens_.size()) return std::nullopt;
    return tokens_[pos_++];
  }
  std::size_t consumed() const { return pos_; }

 private:
  TokenIds tokens_;
  std::size_t pos_ = 0;
};

// Wait-k state machine over one or more lockstep source streams. WRITE i is
// allowed once every stream that has not ended has delivered k + i - 1
// tokens; ended streams no longer constrain. Callers deliver tokens (or the
// end marker) while needs_read() is true and call write() while can_write().
class WaitKDecoder {
 public:
  // ConfigError unless every encoder is causal; ContractError if k < 1.
  WaitKDecoder(const Model& model, std::size_t k, std::size_t max_steps);

  std::size_t streams() const { return delivered_.size(); }
  std::size_t delivered(std::size_t stream) const { return delivered_.at(stream); }
  bool ended(std::size_t stream) const { return ended_.at(stream); }

  // Streams that must deliver before the next WRITE.
  std::vector<std::size_t> pending_reads() const;
  bool needs_read() const { return !done_ && !pending_reads().empty(); }
  void deliver(std::size_t stream, std::optional<int> token);

  bool can_write() const { return !done_ && pending_reads().empty(); }
  // Emits one greedy token; EOS or the step limit finishes decoding. Returns
  // the token written (EOS included).
  int write();

  bool done() const { return done_; }
  const TokenIds& output() const { return output_; }
  bool truncated() const { return truncated_; }
  const ActionLog& log() const { return log_; }

 private:
  std::size_t k_;
  std::size_t limit_;
  DecoderSession session_;
  std::vector<std::size_t> delivered_;
  std::vector<bool> ended_;
  TokenIds output_;
  bool done_ = false;
  bool truncated_ = false;
  ActionLog log_;
};

struct SimultaneousResult {
  TokenIds tokens;
  bool truncated = false;
  ActionLog log;
};

// Pulls tokens from the stream as the wait-k schedule requires; after the
// stream ends, writes until EOS or max_steps with no further reads.
SimultaneousResult simultaneous_greedy_decode(const Model& model, TokenStream& source, std::size_t k,
                                              std::size_t max_steps);

// Same-rate lockstep over several streams: a read event takes one token from
// every stream that has not ended. ContractError on a stream-count mismatch.
SimultaneousResult multi_source_simultaneous_decode(const Model& model, std::span<TokenStream* const> sources,
                                                    std::size_t k, std::size_t max_steps);

}  // namespace pivotmt
