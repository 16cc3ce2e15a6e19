#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pivotmt/rng.hpp"
#include "pivotmt/tensor.hpp"
#include "pivotmt/tokens.hpp"

namespace pivotmt {

struct ModelConfig {
  std::size_t num_encoders = 1;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t hidden = 64;
  std::size_t ff = 256;
  std::size_t src_vocab = 0;
  std::size_t tgt_vocab = 0;
  double dropout = 0.1;
  std::size_t max_len = 64;
  bool causal_encoder = true;
  // One encoder (embeddings included) serves every source slot.
  bool share_encoder = true;
  std::uint64_t seed = 1;

  // Throws ConfigError on inconsistent settings.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// Gate projection of the multi-source fusion: weight [2h x h], bias [h].
struct GateParams {
  Tensor weight;
  Tensor bias;
};

// Encoder output for one source: rows [l x h], one per consumed token.
struct EncoderStates {
  Tensor states;
  std::size_t rows() const { return states.defined() ? states.dim(0) : 0; }
};

// Number of encoder rows each decoder position may attend to, per source
// stream: visibility[s][t] for prefix position t.
using Visibility = std::vector<std::vector<std::size_t>>;

struct NamedParam {
  std::string name;
  Tensor tensor;
};

class Model {
 public:
  explicit Model(ModelConfig config);

  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  // Deep copy with independent parameter storage.
  Model clone() const;

  const ModelConfig& config() const { return config_; }
  const std::vector<NamedParam>& parameters() const { return params_; }
  std::size_t parameter_count() const;
  void zero_grad();

  // Flat copies of every parameter array, in parameters() order.
  std::vector<std::vector<double>> snapshot() const;
  void load_snapshot(const std::vector<std::vector<double>>& values);

  // Gate parameters of decoder layer l (empty when num_encoders == 1).
  const std::vector<GateParams>& gates(std::size_t layer) const { return decoder_.layers.at(layer).gates; }

  struct Linear {
    Tensor w, b;
  };
  struct Norm {
    Tensor g, b;
  };
  struct Attention {
    Linear q, k, v, o;
  };
  struct FeedForward {
    Linear in, out;
  };
  struct EncoderLayer {
    Norm ln_self;
    Attention self;
    Norm ln_ff;
    FeedForward ff;
  };
  struct Encoder {
    Tensor embed;
    std::vector<EncoderLayer> layers;
    Norm ln_out;
  };
  struct DecoderLayer {
    Norm ln_self;
    Attention self;
    Norm ln_cross;
    Attention cross;
    std::vector<GateParams> gates;
    Norm ln_ff;
    FeedForward ff;
  };
  struct Decoder {
    Tensor embed;
    std::vector<DecoderLayer> layers;
    Norm ln_out;
    Linear out;
  };

  const Encoder& encoder_for(std::size_t source_index) const;
  const Decoder& decoder() const { return decoder_; }
  // Sinusoidal position table [max_len x h].
  const std::vector<double>& positions() const { return positions_; }

 private:
  void build(Rng& rng);
  Tensor add_param(const std::string& name, Shape shape, Rng* xavier);

  ModelConfig config_;
  std::vector<NamedParam> params_;
  std::vector<Encoder> encoders_;
  Decoder decoder_;
  std::vector<double> positions_;
};

// Combines per-source attention readouts [rows x h] into one [rows x h].
// One source: identity. Two: w = sigmoid([A1 : A2] W + b), A = w*A1 + (1-w)*A2.
// More: per-source logits [A_i : mean of others] W_i + b_i, softmax across
// sources per dimension.
Tensor fuse_attention(std::span<const Tensor> contexts, std::span<const GateParams> gates);

// Encodes one source sequence (no BOS/EOS added).
EncoderStates encode(const Model& model, std::span<const int> tokens, std::size_t source_index = 0);

// Next-token logits after `prefix` (which starts with BOS). With visibility,
// decoder position t of stream s attends only to its first visibility[s][t]
// encoder rows; without it every row is visible.
std::vector<double> decode_step(const Model& model, std::span<const EncoderStates> enc,
                                std::span<const int> prefix, const Visibility* visibility = nullptr);

struct LossOptions {
  double label_smoothing = 0.0;
  // Cross-attention limited to min(k + t, len) rows at target position t.
  std::optional<std::size_t> wait_k;
  // Dropout is active only when rng is set.
  Rng* dropout_rng = nullptr;
};

// Teacher-forced loss: mean over examples of each example's mean token NLL
// (targets followed by EOS). sources[s][b] is example b's sequence in slot s.
Tensor forward_loss(const Model& model, const std::vector<std::vector<TokenIds>>& sources,
                    const std::vector<TokenIds>& targets, const LossOptions& options = {});

struct DecodeResult {
  TokenIds tokens;  // without BOS/EOS
  bool truncated = false;
};

// Index of the largest logit, lowest id on ties.
int argmax_token(std::span<const double> logits);

DecodeResult greedy_decode(const Model& model, std::span<const EncoderStates> enc, std::size_t max_steps);

// Incremental inference state. Source rows can be appended one token at a
// time (causal encoders only) and the decoder caches its own keys/values, so
// each step only processes the newest position. Results are bit-identical to
// decode_step with the matching visibility.
class DecoderSession {
 public:
  explicit DecoderSession(const Model& model);

  // Appends one source token to stream s and encodes its row.
  void append_source(std::size_t stream, int token);
  // Replaces stream s with precomputed states (full-sentence use).
  void set_source(std::size_t stream, const EncoderStates& states);
  std::size_t source_rows(std::size_t stream) const;
  EncoderStates source_states(std::size_t stream) const;

  // Logits for the next output token, attending to all current source rows.
  std::vector<double> next_logits();
  // Commits the emitted token as the next decoder input.
  void advance(int token);
  std::size_t emitted() const { return position_; }

 private:
  struct SourceCache {
    std::vector<int> tokens;
    std::vector<std::vector<double>> self_k, self_v;  // per encoder layer
    std::vector<double> out;                          // final rows
    std::vector<std::vector<double>> cross_k, cross_v;  // per decoder layer
    std::size_t rows = 0;
  };

  void append_cross_rows(SourceCache& cache, const Tensor& new_rows);

  const Model* model_;
  std::vector<SourceCache> sources_;
  std::vector<std::vector<double>> self_k_, self_v_;  // per decoder layer
  int pending_ = kBos;
  std::size_t position_ = 0;
  bool awaiting_advance_ = false;
};

}  // namespace pivotmt
