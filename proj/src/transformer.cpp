#include "pivotmt/transformer.hpp"

#include <algorithm>
#include <cmath>

#include "pivotmt/errors.hpp"
#include "pivotmt/ops.hpp"

namespace pivotmt {

void ModelConfig::validate() const {
  if (num_encoders < 1) throw ConfigError("num_encoders must be at least 1");
  if (layers < 1) throw ConfigError("layers must be at least 1");
  if (heads < 1 || hidden < 1 || hidden % heads != 0) {
    throw ConfigError("hidden size " + std::to_string(hidden) + " must be a positive multiple of heads " +
                      std::to_string(heads));
  }
  if (ff < 1) throw ConfigError("ff size must be positive");
  if (src_vocab < 1 || tgt_vocab < 1) throw ConfigError("vocabulary sizes must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (max_len < 2) throw ConfigError("max_len must be at least 2");
}

Model::Model(ModelConfig config) : config_(config) {
  config_.validate();
  Rng rng(config_.seed);
  build(rng);
  const std::size_t h = config_.hidden;
  positions_.resize(config_.max_len * h);
  for (std::size_t pos = 0; pos < config_.max_len; ++pos) {
    for (std::size_t i = 0; i < h; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(h));
      positions_[pos * h + i] = std::sin(static_cast<double>(pos) * freq);
      if (i + 1 < h) positions_[pos * h + i + 1] = std::cos(static_cast<double>(pos) * freq);
    }
  }
}

Tensor Model::add_param(const std::string& name, Shape shape, Rng* xavier) {
  std::vector<double> values(shape_numel(shape), 0.0);
  if (xavier) {
    const double fan_in = static_cast<double>(shape[0]);
    const double fan_out = static_cast<double>(shape.size() > 1 ? shape[1] : 1);
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    for (auto& v : values) v = xavier->uniform(-limit, limit);
  }
  Tensor t = Tensor::from(std::move(shape), std::move(values), true);
  params_.push_back({name, t});
  return t;
}

void Model::build(Rng& rng) {
  const std::size_t h = config_.hidden, f = config_.ff;
  auto linear_param = [&](const std::string& name, std::size_t in, std::size_t out) {
    return Linear{add_param(name + ".w", {in, out}, &rng), add_param(name + ".b", {out}, nullptr)};
  };
  auto norm_param = [&](const std::string& name) {
    Norm n{add_param(name + ".g", {h}, nullptr), add_param(name + ".b", {h}, nullptr)};
    std::fill(n.g.mutable_values().begin(), n.g.mutable_values().end(), 1.0);
    return n;
  };
  auto attention_param = [&](const std::string& name) {
    return Attention{linear_param(name + ".q", h, h), linear_param(name + ".k", h, h),
                     linear_param(name + ".v", h, h), linear_param(name + ".o", h, h)};
  };
  auto ff_param = [&](const std::string& name) {
    return FeedForward{linear_param(name + ".in", h, f), linear_param(name + ".out", f, h)};
  };

  const std::size_t num_enc = config_.share_encoder ? 1 : config_.num_encoders;
  for (std::size_t e = 0; e < num_enc; ++e) {
    const std::string p = "enc" + std::to_string(e);
    Encoder enc;
    enc.embed = add_param(p + ".embed", {config_.src_vocab, h}, &rng);
    for (std::size_t l = 0; l < config_.layers; ++l) {
      const std::string lp = p + ".layer" + std::to_string(l);
      EncoderLayer layer;
      layer.ln_self = norm_param(lp + ".ln_self");
      layer.self = attention_param(lp + ".self");
      layer.ln_ff = norm_param(lp + ".ln_ff");
      layer.ff = ff_param(lp + ".ff");
      enc.layers.push_back(std::move(layer));
    }
    enc.ln_out = norm_param(p + ".ln_out");
    encoders_.push_back(std::move(enc));
  }

  decoder_.embed = add_param("dec.embed", {config_.tgt_vocab, h}, &rng);
  const std::size_t num_gates = config_.num_encoders == 1 ? 0
                                : config_.num_encoders == 2 ? 1
                                                            : config_.num_encoders;
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const std::string lp = "dec.layer" + std::to_string(l);
    DecoderLayer layer;
    layer.ln_self = norm_param(lp + ".ln_self");
    layer.self = attention_param(lp + ".self");
    layer.ln_cross = norm_param(lp + ".ln_cross");
    layer.cross = attention_param(lp + ".cross");
    for (std::size_t g = 0; g < num_gates; ++g) {
      const std::string gp = lp + ".gate" + std::to_string(g);
      layer.gates.push_back(GateParams{add_param(gp + ".w", {2 * h, h}, &rng), add_param(gp + ".b", {h}, nullptr)});
    }
    layer.ln_ff = norm_param(lp + ".ln_ff");
    layer.ff = ff_param(lp + ".ff");
    decoder_.layers.push_back(std::move(layer));
  }
  decoder_.ln_out = norm_param("dec.ln_out");
  decoder_.out = linear_param("dec.out", h, config_.tgt_vocab);
}

Model Model::clone() const {
  Model copy(config_);
  copy.load_snapshot(snapshot());
  return copy;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

void Model::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

std::vector<std::vector<double>> Model::snapshot() const {
  std::vector<std::vector<double>> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
  return out;
}

void Model::load_snapshot(const std::vector<std::vector<double>>& values) {
  if (values.size() != params_.size()) {
    throw ShapeError("snapshot holds " + std::to_string(values.size()) + " arrays, model has " +
                     std::to_string(params_.size()));
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto dst = params_[i].tensor.mutable_values();
    if (values[i].size() != dst.size()) {
      throw ShapeError("snapshot array " + params_[i].name + " has " + std::to_string(values[i].size()) +
                       " values, expected " + std::to_string(dst.size()));
    }
    std::copy(values[i].begin(), values[i].end(), dst.begin());
  }
}

const Model::Encoder& Model::encoder_for(std::size_t source_index) const {
  if (source_index >= config_.num_encoders) {
    throw IndexError("source index " + std::to_string(source_index) + " but model has " +
                     std::to_string(config_.num_encoders) + " encoders");
  }
  return config_.share_encoder ? encoders_[0] : encoders_[source_index];
}

// ---------------------------------------------------------------------------

namespace {

struct Ctx {
  Rng* rng = nullptr;
  double p = 0.0;
  Tensor drop(const Tensor& x) const { return (rng && p > 0.0) ? dropout(x, p, *rng) : x; }
};

Tensor norm(const Model::Norm& n, const Tensor& x) { return layer_norm(x, n.g, n.b); }
Tensor lin(const Model::Linear& l, const Tensor& x) { return linear(x, l.w, l.b); }

Tensor feed_forward(const Model::FeedForward& ff, const Tensor& x) { return lin(ff.out, gelu(lin(ff.in, x))); }

// Multi-head attention of projected queries [b*tq x h] over projected keys and
// values [b*tk x h]; row (b, q) sees its first visible[b*tq + q] keys.
Tensor attend(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t batch, std::size_t tq,
              std::size_t tk, std::size_t heads, std::span<const std::size_t> visible) {
  const std::size_t dh = q.dim(1) / heads;
  Tensor qh = split_heads(q, batch, tq, heads);
  Tensor kh = split_heads(k, batch, tk, heads);
  Tensor vh = split_heads(v, batch, tk, heads);
  Tensor scores = scale(bmm_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(dh)));
  std::vector<std::size_t> vis(batch * heads * tq);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t hd = 0; hd < heads; ++hd)
      for (std::size_t t = 0; t < tq; ++t) vis[(b * heads + hd) * tq + t] = visible[b * tq + t];
  Tensor probs = prefix_softmax(scores, vis);
  return merge_heads(bmm(probs, vh), batch, tq, heads);
}

// Scaled embeddings plus sinusoidal positions; positions[i] for ids[i].
Tensor embed_tokens(const Model& model, const Tensor& table, std::span<const int> ids,
                    std::span<const std::size_t> positions) {
  const std::size_t h = model.config().hidden;
  std::vector<double> pe(ids.size() * h);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (positions[i] >= model.config().max_len) {
      throw LengthError("position " + std::to_string(positions[i]) + " exceeds max_len " +
                        std::to_string(model.config().max_len));
    }
    std::copy_n(model.positions().data() + positions[i] * h, h, pe.data() + i * h);
  }
  Tensor e = scale(embedding(table, ids), std::sqrt(static_cast<double>(h)));
  return add(e, Tensor::from({ids.size(), h}, std::move(pe)));
}

struct Padded {
  std::size_t batch = 0, len = 0;
  std::vector<int> ids;  // batch * len
  std::vector<std::size_t> lengths;
  std::vector<std::size_t> positions;  // batch * len
};

Padded pad(const std::vector<TokenIds>& seqs, std::size_t extra_front = 0, int front = kBos,
           std::size_t extra_back = 0, int back = kEos) {
  Padded p;
  p.batch = seqs.size();
  for (const auto& s : seqs) p.len = std::max(p.len, s.size() + extra_front + extra_back);
  p.ids.assign(p.batch * p.len, kPad);
  p.positions.resize(p.batch * p.len);
  for (std::size_t b = 0; b < p.batch; ++b) {
    std::size_t t = 0;
    if (extra_front) p.ids[b * p.len + t++] = front;
    for (int id : seqs[b]) p.ids[b * p.len + t++] = id;
    if (extra_back) p.ids[b * p.len + t++] = back;
    p.lengths.push_back(t);
    for (std::size_t i = 0; i < p.len; ++i) p.positions[b * p.len + i] = i;
  }
  return p;
}

Tensor encoder_forward(const Model& model, std::size_t source_index, const Padded& in, const Ctx& ctx) {
  const auto& cfg = model.config();
  const auto& enc = model.encoder_for(source_index);
  Tensor x = ctx.drop(embed_tokens(model, enc.embed, in.ids, in.positions));
  std::vector<std::size_t> vis(in.batch * in.len);
  for (std::size_t b = 0; b < in.batch; ++b)
    for (std::size_t t = 0; t < in.len; ++t)
      vis[b * in.len + t] = cfg.causal_encoder ? std::min(t + 1, in.lengths[b]) : in.lengths[b];
  for (const auto& layer : enc.layers) {
    Tensor y = norm(layer.ln_self, x);
    Tensor a = attend(lin(layer.self.q, y), lin(layer.self.k, y), lin(layer.self.v, y), in.batch, in.len, in.len,
                      cfg.heads, vis);
    x = add(x, ctx.drop(lin(layer.self.o, a)));
    x = add(x, ctx.drop(feed_forward(layer.ff, norm(layer.ln_ff, x))));
  }
  return norm(enc.ln_out, x);
}

struct EncodedBatch {
  Tensor states;  // [batch*len x h]
  std::size_t len = 0;
  std::vector<std::size_t> visible;  // per decoder row
};

// Final decoder hidden states [batch*tgt_len x h] (before the output norm).
Tensor decoder_forward(const Model& model, const std::vector<EncodedBatch>& sources, const Padded& tgt,
                       const Ctx& ctx) {
  const auto& cfg = model.config();
  const auto& dec = model.decoder();
  Tensor x = ctx.drop(embed_tokens(model, dec.embed, tgt.ids, tgt.positions));
  std::vector<std::size_t> self_vis(tgt.batch * tgt.len);
  for (std::size_t b = 0; b < tgt.batch; ++b)
    for (std::size_t t = 0; t < tgt.len; ++t) self_vis[b * tgt.len + t] = t + 1;
  for (const auto& layer : dec.layers) {
    Tensor y = norm(layer.ln_self, x);
    Tensor a = attend(lin(layer.self.q, y), lin(layer.self.k, y), lin(layer.self.v, y), tgt.batch, tgt.len,
                      tgt.len, cfg.heads, self_vis);
    x = add(x, ctx.drop(lin(layer.self.o, a)));
    Tensor yc = norm(layer.ln_cross, x);
    Tensor q = lin(layer.cross.q, yc);
    std::vector<Tensor> contexts;
    for (const auto& src : sources) {
      Tensor c = attend(q, lin(layer.cross.k, src.states), lin(layer.cross.v, src.states), tgt.batch, tgt.len,
                        src.len, cfg.heads, src.visible);
      contexts.push_back(lin(layer.cross.o, c));
    }
    x = add(x, ctx.drop(fuse_attention(contexts, layer.gates)));
    x = add(x, ctx.drop(feed_forward(layer.ff, norm(layer.ln_ff, x))));
  }
  return x;
}

Tensor output_logits(const Model& model, const Tensor& hidden) {
  const auto& dec = model.decoder();
  return lin(dec.out, norm(dec.ln_out, hidden));
}

void check_tokens(std::span<const int> tokens, std::size_t vocab, const char* what) {
  for (int id : tokens) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw IndexError(std::string(what) + " token id " + std::to_string(id) + " outside vocabulary of size " +
                       std::to_string(vocab));
    }
  }
}

std::vector<double> row_values(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

void append_values(std::vector<double>& dst, const Tensor& t) {
  dst.insert(dst.end(), t.values().begin(), t.values().end());
}

}  // namespace

Tensor fuse_attention(std::span<const Tensor> contexts, std::span<const GateParams> gates) {
  const std::size_t n = contexts.size();
  if (n == 0) throw ShapeError("fuse_attention needs at least one context");
  const Shape& shape = contexts[0].shape();
  if (shape.size() != 2) throw ShapeError("context must be [rows x h], got " + shape_str(shape));
  for (const auto& c : contexts) {
    if (c.shape() != shape) {
      throw ShapeError("context shapes differ: " + shape_str(shape) + " vs " + shape_str(c.shape()));
    }
  }
  if (n == 1) return contexts[0];
  const std::size_t h = shape[1];
  const std::size_t needed = n == 2 ? 1 : n;
  if (gates.size() != needed) {
    throw ShapeError(std::to_string(n) + " contexts need " + std::to_string(needed) + " gate projections, got " +
                     std::to_string(gates.size()));
  }
  for (const auto& g : gates) {
    if (g.weight.shape() != Shape{2 * h, h} || g.bias.shape() != Shape{h}) {
      throw ShapeError("gate parameters " + shape_str(g.weight.shape()) + "/" + shape_str(g.bias.shape()) +
                       " do not match hidden size " + std::to_string(h));
    }
  }
  if (n == 2) {
    Tensor w = sigmoid(linear(concat(contexts[0], contexts[1], 1), gates[0].weight, gates[0].bias));
    return mix(contexts[0], contexts[1], w);
  }
  // Experimental generalization: softmax over per-source gate logits.
  const std::size_t rows = shape[0];
  std::vector<Tensor> logits;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor others;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      others = others.defined() ? add(others, contexts[j]) : contexts[j];
    }
    others = scale(others, 1.0 / static_cast<double>(n - 1));
    Tensor li = linear(concat(contexts[i], others, 1), gates[i].weight, gates[i].bias);
    logits.push_back(reshape(li, {1, rows * h}));
  }
  Tensor weights = softmax(concat(logits, 0), 0);
  Tensor fused;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor wi = reshape(slice(weights, 0, i, i + 1), {rows, h});
    Tensor term = mul(wi, contexts[i]);
    fused = fused.defined() ? add(fused, term) : term;
  }
  return fused;
}

EncoderStates encode(const Model& model, std::span<const int> tokens, std::size_t source_index) {
  const auto& cfg = model.config();
  if (tokens.size() > cfg.max_len) {
    throw LengthError("source of length " + std::to_string(tokens.size()) + " exceeds max_len " +
                      std::to_string(cfg.max_len));
  }
  check_tokens(tokens, cfg.src_vocab, "source");
  NoGradGuard no_grad;
  Padded in = pad({TokenIds(tokens.begin(), tokens.end())});
  if (in.len == 0) return EncoderStates{Tensor::zeros({0, cfg.hidden})};
  return EncoderStates{encoder_forward(model, source_index, in, Ctx{})};
}

std::vector<double> decode_step(const Model& model, std::span<const EncoderStates> enc, std::span<const int> prefix,
                                const Visibility* visibility) {
  const auto& cfg = model.config();
  if (enc.size() != cfg.num_encoders) {
    throw ContractError("model expects " + std::to_string(cfg.num_encoders) + " encoder states, got " +
                        std::to_string(enc.size()));
  }
  bool any_rows = false;
  for (const auto& e : enc) any_rows = any_rows || e.rows() > 0;
  if (!any_rows) throw ContractError("decode_step with empty encoder states");
  if (prefix.empty() || prefix[0] != kBos) throw ContractError("decoder prefix must start with BOS");
  if (prefix.size() > cfg.max_len) throw LengthError("decoder prefix exceeds max_len");
  check_tokens(prefix, cfg.tgt_vocab, "target");
  if (visibility && visibility->size() != enc.size()) throw ContractError("visibility must cover every source");

  NoGradGuard no_grad;
  Padded tgt = pad({TokenIds(prefix.begin(), prefix.end())});
  std::vector<EncodedBatch> sources;
  for (std::size_t s = 0; s < enc.size(); ++s) {
    EncodedBatch eb{enc[s].states, enc[s].rows(), {}};
    if (!eb.states.defined()) eb.states = Tensor::zeros({0, cfg.hidden});
    if (visibility) {
      const auto& v = (*visibility)[s];
      if (v.size() != prefix.size()) throw ContractError("visibility length must equal prefix length");
      eb.visible.assign(v.begin(), v.end());
    } else {
      eb.visible.assign(prefix.size(), eb.len);
    }
    sources.push_back(std::move(eb));
  }
  Tensor hidden = decoder_forward(model, sources, tgt, Ctx{});
  Tensor last = slice(hidden, 0, prefix.size() - 1, prefix.size());
  return row_values(output_logits(model, last));
}

Tensor forward_loss(const Model& model, const std::vector<std::vector<TokenIds>>& sources,
                    const std::vector<TokenIds>& targets, const LossOptions& options) {
  const auto& cfg = model.config();
  if (sources.size() != cfg.num_encoders) {
    throw ContractError("model expects " + std::to_string(cfg.num_encoders) + " source slots, batch has " +
                        std::to_string(sources.size()));
  }
  for (const auto& slot : sources) {
    if (slot.size() != targets.size()) {
      throw ContractError("misaligned batch: " + std::to_string(slot.size()) + " source examples vs " +
                          std::to_string(targets.size()) + " targets");
    }
  }
  if (targets.empty()) throw ContractError("empty batch");
  for (const auto& slot : sources)
    for (const auto& s : slot) {
      if (s.size() > cfg.max_len) throw LengthError("source exceeds max_len");
      check_tokens(s, cfg.src_vocab, "source");
    }
  for (const auto& t : targets) {
    if (t.size() + 1 > cfg.max_len) throw LengthError("target exceeds max_len");
    check_tokens(t, cfg.tgt_vocab, "target");
  }

  Ctx ctx{options.dropout_rng, cfg.dropout};
  Padded tgt_in = pad(targets, 1, kBos);
  Padded tgt_out = pad(targets, 0, kBos, 1, kEos);
  std::vector<EncodedBatch> encoded;
  for (std::size_t s = 0; s < sources.size(); ++s) {
    Padded in = pad(sources[s]);
    EncodedBatch eb;
    eb.len = in.len;
    eb.states = in.len ? encoder_forward(model, s, in, ctx) : Tensor::zeros({0, cfg.hidden});
    eb.visible.resize(tgt_in.batch * tgt_in.len);
    for (std::size_t b = 0; b < tgt_in.batch; ++b)
      for (std::size_t t = 0; t < tgt_in.len; ++t) {
        const std::size_t full = in.lengths[b];
        eb.visible[b * tgt_in.len + t] = options.wait_k ? std::min(*options.wait_k + t, full) : full;
      }
    encoded.push_back(std::move(eb));
  }
  Tensor logits = output_logits(model, decoder_forward(model, encoded, tgt_in, ctx));

  std::vector<double> weights(tgt_in.batch * tgt_in.len, 0.0);
  const double per_example = 1.0 / static_cast<double>(tgt_in.batch);
  for (std::size_t b = 0; b < tgt_in.batch; ++b) {
    const std::size_t n = tgt_out.lengths[b];
    for (std::size_t t = 0; t < n; ++t) weights[b * tgt_in.len + t] = per_example / static_cast<double>(n);
  }
  return cross_entropy_weighted(logits, tgt_out.ids, weights, options.label_smoothing);
}

int argmax_token(std::span<const double> logits) {
  int best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  return best;
}

DecodeResult greedy_decode(const Model& model, std::span<const EncoderStates> enc, std::size_t max_steps) {
  if (enc.size() != model.config().num_encoders) {
    throw ContractError("model expects " + std::to_string(model.config().num_encoders) + " encoder states, got " +
                        std::to_string(enc.size()));
  }
  DecoderSession session(model);
  for (std::size_t s = 0; s < enc.size(); ++s) session.set_source(s, enc[s]);
  DecodeResult result;
  const std::size_t limit = std::min(max_steps, model.config().max_len - 1);
  while (true) {
    if (result.tokens.size() >= limit) {
      result.truncated = true;
      break;
    }
    const int tok = argmax_token(session.next_logits());
    if (tok == kEos) break;
    result.tokens.push_back(tok);
    session.advance(tok);
  }
  return result;
}

// ---------------------------------------------------------------------------

DecoderSession::DecoderSession(const Model& model) : model_(&model) {
  const auto& cfg = model.config();
  sources_.resize(cfg.num_encoders);
  for (auto& s : sources_) {
    s.self_k.resize(cfg.layers);
    s.self_v.resize(cfg.layers);
    s.cross_k.resize(cfg.layers);
    s.cross_v.resize(cfg.layers);
  }
  self_k_.resize(cfg.layers);
  self_v_.resize(cfg.layers);
}

void DecoderSession::append_cross_rows(SourceCache& cache, const Tensor& new_rows) {
  const auto& dec = model_->decoder();
  for (std::size_t l = 0; l < dec.layers.size(); ++l) {
    append_values(cache.cross_k[l], lin(dec.layers[l].cross.k, new_rows));
    append_values(cache.cross_v[l], lin(dec.layers[l].cross.v, new_rows));
  }
}

void DecoderSession::append_source(std::size_t stream, int token) {
  const auto& cfg = model_->config();
  if (!cfg.causal_encoder) {
    throw ConfigError("incremental source encoding needs a causal encoder");
  }
  auto& cache = sources_.at(stream);
  if (cache.rows >= cfg.max_len) throw LengthError("source stream exceeds max_len");
  const int ids[1] = {token};
  check_tokens(ids, cfg.src_vocab, "source");
  NoGradGuard no_grad;
  const auto& enc = model_->encoder_for(stream);
  const std::size_t pos = cache.rows;
  const std::size_t h = cfg.hidden;
  const std::size_t positions[1] = {pos};
  Tensor x = embed_tokens(*model_, enc.embed, ids, positions);
  const std::size_t vis[1] = {pos + 1};
  for (std::size_t l = 0; l < enc.layers.size(); ++l) {
    const auto& layer = enc.layers[l];
    Tensor y = norm(layer.ln_self, x);
    append_values(cache.self_k[l], lin(layer.self.k, y));
    append_values(cache.self_v[l], lin(layer.self.v, y));
    Tensor keys = Tensor::from({pos + 1, h}, cache.self_k[l]);
    Tensor values = Tensor::from({pos + 1, h}, cache.self_v[l]);
    Tensor a = attend(lin(layer.self.q, y), keys, values, 1, 1, pos + 1, cfg.heads, vis);
    x = add(x, lin(layer.self.o, a));
    x = add(x, feed_forward(layer.ff, norm(layer.ln_ff, x)));
  }
  Tensor out = norm(enc.ln_out, x);
  append_values(cache.out, out);
  cache.tokens.push_back(token);
  cache.rows += 1;
  append_cross_rows(cache, out);
}

void DecoderSession::set_source(std::size_t stream, const EncoderStates& states) {
  const auto& cfg = model_->config();
  auto& cache = sources_.at(stream);
  cache = SourceCache{};
  cache.self_k.resize(cfg.layers);
  cache.self_v.resize(cfg.layers);
  cache.cross_k.resize(cfg.layers);
  cache.cross_v.resize(cfg.layers);
  if (states.rows() == 0) return;
  if (states.states.rank() != 2 || states.states.dim(1) != cfg.hidden) {
    throw ShapeError("encoder states " + shape_str(states.states.shape()) + " do not match hidden size");
  }
  NoGradGuard no_grad;
  cache.out = row_values(states.states);
  cache.rows = states.rows();
  append_cross_rows(cache, states.states.detach());
}

std::size_t DecoderSession::source_rows(std::size_t stream) const { return sources_.at(stream).rows; }

EncoderStates DecoderSession::source_states(std::size_t stream) const {
  const auto& cache = sources_.at(stream);
  return EncoderStates{Tensor::from({cache.rows, model_->config().hidden}, cache.out)};
}

std::vector<double> DecoderSession::next_logits() {
  if (awaiting_advance_) throw ContractError("next_logits called twice without advance");
  const auto& cfg = model_->config();
  bool any_rows = false;
  for (const auto& s : sources_) any_rows = any_rows || s.rows > 0;
  if (!any_rows) throw ContractError("decoding with empty encoder states");
  if (position_ >= cfg.max_len) throw LengthError("target exceeds max_len");

  NoGradGuard no_grad;
  const auto& dec = model_->decoder();
  const std::size_t h = cfg.hidden;
  const std::size_t t = position_;
  const int ids[1] = {pending_};
  const std::size_t positions[1] = {t};
  Tensor x = embed_tokens(*model_, dec.embed, ids, positions);
  const std::size_t self_vis[1] = {t + 1};
  for (std::size_t l = 0; l < dec.layers.size(); ++l) {
    const auto& layer = dec.layers[l];
    Tensor y = norm(layer.ln_self, x);
    append_values(self_k_[l], lin(layer.self.k, y));
    append_values(self_v_[l], lin(layer.self.v, y));
    Tensor keys = Tensor::from({t + 1, h}, self_k_[l]);
    Tensor values = Tensor::from({t + 1, h}, self_v_[l]);
    Tensor a = attend(lin(layer.self.q, y), keys, values, 1, 1, t + 1, cfg.heads, self_vis);
    x = add(x, lin(layer.self.o, a));
    Tensor q = lin(layer.cross.q, norm(layer.ln_cross, x));
    std::vector<Tensor> contexts;
    for (const auto& src : sources_) {
      const std::size_t rows = src.rows;
      const std::size_t vis[1] = {rows};
      Tensor ck = Tensor::from({rows, h}, src.cross_k[l]);
      Tensor cv = Tensor::from({rows, h}, src.cross_v[l]);
      contexts.push_back(lin(layer.cross.o, attend(q, ck, cv, 1, 1, rows, cfg.heads, vis)));
    }
    x = add(x, fuse_attention(contexts, layer.gates));
    x = add(x, feed_forward(layer.ff, norm(layer.ln_ff, x)));
  }
  awaiting_advance_ = true;
  return row_values(output_logits(*model_, x));
}

void DecoderSession::advance(int token) {
  if (!awaiting_advance_) throw ContractError("advance called before next_logits");
  const int ids[1] = {token};
  check_tokens(ids, model_->config().tgt_vocab, "target");
  pending_ = token;
  ++position_;
  awaiting_advance_ = false;
}

}  // namespace pivotmt
