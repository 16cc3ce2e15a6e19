#include <algorithm>
#include <cmath>
#include <map>

#include "doctest.h"
#include "gradcheck.hpp"
#include "pivotmt/errors.hpp"
#include "pivotmt/ops.hpp"
#include "pivotmt/transformer.hpp"

using namespace pivotmt;
using pivotmt::testing::grad_check;
using pivotmt::testing::random_tensor;

namespace {

ModelConfig small_config(std::size_t n = 1, bool causal = true) {
  ModelConfig c;
  c.num_encoders = n;
  c.layers = 2;
  c.heads = 2;
  c.hidden = 16;
  c.ff = 32;
  c.src_vocab = 13;
  c.tgt_vocab = 11;
  c.dropout = 0.0;
  c.max_len = 24;
  c.causal_encoder = causal;
  c.seed = 7;
  return c;
}

Tensor param(const Model& m, const std::string& name) {
  for (const auto& p : m.parameters())
    if (p.name == name) return p.tensor;
  FAIL("no parameter " << name);
  return {};
}

// Copies every parameter of `from` into the same-named parameter of `to`.
void copy_shared(const Model& from, const Model& to) {
  std::map<std::string, Tensor> by_name;
  for (const auto& p : to.parameters()) by_name[p.name] = p.tensor;
  for (const auto& p : from.parameters()) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) continue;
    auto dst = it->second.mutable_values();
    std::copy(p.tensor.values().begin(), p.tensor.values().end(), dst.begin());
  }
}

TokenIds random_ids(Rng& rng, std::size_t len, std::size_t vocab) {
  TokenIds ids(len);
  for (auto& id : ids) id = kNumReserved + static_cast<int>(rng.below(vocab - kNumReserved));
  return ids;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  REQUIRE(a.size() == b.size());
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

}  // namespace

TEST_CASE("config validation") {
  auto c = small_config();
  c.heads = 3;
  CHECK_THROWS_AS(Model{c}, ConfigError);
  c = small_config();
  c.num_encoders = 0;
  CHECK_THROWS_AS(Model{c}, ConfigError);
  c = small_config();
  c.dropout = 1.0;
  CHECK_THROWS_AS(Model{c}, ConfigError);
}

TEST_CASE("encode shape and errors") {
  Model m(small_config());
  const TokenIds five{4, 5, 6, 7, 8};
  auto e = encode(m, five);
  CHECK(e.states.shape() == Shape{5, 16});
  CHECK(encode(m, TokenIds{}).rows() == 0);
  CHECK_THROWS_AS(encode(m, TokenIds(25, 4)), LengthError);
  CHECK_THROWS_AS(encode(m, TokenIds{4, 13}), IndexError);
  CHECK_THROWS_AS(encode(m, TokenIds{-1}), IndexError);
}

TEST_CASE("causal encoder is prefix stable, bidirectional is not") {
  Model causal(small_config(1, true));
  Model bidir(small_config(1, false));
  Rng rng(3);
  bool bidir_differs = false;
  for (int trial = 0; trial < 10; ++trial) {
    auto x = random_ids(rng, 7, 13);
    auto full = encode(causal, x).states;
    auto full_b = encode(bidir, x).states;
    for (std::size_t j = 1; j <= x.size(); ++j) {
      auto pre = encode(causal, std::span<const int>(x.data(), j)).states;
      CHECK(max_abs_diff(pre.values(), full.values().subspan(0, j * 16)) < 1e-10);
    }
    auto pre_b = encode(bidir, std::span<const int>(x.data(), 3)).states;
    if (max_abs_diff(pre_b.values(), full_b.values().subspan(0, 3 * 16)) > 1e-6) bidir_differs = true;
  }
  CHECK(bidir_differs);
}

TEST_CASE("fusion examples") {
  Rng rng(9);
  const std::size_t h = 6;
  auto a1 = random_tensor(rng, {3, h}, -2, 2, false);
  auto a2 = random_tensor(rng, {3, h}, -2, 2, false);
  GateParams zero{Tensor::zeros({2 * h, h}), Tensor::zeros({h})};
  std::vector<Tensor> ctx{a1, a2};
  auto mean = fuse_attention(ctx, std::span<const GateParams>(&zero, 1));
  for (std::size_t i = 0; i < mean.numel(); ++i) CHECK(std::abs(mean[i] - 0.5 * (a1[i] + a2[i])) < 1e-12);

  GateParams first{Tensor::zeros({2 * h, h}), Tensor::full({h}, 40.0)};
  auto sel = fuse_attention(ctx, std::span<const GateParams>(&first, 1));
  for (std::size_t i = 0; i < sel.numel(); ++i) CHECK(std::abs(sel[i] - a1[i]) < 1e-9);

  std::vector<Tensor> one{a1};
  auto ident = fuse_attention(one, {});
  CHECK(max_abs_diff(ident.values(), a1.values()) == 0.0);
}

TEST_CASE("fusion is a per-dimension convex combination") {
  Rng rng(21);
  const std::size_t h = 5;
  std::size_t violations = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    auto a1 = random_tensor(rng, {1, h}, -3, 3, false);
    auto a2 = random_tensor(rng, {1, h}, -3, 3, false);
    GateParams g{random_tensor(rng, {2 * h, h}, -2, 2, false), random_tensor(rng, {h}, -2, 2, false)};
    std::vector<Tensor> ctx{a1, a2};
    auto f = fuse_attention(ctx, std::span<const GateParams>(&g, 1));
    for (std::size_t d = 0; d < h; ++d) {
      if (f[d] < std::min(a1[d], a2[d]) || f[d] > std::max(a1[d], a2[d])) ++violations;
    }
  }
  CHECK(violations == 0);
}

TEST_CASE("three-source fusion stays inside the per-dimension hull") {
  Rng rng(4);
  const std::size_t h = 4;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Tensor> ctx;
    std::vector<GateParams> gates;
    for (int i = 0; i < 3; ++i) {
      ctx.push_back(random_tensor(rng, {2, h}, -2, 2, false));
      gates.push_back({random_tensor(rng, {2 * h, h}, -1, 1, false), random_tensor(rng, {h}, -1, 1, false)});
    }
    auto f = fuse_attention(ctx, gates);
    for (std::size_t i = 0; i < f.numel(); ++i) {
      const double lo = std::min({ctx[0][i], ctx[1][i], ctx[2][i]});
      const double hi = std::max({ctx[0][i], ctx[1][i], ctx[2][i]});
      CHECK(f[i] >= lo - 1e-12);
      CHECK(f[i] <= hi + 1e-12);
    }
  }
}

TEST_CASE("fusion shape errors") {
  GateParams g{Tensor::zeros({8, 4}), Tensor::zeros({4})};
  std::vector<Tensor> two{Tensor::zeros({1, 4}), Tensor::zeros({1, 4})};
  CHECK_THROWS_AS(fuse_attention(two, {}), ShapeError);
  std::vector<Tensor> mismatched{Tensor::zeros({1, 4}), Tensor::zeros({1, 3})};
  CHECK_THROWS_AS(fuse_attention(mismatched, std::span<const GateParams>(&g, 1)), ShapeError);
  GateParams wrong{Tensor::zeros({4, 4}), Tensor::zeros({4})};
  CHECK_THROWS_AS(fuse_attention(two, std::span<const GateParams>(&wrong, 1)), ShapeError);
  std::vector<Tensor> none;
  CHECK_THROWS_AS(fuse_attention(none, {}), ShapeError);
}

TEST_CASE("gate parameters exist only for multi-source models") {
  Model one(small_config(1));
  Model two(small_config(2));
  for (std::size_t l = 0; l < 2; ++l) {
    CHECK(one.gates(l).empty());
    REQUIRE(two.gates(l).size() == 1);
    CHECK(two.gates(l)[0].weight.shape() == Shape{32, 16});
    CHECK(two.gates(l)[0].bias.shape() == Shape{16});
  }
  const std::size_t h = 16, layers = 2;
  CHECK(two.parameter_count() - one.parameter_count() == (2 * h * h + h) * layers);

  auto c = small_config(2);
  c.share_encoder = false;
  Model separate(c);
  CHECK(separate.parameter_count() > two.parameter_count());
}

TEST_CASE("decode_step shape and contract") {
  Model m(small_config());
  auto e = encode(m, TokenIds{4, 5, 6});
  const int prefix[] = {kBos, 5};
  auto logits = decode_step(m, std::span<const EncoderStates>(&e, 1), prefix);
  CHECK(logits.size() == 11);
  EncoderStates empty;
  CHECK_THROWS_AS(decode_step(m, std::span<const EncoderStates>(&empty, 1), prefix), ContractError);
  const int no_bos[] = {5};
  CHECK_THROWS_AS(decode_step(m, std::span<const EncoderStates>(&e, 1), no_bos), ContractError);
}

TEST_CASE("duplicate sources degenerate to the single-source model") {
  Model two(small_config(2));
  Model one(small_config(1));
  copy_shared(two, one);
  Rng rng(12);
  for (int trial = 0; trial < 5; ++trial) {
    auto x = random_ids(rng, 6, 13);
    auto e1 = encode(one, x);
    std::vector<EncoderStates> e2{encode(two, x, 0), encode(two, x, 1)};
    TokenIds prefix{kBos};
    for (int step = 0; step < 4; ++step) {
      auto l1 = decode_step(one, std::span<const EncoderStates>(&e1, 1), prefix);
      auto l2 = decode_step(two, e2, prefix);
      CHECK(max_abs_diff(l1, l2) < 1e-10);
      prefix.push_back(argmax_token(l1));
    }
    CHECK(greedy_decode(one, std::span<const EncoderStates>(&e1, 1), 10).tokens ==
          greedy_decode(two, e2, 10).tokens);
  }
}

TEST_CASE("masked cross-attention ignores rows beyond visibility") {
  Model m(small_config(2));
  Rng rng(5);
  auto x = random_ids(rng, 8, 13);
  auto y = random_ids(rng, 6, 13);
  auto shortx = std::span<const int>(x.data(), 5);
  std::vector<EncoderStates> small{encode(m, shortx, 0), encode(m, y, 1)};
  std::vector<EncoderStates> big{encode(m, x, 0), encode(m, y, 1)};
  // A wait-3 style visibility for stream 0, clamped to the short source.
  TokenIds prefix{kBos, 6, 7};
  Visibility vis{{3, 4, 5}, {3, 4, 5}};
  auto a = decode_step(m, small, prefix, &vis);
  auto b = decode_step(m, big, prefix, &vis);
  CHECK(max_abs_diff(a, b) < 1e-12);
}

TEST_CASE("batch loss equals the mean of singleton losses") {
  for (std::size_t n : {1u, 2u}) {
    Model m(small_config(n));
    Rng rng(31);
    std::vector<std::vector<TokenIds>> src(n);
    std::vector<TokenIds> tgt;
    for (int b = 0; b < 5; ++b) {
      for (std::size_t s = 0; s < n; ++s) src[s].push_back(random_ids(rng, 1 + rng.below(8), 13));
      tgt.push_back(random_ids(rng, rng.below(7), 11));
    }
    for (std::optional<std::size_t> k : {std::optional<std::size_t>{}, std::optional<std::size_t>{2}}) {
      LossOptions opt;
      opt.wait_k = k;
      opt.label_smoothing = 0.1;
      const double batch = forward_loss(m, src, tgt, opt).item();
      double total = 0.0;
      for (std::size_t b = 0; b < tgt.size(); ++b) {
        std::vector<std::vector<TokenIds>> one_src(n);
        for (std::size_t s = 0; s < n; ++s) one_src[s].push_back(src[s][b]);
        total += forward_loss(m, one_src, {tgt[b]}, opt).item();
      }
      CHECK(std::abs(batch - total / static_cast<double>(tgt.size())) < 1e-10);
    }
  }
}

TEST_CASE("uniform output layer gives ln(V) loss") {
  Model m(small_config());
  for (const char* name : {"dec.out.w", "dec.out.b"}) {
    auto t = param(m, name);
    std::fill(t.mutable_values().begin(), t.mutable_values().end(), 0.0);
  }
  Rng rng(2);
  std::vector<std::vector<TokenIds>> src{{random_ids(rng, 5, 13), random_ids(rng, 3, 13)}};
  std::vector<TokenIds> tgt{random_ids(rng, 4, 11), random_ids(rng, 6, 11)};
  const double loss = forward_loss(m, src, tgt).item();
  CHECK(std::abs(loss - std::log(11.0)) < 0.05 * std::log(11.0));
}

TEST_CASE("forward_loss errors") {
  Model m(small_config(2));
  std::vector<std::vector<TokenIds>> misaligned{{{4, 5}}, {{4}, {5}}};
  CHECK_THROWS_AS(forward_loss(m, misaligned, {{4}}), ContractError);
  std::vector<std::vector<TokenIds>> one_slot{{{4, 5}}};
  CHECK_THROWS_AS(forward_loss(m, one_slot, {{4}}), ContractError);
  std::vector<std::vector<TokenIds>> ok{{{4, 5}}, {{6}}};
  CHECK_THROWS_AS(forward_loss(m, ok, {TokenIds(24, 4)}), LengthError);
  CHECK_THROWS_AS(forward_loss(m, ok, {{11}}), IndexError);
}

TEST_CASE("gate bias receives gradient") {
  Model m(small_config(2));
  Rng rng(8);
  std::vector<std::vector<TokenIds>> src{{random_ids(rng, 5, 13)}, {random_ids(rng, 6, 13)}};
  std::vector<TokenIds> tgt{random_ids(rng, 4, 11)};
  m.zero_grad();
  backward(forward_loss(m, src, tgt));
  for (std::size_t l = 0; l < 2; ++l) {
    const auto& b = m.gates(l)[0].bias;
    REQUIRE(b.has_grad());
    double norm = 0.0;
    for (double g : b.grad()) norm += g * g;
    CHECK(norm > 0.0);
  }
}

TEST_CASE("end-to-end gradients match finite differences") {
  Model m(small_config(2));
  Rng rng(17);
  // Push gates off their symmetric point so the check exercises them.
  for (std::size_t l = 0; l < 2; ++l) {
    auto b = m.gates(l)[0].bias;
    for (auto& v : b.mutable_values()) v = rng.uniform(-0.5, 0.5);
  }
  std::vector<std::vector<TokenIds>> src{{random_ids(rng, 5, 13), random_ids(rng, 3, 13)},
                                         {random_ids(rng, 4, 13), random_ids(rng, 6, 13)}};
  std::vector<TokenIds> tgt{random_ids(rng, 4, 11), random_ids(rng, 2, 11)};
  LossOptions opt;
  opt.wait_k = 2;
  opt.label_smoothing = 0.1;

  std::vector<Tensor> inputs;
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  std::size_t gate_coords = 0;
  for (const auto& p : m.parameters()) {
    const std::size_t idx = inputs.size();
    inputs.push_back(p.tensor);
    const bool gate = p.name.find("gate") != std::string::npos;
    const std::size_t take = gate ? 12 : 4;
    for (std::size_t j = 0; j < take; ++j) {
      coords.emplace_back(idx, rng.below(p.tensor.numel()));
      if (gate) ++gate_coords;
    }
  }
  REQUIRE(coords.size() >= 200);
  REQUIRE(gate_coords >= 40);
  auto res = grad_check([&] { return forward_loss(m, src, tgt, opt); }, inputs, 1e-5, coords);
  INFO(res.worst_where);
  CHECK(res.worst_rel < 1e-3);
}

TEST_CASE("greedy decode rules") {
  Model m(small_config());
  auto w = param(m, "dec.out.w");
  auto b = param(m, "dec.out.b");
  std::fill(w.mutable_values().begin(), w.mutable_values().end(), 0.0);
  std::fill(b.mutable_values().begin(), b.mutable_values().end(), 0.0);
  b.mutable_values()[kEos] = 5.0;
  auto e = encode(m, TokenIds{4, 5, 6});
  auto r = greedy_decode(m, std::span<const EncoderStates>(&e, 1), 10);
  CHECK(r.tokens.empty());
  CHECK_FALSE(r.truncated);

  std::vector<double> tie(20, 0.0);
  tie[7] = 3.0;
  tie[12] = 3.0;
  CHECK(argmax_token(tie) == 7);

  Model fresh(small_config());
  auto e2 = encode(fresh, TokenIds{4, 9, 6, 7});
  auto r1 = greedy_decode(fresh, std::span<const EncoderStates>(&e2, 1), 6);
  auto r2 = greedy_decode(fresh, std::span<const EncoderStates>(&e2, 1), 6);
  CHECK(r1.tokens == r2.tokens);
  CHECK(r1.truncated == r2.truncated);

  std::fill(b.mutable_values().begin(), b.mutable_values().end(), 0.0);
  b.mutable_values()[5] = 5.0;
  auto t = greedy_decode(m, std::span<const EncoderStates>(&e, 1), 4);
  CHECK(t.tokens == TokenIds{5, 5, 5, 5});
  CHECK(t.truncated);
}

TEST_CASE("incremental session is bit-identical to full recomputation") {
  Model m(small_config(2));
  Rng rng(44);
  for (int trial = 0; trial < 4; ++trial) {
    auto x = random_ids(rng, 7, 13);
    auto y = random_ids(rng, 4, 13);
    DecoderSession session(m);
    TokenIds prefix{kBos};
    Visibility vis(2);
    std::size_t fed_x = 0, fed_y = 0;
    for (int step = 0; step < 8; ++step) {
      // Feed a varying number of tokens per step.
      const std::size_t want = std::min<std::size_t>(x.size(), 2 + static_cast<std::size_t>(step));
      while (fed_x < want) session.append_source(0, x[fed_x++]);
      if (fed_y < y.size() && step % 2 == 0) session.append_source(1, y[fed_y++]);
      vis[0].push_back(fed_x);
      vis[1].push_back(fed_y);
      auto full = std::vector<EncoderStates>{encode(m, x, 0), encode(m, y, 1)};
      auto a = session.next_logits();
      auto b = decode_step(m, full, prefix, &vis);
      CHECK(max_abs_diff(a, b) == 0.0);
      const int tok = argmax_token(a);
      session.advance(tok);
      prefix.push_back(tok);
    }
    auto partial = encode(m, std::span<const int>(x.data(), fed_x), 0);
    CHECK(max_abs_diff(session.source_states(0).states.values(), partial.states.values()) == 0.0);
  }
}

TEST_CASE("session contract checks") {
  Model bidir(small_config(1, false));
  DecoderSession s(bidir);
  CHECK_THROWS_AS(s.append_source(0, 4), ConfigError);

  Model m(small_config());
  DecoderSession t(m);
  CHECK_THROWS_AS(t.next_logits(), ContractError);
  t.append_source(0, 4);
  CHECK_THROWS_AS(t.append_source(0, 99), IndexError);
  CHECK_THROWS_AS(t.advance(4), ContractError);
  t.next_logits();
  CHECK_THROWS_AS(t.next_logits(), ContractError);
}

TEST_CASE("clone and snapshot round-trip") {
  Model m(small_config(2));
  Model c = m.clone();
  CHECK(c.snapshot() == m.snapshot());
  auto w = param(c, "dec.out.b");
  w.mutable_values()[0] += 1.0;
  CHECK(c.snapshot() != m.snapshot());
  auto snap = m.snapshot();
  snap.pop_back();
  CHECK_THROWS_AS(c.load_snapshot(snap), ShapeError);
}
