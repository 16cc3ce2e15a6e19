#pragma once

#include <algorithm>
#include <map>
#include <string>

#include "doctest.h"
#include "pivotmt/rng.hpp"
#include "pivotmt/transformer.hpp"

namespace pivotmt::testing {

inline ModelConfig tiny_config(std::size_t num_encoders = 1, std::uint64_t seed = 7) {
  ModelConfig c;
  c.num_encoders = num_encoders;
  c.layers = 2;
  c.heads = 2;
  c.hidden = 16;
  c.ff = 32;
  c.src_vocab = 12;
  c.tgt_vocab = 12;
  c.dropout = 0.0;
  c.max_len = 40;
  c.seed = seed;
  return c;
}

inline Tensor find_param(const Model& m, const std::string& name) {
  for (const auto& p : m.parameters())
    if (p.name == name) return p.tensor;
  FAIL("no parameter " << name);
  return {};
}

// Scales every weight so untrained models produce varied, confident outputs.
inline void sharpen(Model& m, double factor) {
  for (const auto& p : m.parameters()) {
    Tensor t = p.tensor;
    for (auto& v : t.mutable_values()) v *= factor;
  }
}

// Output layer pushes EOS far below every other token.
inline void suppress_eos(Model& m) {
  auto b = find_param(m, "dec.out.b");
  b.mutable_values()[kEos] = -1e6;
}

// Copies every parameter of `from` into the same-named parameter of `to`.
inline void copy_shared(const Model& from, const Model& to) {
  std::map<std::string, Tensor> by_name;
  for (const auto& p : to.parameters()) by_name[p.name] = p.tensor;
  for (const auto& p : from.parameters()) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) continue;
    auto dst = it->second.mutable_values();
    std::copy(p.tensor.values().begin(), p.tensor.values().end(), dst.begin());
  }
}

inline TokenIds random_tokens(Rng& rng, std::size_t len, std::size_t vocab) {
  TokenIds ids(len);
  for (auto& id : ids) id = kNumReserved + static_cast<int>(rng.below(vocab - kNumReserved));
  return ids;
}

}  // namespace pivotmt::testing
