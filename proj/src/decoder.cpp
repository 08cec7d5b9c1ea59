// Copyright 2026 The ctcbridge Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "ctcbridge/decoder.hpp"

#include <cmath>

#include "json.hpp"

namespace ctcbridge {

std::string DecoderConfig::to_json() const {
  nlohmann::json j;
  j["dim"] = dim;
  j["heads"] = heads;
  j["blocks"] = blocks;
  j["mlp_hidden"] = mlp_hidden;
  j["max_positions"] = max_positions;
  j["tied"] = tied;
  j["seed"] = seed;
  return j.dump();
}

DecoderConfig DecoderConfig::from_json(const std::string& text) {
  DecoderConfig c;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("decoder config: ") + e.what());
  }
  c.dim = j.value("dim", c.dim);
  c.heads = j.value("heads", c.heads);
  c.blocks = j.value("blocks", c.blocks);
  c.mlp_hidden = j.value("mlp_hidden", c.mlp_hidden);
  c.max_positions = j.value("max_positions", c.max_positions);
  c.tied = j.value("tied", c.tied);
  c.seed = j.value("seed", c.seed);
  if (c.dim == 0 || c.heads == 0 || c.dim % c.heads != 0)
    throw DomainError("decoder config: dim must be a positive multiple of heads");
  if (c.max_positions < 2) throw DomainError("decoder config: max_positions must be at least 2");
  return c;
}

DecoderLM::DecoderLM(DecoderConfig cfg, Vocabulary vocab) : cfg_(cfg), vocab_(std::move(vocab)) {
  Rng root = Rng(cfg_.seed).split(0x444543);
  const std::size_t d = cfg_.dim, v = vocab_.size();
  embed_ = Parameter("decoder.embed", random_normal({v + 1, d}, 1.0 / std::sqrt(static_cast<double>(d)), root.split(1)));
  pos_ = Parameter("decoder.pos", random_normal({cfg_.max_positions, d}, 0.1, root.split(2)));
  for (std::size_t b = 0; b < cfg_.blocks; ++b) {
    const std::string p = "decoder.block" + std::to_string(b);
    Rng br = root.split(100 + b);
    Block blk;
    blk.ln_attn = LayerNorm(p + ".ln_attn", d);
    blk.ln_mlp = LayerNorm(p + ".ln_mlp", d);
    blk.qkv = Linear(p + ".qkv", d, 3 * d, br.split(1));
    blk.attn_out = Linear(p + ".attn_out", d, d, br.split(2));
    blk.mlp_in = Linear(p + ".mlp_in", d, cfg_.mlp_hidden, br.split(3));
    blk.mlp_out = Linear(p + ".mlp_out", cfg_.mlp_hidden, d, br.split(4));
    blocks_.push_back(std::move(blk));
  }
  ln_final_ = LayerNorm("decoder.ln_final", d);
  if (!cfg_.tied) head_ = Linear("decoder.head", d, v, root.split(3), false);
}

template <typename T>
Var<T> DecoderLM::forward(BasicTape<T>& tape, Var<T> prefix, const TokenSeq& text, Rng* rng, double dropout) const {
  CTCB_REQUIRE(!text.empty() && text.ids.front() == vocab_.bos_id(), "lm_forward: text must begin with bos");
  const std::size_t p = prefix.valid() ? prefix.rows() : 0;
  const std::size_t n = p + text.size();
  CTCB_REQUIRE(n <= cfg_.max_positions, "lm_forward: sequence length " + std::to_string(n) +
                                            " exceeds max_positions " + std::to_string(cfg_.max_positions));
  if (prefix.valid())
    CTCB_REQUIRE(prefix.cols() == cfg_.dim, "lm_forward: prefix width " + std::to_string(prefix.cols()) +
                                                " != model dim " + std::to_string(cfg_.dim));
  for (int id : text.ids)
    CTCB_REQUIRE(id >= 0 && static_cast<std::size_t>(id) < vocab_.size(), "lm_forward: text id out of range");

  auto drop = [&](Var<T> v) { return (rng && dropout > 0.0) ? ad::dropout(v, dropout, *rng) : v; };
  Var<T> table = tape.param(embed_);
  Var<T> x = ad::gather_rows(table, text.ids);
  if (p > 0) x = ad::concat_rows(std::vector<Var<T>>{prefix, x});
  x = drop(ad::add(x, ad::slice_rows(tape.param(pos_), 0, n)));
  for (const Block& b : blocks_) {
    Var<T> a = self_attention(tape, b.ln_attn(tape, x), b.qkv, b.attn_out, cfg_.heads, true);
    x = ad::add(x, drop(a));
    Var<T> m = b.mlp_out(tape, ad::gelu(b.mlp_in(tape, b.ln_mlp(tape, x))));
    x = ad::add(x, drop(m));
  }
  Var<T> h = ad::slice_rows(ln_final_(tape, x), p, n);
  if (!cfg_.tied) return head_(tape, h);
  return ad::matmul_nt(h, ad::slice_rows(table, 0, vocab_.size()));
}

std::vector<Parameter*> DecoderLM::parameters() {
  std::vector<Parameter*> ps{&embed_, &pos_};
  for (Block& b : blocks_) {
    b.ln_attn.collect(ps);
    b.qkv.collect(ps);
    b.attn_out.collect(ps);
    b.ln_mlp.collect(ps);
    b.mlp_in.collect(ps);
    b.mlp_out.collect(ps);
  }
  ln_final_.collect(ps);
  if (!cfg_.tied) head_.collect(ps);
  return ps;
}

std::vector<const Parameter*> DecoderLM::parameters() const {
  auto ps = const_cast<DecoderLM*>(this)->parameters();
  return {ps.begin(), ps.end()};
}

void DecoderLM::set_trainable(bool on) {
  for (Parameter* p : parameters()) p->trainable = on;
}

template Var<float> DecoderLM::forward(BasicTape<float>&, Var<float>, const TokenSeq&, Rng*, double) const;
template Var<double> DecoderLM::forward(BasicTape<double>&, Var<double>, const TokenSeq&, Rng*, double) const;

}  // namespace ctcbridge
