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

#include "ctcbridge/encoder.hpp"

#include <cstring>

#include "json.hpp"

namespace ctcbridge {

namespace {
constexpr std::size_t kKernel = 3;
}  // namespace

std::string EncoderConfig::to_json() const {
  nlohmann::json j;
  j["input_dim"] = input_dim;
  j["hidden"] = hidden;
  j["mlp_hidden"] = mlp_hidden;
  j["blocks"] = blocks;
  j["seed"] = seed;
  return j.dump();
}

EncoderConfig EncoderConfig::from_json(const std::string& text) {
  EncoderConfig c;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("encoder config: ") + e.what());
  }
  c.input_dim = j.value("input_dim", c.input_dim);
  c.hidden = j.value("hidden", c.hidden);
  c.mlp_hidden = j.value("mlp_hidden", c.mlp_hidden);
  c.blocks = j.value("blocks", c.blocks);
  c.seed = j.value("seed", c.seed);
  if (c.input_dim == 0 || c.hidden == 0 || c.mlp_hidden == 0)
    throw DomainError("encoder config: dimensions must be positive");
  return c;
}

SpeechEncoder::SpeechEncoder(EncoderConfig cfg, Vocabulary vocab) : cfg_(cfg), vocab_(std::move(vocab)) {
  Rng root = Rng(cfg_.seed).split(0x454E43);
  const std::size_t h = cfg_.hidden;
  sub1_ = Linear("encoder.sub1", kKernel * cfg_.input_dim, h, root.split(1));
  sub2_ = Linear("encoder.sub2", kKernel * h, h, root.split(2));
  for (std::size_t b = 0; b < cfg_.blocks; ++b) {
    const std::string p = "encoder.block" + std::to_string(b);
    Rng br = root.split(100 + b);
    Block blk;
    blk.mlp_in = Linear(p + ".mlp_in", h, cfg_.mlp_hidden, br.split(1));
    blk.mlp_out = Linear(p + ".mlp_out", cfg_.mlp_hidden, h, br.split(2));
    blk.qkv = Linear(p + ".qkv", h, 3 * h, br.split(3));
    blk.attn_out = Linear(p + ".attn_out", h, h, br.split(4));
    blk.ln_mlp = LayerNorm(p + ".ln_mlp", h);
    blk.ln_attn = LayerNorm(p + ".ln_attn", h);
    blocks_.push_back(std::move(blk));
  }
  out_ = Linear("encoder.out", h, classes(), root.split(3));
}

template <typename T>
Var<T> SpeechEncoder::hidden(BasicTape<T>& tape, const BasicTensor<T>& frames, Rng* rng, double dropout) const {
  CTCB_REQUIRE(frames.rank() == 2 && frames.cols() == cfg_.input_dim,
               "encode: expected frames [T, " + std::to_string(cfg_.input_dim) + "], got " +
                   shape_str(frames.shape()));
  CTCB_REQUIRE(frames.rows() >= kSubsample, "encode: need at least 4 frames, got " + std::to_string(frames.rows()));
  auto drop = [&](Var<T> v) { return (rng && dropout > 0.0) ? ad::dropout(v, dropout, *rng) : v; };
  Var<T> x = tape.constant(frames);
  x = ad::gelu(sub1_(tape, ad::frame_stack(x, kKernel, 2)));
  x = ad::gelu(sub2_(tape, ad::frame_stack(x, kKernel, 2)));
  for (const Block& b : blocks_) {
    Var<T> m = b.mlp_out(tape, ad::gelu(b.mlp_in(tape, x)));
    x = b.ln_mlp(tape, ad::add(x, drop(m)));
    Var<T> a = self_attention(tape, x, b.qkv, b.attn_out, 1, false);
    x = b.ln_attn(tape, ad::add(x, drop(a)));
  }
  return x;
}

template <typename T>
Var<T> SpeechEncoder::forward(BasicTape<T>& tape, const BasicTensor<T>& frames, Rng* rng, double dropout) const {
  return out_(tape, hidden(tape, frames, rng, dropout));
}

LogitGram SpeechEncoder::encode(const Tensor& frames) const {
  Tape tape;
  tape.no_grad = true;
  return LogitGram(forward(tape, frames).value());
}

Tensor SpeechEncoder::encode_hidden(const Tensor& frames) const {
  Tape tape;
  tape.no_grad = true;
  return hidden(tape, frames).value();
}

std::vector<Parameter*> SpeechEncoder::parameters() {
  std::vector<Parameter*> ps;
  sub1_.collect(ps);
  sub2_.collect(ps);
  for (Block& b : blocks_) {
    b.mlp_in.collect(ps);
    b.mlp_out.collect(ps);
    b.ln_mlp.collect(ps);
    b.qkv.collect(ps);
    b.attn_out.collect(ps);
    b.ln_attn.collect(ps);
  }
  out_.collect(ps);
  return ps;
}

std::vector<const Parameter*> SpeechEncoder::parameters() const {
  auto ps = const_cast<SpeechEncoder*>(this)->parameters();
  return {ps.begin(), ps.end()};
}

void SpeechEncoder::set_trainable(bool on) {
  for (Parameter* p : parameters()) p->trainable = on;
}

template Var<float> SpeechEncoder::hidden(BasicTape<float>&, const Tensor&, Rng*, double) const;
template Var<double> SpeechEncoder::hidden(BasicTape<double>&, const BasicTensor<double>&, Rng*, double) const;
template Var<float> SpeechEncoder::forward(BasicTape<float>&, const Tensor&, Rng*, double) const;
template Var<double> SpeechEncoder::forward(BasicTape<double>&, const BasicTensor<double>&, Rng*, double) const;

std::uint64_t parameter_hash(const std::vector<const Parameter*>& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const Parameter* p : params) {
    mix(p->name.data(), p->name.size());
    for (std::size_t d : p->value.shape()) mix(&d, sizeof d);
    mix(p->value.data(), p->value.size() * sizeof(float));
  }
  return h;
}

}  // namespace ctcbridge
