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

// Layers shared by the encoder and decoder.

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ctcbridge/autodiff.hpp"

namespace ctcbridge {

// Normal(0, scale^2) init from a dedicated stream.
inline Tensor random_normal(Shape shape, double scale, Rng rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<float>(scale * rng.normal());
  return t;
}

struct Linear {
  Parameter weight;  // [in, out]
  Parameter bias;    // [out], empty when unused

  Linear() = default;
  Linear(const std::string& name, std::size_t in, std::size_t out, Rng rng, bool with_bias = true)
      : weight(name + ".w", random_normal({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng)) {
    if (with_bias) bias = Parameter(name + ".b", Tensor({out}));
  }

  bool has_bias() const { return bias.value.size() > 0; }

  template <typename T>
  Var<T> operator()(BasicTape<T>& tape, Var<T> x) const {
    Var<T> y = ad::matmul(x, tape.param(weight));
    return has_bias() ? ad::add_bias(y, tape.param(bias)) : y;
  }

  void collect(std::vector<Parameter*>& out) {
    out.push_back(&weight);
    if (has_bias()) out.push_back(&bias);
  }
};

struct LayerNorm {
  Parameter gain, bias;

  LayerNorm() = default;
  LayerNorm(const std::string& name, std::size_t dim)
      : gain(name + ".g", Tensor({dim})), bias(name + ".b", Tensor({dim})) {
    gain.value.fill(1.0f);
  }

  template <typename T>
  Var<T> operator()(BasicTape<T>& tape, Var<T> x) const {
    return ad::layer_norm(x, tape.param(gain), tape.param(bias));
  }

  void collect(std::vector<Parameter*>& out) {
    out.push_back(&gain);
    out.push_back(&bias);
  }
};

// Multi-head self-attention over rows of x[N, d] with a fused [d, 3d]
// projection. With causal set, row i sees rows 0..i.
template <typename T>
Var<T> self_attention(BasicTape<T>& tape, Var<T> x, const Linear& qkv, const Linear& out, std::size_t heads,
                      bool causal) {
  const std::size_t d = x.cols();
  CTCB_REQUIRE(heads >= 1 && d % heads == 0, "attention: width not divisible by heads");
  const std::size_t dh = d / heads;
  Var<T> proj = qkv(tape, x);
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var<T>> parts;
  parts.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Var<T> q = ad::slice_cols(proj, h * dh, (h + 1) * dh);
    Var<T> k = ad::slice_cols(proj, d + h * dh, d + (h + 1) * dh);
    Var<T> v = ad::slice_cols(proj, 2 * d + h * dh, 2 * d + (h + 1) * dh);
    Var<T> scores = ad::scale(ad::matmul_nt(q, k), inv);
    Var<T> p = causal ? ad::causal_softmax(scores) : ad::softmax(scores);
    parts.push_back(ad::matmul(p, v));
  }
  Var<T> mixed = heads == 1 ? parts[0] : ad::concat_cols(parts);
  return out(tape, mixed);
}

// Hash over names, shapes and value bytes; used to prove weights did not move.
std::uint64_t parameter_hash(const std::vector<const Parameter*>& params);

}  // namespace ctcbridge
