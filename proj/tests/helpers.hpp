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

// Shared helpers for the unit tests.

#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "ctcbridge/autodiff.hpp"
#include "ctcbridge/ctc.hpp"
#include "ctcbridge/lexicon.hpp"
#include "ctcbridge/rng.hpp"

namespace ctcbridge::testing {

template <typename T = float>
BasicTensor<T> random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  BasicTensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(scale * rng.normal());
  return t;
}

inline LogitGram random_gram(std::size_t frames, std::size_t classes, Rng& rng, double scale = 1.0) {
  return LogitGram(random_tensor<float>({frames, classes}, rng, scale));
}

// softmax(z) row by row in double precision.
inline std::vector<std::vector<double>> softmax_ref(const Tensor& z) {
  std::vector<std::vector<double>> out(z.rows(), std::vector<double>(z.cols()));
  for (std::size_t r = 0; r < z.rows(); ++r) {
    double mx = -1e300, s = 0.0;
    for (std::size_t c = 0; c < z.cols(); ++c) mx = std::max(mx, static_cast<double>(z(r, c)));
    for (std::size_t c = 0; c < z.cols(); ++c) s += std::exp(z(r, c) - mx);
    for (std::size_t c = 0; c < z.cols(); ++c) out[r][c] = std::exp(z(r, c) - mx) / s;
  }
  return out;
}

// Probability of a frame path under per-frame softmax of z.
inline double path_prob(const Tensor& z, const Alignment& a) {
  const auto p = softmax_ref(z);
  double prob = 1.0;
  for (std::size_t t = 0; t < a.path.size(); ++t) prob *= p[t][a.path[t]];
  return prob;
}

// Reduces any tensor to a scalar with fixed random weights so every
// coordinate of a backward pass gets exercised.
template <typename T>
Var<T> weighted_sum(Var<T> x, std::uint64_t seed) {
  Rng rng(seed);
  BasicTensor<T> w(x.shape());
  for (auto& v : w.values()) v = static_cast<T>(rng.normal());
  return ad::sum(ad::mul(x, x.tape()->constant(std::move(w))));
}

// Every label sequence over [0, v) with length <= max_len, shortest first.
inline std::vector<TokenSeq> all_label_sequences(std::size_t v, std::size_t max_len) {
  std::vector<TokenSeq> out{TokenSeq{}};
  std::size_t begin = 0;
  for (std::size_t len = 1; len <= max_len; ++len) {
    const std::size_t end = out.size();
    for (std::size_t i = begin; i < end; ++i)
      for (std::size_t k = 0; k < v; ++k) {
        TokenSeq y = out[i];
        y.ids.push_back(static_cast<int>(k));
        out.push_back(std::move(y));
      }
    begin = end;
  }
  return out;
}

// Sum over alignment_oracle paths of their probability.
inline double oracle_prob(const Tensor& z, const TokenSeq& y);

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  return m;
}

inline double oracle_prob(const Tensor& z, const TokenSeq& y) {
  double s = 0.0;
  for (const Alignment& al : alignment_oracle(y, z.rows(), z.cols() - 1)) s += path_prob(z, al);
  return s;
}

}  // namespace ctcbridge::testing
