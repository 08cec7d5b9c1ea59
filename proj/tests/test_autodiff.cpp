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

#include <cmath>
#include <utility>

#include "ctcbridge/autodiff.hpp"
#include "ctcbridge/ctc.hpp"
#include "doctest.h"
#include "helpers.hpp"

namespace ctcbridge {
namespace {

using testing::random_tensor;
using testing::weighted_sum;
using DTensor = BasicTensor<double>;
using DTape = BasicTape<double>;
using Fn = std::function<Var<double>(DTape&, Var<double>)>;

double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

TEST_CASE("softmax with temperature: closed forms") {
  DTensor z({1, 3}, std::vector<double>{0, 0, 0});
  auto p = kernels::softmax_rows(z, 1.0);
  for (int i = 0; i < 3; ++i) CHECK(p[i] == doctest::Approx(1.0 / 3).epsilon(1e-12));

  DTensor z2({1, 2}, std::vector<double>{0, std::log(4.0)});
  auto p2 = kernels::softmax_rows(z2, 0.5);
  CHECK(p2[0] == doctest::Approx(1.0 / 17).epsilon(1e-12));
  CHECK(p2[1] == doctest::Approx(16.0 / 17).epsilon(1e-12));

  Tensor z3({1, 3}, std::vector<float>{5, -2, 9});
  auto p3 = kernels::softmax_rows(z3, 1e6);
  for (int i = 0; i < 3; ++i) CHECK(std::abs(p3[i] - 1.0 / 3) < 1e-5);
}

TEST_CASE("softmax rejects non-positive temperature") {
  Tensor z({1, 2});
  CHECK_THROWS_AS(kernels::softmax_rows(z, 0.0), DomainError);
  CHECK_THROWS_AS(kernels::softmax_rows(z, -1.0), DomainError);
}

TEST_CASE("property: softmax rows sum to one across the temperature range") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor z = random_tensor<float>({4, 7}, rng, 20.0);
    for (double tau : {1e-4, 1e-2, 0.5, 1.0, 3.0, 1e2, 1e4}) {
      Tensor p = kernels::softmax_rows(z, tau);
      for (std::size_t r = 0; r < p.rows(); ++r) {
        double s = 0.0;
        for (float v : p.row(r)) {
          CHECK(v >= 0.0f);
          s += v;
        }
        CHECK(std::abs(s - 1.0) < 1e-6);
      }
    }
  }
}

TEST_CASE("property: softmax entropy is non-decreasing in temperature") {
  Rng rng(12);
  const std::vector<double> grid{1e-4, 0.1, 0.3, 0.5, 0.8, 1.0, 1.3, 2.0, 5.0, 20.0, 1e4};
  for (int trial = 0; trial < 100; ++trial) {
    DTensor z = random_tensor<double>({1, 6}, rng, 3.0);
    double prev = -1.0;
    for (double tau : grid) {
      DTensor p = kernels::softmax_rows(z, tau);
      const double h = entropy(p.values());
      CHECK(h >= prev - 1e-12);
      prev = h;
    }
  }
}

TEST_CASE("property: logsumexp is shift invariant") {
  Rng rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    DTensor z = random_tensor<double>({8}, rng, 10.0);
    const double c = 50.0 * rng.normal();
    DTensor zc = z;
    for (auto& v : zc.values()) v -= c;
    CHECK(kernels::logsumexp(std::as_const(z).values()) ==
          doctest::Approx(kernels::logsumexp(std::as_const(zc).values()) + c).epsilon(1e-12));
  }
}

TEST_CASE("backward: x*x at 3 has gradient 6") {
  Tape tape;
  Var<float> x = tape.variable(Tensor::scalar(3.0f));
  Var<float> loss = ad::sum(ad::mul(x, x));
  tape.backward(loss);
  CHECK(tape.grad(x)[0] == doctest::Approx(6.0));
}

TEST_CASE("backward: cross entropy gradient is p - y") {
  DTape tape;
  DTensor z({1, 4}, std::vector<double>{0.3, -1.2, 2.0, 0.1});
  Var<double> zv = tape.variable(z);
  tape.backward(ad::cross_entropy(zv, {2}, ad::Reduction::kSum));
  DTensor p = kernels::softmax_rows(z, 1.0);
  const DTensor& g = tape.grad(zv);
  for (int j = 0; j < 4; ++j) CHECK(g[j] == doctest::Approx(p[j] - (j == 2 ? 1.0 : 0.0)).epsilon(1e-12));
}

TEST_CASE("backward: random 3-layer MLP matches central differences") {
  Rng rng(14);
  const DTensor x = random_tensor<double>({5, 4}, rng);
  const DTensor w1 = random_tensor<double>({4, 6}, rng, 0.5);
  const DTensor w2 = random_tensor<double>({6, 6}, rng, 0.5);
  const DTensor w3 = random_tensor<double>({6, 3}, rng, 0.5);
  const DTensor b1 = random_tensor<double>({6}, rng, 0.1);
  auto mlp = [&](DTape& t, Var<double> w, int which) {
    Var<double> a = t.constant(w1), c = t.constant(w2), d = t.constant(w3);
    if (which == 0) a = w;
    if (which == 1) c = w;
    if (which == 2) d = w;
    Var<double> h = ad::tanh(ad::add_bias(ad::matmul(t.constant(x), a), t.constant(b1)));
    h = ad::gelu(ad::matmul(h, c));
    return ad::cross_entropy(ad::matmul(h, d), {0, 1, 2, 1, 0});
  };
  CHECK(finite_diff_check<double>([&](DTape& t, Var<double> w) { return mlp(t, w, 0); }, w1, 1e-4) < 1e-3);
  CHECK(finite_diff_check<double>([&](DTape& t, Var<double> w) { return mlp(t, w, 1); }, w2, 1e-4) < 1e-3);
  CHECK(finite_diff_check<double>([&](DTape& t, Var<double> w) { return mlp(t, w, 2); }, w3, 1e-4) < 1e-3);
}

TEST_CASE("finite_diff_check: reference functions") {
  Rng rng(15);
  DTensor x = random_tensor<double>({3, 4}, rng);
  CHECK(finite_diff_check<double>([](DTape&, Var<double> v) { return ad::sum(v); }, x, 1e-4) < 1e-7);

  DTensor zero({1, 2});
  {
    DTape tape;
    Var<double> v = tape.variable(zero);
    tape.backward(ad::sum(ad::logsumexp_rows(v)));
    CHECK(tape.grad(v)[0] == doctest::Approx(0.5));
    CHECK(tape.grad(v)[1] == doctest::Approx(0.5));
  }
  CHECK(finite_diff_check<double>([](DTape&, Var<double> v) { return ad::sum(ad::logsumexp_rows(v)); }, zero,
                                  1e-4) < 1e-5);

  DTensor z = random_tensor<double>({4, 3}, rng);
  TokenSeq y{{0, 1}};
  CHECK(finite_diff_check<double>([&](DTape&, Var<double> v) { return ctc_loss(v, y).loss; }, z, 1e-4) < 1e-3);
}

TEST_CASE("finite_diff_check rejects steps outside [1e-6, 1e-2]") {
  DTensor x({2});
  Fn f = [](DTape&, Var<double> v) { return ad::sum(v); };
  CHECK_THROWS_AS(finite_diff_check<double>(f, x, 1e-7), DomainError);
  CHECK_THROWS_AS(finite_diff_check<double>(f, x, 0.1), DomainError);
}

// Every composite op the models use, through a random linear read-out.
TEST_CASE("property: every op's backward matches central differences") {
  Rng rng(16);
  const DTensor a = random_tensor<double>({4, 6}, rng);
  const DTensor b = random_tensor<double>({4, 6}, rng);
  const DTensor m = random_tensor<double>({6, 3}, rng);
  const DTensor bias = random_tensor<double>({6}, rng);
  const DTensor gain = random_tensor<double>({6}, rng);
  auto C = [](DTape& t, const DTensor& v) { return t.constant(v); };
  const std::vector<std::pair<const char*, Fn>> cases = {
      {"add", [&](DTape& t, Var<double> x) { return weighted_sum(ad::add(x, C(t, b)), 1); }},
      {"sub", [&](DTape& t, Var<double> x) { return weighted_sum(ad::sub(C(t, b), x), 2); }},
      {"mul", [&](DTape&, Var<double> x) { return weighted_sum(ad::mul(x, x), 3); }},
      {"scale", [&](DTape&, Var<double> x) { return weighted_sum(ad::scale(x, -2.5), 4); }},
      {"add_bias", [&](DTape& t, Var<double> x) { return weighted_sum(ad::add_bias(x, C(t, bias)), 5); }},
      {"matmul", [&](DTape& t, Var<double> x) { return weighted_sum(ad::matmul(x, C(t, m)), 6); }},
      {"matmul_nt", [&](DTape& t, Var<double> x) { return weighted_sum(ad::matmul_nt(x, C(t, b)), 7); }},
      {"matmul_nt self", [&](DTape&, Var<double> x) { return weighted_sum(ad::matmul_nt(x, x), 8); }},
      {"tanh", [&](DTape&, Var<double> x) { return weighted_sum(ad::tanh(x), 9); }},
      {"relu", [&](DTape& t, Var<double> x) { return weighted_sum(ad::relu(ad::add(x, C(t, b))), 10); }},
      {"gelu", [&](DTape&, Var<double> x) { return weighted_sum(ad::gelu(x), 11); }},
      {"reshape", [&](DTape&, Var<double> x) { return weighted_sum(ad::reshape(x, {8, 3}), 12); }},
      {"gather_rows", [&](DTape&, Var<double> x) { return weighted_sum(ad::gather_rows(x, {3, 0, 3, 1}), 13); }},
      {"slice_rows", [&](DTape&, Var<double> x) { return weighted_sum(ad::slice_rows(x, 1, 3), 14); }},
      {"slice_cols", [&](DTape&, Var<double> x) { return weighted_sum(ad::slice_cols(x, 2, 5), 15); }},
      {"concat_rows", [&](DTape& t, Var<double> x) { return weighted_sum(ad::concat_rows<double>({x, C(t, b), x}), 16); }},
      {"concat_cols", [&](DTape& t, Var<double> x) { return weighted_sum(ad::concat_cols<double>({C(t, b), x}), 17); }},
      {"layer_norm", [&](DTape& t, Var<double> x) { return weighted_sum(ad::layer_norm(x, C(t, gain), C(t, bias)), 18); }},
      {"softmax", [&](DTape&, Var<double> x) { return weighted_sum(ad::softmax(x), 19); }},
      {"softmax tau", [&](DTape&, Var<double> x) { return weighted_sum(ad::softmax(x, 0.7), 20); }},
      {"causal_softmax", [&](DTape&, Var<double> x) { return weighted_sum(ad::causal_softmax(x, 1), 21); }},
      {"log_softmax", [&](DTape&, Var<double> x) { return weighted_sum(ad::log_softmax(x), 22); }},
      {"logsumexp_rows", [&](DTape&, Var<double> x) { return weighted_sum(ad::logsumexp_rows(x), 23); }},
      {"cross_entropy", [&](DTape&, Var<double> x) { return ad::cross_entropy(x, {0, 5, 2, 2}); }},
      {"mean", [&](DTape&, Var<double> x) { return ad::mean(ad::mul(x, x)); }},
      {"frame_stack", [&](DTape&, Var<double> x) { return weighted_sum(ad::frame_stack(x, 3, 2), 24); }},
  };
  for (const auto& [name, f] : cases) {
    CAPTURE(name);
    CHECK(finite_diff_check<double>(f, a, 1e-4) < 1e-3);
  }
}

TEST_CASE("layer norm gradients w.r.t. gain and bias") {
  Rng rng(17);
  const DTensor x = random_tensor<double>({3, 5}, rng);
  const DTensor g = random_tensor<double>({5}, rng);
  CHECK(finite_diff_check<double>(
            [&](DTape& t, Var<double> v) { return weighted_sum(ad::layer_norm(t.constant(x), v, t.constant(g)), 1); },
            g, 1e-4) < 1e-3);
  CHECK(finite_diff_check<double>(
            [&](DTape& t, Var<double> v) { return weighted_sum(ad::layer_norm(t.constant(x), t.constant(g), v), 2); },
            g, 1e-4) < 1e-3);
}

TEST_CASE("dropout is the identity outside training and rescales kept entries") {
  Rng rng(18);
  Tape tape;
  Var<float> x = tape.constant(Tensor({2, 50}, 1.0f));
  CHECK(ad::dropout(x, 0.5, rng).value() == x.value());
  tape.training = true;
  Tensor y = ad::dropout(x, 0.25, rng).value();
  for (float v : y.values()) CHECK((v == 0.0f || v == doctest::Approx(1.0 / 0.75)));
}

TEST_CASE("parameters accumulate gradients and respect the frozen flag") {
  Parameter w("w", Tensor({2}, std::vector<float>{1.0f, 2.0f}));
  Parameter frozen("f", Tensor({2}, std::vector<float>{3.0f, 4.0f}), false);
  for (int rep = 0; rep < 2; ++rep) {
    Tape tape;
    tape.backward(ad::sum(ad::mul(tape.param(w), tape.param(frozen))));
  }
  CHECK(w.grad[0] == doctest::Approx(6.0));
  CHECK(w.grad[1] == doctest::Approx(8.0));
  CHECK(frozen.grad[0] == 0.0f);

  Tape nog;
  nog.no_grad = true;
  Var<float> v = nog.param(w);
  CHECK_FALSE(nog.requires_grad(v));
}

TEST_CASE("tape misuse is a contract violation") {
  Tape a, b;
  Var<float> x = a.variable(Tensor({2}));
  Var<float> y = b.variable(Tensor({2}));
  CHECK_THROWS_AS(ad::add(x, y), ContractViolation);
  CHECK_THROWS_AS(a.backward(x), ContractViolation);
  CHECK_THROWS_AS(ad::matmul(a.variable(Tensor({2, 3})), a.variable(Tensor({2, 3}))), ContractViolation);
}

}  // namespace
}  // namespace ctcbridge
