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

#include "ctcbridge/ctc.hpp"
#include "doctest.h"
#include "helpers.hpp"

namespace ctcbridge {
namespace {

using testing::all_label_sequences;
using testing::oracle_prob;
using testing::random_gram;

Tensor one_hot_rows(const std::vector<int>& path, std::size_t classes, float hi = 40.0f) {
  Tensor z({path.size(), classes});
  for (std::size_t t = 0; t < path.size(); ++t) z(t, path[t]) = hi;
  return z;
}

Posteriorgram probs_of(const std::vector<std::vector<float>>& rows) {
  Tensor p({rows.size(), rows[0].size()});
  for (std::size_t t = 0; t < rows.size(); ++t)
    for (std::size_t k = 0; k < rows[t].size(); ++k) p(t, k) = rows[t][k];
  return Posteriorgram{p};
}

TEST_CASE("ctc loss: uniform two-frame gram over one token") {
  LogitGram z(Tensor({2, 2}));
  CHECK(ctc_loss_value(z, TokenSeq{{0}}) == doctest::Approx(-std::log(0.75)).epsilon(1e-6));
  CHECK(ctc_loss_value(z, TokenSeq{{0}}) == doctest::Approx(0.28768).epsilon(1e-5));
}

TEST_CASE("ctc loss: probability-one path costs nothing") {
  // a=0, b=1, blank=2
  LogitGram z(one_hot_rows({0, 2, 1}, 3, 200.0f));
  CHECK(std::abs(ctc_loss_value(z, TokenSeq{{0, 1}})) < 1e-9);
}

TEST_CASE("ctc loss: repeated label without room for a blank is infeasible") {
  LogitGram z(Tensor({2, 2}));
  bool feasible = true;
  CHECK(ctc_loss_value(z, TokenSeq{{0, 0}}, &feasible) == doctest::Approx(kInfeasibleCtcLoss));
  CHECK_FALSE(feasible);
  CHECK(ctc_min_frames(TokenSeq{{0, 0}}) == 3);
  CHECK(ctc_min_frames(TokenSeq{{0, 1, 1, 1}}) == 6);

  Tape tape;
  Var<float> v = tape.variable(Tensor({2, 2}, 0.3f));
  auto r = ctc_loss(v, TokenSeq{{0, 0}});
  tape.backward(r.loss);
  for (float g : tape.grad(v).values()) CHECK(g == 0.0f);
}

TEST_CASE("ctc loss rejects blank or out-of-range labels") {
  LogitGram z(Tensor({3, 3}));
  CHECK_THROWS_AS(ctc_loss_value(z, TokenSeq{{2}}), ContractViolation);
  CHECK_THROWS_AS(ctc_loss_value(z, TokenSeq{{-1}}), ContractViolation);
}

TEST_CASE("alignment oracle enumerates collapsing paths") {
  CHECK(alignment_oracle(TokenSeq{{0}}, 2, 1).size() == 3);
  auto empty = alignment_oracle(TokenSeq{}, 2, 1);
  REQUIRE(empty.size() == 1);
  CHECK(empty[0].path == std::vector<int>{1, 1});
  CHECK(alignment_oracle(TokenSeq{{0, 0}}, 2, 1).empty());
  CHECK_THROWS_AS(alignment_oracle(TokenSeq{}, 9, 2), DomainError);
  CHECK_THROWS_AS(alignment_oracle(TokenSeq{}, 3, 5), DomainError);
}

TEST_CASE("property: exp(-loss) equals the alignment oracle sum") {
  Rng rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t v = 1 + rng.below(4);
    const std::size_t frames = 1 + rng.below(6);
    const LogitGram z = random_gram(frames, v + 1, rng, 2.0);
    TokenSeq y;
    const std::size_t len = rng.below(4);
    for (std::size_t i = 0; i < len; ++i) y.ids.push_back(static_cast<int>(rng.below(v)));
    const double oracle = oracle_prob(z.logits, y);
    bool feasible = true;
    const double loss = ctc_loss_value(z, y, &feasible);
    CAPTURE(trial);
    if (oracle == 0.0) {
      CHECK_FALSE(feasible);
      continue;
    }
    CHECK(std::abs(std::exp(-loss) - oracle) <= 1e-6 * oracle);
  }
}

TEST_CASE("property: label sequence probabilities sum to one") {
  Rng rng(22);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t v = 1 + rng.below(3);
    const std::size_t frames = 1 + rng.below(4);
    const LogitGram z = random_gram(frames, v + 1, rng, 1.5);
    double total = 0.0;
    for (const TokenSeq& y : all_label_sequences(v, frames)) {
      bool feasible = true;
      const double loss = ctc_loss_value(z, y, &feasible);
      if (feasible) total += std::exp(-loss);
    }
    CHECK(std::abs(total - 1.0) < 1e-5);
  }
}

TEST_CASE("property: ctc gradient matches central differences") {
  Rng rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t v = 2 + rng.below(3);
    const std::size_t frames = 3 + rng.below(5);
    const auto z = testing::random_tensor<double>({frames, v + 1}, rng);
    TokenSeq y;
    for (std::size_t i = 0; i < 1 + rng.below(3); ++i) y.ids.push_back(static_cast<int>(rng.below(v)));
    if (ctc_min_frames(y) > frames) continue;
    CHECK(finite_diff_check<double>([&](BasicTape<double>&, Var<double> x) { return ctc_loss(x, y).loss; }, z,
                                    1e-4) < 1e-3);
  }
}

TEST_CASE("greedy decode") {
  CHECK(greedy_decode(to_posteriorgram(LogitGram(one_hot_rows({0, 2, 1}, 3)))) == TokenSeq{{0, 1}});
  CHECK(greedy_decode(to_posteriorgram(LogitGram(one_hot_rows({2, 2, 2}, 3)))) == TokenSeq{});
  CHECK(greedy_decode(to_posteriorgram(LogitGram(one_hot_rows({0, 0, 2, 0}, 3)))) == TokenSeq{{0, 0}});
}

TEST_CASE("beam search on a one-hot gram returns the greedy path with zero cost") {
  Posteriorgram p = probs_of({{1, 0, 0}, {0, 0, 1}, {0, 1, 0}});
  NBestList nb = beam_search(p, 4, 2);
  REQUIRE(!nb.hyps.empty());
  CHECK(nb.hyps[0].tokens == greedy_decode(p));
  CHECK(std::abs(nb.hyps[0].log_score) < 1e-9);
}

TEST_CASE("beam search merges prefixes that greedy keeps apart") {
  // Greedy follows blank, but "a" collects more mass over both frames.
  Posteriorgram p = probs_of({{0.3f, 0.0f, 0.7f}, {0.3f, 0.0f, 0.7f}});
  CHECK(greedy_decode(p) == TokenSeq{});
  NBestList nb = beam_search(p, 8, 3);
  CHECK(nb.hyps[0].tokens == TokenSeq{{0}});
  CHECK(std::exp(nb.hyps[0].log_score) == doctest::Approx(0.3 * 0.3 + 0.3 * 0.7 * 2).epsilon(1e-6));
  CHECK_THROWS_AS(beam_search(p, 2, 3), ContractViolation);
}

TEST_CASE("property: beam top-1 is the exhaustive best on tiny grams") {
  Rng rng(24);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t v = 1 + rng.below(3);
    const std::size_t frames = 1 + rng.below(5);
    const LogitGram z = random_gram(frames, v + 1, rng, 2.0);
    double best = -1.0;
    TokenSeq arg;
    for (const TokenSeq& y : all_label_sequences(v, frames)) {
      const double pr = oracle_prob(z.logits, y);
      if (pr > best) best = pr, arg = y;
    }
    NBestList nb = beam_search(to_posteriorgram(z), 64, 5);
    CAPTURE(trial);
    CHECK(nb.hyps[0].tokens == arg);
    CHECK(std::exp(nb.hyps[0].log_score) == doctest::Approx(best).epsilon(1e-5));
    for (std::size_t i = 0; i < nb.hyps.size(); ++i) {
      CHECK(nb.hyps[i].log_score <= 1e-9);
      if (i > 0) {
        CHECK(nb.hyps[i].log_score <= nb.hyps[i - 1].log_score);
        CHECK(nb.hyps[i].tokens != nb.hyps[i - 1].tokens);
      }
    }
  }
}

TEST_CASE("n-best lists round-trip through JSON lines") {
  NBestList nb;
  nb.hyps = {{TokenSeq{{3, 1}}, -0.25}, {TokenSeq{}, -1.5}};
  std::string utt;
  NBestList back = nbest_from_jsonl(nbest_to_jsonl("u7", nb), &utt);
  CHECK(utt == "u7");
  REQUIRE(back.hyps.size() == 2);
  CHECK(back.hyps[0].tokens == nb.hyps[0].tokens);
  CHECK(back.hyps[1].log_score == -1.5);
  CHECK_THROWS_AS(nbest_from_jsonl("{\"utt\": 1}"), FormatError);
}

}  // namespace
}  // namespace ctcbridge
