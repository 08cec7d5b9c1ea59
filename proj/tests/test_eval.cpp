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

#include <algorithm>
#include <cmath>

#include "ctcbridge/eval.hpp"
#include "doctest.h"
#include "helpers.hpp"

namespace ctcbridge {
namespace {

// Plain recursive edit distance, no tie-breaking.
std::size_t brute_edit(const std::vector<int>& r, std::size_t i, const std::vector<int>& h, std::size_t j) {
  if (i == r.size()) return h.size() - j;
  if (j == h.size()) return r.size() - i;
  return std::min({brute_edit(r, i + 1, h, j + 1) + (r[i] != h[j]), brute_edit(r, i + 1, h, j) + 1,
                   brute_edit(r, i, h, j + 1) + 1});
}

TEST_CASE("wer examples") {
  WerReport same = wer(TokenSeq{{0, 1, 2}}, TokenSeq{{0, 1, 2}});
  CHECK(same.wer == 0.0);
  CHECK(same.errors() == 0);
  CHECK(same.n_ref == 3);

  WerReport sub = wer(TokenSeq{{0, 1, 2}}, TokenSeq{{0, 5, 2}});
  CHECK(sub.sub == 1);
  CHECK(sub.del + sub.ins == 0);
  CHECK(sub.wer == doctest::Approx(1.0 / 3));

  WerReport del = wer(TokenSeq{{0, 1, 2}}, TokenSeq{});
  CHECK(del.del == 3);
  CHECK(del.wer == 1.0);

  WerReport ins = wer(TokenSeq{{0}}, TokenSeq{{0, 3, 3}});
  CHECK(ins.ins == 2);
  CHECK(ins.wer == 2.0);

  CHECK_THROWS_AS(wer(TokenSeq{}, TokenSeq{{1}}), DomainError);
}

TEST_CASE("wer prefers substitution over a deletion plus insertion") {
  WerReport r = wer(TokenSeq{{0, 1}}, TokenSeq{{0, 2}});
  CHECK(r.sub == 1);
  CHECK(r.del == 0);
  CHECK(r.ins == 0);
}

TEST_CASE("property: wer equals exhaustive edit distance on short sequences") {
  const auto seqs = testing::all_label_sequences(3, 5);
  std::size_t checked = 0;
  for (const TokenSeq& ref : seqs) {
    if (ref.empty()) continue;
    for (const TokenSeq& hyp : seqs) {
      const WerReport r = wer(ref, hyp);
      REQUIRE(r.errors() == brute_edit(ref.ids, 0, hyp.ids, 0));
      REQUIRE(r.wer * static_cast<double>(r.n_ref) == static_cast<double>(r.errors()));
      REQUIRE(r.n_ref == ref.size());
      ++checked;
    }
  }
  CHECK(checked == 363 * 364);
}

TEST_CASE("corpus wer pools errors over references") {
  const WerReport r = corpus_wer({TokenSeq{{0, 1}}, TokenSeq{{2, 2, 2}}}, {TokenSeq{{0}}, TokenSeq{{2, 2, 2}}});
  CHECK(r.n_ref == 5);
  CHECK(r.del == 1);
  CHECK(r.wer == doctest::Approx(0.2));
  CHECK_THROWS_AS(corpus_wer({TokenSeq{{0}}}, {}), ContractViolation);
}

TEST_CASE("werr") {
  CHECK(werr(8.9, 5.6) == doctest::Approx(0.3708).epsilon(1e-4));
  CHECK(werr(0.2, 0.2) == 0.0);
  CHECK(werr(0.1, 0.2) < 0.0);
  CHECK_THROWS_AS(werr(0.0, 0.1), DomainError);
}

TEST_CASE("bleu examples") {
  const std::vector<TokenSeq> refs{TokenSeq{{0, 1, 2, 3, 4}}, TokenSeq{{5, 6, 7, 8}}};
  CHECK(bleu(refs, refs) == doctest::Approx(100.0));
  CHECK(bleu(refs, {TokenSeq{{9, 9, 9, 9, 9}}, TokenSeq{{10, 10, 10, 10}}}) == 0.0);
  // p1 = 3/4, p2 = 2/3, p3 = 1/2, p4 = 0.
  CHECK(bleu({TokenSeq{{0, 1, 2, 3}}}, {TokenSeq{{0, 1, 2, 2}}}) == 0.0);
  CHECK_THROWS_AS(bleu({}, {}), DomainError);
}

TEST_CASE("bleu: hand-counted precisions with brevity penalty") {
  // ref length 6, hyp length 5: p1 = 5/5, p2 = 3/4, p3 = 1/3, p4 = 0 without
  // smoothing; add-one on n > 1 gives (4/5, 2/4, 1/3).
  const TokenSeq ref{{0, 1, 2, 3, 4, 5}}, hyp{{0, 1, 2, 4, 5}};
  CHECK(bleu({ref}, {hyp}) == 0.0);
  const double bp = std::exp(1.0 - 6.0 / 5.0);
  const double smoothed = 100.0 * bp * std::pow(1.0 * (4.0 / 5) * (2.0 / 4) * (1.0 / 3), 0.25);
  CHECK(bleu({ref}, {hyp}, 4, true) == doctest::Approx(smoothed).epsilon(1e-12));
  const double bigram = 100.0 * bp * std::sqrt(1.0 * 3.0 / 4);
  CHECK(bleu({ref}, {hyp}, 2) == doctest::Approx(bigram).epsilon(1e-12));
}

TEST_CASE("property: bleu is permutation invariant and drops under corruption") {
  Rng rng(51);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<TokenSeq> refs, hyps;
    for (int i = 0; i < 6; ++i) {
      TokenSeq r;
      for (std::size_t k = 0; k < 6 + rng.below(6); ++k) r.ids.push_back(static_cast<int>(rng.below(8)));
      TokenSeq h = r;
      for (int& id : h.ids)
        if (rng.uniform() < 0.2) id = static_cast<int>(rng.below(8));
      refs.push_back(r);
      hyps.push_back(h);
    }
    const double base = bleu(refs, hyps, 4, true);
    std::vector<std::size_t> perm{5, 2, 0, 4, 1, 3};
    std::vector<TokenSeq> pr, ph;
    for (std::size_t p : perm) pr.push_back(refs[p]), ph.push_back(hyps[p]);
    CHECK(bleu(pr, ph, 4, true) == doctest::Approx(base).epsilon(1e-12));

    // Replace one token that currently matches its reference position.
    for (std::size_t i = 0; i < hyps.size(); ++i) {
      for (std::size_t k = 0; k < hyps[i].size(); ++k)
        if (hyps[i].ids[k] == refs[i].ids[k]) {
          std::vector<TokenSeq> bad = hyps;
          bad[i].ids[k] = 99;
          CHECK(bleu(refs, bad, 4, true) <= base + 1e-12);
          break;
        }
    }
  }
}

TEST_CASE("teacher forcing statistics") {
  TeacherForcingAccumulator uni;
  uni.add(Tensor({3, 7}), {0, 4, 6});
  const auto u = uni.result();
  CHECK(u.log_ppl == doctest::Approx(std::log(7.0)));
  CHECK((u.token_acc >= 0.0 && u.token_acc <= 1.0));
  CHECK(u.tokens == 3);

  TeacherForcingAccumulator acc;
  Tensor z({2, 3});
  z(0, 1) = 5.0f;
  z(1, 2) = 5.0f;
  acc.add(z, {1, 0});
  CHECK(acc.result().token_acc == 0.5);
  CHECK_THROWS_AS(TeacherForcingAccumulator().result(), DomainError);
}

TEST_CASE("wer report JSON") {
  const WerReport r = wer(TokenSeq{{0, 1}}, TokenSeq{{1}});
  CHECK(r.to_json() == "{\"del\":1,\"ins\":0,\"n_ref\":2,\"sub\":0,\"wer\":0.5}");
}

}  // namespace
}  // namespace ctcbridge
