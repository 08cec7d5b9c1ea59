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
#include <set>

#include "ctcbridge/eval.hpp"
#include "ctcbridge/synthdata.hpp"
#include "doctest.h"

namespace ctcbridge {
namespace {

TaskSpec small_task(double sigma = 0.35, double p_conf = 0.15) {
  TaskSpec s;
  s.vocab_size = 12;
  s.feature_dim = 6;
  s.noise_sigma = sigma;
  s.p_conf = p_conf;
  s.n_train = 20;
  s.n_dev = 5;
  s.n_test = 5;
  s.materialize();
  return s;
}

TEST_CASE("rng streams match the documented constants") {
  Rng r(0);
  CHECK(r.next_u64() == 0xe220a8397b1dcdafULL);
  CHECK(r.next_u64() == 0x6e789e6aa1b965f4ULL);
  CHECK(r.next_u64() == 0x06c45d188009454fULL);
  CHECK(Rng(7).split(5).next_u64() == 0x12509ccbda5bb2e2ULL);
  CHECK(Rng(0).uniform() == 0.8833108082136426);
}

TEST_CASE("rng helpers stay in range") {
  Rng r(9);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform();
    CHECK((u >= 0.0 && u < 1.0));
    CHECK(r.below(7) < 7);
    const long v = r.range(-2, 3);
    CHECK((v >= -2 && v <= 3));
  }
}

TEST_CASE("reference task tables satisfy their invariants") {
  TaskSpec s;
  s.materialize();
  CHECK(s.vocab_size == 32);
  CHECK(s.feature_dim == 16);
  CHECK(s.min_len == 6);
  CHECK(s.max_len == 14);
  CHECK(s.min_dur == 4);
  CHECK(s.max_dur == 8);
  CHECK(s.noise_sigma == 0.35);
  CHECK(s.p_conf == 0.15);
  CHECK(s.n_train == 4000);
  CHECK(s.n_dev == 400);
  CHECK(s.n_test == 400);
  for (const auto& row : s.transitions) {
    double sum = 0.0;
    for (double p : row) sum += p;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
  // No context row (words and the start row) allows both members of a
  // confusion pair.
  for (auto [a, b] : s.confusion_pairs) {
    CHECK(s.partner(a) == b);
    CHECK(s.partner(b) == a);
    for (std::size_t r = 0; r < s.vocab_size; ++r) {
      if (s.vocab().is_special(static_cast<int>(r)) && static_cast<int>(r) != s.vocab().bos_id()) continue;
      CHECK_FALSE((s.transitions[r][a] > 0.0 && s.transitions[r][b] > 0.0));
    }
  }
  CHECK_FALSE(s.confusion_pairs.empty());
  // The translation map fixes the specials and is a bijection.
  const Vocabulary v = s.vocab();
  for (int sp : {v.sep_id(), v.bos_id(), v.eos_id()}) CHECK(s.translation_map[sp] == sp);
  CHECK(std::set<int>(s.translation_map.begin(), s.translation_map.end()).size() == s.vocab_size);
}

TEST_CASE("task validation rejects broken specs") {
  TaskSpec s = small_task();
  TaskSpec bad = s;
  bad.min_dur = 3;
  CHECK_THROWS_AS(bad.validate(), DomainError);
  bad = s;
  bad.p_conf = 0.5;
  CHECK_THROWS_AS(bad.validate(), DomainError);
  bad = s;
  bad.transitions[0][0] += 0.1;
  CHECK_THROWS_AS(bad.validate(), DomainError);
  bad = s;
  bad.min_len = 9;
  bad.max_len = 8;
  CHECK_THROWS_AS(bad.validate(), DomainError);
  CHECK_THROWS_AS(TaskSpec::from_json("{\"vocab_size\": \"x\"}"), FormatError);
  CHECK_THROWS_AS(TaskSpec::from_file("/nonexistent/task.json"), IoError);
}

TEST_CASE("task JSON round trip regenerates identical data") {
  const TaskSpec s = small_task();
  const TaskSpec back = TaskSpec::from_json(s.to_json());
  CHECK(back.to_json() == s.to_json());
  CHECK(back.prototypes == s.prototypes);
  CHECK(dataset_hash(make_splits(back, 4).train) == dataset_hash(make_splits(s, 4).train));
}

TEST_CASE("noiseless, confusion-free frames are exact prototype repeats") {
  const TaskSpec s = small_task(0.0, 0.0);
  const Utterance u = sample_utterance(s, Rng(5), "u");
  std::size_t row = 0;
  for (std::size_t i = 0; i < u.source.size(); ++i)
    for (int d = 0; d < u.durations[i]; ++d, ++row)
      for (std::size_t k = 0; k < s.feature_dim; ++k) CHECK(u.frames(row, k) == s.prototypes(u.source.ids[i], k));
  CHECK(row == u.frames.rows());
}

TEST_CASE("utterances are deterministic and frame counts add up") {
  const TaskSpec s = small_task();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Utterance a = sample_utterance(s, Rng(seed), "x");
    const Utterance b = sample_utterance(s, Rng(seed), "x");
    CHECK(a.frames == b.frames);
    CHECK(a.source == b.source);
    std::size_t total = 0;
    for (int d : a.durations) {
      CHECK((d >= 4 && d <= 8));
      total += static_cast<std::size_t>(d);
    }
    CHECK(total == a.frames.rows());
    CHECK((a.source.size() >= s.min_len && a.source.size() <= s.max_len));
    CHECK(a.target == a.source);
    for (int id : a.source.ids) CHECK_FALSE(s.vocab().is_special(id));
  }
}

TEST_CASE("splits: sizes, reproducibility and disjoint ids") {
  const TaskSpec s = small_task();
  const Splits a = make_splits(s, 7, 3, 2, 11);
  const Splits b = make_splits(s, 7, 3, 2, 11);
  const Splits c = make_splits(s, 7, 3, 2, 12);
  CHECK(a.train.utts.size() == 7);
  CHECK(a.dev.utts.size() == 3);
  CHECK(a.test.utts.size() == 2);
  CHECK(dataset_hash(a.train) == dataset_hash(b.train));
  CHECK(dataset_hash(a.test) == dataset_hash(b.test));
  CHECK(dataset_hash(a.train) != dataset_hash(c.train));
  std::set<std::string> ids;
  for (const Splits* sp : {&a, &c})
    for (const Dataset* d : {&sp->train, &sp->dev, &sp->test})
      for (const auto& u : d->utts) CHECK(ids.insert(u.id).second);
  CHECK_THROWS_AS(make_splits(s, 0, 1, 1, 0), ContractViolation);
}

TEST_CASE("augment") {
  const TaskSpec s = small_task();
  const Utterance u = sample_utterance(s, Rng(3));
  Rng rng(4);
  CHECK(augment(u.frames, MaskConfig{}, rng) == u.frames);

  MaskConfig all{1, 1.0, 0, 0};
  const Tensor masked = augment(u.frames, all, rng);
  for (float v : masked.values()) CHECK(v == 0.0f);
  MaskConfig bands{0, 0.0, 1, static_cast<int>(s.feature_dim)};
  const Tensor banded = augment(u.frames, bands, rng);
  for (float v : banded.values()) CHECK(v == 0.0f);

  MaskConfig part{1, 0.3, 0, 0};
  for (int rep = 0; rep < 20; ++rep) {
    const Tensor m = augment(u.frames, part, rng);
    std::size_t zero_rows = 0;
    for (std::size_t t = 0; t < m.rows(); ++t) {
      bool z = true;
      for (float v : m.row(t)) z = z && v == 0.0f;
      zero_rows += z;
    }
    CHECK(static_cast<double>(zero_rows) <= 0.3 * static_cast<double>(m.rows()));
    CHECK(zero_rows > 0);
  }
}

TEST_CASE("translation: mapping, pair swap and inverse") {
  std::vector<int> identity(6);
  for (int i = 0; i < 6; ++i) identity[i] = i;
  CHECK(translate_target(TokenSeq{{4}}, identity) == TokenSeq{{4}});
  const std::vector<int> m{3, 0, 4, 1, 2, 5};
  CHECK(translate_target(TokenSeq{{0, 1, 2, 3}}, m) == TokenSeq{{m[1], m[0], m[3], m[2]}});
  CHECK(translate_target(TokenSeq{{0, 1, 2}}, m) == TokenSeq{{m[1], m[0], m[2]}});
  Rng rng(5);
  for (int rep = 0; rep < 50; ++rep) {
    TokenSeq src;
    for (std::size_t i = 0; i < rng.below(9); ++i) src.ids.push_back(static_cast<int>(rng.below(6)));
    CHECK(untranslate_target(translate_target(src, m), m) == src);
  }
}

TEST_CASE("context-free variant keeps acoustics and drops word order") {
  const TaskSpec s = small_task();
  const TaskSpec cf = s.context_free();
  CHECK(cf.prototypes == s.prototypes);
  CHECK(cf.confusion_pairs == s.confusion_pairs);
  const std::size_t w = s.vocab_size - 3;
  for (std::size_t r = 0; r < s.vocab_size; ++r)
    for (std::size_t j = 0; j < s.vocab_size; ++j) {
      const double expect = j >= w ? 0.0 : r >= w ? 1.0 / w : j == r ? 0.0 : 1.0 / (w - 1);
      CHECK(cf.transitions[r][j] == doctest::Approx(expect));
    }
}

TEST_CASE("base64 and dataset JSON lines") {
  CHECK(base64_encode({'M', 'a', 'n'}) == "TWFu");
  CHECK(base64_encode({'M', 'a'}) == "TWE=");
  CHECK(base64_encode({'M'}) == "TQ==");
  CHECK(base64_decode("TWE=") == std::vector<unsigned char>{'M', 'a'});
  CHECK_THROWS_AS(base64_decode("abc"), FormatError);

  const Utterance u = sample_utterance(small_task(), Rng(8), "utt-1");
  const Utterance back = utterance_from_jsonl(utterance_to_jsonl(u));
  CHECK(back.id == u.id);
  CHECK(back.frames == u.frames);
  CHECK(back.source == u.source);
  CHECK(back.target == u.target);
  CHECK_THROWS_AS(utterance_from_jsonl("{}"), FormatError);
}

// A segment-level nearest-prototype decoder stands in for an encoder that
// is perfect on clean data; its errors are then exactly the confusions.
TEST_CASE("confusions leave roughly p_conf error headroom") {
  TaskSpec s;
  s.materialize();
  const Splits sp = make_splits(s, 1, 400, 1, 0);
  std::vector<TokenSeq> refs, hyps;
  std::size_t paired = 0, tokens = 0;
  for (const auto& u : sp.dev.utts) {
    TokenSeq hyp;
    std::size_t row = 0;
    for (std::size_t i = 0; i < u.source.size(); ++i) {
      std::vector<double> mean(s.feature_dim, 0.0);
      for (int d = 0; d < u.durations[i]; ++d, ++row)
        for (std::size_t k = 0; k < s.feature_dim; ++k) mean[k] += u.frames(row, k) / u.durations[i];
      int best = 0;
      double best_d = 1e300;
      for (std::size_t w = 0; w < s.vocab_size - 3; ++w) {
        double dist = 0.0;
        for (std::size_t k = 0; k < s.feature_dim; ++k) dist += std::pow(mean[k] - s.prototypes(w, k), 2);
        if (dist < best_d) best_d = dist, best = static_cast<int>(w);
      }
      hyp.ids.push_back(best);
      paired += s.partner(u.source.ids[i]) >= 0;
      ++tokens;
    }
    refs.push_back(u.source);
    hyps.push_back(hyp);
  }
  const double expected = s.p_conf * static_cast<double>(paired) / static_cast<double>(tokens);
  const WerReport r = corpus_wer(refs, hyps);
  CHECK(r.ins == 0);
  CHECK(r.wer == doctest::Approx(expected).epsilon(0.2));
  CHECK(r.wer > 0.05);
}

}  // namespace
}  // namespace ctcbridge
