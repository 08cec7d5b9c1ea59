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

#include <filesystem>
#include <fstream>
#include <iterator>

#include "ctcbridge/pipeline.hpp"
#include "doctest.h"
#include "helpers.hpp"

namespace ctcbridge {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string work_dir(const std::string& name) {
  const fs::path p = fs::path(CTCB_TEST_WORK_DIR) / "pipeline" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

std::vector<unsigned char> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Recipe small_recipe() { return Recipe::from_file(std::string(CTCB_TEST_DATA_DIR) + "/small_recipe.json"); }

// Shared encoder and LM checkpoints for the small recipe.
struct Trained {
  Recipe recipe;
  std::string dir, enc, lm;
};

const Trained& trained() {
  static const Trained t = [] {
    Trained out;
    out.recipe = small_recipe();
    out.dir = work_dir("shared");
    out.enc = out.dir + "/enc.ckpt";
    out.lm = out.dir + "/lm.ckpt";
    cmd_train_encoder(out.recipe, out.enc);
    cmd_train_lm(out.recipe, out.lm);
    return out;
  }();
  return t;
}

TEST_CASE("checkpoint bytes round trip exactly") {
  Rng rng(3);
  Checkpoint ck;
  ck.meta = {{"kind", "test"}, {"step", 7}, {"x", 0.1}, {"nested", {{"b", 1}, {"a", nullptr}}}};
  ck.put("w", testing::random_tensor<float>({3, 4}, rng));
  ck.put("b", testing::random_tensor<float>({5}, rng));
  ck.put("empty", Tensor({0, 3}));
  ck.put("odd", Tensor({2}, {-0.0f, std::numeric_limits<float>::denorm_min()}));
  const auto bytes = ck.to_bytes();
  const Checkpoint back = Checkpoint::from_bytes(bytes);
  CHECK(back.to_bytes() == bytes);
  CHECK(back.meta == ck.meta);
  REQUIRE(back.find("w"));
  CHECK(*back.find("w") == *ck.find("w"));
  CHECK(std::signbit(back.find("odd")->values()[0]));
  CHECK(back.find("missing") == nullptr);

  const std::string dir = work_dir("roundtrip");
  ck.save(dir + "/a.ckpt");
  CHECK(read_bytes(dir + "/a.ckpt") == bytes);
  Checkpoint::load(dir + "/a.ckpt").save(dir + "/b.ckpt");
  CHECK(read_bytes(dir + "/b.ckpt") == bytes);
  CHECK_FALSE(fs::exists(dir + "/b.ckpt.tmp"));
  CHECK_THROWS_AS(Checkpoint::load(dir + "/none.ckpt"), IoError);
}

TEST_CASE("malformed checkpoints are rejected") {
  Checkpoint ck;
  ck.put("w", Tensor({2, 2}));
  const auto good = ck.to_bytes();
  auto bad = good;
  bad[0] = 'X';
  CHECK_THROWS_AS(Checkpoint::from_bytes(bad), FormatError);
  bad = good;
  bad[4] = 2;
  CHECK_THROWS_AS(Checkpoint::from_bytes(bad), FormatError);
  bad = good;
  bad.pop_back();
  CHECK_THROWS_AS(Checkpoint::from_bytes(bad), FormatError);
  bad = good;
  bad.push_back(0);
  CHECK_THROWS_AS(Checkpoint::from_bytes(bad), FormatError);
  bad = good;
  bad[8] = 0xFF;
  CHECK_THROWS_AS(Checkpoint::from_bytes(bad), FormatError);
  bad = good;
  bad[12] = '[';
  CHECK_THROWS_AS(Checkpoint::from_bytes(bad), FormatError);
  CHECK_THROWS_AS(Checkpoint::from_bytes(std::vector<unsigned char>{'L', 'E', 'G'}), FormatError);

  // A manifest whose entries skip bytes does not tile the payload.
  std::string text(good.begin() + 12, good.end() - 16);
  const auto pos = text.find("\"offset\":0");
  REQUIRE(pos != std::string::npos);
  text.replace(pos, 10, "\"offset\":4");
  std::vector<unsigned char> shifted(good.begin(), good.begin() + 12);
  shifted.insert(shifted.end(), text.begin(), text.end());
  shifted.insert(shifted.end(), good.end() - 16, good.end());
  CHECK_THROWS_AS(Checkpoint::from_bytes(shifted), FormatError);
}

TEST_CASE("parameter store and load") {
  const TaskSpec task = small_recipe().task;
  SpeechEncoder a(EncoderConfig{}, task.vocab());
  EncoderConfig other;
  other.seed = 4;
  SpeechEncoder b(other, task.vocab());
  Checkpoint ck;
  std::vector<const Parameter*> cp;
  for (Parameter* p : a.parameters()) cp.push_back(p);
  store_parameters(ck, cp);
  CHECK(a.hash() != b.hash());
  load_parameters(ck, b.parameters());
  CHECK(a.hash() == b.hash());
  ck.tensors.pop_back();
  CHECK_THROWS_AS(load_parameters(ck, b.parameters()), FormatError);
}

TEST_CASE("recipe JSON") {
  const Recipe ref = Recipe::reference();
  CHECK(Recipe::from_json(ref.to_json()).to_json() == ref.to_json());
  const Recipe small = small_recipe();
  CHECK(small.task.n_train == 200);
  CHECK(small.encoder_train.steps == 60);
  CHECK(small.adapt_train.adam.lr == ref.adapt_train.adam.lr);
  CHECK(Recipe::from_json(small.to_json()).to_json() == small.to_json());
  CHECK(ref.patched({{"adapt", {{"mode", "topS"}}}}).mode == AdaptMode::kTopS);
  CHECK(ref.patched({{"eval", {{"tau", 0.7}}}}).eval.tau == 0.7);
  CHECK_FALSE(ref.patched({{"eval", {{"tau", nullptr}}}}).eval.tau.has_value());

  CHECK_THROWS_AS(Recipe::from_json({{"bogus", 1}}), FormatError);
  CHECK_THROWS_AS(Recipe::from_json({{"adapt", {{"lr", 1}}}}), FormatError);
  CHECK_THROWS_AS(Recipe::from_json({{"adapt", {{"mode", "nope"}}}}), DomainError);
  CHECK_THROWS_AS(Recipe::from_json({{"kind", "mt"}}), DomainError);
  CHECK_THROWS_AS(Recipe::from_json({{"encoder", {{"vocab", "other"}}}}), DomainError);
  CHECK_THROWS_AS(Recipe::from_json({{"task", {{"feature_dim", 8}}}}), DomainError);
  CHECK_THROWS_AS(Recipe::from_file("/nonexistent/recipe.json"), IoError);
  CHECK(default_tau_grid().size() == 13);
  CHECK(default_tau_grid().front() == 1e-4);
  CHECK(default_tau_grid().back() == 1e4);
}

TEST_CASE("gen-data is deterministic") {
  const Recipe r = small_recipe();
  const std::string da = work_dir("gen_a"), db = work_dir("gen_b");
  const json a = cmd_gen_data(r, da);
  const json b = cmd_gen_data(r, db);
  CHECK(a == b);
  CHECK(a["sizes"]["train"] == 200);
  CHECK(a["sizes"]["dev"] == 40);
  for (const char* f : {"/train.jsonl", "/dev.jsonl", "/test.jsonl", "/task.json", "/manifest.json"})
    CHECK(read_bytes(da + f) == read_bytes(db + f));
  Recipe other = r;
  other.data_seed = 1;
  CHECK(cmd_gen_data(other, work_dir("gen_c"))["manifest_hash"] != a["manifest_hash"]);
}

TEST_CASE("encoder training resumes bit-exactly") {
  const Trained& t = trained();
  const std::string dir = work_dir("resume");
  CommandHooks hooks;
  hooks.checkpoint_every = 30;
  // At the step-40 log line the output file holds the step-30 checkpoint.
  hooks.log = [&](const std::string& line) {
    if (line.find("step 40 ") != std::string::npos) fs::copy_file(dir + "/run.ckpt", dir + "/at30.ckpt");
  };
  const json straight = cmd_train_encoder(t.recipe, dir + "/run.ckpt", {}, hooks);
  CHECK(Checkpoint::load(dir + "/run.ckpt").meta["status"] == "complete");
  REQUIRE(fs::exists(dir + "/at30.ckpt"));
  CHECK(Checkpoint::load(dir + "/at30.ckpt").meta["status"] == "partial");
  CHECK(Checkpoint::load(dir + "/at30.ckpt").meta["step"] == 30);
  const json resumed = cmd_train_encoder(t.recipe, dir + "/resumed.ckpt", dir + "/at30.ckpt");
  CHECK(resumed["encoder_hash"] == straight["encoder_hash"]);
  CHECK(read_bytes(dir + "/resumed.ckpt") == read_bytes(dir + "/run.ckpt"));
  CHECK(straight["encoder_hash"] == hex64(encoder_from_checkpoint(Checkpoint::load(t.enc)).hash()));

  Recipe wider = t.recipe;
  wider.encoder.hidden = 32;
  CHECK_THROWS_AS(cmd_train_encoder(wider, dir + "/x.ckpt", dir + "/at30.ckpt"), ContractViolation);
  CHECK_THROWS_AS(encoder_from_checkpoint(Checkpoint::load(t.lm)), FormatError);
}

TEST_CASE("divergence leaves a diverged checkpoint") {
  Recipe r = small_recipe();
  r.encoder_train.adam.lr = 1e30;
  r.encoder_train.adam.clip = 0.0;
  r.encoder_train.adam.warmup = 0;
  const std::string dir = work_dir("diverge");
  CHECK_THROWS_AS(cmd_train_encoder(r, dir + "/enc.ckpt"), NumericalError);
  const Checkpoint ck = Checkpoint::load(dir + "/enc.ckpt");
  CHECK(ck.meta["status"] == "diverged");
  std::size_t bad = 0;
  for (const auto& [name, tensor] : ck.tensors)
    for (float x : tensor.values()) bad += std::isfinite(x) ? 0 : 1;
  CHECK(bad == 0);
}

TEST_CASE("adapt, decode and swap on the small recipe") {
  const Trained& t = trained();
  const std::string dir = work_dir("adapt");
  const json ad = cmd_adapt(t.recipe, t.enc, t.lm, dir + "/lego.ckpt");
  CHECK(ad["encoder_hash_before"] == ad["encoder_hash_after"]);
  CHECK(ad["final_dev_loss"].get<double>() < ad["initial_dev_loss"].get<double>());

  // Encoder tensors are carried into the adapted checkpoint unchanged.
  const Checkpoint enc_ck = Checkpoint::load(t.enc);
  const Checkpoint lego_ck = Checkpoint::load(dir + "/lego.ckpt");
  const SpeechEncoder enc = encoder_from_checkpoint(enc_ck);
  for (const Parameter* p : enc.parameters()) {
    const Tensor* a = enc_ck.find(p->name);
    REQUIRE(a);
    CAPTURE(p->name);
    bool found = false;
    for (const auto& [name, tensor] : lego_ck.tensors)
      if (name.size() >= p->name.size() && name.compare(name.size() - p->name.size(), p->name.size(), p->name) == 0 &&
          name.starts_with("encoder"))
        found = found || tensor == *a;
    CHECK(found);
  }

  const json d1 = cmd_decode_eval(t.recipe, t.enc, dir + "/lego.ckpt");
  const json d2 = cmd_decode_eval(t.recipe, t.enc, dir + "/lego.ckpt");
  CHECK(d1 == d2);
  CHECK(d1["system"] == "lego");
  CHECK(d1["utterances"] == 40);
  const json sw = cmd_swap(t.recipe, t.enc, dir + "/lego.ckpt");
  CHECK(sw["wer"] == d1["wer"]);
  CHECK(sw["adapted_with_encoder_hash"] == d1["encoder_hash"]);

  const json base = cmd_decode_eval(t.recipe, t.enc, "");
  CHECK(base["system"] == "ctc_beam");
  CHECK(base["ctc_greedy_wer"] == d1["ctc_greedy_wer"]);

  const std::string csv = cmd_sweep_tau(t.recipe, t.enc, dir + "/lego.ckpt");
  std::vector<std::string> rows;
  std::istringstream is(csv);
  for (std::string line; std::getline(is, line);) rows.push_back(line);
  REQUIRE(rows.size() == 1 + t.recipe.eval.tau_grid.size());
  CHECK(rows[0] == "tau,wer,sub,del,ins,n_ref");
  CHECK(rows[1].starts_with("0.0001,"));
  CHECK(rows.back().starts_with("10000,"));
  CHECK(cmd_sweep_tau(t.recipe, t.enc, dir + "/lego.ckpt") == csv);
}

TEST_CASE("lego_star stores its downscale and an evaluation override applies") {
  const Trained& t = trained();
  const std::string dir = work_dir("star");
  Recipe r = t.recipe;
  r.mode = AdaptMode::kLegoStar;
  r.adapt_train.steps = 2;
  const json ad = cmd_adapt(r, t.enc, t.lm, dir + "/star.ckpt");
  CHECK(ad["connector"]["blk_downscale"] == 1e4);
  const SpeechLM slm = speech_lm_from_checkpoint(Checkpoint::load(dir + "/star.ckpt"));
  CHECK(slm.config().connector.blk_downscale == 1e4);
  CHECK(cmd_decode_eval(r, t.enc, dir + "/star.ckpt")["blk_downscale"] == 1e4);
  r.eval.blk_downscale = 3.0;
  r.eval.tau = 0.5;
  const json over = cmd_decode_eval(r, t.enc, dir + "/star.ckpt");
  CHECK(over["blk_downscale"] == 3.0);
  CHECK(over["tau"] == 0.5);
}

TEST_CASE("incompatible inputs are refused") {
  const Trained& t = trained();
  const std::string dir = work_dir("mismatch");
  Recipe shuffled = t.recipe;
  shuffled.encoder_vocab = "shuffled";
  shuffled.encoder_train.steps = 2;
  cmd_train_encoder(shuffled, dir + "/shuf.ckpt");
  CHECK_THROWS_AS(cmd_adapt(t.recipe, dir + "/shuf.ckpt", t.lm, dir + "/x.ckpt"), ContractViolation);
  Recipe adapter = t.recipe;
  adapter.mode = AdaptMode::kAdapter;
  adapter.adapt_train.steps = 2;
  CHECK_NOTHROW(cmd_adapt(adapter, dir + "/shuf.ckpt", t.lm, dir + "/adapter.ckpt"));

  Recipe wide = t.recipe;
  wide.decoder.dim = 32;
  CHECK_THROWS_AS(cmd_adapt(wide, t.enc, t.lm, dir + "/y.ckpt"), ContractViolation);
  CHECK_THROWS_AS(cmd_adapt(t.recipe, dir + "/missing.ckpt", t.lm, dir + "/z.ckpt"), IoError);
  CHECK_THROWS_AS(cmd_decode_eval(t.recipe, t.enc, t.lm), FormatError);
}

TEST_CASE("encoder vocabulary mapping") {
  const Recipe r = small_recipe();
  Recipe s = r;
  s.encoder_vocab = "shuffled";
  const Vocabulary tv = r.task.vocab();
  const Vocabulary ev = encoder_vocabulary(s);
  CHECK(ev.size() == tv.size() + 4);
  CHECK(encoder_vocabulary(s) == ev);
  const TokenSeq seq{{0, 5, 7}};
  CHECK(from_encoder_vocab(to_vocab(seq, tv, ev), ev, tv) == seq);
  CHECK_FALSE(to_vocab(seq, tv, ev) == seq);
  CHECK(hex64(0x1234) == "0000000000001234");
  CHECK_THROWS_AS(eval_split(task_splits(r), "val"), DomainError);
}

}  // namespace
}  // namespace ctcbridge
