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

#include "ctcbridge/connector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"

namespace ctcbridge {

std::string to_string(ConnectorMode m) {
  switch (m) {
    case ConnectorMode::kFull: return "full";
    case ConnectorMode::kTopS: return "topS";
    case ConnectorMode::kTopP: return "topP";
    case ConnectorMode::kAdapter: return "adapter";
  }
  return "full";
}

ConnectorMode connector_mode_from_string(const std::string& s) {
  if (s == "full") return ConnectorMode::kFull;
  if (s == "topS") return ConnectorMode::kTopS;
  if (s == "topP") return ConnectorMode::kTopP;
  if (s == "adapter") return ConnectorMode::kAdapter;
  throw FormatError("unknown connector mode '" + s + "'");
}

void ConnectorConfig::validate(std::size_t classes) const {
  if (!(tau > 0.0)) throw DomainError("connector: tau must be positive");
  if (!(blk_downscale >= 1.0)) throw DomainError("connector: blk_downscale must be >= 1");
  if (mode == ConnectorMode::kTopS || mode == ConnectorMode::kTopP) {
    if (k < 1 || static_cast<std::size_t>(k) > classes)
      throw DomainError("connector: K=" + std::to_string(k) + " outside [1, " + std::to_string(classes) + "]");
  }
}

std::string ConnectorConfig::to_json() const {
  nlohmann::json j;
  j["mode"] = to_string(mode);
  j["tau"] = tau;
  j["blk_downscale"] = blk_downscale;
  j["k"] = k;
  j["apply_tau_at"] = apply_tau_at == TauPhase::kAlways ? "always" : "inference_only";
  return j.dump();
}

ConnectorConfig ConnectorConfig::from_json(const std::string& text) {
  ConnectorConfig c;
  try {
    auto j = nlohmann::json::parse(text);
    c.mode = connector_mode_from_string(j.value("mode", std::string("full")));
    c.tau = j.value("tau", 1.0);
    c.blk_downscale = j.value("blk_downscale", 1.0);
    c.k = j.value("k", 0);
    const std::string at = j.value("apply_tau_at", std::string("inference_only"));
    if (at == "always") c.apply_tau_at = TauPhase::kAlways;
    else if (at == "inference_only") c.apply_tau_at = TauPhase::kInferenceOnly;
    else throw FormatError("connector: apply_tau_at must be inference_only or always");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("connector json: ") + e.what());
  }
  return c;
}

LogitGram blank_downscale(const LogitGram& z, double factor) {
  if (!(factor >= 1.0)) throw DomainError("blank_downscale: factor must be >= 1");
  if (factor == 1.0) return z;
  Tensor out = z.logits;
  const std::size_t blank = z.classes() - 1;
  const double shift = std::log(factor);
  for (std::size_t t = 0; t < z.frames(); ++t) out(t, blank) = static_cast<float>(out(t, blank) - shift);
  return LogitGram(std::move(out));
}

std::vector<int> top_k_indices(std::span<const float> row, int k) {
  std::vector<int> idx(row.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return row[a] > row[b]; });
  idx.resize(std::min<std::size_t>(static_cast<std::size_t>(std::max(k, 0)), idx.size()));
  return idx;
}

Tensor connector_weights(const LogitGram& z, const ConnectorConfig& cfg, Phase phase) {
  cfg.validate(z.classes());
  const LogitGram zd = blank_downscale(z, cfg.blk_downscale);
  const double tau = cfg.tau_for(phase);
  if (cfg.mode != ConnectorMode::kTopS) return kernels::softmax_rows(zd.logits, tau);

  Tensor w({z.frames(), z.classes()});
  for (std::size_t t = 0; t < z.frames(); ++t) {
    auto row = zd.logits.row(t);
    const auto keep = top_k_indices(row, cfg.k);
    Tensor sel({1, keep.size()});
    for (std::size_t i = 0; i < keep.size(); ++i) sel[i] = row[keep[i]];
    const Tensor p = kernels::softmax_rows(sel, tau);
    for (std::size_t i = 0; i < keep.size(); ++i) w(t, keep[i]) = p[i];
  }
  return w;
}

template <typename T>
Var<T> reconstruct_full(const LogitGram& z, Var<T> codebook, const ConnectorConfig& cfg, Phase phase) {
  CTCB_REQUIRE(z.classes() == codebook.rows(), "reconstruct: logit columns (" + std::to_string(z.classes()) +
                                                   ") != codebook rows (" + std::to_string(codebook.rows()) + ")");
  ConnectorConfig full = cfg;
  full.mode = ConnectorMode::kFull;
  Tensor w = connector_weights(z, full, phase);
  BasicTape<T>& tape = *codebook.tape();
  return ad::matmul(tape.constant(BasicTensor<T>::cast(w)), codebook);
}

template <typename T>
Var<T> reconstruct_top_s(const LogitGram& z, Var<T> codebook, const ConnectorConfig& cfg, Phase phase) {
  CTCB_REQUIRE(z.classes() == codebook.rows(), "reconstruct_top_s: logit columns != codebook rows");
  ConnectorConfig c = cfg;
  c.mode = ConnectorMode::kTopS;
  Tensor w = connector_weights(z, c, phase);
  return ad::matmul(codebook.tape()->constant(BasicTensor<T>::cast(w)), codebook);
}

template <typename T>
Var<T> reconstruct_top_p(const LogitGram& z, Var<T> codebook, Var<T> projection, const ConnectorConfig& cfg) {
  CTCB_REQUIRE(z.classes() == codebook.rows(), "reconstruct_top_p: logit columns != codebook rows");
  ConnectorConfig c = cfg;
  c.mode = ConnectorMode::kTopP;
  c.validate(z.classes());
  const std::size_t d = codebook.cols(), k = static_cast<std::size_t>(cfg.k);
  CTCB_REQUIRE(projection.rows() == k * d && projection.cols() == d,
               "reconstruct_top_p: projection must be [K*d, d], got " + shape_str(projection.shape()));
  const LogitGram zd = blank_downscale(z, cfg.blk_downscale);
  std::vector<int> ids;
  ids.reserve(z.frames() * k);
  for (std::size_t t = 0; t < z.frames(); ++t) {
    const auto keep = top_k_indices(zd.logits.row(t), cfg.k);
    ids.insert(ids.end(), keep.begin(), keep.end());
  }
  Var<T> rows = ad::gather_rows(codebook, std::move(ids));
  Var<T> stacked = ad::reshape(rows, Shape{z.frames(), k * d});
  return ad::matmul(stacked, projection);
}

template <typename T>
Var<T> reconstruct_adapter(const LogitGram& z, Var<T> adapter_table, const ConnectorConfig& cfg, Phase phase) {
  CTCB_REQUIRE(z.classes() == adapter_table.rows(), "reconstruct_adapter: logit columns != adapter rows");
  return reconstruct_full(z, adapter_table, cfg, phase);
}

#define CTCB_INSTANTIATE(T)                                                                              \
  template Var<T> reconstruct_full<T>(const LogitGram&, Var<T>, const ConnectorConfig&, Phase);         \
  template Var<T> reconstruct_top_s<T>(const LogitGram&, Var<T>, const ConnectorConfig&, Phase);        \
  template Var<T> reconstruct_top_p<T>(const LogitGram&, Var<T>, Var<T>, const ConnectorConfig&);       \
  template Var<T> reconstruct_adapter<T>(const LogitGram&, Var<T>, const ConnectorConfig&, Phase);
CTCB_INSTANTIATE(float)
CTCB_INSTANTIATE(double)
#undef CTCB_INSTANTIATE

}  // namespace ctcbridge
