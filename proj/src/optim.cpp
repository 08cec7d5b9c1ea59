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

#include "ctcbridge/optim.hpp"

#include <cmath>
#include <numbers>

namespace ctcbridge {

double scheduled_lr(const AdamConfig& cfg, int step) {
  double scale = 1.0;
  if (cfg.warmup > 0 && step < cfg.warmup) scale = static_cast<double>(step + 1) / cfg.warmup;
  const int total = std::max(cfg.total_steps, 1);
  const double progress = std::min(1.0, static_cast<double>(step) / total);
  const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  return cfg.lr * scale * (cfg.min_lr_ratio + (1.0 - cfg.min_lr_ratio) * cosine);
}

Adam::Adam(std::vector<Parameter*> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (Parameter* p : params_) {
    if (!p->trainable) continue;
    CTCB_REQUIRE(!m_.count(p->name), "adam: duplicate parameter name " + p->name);
    m_[p->name] = Tensor(p->value.shape());
    v_[p->name] = Tensor(p->value.shape());
  }
}

void Adam::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

double Adam::grad_norm() const {
  double s = 0.0;
  for (const Parameter* p : params_) {
    if (!p->trainable) continue;
    for (float g : p->grad.values()) s += static_cast<double>(g) * g;
  }
  return std::sqrt(s);
}

double Adam::step() {
  const double lr = scheduled_lr(cfg_, step_);
  const double norm = grad_norm();
  const double clip = (cfg_.clip > 0.0 && norm > cfg_.clip) ? cfg_.clip / norm : 1.0;
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, step_);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, step_);
  for (Parameter* p : params_) {
    if (!p->trainable) continue;
    Tensor& m = m_.at(p->name);
    Tensor& v = v_.at(p->name);
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double g = static_cast<double>(p->grad[i]) * clip;
      const double mi = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
      const double vi = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double upd = lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg_.eps);
      p->value[i] = static_cast<float>(p->value[i] - upd);
    }
  }
  return lr;
}

std::vector<std::pair<std::string, Tensor>> Adam::state() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (const Parameter* p : params_) {
    if (!p->trainable) continue;
    out.emplace_back("adam.m." + p->name, m_.at(p->name));
    out.emplace_back("adam.v." + p->name, v_.at(p->name));
  }
  return out;
}

void Adam::load_state(const std::vector<std::pair<std::string, Tensor>>& tensors, int step) {
  std::map<std::string, const Tensor*> byname;
  for (const auto& [n, t] : tensors) byname[n] = &t;
  for (Parameter* p : params_) {
    if (!p->trainable) continue;
    auto im = byname.find("adam.m." + p->name);
    auto iv = byname.find("adam.v." + p->name);
    if (im == byname.end() || iv == byname.end()) throw FormatError("adam state missing for " + p->name);
    if (im->second->shape() != p->value.shape() || iv->second->shape() != p->value.shape())
      throw FormatError("adam state shape mismatch for " + p->name);
    m_[p->name] = *im->second;
    v_[p->name] = *iv->second;
  }
  step_ = step;
}

}  // namespace ctcbridge
