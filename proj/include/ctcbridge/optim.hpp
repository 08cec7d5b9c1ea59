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

#pragma once

#include <map>
#include <string>
#include <vector>

#include "ctcbridge/autodiff.hpp"

namespace ctcbridge {

struct AdamConfig {
  double lr = 2e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  int warmup = 100;
  int total_steps = 1000;
  double min_lr_ratio = 0.05;  // cosine decays to lr * min_lr_ratio
  double clip = 1.0;           // global gradient-norm bound; <= 0 disables
};

// Linear warmup to lr, then cosine decay over total_steps.
double scheduled_lr(const AdamConfig& cfg, int step);

// Adam over the trainable members of a parameter list. Frozen parameters
// receive no update and keep no moments.
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Parameter*> params, AdamConfig cfg);

  const AdamConfig& config() const { return cfg_; }
  int step_count() const { return step_; }

  void zero_grad();
  // Global L2 norm of the trainable gradients.
  double grad_norm() const;
  // Applies one update from the accumulated gradients; returns the lr used.
  double step();

  // Moments keyed "adam.m.<param>" / "adam.v.<param>" for checkpointing.
  std::vector<std::pair<std::string, Tensor>> state() const;
  void load_state(const std::vector<std::pair<std::string, Tensor>>& tensors, int step);

 private:
  std::vector<Parameter*> params_;
  AdamConfig cfg_;
  std::map<std::string, Tensor> m_, v_;
  int step_ = 0;
};

}  // namespace ctcbridge
