/*
Copyright 2026 The trackdiff Authors. All rights reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "trackdiff/denoiser.hpp"
#include "trackdiff/diffusion.hpp"

namespace trackdiff {

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  std::int64_t warmup_steps = 1000;
  std::int64_t total_steps = 0;  // linear decay to zero at this step; 0 keeps lr flat after warmup
};

double learning_rate(const AdamWConfig& config, std::int64_t step);

struct OptimizerState {
  std::vector<double> m, v;
  std::int64_t step = 0;

  bool operator==(const OptimizerState&) const = default;
};

void adamw_update(DenoiserParams& params, std::span<const double> grad, OptimizerState& state,
                  const AdamWConfig& config);

struct TrainConfig {
  int steps = 20;  // diffusion T
  double lambda = 0.001;
  AdamWConfig optimizer;
  std::uint64_t seed = 0;
  int threads = 1;
};

// One sampled training example: roles, timestep, and the corrupted grid.
struct TrainingExample {
  RoleMask roles;
  int t = 1;
  ScoreGrid xt;
};

TrainingExample make_training_example(const ScoreGrid& x0, const Schedule& schedule, Rng rng);

// Loss and gradient of a single fixed example.
LossTerms example_loss(const DenoiserParams& params, const ScoreGrid& x0, const TrainingExample& ex,
                       const Schedule& schedule, double lambda, std::vector<double>* grad);

// Samples roles/timestep/corruption per example from (seed, step, index),
// averages gradients in example order and applies one AdamW update.
LossTerms train_step(DenoiserParams& params, OptimizerState& state, std::span<const ScoreGrid> batch,
                     const TrainConfig& config);

// Mean loss over fixed draws (used for validation); does not touch params.
LossTerms evaluate_loss(const DenoiserParams& params, std::span<const ScoreGrid> scores, const TrainConfig& config,
                        std::uint64_t draw_seed);

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  int samples = 0;
};

struct GradCheckOptions {
  double eps = 1e-4;
  int samples = 200;
  std::uint64_t seed = 0;
  bool five_point = false;  // fourth-order stencil
  std::vector<int> tensors;  // restrict sampling to these tensor ids; empty = all
  double rel_floor = 1e-8;
};

GradCheckReport grad_check(const DenoiserParams& params, const ScoreGrid& x0, const TrainingExample& ex,
                           const Schedule& schedule, double lambda, const GradCheckOptions& options);

// Optimizer state file: "GETOPT01", u64 LE JSON length, JSON {step, size},
// f64 LE m then v, u64 FNV-1a.
std::vector<std::uint8_t> save_optimizer_state(const OptimizerState& state);
OptimizerState load_optimizer_state(std::span<const std::uint8_t> bytes);

}  // namespace trackdiff
