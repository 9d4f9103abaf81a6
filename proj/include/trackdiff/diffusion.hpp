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

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "trackdiff/random.hpp"
#include "trackdiff/score.hpp"
#include "trackdiff/vocabulary.hpp"

namespace trackdiff {

// Linear absorbing schedule: alpha_bar(t) = 1 - t/T.
class Schedule {
 public:
  explicit Schedule(int steps);

  int steps() const { return steps_; }
  double alpha_bar(int t) const { return alpha_bar_.at(t); }
  double gamma_bar(int t) const { return 1.0 - alpha_bar_.at(t); }
  double alpha(int t) const;  // alpha_bar(t) / alpha_bar(t-1), 1 <= t <= T
  double gamma(int t) const { return 1.0 - alpha(t); }

 private:
  int steps_;
  std::vector<double> alpha_bar_;
};

Schedule make_schedule(int steps);

// Dense K x K column-stochastic matrix Q_t[m][n] = q(x_t = m | x_{t-1} = n).
// Reference construction only; production code uses the closed forms below.
std::vector<std::vector<double>> transition_matrix(const Schedule& schedule, int t, int vocab_size);

// At most two tokens carry mass in any forward-process distribution.
struct SparseDist {
  TokenId first = kMask;
  double p_first = 0.0;
  TokenId second = kMask;
  double p_second = 0.0;

  double prob(TokenId id) const { return (id == first ? p_first : 0.0) + (id == second ? p_second : 0.0); }
  std::vector<double> dense(int vocab_size) const;
};

bool is_absorbing(TokenId id);  // MASK or EMPTY

SparseDist marginal(TokenId x0, int t, const Schedule& schedule);
// q(x_{t-1} | x_t, x_0). Throws "zero-probability conditioning" when q(x_t | x_0) = 0.
SparseDist posterior(TokenId xt, TokenId x0, int t, const Schedule& schedule);

struct RoleMask {
  std::array<TrackMark, kNumTracks> roles{};

  TrackMark operator[](TrackRole t) const { return roles[track_index(t)]; }
  TrackMark& operator[](TrackRole t) { return roles[track_index(t)]; }
  bool row_is(int row, TrackMark m) const { return roles[row / 2] == m; }
};

// At least one target; throws otherwise.
void validate_roles(const RoleMask& roles);
RoleMask roles_from_score(const ScoreGrid& score);

// Uniform over the 3^k - 2^k valid assignments of the instrument tracks that
// are involved in x0; the chord track is a source whenever it is involved.
RoleMask sample_roles(const ScoreGrid& x0, Rng& rng);

// Target cells kept with probability alpha_bar(t), else MASK; source rows
// copied; empty-role rows become EMPTY.
ScoreGrid corrupt(const ScoreGrid& x0, int t, const RoleMask& roles, const Schedule& schedule, std::uint64_t seed);

// p(x_{t-1} | x_t) = sum_x0 q(x_{t-1} | x_t, x0) softmax(logits)[x0]. Predicted
// MASK/EMPTY mass keeps the cell masked. Unmasked x_t maps to a delta.
std::vector<double> model_step_distribution(std::span<const double> x0_logits, TokenId xt, int t,
                                            const Schedule& schedule);

void softmax(std::span<const double> logits, std::span<double> out);

struct LossTerms {
  double vlb = 0.0;
  double aux = 0.0;
  double lambda = 0.001;
  double total = 0.0;  // vlb + lambda * aux
  int target_cells = 0;
  int masked_cells = 0;
};

// logits: 14 x L x K row-major. L_vlb is the mean over target cells of the
// per-cell VLB term at step t; L_aux the mean x0 cross-entropy over masked
// target cells. When grad is non-null it receives d total / d logits.
LossTerms diffusion_loss(std::span<const double> logits, const ScoreGrid& x0, const ScoreGrid& xt, int t,
                         const RoleMask& roles, double lambda, const Schedule& schedule,
                         std::vector<double>* grad = nullptr);

// 1 = conditionable, 0 = to be generated; 14 x L row-major.
using FlagGrid = std::vector<std::uint8_t>;

FlagGrid flags_for_roles(const RoleMask& roles, int width);

class X0Predictor {
 public:
  virtual ~X0Predictor() = default;
  virtual int vocab_size() const = 0;
  virtual int max_width() const = 0;
  // Writes 14 x L x K logits of p(x0 | x_t).
  virtual void predict(const ScoreGrid& xt, int t, const FlagGrid& flags, std::vector<double>& logits) const = 0;
};

// Argmax of logits / temperature + Gumbel noise; temperature 0 is plain argmax.
int gumbel_sample(std::span<const double> logits, double temperature, Rng& rng);

// Per-row allowed x0 tokens during sampling (MASK/EMPTY are always excluded).
using RowSupport = std::array<std::vector<char>, kNumRows>;
RowSupport full_support(int vocab_size);
RowSupport vocabulary_support(const Vocabulary& vocab);

struct SamplingOptions {
  std::uint64_t seed = 0;
  double temperature = 1.0;
  bool sample_x0 = false;  // Gumbel-max draw of x0, then exact posterior
  int threads = 1;
  const RowSupport* support = nullptr;
};

struct GenerationResult {
  ScoreGrid score;
  std::vector<int> masked_per_step;  // index i: MASK count entering step T - i
};

GenerationResult generate(const X0Predictor& model, const ScoreGrid& source, const RoleMask& roles,
                          const Schedule& schedule, const SamplingOptions& options);

// mask: 14 x L, nonzero where cells are to be generated.
GenerationResult infill(const X0Predictor& model, const ScoreGrid& score, const std::vector<std::uint8_t>& mask,
                        const Schedule& schedule, const SamplingOptions& options);

}  // namespace trackdiff
