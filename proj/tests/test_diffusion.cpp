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

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "support.hpp"
#include "trackdiff/diffusion.hpp"
#include "trackdiff/error.hpp"

namespace trackdiff {
namespace {

using testing::all_roles;
using testing::HashPredictor;
using testing::random_grid;

constexpr int kK = 7;
constexpr int kT = 8;

// q(x_t | x_0) by repeated multiplication with the one-step matrices.
std::vector<std::vector<double>> matrix_marginals(const Schedule& s, TokenId x0) {
  std::vector<std::vector<double>> out;
  std::vector<double> v(kK, 0.0);
  v[x0] = 1.0;
  out.push_back(v);
  for (int t = 1; t <= s.steps(); ++t) {
    const auto q = transition_matrix(s, t, kK);
    std::vector<double> next(kK, 0.0);
    for (int to = 0; to < kK; ++to) {
      for (int from = 0; from < kK; ++from) next[to] += q[to][from] * v[from];
    }
    v = next;
    out.push_back(v);
  }
  return out;
}

TEST(Schedule, Values) {
  EXPECT_DOUBLE_EQ(make_schedule(100).alpha_bar(25), 0.75);
  const Schedule s4(4);
  EXPECT_NEAR(s4.alpha(2), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(s4.gamma(2), 1.0 / 3.0, 1e-15);
  for (int steps : {1, 4, 20, 100}) {
    const Schedule s(steps);
    EXPECT_EQ(s.alpha_bar(0), 1.0);
    EXPECT_EQ(s.alpha_bar(steps), 0.0);
    double prod = 1.0;
    for (int t = 1; t <= steps; ++t) {
      prod *= s.alpha(t);
      EXPECT_NEAR(prod, s.alpha_bar(t), 1e-12);
      EXPECT_NEAR(s.alpha_bar(t) + s.gamma_bar(t), 1.0, 1e-15);
    }
  }
  EXPECT_THROW(make_schedule(0), Error);
}

TEST(TransitionMatrix, Columns) {
  const Schedule s(kT);
  for (int t = 1; t <= kT; ++t) {
    const auto q = transition_matrix(s, t, kK);
    for (int from = 0; from < kK; ++from) {
      double sum = 0;
      for (int to = 0; to < kK; ++to) sum += q[to][from];
      EXPECT_NEAR(sum, 1.0, 1e-15);
    }
    EXPECT_EQ(q[kEmpty][kEmpty], 1.0);
    EXPECT_EQ(q[kMask][kMask], 1.0);
    EXPECT_DOUBLE_EQ(q[4][4], s.alpha(t));
    EXPECT_DOUBLE_EQ(q[kMask][4], s.gamma(t));
  }
}

TEST(Marginal, MatchesMatrixProduct) {
  const Schedule s(kT);
  for (TokenId x0 = 0; x0 < kK; ++x0) {
    const auto oracle = matrix_marginals(s, x0);
    for (int t = 0; t <= kT; ++t) {
      const auto closed = marginal(x0, t, s).dense(kK);
      for (int j = 0; j < kK; ++j) EXPECT_NEAR(closed[j], oracle[t][j], 1e-12);
    }
  }
  const auto half = marginal(5, 50, Schedule(100));
  EXPECT_DOUBLE_EQ(half.prob(5), 0.5);
  EXPECT_DOUBLE_EQ(half.prob(kMask), 0.5);
  EXPECT_EQ(marginal(kEmpty, 37, Schedule(100)).prob(kEmpty), 1.0);
}

TEST(Posterior, MatchesBayesOracle) {
  const Schedule s(kT);
  for (TokenId x0 = 0; x0 < kK; ++x0) {
    const auto marg = matrix_marginals(s, x0);
    for (int t = 1; t <= kT; ++t) {
      const auto q = transition_matrix(s, t, kK);
      for (TokenId xt = 0; xt < kK; ++xt) {
        if (marg[t][xt] <= 0.0) {
          EXPECT_THROW(posterior(xt, x0, t, s), Error);
          continue;
        }
        std::vector<double> oracle(kK);
        for (int j = 0; j < kK; ++j) oracle[j] = q[xt][j] * marg[t - 1][j] / marg[t][xt];
        const auto closed = posterior(xt, x0, t, s).dense(kK);
        double sum = 0;
        for (int j = 0; j < kK; ++j) {
          EXPECT_NEAR(closed[j], oracle[j], 1e-10);
          sum += closed[j];
        }
        EXPECT_NEAR(sum, 1.0, 1e-12);
      }
    }
  }
}

TEST(Posterior, BayesConsistency) {
  const Schedule s(kT);
  for (TokenId x0 = 0; x0 < kK; ++x0) {
    for (int t = 1; t <= kT; ++t) {
      const auto q = transition_matrix(s, t, kK);
      const auto prev = marginal(x0, t - 1, s).dense(kK);
      const auto now = marginal(x0, t, s).dense(kK);
      for (TokenId xt = 0; xt < kK; ++xt) {
        double total = 0;
        for (int j = 0; j < kK; ++j) total += q[xt][j] * prev[j];
        EXPECT_NEAR(total, now[xt], 1e-12);
      }
    }
  }
}

TEST(Posterior, Examples) {
  const Schedule s4(4);
  const auto p = posterior(kMask, 5, 2, s4);
  EXPECT_NEAR(p.prob(5), 0.5, 1e-15);
  EXPECT_NEAR(p.prob(kMask), 0.5, 1e-15);
  EXPECT_EQ(posterior(kMask, 5, 1, s4).prob(5), 1.0);
  EXPECT_EQ(posterior(5, 5, 3, s4).prob(5), 1.0);
  try {
    posterior(6, 5, 2, s4);
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "zero-probability conditioning");
  }
}

TEST(ModelStep, MatchesExhaustiveSum) {
  const Schedule s(kT);
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> z(kK);
    for (double& v : z) v = 4.0 * rng.uniform() - 2.0;
    std::vector<double> w(kK);
    const double mx = *std::max_element(z.begin(), z.end());
    for (int j = 0; j < kK; ++j) w[j] = std::exp(z[j] - mx);
    const double norm = std::accumulate(w.begin(), w.end(), 0.0);
    for (double& v : w) v /= norm;
    const int t = 1 + static_cast<int>(rng.below(kT));
    // Predicted MASK or EMPTY mass has no posterior; by convention it keeps the cell masked.
    std::vector<double> oracle(kK, 0.0);
    for (TokenId x0 = 0; x0 < kK; ++x0) {
      if (is_absorbing(x0)) {
        oracle[kMask] += w[x0];
        continue;
      }
      const auto post = posterior(kMask, x0, t, s).dense(kK);
      for (int j = 0; j < kK; ++j) oracle[j] += w[x0] * post[j];
    }
    const auto p = model_step_distribution(z, kMask, t, s);
    double sum = 0;
    for (int j = 0; j < kK; ++j) {
      EXPECT_NEAR(p[j], oracle[j], 1e-12);
      EXPECT_GE(p[j], 0.0);
      sum += p[j];
    }
    EXPECT_NEAR(sum, 1.0, 1e-9);
    const auto unmasked = model_step_distribution(z, 4, t, s);
    EXPECT_EQ(unmasked[4], 1.0);
  }
}

TEST(ModelStep, OneHotGivesPosterior) {
  const Schedule s(kT);
  std::vector<double> z(kK, -1e30);
  z[5] = 0.0;
  for (int t = 1; t <= kT; ++t) {
    const auto p = model_step_distribution(z, kMask, t, s);
    const auto q = posterior(kMask, 5, t, s).dense(kK);
    for (int j = 0; j < kK; ++j) EXPECT_NEAR(p[j], q[j], 1e-15);
  }
}

RoleMask example_roles() {
  RoleMask r;
  r[TrackRole::chord] = TrackMark::source;
  r[TrackRole::bass] = TrackMark::target;
  r[TrackRole::drum] = TrackMark::empty;
  r[TrackRole::guitar] = TrackMark::source;
  r[TrackRole::piano] = TrackMark::target;
  r[TrackRole::string] = TrackMark::empty;
  r[TrackRole::melody] = TrackMark::source;
  return r;
}

TEST(Corrupt, Contracts) {
  Rng rng(2);
  const Schedule s(20);
  const ScoreGrid x0 = random_grid(rng, 24, 60);
  const RoleMask roles = example_roles();
  const ScoreGrid full = corrupt(x0, 20, roles, s, 1);
  const ScoreGrid none = corrupt(x0, 0, roles, s, 1);
  for (int r = 0; r < kNumRows; ++r) {
    for (int c = 0; c < 24; ++c) {
      switch (roles.roles[r / 2]) {
        case TrackMark::target:
          EXPECT_EQ(full.at(r, c), kMask);
          EXPECT_EQ(none.at(r, c), x0.at(r, c));
          break;
        case TrackMark::source:
          EXPECT_EQ(full.at(r, c), x0.at(r, c));
          break;
        case TrackMark::empty:
          EXPECT_EQ(full.at(r, c), kEmpty);
          break;
      }
    }
  }
  EXPECT_EQ(full.mark(TrackRole::drum), TrackMark::empty);
  EXPECT_THROW(corrupt(x0, 5, all_roles(TrackMark::source), s, 1), Error);
}

TEST(Corrupt, MaskedFractionWithinBinomialBand) {
  const Schedule s(20);
  Rng rng(3);
  const ScoreGrid x0 = random_grid(rng, 512, 100);
  RoleMask roles = all_roles(TrackMark::target);  // 14 * 512 = 7168 cells per draw
  for (int t : {5, 10, 15}) {
    int masked = 0;
    int cells = 0;
    for (std::uint64_t seed = 0; seed < 2; ++seed) {
      const ScoreGrid xt = corrupt(x0, t, roles, s, seed * 7919 + t);
      masked += xt.count(kMask);
      cells += kNumRows * 512;
    }
    const double p = s.gamma_bar(t);
    const double sigma = std::sqrt(cells * p * (1 - p));
    EXPECT_NEAR(masked, cells * p, 3 * sigma) << "t=" << t;
  }
}

TEST(Corrupt, EmptyIsFixedPoint) {
  const Schedule s(10);
  Rng rng(4);
  int trials = 0;
  while (trials < 10000) {
    ScoreGrid x0 = random_grid(rng, 8, 30);
    for (int i = 0; i < 30; ++i) x0.at(static_cast<int>(rng.below(kNumRows)), static_cast<int>(rng.below(8))) = kEmpty;
    const int t = static_cast<int>(rng.below(11));
    RoleMask roles;
    do {
      for (auto& m : roles.roles) m = static_cast<TrackMark>(rng.below(3));
    } while (std::none_of(roles.roles.begin(), roles.roles.end(), [](TrackMark m) { return m == TrackMark::target; }));
    const ScoreGrid xt = corrupt(x0, t, roles, s, rng.next_u64());
    for (int r = 0; r < kNumRows; ++r) {
      for (int c = 0; c < 8; ++c) {
        if (x0.at(r, c) != kEmpty) continue;
        ++trials;
        ASSERT_EQ(xt.at(r, c), kEmpty);
        if (t >= 1) {
          ASSERT_EQ(posterior(kEmpty, kEmpty, t, s).prob(kEmpty), 1.0);
          std::vector<double> z(30);
          for (double& v : z) v = rng.uniform();
          ASSERT_EQ(model_step_distribution(z, kEmpty, t, s)[kEmpty], 1.0);
        }
      }
    }
  }
}

TEST(Loss, OneHotPredictionIsZero) {
  const Schedule s(20);
  Rng rng(5);
  const int width = 6, k = 40;
  const ScoreGrid x0 = random_grid(rng, width, k);
  const RoleMask roles = example_roles();
  for (int t = 1; t <= 20; ++t) {
    const ScoreGrid xt = corrupt(x0, t, roles, s, 100 + t);
    std::vector<double> logits(static_cast<std::size_t>(kNumRows) * width * k, -1e4);
    for (int r = 0; r < kNumRows; ++r) {
      for (int c = 0; c < width; ++c) logits[(static_cast<std::size_t>(r) * width + c) * k + x0.at(r, c)] = 1e4;
    }
    const LossTerms loss = diffusion_loss(logits, x0, xt, t, roles, 0.001, s);
    EXPECT_NEAR(loss.vlb, 0.0, 1e-9);
    EXPECT_NEAR(loss.aux, 0.0, 1e-9);
    EXPECT_EQ(loss.total, loss.vlb + 0.001 * loss.aux);
    EXPECT_EQ(loss.target_cells, 4 * width);
  }
}

TEST(Loss, UniformLogitsCrossEntropyIsLog5) {
  const Schedule s(10);
  ScoreGrid x0(1, 5, kPad);
  x0.at(pitch_row(TrackRole::piano), 0) = 3;
  x0.at(duration_row(TrackRole::piano), 0) = 4;
  RoleMask roles = all_roles(TrackMark::source);
  roles[TrackRole::piano] = TrackMark::target;
  ScoreGrid xt = x0;
  xt.at(pitch_row(TrackRole::piano), 0) = kMask;
  const std::vector<double> logits(static_cast<std::size_t>(kNumRows) * 5, 0.0);
  const LossTerms loss = diffusion_loss(logits, x0, xt, 1, roles, 0.001, s);
  EXPECT_NEAR(loss.aux, std::log(5.0), 1e-12);
  EXPECT_EQ(loss.masked_cells, 1);
  EXPECT_EQ(loss.target_cells, 2);
  EXPECT_NEAR(loss.vlb, std::log(5.0) / 2, 1e-12);  // t = 1: negative log-likelihood
  EXPECT_NEAR(loss.total, loss.vlb + 0.001 * std::log(5.0), 1e-15);
}

TEST(Loss, KlMatchesDirectComputation) {
  const Schedule s(kT);
  Rng rng(6);
  ScoreGrid x0(1, kK, kPad);
  for (int r = 0; r < kNumRows; ++r) x0.at(r, 0) = 3 + static_cast<int>(rng.below(4));
  RoleMask roles = all_roles(TrackMark::source);
  roles[TrackRole::bass] = TrackMark::target;
  ScoreGrid xt = x0;
  xt.at(pitch_row(TrackRole::bass), 0) = kMask;
  std::vector<double> logits(static_cast<std::size_t>(kNumRows) * kK);
  for (double& v : logits) v = rng.uniform() * 3;
  for (int t = 2; t <= kT; ++t) {
    const LossTerms loss = diffusion_loss(logits, x0, xt, t, roles, 0.0, s);
    const std::span<const double> z(logits.data() + pitch_row(TrackRole::bass) * kK, kK);
    const auto q = posterior(kMask, x0.at(pitch_row(TrackRole::bass), 0), t, s).dense(kK);
    const auto p = model_step_distribution(z, kMask, t, s);
    double kl = 0;
    for (int j = 0; j < kK; ++j) {
      if (q[j] > 0) kl += q[j] * std::log(q[j] / p[j]);
    }
    EXPECT_NEAR(loss.vlb, kl / 2, 1e-12);
    EXPECT_GE(loss.vlb, 0.0);
  }
}

TEST(Loss, GradientMatchesFiniteDifference) {
  const Schedule s(kT);
  Rng rng(7);
  const int width = 3;
  const ScoreGrid x0 = random_grid(rng, width, kK);
  RoleMask roles = example_roles();
  const ScoreGrid xt = corrupt(x0, 5, roles, s, 99);
  std::vector<double> logits(static_cast<std::size_t>(kNumRows) * width * kK);
  for (double& v : logits) v = 2 * rng.uniform() - 1;
  std::vector<double> grad;
  diffusion_loss(logits, x0, xt, 5, roles, 0.3, s, &grad);
  double worst = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double h = 1e-5;
    auto plus = logits, minus = logits;
    plus[i] += h;
    minus[i] -= h;
    const double num = (diffusion_loss(plus, x0, xt, 5, roles, 0.3, s).total -
                        diffusion_loss(minus, x0, xt, 5, roles, 0.3, s).total) / (2 * h);
    worst = std::max(worst, std::abs(num - grad[i]));
  }
  EXPECT_LT(worst, 1e-8);
}

TEST(Loss, Errors) {
  const Schedule s(kT);
  ScoreGrid x0(1, kK, 4);
  RoleMask roles = all_roles(TrackMark::target);
  std::vector<double> logits(static_cast<std::size_t>(kNumRows) * kK, 0.0);
  EXPECT_THROW(diffusion_loss(logits, x0, x0, 1, roles, -1.0, s), Error);
  ScoreGrid xt = x0;
  xt.at(0, 0) = kMask;
  logits[2] = std::nan("");
  EXPECT_THROW(diffusion_loss(logits, x0, xt, 1, roles, 0.001, s), Error);
}

TEST(Gumbel, FrequenciesMatchSoftmax) {
  const std::vector<double> z = {0.0, 1.0, -0.5, 2.0};
  std::vector<double> p(4);
  softmax(z, p);
  Rng rng(8);
  const int n = 40000;
  std::vector<int> hits(4, 0);
  for (int i = 0; i < n; ++i) ++hits[gumbel_sample(z, 1.0, rng)];
  for (int j = 0; j < 4; ++j) {
    const double sigma = std::sqrt(n * p[j] * (1 - p[j]));
    EXPECT_NEAR(hits[j], n * p[j], 4 * sigma);
  }
  EXPECT_EQ(gumbel_sample(z, 0.0, rng), 3);
  EXPECT_THROW(gumbel_sample(z, -1.0, rng), Error);
}

ScoreGrid prepared_source(Rng& rng, int width, int k, const RoleMask& roles) {
  ScoreGrid g = random_grid(rng, width, k);
  for (TrackRole t : kAllTracks) {
    g.set_mark(t, roles[t]);
    if (roles[t] == TrackMark::empty) g.fill_track(t, kEmpty);
  }
  return g;
}

TEST(Generate, Contracts) {
  const Schedule s(12);
  Rng rng(9);
  const int k = 50;
  const RoleMask roles = example_roles();
  const ScoreGrid src = prepared_source(rng, 40, k, roles);
  const HashPredictor model(k, 17);
  SamplingOptions opt;
  opt.seed = 123;
  for (bool sample_x0 : {false, true}) {
    for (double temperature : {0.0, 0.7, 1.0}) {
      opt.sample_x0 = sample_x0;
      opt.temperature = temperature;
      opt.threads = 1;
      const GenerationResult a = generate(model, src, roles, s, opt);
      opt.threads = 4;
      const GenerationResult b = generate(model, src, roles, s, opt);
      EXPECT_EQ(a.score, b.score);
      EXPECT_EQ(a.masked_per_step, b.masked_per_step);
      EXPECT_EQ(a.score.count(kMask), 0);
      ASSERT_EQ(a.masked_per_step.size(), 12u);
      EXPECT_EQ(a.masked_per_step[0], 4 * 40);
      for (std::size_t i = 1; i < a.masked_per_step.size(); ++i) {
        EXPECT_LE(a.masked_per_step[i], a.masked_per_step[i - 1]);
      }
      for (int r = 0; r < kNumRows; ++r) {
        for (int c = 0; c < 40; ++c) {
          const TrackMark m = roles.roles[r / 2];
          if (m == TrackMark::source) {
            EXPECT_EQ(a.score.at(r, c), src.at(r, c));
          }
          if (m == TrackMark::empty) {
            EXPECT_EQ(a.score.at(r, c), kEmpty);
          }
          if (m == TrackMark::target) {
            EXPECT_FALSE(is_absorbing(a.score.at(r, c)));
          }
        }
      }
    }
  }
  opt.seed = 124;
  opt.temperature = 1.0;
  opt.sample_x0 = false;
  EXPECT_NE(generate(model, src, roles, s, opt).score, generate(model, src, roles, s, SamplingOptions{123}).score);
}

TEST(Generate, Errors) {
  const Schedule s(4);
  Rng rng(10);
  const ScoreGrid src = random_grid(rng, 8, 30);
  EXPECT_THROW(generate(HashPredictor(31, 1), src, example_roles(), s, {}), CompatibilityError);
  EXPECT_THROW(generate(HashPredictor(30, 1), src, all_roles(TrackMark::source), s, {}), Error);
}

TEST(Infill, AllTargetCellsEqualsGenerate) {
  const Schedule s(10);
  Rng rng(11);
  const int k = 45;
  const RoleMask roles = example_roles();
  ScoreGrid src = prepared_source(rng, 32, k, roles);
  const HashPredictor model(k, 5);
  SamplingOptions opt;
  opt.seed = 77;
  const GenerationResult g = generate(model, src, roles, s, opt);
  std::vector<std::uint8_t> mask(src.cells().size(), 0);
  for (int r = 0; r < kNumRows; ++r) {
    if (!roles.row_is(r, TrackMark::target)) continue;
    std::fill_n(mask.begin() + r * 32, 32, 1);
  }
  EXPECT_EQ(infill(model, src, mask, s, opt).score, g.score);
}

TEST(Infill, OnlyMaskedCellsChange) {
  const Schedule s(10);
  Rng rng(12);
  const int k = 45;
  const HashPredictor model(k, 6);
  for (int trial = 0; trial < 10; ++trial) {
    const ScoreGrid src = random_grid(rng, 48, k);
    std::vector<std::uint8_t> mask(src.cells().size(), 0);
    const int row = static_cast<int>(rng.below(kNumRows));
    const int lo = static_cast<int>(rng.below(40));
    for (int c = lo; c < lo + 8; ++c) mask[row * 48 + c] = 1;
    mask[rng.below(mask.size())] = 1;
    SamplingOptions opt;
    opt.seed = trial;
    opt.threads = 1 + trial % 3;
    const ScoreGrid out = infill(model, src, mask, s, opt).score;
    EXPECT_EQ(out.count(kMask), 0);
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (!mask[i]) {
        ASSERT_EQ(out.cells()[i], src.cells()[i]);
      }
    }
  }
  const ScoreGrid src = random_grid(rng, 8, k);
  try {
    infill(model, src, std::vector<std::uint8_t>(src.cells().size(), 0), s, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "nothing to generate");
  }
}

TEST(Infill, BridgesGapBetweenSongs) {
  const Schedule s(10);
  Rng rng(13);
  const int k = 45;
  const ScoreGrid a = random_grid(rng, 64, k);
  const ScoreGrid b = random_grid(rng, 64, k);
  ScoreGrid joined(160, k, kPad);
  std::vector<std::uint8_t> mask(joined.cells().size(), 0);
  for (int r = 0; r < kNumRows; ++r) {
    for (int c = 0; c < 64; ++c) {
      joined.at(r, c) = a.at(r, c);
      joined.at(r, c + 96) = b.at(r, c);
    }
    for (int c = 64; c < 96; ++c) mask[r * 160 + c] = 1;
  }
  const ScoreGrid out = infill(HashPredictor(k, 3), joined, mask, s, {}).score;
  for (int r = 0; r < kNumRows; ++r) {
    for (int c = 0; c < 160; ++c) {
      if (c < 64 || c >= 96) {
        ASSERT_EQ(out.at(r, c), joined.at(r, c));
      }
    }
  }
}

}  // namespace
}  // namespace trackdiff
