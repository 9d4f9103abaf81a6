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

#include "trackdiff/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "trackdiff/error.hpp"
#include "trackdiff/parallel.hpp"

namespace trackdiff {

Schedule::Schedule(int steps) : steps_(steps) {
  if (steps < 1) throw Error("diffusion needs at least one step");
  alpha_bar_.resize(static_cast<std::size_t>(steps) + 1);
  for (int t = 0; t <= steps; ++t) alpha_bar_[t] = 1.0 - static_cast<double>(t) / steps;
  alpha_bar_[steps] = 0.0;
}

double Schedule::alpha(int t) const {
  if (t < 1 || t > steps_) throw Error("timestep out of range: " + std::to_string(t));
  return alpha_bar_[t] / alpha_bar_[t - 1];
}

Schedule make_schedule(int steps) { return Schedule(steps); }

bool is_absorbing(TokenId id) { return id == kMask || id == kEmpty; }

std::vector<std::vector<double>> transition_matrix(const Schedule& schedule, int t, int vocab_size) {
  const double a = schedule.alpha(t);
  std::vector<std::vector<double>> q(vocab_size, std::vector<double>(vocab_size, 0.0));
  for (int n = 0; n < vocab_size; ++n) {
    if (is_absorbing(n)) {
      q[n][n] = 1.0;
    } else {
      q[n][n] = a;
      q[kMask][n] = 1.0 - a;
    }
  }
  return q;
}

std::vector<double> SparseDist::dense(int vocab_size) const {
  std::vector<double> d(vocab_size, 0.0);
  d.at(first) += p_first;
  d.at(second) += p_second;
  return d;
}

SparseDist marginal(TokenId x0, int t, const Schedule& schedule) {
  if (t < 0 || t > schedule.steps()) throw Error("timestep out of range: " + std::to_string(t));
  if (is_absorbing(x0)) return SparseDist{x0, 1.0, x0, 0.0};
  return SparseDist{x0, schedule.alpha_bar(t), kMask, schedule.gamma_bar(t)};
}

SparseDist posterior(TokenId xt, TokenId x0, int t, const Schedule& schedule) {
  if (t < 1 || t > schedule.steps()) throw Error("timestep out of range: " + std::to_string(t));
  if (marginal(x0, t, schedule).prob(xt) <= 0.0) throw Error("zero-probability conditioning");
  if (is_absorbing(x0) || xt == x0) return SparseDist{x0, 1.0, x0, 0.0};
  // xt is MASK and x0 a normal token.
  const double gb = schedule.gamma_bar(t);
  const double keep = schedule.gamma(t) * schedule.alpha_bar(t - 1) / gb;
  const double stay = schedule.gamma_bar(t - 1) / gb;
  return SparseDist{x0, keep, kMask, stay};
}

void validate_roles(const RoleMask& roles) {
  if (std::none_of(roles.roles.begin(), roles.roles.end(), [](TrackMark m) { return m == TrackMark::target; })) {
    throw Error("role mask needs at least one target track");
  }
}

RoleMask roles_from_score(const ScoreGrid& score) {
  RoleMask r;
  r.roles = score.marks();
  return r;
}

RoleMask sample_roles(const ScoreGrid& x0, Rng& rng) {
  RoleMask roles;
  std::vector<TrackRole> involved;
  for (TrackRole t : kInstrumentTracks) {
    if (x0.track_all(t, kEmpty)) roles[t] = TrackMark::empty;
    else involved.push_back(t);
  }
  if (involved.empty()) throw Error("score has no involved instrument track");
  roles[TrackRole::chord] = x0.track_all(TrackRole::chord, kEmpty) ? TrackMark::empty : TrackMark::source;

  // Rejection keeps the draw uniform over assignments with at least one target.
  for (;;) {
    bool any_target = false;
    for (TrackRole t : involved) {
      roles[t] = static_cast<TrackMark>(rng.below(3));
      any_target |= roles[t] == TrackMark::target;
    }
    if (any_target) return roles;
  }
}

ScoreGrid corrupt(const ScoreGrid& x0, int t, const RoleMask& roles, const Schedule& schedule, std::uint64_t seed) {
  validate_roles(roles);
  ScoreGrid xt = x0;
  const Rng base(seed);
  for (int r = 0; r < kNumRows; ++r) {
    const TrackMark m = roles.roles[r / 2];
    for (int c = 0; c < x0.width(); ++c) {
      if (m == TrackMark::empty) {
        xt.at(r, c) = kEmpty;
      } else if (m == TrackMark::target) {
        const SparseDist q = marginal(x0.at(r, c), t, schedule);
        Rng cell = base.fork({static_cast<std::uint64_t>(r), static_cast<std::uint64_t>(c)});
        xt.at(r, c) = cell.uniform() < q.p_first ? q.first : q.second;
      }
    }
  }
  for (TrackRole tr : kAllTracks) xt.set_mark(tr, roles[tr]);
  return xt;
}

void softmax(std::span<const double> logits, std::span<double> out) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : logits) mx = std::max(mx, v);
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::isinf(logits[i]) && logits[i] < 0 ? 0.0 : std::exp(logits[i] - mx);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
}

std::vector<double> model_step_distribution(std::span<const double> x0_logits, TokenId xt, int t,
                                            const Schedule& schedule) {
  const int k = static_cast<int>(x0_logits.size());
  std::vector<double> p(k, 0.0);
  if (xt != kMask) {
    p.at(xt) = 1.0;
    return p;
  }
  std::vector<double> s(k);
  softmax(x0_logits, s);
  const double gb = schedule.gamma_bar(t);
  const double keep = schedule.gamma(t) * schedule.alpha_bar(t - 1) / gb;
  const double stay = schedule.gamma_bar(t - 1) / gb;
  double absorbed = 0.0;
  for (int i = 0; i < k; ++i) {
    if (is_absorbing(i)) absorbed += s[i];
    else p[i] = keep * s[i];
  }
  p[kMask] = stay * (1.0 - absorbed) + absorbed;
  return p;
}

LossTerms diffusion_loss(std::span<const double> logits, const ScoreGrid& x0, const ScoreGrid& xt, int t,
                         const RoleMask& roles, double lambda, const Schedule& schedule, std::vector<double>* grad) {
  if (lambda < 0.0) throw Error("lambda must be non-negative");
  if (t < 1 || t > schedule.steps()) throw Error("timestep out of range: " + std::to_string(t));
  const int width = x0.width();
  const int k = x0.vocab_size();
  const std::size_t expected = static_cast<std::size_t>(kNumRows) * width * k;
  if (logits.size() != expected) throw Error("logit shape mismatch");
  if (grad) grad->assign(expected, 0.0);

  const double gb = schedule.gamma_bar(t);
  const double keep = schedule.gamma(t) * schedule.alpha_bar(t - 1) / gb;
  const double stay = schedule.gamma_bar(t - 1) / gb;

  LossTerms out;
  out.lambda = lambda;
  for (int r = 0; r < kNumRows; ++r) {
    if (!roles.row_is(r, TrackMark::target)) continue;
    for (int c = 0; c < width; ++c) {
      ++out.target_cells;
      if (xt.at(r, c) == kMask && !is_absorbing(x0.at(r, c))) ++out.masked_cells;
    }
  }
  if (out.target_cells == 0) throw Error("no target cells");

  std::vector<double> s(k);
  for (int r = 0; r < kNumRows; ++r) {
    if (!roles.row_is(r, TrackMark::target)) continue;
    for (int c = 0; c < width; ++c) {
      const TokenId truth = x0.at(r, c);
      if (xt.at(r, c) != kMask || is_absorbing(truth)) continue;
      const std::size_t base = (static_cast<std::size_t>(r) * width + c) * k;
      std::span<const double> z = logits.subspan(base, k);
      for (double v : z) {
        if (!std::isfinite(v)) throw Error("non-finite logits");
      }
      softmax(z, s);
      const double absorbed = s[kMask] + s[kEmpty];
      const double log_truth = std::log(std::max(s[truth], std::numeric_limits<double>::min()));

      // KL(q || p) with q = {x0: keep, MASK: stay}, p = {x0: keep*s, MASK: stay + keep*absorbed}.
      const double p_mask = stay + keep * absorbed;
      double kl = -keep * log_truth;
      if (stay > 0.0) kl += stay * (std::log(stay) - std::log(p_mask));
      const double ce = -log_truth;
      out.vlb += kl;
      out.aux += ce;

      if (grad) {
        const double w_vlb = 1.0 / out.target_cells;
        const double w_aux = lambda / out.masked_cells;
        const double mask_coef = stay > 0.0 ? stay * keep / p_mask : 0.0;
        for (int j = 0; j < k; ++j) {
          const double d_log_truth = (j == truth ? 1.0 : 0.0) - s[j];
          const double d_absorbed = (is_absorbing(j) ? s[j] : 0.0) - absorbed * s[j];
          const double d_kl = -keep * d_log_truth - mask_coef * d_absorbed;
          (*grad)[base + j] = w_vlb * d_kl - w_aux * d_log_truth;
        }
      }
    }
  }
  out.vlb /= out.target_cells;
  out.aux = out.masked_cells ? out.aux / out.masked_cells : 0.0;
  out.total = out.vlb + lambda * out.aux;
  if (!std::isfinite(out.total)) throw Error("non-finite loss");
  return out;
}

FlagGrid flags_for_roles(const RoleMask& roles, int width) {
  FlagGrid flags(static_cast<std::size_t>(kNumRows) * width, 1);
  for (int r = 0; r < kNumRows; ++r) {
    if (!roles.row_is(r, TrackMark::target)) continue;
    std::fill_n(flags.begin() + static_cast<std::ptrdiff_t>(r) * width, width, 0);
  }
  return flags;
}

int gumbel_sample(std::span<const double> logits, double temperature, Rng& rng) {
  if (temperature < 0.0) throw Error("temperature must be non-negative");
  int best = 0;
  double best_v = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < logits.size(); ++i) {
    double v = logits[i];
    if (temperature > 0.0) {
      const double g = -std::log(-std::log(rng.uniform_open()));
      v = v / temperature + g;
    }
    if (v > best_v) {
      best_v = v;
      best = static_cast<int>(i);
    }
  }
  return best;
}

RowSupport full_support(int vocab_size) {
  RowSupport s;
  for (auto& row : s) {
    row.assign(vocab_size, 1);
    row[kMask] = 0;
    row[kEmpty] = 0;
  }
  return s;
}

RowSupport vocabulary_support(const Vocabulary& vocab) {
  RowSupport s;
  for (int r = 0; r < kNumRows; ++r) {
    s[r].assign(vocab.size(), 0);
    for (TokenId id = 0; id < vocab.size(); ++id) {
      s[r][id] = !is_absorbing(id) && vocab.is_valid_for_row(id, r);
    }
  }
  return s;
}

namespace {

GenerationResult denoise(const X0Predictor& model, ScoreGrid x, const std::vector<std::uint8_t>& generate_mask,
                         const Schedule& schedule, const SamplingOptions& options) {
  const int width = x.width();
  const int k = model.vocab_size();
  if (x.vocab_size() != k) throw CompatibilityError("vocab mismatch: model K differs from score K");
  if (width > model.max_width()) throw CompatibilityError("score width exceeds model max_L");
  if (options.temperature < 0.0) throw Error("temperature must be non-negative");
  const RowSupport fallback = options.support ? RowSupport{} : full_support(k);
  const RowSupport& support = options.support ? *options.support : fallback;
  for (const auto& row : support) {
    if (static_cast<int>(row.size()) != k) throw CompatibilityError("support size differs from K");
  }

  const ScoreGrid truth = x;
  FlagGrid flags(generate_mask.size());
  for (std::size_t i = 0; i < flags.size(); ++i) flags[i] = generate_mask[i] ? 0 : 1;

  GenerationResult result;
  const Rng base(options.seed);
  std::vector<double> logits;
  for (int t = schedule.steps(); t >= 1; --t) {
    result.masked_per_step.push_back(x.count(kMask));
    model.predict(x, t, flags, logits);
    ScoreGrid next = x;
    parallel_for(kNumRows, options.threads, [&](int r) {
      std::vector<double> z(k);
      for (int c = 0; c < width; ++c) {
        const std::size_t cell = static_cast<std::size_t>(r) * width + c;
        if (!generate_mask[cell] || x.at(r, c) != kMask) continue;
        const double* src = logits.data() + cell * k;
        for (int j = 0; j < k; ++j) {
          z[j] = support[r][j] ? src[j] : -std::numeric_limits<double>::infinity();
        }
        Rng rng = base.fork({static_cast<std::uint64_t>(t), static_cast<std::uint64_t>(r),
                             static_cast<std::uint64_t>(c)});
        if (options.sample_x0) {
          const int x0 = gumbel_sample(z, options.temperature, rng);
          const SparseDist q = posterior(kMask, x0, t, schedule);
          next.at(r, c) = rng.uniform() < q.p_first ? q.first : q.second;
          continue;
        }
        if (options.temperature == 0.0) {
          const int arg = gumbel_sample(z, 0.0, rng);
          std::fill(z.begin(), z.end(), -std::numeric_limits<double>::infinity());
          z[arg] = 0.0;
        } else {
          for (double& v : z) v /= options.temperature;
        }
        const std::vector<double> p = model_step_distribution(z, kMask, t, schedule);
        double u = rng.uniform();
        TokenId pick = kMask;
        for (int j = 0; j < k; ++j) {
          if (p[j] <= 0.0) continue;
          pick = j;
          if (u < p[j]) break;
          u -= p[j];
        }
        next.at(r, c) = pick;
      }
    });
    // Trusted cells go back to ground truth (sources) or EMPTY (unused tracks).
    for (std::size_t i = 0; i < generate_mask.size(); ++i) {
      if (!generate_mask[i]) next.cells()[i] = truth.cells()[i];
    }
    x = std::move(next);
  }
  result.score = std::move(x);
  return result;
}

}  // namespace

GenerationResult generate(const X0Predictor& model, const ScoreGrid& source, const RoleMask& roles,
                          const Schedule& schedule, const SamplingOptions& options) {
  validate_roles(roles);
  const int width = source.width();
  ScoreGrid x = source;
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(kNumRows) * width, 0);
  for (TrackRole t : kAllTracks) {
    x.set_mark(t, roles[t]);
    if (roles[t] == TrackMark::empty) x.fill_track(t, kEmpty);
    if (roles[t] != TrackMark::target) continue;
    x.fill_track(t, kMask);
    for (int row : {pitch_row(t), duration_row(t)}) {
      std::fill_n(mask.begin() + static_cast<std::ptrdiff_t>(row) * width, width, 1);
    }
  }
  return denoise(model, std::move(x), mask, schedule, options);
}

GenerationResult infill(const X0Predictor& model, const ScoreGrid& score, const std::vector<std::uint8_t>& mask,
                        const Schedule& schedule, const SamplingOptions& options) {
  if (mask.size() != score.cells().size()) throw Error("mask shape mismatch");
  if (std::none_of(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; })) {
    throw Error("nothing to generate");
  }
  ScoreGrid x = score;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) x.cells()[i] = kMask;
  }
  return denoise(model, std::move(x), mask, schedule, options);
}

}  // namespace trackdiff
