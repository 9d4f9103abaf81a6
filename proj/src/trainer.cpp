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

#include "trackdiff/trainer.hpp"

#include <cmath>
#include <cstring>
#include <nlohmann/json.hpp>

#include "trackdiff/error.hpp"
#include "trackdiff/parallel.hpp"

namespace trackdiff {

double learning_rate(const AdamWConfig& config, std::int64_t step) {
  if (step < 0) throw Error("negative optimizer step");
  if (config.warmup_steps > 0 && step < config.warmup_steps) {
    return config.lr * static_cast<double>(step + 1) / static_cast<double>(config.warmup_steps);
  }
  if (config.total_steps <= 0) return config.lr;
  const std::int64_t span = std::max<std::int64_t>(1, config.total_steps - config.warmup_steps);
  const double frac = static_cast<double>(config.total_steps - step) / static_cast<double>(span);
  return config.lr * std::clamp(frac, 0.0, 1.0);
}

void adamw_update(DenoiserParams& params, std::span<const double> grad, OptimizerState& state,
                  const AdamWConfig& config) {
  const std::size_t n = params.size();
  if (grad.size() != n) throw Error("gradient size mismatch");
  if (state.m.empty() && state.v.empty()) {
    state.m.assign(n, 0.0);
    state.v.assign(n, 0.0);
  }
  if (state.m.size() != n || state.v.size() != n) throw CompatibilityError("optimizer state size mismatch");
  const double lr = learning_rate(config, state.step);
  ++state.step;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  std::vector<double>& p = params.values();
  for (const TensorSpec& t : params.tensors()) {
    const double wd = t.decay ? config.weight_decay : 0.0;
    for (std::size_t i = t.offset; i < t.offset + t.size(); ++i) {
      state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * grad[i];
      state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * grad[i] * grad[i];
      const double mhat = state.m[i] / c1;
      const double vhat = state.v[i] / c2;
      p[i] -= lr * (mhat / (std::sqrt(vhat) + config.eps) + wd * p[i]);
    }
  }
}

TrainingExample make_training_example(const ScoreGrid& x0, const Schedule& schedule, Rng rng) {
  TrainingExample ex;
  ex.roles = sample_roles(x0, rng);
  ex.t = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(schedule.steps())));
  ex.xt = corrupt(x0, ex.t, ex.roles, schedule, rng.next_u64());
  return ex;
}

LossTerms example_loss(const DenoiserParams& params, const ScoreGrid& x0, const TrainingExample& ex,
                       const Schedule& schedule, double lambda, std::vector<double>* grad) {
  if (schedule.steps() != params.config().steps) throw CompatibilityError("schedule T differs from model T");
  const FlagGrid flags = flags_for_roles(ex.roles, x0.width());
  std::vector<double> logits;
  if (!grad) {
    forward(params, ex.xt, ex.t, flags, logits);
    return diffusion_loss(logits, x0, ex.xt, ex.t, ex.roles, lambda, schedule);
  }
  ForwardCache cache;
  forward(params, ex.xt, ex.t, flags, logits, &cache);
  std::vector<double> dlogits;
  const LossTerms loss = diffusion_loss(logits, x0, ex.xt, ex.t, ex.roles, lambda, schedule, &dlogits);
  backward(params, cache, dlogits, *grad);
  return loss;
}

namespace {

LossTerms mean_terms(const std::vector<LossTerms>& parts, double lambda) {
  LossTerms out;
  out.lambda = lambda;
  for (const LossTerms& p : parts) {
    out.vlb += p.vlb;
    out.aux += p.aux;
    out.total += p.total;
    out.target_cells += p.target_cells;
    out.masked_cells += p.masked_cells;
  }
  const double n = static_cast<double>(parts.size());
  out.vlb /= n;
  out.aux /= n;
  out.total /= n;
  return out;
}

}  // namespace

LossTerms train_step(DenoiserParams& params, OptimizerState& state, std::span<const ScoreGrid> batch,
                     const TrainConfig& config) {
  if (batch.empty()) throw Error("empty batch");
  const Schedule schedule(config.steps);
  const std::size_t n = batch.size();
  std::vector<std::vector<double>> grads(n);
  std::vector<LossTerms> parts(n);
  const Rng base(config.seed);
  const auto step = static_cast<std::uint64_t>(state.step);
  parallel_for(static_cast<int>(n), config.threads, [&](int i) {
    const TrainingExample ex = make_training_example(batch[i], schedule, base.fork({step, static_cast<std::uint64_t>(i)}));
    grads[i].assign(params.size(), 0.0);
    parts[i] = example_loss(params, batch[i], ex, schedule, config.lambda, &grads[i]);
  });
  // Summed in example order so the result does not depend on thread count.
  std::vector<double> grad(params.size(), 0.0);
  for (const auto& g : grads) {
    for (std::size_t j = 0; j < grad.size(); ++j) grad[j] += g[j];
  }
  for (double& g : grad) g /= static_cast<double>(n);
  const LossTerms loss = mean_terms(parts, config.lambda);
  if (!std::isfinite(loss.total)) throw Error("non-finite loss at step " + std::to_string(state.step));
  adamw_update(params, grad, state, config.optimizer);
  return loss;
}

LossTerms evaluate_loss(const DenoiserParams& params, std::span<const ScoreGrid> scores, const TrainConfig& config,
                        std::uint64_t draw_seed) {
  if (scores.empty()) throw Error("empty evaluation set");
  const Schedule schedule(config.steps);
  std::vector<LossTerms> parts(scores.size());
  const Rng base(draw_seed);
  parallel_for(static_cast<int>(scores.size()), config.threads, [&](int i) {
    const TrainingExample ex = make_training_example(scores[i], schedule, base.fork({static_cast<std::uint64_t>(i)}));
    parts[i] = example_loss(params, scores[i], ex, schedule, config.lambda, nullptr);
  });
  return mean_terms(parts, config.lambda);
}

GradCheckReport grad_check(const DenoiserParams& params, const ScoreGrid& x0, const TrainingExample& ex,
                           const Schedule& schedule, double lambda, const GradCheckOptions& options) {
  std::vector<double> analytic(params.size(), 0.0);
  example_loss(params, x0, ex, schedule, lambda, &analytic);

  std::vector<int> pool = options.tensors;
  if (pool.empty()) {
    for (std::size_t i = 0; i < params.tensors().size(); ++i) pool.push_back(static_cast<int>(i));
  }
  std::size_t total = 0;
  for (int t : pool) total += params.tensors().at(t).size();
  if (total == 0) throw Error("no parameters to check");

  DenoiserParams probe = params;
  auto loss_at = [&](std::size_t idx, double delta) {
    const double saved = probe.values()[idx];
    probe.values()[idx] = saved + delta;
    const double v = example_loss(probe, x0, ex, schedule, lambda, nullptr).total;
    probe.values()[idx] = saved;
    return v;
  };

  GradCheckReport report;
  Rng rng(options.seed);
  const double e = options.eps;
  for (int s = 0; s < options.samples; ++s) {
    std::size_t pick = rng.below(total);
    std::size_t idx = 0;
    for (int t : pool) {
      const TensorSpec& spec = params.tensors()[t];
      if (pick < spec.size()) {
        idx = spec.offset + pick;
        break;
      }
      pick -= spec.size();
    }
    double numeric;
    if (options.five_point) {
      numeric = (-loss_at(idx, 2 * e) + 8 * loss_at(idx, e) - 8 * loss_at(idx, -e) + loss_at(idx, -2 * e)) / (12 * e);
    } else {
      numeric = (loss_at(idx, e) - loss_at(idx, -e)) / (2 * e);
    }
    const double a = analytic[idx];
    const double abs_err = std::abs(a - numeric);
    const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), options.rel_floor});
    report.max_abs_error = std::max(report.max_abs_error, abs_err);
    report.max_rel_error = std::max(report.max_rel_error, rel);
    ++report.samples;
  }
  return report;
}

namespace {

constexpr char kOptMagic[8] = {'G', 'E', 'T', 'O', 'P', 'T', '0', '1'};

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(std::span<const std::uint8_t> bytes, std::size_t& pos) {
  if (bytes.size() - pos < 8) throw ParseError("unexpected end");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | bytes[pos + i];
  pos += 8;
  return v;
}

}  // namespace

std::vector<std::uint8_t> save_optimizer_state(const OptimizerState& state) {
  if (state.m.size() != state.v.size()) throw Error("optimizer state size mismatch");
  nlohmann::ordered_json header;
  header["step"] = state.step;
  header["size"] = state.m.size();
  const std::string json = header.dump();
  std::vector<std::uint8_t> out(kOptMagic, kOptMagic + 8);
  put_u64(out, json.size());
  out.insert(out.end(), json.begin(), json.end());
  for (const auto* vec : {&state.m, &state.v}) {
    for (double d : *vec) {
      std::uint64_t bits;
      std::memcpy(&bits, &d, sizeof bits);
      put_u64(out, bits);
    }
  }
  put_u64(out, fnv1a64(out));
  return out;
}

OptimizerState load_optimizer_state(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || !std::equal(bytes.begin(), bytes.begin() + 8, kOptMagic)) throw ParseError("bad magic");
  std::size_t pos = 8;
  const std::uint64_t len = get_u64(bytes, pos);
  if (len > bytes.size() - pos) throw ParseError("unexpected end");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                                   bytes.begin() + static_cast<std::ptrdiff_t>(pos + len));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("optimizer header: ") + e.what());
  }
  pos += len;
  OptimizerState state;
  state.step = header.at("step").get<std::int64_t>();
  const auto n = header.at("size").get<std::size_t>();
  if ((bytes.size() - pos) / 8 < 2 * n + 1) throw ParseError("unexpected end");
  for (auto* vec : {&state.m, &state.v}) {
    vec->resize(n);
    for (double& d : *vec) {
      const std::uint64_t bits = get_u64(bytes, pos);
      std::memcpy(&d, &bits, sizeof d);
    }
  }
  const std::size_t body = pos;
  if (get_u64(bytes, pos) != fnv1a64(bytes.subspan(0, body))) throw ParseError("checksum mismatch");
  if (pos != bytes.size()) throw ParseError("trailing bytes");
  return state;
}

}  // namespace trackdiff
