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
#include <string>
#include <vector>

#include "trackdiff/diffusion.hpp"
#include "trackdiff/score.hpp"

namespace trackdiff {

struct DenoiserConfig {
  int d = 16;          // per-cell token embedding width
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int ffn_mult = 4;
  int steps = 20;      // T; the timestep table has T + 1 rows
  int max_width = kMaxWidth;
  int vocab_size = 0;  // K
  bool rope = true;

  static DenoiserConfig toy(int vocab_size);
  static DenoiserConfig full(int vocab_size);  // 12 layers, d = 96, d_model = 768, T = 100
  static DenoiserConfig preset(const std::string& name, int vocab_size);

  int head_dim() const { return d_model / n_heads; }
  void validate() const;

  std::string to_json() const;
  static DenoiserConfig from_json(const std::string& text);

  bool operator==(const DenoiserConfig&) const = default;
};

struct TensorSpec {
  std::string name;
  int rows = 0;
  int cols = 0;
  std::size_t offset = 0;
  bool decay = false;  // weight decay applies

  std::size_t size() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
};

// All learnable tensors in one flat buffer, in declared order. Gradients and
// optimizer moments share the layout.
class DenoiserParams {
 public:
  struct Layer {
    int ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, ff1_w, ff1_b, ff2_w, ff2_b;
  };

  DenoiserParams() = default;
  explicit DenoiserParams(const DenoiserConfig& config);

  // normal(0, 0.02) weights/embeddings, zero biases, unit layer-norm gains.
  void initialize(std::uint64_t seed);

  const DenoiserConfig& config() const { return config_; }
  const std::vector<TensorSpec>& tensors() const { return tensors_; }
  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }
  std::size_t size() const { return values_.size(); }

  const double* data(int tensor) const { return values_.data() + tensors_[tensor].offset; }
  double* data(int tensor) { return values_.data() + tensors_[tensor].offset; }

  int tok_emb = 0, flag_emb = 0, in1_w = 0, in1_b = 0, in2_w = 0, in2_b = 0, t_emb = 0;
  std::vector<Layer> layers;
  int lnf_g = 0, lnf_b = 0, out1_w = 0, out1_b = 0, out2_w = 0, out2_b = 0, head_w = 0, head_b = 0;

  bool operator==(const DenoiserParams& o) const { return config_ == o.config_ && values_ == o.values_; }

 private:
  int add(const std::string& name, int rows, int cols, bool decay);

  DenoiserConfig config_;
  std::vector<TensorSpec> tensors_;
  std::vector<double> values_;
};

// Rotates consecutive (2i, 2i+1) pairs of each row by pos * 10000^(-2i/head_dim).
// x is rows x head_dim row-major; inverse applies the transpose rotation.
void apply_rope(std::span<double> x, int head_dim, std::span<const int> positions, bool inverse = false);

struct ForwardOptions {
  int position_offset = 0;
  int threads = 1;
};

// Activations kept for the backward pass.
struct ForwardCache {
  int width = 0;
  int t = 0;
  std::vector<TokenId> tokens;
  FlagGrid flags;
  std::vector<int> positions;
  std::vector<double> x0, h1, a1;  // embedding, input MLP
  struct Layer {
    std::vector<double> x_in, n1, mean1, rstd1, q, k, v, probs, o, x_mid, n2, mean2, rstd2, f1, g;
  };
  std::vector<Layer> layers;
  std::vector<double> x_out, nf, meanf, rstdf, u1, ua, z;
};

// One row per score column: the 14 row embeddings (token + flag vector) concatenated.
std::vector<double> embed(const ScoreGrid& xt, const FlagGrid& flags, const DenoiserParams& params);

// logits: 14 x L x K row-major.
void forward(const DenoiserParams& params, const ScoreGrid& xt, int t, const FlagGrid& flags,
             std::vector<double>& logits, ForwardCache* cache = nullptr, const ForwardOptions& options = {});

// Accumulates d loss / d params into grad (same layout as params.values()).
void backward(const DenoiserParams& params, const ForwardCache& cache, std::span<const double> dlogits,
              std::vector<double>& grad);

class Denoiser : public X0Predictor {
 public:
  explicit Denoiser(DenoiserParams params, int threads = 1) : params_(std::move(params)), threads_(threads) {}

  int vocab_size() const override { return params_.config().vocab_size; }
  int max_width() const override { return params_.config().max_width; }
  void predict(const ScoreGrid& xt, int t, const FlagGrid& flags, std::vector<double>& logits) const override;

  const DenoiserParams& params() const { return params_; }
  DenoiserParams& params() { return params_; }
  void set_threads(int threads) { threads_ = threads; }

 private:
  DenoiserParams params_;
  int threads_ = 1;
};

// Checkpoint: "GETDIFF1", u64 LE JSON length, JSON config, f64 LE parameter
// blob in declared tensor order, u64 FNV-1a over all preceding bytes.
std::vector<std::uint8_t> save_checkpoint(const DenoiserParams& params);
// expected_vocab < 0 skips the vocabulary check.
DenoiserParams load_checkpoint(std::span<const std::uint8_t> bytes, int expected_vocab = -1);

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t seed = 0xCBF29CE484222325ULL);

}  // namespace trackdiff
