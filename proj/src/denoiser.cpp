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

#include "trackdiff/denoiser.hpp"

#include <cmath>
#include <cstring>
#include <nlohmann/json.hpp>

#include "trackdiff/error.hpp"
#include "trackdiff/parallel.hpp"

namespace trackdiff {

DenoiserConfig DenoiserConfig::toy(int vocab_size) {
  DenoiserConfig c;
  c.vocab_size = vocab_size;
  return c;
}

DenoiserConfig DenoiserConfig::full(int vocab_size) {
  DenoiserConfig c;
  c.d = 96;
  c.d_model = 768;
  c.n_layers = 12;
  c.n_heads = 12;
  c.steps = 100;
  c.vocab_size = vocab_size;
  return c;
}

DenoiserConfig DenoiserConfig::preset(const std::string& name, int vocab_size) {
  if (name == "toy") return toy(vocab_size);
  if (name == "full") return full(vocab_size);
  throw Error("unknown preset '" + name + "'");
}

void DenoiserConfig::validate() const {
  if (d < 1 || d_model < 1 || n_layers < 0 || n_heads < 1 || ffn_mult < 1) throw Error("bad denoiser dimensions");
  if (d_model % n_heads != 0) throw Error("d_model must be divisible by n_heads");
  if (head_dim() % 2 != 0) throw Error("head dimension must be even for rotary attention");
  if (steps < 1) throw Error("steps must be >= 1");
  if (max_width < 1 || max_width > kMaxWidth) throw Error("max_width out of range");
  if (vocab_size < 3) throw Error("vocab_size must cover the special tokens");
}

std::string DenoiserConfig::to_json() const {
  nlohmann::ordered_json j;
  j["d"] = d;
  j["d_model"] = d_model;
  j["n_layers"] = n_layers;
  j["n_heads"] = n_heads;
  j["ffn_mult"] = ffn_mult;
  j["steps"] = steps;
  j["max_width"] = max_width;
  j["vocab_size"] = vocab_size;
  j["rope"] = rope;
  return j.dump();
}

DenoiserConfig DenoiserConfig::from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    DenoiserConfig c;
    c.d = j.at("d");
    c.d_model = j.at("d_model");
    c.n_layers = j.at("n_layers");
    c.n_heads = j.at("n_heads");
    c.ffn_mult = j.at("ffn_mult");
    c.steps = j.at("steps");
    c.max_width = j.at("max_width");
    c.vocab_size = j.at("vocab_size");
    c.rope = j.value("rope", true);
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("denoiser config: ") + e.what());
  }
}

int DenoiserParams::add(const std::string& name, int rows, int cols, bool decay) {
  TensorSpec spec{name, rows, cols, values_.size(), decay};
  values_.resize(values_.size() + spec.size(), 0.0);
  tensors_.push_back(spec);
  return static_cast<int>(tensors_.size()) - 1;
}

DenoiserParams::DenoiserParams(const DenoiserConfig& config) : config_(config) {
  config.validate();
  const int d = config.d, dm = config.d_model, k = config.vocab_size, ff = config.ffn_mult * config.d_model;
  tok_emb = add("tok_emb", k, d, true);
  flag_emb = add("flag_emb", 2, d, true);
  in1_w = add("in1_w", kNumRows * d, dm, true);
  in1_b = add("in1_b", 1, dm, false);
  in2_w = add("in2_w", dm, dm, true);
  in2_b = add("in2_b", 1, dm, false);
  t_emb = add("t_emb", config.steps + 1, dm, true);
  for (int l = 0; l < config.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    Layer L;
    L.ln1_g = add(p + "ln1_g", 1, dm, false);
    L.ln1_b = add(p + "ln1_b", 1, dm, false);
    L.wq = add(p + "wq", dm, dm, true);
    L.bq = add(p + "bq", 1, dm, false);
    L.wk = add(p + "wk", dm, dm, true);
    L.bk = add(p + "bk", 1, dm, false);
    L.wv = add(p + "wv", dm, dm, true);
    L.bv = add(p + "bv", 1, dm, false);
    L.wo = add(p + "wo", dm, dm, true);
    L.bo = add(p + "bo", 1, dm, false);
    L.ln2_g = add(p + "ln2_g", 1, dm, false);
    L.ln2_b = add(p + "ln2_b", 1, dm, false);
    L.ff1_w = add(p + "ff1_w", dm, ff, true);
    L.ff1_b = add(p + "ff1_b", 1, ff, false);
    L.ff2_w = add(p + "ff2_w", ff, dm, true);
    L.ff2_b = add(p + "ff2_b", 1, dm, false);
    layers.push_back(L);
  }
  lnf_g = add("lnf_g", 1, dm, false);
  lnf_b = add("lnf_b", 1, dm, false);
  out1_w = add("out1_w", dm, dm, true);
  out1_b = add("out1_b", 1, dm, false);
  out2_w = add("out2_w", dm, kNumRows * d, true);
  out2_b = add("out2_b", 1, kNumRows * d, false);
  head_w = add("head_w", d, k, true);
  head_b = add("head_b", 1, k, false);
}

void DenoiserParams::initialize(std::uint64_t seed) {
  Rng rng(seed);
  std::fill(values_.begin(), values_.end(), 0.0);
  for (const TensorSpec& t : tensors_) {
    double* p = values_.data() + t.offset;
    const bool gain = t.name.ends_with("_g");
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (gain) {
        p[i] = 1.0;
      } else if (t.decay) {
        // Box-Muller, one value per pair of uniforms.
        const double u1 = rng.uniform_open();
        const double u2 = rng.uniform();
        p[i] = 0.02 * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
      }
    }
  }
}

namespace {

constexpr double kLnEps = 1e-5;

// Y[n x out] = X[n x in] W[in x out] + b
void linear(const double* x, int n, int in, const double* w, const double* b, int out, double* y) {
  for (int i = 0; i < n; ++i) {
    double* yi = y + static_cast<std::size_t>(i) * out;
    if (b) std::memcpy(yi, b, sizeof(double) * out);
    else std::fill_n(yi, out, 0.0);
    const double* xi = x + static_cast<std::size_t>(i) * in;
    for (int p = 0; p < in; ++p) {
      const double xv = xi[p];
      if (xv == 0.0) continue;
      const double* wp = w + static_cast<std::size_t>(p) * out;
      for (int j = 0; j < out; ++j) yi[j] += xv * wp[j];
    }
  }
}

void linear_backward(const double* x, int n, int in, const double* w, int out, const double* dy, double* dx,
                     double* dw, double* db) {
  for (int i = 0; i < n; ++i) {
    const double* dyi = dy + static_cast<std::size_t>(i) * out;
    if (db) {
      for (int j = 0; j < out; ++j) db[j] += dyi[j];
    }
    const double* xi = x + static_cast<std::size_t>(i) * in;
    for (int p = 0; p < in; ++p) {
      const double* wp = w + static_cast<std::size_t>(p) * out;
      double* dwp = dw + static_cast<std::size_t>(p) * out;
      const double xv = xi[p];
      double acc = 0.0;
      for (int j = 0; j < out; ++j) {
        dwp[j] += xv * dyi[j];
        acc += wp[j] * dyi[j];
      }
      if (dx) dx[static_cast<std::size_t>(i) * in + p] += acc;
    }
  }
}

void layer_norm(const double* x, int n, int dim, const double* g, const double* b, double* y, double* mean,
                double* rstd) {
  for (int i = 0; i < n; ++i) {
    const double* xi = x + static_cast<std::size_t>(i) * dim;
    double mu = 0.0;
    for (int j = 0; j < dim; ++j) mu += xi[j];
    mu /= dim;
    double var = 0.0;
    for (int j = 0; j < dim; ++j) var += (xi[j] - mu) * (xi[j] - mu);
    var /= dim;
    const double rs = 1.0 / std::sqrt(var + kLnEps);
    mean[i] = mu;
    rstd[i] = rs;
    double* yi = y + static_cast<std::size_t>(i) * dim;
    for (int j = 0; j < dim; ++j) yi[j] = (xi[j] - mu) * rs * g[j] + b[j];
  }
}

void layer_norm_backward(const double* x, int n, int dim, const double* g, const double* mean, const double* rstd,
                         const double* dy, double* dx, double* dg, double* db) {
  std::vector<double> xhat(dim), dxhat(dim);
  for (int i = 0; i < n; ++i) {
    const double* xi = x + static_cast<std::size_t>(i) * dim;
    const double* dyi = dy + static_cast<std::size_t>(i) * dim;
    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
    for (int j = 0; j < dim; ++j) {
      xhat[j] = (xi[j] - mean[i]) * rstd[i];
      dxhat[j] = dyi[j] * g[j];
      dg[j] += dyi[j] * xhat[j];
      db[j] += dyi[j];
      sum_dxhat += dxhat[j];
      sum_dxhat_xhat += dxhat[j] * xhat[j];
    }
    double* dxi = dx + static_cast<std::size_t>(i) * dim;
    for (int j = 0; j < dim; ++j) {
      dxi[j] += rstd[i] * (dxhat[j] - sum_dxhat / dim - xhat[j] * sum_dxhat_xhat / dim);
    }
  }
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
  const double pdf = std::exp(-0.5 * x * x) * 0.5 * M_2_SQRTPI * M_SQRT1_2;
  return cdf + x * pdf;
}

void gelu_inplace(const std::vector<double>& in, std::vector<double>& out) {
  out.resize(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = gelu(in[i]);
}

// Rotates every head slice of an n x dm matrix.
void rope_heads(double* x, int n, int dm, int head_dim, std::span<const int> positions, bool inverse) {
  const int heads = dm / head_dim;
  for (int h = 0; h < heads; ++h) {
    for (int i = 0; i < n; ++i) {
      double* row = x + static_cast<std::size_t>(i) * dm + h * head_dim;
      apply_rope(std::span<double>(row, head_dim), head_dim, positions.subspan(i, 1), inverse);
    }
  }
}

void check_inputs(const DenoiserParams& params, const ScoreGrid& xt, int t, const FlagGrid& flags) {
  const DenoiserConfig& cfg = params.config();
  if (xt.vocab_size() != cfg.vocab_size) throw CompatibilityError("vocab mismatch: score K differs from model K");
  if (xt.width() > cfg.max_width) throw Error("shape mismatch: width exceeds max_L");
  if (t < 1 || t > cfg.steps) throw Error("timestep out of range: " + std::to_string(t));
  if (flags.size() != xt.cells().size()) throw Error("shape mismatch: flag grid");
  for (TokenId id : xt.cells()) {
    if (id < 0 || id >= cfg.vocab_size) throw Error("token id out of range: " + std::to_string(id));
  }
}

}  // namespace

void apply_rope(std::span<double> x, int head_dim, std::span<const int> positions, bool inverse) {
  if (head_dim % 2 != 0) throw Error("head dimension must be even for rotary attention");
  const std::size_t rows = positions.size();
  if (x.size() != rows * static_cast<std::size_t>(head_dim)) throw Error("rope shape mismatch");
  for (std::size_t r = 0; r < rows; ++r) {
    double* v = x.data() + r * head_dim;
    for (int i = 0; i < head_dim / 2; ++i) {
      const double theta = std::pow(10000.0, -2.0 * i / head_dim);
      const double angle = (inverse ? -1.0 : 1.0) * positions[r] * theta;
      const double c = std::cos(angle), s = std::sin(angle);
      const double a = v[2 * i], b = v[2 * i + 1];
      v[2 * i] = a * c - b * s;
      v[2 * i + 1] = a * s + b * c;
    }
  }
}

std::vector<double> embed(const ScoreGrid& xt, const FlagGrid& flags, const DenoiserParams& params) {
  const DenoiserConfig& cfg = params.config();
  const int width = xt.width();
  const int d = cfg.d;
  if (flags.size() != xt.cells().size()) throw Error("shape mismatch: flag grid");
  std::vector<double> out(static_cast<std::size_t>(width) * kNumRows * d);
  const double* tok = params.data(params.tok_emb);
  const double* flag = params.data(params.flag_emb);
  for (int r = 0; r < kNumRows; ++r) {
    for (int c = 0; c < width; ++c) {
      const TokenId id = xt.at(r, c);
      if (id < 0 || id >= cfg.vocab_size) throw Error("token id out of range: " + std::to_string(id));
      const int f = flags[static_cast<std::size_t>(r) * width + c] ? 1 : 0;
      double* dst = out.data() + (static_cast<std::size_t>(c) * kNumRows + r) * d;
      for (int i = 0; i < d; ++i) dst[i] = tok[static_cast<std::size_t>(id) * d + i] + flag[f * d + i];
    }
  }
  return out;
}

void forward(const DenoiserParams& params, const ScoreGrid& xt, int t, const FlagGrid& flags,
             std::vector<double>& logits, ForwardCache* cache, const ForwardOptions& options) {
  check_inputs(params, xt, t, flags);
  const DenoiserConfig& cfg = params.config();
  const int L = xt.width(), d = cfg.d, dm = cfg.d_model, k = cfg.vocab_size;
  const int rd = kNumRows * d, ff = cfg.ffn_mult * dm, heads = cfg.n_heads, hd = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const std::size_t Ldm = static_cast<std::size_t>(L) * dm;

  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  c.width = L;
  c.t = t;
  c.tokens = xt.cells();
  c.flags = flags;
  c.positions.resize(L);
  for (int i = 0; i < L; ++i) c.positions[i] = i + options.position_offset;

  c.x0 = embed(xt, flags, params);
  c.h1.resize(Ldm);
  linear(c.x0.data(), L, rd, params.data(params.in1_w), params.data(params.in1_b), dm, c.h1.data());
  gelu_inplace(c.h1, c.a1);
  std::vector<double> x(Ldm);
  linear(c.a1.data(), L, dm, params.data(params.in2_w), params.data(params.in2_b), dm, x.data());
  const double* temb = params.data(params.t_emb) + static_cast<std::size_t>(t) * dm;
  for (int i = 0; i < L; ++i) {
    for (int j = 0; j < dm; ++j) x[static_cast<std::size_t>(i) * dm + j] += temb[j];
  }

  c.layers.resize(cfg.n_layers);
  for (int l = 0; l < cfg.n_layers; ++l) {
    const auto& P = params.layers[l];
    auto& C = c.layers[l];
    C.x_in = x;
    C.n1.resize(Ldm);
    C.mean1.resize(L);
    C.rstd1.resize(L);
    layer_norm(x.data(), L, dm, params.data(P.ln1_g), params.data(P.ln1_b), C.n1.data(), C.mean1.data(),
               C.rstd1.data());
    C.q.resize(Ldm);
    C.k.resize(Ldm);
    C.v.resize(Ldm);
    linear(C.n1.data(), L, dm, params.data(P.wq), params.data(P.bq), dm, C.q.data());
    linear(C.n1.data(), L, dm, params.data(P.wk), params.data(P.bk), dm, C.k.data());
    linear(C.n1.data(), L, dm, params.data(P.wv), params.data(P.bv), dm, C.v.data());
    if (cfg.rope) {
      rope_heads(C.q.data(), L, dm, hd, c.positions, false);
      rope_heads(C.k.data(), L, dm, hd, c.positions, false);
    }
    C.probs.assign(static_cast<std::size_t>(heads) * L * L, 0.0);
    C.o.assign(Ldm, 0.0);
    parallel_for(heads, options.threads, [&](int h) {
      for (int i = 0; i < L; ++i) {
        double* pr = C.probs.data() + (static_cast<std::size_t>(h) * L + i) * L;
        const double* qi = C.q.data() + static_cast<std::size_t>(i) * dm + h * hd;
        double mx = -1e300;
        for (int j = 0; j < L; ++j) {
          const double* kj = C.k.data() + static_cast<std::size_t>(j) * dm + h * hd;
          double s = 0.0;
          for (int e = 0; e < hd; ++e) s += qi[e] * kj[e];
          pr[j] = s * scale;
          mx = std::max(mx, pr[j]);
        }
        double sum = 0.0;
        for (int j = 0; j < L; ++j) {
          pr[j] = std::exp(pr[j] - mx);
          sum += pr[j];
        }
        double* oi = C.o.data() + static_cast<std::size_t>(i) * dm + h * hd;
        for (int j = 0; j < L; ++j) {
          pr[j] /= sum;
          const double* vj = C.v.data() + static_cast<std::size_t>(j) * dm + h * hd;
          for (int e = 0; e < hd; ++e) oi[e] += pr[j] * vj[e];
        }
      }
    });
    std::vector<double> y(Ldm);
    linear(C.o.data(), L, dm, params.data(P.wo), params.data(P.bo), dm, y.data());
    for (std::size_t i = 0; i < Ldm; ++i) x[i] += y[i];
    C.x_mid = x;

    C.n2.resize(Ldm);
    C.mean2.resize(L);
    C.rstd2.resize(L);
    layer_norm(x.data(), L, dm, params.data(P.ln2_g), params.data(P.ln2_b), C.n2.data(), C.mean2.data(),
               C.rstd2.data());
    C.f1.resize(static_cast<std::size_t>(L) * ff);
    linear(C.n2.data(), L, dm, params.data(P.ff1_w), params.data(P.ff1_b), ff, C.f1.data());
    gelu_inplace(C.f1, C.g);
    linear(C.g.data(), L, ff, params.data(P.ff2_w), params.data(P.ff2_b), dm, y.data());
    for (std::size_t i = 0; i < Ldm; ++i) x[i] += y[i];
  }

  c.x_out = x;
  c.nf.resize(Ldm);
  c.meanf.resize(L);
  c.rstdf.resize(L);
  layer_norm(x.data(), L, dm, params.data(params.lnf_g), params.data(params.lnf_b), c.nf.data(), c.meanf.data(),
             c.rstdf.data());
  c.u1.resize(Ldm);
  linear(c.nf.data(), L, dm, params.data(params.out1_w), params.data(params.out1_b), dm, c.u1.data());
  gelu_inplace(c.u1, c.ua);
  c.z.resize(static_cast<std::size_t>(L) * rd);
  linear(c.ua.data(), L, dm, params.data(params.out2_w), params.data(params.out2_b), rd, c.z.data());

  logits.resize(static_cast<std::size_t>(kNumRows) * L * k);
  const double* hw = params.data(params.head_w);
  const double* hb = params.data(params.head_b);
  parallel_for(kNumRows, options.threads, [&](int r) {
    for (int col = 0; col < L; ++col) {
      const double* zc = c.z.data() + (static_cast<std::size_t>(col) * kNumRows + r) * d;
      linear(zc, 1, d, hw, hb, k, logits.data() + (static_cast<std::size_t>(r) * L + col) * k);
    }
  });
}

void backward(const DenoiserParams& params, const ForwardCache& c, std::span<const double> dlogits,
              std::vector<double>& grad) {
  const DenoiserConfig& cfg = params.config();
  const int L = c.width, d = cfg.d, dm = cfg.d_model, k = cfg.vocab_size;
  const int rd = kNumRows * d, ff = cfg.ffn_mult * dm, heads = cfg.n_heads, hd = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const std::size_t Ldm = static_cast<std::size_t>(L) * dm;
  if (dlogits.size() != static_cast<std::size_t>(kNumRows) * L * k) throw Error("shape mismatch: dlogits");
  if (grad.size() != params.size()) grad.assign(params.size(), 0.0);
  auto G = [&](int tensor) { return grad.data() + params.tensors()[tensor].offset; };

  // Classification head; cells without gradient are skipped.
  std::vector<double> dz(static_cast<std::size_t>(L) * rd, 0.0);
  const double* hw = params.data(params.head_w);
  for (int r = 0; r < kNumRows; ++r) {
    for (int col = 0; col < L; ++col) {
      const double* dl = dlogits.data() + (static_cast<std::size_t>(r) * L + col) * k;
      if (std::all_of(dl, dl + k, [](double v) { return v == 0.0; })) continue;
      const std::size_t zoff = (static_cast<std::size_t>(col) * kNumRows + r) * d;
      linear_backward(c.z.data() + zoff, 1, d, hw, k, dl, dz.data() + zoff, G(params.head_w), G(params.head_b));
    }
  }

  std::vector<double> dua(Ldm, 0.0);
  linear_backward(c.ua.data(), L, dm, params.data(params.out2_w), rd, dz.data(), dua.data(), G(params.out2_w),
                  G(params.out2_b));
  for (std::size_t i = 0; i < Ldm; ++i) dua[i] *= gelu_grad(c.u1[i]);
  std::vector<double> dnf(Ldm, 0.0);
  linear_backward(c.nf.data(), L, dm, params.data(params.out1_w), dm, dua.data(), dnf.data(), G(params.out1_w),
                  G(params.out1_b));
  std::vector<double> dx(Ldm, 0.0);
  layer_norm_backward(c.x_out.data(), L, dm, params.data(params.lnf_g), c.meanf.data(), c.rstdf.data(), dnf.data(),
                      dx.data(), G(params.lnf_g), G(params.lnf_b));

  for (int l = cfg.n_layers - 1; l >= 0; --l) {
    const auto& P = params.layers[l];
    const auto& C = c.layers[l];

    // x = x_mid + FFN(LN2(x_mid))
    std::vector<double> dg(static_cast<std::size_t>(L) * ff, 0.0);
    linear_backward(C.g.data(), L, ff, params.data(P.ff2_w), dm, dx.data(), dg.data(), G(P.ff2_w), G(P.ff2_b));
    for (std::size_t i = 0; i < dg.size(); ++i) dg[i] *= gelu_grad(C.f1[i]);
    std::vector<double> dn2(Ldm, 0.0);
    linear_backward(C.n2.data(), L, dm, params.data(P.ff1_w), ff, dg.data(), dn2.data(), G(P.ff1_w), G(P.ff1_b));
    layer_norm_backward(C.x_mid.data(), L, dm, params.data(P.ln2_g), C.mean2.data(), C.rstd2.data(), dn2.data(),
                        dx.data(), G(P.ln2_g), G(P.ln2_b));

    // x_mid = x_in + Attn(LN1(x_in))
    std::vector<double> d_o(Ldm, 0.0);
    linear_backward(C.o.data(), L, dm, params.data(P.wo), dm, dx.data(), d_o.data(), G(P.wo), G(P.bo));
    std::vector<double> dq(Ldm, 0.0), dk(Ldm, 0.0), dv(Ldm, 0.0);
    std::vector<double> dp(L);
    for (int h = 0; h < heads; ++h) {
      for (int i = 0; i < L; ++i) {
        const double* pr = C.probs.data() + (static_cast<std::size_t>(h) * L + i) * L;
        const double* doi = d_o.data() + static_cast<std::size_t>(i) * dm + h * hd;
        double row_dot = 0.0;
        for (int j = 0; j < L; ++j) {
          const double* vj = C.v.data() + static_cast<std::size_t>(j) * dm + h * hd;
          double* dvj = dv.data() + static_cast<std::size_t>(j) * dm + h * hd;
          double s = 0.0;
          for (int e = 0; e < hd; ++e) {
            s += doi[e] * vj[e];
            dvj[e] += pr[j] * doi[e];
          }
          dp[j] = s;
          row_dot += s * pr[j];
        }
        const double* qi = C.q.data() + static_cast<std::size_t>(i) * dm + h * hd;
        double* dqi = dq.data() + static_cast<std::size_t>(i) * dm + h * hd;
        for (int j = 0; j < L; ++j) {
          const double ds = pr[j] * (dp[j] - row_dot) * scale;
          if (ds == 0.0) continue;
          const double* kj = C.k.data() + static_cast<std::size_t>(j) * dm + h * hd;
          double* dkj = dk.data() + static_cast<std::size_t>(j) * dm + h * hd;
          for (int e = 0; e < hd; ++e) {
            dqi[e] += ds * kj[e];
            dkj[e] += ds * qi[e];
          }
        }
      }
    }
    if (cfg.rope) {
      rope_heads(dq.data(), L, dm, hd, c.positions, true);
      rope_heads(dk.data(), L, dm, hd, c.positions, true);
    }
    std::vector<double> dn1(Ldm, 0.0);
    linear_backward(C.n1.data(), L, dm, params.data(P.wq), dm, dq.data(), dn1.data(), G(P.wq), G(P.bq));
    linear_backward(C.n1.data(), L, dm, params.data(P.wk), dm, dk.data(), dn1.data(), G(P.wk), G(P.bk));
    linear_backward(C.n1.data(), L, dm, params.data(P.wv), dm, dv.data(), dn1.data(), G(P.wv), G(P.bv));
    layer_norm_backward(C.x_in.data(), L, dm, params.data(P.ln1_g), C.mean1.data(), C.rstd1.data(), dn1.data(),
                        dx.data(), G(P.ln1_g), G(P.ln1_b));
  }

  double* dtemb = G(params.t_emb) + static_cast<std::size_t>(c.t) * dm;
  for (int i = 0; i < L; ++i) {
    for (int j = 0; j < dm; ++j) dtemb[j] += dx[static_cast<std::size_t>(i) * dm + j];
  }
  std::vector<double> da1(Ldm, 0.0);
  linear_backward(c.a1.data(), L, dm, params.data(params.in2_w), dm, dx.data(), da1.data(), G(params.in2_w),
                  G(params.in2_b));
  for (std::size_t i = 0; i < Ldm; ++i) da1[i] *= gelu_grad(c.h1[i]);
  std::vector<double> dx0(static_cast<std::size_t>(L) * rd, 0.0);
  linear_backward(c.x0.data(), L, rd, params.data(params.in1_w), dm, da1.data(), dx0.data(), G(params.in1_w),
                  G(params.in1_b));

  double* dtok = G(params.tok_emb);
  double* dflag = G(params.flag_emb);
  for (int r = 0; r < kNumRows; ++r) {
    for (int col = 0; col < L; ++col) {
      const std::size_t cell = static_cast<std::size_t>(r) * L + col;
      const double* src = dx0.data() + (static_cast<std::size_t>(col) * kNumRows + r) * d;
      double* te = dtok + static_cast<std::size_t>(c.tokens[cell]) * d;
      double* fe = dflag + (c.flags[cell] ? 1 : 0) * d;
      for (int i = 0; i < d; ++i) {
        te[i] += src[i];
        fe[i] += src[i];
      }
    }
  }
}

void Denoiser::predict(const ScoreGrid& xt, int t, const FlagGrid& flags, std::vector<double>& logits) const {
  ForwardOptions opts;
  opts.threads = threads_;
  forward(params_, xt, t, flags, logits, nullptr, opts);
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001B3ULL;
  }
  return h;
}

namespace {

constexpr char kCheckpointMagic[8] = {'G', 'E', 'T', 'D', 'I', 'F', 'F', '1'};

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  put_u64(out, bits);
}

}  // namespace

std::vector<std::uint8_t> save_checkpoint(const DenoiserParams& params) {
  nlohmann::ordered_json header;
  header["version"] = 1;
  header["config"] = nlohmann::ordered_json::parse(params.config().to_json());
  nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
  for (const TensorSpec& t : params.tensors()) tensors.push_back({t.name, t.rows, t.cols});
  header["tensors"] = tensors;
  const std::string json = header.dump();

  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 8);
  put_u64(out, json.size());
  out.insert(out.end(), json.begin(), json.end());
  for (double v : params.values()) put_f64(out, v);
  put_u64(out, fnv1a64(out));
  return out;
}

namespace {

class Cursor {
 public:
  explicit Cursor(std::span<const std::uint8_t> b) : bytes_(b) {}
  std::span<const std::uint8_t> take(std::size_t n) {
    if (bytes_.size() - pos_ < n) throw ParseError("unexpected end");
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint64_t u64() {
    auto s = take(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | s[i];
    return v;
  }
  double f64() {
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

DenoiserParams load_checkpoint(std::span<const std::uint8_t> bytes, int expected_vocab) {
  Cursor in(bytes);
  auto magic = in.take(8);
  if (!std::equal(magic.begin(), magic.end(), kCheckpointMagic)) throw ParseError("bad magic");
  const std::uint64_t json_len = in.u64();
  if (json_len > in.remaining()) throw ParseError("unexpected end");
  auto json_bytes = in.take(json_len);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(json_bytes.begin(), json_bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint header: ") + e.what());
  }
  if (header.value("version", 0) != 1) throw CompatibilityError("version mismatch");
  DenoiserConfig config = DenoiserConfig::from_json(header.at("config").dump());
  DenoiserParams params(config);

  const auto& tensors = header.at("tensors");
  if (tensors.size() != params.tensors().size()) throw CompatibilityError("shape mismatch: tensor count");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const TensorSpec& spec = params.tensors()[i];
    if (tensors[i].at(0).get<std::string>() != spec.name || tensors[i].at(1).get<int>() != spec.rows ||
        tensors[i].at(2).get<int>() != spec.cols) {
      throw CompatibilityError("shape mismatch: tensor " + spec.name);
    }
  }
  if (in.remaining() < params.size() * 8 + 8) throw ParseError("unexpected end");
  for (double& v : params.values()) v = in.f64();
  const std::size_t body = in.pos();
  const std::uint64_t checksum = in.u64();
  if (checksum != fnv1a64(bytes.subspan(0, body))) throw ParseError("checksum mismatch");
  if (in.remaining() != 0) throw ParseError("trailing bytes");
  for (double v : params.values()) {
    if (!std::isfinite(v)) throw ParseError("non-finite parameter");
  }
  if (expected_vocab >= 0 && config.vocab_size != expected_vocab) {
    throw CompatibilityError("vocab mismatch: checkpoint K=" + std::to_string(config.vocab_size) +
                             ", vocabulary K=" + std::to_string(expected_vocab));
  }
  return params;
}

}  // namespace trackdiff
