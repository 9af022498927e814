// Copyright 2026 The kprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <string>

#include "kprobe/errors.h"
#include "kprobe/model.h"
#include "kprobe/random.h"
#include "network.h"

namespace kprobe {
namespace {

constexpr double kNormEps = 1e-5;

void check_finite(std::span<const double> xs, std::size_t layer, std::string_view stage) {
  if (!all_finite(xs))
    throw NumericError("non-finite value in layer " + std::to_string(layer) + ", " +
                       std::string(stage));
}

void fill_uniform(std::span<double> xs, double fan_in, Rng& rng) {
  const double a = std::sqrt(3.0 / fan_in);
  for (double& x : xs) x = rng.uniform(-a, a);
}

// out = X W^T + b, with masked output units forced to +0.0.
void project(const Matrix& x, const Matrix& w, const Vector& b, const std::uint8_t* keep,
             Matrix& out) {
  const std::size_t rows = x.rows(), in = w.cols(), units = w.rows();
  const Matrix wt = w.transposed();
  out.reset(rows, units);
  for (std::size_t t = 0; t < rows; ++t) {
    double* o = out.row(t).data();
    const double* xr = x.row(t).data();
    for (std::size_t j = 0; j < in; ++j) {
      const double a = xr[j];
      const double* wr = wt.row(j).data();
      for (std::size_t i = 0; i < units; ++i) o[i] += a * wr[i];
    }
    for (std::size_t i = 0; i < units; ++i) o[i] += b[i];
    if (keep != nullptr)
      for (std::size_t i = 0; i < units; ++i)
        if (!keep[i]) o[i] = 0.0;
  }
}

void softmax_inplace(std::span<double> xs) {
  const double m = *std::max_element(xs.begin(), xs.end());
  double sum = 0.0;
  for (double& x : xs) {
    x = std::exp(x - m);
    sum += x;
  }
  for (double& x : xs) x /= sum;
}

void check_tokens(const ModelConfig& cfg, const TokenSequence& tokens) {
  if (tokens.size() != static_cast<std::size_t>(cfg.seq_len))
    throw ConfigError("sequence length " + std::to_string(tokens.size()) +
                      " does not match model seq_len " + std::to_string(cfg.seq_len));
  for (Token t : tokens)
    if (t < 0 || t >= cfg.alphabet_size) throw ConfigError("token id out of range");
}

void check_mask(const ModelConfig& cfg, const NeuronMask& mask) {
  if (mask.layout != cfg.neuron_layout() || mask.keep.size() != mask.layout.size())
    throw ConfigError("neuron mask does not cover the model");
}

}  // namespace

void ModelConfig::validate() const {
  if (alphabet_size <= 0 || num_classes <= 0 || embed_dim <= 0 || seq_len <= 0)
    throw ConfigError("model dimensions must be > 0");
  if (num_layers < 1) throw ConfigError("num_layers must be >= 1");
  if (num_heads < 1 || embed_dim % num_heads != 0)
    throw ConfigError("num_heads must divide embed_dim");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"alphabet_size", c.alphabet_size}, {"num_classes", c.num_classes},
                     {"embed_dim", c.embed_dim},         {"num_layers", c.num_layers},
                     {"num_heads", c.num_heads},         {"seq_len", c.seq_len},
                     {"include_layernorm", c.include_layernorm}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  const ModelConfig d;
  c.alphabet_size = j.value("alphabet_size", d.alphabet_size);
  c.num_classes = j.value("num_classes", d.num_classes);
  c.embed_dim = j.value("embed_dim", d.embed_dim);
  c.num_layers = j.value("num_layers", d.num_layers);
  c.num_heads = j.value("num_heads", d.num_heads);
  c.seq_len = j.value("seq_len", d.seq_len);
  c.include_layernorm = j.value("include_layernorm", d.include_layernorm);
}

Matrix& AttentionLayer::projection(Role role) {
  switch (role) {
    case Role::Query: return query;
    case Role::Key: return key;
    case Role::Value: return value;
  }
  return query;
}

const Matrix& AttentionLayer::projection(Role role) const {
  return const_cast<AttentionLayer*>(this)->projection(role);
}

Vector& AttentionLayer::projection_bias(Role role) {
  switch (role) {
    case Role::Query: return query_bias;
    case Role::Key: return key_bias;
    case Role::Value: return value_bias;
  }
  return query_bias;
}

const Vector& AttentionLayer::projection_bias(Role role) const {
  return const_cast<AttentionLayer*>(this)->projection_bias(role);
}

const Matrix& LayerActivations::role(Role r) const {
  switch (r) {
    case Role::Query: return query;
    case Role::Key: return key;
    case Role::Value: return value;
  }
  return query;
}

Parameters Parameters::zeros(const ModelConfig& config) {
  config.validate();
  const auto d = static_cast<std::size_t>(config.embed_dim);
  const auto c = static_cast<std::size_t>(config.num_classes);
  Parameters p;
  p.config = config;
  p.embedding = Matrix(static_cast<std::size_t>(config.alphabet_size), d);
  p.layers.resize(static_cast<std::size_t>(config.num_layers));
  for (auto& layer : p.layers) {
    layer.query = layer.key = layer.value = layer.output = Matrix(d, d);
    layer.query_bias = layer.key_bias = layer.value_bias = layer.output_bias = Vector(d, 0.0);
    if (config.include_layernorm) {
      layer.norm_gain = Vector(d, 0.0);
      layer.norm_bias = Vector(d, 0.0);
    }
  }
  p.classifier = Matrix(d, c);
  p.classifier_bias = Vector(c, 0.0);
  return p;
}

std::size_t Parameters::num_values() const {
  std::size_t n = 0;
  for_each_tensor([&n](const std::string&, const auto&, auto values) { n += values.size(); });
  return n;
}

bool Parameters::all_finite() const {
  bool ok = true;
  for_each_tensor([&ok](const std::string&, const auto&, auto values) {
    ok = ok && kprobe::all_finite(values);
  });
  return ok;
}

Parameters init_params(const ModelConfig& config, std::uint64_t seed) {
  Parameters p = Parameters::zeros(config);
  Rng rng(seed);
  const double d = config.embed_dim;
  fill_uniform(p.embedding.flat(), 1.0, rng);
  for (auto& layer : p.layers) {
    fill_uniform(layer.query.flat(), d, rng);
    fill_uniform(layer.key.flat(), d, rng);
    fill_uniform(layer.value.flat(), d, rng);
    fill_uniform(layer.output.flat(), d, rng);
    if (config.include_layernorm) std::fill(layer.norm_gain.begin(), layer.norm_gain.end(), 1.0);
  }
  fill_uniform(p.classifier.flat(), d, rng);
  return p;
}

const Matrix& position_encoding(int seq_len, int embed_dim) {
  static std::mutex mu;
  static std::map<std::pair<int, int>, std::unique_ptr<Matrix>> cache;
  std::lock_guard lock(mu);
  auto& slot = cache[{seq_len, embed_dim}];
  if (!slot) {
    auto pe = std::make_unique<Matrix>(static_cast<std::size_t>(seq_len),
                                       static_cast<std::size_t>(embed_dim));
    for (int t = 0; t < seq_len; ++t) {
      for (int i = 0; i < embed_dim; ++i) {
        const double freq = std::pow(10000.0, -static_cast<double>(i - i % 2) / embed_dim);
        const double angle = t * freq;
        (*pe)(static_cast<std::size_t>(t), static_cast<std::size_t>(i)) =
            i % 2 == 0 ? std::sin(angle) : std::cos(angle);
      }
    }
    slot = std::move(pe);
  }
  return *slot;
}

namespace detail {

void run_forward(const Parameters& params, const TokenSequence& tokens, const NeuronMask* mask,
                 ForwardCache& cache) {
  const ModelConfig& cfg = params.config;
  check_tokens(cfg, tokens);
  if (mask != nullptr) check_mask(cfg, *mask);

  const auto T = tokens.size();
  const auto d = static_cast<std::size_t>(cfg.embed_dim);
  const auto H = static_cast<std::size_t>(cfg.num_heads);
  const auto dh = static_cast<std::size_t>(cfg.head_dim());
  const auto C = static_cast<std::size_t>(cfg.num_classes);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const Matrix& pe = position_encoding(cfg.seq_len, cfg.embed_dim);

  cache.layers.resize(params.layers.size());
  Matrix x(T, d);
  for (std::size_t t = 0; t < T; ++t) {
    const auto e = params.embedding.row(static_cast<std::size_t>(tokens[t]));
    for (std::size_t j = 0; j < d; ++j) x(t, j) = e[j] + pe(t, j);
  }

  std::vector<double> kt(dh * T);
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const AttentionLayer& layer = params.layers[l];
    LayerCache& lc = cache.layers[l];
    lc.input = x;

    for (Role role : kRoles) {
      const std::uint8_t* keep =
          mask ? mask->keep.data() + mask->layout.index({static_cast<int>(l), role, 0}) : nullptr;
      Matrix& out = role == Role::Query ? lc.query : role == Role::Key ? lc.key : lc.value;
      project(x, layer.projection(role), layer.projection_bias(role), keep, out);
      check_finite(out.flat(), l, role_name(role));
    }

    lc.attention.reset(H * T, T);
    lc.context.reset(T, d);
    for (std::size_t h = 0; h < H; ++h) {
      const std::size_t off = h * dh;
      for (std::size_t u = 0; u < T; ++u)
        for (std::size_t c = 0; c < dh; ++c) kt[c * T + u] = lc.key(u, off + c);
      for (std::size_t t = 0; t < T; ++t) {
        double* s = lc.attention.row(h * T + t).data();
        for (std::size_t c = 0; c < dh; ++c) {
          const double a = lc.query(t, off + c) * scale;
          const double* kr = kt.data() + c * T;
          for (std::size_t u = 0; u < T; ++u) s[u] += a * kr[u];
        }
        softmax_inplace({s, T});
        double* ctx = lc.context.row(t).data() + off;
        for (std::size_t u = 0; u < T; ++u) {
          const double a = s[u];
          const double* vr = lc.value.row(u).data() + off;
          for (std::size_t c = 0; c < dh; ++c) ctx[c] += a * vr[c];
        }
      }
    }
    check_finite(lc.context.flat(), l, "attention");

    Matrix o;
    project(lc.context, layer.output, layer.output_bias, nullptr, o);
    for (std::size_t i = 0; i < o.size(); ++i) x.data()[i] += o.data()[i];

    if (cfg.include_layernorm) {
      lc.normalized.reset(T, d);
      lc.rstd.assign(T, 0.0);
      for (std::size_t t = 0; t < T; ++t) {
        auto r = x.row(t);
        double mean = 0.0;
        for (double v : r) mean += v;
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (double v : r) var += (v - mean) * (v - mean);
        var /= static_cast<double>(d);
        const double rstd = 1.0 / std::sqrt(var + kNormEps);
        lc.rstd[t] = rstd;
        for (std::size_t j = 0; j < d; ++j) {
          const double xhat = (r[j] - mean) * rstd;
          lc.normalized(t, j) = xhat;
          r[j] = layer.norm_gain[j] * xhat + layer.norm_bias[j];
        }
      }
    }
    check_finite(x.flat(), l, "block output");
  }
  cache.output = std::move(x);

  cache.pooled.assign(d, 0.0);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t j = 0; j < d; ++j) cache.pooled[j] += cache.output(t, j);
  for (double& v : cache.pooled) v /= static_cast<double>(T);

  cache.logits = params.classifier_bias;
  for (std::size_t j = 0; j < d; ++j) {
    const double a = cache.pooled[j];
    const auto w = params.classifier.row(j);
    for (std::size_t c = 0; c < C; ++c) cache.logits[c] += a * w[c];
  }
  if (!all_finite(cache.logits)) throw NumericError("non-finite value in classifier logits");
  cache.probs = cache.logits;
  softmax_inplace(cache.probs);
}

void backward(const Parameters& params, const TokenSequence& tokens, const ForwardCache& cache,
              std::span<const double> dlogits, Parameters& grad) {
  const ModelConfig& cfg = params.config;
  const auto T = tokens.size();
  const auto d = static_cast<std::size_t>(cfg.embed_dim);
  const auto H = static_cast<std::size_t>(cfg.num_heads);
  const auto dh = static_cast<std::size_t>(cfg.head_dim());
  const auto C = static_cast<std::size_t>(cfg.num_classes);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  grad.for_each_tensor(
      [](const std::string&, const auto&, std::span<double> v) { std::fill(v.begin(), v.end(), 0.0); });

  // Classifier and mean pooling.
  Vector dpooled(d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    const double a = cache.pooled[j];
    const auto w = params.classifier.row(j);
    auto gw = grad.classifier.row(j);
    double acc = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      gw[c] = a * dlogits[c];
      acc += w[c] * dlogits[c];
    }
    dpooled[j] = acc;
  }
  for (std::size_t c = 0; c < C; ++c) grad.classifier_bias[c] = dlogits[c];

  Matrix dy(T, d);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t j = 0; j < d; ++j) dy(t, j) = dpooled[j] / static_cast<double>(T);

  Matrix dr(T, d), dctx(T, d), dq(T, d), dk(T, d), dv(T, d);
  Vector da(T), dxhat(d);
  std::vector<double> vt(dh * T);

  for (std::size_t li = params.layers.size(); li-- > 0;) {
    const AttentionLayer& layer = params.layers[li];
    AttentionLayer& g = grad.layers[li];
    const LayerCache& lc = cache.layers[li];

    // Layernorm.
    if (cfg.include_layernorm) {
      for (std::size_t t = 0; t < T; ++t) {
        const auto xhat = lc.normalized.row(t);
        const auto dyr = dy.row(t);
        double mean_dx = 0.0, mean_dxx = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          g.norm_gain[j] += dyr[j] * xhat[j];
          g.norm_bias[j] += dyr[j];
          dxhat[j] = dyr[j] * layer.norm_gain[j];
          mean_dx += dxhat[j];
          mean_dxx += dxhat[j] * xhat[j];
        }
        mean_dx /= static_cast<double>(d);
        mean_dxx /= static_cast<double>(d);
        auto drr = dr.row(t);
        for (std::size_t j = 0; j < d; ++j)
          drr[j] = lc.rstd[t] * (dxhat[j] - mean_dx - xhat[j] * mean_dxx);
      }
    } else {
      dr = dy;
    }

    // Residual: the block input receives dR directly, plus the attention path below.
    Matrix& dx = dy;
    dx = dr;

    // Output projection: O = ctx Wo^T + bo.
    dctx.fill(0.0);
    for (std::size_t t = 0; t < T; ++t) {
      const auto dor = dr.row(t);
      const auto cr = lc.context.row(t);
      auto dcr = dctx.row(t);
      for (std::size_t i = 0; i < d; ++i) {
        const double a = dor[i];
        g.output_bias[i] += a;
        auto gw = g.output.row(i);
        const auto w = layer.output.row(i);
        for (std::size_t j = 0; j < d; ++j) {
          gw[j] += a * cr[j];
          dcr[j] += a * w[j];
        }
      }
    }

    // Scaled dot-product attention, per head.
    dq.fill(0.0);
    dk.fill(0.0);
    dv.fill(0.0);
    for (std::size_t h = 0; h < H; ++h) {
      const std::size_t off = h * dh;
      for (std::size_t u = 0; u < T; ++u)
        for (std::size_t c = 0; c < dh; ++c) vt[c * T + u] = lc.value(u, off + c);
      for (std::size_t t = 0; t < T; ++t) {
        const double* a = lc.attention.row(h * T + t).data();
        const double* dcr = dctx.row(t).data() + off;
        std::fill(da.begin(), da.end(), 0.0);
        for (std::size_t c = 0; c < dh; ++c) {
          const double gc = dcr[c];
          const double* vr = vt.data() + c * T;
          for (std::size_t u = 0; u < T; ++u) da[u] += gc * vr[u];
        }
        double dot = 0.0;
        for (std::size_t u = 0; u < T; ++u) dot += a[u] * da[u];
        double* dqr = dq.row(t).data() + off;
        const double* qr = lc.query.row(t).data() + off;
        for (std::size_t u = 0; u < T; ++u) {
          double* dvr = dv.row(u).data() + off;
          for (std::size_t c = 0; c < dh; ++c) dvr[c] += a[u] * dcr[c];
          const double ds = a[u] * (da[u] - dot) * scale;
          const double* kr = lc.key.row(u).data() + off;
          double* dkr = dk.row(u).data() + off;
          for (std::size_t c = 0; c < dh; ++c) {
            dqr[c] += ds * kr[c];
            dkr[c] += ds * qr[c];
          }
        }
      }
    }

    // Q/K/V projections.
    for (Role role : kRoles) {
      const Matrix& dp = role == Role::Query ? dq : role == Role::Key ? dk : dv;
      const Matrix& w = layer.projection(role);
      Matrix& gw = g.projection(role);
      Vector& gb = g.projection_bias(role);
      for (std::size_t t = 0; t < T; ++t) {
        const auto dpr = dp.row(t);
        const auto xr = lc.input.row(t);
        auto dxr = dx.row(t);
        for (std::size_t i = 0; i < d; ++i) {
          const double a = dpr[i];
          gb[i] += a;
          auto gwr = gw.row(i);
          const auto wr = w.row(i);
          for (std::size_t j = 0; j < d; ++j) {
            gwr[j] += a * xr[j];
            dxr[j] += a * wr[j];
          }
        }
      }
    }
  }

  for (std::size_t t = 0; t < T; ++t) {
    auto ge = grad.embedding.row(static_cast<std::size_t>(tokens[t]));
    const auto dxr = dy.row(t);
    for (std::size_t j = 0; j < d; ++j) ge[j] += dxr[j];
  }
}

Vector prob_logit_grad(std::span<const double> probs, int label) {
  const double py = probs[static_cast<std::size_t>(label)];
  Vector g(probs.size());
  for (std::size_t c = 0; c < probs.size(); ++c)
    g[c] = py * ((static_cast<int>(c) == label ? 1.0 : 0.0) - probs[c]);
  return g;
}

Vector cross_entropy_logit_grad(std::span<const double> probs, int label) {
  Vector g(probs.begin(), probs.end());
  g[static_cast<std::size_t>(label)] -= 1.0;
  return g;
}

}  // namespace detail

ForwardTrace forward(const Parameters& params, const TokenSequence& tokens) {
  detail::ForwardCache cache;
  detail::run_forward(params, tokens, nullptr, cache);
  ForwardTrace trace;
  for (auto& lc : cache.layers)
    trace.layers.push_back({std::move(lc.query), std::move(lc.key), std::move(lc.value)});
  trace.probabilities = std::move(cache.probs);
  return trace;
}

ForwardTrace forward(const Parameters& params, const TokenSequence& tokens,
                     const NeuronMask& mask) {
  detail::ForwardCache cache;
  detail::run_forward(params, tokens, &mask, cache);
  ForwardTrace trace;
  for (auto& lc : cache.layers)
    trace.layers.push_back({std::move(lc.query), std::move(lc.key), std::move(lc.value)});
  trace.probabilities = std::move(cache.probs);
  return trace;
}

Vector class_probabilities(const Parameters& params, const TokenSequence& tokens) {
  detail::ForwardCache cache;
  detail::run_forward(params, tokens, nullptr, cache);
  return std::move(cache.probs);
}

Vector class_probabilities(const Parameters& params, const TokenSequence& tokens,
                           const NeuronMask& mask) {
  detail::ForwardCache cache;
  detail::run_forward(params, tokens, &mask, cache);
  return std::move(cache.probs);
}

double correct_class_prob(const Parameters& params, const LabeledSequence& example) {
  return class_probabilities(params, example.tokens)[static_cast<std::size_t>(example.label)];
}

double correct_class_prob(const Parameters& params, const LabeledSequence& example,
                          const NeuronMask& mask) {
  return class_probabilities(params, example.tokens, mask)[static_cast<std::size_t>(example.label)];
}

int argmax(std::span<const double> probabilities) {
  return static_cast<int>(std::max_element(probabilities.begin(), probabilities.end()) -
                          probabilities.begin());
}

}  // namespace kprobe
