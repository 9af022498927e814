// Copyright 2026 The kprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include "kprobe/grad.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "kprobe/errors.h"
#include "kprobe/random.h"
#include "network.h"

namespace kprobe {

Vector qkv_values(const Parameters& params) {
  const QKVIndex index(params.config.neuron_layout());
  Vector out(index.size());
  const auto d = static_cast<std::size_t>(params.config.embed_dim);
  std::size_t k = 0;
  for (const auto& layer : params.layers)
    for (Role role : kRoles) {
      const Matrix& w = layer.projection(role);
      const Vector& b = layer.projection_bias(role);
      for (std::size_t i = 0; i < d; ++i) {
        for (double v : w.row(i)) out[k++] = v;
        out[k++] = b[i];
      }
    }
  return out;
}

double& qkv_value(Parameters& params, const WeightRef& w) {
  if (!params.config.neuron_layout().contains(w.neuron) || w.input < WeightRef::kBias ||
      w.input >= params.config.embed_dim)
    throw ConfigError("weight reference out of range");
  auto& layer = params.layers[static_cast<std::size_t>(w.neuron.layer)];
  const auto unit = static_cast<std::size_t>(w.neuron.unit);
  if (w.is_bias()) return layer.projection_bias(w.neuron.role)[unit];
  return layer.projection(w.neuron.role)(unit, static_cast<std::size_t>(w.input));
}

double qkv_value(const Parameters& params, const WeightRef& w) {
  return qkv_value(const_cast<Parameters&>(params), w);
}

Parameters scale_qkv(const Parameters& params, const AlphaContext& ctx) {
  Parameters scaled = params;
  if (ctx.only) {
    qkv_value(scaled, *ctx.only) *= ctx.alpha;
    return scaled;
  }
  for (auto& layer : scaled.layers)
    for (Role role : kRoles) {
      for (double& v : layer.projection(role).flat()) v *= ctx.alpha;
      for (double& v : layer.projection_bias(role)) v *= ctx.alpha;
    }
  return scaled;
}

QKVGradient grad_correct_prob(const Parameters& params, const LabeledSequence& example,
                              const AlphaContext& ctx) {
  const Parameters point = ctx.alpha == 1.0 ? params : scale_qkv(params, ctx);
  detail::ForwardCache cache;
  detail::run_forward(point, example.tokens, nullptr, cache);
  Parameters grad = Parameters::zeros(point.config);
  detail::backward(point, example.tokens, cache, detail::prob_logit_grad(cache.probs, example.label),
                   grad);

  QKVGradient out{point.config.neuron_layout(), qkv_values(grad)};
  if (!all_finite(out.values)) {
    for (std::size_t l = 0; l < grad.layers.size(); ++l)
      for (Role r : kRoles)
        if (!all_finite(grad.layers[l].projection(r).flat()) ||
            !all_finite(grad.layers[l].projection_bias(r)))
          throw NumericError("non-finite gradient in layers." + std::to_string(l) + "." +
                             std::string(role_name(r)));
  }
  return out;
}

std::vector<WeightRef> sample_qkv_weights(NeuronLayout layout, std::size_t count,
                                          std::uint64_t seed) {
  const QKVIndex index(layout);
  if (count > index.size()) throw ConfigError("sample larger than the Q/K/V parameter count");
  std::vector<std::size_t> flat(index.size());
  std::iota(flat.begin(), flat.end(), std::size_t{0});
  Rng rng(seed);
  // Partial Fisher-Yates: the first `count` slots become the sample.
  for (std::size_t i = 0; i < count; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.below(flat.size() - i));
    std::swap(flat[i], flat[j]);
  }
  std::vector<WeightRef> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(index.ref(flat[i]));
  return out;
}

double relative_error(double a, double f) {
  return std::abs(a - f) / std::max({std::abs(a), std::abs(f), 1e-8});
}

namespace {

using Real = long double;
using RealMatrix = std::vector<std::vector<Real>>;

// y[t] = W x[t] + b, W rows are output units.
RealMatrix affine(const RealMatrix& x, const Matrix& w, const Vector& b) {
  RealMatrix y(x.size(), std::vector<Real>(w.rows()));
  for (std::size_t t = 0; t < x.size(); ++t)
    for (std::size_t i = 0; i < w.rows(); ++i) {
      Real acc = b[i];
      for (std::size_t j = 0; j < w.cols(); ++j) acc += static_cast<Real>(w(i, j)) * x[t][j];
      y[t][i] = acc;
    }
  return y;
}

void softmax_in_place(std::vector<Real>& v) {
  const Real m = *std::max_element(v.begin(), v.end());
  Real z = 0;
  for (Real& x : v) z += (x = std::exp(x - m));
  for (Real& x : v) x /= z;
}

}  // namespace

long double reference_correct_prob(const Parameters& params, const LabeledSequence& example) {
  const ModelConfig& c = params.config;
  const auto T = example.tokens.size();
  const auto d = static_cast<std::size_t>(c.embed_dim);
  const auto H = static_cast<std::size_t>(c.num_heads);
  const std::size_t dh = d / H;
  const Matrix& pe = position_encoding(static_cast<int>(T), c.embed_dim);

  RealMatrix h(T, std::vector<Real>(d));
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t i = 0; i < d; ++i)
      h[t][i] = static_cast<Real>(params.embedding(static_cast<std::size_t>(example.tokens[t]), i)) +
                static_cast<Real>(pe(t, i));

  for (const auto& layer : params.layers) {
    const RealMatrix q = affine(h, layer.query, layer.query_bias);
    const RealMatrix k = affine(h, layer.key, layer.key_bias);
    const RealMatrix v = affine(h, layer.value, layer.value_bias);
    RealMatrix ctx(T, std::vector<Real>(d, 0));
    for (std::size_t head = 0; head < H; ++head) {
      const std::size_t off = head * dh;
      for (std::size_t t = 0; t < T; ++t) {
        std::vector<Real> a(T);
        for (std::size_t s = 0; s < T; ++s) {
          Real dot = 0;
          for (std::size_t i = 0; i < dh; ++i) dot += q[t][off + i] * k[s][off + i];
          a[s] = dot / std::sqrt(static_cast<Real>(dh));
        }
        softmax_in_place(a);
        for (std::size_t s = 0; s < T; ++s)
          for (std::size_t i = 0; i < dh; ++i) ctx[t][off + i] += a[s] * v[s][off + i];
      }
    }
    const RealMatrix o = affine(ctx, layer.output, layer.output_bias);
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t i = 0; i < d; ++i) h[t][i] += o[t][i];
      if (!c.include_layernorm) continue;
      Real mean = 0, var = 0;
      for (Real x : h[t]) mean += x;
      mean /= static_cast<Real>(d);
      for (Real x : h[t]) var += (x - mean) * (x - mean);
      var /= static_cast<Real>(d);
      const Real inv = 1 / std::sqrt(var + static_cast<Real>(1e-5));
      for (std::size_t i = 0; i < d; ++i)
        h[t][i] = (h[t][i] - mean) * inv * static_cast<Real>(layer.norm_gain[i]) +
                  static_cast<Real>(layer.norm_bias[i]);
    }
  }

  std::vector<Real> logits(static_cast<std::size_t>(c.num_classes));
  for (std::size_t k = 0; k < logits.size(); ++k) {
    Real pooled_dot = 0;
    for (std::size_t i = 0; i < d; ++i) {
      Real pooled = 0;
      for (std::size_t t = 0; t < T; ++t) pooled += h[t][i];
      pooled_dot += pooled / static_cast<Real>(T) * static_cast<Real>(params.classifier(i, k));
    }
    logits[k] = pooled_dot + static_cast<Real>(params.classifier_bias[k]);
  }
  softmax_in_place(logits);
  return logits[static_cast<std::size_t>(example.label)];
}

FiniteDiffReport finite_diff_check(const Parameters& params, const LabeledSequence& example,
                                   std::size_t sample_size, double epsilon, std::uint64_t seed) {
  if (sample_size == 0) throw ConfigError("finite_diff_check needs sample_size > 0");
  if (!(epsilon > 0.0)) throw ConfigError("finite_diff_check needs epsilon > 0");

  const QKVGradient grad = grad_correct_prob(params, example);
  FiniteDiffReport report;
  Parameters probe = params;
  for (const WeightRef& w : sample_qkv_weights(params.config.neuron_layout(), sample_size, seed)) {
    double& slot = qkv_value(probe, w);
    const double original = slot;
    const double hi = original + epsilon;
    const double lo = original - epsilon;
    slot = hi;
    const long double plus = reference_correct_prob(probe, example);
    slot = lo;
    const long double minus = reference_correct_prob(probe, example);
    slot = original;

    // Divide by the step actually taken after rounding, not the nominal 2 eps.
    const auto numeric = static_cast<double>((plus - minus) / static_cast<long double>(hi - lo));
    FiniteDiffSample s{w, grad.at(w), numeric, 0.0};
    s.relative_error = relative_error(s.analytic, s.numeric);
    report.max_relative_error = std::max(report.max_relative_error, s.relative_error);
    report.samples.push_back(s);
  }
  return report;
}

}  // namespace kprobe
