#pragma once

#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "barnet/init.hpp"
#include "barnet/ops.hpp"

namespace barnet {

enum class GateType { sigmoid, softmax };

inline std::string to_string(GateType g) { return g == GateType::sigmoid ? "sigmoid" : "softmax"; }

inline GateType parse_gate(const std::string& s) {
  if (s == "sigmoid") return GateType::sigmoid;
  if (s == "softmax") return GateType::softmax;
  throw ConfigError("unknown gate type '" + s + "' (expected sigmoid or softmax)");
}

/// Two pointwise transforms on the concatenated pooled vector: C_p -> C_p/2 -> C_p.
template <typename T>
struct ArfGate {
  Tensor<T> w1, b1, w2, b2;

  Index parameter_count() const { return w1.numel() + b1.numel() + w2.numel() + b2.numel(); }
};

template <typename T>
struct ArfWeights {
  /// One N×C_k×1×1 filter bank per low-scale input (all but the finest).
  std::vector<Tensor<T>> compress;
  /// Absent means a unit gate (plain pyramid concatenation).
  std::optional<ArfGate<T>> gate;
  GateType gate_type = GateType::sigmoid;

  Index parameter_count() const {
    Index n = gate ? gate->parameter_count() : 0;
    for (const auto& w : compress) n += w.numel();
    return n;
  }
};

/// Concatenated multi-scale map P, the gate S applied to it, and the index of
/// the source scale for every channel of P.
template <typename T>
struct PyramidFeature {
  Tensor<T> features;
  Tensor<T> gate;
  std::vector<std::size_t> scale_index;
};

inline Index gate_hidden_width(Index pyramid_channels) { return std::max<Index>(1, pyramid_channels / 2); }

/// Channel count of the pyramid for inputs with channel counts `channels`
/// (coarse to fine), compressing all but the finest to `n`.
inline Index pyramid_channels(std::span<const Index> channels, Index n) {
  if (channels.empty()) throw ConfigError("pyramid_channels: no inputs");
  return channels.back() + n * static_cast<Index>(channels.size() - 1);
}

template <typename T>
ArfWeights<T> make_arf_weights(std::span<const Index> channels, Index n, bool with_gate, GateType gate_type,
                               std::mt19937_64& rng) {
  if (channels.empty()) throw ConfigError("make_arf_weights: no inputs");
  if (n < 1) throw ConfigError("ARF compression width must be >= 1");
  ArfWeights<T> w;
  w.gate_type = gate_type;
  for (std::size_t i = 0; i + 1 < channels.size(); ++i)
    w.compress.push_back(he_uniform<T>({n, channels[i], 1, 1}, channels[i], rng));
  if (with_gate) {
    const Index cp = pyramid_channels(channels, n);
    const Index hidden = gate_hidden_width(cp);
    ArfGate<T> g;
    g.w1 = he_uniform<T>({hidden, cp}, cp, rng);
    g.b1 = filled_parameter<T>({hidden}, T(0));
    g.w2 = he_uniform<T>({cp, hidden}, hidden, rng);
    g.b2 = filled_parameter<T>({cp}, T(0));
    w.gate = std::move(g);
  }
  return w;
}

/// 1×1 compression of every map except the finest (last), which passes through.
template <typename T>
std::vector<Tensor<T>> compress_channels(std::span<const Tensor<T>> xs, const ArfWeights<T>& w) {
  if (xs.empty()) throw ConfigError("compress_channels: empty input list");
  if (w.compress.size() + 1 != xs.size())
    throw ConfigError("compress_channels: " + std::to_string(xs.size()) + " inputs but " +
                      std::to_string(w.compress.size()) + " compression filters");
  std::vector<Tensor<T>> out;
  out.reserve(xs.size());
  for (std::size_t i = 0; i + 1 < xs.size(); ++i) out.push_back(conv2d(xs[i], w.compress[i]));
  out.push_back(xs.back());
  return out;
}

/// Upsamples each coarse map to the finest map's size and concatenates
/// (coarse first). Every size ratio must be a power of two.
template <typename T>
PyramidFeature<T> build_pyramid(std::span<const Tensor<T>> xs) {
  if (xs.empty()) throw ConfigError("build_pyramid: empty input list");
  const Tensor<T>& finest = xs.back();
  detail::require_rank("build_pyramid", finest, 3);
  PyramidFeature<T> p;
  std::vector<Tensor<T>> parts;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const Tensor<T>& x = xs[i];
    detail::require_rank("build_pyramid", x, 3);
    if (i + 1 == xs.size()) {
      parts.push_back(x);
    } else {
      const Index fy = finest.dim(1) / x.dim(1);
      const Index fx = finest.dim(2) / x.dim(2);
      if (fy != fx || fy * x.dim(1) != finest.dim(1) || fx * x.dim(2) != finest.dim(2) || !is_upsample_factor(fy))
        throw DimensionError("build_pyramid: " + to_string(x.shape()) + " is not a dyadic downscale of " +
                             to_string(finest.shape()));
      parts.push_back(upsample(x, fy));
    }
    p.scale_index.insert(p.scale_index.end(), static_cast<std::size_t>(x.dim(0)), i);
  }
  p.features = concat_channels<T>(parts);
  return p;
}

/// Pooled per-channel responses of every scale -> two transforms -> gate in (0,1).
template <typename T>
Tensor<T> scale_weights(std::span<const Tensor<T>> xs, const ArfGate<T>& gate, GateType type) {
  std::vector<Tensor<T>> pooled;
  for (const auto& x : xs) pooled.push_back(reshape(global_avg_pool(x), {x.dim(0), 1, 1}));
  const Tensor<T> v = concat_channels<T>(pooled);
  const Index cp = v.dim(0);
  if (gate.w1.dim(1) != cp)
    throw DimensionError("scale_weights: gate expects " + std::to_string(gate.w1.dim(1)) + " channels, got " +
                         std::to_string(cp));
  const Index hidden = gate.w1.dim(0);
  Tensor<T> h = add(reshape(matmul(gate.w1, reshape(v, {cp, 1})), {hidden}), gate.b1);
  h = relu(h);
  Tensor<T> logits = add(reshape(matmul(gate.w2, reshape(h, {hidden, 1})), {cp}), gate.b2);
  if (type == GateType::softmax) return reshape(softmax_channels(reshape(logits, {cp, 1, 1})), {cp});
  return sigmoid(logits);
}

template <typename T>
Tensor<T> apply_weights(const Tensor<T>& p, const Tensor<T>& s) {
  return channel_scale(p, s);
}

/// Compression, then the gate branch and the pyramid branch. The gate is left
/// undefined when the weights carry none (unit gate).
template <typename T>
PyramidFeature<T> arf_pyramid(std::span<const Tensor<T>> xs, const ArfWeights<T>& w) {
  const std::vector<Tensor<T>> compressed = compress_channels(xs, w);
  PyramidFeature<T> p = build_pyramid<T>(compressed);
  if (w.gate) p.gate = scale_weights<T>(compressed, *w.gate, w.gate_type);
  return p;
}

template <typename T>
Tensor<T> arf_forward(std::span<const Tensor<T>> xs, const ArfWeights<T>& w) {
  PyramidFeature<T> p = arf_pyramid(xs, w);
  return p.gate.defined() ? apply_weights(p.features, p.gate) : p.features;
}

}  // namespace barnet
