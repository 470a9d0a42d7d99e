#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "barnet/tensor.hpp"

namespace barnet {

namespace detail {

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
}

template <typename T>
void require_rank(const char* op, const Tensor<T>& a, Index rank) {
  if (a.rank() != rank)
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         to_string(a.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("add", a, b);
  Dense<T> out(a.shape(), a.value().data + b.value().data);
  return record<T>("add", std::move(out), {a, b}, [](Node<T>& self) {
    for (std::size_t i = 0; i < 2; ++i)
      if (auto* g = input_grad(self, i)) g->data += self.grad.data;
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("sub", a, b);
  Dense<T> out(a.shape(), a.value().data - b.value().data);
  return record<T>("sub", std::move(out), {a, b}, [](Node<T>& self) {
    if (auto* g = input_grad(self, 0)) g->data += self.grad.data;
    if (auto* g = input_grad(self, 1)) g->data -= self.grad.data;
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("mul", a, b);
  Dense<T> out(a.shape(), a.value().data * b.value().data);
  return record<T>("mul", std::move(out), {a, b}, [](Node<T>& self) {
    if (auto* g = input_grad(self, 0)) g->data += self.grad.data * self.inputs[1]->value.data;
    if (auto* g = input_grad(self, 1)) g->data += self.grad.data * self.inputs[0]->value.data;
  });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("div", a, b);
  Dense<T> out(a.shape(), a.value().data / b.value().data);
  return record<T>("div", std::move(out), {a, b}, [](Node<T>& self) {
    const auto& bv = self.inputs[1]->value.data;
    if (auto* g = input_grad(self, 0)) g->data += self.grad.data / bv;
    if (auto* g = input_grad(self, 1)) g->data -= self.grad.data * self.value.data / bv;
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  Dense<T> out(a.shape(), a.value().data * factor);
  return record<T>("scale", std::move(out), {a}, [factor](Node<T>& self) {
    if (auto* g = input_grad(self, 0)) g->data += self.grad.data * factor;
  });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T shift) {
  Dense<T> out(a.shape(), a.value().data + shift);
  return record<T>("add_scalar", std::move(out), {a}, [](Node<T>& self) {
    if (auto* g = input_grad(self, 0)) g->data += self.grad.data;
  });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  Dense<T> out(a.shape(), a.value().data.log());
  return record<T>("log", std::move(out), {a}, [](Node<T>& self) {
    if (auto* g = input_grad(self, 0)) g->data += self.grad.data / self.inputs[0]->value.data;
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  Dense<T> out = Dense<T>::from({1}, {a.value().data.sum()});
  return record<T>("sum", std::move(out), {a}, [](Node<T>& self) {
    if (auto* g = input_grad(self, 0)) g->data += self.grad.data[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  const T n = static_cast<T>(a.numel());
  Dense<T> out = Dense<T>::from({1}, {a.value().data.sum() / n});
  return record<T>("mean", std::move(out), {a}, [n](Node<T>& self) {
    if (auto* g = input_grad(self, 0)) g->data += self.grad.data[0] / n;
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  Dense<T> out(std::move(shape), a.value().data);
  return record<T>("reshape", std::move(out), {a}, [](Node<T>& self) {
    if (auto* g = input_grad(self, 0)) g->data += self.grad.data;
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  detail::require_rank("transpose", a, 2);
  const Index r = a.dim(0), c = a.dim(1);
  Dense<T> out({c, r});
  out.as_matrix(c, r) = a.value().as_matrix(r, c).transpose();
  return record<T>("transpose", std::move(out), {a}, [r, c](Node<T>& self) {
    if (auto* g = input_grad(self, 0)) g->as_matrix(r, c) += self.grad.as_matrix(c, r).transpose();
  });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank("matmul", a, 2);
  detail::require_rank("matmul", b, 2);
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw DimensionError("matmul: inner extents disagree " + to_string(a.shape()) + " x " + to_string(b.shape()));
  Dense<T> out({m, n});
  out.as_matrix(m, n).noalias() = a.value().as_matrix(m, k) * b.value().as_matrix(k, n);
  return record<T>("matmul", std::move(out), {a, b}, [m, k, n](Node<T>& self) {
    auto dc = self.grad.as_matrix(m, n);
    if (auto* g = input_grad(self, 0))
      g->as_matrix(m, k).noalias() += dc * self.inputs[1]->value.as_matrix(k, n).transpose();
    if (auto* g = input_grad(self, 1))
      g->as_matrix(k, n).noalias() += self.inputs[0]->value.as_matrix(m, k).transpose() * dc;
  });
}

// ---------------------------------------------------------------------------
// Convolution

struct ConvGeometry {
  Index channels, height, width;
  Index filters, kernel, stride, pad;
  Index out_height, out_width;

  bool is_pointwise() const { return kernel == 1 && stride == 1 && pad == 0; }
  Index patch() const { return channels * kernel * kernel; }
  Index out_pixels() const { return out_height * out_width; }
};

/// Output extents use floor((H + 2·pad − k)/stride) + 1; a kernel that does
/// not fit inside the padded input is a dimension error.
inline ConvGeometry conv_geometry(const Shape& x, const Shape& w, Index stride, Index pad) {
  if (x.size() != 3 || w.size() != 4) throw DimensionError("conv2d: expected C×H×W input and F×C×k×k weight");
  if (w[1] != x[0])
    throw DimensionError("conv2d: weight expects " + std::to_string(w[1]) + " channels, input has " +
                         std::to_string(x[0]));
  if (w[2] != w[3] || w[2] % 2 == 0) throw DimensionError("conv2d: kernel must be square with odd size");
  if (stride < 1 || pad < 0) throw DimensionError("conv2d: stride must be >= 1 and pad >= 0");
  ConvGeometry g{x[0], x[1], x[2], w[0], w[2], stride, pad, 0, 0};
  const Index span_h = g.height + 2 * pad - g.kernel;
  const Index span_w = g.width + 2 * pad - g.kernel;
  if (span_h < 0 || span_w < 0)
    throw DimensionError("conv2d: kernel " + std::to_string(g.kernel) + " does not fit input " + to_string(x));
  g.out_height = span_h / stride + 1;
  g.out_width = span_w / stride + 1;
  return g;
}

namespace detail {

template <typename T>
void im2col(const T* x, const ConvGeometry& g, typename Dense<T>::Matrix& cols) {
  cols.resize(g.patch(), g.out_pixels());
  for (Index c = 0; c < g.channels; ++c)
    for (Index ky = 0; ky < g.kernel; ++ky)
      for (Index kx = 0; kx < g.kernel; ++kx) {
        T* row = cols.data() + ((c * g.kernel + ky) * g.kernel + kx) * g.out_pixels();
        for (Index oy = 0; oy < g.out_height; ++oy) {
          const Index iy = oy * g.stride - g.pad + ky;
          T* dst = row + oy * g.out_width;
          if (iy < 0 || iy >= g.height) {
            std::fill(dst, dst + g.out_width, T(0));
            continue;
          }
          const T* src = x + (c * g.height + iy) * g.width;
          for (Index ox = 0; ox < g.out_width; ++ox) {
            const Index ix = ox * g.stride - g.pad + kx;
            dst[ox] = (ix >= 0 && ix < g.width) ? src[ix] : T(0);
          }
        }
      }
}

template <typename T>
void col2im_add(const typename Dense<T>::Matrix& cols, const ConvGeometry& g, T* x) {
  for (Index c = 0; c < g.channels; ++c)
    for (Index ky = 0; ky < g.kernel; ++ky)
      for (Index kx = 0; kx < g.kernel; ++kx) {
        const T* row = cols.data() + ((c * g.kernel + ky) * g.kernel + kx) * g.out_pixels();
        for (Index oy = 0; oy < g.out_height; ++oy) {
          const Index iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.height) continue;
          const T* src = row + oy * g.out_width;
          T* dst = x + (c * g.height + iy) * g.width;
          for (Index ox = 0; ox < g.out_width; ++ox) {
            const Index ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.width) dst[ix] += src[ox];
          }
        }
      }
}

}  // namespace detail

/// Cross-correlation of a C×H×W map with F×C×k×k filters (im2col + GEMM).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, Index stride = 1, Index pad = 0) {
  const ConvGeometry g = conv_geometry(x.shape(), w.shape(), stride, pad);
  using Matrix = typename Dense<T>::Matrix;
  Dense<T> out({g.filters, g.out_height, g.out_width});
  auto wm = w.value().as_matrix(g.filters, g.patch());
  Matrix cols;
  if (g.is_pointwise()) {
    out.as_matrix(g.filters, g.out_pixels()).noalias() = wm * x.value().as_matrix(g.channels, g.out_pixels());
  } else {
    detail::im2col(x.value().data.data(), g, cols);
    out.as_matrix(g.filters, g.out_pixels()).noalias() = wm * cols;
  }
  const bool keep_cols = grad_enabled() && w.requires_grad();
  if (!keep_cols) cols.resize(0, 0);
  return record<T>("conv2d", std::move(out), {x, w}, [g, cols = std::move(cols)](Node<T>& self) {
    auto dy = self.grad.as_matrix(g.filters, g.out_pixels());
    if (auto* gw = input_grad(self, 1)) {
      auto dw = gw->as_matrix(g.filters, g.patch());
      if (g.is_pointwise())
        dw.noalias() += dy * self.inputs[0]->value.as_matrix(g.channels, g.out_pixels()).transpose();
      else
        dw.noalias() += dy * cols.transpose();
    }
    if (auto* gx = input_grad(self, 0)) {
      auto wm = self.inputs[1]->value.as_matrix(g.filters, g.patch());
      if (g.is_pointwise()) {
        gx->as_matrix(g.channels, g.out_pixels()).noalias() += wm.transpose() * dy;
      } else {
        Matrix dcols = wm.transpose() * dy;
        detail::col2im_add<T>(dcols, g, gx->data.data());
      }
    }
  });
}

/// Adds b[c] to every pixel of channel c of a C×H×W map.
template <typename T>
Tensor<T> add_channel_bias(const Tensor<T>& x, const Tensor<T>& b) {
  detail::require_rank("add_channel_bias", x, 3);
  const Index c = x.dim(0), hw = x.dim(1) * x.dim(2);
  if (b.numel() != c) throw DimensionError("add_channel_bias: bias length does not match channel count");
  Dense<T> out = x.value();
  out.as_matrix(c, hw).colwise() += b.value().data.matrix();
  return record<T>("add_channel_bias", std::move(out), {x, b}, [c, hw](Node<T>& self) {
    if (auto* g = input_grad(self, 0)) g->data += self.grad.data;
    if (auto* g = input_grad(self, 1)) g->data += self.grad.as_matrix(c, hw).rowwise().sum().array();
  });
}

// ---------------------------------------------------------------------------
// Spatial reductions and resampling

/// Per-channel spatial sum: C×H×W -> C.
template <typename T>
Tensor<T> sum_spatial(const Tensor<T>& x) {
  detail::require_rank("sum_spatial", x, 3);
  const Index c = x.dim(0), hw = x.dim(1) * x.dim(2);
  Dense<T> out({c});
  out.data = x.value().as_matrix(c, hw).rowwise().sum().array();
  return record<T>("sum_spatial", std::move(out), {x}, [c, hw](Node<T>& self) {
    if (auto* g = input_grad(self, 0)) g->as_matrix(c, hw).colwise() += self.grad.data.matrix();
  });
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  detail::require_rank("global_avg_pool", x, 3);
  const Index c = x.dim(0), hw = x.dim(1) * x.dim(2);
  Dense<T> out({c});
  out.data = x.value().as_matrix(c, hw).rowwise().mean().array();
  return record<T>("global_avg_pool", std::move(out), {x}, [c, hw](Node<T>& self) {
    if (auto* g = input_grad(self, 0))
      g->as_matrix(c, hw).colwise() += (self.grad.data / static_cast<T>(hw)).matrix();
  });
}

inline bool is_upsample_factor(Index f) { return f == 2 || f == 4 || f == 8 || f == 16; }

/// Nearest-neighbour replication by a power-of-two factor in {2,4,8,16}.
template <typename T>
Tensor<T> upsample(const Tensor<T>& x, Index factor) {
  if (!is_upsample_factor(factor))
    throw ConfigError("upsample: factor must be one of 2,4,8,16, got " + std::to_string(factor));
  detail::require_rank("upsample", x, 3);
  const Index c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Dense<T> out({c, h * factor, w * factor});
  const auto& in = x.value();
  for (Index ch = 0; ch < c; ++ch)
    for (Index y = 0; y < h * factor; ++y)
      for (Index xx = 0; xx < w * factor; ++xx) out.at(ch, y, xx) = in.at(ch, y / factor, xx / factor);
  return record<T>("upsample", std::move(out), {x}, [c, h, w, factor](Node<T>& self) {
    if (auto* g = input_grad(self, 0))
      for (Index ch = 0; ch < c; ++ch)
        for (Index y = 0; y < h * factor; ++y)
          for (Index xx = 0; xx < w * factor; ++xx) g->at(ch, y / factor, xx / factor) += self.grad.at(ch, y, xx);
  });
}

// ---------------------------------------------------------------------------
// Channel plumbing

/// Stacks C_i×H×W maps along the channel axis in argument order.
template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>> xs) {
  if (xs.empty()) throw DimensionError("concat_channels: empty input list");
  if (xs.size() == 1) return xs.front();
  const Index h = xs.front().dim(1), w = xs.front().dim(2);
  Index total = 0;
  for (const auto& x : xs) {
    detail::require_rank("concat_channels", x, 3);
    if (x.dim(1) != h || x.dim(2) != w)
      throw DimensionError("concat_channels: spatial mismatch " + to_string(xs.front().shape()) + " vs " +
                           to_string(x.shape()));
    total += x.dim(0);
  }
  Dense<T> out({total, h, w});
  std::vector<Index> offsets;
  Index at = 0;
  for (const auto& x : xs) {
    offsets.push_back(at);
    out.data.segment(at, x.numel()) = x.value().data;
    at += x.numel();
  }
  return record<T>("concat_channels", std::move(out), std::vector<Tensor<T>>(xs.begin(), xs.end()),
                   [offsets](Node<T>& self) {
                     for (std::size_t i = 0; i < offsets.size(); ++i)
                       if (auto* g = input_grad(self, i))
                         g->data += self.grad.data.segment(offsets[i], g->numel());
                   });
}

template <typename T>
Tensor<T> concat_channels(std::initializer_list<Tensor<T>> xs) {
  return concat_channels<T>(std::span<const Tensor<T>>(xs.begin(), xs.size()));
}

/// Channels [begin, begin + count) of a C×H×W map.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, Index begin, Index count) {
  detail::require_rank("slice_channels", x, 3);
  if (begin < 0 || count < 1 || begin + count > x.dim(0))
    throw DimensionError("slice_channels: range out of bounds for " + to_string(x.shape()));
  const Index hw = x.dim(1) * x.dim(2);
  Dense<T> out({count, x.dim(1), x.dim(2)}, x.value().data.segment(begin * hw, count * hw));
  return record<T>("slice_channels", std::move(out), {x}, [begin, hw](Node<T>& self) {
    if (auto* g = input_grad(self, 0)) g->data.segment(begin * hw, self.grad.numel()) += self.grad.data;
  });
}

/// Broadcast Hadamard product: out[c,·,·] = s[c]·p[c,·,·].
template <typename T>
Tensor<T> channel_scale(const Tensor<T>& p, const Tensor<T>& s) {
  detail::require_rank("channel_scale", p, 3);
  const Index c = p.dim(0), hw = p.dim(1) * p.dim(2);
  if (s.numel() != c)
    throw DimensionError("channel_scale: gate length " + std::to_string(s.numel()) + " vs " + std::to_string(c) +
                         " channels");
  Dense<T> out(p.shape());
  out.as_matrix(c, hw) = s.value().data.matrix().asDiagonal() * p.value().as_matrix(c, hw);
  return record<T>("channel_scale", std::move(out), {p, s}, [c, hw](Node<T>& self) {
    auto dy = self.grad.as_matrix(c, hw);
    if (auto* g = input_grad(self, 0))
      g->as_matrix(c, hw) += self.inputs[1]->value.data.matrix().asDiagonal() * dy;
    if (auto* g = input_grad(self, 1))
      g->data += dy.cwiseProduct(self.inputs[0]->value.as_matrix(c, hw)).rowwise().sum().array();
  });
}

// ---------------------------------------------------------------------------
// Nonlinearities

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Dense<T> out(x.shape(), x.value().data.max(T(0)));
  return record<T>("relu", std::move(out), {x}, [](Node<T>& self) {
    if (auto* g = input_grad(self, 0))
      g->data += (self.inputs[0]->value.data > T(0)).select(self.grad.data, T(0));
  });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Dense<T> out(x.shape(), T(1) / (T(1) + (-x.value().data).exp()));
  return record<T>("sigmoid", std::move(out), {x}, [](Node<T>& self) {
    if (auto* g = input_grad(self, 0)) g->data += self.grad.data * self.value.data * (T(1) - self.value.data);
  });
}

/// sign(x)·sqrt(|x|); the subgradient at exactly 0 is taken as 0.
template <typename T>
Tensor<T> signed_sqrt(const Tensor<T>& x) {
  const auto& v = x.value().data;
  Dense<T> out(x.shape(), v.sign() * v.abs().sqrt());
  return record<T>("signed_sqrt", std::move(out), {x}, [](Node<T>& self) {
    if (auto* g = input_grad(self, 0)) {
      const auto& root = self.value.data;
      g->data += (root != T(0)).select(self.grad.data / (T(2) * root.abs()), T(0));
    }
  });
}

template <typename T>
constexpr T default_norm_eps() {
  return sizeof(T) >= 8 ? T(1e-12) : T(1e-8);
}

/// x / max(‖x‖₂, eps) over the whole tensor (Frobenius norm for matrices).
template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& x, T eps = default_norm_eps<T>()) {
  if (!(eps > T(0))) throw ConfigError("l2_normalize: eps must be positive");
  const T norm = x.value().data.matrix().norm();
  const T denom = std::max(norm, eps);
  Dense<T> out(x.shape(), x.value().data / denom);
  return record<T>("l2_normalize", std::move(out), {x}, [denom, clipped = norm < eps](Node<T>& self) {
    if (auto* g = input_grad(self, 0)) {
      if (clipped) {
        g->data += self.grad.data / denom;
      } else {
        const T proj = (self.grad.data * self.value.data).sum();
        g->data += (self.grad.data - self.value.data * proj) / denom;
      }
    }
  });
}

namespace detail {

template <typename T>
Dense<T> channel_softmax(const Dense<T>& x, bool log_space) {
  const Index c = x.dim(0), hw = x.numel() / c;
  Dense<T> out(x.shape);
  auto in = x.as_matrix(c, hw);
  auto o = out.as_matrix(c, hw);
  const auto peak = in.colwise().maxCoeff().eval();
  o = in.rowwise() - peak;
  const auto denom = o.array().exp().colwise().sum().eval();
  if (log_space)
    o.rowwise() -= denom.log().matrix();
  else
    o = (o.array().exp().rowwise() / denom).matrix();
  return out;
}

}  // namespace detail

/// Softmax across the leading (class) axis independently at every pixel.
template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& x) {
  const Index c = x.dim(0), hw = x.numel() / c;
  Dense<T> out = detail::channel_softmax(x.value(), false);
  return record<T>("softmax_channels", std::move(out), {x}, [c, hw](Node<T>& self) {
    if (auto* g = input_grad(self, 0)) {
      auto s = self.value.as_matrix(c, hw).array();
      auto dy = self.grad.as_matrix(c, hw).array();
      const auto dot = (s * dy).colwise().sum().eval();
      g->as_matrix(c, hw).array() += s * (dy.rowwise() - dot);
    }
  });
}

template <typename T>
Tensor<T> log_softmax_channels(const Tensor<T>& x) {
  const Index c = x.dim(0), hw = x.numel() / c;
  Dense<T> out = detail::channel_softmax(x.value(), true);
  return record<T>("log_softmax_channels", std::move(out), {x}, [c, hw](Node<T>& self) {
    if (auto* g = input_grad(self, 0)) {
      auto dy = self.grad.as_matrix(c, hw).array();
      const auto total = dy.colwise().sum().eval();
      const auto s = self.value.as_matrix(c, hw).array().exp().eval();
      g->as_matrix(c, hw).array() += dy - s.rowwise() * total;
    }
  });
}

// ---------------------------------------------------------------------------
// Batch normalization

enum class NormMode { training, inference };

template <typename T>
struct BatchNormStats {
  Dense<T> running_mean;
  Dense<T> running_var;

  BatchNormStats() = default;
  explicit BatchNormStats(Index channels)
      : running_mean(Shape{channels}), running_var(Dense<T>::constant({channels}, T(1))) {}
};

/// Per-channel standardization with learned affine. `x` is `groups` samples
/// stacked along the channel axis (groups·C × H × W); training statistics pool
/// over all groups and pixels of a channel. Inference uses the running stats.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, BatchNormStats<T>& stats,
                     NormMode mode, Index groups = 1, T momentum = T(0.1), T eps = T(1e-5)) {
  detail::require_rank("batch_norm", x, 3);
  const Index c = gamma.numel();
  if (beta.numel() != c || groups < 1 || x.dim(0) != groups * c)
    throw DimensionError("batch_norm: " + to_string(x.shape()) + " is not " + std::to_string(groups) + " x " +
                         std::to_string(c) + " channels");
  if (stats.running_mean.empty()) stats = BatchNormStats<T>(c);
  const Index hw = x.dim(1) * x.dim(2);
  const Index count = groups * hw;
  using Vec = Eigen::Array<T, Eigen::Dynamic, 1>;
  auto xm = x.value().as_matrix(groups * c, hw);

  Vec mu(c), var(c);
  if (mode == NormMode::training) {
    mu.setZero();
    var.setZero();
    for (Index gi = 0; gi < groups; ++gi) mu += xm.middleRows(gi * c, c).rowwise().sum().array();
    mu /= static_cast<T>(count);
    for (Index gi = 0; gi < groups; ++gi)
      var += (xm.middleRows(gi * c, c).colwise() - mu.matrix()).array().square().rowwise().sum();
    var /= static_cast<T>(count);
    const T unbias = count > 1 ? static_cast<T>(count) / static_cast<T>(count - 1) : T(1);
    stats.running_mean.data = (T(1) - momentum) * stats.running_mean.data + momentum * mu;
    stats.running_var.data = (T(1) - momentum) * stats.running_var.data + momentum * var * unbias;
  } else {
    mu = stats.running_mean.data;
    var = stats.running_var.data;
  }
  const Vec inv_std = (var + eps).rsqrt();

  Dense<T> xhat(x.shape());
  Dense<T> out(x.shape());
  auto xh = xhat.as_matrix(groups * c, hw);
  auto o = out.as_matrix(groups * c, hw);
  for (Index gi = 0; gi < groups; ++gi) {
    xh.middleRows(gi * c, c) = inv_std.matrix().asDiagonal() * (xm.middleRows(gi * c, c).colwise() - mu.matrix());
    o.middleRows(gi * c, c) = (gamma.value().data.matrix().asDiagonal() * xh.middleRows(gi * c, c)).colwise() +
                              beta.value().data.matrix();
  }

  const bool training = mode == NormMode::training;
  return record<T>("batch_norm", std::move(out), {x, gamma, beta},
                   [c, hw, groups, count, training, inv_std, xhat = std::move(xhat)](Node<T>& self) {
                     auto dy = self.grad.as_matrix(groups * c, hw);
                     auto xh = xhat.as_matrix(groups * c, hw);
                     Vec dgamma = Vec::Zero(c), dbeta = Vec::Zero(c);
                     for (Index gi = 0; gi < groups; ++gi) {
                       dbeta += dy.middleRows(gi * c, c).rowwise().sum().array();
                       dgamma += dy.middleRows(gi * c, c).cwiseProduct(xh.middleRows(gi * c, c)).rowwise().sum().array();
                     }
                     if (auto* g = input_grad(self, 1)) g->data += dgamma;
                     if (auto* g = input_grad(self, 2)) g->data += dbeta;
                     auto* gx = input_grad(self, 0);
                     if (!gx) return;
                     const Vec& gamma_v = self.inputs[1]->value.data;
                     auto gxm = gx->as_matrix(groups * c, hw);
                     const Vec scale_v = gamma_v * inv_std;
                     for (Index gi = 0; gi < groups; ++gi) {
                       auto dyg = dy.middleRows(gi * c, c);
                       if (training) {
                         // dx = γ/σ · (dy − mean(dy) − x̂·mean(dy·x̂))
                         const Vec mean_dy = dbeta / static_cast<T>(count);
                         const Vec mean_dyx = dgamma / static_cast<T>(count);
                         gxm.middleRows(gi * c, c) +=
                             scale_v.matrix().asDiagonal() *
                             ((dyg.colwise() - mean_dy.matrix()) -
                              mean_dyx.matrix().asDiagonal() * xh.middleRows(gi * c, c));
                       } else {
                         gxm.middleRows(gi * c, c) += scale_v.matrix().asDiagonal() * dyg;
                       }
                     }
                   });
}

}  // namespace barnet
