#pragma once

#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "barnet/arf.hpp"
#include "barnet/bam.hpp"
#include "barnet/init.hpp"
#include "barnet/ops.hpp"

namespace barnet {

/// Which coarser decoder levels feed each ARF.
enum class DecoderWiring {
  dense,  ///< every coarser level feeds every finer level
  chain,  ///< only the immediately coarser level
};

inline std::string to_string(DecoderWiring w) { return w == DecoderWiring::dense ? "dense" : "chain"; }

inline DecoderWiring parse_wiring(const std::string& s) {
  if (s == "dense") return DecoderWiring::dense;
  if (s == "chain") return DecoderWiring::chain;
  throw ConfigError("unknown decoder wiring '" + s + "' (expected dense or chain)");
}

struct ModelConfig {
  Index in_channels = 3;
  Index num_classes = 4;
  /// Encoder stage widths; each stage halves the resolution.
  std::vector<Index> widths{16, 32, 64, 128};
  /// N: channels every low-scale ARF input is compressed to.
  Index arf_channels = 8;
  bool use_bam = true;
  bool use_arf = true;
  GateType gate = GateType::sigmoid;
  DecoderWiring wiring = DecoderWiring::dense;
  /// BAM runs on this many of the coarsest encoder outputs.
  Index bam_stages = 2;
  /// Adds a decoder level at input resolution whose finest input is the image.
  bool full_resolution = true;
  double bn_momentum = 0.1;

  Index stages() const { return static_cast<Index>(widths.size()); }
  Index downsample() const { return Index(1) << stages(); }
};

/// Convolution followed by batch norm.
template <typename T>
struct ConvBn {
  Tensor<T> weight;
  Tensor<T> gamma;
  Tensor<T> beta;
  BatchNormStats<T> stats;
  Index stride = 1;
  Index pad = 0;

  static ConvBn make(Index in, Index out, Index kernel, Index stride, std::mt19937_64& rng) {
    ConvBn c;
    c.weight = he_uniform<T>({out, in, kernel, kernel}, in * kernel * kernel, rng);
    c.gamma = filled_parameter<T>({out}, T(1));
    c.beta = filled_parameter<T>({out}, T(0));
    c.stats = BatchNormStats<T>(out);
    c.stride = stride;
    c.pad = kernel / 2;
    return c;
  }
};

template <typename T>
struct ResidualStage {
  ConvBn<T> conv1;     // 3×3, stride 2
  ConvBn<T> conv2;     // 3×3
  ConvBn<T> shortcut;  // 1×1, stride 2
};

template <typename T>
struct DecoderLevel {
  /// Indices of the coarser levels feeding this one (coarse to fine).
  std::vector<std::size_t> sources;
  /// Present whenever the level has at least one coarser source.
  std::optional<ArfWeights<T>> arf;
  ConvBn<T> fuse;
  Index skip_channels = 0;
  Index width = 0;
};

using Batch = std::vector<std::size_t>;

/// Small residual encoder with BAM on the coarsest stages and a decoder whose
/// levels fuse multi-scale inputs through ARF modules.
template <typename T>
class BarnetMini {
 public:
  BarnetMini(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
    if (config_.widths.empty()) throw ConfigError("model needs at least one encoder stage");
    if (config_.num_classes < 2) throw ConfigError("model needs at least two classes");
    if (config_.bam_stages < 0 || config_.bam_stages > config_.stages())
      throw ConfigError("bam_stages must lie in [0, number of encoder stages]");
    std::mt19937_64 rng(seed);
    Index in = config_.in_channels;
    for (Index w : config_.widths) {
      ResidualStage<T> s;
      s.conv1 = ConvBn<T>::make(in, w, 3, 2, rng);
      s.conv2 = ConvBn<T>::make(w, w, 3, 1, rng);
      s.shortcut = ConvBn<T>::make(in, w, 1, 2, rng);
      encoder_.push_back(std::move(s));
      in = w;
    }
    const Index levels = config_.stages() + (config_.full_resolution ? 1 : 0);
    for (Index l = 0; l < levels; ++l) {
      DecoderLevel<T> level;
      const bool image_level = l == config_.stages();
      level.skip_channels = image_level ? config_.in_channels : config_.widths[config_.stages() - 1 - l];
      level.width = image_level ? config_.widths.front() : config_.widths[config_.stages() - 1 - l];
      if (l > 0) {
        if (config_.wiring == DecoderWiring::dense)
          for (Index s = 0; s < l; ++s) level.sources.push_back(static_cast<std::size_t>(s));
        else
          level.sources.push_back(static_cast<std::size_t>(l - 1));
      }
      Index fused_channels = level.skip_channels;
      if (!level.sources.empty()) {
        std::vector<Index> channels;
        for (std::size_t s : level.sources) channels.push_back(decoder_[s].width);
        channels.push_back(level.skip_channels);
        level.arf = make_arf_weights<T>(channels, config_.arf_channels, config_.use_arf, config_.gate, rng);
        fused_channels = pyramid_channels(channels, config_.arf_channels);
      }
      level.fuse = ConvBn<T>::make(fused_channels, level.width, 3, 1, rng);
      decoder_.push_back(std::move(level));
    }
    head_weight_ = he_uniform<T>({config_.num_classes, decoder_.back().width, 1, 1}, decoder_.back().width, rng);
    head_bias_ = filled_parameter<T>({config_.num_classes}, T(0));
  }

  const ModelConfig& config() const { return config_; }

  /// Throws a DimensionError naming the padding needed when the input size
  /// is not a multiple of the total downsampling factor.
  void check_input(const Tensor<T>& image) const {
    detail::require_rank("BarnetMini::forward", image, 3);
    if (image.dim(0) != config_.in_channels)
      throw DimensionError("BarnetMini::forward: expected " + std::to_string(config_.in_channels) +
                           " input channels, got " + std::to_string(image.dim(0)));
    const Index f = config_.downsample();
    const Index h = image.dim(1), w = image.dim(2);
    if (h % f != 0 || w % f != 0) {
      const Index ph = (f - h % f) % f, pw = (f - w % f) % f;
      throw DimensionError("BarnetMini::forward: input " + std::to_string(h) + "x" + std::to_string(w) +
                           " must have height and width divisible by " + std::to_string(f) + "; pad by " +
                           std::to_string(ph) + " rows and " + std::to_string(pw) + " columns");
    }
  }

  /// Per-pixel class logits for every image of a batch. In training mode the
  /// batch-norm statistics pool across the whole batch.
  std::vector<Tensor<T>> forward(std::span<const Tensor<T>> images, NormMode mode) {
    if (images.empty()) throw DimensionError("BarnetMini::forward: empty batch");
    for (const auto& img : images) {
      check_input(img);
      if (img.shape() != images.front().shape()) throw DimensionError("BarnetMini::forward: ragged batch");
    }
    const Index stages = config_.stages();
    std::vector<std::vector<Tensor<T>>> encoded;
    std::vector<Tensor<T>> x(images.begin(), images.end());
    for (auto& stage : encoder_) {
      auto a = conv_bn(x, stage.conv1, mode, true);
      auto b = conv_bn(a, stage.conv2, mode, false);
      auto s = conv_bn(x, stage.shortcut, mode, false);
      for (std::size_t i = 0; i < b.size(); ++i) b[i] = relu(add(b[i], s[i]));
      encoded.push_back(b);
      x = std::move(b);
    }

    std::vector<std::vector<Tensor<T>>> levels;
    for (std::size_t l = 0; l < decoder_.size(); ++l) {
      DecoderLevel<T>& level = decoder_[l];
      const Index li = static_cast<Index>(l);
      std::vector<Tensor<T>> skip;
      if (li == stages) {
        skip.assign(images.begin(), images.end());
      } else {
        skip = encoded[static_cast<std::size_t>(stages - 1 - li)];
        if (config_.use_bam && li < config_.bam_stages)
          for (auto& t : skip) t = bam_forward(t);
      }
      std::vector<Tensor<T>> fused = skip;
      if (level.arf) {
        for (std::size_t i = 0; i < skip.size(); ++i) {
          std::vector<Tensor<T>> xs;
          for (std::size_t s : level.sources) xs.push_back(levels[s][i]);
          xs.push_back(skip[i]);
          fused[i] = arf_forward<T>(xs, *level.arf);
        }
      }
      levels.push_back(conv_bn(fused, level.fuse, mode, true));
    }

    std::vector<Tensor<T>> logits;
    for (const auto& feat : levels.back()) {
      Tensor<T> y = add_channel_bias(conv2d(feat, head_weight_), head_bias_);
      if (!config_.full_resolution) y = upsample(y, Index(2));
      logits.push_back(std::move(y));
    }
    return logits;
  }

  Tensor<T> forward(const Tensor<T>& image, NormMode mode = NormMode::inference) {
    return forward(std::span<const Tensor<T>>(&image, 1), mode).front();
  }

  /// Every trainable tensor with a stable hierarchical name, in creation order.
  std::vector<std::pair<std::string, Tensor<T>*>> parameter_slots() {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    auto conv = [&out](const std::string& p, ConvBn<T>& c) {
      out.emplace_back(p + ".weight", &c.weight);
      out.emplace_back(p + ".gamma", &c.gamma);
      out.emplace_back(p + ".beta", &c.beta);
    };
    for (std::size_t i = 0; i < encoder_.size(); ++i) {
      const std::string p = "encoder." + std::to_string(i);
      conv(p + ".conv1", encoder_[i].conv1);
      conv(p + ".conv2", encoder_[i].conv2);
      conv(p + ".shortcut", encoder_[i].shortcut);
    }
    for (std::size_t l = 0; l < decoder_.size(); ++l) {
      const std::string p = "decoder." + std::to_string(l);
      if (auto& arf = decoder_[l].arf) {
        for (std::size_t k = 0; k < arf->compress.size(); ++k)
          out.emplace_back(p + ".arf.compress." + std::to_string(k), &arf->compress[k]);
        if (arf->gate) {
          out.emplace_back(p + ".arf.gate.w1", &arf->gate->w1);
          out.emplace_back(p + ".arf.gate.b1", &arf->gate->b1);
          out.emplace_back(p + ".arf.gate.w2", &arf->gate->w2);
          out.emplace_back(p + ".arf.gate.b2", &arf->gate->b2);
        }
      }
      conv(p + ".fuse", decoder_[l].fuse);
    }
    out.emplace_back("head.weight", &head_weight_);
    out.emplace_back("head.bias", &head_bias_);
    return out;
  }

  /// Handles sharing storage with the model's parameters.
  std::vector<std::pair<std::string, Tensor<T>>> named_parameters() const {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    for (const auto& [name, slot] : const_cast<BarnetMini*>(this)->parameter_slots()) out.emplace_back(name, *slot);
    return out;
  }

  /// Batch-norm running statistics (not trained by the optimizer).
  std::vector<std::pair<std::string, Dense<T>*>> named_buffers() {
    std::vector<std::pair<std::string, Dense<T>*>> out;
    auto stats = [&out](const std::string& p, ConvBn<T>& c) {
      out.emplace_back(p + ".running_mean", &c.stats.running_mean);
      out.emplace_back(p + ".running_var", &c.stats.running_var);
    };
    for (std::size_t i = 0; i < encoder_.size(); ++i) {
      const std::string p = "encoder." + std::to_string(i);
      stats(p + ".conv1", encoder_[i].conv1);
      stats(p + ".conv2", encoder_[i].conv2);
      stats(p + ".shortcut", encoder_[i].shortcut);
    }
    for (std::size_t l = 0; l < decoder_.size(); ++l) stats("decoder." + std::to_string(l) + ".fuse", decoder_[l].fuse);
    return out;
  }

  Index parameter_count() const {
    Index n = 0;
    for (const auto& [name, t] : named_parameters()) n += t.numel();
    return n;
  }

  /// Parameters of the ARF gate branches (what disabling ARF removes).
  Index arf_gate_parameter_count() const {
    Index n = 0;
    for (const auto& level : decoder_)
      if (level.arf && level.arf->gate) n += level.arf->gate->parameter_count();
    return n;
  }

  /// All ARF parameters, compression filters included.
  Index arf_parameter_count() const {
    Index n = 0;
    for (const auto& level : decoder_)
      if (level.arf) n += level.arf->parameter_count();
    return n;
  }

  /// BAM is parameter-free; kept as a query so accounting code reads uniformly.
  Index bam_parameter_count() const { return 0; }

  const std::vector<DecoderLevel<T>>& decoder() const { return decoder_; }

  /// Deep copy with every parameter and buffer duplicated.
  BarnetMini clone() const {
    BarnetMini copy = *this;
    copy.detach_all();
    return copy;
  }

  /// Copy of `model` with BAM and/or ARF gating switched off. Disabled BAM is an
  /// identity passthrough; disabled ARF keeps compression and concatenation
  /// but drops the gate parameters (unit gate).
  friend BarnetMini ablate(const BarnetMini& model, bool use_bam, bool use_arf) {
    if (use_bam && !model.config_.use_bam) throw ConfigError("ablate: cannot enable BAM on a model without it");
    if (use_arf && !model.config_.use_arf) throw ConfigError("ablate: cannot enable ARF gates on a model without them");
    BarnetMini copy = model.clone();
    copy.config_.use_bam = use_bam;
    copy.config_.use_arf = use_arf;
    if (!use_arf)
      for (auto& level : copy.decoder_)
        if (level.arf) level.arf->gate.reset();
    return copy;
  }

 private:
  std::vector<Tensor<T>> conv_bn(std::span<const Tensor<T>> xs, ConvBn<T>& layer, NormMode mode, bool activate) {
    std::vector<Tensor<T>> convs;
    convs.reserve(xs.size());
    for (const auto& x : xs) convs.push_back(conv2d(x, layer.weight, layer.stride, layer.pad));
    const Index c = layer.gamma.numel();
    const Index groups = static_cast<Index>(convs.size());
    Tensor<T> normed = batch_norm(concat_channels<T>(convs), layer.gamma, layer.beta, layer.stats, mode, groups,
                                  static_cast<T>(config_.bn_momentum));
    std::vector<Tensor<T>> out;
    out.reserve(convs.size());
    for (Index g = 0; g < groups; ++g) {
      Tensor<T> y = groups == 1 ? normed : slice_channels(normed, g * c, c);
      out.push_back(activate ? relu(y) : y);
    }
    return out;
  }

  void detach_all() {
    for (auto& [name, slot] : parameter_slots()) *slot = slot->clone();
  }

  ModelConfig config_;
  std::vector<ResidualStage<T>> encoder_;
  std::vector<DecoderLevel<T>> decoder_;
  Tensor<T> head_weight_;
  Tensor<T> head_bias_;
};

/// Copies parameter and buffer values between models of possibly different
/// scalar types. Names must match exactly.
template <typename Dst, typename Src>
void copy_weights(BarnetMini<Dst>& dst, const BarnetMini<Src>& src) {
  auto sp = src.named_parameters();
  auto dp = dst.named_parameters();
  if (sp.size() != dp.size()) throw DimensionError("copy_weights: parameter lists differ");
  for (std::size_t i = 0; i < sp.size(); ++i) {
    if (sp[i].first != dp[i].first || sp[i].second.shape() != dp[i].second.shape())
      throw DimensionError("copy_weights: mismatch at " + sp[i].first);
    dp[i].second.mutable_value().data = sp[i].second.value().data.template cast<Dst>();
  }
  auto sb = const_cast<BarnetMini<Src>&>(src).named_buffers();
  auto db = dst.named_buffers();
  for (std::size_t i = 0; i < sb.size(); ++i) db[i].second->data = sb[i].second->data.template cast<Dst>();
}

}  // namespace barnet
