#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "barnet/mask.hpp"
#include "barnet/tensor.hpp"

namespace barnet {

struct SceneConfig {
  Index height = 64;
  Index width = 64;
  Index num_classes = 4;
  /// Object long-axis length as a fraction of min(height, width).
  double scale_min = 0.05;
  double scale_max = 0.5;
  Index max_objects = 3;
  double specular_prob = 0.5;
  double specular_intensity = 0.95;
  double shadow_prob = 0.5;
  double shadow_darkness = 0.55;
  double texture_amplitude = 0.06;
  double noise_amplitude = 0.02;
  /// Without lighting effects no pixel exceeds this value.
  double brightness_ceiling = 0.85;
  std::uint64_t seed = 1;

  void validate() const;
};

struct ObjectMeta {
  int class_id = 0;
  double scale = 0.0;
  double center_x = 0.0;
  double center_y = 0.0;
  double angle = 0.0;

  bool operator==(const ObjectMeta&) const = default;
};

struct SpecularMeta {
  double center_x = 0.0;
  double center_y = 0.0;
  double radius_x = 0.0;
  double radius_y = 0.0;
  double intensity = 0.0;

  bool operator==(const SpecularMeta&) const = default;
};

struct ShadowMeta {
  std::vector<double> polygon;  // x0 y0 x1 y1 ...
  double darkness = 0.0;

  bool operator==(const ShadowMeta&) const = default;
};

struct SampleMeta {
  std::uint64_t seed = 0;
  std::vector<ObjectMeta> objects;
  std::vector<SpecularMeta> speculars;
  std::vector<ShadowMeta> shadows;

  bool operator==(const SampleMeta&) const = default;
};

struct SegSample {
  Dense<float> image;  // 3×H×W in [0,1]
  LabelMap mask;
  SampleMeta meta;
};

/// Seed of sample `index` under a master seed (splitmix64 mixing).
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index);

/// Renders scene `index`. The mask is rasterized before any lighting effect.
SegSample generate(const SceneConfig& cfg, std::uint64_t index);

/// Same scene geometry without specular highlights or shadows.
SegSample generate_unlit(const SceneConfig& cfg, std::uint64_t index);

struct AugmentParams {
  int quarter_turns = 0;  // counter-clockwise, 0..3
  double angle_deg = 0.0;
  Index shift_x = 0;
  Index shift_y = 0;
  bool flip_horizontal = false;
  bool flip_vertical = false;

  bool is_identity() const {
    return quarter_turns == 0 && angle_deg == 0.0 && shift_x == 0 && shift_y == 0 && !flip_horizontal &&
           !flip_vertical;
  }
};

/// Draws a rotation (multiple of 90° plus up to ±15°), a shift of at most 10%
/// of each extent and independent flips.
AugmentParams draw_augment(Index height, Index width, std::mt19937_64& rng);

/// Applies the same geometric transform to image and mask. Flips and quarter
/// turns are exact permutations; the small rotation and shift resample with
/// nearest neighbour and fill uncovered pixels with background.
SegSample apply_augment(const SegSample& sample, const AugmentParams& params);

SegSample augment(const SegSample& sample, std::mt19937_64& rng);

// --- file formats -----------------------------------------------------------

void write_ppm(const std::filesystem::path& path, const Dense<float>& image);
Dense<float> read_ppm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const LabelMap& mask);
LabelMap read_pgm(const std::filesystem::path& path);

std::string format_meta(const SampleMeta& meta);
SampleMeta parse_meta(const std::string& text);

/// Writes `<stem>.ppm`, `<stem>.pgm` and `<stem>.meta`.
void save_sample(const std::filesystem::path& stem, const SegSample& sample);
SegSample load_sample(const std::filesystem::path& stem);

struct ManifestEntry {
  std::string split;
  std::string relative_path;  // image path relative to the dataset root
  std::uint64_t seed = 0;
};

std::string format_scene_config(const SceneConfig& cfg);
SceneConfig parse_scene_config(const std::string& text);

/// Generates `n_train` + `n_test` samples under `root` with a manifest of
/// "split<TAB>relative_path<TAB>seed" lines. Train uses indices [0, n_train),
/// test [n_train, n_train + n_test), so split seeds never collide.
std::vector<ManifestEntry> make_dataset(const SceneConfig& cfg, std::size_t n_train, std::size_t n_test,
                                        const std::filesystem::path& root, bool overwrite = false);

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& root);

struct DatasetSplits {
  std::vector<SegSample> train;
  std::vector<SegSample> test;
};

DatasetSplits load_dataset(const std::filesystem::path& root);

/// In-memory equivalent of make_dataset.
DatasetSplits synthesize_dataset(const SceneConfig& cfg, std::size_t n_train, std::size_t n_test);

/// Image as an autograd leaf.
template <typename T>
Tensor<T> image_tensor(const SegSample& s) {
  return Tensor<T>(s.image.cast<T>());
}

}  // namespace barnet
