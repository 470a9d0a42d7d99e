#include "barnet/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numbers>
#include <sstream>

#include "barnet/flat_text.hpp"

namespace barnet {

namespace fs = std::filesystem;

void SceneConfig::validate() const {
  if (height < 8 || width < 8) throw ConfigError("scene: height and width must be at least 8");
  if (num_classes < 2 || num_classes > 256) throw ConfigError("scene: num_classes must lie in [2,256]");
  if (!(scale_min > 0.0 && scale_min <= scale_max && scale_max <= 1.0))
    throw ConfigError("scene: scale range must satisfy 0 < min <= max <= 1");
  if (max_objects < 1) throw ConfigError("scene: max_objects must be >= 1");
  auto prob = [](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string("scene: ") + name + " must lie in [0,1]");
  };
  prob(specular_prob, "specular_prob");
  prob(shadow_prob, "shadow_prob");
  prob(specular_intensity, "specular_intensity");
  prob(shadow_darkness, "shadow_darkness");
  prob(brightness_ceiling, "brightness_ceiling");
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  std::uint64_t z = master + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

namespace {

using Rgb = std::array<double, 3>;

constexpr std::array<Rgb, 10> kPalette{{
    {0.62, 0.64, 0.70},  // steel
    {0.15, 0.30, 0.78},  // blue
    {0.20, 0.66, 0.30},  // green
    {0.80, 0.72, 0.12},  // yellow
    {0.10, 0.62, 0.66},  // teal
    {0.58, 0.22, 0.68},  // violet
    {0.12, 0.12, 0.14},  // black
    {0.82, 0.45, 0.10},  // orange
    {0.40, 0.82, 0.72},  // mint
    {0.45, 0.30, 0.12},  // brown
}};

double uniform(std::mt19937_64& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

bool bernoulli(std::mt19937_64& rng, double p) { return uniform(rng, 0.0, 1.0) < p; }

/// Inside test in the object's local frame (u along the long axis).
bool inside_shape(int class_id, double u, double v, double length) {
  const double half = 0.5 * length;
  switch ((class_id - 1) % 3) {
    case 0:  // shaft
      return std::abs(u) <= half && std::abs(v) <= 0.17 * length;
    case 1: {  // blade: tip at +u, base at −u
      if (u < -half || u > half) return false;
      const double w = 0.32 * length * (half - u) / length;
      return std::abs(v) <= w;
    }
    default:  // diamond
      return std::abs(u) / half + std::abs(v) / (0.24 * length) <= 1.0;
  }
}

bool point_in_polygon(const std::vector<double>& poly, double x, double y) {
  bool in = false;
  const std::size_t n = poly.size() / 2;
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const double xi = poly[2 * i], yi = poly[2 * i + 1], xj = poly[2 * j], yj = poly[2 * j + 1];
    if ((yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi) in = !in;
  }
  return in;
}

struct Scene {
  SegSample sample;
  std::vector<double> object_length;  // pixels, parallel to meta.objects
};

Scene render_geometry(const SceneConfig& cfg, std::uint64_t index) {
  cfg.validate();
  const Index h = cfg.height, w = cfg.width;
  const double size = static_cast<double>(std::min(h, w));
  Scene scene;
  SegSample& s = scene.sample;
  s.meta.seed = derive_seed(cfg.seed, index);
  std::mt19937_64 rng(s.meta.seed);
  s.image = Dense<float>({3, h, w});
  s.mask = LabelMap(h, w, 0);

  // Background: tissue-like base colour with low-frequency waves and noise.
  Rgb base{uniform(rng, 0.45, 0.60), uniform(rng, 0.18, 0.32), uniform(rng, 0.14, 0.28)};
  struct Wave {
    double fx, fy, phase;
  };
  std::array<Wave, 3> waves{};
  for (auto& wave : waves) {
    const double f = uniform(rng, 1.0, 4.0) * 2.0 * std::numbers::pi / size;
    const double dir = uniform(rng, 0.0, std::numbers::pi);
    wave = {f * std::cos(dir), f * std::sin(dir), uniform(rng, 0.0, 2.0 * std::numbers::pi)};
  }
  std::vector<double> canvas(static_cast<std::size_t>(3 * h * w));
  auto px = [&](int c, Index y, Index x) -> double& { return canvas[static_cast<std::size_t>((c * h + y) * w + x)]; };
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      double t = 0;
      for (const auto& wave : waves) t += std::sin(wave.fx * x + wave.fy * y + wave.phase);
      t *= cfg.texture_amplitude / 3.0;
      for (int c = 0; c < 3; ++c) px(c, y, x) = base[static_cast<std::size_t>(c)] + t + uniform(rng, -1, 1) * cfg.noise_amplitude;
    }

  // Instruments.
  const auto count = std::uniform_int_distribution<Index>(1, cfg.max_objects)(rng);
  for (Index o = 0; o < count; ++o) {
    const int class_id = static_cast<int>(std::uniform_int_distribution<Index>(1, cfg.num_classes - 1)(rng));
    bool placed = false;
    for (int attempt = 0; attempt < 10 && !placed; ++attempt) {
      ObjectMeta obj;
      obj.class_id = class_id;
      obj.scale = uniform(rng, cfg.scale_min, cfg.scale_max);
      obj.center_x = uniform(rng, 0.1, 0.9) * static_cast<double>(w);
      obj.center_y = uniform(rng, 0.1, 0.9) * static_cast<double>(h);
      obj.angle = uniform(rng, 0.0, std::numbers::pi);
      const double length = obj.scale * size;
      const double brightness = uniform(rng, 0.9, 1.08);
      const double phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
      const double ca = std::cos(obj.angle), sa = std::sin(obj.angle);
      std::vector<Index> pixels;
      for (Index y = 0; y < h; ++y)
        for (Index x = 0; x < w; ++x) {
          const double dx = x + 0.5 - obj.center_x, dy = y + 0.5 - obj.center_y;
          const double u = ca * dx + sa * dy, v = -sa * dx + ca * dy;
          if (inside_shape(class_id, u, v, length)) pixels.push_back(y * w + x);
        }
      if (pixels.size() < 4) continue;  // degenerate at this scale: resample
      const Rgb& color = kPalette[static_cast<std::size_t>((class_id - 1) % 10)];
      const double stripe_freq = 2.0 * std::numbers::pi * (0.12 + 0.08 * ((class_id - 1) % 4));
      for (Index p : pixels) {
        const Index y = p / w, x = p % w;
        const double dx = x + 0.5 - obj.center_x, dy = y + 0.5 - obj.center_y;
        const double u = ca * dx + sa * dy;
        const double shade = brightness * (1.0 + 0.12 * std::sin(stripe_freq * u + phase));
        for (int c = 0; c < 3; ++c)
          px(c, y, x) = color[static_cast<std::size_t>(c)] * shade + uniform(rng, -1, 1) * cfg.noise_amplitude;
        s.mask.labels[static_cast<std::size_t>(p)] = static_cast<std::uint8_t>(class_id);
      }
      s.meta.objects.push_back(obj);
      scene.object_length.push_back(length);
      placed = true;
    }
    if (!placed)
      std::cerr << "warning: sample " << index << ": skipped a class-" << class_id
                << " object that stayed under 4 px after 10 draws\n";
  }

  // Highest 8-bit level at or below the ceiling, so quantizing cannot round past it.
  const double ceiling = std::floor(cfg.brightness_ceiling * 255.0) / 255.0;
  for (Index i = 0; i < 3 * h * w; ++i)
    s.image.data[i] = static_cast<float>(std::clamp(canvas[static_cast<std::size_t>(i)], 0.0, ceiling));
  return scene;
}

void apply_lighting(const SceneConfig& cfg, Scene& scene) {
  SegSample& s = scene.sample;
  const Index h = cfg.height, w = cfg.width;
  const double size = static_cast<double>(std::min(h, w));
  std::mt19937_64 rng(derive_seed(s.meta.seed, 0x11ULL));

  if (bernoulli(rng, cfg.shadow_prob)) {
    ShadowMeta shadow;
    const double cx = uniform(rng, 0.0, static_cast<double>(w)), cy = uniform(rng, 0.0, static_cast<double>(h));
    const double radius = uniform(rng, 0.2, 0.5) * size;
    std::array<double, 4> angles{};
    for (auto& a : angles) a = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    std::sort(angles.begin(), angles.end());
    for (double a : angles) {
      const double r = radius * uniform(rng, 0.6, 1.0);
      shadow.polygon.push_back(cx + r * std::cos(a));
      shadow.polygon.push_back(cy + r * std::sin(a));
    }
    shadow.darkness = cfg.shadow_darkness * uniform(rng, 0.7, 1.0);
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x)
        if (point_in_polygon(shadow.polygon, x + 0.5, y + 0.5))
          for (Index c = 0; c < 3; ++c) s.image.at(c, y, x) *= static_cast<float>(1.0 - shadow.darkness);
    s.meta.shadows.push_back(std::move(shadow));
  }

  if (bernoulli(rng, cfg.specular_prob)) {
    SpecularMeta spot;
    double reach = 0.25 * size;
    if (!s.meta.objects.empty()) {
      const auto pick = std::uniform_int_distribution<std::size_t>(0, s.meta.objects.size() - 1)(rng);
      const ObjectMeta& obj = s.meta.objects[pick];
      reach = std::max(scene.object_length[pick], 8.0);
      const double off = uniform(rng, -0.25, 0.25) * scene.object_length[pick];
      const double dir = uniform(rng, 0.0, 2.0 * std::numbers::pi);
      spot.center_x = obj.center_x + off * std::cos(dir);
      spot.center_y = obj.center_y + off * std::sin(dir);
    } else {
      spot.center_x = uniform(rng, 0.0, static_cast<double>(w));
      spot.center_y = uniform(rng, 0.0, static_cast<double>(h));
    }
    spot.radius_x = uniform(rng, 0.15, 0.45) * reach;
    spot.radius_y = uniform(rng, 0.15, 0.45) * reach;
    spot.intensity = cfg.specular_intensity * uniform(rng, 0.9, 1.0);
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x) {
        const double ex = (x + 0.5 - spot.center_x) / spot.radius_x;
        const double ey = (y + 0.5 - spot.center_y) / spot.radius_y;
        const double weight = spot.intensity * std::clamp(1.6 * (1.0 - ex * ex - ey * ey), 0.0, 1.0);
        if (weight <= 0.0) continue;
        for (Index c = 0; c < 3; ++c) {
          float& v = s.image.at(c, y, x);
          v = static_cast<float>(std::clamp(v + (1.0 - v) * weight, 0.0, 1.0));
        }
      }
    s.meta.speculars.push_back(spot);
  }
}

/// Snaps to the 8-bit levels the PPM writer stores, so in-memory samples equal
/// their on-disk round trip.
void quantize(Dense<float>& image) {
  for (Index i = 0; i < image.numel(); ++i) {
    const long level = std::lround(std::clamp(static_cast<double>(image.data[i]), 0.0, 1.0) * 255.0);
    image.data[i] = static_cast<float>(static_cast<unsigned char>(level) / 255.0);
  }
}

}  // namespace

SegSample generate(const SceneConfig& cfg, std::uint64_t index) {
  Scene scene = render_geometry(cfg, index);
  apply_lighting(cfg, scene);
  quantize(scene.sample.image);
  return std::move(scene.sample);
}

SegSample generate_unlit(const SceneConfig& cfg, std::uint64_t index) {
  Scene scene = render_geometry(cfg, index);
  quantize(scene.sample.image);
  return std::move(scene.sample);
}

// --- augmentation -----------------------------------------------------------

AugmentParams draw_augment(Index height, Index width, std::mt19937_64& rng) {
  AugmentParams p;
  p.quarter_turns = static_cast<int>(std::uniform_int_distribution<int>(0, 3)(rng));
  if (height != width) p.quarter_turns &= ~1;
  p.angle_deg = uniform(rng, -15.0, 15.0);
  const Index max_dy = height / 10, max_dx = width / 10;
  p.shift_y = std::uniform_int_distribution<Index>(-max_dy, max_dy)(rng);
  p.shift_x = std::uniform_int_distribution<Index>(-max_dx, max_dx)(rng);
  p.flip_horizontal = bernoulli(rng, 0.5);
  p.flip_vertical = bernoulli(rng, 0.5);
  return p;
}

namespace {

/// Output pixel (y, x) reads input pixel source(y, x); −1 means off-canvas.
template <typename Source>
SegSample remap(const SegSample& in, Index out_h, Index out_w, Source source) {
  SegSample out;
  out.meta = in.meta;
  out.image = Dense<float>({3, out_h, out_w});
  out.mask = LabelMap(out_h, out_w, 0);
  for (Index y = 0; y < out_h; ++y)
    for (Index x = 0; x < out_w; ++x) {
      const auto [sy, sx] = source(y, x);
      if (sy < 0 || sx < 0 || sy >= in.mask.height || sx >= in.mask.width) continue;
      out.mask.at(y, x) = in.mask.at(sy, sx);
      for (Index c = 0; c < 3; ++c) out.image.at(c, y, x) = in.image.at(c, sy, sx);
    }
  return out;
}

}  // namespace

SegSample apply_augment(const SegSample& sample, const AugmentParams& p) {
  SegSample cur = sample;
  const Index h = sample.mask.height, w = sample.mask.width;
  if (p.flip_horizontal || p.flip_vertical)
    cur = remap(cur, h, w, [&](Index y, Index x) {
      return std::pair<Index, Index>{p.flip_vertical ? h - 1 - y : y, p.flip_horizontal ? w - 1 - x : x};
    });
  const int turns = ((p.quarter_turns % 4) + 4) % 4;
  if (turns % 2 == 1 && h != w) throw DimensionError("augment: odd quarter turns need a square image");
  for (int t = 0; t < turns; ++t) {
    const Index n = cur.mask.height;
    cur = remap(cur, n, n, [n](Index y, Index x) { return std::pair<Index, Index>{x, n - 1 - y}; });
  }
  if (p.angle_deg != 0.0 || p.shift_x != 0 || p.shift_y != 0) {
    const double theta = p.angle_deg * std::numbers::pi / 180.0;
    const double c = std::cos(theta), s = std::sin(theta);
    const double hy = 0.5 * static_cast<double>(h), hx = 0.5 * static_cast<double>(w);
    cur = remap(cur, h, w, [&](Index y, Index x) {
      const double py = y + 0.5 - hy - static_cast<double>(p.shift_y);
      const double px = x + 0.5 - hx - static_cast<double>(p.shift_x);
      const double sx = c * px + s * py + hx;
      const double sy = -s * px + c * py + hy;
      return std::pair<Index, Index>{static_cast<Index>(std::floor(sy)), static_cast<Index>(std::floor(sx))};
    });
  }
  return cur;
}

SegSample augment(const SegSample& sample, std::mt19937_64& rng) {
  return apply_augment(sample, draw_augment(sample.mask.height, sample.mask.width, rng));
}

// --- PNM --------------------------------------------------------------------

namespace {

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spill(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

struct PnmHeader {
  Index width = 0;
  Index height = 0;
  std::size_t data_offset = 0;
};

PnmHeader parse_pnm_header(const std::string& bytes, const char* magic, const fs::path& path) {
  if (bytes.size() < 2 || bytes.compare(0, 2, magic) != 0)
    throw ParseError(path.string() + ": bad magic, expected " + magic, 0);
  std::size_t pos = 2;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&](const char* what) {
    skip_space();
    const std::size_t start = pos;
    Index v = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) v = v * 10 + (bytes[pos++] - '0');
    if (pos == start) throw ParseError(path.string() + ": expected " + what, start);
    return v;
  };
  PnmHeader hdr;
  hdr.width = number("width");
  hdr.height = number("height");
  const std::size_t maxval_at = pos;
  const Index maxval = number("maxval");
  if (maxval != 255) throw ParseError(path.string() + ": only maxval 255 is supported", maxval_at);
  if (hdr.width <= 0 || hdr.height <= 0) throw ParseError(path.string() + ": zero extent", maxval_at);
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
    throw ParseError(path.string() + ": expected whitespace after maxval", pos);
  hdr.data_offset = pos + 1;
  return hdr;
}

void require_payload(const std::string& bytes, const PnmHeader& hdr, std::size_t need, const fs::path& path) {
  if (bytes.size() - hdr.data_offset < need)
    throw ParseError(path.string() + ": truncated pixel data, expected " + std::to_string(need) + " bytes",
                     bytes.size());
}

}  // namespace

void write_ppm(const fs::path& path, const Dense<float>& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw DimensionError("write_ppm: expected a 3×H×W image");
  const Index h = image.dim(1), w = image.dim(2);
  std::string bytes = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  bytes.reserve(bytes.size() + static_cast<std::size_t>(3 * h * w));
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x)
      for (Index c = 0; c < 3; ++c) {
        const double v = std::clamp(static_cast<double>(image.at(c, y, x)), 0.0, 1.0);
        bytes.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
      }
  spill(path, bytes);
}

Dense<float> read_ppm(const fs::path& path) {
  const std::string bytes = slurp(path);
  const PnmHeader hdr = parse_pnm_header(bytes, "P6", path);
  const std::size_t n = static_cast<std::size_t>(hdr.width * hdr.height);
  require_payload(bytes, hdr, 3 * n, path);
  Dense<float> image({3, hdr.height, hdr.width});
  std::size_t at = hdr.data_offset;
  for (Index y = 0; y < hdr.height; ++y)
    for (Index x = 0; x < hdr.width; ++x)
      for (Index c = 0; c < 3; ++c) image.at(c, y, x) = static_cast<float>(static_cast<unsigned char>(bytes[at++]) / 255.0);
  return image;
}

void write_pgm(const fs::path& path, const LabelMap& mask) {
  std::string bytes = "P5\n" + std::to_string(mask.width) + " " + std::to_string(mask.height) + "\n255\n";
  bytes.append(mask.labels.begin(), mask.labels.end());
  spill(path, bytes);
}

LabelMap read_pgm(const fs::path& path) {
  const std::string bytes = slurp(path);
  const PnmHeader hdr = parse_pnm_header(bytes, "P5", path);
  const std::size_t n = static_cast<std::size_t>(hdr.width * hdr.height);
  require_payload(bytes, hdr, n, path);
  LabelMap mask(hdr.height, hdr.width);
  std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(hdr.data_offset), n, mask.labels.begin());
  return mask;
}

// --- metadata ---------------------------------------------------------------

std::string format_meta(const SampleMeta& meta) {
  std::ostringstream os;
  os << "seed=" << meta.seed << '\n';
  os << "objects=" << meta.objects.size() << '\n';
  for (std::size_t i = 0; i < meta.objects.size(); ++i) {
    const auto& o = meta.objects[i];
    const std::string p = "object." + std::to_string(i) + ".";
    os << p << "class=" << o.class_id << '\n'
       << p << "scale=" << format_double(o.scale) << '\n'
       << p << "x=" << format_double(o.center_x) << '\n'
       << p << "y=" << format_double(o.center_y) << '\n'
       << p << "angle=" << format_double(o.angle) << '\n';
  }
  os << "speculars=" << meta.speculars.size() << '\n';
  for (std::size_t i = 0; i < meta.speculars.size(); ++i) {
    const auto& s = meta.speculars[i];
    const std::string p = "specular." + std::to_string(i) + ".";
    os << p << "x=" << format_double(s.center_x) << '\n'
       << p << "y=" << format_double(s.center_y) << '\n'
       << p << "rx=" << format_double(s.radius_x) << '\n'
       << p << "ry=" << format_double(s.radius_y) << '\n'
       << p << "intensity=" << format_double(s.intensity) << '\n';
  }
  os << "shadows=" << meta.shadows.size() << '\n';
  for (std::size_t i = 0; i < meta.shadows.size(); ++i) {
    const auto& s = meta.shadows[i];
    const std::string p = "shadow." + std::to_string(i) + ".";
    os << p << "polygon=";
    for (std::size_t k = 0; k < s.polygon.size(); ++k) os << (k ? " " : "") << format_double(s.polygon[k]);
    os << '\n' << p << "darkness=" << format_double(s.darkness) << '\n';
  }
  return os.str();
}

SampleMeta parse_meta(const std::string& text) {
  const KeyValues kv = parse_key_values(text);
  auto get = [&](const std::string& key) -> const std::string& {
    for (const auto& [k, v] : kv)
      if (k == key) return v;
    throw ConfigError("sample metadata is missing '" + key + "'");
  };
  SampleMeta meta;
  meta.seed = parse_u64("seed", get("seed"));
  const auto objects = parse_u64("objects", get("objects"));
  for (std::uint64_t i = 0; i < objects; ++i) {
    const std::string p = "object." + std::to_string(i) + ".";
    ObjectMeta o;
    o.class_id = static_cast<int>(parse_int(p + "class", get(p + "class")));
    o.scale = parse_double(p + "scale", get(p + "scale"));
    o.center_x = parse_double(p + "x", get(p + "x"));
    o.center_y = parse_double(p + "y", get(p + "y"));
    o.angle = parse_double(p + "angle", get(p + "angle"));
    meta.objects.push_back(o);
  }
  const auto speculars = parse_u64("speculars", get("speculars"));
  for (std::uint64_t i = 0; i < speculars; ++i) {
    const std::string p = "specular." + std::to_string(i) + ".";
    SpecularMeta s;
    s.center_x = parse_double(p + "x", get(p + "x"));
    s.center_y = parse_double(p + "y", get(p + "y"));
    s.radius_x = parse_double(p + "rx", get(p + "rx"));
    s.radius_y = parse_double(p + "ry", get(p + "ry"));
    s.intensity = parse_double(p + "intensity", get(p + "intensity"));
    meta.speculars.push_back(s);
  }
  const auto shadows = parse_u64("shadows", get("shadows"));
  for (std::uint64_t i = 0; i < shadows; ++i) {
    const std::string p = "shadow." + std::to_string(i) + ".";
    ShadowMeta s;
    std::istringstream poly(get(p + "polygon"));
    std::string tok;
    while (poly >> tok) s.polygon.push_back(parse_double(p + "polygon", tok));
    s.darkness = parse_double(p + "darkness", get(p + "darkness"));
    meta.shadows.push_back(std::move(s));
  }
  return meta;
}

void save_sample(const fs::path& stem, const SegSample& sample) {
  if (stem.has_parent_path()) fs::create_directories(stem.parent_path());
  write_ppm(fs::path(stem).concat(".ppm"), sample.image);
  write_pgm(fs::path(stem).concat(".pgm"), sample.mask);
  spill(fs::path(stem).concat(".meta"), format_meta(sample.meta));
}

SegSample load_sample(const fs::path& stem) {
  SegSample s;
  s.image = read_ppm(fs::path(stem).concat(".ppm"));
  s.mask = read_pgm(fs::path(stem).concat(".pgm"));
  if (s.mask.height != s.image.dim(1) || s.mask.width != s.image.dim(2))
    throw DataError(stem.string() + ": image and mask sizes differ");
  s.meta = parse_meta(slurp(fs::path(stem).concat(".meta")));
  return s;
}

// --- datasets ---------------------------------------------------------------

std::string format_scene_config(const SceneConfig& c) {
  std::ostringstream os;
  os << "height = " << c.height << '\n'
     << "width = " << c.width << '\n'
     << "num_classes = " << c.num_classes << '\n'
     << "scale_min = " << format_double(c.scale_min) << '\n'
     << "scale_max = " << format_double(c.scale_max) << '\n'
     << "max_objects = " << c.max_objects << '\n'
     << "specular_prob = " << format_double(c.specular_prob) << '\n'
     << "specular_intensity = " << format_double(c.specular_intensity) << '\n'
     << "shadow_prob = " << format_double(c.shadow_prob) << '\n'
     << "shadow_darkness = " << format_double(c.shadow_darkness) << '\n'
     << "texture_amplitude = " << format_double(c.texture_amplitude) << '\n'
     << "noise_amplitude = " << format_double(c.noise_amplitude) << '\n'
     << "brightness_ceiling = " << format_double(c.brightness_ceiling) << '\n'
     << "seed = " << c.seed << '\n';
  return os.str();
}

SceneConfig parse_scene_config(const std::string& text) {
  SceneConfig c;
  for (const auto& [k, v] : parse_key_values(text)) {
    if (k == "height") c.height = parse_int(k, v);
    else if (k == "width") c.width = parse_int(k, v);
    else if (k == "num_classes") c.num_classes = parse_int(k, v);
    else if (k == "scale_min") c.scale_min = parse_double(k, v);
    else if (k == "scale_max") c.scale_max = parse_double(k, v);
    else if (k == "max_objects") c.max_objects = parse_int(k, v);
    else if (k == "specular_prob") c.specular_prob = parse_double(k, v);
    else if (k == "specular_intensity") c.specular_intensity = parse_double(k, v);
    else if (k == "shadow_prob") c.shadow_prob = parse_double(k, v);
    else if (k == "shadow_darkness") c.shadow_darkness = parse_double(k, v);
    else if (k == "texture_amplitude") c.texture_amplitude = parse_double(k, v);
    else if (k == "noise_amplitude") c.noise_amplitude = parse_double(k, v);
    else if (k == "brightness_ceiling") c.brightness_ceiling = parse_double(k, v);
    else if (k == "seed") c.seed = parse_u64(k, v);
    else throw ConfigError("unknown scene key '" + k + "'");
  }
  c.validate();
  return c;
}

namespace {

std::string sample_name(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%05zu", i);
  return buf;
}

}  // namespace

std::vector<ManifestEntry> make_dataset(const SceneConfig& cfg, std::size_t n_train, std::size_t n_test,
                                        const fs::path& root, bool overwrite) {
  cfg.validate();
  if (fs::exists(root) && !fs::is_empty(root)) {
    if (!overwrite) throw DataError(root.string() + " exists and is not empty (pass overwrite to replace it)");
    fs::remove_all(root);
  }
  fs::create_directories(root / "train");
  fs::create_directories(root / "test");
  std::vector<ManifestEntry> manifest;
  std::ostringstream lines;
  for (std::size_t i = 0; i < n_train + n_test; ++i) {
    const bool is_train = i < n_train;
    const std::string split = is_train ? "train" : "test";
    const std::string stem = split + "/" + sample_name(is_train ? i : i - n_train);
    SegSample s = generate(cfg, i);
    save_sample(root / stem, s);
    manifest.push_back({split, stem + ".ppm", s.meta.seed});
    lines << split << '\t' << stem << ".ppm" << '\t' << s.meta.seed << '\n';
  }
  spill(root / "manifest.txt", lines.str());
  spill(root / "scene.cfg", format_scene_config(cfg));
  return manifest;
}

std::vector<ManifestEntry> read_manifest(const fs::path& root) {
  const fs::path path = root / "manifest.txt";
  const std::string text = slurp(path);
  std::vector<ManifestEntry> out;
  std::istringstream in(text);
  std::string line;
  std::size_t offset = 0;
  while (std::getline(in, line)) {
    const std::size_t line_start = offset;
    offset += line.size() + 1;
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) throw ParseError(path.string() + ": expected three tab-separated fields", line_start);
    ManifestEntry e{line.substr(0, t1), line.substr(t1 + 1, t2 - t1 - 1), 0};
    e.seed = parse_u64("seed", line.substr(t2 + 1));
    if (e.split != "train" && e.split != "test") throw ParseError(path.string() + ": unknown split '" + e.split + "'", line_start);
    out.push_back(std::move(e));
  }
  return out;
}

DatasetSplits load_dataset(const fs::path& root) {
  DatasetSplits d;
  for (const auto& e : read_manifest(root)) {
    fs::path stem = root / e.relative_path;
    stem.replace_extension();
    (e.split == "train" ? d.train : d.test).push_back(load_sample(stem));
  }
  return d;
}

DatasetSplits synthesize_dataset(const SceneConfig& cfg, std::size_t n_train, std::size_t n_test) {
  DatasetSplits d;
  for (std::size_t i = 0; i < n_train + n_test; ++i) (i < n_train ? d.train : d.test).push_back(generate(cfg, i));
  return d;
}

}  // namespace barnet
