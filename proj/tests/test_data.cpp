#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "barnet/data.hpp"

using namespace barnet;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("barnet_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::map<int, Index> class_counts(const LabelMap& m) {
  std::map<int, Index> c;
  for (auto v : m.labels) ++c[v];
  return c;
}

double foreground_fraction(const LabelMap& m) {
  Index n = 0;
  for (auto v : m.labels) n += v != 0;
  return static_cast<double>(n) / static_cast<double>(m.size());
}

}  // namespace

TEST_CASE("generation is deterministic and self-consistent") {
  SceneConfig cfg;
  for (std::uint64_t i = 0; i < 20; ++i) {
    const SegSample a = generate(cfg, i), b = generate(cfg, i);
    CHECK((a.image.data == b.image.data).all());
    CHECK(a.mask == b.mask);
    CHECK(a.meta == b.meta);
    CHECK(a.image.data.minCoeff() >= 0.0f);
    CHECK(a.image.data.maxCoeff() <= 1.0f);
    std::set<int> listed;
    for (const auto& o : a.meta.objects) listed.insert(o.class_id);
    for (auto v : a.mask.labels)
      if (v != 0) CHECK(listed.count(v) == 1);
  }
}

TEST_CASE("lighting never changes labels") {
  SceneConfig cfg;
  cfg.specular_prob = cfg.shadow_prob = 1.0;
  for (std::uint64_t i = 0; i < 20; ++i) {
    const SegSample lit = generate(cfg, i), unlit = generate_unlit(cfg, i);
    CHECK(lit.mask == unlit.mask);
    CHECK(class_counts(lit.mask) == class_counts(unlit.mask));
    CHECK_FALSE(lit.meta.speculars.empty());
    CHECK_FALSE(lit.meta.shadows.empty());
  }
}

TEST_CASE("without lighting effects no pixel exceeds the brightness ceiling") {
  SceneConfig cfg;
  cfg.specular_prob = cfg.shadow_prob = 0.0;
  for (std::uint64_t i = 0; i < 20; ++i) CHECK(generate(cfg, i).image.data.maxCoeff() <= cfg.brightness_ceiling);
  cfg.specular_prob = 1.0;
  float brightest = 0.0f;
  for (std::uint64_t i = 0; i < 20; ++i) brightest = std::max(brightest, generate(cfg, i).image.data.maxCoeff());
  CHECK(brightest > cfg.brightness_ceiling);
}

TEST_CASE("object scale range controls mask area") {
  SceneConfig small, large;
  small.scale_min = 0.05;
  small.scale_max = 0.1;
  large.scale_min = 0.3;
  large.scale_max = 0.5;
  double a = 0.0, b = 0.0;
  for (std::uint64_t i = 0; i < 100; ++i) {
    a += foreground_fraction(generate(small, i).mask);
    b += foreground_fraction(generate(large, i).mask);
  }
  CHECK(b > 3.0 * a);
}

TEST_CASE("scene config validation") {
  SceneConfig cfg;
  cfg.scale_min = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = SceneConfig{};
  cfg.shadow_prob = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = SceneConfig{};
  cfg.scale_min = 0.6;
  cfg.scale_max = 0.5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK(parse_scene_config(format_scene_config(SceneConfig{})).seed == SceneConfig{}.seed);
  CHECK_THROWS_AS(parse_scene_config("colour = red\n"), ConfigError);
}

TEST_CASE("neutral augmentation is the identity and flips are involutions") {
  const SegSample s = generate(SceneConfig{}, 4);
  const SegSample same = apply_augment(s, AugmentParams{});
  CHECK((same.image.data == s.image.data).all());
  CHECK(same.mask == s.mask);

  AugmentParams flip;
  flip.flip_horizontal = true;
  const SegSample twice = apply_augment(apply_augment(s, flip), flip);
  CHECK((twice.image.data == s.image.data).all());
  CHECK(twice.mask == s.mask);
  flip.flip_horizontal = false;
  flip.flip_vertical = true;
  CHECK(apply_augment(apply_augment(s, flip), flip).mask == s.mask);
}

TEST_CASE("quarter turns and flips preserve class pixel counts") {
  const SegSample s = generate(SceneConfig{}, 5);
  for (int turns = 0; turns < 4; ++turns)
    for (bool h : {false, true}) {
      AugmentParams p;
      p.quarter_turns = turns;
      p.flip_horizontal = h;
      CHECK(class_counts(apply_augment(s, p).mask) == class_counts(s.mask));
    }
  AugmentParams four;
  four.quarter_turns = 1;
  SegSample r = s;
  for (int i = 0; i < 4; ++i) r = apply_augment(r, four);
  CHECK(r.mask == s.mask);
}

TEST_CASE("image and mask move together under random augmentation") {
  // Paint class k into every channel of the image; after any transform the
  // image must still encode the mask wherever the canvas was covered.
  SegSample s = generate(SceneConfig{}, 6);
  for (Index y = 0; y < 64; ++y)
    for (Index x = 0; x < 64; ++x)
      for (Index c = 0; c < 3; ++c) s.image.at(c, y, x) = static_cast<float>(s.mask.at(y, x) + 1) / 8.0f;
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const SegSample a = augment(s, rng);
    for (Index y = 0; y < 64; ++y)
      for (Index x = 0; x < 64; ++x) {
        const float v = a.image.at(0, y, x);
        if (v == 0.0f) {
          CHECK(a.mask.at(y, x) == 0);
        } else {
          CHECK(static_cast<int>(std::lround(v * 8.0f)) - 1 == a.mask.at(y, x));
        }
      }
  }
}

TEST_CASE("sample files round-trip") {
  const fs::path dir = scratch("roundtrip");
  const SegSample s = generate(SceneConfig{}, 8);
  save_sample(dir / "x", s);
  CHECK(slurp(dir / "x.ppm").substr(0, 13) == "P6\n64 64\n255\n");
  CHECK(slurp(dir / "x.pgm").substr(0, 13) == "P5\n64 64\n255\n");
  const SegSample t = load_sample(dir / "x");
  CHECK(t.mask == s.mask);
  CHECK((t.image.data - s.image.data).abs().maxCoeff() <= 1.0f / 255.0f);
  CHECK(t.meta == s.meta);
}

TEST_CASE("malformed image headers report byte offsets") {
  const fs::path dir = scratch("corrupt");
  std::ofstream(dir / "bad.ppm", std::ios::binary) << "P7\n2 2\n255\n";
  CHECK_THROWS_AS(read_ppm(dir / "bad.ppm"), ParseError);
  std::ofstream(dir / "short.ppm", std::ios::binary) << "P6\n2 2\n255\nabc";
  try {
    (void)read_ppm(dir / "short.ppm");
    FAIL("truncated file should not parse");
  } catch (const ParseError& e) {
    CHECK(e.offset() >= 11);
  }
  std::ofstream(dir / "bad.pgm", std::ios::binary) << "P5\n2 x\n255\n";
  CHECK_THROWS_AS(read_pgm(dir / "bad.pgm"), ParseError);
}

TEST_CASE("datasets are reproducible and refuse to clobber") {
  SceneConfig cfg;
  const fs::path a = scratch("dataset_a"), b = scratch("dataset_b");
  const auto entries = make_dataset(cfg, 4, 2, a);
  make_dataset(cfg, 4, 2, b);
  REQUIRE(entries.size() == 6);
  CHECK(entries[0].split == "train");
  CHECK(entries[5].split == "test");
  std::set<std::uint64_t> seeds;
  for (const auto& e : entries) seeds.insert(e.seed);
  CHECK(seeds.size() == 6);
  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), a);
    CHECK(slurp(entry.path()) == slurp(b / rel));
  }
  const std::string manifest = slurp(a / "manifest.txt");
  CHECK(manifest.substr(0, manifest.find('\n')) == "train\ttrain/00000.ppm\t" + std::to_string(entries[0].seed));

  CHECK_THROWS_AS(make_dataset(cfg, 1, 1, a), DataError);
  CHECK_NOTHROW(make_dataset(cfg, 1, 1, a, true));
  CHECK(read_manifest(a).size() == 2);

  const DatasetSplits loaded = load_dataset(b);
  const DatasetSplits memory = synthesize_dataset(cfg, 4, 2);
  REQUIRE(loaded.train.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK((loaded.train[i].image.data == memory.train[i].image.data).all());
    CHECK(loaded.train[i].mask == memory.train[i].mask);
  }
}
