#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "barnet/checkpoint.hpp"
#include "barnet/cli.hpp"
#include "barnet/config.hpp"
#include "barnet/flat_text.hpp"
#include "barnet/train.hpp"

using namespace barnet;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("barnet_cli_" + name);
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

int cli(std::vector<std::string> args, std::string* out_text = nullptr) {
  args.insert(args.begin(), "barnetkit");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  if (out_text) *out_text = out.str() + err.str();
  return code;
}

}  // namespace

TEST_CASE("flat key-value parsing") {
  const auto kv = parse_key_values("# comment\n\n a = 1 \nb=two\n");
  REQUIRE(kv.size() == 2);
  CHECK(kv[0].first == "a");
  CHECK(kv[1].second == "two");
  CHECK_THROWS_AS(parse_key_values("a = 1\na = 2\n"), ConfigError);
  CHECK_THROWS_AS(parse_key_values("no equals sign\n"), ConfigError);
  CHECK_THROWS_AS(parse_int("k", "12x"), ConfigError);
  CHECK_THROWS_AS(parse_bool("k", "maybe"), ConfigError);
  CHECK(parse_double("k", format_double(0.1)) == 0.1);
}

TEST_CASE("run config round-trips through its canonical text") {
  RunConfig cfg;
  cfg.model.gate = GateType::softmax;
  cfg.optim.decay_unit = DecayUnit::epochs;
  cfg.scene.shadow_prob = 0.25;
  const RunConfig back = parse_run_config(cfg.canonical());
  CHECK(back.canonical() == cfg.canonical());
  CHECK(back.hash() == cfg.hash());
  RunConfig other = cfg;
  other.train.seed = 99;
  CHECK(other.hash() != cfg.hash());
  CHECK_THROWS_AS(parse_run_config("model.depth = 3\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("loss.alpha = 2\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("scene.height = 60\n"), ConfigError);
}

TEST_CASE("checkpoint bytes round-trip exactly") {
  Model model(ModelConfig{}, 4);
  const Checkpoint ckpt = capture(model, 0x1234);
  const std::string bytes = encode_checkpoint(ckpt);
  CHECK(bytes.substr(0, 10) == "BARNETKIT1");
  const Checkpoint back = decode_checkpoint(bytes);
  CHECK(back == ckpt);
  CHECK(encode_checkpoint(back) == bytes);

  Model other(ModelConfig{}, 5);
  restore(other, back);
  CHECK(encode_checkpoint(capture(other, 0x1234)) == bytes);

  CHECK_THROWS_AS(decode_checkpoint("BARNETKIT2" + bytes.substr(10)), ParseError);
  try {
    (void)decode_checkpoint(bytes.substr(0, 40));
    FAIL("truncated checkpoint should not parse");
  } catch (const ParseError& e) {
    CHECK(e.offset() > 10);
  }
  ModelConfig narrow;
  narrow.widths = {8, 16, 32, 64};
  Model mismatched(narrow, 1);
  CHECK_THROWS_AS(restore(mismatched, back), DataError);
}

TEST_CASE("cli usage errors") {
  std::string text;
  CHECK(cli({}, &text) == 2);
  CHECK(cli({"train", "--bogus"}, &text) == 2);
  CHECK(cli({"train", "--gate", "tanh"}, &text) == 2);
  CHECK(cli({"eval"}, &text) == 2);
  CHECK(cli({"gen-data"}, &text) == 2);
  CHECK(text.find("--out") != std::string::npos);
  const fs::path dir = scratch("badcfg");
  std::ofstream(dir / "bad.cfg") << "train.speed = 3\n";
  CHECK(cli({"train", "--config", (dir / "bad.cfg").string()}, &text) == 2);
  CHECK(text.find("train.speed") != std::string::npos);
}

TEST_CASE("train with zero steps writes a checkpoint that round-trips") {
  const fs::path dir = scratch("train0");
  std::ofstream(dir / "run.cfg") << "data.n_train = 4\ndata.n_test = 2\n";
  REQUIRE(cli({"train", "--config", (dir / "run.cfg").string(), "--steps", "0", "--out", (dir / "run").string()}) == 0);
  const std::string bytes = slurp(dir / "run" / "model.ckpt");
  CHECK(encode_checkpoint(read_checkpoint(dir / "run" / "model.ckpt")) == bytes);
  CHECK(slurp(dir / "run" / "loss.csv") == "step,lr,loss\n");

  std::string text;
  REQUIRE(cli({"eval", "--checkpoint", (dir / "run" / "model.ckpt").string(), "--out", (dir / "eval").string()},
              &text) == 0);
  CHECK(fs::exists(dir / "eval" / "report.csv"));
  CHECK(fs::exists(dir / "eval" / "confusion_normalized.csv"));
  CHECK(fs::exists(dir / "eval" / "predictions" / "00001.pgm"));
  // A different flag set is a different configuration.
  CHECK(cli({"eval", "--checkpoint", (dir / "run" / "model.ckpt").string(), "--no-bam"}, &text) == 2);
}

TEST_CASE("gen-data writes a manifest and identical bytes twice") {
  const fs::path dir = scratch("gen");
  std::ofstream(dir / "data.cfg") << "data.n_train = 3\ndata.n_test = 1\n";
  REQUIRE(cli({"gen-data", "--config", (dir / "data.cfg").string(), "--out", (dir / "a").string()}) == 0);
  REQUIRE(cli({"gen-data", "--config", (dir / "data.cfg").string(), "--out", (dir / "b").string()}) == 0);
  CHECK(slurp(dir / "a" / "manifest.txt") == slurp(dir / "b" / "manifest.txt"));
  CHECK(slurp(dir / "a" / "test" / "00003.ppm") == slurp(dir / "b" / "test" / "00003.ppm"));
  CHECK(cli({"gen-data", "--config", (dir / "data.cfg").string(), "--out", (dir / "a").string()}) == 2);
}

TEST_CASE("evaluation thread cap comes from the environment") {
  setenv("BARNETKIT_THREADS", "3", 1);
  CHECK(evaluation_threads() == 3);
  setenv("BARNETKIT_THREADS", "zero", 1);
  CHECK_THROWS_AS(evaluation_threads(), ConfigError);
  unsetenv("BARNETKIT_THREADS");
  CHECK(evaluation_threads() >= 1);
}
