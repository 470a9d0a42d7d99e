#include "barnet/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "barnet/checkpoint.hpp"
#include "barnet/experiments.hpp"

namespace barnet {

namespace fs = std::filesystem;

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<Index> steps;
  std::string checkpoint;
  bool no_bam = false;
  bool no_arf = false;
  std::string gate;
  bool overwrite = false;
  Index seeds = 5;
};

RunConfig resolve(const Flags& f, const std::string& fallback_config = {}) {
  RunConfig cfg;
  if (!f.config.empty())
    cfg = load_run_config(f.config);
  else if (!fallback_config.empty() && fs::exists(fallback_config))
    cfg = load_run_config(fallback_config);
  else
    cfg = quick_config();
  if (f.seed) cfg.train.seed = *f.seed;
  if (f.steps) cfg.train.steps = *f.steps;
  if (f.no_bam) cfg.model.use_bam = false;
  if (f.no_arf) cfg.model.use_arf = false;
  if (!f.gate.empty()) cfg.model.gate = parse_gate(f.gate);
  cfg.validate();
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os << text;
}

template <typename Writer>
void write_csv(const fs::path& path, Writer writer) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  writer(os);
}

fs::path out_dir(const Flags& f, const char* fallback) {
  fs::path dir = f.out.empty() ? fs::path(fallback) : fs::path(f.out);
  fs::create_directories(dir);
  return dir;
}

int cmd_gen_data(const Flags& f, std::ostream& out) {
  if (f.out.empty()) throw ConfigError("gen-data needs --out DIR");
  RunConfig cfg = resolve(f);
  if (f.seed) cfg.scene.seed = *f.seed;
  const auto entries = make_dataset(cfg.scene, static_cast<std::size_t>(cfg.data.n_train),
                                    static_cast<std::size_t>(cfg.data.n_test), f.out, f.overwrite);
  out << "wrote " << entries.size() << " samples to " << f.out << "\n";
  return 0;
}

int cmd_train(const Flags& f, std::ostream& out) {
  const RunConfig cfg = resolve(f);
  const fs::path dir = out_dir(f, "run");
  write_text(dir / "config.txt", cfg.canonical());
  const DatasetSplits data = dataset_for(cfg);
  TrainResult result = train_model(cfg, data.train, &out);
  write_csv(dir / "loss.csv", [&](std::ostream& os) { write_loss_csv(os, result.losses); });
  const fs::path ckpt = f.checkpoint.empty() ? dir / "model.ckpt" : fs::path(f.checkpoint);
  write_checkpoint(ckpt, capture(result.model, cfg.hash()));
  out << "checkpoint " << ckpt.string() << " (" << result.model.parameter_count() << " parameters)\n";
  return 0;
}

int cmd_eval(const Flags& f, std::ostream& out) {
  if (f.checkpoint.empty()) throw ConfigError("eval needs --checkpoint PATH");
  const fs::path ckpt_path(f.checkpoint);
  const RunConfig cfg = resolve(f, (ckpt_path.parent_path() / "config.txt").string());
  const Checkpoint ckpt = read_checkpoint(ckpt_path);
  if (ckpt.config_hash != cfg.hash())
    throw ConfigError("checkpoint was written under a different configuration; pass the matching --config and flags");
  Model model(effective_model_config(cfg), model_seed(cfg));
  restore(model, ckpt);
  const DatasetSplits data = dataset_for(cfg);
  const Evaluation ev = evaluate(model, data.test);
  const fs::path dir = out_dir(f, "eval");
  write_csv(dir / "report.csv", [&](std::ostream& os) { write_report_csv(os, ev.report); });
  write_csv(dir / "confusion.csv", [&](std::ostream& os) { write_confusion_csv(os, ev.report.confusion); });
  write_csv(dir / "confusion_normalized.csv",
            [&](std::ostream& os) { write_confusion_normalized_csv(os, ev.report.confusion); });
  fs::create_directories(dir / "predictions");
  for (std::size_t i = 0; i < ev.predictions.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "%05zu.pgm", i);
    write_pgm(dir / "predictions" / name, ev.predictions[i]);
  }
  out << "images " << ev.report.images << "  mIoU " << ev.report.mean_iou << "  mDice " << ev.report.mean_dice << "\n";
  return 0;
}

int cmd_gradcheck(const Flags& f, std::ostream& out) {
  const std::uint64_t first = f.seed.value_or(1);
  std::vector<std::uint64_t> seeds;
  for (std::uint64_t s = 0; s < 10; ++s) seeds.push_back(first + s);
  const auto reports = run_gradcheck_suite(seeds);
  std::size_t failed = 0;
  double worst = 0.0;
  for (const auto& r : reports) {
    worst = std::max(worst, r.max_rel_error());
    if (!r.passed()) {
      ++failed;
      out << r.describe() << "\n";
    }
  }
  out << reports.size() - failed << "/" << reports.size() << " checks passed, worst relative error " << worst << "\n";
  return failed == 0 ? 0 : 1;
}

int cmd_ablate(const Flags& f, std::ostream& out) {
  const RunConfig cfg = resolve(f);
  const fs::path dir = out_dir(f, "ablation");
  std::vector<std::uint64_t> seeds;
  for (Index s = 0; s < f.seeds; ++s) seeds.push_back(cfg.train.seed + static_cast<std::uint64_t>(s));
  const DatasetSplits data = dataset_for(cfg);
  const auto runs = run_ablation(cfg, data, seeds, [&out](const AblationRun& r) {
    out << r.variant.name << " seed " << r.seed << "  mIoU " << r.mean_iou << "  (" << r.seconds << " s)\n"
        << std::flush;
  });
  write_csv(dir / "ablation.csv", [&](std::ostream& os) { write_ablation_csv(os, runs); });
  for (const auto& s : summarize(runs)) out << s.variant.name << " median mIoU " << s.median_iou << "\n";
  return 0;
}

int cmd_bench(const Flags& f, std::ostream& out) {
  const fs::path dir = out_dir(f, "bench");
  const auto rows = run_bench(BenchOptions{});
  write_csv(dir / "bench.csv", [&](std::ostream& os) { write_bench_csv(os, rows); });
  write_bench_csv(out, rows);
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Bilinear attention and adaptive receptive field segmentation toolkit", "barnetkit"};
  app.require_subcommand(1);
  Flags f;

  auto common = [&f](CLI::App* sub, bool model_flags) {
    sub->add_option("--config", f.config, "Flat key = value run configuration")->check(CLI::ExistingFile);
    sub->add_option("--seed", f.seed, "Seed override");
    sub->add_option("--out", f.out, "Output directory");
    if (model_flags) {
      sub->add_option("--steps", f.steps, "Training steps")->check(CLI::NonNegativeNumber);
      sub->add_flag("--no-bam", f.no_bam, "Disable bilinear attention");
      sub->add_flag("--no-arf", f.no_arf, "Disable adaptive receptive field gating");
      sub->add_option("--gate", f.gate, "Gate normalization")->check(CLI::IsMember({"sigmoid", "softmax"}));
    }
  };

  auto* gen = app.add_subcommand("gen-data", "Write a synthetic dataset (images, masks, meta, manifest)");
  common(gen, false);
  gen->add_flag("--overwrite", f.overwrite, "Replace an existing non-empty dataset directory");

  auto* train = app.add_subcommand("train", "Train a model; writes loss.csv, config.txt and a checkpoint");
  common(train, true);
  train->add_option("--checkpoint", f.checkpoint, "Checkpoint path (default OUT/model.ckpt)");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  common(eval, true);
  eval->add_option("--checkpoint", f.checkpoint, "Checkpoint to evaluate")->required()->check(CLI::ExistingFile);

  auto* grad = app.add_subcommand("gradcheck", "Run the finite-difference gradient suite over 10 seeds");
  grad->add_option("--seed", f.seed, "First seed");

  auto* ablate = app.add_subcommand("ablate", "Train the basic/bam/arf/full grid over several seeds");
  common(ablate, true);
  ablate->add_option("--seeds", f.seeds, "Number of seeds")->check(CLI::PositiveNumber);

  auto* bench = app.add_subcommand("bench", "Time BAM and ARF forward and backward passes");
  bench->add_option("--out", f.out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 2;
  }

  try {
    if (*gen) return cmd_gen_data(f, out);
    if (*train) return cmd_train(f, out);
    if (*eval) return cmd_eval(f, out);
    if (*grad) return cmd_gradcheck(f, out);
    if (*ablate) return cmd_ablate(f, out);
    if (*bench) return cmd_bench(f, out);
  } catch (const NumericError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}

}  // namespace barnet
