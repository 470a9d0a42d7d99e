// End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
// exits nonzero if any fails. Pass criterion numbers to run a subset.

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "barnet/bam.hpp"
#include "barnet/checkpoint.hpp"
#include "barnet/experiments.hpp"
#include "barnet/loss.hpp"

using namespace barnet;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = true;
  std::string detail;
};

/// Collects failed sub-checks so a criterion reports every broken property.
class Checks {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok) failures_.push_back(what);
  }
  Outcome outcome(const std::string& summary) const {
    Outcome o{failures_.empty(), summary};
    for (const auto& f : failures_) o.detail += "; " + f;
    return o;
  }

 private:
  std::vector<std::string> failures_;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// --- 1 ----------------------------------------------------------------------

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  std::vector<std::uint64_t> seeds(10);
  std::iota(seeds.begin(), seeds.end(), std::uint64_t{1});
  const auto reports = run_gradcheck_suite(seeds);
  const double elapsed = seconds_since(t0);
  Checks c;
  double worst_op = 0.0, worst_net = 0.0;
  std::set<std::string> ops;
  for (const auto& r : reports) {
    const bool net = r.op.rfind("full_network", 0) == 0;
    (net ? worst_net : worst_op) = std::max(net ? worst_net : worst_op, r.max_rel_error());
    ops.insert(r.op.substr(0, r.op.find(" seed")));
    c.expect(r.passed(), r.describe());
    c.expect(r.tolerance == (net ? 1e-3 : 1e-4), r.op + " ran at the wrong tolerance");
  }
  c.expect(elapsed < 120.0, "runtime " + fmt("%.1f", elapsed) + " s exceeds 2 min");
  return c.outcome(std::to_string(reports.size()) + " checks over " + std::to_string(ops.size()) +
                   " ops x 10 seeds, worst op rel err " + fmt("%.2e", worst_op) + " (tol 1e-4), network " +
                   fmt("%.2e", worst_net) + " (tol 1e-3), " + fmt("%.1f", elapsed) + " s");
}

// --- 2 ----------------------------------------------------------------------

Outcome bam_properties() {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<Index> dim(2, 12), side(1, 8);
  Checks c;
  double asym = 0.0, min_rayleigh = 1e300, perm_err = 0.0, norm_err = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Index d = dim(rng), h = side(rng), w = side(rng);
    const Dense<double> x = random_dense({d, h, w}, rng);
    const GlobalDescriptor<double> g = describe(Tensor<double>(x));
    const Eigen::MatrixXd a = g.raw.value().as_matrix(d, d);
    asym = std::max(asym, (a - a.transpose()).cwiseAbs().maxCoeff());
    // Rayleigh quotient minimum over all directions is the smallest eigenvalue.
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (a + a.transpose()));
    min_rayleigh = std::min(min_rayleigh, eig.eigenvalues().minCoeff());

    std::vector<Index> perm(static_cast<std::size_t>(h * w));
    std::iota(perm.begin(), perm.end(), Index{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    Dense<double> shuffled(x.shape);
    for (Index ch = 0; ch < d; ++ch)
      for (Index p = 0; p < h * w; ++p) shuffled.data[ch * h * w + p] = x.data[ch * h * w + perm[static_cast<std::size_t>(p)]];
    const Eigen::MatrixXd b = bilinear_pool(Tensor<double>(shuffled)).value().as_matrix(d, d);
    perm_err = std::max(perm_err, (a - b).cwiseAbs().maxCoeff());

    norm_err = std::max(norm_err, std::abs(g.normalized.value().data.matrix().norm() - 1.0));
  }
  c.expect(asym < 1e-6, "asymmetry " + fmt("%.2e", asym));
  c.expect(min_rayleigh > -1e-6, "min Rayleigh quotient " + fmt("%.2e", min_rayleigh));
  c.expect(perm_err < 1e-10, "permutation error " + fmt("%.2e", perm_err));
  c.expect(norm_err < 1e-6, "normalized norm error " + fmt("%.2e", norm_err));

  ModelConfig with, without;
  without.use_bam = false;
  const Index params_with = BarnetMini<float>(with, 1).parameter_count();
  const Index params_without = BarnetMini<float>(without, 1).parameter_count();
  c.expect(BarnetMini<float>(with, 1).bam_parameter_count() == 0, "BAM reports parameters");
  c.expect(params_with == params_without, "enabling BAM changes the parameter count");
  return c.outcome("100 inputs: asymmetry " + fmt("%.1e", asym) + ", min Rayleigh " + fmt("%.1e", min_rayleigh) +
                   ", permutation " + fmt("%.1e", perm_err) + ", |norm-1| " + fmt("%.1e", norm_err) +
                   ", BAM parameters " + std::to_string(params_with - params_without));
}

// --- 3 ----------------------------------------------------------------------

Outcome arf_gating() {
  std::mt19937_64 rng(3);
  Checks c;
  const Tensor<double> p(random_dense({12, 8, 8}, rng));
  const auto unit = apply_weights(p, Tensor<double>::constant({12}, 1.0));
  c.expect((unit.value().data == p.value().data).all(), "unit gate is not an exact identity");
  const auto zero = apply_weights(p, Tensor<double>::zeros({12}));
  c.expect(zero.value().data.abs().maxCoeff() == 0.0, "zero gate leaves nonzero output");
  for (Index k = 0; k < 12; ++k) {
    Dense<double> hot({12});
    hot.data[k] = 1.0;
    const auto y = apply_weights(p, Tensor<double>(hot));
    for (Index ch = 0; ch < 12; ++ch) {
      const auto got = y.value().data.segment(ch * 64, 64);
      const bool ok = ch == k ? (got == p.value().data.segment(ch * 64, 64)).all() : (got == 0.0).all();
      if (!ok) c.expect(false, "one-hot gate " + std::to_string(k) + " leaks into channel " + std::to_string(ch));
    }
  }
  // Full-module unit gate: the ungated pyramid equals the gated one under S = 1.
  const std::vector<Index> channels{8, 8};
  const auto w = make_arf_weights<double>(channels, 4, true, GateType::sigmoid, rng);
  const std::vector<Tensor<double>> xs{Tensor<double>(random_dense({8, 4, 4}, rng)), Tensor<double>(random_dense({8, 8, 8}, rng))};
  const auto pyr = arf_pyramid<double>(xs, w);
  ArfWeights<double> ungated = w;
  ungated.gate.reset();
  c.expect((arf_forward<double>(xs, ungated).value().data == apply_weights(pyr.features, Tensor<double>::constant({12}, 1.0)).value().data).all(),
           "ungated module differs from unit gate");

  BarnetMini<float> full(ModelConfig{}, 1);
  const BarnetMini<float> basic = ablate(full, false, false);
  const double share = static_cast<double>(full.arf_gate_parameter_count()) / static_cast<double>(basic.parameter_count());
  c.expect(share < 0.02, "ARF gate share " + fmt("%.4f", share));
  c.expect(basic.parameter_count() == full.parameter_count() - full.arf_gate_parameter_count(),
           "basic parameter count is not full minus gate parameters");
  return c.outcome("identity/zero/one-hot exact; ARF adds " + std::to_string(full.arf_gate_parameter_count()) +
                   " parameters = " + fmt("%.2f", 100.0 * share) + "% of basic (" +
                   std::to_string(basic.parameter_count()) + ")");
}

// --- 4 and 5 ----------------------------------------------------------------

struct AblationData {
  std::vector<AblationRun> runs;
  bool ran = false;
};

AblationData& ablation_results() {
  static AblationData data;
  if (!data.ran) {
    const RunConfig cfg = quick_config();
    const DatasetSplits splits = dataset_for(cfg);
    const std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    data.runs = run_ablation(cfg, splits, seeds, [](const AblationRun& r) {
      std::printf("  ablation %-5s seed %llu  mIoU %.4f  (%.0f s)\n", r.variant.name.c_str(),
                  static_cast<unsigned long long>(r.seed), r.mean_iou, r.seconds);
      std::fflush(stdout);
    });
    std::ofstream csv("ablation.csv");
    write_ablation_csv(csv, data.runs);
    data.ran = true;
  }
  return data;
}

Outcome convergence() {
  const auto& runs = ablation_results().runs;
  std::vector<double> iou;
  double seconds = 0.0;
  for (const auto& r : runs)
    if (r.variant.name == "full") {
      iou.push_back(r.mean_iou);
      seconds += r.seconds;
    }
  const double med = median(iou);
  Checks c;
  c.expect(iou.size() == 5, "expected 5 full runs");
  c.expect(med >= 0.90, "median mIoU " + fmt("%.4f", med) + " < 0.90");
  c.expect(seconds < 1800.0, "5 runs took " + fmt("%.0f", seconds) + " s");
  std::string all;
  for (double v : iou) all += fmt(" %.4f", v);
  return c.outcome("full model, 600 steps x batch 8, median test mIoU " + fmt("%.4f", med) + " (seeds:" + all +
                   "), " + fmt("%.0f", seconds / std::max<std::size_t>(1, iou.size())) + " s per run");
}

Outcome ablation_ordering() {
  const auto summary = summarize(ablation_results().runs);
  auto med = [&summary](const std::string& name) {
    for (const auto& s : summary)
      if (s.variant.name == name) return s.median_iou;
    return 0.0;
  };
  const double basic = med("basic"), bam = med("bam"), arf = med("arf"), full = med("full");
  const double gap = 0.005;
  Checks c;
  c.expect(bam - basic >= gap, "basic+BAM - basic = " + fmt("%.4f", bam - basic));
  c.expect(arf - basic >= gap, "basic+ARF - basic = " + fmt("%.4f", arf - basic));
  c.expect(full - std::max(bam, arf) >= gap, "full - max(bam, arf) = " + fmt("%.4f", full - std::max(bam, arf)));
  return c.outcome("median mIoU basic " + fmt("%.4f", basic) + ", +BAM " + fmt("%.4f", bam) + ", +ARF " +
                   fmt("%.4f", arf) + ", full " + fmt("%.4f", full) + " (gap >= 0.005 each; ablation.csv)");
}

// --- 6 ----------------------------------------------------------------------

Outcome loss_correctness() {
  std::mt19937_64 rng(6);
  Checks c;
  double worst_endpoint = 0.0, worst_uniform = 0.0, worst_perfect = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const Index k = 2 + trial % 5;
    LabelMap m(5, 7);
    std::uniform_int_distribution<int> cls(0, static_cast<int>(k - 1));
    for (auto& v : m.labels) v = static_cast<std::uint8_t>(cls(rng));
    const Tensor<double> z(random_dense({k, 5, 7}, rng, -3.0, 3.0));
    const double ce = cross_entropy(z, m).item();
    const double d = dice(softmax_channels(z), m).item();
    worst_endpoint = std::max({worst_endpoint, std::abs(hybrid_loss(z, m, 0.0).item() - ce),
                               std::abs(hybrid_loss(z, m, 1.0).item() + std::log(d)),
                               std::abs(hybrid_loss(z, m, 0.2).item() - (0.8 * ce - 0.2 * std::log(d)))});
    const double uniform = cross_entropy(Tensor<double>(Dense<double>::constant({k, 5, 7}, 0.3)), m).item();
    worst_uniform = std::max(worst_uniform, std::abs(uniform - std::log(static_cast<double>(k))));
    Dense<double> sure({k, 5, 7});
    for (Index y = 0; y < 5; ++y)
      for (Index x = 0; x < 7; ++x) sure.at(m.at(y, x), y, x) = 20.0;
    worst_perfect = std::max(worst_perfect, hybrid_loss(Tensor<double>(sure), m, 0.2).item());
  }
  c.expect(worst_endpoint < 1e-12, "endpoint mismatch " + fmt("%.2e", worst_endpoint));
  c.expect(worst_uniform < 1e-10, "uniform CE error " + fmt("%.2e", worst_uniform));
  c.expect(worst_perfect < 1e-6, "perfect-prediction loss " + fmt("%.2e", worst_perfect));
  return c.outcome("alpha endpoints within " + fmt("%.1e", worst_endpoint) + ", |CE - ln K| " +
                   fmt("%.1e", worst_uniform) + ", margin-20 loss " + fmt("%.1e", worst_perfect));
}

// --- 7 ----------------------------------------------------------------------

Outcome metrics_oracle() {
  std::mt19937_64 rng(7);
  Checks c;
  double relation = 0.0;
  int mismatches = 0;
  const int k = 5;
  std::vector<LabelMap> preds, truths;
  for (int pair = 0; pair < 50; ++pair) {
    LabelMap p(9, 11), t(9, 11);
    std::uniform_int_distribution<int> cls(0, k - 1);
    for (auto& v : p.labels) v = static_cast<std::uint8_t>(cls(rng));
    for (auto& v : t.labels) v = static_cast<std::uint8_t>(cls(rng));
    preds.push_back(p);
    truths.push_back(t);
    const EvalReport r = confusion_report(std::vector<LabelMap>{p}, std::vector<LabelMap>{t}, k);
    for (int cl = 0; cl < k; ++cl) {
      std::uint64_t inter = 0, np = 0, nt = 0;
      for (std::size_t i = 0; i < p.labels.size(); ++i) {
        inter += p.labels[i] == cl && t.labels[i] == cl;
        np += p.labels[i] == cl;
        nt += t.labels[i] == cl;
      }
      for (int cp = 0; cp < k; ++cp) {
        std::uint64_t n = 0;
        for (std::size_t i = 0; i < p.labels.size(); ++i) n += t.labels[i] == cl && p.labels[i] == cp;
        mismatches += r.confusion.at(cl, cp) != n;
      }
      const std::uint64_t uni = np + nt - inter;
      const auto i1 = iou(p, t, cl);
      const auto d1 = dice_metric(p, t, cl);
      if (uni == 0) {
        mismatches += i1.has_value() || d1.has_value();
        continue;
      }
      const double io = static_cast<double>(inter) / static_cast<double>(uni);
      const double di = 2.0 * static_cast<double>(inter) / static_cast<double>(np + nt);
      mismatches += !i1 || *i1 != io;
      mismatches += !d1 || *d1 != di;
      mismatches += !r.classes[static_cast<std::size_t>(cl)].iou || *r.classes[static_cast<std::size_t>(cl)].iou != io;
      relation = std::max(relation, std::abs(*d1 - 2.0 * *i1 / (1.0 + *i1)));
    }
  }
  const EvalReport pooled = confusion_report(preds, truths, k);
  c.expect(pooled.confusion.total() == 50u * 99u, "confusion total is not H*W*images");
  c.expect(mismatches == 0, std::to_string(mismatches) + " mismatches against the oracle");
  c.expect(relation < 1e-12, "dice/iou relation error " + fmt("%.2e", relation));
  return c.outcome("50 mask pairs, " + std::to_string(mismatches) + " mismatches, dice relation error " +
                   fmt("%.1e", relation));
}

// --- 8 ----------------------------------------------------------------------

Outcome determinism() {
  Checks c;
  const fs::path root = fs::temp_directory_path() / "barnet_acceptance";
  fs::remove_all(root);
  SceneConfig scene;
  make_dataset(scene, 8, 4, root / "a");
  make_dataset(scene, 8, 4, root / "b");
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(root / "a")) {
    if (!e.is_regular_file()) continue;
    ++files;
    c.expect(slurp(e.path()) == slurp(root / "b" / fs::relative(e.path(), root / "a")),
             "dataset file differs: " + e.path().filename().string());
  }

  RunConfig cfg = quick_config();
  cfg.train.steps = 10;
  const DatasetSplits data = dataset_for(cfg);
  const TrainResult r1 = train_model(cfg, data.train);
  const TrainResult r2 = train_model(cfg, data.train);
  std::ostringstream l1, l2;
  write_loss_csv(l1, r1.losses);
  write_loss_csv(l2, r2.losses);
  c.expect(l1.str() == l2.str(), "loss CSVs differ between identical runs");

  const fs::path ckpt = root / "model.ckpt";
  write_checkpoint(ckpt, capture(r1.model, cfg.hash()));
  const std::string bytes = slurp(ckpt);
  Model fresh(effective_model_config(cfg), 999);
  restore(fresh, read_checkpoint(ckpt));
  write_checkpoint(root / "again.ckpt", capture(fresh, cfg.hash()));
  c.expect(slurp(root / "again.ckpt") == bytes, "checkpoint save/load/save changed bytes");
  c.expect(encode_checkpoint(capture(r2.model, cfg.hash())) == bytes, "identical runs give different weights");
  return c.outcome(std::to_string(files) + " dataset files identical, 10-step loss CSVs identical, " +
                   std::to_string(bytes.size()) + "-byte checkpoint round-trips");
}

// --- 9 ----------------------------------------------------------------------

Outcome bench_scaling() {
  // Minimum over a one-second budget per cell: the least interference-contaminated estimate.
  BenchOptions opts;
  opts.arf_channels.clear();
  opts.budget_seconds = 1.0;
  const auto rows = run_bench(opts);
  {
    std::ofstream csv("bench.csv");
    write_bench_csv(csv, run_bench(BenchOptions{}));
  }
  Checks c;
  std::string ratios;
  for (Index s : opts.bam_sizes) {
    std::vector<const BenchRow*> fwd;
    for (const auto& r : rows)
      if (r.module == "bam" && r.pass == "forward" && r.height == s) fwd.push_back(&r);
    for (std::size_t i = 1; i < fwd.size(); ++i) {
      if (fwd[i]->channels != 2 * fwd[i - 1]->channels) continue;
      const double ratio = fwd[i]->min_us / fwd[i - 1]->min_us;
      ratios += " " + std::to_string(fwd[i - 1]->channels) + "->" + std::to_string(fwd[i]->channels) + "@" +
                std::to_string(s) + "x" + std::to_string(s) + ":" + fmt("%.2f", ratio);
      c.expect(std::abs(ratio - 4.0) <= 0.35 * 4.0, "ratio " + fmt("%.2f", ratio) + " for D=" +
                                                        std::to_string(fwd[i]->channels) + " at " + std::to_string(s));
    }
  }
  return c.outcome("BAM forward min-time ratio when doubling D (target 4 +/- 35%):" + ratios);
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
      {1, gradient_suite}, {2, bam_properties}, {3, arf_gating},      {4, convergence}, {5, ablation_ordering},
      {6, loss_correctness}, {7, metrics_oracle}, {8, determinism}, {9, bench_scaling}};
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& [id, run] : criteria) {
    if (!wanted.empty() && !wanted.count(id)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("[%s] criterion %d: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", id, o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  std::printf("%s\n", failed ? "acceptance: FAILED" : "acceptance: all criteria passed");
  return failed ? 1 : 0;
}
