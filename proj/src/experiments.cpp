#include "barnet/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>

#include "barnet/bam.hpp"
#include "barnet/flat_text.hpp"
#include "barnet/loss.hpp"

namespace barnet {

namespace {

using T = Tensor<double>;
using Inputs = std::vector<T>;

Dense<double> away_from_zero(Shape shape, std::mt19937_64& rng, double margin) {
  Dense<double> d = random_dense(std::move(shape), rng, margin, 1.0);
  std::bernoulli_distribution flip(0.5);
  for (Index i = 0; i < d.numel(); ++i)
    if (flip(rng)) d.data[i] = -d.data[i];
  return d;
}

LabelMap random_mask(Index h, Index w, Index k, std::mt19937_64& rng) {
  LabelMap m(h, w);
  std::uniform_int_distribution<int> cls(0, static_cast<int>(k - 1));
  for (auto& v : m.labels) v = static_cast<std::uint8_t>(cls(rng));
  return m;
}

/// Features whose bilinear descriptor keeps every entry clear of the signed
/// square root's non-differentiable point.
Dense<double> descriptor_safe(Shape shape, std::mt19937_64& rng, double margin) {
  for (;;) {
    Dense<double> x = random_dense(shape, rng);
    const Index d = x.dim(0), n = x.numel() / d;
    auto m = x.as_matrix(d, n);
    const Eigen::MatrixXd a = m * m.transpose();
    if (a.cwiseAbs().minCoeff() > margin) return x;
  }
}

ArfWeights<double> arf_from(const Inputs& in, std::size_t first, bool gated, GateType type) {
  ArfWeights<double> w;
  w.gate_type = type;
  w.compress.push_back(in[first]);
  if (gated) w.gate = ArfGate<double>{in[first + 1], in[first + 2], in[first + 3], in[first + 4]};
  return w;
}

struct Case {
  std::string name;
  std::function<GradcheckReport(std::mt19937_64&, const GradcheckOptions&)> run;
};

template <typename F>
Case make_case(std::string name, F f, std::function<std::vector<Dense<double>>(std::mt19937_64&)> inputs) {
  return {name, [name, f, inputs](std::mt19937_64& rng, const GradcheckOptions& opts) {
            return gradcheck(name, f, inputs(rng), opts);
          }};
}

std::vector<Case> op_cases() {
  std::vector<Case> cases;
  auto rnd = [](Shape s) {
    return [s](std::mt19937_64& rng) { return std::vector<Dense<double>>{random_dense(s, rng)}; };
  };
  auto rnd2 = [](Shape a, Shape b) {
    return [a, b](std::mt19937_64& rng) { return std::vector<Dense<double>>{random_dense(a, rng), random_dense(b, rng)}; };
  };

  cases.push_back(make_case("add", [](const Inputs& x) { return add(x[0], x[1]); }, rnd2({2, 3, 3}, {2, 3, 3})));
  cases.push_back(make_case("sub", [](const Inputs& x) { return sub(x[0], x[1]); }, rnd2({2, 3, 3}, {2, 3, 3})));
  cases.push_back(make_case("mul", [](const Inputs& x) { return mul(x[0], x[1]); }, rnd2({2, 3, 3}, {2, 3, 3})));
  cases.push_back(make_case("div", [](const Inputs& x) { return div(x[0], x[1]); }, [](std::mt19937_64& rng) {
    return std::vector<Dense<double>>{random_dense({2, 3, 3}, rng), random_dense({2, 3, 3}, rng, 0.5, 2.0)};
  }));
  cases.push_back(make_case("scale", [](const Inputs& x) { return scale(x[0], -1.7); }, rnd({2, 3, 3})));
  cases.push_back(make_case("add_scalar", [](const Inputs& x) { return add_scalar(x[0], 0.3); }, rnd({2, 3, 3})));
  cases.push_back(make_case("log", [](const Inputs& x) { return log(x[0]); }, [](std::mt19937_64& rng) {
    return std::vector<Dense<double>>{random_dense({2, 3, 3}, rng, 0.2, 3.0)};
  }));
  cases.push_back(make_case("sum", [](const Inputs& x) { return sum(x[0]); }, rnd({2, 3, 3})));
  cases.push_back(make_case("mean", [](const Inputs& x) { return mean(x[0]); }, rnd({2, 3, 3})));
  cases.push_back(make_case("reshape", [](const Inputs& x) { return reshape(x[0], {3, 6}); }, rnd({2, 3, 3})));
  cases.push_back(make_case("transpose", [](const Inputs& x) { return transpose(x[0]); }, rnd({3, 4})));
  cases.push_back(make_case("matmul", [](const Inputs& x) { return matmul(x[0], x[1]); }, rnd2({3, 4}, {4, 5})));
  cases.push_back(make_case("conv2d", [](const Inputs& x) { return conv2d(x[0], x[1], 1, 1); },
                            rnd2({2, 5, 5}, {3, 2, 3, 3})));
  cases.push_back(make_case("conv2d_stride2", [](const Inputs& x) { return conv2d(x[0], x[1], 2, 1); },
                            rnd2({2, 5, 5}, {3, 2, 3, 3})));
  cases.push_back(make_case("conv2d_pointwise", [](const Inputs& x) { return conv2d(x[0], x[1]); },
                            rnd2({3, 4, 4}, {2, 3, 1, 1})));
  cases.push_back(make_case("add_channel_bias", [](const Inputs& x) { return add_channel_bias(x[0], x[1]); },
                            rnd2({3, 4, 4}, {3})));
  cases.push_back(make_case("sum_spatial", [](const Inputs& x) { return sum_spatial(x[0]); }, rnd({3, 4, 4})));
  cases.push_back(make_case("global_avg_pool", [](const Inputs& x) { return global_avg_pool(x[0]); }, rnd({3, 4, 4})));
  cases.push_back(make_case("upsample", [](const Inputs& x) { return upsample(x[0], 2); }, rnd({2, 3, 3})));
  cases.push_back(make_case("concat_channels", [](const Inputs& x) { return concat_channels<double>({x[0], x[1]}); },
                            rnd2({2, 3, 3}, {3, 3, 3})));
  cases.push_back(make_case("slice_channels", [](const Inputs& x) { return slice_channels(x[0], 1, 2); }, rnd({4, 3, 3})));
  cases.push_back(make_case("channel_scale", [](const Inputs& x) { return channel_scale(x[0], x[1]); },
                            rnd2({4, 3, 3}, {4})));
  cases.push_back(make_case("relu", [](const Inputs& x) { return relu(x[0]); }, [](std::mt19937_64& rng) {
    return std::vector<Dense<double>>{away_from_zero({2, 4, 4}, rng, 1e-2)};
  }));
  cases.push_back(make_case("sigmoid", [](const Inputs& x) { return sigmoid(x[0]); }, rnd({2, 4, 4})));
  cases.push_back(make_case("signed_sqrt", [](const Inputs& x) { return signed_sqrt(x[0]); }, [](std::mt19937_64& rng) {
    return std::vector<Dense<double>>{away_from_zero({2, 4, 4}, rng, 1e-2)};
  }));
  cases.push_back(make_case("l2_normalize", [](const Inputs& x) { return l2_normalize(x[0]); }, rnd({4, 4})));
  cases.push_back(make_case("softmax_channels", [](const Inputs& x) { return softmax_channels(x[0]); }, rnd({4, 3, 3})));
  cases.push_back(make_case("log_softmax_channels", [](const Inputs& x) { return log_softmax_channels(x[0]); },
                            rnd({4, 3, 3})));
  cases.push_back(make_case(
      "batch_norm_training",
      [](const Inputs& x) {
        BatchNormStats<double> stats;
        return batch_norm(x[0], x[1], x[2], stats, NormMode::training, 2);
      },
      [](std::mt19937_64& rng) {
        return std::vector<Dense<double>>{random_dense({6, 3, 3}, rng), random_dense({3}, rng, 0.5, 1.5),
                                          random_dense({3}, rng)};
      }));
  cases.push_back(make_case(
      "batch_norm_inference",
      [](const Inputs& x) {
        BatchNormStats<double> stats(3);
        stats.running_mean.data << 0.1, -0.2, 0.3;
        stats.running_var.data << 0.5, 1.5, 2.0;
        return batch_norm(x[0], x[1], x[2], stats, NormMode::inference);
      },
      [](std::mt19937_64& rng) {
        return std::vector<Dense<double>>{random_dense({3, 3, 3}, rng), random_dense({3}, rng), random_dense({3}, rng)};
      }));

  // Bilinear attention.
  cases.push_back(make_case("bilinear_pool", [](const Inputs& x) { return bilinear_pool(x[0]); }, rnd({4, 3, 3})));
  cases.push_back(make_case(
      "normalize_descriptor", [](const Inputs& x) { return normalize_descriptor(x[0]); },
      [](std::mt19937_64& rng) { return std::vector<Dense<double>>{away_from_zero({4, 4}, rng, 1e-2)}; }));
  cases.push_back(make_case("distribute", [](const Inputs& x) { return distribute(x[0], x[1]); },
                            rnd2({3, 3}, {3, 4, 4})));
  cases.push_back(make_case("bam_forward", [](const Inputs& x) { return bam_forward(x[0]); }, [](std::mt19937_64& rng) {
    return std::vector<Dense<double>>{descriptor_safe({3, 4, 4}, rng, 1e-2)};
  }));

  // Adaptive receptive field, inputs at 8×4×4 (coarse) and 8×8×8 (fine), N = 4.
  auto arf_inputs = [](bool gated) {
    return [gated](std::mt19937_64& rng) {
      std::vector<Dense<double>> v{random_dense({8, 4, 4}, rng), random_dense({8, 8, 8}, rng),
                                   random_dense({4, 8, 1, 1}, rng)};
      if (gated) {
        const Index cp = 12, hidden = gate_hidden_width(cp);
        v.push_back(random_dense({hidden, cp}, rng));
        v.push_back(away_from_zero({hidden}, rng, 0.2));
        v.push_back(random_dense({cp, hidden}, rng));
        v.push_back(random_dense({cp}, rng));
      }
      return v;
    };
  };
  cases.push_back(make_case(
      "arf_compress",
      [](const Inputs& x) {
        const auto w = arf_from(x, 2, false, GateType::sigmoid);
        return compress_channels<double>(Inputs{x[0], x[1]}, w).front();
      },
      arf_inputs(false)));
  cases.push_back(make_case(
      "arf_pyramid", [](const Inputs& x) { return build_pyramid<double>(Inputs{x[0], x[1]}).features; },
      [](std::mt19937_64& rng) {
        return std::vector<Dense<double>>{random_dense({4, 4, 4}, rng), random_dense({8, 8, 8}, rng)};
      }));
  for (GateType type : {GateType::sigmoid, GateType::softmax}) {
    const std::string suffix = "_" + to_string(type);
    cases.push_back(make_case(
        "arf_scale_weights" + suffix,
        [type](const Inputs& x) {
          const auto w = arf_from(x, 2, true, type);
          return scale_weights<double>(Inputs{conv2d(x[0], x[2]), x[1]}, *w.gate, type);
        },
        arf_inputs(true)));
    cases.push_back(make_case(
        "arf_forward" + suffix,
        [type](const Inputs& x) { return arf_forward<double>(Inputs{x[0], x[1]}, arf_from(x, 2, true, type)); },
        arf_inputs(true)));
  }

  // Losses on a 3-class 4×4 problem.
  auto loss_case = [&cases](std::string name, std::function<T(const T&, const LabelMap&)> f) {
    cases.push_back({name, [name, f](std::mt19937_64& rng, const GradcheckOptions& opts) {
                       const LabelMap mask = random_mask(4, 4, 3, rng);
                       return gradcheck(name, [&](const Inputs& x) { return f(x[0], mask); },
                                        {random_dense({3, 4, 4}, rng, -2.0, 2.0)}, opts);
                     }});
  };
  loss_case("cross_entropy", [](const T& z, const LabelMap& m) { return cross_entropy(z, m); });
  loss_case("dice", [](const T& z, const LabelMap& m) { return dice(softmax_channels(z), m); });
  loss_case("hybrid_loss", [](const T& z, const LabelMap& m) { return hybrid_loss(z, m, 0.2); });
  cases.push_back({"hybrid_loss_two_layer", [](std::mt19937_64& rng, const GradcheckOptions& opts) {
                     const LabelMap mask = random_mask(4, 4, 3, rng);
                     auto f = [&](const Inputs& x) {
                       const T hidden = sigmoid(conv2d(x[0], x[1], 1, 1));
                       return hybrid_loss(add_channel_bias(conv2d(hidden, x[2]), x[3]), mask, 0.2);
                     };
                     return gradcheck("hybrid_loss_two_layer", f,
                                      {random_dense({3, 4, 4}, rng), random_dense({4, 3, 3, 3}, rng),
                                       random_dense({3, 4, 1, 1}, rng), random_dense({3}, rng)},
                                      opts);
                   }});
  return cases;
}

/// Whole network on one 3×16×16 image, checked with respect to the image and
/// a sample of parameters spread across the network. Batch norm runs on
/// running statistics: at this size the deepest map is 1×1, where batch
/// statistics are degenerate.
GradcheckReport network_case(std::uint64_t seed) {
  ModelConfig cfg;
  BarnetMini<double> model(cfg, seed);
  std::mt19937_64 rng(derive_seed(seed, 0x6e6574));
  auto slots = model.parameter_slots();
  const std::vector<std::string> picked{"encoder.0.conv1.weight", "encoder.3.conv2.gamma",   "decoder.1.arf.compress.0",
                                        "decoder.2.arf.gate.w1",  "decoder.4.arf.gate.b2",   "decoder.4.fuse.weight",
                                        "head.weight"};
  std::vector<Tensor<double>*> targets;
  std::vector<Dense<double>> inputs{random_dense({3, 16, 16}, rng, 0.0, 1.0)};
  for (const auto& name : picked) {
    auto it = std::find_if(slots.begin(), slots.end(), [&](const auto& s) { return s.first == name; });
    if (it == slots.end()) throw ConfigError("network gradcheck: no parameter " + name);
    targets.push_back(it->second);
    inputs.push_back(it->second->value());
  }
  auto f = [&](const Inputs& x) {
    for (std::size_t i = 0; i < targets.size(); ++i) *targets[i] = x[i + 1];
    return model.forward(x[0], NormMode::inference);
  };
  GradcheckOptions opts;
  opts.tolerance = 1e-3;
  opts.step = 1e-6;
  opts.seed = seed;
  opts.max_elements = 12;
  return gradcheck("full_network", f, inputs, opts);
}

}  // namespace

std::vector<GradcheckReport> run_gradcheck_suite(std::span<const std::uint64_t> seeds) {
  std::vector<GradcheckReport> reports;
  const auto cases = op_cases();
  for (std::uint64_t seed : seeds) {
    for (const auto& c : cases) {
      std::mt19937_64 rng(derive_seed(seed, fnv1a64(c.name)));
      GradcheckOptions opts;
      opts.seed = seed;
      GradcheckReport r = c.run(rng, opts);
      r.op += " seed " + std::to_string(seed);
      reports.push_back(std::move(r));
    }
    GradcheckReport r = network_case(seed);
    r.op += " seed " + std::to_string(seed);
    reports.push_back(std::move(r));
  }
  return reports;
}

std::vector<AblationVariant> ablation_variants() {
  return {{"basic", false, false}, {"bam", true, false}, {"arf", false, true}, {"full", true, true}};
}

std::vector<AblationRun> run_ablation(const RunConfig& base, const DatasetSplits& data,
                                      std::span<const std::uint64_t> seeds, const AblationCallback& on_run) {
  std::vector<AblationRun> runs;
  for (std::uint64_t seed : seeds) {
    for (const auto& v : ablation_variants()) {
      RunConfig cfg = base;
      cfg.model.use_bam = v.use_bam;
      cfg.model.use_arf = v.use_arf;
      cfg.train.seed = seed;
      const auto t0 = std::chrono::steady_clock::now();
      TrainResult trained = train_model(cfg, data.train);
      const Evaluation ev = evaluate(trained.model, data.test);
      AblationRun run;
      run.variant = v;
      run.seed = seed;
      run.parameters = trained.model.parameter_count();
      run.mean_iou = ev.report.mean_iou;
      run.mean_dice = ev.report.mean_dice;
      run.final_loss = trained.losses.empty() ? 0.0 : trained.losses.back().loss;
      run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (on_run) on_run(run);
      runs.push_back(run);
    }
  }
  return runs;
}

double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::vector<AblationSummary> summarize(std::span<const AblationRun> runs) {
  std::vector<AblationSummary> out;
  for (const auto& v : ablation_variants()) {
    std::vector<double> iou, dice;
    for (const auto& r : runs)
      if (r.variant.name == v.name) {
        iou.push_back(r.mean_iou);
        dice.push_back(r.mean_dice);
      }
    if (!iou.empty()) out.push_back({v, median(iou), median(dice)});
  }
  return out;
}

void write_ablation_csv(std::ostream& os, std::span<const AblationRun> runs) {
  os << "variant,use_bam,use_arf,seed,parameters,mean_iou,mean_dice,final_loss,seconds\n";
  char line[256];
  for (const auto& r : runs) {
    std::snprintf(line, sizeof line, "%s,%d,%d,%llu,%lld,%.6f,%.6f,%.6f,%.1f\n", r.variant.name.c_str(),
                  r.variant.use_bam, r.variant.use_arf, static_cast<unsigned long long>(r.seed),
                  static_cast<long long>(r.parameters), r.mean_iou, r.mean_dice, r.final_loss, r.seconds);
    os << line;
  }
  for (const auto& s : summarize(runs)) {
    Index params = 0;
    for (const auto& r : runs)
      if (r.variant.name == s.variant.name) params = r.parameters;
    std::snprintf(line, sizeof line, "%s,%d,%d,median,%lld,%.6f,%.6f,,\n", s.variant.name.c_str(), s.variant.use_bam,
                  s.variant.use_arf, static_cast<long long>(params), s.median_iou, s.median_dice);
    os << line;
  }
}

namespace {

using Clock = std::chrono::steady_clock;

template <typename Setup, typename Timed>
BenchRow measure(const BenchOptions& opts, Setup setup, Timed timed) {
  std::vector<double> us;
  const auto start = Clock::now();
  while (static_cast<Index>(us.size()) < opts.min_reps ||
         std::chrono::duration<double>(Clock::now() - start).count() < opts.budget_seconds) {
    auto state = setup();
    const auto t0 = Clock::now();
    timed(state);
    us.push_back(std::chrono::duration<double, std::micro>(Clock::now() - t0).count());
  }
  BenchRow row;
  row.reps = static_cast<Index>(us.size());
  row.median_us = median(us);
  row.min_us = *std::min_element(us.begin(), us.end());
  return row;
}

Tensor<float> random_float(Shape shape, std::mt19937_64& rng, bool grad) {
  return Tensor<float>(random_dense(std::move(shape), rng).cast<float>(), grad);
}

}  // namespace

std::vector<BenchRow> run_bench(const BenchOptions& opts) {
  std::vector<BenchRow> rows;
  std::mt19937_64 rng(7);
  auto label = [](BenchRow r, const char* module, const char* pass, Index c, Index s) {
    r.module = module;
    r.pass = pass;
    r.channels = c;
    r.height = r.width = s;
    return r;
  };
  for (Index s : opts.bam_sizes)
    for (Index d : opts.bam_channels) {
      const Tensor<float> x = random_float({d, s, s}, rng, false);
      rows.push_back(label(measure(opts, [] { return 0; }, [&](int) { (void)bam_forward(x); }), "bam", "forward", d, s));
      rows.push_back(label(measure(
                               opts,
                               [&] {
                                 Tensor<float> leaf(x.value(), true);
                                 return std::pair{leaf, sum(bam_forward(leaf))};
                               },
                               [](auto& st) { st.second.backward(); }),
                           "bam", "backward", d, s));
    }
  for (Index s : opts.arf_sizes)
    for (Index n : opts.arf_channels) {
      // Three inputs at s/4, s/2 and s with 32, 16 and 16 channels.
      std::vector<Index> channels{32, 16, 16};
      ArfWeights<float> w = make_arf_weights<float>(channels, n, true, GateType::sigmoid, rng);
      std::vector<Tensor<float>> xs{random_float({32, s / 4, s / 4}, rng, true), random_float({16, s / 2, s / 2}, rng, true),
                                    random_float({16, s, s}, rng, true)};
      {
        NoGradGuard guard;
        rows.push_back(label(measure(opts, [] { return 0; }, [&](int) { (void)arf_forward<float>(xs, w); }), "arf",
                             "forward", n, s));
      }
      rows.push_back(label(measure(
                               opts, [&] { return sum(arf_forward<float>(xs, w)); },
                               [](Tensor<float>& loss) { loss.backward(); }),
                           "arf", "backward", n, s));
    }
  return rows;
}

void write_bench_csv(std::ostream& os, std::span<const BenchRow> rows) {
  os << "module,pass,channels,height,width,reps,median_us,min_us\n";
  char line[192];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%s,%s,%lld,%lld,%lld,%lld,%.3f,%.3f\n", r.module.c_str(), r.pass.c_str(),
                  static_cast<long long>(r.channels), static_cast<long long>(r.height), static_cast<long long>(r.width),
                  static_cast<long long>(r.reps), r.median_us, r.min_us);
    os << line;
  }
}

}  // namespace barnet
