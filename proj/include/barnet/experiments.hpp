#pragma once

#include <cstdint>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "barnet/gradcheck.hpp"
#include "barnet/train.hpp"

namespace barnet {

// ---------------------------------------------------------------------------
// Finite-difference suite

/// One report per op per seed: every tensor op, BAM, ARF, the losses, and
/// the full network on a 3×16×16 input (looser tolerance).
std::vector<GradcheckReport> run_gradcheck_suite(std::span<const std::uint64_t> seeds);

// ---------------------------------------------------------------------------
// Ablation grid

struct AblationVariant {
  std::string name;
  bool use_bam = false;
  bool use_arf = false;
};

/// basic, bam, arf, full.
std::vector<AblationVariant> ablation_variants();

struct AblationRun {
  AblationVariant variant;
  std::uint64_t seed = 0;
  Index parameters = 0;
  double mean_iou = 0.0;
  double mean_dice = 0.0;
  double final_loss = 0.0;
  double seconds = 0.0;
};

struct AblationSummary {
  AblationVariant variant;
  double median_iou = 0.0;
  double median_dice = 0.0;
};

using AblationCallback = std::function<void(const AblationRun&)>;

/// Trains every variant from scratch once per seed on the same data.
std::vector<AblationRun> run_ablation(const RunConfig& base, const DatasetSplits& data,
                                      std::span<const std::uint64_t> seeds, const AblationCallback& on_run = {});

std::vector<AblationSummary> summarize(std::span<const AblationRun> runs);
double median(std::vector<double> values);

/// Per-run rows followed by one "median" row per variant.
void write_ablation_csv(std::ostream& os, std::span<const AblationRun> runs);

// ---------------------------------------------------------------------------
// Timing

struct BenchRow {
  std::string module;  // bam or arf
  std::string pass;    // forward or backward
  Index channels = 0;
  Index height = 0;
  Index width = 0;
  Index reps = 0;
  double median_us = 0.0;
  double min_us = 0.0;
};

struct BenchOptions {
  std::vector<Index> bam_channels{32, 64, 128, 256};
  std::vector<Index> bam_sizes{16, 32};
  std::vector<Index> arf_channels{4, 8, 16};
  std::vector<Index> arf_sizes{16, 32};
  /// Repeat each measurement until this much time has passed (and at least min_reps times).
  double budget_seconds = 0.25;
  Index min_reps = 5;
};

std::vector<BenchRow> run_bench(const BenchOptions& opts);
void write_bench_csv(std::ostream& os, std::span<const BenchRow> rows);

}  // namespace barnet
