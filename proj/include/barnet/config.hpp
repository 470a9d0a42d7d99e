#pragma once

#include <cstdint>
#include <string>

#include "barnet/data.hpp"
#include "barnet/model.hpp"

namespace barnet {

enum class DecayUnit { steps, epochs };

struct OptimConfig {
  double lr = 3e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// lr = lr0 · decay_factor^floor(step / decay_every units).
  double decay_factor = 0.8;
  Index decay_every = 30;
  DecayUnit decay_unit = DecayUnit::steps;
};

struct LossConfig {
  double alpha = 0.2;
  double smooth = 1.0;
};

struct TrainConfig {
  Index batch_size = 8;
  Index steps = 600;
  std::uint64_t seed = 1;
  double augment_prob = 0.5;
};

struct DataConfig {
  /// Dataset directory written by gen-data; empty means synthesize in memory.
  std::string root;
  Index n_train = 200;
  Index n_test = 50;
};

/// Everything needed to reproduce a run.
struct RunConfig {
  ModelConfig model;
  LossConfig loss;
  OptimConfig optim;
  TrainConfig train;
  DataConfig data;
  SceneConfig scene;

  void validate() const;

  /// Stable `key = value` text, one key per line in a fixed order.
  std::string canonical() const;
  std::uint64_t hash() const;

  /// Optimizer steps in one pass over the training split.
  Index steps_per_epoch() const;
  Index steps_per_decay() const;
};

/// Parses flat `key = value` text over the defaults; unknown keys are errors.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);

/// The 4-class 64×64 configuration used for quick experiments.
RunConfig quick_config();

}  // namespace barnet
