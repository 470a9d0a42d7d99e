#pragma once

#include <cstdint>
#include <ostream>
#include <random>
#include <span>
#include <vector>

#include "barnet/config.hpp"
#include "barnet/data.hpp"
#include "barnet/metrics.hpp"
#include "barnet/model.hpp"

namespace barnet {

using Model = BarnetMini<float>;

/// lr0 · factor^floor(step / steps_per_decay).
double scheduled_lr(const RunConfig& cfg, Index step);

/// Adam with bias correction. Parameters that received no gradient in a
/// step are left untouched, moments included.
class Adam {
 public:
  Adam(std::vector<Tensor<float>> params, const OptimConfig& cfg);

  void step(double lr);
  void zero_grad();
  Index steps() const { return t_; }

 private:
  std::vector<Tensor<float>> params_;
  std::vector<Dense<float>> m_, v_;
  std::vector<Index> updates_;
  OptimConfig cfg_;
  Index t_ = 0;
};

/// Shuffled passes over the training split, one permutation per epoch.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::size_t batch_size, std::uint64_t seed);
  std::vector<std::size_t> next();

 private:
  std::vector<std::size_t> order_;
  std::size_t batch_size_;
  std::size_t cursor_ = 0;
  std::mt19937_64 rng_;
};

struct LossRow {
  Index step = 0;
  double lr = 0.0;
  double loss = 0.0;
};

class Trainer {
 public:
  Trainer(const RunConfig& cfg, Model& model);

  /// Forward in training mode over the batch, mean hybrid loss, one Adam step.
  LossRow step(std::span<const SegSample> batch);
  Index steps_taken() const { return step_; }

 private:
  RunConfig cfg_;
  Model& model_;
  Adam adam_;
  Index step_ = 0;
};

/// Seed for model initialization derived from the training seed.
std::uint64_t model_seed(const RunConfig& cfg);

ModelConfig effective_model_config(const RunConfig& cfg);

struct TrainResult {
  Model model;
  std::vector<LossRow> losses;
};

/// Trains from scratch for cfg.train.steps steps on `train`.
TrainResult train_model(const RunConfig& cfg, std::span<const SegSample> train, std::ostream* progress = nullptr);

void write_loss_csv(std::ostream& os, std::span<const LossRow> rows);

/// Arg-max class per pixel.
LabelMap predict(Model& model, const SegSample& sample);

/// Worker count for evaluation: BARNETKIT_THREADS if set, else hardware concurrency.
unsigned evaluation_threads();

struct Evaluation {
  EvalReport report;
  std::vector<LabelMap> predictions;
};

/// Inference over `samples` on up to `threads` workers. The confusion matrix
/// is merged in sample order so the result does not depend on scheduling.
Evaluation evaluate(Model& model, std::span<const SegSample> samples, unsigned threads = evaluation_threads());

/// Loads the dataset at cfg.data.root or synthesizes it in memory.
DatasetSplits dataset_for(const RunConfig& cfg);

}  // namespace barnet
