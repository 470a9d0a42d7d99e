#include "barnet/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <numeric>
#include <thread>

#include "barnet/loss.hpp"

namespace barnet {

double scheduled_lr(const RunConfig& cfg, Index step) {
  const Index periods = step / cfg.steps_per_decay();
  return cfg.optim.lr * std::pow(cfg.optim.decay_factor, static_cast<double>(periods));
}

Adam::Adam(std::vector<Tensor<float>> params, const OptimConfig& cfg) : params_(std::move(params)), cfg_(cfg) {
  for (const auto& p : params_) {
    m_.emplace_back(p.shape());
    v_.emplace_back(p.shape());
    updates_.push_back(0);
  }
}

void Adam::step(double lr) {
  ++t_;
  const float b1 = static_cast<float>(cfg_.beta1), b2 = static_cast<float>(cfg_.beta2);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor<float>& p = params_[i];
    if (!p.has_grad()) continue;
    // Per-parameter step count keeps bias correction right for parameters
    // that sit out some steps.
    const Index k = ++updates_[i];
    const auto& g = p.grad().data;
    m_[i].data = b1 * m_[i].data + (1.0f - b1) * g;
    v_[i].data = b2 * v_[i].data + (1.0f - b2) * g.square();
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(k));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(k));
    const float step_size = static_cast<float>(lr / c1);
    const float root_c2 = static_cast<float>(std::sqrt(c2));
    const float eps = static_cast<float>(cfg_.eps);
    p.mutable_value().data -= step_size * m_[i].data / (v_[i].data.sqrt() / root_c2 + eps);
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

BatchSampler::BatchSampler(std::size_t n, std::size_t batch_size, std::uint64_t seed)
    : order_(n), batch_size_(batch_size), cursor_(n), rng_(seed) {
  if (n == 0) throw DataError("cannot sample batches from an empty split");
  std::iota(order_.begin(), order_.end(), std::size_t{0});
}

std::vector<std::size_t> BatchSampler::next() {
  std::vector<std::size_t> batch;
  while (batch.size() < batch_size_) {
    if (cursor_ == order_.size()) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      cursor_ = 0;
    }
    batch.push_back(order_[cursor_++]);
  }
  return batch;
}

namespace {

std::vector<Tensor<float>> parameters_of(const Model& model) {
  std::vector<Tensor<float>> out;
  for (auto& [name, t] : model.named_parameters()) out.push_back(t);
  return out;
}

}  // namespace

Trainer::Trainer(const RunConfig& cfg, Model& model)
    : cfg_(cfg), model_(model), adam_(parameters_of(model), cfg.optim) {}

LossRow Trainer::step(std::span<const SegSample> batch) {
  std::vector<Tensor<float>> images;
  for (const auto& s : batch) images.push_back(image_tensor<float>(s));
  const auto logits = model_.forward(images, NormMode::training);
  const float alpha = static_cast<float>(cfg_.loss.alpha), smooth = static_cast<float>(cfg_.loss.smooth);
  Tensor<float> total;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Tensor<float> l = hybrid_loss(logits[i], batch[i].mask, alpha, smooth);
    total = i == 0 ? l : add(total, l);
  }
  Tensor<float> loss = scale(total, 1.0f / static_cast<float>(batch.size()));
  adam_.zero_grad();
  loss.backward();
  LossRow row{step_, scheduled_lr(cfg_, step_), static_cast<double>(loss.item())};
  adam_.step(row.lr);
  adam_.zero_grad();
  ++step_;
  return row;
}

std::uint64_t model_seed(const RunConfig& cfg) { return derive_seed(cfg.train.seed, 0x6d6f64656cULL); }

ModelConfig effective_model_config(const RunConfig& cfg) {
  ModelConfig m = cfg.model;
  m.num_classes = cfg.scene.num_classes;
  return m;
}

TrainResult train_model(const RunConfig& cfg, std::span<const SegSample> train, std::ostream* progress) {
  TrainResult result{Model(effective_model_config(cfg), model_seed(cfg)), {}};
  Trainer trainer(cfg, result.model);
  BatchSampler sampler(train.size(), static_cast<std::size_t>(cfg.train.batch_size),
                       derive_seed(cfg.train.seed, 0x62617463ULL));
  std::mt19937_64 aug_rng(derive_seed(cfg.train.seed, 0x617567ULL));
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  for (Index s = 0; s < cfg.train.steps; ++s) {
    std::vector<SegSample> batch;
    for (std::size_t i : sampler.next()) {
      // Always draw so the stream does not depend on augment_prob.
      const double u = coin(aug_rng);
      const AugmentParams params = draw_augment(train[i].mask.height, train[i].mask.width, aug_rng);
      batch.push_back(u < cfg.train.augment_prob ? apply_augment(train[i], params) : train[i]);
    }
    result.losses.push_back(trainer.step(batch));
    if (progress && (s % 50 == 0 || s + 1 == cfg.train.steps)) {
      char line[96];
      std::snprintf(line, sizeof line, "step %lld  lr %.3g  loss %.5f\n", static_cast<long long>(s),
                    result.losses.back().lr, result.losses.back().loss);
      *progress << line << std::flush;
    }
  }
  return result;
}

void write_loss_csv(std::ostream& os, std::span<const LossRow> rows) {
  os << "step,lr,loss\n";
  char line[96];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%lld,%.9g,%.9g\n", static_cast<long long>(r.step), r.lr, r.loss);
    os << line;
  }
}

LabelMap predict(Model& model, const SegSample& sample) {
  NoGradGuard guard;
  const Tensor<float> logits = model.forward(image_tensor<float>(sample), NormMode::inference);
  const Index k = logits.dim(0), h = logits.dim(1), w = logits.dim(2);
  LabelMap out(h, w);
  auto m = logits.value().as_matrix(k, h * w);
  for (Index i = 0; i < h * w; ++i) {
    Index best = 0;
    m.col(i).maxCoeff(&best);
    out.labels[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(best);
  }
  return out;
}

unsigned evaluation_threads() {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("BARNETKIT_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1) throw ConfigError("BARNETKIT_THREADS must be a positive integer");
    n = static_cast<unsigned>(v);
  }
  return n;
}

Evaluation evaluate(Model& model, std::span<const SegSample> samples, unsigned threads) {
  Evaluation ev;
  ev.predictions.resize(samples.size());
  const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(samples.size())));
  auto work = [&](unsigned id) {
    for (std::size_t i = id; i < samples.size(); i += workers) ev.predictions[i] = predict(model, samples[i]);
  };
  if (workers <= 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (unsigned id = 0; id < workers; ++id) pool.emplace_back(work, id);
    for (auto& t : pool) t.join();
  }
  ConfusionMatrix m(model.config().num_classes);
  for (std::size_t i = 0; i < samples.size(); ++i) m.add(ev.predictions[i], samples[i].mask);
  ev.report = EvalReport::from_confusion(m, samples.size());
  return ev;
}

DatasetSplits dataset_for(const RunConfig& cfg) {
  if (!cfg.data.root.empty()) return load_dataset(cfg.data.root);
  return synthesize_dataset(cfg.scene, static_cast<std::size_t>(cfg.data.n_train),
                            static_cast<std::size_t>(cfg.data.n_test));
}

}  // namespace barnet
