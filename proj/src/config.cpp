#include "barnet/config.hpp"

#include <fstream>
#include <sstream>

#include "barnet/flat_text.hpp"

namespace barnet {

namespace {

std::string join(const std::vector<Index>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::vector<Index> split_widths(const std::string& key, const std::string& value) {
  std::vector<Index> out;
  std::istringstream in(value);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    const Index w = parse_int(key, trim(tok));
    if (w < 1) throw ConfigError(key + ": widths must be positive");
    out.push_back(w);
  }
  if (out.empty()) throw ConfigError(key + ": expected a comma-separated list");
  return out;
}

const char* to_string(DecayUnit u) { return u == DecayUnit::steps ? "steps" : "epochs"; }

DecayUnit parse_unit(const std::string& key, const std::string& v) {
  if (v == "steps") return DecayUnit::steps;
  if (v == "epochs") return DecayUnit::epochs;
  throw ConfigError(key + ": expected steps or epochs, got '" + v + "'");
}

}  // namespace

void RunConfig::validate() const {
  scene.validate();
  if (model.num_classes != scene.num_classes) throw ConfigError("model and scene class counts differ");
  if (model.in_channels != 3) throw ConfigError("model.in_channels must be 3 for RGB scenes");
  if (scene.height % model.downsample() != 0 || scene.width % model.downsample() != 0)
    throw ConfigError("scene size must be divisible by " + std::to_string(model.downsample()));
  if (model.arf_channels < 1) throw ConfigError("model.arf_channels must be >= 1");
  if (!(loss.alpha >= 0.0 && loss.alpha <= 1.0)) throw ConfigError("loss.alpha must lie in [0,1]");
  if (!(loss.smooth > 0.0)) throw ConfigError("loss.smooth must be positive");
  if (!(optim.lr > 0.0)) throw ConfigError("optim.lr must be positive");
  if (!(optim.decay_factor > 0.0 && optim.decay_factor <= 1.0)) throw ConfigError("optim.decay_factor must lie in (0,1]");
  if (optim.decay_every < 1) throw ConfigError("optim.decay_every must be >= 1");
  if (train.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (train.steps < 0) throw ConfigError("train.steps must be >= 0");
  if (!(train.augment_prob >= 0.0 && train.augment_prob <= 1.0)) throw ConfigError("train.augment_prob must lie in [0,1]");
  if (data.n_train < 1 || data.n_test < 0) throw ConfigError("data.n_train must be >= 1 and data.n_test >= 0");
}

std::string RunConfig::canonical() const {
  std::ostringstream os;
  os << "model.widths = " << join(model.widths) << '\n'
     << "model.arf_channels = " << model.arf_channels << '\n'
     << "model.use_bam = " << (model.use_bam ? "true" : "false") << '\n'
     << "model.use_arf = " << (model.use_arf ? "true" : "false") << '\n'
     << "model.gate = " << barnet::to_string(model.gate) << '\n'
     << "model.wiring = " << barnet::to_string(model.wiring) << '\n'
     << "model.bam_stages = " << model.bam_stages << '\n'
     << "model.full_resolution = " << (model.full_resolution ? "true" : "false") << '\n'
     << "model.bn_momentum = " << format_double(model.bn_momentum) << '\n'
     << "loss.alpha = " << format_double(loss.alpha) << '\n'
     << "loss.smooth = " << format_double(loss.smooth) << '\n'
     << "optim.lr = " << format_double(optim.lr) << '\n'
     << "optim.beta1 = " << format_double(optim.beta1) << '\n'
     << "optim.beta2 = " << format_double(optim.beta2) << '\n'
     << "optim.eps = " << format_double(optim.eps) << '\n'
     << "optim.decay_factor = " << format_double(optim.decay_factor) << '\n'
     << "optim.decay_every = " << optim.decay_every << '\n'
     << "optim.decay_unit = " << to_string(optim.decay_unit) << '\n'
     << "train.batch_size = " << train.batch_size << '\n'
     << "train.steps = " << train.steps << '\n'
     << "train.seed = " << train.seed << '\n'
     << "train.augment_prob = " << format_double(train.augment_prob) << '\n'
     << "data.root = " << data.root << '\n'
     << "data.n_train = " << data.n_train << '\n'
     << "data.n_test = " << data.n_test << '\n';
  std::istringstream scene_lines(format_scene_config(scene));
  std::string line;
  while (std::getline(scene_lines, line)) os << "scene." << line << '\n';
  return os.str();
}

std::uint64_t RunConfig::hash() const { return fnv1a64(canonical()); }

Index RunConfig::steps_per_epoch() const { return std::max<Index>(1, (data.n_train + train.batch_size - 1) / train.batch_size); }

Index RunConfig::steps_per_decay() const {
  return optim.decay_every * (optim.decay_unit == DecayUnit::epochs ? steps_per_epoch() : 1);
}

RunConfig parse_run_config(const std::string& text) {
  RunConfig c;
  std::string scene_text;
  for (const auto& [k, v] : parse_key_values(text)) {
    if (k.rfind("scene.", 0) == 0) {
      scene_text += k.substr(6) + " = " + v + "\n";
    } else if (k == "model.widths") c.model.widths = split_widths(k, v);
    else if (k == "model.arf_channels") c.model.arf_channels = parse_int(k, v);
    else if (k == "model.use_bam") c.model.use_bam = parse_bool(k, v);
    else if (k == "model.use_arf") c.model.use_arf = parse_bool(k, v);
    else if (k == "model.gate") c.model.gate = parse_gate(v);
    else if (k == "model.wiring") c.model.wiring = parse_wiring(v);
    else if (k == "model.bam_stages") c.model.bam_stages = parse_int(k, v);
    else if (k == "model.full_resolution") c.model.full_resolution = parse_bool(k, v);
    else if (k == "model.bn_momentum") c.model.bn_momentum = parse_double(k, v);
    else if (k == "loss.alpha") c.loss.alpha = parse_double(k, v);
    else if (k == "loss.smooth") c.loss.smooth = parse_double(k, v);
    else if (k == "optim.lr") c.optim.lr = parse_double(k, v);
    else if (k == "optim.beta1") c.optim.beta1 = parse_double(k, v);
    else if (k == "optim.beta2") c.optim.beta2 = parse_double(k, v);
    else if (k == "optim.eps") c.optim.eps = parse_double(k, v);
    else if (k == "optim.decay_factor") c.optim.decay_factor = parse_double(k, v);
    else if (k == "optim.decay_every") c.optim.decay_every = parse_int(k, v);
    else if (k == "optim.decay_unit") c.optim.decay_unit = parse_unit(k, v);
    else if (k == "train.batch_size") c.train.batch_size = parse_int(k, v);
    else if (k == "train.steps") c.train.steps = parse_int(k, v);
    else if (k == "train.seed") c.train.seed = parse_u64(k, v);
    else if (k == "train.augment_prob") c.train.augment_prob = parse_double(k, v);
    else if (k == "data.root") c.data.root = v;
    else if (k == "data.n_train") c.data.n_train = parse_int(k, v);
    else if (k == "data.n_test") c.data.n_test = parse_int(k, v);
    else throw ConfigError("unknown config key '" + k + "'");
  }
  if (!scene_text.empty()) c.scene = parse_scene_config(scene_text);
  c.model.num_classes = c.scene.num_classes;
  c.validate();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

RunConfig quick_config() {
  RunConfig c;
  c.scene = SceneConfig{};
  c.model.num_classes = c.scene.num_classes;
  c.validate();
  return c;
}

}  // namespace barnet
