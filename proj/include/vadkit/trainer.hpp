#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "vadkit/adam.hpp"
#include "vadkit/checkpoint.hpp"
#include "vadkit/dataset.hpp"
#include "vadkit/model.hpp"

namespace vadkit {

struct TrainConfig {
  ModelConfig model;
  double learning_rate = 1e-4;
  std::size_t batch_size = 4;
  long steps = 500;
  std::uint64_t seed = 0;
  /// SVDD weight decay; ignored by reconstruction training.
  double lambda = 1e-6;
  long checkpoint_every = 100;
  long log_every = 1;

  void validate() const {
    if (!(learning_rate > 0)) throw Error("learning_rate must be > 0");
    if (batch_size < 1) throw Error("batch_size must be >= 1");
    if (steps < 0) throw Error("steps must be >= 0");
    if (lambda < 0) throw Error("lambda must be >= 0");
    if (checkpoint_every < 1 || log_every < 1) throw Error("checkpoint_every and log_every must be >= 1");
    model.backbone.validate();
  }
};

/// Flat JSON: model fields (method, gcn, flow, ...) next to the optimisation
/// fields.
inline nlohmann::json train_to_json(const TrainConfig& c) {
  nlohmann::json j = model_to_json(c.model);
  j["learning_rate"] = c.learning_rate;
  j["batch_size"] = c.batch_size;
  j["steps"] = c.steps;
  j["seed"] = c.seed;
  j["lambda"] = c.lambda;
  j["checkpoint_every"] = c.checkpoint_every;
  j["log_every"] = c.log_every;
  return j;
}

inline TrainConfig train_from_json(const nlohmann::json& j) {
  static const std::vector<std::string> known = {
      "method", "gcn", "flow", "z_dim", "backbone", "proposals", "learning_rate",
      "batch_size", "steps", "seed", "lambda", "checkpoint_every", "log_every"};
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw Error("unknown training config field '" + key + "'");
  TrainConfig c;
  c.model = model_from_json(j);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.steps = j.value("steps", c.steps);
  c.seed = j.value("seed", c.seed);
  c.lambda = j.value("lambda", c.lambda);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.log_every = j.value("log_every", c.log_every);
  c.validate();
  return c;
}

/// Model initialisation and clip sampling draw from separate streams derived
/// from the one seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t purpose) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(purpose)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

/// One optimisation run. Construction initialises the network (and, for
/// SVDD, the frozen center); step() performs one Adam update.
class Trainer {
 public:
  Trainer(TrainConfig cfg, const fs::path& root)
      : cfg_(std::move(cfg)),
        model_((cfg_.validate(), cfg_.model)),
        stream_(root, model_.config(), derive_seed(cfg_.seed, 2)) {
    cfg_.model = model_.config();
    model_.initialize(derive_seed(cfg_.seed, 1));
    adam_ = Adam<float>(model_.params(), {cfg_.learning_rate});
    if (cfg_.model.method == Method::OneClass) {
      const auto clips = stream_.strided_pass();
      model_.init_center(clips);
    }
  }

  /// Resumes exactly where the checkpoint left off.
  static Trainer resume(const fs::path& checkpoint, const fs::path& root) {
    const Checkpoint c = load_checkpoint(checkpoint);
    if (c.train.is_null()) throw Error("checkpoint " + checkpoint.string() + " has no training state");
    Trainer t(train_from_json(c.train), root, Resume{});
    restore_model(c, t.model_);
    restore_adam(c, t.adam_);
    t.stream_.restore_rng_state(c.stream_state);
    return t;
  }

  /// One Adam step on a fresh mini-batch; returns the batch loss. Throws
  /// DivergenceError, without touching the parameters, if the loss or any
  /// gradient is not finite.
  double step() {
    std::vector<Sample<float>> batch;
    batch.reserve(cfg_.batch_size);
    for (std::size_t i = 0; i < cfg_.batch_size; ++i) batch.push_back(stream_.next());
    Gradients<float> grads = model_.params().zeros_like();
    const float loss = model_.loss_and_gradients(batch, grads, static_cast<float>(cfg_.lambda));
    const long at = adam_.steps() + 1;
    if (!std::isfinite(loss)) throw DivergenceError("non-finite loss", at);
    for (const auto& g : grads)
      if (!g.all_finite()) throw DivergenceError("non-finite gradient", at);
    adam_.step(model_.params(), grads);
    return loss;
  }

  long steps_done() const { return adam_.steps(); }
  void set_step_budget(long steps) { cfg_.steps = steps; }
  const TrainConfig& config() const { return cfg_; }
  AnomalyModel<float>& model() { return model_; }
  const AnomalyModel<float>& model() const { return model_; }
  TrainingClipStream& stream() { return stream_; }
  const Adam<float>& optimizer() const { return adam_; }

  Checkpoint checkpoint() const {
    Checkpoint c = make_checkpoint(model_, &adam_);
    c.train = train_to_json(cfg_);
    c.stream_state = stream_.rng_state();
    return c;
  }

 private:
  struct Resume {};
  Trainer(TrainConfig cfg, const fs::path& root, Resume)
      : cfg_(std::move(cfg)),
        model_(cfg_.model),
        stream_(root, model_.config(), derive_seed(cfg_.seed, 2)),
        adam_(model_.params(), {cfg_.learning_rate}) {}

  TrainConfig cfg_;
  AnomalyModel<float> model_;
  TrainingClipStream stream_;
  Adam<float> adam_;
};

inline std::string format_loss_record(long step, double loss) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%ld %.9e", step, loss);
  return buf;
}

struct TrainResult {
  std::vector<double> losses;
  fs::path checkpoint;
};

/// Trains into out_dir: config.json (resolved config), metrics.log (step and
/// loss per line), timing.log (step and wall seconds) and checkpoint.bin.
/// With resume=true training continues from out_dir/checkpoint.bin.
inline TrainResult train(const TrainConfig& cfg, const fs::path& root, const fs::path& out_dir,
                         bool resume = false, const std::function<void(long, double)>& on_step = {}) {
  fs::create_directories(out_dir);
  const fs::path ckpt = out_dir / "checkpoint.bin";
  Trainer trainer = resume ? Trainer::resume(ckpt, root) : Trainer(cfg, root);
  if (resume) {
    // only the step budget may change on resume
    TrainConfig stored = trainer.config();
    stored.steps = cfg.steps;
    if (train_to_json(stored) != train_to_json(cfg))
      throw Error("resume config differs from the one stored in " + ckpt.string());
    trainer.set_step_budget(cfg.steps);
  }
  std::ofstream(out_dir / "config.json") << train_to_json(trainer.config()).dump(2) << "\n";
  const auto mode = resume ? std::ios::app : std::ios::trunc;
  std::ofstream metrics(out_dir / "metrics.log", std::ios::out | mode);
  std::ofstream timing(out_dir / "timing.log", std::ios::out | mode);
  if (!metrics || !timing) throw Error("cannot write logs in " + out_dir.string());
  if (!resume) save_checkpoint(ckpt, trainer.checkpoint());

  TrainResult res;
  res.checkpoint = ckpt;
  const auto t0 = std::chrono::steady_clock::now();
  while (trainer.steps_done() < cfg.steps) {
    double loss = 0;
    try {
      loss = trainer.step();
    } catch (const DivergenceError& e) {
      throw DivergenceError(std::string(e.what()) + " (last good checkpoint: " + ckpt.string() + ")",
                            e.step());
    }
    const long s = trainer.steps_done();
    res.losses.push_back(loss);
    if (s % trainer.config().log_every == 0 || s == cfg.steps) {
      metrics << format_loss_record(s, loss) << "\n" << std::flush;
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      timing << s << " " << secs << "\n";
    }
    if (on_step) on_step(s, loss);
    if (s % trainer.config().checkpoint_every == 0 || s == cfg.steps)
      save_checkpoint(ckpt, trainer.checkpoint());
  }
  return res;
}

}  // namespace vadkit
