#pragma once

// Three-stage training loop with cosine-annealed learning rate, and the
// evaluation harness shared by training, the CLI and the ablation matrix.

#include <array>
#include <chrono>
#include <cmath>
#include <functional>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "disarm/errors.hpp"
#include "disarm/geometry.hpp"
#include "disarm/model.hpp"
#include "disarm/rng.hpp"
#include "disarm/scenes.hpp"

namespace disarm {

enum class Stage { warm_up, freeze, fine_tune };

inline std::string_view stage_name(Stage s) {
  switch (s) {
    case Stage::warm_up: return "WarmUp";
    case Stage::freeze: return "FreezeAnchorsAndFeatures";
    case Stage::fine_tune: return "FineTune";
  }
  return "?";
}

enum class OptimizerKind { sgd, adam };

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::sgd;
  int batch_size = 8;
  int epochs = 220;
  double lr = 0.008;
  double momentum = 0.9;
  std::array<double, 3> stage_fractions = {0.4, 0.3, 0.3};
  std::uint64_t seed = 0;
  bool objectness_loss_throughout = true;  // false: only during warm-up
  bool verify_freeze = true;
};

inline void validate(const TrainConfig& c) {
  if (c.batch_size <= 0) throw InvalidInput("train config field 'batch_size': must be positive");
  if (c.epochs < 0) throw InvalidInput("train config field 'epochs': must be non-negative");
  if (!(c.lr >= 0.0) || !std::isfinite(c.lr)) throw InvalidInput("train config field 'lr': must be finite and >= 0");
  if (!(c.momentum >= 0.0 && c.momentum < 1.0)) throw InvalidInput("train config field 'momentum': must be in [0, 1)");
  double s = 0.0;
  for (double f : c.stage_fractions) {
    if (!(f > 0.0)) throw InvalidInput("train config field 'stage_fractions': every fraction must be positive");
    s += f;
  }
  if (std::abs(s - 1.0) > 1e-9) throw InvalidInput("train config field 'stage_fractions': must sum to 1");
}

// First epoch of the freeze stage and of the fine-tune stage.
inline std::array<int, 2> stage_boundaries(int epochs, const std::array<double, 3>& fractions) {
  const int a = static_cast<int>(std::lround(fractions[0] * epochs));
  const int b = static_cast<int>(std::lround((fractions[0] + fractions[1]) * epochs));
  return {a, std::max(a, b)};
}

inline Stage stage_for_epoch(int epoch, int epochs, const std::array<double, 3>& fractions) {
  const auto [freeze_from, finetune_from] = stage_boundaries(epochs, fractions);
  if (epoch < freeze_from) return Stage::warm_up;
  if (epoch < finetune_from) return Stage::freeze;
  return Stage::fine_tune;
}

struct StageState {
  Stage stage = Stage::warm_up;
  std::array<bool, 7> frozen{};

  static StageState of(Stage s) {
    StageState st;
    st.stage = s;
    for (auto g : kAllGroups) {
      const bool weighting = g == Group::tau || g == Group::sigma || g == Group::phi;
      bool frozen = false;
      if (s == Stage::warm_up) frozen = weighting;
      if (s == Stage::freeze) frozen = !weighting;
      st.frozen[static_cast<std::size_t>(g)] = frozen;
    }
    return st;
  }
  bool is_frozen(Group g) const { return frozen[static_cast<std::size_t>(g)]; }
  bool weights_active() const { return stage != Stage::warm_up; }
};

inline double cosine_lr(long step, long total_steps, double lr0) {
  if (step < 0 || step > total_steps) throw InvalidInput("cosine_lr: step outside [0, total_steps]");
  if (total_steps == 0) return lr0;
  return 0.5 * lr0 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps)));
}

// ---------------------------------------------------------------------------
// Training

struct EpochRecord {
  int epoch = 0;
  Stage stage = Stage::warm_up;
  double lr = 0.0;  // at the first step of the epoch
  double loss = 0.0;
  double objectness_loss = 0.0;
  double classification_loss = 0.0;
  int freeze_checks = 0;
  double wall_time_s = 0.0;
};

struct TrainHooks {
  std::function<void(const EpochRecord&)> on_epoch;
  // Called after the last epoch of each stage that ran.
  std::function<void(Stage, int epoch, const Model&)> on_stage_end;
};

struct TrainResult {
  std::vector<EpochRecord> log;
  long steps = 0;
  int freeze_checks = 0;
};

inline std::string format_location(int epoch, int batch) {
  return "epoch " + std::to_string(epoch) + " batch " + std::to_string(batch);
}

// Mean loss and gradient over a batch of scenes. Scene losses are reduced in
// batch order, so the result does not depend on how scenes were scheduled.
inline LossTerms batch_loss(const Model& model, std::span<const SyntheticScene* const> scenes,
                            std::span<const SceneTargets* const> targets, std::span<Rng> rngs,
                            ModelGradients* grads, const LossOptions& opt) {
  LossTerms sum;
  if (grads) grads->reset();
  SceneForward fw;
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    forward_scene(model, *scenes[s], rngs[s], fw, grads != nullptr);
    const LossTerms t = scene_loss(model, fw, *targets[s], grads, opt);
    sum.total += t.total;
    sum.objectness += t.objectness;
    sum.classification += t.classification;
  }
  const double inv = 1.0 / static_cast<double>(scenes.size());
  sum.total *= inv;
  sum.objectness *= inv;
  sum.classification *= inv;
  if (grads) grads->scale(inv);
  return sum;
}

inline TrainResult train(Model& model, const std::vector<SyntheticScene>& scenes, const TrainConfig& cfg,
                         const TrainHooks& hooks = {}) {
  validate(cfg);
  if (scenes.empty()) throw InvalidInput("train: dataset has no scenes");
  TrainResult result;
  if (cfg.epochs == 0) return result;

  std::vector<SceneTargets> targets;
  targets.reserve(scenes.size());
  for (const auto& s : scenes) targets.push_back(make_targets(s));

  const int n = static_cast<int>(scenes.size());
  const int batches = (n + cfg.batch_size - 1) / cfg.batch_size;
  const long total_steps = static_cast<long>(batches) * cfg.epochs;
  std::array<nn::MomentumSgd, 7> sgd;
  std::array<nn::Adam, 7> adam;
  for (auto g : kAllGroups) {
    sgd[static_cast<std::size_t>(g)] = nn::MomentumSgd(model.net(g), cfg.momentum);
    adam[static_cast<std::size_t>(g)] = nn::Adam(model.net(g), cfg.momentum);
  }
  ModelGradients grads(model);
  Rng shuffle_rng = make_rng(cfg.seed, "train.shuffle");
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  const ModelConfig base = model.config;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const StageState st = StageState::of(stage_for_epoch(epoch, cfg.epochs, cfg.stage_fractions));
    model.config.disarm.weights_active = base.disarm.weights_active && st.weights_active();
    LossOptions lopt;
    lopt.objectness_term = cfg.objectness_loss_throughout || st.stage == Stage::warm_up;
    lopt.need_adapter_and_objectness = !(st.is_frozen(Group::adapter) && st.is_frozen(Group::objectness));

    std::shuffle(order.begin(), order.end(), shuffle_rng);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.stage = st.stage;
    rec.lr = cosine_lr(result.steps, total_steps, cfg.lr);
    for (int b = 0; b < batches; ++b) {
      const int lo = b * cfg.batch_size;
      const int hi = std::min(n, lo + cfg.batch_size);
      std::vector<const SyntheticScene*> bs;
      std::vector<const SceneTargets*> bt;
      std::vector<Rng> rngs;
      for (int k = lo; k < hi; ++k) {
        const int idx = order[static_cast<std::size_t>(k)];
        bs.push_back(&scenes[static_cast<std::size_t>(idx)]);
        bt.push_back(&targets[static_cast<std::size_t>(idx)]);
        rngs.push_back(make_rng(cfg.seed, "train.anchors",
                                static_cast<std::uint64_t>(epoch) * static_cast<std::uint64_t>(n) +
                                    static_cast<std::uint64_t>(idx)));
      }
      LossTerms loss;
      try {
        loss = batch_loss(model, bs, bt, rngs, &grads, lopt);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()), format_location(epoch, b));
      }
      if (!std::isfinite(loss.total)) throw NumericError("non-finite loss", format_location(epoch, b));

      const double lr = cosine_lr(result.steps, total_steps, cfg.lr);
      const bool check = cfg.verify_freeze && st.stage == Stage::freeze;
      nn::DenseNet adapter_before, objectness_before;
      if (check) {
        adapter_before = model.adapter;
        objectness_before = model.nets.objectness;
      }
      for (auto g : kAllGroups) {
        if (st.is_frozen(g)) continue;
        try {
          if (cfg.optimizer == OptimizerKind::adam)
            adam[static_cast<std::size_t>(g)].step(model.net(g), grads[g], lr, group_name(g));
          else
            sgd[static_cast<std::size_t>(g)].step(model.net(g), grads[g], lr, group_name(g));
        } catch (const NumericError& e) {
          throw NumericError("non-finite gradient", format_location(epoch, b) + ", " + e.where());
        }
      }
      if (check) {
        if (!(model.adapter == adapter_before) || !(model.nets.objectness == objectness_before))
          throw StateError("frozen parameters changed during " + format_location(epoch, b));
        ++rec.freeze_checks;
      }
      rec.loss += loss.total * static_cast<double>(hi - lo);
      rec.objectness_loss += loss.objectness * static_cast<double>(hi - lo);
      rec.classification_loss += loss.classification * static_cast<double>(hi - lo);
      ++result.steps;
    }
    rec.loss /= n;
    rec.objectness_loss /= n;
    rec.classification_loss /= n;
    rec.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.freeze_checks += rec.freeze_checks;
    result.log.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(rec);
    const bool last_of_stage =
        epoch + 1 == cfg.epochs || stage_for_epoch(epoch + 1, cfg.epochs, cfg.stage_fractions) != st.stage;
    if (last_of_stage && hooks.on_stage_end) hooks.on_stage_end(st.stage, epoch, model);
  }
  model.config.disarm.weights_active = base.disarm.weights_active;
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalResult {
  MapResult map25;
  MapResult map50;
  int ambiguous_proposals = 0;  // ambiguous proposals with a positive target
  double ambiguous_accuracy = 0.0;
  int positive_proposals = 0;
  double positive_accuracy = 0.0;
};

inline EvalResult evaluate(const Model& model, const std::vector<SyntheticScene>& scenes, std::uint64_t seed) {
  if (scenes.empty()) throw InvalidInput("no scenes");
  EvalResult r;
  std::vector<DetectionRecord> dets;
  std::vector<std::vector<Box3D>> gt;
  int amb_correct = 0, pos_correct = 0;
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    Rng rng = make_rng(seed, "eval.anchors", s);
    const auto d = detect(model, scenes[s], rng);
    for (const auto& b : d.boxes) dets.push_back({static_cast<int>(s), b, false, std::nullopt});
    gt.push_back(scenes[s].gt);
    const SceneTargets t = make_targets(scenes[s]);
    for (std::size_t i = 0; i < t.labels.size(); ++i) {
      if (t.labels[i] < 0) continue;
      const bool ok = d.predicted_labels[i] == t.labels[i];
      ++r.positive_proposals;
      pos_correct += ok;
      if (scenes[s].proposals[i].ambiguous) {
        ++r.ambiguous_proposals;
        amb_correct += ok;
      }
    }
  }
  r.map25 = evaluate_map(dets, gt, 0.25);
  r.map50 = evaluate_map(std::move(dets), gt, 0.5);
  if (r.ambiguous_proposals) r.ambiguous_accuracy = static_cast<double>(amb_correct) / r.ambiguous_proposals;
  if (r.positive_proposals) r.positive_accuracy = static_cast<double>(pos_correct) / r.positive_proposals;
  return r;
}

}  // namespace disarm
