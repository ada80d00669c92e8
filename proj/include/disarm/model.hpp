#pragma once

// Per-scene detector wrapped around the relation module: a learnable
// feature adapter playing the role of f(.), the relation nets, and a small
// class head over the skip-connected [f_i; r_i] feature. Localization uses
// proposal centers with class-default sizes.

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "disarm/errors.hpp"
#include "disarm/geometry.hpp"
#include "disarm/nn.hpp"
#include "disarm/relation.hpp"
#include "disarm/rng.hpp"
#include "disarm/sampling.hpp"
#include "disarm/scenes.hpp"

namespace disarm {

struct ModelConfig {
  DisarmConfig disarm;
  SamplingStrategy strategy = SamplingStrategy::objectness_fps;
  int local_neighbors = 15;
  int intermediate_pool = 0;
  bool use_context = true;  // false: class head sees [f_i; 0]
  bool use_adapter = true;
  ObjectnessLossKind objectness_loss = ObjectnessLossKind::l2;
  int class_hidden = 64;
  double nms_iou = 0.25;

  SamplingParams sampling() const {
    SamplingParams p;
    p.anchors = disarm.anchors;
    p.candidate_keep = disarm.candidate_keep;
    p.local_neighbors = local_neighbors;
    p.intermediate_pool = intermediate_pool;
    p.reduction = disarm.reduction;
    return p;
  }
};

// Parameter groups, in the fixed order used for updates and reductions.
enum class Group { adapter, objectness, tau, sigma, phi, varphi, class_head };
inline constexpr std::array<Group, 7> kAllGroups = {Group::adapter, Group::objectness, Group::tau, Group::sigma,
                                                    Group::phi,     Group::varphi,     Group::class_head};

inline std::string_view group_name(Group g) {
  switch (g) {
    case Group::adapter: return "adapter";
    case Group::objectness: return "objectness";
    case Group::tau: return "tau";
    case Group::sigma: return "sigma";
    case Group::phi: return "phi";
    case Group::varphi: return "varphi";
    case Group::class_head: return "class_head";
  }
  return "?";
}

struct Model {
  ModelConfig config;
  nn::DenseNet adapter;  // F -> F, linear
  DisarmNets nets;
  nn::DenseNet class_head;  // (F + 128) -> hidden -> C
  std::vector<ClassInfo> classes;

  static Model create(const ModelConfig& cfg, std::vector<ClassInfo> classes, std::uint64_t seed) {
    if (classes.empty()) throw InvalidInput("model: empty class catalog");
    const int F = cfg.disarm.feature_dim;
    Model m;
    m.config = cfg;
    m.classes = std::move(classes);
    Rng rng = make_rng(seed, "model.init");
    m.adapter = nn::DenseNet::mlp(F, {F}, nn::Activation::identity, nn::Activation::identity);
    m.adapter.init_uniform(rng);
    m.nets = DisarmNets::create(F, rng);
    m.class_head = nn::DenseNet::mlp(F + kRelationDim, {cfg.class_hidden, static_cast<int>(m.classes.size())},
                                     nn::Activation::relu, nn::Activation::identity);
    m.class_head.init_uniform(rng);
    return m;
  }

  int feature_dim() const { return config.disarm.feature_dim; }
  int num_classes() const { return static_cast<int>(classes.size()); }

  nn::DenseNet& net(Group g) {
    switch (g) {
      case Group::adapter: return adapter;
      case Group::objectness: return nets.objectness;
      case Group::tau: return nets.tau;
      case Group::sigma: return nets.sigma;
      case Group::phi: return nets.phi;
      case Group::varphi: return nets.varphi;
      case Group::class_head: return class_head;
    }
    return adapter;
  }
  const nn::DenseNet& net(Group g) const { return const_cast<Model*>(this)->net(g); }
};

struct ModelGradients {
  std::array<nn::GradientTape, 7> tapes;

  explicit ModelGradients(const Model& m) {
    for (auto g : kAllGroups) tapes[static_cast<std::size_t>(g)] = nn::GradientTape(m.net(g));
  }
  nn::GradientTape& operator[](Group g) { return tapes[static_cast<std::size_t>(g)]; }
  const nn::GradientTape& operator[](Group g) const { return tapes[static_cast<std::size_t>(g)]; }

  void reset() {
    for (auto& t : tapes) t.reset();
  }
  void accumulate(const ModelGradients& o) {
    for (std::size_t i = 0; i < tapes.size(); ++i) tapes[i].accumulate(o.tapes[i]);
  }
  void scale(double s) {
    for (auto& t : tapes) t.scale(s);
  }
};

// Per-proposal supervision derived from the ground truth.
struct SceneTargets {
  std::vector<int> objectness;  // 1 when IoU with some gt box > 0.25
  std::vector<int> labels;      // class of the best-overlapping gt for positives, else -1
};

inline SceneTargets make_targets(const SyntheticScene& scene) {
  SceneTargets t;
  const auto boxes = scene.proposal_boxes();
  t.objectness = assign_objectness_targets(boxes, scene.gt);
  t.labels.assign(boxes.size(), -1);
  for (std::size_t i = 0; i < boxes.size(); ++i)
    if (t.objectness[i]) t.labels[i] = scene.gt[static_cast<std::size_t>(best_gt_match(boxes[i], scene.gt))].label;
  return t;
}

struct LossTerms {
  double total = 0.0;
  double objectness = 0.0;
  double classification = 0.0;
};

// Mean softmax cross-entropy over positive proposals. Writes dL/dlogits.
inline double classification_loss(const Matrix& logits, std::span<const int> labels, Matrix* grad) {
  const Eigen::Index C = logits.rows();
  int positives = 0;
  for (int l : labels) positives += l >= 0;
  if (grad) *grad = Matrix::Zero(C, logits.cols());
  if (positives == 0) return 0.0;
  double loss = 0.0;
  for (Eigen::Index i = 0; i < logits.cols(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0) continue;
    const double mx = logits.col(i).maxCoeff();
    const Vector e = (logits.col(i).array() - mx).exp().matrix();
    const double s = e.sum();
    loss += -(logits(y, i) - mx - std::log(s));
    if (grad) {
      grad->col(i) = e / s;
      (*grad)(y, i) -= 1.0;
      grad->col(i) /= positives;
    }
  }
  return loss / positives;
}

// Everything one scene's forward pass produces; keeps the caches the
// backward pass needs.
struct SceneForward {
  Matrix raw;      // F x K, features as stored in the scene
  Matrix features; // F x K, after the adapter
  Matrix centers;  // 3 x K
  std::vector<double> objectness;
  StrategyResult anchors;
  RelationPass relation;
  Matrix fused;   // (F + 128) x K
  Matrix logits;  // C x K
  RelationPass::Tapes relation_tapes;
  nn::GradientTape adapter_tape, objectness_tape, head_tape;
};

inline Matrix scene_features(const SyntheticScene& scene, int F) {
  Matrix f(F, static_cast<Eigen::Index>(scene.proposals.size()));
  for (std::size_t i = 0; i < scene.proposals.size(); ++i) {
    if (scene.proposals[i].feature.size() != F)
      throw InvalidInput("scene proposal " + std::to_string(i) + ": feature length " +
                         std::to_string(scene.proposals[i].feature.size()) + ", model expects " + std::to_string(F));
    f.col(static_cast<Eigen::Index>(i)) = scene.proposals[i].feature;
  }
  return f;
}

inline Matrix scene_centers(const SyntheticScene& scene) {
  Matrix c(3, static_cast<Eigen::Index>(scene.proposals.size()));
  for (std::size_t i = 0; i < scene.proposals.size(); ++i) c.col(static_cast<Eigen::Index>(i)) = scene.proposals[i].center;
  return c;
}

// Anchors may be supplied (held fixed, e.g. for gradient checks); otherwise
// they are sampled with the configured strategy using `rng`.
inline void forward_scene(const Model& model, const SyntheticScene& scene, Rng& rng, SceneForward& fw,
                          bool record, const StrategyResult* fixed_anchors = nullptr) {
  const int F = model.feature_dim();
  const int K = static_cast<int>(scene.proposals.size());
  if (K == 0) throw InvalidInput("scene has no proposals");
  fw.raw = scene_features(scene, F);
  fw.centers = scene_centers(scene);
  fw.features = model.config.use_adapter ? nn::forward_batch(model.adapter, fw.raw, record ? &fw.adapter_tape : nullptr)
                                         : fw.raw;
  const Matrix o = nn::forward_batch(model.nets.objectness, fw.features, record ? &fw.objectness_tape : nullptr);
  fw.objectness.assign(o.data(), o.data() + o.size());
  if (!fw.features.allFinite() || !o.allFinite())
    throw NumericError("non-finite proposal features or objectness", "forward pass");

  if (model.config.use_context) {
    if (K < model.config.disarm.anchors &&
        model.config.strategy != SamplingStrategy::global && model.config.strategy != SamplingStrategy::local)
      throw InvalidInput("scene has " + std::to_string(K) + " proposals, need at least " +
                         std::to_string(model.config.disarm.anchors));
    if (fixed_anchors) {
      fw.anchors = *fixed_anchors;
    } else {
      fw.anchors = sample_with_strategy(model.config.strategy, model.config.sampling(),
                                        SceneView{fw.features, fw.centers, fw.objectness}, rng);
    }
    fw.fused = fw.relation.forward(model.nets, model.config.disarm, fw.features, fw.centers, fw.anchors.lists(K),
                                   record ? &fw.relation_tapes : nullptr);
  } else {
    fw.fused = Matrix::Zero(F + kRelationDim, K);
    fw.fused.topRows(F) = fw.features;
  }
  fw.logits = nn::forward_batch(model.class_head, fw.fused, record ? &fw.head_tape : nullptr);
}

struct LossOptions {
  bool objectness_term = true;
  // Skip backpropagation into groups that will not be updated.
  bool need_adapter_and_objectness = true;
  bool need_relation = true;
};

// Loss of a forward pass; when `grads` is given, accumulates parameter
// gradients into it.
inline LossTerms scene_loss(const Model& model, SceneForward& fw, const SceneTargets& targets,
                            ModelGradients* grads, const LossOptions& opt = {}) {
  LossTerms terms;
  Matrix dlogits;
  terms.classification = classification_loss(fw.logits, targets.labels, grads ? &dlogits : nullptr);
  const auto obj = objectness_loss(fw.objectness, targets.objectness, model.config.objectness_loss);
  terms.objectness = opt.objectness_term ? obj.value : 0.0;
  terms.total = terms.objectness + terms.classification;
  if (!grads) return terms;

  const int F = model.feature_dim();
  const Matrix dfused = nn::backward(model.class_head, fw.head_tape, dlogits);
  (*grads)[Group::class_head].accumulate(fw.head_tape);
  fw.head_tape.reset();

  Matrix dF;
  if (model.config.use_context && opt.need_relation) {
    dF = fw.relation.backward(model.nets, dfused, fw.relation_tapes);
    (*grads)[Group::tau].accumulate(fw.relation_tapes.tau);
    (*grads)[Group::sigma].accumulate(fw.relation_tapes.sigma);
    (*grads)[Group::phi].accumulate(fw.relation_tapes.phi);
    (*grads)[Group::varphi].accumulate(fw.relation_tapes.varphi);
    fw.relation_tapes.tau.reset();
    fw.relation_tapes.sigma.reset();
    fw.relation_tapes.phi.reset();
    fw.relation_tapes.varphi.reset();
  } else {
    dF = dfused.topRows(F);
  }
  if (!opt.need_adapter_and_objectness) return terms;
  if (opt.objectness_term) {
    Matrix dobj(1, static_cast<Eigen::Index>(obj.grad.size()));
    for (std::size_t i = 0; i < obj.grad.size(); ++i) dobj(0, static_cast<Eigen::Index>(i)) = obj.grad[i];
    dF += nn::backward(model.nets.objectness, fw.objectness_tape, dobj);
    (*grads)[Group::objectness].accumulate(fw.objectness_tape);
    fw.objectness_tape.reset();
  }
  if (model.config.use_adapter) {
    nn::backward(model.adapter, fw.adapter_tape, dF);
    (*grads)[Group::adapter].accumulate(fw.adapter_tape);
    fw.adapter_tape.reset();
  }
  return terms;
}

// ---------------------------------------------------------------------------
// Inference

struct SceneDetections {
  std::vector<Box3D> boxes;           // after NMS
  std::vector<int> predicted_labels;  // per proposal, before NMS
  std::vector<double> objectness;
  StrategyResult anchors;
};

inline SceneDetections detect(const Model& model, const SyntheticScene& scene, Rng& rng) {
  SceneForward fw;
  forward_scene(model, scene, rng, fw, false);
  SceneDetections out;
  const int K = static_cast<int>(scene.proposals.size());
  std::vector<Box3D> all;
  all.reserve(static_cast<std::size_t>(K));
  for (int i = 0; i < K; ++i) {
    Eigen::Index label = 0;
    const double mx = fw.logits.col(i).maxCoeff(&label);
    const double p = 1.0 / (fw.logits.col(i).array() - mx).exp().sum();
    Box3D b;
    b.center = scene.proposals[static_cast<std::size_t>(i)].center;
    b.size = model.classes[static_cast<std::size_t>(label)].size;
    b.label = static_cast<int>(label);
    b.score = fw.objectness[static_cast<std::size_t>(i)] * p;
    out.predicted_labels.push_back(static_cast<int>(label));
    all.push_back(b);
  }
  for (int k : nms3d(all, model.config.nms_iou)) out.boxes.push_back(all[static_cast<std::size_t>(k)]);
  out.objectness = fw.objectness;
  out.anchors = std::move(fw.anchors);
  return out;
}

}  // namespace disarm
