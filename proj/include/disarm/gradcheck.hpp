#pragma once

// Finite-difference verification of every relation-module network on its
// own, and of the end-to-end detection loss with the anchor selection held
// fixed.

#include <random>
#include <string>
#include <vector>

#include "disarm/model.hpp"
#include "disarm/nn.hpp"
#include "disarm/relation.hpp"
#include "disarm/rng.hpp"

namespace disarm {

struct GradCheckSuiteOptions {
  int trials = 20;
  double eps = 1e-5;
  double net_tolerance = 1e-5;
  double composite_tolerance = 1e-4;
  int samples = 4;                    // input columns per net check
  std::size_t max_coordinates = 400;  // per net and per composite trial; 0 = all
  int scene_proposals = 12;
  int scene_anchors = 4;
  std::uint64_t seed = 0;
};

struct NetCheckResult {
  std::string name;
  nn::GradCheckReport report;
  bool passed = false;
};

struct GradCheckSuiteResult {
  std::vector<NetCheckResult> nets;  // one per network, merged over trials
  NetCheckResult composite;
  int trials = 0;
  bool passed() const {
    if (!composite.passed) return false;
    for (const auto& n : nets)
      if (!n.passed) return false;
    return true;
  }
};

// Random scene with a few ground-truth boxes, each covered by a proposal so
// both loss terms are active.
inline SyntheticScene random_check_scene(Rng& rng, int proposals, int feature_dim, int classes) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  SyntheticScene s;
  const int objects = std::max(1, proposals / 4);
  for (int g = 0; g < objects; ++g) {
    Box3D b;
    b.center = Vec3(4.0 * unit(rng), 4.0 * unit(rng), 0.5);
    b.size = Vec3(0.5 + unit(rng), 0.5 + unit(rng), 1.0);
    b.label = static_cast<int>(unit(rng) * classes) % classes;
    s.gt.push_back(b);
  }
  for (int i = 0; i < proposals; ++i) {
    SceneProposal p;
    if (i < objects) {
      p.center = s.gt[static_cast<std::size_t>(i)].center;
      p.size = s.gt[static_cast<std::size_t>(i)].size;
      p.source = i;
    } else {
      p.center = Vec3(4.0 * unit(rng), 4.0 * unit(rng), unit(rng));
      p.size = Vec3(0.3 + unit(rng), 0.3 + unit(rng), 0.3 + unit(rng));
    }
    p.feature.resize(feature_dim);
    for (int k = 0; k < feature_dim; ++k) p.feature(k) = normal(rng);
    s.proposals.push_back(std::move(p));
  }
  return s;
}

// End-to-end loss with anchors fixed from an initial forward pass.
inline nn::GradCheckReport composite_grad_check(const Model& model, const SyntheticScene& scene,
                                                const nn::GradCheckOptions& opts) {
  Model work = model;
  const SceneTargets targets = make_targets(scene);
  Rng rng = make_rng(opts.seed, "composite.anchors");
  SceneForward fw;
  forward_scene(work, scene, rng, fw, true);
  const StrategyResult anchors = fw.anchors;
  ModelGradients grads(work);
  scene_loss(work, fw, targets, &grads);

  std::vector<nn::ParameterBlock> blocks;
  for (auto g : kAllGroups) {
    auto b = nn::parameter_blocks(work.net(g), grads[g], group_name(g));
    blocks.insert(blocks.end(), b.begin(), b.end());
  }
  auto objective = [&] {
    SceneForward f;
    Rng unused(0);
    forward_scene(work, scene, unused, f, false, &anchors);
    return scene_loss(work, f, targets, nullptr).total;
  };
  return nn::finite_difference_check(blocks, objective, opts);
}

inline GradCheckSuiteResult run_grad_check_suite(const GradCheckSuiteOptions& o) {
  GradCheckSuiteResult r;
  r.trials = o.trials;
  const char* names[] = {"objectness", "tau", "sigma", "phi", "varphi"};
  for (const char* n : names) r.nets.push_back({n, {}, true});
  r.composite = {"composite", {}, true};
  const int F = 128;
  for (int t = 0; t < o.trials; ++t) {
    nn::GradCheckOptions opts;
    opts.eps = o.eps;
    opts.max_coordinates = o.max_coordinates;
    opts.seed = derive_seed(o.seed, "grad_check.trial", static_cast<std::uint64_t>(t));
    Rng rng = make_rng(o.seed, "grad_check.nets", static_cast<std::uint64_t>(t));
    const DisarmNets nets = DisarmNets::create(F, rng);
    const nn::DenseNet* list[] = {&nets.objectness, &nets.tau, &nets.sigma, &nets.phi, &nets.varphi};
    for (std::size_t k = 0; k < 5; ++k)
      nn::merge(r.nets[k].report, nn::grad_check(*list[k], nn::squared_norm_loss(), o.samples, opts));

    ModelConfig mc;
    mc.disarm.anchors = o.scene_anchors;
    mc.disarm.candidate_keep = o.scene_proposals;
    const std::vector<ClassInfo> classes = {{"a", Vec3(1, 1, 1)}, {"b", Vec3(1, 1, 1)}, {"c", Vec3(1, 1, 1)}};
    const Model model = Model::create(mc, classes, opts.seed);
    Rng srng = make_rng(o.seed, "grad_check.scene", static_cast<std::uint64_t>(t));
    const SyntheticScene scene = random_check_scene(srng, o.scene_proposals, F, 3);
    nn::merge(r.composite.report, composite_grad_check(model, scene, opts));
  }
  for (auto& n : r.nets) n.passed = n.report.max_relative_error < o.net_tolerance;
  r.composite.passed = r.composite.report.max_relative_error < o.composite_tolerance;
  return r;
}

}  // namespace disarm
