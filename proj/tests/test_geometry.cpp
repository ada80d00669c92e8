#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "disarm/geometry.hpp"

using namespace disarm;

namespace {

Box3D box(double x, double y, double z, double sx = 1, double sy = 1, double sz = 1, int label = 0,
          double score = 0.0) {
  Box3D b;
  b.center = Vec3(x, y, z);
  b.size = Vec3(sx, sy, sz);
  b.label = label;
  b.score = score;
  return b;
}

DetectionRecord det(int scene, Box3D b) { return {scene, b, false, std::nullopt}; }

// Random scenes with gt boxes and noisy detections around them plus clutter.
struct RandomEval {
  std::vector<DetectionRecord> dets;
  std::vector<std::vector<Box3D>> gt;
};

RandomEval random_eval(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  RandomEval r;
  for (int s = 0; s < 6; ++s) {
    std::vector<Box3D> g;
    for (int k = 0; k < 4; ++k) g.push_back(box(6 * u(rng), 6 * u(rng), 0.5, 0.5 + u(rng), 0.5 + u(rng), 1.0, k % 3));
    for (const auto& b : g)
      for (int d = 0; d < 2; ++d) {
        Box3D x = b;
        x.center += Vec3(0.4 * (u(rng) - 0.5), 0.4 * (u(rng) - 0.5), 0.2 * (u(rng) - 0.5));
        x.score = u(rng);
        if (u(rng) < 0.2) x.label = (x.label + 1) % 3;
        r.dets.push_back(det(s, x));
      }
    for (int c = 0; c < 3; ++c) r.dets.push_back(det(s, box(6 * u(rng), 6 * u(rng), 0.5, 1, 1, 1, c, u(rng))));
    r.gt.push_back(g);
  }
  return r;
}

}  // namespace

TEST(Iou, IdenticalBoxes) { EXPECT_EQ(iou3d(box(1, 2, 3, 2, 1, 0.5), box(1, 2, 3, 2, 1, 0.5)), 1.0); }

TEST(Iou, DisjointBoxes) {
  EXPECT_EQ(iou3d(box(0, 0, 0), box(3, 0, 0)), 0.0);
  EXPECT_EQ(iou3d(box(0, 0, 0), box(1, 0, 0)), 0.0);  // touching faces
}

TEST(Iou, HalfShiftedUnitCubeIsOneThird) {
  // Intersection 0.5, union 1.5.
  EXPECT_NEAR(iou3d(box(0, 0, 0), box(0.5, 0, 0)), 1.0 / 3.0, 1e-12);
}

TEST(Iou, Symmetric) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.1, 2.0);
  for (int i = 0; i < 200; ++i) {
    const Box3D a = box(u(rng), u(rng), u(rng), u(rng), u(rng), u(rng));
    const Box3D b = box(u(rng), u(rng), u(rng), u(rng), u(rng), u(rng));
    EXPECT_EQ(iou3d(a, b), iou3d(b, a));
  }
}

TEST(Iou, TranslationInvariant) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.1, 2.0);
  for (int i = 0; i < 200; ++i) {
    Box3D a = box(u(rng), u(rng), u(rng), u(rng), u(rng), u(rng));
    Box3D b = box(u(rng), u(rng), u(rng), u(rng), u(rng), u(rng));
    const double before = iou3d(a, b);
    const Vec3 t(10 * u(rng), -7 * u(rng), 3 * u(rng));
    a.center += t;
    b.center += t;
    EXPECT_NEAR(iou3d(a, b), before, 1e-12);
  }
}

TEST(ObjectnessTargets, StrictThreshold) {
  const std::vector<Box3D> gt = {box(0, 0, 0)};
  const std::vector<Box3D> props = {
      box(0, 0, 0),                  // IoU 1
      box(5, 5, 5),                  // disjoint
      box(0.25, 0.25, 0, 0.5, 0.5),  // inside, IoU exactly 0.25
      box(0.2, 0, 0),                // IoU 0.8 / 1.2
  };
  ASSERT_EQ(iou3d(props[2], gt[0]), 0.25);
  EXPECT_EQ(assign_objectness_targets(props, gt), (std::vector<int>{1, 0, 0, 1}));
}

TEST(ObjectnessTargets, EmptyGroundTruthIsBackground) {
  const std::vector<Box3D> props = {box(0, 0, 0), box(1, 1, 1)};
  EXPECT_EQ(assign_objectness_targets(props, {}), (std::vector<int>{0, 0}));
  EXPECT_THROW(assign_objectness_targets({}, props), InvalidInput);
}

TEST(Nms, SuppressesOverlapsWithinClassOnly) {
  const std::vector<Box3D> b = {box(0, 0, 0, 1, 1, 1, 0, 0.9), box(0.1, 0, 0, 1, 1, 1, 0, 0.8),
                                box(0.1, 0, 0, 1, 1, 1, 1, 0.7), box(3, 0, 0, 1, 1, 1, 0, 0.95)};
  EXPECT_EQ(nms3d(b, 0.25), (std::vector<int>{3, 0, 2}));
}

TEST(Map, SingleMatchingDetection) {
  const std::vector<std::vector<Box3D>> gt = {{box(0, 0, 0)}};
  const auto r = evaluate_map({det(0, box(0, 0, 0, 1, 1, 1, 0, 0.7))}, gt, 0.5);
  EXPECT_EQ(r.mAP, 1.0);
  EXPECT_TRUE(r.records[0].matched);
  EXPECT_EQ(r.records[0].matched_gt, 0);
}

TEST(Map, SingleDisjointDetection) {
  const std::vector<std::vector<Box3D>> gt = {{box(0, 0, 0)}};
  EXPECT_EQ(evaluate_map({det(0, box(4, 0, 0, 1, 1, 1, 0, 0.7))}, gt, 0.25).mAP, 0.0);
}

TEST(Map, HandEvaluatedPrecisionRecallCurves) {
  const std::vector<std::vector<Box3D>> gt = {{box(0, 0, 0)}};
  const Box3D hit = box(0, 0, 0, 1, 1, 1, 0);
  const Box3D miss = box(5, 0, 0, 1, 1, 1, 0);
  // Hit ranked first: (r, p) = (1, 1), (1, 0.5) -> AP 1.
  Box3D a = hit, b = miss;
  a.score = 0.9;
  b.score = 0.4;
  EXPECT_EQ(evaluate_map({det(0, a), det(0, b)}, gt, 0.25).per_class_ap.at(0), 1.0);
  // Miss ranked first: (0, 0), (1, 0.5) -> AP 0.5.
  a.score = 0.4;
  b.score = 0.9;
  EXPECT_EQ(evaluate_map({det(0, a), det(0, b)}, gt, 0.25).per_class_ap.at(0), 0.5);
}

TEST(Map, GroundTruthMatchedAtMostOnce) {
  const std::vector<std::vector<Box3D>> gt = {{box(0, 0, 0)}};
  const auto r = evaluate_map({det(0, box(0, 0, 0, 1, 1, 1, 0, 0.9)), det(0, box(0, 0, 0, 1, 1, 1, 0, 0.8))}, gt, 0.5);
  EXPECT_TRUE(r.records[0].matched);
  EXPECT_FALSE(r.records[1].matched);
}

TEST(Map, DetectionMatchesOnlyItsOwnScene) {
  const std::vector<std::vector<Box3D>> gt = {{box(0, 0, 0)}, {}};
  EXPECT_EQ(evaluate_map({det(1, box(0, 0, 0, 1, 1, 1, 0, 0.9))}, gt, 0.25).mAP, 0.0);
  EXPECT_THROW(evaluate_map({det(2, box(0, 0, 0, 1, 1, 1, 0, 0.9))}, gt, 0.25), InvalidInput);
}

TEST(Map, ClassWithoutGroundTruthExcluded) {
  const std::vector<std::vector<Box3D>> gt = {{box(0, 0, 0, 1, 1, 1, 0)}};
  const auto r =
      evaluate_map({det(0, box(0, 0, 0, 1, 1, 1, 0, 0.9)), det(0, box(3, 0, 0, 1, 1, 1, 4, 0.9))}, gt, 0.25);
  EXPECT_EQ(r.mAP, 1.0);
  EXPECT_EQ(r.per_class_ap.size(), 1u);
  EXPECT_EQ(r.excluded_classes, std::vector<int>{4});
  EXPECT_NE(format_map_table(r, {"chair"}).find("class4 has detections but no ground truth"), std::string::npos);
}

TEST(Map, MissingScoreRejected) {
  const std::vector<std::vector<Box3D>> gt = {{box(0, 0, 0)}};
  EXPECT_THROW(evaluate_map({det(0, box(0, 0, 0, 1, 1, 1, 0, std::nan("")))}, gt, 0.25), InvalidInput);
}

TEST(Map, OracleDetectionsScorePerfectly) {
  const RandomEval r = random_eval(3);
  std::vector<DetectionRecord> oracle;
  for (std::size_t s = 0; s < r.gt.size(); ++s)
    for (Box3D b : r.gt[s]) {
      b.score = 1.0;
      oracle.push_back(det(static_cast<int>(s), b));
    }
  EXPECT_EQ(evaluate_map(oracle, r.gt, 0.25).mAP, 1.0);
  EXPECT_EQ(evaluate_map(oracle, r.gt, 0.5).mAP, 1.0);
}

TEST(Map, InvariantUnderMonotoneScoreTransform) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    RandomEval r = random_eval(seed);
    const double before = evaluate_map(r.dets, r.gt, 0.25).mAP;
    for (auto& d : r.dets) d.box.score = std::exp(3.0 * d.box.score) - 7.0;
    EXPECT_EQ(evaluate_map(r.dets, r.gt, 0.25).mAP, before);
  }
}

TEST(Map, StricterThresholdNeverScoresHigher) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const RandomEval r = random_eval(seed);
    EXPECT_LE(evaluate_map(r.dets, r.gt, 0.5).mAP, evaluate_map(r.dets, r.gt, 0.25).mAP) << "seed " << seed;
  }
}

TEST(Map, KeyValueLines) {
  const std::vector<std::vector<Box3D>> gt = {{box(0, 0, 0, 1, 1, 1, 0), box(4, 0, 0, 1, 1, 1, 1)}};
  const auto r = evaluate_map({det(0, box(0, 0, 0, 1, 1, 1, 0, 0.9))}, gt, 0.5);
  EXPECT_EQ(format_map_kv(r, {"chair", "table"}), "ap.chair@0.50=1\nap.table@0.50=0\nmAP@0.50=0.5\n");
  EXPECT_EQ(threshold_tag(0.25), "0.25");
}

TEST(AveragePrecision, AllPointInterpolation) {
  // Precision envelope: 1 up to recall 0.5, then 2/3 up to recall 1.
  const std::vector<double> rec = {0.5, 0.5, 1.0};
  const std::vector<double> pre = {1.0, 0.5, 2.0 / 3.0};
  EXPECT_NEAR(average_precision(rec, pre), 0.5 + 0.5 * 2.0 / 3.0, 1e-15);
}
