#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <set>

#include "disarm/sampling.hpp"

using namespace disarm;

namespace {

struct Scene {
  Matrix features, centers;
  std::vector<double> objectness;
  SceneView view() const { return {features, centers, objectness}; }
};

Scene random_scene(int k, int f, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Scene s{Matrix(f, k), Matrix(3, k), std::vector<double>(static_cast<std::size_t>(k))};
  for (int i = 0; i < k; ++i) {
    for (int d = 0; d < f; ++d) s.features(d, i) = u(rng);
    s.centers.col(i) = Vec3(5 * u(rng), 5 * u(rng), u(rng));
    s.objectness[i] = u(rng);
  }
  return s;
}

bool distinct(const std::vector<int>& v) { return std::set<int>(v.begin(), v.end()).size() == v.size(); }

}  // namespace

TEST(Strategies, TagsRoundTripAndRowsAreOrdered) {
  for (auto s : kAllStrategies) EXPECT_EQ(parse_strategy(tag(s)), s);
  EXPECT_EQ(table_row(SamplingStrategy::global), 1);
  EXPECT_EQ(table_row(SamplingStrategy::objectness_fps), 11);
  EXPECT_FALSE(parse_strategy("Nearest").has_value());
  EXPECT_NE(valid_strategy_tags().find("KMeans+FFPS"), std::string::npos);
}

TEST(Strategies, GlobalSelectsEveryProposal) {
  const Scene s = random_scene(20, 4, 1);
  Rng rng(0);
  const auto r = sample_with_strategy(SamplingStrategy::global, {}, s.view(), rng);
  EXPECT_EQ(r.selection.size(), 20);
  EXPECT_EQ(r.lists(20).width(), 20);
}

TEST(Strategies, SharedStrategiesReturnMDistinctIndices) {
  const Scene s = random_scene(60, 5, 2);
  SamplingParams p;
  p.candidate_keep = 30;
  for (auto st : kAllStrategies) {
    if (st == SamplingStrategy::global || st == SamplingStrategy::local) continue;
    Rng rng(3);
    const auto r = sample_with_strategy(st, p, s.view(), rng);
    EXPECT_EQ(r.selection.size(), 15) << tag(st);
    EXPECT_TRUE(distinct(r.selection.indices)) << tag(st);
    for (int i : r.selection.indices) EXPECT_TRUE(i >= 0 && i < 60) << tag(st);
  }
}

TEST(Strategies, RandomIsDeterministicPerStream) {
  const Scene s = random_scene(40, 3, 4);
  Rng a(7), b(7), c(8);
  const auto ra = sample_with_strategy(SamplingStrategy::random, {}, s.view(), a).selection.indices;
  EXPECT_EQ(ra, sample_with_strategy(SamplingStrategy::random, {}, s.view(), b).selection.indices);
  EXPECT_NE(ra, sample_with_strategy(SamplingStrategy::random, {}, s.view(), c).selection.indices);
}

TEST(Strategies, DistanceFpsOnColinearPoints) {
  // Points on a line at 0, 1, ..., 9. Unweighted sum-of-distances FPS seeds
  // at index 0 (all weights tie), then takes 9 (sum 9), then compares
  // |x| + |x - 9| = 9 for every interior point, so the lowest index wins.
  Scene s{Matrix::Zero(2, 10), Matrix::Zero(3, 10), std::vector<double>(10, 1.0)};
  for (int i = 0; i < 10; ++i) s.centers(0, i) = i;
  SamplingParams p;
  p.anchors = 3;
  Rng rng(0);
  EXPECT_EQ(sample_with_strategy(SamplingStrategy::dfps, p, s.view(), rng).selection.indices,
            (std::vector<int>{0, 9, 1}));
  p.reduction = AnchorReduction::min;
  EXPECT_EQ(sample_with_strategy(SamplingStrategy::dfps, p, s.view(), rng).selection.indices,
            (std::vector<int>{0, 9, 4}));
}

TEST(Strategies, LocalUsesNearestNeighbours) {
  const Scene s = random_scene(30, 3, 5);
  Rng rng(0);
  const auto r = sample_with_strategy(SamplingStrategy::local, {}, s.view(), rng);
  ASSERT_EQ(r.per_proposal.size(), 30u);
  for (int i = 0; i < 30; ++i) {
    const auto& row = r.per_proposal[i];
    ASSERT_EQ(row.size(), 15u);
    EXPECT_EQ(row[0], i);  // itself at distance 0
    double worst = 0;
    for (int j : row) worst = std::max(worst, (s.centers.col(j) - s.centers.col(i)).norm());
    for (int j = 0; j < 30; ++j)
      if (std::find(row.begin(), row.end(), j) == row.end()) {
        EXPECT_GE((s.centers.col(j) - s.centers.col(i)).norm(), worst);
      }
  }
}

TEST(Strategies, LocalNeedsEnoughProposals) {
  const Scene s = random_scene(10, 3, 6);
  Rng rng(0);
  EXPECT_THROW(sample_with_strategy(SamplingStrategy::local, {}, s.view(), rng), InvalidInput);
}

TEST(Strategies, ObjectnessFpsDrawsFromTopCandidates) {
  const Scene s = random_scene(50, 4, 7);
  SamplingParams p;
  p.candidate_keep = 20;
  Rng rng(0);
  const auto sel = sample_with_strategy(SamplingStrategy::objectness_fps, p, s.view(), rng).selection.indices;
  auto top = filter_candidates(s.objectness, 20);
  for (int i : sel) EXPECT_NE(std::find(top.begin(), top.end(), i), top.end());
}

TEST(KMeans, SeparatedClustersGiveOneMedoidEach) {
  Matrix pts(2, 12);
  for (int c = 0; c < 3; ++c)
    for (int k = 0; k < 4; ++k) {
      pts(0, 4 * c + k) = 100.0 * c + 0.1 * k;
      pts(1, 4 * c + k) = 0.05 * k;
    }
  std::vector<int> pool(12);
  std::iota(pool.begin(), pool.end(), 0);
  Rng rng(9);
  auto med = kmeans_medoids(pts, pool, 3, 20, rng);
  std::set<int> clusters;
  for (int m : med) clusters.insert(m / 4);
  EXPECT_EQ(clusters.size(), 3u);
}

TEST(KMeans, MedoidsAreDistinctPoolMembers) {
  const Scene s = random_scene(40, 3, 10);
  std::vector<int> pool = {1, 3, 5, 7, 9, 11, 13, 15, 17, 19, 21, 23};
  Rng rng(1);
  const auto med = kmeans_medoids(s.features, pool, 6, 10, rng);
  EXPECT_EQ(med.size(), 6u);
  EXPECT_TRUE(distinct(med));
  for (int m : med) EXPECT_EQ(m % 2, 1);
}
