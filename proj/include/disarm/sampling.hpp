#pragma once

// Relation-anchor selection strategies compared in the ablation matrix.

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "disarm/errors.hpp"
#include "disarm/relation.hpp"
#include "disarm/rng.hpp"

namespace disarm {

enum class SamplingStrategy {
  global,
  local,
  random,
  dfps,
  ffps,
  dfps_then_ffps,
  ffps_then_dfps,
  kmeans,
  kmeans_dfps,
  kmeans_ffps,
  objectness_fps,
};

inline constexpr std::array<SamplingStrategy, 11> kAllStrategies = {
    SamplingStrategy::global,         SamplingStrategy::local,          SamplingStrategy::random,
    SamplingStrategy::dfps,           SamplingStrategy::ffps,           SamplingStrategy::dfps_then_ffps,
    SamplingStrategy::ffps_then_dfps, SamplingStrategy::kmeans,         SamplingStrategy::kmeans_dfps,
    SamplingStrategy::kmeans_ffps,    SamplingStrategy::objectness_fps,
};

inline std::string_view tag(SamplingStrategy s) {
  switch (s) {
    case SamplingStrategy::global: return "Global";
    case SamplingStrategy::local: return "Local";
    case SamplingStrategy::random: return "Random";
    case SamplingStrategy::dfps: return "DFPS";
    case SamplingStrategy::ffps: return "FFPS";
    case SamplingStrategy::dfps_then_ffps: return "DFPS+FFPS";
    case SamplingStrategy::ffps_then_dfps: return "FFPS+DFPS";
    case SamplingStrategy::kmeans: return "KMeans";
    case SamplingStrategy::kmeans_dfps: return "KMeans+DFPS";
    case SamplingStrategy::kmeans_ffps: return "KMeans+FFPS";
    case SamplingStrategy::objectness_fps: return "ObjectnessFPS";
  }
  return "?";
}

// Row number (1-based) of the anchor-sampling ablation table.
inline int table_row(SamplingStrategy s) { return static_cast<int>(s) + 1; }

inline std::optional<SamplingStrategy> parse_strategy(std::string_view text) {
  for (auto s : kAllStrategies)
    if (tag(s) == text) return s;
  if (text == "DFPS_then_FFPS") return SamplingStrategy::dfps_then_ffps;
  if (text == "FFPS_then_DFPS") return SamplingStrategy::ffps_then_dfps;
  if (text == "KMeans_DFPS") return SamplingStrategy::kmeans_dfps;
  if (text == "KMeans_FFPS") return SamplingStrategy::kmeans_ffps;
  return std::nullopt;
}

inline std::string valid_strategy_tags() {
  std::string out;
  for (auto s : kAllStrategies) {
    if (!out.empty()) out += ", ";
    out += tag(s);
  }
  return out;
}

struct SamplingParams {
  int anchors = 15;
  int candidate_keep = 128;
  int local_neighbors = 15;
  int intermediate_pool = 0;  // chained / k-means+FPS pool size; 0 means 2 * anchors
  int kmeans_iterations = 20;
  AnchorReduction reduction = AnchorReduction::sum;

  int pool_size() const { return intermediate_pool > 0 ? intermediate_pool : 2 * anchors; }
};

struct SceneView {
  const Matrix& features;  // F x K
  const Matrix& centers;   // 3 x K
  std::span<const double> objectness;
};

struct StrategyResult {
  AnchorSelection selection;                  // shared anchors (empty for Local)
  std::vector<std::vector<int>> per_proposal;  // Local only

  AnchorLists lists(int proposals) const {
    if (!per_proposal.empty()) return {per_proposal};
    return AnchorLists::shared(selection, proposals);
  }
};

// Lloyd's k-means with k-means++ seeding over the columns listed in `pool`;
// returns the medoid (member nearest its centroid) of every cluster, in
// cluster order. Empty clusters fall back to the nearest unused point.
inline std::vector<int> kmeans_medoids(const Matrix& points, std::span<const int> pool, int k, int iterations,
                                       Rng& rng) {
  const int n = static_cast<int>(pool.size());
  if (k > n || k <= 0) throw InvalidInput("kmeans: k=" + std::to_string(k) + " with " + std::to_string(n) + " points");
  const Eigen::Index dim = points.rows();
  auto sq = [&](int a, const Vector& c) { return (points.col(pool[a]) - c).squaredNorm(); };

  std::vector<Vector> centroids;
  std::uniform_int_distribution<int> first(0, n - 1);
  centroids.push_back(points.col(pool[first(rng)]));
  std::vector<double> d2(static_cast<std::size_t>(n));
  while (static_cast<int>(centroids.size()) < k) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      double best = INFINITY;
      for (const auto& c : centroids) best = std::min(best, sq(i, c));
      d2[i] = best;
      total += best;
    }
    int pick = 0;
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double r = u(rng);
      for (pick = 0; pick < n - 1; ++pick) {
        r -= d2[pick];
        if (r <= 0.0) break;
      }
    } else {
      pick = static_cast<int>(centroids.size());
    }
    centroids.push_back(points.col(pool[pick]));
  }

  std::vector<int> assign(static_cast<std::size_t>(n), 0);
  for (int it = 0; it < iterations; ++it) {
    for (int i = 0; i < n; ++i) {
      int best = 0;
      double bd = INFINITY;
      for (int c = 0; c < k; ++c) {
        const double v = sq(i, centroids[c]);
        if (v < bd) {
          bd = v;
          best = c;
        }
      }
      assign[i] = best;
    }
    std::vector<Vector> sum(static_cast<std::size_t>(k), Vector::Zero(dim));
    std::vector<int> cnt(static_cast<std::size_t>(k), 0);
    for (int i = 0; i < n; ++i) {
      sum[assign[i]] += points.col(pool[i]);
      ++cnt[assign[i]];
    }
    for (int c = 0; c < k; ++c)
      if (cnt[c] > 0) centroids[c] = sum[c] / cnt[c];
  }

  std::vector<int> medoids;
  std::vector<char> used(static_cast<std::size_t>(n), 0);
  for (int c = 0; c < k; ++c) {
    int best = -1;
    double bd = INFINITY;
    for (int i = 0; i < n; ++i)
      if (assign[i] == c && !used[i] && sq(i, centroids[c]) < bd) {
        bd = sq(i, centroids[c]);
        best = i;
      }
    if (best < 0)
      for (int i = 0; i < n; ++i)
        if (!used[i] && sq(i, centroids[c]) < bd) {
          bd = sq(i, centroids[c]);
          best = i;
        }
    if (best < 0) throw NumericError("no medoid candidate has a finite distance", "k-means (non-finite input)");
    used[best] = 1;
    medoids.push_back(pool[best]);
  }
  return medoids;
}

inline StrategyResult sample_with_strategy(SamplingStrategy strategy, const SamplingParams& params,
                                           const SceneView& scene, Rng& rng) {
  const int K = static_cast<int>(scene.features.cols());
  const int M = params.anchors;
  StrategyResult out;
  std::vector<int> all(static_cast<std::size_t>(K));
  std::iota(all.begin(), all.end(), 0);
  const std::vector<double> uniform(static_cast<std::size_t>(K), 1.0);
  auto fps = [&](const Matrix& space, std::span<const int> pool, int m) {
    return weighted_fps(space, uniform, pool, m, params.reduction);
  };
  const int pool = std::min(params.pool_size(), K);

  switch (strategy) {
    case SamplingStrategy::global:
      out.selection.indices = all;
      break;
    case SamplingStrategy::local: {
      const int n = params.local_neighbors;
      if (K < n)
        throw InvalidInput("Local sampling needs at least " + std::to_string(n) + " proposals, got " +
                           std::to_string(K));
      out.per_proposal.resize(static_cast<std::size_t>(K));
      std::vector<double> d(static_cast<std::size_t>(K));
      for (int i = 0; i < K; ++i) {
        for (int j = 0; j < K; ++j)
          d[j] = euclidean(scene.centers.col(i).data(), scene.centers.col(j).data(), 3);
        std::vector<int> order = all;
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return d[a] < d[b]; });
        order.resize(static_cast<std::size_t>(n));
        out.per_proposal[i] = std::move(order);
      }
      break;
    }
    case SamplingStrategy::random: {
      if (M > K) throw InvalidInput("Random sampling: M exceeds proposal count");
      std::vector<int> perm = all;
      std::shuffle(perm.begin(), perm.end(), rng);
      perm.resize(static_cast<std::size_t>(M));
      out.selection.indices = std::move(perm);
      break;
    }
    case SamplingStrategy::dfps:
      out.selection.indices = fps(scene.centers, all, M);
      break;
    case SamplingStrategy::ffps:
      out.selection.indices = fps(scene.features, all, M);
      break;
    case SamplingStrategy::dfps_then_ffps:
      out.selection.indices = fps(scene.features, fps(scene.centers, all, pool), M);
      break;
    case SamplingStrategy::ffps_then_dfps:
      out.selection.indices = fps(scene.centers, fps(scene.features, all, pool), M);
      break;
    case SamplingStrategy::kmeans:
      out.selection.indices = kmeans_medoids(scene.features, all, M, params.kmeans_iterations, rng);
      break;
    case SamplingStrategy::kmeans_dfps:
      out.selection.indices =
          fps(scene.centers, kmeans_medoids(scene.features, all, pool, params.kmeans_iterations, rng), M);
      break;
    case SamplingStrategy::kmeans_ffps:
      out.selection.indices =
          fps(scene.features, kmeans_medoids(scene.features, all, pool, params.kmeans_iterations, rng), M);
      break;
    case SamplingStrategy::objectness_fps: {
      const auto candidates = filter_candidates(scene.objectness, std::min(params.candidate_keep, K));
      out.selection.indices = weighted_fps(scene.features, scene.objectness, candidates, M, params.reduction);
      break;
    }
  }
  return out;
}

}  // namespace disarm
