#pragma once

// The relation module: objectness head, objectness-weighted feature-space
// anchor sampling, displacement-based pair weights, and relation-feature
// fusion with a skip connection.
//
// Matrices hold one proposal (or one proposal-anchor pair) per column.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <array>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "disarm/errors.hpp"
#include "disarm/geometry.hpp"
#include "disarm/nn.hpp"
#include "disarm/rng.hpp"

namespace disarm {

using nn::Matrix;
using nn::Vector;

struct Proposal {
  Vec3 center = Vec3::Zero();
  Vector feature;
  double objectness = 0.0;
};

struct AnchorSelection {
  std::vector<int> indices;
  int size() const { return static_cast<int>(indices.size()); }
};

// K x M; row i holds the normalized weights of proposal i over its anchors.
struct PairWeightMatrix {
  Matrix w;
};

enum class WeightNormalization { softmax, sum };
enum class AnchorReduction { sum, min };
enum class WeightingMode { unweighted, spatial_only, feature_only, full };
enum class ObjectnessLossKind { l2, bce };

inline constexpr std::array<WeightingMode, 4> kAllWeightings = {WeightingMode::unweighted, WeightingMode::spatial_only,
                                                                WeightingMode::feature_only, WeightingMode::full};

inline std::string_view tag(WeightingMode m) {
  switch (m) {
    case WeightingMode::unweighted: return "Unweighted";
    case WeightingMode::spatial_only: return "SpatialOnly";
    case WeightingMode::feature_only: return "FeatureOnly";
    case WeightingMode::full: return "Full";
  }
  return "?";
}

// Column label of the weighting-component table.
inline std::string_view table_label(WeightingMode m) {
  switch (m) {
    case WeightingMode::unweighted: return "w/o";
    case WeightingMode::spatial_only: return "S-DW";
    case WeightingMode::feature_only: return "F-DW";
    case WeightingMode::full: return "Ours";
  }
  return "?";
}

inline std::optional<WeightingMode> parse_weighting(std::string_view text) {
  for (auto m : kAllWeightings)
    if (tag(m) == text) return m;
  return std::nullopt;
}

inline std::string valid_weighting_tags() {
  std::string out;
  for (auto m : kAllWeightings) {
    if (!out.empty()) out += ", ";
    out += tag(m);
  }
  return out;
}

inline constexpr int kRelationDim = 128;
inline constexpr int kDisplacementDim = 32;

struct DisarmConfig {
  int feature_dim = 128;
  int anchors = 15;
  int candidate_keep = 128;
  WeightNormalization normalization = WeightNormalization::softmax;
  AnchorReduction reduction = AnchorReduction::sum;
  WeightingMode weighting = WeightingMode::full;
  bool weights_active = true;

  bool uses_weights() const { return weights_active && weighting != WeightingMode::unweighted; }
};

struct DisarmNets {
  nn::DenseNet objectness;  // F -> 64 -> 32 -> 32 -> 1, sigmoid out
  nn::DenseNet tau;         // 3 -> 8 -> 16 -> 32
  nn::DenseNet sigma;       // F -> 64 -> 32
  nn::DenseNet phi;         // 64 -> 32 -> 1, tanh applied by the caller
  nn::DenseNet varphi;      // 2F -> 256 -> 128 -> 128 -> 128

  static DisarmNets create(int feature_dim) {
    using nn::Activation;
    DisarmNets n;
    n.objectness = nn::DenseNet::mlp(feature_dim, {64, 32, 32, 1}, Activation::relu, Activation::sigmoid);
    n.tau = nn::DenseNet::mlp(3, {8, 16, kDisplacementDim}, Activation::relu, Activation::identity);
    n.sigma = nn::DenseNet::mlp(feature_dim, {64, kDisplacementDim}, Activation::relu, Activation::identity);
    n.phi = nn::DenseNet::mlp(2 * kDisplacementDim, {32, 1}, Activation::relu, Activation::identity);
    n.varphi = nn::DenseNet::mlp(2 * feature_dim, {256, 128, 128, kRelationDim}, Activation::relu,
                                 Activation::identity);
    return n;
  }

  static DisarmNets create(int feature_dim, Rng& rng) {
    DisarmNets n = create(feature_dim);
    n.objectness.init_uniform(rng);
    n.tau.init_uniform(rng);
    n.sigma.init_uniform(rng);
    n.phi.init_uniform(rng);
    n.varphi.init_uniform(rng);
    return n;
  }

  int feature_dim() const { return objectness.input_dim(); }

  std::size_t parameter_count() const {
    return objectness.parameter_count() + tau.parameter_count() + sigma.parameter_count() +
           phi.parameter_count() + varphi.parameter_count();
  }
};

// ---------------------------------------------------------------------------
// Objectness

inline Matrix features_of(std::span<const Proposal> proposals, int feature_dim) {
  Matrix f(feature_dim, static_cast<Eigen::Index>(proposals.size()));
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    if (proposals[i].feature.size() != feature_dim)
      throw InvalidInput("proposal " + std::to_string(i) + " has feature length " +
                         std::to_string(proposals[i].feature.size()) + ", expected " +
                         std::to_string(feature_dim));
    f.col(static_cast<Eigen::Index>(i)) = proposals[i].feature;
  }
  return f;
}

inline Matrix centers_of(std::span<const Proposal> proposals) {
  Matrix c(3, static_cast<Eigen::Index>(proposals.size()));
  for (std::size_t i = 0; i < proposals.size(); ++i) c.col(static_cast<Eigen::Index>(i)) = proposals[i].center;
  return c;
}

// Runs the objectness head and stores the scores on the proposals.
inline std::vector<double> score_objectness(const DisarmNets& nets, std::vector<Proposal>& proposals) {
  if (proposals.empty()) return {};
  const Matrix o = nn::forward_batch(nets.objectness, features_of(proposals, nets.feature_dim()));
  std::vector<double> scores(proposals.size());
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    scores[i] = o(0, static_cast<Eigen::Index>(i));
    proposals[i].objectness = scores[i];
  }
  return scores;
}

struct LossAndGrad {
  double value = 0.0;
  std::vector<double> grad;  // d value / d score
};

// Mean over proposals of (o - t)^2, or of the binary cross-entropy.
inline LossAndGrad objectness_loss(std::span<const double> scores, std::span<const int> targets,
                                   ObjectnessLossKind kind = ObjectnessLossKind::l2) {
  if (scores.size() != targets.size())
    throw InvalidInput("objectness_loss: " + std::to_string(scores.size()) + " scores vs " +
                       std::to_string(targets.size()) + " targets");
  LossAndGrad out;
  out.grad.assign(scores.size(), 0.0);
  if (scores.empty()) return out;
  const double n = static_cast<double>(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double o = scores[i];
    const double t = targets[i];
    if (kind == ObjectnessLossKind::l2) {
      out.value += (o - t) * (o - t);
      out.grad[i] = 2.0 * (o - t) / n;
    } else {
      constexpr double eps = 1e-12;
      const double oc = std::clamp(o, eps, 1.0 - eps);
      out.value += -(t * std::log(oc) + (1.0 - t) * std::log(1.0 - oc));
      out.grad[i] = (-(t / oc) + (1.0 - t) / (1.0 - oc)) / n;
    }
  }
  out.value /= n;
  return out;
}

// Top `keep` proposals by objectness, descending; ties go to the lower index.
inline std::vector<int> filter_candidates(std::span<const double> objectness, int keep) {
  if (keep < 0 || static_cast<std::size_t>(keep) > objectness.size())
    throw InvalidInput("filter_candidates: keep=" + std::to_string(keep) + " exceeds " +
                       std::to_string(objectness.size()) + " proposals");
  std::vector<int> idx(objectness.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](int a, int b) { return objectness[a] > objectness[b]; });
  idx.resize(static_cast<std::size_t>(keep));
  return idx;
}

inline std::vector<int> filter_candidates(std::span<const Proposal> proposals, int keep) {
  std::vector<double> o(proposals.size());
  for (std::size_t i = 0; i < proposals.size(); ++i) o[i] = proposals[i].objectness;
  return filter_candidates(o, keep);
}

// ---------------------------------------------------------------------------
// Anchor sampling

// Plain sequential loop so results do not depend on SIMD reduction order.
inline double euclidean(const double* a, const double* b, Eigen::Index n) {
  double s = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) {
    const double d = a[k] - b[k];
    s += d * d;
  }
  return std::sqrt(s);
}

// Greedy farthest sampling over the columns of `points` restricted to
// `pool` (indices into the columns). Seed: highest weight. Each step adds
// the unselected i maximizing weight_i * sum_{j selected} |p_i - p_j|
// (or weight_i * min_j |p_i - p_j| for AnchorReduction::min). Ties go to
// the lower column index. Returns column indices.
inline std::vector<int> weighted_fps(const Matrix& points, std::span<const double> weights,
                                     std::span<const int> pool, int m, AnchorReduction reduction) {
  const int n = static_cast<int>(pool.size());
  if (m < 0 || m > n)
    throw InvalidInput("anchor sampling: M=" + std::to_string(m) + " exceeds " + std::to_string(n) +
                       " candidates");
  std::vector<int> chosen;
  if (m == 0) return chosen;
  std::vector<char> used(static_cast<std::size_t>(n), 0);
  int seed = 0;
  for (int i = 1; i < n; ++i) {
    const double a = weights[pool[i]];
    const double b = weights[pool[seed]];
    if (a > b || (a == b && pool[i] < pool[seed])) seed = i;
  }
  chosen.push_back(pool[seed]);
  used[seed] = 1;
  std::vector<double> acc(static_cast<std::size_t>(n),
                          reduction == AnchorReduction::sum ? 0.0 : INFINITY);
  int last = seed;
  const Eigen::Index dim = points.rows();
  while (static_cast<int>(chosen.size()) < m) {
    int best = -1;
    double best_score = -INFINITY;
    for (int i = 0; i < n; ++i) {
      if (used[i]) continue;
      const double d = euclidean(points.col(pool[i]).data(), points.col(pool[last]).data(), dim);
      if (reduction == AnchorReduction::sum)
        acc[i] += weights[pool[i]] * d;
      else
        acc[i] = std::min(acc[i], d);
      const double score = reduction == AnchorReduction::sum ? acc[i] : weights[pool[i]] * acc[i];
      if (score > best_score || (best >= 0 && score == best_score && pool[i] < pool[best])) {
        best_score = score;
        best = i;
      }
    }
    if (best < 0) throw NumericError("no candidate has a comparable score", "anchor sampling (non-finite input)");
    chosen.push_back(pool[best]);
    used[best] = 1;
    last = best;
  }
  return chosen;
}

// Objectness-weighted FPS in feature space over the given candidates.
inline AnchorSelection sample_anchors(std::span<const Proposal> candidates, int m,
                                      AnchorReduction reduction = AnchorReduction::sum) {
  if (candidates.empty() && m > 0) throw InvalidInput("sample_anchors: no candidates");
  const int dim = candidates.empty() ? 0 : static_cast<int>(candidates[0].feature.size());
  const Matrix f = features_of(candidates, dim);
  std::vector<double> o(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) o[i] = candidates[i].objectness;
  std::vector<int> pool(candidates.size());
  std::iota(pool.begin(), pool.end(), 0);
  return {weighted_fps(f, o, pool, m, reduction)};
}

// ---------------------------------------------------------------------------
// Displacement weights and fusion

inline Vector spatial_displacement(const DisarmNets& nets, const Vec3& ci, const Vec3& cj) {
  return nn::forward(nets.tau, Vector(ci - cj));
}

inline Vector feature_displacement(const DisarmNets& nets, const Vector& fi, const Vector& fj) {
  if (fi.size() != nets.sigma.input_dim() || fj.size() != nets.sigma.input_dim())
    throw InvalidInput("feature_displacement: feature length must be " +
                       std::to_string(nets.sigma.input_dim()));
  return nn::forward(nets.sigma, Vector(fi - fj));
}

// Anchor list per proposal. Shared selections replicate the same list;
// per-proposal lists (nearest-neighbour anchors) differ row to row. All
// rows must have the same length.
struct AnchorLists {
  std::vector<std::vector<int>> rows;

  static AnchorLists shared(const AnchorSelection& sel, int proposals) {
    return {std::vector<std::vector<int>>(static_cast<std::size_t>(proposals), sel.indices)};
  }
  int proposals() const { return static_cast<int>(rows.size()); }
  int width() const { return rows.empty() ? 0 : static_cast<int>(rows[0].size()); }
};

// Differentiable relation pass for one scene. forward() caches what
// backward() needs; network gradients accumulate into the tapes.
class RelationPass {
 public:
  struct Tapes {
    nn::GradientTape tau, sigma, phi, varphi;
  };

  // features: F x K, centers: 3 x K. Returns [f_i; r_i] per column.
  Matrix forward(const DisarmNets& nets, const DisarmConfig& cfg, const Matrix& features,
                 const Matrix& centers, const AnchorLists& anchors, Tapes* tapes = nullptr) {
    const Eigen::Index F = features.rows();
    const int K = static_cast<int>(features.cols());
    if (F != nets.sigma.input_dim() || 2 * F != nets.varphi.input_dim())
      throw InvalidInput("relation: feature dimension " + std::to_string(F) + " does not match nets");
    if (centers.cols() != K || centers.rows() != 3) throw InvalidInput("relation: centers shape");
    if (anchors.proposals() != K) throw InvalidInput("relation: anchor lists must have one row per proposal");
    M_ = anchors.width();
    if (M_ <= 0) throw InvalidInput("relation: empty anchor set");
    K_ = K;
    mode_ = cfg.uses_weights() ? cfg.weighting : WeightingMode::unweighted;
    normalization_ = cfg.normalization;

    // Canonical pair order: anchors ascending within each row, so the result
    // does not depend on the order anchors were listed in.
    pair_anchor_.assign(static_cast<std::size_t>(K) * M_, 0);
    row_position_.assign(static_cast<std::size_t>(K) * M_, 0);
    for (int i = 0; i < K; ++i) {
      const auto& row = anchors.rows[static_cast<std::size_t>(i)];
      if (static_cast<int>(row.size()) != M_) throw InvalidInput("relation: ragged anchor lists");
      std::vector<int> order(row.size());
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return row[a] < row[b]; });
      for (int k = 0; k < M_; ++k) {
        const int j = row[order[k]];
        if (j < 0 || j >= K) throw InvalidInput("relation: anchor index out of range");
        pair_anchor_[pair(i, k)] = j;
        row_position_[pair(i, k)] = order[k];
      }
    }

    const Eigen::Index P = static_cast<Eigen::Index>(K) * M_;
    weights_.resize(1, P);
    if (mode_ == WeightingMode::unweighted) {
      weights_.setConstant(1.0 / M_);
    } else {
      Matrix st = Matrix::Zero(2 * kDisplacementDim, P);
      if (mode_ != WeightingMode::feature_only) {
        Matrix dc(3, P);
        for (int i = 0; i < K; ++i)
          for (int k = 0; k < M_; ++k) dc.col(pair(i, k)) = centers.col(i) - centers.col(pair_anchor_[pair(i, k)]);
        st.topRows(kDisplacementDim) = nn::forward_batch(nets.tau, dc, tapes ? &tapes->tau : nullptr);
      }
      if (mode_ != WeightingMode::spatial_only) {
        std::vector<int> self(static_cast<std::size_t>(P));
        for (int i = 0; i < K; ++i)
          for (int k = 0; k < M_; ++k) self[static_cast<std::size_t>(pair(i, k))] = i;
        st.bottomRows(kDisplacementDim) =
            nn::forward_differences(nets.sigma, features, self, pair_anchor_, tapes ? &tapes->sigma : nullptr);
      }
      logits_ = nn::forward_batch(nets.phi, st, tapes ? &tapes->phi : nullptr).array().tanh().matrix();
      row_sum_.assign(static_cast<std::size_t>(K), 0.0);
      for (int i = 0; i < K; ++i) {
        if (normalization_ == WeightNormalization::softmax) {
          double mx = -INFINITY;
          for (int k = 0; k < M_; ++k) mx = std::max(mx, logits_(0, pair(i, k)));
          double s = 0.0;
          for (int k = 0; k < M_; ++k) {
            const double e = std::exp(logits_(0, pair(i, k)) - mx);
            weights_(0, pair(i, k)) = e;
            s += e;
          }
          for (int k = 0; k < M_; ++k) weights_(0, pair(i, k)) /= s;
        } else {
          double s = 0.0;
          for (int k = 0; k < M_; ++k) s += logits_(0, pair(i, k));
          row_sum_[static_cast<std::size_t>(i)] = s;
          for (int k = 0; k < M_; ++k) weights_(0, pair(i, k)) = logits_(0, pair(i, k)) / s;
        }
      }
    }

    // Weighted sum of [f_i; f_j]. Rows sum to one, so the first half is f_i.
    Matrix agg(2 * F, K);
    agg.topRows(F) = features;
    for (int i = 0; i < K; ++i) {
      Vector g = Vector::Zero(F);
      for (int k = 0; k < M_; ++k) g.noalias() += weights_(0, pair(i, k)) * features.col(pair_anchor_[pair(i, k)]);
      agg.col(i).tail(F) = g;
    }
    if (tapes) features_ = features;
    Matrix r = nn::forward_batch(nets.varphi, agg, tapes ? &tapes->varphi : nullptr);
    Matrix out(F + r.rows(), K);
    out.topRows(F) = features;
    out.bottomRows(r.rows()) = r;
    return out;
  }

  // d(loss)/d(features) given d(loss)/d(output of forward). Requires the
  // forward to have been recorded with tapes.
  Matrix backward(const DisarmNets& nets, const Matrix& upstream, Tapes& tapes) const {
    const Eigen::Index F = features_.rows();
    if (features_.cols() != K_ || !tapes.varphi.has_forward)
      throw StateError("relation backward before a taped forward");
    Matrix dF = upstream.topRows(F);
    const Matrix dAgg = nn::backward(nets.varphi, tapes.varphi, Matrix(upstream.bottomRows(upstream.rows() - F)));
    dF += dAgg.topRows(F);
    const Eigen::Index P = static_cast<Eigen::Index>(K_) * M_;
    Vector dw(P);
    for (int i = 0; i < K_; ++i) {
      const auto dg = dAgg.col(i).tail(F);
      for (int k = 0; k < M_; ++k) {
        const int j = pair_anchor_[pair(i, k)];
        dw(pair(i, k)) = dg.dot(features_.col(j));
        dF.col(j).noalias() += weights_(0, pair(i, k)) * dg;
      }
    }
    if (mode_ == WeightingMode::unweighted) return dF;

    Matrix dz(1, P);
    for (int i = 0; i < K_; ++i) {
      double inner = 0.0;
      for (int k = 0; k < M_; ++k) inner += weights_(0, pair(i, k)) * dw(pair(i, k));
      for (int k = 0; k < M_; ++k) {
        const Eigen::Index p = pair(i, k);
        double da = normalization_ == WeightNormalization::softmax
                        ? weights_(0, p) * (dw(p) - inner)
                        : (dw(p) - inner) / row_sum_[static_cast<std::size_t>(i)];
        dz(0, p) = da * (1.0 - logits_(0, p) * logits_(0, p));
      }
    }
    const Matrix dst = nn::backward(nets.phi, tapes.phi, dz);
    if (mode_ != WeightingMode::feature_only) nn::backward(nets.tau, tapes.tau, Matrix(dst.topRows(kDisplacementDim)));
    if (mode_ != WeightingMode::spatial_only)
      dF += nn::backward_differences(nets.sigma, tapes.sigma, Matrix(dst.bottomRows(kDisplacementDim)));
    return dF;
  }

  // K x M weights in the order anchors were listed by the caller.
  PairWeightMatrix weights() const {
    PairWeightMatrix out{Matrix(K_, M_)};
    for (int i = 0; i < K_; ++i)
      for (int k = 0; k < M_; ++k) out.w(i, row_position_[pair(i, k)]) = weights_(0, pair(i, k));
    return out;
  }

 private:
  Eigen::Index pair(int i, int k) const { return static_cast<Eigen::Index>(i) * M_ + k; }

  int K_ = 0;
  int M_ = 0;
  WeightingMode mode_ = WeightingMode::full;
  WeightNormalization normalization_ = WeightNormalization::softmax;
  std::vector<int> pair_anchor_;
  std::vector<int> row_position_;
  Matrix logits_;   // tanh outputs, 1 x P
  Matrix weights_;  // 1 x P
  std::vector<double> row_sum_;
  Matrix features_;
};

inline PairWeightMatrix aggregate_weights(const DisarmNets& nets, std::span<const Proposal> proposals,
                                          const AnchorSelection& anchors, const DisarmConfig& cfg = {}) {
  const int K = static_cast<int>(proposals.size());
  DisarmConfig c = cfg;
  c.weights_active = true;
  if (c.weighting == WeightingMode::unweighted) c.weighting = WeightingMode::full;
  RelationPass pass;
  pass.forward(nets, c, features_of(proposals, nets.feature_dim()), centers_of(proposals),
               AnchorLists::shared(anchors, K));
  return pass.weights();
}

// Column i: varphi(sum_j w_ij [f_i; f_j]). Returns 128 x K.
inline Matrix fuse_relation(const DisarmNets& nets, std::span<const Proposal> proposals,
                            const AnchorSelection& anchors, const PairWeightMatrix& weights) {
  const int K = static_cast<int>(proposals.size());
  const int M = anchors.size();
  if (weights.w.rows() != K || weights.w.cols() != M)
    throw InvalidInput("fuse_relation: weight matrix must be K x M");
  const int F = nets.feature_dim();
  const Matrix f = features_of(proposals, F);
  Matrix agg(2 * F, K);
  for (int i = 0; i < K; ++i) {
    // Anchors in ascending index order, matching RelationPass.
    std::vector<int> order(static_cast<std::size_t>(M));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return anchors.indices[a] < anchors.indices[b]; });
    Vector g = Vector::Zero(F);
    for (int k : order) g.noalias() += weights.w(i, k) * f.col(anchors.indices[k]);
    agg.col(i).head(F) = f.col(i);
    agg.col(i).tail(F) = g;
  }
  return nn::forward_batch(nets.varphi, agg);
}

struct DisarmOutput {
  Matrix fused;  // (F + 128) x K: [f_i; r_i]
  AnchorSelection anchors;
  PairWeightMatrix weights;
  std::vector<double> objectness;
};

inline DisarmOutput disarm_forward(const DisarmNets& nets, std::vector<Proposal>& proposals,
                                   const DisarmConfig& cfg) {
  const int K = static_cast<int>(proposals.size());
  if (K < cfg.anchors)
    throw InvalidInput("disarm_forward: " + std::to_string(K) + " proposals, need at least " +
                       std::to_string(cfg.anchors));
  DisarmOutput out;
  out.objectness = score_objectness(nets, proposals);
  const auto candidates = filter_candidates(out.objectness, std::min(cfg.candidate_keep, K));
  const Matrix f = features_of(proposals, nets.feature_dim());
  out.anchors.indices = weighted_fps(f, out.objectness, candidates, cfg.anchors, cfg.reduction);
  RelationPass pass;
  out.fused = pass.forward(nets, cfg, f, centers_of(proposals), AnchorLists::shared(out.anchors, K));
  out.weights = pass.weights();
  return out;
}

// ---------------------------------------------------------------------------
// Cost accounting. FLOPs: 2*in*out per affine layer plus one per activated
// output element (identity layers are free). Pair networks (tau, sigma, phi
// and the tanh on phi's output) run K*M times; objectness and varphi run K
// times.

struct NetCost {
  std::string name;
  std::size_t parameters = 0;
  std::size_t flops_per_call = 0;
};

struct CostReport {
  std::vector<NetCost> nets;
  std::size_t parameter_count = 0;
  std::size_t storage_bytes_f32 = 0;
  std::size_t flops_pairwise = 0;
  std::size_t flops_per_proposal = 0;
  std::size_t flops_per_forward = 0;
};

inline std::size_t flops_per_call(const nn::DenseNet& net) {
  std::size_t f = 0;
  for (const auto& l : net.layers()) {
    f += 2 * static_cast<std::size_t>(l.in_dim()) * static_cast<std::size_t>(l.out_dim());
    if (l.activation != nn::Activation::identity) f += static_cast<std::size_t>(l.out_dim());
  }
  return f;
}

inline CostReport cost_report(const DisarmNets& nets, std::size_t K, std::size_t M) {
  CostReport r;
  auto add = [&](const char* name, const nn::DenseNet& n, std::size_t extra = 0) {
    r.nets.push_back({name, n.parameter_count(), flops_per_call(n) + extra});
    r.parameter_count += n.parameter_count();
  };
  add("objectness", nets.objectness);
  add("tau", nets.tau);
  add("sigma", nets.sigma);
  add("phi", nets.phi, 1);  // tanh on the scalar output
  add("varphi", nets.varphi);
  r.storage_bytes_f32 = 4 * r.parameter_count;
  const std::size_t pairs = K * M;
  r.flops_pairwise = pairs * (r.nets[1].flops_per_call + r.nets[2].flops_per_call + r.nets[3].flops_per_call);
  r.flops_per_proposal = K * (r.nets[0].flops_per_call + r.nets[4].flops_per_call);
  r.flops_per_forward = r.flops_pairwise + r.flops_per_proposal;
  return r;
}

}  // namespace disarm
