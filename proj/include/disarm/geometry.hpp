#pragma once

// Axis-aligned 3D boxes, IoU, objectness targets, NMS and mAP evaluation.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "disarm/errors.hpp"

namespace disarm {

using Vec3 = Eigen::Vector3d;

struct Box3D {
  Vec3 center = Vec3::Zero();
  Vec3 size = Vec3::Ones();  // full extents, all > 0
  int label = -1;
  double score = 0.0;  // detections only

  double volume() const { return size.prod(); }
  bool valid() const { return (size.array() > 0.0).all() && center.allFinite() && size.allFinite(); }
};

inline double iou3d(const Box3D& a, const Box3D& b) {
  double inter = 1.0;
  for (int k = 0; k < 3; ++k) {
    const double lo = std::max(a.center[k] - 0.5 * a.size[k], b.center[k] - 0.5 * b.size[k]);
    const double hi = std::min(a.center[k] + 0.5 * a.size[k], b.center[k] + 0.5 * b.size[k]);
    if (hi <= lo) return 0.0;
    inter *= hi - lo;
  }
  const double uni = a.volume() + b.volume() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

inline constexpr double kObjectnessIou = 0.25;

// 1 iff the proposal box overlaps some ground-truth box with IoU strictly
// above 0.25. An empty ground-truth list is a background scene: all zeros.
inline std::vector<int> assign_objectness_targets(std::span<const Box3D> proposals,
                                                  std::span<const Box3D> gt) {
  if (proposals.empty()) throw InvalidInput("assign_objectness_targets: no proposals");
  std::vector<int> t(proposals.size(), 0);
  for (std::size_t i = 0; i < proposals.size(); ++i)
    for (const auto& g : gt)
      if (iou3d(proposals[i], g) > kObjectnessIou) {
        t[i] = 1;
        break;
      }
  return t;
}

// Index of the ground-truth box with the largest IoU, or -1 when none overlaps.
inline int best_gt_match(const Box3D& box, std::span<const Box3D> gt) {
  int best = -1;
  double best_iou = 0.0;
  for (std::size_t j = 0; j < gt.size(); ++j) {
    const double v = iou3d(box, gt[j]);
    if (v > best_iou) {
      best_iou = v;
      best = static_cast<int>(j);
    }
  }
  return best;
}

// Greedy per-class NMS; returns kept indices in descending score order.
inline std::vector<int> nms3d(std::span<const Box3D> boxes, double iou_threshold) {
  std::vector<int> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return boxes[a].score > boxes[b].score; });
  std::vector<int> keep;
  for (int i : order) {
    bool suppressed = false;
    for (int k : keep)
      if (boxes[k].label == boxes[i].label && iou3d(boxes[k], boxes[i]) > iou_threshold) {
        suppressed = true;
        break;
      }
    if (!suppressed) keep.push_back(i);
  }
  return keep;
}

struct DetectionRecord {
  int scene = 0;
  Box3D box;
  bool matched = false;
  std::optional<int> matched_gt;
};

struct MapResult {
  double iou_threshold = 0.0;
  std::map<int, double> per_class_ap;  // classes with >= 1 gt instance
  std::vector<int> excluded_classes;   // detected classes without any gt
  double mAP = 0.0;
  std::vector<DetectionRecord> records;  // input detections with match flags filled in
};

// Area under the all-point interpolated precision/recall curve.
inline double average_precision(std::span<const double> recall, std::span<const double> precision) {
  std::vector<double> mrec{0.0};
  mrec.insert(mrec.end(), recall.begin(), recall.end());
  mrec.push_back(1.0);
  std::vector<double> mpre{0.0};
  mpre.insert(mpre.end(), precision.begin(), precision.end());
  mpre.push_back(0.0);
  for (std::size_t i = mpre.size() - 1; i > 0; --i) mpre[i - 1] = std::max(mpre[i - 1], mpre[i]);
  double ap = 0.0;
  for (std::size_t i = 1; i < mrec.size(); ++i)
    if (mrec[i] != mrec[i - 1]) ap += (mrec[i] - mrec[i - 1]) * mpre[i];
  return ap;
}

// Per class: detections sorted by descending score (stable), each matched to
// the best still-unmatched gt of its class in its scene with IoU >= threshold.
// `gt[s]` holds the ground truth of scene s; DetectionRecord::scene indexes it.
inline MapResult evaluate_map(std::vector<DetectionRecord> detections,
                              const std::vector<std::vector<Box3D>>& gt, double iou_threshold) {
  MapResult result;
  result.iou_threshold = iou_threshold;
  std::map<int, int> gt_count;
  for (const auto& scene : gt)
    for (const auto& g : scene) ++gt_count[g.label];
  std::map<int, std::vector<int>> by_class;
  for (std::size_t i = 0; i < detections.size(); ++i) {
    const auto& d = detections[i];
    if (d.scene < 0 || static_cast<std::size_t>(d.scene) >= gt.size())
      throw InvalidInput("evaluate_map: detection references unknown scene " +
                         std::to_string(d.scene));
    if (!std::isfinite(d.box.score)) throw InvalidInput("evaluate_map: detection score missing");
    detections[i].matched = false;
    detections[i].matched_gt.reset();
    by_class[d.box.label].push_back(static_cast<int>(i));
  }
  for (const auto& [label, _] : by_class)
    if (!gt_count.count(label)) result.excluded_classes.push_back(label);

  for (const auto& [label, npos] : gt_count) {
    std::vector<int> idx = by_class.count(label) ? by_class[label] : std::vector<int>{};
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
      return detections[a].box.score > detections[b].box.score;
    });
    std::map<int, std::vector<char>> used;  // scene -> gt taken flags
    std::vector<double> recall, precision;
    int tp = 0, fp = 0;
    for (int di : idx) {
      auto& d = detections[di];
      const auto& scene_gt = gt[d.scene];
      auto& taken = used[d.scene];
      if (taken.empty()) taken.assign(scene_gt.size(), 0);
      int best = -1;
      double best_iou = -1.0;
      for (std::size_t j = 0; j < scene_gt.size(); ++j) {
        if (scene_gt[j].label != label || taken[j]) continue;
        const double v = iou3d(d.box, scene_gt[j]);
        if (v >= iou_threshold && v > best_iou) {
          best_iou = v;
          best = static_cast<int>(j);
        }
      }
      if (best >= 0) {
        taken[best] = 1;
        d.matched = true;
        d.matched_gt = best;
        ++tp;
      } else {
        ++fp;
      }
      recall.push_back(static_cast<double>(tp) / npos);
      precision.push_back(static_cast<double>(tp) / (tp + fp));
    }
    result.per_class_ap[label] = average_precision(recall, precision);
  }
  if (!result.per_class_ap.empty()) {
    double s = 0.0;
    for (const auto& [_, ap] : result.per_class_ap) s += ap;
    result.mAP = s / static_cast<double>(result.per_class_ap.size());
  }
  result.records = std::move(detections);
  return result;
}

inline std::string threshold_tag(double t) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%.2f", t);
  return buf;
}

inline std::string class_name_or_id(const std::vector<std::string>& names, int label) {
  if (label >= 0 && static_cast<std::size_t>(label) < names.size()) return names[label];
  return "class" + std::to_string(label);
}

// "ap.<class>@0.25=<value>" per class then "mAP@0.25=<value>".
inline std::string format_map_kv(const MapResult& r, const std::vector<std::string>& names,
                                 const std::string& prefix = "") {
  std::ostringstream os;
  os.precision(17);
  const auto tag = threshold_tag(r.iou_threshold);
  for (const auto& [label, ap] : r.per_class_ap)
    os << prefix << "ap." << class_name_or_id(names, label) << "@" << tag << "=" << ap << "\n";
  os << prefix << "mAP@" << tag << "=" << r.mAP << "\n";
  return os.str();
}

inline std::string format_map_table(const MapResult& r, const std::vector<std::string>& names) {
  std::ostringstream os;
  char line[128];
  std::snprintf(line, sizeof line, "%-14s %10s\n", "class", ("AP@" + threshold_tag(r.iou_threshold)).c_str());
  os << line;
  for (const auto& [label, ap] : r.per_class_ap) {
    std::snprintf(line, sizeof line, "%-14s %10.4f\n", class_name_or_id(names, label).c_str(), ap);
    os << line;
  }
  std::snprintf(line, sizeof line, "%-14s %10.4f\n", "mAP", r.mAP);
  os << line;
  for (int c : r.excluded_classes)
    os << "note: " << class_name_or_id(names, c) << " has detections but no ground truth; excluded\n";
  return os.str();
}

}  // namespace disarm
