#pragma once

// Procedural indoor scenes standing in for a point-cloud backbone: ground
// truth boxes placed by co-occurrence rules, jittered proposals carrying
// class-prototype features, a shared prototype for confusable class pairs,
// and background clutter. Plus a line-delimited JSON dataset format.

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "disarm/errors.hpp"
#include "disarm/geometry.hpp"
#include "disarm/nn.hpp"
#include "disarm/rng.hpp"

namespace disarm {

struct ClassInfo {
  std::string name;
  Vec3 size;  // default full extents
};

// Class `root` appears independently with this probability.
struct RootRule {
  int cls = 0;
  double probability = 0.0;
};

// Given an instance of `a`, emit an instance of `b` with probability
// `probability` at offset ~ N(mean, covariance) from it.
struct CooccurrenceRule {
  int a = 0;
  int b = 0;
  Vec3 mean = Vec3::Zero();
  Eigen::Matrix3d covariance = Eigen::Matrix3d::Identity() * 1e-4;
  double probability = 1.0;
};

struct SceneSpec {
  std::vector<ClassInfo> classes;
  std::vector<RootRule> roots;
  std::vector<CooccurrenceRule> rules;
  std::vector<std::pair<int, int>> confusable;
  Vec3 room = Vec3(5.5, 5.5, 3.0);
  double ambiguity_rate = 0.6;
  int feature_dim = 128;
  int proposals_per_scene = 80;
  int min_proposals_per_object = 1;
  int max_proposals_per_object = 3;
  double center_jitter = 0.08;   // stddev as a fraction of object size, per axis
  double size_jitter = 0.08;     // gt sizes: default * U(1 - j, 1 + j)
  double feature_noise = 0.35;   // stddev per feature dimension
  double incomplete_rate = 0.25;  // probability an extra proposal is a partial view
  double incomplete_scale = 0.45;
  double group_style = 2.0;      // stddev of the per-group style vector
  int style_dims = 8;
  double clutter_noise = 0.9;
  int placement_attempts = 200;
  std::uint64_t prototype_seed = 7;

  int class_index(const std::string& name) const {
    for (std::size_t i = 0; i < classes.size(); ++i)
      if (classes[i].name == name) return static_cast<int>(i);
    return -1;
  }
};

// Class catalog and layout rules used by the default synthetic suite.
inline SceneSpec default_scene_spec() {
  SceneSpec s;
  s.classes = {
      {"cabinet", Vec3(0.8, 0.5, 1.0)},   {"bed", Vec3(2.0, 1.6, 0.6)},
      {"chair", Vec3(0.55, 0.55, 0.9)},   {"sofa", Vec3(2.0, 0.9, 0.8)},
      {"table", Vec3(1.4, 0.9, 0.75)},    {"desk", Vec3(1.2, 0.6, 0.75)},
      {"bookshelf", Vec3(1.0, 0.35, 1.8)}, {"nightstand", Vec3(0.5, 0.45, 0.55)},
      {"toilet", Vec3(0.45, 0.7, 0.8)},   {"bathtub", Vec3(1.7, 0.75, 0.55)},
  };
  enum { cabinet, bed, chair, sofa, table, desk, bookshelf, nightstand, toilet, bathtub };
  s.roots = {{bed, 0.65}, {table, 0.65}, {bathtub, 0.4}, {sofa, 0.45}, {desk, 0.45}, {bookshelf, 0.45}};
  auto dz = [&](int a, int b) { return 0.5 * (s.classes[b].size.z() - s.classes[a].size.z()); };
  auto cov = [](double sxy) {
    Eigen::Matrix3d c = Eigen::Matrix3d::Zero();
    c(0, 0) = c(1, 1) = sxy * sxy;
    c(2, 2) = 1e-4;
    return c;
  };
  s.rules = {
      {table, chair, Vec3(1.0, 0.0, dz(table, chair)), cov(0.24), 0.9},
      {table, chair, Vec3(-1.0, 0.0, dz(table, chair)), cov(0.24), 0.6},
      {bed, cabinet, Vec3(0.0, 1.3, dz(bed, cabinet)), cov(0.24), 0.9},
      {bed, nightstand, Vec3(1.35, 0.55, dz(bed, nightstand)), cov(0.18), 0.8},
      {bathtub, toilet, Vec3(1.3, 0.25, dz(bathtub, toilet)), cov(0.24), 0.9},
  };
  s.confusable = {{cabinet, chair}, {nightstand, toilet}};
  return s;
}

inline void validate(const SceneSpec& s) {
  auto fail = [](const std::string& field, const std::string& why) {
    throw InvalidInput("spec field '" + field + "': " + why);
  };
  const int C = static_cast<int>(s.classes.size());
  if (C == 0) fail("classes", "must not be empty");
  for (int c = 0; c < C; ++c)
    if (!(s.classes[c].size.array() > 0.0).all())
      fail("classes[" + std::to_string(c) + "].size", "components must be positive");
  auto check_class = [&](int c, const std::string& field) {
    if (c < 0 || c >= C) fail(field, "unknown class " + std::to_string(c));
  };
  for (std::size_t i = 0; i < s.roots.size(); ++i) {
    check_class(s.roots[i].cls, "roots[" + std::to_string(i) + "].class");
    if (!(s.roots[i].probability >= 0.0 && s.roots[i].probability <= 1.0))
      fail("roots[" + std::to_string(i) + "].probability", "must be in [0,1]");
  }
  for (std::size_t i = 0; i < s.rules.size(); ++i) {
    const auto& r = s.rules[i];
    const std::string f = "rules[" + std::to_string(i) + "]";
    check_class(r.a, f + ".a");
    check_class(r.b, f + ".b");
    if (!(r.probability >= 0.0 && r.probability <= 1.0)) fail(f + ".probability", "must be in [0,1]");
    if (!r.covariance.isApprox(r.covariance.transpose()) || r.covariance.llt().info() != Eigen::Success)
      fail(f + ".covariance", "must be symmetric positive definite");
  }
  for (std::size_t i = 0; i < s.confusable.size(); ++i) {
    check_class(s.confusable[i].first, "confusable[" + std::to_string(i) + "][0]");
    check_class(s.confusable[i].second, "confusable[" + std::to_string(i) + "][1]");
  }
  if (!(s.ambiguity_rate >= 0.0 && s.ambiguity_rate <= 1.0)) fail("ambiguity_rate", "must be in [0,1]");
  if (!(s.room.array() > 0.0).all()) fail("room", "components must be positive");
  if (s.feature_dim <= 0) fail("feature_dim", "must be positive");
  if (s.proposals_per_scene <= 0) fail("proposals_per_scene", "must be positive");
  if (s.min_proposals_per_object < 1 || s.max_proposals_per_object < s.min_proposals_per_object)
    fail("max_proposals_per_object", "need 1 <= min <= max");
  if (!(s.center_jitter >= 0.0)) fail("center_jitter", "must be non-negative");
  if (!(s.size_jitter >= 0.0 && s.size_jitter < 1.0)) fail("size_jitter", "must be in [0,1)");
  if (!(s.feature_noise >= 0.0)) fail("feature_noise", "must be non-negative");
  if (!(s.incomplete_rate >= 0.0 && s.incomplete_rate <= 1.0)) fail("incomplete_rate", "must be in [0,1]");
  if (!(s.group_style >= 0.0)) fail("group_style", "must be non-negative");
  if (s.style_dims < 0 || s.style_dims > s.feature_dim) fail("style_dims", "must be in [0, feature_dim]");
  if (s.placement_attempts <= 0) fail("placement_attempts", "must be positive");
}

// ---------------------------------------------------------------------------
// JSON form of the spec

inline nlohmann::json vec_json(const Vec3& v) { return nlohmann::json::array({v.x(), v.y(), v.z()}); }

inline Vec3 vec_from_json(const nlohmann::json& j, const std::string& field) {
  if (!j.is_array() || j.size() != 3)
    throw InvalidInput("spec field '" + field + "': expected an array of 3 numbers");
  Vec3 v;
  for (int k = 0; k < 3; ++k) {
    if (!j[k].is_number()) throw InvalidInput("spec field '" + field + "': expected numbers");
    v[k] = j[k].get<double>();
  }
  return v;
}

inline nlohmann::json to_json(const SceneSpec& s) {
  nlohmann::json j;
  for (const auto& c : s.classes) j["classes"].push_back({{"name", c.name}, {"size", vec_json(c.size)}});
  j["roots"] = nlohmann::json::array();
  for (const auto& r : s.roots) j["roots"].push_back({{"class", s.classes[r.cls].name}, {"probability", r.probability}});
  j["rules"] = nlohmann::json::array();
  for (const auto& r : s.rules) {
    nlohmann::json cov = nlohmann::json::array();
    for (int a = 0; a < 3; ++a)
      cov.push_back(nlohmann::json::array({r.covariance(a, 0), r.covariance(a, 1), r.covariance(a, 2)}));
    j["rules"].push_back({{"a", s.classes[r.a].name},
                          {"b", s.classes[r.b].name},
                          {"mean", vec_json(r.mean)},
                          {"covariance", cov},
                          {"probability", r.probability}});
  }
  j["confusable"] = nlohmann::json::array();
  for (const auto& [a, b] : s.confusable)
    j["confusable"].push_back(nlohmann::json::array({s.classes[a].name, s.classes[b].name}));
  j["room"] = vec_json(s.room);
  j["ambiguity_rate"] = s.ambiguity_rate;
  j["feature_dim"] = s.feature_dim;
  j["proposals_per_scene"] = s.proposals_per_scene;
  j["min_proposals_per_object"] = s.min_proposals_per_object;
  j["max_proposals_per_object"] = s.max_proposals_per_object;
  j["center_jitter"] = s.center_jitter;
  j["size_jitter"] = s.size_jitter;
  j["feature_noise"] = s.feature_noise;
  j["incomplete_rate"] = s.incomplete_rate;
  j["incomplete_scale"] = s.incomplete_scale;
  j["group_style"] = s.group_style;
  j["style_dims"] = s.style_dims;
  j["clutter_noise"] = s.clutter_noise;
  j["placement_attempts"] = s.placement_attempts;
  j["prototype_seed"] = s.prototype_seed;
  return j;
}

// Fields absent from `j` keep the default spec's values, so a config file
// only needs to list what it changes.
inline SceneSpec scene_spec_from_json(const nlohmann::json& j) {
  SceneSpec s = default_scene_spec();
  if (!j.is_object()) throw InvalidInput("spec: expected a JSON object");
  auto num = [&](const char* key, auto& out) {
    if (!j.contains(key)) return;
    if (!j[key].is_number()) throw InvalidInput(std::string("spec field '") + key + "': expected a number");
    out = j[key].get<std::decay_t<decltype(out)>>();
  };
  if (j.contains("classes")) {
    if (!j["classes"].is_array()) throw InvalidInput("spec field 'classes': expected an array");
    s.classes.clear();
    for (std::size_t i = 0; i < j["classes"].size(); ++i) {
      const auto& c = j["classes"][i];
      const std::string f = "classes[" + std::to_string(i) + "]";
      if (!c.contains("name") || !c["name"].is_string()) throw InvalidInput("spec field '" + f + ".name': expected a string");
      if (!c.contains("size")) throw InvalidInput("spec field '" + f + ".size': missing");
      s.classes.push_back({c["name"].get<std::string>(), vec_from_json(c["size"], f + ".size")});
    }
  }
  auto cls = [&](const nlohmann::json& v, const std::string& field) {
    if (v.is_string()) {
      const int idx = s.class_index(v.get<std::string>());
      if (idx < 0) throw InvalidInput("spec field '" + field + "': unknown class '" + v.get<std::string>() + "'");
      return idx;
    }
    if (v.is_number_integer()) return v.get<int>();
    throw InvalidInput("spec field '" + field + "': expected a class name");
  };
  if (j.contains("roots")) {
    if (!j["roots"].is_array()) throw InvalidInput("spec field 'roots': expected an array");
    s.roots.clear();
    for (std::size_t i = 0; i < j["roots"].size(); ++i) {
      const auto& r = j["roots"][i];
      const std::string f = "roots[" + std::to_string(i) + "]";
      if (!r.contains("class") || !r.contains("probability") || !r["probability"].is_number())
        throw InvalidInput("spec field '" + f + "': needs class and probability");
      s.roots.push_back({cls(r["class"], f + ".class"), r["probability"].get<double>()});
    }
  }
  if (j.contains("rules")) {
    if (!j["rules"].is_array()) throw InvalidInput("spec field 'rules': expected an array");
    s.rules.clear();
    for (std::size_t i = 0; i < j["rules"].size(); ++i) {
      const auto& r = j["rules"][i];
      const std::string f = "rules[" + std::to_string(i) + "]";
      for (const char* key : {"a", "b", "mean", "covariance"})
        if (!r.contains(key)) throw InvalidInput("spec field '" + f + "." + key + "': missing");
      CooccurrenceRule rule;
      rule.a = cls(r["a"], f + ".a");
      rule.b = cls(r["b"], f + ".b");
      rule.mean = vec_from_json(r["mean"], f + ".mean");
      const auto& cv = r["covariance"];
      if (!cv.is_array() || cv.size() != 3) throw InvalidInput("spec field '" + f + ".covariance': expected 3x3");
      for (int a = 0; a < 3; ++a) rule.covariance.row(a) = vec_from_json(cv[a], f + ".covariance").transpose();
      if (r.contains("probability")) {
        if (!r["probability"].is_number()) throw InvalidInput("spec field '" + f + ".probability': expected a number");
        rule.probability = r["probability"].get<double>();
      }
      s.rules.push_back(rule);
    }
  }
  if (j.contains("confusable")) {
    if (!j["confusable"].is_array()) throw InvalidInput("spec field 'confusable': expected an array");
    s.confusable.clear();
    for (std::size_t i = 0; i < j["confusable"].size(); ++i) {
      const auto& p = j["confusable"][i];
      const std::string f = "confusable[" + std::to_string(i) + "]";
      if (!p.is_array() || p.size() != 2) throw InvalidInput("spec field '" + f + "': expected a pair");
      s.confusable.emplace_back(cls(p[0], f + "[0]"), cls(p[1], f + "[1]"));
    }
  }
  if (j.contains("room")) s.room = vec_from_json(j["room"], "room");
  num("ambiguity_rate", s.ambiguity_rate);
  num("feature_dim", s.feature_dim);
  num("proposals_per_scene", s.proposals_per_scene);
  num("min_proposals_per_object", s.min_proposals_per_object);
  num("max_proposals_per_object", s.max_proposals_per_object);
  num("center_jitter", s.center_jitter);
  num("size_jitter", s.size_jitter);
  num("feature_noise", s.feature_noise);
  num("incomplete_rate", s.incomplete_rate);
  num("incomplete_scale", s.incomplete_scale);
  num("group_style", s.group_style);
  num("style_dims", s.style_dims);
  num("clutter_noise", s.clutter_noise);
  num("placement_attempts", s.placement_attempts);
  num("prototype_seed", s.prototype_seed);
  validate(s);
  return s;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string spec_hash(const SceneSpec& s) { return hex64(fnv1a64(to_json(s).dump())); }

// ---------------------------------------------------------------------------
// Scenes

struct SceneProposal {
  Vec3 center = Vec3::Zero();
  Vec3 size = Vec3::Ones();
  nn::Vector feature;
  bool ambiguous = false;
  bool incomplete = false;
  int source = -1;  // gt index, -1 for clutter

  Box3D box() const { return Box3D{center, size, -1, 0.0}; }
};

struct SyntheticScene {
  std::uint64_t seed = 0;
  std::vector<Box3D> gt;
  std::vector<SceneProposal> proposals;

  std::vector<Box3D> proposal_boxes() const {
    std::vector<Box3D> b;
    b.reserve(proposals.size());
    for (const auto& p : proposals) b.push_back(p.box());
    return b;
  }
};

class GenerationError : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

// Coordinates live on a 2^-20 m grid so that translating a scene by a
// grid-aligned vector is exact in binary floating point.
inline constexpr double kCoordinateQuantum = 1.0 / 1048576.0;

inline double quantize(double v) { return std::round(v / kCoordinateQuantum) * kCoordinateQuantum; }
inline Vec3 quantize(const Vec3& v) { return Vec3(quantize(v.x()), quantize(v.y()), quantize(v.z())); }

// Feature prototypes: one per class, one shared per confusable pair, one for
// clutter. Fixed by the spec's prototype seed.
struct Prototypes {
  std::vector<nn::Vector> per_class;
  std::vector<nn::Vector> ambiguous;  // per confusable pair
  nn::Vector clutter;
  Eigen::MatrixXd style_basis;        // feature_dim x style_dims, orthonormal columns
};

inline Prototypes make_prototypes(const SceneSpec& s) {
  Rng rng = make_rng(s.prototype_seed, "prototypes");
  std::normal_distribution<double> normal(0.0, 1.0);
  auto draw = [&] {
    nn::Vector v(s.feature_dim);
    for (int k = 0; k < s.feature_dim; ++k) v(k) = normal(rng);
    return v;
  };
  Prototypes p;
  for (std::size_t c = 0; c < s.classes.size(); ++c) p.per_class.push_back(draw());
  for (std::size_t c = 0; c < s.confusable.size(); ++c) p.ambiguous.push_back(draw());
  p.clutter = draw() * 0.5;
  Eigen::MatrixXd g(s.feature_dim, s.style_dims);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = normal(rng);
  if (s.style_dims > 0) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    p.style_basis = qr.householderQ() * Eigen::MatrixXd::Identity(s.feature_dim, s.style_dims);
  } else {
    p.style_basis = Eigen::MatrixXd::Zero(s.feature_dim, 0);
  }
  return p;
}

inline int confusable_pair_of(const SceneSpec& s, int cls) {
  for (std::size_t i = 0; i < s.confusable.size(); ++i)
    if (s.confusable[i].first == cls || s.confusable[i].second == cls) return static_cast<int>(i);
  return -1;
}

namespace detail {
inline bool footprint_overlaps(const Box3D& a, const Box3D& b, double gap) {
  for (int k = 0; k < 2; ++k)
    if (std::abs(a.center[k] - b.center[k]) >= 0.5 * (a.size[k] + b.size[k]) + gap) return false;
  return true;
}
}  // namespace detail

inline SyntheticScene generate_scene(const SceneSpec& spec, const Prototypes& protos, std::uint64_t seed) {
  Rng rng = make_rng(seed, "scene");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int C = static_cast<int>(spec.classes.size());

  struct Placed {
    Box3D box;
    int group;
  };
  std::vector<Placed> objects;
  auto sized = [&](int cls) {
    Vec3 sz = spec.classes[cls].size;
    for (int k = 0; k < 3; ++k) sz[k] *= 1.0 + spec.size_jitter * (2.0 * unit(rng) - 1.0);
    return sz;
  };
  auto fits = [&](const Box3D& b) {
    for (const auto& o : objects)
      if (detail::footprint_overlaps(o.box, b, 0.05)) return false;
    return true;
  };

  // Capacity check: every object the rules could request must fit on the
  // floor with room to spare, otherwise the spec cannot be honored.
  double floor_needed = 0.0;
  for (const auto& root : spec.roots) {
    if (root.probability <= 0.0) continue;
    const Vec3& sz = spec.classes[root.cls].size;
    floor_needed += sz.x() * sz.y();
    for (const auto& rule : spec.rules)
      if (rule.a == root.cls && rule.probability > 0.0)
        floor_needed += spec.classes[rule.b].size.x() * spec.classes[rule.b].size.y();
  }
  const double floor_area = spec.room.x() * spec.room.y();
  if (floor_needed > 0.5 * floor_area)
    throw GenerationError("room too small: requested objects need " + std::to_string(floor_needed) +
                          " m^2 of floor, at most half of the room's " + std::to_string(floor_area) +
                          " m^2 may be occupied");

  int group = 0;
  for (const auto& root : spec.roots) {
    if (unit(rng) >= root.probability) continue;
    Box3D b;
    b.label = root.cls;
    b.size = sized(root.cls);
    bool placed = false;
    for (int attempt = 0; attempt < spec.placement_attempts && !placed; ++attempt) {
      for (int k = 0; k < 2; ++k) {
        const double margin = 0.5 * b.size[k];
        if (spec.room[k] <= 2.0 * margin)
          throw GenerationError("room too small for " + spec.classes[root.cls].name);
        b.center[k] = margin + unit(rng) * (spec.room[k] - 2.0 * margin);
      }
      b.center.z() = 0.5 * b.size.z();
      placed = fits(b);
    }
    if (!placed) continue;  // crowded draw: the group is skipped
    const int root_index = static_cast<int>(objects.size());
    objects.push_back({b, group});
    for (const auto& rule : spec.rules) {
      if (rule.a != root.cls || unit(rng) >= rule.probability) continue;
      const Eigen::Matrix3d L = rule.covariance.llt().matrixL();
      for (int attempt = 0; attempt < spec.placement_attempts; ++attempt) {
        const Vec3 z(normal(rng), normal(rng), normal(rng));
        Box3D d;
        d.label = rule.b;
        d.size = sized(rule.b);
        d.center = objects[root_index].box.center + rule.mean + L * z;
        if (fits(d)) {
          objects.push_back({d, group});
          break;
        }
      }
    }
    ++group;
  }

  SyntheticScene scene;
  scene.seed = seed;
  for (const auto& o : objects) {
    Box3D b = o.box;
    b.center = quantize(b.center);
    b.size = quantize(b.size);
    scene.gt.push_back(b);
  }

  std::vector<nn::Vector> styles(static_cast<std::size_t>(group));
  for (auto& st : styles) {
    nn::Vector coeff(spec.style_dims);
    for (int k = 0; k < spec.style_dims; ++k) coeff(k) = normal(rng) * spec.group_style;
    st = protos.style_basis * coeff;
  }
  auto noise = [&](double sd) {
    nn::Vector v(spec.feature_dim);
    for (int k = 0; k < spec.feature_dim; ++k) v(k) = normal(rng) * sd;
    return v;
  };

  std::uniform_int_distribution<int> count(spec.min_proposals_per_object, spec.max_proposals_per_object);
  for (std::size_t g = 0; g < scene.gt.size(); ++g) {
    const Box3D& gt = scene.gt[g];
    const int cls = gt.label;
    const int pair = confusable_pair_of(spec, cls);
    const bool ambiguous = pair >= 0 && unit(rng) < spec.ambiguity_rate;
    const nn::Vector& proto = ambiguous ? protos.ambiguous[pair] : protos.per_class[cls];
    const int n = count(rng);
    for (int k = 0; k < n; ++k) {
      SceneProposal p;
      p.source = static_cast<int>(g);
      p.ambiguous = ambiguous;
      p.incomplete = k > 0 && unit(rng) < spec.incomplete_rate;
      const double jitter = spec.center_jitter * (p.incomplete ? 3.0 : 1.0);
      for (int attempt = 0;; ++attempt) {
        for (int a = 0; a < 3; ++a) p.center[a] = gt.center[a] + normal(rng) * jitter * gt.size[a];
        for (int a = 0; a < 3; ++a) p.size[a] = gt.size[a] * (1.0 + 0.05 * normal(rng));
        p.size = p.size.cwiseMax(0.05);
        p.center = quantize(p.center);
        p.size = quantize(p.size);
        // The first proposal of every object must overlap it (IoU > 0.25).
        if (k > 0 || iou3d(p.box(), gt) > kObjectnessIou) break;
        if (attempt + 1 >= spec.placement_attempts) {
          p.center = gt.center;
          p.size = gt.size;
          break;
        }
      }
      const double scale = p.incomplete ? spec.incomplete_scale : 1.0;
      const double sd = spec.feature_noise * (p.incomplete ? 2.0 : 1.0);
      p.feature = scale * proto + styles[static_cast<std::size_t>(objects[g].group)] + noise(sd);
      scene.proposals.push_back(std::move(p));
    }
  }
  if (static_cast<int>(scene.proposals.size()) > spec.proposals_per_scene)
    throw GenerationError("proposal budget " + std::to_string(spec.proposals_per_scene) + " too small for " +
                          std::to_string(scene.proposals.size()) + " object proposals");
  while (static_cast<int>(scene.proposals.size()) < spec.proposals_per_scene) {
    SceneProposal p;
    for (int a = 0; a < 3; ++a) p.size[a] = 0.3 + 0.5 * unit(rng);
    for (int a = 0; a < 2; ++a) p.center[a] = unit(rng) * spec.room[a];
    p.center.z() = 0.15 + unit(rng) * 1.0;
    p.center = quantize(p.center);
    p.size = quantize(p.size);
    p.feature = protos.clutter + noise(spec.clutter_noise);
    scene.proposals.push_back(std::move(p));
  }
  std::shuffle(scene.proposals.begin(), scene.proposals.end(), rng);
  (void)C;
  return scene;
}

inline SyntheticScene generate_scene(const SceneSpec& spec, std::uint64_t seed) {
  return generate_scene(spec, make_prototypes(spec), seed);
}

// Scene i of a dataset draws from its own stream derived from (seed, i).
inline std::vector<SyntheticScene> generate_scenes(const SceneSpec& spec, int count, std::uint64_t seed) {
  validate(spec);
  const Prototypes protos = make_prototypes(spec);
  std::vector<SyntheticScene> out;
  out.reserve(static_cast<std::size_t>(std::max(count, 0)));
  for (int i = 0; i < count; ++i) out.push_back(generate_scene(spec, protos, derive_seed(seed, "scene", static_cast<std::uint64_t>(i))));
  return out;
}

// ---------------------------------------------------------------------------
// Dataset file: one JSON header line, then one scene per line.

inline constexpr int kDatasetVersion = 1;

struct Dataset {
  std::string spec_hash;
  int feature_dim = 128;
  std::vector<ClassInfo> classes;
  std::vector<SyntheticScene> scenes;

  std::vector<std::string> class_names() const {
    std::vector<std::string> n;
    for (const auto& c : classes) n.push_back(c.name);
    return n;
  }
};

inline Dataset make_dataset(const SceneSpec& spec, std::vector<SyntheticScene> scenes) {
  return Dataset{spec_hash(spec), spec.feature_dim, spec.classes, std::move(scenes)};
}

inline nlohmann::json scene_to_json(const SyntheticScene& s) {
  nlohmann::json j;
  j["seed"] = s.seed;
  j["gt"] = nlohmann::json::array();
  for (const auto& b : s.gt) j["gt"].push_back({{"center", vec_json(b.center)}, {"size", vec_json(b.size)}, {"label", b.label}});
  j["proposals"] = nlohmann::json::array();
  for (const auto& p : s.proposals) {
    std::vector<double> f(p.feature.data(), p.feature.data() + p.feature.size());
    j["proposals"].push_back({{"center", vec_json(p.center)},
                              {"size", vec_json(p.size)},
                              {"feature", f},
                              {"ambiguous", p.ambiguous},
                              {"incomplete", p.incomplete},
                              {"source", p.source}});
  }
  return j;
}

inline void write_dataset(const Dataset& d, std::ostream& os) {
  nlohmann::json header;
  header["format"] = "disarm-scenes";
  header["version"] = kDatasetVersion;
  header["spec_hash"] = d.spec_hash;
  header["feature_dim"] = d.feature_dim;
  header["scenes"] = d.scenes.size();
  for (const auto& c : d.classes) header["classes"].push_back({{"name", c.name}, {"size", vec_json(c.size)}});
  os << header.dump() << "\n";
  for (const auto& s : d.scenes) os << scene_to_json(s).dump() << "\n";
}

inline void write_dataset(const Dataset& d, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path + " for writing");
  write_dataset(d, os);
  if (!os) throw DataError("write failed: " + path);
}

namespace detail {
struct RecordReader {
  std::size_t record;
  std::size_t line;

  [[noreturn]] void fail(const std::string& field, const std::string& why) const {
    throw DataError("record " + std::to_string(record) + " (line " + std::to_string(line) + "): field " + field +
                    ": " + why);
  }
  const nlohmann::json& at(const nlohmann::json& j, const char* key, const std::string& path) const {
    if (!j.is_object() || !j.contains(key)) fail(path + key, "missing");
    return j[key];
  }
  double number(const nlohmann::json& j, const std::string& path) const {
    if (!j.is_number()) fail(path, "expected a number");
    return j.get<double>();
  }
  Vec3 vec3(const nlohmann::json& j, const std::string& path) const {
    if (!j.is_array() || j.size() != 3) fail(path, "expected 3 numbers");
    return Vec3(number(j[0], path + "[0]"), number(j[1], path + "[1]"), number(j[2], path + "[2]"));
  }
};
}  // namespace detail

inline SyntheticScene scene_from_json(const nlohmann::json& j, int feature_dim, std::size_t record, std::size_t line) {
  detail::RecordReader r{record, line};
  SyntheticScene s;
  const auto& seed = r.at(j, "seed", "");
  if (!seed.is_number_unsigned() && !seed.is_number_integer()) r.fail("seed", "expected an integer");
  s.seed = seed.get<std::uint64_t>();
  const auto& gt = r.at(j, "gt", "");
  if (!gt.is_array()) r.fail("gt", "expected an array");
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const std::string p = "gt[" + std::to_string(i) + "].";
    Box3D b;
    b.center = r.vec3(r.at(gt[i], "center", p), p + "center");
    b.size = r.vec3(r.at(gt[i], "size", p), p + "size");
    const auto& label = r.at(gt[i], "label", p);
    if (!label.is_number_integer()) r.fail(p + "label", "expected an integer");
    b.label = label.get<int>();
    s.gt.push_back(b);
  }
  const auto& props = r.at(j, "proposals", "");
  if (!props.is_array()) r.fail("proposals", "expected an array");
  for (std::size_t i = 0; i < props.size(); ++i) {
    const std::string p = "proposals[" + std::to_string(i) + "].";
    SceneProposal q;
    q.center = r.vec3(r.at(props[i], "center", p), p + "center");
    q.size = r.vec3(r.at(props[i], "size", p), p + "size");
    const auto& f = r.at(props[i], "feature", p);
    if (!f.is_array() || static_cast<int>(f.size()) != feature_dim)
      r.fail(p + "feature", "expected an array of " + std::to_string(feature_dim) + " numbers");
    q.feature.resize(feature_dim);
    for (int k = 0; k < feature_dim; ++k) q.feature(k) = r.number(f[static_cast<std::size_t>(k)], p + "feature[" + std::to_string(k) + "]");
    const auto& amb = r.at(props[i], "ambiguous", p);
    const auto& inc = r.at(props[i], "incomplete", p);
    if (!amb.is_boolean()) r.fail(p + "ambiguous", "expected a boolean");
    if (!inc.is_boolean()) r.fail(p + "incomplete", "expected a boolean");
    q.ambiguous = amb.get<bool>();
    q.incomplete = inc.get<bool>();
    const auto& src = r.at(props[i], "source", p);
    if (!src.is_number_integer()) r.fail(p + "source", "expected an integer");
    q.source = src.get<int>();
    s.proposals.push_back(std::move(q));
  }
  return s;
}

inline Dataset read_dataset(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw DataError("dataset: missing header line");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("dataset header (line 1): ") + e.what());
  }
  if (!header.is_object() || header.value("format", "") != "disarm-scenes")
    throw DataError("dataset header (line 1): not a disarm-scenes file");
  if (header.value("version", 0) != kDatasetVersion)
    throw DataError("dataset header (line 1): unsupported version");
  Dataset d;
  d.spec_hash = header.value("spec_hash", "");
  d.feature_dim = header.value("feature_dim", 0);
  if (d.feature_dim <= 0) throw DataError("dataset header (line 1): field feature_dim: expected a positive integer");
  if (!header.contains("classes") || !header["classes"].is_array())
    throw DataError("dataset header (line 1): field classes: expected an array");
  for (std::size_t i = 0; i < header["classes"].size(); ++i) {
    const auto& c = header["classes"][i];
    detail::RecordReader r{0, 1};
    if (!c.contains("name") || !c["name"].is_string())
      throw DataError("dataset header (line 1): field classes[" + std::to_string(i) + "].name: expected a string");
    d.classes.push_back({c["name"].get<std::string>(), r.vec3(r.at(c, "size", "classes[" + std::to_string(i) + "]."), "classes[" + std::to_string(i) + "].size")});
  }
  std::size_t lineno = 1;
  std::size_t record = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("record " + std::to_string(record) + " (line " + std::to_string(lineno) +
                      "): malformed or truncated record: " + e.what());
    }
    d.scenes.push_back(scene_from_json(j, d.feature_dim, record, lineno));
    ++record;
  }
  if (header.contains("scenes") && header["scenes"].is_number_integer() &&
      header["scenes"].get<std::size_t>() != d.scenes.size())
    throw DataError("dataset: header announces " + std::to_string(header["scenes"].get<std::size_t>()) +
                    " scenes but record " + std::to_string(d.scenes.size()) + " is missing");
  return d;
}

inline Dataset read_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path);
  return read_dataset(is);
}

}  // namespace disarm
