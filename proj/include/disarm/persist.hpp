#pragma once

// A trained model on disk: a directory with one checkpoint file per network
// and model.json naming which file is which plus the configuration.

#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"

#include "disarm/errors.hpp"
#include "disarm/model.hpp"
#include "disarm/nn.hpp"

namespace disarm {

inline constexpr int kModelManifestVersion = 1;

inline std::string_view tag(WeightNormalization n) { return n == WeightNormalization::softmax ? "softmax" : "eq5"; }
inline std::string_view tag(AnchorReduction r) { return r == AnchorReduction::sum ? "sum" : "min"; }
inline std::string_view tag(ObjectnessLossKind k) { return k == ObjectnessLossKind::l2 ? "l2" : "bce"; }

inline nlohmann::json to_json(const ModelConfig& c) {
  nlohmann::json j;
  j["feature_dim"] = c.disarm.feature_dim;
  j["anchors"] = c.disarm.anchors;
  j["candidate_keep"] = c.disarm.candidate_keep;
  j["softmax_mode"] = tag(c.disarm.normalization);
  j["anchor_reduction"] = tag(c.disarm.reduction);
  j["weighting"] = tag(c.disarm.weighting);
  j["strategy"] = tag(c.strategy);
  j["local_neighbors"] = c.local_neighbors;
  j["intermediate_pool"] = c.intermediate_pool;
  j["context"] = c.use_context;
  j["adapter"] = c.use_adapter;
  j["objectness_loss"] = tag(c.objectness_loss);
  j["class_hidden"] = c.class_hidden;
  j["nms_iou"] = c.nms_iou;
  return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  auto field = [&](const char* key) -> const nlohmann::json& {
    if (!j.contains(key)) throw DataError("model config field '" + std::string(key) + "': missing");
    return j[key];
  };
  try {
    c.disarm.feature_dim = field("feature_dim").get<int>();
    c.disarm.anchors = field("anchors").get<int>();
    c.disarm.candidate_keep = field("candidate_keep").get<int>();
    const auto sm = field("softmax_mode").get<std::string>();
    if (sm != "softmax" && sm != "eq5") throw DataError("model config field 'softmax_mode': unknown value " + sm);
    c.disarm.normalization = sm == "softmax" ? WeightNormalization::softmax : WeightNormalization::sum;
    const auto red = field("anchor_reduction").get<std::string>();
    if (red != "sum" && red != "min") throw DataError("model config field 'anchor_reduction': unknown value " + red);
    c.disarm.reduction = red == "sum" ? AnchorReduction::sum : AnchorReduction::min;
    const auto w = parse_weighting(field("weighting").get<std::string>());
    if (!w) throw DataError("model config field 'weighting': unknown value");
    c.disarm.weighting = *w;
    const auto s = parse_strategy(field("strategy").get<std::string>());
    if (!s) throw DataError("model config field 'strategy': unknown value");
    c.strategy = *s;
    c.local_neighbors = field("local_neighbors").get<int>();
    c.intermediate_pool = field("intermediate_pool").get<int>();
    c.use_context = field("context").get<bool>();
    c.use_adapter = field("adapter").get<bool>();
    const auto ol = field("objectness_loss").get<std::string>();
    if (ol != "l2" && ol != "bce") throw DataError("model config field 'objectness_loss': unknown value " + ol);
    c.objectness_loss = ol == "l2" ? ObjectnessLossKind::l2 : ObjectnessLossKind::bce;
    c.class_hidden = field("class_hidden").get<int>();
    c.nms_iou = field("nms_iou").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("model config: ") + e.what());
  }
  return c;
}

inline std::string checkpoint_file(Group g) { return std::string(group_name(g)) + ".darm"; }

inline void save_model(const std::filesystem::path& dir, const Model& m) {
  std::filesystem::create_directories(dir);
  nlohmann::json j;
  j["format"] = "disarm-model";
  j["version"] = kModelManifestVersion;
  j["config"] = to_json(m.config);
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& c : m.classes) classes.push_back({{"name", c.name}, {"size", {c.size.x(), c.size.y(), c.size.z()}}});
  j["classes"] = classes;
  nlohmann::json files;
  for (auto g : kAllGroups) {
    files[std::string(group_name(g))] = checkpoint_file(g);
    nn::save_checkpoint((dir / checkpoint_file(g)).string(), m.net(g));
  }
  j["checkpoints"] = files;
  std::ofstream os(dir / "model.json");
  if (!os) throw DataError("cannot write " + (dir / "model.json").string());
  os << j.dump(2) << "\n";
}

inline Model load_model(const std::filesystem::path& dir) {
  std::ifstream is(dir / "model.json");
  if (!is) throw DataError("cannot read " + (dir / "model.json").string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw DataError((dir / "model.json").string() + ": " + e.what());
  }
  if (j.value("format", "") != "disarm-model") throw DataError((dir / "model.json").string() + ": not a model manifest");
  if (j.value("version", 0) != kModelManifestVersion)
    throw DataError((dir / "model.json").string() + ": unsupported version");
  Model m;
  m.config = model_config_from_json(j.at("config"));
  for (const auto& c : j.at("classes")) {
    const auto& s = c.at("size");
    m.classes.push_back({c.at("name").get<std::string>(), Vec3(s[0].get<double>(), s[1].get<double>(), s[2].get<double>())});
  }
  for (auto g : kAllGroups) {
    const std::string key(group_name(g));
    if (!j.at("checkpoints").contains(key)) throw DataError("model manifest: no checkpoint listed for " + key);
    m.net(g) = nn::load_checkpoint((dir / j["checkpoints"][key].get<std::string>()).string());
  }
  // The checkpoints must realize the configured shapes.
  const int F = m.config.disarm.feature_dim;
  const Model expected = Model::create(m.config, m.classes, 0);
  for (auto g : kAllGroups) {
    const auto& a = m.net(g);
    const auto& b = expected.net(g);
    bool same = a.input_dim() == b.input_dim() && a.layer_count() == b.layer_count();
    for (std::size_t k = 0; same && k < a.layer_count(); ++k)
      same = a.layers()[k].in_dim() == b.layers()[k].in_dim() && a.layers()[k].out_dim() == b.layers()[k].out_dim() &&
             a.layers()[k].activation == b.layers()[k].activation;
    if (!same)
      throw DataError("config mismatch: checkpoint for " + std::string(group_name(g)) +
                      " does not match feature_dim=" + std::to_string(F));
  }
  return m;
}

}  // namespace disarm
