#include <gtest/gtest.h>

#include <set>

#include "disarm/ablation.hpp"

using namespace disarm;

namespace {

SceneSpec small_spec() {
  SceneSpec s = default_scene_spec();
  s.feature_dim = 16;
  s.style_dims = 4;
  s.proposals_per_scene = 36;
  return s;
}

AblationConfig small_config() {
  AblationConfig c;
  c.model.disarm.feature_dim = 16;
  c.model.disarm.anchors = 5;
  c.model.disarm.candidate_keep = 18;
  c.model.local_neighbors = 5;
  c.train.optimizer = OptimizerKind::adam;
  c.train.lr = 0.003;
  c.train.epochs = 3;
  c.train.batch_size = 4;
  c.seeds = {4};
  return c;
}

std::string message_of(const nlohmann::json& j) {
  try {
    parse_matrix(j);
  } catch (const InvalidInput& e) {
    return e.what();
  }
  return "";
}

// Model whose weighting nets are random, with the given mode.
Model weighted_model(WeightingMode w, std::uint64_t seed) {
  ModelConfig mc = small_config().model;
  mc.disarm.weighting = w;
  return Model::create(mc, small_spec().classes, seed);
}

bool same_detections(const Model& a, const Model& b, const std::vector<SyntheticScene>& scenes) {
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    Rng r1(s), r2(s);
    const auto da = detect(a, scenes[s], r1), db = detect(b, scenes[s], r2);
    if (da.boxes.size() != db.boxes.size()) return false;
    for (std::size_t k = 0; k < da.boxes.size(); ++k)
      if (da.boxes[k].score != db.boxes[k].score || da.boxes[k].label != db.boxes[k].label) return false;
  }
  return true;
}

}  // namespace

TEST(Matrix, BuiltinCoversEveryRowOnce) {
  const auto m = builtin_matrix();
  std::set<std::string> names;
  for (const auto& c : m.cells) names.insert(c.name());
  EXPECT_EQ(names.size(), m.cells.size());
  for (auto s : kAllStrategies) {
    int n = 0;
    for (const auto& c : m.cells) n += c.context && c.strategy == s && c.weighting == WeightingMode::full;
    EXPECT_EQ(n, 1) << tag(s);
  }
  for (auto w : kAllWeightings) {
    int n = 0;
    for (const auto& c : m.cells) n += c.context && c.strategy == SamplingStrategy::objectness_fps && c.weighting == w;
    EXPECT_EQ(n, 1) << tag(w);
  }
  int no_context = 0;
  for (const auto& c : m.cells) no_context += !c.context;
  EXPECT_EQ(no_context, 1);
  EXPECT_EQ(m.cells.size(), 15u);
}

TEST(Matrix, JsonRoundTripAndCrossProduct) {
  const auto m = builtin_matrix();
  EXPECT_EQ(parse_matrix(to_json(m)).cells, m.cells);
  const auto x = parse_matrix({{"strategies", {"Random", "DFPS"}}, {"weightings", {"Full", "Unweighted"}}});
  ASSERT_EQ(x.cells.size(), 4u);
  EXPECT_EQ(x.cells[3].name(), "DFPS/Unweighted");
}

TEST(Matrix, UnknownTagsListTheValidOnes) {
  const auto s = message_of({{"cells", {{{"strategy", "Nearest"}}}}});
  EXPECT_NE(s.find("cells[0].strategy"), std::string::npos) << s;
  EXPECT_NE(s.find("ObjectnessFPS"), std::string::npos) << s;
  const auto w = message_of({{"weightings", {"Full", "Heavy"}}});
  EXPECT_NE(w.find("weightings[1]"), std::string::npos) << w;
  EXPECT_NE(w.find("SpatialOnly"), std::string::npos) << w;
  EXPECT_NE(message_of(nlohmann::json::object()).find("no cells"), std::string::npos);
}

TEST(Invariance, UnweightedIgnoresWeightingNets) {
  const auto scenes = generate_scenes(small_spec(), 4, 3);
  Model a = weighted_model(WeightingMode::unweighted, 1);
  Model b = a;
  Rng rng(8);
  b.nets.tau.init_uniform(rng);
  b.nets.sigma.init_uniform(rng);
  b.nets.phi.init_uniform(rng);
  EXPECT_TRUE(same_detections(a, b, scenes));
}

TEST(Invariance, SpatialOnlyIgnoresSigmaAndFeatureOnlyIgnoresTau) {
  const auto scenes = generate_scenes(small_spec(), 4, 5);
  Rng rng(9);
  {
    Model a = weighted_model(WeightingMode::spatial_only, 2);
    Model b = a;
    b.nets.sigma.init_uniform(rng);
    EXPECT_TRUE(same_detections(a, b, scenes));
    b.nets.tau.init_uniform(rng);
    EXPECT_FALSE(same_detections(a, b, scenes));
  }
  {
    Model a = weighted_model(WeightingMode::feature_only, 2);
    Model b = a;
    b.nets.tau.init_uniform(rng);
    EXPECT_TRUE(same_detections(a, b, scenes));
    b.nets.sigma.init_uniform(rng);
    EXPECT_FALSE(same_detections(a, b, scenes));
  }
}

TEST(Run, SingleCellMatchesThePlainPipeline) {
  const auto spec = small_spec();
  const auto train_s = generate_scenes(spec, 10, 1), test_s = generate_scenes(spec, 5, 2);
  const auto cfg = small_config();
  AblationMatrix m;
  m.cells = {AblationCell{}};
  const auto r = run_ablation(train_s, test_s, spec.classes, m, cfg);
  ASSERT_EQ(r.size(), 1u);
  ASSERT_TRUE(r[0].ok) << r[0].error;

  Model model = Model::create(cfg.model, spec.classes, 4);
  TrainConfig tc = cfg.train;
  tc.seed = 4;
  train(model, train_s, tc);
  const auto e = evaluate(model, test_s, 4);
  EXPECT_EQ(r[0].map25, e.map25.mAP);
  EXPECT_EQ(r[0].map50, e.map50.mAP);
  EXPECT_EQ(r[0].ambiguous_accuracy, e.ambiguous_accuracy);
}

TEST(Run, ParallelJobsGiveTheSameTable) {
  const auto spec = small_spec();
  const auto train_s = generate_scenes(spec, 8, 1), test_s = generate_scenes(spec, 4, 2);
  auto cfg = small_config();
  cfg.seeds = {1, 2};
  AblationMatrix m;
  m.cells = {{SamplingStrategy::random, WeightingMode::full, true},
             {SamplingStrategy::local, WeightingMode::full, true},
             {SamplingStrategy::objectness_fps, WeightingMode::unweighted, false}};
  const auto serial = run_ablation(train_s, test_s, spec.classes, m, cfg);
  cfg.jobs = 3;
  const auto parallel = run_ablation(train_s, test_s, spec.classes, m, cfg);
  EXPECT_EQ(format_results_table(serial), format_results_table(parallel));
  EXPECT_EQ(serial.size(), 6u);
  EXPECT_EQ(serial[3].seed, 2u);
  EXPECT_EQ(serial[3].cell, m.cells[0]);
}

TEST(Run, FailedCellIsMarkedAndOthersContinue) {
  const auto spec = small_spec();
  const auto train_s = generate_scenes(spec, 8, 1), test_s = generate_scenes(spec, 4, 2);
  auto cfg = small_config();
  cfg.train.optimizer = OptimizerKind::sgd;
  cfg.train.lr = 1e300;
  AblationMatrix m;
  m.cells = {AblationCell{}, {SamplingStrategy::objectness_fps, WeightingMode::full, false}};
  const auto r = run_ablation(train_s, test_s, spec.classes, m, cfg);
  ASSERT_EQ(r.size(), 2u);
  EXPECT_FALSE(r[0].ok);
  EXPECT_FALSE(r[0].error.empty());
  const auto table = format_results_table(r);
  EXPECT_NE(table.find("failed\tnan"), std::string::npos) << table;
  EXPECT_NE(format_results_kv(r, {}).find("status=failed"), std::string::npos);
}

TEST(Run, RejectsEmptyInputs) {
  const auto spec = small_spec();
  const auto s = generate_scenes(spec, 2, 1);
  EXPECT_THROW(run_ablation({}, s, spec.classes, builtin_matrix(), small_config()), InvalidInput);
  EXPECT_THROW(run_ablation(s, s, spec.classes, AblationMatrix{}, small_config()), InvalidInput);
}
