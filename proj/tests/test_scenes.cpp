#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "disarm/scenes.hpp"

using namespace disarm;

namespace {

// Two classes in a large room: one root with probability p_root, one child
// rule with probability p_rule at a fixed mean offset.
SceneSpec pair_spec(double p_root, double p_rule) {
  SceneSpec s;
  s.classes = {{"a", Vec3(1.0, 1.0, 1.0)}, {"b", Vec3(0.5, 0.5, 0.5)}};
  s.roots = {{0, p_root}};
  CooccurrenceRule r;
  r.a = 0;
  r.b = 1;
  r.mean = Vec3(1.5, 0.5, -0.25);
  r.covariance = Eigen::Matrix3d::Identity() * 0.01;
  r.probability = p_rule;
  s.rules = {r};
  s.room = Vec3(8, 8, 3);
  s.feature_dim = 16;
  s.style_dims = 4;
  s.proposals_per_scene = 12;
  return s;
}

std::string dump(const Dataset& d) {
  std::ostringstream os;
  write_dataset(d, os);
  return os.str();
}

Dataset parse(const std::string& text) {
  std::istringstream is(text);
  return read_dataset(is);
}

}  // namespace

TEST(Generation, DeterministicPerSeed) {
  const auto spec = default_scene_spec();
  const auto a = generate_scenes(spec, 5, 42);
  const auto b = generate_scenes(spec, 5, 42);
  EXPECT_EQ(dump(make_dataset(spec, a)), dump(make_dataset(spec, b)));
  EXPECT_NE(dump(make_dataset(spec, a)), dump(make_dataset(spec, generate_scenes(spec, 5, 43))));
}

TEST(Generation, PrefixStableAcrossCounts) {
  const auto spec = default_scene_spec();
  const auto a = generate_scenes(spec, 3, 9);
  const auto b = generate_scenes(spec, 6, 9);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(scene_to_json(a[i]), scene_to_json(b[i]));
}

TEST(Generation, ProposalBudgetAndShapes) {
  const auto spec = default_scene_spec();
  for (const auto& s : generate_scenes(spec, 20, 1)) {
    EXPECT_EQ(static_cast<int>(s.proposals.size()), spec.proposals_per_scene);
    for (const auto& p : s.proposals) {
      EXPECT_EQ(p.feature.size(), spec.feature_dim);
      EXPECT_TRUE((p.size.array() > 0).all());
      EXPECT_LT(p.source, static_cast<int>(s.gt.size()));
    }
  }
}

TEST(Generation, AmbiguityRateZeroAndOne) {
  auto spec = default_scene_spec();
  spec.ambiguity_rate = 0.0;
  for (const auto& s : generate_scenes(spec, 50, 2))
    for (const auto& p : s.proposals) EXPECT_FALSE(p.ambiguous);
  spec.ambiguity_rate = 1.0;
  int confusable = 0;
  for (const auto& s : generate_scenes(spec, 50, 2))
    for (const auto& p : s.proposals) {
      if (p.source < 0) continue;
      const bool in_pair = confusable_pair_of(spec, s.gt[p.source].label) >= 0;
      EXPECT_EQ(p.ambiguous, in_pair);
      confusable += in_pair;
    }
  EXPECT_GT(confusable, 0);
}

TEST(Generation, ConfusablePairsShareAPrototype) {
  auto spec = default_scene_spec();
  spec.ambiguity_rate = 1.0;
  spec.feature_noise = 0.0;
  spec.group_style = 0.0;
  spec.incomplete_rate = 0.0;
  const Prototypes protos = make_prototypes(spec);
  for (const auto& s : generate_scenes(spec, 100, 3))
    for (const auto& p : s.proposals) {
      if (p.source < 0) continue;
      const int pair = confusable_pair_of(spec, s.gt[p.source].label);
      if (pair < 0) {
        EXPECT_EQ(p.feature, protos.per_class[s.gt[p.source].label]);
      } else {
        EXPECT_EQ(p.feature, protos.ambiguous[pair]);
      }
    }
}

TEST(Generation, EveryObjectHasAnOverlappingProposal) {
  const auto spec = default_scene_spec();
  for (const auto& s : generate_scenes(spec, 200, 4))
    for (std::size_t g = 0; g < s.gt.size(); ++g) {
      double best = 0.0;
      for (const auto& p : s.proposals)
        if (p.source == static_cast<int>(g)) best = std::max(best, iou3d(p.box(), s.gt[g]));
      EXPECT_GT(best, 0.25) << "scene " << s.seed << " object " << g;
    }
}

TEST(Generation, CooccurrenceFrequenciesMatchRules) {
  const int n = 1000;
  const auto spec = pair_spec(0.4, 0.7);
  int roots = 0, children = 0;
  Vec3 offset_sum = Vec3::Zero();
  for (const auto& s : generate_scenes(spec, n, 6)) {
    if (s.gt.empty()) continue;
    ++roots;
    ASSERT_EQ(s.gt[0].label, 0);
    if (s.gt.size() == 2) {
      ++children;
      offset_sum += s.gt[1].center - s.gt[0].center;
    }
  }
  auto within = [](double count, double total, double p) {
    const double se = std::sqrt(p * (1 - p) / total);
    return std::abs(count / total - p) <= 3 * se;
  };
  EXPECT_TRUE(within(roots, n, 0.4)) << roots;
  EXPECT_TRUE(within(children, roots, 0.7)) << children << "/" << roots;
  const Vec3 mean = offset_sum / children;
  // Offset stddev 0.1 per axis, so the mean has SE 0.1/sqrt(children).
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(mean[k], spec.rules[0].mean[k], 3 * 0.1 / std::sqrt(children) + 1e-6);
}

TEST(Generation, EveryClassAppears) {
  const auto spec = default_scene_spec();
  std::vector<int> counts(spec.classes.size(), 0);
  int total = 0;
  for (const auto& s : generate_scenes(spec, 500, 7))
    for (const auto& b : s.gt) {
      ++counts[b.label];
      ++total;
    }
  for (std::size_t c = 0; c < counts.size(); ++c)
    EXPECT_GE(counts[c], 0.01 * total) << spec.classes[c].name;
}

TEST(Generation, AmbiguousProposalsResistALinearProbe) {
  // Least-squares probe on ambiguous cabinet/chair proposals: trained on one
  // half of the scenes, scored on the other. The class label is not
  // recoverable from the feature alone.
  const auto spec = default_scene_spec();
  const int cabinet = spec.class_index("cabinet"), chair = spec.class_index("chair");
  std::vector<nn::Vector> xs[2];
  std::vector<double> ys[2];
  const auto scenes = generate_scenes(spec, 600, 8);
  for (std::size_t i = 0; i < scenes.size(); ++i)
    for (const auto& p : scenes[i].proposals) {
      if (!p.ambiguous) continue;
      const int label = scenes[i].gt[p.source].label;
      if (label != cabinet && label != chair) continue;
      xs[i % 2].push_back(p.feature);
      ys[i % 2].push_back(label == chair ? 1.0 : -1.0);
    }
  const int F = spec.feature_dim;
  auto design = [&](int h) {
    Eigen::MatrixXd a(xs[h].size(), F + 1);
    for (std::size_t r = 0; r < xs[h].size(); ++r) {
      a.row(static_cast<Eigen::Index>(r)).head(F) = xs[h][r].transpose();
      a(static_cast<Eigen::Index>(r), F) = 1.0;
    }
    return a;
  };
  const Eigen::MatrixXd a0 = design(0), a1 = design(1);
  const Eigen::VectorXd y0 = Eigen::Map<const Eigen::VectorXd>(ys[0].data(), ys[0].size());
  // Small ridge term keeps the solve well posed.
  const Eigen::MatrixXd gram = a0.transpose() * a0 + 1.0 * Eigen::MatrixXd::Identity(F + 1, F + 1);
  const Eigen::VectorXd w = gram.ldlt().solve(a0.transpose() * y0);
  const Eigen::VectorXd pred = a1 * w;
  int correct = 0, positives = 0;
  for (std::size_t r = 0; r < ys[1].size(); ++r) {
    correct += (pred(static_cast<Eigen::Index>(r)) > 0) == (ys[1][r] > 0);
    positives += ys[1][r] > 0;
  }
  ASSERT_GT(ys[1].size(), 200u);
  const double n = static_cast<double>(ys[1].size());
  const double chance = std::max(positives, static_cast<int>(n) - positives) / n;
  EXPECT_LT(correct / n, chance + 0.10) << "probe " << correct / n << " chance " << chance;
}

TEST(Generation, RoomTooSmallIsReported) {
  auto spec = default_scene_spec();
  spec.room = Vec3(1.0, 1.0, 3.0);
  try {
    generate_scenes(spec, 1, 0);
    FAIL() << "expected GenerationError";
  } catch (const GenerationError& e) {
    EXPECT_NE(std::string(e.what()).find("room too small"), std::string::npos);
  }
}

TEST(Generation, ProposalBudgetTooSmallIsReported) {
  auto spec = default_scene_spec();
  spec.proposals_per_scene = 2;
  EXPECT_THROW(generate_scenes(spec, 20, 0), GenerationError);
}

TEST(SpecJson, RoundTripAndFieldErrors) {
  const auto spec = default_scene_spec();
  EXPECT_EQ(to_json(scene_spec_from_json(to_json(spec))), to_json(spec));
  EXPECT_EQ(spec_hash(scene_spec_from_json(nlohmann::json::object())), spec_hash(spec));
  auto message = [](const nlohmann::json& j) {
    try {
      scene_spec_from_json(j);
    } catch (const InvalidInput& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  EXPECT_NE(message({{"ambiguity_rate", 1.5}}).find("ambiguity_rate"), std::string::npos);
  EXPECT_NE(message({{"feature_dim", "wide"}}).find("feature_dim"), std::string::npos);
  EXPECT_NE(message({{"roots", {{{"class", "lamp"}, {"probability", 0.5}}}}}).find("roots[0].class"),
            std::string::npos);
  auto bad_cov = to_json(spec);
  bad_cov["rules"][0]["covariance"] = {{1, 0, 0}, {0, -1, 0}, {0, 0, 1}};
  EXPECT_NE(message(bad_cov).find("rules[0].covariance"), std::string::npos);
}

TEST(DatasetIo, RoundTripIsBitExact) {
  const auto spec = default_scene_spec();
  const Dataset d = make_dataset(spec, generate_scenes(spec, 100, 10));
  const std::string text = dump(d);
  const Dataset back = parse(text);
  ASSERT_EQ(back.scenes.size(), 100u);
  EXPECT_EQ(back.spec_hash, d.spec_hash);
  EXPECT_EQ(back.class_names(), d.class_names());
  for (std::size_t i = 0; i < 100; ++i) {
    const auto& a = d.scenes[i];
    const auto& b = back.scenes[i];
    ASSERT_EQ(a.proposals.size(), b.proposals.size());
    for (std::size_t k = 0; k < a.proposals.size(); ++k) {
      EXPECT_EQ(a.proposals[k].feature, b.proposals[k].feature);
      EXPECT_EQ(a.proposals[k].center, b.proposals[k].center);
    }
  }
  EXPECT_EQ(dump(back), text);
}

TEST(DatasetIo, EmptyDatasetIsHeaderOnly) {
  const auto spec = default_scene_spec();
  const std::string text = dump(make_dataset(spec, {}));
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 1);
  EXPECT_TRUE(parse(text).scenes.empty());
}

TEST(DatasetIo, TruncatedRecordNamesItsIndex) {
  const auto spec = default_scene_spec();
  std::string text = dump(make_dataset(spec, generate_scenes(spec, 3, 11)));
  text.resize(text.size() - 40);
  try {
    parse(text);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("record 2"), std::string::npos) << e.what();
  }
}

TEST(DatasetIo, MissingRecordAndBadFieldsReported) {
  const auto spec = default_scene_spec();
  std::string text = dump(make_dataset(spec, generate_scenes(spec, 2, 12)));
  const std::string two_lines = text.substr(0, text.find('\n', text.find('\n') + 1) + 1);
  EXPECT_THROW(parse(two_lines), DataError);

  auto header = text.substr(0, text.find('\n') + 1);
  auto rec = scene_to_json(generate_scenes(spec, 1, 13)[0]);
  rec["proposals"][0]["feature"] = {1.0, 2.0};
  try {
    parse(header + rec.dump() + "\n");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("proposals[0].feature"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse("{\"format\":\"other\"}\n"), DataError);
  EXPECT_THROW(parse(""), DataError);
}
