#pragma once

// The `disarm` command line. Every subcommand resolves its full
// configuration, does its work, and (when it has an output location) writes a
// manifest.json carrying the resolved argv so `disarm replay` can rerun it.
//
// Exit codes: 0 ok, 1 usage, 2 bad data/config file, 3 numeric failure.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "disarm/ablation.hpp"
#include "disarm/errors.hpp"
#include "disarm/gradcheck.hpp"
#include "disarm/model.hpp"
#include "disarm/persist.hpp"
#include "disarm/relation.hpp"
#include "disarm/scenes.hpp"
#include "disarm/trainer.hpp"

namespace disarm::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;

inline constexpr const char* kVersion = "1.0.0";

inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kMetricsFile = "metrics.jsonl";
inline constexpr const char* kModelDir = "model";
inline constexpr const char* kCheckpointDir = "checkpoints";
inline constexpr const char* kPartialDir = "partial";
inline constexpr const char* kResultsTable = "results.tsv";
inline constexpr const char* kResultsKv = "results.kv";
inline constexpr const char* kMatrixFile = "matrix.json";
inline constexpr const char* kReportFile = "report.kv";

// Published overhead of the relation module, printed next to our own figures.
inline constexpr const char* kPublishedStorage = "+1MB";
inline constexpr const char* kPublishedGflops = "+0.034";

// Thrown for flag values that parse but make no sense together.
class UsageError : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

inline std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw DataError("cannot read " + p.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline json read_json_file(const fs::path& p) {
  try {
    return json::parse(read_file(p));
  } catch (const json::exception& e) {
    throw DataError(p.string() + ": " + e.what());
  }
}

// Content errors in a file the user handed us are data errors, not usage.
template <class F>
auto from_file(const fs::path& p, F&& f) {
  try {
    return f();
  } catch (const DataError&) {
    throw;
  } catch (const InvalidInput& e) {
    throw DataError(p.string() + ": " + e.what());
  } catch (const json::exception& e) {
    throw DataError(p.string() + ": " + e.what());
  }
}

inline std::string file_hash(const fs::path& p) { return hex64(fnv1a64(read_file(p))); }

inline std::string timestamp() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// --seed, else DISARM_SEED, else 0.
inline std::uint64_t resolve_seed(const CLI::Option* flag, std::uint64_t value) {
  if (flag->count() > 0) return value;
  if (const char* env = std::getenv("DISARM_SEED"); env && *env) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used);
      if (used != std::string(env).size()) throw std::invalid_argument("trailing characters");
      return v;
    } catch (const std::exception&) {
      throw UsageError(std::string("DISARM_SEED: not an unsigned integer: ") + env);
    }
  }
  return 0;
}

inline std::vector<std::string> with_seed(std::vector<std::string> args, const CLI::Option* flag, std::uint64_t seed) {
  if (flag->count() == 0) {
    args.push_back("--seed");
    args.push_back(std::to_string(seed));
  }
  return args;
}

inline void write_manifest(const fs::path& path, const std::string& command, const std::vector<std::string>& argv,
                           const json& config, std::uint64_t seed, const json& hashes, const json& outputs) {
  json m;
  m["command"] = command;
  m["argv"] = argv;
  m["config"] = config;
  m["seed"] = seed;
  m["hashes"] = hashes;
  m["versions"] = {{"disarm", kVersion},
                   {"dataset_format", kDatasetVersion},
                   {"model_format", kModelManifestVersion},
                   {"checkpoint_format", nn::kCheckpointVersion}};
  m["outputs"] = outputs;
  m["created"] = timestamp();
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << m.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Model and training configuration: preset, then --config file, then flags.

inline json to_json(const TrainConfig& c) {
  return {{"optimizer", c.optimizer == OptimizerKind::adam ? "adam" : "sgd"},
          {"batch", c.batch_size},
          {"epochs", c.epochs},
          {"lr", c.lr},
          {"momentum", c.momentum},
          {"stage_fractions", c.stage_fractions},
          {"seed", c.seed},
          {"objectness_loss_throughout", c.objectness_loss_throughout}};
}

inline std::array<double, 3> parse_fractions(const std::string& text) {
  std::array<double, 3> f{};
  std::stringstream ss(text);
  std::string part;
  int n = 0;
  while (std::getline(ss, part, ',')) {
    if (n == 3) throw UsageError("--stage-fractions: expected three comma-separated numbers");
    try {
      std::size_t used = 0;
      f[static_cast<std::size_t>(n)] = std::stod(part, &used);
      if (used != part.size()) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      throw UsageError("--stage-fractions: not a number: '" + part + "'");
    }
    ++n;
  }
  if (n != 3) throw UsageError("--stage-fractions: expected three comma-separated numbers");
  return f;
}

template <class T, class P>
T parse_tag(const std::string& field, const std::string& value, P parse, const std::string& valid) {
  const auto v = parse(value);
  if (!v) throw InvalidInput(field + ": unknown value '" + value + "'; valid: " + valid);
  return *v;
}

inline std::optional<WeightNormalization> parse_normalization(std::string_view s) {
  if (s == "softmax") return WeightNormalization::softmax;
  if (s == "eq5") return WeightNormalization::sum;
  return std::nullopt;
}
inline std::optional<ObjectnessLossKind> parse_objectness_loss(std::string_view s) {
  if (s == "l2") return ObjectnessLossKind::l2;
  if (s == "bce") return ObjectnessLossKind::bce;
  return std::nullopt;
}
inline std::optional<AnchorReduction> parse_reduction(std::string_view s) {
  if (s == "sum") return AnchorReduction::sum;
  if (s == "min") return AnchorReduction::min;
  return std::nullopt;
}
inline std::optional<OptimizerKind> parse_optimizer(std::string_view s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  return std::nullopt;
}

// Keys of a --config file. Every key is optional.
inline void apply_config(const json& j, ModelConfig& m, TrainConfig& t) {
  if (!j.is_object()) throw InvalidInput("config: expected a JSON object");
  for (const auto& [key, _] : j.items())
    if (key != "model" && key != "train") throw InvalidInput("config field '" + key + "': unknown (expected model, train)");
  if (j.contains("model")) {
    const auto& mj = j["model"];
    for (const auto& [key, v] : mj.items()) {
      const std::string f = "config field 'model." + key + "'";
      if (key == "anchors") m.disarm.anchors = v.get<int>();
      else if (key == "candidate_keep") m.disarm.candidate_keep = v.get<int>();
      else if (key == "softmax_mode") m.disarm.normalization = parse_tag<WeightNormalization>(f, v.get<std::string>(), parse_normalization, "softmax, eq5");
      else if (key == "anchor_reduction") m.disarm.reduction = parse_tag<AnchorReduction>(f, v.get<std::string>(), parse_reduction, "sum, min");
      else if (key == "weighting") m.disarm.weighting = parse_tag<WeightingMode>(f, v.get<std::string>(), parse_weighting, valid_weighting_tags());
      else if (key == "strategy") m.strategy = parse_tag<SamplingStrategy>(f, v.get<std::string>(), parse_strategy, valid_strategy_tags());
      else if (key == "local_neighbors") m.local_neighbors = v.get<int>();
      else if (key == "intermediate_pool") m.intermediate_pool = v.get<int>();
      else if (key == "context") m.use_context = v.get<bool>();
      else if (key == "adapter") m.use_adapter = v.get<bool>();
      else if (key == "objectness_loss") m.objectness_loss = parse_tag<ObjectnessLossKind>(f, v.get<std::string>(), parse_objectness_loss, "l2, bce");
      else if (key == "class_hidden") m.class_hidden = v.get<int>();
      else if (key == "nms_iou") m.nms_iou = v.get<double>();
      else throw InvalidInput(f + ": unknown");
    }
  }
  if (j.contains("train")) {
    const auto& tj = j["train"];
    for (const auto& [key, v] : tj.items()) {
      const std::string f = "config field 'train." + key + "'";
      if (key == "optimizer") t.optimizer = parse_tag<OptimizerKind>(f, v.get<std::string>(), parse_optimizer, "sgd, adam");
      else if (key == "batch") t.batch_size = v.get<int>();
      else if (key == "epochs") t.epochs = v.get<int>();
      else if (key == "lr") t.lr = v.get<double>();
      else if (key == "momentum") t.momentum = v.get<double>();
      else if (key == "stage_fractions") {
        if (!v.is_array() || v.size() != 3) throw InvalidInput(f + ": expected three numbers");
        for (std::size_t k = 0; k < 3; ++k) t.stage_fractions[k] = v[k].get<double>();
      } else if (key == "objectness_loss_throughout") t.objectness_loss_throughout = v.get<bool>();
      else throw InvalidInput(f + ": unknown");
    }
  }
}

// Flags shared by `train` and `ablate`.
struct TrainFlags {
  std::string preset = "default";
  std::string config_file;
  int epochs = 220, batch = 8, m = 15, candidates = 128;
  double lr = 0.008, momentum = 0.9;
  std::string optimizer = "sgd", fractions = "0.4,0.3,0.3", softmax_mode = "softmax", obj_loss = "l2";
  std::string reduction = "sum", strategy = "ObjectnessFPS", weighting = "Full";
  bool no_context = false, objectness_warmup_only = false;
  int jobs = 1;

  CLI::Option *o_epochs{}, *o_batch{}, *o_m{}, *o_candidates{}, *o_lr{}, *o_momentum{}, *o_optimizer{}, *o_fractions{},
      *o_softmax{}, *o_obj_loss{}, *o_reduction{}, *o_strategy{}, *o_weighting{};

  void add(CLI::App* app, bool cell_flags) {
    app->add_option("--preset", preset, "Starting point for every setting below: default or desk")
        ->check(CLI::IsMember({"default", "desk"}))
        ->capture_default_str();
    app->add_option("--config", config_file, "JSON file with 'model' and/or 'train' sections")->check(CLI::ExistingFile);
    o_epochs = app->add_option("--epochs", epochs, "Training epochs")->capture_default_str();
    o_batch = app->add_option("--batch", batch, "Scenes per optimizer step")->capture_default_str();
    o_lr = app->add_option("--lr", lr, "Initial learning rate (cosine annealed)")->capture_default_str();
    o_momentum = app->add_option("--momentum", momentum, "SGD momentum / Adam beta1")->capture_default_str();
    o_optimizer = app->add_option("--optimizer", optimizer, "sgd or adam")->capture_default_str();
    o_fractions = app->add_option("--stage-fractions", fractions, "warm-up,freeze,fine-tune fractions")->capture_default_str();
    o_m = app->add_option("--m", m, "Relation anchors M")->capture_default_str();
    o_candidates = app->add_option("--candidates", candidates, "Candidates kept before anchor sampling")->capture_default_str();
    o_softmax = app->add_option("--softmax-mode", softmax_mode, "softmax or eq5 (plain sum normalization)")->capture_default_str();
    o_obj_loss = app->add_option("--obj-loss", obj_loss, "Objectness loss: l2 or bce")->capture_default_str();
    o_reduction = app->add_option("--anchor-reduction", reduction, "Anchor sampling distance reduction: sum or min")->capture_default_str();
    app->add_flag("--objectness-warmup-only", objectness_warmup_only, "Apply the objectness loss only during warm-up");
    if (cell_flags) {
      o_strategy = app->add_option("--strategy", strategy, "Anchor sampling strategy")->capture_default_str();
      o_weighting = app->add_option("--weighting", weighting, "Weighting mode")->capture_default_str();
      app->add_flag("--no-context", no_context, "Class head sees no relation feature");
    }
    app->add_option("--jobs", jobs, "Parallel workers (ablate only)")->capture_default_str();
  }

  // `seed` goes into the train config; the model is initialized from it too.
  void resolve(ModelConfig& mc, TrainConfig& tc) const {
    if (preset == "desk") {
      const AblationConfig d = desk_suite_config();
      mc = d.model;
      tc = d.train;
    }
    if (!config_file.empty()) from_file(config_file, [&] { apply_config(read_json_file(config_file), mc, tc); return 0; });
    auto given = [](const CLI::Option* o) { return o && o->count() > 0; };
    if (given(o_epochs)) tc.epochs = epochs;
    if (given(o_batch)) tc.batch_size = batch;
    if (given(o_lr)) tc.lr = lr;
    if (given(o_momentum)) tc.momentum = momentum;
    if (given(o_optimizer)) tc.optimizer = parse_tag<OptimizerKind>("--optimizer", optimizer, parse_optimizer, "sgd, adam");
    if (given(o_fractions)) tc.stage_fractions = parse_fractions(fractions);
    if (given(o_m)) mc.disarm.anchors = m;
    if (given(o_candidates)) mc.disarm.candidate_keep = candidates;
    if (given(o_softmax))
      mc.disarm.normalization = parse_tag<WeightNormalization>("--softmax-mode", softmax_mode, parse_normalization, "softmax, eq5");
    if (given(o_obj_loss))
      mc.objectness_loss = parse_tag<ObjectnessLossKind>("--obj-loss", obj_loss, parse_objectness_loss, "l2, bce");
    if (given(o_reduction))
      mc.disarm.reduction = parse_tag<AnchorReduction>("--anchor-reduction", reduction, parse_reduction, "sum, min");
    if (objectness_warmup_only) tc.objectness_loss_throughout = false;
    if (given(o_strategy)) mc.strategy = parse_tag<SamplingStrategy>("--strategy", strategy, parse_strategy, valid_strategy_tags());
    if (given(o_weighting))
      mc.disarm.weighting = parse_tag<WeightingMode>("--weighting", weighting, parse_weighting, valid_weighting_tags());
    if (no_context) mc.use_context = false;
    if (mc.disarm.anchors < 1) throw UsageError("--m: must be at least 1");
    if (mc.disarm.candidate_keep < mc.disarm.anchors)
      throw UsageError("--candidates (" + std::to_string(mc.disarm.candidate_keep) + ") must be >= --m (" +
                       std::to_string(mc.disarm.anchors) + ")");
    if (jobs < 1) throw UsageError("--jobs: must be at least 1");
    validate(tc);
  }
};

inline Dataset load_dataset(const std::string& path) { return from_file(path, [&] { return read_dataset(path); }); }

// The dataset must offer at least M proposals per scene and F-dim features.
inline void check_compatible(const ModelConfig& mc, const Dataset& d) {
  if (mc.disarm.feature_dim != d.feature_dim)
    throw DataError("config mismatch: F: model=" + std::to_string(mc.disarm.feature_dim) +
                    " data=" + std::to_string(d.feature_dim));
  const int need = mc.strategy == SamplingStrategy::global ? 1 : mc.disarm.anchors;
  for (std::size_t s = 0; s < d.scenes.size(); ++s)
    if (static_cast<int>(d.scenes[s].proposals.size()) < need)
      throw DataError("config mismatch: M: scene " + std::to_string(s) + " has " +
                      std::to_string(d.scenes[s].proposals.size()) + " proposals, M=" + std::to_string(need));
}

// ---------------------------------------------------------------------------
// Subcommands

struct Context {
  std::ostream& out;
  std::ostream& err;
  std::vector<std::string> args;  // without the program name
};

inline int cmd_gen_data(Context& ctx, const std::string& spec_file, int scenes, const std::string& out_file,
                        const CLI::Option* seed_opt, std::uint64_t seed_value) {
  const std::uint64_t seed = resolve_seed(seed_opt, seed_value);
  if (scenes < 0) throw UsageError("--scenes: must be non-negative");
  const SceneSpec spec = spec_file.empty()
                             ? default_scene_spec()
                             : from_file(spec_file, [&] { return scene_spec_from_json(read_json_file(spec_file)); });
  const Dataset d = from_file(spec_file.empty() ? fs::path("spec") : fs::path(spec_file),
                              [&] { return make_dataset(spec, generate_scenes(spec, scenes, seed)); });
  const fs::path out(out_file);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_dataset(d, out.string());
  const std::string manifest = out.string() + ".manifest.json";
  write_manifest(manifest, "gen-data", with_seed(ctx.args, seed_opt, seed),
                 {{"spec", to_json(spec)}, {"scenes", scenes}}, seed,
                 {{"spec", d.spec_hash}, {"dataset", file_hash(out)}}, {out.string(), manifest});
  ctx.out << "wrote " << scenes << " scenes to " << out.string() << "\n";
  return kExitOk;
}

inline json epoch_json(const EpochRecord& r) {
  return {{"epoch", r.epoch},
          {"stage", stage_name(r.stage)},
          {"lr", r.lr},
          {"loss", r.loss},
          {"objectness_loss", r.objectness_loss},
          {"classification_loss", r.classification_loss},
          {"freeze_checks", r.freeze_checks},
          {"wall_time_s", r.wall_time_s}};
}

inline int cmd_train(Context& ctx, const std::string& data, const std::string& out_dir, const TrainFlags& flags,
                     const CLI::Option* seed_opt, std::uint64_t seed_value) {
  const std::uint64_t seed = resolve_seed(seed_opt, seed_value);
  ModelConfig mc;
  TrainConfig tc;
  flags.resolve(mc, tc);
  tc.seed = seed;
  const Dataset d = load_dataset(data);
  if (d.scenes.empty()) throw DataError(data + ": no scenes");
  mc.disarm.feature_dim = d.feature_dim;
  check_compatible(mc, d);

  const fs::path out(out_dir);
  fs::create_directories(out);
  const json config = {{"model", disarm::to_json(mc)}, {"train", to_json(tc)}};
  json outputs = json::array({(out / kManifestFile).string(), (out / kMetricsFile).string(), (out / kModelDir).string()});
  // Written first so a failed run still records what was attempted.
  auto manifest = [&] {
    write_manifest(out / kManifestFile, "train", with_seed(ctx.args, seed_opt, seed), config, seed,
                   {{"dataset", file_hash(data)}, {"spec", d.spec_hash}}, outputs);
  };
  manifest();
  ctx.out << "M=" << mc.disarm.anchors << " candidates=" << mc.disarm.candidate_keep << " epochs=" << tc.epochs
          << " batch=" << tc.batch_size << " lr=" << tc.lr << " seed=" << seed << "\n";

  Model model = Model::create(mc, d.classes, seed);
  std::ofstream metrics(out / kMetricsFile, std::ios::trunc);
  if (!metrics) throw DataError("cannot write " + (out / kMetricsFile).string());
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochRecord& r) { metrics << epoch_json(r).dump() << "\n" << std::flush; };
  hooks.on_stage_end = [&](Stage s, int epoch, const Model& m) {
    const fs::path dir = out / kCheckpointDir / std::string(stage_name(s));
    save_model(dir, m);
    outputs.push_back(dir.string());
    ctx.out << "stage " << stage_name(s) << " ended after epoch " << epoch << "; checkpoint " << dir.string() << "\n";
  };
  try {
    const TrainResult r = train(model, d.scenes, tc, hooks);
    if (!r.log.empty())
      ctx.out << "loss: first epoch " << r.log.front().loss << ", last epoch " << r.log.back().loss << "\n";
    if (r.freeze_checks) ctx.out << "freeze checks passed: " << r.freeze_checks << "\n";
  } catch (const NumericError&) {
    save_model(out / kPartialDir, model);
    outputs.push_back((out / kPartialDir).string());
    manifest();
    throw;
  }
  save_model(out / kModelDir, model);
  manifest();
  ctx.out << "model written to " << (out / kModelDir).string() << "\n";
  return kExitOk;
}

inline int cmd_eval(Context& ctx, const std::string& data, const std::string& ckpt, std::vector<double> ious,
                    const std::string& format, bool oracle, const CLI::Option* m_opt, int m_value,
                    const std::string& out_dir, const CLI::Option* seed_opt, std::uint64_t seed_value) {
  const std::uint64_t seed = resolve_seed(seed_opt, seed_value);
  for (double t : ious)
    if (t != 0.25 && t != 0.5) throw UsageError("--iou: expected 0.25 or 0.5");
  std::sort(ious.begin(), ious.end());
  ious.erase(std::unique(ious.begin(), ious.end()), ious.end());
  const Dataset d = load_dataset(data);
  if (d.scenes.empty()) throw DataError("no scenes");
  const std::vector<std::string> names = d.class_names();

  std::vector<MapResult> maps;
  std::optional<EvalResult> eval;
  json config = {{"ious", ious}, {"oracle", oracle}};
  if (oracle) {
    std::vector<std::vector<Box3D>> gt;
    std::vector<DetectionRecord> dets;
    for (std::size_t s = 0; s < d.scenes.size(); ++s) {
      gt.push_back(d.scenes[s].gt);
      for (Box3D b : d.scenes[s].gt) {
        b.score = 1.0;
        dets.push_back({static_cast<int>(s), b, false, std::nullopt});
      }
    }
    for (double t : ious) maps.push_back(evaluate_map(dets, gt, t));
  } else {
    if (ckpt.empty()) throw UsageError("--ckpt is required unless --oracle is given");
    const Model model = load_model(ckpt);
    if (m_opt->count() > 0 && m_value != model.config.disarm.anchors)
      throw DataError("config mismatch: M: checkpoint=" + std::to_string(model.config.disarm.anchors) +
                      " flag=" + std::to_string(m_value));
    if (model.feature_dim() != d.feature_dim)
      throw DataError("config mismatch: F: checkpoint=" + std::to_string(model.feature_dim()) +
                      " data=" + std::to_string(d.feature_dim));
    if (model.num_classes() != static_cast<int>(d.classes.size()))
      throw DataError("config mismatch: classes: checkpoint=" + std::to_string(model.num_classes()) +
                      " data=" + std::to_string(d.classes.size()));
    check_compatible(model.config, d);
    eval = evaluate(model, d.scenes, seed);
    for (double t : ious) maps.push_back(t == 0.25 ? eval->map25 : eval->map50);
    config["model"] = disarm::to_json(model.config);
  }

  std::ostringstream report;
  if (format == "kv") {
    for (const auto& m : maps) report << format_map_kv(m, names);
    if (eval) {
      report.precision(17);
      report << "ambiguous_proposals=" << eval->ambiguous_proposals << "\n"
             << "ambiguous_accuracy=" << eval->ambiguous_accuracy << "\n"
             << "positive_accuracy=" << eval->positive_accuracy << "\n";
    }
  } else {
    for (const auto& m : maps) report << format_map_table(m, names) << "\n";
    if (eval)
      report << "ambiguous proposals: " << eval->ambiguous_proposals << ", accuracy " << std::fixed
             << std::setprecision(4) << eval->ambiguous_accuracy << "\n"
             << "positive proposals: " << eval->positive_proposals << ", accuracy " << eval->positive_accuracy
             << "\n";
  }
  ctx.out << report.str();
  if (!out_dir.empty()) {
    const fs::path out(out_dir);
    fs::create_directories(out);
    std::ofstream(out / kReportFile) << report.str();
    json hashes = {{"dataset", file_hash(data)}};
    if (!ckpt.empty()) hashes["model"] = file_hash(fs::path(ckpt) / "model.json");
    write_manifest(out / kManifestFile, "eval", with_seed(ctx.args, seed_opt, seed), config, seed, hashes,
                   {(out / kManifestFile).string(), (out / kReportFile).string()});
  }
  return kExitOk;
}

inline int cmd_ablate(Context& ctx, const std::string& data, const std::string& test_data, double holdout,
                      const std::string& matrix_arg, int seeds, const std::string& format, const std::string& out_dir,
                      const TrainFlags& flags, const CLI::Option* seed_opt, std::uint64_t seed_value) {
  const std::uint64_t seed = resolve_seed(seed_opt, seed_value);
  if (seeds < 1) throw UsageError("--seeds: must be at least 1");
  AblationConfig cfg;
  flags.resolve(cfg.model, cfg.train);
  cfg.jobs = flags.jobs;
  cfg.seeds.clear();
  for (int k = 0; k < seeds; ++k) cfg.seeds.push_back(seed + static_cast<std::uint64_t>(k));
  const AblationMatrix matrix =
      matrix_arg == "builtin" ? builtin_matrix()
                              : from_file(matrix_arg, [&] { return parse_matrix(read_json_file(matrix_arg)); });

  Dataset d = load_dataset(data);
  std::vector<SyntheticScene> train_scenes = std::move(d.scenes), test_scenes;
  if (!test_data.empty()) {
    Dataset t = load_dataset(test_data);
    if (t.feature_dim != d.feature_dim || t.classes.size() != d.classes.size())
      throw DataError("config mismatch: " + test_data + " does not match " + data);
    test_scenes = std::move(t.scenes);
  } else {
    if (!(holdout > 0.0 && holdout < 1.0)) throw UsageError("--holdout: must be in (0, 1)");
    const auto n_test = static_cast<std::size_t>(std::lround(holdout * static_cast<double>(train_scenes.size())));
    test_scenes.assign(train_scenes.end() - static_cast<std::ptrdiff_t>(n_test), train_scenes.end());
    train_scenes.resize(train_scenes.size() - n_test);
  }
  if (train_scenes.empty() || test_scenes.empty()) throw DataError("no scenes");
  cfg.model.disarm.feature_dim = d.feature_dim;
  d.scenes = train_scenes;
  for (const auto& cell : matrix.cells) check_compatible(cell_config(cfg.model, cell), d);

  const fs::path out(out_dir);
  fs::create_directories(out);
  json config = {{"model", disarm::to_json(cfg.model)}, {"train", to_json(cfg.train)}, {"seeds", cfg.seeds},
                 {"jobs", cfg.jobs}, {"matrix", to_json(matrix)}, {"train_scenes", train_scenes.size()},
                 {"test_scenes", test_scenes.size()}};
  std::ofstream(out / kMatrixFile) << to_json(matrix).dump(2) << "\n";
  const auto results = run_ablation(train_scenes, test_scenes, d.classes, matrix, cfg);
  const std::string table = format_results_table(results);
  const std::string kv = format_results_kv(results, d.class_names());
  std::ofstream(out / kResultsTable) << table;
  std::ofstream(out / kResultsKv) << kv;
  json hashes = {{"dataset", file_hash(data)}};
  if (!test_data.empty()) hashes["test_dataset"] = file_hash(test_data);
  write_manifest(out / kManifestFile, "ablate", with_seed(ctx.args, seed_opt, seed), config, seed, hashes,
                 {(out / kManifestFile).string(), (out / kMatrixFile).string(), (out / kResultsTable).string(),
                  (out / kResultsKv).string()});
  ctx.out << (format == "kv" ? kv : table);
  int failed = 0;
  for (const auto& r : results) failed += !r.ok;
  if (failed) ctx.err << "warning: " << failed << " cell(s) failed; see " << (out / kResultsKv).string() << "\n";
  return kExitOk;
}

inline int cmd_grad_check(Context& ctx, GradCheckSuiteOptions o, const std::string& out_dir,
                          const CLI::Option* seed_opt, std::uint64_t seed_value) {
  o.seed = resolve_seed(seed_opt, seed_value);
  if (o.trials < 0) throw UsageError("--trials: must be non-negative");
  if (!(o.eps > 0.0)) throw UsageError("--eps: must be positive");
  if (o.trials == 0) ctx.err << "warning: --trials 0, nothing was checked\n";
  const auto t0 = std::chrono::steady_clock::now();
  const GradCheckSuiteResult r = run_grad_check_suite(o);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::ostringstream report;
  report << std::scientific << std::setprecision(3);
  auto line = [&](const NetCheckResult& n, double tol) {
    report << (n.passed ? "PASS " : "FAIL ") << std::left << std::setw(11) << n.name << std::right
           << " max_rel_err=" << n.report.max_relative_error << " tol=" << tol << " coords=" << n.report.checked
           << " kinks_skipped=" << n.report.skipped_kinks << "\n";
  };
  for (const auto& n : r.nets) line(n, o.net_tolerance);
  line(r.composite, o.composite_tolerance);
  report << (r.passed() ? "grad-check passed" : "grad-check FAILED") << " (" << r.trials << " trials, "
         << std::fixed << std::setprecision(1) << secs << " s)\n";
  ctx.out << report.str();
  if (!out_dir.empty()) {
    const fs::path out(out_dir);
    fs::create_directories(out);
    std::ofstream(out / kReportFile) << report.str();
    write_manifest(out / kManifestFile, "grad-check", with_seed(ctx.args, seed_opt, o.seed),
                   {{"trials", o.trials}, {"eps", o.eps}, {"tolerance", o.net_tolerance},
                    {"composite_tolerance", o.composite_tolerance}, {"max_coordinates", o.max_coordinates}},
                   o.seed, json::object(), {(out / kManifestFile).string(), (out / kReportFile).string()});
  }
  return r.passed() ? kExitOk : kExitNumeric;
}

inline int cmd_cost_report(Context& ctx, long k, long m, int f, const std::string& format, const std::string& out_dir) {
  if (k < 0 || m < 0) throw UsageError("--k and --m must be non-negative");
  if (f <= 0) throw UsageError("--f: must be positive");
  Rng rng(0);
  const CostReport c = cost_report(DisarmNets::create(f, rng), static_cast<std::size_t>(k), static_cast<std::size_t>(m));
  std::ostringstream os;
  const double mb = static_cast<double>(c.storage_bytes_f32) / 1e6;
  const double mib = static_cast<double>(c.storage_bytes_f32) / (1024.0 * 1024.0);
  const double gflops = static_cast<double>(c.flops_per_forward) / 1e9;
  if (format == "kv") {
    for (const auto& n : c.nets)
      os << "net." << n.name << ".parameters=" << n.parameters << "\n"
         << "net." << n.name << ".flops_per_call=" << n.flops_per_call << "\n";
    os << "parameter_count=" << c.parameter_count << "\n"
       << "storage_bytes_f32=" << c.storage_bytes_f32 << "\n"
       << "storage_mib_f32=" << mib << "\n"
       << "flops_pairwise=" << c.flops_pairwise << "\n"
       << "flops_per_proposal=" << c.flops_per_proposal << "\n"
       << "flops_per_forward=" << c.flops_per_forward << "\n"
       << "published.storage=" << kPublishedStorage << "\n"
       << "published.gflops=" << kPublishedGflops << "\n";
  } else {
    char line[160];
    std::snprintf(line, sizeof line, "%-12s %12s %16s\n", "net", "parameters", "flops/call");
    os << line;
    for (const auto& n : c.nets) {
      std::snprintf(line, sizeof line, "%-12s %12zu %16zu\n", n.name.c_str(), n.parameters, n.flops_per_call);
      os << line;
    }
    std::snprintf(line, sizeof line, "%-12s %12zu\n", "total", c.parameter_count);
    os << line << "\n";
    std::snprintf(line, sizeof line, "K=%ld M=%ld F=%d\n", k, m, f);
    os << line;
    std::snprintf(line, sizeof line, "%-24s %-16s %s\n", "", "computed", "published");
    os << line;
    std::snprintf(line, sizeof line, "%-24s %.3f MiB (%.3f MB)  %s\n", "storage (32-bit)", mib, mb, kPublishedStorage);
    os << line;
    std::ostringstream g;
    g << std::setprecision(4) << gflops << " GFLOPs";
    std::snprintf(line, sizeof line, "%-24s %-16s %s GFLOPs\n", "forward compute", g.str().c_str(), kPublishedGflops);
    os << line;
    os << "  pairwise (tau, sigma, phi over K*M pairs): " << c.flops_pairwise << "\n"
       << "  per proposal (objectness, varphi over K):  " << c.flops_per_proposal << "\n"
       << "note: a flop here is one multiply or add, 2*in*out per affine layer plus one per nonlinear\n"
          "      output element. The published figure does not state its convention, so the GFLOP\n"
          "      figures are not expected to agree.\n";
  }
  ctx.out << os.str();
  if (!out_dir.empty()) {
    const fs::path out(out_dir);
    fs::create_directories(out);
    std::ofstream(out / kReportFile) << os.str();
    write_manifest(out / kManifestFile, "cost-report", ctx.args, {{"k", k}, {"m", m}, {"f", f}}, 0, json::object(),
                   {(out / kManifestFile).string(), (out / kReportFile).string()});
  }
  return kExitOk;
}

inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

inline int cmd_replay(Context& ctx, const std::string& manifest) {
  const json m = read_json_file(manifest);
  std::vector<std::string> args;
  try {
    args = m.at("argv").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw DataError(manifest + ": manifest has no argv: " + e.what());
  }
  if (args.empty() || args[0] == "replay") throw DataError(manifest + ": argv does not name a command");
  return run(args, ctx.out, ctx.err);
}

// ---------------------------------------------------------------------------

inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Displacement-aware relation module: synthetic scenes, training, evaluation and ablations", "disarm"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  Context ctx{out, err, args};

  std::uint64_t seed = 0;
  auto add_seed = [&](CLI::App* sub) {
    return sub->add_option("--seed", seed, "Master seed (falls back to DISARM_SEED, then 0)");
  };

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic scene dataset");
  std::string spec_file, gen_out;
  int scenes = 500;
  gen->add_option("--spec", spec_file, "Scene spec JSON (fields absent keep their defaults)")->check(CLI::ExistingFile);
  gen->add_option("--scenes", scenes, "Number of scenes")->capture_default_str();
  gen->add_option("--out", gen_out, "Dataset file to write")->required();
  auto* gen_seed = add_seed(gen);

  auto* tr = app.add_subcommand("train", "Train a model; writes manifest, metrics log and checkpoints under --out");
  std::string data, train_out;
  TrainFlags tflags;
  tr->add_option("--data", data, "Dataset file")->required()->check(CLI::ExistingFile);
  tr->add_option("--out", train_out, "Output directory")->required();
  tflags.add(tr, true);
  auto* tr_seed = add_seed(tr);

  auto* ev = app.add_subcommand("eval", "Evaluate a trained model: per-class AP and mAP");
  std::string ckpt, format = "table", eval_out;
  std::vector<double> ious = {0.25, 0.5};
  bool oracle = false;
  int eval_m = 15;
  ev->add_option("--data", data, "Dataset file")->required()->check(CLI::ExistingFile);
  ev->add_option("--ckpt", ckpt, "Model directory written by train")->check(CLI::ExistingDirectory);
  ev->add_option("--iou", ious, "IoU thresholds: 0.25 and/or 0.5")->capture_default_str();
  ev->add_option("--format", format, "Output format")->check(CLI::IsMember({"table", "kv"}))->capture_default_str();
  ev->add_flag("--oracle", oracle, "Score the ground-truth boxes themselves (sanity check)");
  auto* ev_m = ev->add_option("--m", eval_m, "Expected anchor count; must match the checkpoint");
  ev->add_option("--out", eval_out, "Optional output directory for report and manifest");
  auto* ev_seed = add_seed(ev);

  auto* ab = app.add_subcommand("ablate", "Run the sampling x weighting ablation matrix");
  std::string test_data, matrix = "builtin", ab_out;
  double holdout = 1.0 / 6.0;
  int seeds = 3;
  TrainFlags aflags;
  ab->add_option("--data", data, "Training dataset file")->required()->check(CLI::ExistingFile);
  ab->add_option("--test-data", test_data, "Test dataset file (default: hold out the tail of --data)")
      ->check(CLI::ExistingFile);
  ab->add_option("--holdout", holdout, "Fraction of --data held out when --test-data is absent")->capture_default_str();
  ab->add_option("--matrix", matrix, "'builtin' or a JSON matrix file")->capture_default_str();
  ab->add_option("--seeds", seeds, "Seeds per cell: --seed, --seed+1, ...")->capture_default_str();
  ab->add_option("--format", format, "Output format")->check(CLI::IsMember({"table", "kv"}))->capture_default_str();
  ab->add_option("--out", ab_out, "Output directory")->required();
  aflags.add(ab, false);
  auto* ab_seed = add_seed(ab);

  auto* gc = app.add_subcommand("grad-check", "Finite-difference check of every network and the composite loss");
  GradCheckSuiteOptions gco;
  std::string gc_out;
  gc->add_option("--trials", gco.trials, "Random trials")->capture_default_str();
  gc->add_option("--eps", gco.eps, "Central-difference step")->capture_default_str();
  gc->add_option("--tolerance", gco.net_tolerance, "Max relative error per network")->capture_default_str();
  gc->add_option("--composite-tolerance", gco.composite_tolerance, "Max relative error for the composite loss")
      ->capture_default_str();
  gc->add_option("--max-coordinates", gco.max_coordinates, "Parameters sampled per check; 0 = all")
      ->capture_default_str();
  gc->add_option("--out", gc_out, "Optional output directory for report and manifest");
  auto* gc_seed = add_seed(gc);

  auto* cr = app.add_subcommand("cost-report", "Parameter count, storage and FLOPs of the relation module");
  long k = 256, m = 15;
  int f = 128;
  std::string cr_out;
  cr->add_option("--k", k, "Proposals per scene")->capture_default_str();
  cr->add_option("--m", m, "Relation anchors")->capture_default_str();
  cr->add_option("--f", f, "Proposal feature dimension")->capture_default_str();
  cr->add_option("--format", format, "Output format")->check(CLI::IsMember({"table", "kv"}))->capture_default_str();
  cr->add_option("--out", cr_out, "Optional output directory for report and manifest");

  auto* rp = app.add_subcommand("replay", "Rerun the command recorded in a manifest");
  std::string manifest;
  rp->add_option("--manifest", manifest, "manifest.json")->required()->check(CLI::ExistingFile);

  std::vector<const char*> argv{"disarm"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(ctx, spec_file, scenes, gen_out, gen_seed, seed);
    if (tr->parsed()) return cmd_train(ctx, data, train_out, tflags, tr_seed, seed);
    if (ev->parsed()) return cmd_eval(ctx, data, ckpt, ious, format, oracle, ev_m, eval_m, eval_out, ev_seed, seed);
    if (ab->parsed())
      return cmd_ablate(ctx, data, test_data, holdout, matrix, seeds, format, ab_out, aflags, ab_seed, seed);
    if (gc->parsed()) return cmd_grad_check(ctx, gco, gc_out, gc_seed, seed);
    if (cr->parsed()) return cmd_cost_report(ctx, k, m, f, format, cr_out);
    if (rp->parsed()) return cmd_replay(ctx, manifest);
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const StateError& e) {
    err << "internal state error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const GenerationError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const InvalidInput& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

inline int run(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return run(std::vector<std::string>(argv + 1, argv + argc), out, err);
}

}  // namespace disarm::cli
