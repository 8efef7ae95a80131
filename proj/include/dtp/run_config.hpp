#pragma once

// One JSON document drives every command: model and teacher configs, plan,
// distillation, optimizer, datasets and output directory. Named presets
// provide complete documents; scalar fields can be overridden by path.

#include <array>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dtp/checkpoint.hpp"
#include "dtp/datasets.hpp"
#include "dtp/distillation.hpp"
#include "dtp/error.hpp"
#include "dtp/model_config.hpp"
#include "dtp/training.hpp"

namespace dtp {

struct RunConfig {
  std::string name = "custom";
  std::uint64_t seed = 0;
  std::string output_dir = "runs/custom";
  nlohmann::json model = {{"setting", "Setting3"}, {"d_max", 192}};
  nlohmann::json teacher = {{"setting", "Setting3"}, {"d_max", 192}, {"width_multiplier", 2.0}};
  TrainingPlan plan;
  DistillConfig distill;
  TemperatureSchedule schedule;
  OptimizerConfig optimizer;
  DatasetSpec train;
  DatasetSpec val;
  Normalization normalization;
  bool kitti_official_d1 = false;
  int eval_images = 4;  // colorized outputs written per eval
  std::array<int, 2> resolution{540, 960};
  int bench_warmup = 3;
  int bench_iterations = 20;

  ModelConfig student_config() const { return model_config_from_json(model); }
  ModelConfig teacher_config() const { return model_config_from_json(teacher); }
};

inline nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["name"] = c.name;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["model"] = c.model;
  j["teacher"] = c.teacher;
  j["plan"] = to_json(c.plan);
  j["distill"] = to_json(c.distill, c.schedule);
  j["optimizer"] = to_json(c.optimizer);
  j["dataset"] = {{"train", to_json(c.train)}, {"val", to_json(c.val)}};
  j["normalization"] = to_json(c.normalization);
  j["eval"] = {{"kitti_official_d1", c.kitti_official_d1}, {"images", c.eval_images}};
  j["bench"] = {{"resolution", c.resolution}, {"warmup", c.bench_warmup}, {"iterations", c.bench_iterations}};
  return j;
}

inline void validate(const RunConfig& c) {
  validate(c.plan);
  validate(c.distill);
  validate(c.optimizer);
  validate(c.train);
  validate(c.val);
  const ModelConfig s = c.student_config();
  const ModelConfig t = c.teacher_config();
  if (s.d_max != t.d_max) {
    throw ConfigError("teacher d_max " + std::to_string(t.d_max) + " != student d_max " + std::to_string(s.d_max));
  }
  if (c.train.d_max != s.d_max || c.val.d_max != s.d_max) throw ConfigError("dataset d_max must equal the model d_max");
  if (c.schedule.t_start <= 0 || c.schedule.t_end <= 0) throw ConfigError("temperatures must be positive");
  if (c.eval_images < 0 || c.bench_warmup < 0 || c.bench_iterations < 1) throw ConfigError("invalid eval/bench counts");
  if (c.resolution[0] <= 0 || c.resolution[1] <= 0) throw ConfigError("resolution must be positive");
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  try {
    RunConfig c;
    c.name = j.value("name", c.name);
    c.seed = j.value("seed", c.seed);
    c.output_dir = j.value("output_dir", c.output_dir);
    if (j.contains("model")) c.model = j["model"];
    if (j.contains("teacher")) c.teacher = j["teacher"];
    if (j.contains("plan")) c.plan = training_plan_from_json(j["plan"]);
    if (j.contains("distill")) {
      c.distill = distill_config_from_json(j["distill"]);
      c.schedule.t_start = j["distill"].value("t_start", c.schedule.t_start);
      c.schedule.t_end = j["distill"].value("t_end", c.schedule.t_end);
    }
    if (j.contains("optimizer")) c.optimizer = optimizer_config_from_json(j["optimizer"]);
    if (j.contains("dataset")) {
      const auto& d = j["dataset"];
      if (d.contains("train")) c.train = dataset_spec_from_json(d["train"]);
      if (d.contains("val")) c.val = dataset_spec_from_json(d["val"]);
    }
    if (j.contains("normalization")) c.normalization = normalization_from_json(j["normalization"]);
    if (j.contains("eval")) {
      c.kitti_official_d1 = j["eval"].value("kitti_official_d1", c.kitti_official_d1);
      c.eval_images = j["eval"].value("images", c.eval_images);
    }
    if (j.contains("bench")) {
      const auto& b = j["bench"];
      if (b.contains("resolution")) c.resolution = b["resolution"].get<std::array<int, 2>>();
      c.bench_warmup = b.value("warmup", c.bench_warmup);
      c.bench_iterations = b.value("iterations", c.bench_iterations);
    }
    validate(c);
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Presets

namespace detail {

inline nlohmann::json synthetic_split(const std::string& split, int count, int d_max) {
  return {{"kind", "synthetic"}, {"split", split}, {"seed", 0}, {"size", {64, 96}}, {"max_d", 24},
          {"n_planes", 3},       {"count", count}, {"d_max", d_max}, {"crop", {0, 0}}};
}

}  // namespace detail

inline std::vector<std::string> preset_names() { return {"desk", "sceneflow", "kitti"}; }

/// desk: synthetic 64x96 end-to-end run sized for a CPU.
/// sceneflow: 20 distill epochs, 5 rounds at r=0.1 with 5 finetune epochs.
/// kitti: 300 epochs at 1e-3 then 300 at 1e-4, 100 finetune epochs per round.
inline nlohmann::json preset_json(const std::string& name) {
  nlohmann::json j;
  j["name"] = name;
  j["seed"] = 0;
  j["output_dir"] = "runs/" + name;
  j["optimizer"] = {{"kind", "adamw"}, {"lr", 1e-3}, {"beta1", 0.9}, {"beta2", 0.999}, {"weight_decay", 1e-2}};
  j["distill"] = {{"signal_mode", "kd_only"}, {"divergence", "l1"}, {"gt_weight", 0.5},
                  {"cache_teacher", false},   {"t_start", 0.5},     {"t_end", 1.0}};
  if (name == "desk") {
    j["model"] = {{"setting", "Setting3"}, {"d_max", 32}};
    j["teacher"] = {{"setting", "Setting3"}, {"d_max", 32}, {"width_multiplier", 2.0}};
    j["plan"] = {{"teacher_epochs", 20}, {"distill_epochs", 30}, {"prune_rounds", 5},
                 {"prune_rate", 0.1},    {"finetune_epochs", 5}, {"batch_size", 2}};
    j["distill"]["cache_teacher"] = true;
    j["dataset"] = {{"train", detail::synthetic_split("train", 500, 32)}, {"val", detail::synthetic_split("val", 100, 32)}};
    j["bench"] = {{"resolution", {64, 96}}, {"warmup", 3}, {"iterations", 20}};
  } else if (name == "sceneflow" || name == "kitti") {
    j["model"] = {{"setting", "Setting3"}, {"d_max", 192}};
    j["teacher"] = {{"setting", "Setting3"}, {"d_max", 192}, {"width_multiplier", 2.0}};
    j["bench"] = {{"resolution", name == "kitti" ? std::vector<int>{376, 1244} : std::vector<int>{540, 960}},
                  {"warmup", 3},
                  {"iterations", 20}};
    if (name == "sceneflow") {
      j["plan"] = {{"teacher_epochs", 20}, {"distill_epochs", 20}, {"prune_rounds", 5},
                   {"prune_rate", 0.1},    {"finetune_epochs", 5}, {"batch_size", 8}};
      j["dataset"] = {
          {"train", {{"kind", "sceneflow"}, {"root", "data/sceneflow"}, {"split", "train"}, {"crop", {256, 512}}, {"d_max", 192}}},
          {"val", {{"kind", "sceneflow"}, {"root", "data/sceneflow"}, {"split", "test"}, {"crop", {0, 0}}, {"d_max", 192}}}};
    } else {
      j["plan"] = {{"teacher_epochs", 600}, {"distill_epochs", 600}, {"prune_rounds", 5},
                   {"prune_rate", 0.1},     {"finetune_epochs", 100}, {"batch_size", 8}};
      j["optimizer"]["decay_epoch"] = 300;
      j["optimizer"]["decay_lr"] = 1e-4;
      j["dataset"] = {
          {"train", {{"kind", "kitti"}, {"root", "data/kitti2015"}, {"split", "train"}, {"crop", {256, 512}}, {"d_max", 192}}},
          {"val", {{"kind", "kitti"}, {"root", "data/kitti2015"}, {"split", "val"}, {"crop", {0, 0}}, {"d_max", 192}}}};
    }
  } else {
    throw ConfigError("unknown preset '" + name + "'");
  }
  return j;
}

// ---------------------------------------------------------------------------
// Overrides

/// Parses a scalar override value: JSON literal if it parses, else a string.
inline nlohmann::json override_value(const std::string& text) {
  try {
    auto v = nlohmann::json::parse(text);
    if (v.is_structured()) throw ConfigError("override values must be scalars: '" + text + "'");
    return v;
  } catch (const nlohmann::json::parse_error&) {
    return text;
  }
}

/// Applies "a.b.c=value"; the target must exist and hold a scalar.
inline void apply_override(nlohmann::json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string path = assignment.substr(0, eq);
  nlohmann::json* node = &j;
  std::stringstream ss(path);
  std::string key;
  while (std::getline(ss, key, '.')) {
    if (!node->is_object() || !node->contains(key)) throw ConfigError("override path '" + path + "' does not exist");
    node = &(*node)[key];
  }
  if (node->is_structured()) throw ConfigError("override path '" + path + "' is not a scalar field");
  *node = override_value(assignment.substr(eq + 1));
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config '" + path + "': " + e.what());
  }
}

/// Preset (if any) as the base, the config file merged over it, then
/// overrides. The result is normalized through RunConfig.
inline RunConfig resolve_run_config(const std::string& preset, const std::string& config_path,
                                    const std::vector<std::string>& overrides) {
  nlohmann::json j = preset.empty() ? nlohmann::json::parse(to_json(RunConfig{}).dump()) : preset_json(preset);
  if (!config_path.empty()) j.merge_patch(read_json_file(config_path));
  j = nlohmann::json::parse(to_json(run_config_from_json(j)).dump());
  for (const auto& o : overrides) apply_override(j, o);
  return run_config_from_json(j);
}

/// Hash of everything that determines results (the output directory is
/// excluded).
inline std::string run_config_hash(const RunConfig& c) {
  nlohmann::json j = nlohmann::json::parse(to_json(c).dump());
  j.erase("output_dir");
  return config_hash(j);
}

}  // namespace dtp
