#pragma once

// Experiment configuration: one JSON file names the tasks, the model size,
// the training plans, and the evaluation grids. Consumed by the CLI.

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "fddprec/dataset_io.hpp"
#include "fddprec/metrics.hpp"
#include "fddprec/train.hpp"

namespace fddprec {

// One task entry: a TaskConfig plus how much data to use and, optionally,
// where the dataset file lives. No file means the samples are generated in
// memory from (config, samples, config.seed) — equally reproducible.
struct TaskSpec {
  TaskConfig config;
  std::size_t samples = 1024;
  double train_fraction = 0.8;
  std::string dataset;
};

struct EvalSpec {
  std::vector<std::string> schemes = {"zf", "wmmse", "random"};
  std::vector<double> snr_grid;  // empty: the task's own operating point
};

struct ScalingSpec {
  ScalingAxis axis = ScalingAxis::experts;
  std::vector<std::size_t> grid;
  TrainPlan plan;  // epochs 0 evaluates untrained variants
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  Hyper hyper;
  std::vector<TaskSpec> tasks;
  std::map<std::string, double> weights;  // per-task multitask weight; empty: uniform
  TrainPlan train;
  TrainPlan cep_stage1;  // defaults to `train` when the config has no cep_stage1 block
  bool has_finetune = false;
  TaskSpec finetune_target;
  TrainPlan finetune_plan;
  EvalSpec eval;
  bool has_scaling = false;
  ScalingSpec scaling;
  nlohmann::json raw;  // verbatim config, re-emitted as the metrics sidecar

  const TaskSpec& task(const std::string& id) const {
    if (id.empty()) return tasks.front();
    for (const auto& t : tasks)
      if (t.config.task_id == id) return t;
    throw std::invalid_argument("config lists no task '" + id + "'");
  }
};

inline TrainPlan parse_plan(const nlohmann::json& j, TrainPlan base = {}) {
  TrainPlan p = base;
  if (j.contains("epochs")) p.epochs = j.at("epochs").get<std::size_t>();
  if (j.contains("batch_size")) p.batch_size = j.at("batch_size").get<std::size_t>();
  if (j.contains("batches_per_epoch"))
    p.batches_per_epoch = j.at("batches_per_epoch").get<std::size_t>();
  if (j.contains("lr")) p.adam.lr = j.at("lr").get<double>();
  if (j.contains("beta1")) p.adam.beta1 = j.at("beta1").get<double>();
  if (j.contains("beta2")) p.adam.beta2 = j.at("beta2").get<double>();
  if (j.contains("eps")) p.adam.eps = j.at("eps").get<double>();
  if (j.contains("weight_decay")) p.adam.weight_decay = j.at("weight_decay").get<double>();
  if (j.contains("checkpoint_every"))
    p.checkpoint_every = j.at("checkpoint_every").get<std::size_t>();
  if (j.contains("cep_train_pilot")) p.cep_train_pilot = j.at("cep_train_pilot").get<bool>();
  if (j.contains("quantizer")) {
    const auto q = j.at("quantizer").get<std::string>();
    if (q == "hard")
      p.quantizer = QuantizerMode::hard;
    else if (q == "pass")
      p.quantizer = QuantizerMode::pass;
    else
      throw std::invalid_argument("quantizer: expected hard or pass, got '" + q + "'");
  }
  return p;
}

inline TaskSpec parse_task_spec(const nlohmann::json& j) {
  TaskSpec spec;
  spec.config = j.get<TaskConfig>();
  if (j.contains("samples")) spec.samples = j.at("samples").get<std::size_t>();
  if (j.contains("train_fraction")) spec.train_fraction = j.at("train_fraction").get<double>();
  if (j.contains("dataset")) spec.dataset = j.at("dataset").get<std::string>();
  if (spec.samples < 2)
    throw std::invalid_argument("task '" + spec.config.task_id + "': need at least 2 samples");
  if (!(spec.train_fraction > 0.0) || !(spec.train_fraction < 1.0))
    throw std::invalid_argument("task '" + spec.config.task_id +
                                "': train_fraction outside (0,1)");
  validate_config(spec.config);
  return spec;
}

inline ExperimentConfig parse_experiment(const nlohmann::json& j) {
  ExperimentConfig ex;
  ex.raw = j;
  if (j.contains("seed")) ex.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("hyper")) ex.hyper = j.at("hyper").get<Hyper>();
  ex.hyper.validate();
  if (!j.contains("tasks") || !j.at("tasks").is_array() || j.at("tasks").empty())
    throw std::invalid_argument("config: 'tasks' must be a nonempty array");
  for (const auto& t : j.at("tasks")) {
    TaskSpec spec = parse_task_spec(t);
    for (const auto& other : ex.tasks)
      if (other.config.task_id == spec.config.task_id)
        throw std::invalid_argument("config: duplicate task '" + spec.config.task_id + "'");
    ex.tasks.push_back(std::move(spec));
  }
  if (j.contains("weights"))
    for (const auto& [id, w] : j.at("weights").items()) {
      ex.task(id);  // must name a declared task
      ex.weights[id] = w.get<double>();
    }
  if (j.contains("train")) ex.train = parse_plan(j.at("train"));
  ex.cep_stage1 =
      j.contains("cep_stage1") ? parse_plan(j.at("cep_stage1"), ex.train) : ex.train;
  if (j.contains("finetune")) {
    const auto& f = j.at("finetune");
    if (!f.contains("task")) throw std::invalid_argument("finetune: missing 'task' block");
    ex.finetune_target = parse_task_spec(f.at("task"));
    ex.finetune_plan = parse_plan(f, ex.train);
    ex.has_finetune = true;
  }
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    if (e.contains("schemes")) ex.eval.schemes = e.at("schemes").get<std::vector<std::string>>();
    if (e.contains("snr_grid")) ex.eval.snr_grid = e.at("snr_grid").get<std::vector<double>>();
    if (ex.eval.schemes.empty())
      throw std::invalid_argument("eval: 'schemes' must be nonempty");
  }
  if (j.contains("scaling")) {
    const auto& s = j.at("scaling");
    ex.scaling.axis = scaling_axis_from_string(s.at("axis").get<std::string>());
    ex.scaling.grid = s.at("grid").get<std::vector<std::size_t>>();
    if (ex.scaling.grid.empty()) throw std::invalid_argument("scaling: 'grid' must be nonempty");
    ex.scaling.plan = parse_plan(s, TrainPlan{});
    ex.has_scaling = true;
  }
  return ex;
}

inline ExperimentConfig load_experiment(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot read config '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("config '" + path + "': " + e.what());
  }
  try {
    return parse_experiment(j);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("config '" + path + "': " + e.what());
  }
}

// Where gen-data writes a task's dataset and other commands look for it:
// the declared path (relative paths resolve against the config file), or
// <out>/<task_id>.fddc when the config declares none.
inline std::filesystem::path dataset_target(const TaskSpec& spec,
                                            const std::filesystem::path& config_dir,
                                            const std::filesystem::path& out_dir) {
  if (spec.dataset.empty()) return out_dir / (spec.config.task_id + ".fddc");
  std::filesystem::path p(spec.dataset);
  return p.is_absolute() ? p : config_dir / p;
}

// Datasets with a declared file must exist (gen-data creates them);
// undeclared ones are generated in memory, deterministically.
inline ChannelDataset obtain_dataset(const TaskSpec& spec,
                                     const std::filesystem::path& config_dir,
                                     const std::filesystem::path& out_dir) {
  const auto path = dataset_target(spec, config_dir, out_dir);
  if (spec.dataset.empty() && !std::filesystem::exists(path))
    return generate_dataset(spec.config, spec.samples, spec.config.seed);
  if (!std::filesystem::exists(path))
    throw io_error("dataset '" + path.string() + "' not found; run gen-data first");
  ChannelDataset ds = load_dataset(path.string());
  if (ds.config.n_tx != spec.config.n_tx || ds.config.n_users != spec.config.n_users)
    throw manifest_error("dataset '" + path.string() + "' is " +
                         std::to_string(ds.config.n_users) + "x" +
                         std::to_string(ds.config.n_tx) + ", config wants " +
                         std::to_string(spec.config.n_users) + "x" +
                         std::to_string(spec.config.n_tx));
  return ds;
}

}  // namespace fddprec
