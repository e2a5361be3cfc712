// Command-line driver: dataset generation, training, fine-tuning,
// evaluation, paired scheme comparisons, and scaling sweeps.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fddprec/checkpoint.hpp"
#include "fddprec/experiment.hpp"

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config_path;
  std::string out = "out";
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string precision = "f64";

  std::string scheme = "mtl";
  std::string task;
  std::string ckpt;
  std::string resume;
  double snr = 0.0;
  bool snr_given = false;
  std::string command;
};

double quiet_nan() { return std::numeric_limits<double>::quiet_NaN(); }

template <typename Fn>
double timed_ms(Fn&& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  fn();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count();
}

bool is_learned(const std::string& scheme) {
  return scheme == "mtl" || scheme == "stl" || scheme == "dsc" || scheme == "cep";
}

// Appends to an existing CSV (schema-checked) or starts a fresh one, and
// drops the full experiment config next to it.
void emit_metrics(const fs::path& out_dir, const std::string& name,
                  std::vector<fddprec::MetricsRecord> records, const nlohmann::json& cfg) {
  fs::create_directories(out_dir);
  const fs::path csv = out_dir / (name + ".csv");
  if (fs::exists(csv)) {
    auto all = fddprec::read_metrics_csv(csv.string());
    all.insert(all.end(), records.begin(), records.end());
    records = std::move(all);
  }
  fddprec::write_metrics_csv(csv.string(), records);
  std::ofstream side(out_dir / (name + ".json"));
  if (!side) throw fddprec::io_error("cannot write config sidecar for '" + name + "'");
  side << cfg.dump(2) << "\n";
  std::cout << "wrote " << csv.string() << "\n";
}

void print_record(const fddprec::MetricsRecord& r) {
  std::cout << std::left << std::setw(8) << r.scheme << " task=" << r.task_id
            << " snr=" << r.snr_db << " dB  se=" << std::setprecision(6) << r.spectral_efficiency
            << " bps/Hz  params=" << r.params << "  flops=" << r.flops_m << " M  ("
            << std::setprecision(3) << r.wall_ms << " ms)\n";
}

template <typename T>
struct LoadedModel {
  std::string kind;
  fddprec::ModelBundle<T> bundle;
  fddprec::DscModel<T> dsc;
  fddprec::CepModel<T> cep;
};

template <typename T>
LoadedModel<T> load_model(const std::string& path) {
  auto ck = fddprec::load_checkpoint<T>(path);
  LoadedModel<T> m;
  m.kind = ck.kind;
  if (ck.kind == "mtl")
    m.bundle = fddprec::restore_bundle<T>(ck);
  else if (ck.kind == "dsc")
    m.dsc = fddprec::restore_dsc<T>(ck);
  else
    m.cep = fddprec::restore_cep<T>(ck);
  return m;
}

// One MetricsRecord: spectral efficiency of `scheme` on `test` at an
// explicit operating SNR (NaN keeps the task's own).
template <typename T>
fddprec::MetricsRecord eval_one(const std::string& scheme, LoadedModel<T>* model,
                                const fddprec::TaskSpec& spec, const fddprec::DatasetSplit& test,
                                double snr_db, std::uint64_t seed) {
  const fddprec::TaskConfig& cfg = spec.config;
  const double snr = std::isnan(snr_db) ? cfg.snr_db : snr_db;
  const double sigma2 = fddprec::snr_to_sigma2(snr, cfg.power);

  fddprec::MetricsRecord r;
  r.scheme = scheme;
  r.task_id = cfg.task_id;
  r.snr_db = snr;
  r.seed = seed;
  if (is_learned(scheme) && model == nullptr)
    throw std::invalid_argument("eval: scheme '" + scheme + "' needs --ckpt");

  r.wall_ms = timed_ms([&] {
    if (scheme == "zf") {
      r.spectral_efficiency = fddprec::evaluate_zf(test, cfg.power, sigma2);
    } else if (scheme == "wmmse") {
      r.spectral_efficiency = fddprec::evaluate_wmmse(test, cfg.power, sigma2);
    } else if (scheme == "random") {
      r.spectral_efficiency = fddprec::evaluate_random(test, cfg.power, sigma2, seed);
    } else if (scheme == "mtl" || scheme == "stl") {
      if (model->kind != "mtl")
        throw std::invalid_argument("eval: checkpoint kind '" + model->kind +
                                    "' cannot serve scheme '" + scheme + "'");
      r.spectral_efficiency = fddprec::evaluate_model(model->bundle, cfg.task_id, test, seed,
                                                      fddprec::QuantizerMode::hard, snr);
      r.params = fddprec::count_params(model->bundle).total;
      r.flops_m = fddprec::count_flops(model->bundle.hyper, cfg).total / 1e6;
    } else if (scheme == "dsc") {
      if (model->kind != "dsc")
        throw std::invalid_argument("eval: checkpoint kind '" + model->kind +
                                    "' cannot serve scheme 'dsc'");
      r.spectral_efficiency = fddprec::evaluate_dsc(model->dsc, test, seed, snr);
      r.params = fddprec::count_params(model->dsc);
      r.flops_m = fddprec::count_flops_dsc(model->dsc.hyper, cfg).total / 1e6;
    } else if (scheme == "cep") {
      if (model->kind != "cep")
        throw std::invalid_argument("eval: checkpoint kind '" + model->kind +
                                    "' cannot serve scheme 'cep'");
      r.spectral_efficiency = fddprec::evaluate_cep(model->cep, test, seed, snr);
      r.params = fddprec::count_params(model->cep);
      r.flops_m = fddprec::count_flops_cep(model->cep.hyper, cfg).total / 1e6;
    } else {
      throw std::invalid_argument("eval: unknown scheme '" + scheme + "'");
    }
  });
  return r;
}

int cmd_gen_data(const fddprec::ExperimentConfig& ex, const Options& opt,
                 const fs::path& config_dir) {
  for (const auto& spec : ex.tasks) {
    auto ds = fddprec::generate_dataset(spec.config, spec.samples, spec.config.seed);
    const fs::path path = fddprec::dataset_target(spec, config_dir, opt.out);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fddprec::save_dataset(ds, path.string());
    std::cout << "wrote " << path.string() << " (" << ds.samples << " samples, "
              << ds.config.n_users << "x" << ds.config.n_tx << ")\n";
  }
  return 0;
}

template <typename T>
int cmd_train(const fddprec::ExperimentConfig& ex, const Options& opt,
              const fs::path& config_dir, std::uint64_t seed) {
  const fs::path out(opt.out);
  fs::create_directories(out);
  if (!opt.resume.empty() && opt.scheme != "mtl")
    throw std::invalid_argument("train: --resume only applies to --scheme mtl");

  fddprec::TrainPlan plan = ex.train;
  plan.seed = seed;
  plan.history_path = (out / (opt.scheme + "_history.csv")).string();
  plan.checkpoint_path = (out / (opt.scheme + ".ckpt")).string();

  std::vector<fddprec::ChannelDataset> store;
  store.reserve(ex.tasks.size());

  if (opt.scheme == "mtl") {
    std::vector<fddprec::TaskData> data;
    fddprec::MTLWeights weights;
    std::vector<fddprec::DatasetSplit> tests;
    fddprec::ModelBundle<T> bundle;
    bundle.initialize(ex.hyper, seed);
    for (const auto& spec : ex.tasks) {
      store.push_back(fddprec::obtain_dataset(spec, config_dir, out));
      auto [train, test] = fddprec::split(store.back(), spec.train_fraction);
      bundle.register_task(spec.config, seed);
      data.push_back({spec.config.task_id, train});
      tests.push_back(test);
      auto it = ex.weights.find(spec.config.task_id);
      weights.lambda.push_back(it == ex.weights.end() ? 1.0 : it->second);
    }
    if (!opt.resume.empty()) {
      auto [resumed, result] = fddprec::resume_pretrain<T>(opt.resume, data, weights, plan);
      bundle = resumed;
    } else {
      fddprec::pretrain_mtl(bundle, data, weights, plan);
    }
    auto counts = fddprec::count_params(bundle);
    std::cout << "model: " << counts.total << " params (" << counts.trunk << " trunk)\n";
    for (std::size_t i = 0; i < ex.tasks.size(); ++i) {
      const auto& id = ex.tasks[i].config.task_id;
      std::cout << "task " << id << ": test se="
                << fddprec::evaluate_model(bundle, id, tests[i], seed) << " bps/Hz\n";
    }
  } else if (opt.scheme == "stl") {
    const auto& spec = ex.task(opt.task);
    store.push_back(fddprec::obtain_dataset(spec, config_dir, out));
    auto [train, test] = fddprec::split(store.back(), spec.train_fraction);
    fddprec::ModelBundle<T> bundle;
    bundle.initialize(ex.hyper, seed);
    bundle.register_task(spec.config, seed);
    fddprec::train_stl(bundle, {spec.config.task_id, train}, plan);
    std::cout << "task " << spec.config.task_id << ": test se="
              << fddprec::evaluate_model(bundle, spec.config.task_id, test, seed) << " bps/Hz\n";
  } else if (opt.scheme == "dsc") {
    const auto& spec = ex.task(opt.task);
    store.push_back(fddprec::obtain_dataset(spec, config_dir, out));
    auto [train, test] = fddprec::split(store.back(), spec.train_fraction);
    fddprec::DscModel<T> model;
    model.initialize(spec.config, ex.hyper, seed);
    fddprec::train_dsc(model, train, plan);
    std::cout << "task " << spec.config.task_id << ": test se="
              << fddprec::evaluate_dsc(model, test, seed) << " bps/Hz\n";
  } else {  // cep
    const auto& spec = ex.task(opt.task);
    store.push_back(fddprec::obtain_dataset(spec, config_dir, out));
    auto [train, test] = fddprec::split(store.back(), spec.train_fraction);
    fddprec::CepModel<T> model;
    model.initialize(spec.config, ex.hyper, seed);
    fddprec::TrainPlan stage1 = ex.cep_stage1;
    stage1.seed = seed;
    fddprec::train_cep(model, train, stage1, plan);
    std::cout << "task " << spec.config.task_id
              << ": estimator nmse=" << fddprec::cep_nmse(model, test, seed)
              << "  test se=" << fddprec::evaluate_cep(model, test, seed) << " bps/Hz\n";
  }
  std::cout << "checkpoint " << plan.checkpoint_path << "\nhistory " << plan.history_path
            << "\n";
  return 0;
}

template <typename T>
int cmd_finetune(const fddprec::ExperimentConfig& ex, const Options& opt,
                 const fs::path& config_dir, std::uint64_t seed) {
  if (!ex.has_finetune)
    throw std::invalid_argument("finetune: config has no 'finetune' block");
  if (opt.ckpt.empty()) throw std::invalid_argument("finetune: --ckpt is required");
  const fs::path out(opt.out);
  fs::create_directories(out);

  auto ck = fddprec::load_checkpoint<T>(opt.ckpt);
  auto bundle = fddprec::restore_bundle<T>(ck);
  const fddprec::TaskSpec& spec = ex.finetune_target;
  auto ds = fddprec::obtain_dataset(spec, config_dir, out);
  auto [train, test] = fddprec::split(ds, spec.train_fraction);

  fddprec::TrainPlan plan = ex.finetune_plan;
  plan.seed = seed;
  plan.history_path = (out / ("finetune_" + spec.config.task_id + "_history.csv")).string();
  plan.checkpoint_path = (out / ("finetune_" + spec.config.task_id + ".ckpt")).string();
  fddprec::finetune(bundle, spec.config, train, plan);

  std::cout << "task " << spec.config.task_id << ": test se="
            << fddprec::evaluate_model(bundle, spec.config.task_id, test, seed) << " bps/Hz\n"
            << "checkpoint " << plan.checkpoint_path << "\nhistory " << plan.history_path
            << "\n";
  return 0;
}

template <typename T>
int cmd_eval(const fddprec::ExperimentConfig& ex, const Options& opt,
             const fs::path& config_dir, std::uint64_t seed) {
  const auto& spec = ex.task(opt.task);
  auto ds = fddprec::obtain_dataset(spec, config_dir, opt.out);
  auto [train, test] = fddprec::split(ds, spec.train_fraction);
  (void)train;

  LoadedModel<T> model;
  LoadedModel<T>* mp = nullptr;
  if (is_learned(opt.scheme)) {
    if (opt.ckpt.empty())
      throw std::invalid_argument("eval: scheme '" + opt.scheme + "' needs --ckpt");
    model = load_model<T>(opt.ckpt);
    mp = &model;
  }
  auto record =
      eval_one<T>(opt.scheme, mp, spec, test, opt.snr_given ? opt.snr : quiet_nan(), seed);
  print_record(record);
  emit_metrics(opt.out, "metrics", {record}, ex.raw);
  return 0;
}

template <typename T>
int cmd_compare(const fddprec::ExperimentConfig& ex, const Options& opt,
                const fs::path& config_dir, std::uint64_t seed) {
  const auto& spec = ex.task(opt.task);
  auto ds = fddprec::obtain_dataset(spec, config_dir, opt.out);
  auto [train, test] = fddprec::split(ds, spec.train_fraction);
  (void)train;

  LoadedModel<T> model;
  LoadedModel<T>* mp = nullptr;
  if (!opt.ckpt.empty()) {
    model = load_model<T>(opt.ckpt);
    mp = &model;
  }
  std::vector<double> snrs = ex.eval.snr_grid;
  if (snrs.empty()) snrs.push_back(spec.config.snr_db);

  std::vector<fddprec::MetricsRecord> records;
  for (const auto& scheme : ex.eval.schemes)
    for (double snr : snrs) {
      records.push_back(eval_one<T>(scheme, mp, spec, test, snr, seed));
      print_record(records.back());
    }
  emit_metrics(opt.out, "compare", records, ex.raw);
  return 0;
}

template <typename T>
int cmd_scaling(const fddprec::ExperimentConfig& ex, const Options& opt,
                const fs::path& config_dir, std::uint64_t seed) {
  if (!ex.has_scaling) throw std::invalid_argument("scaling: config has no 'scaling' block");
  const auto& spec = ex.task(opt.task);
  auto ds = fddprec::obtain_dataset(spec, config_dir, opt.out);
  auto [train, test] = fddprec::split(ds, spec.train_fraction);

  fddprec::TrainPlan plan = ex.scaling.plan;
  plan.seed = seed;
  auto points = fddprec::scaling_study<T>(spec.config, ex.hyper, ex.scaling.axis,
                                          ex.scaling.grid, train, test, plan, seed);

  const fs::path out(opt.out);
  fs::create_directories(out);
  const fs::path csv = out / "scaling.csv";
  std::ofstream f(csv);
  if (!f) throw fddprec::io_error("cannot write '" + csv.string() + "'");
  f << "value,params,flops_m,spectral_efficiency\n";
  f.precision(17);
  for (const auto& p : points) {
    f << p.value << ',' << p.params << ',' << p.flops_m << ',' << p.spectral_efficiency << '\n';
    std::cout << "value=" << p.value << " params=" << p.params << " flops=" << p.flops_m
              << " M  se=" << p.spectral_efficiency << " bps/Hz\n";
  }
  std::ofstream side(out / "scaling.json");
  side << ex.raw.dump(2) << "\n";
  std::cout << "wrote " << csv.string() << "\n";
  return 0;
}

template <typename T>
int run(const Options& opt) {
  auto ex = fddprec::load_experiment(opt.config_path);
  const std::uint64_t seed = opt.seed_given ? opt.seed : ex.seed;
  const fs::path config_dir = fs::path(opt.config_path).parent_path();
  if (opt.command == "gen-data") return cmd_gen_data(ex, opt, config_dir);
  if (opt.command == "train") return cmd_train<T>(ex, opt, config_dir, seed);
  if (opt.command == "finetune") return cmd_finetune<T>(ex, opt, config_dir, seed);
  if (opt.command == "eval") return cmd_eval<T>(ex, opt, config_dir, seed);
  if (opt.command == "compare") return cmd_compare<T>(ex, opt, config_dir, seed);
  return cmd_scaling<T>(ex, opt, config_dir, seed);
}

std::string single_line(std::string msg) {
  for (auto& c : msg)
    if (c == '\n' || c == '\r') c = ' ';
  return msg;
}

}  // namespace

int main(int argc, char** argv) {
  Options opt;
  CLI::App app{"fdd multi-user mimo precoding workbench"};
  app.require_subcommand(1);
  app.add_option("-c,--config", opt.config_path, "experiment config (json)")->required();
  app.add_option("-o,--out", opt.out, "output directory (default: out)");
  auto* seed_opt = app.add_option("--seed", opt.seed, "override the config seed");
  app.add_option("--precision", opt.precision, "working precision")
      ->check(CLI::IsMember({"f32", "f64"}));

  auto* gen = app.add_subcommand("gen-data", "generate and store the datasets");
  auto* train = app.add_subcommand("train", "train a scheme from scratch");
  train->add_option("--scheme", opt.scheme, "mtl | stl | dsc | cep")
      ->check(CLI::IsMember({"mtl", "stl", "dsc", "cep"}));
  train->add_option("--task", opt.task, "task id for single-task schemes");
  train->add_option("--resume", opt.resume, "checkpoint to resume (mtl)");
  auto* finetune = app.add_subcommand("finetune", "adapt a pretrained trunk to a new task");
  finetune->add_option("--ckpt", opt.ckpt, "pretrained checkpoint")->required();
  auto* eval = app.add_subcommand("eval", "evaluate one scheme on a task's test split");
  eval->add_option("--scheme", opt.scheme, "mtl | stl | dsc | cep | zf | wmmse | random")
      ->required()
      ->check(CLI::IsMember({"mtl", "stl", "dsc", "cep", "zf", "wmmse", "random"}));
  eval->add_option("--task", opt.task, "task id (default: first)");
  eval->add_option("--ckpt", opt.ckpt, "checkpoint for learned schemes");
  auto* snr_opt = eval->add_option("--snr", opt.snr, "operating snr in dB");
  auto* compare = app.add_subcommand("compare", "one row per scheme per snr");
  compare->add_option("--task", opt.task, "task id (default: first)");
  compare->add_option("--ckpt", opt.ckpt, "checkpoint for learned schemes");
  auto* scaling = app.add_subcommand("scaling", "sweep experts or width");
  scaling->add_option("--task", opt.task, "task id (default: first)");
  for (auto* sub : {gen, train, finetune, eval, compare, scaling}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << single_line(e.what()) << "\n" << app.help() << std::flush;
    return 2;
  }
  opt.seed_given = seed_opt->count() > 0;
  opt.snr_given = snr_opt->count() > 0;
  opt.command = app.get_subcommands().front()->get_name();

  try {
    return opt.precision == "f32" ? run<float>(opt) : run<double>(opt);
  } catch (const std::exception& e) {
    std::cerr << "error: " << single_line(e.what()) << "\n";
    return 1;
  }
}
