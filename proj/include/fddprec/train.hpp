#pragma once

// Training loops. All randomness inside an epoch is derived from
// (seed, epoch number) alone, so a run checkpointed at any epoch boundary
// and resumed reproduces the uninterrupted run bit for bit.

#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "fddprec/channel.hpp"
#include "fddprec/checkpoint.hpp"
#include "fddprec/model.hpp"
#include "fddprec/optim.hpp"
#include "fddprec/rates.hpp"

namespace fddprec {

struct TaskData {
  std::string task_id;
  DatasetSplit train;
};

struct TrainPlan {
  std::size_t epochs = 50;
  std::size_t batch_size = 256;
  std::size_t batches_per_epoch = 0;  // 0: full passes, floor(samples/batch) rounds
  AdamConfig adam{};
  std::uint64_t seed = 0;
  QuantizerMode quantizer = QuantizerMode::hard;
  std::string history_path;          // per-epoch CSV when nonempty
  std::string checkpoint_path;       // written at the final epoch when nonempty
  std::size_t checkpoint_every = 0;  // additionally every n epochs (same path)
  bool cep_train_pilot = true;       // stage 1 adapts the pilot alongside the estimator
};

struct EpochRecord {
  std::size_t epoch = 0;
  std::string task_id;  // "all" rows carry the weighted total
  double loss = 0.0;
  double sum_rate = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
};

inline void write_history_csv(const std::string& path, const std::vector<EpochRecord>& history) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot write '" + path + "'");
  out << "epoch,task_id,loss,sum_rate\n";
  out.precision(17);
  for (const auto& r : history)
    out << r.epoch << ',' << r.task_id << ',' << r.loss << ',' << r.sum_rate << '\n';
  if (!out) throw io_error("short write on '" + path + "'");
}

namespace detail {

inline void shuffle_indices(std::vector<std::size_t>& idx, Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i)
    std::swap(idx[i - 1], idx[rng.next_u64() % i]);
}

// Epoch/task/round randomness: one stream for the epoch's shuffles
// (round index 0) and one per accumulation round (1 + r).
inline std::uint64_t round_seed(std::uint64_t seed, std::size_t epoch, const std::string& task_id,
                                std::size_t round) {
  return derive_seed(derive_seed(seed, kStreamEpoch, epoch), fnv1a(task_id), round);
}

inline void check_task_data(const TaskConfig& registered, const TaskData& td) {
  if (td.train.count == 0)
    throw std::invalid_argument("train: task '" + td.task_id + "' has an empty dataset");
  const TaskConfig& ds = td.train.ds->config;
  if (ds.n_tx != registered.n_tx || ds.n_users != registered.n_users)
    throw std::invalid_argument("train: task '" + td.task_id + "' dataset is " +
                                std::to_string(ds.n_users) + "x" + std::to_string(ds.n_tx) +
                                " but the registered config is " +
                                std::to_string(registered.n_users) + "x" +
                                std::to_string(registered.n_tx));
}

}  // namespace detail

// Mean negative sum rate over the listed samples of one task, as a graph
// node; pilot noise (and dropout, in train mode) is drawn from rng.
template <typename T>
std::pair<Tensor<T>, double> batch_task_loss(const ModelBundle<T>& bundle,
                                             const std::string& task_id,
                                             const DatasetSplit& split,
                                             const std::vector<std::size_t>& indices,
                                             RunMode mode, Rng& rng, QuantizerMode qm) {
  if (indices.empty()) throw std::invalid_argument("train: empty batch for '" + task_id + "'");
  const double sigma2 = sigma2_of(bundle.task(task_id).config);
  std::vector<Tensor<T>> rates;
  rates.reserve(indices.size());
  double mean_rate = 0.0;
  for (std::size_t i : indices) {
    ComplexMatrix<T> h = split.template sample<T>(i);
    ComplexMatrix<T> v = forward_end_to_end(h, bundle, task_id, mode, rng, qm);
    rates.push_back(sum_rate_t(h, v, sigma2));
    mean_rate += static_cast<double>(rates.back().item());
  }
  return {task_loss(rates), mean_rate / static_cast<double>(indices.size())};
}

namespace detail {

// The joint accumulation loop shared by pretraining, single-task training,
// and fine-tuning (which differ only in which parameters the optimizer
// holds). One backward pass and one optimizer step per accumulation round.
template <typename T>
TrainResult mtl_train_loop(ModelBundle<T>& bundle, const std::vector<TaskData>& tasks,
                           const MTLWeights& weights, const TrainPlan& plan, Adam<T>& opt,
                           std::size_t start_epoch) {
  if (tasks.empty()) throw std::invalid_argument("train: no tasks");
  if (weights.lambda.size() != tasks.size())
    throw std::invalid_argument("train: " + std::to_string(tasks.size()) + " tasks vs " +
                                std::to_string(weights.lambda.size()) + " weights");
  if (plan.batch_size == 0) throw std::invalid_argument("train: batch_size must be positive");
  for (const auto& td : tasks) check_task_data(bundle.task(td.task_id).config, td);
  if (start_epoch >= plan.epochs)
    throw std::invalid_argument("train: start epoch " + std::to_string(start_epoch) +
                                " is not before the plan's " + std::to_string(plan.epochs));

  TrainResult result;
  for (std::size_t epoch = start_epoch + 1; epoch <= plan.epochs; ++epoch) {
    // Per-task sample order for this epoch.
    std::vector<std::vector<std::size_t>> order(tasks.size());
    std::size_t rounds = plan.batches_per_epoch;
    for (std::size_t n = 0; n < tasks.size(); ++n) {
      order[n].resize(tasks[n].train.count);
      for (std::size_t i = 0; i < order[n].size(); ++i) order[n][i] = i;
      Rng shuffle_rng(round_seed(plan.seed, epoch, tasks[n].task_id, 0));
      shuffle_indices(order[n], shuffle_rng);
      if (plan.batches_per_epoch == 0)
        rounds = std::max<std::size_t>(
            rounds, std::max<std::size_t>(1, tasks[n].train.count / plan.batch_size));
    }

    std::vector<double> loss_acc(tasks.size(), 0.0), rate_acc(tasks.size(), 0.0);
    double total_acc = 0.0;
    for (std::size_t r = 0; r < rounds; ++r) {
      std::vector<Tensor<T>> task_losses;
      task_losses.reserve(tasks.size());
      for (std::size_t n = 0; n < tasks.size(); ++n) {
        const std::size_t count = tasks[n].train.count;
        const std::size_t n_batches = std::max<std::size_t>(1, count / plan.batch_size);
        const std::size_t b = r % n_batches;
        const std::size_t lo = b * plan.batch_size;
        const std::size_t hi = std::min(count, lo + plan.batch_size);
        std::vector<std::size_t> batch(order[n].begin() + lo, order[n].begin() + hi);
        Rng round_rng(round_seed(plan.seed, epoch, tasks[n].task_id, 1 + r));
        auto [loss, mean_rate] = batch_task_loss(bundle, tasks[n].task_id, tasks[n].train,
                                                 batch, RunMode::train, round_rng,
                                                 plan.quantizer);
        loss_acc[n] += static_cast<double>(loss.item());
        rate_acc[n] += mean_rate;
        task_losses.push_back(std::move(loss));
      }
      Tensor<T> total = mtl_loss(task_losses, weights);
      total_acc += static_cast<double>(total.item());
      backward(total);
      opt.step();
      opt.zero_grad();
    }

    const double inv_rounds = 1.0 / static_cast<double>(rounds);
    double epoch_rate = 0.0;
    for (std::size_t n = 0; n < tasks.size(); ++n) {
      result.history.push_back(
          {epoch, tasks[n].task_id, loss_acc[n] * inv_rounds, rate_acc[n] * inv_rounds});
      epoch_rate += rate_acc[n] * inv_rounds;
    }
    result.history.push_back({epoch, "all", total_acc * inv_rounds,
                              epoch_rate / static_cast<double>(tasks.size())});

    if (!plan.checkpoint_path.empty() &&
        ((plan.checkpoint_every && epoch % plan.checkpoint_every == 0) || epoch == plan.epochs))
      save_checkpoint(plan.checkpoint_path, bundle, &opt, epoch);
  }
  if (!plan.history_path.empty()) write_history_csv(plan.history_path, result.history);
  return result;
}

}  // namespace detail

// Algorithm: per epoch, every task contributes one mini-batch per
// accumulation round; the weighted per-task losses are summed into a single
// scalar, backpropagated once, stepped once.
template <typename T>
TrainResult pretrain_mtl(ModelBundle<T>& bundle, const std::vector<TaskData>& tasks,
                         const MTLWeights& weights, const TrainPlan& plan) {
  Adam<T> opt(plan.adam);
  bundle.visit_all([&](const std::string& n, Tensor<T>& t) { opt.add_param(n, t); });
  return detail::mtl_train_loop(bundle, tasks, weights, plan, opt, 0);
}

// Independent single-task model: a degenerate one-task pretraining run over
// a private bundle.
template <typename T>
TrainResult train_stl(ModelBundle<T>& bundle, const TaskData& task, const TrainPlan& plan) {
  return pretrain_mtl(bundle, {task}, MTLWeights::uniform(1), plan);
}

// Continue a checkpointed pretraining run. The checkpoint must carry
// optimizer state; epochs resume after the recorded one.
template <typename T>
std::pair<ModelBundle<T>, TrainResult> resume_pretrain(const std::string& checkpoint_path,
                                                       const std::vector<TaskData>& tasks,
                                                       const MTLWeights& weights,
                                                       const TrainPlan& plan) {
  CheckpointFile<T> ck = load_checkpoint<T>(checkpoint_path);
  ModelBundle<T> bundle = restore_bundle(ck);
  if (!ck.has_adam)
    throw manifest_error("resume: '" + checkpoint_path + "' carries no optimizer state");
  Adam<T> opt(plan.adam);
  bundle.visit_all([&](const std::string& n, Tensor<T>& t) { opt.add_param(n, t); });
  opt.restore(ck.adam_step, ck.adam_state);
  TrainResult result = detail::mtl_train_loop(bundle, tasks, weights, plan, opt, ck.epoch);
  return {std::move(bundle), std::move(result)};
}

// Adapt a pretrained trunk to an unseen configuration: fresh task-specific
// parameters are registered and trained; the trunk is not handed to the
// optimizer, so its bytes never change.
template <typename T>
TrainResult finetune(ModelBundle<T>& bundle, const TaskConfig& cfg, const DatasetSplit& train,
                     const TrainPlan& plan) {
  bundle.register_task(cfg, plan.seed);  // throws on task id collision
  Adam<T> opt(plan.adam);
  bundle.visit_task(cfg.task_id,
                    [&](const std::string& n, Tensor<T>& t) { opt.add_param(n, t); });
  return detail::mtl_train_loop(bundle, {{cfg.task_id, train}}, MTLWeights::uniform(1), plan,
                                opt, 0);
}

// End-to-end training of the MLP-decoder variant under the sum-rate loss.
template <typename T>
TrainResult train_dsc(DscModel<T>& model, const DatasetSplit& train, const TrainPlan& plan) {
  detail::check_task_data(model.config, {model.config.task_id, train});
  if (plan.batch_size == 0) throw std::invalid_argument("train: batch_size must be positive");
  Adam<T> opt(plan.adam);
  model.visit([&](const std::string& n, Tensor<T>& t) { opt.add_param(n, t); });

  const double sigma2 = sigma2_of(model.config);
  TrainResult result;
  for (std::size_t epoch = 1; epoch <= plan.epochs; ++epoch) {
    std::vector<std::size_t> order(train.count);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(detail::round_seed(plan.seed, epoch, model.config.task_id, 0));
    detail::shuffle_indices(order, shuffle_rng);
    const std::size_t n_batches = std::max<std::size_t>(1, train.count / plan.batch_size);
    const std::size_t rounds = plan.batches_per_epoch ? plan.batches_per_epoch : n_batches;

    double loss_acc = 0.0, rate_acc = 0.0;
    for (std::size_t r = 0; r < rounds; ++r) {
      const std::size_t b = r % n_batches;
      const std::size_t lo = b * plan.batch_size;
      const std::size_t hi = std::min(train.count, lo + plan.batch_size);
      Rng round_rng(detail::round_seed(plan.seed, epoch, model.config.task_id, 1 + r));
      std::vector<Tensor<T>> rates;
      rates.reserve(hi - lo);
      double mean_rate = 0.0;
      for (std::size_t i = lo; i < hi; ++i) {
        ComplexMatrix<T> h = train.template sample<T>(order[i]);
        ComplexMatrix<T> noise =
            gaussian_noise<T>(h.rows(), model.dims.pilot_len, sigma2, round_rng);
        ComplexMatrix<T> v = dsc_forward(h, model, noise, plan.quantizer);
        rates.push_back(sum_rate_t(h, v, sigma2));
        mean_rate += static_cast<double>(rates.back().item());
      }
      Tensor<T> loss = task_loss(rates);
      loss_acc += static_cast<double>(loss.item());
      rate_acc += mean_rate / static_cast<double>(hi - lo);
      backward(loss);
      opt.step();
      opt.zero_grad();
    }

    const double inv_rounds = 1.0 / static_cast<double>(rounds);
    result.history.push_back(
        {epoch, model.config.task_id, loss_acc * inv_rounds, rate_acc * inv_rounds});
    result.history.push_back({epoch, "all", loss_acc * inv_rounds, rate_acc * inv_rounds});
    if (!plan.checkpoint_path.empty() &&
        ((plan.checkpoint_every && epoch % plan.checkpoint_every == 0) || epoch == plan.epochs))
      save_checkpoint(plan.checkpoint_path, model, &opt, epoch);
  }
  if (!plan.history_path.empty()) write_history_csv(plan.history_path, result.history);
  return result;
}

// Mean squared channel-estimation error over the listed samples, as a
// graph node (normalized per user, not per entry).
template <typename T>
std::pair<Tensor<T>, double> batch_estimation_loss(const CepModel<T>& model,
                                                   const DatasetSplit& split,
                                                   const std::vector<std::size_t>& indices,
                                                   Rng& rng) {
  if (indices.empty()) throw std::invalid_argument("train: empty estimation batch");
  const double sigma2 = sigma2_of(model.config);
  Tensor<T> acc;
  double nmse_num = 0.0, nmse_den = 0.0;
  bool first = true;
  for (std::size_t i : indices) {
    ComplexMatrix<T> h = split.template sample<T>(i);
    ComplexMatrix<T> noise = gaussian_noise<T>(h.rows(), model.dims.pilot_len, sigma2, rng);
    ComplexMatrix<T> y =
        pilot_forward(h, model.pilot, model.config.pilot_symbol_energy, noise);
    Tensor<T> est = cep_estimate(y, model.estimator);
    Tensor<T> target = concat_cols<T>({h.re, h.im});  // constants
    Tensor<T> err = sum_all(square(sub(est, target)));
    acc = first ? err : add(acc, err);
    first = false;
    nmse_num += static_cast<double>(err.item());
    for (const T v : target.data()) nmse_den += static_cast<double>(v) * static_cast<double>(v);
  }
  const T norm = static_cast<T>(1.0 / static_cast<double>(indices.size() *
                                                          model.config.n_users));
  return {scale(acc, norm), nmse_num / nmse_den};
}

struct CepResult {
  TrainResult estimation;  // stage 1
  TrainResult precoding;   // stage 2
};

// Two-stage modular training: the estimator (and optionally the pilot)
// under squared channel error, then the precoding trunk and head under the
// sum-rate loss with stage-1 parameters frozen.
template <typename T>
CepResult train_cep(CepModel<T>& model, const DatasetSplit& train, const TrainPlan& stage1,
                    const TrainPlan& stage2) {
  detail::check_task_data(model.config, {model.config.task_id, train});
  if (stage1.batch_size == 0 || stage2.batch_size == 0)
    throw std::invalid_argument("train: batch_size must be positive");
  CepResult result;
  const double sigma2 = sigma2_of(model.config);

  {  // stage 1: channel estimation
    Adam<T> opt(stage1.adam);
    if (stage1.cep_train_pilot)
      model.pilot.visit("cep.pilot", [&](const std::string& n, Tensor<T>& t) {
        opt.add_param(n, t);
      });
    model.estimator.visit("cep.est",
                          [&](const std::string& n, Tensor<T>& t) { opt.add_param(n, t); });
    for (std::size_t epoch = 1; epoch <= stage1.epochs; ++epoch) {
      std::vector<std::size_t> order(train.count);
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      Rng shuffle_rng(detail::round_seed(stage1.seed, epoch, model.config.task_id, 0));
      detail::shuffle_indices(order, shuffle_rng);
      const std::size_t n_batches = std::max<std::size_t>(1, train.count / stage1.batch_size);
      const std::size_t rounds = stage1.batches_per_epoch ? stage1.batches_per_epoch : n_batches;
      double loss_acc = 0.0, nmse_acc = 0.0;
      for (std::size_t r = 0; r < rounds; ++r) {
        const std::size_t b = r % n_batches;
        const std::size_t lo = b * stage1.batch_size;
        const std::size_t hi = std::min(train.count, lo + stage1.batch_size);
        std::vector<std::size_t> batch(order.begin() + lo, order.begin() + hi);
        Rng round_rng(detail::round_seed(stage1.seed, epoch, model.config.task_id, 1 + r));
        auto [loss, nmse] = batch_estimation_loss(model, train, batch, round_rng);
        loss_acc += static_cast<double>(loss.item());
        nmse_acc += nmse;
        backward(loss);
        opt.step();
        opt.zero_grad();
      }
      const double inv = 1.0 / static_cast<double>(rounds);
      // The rate column carries the batch NMSE during estimation.
      result.estimation.history.push_back(
          {epoch, model.config.task_id + ":estimation", loss_acc * inv, nmse_acc * inv});
    }
  }

  {  // stage 2: precoding on frozen estimates
    Adam<T> opt(stage2.adam);
    model.visit_stage2([&](const std::string& n, Tensor<T>& t) { opt.add_param(n, t); });
    for (std::size_t epoch = 1; epoch <= stage2.epochs; ++epoch) {
      std::vector<std::size_t> order(train.count);
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      Rng shuffle_rng(detail::round_seed(stage2.seed, epoch, model.config.task_id, 0));
      detail::shuffle_indices(order, shuffle_rng);
      const std::size_t n_batches = std::max<std::size_t>(1, train.count / stage2.batch_size);
      const std::size_t rounds = stage2.batches_per_epoch ? stage2.batches_per_epoch : n_batches;
      double loss_acc = 0.0, rate_acc = 0.0;
      for (std::size_t r = 0; r < rounds; ++r) {
        const std::size_t b = r % n_batches;
        const std::size_t lo = b * stage2.batch_size;
        const std::size_t hi = std::min(train.count, lo + stage2.batch_size);
        Rng round_rng(detail::round_seed(stage2.seed, epoch, model.config.task_id, 1 + r));
        std::vector<Tensor<T>> rates;
        rates.reserve(hi - lo);
        double mean_rate = 0.0;
        for (std::size_t i = lo; i < hi; ++i) {
          ComplexMatrix<T> h = train.template sample<T>(order[i]);
          ComplexMatrix<T> noise =
              gaussian_noise<T>(h.rows(), model.dims.pilot_len, sigma2, round_rng);
          ComplexMatrix<T> v = cep_forward(h, model, noise, RunMode::train, round_rng);
          rates.push_back(sum_rate_t(h, v, sigma2));
          mean_rate += static_cast<double>(rates.back().item());
        }
        Tensor<T> loss = task_loss(rates);
        loss_acc += static_cast<double>(loss.item());
        rate_acc += mean_rate / static_cast<double>(hi - lo);
        backward(loss);
        opt.step();
        opt.zero_grad();
      }
      const double inv = 1.0 / static_cast<double>(rounds);
      result.precoding.history.push_back(
          {epoch, model.config.task_id, loss_acc * inv, rate_acc * inv});
      if (!stage2.checkpoint_path.empty() &&
          ((stage2.checkpoint_every && epoch % stage2.checkpoint_every == 0) ||
           epoch == stage2.epochs))
        save_checkpoint(stage2.checkpoint_path, model, &opt, epoch);
    }
  }

  if (!stage2.history_path.empty()) {
    std::vector<EpochRecord> merged = result.estimation.history;
    merged.insert(merged.end(), result.precoding.history.begin(),
                  result.precoding.history.end());
    write_history_csv(stage2.history_path, merged);
  }
  return result;
}

// Held-out normalized estimation error E||est - h||^2 / E||h||^2 with
// paired per-sample noise seeds.
template <typename T>
double cep_nmse(const CepModel<T>& model, const DatasetSplit& split, std::uint64_t seed) {
  if (split.count == 0) throw std::invalid_argument("nmse: empty split");
  NoGradGuard guard;
  const double sigma2 = sigma2_of(model.config);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < split.count; ++i) {
    ComplexMatrix<T> h = split.template sample<T>(i);
    Rng rng(derive_seed(seed, detail::kStreamNoise, i));
    ComplexMatrix<T> noise = gaussian_noise<T>(h.rows(), model.dims.pilot_len, sigma2, rng);
    ComplexMatrix<T> y = pilot_forward(h, model.pilot, model.config.pilot_symbol_energy, noise);
    Tensor<T> est = cep_estimate(y, model.estimator);
    for (std::size_t k = 0; k < h.rows(); ++k)
      for (std::size_t t = 0; t < h.cols(); ++t) {
        const double er = static_cast<double>(est.at(k, t)) - static_cast<double>(h.re.at(k, t));
        const double ei = static_cast<double>(est.at(k, h.cols() + t)) -
                          static_cast<double>(h.im.at(k, t));
        num += er * er + ei * ei;
        den += static_cast<double>(h.re.at(k, t)) * static_cast<double>(h.re.at(k, t)) +
               static_cast<double>(h.im.at(k, t)) * static_cast<double>(h.im.at(k, t));
      }
  }
  if (!(den > 0.0)) throw computation_error("nmse: zero-energy channels");
  return num / den;
}

}  // namespace fddprec
