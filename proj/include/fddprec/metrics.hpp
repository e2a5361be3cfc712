#pragma once

// Evaluation: spectral efficiency with paired per-sample noise, parameter
// and FLOP counters, domain-generalization gaps, the scaling-study harness,
// and the metrics CSV schema.

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fddprec/baselines.hpp"
#include "fddprec/channel.hpp"
#include "fddprec/model.hpp"
#include "fddprec/rates.hpp"
#include "fddprec/train.hpp"

namespace fddprec {

struct MetricsRecord {
  std::string scheme;
  std::string task_id;
  double snr_db = 0.0;
  double spectral_efficiency = 0.0;
  std::size_t params = 0;
  double flops_m = 0.0;  // forward FLOPs per sample, millions
  std::uint64_t seed = 0;
  double wall_ms = 0.0;
};

inline void write_metrics_csv(const std::string& path,
                              const std::vector<MetricsRecord>& records) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot write '" + path + "'");
  out << "scheme,task_id,snr_db,spectral_efficiency,params,flops_m,seed,wall_ms\n";
  out.precision(17);
  for (const auto& r : records)
    out << r.scheme << ',' << r.task_id << ',' << r.snr_db << ',' << r.spectral_efficiency
        << ',' << r.params << ',' << r.flops_m << ',' << r.seed << ',' << r.wall_ms << '\n';
  if (!out) throw io_error("short write on '" + path + "'");
}

inline std::vector<MetricsRecord> read_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot read '" + path + "'");
  std::string line;
  if (!std::getline(in, line) ||
      line != "scheme,task_id,snr_db,spectral_efficiency,params,flops_m,seed,wall_ms")
    throw manifest_error("'" + path + "': unexpected metrics header");
  std::vector<MetricsRecord> records;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    MetricsRecord r;
    std::string field;
    std::getline(row, r.scheme, ',');
    std::getline(row, r.task_id, ',');
    std::getline(row, field, ',');
    r.snr_db = std::stod(field);
    std::getline(row, field, ',');
    r.spectral_efficiency = std::stod(field);
    std::getline(row, field, ',');
    r.params = std::stoull(field);
    std::getline(row, field, ',');
    r.flops_m = std::stod(field);
    std::getline(row, field, ',');
    r.seed = std::stoull(field);
    std::getline(row, field, ',');
    r.wall_ms = std::stod(field);
    records.push_back(std::move(r));
  }
  return records;
}

// ---------------------------------------------------------------------------
// Spectral-efficiency evaluation. Noise is keyed on the absolute dataset
// index, so every scheme sharing a seed sees identical realizations and a
// sample's contribution does not depend on how the split is sliced.
// ---------------------------------------------------------------------------

namespace detail {

inline double nan_default(double v, double fallback) {
  return std::isnan(v) ? fallback : v;
}

}  // namespace detail

template <typename T>
double evaluate_model(const ModelBundle<T>& bundle, const std::string& task_id,
                      const DatasetSplit& test, std::uint64_t seed,
                      QuantizerMode qm = QuantizerMode::hard,
                      double snr_db = std::numeric_limits<double>::quiet_NaN()) {
  if (test.count == 0) throw std::invalid_argument("evaluate: empty split");
  const auto& entry = bundle.task(task_id);
  TaskConfig cfg = entry.config;
  cfg.snr_db = detail::nan_default(snr_db, cfg.snr_db);
  const double sigma2 = sigma2_of(cfg);
  NoGradGuard guard;
  double acc = 0.0;
  for (std::size_t i = 0; i < test.count; ++i) {
    ComplexMatrix<T> h = test.template sample<T>(i);
    Rng rng(derive_seed(seed, detail::kStreamNoise, test.begin + i));
    ComplexMatrix<T> noise =
        gaussian_noise<T>(h.rows(), entry.dims.pilot_len, sigma2, rng);
    ComplexMatrix<T> v = forward_end_to_end(h, bundle, task_id, RunMode::eval, rng, noise, qm);
    acc += sum_rate(h, v, sigma2).sum_rate;
  }
  return acc / static_cast<double>(test.count);
}

template <typename T>
double evaluate_dsc(const DscModel<T>& model, const DatasetSplit& test, std::uint64_t seed,
                    double snr_db = std::numeric_limits<double>::quiet_NaN()) {
  if (test.count == 0) throw std::invalid_argument("evaluate: empty split");
  TaskConfig cfg = model.config;
  cfg.snr_db = detail::nan_default(snr_db, cfg.snr_db);
  const double sigma2 = sigma2_of(cfg);
  NoGradGuard guard;
  double acc = 0.0;
  for (std::size_t i = 0; i < test.count; ++i) {
    ComplexMatrix<T> h = test.template sample<T>(i);
    Rng rng(derive_seed(seed, detail::kStreamNoise, test.begin + i));
    ComplexMatrix<T> noise = gaussian_noise<T>(h.rows(), model.dims.pilot_len, sigma2, rng);
    ComplexMatrix<T> v = dsc_forward(h, model, noise);
    acc += sum_rate(h, v, sigma2).sum_rate;
  }
  return acc / static_cast<double>(test.count);
}

template <typename T>
double evaluate_cep(const CepModel<T>& model, const DatasetSplit& test, std::uint64_t seed,
                    double snr_db = std::numeric_limits<double>::quiet_NaN()) {
  if (test.count == 0) throw std::invalid_argument("evaluate: empty split");
  TaskConfig cfg = model.config;
  cfg.snr_db = detail::nan_default(snr_db, cfg.snr_db);
  const double sigma2 = sigma2_of(cfg);
  NoGradGuard guard;
  double acc = 0.0;
  for (std::size_t i = 0; i < test.count; ++i) {
    ComplexMatrix<T> h = test.template sample<T>(i);
    Rng rng(derive_seed(seed, detail::kStreamNoise, test.begin + i));
    ComplexMatrix<T> noise = gaussian_noise<T>(h.rows(), model.dims.pilot_len, sigma2, rng);
    ComplexMatrix<T> v = cep_forward(h, model, noise, RunMode::eval, rng);
    acc += sum_rate(h, v, sigma2).sum_rate;
  }
  return acc / static_cast<double>(test.count);
}

inline double evaluate_zf(const DatasetSplit& test, double power, double sigma2) {
  if (test.count == 0) throw std::invalid_argument("evaluate: empty split");
  double acc = 0.0;
  for (std::size_t i = 0; i < test.count; ++i) {
    ComplexMatrix<double> h = test.sample<double>(i);
    acc += sum_rate(h, from_cmat<double>(zf_precoder(to_cmat(h), power)), sigma2).sum_rate;
  }
  return acc / static_cast<double>(test.count);
}

inline double evaluate_wmmse(const DatasetSplit& test, double power, double sigma2,
                             std::size_t max_iters = 100, double tol = 1e-5) {
  if (test.count == 0) throw std::invalid_argument("evaluate: empty split");
  double acc = 0.0;
  for (std::size_t i = 0; i < test.count; ++i) {
    ComplexMatrix<double> h = test.sample<double>(i);
    auto res = wmmse_precoder(to_cmat(h), power, sigma2, max_iters, tol);
    acc += sum_rate(h, from_cmat<double>(res.v), sigma2).sum_rate;
  }
  return acc / static_cast<double>(test.count);
}

inline double evaluate_random(const DatasetSplit& test, double power, double sigma2,
                              std::uint64_t seed) {
  if (test.count == 0) throw std::invalid_argument("evaluate: empty split");
  double acc = 0.0;
  for (std::size_t i = 0; i < test.count; ++i) {
    ComplexMatrix<double> h = test.sample<double>(i);
    CMat v = random_precoder(h.cols(), h.rows(), power,
                             derive_seed(seed, detail::kStreamInit, test.begin + i));
    acc += sum_rate(h, from_cmat<double>(v), sigma2).sum_rate;
  }
  return acc / static_cast<double>(test.count);
}

// ---------------------------------------------------------------------------
// Counters
// ---------------------------------------------------------------------------

struct ParamCounts {
  std::size_t trunk = 0;
  std::map<std::string, std::size_t> per_task;
  std::size_t total = 0;
};

template <typename T>
ParamCounts count_params(ModelBundle<T>& bundle) {
  ParamCounts c;
  bundle.visit_trunk(
      [&](const std::string&, Tensor<T>& t) { c.trunk += t.size(); });
  for (auto& [id, entry] : bundle.tasks) {
    std::size_t n = 0;
    entry.modules.visit("task." + id, [&](const std::string&, Tensor<T>& t) { n += t.size(); });
    c.per_task[id] = n;
    c.total += n;
  }
  c.total += c.trunk;
  return c;
}

template <typename T>
std::size_t count_params(DscModel<T>& model) {
  std::size_t n = 0;
  model.visit([&](const std::string&, Tensor<T>& t) { n += t.size(); });
  return n;
}

template <typename T>
std::size_t count_params(CepModel<T>& model) {
  std::size_t n = 0;
  model.visit([&](const std::string&, Tensor<T>& t) { n += t.size(); });
  return n;
}

// Forward FLOPs for one sample under the declared convention: a matmul of
// (m x k)(k x n) costs 2mkn; bias adds, activations, softmax, and layer
// norms count linearly; only the top_k routed experts are charged.
inline double flops_matmul(std::size_t m, std::size_t k, std::size_t n) {
  return 2.0 * static_cast<double>(m) * static_cast<double>(k) * static_cast<double>(n);
}

namespace detail {

// rows independent applications of an MLP: per layer 2*r*w_in*w_out plus
// bias and activation.
inline double flops_mlp(const std::vector<std::size_t>& widths, std::size_t rows) {
  double f = 0.0;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i)
    f += flops_matmul(rows, widths[i], widths[i + 1]) +
         2.0 * static_cast<double>(rows) * static_cast<double>(widths[i + 1]);
  return f;
}

inline double flops_pilot(const TaskConfig& cfg, const ResolvedDims& dims) {
  // Complex K x N_t by N_t x L product = 4 real matmuls; column renorm linear.
  return 4.0 * flops_matmul(cfg.n_users, cfg.n_tx, dims.pilot_len) +
         6.0 * static_cast<double>(cfg.n_tx) * static_cast<double>(dims.pilot_len);
}

inline std::vector<std::size_t> encoder_widths(const Hyper& hy, const ResolvedDims& dims) {
  std::vector<std::size_t> w{2 * dims.pilot_len};
  for (auto v : hy.user_hidden) w.push_back(v);
  w.push_back(dims.feedback_bits);
  return w;
}

inline double flops_head(const Hyper& hy, const TaskConfig& cfg) {
  const double k = static_cast<double>(cfg.n_users);
  const double nt = static_cast<double>(cfg.n_tx);
  return flops_matmul(cfg.n_users, hy.d, 2 * cfg.n_tx) + 2.0 * k * nt + 5.0 * nt * k;
}

}  // namespace detail

struct FlopBreakdown {
  double pilot = 0.0;
  double encoder = 0.0;
  double input_proj = 0.0;
  double mhsa = 0.0;
  double router = 0.0;
  double expert = 0.0;  // the d_ff-proportional expert evaluations alone
  double moe_other = 0.0;
  double head = 0.0;
  double total = 0.0;
};

namespace detail {

// Trunk-only contributions (mhsa, router, expert, moe_other) for K tokens.
inline void add_trunk_flops(FlopBreakdown& f, const Hyper& hy, std::size_t n_users) {
  const double k = static_cast<double>(n_users);
  const double d = static_cast<double>(hy.d);
  const double dh = static_cast<double>(hy.head_dim());
  const double h = static_cast<double>(hy.heads);
  const double e = static_cast<double>(hy.experts);
  const double dff = static_cast<double>(hy.d_ff);
  const double topk = static_cast<double>(hy.top_k);
  const double blocks = static_cast<double>(hy.blocks);
  f.mhsa = blocks * (h * (3.0 * flops_matmul(n_users, hy.d, hy.head_dim()) +
                          2.0 * k * k * dh * 2.0 + 5.0 * k * k) +
                     flops_matmul(n_users, hy.d, hy.d) + 9.0 * k * d);
  f.router = blocks * (flops_matmul(n_users, hy.d, hy.experts) + 6.0 * k * e);
  f.expert = blocks * topk * k * (4.0 * d * dff + 2.0 * dff);
  f.moe_other = blocks * (topk * k * 2.0 * d + 10.0 * k * d);
}

inline void finish_total(FlopBreakdown& f) {
  f.total = f.pilot + f.encoder + f.input_proj + f.mhsa + f.router + f.expert + f.moe_other +
            f.head;
}

}  // namespace detail

inline FlopBreakdown count_flops(const Hyper& hy, const TaskConfig& cfg) {
  const ResolvedDims dims = resolve_config(cfg);
  FlopBreakdown f;
  f.pilot = detail::flops_pilot(cfg, dims);
  f.encoder = detail::flops_mlp(detail::encoder_widths(hy, dims), cfg.n_users);
  f.input_proj = flops_matmul(cfg.n_users, dims.feedback_bits, hy.d) +
                 static_cast<double>(cfg.n_users) * static_cast<double>(hy.d);
  detail::add_trunk_flops(f, hy, cfg.n_users);
  f.head = detail::flops_head(hy, cfg);
  detail::finish_total(f);
  return f;
}

inline FlopBreakdown count_flops_dsc(const Hyper& hy, const TaskConfig& cfg) {
  const ResolvedDims dims = resolve_config(cfg);
  FlopBreakdown f;
  f.pilot = detail::flops_pilot(cfg, dims);
  f.encoder = detail::flops_mlp(detail::encoder_widths(hy, dims), cfg.n_users);
  std::vector<std::size_t> dec{dims.feedback_bits * cfg.n_users};
  const auto hidden = hy.dsc_hidden.empty() ? std::vector<std::size_t>{4 * hy.d, 4 * hy.d}
                                            : hy.dsc_hidden;
  for (auto w : hidden) dec.push_back(w);
  dec.push_back(2 * cfg.n_tx * cfg.n_users);
  f.head = detail::flops_mlp(dec, 1) +
           5.0 * static_cast<double>(cfg.n_tx) * static_cast<double>(cfg.n_users);
  detail::finish_total(f);
  return f;
}

inline FlopBreakdown count_flops_cep(const Hyper& hy, const TaskConfig& cfg) {
  const ResolvedDims dims = resolve_config(cfg);
  FlopBreakdown f;
  f.pilot = detail::flops_pilot(cfg, dims);
  std::vector<std::size_t> est{2 * dims.pilot_len};
  for (auto w : hy.cep_hidden) est.push_back(w);
  est.push_back(2 * cfg.n_tx);
  f.encoder = detail::flops_mlp(est, cfg.n_users);
  f.input_proj = flops_matmul(cfg.n_users, 2 * cfg.n_tx, hy.d) +
                 static_cast<double>(cfg.n_users) * static_cast<double>(hy.d);
  detail::add_trunk_flops(f, hy, cfg.n_users);
  f.head = detail::flops_head(hy, cfg);
  detail::finish_total(f);
  return f;
}

// ---------------------------------------------------------------------------
// Domain-generalization gaps
// ---------------------------------------------------------------------------

struct DomainGap {
  double l_source = 0.0;
  double l_target = 0.0;
  double d_sub = 0.0;  // absolute gap
  double d_div = 0.0;  // relative gap
};

inline DomainGap domain_gap(double l_source, double l_target) {
  if (!(l_source > 0.0))
    throw std::invalid_argument("domain_gap: source spectral efficiency " +
                                std::to_string(l_source) + " is not positive");
  DomainGap g;
  g.l_source = l_source;
  g.l_target = l_target;
  g.d_sub = l_source - l_target;
  g.d_div = g.d_sub / l_source;
  return g;
}

// ---------------------------------------------------------------------------
// Expert utilization: fraction of tokens routed to each expert, per block,
// averaged over the split (the load-balance diagnostic).
// ---------------------------------------------------------------------------

template <typename T>
std::vector<std::vector<double>> expert_utilization(const ModelBundle<T>& bundle,
                                                    const std::string& task_id,
                                                    const DatasetSplit& test,
                                                    std::uint64_t seed) {
  if (test.count == 0) throw std::invalid_argument("utilization: empty split");
  const auto& entry = bundle.task(task_id);
  const double sigma2 = sigma2_of(entry.config);
  NoGradGuard guard;
  std::vector<std::vector<double>> counts(bundle.hyper.blocks,
                                          std::vector<double>(bundle.hyper.experts, 0.0));
  for (std::size_t i = 0; i < test.count; ++i) {
    ComplexMatrix<T> h = test.template sample<T>(i);
    Rng rng(derive_seed(seed, detail::kStreamNoise, test.begin + i));
    ComplexMatrix<T> y = pilot_forward(h, entry.modules.pilot,
                                       entry.config.pilot_symbol_energy, sigma2, rng);
    Tensor<T> q = encode_feedback(y, entry.modules.encoder, QuantizerMode::hard);
    Tensor<T> z = input_proj(q, entry.modules.head);
    for (std::size_t blk = 0; blk < bundle.trunk.blocks.size(); ++blk) {
      const auto& block = bundle.trunk.blocks[blk];
      z = mhsa_sublayer(z, block, bundle.hyper, RunMode::eval, rng);
      Tensor<T> gates = moe_router_gates(z, block, bundle.hyper);
      for (std::size_t t = 0; t < gates.rows(); ++t)
        for (std::size_t ex = 0; ex < gates.cols(); ++ex)
          if (gates.at(t, ex) > T(0)) counts[blk][ex] += 1.0;
      z = moe_ffn_sublayer(z, block, bundle.hyper, RunMode::eval, rng);
    }
  }
  const double tokens =
      static_cast<double>(test.count) * static_cast<double>(entry.config.n_users);
  for (auto& row : counts)
    for (auto& v : row) v /= tokens;
  return counts;
}

// ---------------------------------------------------------------------------
// Scaling study: sweep expert count or feed-forward width, train each
// variant at desk scale, report the accuracy/cost trade-off.
// ---------------------------------------------------------------------------

enum class ScalingAxis { experts, width };

inline ScalingAxis scaling_axis_from_string(const std::string& s) {
  if (s == "experts") return ScalingAxis::experts;
  if (s == "width") return ScalingAxis::width;
  throw std::invalid_argument("unknown scaling axis '" + s + "' (use experts or width)");
}

struct ScalingPoint {
  std::size_t value = 0;
  std::size_t params = 0;
  double flops_m = 0.0;
  double spectral_efficiency = 0.0;
};

template <typename T>
std::vector<ScalingPoint> scaling_study(const TaskConfig& cfg, const Hyper& base,
                                        ScalingAxis axis, const std::vector<std::size_t>& grid,
                                        const DatasetSplit& train, const DatasetSplit& test,
                                        const TrainPlan& plan, std::uint64_t init_seed) {
  if (grid.empty()) throw std::invalid_argument("scaling: empty grid");
  std::vector<ScalingPoint> points;
  for (std::size_t value : grid) {
    Hyper hy = base;
    if (axis == ScalingAxis::experts) {
      hy.experts = value;  // fixed top_k; validate() rejects value < top_k
    } else {
      hy.d_ff = value;
    }
    hy.validate();
    ModelBundle<T> bundle;
    bundle.initialize(hy, init_seed);
    bundle.register_task(cfg, init_seed);
    if (plan.epochs > 0) train_stl(bundle, {cfg.task_id, train}, plan);
    ScalingPoint p;
    p.value = value;
    p.params = count_params(bundle).total;
    p.flops_m = count_flops(hy, cfg).total / 1e6;
    p.spectral_efficiency = evaluate_model(bundle, cfg.task_id, test, plan.seed);
    points.push_back(p);
  }
  return points;
}

}  // namespace fddprec
