// Acceptance gate: one self-contained check per release criterion, one
// pass/fail line each, exit 0 only when every criterion holds. Everything
// runs single-threaded from fixed seeds, so the verdicts are reproducible
// bit for bit on any machine.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "fddprec/dataset_io.hpp"
#include "fddprec/gradcheck.hpp"
#include "fddprec/metrics.hpp"

namespace {

using namespace fddprec;
using acc_clock = std::chrono::steady_clock;

double seconds_since(acc_clock::time_point t0) {
  return std::chrono::duration<double>(acc_clock::now() - t0).count();
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

template <typename T>
ComplexMatrix<T> rayleigh_channel(std::size_t users, std::size_t n_tx, Rng& rng) {
  ComplexMatrix<T> h(users, n_tx);
  for (auto& x : h.re.data()) x = static_cast<T>(rng.normal() * M_SQRT1_2);
  for (auto& x : h.im.data()) x = static_cast<T>(rng.normal() * M_SQRT1_2);
  return h;
}

CMat rayleigh_cmat(std::size_t users, std::size_t n_tx, Rng& rng) {
  CMat h(users, n_tx);
  for (auto& x : h.a) x = {rng.normal() * M_SQRT1_2, rng.normal() * M_SQRT1_2};
  return h;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

// 1. Reverse-mode gradients of the end-to-end sum-rate loss match central
// finite differences on a small double-precision model. The quantizer runs
// in bypass mode: the straight-through surrogate is exact only where the
// forward map is smooth, which is precisely what this check certifies.
Outcome gradient_fidelity() {
  const auto t0 = acc_clock::now();
  TaskConfig cfg;
  cfg.task_id = "t";
  cfg.n_tx = 4;
  cfg.n_users = 2;
  cfg.pilot_ratio = 0.5;     // L = 2
  cfg.feedback_ratio = 1.0;  // B = 4
  cfg.snr_db = 10.0;
  Hyper hy;
  hy.d = 8;
  hy.heads = 2;
  hy.experts = 2;
  hy.top_k = 1;
  hy.blocks = 1;
  hy.d_ff = 8;
  hy.user_hidden = {8};
  hy.dropout = 0.0;

  ModelBundle<double> bundle;
  bundle.initialize(hy, 3);
  bundle.register_task(cfg, 3);
  const double sigma2 = sigma2_of(cfg);
  const auto dims = resolve_config(cfg);

  Rng data_rng(41);
  std::vector<ComplexMatrix<double>> hs;
  std::vector<ComplexMatrix<double>> noises;
  for (int i = 0; i < 2; ++i) {
    hs.push_back(rayleigh_channel<double>(cfg.n_users, cfg.n_tx, data_rng));
    noises.push_back(gaussian_noise<double>(cfg.n_users, dims.pilot_len, sigma2, data_rng));
  }

  std::vector<Tensor<double>> params;
  std::size_t n_scalars = 0;
  bundle.visit_all([&](const std::string&, Tensor<double>& t) {
    params.push_back(t);
    n_scalars += t.size();
  });

  auto loss_fn = [&] {
    Rng unused(0);
    std::vector<Tensor<double>> rates;
    rates.reserve(hs.size());
    for (std::size_t i = 0; i < hs.size(); ++i) {
      auto v = forward_end_to_end(hs[i], bundle, "t", RunMode::eval, unused, noises[i],
                                  QuantizerMode::pass);
      rates.push_back(sum_rate_t(hs[i], v, sigma2));
    }
    return task_loss(rates);
  };

  const auto rep = grad_check<double>(loss_fn, params, 1e-5);
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = rep.max_rel_err <= 1e-4 && secs < 30.0;
  o.detail = std::to_string(n_scalars) + " parameters, max rel err " + fmt(rep.max_rel_err, 3) +
             " (bound 1e-4), " + fmt(secs, 3) + " s (budget 30 s)";
  return o;
}

// 2. Permuting the users (channel rows together with their pilot noise)
// permutes the precoder columns and changes nothing else, in single
// precision over 100 random instances.
Outcome permutation_equivariance() {
  Hyper hy;
  hy.d = 16;
  hy.heads = 2;
  hy.experts = 2;
  hy.top_k = 1;
  hy.blocks = 2;
  hy.d_ff = 16;
  hy.user_hidden = {16};
  hy.dropout = 0.05;
  TaskConfig cfg;
  cfg.task_id = "t";
  cfg.n_tx = 8;
  cfg.n_users = 3;
  cfg.pilot_ratio = 0.5;
  cfg.feedback_ratio = 1.0;
  cfg.snr_db = 10.0;

  ModelBundle<float> bundle;
  bundle.initialize(hy, 2);
  bundle.register_task(cfg, 2);
  const auto dims = resolve_config(cfg);
  const double sigma2 = sigma2_of(cfg);

  NoGradGuard guard;
  double worst = 0.0;
  for (std::size_t trial = 0; trial < 100; ++trial) {
    Rng rng(derive_seed(500, trial));
    auto h = rayleigh_channel<float>(cfg.n_users, cfg.n_tx, rng);
    auto noise = gaussian_noise<float>(cfg.n_users, dims.pilot_len, sigma2, rng);
    std::vector<std::size_t> perm{2, 0, 1};
    if (trial % 3 == 1) perm = {1, 2, 0};
    if (trial % 3 == 2) perm = {2, 1, 0};

    Rng unused(0);
    auto v = forward_end_to_end(h, bundle, "t", RunMode::eval, unused, noise);
    ComplexMatrix<float> hp(gather_rows(h.re, perm), gather_rows(h.im, perm));
    ComplexMatrix<float> np(gather_rows(noise.re, perm), gather_rows(noise.im, perm));
    auto vp = forward_end_to_end(hp, bundle, "t", RunMode::eval, unused, np);

    for (std::size_t i = 0; i < cfg.n_users; ++i)
      for (std::size_t t = 0; t < cfg.n_tx; ++t) {
        worst = std::max(worst, std::abs(static_cast<double>(vp.re.at(t, i)) -
                                         static_cast<double>(v.re.at(t, perm[i]))));
        worst = std::max(worst, std::abs(static_cast<double>(vp.im.at(t, i)) -
                                         static_cast<double>(v.im.at(t, perm[i]))));
      }
  }
  Outcome o;
  o.pass = worst <= 1e-6;
  o.detail = "100 instances, max abs column deviation " + fmt(worst, 3) + " (bound 1e-6)";
  return o;
}

// Worst relative violation of the power budget and of the pilot column
// energy over 50 forwards, with the task parameters re-perturbed before
// each pass so the normalizers see fresh raw values every time.
template <typename T>
std::pair<double, double> constraint_worst(std::uint64_t seed) {
  TaskConfig cfg;
  cfg.task_id = "t";
  cfg.n_tx = 8;
  cfg.n_users = 3;
  cfg.pilot_ratio = 0.75;
  cfg.feedback_ratio = 1.0;
  cfg.snr_db = 10.0;
  cfg.power = 2.5;
  cfg.pilot_symbol_energy = 1.7;
  Hyper hy;
  hy.d = 16;
  hy.heads = 2;
  hy.experts = 2;
  hy.top_k = 1;
  hy.blocks = 1;
  hy.d_ff = 16;
  hy.user_hidden = {16};
  hy.dropout = 0.0;

  ModelBundle<T> bundle;
  bundle.initialize(hy, seed);
  bundle.register_task(cfg, seed);

  NoGradGuard guard;
  Rng rng(derive_seed(seed, 7));
  double worst_power = 0.0;
  double worst_pilot = 0.0;
  for (std::size_t i = 0; i < 50; ++i) {
    bundle.visit_task("t", [&](const std::string&, Tensor<T>& t) {
      for (auto& x : t.data()) x += static_cast<T>(rng.uniform(-0.2, 0.2));
    });
    auto h = rayleigh_channel<T>(cfg.n_users, cfg.n_tx, rng);
    Rng noise_rng(derive_seed(seed, 100 + i));
    auto v = forward_end_to_end(h, bundle, "t", RunMode::eval, noise_rng);
    double fro2 = 0.0;
    for (auto x : v.re.data()) fro2 += static_cast<double>(x) * static_cast<double>(x);
    for (auto x : v.im.data()) fro2 += static_cast<double>(x) * static_cast<double>(x);
    worst_power = std::max(worst_power, std::abs(fro2 - cfg.power) / cfg.power);

    const auto pilot = bundle.task("t").modules.pilot.normalized(cfg.pilot_symbol_energy);
    for (std::size_t l = 0; l < pilot.re.cols(); ++l) {
      double e = 0.0;
      for (std::size_t r = 0; r < pilot.re.rows(); ++r)
        e += static_cast<double>(pilot.re.at(r, l)) * static_cast<double>(pilot.re.at(r, l)) +
             static_cast<double>(pilot.im.at(r, l)) * static_cast<double>(pilot.im.at(r, l));
      worst_pilot =
          std::max(worst_pilot, std::abs(e - cfg.pilot_symbol_energy) / cfg.pilot_symbol_energy);
    }
  }
  return {worst_power, worst_pilot};
}

// 3. Every emitted precoder carries exactly the power budget P and every
// normalized pilot column exactly the symbol energy E_s, in both precisions
// and away from the default P = E_s = 1.
Outcome constraint_exactness() {
  const auto [pw32, px32] = constraint_worst<float>(21);
  const auto [pw64, px64] = constraint_worst<double>(22);
  Outcome o;
  o.pass = pw32 <= 1e-5 && px32 <= 1e-5 && pw64 <= 1e-9 && px64 <= 1e-9;
  o.detail = "rel err f32 power " + fmt(pw32, 3) + ", pilot " + fmt(px32, 3) +
             " (bound 1e-5); f64 power " + fmt(pw64, 3) + ", pilot " + fmt(px64, 3) +
             " (bound 1e-9)";
  return o;
}

// 4. Zero-forcing nulls inter-user interference to solver precision on
// well-conditioned Rayleigh draws.
Outcome zf_nulling() {
  Rng rng(77);
  double worst = 0.0;  // |h_k^H v_j| / (||H||_F ||V||_F), j != k
  for (int i = 0; i < 100; ++i) {
    const CMat h = rayleigh_cmat(2, 8, rng);
    const CMat v = zf_precoder(h, 1.0);
    const double scale = std::sqrt(frob2(h)) * std::sqrt(frob2(v));
    for (std::size_t k = 0; k < h.rows; ++k)
      for (std::size_t j = 0; j < h.rows; ++j) {
        if (j == k) continue;
        std::complex<double> dot(0.0, 0.0);
        for (std::size_t t = 0; t < h.cols; ++t) dot += h(k, t) * v(t, j);
        worst = std::max(worst, std::abs(dot) / scale);
      }
  }
  Outcome o;
  o.pass = worst <= 1e-8;
  o.detail = "100 instances, worst normalized cross-user leak " + fmt(worst, 3) +
             " (bound 1e-8)";
  return o;
}

// 5. The iterative precoder is a genuine ascent method: its sum-rate trace
// never decreases, it recovers the closed-form single-user capacity, and on
// average it is at least as good as zero-forcing.
Outcome wmmse_properties() {
  const double power = 1.0;
  const double sigma2 = snr_to_sigma2(10.0, power);
  Rng rng(88);

  double worst_drop = 0.0;
  for (int i = 0; i < 100; ++i) {
    const CMat h = rayleigh_cmat(3, 8, rng);
    const auto res = wmmse_precoder(h, power, sigma2);
    for (std::size_t s = 1; s < res.sum_rate_trace.size(); ++s)
      worst_drop = std::min(worst_drop, res.sum_rate_trace[s] - res.sum_rate_trace[s - 1]);
  }

  double worst_single = 0.0;
  for (int i = 0; i < 100; ++i) {
    const CMat h = rayleigh_cmat(1, 8, rng);
    const auto res = wmmse_precoder(h, power, sigma2);
    double gain = 0.0;
    for (const auto& x : h.a) gain += std::norm(x);
    const double closed_form = std::log2(1.0 + power * gain / sigma2);
    worst_single = std::max(worst_single, std::abs(res.sum_rate_trace.back() - closed_form));
  }

  double mean_wmmse = 0.0;
  double mean_zf = 0.0;
  for (int i = 0; i < 100; ++i) {
    const CMat h = rayleigh_cmat(2, 8, rng);
    mean_wmmse +=
        sum_rate(from_cmat(h), from_cmat(wmmse_precoder(h, power, sigma2).v), sigma2).sum_rate /
        100.0;
    mean_zf += sum_rate(from_cmat(h), from_cmat(zf_precoder(h, power)), sigma2).sum_rate / 100.0;
  }

  Outcome o;
  o.pass = worst_drop >= -1e-9 && worst_single <= 1e-6 && mean_wmmse >= mean_zf;
  o.detail = "worst trace step " + fmt(worst_drop, 3) + " (slack -1e-9); single-user gap " +
             fmt(worst_single, 3) + " (bound 1e-6); mean " + fmt(mean_wmmse, 4) + " vs zf " +
             fmt(mean_zf, 4);
  return o;
}

// 6. Routing: exactly top_k gates are active per token and sum to one, and
// for a fixed routing realization the unselected experts sit entirely
// outside the graph -- zero analytic gradient, and finite perturbations of
// their weights leave the loss bit-identical.
Outcome moe_routing() {
  Rng rng(11);
  Hyper hy;
  hy.d = 8;
  hy.heads = 2;
  hy.experts = 3;
  hy.top_k = 1;
  hy.blocks = 1;
  hy.d_ff = 8;
  hy.dropout = 0.0;

  BlockParams<double> block;
  block.initialize(hy, rng);
  // Rig the router so expert 0 wins every token.
  for (auto& v : block.router_w.data()) v = 0.0;
  block.router_b.at(0, 0) = 5.0;

  Tensor<double> z(2, hy.d);
  for (auto& v : z.data()) v = rng.uniform(-1.0, 1.0);

  auto loss_fn = [&] {
    return sum_all(square(moe_ffn_sublayer(z, block, hy, RunMode::eval, rng)));
  };
  auto loss = loss_fn();
  backward(loss);

  bool unselected_zero = true;
  for (std::size_t e = 1; e < hy.experts; ++e) {
    for (double g : block.experts[e].u1.grad()) unselected_zero &= g == 0.0;
    for (double g : block.experts[e].u2.grad()) unselected_zero &= g == 0.0;
    for (double g : block.experts[e].c1.grad()) unselected_zero &= g == 0.0;
    for (double g : block.experts[e].c2.grad()) unselected_zero &= g == 0.0;
  }
  bool selected_touched = false;
  for (double g : block.experts[0].u1.grad()) selected_touched |= g != 0.0;

  double worst_fd = 0.0;
  {
    NoGradGuard ng;
    const double base = loss_fn().item();
    auto& w = block.experts[1].u1;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double saved = w.data()[i];
      w.data()[i] = saved + 0.37;
      worst_fd = std::max(worst_fd, std::abs(loss_fn().item() - base));
      w.data()[i] = saved;
    }
  }

  // Active-set shape on an unrigged router.
  Hyper hy2 = hy;
  hy2.experts = 4;
  hy2.top_k = 2;
  BlockParams<double> block2;
  block2.initialize(hy2, rng);
  bool active_ok = true;
  double worst_sum = 0.0;
  {
    NoGradGuard ng;
    Tensor<double> z2(5, hy2.d);
    for (auto& v : z2.data()) v = rng.uniform(-1.0, 1.0);
    auto gates =
        topk_row_softmax(add_rowvec(matmul(z2, block2.router_w), block2.router_b), hy2.top_k);
    for (std::size_t t = 0; t < z2.rows(); ++t) {
      std::size_t active = 0;
      double sum = 0.0;
      for (std::size_t e = 0; e < hy2.experts; ++e)
        if (gates.at(t, e) > 0.0) {
          ++active;
          sum += gates.at(t, e);
        }
      active_ok &= active == hy2.top_k;
      worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
    }
  }

  Outcome o;
  o.pass = unselected_zero && selected_touched && worst_fd <= 1e-10 && active_ok &&
           worst_sum < 1e-6;
  o.detail = std::string("unselected grads ") + (unselected_zero ? "all zero" : "NONZERO") +
             ", selected " + (selected_touched ? "touched" : "UNTOUCHED") + "; fd |dloss| " +
             fmt(worst_fd, 3) + " (bound 1e-10); " + (active_ok ? "top_k active" : "WRONG count") +
             ", gate sums off by " + fmt(worst_sum, 3);
  return o;
}

// 7. Desk-scale training gain: after at most 50 epochs on 5,000 Rayleigh
// samples (N_t = 8, K = 2, L = 4, B = 8, SNR 10 dB) the trained model beats
// both the random precoder and its own untrained initialization by >= 50%
// relative on the held-out split.
Outcome training_gain() {
  const auto t0 = acc_clock::now();
  TaskConfig cfg;
  cfg.task_id = "t";
  cfg.n_tx = 8;
  cfg.n_users = 2;
  cfg.pilot_ratio = 0.5;     // L = 4
  cfg.feedback_ratio = 1.0;  // B = 8
  cfg.snr_db = 10.0;
  cfg.seed = 42;
  ChannelDataset ds = generate_dataset(cfg, 5000, 42);
  auto [train, test] = split(ds, 0.8);

  Hyper hy;
  hy.d = 32;
  hy.heads = 4;
  hy.experts = 4;
  hy.top_k = 2;
  hy.blocks = 2;
  hy.d_ff = 64;
  hy.user_hidden = {64};
  hy.dropout = 0.05;

  ModelBundle<double> bundle;
  bundle.initialize(hy, 1);
  bundle.register_task(cfg, 1);

  const double sigma2 = sigma2_of(cfg);
  const double se_random = evaluate_random(test, cfg.power, sigma2, 1);
  const double se_init = evaluate_model(bundle, "t", test, 1);

  TrainPlan plan;
  plan.epochs = 50;
  plan.batch_size = 256;
  plan.seed = 1;
  train_stl(bundle, {"t", train}, plan);
  const double se_trained = evaluate_model(bundle, "t", test, 1);
  const double secs = seconds_since(t0);

  Outcome o;
  o.pass = se_trained >= 1.5 * se_random && se_trained >= 1.5 * se_init && secs < 900.0;
  o.detail = "trained " + fmt(se_trained, 4) + " vs random " + fmt(se_random, 4) + " (" +
             fmt(se_trained / se_random, 3) + "x) and untrained " + fmt(se_init, 4) + " (" +
             fmt(se_trained / se_init, 3) + "x); " + fmt(secs, 3) + " s (budget 900 s)";
  return o;
}

// 8. Fine-tuning contract and ordering: adapting to an unseen configuration
// never writes to the trunk, and across 3 seeds the pretrained frozen trunk
// averages strictly better than a randomly initialized frozen trunk under
// identical budgets. The regime is interference-limited (K = 4 users, rich
// feedback) so that trunk quality, not the feedback bottleneck, decides.
Outcome finetune_ordering() {
  const auto t0 = acc_clock::now();
  Hyper hy;
  hy.d = 32;
  hy.heads = 4;
  hy.experts = 4;
  hy.top_k = 2;
  hy.blocks = 2;
  hy.d_ff = 64;
  hy.user_hidden = {};
  hy.dropout = 0.05;

  auto make_task = [](const std::string& id, double snr, std::uint64_t seed) {
    TaskConfig cfg;
    cfg.task_id = id;
    cfg.n_tx = 8;
    cfg.n_users = 4;
    cfg.pilot_ratio = 1.0;     // L = 8
    cfg.feedback_ratio = 4.0;  // B = 32
    cfg.snr_db = snr;
    cfg.seed = seed;
    return cfg;
  };
  const TaskConfig s1 = make_task("s1", 15.0, 101);
  const TaskConfig s2 = make_task("s2", 10.0, 102);
  const TaskConfig tgt = make_task("target", 12.0, 103);

  ChannelDataset ds1 = generate_dataset(s1, 4000, 101);
  ChannelDataset ds2 = generate_dataset(s2, 4000, 102);
  ChannelDataset dst = generate_dataset(tgt, 2000, 103);
  auto [tr1, te1] = split(ds1, 0.8);
  auto [tr2, te2] = split(ds2, 0.8);
  auto [trt, tet] = split(dst, 0.8);
  (void)te1;
  (void)te2;

  ModelBundle<double> pre;
  pre.initialize(hy, 1);
  pre.register_task(s1, 1);
  pre.register_task(s2, 1);
  TrainPlan pplan;
  pplan.epochs = 60;
  pplan.batch_size = 256;
  pplan.batches_per_epoch = 6;
  pplan.seed = 1;
  pretrain_mtl(pre, {{"s1", tr1}, {"s2", tr2}}, MTLWeights::uniform(2), pplan);

  auto trunk_snapshot = [](ModelBundle<double>& b) {
    std::vector<std::vector<double>> snap;
    b.visit_trunk([&](const std::string&, Tensor<double>& t) { snap.push_back(t.data()); });
    return snap;
  };
  auto copy_trunk = [&](ModelBundle<double>& from, ModelBundle<double>& to) {
    const auto snap = trunk_snapshot(from);
    std::size_t i = 0;
    to.visit_trunk([&](const std::string&, Tensor<double>& t) { t.data() = snap[i++]; });
  };

  bool trunks_frozen = true;
  double mean_pre = 0.0;
  double mean_rnd = 0.0;
  std::string deltas;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    TrainPlan fplan;
    fplan.epochs = 30;
    fplan.batch_size = 256;
    fplan.seed = seed;  // also seeds the fresh task modules: identical in both arms

    ModelBundle<double> arm_pre;
    arm_pre.initialize(hy, 999 + seed);
    copy_trunk(pre, arm_pre);
    const auto before_pre = trunk_snapshot(arm_pre);
    finetune(arm_pre, tgt, trt, fplan);
    trunks_frozen &= trunk_snapshot(arm_pre) == before_pre;
    const double se_pre = evaluate_model(arm_pre, "target", tet, seed);

    ModelBundle<double> arm_rnd;
    arm_rnd.initialize(hy, 999 + seed);
    const auto before_rnd = trunk_snapshot(arm_rnd);
    finetune(arm_rnd, tgt, trt, fplan);
    trunks_frozen &= trunk_snapshot(arm_rnd) == before_rnd;
    const double se_rnd = evaluate_model(arm_rnd, "target", tet, seed);

    mean_pre += se_pre / 3.0;
    mean_rnd += se_rnd / 3.0;
    deltas += (deltas.empty() ? "" : "/") + fmt(se_pre - se_rnd, 3);
  }
  const double secs = seconds_since(t0);

  Outcome o;
  o.pass = trunks_frozen && mean_pre > mean_rnd;
  o.detail = std::string("trunk bytes ") + (trunks_frozen ? "identical" : "CHANGED") +
             "; mean pretrained " + fmt(mean_pre, 4) + " vs random " + fmt(mean_rnd, 4) +
             " (per-seed deltas " + deltas + "); " + fmt(secs, 3) + " s";
  return o;
}

// 9. Counters: the parameter total equals direct enumeration of every
// array (with the trunk matching its closed form), and the FLOP model is
// additive, linear in d_ff, and charges experts proportionally to top_k.
Outcome counter_exactness() {
  Hyper hy;
  hy.d = 16;
  hy.heads = 4;
  hy.experts = 8;
  hy.top_k = 3;
  hy.blocks = 2;
  hy.d_ff = 24;
  hy.user_hidden = {16, 16};
  hy.dropout = 0.0;
  TaskConfig cfg;
  cfg.task_id = "t";
  cfg.n_tx = 8;
  cfg.n_users = 3;
  cfg.pilot_ratio = 0.75;
  cfg.feedback_ratio = 1.5;
  cfg.snr_db = 10.0;

  ModelBundle<double> bundle;
  bundle.initialize(hy, 4);
  bundle.register_task(cfg, 4);
  const ParamCounts counts = count_params(bundle);
  std::size_t manifest = 0;
  bundle.visit_all([&](const std::string&, Tensor<double>& t) { manifest += t.size(); });
  const std::size_t d = hy.d, e = hy.experts, dff = hy.d_ff;
  const std::size_t trunk_closed =
      hy.blocks * (4 * d * d + 2 * (2 * d) + (d * e + e) + e * (2 * d * dff + dff + d));

  Rng mlp_rng(1);
  MlpParams<double> mlp;
  mlp.initialize({2, 3, 1}, mlp_rng);
  std::size_t mlp_params = 0;
  mlp.visit("m", [&](const std::string&, Tensor<double>& t) { mlp_params += t.size(); });

  const bool params_ok =
      counts.total == manifest && counts.trunk == trunk_closed && mlp_params == 13;

  const bool matmul_ok = flops_matmul(2, 3, 4) == 48.0;
  const FlopBreakdown f = count_flops(hy, cfg);
  Hyper dense = hy;
  dense.top_k = hy.experts;
  const FlopBreakdown fd = count_flops(dense, cfg);
  const bool topk_ok = f.expert * 8.0 == fd.expert * 3.0;  // exactly 3/8 of dense
  Hyper wide = hy;
  wide.d_ff = 2 * hy.d_ff;
  const bool dff_ok = count_flops(wide, cfg).expert == 2.0 * f.expert;
  const bool additive = f.total == f.pilot + f.encoder + f.input_proj + f.mhsa + f.router +
                                       f.expert + f.moe_other + f.head;

  Outcome o;
  o.pass = params_ok && matmul_ok && topk_ok && dff_ok && additive;
  o.detail = "params " + std::to_string(counts.total) + " == enumeration " +
             std::to_string(manifest) + ", trunk " + std::to_string(counts.trunk) +
             " == closed form " + std::to_string(trunk_closed) + ", mlp [2,3,1] -> " +
             std::to_string(mlp_params) + "; matmul(2,3,4) = " + fmt(flops_matmul(2, 3, 4), 3) +
             ", top-k 3/8 " + (topk_ok ? "exact" : "OFF") + ", d_ff doubling " +
             (dff_ok ? "exact" : "OFF") + ", totals " + (additive ? "additive" : "NOT additive");
  return o;
}

// 10. Same (config, seed) twice gives bitwise-identical parameters and
// metrics; datasets and checkpoints round-trip exactly; resuming from a
// mid-run checkpoint lands on the same bytes as training uninterrupted.
Outcome determinism_persistence() {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "fddprec_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);

  TaskConfig cfg;
  cfg.task_id = "t";
  cfg.n_tx = 4;
  cfg.n_users = 2;
  cfg.pilot_ratio = 0.5;
  cfg.feedback_ratio = 1.0;
  cfg.snr_db = 10.0;
  cfg.seed = 9;
  Hyper hy;
  hy.d = 8;
  hy.heads = 2;
  hy.experts = 2;
  hy.top_k = 1;
  hy.blocks = 1;
  hy.d_ff = 8;
  hy.user_hidden = {8};
  hy.dropout = 0.05;

  using Params = std::vector<std::vector<double>>;
  auto collect = [](ModelBundle<double>& b) {
    Params p;
    b.visit_all([&](const std::string&, Tensor<double>& t) { p.push_back(t.data()); });
    return p;
  };

  const std::string ckpt_a = (dir / "a.ckpt").string();
  auto run_once = [&](const std::string& ckpt, std::size_t epochs) {
    ChannelDataset ds = generate_dataset(cfg, 200, cfg.seed);
    auto [train, test] = split(ds, 0.8);
    ModelBundle<double> bundle;
    bundle.initialize(hy, 3);
    bundle.register_task(cfg, 3);
    TrainPlan plan;
    plan.epochs = epochs;
    plan.batch_size = 32;
    plan.seed = 5;
    plan.checkpoint_path = ckpt;
    train_stl(bundle, {"t", train}, plan);
    return std::make_pair(collect(bundle), evaluate_model(bundle, "t", test, 11));
  };

  const auto first = run_once(ckpt_a, 3);
  const auto second = run_once("", 3);
  const bool repeat_ok = first.first == second.first && first.second == second.second;

  // Dataset persistence.
  const ChannelDataset ds = generate_dataset(cfg, 64, 123);
  const std::string dpath = (dir / "ds.fddc").string();
  save_dataset(ds, dpath);
  const ChannelDataset rt = load_dataset(dpath);
  const bool dataset_ok =
      rt.samples == ds.samples && rt.data == ds.data && rt.config.task_id == ds.config.task_id &&
      rt.config.n_tx == ds.config.n_tx && rt.config.n_users == ds.config.n_users &&
      rt.config.pilot_ratio == ds.config.pilot_ratio &&
      rt.config.feedback_ratio == ds.config.feedback_ratio &&
      rt.config.snr_db == ds.config.snr_db && rt.config.power == ds.config.power &&
      rt.config.seed == ds.config.seed;

  // Checkpoint persistence, including optimizer state.
  const auto ck = load_checkpoint<double>(ckpt_a);
  ModelBundle<double> restored = restore_bundle(ck);
  const bool ckpt_ok = ck.has_adam && collect(restored) == first.first;

  // Resume equivalence: 2 recorded epochs + 2 resumed == 4 uninterrupted.
  ChannelDataset ds4 = generate_dataset(cfg, 200, cfg.seed);
  auto [tr4, te4] = split(ds4, 0.8);
  TrainPlan p4;
  p4.epochs = 4;
  p4.batch_size = 32;
  p4.seed = 5;
  ModelBundle<double> full;
  full.initialize(hy, 3);
  full.register_task(cfg, 3);
  train_stl(full, {"t", tr4}, p4);

  ModelBundle<double> half;
  half.initialize(hy, 3);
  half.register_task(cfg, 3);
  TrainPlan p2 = p4;
  p2.epochs = 2;
  p2.checkpoint_path = (dir / "half.ckpt").string();
  train_stl(half, {"t", tr4}, p2);
  auto resumed =
      resume_pretrain<double>(p2.checkpoint_path, {{"t", tr4}}, MTLWeights::uniform(1), p4);
  const bool resume_ok = collect(resumed.first) == collect(full) &&
                         evaluate_model(resumed.first, "t", te4, 11) ==
                             evaluate_model(full, "t", te4, 11);

  fs::remove_all(dir);

  Outcome o;
  o.pass = repeat_ok && dataset_ok && ckpt_ok && resume_ok;
  o.detail = std::string("repeat run ") + (repeat_ok ? "bitwise equal" : "DIVERGED") + " (se " +
             fmt(first.second, 4) + "); dataset round-trip " + (dataset_ok ? "exact" : "BROKEN") +
             "; checkpoint round-trip " + (ckpt_ok ? "exact" : "BROKEN") + "; resumed 2+2 " +
             (resume_ok ? "== 4 uninterrupted" : "DIVERGED");
  return o;
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    Outcome (*fn)();
  };
  const std::vector<Criterion> criteria = {
      {"gradient fidelity", gradient_fidelity},
      {"permutation equivariance", permutation_equivariance},
      {"constraint exactness", constraint_exactness},
      {"zero-forcing nulling", zf_nulling},
      {"wmmse ascent and parity", wmmse_properties},
      {"sparse routing", moe_routing},
      {"desk-scale training gain", training_gain},
      {"fine-tuning contract and ordering", finetune_ordering},
      {"parameter and flop counters", counter_exactness},
      {"determinism and persistence", determinism_persistence},
  };

  std::size_t passed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].fn();
    } catch (const std::exception& ex) {
      o.pass = false;
      o.detail = std::string("exception: ") + ex.what();
    }
    std::cout << (o.pass ? "[PASS]" : "[FAIL]") << " criterion " << i + 1 << ": "
              << criteria[i].name << " -- " << o.detail << std::endl;
    if (o.pass) ++passed;
  }
  std::cout << passed << "/" << criteria.size() << " criteria passed" << std::endl;
  return passed == criteria.size() ? 0 : 1;
}
