#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "fddprec/channel.hpp"
#include "fddprec/complex.hpp"
#include "fddprec/config.hpp"
#include "fddprec/rng.hpp"
#include "fddprec/tensor.hpp"

namespace fddprec {

// Architecture hyperparameters shared by every task. Scale defaults follow
// the full-size setup; desk-scale runs override them from config files.
struct Hyper {
  std::size_t d = 256;        // model width
  std::size_t heads = 8;      // H
  std::size_t experts = 8;    // E
  std::size_t top_k = 3;
  std::size_t blocks = 5;     // stacked trunk blocks
  std::size_t d_ff = 128;     // expert hidden width (also the user-MLP width)
  std::vector<std::size_t> user_hidden = {128, 128, 128};
  std::vector<std::size_t> dsc_hidden = {};  // empty: derived as {4d, 4d}
  std::vector<std::size_t> cep_hidden = {128, 128, 128};  // channel estimator
  double dropout = 0.05;
  double ln_eps = 1e-5;

  std::size_t head_dim() const { return d / heads; }

  void validate() const {
    if (d == 0 || heads == 0 || experts == 0 || blocks == 0)
      throw std::invalid_argument("hyper: d, heads, experts, blocks must be positive");
    if (d % heads != 0)
      throw std::invalid_argument("hyper: d (" + std::to_string(d) +
                                  ") not divisible by heads (" + std::to_string(heads) + ")");
    if (top_k < 1 || top_k > experts)
      throw std::invalid_argument("hyper: top_k (" + std::to_string(top_k) + ") outside [1, " +
                                  std::to_string(experts) + "]");
    if (d_ff == 0) throw std::invalid_argument("hyper: d_ff must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0))
      throw std::invalid_argument("hyper: dropout outside [0, 1)");
  }
};

inline void to_json(nlohmann::json& j, const Hyper& h) {
  j = nlohmann::json{{"d", h.d},           {"heads", h.heads},
                     {"experts", h.experts}, {"top_k", h.top_k},
                     {"blocks", h.blocks},   {"d_ff", h.d_ff},
                     {"user_hidden", h.user_hidden}, {"dsc_hidden", h.dsc_hidden},
                     {"cep_hidden", h.cep_hidden},
                     {"dropout", h.dropout}, {"ln_eps", h.ln_eps}};
}

inline void from_json(const nlohmann::json& j, Hyper& h) {
  if (j.contains("d")) h.d = j.at("d").get<std::size_t>();
  if (j.contains("heads")) h.heads = j.at("heads").get<std::size_t>();
  if (j.contains("experts")) h.experts = j.at("experts").get<std::size_t>();
  if (j.contains("top_k")) h.top_k = j.at("top_k").get<std::size_t>();
  if (j.contains("blocks")) h.blocks = j.at("blocks").get<std::size_t>();
  if (j.contains("d_ff")) h.d_ff = j.at("d_ff").get<std::size_t>();
  if (j.contains("user_hidden")) h.user_hidden = j.at("user_hidden").get<std::vector<std::size_t>>();
  if (j.contains("dsc_hidden")) h.dsc_hidden = j.at("dsc_hidden").get<std::vector<std::size_t>>();
  if (j.contains("cep_hidden")) h.cep_hidden = j.at("cep_hidden").get<std::vector<std::size_t>>();
  if (j.contains("dropout")) h.dropout = j.at("dropout").get<double>();
  if (j.contains("ln_eps")) h.ln_eps = j.at("ln_eps").get<double>();
}

enum class QuantizerMode {
  hard,  // sign with straight-through gradient
  pass   // identity bypass, used by gradient-fidelity checks
};

enum class RunMode { train, eval };

namespace init {

template <typename T>
void linear_weight(Tensor<T>& w, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : w.data()) v = static_cast<T>(rng.uniform(-bound, bound));
}

}  // namespace init

// A plain MLP: relu on hidden layers, linear output. Reused by the user
// feedback encoder, the MLP-decoder variant, and the channel estimator.
template <typename T>
struct MlpParams {
  std::vector<Tensor<T>> weights;  // layer l: widths[l] x widths[l+1]
  std::vector<Tensor<T>> biases;   // 1 x widths[l+1]
  std::vector<std::size_t> widths;

  void initialize(const std::vector<std::size_t>& layer_widths, Rng& rng) {
    if (layer_widths.size() < 2)
      throw std::invalid_argument("mlp: need at least input and output widths");
    widths = layer_widths;
    weights.clear();
    biases.clear();
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      Tensor<T> w(widths[l], widths[l + 1], true);
      init::linear_weight(w, widths[l], rng);
      weights.push_back(w);
      biases.emplace_back(1, widths[l + 1], true);
    }
  }

  std::size_t in_width() const { return widths.front(); }
  std::size_t out_width() const { return widths.back(); }

  Tensor<T> forward(const Tensor<T>& x) const {
    if (x.cols() != in_width())
      throw shape_error("mlp: input width " + x.shape_str() + ", expected cols " +
                        std::to_string(in_width()));
    Tensor<T> h = x;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      h = add_rowvec(matmul(h, weights[l]), biases[l]);
      if (l + 1 < weights.size()) h = relu(h);
    }
    return h;
  }

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    for (std::size_t l = 0; l < weights.size(); ++l) {
      fn(prefix + ".w" + std::to_string(l), weights[l]);
      fn(prefix + ".b" + std::to_string(l), biases[l]);
    }
  }
};

// Learnable pilot, held as free real parameters; the per-column energy
// constraint is applied inside every forward pass.
template <typename T>
struct PilotParams {
  Tensor<T> re, im;  // N_t x L

  void initialize(std::size_t n_tx, std::size_t pilot_len, Rng& rng) {
    re = Tensor<T>(n_tx, pilot_len, true);
    im = Tensor<T>(n_tx, pilot_len, true);
    for (auto& v : re.data()) v = static_cast<T>(rng.normal() * M_SQRT1_2);
    for (auto& v : im.data()) v = static_cast<T>(rng.normal() * M_SQRT1_2);
  }

  // Columns rescaled so ||x_l||^2 = symbol_energy, differentiably.
  ComplexMatrix<T> normalized(double symbol_energy) const {
    Tensor<T> energy = add(col_sum(square(re)), col_sum(square(im)));  // 1 x L
    Tensor<T> factor = scale(rsqrt(energy), static_cast<T>(std::sqrt(symbol_energy)));
    return {mul_rowvec(re, factor), mul_rowvec(im, factor)};
  }

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    fn(prefix + ".re", re);
    fn(prefix + ".im", im);
  }
};

// Per-task projections into and out of the shared trunk width.
template <typename T>
struct TaskHeadParams {
  Tensor<T> w_in, b_in;    // B x d, 1 x d
  Tensor<T> w_out, b_out;  // d x 2N_t, 1 x 2N_t

  void initialize(std::size_t feedback_bits, std::size_t d, std::size_t n_tx, Rng& rng) {
    w_in = Tensor<T>(feedback_bits, d, true);
    init::linear_weight(w_in, feedback_bits, rng);
    b_in = Tensor<T>(1, d, true);
    w_out = Tensor<T>(d, 2 * n_tx, true);
    init::linear_weight(w_out, d, rng);
    b_out = Tensor<T>(1, 2 * n_tx, true);
  }

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    fn(prefix + ".w_in", w_in);
    fn(prefix + ".b_in", b_in);
    fn(prefix + ".w_out", w_out);
    fn(prefix + ".b_out", b_out);
  }
};

template <typename T>
struct ExpertParams {
  Tensor<T> u1, c1;  // d x d_ff, 1 x d_ff
  Tensor<T> u2, c2;  // d_ff x d, 1 x d

  void initialize(std::size_t d, std::size_t d_ff, Rng& rng) {
    u1 = Tensor<T>(d, d_ff, true);
    init::linear_weight(u1, d, rng);
    c1 = Tensor<T>(1, d_ff, true);
    u2 = Tensor<T>(d_ff, d, true);
    init::linear_weight(u2, d_ff, rng);
    c2 = Tensor<T>(1, d, true);
  }

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    fn(prefix + ".u1", u1);
    fn(prefix + ".c1", c1);
    fn(prefix + ".u2", u2);
    fn(prefix + ".c2", c2);
  }
};

template <typename T>
struct BlockParams {
  std::vector<Tensor<T>> wq, wk, wv;  // per head: d x d_h, no biases
  Tensor<T> wo;                       // d x d
  Tensor<T> ln1_gain, ln1_bias, ln2_gain, ln2_bias;  // 1 x d
  Tensor<T> router_w, router_b;       // d x E, 1 x E
  std::vector<ExpertParams<T>> experts;

  void initialize(const Hyper& hy, Rng& rng) {
    const std::size_t d = hy.d, dh = hy.head_dim();
    wq.clear();
    wk.clear();
    wv.clear();
    for (std::size_t h = 0; h < hy.heads; ++h) {
      Tensor<T> q(d, dh, true), k(d, dh, true), v(d, dh, true);
      init::linear_weight(q, d, rng);
      init::linear_weight(k, d, rng);
      init::linear_weight(v, d, rng);
      wq.push_back(q);
      wk.push_back(k);
      wv.push_back(v);
    }
    wo = Tensor<T>(d, d, true);
    init::linear_weight(wo, d, rng);
    ln1_gain = Tensor<T>::constant(1, d, T(1));
    ln1_gain.set_requires_grad(true);
    ln1_bias = Tensor<T>(1, d, true);
    ln2_gain = Tensor<T>::constant(1, d, T(1));
    ln2_gain.set_requires_grad(true);
    ln2_bias = Tensor<T>(1, d, true);
    router_w = Tensor<T>(d, hy.experts, true);
    init::linear_weight(router_w, d, rng);
    router_b = Tensor<T>(1, hy.experts, true);
    experts.assign(hy.experts, {});
    for (auto& e : experts) e.initialize(d, hy.d_ff, rng);
  }

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    for (std::size_t h = 0; h < wq.size(); ++h) {
      fn(prefix + ".h" + std::to_string(h) + ".wq", wq[h]);
      fn(prefix + ".h" + std::to_string(h) + ".wk", wk[h]);
      fn(prefix + ".h" + std::to_string(h) + ".wv", wv[h]);
    }
    fn(prefix + ".wo", wo);
    fn(prefix + ".ln1_gain", ln1_gain);
    fn(prefix + ".ln1_bias", ln1_bias);
    fn(prefix + ".ln2_gain", ln2_gain);
    fn(prefix + ".ln2_bias", ln2_bias);
    fn(prefix + ".router_w", router_w);
    fn(prefix + ".router_b", router_b);
    for (std::size_t e = 0; e < experts.size(); ++e)
      experts[e].visit(prefix + ".e" + std::to_string(e), fn);
  }
};

template <typename T>
struct TrunkParams {
  std::vector<BlockParams<T>> blocks;

  void initialize(const Hyper& hy, Rng& rng) {
    blocks.assign(hy.blocks, {});
    for (auto& b : blocks) b.initialize(hy, rng);
  }

  template <typename Fn>
  void visit(Fn&& fn) {
    for (std::size_t i = 0; i < blocks.size(); ++i)
      blocks[i].visit("trunk.b" + std::to_string(i), fn);
  }
};

// The task-specific parameter group: pilot, shared user encoder, and the
// in/out projections around the trunk.
template <typename T>
struct TaskModules {
  PilotParams<T> pilot;
  MlpParams<T> encoder;
  TaskHeadParams<T> head;

  void initialize(const TaskConfig& cfg, const ResolvedDims& dims, const Hyper& hy, Rng& rng) {
    pilot.initialize(cfg.n_tx, dims.pilot_len, rng);
    std::vector<std::size_t> widths;
    widths.push_back(2 * dims.pilot_len);
    for (auto w : hy.user_hidden) widths.push_back(w);
    widths.push_back(dims.feedback_bits);
    encoder.initialize(widths, rng);
    head.initialize(dims.feedback_bits, hy.d, cfg.n_tx, rng);
  }

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    pilot.visit(prefix + ".pilot", fn);
    encoder.visit(prefix + ".enc", fn);
    head.visit(prefix + ".head", fn);
  }
};

template <typename T>
struct TaskEntry {
  TaskConfig config;
  ResolvedDims dims;
  TaskModules<T> modules;
};

// Shared trunk plus one task-specific module group per registered task.
template <typename T>
struct ModelBundle {
  Hyper hyper;
  TrunkParams<T> trunk;
  std::map<std::string, TaskEntry<T>> tasks;  // ordered: stable visit order

  void initialize(const Hyper& hy, std::uint64_t seed) {
    hy.validate();
    hyper = hy;
    Rng rng(derive_seed(seed, detail::kStreamInit));
    trunk.initialize(hyper, rng);
  }

  void register_task(const TaskConfig& cfg, std::uint64_t seed) {
    if (tasks.count(cfg.task_id))
      throw std::invalid_argument("bundle: task '" + cfg.task_id + "' already registered");
    validate_config(cfg);
    TaskEntry<T> entry;
    entry.config = cfg;
    entry.dims = resolve_config(cfg);
    Rng rng(derive_seed(seed, detail::kStreamInit, detail::fnv1a(cfg.task_id)));
    entry.modules.initialize(cfg, entry.dims, hyper, rng);
    tasks.emplace(cfg.task_id, std::move(entry));
  }

  TaskEntry<T>& task(const std::string& id) {
    auto it = tasks.find(id);
    if (it == tasks.end())
      throw std::invalid_argument("bundle: task '" + id + "' not registered");
    return it->second;
  }
  const TaskEntry<T>& task(const std::string& id) const {
    auto it = tasks.find(id);
    if (it == tasks.end())
      throw std::invalid_argument("bundle: task '" + id + "' not registered");
    return it->second;
  }

  template <typename Fn>
  void visit_trunk(Fn&& fn) {
    trunk.visit(fn);
  }

  template <typename Fn>
  void visit_task(const std::string& id, Fn&& fn) {
    task(id).modules.visit("task." + id, fn);
  }

  template <typename Fn>
  void visit_all(Fn&& fn) {
    trunk.visit(fn);
    for (auto& [id, entry] : tasks) entry.modules.visit("task." + id, fn);
  }
};

// Circularly symmetric complex Gaussian noise with per-entry variance
// sigma2 (re/im each sigma2/2). Drawn in double so every precision sees
// the same realization.
template <typename T>
ComplexMatrix<T> gaussian_noise(std::size_t rows, std::size_t cols, double sigma2, Rng& rng) {
  ComplexMatrix<T> z(rows, cols);
  const double s = std::sqrt(sigma2 / 2.0);
  for (std::size_t i = 0; i < rows * cols; ++i) {
    z.re.data()[i] = static_cast<T>(rng.normal() * s);
    z.im.data()[i] = static_cast<T>(rng.normal() * s);
  }
  return z;
}

// ---------------------------------------------------------------------------
// Forward operations
// ---------------------------------------------------------------------------

// Pilot reception Y = H X + Z with the column-energy constraint applied to
// X inside the pass (gradients flow through the normalization).
template <typename T>
ComplexMatrix<T> pilot_forward(const ComplexMatrix<T>& h, const PilotParams<T>& pilot,
                               double symbol_energy, const ComplexMatrix<T>& noise) {
  if (h.cols() != pilot.re.rows())
    throw shape_error("pilot_forward: channel " + h.re.shape_str() + " vs pilot " +
                      pilot.re.shape_str());
  ComplexMatrix<T> x = pilot.normalized(symbol_energy);
  ComplexMatrix<T> y = cmatmul(h, x);
  if (noise.rows() != y.rows() || noise.cols() != y.cols())
    throw shape_error("pilot_forward: noise " + noise.re.shape_str() + " vs observation " +
                      y.re.shape_str());
  return cadd(y, noise);
}

template <typename T>
ComplexMatrix<T> pilot_forward(const ComplexMatrix<T>& h, const PilotParams<T>& pilot,
                               double symbol_energy, double sigma2, Rng& rng) {
  ComplexMatrix<T> noise =
      gaussian_noise<T>(h.rows(), pilot.re.cols(), sigma2, rng);
  return pilot_forward(h, pilot, symbol_energy, noise);
}

// The shared user encoder applied to every user's observation, then
// quantized. Returns the feedback aggregate Q with column k = q_k (B x K).
template <typename T>
Tensor<T> encode_feedback(const ComplexMatrix<T>& y, const MlpParams<T>& encoder,
                          QuantizerMode qm) {
  Tensor<T> features = concat_cols<T>({y.re, y.im});  // K x 2L
  if (features.cols() != encoder.in_width())
    throw shape_error("encode_feedback: observation width " + std::to_string(features.cols()) +
                      " vs encoder input " + std::to_string(encoder.in_width()));
  Tensor<T> logits = encoder.forward(features);  // K x B
  Tensor<T> q_rows = qm == QuantizerMode::hard ? binarize_ste(logits) : logits;
  return transpose(q_rows);  // B x K
}

// Stacks per-user feedback columns into the B x K aggregate.
template <typename T>
Tensor<T> aggregate(const std::vector<Tensor<T>>& feedback_rows) {
  if (feedback_rows.empty()) throw shape_error("aggregate: no users");
  return transpose(concat_rows(feedback_rows));
}

// Z0 = Q^T W_in + 1 b_in^T : one token per user, no positional encoding.
template <typename T>
Tensor<T> input_proj(const Tensor<T>& q, const TaskHeadParams<T>& head) {
  if (q.rows() != head.w_in.rows())
    throw shape_error("input_proj: feedback " + q.shape_str() + " vs w_in " +
                      head.w_in.shape_str());
  return add_rowvec(matmul(transpose(q), head.w_in), head.b_in);
}

// Post-norm multi-head self-attention sublayer.
template <typename T>
Tensor<T> mhsa_sublayer(const Tensor<T>& z, const BlockParams<T>& block, const Hyper& hy,
                        RunMode mode, Rng& rng) {
  const std::size_t dh = hy.head_dim();
  std::vector<Tensor<T>> heads;
  heads.reserve(hy.heads);
  const T inv_sqrt_dh = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  for (std::size_t h = 0; h < hy.heads; ++h) {
    Tensor<T> qh = matmul(z, block.wq[h]);
    Tensor<T> kh = matmul(z, block.wk[h]);
    Tensor<T> vh = matmul(z, block.wv[h]);
    Tensor<T> att = row_softmax(scale(matmul(qh, transpose(kh)), inv_sqrt_dh));
    heads.push_back(matmul(att, vh));
  }
  Tensor<T> mha = matmul(concat_cols(heads), block.wo);
  mha = dropout(mha, hy.dropout, mode == RunMode::train, rng);
  return layer_norm(add(z, mha), block.ln1_gain, block.ln1_bias, static_cast<T>(hy.ln_eps));
}

// Sparse MoE feed-forward sublayer: per token, the router's top-k experts
// get softmax weights restricted to the selected set; only those experts
// run. Unselected experts are absent from the graph entirely.
template <typename T>
Tensor<T> moe_ffn_sublayer(const Tensor<T>& z, const BlockParams<T>& block, const Hyper& hy,
                           RunMode mode, Rng& rng) {
  Tensor<T> logits = add_rowvec(matmul(z, block.router_w), block.router_b);  // K x E
  Tensor<T> gates = topk_row_softmax(logits, hy.top_k);                      // K x E
  Tensor<T> combined(z.rows(), z.cols());
  bool any = false;
  for (std::size_t e = 0; e < hy.experts; ++e) {
    std::vector<std::size_t> idx;
    for (std::size_t t = 0; t < z.rows(); ++t)
      if (gates.at(t, e) > T(0)) idx.push_back(t);
    if (idx.empty()) continue;
    const auto& ex = block.experts[e];
    Tensor<T> zi = gather_rows(z, idx);
    Tensor<T> hidden = relu(add_rowvec(matmul(zi, ex.u1), ex.c1));
    Tensor<T> out = add_rowvec(matmul(hidden, ex.u2), ex.c2);
    Tensor<T> gi = gather_col(gates, e, idx);
    Tensor<T> scattered = scatter_rows(mul_colvec(out, gi), idx, z.rows());
    combined = any ? add(combined, scattered) : scattered;
    any = true;
  }
  if (!any) throw computation_error("moe: no expert selected for any token");
  combined = dropout(combined, hy.dropout, mode == RunMode::train, rng);
  return layer_norm(add(z, combined), block.ln2_gain, block.ln2_bias,
                    static_cast<T>(hy.ln_eps));
}

// Routing weights for a token matrix, exposed for utilization diagnostics.
template <typename T>
Tensor<T> moe_router_gates(const Tensor<T>& z, const BlockParams<T>& block, const Hyper& hy) {
  return topk_row_softmax(add_rowvec(matmul(z, block.router_w), block.router_b), hy.top_k);
}

template <typename T>
Tensor<T> trunk_forward(const Tensor<T>& z0, const TrunkParams<T>& trunk, const Hyper& hy,
                        RunMode mode, Rng& rng) {
  Tensor<T> z = z0;
  for (const auto& block : trunk.blocks) {
    z = mhsa_sublayer(z, block, hy, mode, rng);
    z = moe_ffn_sublayer(z, block, hy, mode, rng);
  }
  return z;
}

// Row k of Z W_out + 1 b_out^T holds [re(v_k); im(v_k)]; columns are
// stacked into the N_t x K precoder.
template <typename T>
ComplexMatrix<T> output_head(const Tensor<T>& z, const TaskHeadParams<T>& head,
                             std::size_t n_tx) {
  if (head.w_out.cols() != 2 * n_tx)
    throw shape_error("output_head: w_out " + head.w_out.shape_str() + " vs 2*N_t = " +
                      std::to_string(2 * n_tx));
  Tensor<T> out = add_rowvec(matmul(z, head.w_out), head.b_out);  // K x 2N_t
  return {transpose(slice_cols(out, 0, n_tx)), transpose(slice_cols(out, n_tx, 2 * n_tx))};
}

// V = sqrt(P) V_raw / ||V_raw||_F
template <typename T>
ComplexMatrix<T> power_normalize(const ComplexMatrix<T>& v_raw, double power) {
  Tensor<T> norm2 = cfrob2(v_raw);
  if (!(norm2.item() > T(0)))
    throw degenerate_precoder_error("power_normalize: zero-norm precoder");
  Tensor<T> factor = scale(rsqrt(norm2), static_cast<T>(std::sqrt(power)));
  return cmul_bcast(v_raw, factor);
}

// Full pipeline with an explicit pilot-noise realization (used by tests
// that must co-permute noise with users, and by paired evaluations).
template <typename T>
ComplexMatrix<T> forward_end_to_end(const ComplexMatrix<T>& h, const ModelBundle<T>& bundle,
                                    const std::string& task_id, RunMode mode, Rng& rng,
                                    const ComplexMatrix<T>& noise,
                                    QuantizerMode qm = QuantizerMode::hard) {
  const auto& entry = bundle.task(task_id);
  if (h.rows() != entry.config.n_users || h.cols() != entry.config.n_tx)
    throw shape_error("forward: channel " + h.re.shape_str() + " vs task '" + task_id + "' (" +
                      std::to_string(entry.config.n_users) + "x" +
                      std::to_string(entry.config.n_tx) + ")");
  ComplexMatrix<T> y =
      pilot_forward(h, entry.modules.pilot, entry.config.pilot_symbol_energy, noise);
  Tensor<T> q = encode_feedback(y, entry.modules.encoder, qm);
  Tensor<T> z = input_proj(q, entry.modules.head);
  z = trunk_forward(z, bundle.trunk, bundle.hyper, mode, rng);
  ComplexMatrix<T> v_raw = output_head(z, entry.modules.head, entry.config.n_tx);
  return power_normalize(v_raw, entry.config.power);
}

template <typename T>
ComplexMatrix<T> forward_end_to_end(const ComplexMatrix<T>& h, const ModelBundle<T>& bundle,
                                    const std::string& task_id, RunMode mode, Rng& rng,
                                    QuantizerMode qm = QuantizerMode::hard) {
  const auto& entry = bundle.task(task_id);
  ComplexMatrix<T> noise = gaussian_noise<T>(h.rows(), entry.dims.pilot_len,
                                             sigma2_of(entry.config), rng);
  return forward_end_to_end(h, bundle, task_id, mode, rng, noise, qm);
}

// ---------------------------------------------------------------------------
// Single-configuration MLP-decoder variant (no trunk, no weight sharing)
// ---------------------------------------------------------------------------

template <typename T>
struct DscModel {
  TaskConfig config;
  ResolvedDims dims;
  Hyper hyper;
  PilotParams<T> pilot;
  MlpParams<T> encoder;
  MlpParams<T> decoder;  // input B*K, output 2*N_t*K

  void initialize(const TaskConfig& cfg, const Hyper& hy, std::uint64_t seed) {
    validate_config(cfg);
    config = cfg;
    dims = resolve_config(cfg);
    hyper = hy;
    Rng rng(derive_seed(seed, detail::kStreamInit));
    pilot.initialize(cfg.n_tx, dims.pilot_len, rng);
    std::vector<std::size_t> enc_widths;
    enc_widths.push_back(2 * dims.pilot_len);
    for (auto w : hy.user_hidden) enc_widths.push_back(w);
    enc_widths.push_back(dims.feedback_bits);
    encoder.initialize(enc_widths, rng);
    std::vector<std::size_t> dec_widths;
    dec_widths.push_back(dims.feedback_bits * cfg.n_users);
    const auto hidden = hy.dsc_hidden.empty()
                            ? std::vector<std::size_t>{4 * hy.d, 4 * hy.d}
                            : hy.dsc_hidden;
    for (auto w : hidden) dec_widths.push_back(w);
    dec_widths.push_back(2 * cfg.n_tx * cfg.n_users);
    decoder.initialize(dec_widths, rng);
  }

  template <typename Fn>
  void visit(Fn&& fn) {
    pilot.visit("dsc.pilot", fn);
    encoder.visit("dsc.enc", fn);
    decoder.visit("dsc.dec", fn);
  }
};

// Flattens the feedback aggregate through a plain MLP; the fixed input
// width ties the decoder to one configuration.
template <typename T>
ComplexMatrix<T> dsc_decoder_forward(const Tensor<T>& q, const MlpParams<T>& decoder,
                                     std::size_t n_tx, std::size_t n_users) {
  if (q.rows() * q.cols() != decoder.in_width())
    throw shape_error("dsc_decoder: feedback " + q.shape_str() + " vs decoder input width " +
                      std::to_string(decoder.in_width()));
  Tensor<T> flat = reshape(q, 1, q.rows() * q.cols());
  Tensor<T> out = decoder.forward(flat);                 // 1 x 2*N_t*K
  Tensor<T> per_user = reshape(out, n_users, 2 * n_tx);  // rows as in output_head
  return {transpose(slice_cols(per_user, 0, n_tx)),
          transpose(slice_cols(per_user, n_tx, 2 * n_tx))};
}

template <typename T>
ComplexMatrix<T> dsc_forward(const ComplexMatrix<T>& h, const DscModel<T>& model,
                             const ComplexMatrix<T>& noise,
                             QuantizerMode qm = QuantizerMode::hard) {
  ComplexMatrix<T> y = pilot_forward(h, model.pilot, model.config.pilot_symbol_energy, noise);
  Tensor<T> q = encode_feedback(y, model.encoder, qm);
  ComplexMatrix<T> v_raw =
      dsc_decoder_forward(q, model.decoder, model.config.n_tx, model.config.n_users);
  return power_normalize(v_raw, model.config.power);
}

// ---------------------------------------------------------------------------
// Modular estimate-then-precode variant: a user-side channel estimator
// trained on squared channel error, then a private trunk precoding from
// the (perfectly fed back) estimates.
// ---------------------------------------------------------------------------

template <typename T>
struct CepModel {
  TaskConfig config;
  ResolvedDims dims;
  Hyper hyper;
  PilotParams<T> pilot;
  MlpParams<T> estimator;   // 2L -> 2N_t, one copy shared by all users
  TrunkParams<T> trunk;     // private to this configuration
  TaskHeadParams<T> head;   // w_in is 2N_t x d: tokens are estimated channels

  void initialize(const TaskConfig& cfg, const Hyper& hy, std::uint64_t seed) {
    validate_config(cfg);
    hy.validate();
    config = cfg;
    dims = resolve_config(cfg);
    hyper = hy;
    Rng rng(derive_seed(seed, detail::kStreamInit));
    pilot.initialize(cfg.n_tx, dims.pilot_len, rng);
    std::vector<std::size_t> est_widths;
    est_widths.push_back(2 * dims.pilot_len);
    for (auto w : hy.cep_hidden) est_widths.push_back(w);
    est_widths.push_back(2 * cfg.n_tx);
    estimator.initialize(est_widths, rng);
    trunk.initialize(hy, rng);
    head.initialize(2 * cfg.n_tx, hy.d, cfg.n_tx, rng);
  }

  template <typename Fn>
  void visit_stage1(Fn&& fn) {
    pilot.visit("cep.pilot", fn);
    estimator.visit("cep.est", fn);
  }

  template <typename Fn>
  void visit_stage2(Fn&& fn) {
    trunk.visit(fn);
    head.visit("cep.head", fn);
  }

  template <typename Fn>
  void visit(Fn&& fn) {
    visit_stage1(fn);
    visit_stage2(fn);
  }
};

// Per-user channel estimates from pilot observations: row k of the result
// is [re(h_k^H); im(h_k^H)] in the dataset's row convention (K x 2N_t).
template <typename T>
Tensor<T> cep_estimate(const ComplexMatrix<T>& y, const MlpParams<T>& estimator) {
  Tensor<T> features = concat_cols<T>({y.re, y.im});  // K x 2L
  if (features.cols() != estimator.in_width())
    throw shape_error("cep_estimate: observation width " + std::to_string(features.cols()) +
                      " vs estimator input " + std::to_string(estimator.in_width()));
  return estimator.forward(features);
}

template <typename T>
ComplexMatrix<T> cep_forward(const ComplexMatrix<T>& h, const CepModel<T>& model,
                             const ComplexMatrix<T>& noise, RunMode mode, Rng& rng) {
  ComplexMatrix<T> y = pilot_forward(h, model.pilot, model.config.pilot_symbol_energy, noise);
  Tensor<T> est = cep_estimate(y, model.estimator);  // K x 2N_t, fed back as-is
  Tensor<T> z = add_rowvec(matmul(est, model.head.w_in), model.head.b_in);
  z = trunk_forward(z, model.trunk, model.hyper, mode, rng);
  ComplexMatrix<T> v_raw = output_head(z, model.head, model.config.n_tx);
  return power_normalize(v_raw, model.config.power);
}

}  // namespace fddprec
