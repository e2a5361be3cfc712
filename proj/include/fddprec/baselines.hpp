#pragma once

#include <cmath>
#include <complex>
#include <vector>

#include "fddprec/linalg.hpp"
#include "fddprec/rates.hpp"
#include "fddprec/rng.hpp"

namespace fddprec {

// Zero-forcing: V = gamma * H^H (H H^H)^{-1}, scaled to meet the power
// budget. Channel rows are conjugated user vectors, so H V = gamma * I.
inline CMat zf_precoder(const CMat& h, double power, double cond_threshold = 1e12) {
  if (h.rows > h.cols)
    throw shape_error("zf_precoder: more users than antennas (" + h.shape_str() + ")");
  const CMat hh = cherm(h);
  const CMat gram = cmul(h, hh);  // K x K
  CMat eye(h.rows, h.rows);
  for (std::size_t i = 0; i < h.rows; ++i) eye(i, i) = 1.0;
  const CMat inv = lu_solve(gram, eye, cond_threshold);
  CMat v = cmul(hh, inv);  // N_t x K
  const double norm = std::sqrt(frob2(v));
  if (norm == 0.0) throw degenerate_precoder_error("zf_precoder: zero pseudo-inverse");
  const double gamma = std::sqrt(power) / norm;
  for (auto& x : v.a) x *= gamma;
  return v;
}

inline CMat random_precoder(std::size_t n_tx, std::size_t n_users, double power,
                            std::uint64_t seed) {
  Rng rng(seed);
  CMat v(n_tx, n_users);
  for (auto& x : v.a) x = {rng.normal() * M_SQRT1_2, rng.normal() * M_SQRT1_2};
  const double norm = std::sqrt(frob2(v));
  if (norm == 0.0) throw degenerate_precoder_error("random_precoder: zero draw");
  const double gamma = std::sqrt(power) / norm;
  for (auto& x : v.a) x *= gamma;
  return v;
}

struct WmmseResult {
  CMat v;
  std::vector<std::complex<double>> receivers;  // u_k
  std::vector<double> weights;                  // w_k
  std::vector<double> sum_rate_trace;           // one entry per sweep
  std::size_t iterations = 0;
  bool converged = false;
};

namespace detail {

// V(mu) = (A + mu I)^(-1) B for Hermitian PSD A; transmit power is a
// strictly decreasing function of mu on (0, inf).
inline CMat wmmse_solve(const CMat& a, const CMat& b, double mu) {
  CMat reg = a;
  for (std::size_t i = 0; i < reg.rows; ++i) reg(i, i) += mu;
  // The regularized system is Hermitian positive definite for mu > 0;
  // the generic condition guard is bypassed (large spreads are legitimate).
  return lu_solve(std::move(reg), b, std::numeric_limits<double>::infinity());
}

}  // namespace detail

// Standard weighted-MMSE block-coordinate ascent on the sum rate:
// MMSE receivers, inverse-MSE weights, then a regularized precoder solve
// whose multiplier mu >= 0 is bisected to satisfy the power budget.
inline WmmseResult wmmse_precoder(const CMat& h, double power, double sigma2,
                                  std::size_t max_iters = 100, double tol = 1e-5) {
  if (max_iters < 1) throw std::invalid_argument("wmmse_precoder: max_iters must be >= 1");
  if (!(sigma2 > 0.0))
    throw std::invalid_argument("wmmse_precoder: sigma2 must be positive");
  const std::size_t n_users = h.rows, n_tx = h.cols;

  const auto rate_of = [&](const CMat& v) {
    return sum_rate(from_cmat(h), from_cmat(v), sigma2).sum_rate;
  };

  WmmseResult res;
  // Start from zero-forcing when applicable, otherwise matched filter.
  if (n_users <= n_tx) {
    try {
      res.v = zf_precoder(h, power);
    } catch (const singular_matrix_error&) {
      res.v = CMat();
    }
  }
  if (res.v.rows == 0) {
    res.v = cherm(h);
    const double norm = std::sqrt(frob2(res.v));
    if (norm == 0.0) throw degenerate_precoder_error("wmmse_precoder: zero channel");
    for (auto& x : res.v.a) x *= std::sqrt(power) / norm;
  }

  res.receivers.assign(n_users, {0.0, 0.0});
  res.weights.assign(n_users, 1.0);
  double last_rate = rate_of(res.v);
  res.sum_rate_trace.push_back(last_rate);

  for (std::size_t it = 0; it < max_iters; ++it) {
    ++res.iterations;
    // (i) MMSE receivers and (ii) inverse-MSE weights.
    for (std::size_t k = 0; k < n_users; ++k) {
      std::complex<double> sig(0.0, 0.0);
      double total = sigma2;
      for (std::size_t j = 0; j < n_users; ++j) {
        std::complex<double> dot(0.0, 0.0);
        for (std::size_t t = 0; t < n_tx; ++t) dot += h(k, t) * res.v(t, j);
        if (j == k) sig = dot;
        total += std::norm(dot);
      }
      res.receivers[k] = sig / total;
      const double mse = 1.0 - std::norm(sig) / total;  // in (0, 1]
      res.weights[k] = 1.0 / std::max(mse, 1e-300);
    }

    // (iii) Precoder: columns of (sum_k w_k |u_k|^2 h_k h_k^H + mu I)^{-1} h_j w_j u_j.
    CMat a(n_tx, n_tx);
    for (std::size_t k = 0; k < n_users; ++k) {
      const double c = res.weights[k] * std::norm(res.receivers[k]);
      for (std::size_t r = 0; r < n_tx; ++r)
        for (std::size_t s = 0; s < n_tx; ++s)
          a(r, s) += c * std::conj(h(k, r)) * h(k, s);
    }
    CMat b(n_tx, n_users);
    double b_norm2 = 0.0;
    for (std::size_t j = 0; j < n_users; ++j)
      for (std::size_t r = 0; r < n_tx; ++r) {
        b(r, j) = std::conj(h(j, r)) * res.weights[j] * res.receivers[j];
        b_norm2 += std::norm(b(r, j));
      }
    if (b_norm2 == 0.0) {
      res.converged = true;  // all receivers vanished; nothing to improve
      break;
    }

    CMat v_next;
    bool solved_interior = false;
    try {
      v_next = detail::wmmse_solve(a, b, 0.0);
      solved_interior = std::isfinite(frob2(v_next)) && frob2(v_next) <= power;
    } catch (const singular_matrix_error&) {
      solved_interior = false;
    }
    if (!solved_interior) {
      // Bracket mu: power(mu) decreases monotonically to 0.
      double mu_hi = 1.0;
      while (frob2(detail::wmmse_solve(a, b, mu_hi)) > power) mu_hi *= 2.0;
      double mu_lo = 0.0;
      v_next = detail::wmmse_solve(a, b, mu_hi);
      for (int step = 0; step < 200; ++step) {
        const double mu = 0.5 * (mu_lo + mu_hi);
        CMat cand = detail::wmmse_solve(a, b, mu);
        const double p = frob2(cand);
        const bool close = std::abs(p - power) / power <= 1e-9;
        if (close || p <= power) v_next = std::move(cand);  // track the tightest feasible iterate
        if (close) break;
        (p > power ? mu_lo : mu_hi) = mu;
      }
    }

    res.v = v_next;
    const double rate = rate_of(res.v);
    res.sum_rate_trace.push_back(rate);
    if (std::abs(rate - last_rate) < tol) {
      res.converged = true;
      last_rate = rate;
      break;
    }
    last_rate = rate;
  }

  // Spend the full budget: scaling up by c >= 1 cannot decrease any rate.
  const double p_now = frob2(res.v);
  if (p_now > 0.0 && p_now < power) {
    const double c = std::sqrt(power / p_now);
    for (auto& x : res.v.a) x *= c;
    res.sum_rate_trace.push_back(rate_of(res.v));
  }
  return res;
}

}  // namespace fddprec
