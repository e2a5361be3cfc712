#pragma once

#include <cmath>
#include <complex>
#include <vector>

#include "fddprec/complex.hpp"
#include "fddprec/tensor.hpp"

namespace fddprec {

// Per-user achievable rates and their sum, as plain numbers (evaluation /
// baseline path, no autodiff involvement).
struct RateResult {
  std::vector<double> per_user_rates;
  double sum_rate = 0.0;
};

namespace detail {

template <typename T>
void check_rate_shapes(const ComplexMatrix<T>& h, const ComplexMatrix<T>& v) {
  if (h.cols() != v.rows() || h.rows() != v.cols())
    throw shape_error("rates: channel " + h.re.shape_str() + " incompatible with precoder " +
                      v.re.shape_str());
}

}  // namespace detail

// Differentiable per-user rates, K x 1. Channel rows are conjugated user
// vectors, so the signal/interference terms are |(H V)_{k j}|^2. The log
// quotient is computed as a difference of logs (no division node):
//   rate_k = [ln(sigma2 + sum_j p_kj) - ln(sigma2 + sum_{j!=k} p_kj)] / ln 2
template <typename T>
Tensor<T> per_user_rates_t(const ComplexMatrix<T>& h, const ComplexMatrix<T>& v, double sigma2) {
  detail::check_rate_shapes(h, v);
  if (!(sigma2 > 0.0))
    throw std::invalid_argument("rates: sigma2 must be positive, got " + std::to_string(sigma2));
  const std::size_t k = h.rows();
  Tensor<T> p = abs2(cmatmul(h, v));  // K x K, p_kj = |h_k^H v_j|^2
  Tensor<T> eye(k, k);
  for (std::size_t i = 0; i < k; ++i) eye.at(i, i) = T(1);
  Tensor<T> total = row_sum(p);                    // K x 1: signal + interference
  Tensor<T> sig = row_sum(mul(p, eye));            // K x 1: diagonal entries
  Tensor<T> num = add_scalar(total, static_cast<T>(sigma2));
  Tensor<T> den = add_scalar(sub(total, sig), static_cast<T>(sigma2));
  return scale(sub(log_elem(num), log_elem(den)), static_cast<T>(1.0 / std::log(2.0)));
}

template <typename T>
Tensor<T> sum_rate_t(const ComplexMatrix<T>& h, const ComplexMatrix<T>& v, double sigma2) {
  return sum_all(per_user_rates_t(h, v, sigma2));
}

// Single-user rate as a differentiable scalar.
template <typename T>
Tensor<T> user_rate_t(const ComplexMatrix<T>& h, const ComplexMatrix<T>& v, std::size_t k,
                      double sigma2) {
  Tensor<T> r = per_user_rates_t(h, v, sigma2);
  return slice_rows(r, k, k + 1);
}

// Evaluation-path rates computed directly in complex scalar arithmetic.
template <typename T>
RateResult sum_rate(const ComplexMatrix<T>& h, const ComplexMatrix<T>& v, double sigma2) {
  detail::check_rate_shapes(h, v);
  if (!(sigma2 > 0.0))
    throw std::invalid_argument("rates: sigma2 must be positive, got " + std::to_string(sigma2));
  const std::size_t k = h.rows(), n = h.cols();
  RateResult res;
  res.per_user_rates.resize(k);
  for (std::size_t i = 0; i < k; ++i) {
    double sig = 0.0, interf = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      std::complex<double> dot(0.0, 0.0);
      for (std::size_t t = 0; t < n; ++t)
        dot += std::complex<double>(h.re.at(i, t), h.im.at(i, t)) *
               std::complex<double>(v.re.at(t, j), v.im.at(t, j));
      const double p = std::norm(dot);
      if (j == i)
        sig = p;
      else
        interf += p;
    }
    res.per_user_rates[i] = std::log2(1.0 + sig / (interf + sigma2));
    res.sum_rate += res.per_user_rates[i];
  }
  return res;
}

// Negative mean sum rate over a batch, differentiable through each term.
template <typename T>
Tensor<T> task_loss(const std::vector<Tensor<T>>& batch_sum_rates) {
  if (batch_sum_rates.empty()) throw std::invalid_argument("task_loss: empty batch");
  Tensor<T> acc = batch_sum_rates[0];
  for (std::size_t i = 1; i < batch_sum_rates.size(); ++i) acc = add(acc, batch_sum_rates[i]);
  return scale(acc, static_cast<T>(-1.0 / static_cast<double>(batch_sum_rates.size())));
}

// Positive per-task aggregation weights.
struct MTLWeights {
  std::vector<double> lambda;

  static MTLWeights uniform(std::size_t n_tasks) {
    return MTLWeights{std::vector<double>(n_tasks, 1.0)};
  }

  // Proportional to dataset sizes, normalized so the weights sum to the
  // task count (uniform weights are recovered when all sizes are equal).
  static MTLWeights dataset_proportional(const std::vector<std::size_t>& sizes) {
    if (sizes.empty()) throw std::invalid_argument("weights: no tasks");
    double total = 0.0;
    for (auto s : sizes) total += static_cast<double>(s);
    if (total <= 0.0) throw std::invalid_argument("weights: all datasets empty");
    MTLWeights w;
    for (auto s : sizes)
      w.lambda.push_back(static_cast<double>(s) * static_cast<double>(sizes.size()) / total);
    return w;
  }

  void validate() const {
    for (double l : lambda)
      if (!(l > 0.0))
        throw std::invalid_argument("weights: all entries must be positive, got " +
                                    std::to_string(l));
  }
};

// L = sum_n lambda_n * L_n
template <typename T>
Tensor<T> mtl_loss(const std::vector<Tensor<T>>& task_losses, const MTLWeights& weights) {
  if (task_losses.size() != weights.lambda.size())
    throw std::invalid_argument("mtl_loss: " + std::to_string(task_losses.size()) +
                                " losses vs " + std::to_string(weights.lambda.size()) +
                                " weights");
  if (task_losses.empty()) throw std::invalid_argument("mtl_loss: no tasks");
  weights.validate();
  Tensor<T> acc = scale(task_losses[0], static_cast<T>(weights.lambda[0]));
  for (std::size_t i = 1; i < task_losses.size(); ++i)
    acc = add(acc, scale(task_losses[i], static_cast<T>(weights.lambda[i])));
  return acc;
}

}  // namespace fddprec
