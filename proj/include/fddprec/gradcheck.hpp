#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "fddprec/tensor.hpp"

namespace fddprec {

template <typename T>
struct GradCheckReport {
  T max_rel_err = T(0);
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  T analytic_at_worst = T(0);
  T numeric_at_worst = T(0);
};

// Central-difference check of reverse-mode gradients. `f` must be a
// deterministic scalar function of the given parameters (re-invoking it
// must rebuild the graph from the same inputs). Relative error per element
// is |a - n| / max(1, |a|, |n|).
template <typename T, typename F>
GradCheckReport<T> grad_check(F&& f, std::vector<Tensor<T>> params, T h = T(1e-5)) {
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }

  Tensor<T> loss = f();
  if (loss.size() != 1)
    throw shape_error("grad_check: loss is " + loss.shape_str() + ", expected 1x1");
  if (!std::isfinite(loss.item()))
    throw computation_error("grad_check: non-finite loss " + std::to_string(loss.item()));
  backward(loss);

  std::vector<std::vector<T>> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) analytic.push_back(p.grad());

  GradCheckReport<T> rep;
  NoGradGuard ng;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const T saved = p.data()[i];
      p.data()[i] = saved + h;
      const T up = f().item();
      p.data()[i] = saved - h;
      const T dn = f().item();
      p.data()[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(dn))
        throw computation_error("grad_check: non-finite loss under perturbation");
      const T num = (up - dn) / (T(2) * h);
      const T ana = analytic[pi][i];
      const T rel = std::abs(ana - num) /
                    std::max(T(1), std::max(std::abs(ana), std::abs(num)));
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst_param = pi;
        rep.worst_index = i;
        rep.analytic_at_worst = ana;
        rep.numeric_at_worst = num;
      }
    }
  }
  return rep;
}

}  // namespace fddprec
