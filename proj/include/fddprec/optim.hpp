#pragma once

// Adam with decoupled-from-nothing weight decay: the decay term is added to
// the raw gradient before the moment updates (classic L2 regularization).
// Parameters are registered by name; anything left unregistered is frozen.

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fddprec/tensor.hpp"

namespace fddprec {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

template <typename T>
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {
    if (!(cfg_.lr > 0.0)) throw std::invalid_argument("adam: lr must be positive");
    if (cfg_.beta1 < 0.0 || cfg_.beta1 >= 1.0 || cfg_.beta2 < 0.0 || cfg_.beta2 >= 1.0)
      throw std::invalid_argument("adam: betas must lie in [0,1)");
  }

  void add_param(const std::string& name, const Tensor<T>& param) {
    if (name.empty()) throw std::invalid_argument("adam: empty parameter name");
    for (const auto& s : slots_)
      if (s.name == name) throw std::invalid_argument("adam: duplicate parameter '" + name + "'");
    slots_.push_back({name, param, std::vector<T>(param.size(), T(0)),
                      std::vector<T>(param.size(), T(0))});
  }

  std::size_t size() const { return slots_.size(); }
  std::uint64_t step_count() const { return step_; }
  const AdamConfig& config() const { return cfg_; }

  void zero_grad() {
    for (auto& s : slots_) s.param.zero_grad();
  }

  void step() {
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (auto& s : slots_) {
      auto& theta = s.param.data();
      auto& grad = s.param.grad();
      if (grad.size() != theta.size())
        throw shape_error("adam: gradient size mismatch for '" + s.name + "'");
      for (std::size_t i = 0; i < theta.size(); ++i) {
        const double g = static_cast<double>(grad[i]) +
                         cfg_.weight_decay * static_cast<double>(theta[i]);
        const double m = cfg_.beta1 * static_cast<double>(s.m[i]) + (1.0 - cfg_.beta1) * g;
        const double v = cfg_.beta2 * static_cast<double>(s.v[i]) + (1.0 - cfg_.beta2) * g * g;
        s.m[i] = static_cast<T>(m);
        s.v[i] = static_cast<T>(v);
        const double m_hat = m / bc1;
        const double v_hat = v / bc2;
        theta[i] = static_cast<T>(static_cast<double>(theta[i]) -
                                  cfg_.lr * m_hat / (std::sqrt(v_hat) + cfg_.eps));
      }
    }
  }

  // Serialization hooks for checkpointing.
  template <typename Fn>
  void visit_state(Fn&& fn) const {
    for (const auto& s : slots_) fn(s.name, s.m, s.v);
  }

  void restore(std::uint64_t step,
               const std::map<std::string, std::pair<std::vector<T>, std::vector<T>>>& state) {
    for (auto& s : slots_) {
      auto it = state.find(s.name);
      if (it == state.end())
        throw std::invalid_argument("adam: checkpoint has no state for '" + s.name + "'");
      if (it->second.first.size() != s.m.size() || it->second.second.size() != s.v.size())
        throw shape_error("adam: checkpoint moment size mismatch for '" + s.name + "'");
      s.m = it->second.first;
      s.v = it->second.second;
    }
    step_ = step;
  }

 private:
  struct Slot {
    std::string name;
    Tensor<T> param;  // shares storage with the model
    std::vector<T> m, v;
  };

  AdamConfig cfg_;
  std::vector<Slot> slots_;
  std::uint64_t step_ = 0;
};

}  // namespace fddprec
