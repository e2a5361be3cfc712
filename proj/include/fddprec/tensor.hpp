#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "fddprec/errors.hpp"
#include "fddprec/rng.hpp"

namespace fddprec {

namespace detail {

template <typename T>
struct Node {
  std::size_t rows = 0, cols = 0;
  std::vector<T> data;
  std::vector<T> grad;  // sized lazily on first accumulate
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backward_fn;  // cleared once consumed

  std::size_t size() const { return rows * cols; }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
};

// Thread-local switch: when off, ops skip recording backward closures.
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// 2-D row-major tensor participating in a reverse-mode tape. A Tensor is a
// cheap handle onto a shared node; ops produce fresh nodes wired to their
// parents, and backward() walks the resulting DAG once in reverse
// topological order.
template <typename T>
class Tensor {
  static_assert(std::is_floating_point_v<T>);

 public:
  using value_type = T;

  Tensor() : node_(std::make_shared<detail::Node<T>>()) {}

  Tensor(std::size_t rows, std::size_t cols, bool requires_grad = false)
      : node_(std::make_shared<detail::Node<T>>()) {
    node_->rows = rows;
    node_->cols = cols;
    node_->data.assign(rows * cols, T(0));
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(std::size_t r, std::size_t c) { return Tensor(r, c); }

  static Tensor constant(std::size_t r, std::size_t c, T value) {
    Tensor t(r, c);
    std::fill(t.data().begin(), t.data().end(), value);
    return t;
  }

  static Tensor from_vector(std::size_t r, std::size_t c, std::vector<T> values,
                            bool requires_grad = false) {
    if (values.size() != r * c)
      throw shape_error("from_vector: " + std::to_string(values.size()) +
                        " values for shape " + std::to_string(r) + "x" + std::to_string(c));
    Tensor t(r, c, requires_grad);
    t.node_->data = std::move(values);
    return t;
  }

  std::size_t rows() const { return node_->rows; }
  std::size_t cols() const { return node_->cols; }
  std::size_t size() const { return node_->size(); }

  T& at(std::size_t i, std::size_t j) { return node_->data[i * cols() + j]; }
  const T& at(std::size_t i, std::size_t j) const { return node_->data[i * cols() + j]; }

  std::vector<T>& data() { return node_->data; }
  const std::vector<T>& data() const { return node_->data; }

  // Gradient buffer; materialized lazily with the tensor's own shape.
  std::vector<T>& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  const std::vector<T>& grad() const {
    node_->ensure_grad();
    return node_->grad;
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }

  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }

  T item() const {
    if (size() != 1) throw shape_error("item: tensor is " + shape_str() + ", expected 1x1");
    return node_->data[0];
  }

  std::string shape_str() const {
    return std::to_string(rows()) + "x" + std::to_string(cols());
  }

  std::shared_ptr<detail::Node<T>>& node() { return node_; }
  const std::shared_ptr<detail::Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node<T>> node_;
};

namespace detail {

template <typename T>
bool should_record(std::initializer_list<const Tensor<T>*> inputs) {
  if (!grad_mode()) return false;
  for (const auto* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

template <typename T>
void wire(Tensor<T>& out, std::initializer_list<const Tensor<T>*> inputs,
          std::function<void()> fn) {
  out.node()->requires_grad = true;
  for (const auto* t : inputs) out.node()->parents.push_back(t->node());
  out.node()->backward_fn = std::move(fn);
}

}  // namespace detail

// Runs the backward pass from a scalar loss. The reachable graph is
// consumed: backward closures are released as they fire, so a second
// backward over the same graph is rejected.
template <typename T>
void backward(Tensor<T>& loss) {
  if (loss.size() != 1)
    throw shape_error("backward: loss is " + loss.shape_str() + ", expected 1x1");
  auto root = loss.node();
  if (!root->requires_grad)
    throw computation_error("backward: loss does not require grad (graph absent or already consumed)");

  // Iterative DFS post-order to avoid deep recursion on long graphs.
  std::vector<detail::Node<T>*> order;
  std::unordered_set<detail::Node<T>*> visited;
  std::vector<std::pair<detail::Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      detail::Node<T>* p = node->parents[idx++].get();
      if (!visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] = T(1);  // dL/dL = 1

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node<T>* n = *it;
    if (n->backward_fn) {
      n->backward_fn();
      n->backward_fn = nullptr;  // consume
    }
  }
  // Drop intermediate activations; leaves stay alive through their handles.
  root->requires_grad = false;
}

// ---------------------------------------------------------------------------
// Elementwise and structural primitives
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void check_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw shape_error(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                      b.shape_str());
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape("add", a, b);
  Tensor<T> out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
  if (detail::should_record<T>({&a, &b})) {
    detail::wire(out, {&a, &b}, [an = a.node(), bn = b.node(), on = out.node().get()] {
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] += on->grad[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape("sub", a, b);
  Tensor<T> out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
  if (detail::should_record<T>({&a, &b})) {
    detail::wire(out, {&a, &b}, [an = a.node(), bn = b.node(), on = out.node().get()] {
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] -= on->grad[i];
      }
    });
  }
  return out;
}

// Hadamard product.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape("mul", a, b);
  Tensor<T> out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
  if (detail::should_record<T>({&a, &b})) {
    detail::wire(out, {&a, &b}, [an = a.node(), bn = b.node(), on = out.node().get()] {
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < on->grad.size(); ++i)
          an->grad[i] += on->grad[i] * bn->data[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < on->grad.size(); ++i)
          bn->grad[i] += on->grad[i] * an->data[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  Tensor<T> out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * c;
  if (detail::should_record<T>({&a})) {
    detail::wire(out, {&a}, [an = a.node(), on = out.node().get(), c] {
      if (!an->requires_grad) return;
      an->ensure_grad();
      for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i] * c;
    });
  }
  return out;
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
  Tensor<T> out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] + c;
  if (detail::should_record<T>({&a})) {
    detail::wire(out, {&a}, [an = a.node(), on = out.node().get()] {
      if (!an->requires_grad) return;
      an->ensure_grad();
      for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.cols() != b.rows())
    throw shape_error("matmul: inner dimensions disagree: " + a.shape_str() + " vs " +
                      b.shape_str());
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor<T> out(m, n);
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* pc = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const T av = pa[i * k + p];
      if (av == T(0)) continue;
      const T* brow = pb + p * n;
      T* crow = pc + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  if (detail::should_record<T>({&a, &b})) {
    detail::wire(out, {&a, &b},
                 [an = a.node(), bn = b.node(), on = out.node().get(), m, k, n] {
                   const T* g = on->grad.data();
                   if (an->requires_grad) {
                     an->ensure_grad();
                     // dA = G * B^T
                     for (std::size_t i = 0; i < m; ++i)
                       for (std::size_t p = 0; p < k; ++p) {
                         T s = T(0);
                         const T* grow = g + i * n;
                         const T* brow = bn->data.data() + p * n;
                         for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
                         an->grad[i * k + p] += s;
                       }
                   }
                   if (bn->requires_grad) {
                     bn->ensure_grad();
                     // dB = A^T * G
                     for (std::size_t p = 0; p < k; ++p)
                       for (std::size_t i = 0; i < m; ++i) {
                         const T av = an->data[i * k + p];
                         if (av == T(0)) continue;
                         const T* grow = g + i * n;
                         T* brow = bn->grad.data() + p * n;
                         for (std::size_t j = 0; j < n; ++j) brow[j] += av * grow[j];
                       }
                   }
                 });
  }
  return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  Tensor<T> out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out.at(j, i) = a.at(i, j);
  if (detail::should_record<T>({&a})) {
    detail::wire(out, {&a}, [an = a.node(), on = out.node().get()] {
      if (!an->requires_grad) return;
      an->ensure_grad();
      const std::size_t r = an->rows, c = an->cols;
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) an->grad[i * c + j] += on->grad[j * r + i];
    });
  }
  return out;
}

// View with a new shape over the same element order.
template <typename T>
Tensor<T> reshape(const Tensor<T>& a, std::size_t rows, std::size_t cols) {
  if (rows * cols != a.size())
    throw shape_error("reshape: cannot view " + a.shape_str() + " as " + std::to_string(rows) +
                      "x" + std::to_string(cols));
  Tensor<T> out(rows, cols);
  out.data() = a.data();
  if (detail::should_record<T>({&a})) {
    detail::wire(out, {&a}, [an = a.node(), on = out.node().get()] {
      if (!an->requires_grad) return;
      an->ensure_grad();
      for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw shape_error("concat_cols: no inputs");
  const std::size_t m = parts[0].rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rows() != m)
      throw shape_error("concat_cols: row mismatch " + parts[0].shape_str() + " vs " +
                        p.shape_str());
    total += p.cols();
  }
  Tensor<T> out(m, total);
  std::size_t off = 0;
  for (const auto& p : parts) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < p.cols(); ++j) out.at(i, off + j) = p.at(i, j);
    off += p.cols();
  }
  bool rec = detail::grad_mode();
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (rec && any) {
    std::vector<std::shared_ptr<detail::Node<T>>> pnodes;
    for (const auto& p : parts) pnodes.push_back(p.node());
    out.node()->requires_grad = true;
    out.node()->parents = pnodes;
    out.node()->backward_fn = [pnodes, on = out.node().get(), m, total] {
      std::size_t off = 0;
      for (const auto& pn : pnodes) {
        const std::size_t c = pn->cols;
        if (pn->requires_grad) {
          pn->ensure_grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < c; ++j)
              pn->grad[i * c + j] += on->grad[i * total + off + j];
        }
        off += c;
      }
    };
  }
  return out;
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw shape_error("concat_rows: no inputs");
  const std::size_t n = parts[0].cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.cols() != n)
      throw shape_error("concat_rows: column mismatch " + parts[0].shape_str() + " vs " +
                        p.shape_str());
    total += p.rows();
  }
  Tensor<T> out(total, n);
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.data().begin(), p.data().end(), out.data().begin() + off * n);
    off += p.rows();
  }
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (detail::grad_mode() && any) {
    std::vector<std::shared_ptr<detail::Node<T>>> pnodes;
    for (const auto& p : parts) pnodes.push_back(p.node());
    out.node()->requires_grad = true;
    out.node()->parents = pnodes;
    out.node()->backward_fn = [pnodes, on = out.node().get(), n] {
      std::size_t off = 0;
      for (const auto& pn : pnodes) {
        if (pn->requires_grad) {
          pn->ensure_grad();
          for (std::size_t i = 0; i < pn->grad.size(); ++i) pn->grad[i] += on->grad[off * n + i];
        }
        off += pn->rows;
      }
    };
  }
  return out;
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& a, std::size_t r0, std::size_t r1) {
  if (r1 > a.rows() || r0 >= r1)
    throw shape_error("slice_rows: [" + std::to_string(r0) + "," + std::to_string(r1) +
                      ") out of range for " + a.shape_str());
  Tensor<T> out(r1 - r0, a.cols());
  std::copy(a.data().begin() + r0 * a.cols(), a.data().begin() + r1 * a.cols(),
            out.data().begin());
  if (detail::should_record<T>({&a})) {
    detail::wire(out, {&a}, [an = a.node(), on = out.node().get(), r0] {
      if (!an->requires_grad) return;
      an->ensure_grad();
      const std::size_t base = r0 * an->cols;
      for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[base + i] += on->grad[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, std::size_t c0, std::size_t c1) {
  if (c1 > a.cols() || c0 >= c1)
    throw shape_error("slice_cols: [" + std::to_string(c0) + "," + std::to_string(c1) +
                      ") out of range for " + a.shape_str());
  Tensor<T> out(a.rows(), c1 - c0);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = c0; j < c1; ++j) out.at(i, j - c0) = a.at(i, j);
  if (detail::should_record<T>({&a})) {
    detail::wire(out, {&a}, [an = a.node(), on = out.node().get(), c0] {
      if (!an->requires_grad) return;
      an->ensure_grad();
      const std::size_t w = on->cols;
      for (std::size_t i = 0; i < on->rows; ++i)
        for (std::size_t j = 0; j < w; ++j)
          an->grad[i * an->cols + c0 + j] += on->grad[i * w + j];
    });
  }
  return out;
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& a, const std::vector<std::size_t>& idx) {
  Tensor<T> out(idx.size(), a.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= a.rows())
      throw shape_error("gather_rows: index " + std::to_string(idx[i]) + " out of range for " +
                        a.shape_str());
    for (std::size_t j = 0; j < a.cols(); ++j) out.at(i, j) = a.at(idx[i], j);
  }
  if (detail::should_record<T>({&a})) {
    detail::wire(out, {&a}, [an = a.node(), on = out.node().get(), idx] {
      if (!an->requires_grad) return;
      an->ensure_grad();
      const std::size_t w = an->cols;
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < w; ++j) an->grad[idx[i] * w + j] += on->grad[i * w + j];
    });
  }
  return out;
}

// Inverse of gather_rows: places row i of `a` at row idx[i] of an
// otherwise-zero total_rows x cols output.
template <typename T>
Tensor<T> scatter_rows(const Tensor<T>& a, const std::vector<std::size_t>& idx,
                       std::size_t total_rows) {
  if (idx.size() != a.rows())
    throw shape_error("scatter_rows: " + std::to_string(idx.size()) + " indices for " +
                      a.shape_str());
  Tensor<T> out(total_rows, a.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= total_rows)
      throw shape_error("scatter_rows: index " + std::to_string(idx[i]) + " out of range");
    for (std::size_t j = 0; j < a.cols(); ++j) out.at(idx[i], j) += a.at(i, j);
  }
  if (detail::should_record<T>({&a})) {
    detail::wire(out, {&a}, [an = a.node(), on = out.node().get(), idx] {
      if (!an->requires_grad) return;
      an->ensure_grad();
      const std::size_t w = an->cols;
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < w; ++j) an->grad[i * w + j] += on->grad[idx[i] * w + j];
    });
  }
  return out;
}

// Picks a[rows[i], col] into an idx.size() x 1 column.
template <typename T>
Tensor<T> gather_col(const Tensor<T>& a, std::size_t col, const std::vector<std::size_t>& rows) {
  if (col >= a.cols())
    throw shape_error("gather_col: column " + std::to_string(col) + " out of range for " +
                      a.shape_str());
  Tensor<T> out(rows.size(), 1);
  for (std::size_t i = 0; i < rows.size(); ++i) out.at(i, 0) = a.at(rows[i], col);
  if (detail::should_record<T>({&a})) {
    detail::wire(out, {&a}, [an = a.node(), on = out.node().get(), col, rows] {
      if (!an->requires_grad) return;
      an->ensure_grad();
      for (std::size_t i = 0; i < rows.size(); ++i)
        an->grad[rows[i] * an->cols + col] += on->grad[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  Tensor<T> out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] > T(0) ? a.data()[i] : T(0);
  if (detail::should_record<T>({&a})) {
    detail::wire(out, {&a}, [an = a.node(), on = out.node().get()] {
      if (!an->requires_grad) return;
      an->ensure_grad();
      // subgradient at 0 is 0
      for (std::size_t i = 0; i < on->grad.size(); ++i)
        if (an->data[i] > T(0)) an->grad[i] += on->grad[i];
    });
  }
  return out;
}

// Inverted dropout: zero each element with probability `rate` and rescale
// survivors by 1/(1-rate); identity when not training.
template <typename T>
Tensor<T> dropout(const Tensor<T>& a, double rate, bool training, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0)
    throw computation_error("dropout: rate " + std::to_string(rate) + " outside [0,1)");
  if (!training || rate == 0.0) return a;
  Tensor<T> out(a.rows(), a.cols());
  auto mask = std::make_shared<std::vector<T>>(a.size());
  const T keep_scale = T(1.0 / (1.0 - rate));
  for (std::size_t i = 0; i < a.size(); ++i) {
    (*mask)[i] = rng.uniform() < rate ? T(0) : keep_scale;
    out.data()[i] = a.data()[i] * (*mask)[i];
  }
  if (detail::should_record<T>({&a})) {
    detail::wire(out, {&a}, [an = a.node(), on = out.node().get(), mask] {
      if (!an->requires_grad) return;
      an->ensure_grad();
      for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i] * (*mask)[i];
    });
  }
  return out;
}

// sign(x) with sign(0) = +1. Straight-through gradient gated by a
// hard-tanh window: passes where |x| <= 1, zero elsewhere.
template <typename T>
Tensor<T> binarize_ste(const Tensor<T>& a) {
  Tensor<T> out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!std::isfinite(a.data()[i]))
      throw computation_error("binarize: non-finite input at element " + std::to_string(i));
    out.data()[i] = a.data()[i] < T(0) ? T(-1) : T(1);
  }
  if (detail::should_record<T>({&a})) {
    detail::wire(out, {&a}, [an = a.node(), on = out.node().get()] {
      if (!an->requires_grad) return;
      an->ensure_grad();
      for (std::size_t i = 0; i < on->grad.size(); ++i)
        if (std::abs(an->data[i]) <= T(1)) an->grad[i] += on->grad[i];
    });
  }
  return out;
}

// Row-wise softmax, stabilized by subtracting each row's maximum.
template <typename T>
Tensor<T> row_softmax(const Tensor<T>& a) {
  Tensor<T> out(a.rows(), a.cols());
  const std::size_t n = a.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    T mx = a.at(i, 0);
    for (std::size_t j = 0; j < n; ++j) {
      if (std::isnan(a.at(i, j)))
        throw computation_error("row_softmax: NaN input in row " + std::to_string(i));
      mx = std::max(mx, a.at(i, j));
    }
    T sum = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      out.at(i, j) = std::exp(a.at(i, j) - mx);
      sum += out.at(i, j);
    }
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) /= sum;
  }
  if (detail::should_record<T>({&a})) {
    detail::wire(out, {&a}, [an = a.node(), on = out.node().get()] {
      if (!an->requires_grad) return;
      an->ensure_grad();
      const std::size_t n = on->cols;
      for (std::size_t i = 0; i < on->rows; ++i) {
        T dot = T(0);
        for (std::size_t j = 0; j < n; ++j) dot += on->grad[i * n + j] * on->data[i * n + j];
        for (std::size_t j = 0; j < n; ++j)
          an->grad[i * n + j] += on->data[i * n + j] * (on->grad[i * n + j] - dot);
      }
    });
  }
  return out;
}

// Per-row normalization to zero mean / unit population variance
// (eps-regularized), then an affine map by gain/bias of width d.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  const std::size_t m = x.rows(), d = x.cols();
  if (d < 2) throw shape_error("layer_norm: row width must be >= 2, got " + x.shape_str());
  if (gain.size() != d || bias.size() != d)
    throw shape_error("layer_norm: affine width mismatch: x " + x.shape_str() + ", gain " +
                      gain.shape_str() + ", bias " + bias.shape_str());
  Tensor<T> out(m, d);
  auto norm = std::make_shared<std::vector<T>>(m * d);   // pre-affine rows
  auto inv_sigma = std::make_shared<std::vector<T>>(m);
  for (std::size_t i = 0; i < m; ++i) {
    T mean = T(0);
    for (std::size_t j = 0; j < d; ++j) mean += x.at(i, j);
    mean /= T(d);
    T var = T(0);
    for (std::size_t j = 0; j < d; ++j) {
      const T c = x.at(i, j) - mean;
      var += c * c;
    }
    var /= T(d);
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_sigma)[i] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const T y = (x.at(i, j) - mean) * is;
      (*norm)[i * d + j] = y;
      out.at(i, j) = gain.data()[j] * y + bias.data()[j];
    }
  }
  if (detail::should_record<T>({&x, &gain, &bias})) {
    detail::wire(out, {&x, &gain, &bias},
                 [xn = x.node(), gn = gain.node(), bn = bias.node(), on = out.node().get(),
                  norm, inv_sigma, m, d] {
                   if (gn->requires_grad) gn->ensure_grad();
                   if (bn->requires_grad) bn->ensure_grad();
                   if (xn->requires_grad) xn->ensure_grad();
                   for (std::size_t i = 0; i < m; ++i) {
                     T g_mean = T(0), gy_mean = T(0);
                     for (std::size_t j = 0; j < d; ++j) {
                       const T go = on->grad[i * d + j];
                       const T y = (*norm)[i * d + j];
                       if (gn->requires_grad) gn->grad[j] += go * y;
                       if (bn->requires_grad) bn->grad[j] += go;
                       const T gy = go * gn->data[j];
                       g_mean += gy;
                       gy_mean += gy * y;
                     }
                     if (!xn->requires_grad) continue;
                     g_mean /= T(d);
                     gy_mean /= T(d);
                     const T is = (*inv_sigma)[i];
                     for (std::size_t j = 0; j < d; ++j) {
                       const T gy = on->grad[i * d + j] * gn->data[j];
                       const T y = (*norm)[i * d + j];
                       xn->grad[i * d + j] += (gy - g_mean - y * gy_mean) * is;
                     }
                   }
                 });
  }
  return out;
}

template <typename T>
Tensor<T> log_elem(const Tensor<T>& a) {
  Tensor<T> out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!(a.data()[i] > T(0)))
      throw computation_error("log: non-positive input " + std::to_string(a.data()[i]));
    out.data()[i] = std::log(a.data()[i]);
  }
  if (detail::should_record<T>({&a})) {
    detail::wire(out, {&a}, [an = a.node(), on = out.node().get()] {
      if (!an->requires_grad) return;
      an->ensure_grad();
      for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i] / an->data[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
  Tensor<T> out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * a.data()[i];
  if (detail::should_record<T>({&a})) {
    detail::wire(out, {&a}, [an = a.node(), on = out.node().get()] {
      if (!an->requires_grad) return;
      an->ensure_grad();
      for (std::size_t i = 0; i < on->grad.size(); ++i)
        an->grad[i] += T(2) * an->data[i] * on->grad[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> rsqrt(const Tensor<T>& a) {
  Tensor<T> out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!(a.data()[i] > T(0)))
      throw computation_error("rsqrt: non-positive input " + std::to_string(a.data()[i]));
    out.data()[i] = T(1) / std::sqrt(a.data()[i]);
  }
  if (detail::should_record<T>({&a})) {
    detail::wire(out, {&a}, [an = a.node(), on = out.node().get()] {
      if (!an->requires_grad) return;
      an->ensure_grad();
      for (std::size_t i = 0; i < on->grad.size(); ++i) {
        const T y = on->data[i];
        an->grad[i] += on->grad[i] * (T(-0.5) * y * y * y);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
  Tensor<T> out(1, 1);
  T s = T(0);
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i];
  out.data()[0] = s;
  if (detail::should_record<T>({&a})) {
    detail::wire(out, {&a}, [an = a.node(), on = out.node().get()] {
      if (!an->requires_grad) return;
      an->ensure_grad();
      for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += on->grad[0];
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
  return scale(sum_all(a), T(1) / T(a.size()));
}

template <typename T>
Tensor<T> col_sum(const Tensor<T>& a) {
  Tensor<T> out(1, a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out.at(0, j) += a.at(i, j);
  if (detail::should_record<T>({&a})) {
    detail::wire(out, {&a}, [an = a.node(), on = out.node().get()] {
      if (!an->requires_grad) return;
      an->ensure_grad();
      for (std::size_t i = 0; i < an->rows; ++i)
        for (std::size_t j = 0; j < an->cols; ++j) an->grad[i * an->cols + j] += on->grad[j];
    });
  }
  return out;
}

template <typename T>
Tensor<T> row_sum(const Tensor<T>& a) {
  Tensor<T> out(a.rows(), 1);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out.at(i, 0) += a.at(i, j);
  if (detail::should_record<T>({&a})) {
    detail::wire(out, {&a}, [an = a.node(), on = out.node().get()] {
      if (!an->requires_grad) return;
      an->ensure_grad();
      for (std::size_t i = 0; i < an->rows; ++i)
        for (std::size_t j = 0; j < an->cols; ++j) an->grad[i * an->cols + j] += on->grad[i];
    });
  }
  return out;
}

// a (m x n) + v broadcast across rows; v is 1 x n.
template <typename T>
Tensor<T> add_rowvec(const Tensor<T>& a, const Tensor<T>& v) {
  if (v.rows() != 1 || v.cols() != a.cols())
    throw shape_error("add_rowvec: " + a.shape_str() + " vs " + v.shape_str());
  Tensor<T> out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out.at(i, j) = a.at(i, j) + v.at(0, j);
  if (detail::should_record<T>({&a, &v})) {
    detail::wire(out, {&a, &v}, [an = a.node(), vn = v.node(), on = out.node().get()] {
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
      }
      if (vn->requires_grad) {
        vn->ensure_grad();
        for (std::size_t i = 0; i < on->rows; ++i)
          for (std::size_t j = 0; j < on->cols; ++j) vn->grad[j] += on->grad[i * on->cols + j];
      }
    });
  }
  return out;
}

// a (m x n) scaled columnwise by v (1 x n).
template <typename T>
Tensor<T> mul_rowvec(const Tensor<T>& a, const Tensor<T>& v) {
  if (v.rows() != 1 || v.cols() != a.cols())
    throw shape_error("mul_rowvec: " + a.shape_str() + " vs " + v.shape_str());
  Tensor<T> out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out.at(i, j) = a.at(i, j) * v.at(0, j);
  if (detail::should_record<T>({&a, &v})) {
    detail::wire(out, {&a, &v}, [an = a.node(), vn = v.node(), on = out.node().get()] {
      const std::size_t n = on->cols;
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < on->rows; ++i)
          for (std::size_t j = 0; j < n; ++j)
            an->grad[i * n + j] += on->grad[i * n + j] * vn->data[j];
      }
      if (vn->requires_grad) {
        vn->ensure_grad();
        for (std::size_t i = 0; i < on->rows; ++i)
          for (std::size_t j = 0; j < n; ++j)
            vn->grad[j] += on->grad[i * n + j] * an->data[i * n + j];
      }
    });
  }
  return out;
}

// a (m x n) scaled rowwise by s (m x 1).
template <typename T>
Tensor<T> mul_colvec(const Tensor<T>& a, const Tensor<T>& s) {
  if (s.cols() != 1 || s.rows() != a.rows())
    throw shape_error("mul_colvec: " + a.shape_str() + " vs " + s.shape_str());
  Tensor<T> out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out.at(i, j) = a.at(i, j) * s.at(i, 0);
  if (detail::should_record<T>({&a, &s})) {
    detail::wire(out, {&a, &s}, [an = a.node(), sn = s.node(), on = out.node().get()] {
      const std::size_t n = on->cols;
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < on->rows; ++i)
          for (std::size_t j = 0; j < n; ++j)
            an->grad[i * n + j] += on->grad[i * n + j] * sn->data[i];
      }
      if (sn->requires_grad) {
        sn->ensure_grad();
        for (std::size_t i = 0; i < on->rows; ++i)
          for (std::size_t j = 0; j < n; ++j)
            sn->grad[i] += on->grad[i * n + j] * an->data[i * n + j];
      }
    });
  }
  return out;
}

// a scaled by a 1x1 tensor (gradient flows to both).
template <typename T>
Tensor<T> mul_bcast(const Tensor<T>& a, const Tensor<T>& s) {
  if (s.size() != 1) throw shape_error("mul_bcast: scalar is " + s.shape_str());
  Tensor<T> out(a.rows(), a.cols());
  const T sv = s.data()[0];
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * sv;
  if (detail::should_record<T>({&a, &s})) {
    detail::wire(out, {&a, &s}, [an = a.node(), sn = s.node(), on = out.node().get()] {
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < on->grad.size(); ++i)
          an->grad[i] += on->grad[i] * sn->data[0];
      }
      if (sn->requires_grad) {
        sn->ensure_grad();
        T acc = T(0);
        for (std::size_t i = 0; i < on->grad.size(); ++i) acc += on->grad[i] * an->data[i];
        sn->grad[0] += acc;
      }
    });
  }
  return out;
}

// Row-wise top-k softmax: per row, the k largest logits (ties broken by
// lower column index) get softmax weights restricted to that set; other
// entries are exactly zero. The selection itself is treated as constant
// in the backward pass, so unselected logits receive zero gradient.
template <typename T>
Tensor<T> topk_row_softmax(const Tensor<T>& logits, std::size_t k) {
  const std::size_t m = logits.rows(), e = logits.cols();
  if (k < 1 || k > e)
    throw shape_error("topk_row_softmax: k=" + std::to_string(k) + " outside [1," +
                      std::to_string(e) + "]");
  Tensor<T> out(m, e);
  auto selected = std::make_shared<std::vector<std::vector<std::size_t>>>(m);
  for (std::size_t i = 0; i < m; ++i) {
    std::vector<std::size_t> order(e);
    std::iota(order.begin(), order.end(), 0);
    // stable sort by descending logit keeps lower index first on ties
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return logits.at(i, a) > logits.at(i, b);
    });
    auto& sel = (*selected)[i];
    sel.assign(order.begin(), order.begin() + k);
    std::sort(sel.begin(), sel.end());
    T mx = logits.at(i, sel[0]);
    for (std::size_t j : sel) mx = std::max(mx, logits.at(i, j));
    T sum = T(0);
    for (std::size_t j : sel) {
      out.at(i, j) = std::exp(logits.at(i, j) - mx);
      sum += out.at(i, j);
    }
    for (std::size_t j : sel) out.at(i, j) /= sum;
  }
  if (detail::should_record<T>({&logits})) {
    detail::wire(out, {&logits}, [ln = logits.node(), on = out.node().get(), selected] {
      if (!ln->requires_grad) return;
      ln->ensure_grad();
      const std::size_t e = on->cols;
      for (std::size_t i = 0; i < on->rows; ++i) {
        T dot = T(0);
        for (std::size_t j : (*selected)[i]) dot += on->grad[i * e + j] * on->data[i * e + j];
        for (std::size_t j : (*selected)[i])
          ln->grad[i * e + j] += on->data[i * e + j] * (on->grad[i * e + j] - dot);
      }
    });
  }
  return out;
}

}  // namespace fddprec
