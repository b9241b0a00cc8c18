#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "fmae/errors.hpp"

namespace fmae {

namespace detail {

template <typename T>
struct Node {
  std::vector<std::size_t> shape;
  std::vector<T> value;
  std::vector<T> grad;  // allocated lazily, same size as value
  bool needs_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::size_t size() const { return value.size(); }

  std::vector<T>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
};

template <typename T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

}  // namespace detail

/// Dense n-dimensional array participating in reverse-mode differentiation.
/// Kernels run eagerly; each records a pullback that accumulates into the
/// parents' gradients when backward() is called on a scalar root.
template <typename T>
class Tensor {
 public:
  using Node = detail::Node<T>;

  Tensor() = default;

  static Tensor constant(std::vector<std::size_t> shape, std::vector<T> data) {
    return make(std::move(shape), std::move(data), false);
  }

  static Tensor parameter(std::vector<std::size_t> shape, std::vector<T> data) {
    return make(std::move(shape), std::move(data), true);
  }

  static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false) {
    std::size_t total = 1;
    for (auto d : shape) total *= d;
    return make(std::move(shape), std::vector<T>(total, T(0)), requires_grad);
  }

  static Tensor scalar(T v, bool requires_grad = false) {
    return make({1}, {v}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const std::vector<std::size_t>& shape() const { return node_->shape; }
  std::size_t size() const { return node_->size(); }
  std::size_t rank() const { return node_->shape.size(); }

  std::size_t rows() const { return node_->shape.at(0); }
  std::size_t cols() const { return node_->shape.at(1); }

  const std::vector<T>& value() const { return node_->value; }
  /// Mutable access for optimizers; only meaningful on leaves.
  std::vector<T>& mutable_value() { return node_->value; }

  bool needs_grad() const { return node_->needs_grad; }
  const std::vector<T>& grad() const { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.assign(node_->value.size(), T(0)); }

  T item() const {
    if (size() != 1) throw ShapeError("item(): tensor is not scalar");
    return node_->value[0];
  }

  /// Reverse-mode sweep from a scalar root.
  void backward() const {
    if (size() != 1) throw ContractError("backward(): root must be scalar");
    std::vector<Node*> order = topo_order();
    node_->ensure_grad();
    node_->grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node* n = *it;
      if (n->backward && n->needs_grad) n->backward(*n);
    }
  }

  /// Fresh parameter leaf with a copy of this tensor's values.
  Tensor clone_parameter() const { return parameter(shape(), value()); }

  std::shared_ptr<Node> node() const { return node_; }

  static Tensor from_node(std::shared_ptr<Node> n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

 private:
  static Tensor make(std::vector<std::size_t> shape, std::vector<T> data, bool requires_grad) {
    std::size_t total = 1;
    for (auto d : shape) total *= d;
    if (total != data.size()) throw ShapeError("tensor data does not match shape");
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->needs_grad = requires_grad;
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

  std::vector<Node*> topo_order() const {
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        Node* p = n->parents[next++].get();
        if (seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    return order;  // parents precede consumers; reversed for the sweep
  }

  std::shared_ptr<Node> node_;
};

namespace detail {

template <typename T>
std::shared_ptr<Node<T>> new_node(std::vector<std::size_t> shape,
                                  std::vector<std::shared_ptr<Node<T>>> parents) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  std::size_t total = 1;
  for (auto d : n->shape) total *= d;
  n->value.resize(total);
  for (const auto& p : parents) n->needs_grad = n->needs_grad || p->needs_grad;
  if (n->needs_grad) n->parents = std::move(parents);
  return n;
}

template <typename T>
void require_2d(const Tensor<T>& t, const char* op) {
  if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected a 2-d tensor");
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) throw ShapeError(std::string(op) + ": shapes differ");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise kernels
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  auto out = detail::new_node<T>(a.shape(), {a.node(), b.node()});
  const std::size_t n = out->value.size();
  for (std::size_t i = 0; i < n; ++i) out->value[i] = a.value()[i] + b.value()[i];
  if (out->needs_grad) {
    out->backward = [](detail::Node<T>& self) {
      for (int k = 0; k < 2; ++k) {
        auto& p = *self.parents[static_cast<std::size_t>(k)];
        if (!p.needs_grad) continue;
        auto& g = p.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
    };
  }
  return Tensor<T>::from_node(out);
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  auto out = detail::new_node<T>(a.shape(), {a.node(), b.node()});
  const std::size_t n = out->value.size();
  for (std::size_t i = 0; i < n; ++i) out->value[i] = a.value()[i] - b.value()[i];
  if (out->needs_grad) {
    out->backward = [](detail::Node<T>& self) {
      auto& pa = *self.parents[0];
      auto& pb = *self.parents[1];
      if (pa.needs_grad) {
        auto& g = pa.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
      if (pb.needs_grad) {
        auto& g = pb.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
      }
    };
  }
  return Tensor<T>::from_node(out);
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  auto out = detail::new_node<T>(a.shape(), {a.node(), b.node()});
  const std::size_t n = out->value.size();
  for (std::size_t i = 0; i < n; ++i) out->value[i] = a.value()[i] * b.value()[i];
  if (out->needs_grad) {
    out->backward = [](detail::Node<T>& self) {
      auto& pa = *self.parents[0];
      auto& pb = *self.parents[1];
      if (pa.needs_grad) {
        auto& g = pa.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
      }
      if (pb.needs_grad) {
        auto& g = pb.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
      }
    };
  }
  return Tensor<T>::from_node(out);
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  auto out = detail::new_node<T>(a.shape(), {a.node()});
  const std::size_t n = out->value.size();
  for (std::size_t i = 0; i < n; ++i) out->value[i] = a.value()[i] * factor;
  if (out->needs_grad) {
    out->backward = [factor](detail::Node<T>& self) {
      auto& g = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
    };
  }
  return Tensor<T>::from_node(out);
}

/// Broadcast-add a length-n row vector to every row of an m x n matrix.
template <typename T>
Tensor<T> add_rowvec(const Tensor<T>& a, const Tensor<T>& v) {
  detail::require_2d(a, "add_rowvec");
  if (v.rank() != 1 || v.size() != a.cols()) {
    throw ShapeError("add_rowvec: vector length must equal matrix columns");
  }
  auto out = detail::new_node<T>(a.shape(), {a.node(), v.node()});
  const std::size_t m = a.rows(), n = a.cols();
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      out->value[r * n + c] = a.value()[r * n + c] + v.value()[c];
    }
  }
  if (out->needs_grad) {
    out->backward = [m, n](detail::Node<T>& self) {
      auto& pa = *self.parents[0];
      auto& pv = *self.parents[1];
      if (pa.needs_grad) {
        auto& g = pa.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
      if (pv.needs_grad) {
        auto& g = pv.ensure_grad();
        for (std::size_t r = 0; r < m; ++r) {
          for (std::size_t c = 0; c < n; ++c) g[c] += self.grad[r * n + c];
        }
      }
    };
  }
  return Tensor<T>::from_node(out);
}

// ---------------------------------------------------------------------------
// Matrix kernels
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_2d(a, "matmul");
  detail::require_2d(b, "matmul");
  if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimensions differ");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  auto out = detail::new_node<T>({m, n}, {a.node(), b.node()});
  detail::ConstMatMap<T> A(a.value().data(), m, k);
  detail::ConstMatMap<T> B(b.value().data(), k, n);
  detail::MatMap<T> C(out->value.data(), m, n);
  C.noalias() = A * B;
  if (out->needs_grad) {
    out->backward = [m, k, n](detail::Node<T>& self) {
      auto& pa = *self.parents[0];
      auto& pb = *self.parents[1];
      detail::ConstMatMap<T> G(self.grad.data(), m, n);
      if (pa.needs_grad) {
        detail::ConstMatMap<T> B(pb.value.data(), k, n);
        detail::MatMap<T> GA(pa.ensure_grad().data(), m, k);
        GA.noalias() += G * B.transpose();
      }
      if (pb.needs_grad) {
        detail::ConstMatMap<T> A(pa.value.data(), m, k);
        detail::MatMap<T> GB(pb.ensure_grad().data(), k, n);
        GB.noalias() += A.transpose() * G;
      }
    };
  }
  return Tensor<T>::from_node(out);
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  detail::require_2d(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  auto out = detail::new_node<T>({n, m}, {a.node()});
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < n; ++c) out->value[c * m + r] = a.value()[r * n + c];
  }
  if (out->needs_grad) {
    out->backward = [m, n](detail::Node<T>& self) {
      auto& g = self.parents[0]->ensure_grad();
      for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t c = 0; c < n; ++c) g[r * n + c] += self.grad[c * m + r];
      }
    };
  }
  return Tensor<T>::from_node(out);
}

/// y = x W + b with x: {m, in}, W: {in, out}, b: {out}.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  return add_rowvec(matmul(x, w), b);
}

// ---------------------------------------------------------------------------
// Shape kernels
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DegenerateInputError("concat_cols: no inputs");
  const std::size_t m = parts[0].rows();
  std::size_t total = 0;
  std::vector<std::shared_ptr<detail::Node<T>>> parents;
  for (const auto& p : parts) {
    detail::require_2d(p, "concat_cols");
    if (p.rows() != m) throw ShapeError("concat_cols: row counts differ");
    total += p.cols();
    parents.push_back(p.node());
  }
  auto out = detail::new_node<T>({m, total}, std::move(parents));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t n = p.cols();
    for (std::size_t r = 0; r < m; ++r) {
      std::copy_n(p.value().data() + r * n, n, out->value.data() + r * total + off);
    }
    off += n;
  }
  if (out->needs_grad) {
    std::vector<std::size_t> widths;
    for (const auto& p : parts) widths.push_back(p.cols());
    out->backward = [m, total, offsets, widths](detail::Node<T>& self) {
      for (std::size_t k = 0; k < self.parents.size(); ++k) {
        auto& p = *self.parents[k];
        if (!p.needs_grad) continue;
        auto& g = p.ensure_grad();
        for (std::size_t r = 0; r < m; ++r) {
          const T* src = self.grad.data() + r * total + offsets[k];
          T* dst = g.data() + r * widths[k];
          for (std::size_t c = 0; c < widths[k]; ++c) dst[c] += src[c];
        }
      }
    };
  }
  return Tensor<T>::from_node(out);
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DegenerateInputError("concat_rows: no inputs");
  const std::size_t n = parts[0].cols();
  std::size_t total = 0;
  std::vector<std::shared_ptr<detail::Node<T>>> parents;
  for (const auto& p : parts) {
    detail::require_2d(p, "concat_rows");
    if (p.cols() != n) throw ShapeError("concat_rows: column counts differ");
    total += p.rows();
    parents.push_back(p.node());
  }
  auto out = detail::new_node<T>({total, n}, std::move(parents));
  std::size_t row = 0;
  std::vector<std::size_t> row_offsets;
  for (const auto& p : parts) {
    row_offsets.push_back(row);
    std::copy(p.value().begin(), p.value().end(), out->value.begin() + row * n);
    row += p.rows();
  }
  if (out->needs_grad) {
    std::vector<std::size_t> heights;
    for (const auto& p : parts) heights.push_back(p.rows());
    out->backward = [n, row_offsets, heights](detail::Node<T>& self) {
      for (std::size_t k = 0; k < self.parents.size(); ++k) {
        auto& p = *self.parents[k];
        if (!p.needs_grad) continue;
        auto& g = p.ensure_grad();
        const T* src = self.grad.data() + row_offsets[k] * n;
        for (std::size_t i = 0; i < heights[k] * n; ++i) g[i] += src[i];
      }
    };
  }
  return Tensor<T>::from_node(out);
}

/// Columns [begin, end) of a 2-d tensor.
template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, std::size_t begin, std::size_t end) {
  detail::require_2d(a, "slice_cols");
  if (begin >= end || end > a.cols()) throw ShapeError("slice_cols: range out of bounds");
  const std::size_t m = a.rows(), n = a.cols(), w = end - begin;
  auto out = detail::new_node<T>({m, w}, {a.node()});
  for (std::size_t r = 0; r < m; ++r) {
    std::copy_n(a.value().data() + r * n + begin, w, out->value.data() + r * w);
  }
  if (out->needs_grad) {
    out->backward = [m, n, w, begin](detail::Node<T>& self) {
      auto& g = self.parents[0]->ensure_grad();
      for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t c = 0; c < w; ++c) g[r * n + begin + c] += self.grad[r * w + c];
      }
    };
  }
  return Tensor<T>::from_node(out);
}

/// Rows [begin, end) of a 2-d tensor.
template <typename T>
Tensor<T> slice_rows(const Tensor<T>& a, std::size_t begin, std::size_t end) {
  detail::require_2d(a, "slice_rows");
  if (begin >= end || end > a.rows()) throw ShapeError("slice_rows: range out of bounds");
  const std::size_t n = a.cols(), h = end - begin;
  auto out = detail::new_node<T>({h, n}, {a.node()});
  std::copy_n(a.value().data() + begin * n, h * n, out->value.data());
  if (out->needs_grad) {
    out->backward = [n, h, begin](detail::Node<T>& self) {
      auto& g = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < h * n; ++i) g[begin * n + i] += self.grad[i];
    };
  }
  return Tensor<T>::from_node(out);
}

/// out.row(r) = a.row(indices[r]); pullback scatter-adds.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& a, const std::vector<int>& indices) {
  detail::require_2d(a, "gather_rows");
  const std::size_t m = a.rows(), n = a.cols();
  for (int idx : indices) {
    if (idx < 0 || static_cast<std::size_t>(idx) >= m) {
      throw ShapeError("gather_rows: index out of range");
    }
  }
  auto out = detail::new_node<T>({indices.size(), n}, {a.node()});
  for (std::size_t r = 0; r < indices.size(); ++r) {
    std::copy_n(a.value().data() + static_cast<std::size_t>(indices[r]) * n, n,
                out->value.data() + r * n);
  }
  if (out->needs_grad) {
    out->backward = [n, indices](detail::Node<T>& self) {
      auto& g = self.parents[0]->ensure_grad();
      for (std::size_t r = 0; r < indices.size(); ++r) {
        T* dst = g.data() + static_cast<std::size_t>(indices[r]) * n;
        const T* src = self.grad.data() + r * n;
        for (std::size_t c = 0; c < n; ++c) dst[c] += src[c];
      }
    };
  }
  return Tensor<T>::from_node(out);
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

/// Mean over one axis of a 2-d tensor, keeping that axis with extent 1.
template <typename T>
Tensor<T> mean_axis(const Tensor<T>& a, int axis) {
  detail::require_2d(a, "mean_axis");
  if (axis != 0 && axis != 1) throw ShapeError("mean_axis: axis must be 0 or 1");
  const std::size_t m = a.rows(), n = a.cols();
  if ((axis == 0 ? m : n) == 0) throw DegenerateInputError("mean_axis: empty axis");
  std::vector<std::size_t> shape = axis == 0 ? std::vector<std::size_t>{1, n}
                                             : std::vector<std::size_t>{m, 1};
  auto out = detail::new_node<T>(shape, {a.node()});
  if (axis == 0) {
    for (std::size_t c = 0; c < n; ++c) {
      T acc = T(0);
      for (std::size_t r = 0; r < m; ++r) acc += a.value()[r * n + c];
      out->value[c] = acc / static_cast<T>(m);
    }
  } else {
    for (std::size_t r = 0; r < m; ++r) {
      T acc = T(0);
      for (std::size_t c = 0; c < n; ++c) acc += a.value()[r * n + c];
      out->value[r] = acc / static_cast<T>(n);
    }
  }
  if (out->needs_grad) {
    out->backward = [m, n, axis](detail::Node<T>& self) {
      auto& g = self.parents[0]->ensure_grad();
      if (axis == 0) {
        for (std::size_t r = 0; r < m; ++r) {
          for (std::size_t c = 0; c < n; ++c) g[r * n + c] += self.grad[c] / static_cast<T>(m);
        }
      } else {
        for (std::size_t r = 0; r < m; ++r) {
          for (std::size_t c = 0; c < n; ++c) g[r * n + c] += self.grad[r] / static_cast<T>(n);
        }
      }
    };
  }
  return Tensor<T>::from_node(out);
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
  if (a.size() == 0) throw DegenerateInputError("mean_all: empty tensor");
  auto out = detail::new_node<T>({1}, {a.node()});
  T acc = T(0);
  for (T v : a.value()) acc += v;
  out->value[0] = acc / static_cast<T>(a.size());
  if (out->needs_grad) {
    const T inv = T(1) / static_cast<T>(a.size());
    out->backward = [inv](detail::Node<T>& self) {
      auto& g = self.parents[0]->ensure_grad();
      for (auto& v : g) v += self.grad[0] * inv;
    };
  }
  return Tensor<T>::from_node(out);
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
  auto out = detail::new_node<T>({1}, {a.node()});
  T acc = T(0);
  for (T v : a.value()) acc += v;
  out->value[0] = acc;
  if (out->needs_grad) {
    out->backward = [](detail::Node<T>& self) {
      auto& g = self.parents[0]->ensure_grad();
      for (auto& v : g) v += self.grad[0];
    };
  }
  return Tensor<T>::from_node(out);
}

// ---------------------------------------------------------------------------
// Normalization and activations
// ---------------------------------------------------------------------------

/// Row-wise layer normalization of a 2-d tensor with learned scale/offset.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = static_cast<T>(1e-5)) {
  detail::require_2d(x, "layer_norm");
  const std::size_t m = x.rows(), n = x.cols();
  if (n == 0) throw DegenerateInputError("layer_norm: empty axis");
  if (gamma.size() != n || beta.size() != n) {
    throw ShapeError("layer_norm: scale/offset length must equal columns");
  }
  auto out = detail::new_node<T>(x.shape(), {x.node(), gamma.node(), beta.node()});
  std::vector<T> rstd(m), xhat(m * n);
  for (std::size_t r = 0; r < m; ++r) {
    T mean = T(0);
    for (std::size_t c = 0; c < n; ++c) mean += x.value()[r * n + c];
    mean /= static_cast<T>(n);
    T var = T(0);
    for (std::size_t c = 0; c < n; ++c) {
      const T d = x.value()[r * n + c] - mean;
      var += d * d;
    }
    var /= static_cast<T>(n);
    const T rs = T(1) / std::sqrt(var + eps);
    rstd[r] = rs;
    for (std::size_t c = 0; c < n; ++c) {
      const T h = (x.value()[r * n + c] - mean) * rs;
      xhat[r * n + c] = h;
      out->value[r * n + c] = h * gamma.value()[c] + beta.value()[c];
    }
  }
  if (out->needs_grad) {
    out->backward = [m, n, rstd = std::move(rstd), xhat = std::move(xhat)](detail::Node<T>& self) {
      auto& px = *self.parents[0];
      auto& pg = *self.parents[1];
      auto& pb = *self.parents[2];
      if (pg.needs_grad) {
        auto& g = pg.ensure_grad();
        for (std::size_t r = 0; r < m; ++r) {
          for (std::size_t c = 0; c < n; ++c) g[c] += self.grad[r * n + c] * xhat[r * n + c];
        }
      }
      if (pb.needs_grad) {
        auto& g = pb.ensure_grad();
        for (std::size_t r = 0; r < m; ++r) {
          for (std::size_t c = 0; c < n; ++c) g[c] += self.grad[r * n + c];
        }
      }
      if (px.needs_grad) {
        auto& g = px.ensure_grad();
        for (std::size_t r = 0; r < m; ++r) {
          T sum_dh = T(0), sum_dh_h = T(0);
          for (std::size_t c = 0; c < n; ++c) {
            const T dh = self.grad[r * n + c] * pg.value[c];
            sum_dh += dh;
            sum_dh_h += dh * xhat[r * n + c];
          }
          const T inv_n = T(1) / static_cast<T>(n);
          for (std::size_t c = 0; c < n; ++c) {
            const T dh = self.grad[r * n + c] * pg.value[c];
            g[r * n + c] +=
                rstd[r] * (dh - inv_n * sum_dh - xhat[r * n + c] * inv_n * sum_dh_h);
          }
        }
      }
    };
  }
  return Tensor<T>::from_node(out);
}

/// Exact GELU, 0.5 x (1 + erf(x / sqrt(2))).
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  auto out = detail::new_node<T>(x.shape(), {x.node()});
  const T inv_sqrt2 = static_cast<T>(0.70710678118654752440);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = x.value()[i];
    out->value[i] = static_cast<T>(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
  }
  if (out->needs_grad) {
    out->backward = [inv_sqrt2](detail::Node<T>& self) {
      auto& p = *self.parents[0];
      auto& g = p.ensure_grad();
      const T inv_sqrt2pi = static_cast<T>(0.39894228040143267794);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T v = p.value[i];
        const T cdf = static_cast<T>(0.5) * (T(1) + std::erf(v * inv_sqrt2));
        const T pdf = inv_sqrt2pi * std::exp(static_cast<T>(-0.5) * v * v);
        g[i] += self.grad[i] * (cdf + v * pdf);
      }
    };
  }
  return Tensor<T>::from_node(out);
}

/// Row-wise softmax over the last axis of a 2-d tensor.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  detail::require_2d(x, "softmax_rows");
  const std::size_t m = x.rows(), n = x.cols();
  if (n == 0) throw DegenerateInputError("softmax_rows: empty axis");
  auto out = detail::new_node<T>(x.shape(), {x.node()});
  for (std::size_t r = 0; r < m; ++r) {
    T mx = x.value()[r * n];
    for (std::size_t c = 1; c < n; ++c) mx = std::max(mx, x.value()[r * n + c]);
    T denom = T(0);
    for (std::size_t c = 0; c < n; ++c) {
      const T e = std::exp(x.value()[r * n + c] - mx);
      out->value[r * n + c] = e;
      denom += e;
    }
    for (std::size_t c = 0; c < n; ++c) out->value[r * n + c] /= denom;
  }
  if (out->needs_grad) {
    out->backward = [m, n](detail::Node<T>& self) {
      auto& g = self.parents[0]->ensure_grad();
      for (std::size_t r = 0; r < m; ++r) {
        T dot = T(0);
        for (std::size_t c = 0; c < n; ++c) dot += self.grad[r * n + c] * self.value[r * n + c];
        for (std::size_t c = 0; c < n; ++c) {
          g[r * n + c] += self.value[r * n + c] * (self.grad[r * n + c] - dot);
        }
      }
    };
  }
  return Tensor<T>::from_node(out);
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Mean squared error over the elements selected by a 0/1 mask. Gradient is
/// zero on unselected elements; target and mask are treated as constants.
template <typename T>
Tensor<T> mse_masked(const Tensor<T>& pred, const Tensor<T>& target, const Tensor<T>& mask) {
  detail::require_same_shape(pred, target, "mse_masked");
  detail::require_same_shape(pred, mask, "mse_masked");
  std::size_t count = 0;
  for (T v : mask.value()) count += v != T(0) ? 1 : 0;
  if (count == 0) throw DegenerateInputError("mse_masked: mask selects no elements");
  auto out = detail::new_node<T>({1}, {pred.node(), target.node(), mask.node()});
  T acc = T(0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (mask.value()[i] == T(0)) continue;
    const T d = pred.value()[i] - target.value()[i];
    acc += d * d;
  }
  out->value[0] = acc / static_cast<T>(count);
  if (out->needs_grad) {
    out->backward = [count](detail::Node<T>& self) {
      auto& pp = *self.parents[0];
      auto& pt = *self.parents[1];
      auto& pm = *self.parents[2];
      if (!pp.needs_grad) return;
      auto& g = pp.ensure_grad();
      const T c = static_cast<T>(2) / static_cast<T>(count);
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (pm.value[i] == T(0)) continue;
        g[i] += self.grad[0] * c * (pp.value[i] - pt.value[i]);
      }
    };
  }
  return Tensor<T>::from_node(out);
}

/// Numerically stable mean binary cross-entropy on logits; targets constant.
template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, const Tensor<T>& targets) {
  detail::require_same_shape(logits, targets, "bce_with_logits");
  if (logits.size() == 0) throw DegenerateInputError("bce_with_logits: empty input");
  auto out = detail::new_node<T>({1}, {logits.node(), targets.node()});
  T acc = T(0);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const T z = logits.value()[i], y = targets.value()[i];
    acc += std::max(z, T(0)) - z * y + std::log1p(std::exp(-std::abs(z)));
  }
  out->value[0] = acc / static_cast<T>(logits.size());
  if (out->needs_grad) {
    out->backward = [](detail::Node<T>& self) {
      auto& pz = *self.parents[0];
      auto& py = *self.parents[1];
      if (!pz.needs_grad) return;
      auto& g = pz.ensure_grad();
      const T inv = T(1) / static_cast<T>(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T sig = T(1) / (T(1) + std::exp(-pz.value[i]));
        g[i] += self.grad[0] * inv * (sig - py.value[i]);
      }
    };
  }
  return Tensor<T>::from_node(out);
}

}  // namespace fmae
