#include "amirgrpo/diffmath.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace amirgrpo::diffmath {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

NodePtr make_leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one axis");
  if (shape_size(shape) != values.size()) {
    throw ShapeError("shape " + shape_string(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return node;
}

std::size_t last_axis(const Shape& s) { return s.back(); }
std::size_t leading(const Shape& s) { return shape_size(s) / s.back(); }

void accumulate(const NodePtr& parent, std::size_t i, double g) {
  if (parent->requires_grad) parent->grad_buffer()[i] += g;
}

}  // namespace

// ---------------------------------------------------------------- Tensor

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  return Tensor(make_leaf(std::move(shape), std::move(values), false));
}

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  return Tensor(make_leaf(std::move(shape), std::move(values), true));
}

Tensor Tensor::scalar(double value) { return constant({1}, {value}); }

std::size_t Tensor::rows() const {
  if (shape().size() != 2) throw ShapeError("rows() on non-matrix " + shape_string(shape()));
  return shape()[0];
}

std::size_t Tensor::cols() const {
  if (shape().size() != 2) throw ShapeError("cols() on non-matrix " + shape_string(shape()));
  return shape()[1];
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape()));
  return node_->value[0];
}

std::span<double> Tensor::mutable_values() {
  if (!is_leaf()) throw std::logic_error("only leaf tensors may be mutated");
  return node_->value;
}

std::span<double> Tensor::mutable_grad() {
  if (!is_leaf()) throw std::logic_error("only leaf gradients may be mutated");
  return node_->grad_buffer();
}

void Tensor::zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

// ---------------------------------------------------------------- kernels

namespace kernels {

void row_matmul(std::span<const double> x, std::span<const double> w, std::size_t cols,
                std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    const double* wr = w.data() + i * cols;
    for (std::size_t j = 0; j < cols; ++j) out[j] += xi * wr[j];
  }
}

void log_softmax_row(std::span<const double> x, std::span<double> out) {
  double mx = x[0];
  for (double v : x) mx = std::max(mx, v);
  double s = 0.0;
  for (double v : x) s += std::exp(v - mx);
  const double lse = mx + std::log(s);
  for (std::size_t j = 0; j < x.size(); ++j) out[j] = x[j] - lse;
}

}  // namespace kernels

// ---------------------------------------------------------------- Tape core

Tape Tape::inference() { return Tape(false); }

Tensor Tape::make(Shape shape, std::vector<double> value, std::vector<NodePtr> parents,
                  std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool needs = false;
  for (const auto& p : parents) needs = needs || p->requires_grad;
  if (recording_ && needs) {
    node->requires_grad = true;
    node->tape = this;
    node->parents = std::move(parents);
    node->backward = std::move(backward);
    nodes_.push_back(node);
  }
  return Tensor(node);
}

Tensor Tape::unary(const Tensor& a, std::vector<double> value,
                   std::function<void(Node&)> backward) {
  return make(a.shape(), std::move(value), {a.node_}, std::move(backward));
}

void Tape::backward(const Tensor& root) {
  if (!root.defined() || root.size() != 1) {
    throw ShapeError("backward requires a scalar root");
  }
  if (root.node_->tape != this) {
    throw std::logic_error("backward root is not recorded on this tape");
  }
  for (auto& n : nodes_) n->grad.clear();
  root.node_->grad.assign(1, 1.0);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& n = **it;
    if (n.grad.empty()) continue;  // not reachable from root
    n.backward(n);
  }
}

// ---------------------------------------------------------------- elementwise

namespace {
bool row_broadcast(const Tensor& a, const Tensor& b) {
  return b.shape().size() == 1 && a.shape().size() >= 2 && b.size() == last_axis(a.shape());
}

void check_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                     " vs " + shape_string(b.shape()));
  }
}
}  // namespace

Tensor Tape::add(const Tensor& a, const Tensor& b) {
  if (row_broadcast(a, b)) {
    const std::size_t n = b.size();
    std::vector<double> v(a.values().begin(), a.values().end());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += b[i % n];
    return make(a.shape(), std::move(v), {a.node_, b.node_}, [n](Node& self) {
      const auto& pa = self.parents[0];
      const auto& pb = self.parents[1];
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        accumulate(pa, i, self.grad[i]);
        accumulate(pb, i % n, self.grad[i]);
      }
    });
  }
  check_same(a, b, "add");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] + b[i];
  return make(a.shape(), std::move(v), {a.node_, b.node_}, [](Node& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      accumulate(self.parents[0], i, self.grad[i]);
      accumulate(self.parents[1], i, self.grad[i]);
    }
  });
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) {
  if (row_broadcast(a, b)) {
    const std::size_t n = b.size();
    std::vector<double> v(a.values().begin(), a.values().end());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= b[i % n];
    return make(a.shape(), std::move(v), {a.node_, b.node_}, [n](Node& self) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        accumulate(self.parents[0], i, self.grad[i]);
        accumulate(self.parents[1], i % n, -self.grad[i]);
      }
    });
  }
  check_same(a, b, "sub");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] - b[i];
  return make(a.shape(), std::move(v), {a.node_, b.node_}, [](Node& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      accumulate(self.parents[0], i, self.grad[i]);
      accumulate(self.parents[1], i, -self.grad[i]);
    }
  });
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
  check_same(a, b, "mul");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] * b[i];
  return make(a.shape(), std::move(v), {a.node_, b.node_}, [](Node& self) {
    const auto& pa = self.parents[0];
    const auto& pb = self.parents[1];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      accumulate(pa, i, self.grad[i] * pb->value[i]);
      accumulate(pb, i, self.grad[i] * pa->value[i]);
    }
  });
}

Tensor Tape::scale(const Tensor& a, double factor) {
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] * factor;
  return unary(a, std::move(v), [factor](Node& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      accumulate(self.parents[0], i, self.grad[i] * factor);
  });
}

Tensor Tape::add_scalar(const Tensor& a, double offset) {
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] + offset;
  return unary(a, std::move(v), [](Node& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) accumulate(self.parents[0], i, self.grad[i]);
  });
}

Tensor Tape::exp(const Tensor& a) {
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::exp(a[i]);
  return unary(a, std::move(v), [](Node& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      accumulate(self.parents[0], i, self.grad[i] * self.value[i]);
  });
}

Tensor Tape::log(const Tensor& a) {
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!(a[i] > 0.0)) throw DomainError("log of non-positive value " + std::to_string(a[i]));
    v[i] = std::log(a[i]);
  }
  return unary(a, std::move(v), [](Node& self) {
    const auto& p = self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) accumulate(p, i, self.grad[i] / p->value[i]);
  });
}

Tensor Tape::tanh(const Tensor& a) {
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::tanh(a[i]);
  return unary(a, std::move(v), [](Node& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double y = self.value[i];
      accumulate(self.parents[0], i, self.grad[i] * (1.0 - y * y));
    }
  });
}

namespace {
double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
}  // namespace

Tensor Tape::sigmoid(const Tensor& a) {
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = stable_sigmoid(a[i]);
  return unary(a, std::move(v), [](Node& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double s = self.value[i];
      accumulate(self.parents[0], i, self.grad[i] * s * (1.0 - s));
    }
  });
}

Tensor Tape::log_sigmoid(const Tensor& a) {
  // log sigma(x) = min(x, 0) - log1p(exp(-|x|))
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] = std::min(a[i], 0.0) - std::log1p(std::exp(-std::abs(a[i])));
  }
  return unary(a, std::move(v), [](Node& self) {
    const auto& p = self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      accumulate(p, i, self.grad[i] * stable_sigmoid(-p->value[i]));
    }
  });
}

Tensor Tape::clip(const Tensor& a, double lo, double hi) {
  if (lo > hi) throw std::invalid_argument("clip: lo > hi");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::clamp(a[i], lo, hi);
  return unary(a, std::move(v), [lo, hi](Node& self) {
    const auto& p = self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double x = p->value[i];
      if (x >= lo && x <= hi) accumulate(p, i, self.grad[i]);
    }
  });
}

Tensor Tape::minimum(const Tensor& a, const Tensor& b) {
  check_same(a, b, "minimum");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::min(a[i], b[i]);
  return make(a.shape(), std::move(v), {a.node_, b.node_}, [](Node& self) {
    const auto& pa = self.parents[0];
    const auto& pb = self.parents[1];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (pa->value[i] <= pb->value[i]) {
        accumulate(pa, i, self.grad[i]);
      } else {
        accumulate(pb, i, self.grad[i]);
      }
    }
  });
}

// ---------------------------------------------------------------- matrix ops

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0]) {
    throw ShapeError("matmul: incompatible shapes " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<double> v(m * n);
  for (std::size_t r = 0; r < m; ++r) {
    kernels::row_matmul(a.values().subspan(r * k, k), b.values(), n,
                        std::span<double>(v).subspan(r * n, n));
  }
  return make({m, n}, std::move(v), {a.node_, b.node_}, [m, k, n](Node& self) {
    const auto& pa = self.parents[0];
    const auto& pb = self.parents[1];
    const double* g = self.grad.data();
    if (pa->requires_grad) {
      auto& ga = pa->grad_buffer();
      const double* bv = pb->value.data();
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t i = 0; i < k; ++i) {
          double s = 0.0;
          const double* br = bv + i * n;
          const double* gr = g + r * n;
          for (std::size_t j = 0; j < n; ++j) s += gr[j] * br[j];
          ga[r * k + i] += s;
        }
    }
    if (pb->requires_grad) {
      auto& gb = pb->grad_buffer();
      const double* av = pa->value.data();
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t i = 0; i < k; ++i) {
          const double x = av[r * k + i];
          if (x == 0.0) continue;
          double* out = gb.data() + i * n;
          const double* gr = g + r * n;
          for (std::size_t j = 0; j < n; ++j) out[j] += x * gr[j];
        }
    }
  });
}

Tensor Tape::softmax(const Tensor& a) {
  const std::size_t n = last_axis(a.shape()), m = leading(a.shape());
  std::vector<double> v(a.size());
  for (std::size_t r = 0; r < m; ++r) {
    auto row = std::span<double>(v).subspan(r * n, n);
    kernels::log_softmax_row(a.values().subspan(r * n, n), row);
    for (double& x : row) x = std::exp(x);
  }
  return unary(a, std::move(v), [m, n](Node& self) {
    for (std::size_t r = 0; r < m; ++r) {
      const double* y = self.value.data() + r * n;
      const double* g = self.grad.data() + r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < n; ++j) accumulate(self.parents[0], r * n + j, y[j] * (g[j] - dot));
    }
  });
}

Tensor Tape::log_softmax(const Tensor& a) {
  const std::size_t n = last_axis(a.shape()), m = leading(a.shape());
  std::vector<double> v(a.size());
  for (std::size_t r = 0; r < m; ++r) {
    kernels::log_softmax_row(a.values().subspan(r * n, n), std::span<double>(v).subspan(r * n, n));
  }
  return unary(a, std::move(v), [m, n](Node& self) {
    const auto& p = self.parents[0];
    if (!p->requires_grad) return;
    auto& gp = p->grad_buffer();
    for (std::size_t r = 0; r < m; ++r) {
      const double* y = self.value.data() + r * n;
      const double* g = self.grad.data() + r * n;
      double total = 0.0;
      for (std::size_t j = 0; j < n; ++j) total += g[j];
      if (total == 0.0) {
        bool any = false;
        for (std::size_t j = 0; j < n && !any; ++j) any = g[j] != 0.0;
        if (!any) continue;
      }
      for (std::size_t j = 0; j < n; ++j) gp[r * n + j] += g[j] - std::exp(y[j]) * total;
    }
  });
}

Tensor Tape::causal_mean(const Tensor& a) {
  if (a.shape().size() != 2) throw ShapeError("causal_mean expects a matrix");
  const std::size_t t = a.shape()[0], d = a.shape()[1];
  std::vector<double> v(a.size());
  std::vector<double> running(d, 0.0);
  for (std::size_t r = 0; r < t; ++r) {
    for (std::size_t j = 0; j < d; ++j) {
      running[j] += a[r * d + j];
      v[r * d + j] = running[j] / static_cast<double>(r + 1);
    }
  }
  return unary(a, std::move(v), [t, d](Node& self) {
    const auto& p = self.parents[0];
    if (!p->requires_grad) return;
    auto& gp = p->grad_buffer();
    std::vector<double> suffix(d, 0.0);
    for (std::size_t r = t; r-- > 0;) {
      for (std::size_t j = 0; j < d; ++j) {
        suffix[j] += self.grad[r * d + j] / static_cast<double>(r + 1);
        gp[r * d + j] += suffix[j];
      }
    }
  });
}

Tensor Tape::gather_rows(const Tensor& table, std::span<const int> ids) {
  if (table.shape().size() != 2) throw ShapeError("gather_rows expects a matrix table");
  const std::size_t rows = table.shape()[0], d = table.shape()[1];
  std::vector<int> idx(ids.begin(), ids.end());
  std::vector<double> v(idx.size() * d);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || static_cast<std::size_t>(idx[r]) >= rows) {
      throw std::out_of_range("gather_rows: index " + std::to_string(idx[r]) + " outside table of " +
                              std::to_string(rows) + " rows");
    }
    std::copy_n(table.values().begin() + static_cast<std::ptrdiff_t>(idx[r] * d), d,
                v.begin() + static_cast<std::ptrdiff_t>(r * d));
  }
  const std::size_t n = idx.size();
  return make({n, d}, std::move(v), {table.node_},
              [idx = std::move(idx), d](Node& self) {
                const auto& p = self.parents[0];
                auto& gp = p->grad_buffer();
                for (std::size_t r = 0; r < idx.size(); ++r) {
                  const std::size_t base = static_cast<std::size_t>(idx[r]) * d;
                  for (std::size_t j = 0; j < d; ++j) gp[base + j] += self.grad[r * d + j];
                }
              });
}

Tensor Tape::gather(const Tensor& a, std::span<const std::size_t> rows,
                    std::span<const std::size_t> cols) {
  if (a.shape().size() != 2) throw ShapeError("gather expects a matrix");
  if (rows.size() != cols.size()) throw ShapeError("gather: rows/cols length mismatch");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  std::vector<std::size_t> flat(rows.size());
  std::vector<double> v(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] >= m || cols[k] >= n) throw std::out_of_range("gather: index out of range");
    flat[k] = rows[k] * n + cols[k];
    v[k] = a[flat[k]];
  }
  return make({rows.size()}, std::move(v), {a.node_}, [flat = std::move(flat)](Node& self) {
    for (std::size_t k = 0; k < flat.size(); ++k) accumulate(self.parents[0], flat[k], self.grad[k]);
  });
}

Tensor Tape::stack(std::span<const Tensor> scalars) {
  if (scalars.empty()) throw ShapeError("stack of zero tensors");
  std::vector<double> v;
  std::vector<NodePtr> parents;
  v.reserve(scalars.size());
  for (const auto& s : scalars) {
    v.push_back(s.item());
    parents.push_back(s.node_);
  }
  const std::size_t n = v.size();
  return make({n}, std::move(v), std::move(parents), [](Node& self) {
    for (std::size_t k = 0; k < self.grad.size(); ++k) accumulate(self.parents[k], 0, self.grad[k]);
  });
}

Tensor Tape::sum(const Tensor& a) {
  double s = 0.0;
  for (double x : a.values()) s += x;
  return make({1}, {s}, {a.node_}, [](Node& self) {
    const auto& p = self.parents[0];
    if (!p->requires_grad) return;
    auto& gp = p->grad_buffer();
    for (double& g : gp) g += self.grad[0];
  });
}

Tensor Tape::mean(const Tensor& a) {
  double s = 0.0;
  for (double x : a.values()) s += x;
  const double n = static_cast<double>(a.size());
  return make({1}, {s / n}, {a.node_}, [n](Node& self) {
    const auto& p = self.parents[0];
    if (!p->requires_grad) return;
    auto& gp = p->grad_buffer();
    const double g = self.grad[0] / n;
    for (double& x : gp) x += g;
  });
}

}  // namespace amirgrpo::diffmath
