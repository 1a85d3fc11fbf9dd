#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

// Dense 64-bit tensors with tape-based reverse-mode differentiation.
//
// A Tensor is a cheap handle onto an immutable value node. Parameters are
// leaves that own a gradient accumulator; every other node is produced by a
// Tape method and lives on that tape until the tape is destroyed.

namespace amirgrpo::diffmath {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class Tape;

namespace detail {
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until something is accumulated
  bool requires_grad = false;
  const Tape* tape = nullptr;  // null for leaves and constants
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};
}  // namespace detail

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor parameter(Shape shape, std::vector<double> values);
  static Tensor scalar(double value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t size() const { return node_->value.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const { return node_->value; }
  double operator[](std::size_t i) const { return node_->value[i]; }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->tape == nullptr; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }

  // Leaf-only mutation, used by optimizers and checkpoint loading.
  std::span<double> mutable_values();
  std::span<double> mutable_grad();
  void zero_grad();

  const detail::Node* node() const { return node_.get(); }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
  friend class Tape;
};

// Records primitive operations in creation order. An inference tape computes
// the same values without recording anything.
class Tape {
 public:
  Tape() = default;
  static Tape inference();

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) noexcept = default;
  Tape& operator=(Tape&&) noexcept = default;

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

  /// Accumulates d(root)/d(leaf) into every reachable leaf gradient.
  /// Intermediate gradients are rebuilt on each call, so repeated calls
  /// add the same contribution to the leaves again.
  void backward(const Tensor& root);

  // Elementwise. `add` and `sub` also accept a rank-1 right operand whose
  // length matches the last axis of the left operand (row broadcast).
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor scale(const Tensor& a, double factor);
  Tensor add_scalar(const Tensor& a, double offset);
  Tensor exp(const Tensor& a);
  Tensor log(const Tensor& a);
  Tensor tanh(const Tensor& a);
  Tensor sigmoid(const Tensor& a);
  Tensor log_sigmoid(const Tensor& a);
  // Subgradient 1 inside [lo, hi] (boundaries included), 0 outside.
  Tensor clip(const Tensor& a, double lo, double hi);
  // Gradient flows to `a` on ties.
  Tensor minimum(const Tensor& a, const Tensor& b);

  Tensor matmul(const Tensor& a, const Tensor& b);
  Tensor softmax(const Tensor& a);
  Tensor log_softmax(const Tensor& a);
  // Row t of the result is the mean of rows 0..t of `a`.
  Tensor causal_mean(const Tensor& a);

  Tensor gather_rows(const Tensor& table, std::span<const int> ids);
  // Picks a(rows[k], cols[k]) for each k into a rank-1 tensor.
  Tensor gather(const Tensor& a, std::span<const std::size_t> rows,
                std::span<const std::size_t> cols);
  Tensor stack(std::span<const Tensor> scalars);

  Tensor sum(const Tensor& a);
  Tensor mean(const Tensor& a);

 private:
  explicit Tape(bool recording) : recording_(recording) {}

  Tensor make(Shape shape, std::vector<double> value,
              std::vector<std::shared_ptr<detail::Node>> parents,
              std::function<void(detail::Node&)> backward);
  Tensor unary(const Tensor& a, std::vector<double> value,
               std::function<void(detail::Node&)> backward);

  bool recording_ = true;
  std::vector<std::shared_ptr<detail::Node>> nodes_;
};

// Row kernels shared by the tape and by incremental decoders, so both paths
// produce bit-identical values.
namespace kernels {
// out[j] = sum_i x[i] * w[i, j], accumulated in increasing i.
void row_matmul(std::span<const double> x, std::span<const double> w,
                std::size_t cols, std::span<double> out);
// out = x - logsumexp(x)
void log_softmax_row(std::span<const double> x, std::span<double> out);
}  // namespace kernels

}  // namespace amirgrpo::diffmath
