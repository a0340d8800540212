// SPDX-License-Identifier: Apache-2.0
//
// Dense float64 tensors with a dynamic reverse-mode tape.
//
// Operations record themselves on the innermost live Tape of the calling
// thread. With no live tape (or under NoGradGuard) they produce constants, which
// is how inference runs: parameter values are only read, never written.
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace dmacos::ad {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

namespace detail {
struct Node;
}

class Tape;

class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor zeros(Shape shape);
  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);
  /// Leaf that accumulates gradients across backward passes until zero_grad().
  static Tensor parameter(Shape shape, std::vector<double> values);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t size() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const;
  /// Writable view of a leaf's storage (initialization, optimizer steps, loading).
  std::span<double> mutable_values();
  double item() const;
  double at(std::size_t i) const { return values()[i]; }

  bool requires_grad() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  /// Drops the gradient buffer; has_grad() is false afterwards.
  void zero_grad();

  /// Value copy that does not participate in differentiation.
  Tensor detach() const;
  bool is_same(const Tensor& other) const noexcept { return node_ == other.node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  std::shared_ptr<detail::Node> node_;

  friend class Tape;
  friend struct OpAccess;
};

/// Records operations executed on this thread while alive. Tapes nest; the
/// innermost one receives new nodes. A tape can be differentiated once.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Reverse sweep from a scalar loss recorded on this tape.
  void backward(const Tensor& loss);
  std::size_t size() const noexcept { return nodes_.size(); }

  static Tape* current() noexcept;

 private:
  friend struct OpAccess;

  std::vector<std::shared_ptr<detail::Node>> nodes_;
  Tape* previous_ = nullptr;
  std::uint64_t id_ = 0;
  bool consumed_ = false;
};

/// backward() on the current thread's innermost tape.
void backward(const Tensor& loss);

/// Suspends recording on this thread; results are constants.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Matrix products. Vectors are rank-1, matrices rank-2.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matvec(const Tensor& m, const Tensor& v);    // m[r x c] * v[c] -> [r]
Tensor matvec_t(const Tensor& m, const Tensor& v);  // m[r x c]^T * v[r] -> [c]

// Pointwise.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
/// log(max(x, floor)); the gradient is zero where the floor is active.
Tensor log(const Tensor& x, double floor = 0.0);
Tensor scale(const Tensor& x, double factor);
/// x * s for a one-element tensor s.
Tensor scale_by(const Tensor& x, const Tensor& s);
Tensor one_minus(const Tensor& x);
/// Row-wise bias: m[r x c] + b[c].
Tensor add_row_bias(const Tensor& m, const Tensor& bias);

Tensor softmax(const Tensor& x, std::size_t axis = 0);

// Structural.
Tensor concat(std::span<const Tensor> parts);
Tensor concat(std::initializer_list<Tensor> parts);
/// Stacks equal-length vectors into a [n x d] matrix.
Tensor stack(std::span<const Tensor> rows);
Tensor row(const Tensor& m, std::size_t index);
Tensor element(const Tensor& v, std::size_t index);
/// out[indices[i]] += v[i], out has out_size entries.
Tensor scatter_add(const Tensor& v, std::span<const std::size_t> indices, std::size_t out_size);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Finite-difference verification.

using NamedTensor = std::pair<std::string, Tensor>;

struct GradCheckOptions {
  double eps = 1e-5;
  /// Entries checked per tensor when the tensor is larger than this; half are
  /// drawn uniformly, half from entries whose analytic gradient is nonzero.
  std::size_t entries_per_tensor = 32;
  std::uint64_t seed = 0;
  /// Lower bound of the relative-error denominator max(|analytic|, |numeric|).
  double denominator_floor = 1e-8;
};

struct TensorGradError {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

struct GradCheckReport {
  std::vector<TensorGradError> tensors;
  double max_rel_error() const;
};

/// Compares analytic gradients of `loss_fn` against central differences.
/// `loss_fn` must build its graph from the given parameters each call; it is
/// invoked once under a tape and then repeatedly with recording disabled.
/// Parameter gradients are cleared on return.
GradCheckReport grad_check(const std::function<Tensor()>& loss_fn,
                           std::span<const NamedTensor> params,
                           const GradCheckOptions& options = {});

}  // namespace dmacos::ad
