// SPDX-License-Identifier: Apache-2.0
#include "dmacos/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "dmacos/errors.hpp"

namespace dmacos::ad {

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  // Pushes this node's grad into its inputs.
  std::function<void(Node&)> backward;
  std::uint64_t tape_id = 0;
  std::size_t tape_pos = 0;

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

namespace {

thread_local Tape* t_current_tape = nullptr;
thread_local bool t_grad_enabled = true;
std::atomic<std::uint64_t> g_next_tape_id{1};

}  // namespace

std::string shape_to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// Internal factory shared by all ops.
struct OpAccess {
  static const NodePtr& node(const Tensor& t) {
    if (!t.node_) throw ContractError("operation on an undefined tensor");
    return t.node_;
  }

  static Tensor leaf(Shape shape, std::vector<double> values, bool requires_grad) {
    for (std::size_t d : shape) {
      if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_to_string(shape));
    }
    if (shape_size(shape) != values.size()) {
      throw DimensionError("shape " + shape_to_string(shape) + " does not match " +
                           std::to_string(values.size()) + " values");
    }
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static bool recording() { return t_grad_enabled && t_current_tape != nullptr; }

  // Builds an op result. `make_backward` is only invoked when the result needs
  // a gradient, so ops can skip capturing in inference.
  template <typename MakeBackward>
  static Tensor result(Shape shape, std::vector<double> values, std::initializer_list<const Tensor*> inputs,
                       MakeBackward&& make_backward) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    bool needs = false;
    if (recording()) {
      for (const Tensor* in : inputs) needs = needs || node(*in)->requires_grad;
    }
    if (needs) {
      n->requires_grad = true;
      n->backward = make_backward();
      Tape* tape = t_current_tape;
      n->tape_id = tape->id_;
      n->tape_pos = tape->nodes_.size();
      tape->nodes_.push_back(n);
    }
    return Tensor(std::move(n));
  }

};

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  return OpAccess::leaf(std::move(shape), std::move(values), false);
}

Tensor Tensor::zeros(Shape shape) {
  const std::size_t n = shape_size(shape);
  return OpAccess::leaf(std::move(shape), std::vector<double>(n, 0.0), false);
}

Tensor Tensor::scalar(double value) { return constant({1}, {value}); }

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return constant({n}, std::move(values));
}

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  return OpAccess::leaf(std::move(shape), std::move(values), true);
}

const Shape& Tensor::shape() const { return OpAccess::node(*this)->shape; }
std::size_t Tensor::size() const { return OpAccess::node(*this)->value.size(); }

std::size_t Tensor::rows() const {
  if (rank() != 2) throw DimensionError("rows() needs a matrix, got " + shape_to_string(shape()));
  return shape()[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw DimensionError("cols() needs a matrix, got " + shape_to_string(shape()));
  return shape()[1];
}

std::span<const double> Tensor::values() const { return OpAccess::node(*this)->value; }
std::span<double> Tensor::mutable_values() { return OpAccess::node(*this)->value; }

double Tensor::item() const {
  if (size() != 1) throw DimensionError("item() needs a one-element tensor, got " + shape_to_string(shape()));
  return values()[0];
}

bool Tensor::requires_grad() const { return OpAccess::node(*this)->requires_grad; }
bool Tensor::has_grad() const { return !OpAccess::node(*this)->grad.empty(); }
std::span<const double> Tensor::grad() const { return OpAccess::node(*this)->grad; }
std::span<double> Tensor::mutable_grad() { return OpAccess::node(*this)->ensure_grad(); }

void Tensor::zero_grad() {
  auto& g = OpAccess::node(*this)->grad;
  g.clear();
  g.shrink_to_fit();
}

Tensor Tensor::detach() const { return constant(shape(), OpAccess::node(*this)->value); }

// ---------------------------------------------------------------------------
// Tape

Tape::Tape() : previous_(t_current_tape), id_(g_next_tape_id++) { t_current_tape = this; }

Tape::~Tape() {
  // Break input references so intermediate storage is released even if some
  // result tensors outlive the tape.
  for (auto& n : nodes_) n->backward = nullptr;
  t_current_tape = previous_;
}

Tape* Tape::current() noexcept { return t_current_tape; }

void Tape::backward(const Tensor& loss) {
  const NodePtr& root = OpAccess::node(loss);
  if (root->value.size() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + shape_to_string(root->shape));
  }
  if (consumed_) throw ContractError("backward() called twice on the same tape");
  if (root->tape_id != id_) throw ContractError("loss was not recorded on this tape");
  consumed_ = true;
  root->ensure_grad()[0] += 1.0;
  for (std::size_t i = root->tape_pos + 1; i-- > 0;) {
    Node& n = *nodes_[i];
    if (!n.grad.empty() && n.backward) n.backward(n);
  }
}

void backward(const Tensor& loss) {
  Tape* tape = Tape::current();
  if (!tape) throw ContractError("backward() without a live tape");
  tape->backward(loss);
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

// ---------------------------------------------------------------------------
// Ops

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
  }
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_to_string(t.shape()));
  }
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

template <typename F>
Tensor unary(const Tensor& x, F&& f, std::function<void(Node&, const NodePtr&)> grad_rule) {
  std::vector<double> out(x.size());
  const auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  NodePtr xn = OpAccess::node(x);
  return OpAccess::result(x.shape(), std::move(out), {&x}, [&] {
    return [xn, rule = std::move(grad_rule)](Node& self) {
      if (xn->requires_grad) rule(self, xn);
    };
  });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_to_string(a.shape()) + " x " +
                         shape_to_string(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      const double* brow = &bv[p * n];
      double* orow = &out[i * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  NodePtr an = OpAccess::node(a), bn = OpAccess::node(b);
  return OpAccess::result({m, n}, std::move(out), {&a, &b}, [&] {
    return [an, bn, m, k, n](Node& self) {
      const auto& g = self.grad;
      if (an->requires_grad) {
        auto& ga = an->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bn->value[p * n + j];
            ga[i * k + p] += acc;
          }
      }
      if (bn->requires_grad) {
        auto& gb = bn->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const double aip = an->value[i * k + p];
            for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
          }
      }
    };
  });
}

Tensor matvec(const Tensor& m, const Tensor& v) {
  require_rank(m, 2, "matvec");
  require_rank(v, 1, "matvec");
  const std::size_t r = m.rows(), c = m.cols();
  if (v.size() != c) {
    throw DimensionError("matvec: " + shape_to_string(m.shape()) + " x " + shape_to_string(v.shape()));
  }
  std::vector<double> out(r);
  const double* mv = m.values().data();
  const double* vv = v.values().data();
  for (std::size_t i = 0; i < r; ++i) {
    double acc = 0.0;
    const double* mrow = mv + i * c;
    for (std::size_t j = 0; j < c; ++j) acc += mrow[j] * vv[j];
    out[i] = acc;
  }
  NodePtr mn = OpAccess::node(m), vn = OpAccess::node(v);
  return OpAccess::result({r}, std::move(out), {&m, &v}, [&] {
    return [mn, vn, r, c](Node& self) {
      const double* g = self.grad.data();
      if (mn->requires_grad) {
        double* gm = mn->ensure_grad().data();
        const double* vv = vn->value.data();
        for (std::size_t i = 0; i < r; ++i) {
          const double gi = g[i];
          if (gi == 0.0) continue;
          double* row = gm + i * c;
          for (std::size_t j = 0; j < c; ++j) row[j] += gi * vv[j];
        }
      }
      if (vn->requires_grad) {
        double* gv = vn->ensure_grad().data();
        const double* mv = mn->value.data();
        for (std::size_t i = 0; i < r; ++i) {
          const double gi = g[i];
          if (gi == 0.0) continue;
          const double* row = mv + i * c;
          for (std::size_t j = 0; j < c; ++j) gv[j] += gi * row[j];
        }
      }
    };
  });
}

Tensor matvec_t(const Tensor& m, const Tensor& v) {
  require_rank(m, 2, "matvec_t");
  require_rank(v, 1, "matvec_t");
  const std::size_t r = m.rows(), c = m.cols();
  if (v.size() != r) {
    throw DimensionError("matvec_t: " + shape_to_string(m.shape()) + "^T x " + shape_to_string(v.shape()));
  }
  std::vector<double> out(c, 0.0);
  const double* mv = m.values().data();
  const double* vv = v.values().data();
  for (std::size_t i = 0; i < r; ++i) {
    const double vi = vv[i];
    const double* mrow = mv + i * c;
    for (std::size_t j = 0; j < c; ++j) out[j] += vi * mrow[j];
  }
  NodePtr mn = OpAccess::node(m), vn = OpAccess::node(v);
  return OpAccess::result({c}, std::move(out), {&m, &v}, [&] {
    return [mn, vn, r, c](Node& self) {
      const double* g = self.grad.data();
      if (mn->requires_grad) {
        double* gm = mn->ensure_grad().data();
        const double* vv = vn->value.data();
        for (std::size_t i = 0; i < r; ++i) {
          double* row = gm + i * c;
          for (std::size_t j = 0; j < c; ++j) row[j] += vv[i] * g[j];
        }
      }
      if (vn->requires_grad) {
        double* gv = vn->ensure_grad().data();
        const double* mv = mn->value.data();
        for (std::size_t i = 0; i < r; ++i) {
          const double* row = mv + i * c;
          double acc = 0.0;
          for (std::size_t j = 0; j < c; ++j) acc += row[j] * g[j];
          gv[i] += acc;
        }
      }
    };
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  NodePtr an = OpAccess::node(a), bn = OpAccess::node(b);
  return OpAccess::result(a.shape(), std::move(out), {&a, &b}, [&] {
    return [an, bn](Node& self) {
      for (const NodePtr& in : {an, bn}) {
        if (!in->requires_grad) continue;
        auto& g = in->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
    };
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  NodePtr an = OpAccess::node(a), bn = OpAccess::node(b);
  return OpAccess::result(a.shape(), std::move(out), {&a, &b}, [&] {
    return [an, bn](Node& self) {
      if (an->requires_grad) {
        auto& g = an->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
      if (bn->requires_grad) {
        auto& g = bn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
      }
    };
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  NodePtr an = OpAccess::node(a), bn = OpAccess::node(b);
  return OpAccess::result(a.shape(), std::move(out), {&a, &b}, [&] {
    return [an, bn](Node& self) {
      if (an->requires_grad) {
        auto& g = an->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bn->value[i];
      }
      if (bn->requires_grad) {
        auto& g = bn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * an->value[i];
      }
    };
  });
}

Tensor sigmoid(const Tensor& x) {
  return unary(x, stable_sigmoid, [](Node& self, const NodePtr& xn) {
    auto& g = xn->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double y = self.value[i];
      g[i] += self.grad[i] * y * (1.0 - y);
    }
  });
}

Tensor tanh(const Tensor& x) {
  return unary(x, [](double v) { return std::tanh(v); }, [](Node& self, const NodePtr& xn) {
    auto& g = xn->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double y = self.value[i];
      g[i] += self.grad[i] * (1.0 - y * y);
    }
  });
}

Tensor log(const Tensor& x, double floor) {
  return unary(
      x, [floor](double v) { return std::log(std::max(v, floor)); },
      [floor](Node& self, const NodePtr& xn) {
        auto& g = xn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double v = xn->value[i];
          if (v > floor) g[i] += self.grad[i] / v;
        }
      });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(x, [factor](double v) { return v * factor; }, [factor](Node& self, const NodePtr& xn) {
    auto& g = xn->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

Tensor one_minus(const Tensor& x) {
  return unary(x, [](double v) { return 1.0 - v; }, [](Node& self, const NodePtr& xn) {
    auto& g = xn->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
  });
}

Tensor scale_by(const Tensor& x, const Tensor& s) {
  if (s.size() != 1) throw DimensionError("scale_by: factor must have one element, got " + shape_to_string(s.shape()));
  const double f = s.item();
  std::vector<double> out(x.size());
  const auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * f;
  NodePtr xn = OpAccess::node(x), sn = OpAccess::node(s);
  return OpAccess::result(x.shape(), std::move(out), {&x, &s}, [&] {
    return [xn, sn](Node& self) {
      const double f = sn->value[0];
      if (xn->requires_grad) {
        auto& g = xn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * f;
      }
      if (sn->requires_grad) {
        double acc = 0.0;
        for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * xn->value[i];
        sn->ensure_grad()[0] += acc;
      }
    };
  });
}

Tensor add_row_bias(const Tensor& m, const Tensor& bias) {
  require_rank(m, 2, "add_row_bias");
  require_rank(bias, 1, "add_row_bias");
  const std::size_t r = m.rows(), c = m.cols();
  if (bias.size() != c) {
    throw DimensionError("add_row_bias: " + shape_to_string(m.shape()) + " + " + shape_to_string(bias.shape()));
  }
  std::vector<double> out(m.values().begin(), m.values().end());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += bias.at(j);
  NodePtr mn = OpAccess::node(m), bn = OpAccess::node(bias);
  return OpAccess::result(m.shape(), std::move(out), {&m, &bias}, [&] {
    return [mn, bn, r, c](Node& self) {
      if (mn->requires_grad) {
        auto& g = mn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
      if (bn->requires_grad) {
        auto& g = bn->ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j];
      }
    };
  });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (x.rank() == 0 || x.rank() > 2 || axis >= x.rank()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid for " + shape_to_string(x.shape()));
  }
  // Slices along `axis`: count, length, stride between elements, stride between slices.
  std::size_t count = 1, length = x.shape()[0], stride = 1, slice_stride = 0;
  if (x.rank() == 2) {
    const std::size_t r = x.shape()[0], c = x.shape()[1];
    if (axis == 1) {
      count = r, length = c, stride = 1, slice_stride = c;
    } else {
      count = c, length = r, stride = c, slice_stride = 1;
    }
  }
  const auto xv = x.values();
  std::vector<double> out(x.size());
  for (std::size_t s = 0; s < count; ++s) {
    const std::size_t base = s * slice_stride;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < length; ++i) mx = std::max(mx, xv[base + i * stride]);
    double total = 0.0;
    for (std::size_t i = 0; i < length; ++i) {
      const double e = std::exp(xv[base + i * stride] - mx);
      out[base + i * stride] = e;
      total += e;
    }
    for (std::size_t i = 0; i < length; ++i) out[base + i * stride] /= total;
  }
  NodePtr xn = OpAccess::node(x);
  return OpAccess::result(x.shape(), std::move(out), {&x}, [&] {
    return [xn, count, length, stride, slice_stride](Node& self) {
      auto& g = xn->ensure_grad();
      for (std::size_t s = 0; s < count; ++s) {
        const std::size_t base = s * slice_stride;
        double dot = 0.0;
        for (std::size_t i = 0; i < length; ++i) {
          const std::size_t k = base + i * stride;
          dot += self.grad[k] * self.value[k];
        }
        for (std::size_t i = 0; i < length; ++i) {
          const std::size_t k = base + i * stride;
          g[k] += self.value[k] * (self.grad[k] - dot);
        }
      }
    };
  });
}

Tensor concat(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  std::vector<double> out;
  std::vector<NodePtr> nodes;
  bool any_grad = false;
  for (const Tensor& p : parts) {
    const auto v = p.values();
    out.insert(out.end(), v.begin(), v.end());
    nodes.push_back(OpAccess::node(p));
    any_grad = any_grad || p.requires_grad();
  }
  const std::size_t n = out.size();
  // Route the requires-grad decision through a representative input.
  const Tensor* probe = &parts.front();
  for (const Tensor& p : parts) {
    if (p.requires_grad()) probe = &p;
  }
  return OpAccess::result({n}, std::move(out), {probe}, [&] {
    return [nodes = std::move(nodes)](Node& self) {
      std::size_t offset = 0;
      for (const NodePtr& in : nodes) {
        const std::size_t len = in->value.size();
        if (in->requires_grad) {
          auto& g = in->ensure_grad();
          for (std::size_t i = 0; i < len; ++i) g[i] += self.grad[offset + i];
        }
        offset += len;
      }
    };
  });
}

Tensor concat(std::initializer_list<Tensor> parts) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()));
}

Tensor stack(std::span<const Tensor> rows) {
  if (rows.empty()) throw DimensionError("stack: no rows");
  const std::size_t d = rows.front().size();
  std::vector<double> out;
  out.reserve(rows.size() * d);
  std::vector<NodePtr> nodes;
  const Tensor* probe = &rows.front();
  for (const Tensor& r : rows) {
    require_rank(r, 1, "stack");
    if (r.size() != d) {
      throw DimensionError("stack: row shapes differ, " + shape_to_string(rows.front().shape()) + " vs " +
                           shape_to_string(r.shape()));
    }
    const auto v = r.values();
    out.insert(out.end(), v.begin(), v.end());
    nodes.push_back(OpAccess::node(r));
    if (r.requires_grad()) probe = &r;
  }
  return OpAccess::result({rows.size(), d}, std::move(out), {probe}, [&] {
    return [nodes = std::move(nodes), d](Node& self) {
      for (std::size_t r = 0; r < nodes.size(); ++r) {
        if (!nodes[r]->requires_grad) continue;
        auto& g = nodes[r]->ensure_grad();
        for (std::size_t j = 0; j < d; ++j) g[j] += self.grad[r * d + j];
      }
    };
  });
}

Tensor row(const Tensor& m, std::size_t index) {
  require_rank(m, 2, "row");
  const std::size_t c = m.cols();
  if (index >= m.rows()) {
    throw DimensionError("row: index " + std::to_string(index) + " out of range for " + shape_to_string(m.shape()));
  }
  const auto mv = m.values();
  std::vector<double> out(mv.begin() + static_cast<std::ptrdiff_t>(index * c),
                          mv.begin() + static_cast<std::ptrdiff_t>((index + 1) * c));
  NodePtr mn = OpAccess::node(m);
  return OpAccess::result({c}, std::move(out), {&m}, [&] {
    return [mn, index, c](Node& self) {
      double* g = mn->ensure_grad().data() + index * c;
      for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[j];
    };
  });
}

Tensor element(const Tensor& v, std::size_t index) {
  if (index >= v.size()) {
    throw DimensionError("element: index " + std::to_string(index) + " out of range for " +
                         shape_to_string(v.shape()));
  }
  NodePtr vn = OpAccess::node(v);
  return OpAccess::result({1}, {v.at(index)}, {&v}, [&] {
    return [vn, index](Node& self) { vn->ensure_grad()[index] += self.grad[0]; };
  });
}

Tensor scatter_add(const Tensor& v, std::span<const std::size_t> indices, std::size_t out_size) {
  require_rank(v, 1, "scatter_add");
  if (indices.size() != v.size()) {
    throw DimensionError("scatter_add: " + std::to_string(indices.size()) + " indices for " +
                         shape_to_string(v.shape()));
  }
  std::vector<double> out(out_size, 0.0);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= out_size) {
      throw DimensionError("scatter_add: index " + std::to_string(indices[i]) + " >= " + std::to_string(out_size));
    }
    out[indices[i]] += v.values()[i];
  }
  NodePtr vn = OpAccess::node(v);
  return OpAccess::result({out_size}, std::move(out), {&v}, [&] {
    return [vn, idx = std::vector<std::size_t>(indices.begin(), indices.end())](Node& self) {
      auto& g = vn->ensure_grad();
      for (std::size_t i = 0; i < idx.size(); ++i) g[i] += self.grad[idx[i]];
    };
  });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.values()) total += v;
  NodePtr xn = OpAccess::node(x);
  return OpAccess::result({1}, {total}, {&x}, [&] {
    return [xn](Node& self) {
      auto& g = xn->ensure_grad();
      for (double& gi : g) gi += self.grad[0];
    };
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

// ---------------------------------------------------------------------------
// Gradient checking

double GradCheckReport::max_rel_error() const {
  double worst = 0.0;
  for (const auto& t : tensors) worst = std::max(worst, t.max_rel_error);
  return worst;
}

GradCheckReport grad_check(const std::function<Tensor()>& loss_fn, std::span<const NamedTensor> params,
                           const GradCheckOptions& options) {
  if (!(options.eps > 0.0)) throw ContractError("grad_check: eps must be positive");

  std::vector<Tensor> tensors;
  for (const auto& [name, t] : params) {
    tensors.push_back(t);
    tensors.back().zero_grad();
  }
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    Tensor loss = loss_fn();
    if (!std::isfinite(loss.item())) throw NumericError("grad_check: loss is not finite");
    tape.backward(loss);
  }
  for (Tensor& t : tensors) {
    if (t.has_grad()) {
      analytic.emplace_back(t.grad().begin(), t.grad().end());
    } else {
      analytic.emplace_back(t.size(), 0.0);
    }
    t.zero_grad();
  }

  auto evaluate = [&] {
    NoGradGuard no_grad;
    const double f = loss_fn().item();
    if (!std::isfinite(f)) throw NumericError("grad_check: perturbed loss is not finite");
    return f;
  };

  std::mt19937_64 rng(options.seed);
  GradCheckReport report;
  for (std::size_t p = 0; p < tensors.size(); ++p) {
    Tensor& t = tensors[p];
    const auto& a = analytic[p];
    std::vector<std::size_t> chosen;
    if (t.size() <= options.entries_per_tensor) {
      chosen.resize(t.size());
      std::iota(chosen.begin(), chosen.end(), std::size_t{0});
    } else {
      std::vector<std::size_t> all(t.size());
      std::iota(all.begin(), all.end(), std::size_t{0});
      std::shuffle(all.begin(), all.end(), rng);
      const std::size_t half = options.entries_per_tensor / 2;
      // half uniformly, half from entries with a nonzero analytic gradient, topped up uniformly
      const std::size_t uniform_count = options.entries_per_tensor - half;
      std::vector<bool> taken(all.size(), false);
      for (std::size_t i = 0; i < uniform_count; ++i) {
        chosen.push_back(all[i]);
        taken[i] = true;
      }
      for (std::size_t i = uniform_count; i < all.size() && chosen.size() < options.entries_per_tensor; ++i) {
        if (a[all[i]] != 0.0) {
          chosen.push_back(all[i]);
          taken[i] = true;
        }
      }
      for (std::size_t i = 0; i < all.size() && chosen.size() < options.entries_per_tensor; ++i) {
        if (!taken[i]) chosen.push_back(all[i]);
      }
    }

    TensorGradError entry;
    entry.name = params[p].first;
    auto values = t.mutable_values();
    for (std::size_t idx : chosen) {
      const double original = values[idx];
      values[idx] = original + options.eps;
      const double plus = evaluate();
      values[idx] = original - options.eps;
      const double minus = evaluate();
      values[idx] = original;
      const double numeric = (plus - minus) / (2.0 * options.eps);
      const double denom = std::max({std::abs(a[idx]), std::abs(numeric), options.denominator_floor});
      const double rel = std::abs(a[idx] - numeric) / denom;
      ++entry.checked;
      if (rel > entry.max_rel_error || entry.checked == 1) {
        entry.max_rel_error = std::max(entry.max_rel_error, rel);
        entry.worst_index = idx;
        entry.worst_analytic = a[idx];
        entry.worst_numeric = numeric;
      }
    }
    report.tensors.push_back(std::move(entry));
  }
  return report;
}

}  // namespace dmacos::ad
