#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mrt/error.hpp"
#include "mrt/param_store.hpp"
#include "mrt/tensor.hpp"

namespace mrt {

/// Handle to a node recorded on a Tape.
struct Var {
  std::int32_t id = -1;
  bool valid() const noexcept { return id >= 0; }
  friend bool operator==(Var, Var) = default;
};

enum class Primitive : std::uint8_t {
  kConstant,
  kParam,
  kMatMul,    // a · b
  kMatMulNT,  // a · bᵀ
  kAdd,       // a + b, b may be a single row broadcast over a's rows
  kSub,
  kMul,       // elementwise
  kTanh,
  kSigmoid,
  kSoftmax,     // per row
  kLogSoftmax,  // per row
  kEmbedding,   // row `index` of a table
  kConcat,      // along `axis`
  kSlice,       // columns [begin, end)
  kRow,
  kPick,  // single element (row, col)
  kScale,
  kSum,
  kMean,
  kLog,
};

inline std::string_view primitive_name(Primitive p) {
  switch (p) {
    case Primitive::kConstant: return "constant";
    case Primitive::kParam: return "param";
    case Primitive::kMatMul: return "matmul";
    case Primitive::kMatMulNT: return "matmul_nt";
    case Primitive::kAdd: return "add";
    case Primitive::kSub: return "sub";
    case Primitive::kMul: return "mul";
    case Primitive::kTanh: return "tanh";
    case Primitive::kSigmoid: return "sigmoid";
    case Primitive::kSoftmax: return "softmax";
    case Primitive::kLogSoftmax: return "log_softmax";
    case Primitive::kEmbedding: return "embedding";
    case Primitive::kConcat: return "concat";
    case Primitive::kSlice: return "slice";
    case Primitive::kRow: return "row";
    case Primitive::kPick: return "pick";
    case Primitive::kScale: return "scale";
    case Primitive::kSum: return "sum";
    case Primitive::kMean: return "mean";
    case Primitive::kLog: return "log";
  }
  return "?";
}

/// Integer/real attributes carried by primitives that need them.
struct Attrs {
  std::size_t a = 0;  // embedding index, slice begin, row, concat axis
  std::size_t b = 0;  // slice end, column
  double scale = 1.0;
};

/// Recorded computation for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so inputs always precede their
/// consumers. Parameter leaves reference the bound ParamStore without
/// copying it; the store must outlive the tape and stay unmodified while
/// the tape is in use. A tape is single-owner.
class Tape {
 public:
  Tape() { nodes_.reserve(256); }

  std::size_t size() const noexcept { return nodes_.size(); }

  /// Position that `rewind` can later truncate back to.
  std::size_t mark() const noexcept { return nodes_.size(); }

  void rewind(std::size_t mark) {
    if (mark > nodes_.size()) throw Error("tape: rewind past the end");
    for (std::size_t i = mark; i < nodes_.size(); ++i) {
      if (nodes_[i].op == Primitive::kParam) param_nodes_[nodes_[i].attrs.a] = -1;
    }
    nodes_.resize(mark);
  }

  Var constant(Tensor value) {
    Node n;
    n.op = Primitive::kConstant;
    n.value = std::move(value);
    return push(std::move(n));
  }

  Var param(const ParamStore& store, std::size_t id) {
    if (store_ == nullptr) {
      store_ = &store;
      param_nodes_.assign(store.count(), -1);
    } else if (store_ != &store) {
      throw Error("tape: parameters from two different stores");
    }
    if (param_nodes_.at(id) >= 0) return Var{param_nodes_[id]};
    Node n;
    n.op = Primitive::kParam;
    n.attrs.a = id;
    n.external = &store.tensor(id);
    n.requires_grad = true;
    const Var v = push(std::move(n));
    param_nodes_[id] = v.id;
    return v;
  }

  const Tensor& value(Var v) const { return node_value(nodes_.at(static_cast<std::size_t>(v.id))); }

  Var matmul(Var a, Var b) { return forward(Primitive::kMatMul, {a, b}); }
  Var matmul_nt(Var a, Var b) { return forward(Primitive::kMatMulNT, {a, b}); }
  Var add(Var a, Var b) { return forward(Primitive::kAdd, {a, b}); }
  Var sub(Var a, Var b) { return forward(Primitive::kSub, {a, b}); }
  Var mul(Var a, Var b) { return forward(Primitive::kMul, {a, b}); }
  Var tanh(Var a) { return forward(Primitive::kTanh, {a}); }
  Var sigmoid(Var a) { return forward(Primitive::kSigmoid, {a}); }
  Var softmax(Var a) { return forward(Primitive::kSoftmax, {a}); }
  Var log_softmax(Var a) { return forward(Primitive::kLogSoftmax, {a}); }
  Var embedding(Var table, std::size_t index) { return forward(Primitive::kEmbedding, {table}, {.a = index}); }
  Var concat(std::span<const Var> parts, std::size_t axis = 1) {
    return forward(Primitive::kConcat, parts, {.a = axis});
  }
  Var concat(std::initializer_list<Var> parts, std::size_t axis = 1) {
    return concat(std::span<const Var>(parts.begin(), parts.size()), axis);
  }
  Var slice(Var a, std::size_t begin, std::size_t end) {
    return forward(Primitive::kSlice, {a}, {.a = begin, .b = end});
  }
  Var row(Var a, std::size_t r) { return forward(Primitive::kRow, {a}, {.a = r}); }
  Var pick(Var a, std::size_t r, std::size_t c) { return forward(Primitive::kPick, {a}, {.a = r, .b = c}); }
  Var scale(Var a, double s) { return forward(Primitive::kScale, {a}, {.scale = s}); }
  Var sum(Var a) { return forward(Primitive::kSum, {a}); }
  Var mean(Var a) { return forward(Primitive::kMean, {a}); }
  Var log(Var a) { return forward(Primitive::kLog, {a}); }

  Var forward(Primitive op, std::initializer_list<Var> inputs, Attrs attrs = {}) {
    return forward(op, std::span<const Var>(inputs.begin(), inputs.size()), attrs);
  }

  /// Evaluates `op` on `inputs` and records it.
  Var forward(Primitive op, std::span<const Var> inputs, Attrs attrs = {}) {
    if (op == Primitive::kConstant || op == Primitive::kParam) {
      throw Error("tape: leaves are created with constant() or param()");
    }
    Node n;
    n.op = op;
    n.attrs = attrs;
    n.inputs.reserve(inputs.size());
    for (Var v : inputs) {
      if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
        throw Error(std::string("tape: ") + std::string(primitive_name(op)) + " given a stale or invalid input");
      }
      n.inputs.push_back(v.id);
      n.requires_grad = n.requires_grad || nodes_[static_cast<std::size_t>(v.id)].requires_grad;
    }
    n.value = evaluate(op, n.inputs, attrs);
    return push(std::move(n));
  }

  /// Propagates adjoints from the scalar `seed` and returns d(seed)/dθ in the
  /// bound ParamStore's linear order (empty when no parameter was used).
  std::vector<double> backward(Var seed) {
    const Tensor& sv = value(seed);
    if (sv.size() != 1) throw ShapeError("backward: seed has shape " + shape_string(sv.shape()) + ", expected [1,1]");
    std::vector<double> grad(store_ ? store_->size() : 0, 0.0);
    for (auto& n : nodes_) n.adjoint = Tensor{};
    auto& s = nodes_[static_cast<std::size_t>(seed.id)];
    if (s.op == Primitive::kParam) {
      grad[store_->offset(s.attrs.a)] += 1.0;
      return grad;
    }
    s.adjoint = Tensor(sv.shape(), 1.0);
    for (std::int32_t i = seed.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.adjoint.empty() || !n.requires_grad) continue;
      propagate(n, grad);
    }
    return grad;
  }

  /// Adjoint of a non-parameter node after `backward` (zeros if none reached it).
  Tensor adjoint(Var v) const {
    const Node& n = nodes_.at(static_cast<std::size_t>(v.id));
    if (!n.adjoint.empty()) return n.adjoint;
    return Tensor(node_value(n).shape(), 0.0);
  }

 private:
  struct Node {
    Primitive op = Primitive::kConstant;
    std::vector<std::int32_t> inputs;
    Attrs attrs;
    Tensor value;
    Tensor adjoint;
    const Tensor* external = nullptr;
    bool requires_grad = false;
  };

  Var push(Node n) {
    if (nodes_.size() >= static_cast<std::size_t>(std::numeric_limits<std::int32_t>::max())) {
      throw Error("tape: node limit reached");
    }
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
  }

  static const Tensor& node_value(const Node& n) { return n.external ? *n.external : n.value; }
  const Tensor& in(const std::vector<std::int32_t>& ids, std::size_t k) const {
    return node_value(nodes_[static_cast<std::size_t>(ids[k])]);
  }

  [[noreturn]] static void shape_error(Primitive op, const Tensor& a, const Tensor& b) {
    throw ShapeError(std::string(primitive_name(op)) + ": incompatible shapes " + shape_string(a.shape()) +
                     " and " + shape_string(b.shape()));
  }
  [[noreturn]] static void shape_error(Primitive op, const Tensor& a, const std::string& why) {
    throw ShapeError(std::string(primitive_name(op)) + ": shape " + shape_string(a.shape()) + " " + why);
  }
  static void require_matrix(Primitive op, const Tensor& a) {
    if (a.rank() != 2) shape_error(op, a, "is not rank 2");
  }

  Tensor evaluate(Primitive op, const std::vector<std::int32_t>& ids, const Attrs& at) const {
    const std::size_t arity = ids.size();
    auto expect = [&](std::size_t n) {
      if (arity != n) {
        throw ShapeError(std::string(primitive_name(op)) + ": expected " + std::to_string(n) + " inputs, got " +
                         std::to_string(arity));
      }
    };
    switch (op) {
      case Primitive::kMatMul: {
        expect(2);
        const Tensor& a = in(ids, 0);
        const Tensor& b = in(ids, 1);
        require_matrix(op, a);
        require_matrix(op, b);
        if (a.cols() != b.rows()) shape_error(op, a, b);
        const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
        Tensor c = Tensor::matrix(m, n);
        for (std::size_t i = 0; i < m; ++i) {
          double* crow = &c(i, 0);
          for (std::size_t p = 0; p < k; ++p) {
            const double av = a(i, p);
            if (av == 0.0) continue;
            const double* brow = &b(p, 0);
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
          }
        }
        return c;
      }
      case Primitive::kMatMulNT: {
        expect(2);
        const Tensor& a = in(ids, 0);
        const Tensor& b = in(ids, 1);
        require_matrix(op, a);
        require_matrix(op, b);
        if (a.cols() != b.cols()) shape_error(op, a, b);
        const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
        Tensor c = Tensor::matrix(m, n);
        for (std::size_t i = 0; i < m; ++i) {
          const double* arow = &a(i, 0);
          for (std::size_t j = 0; j < n; ++j) {
            const double* brow = &b(j, 0);
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
            c(i, j) = s;
          }
        }
        return c;
      }
      case Primitive::kAdd:
      case Primitive::kSub: {
        expect(2);
        const Tensor& a = in(ids, 0);
        const Tensor& b = in(ids, 1);
        require_matrix(op, a);
        require_matrix(op, b);
        const double sign = op == Primitive::kAdd ? 1.0 : -1.0;
        Tensor c = a;
        if (a.shape() == b.shape()) {
          for (std::size_t i = 0; i < c.size(); ++i) c[i] += sign * b[i];
        } else if (b.rows() == 1 && b.cols() == a.cols()) {
          for (std::size_t i = 0; i < a.rows(); ++i)
            for (std::size_t j = 0; j < a.cols(); ++j) c(i, j) += sign * b[j];
        } else {
          shape_error(op, a, b);
        }
        return c;
      }
      case Primitive::kMul: {
        expect(2);
        const Tensor& a = in(ids, 0);
        const Tensor& b = in(ids, 1);
        if (a.shape() != b.shape()) shape_error(op, a, b);
        Tensor c = a;
        for (std::size_t i = 0; i < c.size(); ++i) c[i] *= b[i];
        return c;
      }
      case Primitive::kTanh: {
        expect(1);
        Tensor c = in(ids, 0);
        for (double& v : c.storage()) v = std::tanh(v);
        return c;
      }
      case Primitive::kSigmoid: {
        expect(1);
        Tensor c = in(ids, 0);
        for (double& v : c.storage()) {
          if (v >= 0) {
            v = 1.0 / (1.0 + std::exp(-v));
          } else {
            const double e = std::exp(v);
            v = e / (1.0 + e);
          }
        }
        return c;
      }
      case Primitive::kSoftmax:
      case Primitive::kLogSoftmax: {
        expect(1);
        const Tensor& a = in(ids, 0);
        require_matrix(op, a);
        if (a.cols() == 0) shape_error(op, a, "has no columns");
        Tensor c = a;
        for (std::size_t i = 0; i < a.rows(); ++i) {
          double* r = &c(i, 0);
          const double mx = *std::max_element(r, r + a.cols());
          double z = 0.0;
          for (std::size_t j = 0; j < a.cols(); ++j) z += std::exp(r[j] - mx);
          if (op == Primitive::kSoftmax) {
            for (std::size_t j = 0; j < a.cols(); ++j) r[j] = std::exp(r[j] - mx) / z;
          } else {
            const double lse = mx + std::log(z);
            for (std::size_t j = 0; j < a.cols(); ++j) r[j] -= lse;
          }
        }
        return c;
      }
      case Primitive::kEmbedding: {
        expect(1);
        const Tensor& t = in(ids, 0);
        require_matrix(op, t);
        if (at.a >= t.rows()) shape_error(op, t, "has no row " + std::to_string(at.a));
        Tensor c = Tensor::matrix(1, t.cols());
        std::copy_n(&t(at.a, 0), t.cols(), c.storage().begin());
        return c;
      }
      case Primitive::kRow: {
        expect(1);
        const Tensor& t = in(ids, 0);
        require_matrix(op, t);
        if (at.a >= t.rows()) shape_error(op, t, "has no row " + std::to_string(at.a));
        Tensor c = Tensor::matrix(1, t.cols());
        std::copy_n(&t(at.a, 0), t.cols(), c.storage().begin());
        return c;
      }
      case Primitive::kConcat: {
        if (arity == 0) throw ShapeError("concat: no inputs");
        const Tensor& first = in(ids, 0);
        require_matrix(op, first);
        if (at.a > 1) throw ShapeError("concat: axis " + std::to_string(at.a) + " out of range");
        std::size_t rows = 0, cols = 0;
        for (std::size_t k = 0; k < arity; ++k) {
          const Tensor& t = in(ids, k);
          require_matrix(op, t);
          if (at.a == 1) {
            if (t.rows() != first.rows()) shape_error(op, first, t);
            cols += t.cols();
          } else {
            if (t.cols() != first.cols()) shape_error(op, first, t);
            rows += t.rows();
          }
        }
        if (at.a == 1) {
          Tensor c = Tensor::matrix(first.rows(), cols);
          std::size_t off = 0;
          for (std::size_t k = 0; k < arity; ++k) {
            const Tensor& t = in(ids, k);
            for (std::size_t i = 0; i < t.rows(); ++i) std::copy_n(&t(i, 0), t.cols(), &c(i, off));
            off += t.cols();
          }
          return c;
        }
        Tensor c = Tensor::matrix(rows, first.cols());
        std::size_t off = 0;
        for (std::size_t k = 0; k < arity; ++k) {
          const Tensor& t = in(ids, k);
          std::copy(t.storage().begin(), t.storage().end(), c.storage().begin() + static_cast<std::ptrdiff_t>(off));
          off += t.size();
        }
        return c;
      }
      case Primitive::kSlice: {
        expect(1);
        const Tensor& a = in(ids, 0);
        require_matrix(op, a);
        if (at.a >= at.b || at.b > a.cols()) {
          shape_error(op, a, "cannot be sliced to columns [" + std::to_string(at.a) + "," + std::to_string(at.b) + ")");
        }
        Tensor c = Tensor::matrix(a.rows(), at.b - at.a);
        for (std::size_t i = 0; i < a.rows(); ++i) std::copy_n(&a(i, at.a), at.b - at.a, &c(i, 0));
        return c;
      }
      case Primitive::kPick: {
        expect(1);
        const Tensor& a = in(ids, 0);
        require_matrix(op, a);
        if (at.a >= a.rows() || at.b >= a.cols()) {
          shape_error(op, a, "has no element (" + std::to_string(at.a) + "," + std::to_string(at.b) + ")");
        }
        return Tensor::scalar(a(at.a, at.b));
      }
      case Primitive::kScale: {
        expect(1);
        Tensor c = in(ids, 0);
        for (double& v : c.storage()) v *= at.scale;
        return c;
      }
      case Primitive::kSum:
      case Primitive::kMean: {
        expect(1);
        const Tensor& a = in(ids, 0);
        if (a.empty()) shape_error(op, a, "is empty");
        double s = 0.0;
        for (double v : a.storage()) s += v;
        if (op == Primitive::kMean) s /= static_cast<double>(a.size());
        return Tensor::scalar(s);
      }
      case Primitive::kLog: {
        expect(1);
        Tensor c = in(ids, 0);
        for (double& v : c.storage()) {
          if (!(v > 0.0)) throw NumericError("log: non-positive input " + std::to_string(v));
          v = std::log(v);
        }
        return c;
      }
      case Primitive::kConstant:
      case Primitive::kParam:
        break;
    }
    throw Error("tape: unknown primitive");
  }

  /// Adjoint buffer of input `id`: a view into `grad` for parameters.
  std::span<double> target(std::int32_t id, std::vector<double>& grad) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.op == Primitive::kParam) {
      const std::size_t off = store_->offset(n.attrs.a);
      return std::span<double>(grad).subspan(off, n.external->size());
    }
    if (n.adjoint.empty()) n.adjoint = Tensor(node_value(n).shape(), 0.0);
    return n.adjoint.values();
  }

  bool wants(std::int32_t id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

  void propagate(const Node& n, std::vector<double>& grad) {
    const Tensor& dy = n.adjoint;
    const auto& ids = n.inputs;
    switch (n.op) {
      case Primitive::kMatMul: {
        const Tensor& a = in(ids, 0);
        const Tensor& b = in(ids, 1);
        const std::size_t m = a.rows(), k = a.cols(), cols = b.cols();
        if (wants(ids[0])) {
          auto da = target(ids[0], grad);
          for (std::size_t i = 0; i < m; ++i) {
            const double* drow = &dy(i, 0);
            for (std::size_t p = 0; p < k; ++p) {
              const double* brow = &b(p, 0);
              double s = 0.0;
              for (std::size_t j = 0; j < cols; ++j) s += drow[j] * brow[j];
              da[i * k + p] += s;
            }
          }
        }
        if (wants(ids[1])) {
          auto db = target(ids[1], grad);
          for (std::size_t i = 0; i < m; ++i) {
            const double* drow = &dy(i, 0);
            for (std::size_t p = 0; p < k; ++p) {
              const double av = a(i, p);
              if (av == 0.0) continue;
              double* brow = &db[p * cols];
              for (std::size_t j = 0; j < cols; ++j) brow[j] += av * drow[j];
            }
          }
        }
        return;
      }
      case Primitive::kMatMulNT: {
        const Tensor& a = in(ids, 0);
        const Tensor& b = in(ids, 1);
        const std::size_t m = a.rows(), k = a.cols(), cols = b.rows();
        if (wants(ids[0])) {
          auto da = target(ids[0], grad);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < cols; ++j) {
              const double d = dy(i, j);
              if (d == 0.0) continue;
              for (std::size_t p = 0; p < k; ++p) da[i * k + p] += d * b(j, p);
            }
        }
        if (wants(ids[1])) {
          auto db = target(ids[1], grad);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < cols; ++j) {
              const double d = dy(i, j);
              if (d == 0.0) continue;
              for (std::size_t p = 0; p < k; ++p) db[j * k + p] += d * a(i, p);
            }
        }
        return;
      }
      case Primitive::kAdd:
      case Primitive::kSub: {
        const double sign = n.op == Primitive::kAdd ? 1.0 : -1.0;
        if (wants(ids[0])) {
          auto da = target(ids[0], grad);
          for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
        }
        if (wants(ids[1])) {
          const Tensor& b = in(ids, 1);
          auto db = target(ids[1], grad);
          if (b.size() == dy.size()) {
            for (std::size_t i = 0; i < dy.size(); ++i) db[i] += sign * dy[i];
          } else {
            for (std::size_t i = 0; i < dy.rows(); ++i)
              for (std::size_t j = 0; j < dy.cols(); ++j) db[j] += sign * dy(i, j);
          }
        }
        return;
      }
      case Primitive::kMul: {
        const Tensor& a = in(ids, 0);
        const Tensor& b = in(ids, 1);
        if (wants(ids[0])) {
          auto da = target(ids[0], grad);
          for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * b[i];
        }
        if (wants(ids[1])) {
          auto db = target(ids[1], grad);
          for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * a[i];
        }
        return;
      }
      case Primitive::kTanh: {
        auto da = target(ids[0], grad);
        for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * (1.0 - n.value[i] * n.value[i]);
        return;
      }
      case Primitive::kSigmoid: {
        auto da = target(ids[0], grad);
        for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * n.value[i] * (1.0 - n.value[i]);
        return;
      }
      case Primitive::kSoftmax: {
        auto da = target(ids[0], grad);
        const std::size_t cols = dy.cols();
        for (std::size_t i = 0; i < dy.rows(); ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j < cols; ++j) dot += dy(i, j) * n.value(i, j);
          for (std::size_t j = 0; j < cols; ++j) da[i * cols + j] += n.value(i, j) * (dy(i, j) - dot);
        }
        return;
      }
      case Primitive::kLogSoftmax: {
        auto da = target(ids[0], grad);
        const std::size_t cols = dy.cols();
        for (std::size_t i = 0; i < dy.rows(); ++i) {
          double total = 0.0;
          for (std::size_t j = 0; j < cols; ++j) total += dy(i, j);
          for (std::size_t j = 0; j < cols; ++j) da[i * cols + j] += dy(i, j) - std::exp(n.value(i, j)) * total;
        }
        return;
      }
      case Primitive::kEmbedding:
      case Primitive::kRow: {
        const std::size_t cols = dy.cols();
        auto da = target(ids[0], grad);
        for (std::size_t j = 0; j < cols; ++j) da[n.attrs.a * cols + j] += dy[j];
        return;
      }
      case Primitive::kConcat: {
        if (n.attrs.a == 1) {
          std::size_t off = 0;
          for (std::size_t k = 0; k < ids.size(); ++k) {
            const std::size_t w = in(ids, k).cols();
            if (wants(ids[k])) {
              auto da = target(ids[k], grad);
              for (std::size_t i = 0; i < dy.rows(); ++i)
                for (std::size_t j = 0; j < w; ++j) da[i * w + j] += dy(i, off + j);
            }
            off += w;
          }
        } else {
          std::size_t off = 0;
          for (std::size_t k = 0; k < ids.size(); ++k) {
            const std::size_t sz = in(ids, k).size();
            if (wants(ids[k])) {
              auto da = target(ids[k], grad);
              for (std::size_t i = 0; i < sz; ++i) da[i] += dy[off + i];
            }
            off += sz;
          }
        }
        return;
      }
      case Primitive::kSlice: {
        const std::size_t src_cols = in(ids, 0).cols();
        auto da = target(ids[0], grad);
        for (std::size_t i = 0; i < dy.rows(); ++i)
          for (std::size_t j = 0; j < dy.cols(); ++j) da[i * src_cols + n.attrs.a + j] += dy(i, j);
        return;
      }
      case Primitive::kPick: {
        const std::size_t src_cols = in(ids, 0).cols();
        auto da = target(ids[0], grad);
        da[n.attrs.a * src_cols + n.attrs.b] += dy[0];
        return;
      }
      case Primitive::kScale: {
        auto da = target(ids[0], grad);
        for (std::size_t i = 0; i < dy.size(); ++i) da[i] += n.attrs.scale * dy[i];
        return;
      }
      case Primitive::kSum:
      case Primitive::kMean: {
        auto da = target(ids[0], grad);
        const double g = n.op == Primitive::kSum ? dy[0] : dy[0] / static_cast<double>(da.size());
        for (double& v : da) v += g;
        return;
      }
      case Primitive::kLog: {
        const Tensor& a = in(ids, 0);
        auto da = target(ids[0], grad);
        for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] / a[i];
        return;
      }
      case Primitive::kConstant:
      case Primitive::kParam:
        return;
    }
  }

  std::vector<Node> nodes_;
  const ParamStore* store_ = nullptr;
  std::vector<std::int32_t> param_nodes_;
};

}  // namespace mrt
