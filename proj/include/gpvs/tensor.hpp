#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "gpvs/linalg.hpp"
#include "gpvs/rng.hpp"

namespace gpvs::ad {

// Reverse-mode automatic differentiation over dense 64-bit float tensors.
//
// Tensors are cheap handles onto shared nodes. A Tape records every operation
// whose inputs carry gradients and replays them in exact reverse order on
// backward(). The op set is fixed and closed; each op has one hand-written
// backward rule. Gradients accumulate (+=) so parameters shared across
// timesteps receive contributions from every use.

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated iff requires_grad
  bool requires_grad = false;
  std::uint64_t tape_id = 0;  // nonzero when produced by a tape op
  std::string name;
};

inline std::uint64_t next_tape_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1);
}

// C (+)= A·B with A m×k, B k×n, all row-major.
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m,
                    std::size_t k, std::size_t n, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = b + p * n;
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

// C (+)= A·Bᵀ with A m×k, B n×k.
inline void gemm_nt(const double* a, const double* b, double* c, std::size_t m,
                    std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      if (accumulate)
        c[i * n + j] += acc;
      else
        c[i * n + j] = acc;
    }
  }
}

// C (+)= Aᵀ·B with A k×m, B k×n.
inline void gemm_tn(const double* a, const double* b, double* c, std::size_t m,
                    std::size_t k, std::size_t n, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = a + p * m;
    const double* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double api = arow[i];
      if (api == 0.0) continue;
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += api * brow[j];
    }
  }
}

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<double> data) {
    return make(std::move(shape), std::move(data), false, {});
  }

  static Tensor scalar(double v) { return make({}, {v}, false, {}); }

  static Tensor zeros(Shape shape) {
    std::vector<double> d(shape_numel(shape), 0.0);
    return make(std::move(shape), std::move(d), false, {});
  }

  static Tensor full(Shape shape, double v) {
    std::vector<double> d(shape_numel(shape), v);
    return make(std::move(shape), std::move(d), false, {});
  }

  /// A trainable tensor: carries a zero-initialized gradient buffer.
  static Tensor param(Shape shape, std::vector<double> data, std::string name = {}) {
    return make(std::move(shape), std::move(data), true, std::move(name));
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }

  std::size_t rows() const {
    require_rank2("rows");
    return node_->shape[0];
  }
  std::size_t cols() const {
    require_rank2("cols");
    return node_->shape[1];
  }

  const std::vector<double>& value() const { return node_->value; }
  /// Mutable access for initialization and optimizer updates. Must not be
  /// called on tensors already consumed by recorded operations.
  std::vector<double>& value_mut() { return node_->value; }

  double item() const {
    if (numel() != 1)
      throw std::invalid_argument("item: tensor has " + std::to_string(numel()) +
                                  " elements, expected 1");
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }

  const std::vector<double>& grad() const {
    if (!node_->requires_grad)
      throw std::logic_error("grad: tensor '" + node_->name + "' has no gradient buffer");
    return node_->grad;
  }
  std::vector<double>& grad_mut() {
    if (!node_->requires_grad)
      throw std::logic_error("grad: tensor '" + node_->name + "' has no gradient buffer");
    return node_->grad;
  }
  void zero_grad() {
    if (node_->requires_grad) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
  }

  const std::string& name() const { return node_->name; }

 private:
  friend class Tape;

  static Tensor make(Shape shape, std::vector<double> data, bool requires_grad,
                     std::string name) {
    for (std::size_t e : shape)
      if (e == 0) throw std::invalid_argument("tensor extents must be positive");
    if (shape_numel(shape) != data.size())
      throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                  " does not match shape " + shape_str(shape));
    Tensor t;
    t.node_ = std::make_shared<detail::Node>();
    t.node_->shape = std::move(shape);
    t.node_->value = std::move(data);
    t.node_->requires_grad = requires_grad;
    if (requires_grad) t.node_->grad.assign(t.node_->value.size(), 0.0);
    t.node_->name = std::move(name);
    return t;
  }

  void require_rank2(const char* what) const {
    if (rank() != 2)
      throw std::invalid_argument(std::string(what) + ": tensor is not rank 2, shape " +
                                  shape_str(shape()));
  }

  std::shared_ptr<detail::Node> node_;
};

/// Records operations for one forward pass and replays them in reverse on
/// backward(). One-shot: a consumed tape refuses a second backward. A tape
/// constructed with recording=false evaluates forward math only.
class Tape {
 public:
  explicit Tape(bool recording = true)
      : recording_(recording), id_(detail::next_tape_id()) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  std::size_t num_recorded() const { return steps_.size(); }

  // ---- elementwise binary (scalar operands broadcast) --------------------

  Tensor add(const Tensor& a, const Tensor& b) { return binary_ew("add", a, b); }
  Tensor sub(const Tensor& a, const Tensor& b) { return binary_ew("sub", a, b); }
  Tensor mul(const Tensor& a, const Tensor& b) { return binary_ew("mul", a, b); }

  /// c·x, as mul against a scalar constant.
  Tensor scale(const Tensor& x, double c) { return mul(x, Tensor::scalar(c)); }
  /// x + c.
  Tensor shift(const Tensor& x, double c) { return add(x, Tensor::scalar(c)); }

  // ---- matrix product ----------------------------------------------------

  Tensor matmul(const Tensor& a, const Tensor& b) {
    check_rank("matmul", a, 2);
    check_rank("matmul", b, 2);
    if (a.cols() != b.rows())
      throw std::invalid_argument("matmul: shape mismatch " + shape_str(a.shape()) +
                                  " vs " + shape_str(b.shape()));
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<double> out(m * n);
    detail::gemm_nn(a.value().data(), b.value().data(), out.data(), m, k, n, false);
    Tensor y = output({m, n}, std::move(out), a.requires_grad() || b.requires_grad());
    if (should_record(y)) {
      record([an = a.node_, bn = b.node_, yn = y.node_, m, k, n] {
        if (an->requires_grad)
          detail::gemm_nt(yn->grad.data(), bn->value.data(), an->grad.data(), m, n, k, true);
        if (bn->requires_grad)
          detail::gemm_tn(an->value.data(), yn->grad.data(), bn->grad.data(), k, m, n, true);
      });
    }
    return y;
  }

  // ---- elementwise unary ---------------------------------------------------

  Tensor tanh(const Tensor& x) {
    return unary(
        x, [](double v) { return std::tanh(v); },
        [](double, double y, double g) { return g * (1.0 - y * y); });
  }
  Tensor sigmoid(const Tensor& x) {
    return unary(
        x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
        [](double, double y, double g) { return g * y * (1.0 - y); });
  }
  Tensor exp(const Tensor& x) {
    return unary(
        x, [](double v) { return std::exp(v); },
        [](double, double y, double g) { return g * y; });
  }
  Tensor log(const Tensor& x) {
    return unary(
        x, [](double v) { return std::log(v); },
        [](double v, double, double g) { return g / v; });
  }
  Tensor neg(const Tensor& x) {
    return unary(
        x, [](double v) { return -v; }, [](double, double, double g) { return -g; });
  }
  Tensor square(const Tensor& x) {
    return unary(
        x, [](double v) { return v * v; },
        [](double v, double, double g) { return 2.0 * v * g; });
  }
  Tensor sqrt(const Tensor& x) {
    return unary(
        x, [](double v) { return std::sqrt(v); },
        [](double, double y, double g) { return g / (2.0 * y); });
  }
  /// Clamp to [lo, hi]; gradient passes through strictly inside the interval.
  Tensor clamp(const Tensor& x, double lo, double hi) {
    return unary(
        x, [lo, hi](double v) { return std::min(std::max(v, lo), hi); },
        [lo, hi](double v, double, double g) { return (v > lo && v < hi) ? g : 0.0; });
  }

  // ---- reductions ----------------------------------------------------------

  Tensor sum(const Tensor& x) { return reduce_all(x, false); }
  Tensor mean(const Tensor& x) { return reduce_all(x, true); }
  Tensor sum_axis(const Tensor& x, int axis) { return reduce_axis(x, axis, false); }
  Tensor mean_axis(const Tensor& x, int axis) { return reduce_axis(x, axis, true); }

  // ---- structure -----------------------------------------------------------

  /// Vertical concatenation of rank-2 tensors sharing a column count.
  Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
    const std::size_t cols = parts[0].cols();
    std::size_t total = 0;
    bool rg = false;
    for (const Tensor& p : parts) {
      check_rank("concat_rows", p, 2);
      if (p.cols() != cols)
        throw std::invalid_argument("concat_rows: shape mismatch " +
                                    shape_str(parts[0].shape()) + " vs " +
                                    shape_str(p.shape()));
      total += p.rows();
      rg = rg || p.requires_grad();
    }
    std::vector<double> out;
    out.reserve(total * cols);
    for (const Tensor& p : parts)
      out.insert(out.end(), p.value().begin(), p.value().end());
    Tensor y = output({total, cols}, std::move(out), rg);
    if (should_record(y)) {
      std::vector<std::shared_ptr<detail::Node>> nodes;
      nodes.reserve(parts.size());
      for (const Tensor& p : parts) nodes.push_back(p.node_);
      record([nodes, yn = y.node_] {
        std::size_t off = 0;
        for (const auto& pn : nodes) {
          const std::size_t len = pn->value.size();
          if (pn->requires_grad)
            for (std::size_t i = 0; i < len; ++i) pn->grad[i] += yn->grad[off + i];
          off += len;
        }
      });
    }
    return y;
  }

  /// Horizontal concatenation of two rank-2 tensors sharing a row count.
  Tensor concat_cols(const Tensor& a, const Tensor& b) {
    check_rank("concat_cols", a, 2);
    check_rank("concat_cols", b, 2);
    if (a.rows() != b.rows())
      throw std::invalid_argument("concat_cols: shape mismatch " + shape_str(a.shape()) +
                                  " vs " + shape_str(b.shape()));
    const std::size_t n = a.rows(), ca = a.cols(), cb = b.cols();
    std::vector<double> out(n * (ca + cb));
    for (std::size_t i = 0; i < n; ++i) {
      std::copy_n(a.value().data() + i * ca, ca, out.data() + i * (ca + cb));
      std::copy_n(b.value().data() + i * cb, cb, out.data() + i * (ca + cb) + ca);
    }
    Tensor y = output({n, ca + cb}, std::move(out), a.requires_grad() || b.requires_grad());
    if (should_record(y)) {
      record([an = a.node_, bn = b.node_, yn = y.node_, n, ca, cb] {
        for (std::size_t i = 0; i < n; ++i) {
          if (an->requires_grad)
            for (std::size_t j = 0; j < ca; ++j)
              an->grad[i * ca + j] += yn->grad[i * (ca + cb) + j];
          if (bn->requires_grad)
            for (std::size_t j = 0; j < cb; ++j)
              bn->grad[i * cb + j] += yn->grad[i * (ca + cb) + ca + j];
        }
      });
    }
    return y;
  }

  /// Select rows of a rank-2 tensor; the gradient scatters back additively.
  Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& ids) {
    check_rank("gather_rows", x, 2);
    if (ids.empty()) throw std::invalid_argument("gather_rows: empty index list");
    const std::size_t n = x.rows(), c = x.cols();
    for (std::size_t id : ids)
      if (id >= n)
        throw std::invalid_argument("gather_rows: index " + std::to_string(id) +
                                    " out of range for " + std::to_string(n) + " rows");
    std::vector<double> out(ids.size() * c);
    for (std::size_t i = 0; i < ids.size(); ++i)
      std::copy_n(x.value().data() + ids[i] * c, c, out.data() + i * c);
    Tensor y = output({ids.size(), c}, std::move(out), x.requires_grad());
    if (should_record(y)) {
      record([xn = x.node_, yn = y.node_, ids, c] {
        for (std::size_t i = 0; i < ids.size(); ++i)
          for (std::size_t j = 0; j < c; ++j)
            xn->grad[ids[i] * c + j] += yn->grad[i * c + j];
      });
    }
    return y;
  }

  Tensor transpose(const Tensor& x) {
    check_rank("transpose", x, 2);
    const std::size_t n = x.rows(), m = x.cols();
    std::vector<double> out(n * m);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) out[j * n + i] = x.value()[i * m + j];
    Tensor y = output({m, n}, std::move(out), x.requires_grad());
    if (should_record(y)) {
      record([xn = x.node_, yn = y.node_, n, m] {
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) xn->grad[i * m + j] += yn->grad[j * n + i];
      });
    }
    return y;
  }

  /// Add a length-m vector (or 1×m row) to every row of an n×m matrix.
  Tensor broadcast_add_rows(const Tensor& mat, const Tensor& vec) {
    check_rank("broadcast_add_rows", mat, 2);
    const std::size_t n = mat.rows(), m = mat.cols();
    if (vec.numel() != m || vec.rank() > 2)
      throw std::invalid_argument("broadcast_add_rows: shape mismatch " +
                                  shape_str(mat.shape()) + " vs " + shape_str(vec.shape()));
    std::vector<double> out(n * m);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j)
        out[i * m + j] = mat.value()[i * m + j] + vec.value()[j];
    Tensor y = output({n, m}, std::move(out), mat.requires_grad() || vec.requires_grad());
    if (should_record(y)) {
      record([mn = mat.node_, vn = vec.node_, yn = y.node_, n, m] {
        if (mn->requires_grad)
          for (std::size_t i = 0; i < n * m; ++i) mn->grad[i] += yn->grad[i];
        if (vn->requires_grad)
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) vn->grad[j] += yn->grad[i * m + j];
      });
    }
    return y;
  }

  // ---- row-wise softmax family ----------------------------------------------

  Tensor softmax(const Tensor& x) {
    auto [rows, cols] = rowview(x, "softmax");
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < rows; ++i) {
      const double* xi = x.value().data() + i * cols;
      double* yi = out.data() + i * cols;
      const double mx = *std::max_element(xi, xi + cols);
      double z = 0.0;
      for (std::size_t j = 0; j < cols; ++j) {
        yi[j] = std::exp(xi[j] - mx);
        z += yi[j];
      }
      for (std::size_t j = 0; j < cols; ++j) yi[j] /= z;
    }
    Tensor y = output(x.shape(), std::move(out), x.requires_grad());
    if (should_record(y)) {
      record([xn = x.node_, yn = y.node_, rows, cols] {
        for (std::size_t i = 0; i < rows; ++i) {
          const double* yi = yn->value.data() + i * cols;
          const double* gi = yn->grad.data() + i * cols;
          double dot = 0.0;
          for (std::size_t j = 0; j < cols; ++j) dot += gi[j] * yi[j];
          for (std::size_t j = 0; j < cols; ++j)
            xn->grad[i * cols + j] += yi[j] * (gi[j] - dot);
        }
      });
    }
    return y;
  }

  Tensor log_softmax(const Tensor& x) {
    auto [rows, cols] = rowview(x, "log_softmax");
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < rows; ++i) {
      const double* xi = x.value().data() + i * cols;
      double* yi = out.data() + i * cols;
      const double mx = *std::max_element(xi, xi + cols);
      double z = 0.0;
      for (std::size_t j = 0; j < cols; ++j) z += std::exp(xi[j] - mx);
      const double lse = mx + std::log(z);
      for (std::size_t j = 0; j < cols; ++j) yi[j] = xi[j] - lse;
    }
    Tensor y = output(x.shape(), std::move(out), x.requires_grad());
    if (should_record(y)) {
      record([xn = x.node_, yn = y.node_, rows, cols] {
        for (std::size_t i = 0; i < rows; ++i) {
          const double* yi = yn->value.data() + i * cols;
          const double* gi = yn->grad.data() + i * cols;
          double gsum = 0.0;
          for (std::size_t j = 0; j < cols; ++j) gsum += gi[j];
          for (std::size_t j = 0; j < cols; ++j)
            xn->grad[i * cols + j] += gi[j] - std::exp(yi[j]) * gsum;
        }
      });
    }
    return y;
  }

  // ---- constant-SPD solve -----------------------------------------------------

  /// (K⁻¹ X) against a fixed Cholesky factor; K never enters the tape, so the
  /// backward rule is the same solve applied to the incoming gradient.
  Tensor spd_solve(const linalg::CholeskyFactor& factor, const Tensor& x) {
    check_rank("spd_solve", x, 2);
    if (x.rows() != factor.n)
      throw std::invalid_argument("spd_solve: rhs has " + std::to_string(x.rows()) +
                                  " rows, factor order is " + std::to_string(factor.n));
    const std::size_t cols = x.cols();
    std::vector<double> out = factor.solve(x.value(), cols);
    Tensor y = output(x.shape(), std::move(out), x.requires_grad());
    if (should_record(y)) {
      record([xn = x.node_, yn = y.node_, factor, cols] {
        std::vector<double> gx = factor.solve(yn->grad, cols);
        for (std::size_t i = 0; i < gx.size(); ++i) xn->grad[i] += gx[i];
      });
    }
    return y;
  }

  // ---- name-dispatched entry point --------------------------------------------

  /// Dispatch an op by identifier. Parameterized ops take their parameters as
  /// extra constant inputs (gather indices, SPD matrix) or use fixed defaults
  /// (clamp bounds ±1, axis suffix in the name).
  Tensor forward_op(const std::string& name, const std::vector<Tensor>& in) {
    auto need = [&](std::size_t k) {
      if (in.size() != k)
        throw std::invalid_argument("op '" + name + "' expects " + std::to_string(k) +
                                    " inputs, got " + std::to_string(in.size()));
    };
    if (name == "add") { need(2); return add(in[0], in[1]); }
    if (name == "sub") { need(2); return sub(in[0], in[1]); }
    if (name == "mul") { need(2); return mul(in[0], in[1]); }
    if (name == "matmul") { need(2); return matmul(in[0], in[1]); }
    if (name == "tanh") { need(1); return tanh(in[0]); }
    if (name == "sigmoid") { need(1); return sigmoid(in[0]); }
    if (name == "exp") { need(1); return exp(in[0]); }
    if (name == "log") { need(1); return log(in[0]); }
    if (name == "neg") { need(1); return neg(in[0]); }
    if (name == "square") { need(1); return square(in[0]); }
    if (name == "sqrt") { need(1); return sqrt(in[0]); }
    if (name == "clamp") { need(1); return clamp(in[0], -1.0, 1.0); }
    if (name == "sum") { need(1); return sum(in[0]); }
    if (name == "mean") { need(1); return mean(in[0]); }
    if (name == "sum_axis0") { need(1); return sum_axis(in[0], 0); }
    if (name == "sum_axis1") { need(1); return sum_axis(in[0], 1); }
    if (name == "mean_axis0") { need(1); return mean_axis(in[0], 0); }
    if (name == "mean_axis1") { need(1); return mean_axis(in[0], 1); }
    if (name == "concat_rows") { return concat_rows(in); }
    if (name == "concat_cols") { need(2); return concat_cols(in[0], in[1]); }
    if (name == "gather_rows") {
      need(2);
      std::vector<std::size_t> ids;
      ids.reserve(in[1].numel());
      for (double v : in[1].value()) ids.push_back(static_cast<std::size_t>(v));
      return gather_rows(in[0], ids);
    }
    if (name == "softmax") { need(1); return softmax(in[0]); }
    if (name == "log_softmax") { need(1); return log_softmax(in[0]); }
    if (name == "broadcast_add_rows") { need(2); return broadcast_add_rows(in[0], in[1]); }
    if (name == "transpose") { need(1); return transpose(in[0]); }
    if (name == "spd_solve") {
      need(2);
      check_rank("spd_solve", in[0], 2);
      linalg::SpdMatrix k(in[0].rows(), in[0].value());
      return spd_solve(linalg::cholesky(k), in[1]);
    }
    throw std::invalid_argument("unknown op: " + name);
  }

  /// Every identifier forward_op accepts.
  static const std::vector<std::string>& op_names() {
    static const std::vector<std::string> names = {
        "add",        "sub",        "mul",        "matmul",     "tanh",
        "sigmoid",    "exp",        "log",        "neg",        "square",
        "sqrt",       "clamp",      "sum",        "mean",       "sum_axis0",
        "sum_axis1",  "mean_axis0", "mean_axis1", "concat_rows", "concat_cols",
        "gather_rows", "softmax",   "log_softmax", "broadcast_add_rows",
        "transpose",  "spd_solve"};
    return names;
  }

  // ---- backward ------------------------------------------------------------------

  void backward(const Tensor& root) {
    if (consumed_) throw std::logic_error("backward: tape already consumed");
    if (!root.defined() || root.numel() != 1)
      throw std::invalid_argument("backward: root must be a scalar");
    if (root.node_->tape_id != id_)
      throw std::invalid_argument("backward: root was not produced by this tape");
    if (!root.node_->requires_grad)
      throw std::invalid_argument("backward: root does not depend on any gradient tensor");
    root.node_->grad[0] = 1.0;
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
    consumed_ = true;
  }

 private:
  bool should_record(const Tensor& y) const { return recording_ && y.requires_grad(); }

  void record(std::function<void()> step) { steps_.push_back(std::move(step)); }

  Tensor output(Shape shape, std::vector<double> value, bool requires_grad) {
    Tensor t = Tensor::make(std::move(shape), std::move(value), requires_grad, {});
    t.node_->tape_id = id_;
    return t;
  }

  static void check_rank(const char* op, const Tensor& t, std::size_t r) {
    if (t.rank() != r)
      throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(r) +
                                  " tensor, got shape " + shape_str(t.shape()));
  }

  static std::pair<std::size_t, std::size_t> rowview(const Tensor& x, const char* op) {
    if (x.rank() == 1) return {1, x.shape()[0]};
    if (x.rank() == 2) return {x.shape()[0], x.shape()[1]};
    throw std::invalid_argument(std::string(op) + ": expected rank 1 or 2, got shape " +
                                shape_str(x.shape()));
  }

  Tensor binary_ew(const char* op, const Tensor& a, const Tensor& b) {
    const bool a_scalar = a.numel() == 1;
    const bool b_scalar = b.numel() == 1;
    if (!a_scalar && !b_scalar && a.shape() != b.shape())
      throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                  shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const Tensor& lead = a_scalar && !b_scalar ? b : a;
    const std::size_t n = lead.numel();
    std::vector<double> out(n);
    const auto& av = a.value();
    const auto& bv = b.value();
    const char tag = op[0];  // 'a' add, 's' sub, 'm' mul
    for (std::size_t i = 0; i < n; ++i) {
      const double x = av[a_scalar ? 0 : i];
      const double y = bv[b_scalar ? 0 : i];
      out[i] = tag == 'a' ? x + y : tag == 's' ? x - y : x * y;
    }
    Tensor r = output(lead.shape(), std::move(out), a.requires_grad() || b.requires_grad());
    if (should_record(r)) {
      record([an = a.node_, bn = b.node_, rn = r.node_, a_scalar, b_scalar, tag, n] {
        for (std::size_t i = 0; i < n; ++i) {
          const double g = rn->grad[i];
          if (an->requires_grad) {
            const double d = tag == 'm' ? g * bn->value[b_scalar ? 0 : i] : g;
            an->grad[a_scalar ? 0 : i] += d;
          }
          if (bn->requires_grad) {
            const double d = tag == 'a'   ? g
                             : tag == 's' ? -g
                                          : g * an->value[a_scalar ? 0 : i];
            bn->grad[b_scalar ? 0 : i] += d;
          }
        }
      });
    }
    return r;
  }

  template <typename F, typename B>
  Tensor unary(const Tensor& x, F fwd, B bwd) {
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < x.numel(); ++i) out[i] = fwd(x.value()[i]);
    Tensor y = output(x.shape(), std::move(out), x.requires_grad());
    if (should_record(y)) {
      record([xn = x.node_, yn = y.node_, bwd] {
        for (std::size_t i = 0; i < xn->value.size(); ++i)
          xn->grad[i] += bwd(xn->value[i], yn->value[i], yn->grad[i]);
      });
    }
    return y;
  }

  Tensor reduce_all(const Tensor& x, bool take_mean) {
    const double div = take_mean ? static_cast<double>(x.numel()) : 1.0;
    double acc = 0.0;
    for (double v : x.value()) acc += v;
    Tensor y = output({}, {acc / div}, x.requires_grad());
    if (should_record(y)) {
      record([xn = x.node_, yn = y.node_, div] {
        const double g = yn->grad[0] / div;
        for (auto& gv : xn->grad) gv += g;
      });
    }
    return y;
  }

  Tensor reduce_axis(const Tensor& x, int axis, bool take_mean) {
    check_rank(take_mean ? "mean_axis" : "sum_axis", x, 2);
    if (axis != 0 && axis != 1) throw std::invalid_argument("reduce axis must be 0 or 1");
    const std::size_t n = x.rows(), m = x.cols();
    const std::size_t out_len = axis == 0 ? m : n;
    const double div = take_mean ? static_cast<double>(axis == 0 ? n : m) : 1.0;
    std::vector<double> out(out_len, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) out[axis == 0 ? j : i] += x.value()[i * m + j];
    for (auto& v : out) v /= div;
    Tensor y = output({out_len}, std::move(out), x.requires_grad());
    if (should_record(y)) {
      record([xn = x.node_, yn = y.node_, n, m, axis, div] {
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j)
            xn->grad[i * m + j] += yn->grad[axis == 0 ? j : i] / div;
      });
    }
    return y;
  }

  bool recording_;
  bool consumed_ = false;
  std::uint64_t id_;
  std::vector<std::function<void()>> steps_;
};

}  // namespace gpvs::ad
