#include "starnet/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <thread>
#include <cmath>
#include <cstring>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

namespace starnet {

namespace {

thread_local bool g_grad_enabled = true;

using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

[[noreturn]] void shape_error(const std::string& op, const std::string& detail) {
  throw std::invalid_argument("tensor: " + op + ": " + detail);
}

void check_finite(const TensorNode& n) {
#ifndef NDEBUG
  for (double v : n.data) {
    if (!std::isfinite(v))
      throw std::runtime_error("tensor: non-finite value produced by op '" + n.op + "'");
  }
#else
  (void)n;
#endif
}

Tensor make_node(Shape shape, std::vector<double> data, std::string op,
                 std::vector<Tensor> inputs,
                 std::function<std::vector<Tensor>(const Tensor&)> backward_fn,
                 bool second_order_ok = true) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->op = std::move(op);
  n->second_order_ok = second_order_ok;
  bool rg = false;
  if (g_grad_enabled) {
    for (const auto& t : inputs) rg = rg || (t.defined() && t.requires_grad());
  }
  n->requires_grad = rg;
  if (rg) {
    n->inputs = std::move(inputs);
    n->backward_fn = std::move(backward_fn);
  }
  check_finite(*n);
  return Tensor::wrap(std::move(n));
}

int norm_axis(const Shape& s, int axis, const char* op) {
  int r = static_cast<int>(s.size());
  if (axis < -r || axis >= r) shape_error(op, "axis out of range");
  return axis < 0 ? axis + r : axis;
}

// strides for iterating a row-major tensor with one axis singled out
struct AxisView {
  int64_t outer, dim, inner;
};

AxisView axis_view(const Shape& s, int axis) {
  AxisView v{1, s[axis], 1};
  for (int i = 0; i < axis; ++i) v.outer *= s[i];
  for (size_t i = axis + 1; i < s.size(); ++i) v.inner *= s[i];
  return v;
}

}  // namespace

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string r = "[";
  for (size_t i = 0; i < s.size(); ++i) r += (i ? "," : "") + std::to_string(s[i]);
  return r + "]";
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
bool grad_enabled() { return g_grad_enabled; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = std::make_shared<TensorNode>();
  n->data.assign(static_cast<size_t>(shape_numel(shape)), value);
  n->shape = std::move(shape);
  n->requires_grad = requires_grad;
  return wrap(std::move(n));
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != static_cast<int64_t>(data.size()))
    shape_error("from", "data length does not match shape " + shape_str(shape));
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->requires_grad = requires_grad;
  check_finite(*n);
  return wrap(std::move(n));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

Tensor Tensor::randn(Shape shape, std::mt19937_64& rng, double stddev, bool requires_grad) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> d(static_cast<size_t>(shape_numel(shape)));
  for (auto& v : d) v = dist(rng);
  return from(std::move(shape), std::move(d), requires_grad);
}

double Tensor::item() const {
  if (numel() != 1) shape_error("item", "tensor has " + std::to_string(numel()) + " elements");
  return node_->data[0];
}

void Tensor::set_requires_grad(bool v) {
  if (v && node_->backward_fn) shape_error("set_requires_grad", "not a leaf");
  node_->requires_grad = v;
}

std::span<const double> Tensor::grad() const { return node_->grad_buf; }

void Tensor::zero_grad() {
  if (!node_->grad_buf.empty()) std::fill(node_->grad_buf.begin(), node_->grad_buf.end(), 0.0);
}

// ---------------- elementwise primitives ----------------

static void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    shape_error(op, "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<double> d(a.data().begin(), a.data().end());
  for (size_t i = 0; i < d.size(); ++i) d[i] += b[static_cast<int64_t>(i)];
  return make_node(a.shape(), std::move(d), "add", {a, b},
                   [](const Tensor& g) { return std::vector<Tensor>{g, g}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::vector<double> d(a.data().begin(), a.data().end());
  for (size_t i = 0; i < d.size(); ++i) d[i] -= b[static_cast<int64_t>(i)];
  return make_node(a.shape(), std::move(d), "sub", {a, b}, [](const Tensor& g) {
    return std::vector<Tensor>{g, scale(g, -1.0)};
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  std::vector<double> d(a.data().begin(), a.data().end());
  for (size_t i = 0; i < d.size(); ++i) d[i] *= b[static_cast<int64_t>(i)];
  return make_node(a.shape(), std::move(d), "mul", {a, b}, [a, b](const Tensor& g) {
    return std::vector<Tensor>{mul(g, b), mul(g, a)};
  });
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> d(a.data().begin(), a.data().end());
  for (auto& v : d) v *= c;
  return make_node(a.shape(), std::move(d), "scale", {a},
                   [c](const Tensor& g) { return std::vector<Tensor>{scale(g, c)}; });
}

Tensor add_scalar(const Tensor& a, double c) {
  std::vector<double> d(a.data().begin(), a.data().end());
  for (auto& v : d) v += c;
  return make_node(a.shape(), std::move(d), "add_scalar", {a},
                   [](const Tensor& g) { return std::vector<Tensor>{g}; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor recip(const Tensor& a) {
  std::vector<double> d(a.data().begin(), a.data().end());
  for (auto& v : d) v = 1.0 / v;
  // d(1/x) = -1/x^2; recomputed from the input to avoid a self-capture cycle
  return make_node(a.shape(), std::move(d), "recip", {a}, [a](const Tensor& g) {
    Tensor r = recip(a);
    return std::vector<Tensor>{neg(mul(g, mul(r, r)))};
  });
}

Tensor sqrt_elem(const Tensor& a) {
  std::vector<double> d(a.data().begin(), a.data().end());
  for (auto& v : d) v = std::sqrt(v);
  return make_node(a.shape(), std::move(d), "sqrt", {a}, [a](const Tensor& g) {
    return std::vector<Tensor>{scale(mul(g, recip(sqrt_elem(a))), 0.5)};
  });
}

// ---------------- shape primitives ----------------

namespace {

// Product kernels over optional transpose views, threaded for tall outputs
// on multi-core hosts. The three variants are closed under differentiation,
// so no backward pass ever materializes a transposed copy.
enum class MatKind { kNN, kTN, kNT };

template <typename LhsT, typename RhsT>
void run_product(MatMap& C, const LhsT& A, const RhsT& B, int m, int k, int n) {
  static const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const unsigned workers = std::min(4u, hw);
  const int64_t macs = static_cast<int64_t>(m) * k * n;
  if (workers > 1 && macs >= (int64_t{1} << 23) && m >= 8) {
    std::vector<std::thread> pool;
    int rows = (m + static_cast<int>(workers) - 1) / static_cast<int>(workers);
    for (unsigned w = 0; w < workers; ++w) {
      int r0 = static_cast<int>(w) * rows, r1 = std::min(m, r0 + rows);
      if (r0 >= r1) break;
      pool.emplace_back([&, r0, r1] {
        C.middleRows(r0, r1 - r0).noalias() = A.middleRows(r0, r1 - r0) * B;
      });
    }
    for (auto& t : pool) t.join();
  } else {
    C.noalias() = A * B;
  }
}

Tensor matmul_impl(const Tensor& a, const Tensor& b, MatKind kind);

// a^T b where a is [k,m]; gradients: da = g b^T via kNT, db = a g via kNN
Tensor matmul_tn(const Tensor& a, const Tensor& b) { return matmul_impl(a, b, MatKind::kTN); }
// a b^T where b is [n,k]; gradients: da = g b via kNN, db = g^T a via kTN
Tensor matmul_nt(const Tensor& a, const Tensor& b) { return matmul_impl(a, b, MatKind::kNT); }

Tensor matmul_impl(const Tensor& a, const Tensor& b, MatKind kind) {
  if (a.shape().size() != 2 || b.shape().size() != 2)
    shape_error("matmul", shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const int ka = kind == MatKind::kTN ? a.shape()[0] : a.shape()[1];
  const int kb = kind == MatKind::kNT ? b.shape()[1] : b.shape()[0];
  if (ka != kb) shape_error("matmul", shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const int m = kind == MatKind::kTN ? a.shape()[1] : a.shape()[0];
  const int n = kind == MatKind::kNT ? b.shape()[0] : b.shape()[1];
  const int k = ka;
  std::vector<double> d(static_cast<size_t>(m) * n);
  ConstMatMap A(a.data().data(), a.shape()[0], a.shape()[1]);
  ConstMatMap B(b.data().data(), b.shape()[0], b.shape()[1]);
  MatMap C(d.data(), m, n);
  switch (kind) {
    case MatKind::kNN: run_product(C, A, B, m, k, n); break;
    case MatKind::kTN: run_product(C, A.transpose(), B, m, k, n); break;
    case MatKind::kNT: run_product(C, A, B.transpose(), m, k, n); break;
  }
  return make_node({m, n}, std::move(d), "matmul", {a, b},
                   [a, b, kind](const Tensor& g) {
                     switch (kind) {
                       case MatKind::kTN:
                         return std::vector<Tensor>{matmul_nt(b, g), matmul(a, g)};
                       case MatKind::kNT:
                         return std::vector<Tensor>{matmul(g, b), matmul_tn(g, a)};
                       case MatKind::kNN:
                       default:
                         return std::vector<Tensor>{matmul_nt(g, b), matmul_tn(a, g)};
                     }
                   });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  return matmul_impl(a, b, MatKind::kNN);
}

Tensor transpose2d(const Tensor& a) {
  if (a.shape().size() != 2) shape_error("transpose2d", "rank != 2");
  const int m = a.shape()[0], n = a.shape()[1];
  std::vector<double> d(static_cast<size_t>(m) * n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) d[static_cast<size_t>(j) * m + i] = a[static_cast<int64_t>(i) * n + j];
  return make_node({n, m}, std::move(d), "transpose2d", {a},
                   [](const Tensor& g) { return std::vector<Tensor>{transpose2d(g)}; });
}

Tensor transpose12(const Tensor& a) {
  if (a.shape().size() != 3) shape_error("transpose12", "rank != 3");
  const int b = a.shape()[0], x = a.shape()[1], y = a.shape()[2];
  std::vector<double> d(static_cast<size_t>(b) * x * y);
  for (int i = 0; i < b; ++i)
    for (int p = 0; p < x; ++p)
      for (int q = 0; q < y; ++q)
        d[(static_cast<size_t>(i) * y + q) * x + p] =
            a[(static_cast<int64_t>(i) * x + p) * y + q];
  return make_node({b, y, x}, std::move(d), "transpose12", {a},
                   [](const Tensor& g) { return std::vector<Tensor>{transpose12(g)}; });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    shape_error("reshape", shape_str(a.shape()) + " -> " + shape_str(shape));
  Shape orig = a.shape();
  return make_node(std::move(shape), {a.data().begin(), a.data().end()}, "reshape", {a},
                   [orig](const Tensor& g) { return std::vector<Tensor>{reshape(g, orig)}; });
}

Tensor sum_all(const Tensor& a) {
  double s = std::accumulate(a.data().begin(), a.data().end(), 0.0);
  Shape orig = a.shape();
  return make_node({1}, {s}, "sum_all", {a}, [orig](const Tensor& g) {
    // spread the scalar gradient over the input shape
    return std::vector<Tensor>{
        reshape(expand_axis(g, 0, static_cast<int>(shape_numel(orig))), orig)};
  });
}

Tensor sum_axis(const Tensor& a, int axis) {
  axis = norm_axis(a.shape(), axis, "sum_axis");
  AxisView v = axis_view(a.shape(), axis);
  Shape out = a.shape();
  out.erase(out.begin() + axis);
  if (out.empty()) out = {1};
  std::vector<double> d(static_cast<size_t>(v.outer * v.inner), 0.0);
  const auto src = a.data();
  for (int64_t o = 0; o < v.outer; ++o)
    for (int64_t k = 0; k < v.dim; ++k) {
      const double* row = src.data() + (o * v.dim + k) * v.inner;
      double* dst = d.data() + o * v.inner;
      for (int64_t i = 0; i < v.inner; ++i) dst[i] += row[i];
    }
  const int dim = static_cast<int>(v.dim);
  return make_node(std::move(out), std::move(d), "sum_axis", {a},
                   [axis, dim](const Tensor& g) {
                     return std::vector<Tensor>{expand_axis(g, axis, dim)};
                   });
}

Tensor mean_axis(const Tensor& a, int axis) {
  int ax = norm_axis(a.shape(), axis, "mean_axis");
  return scale(sum_axis(a, ax), 1.0 / a.shape()[ax]);
}

Tensor expand_axis(const Tensor& a, int axis, int n) {
  Shape out = a.shape();
  if (axis < 0 || axis > static_cast<int>(out.size())) shape_error("expand_axis", "axis");
  out.insert(out.begin() + axis, n);
  AxisView v = axis_view(out, axis);
  std::vector<double> d(static_cast<size_t>(v.outer * v.dim * v.inner));
  const auto src = a.data();
  for (int64_t o = 0; o < v.outer; ++o)
    for (int64_t k = 0; k < v.dim; ++k)
      std::memcpy(d.data() + (o * v.dim + k) * v.inner, src.data() + o * v.inner,
                  static_cast<size_t>(v.inner) * sizeof(double));
  return make_node(std::move(out), std::move(d), "expand_axis", {a},
                   [axis](const Tensor& g) { return std::vector<Tensor>{sum_axis(g, axis)}; });
}

namespace {

// internal: scatter g into shape `out` along `axis` at the stored indices.
// Linear in g, so backward = gather. Used by max_axis.
Tensor scatter_axis(const Tensor& g, std::shared_ptr<std::vector<int>> idx, int axis, int dim,
                    Shape out_shape);

Tensor gather_axis(const Tensor& a, std::shared_ptr<std::vector<int>> idx, int axis) {
  AxisView v = axis_view(a.shape(), axis);
  Shape out = a.shape();
  out.erase(out.begin() + axis);
  if (out.empty()) out = {1};
  std::vector<double> d(static_cast<size_t>(v.outer * v.inner));
  const auto src = a.data();
  for (int64_t o = 0; o < v.outer; ++o)
    for (int64_t i = 0; i < v.inner; ++i) {
      int k = (*idx)[static_cast<size_t>(o * v.inner + i)];
      d[static_cast<size_t>(o * v.inner + i)] = src[(o * v.dim + k) * v.inner + i];
    }
  Shape in_shape = a.shape();
  const int dim = static_cast<int>(v.dim);
  return make_node(std::move(out), std::move(d), "gather_axis", {a},
                   [idx, axis, dim, in_shape](const Tensor& g) {
                     return std::vector<Tensor>{scatter_axis(g, idx, axis, dim, in_shape)};
                   });
}

Tensor scatter_axis(const Tensor& g, std::shared_ptr<std::vector<int>> idx, int axis, int dim,
                    Shape out_shape) {
  (void)dim;  // implied by out_shape; kept so gather/scatter signatures mirror
  AxisView v = axis_view(out_shape, axis);
  std::vector<double> d(static_cast<size_t>(shape_numel(out_shape)), 0.0);
  const auto src = g.data();
  for (int64_t o = 0; o < v.outer; ++o)
    for (int64_t i = 0; i < v.inner; ++i) {
      int k = (*idx)[static_cast<size_t>(o * v.inner + i)];
      d[static_cast<size_t>((o * v.dim + k) * v.inner + i)] = src[o * v.inner + i];
    }
  return make_node(std::move(out_shape), std::move(d), "scatter_axis", {g},
                   [idx, axis](const Tensor& gg) {
                     return std::vector<Tensor>{gather_axis(gg, idx, axis)};
                   });
}

}  // namespace

Tensor max_axis(const Tensor& a, int axis) {
  axis = norm_axis(a.shape(), axis, "max_axis");
  AxisView v = axis_view(a.shape(), axis);
  auto idx = std::make_shared<std::vector<int>>(static_cast<size_t>(v.outer * v.inner), 0);
  Shape out = a.shape();
  out.erase(out.begin() + axis);
  if (out.empty()) out = {1};
  std::vector<double> d(static_cast<size_t>(v.outer * v.inner));
  const auto src = a.data();
  for (int64_t o = 0; o < v.outer; ++o)
    for (int64_t i = 0; i < v.inner; ++i) {
      double best = src[o * v.dim * v.inner + i];
      int bi = 0;
      for (int k = 1; k < v.dim; ++k) {
        double val = src[(o * v.dim + k) * v.inner + i];
        if (val > best) {  // ties keep the lowest index
          best = val;
          bi = k;
        }
      }
      d[static_cast<size_t>(o * v.inner + i)] = best;
      (*idx)[static_cast<size_t>(o * v.inner + i)] = bi;
    }
  Shape in_shape = a.shape();
  const int dim = static_cast<int>(v.dim);
  return make_node(std::move(out), std::move(d), "max_axis", {a},
                   [idx, axis, dim, in_shape](const Tensor& g) {
                     return std::vector<Tensor>{scatter_axis(g, idx, axis, dim, in_shape)};
                   });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) shape_error("concat", "no inputs");
  int ax = norm_axis(parts[0].shape(), axis, "concat");
  Shape out = parts[0].shape();
  int total = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    s[ax] = 0;
    Shape ref = out;
    ref[ax] = 0;
    if (s != ref) shape_error("concat", "incompatible part shapes");
    total += p.shape()[ax];
  }
  out[ax] = total;
  AxisView v = axis_view(out, ax);
  std::vector<double> d(static_cast<size_t>(shape_numel(out)));
  int64_t off = 0;
  for (const auto& p : parts) {
    int64_t pd = p.shape()[ax];
    const auto src = p.data();
    for (int64_t o = 0; o < v.outer; ++o)
      std::memcpy(d.data() + (o * v.dim + off) * v.inner, src.data() + o * pd * v.inner,
                  static_cast<size_t>(pd * v.inner) * sizeof(double));
    off += pd;
  }
  std::vector<int> lens;
  for (const auto& p : parts) lens.push_back(p.shape()[ax]);
  return make_node(std::move(out), std::move(d), "concat", parts,
                   [ax, lens](const Tensor& g) {
                     std::vector<Tensor> gs;
                     int start = 0;
                     for (int len : lens) {
                       gs.push_back(slice_axis(g, ax, start, len));
                       start += len;
                     }
                     return gs;
                   });
}

namespace {

Tensor pad_axis(const Tensor& a, int axis, int start, int total) {
  AxisView v = axis_view(a.shape(), axis);
  Shape out = a.shape();
  out[axis] = total;
  std::vector<double> d(static_cast<size_t>(shape_numel(out)), 0.0);
  const auto src = a.data();
  const int len = a.shape()[axis];
  for (int64_t o = 0; o < v.outer; ++o)
    std::memcpy(d.data() + (o * total + start) * v.inner, src.data() + o * len * v.inner,
                static_cast<size_t>(len * v.inner) * sizeof(double));
  return make_node(std::move(out), std::move(d), "pad_axis", {a},
                   [axis, start, len](const Tensor& g) {
                     return std::vector<Tensor>{slice_axis(g, axis, start, len)};
                   });
}

}  // namespace

Tensor slice_axis(const Tensor& a, int axis, int start, int len) {
  axis = norm_axis(a.shape(), axis, "slice_axis");
  if (start < 0 || len <= 0 || start + len > a.shape()[axis]) shape_error("slice_axis", "range");
  AxisView v = axis_view(a.shape(), axis);
  Shape out = a.shape();
  out[axis] = len;
  std::vector<double> d(static_cast<size_t>(shape_numel(out)));
  const auto src = a.data();
  for (int64_t o = 0; o < v.outer; ++o)
    std::memcpy(d.data() + o * len * v.inner, src.data() + (o * v.dim + start) * v.inner,
                static_cast<size_t>(len * v.inner) * sizeof(double));
  const int total = a.shape()[axis];
  return make_node(std::move(out), std::move(d), "slice_axis", {a},
                   [axis, start, total](const Tensor& g) {
                     return std::vector<Tensor>{pad_axis(g, axis, start, total)};
                   });
}

Tensor detach(const Tensor& a) {
  return Tensor::from(a.shape(), {a.data().begin(), a.data().end()}, false);
}

// ---------------- activations ----------------

Tensor leaky_relu(const Tensor& x, double slope) {
  if (!(slope > 0.0 && slope < 1.0)) shape_error("leaky_relu", "slope must be in (0,1)");
  std::vector<double> d(x.data().begin(), x.data().end());
  std::vector<double> mask(d.size());
  for (size_t i = 0; i < d.size(); ++i) {
    // derivative at exactly 0 is `slope`
    mask[i] = d[i] > 0.0 ? 1.0 : slope;
    if (d[i] < 0.0) d[i] *= slope;
  }
  Tensor m = Tensor::from(x.shape(), std::move(mask));
  return make_node(x.shape(), std::move(d), "leaky_relu", {x},
                   [m](const Tensor& g) { return std::vector<Tensor>{mul(g, m)}; });
}

Tensor tanh_act(const Tensor& x) {
  std::vector<double> d(x.data().begin(), x.data().end());
  std::vector<double> deriv(d.size());
  for (size_t i = 0; i < d.size(); ++i) {
    d[i] = std::tanh(d[i]);
    deriv[i] = 1.0 - d[i] * d[i];
  }
  Tensor dv = Tensor::from(x.shape(), std::move(deriv));
  return make_node(x.shape(), std::move(d), "tanh", {x},
                   [dv](const Tensor& g) { return std::vector<Tensor>{mul(g, dv)}; },
                   /*second_order_ok=*/false);
}

Tensor sigmoid_act(const Tensor& x) {
  std::vector<double> d(x.data().begin(), x.data().end());
  std::vector<double> deriv(d.size());
  for (size_t i = 0; i < d.size(); ++i) {
    d[i] = 1.0 / (1.0 + std::exp(-d[i]));
    deriv[i] = d[i] * (1.0 - d[i]);
  }
  Tensor dv = Tensor::from(x.shape(), std::move(deriv));
  return make_node(x.shape(), std::move(d), "sigmoid", {x},
                   [dv](const Tensor& g) { return std::vector<Tensor>{mul(g, dv)}; },
                   /*second_order_ok=*/false);
}

// ---------------- network building blocks ----------------

Tensor affine(const Tensor& x, const Tensor& W, const Tensor& b) {
  if (x.shape().size() != 2 || W.shape().size() != 2 || b.shape().size() != 1 ||
      x.shape()[1] != W.shape()[0] || W.shape()[1] != b.shape()[0])
    shape_error("affine", shape_str(x.shape()) + " x " + shape_str(W.shape()) + " + " +
                              shape_str(b.shape()));
  return add(matmul(x, W), expand_axis(b, 0, x.shape()[0]));
}

namespace {

Tensor pw_wgrad(const Tensor& a, const Tensor& c);

// Runs `fn(b)` for each batch item, threaded on multi-core hosts when the
// total work is large enough to amortize thread startup.
template <typename Fn>
void run_batched(int B, int64_t macs_per_item, Fn fn) {
  static const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const unsigned workers = std::min({4u, hw, static_cast<unsigned>(B)});
  if (workers > 1 && macs_per_item * B >= (int64_t{1} << 23)) {
    std::vector<std::thread> pool;
    int per = (B + static_cast<int>(workers) - 1) / static_cast<int>(workers);
    for (unsigned w = 0; w < workers; ++w) {
      int b0 = static_cast<int>(w) * per, b1 = std::min(B, b0 + per);
      if (b0 >= b1) break;
      pool.emplace_back([&fn, b0, b1] {
        for (int b = b0; b < b1; ++b) fn(b);
      });
    }
    for (auto& t : pool) t.join();
  } else {
    for (int b = 0; b < B; ++b) fn(b);
  }
}

// out[b] = (transposed ? W^T : W) . x[b] for x [B,Cx,N] and a shared weight
// W [Ci,Co]. Together with pw_wgrad this family is closed under
// differentiation, so backward passes never copy the activations.
Tensor pw_apply(const Tensor& x, const Tensor& W, bool transposed) {
  const int B = x.shape()[0], N = x.shape()[2];
  const int Ci = W.shape()[0], Co = W.shape()[1];
  const int cin = transposed ? Ci : Co;
  const int cout = transposed ? Co : Ci;
  if (x.shape()[1] != cin)
    shape_error("pw_apply", shape_str(x.shape()) + " x " + shape_str(W.shape()));
  std::vector<double> d(static_cast<size_t>(B) * cout * N);
  ConstMatMap Wm(W.data().data(), Ci, Co);
  run_batched(B, static_cast<int64_t>(cin) * cout * N, [&](int b) {
    ConstMatMap xm(x.data().data() + static_cast<int64_t>(b) * cin * N, cin, N);
    MatMap ym(d.data() + static_cast<int64_t>(b) * cout * N, cout, N);
    if (transposed)
      ym.noalias() = Wm.transpose() * xm;
    else
      ym.noalias() = Wm * xm;
  });
  return make_node({B, cout, N}, std::move(d), "pw_apply", {x, W},
                   [x, W, transposed](const Tensor& g) {
                     Tensor dW = transposed ? pw_wgrad(x, g) : pw_wgrad(g, x);
                     return std::vector<Tensor>{pw_apply(g, W, !transposed), dW};
                   });
}

// out = sum_b a[b] . c[b]^T -> [Ca,Cc] for a [B,Ca,N], c [B,Cc,N].
Tensor pw_wgrad(const Tensor& a, const Tensor& c) {
  if (a.shape().size() != 3 || c.shape().size() != 3 || a.shape()[0] != c.shape()[0] ||
      a.shape()[2] != c.shape()[2])
    shape_error("pw_wgrad", shape_str(a.shape()) + " x " + shape_str(c.shape()));
  const int B = a.shape()[0], Ca = a.shape()[1], Cc = c.shape()[1], N = a.shape()[2];
  std::vector<double> d(static_cast<size_t>(Ca) * Cc, 0.0);
  MatMap acc(d.data(), Ca, Cc);
  for (int b = 0; b < B; ++b) {
    ConstMatMap am(a.data().data() + static_cast<int64_t>(b) * Ca * N, Ca, N);
    ConstMatMap cm(c.data().data() + static_cast<int64_t>(b) * Cc * N, Cc, N);
    acc.noalias() += am * cm.transpose();
  }
  return make_node({Ca, Cc}, std::move(d), "pw_wgrad", {a, c},
                   [a, c](const Tensor& g) {
                     return std::vector<Tensor>{pw_apply(c, g, false), pw_apply(a, g, true)};
                   });
}

}  // namespace

Tensor pointwise_conv(const Tensor& x, const Tensor& W, const Tensor& b) {
  if (x.shape().size() != 3 || W.shape().size() != 2 || x.shape()[1] != W.shape()[0] ||
      b.shape() != Shape{W.shape()[1]})
    shape_error("pointwise_conv", shape_str(x.shape()) + " x " + shape_str(W.shape()));
  const int B = x.shape()[0], Ci = x.shape()[1], N = x.shape()[2], Co = W.shape()[1];
  std::vector<double> d(static_cast<size_t>(B) * Co * N);
  ConstMatMap Wm(W.data().data(), Ci, Co);
  Eigen::Map<const Eigen::VectorXd> bv(b.data().data(), Co);
  run_batched(B, static_cast<int64_t>(Ci) * Co * N, [&](int bi) {
    ConstMatMap xm(x.data().data() + static_cast<int64_t>(bi) * Ci * N, Ci, N);
    MatMap ym(d.data() + static_cast<int64_t>(bi) * Co * N, Co, N);
    ym.noalias() = Wm.transpose() * xm;
    ym.colwise() += bv;
  });
  return make_node({B, Co, N}, std::move(d), "pointwise_conv", {x, W, b},
                   [x, W](const Tensor& g) {
                     return std::vector<Tensor>{pw_apply(g, W, false), pw_wgrad(x, g),
                                                sum_axis(sum_axis(g, 2), 0)};
                   });
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, RunningStats& state,
                  Mode mode, double momentum, double eps) {
  const Shape& s = x.shape();
  if (s.size() != 2 && s.size() != 3) shape_error("batch_norm", "rank must be 2 or 3");
  const int B = s[0], C = s[1];
  const int64_t N = s.size() == 3 ? s[2] : 1;
  if (gamma.shape() != Shape{C} || beta.shape() != Shape{C})
    shape_error("batch_norm", "gamma/beta must be [C]");
  if (mode == Mode::kTrain && B < 2)
    throw std::invalid_argument("batch_norm: train mode needs batch size >= 2");
  if (!state.initialized) {
    state.mean.assign(C, 0.0);
    state.var.assign(C, 1.0);
    state.initialized = true;
  }

  const int64_t m = static_cast<int64_t>(B) * N;
  std::vector<double> mu(C), var(C);
  if (mode == Mode::kTrain) {
    for (int c = 0; c < C; ++c) {
      double acc = 0.0;
      for (int b = 0; b < B; ++b)
        for (int64_t k = 0; k < N; ++k) acc += x[(static_cast<int64_t>(b) * C + c) * N + k];
      mu[c] = acc / static_cast<double>(m);
      double v = 0.0;
      for (int b = 0; b < B; ++b)
        for (int64_t k = 0; k < N; ++k) {
          double d = x[(static_cast<int64_t>(b) * C + c) * N + k] - mu[c];
          v += d * d;
        }
      var[c] = v / static_cast<double>(m);
    }
    for (int c = 0; c < C; ++c) {
      state.mean[c] = momentum * state.mean[c] + (1.0 - momentum) * mu[c];
      state.var[c] = momentum * state.var[c] + (1.0 - momentum) * var[c];
    }
  } else {
    mu = state.mean;
    var = state.var;
  }

  auto xhat = std::make_shared<std::vector<double>>(x.data().begin(), x.data().end());
  auto istd = std::make_shared<std::vector<double>>(C);
  for (int c = 0; c < C; ++c) (*istd)[c] = 1.0 / std::sqrt(var[c] + eps);
  std::vector<double> out(xhat->size());
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int64_t k = 0; k < N; ++k) {
        size_t i = static_cast<size_t>((static_cast<int64_t>(b) * C + c) * N + k);
        (*xhat)[i] = ((*xhat)[i] - mu[c]) * (*istd)[c];
        out[i] = gamma[c] * (*xhat)[i] + beta[c];
      }

  const bool train = mode == Mode::kTrain;
  Tensor gamma_cap = gamma;
  return make_node(
      s, std::move(out), "batch_norm", {x, gamma, beta},
      [=](const Tensor& g) {
        // hand-coded batch-norm backward; produces constant tensors, hence
        // this op is excluded from second-order paths
        std::vector<double> dx(g.numel()), dgamma(C, 0.0), dbeta(C, 0.0);
        std::vector<double> sum_dy(C, 0.0), sum_dy_xhat(C, 0.0);
        for (int b = 0; b < B; ++b)
          for (int c = 0; c < C; ++c)
            for (int64_t k = 0; k < N; ++k) {
              size_t i = static_cast<size_t>((static_cast<int64_t>(b) * C + c) * N + k);
              dbeta[c] += g[static_cast<int64_t>(i)];
              dgamma[c] += g[static_cast<int64_t>(i)] * (*xhat)[i];
              sum_dy[c] += g[static_cast<int64_t>(i)];
              sum_dy_xhat[c] += g[static_cast<int64_t>(i)] * (*xhat)[i];
            }
        const double md = static_cast<double>(m);
        for (int b = 0; b < B; ++b)
          for (int c = 0; c < C; ++c) {
            double gam = gamma_cap[c];
            for (int64_t k = 0; k < N; ++k) {
              size_t i = static_cast<size_t>((static_cast<int64_t>(b) * C + c) * N + k);
              double dxhat = g[static_cast<int64_t>(i)] * gam;
              if (train) {
                dx[i] = (*istd)[c] *
                        (dxhat - (gam * sum_dy[c] + gam * sum_dy_xhat[c] * (*xhat)[i]) / md);
              } else {
                dx[i] = dxhat * (*istd)[c];
              }
            }
          }
        return std::vector<Tensor>{Tensor::from(s, std::move(dx)),
                                   Tensor::from({C}, std::move(dgamma)),
                                   Tensor::from({C}, std::move(dbeta))};
      },
      /*second_order_ok=*/false);
}

std::pair<Tensor, Tensor> channel_stats(const Tensor& x, double eps) {
  if (x.shape().size() != 3) shape_error("channel_stats", "expected [B,C,N]");
  const int N = x.shape()[2];
  if (N < 1) shape_error("channel_stats", "N >= 1 required");
  Tensor mu = mean_axis(x, 2);                           // [B,C]
  Tensor diff = sub(x, expand_axis(mu, 2, N));           // [B,C,N]
  Tensor var = mean_axis(mul(diff, diff), 2);            // [B,C]
  Tensor sigma = sqrt_elem(add_scalar(var, eps));
  return {mu, sigma};
}

Tensor instance_affine(const Tensor& x, const Tensor& scale, const Tensor& shift, double eps) {
  if (x.shape().size() != 3) shape_error("instance_affine", "expected [B,C,N]");
  const int B = x.shape()[0], C = x.shape()[1], N = x.shape()[2];
  if (scale.shape() != Shape{B, C} || shift.shape() != Shape{B, C})
    shape_error("instance_affine", "scale/shift must be [B,C]");
  if (N < 1) shape_error("instance_affine", "N >= 1 required");

  auto xhat = std::make_shared<std::vector<double>>(static_cast<size_t>(B) * C * N);
  auto istd = std::make_shared<std::vector<double>>(static_cast<size_t>(B) * C);
  std::vector<double> out(xhat->size());
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const int64_t base = (static_cast<int64_t>(b) * C + c) * N;
      double mu = 0.0;
      for (int n = 0; n < N; ++n) mu += x[base + n];
      mu /= static_cast<double>(N);
      double var = 0.0;
      for (int n = 0; n < N; ++n) {
        double dd = x[base + n] - mu;
        var += dd * dd;
      }
      var /= static_cast<double>(N);
      const double is = 1.0 / std::sqrt(var + eps);
      (*istd)[static_cast<size_t>(b) * C + c] = is;
      const double ys = scale[static_cast<int64_t>(b) * C + c];
      const double yb = shift[static_cast<int64_t>(b) * C + c];
      for (int n = 0; n < N; ++n) {
        double h = (x[base + n] - mu) * is;
        (*xhat)[static_cast<size_t>(base + n)] = h;
        out[static_cast<size_t>(base + n)] = ys * h + yb;
      }
    }
  return make_node(
      x.shape(), std::move(out), "instance_affine", {x, scale, shift},
      [xhat, istd, scale, B, C, N](const Tensor& g) {
        std::vector<double> dx(xhat->size()), ds(static_cast<size_t>(B) * C),
            db(static_cast<size_t>(B) * C);
        for (int b = 0; b < B; ++b)
          for (int c = 0; c < C; ++c) {
            const int64_t base = (static_cast<int64_t>(b) * C + c) * N;
            double s1 = 0.0, s2 = 0.0;  // sum g, sum g*xhat
            for (int n = 0; n < N; ++n) {
              s1 += g[base + n];
              s2 += g[base + n] * (*xhat)[static_cast<size_t>(base + n)];
            }
            const size_t bc = static_cast<size_t>(b) * C + c;
            db[bc] = s1;
            ds[bc] = s2;
            const double k = scale[static_cast<int64_t>(bc)] * (*istd)[bc];
            const double m1 = s1 / static_cast<double>(N), m2 = s2 / static_cast<double>(N);
            for (int n = 0; n < N; ++n)
              dx[static_cast<size_t>(base + n)] =
                  k * (g[base + n] - m1 - (*xhat)[static_cast<size_t>(base + n)] * m2);
          }
        return std::vector<Tensor>{Tensor::from({B, C, N}, std::move(dx)),
                                   Tensor::from({B, C}, std::move(ds)),
                                   Tensor::from({B, C}, std::move(db))};
      },
      /*second_order_ok=*/false);
}

Tensor pool_points(const Tensor& x, PoolKind kind) {
  if (x.shape().size() != 3) shape_error("pool_points", "expected [B,C,N]");
  return kind == PoolKind::kMax ? max_axis(x, 2) : mean_axis(x, 2);
}

// ---------------- autograd drivers ----------------

namespace {

void topo_sort(TensorNode* root, std::vector<TensorNode*>& order) {
  std::unordered_set<TensorNode*> visited;
  std::vector<std::pair<TensorNode*, size_t>> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      TensorNode* child = node->inputs[next].node();
      ++next;
      if (child->requires_grad && !visited.count(child)) {
        visited.insert(child);
        stack.push_back({child, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
}

// Propagates `seed` from `out` down the graph; returns accumulated grads.
std::unordered_map<TensorNode*, Tensor> run_backward(const Tensor& out, const Tensor& seed,
                                                     bool create_graph) {
  if (!out.requires_grad())
    throw std::runtime_error("backward: output does not require grad");
  std::vector<TensorNode*> order;
  topo_sort(out.node(), order);

  if (create_graph) {
    for (TensorNode* n : order)
      if (n->backward_fn && !n->second_order_ok)
        throw std::runtime_error("gradients: op '" + n->op + "' has no second-order support");
  }

  std::unordered_map<TensorNode*, Tensor> grads;
  grads[out.node()] = seed;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* n = *it;
    auto gi = grads.find(n);
    if (gi == grads.end() || !n->backward_fn) continue;
    Tensor gout = gi->second;
    std::vector<Tensor> in_grads = n->backward_fn(gout);
    for (size_t i = 0; i < n->inputs.size(); ++i) {
      TensorNode* child = n->inputs[i].node();
      if (!child->requires_grad) continue;
      auto ci = grads.find(child);
      if (ci == grads.end())
        grads[child] = in_grads[i];
      else
        ci->second = add(ci->second, in_grads[i]);
    }
  }
  return grads;
}

}  // namespace

void backward(const Tensor& out) {
  if (out.numel() != 1) throw std::invalid_argument("backward: loss must be scalar");
  backward(out, Tensor::full(out.shape(), 1.0));
}

void backward(const Tensor& out, const Tensor& seed) {
  if (seed.shape() != out.shape())
    throw std::invalid_argument("backward: seed shape mismatch");
  NoGradGuard ng;
  auto grads = run_backward(out, seed, false);
  for (auto& [node, g] : grads) {
    if (node->backward_fn || !node->requires_grad) continue;  // leaves only
    if (node->grad_buf.empty()) node->grad_buf.assign(node->data.size(), 0.0);
    for (size_t i = 0; i < node->grad_buf.size(); ++i) node->grad_buf[i] += g[static_cast<int64_t>(i)];
  }
}

std::vector<Tensor> gradients(const Tensor& out, const std::vector<Tensor>& wrt,
                              bool create_graph) {
  if (out.numel() != 1) throw std::invalid_argument("gradients: output must be scalar");
  std::unordered_map<TensorNode*, Tensor> grads;
  Tensor seed = Tensor::full(out.shape(), 1.0);
  if (create_graph) {
    grads = run_backward(out, seed, true);
  } else {
    NoGradGuard ng;
    grads = run_backward(out, seed, false);
  }
  std::vector<Tensor> result;
  for (const auto& w : wrt) {
    auto it = grads.find(w.node());
    if (it == grads.end())
      throw std::runtime_error("gradients: output does not depend on requested tensor");
    result.push_back(it->second);
  }
  return result;
}

Tensor input_gradient_node(const Tensor& scalar_out, const Tensor& wrt) {
  return gradients(scalar_out, {wrt}, /*create_graph=*/true)[0];
}

bool valid_param_name(const std::string& name) {
  if (name.empty()) return false;
  for (char c : name)
    if (!((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_' || c == '.')) return false;
  return true;
}

}  // namespace starnet
