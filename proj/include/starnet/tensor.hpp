#pragma once

// Reverse-mode autodiff engine for the StarNet networks.
//
// Tensors are dense row-major f64 buffers wrapped in shared graph nodes.
// Every op records a backward closure that itself builds tensor ops, so
// gradients can be differentiated again (needed by the WGAN-GP penalty).
// Ops outside the discriminator subset mark themselves second_order_ok=false
// and are rejected when a re-entrant gradient is requested through them.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <random>
#include <utility>
#include <vector>

namespace starnet {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

class Tensor;

struct TensorNode {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  bool second_order_ok = true;
  std::string op = "leaf";
  std::vector<Tensor> inputs;
  // maps d(out) to per-input gradients, in input order
  std::function<std::vector<Tensor>(const Tensor&)> backward_fn;
  std::vector<double> grad_buf;  // leaf accumulator, lazily sized
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor randn(Shape shape, std::mt19937_64& rng, double stddev = 1.0,
                      bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t numel() const { return static_cast<int64_t>(node_->data.size()); }
  std::span<const double> data() const { return node_->data; }
  std::span<double> mutable_data() { return node_->data; }
  double item() const;
  double operator[](int64_t i) const { return node_->data[static_cast<size_t>(i)]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v);

  bool has_grad() const { return !node_->grad_buf.empty(); }
  std::span<const double> grad() const;
  void zero_grad();

  TensorNode* node() const { return node_.get(); }

  static Tensor wrap(std::shared_ptr<TensorNode> n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

 private:
  std::shared_ptr<TensorNode> node_;
};

// Disables graph construction while alive (eval-mode forwards, backward
// internals when no create_graph requested).
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

// --- primitives ---
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor neg(const Tensor& a);
Tensor recip(const Tensor& a);
Tensor sqrt_elem(const Tensor& a);
Tensor matmul(const Tensor& a, const Tensor& b);   // [M,K] x [K,N]
Tensor transpose2d(const Tensor& a);
Tensor transpose12(const Tensor& a);               // [B,X,Y] -> [B,Y,X]
Tensor reshape(const Tensor& a, Shape shape);
Tensor sum_all(const Tensor& a);                   // -> scalar [1]
Tensor sum_axis(const Tensor& a, int axis);        // removes axis
Tensor mean_axis(const Tensor& a, int axis);
Tensor expand_axis(const Tensor& a, int axis, int n);  // inserts replicated axis
Tensor max_axis(const Tensor& a, int axis);        // ties -> lowest index
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice_axis(const Tensor& a, int axis, int start, int len);
Tensor detach(const Tensor& a);

// --- activations ---
Tensor leaky_relu(const Tensor& x, double slope);
Tensor tanh_act(const Tensor& x);
Tensor sigmoid_act(const Tensor& x);

// --- network building blocks ---
Tensor affine(const Tensor& x, const Tensor& W, const Tensor& b);          // [B,I]x[I,O]+[O]
Tensor pointwise_conv(const Tensor& x, const Tensor& W, const Tensor& b);  // [B,C,N]x[C,C']+[C']

enum class Mode { kTrain, kEval };
enum class PoolKind { kMax, kAvg };

struct RunningStats {
  std::vector<double> mean;
  std::vector<double> var;
  bool initialized = false;
};

// Batch normalization over [B,C] or [B,C,N] (per-channel). Train mode updates
// `state` with momentum 0.9. Not second-order differentiable.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  RunningStats& state, Mode mode, double momentum = 0.9,
                  double eps = 1e-5);

// Per-instance per-channel mean and std over the point axis of [B,C,N].
// sigma = sqrt(var + 1e-5).
std::pair<Tensor, Tensor> channel_stats(const Tensor& x, double eps = 1e-5);

// Instance normalization over the point axis of [B,C,N] followed by a
// per-(item,channel) scale and shift (each [B,C]). Fused into a single node
// with a hand-written backward; not second-order differentiable.
Tensor instance_affine(const Tensor& x, const Tensor& scale, const Tensor& shift,
                       double eps = 1e-5);

Tensor pool_points(const Tensor& x, PoolKind kind);  // [B,C,N] -> [B,C]

// --- autograd drivers ---
void backward(const Tensor& out);                      // scalar out, seed = 1
void backward(const Tensor& out, const Tensor& seed);  // seed shape == out shape

// torch.autograd.grad analogue. With create_graph the returned tensors are
// graph nodes differentiable wrt anything upstream; ops lacking second-order
// support on the traversed graph raise std::runtime_error.
std::vector<Tensor> gradients(const Tensor& out, const std::vector<Tensor>& wrt,
                              bool create_graph);

// Gradient of a scalar wrt `wrt`, as a differentiable graph node.
Tensor input_gradient_node(const Tensor& scalar_out, const Tensor& wrt);

struct Parameter {
  std::string name;  // [a-z0-9_.]+
  Tensor tensor;
};

bool valid_param_name(const std::string& name);

}  // namespace starnet
