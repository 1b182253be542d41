#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace bafdet {

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorNode;

/// Dense f64 tensor with reverse-mode autodiff. Copies are shallow
/// (shared storage); ops record the graph needed by backward().
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t size() const;
  int dim(int i) const;

  std::vector<double>& data();
  const std::vector<double>& data() const;

  bool has_grad() const;
  std::vector<double>& grad();              // allocates zeros on first use
  const std::vector<double>& grad() const;  // requires has_grad()

  bool requires_grad() const;
  Tensor& set_requires_grad(bool b = true);
  void zero_grad();

  double item() const;  // scalar tensors only

  std::shared_ptr<TensorNode> node() const { return node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until touched
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;  // scatters node.grad to parents

  std::vector<double>& ensure_grad();
};

// ---- differentiable operations -------------------------------------------

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int pad);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& m);
Tensor softmax_rows(const Tensor& m);
Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& t, double c);
Tensor relu(const Tensor& t);
Tensor maxpool2(const Tensor& t);           // C x W x H, odd extents truncate
Tensor upsample2_nearest(const Tensor& t);  // C x W x H
Tensor reshape(const Tensor& t, Shape shape);
Tensor normalize_columns(const Tensor& m, double eps = 1e-12);
Tensor sum(const Tensor& t);  // scalar
Tensor sigmoid(const Tensor& t);
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Builds a node for a custom differentiable operation. backward_fn must
/// scatter the node's grad into the parents' grads (additively).
Tensor make_op(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
               std::function<void(TensorNode&)> backward_fn);

/// Reverse-mode sweep from a scalar loss. Gradients accumulate additively;
/// call zero_grad on parameters between steps.
void backward(const Tensor& loss);

// ---- gradient verification ------------------------------------------------

struct GradCheckEntry {
  int input_index = 0;
  std::size_t coord = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double error = 0.0;  // relative, or absolute below the fallback scale
};

struct GradCheckReport {
  double max_error = 0.0;
  GradCheckEntry worst;
  std::vector<GradCheckEntry> entries;  // sorted by error, descending
};

/// Central-difference check of fn's gradient w.r.t. each tensor in inputs.
/// fn must rebuild its graph from the inputs on every call.
GradCheckReport grad_check(const std::function<Tensor(std::vector<Tensor>&)>& fn,
                           std::vector<Tensor>& inputs, double eps = 1e-4);

// ---- initialization -------------------------------------------------------

/// Xavier-uniform fill in [-sqrt(6/(fan_in+fan_out)), +...].
void init_xavier(Tensor& t, int fan_in, int fan_out, std::uint64_t seed);

/// Deterministic stream of doubles, stable across platforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);
  std::uint64_t next_u64();
  double uniform();  // [0, 1)
  double uniform(double lo, double hi);
  int uniform_int(int lo, int hi);  // inclusive bounds
  double normal();

 private:
  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

/// Mixes two seeds into one (per-sample / per-iteration streams).
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace bafdet
