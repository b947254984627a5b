#pragma once

// Dense 64-bit tensors with reverse-mode automatic differentiation.
// A computation graph is the set of nodes reachable from a loss tensor;
// nodes are confined to one thread of execution, distinct graphs may run
// in parallel.

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace convsrl {

using Shape = std::vector<int>;

int64_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated on demand, same length as value
  bool requires_grad = false;
  std::string name;
  std::vector<std::shared_ptr<TensorNode>> inputs;
  // Accumulates this node's grad into its inputs' grads.
  std::function<void(TensorNode&)> backward_fn;
  int64_t id = 0;  // creation order; inputs always precede their consumers

  bool is_leaf() const { return !backward_fn; }
};

// Value-semantics handle sharing an underlying node.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor constant(const Shape& shape, std::vector<double> data);
  static Tensor scalar(double v);
  // Leaf with requires_grad set; 'name' shows up in checkpoints and
  // grad-check reports.
  static Tensor param(const Shape& shape, std::vector<double> data,
                      std::string name);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t numel() const { return static_cast<int64_t>(node_->value.size()); }
  int dim(int axis) const { return node_->shape[axis]; }
  bool requires_grad() const { return node_->requires_grad; }
  const std::string& name() const { return node_->name; }

  std::vector<double>& values() { return node_->value; }
  const std::vector<double>& values() const { return node_->value; }
  std::vector<double>& grad() { return node_->grad; }
  const std::vector<double>& grad() const { return node_->grad; }

  double item() const;              // scalar tensors only
  double at(int i) const;           // flat index
  double at(int r, int c) const;    // 2-d index
  void zero_grad();

  std::shared_ptr<TensorNode> node() const { return node_; }
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<TensorNode> node_;
};

// Elementwise, all shapes must match.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul_elementwise(const Tensor& a, const Tensor& b);
Tensor abs_elementwise(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor exp_elementwise(const Tensor& x);

// y = c * x for a fixed scalar c.
Tensor scalar_scale(const Tensor& x, double c);
// y = s * x where s is a scalar tensor (gradient flows into s as well).
Tensor scalar_bcast_mul(const Tensor& x, const Tensor& s);

// x: [m, n], bias: [n]; adds bias to every row.
Tensor add_bias(const Tensor& x, const Tensor& bias);

// Plain product and the A * B^T variant used by attention scores.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matmul_nt(const Tensor& a, const Tensor& b);

// 2-d concatenation along axis 0 or 1 (1-d tensors: axis 0 only).
Tensor concat(const std::vector<Tensor>& parts, int axis);

// Softmax over the last axis (rows of a matrix, or a whole 1-d vector).
// -inf entries get exactly zero weight; a row of all -inf is an error.
Tensor softmax(const Tensor& x);

// Sum of all elements -> scalar.
Tensor sum(const Tensor& x);

// x: [n, d], segment_ids: n values in [0, num_segments). Row k of the
// result is the per-dimension max over rows with segment id k. Ties break
// toward the lowest row index; gradient flows only to argmax positions.
Tensor max_pool_segments(const Tensor& x, const std::vector<int>& segment_ids,
                         int num_segments);

// table: [V, d], ids: n row indices -> [n, d]; backward scatter-adds.
Tensor gather_rows(const Tensor& table, const std::vector<int>& ids);

// Row-wise layer normalization with learnable gain/bias of size [d].
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

// -log softmax(logits)[target]; logits is 1-d.
Tensor cross_entropy(const Tensor& logits, int target_index);
// Sum over rows of weight[i] * -log softmax(logits[i])[target[i]].
// Null weights means all ones. Zero-weight rows contribute exactly 0.
Tensor cross_entropy_rows(const Tensor& logits, const std::vector<int>& targets,
                          const std::vector<double>* weights = nullptr);

// Reverse-mode sweep from a scalar loss. Non-leaf grads are recomputed
// from scratch on every call; leaf (parameter) grads accumulate across
// calls until zero_grad.
void backward(const Tensor& loss);

// ---------------------------------------------------------------------
// Finite-difference gradient checking.

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  int64_t checked = 0;
  bool ok = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_err = 0.0;
  bool ok = true;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tol = 1e-4;
  // Elements failing at 'step' are re-tried at these steps; an element
  // passes if any step agrees. A wrong analytic gradient fails at every
  // step, while a ReLU kink straddled by one step window does not.
  std::vector<double> retry_steps = {1e-6, 1e-7};
  // Cap on elements checked per parameter (0 = all), subsampled
  // deterministically.
  int64_t max_elements_per_param = 0;
  uint64_t subsample_seed = 0;
};

// f rebuilds the forward graph from the current parameter values and
// returns the scalar loss. Analytic grads come from one backward sweep,
// numeric ones from central differences on re-evaluations of f.
GradCheckReport grad_check(const std::function<Tensor()>& f,
                           const std::vector<Tensor>& params,
                           const GradCheckOptions& opts = {});

}  // namespace convsrl
