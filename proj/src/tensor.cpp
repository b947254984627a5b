#include "convsrl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace convsrl {

namespace {

int64_t g_next_id = 1;

std::shared_ptr<TensorNode> make_node(Shape shape, std::vector<double> value) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->id = g_next_id++;
  return n;
}

[[noreturn]] void fail(const std::string& op, const std::string& msg) {
  throw std::invalid_argument(op + ": " + msg);
}

void check_same_shape(const std::string& op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    fail(op, "shape mismatch " + shape_str(a.shape()) + " vs " +
                 shape_str(b.shape()));
}

bool any_requires(const std::vector<Tensor>& ts) {
  for (const auto& t : ts)
    if (t.requires_grad()) return true;
  return false;
}

void ensure_grad(TensorNode& n) {
  if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), 0.0);
}

// Wires up a result node: output requires grad iff any input does, and
// only then keeps the inputs and the backward closure.
Tensor make_op(Shape shape, std::vector<double> value,
               std::vector<Tensor> inputs,
               std::function<void(TensorNode&)> backward_fn) {
  auto n = make_node(std::move(shape), std::move(value));
  if (any_requires(inputs)) {
    n->requires_grad = true;
    n->inputs.reserve(inputs.size());
    for (auto& t : inputs) n->inputs.push_back(t.node());
    n->backward_fn = std::move(backward_fn);
  }
  return Tensor(n);
}

// C = A[m,k] * B[k,n]
void mm(const double* a, const double* b, double* c, int m, int k, int n,
        bool accumulate) {
  if (!accumulate) std::fill(c, c + int64_t(m) * n, 0.0);
  for (int i = 0; i < m; ++i) {
    const double* arow = a + int64_t(i) * k;
    double* crow = c + int64_t(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + int64_t(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C = A[m,k] * B[n,k]^T
void mm_nt(const double* a, const double* b, double* c, int m, int k, int n,
           bool accumulate) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + int64_t(i) * k;
    double* crow = c + int64_t(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* brow = b + int64_t(j) * k;
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += arow[p] * brow[p];
      if (accumulate)
        crow[j] += s;
      else
        crow[j] = s;
    }
  }
}

// C = A[m,k]^T * B[m,n]  -> [k, n]
void mm_tn(const double* a, const double* b, double* c, int m, int k, int n,
           bool accumulate) {
  if (!accumulate) std::fill(c, c + int64_t(k) * n, 0.0);
  for (int i = 0; i < m; ++i) {
    const double* arow = a + int64_t(i) * k;
    const double* brow = b + int64_t(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      double* crow = c + int64_t(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void check_matrix(const std::string& op, const Tensor& t) {
  if (t.shape().size() != 2)
    fail(op, "expected a 2-d tensor, got " + shape_str(t.shape()));
}

}  // namespace

int64_t numel_of(const Shape& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  auto n = make_node(shape, std::vector<double>(numel_of(shape), 0.0));
  n->requires_grad = requires_grad;
  return Tensor(n);
}

Tensor Tensor::constant(const Shape& shape, std::vector<double> data) {
  if (static_cast<int64_t>(data.size()) != numel_of(shape))
    fail("constant", "data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
  return Tensor(make_node(shape, std::move(data)));
}

Tensor Tensor::scalar(double v) { return Tensor(make_node({}, {v})); }

Tensor Tensor::param(const Shape& shape, std::vector<double> data,
                     std::string name) {
  if (static_cast<int64_t>(data.size()) != numel_of(shape))
    fail("param", name + ": data length does not match shape");
  auto n = make_node(shape, std::move(data));
  n->requires_grad = true;
  n->name = std::move(name);
  return Tensor(n);
}

double Tensor::item() const {
  if (numel() != 1)
    fail("item", "tensor is not scalar, shape " + shape_str(shape()));
  return node_->value[0];
}

double Tensor::at(int i) const { return node_->value[i]; }

double Tensor::at(int r, int c) const {
  return node_->value[int64_t(r) * node_->shape[1] + c];
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  std::vector<double> out(a.values());
  for (size_t i = 0; i < out.size(); ++i) out[i] += b.values()[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](TensorNode& self) {
    for (int side = 0; side < 2; ++side) {
      auto& in = *self.inputs[side];
      if (!in.requires_grad) continue;
      ensure_grad(in);
      for (size_t i = 0; i < self.grad.size(); ++i) in.grad[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape("sub", a, b);
  std::vector<double> out(a.values());
  for (size_t i = 0; i < out.size(); ++i) out[i] -= b.values()[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](TensorNode& self) {
    auto& lhs = *self.inputs[0];
    if (lhs.requires_grad) {
      ensure_grad(lhs);
      for (size_t i = 0; i < self.grad.size(); ++i) lhs.grad[i] += self.grad[i];
    }
    auto& rhs = *self.inputs[1];
    if (rhs.requires_grad) {
      ensure_grad(rhs);
      for (size_t i = 0; i < self.grad.size(); ++i) rhs.grad[i] -= self.grad[i];
    }
  });
}

Tensor mul_elementwise(const Tensor& a, const Tensor& b) {
  check_same_shape("mul_elementwise", a, b);
  std::vector<double> out(a.values());
  for (size_t i = 0; i < out.size(); ++i) out[i] *= b.values()[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](TensorNode& self) {
    auto& lhs = *self.inputs[0];
    auto& rhs = *self.inputs[1];
    if (lhs.requires_grad) {
      ensure_grad(lhs);
      for (size_t i = 0; i < self.grad.size(); ++i)
        lhs.grad[i] += self.grad[i] * rhs.value[i];
    }
    if (rhs.requires_grad) {
      ensure_grad(rhs);
      for (size_t i = 0; i < self.grad.size(); ++i)
        rhs.grad[i] += self.grad[i] * lhs.value[i];
    }
  });
}

Tensor abs_elementwise(const Tensor& x) {
  std::vector<double> out(x.values());
  for (auto& v : out) v = std::fabs(v);
  return make_op(x.shape(), std::move(out), {x}, [](TensorNode& self) {
    auto& in = *self.inputs[0];
    ensure_grad(in);
    for (size_t i = 0; i < self.grad.size(); ++i) {
      const double v = in.value[i];
      const double sign = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
      in.grad[i] += self.grad[i] * sign;
    }
  });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.values());
  for (auto& v : out) v = v > 0.0 ? v : 0.0;
  return make_op(x.shape(), std::move(out), {x}, [](TensorNode& self) {
    auto& in = *self.inputs[0];
    ensure_grad(in);
    for (size_t i = 0; i < self.grad.size(); ++i)
      if (in.value[i] > 0.0) in.grad[i] += self.grad[i];
  });
}

Tensor exp_elementwise(const Tensor& x) {
  std::vector<double> out(x.values());
  for (auto& v : out) v = std::exp(v);
  return make_op(x.shape(), std::move(out), {x}, [](TensorNode& self) {
    auto& in = *self.inputs[0];
    ensure_grad(in);
    for (size_t i = 0; i < self.grad.size(); ++i)
      in.grad[i] += self.grad[i] * self.value[i];
  });
}

Tensor scalar_scale(const Tensor& x, double c) {
  std::vector<double> out(x.values());
  for (auto& v : out) v *= c;
  return make_op(x.shape(), std::move(out), {x}, [c](TensorNode& self) {
    auto& in = *self.inputs[0];
    ensure_grad(in);
    for (size_t i = 0; i < self.grad.size(); ++i)
      in.grad[i] += self.grad[i] * c;
  });
}

Tensor scalar_bcast_mul(const Tensor& x, const Tensor& s) {
  if (s.numel() != 1)
    fail("scalar_bcast_mul", "scale must be scalar, got " + shape_str(s.shape()));
  const double sv = s.values()[0];
  std::vector<double> out(x.values());
  for (auto& v : out) v *= sv;
  return make_op(x.shape(), std::move(out), {x, s}, [](TensorNode& self) {
    auto& in = *self.inputs[0];
    auto& sc = *self.inputs[1];
    const double sv = sc.value[0];
    if (in.requires_grad) {
      ensure_grad(in);
      for (size_t i = 0; i < self.grad.size(); ++i)
        in.grad[i] += self.grad[i] * sv;
    }
    if (sc.requires_grad) {
      ensure_grad(sc);
      double acc = 0.0;
      for (size_t i = 0; i < self.grad.size(); ++i)
        acc += self.grad[i] * in.value[i];
      sc.grad[0] += acc;
    }
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  check_matrix("add_bias", x);
  if (bias.shape().size() != 1 || bias.dim(0) != x.dim(1))
    fail("add_bias", "bias " + shape_str(bias.shape()) + " does not match " +
                         shape_str(x.shape()));
  const int m = x.dim(0), n = x.dim(1);
  std::vector<double> out(x.values());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[int64_t(i) * n + j] += bias.at(j);
  return make_op(x.shape(), std::move(out), {x, bias}, [m, n](TensorNode& self) {
    auto& in = *self.inputs[0];
    auto& b = *self.inputs[1];
    if (in.requires_grad) {
      ensure_grad(in);
      for (size_t i = 0; i < self.grad.size(); ++i) in.grad[i] += self.grad[i];
    }
    if (b.requires_grad) {
      ensure_grad(b);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) b.grad[j] += self.grad[int64_t(i) * n + j];
    }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_matrix("matmul", a);
  check_matrix("matmul", b);
  if (a.dim(1) != b.dim(0))
    fail("matmul", "incompatible shapes " + shape_str(a.shape()) + " x " +
                       shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(int64_t(m) * n);
  mm(a.values().data(), b.values().data(), out.data(), m, k, n, false);
  return make_op({m, n}, std::move(out), {a, b}, [m, k, n](TensorNode& self) {
    auto& lhs = *self.inputs[0];
    auto& rhs = *self.inputs[1];
    if (lhs.requires_grad) {
      ensure_grad(lhs);
      // dA += G * B^T
      mm_nt(self.grad.data(), rhs.value.data(), lhs.grad.data(), m, n, k, true);
    }
    if (rhs.requires_grad) {
      ensure_grad(rhs);
      // dB += A^T * G
      mm_tn(lhs.value.data(), self.grad.data(), rhs.grad.data(), m, k, n, true);
    }
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  check_matrix("matmul_nt", a);
  check_matrix("matmul_nt", b);
  if (a.dim(1) != b.dim(1))
    fail("matmul_nt", "incompatible shapes " + shape_str(a.shape()) + " x " +
                          shape_str(b.shape()) + "^T");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
  std::vector<double> out(int64_t(m) * n);
  mm_nt(a.values().data(), b.values().data(), out.data(), m, k, n, false);
  return make_op({m, n}, std::move(out), {a, b}, [m, k, n](TensorNode& self) {
    auto& lhs = *self.inputs[0];
    auto& rhs = *self.inputs[1];
    if (lhs.requires_grad) {
      ensure_grad(lhs);
      // dA += G * B
      mm(self.grad.data(), rhs.value.data(), lhs.grad.data(), m, n, k, true);
    }
    if (rhs.requires_grad) {
      ensure_grad(rhs);
      // dB += G^T * A
      mm_tn(self.grad.data(), lhs.value.data(), rhs.grad.data(), m, n, k, true);
    }
  });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) fail("concat", "no inputs");
  const auto& first = parts.front().shape();
  if (first.size() == 1) {
    if (axis != 0) fail("concat", "1-d tensors concatenate on axis 0 only");
    int total = 0;
    for (const auto& p : parts) {
      if (p.shape().size() != 1)
        fail("concat", "rank mismatch " + shape_str(p.shape()));
      total += p.dim(0);
    }
    std::vector<double> out;
    out.reserve(total);
    for (const auto& p : parts)
      out.insert(out.end(), p.values().begin(), p.values().end());
    std::vector<int> sizes;
    for (const auto& p : parts) sizes.push_back(p.dim(0));
    return make_op({total}, std::move(out), parts, [sizes](TensorNode& self) {
      int64_t off = 0;
      for (size_t k = 0; k < self.inputs.size(); ++k) {
        auto& in = *self.inputs[k];
        if (in.requires_grad) {
          ensure_grad(in);
          for (int i = 0; i < sizes[k]; ++i) in.grad[i] += self.grad[off + i];
        }
        off += sizes[k];
      }
    });
  }
  if (first.size() != 2 || (axis != 0 && axis != 1))
    fail("concat", "supports 2-d tensors on axis 0/1, got axis " +
                       std::to_string(axis));
  if (axis == 0) {
    const int n = parts.front().dim(1);
    int m = 0;
    for (const auto& p : parts) {
      check_matrix("concat", p);
      if (p.dim(1) != n)
        fail("concat", "column mismatch " + shape_str(p.shape()));
      m += p.dim(0);
    }
    std::vector<double> out;
    out.reserve(int64_t(m) * n);
    for (const auto& p : parts)
      out.insert(out.end(), p.values().begin(), p.values().end());
    std::vector<int64_t> sizes;
    for (const auto& p : parts) sizes.push_back(p.numel());
    return make_op({m, n}, std::move(out), parts, [sizes](TensorNode& self) {
      int64_t off = 0;
      for (size_t k = 0; k < self.inputs.size(); ++k) {
        auto& in = *self.inputs[k];
        if (in.requires_grad) {
          ensure_grad(in);
          for (int64_t i = 0; i < sizes[k]; ++i)
            in.grad[i] += self.grad[off + i];
        }
        off += sizes[k];
      }
    });
  }
  // axis == 1
  const int m = parts.front().dim(0);
  int n = 0;
  std::vector<int> widths;
  for (const auto& p : parts) {
    check_matrix("concat", p);
    if (p.dim(0) != m) fail("concat", "row mismatch " + shape_str(p.shape()));
    widths.push_back(p.dim(1));
    n += p.dim(1);
  }
  std::vector<double> out(int64_t(m) * n);
  int off = 0;
  for (size_t k = 0; k < parts.size(); ++k) {
    const int w = widths[k];
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < w; ++j)
        out[int64_t(i) * n + off + j] = parts[k].at(i, j);
    off += w;
  }
  return make_op({m, n}, std::move(out), parts, [m, n, widths](TensorNode& self) {
    int off = 0;
    for (size_t k = 0; k < self.inputs.size(); ++k) {
      const int w = widths[k];
      auto& in = *self.inputs[k];
      if (in.requires_grad) {
        ensure_grad(in);
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < w; ++j)
            in.grad[int64_t(i) * w + j] += self.grad[int64_t(i) * n + off + j];
      }
      off += w;
    }
  });
}

Tensor softmax(const Tensor& x) {
  const auto& shape = x.shape();
  int rows, cols;
  if (shape.size() == 1) {
    rows = 1;
    cols = shape[0];
  } else if (shape.size() == 2) {
    rows = shape[0];
    cols = shape[1];
  } else {
    fail("softmax", "expected 1-d or 2-d tensor, got " + shape_str(shape));
  }
  if (cols == 0) fail("softmax", "empty rows");
  std::vector<double> out(x.values().size());
  for (int i = 0; i < rows; ++i) {
    const double* row = x.values().data() + int64_t(i) * cols;
    double* orow = out.data() + int64_t(i) * cols;
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < cols; ++j) mx = std::max(mx, row[j]);
    if (!std::isfinite(mx))
      fail("softmax", "row " + std::to_string(i) + " has no finite entries");
    double z = 0.0;
    for (int j = 0; j < cols; ++j) {
      orow[j] = std::exp(row[j] - mx);
      z += orow[j];
    }
    for (int j = 0; j < cols; ++j) orow[j] /= z;
  }
  return make_op(shape, std::move(out), {x}, [rows, cols](TensorNode& self) {
    auto& in = *self.inputs[0];
    ensure_grad(in);
    for (int i = 0; i < rows; ++i) {
      const double* y = self.value.data() + int64_t(i) * cols;
      const double* g = self.grad.data() + int64_t(i) * cols;
      double* gi = in.grad.data() + int64_t(i) * cols;
      double dot = 0.0;
      for (int j = 0; j < cols; ++j) dot += g[j] * y[j];
      for (int j = 0; j < cols; ++j) gi[j] += (g[j] - dot) * y[j];
    }
  });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  return make_op({}, {acc}, {x}, [](TensorNode& self) {
    auto& in = *self.inputs[0];
    ensure_grad(in);
    const double g = self.grad[0];
    for (auto& v : in.grad) v += g;
  });
}

Tensor max_pool_segments(const Tensor& x, const std::vector<int>& segment_ids,
                         int num_segments) {
  check_matrix("max_pool_segments", x);
  const int n = x.dim(0), d = x.dim(1);
  if (static_cast<int>(segment_ids.size()) != n)
    fail("max_pool_segments", "segment_ids length " +
                                  std::to_string(segment_ids.size()) +
                                  " does not match rows of " +
                                  shape_str(x.shape()));
  for (int id : segment_ids)
    if (id < 0 || id >= num_segments)
      fail("max_pool_segments", "segment id " + std::to_string(id) +
                                    " out of range [0," +
                                    std::to_string(num_segments) + ")");
  std::vector<double> out(int64_t(num_segments) * d,
                          -std::numeric_limits<double>::infinity());
  std::vector<int> argmax(int64_t(num_segments) * d, -1);
  for (int i = 0; i < n; ++i) {
    const int seg = segment_ids[i];
    for (int j = 0; j < d; ++j) {
      const double v = x.at(i, j);
      const int64_t o = int64_t(seg) * d + j;
      if (argmax[o] < 0 || v > out[o]) {  // strict: ties keep lowest index
        out[o] = v;
        argmax[o] = i;
      }
    }
  }
  for (int s = 0; s < num_segments; ++s)
    if (argmax[int64_t(s) * d] < 0)
      fail("max_pool_segments", "segment " + std::to_string(s) + " is empty");
  return make_op({num_segments, d}, std::move(out), {x},
                 [d, argmax](TensorNode& self) {
                   auto& in = *self.inputs[0];
                   ensure_grad(in);
                   for (size_t o = 0; o < self.grad.size(); ++o)
                     in.grad[int64_t(argmax[o]) * d + (o % d)] += self.grad[o];
                 });
}

Tensor gather_rows(const Tensor& table, const std::vector<int>& ids) {
  check_matrix("gather_rows", table);
  const int v = table.dim(0), d = table.dim(1);
  const int n = static_cast<int>(ids.size());
  for (int id : ids)
    if (id < 0 || id >= v)
      fail("gather_rows", "row id " + std::to_string(id) + " out of range [0," +
                              std::to_string(v) + ")");
  std::vector<double> out(int64_t(n) * d);
  for (int i = 0; i < n; ++i)
    std::copy_n(table.values().data() + int64_t(ids[i]) * d, d,
                out.data() + int64_t(i) * d);
  return make_op({n, d}, std::move(out), {table}, [d, ids](TensorNode& self) {
    auto& in = *self.inputs[0];
    ensure_grad(in);
    for (size_t i = 0; i < ids.size(); ++i)
      for (int j = 0; j < d; ++j)
        in.grad[int64_t(ids[i]) * d + j] += self.grad[int64_t(i) * d + j];
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  check_matrix("layer_norm", x);
  const int m = x.dim(0), d = x.dim(1);
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d})
    fail("layer_norm", "gain/bias must be [" + std::to_string(d) + "], got " +
                           shape_str(gain.shape()) + " and " +
                           shape_str(bias.shape()));
  std::vector<double> out(int64_t(m) * d);
  std::vector<double> xhat(int64_t(m) * d);
  std::vector<double> inv_std(m);
  for (int i = 0; i < m; ++i) {
    const double* row = x.values().data() + int64_t(i) * d;
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += row[j];
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= d;
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[i] = is;
    for (int j = 0; j < d; ++j) {
      const double h = (row[j] - mean) * is;
      xhat[int64_t(i) * d + j] = h;
      out[int64_t(i) * d + j] = gain.at(j) * h + bias.at(j);
    }
  }
  return make_op(
      {m, d}, std::move(out), {x, gain, bias},
      [m, d, xhat, inv_std](TensorNode& self) {
        auto& in = *self.inputs[0];
        auto& g = *self.inputs[1];
        auto& b = *self.inputs[2];
        if (g.requires_grad) ensure_grad(g);
        if (b.requires_grad) ensure_grad(b);
        if (in.requires_grad) ensure_grad(in);
        for (int i = 0; i < m; ++i) {
          const double* go = self.grad.data() + int64_t(i) * d;
          const double* xh = xhat.data() + int64_t(i) * d;
          if (g.requires_grad || b.requires_grad) {
            for (int j = 0; j < d; ++j) {
              if (g.requires_grad) g.grad[j] += go[j] * xh[j];
              if (b.requires_grad) b.grad[j] += go[j];
            }
          }
          if (!in.requires_grad) continue;
          // dxhat = go * gain; dx = (dxhat - mean(dxhat) - xhat*mean(dxhat*xhat)) / std
          double mean_dh = 0.0, mean_dh_xh = 0.0;
          for (int j = 0; j < d; ++j) {
            const double dh = go[j] * g.value[j];
            mean_dh += dh;
            mean_dh_xh += dh * xh[j];
          }
          mean_dh /= d;
          mean_dh_xh /= d;
          double* gi = in.grad.data() + int64_t(i) * d;
          for (int j = 0; j < d; ++j) {
            const double dh = go[j] * g.value[j];
            gi[j] += (dh - mean_dh - xh[j] * mean_dh_xh) * inv_std[i];
          }
        }
      });
}

namespace {

// Stable per-row cross entropy; returns loss and writes softmax into 'probs'.
double ce_row(const double* logits, int cols, int target, double* probs) {
  double mx = logits[0];
  for (int j = 1; j < cols; ++j) mx = std::max(mx, logits[j]);
  double z = 0.0;
  for (int j = 0; j < cols; ++j) {
    probs[j] = std::exp(logits[j] - mx);
    z += probs[j];
  }
  for (int j = 0; j < cols; ++j) probs[j] /= z;
  return std::log(z) + mx - logits[target];
}

}  // namespace

Tensor cross_entropy(const Tensor& logits, int target_index) {
  if (logits.shape().size() != 1)
    fail("cross_entropy", "expected 1-d logits, got " + shape_str(logits.shape()));
  const int cols = logits.dim(0);
  if (target_index < 0 || target_index >= cols)
    fail("cross_entropy", "target " + std::to_string(target_index) +
                              " out of range [0," + std::to_string(cols) + ")");
  std::vector<double> probs(cols);
  const double loss = ce_row(logits.values().data(), cols, target_index, probs.data());
  return make_op({}, {loss}, {logits},
                 [cols, target_index, probs](TensorNode& self) {
                   auto& in = *self.inputs[0];
                   ensure_grad(in);
                   const double g = self.grad[0];
                   for (int j = 0; j < cols; ++j) {
                     double p = probs[j];
                     if (j == target_index) p -= 1.0;
                     in.grad[j] += g * p;
                   }
                 });
}

Tensor cross_entropy_rows(const Tensor& logits, const std::vector<int>& targets,
                          const std::vector<double>* weights) {
  check_matrix("cross_entropy_rows", logits);
  const int m = logits.dim(0), cols = logits.dim(1);
  if (static_cast<int>(targets.size()) != m)
    fail("cross_entropy_rows", "targets length " +
                                   std::to_string(targets.size()) +
                                   " does not match " + shape_str(logits.shape()));
  if (weights && static_cast<int>(weights->size()) != m)
    fail("cross_entropy_rows", "weights length does not match rows");
  for (int t : targets)
    if (t < 0 || t >= cols)
      fail("cross_entropy_rows", "target " + std::to_string(t) +
                                     " out of range [0," + std::to_string(cols) +
                                     ")");
  std::vector<double> w(m, 1.0);
  if (weights) w = *weights;
  double total = 0.0;
  std::vector<double> probs(int64_t(m) * cols, 0.0);
  std::vector<char> active(m, 0);
  for (int i = 0; i < m; ++i) {
    if (w[i] == 0.0) continue;  // exact zero contribution
    active[i] = 1;
    total += w[i] * ce_row(logits.values().data() + int64_t(i) * cols, cols,
                           targets[i], probs.data() + int64_t(i) * cols);
  }
  return make_op({}, {total}, {logits},
                 [m, cols, targets, w, probs, active](TensorNode& self) {
                   auto& in = *self.inputs[0];
                   ensure_grad(in);
                   const double g = self.grad[0];
                   for (int i = 0; i < m; ++i) {
                     if (!active[i]) continue;
                     const double* p = probs.data() + int64_t(i) * cols;
                     double* gi = in.grad.data() + int64_t(i) * cols;
                     for (int j = 0; j < cols; ++j) {
                       double v = p[j];
                       if (j == targets[i]) v -= 1.0;
                       gi[j] += g * w[i] * v;
                     }
                   }
                 });
}

void backward(const Tensor& loss) {
  if (!loss.defined()) fail("backward", "undefined tensor");
  if (loss.numel() != 1)
    fail("backward", "loss must be scalar, shape " + shape_str(loss.shape()));
  // Collect the reachable subgraph.
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> seen;
  std::vector<TensorNode*> stack{loss.node().get()};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    TensorNode* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& in : n->inputs)
      if (seen.insert(in.get()).second) stack.push_back(in.get());
  }
  // Reverse creation order is a valid topological order.
  std::sort(order.begin(), order.end(),
            [](const TensorNode* a, const TensorNode* b) { return a->id > b->id; });
  // Fresh grads for interior nodes; leaves accumulate across calls.
  for (TensorNode* n : order) {
    if (!n->requires_grad) continue;
    if (n->is_leaf()) {
      ensure_grad(*n);
    } else {
      n->grad.assign(n->value.size(), 0.0);
    }
  }
  loss.node()->grad[0] = 1.0;
  for (TensorNode* n : order) {
    if (n->backward_fn && n->requires_grad) n->backward_fn(*n);
  }
}

GradCheckReport grad_check(const std::function<Tensor()>& f,
                           const std::vector<Tensor>& params,
                           const GradCheckOptions& opts) {
  GradCheckReport report;
  for (auto p : params) p.zero_grad();
  Tensor loss = f();
  backward(loss);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) {
    if (p.grad().empty())
      analytic.emplace_back(p.numel(), 0.0);
    else
      analytic.push_back(p.grad());
  }
  std::mt19937_64 rng(opts.subsample_seed);
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor p = params[pi];
    GradCheckEntry entry;
    entry.name = p.name().empty() ? ("param" + std::to_string(pi)) : p.name();
    std::vector<int64_t> elems;
    const int64_t n = p.numel();
    if (opts.max_elements_per_param > 0 && n > opts.max_elements_per_param) {
      std::vector<int64_t> all(n);
      for (int64_t i = 0; i < n; ++i) all[i] = i;
      std::shuffle(all.begin(), all.end(), rng);
      elems.assign(all.begin(), all.begin() + opts.max_elements_per_param);
      std::sort(elems.begin(), elems.end());
    } else {
      elems.resize(n);
      for (int64_t i = 0; i < n; ++i) elems[i] = i;
    }
    auto numeric_at = [&](int64_t i, double h) {
      double& slot = p.values()[i];
      const double saved = slot;
      slot = saved + h;
      const double up = f().item();
      slot = saved - h;
      const double down = f().item();
      slot = saved;
      return (up - down) / (2.0 * h);
    };
    auto rel_err = [](double a, double b) {
      const double diff = std::fabs(a - b);
      if (diff < 1e-7) return 0.0;
      return diff / std::max({std::fabs(a), std::fabs(b), 1e-8});
    };
    for (int64_t i : elems) {
      const double a = analytic[pi][i];
      double err = rel_err(a, numeric_at(i, opts.step));
      if (err >= opts.tol) {
        for (double h : opts.retry_steps) {
          err = std::min(err, rel_err(a, numeric_at(i, h)));
          if (err < opts.tol) break;
        }
      }
      entry.max_rel_err = std::max(entry.max_rel_err, err);
      ++entry.checked;
    }
    entry.ok = entry.max_rel_err < opts.tol;
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.ok = report.ok && entry.ok;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace convsrl
