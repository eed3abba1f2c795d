#include "leapattn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace leapattn {

int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (int e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

namespace {

[[noreturn]] void shape_fail(const std::string& op, const std::string& detail) {
  throw std::invalid_argument(op + ": " + detail);
}

void check_rank2(const Tensor& t, const char* op, const char* name) {
  if (t.rank() != 2) shape_fail(op, std::string(name) + " must be rank-2, got " + shape_str(t.shape()));
}

void check_vector(const Tensor& t, const char* op, const char* name) {
  if (t.rank() != 1) shape_fail(op, std::string(name) + " must be rank-1, got " + shape_str(t.shape()));
}

std::shared_ptr<TensorNode> make_node(Shape shape, std::vector<double> value) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  return n;
}

void ensure_grad(TensorNode& n) {
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
}

// Wires the result node: parents, requires_grad propagation, backprop hook.
Tensor wire(std::shared_ptr<TensorNode> out, std::vector<std::shared_ptr<TensorNode>> parents,
            std::function<void(TensorNode&)> backprop) {
  bool needs = false;
  for (const auto& p : parents) needs = needs || (p && p->requires_grad);
  if (needs) {
    out->requires_grad = true;
    out->parents = std::move(parents);
    out->backprop = std::move(backprop);
  }
  return Tensor(std::move(out));
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = make_node(shape, std::vector<double>(numel(shape), 0.0));
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = make_node(shape, std::vector<double>(numel(shape), value));
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  if (numel(shape) != static_cast<int64_t>(data.size()))
    shape_fail("Tensor::from", "shape " + shape_str(shape) + " does not match data length " +
                                   std::to_string(data.size()));
  auto n = make_node(std::move(shape), std::move(data));
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

int Tensor::rank() const { return static_cast<int>(node_->shape.size()); }
int Tensor::extent(int dim) const { return node_->shape.at(dim); }
const Shape& Tensor::shape() const { return node_->shape; }
int64_t Tensor::size() const { return static_cast<int64_t>(node_->value.size()); }
const std::vector<double>& Tensor::values() const { return node_->value; }

std::vector<double>& Tensor::leaf_values() {
  if (node_->backprop) throw std::logic_error("leaf_values: tensor is not a leaf");
  return node_->value;
}

double Tensor::at(int i) const { return node_->value.at(i); }

double Tensor::at(int i, int j) const {
  if (rank() != 2) throw std::logic_error("at(i,j) on tensor of shape " + shape_str(shape()));
  return node_->value.at(static_cast<size_t>(i) * node_->shape[1] + j);
}

double Tensor::item() const {
  if (size() != 1) throw std::logic_error("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
const std::vector<double>& Tensor::grad() const { return node_->grad; }
std::vector<double>& Tensor::mutable_grad() { return node_->grad; }
bool Tensor::has_grad() const { return !node_->grad.empty(); }
void Tensor::zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

Tape build_tape(const Tensor& loss) {
  Tape order;
  std::unordered_set<TensorNode*> visited;
  // Iterative post-order DFS: children precede parents in `order`.
  std::vector<std::pair<TensorNode*, size_t>> stack;
  TensorNode* root = loss.node().get();
  if (!root || !root->requires_grad) return order;
  stack.push_back({root, 0});
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      TensorNode* p = node->parents[idx++].get();
      if (p && p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

void backward(const Tensor& loss) {
  if (loss.size() != 1) throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(loss.shape()));
  if (!loss.requires_grad()) throw std::invalid_argument("backward: loss does not require grad");
  Tape tape = build_tape(loss);
  ensure_grad(*loss.node());
  loss.node()->grad[0] += 1.0;
  for (auto it = tape.rbegin(); it != tape.rend(); ++it) {
    TensorNode* n = *it;
    if (n->backprop) {
      ensure_grad(*n);
      n->backprop(*n);
    }
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_rank2(a, "matmul", "a");
  check_rank2(b, "matmul", "b");
  const int m = a.extent(0), k = a.extent(1), k2 = b.extent(0), n = b.extent(1);
  if (k != k2)
    shape_fail("matmul", "inner extents disagree: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
  const auto& av = a.values();
  const auto& bv = b.values();
  for (int i = 0; i < m; ++i) {
    const double* arow = av.data() + static_cast<size_t>(i) * k;
    double* orow = out.data() + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double s = arow[p];
      const double* brow = bv.data() + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) orow[j] += s * brow[j];
    }
  }
  auto node = make_node({m, n}, std::move(out));
  auto an = a.node();
  auto bn = b.node();
  return wire(node, {an, bn}, [an, bn, m, k, n](TensorNode& o) {
    // da = dout . b^T ; db = a^T . dout
    if (an->requires_grad) {
      ensure_grad(*an);
      for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
          double s = 0.0;
          const double* orow = o.grad.data() + static_cast<size_t>(i) * n;
          const double* brow = bn->value.data() + static_cast<size_t>(p) * n;
          for (int j = 0; j < n; ++j) s += orow[j] * brow[j];
          an->grad[static_cast<size_t>(i) * k + p] += s;
        }
    }
    if (bn->requires_grad) {
      ensure_grad(*bn);
      for (int i = 0; i < m; ++i) {
        const double* arow = an->value.data() + static_cast<size_t>(i) * k;
        const double* orow = o.grad.data() + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
          const double s = arow[p];
          double* brow = bn->grad.data() + static_cast<size_t>(p) * n;
          for (int j = 0; j < n; ++j) brow[j] += s * orow[j];
        }
      }
    }
  });
}

Tensor transpose(const Tensor& a) {
  check_rank2(a, "transpose", "a");
  const int m = a.extent(0), n = a.extent(1);
  std::vector<double> out(static_cast<size_t>(m) * n);
  const auto& av = a.values();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[static_cast<size_t>(j) * m + i] = av[static_cast<size_t>(i) * n + j];
  auto an = a.node();
  return wire(make_node({n, m}, std::move(out)), {an}, [an, m, n](TensorNode& o) {
    ensure_grad(*an);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        an->grad[static_cast<size_t>(i) * n + j] += o.grad[static_cast<size_t>(j) * m + i];
  });
}

namespace {

Tensor binary_same_shape(const char* name, const Tensor& a, const Tensor& b,
                         const std::function<double(double, double)>& f,
                         const std::function<void(double, double, double, double&, double&)>& df) {
  if (a.shape() != b.shape())
    shape_fail(name, "shapes differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<double> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = f(av[i], bv[i]);
  auto an = a.node();
  auto bn = b.node();
  return wire(make_node(a.shape(), std::move(out)), {an, bn}, [an, bn, df](TensorNode& o) {
    const bool ga = an->requires_grad, gb = bn->requires_grad;
    if (ga) ensure_grad(*an);
    if (gb) ensure_grad(*bn);
    for (size_t i = 0; i < o.grad.size(); ++i) {
      double da = 0, db = 0;
      df(an->value[i], bn->value[i], o.grad[i], da, db);
      if (ga) an->grad[i] += da;
      if (gb) bn->grad[i] += db;
    }
  });
}

Tensor unary_elementwise(const Tensor& x, const std::function<double(double)>& f,
                         const std::function<double(double, double)>& dfdx_times_g) {
  const auto& xv = x.values();
  std::vector<double> out(xv.size());
  for (size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  auto xn = x.node();
  return wire(make_node(x.shape(), std::move(out)), {xn}, [xn, dfdx_times_g](TensorNode& o) {
    ensure_grad(*xn);
    for (size_t i = 0; i < o.grad.size(); ++i) xn->grad[i] += dfdx_times_g(xn->value[i], o.grad[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_same_shape(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double g, double& da, double& db) { da = g; db = g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_same_shape(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double g, double& da, double& db) { da = g; db = -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_same_shape(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double x, double y, double g, double& da, double& db) { da = g * y; db = g * x; });
}

Tensor affine(const Tensor& x, double alpha, double beta) {
  return unary_elementwise(
      x, [alpha, beta](double v) { return alpha * v + beta; },
      [alpha](double, double g) { return alpha * g; });
}

Tensor relu(const Tensor& x) {
  return unary_elementwise(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double g) { return v > 0.0 ? g : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  auto sig = [](double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  };
  return unary_elementwise(x, sig, [sig](double v, double g) {
    const double s = sig(v);
    return g * s * (1.0 - s);
  });
}

Tensor exp_op(const Tensor& x) {
  return unary_elementwise(
      x, [](double v) { return std::exp(v); },
      [](double v, double g) { return g * std::exp(v); });
}

Tensor cos_op(const Tensor& x) {
  return unary_elementwise(
      x, [](double v) { return std::cos(v); },
      [](double v, double g) { return -g * std::sin(v); });
}

Tensor sin_op(const Tensor& x) {
  return unary_elementwise(
      x, [](double v) { return std::sin(v); },
      [](double v, double g) { return g * std::cos(v); });
}

Tensor softmax_rows(const Tensor& x, bool causal) {
  if (x.rank() < 2) shape_fail("softmax_rows", "rank must be >= 2, got " + shape_str(x.shape()));
  const int cols = x.shape().back();
  const int rows = static_cast<int>(x.size() / cols);
  if (causal && rows != cols)
    shape_fail("softmax_rows", "causal masking needs a square matrix, got " + shape_str(x.shape()));
  const auto& xv = x.values();
  std::vector<double> out(xv.size(), 0.0);
  for (int i = 0; i < rows; ++i) {
    const int limit = causal ? i + 1 : cols;
    const double* row = xv.data() + static_cast<size_t>(i) * cols;
    double mx = row[0];
    for (int j = 1; j < limit; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    double* orow = out.data() + static_cast<size_t>(i) * cols;
    for (int j = 0; j < limit; ++j) {
      orow[j] = std::exp(row[j] - mx);
      z += orow[j];
    }
    for (int j = 0; j < limit; ++j) orow[j] /= z;
  }
  auto xn = x.node();
  return wire(make_node(x.shape(), std::move(out)), {xn}, [xn, rows, cols, causal](TensorNode& o) {
    ensure_grad(*xn);
    for (int i = 0; i < rows; ++i) {
      const int limit = causal ? i + 1 : cols;
      const double* p = o.value.data() + static_cast<size_t>(i) * cols;
      const double* g = o.grad.data() + static_cast<size_t>(i) * cols;
      double dot = 0.0;
      for (int j = 0; j < limit; ++j) dot += g[j] * p[j];
      double* xg = xn->grad.data() + static_cast<size_t>(i) * cols;
      for (int j = 0; j < limit; ++j) xg[j] += p[j] * (g[j] - dot);
    }
  });
}

Tensor add_rowwise(const Tensor& x, const Tensor& b) {
  check_rank2(x, "add_rowwise", "x");
  check_vector(b, "add_rowwise", "b");
  const int n = x.extent(0), c = x.extent(1);
  if (b.extent(0) != c)
    shape_fail("add_rowwise", "bias length " + shape_str(b.shape()) + " vs columns of " + shape_str(x.shape()));
  const auto& xv = x.values();
  const auto& bv = b.values();
  std::vector<double> out(xv.size());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j) out[static_cast<size_t>(i) * c + j] = xv[static_cast<size_t>(i) * c + j] + bv[j];
  auto xn = x.node();
  auto bn = b.node();
  return wire(make_node(x.shape(), std::move(out)), {xn, bn}, [xn, bn, n, c](TensorNode& o) {
    if (xn->requires_grad) {
      ensure_grad(*xn);
      for (size_t i = 0; i < o.grad.size(); ++i) xn->grad[i] += o.grad[i];
    }
    if (bn->requires_grad) {
      ensure_grad(*bn);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) bn->grad[j] += o.grad[static_cast<size_t>(i) * c + j];
    }
  });
}

Tensor scale_rows(const Tensor& x, const Tensor& s) {
  check_rank2(x, "scale_rows", "x");
  check_vector(s, "scale_rows", "s");
  const int n = x.extent(0), c = x.extent(1);
  if (s.extent(0) != n)
    shape_fail("scale_rows", "scale length " + shape_str(s.shape()) + " vs rows of " + shape_str(x.shape()));
  const auto& xv = x.values();
  const auto& sv = s.values();
  std::vector<double> out(xv.size());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j) out[static_cast<size_t>(i) * c + j] = xv[static_cast<size_t>(i) * c + j] * sv[i];
  auto xn = x.node();
  auto sn = s.node();
  return wire(make_node(x.shape(), std::move(out)), {xn, sn}, [xn, sn, n, c](TensorNode& o) {
    if (xn->requires_grad) {
      ensure_grad(*xn);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j)
          xn->grad[static_cast<size_t>(i) * c + j] += o.grad[static_cast<size_t>(i) * c + j] * sn->value[i];
    }
    if (sn->requires_grad) {
      ensure_grad(*sn);
      for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int j = 0; j < c; ++j)
          acc += o.grad[static_cast<size_t>(i) * c + j] * xn->value[static_cast<size_t>(i) * c + j];
        sn->grad[i] += acc;
      }
    }
  });
}

Tensor col_sums(const Tensor& x) {
  check_rank2(x, "col_sums", "x");
  const int n = x.extent(0), c = x.extent(1);
  std::vector<double> out(c, 0.0);
  const auto& xv = x.values();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j) out[j] += xv[static_cast<size_t>(i) * c + j];
  auto xn = x.node();
  return wire(make_node({c}, std::move(out)), {xn}, [xn, n, c](TensorNode& o) {
    ensure_grad(*xn);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < c; ++j) xn->grad[static_cast<size_t>(i) * c + j] += o.grad[j];
  });
}

Tensor sum_all(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  auto xn = x.node();
  return wire(make_node({1}, {s}), {xn}, [xn](TensorNode& o) {
    ensure_grad(*xn);
    for (double& g : xn->grad) g += o.grad[0];
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size())
    shape_fail("reshape", shape_str(x.shape()) + " -> " + shape_str(shape) + " changes element count");
  auto xn = x.node();
  return wire(make_node(std::move(shape), x.values()), {xn}, [xn](TensorNode& o) {
    ensure_grad(*xn);
    for (size_t i = 0; i < o.grad.size(); ++i) xn->grad[i] += o.grad[i];
  });
}

Tensor slice_cols(const Tensor& x, int c0, int c1) {
  check_rank2(x, "slice_cols", "x");
  const int n = x.extent(0), c = x.extent(1);
  if (c0 < 0 || c1 > c || c0 >= c1)
    shape_fail("slice_cols", "range [" + std::to_string(c0) + "," + std::to_string(c1) + ") on " + shape_str(x.shape()));
  const int w = c1 - c0;
  std::vector<double> out(static_cast<size_t>(n) * w);
  const auto& xv = x.values();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < w; ++j) out[static_cast<size_t>(i) * w + j] = xv[static_cast<size_t>(i) * c + c0 + j];
  auto xn = x.node();
  return wire(make_node({n, w}, std::move(out)), {xn}, [xn, n, c, c0, w](TensorNode& o) {
    ensure_grad(*xn);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < w; ++j)
        xn->grad[static_cast<size_t>(i) * c + c0 + j] += o.grad[static_cast<size_t>(i) * w + j];
  });
}

Tensor slice_rows(const Tensor& x, int r0, int r1) {
  check_rank2(x, "slice_rows", "x");
  const int n = x.extent(0), c = x.extent(1);
  if (r0 < 0 || r1 > n || r0 >= r1)
    shape_fail("slice_rows", "range [" + std::to_string(r0) + "," + std::to_string(r1) + ") on " + shape_str(x.shape()));
  const int h = r1 - r0;
  const auto& xv = x.values();
  std::vector<double> out(xv.begin() + static_cast<size_t>(r0) * c, xv.begin() + static_cast<size_t>(r1) * c);
  auto xn = x.node();
  return wire(make_node({h, c}, std::move(out)), {xn}, [xn, r0, c, h](TensorNode& o) {
    ensure_grad(*xn);
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < c; ++j)
        xn->grad[static_cast<size_t>(r0 + i) * c + j] += o.grad[static_cast<size_t>(i) * c + j];
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) shape_fail("concat_cols", "no parts");
  const int n = parts[0].extent(0);
  int total = 0;
  for (const auto& p : parts) {
    check_rank2(p, "concat_cols", "part");
    if (p.extent(0) != n) shape_fail("concat_cols", "row count mismatch: " + shape_str(p.shape()));
    total += p.extent(1);
  }
  std::vector<double> out(static_cast<size_t>(n) * total);
  int off = 0;
  for (const auto& p : parts) {
    const int w = p.extent(1);
    const auto& pv = p.values();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < w; ++j) out[static_cast<size_t>(i) * total + off + j] = pv[static_cast<size_t>(i) * w + j];
    off += w;
  }
  std::vector<std::shared_ptr<TensorNode>> pn;
  std::vector<int> widths;
  for (const auto& p : parts) {
    pn.push_back(p.node());
    widths.push_back(p.extent(1));
  }
  return wire(make_node({n, total}, std::move(out)), pn, [pn, widths, n, total](TensorNode& o) {
    int off2 = 0;
    for (size_t k = 0; k < pn.size(); ++k) {
      const int w = widths[k];
      if (pn[k]->requires_grad) {
        ensure_grad(*pn[k]);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < w; ++j)
            pn[k]->grad[static_cast<size_t>(i) * w + j] += o.grad[static_cast<size_t>(i) * total + off2 + j];
      }
      off2 += w;
    }
  });
}

Tensor embed(const Tensor& table, const std::vector<int>& ids) {
  check_rank2(table, "embed", "table");
  const int vocab = table.extent(0), d = table.extent(1);
  const int n = static_cast<int>(ids.size());
  std::vector<double> out(static_cast<size_t>(n) * d);
  const auto& tv = table.values();
  for (int i = 0; i < n; ++i) {
    const int id = ids[i];
    if (id < 0 || id >= vocab)
      shape_fail("embed", "id " + std::to_string(id) + " outside vocab " + std::to_string(vocab));
    std::copy_n(tv.data() + static_cast<size_t>(id) * d, d, out.data() + static_cast<size_t>(i) * d);
  }
  auto tn = table.node();
  return wire(make_node({n, d}, std::move(out)), {tn}, [tn, ids, d, n](TensorNode& o) {
    ensure_grad(*tn);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j)
        tn->grad[static_cast<size_t>(ids[i]) * d + j] += o.grad[static_cast<size_t>(i) * d + j];
  });
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  check_rank2(x, "layer_norm_rows", "x");
  check_vector(gain, "layer_norm_rows", "gain");
  check_vector(bias, "layer_norm_rows", "bias");
  const int n = x.extent(0), c = x.extent(1);
  if (gain.extent(0) != c || bias.extent(0) != c)
    shape_fail("layer_norm_rows", "gain/bias length vs columns of " + shape_str(x.shape()));
  const auto& xv = x.values();
  const auto& gv = gain.values();
  const auto& bv = bias.values();
  std::vector<double> out(xv.size());
  std::vector<double> inv_std(n), mean(n);
  for (int i = 0; i < n; ++i) {
    const double* row = xv.data() + static_cast<size_t>(i) * c;
    double mu = 0.0;
    for (int j = 0; j < c; ++j) mu += row[j];
    mu /= c;
    double var = 0.0;
    for (int j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= c;
    const double istd = 1.0 / std::sqrt(var + eps);
    mean[i] = mu;
    inv_std[i] = istd;
    double* orow = out.data() + static_cast<size_t>(i) * c;
    for (int j = 0; j < c; ++j) orow[j] = gv[j] * (row[j] - mu) * istd + bv[j];
  }
  auto xn = x.node();
  auto gn = gain.node();
  auto bn = bias.node();
  return wire(make_node(x.shape(), std::move(out)), {xn, gn, bn},
              [xn, gn, bn, n, c, mean, inv_std](TensorNode& o) {
                const bool gx = xn->requires_grad, gg = gn->requires_grad, gb = bn->requires_grad;
                if (gx) ensure_grad(*xn);
                if (gg) ensure_grad(*gn);
                if (gb) ensure_grad(*bn);
                for (int i = 0; i < n; ++i) {
                  const double* row = xn->value.data() + static_cast<size_t>(i) * c;
                  const double* g = o.grad.data() + static_cast<size_t>(i) * c;
                  const double istd = inv_std[i], mu = mean[i];
                  double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                  for (int j = 0; j < c; ++j) {
                    const double xhat = (row[j] - mu) * istd;
                    const double dxhat = g[j] * gn->value[j];
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat;
                    if (gg) gn->grad[j] += g[j] * xhat;
                    if (gb) bn->grad[j] += g[j];
                  }
                  if (gx) {
                    double* xg = xn->grad.data() + static_cast<size_t>(i) * c;
                    for (int j = 0; j < c; ++j) {
                      const double xhat = (row[j] - mu) * istd;
                      const double dxhat = g[j] * gn->value[j];
                      xg[j] += istd * (dxhat - sum_dxhat / c - xhat * sum_dxhat_xhat / c);
                    }
                  }
                }
              });
}

Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng, bool training) {
  if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: p must be in [0,1)");
  if (!training || p == 0.0) return affine(x, 1.0, 0.0);
  const double keep = 1.0 - p;
  std::bernoulli_distribution keep_dist(keep);
  std::vector<double> mask(x.size());
  for (auto& m : mask) m = keep_dist(rng) ? 1.0 / keep : 0.0;
  const auto& xv = x.values();
  std::vector<double> out(xv.size());
  for (size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] * mask[i];
  auto xn = x.node();
  return wire(make_node(x.shape(), std::move(out)), {xn}, [xn, mask](TensorNode& o) {
    ensure_grad(*xn);
    for (size_t i = 0; i < o.grad.size(); ++i) xn->grad[i] += o.grad[i] * mask[i];
  });
}

Tensor cross_entropy_mean(const Tensor& logits, const std::vector<int>& targets) {
  check_rank2(logits, "cross_entropy_mean", "logits");
  const int n = logits.extent(0), v = logits.extent(1);
  if (static_cast<int>(targets.size()) != n)
    shape_fail("cross_entropy_mean", "target count " + std::to_string(targets.size()) + " vs rows " + std::to_string(n));
  const auto& lv = logits.values();
  std::vector<double> probs(lv.size());
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    const int t = targets[i];
    if (t < 0 || t >= v) shape_fail("cross_entropy_mean", "target " + std::to_string(t) + " outside vocab");
    const double* row = lv.data() + static_cast<size_t>(i) * v;
    double mx = row[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (int j = 0; j < v; ++j) z += std::exp(row[j] - mx);
    const double logz = std::log(z) + mx;
    loss += logz - row[t];
    double* prow = probs.data() + static_cast<size_t>(i) * v;
    for (int j = 0; j < v; ++j) prow[j] = std::exp(row[j] - logz);
  }
  loss /= n;
  auto ln = logits.node();
  return wire(make_node({1}, {loss}), {ln}, [ln, targets, probs, n, v](TensorNode& o) {
    ensure_grad(*ln);
    const double g = o.grad[0] / n;
    for (int i = 0; i < n; ++i) {
      const double* prow = probs.data() + static_cast<size_t>(i) * v;
      double* lg = ln->grad.data() + static_cast<size_t>(i) * v;
      for (int j = 0; j < v; ++j) lg[j] += g * (prow[j] - (j == targets[i] ? 1.0 : 0.0));
    }
  });
}

Tensor div_rows_floored(const Tensor& num, const Tensor& den, double floor,
                        std::vector<std::uint8_t>* flags) {
  check_rank2(num, "div_rows_floored", "num");
  check_vector(den, "div_rows_floored", "den");
  const int n = num.extent(0), c = num.extent(1);
  if (den.extent(0) != n)
    shape_fail("div_rows_floored", "den length " + shape_str(den.shape()) + " vs rows of " + shape_str(num.shape()));
  if (flags) flags->assign(n, 0);
  const auto& nv = num.values();
  const auto& dv = den.values();
  std::vector<double> out(nv.size(), 0.0);
  std::vector<std::uint8_t> floored(n, 0);
  for (int i = 0; i < n; ++i) {
    if (dv[i] < floor) {
      floored[i] = 1;
      if (flags) (*flags)[i] = 1;
      continue;
    }
    for (int j = 0; j < c; ++j) out[static_cast<size_t>(i) * c + j] = nv[static_cast<size_t>(i) * c + j] / dv[i];
  }
  auto nn = num.node();
  auto dn = den.node();
  return wire(make_node(num.shape(), std::move(out)), {nn, dn}, [nn, dn, floored, n, c](TensorNode& o) {
    const bool gn2 = nn->requires_grad, gd = dn->requires_grad;
    if (gn2) ensure_grad(*nn);
    if (gd) ensure_grad(*dn);
    for (int i = 0; i < n; ++i) {
      if (floored[i]) continue;  // constant-zero row
      const double d = dn->value[i];
      const double* g = o.grad.data() + static_cast<size_t>(i) * c;
      const double* y = o.value.data() + static_cast<size_t>(i) * c;
      double acc = 0.0;
      for (int j = 0; j < c; ++j) {
        if (gn2) nn->grad[static_cast<size_t>(i) * c + j] += g[j] / d;
        acc += g[j] * y[j];
      }
      if (gd) dn->grad[i] += -acc / d;
    }
  });
}

Tensor causal_numerator(const Tensor& A, const Tensor& B, const Tensor& V) {
  check_rank2(A, "causal_numerator", "A");
  check_rank2(B, "causal_numerator", "B");
  check_rank2(V, "causal_numerator", "V");
  const int n = A.extent(0), d = A.extent(1), e = V.extent(1);
  if (B.extent(0) != n || B.extent(1) != d || V.extent(0) != n)
    shape_fail("causal_numerator", shape_str(A.shape()) + ", " + shape_str(B.shape()) + ", " + shape_str(V.shape()));
  const auto& av = A.values();
  const auto& bv = B.values();
  const auto& vv = V.values();
  std::vector<double> out(static_cast<size_t>(n) * e, 0.0);
  std::vector<double> state(static_cast<size_t>(d) * e, 0.0);  // running B^T V prefix
  for (int i = 0; i < n; ++i) {
    const double* brow = bv.data() + static_cast<size_t>(i) * d;
    const double* vrow = vv.data() + static_cast<size_t>(i) * e;
    for (int p = 0; p < d; ++p) {
      double* srow = state.data() + static_cast<size_t>(p) * e;
      const double bp = brow[p];
      for (int q = 0; q < e; ++q) srow[q] += bp * vrow[q];
    }
    const double* arow = av.data() + static_cast<size_t>(i) * d;
    double* orow = out.data() + static_cast<size_t>(i) * e;
    for (int p = 0; p < d; ++p) {
      const double ap = arow[p];
      const double* srow = state.data() + static_cast<size_t>(p) * e;
      for (int q = 0; q < e; ++q) orow[q] += ap * srow[q];
    }
  }
  auto an = A.node();
  auto bn = B.node();
  auto vn = V.node();
  return wire(make_node({n, e}, std::move(out)), {an, bn, vn}, [an, bn, vn, n, d, e](TensorNode& o) {
    const bool ga = an->requires_grad, gb = bn->requires_grad, gv = vn->requires_grad;
    if (ga) ensure_grad(*an);
    if (gb) ensure_grad(*bn);
    if (gv) ensure_grad(*vn);
    if (ga) {
      // dA[i] = S_i . dOut[i], with S_i the recomputed prefix state.
      std::vector<double> state(static_cast<size_t>(d) * e, 0.0);
      for (int i = 0; i < n; ++i) {
        const double* brow = bn->value.data() + static_cast<size_t>(i) * d;
        const double* vrow = vn->value.data() + static_cast<size_t>(i) * e;
        for (int p = 0; p < d; ++p) {
          double* srow = state.data() + static_cast<size_t>(p) * e;
          for (int q = 0; q < e; ++q) srow[q] += brow[p] * vrow[q];
        }
        const double* grow = o.grad.data() + static_cast<size_t>(i) * e;
        double* ag = an->grad.data() + static_cast<size_t>(i) * d;
        for (int p = 0; p < d; ++p) {
          const double* srow = state.data() + static_cast<size_t>(p) * e;
          double acc = 0.0;
          for (int q = 0; q < e; ++q) acc += grow[q] * srow[q];
          ag[p] += acc;
        }
      }
    }
    if (gb || gv) {
      // Suffix state T_j = sum_{i>=j} A[i]^T dOut[i]; dB[j] = T_j . V[j], dV[j] = B[j] . T_j.
      std::vector<double> suffix(static_cast<size_t>(d) * e, 0.0);
      for (int i = n - 1; i >= 0; --i) {
        const double* arow = an->value.data() + static_cast<size_t>(i) * d;
        const double* grow = o.grad.data() + static_cast<size_t>(i) * e;
        for (int p = 0; p < d; ++p) {
          double* srow = suffix.data() + static_cast<size_t>(p) * e;
          for (int q = 0; q < e; ++q) srow[q] += arow[p] * grow[q];
        }
        if (gb) {
          const double* vrow = vn->value.data() + static_cast<size_t>(i) * e;
          double* bg = bn->grad.data() + static_cast<size_t>(i) * d;
          for (int p = 0; p < d; ++p) {
            const double* srow = suffix.data() + static_cast<size_t>(p) * e;
            double acc = 0.0;
            for (int q = 0; q < e; ++q) acc += srow[q] * vrow[q];
            bg[p] += acc;
          }
        }
        if (gv) {
          const double* brow = bn->value.data() + static_cast<size_t>(i) * d;
          double* vg = vn->grad.data() + static_cast<size_t>(i) * e;
          for (int p = 0; p < d; ++p) {
            const double* srow = suffix.data() + static_cast<size_t>(p) * e;
            for (int q = 0; q < e; ++q) vg[q] += brow[p] * srow[q];
          }
        }
      }
    }
  });
}

Tensor causal_denominator(const Tensor& A, const Tensor& B) {
  check_rank2(A, "causal_denominator", "A");
  check_rank2(B, "causal_denominator", "B");
  const int n = A.extent(0), d = A.extent(1);
  if (B.extent(0) != n || B.extent(1) != d)
    shape_fail("causal_denominator", shape_str(A.shape()) + " vs " + shape_str(B.shape()));
  const auto& av = A.values();
  const auto& bv = B.values();
  std::vector<double> out(n, 0.0);
  std::vector<double> z(d, 0.0);
  for (int i = 0; i < n; ++i) {
    const double* brow = bv.data() + static_cast<size_t>(i) * d;
    const double* arow = av.data() + static_cast<size_t>(i) * d;
    double acc = 0.0;
    for (int p = 0; p < d; ++p) {
      z[p] += brow[p];
      acc += arow[p] * z[p];
    }
    out[i] = acc;
  }
  auto an = A.node();
  auto bn = B.node();
  return wire(make_node({n}, std::move(out)), {an, bn}, [an, bn, n, d](TensorNode& o) {
    const bool ga = an->requires_grad, gb = bn->requires_grad;
    if (ga) ensure_grad(*an);
    if (gb) ensure_grad(*bn);
    if (ga) {
      std::vector<double> z(d, 0.0);
      for (int i = 0; i < n; ++i) {
        const double* brow = bn->value.data() + static_cast<size_t>(i) * d;
        double* ag = an->grad.data() + static_cast<size_t>(i) * d;
        for (int p = 0; p < d; ++p) {
          z[p] += brow[p];
          ag[p] += o.grad[i] * z[p];
        }
      }
    }
    if (gb) {
      std::vector<double> t(d, 0.0);  // suffix of grad-weighted A rows
      for (int i = n - 1; i >= 0; --i) {
        const double* arow = an->value.data() + static_cast<size_t>(i) * d;
        double* bg = bn->grad.data() + static_cast<size_t>(i) * d;
        for (int p = 0; p < d; ++p) {
          t[p] += o.grad[i] * arow[p];
          bg[p] += t[p];
        }
      }
    }
  });
}

Tensor rope_rotate(const Tensor& x, double theta_base, int pos_offset) {
  check_rank2(x, "rope_rotate", "x");
  const int n = x.extent(0), d = x.extent(1);
  if (d % 2 != 0) shape_fail("rope_rotate", "column count must be even, got " + shape_str(x.shape()));
  if (theta_base <= 0.0) throw std::invalid_argument("rope_rotate: theta_base must be positive");
  const int pairs = d / 2;
  std::vector<double> inv_freq(pairs);
  for (int t = 0; t < pairs; ++t) inv_freq[t] = std::pow(theta_base, -2.0 * t / d);
  const auto& xv = x.values();
  std::vector<double> out(xv.size());
  std::vector<double> cs(static_cast<size_t>(n) * pairs), sn(static_cast<size_t>(n) * pairs);
  for (int i = 0; i < n; ++i) {
    for (int t = 0; t < pairs; ++t) {
      const double angle = (pos_offset + i) * inv_freq[t];
      const double c = std::cos(angle), s = std::sin(angle);
      cs[static_cast<size_t>(i) * pairs + t] = c;
      sn[static_cast<size_t>(i) * pairs + t] = s;
      const double x0 = xv[static_cast<size_t>(i) * d + 2 * t];
      const double x1 = xv[static_cast<size_t>(i) * d + 2 * t + 1];
      out[static_cast<size_t>(i) * d + 2 * t] = x0 * c - x1 * s;
      out[static_cast<size_t>(i) * d + 2 * t + 1] = x0 * s + x1 * c;
    }
  }
  auto xn = x.node();
  return wire(make_node(x.shape(), std::move(out)), {xn}, [xn, cs, sn, n, d, pairs](TensorNode& o) {
    ensure_grad(*xn);
    for (int i = 0; i < n; ++i)
      for (int t = 0; t < pairs; ++t) {
        const double c = cs[static_cast<size_t>(i) * pairs + t];
        const double s = sn[static_cast<size_t>(i) * pairs + t];
        const double g0 = o.grad[static_cast<size_t>(i) * d + 2 * t];
        const double g1 = o.grad[static_cast<size_t>(i) * d + 2 * t + 1];
        xn->grad[static_cast<size_t>(i) * d + 2 * t] += g0 * c + g1 * s;
        xn->grad[static_cast<size_t>(i) * d + 2 * t + 1] += -g0 * s + g1 * c;
      }
  });
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h) {
  Tensor probe = Tensor::from(x.shape(), x.values(), true);
  Tensor loss = f(probe);
  if (loss.size() != 1) throw std::invalid_argument("grad_check: f must return a scalar");
  backward(loss);
  std::vector<double> analytic = probe.grad();
  if (analytic.empty()) analytic.assign(x.size(), 0.0);

  double max_rel = 0.0;
  std::vector<double> base = x.values();
  for (size_t i = 0; i < base.size(); ++i) {
    std::vector<double> plus = base, minus = base;
    plus[i] += h;
    minus[i] -= h;
    const double fp = f(Tensor::from(x.shape(), plus, false)).item();
    const double fm = f(Tensor::from(x.shape(), minus, false)).item();
    const double cd = (fp - fm) / (2.0 * h);
    const double denom = std::max({std::fabs(analytic[i]), std::fabs(cd), 1e-8});
    max_rel = std::max(max_rel, std::fabs(analytic[i] - cd) / denom);
  }
  return max_rel;
}

Tensor uniform_tensor(Shape shape, double lo, double hi, std::mt19937_64& rng, bool requires_grad) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> data(numel(shape));
  for (auto& v : data) v = dist(rng);
  return Tensor::from(std::move(shape), std::move(data), requires_grad);
}

Tensor normal_tensor(Shape shape, double mean, double stddev, std::mt19937_64& rng, bool requires_grad) {
  std::normal_distribution<double> dist(mean, stddev);
  std::vector<double> data(numel(shape));
  for (auto& v : data) v = dist(rng);
  return Tensor::from(std::move(shape), std::move(data), requires_grad);
}

}  // namespace leapattn
