#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace leapattn {

using Shape = std::vector<int>;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorNode;

/// Dense f64 tensor with row-major layout and optional participation in
/// reverse-mode differentiation. Copying a Tensor copies the handle, not
/// the buffer; buffers are immutable once an op has consumed them, except
/// for gradient accumulation during backward() and explicit parameter
/// updates on leaves between forward passes.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  int rank() const;
  int extent(int dim) const;
  const Shape& shape() const;
  int64_t size() const;

  const std::vector<double>& values() const;
  /// Leaf-only mutable access, for optimizer updates between forward passes.
  std::vector<double>& leaf_values();

  double at(int i) const;
  double at(int i, int j) const;
  double item() const;  // requires size()==1

  bool requires_grad() const;
  /// Gradient buffer; valid after backward() reached this tensor.
  const std::vector<double>& grad() const;
  /// Mutable gradient access for optimizer-side rescaling (clipping).
  std::vector<double>& mutable_grad();
  bool has_grad() const;
  void zero_grad();

  std::shared_ptr<TensorNode> node() const { return node_; }
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<TensorNode> node_;
};

struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until backward touches the node
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  // Accumulates this node's grad into its parents' grads.
  std::function<void(TensorNode&)> backprop;
};

/// The reverse-topological record of nodes backward() will visit.
using Tape = std::vector<TensorNode*>;

/// Builds the tape for a backward pass rooted at `loss`: every reachable
/// grad-enabled node appears exactly once, parents after children.
Tape build_tape(const Tensor& loss);

/// Reverse-mode sweep. Requires a scalar, grad-enabled loss. Gradients
/// accumulate (sum) into every grad-enabled ancestor.
void backward(const Tensor& loss);

// ---- primitive operations ----

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// alpha * x + beta, elementwise (the scale+shift primitive).
Tensor affine(const Tensor& x, double alpha, double beta);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor exp_op(const Tensor& x);
Tensor cos_op(const Tensor& x);
Tensor sin_op(const Tensor& x);

/// Row-wise softmax with max-subtraction stabilization. Requires rank >= 2.
/// With causal=true the input must be square and entries j > i are masked
/// out before normalization.
Tensor softmax_rows(const Tensor& x, bool causal = false);

/// x (n x c) + b (length-c vector), broadcast over rows.
Tensor add_rowwise(const Tensor& x, const Tensor& b);
/// Row i of x scaled by s[i]; s is a length-n vector.
Tensor scale_rows(const Tensor& x, const Tensor& s);
/// Column sums of a matrix; returns a length-c vector.
Tensor col_sums(const Tensor& x);
Tensor sum_all(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
Tensor slice_cols(const Tensor& x, int c0, int c1);
Tensor slice_rows(const Tensor& x, int r0, int r1);
Tensor concat_cols(const std::vector<Tensor>& parts);

/// Gathers rows of table (vocab x d) by id; gradient scatter-adds.
Tensor embed(const Tensor& table, const std::vector<int>& ids);

Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias,
                       double eps = 1e-5);

/// Inverted dropout; identity when training=false or p==0.
Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng, bool training);

/// Mean token cross-entropy of row-wise logits against integer targets.
Tensor cross_entropy_mean(const Tensor& logits, const std::vector<int>& targets);

/// out[i,:] = num[i,:] / den[i], except rows where den[i] < floor, which
/// become zero (and are flagged when flags != nullptr). Gradients through
/// floored rows are zero, matching the constant-zero output.
Tensor div_rows_floored(const Tensor& num, const Tensor& den, double floor,
                        std::vector<std::uint8_t>* flags = nullptr);

/// out[i,:] = A[i,:] . (sum_{j<=i} B[j,:]^T V[j,:]) -- the causal prefix
/// form of the reordered attention numerator. O(n*d*e) forward and backward.
Tensor causal_numerator(const Tensor& A, const Tensor& B, const Tensor& V);
/// out[i] = A[i,:] . (sum_{j<=i} B[j,:]); returns a length-n vector.
Tensor causal_denominator(const Tensor& A, const Tensor& B);

/// Rotates each consecutive pair of columns of row i by angle
/// (pos_offset + i) * theta_base^(-2t/d). Requires an even column count.
Tensor rope_rotate(const Tensor& x, double theta_base, int pos_offset = 0);

// ---- gradient checking ----

/// Max over elements of |analytic - central difference| /
/// max(|analytic|, |cd|, 1e-8); f must be a deterministic scalar function.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                  double h = 1e-5);

// ---- construction helpers (not ops) ----

Tensor uniform_tensor(Shape shape, double lo, double hi, std::mt19937_64& rng,
                      bool requires_grad = false);
Tensor normal_tensor(Shape shape, double mean, double stddev, std::mt19937_64& rng,
                     bool requires_grad = false);

}  // namespace leapattn
