#include "doctest.h"
#include "leapattn/tensor.hpp"

#include <cmath>
#include <random>

using namespace leapattn;

namespace {

// Reference matmul: independent triple loop over plain vectors.
std::vector<double> matmul_ref(const std::vector<double>& a, const std::vector<double>& b,
                               int m, int k, int n) {
  std::vector<double> c(static_cast<size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = s;
    }
  return c;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("matmul matches triple-loop reference") {
  std::mt19937_64 rng(101);
  for (auto [m, k, n] : {std::tuple{1, 1, 1}, {2, 3, 4}, {5, 7, 3}, {8, 8, 8}}) {
    Tensor a = uniform_tensor({m, k}, -2.0, 2.0, rng);
    Tensor b = uniform_tensor({k, n}, -2.0, 2.0, rng);
    Tensor c = matmul(a, b);
    auto ref = matmul_ref(a.values(), b.values(), m, k, n);
    CHECK(max_abs_diff(c.values(), ref) <= 1e-12);
  }
  CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 2})), std::invalid_argument);
}

TEST_CASE("matmul backward matches hand-derived dL/dA, dL/dB") {
  // L = sum(A.B): dA = ones . B^T, dB = A^T . ones
  Tensor a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  Tensor b = Tensor::from({3, 2}, {7, 8, 9, 10, 11, 12}, true);
  backward(sum_all(matmul(a, b)));
  std::vector<double> da_expect = {15, 19, 23, 15, 19, 23};
  std::vector<double> db_expect = {5, 5, 7, 7, 9, 9};
  CHECK(max_abs_diff(a.grad(), da_expect) <= 1e-12);
  CHECK(max_abs_diff(b.grad(), db_expect) <= 1e-12);
}

TEST_CASE("elementwise ops and affine") {
  Tensor a = Tensor::from({2, 2}, {1, -2, 3, 0.5});
  Tensor b = Tensor::from({2, 2}, {4, 5, -6, 2});
  CHECK(add(a, b).at(0, 1) == doctest::Approx(3.0));
  CHECK(sub(a, b).at(1, 0) == doctest::Approx(9.0));
  CHECK(mul(a, b).at(1, 1) == doctest::Approx(1.0));
  CHECK(affine(a, 2.0, 1.0).at(0, 0) == doctest::Approx(3.0));
  CHECK(relu(a).at(0, 1) == doctest::Approx(0.0));
  CHECK(relu(a).at(1, 0) == doctest::Approx(3.0));
  CHECK(sigmoid(Tensor::scalar(0.0)).item() == doctest::Approx(0.5));
  CHECK(exp_op(Tensor::scalar(1.0)).item() == doctest::Approx(std::exp(1.0)));
  CHECK(cos_op(Tensor::scalar(0.0)).item() == doctest::Approx(1.0));
  CHECK(sin_op(Tensor::scalar(M_PI / 2)).item() == doctest::Approx(1.0));
  CHECK_THROWS_AS(add(a, Tensor::zeros({3, 2})), std::invalid_argument);
}

TEST_CASE("softmax_rows matches exp/sum reference and is stable under shift") {
  std::mt19937_64 rng(7);
  Tensor x = uniform_tensor({4, 6}, -3.0, 3.0, rng);
  Tensor p = softmax_rows(x);
  for (int i = 0; i < 4; ++i) {
    double z = 0.0;
    for (int j = 0; j < 6; ++j) z += std::exp(x.at(i, j));
    double row_sum = 0.0;
    for (int j = 0; j < 6; ++j) {
      const double expect = std::exp(x.at(i, j)) / z;
      CHECK(p.at(i, j) == doctest::Approx(expect).epsilon(1e-12));
      CHECK(p.at(i, j) >= 0.0);
      row_sum += p.at(i, j);
    }
    CHECK(row_sum == doctest::Approx(1.0).epsilon(1e-12));
  }
  // Large magnitudes must not overflow thanks to max subtraction.
  Tensor big = Tensor::from({1, 3}, {1000.0, 1001.0, 999.0});
  Tensor pb = softmax_rows(big);
  CHECK(std::isfinite(pb.at(0, 0)));
  CHECK(pb.at(0, 1) > pb.at(0, 0));
}

TEST_CASE("softmax_rows causal masking zeroes the upper triangle") {
  std::mt19937_64 rng(8);
  Tensor x = uniform_tensor({5, 5}, -1.0, 1.0, rng);
  Tensor p = softmax_rows(x, true);
  for (int i = 0; i < 5; ++i) {
    double row_sum = 0.0;
    for (int j = 0; j < 5; ++j) {
      if (j > i) CHECK(p.at(i, j) == 0.0);
      row_sum += p.at(i, j);
    }
    CHECK(row_sum == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK(p.at(0, 0) == doctest::Approx(1.0));
  CHECK_THROWS_AS(softmax_rows(Tensor::zeros({3, 4}), true), std::invalid_argument);
}

TEST_CASE("row/column helpers") {
  Tensor x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor b = Tensor::from({3}, {10, 20, 30});
  Tensor s = Tensor::from({2}, {2, -1});
  CHECK(add_rowwise(x, b).at(1, 2) == doctest::Approx(36.0));
  CHECK(scale_rows(x, s).at(1, 0) == doctest::Approx(-4.0));
  Tensor cs = col_sums(x);
  CHECK(cs.at(1) == doctest::Approx(7.0));
  CHECK(sum_all(x).item() == doctest::Approx(21.0));
  Tensor r = reshape(x, {3, 2});
  CHECK(r.at(2, 1) == doctest::Approx(6.0));
  CHECK(slice_cols(x, 1, 3).at(0, 0) == doctest::Approx(2.0));
  CHECK(slice_rows(x, 1, 2).at(0, 2) == doctest::Approx(6.0));
  Tensor cc = concat_cols({x, x});
  CHECK(cc.extent(1) == 6);
  CHECK(cc.at(1, 4) == doctest::Approx(5.0));
}

TEST_CASE("embed gathers rows and scatter-adds duplicate ids on backward") {
  Tensor table = Tensor::from({4, 2}, {0, 1, 2, 3, 4, 5, 6, 7}, true);
  Tensor e = embed(table, {2, 0, 2});
  CHECK(e.at(0, 1) == doctest::Approx(5.0));
  CHECK(e.at(1, 0) == doctest::Approx(0.0));
  backward(sum_all(e));
  // id 2 used twice: its row accumulates 2, id 0 once, ids 1 and 3 never.
  std::vector<double> expect = {1, 1, 0, 0, 2, 2, 0, 0};
  CHECK(max_abs_diff(table.grad(), expect) <= 1e-12);
  CHECK_THROWS_AS(embed(table, {4}), std::invalid_argument);
}

TEST_CASE("shared subexpression accumulates gradient once per use") {
  // y = x*x used twice: L = sum(y) + sum(y) has dL/dx = 4x.
  Tensor x = Tensor::from({3}, {1.0, -2.0, 0.5}, true);
  Tensor y = mul(x, x);
  backward(add(sum_all(y), sum_all(y)));
  for (int i = 0; i < 3; ++i) CHECK(x.grad()[i] == doctest::Approx(4.0 * x.at(i)));

  // Same function built with duplicated subgraphs must agree.
  Tensor x2 = Tensor::from({3}, {1.0, -2.0, 0.5}, true);
  backward(add(sum_all(mul(x2, x2)), sum_all(mul(x2, x2))));
  CHECK(max_abs_diff(x.grad(), x2.grad()) <= 1e-12);
}

TEST_CASE("tape visits each reachable node exactly once, children first") {
  Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
  Tensor y = mul(x, x);
  Tensor loss = add(sum_all(y), sum_all(y));
  Tape tape = build_tape(loss);
  std::unordered_map<TensorNode*, size_t> pos;
  for (size_t i = 0; i < tape.size(); ++i) {
    CHECK(pos.count(tape[i]) == 0);
    pos[tape[i]] = i;
  }
  CHECK(pos.count(x.node().get()) == 1);
  CHECK(pos.count(y.node().get()) == 1);
  for (TensorNode* n : tape)
    for (const auto& p : n->parents)
      if (p && p->requires_grad) CHECK(pos.at(p.get()) < pos.at(n));
  CHECK_THROWS_AS(backward(y), std::invalid_argument);  // non-scalar loss
}

TEST_CASE("finite differences agree with analytic gradients across ops") {
  std::mt19937_64 rng(31);
  auto check_op = [&](const std::function<Tensor(const Tensor&)>& f, Shape shape) {
    Tensor x = uniform_tensor(shape, 0.2, 1.5, rng);  // keep away from relu kinks
    CHECK(grad_check(f, x) <= 1e-4);
  };
  Tensor w = uniform_tensor({4, 3}, -1.0, 1.0, rng);
  check_op([&](const Tensor& t) { return sum_all(matmul(t, w)); }, {3, 4});
  // Weight the softmax rows so the functional is not constant.
  Tensor sw = uniform_tensor({3, 5}, -1.0, 1.0, rng);
  check_op([&](const Tensor& t) { return sum_all(mul(softmax_rows(t), sw)); }, {3, 5});
  check_op([&](const Tensor& t) { return sum_all(mul(softmax_rows(t, true), t)); }, {4, 4});
  check_op([&](const Tensor& t) { return sum_all(sigmoid(t)); }, {2, 3});
  check_op([&](const Tensor& t) { return sum_all(mul(relu(t), exp_op(affine(t, -0.5, 0.0)))); }, {3, 3});
  check_op([&](const Tensor& t) { return sum_all(mul(cos_op(t), sin_op(t))); }, {2, 4});
  check_op([&](const Tensor& t) { return sum_all(transpose(t)); }, {2, 5});
  Tensor gain = uniform_tensor({4}, 0.5, 1.5, rng);
  Tensor bias = uniform_tensor({4}, -0.5, 0.5, rng);
  check_op([&](const Tensor& t) { return sum_all(mul(layer_norm_rows(t, gain, bias), t)); }, {3, 4});
  check_op([&](const Tensor& t) { return cross_entropy_mean(t, {0, 2, 1}); }, {3, 4});
  Tensor s = uniform_tensor({3}, 0.5, 1.5, rng);
  check_op([&](const Tensor& t) { return sum_all(scale_rows(t, s)); }, {3, 4});
  check_op([&](const Tensor& t) { return sum_all(mul(rope_rotate(t, 100.0, 2), t)); }, {3, 4});
}

TEST_CASE("layer norm parameters receive gradients") {
  std::mt19937_64 rng(32);
  Tensor x = uniform_tensor({3, 4}, -1.0, 1.0, rng);
  auto f_gain = [&](const Tensor& g) {
    Tensor bias = Tensor::zeros({4});
    return sum_all(mul(layer_norm_rows(x, g, bias), x));
  };
  Tensor gain0 = uniform_tensor({4}, 0.5, 1.5, rng);
  CHECK(grad_check(f_gain, gain0) <= 1e-4);
}

TEST_CASE("cross entropy matches log-softmax reference") {
  Tensor logits = Tensor::from({2, 3}, {1.0, 2.0, 0.5, -1.0, 0.0, 3.0});
  std::vector<int> targets = {1, 2};
  double expect = 0.0;
  for (int i = 0; i < 2; ++i) {
    double z = 0.0;
    for (int j = 0; j < 3; ++j) z += std::exp(logits.at(i, j));
    expect += std::log(z) - logits.at(i, targets[i]);
  }
  expect /= 2.0;
  CHECK(cross_entropy_mean(logits, targets).item() == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("div_rows_floored zeroes starved rows and flags them") {
  Tensor num = Tensor::from({3, 2}, {2, 4, 6, 8, 1, 1}, true);
  Tensor den = Tensor::from({3}, {2.0, 1e-9, 4.0}, true);
  std::vector<std::uint8_t> flags;
  Tensor out = div_rows_floored(num, den, 1e-6, &flags);
  CHECK(out.at(0, 1) == doctest::Approx(2.0));
  CHECK(out.at(1, 0) == 0.0);
  CHECK(out.at(1, 1) == 0.0);
  CHECK(out.at(2, 0) == doctest::Approx(0.25));
  CHECK(flags == std::vector<std::uint8_t>({0, 1, 0}));

  backward(sum_all(out));
  // Floored row contributes nothing to either input.
  CHECK(num.grad()[2] == 0.0);
  CHECK(num.grad()[3] == 0.0);
  CHECK(den.grad()[1] == 0.0);
  CHECK(num.grad()[0] == doctest::Approx(0.5));
  CHECK(den.grad()[0] == doctest::Approx(-(2.0 + 4.0) / 4.0));

  std::mt19937_64 rng(41);
  Tensor n2 = uniform_tensor({3, 2}, -1.0, 1.0, rng);
  auto f = [&](const Tensor& d) { return sum_all(div_rows_floored(n2, d, 1e-6)); };
  Tensor d0 = uniform_tensor({3}, 0.5, 2.0, rng);  // well above the floor
  CHECK(grad_check(f, d0) <= 1e-4);
}

TEST_CASE("causal prefix numerator/denominator match masked quadratic forms") {
  std::mt19937_64 rng(51);
  const int n = 9, d = 4, e = 3;
  Tensor A = uniform_tensor({n, d}, -1.0, 1.0, rng, true);
  Tensor B = uniform_tensor({n, d}, -1.0, 1.0, rng, true);
  Tensor V = uniform_tensor({n, e}, -1.0, 1.0, rng, true);

  Tensor out = causal_numerator(A, B, V);
  Tensor den = causal_denominator(A, B);
  for (int i = 0; i < n; ++i) {
    for (int q = 0; q < e; ++q) {
      double ref = 0.0;
      for (int j = 0; j <= i; ++j)
        for (int p = 0; p < d; ++p) ref += A.at(i, p) * B.at(j, p) * V.at(j, q);
      CHECK(out.at(i, q) == doctest::Approx(ref).epsilon(1e-10));
    }
    double dref = 0.0;
    for (int j = 0; j <= i; ++j)
      for (int p = 0; p < d; ++p) dref += A.at(i, p) * B.at(j, p);
    CHECK(den.at(i) == doctest::Approx(dref).epsilon(1e-10));
  }

  // Backward must agree with the composed-op graph for the same function.
  Tensor mixer = uniform_tensor({n, e}, -1.0, 1.0, rng);
  backward(sum_all(mul(out, mixer)));
  Tensor A2 = Tensor::from({n, d}, A.values(), true);
  Tensor B2 = Tensor::from({n, d}, B.values(), true);
  Tensor V2 = Tensor::from({n, e}, V.values(), true);
  Tensor scores = matmul(A2, transpose(B2));
  // Triangular mask built from constants, applied elementwise.
  std::vector<double> mask_data(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j) mask_data[static_cast<size_t>(i) * n + j] = 1.0;
  Tensor masked = mul(scores, Tensor::from({n, n}, mask_data));
  backward(sum_all(mul(matmul(masked, V2), mixer)));
  CHECK(max_abs_diff(A.grad(), A2.grad()) <= 1e-10);
  CHECK(max_abs_diff(B.grad(), B2.grad()) <= 1e-10);
  CHECK(max_abs_diff(V.grad(), V2.grad()) <= 1e-10);

  std::mt19937_64 rng2(52);
  Tensor Bf = uniform_tensor({5, 3}, -1.0, 1.0, rng2);
  auto fd = [&](const Tensor& a) { return sum_all(causal_denominator(a, Bf)); };
  CHECK(grad_check(fd, uniform_tensor({5, 3}, -1.0, 1.0, rng2)) <= 1e-4);
}

TEST_CASE("rope rotation: identity at position zero, norm preserving, composable") {
  std::mt19937_64 rng(61);
  Tensor x = uniform_tensor({1, 8}, -1.0, 1.0, rng);
  Tensor r0 = rope_rotate(x, 10000.0, 0);
  CHECK(max_abs_diff(r0.values(), x.values()) <= 1e-15);

  Tensor xs = uniform_tensor({6, 8}, -1.0, 1.0, rng);
  Tensor r = rope_rotate(xs, 10000.0, 0);
  for (int i = 0; i < 6; ++i) {
    double n0 = 0.0, n1 = 0.0;
    for (int j = 0; j < 8; ++j) {
      n0 += xs.at(i, j) * xs.at(i, j);
      n1 += r.at(i, j) * r.at(i, j);
    }
    CHECK(n1 == doctest::Approx(n0).epsilon(1e-12));
  }

  // Rotating by offset a then b equals rotating once by a+b.
  Tensor one = uniform_tensor({1, 4}, -1.0, 1.0, rng);
  Tensor ab = rope_rotate(rope_rotate(one, 10000.0, 3), 10000.0, 4);
  Tensor once = rope_rotate(one, 10000.0, 7);
  CHECK(max_abs_diff(ab.values(), once.values()) <= 1e-12);
  CHECK_THROWS_AS(rope_rotate(Tensor::zeros({2, 3}), 10000.0), std::invalid_argument);
}

TEST_CASE("dropout is identity in eval mode and rescales in train mode") {
  std::mt19937_64 rng(71);
  Tensor x = Tensor::full({100, 10}, 1.0);
  Tensor eval_out = dropout(x, 0.5, rng, false);
  CHECK(max_abs_diff(eval_out.values(), x.values()) == 0.0);
  Tensor train_out = dropout(x, 0.5, rng, true);
  double mean = 0.0;
  int zeros = 0;
  for (double v : train_out.values()) {
    mean += v;
    if (v == 0.0) ++zeros;
    else CHECK(v == doctest::Approx(2.0));
  }
  mean /= train_out.size();
  CHECK(mean == doctest::Approx(1.0).epsilon(0.15));
  CHECK(zeros > 100);
}

TEST_CASE("grad_check is exact on a linear map") {
  std::mt19937_64 rng(81);
  Tensor w = uniform_tensor({3, 3}, -1.0, 1.0, rng);
  auto f = [&](const Tensor& t) { return sum_all(matmul(t, w)); };
  CHECK(grad_check(f, uniform_tensor({2, 3}, -1.0, 1.0, rng)) <= 1e-7);
}
