#include "test_util.hpp"

using namespace cmoe;
using cmoe::testing::check_input_gradient;
using cmoe::testing::random_matrix;

namespace {

using Op = std::function<ad::Var(ad::Tape&, ad::Var)>;

void expect_grad(const char* name, const Op& op, Eigen::Index r = 3, Eigen::Index c = 4) {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    Rng rng(seed);
    const Matrix x = random_matrix(r, c, rng);
    INFO(name << " seed " << seed);
    CHECK(check_input_gradient(x, op) <= 1e-4);
  }
}

// Weighted sum makes every output entry matter with a distinct coefficient.
ad::Var probe(ad::Tape& t, ad::Var y) {
  Matrix w(y.rows(), y.cols());
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = 0.3 + 0.17 * static_cast<double>(i % 7);
  return ad::sum(ad::mul(y, t.constant(w)));
}

}  // namespace

TEST_CASE("autodiff elementwise gradients") {
  expect_grad("leaky_relu", [](ad::Tape& t, ad::Var x) { return probe(t, ad::leaky_relu(x)); });
  expect_grad("tanh", [](ad::Tape& t, ad::Var x) { return probe(t, ad::tanh(x)); });
  expect_grad("sigmoid", [](ad::Tape& t, ad::Var x) { return probe(t, ad::sigmoid(x)); });
  expect_grad("exp", [](ad::Tape& t, ad::Var x) { return probe(t, ad::exp(x)); });
  expect_grad("log", [](ad::Tape& t, ad::Var x) { return probe(t, ad::log(ad::add_scalar(ad::square(x), 0.5))); });
  expect_grad("reciprocal",
              [](ad::Tape& t, ad::Var x) { return probe(t, ad::reciprocal(ad::add_scalar(ad::square(x), 0.5))); });
  expect_grad("one_minus", [](ad::Tape& t, ad::Var x) { return probe(t, ad::one_minus(ad::scale(x, 2.0))); });
}

TEST_CASE("autodiff broadcasting arithmetic gradients") {
  Rng rng(9);
  const Matrix row = random_matrix(1, 4, rng), col = random_matrix(3, 1, rng), one = random_matrix(1, 1, rng);
  const Matrix full = random_matrix(3, 4, rng);
  for (const Matrix* other : {&row, &col, &one, &full}) {
    expect_grad("add", [&](ad::Tape& t, ad::Var x) { return probe(t, ad::add(x, t.constant(*other))); });
    expect_grad("sub", [&](ad::Tape& t, ad::Var x) { return probe(t, ad::sub(x, t.constant(*other))); });
    expect_grad("mul", [&](ad::Tape& t, ad::Var x) { return probe(t, ad::mul(x, t.constant(*other))); });
  }
  // Gradient through the broadcast operand.
  expect_grad("mul row operand", [&](ad::Tape& t, ad::Var x) { return probe(t, ad::mul(t.constant(full), x)); }, 1, 4);
  expect_grad("add col operand", [&](ad::Tape& t, ad::Var x) { return probe(t, ad::add(t.constant(full), x)); }, 3, 1);
  expect_grad("mul scalar operand", [&](ad::Tape& t, ad::Var x) { return probe(t, ad::mul(t.constant(full), x)); }, 1,
              1);
}

TEST_CASE("autodiff matmul, reductions and shapes") {
  Rng rng(4);
  const Matrix w = random_matrix(4, 2, rng), left = random_matrix(2, 3, rng);
  expect_grad("matmul lhs", [&](ad::Tape& t, ad::Var x) { return probe(t, ad::matmul(x, t.constant(w))); });
  expect_grad("matmul rhs", [&](ad::Tape& t, ad::Var x) { return probe(t, ad::matmul(t.constant(left), x)); });
  expect_grad("sum", [](ad::Tape&, ad::Var x) { return ad::sum(ad::square(x)); });
  expect_grad("mean", [](ad::Tape&, ad::Var x) { return ad::mean(ad::square(x)); });
  expect_grad("row_sum", [](ad::Tape& t, ad::Var x) { return probe(t, ad::row_sum(ad::square(x))); });
  expect_grad("col_sum", [](ad::Tape& t, ad::Var x) { return probe(t, ad::col_sum(ad::square(x))); });
  expect_grad("col_mean", [](ad::Tape& t, ad::Var x) { return probe(t, ad::col_mean(ad::square(x))); });
  expect_grad("softmax", [](ad::Tape& t, ad::Var x) { return probe(t, ad::softmax_rows(x)); });
  expect_grad("log_softmax", [](ad::Tape& t, ad::Var x) { return probe(t, ad::log_softmax_rows(x)); });
  expect_grad("transpose", [](ad::Tape& t, ad::Var x) { return probe(t, ad::square(ad::transpose(x))); });
  expect_grad("slices", [](ad::Tape& t, ad::Var x) {
    return probe(t, ad::mul(ad::slice_cols(x, 1, 2), ad::slice_rows(ad::slice_cols(x, 0, 2), 0, 3)));
  });
  expect_grad("concat", [](ad::Tape& t, ad::Var x) {
    const ad::Var c[] = {x, ad::square(x)};
    const ad::Var r[] = {ad::concat_cols(c), ad::concat_cols(c)};
    return probe(t, ad::tanh(ad::concat_rows(r)));
  });
  expect_grad("gather", [](ad::Tape& t, ad::Var x) {
    const int rows[] = {2, 0, 2, 1};
    return probe(t, ad::square(ad::gather_rows(x, rows)));
  });
}

TEST_CASE("softmax reproduces the hand-computed four-way case") {
  ad::Tape t;
  Matrix x(1, 4);
  x << 1, 0, 0, 0;
  const Matrix p = ad::softmax_rows(t.constant(x)).value();
  const double e = std::exp(1.0);
  CHECK(p(0, 0) == doctest::Approx(e / (e + 3.0)).epsilon(1e-14));
  CHECK(p(0, 0) == doctest::Approx(0.4755).epsilon(1e-4));
  CHECK(p(0, 1) == doctest::Approx(0.1748).epsilon(1e-3));
  CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("clamp_min blocks gradient below the floor") {
  ad::Tape t;
  Matrix x(1, 3);
  x << -1.0, 0.5, 2.0;
  ad::Var v = t.variable(x);
  t.backward(ad::sum(ad::clamp_min(v, 0.0)));
  const Matrix g = t.grad(v);
  CHECK(g(0, 0) == 0.0);
  CHECK(g(0, 1) == 1.0);
  CHECK(g(0, 2) == 1.0);
}

TEST_CASE("backward can be repeated on the same tape") {
  ad::Tape t;
  ad::Var v = t.variable(Matrix::Constant(2, 2, 3.0));
  ad::Var y = ad::sum(ad::square(v));
  t.backward(y);
  const Matrix g1 = t.grad(v);
  t.backward(y);
  CHECK(t.grad(v) == g1);
  CHECK(g1(0, 0) == 6.0);
}
