#pragma once

// Minimal tape-based reverse-mode differentiation over dense Eigen matrices.
//
// Every value is a matrix; row vectors (1 x n) carry single samples and
// B x n matrices carry batches. A Tape records each operation together with a
// closure that pushes the output gradient back to its parents. backward() may
// be called repeatedly on the same tape; each call starts from zeroed
// gradients.

#include <Eigen/Dense>

#include <functional>
#include <span>
#include <vector>

namespace cmoe {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

namespace ad {

class Tape;

class Var {
 public:
  Var() = default;

  bool valid() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  // Scalar convenience for 1x1 values.
  double scalar() const;

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Matrix& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf that never receives gradient.
  Var constant(Matrix value);
  // Leaf that accumulates gradient (parameters, attribution inputs).
  Var variable(Matrix value);

  Var record(Matrix value, std::vector<int> parents, BackwardFn fn);

  const Matrix& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }

  // Gradient of the last backward() target w.r.t. `v`; zeros if unreached.
  Matrix grad(Var v) const;

  void backward(Var target);
  void backward(Var target, const Matrix& seed);

  void accumulate(int id, const Matrix& g);

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::vector<int> parents;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

// ---- Arithmetic -----------------------------------------------------------
// add/sub/mul broadcast the second operand when it is 1x1, 1xn (row) or Bx1
// (column) against a BxN first operand.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var matmul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var one_minus(Var a);

// ---- Elementwise nonlinearities -------------------------------------------
Var leaky_relu(Var a, double slope = 0.01);
Var tanh(Var a);
Var sigmoid(Var a);
Var exp(Var a);
Var log(Var a);
// Values below `lo` are replaced by `lo` and pass no gradient.
Var clamp_min(Var a, double lo);
Var square(Var a);
Var reciprocal(Var a);

// ---- Reductions -----------------------------------------------------------
Var sum(Var a);           // -> 1x1
Var mean(Var a);          // -> 1x1
Var row_sum(Var a);       // BxN -> Bx1
Var col_sum(Var a);       // BxN -> 1xN
Var col_mean(Var a);      // BxN -> 1xN

// ---- Row-wise softmax family ----------------------------------------------
Var softmax_rows(Var a);
Var log_softmax_rows(Var a);

// ---- Shape ----------------------------------------------------------------
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index len);
Var slice_rows(Var a, Eigen::Index start, Eigen::Index len);
Var gather_rows(Var a, std::span<const int> rows);
Var transpose(Var a);

}  // namespace ad
}  // namespace cmoe
