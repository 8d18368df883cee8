#pragma once

// Linear softmax heads on frozen representations, evaluated with fixed-order
// sequential sums so zero-padded weights reproduce logits bit for bit.

#include "cmoe/autodiff.hpp"

#include <span>

namespace cmoe {

struct LinearHead {
  Matrix w;     // D x C
  RowVector b;  // 1 x C
};

Matrix head_logits(const LinearHead& h, const Matrix& x);

// Mean cross-entropy of the head on (x, labels).
double head_loss(const LinearHead& h, const Matrix& x, std::span<const int> labels);

// Copies `h` into a head over `width` >= h.w.rows() inputs with zeros on the
// appended coordinates.
LinearHead zero_pad(const LinearHead& h, Eigen::Index width);

struct FitOptions {
  int max_iters = 500;
  double grad_tol = 1e-9;
  double init_step = 1.0;
};

// Gradient descent with Armijo backtracking from `start`; the loss never
// increases along the path.
LinearHead fit_linear_head(const Matrix& x, std::span<const int> labels, LinearHead start,
                           const FitOptions& opt = {});

}  // namespace cmoe
