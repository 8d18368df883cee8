#include "cmoe/probe.hpp"

#include "cmoe/errors.hpp"

#include <cmath>

namespace cmoe {

Matrix head_logits(const LinearHead& h, const Matrix& x) {
  if (x.cols() != h.w.rows()) throw DataError("head_logits: width mismatch");
  Matrix out(x.rows(), h.w.cols());
  for (Eigen::Index n = 0; n < x.rows(); ++n) {
    for (Eigen::Index c = 0; c < h.w.cols(); ++c) {
      double s = h.b(c);
      for (Eigen::Index i = 0; i < x.cols(); ++i) s += x(n, i) * h.w(i, c);
      out(n, c) = s;
    }
  }
  return out;
}

namespace {

// Row-wise softmax probabilities and the mean cross-entropy.
double softmax_ce(const Matrix& logits, std::span<const int> labels, Matrix* probs) {
  double loss = 0.0;
  if (probs) probs->resize(logits.rows(), logits.cols());
  for (Eigen::Index n = 0; n < logits.rows(); ++n) {
    const double mx = logits.row(n).maxCoeff();
    double z = 0.0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) z += std::exp(logits(n, c) - mx);
    const double lse = mx + std::log(z);
    loss += lse - logits(n, labels[n]);
    if (probs) {
      for (Eigen::Index c = 0; c < logits.cols(); ++c) (*probs)(n, c) = std::exp(logits(n, c) - lse);
    }
  }
  return loss / static_cast<double>(logits.rows());
}

}  // namespace

double head_loss(const LinearHead& h, const Matrix& x, std::span<const int> labels) {
  if (static_cast<Eigen::Index>(labels.size()) != x.rows()) throw DataError("head_loss: label count mismatch");
  return softmax_ce(head_logits(h, x), labels, nullptr);
}

LinearHead zero_pad(const LinearHead& h, Eigen::Index width) {
  if (width < h.w.rows()) throw DataError("zero_pad: target narrower than head");
  LinearHead out{Matrix::Zero(width, h.w.cols()), h.b};
  out.w.topRows(h.w.rows()) = h.w;
  return out;
}

LinearHead fit_linear_head(const Matrix& x, std::span<const int> labels, LinearHead h, const FitOptions& opt) {
  const auto n = static_cast<double>(x.rows());
  Matrix probs;
  double loss = softmax_ce(head_logits(h, x), labels, &probs);
  double step = opt.init_step;
  for (int it = 0; it < opt.max_iters; ++it) {
    Matrix d = probs;
    for (Eigen::Index r = 0; r < x.rows(); ++r) d(r, labels[r]) -= 1.0;
    d /= n;
    const Matrix gw = x.transpose() * d;
    const RowVector gb = d.colwise().sum();
    const double g2 = gw.squaredNorm() + gb.squaredNorm();
    if (std::sqrt(g2) < opt.grad_tol) break;
    bool moved = false;
    for (int back = 0; back < 60; ++back) {
      LinearHead trial{h.w - step * gw, h.b - step * gb};
      Matrix trial_probs;
      const double trial_loss = softmax_ce(head_logits(trial, x), labels, &trial_probs);
      if (trial_loss <= loss - 1e-4 * step * g2) {
        h = std::move(trial);
        probs = std::move(trial_probs);
        loss = trial_loss;
        moved = true;
        step *= 2.0;
        break;
      }
      step *= 0.5;
    }
    if (!moved) break;
  }
  return h;
}

}  // namespace cmoe
