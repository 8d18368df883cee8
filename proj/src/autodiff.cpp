#include "cmoe/autodiff.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace cmoe::ad {

const Matrix& Var::value() const { return tape_->value(id_); }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw std::logic_error("Var::scalar on non-1x1 value");
  return v(0, 0);
}

Var Tape::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::variable(Matrix value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::record(Matrix value, std::vector<int> parents, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  for (int p : parents) n.requires_grad = n.requires_grad || nodes_[p].requires_grad;
  if (n.requires_grad) {
    n.parents = std::move(parents);
    n.backward = std::move(fn);
  }
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_[v.id()];
  if (!n.has_grad) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::accumulate(int id, const Matrix& g) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (!n.has_grad) {
    n.grad = g;
    n.has_grad = true;
  } else {
    n.grad += g;
  }
}

void Tape::backward(Var target) {
  if (target.value().size() != 1) throw std::logic_error("backward() needs a scalar target");
  backward(target, Matrix::Ones(1, 1));
}

void Tape::backward(Var target, const Matrix& seed) {
  for (Node& n : nodes_) {
    n.has_grad = false;
    n.grad.resize(0, 0);
  }
  accumulate(target.id(), seed);
  for (int i = target.id(); i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.backward) continue;
    // The closure may append to other nodes' grads but never to itself.
    const Matrix g = n.grad;
    n.backward(*this, g);
  }
}

namespace {

enum class Bcast { kSame, kScalar, kRow, kCol };

Bcast broadcast_kind(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return Bcast::kSame;
  if (b.rows() == 1 && b.cols() == 1) return Bcast::kScalar;
  if (b.rows() == 1 && b.cols() == a.cols()) return Bcast::kRow;
  if (b.cols() == 1 && b.rows() == a.rows()) return Bcast::kCol;
  throw std::invalid_argument(std::string("shape mismatch in ") + op + ": " +
                              std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " vs " +
                              std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
}

Matrix expand(const Matrix& b, Bcast k, Eigen::Index rows, Eigen::Index cols) {
  switch (k) {
    case Bcast::kSame: return b;
    case Bcast::kScalar: return Matrix::Constant(rows, cols, b(0, 0));
    case Bcast::kRow: return b.replicate(rows, 1);
    case Bcast::kCol: return b.replicate(1, cols);
  }
  return b;
}

Matrix reduce_to(const Matrix& g, Bcast k) {
  switch (k) {
    case Bcast::kSame: return g;
    case Bcast::kScalar: return Matrix::Constant(1, 1, g.sum());
    case Bcast::kRow: return g.colwise().sum();
    case Bcast::kCol: return g.rowwise().sum();
  }
  return g;
}

Tape& same_tape(Var a, Var b) {
  if (a.tape() != b.tape()) throw std::logic_error("operands on different tapes");
  return *a.tape();
}

}  // namespace

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Bcast k = broadcast_kind(a.value(), b.value(), "add");
  Matrix out = a.value() + expand(b.value(), k, a.rows(), a.cols());
  const int ia = a.id(), ib = b.id();
  return t.record(std::move(out), {ia, ib}, [ia, ib, k](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, g);
    if (tp.requires_grad(ib)) tp.accumulate(ib, reduce_to(g, k));
  });
}

Var sub(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Bcast k = broadcast_kind(a.value(), b.value(), "sub");
  Matrix out = a.value() - expand(b.value(), k, a.rows(), a.cols());
  const int ia = a.id(), ib = b.id();
  return t.record(std::move(out), {ia, ib}, [ia, ib, k](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, g);
    if (tp.requires_grad(ib)) tp.accumulate(ib, -reduce_to(g, k));
  });
}

Var mul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Bcast k = broadcast_kind(a.value(), b.value(), "mul");
  Matrix bx = expand(b.value(), k, a.rows(), a.cols());
  Matrix out = a.value().cwiseProduct(bx);
  const int ia = a.id(), ib = b.id();
  return t.record(std::move(out), {ia, ib}, [ia, ib, k](Tape& tp, const Matrix& g) {
    const Matrix& av = tp.value(ia);
    const Matrix& bv = tp.value(ib);
    if (tp.requires_grad(ia)) tp.accumulate(ia, g.cwiseProduct(expand(bv, k, av.rows(), av.cols())));
    if (tp.requires_grad(ib)) tp.accumulate(ib, reduce_to(g.cwiseProduct(av), k));
  });
}

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul shape mismatch: " + std::to_string(a.rows()) + "x" +
                                std::to_string(a.cols()) + " * " + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()));
  }
  Matrix out = a.value() * b.value();
  const int ia = a.id(), ib = b.id();
  return t.record(std::move(out), {ia, ib}, [ia, ib](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(ia)) tp.accumulate(ia, g * tp.value(ib).transpose());
    if (tp.requires_grad(ib)) tp.accumulate(ib, tp.value(ia).transpose() * g);
  });
}

Var scale(Var a, double s) {
  const int ia = a.id();
  return a.tape()->record(a.value() * s, {ia},
                          [ia, s](Tape& tp, const Matrix& g) { tp.accumulate(ia, g * s); });
}

Var add_scalar(Var a, double s) {
  const int ia = a.id();
  return a.tape()->record(a.value().array() + s, {ia},
                          [ia](Tape& tp, const Matrix& g) { tp.accumulate(ia, g); });
}

Var one_minus(Var a) { return add_scalar(scale(a, -1.0), 1.0); }

Var leaky_relu(Var a, double slope) {
  const int ia = a.id();
  Matrix out = a.value().unaryExpr([slope](double x) { return x > 0.0 ? x : slope * x; });
  return a.tape()->record(std::move(out), {ia}, [ia, slope](Tape& tp, const Matrix& g) {
    const Matrix& x = tp.value(ia);
    Matrix d = x.unaryExpr([slope](double v) { return v > 0.0 ? 1.0 : slope; });
    tp.accumulate(ia, g.cwiseProduct(d));
  });
}

Var tanh(Var a) {
  Tape& t = *a.tape();
  const int ia = a.id();
  Matrix out = a.value().array().tanh();
  const int io = static_cast<int>(t.size());
  return t.record(std::move(out), {ia}, [ia, io](Tape& tp, const Matrix& g) {
    const Matrix& y = tp.value(io);
    tp.accumulate(ia, g.array() * (1.0 - y.array().square()));
  });
}

Var sigmoid(Var a) {
  Tape& t = *a.tape();
  const int ia = a.id();
  Matrix out = a.value().unaryExpr([](double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
  const int io = static_cast<int>(t.size());
  return t.record(std::move(out), {ia}, [ia, io](Tape& tp, const Matrix& g) {
    const Matrix& y = tp.value(io);
    tp.accumulate(ia, g.array() * y.array() * (1.0 - y.array()));
  });
}

Var exp(Var a) {
  Tape& t = *a.tape();
  const int ia = a.id();
  const int io = static_cast<int>(t.size());
  return t.record(a.value().array().exp(), {ia}, [ia, io](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, g.cwiseProduct(tp.value(io)));
  });
}

Var log(Var a) {
  const int ia = a.id();
  return a.tape()->record(a.value().array().log(), {ia}, [ia](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, g.array() / tp.value(ia).array());
  });
}

Var clamp_min(Var a, double lo) {
  const int ia = a.id();
  Matrix out = a.value().cwiseMax(lo);
  return a.tape()->record(std::move(out), {ia}, [ia, lo](Tape& tp, const Matrix& g) {
    const Matrix& x = tp.value(ia);
    Matrix d = x.unaryExpr([lo](double v) { return v > lo ? 1.0 : 0.0; });
    tp.accumulate(ia, g.cwiseProduct(d));
  });
}

Var square(Var a) {
  const int ia = a.id();
  return a.tape()->record(a.value().array().square(), {ia}, [ia](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, 2.0 * g.cwiseProduct(tp.value(ia)));
  });
}

Var reciprocal(Var a) {
  Tape& t = *a.tape();
  const int ia = a.id();
  const int io = static_cast<int>(t.size());
  return t.record(a.value().cwiseInverse(), {ia}, [ia, io](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, -g.cwiseProduct(tp.value(io).cwiseAbs2()));
  });
}

Var sum(Var a) {
  const int ia = a.id();
  const auto r = a.rows(), c = a.cols();
  return a.tape()->record(Matrix::Constant(1, 1, a.value().sum()), {ia},
                          [ia, r, c](Tape& tp, const Matrix& g) {
                            tp.accumulate(ia, Matrix::Constant(r, c, g(0, 0)));
                          });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

Var row_sum(Var a) {
  const int ia = a.id();
  const auto c = a.cols();
  return a.tape()->record(a.value().rowwise().sum(), {ia}, [ia, c](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, g.replicate(1, c));
  });
}

Var col_sum(Var a) {
  const int ia = a.id();
  const auto r = a.rows();
  return a.tape()->record(a.value().colwise().sum(), {ia}, [ia, r](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, g.replicate(r, 1));
  });
}

Var col_mean(Var a) { return scale(col_sum(a), 1.0 / static_cast<double>(a.rows())); }

Var softmax_rows(Var a) {
  Tape& t = *a.tape();
  const int ia = a.id();
  Matrix out = a.value();
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double m = out.row(i).maxCoeff();
    out.row(i) = (out.row(i).array() - m).exp();
    out.row(i) /= out.row(i).sum();
  }
  const int io = static_cast<int>(t.size());
  return t.record(std::move(out), {ia}, [ia, io](Tape& tp, const Matrix& g) {
    const Matrix& y = tp.value(io);
    Matrix dot = g.cwiseProduct(y).rowwise().sum();
    tp.accumulate(ia, y.cwiseProduct(g - dot.replicate(1, g.cols())));
  });
}

Var log_softmax_rows(Var a) {
  Tape& t = *a.tape();
  const int ia = a.id();
  Matrix out = a.value();
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double m = out.row(i).maxCoeff();
    const double lse = m + std::log((out.row(i).array() - m).exp().sum());
    out.row(i).array() -= lse;
  }
  const int io = static_cast<int>(t.size());
  return t.record(std::move(out), {ia}, [ia, io](Tape& tp, const Matrix& g) {
    Matrix p = tp.value(io).array().exp();
    Matrix gs = g.rowwise().sum();
    tp.accumulate(ia, g - p.cwiseProduct(gs.replicate(1, g.cols())));
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols of nothing");
  Tape& t = *parts[0].tape();
  const auto rows = parts[0].rows();
  Eigen::Index total = 0;
  std::vector<int> ids;
  std::vector<Eigen::Index> widths;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw std::invalid_argument("concat_cols row mismatch");
    ids.push_back(p.id());
    widths.push_back(p.cols());
    total += p.cols();
  }
  Matrix out(rows, total);
  Eigen::Index off = 0;
  for (const Var& p : parts) {
    out.middleCols(off, p.cols()) = p.value();
    off += p.cols();
  }
  return t.record(std::move(out), ids, [ids, widths](Tape& tp, const Matrix& g) {
    Eigen::Index o = 0;
    for (size_t i = 0; i < ids.size(); ++i) {
      if (tp.requires_grad(ids[i])) tp.accumulate(ids[i], g.middleCols(o, widths[i]));
      o += widths[i];
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows of nothing");
  Tape& t = *parts[0].tape();
  const auto cols = parts[0].cols();
  Eigen::Index total = 0;
  std::vector<int> ids;
  std::vector<Eigen::Index> heights;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw std::invalid_argument("concat_rows column mismatch");
    ids.push_back(p.id());
    heights.push_back(p.rows());
    total += p.rows();
  }
  Matrix out(total, cols);
  Eigen::Index off = 0;
  for (const Var& p : parts) {
    out.middleRows(off, p.rows()) = p.value();
    off += p.rows();
  }
  return t.record(std::move(out), ids, [ids, heights](Tape& tp, const Matrix& g) {
    Eigen::Index o = 0;
    for (size_t i = 0; i < ids.size(); ++i) {
      if (tp.requires_grad(ids[i])) tp.accumulate(ids[i], g.middleRows(o, heights[i]));
      o += heights[i];
    }
  });
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index len) {
  if (start < 0 || len < 0 || start + len > a.cols()) throw std::out_of_range("slice_cols");
  const int ia = a.id();
  const auto r = a.rows(), c = a.cols();
  return a.tape()->record(a.value().middleCols(start, len), {ia},
                          [ia, r, c, start, len](Tape& tp, const Matrix& g) {
                            Matrix full = Matrix::Zero(r, c);
                            full.middleCols(start, len) = g;
                            tp.accumulate(ia, full);
                          });
}

Var slice_rows(Var a, Eigen::Index start, Eigen::Index len) {
  if (start < 0 || len < 0 || start + len > a.rows()) throw std::out_of_range("slice_rows");
  const int ia = a.id();
  const auto r = a.rows(), c = a.cols();
  return a.tape()->record(a.value().middleRows(start, len), {ia},
                          [ia, r, c, start, len](Tape& tp, const Matrix& g) {
                            Matrix full = Matrix::Zero(r, c);
                            full.middleRows(start, len) = g;
                            tp.accumulate(ia, full);
                          });
}

Var gather_rows(Var a, std::span<const int> rows) {
  const int ia = a.id();
  const auto r = a.rows(), c = a.cols();
  std::vector<int> idx(rows.begin(), rows.end());
  Matrix out(static_cast<Eigen::Index>(idx.size()), c);
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= r) throw std::out_of_range("gather_rows");
    out.row(static_cast<Eigen::Index>(i)) = a.value().row(idx[i]);
  }
  return a.tape()->record(std::move(out), {ia}, [ia, r, c, idx](Tape& tp, const Matrix& g) {
    Matrix full = Matrix::Zero(r, c);
    for (size_t i = 0; i < idx.size(); ++i) full.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
    tp.accumulate(ia, full);
  });
}

Var transpose(Var a) {
  const int ia = a.id();
  return a.tape()->record(a.value().transpose(), {ia}, [ia](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, g.transpose());
  });
}

}  // namespace cmoe::ad
