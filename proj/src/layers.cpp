#include "cmoe/layers.hpp"

#include <cmath>

namespace cmoe {

void init_affine(ParamStore& store, const std::string& prefix, int in, int out, Rng& rng, bool bias) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  Matrix w(in, out);
  for (int r = 0; r < in; ++r)
    for (int c = 0; c < out; ++c) w(r, c) = rng.uniform(-limit, limit);
  store.add(prefix + ".w", std::move(w));
  if (bias) store.add(prefix + ".b", Matrix::Zero(1, out));
}

ad::Var affine(ParamBinding& p, const std::string& prefix, ad::Var x) {
  ad::Var y = ad::matmul(x, p(prefix + ".w"));
  const std::string b = prefix + ".b";
  return p.has(b) ? ad::add(y, p(b)) : y;
}

Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
  Matrix m(rows, cols);
  const double keep = 1.0 - rate;
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.uniform() < keep ? 1.0 / keep : 0.0;
  return m;
}

ad::Var dropout(ad::Var x, double rate, Rng* rng) {
  if (rng == nullptr || rate <= 0.0) return x;
  ad::Var mask = x.tape()->constant(dropout_mask(x.rows(), x.cols(), rate, *rng));
  return ad::mul(x, mask);
}

}  // namespace cmoe
