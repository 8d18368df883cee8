#include "cmoe/encoders.hpp"

#include "cmoe/errors.hpp"
#include "cmoe/layers.hpp"

#include <algorithm>
#include <numeric>
#include <string>

namespace cmoe {

namespace {

void init_attention(ParamStore& s, const std::string& prefix, int in, int hidden, Rng& rng) {
  init_affine(s, prefix + ".attn_v", in, hidden, rng);
  init_affine(s, prefix + ".attn_u", in, hidden, rng);
  init_affine(s, prefix + ".attn_w", hidden, 1, rng, /*bias=*/false);
}

}  // namespace

void init_encoders(ParamStore& s, const EncoderDims& dims, Rng& rng) {
  if (dims.gnn_layers < 1) throw ConfigError("gnn_layers must be >= 1");
  init_attention(s, "mil", dims.patch_dim, dims.d, rng);
  init_affine(s, "mil.proj", dims.patch_dim, dims.d, rng);

  int in = dims.node_dim;
  for (int l = 0; l < dims.gnn_layers; ++l) {
    const std::string pre = "gnn.layer" + std::to_string(l);
    init_affine(s, pre + ".self", in, dims.gnn_hidden, rng);
    init_affine(s, pre + ".nbr", in, dims.gnn_hidden, rng, /*bias=*/false);
    in = dims.gnn_hidden;
  }
  init_attention(s, "gnn", dims.gnn_hidden, dims.d, rng);
  init_affine(s, "gnn.proj", dims.gnn_hidden, dims.d, rng);
}

ad::Var gated_attention_pool(ParamBinding& p, const std::string& prefix, ad::Var h, ad::Var* weights) {
  ad::Var v = ad::tanh(affine(p, prefix + ".attn_v", h));
  ad::Var u = ad::sigmoid(affine(p, prefix + ".attn_u", h));
  ad::Var scores = affine(p, prefix + ".attn_w", ad::mul(v, u));  // n x 1
  ad::Var a = ad::softmax_rows(ad::transpose(scores));           // 1 x n
  if (weights) *weights = a;
  return ad::matmul(a, h);
}

std::vector<int> lexicographic_row_order(const Matrix& m) {
  std::vector<int> order(static_cast<size_t>(m.rows()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (m(a, c) < m(b, c)) return true;
      if (m(a, c) > m(b, c)) return false;
    }
    return false;
  });
  return order;
}

ad::Var mil_encode(ParamBinding& p, const Matrix& patches, const EncodeOptions& opt, ad::Var* attention) {
  if (patches.rows() < 1) throw DataError("mil_encode: empty bag");
  Matrix bag = patches;
  if (opt.training && opt.patch_cap > 0 && patches.rows() > opt.patch_cap) {
    if (!opt.rng) throw std::logic_error("mil_encode: training subsample needs an rng");
    const auto pick = opt.rng->sample_without_replacement(static_cast<int>(patches.rows()), opt.patch_cap);
    bag.resize(opt.patch_cap, patches.cols());
    for (int i = 0; i < opt.patch_cap; ++i) bag.row(i) = patches.row(pick[i]);
  }
  // Canonical row order makes the pooled sum independent of input order.
  const auto order = lexicographic_row_order(bag);
  Matrix sorted(bag.rows(), bag.cols());
  for (size_t i = 0; i < order.size(); ++i) sorted.row(static_cast<Eigen::Index>(i)) = bag.row(order[i]);

  ad::Var h = p.tape().constant(std::move(sorted));
  ad::Var pooled = gated_attention_pool(p, "mil", h, attention);
  return affine(p, "mil.proj", pooled);
}

Matrix mean_adjacency(const CellGraph& g) {
  const auto n = g.nodes.rows();
  Matrix a = Matrix::Zero(n, n);
  for (const auto& [u, v] : g.edges) {
    if (u < 0 || v < 0 || u >= n || v >= n) throw DataError("graph edge endpoint out of range");
    if (u == v) continue;
    a(u, v) = 1.0;
    a(v, u) = 1.0;
  }
  for (Eigen::Index r = 0; r < n; ++r) {
    const double deg = a.row(r).sum();
    if (deg > 0.0) a.row(r) /= deg;
  }
  return a;
}

ad::Var graph_encode(ParamBinding& p, const CellGraph& graph, const EncoderDims& dims, const EncodeOptions& opt) {
  if (graph.nodes.rows() < 1) throw DataError("graph_encode: empty graph");
  ad::Tape& t = p.tape();
  ad::Var adj = t.constant(mean_adjacency(graph));
  ad::Var h = t.constant(graph.nodes);
  for (int l = 0; l < dims.gnn_layers; ++l) {
    const std::string pre = "gnn.layer" + std::to_string(l);
    ad::Var self = affine(p, pre + ".self", h);
    ad::Var nbr = affine(p, pre + ".nbr", ad::matmul(adj, h));
    h = ad::leaky_relu(ad::add(self, nbr), kLeakySlope);
    if (opt.training) h = dropout(h, opt.gnn_dropout, opt.rng);
  }
  const auto order = lexicographic_row_order(h.value());
  ad::Var pooled = gated_attention_pool(p, "gnn", ad::gather_rows(h, order));
  return affine(p, "gnn.proj", pooled);
}

std::pair<ad::Var, ad::Var> encode_all(ParamBinding& p, const CohortSample& sample, const EncoderDims& dims,
                                       const EncodeOptions& opt) {
  ad::Var e1 = mil_encode(p, sample.patches, opt);
  ad::Var e2 = graph_encode(p, sample.graph, dims, opt);
  return {e1, e2};
}

}  // namespace cmoe
