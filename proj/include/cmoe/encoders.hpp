#pragma once

// Modality encoders: gated-attention MIL pooling over patch bags and
// mean-aggregation message passing with attention pooling over cell graphs.

#include "cmoe/autodiff.hpp"
#include "cmoe/params.hpp"
#include "cmoe/rng.hpp"
#include "cmoe/synthcohort.hpp"

#include <utility>

namespace cmoe {

struct EncoderDims {
  int patch_dim = 32;
  int node_dim = 16;
  int d = 256;
  int gnn_layers = 3;
  int gnn_hidden = 256;
};

struct EncodeOptions {
  bool training = false;
  // Train-time cap on patches per bag; evaluation always uses the full bag.
  int patch_cap = 16;
  double gnn_dropout = 0.0;
  // Source of patch subsampling and dropout; required when training.
  Rng* rng = nullptr;
};

void init_encoders(ParamStore& store, const EncoderDims& dims, Rng& rng);

// Gated attention over the rows of `h` (n x in) with parameters under
// `prefix`.attn_v / attn_u / attn_w. Returns the 1 x in pooled vector and
// writes the 1 x n attention weights to `weights` when non-null.
ad::Var gated_attention_pool(ParamBinding& p, const std::string& prefix, ad::Var h,
                             ad::Var* weights = nullptr);

// Rows sorted lexicographically by value; ties keep original order.
std::vector<int> lexicographic_row_order(const Matrix& m);

ad::Var mil_encode(ParamBinding& p, const Matrix& patches, const EncodeOptions& opt,
                   ad::Var* attention = nullptr);
ad::Var graph_encode(ParamBinding& p, const CellGraph& graph, const EncoderDims& dims,
                     const EncodeOptions& opt);
std::pair<ad::Var, ad::Var> encode_all(ParamBinding& p, const CohortSample& sample,
                                       const EncoderDims& dims, const EncodeOptions& opt);

// Row-normalized adjacency: row v holds 1/deg(v) on v's neighbours, zeros for
// isolated nodes.
Matrix mean_adjacency(const CellGraph& graph);

}  // namespace cmoe
