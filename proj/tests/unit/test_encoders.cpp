#include "test_util.hpp"

#include "cmoe/encoders.hpp"
#include "cmoe/errors.hpp"

#include <numeric>

using namespace cmoe;
using cmoe::testing::check_param_gradients;
using cmoe::testing::random_matrix;

namespace {

EncoderDims small_dims() { return {3, 2, 4, 2, 5}; }

ParamStore make_encoders(const EncoderDims& dims, std::uint64_t seed) {
  ParamStore s;
  Rng rng(seed);
  init_encoders(s, dims, rng);
  return s;
}

Matrix eval_mil(const ParamStore& s, const Matrix& patches, Matrix* attn = nullptr) {
  ad::Tape t;
  ParamBinding p(t, s);
  ad::Var a;
  const Matrix out = mil_encode(p, patches, {}, &a).value();
  if (attn) *attn = a.value();
  return out;
}

Matrix eval_graph(const ParamStore& s, const CellGraph& g, const EncoderDims& dims) {
  ad::Tape t;
  ParamBinding p(t, s);
  return graph_encode(p, g, dims, {}).value();
}

}  // namespace

TEST_CASE("single patch gets all the attention") {
  const auto dims = small_dims();
  const auto s = make_encoders(dims, 1);
  Rng rng(2);
  const Matrix patch = random_matrix(1, dims.patch_dim, rng);
  Matrix attn;
  const Matrix out = eval_mil(s, patch, &attn);
  CHECK(attn(0, 0) == 1.0);
  const Matrix expect = patch * s.at("mil.proj.w") + s.at("mil.proj.b");
  CHECK((out - expect).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("bag of identical patches matches a single patch") {
  const auto dims = small_dims();
  const auto s = make_encoders(dims, 1);
  Rng rng(3);
  const Matrix patch = random_matrix(1, dims.patch_dim, rng);
  const Matrix bag = patch.replicate(5, 1);
  Matrix attn;
  const Matrix out = eval_mil(s, bag, &attn);
  CHECK(attn.sum() == doctest::Approx(1.0).epsilon(1e-15));
  CHECK((out - eval_mil(s, patch)).cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("two-patch gated attention matches a hand computation") {
  EncoderDims dims{2, 2, 2, 1, 2};
  auto s = make_encoders(dims, 1);
  s.at("mil.attn_v.w") << 1.0, 0.0, 0.0, 1.0;
  s.at("mil.attn_v.b").setZero();
  s.at("mil.attn_u.w") << 0.5, -0.5, 0.0, 1.0;
  s.at("mil.attn_u.b") << 0.1, 0.0;
  s.at("mil.attn_w.w") << 1.0, 2.0;
  s.at("mil.proj.w") << 1.0, 0.0, 0.0, 1.0;
  s.at("mil.proj.b").setZero();
  Matrix bag(2, 2);
  bag << 1.0, -1.0, 0.0, 2.0;

  auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  // h1 = (1,-1): V h = (1,-1), U h = (0.5+0.1, -0.5-1) = (0.6, -1.5)
  const double s1 = std::tanh(1.0) * sig(0.6) + 2.0 * std::tanh(-1.0) * sig(-1.5);
  // h2 = (0,2): V h = (0,2), U h = (0.1, 2)
  const double s2 = std::tanh(0.0) * sig(0.1) + 2.0 * std::tanh(2.0) * sig(2.0);
  const double a1 = std::exp(s1) / (std::exp(s1) + std::exp(s2));
  const double a2 = 1.0 - a1;
  Matrix attn;
  const Matrix out = eval_mil(s, bag, &attn);
  CHECK(out(0, 0) == doctest::Approx(a1 * 1.0 + a2 * 0.0).epsilon(1e-13));
  CHECK(out(0, 1) == doctest::Approx(a1 * -1.0 + a2 * 2.0).epsilon(1e-13));
}

TEST_CASE("empty inputs are rejected") {
  const auto dims = small_dims();
  const auto s = make_encoders(dims, 1);
  ad::Tape t;
  ParamBinding p(t, s);
  CHECK_THROWS_AS(mil_encode(p, Matrix(0, dims.patch_dim), {}), DataError);
  CHECK_THROWS_AS(graph_encode(p, CellGraph{Matrix(0, dims.node_dim), {}}, dims, {}), DataError);
}

TEST_CASE("isolated node output depends only on the self path") {
  const auto dims = small_dims();
  auto s = make_encoders(dims, 4);
  Rng rng(5);
  CellGraph g{random_matrix(1, dims.node_dim, rng), {}};
  const Matrix before = eval_graph(s, g, dims);
  for (int l = 0; l < dims.gnn_layers; ++l) s.at("gnn.layer" + std::to_string(l) + ".nbr.w").setRandom();
  CHECK(eval_graph(s, g, dims) == before);
}

TEST_CASE("edgeless graph of identical nodes matches a single node") {
  const auto dims = small_dims();
  const auto s = make_encoders(dims, 4);
  Rng rng(6);
  const Matrix node = random_matrix(1, dims.node_dim, rng);
  const Matrix one = eval_graph(s, {node, {}}, dims);
  const Matrix many = eval_graph(s, {node.replicate(4, 1), {}}, dims);
  CHECK((one - many).cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("three-node path graph matches mean aggregation by hand") {
  EncoderDims dims{2, 2, 2, 1, 2};
  auto s = make_encoders(dims, 1);
  s.at("gnn.layer0.self.w") << 1.0, 0.5, 0.0, 1.0;
  s.at("gnn.layer0.self.b") << 0.2, 0.1;
  s.at("gnn.layer0.nbr.w") << 0.5, 0.0, 0.25, 1.0;
  // Zero attention scorer gives uniform pooling; identity projection.
  s.at("gnn.attn_w.w").setZero();
  s.at("gnn.proj.w").setIdentity();
  s.at("gnn.proj.b").setZero();
  Matrix nodes(3, 2);
  nodes << 1.0, 2.0, 3.0, 0.5, 2.0, 1.0;
  CellGraph g{nodes, {{0, 1}, {1, 2}}};

  // Neighbour means: node0 <- node1, node1 <- (node0+node2)/2, node2 <- node1.
  const double m[3][2] = {{3.0, 0.5}, {1.5, 1.5}, {3.0, 0.5}};
  double pooled[2] = {0.0, 0.0};
  for (int v = 0; v < 3; ++v) {
    const double x0 = nodes(v, 0), x1 = nodes(v, 1);
    // row-vector convention: h' = x W_self + b + m W_nbr
    const double h0 = x0 * 1.0 + x1 * 0.0 + 0.2 + m[v][0] * 0.5 + m[v][1] * 0.25;
    const double h1 = x0 * 0.5 + x1 * 1.0 + 0.1 + m[v][0] * 0.0 + m[v][1] * 1.0;
    REQUIRE(h0 > 0.0);  // LeakyReLU acts as identity here
    REQUIRE(h1 > 0.0);
    pooled[0] += h0 / 3.0;
    pooled[1] += h1 / 3.0;
  }
  const Matrix out = eval_graph(s, g, dims);
  CHECK(out(0, 0) == doctest::Approx(pooled[0]).epsilon(1e-13));
  CHECK(out(0, 1) == doctest::Approx(pooled[1]).epsilon(1e-13));
}

TEST_CASE("patch order does not change the MIL embedding") {
  const auto dims = small_dims();
  const auto s = make_encoders(dims, 8);
  Rng rng(9);
  const Matrix bag = random_matrix(7, dims.patch_dim, rng);
  const Matrix base = eval_mil(s, bag);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<int> perm(7);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    Matrix shuffled(7, dims.patch_dim);
    for (int i = 0; i < 7; ++i) shuffled.row(i) = bag.row(perm[i]);
    CHECK(eval_mil(s, shuffled) == base);
  }
}

TEST_CASE("node relabelling does not change the graph embedding") {
  const auto dims = small_dims();
  const auto s = make_encoders(dims, 8);
  Rng rng(10);
  CellGraph g{random_matrix(6, dims.node_dim, rng), {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {1, 4}}};
  const Matrix base = eval_graph(s, g, dims);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<int> perm(6);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    CellGraph h{Matrix(6, dims.node_dim), {}};
    for (int i = 0; i < 6; ++i) h.nodes.row(perm[i]) = g.nodes.row(i);
    for (auto [a, b] : g.edges) h.edges.emplace_back(perm[b], perm[a]);
    CHECK((eval_graph(s, h, dims) - base).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("attention pooling is exactly invariant to node-state order") {
  const auto dims = small_dims();
  const auto s = make_encoders(dims, 8);
  Rng rng(11);
  const Matrix states = random_matrix(5, dims.gnn_hidden, rng);
  auto pool = [&](const Matrix& h) {
    ad::Tape t;
    ParamBinding p(t, s);
    ad::Var hv = t.constant(h);
    const auto order = lexicographic_row_order(h);
    return gated_attention_pool(p, "gnn", ad::gather_rows(hv, order)).value();
  };
  Matrix rev = states.colwise().reverse();
  CHECK(pool(rev) == pool(states));
}

TEST_CASE("encoder gradients match finite differences") {
  const auto dims = small_dims();
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    auto s = make_encoders(dims, seed);
    Rng rng(seed + 100);
    CohortSample smp;
    smp.patches = random_matrix(4, dims.patch_dim, rng);
    smp.graph = {random_matrix(4, dims.node_dim, rng), {{0, 1}, {1, 2}, {0, 2}}};
    const Matrix w1 = random_matrix(1, dims.d, rng), w2 = random_matrix(1, dims.d, rng);
    auto f = [&](ParamBinding& p) {
      auto [e1, e2] = encode_all(p, smp, dims, {});
      return ad::add(ad::sum(ad::mul(e1, p.tape().constant(w1))), ad::sum(ad::mul(e2, p.tape().constant(w2))));
    };
    const auto r = check_param_gradients(s, f);
    INFO("seed " << seed << " worst " << r.worst_param);
    CHECK(r.worst <= 1e-4);
  }
}

TEST_CASE("default encoder output width is 256") {
  EncoderDims dims;
  dims.gnn_layers = 1;
  const auto s = make_encoders(dims, 1);
  Rng rng(1);
  CohortSample smp;
  smp.patches = random_matrix(3, dims.patch_dim, rng);
  smp.graph = {random_matrix(3, dims.node_dim, rng), {{0, 1}}};
  ad::Tape t;
  ParamBinding p(t, s);
  auto [e1, e2] = encode_all(p, smp, dims, {});
  CHECK(e1.cols() == 256);
  CHECK(e2.cols() == 256);
}

TEST_CASE("training caps the bag at the patch limit") {
  const auto dims = small_dims();
  const auto s = make_encoders(dims, 1);
  Rng data(1);
  const Matrix bag = random_matrix(20, dims.patch_dim, data);
  ad::Tape t;
  ParamBinding p(t, s);
  Rng rng(2);
  EncodeOptions opt;
  opt.training = true;
  opt.patch_cap = 16;
  opt.rng = &rng;
  ad::Var attn;
  mil_encode(p, bag, opt, &attn);
  CHECK(attn.cols() == 16);
  mil_encode(p, bag, {}, &attn);
  CHECK(attn.cols() == 20);
}
