#include "test_util.hpp"

#include "cmoe/concepts.hpp"
#include "cmoe/errors.hpp"
#include "cmoe/layers.hpp"

using namespace cmoe;
using cmoe::testing::check_param_gradients;
using cmoe::testing::random_matrix;

namespace {

const std::string kBlock = "concept.U1.L1.k0";

ParamStore block_store(int in, int d_c, int categories, bool residual, std::uint64_t seed = 1) {
  ParamStore s;
  Rng rng(seed);
  init_concept_block(s, kBlock, in, d_c, categories, residual, rng);
  return s;
}

Matrix row(std::initializer_list<double> v) {
  Matrix m(1, static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) m(0, i++) = x;
  return m;
}

}  // namespace

TEST_CASE("zero concept maps give zero states") {
  auto s = block_store(3, 4, 1, false);
  for (auto n : {".pos.w", ".pos.b", ".neg.w", ".neg.b"}) s.at(kBlock + n).setZero();
  ad::Tape t;
  ParamBinding p(t, s);
  const auto st = concept_states(p, kBlock, t.constant(row({1.0, -2.0, 3.0})));
  CHECK(st.pos.value().isZero(0.0));
  CHECK(st.neg.value().isZero(0.0));
}

TEST_CASE("concept states match LeakyReLU of a hand affine map") {
  auto s = block_store(2, 2, 1, false);
  s.at(kBlock + ".pos.w") << 1.0, 2.0, 0.5, -1.0;
  s.at(kBlock + ".pos.b") << 0.0, 0.25;
  s.at(kBlock + ".neg.w") << -1.0, 0.0, 0.0, 1.0;
  s.at(kBlock + ".neg.b") << 0.1, 0.0;
  ad::Tape t;
  ParamBinding p(t, s);
  const auto st = concept_states(p, kBlock, t.constant(row({1.0, -1.0})));
  // pos pre = (1 - 0.5, 2 + 1 + 0.25) = (0.5, 3.25); neg pre = (-1 + 0.1, -1)
  CHECK(st.pos.value()(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(st.pos.value()(0, 1) == doctest::Approx(3.25).epsilon(1e-15));
  CHECK(st.neg.value()(0, 0) == doctest::Approx(-0.009).epsilon(1e-13));
  CHECK(st.neg.value()(0, 1) == doctest::Approx(-0.01).epsilon(1e-13));
  CHECK_THROWS_AS(concept_states(p, kBlock, t.constant(row({1.0, 2.0, 3.0}))), DataError);
}

TEST_CASE("concept states have width 16 under defaults") {
  const auto s = block_store(256, 16, 1, true);
  ad::Tape t;
  ParamBinding p(t, s);
  const auto st = concept_states(p, kBlock, t.constant(Matrix::Ones(1, 256)));
  CHECK(st.pos.cols() == 16);
  CHECK(st.neg.cols() == 16);
}

TEST_CASE("scalar activation is the sigmoid of the scorer") {
  auto s = block_store(2, 2, 1, false);
  ad::Tape t;
  ParamBinding p(t, s);
  ConceptStates st{t.constant(row({0.5, 1.0})), t.constant(row({-0.25, 2.0}))};

  s.at(kBlock + ".score.w").setZero();
  s.at(kBlock + ".score.b").setZero();
  {
    ad::Tape t2;
    ParamBinding p2(t2, s);
    ConceptStates st2{t2.constant(st.pos.value()), t2.constant(st.neg.value())};
    CHECK(concept_activation(p2, kBlock, st2).activation.scalar() == 0.5);
  }
  s.at(kBlock + ".score.b") << 40.0;
  {
    ad::Tape t2;
    ParamBinding p2(t2, s);
    ConceptStates st2{t2.constant(st.pos.value()), t2.constant(st.neg.value())};
    CHECK(concept_activation(p2, kBlock, st2).activation.scalar() >= 1.0 - 1e-12);
  }
  s.at(kBlock + ".score.w").setOnes();
  s.at(kBlock + ".score.b").setZero();
  {
    ad::Tape t2;
    ParamBinding p2(t2, s);
    ConceptStates st2{t2.constant(st.pos.value()), t2.constant(st.neg.value())};
    const double sum = 0.5 + 1.0 - 0.25 + 2.0;
    CHECK(concept_activation(p2, kBlock, st2).activation.scalar() ==
          doctest::Approx(1.0 / (1.0 + std::exp(-sum))).epsilon(1e-15));
  }
}

TEST_CASE("ordinal activation is the expected normalized level") {
  ad::Tape t;
  Matrix probs(2, 4);
  probs << 0.9, 0.1, 0.1, 0.1, 0.2, 0.2, 0.6, 0.8;
  const Matrix a = ordinal_activation(t.constant(probs)).value();
  CHECK(a(0, 0) == doctest::Approx((0.1 / 3 + 0.1 * 2 / 3 + 0.1) / 1.2).epsilon(1e-14));
  CHECK(a(1, 0) == doctest::Approx((0.2 / 3 + 0.6 * 2 / 3 + 0.8) / 1.8).epsilon(1e-14));
  CHECK(a(0, 0) >= 0.0);
  CHECK(a(1, 0) <= 1.0);
}

TEST_CASE("concept embedding endpoints and residual mix") {
  ad::Tape t;
  const Matrix cp = row({1.0, 2.0}), cn = row({-3.0, 0.5}), res = row({0.25, -0.75});
  ConceptStates st{t.constant(cp), t.constant(cn)};
  CHECK(concept_embed(st, t.constant(row({1.0})), {}, 0.0).value() == cp);
  CHECK(concept_embed(st, t.constant(row({0.0})), {}, 0.0).value() == cn);
  CHECK(concept_embed(st, t.constant(row({1.0})), t.constant(res), 0.0).value() == cp);
  const Matrix mix = concept_embed(st, t.constant(row({0.25})), t.constant(res), 1.0).value();
  CHECK(mix(0, 0) == doctest::Approx(0.25 * 1.0 + 0.75 * -3.0 + 0.25).epsilon(1e-15));
  CHECK(mix(0, 1) == doctest::Approx(0.25 * 2.0 + 0.75 * 0.5 - 0.75).epsilon(1e-15));
}

TEST_CASE("level-2 input concatenates z and B1") {
  ad::Tape t;
  Rng rng(1);
  const Matrix z = random_matrix(1, 256, rng);
  ad::Var in = level2_input(t.constant(z), t.constant(Matrix::Zero(1, 80)), 256, 80);
  CHECK(in.cols() == 336);
  CHECK(in.value().leftCols(256) == z);
  CHECK(in.value().rightCols(80).isZero(0.0));
  CHECK(ad::slice_cols(in, 0, 256).value() == z);
  CHECK_THROWS_AS(level2_input(t.constant(z), t.constant(Matrix::Zero(1, 79)), 256, 80), DataError);
}

TEST_CASE("expert head is a single affine layer") {
  ParamStore s;
  Rng rng(1);
  init_affine(s, "head.U1", 80, 4, rng);
  ad::Tape t;
  const Matrix b = random_matrix(1, 80, rng);
  {
    ParamBinding p(t, s);
    const Matrix l = expert_head(p, ExpertId::kU1, t.constant(b)).value();
    CHECK((l - (b * s.at("head.U1.w") + s.at("head.U1.b"))).cwiseAbs().maxCoeff() <= 1e-14);
    CHECK_THROWS_AS(expert_head(p, ExpertId::kU1, t.constant(Matrix::Zero(1, 81))), DataError);
  }
  s.at("head.U1.w").setZero();
  s.at("head.U1.b") << 1, 2, 3, 4;
  ParamBinding p(t, s);
  CHECK(expert_head(p, ExpertId::kU1, t.constant(b)).value() == s.at("head.U1.b"));
}

TEST_CASE("gate weights form a distribution") {
  ParamStore s;
  Rng rng(1);
  init_affine(s, "gate", 6, 4, rng);
  ad::Tape t;
  const Matrix e1 = random_matrix(5, 3, rng), e2 = random_matrix(5, 3, rng);
  {
    ParamBinding p(t, s);
    const Matrix a = gate(p, t.constant(e1), t.constant(e2)).value();
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
      CHECK(a.row(r).sum() == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(a.row(r).minCoeff() >= 0.0);
    }
  }
  s.at("gate.w").setZero();
  s.at("gate.b").setZero();
  {
    ParamBinding p(t, s);
    CHECK(gate(p, t.constant(e1), t.constant(e2)).value().isConstant(0.25, 0.0));
  }
  s.at("gate.b") << 1, 0, 0, 0;
  ParamBinding p(t, s);
  const Matrix a = gate(p, t.constant(e1), t.constant(e2)).value();
  CHECK(a(0, 0) == doctest::Approx(0.4755).epsilon(1e-4));
  CHECK(a(0, 1) == doctest::Approx(0.1748).epsilon(1e-3));
}

TEST_CASE("fused logits are the gate-weighted sum") {
  ad::Tape t;
  Rng rng(2);
  std::array<ad::Var, 4> logits;
  std::array<Matrix, 4> raw;
  for (int e = 0; e < 4; ++e) {
    raw[e] = random_matrix(1, 3, rng);
    logits[e] = t.constant(raw[e]);
  }
  CHECK(fuse_predict(t.constant(row({0, 0, 1, 0})), logits).value() == raw[2]);
  const Matrix mean = (raw[0] + raw[1] + raw[2] + raw[3]) / 4.0;
  CHECK((fuse_predict(t.constant(row({0.25, 0.25, 0.25, 0.25})), logits).value() - mean).cwiseAbs().maxCoeff() <=
        1e-15);
  const Matrix hand = 0.1 * raw[0] + 0.2 * raw[1] + 0.3 * raw[2] + 0.4 * raw[3];
  CHECK((fuse_predict(t.constant(row({0.1, 0.2, 0.3, 0.4})), logits).value() - hand).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("binary pair encoding interleaves p and 1-p") {
  ad::Tape t;
  const Matrix enc = binary_pair_encoding(t.constant(row({0.2, 0.9}))).value();
  CHECK(enc.cols() == 4);
  CHECK(enc(0, 0) == 0.2);
  CHECK(enc(0, 1) == 0.8);
  CHECK(enc(0, 2) == 0.9);
  CHECK(enc(0, 3) == doctest::Approx(0.1).epsilon(1e-15));
}

TEST_CASE("concept block gradients match finite differences") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    for (int categories : {1, 4}) {
      auto s = block_store(3, 2, categories, true, seed);
      Rng rng(seed + 10);
      const Matrix z = random_matrix(2, 3, rng), w = random_matrix(2, 2, rng);
      auto f = [&](ParamBinding& p) {
        ad::Var zv = p.tape().constant(z);
        auto st = concept_states(p, kBlock, zv);
        auto act = concept_activation(p, kBlock, st);
        ad::Var c = concept_embed(st, act.activation, concept_residual(p, kBlock, zv), 1.0);
        return ad::add(ad::sum(ad::mul(c, p.tape().constant(w))), ad::sum(ad::log(act.probs)));
      };
      INFO("seed " << seed << " categories " << categories);
      CHECK(check_param_gradients(s, f).worst <= 1e-4);
    }
  }
}

TEST_CASE("hard bottleneck passes gradient to z only through the concept paths") {
  auto s = block_store(3, 2, 1, true);
  Rng rng(3);
  const Matrix z = random_matrix(1, 3, rng);
  auto grad_z = [&](double gamma) {
    ad::Tape t;
    ParamBinding p(t, s);
    ad::Var zv = t.variable(z);
    auto st = concept_states(p, kBlock, zv);
    auto act = concept_activation(p, kBlock, st);
    ad::Var c = concept_embed(st, act.activation, concept_residual(p, kBlock, zv), gamma);
    t.backward(ad::sum(c));
    return t.grad(zv);
  };
  CHECK(!grad_z(0.0).isZero(0.0));
  s.at(kBlock + ".pos.w").setZero();
  s.at(kBlock + ".neg.w").setZero();
  CHECK(grad_z(0.0).isZero(0.0));
  CHECK(!grad_z(1.0).isZero(0.0));
}
