#include "test_util.hpp"

#include "cmoe/errors.hpp"
#include "cmoe/experts.hpp"

using namespace cmoe;
using cmoe::testing::check_input_gradient;
using cmoe::testing::check_param_gradients;
using cmoe::testing::random_matrix;

TEST_CASE("sign table matches the expert semantics") {
  CHECK(interaction_sign(ExpertId::kU1, 0) == -1);
  CHECK(interaction_sign(ExpertId::kU1, 1) == +1);
  CHECK(interaction_sign(ExpertId::kU2, 0) == +1);
  CHECK(interaction_sign(ExpertId::kU2, 1) == -1);
  CHECK(interaction_sign(ExpertId::kR, 0) == +1);
  CHECK(interaction_sign(ExpertId::kR, 1) == +1);
  CHECK(interaction_sign(ExpertId::kS, 0) == -1);
  CHECK(interaction_sign(ExpertId::kS, 1) == -1);
}

TEST_CASE("zero expert weights return the last bias") {
  ParamStore s;
  Rng rng(1);
  init_experts(s, 3, rng);
  s.at("expert.R.fc1.w").setZero();
  s.at("expert.R.fc2.w").setZero();
  s.at("expert.R.fc2.b") << 0.5, -1.0, 2.0;
  ad::Tape t;
  ParamBinding p(t, s);
  Rng data(2);
  const Matrix z = expert_forward(p, t.constant(random_matrix(2, 3, data)), t.constant(random_matrix(2, 3, data)),
                                  ExpertId::kR)
                       .value();
  CHECK(z.row(0) == s.at("expert.R.fc2.b"));
  CHECK(z.row(1) == s.at("expert.R.fc2.b"));
}

TEST_CASE("expert MLP matches matrix arithmetic") {
  ParamStore s;
  Rng rng(1);
  init_experts(s, 2, rng);
  s.at("expert.S.fc1.w") << 1, 0, 0, 1, 1, 0, 0, -1;  // 4x2
  s.at("expert.S.fc1.b") << 0.0, 0.5;
  s.at("expert.S.fc2.w") << 2, 0, 1, 1;
  s.at("expert.S.fc2.b") << 0.0, 1.0;
  Matrix e1(1, 2), e2(1, 2);
  e1 << 1.0, 2.0;
  e2 << 3.0, 4.0;
  // hidden = (1+3, 2-4+0.5) = (4, -1.5) -> LeakyReLU -> (4, -0.015)
  const double h0 = 4.0, h1 = -0.015;
  ad::Tape t;
  ParamBinding p(t, s);
  const Matrix z = expert_forward(p, t.constant(e1), t.constant(e2), ExpertId::kS).value();
  CHECK(z(0, 0) == doctest::Approx(2 * h0 + 1 * h1).epsilon(1e-14));
  CHECK(z(0, 1) == doctest::Approx(0 * h0 + 1 * h1 + 1.0).epsilon(1e-14));
}

TEST_CASE("expert output width is 256 under defaults") {
  ParamStore s;
  Rng rng(1);
  init_experts(s, 256, rng);
  ad::Tape t;
  ParamBinding p(t, s);
  ad::Var e = t.constant(Matrix::Ones(1, 256));
  CHECK(expert_forward(p, e, e, ExpertId::kU1).cols() == 256);
}

TEST_CASE("perturbation sigma and noise") {
  CHECK_THROWS_AS(perturbation_sigma(Matrix::Ones(2, 2), 0.0), ConfigError);
  CHECK(perturbation_sigma(Matrix::Constant(3, 3, 2.0), 1.5) == 1.5);
  Matrix m(1, 4);
  m << 1, 2, 3, 4;
  CHECK(perturbation_sigma(m, 2.0) == doctest::Approx(2.0 * std::sqrt(1.25)).epsilon(1e-15));

  ad::Tape t;
  ad::Var e = t.constant(Matrix::Zero(1, 100000));
  Rng a(5), b(5);
  const Matrix na = perturb_modality(e, 0.7, a).value();
  CHECK(na == perturb_modality(e, 0.7, b).value());
  const double mean = na.mean();
  const double sd = std::sqrt((na.array() - mean).square().mean());
  CHECK(std::abs(sd - 0.7) / 0.7 <= 0.01);
}

TEST_CASE("KL of the two-class reference pair") {
  ad::Tape t;
  Matrix p(1, 2), q(1, 2);
  p << 0.9, 0.1;
  q << 0.5, 0.5;
  const double kl = kl_rows(t.constant(p), t.constant(q)).scalar();
  CHECK(kl == doctest::Approx(0.9 * std::log(1.8) + 0.1 * std::log(0.2)).epsilon(1e-14));
  CHECK(kl == doctest::Approx(0.368).epsilon(1e-3));
}

TEST_CASE("interaction loss on hand-built distributions") {
  ad::Tape t;
  Matrix p(1, 2), q(1, 2);
  p << 0.9, 0.1;
  q << 0.5, 0.5;
  const double kl = 0.9 * std::log(1.8) + 0.1 * std::log(0.2);
  std::array<ad::Var, kNumExperts> clean;
  std::array<std::array<ad::Var, kNumExperts>, kNumModalities> pert;
  for (int e = 0; e < kNumExperts; ++e) {
    clean[e] = t.constant(p);
    for (int m = 0; m < kNumModalities; ++m) pert[m][e] = t.constant(p);
  }
  CHECK(interaction_loss(clean, pert).scalar() == 0.0);

  pert[0][0] = t.constant(q);  // U1 under modality 1: sign -1
  pert[1][2] = t.constant(q);  // R under modality 2: sign +1
  pert[1][3] = t.constant(q);  // S under modality 2: sign -1
  CHECK(interaction_loss(clean, pert).scalar() == doctest::Approx((-kl + kl - kl) / 4.0).epsilon(1e-14));

  Matrix bad(1, 2);
  bad << 0.6, 0.6;
  pert[0][1] = t.constant(bad);
  CHECK_THROWS_AS(interaction_loss(clean, pert), DataError);
}

TEST_CASE("interaction loss gradient matches finite differences") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    Rng rng(seed);
    // 12 blocks of 2x3 logits: 4 clean then 8 perturbed.
    const Matrix x = random_matrix(24, 3, rng);
    auto f = [](ad::Tape&, ad::Var v) {
      std::array<ad::Var, kNumExperts> clean;
      std::array<std::array<ad::Var, kNumExperts>, kNumModalities> pert;
      for (int e = 0; e < kNumExperts; ++e) {
        clean[e] = ad::softmax_rows(ad::slice_rows(v, 2 * e, 2));
        for (int m = 0; m < kNumModalities; ++m)
          pert[m][e] = ad::softmax_rows(ad::slice_rows(v, 8 + 8 * m + 2 * e, 2));
      }
      return interaction_loss(clean, pert);
    };
    CHECK(check_input_gradient(x, f) <= 1e-4);
  }
}

TEST_CASE("expert gradients match finite differences") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    ParamStore s;
    Rng rng(seed);
    init_experts(s, 3, rng);
    const Matrix e1 = random_matrix(2, 3, rng), e2 = random_matrix(2, 3, rng), w = random_matrix(2, 3, rng);
    auto f = [&](ParamBinding& p) {
      ad::Tape& t = p.tape();
      ad::Var acc;
      for (int e = 0; e < kNumExperts; ++e) {
        ad::Var z = expert_forward(p, t.constant(e1), t.constant(e2), static_cast<ExpertId>(e));
        ad::Var term = ad::sum(ad::mul(ad::tanh(z), t.constant(w)));
        acc = acc.valid() ? ad::add(acc, term) : term;
      }
      return acc;
    };
    CHECK(check_param_gradients(s, f).worst <= 1e-4);
  }
}
