#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "shmguard/attacks.hpp"
#include "test_support.hpp"

namespace shmguard {
namespace {

using testing::random_tensor;

// Two-class model on a scalar input with logits [w x, -w x].
Network logistic_model(float w) {
  Network net = build(Architecture{{1}, {LayerSpec::dense(1, 2)}}, 0);
  net.params[0].data = {w, -w};
  net.params[1].data = {0.0F, 0.0F};
  return net;
}

AttackSpec spec_of(AttackFamily f, float eps, float step = 0.0F, std::size_t iters = 1) {
  AttackSpec s;
  s.family = f;
  s.eps = eps;
  s.step = step;
  s.iters = iters;
  return s;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  return m;
}

TEST(Fgsm, ZeroBudgetIsIdentity) {
  Network net = build(mlp_preset({8}, 5, 3), 2);
  std::mt19937_64 rng(2);
  Tensor x = random_tensor({10, 8}, rng);
  auto y = testing::random_labels(10, 3, rng);
  AdvBatch adv = fgsm(net, x, y, spec_of(AttackFamily::fgsm, 0.0F));
  EXPECT_EQ(adv.x_adv.data, x.data);
  const auto pred = predict(net, x);
  for (std::size_t r = 0; r < 10; ++r) EXPECT_EQ(adv.success[r], pred[r] != y[r]);
}

TEST(Fgsm, LogisticHandGradient) {
  // CE for label 1 is log(1 + exp(2x)); its derivative 2 sigmoid(2x) is positive.
  Network net = logistic_model(1.0F);
  for (float x0 : {-2.0F, -0.3F, 0.0F, 0.7F, 3.0F}) {
    Tensor x = Tensor::matrix(1, 1, {x0});
    std::vector<std::size_t> y{1};
    const double hand = 2.0 / (1.0 + std::exp(-2.0 * x0));
    EXPECT_NEAR(input_gradient(net, x, y)[0], hand, 1e-6);
    AdvBatch adv = fgsm(net, x, y, spec_of(AttackFamily::fgsm, 0.25F));
    EXPECT_EQ(adv.x_adv[0], x0 + 0.25F);
  }
}

TEST(Fgsm, PerturbationIsZeroOrEps) {
  Network net = build(cnn_preset(2, 32, 3, 4, 5, 2, 8, 6), 5);
  std::mt19937_64 rng(5);
  Tensor x = random_tensor({4, 2, 32}, rng);
  auto y = testing::random_labels(4, 3, rng);
  const float eps = 0.125F;
  AdvBatch adv = fgsm(net, x, y, spec_of(AttackFamily::fgsm, eps));
  const Tensor g = input_gradient(net, x, y);
  bool any_moved = false;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = std::abs(static_cast<double>(adv.x_adv[i]) - x[i]);
    if (g[i] == 0.0F) {
      EXPECT_EQ(d, 0.0);
    } else {
      EXPECT_NEAR(d, eps, 1e-6);
      any_moved = true;
    }
  }
  if (any_moved) {
    for (std::size_t r = 0; r < 4; ++r) EXPECT_LE(adv.linf[r], eps + 1e-6);
  }
}

TEST(Bim, SingleStepMatchesFgsm) {
  Network net = build(mlp_preset({12}, 9, 4), 7);
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = random_tensor({6, 12}, rng, -3, 3);
    auto y = testing::random_labels(6, 4, rng);
    const float eps = std::uniform_real_distribution<float>(0.01F, 1.0F)(rng);
    AdvBatch a = fgsm(net, x, y, spec_of(AttackFamily::fgsm, eps));
    AdvBatch b = bim(net, x, y, spec_of(AttackFamily::bim, eps, eps * 1.5F, 1));
    EXPECT_EQ(a.x_adv.data, b.x_adv.data);
  }
}

TEST(Bim, EveryIterateStaysInBall) {
  // The k-step run is exactly the k-th iterate of any longer run.
  Network net = build(mlp_preset({12}, 9, 4), 8);
  std::mt19937_64 rng(8);
  Tensor x = random_tensor({5, 12}, rng);
  auto y = testing::random_labels(5, 4, rng);
  const float eps = 0.2F;
  for (std::size_t k = 1; k <= 20; ++k) {
    AdvBatch adv = bim(net, x, y, spec_of(AttackFamily::bim, eps, eps / 10, k));
    EXPECT_LE(max_abs_diff(adv.x_adv, x), eps + 1e-6) << k;
  }
}

TEST(Pgd, WithoutRandomStartMatchesBim) {
  Network net = build(cnn_preset(2, 32, 3, 4, 5, 2, 8, 6), 9);
  std::mt19937_64 rng(9);
  Tensor x = random_tensor({4, 2, 32}, rng);
  auto y = testing::random_labels(4, 3, rng);
  AttackSpec s = spec_of(AttackFamily::pgd, 0.1F, 0.01F, 20);
  s.seed = 77;
  AdvBatch a = pgd(net, x, y, s);
  AdvBatch b = bim(net, x, y, spec_of(AttackFamily::bim, 0.1F, 0.01F, 20));
  EXPECT_EQ(a.x_adv.data, b.x_adv.data);
}

TEST(Pgd, RandomStartIsSeededAndContained) {
  Network net = build(mlp_preset({10}, 6, 3), 10);
  std::mt19937_64 rng(10);
  Tensor x = random_tensor({8, 10}, rng);
  auto y = testing::random_labels(8, 3, rng);
  AttackSpec s = spec_of(AttackFamily::pgd, 0.3F, 1e-6F, 1);
  s.random_start = true;
  s.seed = 5;
  AdvBatch a = pgd(net, x, y, s);
  AdvBatch b = pgd(net, x, y, s);
  EXPECT_EQ(a.x_adv.data, b.x_adv.data);
  EXPECT_LE(max_abs_diff(a.x_adv, x), 0.3 + 1e-6);
  EXPECT_GT(max_abs_diff(a.x_adv, x), 0.1);
  s.seed = 6;
  EXPECT_NE(pgd(net, x, y, s).x_adv.data, a.x_adv.data);
}

TEST(AttackProperty, BallAndRangeContainment) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<float> u(0.0F, 1.0F);
  for (int trial = 0; trial < 60; ++trial) {
    Network net = build(mlp_preset({6}, 5, 3), rng());
    Tensor x = random_tensor({4, 6}, rng, -2, 2);
    auto y = testing::random_labels(4, 3, rng);
    const AttackFamily fam = std::array{AttackFamily::fgsm, AttackFamily::bim, AttackFamily::pgd}[trial % 3];
    AttackSpec s = spec_of(fam, u(rng), 0.01F + u(rng) * 0.3F, 1 + rng() % 10);
    s.random_start = trial % 2 == 0;
    s.seed = rng();
    if (trial % 4 == 0) s.clamp_range = std::pair{-1.5F, 1.5F};
    AdvBatch adv = run_attack(net, x, y, s);
    for (std::size_t i = 0; i < x.size(); ++i) {
      EXPECT_LE(std::abs(static_cast<double>(adv.x_adv[i]) - x[i]), s.eps + 1e-6);
      // Inputs already outside the range can only move eps toward it.
      if (s.clamp_range && std::abs(x[i]) <= 1.5F) {
        EXPECT_GE(adv.x_adv[i], -1.5F);
        EXPECT_LE(adv.x_adv[i], 1.5F);
      }
    }
  }
}

TEST(CwL2, AlreadyMisclassifiedReturnsInput) {
  Network net = logistic_model(1.0F);
  Tensor x = Tensor::matrix(1, 1, {-1.0F});  // logits [-1, 1], true class 0 already loses by 2
  std::vector<std::size_t> y{0};
  AttackSpec s = spec_of(AttackFamily::cw_l2, std::numeric_limits<float>::infinity());
  s.cw_c = 1.0F;
  s.cw_k = 0.5F;
  AdvBatch adv = cw_l2(net, x, y, s);
  EXPECT_EQ(adv.x_adv[0], -1.0F);
  EXPECT_EQ(adv.l2[0], 0.0);
  EXPECT_TRUE(adv.success[0]);
}

TEST(CwL2, LargeWeightFindsMisclassificationOnLinearToy) {
  std::mt19937_64 rng(12);
  Network net = build(Architecture{{4}, {LayerSpec::dense(4, 2)}}, 3);
  Tensor x = random_tensor({16, 4}, rng);
  auto y = predict(net, x);  // start fully correct
  AttackSpec s = spec_of(AttackFamily::cw_l2, std::numeric_limits<float>::infinity());
  s.cw_c = 100.0F;
  s.cw_iters = 300;
  s.cw_lr = 0.01F;
  AdvBatch adv = cw_l2(net, x, y, s);
  EXPECT_EQ(adv.success_rate(), 1.0);
}

TEST(CwL2, TargetedReachesTarget) {
  std::mt19937_64 rng(13);
  Network net = build(Architecture{{5}, {LayerSpec::dense(5, 3)}}, 4);
  Tensor x = random_tensor({12, 5}, rng);
  AttackSpec s = spec_of(AttackFamily::cw_l2, std::numeric_limits<float>::infinity());
  s.cw_c = 100.0F;
  s.cw_iters = 400;
  s.cw_target = 2;
  AdvBatch adv = cw_l2(net, x, predict(net, x), s);
  for (std::size_t p : predict(net, adv.x_adv)) EXPECT_EQ(p, 2U);
  s.cw_target = 3;
  EXPECT_THROW(cw_l2(net, x, predict(net, x), s), ConfigError);
}

TEST(CwL2, FiniteBudgetIsRespected) {
  std::mt19937_64 rng(14);
  Network net = build(mlp_preset({6}, 8, 3), 14);
  Tensor x = random_tensor({6, 6}, rng);
  AttackSpec s = spec_of(AttackFamily::cw_l2, 0.05F);
  s.cw_c = 50.0F;
  s.cw_iters = 100;
  AdvBatch adv = cw_l2(net, x, predict(net, x), s);
  EXPECT_LE(max_abs_diff(adv.x_adv, x), 0.05 + 1e-6);
}

TEST(Gaussian, ZeroSigmaIsIdentityAndSeeded) {
  std::mt19937_64 rng(15);
  Tensor x = random_tensor({3, 7}, rng);
  EXPECT_EQ(gaussian_perturb(x, 0.0F, 1).data, x.data);
  EXPECT_EQ(gaussian_perturb(x, 0.5F, 9).data, gaussian_perturb(x, 0.5F, 9).data);
  EXPECT_NE(gaussian_perturb(x, 0.5F, 9).data, gaussian_perturb(x, 0.5F, 10).data);
  EXPECT_THROW(gaussian_perturb(x, -1.0F, 1), ConfigError);
}

TEST(Gaussian, MomentsOverAMillionDraws) {
  const float sigma = 0.3F;
  Tensor x(Shape{1000, 1000}, 0.0F);
  x.data.assign(x.size(), 0.0F);
  Tensor n = gaussian_perturb(x, sigma, 123);
  double mean = 0, sq = 0;
  for (float v : n.data) mean += v;
  mean /= static_cast<double>(n.size());
  for (float v : n.data) sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sq / static_cast<double>(n.size() - 1));
  EXPECT_LT(std::abs(mean), 5.0 * sigma / 1000.0);
  EXPECT_NEAR(sd, sigma, 0.01 * sigma);
}

TEST(Snr, TenthPerturbationIsTwentyDecibels) {
  std::mt19937_64 rng(16);
  Tensor x = random_tensor({4, 9}, rng, 0.5F, 2.0F);
  Tensor adv = x;
  for (float& v : adv.data) v += v / 10.0F;
  for (std::size_t r = 0; r < 4; ++r) {
    // x / 10 in float differs from the exact tenth by rounding only.
    Tensor row_adv = slice_rows(adv, r, 1);
    EXPECT_NEAR(snr_db(slice_rows(x, r, 1), row_adv)[0], 20.0, 1e-5);
  }
  EXPECT_TRUE(std::isinf(snr_db(x, x)[0]));
  EXPECT_THROW(snr_db(Tensor(Shape{1, 3}, 0.0F), Tensor(Shape{1, 3}, 1.0F)), NumericError);
  EXPECT_THROW(snr_db(x, Tensor(Shape{4, 8}, 0.0F)), ShapeError);
}

TEST(Snr, MatchesDirectFormula) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = random_tensor({1, 16}, rng);
    Tensor adv = random_tensor({1, 16}, rng);
    long double s = 0, n = 0;
    for (std::size_t i = 0; i < 16; ++i) {
      s += static_cast<long double>(x[i]) * x[i];
      const long double d = static_cast<long double>(adv[i]) - x[i];
      n += d * d;
    }
    EXPECT_NEAR(snr_db(x, adv)[0], static_cast<double>(10.0L * std::log10(s / n)), 1e-6);
  }
}

TEST(AttackSpecTest, Validation) {
  EXPECT_THROW(spec_of(AttackFamily::fgsm, -0.1F).validate(), ConfigError);
  EXPECT_THROW(spec_of(AttackFamily::bim, 0.1F, 0.0F).validate(), ConfigError);
  EXPECT_THROW(spec_of(AttackFamily::pgd, 0.1F, 0.1F, 0).validate(), ConfigError);
  AttackSpec cw = spec_of(AttackFamily::cw_l2, 1.0F);
  cw.cw_c = 0.0F;
  EXPECT_THROW(cw.validate(), ConfigError);
  EXPECT_EQ(attack_family_from("pgd"), AttackFamily::pgd);
  EXPECT_THROW(attack_family_from("deepfool"), ConfigError);
}

}  // namespace
}  // namespace shmguard
