#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "crsae/losses.hpp"
#include "crsae/rng.hpp"
#include "oracles.hpp"

using namespace crsae;

TEST_CASE("reconstruction loss of the zero window is zero") {
  auto rng = make_rng(51);
  const FilterBank bank = oracle::random_unit_bank(2, 4, rng);
  EncoderConfig cfg;
  cfg.T = 10;
  cfg.L = estimate_lipschitz(bank, 20).value;
  cfg.lambda = 1.0;
  cfg.sigma = 0.5;
  REQUIRE(loss_h(Vec::Zero(20), bank, cfg) == 0.0);
}

TEST_CASE("a huge lambda forces the loss to half the signal energy") {
  auto rng = make_rng(52);
  const FilterBank bank = oracle::random_unit_bank(2, 5, rng);
  const Vec y = oracle::random_signal(30, rng);
  EncoderConfig cfg;
  cfg.T = 12;
  cfg.L = estimate_lipschitz(bank, 30).value;
  cfg.sigma = 0.4;
  cfg.lambda = 1e9;
  REQUIRE_THAT(loss_h(y, bank, cfg), Catch::Matchers::WithinRel(0.5 * y.squaredNorm(), 1e-15));
}

TEST_CASE("a converged encoder reconstructs a planted noiseless instance") {
  auto rng = make_rng(53);
  const int C = 2, K = 5, N = 60;
  const FilterBank bank = oracle::random_unit_bank(C, K, rng);
  const Eigen::Index ne = bank.code_length(N);
  CodeMap planted = CodeMap::Zero(C, ne);
  planted(0, 10) = 4.0;
  planted(1, 35) = -3.0;
  const Vec y = apply_dict(bank, planted);

  EncoderConfig cfg;
  cfg.T = 4000;
  cfg.L = estimate_lipschitz(bank, N).value;
  cfg.sigma = 1.0;
  cfg.lambda = 1e-7;  // vanishing l1 weight: the lasso solution approaches the planted code
  const double loss = loss_h(y, bank, cfg);
  REQUIRE(loss <= 1e-8 * y.squaredNorm());
}

TEST_CASE("lambda loss matches an independent arithmetic evaluation") {
  auto rng = make_rng(54);
  const FilterBank bank = oracle::random_unit_bank(3, 4, rng);
  const int N = 26;
  const Vec y = oracle::random_signal(N, rng);
  EncoderConfig cfg;
  cfg.T = 15;
  cfg.L = estimate_lipschitz(bank, N).value;
  cfg.lambda = 1.7;
  cfg.sigma = 0.6;
  const GammaPrior prior{2.2, 3.1};

  const CodeMap x = encode(y, bank, cfg).code;
  double s = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) s += std::abs(x.data()[i]);
  const double C = static_cast<double>(bank.num_filters());
  const double ne = static_cast<double>(bank.code_length(N));
  const double expected =
      cfg.lambda * (s + C * prior.delta) - (ne + prior.r - 1.0) * C * std::log(cfg.lambda);
  REQUIRE_THAT(loss_lambda(y, bank, cfg, prior), Catch::Matchers::WithinRel(expected, 1e-12));
}

TEST_CASE("closed-form lambda stationary point") {
  const GammaPrior prior{4.0, 2.0};
  SECTION("matches the analytic formula for random draws") {
    auto rng = make_rng(55);
    std::uniform_real_distribution<double> su(0.0, 20.0);
    for (int i = 0; i < 10; ++i) {
      const double s = su(rng);
      const Eigen::Index C = 1 + i % 4, ne = 17 + 3 * i;
      const double lam = lambda_stationary_point(s, C, ne, prior);
      const double expected = (static_cast<double>(ne) + prior.r - 1.0) *
                              static_cast<double>(C) /
                              (s + static_cast<double>(C) * prior.delta);
      REQUIRE_THAT(lam, Catch::Matchers::WithinRel(expected, 1e-15));
    }
  }
  SECTION("zero code norm reduces to the pure prior balance") {
    const Eigen::Index C = 3, ne = 40;
    REQUIRE_THAT(lambda_stationary_point(0.0, C, ne, prior),
                 Catch::Matchers::WithinRel(
                     (static_cast<double>(ne) + prior.r - 1.0) * 3.0 / (3.0 * prior.delta),
                     1e-15));
  }
}

TEST_CASE("invalid lambda and prior parameters are rejected") {
  REQUIRE_THROWS_AS(lambda_objective(1.0, 0.0, 2, 10, GammaPrior{1, 1}), DomainError);
  REQUIRE_THROWS_AS(lambda_objective(1.0, -2.0, 2, 10, GammaPrior{1, 1}), DomainError);
  REQUIRE_THROWS_AS(lambda_objective(1.0, 1.0, 2, 10, GammaPrior{0.0, 1.0}), ParamError);
  REQUIRE_THROWS_AS(lambda_objective(1.0, 1.0, 2, 10, GammaPrior{1.0, -1.0}), ParamError);
  REQUIRE(GammaPrior{3.0, 1.5}.mean() == 2.0);
}

TEST_CASE("suggested lambda follows the sqrt(2 log(C Ne)) / sigma rule") {
  REQUIRE_THAT(suggested_lambda(4, 983, 0.024),
               Catch::Matchers::WithinRel(std::sqrt(2.0 * std::log(4.0 * 983.0)) / 0.024,
                                          1e-15));
  REQUIRE_THROWS_AS(suggested_lambda(4, 983, 0.0), ParamError);
}
