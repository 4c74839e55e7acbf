#include "klagg/objective.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "klagg/rng.hpp"

using klagg::Dictionary;
using klagg::Family;
using klagg::MatrixXd;
using klagg::Problem;
using klagg::VectorXd;

namespace {

MatrixXd random_matrix(Eigen::Index n, Eigen::Index m, std::uint64_t seed) {
  auto rng = klagg::make_stream(seed, 0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  MatrixXd a(n, m);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < m; ++j) a(i, j) = gauss(rng);
  return a;
}

Problem random_bernoulli_problem(Eigen::Index n, Eigen::Index m,
                                 std::uint64_t seed) {
  Dictionary dict(random_matrix(n, m, seed));
  auto rng = klagg::make_stream(seed, 1);
  const Family f = Family::bernoulli();
  std::uniform_real_distribution<double> unif(0.15, 0.85);
  VectorXd means(n), y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    means(i) = unif(rng);
    y(i) = f.sample(f.mean_to_canonical(means(i)), rng);
  }
  return Problem(f, std::move(dict), y, klagg::truth_from_means(f, means));
}

}  // namespace

TEST(EmpiricalScore, HandValues) {
  // gaussian at lambda = 0: b(0) = 0, so the score vanishes
  Dictionary dict(random_matrix(5, 3, 21));
  VectorXd y = random_matrix(5, 1, 22).col(0);
  Problem gauss(Family::normal(1.0), dict, y);
  EXPECT_DOUBLE_EQ(klagg::empirical_score(gauss, VectorXd::Zero(3)), 0.0);

  // single bernoulli observation with unit dictionary value: the score is
  // theta - log(1 + e^theta) and the gradient 1 - sigmoid(theta)
  MatrixXd one(1, 1);
  one << 1.0;
  Problem bern(Family::bernoulli(), Dictionary(one), VectorXd::Ones(1));
  VectorXd theta(1);
  theta << 0.0;
  const auto at0 = klagg::empirical_score_grad(bern, theta);
  EXPECT_NEAR(at0.value, -std::log(2.0), 1e-15);
  EXPECT_NEAR(at0.grad(0), 0.5, 1e-15);
  theta << 1.3;
  const auto at = klagg::empirical_score_grad(bern, theta);
  EXPECT_NEAR(at.value, 1.3 - std::log(1.0 + std::exp(1.3)), 1e-12);
  EXPECT_NEAR(at.grad(0), 1.0 - 1.0 / (1.0 + std::exp(-1.3)), 1e-12);
}

TEST(EmpiricalScore, GradientMatchesFiniteDifferences) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    Problem p = random_bernoulli_problem(12, 4, 30 + s);
    auto rng = klagg::make_stream(s, 2);
    std::normal_distribution<double> gauss(0.0, 0.5);
    VectorXd lambda(4);
    for (Eigen::Index j = 0; j < 4; ++j) lambda(j) = gauss(rng);
    const auto at = klagg::empirical_score_grad(p, lambda);
    for (Eigen::Index j = 0; j < 4; ++j) {
      VectorXd lp = lambda, lm = lambda;
      lp(j) += 1e-5;
      lm(j) -= 1e-5;
      const double fd = (klagg::empirical_score(p, lp) -
                         klagg::empirical_score(p, lm)) /
                        2e-5;
      EXPECT_NEAR(at.grad(j), fd, 1e-6 * std::fmax(1.0, std::fabs(fd)));
    }
  }
}

TEST(EmpiricalScore, DomainViolationIsHardError) {
  MatrixXd vals(2, 1);
  vals << 1.0, -1.0;
  Problem p(Family::gamma(2.0), Dictionary(vals),
            VectorXd::Constant(2, 1.0));
  VectorXd bad(1);
  bad << 0.5;  // predicts +0.5 at the first design point
  EXPECT_THROW(klagg::empirical_score(p, bad), klagg::DomainError);
  VectorXd good(1);
  good << -0.5;
  EXPECT_THROW(klagg::empirical_score(p, good), klagg::DomainError);
}

TEST(PopulationScore, StationaryAtWellSpecifiedWeights) {
  Dictionary dict(random_matrix(10, 3, 40));
  const Family f = Family::bernoulli();
  VectorXd lambda0(3);
  lambda0 << 0.3, -0.2, 0.5;
  Problem p(f, dict, std::nullopt,
            klagg::truth_from_canonical(f, dict.predict(lambda0)));
  const auto at = klagg::population_score_grad(p, lambda0);
  EXPECT_LT(at.grad.lpNorm<Eigen::Infinity>(), 1e-12);
}

TEST(PopulationScore, OneDimensionalCalculus) {
  // L(lambda) = 2 lambda - lambda^2 / 2, maximized at lambda = 2
  MatrixXd one(1, 1);
  one << 1.0;
  const Family f = Family::normal(1.0);
  VectorXd mean(1);
  mean << 2.0;
  Problem p(f, Dictionary(one), std::nullopt, klagg::truth_from_means(f, mean));
  VectorXd lam(1);
  for (double v : {-1.0, 0.0, 1.0, 2.0, 3.0}) {
    lam << v;
    EXPECT_NEAR(klagg::population_score(p, lam), 2.0 * v - v * v / 2.0, 1e-12);
  }
  lam << 2.0;
  EXPECT_NEAR(klagg::population_score_grad(p, lam).grad(0), 0.0, 1e-12);
}

TEST(PopulationScore, MeanOfEmpiricalScoreOverReplicates) {
  // E l_n(lambda) / n differs from L(lambda) by a lambda-free constant; for
  // the bernoulli that constant is zero since b'(theta) = E Y directly
  Problem p = random_bernoulli_problem(15, 3, 50);
  VectorXd lambda(3);
  lambda << 0.4, -0.1, 0.2;
  const double l_pop = klagg::population_score(p, lambda);
  const int reps = 10000;
  double sum = 0.0, sumsq = 0.0;
  for (int r = 0; r < reps; ++r) {
    auto rng = klagg::make_stream(51, static_cast<std::uint64_t>(r));
    VectorXd y(p.dict.n());
    for (Eigen::Index i = 0; i < p.dict.n(); ++i)
      y(i) = p.family.sample(p.truth->canonical(i), rng);
    Problem rep(p.family, p.dict, y, p.truth);
    const double v =
        klagg::empirical_score(rep, lambda) / static_cast<double>(p.dict.n());
    sum += v;
    sumsq += v * v;
  }
  const double mean = sum / reps;
  const double se = std::sqrt((sumsq / reps - mean * mean) / reps);
  EXPECT_NEAR(mean, l_pop, 4.0 * se);
}

TEST(MeanKl, ZeroAtTruthAndGaussianQuadraticForm) {
  Dictionary dict(random_matrix(8, 3, 60));
  const Family f = Family::normal(1.0);
  VectorXd lambda0(3);
  lambda0 << 1.0, -0.5, 0.25;
  Problem p(f, dict, std::nullopt,
            klagg::truth_from_canonical(f, dict.predict(lambda0)));
  EXPECT_NEAR(klagg::mean_kl(p, lambda0), 0.0, 1e-15);

  auto rng = klagg::make_stream(61, 0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int k = 0; k < 20; ++k) {
    VectorXd lambda(3);
    for (Eigen::Index j = 0; j < 3; ++j) lambda(j) = gauss(rng);
    const VectorXd diff = dict.predict(lambda) - dict.predict(lambda0);
    const double expected = dict.seminorm(diff) * dict.seminorm(diff) / 2.0;
    EXPECT_NEAR(klagg::mean_kl(p, lambda), expected, 1e-12);
  }
}

TEST(MeanKl, BernoulliAgainstDiscreteDivergence) {
  MatrixXd one(1, 1);
  one << 1.0;
  const Family f = Family::bernoulli();
  VectorXd mean(1);
  mean << 0.5;
  Problem p(f, Dictionary(one), std::nullopt, klagg::truth_from_means(f, mean));
  for (double theta : {-1.5, -0.2, 0.7, 2.0}) {
    VectorXd lam(1);
    lam << theta;
    const double q = 1.0 / (1.0 + std::exp(-theta));
    const double discrete =
        0.5 * std::log(0.5 / q) + 0.5 * std::log(0.5 / (1.0 - q));
    EXPECT_NEAR(klagg::mean_kl(p, lam), discrete, 1e-12);
  }
}

TEST(MeanKl, GradientIsMinusPopulationGradientOverDispersion) {
  Problem p = random_bernoulli_problem(10, 3, 70);
  VectorXd lambda(3);
  lambda << 0.1, 0.3, -0.2;
  const auto pop = klagg::population_score_grad(p, lambda);
  for (Eigen::Index j = 0; j < 3; ++j) {
    VectorXd lp = lambda, lm = lambda;
    lp(j) += 1e-6;
    lm(j) -= 1e-6;
    const double fd = (klagg::mean_kl(p, lp) - klagg::mean_kl(p, lm)) / 2e-6;
    EXPECT_NEAR(fd, -pop.grad(j) / p.family.dispersion(), 1e-9);
  }
}

TEST(ExcessKl, DefinitionalIdentities) {
  Problem p = random_bernoulli_problem(12, 3, 80);
  VectorXd star(3), hat(3);
  star << 0.2, -0.1, 0.3;
  hat << -0.4, 0.5, 0.1;
  const auto ek = klagg::excess_kl_against(p, hat, star);
  // two computation paths: population-score difference vs mean divergence
  const double via_kl = klagg::mean_kl(p, hat) - klagg::mean_kl(p, star);
  EXPECT_NEAR(ek.excess, via_kl, 1e-9);
  const VectorXd diff = p.dict.predict(hat) - p.dict.predict(star);
  EXPECT_NEAR(ek.sq_dist, std::pow(p.dict.seminorm(diff), 2), 1e-12);

  EXPECT_DOUBLE_EQ(klagg::excess_kl_against(p, star, star).excess, 0.0);
  // reversing the roles hands the oracle a clearly better competitor
  if (ek.excess > 1e-9)
    EXPECT_THROW(klagg::excess_kl_against(p, star, hat),
                 klagg::OracleNotConverged);
}

TEST(Concavity, ScoreAndPopulationAreConcave) {
  Problem p = random_bernoulli_problem(10, 3, 90);
  auto rng = klagg::make_stream(91, 0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int k = 0; k < 40; ++k) {
    VectorXd a(3), b(3);
    for (Eigen::Index j = 0; j < 3; ++j) {
      a(j) = gauss(rng);
      b(j) = gauss(rng);
    }
    const double t = unif(rng);
    const VectorXd mix = t * a + (1.0 - t) * b;
    EXPECT_GE(klagg::empirical_score(p, mix),
              t * klagg::empirical_score(p, a) +
                  (1.0 - t) * klagg::empirical_score(p, b) - 1e-9);
    EXPECT_GE(klagg::population_score(p, mix),
              t * klagg::population_score(p, a) +
                  (1.0 - t) * klagg::population_score(p, b) - 1e-9);
  }
}

TEST(PhiRisk, HandValuesAndIdentity) {
  Problem p = random_bernoulli_problem(10, 3, 95);
  EXPECT_NEAR(klagg::phi_risk(p, VectorXd::Zero(3)), 1.0, 1e-12);

  // flat half-half truth with a zero score gives unit risk for both labels
  MatrixXd one(2, 1);
  one << 1.0, -1.0;
  const Family f = Family::bernoulli();
  Problem flat(f, Dictionary(one), std::nullopt,
               klagg::truth_from_means(f, VectorXd::Constant(2, 0.5)));
  EXPECT_NEAR(klagg::phi_risk(flat, VectorXd::Zero(1)), 1.0, 1e-12);

  // gap identity: phi-risk difference equals excess divergence over log 2
  VectorXd a(3), b(3);
  a << 0.3, -0.2, 0.4;
  b << -0.1, 0.5, 0.2;
  const double gap = klagg::phi_risk(p, a) - klagg::phi_risk(p, b);
  const double kl_diff = klagg::mean_kl(p, a) - klagg::mean_kl(p, b);
  EXPECT_NEAR(gap, kl_diff / std::log(2.0), 1e-10);

  EXPECT_THROW(
      klagg::phi_risk(Problem(Family::normal(1.0), p.dict,
                              VectorXd::Zero(p.dict.n())),
                      VectorXd::Zero(3)),
      klagg::WrongFamily);
}

TEST(PhiRisk, EmpiricalVariant) {
  MatrixXd one(2, 1);
  one << 1.0, 1.0;
  VectorXd y(2);
  y << 1.0, 0.0;
  Problem p(Family::bernoulli(), Dictionary(one), y);
  VectorXd lam(1);
  lam << 0.8;
  const double log2 = std::log(2.0);
  const double expected =
      0.5 * (std::log1p(std::exp(-0.8)) + std::log1p(std::exp(0.8))) / log2;
  EXPECT_NEAR(klagg::phi_risk(p, lam, true), expected, 1e-12);
}

TEST(ProblemValidation, SupportAndLengthChecks) {
  Dictionary dict(random_matrix(4, 2, 97));
  EXPECT_THROW(Problem(Family::bernoulli(), dict, VectorXd::Constant(4, 0.5)),
               klagg::DomainError);
  EXPECT_THROW(Problem(Family::bernoulli(), dict, VectorXd::Zero(3)),
               klagg::DimensionMismatch);
  Problem no_truth(Family::bernoulli(), dict, VectorXd::Zero(4));
  EXPECT_THROW(klagg::mean_kl(no_truth, VectorXd::Zero(2)),
               klagg::MissingTruth);
}
