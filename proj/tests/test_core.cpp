#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lqhmm/core.hpp"
#include "lqhmm/rng.hpp"
#include "oracles.hpp"
#include "test_helpers.hpp"

using namespace lqhmm;

TEST_CASE("check_loss matches the piecewise formula") {
  CHECK(check_loss(0.0, QuantileLevel(0.3)) == 0.0);
  CHECK(check_loss(3.0, QuantileLevel(0.5)) == doctest::Approx(1.5));
  CHECK(check_loss(-3.0, QuantileLevel(0.5)) == doctest::Approx(1.5));
  // direct evaluation: (-2) * (0.25 - 1) = 1.5
  CHECK(check_loss(-2.0, QuantileLevel(0.25)) == doctest::Approx(1.5));
}

TEST_CASE("check_loss: convex, nonnegative, piecewise linear, tau identity") {
  Rng rng(91);
  for (int rep = 0; rep < 200; ++rep) {
    const double tau = 0.05 + 0.9 * rng.uniform();
    const QuantileLevel ql(tau);
    const double u = 6.0 * rng.normal();
    const double v = 6.0 * rng.normal();
    CHECK(check_loss(u, ql) >= 0.0);
    // rho_tau(u) + rho_tau(-u) = |u|, and rho_tau(u) = rho_{1-tau}(-u)
    CHECK(check_loss(u, ql) + check_loss(-u, ql) ==
          doctest::Approx(std::abs(u)).epsilon(1e-12));
    CHECK(check_loss(u, ql) ==
          doctest::Approx(check_loss(-u, QuantileLevel(1.0 - tau))).epsilon(1e-12));
    // convexity at the midpoint
    CHECK(check_loss(0.5 * (u + v), ql) <=
          0.5 * check_loss(u, ql) + 0.5 * check_loss(v, ql) + 1e-12);
    // linear on each side of zero
    if (u > 0.0) CHECK(check_loss(2.0 * u, ql) == doctest::Approx(2.0 * check_loss(u, ql)));
    // zero loss only at zero
    if (u != 0.0) CHECK(check_loss(u, ql) > 0.0);
  }
}

TEST_CASE("ald_log_density closed-form values") {
  // mode of the median ALD with unit scale: log(1/4)
  CHECK(ald_log_density(0.0, 0.0, 1.0, QuantileLevel(0.5)) ==
        doctest::Approx(std::log(0.25)).epsilon(1e-14));
  // one scale unit above the mode at tau = 0.5: log(1/4) - 1/2
  CHECK(ald_log_density(1.0, 0.0, 1.0, QuantileLevel(0.5)) ==
        doctest::Approx(std::log(0.25) - 0.5).epsilon(1e-14));
  CHECK_THROWS_AS(ald_log_density(0.0, 0.0, 0.0, QuantileLevel(0.5)),
                  InvalidParameterError);
  CHECK_THROWS_AS(ald_log_density(0.0, 0.0, -1.0, QuantileLevel(0.5)),
                  InvalidParameterError);
}

TEST_CASE("ald density integrates to one (quadrature oracle)") {
  CHECK(oracle::ald_density_integral(0.0, 0.48, 0.25) == doctest::Approx(1.0).epsilon(1e-6));
  Rng rng(17);
  for (int rep = 0; rep < 5; ++rep) {
    const double mu = 3.0 * rng.normal();
    const double sigma = 0.2 + 2.0 * rng.uniform();
    const double tau = 0.1 + 0.8 * rng.uniform();
    // compare the library density against the oracle's own formula too
    const double y = mu + sigma * rng.normal();
    CHECK(ald_log_density(y, mu, sigma, QuantileLevel(tau)) ==
          doctest::Approx(oracle::ald_log_pdf(y, mu, sigma, tau)).epsilon(1e-13));
    CHECK(oracle::ald_density_integral(mu, sigma, tau) ==
          doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("linear_predictor") {
  QldoParams p;
  p.alpha.resize(4);
  p.alpha << 5.861, 6.306, 6.650, 7.039;
  p.beta.resize(6);
  p.beta << -0.088, 0.006, 0.148, 0.055, 0.009, -0.004;
  p.sigma = 1.0;
  p.delta = Eigen::VectorXd::Constant(4, 0.25);
  p.Q.assign(1, Eigen::MatrixXd::Constant(4, 4, 0.25));
  p.lambda0.resize(0);

  SUBCASE("zero covariates return the state intercept") {
    const Eigen::VectorXd x = Eigen::VectorXd::Zero(6);
    for (int h = 0; h < 4; ++h)
      CHECK(linear_predictor(x, h, p) == doctest::Approx(p.alpha[h]));
  }
  SUBCASE("benchmark value: first state, unit time-since-seroconversion") {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(6);
    x[0] = 1.0;
    CHECK(linear_predictor(x, 0, p) == doctest::Approx(5.773).epsilon(1e-12));
  }
  SUBCASE("affine identity") {
    Rng rng(5);
    Eigen::VectorXd x1(6), x2(6);
    for (int j = 0; j < 6; ++j) {
      x1[j] = rng.normal();
      x2[j] = rng.normal();
    }
    const double lhs = linear_predictor(x1 + x2, 2, p) - linear_predictor(x1, 2, p) -
                       linear_predictor(x2, 2, p) +
                       linear_predictor(Eigen::VectorXd::Zero(6), 2, p);
    CHECK(lhs == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("state index out of range") {
    const Eigen::VectorXd x = Eigen::VectorXd::Zero(6);
    CHECK_THROWS_AS(linear_predictor(x, 4, p), InvalidParameterError);
    CHECK_THROWS_AS(linear_predictor(x, -1, p), InvalidParameterError);
  }
}

TEST_CASE("ldo_class_probs") {
  SUBCASE("single class is degenerate") {
    const Eigen::VectorXd pi = ldo_class_probs(7, Eigen::VectorXd(), 0.0, 1);
    REQUIRE(pi.size() == 1);
    CHECK(pi[0] == 1.0);
  }
  SUBCASE("benchmark cutpoints: even split at T = 7") {
    Eigen::VectorXd lambda0(1);
    lambda0 << 4.41;
    const Eigen::VectorXd pi = ldo_class_probs(7, lambda0, -0.63, 2);
    CHECK(pi[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(pi[1] == doctest::Approx(0.5).epsilon(1e-12));
  }
  SUBCASE("benchmark cutpoints at T = 12 (logistic evaluation oracle)") {
    Eigen::VectorXd lambda0(1);
    lambda0 << 4.41;
    const Eigen::VectorXd pi = ldo_class_probs(12, lambda0, -0.63, 2);
    const double expected = oracle::logistic_cdf(4.41 - 0.63 * 12.0);
    CHECK(pi[0] == doctest::Approx(expected).epsilon(1e-12));
    CHECK(pi[1] == doctest::Approx(1.0 - expected).epsilon(1e-12));
    CHECK(pi[0] == doctest::Approx(0.0411).epsilon(1e-2));
  }
  SUBCASE("sums to one and stochastically ordered in T when lambda1 < 0") {
    Rng rng(23);
    for (int rep = 0; rep < 100; ++rep) {
      const int G = 2 + rng.uniform_int(3);
      Eigen::VectorXd lambda0(G - 1);
      lambda0[0] = 2.0 * rng.normal();
      for (int g = 1; g < G - 1; ++g) lambda0[g] = lambda0[g - 1] + rng.uniform();
      const double lambda1 = -0.05 - rng.uniform();
      const int T = 1 + rng.uniform_int(12);
      const int T2 = T + 1 + rng.uniform_int(5);
      const Eigen::VectorXd pi = ldo_class_probs(T, lambda0, lambda1, G);
      const Eigen::VectorXd pi2 = ldo_class_probs(T2, lambda0, lambda1, G);
      CHECK(std::abs(pi.sum() - 1.0) <= 1e-12);
      CHECK((pi.array() >= 0.0).all());
      double cum = 0.0, cum2 = 0.0;
      for (int g = 0; g < G; ++g) {
        cum += pi[g];
        cum2 += pi2[g];
        CHECK(cum2 <= cum + 1e-12);  // longer stayers sit in higher classes
      }
    }
  }
  SUBCASE("decreasing cutpoints are rejected") {
    Eigen::VectorXd lambda0(2);
    lambda0 << 1.0, 0.5;
    CHECK_THROWS_AS(ldo_class_probs(3, lambda0, 0.0, 3), InvalidParameterError);
  }
}

TEST_CASE("weighted_quantile is the check-loss minimizer") {
  Rng rng(71);
  for (int rep = 0; rep < 50; ++rep) {
    const int n = 3 + rng.uniform_int(40);
    Eigen::VectorXd v(n), w(n);
    for (int i = 0; i < n; ++i) {
      v[i] = rng.normal();
      w[i] = 0.05 + rng.uniform();
    }
    const double tau = 0.1 + 0.8 * rng.uniform();
    const double qhat = weighted_quantile(v, w, QuantileLevel(tau));
    double obj_hat = 0.0;
    for (int i = 0; i < n; ++i) obj_hat += w[i] * check_loss(v[i] - qhat, QuantileLevel(tau));
    // no data point does better
    for (int i = 0; i < n; ++i) {
      double obj = 0.0;
      for (int k = 0; k < n; ++k) obj += w[k] * check_loss(v[k] - v[i], QuantileLevel(tau));
      CHECK(obj_hat <= obj + 1e-10);
    }
  }
}

TEST_CASE("quantile level and spec validation") {
  CHECK_THROWS_AS(QuantileLevel(0.0), InvalidParameterError);
  CHECK_THROWS_AS(QuantileLevel(1.0), InvalidParameterError);
  CHECK_THROWS_AS(QuantileLevel(-0.2), InvalidParameterError);
  CHECK_THROWS_AS(ModelSpec(QuantileLevel(0.5), 0, 1), InvalidParameterError);
  CHECK_THROWS_AS(ModelSpec(QuantileLevel(0.5), 1, 0), InvalidParameterError);
}

TEST_CASE("canonicalize sorts states by alpha and permutes consistently") {
  Rng rng(3);
  QldoParams p = testutil::random_params(rng, 2, 3, 2);
  // scramble the labels
  std::swap(p.alpha[0], p.alpha[2]);
  QldoParams scrambled = p;
  const auto perm = canonicalize(p);
  CHECK(is_canonical(p));
  REQUIRE(perm.size() == 3);
  for (int h = 0; h < 3; ++h) {
    CHECK(p.alpha[h] == scrambled.alpha[perm[h]]);
    CHECK(p.delta[h] == scrambled.delta[perm[h]]);
  }
  for (int g = 0; g < 2; ++g)
    for (int k = 0; k < 3; ++k)
      for (int h = 0; h < 3; ++h)
        CHECK(p.Q[g](k, h) == scrambled.Q[g](perm[k], perm[h]));
}

TEST_CASE("canonicalize breaks alpha ties by first-occasion posterior mass") {
  QldoParams p;
  p.beta.resize(0);
  p.alpha.resize(2);
  p.alpha << 1.0, 1.0;  // exact tie
  p.sigma = 1.0;
  p.delta.resize(2);
  p.delta << 0.3, 0.7;
  p.Q.assign(1, Eigen::MatrixXd::Constant(2, 2, 0.5));
  p.lambda0.resize(0);

  Posteriors post;
  post.zeta = Eigen::MatrixXd::Ones(1, 1);
  SubjectPosteriors sp;
  sp.u_single.resize(1, 2);
  sp.u_single << 0.2, 0.8;  // state 1 carries more first-visit mass
  post.subjects.push_back(sp);

  const auto perm = canonicalize(p, post);
  CHECK(perm[0] == 1);  // heavier state first
  CHECK(perm[1] == 0);
  CHECK(p.delta[0] == 0.7);
  CHECK(post.subjects[0].u_single(0, 0) == 0.8);
}

TEST_CASE("free parameter count") {
  // q + m + 1 + (m-1) + G m (m-1) + (G-1) + 1{G>=2}
  CHECK(n_free_params(6, 4, 2) == 6 + 4 + 1 + 3 + 24 + 1 + 1);
  CHECK(n_free_params(0, 1, 1) == 0 + 1 + 1 + 0 + 0 + 0 + 0);
  CHECK(n_free_params(2, 3, 1) == 2 + 3 + 1 + 2 + 6);
}

TEST_CASE("params validation catches bad inputs") {
  Rng rng(9);
  QldoParams good = testutil::random_params(rng, 1, 2, 2);
  good.validate();

  QldoParams bad = good;
  bad.sigma = 0.0;
  CHECK_THROWS_AS(bad.validate(), InvalidParameterError);

  bad = good;
  bad.delta[0] += 0.2;
  CHECK_THROWS_AS(bad.validate(), InvalidParameterError);

  bad = good;
  bad.Q[0](1, 0) += 0.05;
  CHECK_THROWS_AS(bad.validate(), InvalidParameterError);

  QldoParams three = testutil::random_params(rng, 1, 2, 3);
  three.validate();
  three.lambda0[0] = three.lambda0[1] + 1.0;  // decreasing cutpoints
  CHECK_THROWS_AS(three.validate(), InvalidParameterError);
}
