#include <doctest.h>

#include <cmath>

#include "lqhmm/em.hpp"
#include "lqhmm/rng.hpp"
#include "lqhmm/simulate.hpp"
#include "oracles.hpp"
#include "reference_lqhmm.hpp"
#include "test_helpers.hpp"

using namespace lqhmm;

namespace {

// small synthetic truth used across the EM tests
SimScenario small_scenario(int n, std::uint64_t seed) {
  SimScenario s;
  s.n = n;
  s.T_max = 6;
  s.dropout_dist.resize(6);
  s.dropout_dist << 0.10, 0.15, 0.15, 0.20, 0.20, 0.20;
  s.truth.beta.resize(1);
  s.truth.beta << 0.4;
  s.truth.alpha.resize(2);
  s.truth.alpha << -1.0, 1.0;
  s.truth.sigma = 1.0;
  s.truth.delta.resize(2);
  s.truth.delta << 0.6, 0.4;
  Eigen::MatrixXd Q1(2, 2), Q2(2, 2);
  Q1 << 0.9, 0.1, 0.3, 0.7;
  Q2 << 0.6, 0.4, 0.1, 0.9;
  s.truth.Q = {Q1, Q2};
  s.truth.lambda0.resize(1);
  s.truth.lambda0 << 1.2;
  s.truth.lambda1 = -0.4;
  s.family = SimScenario::ResponseFamily::Gaussian;
  s.sigma_gauss2 = 0.25;
  s.covariates.columns.push_back(
      {CovariateColumn::Kind::NormalConst, "x1", 0.0, 1.0, 0, 0, {}});
  s.seed = seed;
  return s;
}

SimScenario mar_scenario(int n, std::uint64_t seed) {
  SimScenario s = small_scenario(n, seed);
  s.truth.Q.resize(1);
  s.truth.lambda0.resize(0);
  s.truth.lambda1 = 0.0;
  return s;
}

}  // namespace

TEST_CASE("e_step: G = 1 gives unit class posteriors and Baum-Welch smoothing") {
  Rng rng(31);
  const QldoParams p = testutil::random_params(rng, 1, 2, 1);
  const PanelDataset data = testutil::random_panel(rng, 3, 4, 1, p);
  const Posteriors post = e_step(data, p, QuantileLevel(0.5));
  CHECK((post.zeta.array() == 1.0).all());
  for (int i = 0; i < 3; ++i) {
    const auto bf =
        oracle::enumerate(data.subjects[i].y, data.subjects[i].X, p, 0.5);
    CHECK((post.subjects[i].u_single - bf.u_single).cwiseAbs().maxCoeff() <= 1e-10);
  }
}

TEST_CASE("e_step: m = 1 pins every state posterior at one") {
  Rng rng(32);
  const QldoParams p = testutil::random_params(rng, 0, 1, 2);
  const PanelDataset data = testutil::random_panel(rng, 4, 5, 0, p);
  const Posteriors post = e_step(data, p, QuantileLevel(0.3));
  for (const auto& sp : post.subjects)
    CHECK((sp.u_single.array() == 1.0).all());
}

TEST_CASE("e_step matches exhaustive posteriors (m=2, G=2, T=3)") {
  Rng rng(33);
  const QldoParams p = testutil::random_params(rng, 1, 2, 2);
  PanelDataset data;
  data.T_max = 3;
  data.covariate_names = {"x1"};
  data.subjects.push_back(testutil::random_subject(rng, 3, 1, p));
  const Posteriors post = e_step(data, p, QuantileLevel(0.5));
  const auto bf = oracle::enumerate(data.subjects[0].y, data.subjects[0].X, p, 0.5);

  CHECK(std::abs(post.loglik - bf.loglik) <= 1e-10 * std::abs(bf.loglik));
  CHECK((post.zeta.row(0).transpose() - bf.zeta).cwiseAbs().maxCoeff() <= 1e-10);
  CHECK((post.subjects[0].u_single - bf.u_single).cwiseAbs().maxCoeff() <= 1e-10);
  for (int t = 0; t < 2; ++t)
    for (int g = 0; g < 2; ++g)
      CHECK((post.subjects[0].u_pair[t][g] - bf.u_pair[t][g]).cwiseAbs().maxCoeff() <=
            1e-10);
}

TEST_CASE("e_step posteriors satisfy the normalization invariants") {
  Rng rng(34);
  for (int rep = 0; rep < 25; ++rep) {
    const int m = 1 + rng.uniform_int(3);
    const int G = 1 + rng.uniform_int(3);
    const int q = rng.uniform_int(2);
    const QldoParams p = testutil::random_params(rng, q, m, G);
    const PanelDataset data = testutil::random_panel(rng, 3, 5, q, p);
    const Posteriors post = e_step(data, p, QuantileLevel(0.1 + 0.8 * rng.uniform()));
    for (int i = 0; i < data.n(); ++i) {
      const auto& sp = post.subjects[i];
      for (int t = 0; t < sp.u_single.rows(); ++t)
        CHECK(std::abs(sp.u_single.row(t).sum() - 1.0) <= 1e-12);
      for (const auto& per_t : sp.u_pair)
        for (const auto& M : per_t) CHECK(std::abs(M.sum() - 1.0) <= 1e-12);
      CHECK(std::abs(post.zeta.row(i).sum() - 1.0) <= 1e-12);
    }
    // brute-force cross-check on the first subject
    const auto bf =
        oracle::enumerate(data.subjects[0].y, data.subjects[0].X, p,
                          0.5);  // posterior structure is tau-dependent; re-run at 0.5
    const Posteriors post5 = e_step(data, p, QuantileLevel(0.5));
    CHECK((post5.subjects[0].u_single - bf.u_single).cwiseAbs().maxCoeff() <= 1e-9);
  }
}

TEST_CASE("m_step_chain: closed-form delta") {
  // all first-occasion mass on state 0
  Posteriors post;
  post.zeta = Eigen::MatrixXd::Ones(2, 1);
  for (int i = 0; i < 2; ++i) {
    SubjectPosteriors sp;
    sp.u_single.resize(1, 2);
    sp.u_single << 1.0, 0.0;
    post.subjects.push_back(sp);
  }
  PanelDataset data;
  data.T_max = 1;
  for (int i = 0; i < 2; ++i) {
    Subject s;
    s.id = std::to_string(i);
    s.y = Eigen::VectorXd::Zero(1);
    s.X = Eigen::MatrixXd::Zero(1, 0);
    data.subjects.push_back(s);
  }
  ChainUpdate up = m_step_chain(post, data);
  CHECK(up.delta[0] == 1.0);
  CHECK(up.delta[1] == 0.0);

  // opposite corners average to (1/2, 1/2)
  post.subjects[1].u_single << 0.0, 1.0;
  up = m_step_chain(post, data);
  CHECK(up.delta[0] == doctest::Approx(0.5));
  CHECK(up.delta[1] == doctest::Approx(0.5));
}

TEST_CASE("m_step_chain matches hand-computed weighted transition counts") {
  // two subjects, T = 3, m = 2, G = 2; pair posteriors chosen by hand
  const int m = 2, G = 2;
  Posteriors post;
  post.zeta.resize(2, G);
  post.zeta << 0.7, 0.3,
               0.2, 0.8;
  PanelDataset data;
  data.T_max = 3;
  for (int i = 0; i < 2; ++i) {
    Subject s;
    s.id = std::to_string(i);
    s.y = Eigen::VectorXd::Zero(3);
    s.X = Eigen::MatrixXd::Zero(3, 0);
    data.subjects.push_back(s);

    SubjectPosteriors sp;
    sp.u_single = Eigen::MatrixXd::Constant(3, m, 0.5);
    sp.u_pair.assign(2, std::vector<Eigen::MatrixXd>(G));
    for (int t = 0; t < 2; ++t)
      for (int g = 0; g < G; ++g) {
        Eigen::MatrixXd M(m, m);
        const double base = 0.1 + 0.05 * (i + 2 * t + 4 * g);
        M << base, 0.5 - base, 0.3, 0.2;
        M /= M.sum();
        sp.u_pair[t][g] = M;
      }
    post.subjects.push_back(sp);
  }

  const ChainUpdate up = m_step_chain(post, data);
  // direct summation oracle: numerator_g = sum_i zeta_ig sum_t pair_it(g)
  for (int g = 0; g < G; ++g) {
    Eigen::MatrixXd num = Eigen::MatrixXd::Zero(m, m);
    for (int i = 0; i < 2; ++i)
      for (int t = 0; t < 2; ++t)
        num += post.zeta(i, g) * post.subjects[i].u_pair[t][g];
    for (int k = 0; k < m; ++k) {
      const Eigen::VectorXd expected = num.row(k).transpose() / num.row(k).sum();
      CHECK((up.Q[g].row(k).transpose() - expected).cwiseAbs().maxCoeff() <= 1e-14);
    }
  }
}

TEST_CASE("m_step_chain resets zero-mass rows to uniform") {
  Posteriors post;
  post.zeta = Eigen::MatrixXd::Ones(1, 1);
  SubjectPosteriors sp;
  sp.u_single = Eigen::MatrixXd::Constant(2, 2, 0.5);
  sp.u_pair.assign(1, std::vector<Eigen::MatrixXd>(1));
  Eigen::MatrixXd M(2, 2);
  M << 0.6, 0.4, 0.0, 0.0;  // state 1 never occupied at t-1
  sp.u_pair[0][0] = M;
  post.subjects.push_back(sp);
  PanelDataset data;
  data.T_max = 2;
  Subject s;
  s.id = "0";
  s.y = Eigen::VectorXd::Zero(2);
  s.X = Eigen::MatrixXd::Zero(2, 0);
  data.subjects.push_back(s);

  const ChainUpdate up = m_step_chain(post, data);
  CHECK(up.Q[0](1, 0) == doctest::Approx(0.5));
  CHECK(up.Q[0](1, 1) == doctest::Approx(0.5));
}

namespace {

// one-subject panel with explicit responses and unit posteriors on m = 1
std::pair<PanelDataset, Posteriors> single_state_instance(
    const std::vector<double>& ys, const std::vector<double>& ws) {
  PanelDataset data;
  data.T_max = static_cast<int>(ys.size());
  Subject s;
  s.id = "0";
  s.y = Eigen::Map<const Eigen::VectorXd>(ys.data(), ys.size());
  s.X = Eigen::MatrixXd::Zero(ys.size(), 0);
  data.subjects.push_back(s);
  Posteriors post;
  post.zeta = Eigen::MatrixXd::Ones(1, 1);
  SubjectPosteriors sp;
  sp.u_single = Eigen::Map<const Eigen::VectorXd>(ws.data(), ws.size());
  post.subjects.push_back(sp);
  return {data, post};
}

}  // namespace

TEST_CASE("m_step_sigma closed form") {
  SUBCASE("symmetric unit residuals at the median give 1/2") {
    auto [data, post] = single_state_instance({1.0, -1.0}, {1.0, 1.0});
    Theta theta{Eigen::VectorXd(), Eigen::VectorXd::Zero(1)};
    CHECK(m_step_sigma(post, data, theta, QuantileLevel(0.5)) == doctest::Approx(0.5));
  }
  SUBCASE("perfect fit raises a degenerate-fit error") {
    auto [data, post] = single_state_instance({2.0, 2.0}, {1.0, 1.0});
    Theta theta{Eigen::VectorXd(), Eigen::VectorXd::Constant(1, 2.0)};
    CHECK_THROWS_AS(m_step_sigma(post, data, theta, QuantileLevel(0.5)),
                    DegenerateFitError);
  }
  SUBCASE("positive homogeneity in the residual scale") {
    Rng rng(41);
    auto [data, post] = single_state_instance({0.7, -0.4, 1.3}, {1.0, 1.0, 1.0});
    Theta theta{Eigen::VectorXd(), Eigen::VectorXd::Zero(1)};
    const double tau = 0.35;
    const double base = m_step_sigma(post, data, theta, QuantileLevel(tau));
    auto [data3, post3] =
        single_state_instance({3 * 0.7, -3 * 0.4, 3 * 1.3}, {1.0, 1.0, 1.0});
    CHECK(m_step_sigma(post3, data3, theta, QuantileLevel(tau)) ==
          doctest::Approx(3.0 * base).epsilon(1e-12));
  }
}

TEST_CASE("m_step_theta: intercept-only designs are exact weighted quantiles") {
  Rng rng(42);
  for (double tau : {0.5, 0.25, 0.8}) {
    std::vector<double> ys, ws;
    for (int i = 0; i < 25; ++i) {
      ys.push_back(rng.normal());
      ws.push_back(0.1 + rng.uniform());
    }
    auto [data, post] = single_state_instance(ys, ws);
    // scale weights into a valid posterior matrix is unnecessary for m = 1:
    // the m-step consumes them as-is
    const Theta theta = m_step_theta(post, data, QuantileLevel(tau), 1e-10);
    const Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXd>(ys.data(), ys.size());
    const Eigen::VectorXd w = Eigen::Map<const Eigen::VectorXd>(ws.data(), ws.size());
    CHECK(theta.alpha[0] == weighted_quantile(v, w, QuantileLevel(tau)));
  }
}

TEST_CASE("m_step_theta matches a lattice search (n=20, m=2, q=1)") {
  Rng rng(43);
  const int n = 20;
  PanelDataset data;
  data.T_max = 1;
  data.covariate_names = {"x1"};
  Posteriors post;
  post.zeta = Eigen::MatrixXd::Ones(n, 1);
  for (int i = 0; i < n; ++i) {
    Subject s;
    s.id = std::to_string(i);
    s.X.resize(1, 1);
    s.X(0, 0) = rng.normal();
    const int state = rng.uniform() < 0.5 ? 0 : 1;
    s.y.resize(1);
    s.y[0] = (state == 0 ? -1.0 : 1.0) + 0.5 * s.X(0, 0) + 0.3 * rng.normal();
    data.subjects.push_back(s);
    SubjectPosteriors sp;
    sp.u_single.resize(1, 2);
    const double w = 0.2 + 0.6 * rng.uniform();
    sp.u_single << w, 1.0 - w;
    post.subjects.push_back(sp);
  }
  const QuantileLevel tau(0.5);
  const Theta theta = m_step_theta(post, data, tau, 1e-10);
  const double solver_obj = theta_objective(post, data, theta, tau);

  // fine lattice around the generating values
  double best = std::numeric_limits<double>::infinity();
  Theta probe;
  probe.alpha.resize(2);
  probe.beta.resize(1);
  for (double a1 = -1.6; a1 <= -0.4; a1 += 0.01)
    for (double a2 = 0.4; a2 <= 1.6; a2 += 0.01)
      for (double b = 0.0; b <= 1.0; b += 0.01) {
        probe.alpha << a1, a2;
        probe.beta << b;
        best = std::min(best, theta_objective(post, data, probe, tau));
      }
  CHECK(solver_obj <= best + 1e-6);
}

TEST_CASE("m_step_theta never returns a worse objective than its warm start") {
  Rng rng(44);
  for (int rep = 0; rep < 10; ++rep) {
    const QldoParams p = testutil::random_params(rng, 2, 2, 1);
    const PanelDataset data = testutil::random_panel(rng, 10, 4, 2, p);
    const Posteriors post = e_step(data, p, QuantileLevel(0.4));
    Theta warm{p.beta, p.alpha};
    const Theta theta = m_step_theta(post, data, QuantileLevel(0.4), 1e-8, &warm);
    CHECK(theta_objective(post, data, theta, QuantileLevel(0.4)) <=
          theta_objective(post, data, warm, QuantileLevel(0.4)) + 1e-12);
  }
}

TEST_CASE("m_step_theta names collinear columns") {
  Rng rng(45);
  PanelDataset data;
  data.T_max = 2;
  data.covariate_names = {"dup", "noise"};
  Posteriors post;
  post.zeta = Eigen::MatrixXd::Ones(6, 1);
  for (int i = 0; i < 6; ++i) {
    Subject s;
    s.id = std::to_string(i);
    s.y.resize(2);
    s.y << rng.normal(), rng.normal();
    s.X.resize(2, 2);
    s.X.col(0).setConstant(3.0);  // constant column, collinear with intercepts
    s.X.col(1) << rng.normal(), rng.normal();
    data.subjects.push_back(s);
    SubjectPosteriors sp;
    sp.u_single = Eigen::MatrixXd::Constant(2, 2, 0.5);
    post.subjects.push_back(sp);
  }
  CHECK_THROWS_WITH_AS(m_step_theta(post, data, QuantileLevel(0.5), 1e-8),
                       doctest::Contains("dup"), IdentifiabilityError);
}

TEST_CASE("m_step_lambda: symmetric posteriors with fixed slope center the cutpoint") {
  const int n = 40;
  Eigen::MatrixXd zeta = Eigen::MatrixXd::Constant(n, 2, 0.5);
  std::vector<int> T(n);
  for (int i = 0; i < n; ++i) T[i] = 1 + (i % 5);
  LambdaUpdate warm;
  warm.lambda0 = Eigen::VectorXd::Zero(1);
  warm.lambda1 = 0.0;
  const LambdaUpdate up = m_step_lambda(zeta, T, 2, 1e-10, &warm, /*fix_slope=*/true);
  CHECK(up.lambda1 == 0.0);
  CHECK(up.lambda0[0] == doctest::Approx(0.0).epsilon(1e-8));
  CHECK_FALSE(up.separation);
}

TEST_CASE("m_step_lambda recovers the generating cutpoints from hard labels") {
  // large-n hard assignments drawn from the benchmark lambda
  Rng rng(46);
  const int n = 60000;
  Eigen::VectorXd lambda0(1);
  lambda0 << 4.41;
  const double lambda1 = -0.63;
  Eigen::VectorXd dropout(12);
  dropout << 5, 24, 25, 47, 43, 52, 40, 41, 38, 21, 23, 10;
  dropout /= dropout.sum();

  Eigen::MatrixXd zeta = Eigen::MatrixXd::Zero(n, 2);
  std::vector<int> T(n);
  for (int i = 0; i < n; ++i) {
    T[i] = rng.discrete(dropout) + 1;
    const Eigen::VectorXd pi = ldo_class_probs(T[i], lambda0, lambda1, 2);
    zeta(i, rng.discrete(pi)) = 1.0;
  }
  const LambdaUpdate up = m_step_lambda(zeta, T, 2, 1e-9);
  CHECK(std::abs(up.lambda0[0] - 4.41) <= 0.15);
  CHECK(std::abs(up.lambda1 + 0.63) <= 0.03);
  CHECK_FALSE(up.separation);
}

TEST_CASE("m_step_lambda satisfies the first-order condition") {
  Rng rng(47);
  const int n = 200;
  Eigen::MatrixXd zeta(n, 2);
  std::vector<int> T(n);
  for (int i = 0; i < n; ++i) {
    T[i] = 1 + rng.uniform_int(8);
    const double z = 0.2 + 0.6 * rng.uniform();
    zeta(i, 0) = z;
    zeta(i, 1) = 1.0 - z;
  }
  const double inner_tol = 1e-8;
  const LambdaUpdate up = m_step_lambda(zeta, T, 2, inner_tol);
  REQUIRE_FALSE(up.separation);
  // central finite differences of the weighted ordinal log-likelihood;
  // for G = 2 the reparameterization is the identity
  const double h = 1e-5;
  auto obj = [&](double l0, double l1) {
    Eigen::VectorXd v(1);
    v << l0;
    return ldo_weighted_loglik(zeta, T, v, l1);
  };
  const double g0 =
      (obj(up.lambda0[0] + h, up.lambda1) - obj(up.lambda0[0] - h, up.lambda1)) /
      (2 * h);
  const double g1 =
      (obj(up.lambda0[0], up.lambda1 + h) - obj(up.lambda0[0], up.lambda1 - h)) /
      (2 * h);
  CHECK(std::abs(g0) <= 1e-6);
  CHECK(std::abs(g1) <= 1e-6);
}

TEST_CASE("m_step_lambda flags complete separation") {
  const int n = 30;
  Eigen::MatrixXd zeta = Eigen::MatrixXd::Zero(n, 2);
  zeta.col(1).setOnes();  // every unit in the top class
  std::vector<int> T(n, 4);
  const LambdaUpdate up = m_step_lambda(zeta, T, 2, 1e-8);
  CHECK(up.separation);
  CHECK(std::isfinite(up.lambda0[0]));
  CHECK(std::isfinite(up.lambda1));
}

TEST_CASE("m_step_lambda is a no-op for G = 1") {
  Eigen::MatrixXd zeta = Eigen::MatrixXd::Ones(5, 1);
  std::vector<int> T(5, 3);
  const LambdaUpdate up = m_step_lambda(zeta, T, 1, 1e-8);
  CHECK(up.lambda0.size() == 0);
  CHECK(up.lambda1 == 0.0);
}

TEST_CASE("gauss_hermite_nodes (probabilists')") {
  const Eigen::VectorXd n1 = gauss_hermite_nodes(1);
  CHECK(n1[0] == 0.0);
  const Eigen::VectorXd n2 = gauss_hermite_nodes(2);
  CHECK(n2[0] == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(n2[1] == doctest::Approx(1.0).epsilon(1e-12));
  const Eigen::VectorXd n3 = gauss_hermite_nodes(3);
  CHECK(n3[0] == doctest::Approx(-std::sqrt(3.0)).epsilon(1e-12));
  CHECK(n3[1] == doctest::Approx(0.0).epsilon(1e-10));
  CHECK(n3[2] == doctest::Approx(std::sqrt(3.0)).epsilon(1e-12));
}

TEST_CASE("initialize: deterministic start values") {
  const SimScenario scen = small_scenario(50, 7);
  const SimulatedPanel panel = generate(scen);
  EmConfig config;
  config.s = 4.0;
  config.rng_seed = 99;

  SUBCASE("diagonally boosted transitions, m = 2, s = 4") {
    const QldoParams p0 =
        initialize(panel.data, ModelSpec(QuantileLevel(0.5), 2, 2), 0, config);
    for (int g = 0; g < 2; ++g) {
      CHECK(p0.Q[g](0, 0) == doctest::Approx(5.0 / 6.0));
      CHECK(p0.Q[g](0, 1) == doctest::Approx(1.0 / 6.0));
    }
    CHECK(p0.delta[0] == doctest::Approx(0.5));
  }
  SUBCASE("uniform delta, m = 3") {
    const QldoParams p0 =
        initialize(panel.data, ModelSpec(QuantileLevel(0.5), 3, 1), 0, config);
    for (int h = 0; h < 3; ++h) CHECK(p0.delta[h] == doctest::Approx(1.0 / 3.0));
  }
  SUBCASE("same (seed, start_index) twice is identical") {
    for (int r : {0, 3}) {
      const QldoParams a =
          initialize(panel.data, ModelSpec(QuantileLevel(0.25), 2, 2), r, config);
      const QldoParams b =
          initialize(panel.data, ModelSpec(QuantileLevel(0.25), 2, 2), r, config);
      CHECK((flatten_params(a) - flatten_params(b)).cwiseAbs().maxCoeff() == 0.0);
    }
  }
  SUBCASE("random starts remain valid parameter sets") {
    for (int r = 1; r <= 5; ++r) {
      const QldoParams p =
          initialize(panel.data, ModelSpec(QuantileLevel(0.5), 3, 2), r, config);
      p.validate();  // throws on violation
      CHECK(is_canonical(p));
    }
  }
}

TEST_CASE("one EM iteration from the truth does not decrease the loglik") {
  const SimScenario scen = small_scenario(80, 11);
  const SimulatedPanel panel = generate(scen);
  const QuantileLevel tau(0.5);

  QldoParams params = scen.truth;
  params.sigma = 0.4;  // a sane ALD scale for Gaussian noise
  const Posteriors post = e_step(panel.data, params, tau);

  Theta warm{params.beta, params.alpha};
  const Theta theta = m_step_theta(post, panel.data, tau, 1e-8, &warm);
  const ChainUpdate chain = m_step_chain(post, panel.data);
  QldoParams next = params;
  next.beta = theta.beta;
  next.alpha = theta.alpha;
  next.sigma = m_step_sigma(post, panel.data, theta, tau);
  next.delta = chain.delta;
  next.Q = chain.Q;
  std::vector<int> T;
  for (const auto& s : panel.data.subjects) T.push_back(s.occasions());
  LambdaUpdate lwarm{params.lambda0, params.lambda1, false};
  const LambdaUpdate lam = m_step_lambda(post.zeta, T, 2, 1e-8, &lwarm);
  next.lambda0 = lam.lambda0;
  next.lambda1 = lam.lambda1;

  const Posteriors post2 = e_step(panel.data, next, tau);
  CHECK(post2.loglik >= post.loglik - 1e-7);
}

TEST_CASE("fit: converges on a small panel and returns canonical labels") {
  const SimScenario scen = small_scenario(60, 13);
  const SimulatedPanel panel = generate(scen);
  EmConfig config;
  config.n_starts = 3;
  config.max_iter = 300;
  config.epsilon = 1e-6;
  config.rng_seed = 5;
  config.threads = 1;

  const FitResult fr = fit(panel.data, ModelSpec(QuantileLevel(0.5), 2, 2), config);
  CHECK(fr.converged);
  CHECK(is_canonical(fr.params));
  CHECK(fr.n_params == n_free_params(1, 2, 2));
  CHECK(fr.aic == doctest::Approx(-2.0 * fr.posteriors.loglik + 2.0 * fr.n_params));
  CHECK(fr.bic == doctest::Approx(-2.0 * fr.posteriors.loglik +
                                  fr.n_params * std::log(60.0)));
  // ascent along the trace
  for (std::size_t r = 1; r < fr.loglik_trace.size(); ++r)
    CHECK(fr.loglik_trace[r] >= fr.loglik_trace[r - 1] - 1e-7);
}

TEST_CASE("fit with G = 1 matches the independently coded plain quantile HMM") {
  const SimScenario scen = mar_scenario(50, 17);
  const SimulatedPanel panel = generate(scen);
  const double tau = 0.5;

  EmConfig config;
  config.n_starts = 1;
  config.epsilon = 1e-9;
  config.max_iter = 3000;
  config.inner_tol = 1e-12;
  config.threads = 1;

  const QldoParams start =
      initialize(panel.data, ModelSpec(QuantileLevel(tau), 2, 1), 0, config);
  const FitResult fr = fit(panel.data, ModelSpec(QuantileLevel(tau), 2, 1), config);

  reference::Panel ref_panel;
  for (const auto& s : panel.data.subjects) {
    ref_panel.y.push_back(s.y);
    ref_panel.X.push_back(s.X);
  }
  reference::Params ref_start;
  ref_start.beta = start.beta;
  ref_start.alpha = start.alpha;
  ref_start.sigma = start.sigma;
  ref_start.delta = start.delta;
  ref_start.Q = start.Q[0];
  const reference::FitOutput ref =
      reference::fit(ref_panel, tau, ref_start, 1e-9, 3000, 1e-12);

  CHECK(ref.converged);
  CHECK(std::abs(fr.posteriors.loglik - ref.loglik) <= 1e-8);
}

TEST_CASE("fit throws a ConvergenceError carrying traces when nothing converges") {
  const SimScenario scen = small_scenario(40, 19);
  const SimulatedPanel panel = generate(scen);
  EmConfig config;
  config.n_starts = 2;
  config.max_iter = 1;  // cannot possibly satisfy the criterion
  config.epsilon = 1e-16;
  config.threads = 1;
  try {
    fit(panel.data, ModelSpec(QuantileLevel(0.5), 2, 2), config);
    FAIL("expected ConvergenceError");
  } catch (const ConvergenceError& err) {
    CHECK(err.traces.size() == 2);
    for (const auto& t : err.traces) CHECK(t.size() >= 1);
  }
}

TEST_CASE("fit on constant data pins the intercept at the tau-quantile") {
  PanelDataset data;
  data.T_max = 3;
  for (int i = 0; i < 5; ++i) {
    Subject s;
    s.id = std::to_string(i);
    s.y = Eigen::VectorXd::Constant(3, 4.25);
    s.X = Eigen::MatrixXd::Zero(3, 0);
    data.subjects.push_back(s);
  }
  EmConfig config;
  config.n_starts = 1;
  config.threads = 1;
  const FitResult fr = fit(data, ModelSpec(QuantileLevel(0.3), 1, 1), config);
  CHECK(fr.converged);
  CHECK(fr.params.alpha[0] == doctest::Approx(4.25).epsilon(1e-12));
}
