#include "lqhmm/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>

#include "lqhmm/core.hpp"
#include "lqhmm/parallel.hpp"
#include "lqhmm/rng.hpp"

namespace lqhmm {

namespace {

// Acklam's rational approximation to the standard normal quantile
// (|relative error| < 1.15e-9; used only for the shifted-bias reference).
double normal_quantile(double p) {
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425, phigh = 1.0 - plow;
  if (p < plow) {
    const double q = std::sqrt(-2.0 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  if (p > phigh) {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double q = p - 0.5, r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

// ALD(0, sigma, tau_gen) quantile at level p
double ald_quantile(double p, double sigma, double tau_gen) {
  if (p <= tau_gen) return sigma / (1.0 - tau_gen) * std::log(p / tau_gen);
  return -sigma / tau_gen * std::log((1.0 - p) / (1.0 - tau_gen));
}

}  // namespace

void SimScenario::validate() const {
  if (n < 1) throw InvalidParameterError("scenario needs at least one subject");
  if (T_max < 1) throw InvalidParameterError("scenario T_max must be >= 1");
  if (dropout_dist.size() != T_max)
    throw InvalidParameterError("dropout_dist must have T_max entries");
  if ((dropout_dist.array() < -1e-15).any() ||
      std::abs(dropout_dist.sum() - 1.0) > 1e-8)
    throw InvalidParameterError("dropout_dist must be a probability vector");
  truth.validate();
  if (family == ResponseFamily::Gaussian && !(sigma_gauss2 > 0.0))
    throw InvalidParameterError("Gaussian response variance must be positive");
  if (family == ResponseFamily::Ald && !(ald_tau > 0.0 && ald_tau < 1.0))
    throw InvalidParameterError("ALD skewness must lie in (0,1)");
  if (covariates.mode == CovariateGenerator::Mode::Resample) {
    covariates.donor.validate();
    if (covariates.donor.T_max < T_max)
      throw InvalidParameterError("resample donor panel is shorter than T_max");
  }
}

SimScenario default_scenario() {
  SimScenario s;
  s.n = 369;
  s.T_max = 12;

  // subjects still in the study at each occasion; drop-out mass is the
  // difference of adjacent risk-set counts
  const int at_risk[12] = {369, 364, 340, 315, 268, 225, 173, 133, 92, 54, 33, 10};
  s.dropout_dist.resize(12);
  for (int t = 0; t < 11; ++t)
    s.dropout_dist[t] = static_cast<double>(at_risk[t] - at_risk[t + 1]) / 369.0;
  s.dropout_dist[11] = static_cast<double>(at_risk[11]) / 369.0;

  s.truth.beta.resize(6);
  s.truth.beta << -0.088, 0.006, 0.148, 0.055, 0.009, -0.004;
  s.truth.alpha.resize(4);
  s.truth.alpha << 5.861, 6.306, 6.650, 7.039;
  s.truth.sigma = 1.0;  // placeholder; the Gaussian generator does not use it
  s.truth.delta.resize(4);
  s.truth.delta << 0.05, 0.39, 0.48, 0.08;
  Eigen::MatrixXd Q1(4, 4), Q2(4, 4);
  Q1 << 1.00, 0.00, 0.00, 0.00,
        0.27, 0.73, 0.00, 0.00,
        0.00, 0.23, 0.71, 0.06,
        0.05, 0.06, 0.00, 0.89;
  Q2 << 0.91, 0.09, 0.00, 0.00,
        0.05, 0.92, 0.03, 0.00,
        0.02, 0.03, 0.94, 0.01,
        0.00, 0.00, 0.01, 0.99;
  s.truth.Q = {Q1, Q2};
  s.truth.lambda0.resize(1);
  s.truth.lambda0 << 4.41;
  s.truth.lambda1 = -0.63;

  s.family = SimScenario::ResponseFamily::Gaussian;
  s.sigma_gauss2 = 0.23;

  auto& cols = s.covariates.columns;
  cols.push_back({CovariateColumn::Kind::SeroTimeGrid, "timeSero", -3.0, 0.5, 0, 0, {}});
  cols.push_back({CovariateColumn::Kind::NormalConst, "age", 0.0, 7.0, 0, 0, {}});
  cols.push_back({CovariateColumn::Kind::Bernoulli, "drugs", 0.45, 0, 0, 0, {}});
  Eigen::VectorXd packs(4);
  packs << 0.55, 0.20, 0.15, 0.10;
  cols.push_back({CovariateColumn::Kind::DiscreteInt, "packs", 0, 0, 0, 0, packs});
  Eigen::VectorXd partners(6);
  partners << 0.25, 0.30, 0.20, 0.12, 0.08, 0.05;
  cols.push_back({CovariateColumn::Kind::DiscreteInt, "partners", 0, 0, 0, 0, partners});
  cols.push_back({CovariateColumn::Kind::ClampedNormal, "cesd", 10.0, 8.0, 0.0, 50.0, {}});

  s.seed = 1;
  return s;
}

SimulatedPanel generate(const SimScenario& scenario) {
  scenario.validate();
  Rng rng(mix_seed(scenario.seed, 0x5EEDULL));

  const auto& truth = scenario.truth;
  const int G = truth.G();
  const bool resample = scenario.covariates.mode == CovariateGenerator::Mode::Resample;
  const double sigma_gauss = std::sqrt(scenario.sigma_gauss2);

  SimulatedPanel out;
  out.data.T_max = scenario.T_max;
  if (resample)
    out.data.covariate_names = scenario.covariates.donor.covariate_names;
  else
    for (const auto& c : scenario.covariates.columns)
      out.data.covariate_names.push_back(c.name);
  const int q = out.data.q();

  out.data.subjects.resize(scenario.n);
  out.true_class.resize(scenario.n);
  out.true_states.resize(scenario.n);

  for (int i = 0; i < scenario.n; ++i) {
    const int T_i = rng.discrete(scenario.dropout_dist) + 1;
    const Eigen::VectorXd pi =
        ldo_class_probs(T_i, truth.lambda0, truth.lambda1, G);
    const int cls = rng.discrete(pi);

    Eigen::MatrixXd X(T_i, q);
    if (resample) {
      // donor block with at least T_i occasions, truncated to T_i rows
      const auto& donors = scenario.covariates.donor.subjects;
      int pick = -1;
      for (int attempt = 0; attempt < 4096 && pick < 0; ++attempt) {
        const int j = rng.uniform_int(static_cast<int>(donors.size()));
        if (donors[j].occasions() >= T_i) pick = j;
      }
      if (pick < 0)
        throw InvalidParameterError("no donor subject covers " + std::to_string(T_i) +
                                    " occasions");
      X = donors[pick].X.topRows(T_i);
    } else {
      for (int j = 0; j < q; ++j) {
        const auto& col = scenario.covariates.columns[j];
        switch (col.kind) {
          case CovariateColumn::Kind::SeroTimeGrid:
            for (int t = 0; t < T_i; ++t) X(t, j) = col.a + col.b * t;
            break;
          case CovariateColumn::Kind::NormalConst: {
            const double v = col.a + col.b * rng.normal();
            X.col(j).setConstant(v);
            break;
          }
          case CovariateColumn::Kind::Bernoulli:
            for (int t = 0; t < T_i; ++t) X(t, j) = rng.uniform() < col.a ? 1.0 : 0.0;
            break;
          case CovariateColumn::Kind::DiscreteInt:
            for (int t = 0; t < T_i; ++t) X(t, j) = rng.discrete(col.weights);
            break;
          case CovariateColumn::Kind::ClampedNormal:
            for (int t = 0; t < T_i; ++t)
              X(t, j) = std::clamp(std::round(col.a + col.b * rng.normal()), col.lo,
                                   col.hi);
            break;
        }
      }
    }

    std::vector<int>& states = out.true_states[i];
    states.resize(T_i);
    states[0] = rng.discrete(truth.delta);
    for (int t = 1; t < T_i; ++t)
      states[t] = rng.discrete(truth.Q[cls].row(states[t - 1]).transpose());

    Eigen::VectorXd y(T_i);
    for (int t = 0; t < T_i; ++t) {
      const double mu = truth.alpha[states[t]] + X.row(t).dot(truth.beta);
      if (scenario.family == SimScenario::ResponseFamily::Gaussian) {
        y[t] = mu + sigma_gauss * rng.normal();
      } else {
        double u = rng.uniform();
        u = std::min(std::max(u, 1e-15), 1.0 - 1e-15);
        y[t] = mu + ald_quantile(u, truth.sigma, scenario.ald_tau);
      }
    }

    out.data.subjects[i] = Subject{std::to_string(i + 1), std::move(y), std::move(X)};
    out.true_class[i] = cls;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Replicate study
// ---------------------------------------------------------------------------

namespace {

struct SpecFit {
  bool converged = false;
  double aic = std::numeric_limits<double>::infinity();
  double bic = std::numeric_limits<double>::infinity();
  Eigen::VectorXd flat;  // empty unless dimensions match the truth
};

struct ReplicateRecord {
  // indexed [tau][spec]
  std::vector<std::vector<SpecFit>> fits;
};

}  // namespace

ReplicateStudyResult replicate_study(const SimScenario& scenario, int B,
                                     const std::vector<std::pair<int, int>>& specs,
                                     const std::vector<double>& taus,
                                     const EmConfig& config) {
  scenario.validate();
  config.validate();
  if (B < 1) throw InvalidParameterError("B must be >= 1");
  if (specs.empty() || taus.empty())
    throw InvalidParameterError("replicate_study needs at least one spec and one tau");

  QldoParams truth = scenario.truth;
  canonicalize(truth);
  const int truth_m = truth.m();
  const int truth_G = truth.G();

  const int threads = config.threads > 0 ? config.threads : thread_count_from_env();
  EmConfig fit_config = config;
  fit_config.threads = 1;
  fit_config.progress = nullptr;

  std::vector<ReplicateRecord> records(B);
  parallel_for(B, threads, [&](std::size_t b) {
    SimScenario rep = scenario;
    rep.seed = mix_seed(scenario.seed, static_cast<std::uint64_t>(b) + 1);
    const SimulatedPanel panel = generate(rep);

    auto& rec = records[b];
    rec.fits.resize(taus.size());
    for (std::size_t ti = 0; ti < taus.size(); ++ti) {
      rec.fits[ti].resize(specs.size());
      for (std::size_t si = 0; si < specs.size(); ++si) {
        const auto [m, G] = specs[si];
        SpecFit& sf = rec.fits[ti][si];
        try {
          const FitResult fr =
              fit(panel.data, ModelSpec(QuantileLevel(taus[ti]), m, G), fit_config);
          sf.converged = fr.converged;
          sf.aic = fr.aic;
          sf.bic = fr.bic;
          if (m == truth_m && G == truth_G) sf.flat = flatten_params(fr.params);
        } catch (const ConvergenceError&) {
          sf.converged = false;
        } catch (const NumericalError&) {
          sf.converged = false;
        }
      }
    }
  });

  ReplicateStudyResult result;
  const Eigen::VectorXd truth_flat = flatten_params(truth);
  const std::vector<std::string> names =
      param_names(truth, scenario.covariates.mode == CovariateGenerator::Mode::Resample
                             ? scenario.covariates.donor.covariate_names
                             : [&] {
                                 std::vector<std::string> cn;
                                 for (const auto& c : scenario.covariates.columns)
                                   cn.push_back(c.name);
                                 return cn;
                               }());

  // rows to report: every flattened parameter, minus sigma for Gaussian
  // responses (no ground-truth ALD scale exists there)
  std::vector<int> keep;
  const int sigma_idx = truth.q() + truth_m;
  for (int j = 0; j < truth_flat.size(); ++j)
    if (j != sigma_idx || scenario.family == SimScenario::ResponseFamily::Ald)
      keep.push_back(j);

  for (std::size_t ti = 0; ti < taus.size(); ++ti) {
    const double tau = taus[ti];

    // quantile offset of the response family; added to alpha for the
    // shifted-reference bias column
    double offset;
    if (scenario.family == SimScenario::ResponseFamily::Gaussian)
      offset = std::sqrt(scenario.sigma_gauss2) * normal_quantile(tau);
    else
      offset = ald_quantile(tau, truth.sigma, scenario.ald_tau);

    for (std::size_t si = 0; si < specs.size(); ++si) {
      const auto [m, G] = specs[si];
      if (m != truth_m || G != truth_G) continue;

      BiasTable table;
      table.tau = tau;
      table.m = m;
      table.G = G;
      std::vector<Eigen::VectorXd> draws;
      for (int b = 0; b < B; ++b) {
        const SpecFit& sf = records[b].fits[ti][si];
        if (sf.converged && sf.flat.size() == truth_flat.size())
          draws.push_back(sf.flat);
        else
          ++table.n_failed;
      }
      table.n_used = static_cast<int>(draws.size());

      const int R = static_cast<int>(keep.size());
      table.names.resize(R);
      table.truth.resize(R);
      table.mean_bias.setZero(R);
      table.sd.setZero(R);
      table.mean_bias_shifted.setZero(R);
      for (int r = 0; r < R; ++r) {
        const int j = keep[r];
        table.names[r] = names[j];
        table.truth[r] = truth_flat[j];
        const bool is_alpha = j >= truth.q() && j < truth.q() + truth_m;
        double mean = 0.0, ss = 0.0;
        for (const auto& d : draws) mean += d[j];
        if (!draws.empty()) mean /= static_cast<double>(draws.size());
        for (const auto& d : draws) ss += (d[j] - mean) * (d[j] - mean);
        table.mean_bias[r] = mean - truth_flat[j];
        table.mean_bias_shifted[r] =
            table.mean_bias[r] - (is_alpha ? offset : 0.0);
        table.sd[r] = draws.size() > 1
                          ? std::sqrt(ss / static_cast<double>(draws.size() - 1))
                          : 0.0;
      }
      result.bias.push_back(std::move(table));
    }

    // model choice over the spec list; replicates with any failed cell are
    // excluded from the denominators
    ModelChoiceTable choice;
    choice.tau = tau;
    for (const auto& [m, G] : specs) choice.cells.push_back({m, G, 0.0, 0.0});
    for (int b = 0; b < B; ++b) {
      bool all_ok = true;
      for (std::size_t si = 0; si < specs.size(); ++si)
        all_ok = all_ok && records[b].fits[ti][si].converged;
      if (!all_ok) {
        ++choice.n_failed;
        continue;
      }
      ++choice.n_used;
      std::size_t best_aic = 0, best_bic = 0;
      for (std::size_t si = 1; si < specs.size(); ++si) {
        if (records[b].fits[ti][si].aic < records[b].fits[ti][best_aic].aic)
          best_aic = si;
        if (records[b].fits[ti][si].bic < records[b].fits[ti][best_bic].bic)
          best_bic = si;
      }
      choice.cells[best_aic].aic_freq += 1.0;
      choice.cells[best_bic].bic_freq += 1.0;
    }
    if (choice.n_used > 0)
      for (auto& c : choice.cells) {
        c.aic_freq /= choice.n_used;
        c.bic_freq /= choice.n_used;
      }
    result.choice.push_back(std::move(choice));
  }
  return result;
}

}  // namespace lqhmm
