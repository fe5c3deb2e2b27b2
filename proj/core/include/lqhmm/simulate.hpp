#ifndef LQHMM_SIMULATE_HPP
#define LQHMM_SIMULATE_HPP

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "lqhmm/em.hpp"
#include "lqhmm/types.hpp"

namespace lqhmm {

/// One synthetic covariate column. Kinds:
///   SeroTimeGrid: deterministic visit grid start + step*(t-1)
///   NormalConst:  per-subject N(mean, sd^2), constant over occasions
///   Bernoulli:    per-occasion 0/1 with success probability p
///   DiscreteInt:  per-occasion draw from {0..K-1} with given weights
///   ClampedNormal: per-occasion round(N(mean, sd^2)) clamped to [lo, hi]
struct CovariateColumn {
  enum class Kind { SeroTimeGrid, NormalConst, Bernoulli, DiscreteInt, ClampedNormal };
  Kind kind;
  std::string name;
  double a = 0.0;  // grid start | mean | success prob
  double b = 0.0;  // grid step  | sd
  double lo = 0.0, hi = 0.0;
  Eigen::VectorXd weights;  // DiscreteInt
};

/// Covariate source: parametric columns, or whole-block resampling from a
/// donor panel (donor subjects with at least T_i occasions, truncated).
struct CovariateGenerator {
  enum class Mode { Parametric, Resample };
  Mode mode = Mode::Parametric;
  std::vector<CovariateColumn> columns;
  PanelDataset donor;
};

/// Generator settings for one synthetic panel.
struct SimScenario {
  enum class ResponseFamily { Gaussian, Ald };

  int n = 0;
  int T_max = 0;
  Eigen::VectorXd dropout_dist;  // Pr(T_i = t), t = 1..T_max
  QldoParams truth;
  ResponseFamily family = ResponseFamily::Gaussian;
  double sigma_gauss2 = 1.0;  // Gaussian response variance
  double ald_tau = 0.5;       // skewness when family == Ald
  CovariateGenerator covariates;
  std::uint64_t seed = 1;

  void validate() const;
};

/// The benchmark scenario: n = 369, T_max = 12, drop-out distribution from
/// the CD4-study risk-set counts, lambda = (4.41, -0.63),
/// delta = (0.05, 0.39, 0.48, 0.08), the two 4x4 class transition matrices,
/// beta = (-0.088, 0.006, 0.148, 0.055, 0.009, -0.004),
/// alpha = (5.861, 6.306, 6.650, 7.039), Gaussian responses with variance
/// 0.23, and the parametric CD4-like covariate generator.
SimScenario default_scenario();

struct SimulatedPanel {
  PanelDataset data;
  std::vector<int> true_class;                // per subject, 0-based
  std::vector<std::vector<int>> true_states;  // per subject, length T_i
};

/// Draws T_i ~ dropout_dist, class ~ pi(T_i; lambda), the hidden path from
/// (delta, Q(class)), covariates from the generator, and responses from the
/// chosen family. Bit-identical for a given seed.
SimulatedPanel generate(const SimScenario& scenario);

/// Bias/sd rows for one (tau, m, G) cell whose dimensions match the truth.
struct BiasTable {
  double tau = 0.0;
  int m = 0, G = 0;
  std::vector<std::string> names;
  Eigen::VectorXd truth;
  Eigen::VectorXd mean_bias;
  Eigen::VectorXd sd;
  /// Bias with alpha referenced to alpha + sigma_gauss * Phi^-1(tau)
  /// (the population tau-quantile of a Gaussian response); equals mean_bias
  /// for every non-alpha row and at tau = 0.5.
  Eigen::VectorXd mean_bias_shifted;
  int n_used = 0;
  int n_failed = 0;
};

struct ModelChoiceCell {
  int m = 0, G = 0;
  double aic_freq = 0.0;
  double bic_freq = 0.0;
};

struct ModelChoiceTable {
  double tau = 0.0;
  std::vector<ModelChoiceCell> cells;
  int n_used = 0;
  int n_failed = 0;
};

struct ReplicateStudyResult {
  std::vector<BiasTable> bias;
  std::vector<ModelChoiceTable> choice;
};

/// B-replicate study: per (tau, spec) fit of every replicate, bias/sd of
/// every parameter against the truth for dimension-matching specs (after
/// canonical label ordering on both sides), and AIC/BIC model-choice
/// frequencies across the spec list. Replicate b draws its seed from
/// (scenario.seed, b); replicates run as independent parallel jobs.
/// Non-convergent fits are excluded from averages and counted.
ReplicateStudyResult replicate_study(const SimScenario& scenario, int B,
                                     const std::vector<std::pair<int, int>>& specs,
                                     const std::vector<double>& taus,
                                     const EmConfig& config);

}  // namespace lqhmm

#endif
