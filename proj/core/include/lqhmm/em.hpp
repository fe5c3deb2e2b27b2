#ifndef LQHMM_EM_HPP
#define LQHMM_EM_HPP

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "lqhmm/likelihood.hpp"
#include "lqhmm/types.hpp"

namespace lqhmm {

/// EM controls. Defaults: absolute loglik-increase threshold 1e-6,
/// 500 iterations, 30 starts (one deterministic + 29 perturbed),
/// diagonal boost s = 4 and label-perturbation fraction xi = 0.1 for the
/// initial solution, inner solver tolerance 1e-8.
struct EmConfig {
  double epsilon = 1e-6;
  int max_iter = 500;
  int n_starts = 30;
  double s = 4.0;
  double xi = 0.1;
  std::uint64_t rng_seed = 1;
  double inner_tol = 1e-8;
  bool relative_convergence = false;  // (ll - prev) / (1 + |prev|) < epsilon
  int threads = 0;                    // 0 -> LQHMM_THREADS, else 1

  /// Progress hook, called as (start_index, iteration, loglik).
  std::function<void(int, int, double)> progress;

  void validate() const;
};

struct FitResult {
  QldoParams params;
  Posteriors posteriors;
  std::vector<double> loglik_trace;
  bool converged = false;
  int n_params = 0;
  double aic = 0.0;
  double bic = 0.0;
  int start_index = 0;
};

/// E-step: state marginals u_it(h), class-conditional pair posteriors
/// u_it(k,h|g), class posteriors zeta_ig, and the observed log-likelihood,
/// all via the class-conditional forward/backward tables.
Posteriors e_step(const PanelDataset& data, const QldoParams& params, QuantileLevel tau);

struct ChainUpdate {
  Eigen::VectorXd delta;
  std::vector<Eigen::MatrixXd> Q;
};

/// Closed-form updates: delta_h = mean_i u_i1(h) and
/// q_kh(g) proportional to sum_i zeta_ig sum_t u_it(k,h|g)
/// (pair posteriors weighted by the class posterior, the exact maximizer of
/// the expected complete-data log-likelihood). Zero-mass rows reset to
/// uniform.
ChainUpdate m_step_chain(const Posteriors& posteriors, const PanelDataset& data);

struct Theta {
  Eigen::VectorXd beta;
  Eigen::VectorXd alpha;
};

/// Scale update sigma = sum_i sum_t sum_h u_it(h) rho_tau(y_it - mu_it(h))
/// / sum_i T_i. Throws DegenerateFitError when every weighted residual is
/// exactly zero.
double m_step_sigma(const Posteriors& posteriors, const PanelDataset& data,
                    const Theta& theta, QuantileLevel tau);

/// Minimizes the posterior-weighted check loss
/// sum_i sum_t sum_h u_it(h) rho_tau(y_it - alpha_h - x_it'beta)
/// over (alpha, beta); a weighted linear quantile regression on the
/// m-fold expanded design with state-indicator columns. Solved by an MM
/// (iteratively reweighted least squares) scheme with epsilon continuation;
/// with a warm start the returned objective never exceeds the warm start's.
/// q = 0 designs are solved exactly as per-state weighted quantiles.
/// Throws IdentifiabilityError naming collinear columns when the expanded
/// design is rank deficient.
Theta m_step_theta(const Posteriors& posteriors, const PanelDataset& data,
                   QuantileLevel tau, double inner_tol,
                   const Theta* warm_start = nullptr);

/// The m_step_theta objective at a given theta.
double theta_objective(const Posteriors& posteriors, const PanelDataset& data,
                       const Theta& theta, QuantileLevel tau);

struct LambdaUpdate {
  Eigen::VectorXd lambda0;
  double lambda1 = 0.0;
  /// Set when estimates were clipped at the safety box (complete or
  /// quasi-complete separation of the class posteriors).
  bool separation = false;
};

/// Maximizes the zeta-weighted cumulative-logit log-likelihood over
/// (lambda0, lambda1) under non-decreasing cutpoints, via damped Newton in
/// the (first cutpoint, log-increment) reparameterization. No-op returning
/// empty parameters when G = 1. fix_slope pins lambda1 at its initial value.
LambdaUpdate m_step_lambda(const Eigen::MatrixXd& zeta, const std::vector<int>& T,
                           int G, double inner_tol,
                           const LambdaUpdate* warm_start = nullptr,
                           bool fix_slope = false);

/// Starting values. start_index 0 is deterministic: uniform delta,
/// diagonally boosted transitions (1 + s 1{h=k})/(m + s), beta and the
/// pooled intercept from a pooled quantile regression, alpha = intercept +
/// Gauss-Hermite node offsets scaled by the pooled residual sd, lambda from
/// an ordered-logit fit to a discretized T distribution with a fraction xi
/// of labels perturbed. Larger indices perturb start 0 with documented
/// magnitudes, seeded from (rng_seed, start_index).
QldoParams initialize(const PanelDataset& data, const ModelSpec& spec,
                      int start_index, const EmConfig& config);

/// Full EM estimate: runs every start, keeps the best converged solution
/// (ties toward the smaller start index), canonicalizes state labels, and
/// attaches AIC/BIC. Throws ConvergenceError with all traces if no start
/// converges.
FitResult fit(const PanelDataset& data, const ModelSpec& spec, const EmConfig& config);

/// Single-start fit from explicit starting values (bootstrap warm starts).
/// If the first convergence check already passes, the starting parameters
/// are returned unchanged.
FitResult fit_from(const PanelDataset& data, const ModelSpec& spec,
                   const EmConfig& config, const QldoParams& start);

/// Probabilists' Gauss-Hermite nodes (ascending); the alpha initialization
/// offsets.
Eigen::VectorXd gauss_hermite_nodes(int m);

}  // namespace lqhmm

#endif
