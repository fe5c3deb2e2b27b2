#ifndef LQHMM_CORE_HPP
#define LQHMM_CORE_HPP

#include <Eigen/Dense>

#include "lqhmm/types.hpp"

namespace lqhmm {

/// Check loss rho_tau(u) = u * (tau - 1{u < 0}).
inline double check_loss(double u, QuantileLevel tau) {
  return u < 0.0 ? u * (tau.value() - 1.0) : u * tau.value();
}

/// Log density of the asymmetric Laplace distribution ALD(mu, sigma, tau):
/// log(tau(1-tau)) - log(sigma) - rho_tau((y - mu)/sigma).
double ald_log_density(double y, double mu, double sigma, QuantileLevel tau);

/// State-dependent location alpha_h + x'beta. h is a 0-based state index.
double linear_predictor(const Eigen::VectorXd& x, int h, const QldoParams& params);

/// Latent drop-out class probabilities pi_g(T_i) from the cumulative-logit
/// model: pi_g = F(lambda0_g + lambda1 T_i) - F(lambda0_{g-1} + lambda1 T_i)
/// with F the logistic cdf and the boundary conventions F_0 = 0, F_G = 1.
/// G = 1 returns the degenerate vector (1).
Eigen::VectorXd ldo_class_probs(int T_i, const Eigen::VectorXd& lambda0,
                                double lambda1, int G);

/// Same model in log space (stable for extreme cutpoints).
Eigen::VectorXd ldo_class_log_probs(int T_i, const Eigen::VectorXd& lambda0,
                                    double lambda1, int G);

/// zeta-weighted cumulative-logit log-likelihood
/// sum_i sum_g zeta_ig log pi_g(T_i); the m-step objective for lambda.
double ldo_weighted_loglik(const Eigen::MatrixXd& zeta, const std::vector<int>& T,
                           const Eigen::VectorXd& lambda0, double lambda1);

/// Smallest value v with cumulative weight >= tau * total; the minimizer of
/// the weighted check loss sum_j w_j rho_tau(v_j - v). Zero-weight entries
/// are ignored; total weight must be positive.
double weighted_quantile(const Eigen::VectorXd& values, const Eigen::VectorXd& weights,
                         QuantileLevel tau);

/// log(sum_k exp(v_k)) with the usual max shift; -inf for an empty or
/// all -inf input.
double log_sum_exp(const Eigen::VectorXd& v);

}  // namespace lqhmm

#endif
