#ifndef LQHMM_LIKELIHOOD_HPP
#define LQHMM_LIKELIHOOD_HPP

#include <vector>

#include <Eigen/Dense>

#include "lqhmm/core.hpp"
#include "lqhmm/types.hpp"

namespace lqhmm {

/// Class-conditional forward/backward tables for one subject, all in log
/// space: log_a[g] and log_b[g] are T_i x m, log_class_lik[g] is
/// log f(y_i | zeta_ig = 1). For every t and g,
/// logsumexp_h(log_a + log_b) equals log_class_lik[g].
struct ForwardBackwardTables {
  std::vector<Eigen::MatrixXd> log_a;
  std::vector<Eigen::MatrixXd> log_b;
  Eigen::VectorXd log_class_lik;
};

/// T_i x m matrix of log emission densities, log f(y_it | S_it = h).
/// Emissions do not depend on the drop-out class, so they are computed once
/// per subject and shared across classes and between the two recursions.
Eigen::MatrixXd emission_log_density(const Eigen::VectorXd& y, const Eigen::MatrixXd& X,
                                     const QldoParams& params, QuantileLevel tau);

/// Log forward table for class g (0-based): a_i1(h,g) = delta_h f(y_i1|h),
/// a_it(h,g) = sum_k a_{i,t-1}(k,g) q_kh(g) f(y_it|h), evaluated with
/// log-sum-exp.
Eigen::MatrixXd forward(const Eigen::VectorXd& y, const Eigen::MatrixXd& X,
                        const QldoParams& params, QuantileLevel tau, int g);

/// Log backward table for class g: b_iT(h,g) = 1 and
/// b_it(h,g) = sum_k q_hk(g) f(y_{i,t+1}|k) b_{i,t+1}(k,g).
Eigen::MatrixXd backward(const Eigen::VectorXd& y, const Eigen::MatrixXd& X,
                         const QldoParams& params, QuantileLevel tau, int g);

ForwardBackwardTables forward_backward(const Eigen::VectorXd& y, const Eigen::MatrixXd& X,
                                       const QldoParams& params, QuantileLevel tau);

/// Recursions from a precomputed log-emission table (advanced interface;
/// also what the shift-invariance tests exercise).
ForwardBackwardTables forward_backward_from_emissions(const Eigen::MatrixXd& log_emission,
                                                      const QldoParams& params);

/// Observed-data conditional log-likelihood of one subject:
/// logsumexp_g [ log pi_g(T_i) + log f(y_i | zeta_ig = 1) ]. The drop-out
/// time marginal f_T is left unspecified and ignored.
double subject_loglik(const Eigen::VectorXd& y, const Eigen::MatrixXd& X,
                      const QldoParams& params, QuantileLevel tau);

double subject_loglik_from_emissions(const Eigen::MatrixXd& log_emission,
                                     const QldoParams& params);

/// Sum of subject log-likelihoods, accumulated in subject order (fixed
/// reduction order; bit-identical for any thread count upstream). Throws
/// NumericalError naming the subject if any contribution is non-finite.
double total_loglik(const PanelDataset& data, const QldoParams& params,
                    QuantileLevel tau);

}  // namespace lqhmm

#endif
