#include "lqhmm/likelihood.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace lqhmm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// One forward step in log space. The log-sum-exp over the origin state k is
// evaluated with a shared shift c = max_k v_k, which turns the inner sum
// into a plain vector-matrix product against the (linear-space) transition
// matrix: lse_k(v_k + log Q(k,h)) = c + log((exp(v - c))' Q)_h.
Eigen::RowVectorXd log_step_forward(const Eigen::RowVectorXd& prev,
                                    const Eigen::MatrixXd& Q) {
  const double c = prev.maxCoeff();
  if (c == kNegInf) return prev;
  const Eigen::RowVectorXd v = (prev.array() - c).exp();
  return ((v * Q).array().log() + c).matrix();
}

Eigen::VectorXd log_step_backward(const Eigen::VectorXd& next,
                                  const Eigen::MatrixXd& Q) {
  const double c = next.maxCoeff();
  if (c == kNegInf) return next;
  const Eigen::VectorXd w = (next.array() - c).exp();
  return ((Q * w).array().log() + c).matrix();
}

void check_inputs(const Eigen::VectorXd& y, const Eigen::MatrixXd& X,
                  const QldoParams& params) {
  params.validate();
  if (y.size() < 1) throw InvalidParameterError("empty response sequence");
  if (X.rows() != y.size() || X.cols() != params.beta.size())
    throw InvalidParameterError("covariate block is " + std::to_string(X.rows()) + "x" +
                                std::to_string(X.cols()) + ", expected " +
                                std::to_string(y.size()) + "x" +
                                std::to_string(params.beta.size()));
}

}  // namespace

Eigen::MatrixXd emission_log_density(const Eigen::VectorXd& y, const Eigen::MatrixXd& X,
                                     const QldoParams& params, QuantileLevel tau) {
  const int T = static_cast<int>(y.size());
  const int m = params.m();
  const double t_ = tau.value();
  const double log_norm = std::log(t_ * (1.0 - t_)) - std::log(params.sigma);
  const Eigen::VectorXd xb =
      params.beta.size() > 0 ? (X * params.beta).eval() : Eigen::VectorXd::Zero(T);
  Eigen::MatrixXd log_e(T, m);
  for (int t = 0; t < T; ++t)
    for (int h = 0; h < m; ++h) {
      const double u = (y[t] - params.alpha[h] - xb[t]) / params.sigma;
      log_e(t, h) = log_norm - (u < 0.0 ? u * (t_ - 1.0) : u * t_);
    }
  return log_e;
}

ForwardBackwardTables forward_backward_from_emissions(const Eigen::MatrixXd& log_emission,
                                                      const QldoParams& params) {
  const int T = static_cast<int>(log_emission.rows());
  const int m = params.m();
  const int G = params.G();
  const Eigen::RowVectorXd log_delta = params.delta.array().log().transpose();

  ForwardBackwardTables tables;
  tables.log_a.assign(G, Eigen::MatrixXd(T, m));
  tables.log_b.assign(G, Eigen::MatrixXd(T, m));
  tables.log_class_lik.resize(G);

  for (int g = 0; g < G; ++g) {
    const Eigen::MatrixXd& Q = params.Q[g];
    Eigen::MatrixXd& la = tables.log_a[g];
    la.row(0) = log_delta + log_emission.row(0);
    for (int t = 1; t < T; ++t)
      la.row(t) = log_step_forward(la.row(t - 1), Q) + log_emission.row(t);

    Eigen::MatrixXd& lb = tables.log_b[g];
    lb.row(T - 1).setZero();
    for (int t = T - 2; t >= 0; --t)
      lb.row(t) =
          log_step_backward((log_emission.row(t + 1) + lb.row(t + 1)).transpose(), Q)
              .transpose();

    tables.log_class_lik[g] = log_sum_exp(la.row(T - 1).transpose());
  }
  return tables;
}

ForwardBackwardTables forward_backward(const Eigen::VectorXd& y, const Eigen::MatrixXd& X,
                                       const QldoParams& params, QuantileLevel tau) {
  check_inputs(y, X, params);
  return forward_backward_from_emissions(emission_log_density(y, X, params, tau), params);
}

Eigen::MatrixXd forward(const Eigen::VectorXd& y, const Eigen::MatrixXd& X,
                        const QldoParams& params, QuantileLevel tau, int g) {
  check_inputs(y, X, params);
  if (g < 0 || g >= params.G())
    throw InvalidParameterError("class index " + std::to_string(g) + " out of range");
  const Eigen::MatrixXd log_e = emission_log_density(y, X, params, tau);
  const int T = static_cast<int>(y.size());
  Eigen::MatrixXd la(T, params.m());
  la.row(0) = params.delta.array().log().transpose().matrix() + log_e.row(0);
  for (int t = 1; t < T; ++t)
    la.row(t) = log_step_forward(la.row(t - 1), params.Q[g]) + log_e.row(t);
  return la;
}

Eigen::MatrixXd backward(const Eigen::VectorXd& y, const Eigen::MatrixXd& X,
                         const QldoParams& params, QuantileLevel tau, int g) {
  check_inputs(y, X, params);
  if (g < 0 || g >= params.G())
    throw InvalidParameterError("class index " + std::to_string(g) + " out of range");
  const Eigen::MatrixXd log_e = emission_log_density(y, X, params, tau);
  const int T = static_cast<int>(y.size());
  Eigen::MatrixXd lb(T, params.m());
  lb.row(T - 1).setZero();
  for (int t = T - 2; t >= 0; --t)
    lb.row(t) = log_step_backward((log_e.row(t + 1) + lb.row(t + 1)).transpose(),
                                  params.Q[g])
                    .transpose();
  return lb;
}

double subject_loglik_from_emissions(const Eigen::MatrixXd& log_emission,
                                     const QldoParams& params) {
  const ForwardBackwardTables tables =
      forward_backward_from_emissions(log_emission, params);
  const int T_i = static_cast<int>(log_emission.rows());
  const Eigen::VectorXd log_pi =
      ldo_class_log_probs(T_i, params.lambda0, params.lambda1, params.G());
  return log_sum_exp(log_pi + tables.log_class_lik);
}

double subject_loglik(const Eigen::VectorXd& y, const Eigen::MatrixXd& X,
                      const QldoParams& params, QuantileLevel tau) {
  check_inputs(y, X, params);
  return subject_loglik_from_emissions(emission_log_density(y, X, params, tau), params);
}

double total_loglik(const PanelDataset& data, const QldoParams& params,
                    QuantileLevel tau) {
  data.validate();
  params.validate();
  if (data.q() != params.q())
    throw InvalidParameterError("panel has q=" + std::to_string(data.q()) +
                                " covariates, params expect " + std::to_string(params.q()));
  double total = 0.0;
  for (int i = 0; i < data.n(); ++i) {
    const auto& s = data.subjects[i];
    const double ll =
        subject_loglik_from_emissions(emission_log_density(s.y, s.X, params, tau), params);
    if (!std::isfinite(ll))
      throw NumericalError("non-finite log-likelihood contribution from subject " +
                               s.id + " (index " + std::to_string(i) + ")",
                           i);
    total += ll;
  }
  return total;
}

}  // namespace lqhmm
