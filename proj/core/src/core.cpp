#include "lqhmm/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace lqhmm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// log logistic cdf, stable in both tails
double log_logistic(double x) {
  return x > 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

// log(exp(a) - exp(b)) for a >= b
double log_diff_exp(double a, double b) {
  if (b == kNegInf) return a;
  const double d = b - a;
  if (d >= 0.0) return kNegInf;  // guards exact ties from rounding
  return a + std::log1p(-std::exp(d));
}

void check_lambda(const Eigen::VectorXd& lambda0, int G) {
  if (lambda0.size() != G - 1)
    throw InvalidParameterError("lambda0 must have G-1 entries, got " +
                                std::to_string(lambda0.size()));
  for (int g = 0; g + 1 < lambda0.size(); ++g)
    if (lambda0[g] > lambda0[g + 1])
      throw InvalidParameterError("lambda0 cutpoints must be non-decreasing");
}

}  // namespace

double ald_log_density(double y, double mu, double sigma, QuantileLevel tau) {
  if (!(sigma > 0.0))
    throw InvalidParameterError("ALD scale must be positive, got " + std::to_string(sigma));
  const double t = tau.value();
  return std::log(t * (1.0 - t)) - std::log(sigma) - check_loss((y - mu) / sigma, tau);
}

double linear_predictor(const Eigen::VectorXd& x, int h, const QldoParams& params) {
  if (h < 0 || h >= params.m())
    throw InvalidParameterError("state index " + std::to_string(h) + " out of range [0, " +
                                std::to_string(params.m()) + ")");
  if (x.size() != params.beta.size())
    throw InvalidParameterError("covariate vector length " + std::to_string(x.size()) +
                                " does not match beta length " +
                                std::to_string(params.beta.size()));
  return params.alpha[h] + x.dot(params.beta);
}

Eigen::VectorXd ldo_class_log_probs(int T_i, const Eigen::VectorXd& lambda0,
                                    double lambda1, int G) {
  if (G < 1) throw InvalidParameterError("G must be >= 1");
  check_lambda(lambda0, G);
  Eigen::VectorXd out(G);
  if (G == 1) {
    out[0] = 0.0;
    return out;
  }
  // cumulative log F(lambda0_g + lambda1 T), with log F_0 = -inf, log F_G = 0
  Eigen::VectorXd logF(G + 1);
  logF[0] = kNegInf;
  for (int g = 1; g < G; ++g) logF[g] = log_logistic(lambda0[g - 1] + lambda1 * T_i);
  logF[G] = 0.0;
  for (int g = 0; g < G; ++g) out[g] = log_diff_exp(logF[g + 1], logF[g]);
  return out;
}

Eigen::VectorXd ldo_class_probs(int T_i, const Eigen::VectorXd& lambda0,
                                double lambda1, int G) {
  Eigen::VectorXd logp = ldo_class_log_probs(T_i, lambda0, lambda1, G);
  return logp.array().exp();
}

double ldo_weighted_loglik(const Eigen::MatrixXd& zeta, const std::vector<int>& T,
                           const Eigen::VectorXd& lambda0, double lambda1) {
  const int n = static_cast<int>(T.size());
  const int G = static_cast<int>(zeta.cols());
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const Eigen::VectorXd logp = ldo_class_log_probs(T[i], lambda0, lambda1, G);
    for (int g = 0; g < G; ++g) {
      const double w = zeta(i, g);
      if (w > 0.0) total += w * logp[g];
    }
  }
  return total;
}

double weighted_quantile(const Eigen::VectorXd& values, const Eigen::VectorXd& weights,
                         QuantileLevel tau) {
  if (values.size() != weights.size() || values.size() == 0)
    throw InvalidParameterError("weighted_quantile needs matching non-empty inputs");
  std::vector<int> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return values[a] < values[b]; });
  double total = 0.0;
  for (int i = 0; i < weights.size(); ++i) {
    if (weights[i] < 0.0) throw InvalidParameterError("negative weight");
    total += weights[i];
  }
  if (!(total > 0.0)) throw InvalidParameterError("total weight must be positive");
  const double target = tau.value() * total;
  double cum = 0.0;
  for (int idx : order) {
    cum += weights[idx];
    if (cum >= target) return values[idx];
  }
  return values[order.back()];
}

double log_sum_exp(const Eigen::VectorXd& v) {
  if (v.size() == 0) return kNegInf;
  const double mx = v.maxCoeff();
  if (!std::isfinite(mx)) return mx;  // all -inf (or a nan/inf propagates)
  double acc = 0.0;
  for (int i = 0; i < v.size(); ++i) acc += std::exp(v[i] - mx);
  return mx + std::log(acc);
}

}  // namespace lqhmm
