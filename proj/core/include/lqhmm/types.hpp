#ifndef LQHMM_TYPES_HPP
#define LQHMM_TYPES_HPP

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lqhmm/errors.hpp"

namespace lqhmm {

/// Quantile level tau, strictly inside (0, 1).
class QuantileLevel {
 public:
  explicit QuantileLevel(double tau) : tau_(tau) {
    if (!(tau > 0.0 && tau < 1.0))
      throw InvalidParameterError("quantile level must lie strictly in (0,1), got " +
                                  std::to_string(tau));
  }
  double value() const { return tau_; }

 private:
  double tau_;
};

/// Model dimensions: quantile level, m hidden states, G latent drop-out
/// classes. G = 1 degenerates to the plain quantile HMM.
struct ModelSpec {
  QuantileLevel tau;
  int m = 1;
  int G = 1;

  ModelSpec(QuantileLevel tau, int m, int G) : tau(tau), m(m), G(G) {
    if (m < 1) throw InvalidParameterError("m must be >= 1");
    if (G < 1) throw InvalidParameterError("G must be >= 1");
  }
};

/// One subject's longitudinal block: responses y (length T_i) and a
/// T_i x q covariate matrix. Monotone drop-out is encoded structurally:
/// occasions are t = 1..T_i with no interior gaps.
struct Subject {
  std::string id;
  Eigen::VectorXd y;
  Eigen::MatrixXd X;

  int occasions() const { return static_cast<int>(y.size()); }
};

/// Long-format panel with per-subject monotone drop-out times.
struct PanelDataset {
  std::vector<Subject> subjects;
  std::vector<std::string> covariate_names;
  int T_max = 0;

  int n() const { return static_cast<int>(subjects.size()); }
  int q() const { return static_cast<int>(covariate_names.size()); }
  long total_occasions() const;

  /// Number of subjects still in the study at each occasion t = 1..T_max.
  std::vector<int> subjects_at_occasion() const;

  void validate() const;
};

/// Full parameter vector Psi(tau): fixed effects beta, state intercepts
/// alpha, ALD scale sigma, initial distribution delta, one m x m transition
/// matrix per drop-out class, and the cumulative-logit parameters
/// (lambda0 cutpoints, lambda1 slope). States and classes are 0-based.
struct QldoParams {
  Eigen::VectorXd beta;
  Eigen::VectorXd alpha;
  double sigma = 1.0;
  Eigen::VectorXd delta;
  std::vector<Eigen::MatrixXd> Q;
  Eigen::VectorXd lambda0;  // length G-1, non-decreasing
  double lambda1 = 0.0;

  int q() const { return static_cast<int>(beta.size()); }
  int m() const { return static_cast<int>(alpha.size()); }
  int G() const { return static_cast<int>(Q.size()); }

  void validate() const;
};

/// Whether alpha is strictly increasing (the canonical state labeling).
bool is_canonical(const QldoParams& params);

/// E-step posteriors for one subject: state marginals u_single (T_i x m)
/// and, for t = 2..T_i, class-conditional pair posteriors u_pair[t-2][g]
/// (m x m, origin state k in rows, destination h in columns).
struct SubjectPosteriors {
  Eigen::MatrixXd u_single;
  std::vector<std::vector<Eigen::MatrixXd>> u_pair;
};

/// Full E-step output: per-subject posteriors, the n x G class posterior
/// matrix zeta, and the observed-data conditional log-likelihood.
struct Posteriors {
  std::vector<SubjectPosteriors> subjects;
  Eigen::MatrixXd zeta;
  double loglik = 0.0;
};

/// Relabels states so alpha is strictly increasing, permuting delta and the
/// rows/columns of every Q(g) consistently. Ties within 1e-8 break by the
/// subject-averaged first-occasion posterior mass (larger first) when
/// posteriors are supplied, by original index otherwise. Returns the
/// permutation applied (new index -> old index).
std::vector<int> canonicalize(QldoParams& params);
std::vector<int> canonicalize(QldoParams& params, Posteriors& posteriors);

/// Free-parameter count: q + m + 1 + (m-1) + G*m*(m-1) + (G-1) + 1{G>=2}.
int n_free_params(int q, int m, int G);

/// Names for the flattened parameter vector, in flatten_params order.
std::vector<std::string> param_names(const QldoParams& params,
                                     const std::vector<std::string>& covariate_names);

/// Flattens to (beta, alpha, sigma, delta, Q(0)..Q(G-1) row-major,
/// lambda0, lambda1); the layout used by bootstrap and bias tables.
Eigen::VectorXd flatten_params(const QldoParams& params);

}  // namespace lqhmm

#endif
