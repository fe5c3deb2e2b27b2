#include "lqhmm/em.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>

#include "lqhmm/parallel.hpp"
#include "lqhmm/rng.hpp"

namespace lqhmm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kSigmaFloor = 1e-10;

std::vector<int> dropout_times(const PanelDataset& data) {
  std::vector<int> T(data.n());
  for (int i = 0; i < data.n(); ++i) T[i] = data.subjects[i].occasions();
  return T;
}

}  // namespace

void EmConfig::validate() const {
  if (!(epsilon > 0.0)) throw InvalidParameterError("epsilon must be positive");
  if (max_iter < 1) throw InvalidParameterError("max_iter must be >= 1");
  if (n_starts < 1) throw InvalidParameterError("n_starts must be >= 1");
  if (!(s > 0.0)) throw InvalidParameterError("s must be positive");
  if (xi < 0.0 || xi > 1.0) throw InvalidParameterError("xi must lie in [0,1]");
  if (!(inner_tol > 0.0)) throw InvalidParameterError("inner_tol must be positive");
}

// ---------------------------------------------------------------------------
// E-step
// ---------------------------------------------------------------------------

namespace {

void e_step_subject(const Subject& s, const QldoParams& params, QuantileLevel tau,
                    const Eigen::MatrixXd& log_pi_by_T, int subject_index,
                    SubjectPosteriors& sp, Eigen::VectorXd& zeta_row,
                    double& loglik_i) {
  const int T = s.occasions();
  const int m = params.m();
  const int G = params.G();

  const Eigen::MatrixXd log_e = emission_log_density(s.y, s.X, params, tau);
  const ForwardBackwardTables tables = forward_backward_from_emissions(log_e, params);
  const Eigen::VectorXd log_pi = log_pi_by_T.row(T - 1).transpose();

  loglik_i = log_sum_exp(log_pi + tables.log_class_lik);
  if (!std::isfinite(loglik_i))
    throw NumericalError("E-step normalizer vanished for subject " + s.id +
                             " (index " + std::to_string(subject_index) + ")",
                         subject_index);

  zeta_row.resize(G);
  for (int g = 0; g < G; ++g)
    zeta_row[g] = std::exp(log_pi[g] + tables.log_class_lik[g] - loglik_i);
  zeta_row /= zeta_row.sum();

  // state marginals mix the class-conditional smoothers over classes
  sp.u_single.resize(T, m);
  for (int t = 0; t < T; ++t) {
    for (int h = 0; h < m; ++h) {
      double acc = 0.0;
      for (int g = 0; g < G; ++g)
        acc += std::exp(tables.log_a[g](t, h) + tables.log_b[g](t, h) + log_pi[g] -
                        loglik_i);
      sp.u_single(t, h) = acc;
    }
    const double row_sum = sp.u_single.row(t).sum();
    if (!(row_sum > 0.0) || !std::isfinite(row_sum))
      throw NumericalError("state posterior normalizer vanished for subject " + s.id,
                           subject_index);
    sp.u_single.row(t) /= row_sum;
  }

  // pair posteriors, conditional on each class:
  // u_t(k,h|g) = a_{t-1}(k,g) q_kh(g) f_t(h) b_t(h,g) / f(y|g), evaluated as
  // an outer product of shifted linear-space factors.
  sp.u_pair.assign(std::max(T - 1, 0), std::vector<Eigen::MatrixXd>(G));
  for (int t = 1; t < T; ++t) {
    for (int g = 0; g < G; ++g) {
      const Eigen::RowVectorXd la_prev = tables.log_a[g].row(t - 1);
      const Eigen::RowVectorXd rhs = log_e.row(t) + tables.log_b[g].row(t);
      const double c1 = la_prev.maxCoeff();
      const double c2 = rhs.maxCoeff();
      const Eigen::VectorXd v = (la_prev.array() - c1).exp().transpose();
      const Eigen::VectorXd w = (rhs.array() - c2).exp().transpose();
      const double scale = std::exp(c1 + c2 - tables.log_class_lik[g]);
      Eigen::MatrixXd M =
          scale * (v * w.transpose()).cwiseProduct(params.Q[g]);
      const double total = M.sum();
      if (!(total > 0.0) || !std::isfinite(total))
        throw NumericalError("pair posterior normalizer vanished for subject " + s.id,
                             subject_index);
      M /= total;
      sp.u_pair[t - 1][g] = std::move(M);
    }
  }
}

void e_step_into(const PanelDataset& data, const QldoParams& params, QuantileLevel tau,
                 Posteriors& out) {
  const int n = data.n();
  const int G = params.G();
  out.subjects.resize(n);
  out.zeta.resize(n, G);

  Eigen::MatrixXd log_pi_by_T(data.T_max, G);
  for (int T = 1; T <= data.T_max; ++T)
    log_pi_by_T.row(T - 1) =
        ldo_class_log_probs(T, params.lambda0, params.lambda1, G).transpose();

  Eigen::VectorXd loglik(n);
  Eigen::VectorXd zeta_row;
  for (int i = 0; i < n; ++i) {
    e_step_subject(data.subjects[i], params, tau, log_pi_by_T, i, out.subjects[i],
                   zeta_row, loglik[i]);
    out.zeta.row(i) = zeta_row.transpose();
  }
  out.loglik = loglik.sum();
}

}  // namespace

Posteriors e_step(const PanelDataset& data, const QldoParams& params, QuantileLevel tau) {
  data.validate();
  params.validate();
  if (data.q() != params.q())
    throw InvalidParameterError("panel/params covariate dimension mismatch");
  Posteriors out;
  e_step_into(data, params, tau, out);
  return out;
}

// ---------------------------------------------------------------------------
// M-step: chain parameters (closed form)
// ---------------------------------------------------------------------------

ChainUpdate m_step_chain(const Posteriors& posteriors, const PanelDataset& data) {
  const int n = data.n();
  const int m = static_cast<int>(posteriors.subjects.at(0).u_single.cols());
  const int G = static_cast<int>(posteriors.zeta.cols());

  ChainUpdate out;
  out.delta = Eigen::VectorXd::Zero(m);
  for (int i = 0; i < n; ++i)
    out.delta += posteriors.subjects[i].u_single.row(0).transpose();
  out.delta /= static_cast<double>(n);

  out.Q.assign(G, Eigen::MatrixXd::Zero(m, m));
  for (int i = 0; i < n; ++i) {
    const auto& sp = posteriors.subjects[i];
    for (std::size_t t = 0; t < sp.u_pair.size(); ++t)
      for (int g = 0; g < G; ++g) out.Q[g] += posteriors.zeta(i, g) * sp.u_pair[t][g];
  }
  for (int g = 0; g < G; ++g)
    for (int k = 0; k < m; ++k) {
      const double row_sum = out.Q[g].row(k).sum();
      if (row_sum > 1e-300)
        out.Q[g].row(k) /= row_sum;
      else
        out.Q[g].row(k).setConstant(1.0 / m);  // state never visited under g
    }
  return out;
}

// ---------------------------------------------------------------------------
// M-step: ALD scale (closed form)
// ---------------------------------------------------------------------------

double m_step_sigma(const Posteriors& posteriors, const PanelDataset& data,
                    const Theta& theta, QuantileLevel tau) {
  double acc = 0.0;
  long total_T = 0;
  for (int i = 0; i < data.n(); ++i) {
    const auto& s = data.subjects[i];
    const auto& u = posteriors.subjects[i].u_single;
    const int T = s.occasions();
    const Eigen::VectorXd xb =
        theta.beta.size() > 0 ? (s.X * theta.beta).eval() : Eigen::VectorXd::Zero(T);
    for (int t = 0; t < T; ++t)
      for (int h = 0; h < theta.alpha.size(); ++h)
        acc += u(t, h) * check_loss(s.y[t] - theta.alpha[h] - xb[t], tau);
    total_T += T;
  }
  const double sigma = acc / static_cast<double>(total_T);
  if (!(sigma > 0.0))
    throw DegenerateFitError("ALD scale collapsed to zero (perfect fit)");
  return sigma;
}

// ---------------------------------------------------------------------------
// M-step: theta = (beta, alpha) via weighted quantile regression
// ---------------------------------------------------------------------------

double theta_objective(const Posteriors& posteriors, const PanelDataset& data,
                       const Theta& theta, QuantileLevel tau) {
  double acc = 0.0;
  for (int i = 0; i < data.n(); ++i) {
    const auto& s = data.subjects[i];
    const auto& u = posteriors.subjects[i].u_single;
    const Eigen::VectorXd xb = theta.beta.size() > 0 ? (s.X * theta.beta).eval()
                                                     : Eigen::VectorXd::Zero(s.occasions());
    for (int t = 0; t < s.occasions(); ++t)
      for (int h = 0; h < theta.alpha.size(); ++h)
        acc += u(t, h) * check_loss(s.y[t] - theta.alpha[h] - xb[t], tau);
  }
  return acc;
}

namespace {

// The expanded design [state indicators | X] is rank deficient exactly when
// the pooled design [1 | X] is; check the small one and name every column
// loading on a null-space direction.
void check_theta_identifiability(const PanelDataset& data) {
  const int q = data.q();
  if (q == 0) return;
  const long N = data.total_occasions();
  Eigen::MatrixXd P(N, q + 1);
  long r = 0;
  for (const auto& s : data.subjects)
    for (int t = 0; t < s.occasions(); ++t) {
      P(r, 0) = 1.0;
      P.row(r).tail(q) = s.X.row(t);
      ++r;
    }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(P);
  lu.setThreshold(1e-10);
  if (lu.rank() < q + 1) {
    const Eigen::MatrixXd kernel = lu.kernel();
    std::vector<std::string> cols;
    for (int col = 0; col < q + 1; ++col) {
      if (kernel.row(col).cwiseAbs().maxCoeff() <= 1e-8) continue;
      cols.push_back(col == 0 ? "state_intercepts"
                              : "beta_" + data.covariate_names[col - 1]);
    }
    std::string msg = "expanded quantile-regression design is rank deficient; "
                      "collinear columns:";
    for (const auto& c : cols) msg += " " + c;
    throw IdentifiabilityError(msg, cols);
  }
}

// Weighted-least-squares step of the MM scheme. Minimizes
//   sum_j W_j (y_j - xt_j'theta)^2 + (1 - 2 tau) sum_j w_j (y_j - xt_j'theta)
// over theta = (alpha, beta), with xt_j = [e_h | x_it], W_j = w_j/(|r_j|+eps).
// The normal equations are accumulated blockwise; solving them never forms
// the expanded design.
Theta mm_solve(const Posteriors& posteriors, const PanelDataset& data, double tau,
               const Theta& cur, double eps, bool ls_init) {
  const int m = static_cast<int>(cur.alpha.size());
  const int q = static_cast<int>(cur.beta.size());
  const int p = m + q;
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(p);
  const double shift = ls_init ? 0.0 : (tau - 0.5);

  for (int i = 0; i < data.n(); ++i) {
    const auto& s = data.subjects[i];
    const auto& u = posteriors.subjects[i].u_single;
    const Eigen::VectorXd xb =
        q > 0 ? (s.X * cur.beta).eval() : Eigen::VectorXd::Zero(s.occasions());
    for (int t = 0; t < s.occasions(); ++t) {
      const double y = s.y[t];
      double W_row = 0.0;   // sum_h W_ith
      double Wy_row = 0.0;  // sum_h W_ith * y
      for (int h = 0; h < m; ++h) {
        const double w = u(t, h);
        if (w <= 0.0) continue;
        const double r = y - cur.alpha[h] - xb[t];
        const double W = ls_init ? w : w / (std::abs(r) + eps);
        A(h, h) += W;
        b[h] += W * y + shift * w;
        if (q > 0) {
          A.block(h, m, 1, q) += W * s.X.row(t);
          W_row += W;
          Wy_row += W * y;
        }
      }
      if (q > 0) {
        const double w_row = u.row(t).sum();
        A.block(m, m, q, q).selfadjointView<Eigen::Lower>().rankUpdate(
            s.X.row(t).transpose(), W_row);
        b.tail(q) += (Wy_row + shift * w_row) * s.X.row(t).transpose();
      }
    }
  }
  A.block(m, m, q, q) =
      Eigen::MatrixXd(A.block(m, m, q, q).selfadjointView<Eigen::Lower>());
  A.block(m, 0, q, m) = A.block(0, m, m, q).transpose();
  A.diagonal().array() += 1e-12 * (A.trace() / p + 1.0);

  const Eigen::VectorXd sol = A.ldlt().solve(b);
  Theta next;
  next.alpha = sol.head(m);
  next.beta = sol.tail(q);
  return next;
}

}  // namespace

Theta m_step_theta(const Posteriors& posteriors, const PanelDataset& data,
                   QuantileLevel tau, double inner_tol, const Theta* warm_start) {
  const int m = static_cast<int>(posteriors.subjects.at(0).u_single.cols());
  const int q = data.q();
  check_theta_identifiability(data);

  if (q == 0) {
    // the objective separates over states: each alpha_h is an exact
    // weighted tau-quantile of the pooled responses
    const long N = data.total_occasions();
    Eigen::VectorXd ys(N);
    Eigen::MatrixXd ws(N, m);
    long r = 0;
    for (int i = 0; i < data.n(); ++i) {
      const auto& s = data.subjects[i];
      for (int t = 0; t < s.occasions(); ++t) {
        ys[r] = s.y[t];
        ws.row(r) = posteriors.subjects[i].u_single.row(t);
        ++r;
      }
    }
    Theta out;
    out.beta.resize(0);
    out.alpha.resize(m);
    for (int h = 0; h < m; ++h) {
      if (ws.col(h).sum() > 0.0)
        out.alpha[h] = weighted_quantile(ys, ws.col(h), tau);
      else  // state carries no posterior mass; hold it in place
        out.alpha[h] = warm_start != nullptr ? warm_start->alpha[h] : 0.0;
    }
    return out;
  }

  Theta cur;
  if (warm_start != nullptr) {
    cur = *warm_start;
  } else {
    cur.alpha = Eigen::VectorXd::Zero(m);
    cur.beta = Eigen::VectorXd::Zero(q);
    cur = mm_solve(posteriors, data, tau.value(), cur, 0.0, /*ls_init=*/true);
  }
  double cur_obj = theta_objective(posteriors, data, cur, tau);

  // residual scale pins the epsilon-continuation schedule
  double wsum = 0.0;
  for (const auto& sp : posteriors.subjects) wsum += sp.u_single.sum();
  const double scale = std::max(cur_obj / std::max(wsum, 1.0), 1e-8);

  for (const double eps_rel : {1e-4, 1e-8, 1e-12}) {
    const double eps = eps_rel * scale;
    for (int it = 0; it < 60; ++it) {
      Theta cand = mm_solve(posteriors, data, tau.value(), cur, eps, false);
      double cand_obj = theta_objective(posteriors, data, cand, tau);

      // backtrack toward the current iterate if the full step overshoots
      for (int half = 0; half < 25 && !(cand_obj < cur_obj); ++half) {
        cand.alpha = 0.5 * (cand.alpha + cur.alpha);
        cand.beta = 0.5 * (cand.beta + cur.beta);
        cand_obj = theta_objective(posteriors, data, cand, tau);
      }

      double improvement = 0.0;
      if (cand_obj < cur_obj) {
        improvement = cur_obj - cand_obj;
        cur = std::move(cand);
        cur_obj = cand_obj;
      }
      if (improvement < inner_tol) break;
    }
  }

  if (warm_start != nullptr) {
    // generalized-EM guard: never return a worse point than the warm start
    const double warm_obj = theta_objective(posteriors, data, *warm_start, tau);
    if (warm_obj < cur_obj) return *warm_start;
  }
  return cur;
}

// ---------------------------------------------------------------------------
// M-step: drop-out class model (damped Newton on the reparameterized scale)
// ---------------------------------------------------------------------------

namespace {

// weights aggregated over subjects sharing the same drop-out time
struct LdoGroups {
  std::vector<int> T;
  Eigen::MatrixXd weight;  // one row per distinct T, G columns
};

LdoGroups group_by_dropout(const Eigen::MatrixXd& zeta, const std::vector<int>& T) {
  std::vector<int> distinct = T;
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  LdoGroups groups;
  groups.T = distinct;
  groups.weight = Eigen::MatrixXd::Zero(static_cast<long>(distinct.size()), zeta.cols());
  for (std::size_t i = 0; i < T.size(); ++i) {
    const auto it = std::lower_bound(distinct.begin(), distinct.end(), T[i]);
    groups.weight.row(it - distinct.begin()) += zeta.row(static_cast<long>(i));
  }
  return groups;
}

struct LdoObjective {
  const LdoGroups& groups;
  int G;
  bool fix_slope;
  double fixed_slope;

  int dim() const { return (G - 1) + (fix_slope ? 0 : 1); }

  void unpack(const Eigen::VectorXd& eta, Eigen::VectorXd& lambda0, double& lambda1) const {
    lambda0.resize(G - 1);
    lambda0[0] = eta[0];
    for (int g = 1; g < G - 1; ++g) lambda0[g] = lambda0[g - 1] + std::exp(eta[g]);
    lambda1 = fix_slope ? fixed_slope : eta[G - 1];
  }

  double value(const Eigen::VectorXd& eta) const {
    Eigen::VectorXd lambda0;
    double lambda1;
    unpack(eta, lambda0, lambda1);
    double total = 0.0;
    for (std::size_t r = 0; r < groups.T.size(); ++r) {
      const Eigen::VectorXd logp =
          ldo_class_log_probs(groups.T[r], lambda0, lambda1, G);
      for (int g = 0; g < G; ++g) {
        const double w = groups.weight(static_cast<long>(r), g);
        if (w > 0.0) {
          if (logp[g] == kNegInf) return kNegInf;
          total += w * logp[g];
        }
      }
    }
    return total;
  }

  Eigen::VectorXd gradient(const Eigen::VectorXd& eta) const {
    Eigen::VectorXd lambda0;
    double lambda1;
    unpack(eta, lambda0, lambda1);
    Eigen::VectorXd g_lambda0 = Eigen::VectorXd::Zero(G - 1);
    double g_slope = 0.0;
    for (std::size_t r = 0; r < groups.T.size(); ++r) {
      const int T = groups.T[r];
      const Eigen::VectorXd pi = ldo_class_probs(T, lambda0, lambda1, G);
      // ratio_g = zeta-weight of class g divided by pi_g
      Eigen::VectorXd ratio(G);
      for (int g = 0; g < G; ++g) {
        const double w = groups.weight(static_cast<long>(r), g);
        ratio[g] = w > 0.0 ? w / std::max(pi[g], 1e-300) : 0.0;
      }
      for (int l = 1; l <= G - 1; ++l) {
        const double x = lambda0[l - 1] + lambda1 * T;
        const double F = 1.0 / (1.0 + std::exp(-x));
        const double f = F * (1.0 - F);
        const double pull = f * (ratio[l - 1] - ratio[l]);
        g_lambda0[l - 1] += pull;
        g_slope += pull * T;
      }
    }
    Eigen::VectorXd g_eta(dim());
    g_eta[0] = g_lambda0.sum();
    for (int j = 1; j < G - 1; ++j) {
      double tail = 0.0;
      for (int l = j; l < G - 1; ++l) tail += g_lambda0[l];
      g_eta[j] = std::exp(eta[j]) * tail;
    }
    if (!fix_slope) g_eta[G - 1] = g_slope;
    return g_eta;
  }
};

}  // namespace

LambdaUpdate m_step_lambda(const Eigen::MatrixXd& zeta, const std::vector<int>& T,
                           int G, double inner_tol, const LambdaUpdate* warm_start,
                           bool fix_slope) {
  LambdaUpdate out;
  if (G == 1) {
    out.lambda0.resize(0);
    out.lambda1 = 0.0;
    return out;
  }
  if (zeta.rows() != static_cast<long>(T.size()) || zeta.cols() != G)
    throw InvalidParameterError("zeta must be n x G with one row per drop-out time");

  // complete separation: a class with (essentially) no posterior mass leaves
  // its cutpoint unidentified and drives the optimizer to the boundary
  const Eigen::VectorXd class_mass = zeta.colwise().sum().transpose();
  bool separated = class_mass.minCoeff() <= 1e-8 * class_mass.sum();

  const LdoGroups groups = group_by_dropout(zeta, T);
  LdoObjective obj{groups, G, fix_slope,
                   warm_start != nullptr ? warm_start->lambda1 : 0.0};

  Eigen::VectorXd eta(obj.dim());
  if (warm_start != nullptr && warm_start->lambda0.size() == G - 1) {
    eta[0] = warm_start->lambda0[0];
    for (int g = 1; g < G - 1; ++g)
      eta[g] = std::log(
          std::max(warm_start->lambda0[g] - warm_start->lambda0[g - 1], 1e-8));
    if (!fix_slope) eta[G - 1] = warm_start->lambda1;
  } else {
    // cutpoints from the weighted cumulative class frequencies, flat slope
    Eigen::VectorXd mass = zeta.colwise().sum().transpose();
    mass /= mass.sum();
    double cum = 0.0;
    Eigen::VectorXd lambda0(G - 1);
    for (int g = 0; g < G - 1; ++g) {
      cum += mass[g];
      const double c = std::clamp(cum, 1e-6, 1.0 - 1e-6);
      lambda0[g] = std::log(c / (1.0 - c));
      if (g > 0) lambda0[g] = std::max(lambda0[g], lambda0[g - 1] + 1e-8);
    }
    eta[0] = lambda0[0];
    for (int g = 1; g < G - 1; ++g)
      eta[g] = std::log(std::max(lambda0[g] - lambda0[g - 1], 1e-8));
    if (!fix_slope) eta[G - 1] = 0.0;
  }

  const double kBox = 35.0;
  auto clamp_eta = [&](Eigen::VectorXd& e) {
    for (int j = 0; j < e.size(); ++j) e[j] = std::clamp(e[j], -kBox, kBox);
  };
  clamp_eta(eta);

  double f_cur = obj.value(eta);
  double mu = 1e-8;
  const int d = obj.dim();

  for (int it = 0; it < 300; ++it) {
    const Eigen::VectorXd grad = obj.gradient(eta);
    if (grad.lpNorm<Eigen::Infinity>() <= inner_tol) break;

    // finite-difference Hessian of the analytic gradient
    Eigen::MatrixXd H(d, d);
    for (int j = 0; j < d; ++j) {
      const double step = 1e-5 * (1.0 + std::abs(eta[j]));
      Eigen::VectorXd ep = eta, em = eta;
      ep[j] += step;
      em[j] -= step;
      H.col(j) = (obj.gradient(ep) - obj.gradient(em)) / (2.0 * step);
    }
    H = 0.5 * (H + H.transpose()).eval();

    bool accepted = false;
    for (int attempt = 0; attempt < 40 && !accepted; ++attempt) {
      Eigen::MatrixXd negH = -H;
      negH.diagonal().array() += mu;
      Eigen::VectorXd dir = negH.ldlt().solve(grad);
      double alpha = 1.0;
      for (int ls = 0; ls < 12; ++ls) {
        Eigen::VectorXd cand = eta + alpha * dir;
        clamp_eta(cand);
        const double f_cand = obj.value(cand);
        if (f_cand > f_cur) {
          eta = cand;
          f_cur = f_cand;
          accepted = true;
          mu = std::max(mu / 3.0, 1e-12);
          break;
        }
        alpha *= 0.5;
      }
      if (!accepted) mu = std::min(mu * 10.0, 1e12);
    }
    if (!accepted) break;  // stationary up to the damping ladder
  }

  double lambda1;
  obj.unpack(eta, out.lambda0, lambda1);
  out.lambda1 = lambda1;

  // boundary-safe clipping when the optimum sits outside the safety box
  const double kClip = 30.0;
  if (std::abs(out.lambda1) > kClip) separated = true;
  out.lambda1 = std::clamp(out.lambda1, -kClip, kClip);
  for (int g = 0; g < out.lambda0.size(); ++g) {
    if (std::abs(out.lambda0[g]) > kClip) separated = true;
    out.lambda0[g] = std::clamp(out.lambda0[g], -kClip, kClip);
    if (g > 0) out.lambda0[g] = std::max(out.lambda0[g], out.lambda0[g - 1]);
  }

  // clipping may undo the line search's gains; never hand back a point
  // worse than the warm start (generalized-EM guard)
  if (warm_start != nullptr && warm_start->lambda0.size() == G - 1) {
    const double got = ldo_weighted_loglik(zeta, T, out.lambda0, out.lambda1);
    const double had =
        ldo_weighted_loglik(zeta, T, warm_start->lambda0, warm_start->lambda1);
    if (had > got) {
      out.lambda0 = warm_start->lambda0;
      out.lambda1 = warm_start->lambda1;
    }
  }
  out.separation = separated;
  return out;
}

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

Eigen::VectorXd gauss_hermite_nodes(int m) {
  if (m < 1) throw InvalidParameterError("need at least one node");
  if (m == 1) return Eigen::VectorXd::Zero(1);
  // Golub-Welsch on the Hermite Jacobi matrix; probabilists' scaling
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(m, m);
  for (int k = 1; k < m; ++k) {
    const double off = std::sqrt(k / 2.0);
    J(k - 1, k) = off;
    J(k, k - 1) = off;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
  Eigen::VectorXd nodes = es.eigenvalues() * std::sqrt(2.0);
  std::sort(nodes.data(), nodes.data() + nodes.size());
  return nodes;
}

namespace {

Posteriors pooled_posteriors(const PanelDataset& data) {
  Posteriors post;
  post.subjects.resize(data.n());
  post.zeta = Eigen::MatrixXd::Ones(data.n(), 1);
  for (int i = 0; i < data.n(); ++i)
    post.subjects[i].u_single = Eigen::MatrixXd::Ones(data.subjects[i].occasions(), 1);
  return post;
}

}  // namespace

QldoParams initialize(const PanelDataset& data, const ModelSpec& spec,
                      int start_index, const EmConfig& config) {
  data.validate();
  config.validate();
  const int m = spec.m;
  const int G = spec.G;
  const int q = data.q();

  QldoParams params;
  params.delta = Eigen::VectorXd::Constant(m, 1.0 / m);
  Eigen::MatrixXd Q0 = Eigen::MatrixXd::Constant(m, m, 1.0 / (m + config.s));
  Q0.diagonal().array() = (1.0 + config.s) / (m + config.s);
  params.Q.assign(G, Q0);

  // pooled quantile regression treating all observations as independent
  const Posteriors pooled = pooled_posteriors(data);
  const Theta pooled_fit = m_step_theta(pooled, data, spec.tau, config.inner_tol);
  params.beta = pooled_fit.beta;

  double mean = 0.0, ss = 0.0, loss = 0.0;
  long N = 0;
  for (const auto& s : data.subjects) {
    const Eigen::VectorXd xb =
        q > 0 ? (s.X * params.beta).eval() : Eigen::VectorXd::Zero(s.occasions());
    for (int t = 0; t < s.occasions(); ++t) {
      const double e = s.y[t] - pooled_fit.alpha[0] - xb[t];
      mean += e;
      ss += e * e;
      loss += check_loss(e, spec.tau);
      ++N;
    }
  }
  mean /= N;
  const double sd = std::max(std::sqrt(std::max(ss / N - mean * mean, 0.0)), 1e-8);
  params.alpha =
      (pooled_fit.alpha[0] + (sd * gauss_hermite_nodes(m)).array()).matrix();
  params.sigma = std::max(loss / N, 1e-8);

  if (G >= 2) {
    // ordered logit on a quantile-bin discretization of the T_i, with a
    // fraction xi of the labels perturbed to avoid separation
    const std::vector<int> T = dropout_times(data);
    std::vector<int> sorted_T = T;
    std::sort(sorted_T.begin(), sorted_T.end());
    Eigen::VectorXd thresholds(G - 1);
    for (int g = 1; g < G; ++g)
      thresholds[g - 1] =
          sorted_T[std::min<std::size_t>(sorted_T.size() - 1,
                                         sorted_T.size() * g / G)];
    Rng label_rng(mix_seed(config.rng_seed, static_cast<std::uint64_t>(start_index),
                           0xD15CULL));
    Eigen::MatrixXd zeta = Eigen::MatrixXd::Zero(data.n(), G);
    for (int i = 0; i < data.n(); ++i) {
      int label = 0;
      for (int g = 0; g < G - 1; ++g)
        if (T[i] > thresholds[g]) label = g + 1;
      if (label_rng.uniform() < config.xi) label = label_rng.uniform_int(G);
      zeta(i, label) = 1.0;
    }
    const LambdaUpdate lam = m_step_lambda(zeta, T, G, config.inner_tol);
    params.lambda0 = lam.lambda0;
    params.lambda1 = lam.lambda1;
    // the discretized labels are a near-deterministic step in T, so this fit
    // can be arbitrarily steep; moderate starting values keep EM interior
    params.lambda1 = std::clamp(params.lambda1, -2.0, 2.0);
    for (int g = 0; g < G - 1; ++g) {
      params.lambda0[g] = std::clamp(params.lambda0[g], -8.0, 8.0);
      if (g > 0) params.lambda0[g] = std::max(params.lambda0[g], params.lambda0[g - 1]);
    }
  } else {
    params.lambda0.resize(0);
    params.lambda1 = 0.0;
  }

  if (start_index > 0) {
    // random restart: documented perturbations of the deterministic start
    Rng rng(mix_seed(config.rng_seed, static_cast<std::uint64_t>(start_index)));
    for (int h = 0; h < m; ++h) params.alpha[h] += 0.5 * sd * rng.normal();
    std::sort(params.alpha.data(), params.alpha.data() + m);
    for (int j = 0; j < q; ++j)
      params.beta[j] += (0.1 + 0.3 * std::abs(params.beta[j])) * rng.normal();
    params.sigma = std::max(params.sigma * std::exp(0.3 * rng.normal()), 1e-8);
    for (int h = 0; h < m; ++h) params.delta[h] *= std::exp(0.5 * rng.normal());
    params.delta /= params.delta.sum();
    for (int g = 0; g < G; ++g) {
      for (int k = 0; k < m; ++k) {
        for (int h = 0; h < m; ++h)
          params.Q[g](k, h) *= std::exp(0.5 * rng.normal());
        params.Q[g].row(k) /= params.Q[g].row(k).sum();
      }
    }
    if (G >= 2) {
      Eigen::VectorXd increments(G - 1);
      increments[0] = 0.0;
      for (int g = 1; g < G - 1; ++g)
        increments[g] = std::max(params.lambda0[g] - params.lambda0[g - 1], 1e-8) *
                        std::exp(0.3 * rng.normal());
      params.lambda0[0] += 0.5 * rng.normal();
      for (int g = 1; g < G - 1; ++g)
        params.lambda0[g] = params.lambda0[g - 1] + increments[g];
      params.lambda1 += 0.3 * rng.normal();
    }
  }

  params.validate();
  return params;
}

// ---------------------------------------------------------------------------
// EM driver
// ---------------------------------------------------------------------------

namespace {

struct RunOutcome {
  QldoParams params;
  Posteriors posteriors;
  std::vector<double> trace;
  bool converged = false;
  bool failed = false;
  std::string error;
};

RunOutcome run_em(const PanelDataset& data, const ModelSpec& spec, const EmConfig& config,
                  const QldoParams& start, int start_index, bool warm_started) {
  RunOutcome out;
  QldoParams params = start;
  Theta theta{params.beta, params.alpha};
  const std::vector<int> T = dropout_times(data);

  double prev_ll = kNegInf;
  try {
    for (int iter = 0;; ++iter) {
      e_step_into(data, params, spec.tau, out.posteriors);
      const double ll = out.posteriors.loglik;
      out.trace.push_back(ll);
      if (config.progress) config.progress(start_index, iter, ll);

      if (iter >= 1) {
        const double diff = config.relative_convergence
                                ? (ll - prev_ll) / (1.0 + std::abs(prev_ll))
                                : ll - prev_ll;
        if (diff < config.epsilon) {
          out.converged = true;
          if (warm_started && iter == 1) {
            // the entry point already satisfied the stopping rule: return
            // it unchanged (keeps identity-resample refits byte-exact)
            params = start;
            e_step_into(data, params, spec.tau, out.posteriors);
          }
          break;
        }
      }
      if (iter >= config.max_iter) break;
      prev_ll = ll;

      theta = m_step_theta(out.posteriors, data, spec.tau, config.inner_tol, &theta);
      double sigma;
      try {
        sigma = m_step_sigma(out.posteriors, data, theta, spec.tau);
      } catch (const DegenerateFitError&) {
        sigma = kSigmaFloor;  // perfect interpolation; keep the likelihood finite
      }
      const ChainUpdate chain = m_step_chain(out.posteriors, data);
      params.beta = theta.beta;
      params.alpha = theta.alpha;
      params.sigma = sigma;
      params.delta = chain.delta;
      params.Q = chain.Q;
      if (spec.G >= 2) {
        LambdaUpdate warm{params.lambda0, params.lambda1, false};
        const LambdaUpdate lam =
            m_step_lambda(out.posteriors.zeta, T, spec.G, config.inner_tol, &warm);
        params.lambda0 = lam.lambda0;
        params.lambda1 = lam.lambda1;
      }
    }
  } catch (const NumericalError& err) {
    out.failed = true;
    out.error = err.what();
    return out;
  }
  out.params = std::move(params);
  return out;
}

FitResult finalize_fit(const PanelDataset& data, const ModelSpec& spec,
                       RunOutcome&& best, int start_index) {
  FitResult result;
  result.params = std::move(best.params);
  result.posteriors = std::move(best.posteriors);
  result.loglik_trace = std::move(best.trace);
  result.converged = best.converged;
  result.start_index = start_index;
  canonicalize(result.params, result.posteriors);
  result.n_params = n_free_params(data.q(), spec.m, spec.G);
  const double ll = result.posteriors.loglik;
  result.aic = -2.0 * ll + 2.0 * result.n_params;
  result.bic = -2.0 * ll + result.n_params * std::log(static_cast<double>(data.n()));
  return result;
}

}  // namespace

FitResult fit(const PanelDataset& data, const ModelSpec& spec, const EmConfig& config) {
  data.validate();
  config.validate();
  check_theta_identifiability(data);

  const int threads = config.threads > 0 ? config.threads : thread_count_from_env();
  std::vector<RunOutcome> outcomes(config.n_starts);
  parallel_for(config.n_starts, threads, [&](std::size_t r) {
    const QldoParams start = initialize(data, spec, static_cast<int>(r), config);
    outcomes[r] = run_em(data, spec, config, start, static_cast<int>(r), false);
  });

  int best = -1;
  for (int r = 0; r < config.n_starts; ++r) {
    if (outcomes[r].failed || !outcomes[r].converged) continue;
    if (best < 0 ||
        outcomes[r].posteriors.loglik > outcomes[best].posteriors.loglik)
      best = r;
  }
  if (best < 0) {
    std::vector<std::vector<double>> traces;
    for (auto& o : outcomes) traces.push_back(std::move(o.trace));
    throw ConvergenceError("no EM start converged within " +
                               std::to_string(config.max_iter) + " iterations",
                           std::move(traces));
  }
  return finalize_fit(data, spec, std::move(outcomes[best]), best);
}

FitResult fit_from(const PanelDataset& data, const ModelSpec& spec,
                   const EmConfig& config, const QldoParams& start) {
  data.validate();
  config.validate();
  start.validate();
  if (start.m() != spec.m || start.G() != spec.G || start.q() != data.q())
    throw InvalidParameterError("warm-start parameter dimensions do not match the spec");

  RunOutcome outcome = run_em(data, spec, config, start, 0, true);
  if (outcome.failed) throw NumericalError(outcome.error);
  if (!outcome.converged) {
    std::vector<std::vector<double>> traces{outcome.trace};
    throw ConvergenceError("warm-started EM did not converge within " +
                               std::to_string(config.max_iter) + " iterations",
                           std::move(traces));
  }
  return finalize_fit(data, spec, std::move(outcome), 0);
}

}  // namespace lqhmm
