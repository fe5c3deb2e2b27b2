#include "lqhmm/types.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace lqhmm {

namespace {

constexpr double kSimplexTol = 1e-8;
constexpr double kAlphaTieTol = 1e-8;

bool is_probability_vector(const Eigen::VectorXd& v) {
  if (v.size() == 0) return false;
  if ((v.array() < -1e-15).any()) return false;
  return std::abs(v.sum() - 1.0) <= kSimplexTol;
}

}  // namespace

long PanelDataset::total_occasions() const {
  long total = 0;
  for (const auto& s : subjects) total += s.occasions();
  return total;
}

std::vector<int> PanelDataset::subjects_at_occasion() const {
  std::vector<int> counts(static_cast<std::size_t>(T_max), 0);
  for (const auto& s : subjects)
    for (int t = 0; t < s.occasions() && t < T_max; ++t) ++counts[t];
  return counts;
}

void PanelDataset::validate() const {
  if (subjects.empty()) throw InvalidParameterError("panel has no subjects");
  if (T_max < 1) throw InvalidParameterError("panel T_max must be >= 1");
  const int q_ = q();
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    const auto& s = subjects[i];
    const int T_i = s.occasions();
    if (T_i < 1 || T_i > T_max)
      throw InvalidParameterError("subject " + s.id + " has " + std::to_string(T_i) +
                                  " occasions, outside [1, " + std::to_string(T_max) + "]");
    if (s.X.rows() != T_i || s.X.cols() != q_)
      throw InvalidParameterError("subject " + s.id + " covariate block is " +
                                  std::to_string(s.X.rows()) + "x" + std::to_string(s.X.cols()) +
                                  ", expected " + std::to_string(T_i) + "x" + std::to_string(q_));
    if (!s.y.allFinite() || !s.X.allFinite())
      throw InvalidParameterError("subject " + s.id + " has non-finite observations");
  }
}

void QldoParams::validate() const {
  const int m_ = m();
  const int G_ = G();
  if (m_ < 1) throw InvalidParameterError("alpha must have at least one state");
  if (G_ < 1) throw InvalidParameterError("at least one transition matrix required");
  if (!(sigma > 0.0))
    throw InvalidParameterError("sigma must be positive, got " + std::to_string(sigma));
  if (!beta.allFinite() || !alpha.allFinite())
    throw InvalidParameterError("non-finite regression parameters");
  if (delta.size() != m_ || !is_probability_vector(delta))
    throw InvalidParameterError("delta must be a length-m probability vector");
  for (int g = 0; g < G_; ++g) {
    if (Q[g].rows() != m_ || Q[g].cols() != m_)
      throw InvalidParameterError("Q(" + std::to_string(g) + ") must be m x m");
    for (int k = 0; k < m_; ++k) {
      if (!is_probability_vector(Q[g].row(k).transpose()))
        throw InvalidParameterError("row " + std::to_string(k) + " of Q(" +
                                    std::to_string(g) + ") is not a probability vector");
    }
  }
  if (lambda0.size() != G_ - 1)
    throw InvalidParameterError("lambda0 must have G-1 entries");
  for (int g = 0; g + 1 < lambda0.size(); ++g)
    if (lambda0[g] > lambda0[g + 1])
      throw InvalidParameterError("lambda0 cutpoints must be non-decreasing");
  if (!lambda0.allFinite() || !std::isfinite(lambda1))
    throw InvalidParameterError("non-finite drop-out model parameters");
}

bool is_canonical(const QldoParams& params) {
  for (int h = 0; h + 1 < params.alpha.size(); ++h)
    if (!(params.alpha[h] < params.alpha[h + 1])) return false;
  return true;
}

namespace {

void apply_state_permutation(QldoParams& params, const std::vector<int>& perm) {
  const int m = params.m();
  Eigen::VectorXd alpha(m), delta(m);
  for (int h = 0; h < m; ++h) {
    alpha[h] = params.alpha[perm[h]];
    delta[h] = params.delta[perm[h]];
  }
  params.alpha = alpha;
  params.delta = delta;
  for (auto& Q : params.Q) {
    Eigen::MatrixXd P(m, m);
    for (int k = 0; k < m; ++k)
      for (int h = 0; h < m; ++h) P(k, h) = Q(perm[k], perm[h]);
    Q = P;
  }
}

void apply_state_permutation(Posteriors& post, const std::vector<int>& perm) {
  const int m = static_cast<int>(perm.size());
  for (auto& sp : post.subjects) {
    Eigen::MatrixXd u(sp.u_single.rows(), m);
    for (int h = 0; h < m; ++h) u.col(h) = sp.u_single.col(perm[h]);
    sp.u_single = u;
    for (auto& per_t : sp.u_pair)
      for (auto& M : per_t) {
        Eigen::MatrixXd P(m, m);
        for (int k = 0; k < m; ++k)
          for (int h = 0; h < m; ++h) P(k, h) = M(perm[k], perm[h]);
        M = P;
      }
  }
}

std::vector<int> sorting_permutation(const QldoParams& params,
                                     const Eigen::VectorXd& tie_mass) {
  const int m = params.m();
  std::vector<int> perm(m);
  std::iota(perm.begin(), perm.end(), 0);
  std::stable_sort(perm.begin(), perm.end(), [&](int a, int b) {
    const double da = params.alpha[a], db = params.alpha[b];
    if (std::abs(da - db) > kAlphaTieTol) return da < db;
    if (tie_mass.size() > 0 && tie_mass[a] != tie_mass[b])
      return tie_mass[a] > tie_mass[b];
    return false;  // stable: original index order
  });
  return perm;
}

}  // namespace

std::vector<int> canonicalize(QldoParams& params) {
  auto perm = sorting_permutation(params, Eigen::VectorXd());
  apply_state_permutation(params, perm);
  return perm;
}

std::vector<int> canonicalize(QldoParams& params, Posteriors& posteriors) {
  const int m = params.m();
  Eigen::VectorXd mass = Eigen::VectorXd::Zero(m);
  for (const auto& sp : posteriors.subjects) mass += sp.u_single.row(0).transpose();
  auto perm = sorting_permutation(params, mass);
  apply_state_permutation(params, perm);
  apply_state_permutation(posteriors, perm);
  return perm;
}

int n_free_params(int q, int m, int G) {
  return q + m + 1 + (m - 1) + G * m * (m - 1) + (G - 1) + (G >= 2 ? 1 : 0);
}

std::vector<std::string> param_names(const QldoParams& params,
                                     const std::vector<std::string>& covariate_names) {
  std::vector<std::string> names;
  const int q = params.q(), m = params.m(), G = params.G();
  for (int j = 0; j < q; ++j)
    names.push_back("beta_" + (j < static_cast<int>(covariate_names.size())
                                   ? covariate_names[j]
                                   : "x" + std::to_string(j + 1)));
  for (int h = 0; h < m; ++h) names.push_back("alpha_" + std::to_string(h + 1));
  names.push_back("sigma");
  for (int h = 0; h < m; ++h) names.push_back("delta_" + std::to_string(h + 1));
  for (int g = 0; g < G; ++g)
    for (int k = 0; k < m; ++k)
      for (int h = 0; h < m; ++h)
        names.push_back("Q" + std::to_string(g + 1) + "_" + std::to_string(k + 1) +
                        std::to_string(h + 1));
  for (int g = 0; g + 1 < G; ++g) names.push_back("lambda0_" + std::to_string(g + 1));
  if (G >= 2) names.push_back("lambda1");
  return names;
}

Eigen::VectorXd flatten_params(const QldoParams& params) {
  const int q = params.q(), m = params.m(), G = params.G();
  const int size = q + m + 1 + m + G * m * m + (G - 1) + (G >= 2 ? 1 : 0);
  Eigen::VectorXd out(size);
  int idx = 0;
  for (int j = 0; j < q; ++j) out[idx++] = params.beta[j];
  for (int h = 0; h < m; ++h) out[idx++] = params.alpha[h];
  out[idx++] = params.sigma;
  for (int h = 0; h < m; ++h) out[idx++] = params.delta[h];
  for (int g = 0; g < G; ++g)
    for (int k = 0; k < m; ++k)
      for (int h = 0; h < m; ++h) out[idx++] = params.Q[g](k, h);
  for (int g = 0; g + 1 < G; ++g) out[idx++] = params.lambda0[g];
  if (G >= 2) out[idx++] = params.lambda1;
  return out;
}

}  // namespace lqhmm
