#include "lqhmm/select.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "lqhmm/parallel.hpp"
#include "lqhmm/rng.hpp"

namespace lqhmm {

GridResult grid_search(const PanelDataset& data, const std::vector<int>& m_values,
                       const std::vector<int>& G_values, QuantileLevel tau,
                       const EmConfig& config) {
  data.validate();
  config.validate();
  if (m_values.empty() || G_values.empty())
    throw InvalidParameterError("grid_search needs non-empty m and G ranges");

  GridResult grid;
  for (int m : m_values)
    for (int G : G_values) grid.cells.push_back({m, G});

  const int threads = config.threads > 0 ? config.threads : thread_count_from_env();
  EmConfig cell_config = config;
  cell_config.threads = 1;
  cell_config.progress = nullptr;

  parallel_for(grid.cells.size(), threads, [&](std::size_t c) {
    GridCell& cell = grid.cells[c];
    try {
      const FitResult fr = fit(data, ModelSpec(tau, cell.m, cell.G), cell_config);
      cell.loglik = fr.posteriors.loglik;
      cell.n_params = fr.n_params;
      cell.aic = fr.aic;
      cell.bic = fr.bic;
      cell.converged = fr.converged;
      cell.start_index = fr.start_index;
    } catch (const ConvergenceError&) {
      cell.converged = false;
      cell.loglik = std::numeric_limits<double>::quiet_NaN();
      cell.aic = std::numeric_limits<double>::infinity();
      cell.bic = std::numeric_limits<double>::infinity();
      cell.n_params = n_free_params(data.q(), cell.m, cell.G);
    }
  });

  // argmin over converged cells; ties toward smaller m, then smaller G
  // (the cell list is m-major, so the first strict improvement wins)
  int best_aic = -1, best_bic = -1;
  for (std::size_t c = 0; c < grid.cells.size(); ++c) {
    if (!grid.cells[c].converged) continue;
    if (best_aic < 0 || grid.cells[c].aic < grid.cells[best_aic].aic)
      best_aic = static_cast<int>(c);
    if (best_bic < 0 || grid.cells[c].bic < grid.cells[best_bic].bic)
      best_bic = static_cast<int>(c);
  }
  if (best_aic < 0)
    throw ConvergenceError("every grid cell failed to converge", {});
  grid.aic_m = grid.cells[best_aic].m;
  grid.aic_G = grid.cells[best_aic].G;
  grid.bic_m = grid.cells[best_bic].m;
  grid.bic_G = grid.cells[best_bic].G;
  return grid;
}

namespace {

Eigen::VectorXd column_quantile(const Eigen::MatrixXd& draws, int col, double p) {
  const long B = draws.rows();
  std::vector<double> v(B);
  for (long b = 0; b < B; ++b) v[b] = draws(b, col);
  std::sort(v.begin(), v.end());
  const double idx = p * static_cast<double>(B - 1);
  const long lo = static_cast<long>(std::floor(idx));
  const long hi = std::min(lo + 1, B - 1);
  const double w = idx - lo;
  Eigen::VectorXd out(1);
  out[0] = (1.0 - w) * v[lo] + w * v[hi];
  return out;
}

}  // namespace

BootstrapResult bootstrap_with_indices(const PanelDataset& data, const ModelSpec& spec,
                                       const EmConfig& config,
                                       const std::vector<std::vector<int>>& resamples,
                                       double level, bool force_multistart) {
  data.validate();
  config.validate();
  if (!(level > 0.0 && level < 1.0))
    throw InvalidParameterError("confidence level must lie in (0,1)");
  if (resamples.empty()) throw InvalidParameterError("need at least one resample");

  const FitResult point = fit(data, spec, config);
  const Eigen::VectorXd point_flat = flatten_params(point.params);
  const int P = static_cast<int>(point_flat.size());
  const int B = static_cast<int>(resamples.size());

  const int threads = config.threads > 0 ? config.threads : thread_count_from_env();
  EmConfig refit_config = config;
  refit_config.threads = 1;
  refit_config.progress = nullptr;
  EmConfig warm_config = refit_config;
  warm_config.n_starts = 1;

  std::vector<Eigen::VectorXd> flat(B);
  std::vector<char> ok(B, 0);
  parallel_for(B, threads, [&](std::size_t b) {
    PanelDataset boot;
    boot.T_max = data.T_max;
    boot.covariate_names = data.covariate_names;
    boot.subjects.reserve(resamples[b].size());
    for (int idx : resamples[b]) {
      if (idx < 0 || idx >= data.n())
        throw InvalidParameterError("resample index out of range");
      boot.subjects.push_back(data.subjects[idx]);
    }
    try {
      const FitResult fr = force_multistart
                               ? fit(boot, spec, refit_config)
                               : fit_from(boot, spec, warm_config, point.params);
      flat[b] = flatten_params(fr.params);
      ok[b] = 1;
    } catch (const ConvergenceError&) {
    } catch (const NumericalError&) {
    } catch (const DegenerateFitError&) {
    }
  });

  BootstrapResult out;
  out.B = B;
  out.level = level;
  out.names = param_names(point.params, data.covariate_names);
  out.point = point_flat;
  int B_ok = 0;
  for (int b = 0; b < B; ++b) B_ok += ok[b];
  out.n_failed = B - B_ok;
  if (B_ok == 0)
    throw ConvergenceError("every bootstrap resample failed to refit", {});

  out.draws.resize(B_ok, P);
  for (int b = 0, r = 0; b < B; ++b)
    if (ok[b]) out.draws.row(r++) = flat[b].transpose();

  out.lower.resize(P);
  out.upper.resize(P);
  out.sd.resize(P);
  const double a = 1.0 - level;
  for (int j = 0; j < P; ++j) {
    out.lower[j] = column_quantile(out.draws, j, a / 2.0)[0];
    out.upper[j] = column_quantile(out.draws, j, 1.0 - a / 2.0)[0];
    const double mean = out.draws.col(j).mean();
    out.sd[j] = B_ok > 1 ? std::sqrt((out.draws.col(j).array() - mean).square().sum() /
                                     (B_ok - 1))
                         : 0.0;
  }
  return out;
}

BootstrapResult block_bootstrap(const PanelDataset& data, const ModelSpec& spec,
                                const EmConfig& config, int B, double level,
                                bool force_multistart) {
  if (B < 1) throw InvalidParameterError("B must be >= 1");
  data.validate();
  const int n = data.n();
  std::vector<std::vector<int>> resamples(B);
  for (int b = 0; b < B; ++b) {
    Rng rng(mix_seed(config.rng_seed, 0xB007ULL, static_cast<std::uint64_t>(b)));
    resamples[b].resize(n);
    for (int i = 0; i < n; ++i) resamples[b][i] = rng.uniform_int(n);
  }
  return bootstrap_with_indices(data, spec, config, resamples, level, force_multistart);
}

}  // namespace lqhmm
