#ifndef LQHMM_SELECT_HPP
#define LQHMM_SELECT_HPP

#include <vector>

#include <Eigen/Dense>

#include "lqhmm/em.hpp"
#include "lqhmm/types.hpp"

namespace lqhmm {

struct GridCell {
  int m = 0, G = 0;
  double loglik = 0.0;
  int n_params = 0;
  double aic = 0.0;
  double bic = 0.0;
  bool converged = false;
  int start_index = 0;
};

/// Fits over an (m, G) grid. Selections are the argmin of each criterion
/// over converged cells, ties broken toward smaller m, then smaller G.
struct GridResult {
  std::vector<GridCell> cells;  // m-major, then G, matching the input ranges
  int aic_m = 0, aic_G = 0;
  int bic_m = 0, bic_G = 0;
};

GridResult grid_search(const PanelDataset& data, const std::vector<int>& m_values,
                       const std::vector<int>& G_values, QuantileLevel tau,
                       const EmConfig& config);

struct BootstrapResult {
  int B = 0;
  double level = 0.0;
  std::vector<std::string> names;
  Eigen::VectorXd point;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
  Eigen::VectorXd sd;
  int n_failed = 0;
  /// Converged resample estimates, one flattened parameter vector per row.
  Eigen::MatrixXd draws;
};

/// Non-parametric block bootstrap: resamples n subjects with replacement,
/// keeping each subject's whole longitudinal block, refits each resample
/// (warm-started from the point estimate unless force_multistart), and
/// returns percentile intervals at the given level after canonical label
/// ordering per resample. Resample b draws its indices from
/// (config.rng_seed, b).
BootstrapResult block_bootstrap(const PanelDataset& data, const ModelSpec& spec,
                                const EmConfig& config, int B, double level,
                                bool force_multistart = false);

/// Same machinery with caller-supplied resample index sets (test hook;
/// identity indices reproduce the point fit exactly).
BootstrapResult bootstrap_with_indices(const PanelDataset& data, const ModelSpec& spec,
                                       const EmConfig& config,
                                       const std::vector<std::vector<int>>& resamples,
                                       double level, bool force_multistart = false);

}  // namespace lqhmm

#endif
