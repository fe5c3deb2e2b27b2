#ifndef LQHMM_IO_HPP
#define LQHMM_IO_HPP

#include <string>
#include <vector>

#include "lqhmm/em.hpp"
#include "lqhmm/select.hpp"
#include "lqhmm/simulate.hpp"
#include "lqhmm/types.hpp"

namespace lqhmm {

/// Reads a long-format panel CSV with header
/// subject_id,t,y,<covariate columns...>. Rows may appear in any order but
/// must be groupable by subject with contiguous occasions t = 1..T_i
/// (monotone drop-out). Throws DataFormatError naming the subject on a gap
/// or duplicate, and the row/column on a parse failure. Subjects keep their
/// first-appearance order.
PanelDataset ingest_csv(const std::string& path);

void write_panel_csv(const PanelDataset& data, const std::string& path);

/// Shortest decimal representation that round-trips to the same double;
/// locale-independent. All numeric file output goes through this.
std::string format_double(double value);

/// One fitted parameter set per quantile level, as stored in params.json.
struct ParamsFileEntry {
  double tau = 0.5;
  QldoParams params;
  double loglik = 0.0;
  int n_params = 0;
  double aic = 0.0;
  double bic = 0.0;
  bool converged = false;
  int start_index = 0;
};

struct ParamsFile {
  int n_subjects = 0;
  std::vector<std::string> covariate_names;
  std::vector<ParamsFileEntry> entries;
};

/// Self-describing JSON schema with explicit (m, G, q) dimension metadata;
/// round-trips through read_params_json preserving every invariant.
void write_params_json(const ParamsFile& file, const std::string& path);
ParamsFile read_params_json(const std::string& path);

/// Per-occasion posterior file: MAP state, MAP drop-out class (1-based in
/// the output), the state posteriors and the subject's class posteriors.
void write_posteriors_csv(const PanelDataset& data, const Posteriors& posteriors,
                          const std::string& path);

void write_loglik_trace_csv(const FitResult& fit, const std::string& path);

void write_grid_csv(const GridResult& grid, const std::string& path);
void write_grid_json(const GridResult& grid, const std::string& path);

void write_bootstrap_csv(const BootstrapResult& boot, const std::string& path);
void write_bootstrap_json(const BootstrapResult& boot, const std::string& path);

void write_bias_csv(const ReplicateStudyResult& study, const std::string& path);
void write_model_choice_csv(const ReplicateStudyResult& study, const std::string& path);

/// Risk-set summary (subjects present at each occasion).
void write_panel_summary_csv(const PanelDataset& data, const std::string& path);

void write_sim_truth_csv(const SimulatedPanel& panel, const std::string& path);

}  // namespace lqhmm

#endif
