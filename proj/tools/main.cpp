// Command-line front end: fit | simulate | select | bootstrap | replicate.
// All numeric artifacts are written through the deterministic formatters in
// lqhmm/io.hpp, so identical (flags, seed) runs produce byte-identical
// output for any LQHMM_THREADS setting.
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lqhmm/em.hpp"
#include "lqhmm/io.hpp"
#include "lqhmm/select.hpp"
#include "lqhmm/simulate.hpp"

namespace fs = std::filesystem;
using namespace lqhmm;

namespace {

struct CommonOpts {
  std::string input;
  std::string out = ".";
  std::vector<double> taus{0.5};
  std::uint64_t seed = 1;
  int starts = 30;
  double epsilon = 1e-6;
  int max_iter = 500;
  double inner_tol = 1e-8;
  double s = 4.0;
  double xi = 0.1;
  bool relative = false;
};

EmConfig make_config(const CommonOpts& o) {
  EmConfig c;
  c.epsilon = o.epsilon;
  c.max_iter = o.max_iter;
  c.n_starts = o.starts;
  c.s = o.s;
  c.xi = o.xi;
  c.rng_seed = o.seed;
  c.inner_tol = o.inner_tol;
  c.relative_convergence = o.relative;
  c.threads = 0;  // resolved from LQHMM_THREADS
  return c;
}

void add_common_em_flags(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--tau", o.taus, "Quantile level(s)")->check(CLI::Range(1e-9, 1.0));
  cmd->add_option("--seed", o.seed, "RNG seed");
  cmd->add_option("--starts", o.starts, "EM starting points")->check(CLI::PositiveNumber);
  cmd->add_option("--epsilon", o.epsilon, "EM convergence threshold");
  cmd->add_option("--max-iter", o.max_iter, "EM iteration cap");
  cmd->add_option("--inner-tol", o.inner_tol, "Inner solver tolerance");
  cmd->add_option("--s", o.s, "Transition diagonal boost for start 0");
  cmd->add_option("--xi", o.xi, "Label perturbation fraction for start 0");
  cmd->add_flag("--relative", o.relative, "Use the relative convergence criterion");
}

std::string tau_tag(double tau) { return format_double(tau); }

fs::path prepare_out(const std::string& out) {
  fs::path dir(out);
  fs::create_directories(dir);
  return dir;
}

PanelDataset load_panel(const std::string& input, const fs::path& out_dir) {
  const PanelDataset data = ingest_csv(input);
  write_panel_summary_csv(data, (out_dir / "panel_summary.csv").string());
  std::cout << "panel: n=" << data.n() << " subjects, " << data.total_occasions()
            << " observations, T_max=" << data.T_max << ", q=" << data.q() << "\n";
  const auto counts = data.subjects_at_occasion();
  std::cout << "subjects at each occasion:";
  for (int c : counts) std::cout << " " << c;
  std::cout << "\n";
  return data;
}

int run_fit(const CommonOpts& o, int m, int G) {
  const fs::path out_dir = prepare_out(o.out);
  const PanelDataset data = load_panel(o.input, out_dir);
  const EmConfig config = make_config(o);

  ParamsFile file;
  file.n_subjects = data.n();
  file.covariate_names = data.covariate_names;
  for (double tau : o.taus) {
    const FitResult fr = fit(data, ModelSpec(QuantileLevel(tau), m, G), config);
    ParamsFileEntry e;
    e.tau = tau;
    e.params = fr.params;
    e.loglik = fr.posteriors.loglik;
    e.n_params = fr.n_params;
    e.aic = fr.aic;
    e.bic = fr.bic;
    e.converged = fr.converged;
    e.start_index = fr.start_index;
    file.entries.push_back(e);

    write_posteriors_csv(data, fr.posteriors,
                         (out_dir / ("posteriors_tau" + tau_tag(tau) + ".csv")).string());
    write_loglik_trace_csv(
        fr, (out_dir / ("loglik_trace_tau" + tau_tag(tau) + ".csv")).string());
    std::cout << "tau=" << tau_tag(tau) << ": loglik=" << format_double(e.loglik)
              << " aic=" << format_double(e.aic) << " bic=" << format_double(e.bic)
              << " (start " << e.start_index << ", "
              << (e.converged ? "converged" : "not converged") << ")\n";
  }
  write_params_json(file, (out_dir / "params.json").string());
  return 0;
}

int run_simulate(const CommonOpts& o, int n_override, const std::string& family,
                 const std::string& resample_path, double ald_tau) {
  const fs::path out_dir = prepare_out(o.out);
  SimScenario scen = default_scenario();
  scen.seed = o.seed;
  if (n_override > 0) scen.n = n_override;
  if (family == "ald") {
    scen.family = SimScenario::ResponseFamily::Ald;
    scen.truth.sigma = 0.17;
    scen.ald_tau = ald_tau;
  }
  if (!resample_path.empty()) {
    scen.covariates.mode = CovariateGenerator::Mode::Resample;
    scen.covariates.donor = ingest_csv(resample_path);
  }

  const SimulatedPanel panel = generate(scen);
  write_panel_csv(panel.data, (out_dir / "panel.csv").string());
  write_sim_truth_csv(panel, (out_dir / "truth.csv").string());
  write_panel_summary_csv(panel.data, (out_dir / "panel_summary.csv").string());
  std::cout << "wrote " << panel.data.n() << " subjects ("
            << panel.data.total_occasions() << " rows) to "
            << (out_dir / "panel.csv").string() << "\n";
  return 0;
}

int run_select(const CommonOpts& o, const std::vector<int>& ms,
               const std::vector<int>& Gs) {
  const fs::path out_dir = prepare_out(o.out);
  const PanelDataset data = load_panel(o.input, out_dir);
  const EmConfig config = make_config(o);
  for (double tau : o.taus) {
    const GridResult grid = grid_search(data, ms, Gs, QuantileLevel(tau), config);
    write_grid_csv(grid, (out_dir / ("grid_tau" + tau_tag(tau) + ".csv")).string());
    write_grid_json(grid, (out_dir / ("grid_tau" + tau_tag(tau) + ".json")).string());
    std::cout << "tau=" << tau_tag(tau) << ": AIC selects (m=" << grid.aic_m
              << ", G=" << grid.aic_G << "); BIC selects (m=" << grid.bic_m
              << ", G=" << grid.bic_G << ")\n";
  }
  return 0;
}

int run_bootstrap(const CommonOpts& o, int m, int G, int B, double level,
                  bool multistart) {
  const fs::path out_dir = prepare_out(o.out);
  const PanelDataset data = load_panel(o.input, out_dir);
  const EmConfig config = make_config(o);
  for (double tau : o.taus) {
    const BootstrapResult boot =
        block_bootstrap(data, ModelSpec(QuantileLevel(tau), m, G), config, B, level,
                        multistart);
    write_bootstrap_csv(boot,
                        (out_dir / ("bootstrap_tau" + tau_tag(tau) + ".csv")).string());
    write_bootstrap_json(boot,
                         (out_dir / ("bootstrap_tau" + tau_tag(tau) + ".json")).string());
    std::cout << "tau=" << tau_tag(tau) << ": " << boot.B << " resamples, "
              << boot.n_failed << " failed\n";
  }
  return 0;
}

int run_replicate(const CommonOpts& o, const std::vector<int>& ms,
                  const std::vector<int>& Gs, int B, int n_override) {
  const fs::path out_dir = prepare_out(o.out);
  SimScenario scen = default_scenario();
  scen.seed = o.seed;
  if (n_override > 0) scen.n = n_override;
  const EmConfig config = make_config(o);

  std::vector<std::pair<int, int>> specs;
  for (int m : ms)
    for (int G : Gs) specs.emplace_back(m, G);

  const ReplicateStudyResult res = replicate_study(scen, B, specs, o.taus, config);
  write_bias_csv(res, (out_dir / "bias.csv").string());
  write_model_choice_csv(res, (out_dir / "model_choice.csv").string());
  for (const auto& c : res.choice)
    std::cout << "tau=" << tau_tag(c.tau) << ": " << c.n_used
              << " replicates usable for model choice, " << c.n_failed << " excluded\n";
  for (const auto& t : res.bias) {
    double worst = 0.0;
    for (long r = 0; r < t.mean_bias.size(); ++r)
      worst = std::max(worst, std::abs(t.mean_bias[r]));
    std::cout << "tau=" << tau_tag(t.tau) << " (m=" << t.m << ", G=" << t.G
              << "): max |bias|=" << format_double(worst) << " over " << t.n_used
              << " replicates\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Linear quantile hidden Markov models with latent drop-out classes"};
  app.require_subcommand(1);

  CommonOpts o;
  int m = 2, G = 1;
  std::vector<int> ms{2, 3, 4, 5};
  std::vector<int> Gs{1, 2, 3};
  int B_boot = 1000;
  int B_rep = 200;
  double level = 0.95;
  bool multistart = false;
  int n_override = 0;
  std::string family = "gaussian";
  std::string resample_path;
  double ald_tau = 0.5;

  auto* cmd_fit = app.add_subcommand("fit", "Fit one (m, G) model per quantile level");
  cmd_fit->add_option("--input,-i", o.input, "Panel CSV")->required();
  cmd_fit->add_option("--out,-o", o.out, "Output directory");
  cmd_fit->add_option("--m", m, "Hidden states")->check(CLI::PositiveNumber);
  cmd_fit->add_option("--G", G, "Latent drop-out classes")->check(CLI::PositiveNumber);
  add_common_em_flags(cmd_fit, o);

  auto* cmd_sim = app.add_subcommand("simulate", "Generate a synthetic panel");
  cmd_sim->add_option("--out,-o", o.out, "Output directory");
  cmd_sim->add_option("--seed", o.seed, "RNG seed");
  cmd_sim->add_option("--n", n_override, "Override the number of subjects");
  cmd_sim->add_option("--family", family, "Response family: gaussian | ald")
      ->check(CLI::IsMember({"gaussian", "ald"}));
  cmd_sim->add_option("--ald-tau", ald_tau, "ALD skewness when --family ald");
  cmd_sim->add_option("--resample-covariates", resample_path,
                      "Panel CSV whose covariate blocks are resampled");

  auto* cmd_select = app.add_subcommand("select", "Grid search over (m, G)");
  cmd_select->add_option("--input,-i", o.input, "Panel CSV")->required();
  cmd_select->add_option("--out,-o", o.out, "Output directory");
  cmd_select->add_option("--m", ms, "Hidden-state grid");
  cmd_select->add_option("--G", Gs, "Drop-out class grid");
  add_common_em_flags(cmd_select, o);

  auto* cmd_boot = app.add_subcommand("bootstrap", "Block bootstrap intervals");
  cmd_boot->add_option("--input,-i", o.input, "Panel CSV")->required();
  cmd_boot->add_option("--out,-o", o.out, "Output directory");
  cmd_boot->add_option("--m", m, "Hidden states")->check(CLI::PositiveNumber);
  cmd_boot->add_option("--G", G, "Latent drop-out classes")->check(CLI::PositiveNumber);
  cmd_boot->add_option("--B", B_boot, "Bootstrap resamples")->check(CLI::PositiveNumber);
  cmd_boot->add_option("--level", level, "Interval level");
  cmd_boot->add_flag("--multistart", multistart,
                     "Full multi-start refits instead of warm starts");
  add_common_em_flags(cmd_boot, o);

  auto* cmd_rep = app.add_subcommand("replicate", "Simulation study harness");
  cmd_rep->add_option("--out,-o", o.out, "Output directory");
  cmd_rep->add_option("--B", B_rep, "Replicates")->check(CLI::PositiveNumber);
  cmd_rep->add_option("--m", ms, "Hidden-state specs");
  cmd_rep->add_option("--G", Gs, "Drop-out class specs");
  cmd_rep->add_option("--n", n_override, "Override the number of subjects");
  add_common_em_flags(cmd_rep, o);

  CLI11_PARSE(app, argc, argv);

  const std::string sub = app.get_subcommands().front()->get_name();
  try {
    if (sub == "fit") return run_fit(o, m, G);
    if (sub == "simulate")
      return run_simulate(o, n_override, family, resample_path, ald_tau);
    if (sub == "select") return run_select(o, ms, Gs);
    if (sub == "bootstrap") return run_bootstrap(o, m, G, B_boot, level, multistart);
    if (sub == "replicate") return run_replicate(o, ms, Gs, B_rep, n_override);
  } catch (const DataFormatError& err) {
    std::cerr << "error: " << sub << ": " << err.what() << "\n";
    return 2;
  } catch (const InvalidParameterError& err) {
    std::cerr << "error: " << sub << ": " << err.what() << "\n";
    return 2;
  } catch (const IdentifiabilityError& err) {
    std::cerr << "error: " << sub << ": " << err.what() << "\n";
    return 2;
  } catch (const ConvergenceError& err) {
    std::cerr << "error: " << sub << ": " << err.what() << "\n";
    return 3;
  } catch (const NumericalError& err) {
    std::cerr << "error: " << sub << ": " << err.what() << "\n";
    return 3;
  } catch (const std::exception& err) {
    std::cerr << "error: " << sub << ": " << err.what() << "\n";
    return 1;
  }
  return 1;
}
