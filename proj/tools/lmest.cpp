// lmest command-line front end: simulate, fit, montecarlo, bootstrap, scores.
#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "lmest.hpp"

using namespace lmest;
using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kUsage = 1, kNotConverged = 2, kNumerical = 3 };

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Usage:
    case ErrorKind::Parse:
    case ErrorKind::Io: return kUsage;
    case ErrorKind::Convergence: return kNotConverged;
    default: return kNumerical;
  }
}

struct Common {
  std::uint64_t seed = 1;
  int threads = 1;
  std::string out = "out";
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--seed", c.seed, "master random seed")->capture_default_str();
  sub->add_option("--threads", c.threads, "worker threads (0 = all cores); results do not depend on it")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  sub->add_option("--out", c.out, "output directory")->capture_default_str();
}

std::string in_dir(const Common& c, const std::string& name) { return (fs::path(c.out) / name).string(); }

// Resolved settings of the subcommand as an INI section that --config can
// read back. Thread count and output directory are left out so the echo is
// identical across machines and runs.
void write_config_echo(const CLI::App* sub, const Common& c) {
  std::ostringstream os;
  os << '[' << sub->get_name() << "]\n";
  for (const CLI::Option* opt : sub->get_options()) {
    const std::string name = opt->get_single_name();
    if (name.empty() || name == "help" || name == "threads" || name == "out" || name == "config") continue;
    if (opt->count() == 0 && opt->get_default_str().empty()) continue;
    const auto vals = opt->as<std::vector<std::string>>();
    if (vals.empty()) continue;
    if (opt->get_expected_max() > 1) {
      os << name << "=[";
      for (std::size_t m = 0; m < vals.size(); ++m) os << (m ? "," : "") << '"' << vals[m] << '"';
      os << "]\n";
    } else if (opt->get_type_size() == 0) {
      os << name << '=' << (opt->as<bool>() ? "true" : "false") << '\n';
    } else {
      os << name << "=\"" << vals[0] << "\"\n";
    }
  }
  io::write_text(in_dir(c, "config.ini"), os.str());
}

void report_time(const char* what, std::chrono::steady_clock::time_point t0) {
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cerr << what << " wall time: " << s << " s\n";
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::vector<int> columns_named(const std::vector<std::string>& wanted, const std::vector<std::string>& names) {
  std::vector<int> cols;
  for (const auto& w : wanted) {
    auto it = std::find(names.begin(), names.end(), w);
    if (it == names.end()) fail(ErrorKind::Usage, "covariate '" + w + "' is not a column of the covariate file");
    cols.push_back(static_cast<int>(it - names.begin()));
  }
  return cols;
}

json params_json(const ModelParams& p, const std::vector<std::string>& cov_names) {
  json out = json::object();
  const auto names = parameter_names(p, cov_names);
  const auto values = flatten_params(p);
  for (std::size_t m = 0; m < names.size(); ++m) out[names[m]] = values[m];
  return out;
}

//---------------------------------------------------------------------------//

struct ScenarioArgs {
  std::string scenario = "basic-s1";
  std::optional<int> r, n, T;
};

void add_scenario(CLI::App* sub, ScenarioArgs& a) {
  std::string list;
  for (const auto& p : preset_names()) list += (list.empty() ? "" : ", ") + p;
  sub->add_option("--scenario", a.scenario, "preset: " + list)->capture_default_str();
  sub->add_option("--r", a.r, "item count override (default 5)")->check(CLI::PositiveNumber);
  sub->add_option("--n", a.n, "unit count override")->check(CLI::PositiveNumber);
  sub->add_option("--T", a.T, "occasion count override")->check(CLI::PositiveNumber);
}

Scenario resolve_scenario(const ScenarioArgs& a) {
  Scenario sc = scenario_preset(a.scenario, a.r);
  if (a.n) sc.n = *a.n;
  if (a.T) sc.T = *a.T;
  sc.validate();
  return sc;
}

struct SimulateArgs {
  ScenarioArgs sc;
};

int cmd_simulate(const SimulateArgs& a, const Common& c) {
  const Scenario sc = resolve_scenario(a.sc);
  const SimulatedData data = gen_panel(sc, c.seed);
  const auto ids = io::sequential_ids(sc.n);
  io::write_responses(in_dir(c, "responses.csv"), io::ResponseData{data.responses, ids, {}});
  std::vector<std::string> cov_names;
  if (data.covariates) {
    io::write_covariates(in_dir(c, "covariates.csv"), *data.covariates, ids);
    cov_names = data.covariates->names();
  }
  io::write_states(in_dir(c, "states.csv"), data.states, sc.n, sc.T, ids);
  io::write_params(in_dir(c, "truth"), sc.truth, cov_names, cov_names);

  json m;
  m["scenario"] = sc.id;
  m["seed"] = c.seed;
  m["n"] = sc.n;
  m["T"] = sc.T;
  m["r"] = sc.r;
  m["k"] = sc.k;
  m["cats"] = sc.cats;
  if (sc.covariates) {
    m["covariates"] = {{"q", sc.covariates->q},
                       {"ar", sc.covariates->ar},
                       {"innovation_var", sc.covariates->innovation_var},
                       {"layout", to_string(sc.layout)}};
  } else {
    m["covariates"] = nullptr;
  }
  m["truth"] = params_json(sc.truth, cov_names);
  io::write_text(in_dir(c, "manifest.json"), m.dump(2) + "\n");
  return kOk;
}

//---------------------------------------------------------------------------//

struct EstimationArgs {
  std::string method = "3s";
  int k = 2;
  std::string layout = "pairwise";
  int starts = 10;
  int max_iter = 1000;
  double tol = 1e-8;
  double perturbation = 1.0;
  int imp_max_iter = 200;
  double imp_tol = 1e-6;
};

void add_estimation(CLI::App* sub, EstimationArgs& a, bool with_method = true, bool with_layout = true) {
  if (with_method)
    sub->add_option("--method", a.method, "fml | 3s | 3s-imp")
        ->capture_default_str()
        ->check(CLI::IsMember({"fml", "3s", "3s-imp"}));
  sub->add_option("--k", a.k, "number of latent states")->capture_default_str()->check(CLI::PositiveNumber);
  if (with_layout)
    sub->add_option("--layout", a.layout, "transition logits: pairwise | difference")
        ->capture_default_str()
        ->check(CLI::IsMember({"pairwise", "difference"}));
  sub->add_option("--starts", a.starts, "random starts of the EM fits")->capture_default_str()->check(CLI::PositiveNumber);
  sub->add_option("--max-iter", a.max_iter, "EM iteration cap per start")->capture_default_str()->check(CLI::PositiveNumber);
  sub->add_option("--tol", a.tol, "relative log-likelihood change for EM convergence")->capture_default_str();
  sub->add_option("--perturbation", a.perturbation, "scale of the random-start perturbation")->capture_default_str();
  sub->add_option("--imp-max-iter", a.imp_max_iter, "cycle cap of 3s-imp")->capture_default_str()->check(CLI::PositiveNumber);
  sub->add_option("--imp-tol", a.imp_tol, "max-abs latent change that stops 3s-imp")->capture_default_str();
}

EstimationOptions estimation_options(const EstimationArgs& a, const Common& c) {
  EstimationOptions o;
  o.fit.n_starts = a.starts;
  o.fit.max_iter = a.max_iter;
  o.fit.rel_tol = a.tol;
  o.fit.perturbation = a.perturbation;
  o.fit.seed = c.seed;
  o.fit.threads = c.threads;
  o.imp_max_iter = a.imp_max_iter;
  o.imp_tol = a.imp_tol;
  o.layout = parse_layout(a.layout);
  return o;
}

struct DataArgs {
  std::string responses;
  std::string covariates;
  std::vector<std::string> init_covariates, trans_covariates;
};

void add_data(CLI::App* sub, DataArgs& a) {
  sub->add_option("--responses", a.responses, "long-format response CSV (unit_id,time,items...)")->required();
  sub->add_option("--covariates", a.covariates, "long-format covariate CSV (unit_id,time,x...)");
  sub->add_option("--init-covariates", a.init_covariates, "covariate columns of the initial logits (default all)")
      ->delimiter(',');
  sub->add_option("--trans-covariates", a.trans_covariates,
                  "covariate columns of the transition logits (default all)")
      ->delimiter(',');
}

struct LoadedData {
  io::ResponseData responses;
  std::optional<CovariatePanel> covariates;
  const CovariatePanel* covs() const { return covariates ? &*covariates : nullptr; }
};

LoadedData load_data(const DataArgs& a) {
  LoadedData d;
  d.responses = io::read_responses(a.responses);
  if (!a.covariates.empty()) {
    const auto all = io::read_covariates(a.covariates, d.responses.unit_ids, d.responses.panel.T());
    std::optional<std::vector<int>> ic, tc;
    if (!a.init_covariates.empty()) ic = columns_named(a.init_covariates, all.names());
    if (!a.trans_covariates.empty()) tc = columns_named(a.trans_covariates, all.names());
    d.covariates = io::read_covariates(a.covariates, d.responses.unit_ids, d.responses.panel.T(), ic, tc);
  } else if (!a.init_covariates.empty() || !a.trans_covariates.empty()) {
    fail(ErrorKind::Usage, "covariate columns given without --covariates");
  }
  return d;
}

std::vector<std::string> design_names(const CovariatePanel* covs, bool init) {
  std::vector<std::string> out;
  if (!covs) return out;
  for (int col : init ? covs->init_cols() : covs->trans_cols()) out.push_back(covs->names()[col]);
  return out;
}

struct FitArgs {
  DataArgs data;
  EstimationArgs est;
};

int cmd_fit(const FitArgs& a, const Common& c) {
  const LoadedData d = load_data(a.data);
  const auto t0 = std::chrono::steady_clock::now();
  const Method method = parse_method(a.est.method);
  const FitResult fit = fit_method(method, d.responses.panel, d.covs(), a.est.k, estimation_options(a.est, c));
  report_time("fit", t0);

  const auto init_names = design_names(d.covs(), true), trans_names = design_names(d.covs(), false);
  io::write_params(c.out, fit.params, init_names, trans_names);
  json log;
  log["method"] = to_string(method);
  log["k"] = a.est.k;
  log["n"] = d.responses.panel.n();
  log["T"] = d.responses.panel.T();
  log["r"] = d.responses.panel.r();
  if (d.covs()) log["layout"] = a.est.layout;
  log["loglik"] = fit.loglik;
  log["loglik_kind"] = fit.loglik_kind;
  log["converged"] = fit.converged;
  log["degenerate"] = fit.degenerate;
  log["state_collapse"] = fit.state_collapse;
  log["best_start"] = fit.best_start + 1;
  log["start_logliks"] = fit.start_logliks;
  log["iterations"] = fit.iterations;
  log["trace"] = fit.traces.empty() ? std::vector<double>{} : fit.traces[fit.best_start];
  if (method == Method::ThreeStepImp) log["cycles"] = fit.cycles;
  log["params"] = params_json(fit.params, trans_names);
  io::write_text(in_dir(c, "fit_log.json"), log.dump(2) + "\n");
  if (!fit.converged) {
    std::cerr << "warning: the fit did not converge\n";
    return kNotConverged;
  }
  return kOk;
}

//---------------------------------------------------------------------------//

struct MonteCarloArgs {
  ScenarioArgs sc;
  EstimationArgs est;
  std::vector<std::string> methods{"fml", "3s", "3s-imp"};
  int reps = 100;
};

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

int cmd_montecarlo(const MonteCarloArgs& a, const Common& c) {
  const Scenario sc = resolve_scenario(a.sc);
  std::vector<Method> methods;
  for (const auto& m : a.methods) methods.push_back(parse_method(m));
  MonteCarloOptions mo;
  mo.reps = a.reps;
  mo.seed = c.seed;
  mo.threads = c.threads;
  const auto t0 = std::chrono::steady_clock::now();
  const MonteCarloReport rep = run_monte_carlo(sc, methods, estimation_options(a.est, c), mo);
  report_time("montecarlo", t0);

  std::ostringstream os;
  os << "name,truth";
  for (const auto& m : rep.methods) os << ',' << m.method << "_bias," << m.method << "_se," << m.method << "_rmse";
  os << '\n';
  for (std::size_t p = 0; p < rep.names.size(); ++p) {
    os << rep.names[p] << ',' << io::format_double(rep.truth[p]);
    for (const auto& m : rep.methods)
      os << ',' << io::format_double(m.bias[p]) << ',' << io::format_double(m.se[p]) << ','
         << io::format_double(m.rmse[p]);
    os << '\n';
  }
  io::write_text(in_dir(c, "report.csv"), os.str());

  std::ostringstream dg;
  dg << "method,replication,status,converged,degenerate,iterations,cycles,loglik\n";
  json summary;
  summary["scenario"] = rep.scenario;
  summary["reps"] = rep.reps;
  summary["seed"] = c.seed;
  summary["methods"] = json::array();
  for (const auto& m : rep.methods) {
    json ms;
    ms["method"] = m.method;
    ms["successes"] = m.successes;
    ms["failures"] = m.failures;
    std::vector<double> cycles;
    int converged = 0;
    json errors = json::object();
    for (std::size_t r = 0; r < m.diags.size(); ++r) {
      const auto& d = m.diags[r];
      dg << m.method << ',' << (r + 1) << ',' << (d.failed ? "failed" : "ok") << ',' << d.converged << ','
         << d.degenerate << ',' << d.iterations << ',' << d.cycles << ','
         << (d.failed ? "" : io::format_double(d.loglik)) << '\n';
      if (d.failed) errors[std::to_string(r + 1)] = d.error;
      else {
        converged += d.converged;
        cycles.push_back(d.cycles);
      }
    }
    ms["converged"] = converged;
    if (m.method == "3s-imp") ms["median_cycles"] = median(cycles);
    ms["errors"] = errors;
    summary["methods"].push_back(ms);
  }
  io::write_text(in_dir(c, "diagnostics.csv"), dg.str());
  io::write_text(in_dir(c, "summary.json"), summary.dump(2) + "\n");
  return kOk;
}

//---------------------------------------------------------------------------//

struct BootstrapArgs {
  DataArgs data;
  EstimationArgs est;
  int B = 99;
  bool allow_fml = false;
};

int cmd_bootstrap(const BootstrapArgs& a, const Common& c) {
  const LoadedData d = load_data(a.data);
  const Method method = parse_method(a.est.method);
  const EstimationOptions eo = estimation_options(a.est, c);
  require(method != Method::FML || a.allow_fml, "bootstrap of fml needs --allow-fml");
  const auto t0 = std::chrono::steady_clock::now();
  const FitResult ref = fit_method(method, d.responses.panel, d.covs(), a.est.k, eo);
  BootstrapOptions bo;
  bo.B = a.B;
  bo.seed = c.seed;
  bo.threads = c.threads;
  const BootstrapResult res =
      bootstrap_se(d.responses.panel, d.covs(), a.est.k, method, eo, ref.params, bo, a.allow_fml);
  report_time("bootstrap", t0);

  const auto trans_names = design_names(d.covs(), false);
  const auto names = parameter_names(ref.params, trans_names);
  std::ostringstream se;
  se << "name,estimate,se\n";
  for (std::size_t p = 0; p < names.size(); ++p)
    se << names[p] << ',' << io::format_double(res.estimate[p]) << ',' << io::format_double(res.se[p]) << '\n';
  io::write_text(in_dir(c, "bootstrap_se.csv"), se.str());

  std::ostringstream dr;
  dr << "draw,status";
  for (const auto& n : names) dr << ',' << n;
  dr << '\n';
  json errors = json::object();
  for (int b = 0; b < a.B; ++b) {
    const bool ok = !res.draws[b].empty();
    dr << (b + 1) << ',' << (ok ? "ok" : "failed");
    for (std::size_t p = 0; p < names.size(); ++p) dr << ',' << (ok ? io::format_double(res.draws[b][p]) : "");
    dr << '\n';
    if (!ok) errors[std::to_string(b + 1)] = res.errors[b];
  }
  io::write_text(in_dir(c, "bootstrap_draws.csv"), dr.str());
  io::write_params(in_dir(c, "estimate"), ref.params, design_names(d.covs(), true), trans_names);
  json log;
  log["method"] = to_string(method);
  log["B"] = a.B;
  log["failures"] = res.failures;
  log["reference_converged"] = ref.converged;
  log["errors"] = errors;
  io::write_text(in_dir(c, "bootstrap_log.json"), log.dump(2) + "\n");
  return kOk;
}

//---------------------------------------------------------------------------//

struct ScoresArgs {
  std::string phi;
  std::string sections;
  std::string pivot;
};

int cmd_scores(const ScoresArgs& a, const Common& c) {
  const MeasurementParams meas = io::read_phi(a.phi);
  io::SectionMap sm;
  if (a.sections.empty()) {
    sm.section_of.assign(meas.r(), 0);
    sm.names = {"all"};
  } else {
    sm = io::read_sections(a.sections, meas.r());
  }
  int pivot = 0;
  if (!a.pivot.empty()) {
    auto it = std::find(sm.names.begin(), sm.names.end(), a.pivot);
    if (it != sm.names.end()) {
      pivot = static_cast<int>(it - sm.names.begin());
    } else {
      const auto idx = io::parse_int(a.pivot);
      if (!idx || *idx < 1 || *idx > static_cast<long>(sm.names.size()))
        fail(ErrorKind::Usage, "pivot '" + a.pivot + "' is neither a section label nor a 1-based section index");
      pivot = static_cast<int>(*idx - 1);
    }
  }
  const Eigen::MatrixXd mu = item_mean_score(meas);
  const Eigen::MatrixXd bar = section_mean_score(mu, sm.section_of);
  const auto order = order_states(bar, pivot);

  std::ostringstream m1, m2, o;
  m1 << io::state_header("item", meas.k);
  for (int j = 0; j < meas.r(); ++j) {
    m1 << (j + 1);
    for (int u = 0; u < meas.k; ++u) m1 << ',' << io::format_double(mu(j, u));
    m1 << '\n';
  }
  m2 << io::state_header("section", meas.k);
  for (Eigen::Index s = 0; s < bar.rows(); ++s) {
    m2 << sm.names[s];
    for (int u = 0; u < meas.k; ++u) m2 << ',' << io::format_double(bar(s, u));
    m2 << '\n';
  }
  o << "rank,state,score\n";
  for (std::size_t r = 0; r < order.size(); ++r)
    o << (r + 1) << ',' << (order[r] + 1) << ',' << io::format_double(bar(pivot, order[r])) << '\n';
  io::write_text(in_dir(c, "mu.csv"), m1.str());
  io::write_text(in_dir(c, "mu_bar.csv"), m2.str());
  io::write_text(in_dir(c, "state_order.csv"), o.str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent Markov models: simulation, full-likelihood and three-step estimation"};
  app.set_config("--config", "", "INI/TOML file with one [subcommand] section; flags override it");
  app.fallthrough();
  app.require_subcommand(1);

  Common common;
  SimulateArgs sim;
  FitArgs fit;
  MonteCarloArgs mc;
  BootstrapArgs boot;
  ScoresArgs scores;

  auto* s_sim = app.add_subcommand("simulate", "draw a panel from a preset scenario");
  add_scenario(s_sim, sim.sc);
  add_common(s_sim, common);

  auto* s_fit = app.add_subcommand("fit", "estimate a model from CSV data");
  add_data(s_fit, fit.data);
  add_estimation(s_fit, fit.est);
  add_common(s_fit, common);

  auto* s_mc = app.add_subcommand("montecarlo", "bias / se / rmse of estimators over simulated replications");
  add_scenario(s_mc, mc.sc);
  s_mc->add_option("--methods", mc.methods, "comma list of fml, 3s, 3s-imp")
      ->delimiter(',')
      ->capture_default_str()
      ->check(CLI::IsMember({"fml", "3s", "3s-imp"}));
  s_mc->add_option("--reps", mc.reps, "replications")->capture_default_str()->check(CLI::Range(2, 1000000));
  add_estimation(s_mc, mc.est, false, false);
  add_common(s_mc, common);

  auto* s_boot = app.add_subcommand("bootstrap", "nonparametric bootstrap standard errors (whole units)");
  add_data(s_boot, boot.data);
  add_estimation(s_boot, boot.est);
  s_boot->add_option("--B", boot.B, "bootstrap samples")->capture_default_str()->check(CLI::Range(2, 1000000));
  s_boot->add_flag("--allow-fml", boot.allow_fml, "permit the full-likelihood estimator");
  add_common(s_boot, common);

  auto* s_scores = app.add_subcommand("scores", "item and section mean scores, state ordering");
  s_scores->add_option("--phi", scores.phi, "phi.csv written by fit")->required();
  s_scores->add_option("--sections", scores.sections, "CSV with header item,section (default: one section)");
  s_scores->add_option("--pivot", scores.pivot, "section label or 1-based index used to order states");
  add_common(s_scores, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    int code = kOk;
    if (sub == s_sim) code = cmd_simulate(sim, common);
    else if (sub == s_fit) code = cmd_fit(fit, common);
    else if (sub == s_mc) code = cmd_montecarlo(mc, common);
    else if (sub == s_boot) code = cmd_bootstrap(boot, common);
    else code = cmd_scores(scores, common);
    write_config_echo(sub, common);
    return code;
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.kind()) << "): " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNumerical;
  }
}
