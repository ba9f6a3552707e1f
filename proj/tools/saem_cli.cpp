// Command-line front end. Every subcommand writes CSV files or the JSON fit
// report; failures print one line "error: <kind>: <message>" and exit 1.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "saem.hpp"

namespace fs = std::filesystem;
using namespace saem;

namespace {

// Files written so far; removed if the run fails part way.
std::vector<fs::path> g_written;

std::ofstream open_out(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw Error("io", "cannot write '" + p.string() + "'");
  g_written.push_back(p);
  return out;
}

std::string one_line(std::string s) {
  for (auto& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

void remove_partial() {
  for (const auto& p : g_written) {
    std::error_code ec;
    fs::remove(p, ec);
  }
}

std::vector<double> parse_breaks(const std::string& s) {
  std::vector<double> v;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      v.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw ConfigError("bad break value '" + tok + "'");
    }
  }
  return v;
}

struct FitArgs {
  std::string data, model, config, out = "fit_out", ll = "is";
  std::vector<std::string> impute;
  std::uint64_t seed = 0;
  int chains = 0, k1 = -1, k2 = -1;
  long samples = 10000;
  bool hurdle = false;
};

void write_fit_outputs(const fs::path& dir, const Fit& fit, const DataSource& src, const Evaluation& ev) {
  {
    auto out = open_out(dir / "fit.json");
    out << fit_report(fit, src, &ev).dump(2) << '\n';
  }
  {
    auto out = open_out(dir / "traces.csv");
    write_traces_csv(out, fit);
  }
  {
    auto out = open_out(dir / "individual.csv");
    write_conditional_csv(out, fit, ev.conditional);
  }
}

Evaluation evaluate(const Fit& fit, const std::string& method, long samples, std::uint64_t seed, int threads) {
  ConditionalOptions copt;
  copt.seed = derive_seed(seed, "conditional", 0);
  copt.threads = threads;
  LikelihoodOptions lopt;
  lopt.samples = samples;
  lopt.seed = derive_seed(seed, "likelihood", 0);
  lopt.threads = threads;
  Evaluation ev;
  ev.conditional = estimate_conditional(fit, copt);
  if (method == "is") ev.ll = ll_importance_sampling(fit, ev.conditional, lopt);
  else if (method == "gq") ev.ll = ll_gauss_hermite(fit, ev.conditional, lopt);
  else if (method == "lin") ev.ll = ll_linearized(fit, ev.conditional);
  else throw ConfigError("likelihood method must be is, gq or lin");
  ev.criteria = compute_criteria(fit, ev.ll);
  return ev;
}

void print_summary(const Fit& fit, const Evaluation& ev) {
  for (const auto& r : fit.report()) std::cout << r.name << " = " << format_number(r.value) << '\n';
  std::cout << "ll(" << ev.ll.method << ") = " << format_number(ev.ll.total) << "  aic = " << format_number(ev.criteria.aic)
            << "  bic = " << format_number(ev.criteria.bic) << "  bicc = " << format_number(ev.criteria.bicc) << '\n';
}

void run_fit(const FitArgs& a, int threads) {
  ModelConfig cfg;
  if (!a.config.empty()) {
    cfg = load_config(a.config);
    if (!a.model.empty() && a.model != cfg.model)
      throw ConfigError("--model '" + a.model + "' disagrees with the config model '" + cfg.model + "'");
  } else {
    if (a.model.empty()) throw ConfigError("either --model or --config is required");
    cfg.model = a.model;
  }
  if (!is_builtin(cfg.model)) throw ConfigError("unknown model '" + cfg.model + "'");
  SaemOptions opt;
  apply_config_options(cfg.options, opt);
  if (a.seed) opt.seed = a.seed;
  if (a.chains > 0) opt.chains = a.chains;
  if (a.k1 >= 0) opt.k1 = a.k1;
  if (a.k2 >= 0) opt.k2 = a.k2;
  opt.threads = threads;
  opt.validate();

  DataSource src;
  src.path = a.data;
  src.schema = resolved_schema(cfg);
  src.impute_median = cfg.impute_median;
  for (const auto& c : a.impute) src.impute_median.push_back(c);

  auto fit_one = [&](const ModelSpec& m, DataSource s, const fs::path& dir) {
    const Dataset ds = load_source(s);
    for (const auto& w : ds.warnings()) std::cerr << "warning: " << w << '\n';
    m.validate_against(ds);
    const Fit fit = run_saem(m, ds, opt);
    const Evaluation ev = evaluate(fit, a.ll, a.samples, opt.seed, threads);
    write_fit_outputs(dir, fit, s, ev);
    std::cout << "[" << m.name << "]\n";
    print_summary(fit, ev);
  };

  if (!a.hurdle) {
    const ModelSpec m = build_model(cfg);
    src.outcome = m.outcome;
    fit_one(m, src, a.out);
    return;
  }
  // two independent fits: any-count indicator, then the positive counts
  if (cfg.model != "truncpoisson-lin") throw ConfigError("--hurdle expects the truncpoisson-lin model for the positive part");
  const ModelSpec count_model = build_model(cfg);
  ModelConfig bcfg = cfg;
  bcfg.model = "binary-logistic";
  bcfg.psi0.reset();
  bcfg.transforms.clear();
  bcfg.covariance.reset();
  bcfg.omega_init.reset();
  const ModelSpec bin_model = build_model(bcfg);
  DataSource sb = src, sp = src;
  sb.outcome = OutcomeKind::binary;
  sb.derive = "hurdle-binary";
  sp.outcome = OutcomeKind::count;
  sp.derive = "hurdle-positive";
  fit_one(bin_model, sb, fs::path(a.out) / "binary");
  fit_one(count_model, sp, fs::path(a.out) / "positive");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SAEM estimation of nonlinear mixed-effects models"};
  app.require_subcommand(1);
  app.fallthrough();
  int threads = default_threads();
  app.add_option("--threads", threads, "worker threads (default: SAEM_THREADS or 1)")->check(CLI::PositiveNumber);

  FitArgs fa;
  auto* fit = app.add_subcommand("fit", "fit a model and write fit.json, traces.csv, individual.csv");
  fit->add_option("--data", fa.data, "CSV data file")->required()->check(CLI::ExistingFile);
  fit->add_option("--model", fa.model, "builtin model name");
  fit->add_option("--config", fa.config, "model configuration file")->check(CLI::ExistingFile);
  fit->add_option("--seed", fa.seed, "master seed");
  fit->add_option("--chains", fa.chains, "chains per subject");
  fit->add_option("--k1", fa.k1, "exploration iterations");
  fit->add_option("--k2", fa.k2, "smoothing iterations");
  fit->add_option("--ll", fa.ll, "likelihood method: is, gq or lin")->check(CLI::IsMember({"is", "gq", "lin"}));
  fit->add_option("--samples", fa.samples, "importance-sampling draws per subject");
  fit->add_option("--impute-median", fa.impute, "covariates whose missing values take the median")->delimiter(',');
  fit->add_flag("--hurdle", fa.hurdle, "fit a hurdle model as two separate models");
  fit->add_option("--out", fa.out, "output directory");

  std::string fit_path, out_path, method = "case", stratify, breaks, statistic = "proportion", outcome;
  int nsim = 100, B = 200;
  std::uint64_t seed = 123456;
  bool from_estimates = false;

  auto* sim = app.add_subcommand("simulate", "simulate replicate datasets from a fit report");
  sim->add_option("--fit", fit_path, "fit report (fit.json)")->required()->check(CLI::ExistingFile);
  sim->add_option("--nsim", nsim, "number of replicates")->check(CLI::PositiveNumber);
  sim->add_option("--seed", seed, "seed");
  sim->add_option("--out", out_path, "output CSV")->required();

  auto* vpc = app.add_subcommand("vpc", "visual predictive check bands");
  vpc->add_option("--fit", fit_path, "fit report (fit.json)")->required()->check(CLI::ExistingFile);
  vpc->add_option("--nsim", nsim, "number of replicates")->check(CLI::PositiveNumber);
  vpc->add_option("--seed", seed, "seed");
  vpc->add_option("--stratify", stratify, "covariate to stratify by");
  vpc->add_option("--breaks", breaks, "comma-separated category breaks");
  vpc->add_option("--statistic", statistic, "proportion or median")->check(CLI::IsMember({"proportion", "median"}));
  vpc->add_option("--outcome", outcome, "expected outcome kind (checked against the fit)");
  vpc->add_option("--out", out_path, "output CSV")->required();

  auto* boot = app.add_subcommand("bootstrap", "standard errors by bootstrap or linearised information");
  boot->add_option("--fit", fit_path, "fit report (fit.json)")->required()->check(CLI::ExistingFile);
  boot->add_option("--method", method, "case, conditional or fim")->check(CLI::IsMember({"case", "conditional", "fim"}));
  boot->add_option("--B", B, "replicates")->check(CLI::PositiveNumber);
  boot->add_option("--seed", seed, "seed");
  boot->add_flag("--start-from-estimates", from_estimates, "start replicate fits at the estimates");
  boot->add_option("--out", out_path, "output directory")->required();

  std::string direction = "both";
  std::vector<std::string> candidates;
  auto* step = app.add_subcommand("stepwise", "stepwise covariate and variability selection by BICc");
  step->add_option("--fit", fit_path, "fit report of the starting model")->required()->check(CLI::ExistingFile);
  step->add_option("--candidates", candidates, "candidate covariates")->delimiter(',')->required();
  step->add_option("--direction", direction, "forward, backward or both")->check(CLI::IsMember({"forward", "backward", "both"}));
  step->add_option("--seed", seed, "seed for conditional sampling and likelihood");
  step->add_option("--out", out_path, "output directory")->required();

  std::vector<std::string> fits;
  auto* cmp = app.add_subcommand("compare", "print a criterion table for several fit reports");
  cmp->add_option("fits", fits, "fit reports")->required()->check(CLI::ExistingFile);

  int scenario = 1, replicates = 50, chains = 10, k1 = 300, k2 = 100;
  std::string init = "true";
  auto* ss = app.add_subcommand("simstudy", "simulation study on the binary longitudinal template");
  ss->add_option("--scenario", scenario, "1 or 2")->check(CLI::IsMember({1, 2}));
  ss->add_option("--replicates", replicates, "simulated datasets")->check(CLI::PositiveNumber);
  ss->add_option("--init", init, "true, pop, far or all")->check(CLI::IsMember({"true", "pop", "far", "all"}));
  ss->add_option("--chains", chains, "chains per subject");
  ss->add_option("--k1", k1, "exploration iterations");
  ss->add_option("--k2", k2, "smoothing iterations");
  ss->add_option("--seed", seed, "seed");
  ss->add_option("--out", out_path, "output directory")->required();

  std::string data_path, model_name, config_path;
  auto* ex = app.add_subcommand("explore", "observed proportions per time bin and category");
  ex->add_option("--data", data_path, "CSV data file")->required()->check(CLI::ExistingFile);
  ex->add_option("--model", model_name, "builtin model name (sets the default columns)");
  ex->add_option("--config", config_path, "model configuration file")->check(CLI::ExistingFile);
  ex->add_option("--stratify", stratify, "covariate to stratify by");
  ex->add_option("--breaks", breaks, "comma-separated category breaks");
  ex->add_option("--out", out_path, "output CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*fit) {
      run_fit(fa, threads);
    } else if (*sim) {
      const auto lf = load_fit_report(fit_path);
      const auto t = simulate_from_fit(lf.fit, nsim, seed, threads);
      auto out = open_out(out_path);
      write_simulations_csv(out, t, lf.fit.data);
    } else if (*vpc) {
      const auto lf = load_fit_report(fit_path);
      if (!outcome.empty() && outcome_from_string(outcome) != lf.fit.data.outcome())
        throw DesignError("--outcome " + outcome + " does not match the fitted outcome " + to_string(lf.fit.data.outcome()));
      VpcOptions vo;
      vo.stratify_by = stratify;
      vo.statistic = statistic;
      if (!breaks.empty()) vo.breaks = parse_breaks(breaks);
      std::vector<std::string> warnings;
      const auto t = simulate_from_fit(lf.fit, nsim, seed, threads);
      const auto bands = compute_vpc(t, lf.fit.data, vo, &warnings);
      for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
      auto out = open_out(out_path);
      write_vpc_csv(out, bands);
    } else if (*boot) {
      const auto lf = load_fit_report(fit_path);
      BootstrapOptions bo;
      bo.replicates = B;
      bo.seed = seed;
      bo.threads = threads;
      bo.start_from_estimates = from_estimates;
      UncertaintyResult r;
      if (method == "case") {
        r = case_bootstrap(lf.fit, bo);
      } else {
        ConditionalOptions co;
        co.seed = derive_seed(seed, "conditional", 0);
        co.threads = threads;
        const auto ce = estimate_conditional(lf.fit, co);
        r = method == "fim" ? fim_linearized(lf.fit, ce) : conditional_bootstrap(lf.fit, ce, bo);
      }
      for (const auto& w : r.warnings) std::cerr << "warning: " << w << '\n';
      {
        auto out = open_out(fs::path(out_path) / "uncertainty.csv");
        write_uncertainty_summary_csv(out, r);
      }
      if (!r.replicate_estimates.empty()) {
        auto out = open_out(fs::path(out_path) / "replicates.csv");
        write_replicates_csv(out, r);
      }
      std::cout << "parameter,estimate,se,rse\n";
      for (std::size_t k = 0; k < r.names.size(); ++k)
        std::cout << r.names[k] << ',' << format_number(r.estimate[k]) << ',' << format_number(r.se[k]) << ','
                  << format_number(r.rse[k]) << '\n';
    } else if (*step) {
      const auto lf = load_fit_report(fit_path);
      StepwiseOptions so;
      so.direction = direction_from_string(direction);
      so.likelihood.seed = derive_seed(seed, "likelihood", 0);
      so.likelihood.threads = threads;
      so.conditional.seed = derive_seed(seed, "conditional", 0);
      so.conditional.threads = threads;
      Fit base = lf.fit;
      base.options.threads = threads;
      const auto res = stepwise_select(base, candidates, so);
      {
        auto out = open_out(fs::path(out_path) / "steps.csv");
        write_step_log_csv(out, res.log);
      }
      write_fit_outputs(out_path, res.fit, lf.source, res.evaluation);
      for (const auto& r : res.log)
        if (r.accepted) std::cout << "step " << r.step << ": " << r.move << " (BICc " << format_number(r.bicc_after) << ")\n";
      print_summary(res.fit, res.evaluation);
    } else if (*cmp) {
      std::vector<CriterionReport> rows;
      for (const auto& f : fits) {
        std::ifstream in(f);
        ojson j;
        try {
          j = ojson::parse(in);
        } catch (const std::exception& e) {
          throw ConfigError("fit report '" + f + "' is not valid: " + e.what());
        }
        if (!j.contains("criteria")) throw ConfigError("fit report '" + f + "' has no likelihood or criteria");
        CriterionReport r;
        r.name = j.at("model").at("name").get<std::string>();
        r.method = j.at("likelihood").at("method").get<std::string>();
        r.ll = j.at("likelihood").at("value").get<double>();
        r.p_subject = j.at("criteria").at("p_subject").get<int>();
        r.p_observation = j.at("criteria").at("p_observation").get<int>();
        r.aic = j.at("criteria").at("aic").get<double>();
        r.bic = j.at("criteria").at("bic").get<double>();
        r.bicc = j.at("criteria").at("bicc").get<double>();
        rows.push_back(r);
      }
      write_criteria_table(std::cout, rows);
    } else if (*ss) {
      std::vector<SimStudyResult> results;
      const std::vector<std::string> inits =
          init == "all" ? std::vector<std::string>{"true", "pop", "far"} : std::vector<std::string>{init};
      for (const auto& in : inits) {
        auto sc = simstudy_scenario(scenario);
        sc.replicates = replicates;
        sc.init = in;
        sc.seed = seed;
        sc.options.chains = chains;
        sc.options.k1 = k1;
        sc.options.k2 = k2;
        results.push_back(run_simstudy(sc, threads));
        for (const auto& w : results.back().warnings) std::cerr << "warning: " << w << '\n';
      }
      {
        auto out = open_out(fs::path(out_path) / "metrics.csv");
        write_simstudy_metrics_csv(out, results);
      }
      {
        auto out = open_out(fs::path(out_path) / "estimates.csv");
        write_simstudy_estimates_csv(out, results);
      }
      write_simstudy_metrics_csv(std::cout, results);
    } else if (*ex) {
      ModelConfig cfg;
      if (!config_path.empty()) cfg = load_config(config_path);
      else if (!model_name.empty()) cfg.model = model_name;
      else throw ConfigError("either --model or --config is required");
      if (!is_builtin(cfg.model)) throw ConfigError("unknown model '" + cfg.model + "'");
      LoadOptions lo;
      lo.impute_median = cfg.impute_median;
      const Dataset ds = load_dataset(data_path, resolved_schema(cfg), builtin_model(cfg.model).outcome, lo);
      std::vector<std::string> warnings;
      std::optional<std::vector<double>> br;
      if (!breaks.empty()) br = parse_breaks(breaks);
      const auto rows = summarize_discrete(ds, br, stratify, &warnings);
      for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
      auto out = open_out(out_path);
      write_proportions_csv(out, rows);
    }
  } catch (const Error& e) {
    remove_partial();
    std::cerr << "error: " << e.kind() << ": " << one_line(e.what()) << '\n';
    return 1;
  } catch (const std::exception& e) {
    remove_partial();
    std::cerr << "error: internal: " << one_line(e.what()) << '\n';
    return 1;
  }
  return 0;
}
