#pragma once

#include <cmath>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "saem/conditional.hpp"
#include "saem/engine.hpp"
#include "saem/likelihood.hpp"

namespace saem {

/// Parameter counts. Subject-level: fixed effects of parameters with a random
/// effect plus estimated covariance entries. Observation-level: everything
/// else, including one residual term per error parameter. Likelihood-kernel
/// models carry one observation-level term as well.
struct ParamCount {
  int subject_level = 0;
  int observation_level = 0;
  int total() const { return subject_level + observation_level; }
};

inline ParamCount count_parameters(const ModelSpec& m) {
  ParamCount pc;
  for (const auto& fe : m.fixed_layout()) (m.has_iiv(fe.param) ? pc.subject_level : pc.observation_level)++;
  for (Eigen::Index a = 0; a < m.n_params(); ++a)
    for (Eigen::Index b = a; b < m.n_params(); ++b)
      if (m.omega_pattern(a, b)) ++pc.subject_level;
  pc.observation_level += m.is_gaussian() ? error_param_count(m.error) : 1;
  return pc;
}

struct CriterionReport {
  std::string name;
  double ll = 0.0;
  std::string method;
  int p_subject = 0;
  int p_observation = 0;
  std::size_t n_subjects = 0;
  std::size_t n_observations = 0;
  double aic = 0.0;
  double bic = 0.0;
  double bicc = 0.0;
};

inline CriterionReport criteria_from(const std::string& name, double ll, const std::string& method, ParamCount pc,
                                     std::size_t n_subjects, std::size_t n_obs) {
  CriterionReport r;
  r.name = name;
  r.ll = ll;
  r.method = method;
  r.p_subject = pc.subject_level;
  r.p_observation = pc.observation_level;
  r.n_subjects = n_subjects;
  r.n_observations = n_obs;
  const double p = pc.total();
  r.aic = -2.0 * ll + 2.0 * p;
  r.bic = -2.0 * ll + p * std::log(static_cast<double>(n_subjects));
  r.bicc = -2.0 * ll + pc.subject_level * std::log(static_cast<double>(n_subjects)) +
           pc.observation_level * std::log(static_cast<double>(n_obs));
  return r;
}

inline CriterionReport compute_criteria(const Fit& fit, const LikelihoodEstimate& ll) {
  return criteria_from(fit.model.name, ll.total, ll.method, count_parameters(fit.model), fit.data.n_subjects(),
                       fit.data.n_observations());
}

inline void write_criteria_table(std::ostream& os, const std::vector<CriterionReport>& rows) {
  os << "model,method,ll,p_subject,p_observation,aic,bic,bicc\n";
  os.precision(10);
  for (const auto& r : rows)
    os << r.name << ',' << r.method << ',' << r.ll << ',' << r.p_subject << ',' << r.p_observation << ',' << r.aic << ','
       << r.bic << ',' << r.bicc << '\n';
}

/// Conditional estimates plus importance-sampling likelihood for a fit.
struct Evaluation {
  ConditionalEstimates conditional;
  LikelihoodEstimate ll;
  CriterionReport criteria;
};

inline Evaluation evaluate_fit(const Fit& fit, const LikelihoodOptions& lopt, const ConditionalOptions& copt) {
  Evaluation ev;
  ev.conditional = estimate_conditional(fit, copt);
  ev.ll = ll_importance_sampling(fit, ev.conditional, lopt);
  ev.criteria = compute_criteria(fit, ev.ll);
  return ev;
}

enum class Direction { forward, backward, both };

inline Direction direction_from_string(const std::string& s) {
  if (s == "forward") return Direction::forward;
  if (s == "backward") return Direction::backward;
  if (s == "both") return Direction::both;
  throw ConfigError("direction must be forward, backward or both");
}

struct Move {
  enum Kind { add_covariate, remove_covariate, add_iiv, remove_iiv } kind;
  int param;
  int covariate;  ///< index into the model's covariate list; -1 for IIV moves

  std::string describe(const ModelSpec& m) const {
    const auto& p = m.param_names[static_cast<std::size_t>(param)];
    switch (kind) {
      case add_covariate: return "add " + m.covariates[static_cast<std::size_t>(covariate)] + " on " + p;
      case remove_covariate: return "remove " + m.covariates[static_cast<std::size_t>(covariate)] + " from " + p;
      case add_iiv: return "add IIV on " + p;
      case remove_iiv: return "remove IIV on " + p;
    }
    return "?";
  }
};

inline ModelSpec apply_move(const ModelSpec& base, const Move& mv) {
  ModelSpec m = base;
  switch (mv.kind) {
    case Move::add_covariate: m.covariate_model(mv.covariate, mv.param) = 1; break;
    case Move::remove_covariate: m.covariate_model(mv.covariate, mv.param) = 0; break;
    case Move::add_iiv:
      m.omega_pattern(mv.param, mv.param) = 1;
      if (m.omega_init.size() && !(m.omega_init(mv.param, mv.param) > 0.0)) m.omega_init(mv.param, mv.param) = 1.0;
      break;
    case Move::remove_iiv:
      m.omega_pattern.row(mv.param).setZero();
      m.omega_pattern.col(mv.param).setZero();
      break;
  }
  return m;
}

/// Candidate moves in canonical (parameter, covariate) order; IIV toggles
/// come first for each parameter.
inline std::vector<Move> enumerate_moves(const ModelSpec& m, const std::vector<int>& candidates, Direction dir) {
  std::vector<Move> out;
  const bool fwd = dir != Direction::backward, bwd = dir != Direction::forward;
  const int n_iiv = static_cast<int>(m.iiv_params().size());
  for (Eigen::Index j = 0; j < m.n_params(); ++j) {
    if (m.has_iiv(j)) {
      if (bwd && n_iiv > 1) out.push_back({Move::remove_iiv, static_cast<int>(j), -1});
    } else if (fwd) {
      out.push_back({Move::add_iiv, static_cast<int>(j), -1});
    }
    for (int c : candidates) {
      if (m.covariate_model(c, j)) {
        if (bwd) out.push_back({Move::remove_covariate, static_cast<int>(j), c});
      } else if (fwd) {
        out.push_back({Move::add_covariate, static_cast<int>(j), c});
      }
    }
  }
  return out;
}

struct StepRecord {
  int step;
  std::string move;
  double bicc_before;
  double bicc_after;
  bool accepted;
  std::string note;
};

struct StepwiseOptions {
  Direction direction = Direction::both;
  LikelihoodOptions likelihood;
  ConditionalOptions conditional;
  int max_steps = 50;
};

struct StepwiseResult {
  ModelSpec model;
  Fit fit;
  Evaluation evaluation;
  std::vector<StepRecord> log;
};

/// Greedy search over covariate relations and random-effect variances scored
/// by BICc. Every candidate is refitted from the initial values with the
/// same seed, and every likelihood uses the same importance-sampling seed.
inline StepwiseResult stepwise_select(const Fit& base_fit, const std::vector<std::string>& candidate_covariates,
                                      const StepwiseOptions& opt) {
  ModelSpec model = base_fit.model;
  std::vector<int> cand;
  for (const auto& name : candidate_covariates) {
    if (base_fit.data.covariate_index(name) < 0) throw SchemaError("candidate covariate '" + name + "' is not in the dataset");
    auto it = std::find(model.covariates.begin(), model.covariates.end(), name);
    if (it == model.covariates.end()) {
      model.covariates.push_back(name);
      Eigen::MatrixXi cm = Eigen::MatrixXi::Zero(model.covariate_model.rows() + 1, model.n_params());
      if (model.covariate_model.rows()) cm.topRows(model.covariate_model.rows()) = model.covariate_model;
      model.covariate_model = cm;
      if (model.beta0.size()) {
        Eigen::MatrixXd b = Eigen::MatrixXd::Zero(cm.rows(), model.n_params());
        b.topRows(model.beta0.rows()) = model.beta0;
        model.beta0 = b;
      }
      it = model.covariates.end() - 1;
    }
    cand.push_back(static_cast<int>(it - model.covariates.begin()));
  }
  std::sort(cand.begin(), cand.end());
  cand.erase(std::unique(cand.begin(), cand.end()), cand.end());

  // all candidates are compared on the same subjects
  std::vector<std::string> needed = candidate_covariates;
  for (const auto& c : model.used_covariates()) needed.push_back(c);
  const Dataset data = base_fit.data.drop_missing_covariates(needed);

  StepwiseResult out;
  out.model = model;
  out.fit = run_saem(model, data, base_fit.options);
  out.evaluation = evaluate_fit(out.fit, opt.likelihood, opt.conditional);
  double current = out.evaluation.criteria.bicc;

  for (int step = 1; step <= opt.max_steps; ++step) {
    const auto moves = enumerate_moves(out.model, cand, opt.direction);
    if (moves.empty()) break;
    int best = -1;
    double best_val = current;
    Fit best_fit;
    Evaluation best_eval;
    for (std::size_t k = 0; k < moves.size(); ++k) {
      const ModelSpec trial = apply_move(out.model, moves[k]);
      const std::string desc = moves[k].describe(out.model);
      try {
        Fit f = run_saem(trial, data, base_fit.options);
        Evaluation ev = evaluate_fit(f, opt.likelihood, opt.conditional);
        const double v = ev.criteria.bicc;
        out.log.push_back({step, desc, current, v, false, ""});
        if (std::isfinite(v) && v < best_val) {
          best = static_cast<int>(k);
          best_val = v;
          best_fit = std::move(f);
          best_eval = std::move(ev);
        }
      } catch (const std::exception& e) {
        out.log.push_back({step, desc, current, std::numeric_limits<double>::quiet_NaN(), false,
                           std::string("refit failed: ") + e.what()});
      }
    }
    if (best < 0) break;
    const std::string desc = moves[static_cast<std::size_t>(best)].describe(out.model);
    for (auto& r : out.log)
      if (r.step == step && r.move == desc) r.accepted = true;
    out.model = apply_move(out.model, moves[static_cast<std::size_t>(best)]);
    out.fit = std::move(best_fit);
    out.evaluation = std::move(best_eval);
    current = best_val;
  }
  return out;
}

inline void write_step_log_csv(std::ostream& os, const std::vector<StepRecord>& log) {
  os << "step,move,bicc_before,bicc_after,accepted,note\n";
  os.precision(10);
  for (const auto& r : log)
    os << r.step << ",\"" << r.move << "\"," << r.bicc_before << ',' << r.bicc_after << ',' << (r.accepted ? 1 : 0)
       << ",\"" << r.note << "\"\n";
}

}  // namespace saem
