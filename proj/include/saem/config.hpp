#pragma once

#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "saem/builtins.hpp"
#include "saem/dataset.hpp"
#include "saem/errors.hpp"
#include "saem/engine.hpp"
#include "saem/model.hpp"

namespace saem {

/// Contents of a model configuration file.
///
///   model = tte-weibull
///   group = id
///   predictors = time status cens
///   response = status
///   censoring = cens
///   covariates = sex ecog23
///   psi0 = 300 1.5
///   covariate_model
///   1 0
///   0 0
///   end
///
/// Matrix blocks: covariance, covariate_model (covariates x parameters),
/// omega_init. Any other key is kept as an estimation option.
struct ModelConfig {
  std::string model;
  Schema schema;
  std::optional<Eigen::VectorXd> psi0;
  std::vector<Transform> transforms;
  std::optional<ErrorKind> error;
  std::optional<Eigen::Vector2d> sigma0;
  std::optional<Eigen::MatrixXi> covariate_model;
  std::optional<Eigen::MatrixXi> covariance;
  std::optional<Eigen::MatrixXd> omega_init;
  std::vector<std::string> impute_median;
  std::map<std::string, std::string> options;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> words(const std::string& s) {
  std::vector<std::string> out;
  std::string w;
  std::istringstream is(s);
  while (is >> w) {
    for (auto& c : w)
      if (c == ',') c = ' ';
    std::istringstream ws(w);
    std::string part;
    while (ws >> part) out.push_back(part);
  }
  return out;
}

inline std::vector<double> numbers(const std::string& s, const std::string& key) {
  std::vector<double> out;
  for (const auto& w : words(s)) {
    try {
      std::size_t pos = 0;
      out.push_back(std::stod(w, &pos));
      if (pos != w.size()) throw std::invalid_argument(w);
    } catch (...) {
      throw ConfigError("'" + key + "': '" + w + "' is not a number");
    }
  }
  return out;
}

inline Eigen::MatrixXd to_matrix(const std::vector<std::vector<double>>& rows, const std::string& key) {
  if (rows.empty()) return {};
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != rows[0].size()) throw ConfigError("block '" + key + "' has ragged rows");
    for (std::size_t c = 0; c < rows[r].size(); ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  }
  return m;
}

inline Eigen::MatrixXi to_pattern(const Eigen::MatrixXd& m, const std::string& key) {
  Eigen::MatrixXi out = m.cast<int>();
  if ((out.array() != 0 && out.array() != 1).any() || (out.cast<double>() - m).norm() > 0)
    throw ConfigError("block '" + key + "' must contain only 0 and 1");
  return out;
}

}  // namespace detail

inline ModelConfig parse_config(std::istream& in) {
  ModelConfig cfg;
  std::string line;
  std::string block;
  std::vector<std::vector<double>> rows;
  int lineno = 0;
  auto close_block = [&]() {
    const Eigen::MatrixXd m = detail::to_matrix(rows, block);
    if (block == "covariance") cfg.covariance = detail::to_pattern(m, block);
    else if (block == "covariate_model") cfg.covariate_model = detail::to_pattern(m, block);
    else cfg.omega_init = m;
    block.clear();
    rows.clear();
  };
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (!block.empty()) {
      if (line == "end") close_block();
      else rows.push_back(detail::numbers(line, block));
      continue;
    }
    if (line == "covariance" || line == "covariate_model" || line == "omega_init") {
      block = line;
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string val = detail::trim(line.substr(eq + 1));
    if (key == "model") cfg.model = val;
    else if (key == "group") cfg.schema.group = val;
    else if (key == "time") cfg.schema.time = val;
    else if (key == "predictors") cfg.schema.predictors = detail::words(val);
    else if (key == "response") cfg.schema.response = val;
    else if (key == "covariates") cfg.schema.covariates = detail::words(val);
    else if (key == "censoring") cfg.schema.censoring = val;
    else if (key == "impute_median") cfg.impute_median = detail::words(val);
    else if (key == "psi0") {
      const auto v = detail::numbers(val, key);
      cfg.psi0 = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
    } else if (key == "transforms") {
      cfg.transforms.clear();
      for (const auto& w : detail::words(val)) cfg.transforms.push_back(transform_from_string(w));
    } else if (key == "error") cfg.error = error_from_string(val);
    else if (key == "sigma0") {
      const auto v = detail::numbers(val, key);
      if (v.empty() || v.size() > 2) throw ConfigError("sigma0 takes one or two values");
      cfg.sigma0 = Eigen::Vector2d(v[0], v.size() > 1 ? v[1] : 0.0);
    } else cfg.options[key] = val;
  }
  if (!block.empty()) throw ConfigError("block '" + block + "' is missing its 'end' line");
  if (cfg.model.empty()) throw ConfigError("config has no 'model' entry");
  return cfg;
}

inline ModelConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  return parse_config(in);
}

/// Schema defaults for each builtin, used where the config is silent.
inline Schema default_schema(const std::string& model) {
  Schema s;
  s.group = "id";
  const ModelSpec m = builtin_model(model);
  switch (m.outcome) {
    case OutcomeKind::tte:
      s.predictors = {"time", "status", "cens"};
      s.response = "status";
      s.censoring = "cens";
      break;
    case OutcomeKind::gaussian:
      s.predictors = model == "gaussian-1cpt" ? std::vector<std::string>{"dose", "time"} : std::vector<std::string>{"time"};
      s.time = "time";
      s.response = "y";
      break;
    default:
      s.predictors = {"time", "y"};
      s.response = "y";
  }
  return s;
}

inline Schema resolved_schema(const ModelConfig& cfg) {
  Schema s = default_schema(cfg.model);
  if (!cfg.schema.group.empty()) s.group = cfg.schema.group;
  if (!cfg.schema.predictors.empty()) s.predictors = cfg.schema.predictors;
  if (!cfg.schema.time.empty()) s.time = cfg.schema.time;
  if (!cfg.schema.response.empty()) s.response = cfg.schema.response;
  if (!cfg.schema.censoring.empty()) s.censoring = cfg.schema.censoring;
  s.covariates = cfg.schema.covariates;
  return s;
}

/// Builtin model with the config's overrides applied.
inline ModelSpec build_model(const ModelConfig& cfg) {
  ModelSpec m = builtin_model(cfg.model);
  const auto p = m.n_params();
  if (cfg.psi0) {
    if (cfg.psi0->size() != p) throw ConfigError("psi0 needs " + std::to_string(p) + " values");
    m.psi0 = *cfg.psi0;
  }
  if (!cfg.transforms.empty()) {
    if (static_cast<Eigen::Index>(cfg.transforms.size()) != p)
      throw ConfigError("transforms needs " + std::to_string(p) + " values");
    m.transforms = cfg.transforms;
  }
  if (cfg.error) {
    if (!m.is_gaussian()) throw ConfigError("error model only applies to gaussian outcomes");
    m.error = *cfg.error;
  }
  if (cfg.sigma0) m.sigma0 = *cfg.sigma0;
  if (cfg.covariance) m.omega_pattern = *cfg.covariance;
  if (cfg.omega_init) m.omega_init = *cfg.omega_init;
  m.covariates = cfg.schema.covariates;
  if (cfg.covariate_model) {
    m.covariate_model = *cfg.covariate_model;
  } else {
    m.covariate_model = Eigen::MatrixXi::Zero(static_cast<Eigen::Index>(m.covariates.size()), p);
  }
  m.validate();
  return m;
}

namespace detail {

inline int to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const int x = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("option '" + key + "' needs an integer, got '" + v + "'");
  }
}

inline double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("option '" + key + "' needs a number, got '" + v + "'");
  }
}

}  // namespace detail

/// Estimation options from the config's free keys; unknown keys are errors.
inline void apply_config_options(const std::map<std::string, std::string>& o, SaemOptions& opt) {
  for (const auto& [k, v] : o) {
    if (k == "k1") opt.k1 = detail::to_int(k, v);
    else if (k == "k2") opt.k2 = detail::to_int(k, v);
    else if (k == "chains") opt.chains = detail::to_int(k, v);
    else if (k == "burn_in") opt.burn_in = detail::to_int(k, v);
    else if (k == "tau") opt.tau = detail::to_double(k, v);
    else if (k == "anneal_iters") opt.anneal_iters = detail::to_int(k, v);
    else if (k == "seed") opt.seed = static_cast<std::uint64_t>(detail::to_double(k, v));
    else if (k == "target_accept") opt.target_accept = detail::to_double(k, v);
    else if (k == "newton_steps") opt.newton_steps = detail::to_int(k, v);
    else if (k == "kernel_iters") {
      std::stringstream ss(v);
      for (auto& x : opt.kernel_iters)
        if (!(ss >> x)) throw ConfigError("kernel_iters takes three integers");
    } else throw ConfigError("unknown config key '" + k + "'");
  }
}

}  // namespace saem
