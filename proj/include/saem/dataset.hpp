#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "saem/errors.hpp"

namespace saem {

enum class OutcomeKind { gaussian, binary, categorical, count, tte };

inline std::string to_string(OutcomeKind k) {
  switch (k) {
    case OutcomeKind::gaussian: return "gaussian";
    case OutcomeKind::binary: return "binary";
    case OutcomeKind::categorical: return "categorical";
    case OutcomeKind::count: return "count";
    case OutcomeKind::tte: return "tte";
  }
  return "?";
}

inline OutcomeKind outcome_from_string(const std::string& s) {
  if (s == "gaussian" || s == "continuous") return OutcomeKind::gaussian;
  if (s == "binary") return OutcomeKind::binary;
  if (s == "categorical" || s == "ordinal") return OutcomeKind::categorical;
  if (s == "count") return OutcomeKind::count;
  if (s == "tte" || s == "event") return OutcomeKind::tte;
  throw ConfigError("unknown outcome kind '" + s + "'");
}

/// Column-name mapping for a long-format table.
struct Schema {
  std::string group;
  std::string time;  ///< primary predictor; defaults to the first predictor
  std::vector<std::string> predictors;
  std::string response;
  std::vector<std::string> covariates;
  std::string censoring;  ///< tte only; must also be listed among the predictors

  const std::string& time_column() const { return time.empty() ? predictors.front() : time; }
};

struct Subject {
  std::string id;
  Eigen::MatrixXd x;                ///< n_i x n_predictors, rows sorted by time
  Eigen::VectorXd y;                ///< response per row
  std::vector<double> covariates;   ///< subject-level, NaN when missing

  Eigen::Index n_rows() const { return x.rows(); }
};

struct LoadOptions {
  std::vector<std::string> impute_median;  ///< covariates whose missing values take the column median
};

/// Validated hierarchical data. Immutable once built.
class Dataset {
 public:
  Dataset() = default;

  /// Builds a dataset from subject records: sorts rows canonically and checks
  /// every structural invariant for the outcome kind.
  static Dataset from_subjects(Schema schema, OutcomeKind outcome, std::vector<Subject> subjects) {
    Dataset ds;
    ds.schema_ = std::move(schema);
    ds.outcome_ = outcome;
    ds.subjects_ = std::move(subjects);
    ds.resolve_columns();
    for (auto& s : ds.subjects_) ds.canonicalize(s);
    ds.validate();
    return ds;
  }

  const Schema& schema() const { return schema_; }
  OutcomeKind outcome() const { return outcome_; }
  const std::vector<Subject>& subjects() const { return subjects_; }
  const Subject& subject(std::size_t i) const { return subjects_.at(i); }
  std::size_t n_subjects() const { return subjects_.size(); }
  std::size_t n_observations() const {
    std::size_t n = 0;
    for (const auto& s : subjects_) n += static_cast<std::size_t>(s.n_rows());
    return n;
  }
  std::size_t n_predictors() const { return schema_.predictors.size(); }
  int time_column() const { return time_col_; }
  /// Index of the response among the predictors, or -1 (gaussian data).
  int response_predictor() const { return response_col_; }
  int censor_column() const { return censor_col_; }
  const std::vector<std::string>& warnings() const { return warnings_; }
  void add_warning(std::string w) { warnings_.push_back(std::move(w)); }

  int covariate_index(const std::string& name) const {
    const auto& c = schema_.covariates;
    const auto it = std::find(c.begin(), c.end(), name);
    return it == c.end() ? -1 : static_cast<int>(it - c.begin());
  }

  /// Copy with new responses; the predictor column holding the observation is
  /// updated alongside so the likelihood kernels see the new values.
  Dataset with_responses(const std::vector<Eigen::VectorXd>& responses) const {
    if (responses.size() != subjects_.size()) throw DesignError("response set does not match the subjects");
    Dataset out = *this;
    for (std::size_t i = 0; i < subjects_.size(); ++i) {
      auto& s = out.subjects_[i];
      if (responses[i].size() != s.n_rows()) throw DesignError("response length mismatch for subject " + s.id);
      s.y = responses[i];
      if (response_col_ >= 0) s.x.col(response_col_) = responses[i];
    }
    return out;
  }

  /// Dataset made of the given subjects (with repetition), relabelled 1..n.
  Dataset resample(const std::vector<std::size_t>& idx) const {
    Dataset out = *this;
    out.subjects_.clear();
    out.subjects_.reserve(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) {
      Subject s = subjects_.at(idx[k]);
      s.id = std::to_string(k + 1);
      out.subjects_.push_back(std::move(s));
    }
    return out;
  }

  /// Drops subjects whose value is missing for any of the named covariates.
  Dataset drop_missing_covariates(const std::vector<std::string>& names) const {
    Dataset out = *this;
    out.subjects_.clear();
    for (const auto& s : subjects_) {
      bool ok = true;
      for (const auto& n : names) {
        const int c = covariate_index(n);
        if (c >= 0 && std::isnan(s.covariates[static_cast<std::size_t>(c)])) ok = false;
      }
      if (ok) out.subjects_.push_back(s);
      else out.warnings_.push_back("subject " + s.id + " excluded: missing covariate value");
    }
    return out;
  }

  /// Copy restricted to the rows for which `keep(subject, row)` is true;
  /// subjects left without rows are dropped.
  template <typename Pred>
  Dataset filter_rows(Pred keep) const {
    Dataset out = *this;
    out.subjects_.clear();
    for (const auto& s : subjects_) {
      std::vector<Eigen::Index> rows;
      for (Eigen::Index r = 0; r < s.n_rows(); ++r)
        if (keep(s, r)) rows.push_back(r);
      if (rows.empty()) continue;
      Subject t = s;
      t.x.resize(static_cast<Eigen::Index>(rows.size()), s.x.cols());
      t.y.resize(static_cast<Eigen::Index>(rows.size()));
      for (std::size_t k = 0; k < rows.size(); ++k) {
        t.x.row(static_cast<Eigen::Index>(k)) = s.x.row(rows[k]);
        t.y(static_cast<Eigen::Index>(k)) = s.y(rows[k]);
      }
      out.subjects_.push_back(std::move(t));
    }
    return out;
  }

  /// Same subjects and rows with a different outcome tag (e.g. binarised counts).
  Dataset with_outcome(OutcomeKind k) const {
    Dataset out = *this;
    out.outcome_ = k;
    out.validate();
    return out;
  }

  bool operator==(const Dataset& o) const {
    if (outcome_ != o.outcome_ || subjects_.size() != o.subjects_.size()) return false;
    for (std::size_t i = 0; i < subjects_.size(); ++i) {
      const auto &a = subjects_[i], &b = o.subjects_[i];
      if (a.id != b.id || a.x != b.x || a.y != b.y) return false;
      if (a.covariates.size() != b.covariates.size()) return false;
      for (std::size_t c = 0; c < a.covariates.size(); ++c) {
        const double u = a.covariates[c], v = b.covariates[c];
        if (!(u == v || (std::isnan(u) && std::isnan(v)))) return false;
      }
    }
    return true;
  }

 private:
  Schema schema_;
  OutcomeKind outcome_ = OutcomeKind::gaussian;
  std::vector<Subject> subjects_;
  std::vector<std::string> warnings_;
  int time_col_ = 0;
  int response_col_ = -1;
  int censor_col_ = -1;

  int predictor_index(const std::string& name) const {
    const auto& p = schema_.predictors;
    const auto it = std::find(p.begin(), p.end(), name);
    return it == p.end() ? -1 : static_cast<int>(it - p.begin());
  }

  void resolve_columns() {
    if (schema_.predictors.empty()) throw SchemaError("at least one predictor column is required");
    time_col_ = predictor_index(schema_.time_column());
    if (time_col_ < 0) throw SchemaError("time column '" + schema_.time_column() + "' is not a predictor");
    response_col_ = predictor_index(schema_.response);
    censor_col_ = schema_.censoring.empty() ? -1 : predictor_index(schema_.censoring);
  }

  void canonicalize(Subject& s) const {
    const auto n = s.n_rows();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    const int tc = time_col_;
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
      if (s.x(a, tc) != s.x(b, tc)) return s.x(a, tc) < s.x(b, tc);
      for (Eigen::Index c = 0; c < s.x.cols(); ++c)
        if (s.x(a, c) != s.x(b, c)) return s.x(a, c) < s.x(b, c);
      return s.y(a) < s.y(b);
    });
    Eigen::MatrixXd x(n, s.x.cols());
    Eigen::VectorXd y(n);
    for (Eigen::Index k = 0; k < n; ++k) {
      x.row(k) = s.x.row(order[static_cast<std::size_t>(k)]);
      y(k) = s.y(order[static_cast<std::size_t>(k)]);
    }
    s.x = std::move(x);
    s.y = std::move(y);
  }

  void validate() const {
    const bool discrete = outcome_ == OutcomeKind::binary || outcome_ == OutcomeKind::categorical ||
                          outcome_ == OutcomeKind::count;
    if (discrete && response_col_ < 0)
      throw SchemaError("for " + to_string(outcome_) + " outcomes the response column '" + schema_.response +
                        "' must also be a predictor");
    if (outcome_ == OutcomeKind::tte && censor_col_ < 0)
      throw SchemaError("tte outcomes need a censoring column listed among the predictors");
    for (const auto& s : subjects_) {
      if (s.n_rows() == 0) throw ValidationError("subject " + s.id + " has no rows");
      if (s.covariates.size() != schema_.covariates.size())
        throw ValidationError("subject " + s.id + " has a covariate vector of the wrong length");
      if (outcome_ == OutcomeKind::tte) {
        if (s.x(0, time_col_) != 0.0) throw ValidationError("tte subject " + s.id + " lacks a time-0 row");
        for (Eigen::Index r = 0; r < s.n_rows(); ++r) {
          const double c = s.x(r, censor_col_);
          if (c != 0.0 && c != 1.0)
            throw ValidationError("censoring column must be 0/1 (subject " + s.id + ")");
        }
      }
      if (outcome_ == OutcomeKind::binary) {
        for (Eigen::Index r = 0; r < s.n_rows(); ++r)
          if (s.y(r) != 0.0 && s.y(r) != 1.0)
            throw ValidationError("binary response must be 0/1 (subject " + s.id + ")");
      }
    }
  }

  friend Dataset load_dataset(const std::string&, const Schema&, OutcomeKind, const LoadOptions&);
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  for (auto& f : out) {
    const auto b = f.find_first_not_of(" \t");
    const auto e = f.find_last_not_of(" \t");
    f = b == std::string::npos ? std::string() : f.substr(b, e - b + 1);
  }
  return out;
}

inline bool is_missing(const std::string& s) { return s.empty() || s == "NA" || s == "NaN" || s == "."; }

inline std::optional<double> parse_number(const std::string& s) {
  if (is_missing(s)) return std::nullopt;
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size() || !std::isfinite(v)) return std::nullopt;
    return v;
  } catch (...) {
    return std::nullopt;
  }
}

}  // namespace detail

/// Reads a comma-separated long-format table. Rows with a missing group,
/// predictor or response value are dropped and listed in `warnings()`.
inline Dataset load_dataset(const std::string& path, const Schema& schema, OutcomeKind outcome,
                            const LoadOptions& opts = {}) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open data file '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("data file '" + path + "' is empty");
  const auto header = detail::split_csv_line(line);
  auto col = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw SchemaError("missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t gcol = col(schema.group);
  std::vector<std::size_t> pcols;
  for (const auto& p : schema.predictors) pcols.push_back(col(p));
  const std::size_t ycol = col(schema.response);
  std::vector<std::size_t> ccols;
  for (const auto& c : schema.covariates) ccols.push_back(col(c));
  if (!schema.censoring.empty()) col(schema.censoring);

  struct RawSubject {
    std::vector<std::vector<double>> x;
    std::vector<double> y;
    std::vector<double> cov;
    bool cov_set = false;
  };
  std::vector<std::string> order;
  std::unordered_map<std::string, RawSubject> raw;
  std::vector<std::string> warnings;
  std::size_t rowno = 1;
  while (std::getline(in, line)) {
    ++rowno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto f = detail::split_csv_line(line);
    if (f.size() < header.size()) throw SchemaError("row " + std::to_string(rowno) + ": too few fields");
    const std::string& id = f[gcol];
    if (detail::is_missing(id)) {
      warnings.push_back("row " + std::to_string(rowno) + ": missing group id, row dropped");
      continue;
    }
    std::vector<double> x;
    bool bad = false;
    for (std::size_t k = 0; k < pcols.size(); ++k) {
      const auto v = detail::parse_number(f[pcols[k]]);
      if (!v) {
        if (!detail::is_missing(f[pcols[k]]))
          throw ValidationError("row " + std::to_string(rowno) + ": column '" + schema.predictors[k] +
                                "' is not numeric");
        warnings.push_back("row " + std::to_string(rowno) + ": missing value in '" + schema.predictors[k] +
                           "', row dropped");
        bad = true;
        break;
      }
      x.push_back(*v);
    }
    if (bad) continue;
    const auto y = detail::parse_number(f[ycol]);
    if (!y) {
      if (!detail::is_missing(f[ycol]))
        throw ValidationError("row " + std::to_string(rowno) + ": response is not numeric");
      warnings.push_back("row " + std::to_string(rowno) + ": missing response, row dropped");
      continue;
    }
    std::vector<double> cov;
    for (std::size_t k = 0; k < ccols.size(); ++k) {
      const auto v = detail::parse_number(f[ccols[k]]);
      if (!v && !detail::is_missing(f[ccols[k]]))
        throw ValidationError("row " + std::to_string(rowno) + ": covariate '" + schema.covariates[k] +
                              "' is not numeric");
      cov.push_back(v ? *v : std::numeric_limits<double>::quiet_NaN());
    }
    auto [it, inserted] = raw.try_emplace(id);
    if (inserted) order.push_back(id);
    auto& rs = it->second;
    if (!rs.cov_set) {
      rs.cov = cov;
      rs.cov_set = true;
    } else {
      for (std::size_t k = 0; k < cov.size(); ++k) {
        const double a = rs.cov[k], b = cov[k];
        if (std::isnan(a) && !std::isnan(b)) rs.cov[k] = b;
        else if (!std::isnan(a) && !std::isnan(b) && a != b)
          throw ValidationError("covariate '" + schema.covariates[k] + "' varies within subject " + id);
      }
    }
    rs.x.push_back(std::move(x));
    rs.y.push_back(*y);
  }

  std::vector<Subject> subjects;
  for (const auto& id : order) {
    const auto& rs = raw.at(id);
    Subject s;
    s.id = id;
    s.x.resize(static_cast<Eigen::Index>(rs.x.size()), static_cast<Eigen::Index>(pcols.size()));
    s.y.resize(static_cast<Eigen::Index>(rs.y.size()));
    for (std::size_t r = 0; r < rs.x.size(); ++r) {
      for (std::size_t c = 0; c < pcols.size(); ++c)
        s.x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rs.x[r][c];
      s.y(static_cast<Eigen::Index>(r)) = rs.y[r];
    }
    s.covariates = rs.cov;
    subjects.push_back(std::move(s));
  }

  for (const auto& name : opts.impute_median) {
    const auto it = std::find(schema.covariates.begin(), schema.covariates.end(), name);
    if (it == schema.covariates.end()) throw SchemaError("cannot impute '" + name + "': not a covariate");
    const auto k = static_cast<std::size_t>(it - schema.covariates.begin());
    std::vector<double> vals;
    for (const auto& s : subjects)
      if (!std::isnan(s.covariates[k])) vals.push_back(s.covariates[k]);
    if (vals.empty()) continue;
    std::sort(vals.begin(), vals.end());
    const std::size_t m = vals.size();
    const double med = m % 2 ? vals[m / 2] : 0.5 * (vals[m / 2 - 1] + vals[m / 2]);
    for (auto& s : subjects)
      if (std::isnan(s.covariates[k])) {
        s.covariates[k] = med;
        warnings.push_back("subject " + s.id + ": '" + name + "' imputed by the median");
      }
  }
  for (const auto& s : subjects)
    for (std::size_t k = 0; k < s.covariates.size(); ++k)
      if (std::isnan(s.covariates[k]))
        warnings.push_back("subject " + s.id + ": missing covariate '" + schema.covariates[k] + "'");

  Dataset ds = Dataset::from_subjects(schema, outcome, std::move(subjects));
  for (auto& w : warnings) ds.add_warning(std::move(w));
  return ds;
}

}  // namespace saem
