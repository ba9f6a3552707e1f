#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "saem/dataset.hpp"
#include "saem/numeric.hpp"

namespace saem {

struct ProportionSeries {
  std::string stratum;
  std::string bin;
  std::string category;
  double prop = 0.0;
  std::size_t n = 0;
};

inline std::string format_number(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

/// Time binning shared by observed and simulated data: one bin per distinct
/// time when there are at most 12, else 8 bins with equal counts.
class TimeBins {
 public:
  TimeBins() = default;
  explicit TimeBins(std::vector<double> times) {
    std::sort(times.begin(), times.end());
    std::vector<double> distinct = times;
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    if (distinct.size() <= 12) {
      exact_ = true;
      values_ = distinct;
      return;
    }
    exact_ = false;
    edges_.push_back(times.front());
    for (int k = 1; k < 8; ++k) edges_.push_back(quantile(times, k / 8.0));
    edges_.push_back(times.back());
    edges_.erase(std::unique(edges_.begin(), edges_.end()), edges_.end());
  }

  std::size_t size() const { return exact_ ? values_.size() : edges_.size() - 1; }

  int bin_of(double t) const {
    if (exact_) {
      const auto it = std::lower_bound(values_.begin(), values_.end(), t);
      if (it == values_.end() || *it != t) return -1;
      return static_cast<int>(it - values_.begin());
    }
    if (t < edges_.front() || t > edges_.back()) return -1;
    // right-closed intervals, the first one closed on both ends
    const auto it = std::lower_bound(edges_.begin() + 1, edges_.end(), t);
    return static_cast<int>(it - edges_.begin()) - 1;
  }

  std::string label(std::size_t b) const {
    if (exact_) return format_number(values_[b]);
    return (b == 0 ? "[" : "(") + format_number(edges_[b]) + "," + format_number(edges_[b + 1]) + "]";
  }

 private:
  bool exact_ = true;
  std::vector<double> values_;
  std::vector<double> edges_;
};

inline TimeBins time_bins_for(const Dataset& ds) {
  std::vector<double> t;
  for (const auto& s : ds.subjects())
    for (Eigen::Index r = 0; r < s.n_rows(); ++r) t.push_back(s.x(r, ds.time_column()));
  return TimeBins(std::move(t));
}

/// Response categories: explicit count breaks (y <= b0, (b0,b1], ..., > b_last)
/// or the sorted distinct observed values.
class Categories {
 public:
  Categories() = default;

  static Categories from_breaks(std::vector<double> breaks) {
    for (std::size_t k = 1; k < breaks.size(); ++k)
      if (!(breaks[k] > breaks[k - 1])) throw ValidationError("breaks must be strictly increasing");
    if (breaks.empty()) throw ValidationError("breaks must not be empty");
    Categories c;
    c.breaks_ = std::move(breaks);
    return c;
  }

  static Categories from_values(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    values.erase(std::unique(values.begin(), values.end()), values.end());
    Categories c;
    c.values_ = std::move(values);
    return c;
  }

  std::size_t size() const { return breaks_.empty() ? values_.size() : breaks_.size() + 1; }

  int index_of(double y) const {
    if (breaks_.empty()) {
      const auto it = std::lower_bound(values_.begin(), values_.end(), y);
      if (it == values_.end() || *it != y) return -1;
      return static_cast<int>(it - values_.begin());
    }
    return static_cast<int>(std::lower_bound(breaks_.begin(), breaks_.end(), y) - breaks_.begin());
  }

  std::string label(std::size_t k) const {
    if (breaks_.empty()) return format_number(values_[k]);
    if (k == 0) return "<=" + format_number(breaks_[0]);
    if (k == breaks_.size()) return ">" + format_number(breaks_.back());
    if (breaks_[k] - breaks_[k - 1] == 1.0 && breaks_[k] == std::floor(breaks_[k])) return format_number(breaks_[k]);
    return "(" + format_number(breaks_[k - 1]) + "," + format_number(breaks_[k]) + "]";
  }

 private:
  std::vector<double> breaks_;
  std::vector<double> values_;
};

inline Categories categories_for(const Dataset& ds, const std::optional<std::vector<double>>& breaks) {
  if (breaks) return Categories::from_breaks(*breaks);
  if (ds.outcome() == OutcomeKind::binary) return Categories::from_values({0.0, 1.0});
  std::vector<double> v;
  for (const auto& s : ds.subjects())
    for (Eigen::Index r = 0; r < s.n_rows(); ++r) v.push_back(s.y(r));
  return Categories::from_values(std::move(v));
}

/// Stratum label per subject; empty optional when the covariate is missing.
inline std::vector<std::optional<std::string>> strata_for(const Dataset& ds, const std::string& stratify_by) {
  std::vector<std::optional<std::string>> out(ds.n_subjects());
  if (stratify_by.empty()) {
    for (auto& o : out) o = std::string("all");
    return out;
  }
  const int c = ds.covariate_index(stratify_by);
  if (c < 0) throw SchemaError("stratify_by '" + stratify_by + "' is not a covariate");
  for (std::size_t i = 0; i < ds.n_subjects(); ++i) {
    const double v = ds.subject(i).covariates[static_cast<std::size_t>(c)];
    if (!std::isnan(v)) out[i] = stratify_by + "=" + format_number(v);
  }
  return out;
}

inline std::vector<std::string> stratum_labels(const std::vector<std::optional<std::string>>& strata) {
  std::set<std::string> s;
  for (const auto& o : strata)
    if (o) s.insert(*o);
  return {s.begin(), s.end()};
}

/// Product-limit survival estimate. `times` holds only the distinct event
/// times; `surv[k]` is S just after `times[k]`.
struct KaplanMeier {
  std::vector<double> times;
  std::vector<double> surv;
  std::vector<std::size_t> at_risk;
  std::vector<std::size_t> events;

  double at(double t) const {
    const auto it = std::upper_bound(times.begin(), times.end(), t);
    if (it == times.begin()) return 1.0;
    return surv[static_cast<std::size_t>(it - times.begin()) - 1];
  }
};

inline KaplanMeier kaplan_meier(const std::vector<double>& time, const std::vector<int>& event) {
  std::vector<std::size_t> order(time.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return time[a] < time[b]; });
  KaplanMeier km;
  double s = 1.0;
  std::size_t risk = time.size();
  std::size_t k = 0;
  while (k < order.size()) {
    const double t = time[order[k]];
    std::size_t d = 0, leaving = 0;
    while (k < order.size() && time[order[k]] == t) {
      d += event[order[k]] ? 1 : 0;
      ++leaving;
      ++k;
    }
    if (d > 0) {
      s *= 1.0 - static_cast<double>(d) / static_cast<double>(risk);
      km.times.push_back(t);
      km.surv.push_back(s);
      km.at_risk.push_back(risk);
      km.events.push_back(d);
    }
    risk -= leaving;
  }
  return km;
}

/// Follow-up time and event flag per subject from its last row.
inline void tte_outcomes(const Dataset& ds, std::vector<double>& time, std::vector<int>& event) {
  time.clear();
  event.clear();
  for (const auto& s : ds.subjects()) {
    const auto r = s.n_rows() - 1;
    const double t = s.x(r, ds.time_column());
    const bool censored = s.x(r, ds.censor_column()) != 0.0;
    time.push_back(t);
    event.push_back(r > 0 && !censored ? 1 : 0);
  }
}

/// Per time bin and stratum, the proportion of each response category; for
/// tte data the Kaplan-Meier estimate ("event-free" = S, "event" = 1 - S).
inline std::vector<ProportionSeries> summarize_discrete(const Dataset& ds,
                                                        const std::optional<std::vector<double>>& breaks = {},
                                                        const std::string& stratify_by = "",
                                                        std::vector<std::string>* warnings = nullptr) {
  if (ds.outcome() == OutcomeKind::gaussian)
    throw UnsupportedError("proportion summaries need a discrete or tte outcome");
  const auto strata = strata_for(ds, stratify_by);
  const auto labels = stratum_labels(strata);
  std::vector<ProportionSeries> out;

  if (ds.outcome() == OutcomeKind::tte) {
    std::vector<double> time;
    std::vector<int> event;
    tte_outcomes(ds, time, event);
    for (const auto& lab : labels) {
      std::vector<double> t;
      std::vector<int> e;
      for (std::size_t i = 0; i < ds.n_subjects(); ++i)
        if (strata[i] == lab) {
          t.push_back(time[i]);
          e.push_back(event[i]);
        }
      const auto km = kaplan_meier(t, e);
      out.push_back({lab, "0", "event-free", 1.0, t.size()});
      out.push_back({lab, "0", "event", 0.0, t.size()});
      for (std::size_t k = 0; k < km.times.size(); ++k) {
        const auto bin = format_number(km.times[k]);
        out.push_back({lab, bin, "event-free", km.surv[k], km.at_risk[k]});
        out.push_back({lab, bin, "event", 1.0 - km.surv[k], km.at_risk[k]});
      }
    }
    return out;
  }

  const auto bins = time_bins_for(ds);
  const auto cats = categories_for(ds, breaks);
  for (const auto& lab : labels) {
    std::vector<std::vector<std::size_t>> counts(bins.size(), std::vector<std::size_t>(cats.size(), 0));
    for (std::size_t i = 0; i < ds.n_subjects(); ++i) {
      if (strata[i] != lab) continue;
      const auto& s = ds.subject(i);
      for (Eigen::Index r = 0; r < s.n_rows(); ++r) {
        const int b = bins.bin_of(s.x(r, ds.time_column()));
        const int c = cats.index_of(s.y(r));
        if (b >= 0 && c >= 0) ++counts[static_cast<std::size_t>(b)][static_cast<std::size_t>(c)];
      }
    }
    for (std::size_t b = 0; b < bins.size(); ++b) {
      std::size_t n = 0;
      for (auto c : counts[b]) n += c;
      if (n == 0) {
        if (warnings) warnings->push_back("stratum " + lab + " has no rows in bin " + bins.label(b));
        continue;
      }
      for (std::size_t c = 0; c < cats.size(); ++c)
        out.push_back({lab, bins.label(b), cats.label(c),
                       static_cast<double>(counts[b][c]) / static_cast<double>(n), n});
    }
  }
  return out;
}

inline void write_proportions_csv(std::ostream& os, const std::vector<ProportionSeries>& rows) {
  os << "stratum,bin,category,prop,n\n";
  os.precision(12);
  for (const auto& r : rows)
    os << '"' << r.stratum << "\",\"" << r.bin << "\",\"" << r.category << "\"," << r.prop << ',' << r.n << '\n';
}

}  // namespace saem
