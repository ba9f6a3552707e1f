#pragma once

#include <cmath>
#include <limits>
#include <string>

#include <boost/math/special_functions/gamma.hpp>

#include "saem/errors.hpp"
#include "saem/numeric.hpp"

namespace saem {

enum class Family { exponential, weibull, gompertz, gamma, loglogistic };

inline std::string to_string(Family f) {
  switch (f) {
    case Family::exponential: return "exponential";
    case Family::weibull: return "weibull";
    case Family::gompertz: return "gompertz";
    case Family::gamma: return "gamma";
    case Family::loglogistic: return "loglogistic";
  }
  return "?";
}

inline Family family_from_string(const std::string& s) {
  if (s == "exponential") return Family::exponential;
  if (s == "weibull") return Family::weibull;
  if (s == "gompertz") return Family::gompertz;
  if (s == "gamma") return Family::gamma;
  if (s == "loglogistic" || s == "log-logistic") return Family::loglogistic;
  throw ConfigError("unknown hazard family '" + s + "'");
}

/// Parametric hazard with scale Te and shape gamma (ignored by the
/// exponential family). Te is the median for Gompertz.
struct Hazard {
  Family family = Family::exponential;
  double te = 1.0;
  double shape = 1.0;

  Hazard() = default;
  Hazard(Family f, double te_, double shape_ = 1.0) : family(f), te(te_), shape(shape_) {
    if (!(te > 0.0) || !(shape > 0.0)) throw ModelError("hazard parameters must be positive");
  }

  double gompertz_scale() const { return te / std::log1p(std::log(2.0) / shape); }

  double cumulative(double t) const {
    if (t <= 0.0) return 0.0;
    const double u = t / te;
    switch (family) {
      case Family::exponential: return u;
      case Family::weibull: return std::pow(u, shape);
      case Family::gompertz: return shape * std::expm1(t / gompertz_scale());
      case Family::gamma: return boost::math::gamma_p(shape, u);
      case Family::loglogistic: return std::log1p(std::pow(u, shape));
    }
    return 0.0;
  }

  double log_hazard(double t) const {
    const double u = t / te;
    switch (family) {
      case Family::exponential: return -std::log(te);
      case Family::weibull: return std::log(shape / te) + (shape - 1.0) * std::log(u);
      case Family::gompertz: {
        const double tp = gompertz_scale();
        return std::log(shape / tp) + t / tp;
      }
      case Family::gamma:
        return (shape - 1.0) * std::log(u) - u - std::lgamma(shape) - std::log(te);
      case Family::loglogistic:
        return std::log(shape / te) + (shape - 1.0) * std::log(u) - std::log1p(std::pow(u, shape));
    }
    return 0.0;
  }

  double hazard(double t) const { return std::exp(log_hazard(t)); }
  double survival(double t) const { return std::exp(-cumulative(t)); }

  /// t such that S(t) = p. Infinite when the cumulative hazard is bounded
  /// below -ln p (gamma family). Gamma is solved numerically.
  double inverse_survival(double p) const {
    if (!(p > 0.0) || p > 1.0) throw ModelError("inverse_survival needs p in (0,1]");
    const double target = -std::log(p);
    if (target == 0.0) return 0.0;
    switch (family) {
      case Family::exponential: return te * target;
      case Family::weibull: return te * std::pow(target, 1.0 / shape);
      case Family::gompertz: return gompertz_scale() * std::log1p(target / shape);
      case Family::loglogistic: return te * std::pow(std::expm1(target), 1.0 / shape);
      case Family::gamma: return invert_numerically(target);
    }
    return 0.0;
  }

  /// Closed-form inverse only; gamma has none.
  double inverse_survival_closed(double p) const {
    if (family == Family::gamma) throw UnsupportedError("the gamma family has no closed-form inverse survival");
    return inverse_survival(p);
  }

 private:
  double invert_numerically(double target) const {
    if (family == Family::gamma && target >= 1.0) return std::numeric_limits<double>::infinity();
    double hi = te;
    while (cumulative(hi) < target) {
      hi *= 2.0;
      if (!std::isfinite(hi)) return std::numeric_limits<double>::infinity();
    }
    return bisect([&](double t) { return cumulative(t) - target; }, 0.0, hi, 1e-10);
  }
};

}  // namespace saem
