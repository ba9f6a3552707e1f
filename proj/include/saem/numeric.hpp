#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace saem {

inline constexpr double kLogFloor = -745.0;
inline constexpr double kLog2Pi = 1.8378770664093454836;

/// 1/(1+exp(-x)) without overflow.
inline double inv_logit(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// log(1/(1+exp(-x))).
inline double log_inv_logit(double x) {
  if (x >= 0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

inline double floor_log(double v) { return std::isnan(v) ? kLogFloor : std::max(v, kLogFloor); }

inline double log_sum_exp(std::span<const double> v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

/// Sample quantile, linear interpolation between order statistics
/// (the usual "type 7" rule). `values` is copied and sorted.
inline double quantile(std::vector<double> values, double p) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

inline double mean_of(std::span<const double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// Sample standard deviation (n-1 denominator); 0 for fewer than two values.
inline double sd_of(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

/// Projects a symmetric matrix onto the PSD cone by clipping eigenvalues.
/// Returns true when a repair was needed.
inline bool repair_psd(Eigen::MatrixXd& m, double floor = 1e-10) {
  if (m.rows() == 0) return false;
  m = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  if (es.eigenvalues().minCoeff() >= floor) return false;
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(floor);
  m = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  m = 0.5 * (m + m.transpose());
  return true;
}

/// Lower Cholesky factor of a PSD matrix; falls back to the eigen square root
/// when the matrix is only semi-definite.
inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal();
}

struct MinimizeResult {
  Eigen::VectorXd x;
  double value = 0.0;
  int evaluations = 0;
  bool converged = false;
};

/// Nelder–Mead simplex minimisation.
inline MinimizeResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& f,
                                  Eigen::VectorXd x0, Eigen::VectorXd step, double tol = 1e-8,
                                  int max_eval = 2000) {
  const auto n = x0.size();
  MinimizeResult res;
  if (n == 0) {
    res.x = x0;
    res.value = f(x0);
    res.evaluations = 1;
    res.converged = true;
    return res;
  }
  auto safe = [&](const Eigen::VectorXd& x) {
    const double v = f(x);
    ++res.evaluations;
    return std::isfinite(v) ? v : std::numeric_limits<double>::max();
  };
  std::vector<Eigen::VectorXd> pts(n + 1, x0);
  std::vector<double> vals(n + 1);
  for (Eigen::Index i = 0; i < n; ++i) pts[i + 1](i) += step(i);
  for (Eigen::Index i = 0; i <= n; ++i) vals[i] = safe(pts[i]);
  std::vector<Eigen::Index> order(n + 1);
  while (res.evaluations < max_eval) {
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return vals[a] < vals[b]; });
    const auto best = order.front(), worst = order.back(), second = order[n - 1];
    double spread = 0.0;
    for (Eigen::Index i = 0; i <= n; ++i)
      spread = std::max(spread, (pts[i] - pts[best]).cwiseAbs().maxCoeff());
    if (std::abs(vals[worst] - vals[best]) <= tol * (std::abs(vals[best]) + tol) && spread <= std::sqrt(tol)) {
      res.converged = true;
      break;
    }
    if (spread < 1e-14) {
      res.converged = true;
      break;
    }
    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
    for (Eigen::Index i = 0; i <= n; ++i)
      if (i != worst) centroid += pts[i];
    centroid /= static_cast<double>(n);
    const Eigen::VectorXd xr = centroid + (centroid - pts[worst]);
    const double fr = safe(xr);
    if (fr < vals[best]) {
      const Eigen::VectorXd xe = centroid + 2.0 * (centroid - pts[worst]);
      const double fe = safe(xe);
      if (fe < fr) {
        pts[worst] = xe;
        vals[worst] = fe;
      } else {
        pts[worst] = xr;
        vals[worst] = fr;
      }
    } else if (fr < vals[second]) {
      pts[worst] = xr;
      vals[worst] = fr;
    } else {
      const bool outside = fr < vals[worst];
      const Eigen::VectorXd xc =
          outside ? Eigen::VectorXd(centroid + 0.5 * (xr - centroid))
                  : Eigen::VectorXd(centroid + 0.5 * (pts[worst] - centroid));
      const double fc = safe(xc);
      if (fc < (outside ? fr : vals[worst])) {
        pts[worst] = xc;
        vals[worst] = fc;
      } else {
        for (Eigen::Index i = 0; i <= n; ++i) {
          if (i == best) continue;
          pts[i] = pts[best] + 0.5 * (pts[i] - pts[best]);
          vals[i] = safe(pts[i]);
        }
      }
    }
  }
  const auto it = std::min_element(vals.begin(), vals.end());
  res.x = pts[static_cast<std::size_t>(it - vals.begin())];
  res.value = *it;
  return res;
}

/// Maximises a smooth function with damped Newton steps using central
/// finite-difference derivatives. Falls back to a gradient step when the
/// Hessian is not negative definite.
inline MinimizeResult newton_maximize(const std::function<double(const Eigen::VectorXd&)>& f,
                                      Eigen::VectorXd x, int max_steps = 3, double max_step = 2.0) {
  MinimizeResult res;
  const auto n = x.size();
  double fx = f(x);
  ++res.evaluations;
  for (int it = 0; it < max_steps && n > 0; ++it) {
    Eigen::VectorXd h(n), g(n), fp(n), fm(n);
    Eigen::MatrixXd H(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      h(i) = 1e-4 * std::max(1.0, std::abs(x(i)));
      Eigen::VectorXd xp = x, xm = x;
      xp(i) += h(i);
      xm(i) -= h(i);
      fp(i) = f(xp);
      fm(i) = f(xm);
      res.evaluations += 2;
      g(i) = (fp(i) - fm(i)) / (2 * h(i));
      H(i, i) = (fp(i) - 2 * fx + fm(i)) / (h(i) * h(i));
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = i + 1; j < n; ++j) {
        Eigen::VectorXd a = x, b = x, c = x, d = x;
        a(i) += h(i), a(j) += h(j);
        b(i) += h(i), b(j) -= h(j);
        c(i) -= h(i), c(j) += h(j);
        d(i) -= h(i), d(j) -= h(j);
        H(i, j) = H(j, i) = (f(a) - f(b) - f(c) + f(d)) / (4 * h(i) * h(j));
        res.evaluations += 4;
      }
    }
    if (!g.allFinite() || !H.allFinite()) break;
    Eigen::VectorXd dir;
    Eigen::LLT<Eigen::MatrixXd> llt(-H);
    if (llt.info() == Eigen::Success) {
      dir = llt.solve(g);
    } else {
      const double gn = g.norm();
      if (gn == 0) break;
      dir = g / gn * std::min(max_step, 0.1 * std::max(1.0, x.norm()));
    }
    const double len = dir.cwiseAbs().maxCoeff();
    if (len > max_step) dir *= max_step / len;
    double t = 1.0;
    bool moved = false;
    for (int ls = 0; ls < 20; ++ls, t *= 0.5) {
      const Eigen::VectorXd xn = x + t * dir;
      const double fn = f(xn);
      ++res.evaluations;
      if (std::isfinite(fn) && fn >= fx) {
        x = xn;
        fx = fn;
        moved = true;
        break;
      }
    }
    if (!moved) break;
    if ((t * dir).cwiseAbs().maxCoeff() < 1e-9) {
      res.converged = true;
      break;
    }
  }
  res.x = x;
  res.value = fx;
  return res;
}

/// Compass (coordinate pattern) search maximising `f`; the step is halved
/// whenever no coordinate move improves, until it falls below `tol`.
inline MinimizeResult coordinate_maximize(const std::function<double(const Eigen::VectorXd&)>& f,
                                          Eigen::VectorXd x, Eigen::VectorXd step, double tol = 1e-8,
                                          int max_eval = 100000) {
  MinimizeResult res;
  double fx = f(x);
  res.evaluations = 1;
  const auto n = x.size();
  while (res.evaluations < max_eval) {
    bool improved = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      for (double sgn : {1.0, -1.0}) {
        Eigen::VectorXd y = x;
        y(i) += sgn * step(i);
        const double fy = f(y);
        ++res.evaluations;
        if (std::isfinite(fy) && fy > fx) {
          x = y;
          fx = fy;
          improved = true;
          break;
        }
      }
    }
    if (!improved) {
      step *= 0.5;
      if (step.size() == 0 || step.maxCoeff() < tol) {
        res.converged = true;
        break;
      }
    }
  }
  res.x = x;
  res.value = fx;
  return res;
}

/// Root of a monotone function on [lo, hi] by bisection.
inline double bisect(const std::function<double(double)>& g, double lo, double hi, double tol = 1e-10,
                     int max_iter = 400) {
  double glo = g(lo);
  for (int i = 0; i < max_iter && (hi - lo) > tol * std::max(1.0, std::abs(lo)); ++i) {
    const double mid = 0.5 * (lo + hi);
    const double gm = g(mid);
    if ((gm < 0) == (glo < 0)) {
      lo = mid;
      glo = gm;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

/// Gauss–Hermite nodes and weights for the weight function exp(-x^2),
/// by the Golub–Welsch eigenvalue method.
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> gauss_hermite(int n) {
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
  for (int i = 1; i < n; ++i) J(i, i - 1) = J(i - 1, i) = std::sqrt(i / 2.0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
  Eigen::VectorXd nodes = es.eigenvalues();
  Eigen::VectorXd w(n);
  const double sqrt_pi = std::sqrt(M_PI);
  for (int i = 0; i < n; ++i) w(i) = sqrt_pi * es.eigenvectors()(0, i) * es.eigenvectors()(0, i);
  return {nodes, w};
}

/// Kolmogorov–Smirnov distance between a sample and a continuous CDF.
/// Non-finite sample values count as mass beyond every finite point.
inline double ks_distance(std::vector<double> sample, const std::function<double(double)>& cdf) {
  std::sort(sample.begin(), sample.end());
  const double n = static_cast<double>(sample.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    if (!std::isfinite(sample[i])) break;
    const double F = cdf(sample[i]);
    d = std::max({d, std::abs(F - static_cast<double>(i) / n), std::abs(static_cast<double>(i + 1) / n - F)});
  }
  return d;
}

}  // namespace saem
