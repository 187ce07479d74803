#pragma once

// Weighted Levenberg–Marquardt fit of an exponentially damped cosine
//   y(τ) = offset + amplitude·exp(−τ/damping_time)·cos(2πτ/period + phase)
// to a degree-of-correlation curve, and conversion of the beat period to a
// fine-structure splitting.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "correlator.hpp"
#include "units.hpp"

namespace qdspin {

class FitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct BeatFit {
  // Parameter order in `covariance`: period, damping_time, amplitude, phase, offset.
  double period = 0.0;        // ns
  double damping_time = 0.0;  // ns, +inf for an undamped fit
  double amplitude = 0.0;     // >= 0
  double phase = 0.0;         // rad, (−π, π]
  double offset = 0.0;
  Eigen::Matrix<double, 5, 5> covariance = Eigen::Matrix<double, 5, 5>::Zero();

  double chi2 = 0.0;
  std::size_t points = 0;
  std::size_t dof = 0;
  int iterations = 0;
  bool period_constrained = false;
  std::optional<double> fss;  // μeV
  std::optional<double> fss_err;

  double period_err() const { return std::sqrt(covariance(0, 0)); }
  double damping_time_err() const { return std::sqrt(covariance(1, 1)); }
  double amplitude_err() const { return std::sqrt(covariance(2, 2)); }
  double phase_err() const { return std::sqrt(covariance(3, 3)); }
  double offset_err() const { return std::sqrt(covariance(4, 4)); }
  double reduced_chi2() const { return dof > 0 ? chi2 / static_cast<double>(dof) : 0.0; }

  double operator()(double tau) const {
    const double env = std::isinf(damping_time) ? 1.0 : std::exp(-tau / damping_time);
    return offset + amplitude * env * std::cos(kTwoPi * tau / period + phase);
  }
};

struct FitOptions {
  double fit_start = 0.1;  // ns; skips the charging turn-on transient
  double fit_end = std::numeric_limits<double>::infinity();
  int max_iterations = 500;
  int seed_periods = 64;
  double max_relative_period_error = 0.5;  // above this no fss is reported
};

inline std::pair<double, double> fss_from_period(double period, double period_err) {
  if (!(period > 0.0)) throw std::domain_error("period must be > 0");
  const double fss = kPlanck / period;
  return {fss, fss * period_err / period};
}

inline double wrap_phase(double phi) {
  constexpr double pi = std::numbers::pi;
  phi = std::fmod(phi + pi, 2.0 * pi);
  if (phi < 0.0) phi += 2.0 * pi;
  phi -= pi;
  return phi == -pi ? pi : phi;
}

namespace detail {

// Internal parameters: offset, amplitude, decay rate (1/ns), frequency
// (1/ns), phase.
using Params = Eigen::Matrix<double, 5, 1>;

struct FitData {
  std::vector<double> x, y, w;  // w = 1/σ²
};

inline double model(const Params& p, double x) {
  return p(0) + p(1) * std::exp(-p(2) * x) * std::cos(kTwoPi * p(3) * x + p(4));
}

inline void jacobian_row(const Params& p, double x, Eigen::Matrix<double, 1, 5>& row) {
  const double e = std::exp(-p(2) * x);
  const double arg = kTwoPi * p(3) * x + p(4);
  const double c = std::cos(arg), s = std::sin(arg);
  row(0) = 1.0;
  row(1) = e * c;
  row(2) = -x * p(1) * e * c;
  row(3) = -p(1) * e * s * kTwoPi * x;
  row(4) = -p(1) * e * s;
}

inline double chi2(const FitData& d, const Params& p) {
  double c = 0.0;
  for (std::size_t i = 0; i < d.x.size(); ++i) {
    const double r = d.y[i] - model(p, d.x[i]);
    c += d.w[i] * r * r;
  }
  return c;
}

inline void normal_equations(const FitData& d, const Params& p, Eigen::Matrix<double, 5, 5>& jtj,
                             Params& jtr) {
  jtj.setZero();
  jtr.setZero();
  Eigen::Matrix<double, 1, 5> row;
  for (std::size_t i = 0; i < d.x.size(); ++i) {
    jacobian_row(p, d.x[i], row);
    const double r = d.y[i] - model(p, d.x[i]);
    jtj.noalias() += d.w[i] * row.transpose() * row;
    jtr.noalias() += d.w[i] * r * row.transpose();
  }
}

struct LmResult {
  Params p;
  double chi2 = 0.0;
  int iterations = 0;
  bool converged = false;
};

inline LmResult levenberg_marquardt(const FitData& d, Params p, int max_iter) {
  LmResult res;
  double lambda = 1e-3;
  double c = chi2(d, p);
  Eigen::Matrix<double, 5, 5> jtj;
  Params jtr;
  for (int it = 1; it <= max_iter; ++it) {
    res.iterations = it;
    normal_equations(d, p, jtj, jtr);
    bool improved = false;
    for (int tries = 0; tries < 40; ++tries) {
      Eigen::Matrix<double, 5, 5> a = jtj;
      for (int k = 0; k < 5; ++k) a(k, k) += lambda * std::max(jtj(k, k), 1e-12);
      const Params step = a.ldlt().solve(jtr);
      if (!step.allFinite()) {
        lambda *= 10.0;
        continue;
      }
      const Params trial = p + step;
      const double ct = chi2(d, trial);
      if (std::isfinite(ct) && ct <= c) {
        const double drop = c - ct;
        const double rel_step = (step.cwiseAbs().array() / (p.cwiseAbs().array() + 1e-12)).maxCoeff();
        p = trial;
        c = ct;
        lambda = std::max(lambda * 0.3, 1e-15);
        improved = true;
        if (drop <= 1e-14 * std::max(c, 1e-300) || rel_step < 1e-13 || c < 1e-28) {
          res.converged = true;
        }
        break;
      }
      lambda *= 10.0;
    }
    if (!improved) {
      // No downhill step at any damping: we are at a (numerical) minimum.
      res.converged = true;
    }
    if (res.converged) break;
  }
  res.p = p;
  res.chi2 = c;
  return res;
}

}  // namespace detail

/// Fits the damped cosine to the defined points of `curve` with τ in
/// [fit_start, fit_end]. Without `seed` the period is initialized from the
/// strongest of 64 log-spaced trial periods between 4 bin widths and the
/// fitted span / 1.5.
inline BeatFit fit_damped_cosine(const Curve& curve, std::optional<BeatFit> seed = std::nullopt,
                                 const FitOptions& opt = {}) {
  detail::FitData d;
  for (std::size_t i = 0; i < curve.size(); ++i) {
    if (!curve.defined[i]) continue;
    const double x = curve.tau[i];
    if (x < opt.fit_start || x > opt.fit_end) continue;
    if (!(curve.error[i] > 0.0) || !std::isfinite(curve.error[i]) || !std::isfinite(curve.value[i])) continue;
    d.x.push_back(x);
    d.y.push_back(curve.value[i]);
    d.w.push_back(1.0 / (curve.error[i] * curve.error[i]));
  }
  if (d.x.size() < 10) throw FitError("insufficient span: fewer than 10 defined bins in the fit window");
  const double x0 = d.x.front();
  const double span = d.x.back() - x0;
  double bin = span;
  for (std::size_t i = 1; i < d.x.size(); ++i) bin = std::min(bin, d.x[i] - d.x[i - 1]);

  double wsum = 0.0, ymean = 0.0;
  for (std::size_t i = 0; i < d.x.size(); ++i) {
    wsum += d.w[i];
    ymean += d.w[i] * d.y[i];
  }
  ymean /= wsum;

  // Candidate starting points.
  std::vector<detail::Params> starts;
  if (seed) {
    detail::Params p;
    p << seed->offset, seed->amplitude,
        std::isinf(seed->damping_time) ? 0.0 : 1.0 / seed->damping_time, 1.0 / seed->period, seed->phase;
    starts.push_back(p);
    if (span < 1.5 * seed->period) throw FitError("insufficient span: fit window covers < 1.5 seed periods");
  } else {
    const double pmin = 4.0 * bin;
    const double pmax = span / 1.5;
    if (!(pmax > pmin)) throw FitError("insufficient span for the frequency scan");
    struct Cand {
      double period, power, a, b;
    };
    std::vector<Cand> cands;
    for (int k = 0; k < opt.seed_periods; ++k) {
      const double period = pmin * std::pow(pmax / pmin, k / static_cast<double>(opt.seed_periods - 1));
      // Weighted linear least squares on {1, cos, sin}.
      Eigen::Matrix3d m = Eigen::Matrix3d::Zero();
      Eigen::Vector3d v = Eigen::Vector3d::Zero();
      for (std::size_t i = 0; i < d.x.size(); ++i) {
        const double arg = kTwoPi * d.x[i] / period;
        const Eigen::Vector3d f(1.0, std::cos(arg), std::sin(arg));
        m.noalias() += d.w[i] * f * f.transpose();
        v.noalias() += d.w[i] * d.y[i] * f;
      }
      const Eigen::Vector3d c = m.ldlt().solve(v);
      cands.push_back({period, c.dot(v), c(1), c(2)});
    }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) { return a.power > b.power; });
    const std::size_t ntop = std::min<std::size_t>(3, cands.size());
    for (std::size_t k = 0; k < ntop; ++k) {
      const auto& c = cands[k];
      const double amp = std::hypot(c.a, c.b);
      const double phase = std::atan2(-c.b, c.a);
      for (double decay : {0.0, 1.0 / span, 3.0 / span}) {
        detail::Params p;
        // Amplitude referred to τ = 0 for the decaying seeds.
        p << ymean, amp * std::exp(decay * (x0 + 0.5 * span)), decay, 1.0 / c.period, phase;
        starts.push_back(p);
      }
    }
  }

  detail::LmResult best;
  best.chi2 = std::numeric_limits<double>::infinity();
  for (const auto& s : starts) {
    auto r = detail::levenberg_marquardt(d, s, opt.max_iterations);
    if (r.converged && r.chi2 < best.chi2) best = r;
  }
  if (!std::isfinite(best.chi2)) throw FitError("fit did not converge within the iteration limit");

  // Covariance in internal parameters, then map to (period, damping_time,
  // amplitude, phase, offset).
  Eigen::Matrix<double, 5, 5> jtj;
  detail::Params jtr;
  detail::normal_equations(d, best.p, jtj, jtr);
  Eigen::Matrix<double, 5, 5> cov_int;
  bool singular = false;
  {
    Eigen::FullPivLU<Eigen::Matrix<double, 5, 5>> lu(jtj);
    lu.setThreshold(1e-12);
    if (lu.isInvertible()) {
      cov_int = lu.inverse();
    } else {
      singular = true;
      cov_int = Eigen::CompleteOrthogonalDecomposition<Eigen::Matrix<double, 5, 5>>(jtj).pseudoInverse();
    }
  }
  detail::Params p = best.p;
  double amp_sign = 1.0;
  if (p(1) < 0.0) {
    p(1) = -p(1);
    p(4) += std::numbers::pi;
    amp_sign = -1.0;
  }
  if (p(3) < 0.0) {
    // cos(−x + φ) = cos(x − φ)
    p(3) = -p(3);
    p(4) = -p(4);
  }
  BeatFit fit;
  fit.offset = p(0);
  fit.amplitude = p(1);
  fit.damping_time = p(2) > 0.0 ? 1.0 / p(2) : std::numeric_limits<double>::infinity();
  fit.period = p(3) > 0.0 ? 1.0 / p(3) : std::numeric_limits<double>::infinity();
  fit.phase = wrap_phase(p(4));

  // Rows: period, damping_time, amplitude, phase, offset; columns: internal.
  Eigen::Matrix<double, 5, 5> jac = Eigen::Matrix<double, 5, 5>::Zero();
  jac(0, 3) = -1.0 / (best.p(3) * best.p(3));
  jac(1, 2) = p(2) > 0.0 ? -1.0 / (best.p(2) * best.p(2)) : std::numeric_limits<double>::infinity();
  jac(2, 1) = amp_sign;
  jac(3, 4) = best.p(3) < 0.0 ? -1.0 : 1.0;
  jac(4, 0) = 1.0;
  fit.covariance = jac * cov_int * jac.transpose();
  if (!(p(2) > 0.0)) {
    fit.covariance.row(1).setZero();
    fit.covariance.col(1).setZero();
    fit.covariance(1, 1) = std::numeric_limits<double>::infinity();
  }

  fit.chi2 = best.chi2;
  fit.points = d.x.size();
  fit.dof = d.x.size() > 5 ? d.x.size() - 5 : 0;
  fit.iterations = best.iterations;
  const double rel = fit.period_err() / fit.period;
  fit.period_constrained = !singular && std::isfinite(rel) && rel <= opt.max_relative_period_error;
  if (fit.period_constrained) {
    auto [e, de] = fss_from_period(fit.period, fit.period_err());
    fit.fss = e;
    fit.fss_err = de;
  }
  return fit;
}

}  // namespace qdspin
