// One PASS/FAIL line per acceptance criterion. Exit status is the number of failures.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <string>
#include <thread>

#include <Eigen/Dense>

#include <qdspin/correlator.hpp>
#include <qdspin/detection.hpp>
#include <qdspin/experiments.hpp>
#include <qdspin/spin.hpp>
#include <qdspin/trajectory.hpp>

#include "oracles.hpp"

using namespace qdspin;
using namespace qdspin::experiments;

namespace {

int failures = 0;

void report(int n, bool pass, const std::string& detail) {
  std::printf("[%s] criterion %2d: %s\n", pass ? "PASS" : "FAIL", n, detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

unsigned workers() { return std::max(1u, std::thread::hardware_concurrency()); }

double metric(const PlanResult& r, const std::string& k) {
  const auto it = r.metrics.find(k);
  return it == r.metrics.end() ? std::nan("") : it->second;
}

// Gauss-Newton fit of A·exp(−(x−μ)²/2σ²) with Poisson weights, seeded from moments.
double fit_gaussian_sigma(const CorrelationHistogram& h) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0;
  for (std::size_t k = 0; k < h.size(); ++k) {
    const double x = h.tau_center(k), c = static_cast<double>(h.counts[k]);
    s0 += c;
    s1 += c * x;
    s2 += c * x * x;
  }
  const double mu0 = s1 / s0;
  Eigen::Vector3d p(0.0, mu0, std::sqrt(s2 / s0 - mu0 * mu0));
  for (std::size_t k = 0; k < h.size(); ++k) p(0) = std::max<double>(p(0), h.counts[k]);
  for (int it = 0; it < 50; ++it) {
    Eigen::Matrix3d jtj = Eigen::Matrix3d::Zero();
    Eigen::Vector3d jtr = Eigen::Vector3d::Zero();
    for (std::size_t k = 0; k < h.size(); ++k) {
      const double x = h.tau_center(k), c = static_cast<double>(h.counts[k]);
      const double u = (x - p(1)) / p(2), e = std::exp(-0.5 * u * u), m = p(0) * e;
      const double w = 1.0 / std::max(c, 1.0);
      const Eigen::Vector3d j(e, m * u / p(2), m * u * u / p(2));
      jtj += w * j * j.transpose();
      jtr += w * j * (c - m);
    }
    const Eigen::Vector3d d = jtj.ldlt().solve(jtr);
    p += d;
    if (d.norm() < 1e-12 * p.norm()) break;
  }
  return std::abs(p(2));
}

void beat_criteria() {
  RunOptions o;
  o.workers = workers();
  o.seed = 1;
  const auto t0 = std::chrono::steady_clock::now();
  const auto plus = run_plan(make_plan("fig3_xplus"), o);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  o.seed = 2;
  const auto minus = run_plan(make_plan("fig3_xminus"), o);

  const double heralds = metric(plus, "heralds");
  const double period = metric(plus, "period_ns_xplus");
  const double fss = metric(plus, "fss_ueV_xplus");
  const bool ok1 = heralds >= 1e6 && std::abs(period / experiments::detail::kReferencePeriod - 1.0) <= 0.02 &&
                   std::abs(fss / 5.0 - 1.0) <= 0.02 && secs <= 300.0;
  report(1, ok1,
         fmt("fig3_xplus: %.3g heralds, period %.4f ns (ref %.4f), fss %.3f μeV, %.1f s", heralds, period,
             experiments::detail::kReferencePeriod, fss, secs));

  const auto& a = plus.fits.at("C_RL_xplus");
  const auto& b = minus.fits.at("C_RL_xminus");
  const double dev = phase_reversal_sigma(a, b);
  report(2, std::abs(dev) <= 3.0,
         fmt("phase X+ %.3f rad, X- %.3f rad, |Δφ| − π = %.2f σ", a.phase, b.phase, -dev));

  const int cycles = static_cast<int>(metric(plus, "resolved_cycles_xplus"));
  report(3, cycles >= 4, fmt("%d resolved precession cycles above 3σ (T2 = 3 ns)", cycles));
}

void cascade_criterion() {
  RunOptions o;
  o.workers = workers();
  const auto s = run_plan(make_plan("fig2_singlet"), o);
  const auto t = run_plan(make_plan("fig2_triplet"), o);
  const double cs = metric(s, "c_hv_window"), ct = metric(t, "c_hv_window");
  const double bs = metric(s, "bunching_ratio"), bt = metric(t, "bunching_ratio");
  report(4, cs > 0.2 && ct < -0.2 && bs > 1.5 && bt > 1.5,
         fmt("C_HV singlet %+.3f, triplet %+.3f; bunching %.2f, %.2f", cs, ct, bs, bt));
}

void spectrum_criterion() {
  const auto r = run_plan(make_plan("fig1_spectrum"), {});
  std::string bad;
  for (const auto& o : r.outcomes)
    if (!o.pass) bad += " " + o.entry.id;
  report(5, r.passed(),
         fmt("split X0 %.1f XX0 %.1f μeV, trion DOP %.3f/%.3f, T3/T0 %.2f/%.2f%s", metric(r, "x0_split_ueV"),
             metric(r, "xx0_split_ueV"), metric(r, "xplus_dop"), metric(r, "xminus_dop"),
             metric(r, "triplet_ratio_lo"), metric(r, "triplet_ratio_hi"), bad.empty() ? "" : (", failed:" + bad).c_str()));
}

void poisson_criterion() {
  Rng rng = make_rng(6, {tag(Stream::oracle)});
  const double rate = 1e-3, duration = 1e10;
  const auto a = oracle::poisson_stream(rate, duration, rng);
  const auto b = oracle::poisson_stream(rate, duration, rng);
  const auto h = normalize(cross_correlate(a, b, {"a", "b", 25.0, 0.5}, duration));
  std::size_t inside = 0;
  for (std::size_t k = 0; k < h.size(); ++k)
    if (std::abs(h.g2[k] - 1.0) <= 4.0 * h.g2_err[k]) ++inside;
  const double frac = static_cast<double>(inside) / h.size();
  report(6, frac >= 0.99, fmt("%zu/%zu bins within 1 ± 4σ (%.1f%%)", inside, h.size(), 100.0 * frac));
}

void precession_criterion() {
  const PrecessionParams p{5.0, 3.0};
  Rng rng = make_rng(7, {tag(Stream::oracle)});
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int trials = 100000;
  int ok = 0;
  double worst = 0.0;
  for (int k = 0; k < 20; ++k) {
    const double tau = 0.25 * (k + 1);
    int co = 0;
    for (int i = 0; i < trials; ++i) {
      const Helicity start = u(rng) < 0.5 ? Helicity::R : Helicity::L;
      SpinState s = init_spin(start);
      // Two random sub-steps exercise composition of the propagator.
      const double cut = tau * u(rng);
      s = evolve(evolve(s, cut, p), tau - cut, p);
      if (measure_helicity(s, +1, rng) == start) ++co;
    }
    const double q = analytic_cocircular(tau, p);
    const double z = std::abs(co / static_cast<double>(trials) - q) / std::sqrt(q * (1.0 - q) / trials);
    worst = std::max(worst, z);
    if (z <= 4.0) ++ok;
  }
  report(7, ok == 20, fmt("%d/20 delays within 4 binomial σ (worst %.2f σ, 1e5 trials each)", ok, worst));
}

void jitter_criterion() {
  std::vector<PhotonEvent> ev;
  for (int i = 0; i < 400000; ++i) ev.push_back({i * 100.0, 0, Polarization::H, 0});
  DetectorChannel ch{"j", {}, Analyzer::none, 1.0, 0.106, 0.0, 0.0};
  DetectorChannel clean{"c", {}, Analyzer::none, 1.0, 0.0, 0.0, 0.0};
  Rng r1 = make_rng(8, {tag(Stream::detection), 0});
  Rng r2 = make_rng(8, {tag(Stream::detection), 1});
  const auto j1 = apply_detector(ev, ch, r1);
  const auto j2 = apply_detector(ev, ch, r2);
  const auto c0 = apply_detector(ev, clean, r1);
  const CorrelationPair pair{"a", "b", 1.0, 0.01};
  const double s1 = fit_gaussian_sigma(cross_correlate(c0.t, j1.t, pair));
  const double s2 = fit_gaussian_sigma(cross_correlate(j1.t, j2.t, pair));
  const double target2 = std::sqrt(2.0) * 0.106;
  report(8, std::abs(s1 / 0.106 - 1.0) <= 0.05 && std::abs(s2 / target2 - 1.0) <= 0.05,
         fmt("σ(jittered vs clean) %.4f ns (target 0.106), σ(two jittered) %.4f ns (target %.4f)", s1, s2, target2));
}

void brute_force_criterion() {
  Rng rng = make_rng(9, {tag(Stream::oracle)});
  std::uniform_real_distribution<double> u(0.0, 100.0);
  std::uniform_int_distribution<int> len(0, 120);
  int same = 0;
  for (int trial = 0; trial < 100; ++trial) {
    // Dyadic timestamps and bins keep bin-edge ties exact in both implementations.
    auto stream = [&] {
      std::vector<double> t(len(rng));
      for (auto& x : t) x = std::floor(u(rng) * 256.0) / 256.0;
      std::sort(t.begin(), t.end());
      return t;
    };
    const auto a = stream(), b = stream();
    const CorrelationPair p{"a", "b", 8.0, 0.0625};
    if (cross_correlate(a, b, p, 100.0).counts == oracle::brute_histogram(a, b, p.window, p.bin_width)) ++same;
  }
  report(9, same == 100, fmt("%d/100 random streams identical to the O(n²) reference", same));
}

void occupancy_criterion() {
  const auto s = oracle::five_state_scheme();
  const auto pi = oracle::stationary(s);
  EngineConfig cfg;
  cfg.duration = 2e7;
  cfg.seed = 10;
  cfg.scheme = s;
  const auto r = run_trajectory(cfg);
  double worst = 0.0;
  for (std::size_t i = 0; i < pi.size(); ++i) worst = std::max(worst, std::abs(r.occupancy[i] / cfg.duration / pi[i] - 1.0));
  report(10, worst <= 0.01, fmt("worst relative occupancy deviation %.3f%% over %zu states", 100.0 * worst, pi.size()));
}

template <class F>
void guarded(int n, F f) {
  try {
    f();
  } catch (const std::exception& e) {
    report(n, false, std::string("exception: ") + e.what());
  }
}

}  // namespace

int main() {
  guarded(1, beat_criteria);
  guarded(4, cascade_criterion);
  guarded(5, spectrum_criterion);
  guarded(6, poisson_criterion);
  guarded(7, precession_criterion);
  guarded(8, jitter_criterion);
  guarded(9, brute_force_criterion);
  guarded(10, occupancy_criterion);
  std::printf("%s: %d failing criteria\n", failures ? "FAILED" : "PASSED", failures);
  return failures ? 1 : 0;
}
