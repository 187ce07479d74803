#include <gtest/gtest.h>

#include <cmath>

#include <qdspin/spin.hpp>

using namespace qdspin;

namespace {

// RK4 integration of dS/dt = ω x̂ × S − (0, y, z)/T₂ with many small steps.
SpinState integrate_bloch(SpinState s, double t, double omega, double t2, int steps = 20000) {
  const double h = t / steps;
  auto f = [&](const SpinState& v) {
    const double g = std::isinf(t2) ? 0.0 : 1.0 / t2;
    return SpinState{0.0, -omega * v.z - g * v.y, omega * v.y - g * v.z};
  };
  auto add = [](const SpinState& a, const SpinState& b, double k) {
    return SpinState{a.x + k * b.x, a.y + k * b.y, a.z + k * b.z};
  };
  for (int i = 0; i < steps; ++i) {
    const auto k1 = f(s);
    const auto k2 = f(add(s, k1, h / 2));
    const auto k3 = f(add(s, k2, h / 2));
    const auto k4 = f(add(s, k3, h));
    s = {s.x + h / 6 * (k1.x + 2 * k2.x + 2 * k3.x + k4.x), s.y + h / 6 * (k1.y + 2 * k2.y + 2 * k3.y + k4.y),
         s.z + h / 6 * (k1.z + 2 * k2.z + 2 * k3.z + k4.z)};
  }
  return s;
}

}  // namespace

TEST(Precession, PeriodForFiveMicroEv) {
  PrecessionParams p{5.0};
  EXPECT_NEAR(p.period(), 0.8271336, 1e-6);
  EXPECT_TRUE(std::isinf(PrecessionParams{0.0}.period()));
}

TEST(Precession, InitFromHerald) {
  EXPECT_EQ(init_spin(Helicity::R), (SpinState{0, 0, 1}));
  EXPECT_EQ(init_spin(Helicity::L), (SpinState{0, 0, -1}));
}

TEST(Precession, EvolveMatchesBlochIntegration) {
  const PrecessionParams p{5.0, 3.0};
  for (double t : {0.05, 0.3, 0.8271, 1.7, 4.2}) {
    const SpinState start{0.2, 0.3, 0.9};
    const auto a = evolve(start, t, p);
    const auto b = integrate_bloch(start, t, p.angular_frequency(), p.dephasing_time);
    EXPECT_NEAR(a.x, b.x, 1e-9);
    EXPECT_NEAR(a.y, b.y, 1e-9);
    EXPECT_NEAR(a.z, b.z, 1e-9);
  }
}

TEST(Precession, EvolveComposes) {
  const PrecessionParams p{5.0, 3.0};
  const auto s = init_spin(Helicity::R);
  const auto one = evolve(s, 1.3, p);
  const auto two = evolve(evolve(s, 0.4, p), 0.9, p);
  EXPECT_NEAR(one.y, two.y, 1e-14);
  EXPECT_NEAR(one.z, two.z, 1e-14);
}

TEST(Precession, FullPeriodReturnsWithoutDephasing) {
  const PrecessionParams p{5.0};
  const auto s = evolve(init_spin(Helicity::R), p.period(), p);
  EXPECT_NEAR(s.z, 1.0, 1e-12);
  EXPECT_NEAR(s.norm(), 1.0, 1e-12);
  const auto half = evolve(init_spin(Helicity::R), 0.5 * p.period(), p);
  EXPECT_NEAR(half.z, -1.0, 1e-12);
}

TEST(Precession, DephasingShrinksNorm) {
  const PrecessionParams p{5.0, 3.0};
  const auto s = evolve(init_spin(Helicity::L), 3.0, p);
  EXPECT_NEAR(s.norm(), std::exp(-1.0), 1e-12);
}

TEST(Readout, ProbabilityAndSign) {
  const SpinState up{0, 0, 1};
  EXPECT_DOUBLE_EQ(prob_right(up, +1), 1.0);
  EXPECT_DOUBLE_EQ(prob_right(up, -1), 0.0);
  EXPECT_DOUBLE_EQ(prob_right(SpinState{1, 0, 0}, +1), 0.5);
}

TEST(Readout, MeasurementStatisticsAndCollapse) {
  Rng rng = make_rng(11, {tag(Stream::oracle)});
  const SpinState s0{0.0, 0.6, 0.4};
  const int n = 200000;
  int right = 0;
  for (int i = 0; i < n; ++i) {
    SpinState s = s0;
    const auto h = measure_helicity(s, +1, rng);
    if (h == Helicity::R) {
      ++right;
      EXPECT_EQ(s, (SpinState{0, 0, 1}));
    } else {
      EXPECT_EQ(s, (SpinState{0, 0, -1}));
    }
  }
  const double p = prob_right(s0, +1);
  EXPECT_NEAR(static_cast<double>(right) / n, p, 4.0 * std::sqrt(p * (1 - p) / n));
}

TEST(Readout, NegativeSignCollapsesToOppositePole) {
  Rng rng = make_rng(3, {tag(Stream::oracle)});
  SpinState s{0, 0, 1};
  const auto h = measure_helicity(s, -1, rng);
  EXPECT_EQ(h, Helicity::L);
  EXPECT_EQ(s, (SpinState{0, 0, 1}));
}

TEST(Readout, AnalyticCocircularMatchesEvolution) {
  const PrecessionParams p{5.0, 3.0};
  for (double t = 0.0; t < 6.0; t += 0.137) {
    const auto s = evolve(init_spin(Helicity::R), t, p);
    EXPECT_NEAR(analytic_cocircular(t, p), prob_right(s, +1), 1e-13);
  }
  EXPECT_DOUBLE_EQ(analytic_cocircular(0.0, p), 1.0);
}
