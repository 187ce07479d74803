#pragma once

// Dark-exciton pseudo-spin: heralded initialization, precession about the
// fine-structure eigenbasis (x axis) with transverse dephasing, and
// projective helicity readout.
//
// Basis: +z = |↑⇑⟩, −z = |↓⇓⟩. The eigenstates |↑⇑ ± ↓⇓⟩ lie on ±x.

#include <cmath>
#include <limits>

#include "rng.hpp"
#include "units.hpp"

namespace qdspin {

enum class Helicity : int { R = 0, L = 1 };

inline constexpr Helicity opposite(Helicity h) { return h == Helicity::R ? Helicity::L : Helicity::R; }

struct SpinState {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  double norm() const { return std::sqrt(x * x + y * y + z * z); }
  bool operator==(const SpinState&) const = default;
};

struct PrecessionParams {
  double fss_dark = 0.0;                                         // μeV
  double dephasing_time = std::numeric_limits<double>::infinity();  // ns
  double planck = kPlanck;                                       // μeV·ns

  /// Precession period h/ΔE in ns; +inf when the splitting vanishes.
  double period() const {
    return fss_dark > 0.0 ? planck / fss_dark : std::numeric_limits<double>::infinity();
  }
  /// Angular precession frequency in rad/ns.
  double angular_frequency() const { return kTwoPi * fss_dark / planck; }
};

inline SpinState init_spin(Helicity herald) {
  return herald == Helicity::R ? SpinState{0.0, 0.0, 1.0} : SpinState{0.0, 0.0, -1.0};
}

/// Rotates the Bloch vector about x by 2π·dt/T and shrinks the transverse
/// (y, z) components by exp(−dt/T₂).
inline SpinState evolve(const SpinState& s, double dt, const PrecessionParams& p) {
  const double angle = p.angular_frequency() * dt;
  const double c = std::cos(angle);
  const double sn = std::sin(angle);
  const double decay = std::isinf(p.dephasing_time) ? 1.0 : std::exp(-dt / p.dephasing_time);
  return {s.x, decay * (c * s.y - sn * s.z), decay * (sn * s.y + c * s.z)};
}

/// Probability that readout yields R, for a trion with the given readout sign.
inline double prob_right(const SpinState& s, int sign) { return 0.5 * (1.0 + sign * s.z); }

/// Projective helicity measurement. The spin collapses onto the z pole
/// consistent with the outcome.
inline Helicity measure_helicity(SpinState& s, int sign, Rng& rng) {
  const Helicity h = bernoulli(rng, prob_right(s, sign)) ? Helicity::R : Helicity::L;
  const double pole = (h == Helicity::R ? 1.0 : -1.0) * sign;
  s = {0.0, 0.0, pole};
  return h;
}

/// Closed-form co-circular readout probability after a delay τ.
inline double analytic_cocircular(double tau, const PrecessionParams& p) {
  const double decay = std::isinf(p.dephasing_time) ? 1.0 : std::exp(-tau / p.dephasing_time);
  return 0.5 + 0.5 * decay * std::cos(p.angular_frequency() * tau);
}

}  // namespace qdspin
