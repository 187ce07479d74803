#pragma once

// Unit conventions used throughout qdspin:
//   time    ns
//   energy  μeV (offsets from a reference energy in eV)
//   rate    1/ns

#include <cmath>
#include <numbers>

namespace qdspin {

/// Planck's constant in μeV·ns.
inline constexpr double kPlanck = 4.135668;

/// FWHM of a Gaussian in units of its standard deviation (2·sqrt(2·ln 2)).
inline constexpr double kFwhmPerSigma = 2.3548200450309493;

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

inline constexpr double fwhm_to_sigma(double fwhm) { return fwhm / kFwhmPerSigma; }

inline constexpr double sigma_to_fwhm(double sigma) { return sigma * kFwhmPerSigma; }

}  // namespace qdspin
