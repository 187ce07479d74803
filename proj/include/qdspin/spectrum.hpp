#pragma once

// Polarized photoluminescence spectra: per-line H/V intensities, Gaussian
// instrumental broadening and the rectilinear degree of polarization
// DOP = (I_H − I_V)/(I_H + I_V).

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "detection.hpp"
#include "scheme.hpp"
#include "trajectory.hpp"
#include "units.hpp"

namespace qdspin {

struct SpectrumLine {
  std::uint32_t line = 0;
  std::string label;
  double center = 0.0;       // μeV offset
  double intensity_H = 0.0;  // counts/s
  double intensity_V = 0.0;  // counts/s

  double total() const { return intensity_H + intensity_V; }
  double dop() const {
    const double s = total();
    return s > 0.0 ? (intensity_H - intensity_V) / s : std::numeric_limits<double>::quiet_NaN();
  }
};

struct Spectrum {
  double resolution = 25.0;  // FWHM, μeV
  std::vector<SpectrumLine> lines;
  std::vector<double> energy;  // μeV offsets
  std::vector<double> I_H;     // counts/s per μeV
  std::vector<double> I_V;
  std::vector<double> dop;     // NaN where there is no intensity

  const SpectrumLine* find(std::uint32_t line) const {
    for (const auto& l : lines)
      if (l.line == line) return &l;
    return nullptr;
  }
};

/// Places Gaussian lines of FWHM `resolution` on a 1 μeV-or-finer grid and
/// computes the DOP per energy bin.
inline void broaden(Spectrum& sp, double step = 0.0) {
  if (!(sp.resolution > 0.0)) throw std::invalid_argument("spectral resolution must be > 0");
  sp.energy.clear();
  sp.I_H.clear();
  sp.I_V.clear();
  sp.dop.clear();
  if (sp.lines.empty()) return;
  if (step <= 0.0) step = std::min(1.0, sp.resolution / 25.0);
  const double sigma = fwhm_to_sigma(sp.resolution);
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& l : sp.lines) {
    lo = std::min(lo, l.center);
    hi = std::max(hi, l.center);
  }
  lo = std::floor(lo - 5.0 * sp.resolution);
  hi = std::ceil(hi + 5.0 * sp.resolution);
  const auto n = static_cast<std::size_t>(std::floor((hi - lo) / step)) + 1;
  sp.energy.resize(n);
  sp.I_H.assign(n, 0.0);
  sp.I_V.assign(n, 0.0);
  sp.dop.resize(n);
  const double norm = 1.0 / (sigma * std::sqrt(kTwoPi));
  for (std::size_t k = 0; k < n; ++k) sp.energy[k] = lo + static_cast<double>(k) * step;
  for (const auto& l : sp.lines) {
    const auto k0 = static_cast<std::size_t>(std::max(0.0, std::floor((l.center - 6.0 * sigma - lo) / step)));
    const auto k1 = std::min(n, static_cast<std::size_t>(std::ceil((l.center + 6.0 * sigma - lo) / step)) + 1);
    for (std::size_t k = k0; k < k1; ++k) {
      const double x = (sp.energy[k] - l.center) / sigma;
      const double g = norm * std::exp(-0.5 * x * x);
      sp.I_H[k] += l.intensity_H * g;
      sp.I_V[k] += l.intensity_V * g;
    }
  }
  double peak = 0.0;
  for (std::size_t k = 0; k < n; ++k) peak = std::max(peak, sp.I_H[k] + sp.I_V[k]);
  for (std::size_t k = 0; k < n; ++k) {
    const double s = sp.I_H[k] + sp.I_V[k];
    sp.dop[k] = s > 1e-9 * peak ? (sp.I_H[k] - sp.I_V[k]) / s : std::numeric_limits<double>::quiet_NaN();
  }
}

/// Spectrum from simulated photons. Each photon is analyzed once with an H
/// and once with a V polarizer (two separate spectra, as in a polarization
/// resolved measurement), so DOP carries shot noise.
inline Spectrum synth_spectrum(const LevelScheme& scheme, std::span<const PhotonEvent> events, double span_ns,
                               double resolution, Rng& rng) {
  if (!(span_ns > 0.0)) throw std::invalid_argument("span must be > 0");
  std::map<std::uint32_t, std::pair<std::uint64_t, std::uint64_t>> counts;
  for (auto l : all_lines(scheme)) counts[l] = {0, 0};
  for (const auto& e : events) {
    auto& c = counts[e.line];
    if (bernoulli(rng, project_polarization(e.pol, Analyzer::H))) ++c.first;
    if (bernoulli(rng, project_polarization(e.pol, Analyzer::V))) ++c.second;
  }
  Spectrum sp;
  sp.resolution = resolution;
  const double per_s = 1e9 / span_ns;
  for (const auto& [line, c] : counts)
    sp.lines.push_back({line, line_label(scheme, line), line_energy(scheme, line),
                        static_cast<double>(c.first) * per_s, static_cast<double>(c.second) * per_s});
  broaden(sp);
  return sp;
}

/// Expected spectrum from the stationary photon fluxes of the scheme.
inline Spectrum synth_spectrum(const LevelScheme& scheme, double resolution) {
  const auto pi = stationary_distribution(scheme);
  Spectrum sp;
  sp.resolution = resolution;
  const double f = scheme.cascade_fidelity;
  for (std::size_t i = 0; i < scheme.transitions.size(); ++i) {
    const auto& t = scheme.transitions[i];
    if (!t.radiative) continue;
    const double flux = stationary_flux(scheme, pi, t.id) * 1e9;
    if (!is_split(scheme, t)) {
      const std::uint32_t l = line_id(i, Branch::center);
      sp.lines.push_back({l, line_label(scheme, l), line_energy(scheme, l), 0.5 * flux, 0.5 * flux});
      continue;
    }
    const bool out_of_doublet = is_doublet(scheme.state(t.from).kind);
    const bool co = t.polarization_rule == PolarizationRule::rectilinear_co;
    // Fraction of H photons on the lower branch.
    double h_lower;
    if (out_of_doublet)
      h_lower = 0.0;
    else
      h_lower = co ? f : 1.0 - f;
    const std::uint32_t lo = line_id(i, Branch::lower);
    const std::uint32_t hi = line_id(i, Branch::upper);
    sp.lines.push_back({lo, line_label(scheme, lo), line_energy(scheme, lo), 0.5 * flux * h_lower,
                        0.5 * flux * (1.0 - h_lower)});
    sp.lines.push_back({hi, line_label(scheme, hi), line_energy(scheme, hi), 0.5 * flux * (1.0 - h_lower),
                        0.5 * flux * h_lower});
  }
  broaden(sp);
  return sp;
}

/// Sub-grid peak position of a sampled curve near `guess` (parabolic
/// interpolation around the local maximum within ±half_width).
inline double peak_position(std::span<const double> x, std::span<const double> y, double guess, double half_width) {
  std::size_t best = x.size();
  for (std::size_t k = 0; k < x.size(); ++k) {
    if (std::abs(x[k] - guess) > half_width) continue;
    if (best == x.size() || y[k] > y[best]) best = k;
  }
  if (best == x.size()) throw std::invalid_argument("no samples near the requested peak");
  if (best == 0 || best + 1 >= x.size()) return x[best];
  const double a = y[best - 1], b = y[best], c = y[best + 1];
  const double denom = a - 2.0 * b + c;
  const double shift = denom != 0.0 ? 0.5 * (a - c) / denom : 0.0;
  return x[best] + shift * (x[best + 1] - x[best]);
}

}  // namespace qdspin
