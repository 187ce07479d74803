#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

#include "spin.hpp"

namespace qdspin {

/// Photon polarization descriptor. Codes are the on-disk u8 values.
enum class Polarization : std::uint8_t { H = 0, V = 1, D = 2, A = 3, R = 4, L = 5, unpolarized = 6 };

/// Polarization analyzer in front of a detector; `none` passes everything.
enum class Analyzer : std::uint8_t { H = 0, V = 1, D = 2, A = 3, R = 4, L = 5, none = 6 };

inline Polarization to_polarization(Helicity h) { return h == Helicity::R ? Polarization::R : Polarization::L; }

inline Polarization orthogonal(Polarization p) {
  switch (p) {
    case Polarization::H: return Polarization::V;
    case Polarization::V: return Polarization::H;
    case Polarization::D: return Polarization::A;
    case Polarization::A: return Polarization::D;
    case Polarization::R: return Polarization::L;
    case Polarization::L: return Polarization::R;
    default: return p;
  }
}

namespace detail {
// 0 = rectilinear, 1 = diagonal, 2 = circular
inline int basis_of(std::uint8_t code) { return code / 2; }
}  // namespace detail

/// Probability that a photon of polarization `pol` passes `analyzer`.
/// Pure states: 1 for the same state, 0 for the orthogonal one, 1/2 across
/// mutually unbiased bases. Unpolarized light always passes with 1/2.
inline double project_polarization(Polarization pol, Analyzer analyzer) {
  if (analyzer == Analyzer::none) return 1.0;
  if (pol == Polarization::unpolarized) return 0.5;
  const auto p = static_cast<std::uint8_t>(pol);
  const auto a = static_cast<std::uint8_t>(analyzer);
  if (detail::basis_of(p) != detail::basis_of(a)) return 0.5;
  return p == a ? 1.0 : 0.0;
}

inline std::string_view to_string(Polarization p) {
  constexpr std::string_view names[] = {"H", "V", "D", "A", "R", "L", "unpolarized"};
  return names[static_cast<std::uint8_t>(p)];
}

inline std::string_view to_string(Analyzer a) {
  constexpr std::string_view names[] = {"H", "V", "D", "A", "R", "L", "none"};
  return names[static_cast<std::uint8_t>(a)];
}

inline Analyzer parse_analyzer(std::string_view s) {
  for (std::uint8_t i = 0; i <= 6; ++i)
    if (to_string(static_cast<Analyzer>(i)) == s) return static_cast<Analyzer>(i);
  throw std::invalid_argument("unknown analyzer '" + std::string(s) + "'");
}

}  // namespace qdspin
