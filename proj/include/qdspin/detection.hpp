#pragma once

// Detector model: monochromator line filter, polarization analyzer, quantum
// efficiency, Gaussian timing jitter, dark counts and non-paralyzable dead
// time.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "polarization.hpp"
#include "rng.hpp"
#include "trajectory.hpp"
#include "units.hpp"

namespace qdspin {

struct DetectorChannel {
  std::string id;
  std::vector<std::uint32_t> line_filter;  // empty = accept every line
  Analyzer analyzer = Analyzer::none;
  double efficiency = 1.0;
  double jitter_sigma = 0.0;  // ns
  double dead_time = 0.0;     // ns
  double dark_rate = 0.0;     // 1/ns

  void check() const {
    if (!(efficiency >= 0.0 && efficiency <= 1.0)) throw std::invalid_argument(id + ": efficiency must lie in [0,1]");
    if (!(jitter_sigma >= 0.0)) throw std::invalid_argument(id + ": jitter_sigma must be >= 0");
    if (!(dead_time >= 0.0)) throw std::invalid_argument(id + ": dead_time must be >= 0");
    if (!(dark_rate >= 0.0)) throw std::invalid_argument(id + ": dark_rate must be >= 0");
  }
};

/// Detector presets from the quoted timing resolutions (FWHM, Gaussian).
struct DetectorPreset {
  double jitter_sigma;
  double dead_time;
  double efficiency;
};
inline const DetectorPreset kSpcm{fwhm_to_sigma(0.250), 50.0, 0.5};
inline const DetectorPreset kSspd{fwhm_to_sigma(0.090), 20.0, 0.5};

inline DetectorChannel make_channel(std::string id, std::vector<std::uint32_t> lines, Analyzer analyzer,
                                    const DetectorPreset& preset) {
  return {std::move(id), std::move(lines), analyzer, preset.efficiency, preset.jitter_sigma, preset.dead_time, 0.0};
}

/// Detected click times of one channel, sorted ascending.
struct DetectionStream {
  std::string channel;
  std::vector<double> t;
};

struct TimeSpan {
  double begin = 0.0;
  double end = 0.0;
  double length() const { return end - begin; }
};

/// Converts photon events into detector clicks. Events must be time-ordered.
/// Dark counts are superposed before the dead-time pass so the output rate
/// never exceeds 1/dead_time.
inline DetectionStream apply_detector(std::span<const PhotonEvent> events, const DetectorChannel& ch, Rng& rng,
                                      TimeSpan span) {
  ch.check();
  DetectionStream out{ch.id, {}};
  std::unordered_set<std::uint32_t> filter(ch.line_filter.begin(), ch.line_filter.end());
  std::normal_distribution<double> jitter(0.0, ch.jitter_sigma > 0.0 ? ch.jitter_sigma : 1.0);

  std::vector<double> clicks;
  for (const auto& e : events) {
    if (!filter.empty() && !filter.contains(e.line)) continue;
    const double pass = project_polarization(e.pol, ch.analyzer) * ch.efficiency;
    if (pass <= 0.0) continue;
    if (pass < 1.0 && !bernoulli(rng, pass)) continue;
    clicks.push_back(ch.jitter_sigma > 0.0 ? e.t + jitter(rng) : e.t);
  }
  if (ch.dark_rate > 0.0 && span.length() > 0.0) {
    const auto n = std::poisson_distribution<long long>(ch.dark_rate * span.length())(rng);
    std::uniform_real_distribution<double> when(span.begin, span.end);
    for (long long i = 0; i < n; ++i) clicks.push_back(when(rng));
  }
  std::sort(clicks.begin(), clicks.end());

  if (ch.dead_time > 0.0) {
    out.t.reserve(clicks.size());
    double blind_until = -std::numeric_limits<double>::infinity();
    for (double c : clicks) {
      if (c < blind_until) continue;
      out.t.push_back(c);
      blind_until = c + ch.dead_time;
    }
  } else {
    out.t = std::move(clicks);
  }
  return out;
}

/// Span defaults to the first/last event time.
inline DetectionStream apply_detector(std::span<const PhotonEvent> events, const DetectorChannel& ch, Rng& rng) {
  TimeSpan span{};
  if (!events.empty()) span = {events.front().t, events.back().t};
  return apply_detector(events, ch, rng, span);
}

}  // namespace qdspin
