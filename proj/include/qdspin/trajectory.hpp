#pragma once

// Continuous-time Monte Carlo walk over a LevelScheme under CW excitation.
// The walker is a plain Gillespie chain everywhere except the spin-carrying
// state, where the dark-exciton spin precesses coherently between heralding
// and charging.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "polarization.hpp"
#include "rng.hpp"
#include "scheme.hpp"
#include "spin.hpp"

namespace qdspin {

struct PhotonEvent {
  double t = 0.0;  // ns since trajectory start
  std::uint32_t line = 0;
  Polarization pol = Polarization::unpolarized;
  std::uint32_t trajectory_id = 0;

  bool operator==(const PhotonEvent&) const = default;
};

struct EngineConfig {
  double duration = 0.0;  // ns per trajectory
  std::uint64_t seed = 0;
  LevelScheme scheme;
  std::optional<std::vector<std::uint32_t>> record_lines;
  std::uint32_t trajectories = 1;  // used by run_ensemble
};

/// Walker context: the QD state plus the coherent and polarization memory
/// attached to the trajectory rather than to the state graph.
struct Walker {
  std::size_t state = 0;
  double t = 0.0;
  SpinState spin{};
  bool has_spin = false;
  Polarization bright_pol = Polarization::H;  // eigenstate of the current doublet
  std::uint32_t trajectory_id = 0;
};

struct StepResult {
  double dwell = 0.0;
  std::size_t next = 0;
  std::size_t transition = 0;
  std::optional<PhotonEvent> emitted;
};

class AbsorbingStateError : public std::runtime_error {
 public:
  explicit AbsorbingStateError(const std::string& state)
      : std::runtime_error("absorbing state '" + state + "' reached"), state_(state) {}
  const std::string& state() const { return state_; }

 private:
  std::string state_;
};

struct TrajectoryResult {
  std::vector<PhotonEvent> events;
  std::vector<double> occupancy;                  // ns spent per state
  std::vector<std::uint64_t> transition_counts;   // per transition index
  std::uint64_t heralds = 0;                      // spin-initializing photons emitted
  double duration = 0.0;
  std::optional<std::string> diagnostic;
};

class Engine {
 public:
  explicit Engine(LevelScheme scheme) : scheme_(std::move(scheme)) { compile(); }

  const LevelScheme& scheme() const { return scheme_; }

  Walker start(std::uint32_t trajectory_id = 0) const {
    Walker w;
    w.state = ground_;
    w.trajectory_id = trajectory_id;
    return w;
  }

  /// One Gillespie step: exponential dwell, branch choice, emission.
  StepResult step(Walker& w, Rng& rng) const {
    const auto& arcs = out_[w.state];
    const double total = total_[w.state];
    if (arcs.empty()) throw AbsorbingStateError(scheme_.states[w.state].id);

    StepResult r;
    r.dwell = std::exponential_distribution<double>(total)(rng);
    if (w.has_spin && scheme_.states[w.state].carries_spin) w.spin = evolve(w.spin, r.dwell, precession_);

    double u = uniform01(rng) * total;
    std::size_t pick = arcs.back();
    for (auto ti : arcs) {
      u -= scheme_.transitions[ti].rate;
      if (u < 0.0) {
        pick = ti;
        break;
      }
    }
    r.transition = pick;
    r.next = to_[pick];
    w.t += r.dwell;
    r.emitted = take(w, pick, rng);
    w.state = r.next;
    return r;
  }

  TrajectoryResult run(double duration, Rng& rng, std::uint32_t trajectory_id = 0,
                       const std::optional<std::vector<std::uint32_t>>& record_lines = std::nullopt) const {
    if (!(duration > 0.0)) throw std::invalid_argument("trajectory duration must be > 0");
    std::vector<bool> keep;
    if (record_lines) {
      keep.assign(scheme_.transitions.size() * 4, false);
      for (auto l : *record_lines)
        if (l < keep.size()) keep[l] = true;
    }
    TrajectoryResult res;
    res.occupancy.assign(scheme_.states.size(), 0.0);
    res.transition_counts.assign(scheme_.transitions.size(), 0);
    res.duration = duration;
    Walker w = start(trajectory_id);
    while (true) {
      const std::size_t here = w.state;
      const double t0 = w.t;
      StepResult s;
      try {
        s = step(w, rng);
      } catch (const AbsorbingStateError& e) {
        res.occupancy[here] += duration - t0;
        res.diagnostic = std::string(e.what()) + " at t=" + std::to_string(t0) + " ns";
        break;
      }
      if (w.t >= duration) {
        res.occupancy[here] += duration - t0;
        break;
      }
      res.occupancy[here] += s.dwell;
      ++res.transition_counts[s.transition];
      if (s.emitted) {
        if (is_herald_[s.transition]) ++res.heralds;
        if (keep.empty() || keep[s.emitted->line]) res.events.push_back(*s.emitted);
      }
    }
    return res;
  }

  bool is_herald(std::size_t transition) const { return is_herald_[transition]; }

 private:
  void compile() {
    if (auto v = validate(scheme_); !v.empty()) throw SchemeValidationError(std::move(v));
    const auto n = scheme_.states.size();
    out_.assign(n, {});
    total_.assign(n, 0.0);
    for (std::size_t i = 0; i < scheme_.transitions.size(); ++i) {
      const auto& t = scheme_.transitions[i];
      const auto a = *scheme_.state_index(t.from);
      out_[a].push_back(i);
      total_[a] += t.rate;
      to_.push_back(*scheme_.state_index(t.to));
      split_.push_back(is_split(scheme_, t));
      const bool from_trion = is_trion(scheme_.states[a].kind);
      is_herald_.push_back(t.polarization_rule == PolarizationRule::circular_spin_correlated && !from_trion);
    }
    for (std::size_t i = 0; i < n; ++i)
      if (scheme_.states[i].kind == StateKind::ground) ground_ = i;
    precession_ = {scheme_.fss_dark, scheme_.spin_dephasing_time, kPlanck};
  }

  static Polarization random_rectilinear(Rng& rng) {
    return bernoulli(rng, 0.5) ? Polarization::H : Polarization::V;
  }

  std::optional<PhotonEvent> take(Walker& w, std::size_t ti, Rng& rng) const {
    const auto& t = scheme_.transitions[ti];
    const auto from = scheme_.states[w.state].kind;
    const auto to = scheme_.states[to_[ti]].kind;

    if (!t.radiative) {
      if (is_doublet(to) && !is_doublet(from)) w.bright_pol = random_rectilinear(rng);
      if (!(scheme_.states[to_[ti]].carries_spin || is_trion(to) || to == StateKind::excited_dark_exciton))
        w.has_spin = false;
      return std::nullopt;
    }

    PhotonEvent ev;
    ev.t = w.t;
    ev.trajectory_id = w.trajectory_id;
    Branch branch = Branch::center;

    switch (t.polarization_rule) {
      case PolarizationRule::rectilinear_co:
      case PolarizationRule::rectilinear_cross:
        if (is_doublet(from)) {
          // Decay out of a doublet eigenstate: photon carries the eigenstate's
          // polarization, H on the upper branch.
          ev.pol = w.bright_pol;
          branch = ev.pol == Polarization::H ? Branch::upper : Branch::lower;
        } else {
          ev.pol = random_rectilinear(rng);
          if (is_doublet(to)) {
            const bool ideal = bernoulli(rng, scheme_.cascade_fidelity);
            const bool co = t.polarization_rule == PolarizationRule::rectilinear_co;
            w.bright_pol = (co == ideal) ? ev.pol : orthogonal(ev.pol);
            // Energy conservation: landing in the upper eigenstate lowers the photon.
            branch = w.bright_pol == Polarization::H ? Branch::lower : Branch::upper;
          }
        }
        break;
      case PolarizationRule::circular_spin_correlated:
        if (t.readout_sign != 0) {
          if (!w.has_spin) w.spin = {};
          ev.pol = to_polarization(measure_helicity(w.spin, t.readout_sign, rng));
          w.has_spin = false;
        } else {
          const Helicity h = bernoulli(rng, 0.5) ? Helicity::R : Helicity::L;
          ev.pol = to_polarization(h);
          w.spin = init_spin(h);
          w.has_spin = true;
        }
        break;
      default:
        ev.pol = Polarization::unpolarized;
        if (!scheme_.states[to_[ti]].carries_spin) w.has_spin = false;
        break;
    }
    if (!split_[ti]) branch = Branch::center;
    ev.line = line_id(ti, branch);
    return ev;
  }

  LevelScheme scheme_;
  std::vector<std::vector<std::size_t>> out_;
  std::vector<double> total_;
  std::vector<std::size_t> to_;
  std::vector<bool> split_;
  std::vector<bool> is_herald_;
  std::size_t ground_ = 0;
  PrecessionParams precession_;
};

/// Runs trajectory 0 of the configured seed.
inline TrajectoryResult run_trajectory(const EngineConfig& cfg) {
  Engine engine(cfg.scheme);
  Rng rng = make_rng(cfg.seed, {tag(Stream::trajectory), 0});
  return engine.run(cfg.duration, rng, 0, cfg.record_lines);
}

struct EnsembleResult {
  std::vector<TrajectoryResult> trajectories;  // indexed by trajectory id

  /// All events, ordered by trajectory id then time.
  std::vector<PhotonEvent> merged_events() const {
    std::size_t n = 0;
    for (const auto& t : trajectories) n += t.events.size();
    std::vector<PhotonEvent> out;
    out.reserve(n);
    for (const auto& t : trajectories) out.insert(out.end(), t.events.begin(), t.events.end());
    return out;
  }

  std::uint64_t heralds() const {
    std::uint64_t h = 0;
    for (const auto& t : trajectories) h += t.heralds;
    return h;
  }
};

/// Runs cfg.trajectories independent trajectories. Trajectory i always draws
/// from substream (seed, i), so the result does not depend on n_workers.
inline EnsembleResult run_ensemble(const EngineConfig& cfg, unsigned n_workers) {
  if (n_workers < 1) throw std::invalid_argument("n_workers must be >= 1");
  const Engine engine(cfg.scheme);
  EnsembleResult res;
  res.trajectories.resize(cfg.trajectories);
  std::atomic<std::uint32_t> next{0};
  std::exception_ptr failure;
  std::mutex m;
  auto work = [&] {
    for (std::uint32_t i = next++; i < cfg.trajectories; i = next++) {
      try {
        Rng rng = make_rng(cfg.seed, {tag(Stream::trajectory), i});
        res.trajectories[i] = engine.run(cfg.duration, rng, i, cfg.record_lines);
      } catch (...) {
        std::lock_guard lock(m);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const unsigned n = std::min<unsigned>(n_workers, std::max<std::uint32_t>(cfg.trajectories, 1));
  if (n == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned k = 0; k < n; ++k) pool.emplace_back(work);
  }
  if (failure) std::rethrow_exception(failure);
  return res;
}

}  // namespace qdspin
