#pragma once

// Canned end-to-end experiments (simulate → detect → correlate → analyze)
// with machine-checkable expected-outcome manifests.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <numbers>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "correlator.hpp"
#include "detection.hpp"
#include "fit.hpp"
#include "io.hpp"
#include "plot.hpp"
#include "scheme.hpp"
#include "spectrum.hpp"
#include "spin.hpp"
#include "trajectory.hpp"

namespace qdspin::experiments {

class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what)
      : std::runtime_error("[" + stage + "] " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

enum class Op { greater, less, within_abs, within_rel };

inline const char* to_string(Op op) {
  switch (op) {
    case Op::greater: return ">";
    case Op::less: return "<";
    case Op::within_abs: return "within±";
    default: return "within±rel";
  }
}

/// One machine-checkable expectation. `provenance` says where the target
/// comes from: "published" (a reported measurement), "analytic" (computed
/// from the model), or "convention" (a threshold fixed by this project).
struct ManifestEntry {
  std::string id;
  std::string metric;
  Op op = Op::greater;
  double target = 0.0;
  double tolerance = 0.0;
  std::string provenance;
  std::string description;

  bool check(double v) const {
    if (!std::isfinite(v)) return false;
    switch (op) {
      case Op::greater: return v > target;
      case Op::less: return v < target;
      case Op::within_abs: return std::abs(v - target) <= tolerance;
      default: return std::abs(v - target) <= tolerance * std::abs(target);
    }
  }
};

struct ChannelSpec {
  std::string id;
  std::vector<std::string> transitions;
  Analyzer analyzer = Analyzer::none;
  DetectorPreset preset = kSpcm;
};

struct PairSpec {
  std::string name;
  std::string start;
  std::string stop;
  double window = 25.0;
  double bin_width = 0.025;
};

struct CurveSpec {
  std::string name;
  std::vector<std::string> co;
  std::vector<std::string> cross;
  bool fit = false;
};

enum class Analysis { spectrum, cascade, beat };

struct ExperimentPlan {
  std::string name;
  std::string description;
  std::vector<std::string> annotations;
  LevelScheme scheme;
  Analysis analysis = Analysis::cascade;
  std::uint32_t trajectories = 4;
  double duration = 0.0;             // ns per trajectory; 0 = derived from target_heralds
  std::uint64_t target_heralds = 0;  // total over the ensemble
  std::vector<std::string> record_transitions;  // empty = record every line
  std::vector<ChannelSpec> channels;
  std::vector<PairSpec> pairs;
  std::vector<CurveSpec> curves;
  FitOptions fit;
  std::vector<ManifestEntry> manifest;

  const ChannelSpec* channel(const std::string& id) const {
    for (const auto& c : channels)
      if (c.id == id) return &c;
    return nullptr;
  }
  const PairSpec* pair(const std::string& name) const {
    for (const auto& p : pairs)
      if (p.name == name) return &p;
    return nullptr;
  }

  /// Returns a list of problems; empty means the plan is runnable.
  std::vector<std::string> problems() const {
    std::vector<std::string> out;
    if (auto v = qdspin::validate(scheme); !v.empty())
      for (const auto& x : v) out.push_back("scheme: " + x.subject + " " + x.message);
    if (trajectories == 0) out.push_back("trajectories must be >= 1");
    if (!(duration > 0.0) && target_heralds == 0) out.push_back("either duration or target_heralds must be set");
    for (const auto& t : record_transitions)
      if (!scheme.transition_index(t)) out.push_back("record: unknown transition '" + t + "'");
    for (const auto& c : channels)
      for (const auto& t : c.transitions)
        if (!scheme.transition_index(t)) out.push_back("channel " + c.id + ": unknown transition '" + t + "'");
    for (const auto& p : pairs) {
      if (!channel(p.start)) out.push_back("pair " + p.name + ": unknown start channel '" + p.start + "'");
      if (!channel(p.stop)) out.push_back("pair " + p.name + ": unknown stop channel '" + p.stop + "'");
    }
    for (const auto& c : curves)
      for (const auto* group : {&c.co, &c.cross})
        for (const auto& p : *group)
          if (!pair(p)) out.push_back("curve " + c.name + ": unknown pair '" + p + "'");
    for (const auto& m : manifest)
      if (m.provenance.empty()) out.push_back("manifest " + m.id + ": missing provenance");
    return out;
  }
};

struct RunOptions {
  std::uint64_t seed = 1;
  unsigned workers = 1;
  std::optional<std::filesystem::path> out;  // write the result bundle here
  bool write_events = true;
  bool write_plots = true;
};

struct ManifestOutcome {
  ManifestEntry entry;
  double value = std::numeric_limits<double>::quiet_NaN();
  bool pass = false;
};

struct PlanResult {
  std::string plan;
  std::uint64_t seed = 0;
  std::map<std::string, CorrelationHistogram> histograms;
  std::map<std::string, Curve> curves;
  std::map<std::string, BeatFit> fits;
  std::optional<Spectrum> spectrum;
  std::map<std::string, double> metrics;
  std::vector<ManifestOutcome> outcomes;
  double simulated_ns = 0.0;
  double wall_seconds = 0.0;

  bool passed() const {
    return std::all_of(outcomes.begin(), outcomes.end(), [](const auto& o) { return o.pass; });
  }

  nlohmann::json report() const {
    nlohmann::json j;
    j["plan"] = plan;
    j["seed"] = seed;
    j["simulated_ns"] = simulated_ns;
    j["wall_seconds"] = wall_seconds;
    j["metrics"] = nlohmann::json::object();
    for (const auto& [k, v] : metrics) j["metrics"][k] = std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
    j["fits"] = nlohmann::json::object();
    for (const auto& [k, f] : fits) j["fits"][k] = io::fit_report(f);
    j["manifest"] = nlohmann::json::array();
    for (const auto& o : outcomes)
      j["manifest"].push_back({{"id", o.entry.id},
                               {"metric", o.entry.metric},
                               {"op", to_string(o.entry.op)},
                               {"target", o.entry.target},
                               {"tolerance", o.entry.tolerance},
                               {"provenance", o.entry.provenance},
                               {"description", o.entry.description},
                               {"value", std::isfinite(o.value) ? nlohmann::json(o.value) : nlohmann::json(nullptr)},
                               {"pass", o.pass}});
    j["passed"] = passed();
    return j;
  }
};

// ---------------------------------------------------------------------------
// Metrics helpers

/// Number of leading oscillation periods (from the fit start) in which the
/// fitted envelope at the end of the period exceeds 3× the RMS per-bin
/// standard error of the data in that period.
inline int resolved_cycles(const Curve& c, const BeatFit& f, double fit_start, int max_cycles = 30) {
  int n = 0;
  for (int k = 1; k <= max_cycles; ++k) {
    const double a = fit_start + (k - 1) * f.period;
    const double b = fit_start + k * f.period;
    double s2 = 0.0;
    int m = 0;
    for (std::size_t i = 0; i < c.size(); ++i) {
      if (!c.defined[i] || c.tau[i] < a || c.tau[i] >= b) continue;
      s2 += c.error[i] * c.error[i];
      ++m;
    }
    if (m == 0) break;
    const double rms = std::sqrt(s2 / m);
    const double env = f.amplitude * (std::isinf(f.damping_time) ? 1.0 : std::exp(-b / f.damping_time));
    if (!(env > 3.0 * rms)) break;
    ++n;
  }
  return n;
}

/// Deviation of a phase difference from π in units of the combined error.
inline double phase_reversal_sigma(const BeatFit& a, const BeatFit& b) {
  const double d = std::abs(wrap_phase(a.phase - b.phase));
  const double s = std::hypot(a.phase_err(), b.phase_err());
  return (std::numbers::pi - d) / s;
}

/// Aggregate C over a τ window from summed g² values.
inline double window_correlation(const CorrelationHistogram& co, const CorrelationHistogram& cross, double lo,
                                 double hi) {
  const auto a = co.normalized() ? co : normalize(co);
  const auto b = cross.normalized() ? cross : normalize(cross);
  double sa = 0.0, sb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double t = a.tau_center(k);
    if (t <= lo || t > hi) continue;
    sa += a.g2[k];
    sb += b.g2[k];
  }
  return correlation_degree(sa, sb);
}

inline double mean_g2(const CorrelationHistogram& h, double lo, double hi, bool symmetric = false) {
  const auto n = h.normalized() ? h : normalize(h);
  double s = 0.0;
  int m = 0;
  for (std::size_t k = 0; k < n.size(); ++k) {
    const double t = symmetric ? std::abs(n.tau_center(k)) : n.tau_center(k);
    if (t <= lo || t > hi) continue;
    s += n.g2[k];
    ++m;
  }
  return m ? s / m : std::numeric_limits<double>::quiet_NaN();
}

// ---------------------------------------------------------------------------
// Plan catalogue

namespace detail {

inline constexpr double kReferencePeriod = kPlanck / 5.0;  // ns, for a 5.0 μeV splitting

inline LevelScheme readout_scheme() {
  // Reduced excitation keeps the bright-exciton population and the
  // accidental background low during spin readout.
  LevelScheme s = default_scheme();
  s.transition("pump_X0").rate = 0.3;
  s.transition("pump_XX0").rate = 0.16;
  s.transition("pump_XX0_T0").rate = 0.08;
  s.transition("pump_XX0_T3").rate = 0.16;
  return s;
}

inline ExperimentPlan cascade_plan(std::string name, std::string first_line, bool singlet) {
  ExperimentPlan p;
  p.name = std::move(name);
  p.scheme = default_scheme();
  p.analysis = Analysis::cascade;
  p.trajectories = 4;
  p.duration = 4e6;
  p.record_transitions = {first_line, "X0"};
  p.annotations = {"excitation set so that the XX0 line carries half the X0 intensity (P = 9 μW)",
                   "SPCM detectors, 250 ps FWHM timing resolution"};
  p.channels = {{"first_V", {first_line}, Analyzer::V, kSpcm},
                {"x_V", {"X0"}, Analyzer::V, kSpcm},
                {"x_H", {"X0"}, Analyzer::H, kSpcm}};
  p.pairs = {{"VV", "first_V", "x_V"}, {"VH", "first_V", "x_H"}};
  p.curves = {{"C_HV", {"VV"}, {"VH"}, false}};
  if (singlet) {
    p.description = "XX0–X0 cascade: co-rectilinear bunching, C_HV > 0";
    p.manifest.push_back({"c_hv_positive", "c_hv_window", Op::greater, 0.2, 0.0, "published",
                          "positive degree of polarization correlation in the cascade window"});
  } else {
    p.description = "XX0_T0–X0 cascade: cross-rectilinear bunching, C_HV < 0";
    p.manifest.push_back({"c_hv_negative", "c_hv_window", Op::less, -0.2, 0.0, "published",
                          "negative degree of polarization correlation in the cascade window"});
  }
  p.manifest.push_back({"bunching", "bunching_ratio", Op::greater, 1.5, 0.0, "convention",
                        "strong bunching: g² at small positive τ above 1.5× the long-delay baseline"});
  return p;
}

inline ExperimentPlan beat_plan(std::string name, bool xplus) {
  ExperimentPlan p;
  p.name = std::move(name);
  p.scheme = readout_scheme();
  p.analysis = Analysis::beat;
  p.trajectories = 8;
  p.target_heralds = 10'000'000;
  p.record_transitions = {"XX0_T3", "X+", "X-"};
  p.annotations = {"X+ readout: P = 2.0 μW, λ = 877.2 nm, T = 17.7 K",
                   "X- readout: P = 1.8 μW, λ = 877.2 nm, T = 9.5 K",
                   "SSPD detectors, 90 ps FWHM timing resolution"};
  p.channels = {{"herald_R", {"XX0_T3"}, Analyzer::R, kSspd}, {"herald_L", {"XX0_T3"}, Analyzer::L, kSspd},
                {"xplus_R", {"X+"}, Analyzer::R, kSspd},      {"xplus_L", {"X+"}, Analyzer::L, kSspd},
                {"xminus_R", {"X-"}, Analyzer::R, kSspd},     {"xminus_L", {"X-"}, Analyzer::L, kSspd}};
  for (const std::string trion : {"xplus", "xminus"}) {
    for (const std::string a : {"R", "L"})
      for (const std::string b : {"R", "L"})
        p.pairs.push_back({trion + "_" + a + b, "herald_" + a, trion + "_" + b});
    p.curves.push_back({"C_RL_" + trion, {trion + "_RR", trion + "_LL"}, {trion + "_RL", trion + "_LR"}, true});
  }
  p.fit.fit_start = 0.1;
  p.fit.fit_end = 10.0;
  p.manifest.push_back({"heralds", "heralds", Op::greater, 999'999.5, 0.0, "convention",
                        "at least 10^6 heralded dark-exciton events"});
  const std::string t = xplus ? "xplus" : "xminus";
  p.manifest.push_back({"period", "period_ns_" + t, Op::within_rel, kReferencePeriod, 0.02, "published",
                        "precession period within 2% of h/5.0 μeV (published 0.82 ± 0.01 ns)"});
  p.manifest.push_back({"fss", "fss_ueV_" + t, Op::within_rel, 5.0, 0.02, "published",
                        "dark-exciton splitting within 2% of 5.0 μeV"});
  if (xplus) {
    p.description = "dark-exciton precession read out via X+ (co-circular start)";
    p.manifest.push_back({"cycles", "resolved_cycles_xplus", Op::greater, 3.5, 0.0, "published",
                          "at least 4 resolved precession cycles"});
  } else {
    p.description = "dark-exciton precession read out via X− (phase reversed vs X+)";
    p.manifest.push_back({"phase_reversal", "phase_reversal_sigma", Op::less, 3.0, 0.0, "published",
                          "fitted phases of X+ and X− readout differ by π within 3σ"});
  }
  return p;
}

inline ExperimentPlan spectrum_plan() {
  ExperimentPlan p;
  p.name = "fig1_spectrum";
  p.description = "polarization-resolved PL spectrum with rectilinear DOP";
  p.scheme = default_scheme();
  p.analysis = Analysis::spectrum;
  p.trajectories = 2;
  p.duration = 5e5;
  p.annotations = {"T = 7 K", "spectral resolution 25 μeV"};
  auto add = [&](std::string id, std::string metric, Op op, double target, double tol, std::string prov,
                 std::string desc) {
    p.manifest.push_back({std::move(id), std::move(metric), op, target, tol, std::move(prov), std::move(desc)});
  };
  add("x0_split", "x0_split_ueV", Op::within_abs, 36.0, 1.0, "published", "X0 doublet split by 36 ± 1 μeV");
  add("xx0_split", "xx0_split_ueV", Op::within_abs, 36.0, 1.0, "published", "XX0 doublet split by 36 ± 1 μeV");
  add("x0_peak_split", "x0_peak_split_ueV", Op::within_abs, 36.0, 1.0, "published",
      "H and V peaks of the broadened X0 line 36 ± 1 μeV apart");
  add("x0_dop_opposite", "x0_dop_product", Op::less, 0.0, 0.0, "published", "X0 components have opposite DOP");
  add("xx0_dop_opposite", "xx0_dop_product", Op::less, 0.0, 0.0, "published", "XX0 components have opposite DOP");
  add("xplus_unpolarized", "xplus_dop", Op::within_abs, 0.0, 0.05, "published", "X+ line unpolarized");
  add("xminus_unpolarized", "xminus_dop", Op::within_abs, 0.0, 0.05, "published", "X− line unpolarized");
  add("triplet_ratio_lo", "triplet_ratio_lo", Op::within_rel, 4.0, 0.3, "published",
      "unpolarized T±3 line ≈ 4× the lower cross-polarized T0 component");
  add("triplet_ratio_hi", "triplet_ratio_hi", Op::within_rel, 4.0, 0.3, "published",
      "unpolarized T±3 line ≈ 4× the upper cross-polarized T0 component");
  add("xx_x_ratio", "xx0_x0_ratio", Op::within_rel, 0.5, 0.2, "published",
      "XX0 line carries about half the X0 intensity");
  return p;
}

}  // namespace detail

struct PlanInfo {
  std::string name;
  std::string description;
};

inline std::vector<std::string> plan_names() {
  return {"fig1_spectrum", "fig2_singlet", "fig2_triplet", "fig3_xplus", "fig3_xminus"};
}

inline ExperimentPlan make_plan(const std::string& name) {
  if (name == "fig1_spectrum") return detail::spectrum_plan();
  if (name == "fig2_singlet") return detail::cascade_plan(name, "XX0", true);
  if (name == "fig2_triplet") return detail::cascade_plan(name, "XX0_T0", false);
  if (name == "fig3_xplus") return detail::beat_plan(name, true);
  if (name == "fig3_xminus") return detail::beat_plan(name, false);
  throw std::invalid_argument("unknown plan '" + name + "'");
}

inline std::vector<PlanInfo> list_plans() {
  std::vector<PlanInfo> out;
  for (const auto& n : plan_names()) out.push_back({n, make_plan(n).description});
  return out;
}

// ---------------------------------------------------------------------------
// Execution

namespace detail {

struct TrajectoryOutput {
  std::vector<PhotonEvent> events;
  std::uint64_t heralds = 0;
  std::map<std::string, DetectionStream> clicks;
  std::map<std::string, CorrelationHistogram> histograms;
};

inline double herald_rate(const LevelScheme& s) {
  const auto pi = stationary_distribution(s);
  double r = 0.0;
  const Engine e(s);
  for (std::size_t i = 0; i < s.transitions.size(); ++i)
    if (e.is_herald(i)) r += pi[*s.state_index(s.transitions[i].from)] * s.transitions[i].rate;
  return r;
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream f(p);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f << text;
}

}  // namespace detail

inline PlanResult run_plan(const ExperimentPlan& plan, const RunOptions& opt) {
  const auto wall0 = std::chrono::steady_clock::now();
  if (auto p = plan.problems(); !p.empty()) {
    std::string msg = "plan '" + plan.name + "' does not validate:";
    for (const auto& x : p) msg += "\n  " + x;
    throw StageError("plan", msg);
  }
  PlanResult res;
  res.plan = plan.name;
  res.seed = opt.seed;

  // Simulation settings.
  double duration = plan.duration;
  if (!(duration > 0.0)) {
    const double rate = detail::herald_rate(plan.scheme);
    if (!(rate > 0.0)) throw StageError("simulate", "scheme produces no heralds");
    duration = 1.03 * static_cast<double>(plan.target_heralds) / rate / plan.trajectories;
  }
  std::optional<std::vector<std::uint32_t>> record;
  if (!plan.record_transitions.empty()) {
    record.emplace();
    for (const auto& t : plan.record_transitions)
      for (auto l : lines_of(plan.scheme, t)) record->push_back(l);
  }
  std::vector<DetectorChannel> channels;
  for (const auto& c : plan.channels) {
    std::vector<std::uint32_t> lines;
    for (const auto& t : c.transitions)
      for (auto l : lines_of(plan.scheme, t)) lines.push_back(l);
    channels.push_back(make_channel(c.id, lines, c.analyzer, c.preset));
  }

  const Engine engine(plan.scheme);
  const bool keep_events = (opt.out && opt.write_events) || plan.analysis == Analysis::spectrum;
  std::vector<detail::TrajectoryOutput> outs(plan.trajectories);

  auto run_one = [&](std::uint32_t i) {
    auto& o = outs[i];
    TrajectoryResult tr;
    try {
      Rng rng = make_rng(opt.seed, {tag(Stream::trajectory), i});
      tr = engine.run(duration, rng, i, record);
    } catch (const std::exception& e) {
      throw StageError("simulate", e.what());
    }
    o.heralds = tr.heralds;
    try {
      for (std::size_t c = 0; c < channels.size(); ++c) {
        Rng rng = make_rng(opt.seed, {tag(Stream::detection), i, c});
        o.clicks[channels[c].id] = apply_detector(tr.events, channels[c], rng, TimeSpan{0.0, duration});
      }
    } catch (const std::exception& e) {
      throw StageError("detect", e.what());
    }
    try {
      for (const auto& p : plan.pairs) {
        CorrelationPair cp{p.start, p.stop, p.window, p.bin_width};
        o.histograms[p.name] = cross_correlate(o.clicks[p.start].t, o.clicks[p.stop].t, cp, duration);
      }
    } catch (const std::exception& e) {
      throw StageError("correlate", e.what());
    }
    if (keep_events) o.events = std::move(tr.events);
    if (!opt.out) o.clicks.clear();
  };

  {
    std::atomic<std::uint32_t> next{0};
    std::exception_ptr failure;
    std::mutex m;
    auto work = [&] {
      for (std::uint32_t i = next++; i < plan.trajectories; i = next++) {
        try {
          run_one(i);
        } catch (...) {
          std::lock_guard lock(m);
          if (!failure) failure = std::current_exception();
        }
      }
    };
    const unsigned n = std::max(1u, std::min<unsigned>(opt.workers, plan.trajectories));
    if (n == 1) {
      work();
    } else {
      std::vector<std::jthread> pool;
      for (unsigned k = 0; k < n; ++k) pool.emplace_back(work);
    }
    if (failure) std::rethrow_exception(failure);
  }

  res.simulated_ns = duration * plan.trajectories;
  double heralds = 0.0;
  for (const auto& o : outs) heralds += static_cast<double>(o.heralds);
  res.metrics["heralds"] = heralds;

  // Merge histograms in trajectory order.
  for (const auto& p : plan.pairs) {
    CorrelationHistogram h = outs[0].histograms.at(p.name);
    for (std::uint32_t i = 1; i < plan.trajectories; ++i) h = merge(h, outs[i].histograms.at(p.name));
    if (h.n_start == 0 || h.n_stop == 0) throw StageError("correlate", "pair " + p.name + " has an empty channel");
    res.histograms[p.name] = normalize(std::move(h));
  }

  // Analysis.
  try {
    for (const auto& c : plan.curves) {
      std::vector<CorrelationHistogram> co, cross;
      for (const auto& n : c.co) co.push_back(res.histograms.at(n));
      for (const auto& n : c.cross) cross.push_back(res.histograms.at(n));
      res.curves[c.name] = degree_of_correlation(co, cross);
      if (c.fit) res.fits[c.name] = fit_damped_cosine(res.curves[c.name], std::nullopt, plan.fit);
    }

    if (plan.analysis == Analysis::cascade) {
      const auto& co = res.histograms.at("VV");
      const auto& cross = res.histograms.at("VH");
      res.metrics["c_hv_window"] = window_correlation(co, cross, 0.0, 1.0);
      // Unpolarized-equivalent g²: average of the co and cross analyzers.
      const double peak = 0.5 * (mean_g2(co, 0.0, 0.5) + mean_g2(cross, 0.0, 0.5));
      const double base = 0.5 * (mean_g2(co, 15.0, 25.0, true) + mean_g2(cross, 15.0, 25.0, true));
      res.metrics["g2_peak"] = peak;
      res.metrics["g2_baseline"] = base;
      res.metrics["bunching_ratio"] = peak / base;
    } else if (plan.analysis == Analysis::beat) {
      for (const std::string t : {"xplus", "xminus"}) {
        const auto& f = res.fits.at("C_RL_" + t);
        res.metrics["period_ns_" + t] = f.period;
        res.metrics["period_err_ns_" + t] = f.period_err();
        res.metrics["fss_ueV_" + t] = f.fss ? *f.fss : std::numeric_limits<double>::quiet_NaN();
        res.metrics["phase_" + t] = f.phase;
        res.metrics["amplitude_" + t] = f.amplitude;
        res.metrics["damping_time_ns_" + t] = f.damping_time;
        res.metrics["resolved_cycles_" + t] = resolved_cycles(res.curves.at("C_RL_" + t), f, plan.fit.fit_start);
      }
      res.metrics["phase_reversal_sigma"] = phase_reversal_sigma(res.fits.at("C_RL_xplus"), res.fits.at("C_RL_xminus"));
      double detected = 0.0;
      for (const auto& o : outs)
        for (const auto& [id, s] : o.clicks)
          if (id.starts_with("herald_")) detected += static_cast<double>(s.t.size());
      if (opt.out) res.metrics["detected_heralds"] = detected;
    } else {
      std::vector<PhotonEvent> all;
      for (const auto& o : outs) all.insert(all.end(), o.events.begin(), o.events.end());
      Rng rng = make_rng(opt.seed, {tag(Stream::detection), 0xffff});
      res.spectrum = synth_spectrum(plan.scheme, all, res.simulated_ns, 25.0, rng);
      const auto& sp = *res.spectrum;
      const auto& s = plan.scheme;
      auto line = [&](const std::string& t, Branch b) -> const SpectrumLine& {
        const auto* l = sp.find(line_id(*s.transition_index(t), b));
        if (!l) throw std::runtime_error("missing line " + t);
        return *l;
      };
      for (const std::string t : {"X0", "XX0"}) {
        const auto& lo = line(t, Branch::lower);
        const auto& hi = line(t, Branch::upper);
        const std::string key = t == "X0" ? "x0" : "xx0";
        res.metrics[key + "_split_ueV"] = hi.center - lo.center;
        res.metrics[key + "_dop_lower"] = lo.dop();
        res.metrics[key + "_dop_upper"] = hi.dop();
        res.metrics[key + "_dop_product"] = lo.dop() * hi.dop();
      }
      const double x0c = *s.transition("X0").photon_energy;
      const double ph = peak_position(sp.energy, sp.I_H, x0c, 30.0);
      const double pv = peak_position(sp.energy, sp.I_V, x0c, 30.0);
      res.metrics["x0_peak_split_ueV"] = std::abs(ph - pv);
      res.metrics["xplus_dop"] = line("X+", Branch::center).dop();
      res.metrics["xminus_dop"] = line("X-", Branch::center).dop();
      const double t3 = line("XX0_T3", Branch::center).total();
      res.metrics["triplet_ratio_lo"] = t3 / line("XX0_T0", Branch::lower).total();
      res.metrics["triplet_ratio_hi"] = t3 / line("XX0_T0", Branch::upper).total();
      const double x0 = line("X0", Branch::lower).total() + line("X0", Branch::upper).total();
      const double xx0 = line("XX0", Branch::lower).total() + line("XX0", Branch::upper).total();
      res.metrics["xx0_x0_ratio"] = xx0 / x0;
    }
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError("analyze", e.what());
  }

  for (const auto& m : plan.manifest) {
    ManifestOutcome o{m};
    if (auto it = res.metrics.find(m.metric); it != res.metrics.end()) o.value = it->second;
    o.pass = m.check(o.value);
    res.outcomes.push_back(std::move(o));
  }
  res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();

  if (opt.out) {
    namespace fs = std::filesystem;
    try {
      const fs::path root = *opt.out;
      for (const char* d : {"channels", "histograms", "curves", "fits"}) fs::create_directories(root / d);
      if (opt.write_events) fs::create_directories(root / "events");
      if (opt.write_plots) fs::create_directories(root / "plots");
      if (opt.write_events) {
        std::vector<PhotonEvent> all;
        for (const auto& o : outs) all.insert(all.end(), o.events.begin(), o.events.end());
        io::write_events((root / "events" / "events.bin").string(), all);
      }
      // Channel files: trajectories laid end to end on one timeline.
      for (const auto& ch : channels) {
        DetectionStream s{ch.id, {}};
        for (std::uint32_t i = 0; i < plan.trajectories; ++i)
          for (double t : outs[i].clicks[ch.id].t) s.t.push_back(t + i * duration);
        io::write_detections((root / "channels" / (ch.id + ".bin")).string(), s,
                             {0.0, duration * plan.trajectories});
      }
      for (const auto& [name, h] : res.histograms) {
        const auto* p = plan.pair(name);
        std::ofstream f(root / "histograms" / (name + ".csv"));
        io::write_histogram_csv(f, h, {{"start", p->start}, {"stop", p->stop}});
        if (opt.write_plots) {
          std::ostringstream os;
          io::write_histogram_csv(os, h);
          std::istringstream is(os.str());
          detail::write_text(root / "plots" / (name + ".svg"),
                             plot::render(io::read_csv(is), plot::Kind::histogram, plan.name + " " + name));
        }
      }
      for (const auto& [name, c] : res.curves) {
        {
          std::ofstream f(root / "curves" / (name + ".csv"));
          io::write_curve_csv(f, c, {{"plan", plan.name}});
        }
        if (opt.write_plots) {
          std::ostringstream os;
          io::write_curve_csv(os, c);
          std::istringstream is(os.str());
          detail::write_text(root / "plots" / (name + ".svg"),
                             plot::render(io::read_csv(is), plot::Kind::curve, plan.name + " " + name));
        }
      }
      for (const auto& [name, f] : res.fits) detail::write_text(root / "fits" / (name + ".json"), io::fit_report(f).dump(2));
      if (res.spectrum) {
        std::ostringstream os;
        io::write_spectrum_csv(os, *res.spectrum, &plan.scheme);
        detail::write_text(root / "spectrum.csv", os.str());
        if (opt.write_plots) {
          std::istringstream is(os.str());
          detail::write_text(root / "plots" / "spectrum.svg",
                             plot::render(io::read_csv(is), plot::Kind::spectrum, plan.name));
        }
      }
      auto rep = res.report();
      rep["annotations"] = plan.annotations;
      rep["description"] = plan.description;
      detail::write_text(root / "report.json", rep.dump(2));
      std::ostringstream txt;
      txt << "plan " << plan.name << " (seed " << opt.seed << "): " << plan.description << "\n";
      for (const auto& o : res.outcomes)
        txt << (o.pass ? "PASS " : "FAIL ") << o.entry.id << ": " << o.entry.metric << " = " << o.value << " "
            << to_string(o.entry.op) << " " << o.entry.target
            << (o.entry.tolerance != 0.0 ? " (tol " + std::to_string(o.entry.tolerance) + ")" : "") << "  ["
            << o.entry.provenance << "]\n";
      detail::write_text(root / "report.txt", txt.str());
    } catch (const std::exception& e) {
      throw StageError("write", e.what());
    }
  }
  return res;
}

}  // namespace qdspin::experiments
