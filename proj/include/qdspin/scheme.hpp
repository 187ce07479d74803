#pragma once

// Quantum-dot level scheme: states, transitions, rates, photon energies and
// polarization selection rules, plus JSON (de)serialization and validation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <queue>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace qdspin {

enum class StateKind {
  ground,
  bright_exciton,
  dark_exciton,
  excited_exciton,
  excited_dark_exciton,
  biexciton_singlet,
  biexciton_triplet0,
  biexciton_triplet3,
  trion_positive,
  trion_negative,
  single_electron,
  single_hole,
};

enum class PolarizationRule {
  rectilinear_co,
  rectilinear_cross,
  circular_spin_correlated,
  unpolarized,
  none,
};

NLOHMANN_JSON_SERIALIZE_ENUM(StateKind, {
                                            {StateKind::ground, "ground"},
                                            {StateKind::bright_exciton, "bright-exciton"},
                                            {StateKind::dark_exciton, "dark-exciton"},
                                            {StateKind::excited_exciton, "excited-exciton"},
                                            {StateKind::excited_dark_exciton, "excited-dark-exciton"},
                                            {StateKind::biexciton_singlet, "biexciton-singlet"},
                                            {StateKind::biexciton_triplet0, "biexciton-triplet0"},
                                            {StateKind::biexciton_triplet3, "biexciton-triplet±3"},
                                            {StateKind::trion_positive, "trion-positive"},
                                            {StateKind::trion_negative, "trion-negative"},
                                            {StateKind::single_electron, "single-electron"},
                                            {StateKind::single_hole, "single-hole"},
                                        })

NLOHMANN_JSON_SERIALIZE_ENUM(PolarizationRule, {
                                                   {PolarizationRule::rectilinear_co, "rectilinear-co"},
                                                   {PolarizationRule::rectilinear_cross, "rectilinear-cross"},
                                                   {PolarizationRule::circular_spin_correlated,
                                                    "circular-spin-correlated"},
                                                   {PolarizationRule::unpolarized, "unpolarized"},
                                                   {PolarizationRule::none, "none"},
                                               })

inline bool is_doublet(StateKind k) {
  return k == StateKind::bright_exciton || k == StateKind::excited_exciton;
}

inline bool is_trion(StateKind k) {
  return k == StateKind::trion_positive || k == StateKind::trion_negative;
}

struct QDState {
  std::string id;
  StateKind kind = StateKind::ground;
  bool carries_spin = false;

  bool operator==(const QDState&) const = default;
};

struct Transition {
  std::string id;
  std::string from;
  std::string to;
  double rate = 0.0;  // 1/ns
  bool radiative = false;
  std::optional<double> photon_energy;  // μeV offset from reference_energy
  PolarizationRule polarization_rule = PolarizationRule::none;
  int readout_sign = 0;  // ±1 on trion radiative decays, 0 elsewhere

  bool operator==(const Transition&) const = default;
};

struct LevelScheme {
  std::vector<QDState> states;
  std::vector<Transition> transitions;
  double fss_bright = 0.0;            // μeV
  double fss_dark = 0.0;              // μeV
  double spin_dephasing_time = 0.0;   // ns, +inf for none
  double reference_energy = 1.3395;   // eV
  double cascade_fidelity = 1.0;      // probability the second cascade photon obeys the ideal rule

  bool operator==(const LevelScheme&) const = default;

  std::optional<std::size_t> state_index(std::string_view id) const {
    for (std::size_t i = 0; i < states.size(); ++i)
      if (states[i].id == id) return i;
    return std::nullopt;
  }

  std::optional<std::size_t> transition_index(std::string_view id) const {
    for (std::size_t i = 0; i < transitions.size(); ++i)
      if (transitions[i].id == id) return i;
    return std::nullopt;
  }

  const QDState& state(std::string_view id) const {
    auto i = state_index(id);
    if (!i) throw std::out_of_range("unknown state '" + std::string(id) + "'");
    return states[*i];
  }

  Transition& transition(std::string_view id) {
    auto i = transition_index(id);
    if (!i) throw std::out_of_range("unknown transition '" + std::string(id) + "'");
    return transitions[*i];
  }

  const Transition& transition(std::string_view id) const {
    return const_cast<LevelScheme*>(this)->transition(id);
  }

  void remove_transition(std::string_view id) {
    std::erase_if(transitions, [&](const Transition& t) { return t.id == id; });
  }
};

// ---------------------------------------------------------------------------
// Errors

struct Violation {
  std::string subject;  // state or transition id
  std::string rule;     // short rule name
  std::string message;
};

class SchemeError : public std::runtime_error {
 public:
  SchemeError(std::string path, const std::string& what)
      : std::runtime_error(path.empty() ? what : path + ": " + what), path_(std::move(path)) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

class SchemeValidationError : public std::runtime_error {
 public:
  explicit SchemeValidationError(std::vector<Violation> v)
      : std::runtime_error(format(v)), violations_(std::move(v)) {}
  const std::vector<Violation>& violations() const { return violations_; }

 private:
  static std::string format(const std::vector<Violation>& v) {
    std::string s = "scheme has " + std::to_string(v.size()) + " violation(s)";
    for (const auto& x : v) s += "\n  " + x.subject + " [" + x.rule + "]: " + x.message;
    return s;
  }
  std::vector<Violation> violations_;
};

// ---------------------------------------------------------------------------
// Validation

namespace detail {

inline bool fed_by_spin_state(const LevelScheme& s, const std::string& trion) {
  for (const auto& t : s.transitions) {
    if (t.to != trion) continue;
    auto i = s.state_index(t.from);
    if (i && s.states[*i].carries_spin) return true;
  }
  return false;
}

}  // namespace detail

/// Checks every structural invariant of the scheme. Violations are data, not
/// errors: an empty result means the scheme is usable by the engine.
inline std::vector<Violation> validate(const LevelScheme& s) {
  std::vector<Violation> out;
  auto add = [&](std::string subject, std::string rule, std::string msg) {
    out.push_back({std::move(subject), std::move(rule), std::move(msg)});
  };

  std::map<std::string, int> seen;
  int grounds = 0, spins = 0;
  for (const auto& st : s.states) {
    if (++seen[st.id] == 2) add(st.id, "unique-id", "duplicate state id");
    if (st.kind == StateKind::ground) ++grounds;
    if (st.carries_spin) {
      ++spins;
      if (st.kind != StateKind::dark_exciton) add(st.id, "spin-carrier", "only a dark-exciton state may carry spin");
    }
  }
  if (grounds != 1) add("<scheme>", "single-ground", "expected exactly one ground state, found " + std::to_string(grounds));
  if (spins > 1) add("<scheme>", "single-spin-carrier", "more than one state carries spin");
  if (!(s.fss_bright >= 0.0)) add("<scheme>", "fss", "fss_bright must be >= 0");
  if (!(s.fss_dark >= 0.0)) add("<scheme>", "fss", "fss_dark must be >= 0");
  if (!(s.spin_dephasing_time > 0.0)) add("<scheme>", "dephasing", "spin_dephasing_time must be > 0");
  if (!(s.cascade_fidelity >= 0.5 && s.cascade_fidelity <= 1.0))
    add("<scheme>", "fidelity", "cascade_fidelity must lie in [0.5, 1]");

  std::map<std::string, int> tseen;
  for (const auto& t : s.transitions) {
    if (++tseen[t.id] == 2) add(t.id, "unique-id", "duplicate transition id");
    auto fi = s.state_index(t.from);
    auto ti = s.state_index(t.to);
    if (!fi) add(t.id, "dangling", "unknown source state '" + t.from + "'");
    if (!ti) add(t.id, "dangling", "unknown target state '" + t.to + "'");
    if (!(t.rate > 0.0) || !std::isfinite(t.rate)) add(t.id, "rate", "rate must be finite and > 0");
    if (t.radiative != t.photon_energy.has_value())
      add(t.id, "photon-energy", "photon_energy must be present iff the transition is radiative");
    if (t.radiative == (t.polarization_rule == PolarizationRule::none))
      add(t.id, "polarization", "polarization_rule must be 'none' iff the transition is non-radiative");
    const bool trion_decay = fi && is_trion(s.states[*fi].kind) && t.radiative;
    if (trion_decay ? (t.readout_sign != 1 && t.readout_sign != -1) : t.readout_sign != 0)
      add(t.id, "readout-sign", "readout_sign must be ±1 on trion radiative decays and 0 elsewhere");
    if (t.polarization_rule == PolarizationRule::circular_spin_correlated && fi && ti) {
      const auto& a = s.states[*fi];
      const auto& b = s.states[*ti];
      const bool ok = a.carries_spin || b.carries_spin || b.kind == StateKind::excited_dark_exciton ||
                      (is_trion(a.kind) && detail::fed_by_spin_state(s, a.id));
      if (!ok) add(t.id, "circular", "circular-spin-correlated rule only applies around the spin-carrying state");
    }
  }

  // Connectivity (undirected) and outgoing arcs.
  const auto n = s.states.size();
  if (n > 0) {
    std::vector<std::vector<std::size_t>> adj(n);
    std::vector<int> outgoing(n, 0);
    for (const auto& t : s.transitions) {
      auto fi = s.state_index(t.from);
      auto ti = s.state_index(t.to);
      if (!fi || !ti) continue;
      adj[*fi].push_back(*ti);
      adj[*ti].push_back(*fi);
      ++outgoing[*fi];
    }
    std::vector<bool> seen_state(n, false);
    std::queue<std::size_t> q;
    q.push(0);
    seen_state[0] = true;
    while (!q.empty()) {
      auto u = q.front();
      q.pop();
      for (auto v : adj[u])
        if (!seen_state[v]) {
          seen_state[v] = true;
          q.push(v);
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (!seen_state[i]) add(s.states[i].id, "connected", "state is disconnected from the scheme");
      if (s.states[i].kind != StateKind::ground && outgoing[i] == 0)
        add(s.states[i].id, "outgoing", "non-ground state has no outgoing transition");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Spectral lines
//
// A radiative transition touching a bright-exciton doublet produces two
// lines split by fss_bright; every other radiative transition produces one.
// Line ids pack the transition index and the energy branch.

enum class Branch : std::uint32_t { center = 0, lower = 1, upper = 2 };

inline constexpr std::uint32_t line_id(std::size_t transition, Branch b) {
  return static_cast<std::uint32_t>(transition) * 4u + static_cast<std::uint32_t>(b);
}
inline constexpr std::size_t line_transition(std::uint32_t line) { return line / 4u; }
inline constexpr Branch line_branch(std::uint32_t line) { return static_cast<Branch>(line % 4u); }

inline bool is_split(const LevelScheme& s, const Transition& t) {
  if (!t.radiative) return false;
  if (t.polarization_rule != PolarizationRule::rectilinear_co &&
      t.polarization_rule != PolarizationRule::rectilinear_cross)
    return false;
  auto fi = s.state_index(t.from);
  auto ti = s.state_index(t.to);
  return (fi && is_doublet(s.states[*fi].kind)) || (ti && is_doublet(s.states[*ti].kind));
}

/// All line ids belonging to one radiative transition.
inline std::vector<std::uint32_t> lines_of(const LevelScheme& s, std::string_view transition_id) {
  auto i = s.transition_index(transition_id);
  if (!i) throw std::out_of_range("unknown transition '" + std::string(transition_id) + "'");
  const auto& t = s.transitions[*i];
  if (!t.radiative) return {};
  if (is_split(s, t)) return {line_id(*i, Branch::lower), line_id(*i, Branch::upper)};
  return {line_id(*i, Branch::center)};
}

/// Photon energy of a line in μeV offset.
inline double line_energy(const LevelScheme& s, std::uint32_t line) {
  const auto& t = s.transitions.at(line_transition(line));
  const double c = t.photon_energy.value_or(0.0);
  switch (line_branch(line)) {
    case Branch::lower: return c - 0.5 * s.fss_bright;
    case Branch::upper: return c + 0.5 * s.fss_bright;
    default: return c;
  }
}

inline std::string line_label(const LevelScheme& s, std::uint32_t line) {
  std::string l = s.transitions.at(line_transition(line)).id;
  switch (line_branch(line)) {
    case Branch::lower: return l + "/lo";
    case Branch::upper: return l + "/hi";
    default: return l;
  }
}

inline std::vector<std::uint32_t> all_lines(const LevelScheme& s) {
  std::vector<std::uint32_t> out;
  for (const auto& t : s.transitions)
    for (auto l : lines_of(s, t.id)) out.push_back(l);
  return out;
}

// ---------------------------------------------------------------------------
// Markov structure

/// Generator matrix Q (row = source) of the scheme's continuous-time chain.
inline Eigen::MatrixXd rate_matrix(const LevelScheme& s) {
  const auto n = static_cast<Eigen::Index>(s.states.size());
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(n, n);
  for (const auto& t : s.transitions) {
    auto a = static_cast<Eigen::Index>(*s.state_index(t.from));
    auto b = static_cast<Eigen::Index>(*s.state_index(t.to));
    q(a, b) += t.rate;
    q(a, a) -= t.rate;
  }
  return q;
}

/// Stationary distribution π with πQ = 0, Σπ = 1.
inline std::vector<double> stationary_distribution(const LevelScheme& s) {
  const Eigen::MatrixXd q = rate_matrix(s);
  const auto n = q.rows();
  Eigen::MatrixXd a(n + 1, n);
  a.topRows(n) = q.transpose();
  a.row(n).setOnes();
  Eigen::VectorXd b = Eigen::VectorXd::Zero(n + 1);
  b(n) = 1.0;
  const Eigen::VectorXd pi = a.colPivHouseholderQr().solve(b);
  return {pi.data(), pi.data() + n};
}

/// Stationary photon flux (1/ns) through a transition.
inline double stationary_flux(const LevelScheme& s, const std::vector<double>& pi, std::string_view transition_id) {
  const auto& t = s.transition(transition_id);
  return pi[*s.state_index(t.from)] * t.rate;
}

// ---------------------------------------------------------------------------
// JSON

namespace detail {

template <class T>
T require(const nlohmann::json& j, const char* key, const std::string& path) {
  if (!j.is_object() || !j.contains(key)) throw SchemeError(path + "." + key, "missing required field");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemeError(path + "." + key, std::string("bad value: ") + e.what());
  }
}

template <class T>
T optional_field(const nlohmann::json& j, const char* key, const std::string& path, T fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  return require<T>(j, key, path);
}

inline double parse_time(const nlohmann::json& j, const char* key, const std::string& path, double fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (v.is_string() && (v == "inf" || v == "infinity")) return std::numeric_limits<double>::infinity();
  return require<double>(j, key, path);
}

}  // namespace detail

inline nlohmann::json to_json(const LevelScheme& s) {
  nlohmann::json j;
  j["constants"] = {
      {"fss_bright_ueV", s.fss_bright},
      {"fss_dark_ueV", s.fss_dark},
      {"reference_energy_eV", s.reference_energy},
      {"cascade_fidelity", s.cascade_fidelity},
  };
  if (std::isinf(s.spin_dephasing_time))
    j["constants"]["spin_dephasing_time_ns"] = "inf";
  else
    j["constants"]["spin_dephasing_time_ns"] = s.spin_dephasing_time;
  j["states"] = nlohmann::json::array();
  for (const auto& st : s.states)
    j["states"].push_back({{"id", st.id}, {"kind", st.kind}, {"carries_spin", st.carries_spin}});
  j["transitions"] = nlohmann::json::array();
  for (const auto& t : s.transitions) {
    nlohmann::json x = {{"id", t.id},
                        {"from", t.from},
                        {"to", t.to},
                        {"rate_per_ns", t.rate},
                        {"radiative", t.radiative},
                        {"polarization_rule", t.polarization_rule}};
    if (t.photon_energy) x["photon_energy_ueV"] = *t.photon_energy;
    if (t.readout_sign != 0) x["readout_sign"] = t.readout_sign;
    j["transitions"].push_back(std::move(x));
  }
  return j;
}

/// Parses a scheme config document. Structural errors (missing fields,
/// dangling references, negative rates, radiative arcs without energy) throw
/// SchemeError naming the offending path; remaining invariant violations
/// throw SchemeValidationError.
inline LevelScheme build_scheme(const nlohmann::json& j) {
  using detail::require;
  if (!j.is_object()) throw SchemeError("$", "config root must be an object");
  LevelScheme s;
  const nlohmann::json consts = j.value("constants", nlohmann::json::object());
  const std::string cp = "$.constants";
  s.fss_bright = detail::optional_field<double>(consts, "fss_bright_ueV", cp, 0.0);
  s.fss_dark = detail::optional_field<double>(consts, "fss_dark_ueV", cp, 0.0);
  s.reference_energy = detail::optional_field<double>(consts, "reference_energy_eV", cp, 1.3395);
  s.cascade_fidelity = detail::optional_field<double>(consts, "cascade_fidelity", cp, 1.0);
  s.spin_dephasing_time =
      detail::parse_time(consts, "spin_dephasing_time_ns", cp, std::numeric_limits<double>::infinity());

  if (!j.contains("states") || !j["states"].is_array()) throw SchemeError("$.states", "missing states array");
  for (std::size_t i = 0; i < j["states"].size(); ++i) {
    const auto& x = j["states"][i];
    const std::string p = "$.states[" + std::to_string(i) + "]";
    QDState st;
    st.id = require<std::string>(x, "id", p);
    st.kind = require<StateKind>(x, "kind", p);
    if (x.contains("kind") && x["kind"].is_string()) {
      // nlohmann maps unknown enum strings to the first entry; reject them.
      if (nlohmann::json(st.kind) != x["kind"]) throw SchemeError(p + ".kind", "unknown state kind " + x["kind"].dump());
    }
    st.carries_spin = detail::optional_field<bool>(x, "carries_spin", p, false);
    s.states.push_back(std::move(st));
  }

  if (!j.contains("transitions") || !j["transitions"].is_array())
    throw SchemeError("$.transitions", "missing transitions array");
  for (std::size_t i = 0; i < j["transitions"].size(); ++i) {
    const auto& x = j["transitions"][i];
    const std::string p = "$.transitions[" + std::to_string(i) + "]";
    Transition t;
    t.from = require<std::string>(x, "from", p);
    t.to = require<std::string>(x, "to", p);
    t.id = detail::optional_field<std::string>(x, "id", p, t.from + "->" + t.to);
    const std::string pid = p + " (" + t.id + ")";
    if (!s.state_index(t.from)) throw SchemeError(pid + ".from", "dangling state reference '" + t.from + "'");
    if (!s.state_index(t.to)) throw SchemeError(pid + ".to", "dangling state reference '" + t.to + "'");
    t.rate = require<double>(x, "rate_per_ns", p);
    if (t.rate < 0.0) throw SchemeError(pid + ".rate_per_ns", "negative rate " + std::to_string(t.rate));
    t.radiative = require<bool>(x, "radiative", p);
    if (x.contains("photon_energy_ueV")) t.photon_energy = require<double>(x, "photon_energy_ueV", p);
    if (t.radiative && !t.photon_energy)
      throw SchemeError(pid + ".photon_energy_ueV", "radiative transition without photon energy");
    t.polarization_rule = detail::optional_field<PolarizationRule>(
        x, "polarization_rule", p, t.radiative ? PolarizationRule::unpolarized : PolarizationRule::none);
    if (x.contains("polarization_rule") && nlohmann::json(t.polarization_rule) != x["polarization_rule"])
      throw SchemeError(pid + ".polarization_rule", "unknown rule " + x["polarization_rule"].dump());
    t.readout_sign = detail::optional_field<int>(x, "readout_sign", p, 0);
    s.transitions.push_back(std::move(t));
  }

  if (auto v = validate(s); !v.empty()) throw SchemeValidationError(std::move(v));
  return s;
}

// ---------------------------------------------------------------------------
// Default scheme

/// The cascade level scheme of a neutral InGaAs quantum dot with its
/// spin-blockaded triplet biexcitons, dark exciton and both trions.
/// Energies are μeV offsets from the triplet line at 1.3395 eV.
inline LevelScheme default_scheme() {
  LevelScheme s;
  s.fss_bright = 36.0;
  s.fss_dark = 5.0;
  s.spin_dephasing_time = 3.0;
  s.reference_energy = 1.3395;
  s.cascade_fidelity = 0.9;

  s.states = {
      {"G", StateKind::ground, false},
      {"X0", StateKind::bright_exciton, false},
      {"XX0", StateKind::biexciton_singlet, false},
      {"XX0_T0", StateKind::biexciton_triplet0, false},
      {"XX0_T3", StateKind::biexciton_triplet3, false},
      {"X0*", StateKind::excited_exciton, false},
      {"DE*", StateKind::excited_dark_exciton, false},
      {"DE", StateKind::dark_exciton, true},
      {"X+", StateKind::trion_positive, false},
      {"X-", StateKind::trion_negative, false},
      {"h", StateKind::single_hole, false},
      {"e", StateKind::single_electron, false},
  };

  const double pump_x = 1.0;         // G -> X0
  const double pump_xx = 1.25;       // X0 -> any biexciton
  const double singlet = 0.4, t0 = 0.2, t3 = 0.4;
  auto nonrad = [](std::string id, std::string a, std::string b, double r) {
    return Transition{std::move(id), std::move(a), std::move(b), r, false, std::nullopt, PolarizationRule::none, 0};
  };
  auto rad = [](std::string id, std::string a, std::string b, double r, double e, PolarizationRule p, int sign = 0) {
    return Transition{std::move(id), std::move(a), std::move(b), r, true, e, p, sign};
  };
  s.transitions = {
      nonrad("pump_X0", "G", "X0", pump_x),
      rad("X0", "X0", "G", 1.0, 6000.0, PolarizationRule::rectilinear_co),
      nonrad("pump_XX0", "X0", "XX0", pump_xx * singlet),
      nonrad("pump_XX0_T0", "X0", "XX0_T0", pump_xx * t0),
      nonrad("pump_XX0_T3", "X0", "XX0_T3", pump_xx * t3),
      rad("XX0", "XX0", "X0", 2.0, 3500.0, PolarizationRule::rectilinear_co),
      rad("XX0_T0", "XX0_T0", "X0*", 2.0, 0.0, PolarizationRule::rectilinear_cross),
      nonrad("relax_X0*", "X0*", "X0", 100.0),
      rad("XX0_T3", "XX0_T3", "DE*", 2.0, 0.0, PolarizationRule::circular_spin_correlated),
      nonrad("relax_DE*", "DE*", "DE", 100.0),
      rad("DE", "DE", "G", 0.001, 5700.0, PolarizationRule::unpolarized),
      nonrad("charge_X+", "DE", "X+", 0.5),
      nonrad("charge_X-", "DE", "X-", 0.5),
      rad("X+", "X+", "h", 10.0, 4800.0, PolarizationRule::circular_spin_correlated, +1),
      rad("X-", "X-", "e", 10.0, 2000.0, PolarizationRule::circular_spin_correlated, -1),
      nonrad("neutralize_h", "h", "G", 1.0),
      nonrad("neutralize_e", "e", "G", 1.0),
  };
  return s;
}

}  // namespace qdspin
