#pragma once

// On-disk formats.
//
// Event stream (binary, little-endian):
//   header  "QDEV" | u32 version=1 | u64 count
//   record  f64 t_ns | u32 line | u8 pol | u32 trajectory_id      (17 bytes, packed)
//
// Detection stream (binary, little-endian):
//   header  "QDDR" | u32 version=1 | u32 id_len | id bytes | f64 span_begin_ns |
//           f64 span_end_ns | u64 count
//   record  f64 t_ns
//
// Text formats (CSV with '#'-prefixed metadata lines):
//   histogram  tau_center_ns,counts,g2,g2_err
//   curve      tau_ns,C,C_err,defined
//   spectrum   energy_ueV,I_H,I_V,DOP

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "correlator.hpp"
#include "detection.hpp"
#include "fit.hpp"
#include "scheme.hpp"
#include "spectrum.hpp"
#include "trajectory.hpp"

namespace qdspin::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::size_t kEventRecordSize = 17;

namespace detail {

template <class T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is, const std::string& what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw FormatError("truncated file while reading " + what);
  return v;
}

inline std::ifstream open_in(const std::string& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream f(path, mode);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for reading");
  return f;
}

inline std::ofstream open_out(const std::string& path, std::ios::openmode mode = std::ios::out) {
  std::ofstream f(path, mode);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  return f;
}

inline std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Binary streams

inline void write_events(std::ostream& os, const std::vector<PhotonEvent>& events) {
  os.write("QDEV", 4);
  detail::put<std::uint32_t>(os, 1);
  detail::put<std::uint64_t>(os, events.size());
  char rec[kEventRecordSize];
  for (const auto& e : events) {
    std::memcpy(rec, &e.t, 8);
    std::memcpy(rec + 8, &e.line, 4);
    rec[12] = static_cast<char>(e.pol);
    std::memcpy(rec + 13, &e.trajectory_id, 4);
    os.write(rec, kEventRecordSize);
  }
}

inline std::vector<PhotonEvent> read_events(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "QDEV", 4) != 0) throw FormatError("not an event stream (bad magic)");
  const auto version = detail::get<std::uint32_t>(is, "version");
  if (version != 1) throw FormatError("unsupported event stream version " + std::to_string(version));
  const auto n = detail::get<std::uint64_t>(is, "count");
  std::vector<PhotonEvent> out;
  out.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(n, 1u << 20)));
  char rec[kEventRecordSize];
  for (std::uint64_t i = 0; i < n; ++i) {
    is.read(rec, kEventRecordSize);
    if (!is) throw FormatError("truncated event stream at record " + std::to_string(i));
    PhotonEvent e;
    std::memcpy(&e.t, rec, 8);
    std::memcpy(&e.line, rec + 8, 4);
    const auto p = static_cast<std::uint8_t>(rec[12]);
    if (p > 6) throw FormatError("bad polarization code at record " + std::to_string(i));
    e.pol = static_cast<Polarization>(p);
    std::memcpy(&e.trajectory_id, rec + 13, 4);
    out.push_back(e);
  }
  return out;
}

inline void write_events(const std::string& path, const std::vector<PhotonEvent>& events) {
  auto f = detail::open_out(path, std::ios::binary);
  write_events(f, events);
}

inline std::vector<PhotonEvent> read_events(const std::string& path) {
  auto f = detail::open_in(path, std::ios::binary);
  return read_events(f);
}

inline void write_detections(std::ostream& os, const DetectionStream& s, TimeSpan span) {
  os.write("QDDR", 4);
  detail::put<std::uint32_t>(os, 1);
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(s.channel.size()));
  os.write(s.channel.data(), static_cast<std::streamsize>(s.channel.size()));
  detail::put<double>(os, span.begin);
  detail::put<double>(os, span.end);
  detail::put<std::uint64_t>(os, s.t.size());
  os.write(reinterpret_cast<const char*>(s.t.data()), static_cast<std::streamsize>(s.t.size() * sizeof(double)));
}

struct DetectionFile {
  DetectionStream stream;
  TimeSpan span;
};

inline DetectionFile read_detections(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "QDDR", 4) != 0) throw FormatError("not a detection stream (bad magic)");
  const auto version = detail::get<std::uint32_t>(is, "version");
  if (version != 1) throw FormatError("unsupported detection stream version " + std::to_string(version));
  const auto len = detail::get<std::uint32_t>(is, "id length");
  if (len > 4096) throw FormatError("implausible channel id length");
  DetectionFile f;
  f.stream.channel.resize(len);
  is.read(f.stream.channel.data(), len);
  f.span.begin = detail::get<double>(is, "span");
  f.span.end = detail::get<double>(is, "span");
  const auto n = detail::get<std::uint64_t>(is, "count");
  // Read in chunks so a corrupt count fails as truncation rather than a huge allocation.
  constexpr std::uint64_t chunk = 1u << 16;
  for (std::uint64_t done = 0; done < n;) {
    const auto k = std::min(chunk, n - done);
    const auto old = f.stream.t.size();
    f.stream.t.resize(old + k);
    is.read(reinterpret_cast<char*>(f.stream.t.data() + old), static_cast<std::streamsize>(k * sizeof(double)));
    if (!is) throw FormatError("truncated detection stream");
    done += k;
  }
  return f;
}

inline void write_detections(const std::string& path, const DetectionStream& s, TimeSpan span) {
  auto f = detail::open_out(path, std::ios::binary);
  write_detections(f, s, span);
}

inline DetectionFile read_detections(const std::string& path) {
  auto f = detail::open_in(path, std::ios::binary);
  return read_detections(f);
}

// ---------------------------------------------------------------------------
// Channel configuration (JSON)
//
// {"channels": [{"id": "herald_R", "transitions": ["XX0_T3"], "lines": [..],
//   "analyzer": "R", "preset": "sspd", "efficiency": 0.5, "jitter_sigma_ns": 0.038,
//   "dead_time_ns": 20, "dark_rate_per_ns": 0}]}

inline std::vector<DetectorChannel> parse_channels(const nlohmann::json& j, const LevelScheme& scheme) {
  if (!j.contains("channels") || !j["channels"].is_array()) throw FormatError("channel config needs a 'channels' array");
  std::vector<DetectorChannel> out;
  for (std::size_t i = 0; i < j["channels"].size(); ++i) {
    const auto& c = j["channels"][i];
    const std::string p = "channels[" + std::to_string(i) + "]";
    if (!c.contains("id")) throw FormatError(p + ": missing id");
    DetectorPreset preset{0.0, 0.0, 1.0};
    const std::string pn = c.value("preset", "ideal");
    if (pn == "spcm")
      preset = kSpcm;
    else if (pn == "sspd")
      preset = kSspd;
    else if (pn != "ideal")
      throw FormatError(p + ": unknown preset '" + pn + "'");
    DetectorChannel ch = make_channel(c["id"].get<std::string>(), {}, Analyzer::none, preset);
    for (const auto& t : c.value("transitions", std::vector<std::string>{})) {
      try {
        for (auto l : lines_of(scheme, t)) ch.line_filter.push_back(l);
      } catch (const std::out_of_range& e) {
        throw FormatError(p + ": " + e.what());
      }
    }
    for (auto l : c.value("lines", std::vector<std::uint32_t>{})) ch.line_filter.push_back(l);
    try {
      ch.analyzer = parse_analyzer(c.value("analyzer", "none"));
    } catch (const std::invalid_argument& e) {
      throw FormatError(p + ": " + e.what());
    }
    ch.efficiency = c.value("efficiency", ch.efficiency);
    ch.jitter_sigma = c.value("jitter_sigma_ns", ch.jitter_sigma);
    ch.dead_time = c.value("dead_time_ns", ch.dead_time);
    ch.dark_rate = c.value("dark_rate_per_ns", ch.dark_rate);
    try {
      ch.check();
    } catch (const std::invalid_argument& e) {
      throw FormatError(p + ": " + e.what());
    }
    out.push_back(std::move(ch));
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV

using Metadata = std::vector<std::pair<std::string, std::string>>;

inline void write_histogram_csv(std::ostream& os, const CorrelationHistogram& h, const Metadata& meta = {}) {
  const CorrelationHistogram n = h.normalized() || h.n_start == 0 || h.n_stop == 0 || !(h.span > 0.0) ? h : normalize(h);
  os << "# qdspin correlation histogram\n";
  for (const auto& [k, v] : meta) os << "# " << k << ": " << v << "\n";
  os << "# bin_width_ns: " << detail::fmt(h.bin_width) << "\n";
  os << "# window_ns: " << detail::fmt(-h.tau_min) << "\n";
  os << "# span_ns: " << detail::fmt(h.span) << "\n";
  os << "# n_start: " << h.n_start << "\n";
  os << "# n_stop: " << h.n_stop << "\n";
  os << "tau_center_ns,counts,g2,g2_err\n";
  for (std::size_t k = 0; k < h.size(); ++k) {
    os << detail::fmt(h.tau_center(k)) << ',' << h.counts[k] << ',';
    if (n.normalized())
      os << detail::fmt(n.g2[k]) << ',' << detail::fmt(n.g2_err[k]);
    else
      os << "nan,nan";
    os << '\n';
  }
}

inline void write_curve_csv(std::ostream& os, const Curve& c, const Metadata& meta = {}) {
  os << "# qdspin degree-of-correlation curve\n";
  for (const auto& [k, v] : meta) os << "# " << k << ": " << v << "\n";
  os << "tau_ns,C,C_err,defined\n";
  for (std::size_t k = 0; k < c.size(); ++k)
    os << detail::fmt(c.tau[k]) << ',' << detail::fmt(c.value[k]) << ',' << detail::fmt(c.error[k]) << ','
       << (c.defined[k] ? 1 : 0) << '\n';
}

inline void write_spectrum_csv(std::ostream& os, const Spectrum& s, const LevelScheme* scheme = nullptr) {
  os << "# qdspin polarized spectrum\n";
  os << "# resolution_ueV: " << detail::fmt(s.resolution) << "\n";
  if (scheme) os << "# reference_energy_eV: " << detail::fmt(scheme->reference_energy) << "\n";
  for (const auto& l : s.lines)
    os << "# line: " << l.label << " center_ueV=" << detail::fmt(l.center) << " I_H=" << detail::fmt(l.intensity_H)
       << " I_V=" << detail::fmt(l.intensity_V) << "\n";
  os << "energy_ueV,I_H,I_V,DOP\n";
  for (std::size_t k = 0; k < s.energy.size(); ++k)
    os << detail::fmt(s.energy[k]) << ',' << detail::fmt(s.I_H[k]) << ',' << detail::fmt(s.I_V[k]) << ','
       << detail::fmt(s.dop[k]) << '\n';
}

/// Generic CSV table: header names and numeric columns; '#' lines skipped.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
  Metadata meta;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw FormatError("missing column '" + name + "'");
  }
  std::vector<double> col(const std::string& name) const {
    const auto i = column(name);
    std::vector<double> v;
    v.reserve(rows.size());
    for (const auto& r : rows) v.push_back(r[i]);
    return v;
  }
};

inline double parse_number(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw FormatError("not a number: '" + s + "'");
  }
  if (used != s.size()) throw FormatError("not a number: '" + s + "'");
  return v;
}

inline Table read_csv(std::istream& is) {
  Table t;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      auto colon = line.find(':');
      if (colon != std::string::npos) {
        auto key = line.substr(1, colon - 1);
        auto val = line.substr(colon + 1);
        auto trim = [](std::string s) {
          s.erase(0, s.find_first_not_of(' '));
          s.erase(s.find_last_not_of(' ') + 1);
          return s;
        };
        t.meta.emplace_back(trim(key), trim(val));
      }
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (t.header.empty()) {
      t.header = cells;
      continue;
    }
    if (cells.size() != t.header.size())
      throw FormatError("row has " + std::to_string(cells.size()) + " cells, header has " +
                        std::to_string(t.header.size()));
    std::vector<double> row;
    for (const auto& c : cells) row.push_back(parse_number(c));
    t.rows.push_back(std::move(row));
  }
  if (t.header.empty()) throw FormatError("empty CSV");
  return t;
}

inline Table read_csv(const std::string& path) {
  auto f = detail::open_in(path);
  return read_csv(f);
}

inline Curve curve_from_table(const Table& t) {
  Curve c;
  c.tau = t.col("tau_ns");
  c.value = t.col("C");
  c.error = t.col("C_err");
  std::vector<double> def;
  try {
    def = t.col("defined");
  } catch (const FormatError&) {
    def.assign(c.tau.size(), 1.0);
  }
  for (std::size_t k = 0; k < c.tau.size(); ++k)
    c.defined.push_back(def[k] != 0.0 && std::isfinite(c.value[k]) && std::isfinite(c.error[k]));
  return c;
}

/// Rebuilds raw counts and singles from a histogram CSV; the g² columns are
/// recomputed rather than trusted.
inline CorrelationHistogram histogram_from_table(const Table& t) {
  auto meta = [&](const std::string& k) -> double {
    for (const auto& [key, v] : t.meta)
      if (key == k) return parse_number(v);
    throw FormatError("histogram CSV lacks '# " + k + "' metadata");
  };
  CorrelationHistogram h;
  h.bin_width = meta("bin_width_ns");
  h.tau_min = -meta("window_ns");
  h.span = meta("span_ns");
  h.n_start = static_cast<std::uint64_t>(meta("n_start"));
  h.n_stop = static_cast<std::uint64_t>(meta("n_stop"));
  for (double c : t.col("counts")) {
    if (!(c >= 0.0) || c != std::floor(c)) throw FormatError("counts must be non-negative integers");
    h.counts.push_back(static_cast<std::uint64_t>(c));
  }
  if (h.counts.empty()) throw FormatError("histogram CSV has no rows");
  return h;
}

// ---------------------------------------------------------------------------
// Fit report (JSON)

inline nlohmann::json fit_report(const BeatFit& f) {
  auto num = [](double v) -> nlohmann::json {
    if (std::isfinite(v)) return v;
    return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
  };
  nlohmann::json j;
  j["model"] = "offset + amplitude*exp(-tau/damping_time)*cos(2*pi*tau/period + phase)";
  j["parameters"] = {
      {"period_ns", {{"value", num(f.period)}, {"error", num(f.period_err())}}},
      {"damping_time_ns", {{"value", num(f.damping_time)}, {"error", num(f.damping_time_err())}}},
      {"amplitude", {{"value", num(f.amplitude)}, {"error", num(f.amplitude_err())}}},
      {"phase_rad", {{"value", num(f.phase)}, {"error", num(f.phase_err())}}},
      {"offset", {{"value", num(f.offset)}, {"error", num(f.offset_err())}}},
  };
  nlohmann::json cov = nlohmann::json::array();
  for (int r = 0; r < 5; ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (int c = 0; c < 5; ++c) row.push_back(num(f.covariance(r, c)));
    cov.push_back(row);
  }
  j["covariance_order"] = {"period_ns", "damping_time_ns", "amplitude", "phase_rad", "offset"};
  j["covariance"] = cov;
  j["chi2"] = num(f.chi2);
  j["points"] = f.points;
  j["dof"] = f.dof;
  j["reduced_chi2"] = num(f.reduced_chi2());
  j["iterations"] = f.iterations;
  j["period_constrained"] = f.period_constrained;
  if (f.fss) {
    j["fss_ueV"] = {{"value", *f.fss}, {"error", num(*f.fss_err)}};
  } else {
    j["fss_ueV"] = nullptr;
  }
  return j;
}

}  // namespace qdspin::io
