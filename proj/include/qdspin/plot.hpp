#pragma once

// Minimal self-contained SVG rendering for histograms, curves and spectra.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "io.hpp"

namespace qdspin::plot {

enum class Kind { histogram, curve, spectrum };

inline Kind parse_kind(const std::string& s) {
  if (s == "histogram") return Kind::histogram;
  if (s == "curve") return Kind::curve;
  if (s == "spectrum") return Kind::spectrum;
  throw std::invalid_argument("unknown plot kind '" + s + "'");
}

namespace detail {

struct Panel {
  double x0, y0, w, h;  // pixel box
  double xmin, xmax, ymin, ymax;

  double px(double x) const { return x0 + (x - xmin) / (xmax - xmin) * w; }
  double py(double y) const { return y0 + h - (y - ymin) / (ymax - ymin) * h; }
};

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

inline void range(const std::vector<double>& v, double& lo, double& hi) {
  lo = std::numeric_limits<double>::infinity();
  hi = -lo;
  for (double x : v)
    if (std::isfinite(x)) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
  if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
  if (hi <= lo) hi = lo + 1.0;
}

inline void axes(std::ostringstream& os, const Panel& p, const std::string& xlabel, const std::string& ylabel) {
  os << "<rect x='" << p.x0 << "' y='" << p.y0 << "' width='" << p.w << "' height='" << p.h
     << "' fill='none' stroke='black'/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fx = p.xmin + (p.xmax - p.xmin) * i / 4.0;
    const double fy = p.ymin + (p.ymax - p.ymin) * i / 4.0;
    os << "<text x='" << p.px(fx) << "' y='" << p.y0 + p.h + 16 << "' font-size='11' text-anchor='middle'>"
       << num(fx) << "</text>\n";
    os << "<text x='" << p.x0 - 6 << "' y='" << p.py(fy) + 4 << "' font-size='11' text-anchor='end'>" << num(fy)
       << "</text>\n";
  }
  os << "<text x='" << p.x0 + p.w / 2 << "' y='" << p.y0 + p.h + 34
     << "' font-size='13' text-anchor='middle'>" << xlabel << "</text>\n";
  os << "<text transform='translate(" << p.x0 - 48 << "," << p.y0 + p.h / 2
     << ") rotate(-90)' font-size='13' text-anchor='middle'>" << ylabel << "</text>\n";
}

inline void polyline(std::ostringstream& os, const Panel& p, const std::vector<double>& x,
                     const std::vector<double>& y, const std::string& color, const std::string& dash = "") {
  os << "<polyline fill='none' stroke='" << color << "' stroke-width='1.2'";
  if (!dash.empty()) os << " stroke-dasharray='" << dash << "'";
  os << " points='";
  for (std::size_t i = 0; i < x.size(); ++i)
    if (std::isfinite(y[i])) os << p.px(x[i]) << ',' << p.py(std::clamp(y[i], p.ymin, p.ymax)) << ' ';
  os << "'/>\n";
}

inline std::string wrap(double width, double height, const std::string& body, const std::string& title) {
  std::ostringstream os;
  os << "<?xml version='1.0' encoding='UTF-8'?>\n"
     << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width << "' height='" << height << "' viewBox='0 0 "
     << width << ' ' << height << "'>\n"
     << "<rect width='100%' height='100%' fill='white'/>\n"
     << "<text x='" << width / 2 << "' y='20' font-size='14' text-anchor='middle'>" << title << "</text>\n"
     << body << "</svg>\n";
  return os.str();
}

}  // namespace detail

/// Renders a CSV table (in the documented schema for `kind`) to SVG text.
inline std::string render(const io::Table& t, Kind kind, const std::string& title = "") {
  if (t.rows.empty()) throw io::FormatError("cannot plot an empty table");
  std::ostringstream os;
  using detail::Panel;
  if (kind == Kind::histogram) {
    const auto x = t.col("tau_center_ns");
    auto y = t.col("g2");
    bool counts = std::none_of(y.begin(), y.end(), [](double v) { return std::isfinite(v); });
    if (counts) y = t.col("counts");
    double ylo, yhi, xlo, xhi;
    detail::range(x, xlo, xhi);
    detail::range(y, ylo, yhi);
    Panel p{70, 35, 560, 300, xlo, xhi, std::min(0.0, ylo), yhi * 1.05};
    detail::axes(os, p, "τ (ns)", counts ? "coincidences" : "g²(τ)");
    detail::polyline(os, p, x, y, "#1f4e9c");
    return detail::wrap(660, 390, os.str(), title);
  }
  if (kind == Kind::curve) {
    const auto x = t.col("tau_ns");
    const auto y = t.col("C");
    const auto e = t.col("C_err");
    double xlo, xhi;
    detail::range(x, xlo, xhi);
    Panel p{70, 35, 560, 300, xlo, xhi, -1.05, 1.05};
    detail::axes(os, p, "τ (ns)", "C(τ)");
    os << "<line x1='" << p.x0 << "' x2='" << p.x0 + p.w << "' y1='" << p.py(0) << "' y2='" << p.py(0)
       << "' stroke='#999' stroke-dasharray='3,3'/>\n";
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (!std::isfinite(y[i]) || !std::isfinite(e[i])) continue;
      os << "<line x1='" << p.px(x[i]) << "' x2='" << p.px(x[i]) << "' y1='"
         << p.py(std::clamp(y[i] - e[i], p.ymin, p.ymax)) << "' y2='" << p.py(std::clamp(y[i] + e[i], p.ymin, p.ymax))
         << "' stroke='#bbb'/>\n";
    }
    detail::polyline(os, p, x, y, "#b22222");
    return detail::wrap(660, 390, os.str(), title);
  }
  // Spectrum: intensities on top, DOP below.
  const auto x = t.col("energy_ueV");
  const auto ih = t.col("I_H");
  const auto iv = t.col("I_V");
  const auto dop = t.col("DOP");
  double xlo, xhi, lo1, hi1, lo2, hi2;
  detail::range(x, xlo, xhi);
  detail::range(ih, lo1, hi1);
  detail::range(iv, lo2, hi2);
  Panel top{80, 35, 640, 240, xlo, xhi, 0.0, std::max(hi1, hi2) * 1.05};
  Panel bottom{80, 330, 640, 140, xlo, xhi, -1.05, 1.05};
  detail::axes(os, top, "", "intensity (counts/s/μeV)");
  detail::polyline(os, top, x, ih, "#1f4e9c");
  detail::polyline(os, top, x, iv, "#b22222", "4,2");
  detail::axes(os, bottom, "E − E_ref (μeV)", "DOP");
  detail::polyline(os, bottom, x, dop, "black");
  os << "<text x='" << top.x0 + top.w - 10 << "' y='" << top.y0 + 16
     << "' font-size='12' text-anchor='end' fill='#1f4e9c'>H</text>\n";
  os << "<text x='" << top.x0 + top.w - 10 << "' y='" << top.y0 + 32
     << "' font-size='12' text-anchor='end' fill='#b22222'>V</text>\n";
  return detail::wrap(760, 520, os.str(), title);
}

}  // namespace qdspin::plot
