#pragma once

// Time-binned photon coincidence histograms g²_{A−B}(τ), τ = t_b − t_a, with
// CW normalization and polarization degree-of-correlation curves.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace qdspin {

enum class CorrelationMode {
  all_pairs,   // every (a, b) pair within the window
  start_stop,  // first b at or after each a only (τ ≥ 0)
};

struct CorrelationPair {
  std::string start;  // trigger channel
  std::string stop;
  double window = 25.0;      // ±τ_max, ns
  double bin_width = 0.025;  // ns
  CorrelationMode mode = CorrelationMode::all_pairs;

  std::size_t bins() const { return static_cast<std::size_t>(std::llround(2.0 * window / bin_width)); }

  void check() const {
    if (!(bin_width > 0.0)) throw std::invalid_argument("bin width must be > 0");
    if (!(window > bin_width)) throw std::invalid_argument("window must exceed the bin width");
  }
};

struct CorrelationHistogram {
  double tau_min = 0.0;
  double bin_width = 0.0;
  std::vector<std::uint64_t> counts;
  std::uint64_t n_start = 0;
  std::uint64_t n_stop = 0;
  double span = 0.0;  // acquisition duration, ns
  bool empty_input = false;
  std::vector<double> g2;      // filled by normalize()
  std::vector<double> g2_err;  // Poisson, +inf where counts are zero

  std::size_t size() const { return counts.size(); }
  double tau_center(std::size_t k) const { return tau_min + (static_cast<double>(k) + 0.5) * bin_width; }
  std::vector<double> bin_edges() const {
    std::vector<double> e(counts.size() + 1);
    for (std::size_t k = 0; k < e.size(); ++k) e[k] = tau_min + static_cast<double>(k) * bin_width;
    return e;
  }
  bool normalized() const { return !g2.empty(); }
  /// g² per coincidence count.
  double scale() const {
    return span / (static_cast<double>(n_start) * static_cast<double>(n_stop) * bin_width);
  }
  bool same_binning(const CorrelationHistogram& o) const {
    return counts.size() == o.counts.size() && std::abs(tau_min - o.tau_min) < 1e-12 &&
           std::abs(bin_width - o.bin_width) < 1e-15;
  }
};

inline CorrelationHistogram empty_histogram(const CorrelationPair& pair) {
  pair.check();
  CorrelationHistogram h;
  const auto n = pair.bins();
  h.bin_width = pair.bin_width;
  h.tau_min = -0.5 * static_cast<double>(n) * pair.bin_width;
  h.counts.assign(n, 0);
  return h;
}

/// Coincidence histogram of two sorted click streams. `span` is the
/// acquisition duration used later for normalization.
inline CorrelationHistogram cross_correlate(std::span<const double> a, std::span<const double> b,
                                            const CorrelationPair& pair, double span = 0.0) {
  CorrelationHistogram h = empty_histogram(pair);
  h.n_start = a.size();
  h.n_stop = b.size();
  h.span = span;
  h.empty_input = a.empty() || b.empty();
  const double lo = h.tau_min;
  const double hi = -h.tau_min;
  const double inv_w = 1.0 / h.bin_width;
  const auto nbins = static_cast<std::ptrdiff_t>(h.counts.size());

  std::size_t j0 = 0;
  for (double ta : a) {
    while (j0 < b.size() && b[j0] - ta < lo) ++j0;
    if (pair.mode == CorrelationMode::start_stop) {
      auto it = std::lower_bound(b.begin() + static_cast<std::ptrdiff_t>(j0), b.end(), ta);
      if (it == b.end()) continue;
      const double tau = *it - ta;
      const auto k = static_cast<std::ptrdiff_t>(std::floor((tau - lo) * inv_w));
      if (k >= 0 && k < nbins) ++h.counts[static_cast<std::size_t>(k)];
      continue;
    }
    for (std::size_t j = j0; j < b.size(); ++j) {
      const double tau = b[j] - ta;
      if (tau >= hi) break;
      const auto k = static_cast<std::ptrdiff_t>(std::floor((tau - lo) * inv_w));
      if (k >= 0 && k < nbins) ++h.counts[static_cast<std::size_t>(k)];
    }
  }
  return h;
}

/// Exact associative merge of partial histograms (shards or trajectories).
inline CorrelationHistogram merge(const CorrelationHistogram& x, const CorrelationHistogram& y) {
  if (!x.same_binning(y)) throw std::invalid_argument("histogram binning mismatch");
  CorrelationHistogram m = x;
  for (std::size_t k = 0; k < m.counts.size(); ++k) m.counts[k] += y.counts[k];
  m.n_start += y.n_start;
  m.n_stop += y.n_stop;
  m.span += y.span;
  m.empty_input = x.empty_input && y.empty_input;
  m.g2.clear();
  m.g2_err.clear();
  return m;
}

/// CW normalization: uncorrelated streams give g² = 1.
inline CorrelationHistogram normalize(CorrelationHistogram h) {
  if (h.n_start == 0 || h.n_stop == 0) throw std::domain_error("cannot normalize: zero singles counts");
  if (!(h.span > 0.0)) throw std::domain_error("cannot normalize: acquisition span must be > 0");
  const double s = h.scale();
  h.g2.resize(h.counts.size());
  h.g2_err.resize(h.counts.size());
  for (std::size_t k = 0; k < h.counts.size(); ++k) {
    const auto c = static_cast<double>(h.counts[k]);
    h.g2[k] = c * s;
    h.g2_err[k] = c > 0.0 ? h.g2[k] / std::sqrt(c) : std::numeric_limits<double>::infinity();
  }
  return h;
}

/// A curve over τ with per-point errors; points with `defined == false` are
/// excluded from any downstream use.
struct Curve {
  std::vector<double> tau;
  std::vector<double> value;
  std::vector<double> error;
  std::vector<bool> defined;

  std::size_t size() const { return tau.size(); }
  std::size_t defined_count() const { return static_cast<std::size_t>(std::count(defined.begin(), defined.end(), true)); }
};

namespace detail {

struct SummedG2 {
  std::vector<double> g;
  std::vector<double> var;
};

// Zero-count bins contribute the one-count error so that propagated errors
// stay finite where the opposite histogram is populated.
inline SummedG2 sum_g2(std::span<const CorrelationHistogram> hs) {
  SummedG2 s;
  if (hs.empty()) throw std::invalid_argument("no histograms to combine");
  const auto n = hs.front().size();
  s.g.assign(n, 0.0);
  s.var.assign(n, 0.0);
  for (const auto& h : hs) {
    if (!h.same_binning(hs.front())) throw std::invalid_argument("histogram binning mismatch");
    const CorrelationHistogram hn = h.normalized() ? h : normalize(h);
    const double sc = hn.scale();
    for (std::size_t k = 0; k < n; ++k) {
      s.g[k] += hn.g2[k];
      const double c = std::max<double>(static_cast<double>(hn.counts[k]), 1.0);
      s.var[k] += sc * sc * c;
    }
  }
  return s;
}

}  // namespace detail

/// C(τ) = (g_co − g_cross)/(g_co + g_cross) with first-order Poisson error
/// propagation. Several co (or cross) histograms are summed first, e.g.
/// co = RR + LL, cross = RL + LR.
inline Curve degree_of_correlation(std::span<const CorrelationHistogram> co,
                                   std::span<const CorrelationHistogram> cross) {
  const auto a = detail::sum_g2(co);
  const auto b = detail::sum_g2(cross);
  if (!co.front().same_binning(cross.front())) throw std::invalid_argument("histogram binning mismatch");
  Curve c;
  const auto n = a.g.size();
  c.tau.resize(n);
  c.value.resize(n);
  c.error.resize(n);
  c.defined.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    c.tau[k] = co.front().tau_center(k);
    const double sum = a.g[k] + b.g[k];
    if (!(sum > 0.0)) {
      c.value[k] = std::numeric_limits<double>::quiet_NaN();
      c.error[k] = std::numeric_limits<double>::infinity();
      c.defined[k] = false;
      continue;
    }
    c.value[k] = (a.g[k] - b.g[k]) / sum;
    c.error[k] = 2.0 * std::sqrt(b.g[k] * b.g[k] * a.var[k] + a.g[k] * a.g[k] * b.var[k]) / (sum * sum);
    c.defined[k] = true;
  }
  return c;
}

/// Pointwise degree of correlation of two g² values.
inline double correlation_degree(double g_co, double g_cross) { return (g_co - g_cross) / (g_co + g_cross); }

inline Curve degree_of_correlation(const CorrelationHistogram& co, const CorrelationHistogram& cross) {
  return degree_of_correlation(std::span(&co, 1), std::span(&cross, 1));
}

}  // namespace qdspin
