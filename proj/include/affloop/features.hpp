#pragma once

// Signal conditioning and feature extraction: beats -> heart rate,
// electrodermal tonic/phasic split -> skin conductance responses, and
// calibration baselines.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <numeric>
#include <vector>

#include "affloop/error.hpp"
#include "affloop/signal_model.hpp"

namespace affloop {

struct Scr {
  double onset_t = 0.0;
  double peak_t = 0.0;
  double amplitude = 0.0;  // µS
  double rise_time = 0.0;  // s
};

enum class HrSource { derived_from_pulse, device_reported };

struct HrSeries {
  UniformSeries series;  // bpm
  HrSource source = HrSource::derived_from_pulse;
};

struct Baseline {
  double hr_mean = 0.0;
  double hr_sd = 0.0;
  double scl_mean = 0.0;
  double scl_sd = 0.0;
  double scr_rate = 0.0;  // events per minute
  double duration_s = 0.0;
};

inline constexpr double kHrSdFloor = 0.5;
inline constexpr double kSclSdFloor = 0.01;

struct BeatParams {
  double fast_window_s = 0.1;
  double slow_window_s = 0.6;
  double threshold_fraction = 0.5;
  std::size_t history = 8;
  double refractory_s = 0.3;
};

struct IbiParams {
  double min_ibi_s = 0.3;
  double max_ibi_s = 2.0;
  double max_jump = 0.25;
  std::size_t history = 5;
  // Consecutive rejections after which the relative-jump history is discarded,
  // so one bad early interval cannot lock out every later one.
  std::size_t relock_after = 4;
};

struct EdaParams {
  double tonic_window_s = 8.0;
  double presmooth_s = 1.0;  // noise suppression before the opening
};

struct ScrParams {
  double onset_slope = 0.02;  // µS/s
  double min_amplitude = 0.01;
  double min_rise_s = 0.25;
  double max_rise_s = 10.0;
  double smooth_s = 0.5;
};

namespace detail {

/// Odd window width in samples for a duration, at least 1.
inline std::size_t odd_width(double seconds, double rate) {
  auto w = static_cast<std::size_t>(std::floor(seconds * rate + 1e-9));
  if (w < 1) return 1;
  return (w % 2 == 0) ? w + 1 : w;
}

/// Mean about the first value, so a constant input returns that value exactly.
inline double mean(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double d = 0.0;
  for (double v : x) d += v - x.front();
  return x.front() + d / static_cast<double>(x.size());
}

inline double population_sd(std::span<const double> x) {
  if (x.size() < 2) return 0.0;
  double m = mean(x);
  double acc = 0.0;
  for (double v : x) acc += (v - m) * (v - m);
  return std::sqrt(acc / static_cast<double>(x.size()));
}

inline double median(std::vector<double> x) {
  if (x.empty()) return 0.0;
  auto mid = x.begin() + static_cast<std::ptrdiff_t>(x.size() / 2);
  std::nth_element(x.begin(), mid, x.end());
  double hi = *mid;
  if (x.size() % 2 == 1) return hi;
  double lo = *std::max_element(x.begin(), mid);
  return 0.5 * (lo + hi);
}

/// Running extremum over [i-h, i+h] clipped to the series (monotone deque).
template <typename Better>
std::vector<double> running_extremum(const std::vector<double>& x, std::size_t h, Better better) {
  const std::size_t n = x.size();
  std::vector<double> out(n);
  std::deque<std::size_t> dq;
  std::size_t next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t hi = std::min(n - 1, i + h);
    std::size_t lo = i >= h ? i - h : 0;
    for (; next <= hi; ++next) {
      while (!dq.empty() && !better(x[dq.back()], x[next])) dq.pop_back();
      dq.push_back(next);
    }
    while (dq.front() < lo) dq.pop_front();
    out[i] = x[dq.front()];
  }
  return out;
}


/// Least-squares parabola through x over [c - w, c + w] seconds; on a concave fit
/// whose vertex lies inside the window, replaces (t, v) with the vertex.
inline void refine_peak(const UniformSeries& x, std::size_t c, double w_s, double& t, double& v) {
  auto h = static_cast<std::ptrdiff_t>(std::floor(w_s * x.rate + 1e-9));
  auto lo = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(c) - h);
  auto hi = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(x.size()) - 1, static_cast<std::ptrdiff_t>(c) + h);
  if (hi - lo < 4) return;
  // Normal equations in u = (k - c) / rate.
  double s0 = 0, s1 = 0, s2 = 0, s3 = 0, s4 = 0, y0 = 0, y1 = 0, y2 = 0;
  for (auto k = lo; k <= hi; ++k) {
    double u = static_cast<double>(k - static_cast<std::ptrdiff_t>(c)) / x.rate;
    double y = x.v[static_cast<std::size_t>(k)];
    double u2 = u * u;
    s0 += 1; s1 += u; s2 += u2; s3 += u2 * u; s4 += u2 * u2;
    y0 += y; y1 += y * u; y2 += y * u2;
  }
  // Solve [[s4 s3 s2][s3 s2 s1][s2 s1 s0]] [a b c0] = [y2 y1 y0] by Cramer's rule.
  auto det3 = [](double a, double b, double c, double d, double e, double f, double g, double hh, double i) {
    return a * (e * i - f * hh) - b * (d * i - f * g) + c * (d * hh - e * g);
  };
  double D = det3(s4, s3, s2, s3, s2, s1, s2, s1, s0);
  if (std::abs(D) < 1e-300) return;
  double a = det3(y2, s3, s2, y1, s2, s1, y0, s1, s0) / D;
  double b = det3(s4, y2, s2, s3, y1, s1, s2, y0, s0) / D;
  double c0 = det3(s4, s3, y2, s3, s2, y1, s2, s1, y0) / D;
  if (!(a < 0.0)) return;
  double u_star = -b / (2.0 * a);
  double u_lo = static_cast<double>(lo - static_cast<std::ptrdiff_t>(c)) / x.rate;
  double u_hi = static_cast<double>(hi - static_cast<std::ptrdiff_t>(c)) / x.rate;
  if (u_star < u_lo || u_star > u_hi) return;
  t = x.time(c) + u_star;
  v = c0 - b * b / (4.0 * a);
}

}  // namespace detail

/// Centered moving average of width floor(cutoff_window_s*rate) rounded up to odd.
/// Near the ends the window shrinks symmetrically.
inline UniformSeries smooth(const UniformSeries& s, double cutoff_window_s) {
  const std::size_t n = s.size();
  const std::size_t h = detail::odd_width(cutoff_window_s, s.rate) / 2;
  UniformSeries out{s.t0, s.rate, std::vector<double>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t r = std::min({h, i, n - 1 - i});
    double acc = 0.0;
    for (std::size_t j = i - r; j <= i + r; ++j) acc += s.v[j];
    out.v[i] = acc / static_cast<double>(2 * r + 1);
  }
  return out;
}

/// Beat times from a pulse waveform: band-limit as the difference of a fast and a
/// slow moving average, square, then accept local maxima above a fraction of the
/// running median of recent accepted peak heights, with a refractory period.
/// Beat times are refined to sub-sample precision by a parabolic fit.
inline std::vector<double> detect_beats(const UniformSeries& pulse, const BeatParams& p = {}) {
  if (pulse.rate < 50.0) throw DataError("detect_beats: sample rate below 50 Hz");
  if (pulse.duration() < 5.0) throw DataError("detect_beats: need at least 5 s of signal");

  // Mirror-pad so the slow average is not pulled toward the signal at the ends.
  const std::size_t n = pulse.size();
  const auto pad = std::min<std::size_t>(n - 1, static_cast<std::size_t>(std::ceil(p.slow_window_s * pulse.rate)));
  UniformSeries ext{pulse.t0 - static_cast<double>(pad) / pulse.rate, pulse.rate, {}};
  ext.v.reserve(n + 2 * pad);
  for (std::size_t k = pad; k > 0; --k) ext.v.push_back(pulse.v[k]);
  ext.v.insert(ext.v.end(), pulse.v.begin(), pulse.v.end());
  for (std::size_t k = 1; k <= pad; ++k) ext.v.push_back(pulse.v[n - 1 - k]);
  auto fast = smooth(ext, p.fast_window_s);
  auto slow = smooth(ext, p.slow_window_s);
  std::vector<double> energy(n);
  for (std::size_t i = 0; i < n; ++i) {
    double b = fast.v[i + pad] - slow.v[i + pad];
    energy[i] = b * b;
  }

  double seed = 0.0;
  for (std::size_t i = 0; i < n && pulse.time(i) - pulse.t0 <= 2.0; ++i) seed = std::max(seed, energy[i]);
  if (!(seed > 0.0)) seed = *std::max_element(energy.begin(), energy.end());
  if (!(seed > 0.0)) return {};

  std::deque<double> heights{seed};
  std::vector<double> beats;
  std::vector<double> beat_heights;
  for (std::size_t i = 1; i + 1 < n; ++i) {
    if (!(energy[i] > energy[i - 1] && energy[i] >= energy[i + 1])) continue;
    double threshold = p.threshold_fraction * detail::median({heights.begin(), heights.end()});
    if (energy[i] < threshold) continue;

    double denom = energy[i - 1] - 2.0 * energy[i] + energy[i + 1];
    double delta = denom < 0.0 ? 0.5 * (energy[i - 1] - energy[i + 1]) / denom : 0.0;
    double t = pulse.time(i) + std::clamp(delta, -0.5, 0.5) / pulse.rate;

    if (!beats.empty() && t - beats.back() < p.refractory_s) {
      if (energy[i] > beat_heights.back()) {
        beats.back() = t;
        beat_heights.back() = energy[i];
        heights.back() = energy[i];
      }
      continue;
    }
    beats.push_back(t);
    beat_heights.push_back(energy[i]);
    heights.push_back(energy[i]);
    while (heights.size() > p.history) heights.pop_front();
  }
  return beats;
}

/// Instantaneous heart rate from beat times with interval artifact rejection,
/// linearly interpolated to a uniform grid. A too-short interval drops the later
/// beat (spurious detection), or the earlier one when bridging over it gives an
/// interval in line with the history; a too-long interval restarts from that beat.
inline HrSeries ibi_to_hr(std::span<const double> beats, double out_rate_hz, const IbiParams& p = {}) {
  if (beats.size() < 3) throw DataError("ibi_to_hr: need at least 3 beats");
  if (!(out_rate_hz > 0.0)) throw DataError("ibi_to_hr: output rate must be > 0");

  TimeSeries points;
  std::deque<double> accepted;
  std::size_t rejected_run = 0;
  double prev = beats[0];
  for (std::size_t i = 1; i < beats.size(); ++i) {
    double ibi = beats[i] - prev;
    bool too_short = ibi < p.min_ibi_s;
    bool too_long = ibi > p.max_ibi_s;
    if (!accepted.empty() && !too_short && !too_long) {
      double ref = detail::median({accepted.begin(), accepted.end()});
      if (ibi < ref * (1.0 - p.max_jump)) too_short = true;
      if (ibi > ref * (1.0 + p.max_jump)) too_long = true;
    }
    if (too_short && !accepted.empty() && prev == points.t.back()) {
      // A spurious beat late in an interval passes the jump test and leaves a short
      // remainder behind it: bridge over it when that fits the history better.
      double before = points.t.back() - accepted.back();
      double bridged = beats[i] - before;
      std::deque<double> rest(accepted.begin(), accepted.end() - 1);
      double ref = rest.empty() ? accepted.back() : detail::median({rest.begin(), rest.end()});
      if (bridged >= p.min_ibi_s && bridged <= p.max_ibi_s && std::abs(bridged - ref) <= p.max_jump * ref &&
          std::abs(bridged - ref) < std::abs(accepted.back() - ref)) {
        points.t.pop_back();
        points.v.pop_back();
        accepted.pop_back();
        accepted.push_back(bridged);
        points.push(beats[i], 60.0 / bridged);
        prev = beats[i];
        rejected_run = 0;
        continue;
      }
    }
    if (too_short || too_long) {
      if (too_long) prev = beats[i];
      if (++rejected_run >= p.relock_after) {
        accepted.clear();
        rejected_run = 0;
        prev = beats[i];
      }
      continue;
    }
    rejected_run = 0;
    accepted.push_back(ibi);
    while (accepted.size() > p.history) accepted.pop_front();
    points.push(beats[i], 60.0 / ibi);
    prev = beats[i];
  }
  if (points.size() < 3) throw DataError("ibi_to_hr: fewer than 3 accepted intervals");

  HrSeries out;
  out.source = HrSource::derived_from_pulse;
  out.series.t0 = points.t.front();
  out.series.rate = out_rate_hz;
  std::size_t n = detail::grid_count(points.t.front(), points.t.back(), out_rate_hz);
  std::size_t hint = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double x = std::min(out.series.time(i), points.t.back());
    out.series.v.push_back(detail::interp_at(points, x, hint));
  }
  return out;
}

struct EdaComponents {
  UniformSeries tonic;
  UniformSeries phasic;
};

/// Tonic level as a morphological opening (running minimum followed by running
/// maximum, both over the tonic window, truncated at the ends); phasic is the
/// remainder. tonic + phasic reproduces the input bit for bit.
inline EdaComponents eda_decompose(const UniformSeries& eda, const EdaParams& p = {}) {
  if (eda.rate < 4.0) throw DataError("eda_decompose: sample rate below 4 Hz");
  if (eda.duration() < 30.0) throw DataError("eda_decompose: need at least 30 s of signal");

  const std::size_t h = detail::odd_width(p.tonic_window_s, eda.rate) / 2;
  auto pre = smooth(eda, p.presmooth_s);
  auto eroded = detail::running_extremum(pre.v, h, [](double a, double b) { return a < b; });
  auto opened = detail::running_extremum(eroded, h, [](double a, double b) { return a > b; });

  EdaComponents out{{eda.t0, eda.rate, std::move(opened)}, {eda.t0, eda.rate, std::vector<double>(eda.size())}};
  for (std::size_t i = 0; i < eda.size(); ++i) {
    const double x = eda.v[i];
    double& tonic = out.tonic.v[i];
    double phasic = x - tonic;
    if (tonic + phasic != x) {
      double alt = x - phasic;
      if (alt + phasic == x) {
        tonic = alt;
      } else {
        // Unreachable for same-sign operands of similar magnitude; keeps the identity exact.
        tonic = 0.0;
        phasic = x;
      }
    }
    out.phasic.v[i] = phasic;
  }
  return out;
}

/// Skin conductance responses: onset where the smoothed phasic slope first exceeds
/// the onset threshold, peak at the next local maximum. Overlapping responses split
/// at the local minimum between them; a dip shallower than the amplitude floor is
/// treated as noise on a single response. The peak value is refined by a quadratic
/// fit to the unsmoothed phasic around the smoothed maximum.
namespace detail {

// Detection runs on the phasic series; amplitude is measured trough to peak on
// `level` (the phasic series itself, or the full signal when available).
inline std::vector<Scr> detect_scrs_on(const UniformSeries& phasic, const UniformSeries& level, const ScrParams& p) {
  const std::size_t n = phasic.size();
  if (n < 3) return {};
  auto s = smooth(phasic, p.smooth_s);
  auto ls = smooth(level, p.smooth_s);
  auto slope = [&](std::size_t i) { return (s.v[i + 1] - s.v[i - 1]) * phasic.rate * 0.5; };
  auto next_max = [&](std::size_t from) {
    std::size_t j = from;
    while (j + 1 < n && s.v[j + 1] > s.v[j]) ++j;
    return j;
  };
  auto next_min = [&](std::size_t from) {
    std::size_t j = from;
    while (j + 1 < n && s.v[j + 1] <= s.v[j]) ++j;
    return j;
  };

  std::vector<Scr> out;
  std::size_t i = 1;
  while (i + 1 < n) {
    if (slope(i) <= p.onset_slope) {
      ++i;
      continue;
    }
    const std::size_t onset = i - 1;
    std::size_t peak = next_max(i);
    if (peak + 1 >= n) break;  // still rising at the end: no peak yet
    for (;;) {
      std::size_t dip = next_min(peak);
      if (dip + 1 >= n) break;
      std::size_t again = next_max(dip);
      if (again + 1 >= n || s.v[peak] - s.v[dip] >= p.min_amplitude || s.v[again] < s.v[peak]) break;
      peak = again;
    }

    double peak_t = phasic.time(peak);
    double peak_v = ls.v[peak];
    refine_peak(level, peak, p.smooth_s, peak_t, peak_v);

    Scr scr;
    scr.onset_t = phasic.time(onset);
    scr.peak_t = peak_t;
    scr.amplitude = peak_v - ls.v[onset];
    scr.rise_time = scr.peak_t - scr.onset_t;
    if (scr.amplitude >= p.min_amplitude && scr.rise_time >= p.min_rise_s && scr.rise_time <= p.max_rise_s)
      out.push_back(scr);
    i = peak + 1;
  }
  return out;
}

}  // namespace detail

inline std::vector<Scr> detect_scrs(const UniformSeries& phasic, const ScrParams& p = {}) {
  return detail::detect_scrs_on(phasic, phasic, p);
}

/// Same detection, with amplitudes taken from tonic + phasic so that a tonic
/// estimate that bends under a response does not shrink it.
inline std::vector<Scr> detect_scrs(const EdaComponents& c, const ScrParams& p = {}) {
  if (c.tonic.size() != c.phasic.size()) throw DataError("detect_scrs: tonic and phasic differ in length");
  UniformSeries level = c.phasic;
  for (std::size_t i = 0; i < level.size(); ++i) level.v[i] += c.tonic.v[i];
  return detail::detect_scrs_on(c.phasic, level, p);
}

/// Statistics of a calibration segment. `tonic` is the electrodermal level series.
inline Baseline compute_baseline(const HrSeries& hr, const UniformSeries& tonic, std::span<const Scr> scrs) {
  double duration = std::max(hr.series.duration(), tonic.duration());
  if (duration < 60.0 - 1e-9) throw DataError("compute_baseline: segment shorter than 60 s");
  if (hr.series.empty() || tonic.empty()) throw DataError("compute_baseline: empty input");
  Baseline b;
  b.duration_s = duration;
  b.hr_mean = detail::mean(hr.series.v);
  b.hr_sd = std::max(kHrSdFloor, detail::population_sd(hr.series.v));
  b.scl_mean = detail::mean(tonic.v);
  b.scl_sd = std::max(kSclSdFloor, detail::population_sd(tonic.v));
  b.scr_rate = static_cast<double>(scrs.size()) / duration * 60.0;
  return b;
}

/// Key-value text form of a baseline, one `key value` pair per line.
inline std::string write_baseline(const Baseline& b) {
  std::string out;
  out += "hr_mean " + text::fixed(b.hr_mean) + "\n";
  out += "hr_sd " + text::fixed(b.hr_sd) + "\n";
  out += "scl_mean " + text::fixed(b.scl_mean) + "\n";
  out += "scl_sd " + text::fixed(b.scl_sd) + "\n";
  out += "scr_rate " + text::fixed(b.scr_rate) + "\n";
  out += "duration_s " + text::fixed(b.duration_s) + "\n";
  return out;
}

inline Baseline parse_baseline(std::string_view bytes) {
  Baseline b;
  int seen = 0;
  text::for_each_line(bytes, [&](std::size_t lineno, std::string_view line) {
    auto f = text::split_ws(line);
    if (f.empty() || f[0].front() == '#') return;
    if (f.size() != 2) throw ParseError(lineno, "expected 'key value'");
    auto v = text::to_double(f[1]);
    if (!v) throw ParseError(lineno, "bad number");
    if (f[0] == "hr_mean") b.hr_mean = *v;
    else if (f[0] == "hr_sd") b.hr_sd = *v;
    else if (f[0] == "scl_mean") b.scl_mean = *v;
    else if (f[0] == "scl_sd") b.scl_sd = *v;
    else if (f[0] == "scr_rate") b.scr_rate = *v;
    else if (f[0] == "duration_s") b.duration_s = *v;
    else throw ParseError(lineno, "unknown baseline key '" + std::string(f[0]) + "'");
    ++seen;
  });
  if (seen != 6) throw DataError("baseline file must define all 6 keys");
  if (!(b.hr_sd > 0.0) || !(b.scl_sd > 0.0) || b.duration_s < 60.0) throw DataError("baseline invariants violated");
  return b;
}

}  // namespace affloop
