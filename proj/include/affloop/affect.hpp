#pragma once

// Arousal estimation from baselined features, hysteretic level classification,
// and stimulus-locked epochs / reaction templates.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "affloop/error.hpp"
#include "affloop/features.hpp"
#include "affloop/signal_model.hpp"
#include "affloop/text.hpp"

namespace affloop {

enum class Level { low, medium, high };

inline std::string_view to_string(Level l) {
  switch (l) {
    case Level::low: return "low";
    case Level::medium: return "medium";
    case Level::high: return "high";
  }
  return "?";
}

inline std::optional<Level> parse_level(std::string_view s) {
  if (s == "low") return Level::low;
  if (s == "medium") return Level::medium;
  if (s == "high") return Level::high;
  return std::nullopt;
}

struct AffectState {
  double t = 0.0;
  double arousal = 0.5;
  Level level = Level::medium;
  std::optional<double> valence;  // only from annotations, never from physiology
  double valence_confidence = 0.0;
};

/// `AS <t> <arousal> <level> <valence|-> <valence_confidence>`
inline std::string format_affect_line(const AffectState& s) {
  std::string out = "AS " + text::fixed(s.t) + " " + text::fixed(s.arousal) + " " + std::string(to_string(s.level)) + " ";
  out += s.valence ? text::fixed(*s.valence) : std::string("-");
  out += " " + text::fixed(s.valence_confidence);
  return out;
}

inline AffectState parse_affect_line(std::string_view line, std::size_t lineno = 1) {
  auto f = text::split_ws(line);
  if (f.size() != 6 || f[0] != "AS") throw ParseError(lineno, "expected 'AS <t> <arousal> <level> <valence> <conf>'");
  AffectState s;
  auto t = text::to_double(f[1]);
  auto a = text::to_double(f[2]);
  auto l = parse_level(f[3]);
  auto c = text::to_double(f[5]);
  if (!t || !a || !l || !c) throw ParseError(lineno, "malformed affect state");
  s.t = *t;
  s.arousal = *a;
  s.level = *l;
  if (f[4] != "-") {
    auto v = text::to_double(f[4]);
    if (!v) throw ParseError(lineno, "malformed valence");
    s.valence = *v;
  }
  s.valence_confidence = *c;
  return s;
}

// ---------------------------------------------------------------------------
// Arousal index

struct ArousalWeights {
  double hr = 1.0;
  double scl = 1.0;
  double scr = 1.0;
};

struct ArousalInputs {
  double z_hr = 0.0;
  double z_scl = 0.0;
  double z_scr = 0.0;
};

/// Linear-in-z mapping: 0.5 at baseline, +-3 sd on every component spans [0, 1].
inline double arousal_from_z(const ArousalInputs& z, const ArousalWeights& w = {}) {
  if (w.hr < 0 || w.scl < 0 || w.scr < 0) throw UsageError("arousal weights must be non-negative");
  double sum = w.hr + w.scl + w.scr;
  if (!(sum > 0.0)) throw UsageError("arousal weights must not all be zero");
  double a = 0.5 + (w.hr * z.z_hr + w.scl * z.z_scl + w.scr * z.z_scr) / (sum * 6.0);
  return std::clamp(a, 0.0, 1.0);
}

inline void check_baseline(const Baseline& b) {
  if (!(b.hr_sd > 0.0) || !(b.scl_sd > 0.0) || !(b.scr_rate >= 0.0) || !std::isfinite(b.hr_mean) ||
      !std::isfinite(b.scl_mean))
    throw DataError("invalid baseline");
}

/// z-scores of one feature window. `tonic_window` is the electrodermal level over
/// the same interval as `hr_window`; SCRs are those whose peak falls inside it.
inline ArousalInputs arousal_inputs(const UniformSeries& hr_window, const UniformSeries& tonic_window,
                                    std::span<const Scr> scrs_in_window, const Baseline& b) {
  check_baseline(b);
  if (hr_window.empty() || tonic_window.empty()) throw DataError("arousal_index: empty window");
  const double tol = std::max(1.0 / hr_window.rate, 1.0 / tonic_window.rate) + 1e-9;
  if (std::abs(hr_window.t0 - tonic_window.t0) > tol || std::abs(hr_window.end_time() - tonic_window.end_time()) > tol)
    throw DataError("arousal_index: heart-rate and electrodermal windows cover different intervals");
  const double span = std::max(hr_window.end_time() - hr_window.t0, tonic_window.end_time() - tonic_window.t0);
  if (span < 5.0 - tol) throw DataError("arousal_index: window shorter than 5 s");

  ArousalInputs z;
  z.z_hr = (detail::mean(hr_window.v) - b.hr_mean) / b.hr_sd;
  z.z_scl = (detail::mean(tonic_window.v) - b.scl_mean) / b.scl_sd;
  double rate = static_cast<double>(scrs_in_window.size()) / span * 60.0;
  z.z_scr = (rate - b.scr_rate) / std::max(b.scr_rate, 1.0);
  return z;
}

inline double arousal_index(const UniformSeries& hr_window, const UniformSeries& tonic_window,
                            std::span<const Scr> scrs_in_window, const Baseline& b, const ArousalWeights& w = {}) {
  return arousal_from_z(arousal_inputs(hr_window, tonic_window, scrs_in_window, b), w);
}

// ---------------------------------------------------------------------------
// Level classification with hysteresis and dwell

struct ClassifierConfig {
  double low_medium = 0.33;
  double medium_high = 0.66;
  double margin = 0.03;
  double dwell_s = 3.0;

  void validate() const {
    if (!(0.0 <= low_medium && low_medium < medium_high && medium_high <= 1.0))
      throw UsageError("classifier thresholds must satisfy 0 <= low_medium < medium_high <= 1");
    if (margin < 0.0) throw UsageError("classifier margin must be >= 0");
    if (dwell_s < 0.0) throw UsageError("classifier dwell must be >= 0");
  }
};

struct DwellState {
  std::optional<Level> level;      // absent before the first observation
  std::optional<Level> candidate;  // level the input currently points to, if different
  double since = 0.0;              // time the candidate was first seen
};

/// Level the input points to, given the level currently held. Crossing into a
/// neighbouring level requires passing the threshold by the margin.
inline Level target_level(double a, Level current, const ClassifierConfig& c) {
  auto raw = [&](double lo_shift, double hi_shift) {
    if (a < c.low_medium + lo_shift) return Level::low;
    if (a > c.medium_high + hi_shift) return Level::high;
    return Level::medium;
  };
  switch (current) {
    case Level::low: {
      // leave low only above low_medium + margin
      if (a > c.medium_high + c.margin) return Level::high;
      return a > c.low_medium + c.margin ? Level::medium : Level::low;
    }
    case Level::medium: return raw(-c.margin, c.margin);
    case Level::high: {
      if (a < c.low_medium - c.margin) return Level::low;
      return a < c.medium_high - c.margin ? Level::medium : Level::high;
    }
  }
  return current;
}

inline Level initial_level(double a, const ClassifierConfig& c) {
  if (a < c.low_medium) return Level::low;
  if (a > c.medium_high) return Level::high;
  return Level::medium;
}

inline std::pair<Level, DwellState> classify(double t, double arousal, DwellState st, const ClassifierConfig& c = {}) {
  if (!st.level) {
    st.level = initial_level(arousal, c);
    st.candidate.reset();
    return {*st.level, st};
  }
  Level target = target_level(arousal, *st.level, c);
  if (target == *st.level) {
    st.candidate.reset();
  } else if (st.candidate != target) {
    st.candidate = target;
    st.since = t;
  }
  if (st.candidate && t - st.since >= c.dwell_s - 1e-9) {
    st.level = *st.candidate;
    st.candidate.reset();
  }
  return {*st.level, st};
}

// ---------------------------------------------------------------------------
// Epochs and reaction templates

enum class EpochChannel { hr, phasic };

inline std::string_view to_string(EpochChannel c) { return c == EpochChannel::hr ? "hr" : "phasic"; }

inline std::optional<EpochChannel> parse_epoch_channel(std::string_view s) {
  if (s == "hr") return EpochChannel::hr;
  if (s == "phasic") return EpochChannel::phasic;
  return std::nullopt;
}

struct EpochGrid {
  double pre_s = 2.0;
  double post_s = 8.0;
  double rate_hz = 4.0;

  [[nodiscard]] std::size_t size() const {
    return static_cast<std::size_t>(std::llround((pre_s + post_s) * rate_hz));
  }
  [[nodiscard]] std::size_t pre_count() const { return static_cast<std::size_t>(std::llround(pre_s * rate_hz)); }
  [[nodiscard]] double offset(std::size_t k) const { return -pre_s + static_cast<double>(k) / rate_hz; }

  friend bool operator==(const EpochGrid&, const EpochGrid&) = default;

  void validate() const {
    if (!(pre_s > 0.0) || !(post_s > 0.0) || !(rate_hz > 0.0)) throw UsageError("epoch grid needs pre, post, rate > 0");
    if (pre_count() < 1 || size() <= pre_count()) throw UsageError("epoch grid too coarse");
  }
};

struct Epoch {
  double event_t = 0.0;
  EpochChannel channel = EpochChannel::phasic;
  EpochGrid grid;
  std::vector<double> values;
};

struct ReactionTemplate {
  std::string class_id;
  EpochChannel channel = EpochChannel::phasic;
  EpochGrid grid;
  std::vector<double> mean_curve;
  std::size_t n = 0;
};

/// Linear interpolation of a uniform series at time x (x inside the series).
inline double sample_at(const UniformSeries& s, double x) {
  double pos = (x - s.t0) * s.rate;
  if (pos <= 0.0) return s.v.front();
  auto i = static_cast<std::size_t>(std::floor(pos));
  if (i + 1 >= s.size()) return s.v.back();
  double f = pos - static_cast<double>(i);
  return s.v[i] + f * (s.v[i + 1] - s.v[i]);
}

/// Epoch on the grid [event_t - pre, event_t + post), baseline-corrected by the
/// mean of the pre-onset points.
inline Epoch extract_epoch(const UniformSeries& series, double event_t, const EpochGrid& grid = {},
                           EpochChannel channel = EpochChannel::phasic) {
  grid.validate();
  if (series.empty()) throw DataError("extract_epoch: empty series");
  const std::size_t n = grid.size();
  const double first = event_t + grid.offset(0);
  const double last = event_t + grid.offset(n - 1);
  const double tol = 1e-9;
  if (first < series.t0 - tol || last > series.end_time() + tol)
    throw DataError("extract_epoch: series does not cover the epoch at t=" + text::fixed(event_t));

  Epoch e{event_t, channel, grid, std::vector<double>(n)};
  for (std::size_t k = 0; k < n; ++k) e.values[k] = sample_at(series, event_t + grid.offset(k));
  const std::size_t pre = grid.pre_count();
  double base = detail::mean(std::span<const double>(e.values.data(), pre));
  for (double& v : e.values) v -= base;
  return e;
}

inline ReactionTemplate build_template(std::span<const Epoch> epochs, std::string class_id = "") {
  if (epochs.empty()) throw DataError("build_template: no epochs");
  const auto& g = epochs.front().grid;
  const auto ch = epochs.front().channel;
  ReactionTemplate t{std::move(class_id), ch, g, std::vector<double>(g.size(), 0.0), epochs.size()};
  for (const auto& e : epochs) {
    if (!(e.grid == g) || e.channel != ch || e.values.size() != g.size())
      throw DataError("build_template: epochs on different grids or channels");
    for (std::size_t k = 0; k < e.values.size(); ++k) t.mean_curve[k] += e.values[k];
  }
  for (double& v : t.mean_curve) v /= static_cast<double>(epochs.size());
  return t;
}

/// Pearson correlation; nullopt when either side is constant.
inline std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) return std::nullopt;
  double mx = detail::mean(x), my = detail::mean(y);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

struct TemplateMatch {
  double r = 0.0;
  bool matched = false;
};

/// Correlation over the post-onset points. A constant epoch has r = 0.
inline TemplateMatch match_template(const Epoch& epoch, const ReactionTemplate& tpl, double r_threshold = 0.6) {
  if (!(epoch.grid == tpl.grid) || epoch.values.size() != tpl.mean_curve.size())
    throw DataError("match_template: epoch and template grids differ");
  const std::size_t pre = tpl.grid.pre_count();
  std::span<const double> tv(tpl.mean_curve.data() + pre, tpl.mean_curve.size() - pre);
  std::span<const double> ev(epoch.values.data() + pre, epoch.values.size() - pre);
  auto tmin = std::min_element(tv.begin(), tv.end());
  auto tmax = std::max_element(tv.begin(), tv.end());
  if (*tmin == *tmax) throw DataError("match_template: template is constant after onset");
  double r = pearson(ev, tv).value_or(0.0);
  return {r, r >= r_threshold};
}

/// `T <class_id> <channel> <pre_s> <post_s> <rate_hz> <n> v1,v2,...`
inline std::string write_templates(std::span<const ReactionTemplate> templates) {
  std::string out;
  for (const auto& t : templates) {
    out += "T " + t.class_id + " " + std::string(to_string(t.channel)) + " " + text::shortest(t.grid.pre_s) + " " +
           text::shortest(t.grid.post_s) + " " + text::shortest(t.grid.rate_hz) + " " + std::to_string(t.n) + " ";
    for (std::size_t k = 0; k < t.mean_curve.size(); ++k) {
      if (k) out += ',';
      out += text::fixed(t.mean_curve[k]);
    }
    out += '\n';
  }
  return out;
}

inline std::vector<ReactionTemplate> parse_templates(std::string_view bytes) {
  std::vector<ReactionTemplate> out;
  text::for_each_line(bytes, [&](std::size_t lineno, std::string_view line) {
    auto tl = text::trim(line);
    if (tl.empty() || tl.front() == '#') return;
    auto f = text::split_ws(tl);
    if (f.size() != 8 || f[0] != "T") throw ParseError(lineno, "expected 'T <class> <channel> <pre> <post> <rate> <n> <values>'");
    ReactionTemplate t;
    t.class_id = std::string(f[1]);
    auto ch = parse_epoch_channel(f[2]);
    auto pre = text::to_double(f[3]);
    auto post = text::to_double(f[4]);
    auto rate = text::to_double(f[5]);
    auto n = text::to_int(f[6]);
    if (!ch || !pre || !post || !rate || !n || *n < 1) throw ParseError(lineno, "malformed template header");
    t.channel = *ch;
    t.grid = {*pre, *post, *rate};
    try {
      t.grid.validate();
    } catch (const UsageError& e) {
      throw ParseError(lineno, e.what());
    }
    t.n = static_cast<std::size_t>(*n);
    for (auto v : text::split(f[7], ',')) {
      auto d = text::to_double(v);
      if (!d) throw ParseError(lineno, "malformed curve value '" + std::string(v) + "'");
      t.mean_curve.push_back(*d);
    }
    if (t.mean_curve.size() != t.grid.size()) throw ParseError(lineno, "curve length does not match the grid");
    out.push_back(std::move(t));
  });
  return out;
}

}  // namespace affloop
