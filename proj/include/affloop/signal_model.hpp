#pragma once

// Session data model: multi-device sample streams plus an event track,
// the line-delimited session format, resampling, clock alignment and windowing.
//
// Session file, one record per line:
//   H <subject_id> <session_epoch_iso8601>
//   D <device_id> <channel> <rate_hz>          (one per declared stream)
//   S <t> <device_id> <channel> <value>        (t with 6 decimals)
//   E <t> <kind> <pattern_ids|-> <payload|->
// Canonical order: H, D lines by (device, channel), then records by t;
// at equal t samples precede events, samples ordered by (device, channel),
// events keep their list order.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "affloop/error.hpp"
#include "affloop/text.hpp"

namespace affloop {

enum class Channel { pulse, eda, hr };

inline std::string_view to_string(Channel c) {
  switch (c) {
    case Channel::pulse: return "pulse";
    case Channel::eda: return "eda";
    case Channel::hr: return "hr";
  }
  return "?";
}

inline std::optional<Channel> parse_channel(std::string_view s) {
  if (s == "pulse") return Channel::pulse;
  if (s == "eda") return Channel::eda;
  if (s == "hr") return Channel::hr;
  return std::nullopt;
}

struct Sample {
  double t = 0.0;
  std::string device_id;
  Channel channel = Channel::pulse;
  double value = 0.0;

  bool operator==(const Sample&) const = default;
};

enum class EventKind { stimulus_onset, pattern_event, phase_marker, rating };

inline std::string_view to_string(EventKind k) {
  switch (k) {
    case EventKind::stimulus_onset: return "stimulus_onset";
    case EventKind::pattern_event: return "pattern_event";
    case EventKind::phase_marker: return "phase_marker";
    case EventKind::rating: return "rating";
  }
  return "?";
}

inline std::optional<EventKind> parse_event_kind(std::string_view s) {
  if (s == "stimulus_onset") return EventKind::stimulus_onset;
  if (s == "pattern_event") return EventKind::pattern_event;
  if (s == "phase_marker") return EventKind::phase_marker;
  if (s == "rating") return EventKind::rating;
  return std::nullopt;
}

/// Stimuli, pattern events, phase markers and ratings share one track.
/// Phase markers carry the phase name as their single pattern_ids entry.
struct GameEvent {
  double t = 0.0;
  EventKind kind = EventKind::stimulus_onset;
  std::vector<std::string> pattern_ids;
  std::optional<double> payload;

  bool operator==(const GameEvent&) const = default;
};

struct StreamKey {
  std::string device_id;
  Channel channel = Channel::pulse;

  friend bool operator==(const StreamKey&, const StreamKey&) = default;
  friend bool operator<(const StreamKey& a, const StreamKey& b) {
    return std::forward_as_tuple(a.device_id, to_string(a.channel)) <
           std::forward_as_tuple(b.device_id, to_string(b.channel));
  }
};

/// Irregular (t, value) sequence, t strictly increasing.
struct TimeSeries {
  std::vector<double> t;
  std::vector<double> v;

  [[nodiscard]] std::size_t size() const noexcept { return t.size(); }
  [[nodiscard]] bool empty() const noexcept { return t.empty(); }
  [[nodiscard]] double duration() const noexcept { return t.empty() ? 0.0 : t.back() - t.front(); }
  void push(double time, double value) {
    t.push_back(time);
    v.push_back(value);
  }
  bool operator==(const TimeSeries&) const = default;
};

/// Samples on the grid t0 + i / rate.
struct UniformSeries {
  double t0 = 0.0;
  double rate = 1.0;
  std::vector<double> v;

  [[nodiscard]] std::size_t size() const noexcept { return v.size(); }
  [[nodiscard]] bool empty() const noexcept { return v.empty(); }
  [[nodiscard]] double time(std::size_t i) const noexcept { return t0 + static_cast<double>(i) / rate; }
  [[nodiscard]] double duration() const noexcept {
    return v.empty() ? 0.0 : static_cast<double>(v.size() - 1) / rate;
  }
  [[nodiscard]] double end_time() const noexcept { return time(v.empty() ? 0 : v.size() - 1); }

  [[nodiscard]] TimeSeries to_time_series() const {
    TimeSeries ts;
    ts.t.reserve(v.size());
    ts.v = v;
    for (std::size_t i = 0; i < v.size(); ++i) ts.t.push_back(time(i));
    return ts;
  }
  bool operator==(const UniformSeries&) const = default;
};

struct StreamDecl {
  std::string device_id;
  Channel channel = Channel::pulse;
  double rate_hz = 0.0;

  [[nodiscard]] StreamKey key() const { return {device_id, channel}; }
  bool operator==(const StreamDecl&) const = default;
};

struct SessionMeta {
  std::string subject_id = "subject";
  std::string session_epoch = "1970-01-01T00:00:00Z";
  std::vector<StreamDecl> streams;

  bool operator==(const SessionMeta&) const = default;
};

struct SessionRecording {
  SessionMeta meta;
  std::map<StreamKey, TimeSeries> streams;
  std::vector<GameEvent> events;

  bool operator==(const SessionRecording&) const = default;

  [[nodiscard]] const StreamDecl* find_decl(const StreamKey& k) const {
    for (const auto& d : meta.streams)
      if (d.key() == k) return &d;
    return nullptr;
  }

  /// First stream carrying `ch`, or nullptr.
  [[nodiscard]] const TimeSeries* first_stream(Channel ch) const {
    for (const auto& [k, s] : streams)
      if (k.channel == ch && !s.empty()) return &s;
    return nullptr;
  }
};

struct ClockOffset {
  std::string device_id;
  double offset_s = 0.0;
};

inline constexpr double kMaxClockOffset = 60.0;

// ─── validation ─────────────────────────────────────────────────────────────

inline void check_sample_value(Channel ch, double t, double value) {
  if (!std::isfinite(t) || t < 0.0) throw DataError("sample time must be finite and >= 0");
  if (!std::isfinite(value)) throw DataError("sample value must be finite");
  if (ch == Channel::eda && value < 0.0) throw DataError("eda value must be >= 0");
  if (ch == Channel::hr && !(value > 0.0 && value < 300.0)) throw DataError("hr value must be in (0, 300)");
}

inline void check_event(const GameEvent& e) {
  if (!std::isfinite(e.t) || e.t < 0.0) throw DataError("event time must be finite and >= 0");
  if (e.kind == EventKind::pattern_event && e.pattern_ids.empty())
    throw DataError("pattern_event requires pattern ids");
  if (e.kind == EventKind::rating && (!e.payload || *e.payload < 1.0 || *e.payload > 9.0))
    throw DataError("rating requires payload in [1, 9]");
  for (const auto& id : e.pattern_ids)
    if (id.empty() || id.find_first_of(", \t\n") != std::string::npos || id == "-")
      throw DataError("invalid pattern id '" + id + "'");
}

/// Throws DataError on the first violated invariant.
inline void validate(const SessionRecording& rec) {
  for (const auto& [key, s] : rec.streams) {
    if (!rec.find_decl(key))
      throw DataError("stream " + key.device_id + "/" + std::string(to_string(key.channel)) + " not declared");
    if (s.t.size() != s.v.size()) throw DataError("stream time/value length mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      check_sample_value(key.channel, s.t[i], s.v[i]);
      if (i > 0 && !(s.t[i] > s.t[i - 1]))
        throw DataError("stream " + key.device_id + "/" + std::string(to_string(key.channel)) +
                        " not strictly increasing at sample " + std::to_string(i));
    }
  }
  for (std::size_t i = 0; i < rec.meta.streams.size(); ++i) {
    const auto& d = rec.meta.streams[i];
    if (!(d.rate_hz > 0.0) || !std::isfinite(d.rate_hz)) throw DataError("declared rate must be > 0");
    for (std::size_t j = 0; j < i; ++j)
      if (rec.meta.streams[j].key() == d.key()) throw DataError("stream declared twice: " + d.device_id);
  }
  for (std::size_t i = 0; i < rec.events.size(); ++i) {
    check_event(rec.events[i]);
    if (i > 0 && rec.events[i].t < rec.events[i - 1].t) throw DataError("events not ordered in time");
  }
}

// ─── line format ────────────────────────────────────────────────────────────

inline std::string format_sample_line(double t, std::string_view device, Channel ch, double value) {
  std::string out = "S ";
  out += text::fixed(t);
  out += ' ';
  out += device;
  out += ' ';
  out += to_string(ch);
  out += ' ';
  out += text::fixed(value);
  return out;
}

inline std::string format_event_line(const GameEvent& e) {
  std::string out = "E ";
  out += text::fixed(e.t);
  out += ' ';
  out += to_string(e.kind);
  out += ' ';
  if (e.pattern_ids.empty()) {
    out += '-';
  } else {
    for (std::size_t i = 0; i < e.pattern_ids.size(); ++i) {
      if (i) out += ',';
      out += e.pattern_ids[i];
    }
  }
  out += ' ';
  out += e.payload ? text::fixed(*e.payload) : std::string("-");
  return out;
}

/// Parses an `S` line (already split into fields). Field count and value checks only.
inline Sample parse_sample_fields(const std::vector<std::string_view>& f, std::size_t lineno) {
  if (f.size() != 5) throw ParseError(lineno, "sample line needs 5 fields");
  auto t = text::to_double(f[1]);
  if (!t) throw ParseError(lineno, "bad time '" + std::string(f[1]) + "'");
  auto ch = parse_channel(f[3]);
  if (!ch) throw ParseError(lineno, "unknown channel '" + std::string(f[3]) + "'");
  auto value = text::to_double(f[4]);
  if (!value) throw ParseError(lineno, "bad value '" + std::string(f[4]) + "'");
  try {
    check_sample_value(*ch, *t, *value);
  } catch (const DataError& e) {
    throw ParseError(lineno, e.what());
  }
  return Sample{*t, std::string(f[2]), *ch, *value};
}

inline Sample parse_sample_line(std::string_view line, std::size_t lineno = 1) {
  auto f = text::split_ws(line);
  if (f.empty() || f[0] != "S") throw ParseError(lineno, "expected sample line");
  return parse_sample_fields(f, lineno);
}

inline GameEvent parse_event_fields(const std::vector<std::string_view>& f, std::size_t lineno) {
  if (f.size() != 5) throw ParseError(lineno, "event line needs 5 fields");
  GameEvent e;
  auto t = text::to_double(f[1]);
  if (!t) throw ParseError(lineno, "bad time '" + std::string(f[1]) + "'");
  e.t = *t;
  auto kind = parse_event_kind(f[2]);
  if (!kind) throw ParseError(lineno, "unknown event kind '" + std::string(f[2]) + "'");
  e.kind = *kind;
  if (f[3] != "-")
    for (auto id : text::split(f[3], ',')) e.pattern_ids.emplace_back(id);
  if (f[4] != "-") {
    auto p = text::to_double(f[4]);
    if (!p) throw ParseError(lineno, "bad payload '" + std::string(f[4]) + "'");
    e.payload = *p;
  }
  try {
    check_event(e);
  } catch (const DataError& err) {
    throw ParseError(lineno, err.what());
  }
  return e;
}

inline SessionRecording parse_session(std::string_view bytes) {
  SessionRecording rec;
  bool have_header = false;
  bool in_body = false;
  std::size_t nonblank = 0;
  text::for_each_line(bytes, [&](std::size_t lineno, std::string_view line) {
    auto f = text::split_ws(line);
    if (f.empty()) return;
    ++nonblank;
    if (!have_header) {
      if (f[0] != "H") throw ParseError(lineno, "first line must be a header");
      if (f.size() != 3) throw ParseError(lineno, "header needs subject id and epoch");
      rec.meta.subject_id = std::string(f[1]);
      rec.meta.session_epoch = std::string(f[2]);
      have_header = true;
      return;
    }
    if (f[0] == "D") {
      if (in_body) throw ParseError(lineno, "declaration after records");
      if (f.size() != 4) throw ParseError(lineno, "declaration needs device, channel, rate");
      auto ch = parse_channel(f[2]);
      if (!ch) throw ParseError(lineno, "unknown channel '" + std::string(f[2]) + "'");
      auto rate = text::to_double(f[3]);
      if (!rate || !(*rate > 0.0) || !std::isfinite(*rate)) throw ParseError(lineno, "bad rate");
      StreamDecl d{std::string(f[1]), *ch, *rate};
      if (rec.find_decl(d.key())) throw ParseError(lineno, "stream declared twice");
      rec.meta.streams.push_back(d);
      return;
    }
    in_body = true;
    if (f[0] == "S") {
      Sample s = parse_sample_fields(f, lineno);
      StreamKey key{s.device_id, s.channel};
      if (!rec.find_decl(key)) throw ParseError(lineno, "unknown device/channel " + s.device_id);
      auto& ts = rec.streams[key];
      if (!ts.empty() && !(s.t > ts.t.back())) throw ParseError(lineno, "stream time not increasing");
      ts.push(s.t, s.value);
      return;
    }
    if (f[0] == "E") {
      GameEvent e = parse_event_fields(f, lineno);
      if (!rec.events.empty() && e.t < rec.events.back().t) throw ParseError(lineno, "event time decreasing");
      rec.events.push_back(std::move(e));
      return;
    }
    throw ParseError(lineno, "unknown line kind '" + std::string(f[0]) + "'");
  });
  if (nonblank == 0) throw DataError("empty session input");
  std::sort(rec.meta.streams.begin(), rec.meta.streams.end(),
            [](const StreamDecl& a, const StreamDecl& b) { return a.key() < b.key(); });
  return rec;
}

inline std::string write_session(const SessionRecording& rec) {
  validate(rec);
  std::string out = "H " + rec.meta.subject_id + " " + rec.meta.session_epoch + "\n";
  auto decls = rec.meta.streams;
  std::sort(decls.begin(), decls.end(), [](const StreamDecl& a, const StreamDecl& b) { return a.key() < b.key(); });
  for (const auto& d : decls) {
    out += "D " + d.device_id + " " + std::string(to_string(d.channel)) + " " + text::shortest(d.rate_hz) + "\n";
  }

  // k-way merge over streams (already in key order) and the event track.
  struct Cursor {
    const StreamKey* key;
    const TimeSeries* s;
    std::size_t i;
  };
  std::vector<Cursor> cur;
  for (const auto& [k, s] : rec.streams) cur.push_back({&k, &s, 0});
  std::size_t ev = 0;
  for (;;) {
    const Cursor* best = nullptr;
    for (const auto& c : cur) {
      if (c.i >= c.s->size()) continue;
      if (!best || c.s->t[c.i] < best->s->t[best->i]) best = &c;
    }
    bool event_first = ev < rec.events.size() && (!best || rec.events[ev].t < best->s->t[best->i]);
    if (event_first) {
      out += format_event_line(rec.events[ev++]);
      out += '\n';
      continue;
    }
    if (!best) break;
    auto& c = const_cast<Cursor&>(*best);
    out += format_sample_line(c.s->t[c.i], c.key->device_id, c.key->channel, c.s->v[c.i]);
    out += '\n';
    ++c.i;
  }
  return out;
}

// ─── resampling and windowing ───────────────────────────────────────────────

namespace detail {

/// Grid point count for [t0, t1] at `rate`, tolerant to round-off at the endpoint.
inline std::size_t grid_count(double t0, double t1, double rate) {
  return static_cast<std::size_t>(std::floor((t1 - t0) * rate + 1e-9)) + 1;
}

inline std::size_t samples_for(double seconds, double rate) {
  return static_cast<std::size_t>(std::floor(seconds * rate + 1e-9));
}

/// Linear interpolation of `s` at x; caller guarantees x within [t.front(), t.back()].
inline double interp_at(const TimeSeries& s, double x, std::size_t& hint) {
  while (hint + 1 < s.size() && s.t[hint + 1] <= x) ++hint;
  if (s.t[hint] == x || hint + 1 >= s.size()) return s.v[hint];
  double w = (x - s.t[hint]) / (s.t[hint + 1] - s.t[hint]);
  return s.v[hint] + (s.v[hint + 1] - s.v[hint]) * w;
}

}  // namespace detail

/// Uniform grid from first to last sample time, linear interpolation, no extrapolation.
inline UniformSeries resample(const TimeSeries& s, double rate_hz) {
  if (s.size() < 2) throw DataError("resample: need at least 2 samples");
  if (!(rate_hz >= 1.0 && rate_hz <= 10000.0)) throw DataError("resample: rate must be in [1, 10000] Hz");
  UniformSeries out;
  out.t0 = s.t.front();
  out.rate = rate_hz;
  std::size_t n = detail::grid_count(s.t.front(), s.t.back(), rate_hz);
  out.v.reserve(n);
  std::size_t hint = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double x = std::min(out.time(i), s.t.back());
    out.v.push_back(detail::interp_at(s, x, hint));
  }
  return out;
}

/// Restriction of `s` to samples with t in [lo, hi].
inline TimeSeries slice(const TimeSeries& s, double lo, double hi) {
  auto b = std::lower_bound(s.t.begin(), s.t.end(), lo);
  auto e = std::upper_bound(s.t.begin(), s.t.end(), hi);
  TimeSeries out;
  auto i0 = static_cast<std::size_t>(b - s.t.begin());
  auto i1 = static_cast<std::size_t>(e - s.t.begin());
  if (i1 <= i0) return out;
  out.t.assign(s.t.begin() + static_cast<std::ptrdiff_t>(i0), s.t.begin() + static_cast<std::ptrdiff_t>(i1));
  out.v.assign(s.v.begin() + static_cast<std::ptrdiff_t>(i0), s.v.begin() + static_cast<std::ptrdiff_t>(i1));
  return out;
}

/// Grid points of `s` whose time falls in [lo, hi].
inline UniformSeries slice(const UniformSeries& s, double lo, double hi) {
  UniformSeries out;
  out.rate = s.rate;
  if (s.empty()) return out;
  double first = std::ceil((lo - s.t0) * s.rate - 1e-9);
  double last = std::floor((hi - s.t0) * s.rate + 1e-9);
  auto i0 = static_cast<std::ptrdiff_t>(std::max(0.0, first));
  auto i1 = static_cast<std::ptrdiff_t>(std::min(static_cast<double>(s.size()) - 1.0, last));
  out.t0 = s.time(static_cast<std::size_t>(i0));
  if (i1 < i0) return out;
  out.v.assign(s.v.begin() + i0, s.v.begin() + i1 + 1);
  return out;
}

/// Windows of floor(len_s*rate) samples whose starts are floor(hop_s*rate) apart.
/// Trailing partial windows are dropped; a window longer than the series yields nothing.
inline std::vector<UniformSeries> sliding_windows(const UniformSeries& s, double len_s, double hop_s) {
  if (!(hop_s > 0.0) || len_s < hop_s) throw DataError("sliding_windows: need len_s >= hop_s > 0");
  std::size_t len = detail::samples_for(len_s, s.rate);
  std::size_t hop = detail::samples_for(hop_s, s.rate);
  if (len == 0 || hop == 0) throw DataError("sliding_windows: window shorter than one sample");
  std::vector<UniformSeries> out;
  for (std::size_t start = 0; start + len <= s.size(); start += hop) {
    UniformSeries w;
    w.rate = s.rate;
    w.t0 = s.time(start);
    w.v.assign(s.v.begin() + static_cast<std::ptrdiff_t>(start),
               s.v.begin() + static_cast<std::ptrdiff_t>(start + len));
    out.push_back(std::move(w));
  }
  return out;
}

// ─── clock alignment ────────────────────────────────────────────────────────

namespace detail {

inline double median_step(const TimeSeries& s) {
  std::vector<double> d;
  for (std::size_t i = 1; i < s.size(); ++i) d.push_back(s.t[i] - s.t[i - 1]);
  std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2), d.end());
  return d[d.size() / 2];
}

/// Resample onto the absolute grid k / rate so two series can be compared by index shift.
inline UniformSeries resample_on_absolute_grid(const TimeSeries& s, double rate) {
  double first = std::ceil(s.t.front() * rate - 1e-9);
  double last = std::floor(s.t.back() * rate + 1e-9);
  UniformSeries out;
  out.rate = rate;
  out.t0 = first / rate;
  std::size_t hint = 0;
  for (double k = first; k <= last; k += 1.0) {
    double x = std::clamp(k / rate, s.t.front(), s.t.back());
    out.v.push_back(interp_at(s, x, hint));
  }
  return out;
}

}  // namespace detail

/// Offset to add to `other` timestamps so it lines up with `reference`, found as the
/// lag maximizing normalized cross-correlation within +-max_lag_s.
/// `rate_hz` <= 0 picks the faster of the two native rates (capped at 1 kHz).
inline ClockOffset estimate_offset(const TimeSeries& reference, const TimeSeries& other, double max_lag_s,
                                   std::string other_device = {}, double rate_hz = 0.0) {
  if (reference.size() < 2 || other.size() < 2 || reference.duration() < 2.0 || other.duration() < 2.0)
    throw DataError("estimate_offset: sequences must cover at least 2 s");
  if (!(max_lag_s > 0.0)) throw DataError("estimate_offset: max_lag_s must be > 0");
  if (rate_hz <= 0.0)
    rate_hz = std::min(1000.0, 1.0 / std::min(detail::median_step(reference), detail::median_step(other)));

  auto a = detail::resample_on_absolute_grid(reference, rate_hz);
  auto b = detail::resample_on_absolute_grid(other, rate_hz);
  auto a0 = static_cast<long long>(std::llround(a.t0 * rate_hz));
  auto b0 = static_cast<long long>(std::llround(b.t0 * rate_hz));
  auto max_lag = static_cast<long long>(std::floor(max_lag_s * rate_hz + 1e-9));
  auto na = static_cast<long long>(a.size());
  auto nb = static_cast<long long>(b.size());
  // Require at least one second of overlap for a lag to count.
  auto min_overlap = std::max<long long>(2, static_cast<long long>(rate_hz));

  double best_r = -2.0;
  long long best_lag = 0;
  for (long long lag = -max_lag; lag <= max_lag; ++lag) {
    // reference index ka pairs with other index kb where (b0 + kb) + lag == a0 + ka.
    long long lo = std::max<long long>(0, b0 + lag - a0);
    long long hi = std::min<long long>(na, b0 + lag - a0 + nb);
    if (hi - lo < min_overlap) continue;
    double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
    auto n = static_cast<double>(hi - lo);
    for (long long ka = lo; ka < hi; ++ka) {
      double x = a.v[static_cast<std::size_t>(ka)];
      double y = b.v[static_cast<std::size_t>(ka + a0 - b0 - lag)];
      sa += x;
      sb += y;
      saa += x * x;
      sbb += y * y;
      sab += x * y;
    }
    double cov = sab - sa * sb / n;
    double va = saa - sa * sa / n;
    double vb = sbb - sb * sb / n;
    if (va <= 0.0 || vb <= 0.0) continue;
    double r = cov / std::sqrt(va * vb);
    if (r > best_r) {
      best_r = r;
      best_lag = lag;
    }
  }
  if (best_r < 0.5) throw DataError("estimate_offset: ambiguous alignment (correlation peak below 0.5)");
  double offset = static_cast<double>(best_lag) / rate_hz;
  if (std::abs(offset) >= kMaxClockOffset) throw DataError("estimate_offset: offset beyond sanity bound");
  return ClockOffset{std::move(other_device), offset};
}

/// Combines recordings onto the clock of recordings[0]. Every device of a later
/// recording needs an offset; its samples move by that offset. Events of a later
/// recording move by the offset of its first declared device.
inline SessionRecording merge_streams(std::span<const SessionRecording> recordings,
                                      std::span<const ClockOffset> offsets) {
  if (recordings.empty()) throw DataError("merge_streams: no recordings");
  auto offset_of = [&](const std::string& dev) -> std::optional<double> {
    for (const auto& o : offsets)
      if (o.device_id == dev) {
        if (!(std::abs(o.offset_s) < kMaxClockOffset)) throw DataError("clock offset out of bounds for " + dev);
        return o.offset_s;
      }
    return std::nullopt;
  };

  SessionRecording out;
  out.meta.subject_id = recordings[0].meta.subject_id;
  out.meta.session_epoch = recordings[0].meta.session_epoch;
  for (std::size_t r = 0; r < recordings.size(); ++r) {
    const auto& rec = recordings[r];
    for (const auto& d : rec.meta.streams) {
      if (out.find_decl(d.key()))
        throw DataError("merge_streams: conflicting duplicate stream " + d.device_id + "/" +
                        std::string(to_string(d.channel)));
      double shift = 0.0;
      if (r > 0) {
        auto o = offset_of(d.device_id);
        if (!o) throw DataError("merge_streams: missing offset for device " + d.device_id);
        shift = *o;
      }
      out.meta.streams.push_back(d);
      auto it = rec.streams.find(d.key());
      if (it == rec.streams.end()) continue;
      TimeSeries s = it->second;
      for (auto& t : s.t) {
        t += shift;
        if (t < 0.0) throw DataError("merge_streams: shifted sample before session epoch");
      }
      out.streams.emplace(d.key(), std::move(s));
    }
    double ev_shift = 0.0;
    if (r > 0 && !rec.meta.streams.empty()) ev_shift = offset_of(rec.meta.streams.front().device_id).value_or(0.0);
    for (auto e : rec.events) {
      e.t = std::max(0.0, e.t + ev_shift);
      out.events.push_back(std::move(e));
    }
  }
  std::stable_sort(out.events.begin(), out.events.end(),
                   [](const GameEvent& a, const GameEvent& b) { return a.t < b.t; });
  std::sort(out.meta.streams.begin(), out.meta.streams.end(),
            [](const StreamDecl& a, const StreamDecl& b) { return a.key() < b.key(); });
  validate(out);
  return out;
}

/// Sub-recording with only the streams of `device_id` (events kept).
inline SessionRecording select_device(const SessionRecording& rec, const std::string& device_id) {
  SessionRecording out;
  out.meta.subject_id = rec.meta.subject_id;
  out.meta.session_epoch = rec.meta.session_epoch;
  for (const auto& d : rec.meta.streams)
    if (d.device_id == device_id) out.meta.streams.push_back(d);
  for (const auto& [k, s] : rec.streams)
    if (k.device_id == device_id) out.streams.emplace(k, s);
  out.events = rec.events;
  return out;
}

}  // namespace affloop
