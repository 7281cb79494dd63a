#pragma once

// Incremental features -> arousal pipeline. Samples arrive in time order per
// stream; every evaluation period an AffectState is produced from the samples
// at or before the tick time only, so replaying a recording offline and feeding
// it live over the network give the same trace.

#include <algorithm>
#include <cmath>
#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "affloop/affect.hpp"
#include "affloop/catalog.hpp"
#include "affloop/error.hpp"
#include "affloop/features.hpp"
#include "affloop/kv_config.hpp"
#include "affloop/signal_model.hpp"

namespace affloop {

struct EngineConfig {
  double period_s = 1.0;
  double window_s = 5.0;
  double warmup_s = 10.0;  // first tick no earlier than this after both streams start
  double pulse_lookback_s = 20.0;
  double eda_lookback_s = 30.0;
  double hr_grid_hz = 4.0;
  double annotation_confidence = 0.5;  // valence confidence when taken from pattern annotations
  BeatParams beats;
  IbiParams ibi;
  EdaParams eda;
  ScrParams scr;
  ArousalWeights weights;
  ClassifierConfig classifier;

  void validate() const {
    if (!(period_s > 0.0)) throw UsageError("engine: period_s must be > 0");
    if (!(window_s >= 5.0)) throw UsageError("engine: window_s must be >= 5");
    if (warmup_s < window_s) throw UsageError("engine: warmup_s must be >= window_s");
    if (pulse_lookback_s < window_s || eda_lookback_s < window_s)
      throw UsageError("engine: lookbacks must be >= window_s");
    if (!(hr_grid_hz > 0.0)) throw UsageError("engine: hr_grid_hz must be > 0");
    if (annotation_confidence < 0.0 || annotation_confidence > 1.0)
      throw UsageError("engine: annotation_confidence must be in [0, 1]");
    classifier.validate();
    (void)arousal_from_z({}, weights);
  }
};

inline KvBinder bind_engine(EngineConfig& c) {
  KvBinder b;
  b.number("period_s", c.period_s)
      .number("window_s", c.window_s)
      .number("warmup_s", c.warmup_s)
      .number("pulse_lookback_s", c.pulse_lookback_s)
      .number("eda_lookback_s", c.eda_lookback_s)
      .number("hr_grid_hz", c.hr_grid_hz)
      .number("annotation_confidence", c.annotation_confidence)
      .number("tonic_window_s", c.eda.tonic_window_s)
      .number("scr_onset_slope", c.scr.onset_slope)
      .number("scr_min_amplitude", c.scr.min_amplitude)
      .number("weight_hr", c.weights.hr)
      .number("weight_scl", c.weights.scl)
      .number("weight_scr", c.weights.scr)
      .number("level_low_medium", c.classifier.low_medium)
      .number("level_medium_high", c.classifier.medium_high)
      .number("level_margin", c.classifier.margin)
      .number("level_dwell_s", c.classifier.dwell_s);
  return b;
}

namespace detail {

/// Nominal rate of a stream from its first sample steps, rounded to a whole Hz
/// when within 1 % of one.
inline double estimate_rate(const std::vector<double>& times) {
  TimeSeries s;
  s.t = times;
  s.v.assign(times.size(), 0.0);
  double r = 1.0 / median_step(s);
  double whole = std::round(r);
  if (whole >= 1.0 && std::abs(r - whole) <= 0.01 * whole) return whole;
  return r;
}

/// Values of `s` on the grid [t0, t0 + (n-1)/rate], holding the end values outside it.
inline UniformSeries hold_resample(const UniformSeries& s, double t0, double rate, std::size_t n) {
  UniformSeries out{t0, rate, std::vector<double>(n)};
  for (std::size_t k = 0; k < n; ++k) out.v[k] = sample_at(s, out.time(k));
  return out;
}

}  // namespace detail

/// Heart rate from a pulse stretch: beats -> interval-cleaned rate on a uniform grid.
inline HrSeries hr_from_pulse(const UniformSeries& pulse, const EngineConfig& c) {
  auto beats = detect_beats(pulse, c.beats);
  return ibi_to_hr(beats, c.hr_grid_hz, c.ibi);
}

/// Baseline from the [t0, t1] segment of a recording's first pulse and eda streams.
inline Baseline baseline_from_recording(const SessionRecording& rec, double t0, double t1, const EngineConfig& c = {}) {
  const auto* pulse = rec.first_stream(Channel::pulse);
  const auto* eda = rec.first_stream(Channel::eda);
  if (!pulse || !eda) throw DataError("calibration needs a pulse and an eda stream");
  auto p = slice(*pulse, t0, t1);
  auto e = slice(*eda, t0, t1);
  if (p.size() < 2 || e.size() < 2) throw DataError("calibration segment has no samples");
  auto pu = detail::resample_on_absolute_grid(p, detail::estimate_rate(p.t));
  auto eu = detail::resample_on_absolute_grid(e, detail::estimate_rate(e.t));
  auto hr = hr_from_pulse(pu, c);
  auto comp = eda_decompose(eu, c.eda);
  auto scrs = detect_scrs(comp, c.scr);
  return compute_baseline(hr, comp.tonic, scrs);
}

/// Whole-session decomposition of the first eda stream, on its own sample grid.
inline EdaComponents session_eda(const SessionRecording& rec, const EdaParams& p = {}) {
  const auto* eda = rec.first_stream(Channel::eda);
  if (!eda || eda->size() < 2) throw DataError("session has no eda stream");
  return eda_decompose(detail::resample_on_absolute_grid(*eda, detail::estimate_rate(eda->t)), p);
}

/// Heart rate derived from the first pulse stream of a session.
inline HrSeries session_hr(const SessionRecording& rec, const EngineConfig& c = {}) {
  const auto* pulse = rec.first_stream(Channel::pulse);
  if (!pulse || pulse->size() < 2) throw DataError("session has no pulse stream");
  return hr_from_pulse(detail::resample_on_absolute_grid(*pulse, detail::estimate_rate(pulse->t)), c);
}

class AffectEngine {
 public:
  AffectEngine(Baseline baseline, EngineConfig cfg = {}, const Catalog* catalog = nullptr)
      : baseline_(baseline), cfg_(std::move(cfg)), catalog_(catalog) {
    cfg_.validate();
    check_baseline(baseline_);
  }

  /// Pins the devices whose pulse / eda streams are used; otherwise the first
  /// device seen on each channel is used and others are ignored.
  void select_devices(std::string pulse_device, std::string eda_device) {
    pulse_.device = std::move(pulse_device);
    eda_.device = std::move(eda_device);
  }

  /// Throws DataError for a sample not later than the previous one of its stream.
  void push(const Sample& s) {
    Buffer* b = s.channel == Channel::pulse ? &pulse_ : s.channel == Channel::eda ? &eda_ : nullptr;
    if (!b) return;  // device-reported heart rate is not used by the live pipeline
    if (b->device.empty()) b->device = s.device_id;
    if (b->device != s.device_id) return;
    if (!b->t.empty() && !(s.t > b->t.back()))
      throw DataError("sample at t=" + text::fixed(s.t) + " is not after the previous " +
                      std::string(to_string(s.channel)) + " sample of " + s.device_id);
    if (b->first_times.size() < 64) b->first_times.push_back(s.t);
    b->t.push_back(s.t);
    b->v.push_back(s.value);
  }

  void push_event(const GameEvent& e) {
    if (e.kind == EventKind::pattern_event) events_.push_back(e);
  }

  /// Time up to which every used stream is complete.
  [[nodiscard]] std::optional<double> watermark() const {
    if (pulse_.t.empty() || eda_.t.empty()) return std::nullopt;
    return std::min(pulse_.t.back(), eda_.t.back());
  }

  /// All ticks whose time the streams have reached.
  std::vector<AffectState> poll() {
    std::vector<AffectState> out;
    auto wm = watermark();
    if (!wm) return out;
    if (!next_tick_) {
      double start = std::max(pulse_.t.front(), eda_.t.front()) + cfg_.warmup_s;
      next_tick_ = std::ceil(start / cfg_.period_s - 1e-9) * cfg_.period_s;
    }
    while (*next_tick_ <= *wm + 1e-9) {
      out.push_back(evaluate(*next_tick_));
      next_tick_ = *next_tick_ + cfg_.period_s;
      trim(*next_tick_);
    }
    return out;
  }

  /// State at the watermark when it lies past the last tick (end of input).
  std::optional<AffectState> flush() {
    auto wm = watermark();
    if (!wm || !next_tick_) return std::nullopt;
    double last = *next_tick_ - cfg_.period_s;
    if (*wm <= last + 1e-9 || *wm < std::max(pulse_.t.front(), eda_.t.front()) + cfg_.warmup_s) return std::nullopt;
    return evaluate(*wm);
  }

  [[nodiscard]] const Baseline& baseline() const noexcept { return baseline_; }
  [[nodiscard]] const EngineConfig& config() const noexcept { return cfg_; }
  /// z-scores behind the most recent state.
  [[nodiscard]] const ArousalInputs& last_inputs() const noexcept { return last_inputs_; }
  [[nodiscard]] std::size_t hr_gaps() const noexcept { return hr_gaps_; }
  [[nodiscard]] std::size_t eda_gaps() const noexcept { return eda_gaps_; }

 private:
  struct Buffer {
    std::string device;
    std::vector<double> first_times;
    std::deque<double> t;
    std::deque<double> v;
    double rate = 0.0;
  };

  UniformSeries grid(Buffer& b, double lo, double hi) {
    if (b.rate == 0.0) {
      if (b.first_times.size() < 2) throw DataError("stream " + b.device + " has fewer than 2 samples");
      b.rate = detail::estimate_rate(b.first_times);
    }
    TimeSeries s;
    auto it = std::lower_bound(b.t.begin(), b.t.end(), lo);
    for (auto i = static_cast<std::size_t>(it - b.t.begin()); i < b.t.size() && b.t[i] <= hi + 1e-9; ++i)
      s.push(b.t[i], b.v[i]);
    if (s.size() < 2) throw DataError("stream " + b.device + " has no samples in the window");
    return detail::resample_on_absolute_grid(s, b.rate);
  }

  void trim(double next_t) {
    auto drop = [](Buffer& b, double keep_from) {
      while (b.t.size() > 2 && b.t[1] < keep_from) {
        b.t.pop_front();
        b.v.pop_front();
      }
    };
    drop(pulse_, next_t - cfg_.pulse_lookback_s - 1.0);
    drop(eda_, next_t - cfg_.eda_lookback_s - 1.0);
  }

  AffectState evaluate(double T) {
    const double w0 = T - cfg_.window_s;
    const auto n_hr = detail::grid_count(w0, T, cfg_.hr_grid_hz);
    UniformSeries hr_win{w0, cfg_.hr_grid_hz, std::vector<double>(n_hr, baseline_.hr_mean)};
    try {
      auto pu = grid(pulse_, T - cfg_.pulse_lookback_s, T);
      auto hr = hr_from_pulse(pu, cfg_);
      hr_win = detail::hold_resample(hr.series, w0, cfg_.hr_grid_hz, n_hr);
    } catch (const DataError&) {
      ++hr_gaps_;  // no usable beats: heart rate counts as at baseline
    }

    const double eda_rate_guess = eda_.rate > 0.0 ? eda_.rate : cfg_.hr_grid_hz;
    UniformSeries tonic_win{w0, eda_rate_guess,
                            std::vector<double>(detail::grid_count(w0, T, eda_rate_guess), baseline_.scl_mean)};
    std::vector<Scr> scrs;
    try {
      auto eu = grid(eda_, T - cfg_.eda_lookback_s, T);
      auto comp = eda_decompose(eu, cfg_.eda);
      settle_tonic(comp);
      auto tw = slice(comp.tonic, w0, T);
      if (tw.size() >= 2) tonic_win = std::move(tw);
      for (const auto& s : detect_scrs(comp, cfg_.scr))
        if (s.peak_t > w0 && s.peak_t <= T) scrs.push_back(s);
    } catch (const DataError&) {
      ++eda_gaps_;
    }

    AffectState st;
    st.t = T;
    last_inputs_ = arousal_inputs(hr_win, tonic_win, scrs, baseline_);
    st.arousal = arousal_from_z(last_inputs_, cfg_.weights);
    auto [level, dwell] = classify(T, st.arousal, dwell_, cfg_.classifier);
    dwell_ = dwell;
    st.level = level;
    annotate_valence(st);
    return st;
  }

  // Within one tonic window of the live edge the opening works on truncated
  // windows and cannot tell a response tail from a level change; hold the last
  // fully supported level there.
  void settle_tonic(EdaComponents& c) const {
    const std::size_t n = c.tonic.size();
    const auto h = static_cast<std::size_t>(std::floor(cfg_.eda.tonic_window_s * c.tonic.rate + 1e-9));
    if (n <= h + 1) return;
    const double held = c.tonic.v[n - 1 - h];
    for (std::size_t i = n - h; i < n; ++i) {
      c.phasic.v[i] += c.tonic.v[i] - held;
      c.tonic.v[i] = held;
    }
  }

  // Valence comes only from the annotations of patterns whose response window
  // contains the tick; physiology does not inform it.
  void annotate_valence(AffectState& st) const {
    if (!catalog_) return;
    double sum = 0.0;
    int n = 0;
    for (const auto& e : events_) {
      if (e.t > st.t) break;
      for (const auto& id : e.pattern_ids) {
        auto it = catalog_->patterns.find(id);
        if (it == catalog_->patterns.end()) continue;
        const auto& a = it->second.affect;
        if (st.t < e.t + a.latency_lo_s || st.t > e.t + a.latency_hi_s) continue;
        sum += a.valence_effect == ValenceEffect::positive ? 1.0 : a.valence_effect == ValenceEffect::negative ? -1.0 : 0.0;
        ++n;
      }
    }
    if (n == 0) return;
    st.valence = sum / n;
    st.valence_confidence = cfg_.annotation_confidence;
  }

  Baseline baseline_;
  EngineConfig cfg_;
  const Catalog* catalog_ = nullptr;
  Buffer pulse_;
  Buffer eda_;
  std::vector<GameEvent> events_;
  std::optional<double> next_tick_;
  DwellState dwell_;
  ArousalInputs last_inputs_;
  std::size_t hr_gaps_ = 0;
  std::size_t eda_gaps_ = 0;
};

/// Offline run: every sample of the recording's first pulse and eda streams in
/// time order, events included. Ticks, then the end-of-input state if any.
inline std::vector<AffectState> affect_trace(const SessionRecording& rec, const Baseline& baseline,
                                             const EngineConfig& cfg = {}, const Catalog* catalog = nullptr) {
  AffectEngine engine(baseline, cfg, catalog);
  const auto* pulse = rec.first_stream(Channel::pulse);
  const auto* eda = rec.first_stream(Channel::eda);
  if (!pulse || !eda) throw DataError("session needs a pulse and an eda stream");
  for (const auto& e : rec.events) engine.push_event(e);
  std::vector<AffectState> out;
  std::size_t i = 0, j = 0;
  std::string pdev, edev;
  for (const auto& [k, s] : rec.streams) {
    if (&s == pulse) pdev = k.device_id;
    if (&s == eda) edev = k.device_id;
  }
  engine.select_devices(pdev, edev);
  while (i < pulse->size() || j < eda->size()) {
    bool take_pulse = j >= eda->size() || (i < pulse->size() && pulse->t[i] <= eda->t[j]);
    if (take_pulse) {
      engine.push({pulse->t[i], pdev, Channel::pulse, pulse->v[i]});
      ++i;
    } else {
      engine.push({eda->t[j], edev, Channel::eda, eda->v[j]});
      ++j;
    }
    for (auto& st : engine.poll()) out.push_back(st);
  }
  if (auto last = engine.flush()) out.push_back(*last);
  return out;
}

}  // namespace affloop
