#pragma once

// Synthetic player physiology. A latent arousal state jumps on game events and
// decays exponentially; each jump launches a bi-exponential skin conductance
// response after a fixed latency, and heart rate tracks latent arousal through
// a stylized pulse train. Also builds three-phase protocol schedules.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "affloop/catalog.hpp"
#include "affloop/error.hpp"
#include "affloop/kv_config.hpp"
#include "affloop/signal_model.hpp"

namespace affloop {

// Stimulus class ids used on calibration and strong-stimulus events.
inline constexpr const char* kStimHigh = "stim-high";
inline constexpr const char* kStimNeutral = "stim-neutral";
inline constexpr const char* kStrongStimulus = "strong-stimulus";

inline constexpr const char* kPhaseCalibration = "calibration";
inline constexpr const char* kPhaseGaming = "gaming";
inline constexpr const char* kPhaseStrong = "strong_stimulus";

struct PlayerModel {
  double tau_a = 20.0;
  std::map<std::string, double> pattern_gains;  // id -> arousal impulse gain
  double habituation_gamma = 0.9;
  double scr_tau1 = 2.0;
  double scr_tau2 = 0.75;
  double scr_coupling = 0.6;  // µS of SCR peak per unit arousal jump
  double scr_latency_s = 1.5;
  double hr_floor = 60.0;
  double hr_coupling = 30.0;  // bpm per unit latent arousal
  double tonic_base = 2.0;    // µS
  double noise_sigma_eda = 0.003;
  double pulse_amplitude = 1.0;  // mV
  double pulse_width_s = 0.04;
  double noise_sigma_pulse = 0.01;
  double initial_arousal = 0.0;
  std::uint64_t seed = 1;

  // Gain defaults by annotation class.
  static constexpr double kRaiseGain = 0.15;
  static constexpr double kLowerGain = -0.10;

  [[nodiscard]] double gain(const std::string& id) const {
    auto it = pattern_gains.find(id);
    return it == pattern_gains.end() ? 0.0 : it->second;
  }

  /// Default model: gains from the catalog annotations plus the stimulus classes.
  static PlayerModel from_catalog(const Catalog& cat) {
    PlayerModel m;
    for (const auto& [id, p] : cat.patterns) {
      switch (p.affect.arousal_effect) {
        case ArousalEffect::raise: m.pattern_gains[id] = kRaiseGain; break;
        case ArousalEffect::lower: m.pattern_gains[id] = kLowerGain; break;
        case ArousalEffect::neutral: m.pattern_gains[id] = 0.0; break;
      }
    }
    m.pattern_gains[kStimHigh] = kRaiseGain;
    m.pattern_gains[kStimNeutral] = 0.0;
    m.pattern_gains[kStrongStimulus] = 3.0 * kRaiseGain;
    return m;
  }

  void validate() const {
    if (!(tau_a > 0.0)) throw UsageError("player: tau_a must be > 0");
    if (!(scr_tau1 > scr_tau2 && scr_tau2 > 0.0)) throw UsageError("player: need scr_tau1 > scr_tau2 > 0");
    if (!(habituation_gamma > 0.0 && habituation_gamma <= 1.0))
      throw UsageError("player: habituation_gamma must be in (0, 1]");
    for (const auto& [id, g] : pattern_gains)
      if (!(g >= -1.0 && g <= 1.0)) throw UsageError("player: gain for " + id + " outside [-1, 1]");
    if (noise_sigma_eda < 0.0 || noise_sigma_pulse < 0.0) throw UsageError("player: noise must be >= 0");
    if (!(pulse_width_s > 0.0)) throw UsageError("player: pulse_width_s must be > 0");
    if (scr_latency_s < 0.0) throw UsageError("player: scr_latency_s must be >= 0");
  }
};

/// Value at time t after onset of a unit-peak bi-exponential kernel.
inline double scr_kernel_unit(double t, double tau1, double tau2) {
  if (t <= 0.0) return 0.0;
  double t_peak = std::log(tau1 / tau2) * tau1 * tau2 / (tau1 - tau2);
  double peak = std::exp(-t_peak / tau1) - std::exp(-t_peak / tau2);
  return (std::exp(-t / tau1) - std::exp(-t / tau2)) / peak;
}

inline double scr_kernel_peak_time(double tau1, double tau2) {
  return std::log(tau1 / tau2) * tau1 * tau2 / (tau1 - tau2);
}

struct ActiveKernel {
  double start = 0.0;
  double amplitude = 0.0;
};

struct PlayerState {
  double t = 0.0;
  double arousal = 0.0;
  double phase = 0.5;  // pulse-train phase in beats
  std::map<std::string, int> repetitions;
  std::vector<ActiveKernel> kernels;
  std::vector<double> beat_times;  // generator beat schedule, kept for verification
  std::mt19937_64 rng;
};

struct PlayerOutput {
  double eda = 0.0;    // µS
  double pulse = 0.0;  // mV
  double bpm = 0.0;
  double arousal = 0.0;
};

inline PlayerState initial_state(const PlayerModel& m) {
  PlayerState s;
  s.arousal = m.initial_arousal;
  s.rng.seed(m.seed);
  return s;
}

namespace detail {

inline double pulse_value(const PlayerModel& m, double phase, double bpm) {
  double frac = phase - std::floor(phase);
  double d = std::min(frac, 1.0 - frac) * 60.0 / bpm;
  double z = d / m.pulse_width_s;
  return m.pulse_amplitude * std::exp(-0.5 * z * z);
}

inline void apply_events(const PlayerModel& m, PlayerState& s, std::span<const GameEvent> events) {
  for (const auto& e : events) {
    if (e.kind != EventKind::pattern_event && e.kind != EventKind::stimulus_onset) continue;
    for (const auto& id : e.pattern_ids) {
      int& rep = s.repetitions[id];
      double jump = m.gain(id) * std::pow(m.habituation_gamma, rep);
      ++rep;
      s.arousal += jump;
      if (jump > 0.0) s.kernels.push_back({e.t + m.scr_latency_s, m.scr_coupling * jump});
    }
  }
}

inline PlayerOutput observe(const PlayerModel& m, PlayerState& s) {
  std::normal_distribution<double> unit(0.0, 1.0);
  PlayerOutput o;
  o.arousal = s.arousal;
  o.bpm = m.hr_floor + m.hr_coupling * s.arousal;
  double eda = m.tonic_base;
  for (const auto& k : s.kernels) eda += k.amplitude * scr_kernel_unit(s.t - k.start, m.scr_tau1, m.scr_tau2);
  double n_eda = unit(s.rng);
  double n_pulse = unit(s.rng);
  o.eda = std::max(0.0, eda + m.noise_sigma_eda * n_eda);
  o.pulse = pulse_value(m, s.phase, o.bpm) + m.noise_sigma_pulse * n_pulse;
  return o;
}

}  // namespace detail

/// Applies events at the current time without advancing (used for t = 0).
inline PlayerOutput step_zero(const PlayerModel& m, PlayerState& s, std::span<const GameEvent> events_now) {
  detail::apply_events(m, s, events_now);
  return detail::observe(m, s);
}

/// Advances the player by dt: arousal decays, then `events_now` add their
/// habituated gains and schedule SCR kernels; returns the observation at the new time.
inline PlayerOutput step(const PlayerModel& m, PlayerState& s, double dt, std::span<const GameEvent> events_now) {
  if (!(dt > 0.0 && dt <= 0.1)) throw DataError("player step: dt must be in (0, 0.1]");
  double bpm_before = m.hr_floor + m.hr_coupling * s.arousal;
  double phase_next = s.phase + bpm_before / 60.0 * dt;
  double crossing = std::floor(phase_next);
  if (crossing > std::floor(s.phase)) {
    double frac = (crossing - s.phase) / (phase_next - s.phase);
    s.beat_times.push_back(s.t + frac * dt);
  }
  s.phase = phase_next;
  s.t += dt;
  s.arousal *= std::exp(-dt / m.tau_a);
  detail::apply_events(m, s, events_now);
  std::erase_if(s.kernels, [&](const ActiveKernel& k) { return s.t - k.start > 30.0 * m.scr_tau1; });
  return detail::observe(m, s);
}

// ─── sessions ───────────────────────────────────────────────────────────────

struct ChannelRates {
  double pulse_hz = 100.0;
  double eda_hz = 20.0;
};

inline constexpr const char* kPulseDevice = "pulse0";
inline constexpr const char* kEdaDevice = "eda0";

/// Steps a player over a schedule while recording pulse and eda streams.
/// Extra events may be injected between steps (closed-loop use); without
/// injections the result equals generate_session.
class SessionSimulator {
 public:
  SessionSimulator(PlayerModel model, std::vector<GameEvent> schedule, ChannelRates rates, double duration_s)
      : model_(std::move(model)), schedule_(std::move(schedule)), rates_(rates), duration_(duration_s) {
    model_.validate();
    if (!(rates_.pulse_hz > 0.0 && rates_.eda_hz > 0.0)) throw UsageError("rates must be > 0");
    base_rate_ = std::max(rates_.pulse_hz, rates_.eda_hz);
    if (base_rate_ < 10.0) throw UsageError("simulation needs a channel rate of at least 10 Hz");
    pulse_every_ = ratio(base_rate_, rates_.pulse_hz);
    eda_every_ = ratio(base_rate_, rates_.eda_hz);
    total_steps_ = static_cast<std::size_t>(std::floor(duration_s * base_rate_ + 1e-9));
    if (!(duration_s > 0.0)) throw DataError("duration must be > 0");
    std::stable_sort(schedule_.begin(), schedule_.end(),
                     [](const GameEvent& a, const GameEvent& b) { return a.t < b.t; });
    if (!schedule_.empty() && schedule_.back().t > duration_s) throw DataError("schedule exceeds duration");
    state_ = initial_state(model_);

    rec_.meta.subject_id = "sim-" + std::to_string(model_.seed);
    rec_.meta.streams = {{kEdaDevice, Channel::eda, rates_.eda_hz}, {kPulseDevice, Channel::pulse, rates_.pulse_hz}};
  }

  [[nodiscard]] bool done() const noexcept { return next_step_ >= total_steps_; }
  [[nodiscard]] double dt() const noexcept { return 1.0 / base_rate_; }
  /// Time of the next step to be produced.
  [[nodiscard]] double next_time() const noexcept { return static_cast<double>(next_step_) / base_rate_; }
  [[nodiscard]] const PlayerState& state() const noexcept { return state_; }
  [[nodiscard]] const PlayerModel& model() const noexcept { return model_; }
  [[nodiscard]] const SessionRecording& recording() const noexcept { return rec_; }

  /// Queues an event; it is applied at the first step whose time is >= e.t.
  void inject(GameEvent e) { injected_.push_back(std::move(e)); }

  /// Produces one base-rate step; returns the observation.
  PlayerOutput advance() {
    const double t = next_time();
    std::vector<GameEvent> now;
    while (sched_pos_ < schedule_.size() && schedule_[sched_pos_].t <= t + 1e-12) {
      now.push_back(schedule_[sched_pos_]);
      rec_.events.push_back(schedule_[sched_pos_]);
      ++sched_pos_;
    }
    for (auto& e : injected_) {
      now.push_back(e);
      rec_.events.push_back(std::move(e));
    }
    injected_.clear();
    if (!now.empty())
      std::stable_sort(rec_.events.begin(), rec_.events.end(),
                       [](const GameEvent& a, const GameEvent& b) { return a.t < b.t; });

    PlayerOutput o = next_step_ == 0 ? step_zero(model_, state_, now) : step(model_, state_, dt(), now);
    // Grid time from the step index keeps sample times free of accumulated round-off.
    if (next_step_ % pulse_every_ == 0) rec_.streams[{kPulseDevice, Channel::pulse}].push(t, o.pulse);
    if (next_step_ % eda_every_ == 0) rec_.streams[{kEdaDevice, Channel::eda}].push(t, o.eda);
    ++next_step_;
    return o;
  }

  SessionRecording finish() {
    while (!done()) advance();
    for (; sched_pos_ < schedule_.size(); ++sched_pos_) rec_.events.push_back(schedule_[sched_pos_]);
    return rec_;
  }

 private:
  static std::size_t ratio(double base, double rate) {
    double r = base / rate;
    auto k = static_cast<std::size_t>(std::llround(r));
    if (k == 0 || std::abs(r - static_cast<double>(k)) > 1e-9)
      throw UsageError("channel rates must divide the fastest rate evenly");
    return k;
  }

  PlayerModel model_;
  std::vector<GameEvent> schedule_;
  ChannelRates rates_;
  double duration_;
  double base_rate_ = 100.0;
  std::size_t pulse_every_ = 1;
  std::size_t eda_every_ = 1;
  std::size_t total_steps_ = 0;
  std::size_t next_step_ = 0;
  std::size_t sched_pos_ = 0;
  std::vector<GameEvent> injected_;
  PlayerState state_;
  SessionRecording rec_;
};

/// Full session for a schedule; deterministic given the model seed.
inline SessionRecording generate_session(const PlayerModel& model, const std::vector<GameEvent>& schedule,
                                         ChannelRates rates, double duration_s) {
  SessionSimulator sim(model, schedule, rates, duration_s);
  return sim.finish();
}

/// Stylized pulse train with a prescribed instantaneous rate, for beat-detector checks.
struct PulseTrain {
  UniformSeries pulse;
  std::vector<double> beats;
};

template <typename BpmFn>
PulseTrain synth_pulse_train(double rate_hz, double duration_s, BpmFn bpm_at, double noise_sigma = 0.0,
                             std::uint64_t seed = 1, double width_s = 0.04, double start_phase = 0.5) {
  PlayerModel shape;
  shape.pulse_width_s = width_s;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  PulseTrain out;
  out.pulse.t0 = 0.0;
  out.pulse.rate = rate_hz;
  auto n = static_cast<std::size_t>(std::floor(duration_s * rate_hz + 1e-9));
  // Phase integrates the rate on a fine sub-grid so beat times are accurate at low sample rates.
  constexpr int kSub = 20;
  double phase = start_phase;
  double t = 0.0;
  const double dt = 1.0 / rate_hz / kSub;
  for (std::size_t i = 0; i < n; ++i) {
    double bpm = bpm_at(t);
    out.pulse.v.push_back(detail::pulse_value(shape, phase, bpm) + noise_sigma * unit(rng));
    for (int k = 0; k < kSub; ++k) {
      double next = phase + bpm_at(t) / 60.0 * dt;
      if (std::floor(next) > std::floor(phase)) {
        double frac = (std::floor(next) - phase) / (next - phase);
        out.beats.push_back(t + frac * dt);
      }
      phase = next;
      t += dt;
    }
    t = static_cast<double>(i + 1) / rate_hz;
  }
  return out;
}

// ─── protocol schedules ─────────────────────────────────────────────────────

struct PhaseConfig {
  bool calibration = true;
  bool gaming = true;
  bool strong_stimulus = true;

  long long calibration_stimuli = 10;
  double calibration_lead_s = 10.0;
  double stimulus_display_s = 6.0;
  double rating_s = 4.0;

  double gaming_s = 180.0;
  double gaming_rate_per_min = 6.0;
  double gaming_min_gap_s = 3.0;
  std::vector<std::string> gaming_patterns;  // empty: the seed catalog ids

  double neutral_s = 30.0;
  double strong_post_s = 30.0;

  long long seed = 7;

  void set_phases(std::string_view list) {
    calibration = gaming = strong_stimulus = false;
    for (auto p : text::split(list, ',')) {
      p = text::trim(p);
      if (p == kPhaseCalibration) calibration = true;
      else if (p == kPhaseGaming) gaming = true;
      else if (p == kPhaseStrong) strong_stimulus = true;
      else throw UsageError("unknown phase '" + std::string(p) + "'");
    }
  }
};

struct PhaseSchedule {
  std::vector<GameEvent> events;
  double duration_s = 0.0;
  std::map<std::string, std::pair<double, double>> phase_bounds;  // name -> [start, end)
};

/// Calibration stimuli alternate high-gain and neutral pictures, each followed by
/// a rating; gaming draws pattern events from a Poisson process with a minimum gap;
/// the final phase shows a neutral picture period then one strong stimulus.
inline PhaseSchedule build_protocol_schedule(const PhaseConfig& cfg) {
  if (cfg.calibration_stimuli < 0 || cfg.stimulus_display_s <= 0.0 || cfg.rating_s < 0.0 ||
      cfg.calibration_lead_s < 0.0)
    throw UsageError("invalid calibration phase configuration");
  if (cfg.gaming_s <= 0.0 || cfg.gaming_rate_per_min < 0.0 || cfg.gaming_min_gap_s < 0.0)
    throw UsageError("invalid gaming phase configuration");
  if (cfg.neutral_s < 0.0 || cfg.strong_post_s < 0.0) throw UsageError("invalid strong-stimulus configuration");
  if (!cfg.calibration && !cfg.gaming && !cfg.strong_stimulus) throw UsageError("no phases selected");

  std::mt19937_64 rng(static_cast<std::uint64_t>(cfg.seed));
  PhaseSchedule out;
  double t = 0.0;
  auto marker = [&](const char* name) { out.events.push_back({t, EventKind::phase_marker, {name}, std::nullopt}); };

  if (cfg.calibration) {
    marker(kPhaseCalibration);
    double start = t;
    for (long long k = 0; k < cfg.calibration_stimuli; ++k) {
      double onset = start + cfg.calibration_lead_s + static_cast<double>(k) * (cfg.stimulus_display_s + cfg.rating_s);
      bool high = k % 2 == 0;
      out.events.push_back({onset, EventKind::stimulus_onset, {high ? kStimHigh : kStimNeutral}, std::nullopt});
      std::uniform_int_distribution<int> rating(high ? 7 : 4, high ? 9 : 6);
      out.events.push_back({onset + cfg.stimulus_display_s, EventKind::rating, {}, static_cast<double>(rating(rng))});
    }
    t = start + cfg.calibration_lead_s +
        static_cast<double>(cfg.calibration_stimuli) * (cfg.stimulus_display_s + cfg.rating_s);
    out.phase_bounds[kPhaseCalibration] = {start, t};
  }

  if (cfg.gaming) {
    marker(kPhaseGaming);
    double start = t;
    double end = start + cfg.gaming_s;
    std::vector<std::string> ids = cfg.gaming_patterns;
    if (ids.empty())
      for (const auto& [id, p] : seed_catalog().patterns) ids.push_back(id);
    if (cfg.gaming_rate_per_min > 0.0) {
      std::exponential_distribution<double> gap(cfg.gaming_rate_per_min / 60.0);
      std::uniform_int_distribution<std::size_t> pick(0, ids.size() - 1);
      double et = start;
      for (;;) {
        et += cfg.gaming_min_gap_s + gap(rng);
        if (et >= end) break;
        out.events.push_back({et, EventKind::pattern_event, {ids[pick(rng)]}, std::nullopt});
      }
    }
    t = end;
    out.phase_bounds[kPhaseGaming] = {start, t};
  }

  if (cfg.strong_stimulus) {
    marker(kPhaseStrong);
    double start = t;
    out.events.push_back({start + cfg.neutral_s, EventKind::stimulus_onset, {kStrongStimulus}, std::nullopt});
    t = start + cfg.neutral_s + cfg.strong_post_s;
    out.phase_bounds[kPhaseStrong] = {start, t};
  }
  out.duration_s = t;
  return out;
}

/// [start, end) of a phase from the marker events of a session; end is the next
/// marker or `session_end`.
inline std::optional<std::pair<double, double>> find_phase(const std::vector<GameEvent>& events,
                                                           const std::string& phase, double session_end) {
  for (std::size_t i = 0; i < events.size(); ++i) {
    const auto& e = events[i];
    if (e.kind != EventKind::phase_marker || e.pattern_ids.empty() || e.pattern_ids[0] != phase) continue;
    double end = session_end;
    for (std::size_t j = i + 1; j < events.size(); ++j)
      if (events[j].kind == EventKind::phase_marker) {
        end = events[j].t;
        break;
      }
    return std::make_pair(e.t, end);
  }
  return std::nullopt;
}

// ─── config files ───────────────────────────────────────────────────────────

inline KvBinder bind_player(PlayerModel& m, long long& seed) {
  KvBinder b;
  b.number("tau_a", m.tau_a)
      .number("habituation_gamma", m.habituation_gamma)
      .number("scr_tau1", m.scr_tau1)
      .number("scr_tau2", m.scr_tau2)
      .number("scr_coupling", m.scr_coupling)
      .number("scr_latency_s", m.scr_latency_s)
      .number("hr_floor", m.hr_floor)
      .number("hr_coupling", m.hr_coupling)
      .number("tonic_base", m.tonic_base)
      .number("noise_sigma_eda", m.noise_sigma_eda)
      .number("noise_sigma_pulse", m.noise_sigma_pulse)
      .number("pulse_amplitude", m.pulse_amplitude)
      .number("pulse_width_s", m.pulse_width_s)
      .number("initial_arousal", m.initial_arousal)
      .integer("seed", seed)
      .prefix("gain.", [&m](std::string_view id, std::string_view v) {
        auto d = text::to_double(v);
        if (!d) throw UsageError("gain for '" + std::string(id) + "' is not a number");
        m.pattern_gains[std::string(id)] = *d;
      });
  return b;
}

/// Applies `key = value` overrides to a model (see bind_player for the keys).
inline void apply_player_config(PlayerModel& m, std::string_view bytes) {
  auto seed = static_cast<long long>(m.seed);
  bind_player(m, seed).apply_all(parse_kv(bytes));
  m.seed = static_cast<std::uint64_t>(seed);
  m.validate();
}

inline KvBinder bind_phases(PhaseConfig& c) {
  KvBinder b;
  b.custom("phases", [&c](std::string_view v) { c.set_phases(v); })
      .integer("calibration_stimuli", c.calibration_stimuli)
      .number("calibration_lead_s", c.calibration_lead_s)
      .number("stimulus_display_s", c.stimulus_display_s)
      .number("rating_s", c.rating_s)
      .number("gaming_s", c.gaming_s)
      .number("gaming_rate_per_min", c.gaming_rate_per_min)
      .number("gaming_min_gap_s", c.gaming_min_gap_s)
      .custom("gaming_patterns",
              [&c](std::string_view v) {
                c.gaming_patterns.clear();
                for (auto id : text::split(v, ',')) c.gaming_patterns.emplace_back(text::trim(id));
              })
      .number("neutral_s", c.neutral_s)
      .number("strong_post_s", c.strong_post_s)
      .integer("schedule_seed", c.seed);
  return b;
}

inline void apply_phase_config(PhaseConfig& c, std::string_view bytes) { bind_phases(c).apply_all(parse_kv(bytes)); }

}  // namespace affloop
