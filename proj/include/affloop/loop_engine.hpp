#pragma once

// The affective loop: correlating pattern events with electrodermal responses
// (analysis), and a band controller that injects or eases off patterns to hold
// estimated arousal in a target range (control), closed around the player model.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "affloop/affect.hpp"
#include "affloop/affect_engine.hpp"
#include "affloop/catalog.hpp"
#include "affloop/error.hpp"
#include "affloop/kv_config.hpp"
#include "affloop/player_sim.hpp"
#include "affloop/signal_model.hpp"
#include "affloop/text.hpp"

namespace affloop {

// ─── correlation ────────────────────────────────────────────────────────────

struct CorrelationParams {
  double window_lo_s = 1.0;
  double window_hi_s = 6.0;
  long long n_permutations = 1000;
  std::uint64_t seed = 1;
  double null_min_distance_s = 10.0;
};

struct CorrelationEntry {
  std::string pattern_id;
  std::size_t n_events = 0;
  double mean_response = 0.0;  // µS
  double null_mean = 0.0;      // µS
  double p_value = 1.0;
  double effect_size_d = 0.0;
};

struct CorrelationReport {
  std::vector<CorrelationEntry> entries;  // ordered by pattern id

  [[nodiscard]] const CorrelationEntry* find(const std::string& id) const {
    for (const auto& e : entries)
      if (e.pattern_id == id) return &e;
    return nullptr;
  }
};

namespace detail {

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline double window_max(const UniformSeries& x, double lo, double hi) {
  auto w = slice(x, lo, hi);
  if (w.empty()) throw DataError("response window at t=" + text::fixed(lo) + " lies outside the phasic series");
  return *std::max_element(w.v.begin(), w.v.end());
}

inline double sample_variance(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double m = mean(v), acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return acc / static_cast<double>(v.size() - 1);
}

}  // namespace detail

/// Per pattern: response = max phasic in [t + lo, t + hi] after each of its events.
/// The null statistic is the same mean over as many uniformly drawn grid times
/// lying at least `null_min_distance_s` from every event of the session.
inline CorrelationReport correlate_events(const SessionRecording& session, const UniformSeries& phasic,
                                          const Catalog& catalog, const CorrelationParams& p = {}) {
  if (p.n_permutations < 100) throw UsageError("correlate_events: need at least 100 permutations");
  if (!(p.window_lo_s >= 0.0 && p.window_hi_s > p.window_lo_s)) throw UsageError("correlate_events: bad response window");
  if (phasic.size() < 2) throw DataError("correlate_events: phasic series too short");

  std::map<std::string, std::vector<double>> event_times;
  for (const auto& e : session.events) {
    if (e.kind != EventKind::pattern_event) continue;
    for (const auto& id : e.pattern_ids) {
      if (!catalog.contains(id)) throw DataError("pattern event references unknown pattern '" + id + "'");
      event_times[id].push_back(e.t);
    }
  }
  CorrelationReport report;
  if (event_times.empty()) return report;

  // Null-eligible grid times and their responses.
  std::vector<double> all_events;
  for (const auto& e : session.events) all_events.push_back(e.t);
  std::sort(all_events.begin(), all_events.end());
  const auto off_lo = static_cast<std::size_t>(std::ceil(p.window_lo_s * phasic.rate - 1e-9));
  const auto off_hi = static_cast<std::size_t>(std::floor(p.window_hi_s * phasic.rate + 1e-9));
  std::vector<double> null_pool;
  {
    // Sliding maximum of width off_hi - off_lo + 1 starting at index j.
    const std::size_t n = phasic.size();
    const std::size_t width = off_hi - off_lo + 1;
    std::vector<double> wmax;
    if (n >= width) {
      wmax.resize(n - width + 1);
      std::deque<std::size_t> dq;
      for (std::size_t k = 0; k < n; ++k) {
        while (!dq.empty() && phasic.v[dq.back()] <= phasic.v[k]) dq.pop_back();
        dq.push_back(k);
        if (dq.front() + width <= k) dq.pop_front();
        if (k + 1 >= width) wmax[k + 1 - width] = phasic.v[dq.front()];
      }
    }
    for (std::size_t i = 0; i + off_lo < wmax.size(); ++i) {
      double t = phasic.time(i);
      auto it = std::lower_bound(all_events.begin(), all_events.end(), t - p.null_min_distance_s + 1e-9);
      if (it != all_events.end() && *it < t + p.null_min_distance_s - 1e-9) continue;
      null_pool.push_back(wmax[i + off_lo]);
    }
  }
  if (null_pool.empty()) throw DataError("correlate_events: no null-eligible time (events too dense)");

  for (const auto& [id, times] : event_times) {
    CorrelationEntry entry;
    entry.pattern_id = id;
    entry.n_events = times.size();
    std::vector<double> responses;
    for (double t : times) responses.push_back(detail::window_max(phasic, t + p.window_lo_s, t + p.window_hi_s));
    entry.mean_response = detail::mean(responses);

    std::seed_seq seq{static_cast<std::uint32_t>(p.seed), static_cast<std::uint32_t>(p.seed >> 32),
                      static_cast<std::uint32_t>(detail::fnv1a(id)), static_cast<std::uint32_t>(detail::fnv1a(id) >> 32)};
    std::mt19937_64 rng(seq);
    std::uniform_int_distribution<std::size_t> pick(0, null_pool.size() - 1);
    long long at_least = 0;
    double sum = 0.0, sum_sq = 0.0;
    for (long long k = 0; k < p.n_permutations; ++k) {
      double s = 0.0;
      for (std::size_t j = 0; j < times.size(); ++j) {
        double r = null_pool[pick(rng)];
        s += r;
        sum += r;
        sum_sq += r * r;
      }
      if (s / static_cast<double>(times.size()) >= entry.mean_response) ++at_least;
    }
    const double draws = static_cast<double>(p.n_permutations) * static_cast<double>(times.size());
    entry.null_mean = sum / draws;
    double null_var = draws > 1 ? std::max(0.0, (sum_sq - sum * sum / draws) / (draws - 1)) : 0.0;
    entry.p_value = static_cast<double>(1 + at_least) / static_cast<double>(1 + p.n_permutations);
    double pooled = std::sqrt(0.5 * (detail::sample_variance(responses) + null_var));
    entry.effect_size_d = pooled > 0.0 ? (entry.mean_response - entry.null_mean) / pooled : 0.0;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

/// `C <pattern_id> <n_events> <mean_response> <null_mean> <p_value> <d>` per line.
inline std::string write_report(const CorrelationReport& r) {
  std::string out;
  for (const auto& e : r.entries)
    out += "C " + e.pattern_id + " " + std::to_string(e.n_events) + " " + text::fixed(e.mean_response) + " " +
           text::fixed(e.null_mean) + " " + text::fixed(e.p_value) + " " + text::fixed(e.effect_size_d) + "\n";
  return out;
}

inline CorrelationReport parse_report(std::string_view bytes) {
  CorrelationReport r;
  text::for_each_line(bytes, [&](std::size_t lineno, std::string_view line) {
    auto tl = text::trim(line);
    if (tl.empty() || tl.front() == '#') return;
    auto f = text::split_ws(tl);
    if (f.size() != 7 || f[0] != "C") throw ParseError(lineno, "expected 'C <id> <n> <mean> <null> <p> <d>'");
    auto n = text::to_int(f[2]);
    auto m = text::to_double(f[3]), nm = text::to_double(f[4]), pv = text::to_double(f[5]), d = text::to_double(f[6]);
    if (!n || *n < 0 || !m || !nm || !pv || !d) throw ParseError(lineno, "malformed report entry");
    r.entries.push_back({std::string(f[1]), static_cast<std::size_t>(*n), *m, *nm, *pv, *d});
  });
  return r;
}

inline std::string report_tsv(const CorrelationReport& r) {
  std::string out = "pattern_id\tn_events\tmean_response\tnull_mean\tp_value\teffect_size_d\n";
  for (const auto& e : r.entries)
    out += e.pattern_id + "\t" + std::to_string(e.n_events) + "\t" + text::fixed(e.mean_response) + "\t" +
           text::fixed(e.null_mean) + "\t" + text::fixed(e.p_value) + "\t" + text::fixed(e.effect_size_d) + "\n";
  return out;
}

// ─── controller ─────────────────────────────────────────────────────────────

struct ControllerConfig {
  double a_lo = 0.4;
  double a_hi = 0.7;
  double dwell_s = 3.0;
  double cooldown_s = 5.0;
  double period_s = 1.0;
  // How long an injected pattern stays in play (and so is not picked again);
  // <= 0 uses the end of the pattern's annotated latency window.
  double active_s = 60.0;

  void validate() const {
    if (!(0.0 <= a_lo && a_lo < a_hi && a_hi <= 1.0)) throw UsageError("controller: need 0 <= a_lo < a_hi <= 1");
    if (dwell_s < 0.0) throw UsageError("controller: dwell_s must be >= 0");
    if (cooldown_s < 0.0) throw UsageError("controller: cooldown_s must be >= 0");
    if (!(period_s > 0.0)) throw UsageError("controller: period_s must be > 0");
  }
};

inline KvBinder bind_controller(ControllerConfig& c) {
  KvBinder b;
  b.number("a_lo", c.a_lo)
      .number("a_hi", c.a_hi)
      .number("dwell_s", c.dwell_s)
      .number("cooldown_s", c.cooldown_s)
      .number("period_s", c.period_s)
      .number("active_s", c.active_s);
  return b;
}

enum class DirectiveAction { inject_event, ease_off };
enum class DirectiveReason { below_band, above_band };

inline std::string_view to_string(DirectiveAction a) { return a == DirectiveAction::inject_event ? "inject_event" : "ease_off"; }
inline std::string_view to_string(DirectiveReason r) { return r == DirectiveReason::below_band ? "below_band" : "above_band"; }

struct AdaptationDirective {
  double t = 0.0;
  DirectiveAction action = DirectiveAction::inject_event;
  std::string pattern_id;
  DirectiveReason reason = DirectiveReason::below_band;

  bool operator==(const AdaptationDirective&) const = default;
};

inline std::string format_directive_line(const AdaptationDirective& d) {
  return "A " + text::fixed(d.t) + " " + std::string(to_string(d.action)) + " " + d.pattern_id + " " +
         std::string(to_string(d.reason));
}

inline AdaptationDirective parse_directive_line(std::string_view line, std::size_t lineno = 1) {
  auto f = text::split_ws(line);
  if (f.size() != 5 || f[0] != "A") throw ParseError(lineno, "expected 'A <t> <action> <pattern_id> <reason>'");
  AdaptationDirective d;
  auto t = text::to_double(f[1]);
  if (!t) throw ParseError(lineno, "malformed directive time");
  d.t = *t;
  if (f[2] == "inject_event") d.action = DirectiveAction::inject_event;
  else if (f[2] == "ease_off") d.action = DirectiveAction::ease_off;
  else throw ParseError(lineno, "unknown directive action '" + std::string(f[2]) + "'");
  d.pattern_id = std::string(f[3]);
  if (f[4] == "below_band") d.reason = DirectiveReason::below_band;
  else if (f[4] == "above_band") d.reason = DirectiveReason::above_band;
  else throw ParseError(lineno, "unknown directive reason '" + std::string(f[4]) + "'");
  return d;
}

struct ControllerState {
  std::optional<double> below_since;
  std::optional<double> above_since;
  std::optional<double> last_directive_t;
  std::map<std::string, double> last_use;  // pattern id -> time of its latest directive

  bool operator==(const ControllerState&) const = default;
};

/// Patterns whose latest directive is still inside their annotated latency window,
/// closed under `instantiates`.
inline PatternSet active_patterns(double now, const Catalog& cat, const ControllerState& st, double active_s = 0.0) {
  PatternSet running;
  for (const auto& [id, t] : st.last_use) {
    auto it = cat.patterns.find(id);
    if (it == cat.patterns.end()) continue;
    double hold = active_s > 0.0 ? active_s : it->second.affect.latency_hi_s;
    if (now - t <= hold + 1e-9) running.insert(id);
  }
  return effective_set(cat, running).active;
}

/// First pattern, in id order, with the wanted arousal effect that is neither
/// running nor in conflict with what is running.
inline std::optional<std::string> pick_pattern(const Catalog& cat, ArousalEffect effect, const PatternSet& active) {
  for (const auto& [id, p] : cat.patterns) {
    if (p.affect.arousal_effect != effect || active.count(id)) continue;
    if (conflicts_with_any(cat, id, active)) continue;
    return id;
  }
  return std::nullopt;
}

/// Fallback once every candidate is in play: the one whose latest directive is
/// oldest, still excluding conflicts with the other running patterns.
inline std::optional<std::string> least_recent_pattern(const Catalog& cat, ArousalEffect effect,
                                                       const PatternSet& active, const ControllerState& st) {
  std::optional<std::string> best;
  double best_t = 0.0;
  for (const auto& [id, p] : cat.patterns) {
    if (p.affect.arousal_effect != effect) continue;
    PatternSet others = active;
    others.erase(id);
    if (conflicts_with_any(cat, id, others)) continue;
    auto it = st.last_use.find(id);
    double t = it == st.last_use.end() ? -1e300 : it->second;
    if (!best || t < best_t) {
      best = id;
      best_t = t;
    }
  }
  return best;
}

inline void check_controller_catalog(const Catalog& cat) {
  for (const auto& [id, p] : cat.patterns)
    if (p.affect.arousal_effect == ArousalEffect::raise) return;
  throw UsageError("controller: catalog has no arousal-raising pattern");
}

/// One evaluation of the band controller; pure in all of its arguments.
inline std::pair<std::vector<AdaptationDirective>, ControllerState> control_step(double now, const AffectState& state,
                                                                                 const ControllerConfig& cfg,
                                                                                 const Catalog& cat,
                                                                                 ControllerState st) {
  cfg.validate();
  check_controller_catalog(cat);
  constexpr double eps = 1e-9;
  std::vector<AdaptationDirective> out;

  const bool below = state.arousal < cfg.a_lo;
  const bool above = state.arousal > cfg.a_hi;
  if (below) {
    st.above_since.reset();
    if (!st.below_since) st.below_since = now;
  } else if (above) {
    st.below_since.reset();
    if (!st.above_since) st.above_since = now;
  } else {
    st.below_since.reset();
    st.above_since.reset();
    return {out, st};
  }

  const double since = below ? *st.below_since : *st.above_since;
  if (now - since < cfg.dwell_s - eps) return {out, st};
  if (st.last_directive_t && now - *st.last_directive_t < cfg.cooldown_s - eps) return {out, st};

  const auto effect = below ? ArousalEffect::raise : ArousalEffect::lower;
  auto active = active_patterns(now, cat, st, cfg.active_s);
  auto id = pick_pattern(cat, effect, active);
  if (!id) id = least_recent_pattern(cat, effect, active, st);
  if (!id) return {out, st};
  out.push_back({now, below ? DirectiveAction::inject_event : DirectiveAction::ease_off, *id,
                 below ? DirectiveReason::below_band : DirectiveReason::above_band});
  st.last_directive_t = now;
  st.last_use[*id] = now;
  return {out, st};
}

// ─── closed loop ────────────────────────────────────────────────────────────

/// Feature windows for control: a single SCR inside a 5 s window moves the
/// index by about 0.24, enough to push it across the band on its own.
inline EngineConfig loop_engine_config() {
  EngineConfig c;
  c.window_s = 12.0;
  c.warmup_s = 12.0;
  return c;
}

struct LoopOptions {
  std::vector<GameEvent> schedule;  // autonomous events, played regardless of the controller
  bool inject = true;               // false: directives are logged but not delivered
  std::optional<Baseline> baseline; // absent: from a simulated calibration phase of the same player
  EngineConfig engine = loop_engine_config();
  ChannelRates rates;
  PhaseConfig calibration;          // protocol used for the automatic baseline
};

struct LoopTrace {
  std::vector<AffectState> states;
  std::vector<double> latent;  // player's true arousal at each state time
  std::vector<AdaptationDirective> directives;
  std::vector<GameEvent> events;
  SessionRecording session;
  Baseline baseline;

  bool operator==(const LoopTrace& o) const {
    auto same_states = states.size() == o.states.size() &&
                       std::equal(states.begin(), states.end(), o.states.begin(), [](const AffectState& a, const AffectState& b) {
                         return a.t == b.t && a.arousal == b.arousal && a.level == b.level && a.valence == b.valence &&
                                a.valence_confidence == b.valence_confidence;
                       });
    return same_states && latent == o.latent && directives == o.directives && events == o.events &&
           session == o.session;
  }
};

/// Baseline of a player from a simulated calibration phase (no other phases).
inline Baseline simulated_baseline(PlayerModel player, PhaseConfig phases, const EngineConfig& engine = {},
                                   ChannelRates rates = {}) {
  phases.calibration = true;
  phases.gaming = phases.strong_stimulus = false;
  auto sched = build_protocol_schedule(phases);
  player.initial_arousal = 0.0;
  auto rec = generate_session(player, sched.events, rates, sched.duration_s);
  auto [t0, t1] = sched.phase_bounds.at(kPhaseCalibration);
  return baseline_from_recording(rec, t0, t1, engine);
}

/// Player -> signals -> features -> affect -> controller -> pattern events -> player.
inline LoopTrace run_closed_loop(PlayerModel player, const ControllerConfig& cfg, const Catalog& cat,
                                 double duration_s, std::uint64_t seed, const LoopOptions& opt = {}) {
  cfg.validate();
  check_controller_catalog(cat);
  if (duration_s < 60.0) throw UsageError("closed loop needs a duration of at least 60 s");
  player.seed = seed;
  player.validate();

  LoopTrace trace;
  if (opt.baseline) {
    trace.baseline = *opt.baseline;
  } else {
    PhaseConfig cal = opt.calibration;
    cal.seed = static_cast<long long>(seed);
    PlayerModel p = player;
    p.seed = seed ^ 0x9e3779b97f4a7c15ull;
    trace.baseline = simulated_baseline(p, cal, opt.engine, opt.rates);
  }

  EngineConfig ecfg = opt.engine;
  ecfg.period_s = cfg.period_s;
  AffectEngine engine(trace.baseline, ecfg, &cat);
  engine.select_devices(kPulseDevice, kEdaDevice);
  SessionSimulator sim(player, opt.schedule, opt.rates, duration_s);
  ControllerState ctl;
  std::size_t pushed_pulse = 0, pushed_eda = 0, pushed_events = 0;

  while (!sim.done()) {
    sim.advance();
    const auto& rec = sim.recording();
    const auto& ev = rec.events;
    for (; pushed_events < ev.size(); ++pushed_events) engine.push_event(ev[pushed_events]);
    if (auto it = rec.streams.find({kPulseDevice, Channel::pulse}); it != rec.streams.end())
      for (; pushed_pulse < it->second.size(); ++pushed_pulse)
        engine.push({it->second.t[pushed_pulse], kPulseDevice, Channel::pulse, it->second.v[pushed_pulse]});
    if (auto it = rec.streams.find({kEdaDevice, Channel::eda}); it != rec.streams.end())
      for (; pushed_eda < it->second.size(); ++pushed_eda)
        engine.push({it->second.t[pushed_eda], kEdaDevice, Channel::eda, it->second.v[pushed_eda]});

    for (const auto& st : engine.poll()) {
      trace.states.push_back(st);
      trace.latent.push_back(sim.state().arousal);
      auto [dirs, next] = control_step(st.t, st, cfg, cat, ctl);
      ctl = std::move(next);
      for (const auto& d : dirs) {
        trace.directives.push_back(d);
        if (opt.inject && !sim.done())
          sim.inject({sim.next_time(), EventKind::pattern_event, {d.pattern_id}, std::nullopt});
      }
    }
  }
  trace.session = sim.finish();
  trace.events = trace.session.events;
  return trace;
}

/// Fraction of states with t >= from_t whose arousal lies in [a_lo, a_hi].
inline double time_in_band(const LoopTrace& trace, const ControllerConfig& cfg, double from_t) {
  std::size_t n = 0, in = 0;
  for (const auto& s : trace.states) {
    if (s.t < from_t - 1e-9) continue;
    ++n;
    if (s.arousal >= cfg.a_lo && s.arousal <= cfg.a_hi) ++in;
  }
  return n ? static_cast<double>(in) / static_cast<double>(n) : 0.0;
}

inline std::string write_directives(const std::vector<AdaptationDirective>& ds) {
  std::string out;
  for (const auto& d : ds) out += format_directive_line(d) + "\n";
  return out;
}

/// Line-delimited trace: AffectState lines, directive lines, and `L <t> <latent>` lines, in time order.
inline std::string write_trace(const LoopTrace& tr) {
  std::string out;
  std::size_t j = 0;
  for (std::size_t i = 0; i < tr.states.size(); ++i) {
    out += format_affect_line(tr.states[i]) + "\n";
    out += "L " + text::fixed(tr.states[i].t) + " " + text::fixed(tr.latent[i]) + "\n";
    for (; j < tr.directives.size() && tr.directives[j].t <= tr.states[i].t; ++j)
      out += format_directive_line(tr.directives[j]) + "\n";
  }
  for (; j < tr.directives.size(); ++j) out += format_directive_line(tr.directives[j]) + "\n";
  return out;
}

/// Columnar form for plotting: t, estimated arousal, level, latent arousal, directive at t.
inline std::string trace_tsv(const LoopTrace& tr) {
  std::string out = "t\tarousal\tlevel\tlatent\tdirective\n";
  std::size_t j = 0;
  for (std::size_t i = 0; i < tr.states.size(); ++i) {
    const auto& s = tr.states[i];
    std::string dir = "-";
    for (; j < tr.directives.size() && tr.directives[j].t <= s.t; ++j)
      dir = std::string(to_string(tr.directives[j].action)) + ":" + tr.directives[j].pattern_id;
    out += text::fixed(s.t) + "\t" + text::fixed(s.arousal) + "\t" + std::string(to_string(s.level)) + "\t" +
           text::fixed(tr.latent[i]) + "\t" + dir + "\n";
  }
  return out;
}

}  // namespace affloop
