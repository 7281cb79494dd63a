// affloop: simulate, calibrate, analyze, run the closed loop, serve live streams,
// and query the pattern catalog.
//
// Exit codes: 0 ok, 1 usage, 2 data/validation, 3 I/O.

#include <csignal>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <pthread.h>

#include "CLI11.hpp"
#include "affloop/affloop.hpp"

namespace fs = std::filesystem;
using namespace affloop;

namespace {

std::string read_or_throw(const std::string& path) { return text::read_file(path); }

Catalog catalog_from(const std::string& path) {
  return path.empty() ? seed_catalog() : load_catalog(read_or_throw(path));
}

EngineConfig engine_from(const std::string& path, EngineConfig base = {}) {
  if (!path.empty()) bind_engine(base).apply_all(parse_kv(read_or_throw(path)));
  base.validate();
  return base;
}

ControllerConfig controller_from(const std::string& path) {
  ControllerConfig c;
  if (!path.empty()) bind_controller(c).apply_all(parse_kv(read_or_throw(path)));
  c.validate();
  return c;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

std::string join_path(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

double session_end(const SessionRecording& rec) {
  double end = 0.0;
  for (const auto& [k, s] : rec.streams)
    if (!s.t.empty()) end = std::max(end, s.t.back());
  for (const auto& e : rec.events) end = std::max(end, e.t);
  return end;
}

// ─── simulate ───────────────────────────────────────────────────────────────

struct SimulateArgs {
  std::string out;
  long long seed = 1;
  std::string phases = "calibration,gaming,strong_stimulus";
  std::string player_config;
  std::string phase_config;
  std::vector<std::string> gains;
  double pulse_hz = 100.0;
  double eda_hz = 20.0;
  double tail_s = 10.0;
};

void apply_gain_flags(PlayerModel& m, const std::vector<std::string>& gains) {
  for (const auto& g : gains) {
    auto eq = g.find('=');
    auto v = eq == std::string::npos ? std::nullopt : text::to_double(std::string_view(g).substr(eq + 1));
    if (!v) throw UsageError("--gain expects <pattern>=<value>, got '" + g + "'");
    m.pattern_gains[g.substr(0, eq)] = *v;
  }
  m.validate();
}

int run_simulate(const SimulateArgs& a) {
  if (a.tail_s < 0.0) throw UsageError("--tail must be >= 0");
  PlayerModel player = PlayerModel::from_catalog(seed_catalog());
  player.seed = static_cast<std::uint64_t>(a.seed);
  if (!a.player_config.empty()) apply_player_config(player, read_or_throw(a.player_config));
  apply_gain_flags(player, a.gains);

  PhaseConfig phases;
  phases.seed = a.seed;
  phases.set_phases(a.phases);
  if (!a.phase_config.empty()) apply_phase_config(phases, read_or_throw(a.phase_config));

  auto sched = build_protocol_schedule(phases);
  auto rec = generate_session(player, sched.events, {a.pulse_hz, a.eda_hz}, sched.duration_s + a.tail_s);
  text::write_file(a.out, write_session(rec));

  for (const auto& [name, b] : sched.phase_bounds) {
    std::size_t n = 0;
    for (const auto& e : rec.events)
      if (e.kind != EventKind::phase_marker && e.t >= b.first && e.t < b.second) ++n;
    std::cout << "phase " << name << " " << text::fixed(b.first, 3) << " " << text::fixed(b.second, 3) << " events "
              << n << "\n";
  }
  std::cout << "duration_s " << text::fixed(sched.duration_s + a.tail_s, 3) << "\n";
  std::cout << "events " << rec.events.size() << "\n";
  return 0;
}

// ─── calibrate ──────────────────────────────────────────────────────────────

struct CalibrateArgs {
  std::string session;
  std::string out;
  std::string engine_config;
};

int run_calibrate(const CalibrateArgs& a) {
  auto rec = parse_session(read_or_throw(a.session));
  auto cfg = engine_from(a.engine_config);
  auto phase = find_phase(rec.events, kPhaseCalibration, session_end(rec));
  if (!phase) throw DataError("session has no calibration phase marker");
  auto [t0, t1] = *phase;
  if (t1 - t0 < 60.0)
    throw DataError("calibration phase lasts " + text::fixed(t1 - t0, 1) + " s, at least 60 s are needed");
  auto b = baseline_from_recording(rec, t0, t1, cfg);
  auto bytes = write_baseline(b);
  if (a.out.empty() || a.out == "-") std::cout << bytes;
  else {
    text::write_file(a.out, bytes);
    std::cout << bytes;
  }
  return 0;
}

// ─── analyze ────────────────────────────────────────────────────────────────

struct AnalyzeArgs {
  std::string session;
  std::string baseline;
  std::string catalog;
  std::string out_dir = ".";
  std::string engine_config;
  bool plot = false;
  long long permutations = 1000;
  long long seed = 1;
  double window_lo = 1.0;
  double window_hi = 6.0;
};

void write_plots(const std::string& dir, const SessionRecording& rec, const std::vector<AffectState>& trace,
                 const EngineConfig& cfg) {
  auto markers = event_markers(rec.events);
  for (const auto& [key, s] : rec.streams) {
    PlotSpec p;
    p.title = key.device_id + " " + std::string(to_string(key.channel));
    p.y_label = key.channel == Channel::eda ? "conductance (uS)" : key.channel == Channel::hr ? "bpm" : "pulse (mV)";
    p.series.push_back(to_plot_series(s, p.title));
    if (key.channel == Channel::eda && &s == rec.first_stream(Channel::eda))
      p.series.push_back(to_plot_series(session_eda(rec, cfg.eda).tonic, "tonic", "#ff7f0e"));
    p.markers = markers;
    text::write_file(join_path(dir, key.device_id + "_" + std::string(to_string(key.channel)) + ".svg"), render_svg(p));
  }
  PlotSpec p;
  p.title = "arousal";
  p.y_label = "arousal index";
  PlotSeries a{"arousal", {}, {}, "#1f77b4"};
  for (const auto& st : trace) {
    a.t.push_back(st.t);
    a.v.push_back(st.arousal);
  }
  p.series.push_back(std::move(a));
  p.markers = markers;
  text::write_file(join_path(dir, "arousal.svg"), render_svg(p));
}

int run_analyze(const AnalyzeArgs& a) {
  auto rec = parse_session(read_or_throw(a.session));
  auto baseline = parse_baseline(read_or_throw(a.baseline));
  auto cat = catalog_from(a.catalog);
  auto cfg = engine_from(a.engine_config);
  ensure_dir(a.out_dir);

  CorrelationParams cp;
  cp.window_lo_s = a.window_lo;
  cp.window_hi_s = a.window_hi;
  cp.n_permutations = a.permutations;
  cp.seed = static_cast<std::uint64_t>(a.seed);
  auto report = correlate_events(rec, session_eda(rec, cfg.eda).phasic, cat, cp);
  auto trace = affect_trace(rec, baseline, cfg, &cat);

  text::write_file(join_path(a.out_dir, "report.txt"), write_report(report));
  text::write_file(join_path(a.out_dir, "report.tsv"), report_tsv(report));
  std::string lines;
  for (const auto& st : trace) lines += format_affect_line(st) + "\n";
  text::write_file(join_path(a.out_dir, "affect.txt"), lines);
  if (a.plot) write_plots(a.out_dir, rec, trace, cfg);

  std::cout << write_report(report);
  std::cout << "states " << trace.size() << "\n";
  return 0;
}

// ─── loop ───────────────────────────────────────────────────────────────────

struct LoopArgs {
  double duration = 300.0;
  long long seed = 1;
  double initial_arousal = 0.2;
  std::string player_config;
  std::string controller_config;
  std::string engine_config;
  std::string catalog;
  std::string out_dir;
  bool no_inject = false;
  double score_last_s = 120.0;
};

int run_loop(const LoopArgs& a) {
  auto cat = catalog_from(a.catalog);
  auto ctl = controller_from(a.controller_config);
  PlayerModel player = PlayerModel::from_catalog(cat);
  player.initial_arousal = a.initial_arousal;
  if (!a.player_config.empty()) apply_player_config(player, read_or_throw(a.player_config));

  LoopOptions opt;
  opt.inject = !a.no_inject;
  opt.engine = engine_from(a.engine_config, loop_engine_config());
  auto trace = run_closed_loop(player, ctl, cat, a.duration, static_cast<std::uint64_t>(a.seed), opt);

  if (!a.out_dir.empty()) {
    ensure_dir(a.out_dir);
    text::write_file(join_path(a.out_dir, "trace.txt"), write_trace(trace));
    text::write_file(join_path(a.out_dir, "trace.tsv"), trace_tsv(trace));
    text::write_file(join_path(a.out_dir, "directives.txt"), write_directives(trace.directives));
    text::write_file(join_path(a.out_dir, "session.txt"), write_session(trace.session));
  }
  double from = std::max(0.0, a.duration - a.score_last_s);
  std::cout << "time_in_band_pct " << text::fixed(100.0 * time_in_band(trace, ctl, from), 2) << " from_t "
            << text::fixed(from, 1) << "\n";
  std::cout << "directives " << trace.directives.size() << "\n";
  std::cout << "states " << trace.states.size() << "\n";
  return 0;
}

// ─── serve ──────────────────────────────────────────────────────────────────

struct ServeArgs {
  int port = 7070;
  std::string bind = "127.0.0.1";
  std::string baseline;
  std::string catalog;
  std::string controller_config;
  std::string engine_config;
  bool no_directives = false;
};

int run_serve(const ServeArgs& a) {
  auto baseline = parse_baseline(read_or_throw(a.baseline));
  ServeOptions opt;
  opt.port = a.port;
  opt.bind_address = a.bind;
  opt.engine = engine_from(a.engine_config);
  opt.controller = controller_from(a.controller_config);
  opt.directives = !a.no_directives;

  // Signals are taken synchronously by this thread; workers never see them.
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  std::mutex out_mu;
  StreamServer server(baseline, opt, catalog_from(a.catalog), [&out_mu](const std::string& line) {
    std::lock_guard lk(out_mu);
    std::cout << line << "\n" << std::flush;
  });
  server.start();
  std::cerr << "listening on " << a.bind << ":" << server.port() << "\n" << std::flush;
  int sig = 0;
  sigwait(&set, &sig);
  server.stop();
  return 0;
}

// ─── catalog ────────────────────────────────────────────────────────────────

struct CatalogArgs {
  std::string catalog;
  std::string selected;
  std::string goal = "raise";
  std::size_t k = 3;
};

PatternSet parse_selection(const Catalog& cat, const std::string& list) {
  PatternSet out;
  for (auto id : text::split(list, ',')) {
    id = text::trim(id);
    if (id.empty()) continue;
    if (!cat.contains(std::string(id))) throw DataError("unknown pattern id '" + std::string(id) + "'");
    out.emplace(id);
  }
  return out;
}

int run_catalog_validate(const CatalogArgs& a) {
  auto cat = a.catalog.empty() ? seed_catalog() : parse_catalog(read_or_throw(a.catalog));
  auto vs = validate_catalog(cat);
  for (const auto& v : vs) std::cout << describe(v) << "\n";
  if (vs.empty()) std::cout << "ok " << cat.patterns.size() << "\n";
  return vs.empty() ? 0 : 2;
}

int run_catalog_recommend(const CatalogArgs& a) {
  auto cat = catalog_from(a.catalog);
  ArousalEffect goal;
  if (a.goal == "raise") goal = ArousalEffect::raise;
  else if (a.goal == "lower") goal = ArousalEffect::lower;
  else throw UsageError("--goal must be raise or lower");
  for (const auto& id : recommend(cat, parse_selection(cat, a.selected), goal, a.k)) std::cout << id << "\n";
  return 0;
}

int run_catalog_effective(const CatalogArgs& a) {
  auto cat = catalog_from(a.catalog);
  auto eff = effective_set(cat, parse_selection(cat, a.selected));
  for (const auto& id : eff.active) std::cout << "active " << id << "\n";
  for (const auto& [x, y] : eff.conflict_pairs) std::cout << "conflict " << x << " " << y << "\n";
  return 0;
}

int run_catalog_show(const CatalogArgs& a) {
  std::cout << write_catalog(catalog_from(a.catalog));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"affloop: affective loop engine over physiological streams"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  SimulateArgs sim;
  auto* c_sim = app.add_subcommand("simulate", "Simulate a protocol session with the synthetic player");
  c_sim->add_option("--out", sim.out, "Session file to write")->required();
  c_sim->add_option("--seed", sim.seed, "Player and schedule seed")->capture_default_str();
  c_sim->add_option("--phases", sim.phases, "Comma list of calibration, gaming, strong_stimulus")->capture_default_str();
  c_sim->add_option("--player-config", sim.player_config, "key = value player model overrides");
  c_sim->add_option("--phase-config", sim.phase_config, "key = value protocol overrides");
  c_sim->add_option("--gain", sim.gains, "Pattern gain override <id>=<value>, repeatable");
  c_sim->add_option("--pulse-hz", sim.pulse_hz, "Pulse sample rate")->capture_default_str();
  c_sim->add_option("--eda-hz", sim.eda_hz, "EDA sample rate")->capture_default_str();
  c_sim->add_option("--tail", sim.tail_s, "Seconds recorded after the last phase")->capture_default_str();

  CalibrateArgs cal;
  auto* c_cal = app.add_subcommand("calibrate", "Baseline from the calibration phase of a session");
  c_cal->add_option("--session", cal.session, "Session file")->required();
  c_cal->add_option("--out", cal.out, "Baseline file to write (also printed)");
  c_cal->add_option("--engine-config", cal.engine_config, "key = value feature/engine overrides");

  AnalyzeArgs an;
  auto* c_an = app.add_subcommand("analyze", "Correlation report, affect trace and plots for a session");
  c_an->add_option("--session", an.session, "Session file")->required();
  c_an->add_option("--baseline", an.baseline, "Baseline file")->required();
  c_an->add_option("--catalog", an.catalog, "Catalog file (default: built-in seed catalog)");
  c_an->add_option("--out-dir", an.out_dir, "Directory for report.txt, report.tsv, affect.txt, plots")
      ->capture_default_str();
  c_an->add_option("--engine-config", an.engine_config, "key = value feature/engine overrides");
  c_an->add_flag("--plot", an.plot, "Write one SVG per stream plus arousal.svg");
  c_an->add_option("--permutations", an.permutations, "Permutations per pattern")->capture_default_str();
  c_an->add_option("--seed", an.seed, "Permutation seed")->capture_default_str();
  c_an->add_option("--window-lo", an.window_lo, "Response window start after event (s)")->capture_default_str();
  c_an->add_option("--window-hi", an.window_hi, "Response window end after event (s)")->capture_default_str();

  LoopArgs lp;
  auto* c_lp = app.add_subcommand("loop", "Closed-loop run: simulated player under the band controller");
  c_lp->add_option("--duration", lp.duration, "Seconds, at least 60")->capture_default_str();
  c_lp->add_option("--seed", lp.seed, "Player seed")->capture_default_str();
  c_lp->add_option("--initial-arousal", lp.initial_arousal, "Player's starting arousal (before --player-config)")
      ->capture_default_str();
  c_lp->add_option("--player-config", lp.player_config, "key = value player model overrides");
  c_lp->add_option("--controller-config", lp.controller_config, "key = value controller overrides");
  c_lp->add_option("--engine-config", lp.engine_config, "key = value engine overrides (window_s 12, warmup_s 12 base)");
  c_lp->add_option("--catalog", lp.catalog, "Catalog file (default: built-in seed catalog)");
  c_lp->add_option("--out-dir", lp.out_dir, "Directory for trace.txt, trace.tsv, directives.txt, session.txt");
  c_lp->add_flag("--no-inject", lp.no_inject, "Log directives without delivering them");
  c_lp->add_option("--score-last", lp.score_last_s, "Time-in-band over this many final seconds")->capture_default_str();

  ServeArgs sv;
  auto* c_sv = app.add_subcommand("serve", "Live AffectState stream from TCP clients sending S/E lines");
  c_sv->add_option("--port", sv.port, "TCP port (0: any free port)")->capture_default_str();
  c_sv->add_option("--bind", sv.bind, "Bind address")->capture_default_str();
  c_sv->add_option("--baseline", sv.baseline, "Baseline file")->required();
  c_sv->add_option("--catalog", sv.catalog, "Catalog file (default: built-in seed catalog)");
  c_sv->add_option("--controller-config", sv.controller_config, "key = value controller overrides");
  c_sv->add_option("--engine-config", sv.engine_config, "key = value feature/engine overrides");
  c_sv->add_flag("--no-directives", sv.no_directives, "Do not run the controller");

  CatalogArgs ca;
  auto* c_ca = app.add_subcommand("catalog", "Pattern catalog tools");
  c_ca->require_subcommand(1);
  auto* c_val = c_ca->add_subcommand("validate", "List violations, one per line; 'ok <n>' when none");
  c_val->add_option("--catalog", ca.catalog, "Catalog file (default: built-in seed catalog)");
  auto* c_rec = c_ca->add_subcommand("recommend", "Compatible patterns for a selection, one id per line");
  c_rec->add_option("--catalog", ca.catalog, "Catalog file (default: built-in seed catalog)");
  c_rec->add_option("--selected", ca.selected, "Comma list of selected pattern ids");
  c_rec->add_option("--goal", ca.goal, "raise or lower")->capture_default_str();
  c_rec->add_option("-k", ca.k, "Maximum number of results")->capture_default_str();
  auto* c_eff = c_ca->add_subcommand("effective", "Effective set and its conflicts for a selection");
  c_eff->add_option("--catalog", ca.catalog, "Catalog file (default: built-in seed catalog)");
  c_eff->add_option("--selected", ca.selected, "Comma list of selected pattern ids");
  auto* c_show = c_ca->add_subcommand("show", "Print the catalog in file format");
  c_show->add_option("--catalog", ca.catalog, "Catalog file (default: built-in seed catalog)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*c_sim) return run_simulate(sim);
    if (*c_cal) return run_calibrate(cal);
    if (*c_an) return run_analyze(an);
    if (*c_lp) return run_loop(lp);
    if (*c_sv) return run_serve(sv);
    if (*c_val) return run_catalog_validate(ca);
    if (*c_rec) return run_catalog_recommend(ca);
    if (*c_eff) return run_catalog_effective(ca);
    if (*c_show) return run_catalog_show(ca);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
