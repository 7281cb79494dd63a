#pragma once

// Generators shared by the test binaries.

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <mutex>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "affloop/affloop.hpp"
#include "affloop/serve.hpp"

namespace affloop::testing {

/// Value that survives the 6-decimal time format unchanged.
inline double on_microgrid(double t) { return *text::to_double(text::fixed(t, 6)); }

/// Random valid session in canonical form: 1-3 devices, 1-2 channels each,
/// irregular sample times, a mix of event kinds.
inline SessionRecording random_session(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  SessionRecording rec;
  rec.meta.subject_id = "subj" + std::to_string(seed % 97);
  rec.meta.session_epoch = "2024-05-0" + std::to_string(1 + seed % 9) + "T10:00:00Z";
  const Channel channels[] = {Channel::pulse, Channel::eda, Channel::hr};
  int n_dev = 1 + static_cast<int>(rng() % 3);
  for (int d = 0; d < n_dev; ++d) {
    std::string dev = "dev" + std::to_string(d);
    int first = static_cast<int>(rng() % 3);
    int n_ch = 1 + static_cast<int>(rng() % 2);
    for (int c = 0; c < n_ch; ++c) {
      Channel ch = channels[(first + c) % 3];
      double rate = std::vector<double>{4, 10, 20, 50, 100, 12.5}[rng() % 6];
      rec.meta.streams.push_back({dev, ch, rate});
      auto& s = rec.streams[{dev, ch}];
      double t = on_microgrid(u(rng) * 2.0);
      std::size_t n = rng() % 60;
      for (std::size_t i = 0; i < n; ++i) {
        double v = ch == Channel::pulse ? u(rng) * 2.0 - 1.0 : ch == Channel::eda ? 1.0 + 4.0 * u(rng) : 50.0 + 100.0 * u(rng);
        s.push(t, on_microgrid(v));
        t = on_microgrid(t + (0.5 + u(rng)) / rate);
      }
      if (s.empty()) rec.streams.erase({dev, ch});
    }
  }
  std::sort(rec.meta.streams.begin(), rec.meta.streams.end(),
            [](const StreamDecl& a, const StreamDecl& b) { return a.key() < b.key(); });
  double et = 0.0;
  std::size_t n_ev = rng() % 12;
  const char* ids[] = {"enemies", "time-limit", "cooperation", "pick-ups"};
  for (std::size_t i = 0; i < n_ev; ++i) {
    et = on_microgrid(et + u(rng) * 3.0);
    GameEvent e;
    e.t = et;
    switch (rng() % 4) {
      case 0:
        e.kind = EventKind::pattern_event;
        e.pattern_ids = {ids[rng() % 4]};
        if (rng() % 2) e.pattern_ids.push_back(ids[rng() % 4]);
        break;
      case 1: e.kind = EventKind::stimulus_onset; e.pattern_ids = {"stim-high"}; break;
      case 2: e.kind = EventKind::phase_marker; e.pattern_ids = {"gaming"}; break;
      default: e.kind = EventKind::rating; e.payload = static_cast<double>(1 + rng() % 9); break;
    }
    if (rng() % 5 == 0 && e.kind != EventKind::rating) e.payload = on_microgrid(u(rng) * 10.0);
    rec.events.push_back(e);
  }
  validate(rec);
  return rec;
}

/// Tonic level plus unit-peak kernels (onset, amplitude) plus Gaussian noise, sampled at `rate`.
inline UniformSeries kernel_eda(double rate, double duration, const std::vector<std::pair<double, double>>& kernels,
                                double noise = 0.0, std::uint64_t seed = 1, double tau1 = 2.0, double tau2 = 0.75,
                                double tonic = 2.0, double drift_per_s = 0.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  UniformSeries e{0.0, rate, {}};
  auto count = static_cast<std::size_t>(duration * rate);
  for (std::size_t i = 0; i < count; ++i) {
    double t = e.time(i);
    double v = tonic + drift_per_s * t;
    for (auto [on, a] : kernels) v += a * scr_kernel_unit(t - on, tau1, tau2);
    e.v.push_back(v + noise * n(rng));
  }
  return e;
}

struct Recovery {
  int events = 0;
  int hits = 0;
};

/// Gaming-phase session of the default player: events with gain >= 0.1 whose SCR
/// onset is detected within 1 s of event + latency.
inline Recovery scr_recovery(std::uint64_t seed) {
  auto cat = seed_catalog();
  auto pm = PlayerModel::from_catalog(cat);
  pm.seed = seed;
  PhaseConfig pc;
  pc.set_phases("gaming");
  pc.seed = static_cast<long long>(seed);
  auto s = build_protocol_schedule(pc);
  auto rec = generate_session(pm, s.events, {}, s.duration_s + 10);
  auto scrs = detect_scrs(session_eda(rec));
  Recovery r;
  for (const auto& e : rec.events) {
    if (e.kind != EventKind::pattern_event || pm.gain(e.pattern_ids[0]) < 0.1) continue;
    ++r.events;
    double truth = e.t + pm.scr_latency_s;
    r.hits += std::any_of(scrs.begin(), scrs.end(), [&](const Scr& x) { return std::abs(x.onset_t - truth) <= 1.0; });
  }
  return r;
}

/// A few Gaussian bumps at random places plus noise, delayed by `shift`.
inline TimeSeries marker_signal(double rate, double duration, double shift, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(1.0, duration - 1.0);
  std::vector<double> centers(6);
  for (auto& c : centers) c = u(rng);
  std::normal_distribution<double> noise(0.0, 0.02);
  TimeSeries s;
  for (int i = 0; i < static_cast<int>(duration * rate); ++i) {
    double t = i / rate, v = 0.0;
    for (double c : centers) v += std::exp(-std::pow((t - shift - c) / 0.15, 2));
    s.push(t, v + noise(rng));
  }
  return s;
}

/// Player model from the seed catalog with every pattern gain set to `g`.
inline PlayerModel flat_gain_player(double g) {
  auto m = PlayerModel::from_catalog(seed_catalog());
  for (auto& [id, v] : m.pattern_gains) v = g;
  return m;
}

/// `n` events of one pattern starting at `start`, `spacing` apart plus uniform jitter in [0, jitter).
inline std::vector<GameEvent> spaced_events(const std::string& id, int n, double spacing, double jitter,
                                            std::uint64_t seed, double start = 15.0,
                                            EventKind kind = EventKind::pattern_event) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, jitter);
  std::vector<GameEvent> out;
  for (int k = 0; k < n; ++k) out.push_back({on_microgrid(start + spacing * k + u(rng)), kind, {id}, std::nullopt});
  return out;
}

/// Correlation entry for a session of `n` events of one pattern with the given gain.
inline CorrelationEntry single_pattern_correlation(const std::string& id, double gain, std::uint64_t seed,
                                                   int n = 30, double spacing = 40.0) {
  auto cat = seed_catalog();
  auto pm = PlayerModel::from_catalog(cat);
  pm.seed = seed;
  pm.pattern_gains[id] = gain;
  auto sched = spaced_events(id, n, spacing, 8.0, seed);
  auto rec = generate_session(pm, sched, {20.0, 20.0}, 30.0 + spacing * n);
  CorrelationParams p;
  p.seed = seed;
  auto report = correlate_events(rec, session_eda(rec).phasic, cat, p);
  return *report.find(id);
}

/// Kolmogorov-Smirnov distance of a sample from U(0, 1).
inline double ks_uniform(std::vector<double> x) {
  std::sort(x.begin(), x.end());
  const auto n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    d = std::max({d, std::abs(x[i] - static_cast<double>(i) / n), std::abs(static_cast<double>(i + 1) / n - x[i])});
  return d;
}

/// Generator kernel of a unit event on an epoch grid, onset `latency` after the event.
inline std::vector<double> kernel_curve(const EpochGrid& g, double latency, double tau1, double tau2) {
  std::vector<double> out;
  for (std::size_t k = 0; k < g.size(); ++k) out.push_back(scr_kernel_unit(g.offset(k) - latency, tau1, tau2));
  return out;
}

/// Reaction template of the default player to `n` high-gain stimuli 20 s apart.
inline ReactionTemplate simulated_template(std::uint64_t seed, int n = 20) {
  auto pm = PlayerModel::from_catalog(seed_catalog());
  pm.seed = seed;
  auto sched = spaced_events(kStimHigh, n, 20.0, 4.0, seed, 15.0, EventKind::stimulus_onset);
  auto rec = generate_session(pm, sched, {}, 40.0 + 20.0 * n);
  auto comp = session_eda(rec);
  std::vector<Epoch> epochs;
  for (const auto& e : rec.events) epochs.push_back(extract_epoch(comp.phasic, e.t));
  return build_template(epochs, kStimHigh);
}

/// Pearson r between a template and the player's analytic kernel on its grid.
inline double template_kernel_r(const ReactionTemplate& tpl, const PlayerModel& pm = {}) {
  auto k = kernel_curve(tpl.grid, pm.scr_latency_s, pm.scr_tau1, pm.scr_tau2);
  return pearson(tpl.mean_curve, k).value_or(0.0);
}

/// Fraction of `trials` noisy copies of the analytic kernel matched by the clean
/// kernel template, noise sd set so that post-onset rms / sd = snr.
inline double kernel_match_rate(int trials, double snr, std::uint64_t seed) {
  PlayerModel pm;
  EpochGrid g;
  ReactionTemplate tpl{"k", EpochChannel::phasic, g, kernel_curve(g, pm.scr_latency_s, pm.scr_tau1, pm.scr_tau2), 1};
  double ss = 0.0;
  for (std::size_t k = g.pre_count(); k < g.size(); ++k) ss += tpl.mean_curve[k] * tpl.mean_curve[k];
  const double sigma = std::sqrt(ss / static_cast<double>(g.size() - g.pre_count())) / snr;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  int hits = 0;
  for (int i = 0; i < trials; ++i) {
    Epoch e{0.0, EpochChannel::phasic, g, tpl.mean_curve};
    for (double& v : e.values) v += noise(rng);
    hits += match_template(e, tpl).matched ? 1 : 0;
  }
  return static_cast<double>(hits) / trials;
}

/// Default player starting at arousal 0.2 under the default controller.
inline LoopTrace default_loop(std::uint64_t seed, double duration = 300.0) {
  auto cat = seed_catalog();
  auto pm = PlayerModel::from_catalog(cat);
  pm.initial_arousal = 0.2;
  return run_closed_loop(pm, ControllerConfig{}, cat, duration, seed);
}

/// Smallest gap between successive directives (infinity with fewer than two).
inline double min_directive_gap(const std::vector<AdaptationDirective>& ds) {
  double gap = std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i < ds.size(); ++i) gap = std::min(gap, ds[i].t - ds[i - 1].t);
  return gap;
}

/// Sends `payload` to 127.0.0.1:port and closes; replies are read until the server closes.
inline std::string tcp_send(int port, const std::string& payload) {
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  ::inet_pton(AF_INET, "127.0.0.1", &addr.sin_addr);
  if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
    ::close(fd);
    throw IoError("connect failed");
  }
  for (std::size_t off = 0; off < payload.size();) {
    auto n = ::send(fd, payload.data() + off, payload.size() - off, MSG_NOSIGNAL);
    if (n <= 0) break;
    off += static_cast<std::size_t>(n);
  }
  ::shutdown(fd, SHUT_WR);
  std::string replies;
  char buf[4096];
  for (ssize_t n; (n = ::recv(fd, buf, sizeof buf, 0)) > 0;) replies.append(buf, static_cast<std::size_t>(n));
  ::close(fd);
  return replies;
}

/// Runs a server on a free port, feeds it one payload per concurrent client, and
/// returns every line it emitted (the end-of-input state included).
inline std::vector<std::string> serve_lines(const Baseline& b, const std::vector<std::string>& payloads,
                                            ServeOptions opt = {}, std::vector<std::string>* replies = nullptr) {
  std::mutex mu;
  std::vector<std::string> lines;
  opt.port = 0;
  StreamServer server(b, opt, seed_catalog(), [&](const std::string& l) {
    std::lock_guard lk(mu);
    lines.push_back(l);
  });
  server.start();
  std::vector<std::string> got(payloads.size());
  std::vector<std::thread> clients;
  for (std::size_t i = 0; i < payloads.size(); ++i)
    clients.emplace_back([&, i] { got[i] = tcp_send(server.port(), payloads[i]); });
  for (auto& c : clients) c.join();
  while (server.finished_connections() < payloads.size()) std::this_thread::sleep_for(std::chrono::milliseconds(2));
  server.stop();
  if (replies) *replies = got;
  return lines;
}

/// Session body lines (S and E) in time order, as a client would stream them.
inline std::string stream_payload(const SessionRecording& rec) {
  std::string out;
  text::for_each_line(write_session(rec), [&](std::size_t, std::string_view l) {
    if (l.starts_with("S ") || l.starts_with("E ")) {
      out += l;
      out += '\n';
    }
  });
  return out;
}

inline std::vector<std::string> affect_lines(const std::vector<AffectState>& states) {
  std::vector<std::string> out;
  for (const auto& s : states) out.push_back(format_affect_line(s));
  return out;
}

inline std::vector<std::string> only_affect(const std::vector<std::string>& lines) {
  std::vector<std::string> out;
  for (const auto& l : lines)
    if (l.starts_with("AS ")) out.push_back(l);
  return out;
}

/// Sequences agree up to one evaluation period of timing at window boundaries:
/// same length within one, and pairwise times within `period` with equal arousal and level.
inline bool equivalent_traces(const std::vector<AffectState>& a, const std::vector<AffectState>& b, double period) {
  const std::size_t n = std::min(a.size(), b.size());
  if (std::max(a.size(), b.size()) - n > 1) return false;
  for (std::size_t i = 0; i < n; ++i) {
    if (std::abs(a[i].t - b[i].t) > period + 1e-9) return false;
    if (std::abs(a[i].arousal - b[i].arousal) > 1e-6 || a[i].level != b[i].level) return false;
  }
  return true;
}

}  // namespace affloop::testing
