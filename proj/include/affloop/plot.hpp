#pragma once

// Minimal standalone SVG line plots: time series with vertical event markers.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

#include "affloop/signal_model.hpp"

namespace affloop {

struct PlotSeries {
  std::string label;
  std::vector<double> t;
  std::vector<double> v;
  std::string color = "#1f77b4";
};

struct PlotMarker {
  double t = 0.0;
  std::string label;
};

struct PlotSpec {
  std::string title;
  std::string y_label;
  std::vector<PlotSeries> series;
  std::vector<PlotMarker> markers;
  std::vector<std::pair<double, double>> y_bands;  // shaded horizontal ranges, e.g. a target band
  int width = 1000;
  int height = 320;
  std::size_t max_points = 4000;  // per series, min/max decimated beyond this
};

namespace detail {

inline std::string svg_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

/// Keeps the extremes of each bucket so spikes survive decimation.
inline void decimate(const PlotSeries& s, std::size_t max_points, std::vector<double>& t, std::vector<double>& v) {
  const std::size_t n = s.t.size();
  if (n <= max_points || max_points < 4) {
    t = s.t;
    v = s.v;
    return;
  }
  const std::size_t buckets = max_points / 2;
  for (std::size_t b = 0; b < buckets; ++b) {
    std::size_t lo = b * n / buckets, hi = (b + 1) * n / buckets;
    if (hi <= lo) continue;
    auto mm = std::minmax_element(s.v.begin() + static_cast<std::ptrdiff_t>(lo), s.v.begin() + static_cast<std::ptrdiff_t>(hi));
    auto i1 = static_cast<std::size_t>(mm.first - s.v.begin());
    auto i2 = static_cast<std::size_t>(mm.second - s.v.begin());
    if (i1 > i2) std::swap(i1, i2);
    t.push_back(s.t[i1]);
    v.push_back(s.v[i1]);
    if (i2 != i1) {
      t.push_back(s.t[i2]);
      v.push_back(s.v[i2]);
    }
  }
}

/// Round step giving roughly `target` intervals over `span`.
inline double nice_step(double span, int target) {
  if (!(span > 0.0)) return 1.0;
  double raw = span / target;
  double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double f = raw / mag;
  double nice = f < 1.5 ? 1.0 : f < 3.0 ? 2.0 : f < 7.0 ? 5.0 : 10.0;
  return nice * mag;
}

}  // namespace detail

inline std::string render_svg(const PlotSpec& p) {
  const double ml = 70, mr = 20, mt = 30, mb = 45;
  const double W = p.width, H = p.height;
  const double pw = W - ml - mr, ph = H - mt - mb;

  double t0 = std::numeric_limits<double>::infinity(), t1 = -t0, y0 = t0, y1 = -t0;
  for (const auto& s : p.series)
    for (std::size_t i = 0; i < s.t.size(); ++i) {
      t0 = std::min(t0, s.t[i]);
      t1 = std::max(t1, s.t[i]);
      if (std::isfinite(s.v[i])) {
        y0 = std::min(y0, s.v[i]);
        y1 = std::max(y1, s.v[i]);
      }
    }
  for (const auto& [lo, hi] : p.y_bands) {
    y0 = std::min(y0, lo);
    y1 = std::max(y1, hi);
  }
  if (!std::isfinite(t0)) t0 = 0, t1 = 1;
  if (!std::isfinite(y0)) y0 = 0, y1 = 1;
  if (t1 <= t0) t1 = t0 + 1;
  if (y1 <= y0) {
    y0 -= 0.5;
    y1 += 0.5;
  }
  double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;

  auto X = [&](double t) { return ml + (t - t0) / (t1 - t0) * pw; };
  auto Y = [&](double v) { return mt + (1.0 - (v - y0) / (y1 - y0)) * ph; };

  std::string o;
  o += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + detail::num(W) + "\" height=\"" + detail::num(H) +
       "\" viewBox=\"0 0 " + detail::num(W) + " " + detail::num(H) + "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  o += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o += "<text x=\"" + detail::num(ml) + "\" y=\"18\" font-size=\"13\">" + detail::svg_escape(p.title) + "</text>\n";

  for (const auto& [lo, hi] : p.y_bands)
    o += "<rect x=\"" + detail::num(ml) + "\" y=\"" + detail::num(Y(hi)) + "\" width=\"" + detail::num(pw) +
         "\" height=\"" + detail::num(Y(lo) - Y(hi)) + "\" fill=\"#2ca02c\" fill-opacity=\"0.12\"/>\n";

  // Axes and ticks.
  o += "<rect x=\"" + detail::num(ml) + "\" y=\"" + detail::num(mt) + "\" width=\"" + detail::num(pw) + "\" height=\"" +
       detail::num(ph) + "\" fill=\"none\" stroke=\"#444\"/>\n";
  double xs = detail::nice_step(t1 - t0, 10);
  for (double x = std::ceil(t0 / xs) * xs; x <= t1 + 1e-9; x += xs)
    o += "<line x1=\"" + detail::num(X(x)) + "\" y1=\"" + detail::num(mt + ph) + "\" x2=\"" + detail::num(X(x)) +
         "\" y2=\"" + detail::num(mt + ph + 4) + "\" stroke=\"#444\"/><text x=\"" + detail::num(X(x)) + "\" y=\"" +
         detail::num(mt + ph + 16) + "\" text-anchor=\"middle\">" + detail::tick_label(x) + "</text>\n";
  double ys = detail::nice_step(y1 - y0, 5);
  for (double y = std::ceil(y0 / ys) * ys; y <= y1 + 1e-12; y += ys)
    o += "<line x1=\"" + detail::num(ml - 4) + "\" y1=\"" + detail::num(Y(y)) + "\" x2=\"" + detail::num(ml) +
         "\" y2=\"" + detail::num(Y(y)) + "\" stroke=\"#444\"/><text x=\"" + detail::num(ml - 6) + "\" y=\"" +
         detail::num(Y(y) + 4) + "\" text-anchor=\"end\">" + detail::tick_label(std::abs(y) < 1e-12 ? 0.0 : y) +
         "</text>\n";
  o += "<text x=\"" + detail::num(ml + pw / 2) + "\" y=\"" + detail::num(H - 8) + "\" text-anchor=\"middle\">time (s)</text>\n";
  o += "<text transform=\"translate(14," + detail::num(mt + ph / 2) + ") rotate(-90)\" text-anchor=\"middle\">" +
       detail::svg_escape(p.y_label) + "</text>\n";

  for (const auto& m : p.markers) {
    if (m.t < t0 || m.t > t1) continue;
    o += "<line x1=\"" + detail::num(X(m.t)) + "\" y1=\"" + detail::num(mt) + "\" x2=\"" + detail::num(X(m.t)) +
         "\" y2=\"" + detail::num(mt + ph) + "\" stroke=\"#d62728\" stroke-opacity=\"0.5\" stroke-dasharray=\"3,3\">" +
         "<title>" + detail::svg_escape(m.label) + "</title></line>\n";
  }

  double ly = mt + 12;
  for (const auto& s : p.series) {
    std::vector<double> t, v;
    detail::decimate(s, p.max_points, t, v);
    std::string pts;
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (!std::isfinite(v[i])) continue;
      pts += detail::num(X(t[i])) + "," + detail::num(Y(v[i])) + " ";
    }
    o += "<polyline fill=\"none\" stroke=\"" + s.color + "\" stroke-width=\"1\" points=\"" + pts + "\"/>\n";
    if (!s.label.empty()) {
      o += "<text x=\"" + detail::num(ml + pw - 6) + "\" y=\"" + detail::num(ly) + "\" text-anchor=\"end\" fill=\"" +
           s.color + "\">" + detail::svg_escape(s.label) + "</text>\n";
      ly += 14;
    }
  }
  o += "</svg>\n";
  return o;
}

inline PlotSeries to_plot_series(const TimeSeries& s, std::string label, std::string color = "#1f77b4") {
  return {std::move(label), s.t, s.v, std::move(color)};
}

inline PlotSeries to_plot_series(const UniformSeries& s, std::string label, std::string color = "#1f77b4") {
  PlotSeries p{std::move(label), {}, s.v, std::move(color)};
  p.t.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) p.t.push_back(s.time(i));
  return p;
}

/// Event markers for the events of a session, labelled by kind and ids.
inline std::vector<PlotMarker> event_markers(const std::vector<GameEvent>& events) {
  std::vector<PlotMarker> out;
  for (const auto& e : events) {
    std::string label(to_string(e.kind));
    for (const auto& id : e.pattern_ids) label += " " + id;
    out.push_back({e.t, std::move(label)});
  }
  return out;
}

}  // namespace affloop
