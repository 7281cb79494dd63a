#include <gtest/gtest.h>

#include <cmath>

#include "affloop/plot.hpp"

using namespace affloop;

namespace {

std::size_t count(const std::string& s, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = s.find(needle); p != std::string::npos; p = s.find(needle, p + 1)) ++n;
  return n;
}

/// Number of "x,y" pairs in the first polyline.
std::size_t polyline_points(const std::string& svg) {
  auto a = svg.find("points=\"");
  if (a == std::string::npos) return 0;
  a += 8;
  auto b = svg.find('"', a);
  return count(svg.substr(a, b - a), ",");
}

/// Smallest y coordinate (highest point on screen) in the first polyline.
double top_y(const std::string& svg) {
  auto a = svg.find("points=\"") + 8;
  auto b = svg.find('"', a);
  double best = 1e300;
  for (auto c = svg.find(',', a); c < b; c = svg.find(',', c + 1)) best = std::min(best, std::stod(svg.substr(c + 1)));
  return best;
}

}  // namespace

TEST(Plot, WellFormedDocument) {
  PlotSpec p;
  p.title = "eda";
  p.series.push_back({"phasic", {0, 1, 2}, {0.1, 0.3, 0.2}});
  auto svg = render_svg(p);
  EXPECT_TRUE(svg.starts_with("<svg "));
  EXPECT_TRUE(svg.ends_with("</svg>\n"));
  EXPECT_EQ(count(svg, "<polyline"), 1u);
  EXPECT_EQ(polyline_points(svg), 3u);
  EXPECT_NE(svg.find(">phasic<"), std::string::npos);
}

TEST(Plot, EscapesText) {
  PlotSpec p;
  p.title = "a<b & \"c\"";
  p.markers.push_back({0.5, "x>y"});
  p.series.push_back({"s", {0, 1}, {0, 1}});
  auto svg = render_svg(p);
  EXPECT_NE(svg.find("a&lt;b &amp; &quot;c&quot;"), std::string::npos);
  EXPECT_NE(svg.find("x&gt;y"), std::string::npos);
  EXPECT_EQ(svg.find("a<b"), std::string::npos);
}

TEST(Plot, MarkersOutsideRangeDropped) {
  PlotSpec p;
  p.series.push_back({"s", {10, 20}, {0, 1}});
  p.markers = {{5, "before"}, {15, "inside"}, {25, "after"}};
  auto svg = render_svg(p);
  EXPECT_EQ(count(svg, "<title>"), 1u);
  EXPECT_NE(svg.find("inside"), std::string::npos);
}

TEST(Plot, DecimationBoundsPointsAndKeepsExtremes) {
  PlotSeries s{"big", {}, {}};
  for (int i = 0; i < 100000; ++i) {
    s.t.push_back(i * 0.01);
    s.v.push_back(std::sin(i * 0.001));
  }
  s.v[54321] = 50.0;
  PlotSpec p;
  p.max_points = 1000;
  p.series.push_back(s);
  auto svg = render_svg(p);
  EXPECT_LE(polyline_points(svg), 1000u);
  EXPECT_GE(polyline_points(svg), 900u);
  p.max_points = s.t.size();
  auto full = render_svg(p);
  EXPECT_EQ(polyline_points(full), s.t.size());
  EXPECT_EQ(top_y(svg), top_y(full));
}

TEST(Plot, NonFiniteValuesSkipped) {
  PlotSpec p;
  p.series.push_back({"s", {0, 1, 2}, {0.0, std::nan(""), 1.0}});
  auto svg = render_svg(p);
  EXPECT_EQ(polyline_points(svg), 2u);
  EXPECT_EQ(svg.find("nan"), std::string::npos);
}

TEST(Plot, EmptyAndConstantInputs) {
  EXPECT_TRUE(render_svg({}).starts_with("<svg "));
  PlotSpec p;
  p.series.push_back({"flat", {0, 1, 2}, {3, 3, 3}});
  p.y_bands.push_back({0.3, 0.7});
  auto svg = render_svg(p);
  EXPECT_EQ(svg.find("nan"), std::string::npos);
  EXPECT_EQ(svg.find("inf"), std::string::npos);
  EXPECT_EQ(count(svg, "fill-opacity"), 1u);
}

TEST(Plot, SeriesConversions) {
  UniformSeries u{5.0, 4.0, {1, 2, 3}};
  auto a = to_plot_series(u, "u");
  EXPECT_EQ(a.t, (std::vector<double>{5.0, 5.25, 5.5}));
  EXPECT_EQ(a.v, u.v);
  auto b = to_plot_series(u.to_time_series(), "ts", "#000");
  EXPECT_EQ(b.t, a.t);
  EXPECT_EQ(b.color, "#000");
}

TEST(Plot, EventMarkerLabels) {
  std::vector<GameEvent> ev{{3.0, EventKind::pattern_event, {"enemies", "time-limit"}, std::nullopt},
                            {4.0, EventKind::stimulus_onset, {}, 1.0}};
  auto m = event_markers(ev);
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m[0].t, 3.0);
  EXPECT_EQ(m[0].label, "pattern_event enemies time-limit");
  EXPECT_EQ(m[1].label, "stimulus_onset");
}
