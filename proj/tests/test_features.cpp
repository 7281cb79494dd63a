#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "affloop/affect.hpp"
#include "affloop/features.hpp"
#include "affloop/player_sim.hpp"
#include "support.hpp"

using namespace affloop;
using affloop::testing::kernel_eda;

namespace {

double sd(const std::vector<double>& v) {
  double m = 0, s = 0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

std::pair<double, double> range_of(const std::vector<double>& v) {
  auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  return {*lo, *hi};
}

}  // namespace

// ─── smooth ─────────────────────────────────────────────────────────────────

TEST(Smooth, ConstantUnchanged) {
  UniformSeries s{0, 10, std::vector<double>(50, 3.25)};
  EXPECT_EQ(smooth(s, 1.0).v, s.v);
}

TEST(Smooth, ImpulseSpreadsOverThree) {
  UniformSeries s{0, 10, std::vector<double>(11, 0.0)};
  s.v[5] = 1.0;
  auto r = smooth(s, 0.3);
  EXPECT_NEAR(r.v[4], 1.0 / 3, 1e-15);
  EXPECT_NEAR(r.v[5], 1.0 / 3, 1e-15);
  EXPECT_NEAR(r.v[6], 1.0 / 3, 1e-15);
  EXPECT_EQ(r.v[3], 0.0);
  EXPECT_EQ(r.v[7], 0.0);
}

TEST(Smooth, EvenWidthRoundsUpToOdd) {
  UniformSeries s{0, 10, std::vector<double>(11, 0.0)};
  s.v[5] = 1.0;
  auto r = smooth(s, 0.4);  // 4 samples -> 5
  EXPECT_NEAR(r.v[3], 0.2, 1e-15);
  EXPECT_NEAR(r.v[7], 0.2, 1e-15);
  EXPECT_EQ(r.v[2], 0.0);
}

TEST(Smooth, EndpointsShrink) {
  UniformSeries s{0, 1, {1, 2, 3, 4, 5}};
  auto r = smooth(s, 5.0);
  EXPECT_DOUBLE_EQ(r.v[0], 1.0);
  EXPECT_DOUBLE_EQ(r.v[1], 2.0);
  EXPECT_DOUBLE_EQ(r.v[2], 3.0);
  EXPECT_DOUBLE_EQ(r.v[4], 5.0);
}

TEST(Smooth, WhiteNoiseSdScalesWithWidth) {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> n;
  UniformSeries s{0, 100, {}};
  for (int i = 0; i < 60000; ++i) s.v.push_back(n(rng));
  auto r = smooth(s, 1.0);
  std::vector<double> inner(r.v.begin() + 100, r.v.end() - 100);
  EXPECT_NEAR(sd(inner), 0.1, 0.02);
}

// ─── beats and heart rate ───────────────────────────────────────────────────

TEST(DetectBeats, FlatSignalHasNone) {
  UniformSeries s{0, 100, std::vector<double>(1000, 0.0)};
  EXPECT_TRUE(detect_beats(s).empty());
}

TEST(DetectBeats, Preconditions) {
  EXPECT_THROW(detect_beats(UniformSeries{0, 40, std::vector<double>(400, 0.0)}), DataError);
  EXPECT_THROW(detect_beats(UniformSeries{0, 100, std::vector<double>(300, 0.0)}), DataError);
}

TEST(DetectBeats, SixtyBpmTenSeconds) {
  auto pt = synth_pulse_train(100, 10, [](double) { return 60.0; });
  auto b = detect_beats(pt.pulse);
  EXPECT_NEAR(static_cast<double>(b.size()), 10.0, 1.0);
  for (std::size_t i = 1; i < b.size(); ++i) EXPECT_NEAR(b[i] - b[i - 1], 1.0, 0.010);
}

TEST(DetectBeats, RampIntervalsDecrease) {
  auto bpm = [](double t) { return 60.0 + 30.0 * std::min(1.0, t / 30.0); };
  auto pt = synth_pulse_train(100, 30, bpm);
  auto b = detect_beats(pt.pulse);
  ASSERT_GT(b.size(), 10u);
  for (std::size_t i = 2; i < b.size(); ++i) EXPECT_LT(b[i] - b[i - 1], b[i - 1] - b[i - 2] + 1e-9);
  EXPECT_NEAR(b[1] - b[0], 1.0, 0.02);
  EXPECT_NEAR(b.back() - b[b.size() - 2], 60.0 / 90.0, 0.02);
}

TEST(DetectBeats, MatchesGeneratorAcrossRatesAndTempi) {
  for (double bpm : {40.0, 60.0, 90.0, 120.0, 180.0})
    for (double rate : {50.0, 100.0, 500.0}) {
      auto pt = synth_pulse_train(rate, 20, [&](double) { return bpm; });
      auto b = detect_beats(pt.pulse);
      SCOPED_TRACE("bpm " + std::to_string(bpm) + " rate " + std::to_string(rate));
      EXPECT_LE(std::abs(static_cast<long>(b.size()) - static_cast<long>(pt.beats.size())), 1);
      // Pair each detection with the nearest true beat; intervals agree within a sample.
      std::vector<double> matched;
      for (double t : b) {
        auto it = std::min_element(pt.beats.begin(), pt.beats.end(),
                                   [&](double x, double y) { return std::abs(x - t) < std::abs(y - t); });
        matched.push_back(*it);
      }
      for (std::size_t i = 1; i < b.size(); ++i)
        EXPECT_NEAR(b[i] - b[i - 1], matched[i] - matched[i - 1], 1.0 / rate + 1e-9);
    }
}

TEST(DetectBeats, NoisyPulseStillCounted) {
  auto pt = synth_pulse_train(100, 60, [](double) { return 75.0; }, 0.05, 3);
  auto b = detect_beats(pt.pulse);
  EXPECT_LE(std::abs(static_cast<long>(b.size()) - static_cast<long>(pt.beats.size())), 1);
}

TEST(IbiToHr, UnitSpacingIsSixty) {
  std::vector<double> beats;
  for (int i = 0; i < 20; ++i) beats.push_back(i);
  auto hr = ibi_to_hr(beats, 4);
  EXPECT_EQ(hr.source, HrSource::derived_from_pulse);
  for (double v : hr.series.v) EXPECT_DOUBLE_EQ(v, 60.0);
  EXPECT_DOUBLE_EQ(hr.series.rate, 4.0);
}

TEST(IbiToHr, NinetyBpm) {
  std::vector<double> beats;
  for (int i = 0; i < 30; ++i) beats.push_back(i * 0.667);
  for (double v : ibi_to_hr(beats, 4).series.v) EXPECT_NEAR(v, 90.0, 0.5);
}

TEST(IbiToHr, SpuriousBeatRejected) {
  std::vector<double> beats;
  for (int i = 0; i < 30; ++i) beats.push_back(i);
  beats.insert(beats.begin() + 15, 14.4);
  for (double v : ibi_to_hr(beats, 4).series.v) EXPECT_LE(v, 66.0);
}

TEST(IbiToHr, InvariantToFivePercentSpuriousBeats) {
  for (double bpm : {40.0, 60.0, 90.0, 120.0, 180.0})
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      auto clean = synth_pulse_train(100, 120, [&](double) { return bpm; }).beats;
      std::mt19937_64 rng(seed);
      std::uniform_real_distribution<double> u(0.15, 0.85);
      std::vector<double> noisy = clean;
      std::size_t extra = clean.size() / 20;
      std::set<std::size_t> slots;
      while (slots.size() < extra) slots.insert(2 + rng() % (clean.size() - 4));
      for (auto k : slots) noisy.push_back(clean[k] + u(rng) * (clean[k + 1] - clean[k]));
      std::sort(noisy.begin(), noisy.end());
      auto a = ibi_to_hr(clean, 4).series, b = ibi_to_hr(noisy, 4).series;
      for (std::size_t i = 0; i < b.size(); ++i) {
        double t = b.time(i);
        if (t < a.t0 || t > a.end_time()) continue;
        EXPECT_NEAR(b.v[i], sample_at(a, t), 1.0) << "bpm " << bpm << " seed " << seed << " t " << t;
      }
    }
}

TEST(IbiToHr, Errors) {
  EXPECT_THROW(ibi_to_hr(std::vector<double>{0, 1}, 4), DataError);
  EXPECT_THROW(ibi_to_hr(std::vector<double>{0, 1, 2, 3}, 0), DataError);
  EXPECT_THROW(ibi_to_hr(std::vector<double>{0, 0.1, 0.2, 0.3, 0.4}, 4), DataError);
}

// ─── electrodermal ──────────────────────────────────────────────────────────

TEST(EdaDecompose, ConstantIsAllTonic) {
  UniformSeries e{0, 10, std::vector<double>(600, 2.0)};
  auto c = eda_decompose(e);
  for (double v : c.tonic.v) EXPECT_DOUBLE_EQ(v, 2.0);
  for (double v : c.phasic.v) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(EdaDecompose, SumIsExact) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    auto e = kernel_eda(20, 120, {{20, 0.3}, {50, 0.1}, {90, 0.6}}, 0.005, seed, 2.0, 0.75, 1.0 + 0.1 * seed, 0.001);
    auto c = eda_decompose(e);
    ASSERT_EQ(c.tonic.size(), e.size());
    for (std::size_t i = 0; i < e.size(); ++i) ASSERT_EQ(c.tonic.v[i] + c.phasic.v[i], e.v[i]);
  }
}

TEST(EdaDecompose, TracksSlowDrift) {
  auto e = kernel_eda(20, 300, {}, 0.0, 1, 2.0, 0.75, 2.0, 0.5 / 300.0);
  auto c = eda_decompose(e);
  for (double v : c.phasic.v) EXPECT_LT(std::abs(v), 0.01);
}

TEST(EdaDecompose, KernelOnDriftKeepsPeak) {
  auto e = kernel_eda(20, 300, {{150, 0.5}}, 0.0, 1, 2.0, 0.75, 2.0, 0.5 / 300.0);
  auto c = eda_decompose(e);
  auto [lo, hi] = range_of(c.phasic.v);
  (void)lo;
  EXPECT_NEAR(hi, 0.5, 0.05);
}

TEST(EdaDecompose, Preconditions) {
  EXPECT_THROW(eda_decompose(UniformSeries{0, 2, std::vector<double>(200, 2.0)}), DataError);
  EXPECT_THROW(eda_decompose(UniformSeries{0, 20, std::vector<double>(200, 2.0)}), DataError);
}

TEST(EdaDecompose, Deterministic) {
  auto e = kernel_eda(20, 60, {{20, 0.3}}, 0.005, 9);
  auto a = eda_decompose(e), b = eda_decompose(e);
  EXPECT_EQ(a.tonic, b.tonic);
  EXPECT_EQ(a.phasic, b.phasic);
  EXPECT_EQ(detect_scrs(a).size(), detect_scrs(b).size());
}

TEST(DetectScrs, ZeroPhasicIsEmpty) {
  UniformSeries z{0, 20, std::vector<double>(1000, 0.0)};
  EXPECT_TRUE(detect_scrs(z).empty());
}

TEST(DetectScrs, SlowKernelRiseTwoSeconds) {
  // tau1 2.5 s, tau2 1.5 s peaks 1.92 s after onset.
  auto e = kernel_eda(20, 120, {{50, 0.5}}, 0.0, 1, 2.5, 1.5);
  auto c = eda_decompose(e);
  auto scrs = detect_scrs(c);
  ASSERT_EQ(scrs.size(), 1u);
  EXPECT_NEAR(scrs[0].amplitude, 0.5, 0.05);
  EXPECT_NEAR(scrs[0].rise_time, 2.0, 0.5);
  EXPECT_GT(scrs[0].peak_t, scrs[0].onset_t);
}

TEST(DetectScrs, PhasicOnlyOverload) {
  auto e = kernel_eda(20, 120, {{50, 0.5}}, 0.0, 1, 2.5, 1.5);
  auto scrs = detect_scrs(eda_decompose(e).phasic);
  ASSERT_EQ(scrs.size(), 1u);
  EXPECT_NEAR(scrs[0].rise_time, 2.0, 0.5);
  EXPECT_GT(scrs[0].amplitude, 0.3);
}

TEST(DetectScrs, TwoKernelsSixSecondsApart) {
  auto e = kernel_eda(20, 120, {{40, 0.3}, {46, 0.3}}, 0.002, 5);
  auto scrs = detect_scrs(eda_decompose(e));
  ASSERT_EQ(scrs.size(), 2u);
  EXPECT_NEAR(scrs[0].onset_t, 40.0, 0.5);
  EXPECT_NEAR(scrs[1].onset_t, 46.0, 0.5);
}

TEST(DetectScrs, RecordInvariants) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto e = kernel_eda(20, 200, {{20, 0.05}, {55, 0.2}, {80, 0.8}, {120, 0.1}, {160, 0.4}}, 0.005, seed);
    for (const auto& s : detect_scrs(eda_decompose(e))) {
      EXPECT_GT(s.peak_t, s.onset_t);
      EXPECT_GE(s.amplitude, 0.01);
      EXPECT_GE(s.rise_time, 0.25);
      EXPECT_LE(s.rise_time, 10.0);
    }
  }
}

TEST(DetectScrs, CountExactAmplitudesWithinTenPercent) {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> amp(0.05, 1.0);
  std::uniform_real_distribution<double> noise(0.0, 0.005);
  for (int trial = 0; trial < 40; ++trial) {
    std::size_t k = 1 + rng() % 5;
    std::vector<std::pair<double, double>> kernels;
    for (std::size_t i = 0; i < k; ++i) kernels.push_back({20.0 + 25.0 * static_cast<double>(i), amp(rng)});
    auto e = kernel_eda(20, 160, kernels, noise(rng), 1000 + trial);
    auto scrs = detect_scrs(eda_decompose(e));
    ASSERT_EQ(scrs.size(), k) << "trial " << trial;
    for (std::size_t i = 0; i < k; ++i) EXPECT_NEAR(scrs[i].amplitude, kernels[i].second, 0.1 * kernels[i].second);
  }
}

TEST(DetectScrs, MismatchedComponents) {
  EdaComponents c{UniformSeries{0, 20, std::vector<double>(10, 1.0)}, UniformSeries{0, 20, std::vector<double>(9, 0.0)}};
  EXPECT_THROW(detect_scrs(c), DataError);
}

// ─── baseline ───────────────────────────────────────────────────────────────

TEST(ComputeBaseline, FloorsOnFlatInput) {
  HrSeries hr{UniformSeries{0, 4, std::vector<double>(241, 60.0)}};
  UniformSeries tonic{0, 4, std::vector<double>(241, 2.0)};
  auto b = compute_baseline(hr, tonic, {});
  EXPECT_DOUBLE_EQ(b.hr_mean, 60.0);
  EXPECT_DOUBLE_EQ(b.hr_sd, 0.5);
  EXPECT_DOUBLE_EQ(b.scl_mean, 2.0);
  EXPECT_DOUBLE_EQ(b.scl_sd, 0.01);
  EXPECT_DOUBLE_EQ(b.scr_rate, 0.0);
  EXPECT_DOUBLE_EQ(b.duration_s, 60.0);
}

TEST(ComputeBaseline, AlternatingHr) {
  HrSeries hr{UniformSeries{0, 4, {}}};
  for (int i = 0; i < 480; ++i) hr.series.v.push_back(i % 2 ? 62.0 : 58.0);
  UniformSeries tonic{0, 4, std::vector<double>(480, 2.0)};
  auto b = compute_baseline(hr, tonic, {});
  EXPECT_NEAR(b.hr_mean, 60.0, 1e-12);
  EXPECT_NEAR(b.hr_sd, 2.0, 0.1);
}

TEST(ComputeBaseline, ScrRate) {
  HrSeries hr{UniformSeries{0, 4, std::vector<double>(481, 60.0)}};
  UniformSeries tonic{0, 4, std::vector<double>(481, 2.0)};
  std::vector<Scr> scrs(5, Scr{1, 2, 0.1, 1});
  EXPECT_DOUBLE_EQ(compute_baseline(hr, tonic, scrs).scr_rate, 2.5);
}

TEST(ComputeBaseline, ShortSegmentRejected) {
  HrSeries hr{UniformSeries{0, 4, std::vector<double>(200, 60.0)}};
  UniformSeries tonic{0, 4, std::vector<double>(200, 2.0)};
  EXPECT_THROW(compute_baseline(hr, tonic, {}), DataError);
}

TEST(BaselineFormat, RoundTrip) {
  Baseline b{63.25, 1.5, 2.125, 0.05, 3.0, 110.0};
  auto back = parse_baseline(write_baseline(b));
  EXPECT_DOUBLE_EQ(back.hr_mean, b.hr_mean);
  EXPECT_DOUBLE_EQ(back.hr_sd, b.hr_sd);
  EXPECT_DOUBLE_EQ(back.scl_mean, b.scl_mean);
  EXPECT_DOUBLE_EQ(back.scl_sd, b.scl_sd);
  EXPECT_DOUBLE_EQ(back.scr_rate, b.scr_rate);
  EXPECT_DOUBLE_EQ(back.duration_s, b.duration_s);
  EXPECT_THROW(parse_baseline("hr_mean 60\n"), DataError);
  EXPECT_THROW(parse_baseline("hr_mean 60\nhr_sd 0\nscl_mean 2\nscl_sd 1\nscr_rate 0\nduration_s 60\n"), DataError);
  EXPECT_THROW(parse_baseline("bogus 1\n"), ParseError);
}
