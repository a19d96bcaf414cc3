#include <cmath>
#include <numbers>
#include <vector>

#include <gtest/gtest.h>

#include "eprsim/config.hpp"
#include "eprsim/experiment_harness.hpp"

using namespace eprsim;

namespace {

// Calibrated default scenario, computed once for the whole suite.
const ScenarioConfig& default_calibrated()
{
    static const ScenarioConfig cfg = calibrated(ScenarioConfig{});
    return cfg;
}

ScenarioConfig deterministic_config()
{
    ScenarioConfig cfg;
    cfg.emission.duration = 2e6;
    for (auto* d : {&cfg.detector_a, &cfg.detector_b}) {
        d->noise_sigma = 0;
        d->threshold = 0.5;
        d->dead_time = 0;
        d->jitter_pm_sigma = 0;
        d->jitter_disc_sigma = 0;
    }
    return cfg;
}

double mean(const std::vector<double>& v)
{
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double variance(const std::vector<double>& v)
{
    double m = mean(v), s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size() - 1);
}

} // namespace

TEST(Settings, LabelsAndPolarisers)
{
    EXPECT_EQ(label(Setting::x), "x");
    EXPECT_EQ(label(Setting::Z), "Z");
    EXPECT_EQ(setting_from_string("z"), Setting::z);
    EXPECT_THROW(setting_from_string("w"), InvalidInput);

    ScenarioConfig cfg;
    cfg.polariser_a.angle = 0.2;
    auto [xa, xb] = polarisers_for(cfg, Setting::x);
    EXPECT_TRUE(xa.present && xb.present);
    EXPECT_NEAR(xb.angle - xa.angle, std::numbers::pi / 8, 1e-15);
    auto [ya, yb] = polarisers_for(cfg, Setting::y);
    EXPECT_NEAR(yb.angle - ya.angle, 3 * std::numbers::pi / 8, 1e-15);
    auto [za, zb] = polarisers_for(cfg, Setting::z);
    EXPECT_TRUE(za.present);
    EXPECT_FALSE(zb.present);
    auto [Za, Zb] = polarisers_for(cfg, Setting::Z);
    EXPECT_FALSE(Za.present || Zb.present);
}

TEST(Harness, DeterministicLimitDetectsEveryPair)
{
    auto cfg = deterministic_config();
    auto st = simulate_setting(cfg, PolariserState::absent(),
                               PolariserState::absent(), 0);
    auto r = analyze_setting(cfg, "Z", cfg.delay, st, cfg.window);
    auto n = st.emissions.size();
    EXPECT_GT(n, 3000u);
    EXPECT_EQ(r.singles_a, n);
    EXPECT_EQ(r.singles_b, n);
    EXPECT_EQ(r.coincidences, n);
}

TEST(Harness, MalusZeroOnChannelB)
{
    auto cfg = deterministic_config();
    std::vector<PairEmission> fixed;
    for (int i = 0; i < 1000; ++i) fixed.push_back({100.0 * i, 0.4});
    Detector det(cfg.envelope_b, cfg.detector_b);
    Rng sig(1), dark(2);
    auto b = det.detect_stream(fixed,
                               PolariserState::at(0.4 + std::numbers::pi / 2),
                               Channel::B, sig, dark, 1e5);
    EXPECT_TRUE(b.empty());
    auto aligned = det.detect_stream(fixed, PolariserState::at(0.4), Channel::B,
                                     sig, dark, 1e5);
    EXPECT_EQ(aligned.size(), fixed.size());
}

TEST(Harness, AllBelowThresholdIsDegenerate)
{
    auto cfg = deterministic_config();
    cfg.detector_a.threshold = 100;
    cfg.detector_b.threshold = 100;
    auto out = run_bell_scan(cfg);
    EXPECT_EQ(out.raw, (CountQuad{0, 0, 0, 0}));
    EXPECT_FALSE(out.raw_result);
    EXPECT_FALSE(out.corrected_result);
    EXPECT_TRUE(out.degenerate());
    EXPECT_FALSE(out.warnings.empty());
}

TEST(Harness, CalibrationFailurePropagates)
{
    ScenarioConfig cfg;
    cfg.calibration.high = 0.01;
    cfg.calibration.trials = 2000;
    EXPECT_THROW(run_bell_scan(cfg), CalibrationFailure);
}

TEST(Harness, RejectsInvalidConfig)
{
    ScenarioConfig cfg;
    cfg.window.length = 0;
    EXPECT_THROW(run_bell_scan(cfg), InvalidInput);
    cfg = ScenarioConfig{};
    cfg.emission.mean_rate = -1;
    EXPECT_THROW(run_bell_scan(cfg), InvalidInput);
    cfg = ScenarioConfig{};
    cfg.spectrum.bin_width = 0;
    EXPECT_THROW(validate(cfg), InvalidInput);
}

TEST(Harness, CalibrationHalvesSinglesInAspectScenario)
{
    ScenarioConfig cfg = apply_preset(ScenarioConfig{}, Preset::aspect1981);
    cfg.emission.duration = 5e8; // about 1e6 emissions per setting
    cfg = calibrated(cfg);
    auto st = simulate_scan(cfg);
    const auto& x = st[index(Setting::x)];
    const auto& z = st[index(Setting::z)];
    const auto& Z = st[index(Setting::Z)];
    double ratio_a = double(z.a.size()) / double(Z.a.size());
    double ratio_b = double(x.b.size()) / double(z.b.size());
    EXPECT_GE(ratio_a, 0.46);
    EXPECT_LE(ratio_a, 0.54);
    EXPECT_GE(ratio_b, 0.46);
    EXPECT_LE(ratio_b, 0.54);
}

TEST(Harness, ScanIsDeterministic)
{
    ScenarioConfig cfg = default_calibrated();
    cfg.emission.duration = 1e7;
    auto r1 = run_bell_scan(cfg);
    auto r2 = run_bell_scan(cfg);
    EXPECT_EQ(r1.raw, r2.raw);
    EXPECT_EQ(r1.accidentals, r2.accidentals);
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_EQ(r1.settings[i].spectrum.counts, r2.settings[i].spectrum.counts);
    }
    cfg.emission.seed = 1;
    EXPECT_NE(run_bell_scan(cfg).raw, r1.raw);
}

TEST(Harness, SingleCellScanEqualsFreshRun)
{
    ScenarioConfig cfg = default_calibrated();
    cfg.emission.duration = 1e7;
    cfg.emission.seed = 5;
    Window w{-1.5, 6};
    std::vector<double> starts{w.start_offset}, lengths{w.length};
    auto grid = window_sensitivity_scan(cfg, starts, lengths);
    ASSERT_EQ(grid.size(), 1u);
    cfg.window = w;
    auto fresh = run_bell_scan(cfg);
    EXPECT_EQ(grid[0].output.raw, fresh.raw);
    EXPECT_EQ(grid[0].output.accidentals, fresh.accidentals);
    EXPECT_EQ(grid[0].output.raw_result->s_freedman, fresh.raw_result->s_freedman);
}

TEST(Harness, ScanGridOrderAndValidation)
{
    ScenarioConfig cfg = default_calibrated();
    cfg.emission.duration = 2e6;
    std::vector<double> starts{-3, 0}, lengths{5, 10, 20};
    auto grid = window_sensitivity_scan(cfg, starts, lengths);
    ASSERT_EQ(grid.size(), 6u);
    EXPECT_EQ(grid[1].window.start_offset, -3);
    EXPECT_EQ(grid[1].window.length, 10);
    EXPECT_EQ(grid[3].window.start_offset, 0);
    EXPECT_THROW(window_sensitivity_scan(cfg, {}, lengths), InvalidInput);
    std::vector<double> bad{0};
    EXPECT_THROW(window_sensitivity_scan(cfg, starts, bad), InvalidInput);
}

TEST(Harness, FullRangeWindowCountsWholeSpectrum)
{
    ScenarioConfig cfg = default_calibrated();
    cfg.emission.duration = 1e7;
    cfg.window = {cfg.spectrum.range_start,
                  cfg.spectrum.range_end - cfg.spectrum.range_start};
    auto out = run_bell_scan(cfg);
    for (const auto& s : out.settings) {
        EXPECT_EQ(s.coincidences, s.spectrum.total()) << s.label;
    }
}

TEST(Harness, VanishingWindowCollapsesCounts)
{
    ScenarioConfig cfg = default_calibrated();
    cfg.emission.duration = 1e7;
    auto st = simulate_scan(cfg);
    auto wide = analyze_scan(cfg, st, {-3, 20});
    auto thin = analyze_scan(cfg, st, {-3, 0.5});
    EXPECT_LT(thin.raw.Z, 0.05 * wide.raw.Z);
    EXPECT_LT(thin.raw.x, 0.05 * wide.raw.x);
}

TEST(Harness, CoincidencesBoundedBySingles)
{
    // One B can close the search for two A events less than a window length
    // apart, so the bound needs A's dead time to cover the window.
    ScenarioConfig cfg = default_calibrated();
    cfg.emission.duration = 1e7;
    cfg.emission.mean_rate = 0.02;
    cfg.detector_a.dead_time = cfg.window.length;
    auto out = run_bell_scan(cfg);
    for (const auto& s : out.settings) {
        EXPECT_LE(s.coincidences, std::min(s.singles_a, s.singles_b)) << s.label;
        EXPECT_TRUE(s.shift_adequate);
    }
    EXPECT_EQ(out.corrected.counts.x, out.raw.x - out.accidentals.x);
    EXPECT_EQ(out.corrected.counts.Z, out.raw.Z - out.accidentals.Z);
}

TEST(Harness, SpectrumHasSharpRiseAndDecay)
{
    ScenarioConfig cfg = default_calibrated();
    auto out = run_bell_scan(cfg);
    const auto& s = out.settings[index(Setting::Z)].spectrum;
    std::size_t peak = s.peak_bin();
    double zero_bin = (0 - s.range_start) / s.bin_width;
    EXPECT_LE(std::abs(static_cast<double>(peak) - zero_bin), 3.0);
    // Post-peak decade: non-increasing within Poisson noise.
    double top = static_cast<double>(s.counts[peak]);
    std::size_t i = peak + 1;
    for (; i < s.counts.size() && s.counts[i] > top / 10; ++i) {
        double prev = static_cast<double>(s.counts[i - 1]);
        EXPECT_LE(static_cast<double>(s.counts[i]), prev + 3 * std::sqrt(prev))
            << "bin " << i;
    }
    EXPECT_GT(i, peak + 3);
    EXPECT_LT(i, s.counts.size());
}

TEST(HarnessProperty, RotationalInvariance)
{
    ScenarioConfig base = default_calibrated();
    base.emission.duration = 2e7;
    std::vector<double> x0, y0, x1, y1;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        ScenarioConfig c = base;
        c.emission.seed = seed;
        auto r0 = run_bell_scan(c);
        c.emission.seed = seed + 1000;
        c.polariser_a.angle = 1.1;
        auto r1 = run_bell_scan(c);
        x0.push_back(r0.raw.x);
        y0.push_back(r0.raw.y);
        x1.push_back(r1.raw.x);
        y1.push_back(r1.raw.y);
    }
    double se_x = std::sqrt((variance(x0) + variance(x1)) / 10);
    double se_y = std::sqrt((variance(y0) + variance(y1)) / 10);
    EXPECT_LT(std::abs(mean(x1) - mean(x0)), 3 * se_x);
    EXPECT_LT(std::abs(mean(y1) - mean(y0)), 3 * se_y);
}

TEST(Diagnostics, FactorabilityHoldsForWideWindow)
{
    ScenarioConfig cfg = default_calibrated();
    cfg.detector_a.dead_time = 0;
    cfg.detector_b.dead_time = 0;
    cfg.window = {-20, 100};
    auto t = factorability_diagnostic(cfg, 16);
    ASSERT_EQ(t.rows.size(), 16u);
    EXPECT_TRUE(t.warnings.empty());
    EXPECT_LT(t.max_significance(), 3.0);
}

TEST(Diagnostics, FactorabilityFlagsNarrowWindow)
{
    ScenarioConfig cfg = default_calibrated();
    cfg.detector_a.dead_time = 0;
    cfg.detector_b.dead_time = 0;
    cfg.window = {-1, 2};
    auto t = factorability_diagnostic(cfg, 16);
    EXPECT_GT(t.max_significance(), 3.0);
}

TEST(Diagnostics, FactorabilityWithNoDetections)
{
    auto cfg = deterministic_config();
    cfg.detector_a.threshold = 100;
    cfg.detector_b.threshold = 100;
    auto t = factorability_diagnostic(cfg, 8);
    EXPECT_TRUE(t.rows.empty());
    ASSERT_EQ(t.warnings.size(), 1u);
    EXPECT_THROW(factorability_diagnostic(cfg, 1), InvalidInput);
}

TEST(Diagnostics, FactorabilityWarnsOnSmallBuckets)
{
    ScenarioConfig cfg = default_calibrated();
    cfg.emission.duration = 2e5; // about 400 emissions
    auto t = factorability_diagnostic(cfg, 16);
    EXPECT_FALSE(t.warnings.empty());
}

TEST(Diagnostics, NoEnhancementInDefaultModel)
{
    ScenarioConfig cfg = default_calibrated();
    for (auto ch : {Channel::A, Channel::B}) {
        auto t = enhancement_diagnostic(cfg, 16, ch);
        ASSERT_EQ(t.rows.size(), 16u);
        for (const auto& r : t.rows) {
            EXPECT_LE(r.p_polariser, r.p_absent + 3 * r.sigma)
                << "channel " << to_char(ch);
        }
    }
}

TEST(Diagnostics, EnhancementTrivialBuckets)
{
    // Noiseless, threshold between the transmitted and raw peak of the
    // bucket containing the polariser axis.
    auto cfg = deterministic_config();
    cfg.detector_a.threshold = 0.9;
    cfg.envelope_a = {1, 1};
    cfg.polariser_a.angle = std::numbers::pi / 32; // centre of bucket 0 of 16
    auto t = enhancement_diagnostic(cfg, 16, Channel::A);
    ASSERT_EQ(t.rows.size(), 16u);
    EXPECT_EQ(t.rows[0].p_polariser, 1.0);
    EXPECT_EQ(t.rows[0].p_absent, 1.0);
    // Bucket 8 is centred a quarter turn away.
    EXPECT_EQ(t.rows[8].p_polariser, 0.0);
    EXPECT_EQ(t.rows[8].p_absent, 1.0);
}

TEST(Audit, TableRowsAndZeroAccidentals)
{
    auto a = subtraction_audit({86.8, 38.3, 126.0, 248.2}, {22.8, 22.5, 45.5, 90.0});
    ASSERT_TRUE(a.raw_result && a.corrected_result);
    EXPECT_NEAR(a.corrected_result->s_freedman, 0.3047, 0.0005);
    EXPECT_FALSE(a.raw_result->any_violated());
    EXPECT_TRUE(a.corrected_result->violated_freedman);

    auto z = subtraction_audit({10, 4, 12, 30}, {});
    EXPECT_EQ(z.corrected.counts, z.raw);
    EXPECT_EQ(z.corrected_result->s_chsh, z.raw_result->s_chsh);

    auto d = subtraction_audit({1, 1, 1, 2}, {1, 1, 1, 2});
    EXPECT_TRUE(d.degenerate());
    EXPECT_FALSE(d.corrected_error.empty());
}
