#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "eprsim/coincidence_monitor.hpp"

using namespace eprsim;

namespace {

std::vector<DetectionEvent> events(Channel c, std::initializer_list<double> t)
{
    std::vector<DetectionEvent> out;
    for (double v : t) out.push_back({c, v});
    return out;
}

// Homogeneous Poisson stream on [0, duration), generated test-side.
std::vector<DetectionEvent> poisson_stream(Channel c, double rate,
                                           double duration, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::exponential_distribution<double> gap(rate);
    std::vector<DetectionEvent> out;
    for (double t = gap(rng); t < duration; t += gap(rng)) {
        out.push_back({c, t});
    }
    return out;
}

// Times on a 1/64 ns grid so sums with dyadic shifts stay exact.
std::vector<DetectionEvent> grid_stream(Channel c, double rate, double duration,
                                        std::uint64_t seed)
{
    auto s = poisson_stream(c, rate, duration, seed);
    for (auto& e : s) e.time = std::round(e.time * 64) / 64;
    return Detector::apply_dead_time(std::move(s), 0);
}

} // namespace

TEST(Spectrum, SingleEventLandsInItsBin)
{
    auto a = events(Channel::A, {0});
    auto b = events(Channel::B, {3});
    auto s = build_spectrum(a, b, 0, 1, 0, 10);
    ASSERT_EQ(s.counts.size(), 10u);
    for (std::size_t i = 0; i < 10; ++i) {
        EXPECT_EQ(s.counts[i], i == 3 ? 1u : 0u);
    }
    EXPECT_EQ(s.bin_start(3), 3.0);
}

TEST(Spectrum, EmptyBGivesZeros)
{
    auto a = events(Channel::A, {0, 5, 9});
    auto s = build_spectrum(a, {}, 0, 0.5, -20, 80);
    EXPECT_EQ(s.counts.size(), 200u);
    EXPECT_EQ(s.total(), 0u);
}

TEST(Spectrum, BinCountIsCeilOfRange)
{
    auto s = build_spectrum({}, {}, 0, 0.3, 0, 1);
    EXPECT_EQ(s.counts.size(), 4u);
}

TEST(Spectrum, HalfOpenBinEdges)
{
    auto a = events(Channel::A, {0});
    auto b = events(Channel::B, {2});
    auto s = build_spectrum(a, b, 0, 1, 0, 10);
    EXPECT_EQ(s.counts[2], 1u);
    EXPECT_EQ(s.counts[1], 0u);
    // Exactly the upper edge is outside the range.
    auto out = build_spectrum(a, events(Channel::B, {10}), 0, 1, 0, 10);
    EXPECT_EQ(out.total(), 0u);
}

TEST(Spectrum, RejectsUnsortedOrBadBinning)
{
    auto a = events(Channel::A, {5, 1});
    auto b = events(Channel::B, {3});
    EXPECT_THROW(build_spectrum(a, b, 0, 1, 0, 10), InvalidInput);
    EXPECT_THROW(build_spectrum(b, a, 0, 1, 0, 10), InvalidInput);
    EXPECT_THROW(build_spectrum({}, {}, 0, 0, 0, 10), InvalidInput);
    EXPECT_THROW(build_spectrum({}, {}, 0, 1, 10, 10), InvalidInput);
}

TEST(Spectrum, PoissonFirstArrivalSlope)
{
    double const rate_a = 0.01, rate_b = 0.05, duration = 1e6;
    auto a = poisson_stream(Channel::A, rate_a, duration, 1);
    auto b = poisson_stream(Channel::B, rate_b, duration, 2);
    auto s = build_spectrum(a, b, 0, 1, 0, 60);
    // Weighted least squares of log(count) against bin centre.
    double sw = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < s.counts.size(); ++i) {
        if (s.counts[i] == 0) continue;
        double w = static_cast<double>(s.counts[i]);
        double x = s.bin_center(i), y = std::log(w);
        sw += w;
        sx += w * x;
        sy += w * y;
        sxx += w * x * x;
        sxy += w * x * y;
    }
    double slope = (sw * sxy - sx * sy) / (sw * sxx - sx * sx);
    EXPECT_NEAR(slope, -rate_b, 0.1 * rate_b);
}

TEST(Coincidences, WindowExamples)
{
    auto a = events(Channel::A, {0});
    EXPECT_EQ(count_coincidences(a, events(Channel::B, {5}), 0, {-3, 20}), 1u);
    EXPECT_EQ(count_coincidences(a, events(Channel::B, {50}), 0, {-3, 20}), 0u);
    EXPECT_EQ(count_coincidences(a, events(Channel::B, {-3}), 0, {-3, 20}), 1u);
    EXPECT_EQ(count_coincidences(a, events(Channel::B, {17}), 0, {-3, 20}), 0u);
    EXPECT_EQ(count_coincidences(a, events(Channel::B, {50}), -40, {-3, 20}), 1u);
}

TEST(Coincidences, TimeToFirstUsesEarliestCandidate)
{
    auto a = events(Channel::A, {0});
    auto b = events(Channel::B, {1, 4});
    EXPECT_EQ(count_coincidences(a, b, 0, {2, 5}), 1u);
    EXPECT_EQ(count_coincidences(a, b, 0, {0, 3}), 1u);
    // The first candidate misses the window; the later B is not consulted.
    EXPECT_EQ(count_coincidences(a, b, 0, {0, 0.5}), 0u);
    // One B may close the search for several A events.
    auto a2 = events(Channel::A, {0, 1});
    EXPECT_EQ(count_coincidences(a2, events(Channel::B, {1.2}), 0, {0, 2}), 2u);
}

TEST(Coincidences, RejectsUnsortedAndBadWindow)
{
    auto a = events(Channel::A, {5, 1});
    EXPECT_THROW(count_coincidences(a, {}, 0, {-3, 20}), InvalidInput);
    EXPECT_THROW(count_coincidences({}, {}, 0, {-3, 0}), InvalidInput);
    EXPECT_THROW(validate(Window{-3, -1}), InvalidInput);
    EXPECT_THROW(validate(Window{std::nan(""), 1}), InvalidInput);
}

TEST(Coincidences, PresetWindows)
{
    EXPECT_EQ(Window::aspect1981().start_offset, -3.0);
    EXPECT_EQ(Window::aspect1981().end(), 17.0);
    EXPECT_EQ(Window::freedman1972(1.5).length, 8.0);
    EXPECT_EQ(Window::freedman1972(1.5).start_offset, 1.5);
}

TEST(Coincidences, CountEqualsSpectrumSumOnAlignedBins)
{
    // First-arrival search starts at the lower edge of the region of
    // interest, so the spectrum range is taken to be exactly the window.
    auto a = poisson_stream(Channel::A, 0.02, 1e5, 3);
    auto b = poisson_stream(Channel::B, 0.05, 1e5, 4);
    Window w{-3, 20};
    auto s = build_spectrum(a, b, 2.0, 0.5, w.start_offset, w.end());
    EXPECT_EQ(s.counts.size(), 40u);
    EXPECT_EQ(count_coincidences(a, b, 2.0, w), s.total());
    EXPECT_GT(s.total(), 0u);
}

TEST(Accidentals, PoissonProductRate)
{
    double const duration = 1e8;
    auto a = poisson_stream(Channel::A, 1e5 / duration, duration, 11);
    auto b = poisson_stream(Channel::B, 1e5 / duration, duration, 12);
    auto est = estimate_accidentals(a, b, 0, {-3, 20}, 100);
    double expected = static_cast<double>(a.size()) * b.size() * 20 / duration;
    EXPECT_NEAR(static_cast<double>(est.shifted_count), expected, 0.05 * expected);
    EXPECT_NEAR(expected, 2000, 60);
}

TEST(Accidentals, EmptyAGivesZero)
{
    auto b = events(Channel::B, {1, 2, 3});
    EXPECT_EQ(estimate_accidentals({}, b, 0, {-3, 20}, 100).shifted_count, 0u);
}

TEST(Accidentals, PerfectPairsShiftedOut)
{
    std::vector<DetectionEvent> a, b;
    for (int i = 0; i < 1000; ++i) {
        a.push_back({Channel::A, 130.0 * i});
        b.push_back({Channel::B, 130.0 * i + 5});
    }
    EXPECT_EQ(count_coincidences(a, b, 0, {-3, 20}), 1000u);
    auto est = estimate_accidentals(a, b, 0, {-3, 20}, 100);
    EXPECT_EQ(est.shifted_count, 0u);
    EXPECT_TRUE(est.shift_adequate);
}

TEST(Accidentals, ShortShiftIsFlagged)
{
    auto est = estimate_accidentals({}, {}, 0, {-3, 20}, 15);
    EXPECT_FALSE(est.shift_adequate);
    est = estimate_accidentals({}, {}, 0, {-3, 20}, 18, 4);
    EXPECT_FALSE(est.shift_adequate);
    est = estimate_accidentals({}, {}, 0, {-3, 20}, 100, 4);
    EXPECT_TRUE(est.shift_adequate);
}

//---------------------------------------------------------------------------//
// Properties
//---------------------------------------------------------------------------//

TEST(CoincidenceProperty, AtMostOneCountPerAEvent)
{
    auto a = poisson_stream(Channel::A, 0.05, 1e5, 5);
    auto b = poisson_stream(Channel::B, 0.5, 1e5, 6);
    auto s = build_spectrum(a, b, 0, 0.5, -20, 80);
    EXPECT_LE(s.total(), a.size());
    EXPECT_LE(count_coincidences(a, b, 0, {-20, 100}), a.size());
}

TEST(CoincidenceProperty, InvariantUnderCommonTimeShift)
{
    auto a = grid_stream(Channel::A, 0.02, 1e5, 7);
    auto b = grid_stream(Channel::B, 0.05, 1e5, 8);
    Window w{-3, 20};
    auto n = count_coincidences(a, b, 1.5, w);
    auto spec = build_spectrum(a, b, 1.5, 0.5, -20, 80);
    for (double shift : {1024.0, 37.25, -512.5}) {
        auto a2 = a, b2 = b;
        for (auto& e : a2) e.time += shift;
        for (auto& e : b2) e.time += shift;
        EXPECT_EQ(count_coincidences(a2, b2, 1.5, w), n);
        EXPECT_EQ(build_spectrum(a2, b2, 1.5, 0.5, -20, 80).counts, spec.counts);
    }
}

TEST(CoincidenceProperty, BShiftCompensatedByDelay)
{
    auto a = grid_stream(Channel::A, 0.02, 1e5, 9);
    auto b = grid_stream(Channel::B, 0.05, 1e5, 10);
    Window w{-3, 20};
    double const D = 4.0;
    auto n = count_coincidences(a, b, D, w);
    auto acc = estimate_accidentals(a, b, D, w, 100).shifted_count;
    auto spec = build_spectrum(a, b, D, 0.5, -20, 80);
    for (double delta : {2.5, -7.75, 100.0}) {
        auto b2 = b;
        for (auto& e : b2) e.time += delta;
        EXPECT_EQ(count_coincidences(a, b2, D - delta, w), n);
        EXPECT_EQ(estimate_accidentals(a, b2, D - delta, w, 100).shifted_count,
                  acc);
        EXPECT_EQ(build_spectrum(a, b2, D - delta, 0.5, -20, 80).counts,
                  spec.counts);
    }
}

TEST(CoincidenceProperty, MonotoneInWindowLength)
{
    auto a = poisson_stream(Channel::A, 0.02, 1e5, 12);
    auto b = poisson_stream(Channel::B, 0.05, 1e5, 13);
    std::uint64_t prev = 0;
    for (double len : {0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 40.0}) {
        auto n = count_coincidences(a, b, 0, {-3, len});
        EXPECT_GE(n, prev);
        prev = n;
    }
}
