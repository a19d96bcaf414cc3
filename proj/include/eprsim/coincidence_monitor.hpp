#pragma once

// Coincidence monitor: A-to-first-B time spectra, windowed coincidence
// counting, and delayed-channel accidental estimates.
//
// All three use the same time-to-first rule. For an A event at time a, the
// candidate B is the earliest b with (b + delay - a) >= lower edge of the
// region of interest; the A event contributes at most one count, placed by
// that difference. A is the start channel throughout.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "eprsim/error.hpp"
#include "eprsim/optics_detector.hpp"

namespace eprsim {

/// Accepted region [start_offset, start_offset + length) of B + delay - A.
struct Window {
    double start_offset = -3.0;
    double length = 20.0;

    double end() const noexcept { return start_offset + length; }

    /// -3 ns .. +17 ns
    static constexpr Window aspect1981() noexcept { return {-3.0, 20.0}; }
    /// 8 ns long; the start is a free parameter.
    static constexpr Window freedman1972(double start = 0.0) noexcept
    {
        return {start, 8.0};
    }
};

inline void validate(const Window& w)
{
    if (!(w.length > 0) || !std::isfinite(w.length)
        || !std::isfinite(w.start_offset)) {
        throw InvalidInput("window length must be positive and finite");
    }
}

struct TimeSpectrum {
    double bin_width = 0.5;
    double range_start = -20;
    double range_end = 80;
    double applied_delay = 0;
    std::vector<std::uint64_t> counts;

    double bin_start(std::size_t i) const noexcept
    {
        return range_start + static_cast<double>(i) * bin_width;
    }
    double bin_center(std::size_t i) const noexcept
    {
        return bin_start(i) + 0.5 * bin_width;
    }
    std::uint64_t total() const noexcept
    {
        std::uint64_t n = 0;
        for (auto c : counts) n += c;
        return n;
    }
    std::size_t peak_bin() const noexcept
    {
        return static_cast<std::size_t>(
            std::max_element(counts.begin(), counts.end()) - counts.begin());
    }
};

namespace detail {

inline void require_sorted(std::span<const DetectionEvent> events,
                           const char* what)
{
    if (!time_sorted(events)) {
        throw InvalidInput(std::string(what) + " stream is not time-sorted");
    }
}

/// Calls visit(difference) for each A event that has a B at or after `lo`.
template<class F>
void for_each_first_difference(std::span<const DetectionEvent> a,
                               std::span<const DetectionEvent> b, double delay,
                               double lo, F&& visit)
{
    require_sorted(a, "A");
    require_sorted(b, "B");
    std::size_t j = 0;
    for (const auto& ea : a) {
        while (j < b.size() && (b[j].time + delay) - ea.time < lo) {
            ++j;
        }
        if (j == b.size()) {
            return;
        }
        visit((b[j].time + delay) - ea.time);
    }
}

} // namespace detail

inline TimeSpectrum build_spectrum(std::span<const DetectionEvent> a,
                                   std::span<const DetectionEvent> b,
                                   double delay, double bin_width,
                                   double range_start, double range_end)
{
    if (!(bin_width > 0) || !(range_end > range_start)) {
        throw InvalidInput("spectrum needs positive bin width and range");
    }
    TimeSpectrum s;
    s.bin_width = bin_width;
    s.range_start = range_start;
    s.range_end = range_end;
    s.applied_delay = delay;
    auto nbins = static_cast<std::size_t>(
        std::ceil((range_end - range_start) / bin_width));
    s.counts.assign(nbins, 0);
    detail::for_each_first_difference(a, b, delay, range_start, [&](double d) {
        if (d < range_end) {
            auto bin = static_cast<std::size_t>((d - range_start) / bin_width);
            s.counts[std::min(bin, nbins - 1)] += 1;
        }
    });
    return s;
}

inline std::uint64_t count_coincidences(std::span<const DetectionEvent> a,
                                        std::span<const DetectionEvent> b,
                                        double delay, const Window& w)
{
    validate(w);
    std::uint64_t n = 0;
    double const end = w.end();
    detail::for_each_first_difference(a, b, delay, w.start_offset,
                                      [&](double d) {
                                          if (d < end) ++n;
                                      });
    return n;
}

struct AccidentalEstimate {
    std::uint64_t shifted_count = 0;
    double shift = 100;
    Window window;
    /// False when true pairs could still land in the shifted window.
    bool shift_adequate = true;
};

/// Coincidences counted with the B channel delayed by an extra `shift`.
/// `pair_spread` bounds how far a true B can precede its A (jitter plus any
/// negative delay); the shift is adequate when every shifted true pair lands
/// beyond the window end.
inline AccidentalEstimate estimate_accidentals(std::span<const DetectionEvent> a,
                                               std::span<const DetectionEvent> b,
                                               double delay, const Window& w,
                                               double shift = 100.0,
                                               double pair_spread = 0.0)
{
    AccidentalEstimate est;
    est.shift = shift;
    est.window = w;
    est.shifted_count = count_coincidences(a, b, delay + shift, w);
    est.shift_adequate = shift > w.end() + pair_spread;
    return est;
}

} // namespace eprsim
