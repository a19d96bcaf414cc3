#pragma once

// Composes source, optics, detectors and the coincidence monitor into the
// four-setting single-channel Bell scan:
//
//   x: relative polariser angle pi/8      y: relative angle 3pi/8
//   z: polariser B removed                Z: both polarisers removed
//
// Each setting is an independent run with its own emission stream, as in a
// sequential experiment. Coincidences are corrected with the delayed-channel
// accidental estimate measured on the same setting.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <future>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "eprsim/bell_statistics.hpp"
#include "eprsim/coincidence_monitor.hpp"
#include "eprsim/error.hpp"
#include "eprsim/optics_detector.hpp"
#include "eprsim/random.hpp"
#include "eprsim/source_model.hpp"

namespace eprsim {

enum class Setting : std::uint8_t { x = 0, y = 1, z = 2, Z = 3 };

inline constexpr std::array<Setting, 4> all_settings{Setting::x, Setting::y,
                                                     Setting::z, Setting::Z};

inline constexpr std::size_t index(Setting s) noexcept
{
    return static_cast<std::size_t>(s);
}

inline std::string_view label(Setting s) noexcept
{
    constexpr std::array<std::string_view, 4> names{"x", "y", "z", "Z"};
    return names[index(s)];
}

inline Setting setting_from_string(std::string_view s)
{
    for (auto st : all_settings) {
        if (label(st) == s) return st;
    }
    throw InvalidInput("unknown setting '" + std::string(s)
                       + "' (expected x, y, z or Z)");
}

enum class Preset { aspect1981, freedman1972 };

inline std::string_view to_string(Preset p) noexcept
{
    return p == Preset::aspect1981 ? "aspect1981" : "freedman1972";
}

inline Preset preset_from_string(std::string_view s)
{
    if (s == "aspect1981") return Preset::aspect1981;
    if (s == "freedman1972") return Preset::freedman1972;
    throw InvalidInput("unknown preset '" + std::string(s) + "'");
}

struct SpectrumBinning {
    double bin_width = 0.5;
    double range_start = -20;
    double range_end = 80;
};

/// Full description of a simulated experiment. Times in ns, angles in rad.
struct ScenarioConfig {
    EmissionProcessConfig emission;
    EnvelopeParams envelope_a{3.0, 1.0};
    EnvelopeParams envelope_b{3.0, 5.0};
    DetectorConfig detector_a = default_detector(3.0);
    DetectorConfig detector_b = default_detector(15.0);
    /// Templates: polariser A sits at angle a; polariser B at a + phi. Only
    /// the angle of A and the transit delays are read from them.
    PolariserState polariser_a = PolariserState::at(0.0);
    PolariserState polariser_b = PolariserState::at(0.0);
    Window window = Window::aspect1981();
    double delay = 0; // D, added to B times
    /// Per-setting override of `delay`, indexed by Setting.
    std::array<std::optional<double>, 4> setting_delay{};
    double accidental_shift = 100;
    /// Re-centre the window on each setting's observed spectrum peak.
    bool auto_center = false;
    SpectrumBinning spectrum;
    CalibrationOptions calibration;
    std::optional<Preset> preset;

    std::uint64_t seed() const noexcept { return emission.seed; }

    double delay_for(Setting s) const noexcept
    {
        return setting_delay[index(s)].value_or(delay);
    }

    /// Uncalibrated detector watching roughly three envelope lifetimes.
    static DetectorConfig default_detector(double horizon) noexcept
    {
        DetectorConfig d;
        d.threshold = std::numeric_limits<double>::quiet_NaN();
        d.noise_sigma = 1.0;
        d.max_horizon = horizon;
        return d;
    }
};

inline void validate(const ScenarioConfig& cfg)
{
    validate(cfg.emission);
    validate(cfg.envelope_a);
    validate(cfg.envelope_b);
    validate(cfg.detector_a, true);
    validate(cfg.detector_b, true);
    validate(cfg.window);
    if (!std::isfinite(cfg.delay) || !std::isfinite(cfg.accidental_shift)) {
        throw InvalidInput("delay and accidental shift must be finite");
    }
    if (!(cfg.spectrum.bin_width > 0)
        || !(cfg.spectrum.range_end > cfg.spectrum.range_start)) {
        throw InvalidInput("spectrum binning must have positive width and range");
    }
}

/// Polariser states for one of the four settings.
inline std::pair<PolariserState, PolariserState>
polarisers_for(const ScenarioConfig& cfg, Setting s)
{
    double a = cfg.polariser_a.angle;
    auto pa = PolariserState::at(a, cfg.polariser_a.transit_delay);
    auto pb = [&](double phi) {
        return PolariserState::at(a + phi, cfg.polariser_b.transit_delay);
    };
    switch (s) {
    case Setting::x: return {pa, pb(std::numbers::pi / 8)};
    case Setting::y: return {pa, pb(3 * std::numbers::pi / 8)};
    case Setting::z: return {pa, PolariserState::absent()};
    case Setting::Z: break;
    }
    return {PolariserState::absent(), PolariserState::absent()};
}

//---------------------------------------------------------------------------//
// Calibration
//---------------------------------------------------------------------------//

/// Fills every uncalibrated (NaN) threshold. Deterministic in the seed.
inline ScenarioConfig calibrated(ScenarioConfig cfg)
{
    validate(cfg);
    auto fill = [&](DetectorConfig& det, const EnvelopeParams& env,
                    std::uint64_t stream, const char* name) {
        if (!det.needs_calibration()) return;
        Rng rng(derive_seed(cfg.seed(), stream));
        try {
            det.threshold = calibrate_threshold(env, det, rng, cfg.calibration);
        } catch (const CalibrationFailure& e) {
            throw CalibrationFailure(std::string("detector ") + name + ": "
                                     + e.what());
        }
    };
    fill(cfg.detector_a, cfg.envelope_a, 1000, "A");
    fill(cfg.detector_b, cfg.envelope_b, 1001, "B");
    return cfg;
}

//---------------------------------------------------------------------------//
// Single setting
//---------------------------------------------------------------------------//

/// Raw streams of one setting; window choice is post-processing on these.
struct SettingStreams {
    PolariserState polariser_a;
    PolariserState polariser_b;
    std::vector<PairEmission> emissions;
    std::vector<DetectionEvent> a;
    std::vector<DetectionEvent> b;
};

struct SettingResult {
    std::string label;
    std::uint64_t singles_a = 0;
    std::uint64_t singles_b = 0;
    std::uint64_t coincidences = 0;
    std::uint64_t accidentals = 0;
    double effective_delay = 0; // after optional auto-centring
    bool shift_adequate = true;
    TimeSpectrum spectrum;
};

inline SettingStreams simulate_setting(const ScenarioConfig& cfg,
                                       const PolariserState& pol_a,
                                       const PolariserState& pol_b,
                                       std::uint64_t seed_salt)
{
    validate(cfg);
    std::uint64_t seed = derive_seed(cfg.seed(), seed_salt);
    Detector det_a(cfg.envelope_a, cfg.detector_a);
    Detector det_b(cfg.envelope_b, cfg.detector_b);

    SettingStreams out;
    out.polariser_a = pol_a;
    out.polariser_b = pol_b;
    EmissionProcessConfig ecfg = cfg.emission;
    ecfg.seed = derive_seed(seed, 0);
    out.emissions = generate_emissions(ecfg);

    Rng sig_a(derive_seed(seed, 1));
    Rng sig_b(derive_seed(seed, 2));
    Rng dark_a(derive_seed(seed, 3));
    Rng dark_b(derive_seed(seed, 4));
    double duration = cfg.emission.duration;
    out.a = det_a.detect_stream(out.emissions, pol_a, Channel::A, sig_a, dark_a,
                                duration);
    out.b = det_b.detect_stream(out.emissions, pol_b, Channel::B, sig_b, dark_b,
                                duration);
    return out;
}

/// Largest plausible lead of a true B over its A from jitter alone.
inline double pair_spread(const ScenarioConfig& cfg) noexcept
{
    auto var = [](const DetectorConfig& d) {
        return d.jitter_pm_sigma * d.jitter_pm_sigma
               + d.jitter_disc_sigma * d.jitter_disc_sigma;
    };
    return 5.0 * std::sqrt(var(cfg.detector_a) + var(cfg.detector_b));
}

inline SettingResult analyze_setting(const ScenarioConfig& cfg,
                                     std::string_view name, double delay,
                                     const SettingStreams& st,
                                     const Window& window)
{
    SettingResult r;
    r.label = std::string(name);
    r.singles_a = st.a.size();
    r.singles_b = st.b.size();
    r.spectrum = build_spectrum(st.a, st.b, delay, cfg.spectrum.bin_width,
                                cfg.spectrum.range_start, cfg.spectrum.range_end);
    double d = delay;
    if (cfg.auto_center && r.spectrum.total() > 0) {
        d = delay - r.spectrum.bin_center(r.spectrum.peak_bin());
    }
    r.effective_delay = d;
    r.coincidences = count_coincidences(st.a, st.b, d, window);
    auto acc = estimate_accidentals(st.a, st.b, d, window, cfg.accidental_shift,
                                    pair_spread(cfg));
    r.accidentals = acc.shifted_count;
    r.shift_adequate = acc.shift_adequate;
    return r;
}

/// One setting end to end. `cfg` must already be calibrated.
inline SettingResult run_setting(const ScenarioConfig& cfg,
                                 const PolariserState& pol_a,
                                 const PolariserState& pol_b,
                                 std::uint64_t seed_salt,
                                 std::string_view name = "custom")
{
    auto streams = simulate_setting(cfg, pol_a, pol_b, seed_salt);
    return analyze_setting(cfg, name, cfg.delay, streams, cfg.window);
}

//---------------------------------------------------------------------------//
// Four-setting scan
//---------------------------------------------------------------------------//

using ScanStreams = std::array<SettingStreams, 4>;

struct RunOutput {
    std::array<SettingResult, 4> settings;
    CountQuad raw;
    AccidentalQuad accidentals;
    CorrectedQuad corrected;
    std::optional<BellResult> raw_result;
    std::optional<BellResult> corrected_result;
    std::vector<std::string> warnings;
    ScenarioConfig config; // calibrated thresholds included

    bool degenerate() const noexcept
    {
        return !raw_result || !corrected_result;
    }
};

/// Simulates all four settings; each is an independent job with its own
/// derived seed, so they run concurrently.
inline ScanStreams simulate_scan(const ScenarioConfig& cfg)
{
    std::array<std::future<SettingStreams>, 4> jobs;
    for (auto s : all_settings) {
        jobs[index(s)] = std::async(std::launch::async, [&cfg, s] {
            auto [pa, pb] = polarisers_for(cfg, s);
            return simulate_setting(cfg, pa, pb, index(s));
        });
    }
    ScanStreams out;
    for (auto s : all_settings) {
        out[index(s)] = jobs[index(s)].get();
    }
    return out;
}

inline RunOutput analyze_scan(const ScenarioConfig& cfg,
                              const ScanStreams& streams, const Window& window)
{
    RunOutput out;
    out.config = cfg;
    out.config.window = window;
    for (auto s : all_settings) {
        out.settings[index(s)] = analyze_setting(cfg, label(s), cfg.delay_for(s),
                                                 streams[index(s)], window);
    }
    auto coinc = [&](Setting s) {
        return static_cast<double>(out.settings[index(s)].coincidences);
    };
    auto acc = [&](Setting s) {
        return static_cast<double>(out.settings[index(s)].accidentals);
    };
    out.raw = {coinc(Setting::x), coinc(Setting::y), coinc(Setting::z),
               coinc(Setting::Z)};
    out.accidentals = {acc(Setting::x), acc(Setting::y), acc(Setting::z),
                       acc(Setting::Z)};
    out.corrected = subtract_accidentals(out.raw, out.accidentals);

    for (const auto& r : out.settings) {
        if (!r.shift_adequate) {
            out.warnings.push_back("setting " + r.label
                                   + ": accidental shift does not clear the "
                                     "window; estimate may contain true pairs");
            break;
        }
    }
    try {
        out.raw_result = evaluate(out.raw);
    } catch (const DegenerateData& e) {
        out.warnings.push_back(std::string("raw data degenerate: ") + e.what());
    }
    try {
        out.corrected_result = evaluate(out.corrected.counts);
    } catch (const DegenerateData& e) {
        out.warnings.push_back(std::string("corrected data degenerate: ")
                               + e.what());
    }
    if (out.corrected.has_negative) {
        out.warnings.emplace_back("accidental subtraction produced negative "
                                  "counts");
    }
    return out;
}

/// Calibrates (if needed), simulates the four settings and evaluates raw and
/// accidental-corrected statistics.
inline RunOutput run_bell_scan(const ScenarioConfig& config)
{
    ScenarioConfig cfg = calibrated(config);
    return analyze_scan(cfg, simulate_scan(cfg), cfg.window);
}

//---------------------------------------------------------------------------//
// Window sensitivity
//---------------------------------------------------------------------------//

struct ScanCell {
    Window window;
    RunOutput output;
};

/// Re-evaluates one set of simulated streams for every (start, length)
/// window. Cells are ordered start-major.
inline std::vector<ScanCell>
window_sensitivity_scan(const ScenarioConfig& config,
                        std::span<const double> starts,
                        std::span<const double> lengths)
{
    if (starts.empty() || lengths.empty()) {
        throw InvalidInput("window scan needs at least one start and length");
    }
    ScenarioConfig cfg = calibrated(config);
    auto streams = simulate_scan(cfg);
    std::vector<ScanCell> grid;
    grid.reserve(starts.size() * lengths.size());
    for (double s : starts) {
        for (double len : lengths) {
            Window w{s, len};
            validate(w);
            grid.push_back({w, analyze_scan(cfg, streams, w)});
        }
    }
    return grid;
}

//---------------------------------------------------------------------------//
// Diagnostics
//---------------------------------------------------------------------------//

struct LambdaBucket {
    double lo = 0;
    double hi = 0;
};

inline std::vector<LambdaBucket> lambda_buckets(std::size_t n)
{
    std::vector<LambdaBucket> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = {std::numbers::pi * static_cast<double>(i) / n,
                  std::numbers::pi * static_cast<double>(i + 1) / n};
    }
    return out;
}

inline std::size_t bucket_of(double lambda, std::size_t n) noexcept
{
    auto i = static_cast<std::size_t>(lambda / std::numbers::pi
                                      * static_cast<double>(n));
    return std::min(i, n - 1);
}

inline constexpr std::size_t min_bucket_emissions = 100;

struct FactorabilityRow {
    LambdaBucket bucket;
    std::size_t emissions = 0;
    double p_a = 0;     // singles probability, channel A
    double p_b = 0;     // singles probability, channel B
    double p_c = 0;     // coincidence probability
    double product = 0; // p_a * p_b
    double sigma = 0;   // combined binomial standard error of p_c - product

    double deviation() const noexcept { return p_c - product; }
};

struct FactorabilityTable {
    Setting setting = Setting::x;
    std::vector<FactorabilityRow> rows;
    std::vector<std::string> warnings;

    double max_abs_deviation() const noexcept
    {
        double m = 0;
        for (const auto& r : rows) m = std::max(m, std::abs(r.deviation()));
        return m;
    }
    /// Largest |p_c - p_a p_b| in units of its standard error.
    double max_significance() const noexcept
    {
        double m = 0;
        for (const auto& r : rows) {
            if (r.sigma > 0) {
                m = std::max(m, std::abs(r.deviation()) / r.sigma);
            } else if (r.deviation() != 0) {
                return std::numeric_limits<double>::infinity();
            }
        }
        return m;
    }
};

namespace detail {

inline void check_buckets(std::size_t n)
{
    if (n < 2) {
        throw InvalidInput("diagnostics need at least 2 lambda buckets");
    }
}

/// Detection time per emission index (NaN when that emission was not
/// detected on the channel).
inline std::vector<double> tagged_times(std::span<const DetectionEvent> events,
                                        std::size_t n_emissions)
{
    std::vector<double> t(n_emissions, std::numeric_limits<double>::quiet_NaN());
    for (const auto& e : events) {
        if (e.origin >= 0) {
            t[static_cast<std::size_t>(e.origin)] = e.time;
        }
    }
    return t;
}

inline double binomial_var(double p, double n) noexcept
{
    return n > 0 ? p * (1 - p) / n : 0.0;
}

} // namespace detail

/// Compares p_c(lambda) with p_a(lambda) p_b(lambda) per lambda slice on a
/// tagged run of one setting. A coincidence is an emission detected on both
/// channels with B + D - A inside the configured window.
inline FactorabilityTable factorability_diagnostic(const ScenarioConfig& config,
                                                   std::size_t n_buckets,
                                                   Setting setting = Setting::x)
{
    detail::check_buckets(n_buckets);
    ScenarioConfig cfg = calibrated(config);
    auto [pa, pb] = polarisers_for(cfg, setting);
    auto st = simulate_setting(cfg, pa, pb, 16 + index(setting));
    std::size_t const n = st.emissions.size();
    auto ta = detail::tagged_times(st.a, n);
    auto tb = detail::tagged_times(st.b, n);

    FactorabilityTable table;
    table.setting = setting;
    if (st.a.empty() && st.b.empty()) {
        table.warnings.emplace_back("no detections on either channel");
        return table;
    }

    std::vector<double> count(n_buckets), na(n_buckets), nb(n_buckets),
        nc(n_buckets);
    double const d = cfg.delay_for(setting);
    for (std::size_t i = 0; i < n; ++i) {
        auto k = bucket_of(st.emissions[i].lambda, n_buckets);
        count[k] += 1;
        bool has_a = !std::isnan(ta[i]);
        bool has_b = !std::isnan(tb[i]);
        na[k] += has_a;
        nb[k] += has_b;
        if (has_a && has_b) {
            double diff = tb[i] + d - ta[i];
            nc[k] += diff >= cfg.window.start_offset && diff < cfg.window.end();
        }
    }

    auto buckets = lambda_buckets(n_buckets);
    for (std::size_t k = 0; k < n_buckets; ++k) {
        FactorabilityRow row;
        row.bucket = buckets[k];
        row.emissions = static_cast<std::size_t>(count[k]);
        if (count[k] > 0) {
            row.p_a = na[k] / count[k];
            row.p_b = nb[k] / count[k];
            row.p_c = nc[k] / count[k];
        }
        row.product = row.p_a * row.p_b;
        row.sigma = std::sqrt(detail::binomial_var(row.p_c, count[k])
                              + row.p_b * row.p_b
                                    * detail::binomial_var(row.p_a, count[k])
                              + row.p_a * row.p_a
                                    * detail::binomial_var(row.p_b, count[k]));
        if (row.emissions < min_bucket_emissions) {
            table.warnings.push_back("bucket " + std::to_string(k) + " has only "
                                     + std::to_string(row.emissions)
                                     + " emissions");
        }
        table.rows.push_back(row);
    }
    return table;
}

struct EnhancementRow {
    LambdaBucket bucket;
    std::size_t emissions = 0;
    double p_polariser = 0; // p(a, lambda)
    double p_absent = 0;    // p(inf, lambda)
    double sigma = 0;

    double excess() const noexcept { return p_polariser - p_absent; }
};

struct EnhancementTable {
    Channel channel = Channel::A;
    double angle = 0;
    std::vector<EnhancementRow> rows;
    std::vector<std::string> warnings;

    /// Largest p(a, lambda) - p(inf, lambda) in units of its standard error
    /// (negative when the polariser never helps).
    double max_significance() const noexcept
    {
        double m = -std::numeric_limits<double>::infinity();
        for (const auto& r : rows) {
            if (r.sigma > 0) {
                m = std::max(m, r.excess() / r.sigma);
            } else if (r.excess() > 0) {
                return std::numeric_limits<double>::infinity();
            }
        }
        return m;
    }
};

/// Per-lambda single-channel detection probability with the polariser at
/// its setting-x angle versus removed. Each emission is detected
/// independently (no dead time across emissions).
inline EnhancementTable enhancement_diagnostic(const ScenarioConfig& config,
                                               std::size_t n_buckets,
                                               Channel channel)
{
    detail::check_buckets(n_buckets);
    ScenarioConfig cfg = calibrated(config);
    auto [pa, pb] = polarisers_for(cfg, Setting::x);
    PolariserState pol = channel == Channel::A ? pa : pb;
    const auto& env = channel == Channel::A ? cfg.envelope_a : cfg.envelope_b;
    const auto& dcfg = channel == Channel::A ? cfg.detector_a : cfg.detector_b;
    Detector det(env, dcfg);

    std::uint64_t seed = derive_seed(cfg.seed(), 32 + static_cast<int>(channel));
    EmissionProcessConfig ecfg = cfg.emission;
    ecfg.seed = derive_seed(seed, 0);
    auto emissions = generate_emissions(ecfg);
    Rng rng_pol(derive_seed(seed, 1));
    Rng rng_abs(derive_seed(seed, 2));

    EnhancementTable table;
    table.channel = channel;
    table.angle = pol.angle;
    std::vector<double> count(n_buckets), npol(n_buckets), nabs(n_buckets);
    for (const auto& e : emissions) {
        auto k = bucket_of(e.lambda, n_buckets);
        count[k] += 1;
        ChannelState s1, s2;
        npol[k] += det.detect_first(e, pol, s1, channel, rng_pol).has_value();
        nabs[k] += det.detect_first(e, PolariserState::absent(), s2, channel,
                                    rng_abs)
                       .has_value();
    }
    double total = 0;
    for (auto c : npol) total += c;
    for (auto c : nabs) total += c;
    if (total == 0) {
        table.warnings.emplace_back("no detections");
        return table;
    }

    auto buckets = lambda_buckets(n_buckets);
    for (std::size_t k = 0; k < n_buckets; ++k) {
        EnhancementRow row;
        row.bucket = buckets[k];
        row.emissions = static_cast<std::size_t>(count[k]);
        if (count[k] > 0) {
            row.p_polariser = npol[k] / count[k];
            row.p_absent = nabs[k] / count[k];
        }
        row.sigma = std::sqrt(detail::binomial_var(row.p_polariser, count[k])
                              + detail::binomial_var(row.p_absent, count[k]));
        if (row.emissions < min_bucket_emissions) {
            table.warnings.push_back("bucket " + std::to_string(k) + " has only "
                                     + std::to_string(row.emissions)
                                     + " emissions");
        }
        table.rows.push_back(row);
    }
    return table;
}

//---------------------------------------------------------------------------//
// Subtraction audit
//---------------------------------------------------------------------------//

struct SubtractionAudit {
    CountQuad raw;
    AccidentalQuad accidentals;
    CorrectedQuad corrected;
    std::optional<BellResult> raw_result;
    std::optional<BellResult> corrected_result;
    std::string raw_error;
    std::string corrected_error;

    bool degenerate() const noexcept
    {
        return !raw_result || !corrected_result;
    }
};

inline SubtractionAudit subtraction_audit(const CountQuad& raw,
                                          const AccidentalQuad& acc)
{
    SubtractionAudit a;
    a.raw = raw;
    a.accidentals = acc;
    a.corrected = subtract_accidentals(raw, acc);
    try {
        a.raw_result = evaluate(raw);
    } catch (const DegenerateData& e) {
        a.raw_error = e.what();
    }
    try {
        a.corrected_result = evaluate(a.corrected.counts);
    } catch (const DegenerateData& e) {
        a.corrected_error = e.what();
    }
    return a;
}

} // namespace eprsim
