#pragma once

// Pair-emission source: event times, the shared hidden polarisation angle of
// each pair, and the decaying wave envelope each member carries.
//
// All times are in nanoseconds.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string_view>
#include <vector>

#include "eprsim/error.hpp"
#include "eprsim/random.hpp"

namespace eprsim {

/// One source event. Both members of the pair leave at `time` and carry the
/// same polarisation angle `lambda` in [0, pi).
struct PairEmission {
    double time = 0;
    double lambda = 0;

    friend bool operator==(const PairEmission&, const PairEmission&) = default;
};

struct EnvelopeParams {
    double i0 = 1.0;
    double tau = 1.0;
};

inline void validate(const EnvelopeParams& p)
{
    if (!(p.i0 > 0) || !std::isfinite(p.i0)) {
        throw InvalidInput("envelope i0 must be positive");
    }
    if (!(p.tau > 0)) {
        throw InvalidInput("envelope tau must be positive");
    }
}

/// i0 * exp(-dt / tau)
inline double envelope_intensity(const EnvelopeParams& p, double dt)
{
    if (!(dt >= 0)) {
        throw InvalidInput("envelope_intensity: dt must be nonnegative");
    }
    return p.i0 * std::exp(-dt / p.tau);
}

enum class EmissionMode { poisson, clustered, regular };

inline std::string_view to_string(EmissionMode m) noexcept
{
    switch (m) {
    case EmissionMode::poisson: return "poisson";
    case EmissionMode::clustered: return "clustered";
    case EmissionMode::regular: return "regular";
    }
    return "?";
}

inline EmissionMode emission_mode_from_string(std::string_view s)
{
    if (s == "poisson") return EmissionMode::poisson;
    if (s == "clustered") return EmissionMode::clustered;
    if (s == "regular") return EmissionMode::regular;
    throw InvalidInput("unknown emission mode '" + std::string(s) + "'");
}

struct EmissionProcessConfig {
    double mean_rate = 0.002; // emissions per ns
    double duration = 5e7;    // ns
    EmissionMode mode = EmissionMode::poisson;
    double cluster_strength = 0; // in [0, 1]; ignored for poisson
    std::uint64_t seed = 0;
};

inline void validate(const EmissionProcessConfig& cfg)
{
    if (!(cfg.mean_rate > 0) || !std::isfinite(cfg.mean_rate)) {
        throw InvalidInput("emission rate must be positive");
    }
    if (!(cfg.duration >= 0) || !std::isfinite(cfg.duration)) {
        throw InvalidInput("emission duration must be nonnegative");
    }
    if (!std::isfinite(cfg.mean_rate * cfg.duration)) {
        throw InvalidInput("emission rate * duration overflows");
    }
    if (!(cfg.cluster_strength >= 0 && cfg.cluster_strength <= 1)) {
        throw InvalidInput("cluster_strength must lie in [0, 1]");
    }
}

/// Generates the time-ordered emission list for one run.
///
/// - poisson: exponential gaps with mean 1/rate.
/// - clustered: exponential gaps, half of them shortened by
///   (1 - cluster_strength); the base mean is rescaled so the long-run rate
///   stays at mean_rate.
/// - regular: gaps of 1/rate plus uniform jitter of
///   +-cluster_strength / (2 rate).
///
/// Lambda is drawn uniformly on [0, pi) from the same engine after each gap.
inline std::vector<PairEmission>
generate_emissions(const EmissionProcessConfig& cfg)
{
    validate(cfg);
    std::vector<PairEmission> out;
    if (cfg.duration == 0) {
        return out;
    }
    out.reserve(static_cast<std::size_t>(cfg.mean_rate * cfg.duration * 1.1)
                + 16);

    Rng rng(cfg.seed);
    double const period = 1.0 / cfg.mean_rate;
    double const s = cfg.cluster_strength;

    double base_mean = period;
    if (cfg.mode == EmissionMode::clustered) {
        base_mean = period / (1.0 - 0.5 * s);
    }
    std::exponential_distribution<double> gap_dist(1.0 / base_mean);

    double t = 0;
    for (;;) {
        double gap = 0;
        switch (cfg.mode) {
        case EmissionMode::poisson:
            gap = gap_dist(rng);
            break;
        case EmissionMode::clustered:
            gap = gap_dist(rng);
            if (uniform01(rng) < 0.5) {
                gap *= 1.0 - s;
            }
            break;
        case EmissionMode::regular:
            gap = period;
            if (s > 0) {
                gap += (uniform01(rng) - 0.5) * s * period;
            }
            break;
        }
        t += gap;
        if (!(t < cfg.duration)) {
            break;
        }
        out.push_back({t, std::numbers::pi * uniform01(rng)});
    }
    return out;
}

} // namespace eprsim
