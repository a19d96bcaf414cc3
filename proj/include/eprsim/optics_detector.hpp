#pragma once

// Polariser transmission and threshold-crossing photodetection.
//
// A detector watches the transmitted envelope of one pair member on a fixed
// time grid t = 0, dt, 2 dt, ... up to a horizon. At every step one
// independent Gaussian noise sample is added to the intensity; the detector
// fires at the first step where signal + noise exceeds the threshold. Only
// the first crossing is reported, then jitter, transit delay and dead time
// are applied.
//
// Sampling. With p_k = P(noise > threshold - I_k) the first-crossing step K
// satisfies P(K > k) = prod_{j<=k} (1 - p_j) = exp(-H_k), with the
// cumulative hazard H_k = sum_{j<=k} -log(1 - p_j). Drawing a single
// E ~ Exp(1) and returning K = min{k : H_k >= E} gives exactly the law of
// the per-step Gaussian experiment, while allowing early exit: per-step
// hazards never increase along the grid (the envelope decays), so once
// H_k + (remaining steps) * h_k < E no crossing is possible.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "eprsim/error.hpp"
#include "eprsim/random.hpp"
#include "eprsim/source_model.hpp"

namespace eprsim {

//---------------------------------------------------------------------------//
// Polariser
//---------------------------------------------------------------------------//

struct PolariserState {
    bool present = false;
    double angle = 0;         // rad
    double transit_delay = 0; // ns, added to the signal only when present

    static PolariserState absent() noexcept { return {}; }
    static PolariserState at(double angle, double transit_delay = 0) noexcept
    {
        return {true, angle, transit_delay};
    }

    double delay() const noexcept { return present ? transit_delay : 0.0; }
};

/// Malus factor cos^2(lambda - angle); 1 without a polariser.
inline double transmission_factor(const PolariserState& pol,
                                  double lambda) noexcept
{
    if (!pol.present) {
        return 1.0;
    }
    double c = std::cos(lambda - pol.angle);
    return c * c;
}

inline double transmit(const PolariserState& pol, double lambda,
                       double intensity)
{
    if (!(intensity >= 0)) {
        throw InvalidInput("transmit: intensity must be nonnegative");
    }
    return intensity * transmission_factor(pol, lambda);
}

//---------------------------------------------------------------------------//
// Detection events
//---------------------------------------------------------------------------//

enum class Channel : std::uint8_t { A, B };

inline char to_char(Channel c) noexcept { return c == Channel::A ? 'A' : 'B'; }

struct DetectionEvent {
    Channel channel = Channel::A;
    double time = 0;          // ns, absolute
    std::int64_t origin = -1; // index of the emission, -1 for dark clicks
};

inline bool time_sorted(std::span<const DetectionEvent> events) noexcept
{
    return std::is_sorted(events.begin(), events.end(),
                          [](const DetectionEvent& l, const DetectionEvent& r) {
                              return l.time < r.time;
                          });
}

//---------------------------------------------------------------------------//
// Detector configuration
//---------------------------------------------------------------------------//

struct DetectorConfig {
    double threshold = 1.0;   // intensity units; NaN requests calibration
    double noise_sigma = 1.0; // intensity units per step
    double time_step = 0.1;   // ns
    double max_horizon = 15;  // ns after emission
    double dead_time = 16;    // ns
    double jitter_pm_sigma = 0.7;
    double jitter_disc_sigma = 0.1;
    double dark_rate = 0; // Poisson clicks per ns, independent of the source
    /// Probability that a pair member reaches the detector at all,
    /// independent of lambda.
    double collection_efficiency = 1.0;

    bool needs_calibration() const noexcept { return std::isnan(threshold); }
};

inline void validate(const DetectorConfig& cfg, bool allow_uncalibrated = false)
{
    if (cfg.needs_calibration()) {
        if (!allow_uncalibrated) {
            throw InvalidInput("detector threshold is not calibrated");
        }
    } else if (!(cfg.threshold > 0) || !std::isfinite(cfg.threshold)) {
        throw InvalidInput("detector threshold must be positive");
    }
    if (!(cfg.noise_sigma >= 0) || !std::isfinite(cfg.noise_sigma)) {
        throw InvalidInput("noise_sigma must be nonnegative");
    }
    if (!(cfg.time_step > 0)) {
        throw InvalidInput("time_step must be positive");
    }
    if (!(cfg.max_horizon >= cfg.time_step) || !std::isfinite(cfg.max_horizon)) {
        throw InvalidInput("max_horizon must be finite and >= time_step");
    }
    if (!(cfg.dead_time >= 0) || !std::isfinite(cfg.dead_time)) {
        throw InvalidInput("dead_time must be nonnegative");
    }
    if (!(cfg.jitter_pm_sigma >= 0) || !(cfg.jitter_disc_sigma >= 0)) {
        throw InvalidInput("jitter sigmas must be nonnegative");
    }
    if (!(cfg.dark_rate >= 0) || !std::isfinite(cfg.dark_rate)) {
        throw InvalidInput("dark_rate must be nonnegative");
    }
    if (!(cfg.collection_efficiency > 0 && cfg.collection_efficiency <= 1)) {
        throw InvalidInput("collection_efficiency must lie in (0, 1]");
    }
}

/// Envelope sampled on the detector grid: I(k * time_step), k = 0..n-1,
/// covering [0, max_horizon].
inline std::vector<double> sample_envelope(const EnvelopeParams& env,
                                           const DetectorConfig& cfg)
{
    validate(env);
    auto n = static_cast<std::size_t>(
                 std::floor(cfg.max_horizon / cfg.time_step + 1e-9))
             + 1;
    std::vector<double> out(n);
    for (std::size_t k = 0; k < n; ++k) {
        out[k] = envelope_intensity(env, static_cast<double>(k) * cfg.time_step);
    }
    return out;
}

//---------------------------------------------------------------------------//
// First-crossing sampler
//---------------------------------------------------------------------------//

/// Per-step crossing law for a fixed threshold and noise level.
class CrossingModel {
  public:
    CrossingModel(std::vector<double> intensities, double threshold,
                  double noise_sigma)
        : intensities_(std::move(intensities))
        , threshold_(threshold)
        , sigma_(noise_sigma)
    {
        if (intensities_.empty()) {
            throw InvalidInput("crossing model needs at least one step");
        }
        if (sigma_ > 0) {
            dark_hazard_ = hazard(0.0);
        }
    }

    std::size_t num_steps() const noexcept { return intensities_.size(); }
    double threshold() const noexcept { return threshold_; }

    /// Probability that the step with transmitted intensity `signal` crosses.
    double step_probability(double signal) const noexcept
    {
        if (sigma_ == 0) {
            return signal > threshold_ ? 1.0 : 0.0;
        }
        double z = (threshold_ - signal) / sigma_;
        return 0.5 * std::erfc(z / std::numbers::sqrt2);
    }

    /// -log(1 - p) for one step.
    double hazard(double signal) const noexcept
    {
        return -std::log1p(-step_probability(signal));
    }

    /// First step whose cumulative hazard reaches `budget` (an Exp(1) draw),
    /// for an envelope scaled by `factor` in [0, 1]. Ignores `budget` when
    /// the noise is zero.
    std::optional<std::size_t> first_step(double factor, double budget) const
    {
        std::size_t const n = intensities_.size();
        if (sigma_ == 0) {
            // Intensities never increase, so only the first step can cross.
            if (factor * intensities_.front() > threshold_) {
                return std::size_t{0};
            }
            return std::nullopt;
        }

        double total = 0;
        for (std::size_t k = 0; k < n; ++k) {
            double signal = factor * intensities_[k];
            if (signal <= tail_epsilon * sigma_) {
                // Indistinguishable from noise alone: constant hazard.
                if (!(dark_hazard_ > 0)) {
                    return std::nullopt;
                }
                double steps = std::ceil((budget - total) / dark_hazard_);
                if (steps < 1) {
                    steps = 1;
                }
                if (steps > static_cast<double>(n - k)) {
                    return std::nullopt;
                }
                return k + static_cast<std::size_t>(steps) - 1;
            }
            double h = hazard(signal);
            total += h;
            if (total >= budget) {
                return k;
            }
            if (total + static_cast<double>(n - 1 - k) * h < budget) {
                return std::nullopt;
            }
        }
        return std::nullopt;
    }

  private:
    static constexpr double tail_epsilon = 1e-12;

    std::vector<double> intensities_;
    double threshold_;
    double sigma_;
    double dark_hazard_ = 0;
};

//---------------------------------------------------------------------------//
// Detector
//---------------------------------------------------------------------------//

/// Last accepted event time of one channel.
struct ChannelState {
    std::optional<double> last_time;
};

class Detector {
  public:
    Detector(const EnvelopeParams& envelope, const DetectorConfig& cfg)
        : cfg_((validate(cfg), cfg))
        , model_(sample_envelope(envelope, cfg), cfg.threshold, cfg.noise_sigma)
    {
    }

    const DetectorConfig& config() const noexcept { return cfg_; }
    const CrossingModel& model() const noexcept { return model_; }

    /// Tries to detect one pair member. Returns nothing if the envelope never
    /// crosses the threshold within the horizon, or if the crossing falls
    /// within the dead time of the channel's previous event.
    std::optional<DetectionEvent> detect_first(const PairEmission& emission,
                                               const PolariserState& pol,
                                               ChannelState& state,
                                               Channel channel, Rng& rng) const
    {
        if (!(emission.time >= 0)) {
            throw InvalidInput("emission time must be nonnegative");
        }
        if (cfg_.collection_efficiency < 1
            && !(uniform01(rng) < cfg_.collection_efficiency)) {
            return std::nullopt;
        }
        double budget = 0;
        if (cfg_.noise_sigma > 0) {
            budget = std::exponential_distribution<double>(1.0)(rng);
        }
        auto step = model_.first_step(transmission_factor(pol, emission.lambda),
                                      budget);
        if (!step) {
            return std::nullopt;
        }
        double t = emission.time
                   + static_cast<double>(*step) * cfg_.time_step + pol.delay()
                   + jitter(rng);
        if (state.last_time && std::abs(t - *state.last_time) < cfg_.dead_time) {
            return std::nullopt;
        }
        state.last_time = t;
        return DetectionEvent{channel, t};
    }

    /// Full singles stream of one channel: signal detections tagged with
    /// their emission index, merged with dark clicks over [0, duration),
    /// time-sorted, and thinned so consecutive events are at least
    /// dead_time apart.
    std::vector<DetectionEvent>
    detect_stream(std::span<const PairEmission> emissions,
                  const PolariserState& pol, Channel channel, Rng& signal_rng,
                  Rng& dark_rng, double duration) const
    {
        std::vector<DetectionEvent> events;
        ChannelState state;
        for (std::size_t i = 0; i < emissions.size(); ++i) {
            if (auto ev = detect_first(emissions[i], pol, state, channel,
                                       signal_rng)) {
                ev->origin = static_cast<std::int64_t>(i);
                events.push_back(*ev);
            }
        }
        if (cfg_.dark_rate > 0) {
            std::exponential_distribution<double> gap(cfg_.dark_rate);
            for (double t = gap(dark_rng); t < duration; t += gap(dark_rng)) {
                events.push_back({channel, t, -1});
            }
        }
        std::sort(events.begin(), events.end(),
                  [](const DetectionEvent& l, const DetectionEvent& r) {
                      return l.time < r.time
                             || (l.time == r.time && l.origin < r.origin);
                  });
        return apply_dead_time(std::move(events), cfg_.dead_time);
    }

    /// Drops every event closer than dead_time to the previously kept one
    /// (and exact duplicates). Input must be time-sorted.
    static std::vector<DetectionEvent>
    apply_dead_time(std::vector<DetectionEvent> events, double dead_time)
    {
        std::size_t kept = 0;
        for (std::size_t i = 0; i < events.size(); ++i) {
            if (kept > 0) {
                double last = events[kept - 1].time;
                if (!(events[i].time > last)
                    || events[i].time - last < dead_time) {
                    continue;
                }
            }
            events[kept++] = events[i];
        }
        events.resize(kept);
        return events;
    }

  private:
    double jitter(Rng& rng) const
    {
        double j = 0;
        if (cfg_.jitter_pm_sigma > 0) {
            j += std::normal_distribution<double>(0, cfg_.jitter_pm_sigma)(rng);
        }
        if (cfg_.jitter_disc_sigma > 0) {
            j += std::normal_distribution<double>(0, cfg_.jitter_disc_sigma)(rng);
        }
        return j;
    }

    DetectorConfig cfg_;
    CrossingModel model_;
};

//---------------------------------------------------------------------------//
// Threshold calibration
//---------------------------------------------------------------------------//

struct CalibrationOptions {
    double low = 0;  // threshold bracket
    double high = std::numeric_limits<double>::quiet_NaN(); // NaN: i0 + 5 sigma
    std::size_t trials = 100000;
    double target = 0.5;     // singles(with polariser) / singles(without)
    double tolerance = 0.02; // accepted |ratio - target| / target
    int max_iterations = 60;
};

/// Detection probabilities with and without a polariser for a fixed sample of
/// (lambda, budget) pairs; reusing the sample across thresholds makes the
/// estimate a monotone step function of the threshold.
class CalibrationSample {
  public:
    CalibrationSample(const EnvelopeParams& envelope, const DetectorConfig& cfg,
                      std::size_t trials, Rng& rng)
        : intensities_(sample_envelope(envelope, cfg))
        , sigma_(cfg.noise_sigma)
    {
        factors_.resize(trials);
        budgets_.resize(trials);
        std::exponential_distribution<double> exp1(1.0);
        for (std::size_t i = 0; i < trials; ++i) {
            double c = std::cos(std::numbers::pi * uniform01(rng));
            factors_[i] = c * c;
            budgets_[i] = exp1(rng);
        }
    }

    /// (detections with polariser, detections without) at `threshold`.
    std::pair<std::size_t, std::size_t> counts(double threshold) const
    {
        CrossingModel model(intensities_, threshold, sigma_);
        std::size_t with = 0;
        std::size_t without = 0;
        for (std::size_t i = 0; i < factors_.size(); ++i) {
            if (model.first_step(factors_[i], budgets_[i])) ++with;
            if (model.first_step(1.0, budgets_[i])) ++without;
        }
        return {with, without};
    }

    std::size_t size() const noexcept { return factors_.size(); }

  private:
    std::vector<double> intensities_;
    double sigma_;
    std::vector<double> factors_;
    std::vector<double> budgets_;
};

/// Finds a threshold at which inserting a polariser (with lambda uniform)
/// halves the singles probability, by bisection on the predicate
/// "ratio(T) > target". The ratio must exceed the target at the low end of
/// the bracket and fall below it (or have no detections left) at the high
/// end.
inline double calibrate_threshold(const EnvelopeParams& envelope,
                                  const DetectorConfig& cfg, Rng& rng,
                                  const CalibrationOptions& opts = {})
{
    validate(cfg, /*allow_uncalibrated=*/true);
    validate(envelope);
    double lo = opts.low;
    double hi = std::isnan(opts.high) ? envelope.i0 + 5.0 * cfg.noise_sigma
                                      : opts.high;
    if (!(hi > lo) || !(lo >= 0)) {
        throw CalibrationFailure("calibration bracket is empty");
    }
    if (opts.trials == 0) {
        throw CalibrationFailure("calibration needs at least one trial");
    }

    CalibrationSample sample(envelope, cfg, opts.trials, rng);
    auto ratio = [&](double thr) -> std::optional<double> {
        auto [with, without] = sample.counts(thr);
        if (without == 0) {
            return std::nullopt;
        }
        return static_cast<double>(with) / static_cast<double>(without);
    };
    auto describe = [&](double thr) {
        auto [with, without] = sample.counts(thr);
        return "threshold " + std::to_string(thr) + ": "
               + std::to_string(with) + " / " + std::to_string(without)
               + " detections with / without polariser";
    };
    auto failure = [&](const std::string& why) {
        return CalibrationFailure(why + " in [" + std::to_string(lo) + ", "
                                  + std::to_string(hi) + "] ("
                                  + describe(lo) + "; " + describe(hi) + ")");
    };

    auto r_lo = ratio(lo);
    auto r_hi = ratio(hi);
    if (!r_lo) {
        throw failure("nothing detected anywhere");
    }
    if (!(*r_lo > opts.target)) {
        throw failure("polariser already removes too much signal");
    }
    // A handful of detections at the top of the bracket says little about
    // the ratio; only a significant excess counts as saturation.
    auto [with_hi, without_hi] = sample.counts(hi);
    double const n_hi = static_cast<double>(without_hi);
    double const excess = static_cast<double>(with_hi) - opts.target * n_hi;
    if (r_hi && excess > 0
        && excess > 3.0 * std::sqrt(opts.target * (1 - opts.target) * n_hi)) {
        throw failure("singles rate never halves (saturated)");
    }

    double const tol = opts.tolerance * opts.target;
    double best = lo;
    std::optional<double> best_ratio = r_lo;
    for (int it = 0; it < opts.max_iterations; ++it) {
        double mid = 0.5 * (lo + hi);
        auto r = ratio(mid);
        if (r && (!best_ratio || std::abs(*r - opts.target)
                                     < std::abs(*best_ratio - opts.target))) {
            best = mid;
            best_ratio = r;
        }
        if (r && std::abs(*r - opts.target) <= 0.1 * tol) {
            break;
        }
        if (r && *r > opts.target) {
            lo = mid;
        } else {
            hi = mid;
        }
    }

    if (!best_ratio || std::abs(*best_ratio - opts.target) > tol) {
        throw CalibrationFailure("calibration did not converge ("
                                 + describe(best) + ")");
    }
    return best;
}

} // namespace eprsim
