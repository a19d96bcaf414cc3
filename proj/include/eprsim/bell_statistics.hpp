#pragma once

// Closed-form single-channel Bell-test statistics for rotationally invariant
// experiments, plus the conventional accidental-coincidence subtraction.
//
// Notation for the four coincidence observables:
//   x = R(pi/8), y = R(3pi/8), z = R(a, inf), Z = R(inf, inf)
// where R is a coincidence count or rate and "inf" means the polariser is
// removed.

#include <cmath>
#include <string>

#include "eprsim/error.hpp"

namespace eprsim {

/// The four coincidence observables. Counts or rates; fractional values are
/// allowed. Nonnegativity is expected but not enforced so corrupted or
/// over-subtracted data stays computable.
struct CountQuad {
    double x = 0;
    double y = 0;
    double z = 0;
    double Z = 0;

    friend bool operator==(const CountQuad&, const CountQuad&) = default;
};

/// Accidental coincidences for the same four observables.
struct AccidentalQuad {
    double x = 0;
    double y = 0;
    double z = 0;
    double Z = 0;

    friend bool operator==(const AccidentalQuad&,
                           const AccidentalQuad&) = default;
};

/// Result of raw - accidentals. Negative components are kept and flagged.
struct CorrectedQuad {
    CountQuad counts;
    bool has_negative = false;

    /// True when no Bell statistic can be formed (x + y <= 0 or Z <= 0).
    bool degenerate() const noexcept
    {
        return !(counts.x + counts.y > 0) || !(counts.Z > 0);
    }
};

struct BellResult {
    static constexpr double limit_std = 2.0;
    static constexpr double limit_chsh = 0.0;
    static constexpr double limit_freedman = 0.25;

    double s_std = 0;
    double s_chsh = 0;
    double s_freedman = 0;
    bool violated_std = false;
    bool violated_chsh = false;
    bool violated_freedman = false;

    bool any_violated() const noexcept
    {
        return violated_std || violated_chsh || violated_freedman;
    }
};

inline double s_std(const CountQuad& q)
{
    double denom = q.x + q.y;
    if (denom == 0) {
        throw DegenerateData("S_Std undefined: x + y = 0");
    }
    return 4.0 * (q.x - q.y) / denom;
}

inline double s_chsh(const CountQuad& q)
{
    if (q.Z == 0) {
        throw DegenerateData("S_C undefined: Z = 0");
    }
    return (3.0 * q.x - q.y - 2.0 * q.z) / q.Z;
}

inline double s_freedman(const CountQuad& q)
{
    if (q.Z == 0) {
        throw DegenerateData("S_F undefined: Z = 0");
    }
    return (q.x - q.y) / q.Z;
}

inline CorrectedQuad subtract_accidentals(const CountQuad& q,
                                          const AccidentalQuad& a) noexcept
{
    CorrectedQuad out;
    out.counts = {q.x - a.x, q.y - a.y, q.z - a.z, q.Z - a.Z};
    out.has_negative = out.counts.x < 0 || out.counts.y < 0
                       || out.counts.z < 0 || out.counts.Z < 0;
    return out;
}

/// Idealised accidentals when the detectors halve their singles rate with a
/// polariser inserted: (A, A, 2A, 4A).
inline AccidentalQuad accidental_quad(double unit)
{
    if (!(unit >= 0) || !std::isfinite(unit)) {
        throw InvalidInput("accidental unit must be a finite nonnegative "
                           "number");
    }
    return {unit, unit, 2.0 * unit, 4.0 * unit};
}

/// Least-squares fit of the unit A to a measured accidental quad under the
/// (A, A, 2A, 4A) pattern.
inline double fit_accidental_unit(const AccidentalQuad& a) noexcept
{
    // minimise sum (a_i - k_i A)^2 with k = (1, 1, 2, 4): A = sum k a / sum k^2
    return (a.x + a.y + 2.0 * a.z + 4.0 * a.Z) / 22.0;
}

inline BellResult evaluate(const CountQuad& q)
{
    BellResult r;
    r.s_std = s_std(q);
    r.s_chsh = s_chsh(q);
    r.s_freedman = s_freedman(q);
    r.violated_std = r.s_std > BellResult::limit_std;
    r.violated_chsh = r.s_chsh > BellResult::limit_chsh;
    r.violated_freedman = r.s_freedman > BellResult::limit_freedman;
    return r;
}

} // namespace eprsim
