#pragma once

// CSV readers and writers for count quads, statistics, spectra, event
// streams, window scans and diagnostics, plus the tabular text report
// of a subtraction audit.

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "eprsim/bell_statistics.hpp"
#include "eprsim/config.hpp"
#include "eprsim/error.hpp"
#include "eprsim/experiment_harness.hpp"

namespace eprsim {

/// Fixed-format number for CSV output; byte-stable for a given value.
inline std::string csv_number(double v)
{
    if (std::isnan(v)) return "nan";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

inline const char* csv_bool(bool b) noexcept { return b ? "true" : "false"; }

//---------------------------------------------------------------------------//
// Count quads
//---------------------------------------------------------------------------//

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line)
{
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) {
        out.push_back(trim(cell));
    }
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

} // namespace detail

/// Reads "x,y,z,Z" followed by one row per dataset.
inline std::vector<CountQuad> read_count_quads(std::istream& in,
                                               std::string_view source)
{
    std::string line;
    std::vector<CountQuad> out;
    bool header = false;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = detail::trim(line);
        if (t.empty()) continue;
        auto cells = detail::split_csv_line(t);
        if (!header) {
            if (cells != std::vector<std::string>{"x", "y", "z", "Z"}) {
                throw InvalidInput(std::string(source)
                                   + ": expected header 'x,y,z,Z'");
            }
            header = true;
            continue;
        }
        if (cells.size() != 4) {
            throw InvalidInput(std::string(source) + ":" + std::to_string(lineno)
                               + ": expected 4 columns");
        }
        std::array<double, 4> v{};
        for (std::size_t i = 0; i < 4; ++i) {
            v[i] = detail::parse_double(std::string(source) + ":"
                                            + std::to_string(lineno),
                                        cells[i]);
            if (!(v[i] >= 0) || !std::isfinite(v[i])) {
                throw InvalidInput(std::string(source) + ":"
                                   + std::to_string(lineno)
                                   + ": counts must be finite and nonnegative");
            }
        }
        out.push_back({v[0], v[1], v[2], v[3]});
    }
    if (!header) {
        throw InvalidInput(std::string(source) + ": empty file");
    }
    if (out.empty()) {
        throw InvalidInput(std::string(source) + ": no data rows");
    }
    return out;
}

inline std::vector<CountQuad> read_count_quads(const std::string& path)
{
    std::ifstream in(path);
    if (!in) {
        throw InvalidInput("cannot open '" + path + "'");
    }
    return read_count_quads(in, path);
}

inline void write_quad_row(std::ostream& out, std::string_view row, double x,
                           double y, double z, double Z)
{
    out << row << ',' << csv_number(x) << ',' << csv_number(y) << ','
        << csv_number(z) << ',' << csv_number(Z) << '\n';
}

inline constexpr const char* statistics_header
    = "s_std,s_chsh,s_freedman,violated_std,violated_chsh,violated_freedman";

/// Statistic columns for one evaluated quad; "nan" and "false" when the
/// data were degenerate.
inline std::string statistics_cells(const std::optional<BellResult>& r)
{
    if (!r) {
        return "nan,nan,nan,false,false,false";
    }
    return csv_number(r->s_std) + ',' + csv_number(r->s_chsh) + ','
           + csv_number(r->s_freedman) + ',' + csv_bool(r->violated_std) + ','
           + csv_bool(r->violated_chsh) + ',' + csv_bool(r->violated_freedman);
}

//---------------------------------------------------------------------------//
// Subtraction audit report
//---------------------------------------------------------------------------//

inline void write_audit_csv(std::ostream& out,
                            std::span<const SubtractionAudit> audits,
                            bool with_accidentals)
{
    out << "dataset,row," << statistics_header << '\n';
    for (std::size_t i = 0; i < audits.size(); ++i) {
        out << i << ",raw," << statistics_cells(audits[i].raw_result) << '\n';
        if (with_accidentals) {
            out << i << ",corrected,"
                << statistics_cells(audits[i].corrected_result) << '\n';
        }
    }
}

/// Three-row table (raw, accidentals, corrected) with statistics rounded to
/// three decimals.
inline std::string format_audit(const SubtractionAudit& a, bool with_accidentals)
{
    std::ostringstream out;
    char buf[256];
    auto stats = [&](const std::optional<BellResult>& r,
                     const std::string& err) -> std::string {
        if (!r) return "  degenerate: " + err;
        std::snprintf(buf, sizeof buf, " %8.3f %8.3f %8.3f", r->s_std, r->s_chsh,
                      r->s_freedman);
        return buf;
    };
    auto quad = [&](const char* name, double x, double y, double z, double Z) {
        std::snprintf(buf, sizeof buf, "%-18s %9.1f %9.1f %9.1f %9.1f", name, x,
                      y, z, Z);
        return std::string(buf);
    };
    std::snprintf(buf, sizeof buf, "%-18s %9s %9s %9s %9s %8s %8s %8s\n", "",
                  "x", "y", "z", "Z", "S_Std", "S_C", "S_F");
    out << buf;
    out << quad("Raw coincidences", a.raw.x, a.raw.y, a.raw.z, a.raw.Z)
        << stats(a.raw_result, a.raw_error) << '\n';
    if (with_accidentals) {
        out << quad("Accidentals", a.accidentals.x, a.accidentals.y,
                    a.accidentals.z, a.accidentals.Z)
            << '\n';
        const auto& c = a.corrected.counts;
        out << quad("Corrected", c.x, c.y, c.z, c.Z)
            << stats(a.corrected_result, a.corrected_error) << '\n';
        if (a.corrected.has_negative) {
            out << "warning: subtraction produced negative counts\n";
        }
    }
    std::snprintf(buf, sizeof buf,
                  "limits: S_Std <= %.0f, S_C <= %.0f, S_F <= %.2f\n",
                  BellResult::limit_std, BellResult::limit_chsh,
                  BellResult::limit_freedman);
    out << buf;
    auto violations = [](const BellResult& r) {
        std::string v;
        if (r.violated_std) v += " S_Std";
        if (r.violated_chsh) v += " S_C";
        if (r.violated_freedman) v += " S_F";
        return v.empty() ? std::string(" none") : v;
    };
    if (a.raw_result) out << "violated (raw):" << violations(*a.raw_result) << '\n';
    if (with_accidentals && a.corrected_result) {
        out << "violated (corrected):" << violations(*a.corrected_result) << '\n';
    }
    return out.str();
}

//---------------------------------------------------------------------------//
// Simulation outputs
//---------------------------------------------------------------------------//

inline void write_quads_csv(std::ostream& out, const RunOutput& r)
{
    out << "row,x,y,z,Z\n";
    write_quad_row(out, "raw", r.raw.x, r.raw.y, r.raw.z, r.raw.Z);
    write_quad_row(out, "accidentals", r.accidentals.x, r.accidentals.y,
                   r.accidentals.z, r.accidentals.Z);
    const auto& c = r.corrected.counts;
    write_quad_row(out, "corrected", c.x, c.y, c.z, c.Z);
}

inline void write_statistics_csv(std::ostream& out, const RunOutput& r)
{
    out << "row," << statistics_header << '\n';
    out << "raw," << statistics_cells(r.raw_result) << '\n';
    out << "corrected," << statistics_cells(r.corrected_result) << '\n';
}

inline void write_settings_csv(std::ostream& out, const RunOutput& r)
{
    out << "setting,singles_a,singles_b,coincidences,accidentals,delay_ns\n";
    for (const auto& s : r.settings) {
        out << s.label << ',' << s.singles_a << ',' << s.singles_b << ','
            << s.coincidences << ',' << s.accidentals << ','
            << csv_number(s.effective_delay) << '\n';
    }
}

inline void write_spectrum_csv(std::ostream& out, const TimeSpectrum& s)
{
    out << "bin_start_ns,count\n";
    for (std::size_t i = 0; i < s.counts.size(); ++i) {
        out << csv_number(s.bin_start(i)) << ',' << s.counts[i] << '\n';
    }
}

inline void write_emissions_csv(std::ostream& out,
                                std::span<const PairEmission> emissions)
{
    out << "time_ns,lambda_rad\n";
    char buf[64];
    for (const auto& e : emissions) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", e.time, e.lambda);
        out << buf;
    }
}

/// Both channels merged in time order.
inline void write_detections_csv(std::ostream& out,
                                 std::span<const DetectionEvent> a,
                                 std::span<const DetectionEvent> b)
{
    out << "channel,time_ns\n";
    char buf[64];
    std::size_t i = 0, j = 0;
    while (i < a.size() || j < b.size()) {
        bool take_a = j == b.size() || (i < a.size() && a[i].time <= b[j].time);
        const auto& e = take_a ? a[i++] : b[j++];
        std::snprintf(buf, sizeof buf, "%c,%.17g\n", to_char(e.channel), e.time);
        out << buf;
    }
}

inline void write_scan_csv(std::ostream& out, std::span<const ScanCell> grid)
{
    out << "start_ns,length_ns,x,y,z,Z,acc_x,acc_y,acc_z,acc_Z,"
           "raw_s_std,raw_s_chsh,raw_s_freedman,"
           "corrected_s_std,corrected_s_chsh,corrected_s_freedman\n";
    auto s = [](const std::optional<BellResult>& r) {
        if (!r) return std::string("nan,nan,nan");
        return csv_number(r->s_std) + ',' + csv_number(r->s_chsh) + ','
               + csv_number(r->s_freedman);
    };
    for (const auto& c : grid) {
        const auto& o = c.output;
        out << csv_number(c.window.start_offset) << ','
            << csv_number(c.window.length) << ',' << csv_number(o.raw.x) << ','
            << csv_number(o.raw.y) << ',' << csv_number(o.raw.z) << ','
            << csv_number(o.raw.Z) << ',' << csv_number(o.accidentals.x) << ','
            << csv_number(o.accidentals.y) << ',' << csv_number(o.accidentals.z)
            << ',' << csv_number(o.accidentals.Z) << ',' << s(o.raw_result)
            << ',' << s(o.corrected_result) << '\n';
    }
}

inline void write_factorability_csv(std::ostream& out,
                                    const FactorabilityTable& t)
{
    out << "lambda_lo_rad,lambda_hi_rad,emissions,p_a,p_b,p_c,p_a_times_p_b,"
           "deviation,sigma\n";
    for (const auto& r : t.rows) {
        out << csv_number(r.bucket.lo) << ',' << csv_number(r.bucket.hi) << ','
            << r.emissions << ',' << csv_number(r.p_a) << ','
            << csv_number(r.p_b) << ',' << csv_number(r.p_c) << ','
            << csv_number(r.product) << ',' << csv_number(r.deviation()) << ','
            << csv_number(r.sigma) << '\n';
    }
}

inline void write_enhancement_csv(std::ostream& out, const EnhancementTable& t)
{
    out << "lambda_lo_rad,lambda_hi_rad,emissions,p_polariser,p_absent,excess,"
           "sigma\n";
    for (const auto& r : t.rows) {
        out << csv_number(r.bucket.lo) << ',' << csv_number(r.bucket.hi) << ','
            << r.emissions << ',' << csv_number(r.p_polariser) << ','
            << csv_number(r.p_absent) << ',' << csv_number(r.excess()) << ','
            << csv_number(r.sigma) << '\n';
    }
}

} // namespace eprsim
