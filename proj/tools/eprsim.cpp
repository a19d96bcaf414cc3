// eprsim: command-line front end for the coincidence-experiment simulator
// and the Bell-statistic audit tools.
//
// Exit codes: 0 success, 1 invalid input, 2 degenerate data,
// 3 calibration failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "eprsim.hpp"

namespace fs = std::filesystem;
using namespace eprsim;

namespace {

struct ScenarioArgs {
    std::string config;
    std::string preset;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> sets;
    std::string window;
};

void add_scenario_options(CLI::App* cmd, ScenarioArgs& args)
{
    cmd->add_option("--config", args.config, "Scenario file (key = value)");
    cmd->add_option("--preset", args.preset, "aspect1981 or freedman1972");
    cmd->add_option("--seed", args.seed, "Master seed (default 0)");
    cmd->add_option("--set", args.sets, "Override, key=value (repeatable)");
    cmd->add_option("--window", args.window,
                    "Coincidence window start:length in ns, e.g. -3:20");
}

Window parse_window(const std::string& spec)
{
    auto colon = spec.find(':');
    if (colon == std::string::npos) {
        throw InvalidInput("--window expects start:length, got '" + spec + "'");
    }
    Window w{detail::parse_double("--window", spec.substr(0, colon)),
             detail::parse_double("--window", spec.substr(colon + 1))};
    validate(w);
    return w;
}

std::vector<double> parse_list(const std::string& what, const std::string& s)
{
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        out.push_back(detail::parse_double(what, detail::trim(item)));
    }
    if (out.empty()) {
        throw InvalidInput(what + " must list at least one value");
    }
    return out;
}

ScenarioConfig load_scenario(const ScenarioArgs& args)
{
    KeyValues file;
    if (!args.config.empty()) {
        file = read_config_file(args.config);
    }
    std::optional<Preset> preset;
    if (!args.preset.empty()) {
        preset = preset_from_string(args.preset);
    }
    KeyValues overrides;
    for (const auto& kv : args.sets) {
        overrides.push_back(parse_override(kv));
    }
    if (args.seed) {
        overrides.emplace_back("seed", std::to_string(*args.seed));
    }
    if (!args.window.empty()) {
        Window w = parse_window(args.window);
        overrides.emplace_back("window.start_ns", format_double(w.start_offset));
        overrides.emplace_back("window.length_ns", format_double(w.length));
    }
    return resolve_scenario(file, preset, overrides);
}

void write_file(const fs::path& path, const std::string& content)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw InvalidInput("cannot write '" + path.string() + "'");
    }
    out << content;
}

template<class F>
std::string to_string_with(F&& f)
{
    std::ostringstream out;
    f(out);
    return out.str();
}

void print_warnings(const std::vector<std::string>& warnings)
{
    for (const auto& w : warnings) {
        std::cerr << "warning: " << w << '\n';
    }
}

//---------------------------------------------------------------------------//

int cmd_stats(const std::string& counts_path, const std::string& acc_path,
              const std::string& csv_path)
{
    auto raw = read_count_quads(counts_path);
    std::vector<CountQuad> acc;
    bool const with_acc = !acc_path.empty();
    if (with_acc) {
        acc = read_count_quads(acc_path);
        if (acc.size() != raw.size() && acc.size() != 1) {
            throw InvalidInput("accidentals file must have one row or as many "
                               "rows as the counts file");
        }
    }

    std::vector<SubtractionAudit> audits;
    bool degenerate = false;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        AccidentalQuad a;
        if (with_acc) {
            const auto& q = acc[acc.size() == 1 ? 0 : i];
            a = {q.x, q.y, q.z, q.Z};
        }
        audits.push_back(subtraction_audit(raw[i], a));
        degenerate = degenerate || !audits.back().raw_result
                     || (with_acc && !audits.back().corrected_result);
    }

    for (std::size_t i = 0; i < audits.size(); ++i) {
        if (audits.size() > 1) std::cout << "dataset " << i << '\n';
        std::cout << format_audit(audits[i], with_acc) << '\n';
    }
    std::string csv = to_string_with(
        [&](std::ostream& o) { write_audit_csv(o, audits, with_acc); });
    if (csv_path.empty()) {
        std::cout << csv;
    } else {
        write_file(csv_path, csv);
    }
    return degenerate ? 2 : 0;
}

int cmd_run(const ScenarioArgs& args, const std::string& out_dir,
            bool dump_streams)
{
    ScenarioConfig cfg = calibrated(load_scenario(args));
    auto streams = simulate_scan(cfg);
    RunOutput r = analyze_scan(cfg, streams, cfg.window);

    fs::path dir(out_dir);
    fs::create_directories(dir);
    write_file(dir / "config.txt", to_config_text(r.config));
    write_file(dir / "quads.csv",
               to_string_with([&](std::ostream& o) { write_quads_csv(o, r); }));
    write_file(dir / "statistics.csv", to_string_with([&](std::ostream& o) {
                   write_statistics_csv(o, r);
               }));
    write_file(dir / "settings.csv", to_string_with([&](std::ostream& o) {
                   write_settings_csv(o, r);
               }));
    for (auto s : all_settings) {
        std::string stem = std::to_string(index(s) + 1) + "_"
                           + std::string(label(s)) + ".csv";
        write_file(dir / ("spectrum_" + stem), to_string_with([&](std::ostream& o) {
                       write_spectrum_csv(o, r.settings[index(s)].spectrum);
                   }));
        if (dump_streams) {
            const auto& st = streams[index(s)];
            write_file(dir / ("emissions_" + stem),
                       to_string_with([&](std::ostream& o) {
                           write_emissions_csv(o, st.emissions);
                       }));
            write_file(dir / ("detections_" + stem),
                       to_string_with([&](std::ostream& o) {
                           write_detections_csv(o, st.a, st.b);
                       }));
        }
    }

    SubtractionAudit summary;
    summary.raw = r.raw;
    summary.accidentals = r.accidentals;
    summary.corrected = r.corrected;
    summary.raw_result = r.raw_result;
    summary.corrected_result = r.corrected_result;
    summary.raw_error = summary.corrected_error = "degenerate counts";
    std::cout << "thresholds: A " << csv_number(cfg.detector_a.threshold)
              << ", B " << csv_number(cfg.detector_b.threshold) << '\n'
              << format_audit(summary, true) << "outputs written to "
              << dir.string() << '\n';
    print_warnings(r.warnings);
    return r.degenerate() ? 2 : 0;
}

int cmd_spectrum(const ScenarioArgs& args, const std::string& setting_name,
                 const std::string& out_path)
{
    Setting s = setting_from_string(setting_name);
    ScenarioConfig cfg = calibrated(load_scenario(args));
    auto [pa, pb] = polarisers_for(cfg, s);
    auto streams = simulate_setting(cfg, pa, pb, index(s));
    auto res = analyze_setting(cfg, label(s), cfg.delay_for(s), streams,
                               cfg.window);
    std::string csv = to_string_with(
        [&](std::ostream& o) { write_spectrum_csv(o, res.spectrum); });
    if (out_path.empty()) {
        std::cout << csv;
    } else {
        write_file(out_path, csv);
    }
    return 0;
}

int cmd_scan(const ScenarioArgs& args, const std::string& starts_s,
             const std::string& lengths_s, const std::string& out_path)
{
    auto starts = parse_list("--window-starts", starts_s);
    auto lengths = parse_list("--window-lengths", lengths_s);
    ScenarioConfig cfg = load_scenario(args);
    auto grid = window_sensitivity_scan(cfg, starts, lengths);
    std::string csv
        = to_string_with([&](std::ostream& o) { write_scan_csv(o, grid); });
    if (out_path.empty()) {
        std::cout << csv;
    } else {
        write_file(out_path, csv);
    }
    return 0;
}

int cmd_diag(const ScenarioArgs& args, std::size_t buckets)
{
    ScenarioConfig cfg = calibrated(load_scenario(args));
    auto fact = factorability_diagnostic(cfg, buckets);
    std::cout << "# factorability, setting " << label(fact.setting)
              << ": max |p_c - p_a p_b| = " << csv_number(fact.max_abs_deviation())
              << " (" << csv_number(fact.max_significance()) << " sigma)\n";
    write_factorability_csv(std::cout, fact);
    print_warnings(fact.warnings);
    for (auto ch : {Channel::A, Channel::B}) {
        auto enh = enhancement_diagnostic(cfg, buckets, ch);
        std::cout << "\n# enhancement, channel " << to_char(ch)
                  << ", polariser at " << csv_number(enh.angle)
                  << " rad: max excess = " << csv_number(enh.max_significance())
                  << " sigma\n";
        write_enhancement_csv(std::cout, enh);
        print_warnings(enh.warnings);
    }
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Single-channel EPR coincidence simulator and Bell-test "
                 "audit toolkit"};
    app.require_subcommand(1);

    std::string counts_path, acc_path, csv_path;
    auto* stats = app.add_subcommand(
        "stats", "Bell statistics of count quads, with optional subtraction");
    stats->add_option("counts", counts_path, "CSV with header x,y,z,Z")
        ->required();
    stats->add_option("--accidentals", acc_path, "Accidentals CSV, same shape");
    stats->add_option("--csv", csv_path, "Write the CSV report here");

    ScenarioArgs run_args;
    std::string out_dir = ".";
    bool dump = false;
    auto* run = app.add_subcommand("run", "Simulate the four-setting scan");
    add_scenario_options(run, run_args);
    run->add_option("--out", out_dir, "Output directory");
    run->add_flag("--dump-streams", dump,
                  "Also write emission and detection streams");

    ScenarioArgs spec_args;
    std::string setting = "Z", spec_out;
    auto* spectrum = app.add_subcommand("spectrum",
                                        "Time spectrum of one setting");
    add_scenario_options(spectrum, spec_args);
    spectrum->add_option("--setting", setting, "x, y, z or Z")->required();
    spectrum->add_option("--out", spec_out, "Output file (default stdout)");

    ScenarioArgs scan_args;
    std::string starts, lengths, scan_out;
    auto* scan = app.add_subcommand("scan", "Window start/length sensitivity");
    add_scenario_options(scan, scan_args);
    scan->add_option("--window-starts", starts, "Comma-separated ns")->required();
    scan->add_option("--window-lengths", lengths, "Comma-separated ns")
        ->required();
    scan->add_option("--out", scan_out, "Output file (default stdout)");

    ScenarioArgs diag_args;
    std::size_t buckets = 16;
    auto* diag = app.add_subcommand("diag",
                                    "Factorability and no-enhancement tables");
    add_scenario_options(diag, diag_args);
    diag->add_option("--buckets", buckets, "Number of lambda slices")
        ->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*stats) return cmd_stats(counts_path, acc_path, csv_path);
        if (*run) return cmd_run(run_args, out_dir, dump);
        if (*spectrum) return cmd_spectrum(spec_args, setting, spec_out);
        if (*scan) return cmd_scan(scan_args, starts, lengths, scan_out);
        if (*diag) return cmd_diag(diag_args, buckets);
    } catch (const eprsim::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
