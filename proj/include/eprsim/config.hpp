#pragma once

// Scenario files: flat "key = value" text with dotted section keys.
//
//   # comment
//   preset = aspect1981
//   emission.rate_per_ns = 0.002
//   detector_a.dead_time_ns = 16
//   detector_b.threshold = auto
//
// Resolution order: built-in defaults, then the preset, then the file, then
// command-line overrides.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "eprsim/error.hpp"
#include "eprsim/experiment_harness.hpp"

namespace eprsim {

inline std::string format_double(double v)
{
    if (std::isnan(v)) return "nan";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

namespace detail {

inline std::string trim(std::string_view s)
{
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

inline double parse_double(std::string_view key, const std::string& v)
{
    try {
        std::size_t pos = 0;
        double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw InvalidInput("'" + std::string(key) + "': expected a number, got '"
                           + v + "'");
    }
}

inline std::uint64_t parse_u64(std::string_view key, const std::string& v)
{
    try {
        std::size_t pos = 0;
        if (!v.empty() && v.front() == '-') throw std::invalid_argument(v);
        unsigned long long d = std::stoull(v, &pos, 0);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw InvalidInput("'" + std::string(key)
                           + "': expected an unsigned integer, got '" + v + "'");
    }
}

inline bool parse_bool(std::string_view key, const std::string& v)
{
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw InvalidInput("'" + std::string(key) + "': expected true or false");
}

struct Field {
    std::string key;
    std::function<void(ScenarioConfig&, const std::string&)> set;
    std::function<std::string(const ScenarioConfig&)> get;
};

template<class Get>
Field number(std::string key, Get get)
{
    return {key,
            [key, get](ScenarioConfig& c, const std::string& v) {
                get(c) = parse_double(key, v);
            },
            [get](const ScenarioConfig& c) {
                ScenarioConfig copy = c;
                return format_double(get(copy));
            }};
}

inline void add_detector_fields(std::vector<Field>& f, const std::string& p,
                                DetectorConfig ScenarioConfig::*det)
{
    f.push_back({p + ".threshold",
                 [det](ScenarioConfig& c, const std::string& v) {
                     (c.*det).threshold
                         = v == "auto" ? std::numeric_limits<double>::quiet_NaN()
                                       : parse_double("threshold", v);
                 },
                 [det](const ScenarioConfig& c) {
                     double t = (c.*det).threshold;
                     return std::isnan(t) ? std::string("auto") : format_double(t);
                 }});
    f.push_back(number(p + ".noise_sigma",
                       [det](ScenarioConfig& c) -> double& {
                           return (c.*det).noise_sigma;
                       }));
    f.push_back(number(p + ".time_step_ns", [det](ScenarioConfig& c) -> double& {
        return (c.*det).time_step;
    }));
    f.push_back(number(p + ".max_horizon_ns",
                       [det](ScenarioConfig& c) -> double& {
                           return (c.*det).max_horizon;
                       }));
    f.push_back(number(p + ".dead_time_ns", [det](ScenarioConfig& c) -> double& {
        return (c.*det).dead_time;
    }));
    f.push_back(number(p + ".jitter_pm_ns", [det](ScenarioConfig& c) -> double& {
        return (c.*det).jitter_pm_sigma;
    }));
    f.push_back(number(p + ".jitter_disc_ns",
                       [det](ScenarioConfig& c) -> double& {
                           return (c.*det).jitter_disc_sigma;
                       }));
    f.push_back(number(p + ".dark_rate_per_ns",
                       [det](ScenarioConfig& c) -> double& {
                           return (c.*det).dark_rate;
                       }));
    f.push_back(number(p + ".collection_efficiency",
                       [det](ScenarioConfig& c) -> double& {
                           return (c.*det).collection_efficiency;
                       }));
}

inline const std::vector<Field>& fields()
{
    static const std::vector<Field> table = [] {
        std::vector<Field> f;
        f.push_back({"seed",
                     [](ScenarioConfig& c, const std::string& v) {
                         c.emission.seed = parse_u64("seed", v);
                     },
                     [](const ScenarioConfig& c) {
                         return std::to_string(c.emission.seed);
                     }});
        f.push_back(number("emission.rate_per_ns",
                           [](ScenarioConfig& c) -> double& {
                               return c.emission.mean_rate;
                           }));
        f.push_back(number("emission.duration_ns",
                           [](ScenarioConfig& c) -> double& {
                               return c.emission.duration;
                           }));
        f.push_back({"emission.mode",
                     [](ScenarioConfig& c, const std::string& v) {
                         c.emission.mode = emission_mode_from_string(v);
                     },
                     [](const ScenarioConfig& c) {
                         return std::string(to_string(c.emission.mode));
                     }});
        f.push_back(number("emission.cluster_strength",
                           [](ScenarioConfig& c) -> double& {
                               return c.emission.cluster_strength;
                           }));
        for (auto [p, env] : {std::pair{std::string("envelope_a"),
                                        &ScenarioConfig::envelope_a},
                              std::pair{std::string("envelope_b"),
                                        &ScenarioConfig::envelope_b}}) {
            f.push_back(number(p + ".i0", [env](ScenarioConfig& c) -> double& {
                return (c.*env).i0;
            }));
            f.push_back(number(p + ".tau_ns", [env](ScenarioConfig& c) -> double& {
                return (c.*env).tau;
            }));
        }
        add_detector_fields(f, "detector_a", &ScenarioConfig::detector_a);
        add_detector_fields(f, "detector_b", &ScenarioConfig::detector_b);
        f.push_back(number("polariser_a.angle_rad",
                           [](ScenarioConfig& c) -> double& {
                               return c.polariser_a.angle;
                           }));
        f.push_back(number("polariser_a.transit_delay_ns",
                           [](ScenarioConfig& c) -> double& {
                               return c.polariser_a.transit_delay;
                           }));
        f.push_back(number("polariser_b.transit_delay_ns",
                           [](ScenarioConfig& c) -> double& {
                               return c.polariser_b.transit_delay;
                           }));
        f.push_back(number("window.start_ns", [](ScenarioConfig& c) -> double& {
            return c.window.start_offset;
        }));
        f.push_back(number("window.length_ns", [](ScenarioConfig& c) -> double& {
            return c.window.length;
        }));
        f.push_back({"window.auto_center",
                     [](ScenarioConfig& c, const std::string& v) {
                         c.auto_center = parse_bool("window.auto_center", v);
                     },
                     [](const ScenarioConfig& c) {
                         return std::string(c.auto_center ? "true" : "false");
                     }});
        f.push_back(number("delay_ns",
                           [](ScenarioConfig& c) -> double& { return c.delay; }));
        for (auto s : all_settings) {
            std::string key = "delay_ns." + std::string(label(s));
            f.push_back({key,
                         [s, key](ScenarioConfig& c, const std::string& v) {
                             c.setting_delay[index(s)] = parse_double(key, v);
                         },
                         [s](const ScenarioConfig& c) {
                             auto d = c.setting_delay[index(s)];
                             return d ? format_double(*d) : std::string("inherit");
                         }});
        }
        f.push_back(number("accidental_shift_ns",
                           [](ScenarioConfig& c) -> double& {
                               return c.accidental_shift;
                           }));
        f.push_back(number("spectrum.bin_width_ns",
                           [](ScenarioConfig& c) -> double& {
                               return c.spectrum.bin_width;
                           }));
        f.push_back(number("spectrum.range_start_ns",
                           [](ScenarioConfig& c) -> double& {
                               return c.spectrum.range_start;
                           }));
        f.push_back(number("spectrum.range_end_ns",
                           [](ScenarioConfig& c) -> double& {
                               return c.spectrum.range_end;
                           }));
        f.push_back(number("calibration.low", [](ScenarioConfig& c) -> double& {
            return c.calibration.low;
        }));
        f.push_back({"calibration.high",
                     [](ScenarioConfig& c, const std::string& v) {
                         c.calibration.high
                             = v == "auto"
                                   ? std::numeric_limits<double>::quiet_NaN()
                                   : parse_double("calibration.high", v);
                     },
                     [](const ScenarioConfig& c) {
                         return std::isnan(c.calibration.high)
                                    ? std::string("auto")
                                    : format_double(c.calibration.high);
                     }});
        f.push_back({"calibration.trials",
                     [](ScenarioConfig& c, const std::string& v) {
                         c.calibration.trials = parse_u64("calibration.trials", v);
                     },
                     [](const ScenarioConfig& c) {
                         return std::to_string(c.calibration.trials);
                     }});
        return f;
    }();
    return table;
}

} // namespace detail

using KeyValues = std::vector<std::pair<std::string, std::string>>;

inline void apply_setting(ScenarioConfig& cfg, std::string_view key,
                          const std::string& value)
{
    if (key == "preset") {
        cfg.preset = preset_from_string(value);
        return;
    }
    for (const auto& f : detail::fields()) {
        if (f.key == key) {
            f.set(cfg, value);
            return;
        }
    }
    throw InvalidInput("unknown configuration key '" + std::string(key) + "'");
}

/// Overrides a preset applies on top of the defaults.
inline KeyValues preset_values(Preset p)
{
    switch (p) {
    case Preset::aspect1981:
        return {{"window.start_ns", "-3"},
                {"window.length_ns", "20"},
                {"detector_a.dead_time_ns", "16"},
                {"detector_b.dead_time_ns", "16"},
                {"detector_a.jitter_pm_ns", "0.7"},
                {"detector_b.jitter_pm_ns", "0.7"},
                {"detector_a.jitter_disc_ns", "0.1"},
                {"detector_b.jitter_disc_ns", "0.1"},
                {"polariser_a.transit_delay_ns", "0"},
                {"polariser_b.transit_delay_ns", "0"}};
    case Preset::freedman1972:
        return {{"window.start_ns", "0"},
                {"window.length_ns", "8"},
                {"polariser_a.transit_delay_ns", "0"},
                {"polariser_b.transit_delay_ns", "1"}};
    }
    return {};
}

inline ScenarioConfig apply_preset(ScenarioConfig cfg, Preset p)
{
    for (const auto& [k, v] : preset_values(p)) {
        apply_setting(cfg, k, v);
    }
    cfg.preset = p;
    return cfg;
}

/// Parses "key = value" lines. Blank lines and '#' comments are skipped.
inline KeyValues parse_key_values(std::istream& in, std::string_view source)
{
    KeyValues out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) {
            line.erase(hash);
        }
        std::string t = detail::trim(line);
        if (t.empty()) continue;
        auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw InvalidInput(std::string(source) + ":" + std::to_string(lineno)
                               + ": expected 'key = value'");
        }
        std::string key = detail::trim(std::string_view(t).substr(0, eq));
        std::string value = detail::trim(std::string_view(t).substr(eq + 1));
        if (key.empty()) {
            throw InvalidInput(std::string(source) + ":" + std::to_string(lineno)
                               + ": empty key");
        }
        out.emplace_back(std::move(key), std::move(value));
    }
    return out;
}

/// "key=value" as given to --set.
inline std::pair<std::string, std::string> parse_override(std::string_view kv)
{
    auto eq = kv.find('=');
    if (eq == std::string_view::npos) {
        throw InvalidInput("override '" + std::string(kv)
                           + "' is not of the form key=value");
    }
    return {detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1))};
}

/// Defaults, then preset (explicit argument wins over the file's "preset"
/// key), then file entries, then overrides.
inline ScenarioConfig resolve_scenario(const KeyValues& file,
                                       std::optional<Preset> preset,
                                       const KeyValues& overrides)
{
    if (!preset) {
        for (const auto& [k, v] : file) {
            if (k == "preset") preset = preset_from_string(v);
        }
    }
    ScenarioConfig cfg;
    if (preset) {
        cfg = apply_preset(cfg, *preset);
    }
    for (const auto& [k, v] : file) {
        if (k != "preset") apply_setting(cfg, k, v);
    }
    for (const auto& [k, v] : overrides) {
        if (k == "preset") {
            throw InvalidInput("use --preset to select a preset");
        }
        apply_setting(cfg, k, v);
    }
    validate(cfg);
    return cfg;
}

inline KeyValues read_config_file(const std::string& path)
{
    std::ifstream in(path);
    if (!in) {
        throw InvalidInput("cannot open config file '" + path + "'");
    }
    return parse_key_values(in, path);
}

/// Canonical listing of every key; feeding it back reproduces `cfg`.
inline std::string to_config_text(const ScenarioConfig& cfg)
{
    std::ostringstream out;
    if (cfg.preset) {
        out << "# preset: " << to_string(*cfg.preset) << '\n';
    }
    for (const auto& f : detail::fields()) {
        std::string v = f.get(cfg);
        if (v == "inherit") continue;
        out << f.key << " = " << v << '\n';
    }
    return out.str();
}

} // namespace eprsim
