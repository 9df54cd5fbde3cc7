// Constant-power (TDP-based) energy estimation and carbon conversion.
#pragma once

#include "wattscope/types.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

namespace wattscope {

/// Grid carbon intensity for Germany, the default conversion factor.
inline constexpr double default_co2_efficiency_kg_per_kwh = 0.38;

struct static_estimate_result {
    double energy_ws = 0.0;      // assumed_power_w * duration_s
    double assumed_power_w = 0.0;
    double duration_s = 0.0;
};

/// Energy estimate from hardware constants alone: the sum of the TDPs of the
/// processors declared active, held constant over the run duration. Nothing
/// is added implicitly; a GPU run includes the CPU only if the config says so.
inline static_estimate_result static_estimate(const experiment_config& config,
                                              const environment& env, double duration_s) {
    if (!(duration_s > 0)) throw error("static_estimate: duration_s must be > 0");
    if (config.active_processors.empty())
        throw error("static_estimate: no active processors declared");
    double power = 0.0;
    for (const auto& name : config.active_processors) {
        const processor_ref* proc = env.find_processor(name);
        if (proc == nullptr) throw error("static_estimate: unknown processor '" + name + "'");
        power += proc->tdp_watts;
    }
    return {power * duration_s, power, duration_s};
}

struct carbon_figure {
    double kg_co2_equiv = 0.0;
    double efficiency_kg_per_kwh = 0.0;
    double energy_kwh = 0.0;
};

/// kg CO2-equivalents for a given energy at a given grid efficiency.
inline carbon_figure co2_equivalents(double energy_ws, double efficiency_kg_per_kwh) {
    if (energy_ws < 0) throw error("co2_equivalents: energy must be >= 0");
    if (efficiency_kg_per_kwh < 0) throw error("co2_equivalents: efficiency must be >= 0");
    const double kwh = ws_to_kwh(energy_ws);
    return {kwh * efficiency_kg_per_kwh, efficiency_kg_per_kwh, kwh};
}

/// Editable processor-name -> TDP lookup. Two whitespace-separated columns per
/// line, '#' comments. Unknown hardware stays unknown: lookups return nullopt
/// and callers must demand an explicit user-supplied TDP instead of guessing.
class tdp_table {
public:
    tdp_table() = default;

    static tdp_table parse_string(const std::string& text, const std::string& origin) {
        tdp_table table;
        std::istringstream in(text);
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (const auto hash = line.find('#'); hash != std::string::npos)
                line.erase(hash);
            std::istringstream fields(line);
            std::string name, watts_text, extra;
            if (!(fields >> name)) continue;  // blank
            if (!(fields >> watts_text) || (fields >> extra))
                throw parse_error(origin + ":" + std::to_string(line_no) +
                                  ": expected '<name> <watts>'");
            double watts = 0;
            const auto [ptr, ec] =
                std::from_chars(watts_text.data(), watts_text.data() + watts_text.size(), watts);
            if (ec != std::errc() || ptr != watts_text.data() + watts_text.size() || !(watts > 0))
                throw parse_error(origin + ":" + std::to_string(line_no) +
                                  ": watts must be a positive number, got '" + watts_text + "'");
            table.entries_[name] = watts;
        }
        return table;
    }

    static tdp_table load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw error("cannot open TDP table: " + path.string());
        std::ostringstream buf;
        buf << in.rdbuf();
        return parse_string(buf.str(), path.string());
    }

    std::optional<double> lookup(const std::string& processor_name) const {
        const auto it = entries_.find(processor_name);
        if (it == entries_.end()) return std::nullopt;
        return it->second;
    }

    std::size_t size() const { return entries_.size(); }
    const std::map<std::string, double>& entries() const { return entries_; }

private:
    std::map<std::string, double> entries_;
};

}  // namespace wattscope
