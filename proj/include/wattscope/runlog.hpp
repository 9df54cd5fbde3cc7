// Run log persistence: one JSON object per line, schema_version first,
// absent optionals omitted, full validation on read-back.
#pragma once

#include "wattscope/types.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace wattscope {

inline constexpr int runlog_schema_version = 1;

namespace detail {

using ordered_json = nlohmann::ordered_json;

inline ordered_json config_to_json(const experiment_config& c) {
    ordered_json j;
    j["workload_command"] = c.workload_command;
    j["domain_tag"] = c.domain_tag;
    j["work_unit"] = to_string(c.work_unit);
    j["work_unit_scale"] = c.work_unit_scale;
    j["hyperparameters"] = c.hyperparameters;
    j["active_processors"] = c.active_processors;
    if (c.planned_duration_s) j["planned_duration_s"] = *c.planned_duration_s;
    j["repetitions"] = c.repetitions;
    return j;
}

inline experiment_config config_from_json(const ordered_json& j) {
    experiment_config c;
    c.workload_command = j.at("workload_command").get<std::vector<std::string>>();
    c.domain_tag = j.at("domain_tag").get<std::string>();
    c.work_unit = work_unit_from_string(j.at("work_unit").get<std::string>());
    c.work_unit_scale = j.at("work_unit_scale").get<std::uint64_t>();
    c.hyperparameters = j.at("hyperparameters").get<std::map<std::string, std::string>>();
    c.active_processors = j.at("active_processors").get<std::vector<std::string>>();
    if (j.contains("planned_duration_s"))
        c.planned_duration_s = j.at("planned_duration_s").get<double>();
    c.repetitions = j.at("repetitions").get<int>();
    return c;
}

inline ordered_json env_to_json(const environment& e) {
    ordered_json j;
    j["host_label"] = e.host_label;
    j["co2_efficiency_kg_per_kwh"] = e.co2_efficiency_kg_per_kwh;
    auto& procs = j["processors"] = ordered_json::array();
    for (const auto& p : e.processors)
        procs.push_back({{"kind", to_string(p.kind)}, {"name", p.name}, {"tdp_watts", p.tdp_watts}});
    return j;
}

inline environment env_from_json(const ordered_json& j) {
    environment e;
    e.host_label = j.at("host_label").get<std::string>();
    e.co2_efficiency_kg_per_kwh = j.at("co2_efficiency_kg_per_kwh").get<double>();
    for (const auto& p : j.at("processors")) {
        e.processors.push_back({processor_kind_from_string(p.at("kind").get<std::string>()),
                                p.at("name").get<std::string>(),
                                p.at("tdp_watts").get<double>()});
    }
    return e;
}

}  // namespace detail

/// Record -> one JSON document. Samples and readings are compact arrays
/// ([t, source, watts] and [ms, kwh, confidence, provenance]) because they
/// dominate log size.
inline nlohmann::ordered_json serialize_run(const run_record& r) {
    using detail::ordered_json;
    ordered_json j;
    j["schema_version"] = runlog_schema_version;
    j["run_id"] = r.run_id;
    j["series_id"] = r.series_id;
    j["started_at_ms"] = r.started_at_ms;
    j["ended_at_ms"] = r.ended_at_ms;
    j["duration_s"] = r.duration_s;
    j["work_units_completed"] = r.work_units_completed;
    j["failed"] = r.failed;
    j["workload_exit_code"] = r.workload_exit_code;
    j["config"] = detail::config_to_json(r.config);
    j["env"] = detail::env_to_json(r.env);

    auto& traces = j["traces"] = ordered_json::array();
    for (const auto& t : r.traces) {
        ordered_json jt;
        jt["nominal_interval_s"] = t.nominal_interval_s;
        auto& samples = jt["samples"] = ordered_json::array();
        for (const auto& s : t.samples)
            samples.push_back(ordered_json::array({s.timestamp_s, s.source, s.watts}));
        traces.push_back(std::move(jt));
    }

    if (r.meter) {
        ordered_json jm;
        jm["resolution_kwh"] = r.meter->resolution_kwh;
        auto& readings = jm["readings"] = ordered_json::array();
        for (const auto& m : r.meter->readings)
            readings.push_back(ordered_json::array(
                {m.timestamp_ms, m.cumulative_kwh, m.confidence, to_string(m.provenance)}));
        j["meter"] = std::move(jm);
    }

    ordered_json je;
    je["static_ws"] = r.energies.static_ws;
    if (r.energies.dynamic_ws) je["dynamic_ws"] = *r.energies.dynamic_ws;
    if (r.energies.ground_truth_ws) je["ground_truth_ws"] = *r.energies.ground_truth_ws;
    if (r.energies.truth_uncertainty_ws)
        je["truth_uncertainty_ws"] = *r.energies.truth_uncertainty_ws;
    j["energies"] = std::move(je);

    if (r.dynamic_coverage) j["dynamic_coverage"] = *r.dynamic_coverage;
    if (!r.notes.empty()) j["notes"] = r.notes;
    return j;
}

inline run_record deserialize_run(const nlohmann::ordered_json& j) {
    if (!j.contains("schema_version"))
        throw parse_error("run log record lacks schema_version");
    if (j.at("schema_version").get<int>() != runlog_schema_version)
        throw parse_error("unsupported run log schema_version " +
                          j.at("schema_version").dump());
    run_record r;
    r.run_id = j.at("run_id").get<std::string>();
    r.series_id = j.at("series_id").get<std::string>();
    r.started_at_ms = j.at("started_at_ms").get<std::int64_t>();
    r.ended_at_ms = j.at("ended_at_ms").get<std::int64_t>();
    r.duration_s = j.at("duration_s").get<double>();
    r.work_units_completed = j.at("work_units_completed").get<std::uint64_t>();
    r.failed = j.at("failed").get<bool>();
    r.workload_exit_code = j.at("workload_exit_code").get<int>();
    r.config = detail::config_from_json(j.at("config"));
    r.env = detail::env_from_json(j.at("env"));

    for (const auto& jt : j.at("traces")) {
        power_trace t;
        t.nominal_interval_s = jt.at("nominal_interval_s").get<double>();
        for (const auto& s : jt.at("samples")) {
            if (!s.is_array() || s.size() != 3)
                throw parse_error("trace sample must be [timestamp_s, source, watts]");
            t.samples.push_back(
                {s.at(0).get<double>(), s.at(2).get<double>(), s.at(1).get<std::string>()});
        }
        r.traces.push_back(std::move(t));
    }

    if (j.contains("meter")) {
        meter_timeline m;
        m.resolution_kwh = j.at("meter").at("resolution_kwh").get<double>();
        for (const auto& jr : j.at("meter").at("readings")) {
            if (!jr.is_array() || jr.size() != 4)
                throw parse_error("meter reading must be [ms, kwh, confidence, provenance]");
            m.readings.push_back({jr.at(0).get<std::int64_t>(), jr.at(1).get<double>(),
                                  jr.at(2).get<double>(),
                                  provenance_from_string(jr.at(3).get<std::string>())});
        }
        r.meter = std::move(m);
    }

    const auto& je = j.at("energies");
    r.energies.static_ws = je.at("static_ws").get<double>();
    if (je.contains("dynamic_ws")) r.energies.dynamic_ws = je.at("dynamic_ws").get<double>();
    if (je.contains("ground_truth_ws"))
        r.energies.ground_truth_ws = je.at("ground_truth_ws").get<double>();
    if (je.contains("truth_uncertainty_ws"))
        r.energies.truth_uncertainty_ws = je.at("truth_uncertainty_ws").get<double>();
    if (j.contains("dynamic_coverage"))
        r.dynamic_coverage = j.at("dynamic_coverage").get<double>();
    if (j.contains("notes")) r.notes = j.at("notes").get<std::string>();
    return r;
}

/// Appends one record as a single line; a crash mid-run loses at most the
/// run being written, never earlier lines.
inline void append_record(const std::filesystem::path& path, const run_record& record) {
    std::ofstream out(path, std::ios::app);
    if (!out) throw error("cannot open run log for append: " + path.string());
    out << serialize_run(record).dump() << "\n";
    if (!out) throw error("short write to run log: " + path.string());
}

inline void write_log(const std::filesystem::path& path, const std::vector<run_record>& records) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw error("cannot open run log for write: " + path.string());
    for (const auto& r : records) out << serialize_run(r).dump() << "\n";
}

/// Reads a whole log. Malformed JSON, schema mismatches, and records that
/// fail validation all raise parse_error naming the offending line.
inline std::vector<run_record> read_log(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw error("cannot open run log: " + path.string());
    std::vector<run_record> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = path.string() + ":" + std::to_string(line_no);
        nlohmann::ordered_json j;
        try {
            j = nlohmann::ordered_json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw parse_error(where + ": invalid JSON: " + e.what());
        }
        run_record record;
        try {
            record = deserialize_run(j);
        } catch (const nlohmann::json::exception& e) {
            throw parse_error(where + ": " + e.what());
        } catch (const parse_error& e) {
            throw parse_error(where + ": " + e.what());
        }
        if (const auto problems = validate_run_record(record); !problems.empty()) {
            std::string joined;
            for (const auto& p : problems) joined += (joined.empty() ? "" : "; ") + p;
            throw parse_error(where + ": invalid record: " + joined);
        }
        records.push_back(std::move(record));
    }
    return records;
}

}  // namespace wattscope
