// Core domain types shared by every wattscope module.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace wattscope {

/// Canonical internal energy unit is the watt-second; kWh appears only at
/// external boundaries.
inline constexpr double ws_per_kwh = 3'600'000.0;

inline double kwh_to_ws(double kwh) { return kwh * ws_per_kwh; }
inline double ws_to_kwh(double ws) { return ws / ws_per_kwh; }

/// Least-significant digit of a typical consumer energy meter display.
inline constexpr double default_meter_resolution_kwh = 0.01;

class error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when an input document (config, log line, trace, frame, ...) cannot
/// be parsed; the message names the offending file/line/field.
class parse_error : public error {
public:
    using error::error;
};

enum class processor_kind { cpu, gpu, other };

inline std::string to_string(processor_kind k) {
    switch (k) {
        case processor_kind::cpu: return "cpu";
        case processor_kind::gpu: return "gpu";
        case processor_kind::other: return "other";
    }
    return "other";
}

inline processor_kind processor_kind_from_string(const std::string& s) {
    if (s == "cpu") return processor_kind::cpu;
    if (s == "gpu") return processor_kind::gpu;
    if (s == "other") return processor_kind::other;
    throw parse_error("unknown processor kind: '" + s + "'");
}

/// A processor as declared in an environment: identity plus its thermal
/// design power, the constant used by static estimation.
struct processor_ref {
    processor_kind kind = processor_kind::other;
    std::string name;
    double tdp_watts = 0.0;  // > 0

    friend bool operator==(const processor_ref&, const processor_ref&) = default;
};

/// The hardware/software context an experiment executes in.
struct environment {
    std::vector<processor_ref> processors;
    std::string host_label;
    double co2_efficiency_kg_per_kwh = 0.0;

    const processor_ref* find_processor(const std::string& name) const {
        for (const auto& p : processors)
            if (p.name == name) return &p;
        return nullptr;
    }

    friend bool operator==(const environment&, const environment&) = default;
};

enum class work_unit_kind { inference, query };

inline std::string to_string(work_unit_kind u) {
    return u == work_unit_kind::inference ? "inference" : "query";
}

inline work_unit_kind work_unit_from_string(const std::string& s) {
    if (s == "inference") return work_unit_kind::inference;
    if (s == "query") return work_unit_kind::query;
    throw parse_error("unknown work unit: '" + s + "'");
}

/// Declarative description of one workload run. active_processors holds
/// names that must resolve in the environment; the environment owns TDPs.
struct experiment_config {
    std::vector<std::string> workload_command;
    std::string domain_tag;
    work_unit_kind work_unit = work_unit_kind::inference;
    std::uint64_t work_unit_scale = 1;  // normalization basis, e.g. 1000 inferences
    std::map<std::string, std::string> hyperparameters;
    std::vector<std::string> active_processors;
    std::optional<double> planned_duration_s;
    int repetitions = 3;

    friend bool operator==(const experiment_config&, const experiment_config&) = default;
};

/// One instantaneous power reading attributed to a source processor.
struct power_sample {
    double timestamp_s = 0.0;  // seconds since run start, >= 0
    double watts = 0.0;        // >= 0
    std::string source;        // processor_ref name

    friend bool operator==(const power_sample&, const power_sample&) = default;
};

/// Time-ordered power samples from one run. Timestamps are strictly
/// increasing per source; samples of several sources may interleave.
struct power_trace {
    std::vector<power_sample> samples;
    double nominal_interval_s = 1.0;

    std::set<std::string> sources() const {
        std::set<std::string> out;
        for (const auto& s : samples) out.insert(s.source);
        return out;
    }

    friend bool operator==(const power_trace&, const power_trace&) = default;
};

enum class reading_provenance { ocr, manual, file };

inline std::string to_string(reading_provenance p) {
    switch (p) {
        case reading_provenance::ocr: return "ocr";
        case reading_provenance::manual: return "manual";
        case reading_provenance::file: return "file";
    }
    return "file";
}

inline reading_provenance provenance_from_string(const std::string& s) {
    if (s == "ocr") return reading_provenance::ocr;
    if (s == "manual") return reading_provenance::manual;
    if (s == "file") return reading_provenance::file;
    throw parse_error("unknown reading provenance: '" + s + "'");
}

/// One decoded cumulative-energy meter reading.
struct meter_reading {
    std::int64_t timestamp_ms = 0;  // UTC wall clock, millisecond precision
    double cumulative_kwh = 0.0;    // >= 0
    double confidence = 1.0;        // in [0,1]
    reading_provenance provenance = reading_provenance::file;

    friend bool operator==(const meter_reading&, const meter_reading&) = default;
};

/// Validated, monotone cumulative-energy timeline. A cumulative meter never
/// runs backward; build_timeline enforces that before this type is formed.
struct meter_timeline {
    std::vector<meter_reading> readings;  // time-ordered, cumulative_kwh non-decreasing
    double resolution_kwh = default_meter_resolution_kwh;

    friend bool operator==(const meter_timeline&, const meter_timeline&) = default;
};

/// The three energy figures for one run, in watt-seconds. dynamic and ground
/// truth may be absent (static-only fallback, no meter evidence).
struct energy_triple {
    double static_ws = 0.0;
    std::optional<double> dynamic_ws;
    std::optional<double> ground_truth_ws;
    std::optional<double> truth_uncertainty_ws;  // present iff ground_truth present

    friend bool operator==(const energy_triple&, const energy_triple&) = default;
};

/// Persisted unit of one execution.
struct run_record {
    std::string run_id;     // timestamp-prefixed random token
    std::string series_id;  // shared by records of one execute_series call
    experiment_config config;
    environment env;
    std::int64_t started_at_ms = 0;  // UTC epoch millis
    std::int64_t ended_at_ms = 0;    // > started_at_ms
    double duration_s = 0.0;         // consistent with the instants within 1 s
    std::uint64_t work_units_completed = 0;
    std::vector<power_trace> traces;
    std::optional<meter_timeline> meter;
    energy_triple energies;
    std::optional<double> dynamic_coverage;  // present iff dynamic_ws present
    bool failed = false;
    int workload_exit_code = 0;
    std::string notes;

    friend bool operator==(const run_record&, const run_record&) = default;
};

inline std::vector<std::string> validate_environment(const environment& env) {
    std::vector<std::string> errors;
    if (env.co2_efficiency_kg_per_kwh < 0)
        errors.push_back("co2_efficiency must be >= 0");
    std::set<std::string> seen;
    for (const auto& p : env.processors) {
        if (p.name.empty()) errors.push_back("processor name must be nonempty");
        if (!(p.tdp_watts > 0))
            errors.push_back("processor '" + p.name + "' needs tdp_watts > 0");
        if (!seen.insert(p.name).second)
            errors.push_back("duplicate processor name '" + p.name + "'");
    }
    return errors;
}

/// Checks a configuration against an environment. Returns every violated
/// constraint; an empty vector means the config is accepted unchanged.
inline std::vector<std::string> validate_config(const experiment_config& config,
                                                const environment& env) {
    std::vector<std::string> errors = validate_environment(env);
    if (config.work_unit_scale < 1)
        errors.push_back("work_unit_scale must be >= 1");
    if (config.repetitions < 1)
        errors.push_back("repetitions must be >= 1");
    if (config.active_processors.empty())
        errors.push_back("active_processors must be nonempty");
    for (const auto& name : config.active_processors)
        if (env.find_processor(name) == nullptr)
            errors.push_back("unknown processor '" + name + "'");
    if (config.planned_duration_s && !(*config.planned_duration_s > 0))
        errors.push_back("planned_duration_s must be > 0 when present");
    return errors;
}

namespace detail {

inline bool strictly_increasing_per_source(const power_trace& trace) {
    std::map<std::string, double> last;
    for (const auto& s : trace.samples) {
        auto it = last.find(s.source);
        if (it != last.end() && !(s.timestamp_s > it->second)) return false;
        last[s.source] = s.timestamp_s;
    }
    return true;
}

}  // namespace detail

/// Full record validation, applied to every record read back from a log.
inline std::vector<std::string> validate_run_record(const run_record& r) {
    std::vector<std::string> errors = validate_config(r.config, r.env);
    if (r.run_id.empty()) errors.push_back("run_id must be nonempty");
    if (!(r.ended_at_ms > r.started_at_ms))
        errors.push_back("ended_at must be after started_at");
    if (!(r.duration_s > 0)) errors.push_back("duration_s must be > 0");
    const double instant_span_s = static_cast<double>(r.ended_at_ms - r.started_at_ms) / 1000.0;
    if (std::abs(instant_span_s - r.duration_s) > 1.0)
        errors.push_back("duration_s inconsistent with wall-clock instants (> 1 s apart)");
    for (const auto& t : r.traces) {
        if (!(t.nominal_interval_s > 0))
            errors.push_back("trace nominal_interval_s must be > 0");
        if (!detail::strictly_increasing_per_source(t))
            errors.push_back("trace timestamps must be strictly increasing per source");
        for (const auto& s : t.samples)
            if (s.watts < 0 || s.timestamp_s < 0) {
                errors.push_back("trace samples must have watts >= 0 and timestamp_s >= 0");
                break;
            }
    }
    if (r.meter) {
        if (!(r.meter->resolution_kwh > 0))
            errors.push_back("meter resolution_kwh must be > 0");
        for (std::size_t i = 1; i < r.meter->readings.size(); ++i) {
            const auto& a = r.meter->readings[i - 1];
            const auto& b = r.meter->readings[i];
            if (b.timestamp_ms < a.timestamp_ms || b.cumulative_kwh < a.cumulative_kwh) {
                errors.push_back("meter timeline must be time-ordered and non-decreasing");
                break;
            }
        }
    }
    const auto& e = r.energies;
    if (e.static_ws < 0) errors.push_back("static_ws must be >= 0");
    if (e.dynamic_ws && *e.dynamic_ws < 0) errors.push_back("dynamic_ws must be >= 0");
    if (e.ground_truth_ws && *e.ground_truth_ws < 0)
        errors.push_back("ground_truth_ws must be >= 0");
    if (e.ground_truth_ws.has_value() != e.truth_uncertainty_ws.has_value())
        errors.push_back("truth_uncertainty present iff ground_truth present");
    if (r.dynamic_coverage &&
        (*r.dynamic_coverage < 0 || *r.dynamic_coverage > 1 + 1e-9))
        errors.push_back("dynamic_coverage must be in [0,1]");
    return errors;
}

}  // namespace wattscope
