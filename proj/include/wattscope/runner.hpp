// Run orchestration: spawn the wrapped workload, sample power concurrently,
// ingest meter evidence afterwards, and persist the resulting record.
#pragma once

#include "wattscope/analysis.hpp"
#include "wattscope/kvfile.hpp"
#include "wattscope/meter.hpp"
#include "wattscope/runlog.hpp"
#include "wattscope/sampling.hpp"
#include "wattscope/simulate.hpp"
#include "wattscope/static_estimate.hpp"
#include "wattscope/types.hpp"

#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace wattscope {

// ---------------------------------------------------------------------------
// Identifiers and clocks

inline std::int64_t utc_now_ms() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
}

/// "20240301T120000Z-1a2b3c4d": sortable by start time, unique by suffix.
inline std::string make_run_id(std::int64_t epoch_ms, std::uint32_t entropy) {
    const auto seconds = static_cast<std::time_t>(epoch_ms / 1000);
    std::tm utc{};
    gmtime_r(&seconds, &utc);
    char stamp[32];
    std::strftime(stamp, sizeof(stamp), "%Y%m%dT%H%M%SZ", &utc);
    char suffix[16];
    std::snprintf(suffix, sizeof(suffix), "%08x", entropy);
    return std::string(stamp) + "-" + suffix;
}

inline std::string make_run_id() {
    static std::mt19937 rng{std::random_device{}()};
    return make_run_id(utc_now_ms(), rng());
}

// ---------------------------------------------------------------------------
// Workload process

struct workload_result {
    int exit_code = -1;
    std::uint64_t work_units = 0;  // max over "work_units=<n>" lines on stdout
    std::string output_tail;       // last chunk of combined output, for notes
};

namespace detail {

inline void scan_work_units(const std::string& text, std::uint64_t& best) {
    static constexpr std::string_view needle = "work_units=";
    std::size_t pos = 0;
    while ((pos = text.find(needle, pos)) != std::string::npos) {
        pos += needle.size();
        std::uint64_t value = 0;
        bool any = false;
        while (pos < text.size() && text[pos] >= '0' && text[pos] <= '9') {
            value = value * 10 + static_cast<std::uint64_t>(text[pos] - '0');
            any = true;
            ++pos;
        }
        if (any) best = std::max(best, value);
    }
}

}  // namespace detail

/// Runs argv[0] with execvp, combined stdout+stderr captured through a pipe.
/// The workload reports progress by printing "work_units=<n>"; the largest
/// value wins so both progressive and final reports work.
inline workload_result spawn_workload(const std::vector<std::string>& argv) {
    if (argv.empty()) throw error("spawn_workload: empty command");
    int fds[2];
    if (pipe(fds) != 0) throw error("spawn_workload: pipe failed: " + std::string(strerror(errno)));

    const pid_t pid = fork();
    if (pid < 0) {
        close(fds[0]);
        close(fds[1]);
        throw error("spawn_workload: fork failed: " + std::string(strerror(errno)));
    }
    if (pid == 0) {
        close(fds[0]);
        dup2(fds[1], STDOUT_FILENO);
        dup2(fds[1], STDERR_FILENO);
        close(fds[1]);
        std::vector<char*> args;
        args.reserve(argv.size() + 1);
        for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
        args.push_back(nullptr);
        execvp(args[0], args.data());
        std::fprintf(stderr, "execvp %s: %s\n", args[0], strerror(errno));
        _exit(127);
    }

    close(fds[1]);
    workload_result result;
    std::string carry;  // unterminated last line, so split matches never break
    char buffer[4096];
    for (;;) {
        const ssize_t n = ::read(fds[0], buffer, sizeof(buffer));
        if (n < 0) {
            if (errno == EINTR) continue;
            break;
        }
        if (n == 0) break;
        carry.append(buffer, static_cast<std::size_t>(n));
        detail::scan_work_units(carry, result.work_units);
        if (carry.size() > 8192) carry.erase(0, carry.size() - 4096);
    }
    close(fds[0]);
    result.output_tail = carry.size() > 2048 ? carry.substr(carry.size() - 2048) : carry;

    int status = 0;
    if (waitpid(pid, &status, 0) < 0)
        throw error("spawn_workload: waitpid failed: " + std::string(strerror(errno)));
    if (WIFEXITED(status))
        result.exit_code = WEXITSTATUS(status);
    else if (WIFSIGNALED(status))
        result.exit_code = 128 + WTERMSIG(status);
    return result;
}

// ---------------------------------------------------------------------------
// Sampler registry

/// Specs: "simulated" (default model), "simulated:<model-file>", "rapl".
inline std::unique_ptr<sampler_backend> create_backend(const std::string& spec) {
    if (spec == "simulated") return std::make_unique<simulated_backend>(power_model{});
    if (spec.rfind("simulated:", 0) == 0)
        return std::make_unique<simulated_backend>(load_model(spec.substr(10)));
    if (spec == "rapl") {
        auto backend = std::make_unique<rapl_backend>();
        if (backend->probe().empty())
            throw sampler_error("rapl backend found no readable powercap zones");
        return backend;
    }
    throw error("unknown sampler backend '" + spec + "' (expected simulated[:model] or rapl)");
}

// ---------------------------------------------------------------------------
// Plans

struct meter_options {
    std::optional<std::filesystem::path> frames_dir;    // seven-segment camera frames
    std::optional<std::filesystem::path> reading_file;  // externally logged readings
    std::optional<display_layout> layout;  // frames default to <frames_dir>/layout.cfg
    double resolution_kwh = default_meter_resolution_kwh;
    double clock_offset_s = 0.0;  // host = meter + offset
};

struct run_plan {
    experiment_config config;
    environment env;
    std::string sampler_spec = "simulated";
    double interval_s = default_sample_interval_s;
    integration_options integration;
    meter_options meter;
    bool allow_static_only = false;  // keep going when no sampler backend works
    std::optional<std::filesystem::path> log_path;
    std::string series_id;  // empty: one is generated
    std::string notes;
};

// ---------------------------------------------------------------------------
// Meter ingestion (shared by live runs and post-hoc analysis)

inline std::optional<meter_timeline> ingest_meter_evidence(const meter_options& options) {
    std::vector<meter_reading> readings;
    if (options.frames_dir) {
        display_layout layout;
        if (options.layout)
            layout = *options.layout;
        else
            layout = load_layout(*options.frames_dir / "layout.cfg");
        const auto frames = load_frames(*options.frames_dir);
        readings = decode_frames(frames, layout);
        if (readings.empty())
            throw error("meter frames present but none decoded in " +
                        options.frames_dir->string());
    } else if (options.reading_file) {
        readings = load_reading_file(*options.reading_file);
        if (readings.empty())
            throw error("meter reading file is empty: " + options.reading_file->string());
    } else {
        return std::nullopt;
    }
    return build_timeline(std::move(readings), {.resolution_kwh = options.resolution_kwh});
}

// ---------------------------------------------------------------------------
// Execution

/// One full measurement: validate, sample concurrently, run the workload,
/// integrate, ingest meter evidence, and persist. A nonzero workload exit
/// marks the record failed but still accounts its energy.
inline run_record execute_run(const run_plan& plan) {
    if (const auto problems = validate_config(plan.config, plan.env); !problems.empty()) {
        std::string joined;
        for (const auto& p : problems) joined += (joined.empty() ? "" : "; ") + p;
        throw error("invalid run plan: " + joined);
    }

    run_record record;
    record.config = plan.config;
    record.env = plan.env;
    record.series_id = plan.series_id;
    record.notes = plan.notes;

    // sampler first so a misconfigured backend fails before any workload runs
    std::unique_ptr<sampler_backend> backend;
    try {
        backend = create_backend(plan.sampler_spec);
    } catch (const error& e) {
        if (!plan.allow_static_only) throw;
        record.notes += std::string(record.notes.empty() ? "" : "; ") +
                        "dynamic estimation disabled: " + e.what();
    }

    sample_loop_result sampled;
    std::jthread sampler;
    if (backend) {
        sampler = std::jthread([&](std::stop_token stop) {
            sampled = sample_loop(*backend, plan.interval_s, stop);
        });
    }

    record.started_at_ms = utc_now_ms();
    const auto t0 = std::chrono::steady_clock::now();
    const auto workload = spawn_workload(plan.config.workload_command);
    const double duration_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    // sub-millisecond workloads still occupy a nonzero wall-clock interval
    record.ended_at_ms = std::max(utc_now_ms(), record.started_at_ms + 1);
    record.duration_s = duration_s;
    record.run_id = make_run_id();
    record.work_units_completed = workload.work_units;
    record.workload_exit_code = workload.exit_code;
    if (workload.exit_code != 0) {
        record.failed = true;
        record.notes += std::string(record.notes.empty() ? "" : "; ") + "workload exit " +
                        std::to_string(workload.exit_code);
        if (!workload.output_tail.empty())
            record.notes += ": " + workload.output_tail.substr(
                                       0, std::min<std::size_t>(workload.output_tail.size(), 256));
    }

    if (sampler.joinable()) {
        sampler.request_stop();
        sampler.join();
        // the loop keeps sampling until the stop lands; integration only
        // accepts [0, duration], so trim the overhang
        std::erase_if(sampled.trace.samples,
                      [&](const power_sample& s) { return s.timestamp_s > duration_s; });
        record.traces = {sampled.trace};
        if (sampled.degraded)
            record.notes += std::string(record.notes.empty() ? "" : "; ") +
                            "sampling degraded: all sources silent beyond the gap tolerance";
    }

    record.energies.static_ws = static_estimate(plan.config, plan.env, duration_s).energy_ws;

    if (backend) {
        try {
            const auto dynamic = dynamic_estimate(record.traces, duration_s, plan.integration);
            record.energies.dynamic_ws = dynamic.energy_ws;
            record.dynamic_coverage = dynamic.coverage_fraction;
        } catch (const error& e) {
            // a failed workload's record is the evidence of the failure; only
            // a healthy run treats missing dynamic estimation as fatal
            if (!plan.allow_static_only && !record.failed) throw;
            record.notes += std::string(record.notes.empty() ? "" : "; ") +
                            "dynamic estimate unavailable: " + e.what();
        }
    }

    if (auto timeline = ingest_meter_evidence(plan.meter)) {
        const auto truth = ground_truth_energy(*timeline, record.started_at_ms,
                                               record.ended_at_ms, plan.meter.clock_offset_s);
        record.meter = std::move(*timeline);
        record.energies.ground_truth_ws = truth.energy_ws;
        record.energies.truth_uncertainty_ws = truth.uncertainty_ws;
    }

    if (plan.log_path) append_record(*plan.log_path, record);
    return record;
}

struct series_result {
    std::vector<run_record> records;          // successful executions, in order
    std::vector<std::string> failures;        // error text of runs that threw
    std::string series_id;
};

/// config.repetitions runs under one series id. A run that throws is
/// reported in `failures` and does not stop the remaining repetitions.
inline series_result execute_series(run_plan plan) {
    if (plan.series_id.empty()) plan.series_id = make_run_id();
    series_result result;
    result.series_id = plan.series_id;
    for (int i = 0; i < plan.config.repetitions; ++i) {
        try {
            result.records.push_back(execute_run(plan));
        } catch (const error& e) {
            result.failures.push_back("repetition " + std::to_string(i + 1) + ": " + e.what());
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Config and environment documents

/// Experiment config document:
///   workload = python3 bench.py --batch 32
///   domain_tag = vision
///   work_unit = inference            # or query
///   work_unit_scale = 1000
///   active_processors = gpu0, cpu0
///   planned_duration_s = 60
///   repetitions = 3
///   hyper.model = resnet50           # hyper.* collected verbatim
inline experiment_config load_experiment_config(const std::filesystem::path& path) {
    const auto doc = kv_document::parse_file(path);
    experiment_config config;
    config.workload_command = split_command_line(doc.require("workload"));
    config.domain_tag = doc.require("domain_tag");
    if (const auto unit = doc.get("work_unit")) config.work_unit = work_unit_from_string(*unit);
    config.work_unit_scale =
        static_cast<std::uint64_t>(doc.get_integer("work_unit_scale").value_or(1));
    for (auto& token : split_list(doc.require("active_processors")))
        config.active_processors.push_back(std::move(token));
    config.planned_duration_s = doc.get_number("planned_duration_s");
    config.repetitions = static_cast<int>(doc.get_integer("repetitions").value_or(3));
    for (const auto& [key, value] : doc.with_prefix("hyper."))
        config.hyperparameters[key] = value;
    return config;
}

/// Environment document:
///   host_label = lab-box-1
///   co2_efficiency_kg_per_kwh = 0.38
///   processor.gpu0 = gpu 300         # kind [tdp_watts]
///   processor.cpu0 = cpu             # TDP then resolved via the table
/// Processors without an inline TDP must resolve through `table`; unknown
/// hardware is an error, never a guess.
inline environment load_environment(const std::filesystem::path& path,
                                    const tdp_table* table = nullptr) {
    const auto doc = kv_document::parse_file(path);
    environment env;
    env.host_label = doc.get("host_label").value_or("");
    env.co2_efficiency_kg_per_kwh =
        doc.get_number("co2_efficiency_kg_per_kwh")
            .value_or(default_co2_efficiency_kg_per_kwh);
    for (const auto& [name, value] : doc.with_prefix("processor.")) {
        std::istringstream fields(value);
        std::string kind;
        if (!(fields >> kind))
            throw parse_error(path.string() + ": processor." + name + " needs '<kind> [tdp]'");
        processor_ref ref;
        ref.kind = processor_kind_from_string(kind);
        ref.name = name;
        double tdp = 0;
        if (fields >> tdp) {
            ref.tdp_watts = tdp;
        } else if (table) {
            const auto looked_up = table->lookup(name);
            if (!looked_up)
                throw error("no TDP for processor '" + name +
                            "': not inline and not in the TDP table");
            ref.tdp_watts = *looked_up;
        } else {
            throw error("no TDP for processor '" + name + "': not inline and no table given");
        }
        env.processors.push_back(std::move(ref));
    }
    if (const auto problems = validate_environment(env); !problems.empty()) {
        std::string joined;
        for (const auto& p : problems) joined += (joined.empty() ? "" : "; ") + p;
        throw error(path.string() + ": invalid environment: " + joined);
    }
    return env;
}

}  // namespace wattscope
