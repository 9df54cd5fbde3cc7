// wattscope CLI: run wrapped workloads, analyze logged runs, simulate models.
#include "wattscope/wattscope.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace ws = wattscope;
namespace fs = std::filesystem;

namespace {

void print_record(const ws::run_record& r) {
    std::printf("run %s: %.2f s, %llu work units%s\n", r.run_id.c_str(), r.duration_s,
                static_cast<unsigned long long>(r.work_units_completed),
                r.failed ? " [FAILED]" : "");
    const auto& e = r.energies;
    std::printf("  static   %12.1f Ws  (%.1f W assumed)\n", e.static_ws,
                e.static_ws / r.duration_s);
    if (e.dynamic_ws)
        std::printf("  dynamic  %12.1f Ws  (coverage %.1f%%)\n", *e.dynamic_ws,
                    100.0 * r.dynamic_coverage.value_or(0.0));
    else
        std::printf("  dynamic  %15s\n", "absent");
    if (e.ground_truth_ws) {
        std::printf("  truth    %12.1f Ws  (+- %.1f Ws)\n", *e.ground_truth_ws,
                    e.truth_uncertainty_ws.value_or(0.0));
        if (*e.ground_truth_ws > 0)
            for (const auto& err : ws::estimation_errors(r))
                std::printf("  error    %-8s %+10.1f Ws  (%+.2f%%)\n",
                            ws::to_string(err.method).c_str(), err.absolute_error_ws,
                            100.0 * err.relative_error);
    }
    if (r.env.co2_efficiency_kg_per_kwh > 0) {
        double basis = e.static_ws;
        const char* kind = "assumed";
        if (e.ground_truth_ws) {
            basis = *e.ground_truth_ws;
            kind = "measured";
        } else if (e.dynamic_ws) {
            basis = *e.dynamic_ws;
            kind = "estimated";
        }
        const auto carbon = ws::co2_equivalents(basis, r.env.co2_efficiency_kg_per_kwh);
        std::printf("  carbon   %12s kg CO2e (%s, %.4f kWh)\n",
                    ws::format_fixed(carbon.kg_co2_equiv, 2).c_str(), kind, carbon.energy_kwh);
    }
    if (r.work_units_completed > 0) {
        const auto basis = r.config.work_unit_scale;
        std::printf("  per unit %12.1f Ws per %llu %s(s)\n",
                    ws::per_unit_energy(e.ground_truth_ws ? *e.ground_truth_ws
                                        : e.dynamic_ws    ? *e.dynamic_ws
                                                          : e.static_ws,
                                        r.work_units_completed, basis),
                    static_cast<unsigned long long>(basis),
                    ws::to_string(r.config.work_unit).c_str());
    }
    if (!r.notes.empty()) std::printf("  notes    %s\n", r.notes.c_str());
}

void print_series_summary(const std::vector<ws::run_record>& records) {
    if (records.size() < 2) return;
    try {
        const auto summary = ws::aggregate_series(records);
        std::printf("series %s over %zu runs:\n", summary.series_id.c_str(), summary.n);
        std::printf("  static   mean %12.1f Ws  std %10.1f Ws\n", summary.static_ws.mean,
                    summary.static_ws.sample_std);
        if (summary.dynamic_ws.n > 0)
            std::printf("  dynamic  mean %12.1f Ws  std %10.1f Ws\n", summary.dynamic_ws.mean,
                        summary.dynamic_ws.sample_std);
        if (summary.truth_ws.n > 0)
            std::printf("  truth    mean %12.1f Ws  std %10.1f Ws\n", summary.truth_ws.mean,
                        summary.truth_ws.sample_std);
    } catch (const ws::error&) {
        // mixed configurations in one series: per-run lines already printed
    }
}

struct run_args {
    std::string config_path;
    std::string env_path;
    std::string tdp_table_path;
    std::string sampler = "simulated";
    double interval_s = ws::default_sample_interval_s;
    bool rectangle = false;
    bool allow_static_only = false;
    std::string meter_frames;
    std::string meter_file;
    std::string layout_path;
    double meter_resolution = ws::default_meter_resolution_kwh;
    double meter_clock_offset = 0.0;
    int repetitions = 0;
    std::string log_path;
    std::string series_id;
};

int cmd_run(const run_args& args) {
    std::optional<ws::tdp_table> table;
    if (!args.tdp_table_path.empty()) table = ws::tdp_table::load(args.tdp_table_path);

    ws::run_plan plan;
    plan.env = ws::load_environment(args.env_path, table ? &*table : nullptr);
    plan.config = ws::load_experiment_config(args.config_path);
    if (args.repetitions > 0) plan.config.repetitions = args.repetitions;
    plan.sampler_spec = args.sampler;
    plan.interval_s = args.interval_s;
    plan.integration.rule =
        args.rectangle ? ws::integration_rule::left_rectangle : ws::integration_rule::trapezoid;
    plan.allow_static_only = args.allow_static_only;
    if (!args.meter_frames.empty()) plan.meter.frames_dir = args.meter_frames;
    if (!args.meter_file.empty()) plan.meter.reading_file = args.meter_file;
    if (!args.layout_path.empty()) plan.meter.layout = ws::load_layout(args.layout_path);
    plan.meter.resolution_kwh = args.meter_resolution;
    plan.meter.clock_offset_s = args.meter_clock_offset;
    if (!args.log_path.empty()) plan.log_path = args.log_path;
    plan.series_id = args.series_id;

    const auto series = ws::execute_series(plan);
    for (const auto& record : series.records) print_record(record);
    print_series_summary(series.records);
    for (const auto& failure : series.failures)
        std::fprintf(stderr, "error: %s\n", failure.c_str());
    return series.records.empty() ? 1 : 0;
}

struct analyze_args {
    std::vector<std::string> log_paths;
    std::string out_dir;
    std::string group_dimension;
};

int cmd_analyze(const analyze_args& args) {
    std::vector<ws::run_record> records;
    for (const auto& path : args.log_paths) {
        auto batch = ws::read_log(path);
        records.insert(records.end(), std::make_move_iterator(batch.begin()),
                       std::make_move_iterator(batch.end()));
    }
    if (records.empty()) {
        std::fprintf(stderr, "error: no records in the given logs\n");
        return 1;
    }

    ws::report_options options;
    if (!args.group_dimension.empty()) options.group_dimension = args.group_dimension;
    const auto written = ws::emit_report(records, args.out_dir, options);

    std::printf("analyzed %zu runs\n", records.size());
    if (!args.group_dimension.empty()) {
        const auto comparison = ws::grouped_comparison(records, args.group_dimension);
        for (const auto& group : comparison.groups)
            std::printf("  %s=%s: %zu runs, mean |static err| %.1f Ws, mean |dynamic err| %.1f Ws\n",
                        comparison.dimension.c_str(), group.key.c_str(), group.n,
                        group.mean_abs_static_error_ws, group.mean_abs_dynamic_error_ws);
        for (const auto& ratio : comparison.ratios) {
            if (ratio.static_error_ratio)
                std::printf("  |static err| %s / %s = %.2f\n", ratio.group_a.c_str(),
                            ratio.group_b.c_str(), *ratio.static_error_ratio);
            if (ratio.dynamic_error_ratio)
                std::printf("  |dynamic err| %s / %s = %.2f\n", ratio.group_a.c_str(),
                            ratio.group_b.c_str(), *ratio.dynamic_error_ratio);
        }
        if (comparison.excluded > 0)
            std::printf("  (%zu runs excluded: no ground truth or no '%s' value)\n",
                        comparison.excluded, comparison.dimension.c_str());
    }
    for (const auto& path : written) std::printf("wrote %s\n", path.string().c_str());
    return 0;
}

struct simulate_args {
    std::string model_path;
    double duration_s = 60.0;
    double interval_s = ws::default_sample_interval_s;
    bool rectangle = false;
    std::string out_log;
    std::string frames_dir;
    std::string trace_path;
    std::string readings_path;
    double meter_resolution = ws::default_meter_resolution_kwh;
    double meter_period_s = 5.0;
    std::uint64_t work_units = 0;
    std::uint64_t seed = 0;
    std::string series_id = "sim";
    std::string run_id;
};

int cmd_simulate(const simulate_args& args) {
    ws::power_model model;
    if (!args.model_path.empty()) model = ws::load_model(args.model_path);
    if (args.seed != 0) model.seed = args.seed;

    ws::simulate_options options;
    options.duration_s = args.duration_s;
    options.interval_s = args.interval_s;
    options.rule =
        args.rectangle ? ws::integration_rule::left_rectangle : ws::integration_rule::trapezoid;
    options.meter_resolution_kwh = args.meter_resolution;
    options.meter_period_s = args.meter_period_s;
    if (args.work_units > 0) options.work_units = args.work_units;
    options.series_id = args.series_id;
    if (!args.run_id.empty()) options.run_id = args.run_id;
    if (!args.frames_dir.empty()) options.frames_dir = args.frames_dir;

    const auto sim = ws::simulate_run(model, options);
    print_record(sim.record);
    std::printf("model truth %.1f Ws, sampler-visible %.1f Ws, expected dynamic error %+.2f%%\n",
                sim.true_energy_ws, sim.visible_energy_ws, 100.0 * sim.expected_rel_error);

    if (!args.out_log.empty()) {
        ws::append_record(args.out_log, sim.record);
        std::printf("wrote %s\n", args.out_log.c_str());
    }
    if (!args.trace_path.empty()) {
        ws::write_trace(fs::path(args.trace_path), sim.record.traces.front());
        std::printf("wrote %s\n", args.trace_path.c_str());
    }
    if (!args.readings_path.empty()) {
        std::ofstream out(args.readings_path);
        if (!out) throw ws::error("cannot write " + args.readings_path);
        out.precision(17);
        out << "# epoch_seconds cumulative_kwh\n";
        for (const auto& r : sim.record.meter->readings)
            out << static_cast<double>(r.timestamp_ms) / 1000.0 << " " << r.cumulative_kwh
                << "\n";
        std::printf("wrote %s\n", args.readings_path.c_str());
    }
    if (!args.frames_dir.empty())
        std::printf("wrote %zu frames + layout.cfg to %s\n",
                    sim.record.meter->readings.size(), args.frames_dir.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"wattscope: static, dynamic, and metered energy accounting for workloads"};
    app.require_subcommand(1);

    run_args run;
    auto* run_cmd = app.add_subcommand("run", "execute a workload under measurement");
    run_cmd->add_option("--config", run.config_path, "experiment config file")
        ->required()
        ->check(CLI::ExistingFile);
    run_cmd->add_option("--env", run.env_path, "environment file")
        ->required()
        ->check(CLI::ExistingFile);
    run_cmd->add_option("--tdp-table", run.tdp_table_path, "processor TDP table")
        ->check(CLI::ExistingFile);
    run_cmd->add_option("--sampler", run.sampler, "sampler backend: simulated[:model] or rapl");
    run_cmd->add_option("--interval", run.interval_s, "sampling interval in seconds")
        ->check(CLI::PositiveNumber);
    run_cmd->add_flag("--rectangle", run.rectangle,
                      "integrate with left rectangles instead of trapezoids");
    run_cmd->add_flag("--allow-static-only", run.allow_static_only,
                      "continue without dynamic estimation if sampling is unavailable");
    run_cmd->add_option("--meter-frames", run.meter_frames, "directory of meter camera frames");
    run_cmd->add_option("--meter-file", run.meter_file, "meter reading file")
        ->excludes("--meter-frames");
    run_cmd->add_option("--layout", run.layout_path, "display layout for frame decoding")
        ->check(CLI::ExistingFile);
    run_cmd->add_option("--meter-resolution", run.meter_resolution, "meter resolution in kWh")
        ->check(CLI::PositiveNumber);
    run_cmd->add_option("--meter-clock-offset", run.meter_clock_offset,
                        "seconds to add to meter timestamps to reach host time");
    run_cmd->add_option("--repetitions", run.repetitions, "override config repetitions");
    run_cmd->add_option("--log", run.log_path, "append run records to this JSONL log");
    run_cmd->add_option("--series", run.series_id, "series id shared by the repetitions");

    analyze_args analyze;
    auto* analyze_cmd = app.add_subcommand("analyze", "report over logged runs");
    analyze_cmd->add_option("--log", analyze.log_paths, "run log(s) to read")
        ->required()
        ->check(CLI::ExistingFile);
    analyze_cmd->add_option("--out", analyze.out_dir, "directory for report CSVs")->required();
    analyze_cmd->add_option("--group", analyze.group_dimension,
                            "comparison dimension: 'kind' or a hyperparameter name");

    simulate_args simulate;
    auto* simulate_cmd = app.add_subcommand("simulate", "run a power model in virtual time");
    simulate_cmd->add_option("--model", simulate.model_path, "power model file")
        ->check(CLI::ExistingFile);
    simulate_cmd->add_option("--duration", simulate.duration_s, "virtual run duration in seconds")
        ->check(CLI::PositiveNumber);
    simulate_cmd->add_option("--interval", simulate.interval_s, "sampling interval in seconds")
        ->check(CLI::PositiveNumber);
    simulate_cmd->add_flag("--rectangle", simulate.rectangle,
                           "integrate with left rectangles instead of trapezoids");
    simulate_cmd->add_option("--out", simulate.out_log, "append the run record to this JSONL log");
    simulate_cmd->add_option("--frames", simulate.frames_dir,
                             "render meter frames (plus layout.cfg) into this directory");
    simulate_cmd->add_option("--trace", simulate.trace_path, "write the sampled trace dump here");
    simulate_cmd->add_option("--readings", simulate.readings_path,
                             "write a meter reading file here");
    simulate_cmd->add_option("--meter-resolution", simulate.meter_resolution,
                             "meter resolution in kWh")
        ->check(CLI::PositiveNumber);
    simulate_cmd->add_option("--meter-period", simulate.meter_period_s,
                             "seconds between meter readings")
        ->check(CLI::PositiveNumber);
    simulate_cmd->add_option("--work-units", simulate.work_units,
                             "work units completed (default: one per whole second)");
    simulate_cmd->add_option("--seed", simulate.seed, "override the model seed (nonzero)");
    simulate_cmd->add_option("--series", simulate.series_id, "series id for the record");
    simulate_cmd->add_option("--run-id", simulate.run_id, "explicit run id");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run_cmd->parsed()) return cmd_run(run);
        if (analyze_cmd->parsed()) return cmd_analyze(analyze);
        if (simulate_cmd->parsed()) return cmd_simulate(simulate);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 1;
}
