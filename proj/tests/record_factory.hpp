// Randomized run_record generation shared by round-trip tests. Every record
// produced here passes validate_run_record, so serialization is the only
// thing under test when one fails to round-trip.
#pragma once

#include "wattscope/types.hpp"

#include <random>
#include <string>

namespace wattscope::testing {

inline run_record make_random_record(std::mt19937_64& rng) {
    auto unit = [&] { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); };
    auto pick = [&](int n) { return std::uniform_int_distribution<int>(0, n - 1)(rng); };

    run_record r;
    r.run_id = "r-" + std::to_string(rng());
    r.series_id = "s-" + std::to_string(pick(5));

    const int processor_count = 1 + pick(3);
    for (int i = 0; i < processor_count; ++i) {
        processor_ref p;
        p.kind = static_cast<processor_kind>(pick(3));
        p.name = "proc" + std::to_string(i);
        p.tdp_watts = 10.0 + 490.0 * unit();
        r.env.processors.push_back(p);
        r.config.active_processors.push_back(p.name);
    }
    r.env.host_label = pick(2) ? "host-" + std::to_string(pick(9)) : "";
    r.env.co2_efficiency_kg_per_kwh = pick(4) ? unit() : 0.0;

    r.config.workload_command = {"bench", "--flag", std::to_string(pick(100))};
    r.config.domain_tag = pick(2) ? "vision" : "language";
    r.config.work_unit = static_cast<work_unit_kind>(pick(2));
    r.config.work_unit_scale = 1 + static_cast<std::uint64_t>(pick(1000));
    if (pick(2)) r.config.hyperparameters["model"] = "m" + std::to_string(pick(4));
    if (pick(2)) r.config.hyperparameters["batch"] = std::to_string(1 << pick(8));
    if (pick(2)) r.config.planned_duration_s = 1.0 + 600.0 * unit();
    r.config.repetitions = 1 + pick(5);

    r.duration_s = 1.0 + 1000.0 * unit();
    r.started_at_ms = 1'500'000'000'000 + static_cast<std::int64_t>(1e9 * unit());
    r.ended_at_ms = r.started_at_ms + static_cast<std::int64_t>(std::llround(r.duration_s * 1000));
    r.work_units_completed = static_cast<std::uint64_t>(pick(100000));

    const int trace_count = pick(3);
    for (int t = 0; t < trace_count; ++t) {
        power_trace trace;
        trace.nominal_interval_s = 0.1 + 2.0 * unit();
        double clock = 0.0;
        const int samples = pick(40);
        for (int i = 0; i < samples; ++i) {
            clock += 0.01 + unit();
            trace.samples.push_back({clock, 500.0 * unit(), "proc" + std::to_string(pick(processor_count))});
        }
        // per-source strict monotonicity: shared clock is strictly increasing
        r.traces.push_back(std::move(trace));
    }

    if (pick(2)) {
        meter_timeline m;
        m.resolution_kwh = pick(2) ? 0.01 : 0.001;
        double kwh = 10.0 * unit();
        std::int64_t ts = r.started_at_ms - 5000;
        const int readings = 1 + pick(20);
        for (int i = 0; i < readings; ++i) {
            m.readings.push_back({ts, kwh, unit(), static_cast<reading_provenance>(pick(3))});
            ts += 1 + pick(5000);
            kwh += 0.01 * unit();
        }
        r.meter = std::move(m);
    }

    r.energies.static_ws = 1e6 * unit();
    if (pick(3)) {
        r.energies.dynamic_ws = 1e6 * unit();
        r.dynamic_coverage = unit();
    }
    if (pick(2)) {
        r.energies.ground_truth_ws = 1e6 * unit();
        r.energies.truth_uncertainty_ws = 72000.0;
    }
    r.failed = pick(10) == 0;
    r.workload_exit_code = r.failed ? 1 + pick(100) : 0;
    if (pick(3) == 0) r.notes = "note " + std::to_string(rng() % 1000);
    return r;
}

}  // namespace wattscope::testing
