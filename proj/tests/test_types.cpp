#include "wattscope/types.hpp"

#include <catch2/catch_amalgamated.hpp>

#include "record_factory.hpp"

using namespace wattscope;

TEST_CASE("energy unit conversions") {
    CHECK(kwh_to_ws(1.0) == 3'600'000.0);
    CHECK(ws_to_kwh(3'600'000.0) == 1.0);
    CHECK(kwh_to_ws(0.0) == 0.0);

    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> kwh(0.0, 1000.0);
    for (int i = 0; i < 1000; ++i) {
        const double v = kwh(rng);
        CHECK(ws_to_kwh(kwh_to_ws(v)) == Catch::Approx(v).epsilon(1e-12));
    }
}

TEST_CASE("enum string round trips") {
    for (auto k : {processor_kind::cpu, processor_kind::gpu, processor_kind::other})
        CHECK(processor_kind_from_string(to_string(k)) == k);
    for (auto u : {work_unit_kind::inference, work_unit_kind::query})
        CHECK(work_unit_from_string(to_string(u)) == u);
    for (auto p : {reading_provenance::ocr, reading_provenance::manual, reading_provenance::file})
        CHECK(provenance_from_string(to_string(p)) == p);
    CHECK_THROWS_AS(processor_kind_from_string("tpu"), parse_error);
    CHECK_THROWS_AS(work_unit_from_string("steps"), parse_error);
    CHECK_THROWS_AS(provenance_from_string("psychic"), parse_error);
}

namespace {

environment valid_env() {
    environment env;
    env.processors = {{processor_kind::gpu, "gpu0", 300.0}, {processor_kind::cpu, "cpu0", 125.0}};
    env.co2_efficiency_kg_per_kwh = 0.38;
    return env;
}

experiment_config valid_config() {
    experiment_config config;
    config.workload_command = {"true"};
    config.domain_tag = "vision";
    config.active_processors = {"gpu0"};
    return config;
}

}  // namespace

TEST_CASE("config validation reports every violation") {
    const auto env = valid_env();
    CHECK(validate_config(valid_config(), env).empty());

    auto broken = valid_config();
    broken.work_unit_scale = 0;
    broken.repetitions = 0;
    broken.active_processors = {"gpu0", "missing"};
    broken.planned_duration_s = -3.0;
    const auto errors = validate_config(broken, env);
    REQUIRE(errors.size() == 4);

    auto unknown_only = valid_config();
    unknown_only.active_processors.clear();
    CHECK(validate_config(unknown_only, env).size() == 1);
}

TEST_CASE("environment validation") {
    CHECK(validate_environment(valid_env()).empty());

    environment env = valid_env();
    env.processors.push_back({processor_kind::gpu, "gpu0", 250.0});  // duplicate name
    env.processors.push_back({processor_kind::cpu, "", 0.0});        // empty name, bad tdp
    env.co2_efficiency_kg_per_kwh = -1.0;
    CHECK(validate_environment(env).size() == 4);
}

TEST_CASE("run record validation accepts generated records") {
    std::mt19937_64 rng(99);
    for (int i = 0; i < 300; ++i) {
        const auto record = wattscope::testing::make_random_record(rng);
        const auto problems = validate_run_record(record);
        const std::string first_problem = problems.empty() ? "" : problems.front();
        CAPTURE(record.run_id, i, first_problem);
        CHECK(problems.empty());
    }
}

TEST_CASE("run record validation catches broken records") {
    std::mt19937_64 rng(100);
    const auto good = wattscope::testing::make_random_record(rng);
    CHECK(validate_run_record(good).empty());

    auto r = good;
    r.run_id.clear();
    CHECK(!validate_run_record(r).empty());

    r = good;
    r.duration_s += 10.0;  // off by 10 s against the instants
    CHECK(!validate_run_record(r).empty());

    r = good;
    r.ended_at_ms = r.started_at_ms - 1;
    CHECK(!validate_run_record(r).empty());

    r = good;
    power_trace t;
    t.samples = {{5.0, 10.0, "x"}, {5.0, 11.0, "x"}};  // not strictly increasing
    r.traces.push_back(t);
    CHECK(!validate_run_record(r).empty());

    r = good;
    t = power_trace{};
    t.samples = {{1.0, -4.0, "x"}};  // negative watts
    r.traces.push_back(t);
    CHECK(!validate_run_record(r).empty());

    r = good;
    meter_timeline m;
    m.readings = {{1000, 2.0, 1.0, reading_provenance::file},
                  {2000, 1.0, 1.0, reading_provenance::file}};  // meter runs backward
    r.meter = m;
    CHECK(!validate_run_record(r).empty());

    r = good;
    r.energies.ground_truth_ws = 100.0;
    r.energies.truth_uncertainty_ws.reset();  // pairing violated
    CHECK(!validate_run_record(r).empty());

    r = good;
    r.energies.dynamic_ws = 1.0;
    r.dynamic_coverage = 1.5;  // out of range
    CHECK(!validate_run_record(r).empty());
}

TEST_CASE("find_processor resolves by name") {
    const auto env = valid_env();
    REQUIRE(env.find_processor("cpu0") != nullptr);
    CHECK(env.find_processor("cpu0")->tdp_watts == 125.0);
    CHECK(env.find_processor("nope") == nullptr);
}
