#include "wattscope/simulate.hpp"

#include <catch2/catch_amalgamated.hpp>

#include "wattscope/runlog.hpp"

#include <filesystem>
#include <random>

using namespace wattscope;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("wattscope_sim_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

// Midpoint Riemann sum, an oracle independent of the closed forms.
double riemann_base_energy(const power_model& m, double duration, int steps = 200'000) {
    double sum = 0;
    const double h = duration / steps;
    for (int i = 0; i < steps; ++i) sum += base_power(m, (i + 0.5) * h) * h;
    return sum;
}

power_model ramp_model() {
    power_model m;
    m.profile = power_profile::ramp;
    m.idle_w = 50.0;
    m.max_w = 250.0;
    m.util_start = 0.2;
    m.util_end = 0.9;
    m.ramp_duration_s = 40.0;
    return m;
}

power_model sinusoid_model() {
    power_model m;
    m.profile = power_profile::sinusoid;
    m.idle_w = 80.0;
    m.max_w = 280.0;
    m.util_mean = 0.5;
    m.util_amplitude = 0.3;
    m.phase_rad = 0.7;
    m.period_s = 13.0;
    return m;
}

power_model square_model() {
    power_model m;
    m.profile = power_profile::square_wave;
    m.idle_w = 60.0;
    m.max_w = 300.0;
    m.util_low = 0.1;
    m.util_high = 0.8;
    m.period_s = 7.0;
    return m;
}

}  // namespace

TEST_CASE("closed-form energy matches a Riemann sum for every profile") {
    power_model constant;
    constant.idle_w = 100.0;
    constant.max_w = 300.0;
    constant.util = 0.5;

    struct test_case {
        power_model model;
        double duration;
    };
    const test_case cases[] = {
        {constant, 60.0},
        {ramp_model(), 25.0},  // still ramping
        {ramp_model(), 90.0},  // ramp finished, holds util_end
        {sinusoid_model(), 47.5},
        {square_model(), 24.5},  // mid high phase
        {square_model(), 26.0},  // into the low phase
    };
    for (const auto& [model, duration] : cases) {
        CAPTURE(to_string(model.profile), duration);
        const double exact = base_energy_ws(model, duration);
        const double numeric = riemann_base_energy(model, duration);
        CHECK(exact == Catch::Approx(numeric).epsilon(1e-5));
    }
}

TEST_CASE("true, visible, and expected error follow the model algebra") {
    power_model m;
    m.idle_w = 0.0;
    m.max_w = 200.0;
    m.util = 1.0;
    m.sampled_fraction = 0.75;

    const double T = 30.0;
    CHECK(true_energy_ws(m, T) == Catch::Approx(200.0 * T).epsilon(1e-12));
    CHECK(visible_energy_ws(m, T) == Catch::Approx(0.75 * 200.0 * T).epsilon(1e-12));
    // no overhead: error collapses to sampled_fraction - 1
    CHECK(expected_dynamic_error(m, T) == Catch::Approx(-0.25).epsilon(1e-12));

    m.overhead_w = 50.0;  // true power 250, visible 150
    CHECK(true_energy_ws(m, T) == Catch::Approx(250.0 * T).epsilon(1e-12));
    CHECK(expected_dynamic_error(m, T) ==
          Catch::Approx((150.0 - 250.0) / 250.0).epsilon(1e-12));

    power_model dead;
    dead.max_w = 0.0;
    dead.util = 0.0;
    CHECK_THROWS_AS(expected_dynamic_error(dead, 10.0), error);
}

TEST_CASE("model validation rejects out-of-range parameters") {
    CHECK_THROWS_AS(
        [] {
            power_model m;
            m.idle_w = -1;
            validate_model(m);
        }(),
        error);
    CHECK_THROWS_AS(
        [] {
            power_model m;
            m.max_w = 10;
            m.idle_w = 20;
            validate_model(m);
        }(),
        error);
    CHECK_THROWS_AS(
        [] {
            power_model m;
            m.tdp_w = 0;
            validate_model(m);
        }(),
        error);
    CHECK_THROWS_AS(
        [] {
            power_model m;
            m.sampled_fraction = 0;
            validate_model(m);
        }(),
        error);
    CHECK_THROWS_AS(
        [] {
            power_model m;
            m.util = 1.5;
            validate_model(m);
        }(),
        error);
    CHECK_THROWS_AS(
        [] {
            auto m = sinusoid_model();
            m.util_amplitude = 0.6;  // 0.5 + 0.6 leaves the unit interval
            validate_model(m);
        }(),
        error);
    CHECK_THROWS_AS(
        [] {
            auto m = square_model();
            m.period_s = 0;
            validate_model(m);
        }(),
        error);
}

TEST_CASE("model files round trip") {
    const auto dir = temp_dir("models");
    for (const auto& model : {ramp_model(), sinusoid_model(), square_model()}) {
        auto original = model;
        original.tdp_w = 275.0;
        original.sampled_fraction = 0.8;
        original.noise_w = 2.5;
        original.seed = 99;
        original.processor_name = "bench-gpu";
        const auto path = dir / (to_string(model.profile) + ".cfg");
        save_model(path, original);
        const auto loaded = load_model(path);
        CAPTURE(to_string(model.profile));
        CHECK(loaded == original);
    }
    CHECK_THROWS_AS(load_model(dir / "missing.cfg"), error);
}

TEST_CASE("the simulated backend replays bit-identically per seed") {
    auto model = sinusoid_model();
    model.noise_w = 5.0;
    model.seed = 1234;

    simulated_backend a(model), b(model);
    for (int i = 0; i < 200; ++i) {
        const double t = 0.25 * i;
        CHECK(a.read_at(t, model.processor_name) == b.read_at(t, model.processor_name));
    }

    // different seed, different noise sequence
    auto reseeded = model;
    reseeded.seed = 4321;
    simulated_backend c(model), d(reseeded);
    bool any_difference = false;
    for (int i = 0; i < 50 && !any_difference; ++i)
        any_difference = c.read_at(1.0 * i, model.processor_name) !=
                         d.read_at(1.0 * i, model.processor_name);
    CHECK(any_difference);

    CHECK_THROWS_AS(a.read_at(0.0, "other-device"), sampler_error);
    CHECK(a.probe().size() == 1);
    CHECK(a.probe()[0].name == model.processor_name);
}

TEST_CASE("noise-free backend reads equal the scaled base power") {
    auto model = ramp_model();
    model.sampled_fraction = 0.7;
    simulated_backend backend(model);
    for (const double t : {0.0, 3.0, 17.5, 60.0})
        CHECK(backend.read_at(t, model.processor_name) ==
              Catch::Approx(0.7 * base_power(model, t)).epsilon(1e-12));
}

TEST_CASE("the simulated meter floor-quantizes and never runs backwards") {
    power_model m;
    m.idle_w = 0.0;
    m.max_w = 360.0;  // 0.1 Wh per second
    m.util = 1.0;

    simulated_meter meter(m, 0.001, 12.0);
    double previous = -1.0;
    for (double t = 0.0; t <= 600.0; t += 7.5) {
        const double exact = meter.exact_kwh_at(t);
        const double displayed = meter.displayed_kwh_at(t);
        CAPTURE(t);
        CHECK(displayed <= exact + 1e-12);
        CHECK(exact < displayed + 0.001 + 1e-12);
        CHECK(displayed >= previous);
        previous = displayed;
    }
    CHECK(meter.exact_kwh_at(0.0) == 12.0);

    const auto reading = meter.reading_at(10.0, 1'000'000);
    CHECK(reading.timestamp_ms == 1'010'000);
    CHECK(reading.provenance == reading_provenance::file);

    CHECK_THROWS_AS(simulated_meter(m, 0.0), error);
    CHECK_THROWS_AS(simulated_meter(m, 0.01, -1.0), error);
}

TEST_CASE("render_frame rejects impossible values") {
    const auto layout = make_layout(4, 2);
    CHECK_THROWS_WITH(render_frame(100.0, layout),
                      Catch::Matchers::ContainsSubstring("overflow"));
    CHECK_THROWS_AS(render_frame(-0.01, layout), error);
    render_options noisy;
    noisy.noise_sigma = 5.0;
    CHECK_THROWS_WITH(render_frame(1.0, layout, noisy, nullptr),
                      Catch::Matchers::ContainsSubstring("rng"));
}

TEST_CASE("simulate_run reproduces the closed-form energies") {
    power_model m;
    m.idle_w = 0.0;
    m.max_w = 240.0;
    m.tdp_w = 300.0;
    m.util = 1.0;
    m.sampled_fraction = 0.75;
    m.seed = 7;

    simulate_options options;
    options.duration_s = 60.0;
    options.interval_s = 1.0;
    options.meter_resolution_kwh = 1e-6;

    const auto result = simulate_run(m, options);
    const auto& record = result.record;

    // static assumes the declared TDP for the whole duration
    CHECK(record.energies.static_ws == Catch::Approx(300.0 * 60.0).epsilon(1e-12));
    // constant power: the trapezoid is exact, dynamic sees fraction * base
    REQUIRE(record.energies.dynamic_ws.has_value());
    CHECK(*record.energies.dynamic_ws == Catch::Approx(0.75 * 240.0 * 60.0).epsilon(1e-9));
    CHECK(record.dynamic_coverage == Catch::Approx(1.0));
    // truth: floor-quantized true energy, off by at most one meter count
    REQUIRE(record.energies.ground_truth_ws.has_value());
    CHECK(*record.energies.ground_truth_ws ==
          Catch::Approx(240.0 * 60.0).margin(kwh_to_ws(1e-6) + 1e-6));
    CHECK(*record.energies.truth_uncertainty_ws ==
          Catch::Approx(2 * kwh_to_ws(1e-6)).epsilon(1e-12));

    CHECK(result.true_energy_ws == Catch::Approx(240.0 * 60.0).epsilon(1e-12));
    CHECK(result.expected_rel_error == Catch::Approx(-0.25).epsilon(1e-12));

    CHECK(record.run_id == "sim-7");
    CHECK(record.work_units_completed == 60);
    CHECK(validate_run_record(record).empty());
}

TEST_CASE("simulate_run is deterministic for a fixed seed") {
    auto model = sinusoid_model();
    model.noise_w = 4.0;
    model.seed = 20260814;

    simulate_options options;
    options.duration_s = 45.0;
    options.interval_s = 0.5;
    options.timestamp_jitter_s = 0.1;

    const auto first = simulate_run(model, options);
    const auto second = simulate_run(model, options);
    CHECK(first.record == second.record);
    CHECK(serialize_run(first.record) == serialize_run(second.record));

    auto other = model;
    other.seed = 1;
    CHECK_FALSE(simulate_run(other, options).record == first.record);
}

TEST_CASE("simulate_run keeps jittered sample times ordered") {
    auto model = ramp_model();
    model.seed = 5;
    simulate_options options;
    options.duration_s = 30.0;
    options.interval_s = 1.0;
    options.timestamp_jitter_s = 0.45;

    const auto result = simulate_run(model, options);
    const auto& samples = result.record.traces[0].samples;
    REQUIRE(samples.size() == 31);
    for (std::size_t i = 1; i < samples.size(); ++i)
        CHECK(samples[i].timestamp_s > samples[i - 1].timestamp_s);
    CHECK(validate_run_record(result.record).empty());

    options.timestamp_jitter_s = 0.5;  // collision becomes possible
    CHECK_THROWS_AS(simulate_run(model, options), error);
}

TEST_CASE("simulate_run renders decodable frames when asked") {
    power_model m;
    m.idle_w = 0.0;
    m.max_w = 3600.0;  // 1 Wh per second keeps the display moving
    m.util = 1.0;
    m.seed = 11;

    const auto dir = temp_dir("frames");
    simulate_options options;
    options.duration_s = 20.0;
    options.meter_period_s = 5.0;
    options.meter_resolution_kwh = 0.001;
    options.frame_digit_count = 6;
    options.frame_decimal_position = 3;
    options.frames_dir = dir;

    const auto result = simulate_run(m, options);
    REQUIRE(result.layout.has_value());
    CHECK(fs::exists(dir / "layout.cfg"));
    CHECK(load_layout(dir / "layout.cfg") == *result.layout);

    const auto frames = load_frames(dir);
    REQUIRE(frames.size() == result.record.meter->readings.size());
    const auto readings = decode_frames(frames, *result.layout);
    REQUIRE(readings.size() == frames.size());
    for (std::size_t i = 0; i < readings.size(); ++i) {
        CHECK(readings[i].timestamp_ms == result.record.meter->readings[i].timestamp_ms);
        CHECK(readings[i].cumulative_kwh ==
              Catch::Approx(result.record.meter->readings[i].cumulative_kwh).margin(1e-9));
    }
}

TEST_CASE("simulate_run validates its options") {
    power_model m;
    simulate_options options;
    options.duration_s = 0.0;
    CHECK_THROWS_AS(simulate_run(m, options), error);
    options.duration_s = 10.0;
    options.interval_s = 0.0;
    CHECK_THROWS_AS(simulate_run(m, options), error);
    options.interval_s = 1.0;
    options.meter_period_s = -1.0;
    CHECK_THROWS_AS(simulate_run(m, options), error);
    options.meter_period_s = 5.0;
    options.work_units = 123;
    options.run_id = "custom";
    const auto result = simulate_run(m, options);
    CHECK(result.record.work_units_completed == 123);
    CHECK(result.record.run_id == "custom");
}
