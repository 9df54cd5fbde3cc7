// Simulated environment: parametric power models with closed-form energy,
// a deterministic sampler backend, a quantized meter with rendered frames,
// and a virtual-time run executor.
#pragma once

#include "wattscope/image.hpp"
#include "wattscope/kvfile.hpp"
#include "wattscope/meter.hpp"
#include "wattscope/sampling.hpp"
#include "wattscope/static_estimate.hpp"
#include "wattscope/types.hpp"

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace wattscope {

// ---------------------------------------------------------------------------
// Power models

enum class power_profile { constant, ramp, sinusoid, square_wave };

inline std::string to_string(power_profile p) {
    switch (p) {
        case power_profile::constant: return "constant";
        case power_profile::ramp: return "ramp";
        case power_profile::sinusoid: return "sinusoid";
        case power_profile::square_wave: return "square_wave";
    }
    return "constant";
}

inline power_profile profile_from_string(const std::string& s) {
    if (s == "constant") return power_profile::constant;
    if (s == "ramp") return power_profile::ramp;
    if (s == "sinusoid") return power_profile::sinusoid;
    if (s == "square_wave") return power_profile::square_wave;
    throw parse_error("unknown power profile: '" + s + "'");
}

/// A synthetic device whose base draw follows a utilization profile between
/// idle_w and max_w. The workload truly costs base + overhead_w; samplers
/// only see sampled_fraction of the base plus Gaussian noise, which is how
/// the model encodes unmeasured rails and probe bias.
struct power_model {
    power_profile profile = power_profile::constant;
    double idle_w = 0.0;
    double max_w = 300.0;
    double tdp_w = 300.0;           // declared TDP, what static estimation assumes
    double overhead_w = 0.0;        // truly drawn but invisible to samplers
    double sampled_fraction = 1.0;  // share of base power a sampler observes
    double noise_w = 0.0;           // Gaussian sigma added to visible samples
    std::uint64_t seed = 1;
    std::string processor_name = "sim-gpu";
    processor_kind kind = processor_kind::gpu;

    double util = 1.0;              // constant
    double util_start = 0.0;        // ramp
    double util_end = 1.0;          // ramp
    double ramp_duration_s = 60.0;  // ramp reaches util_end here, then holds
    double util_mean = 0.5;         // sinusoid
    double util_amplitude = 0.5;    // sinusoid
    double phase_rad = 0.0;         // sinusoid
    double period_s = 20.0;         // sinusoid, square_wave
    double util_low = 0.0;          // square_wave
    double util_high = 1.0;         // square_wave

    friend bool operator==(const power_model&, const power_model&) = default;
};

inline void validate_model(const power_model& m) {
    auto in_unit = [](double u) { return u >= 0.0 && u <= 1.0; };
    if (m.idle_w < 0) throw error("power model: idle_w must be >= 0");
    if (m.max_w < m.idle_w) throw error("power model: max_w must be >= idle_w");
    if (!(m.tdp_w > 0)) throw error("power model: tdp_w must be > 0");
    if (m.overhead_w < 0) throw error("power model: overhead_w must be >= 0");
    if (!(m.sampled_fraction > 0)) throw error("power model: sampled_fraction must be > 0");
    if (m.noise_w < 0) throw error("power model: noise_w must be >= 0");
    switch (m.profile) {
        case power_profile::constant:
            if (!in_unit(m.util)) throw error("power model: util must be in [0,1]");
            break;
        case power_profile::ramp:
            if (!in_unit(m.util_start) || !in_unit(m.util_end))
                throw error("power model: ramp utilizations must be in [0,1]");
            if (!(m.ramp_duration_s > 0)) throw error("power model: ramp_duration_s must be > 0");
            break;
        case power_profile::sinusoid:
            if (!(m.period_s > 0)) throw error("power model: period_s must be > 0");
            if (!in_unit(m.util_mean - m.util_amplitude) || !in_unit(m.util_mean + m.util_amplitude))
                throw error("power model: sinusoid must keep utilization in [0,1]");
            break;
        case power_profile::square_wave:
            if (!(m.period_s > 0)) throw error("power model: period_s must be > 0");
            if (!in_unit(m.util_low) || !in_unit(m.util_high))
                throw error("power model: square wave utilizations must be in [0,1]");
            break;
    }
}

inline double utilization(const power_model& m, double t) {
    switch (m.profile) {
        case power_profile::constant:
            return m.util;
        case power_profile::ramp: {
            const double f = std::min(t / m.ramp_duration_s, 1.0);
            return m.util_start + (m.util_end - m.util_start) * f;
        }
        case power_profile::sinusoid:
            return m.util_mean +
                   m.util_amplitude *
                       std::sin(2.0 * std::numbers::pi * t / m.period_s + m.phase_rad);
        case power_profile::square_wave: {
            const double phase = t - std::floor(t / m.period_s) * m.period_s;
            return phase < 0.5 * m.period_s ? m.util_high : m.util_low;
        }
    }
    return 0.0;
}

inline double base_power(const power_model& m, double t) {
    return m.idle_w + utilization(m, t) * (m.max_w - m.idle_w);
}

/// What the device truly draws while the workload runs.
inline double true_power(const power_model& m, double t) {
    return base_power(m, t) + m.overhead_w;
}

namespace detail {

/// Closed-form integral of utilization over [0, T].
inline double utilization_integral(const power_model& m, double T) {
    switch (m.profile) {
        case power_profile::constant:
            return m.util * T;
        case power_profile::ramp: {
            const double D = m.ramp_duration_s;
            const double slope = (m.util_end - m.util_start);
            if (T <= D) return m.util_start * T + 0.5 * slope * T * T / D;
            return m.util_start * D + 0.5 * slope * D + m.util_end * (T - D);
        }
        case power_profile::sinusoid: {
            const double w = 2.0 * std::numbers::pi / m.period_s;
            return m.util_mean * T +
                   (m.util_amplitude / w) * (std::cos(m.phase_rad) - std::cos(w * T + m.phase_rad));
        }
        case power_profile::square_wave: {
            const double P = m.period_s;
            const double full = std::floor(T / P);
            const double rem = T - full * P;
            double integral = full * 0.5 * P * (m.util_high + m.util_low);
            if (rem <= 0.5 * P)
                integral += m.util_high * rem;
            else
                integral += m.util_high * 0.5 * P + m.util_low * (rem - 0.5 * P);
            return integral;
        }
    }
    return 0.0;
}

}  // namespace detail

/// Exact integral of base power over [0, T], in watt-seconds.
inline double base_energy_ws(const power_model& m, double duration_s) {
    if (duration_s < 0) throw error("base_energy_ws: negative duration");
    return m.idle_w * duration_s +
           (m.max_w - m.idle_w) * detail::utilization_integral(m, duration_s);
}

/// Exact energy the workload truly consumes over [0, T].
inline double true_energy_ws(const power_model& m, double duration_s) {
    return base_energy_ws(m, duration_s) + m.overhead_w * duration_s;
}

/// Expected value of a perfect integration of sampler-visible power.
inline double visible_energy_ws(const power_model& m, double duration_s) {
    return m.sampled_fraction * base_energy_ws(m, duration_s);
}

/// Relative error a flawless dynamic estimator converges to under this
/// model: (visible - true) / true. With no overhead this reduces to
/// sampled_fraction - 1.
inline double expected_dynamic_error(const power_model& m, double duration_s) {
    const double truth = true_energy_ws(m, duration_s);
    if (!(truth > 0)) throw error("expected_dynamic_error: model consumes no energy");
    return (visible_energy_ws(m, duration_s) - truth) / truth;
}

// ---------------------------------------------------------------------------
// Model files

inline power_model load_model(const std::filesystem::path& path) {
    const auto doc = kv_document::parse_file(path);
    power_model m;
    m.profile = profile_from_string(doc.get("profile").value_or("constant"));
    m.idle_w = doc.get_number("idle_w").value_or(m.idle_w);
    m.max_w = doc.get_number("max_w").value_or(m.max_w);
    m.tdp_w = doc.get_number("tdp_w").value_or(m.max_w);
    m.overhead_w = doc.get_number("overhead_w").value_or(m.overhead_w);
    m.sampled_fraction = doc.get_number("sampled_fraction").value_or(m.sampled_fraction);
    m.noise_w = doc.get_number("noise_w").value_or(m.noise_w);
    m.seed = static_cast<std::uint64_t>(doc.get_integer("seed").value_or(1));
    m.processor_name = doc.get("processor_name").value_or(m.processor_name);
    m.kind = processor_kind_from_string(doc.get("kind").value_or(to_string(m.kind)));
    m.util = doc.get_number("util").value_or(m.util);
    m.util_start = doc.get_number("util_start").value_or(m.util_start);
    m.util_end = doc.get_number("util_end").value_or(m.util_end);
    m.ramp_duration_s = doc.get_number("ramp_duration_s").value_or(m.ramp_duration_s);
    m.util_mean = doc.get_number("util_mean").value_or(m.util_mean);
    m.util_amplitude = doc.get_number("util_amplitude").value_or(m.util_amplitude);
    m.phase_rad = doc.get_number("phase_rad").value_or(m.phase_rad);
    m.period_s = doc.get_number("period_s").value_or(m.period_s);
    m.util_low = doc.get_number("util_low").value_or(m.util_low);
    m.util_high = doc.get_number("util_high").value_or(m.util_high);
    validate_model(m);
    return m;
}

inline void save_model(const std::filesystem::path& path, const power_model& m) {
    std::ofstream out(path);
    if (!out) throw error("cannot write model: " + path.string());
    out.precision(17);
    out << "# simulated power model\n"
        << "profile = " << to_string(m.profile) << "\n"
        << "idle_w = " << m.idle_w << "\n"
        << "max_w = " << m.max_w << "\n"
        << "tdp_w = " << m.tdp_w << "\n"
        << "overhead_w = " << m.overhead_w << "\n"
        << "sampled_fraction = " << m.sampled_fraction << "\n"
        << "noise_w = " << m.noise_w << "\n"
        << "seed = " << m.seed << "\n"
        << "processor_name = " << m.processor_name << "\n"
        << "kind = " << to_string(m.kind) << "\n";
    switch (m.profile) {
        case power_profile::constant:
            out << "util = " << m.util << "\n";
            break;
        case power_profile::ramp:
            out << "util_start = " << m.util_start << "\n"
                << "util_end = " << m.util_end << "\n"
                << "ramp_duration_s = " << m.ramp_duration_s << "\n";
            break;
        case power_profile::sinusoid:
            out << "util_mean = " << m.util_mean << "\n"
                << "util_amplitude = " << m.util_amplitude << "\n"
                << "phase_rad = " << m.phase_rad << "\n"
                << "period_s = " << m.period_s << "\n";
            break;
        case power_profile::square_wave:
            out << "util_low = " << m.util_low << "\n"
                << "util_high = " << m.util_high << "\n"
                << "period_s = " << m.period_s << "\n";
            break;
    }
}

// ---------------------------------------------------------------------------
// Simulated sampler backend

/// Deterministic given (model.seed, sequence of reads): noise draws advance
/// one per read, so the same seed replays the same trace bit for bit.
class simulated_backend : public sampler_backend {
public:
    explicit simulated_backend(power_model model)
        : model_(std::move(model)), rng_(model_.seed), start_(std::chrono::steady_clock::now()) {
        validate_model(model_);
    }

    std::vector<processor_ref> probe() override {
        return {processor_ref{model_.kind, model_.processor_name, model_.tdp_w}};
    }

    double read_now(const std::string& processor_name) override {
        const double t =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        return read_at(t, processor_name);
    }

    /// Virtual-time read; drives deterministic executions and tests.
    double read_at(double t_s, const std::string& processor_name) {
        if (processor_name != model_.processor_name)
            throw sampler_error("simulated backend knows no processor '" + processor_name + "'");
        double watts = model_.sampled_fraction * base_power(model_, t_s);
        if (model_.noise_w > 0) {
            std::normal_distribution<double> noise(0.0, model_.noise_w);
            watts += noise(rng_);
        }
        return std::max(watts, 0.0);
    }

    const power_model& model() const { return model_; }

private:
    power_model model_;
    std::mt19937_64 rng_;
    std::chrono::steady_clock::time_point start_;
};

// ---------------------------------------------------------------------------
// Simulated meter and frame rendering

/// Cumulative meter over the model's true energy, floor-quantized to the
/// display resolution exactly like a physical register that only advances
/// when a full least-significant unit has accumulated.
class simulated_meter {
public:
    simulated_meter(power_model model, double resolution_kwh = default_meter_resolution_kwh,
                    double initial_kwh = 0.0)
        : model_(std::move(model)), resolution_kwh_(resolution_kwh), initial_kwh_(initial_kwh) {
        if (!(resolution_kwh_ > 0)) throw error("simulated_meter: resolution must be > 0");
        if (initial_kwh_ < 0) throw error("simulated_meter: initial_kwh must be >= 0");
    }

    double exact_kwh_at(double t_s) const {
        return initial_kwh_ + ws_to_kwh(true_energy_ws(model_, t_s));
    }

    double displayed_kwh_at(double t_s) const {
        return std::floor(exact_kwh_at(t_s) / resolution_kwh_) * resolution_kwh_;
    }

    meter_reading reading_at(double t_s, std::int64_t epoch_base_ms,
                             reading_provenance provenance = reading_provenance::file) const {
        return {epoch_base_ms + static_cast<std::int64_t>(std::llround(t_s * 1000.0)),
                displayed_kwh_at(t_s), 1.0, provenance};
    }

    double resolution_kwh() const { return resolution_kwh_; }

private:
    power_model model_;
    double resolution_kwh_;
    double initial_kwh_;
};

/// Standard display geometry used by rendered frames: 36x60 digit cells with
/// a 12 px frame margin on every side.
inline display_layout make_layout(int digit_count, int decimal_position, int cell_w = 36,
                                  int cell_h = 60, int margin = 12) {
    display_layout layout;
    layout.box_x = margin;
    layout.box_y = margin;
    layout.box_w = digit_count * cell_w;
    layout.box_h = cell_h;
    layout.digit_count = digit_count;
    layout.decimal_position = decimal_position;
    validate_layout(layout);
    return layout;
}

inline int frame_width_for(const display_layout& layout, int margin = 12) {
    return layout.box_x + layout.box_w + margin;
}

inline int frame_height_for(const display_layout& layout, int margin = 12) {
    return layout.box_y + layout.box_h + margin;
}

struct render_options {
    double rotation_deg = 0.0;  // about the display center
    double noise_sigma = 0.0;   // Gaussian gray-level noise per pixel
    int background = 40;
    int foreground = 200;
};

namespace detail {

/// Rendered strokes are wider than the decoder's sample bands so that small
/// rotations and blur keep the bands inside lit material.
inline constexpr std::array<band, 7> segment_strokes = {{
    {0.15, 0.85, 0.02, 0.18},  // a
    {0.82, 0.98, 0.04, 0.50},  // b
    {0.82, 0.98, 0.50, 0.96},  // c
    {0.15, 0.85, 0.82, 0.98},  // d
    {0.02, 0.18, 0.50, 0.96},  // e
    {0.02, 0.18, 0.04, 0.50},  // f
    {0.15, 0.85, 0.41, 0.59},  // g
}};

inline void fill_band(gray_image& img, int ox, int oy, int w, int h, const band& b,
                      std::uint8_t value) {
    const int x0 = ox + static_cast<int>(std::lround(b.x0 * w));
    const int x1 = ox + static_cast<int>(std::lround(b.x1 * w));
    const int y0 = oy + static_cast<int>(std::lround(b.y0 * h));
    const int y1 = oy + static_cast<int>(std::lround(b.y1 * h));
    for (int y = std::max(0, y0); y < std::min(img.height, y1); ++y)
        for (int x = std::max(0, x0); x < std::min(img.width, x1); ++x) img.at(x, y) = value;
}

}  // namespace detail

/// Renders a cumulative-kWh value as a seven-segment display frame, with the
/// decimal dot tucked into the lower-right corner of the digit before the
/// point where no segment band samples.
inline gray_image render_frame(double kwh_value, const display_layout& layout,
                               const render_options& options = {},
                               std::mt19937_64* rng = nullptr) {
    validate_layout(layout);
    if (kwh_value < 0) throw error("render_frame: negative meter value");
    const int fractional = layout.digit_count - layout.decimal_position;
    auto digits_value =
        static_cast<std::int64_t>(std::llround(kwh_value * std::pow(10.0, fractional)));
    const auto capacity = static_cast<std::int64_t>(std::pow(10.0, layout.digit_count));
    if (digits_value >= capacity) throw error("render_frame: value overflows the display");

    gray_image frame(frame_width_for(layout), frame_height_for(layout),
                     static_cast<std::uint8_t>(options.background));
    const auto fg = static_cast<std::uint8_t>(options.foreground);
    const int cell_w = layout.box_w / layout.digit_count;

    std::vector<int> digits(static_cast<std::size_t>(layout.digit_count));
    for (int d = layout.digit_count - 1; d >= 0; --d) {
        digits[static_cast<std::size_t>(d)] = static_cast<int>(digits_value % 10);
        digits_value /= 10;
    }
    for (int d = 0; d < layout.digit_count; ++d) {
        const int ox = layout.box_x + d * cell_w;
        const unsigned mask = segment_patterns[static_cast<std::size_t>(digits[d])];
        for (std::size_t seg = 0; seg < 7; ++seg)
            if (mask & (1u << seg))
                detail::fill_band(frame, ox, layout.box_y, cell_w, layout.box_h,
                                  detail::segment_strokes[seg], fg);
        if (fractional > 0 && d == layout.decimal_position - 1)
            detail::fill_band(frame, ox, layout.box_y, cell_w, layout.box_h,
                              {0.93, 0.99, 0.90, 0.98}, fg);
    }

    if (options.rotation_deg != 0.0)
        frame = rotate_about(frame, options.rotation_deg, layout.box_x + layout.box_w / 2.0,
                             layout.box_y + layout.box_h / 2.0,
                             static_cast<std::uint8_t>(options.background));
    if (options.noise_sigma > 0) {
        if (!rng) throw error("render_frame: noise requested without an rng");
        std::normal_distribution<double> noise(0.0, options.noise_sigma);
        for (auto& p : frame.pixels) {
            const double v = p + noise(*rng);
            p = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
        }
    }
    return frame;
}

// ---------------------------------------------------------------------------
// Virtual-time run executor

/// Executes a run against the model in virtual time: no workload process, no
/// sleeping, every timestamp derived from the tick index. Fixed seeds
/// therefore reproduce records bit for bit, and long runs cost no wall time.
struct simulate_options {
    double duration_s = 60.0;
    double interval_s = default_sample_interval_s;
    double timestamp_jitter_s = 0.0;  // uniform +-jitter on interior sample times
    integration_rule rule = integration_rule::trapezoid;

    double meter_resolution_kwh = default_meter_resolution_kwh;
    double meter_period_s = 5.0;
    double meter_initial_kwh = 0.0;

    std::optional<std::uint64_t> work_units;  // default: one unit per whole second
    std::string series_id = "sim";
    std::string domain_tag = "simulation";
    work_unit_kind work_unit = work_unit_kind::inference;
    std::optional<std::string> run_id;  // default: "sim-<seed>"

    std::optional<std::filesystem::path> frames_dir;  // render frames + layout.cfg here
    render_options frame_render;
    int frame_digit_count = 4;
    int frame_decimal_position = 2;

    std::int64_t epoch_base_ms = 1'700'000'000'000;  // fixed virtual wall clock epoch
};

struct simulation_result {
    run_record record;
    double true_energy_ws = 0.0;
    double visible_energy_ws = 0.0;
    double expected_rel_error = 0.0;
    std::optional<display_layout> layout;  // set when frames were rendered
};

inline simulation_result simulate_run(const power_model& model, const simulate_options& options) {
    validate_model(model);
    if (!(options.duration_s > 0)) throw error("simulate_run: duration_s must be > 0");
    if (!(options.interval_s > 0)) throw error("simulate_run: interval_s must be > 0");
    if (!(options.meter_period_s > 0)) throw error("simulate_run: meter_period_s must be > 0");
    if (options.timestamp_jitter_s < 0 ||
        2.0 * options.timestamp_jitter_s >= options.interval_s)
        throw error("simulate_run: jitter must stay under half the interval to keep "
                    "sample times ordered");

    simulation_result result;
    run_record& record = result.record;

    record.env.host_label = "simulated";
    record.env.processors = {processor_ref{model.kind, model.processor_name, model.tdp_w}};
    record.env.co2_efficiency_kg_per_kwh = default_co2_efficiency_kg_per_kwh;
    record.config.workload_command = {"simulate:" + to_string(model.profile)};
    record.config.domain_tag = options.domain_tag;
    record.config.work_unit = options.work_unit;
    record.config.active_processors = {model.processor_name};
    record.config.planned_duration_s = options.duration_s;
    record.config.repetitions = 1;
    record.config.hyperparameters["model"] = to_string(model.profile);
    record.config.hyperparameters["sampled_fraction"] = std::to_string(model.sampled_fraction);

    record.run_id = options.run_id.value_or("sim-" + std::to_string(model.seed));
    record.series_id = options.series_id;
    record.started_at_ms = options.epoch_base_ms;
    record.ended_at_ms =
        options.epoch_base_ms + static_cast<std::int64_t>(std::llround(options.duration_s * 1000));
    record.duration_s = options.duration_s;
    record.work_units_completed = options.work_units.value_or(
        std::max<std::uint64_t>(1, static_cast<std::uint64_t>(options.duration_s)));
    record.workload_exit_code = 0;

    // sampled trace on the virtual clock
    simulated_backend backend(model);
    std::mt19937_64 jitter_rng(model.seed ^ 0x9e3779b97f4a7c15ull);
    power_trace trace;
    trace.nominal_interval_s = options.interval_s;
    const auto ticks = static_cast<std::size_t>(std::floor(options.duration_s / options.interval_s + 1e-9));
    for (std::size_t k = 0; k <= ticks; ++k) {
        double t = static_cast<double>(k) * options.interval_s;
        if (options.timestamp_jitter_s > 0 && k > 0 && k < ticks) {
            std::uniform_real_distribution<double> jitter(-options.timestamp_jitter_s,
                                                          options.timestamp_jitter_s);
            t = std::clamp(t + jitter(jitter_rng), 0.0, options.duration_s);
        }
        trace.samples.push_back({t, backend.read_at(t, model.processor_name),
                                 model.processor_name});
    }
    record.traces = {trace};

    // meter evidence on the same virtual clock
    simulated_meter meter(model, options.meter_resolution_kwh, options.meter_initial_kwh);
    std::vector<meter_reading> readings;
    for (double t = 0.0; t < options.duration_s; t += options.meter_period_s)
        readings.push_back(meter.reading_at(t, options.epoch_base_ms));
    readings.push_back(meter.reading_at(options.duration_s, options.epoch_base_ms));
    record.meter = build_timeline(readings, {.resolution_kwh = options.meter_resolution_kwh});

    if (options.frames_dir) {
        namespace fs = std::filesystem;
        fs::create_directories(*options.frames_dir);
        const auto layout =
            make_layout(options.frame_digit_count, options.frame_decimal_position);
        std::mt19937_64 frame_rng(model.seed ^ 0xda3e39cb94b95bdbull);
        for (const auto& reading : record.meter->readings) {
            const auto frame =
                render_frame(reading.cumulative_kwh, layout, options.frame_render, &frame_rng);
            save_pgm(*options.frames_dir / (std::to_string(reading.timestamp_ms) + ".pgm"), frame);
        }
        save_layout(*options.frames_dir / "layout.cfg", layout);
        result.layout = layout;
    }

    // the three energy figures
    const auto static_result =
        static_estimate(record.config, record.env, options.duration_s);
    record.energies.static_ws = static_result.energy_ws;
    const auto dynamic =
        integrate_trace(trace, options.duration_s, {.rule = options.rule});
    record.energies.dynamic_ws = dynamic.energy_ws;
    record.dynamic_coverage = dynamic.coverage_fraction;
    const auto truth =
        ground_truth_energy(*record.meter, record.started_at_ms, record.ended_at_ms);
    record.energies.ground_truth_ws = truth.energy_ws;
    record.energies.truth_uncertainty_ws = truth.uncertainty_ws;

    result.true_energy_ws = true_energy_ws(model, options.duration_s);
    result.visible_energy_ws = visible_energy_ws(model, options.duration_s);
    result.expected_rel_error = expected_dynamic_error(model, options.duration_s);
    return result;
}

}  // namespace wattscope
