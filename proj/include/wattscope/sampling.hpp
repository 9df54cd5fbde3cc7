// Pluggable power samplers, the concurrent sampling loop, and numeric
// integration of power traces into dynamic energy estimates.
#pragma once

#include "wattscope/types.hpp"

#include <charconv>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>
#include <stop_token>
#include <string>
#include <thread>
#include <vector>

namespace wattscope {

/// A backend read failed; the sampling loop records a gap and carries on.
class sampler_error : public error {
public:
    using error::error;
};

/// Behavioral contract for power telemetry sources. probe() must be stable
/// across a run; read_now() returns instantaneous watts (>= 0) or throws
/// sampler_error.
class sampler_backend {
public:
    virtual ~sampler_backend() = default;
    virtual std::vector<processor_ref> probe() = 0;
    virtual double read_now(const std::string& processor_name) = 0;
};

inline constexpr double default_sample_interval_s = 1.0;

/// Gaps longer than this multiple of the nominal interval contribute zero
/// energy and lower the coverage fraction instead of being interpolated.
inline constexpr double max_gap_interval_factor = 5.0;

// ---------------------------------------------------------------------------
// Sampling loop

struct sample_loop_result {
    power_trace trace;
    bool degraded = false;  // every source unreadable for longer than the gap tolerance
};

/// Samples every probed source at `interval_s` until stop is requested.
/// Timestamps are seconds since the loop started. Failed reads are recorded
/// as missing samples; the loop never throws for them.
inline sample_loop_result sample_loop(sampler_backend& backend, double interval_s,
                                      std::stop_token stop) {
    if (!(interval_s > 0)) throw error("sample_loop: interval_s must be > 0");
    const std::vector<processor_ref> sources = backend.probe();
    if (sources.empty()) throw sampler_error("sample_loop: backend probes no sources");

    using clock = std::chrono::steady_clock;
    const auto start = clock::now();
    const auto tick = std::chrono::duration_cast<clock::duration>(
        std::chrono::duration<double>(interval_s));
    const double gap_tolerance_s = max_gap_interval_factor * interval_s;

    sample_loop_result result;
    result.trace.nominal_interval_s = interval_s;
    double last_any_success_s = 0.0;
    bool any_success_yet = false;

    auto elapsed_s = [&] {
        return std::chrono::duration<double>(clock::now() - start).count();
    };

    for (std::size_t k = 0; !stop.stop_requested(); ++k) {
        for (const auto& src : sources) {
            if (stop.stop_requested()) break;
            try {
                const double watts = backend.read_now(src.name);
                if (watts < 0) throw sampler_error("negative power reading");
                result.trace.samples.push_back({elapsed_s(), watts, src.name});
                last_any_success_s = result.trace.samples.back().timestamp_s;
                any_success_yet = true;
            } catch (const sampler_error&) {
                // missing sample; gap handling happens at integration time
            }
        }
        const double silent_for = elapsed_s() - (any_success_yet ? last_any_success_s : 0.0);
        if (silent_for > gap_tolerance_s) result.degraded = true;

        // sleep in short slices so stop is honored well within 2x interval
        const auto next_tick = start + (k + 1) * tick;
        while (!stop.stop_requested() && clock::now() < next_tick) {
            const auto remaining = next_tick - clock::now();
            std::this_thread::sleep_for(
                std::min<clock::duration>(remaining, std::chrono::milliseconds(20)));
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Trace integration

enum class integration_rule {
    trapezoid,       // exact for linear power ramps
    left_rectangle,  // Sum_t Power_t * dt, kept for tool-faithful comparison
};

struct integration_options {
    integration_rule rule = integration_rule::trapezoid;
    double max_gap_factor = max_gap_interval_factor;
};

struct dynamic_estimate_result {
    double energy_ws = 0.0;                    // sum of per_source_ws
    std::map<std::string, double> per_source_ws;
    std::size_t sample_count = 0;
    double coverage_fraction = 0.0;            // covered time / duration, averaged over sources
    std::vector<std::string> failed_sources;   // sources with fewer than 2 samples

    bool degraded() const { return coverage_fraction < 1.0 - 1e-12 || !failed_sources.empty(); }
};

namespace detail {

struct source_integral {
    double energy_ws = 0.0;
    double covered_s = 0.0;
};

inline source_integral integrate_source(const std::vector<const power_sample*>& samples,
                                        double duration_s, double gap_tolerance_s,
                                        integration_rule rule) {
    source_integral out;
    // leading edge: hold the first sample constant back to t = 0
    const double lead = samples.front()->timestamp_s;
    if (lead > 0 && lead <= gap_tolerance_s) {
        out.energy_ws += samples.front()->watts * lead;
        out.covered_s += lead;
    }
    for (std::size_t i = 1; i < samples.size(); ++i) {
        const auto& a = *samples[i - 1];
        const auto& b = *samples[i];
        const double dt = b.timestamp_s - a.timestamp_s;
        if (!(dt > 0))
            throw error("integrate_trace: timestamps not strictly increasing for source '" +
                        a.source + "'");
        if (dt > gap_tolerance_s) continue;  // gap: contributes nothing
        out.energy_ws += rule == integration_rule::trapezoid ? 0.5 * (a.watts + b.watts) * dt
                                                             : a.watts * dt;
        out.covered_s += dt;
    }
    // trailing edge: hold the last sample constant up to the run end
    const double tail = duration_s - samples.back()->timestamp_s;
    if (tail > 0 && tail <= gap_tolerance_s) {
        out.energy_ws += samples.back()->watts * tail;
        out.covered_s += tail;
    }
    return out;
}

}  // namespace detail

/// Integrates one trace over [0, duration_s]. Per-source energies use the
/// trapezoidal rule (or left rectangles); gaps beyond the tolerance and
/// sources with fewer than two samples contribute nothing and show up in
/// coverage_fraction / failed_sources. Throws only when no source at all can
/// be integrated.
inline dynamic_estimate_result integrate_trace(const power_trace& trace, double duration_s,
                                               integration_options options = {}) {
    if (!(duration_s > 0)) throw error("integrate_trace: duration_s must be > 0");
    const double gap_tolerance_s = options.max_gap_factor * trace.nominal_interval_s;

    std::map<std::string, std::vector<const power_sample*>> by_source;
    for (const auto& s : trace.samples) {
        if (s.timestamp_s < 0 || s.timestamp_s > duration_s + 1e-9)
            throw error("integrate_trace: sample timestamp outside [0, duration]");
        by_source[s.source].push_back(&s);
    }
    if (by_source.empty()) throw error("insufficient trace: no samples");

    dynamic_estimate_result result;
    double coverage_sum = 0.0;
    std::size_t source_count = 0;
    for (const auto& [source, samples] : by_source) {
        ++source_count;
        if (samples.size() < 2) {
            result.failed_sources.push_back(source);
            continue;
        }
        const auto integral =
            detail::integrate_source(samples, duration_s, gap_tolerance_s, options.rule);
        result.per_source_ws[source] = integral.energy_ws;
        result.energy_ws += integral.energy_ws;
        result.sample_count += samples.size();
        coverage_sum += std::min(integral.covered_s / duration_s, 1.0);
    }
    if (result.per_source_ws.empty())
        throw error("insufficient trace: fewer than 2 samples for every source");
    result.coverage_fraction = coverage_sum / static_cast<double>(source_count);
    return result;
}

/// Aggregates several traces into one dynamic estimate: per-source integrals
/// are summed and coverage is averaged over all sources seen. Succeeds as
/// long as at least one source integrates.
inline dynamic_estimate_result dynamic_estimate(const std::vector<power_trace>& traces,
                                                double duration_s,
                                                integration_options options = {}) {
    if (traces.empty()) throw error("dynamic_estimate: no traces");
    dynamic_estimate_result combined;
    double coverage_sum = 0.0;
    std::size_t source_count = 0;
    std::size_t integrated_traces = 0;
    std::string first_failure;
    for (const auto& trace : traces) {
        dynamic_estimate_result one;
        try {
            one = integrate_trace(trace, duration_s, options);
            ++integrated_traces;
        } catch (const error& e) {
            if (first_failure.empty()) first_failure = e.what();
            for (const auto& src : trace.sources()) {
                combined.failed_sources.push_back(src);
                ++source_count;  // failed sources still weigh the combined coverage down
            }
            continue;
        }
        for (const auto& [src, ws] : one.per_source_ws) {
            combined.per_source_ws[src] += ws;
            combined.energy_ws += ws;
        }
        combined.sample_count += one.sample_count;
        for (const auto& src : one.failed_sources) combined.failed_sources.push_back(src);
        const std::size_t sources_in_trace = one.per_source_ws.size() + one.failed_sources.size();
        coverage_sum += one.coverage_fraction * static_cast<double>(sources_in_trace);
        source_count += sources_in_trace;
    }
    if (integrated_traces == 0)
        throw error("dynamic_estimate: no trace could be integrated (" + first_failure + ")");
    combined.coverage_fraction =
        source_count == 0 ? 0.0 : coverage_sum / static_cast<double>(source_count);
    return combined;
}

// ---------------------------------------------------------------------------
// Trace dump format: one "<timestamp_s> <source> <watts>" record per line.

inline void write_trace(std::ostream& out, const power_trace& trace) {
    out << "# timestamp_s source watts (nominal_interval_s=" << trace.nominal_interval_s << ")\n";
    out.precision(17);
    for (const auto& s : trace.samples)
        out << s.timestamp_s << " " << s.source << " " << s.watts << "\n";
}

inline void write_trace(const std::filesystem::path& path, const power_trace& trace) {
    std::ofstream out(path);
    if (!out) throw error("cannot write trace: " + path.string());
    write_trace(out, trace);
}

inline power_trace read_trace(std::istream& in, const std::string& origin,
                              double nominal_interval_s = default_sample_interval_s) {
    power_trace trace;
    trace.nominal_interval_s = nominal_interval_s;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        std::istringstream fields(line);
        double t = 0, w = 0;
        std::string source;
        if (!(fields >> t)) continue;
        if (!(fields >> source >> w))
            throw parse_error(origin + ":" + std::to_string(line_no) +
                              ": expected '<timestamp_s> <source> <watts>'");
        trace.samples.push_back({t, w, source});
    }
    return trace;
}

inline power_trace read_trace(const std::filesystem::path& path,
                              double nominal_interval_s = default_sample_interval_s) {
    std::ifstream in(path);
    if (!in) throw error("cannot open trace: " + path.string());
    return read_trace(in, path.string(), nominal_interval_s);
}

// ---------------------------------------------------------------------------
// Cumulative energy counters (RAPL-style backends)

/// Nonnegative modular difference for wrapping cumulative counters.
inline double modular_counter_delta(double previous, double current, double range) {
    if (!(range > 0)) throw error("modular_counter_delta: range must be > 0");
    double delta = current - previous;
    if (delta < 0) delta += range;
    return delta;
}

/// Turns a cumulative energy counter (joules, wrapping at range_j) into
/// instantaneous watt readings by differencing consecutive reads.
class counter_power_adapter {
public:
    counter_power_adapter(std::function<double()> read_counter_joules, double range_j)
        : read_counter_(std::move(read_counter_joules)), range_j_(range_j) {
        last_joules_ = read_counter_();
        last_time_ = std::chrono::steady_clock::now();
    }

    double read_watts() {
        const auto now = std::chrono::steady_clock::now();
        const double dt = std::chrono::duration<double>(now - last_time_).count();
        if (dt < 0.01)
            throw sampler_error("counter read interval below 10 ms; no power estimate yet");
        const double joules = read_counter_();
        const double delta = modular_counter_delta(last_joules_, joules, range_j_);
        last_joules_ = joules;
        last_time_ = now;
        return delta / dt;
    }

private:
    std::function<double()> read_counter_;
    double range_j_;
    double last_joules_;
    std::chrono::steady_clock::time_point last_time_;
};

/// Reads Linux powercap energy counters (package zones). Probes empty when
/// the sysfs tree is absent or unreadable; the caller decides whether to fall
/// back to another backend.
class rapl_backend : public sampler_backend {
public:
    explicit rapl_backend(std::filesystem::path root = "/sys/class/powercap") : root_(std::move(root)) {}

    std::vector<processor_ref> probe() override {
        namespace fs = std::filesystem;
        std::vector<processor_ref> found;
        std::error_code ec;
        for (const auto& entry : fs::directory_iterator(root_, ec)) {
            const auto dir = entry.path();
            const auto base = dir.filename().string();
            if (base.rfind("intel-rapl:", 0) != 0 || base.find(':', 11) != std::string::npos)
                continue;  // top-level package zones only
            double range_uj = 0, probe_uj = 0;
            if (!read_value(dir / "max_energy_range_uj", range_uj) ||
                !read_value(dir / "energy_uj", probe_uj) || !(range_uj > 0))
                continue;
            const double limit_w = read_power_limit(dir);
            processor_ref ref{processor_kind::cpu, "rapl:" + zone_name(dir), limit_w};
            zones_.emplace(ref.name,
                           std::make_unique<counter_power_adapter>(
                               [path = dir / "energy_uj"] {
                                   double uj = 0;
                                   if (!read_value(path, uj))
                                       throw sampler_error("cannot read " + path.string());
                                   return uj / 1e6;
                               },
                               range_uj / 1e6));
            found.push_back(std::move(ref));
        }
        return found;
    }

    double read_now(const std::string& processor_name) override {
        const auto it = zones_.find(processor_name);
        if (it == zones_.end()) throw sampler_error("unknown rapl zone: " + processor_name);
        return it->second->read_watts();
    }

private:
    static bool read_value(const std::filesystem::path& path, double& out) {
        std::ifstream in(path);
        return static_cast<bool>(in >> out);
    }

    static std::string zone_name(const std::filesystem::path& dir) {
        std::ifstream in(dir / "name");
        std::string name;
        if (in >> name) return name;
        return dir.filename().string();
    }

    static double read_power_limit(const std::filesystem::path& dir) {
        double uw = 0;
        if (read_value(dir / "constraint_0_max_power_uw", uw) && uw > 0) return uw / 1e6;
        return 1.0;  // informational only; static estimation never reads it
    }

    std::filesystem::path root_;
    std::map<std::string, std::unique_ptr<counter_power_adapter>> zones_;
};

}  // namespace wattscope
