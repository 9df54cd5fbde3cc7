// Estimation-error analysis, normalization, aggregation over repeated runs,
// grouped comparisons, and CSV report emission.
#pragma once

#include "wattscope/static_estimate.hpp"
#include "wattscope/types.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace wattscope {

enum class approach { static_tdp, dynamic_sampling, ground_truth };

inline std::string to_string(approach a) {
    switch (a) {
        case approach::static_tdp: return "static";
        case approach::dynamic_sampling: return "dynamic";
        case approach::ground_truth: return "truth";
    }
    return "truth";
}

// ---------------------------------------------------------------------------
// Per-run figures

/// Signed estimation error of one approach against ground truth. Positive
/// means the approach overestimates.
struct error_figure {
    approach method = approach::static_tdp;
    double estimate_ws = 0.0;
    double truth_ws = 0.0;
    double absolute_error_ws = 0.0;  // estimate - truth
    double relative_error = 0.0;     // absolute / truth
};

/// Errors for every estimate the record carries. Requires ground truth;
/// a run without it has nothing to be judged against.
inline std::vector<error_figure> estimation_errors(const run_record& record) {
    if (!record.energies.ground_truth_ws)
        throw error("estimation_errors: run '" + record.run_id + "' has no ground truth");
    const double truth = *record.energies.ground_truth_ws;
    if (!(truth > 0)) throw error("estimation_errors: ground truth must be > 0");

    auto figure = [truth](approach method, double estimate) {
        const double abs_err = estimate - truth;
        return error_figure{method, estimate, truth, abs_err, abs_err / truth};
    };
    std::vector<error_figure> errors;
    errors.push_back(figure(approach::static_tdp, record.energies.static_ws));
    if (record.energies.dynamic_ws)
        errors.push_back(figure(approach::dynamic_sampling, *record.energies.dynamic_ws));
    return errors;
}

/// Energy per `basis` work units (basis 1000 reports Ws per 1000 queries).
inline double per_unit_energy(double energy_ws, std::uint64_t work_units,
                              std::uint64_t basis = 1) {
    if (work_units == 0) throw error("per_unit_energy: zero work units");
    if (basis == 0) throw error("per_unit_energy: zero basis");
    return energy_ws * static_cast<double>(basis) / static_cast<double>(work_units);
}

inline double average_power(double energy_ws, double duration_s) {
    if (!(duration_s > 0)) throw error("average_power: duration must be > 0");
    return energy_ws / duration_s;
}

// ---------------------------------------------------------------------------
// Aggregation

struct aggregate {
    double mean = 0.0;
    double sample_std = 0.0;  // n-1 denominator; 0 when n < 2
    std::size_t n = 0;
};

inline aggregate aggregate_values(const std::vector<double>& values) {
    aggregate out;
    out.n = values.size();
    if (values.empty()) return out;
    double sum = 0;
    for (const double v : values) sum += v;
    out.mean = sum / static_cast<double>(values.size());
    if (values.size() > 1) {
        double ss = 0;
        for (const double v : values) ss += (v - out.mean) * (v - out.mean);
        out.sample_std = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    return out;
}

/// Summary over repetitions of one configuration. Mixing configurations here
/// would average unlike quantities, so it is rejected.
struct series_summary {
    std::string series_id;
    std::size_t n = 0;
    std::size_t runs_with_truth = 0;
    aggregate static_ws;
    aggregate dynamic_ws;
    aggregate truth_ws;
    aggregate static_rel_error;
    aggregate dynamic_rel_error;
};

inline series_summary aggregate_series(const std::vector<run_record>& records) {
    if (records.empty()) throw error("aggregate_series: no records");
    const auto& reference = records.front().config;
    for (const auto& r : records)
        if (r.config != reference)
            throw error("aggregate_series: records span different configurations");

    series_summary summary;
    summary.series_id = records.front().series_id;
    summary.n = records.size();
    std::vector<double> stat, dyn, truth, stat_rel, dyn_rel;
    for (const auto& r : records) {
        stat.push_back(r.energies.static_ws);
        if (r.energies.dynamic_ws) dyn.push_back(*r.energies.dynamic_ws);
        if (r.energies.ground_truth_ws) {
            truth.push_back(*r.energies.ground_truth_ws);
            ++summary.runs_with_truth;
            if (*r.energies.ground_truth_ws > 0) {  // zero truth has no relative error
                for (const auto& e : estimation_errors(r)) {
                    if (e.method == approach::static_tdp) stat_rel.push_back(e.relative_error);
                    if (e.method == approach::dynamic_sampling) dyn_rel.push_back(e.relative_error);
                }
            }
        }
    }
    summary.static_ws = aggregate_values(stat);
    summary.dynamic_ws = aggregate_values(dyn);
    summary.truth_ws = aggregate_values(truth);
    summary.static_rel_error = aggregate_values(stat_rel);
    summary.dynamic_rel_error = aggregate_values(dyn_rel);
    return summary;
}

// ---------------------------------------------------------------------------
// Quantiles

/// Nearest-rank quantile: the ceil(p*n)-th smallest value. p=0 gives the
/// minimum, p=1 the maximum.
inline double nearest_rank_quantile(std::vector<double> values, double p) {
    if (values.empty()) throw error("nearest_rank_quantile: no values");
    if (p < 0 || p > 1) throw error("nearest_rank_quantile: p must be in [0,1]");
    std::sort(values.begin(), values.end());
    const auto n = values.size();
    const auto rank = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::ceil(p * static_cast<double>(n))));
    return values[std::min(rank, n) - 1];
}

struct boxplot_summary {
    double min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
    std::size_t n = 0;
};

inline boxplot_summary boxplot(const std::vector<double>& values) {
    if (values.empty()) throw error("boxplot: no values");
    boxplot_summary box;
    box.n = values.size();
    box.min = nearest_rank_quantile(values, 0.0);
    box.q1 = nearest_rank_quantile(values, 0.25);
    box.median = nearest_rank_quantile(values, 0.5);
    box.q3 = nearest_rank_quantile(values, 0.75);
    box.max = nearest_rank_quantile(values, 1.0);
    return box;
}

// ---------------------------------------------------------------------------
// Grouped comparison

/// One bucket of runs sharing a value along the comparison dimension.
struct comparison_group {
    std::string key;
    std::size_t n = 0;
    aggregate static_rel_error;
    aggregate dynamic_rel_error;
    double mean_abs_static_error_ws = 0.0;   // mean |estimate - truth| in watt-seconds
    double mean_abs_dynamic_error_ws = 0.0;
    std::vector<double> static_rel_errors;   // raw values, boxplot feedstock
    std::vector<double> dynamic_rel_errors;
    std::vector<double> static_abs_errors_ws;
    std::vector<double> dynamic_abs_errors_ws;
};

struct group_ratio {
    std::string group_a;
    std::string group_b;
    std::optional<double> static_error_ratio;   // mean |error| of a over b
    std::optional<double> dynamic_error_ratio;
};

struct grouped_comparison_result {
    std::string dimension;
    std::vector<comparison_group> groups;  // ordered by key
    std::vector<group_ratio> ratios;       // every pair a < b
    std::size_t excluded = 0;              // runs lacking truth or the dimension value
};

namespace detail {

inline std::string kinds_key(const run_record& record) {
    std::set<std::string> kinds;
    for (const auto& name : record.config.active_processors)
        if (const auto* proc = record.env.find_processor(name)) kinds.insert(to_string(proc->kind));
    std::string key;
    for (const auto& k : kinds) {
        if (!key.empty()) key += "+";
        key += k;
    }
    return key;
}

}  // namespace detail

/// Buckets runs by processor kind (dimension "kind") or by the value of one
/// hyperparameter, and reports per-group error statistics plus pairwise
/// ratios of mean error magnitudes.
inline grouped_comparison_result grouped_comparison(const std::vector<run_record>& records,
                                                    const std::string& dimension) {
    if (dimension.empty()) throw error("grouped_comparison: empty dimension");
    grouped_comparison_result result;
    result.dimension = dimension;

    std::map<std::string, comparison_group> groups;
    for (const auto& record : records) {
        std::string key;
        if (dimension == "kind") {
            key = detail::kinds_key(record);
        } else {
            const auto it = record.config.hyperparameters.find(dimension);
            if (it != record.config.hyperparameters.end()) key = it->second;
        }
        if (key.empty() || !record.energies.ground_truth_ws ||
            !(*record.energies.ground_truth_ws > 0) || record.failed) {
            ++result.excluded;
            continue;
        }
        auto& group = groups[key];
        group.key = key;
        ++group.n;
        for (const auto& e : estimation_errors(record)) {
            if (e.method == approach::static_tdp) {
                group.static_rel_errors.push_back(e.relative_error);
                group.static_abs_errors_ws.push_back(e.absolute_error_ws);
            }
            if (e.method == approach::dynamic_sampling) {
                group.dynamic_rel_errors.push_back(e.relative_error);
                group.dynamic_abs_errors_ws.push_back(e.absolute_error_ws);
            }
        }
    }

    for (auto& [key, group] : groups) {
        group.static_rel_error = aggregate_values(group.static_rel_errors);
        group.dynamic_rel_error = aggregate_values(group.dynamic_rel_errors);
        auto mean_abs = [](const std::vector<double>& v) {
            if (v.empty()) return 0.0;
            double sum = 0;
            for (const double x : v) sum += std::abs(x);
            return sum / static_cast<double>(v.size());
        };
        group.mean_abs_static_error_ws = mean_abs(group.static_abs_errors_ws);
        group.mean_abs_dynamic_error_ws = mean_abs(group.dynamic_abs_errors_ws);
        result.groups.push_back(group);
    }

    for (std::size_t a = 0; a < result.groups.size(); ++a) {
        for (std::size_t b = a + 1; b < result.groups.size(); ++b) {
            const auto& ga = result.groups[a];
            const auto& gb = result.groups[b];
            group_ratio ratio{ga.key, gb.key, std::nullopt, std::nullopt};
            if (!ga.static_rel_errors.empty() && gb.mean_abs_static_error_ws > 0)
                ratio.static_error_ratio = ga.mean_abs_static_error_ws / gb.mean_abs_static_error_ws;
            if (!ga.dynamic_rel_errors.empty() && gb.mean_abs_dynamic_error_ws > 0)
                ratio.dynamic_error_ratio =
                    ga.mean_abs_dynamic_error_ws / gb.mean_abs_dynamic_error_ws;
            result.ratios.push_back(ratio);
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Formatting

/// Fixed decimal formatting for displayed figures ("7.62 kg").
inline std::string format_fixed(double value, int decimals) {
    char buffer[64];
    std::snprintf(buffer, sizeof(buffer), "%.*f", decimals, value);
    return buffer;
}

/// Compact cell formatting that survives a parse round trip: to_chars emits
/// the shortest decimal form recovering the exact double.
inline std::string format_cell(double value) {
    char buffer[64];
    const auto [end, ec] = std::to_chars(buffer, buffer + sizeof(buffer), value);
    if (ec != std::errc()) throw error("format_cell: value does not fit");
    return std::string(buffer, end);
}

// ---------------------------------------------------------------------------
// Report emission

namespace detail {

inline std::string label_of(const run_record& record) {
    const auto it = record.config.hyperparameters.find("model");
    if (it != record.config.hyperparameters.end()) return it->second;
    return record.config.domain_tag;
}

inline std::string processors_cell(const run_record& record) {
    std::string out;
    for (const auto& name : record.config.active_processors) {
        if (!out.empty()) out += "+";
        out += name;
        if (const auto* proc = record.env.find_processor(name))
            out += "(" + to_string(proc->kind) + ")";
    }
    return out;
}

struct csv_row {
    std::vector<std::string> cells;
    csv_row& add(const std::string& s) {
        cells.push_back(s);
        return *this;
    }
    csv_row& add(double v) { return add(format_cell(v)); }
    csv_row& add(std::optional<double> v) { return add(v ? format_cell(*v) : std::string{}); }
    csv_row& add(std::uint64_t v) { return add(std::to_string(v)); }
};

inline void write_csv_row(std::ostream& out, const csv_row& row) {
    for (std::size_t i = 0; i < row.cells.size(); ++i) {
        if (i) out << ",";
        out << row.cells[i];
    }
    out << "\n";
}

}  // namespace detail

inline constexpr const char* runs_csv_header =
    "row_type,run_id,series_id,label,domain_tag,work_unit,processors,n,duration_s,work_units,"
    "coverage,static_ws,dynamic_ws,truth_ws,truth_uncertainty_ws,static_abs_error_ws,"
    "static_rel_error,dynamic_abs_error_ws,dynamic_rel_error,static_per_unit_ws,"
    "dynamic_per_unit_ws,truth_per_unit_ws,per_unit_basis,static_avg_w,dynamic_avg_w,"
    "truth_avg_w,carbon_kg,carbon_basis,failed";

struct report_options {
    std::optional<std::string> group_dimension;  // adds boxplot_* and ratios_* files
};

/// Writes runs.csv plus plot-ready aggregate CSVs into out_dir and returns
/// the paths written. Carbon uses ground truth when present, otherwise the
/// dynamic estimate, otherwise the static one; the basis column says which.
inline std::vector<std::filesystem::path> emit_report(const std::vector<run_record>& records,
                                                      const std::filesystem::path& out_dir,
                                                      const report_options& options = {}) {
    namespace fs = std::filesystem;
    if (records.empty()) throw error("emit_report: no records");
    fs::create_directories(out_dir);
    std::vector<fs::path> written;

    struct row_figures {
        std::optional<double> static_rel, dynamic_rel;
        std::optional<double> static_avg, dynamic_avg, truth_avg;
        std::optional<double> carbon_kg;
        std::string carbon_basis;
    };

    const auto runs_path = out_dir / "runs.csv";
    std::ofstream runs(runs_path);
    if (!runs) throw error("cannot write " + runs_path.string());
    runs << runs_csv_header << "\n";

    std::map<std::string, std::vector<const run_record*>> by_series;
    std::map<std::string, std::vector<const run_record*>> by_label;
    std::vector<std::string> series_order, label_order;

    for (const auto& record : records) {
        const auto& e = record.energies;
        row_figures fig;
        // a meter that never ticked yields truth 0; no relative error exists then
        if (e.ground_truth_ws && *e.ground_truth_ws > 0) {
            for (const auto& err : estimation_errors(record)) {
                if (err.method == approach::static_tdp) fig.static_rel = err.relative_error;
                if (err.method == approach::dynamic_sampling) fig.dynamic_rel = err.relative_error;
            }
        }
        if (record.duration_s > 0) {
            fig.static_avg = average_power(e.static_ws, record.duration_s);
            if (e.dynamic_ws) fig.dynamic_avg = average_power(*e.dynamic_ws, record.duration_s);
            if (e.ground_truth_ws)
                fig.truth_avg = average_power(*e.ground_truth_ws, record.duration_s);
        }
        if (record.env.co2_efficiency_kg_per_kwh > 0) {
            double basis_ws = e.static_ws;
            fig.carbon_basis = "assumed";
            if (e.ground_truth_ws) {
                basis_ws = *e.ground_truth_ws;
                fig.carbon_basis = "measured";
            } else if (e.dynamic_ws) {
                basis_ws = *e.dynamic_ws;
                fig.carbon_basis = "estimated";
            }
            fig.carbon_kg =
                co2_equivalents(basis_ws, record.env.co2_efficiency_kg_per_kwh).kg_co2_equiv;
        }

        const std::uint64_t basis = record.config.work_unit_scale;
        const bool has_units = record.work_units_completed > 0;
        detail::csv_row row;
        row.add(std::string("run"))
            .add(record.run_id)
            .add(record.series_id)
            .add(detail::label_of(record))
            .add(record.config.domain_tag)
            .add(to_string(record.config.work_unit))
            .add(detail::processors_cell(record))
            .add(std::uint64_t{1})
            .add(record.duration_s)
            .add(record.work_units_completed)
            .add(record.dynamic_coverage)
            .add(e.static_ws)
            .add(e.dynamic_ws)
            .add(e.ground_truth_ws)
            .add(e.truth_uncertainty_ws)
            .add(e.ground_truth_ws ? std::optional(e.static_ws - *e.ground_truth_ws)
                                   : std::nullopt)
            .add(fig.static_rel)
            .add(e.ground_truth_ws && e.dynamic_ws
                     ? std::optional(*e.dynamic_ws - *e.ground_truth_ws)
                     : std::nullopt)
            .add(fig.dynamic_rel)
            .add(has_units
                     ? std::optional(per_unit_energy(e.static_ws, record.work_units_completed,
                                                     basis))
                     : std::nullopt)
            .add(has_units && e.dynamic_ws
                     ? std::optional(per_unit_energy(*e.dynamic_ws, record.work_units_completed,
                                                     basis))
                     : std::nullopt)
            .add(has_units && e.ground_truth_ws
                     ? std::optional(per_unit_energy(*e.ground_truth_ws,
                                                     record.work_units_completed, basis))
                     : std::nullopt)
            .add(basis)
            .add(fig.static_avg)
            .add(fig.dynamic_avg)
            .add(fig.truth_avg)
            .add(fig.carbon_kg)
            .add(fig.carbon_basis)
            .add(std::string(record.failed ? "true" : "false"));
        detail::write_csv_row(runs, row);

        if (by_series.find(record.series_id) == by_series.end())
            series_order.push_back(record.series_id);
        by_series[record.series_id].push_back(&record);
        const auto label = detail::label_of(record);
        if (by_label.find(label) == by_label.end()) label_order.push_back(label);
        by_label[label].push_back(&record);
    }

    // per-series aggregate rows; a series of identical configs also gets
    // mean/std via aggregate_series, mixed series fall back to plain stats
    for (const auto& series_id : series_order) {
        const auto& members = by_series[series_id];
        std::vector<double> stat, dyn, truth, stat_rel, dyn_rel, durations;
        for (const auto* r : members) {
            stat.push_back(r->energies.static_ws);
            durations.push_back(r->duration_s);
            if (r->energies.dynamic_ws) dyn.push_back(*r->energies.dynamic_ws);
            if (r->energies.ground_truth_ws) {
                truth.push_back(*r->energies.ground_truth_ws);
                if (*r->energies.ground_truth_ws > 0) {
                    for (const auto& err : estimation_errors(*r)) {
                        if (err.method == approach::static_tdp)
                            stat_rel.push_back(err.relative_error);
                        if (err.method == approach::dynamic_sampling)
                            dyn_rel.push_back(err.relative_error);
                    }
                }
            }
        }
        auto emit_aggregate_row = [&](const std::string& row_type, auto pick) {
            detail::csv_row row;
            row.add(row_type)
                .add(std::string{})
                .add(series_id)
                .add(detail::label_of(*members.front()))
                .add(members.front()->config.domain_tag)
                .add(to_string(members.front()->config.work_unit))
                .add(detail::processors_cell(*members.front()))
                .add(static_cast<std::uint64_t>(members.size()))
                .add(pick(aggregate_values(durations)))
                .add(std::string{})
                .add(std::string{})
                .add(pick(aggregate_values(stat)))
                .add(dyn.empty() ? std::string{} : format_cell(pick(aggregate_values(dyn))))
                .add(truth.empty() ? std::string{} : format_cell(pick(aggregate_values(truth))))
                .add(std::string{})
                .add(std::string{})
                .add(stat_rel.empty() ? std::string{}
                                      : format_cell(pick(aggregate_values(stat_rel))))
                .add(std::string{})
                .add(dyn_rel.empty() ? std::string{}
                                     : format_cell(pick(aggregate_values(dyn_rel))));
            while (row.cells.size() < 28) row.cells.emplace_back();
            row.add(std::string{});
            detail::write_csv_row(runs, row);
        };
        emit_aggregate_row("series_mean", [](const aggregate& a) { return a.mean; });
        if (members.size() > 1)
            emit_aggregate_row("series_std", [](const aggregate& a) { return a.sample_std; });
    }
    runs.close();
    written.push_back(runs_path);

    // plot-ready aggregates by label
    auto open_csv = [&](const std::string& name, const std::string& header) {
        const auto path = out_dir / name;
        std::ofstream out(path);
        if (!out) throw error("cannot write " + path.string());
        out << header << "\n";
        written.push_back(path);
        return out;
    };

    {
        auto power = open_csv("power_by_label.csv",
                              "label,n,static_avg_w,dynamic_avg_w,truth_avg_w");
        auto energy = open_csv("energy_by_label.csv",
                               "label,n,static_ws_mean,static_ws_std,dynamic_ws_mean,"
                               "dynamic_ws_std,truth_ws_mean,truth_ws_std");
        auto errors = open_csv("error_by_label.csv",
                               "label,n_with_truth,static_rel_mean,static_rel_std,"
                               "dynamic_rel_mean,dynamic_rel_std");
        for (const auto& label : label_order) {
            const auto& members = by_label[label];
            std::vector<double> stat_avg, dyn_avg, truth_avg, stat, dyn, truth, stat_rel, dyn_rel;
            for (const auto* r : members) {
                stat.push_back(r->energies.static_ws);
                if (r->duration_s > 0) {
                    stat_avg.push_back(average_power(r->energies.static_ws, r->duration_s));
                    if (r->energies.dynamic_ws)
                        dyn_avg.push_back(average_power(*r->energies.dynamic_ws, r->duration_s));
                    if (r->energies.ground_truth_ws)
                        truth_avg.push_back(
                            average_power(*r->energies.ground_truth_ws, r->duration_s));
                }
                if (r->energies.dynamic_ws) dyn.push_back(*r->energies.dynamic_ws);
                if (r->energies.ground_truth_ws) {
                    truth.push_back(*r->energies.ground_truth_ws);
                    if (*r->energies.ground_truth_ws > 0) {
                        for (const auto& err : estimation_errors(*r)) {
                            if (err.method == approach::static_tdp)
                                stat_rel.push_back(err.relative_error);
                            if (err.method == approach::dynamic_sampling)
                                dyn_rel.push_back(err.relative_error);
                        }
                    }
                }
            }
            auto cell = [](const std::vector<double>& v, auto pick) {
                return v.empty() ? std::string{} : format_cell(pick(aggregate_values(v)));
            };
            auto mean = [](const aggregate& a) { return a.mean; };
            auto stddev = [](const aggregate& a) { return a.sample_std; };
            power << label << "," << members.size() << "," << cell(stat_avg, mean) << ","
                  << cell(dyn_avg, mean) << "," << cell(truth_avg, mean) << "\n";
            energy << label << "," << members.size() << "," << cell(stat, mean) << ","
                   << cell(stat, stddev) << "," << cell(dyn, mean) << "," << cell(dyn, stddev)
                   << "," << cell(truth, mean) << "," << cell(truth, stddev) << "\n";
            errors << label << "," << truth.size() << "," << cell(stat_rel, mean) << ","
                   << cell(stat_rel, stddev) << "," << cell(dyn_rel, mean) << ","
                   << cell(dyn_rel, stddev) << "\n";
        }
    }

    if (options.group_dimension) {
        const auto comparison = grouped_comparison(records, *options.group_dimension);
        auto box = open_csv("boxplot_" + comparison.dimension + ".csv",
                            "group,metric,n,min,q1,median,q3,max");
        for (const auto& group : comparison.groups) {
            auto emit = [&](const std::string& metric, const std::vector<double>& values) {
                if (values.empty()) return;
                const auto b = boxplot(values);
                box << group.key << "," << metric << "," << b.n << "," << format_cell(b.min)
                    << "," << format_cell(b.q1) << "," << format_cell(b.median) << ","
                    << format_cell(b.q3) << "," << format_cell(b.max) << "\n";
            };
            emit("static_rel_error", group.static_rel_errors);
            emit("dynamic_rel_error", group.dynamic_rel_errors);
        }
        auto ratios = open_csv("ratios_" + comparison.dimension + ".csv",
                               "group_a,group_b,static_error_ratio,dynamic_error_ratio");
        for (const auto& ratio : comparison.ratios) {
            ratios << ratio.group_a << "," << ratio.group_b << ","
                   << (ratio.static_error_ratio ? format_cell(*ratio.static_error_ratio)
                                                : std::string{})
                   << ","
                   << (ratio.dynamic_error_ratio ? format_cell(*ratio.dynamic_error_ratio)
                                                 : std::string{})
                   << "\n";
        }
    }
    return written;
}

}  // namespace wattscope
