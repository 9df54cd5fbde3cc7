// Seven-segment display reading: frame OCR, timeline voting, and ground
// truth energy from cumulative meter readings.
#pragma once

#include "wattscope/image.hpp"
#include "wattscope/types.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace wattscope {

// ---------------------------------------------------------------------------
// Display layout

/// Where the display sits in a frame and how to interpret its digits.
/// decimal_position counts integer digits: digit_count=4, decimal_position=2
/// reads "12.34".
struct display_layout {
    int box_x = 0;
    int box_y = 0;
    int box_w = 0;
    int box_h = 0;
    int digit_count = 4;
    int decimal_position = 2;
    bool invert = false;  // true when lit segments are darker than background

    friend bool operator==(const display_layout&, const display_layout&) = default;
};

inline void validate_layout(const display_layout& layout) {
    if (layout.box_w <= 0 || layout.box_h <= 0)
        throw error("display layout: box must have positive size");
    if (layout.digit_count < 1) throw error("display layout: digit_count must be >= 1");
    if (layout.decimal_position < 0 || layout.decimal_position > layout.digit_count)
        throw error("display layout: decimal_position must be in [0, digit_count]");
}

// ---------------------------------------------------------------------------
// Binarization

/// Otsu's global threshold over an 8-bit histogram. Returns the threshold
/// maximizing between-class variance; lit/background split happens relative
/// to it.
inline int otsu_threshold(const gray_image& img) {
    if (img.empty()) throw error("otsu_threshold: empty image");
    std::array<std::uint64_t, 256> hist{};
    for (const auto p : img.pixels) ++hist[p];
    const double total = static_cast<double>(img.pixels.size());
    double sum_all = 0;
    for (int v = 0; v < 256; ++v) sum_all += v * static_cast<double>(hist[v]);

    double best_variance = -1.0;
    int best_threshold = 127;
    double weight_bg = 0, sum_bg = 0;
    for (int t = 0; t < 256; ++t) {
        weight_bg += static_cast<double>(hist[t]);
        if (weight_bg == 0) continue;
        const double weight_fg = total - weight_bg;
        if (weight_fg == 0) break;
        sum_bg += t * static_cast<double>(hist[t]);
        const double mean_bg = sum_bg / weight_bg;
        const double mean_fg = (sum_all - sum_bg) / weight_fg;
        const double variance = weight_bg * weight_fg * (mean_bg - mean_fg) * (mean_bg - mean_fg);
        if (variance > best_variance) {
            best_variance = variance;
            best_threshold = t;
        }
    }
    return best_threshold;
}

/// 1 where lit, 0 where background. `invert` selects dark-on-light displays.
inline gray_image binarize(const gray_image& img, int threshold, bool invert = false) {
    gray_image out;
    out.width = img.width;
    out.height = img.height;
    out.pixels.resize(img.pixels.size());
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        const bool lit = invert ? img.pixels[i] <= threshold : img.pixels[i] > threshold;
        out.pixels[i] = lit ? 1 : 0;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Digit decoding

/// Canonical segment patterns, bit k = segment 'a'+k lit.
/// Layout:   a          0: abcdef   5: acdfg
///          f b         1: bc       6: acdefg
///           g          2: abdeg    7: abc
///          e c         3: abcdg    8: abcdefg
///           d          4: bcfg     9: abcdfg
inline constexpr std::array<unsigned, 10> segment_patterns = {
    0b0111111, 0b0000110, 0b1011011, 0b1001111, 0b1100110,
    0b1101101, 0b1111101, 0b0000111, 0b1111111, 0b1101111,
};

struct digit_decode {
    int digit = -1;
    double confidence = 0.0;  // (second best - best Hamming distance) / 7
};

/// Strategy interface so the segment matcher can be swapped for a trained
/// classifier without touching frame handling. Cells arrive binarized (0/1).
class digit_decoder {
public:
    virtual ~digit_decoder() = default;
    virtual std::optional<digit_decode> decode(const gray_image& binary_cell) const = 0;
};

namespace detail {

struct band {
    double x0, x1, y0, y1;  // normalized cell coordinates
};

/// Sample bands sit inside the rendered strokes with margin on every side so
/// a couple of degrees of rotation cannot move them off-segment.
inline constexpr std::array<band, 7> segment_bands = {{
    {0.35, 0.65, 0.06, 0.14},  // a
    {0.86, 0.94, 0.18, 0.36},  // b
    {0.86, 0.94, 0.64, 0.82},  // c
    {0.35, 0.65, 0.86, 0.94},  // d
    {0.06, 0.14, 0.64, 0.82},  // e
    {0.06, 0.14, 0.18, 0.36},  // f
    {0.35, 0.65, 0.46, 0.54},  // g
}};

inline double band_lit_fraction(const gray_image& cell, const band& b) {
    const int x0 = std::max(0, static_cast<int>(std::floor(b.x0 * cell.width)));
    const int x1 = std::min(cell.width, static_cast<int>(std::ceil(b.x1 * cell.width)));
    const int y0 = std::max(0, static_cast<int>(std::floor(b.y0 * cell.height)));
    const int y1 = std::min(cell.height, static_cast<int>(std::ceil(b.y1 * cell.height)));
    if (x0 >= x1 || y0 >= y1) return 0.0;
    double lit = 0;
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) lit += cell.at(x, y) != 0 ? 1.0 : 0.0;
    return lit / (static_cast<double>(x1 - x0) * static_cast<double>(y1 - y0));
}

}  // namespace detail

/// Default decoder: a segment counts as lit when at least half of its sample
/// band is foreground; the lit mask is matched against the canonical
/// patterns by Hamming distance and rejected beyond distance 1.
class segment_decoder : public digit_decoder {
public:
    std::optional<digit_decode> decode(const gray_image& binary_cell) const override {
        unsigned mask = 0;
        for (std::size_t seg = 0; seg < detail::segment_bands.size(); ++seg)
            if (detail::band_lit_fraction(binary_cell, detail::segment_bands[seg]) >= 0.5)
                mask |= 1u << seg;

        int best_digit = -1, best = 8, second = 8;
        for (int digit = 0; digit < 10; ++digit) {
            const int distance = std::popcount(mask ^ segment_patterns[digit]);
            if (distance < best) {
                second = best;
                best = distance;
                best_digit = digit;
            } else if (distance < second) {
                second = distance;
            }
        }
        if (best > 1) return std::nullopt;  // too far from every known digit
        return digit_decode{best_digit, static_cast<double>(second - best) / 7.0};
    }
};

/// Alternate decoder trained from labeled cells: nearest centroid over a
/// fixed 8x12 downsampled foreground-fraction feature grid.
class template_classifier : public digit_decoder {
public:
    static constexpr int grid_w = 8;
    static constexpr int grid_h = 12;

    void train(const std::vector<std::pair<gray_image, int>>& labeled_cells) {
        std::array<std::vector<double>, 10> sums{};
        std::array<std::size_t, 10> counts{};
        for (auto& s : sums) s.assign(grid_w * grid_h, 0.0);
        for (const auto& [cell, digit] : labeled_cells) {
            if (digit < 0 || digit > 9) throw error("template_classifier: label out of range");
            const auto feat = features(cell);
            for (std::size_t i = 0; i < feat.size(); ++i) sums[digit][i] += feat[i];
            ++counts[digit];
        }
        centroids_.clear();
        for (int digit = 0; digit < 10; ++digit) {
            if (counts[digit] == 0) continue;
            std::vector<double> c(grid_w * grid_h);
            for (std::size_t i = 0; i < c.size(); ++i)
                c[i] = sums[digit][i] / static_cast<double>(counts[digit]);
            centroids_.push_back({digit, std::move(c)});
        }
        if (centroids_.size() < 2)
            throw error("template_classifier: need examples of at least 2 digits");
    }

    std::optional<digit_decode> decode(const gray_image& binary_cell) const override {
        if (centroids_.empty()) throw error("template_classifier: not trained");
        const auto feat = features(binary_cell);
        int best_digit = -1;
        double best = 1e300, second = 1e300;
        for (const auto& [digit, centroid] : centroids_) {
            double d2 = 0;
            for (std::size_t i = 0; i < feat.size(); ++i) {
                const double diff = feat[i] - centroid[i];
                d2 += diff * diff;
            }
            if (d2 < best) {
                second = best;
                best = d2;
                best_digit = digit;
            } else if (d2 < second) {
                second = d2;
            }
        }
        const double margin = second > 0 ? (second - best) / second : 0.0;
        return digit_decode{best_digit, margin};
    }

private:
    static std::vector<double> features(const gray_image& cell) {
        std::vector<double> feat(grid_w * grid_h, 0.0);
        for (int gy = 0; gy < grid_h; ++gy)
            for (int gx = 0; gx < grid_w; ++gx)
                feat[gy * grid_w + gx] = detail::band_lit_fraction(
                    cell, {static_cast<double>(gx) / grid_w, static_cast<double>(gx + 1) / grid_w,
                           static_cast<double>(gy) / grid_h, static_cast<double>(gy + 1) / grid_h});
        return feat;
    }

    std::vector<std::pair<int, std::vector<double>>> centroids_;
};

// ---------------------------------------------------------------------------
// Frame reading

struct meter_frame {
    std::int64_t timestamp_ms = 0;
    gray_image image;
};

struct frame_diagnostics {
    int threshold = 0;
    bool low_contrast = false;               // between-class separation under 16 gray levels
    std::vector<unsigned> segment_masks;     // per digit, segment decoder only
    std::vector<int> digits;
    std::optional<std::size_t> rejected_digit;
};

/// Crops the display box and splits it into digit_count equal cells.
inline std::vector<gray_image> segment_display(const gray_image& frame,
                                               const display_layout& layout) {
    validate_layout(layout);
    if (layout.box_x < 0 || layout.box_y < 0 || layout.box_x + layout.box_w > frame.width ||
        layout.box_y + layout.box_h > frame.height)
        throw error("display box outside frame bounds");
    std::vector<gray_image> cells;
    cells.reserve(static_cast<std::size_t>(layout.digit_count));
    for (int d = 0; d < layout.digit_count; ++d) {
        const int x0 = layout.box_x + d * layout.box_w / layout.digit_count;
        const int x1 = layout.box_x + (d + 1) * layout.box_w / layout.digit_count;
        gray_image cell;
        cell.width = x1 - x0;
        cell.height = layout.box_h;
        cell.pixels.resize(static_cast<std::size_t>(cell.width) * cell.height);
        for (int y = 0; y < cell.height; ++y)
            for (int x = 0; x < cell.width; ++x)
                cell.pixels[static_cast<std::size_t>(y) * cell.width + x] =
                    frame.at(x0 + x, layout.box_y + y);
        cells.push_back(std::move(cell));
    }
    return cells;
}

/// Decodes one frame into a cumulative-kWh reading. Returns nullopt when any
/// digit is rejected; confidence is the minimum over digits.
inline std::optional<meter_reading> read_frame(const meter_frame& frame,
                                               const display_layout& layout,
                                               const digit_decoder& decoder = segment_decoder{},
                                               frame_diagnostics* diagnostics = nullptr) {
    const auto cells = segment_display(frame.image, layout);
    const int threshold = otsu_threshold(frame.image);
    if (diagnostics) {
        diagnostics->threshold = threshold;
        int lo = 255, hi = 0;
        for (const auto p : frame.image.pixels) {
            lo = std::min<int>(lo, p);
            hi = std::max<int>(hi, p);
        }
        diagnostics->low_contrast = hi - lo < 16;
    }

    double value = 0;
    double confidence = 1.0;
    for (std::size_t d = 0; d < cells.size(); ++d) {
        const auto binary = binarize(cells[d], threshold, layout.invert);
        const auto decoded = decoder.decode(binary);
        if (!decoded) {
            if (diagnostics) diagnostics->rejected_digit = d;
            return std::nullopt;
        }
        if (diagnostics) diagnostics->digits.push_back(decoded->digit);
        value = value * 10 + decoded->digit;
        confidence = std::min(confidence, decoded->confidence);
    }
    const int fractional_digits = layout.digit_count - layout.decimal_position;
    value /= std::pow(10.0, fractional_digits);
    return meter_reading{frame.timestamp_ms, value, confidence, reading_provenance::ocr};
}

// ---------------------------------------------------------------------------
// Timeline voting

struct timeline_options {
    double resolution_kwh = default_meter_resolution_kwh;
    double min_confidence = 0.0;
    double max_step_kwh = 0.0;  // largest plausible rise between kept readings; 0 disables
    bool median_filter = true;
};

/// Builds a clean, non-decreasing timeline out of raw frame readings:
/// confidence gating, a 3-window median over interior readings (endpoints
/// pass through unchanged), then a greedy monotone filter. Throws when
/// nothing survives.
inline meter_timeline build_timeline(std::vector<meter_reading> readings,
                                     timeline_options options = {}) {
    std::erase_if(readings,
                  [&](const meter_reading& r) { return r.confidence < options.min_confidence; });
    std::sort(readings.begin(), readings.end(),
              [](const meter_reading& a, const meter_reading& b) {
                  return a.timestamp_ms < b.timestamp_ms;
              });

    if (options.median_filter && readings.size() >= 3) {
        std::vector<meter_reading> voted = readings;
        for (std::size_t i = 1; i + 1 < readings.size(); ++i) {
            std::array<double, 3> window = {readings[i - 1].cumulative_kwh,
                                            readings[i].cumulative_kwh,
                                            readings[i + 1].cumulative_kwh};
            std::sort(window.begin(), window.end());
            voted[i].cumulative_kwh = window[1];
        }
        readings = std::move(voted);
    }

    meter_timeline timeline;
    timeline.resolution_kwh = options.resolution_kwh;
    for (const auto& r : readings) {
        if (!timeline.readings.empty()) {
            const double step = r.cumulative_kwh - timeline.readings.back().cumulative_kwh;
            if (step < 0) continue;  // meters never run backwards
            if (options.max_step_kwh > 0 && step > options.max_step_kwh) continue;
        }
        timeline.readings.push_back(r);
    }
    if (timeline.readings.empty()) throw error("meter timeline: no readings survived filtering");
    return timeline;
}

// ---------------------------------------------------------------------------
// Ground truth

struct ground_truth_result {
    double energy_ws = 0.0;
    double uncertainty_ws = 0.0;  // 2 x resolution, both endpoint readings quantized
    meter_reading start_reading;
    meter_reading end_reading;
};

/// Differences the nearest reading at or before the run start against the
/// nearest at or after the run end. clock_offset_s shifts meter timestamps
/// onto the host clock (host = meter + offset).
inline ground_truth_result ground_truth_energy(const meter_timeline& timeline,
                                               std::int64_t start_ms, std::int64_t end_ms,
                                               double clock_offset_s = 0.0) {
    if (timeline.readings.empty()) throw error("ground truth: empty meter timeline");
    if (end_ms < start_ms) throw error("ground truth: run ends before it starts");
    const auto offset_ms = static_cast<std::int64_t>(std::llround(clock_offset_s * 1000.0));

    const meter_reading* start_reading = nullptr;
    const meter_reading* end_reading = nullptr;
    for (const auto& r : timeline.readings) {
        const std::int64_t t = r.timestamp_ms + offset_ms;
        if (t <= start_ms) start_reading = &r;
        if (t >= end_ms && !end_reading) end_reading = &r;
    }
    if (!start_reading) throw error("ground truth: no meter reading at or before run start");
    if (!end_reading) throw error("ground truth: no meter reading at or after run end");

    ground_truth_result result;
    result.start_reading = *start_reading;
    result.end_reading = *end_reading;
    result.energy_ws =
        kwh_to_ws(end_reading->cumulative_kwh - start_reading->cumulative_kwh);
    result.uncertainty_ws = 2.0 * kwh_to_ws(timeline.resolution_kwh);
    return result;
}

// ---------------------------------------------------------------------------
// Evidence ingestion

/// Reading files carry externally logged meter state: one
/// "<epoch_seconds> <cumulative_kwh>" record per line, '#' comments.
inline std::vector<meter_reading> load_reading_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw error("cannot open reading file: " + path.string());
    std::vector<meter_reading> readings;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        std::istringstream fields(line);
        double seconds = 0, kwh = 0;
        if (!(fields >> seconds)) continue;
        if (!(fields >> kwh) || kwh < 0)
            throw parse_error(path.string() + ":" + std::to_string(line_no) +
                              ": expected '<epoch_seconds> <cumulative_kwh>'");
        readings.push_back({static_cast<std::int64_t>(std::llround(seconds * 1000.0)), kwh, 1.0,
                            reading_provenance::file});
    }
    return readings;
}

/// Loads camera frames from a directory. Each frame is <epoch_millis>.pgm;
/// alternatively a manifest.txt of "<epoch_millis> <relative_path>" lines
/// maps arbitrary file names to capture times.
inline std::vector<meter_frame> load_frames(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw error("frame directory not found: " + dir.string());
    std::vector<meter_frame> frames;

    const auto manifest = dir / "manifest.txt";
    if (fs::exists(manifest)) {
        std::ifstream in(manifest);
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
            std::istringstream fields(line);
            std::int64_t millis = 0;
            std::string name;
            if (!(fields >> millis)) continue;
            if (!(fields >> name))
                throw parse_error(manifest.string() + ":" + std::to_string(line_no) +
                                  ": expected '<epoch_millis> <file>'");
            frames.push_back({millis, load_pgm(dir / name)});
        }
    } else {
        for (const auto& entry : fs::directory_iterator(dir)) {
            if (entry.path().extension() != ".pgm") continue;
            const std::string stem = entry.path().stem().string();
            std::int64_t millis = 0;
            try {
                std::size_t consumed = 0;
                millis = std::stoll(stem, &consumed);
                if (consumed != stem.size()) continue;
            } catch (const std::exception&) {
                continue;  // unrelated file
            }
            frames.push_back({millis, load_pgm(entry.path())});
        }
        if (frames.empty())
            throw error("no <epoch_millis>.pgm frames or manifest.txt in " + dir.string());
    }
    std::sort(frames.begin(), frames.end(),
              [](const meter_frame& a, const meter_frame& b) {
                  return a.timestamp_ms < b.timestamp_ms;
              });
    return frames;
}

/// Frames directory -> raw readings (silently dropping undecodable frames).
inline std::vector<meter_reading> decode_frames(const std::vector<meter_frame>& frames,
                                                const display_layout& layout,
                                                const digit_decoder& decoder = segment_decoder{}) {
    std::vector<meter_reading> readings;
    for (const auto& frame : frames)
        if (auto reading = read_frame(frame, layout, decoder)) readings.push_back(*reading);
    return readings;
}

// ---------------------------------------------------------------------------
// Layout files: "key = value" documents.

display_layout load_layout(const std::filesystem::path& path);  // defined in kv glue below

inline void save_layout(const std::filesystem::path& path, const display_layout& layout) {
    std::ofstream out(path);
    if (!out) throw error("cannot write layout: " + path.string());
    out << "# display layout\n"
        << "box_x = " << layout.box_x << "\n"
        << "box_y = " << layout.box_y << "\n"
        << "box_w = " << layout.box_w << "\n"
        << "box_h = " << layout.box_h << "\n"
        << "digit_count = " << layout.digit_count << "\n"
        << "decimal_position = " << layout.decimal_position << "\n"
        << "invert = " << (layout.invert ? "true" : "false") << "\n";
}

}  // namespace wattscope

#include "wattscope/kvfile.hpp"

namespace wattscope {

inline display_layout load_layout(const std::filesystem::path& path) {
    const auto doc = kv_document::parse_file(path);
    display_layout layout;
    layout.box_x = static_cast<int>(doc.require_integer("box_x"));
    layout.box_y = static_cast<int>(doc.require_integer("box_y"));
    layout.box_w = static_cast<int>(doc.require_integer("box_w"));
    layout.box_h = static_cast<int>(doc.require_integer("box_h"));
    layout.digit_count = static_cast<int>(doc.require_integer("digit_count"));
    layout.decimal_position = static_cast<int>(doc.require_integer("decimal_position"));
    layout.invert = doc.get_bool("invert", false);
    validate_layout(layout);
    return layout;
}

}  // namespace wattscope
