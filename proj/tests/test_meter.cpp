#include "wattscope/meter.hpp"

#include <catch2/catch_amalgamated.hpp>

#include "wattscope/simulate.hpp"

#include <filesystem>
#include <fstream>
#include <random>

using namespace wattscope;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("wattscope_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("otsu separates a bimodal image") {
    gray_image img(64, 64, 40);
    for (int y = 20; y < 44; ++y)
        for (int x = 20; x < 44; ++x) img.at(x, y) = 200;
    const int threshold = otsu_threshold(img);
    CHECK(threshold >= 40);
    CHECK(threshold < 200);

    const auto binary = binarize(img, threshold);
    CHECK(binary.at(0, 0) == 0);
    CHECK(binary.at(32, 32) == 1);

    const auto inverted = binarize(img, threshold, /*invert=*/true);
    CHECK(inverted.at(0, 0) == 1);
    CHECK(inverted.at(32, 32) == 0);

    CHECK_THROWS_AS(otsu_threshold(gray_image{}), error);
}

TEST_CASE("every digit decodes from a rendered display") {
    const auto layout = make_layout(1, 1);  // one digit, no decimal part
    const segment_decoder decoder;
    for (int digit = 0; digit <= 9; ++digit) {
        const auto frame = render_frame(static_cast<double>(digit), layout);
        const auto cells = segment_display(frame, layout);
        REQUIRE(cells.size() == 1);
        const auto binary = binarize(cells[0], otsu_threshold(frame));
        const auto decoded = decoder.decode(binary);
        CAPTURE(digit);
        REQUIRE(decoded.has_value());
        CHECK(decoded->digit == digit);
        CHECK(decoded->confidence >= 1.0 / 7.0);  // margin of at least one segment
    }
}

TEST_CASE("a blank cell is rejected, not guessed") {
    const segment_decoder decoder;
    gray_image blank(36, 60, 0);
    // lit mask 0 is Hamming 2 from '1' (bc); distance > 1 must reject
    CHECK_FALSE(decoder.decode(blank).has_value());
}

TEST_CASE("frames read as cumulative kWh with the decimal point applied") {
    const auto layout = make_layout(4, 2);  // "12.34"
    const auto frame_img = render_frame(12.34, layout);
    const auto reading = read_frame({1234567, frame_img}, layout);
    REQUIRE(reading.has_value());
    CHECK(reading->cumulative_kwh == Catch::Approx(12.34).margin(1e-9));
    CHECK(reading->timestamp_ms == 1234567);
    CHECK(reading->provenance == reading_provenance::ocr);
    CHECK(reading->confidence >= 1.0 / 7.0);

    // whole-kWh display
    const auto whole = make_layout(4, 4);
    const auto whole_reading = read_frame({1, render_frame(703.0, whole)}, whole);
    REQUIRE(whole_reading.has_value());
    CHECK(whole_reading->cumulative_kwh == Catch::Approx(703.0).margin(1e-9));
}

TEST_CASE("frame reading survives rotation and noise") {
    const auto layout = make_layout(4, 2);
    std::mt19937_64 rng(51);
    render_options opts;
    opts.rotation_deg = 2.0;
    opts.noise_sigma = 10.0;
    const auto frame_img = render_frame(8.76, layout, opts, &rng);
    const auto reading = read_frame({42, frame_img}, layout);
    REQUIRE(reading.has_value());
    CHECK(reading->cumulative_kwh == Catch::Approx(8.76).margin(1e-9));
}

TEST_CASE("frame diagnostics report threshold, digits, and contrast") {
    const auto layout = make_layout(4, 2);
    frame_diagnostics diag;
    const auto reading = read_frame({1, render_frame(10.42, layout)}, layout,
                                    segment_decoder{}, &diag);
    REQUIRE(reading.has_value());
    CHECK(diag.digits == std::vector<int>{1, 0, 4, 2});
    CHECK_FALSE(diag.low_contrast);
    CHECK(diag.threshold >= 40);
    CHECK(diag.threshold < 200);

    gray_image flat(layout.box_x * 2 + layout.box_w, layout.box_y * 2 + layout.box_h, 100);
    frame_diagnostics flat_diag;
    read_frame({2, flat}, layout, segment_decoder{}, &flat_diag);
    CHECK(flat_diag.low_contrast);
}

TEST_CASE("segment_display needs the box inside the frame") {
    display_layout layout = make_layout(4, 2);
    gray_image small(layout.box_w / 2, layout.box_h, 0);
    CHECK_THROWS_WITH(segment_display(small, layout),
                      Catch::Matchers::ContainsSubstring("display box"));

    display_layout bad = layout;
    bad.decimal_position = 9;
    CHECK_THROWS_AS(validate_layout(bad), error);
    bad = layout;
    bad.digit_count = 0;
    CHECK_THROWS_AS(validate_layout(bad), error);
}

TEST_CASE("template classifier learns digits from labeled cells") {
    const auto layout = make_layout(1, 1);
    std::vector<std::pair<gray_image, int>> labeled;
    std::mt19937_64 rng(52);
    for (int digit = 0; digit <= 9; ++digit) {
        for (int rep = 0; rep < 3; ++rep) {
            render_options opts;
            opts.noise_sigma = rep == 0 ? 0.0 : 6.0;
            const auto frame = render_frame(digit, layout, opts, &rng);
            const auto cells = segment_display(frame, layout);
            labeled.push_back({binarize(cells[0], otsu_threshold(frame)), digit});
        }
    }
    template_classifier classifier;
    classifier.train(labeled);

    for (int digit = 0; digit <= 9; ++digit) {
        const auto frame = render_frame(digit, layout);
        const auto cells = segment_display(frame, layout);
        const auto decoded = classifier.decode(binarize(cells[0], otsu_threshold(frame)));
        REQUIRE(decoded.has_value());
        CHECK(decoded->digit == digit);
    }

    template_classifier untrained;
    CHECK_THROWS_AS(untrained.decode(gray_image(8, 12, 0)), error);
    CHECK_THROWS_AS(classifier.train({{gray_image(8, 12, 0), 10}}), error);
}

TEST_CASE("timeline voting keeps already-clean readings unchanged") {
    std::vector<meter_reading> readings;
    const double values[] = {1.00, 1.01, 1.01, 1.02};
    std::int64_t ts = 1000;
    for (const double v : values)
        readings.push_back({ts += 1000, v, 1.0, reading_provenance::ocr});

    const auto timeline = build_timeline(readings);
    REQUIRE(timeline.readings.size() == 4);
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(timeline.readings[i].cumulative_kwh == values[i]);
}

TEST_CASE("timeline voting removes isolated glitches") {
    std::vector<meter_reading> readings;
    std::int64_t ts = 0;
    for (const double v : {1.00, 1.01, 9.99, 1.02, 1.03})
        readings.push_back({ts += 500, v, 1.0, reading_provenance::ocr});
    const auto timeline = build_timeline(readings);
    REQUIRE(timeline.readings.size() == 5);
    CHECK(timeline.readings[2].cumulative_kwh == 1.02);  // median of 1.01, 9.99, 1.02

    // a downward glitch is first median-voted, and anything left that would
    // run the meter backwards is dropped
    readings.clear();
    ts = 0;
    for (const double v : {2.00, 2.01, 0.33, 2.02, 2.02})
        readings.push_back({ts += 500, v, 1.0, reading_provenance::ocr});
    const auto cleaned = build_timeline(readings);
    for (std::size_t i = 1; i < cleaned.readings.size(); ++i)
        CHECK(cleaned.readings[i].cumulative_kwh >= cleaned.readings[i - 1].cumulative_kwh);
}

TEST_CASE("timelines are monotone under random glitches") {
    std::mt19937_64 rng(53);
    std::uniform_real_distribution<double> step(0.0, 0.02);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_real_distribution<double> garbage(0.0, 99.99);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<meter_reading> readings;
        double kwh = 10.0 * unit(rng);
        std::int64_t ts = 0;
        for (int i = 0; i < 100; ++i) {
            kwh += step(rng);
            const bool glitch = unit(rng) < 0.05;
            readings.push_back({ts += 1000, glitch ? garbage(rng) : kwh, 1.0,
                                reading_provenance::ocr});
        }
        const auto timeline = build_timeline(readings);
        REQUIRE(!timeline.readings.empty());
        for (std::size_t i = 1; i < timeline.readings.size(); ++i) {
            CAPTURE(trial, i);
            CHECK(timeline.readings[i].cumulative_kwh >=
                  timeline.readings[i - 1].cumulative_kwh);
        }
    }
}

TEST_CASE("timeline options gate confidence and step size") {
    std::vector<meter_reading> readings = {
        {1000, 1.00, 0.9, reading_provenance::ocr},
        {2000, 1.01, 0.1, reading_provenance::ocr},  // low confidence
        {3000, 1.02, 0.9, reading_provenance::ocr},
    };
    timeline_options options;
    options.min_confidence = 0.5;
    options.median_filter = false;
    const auto timeline = build_timeline(readings, options);
    CHECK(timeline.readings.size() == 2);

    // max step: a huge jump is dropped even if monotone
    std::vector<meter_reading> jumping = {
        {1000, 1.00, 1.0, reading_provenance::ocr},
        {2000, 7.00, 1.0, reading_provenance::ocr},
        {3000, 1.01, 1.0, reading_provenance::ocr},
    };
    timeline_options stepped;
    stepped.median_filter = false;
    stepped.max_step_kwh = 0.5;
    const auto filtered = build_timeline(jumping, stepped);
    REQUIRE(filtered.readings.size() == 2);
    CHECK(filtered.readings[1].cumulative_kwh == 1.01);

    timeline_options impossible;
    impossible.min_confidence = 2.0;
    CHECK_THROWS_AS(build_timeline(readings, impossible), error);
    CHECK_THROWS_AS(build_timeline({}, {}), error);
}

TEST_CASE("ground truth differences bracketing readings") {
    meter_timeline timeline;
    timeline.resolution_kwh = 0.01;
    timeline.readings = {
        {10'000, 5.00, 1.0, reading_provenance::file},
        {20'000, 5.02, 1.0, reading_provenance::file},
        {30'000, 5.05, 1.0, reading_provenance::file},
        {40'000, 5.07, 1.0, reading_provenance::file},
    };

    // start 12 s, end 33 s: start reading is 10 s (at-or-before), end is 40 s
    const auto result = ground_truth_energy(timeline, 12'000, 33'000);
    CHECK(result.energy_ws == Catch::Approx(kwh_to_ws(0.07)).epsilon(1e-12));
    CHECK(result.uncertainty_ws == Catch::Approx(2 * kwh_to_ws(0.01)).epsilon(1e-12));
    CHECK(result.start_reading.timestamp_ms == 10'000);
    CHECK(result.end_reading.timestamp_ms == 40'000);

    // exact matches count as at-or-before / at-or-after
    const auto exact = ground_truth_energy(timeline, 20'000, 30'000);
    CHECK(exact.energy_ws == Catch::Approx(kwh_to_ws(0.03)).epsilon(1e-12));

    CHECK_THROWS_AS(ground_truth_energy(timeline, 5'000, 30'000), error);   // nothing before
    CHECK_THROWS_AS(ground_truth_energy(timeline, 12'000, 50'000), error);  // nothing after
    CHECK_THROWS_AS(ground_truth_energy(timeline, 30'000, 20'000), error);  // reversed
    CHECK_THROWS_AS(ground_truth_energy(meter_timeline{}, 0, 1), error);
}

TEST_CASE("meter clock offset shifts readings onto the host clock") {
    meter_timeline timeline;
    timeline.readings = {
        {0, 1.00, 1.0, reading_provenance::file},
        {10'000, 1.10, 1.0, reading_provenance::file},
    };
    // meter clock runs 5 s behind the host: host = meter + 5 s
    const auto result = ground_truth_energy(timeline, 5'000, 15'000, 5.0);
    CHECK(result.energy_ws == Catch::Approx(kwh_to_ws(0.10)).epsilon(1e-12));
    // without the offset the run start has no reading at-or-before it... it
    // does at ts 0, but the end at 15 s has none at-or-after
    CHECK_THROWS_AS(ground_truth_energy(timeline, 5'000, 15'000), error);
}

TEST_CASE("reading files parse epoch seconds and kWh") {
    const auto dir = temp_dir("readings");
    const auto path = dir / "meter.txt";
    {
        std::ofstream out(path);
        out << "# epoch_seconds kwh\n"
            << "1700000000 12.00\n"
            << "1700000030.5 12.01\n"
            << "\n"
            << "1700000060 12.02 # done\n";
    }
    const auto readings = load_reading_file(path);
    REQUIRE(readings.size() == 3);
    CHECK(readings[0].timestamp_ms == 1'700'000'000'000);
    CHECK(readings[1].timestamp_ms == 1'700'000'030'500);
    CHECK(readings[1].cumulative_kwh == 12.01);
    CHECK(readings[2].provenance == reading_provenance::file);

    {
        std::ofstream out(path);
        out << "1700000000 12.00\n1700000030\n";
    }
    CHECK_THROWS_WITH(load_reading_file(path), Catch::Matchers::ContainsSubstring(":2"));
    CHECK_THROWS_AS(load_reading_file(dir / "absent.txt"), error);
}

TEST_CASE("frame directories load by stem or manifest") {
    const auto layout = make_layout(4, 2);
    const auto dir = temp_dir("frames_stem");
    save_pgm(dir / "1700000000000.pgm", render_frame(1.00, layout));
    save_pgm(dir / "1700000005000.pgm", render_frame(1.01, layout));
    {
        std::ofstream junk(dir / "notes.txt");
        junk << "unrelated\n";
    }
    const auto frames = load_frames(dir);
    REQUIRE(frames.size() == 2);
    CHECK(frames[0].timestamp_ms == 1'700'000'000'000);
    CHECK(frames[1].timestamp_ms == 1'700'000'005'000);

    const auto readings = decode_frames(frames, layout);
    REQUIRE(readings.size() == 2);
    CHECK(readings[0].cumulative_kwh == Catch::Approx(1.00).margin(1e-9));
    CHECK(readings[1].cumulative_kwh == Catch::Approx(1.01).margin(1e-9));

    const auto manifest_dir = temp_dir("frames_manifest");
    save_pgm(manifest_dir / "a.pgm", render_frame(2.00, layout));
    save_pgm(manifest_dir / "b.pgm", render_frame(2.02, layout));
    {
        std::ofstream manifest(manifest_dir / "manifest.txt");
        manifest << "# millis file\n2000 b.pgm\n1000 a.pgm\n";
    }
    const auto mapped = load_frames(manifest_dir);
    REQUIRE(mapped.size() == 2);
    CHECK(mapped[0].timestamp_ms == 1000);  // sorted by time, not file order

    const auto empty_dir = temp_dir("frames_empty");
    CHECK_THROWS_AS(load_frames(empty_dir), error);
    CHECK_THROWS_AS(load_frames(empty_dir / "missing"), error);
}

TEST_CASE("layout files round trip") {
    const auto dir = temp_dir("layout");
    const auto path = dir / "layout.cfg";
    const auto layout = make_layout(6, 3);
    save_layout(path, layout);
    const auto loaded = load_layout(path);
    CHECK(loaded == layout);

    {
        std::ofstream out(path);
        out << "box_x = 0\nbox_y = 0\nbox_w = 100\nbox_h = 50\n";  // missing digit fields
    }
    CHECK_THROWS_AS(load_layout(path), parse_error);
}
