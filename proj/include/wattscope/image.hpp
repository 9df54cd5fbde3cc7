// Minimal grayscale raster support: PGM load/save and rotation, enough for
// seven-segment meter frames.
#pragma once

#include "wattscope/types.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace wattscope {

/// Row-major 8-bit grayscale raster.
struct gray_image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;  // width * height intensities in [0,255]

    gray_image() = default;
    gray_image(int w, int h, std::uint8_t fill = 0)
        : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}

    bool empty() const { return width <= 0 || height <= 0 || pixels.empty(); }

    std::uint8_t at(int x, int y) const {
        return pixels[static_cast<std::size_t>(y) * width + x];
    }
    std::uint8_t& at(int x, int y) {
        return pixels[static_cast<std::size_t>(y) * width + x];
    }

    friend bool operator==(const gray_image&, const gray_image&) = default;
};

namespace detail {

inline int next_pnm_int(std::istream& in, const std::string& origin) {
    // Skips whitespace and '#' comments between header tokens.
    int c;
    while ((c = in.peek()) != EOF) {
        if (c == '#') {
            std::string skip;
            std::getline(in, skip);
        } else if (std::isspace(c)) {
            in.get();
        } else {
            break;
        }
    }
    int value = 0;
    if (!(in >> value)) throw parse_error(origin + ": truncated PGM header");
    return value;
}

}  // namespace detail

/// Reads a P2 (ASCII) or P5 (binary) PGM file.
inline gray_image load_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw error("cannot open image: " + path.string());
    std::string magic;
    in >> magic;
    if (magic != "P2" && magic != "P5")
        throw parse_error(path.string() + ": not a PGM file (magic '" + magic + "')");
    const int width = detail::next_pnm_int(in, path.string());
    const int height = detail::next_pnm_int(in, path.string());
    const int maxval = detail::next_pnm_int(in, path.string());
    if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 255)
        throw parse_error(path.string() + ": unsupported PGM geometry");
    gray_image img(width, height);
    if (magic == "P5") {
        in.get();  // single whitespace after maxval
        in.read(reinterpret_cast<char*>(img.pixels.data()),
                static_cast<std::streamsize>(img.pixels.size()));
        if (in.gcount() != static_cast<std::streamsize>(img.pixels.size()))
            throw parse_error(path.string() + ": truncated PGM pixel data");
    } else {
        for (auto& px : img.pixels) {
            int v = 0;
            if (!(in >> v)) throw parse_error(path.string() + ": truncated PGM pixel data");
            px = static_cast<std::uint8_t>(std::clamp(v, 0, 255));
        }
    }
    if (maxval != 255)
        for (auto& px : img.pixels)
            px = static_cast<std::uint8_t>(px * 255 / maxval);
    return img;
}

inline void save_pgm(const std::filesystem::path& path, const gray_image& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw error("cannot write image: " + path.string());
    out << "P5\n" << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()),
              static_cast<std::streamsize>(img.pixels.size()));
    if (!out) throw error("failed writing image: " + path.string());
}

/// Rotates the image by `degrees` (counter-clockwise) about (cx, cy) with
/// bilinear resampling; pixels from outside take `fill`.
inline gray_image rotate_about(const gray_image& src, double degrees, double cx, double cy,
                               std::uint8_t fill = 0) {
    gray_image dst(src.width, src.height, fill);
    const double rad = degrees * std::acos(-1.0) / 180.0;
    const double c = std::cos(rad), s = std::sin(rad);
    for (int y = 0; y < src.height; ++y) {
        for (int x = 0; x < src.width; ++x) {
            // inverse map: rotate destination pixel back into the source
            const double dx = x - cx, dy = y - cy;
            const double sx = cx + c * dx + s * dy;
            const double sy = cy - s * dx + c * dy;
            const int x0 = static_cast<int>(std::floor(sx));
            const int y0 = static_cast<int>(std::floor(sy));
            if (x0 < -1 || y0 < -1 || x0 > src.width - 1 || y0 > src.height - 1) continue;
            const double fx = sx - x0, fy = sy - y0;
            auto sample = [&](int xi, int yi) -> double {
                if (xi < 0 || yi < 0 || xi >= src.width || yi >= src.height) return fill;
                return src.at(xi, yi);
            };
            const double v = sample(x0, y0) * (1 - fx) * (1 - fy) +
                             sample(x0 + 1, y0) * fx * (1 - fy) +
                             sample(x0, y0 + 1) * (1 - fx) * fy +
                             sample(x0 + 1, y0 + 1) * fx * fy;
            dst.at(x, y) = static_cast<std::uint8_t>(std::clamp(v + 0.5, 0.0, 255.0));
        }
    }
    return dst;
}

}  // namespace wattscope
