#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "moyun/core/rng.hpp"
#include "moyun/data/image.hpp"
#include "moyun/data/png_io.hpp"

namespace moyun {

// Procedurally generated stand-in corpus: simple stroke glyphs rendered in a
// few "hands" (calligrapher transforms) and "scripts" (font decorations).
// Small enough to train the desk-scale model on, structured enough that a
// nearest-centroid classifier can check character and style fidelity.

namespace synth {

struct Segment {
    double x0, y0, x1, y1;  // unit coordinates, (0,0) top-left
};
using Glyph = std::vector<Segment>;

inline const std::vector<std::pair<std::string, Glyph>>& glyphs() {
    static const std::vector<std::pair<std::string, Glyph>> table = {
        {"glyph_h", {{0.2, 0.1, 0.2, 0.9}, {0.8, 0.1, 0.8, 0.9}, {0.2, 0.5, 0.8, 0.5}}},
        {"glyph_x", {{0.15, 0.1, 0.85, 0.9}, {0.85, 0.1, 0.15, 0.9}}},
        {"glyph_o", {{0.2, 0.15, 0.8, 0.15}, {0.8, 0.15, 0.8, 0.85},
                     {0.8, 0.85, 0.2, 0.85}, {0.2, 0.85, 0.2, 0.15}}},
        {"glyph_t", {{0.15, 0.15, 0.85, 0.15}, {0.5, 0.15, 0.5, 0.9}}},
        {"glyph_z", {{0.2, 0.15, 0.8, 0.15}, {0.8, 0.15, 0.2, 0.85}, {0.2, 0.85, 0.8, 0.85}}},
        {"glyph_l", {{0.25, 0.1, 0.25, 0.85}, {0.25, 0.85, 0.85, 0.85}}},
        {"glyph_plus", {{0.5, 0.12, 0.5, 0.88}, {0.12, 0.5, 0.88, 0.5}}},
        {"glyph_slash", {{0.8, 0.1, 0.2, 0.9}}},
        {"glyph_eq", {{0.15, 0.3, 0.85, 0.3}, {0.15, 0.7, 0.85, 0.7}}},
        {"glyph_u", {{0.2, 0.1, 0.2, 0.8}, {0.2, 0.8, 0.8, 0.8}, {0.8, 0.8, 0.8, 0.1}}},
    };
    return table;
}

// A calligrapher is a coordinate map plus a pen-width offset.
struct Hand {
    std::string name;
    int thickness_delta;
    double (*map_x)(double x, double y);
    double (*map_y)(double x, double y);
};

inline const std::vector<Hand>& hands() {
    static const std::vector<Hand> table = {
        {"wang", 0, [](double x, double) { return x; }, [](double, double y) { return y; }},
        {"yan", 1, [](double x, double) { return x; }, [](double, double y) { return y; }},
        {"liu", 0, [](double x, double y) { return x + 0.35 * (y - 0.5); },
         [](double, double y) { return y; }},
        {"zhao", 0, [](double x, double) { return 0.5 + 0.85 * (x - 0.5); },
         [](double, double y) { return 0.5 + 0.85 * (y - 0.5); }},
    };
    return table;
}

// A font adds decoration and a slight layout change.
enum class FontStyle { regular, running, cursive };

inline const std::vector<std::pair<std::string, FontStyle>>& fonts() {
    static const std::vector<std::pair<std::string, FontStyle>> table = {
        {"regular", FontStyle::regular},
        {"running", FontStyle::running},
        {"cursive", FontStyle::cursive},
    };
    return table;
}

inline void draw_disk(GrayImage& img, int cx, int cy, int radius, uint8_t value) {
    for (int dy = -radius; dy <= radius; ++dy) {
        for (int dx = -radius; dx <= radius; ++dx) {
            if (dx * dx + dy * dy > radius * radius) continue;
            int x = cx + dx, y = cy + dy;
            if (x >= 0 && y >= 0 && x < img.width && y < img.height) img.at(y, x) = value;
        }
    }
}

inline void draw_segment(GrayImage& img, double x0, double y0, double x1, double y1,
                         int radius, uint8_t value) {
    double len = std::hypot(x1 - x0, y1 - y0);
    int steps = std::max(1, static_cast<int>(std::ceil(len * 2.0)));
    for (int s = 0; s <= steps; ++s) {
        double t = double(s) / steps;
        draw_disk(img, static_cast<int>(std::lround(x0 + t * (x1 - x0))),
                  static_cast<int>(std::lround(y0 + t * (y1 - y0))), radius, value);
    }
}

// Binary render (ink=0, paper=255) of one (hand, font, glyph) triple with
// seeded per-endpoint jitter of at most one pixel.
inline GrayImage render_glyph(const Glyph& glyph, const Hand& hand, FontStyle font,
                              int side, uint64_t seed) {
    GrayImage img(side, side, 255);
    Rng rng(seed);
    const double margin = 0.08 * side;
    const double span = side - 2.0 * margin;
    const int radius = std::max(2, side / 16) + hand.thickness_delta;
    double shift = font == FontStyle::cursive ? -0.06 : 0.0;  // cursive sits higher
    for (const Segment& s : glyph) {
        double jx0 = rng.uniform_int(-1, 1), jy0 = rng.uniform_int(-1, 1);
        double jx1 = rng.uniform_int(-1, 1), jy1 = rng.uniform_int(-1, 1);
        double x0 = margin + span * hand.map_x(s.x0, s.y0) + jx0;
        double y0 = margin + span * (hand.map_y(s.x0, s.y0) + shift) + jy0;
        double x1 = margin + span * hand.map_x(s.x1, s.y1) + jx1;
        double y1 = margin + span * (hand.map_y(s.x1, s.y1) + shift) + jy1;
        draw_segment(img, x0, y0, x1, y1, radius, 0);
    }
    if (font == FontStyle::running) {
        // underline bar
        double y = margin + span * (hand.map_y(0.5, 0.97));
        draw_segment(img, margin + span * 0.15, y, margin + span * 0.85, y, radius, 0);
    } else if (font == FontStyle::cursive) {
        // corner dot
        draw_disk(img, static_cast<int>(margin + span * 0.92),
                  static_cast<int>(margin + span * 0.9), radius + 1, 0);
    }
    return img;
}

}  // namespace synth

// Grayscale "photograph" of a glyph: noisy ink (~30) on noisy paper (~220),
// any canvas size. Exercises the full Otsu -> segment -> normalize pipeline.
inline GrayImage render_noisy_calligraphy(const synth::Glyph& glyph, const synth::Hand& hand,
                                          synth::FontStyle font, int width, int height,
                                          uint64_t seed) {
    int side = std::min(width, height);
    GrayImage mask = synth::render_glyph(glyph, hand, font, side, seed);
    GrayImage img(width, height);
    Rng rng(seed + 1);
    int ox = (width - side) / 2, oy = (height - side) / 2;
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            bool ink = x >= ox && y >= oy && x < ox + side && y < oy + side &&
                       mask.at(y - oy, x - ox) == 0;
            double v = (ink ? 30.0 : 220.0) + 20.0 * rng.normal();
            img.at(y, x) = static_cast<uint8_t>(std::clamp(v, 0.0, 255.0));
        }
    }
    return img;
}

// Write the full synthetic corpus in the calligrapher/font/character layout.
// Returns the number of images written.
inline int write_synth_corpus(const std::filesystem::path& root, int images_per_triple = 40,
                              int side = 32, uint64_t seed = 7) {
    int written = 0;
    for (const auto& hand : synth::hands()) {
        for (const auto& [font_name, font] : synth::fonts()) {
            for (const auto& [char_name, glyph] : synth::glyphs()) {
                std::filesystem::path dir = root / hand.name / font_name / char_name;
                std::filesystem::create_directories(dir);
                for (int i = 0; i < images_per_triple; ++i) {
                    uint64_t s = seed + 131 * written + i;
                    GrayImage img = synth::render_glyph(glyph, hand, font, side, s);
                    char name[16];
                    std::snprintf(name, sizeof(name), "%02d.png", i);
                    save_png_gray((dir / name).string(), img);
                    ++written;
                }
            }
        }
    }
    return written;
}

}  // namespace moyun
