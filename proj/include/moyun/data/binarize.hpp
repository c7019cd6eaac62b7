#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "moyun/core/rng.hpp"
#include "moyun/data/image.hpp"

namespace moyun {

struct OtsuResult {
    int threshold = 0;      // foreground = pixels with intensity <= threshold
    BinaryMask mask;        // 1 marks foreground (the darker class, ink)
};

// Global threshold maximizing between-class variance over the histogram.
// A constant image yields an empty foreground with threshold = the constant.
inline OtsuResult otsu_threshold(const GrayImage& img) {
    if (img.size() == 0) throw std::invalid_argument("otsu_threshold: empty image");
    std::array<int64_t, 256> hist{};
    for (uint8_t p : img.pixels) ++hist[p];
    const int64_t total = static_cast<int64_t>(img.size());

    double sum_all = 0.0;
    for (int i = 0; i < 256; ++i) sum_all += double(i) * double(hist[i]);

    int best_t = -1;
    double best_var = 0.0;
    int64_t w0 = 0;
    double sum0 = 0.0;
    for (int t = 0; t < 256; ++t) {
        w0 += hist[t];
        sum0 += double(t) * double(hist[t]);
        int64_t w1 = total - w0;
        if (w0 == 0 || w1 == 0) continue;
        double mu0 = sum0 / double(w0);
        double mu1 = (sum_all - sum0) / double(w1);
        double var = double(w0) * double(w1) * (mu0 - mu1) * (mu0 - mu1);
        if (var > best_var) {
            best_var = var;
            best_t = t;
        }
    }

    OtsuResult res;
    res.mask = BinaryMask(img.width, img.height, 0);
    if (best_t < 0) {
        // constant image
        res.threshold = img.pixels[0];
        return res;
    }
    res.threshold = best_t;
    for (size_t i = 0; i < img.size(); ++i)
        res.mask.pixels[i] = img.pixels[i] <= best_t ? 1 : 0;
    return res;
}

struct Region {
    std::vector<Point> pixels;
    int64_t area() const { return static_cast<int64_t>(pixels.size()); }
};

// 8-connected foreground components with area strictly greater than min_area.
inline std::vector<Region> extract_regions(const BinaryMask& mask, int64_t min_area = 100) {
    std::vector<Region> out;
    std::vector<uint8_t> seen(mask.size(), 0);
    const int w = mask.width, h = mask.height;
    for (int sy = 0; sy < h; ++sy) {
        for (int sx = 0; sx < w; ++sx) {
            size_t si = static_cast<size_t>(sy) * w + sx;
            if (!mask.pixels[si] || seen[si]) continue;
            Region r;
            std::deque<Point> queue{{sx, sy}};
            seen[si] = 1;
            while (!queue.empty()) {
                Point p = queue.front();
                queue.pop_front();
                r.pixels.push_back(p);
                for (int dy = -1; dy <= 1; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        if (dx == 0 && dy == 0) continue;
                        int nx = p.x + dx, ny = p.y + dy;
                        if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
                        size_t ni = static_cast<size_t>(ny) * w + nx;
                        if (mask.pixels[ni] && !seen[ni]) {
                            seen[ni] = 1;
                            queue.push_back({nx, ny});
                        }
                    }
                }
            }
            if (r.area() > min_area) out.push_back(std::move(r));
        }
    }
    return out;
}

// Positive (on-stroke) and negative (background) point prompts.
struct SegmenterPrompt {
    std::vector<Point> positives;
    std::vector<Point> negatives;
};

// Per-region positive point budget: clamp(floor(area * 100 / total), 1, 20).
inline int positive_point_count(int64_t region_area, int64_t image_area) {
    int64_t k = region_area * 100 / image_area;  // floor
    return static_cast<int>(std::clamp<int64_t>(k, 1, 20));
}

namespace detail {

// Seeded k-means++ over region pixels, 25 Lloyd iterations, centers snapped
// to the nearest pixel of the region.
inline std::vector<Point> kmeans_points(const std::vector<Point>& pts, int k, Rng& rng) {
    const int n = static_cast<int>(pts.size());
    if (k >= n) return pts;
    auto dist2 = [](const Point& a, double cx, double cy) {
        double dx = a.x - cx, dy = a.y - cy;
        return dx * dx + dy * dy;
    };
    std::vector<double> cx(k), cy(k);
    // k-means++ seeding
    int first = static_cast<int>(rng.uniform_int(0, n - 1));
    cx[0] = pts[first].x;
    cy[0] = pts[first].y;
    std::vector<double> d2(n);
    for (int c = 1; c < k; ++c) {
        double total = 0.0;
        for (int i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::max();
            for (int j = 0; j < c; ++j) best = std::min(best, dist2(pts[i], cx[j], cy[j]));
            d2[i] = best;
            total += best;
        }
        double r = rng.uniform() * total;
        int pick = n - 1;
        double acc = 0.0;
        for (int i = 0; i < n; ++i) {
            acc += d2[i];
            if (acc >= r) {
                pick = i;
                break;
            }
        }
        cx[c] = pts[pick].x;
        cy[c] = pts[pick].y;
    }
    std::vector<int> assign(n, 0);
    for (int iter = 0; iter < 25; ++iter) {
        for (int i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::max();
            for (int j = 0; j < k; ++j) {
                double d = dist2(pts[i], cx[j], cy[j]);
                if (d < best) {
                    best = d;
                    assign[i] = j;
                }
            }
        }
        std::vector<double> sx(k, 0.0), sy(k, 0.0);
        std::vector<int> cnt(k, 0);
        for (int i = 0; i < n; ++i) {
            sx[assign[i]] += pts[i].x;
            sy[assign[i]] += pts[i].y;
            ++cnt[assign[i]];
        }
        for (int j = 0; j < k; ++j) {
            if (cnt[j] > 0) {
                cx[j] = sx[j] / cnt[j];
                cy[j] = sy[j] / cnt[j];
            }
        }
    }
    // snap each center to the nearest region pixel
    std::vector<Point> out(k);
    for (int j = 0; j < k; ++j) {
        double best = std::numeric_limits<double>::max();
        for (const Point& p : pts) {
            double d = dist2(p, cx[j], cy[j]);
            if (d < best) {
                best = d;
                out[j] = p;
            }
        }
    }
    return out;
}

}  // namespace detail

// Point prompts for a segmenter: k-means centers inside each region as
// positives (at most 20 overall, largest regions first), 50 seeded uniform
// background points as negatives (fewer only if the background is smaller).
inline SegmenterPrompt sample_prompt_points(const std::vector<Region>& regions,
                                            int image_width, int image_height,
                                            uint64_t seed) {
    if (regions.empty()) {
        throw std::invalid_argument(
            "sample_prompt_points: no regions; fall back to the Otsu mask");
    }
    if (image_width <= 0 || image_height <= 0) {
        throw std::invalid_argument("sample_prompt_points: image area must be positive");
    }
    const int64_t image_area = int64_t(image_width) * image_height;
    Rng rng(seed);

    // largest regions first so truncation at 20 keeps the dominant strokes
    std::vector<const Region*> order;
    for (const Region& r : regions) order.push_back(&r);
    std::stable_sort(order.begin(), order.end(),
                     [](const Region* a, const Region* b) { return a->area() > b->area(); });

    SegmenterPrompt prompt;
    for (const Region* r : order) {
        int k = positive_point_count(r->area(), image_area);
        for (const Point& p : detail::kmeans_points(r->pixels, k, rng)) {
            if (static_cast<int>(prompt.positives.size()) < 20)
                prompt.positives.push_back(p);
        }
    }

    BinaryMask covered(image_width, image_height, 0);
    for (const Region& r : regions)
        for (const Point& p : r.pixels) covered.at(p.y, p.x) = 1;
    std::vector<Point> background;
    for (int y = 0; y < image_height; ++y)
        for (int x = 0; x < image_width; ++x)
            if (!covered.at(y, x)) background.push_back({x, y});
    for (size_t i : rng.sample_without_replacement(background.size(), 50))
        prompt.negatives.push_back(background[i]);
    return prompt;
}

// Promptable segmenter contract: (image, positives, negatives) -> mask.
class Segmenter {
public:
    virtual ~Segmenter() = default;
    virtual BinaryMask segment(const GrayImage& image, const std::vector<Point>& positives,
                               const std::vector<Point>& negatives) = 0;
};

// Threshold-based stand-in: Otsu foreground restricted to the connected
// components containing at least one positive point.
class FallbackSegmenter : public Segmenter {
public:
    BinaryMask segment(const GrayImage& image, const std::vector<Point>& positives,
                       const std::vector<Point>& /*negatives*/) override {
        OtsuResult otsu = otsu_threshold(image);
        std::vector<Region> components = extract_regions(otsu.mask, 0);
        std::vector<int> label(image.size(), -1);
        for (size_t c = 0; c < components.size(); ++c)
            for (const Point& p : components[c].pixels)
                label[static_cast<size_t>(p.y) * image.width + p.x] = static_cast<int>(c);
        std::vector<uint8_t> keep(components.size(), 0);
        for (const Point& q : positives) {
            if (q.x < 0 || q.y < 0 || q.x >= image.width || q.y >= image.height) continue;
            int c = label[static_cast<size_t>(q.y) * image.width + q.x];
            if (c >= 0) keep[static_cast<size_t>(c)] = 1;
        }
        BinaryMask out(image.width, image.height, 0);
        for (size_t c = 0; c < components.size(); ++c)
            if (keep[c])
                for (const Point& p : components[c].pixels) out.at(p.y, p.x) = 1;
        return out;
    }
};

// Run the segmenter, adding context to failures.
inline BinaryMask segment(const GrayImage& image, const SegmenterPrompt& prompt,
                          Segmenter& segmenter) {
    try {
        BinaryMask mask = segmenter.segment(image, prompt.positives, prompt.negatives);
        if (mask.width != image.width || mask.height != image.height) {
            throw std::runtime_error("segmenter returned a mask of the wrong size");
        }
        return mask;
    } catch (const std::exception& e) {
        throw std::runtime_error(std::string("segmentation failed: ") + e.what());
    }
}

// Full pipeline: Otsu -> regions -> prompts -> segment -> black-on-white ->
// longer side to 256 (aspect preserved, nearest-neighbor, re-thresholded) ->
// centered on a 256x256 white canvas. Output values are exactly {0,255}.
inline GrayImage binarize_and_normalize(const GrayImage& image, Segmenter& segmenter,
                                        uint64_t seed,
                                        const std::string& input_name = "<image>") {
    OtsuResult otsu = otsu_threshold(image);
    std::vector<Region> regions = extract_regions(otsu.mask, 100);
    BinaryMask fg;
    if (regions.empty()) {
        fg = otsu.mask;  // prompt selection impossible; Otsu fallback
    } else {
        SegmenterPrompt prompt =
            sample_prompt_points(regions, image.width, image.height, seed);
        fg = segment(image, prompt, segmenter);
    }
    bool any = false;
    for (uint8_t v : fg.pixels) any |= (v != 0);
    if (!any) {
        throw std::runtime_error("binarize_and_normalize: empty foreground for " +
                                 input_name);
    }

    // black ink on white at original size
    GrayImage bin(image.width, image.height, 255);
    for (size_t i = 0; i < fg.size(); ++i)
        if (fg.pixels[i]) bin.pixels[i] = 0;

    // longer side to 256, aspect preserved
    const int target = 256;
    int longer = std::max(bin.width, bin.height);
    int new_w = static_cast<int>(std::lround(double(bin.width) * target / longer));
    int new_h = static_cast<int>(std::lround(double(bin.height) * target / longer));
    new_w = std::max(1, new_w);
    new_h = std::max(1, new_h);
    GrayImage scaled(new_w, new_h);
    for (int y = 0; y < new_h; ++y) {
        int sy = std::min(bin.height - 1, y * bin.height / new_h);
        for (int x = 0; x < new_w; ++x) {
            int sx = std::min(bin.width - 1, x * bin.width / new_w);
            // re-threshold keeps binarity under any interpolation
            scaled.at(y, x) = bin.at(sy, sx) < 128 ? 0 : 255;
        }
    }

    GrayImage canvas(target, target, 255);
    int ox = (target - new_w) / 2, oy = (target - new_h) / 2;
    for (int y = 0; y < new_h; ++y)
        for (int x = 0; x < new_w; ++x) canvas.at(oy + y, ox + x) = scaled.at(y, x);
    return canvas;
}

}  // namespace moyun
