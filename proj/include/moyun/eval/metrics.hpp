#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "moyun/data/image.hpp"

namespace moyun {

inline void require_comparable(const GrayImage& a, const GrayImage& b, const char* what) {
    if (a.width != b.width || a.height != b.height) {
        throw std::invalid_argument(std::string(what) + ": image sizes differ (" +
                                    std::to_string(a.width) + "x" + std::to_string(a.height) +
                                    " vs " + std::to_string(b.width) + "x" +
                                    std::to_string(b.height) + ")");
    }
    if (a.size() == 0) throw std::invalid_argument(std::string(what) + ": empty images");
}

// Intersection over union of the ink (value 0) pixels of two binarized
// black-on-white images. Two blank pages agree perfectly: IOU = 1.
inline double iou_ink(const GrayImage& a, const GrayImage& b) {
    require_comparable(a, b, "iou_ink");
    int64_t inter = 0, uni = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        bool ia = a.pixels[i] < 128, ib = b.pixels[i] < 128;
        inter += (ia && ib);
        uni += (ia || ib);
    }
    if (uni == 0) return 1.0;
    return double(inter) / double(uni);
}

// Peak signal-to-noise ratio over 8-bit intensities; identical images
// return +infinity.
inline double psnr(const GrayImage& a, const GrayImage& b) {
    require_comparable(a, b, "psnr");
    double mse = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        double d = double(a.pixels[i]) - double(b.pixels[i]);
        mse += d * d;
    }
    mse /= double(a.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(255.0 * 255.0 / mse);
}

}  // namespace moyun
