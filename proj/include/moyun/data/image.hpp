#pragma once

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "moyun/core/tensor.hpp"

namespace moyun {

// 8-bit single-channel image, row-major.
struct GrayImage {
    int width = 0, height = 0;
    std::vector<uint8_t> pixels;

    GrayImage() = default;
    GrayImage(int w, int h, uint8_t fill = 0)
        : width(w), height(h), pixels(static_cast<size_t>(w) * h, fill) {}

    uint8_t& at(int y, int x) { return pixels[static_cast<size_t>(y) * width + x]; }
    uint8_t at(int y, int x) const { return pixels[static_cast<size_t>(y) * width + x]; }
    size_t size() const { return pixels.size(); }
};

// Same storage, values restricted to {0,1}; 1 marks foreground.
using BinaryMask = GrayImage;

struct Point {
    int x = 0, y = 0;
    bool operator==(const Point&) const = default;
};

template <class Scalar>
inline Tensor3<Scalar> to_unit_tensor(const GrayImage& img) {
    Tensor3<Scalar> t(1, img.height, img.width);
    for (size_t i = 0; i < img.size(); ++i)
        t.v[i] = Scalar(img.pixels[i]) / Scalar(255);
    return t;
}

template <class Scalar>
inline GrayImage from_unit_tensor(const Tensor3<Scalar>& t) {
    if (t.c != 1) throw std::invalid_argument("from_unit_tensor: expected 1 channel");
    GrayImage img(t.w, t.h);
    for (size_t i = 0; i < t.v.size(); ++i) {
        Scalar v = t.v[i];
        if (v < Scalar(0)) v = Scalar(0);
        if (v > Scalar(1)) v = Scalar(1);
        img.pixels[i] = static_cast<uint8_t>(v * Scalar(255) + Scalar(0.5));
    }
    return img;
}

// Nearest-neighbor resample to an arbitrary size. Binary inputs stay binary.
inline GrayImage resize_nearest(const GrayImage& img, int w, int h) {
    if (img.size() == 0 || w <= 0 || h <= 0) {
        throw std::invalid_argument("resize_nearest: empty image or non-positive size");
    }
    GrayImage out(w, h);
    for (int y = 0; y < h; ++y) {
        int sy = std::min(img.height - 1, y * img.height / h);
        for (int x = 0; x < w; ++x) {
            int sx = std::min(img.width - 1, x * img.width / w);
            out.at(y, x) = img.at(sy, sx);
        }
    }
    return out;
}

// Nearest-neighbor upscale by an integer factor (viewing convenience).
inline GrayImage upscale_nearest(const GrayImage& img, int factor) {
    GrayImage out(img.width * factor, img.height * factor);
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x)
            out.at(y, x) = img.at(y / factor, x / factor);
    return out;
}

}  // namespace moyun
