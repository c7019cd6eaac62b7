#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "moyun/core/rng.hpp"

namespace moyun {

// Dense (channels, height, width) grid. The latent/image workhorse type.
template <class Scalar>
struct Tensor3 {
    int c = 0, h = 0, w = 0;
    std::vector<Scalar> v;

    Tensor3() = default;
    Tensor3(int c_, int h_, int w_)
        : c(c_), h(h_), w(w_), v(static_cast<size_t>(c_) * h_ * w_, Scalar(0)) {}

    size_t size() const { return v.size(); }

    Scalar& at(int ch, int y, int x) {
        return v[(static_cast<size_t>(ch) * h + y) * w + x];
    }
    Scalar at(int ch, int y, int x) const {
        return v[(static_cast<size_t>(ch) * h + y) * w + x];
    }

    bool same_shape(const Tensor3& o) const {
        return c == o.c && h == o.h && w == o.w;
    }

    std::string shape_str() const {
        return "(" + std::to_string(c) + "," + std::to_string(h) + "," +
               std::to_string(w) + ")";
    }

    static Tensor3 standard_normal(int c, int h, int w, Rng& rng) {
        Tensor3 t(c, h, w);
        for (auto& x : t.v) x = static_cast<Scalar>(rng.normal());
        return t;
    }
};

template <class Scalar>
inline void require_same_shape(const Tensor3<Scalar>& a, const Tensor3<Scalar>& b,
                               const char* what) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument(std::string(what) + ": shape mismatch " +
                                    a.shape_str() + " vs " + b.shape_str());
    }
}

}  // namespace moyun
