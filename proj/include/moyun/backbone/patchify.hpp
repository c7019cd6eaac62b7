#pragma once

#include <Eigen/Dense>
#include <stdexcept>

#include "moyun/core/tensor.hpp"

namespace moyun {

template <class Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <class Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// Slice a (c,b,b) latent into n = (b/p)^2 non-overlapping p x p patches.
// Tokens are ordered row-major over the patch grid (top-left to bottom-right);
// each token is the flattened patch (channel-major), one column per token.
template <class Scalar>
inline Mat<Scalar> patchify(const Tensor3<Scalar>& latent, int p) {
    if (p <= 0 || latent.h != latent.w || latent.h % p != 0) {
        throw std::invalid_argument("patchify: side " + std::to_string(latent.h) +
                                    " not divisible by patch side " + std::to_string(p));
    }
    int g = latent.h / p;
    int n = g * g;
    int pd = p * p * latent.c;
    Mat<Scalar> tokens(pd, n);
    for (int gy = 0; gy < g; ++gy) {
        for (int gx = 0; gx < g; ++gx) {
            int tok = gy * g + gx;
            for (int ch = 0; ch < latent.c; ++ch)
                for (int py = 0; py < p; ++py)
                    for (int px = 0; px < p; ++px)
                        tokens((ch * p + py) * p + px, tok) =
                            latent.at(ch, gy * p + py, gx * p + px);
        }
    }
    return tokens;
}

// Exact inverse of patchify.
template <class Scalar>
inline Tensor3<Scalar> unpatchify(const Mat<Scalar>& tokens, int p, int b, int c) {
    int g = b / p;
    int n = g * g;
    if (b % p != 0 || tokens.cols() != n || tokens.rows() != p * p * c) {
        throw std::invalid_argument(
            "unpatchify: token matrix " + std::to_string(tokens.rows()) + "x" +
            std::to_string(tokens.cols()) + " does not tile a (" + std::to_string(c) +
            "," + std::to_string(b) + "," + std::to_string(b) + ") latent with p=" +
            std::to_string(p));
    }
    Tensor3<Scalar> latent(c, b, b);
    for (int gy = 0; gy < g; ++gy) {
        for (int gx = 0; gx < g; ++gx) {
            int tok = gy * g + gx;
            for (int ch = 0; ch < c; ++ch)
                for (int py = 0; py < p; ++py)
                    for (int px = 0; px < p; ++px)
                        latent.at(ch, gy * p + py, gx * p + px) =
                            tokens((ch * p + py) * p + px, tok);
        }
    }
    return latent;
}

}  // namespace moyun
