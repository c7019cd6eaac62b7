#pragma once

#include <algorithm>
#include <functional>
#include <stdexcept>
#include <string>

#include "moyun/core/tensor.hpp"

namespace moyun {

enum class CodecKind { identity, pooled, external_adapter };

inline const char* to_string(CodecKind k) {
    switch (k) {
        case CodecKind::identity: return "identity";
        case CodecKind::pooled: return "pooled";
        case CodecKind::external_adapter: return "external-adapter";
    }
    return "?";
}

inline CodecKind codec_kind_from_string(const std::string& s) {
    if (s == "identity") return CodecKind::identity;
    if (s == "pooled") return CodecKind::pooled;
    if (s == "external-adapter") return CodecKind::external_adapter;
    throw std::invalid_argument("unknown codec kind: " + s);
}

// Geometry of the image <-> latent mapping.
struct CodecSpec {
    int image_side = 32;      // a
    int image_channels = 1;
    int latent_side = 32;     // b
    int latent_channels = 1;  // c
    CodecKind kind = CodecKind::identity;

    void validate() const {
        if (image_side <= 0 || image_channels <= 0 || latent_side <= 0 ||
            latent_channels <= 0) {
            throw std::invalid_argument("CodecSpec: all dimensions must be positive");
        }
        if (kind == CodecKind::identity) {
            if (image_side != latent_side || image_channels != latent_channels) {
                throw std::invalid_argument(
                    "CodecSpec: identity codec requires matching image/latent geometry");
            }
        } else if (kind == CodecKind::pooled) {
            if (image_side % latent_side != 0) {
                throw std::invalid_argument(
                    "CodecSpec: pooled codec requires image_side divisible by latent_side");
            }
        }
    }
};

namespace detail {

template <class Scalar>
inline void check_image_geometry(const Tensor3<Scalar>& img, const CodecSpec& spec) {
    if (img.c != spec.image_channels || img.h != spec.image_side ||
        img.w != spec.image_side) {
        throw std::invalid_argument("codec: image geometry " + img.shape_str() +
                                    " does not match spec");
    }
}

template <class Scalar>
inline void check_latent_geometry(const Tensor3<Scalar>& lat, const CodecSpec& spec) {
    if (lat.c != spec.latent_channels || lat.h != spec.latent_side ||
        lat.w != spec.latent_side) {
        throw std::invalid_argument("codec: latent geometry " + lat.shape_str() +
                                    " does not match spec");
    }
}

}  // namespace detail

// User-supplied codec honoring the encode/decode contract.
template <class Scalar>
struct ExternalCodec {
    std::function<Tensor3<Scalar>(const Tensor3<Scalar>&)> encode;
    std::function<Tensor3<Scalar>(const Tensor3<Scalar>&)> decode;
};

template <class Scalar>
class LatentCodec {
public:
    explicit LatentCodec(const CodecSpec& spec) : spec_(spec) {
        spec_.validate();
        if (spec_.kind == CodecKind::external_adapter) {
            throw std::invalid_argument(
                "external-adapter codec requires register_external()");
        }
    }

    // Registration validates the adapter with a roundtrip shape check.
    LatentCodec(const CodecSpec& spec, ExternalCodec<Scalar> ext)
        : spec_(spec), ext_(std::move(ext)) {
        spec_.validate();
        if (spec_.kind != CodecKind::external_adapter) {
            throw std::invalid_argument("external codec given for non-adapter spec");
        }
        if (!ext_.encode || !ext_.decode) {
            throw std::invalid_argument("external codec: encode/decode must be callable");
        }
        Tensor3<Scalar> probe(spec_.image_channels, spec_.image_side, spec_.image_side);
        Tensor3<Scalar> lat = ext_.encode(probe);
        detail::check_latent_geometry(lat, spec_);
        Tensor3<Scalar> img = ext_.decode(lat);
        detail::check_image_geometry(img, spec_);
    }

    const CodecSpec& spec() const { return spec_; }

    // image in [0,1] -> latent in roughly [-1,1]
    Tensor3<Scalar> encode(const Tensor3<Scalar>& image) const {
        detail::check_image_geometry(image, spec_);
        switch (spec_.kind) {
            case CodecKind::identity: {
                Tensor3<Scalar> lat(spec_.latent_channels, spec_.latent_side,
                                    spec_.latent_side);
                for (size_t i = 0; i < image.size(); ++i)
                    lat.v[i] = Scalar(2) * image.v[i] - Scalar(1);
                return lat;
            }
            case CodecKind::pooled: {
                int f = spec_.image_side / spec_.latent_side;
                Tensor3<Scalar> lat(spec_.latent_channels, spec_.latent_side,
                                    spec_.latent_side);
                for (int ch = 0; ch < spec_.latent_channels; ++ch) {
                    // replicate or truncate channels relative to the image
                    int src = ch % spec_.image_channels;
                    for (int y = 0; y < spec_.latent_side; ++y) {
                        for (int x = 0; x < spec_.latent_side; ++x) {
                            Scalar acc = Scalar(0);
                            for (int dy = 0; dy < f; ++dy)
                                for (int dx = 0; dx < f; ++dx)
                                    acc += image.at(src, y * f + dy, x * f + dx);
                            Scalar m = acc / Scalar(f * f);
                            lat.at(ch, y, x) = Scalar(2) * m - Scalar(1);
                        }
                    }
                }
                return lat;
            }
            case CodecKind::external_adapter: {
                Tensor3<Scalar> lat = ext_.encode(image);
                detail::check_latent_geometry(lat, spec_);
                return lat;
            }
        }
        throw std::logic_error("unreachable");
    }

    // latent -> image clamped to [0,1]
    Tensor3<Scalar> decode(const Tensor3<Scalar>& latent) const {
        detail::check_latent_geometry(latent, spec_);
        auto to_unit = [](Scalar v) {
            return std::clamp((v + Scalar(1)) / Scalar(2), Scalar(0), Scalar(1));
        };
        switch (spec_.kind) {
            case CodecKind::identity: {
                Tensor3<Scalar> img(spec_.image_channels, spec_.image_side,
                                    spec_.image_side);
                for (size_t i = 0; i < latent.size(); ++i) img.v[i] = to_unit(latent.v[i]);
                return img;
            }
            case CodecKind::pooled: {
                int f = spec_.image_side / spec_.latent_side;
                Tensor3<Scalar> img(spec_.image_channels, spec_.image_side,
                                    spec_.image_side);
                for (int ch = 0; ch < spec_.image_channels; ++ch) {
                    int src = ch % spec_.latent_channels;
                    for (int y = 0; y < spec_.image_side; ++y)
                        for (int x = 0; x < spec_.image_side; ++x)
                            img.at(ch, y, x) = to_unit(latent.at(src, y / f, x / f));
                }
                return img;
            }
            case CodecKind::external_adapter: {
                Tensor3<Scalar> img = ext_.decode(latent);
                detail::check_image_geometry(img, spec_);
                return img;
            }
        }
        throw std::logic_error("unreachable");
    }

private:
    CodecSpec spec_;
    ExternalCodec<Scalar> ext_;
};

}  // namespace moyun
