#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>

#include "moyun/backbone/config.hpp"
#include "moyun/core/rng.hpp"
#include "moyun/diffusion/schedule.hpp"

namespace moyun {

// A denoiser predicts the noise that produced x_t.
template <class Scalar>
using Denoiser =
    std::function<Tensor3<Scalar>(const Tensor3<Scalar>& x_t, int t, const LabelTriple&)>;

struct SampleRequest {
    LabelTriple labels;
    int channels = 1;
    int height = 32;
    int width = 32;
    uint64_t seed = 0;
};

template <class Scalar>
inline void check_denoiser_output(const Tensor3<Scalar>& eps_hat,
                                  const Tensor3<Scalar>& x_t) {
    if (!eps_hat.same_shape(x_t)) {
        throw std::runtime_error("denoiser violated shape contract: got " +
                                 eps_hat.shape_str() + ", expected " + x_t.shape_str());
    }
}

// DDPM ancestral sampling from seeded x_T down to x_0.
template <class Scalar>
inline Tensor3<Scalar> ddpm_sample(const Denoiser<Scalar>& denoiser,
                                   const SampleRequest& req,
                                   const NoiseSchedule<Scalar>& s) {
    Rng rng(req.seed);
    Tensor3<Scalar> x =
        Tensor3<Scalar>::standard_normal(req.channels, req.height, req.width, rng);
    for (int t = s.T - 1; t >= 0; --t) {
        Tensor3<Scalar> eps_hat = denoiser(x, t, req.labels);
        check_denoiser_output(eps_hat, x);
        if (t > 0) {
            Tensor3<Scalar> z =
                Tensor3<Scalar>::standard_normal(req.channels, req.height, req.width, rng);
            x = p_step(eps_hat, x, t, s, &z);
        } else {
            x = p_step(eps_hat, x, t, s, static_cast<const Tensor3<Scalar>*>(nullptr));
        }
    }
    return x;
}

// Evenly spaced ascending sub-schedule of num_steps timesteps, always
// containing step 0.
inline std::vector<int> ddim_timesteps(int T, int num_steps) {
    std::vector<int> taus(num_steps);
    for (int i = 0; i < num_steps; ++i) {
        taus[i] = static_cast<int>(static_cast<long long>(i) * T / num_steps);
    }
    return taus;
}

// DDIM noise scale for one sub-schedule step.
template <class Scalar>
inline Scalar ddim_sigma(Scalar abar, Scalar abar_prev, Scalar eta) {
    return eta * std::sqrt((Scalar(1) - abar_prev) / (Scalar(1) - abar)) *
           std::sqrt(Scalar(1) - abar / abar_prev);
}

// One DDIM update from alpha_bar = abar to abar_prev.
// noise may be null when the step's sigma is zero.
// clip_x0 clamps the implied x0 prediction to [-1, 1] (the codec's latent
// range) and re-derives the direction noise from the clamped value; this is
// the standard static-thresholding stabilizer for pixel-range latents.
template <class Scalar>
inline Tensor3<Scalar> ddim_step(const Tensor3<Scalar>& eps_hat,
                                 const Tensor3<Scalar>& x_t, Scalar abar,
                                 Scalar abar_prev, Scalar eta,
                                 const Tensor3<Scalar>* noise,
                                 bool clip_x0 = false) {
    require_same_shape(eps_hat, x_t, "ddim_step");
    Scalar sigma = ddim_sigma(abar, abar_prev, eta);
    if (sigma > Scalar(0) && noise == nullptr) {
        throw std::invalid_argument("ddim_step: noise required when sigma > 0");
    }
    Scalar dir_coef_sq = Scalar(1) - abar_prev - sigma * sigma;
    Scalar dir_coef = dir_coef_sq > Scalar(0) ? std::sqrt(dir_coef_sq) : Scalar(0);
    Scalar sqrt_abar = std::sqrt(abar);
    Scalar inv_sqrt_abar = Scalar(1) / sqrt_abar;
    Scalar eps_to_x0 = std::sqrt(Scalar(1) - abar);
    Scalar sqrt_abar_prev = std::sqrt(abar_prev);
    Tensor3<Scalar> next(x_t.c, x_t.h, x_t.w);
    for (size_t i = 0; i < x_t.size(); ++i) {
        Scalar x0_pred = (x_t.v[i] - eps_to_x0 * eps_hat.v[i]) * inv_sqrt_abar;
        Scalar eps_dir = eps_hat.v[i];
        if (clip_x0) {
            x0_pred = std::clamp(x0_pred, Scalar(-1), Scalar(1));
            eps_dir = (x_t.v[i] - sqrt_abar * x0_pred) / eps_to_x0;
        }
        Scalar val = sqrt_abar_prev * x0_pred + dir_coef * eps_dir;
        if (sigma > Scalar(0) && noise) val += sigma * noise->v[i];
        next.v[i] = val;
    }
    return next;
}

// DDIM sampling; deterministic when eta == 0.
template <class Scalar>
inline Tensor3<Scalar> ddim_sample(const Denoiser<Scalar>& denoiser,
                                   const SampleRequest& req,
                                   const NoiseSchedule<Scalar>& s, int num_steps,
                                   Scalar eta, bool clip_x0 = false) {
    if (num_steps < 1 || num_steps > s.T) {
        throw std::invalid_argument("ddim_sample: num_steps must be in [1, T]");
    }
    if (eta < Scalar(0) || eta > Scalar(1)) {
        throw std::invalid_argument("ddim_sample: eta must be in [0, 1]");
    }
    Rng rng(req.seed);
    Tensor3<Scalar> x =
        Tensor3<Scalar>::standard_normal(req.channels, req.height, req.width, rng);
    std::vector<int> taus = ddim_timesteps(s.T, num_steps);
    for (int k = num_steps - 1; k >= 0; --k) {
        int t = taus[k];
        Scalar abar = s.alpha_bars[t];
        Scalar abar_prev = (k > 0) ? s.alpha_bars[taus[k - 1]] : Scalar(1);
        Tensor3<Scalar> eps_hat = denoiser(x, t, req.labels);
        check_denoiser_output(eps_hat, x);
        if (ddim_sigma(abar, abar_prev, eta) > Scalar(0)) {
            Tensor3<Scalar> z =
                Tensor3<Scalar>::standard_normal(req.channels, req.height, req.width, rng);
            x = ddim_step(eps_hat, x, abar, abar_prev, eta, &z, clip_x0);
        } else {
            x = ddim_step(eps_hat, x, abar, abar_prev, eta,
                          static_cast<const Tensor3<Scalar>*>(nullptr), clip_x0);
        }
    }
    return x;
}

// Batched denoiser: one forward pass over several latents sharing a timestep.
template <class Scalar>
using BatchDenoiser = std::function<std::vector<Tensor3<Scalar>>(
    const std::vector<Tensor3<Scalar>>& x_ts, int t, const std::vector<LabelTriple>&)>;

// DDIM over a whole batch at once. Each request keeps its own seeded noise
// stream, so with a pointwise denoiser the result per request is identical
// to ddim_sample on that request alone.
template <class Scalar>
inline std::vector<Tensor3<Scalar>> ddim_sample_batch(
    const BatchDenoiser<Scalar>& denoiser, const std::vector<SampleRequest>& reqs,
    const NoiseSchedule<Scalar>& s, int num_steps, Scalar eta, bool clip_x0 = false) {
    if (num_steps < 1 || num_steps > s.T) {
        throw std::invalid_argument("ddim_sample_batch: num_steps must be in [1, T]");
    }
    if (eta < Scalar(0) || eta > Scalar(1)) {
        throw std::invalid_argument("ddim_sample_batch: eta must be in [0, 1]");
    }
    const size_t B = reqs.size();
    std::vector<Rng> rngs;
    std::vector<Tensor3<Scalar>> x;
    std::vector<LabelTriple> labels;
    for (const SampleRequest& r : reqs) {
        rngs.emplace_back(r.seed);
        x.push_back(Tensor3<Scalar>::standard_normal(r.channels, r.height, r.width,
                                                     rngs.back()));
        labels.push_back(r.labels);
    }
    std::vector<int> taus = ddim_timesteps(s.T, num_steps);
    for (int k = num_steps - 1; k >= 0; --k) {
        int t = taus[k];
        Scalar abar = s.alpha_bars[t];
        Scalar abar_prev = (k > 0) ? s.alpha_bars[taus[k - 1]] : Scalar(1);
        std::vector<Tensor3<Scalar>> eps_hat = denoiser(x, t, labels);
        if (eps_hat.size() != B) {
            throw std::runtime_error("ddim_sample_batch: denoiser returned wrong batch size");
        }
        bool stochastic = ddim_sigma(abar, abar_prev, eta) > Scalar(0);
        for (size_t i = 0; i < B; ++i) {
            check_denoiser_output(eps_hat[i], x[i]);
            if (stochastic) {
                Tensor3<Scalar> z = Tensor3<Scalar>::standard_normal(
                    x[i].c, x[i].h, x[i].w, rngs[i]);
                x[i] = ddim_step(eps_hat[i], x[i], abar, abar_prev, eta, &z, clip_x0);
            } else {
                x[i] = ddim_step(eps_hat[i], x[i], abar, abar_prev, eta,
                                 static_cast<const Tensor3<Scalar>*>(nullptr), clip_x0);
            }
        }
    }
    return x;
}

}  // namespace moyun
