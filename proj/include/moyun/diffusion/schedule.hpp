#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "moyun/core/tensor.hpp"

namespace moyun {

// Precomputed beta/alpha/alpha_bar tables for a T-step diffusion process.
template <class Scalar>
struct NoiseSchedule {
    int T = 0;
    std::vector<Scalar> betas;       // beta_t, in (0,1)
    std::vector<Scalar> alphas;      // 1 - beta_t
    std::vector<Scalar> alpha_bars;  // running product of alphas, strictly decreasing
};

template <class Scalar>
inline NoiseSchedule<Scalar> make_linear_schedule(int T, Scalar beta_start,
                                                  Scalar beta_end) {
    if (T < 1) throw std::invalid_argument("make_linear_schedule: T must be >= 1");
    if (!(beta_start > Scalar(0)) || !(beta_end < Scalar(1)) ||
        !(beta_start <= beta_end)) {
        throw std::invalid_argument(
            "make_linear_schedule: need 0 < beta_start <= beta_end < 1");
    }
    NoiseSchedule<Scalar> s;
    s.T = T;
    s.betas.resize(T);
    s.alphas.resize(T);
    s.alpha_bars.resize(T);
    Scalar prod = Scalar(1);
    for (int t = 0; t < T; ++t) {
        Scalar beta = (T == 1) ? beta_start
                               : beta_start + (beta_end - beta_start) *
                                                  Scalar(t) / Scalar(T - 1);
        s.betas[t] = beta;
        s.alphas[t] = Scalar(1) - beta;
        prod *= s.alphas[t];
        s.alpha_bars[t] = prod;
    }
    return s;
}

template <class Scalar>
inline void check_timestep(int t, const NoiseSchedule<Scalar>& s, const char* what) {
    if (t < 0 || t >= s.T) {
        throw std::out_of_range(std::string(what) + ": timestep " + std::to_string(t) +
                                " outside [0," + std::to_string(s.T) + ")");
    }
}

enum class NoisingForm {
    // x_t = sqrt(abar_t) x0 + sqrt(1-abar_t) eps  (standard, default)
    variance_preserving,
    // x_t = abar_t x0 + sqrt(1-abar_t) eps  (comparison only)
    literal_alpha_bar,
};

// Forward noising at step t with caller-supplied noise.
template <class Scalar>
inline Tensor3<Scalar> q_sample(const Tensor3<Scalar>& x0, int t,
                                const Tensor3<Scalar>& eps,
                                const NoiseSchedule<Scalar>& s,
                                NoisingForm form = NoisingForm::variance_preserving) {
    check_timestep(t, s, "q_sample");
    require_same_shape(x0, eps, "q_sample");
    Scalar abar = s.alpha_bars[t];
    Scalar c0 = (form == NoisingForm::variance_preserving)
                    ? std::sqrt(abar)
                    : abar;
    Scalar ce = std::sqrt(Scalar(1) - abar);
    Tensor3<Scalar> out(x0.c, x0.h, x0.w);
    for (size_t i = 0; i < x0.size(); ++i) out.v[i] = c0 * x0.v[i] + ce * eps.v[i];
    return out;
}

// Mean squared error over all elements.
template <class Scalar>
inline Scalar training_loss(const Tensor3<Scalar>& eps_hat, const Tensor3<Scalar>& eps) {
    require_same_shape(eps_hat, eps, "training_loss");
    Scalar acc = Scalar(0);
    for (size_t i = 0; i < eps.size(); ++i) {
        Scalar d = eps_hat.v[i] - eps.v[i];
        acc += d * d;
    }
    return acc / Scalar(eps.size());
}

// One reverse ancestral step with fixed variance sigma_t^2 = beta_t.
// noise may be null only at t == 0.
template <class Scalar>
inline Tensor3<Scalar> p_step(const Tensor3<Scalar>& eps_hat, const Tensor3<Scalar>& x_t,
                              int t, const NoiseSchedule<Scalar>& s,
                              const Tensor3<Scalar>* noise) {
    check_timestep(t, s, "p_step");
    require_same_shape(eps_hat, x_t, "p_step");
    if (t > 0 && noise == nullptr) {
        throw std::invalid_argument("p_step: noise required for t > 0");
    }
    if (noise) require_same_shape(*noise, x_t, "p_step noise");
    Scalar alpha = s.alphas[t];
    Scalar abar = s.alpha_bars[t];
    Scalar inv_sqrt_alpha = Scalar(1) / std::sqrt(alpha);
    Scalar eps_coef = s.betas[t] / std::sqrt(Scalar(1) - abar);
    Scalar sigma = (t > 0) ? std::sqrt(s.betas[t]) : Scalar(0);
    Tensor3<Scalar> out(x_t.c, x_t.h, x_t.w);
    for (size_t i = 0; i < x_t.size(); ++i) {
        Scalar mu = inv_sqrt_alpha * (x_t.v[i] - eps_coef * eps_hat.v[i]);
        out.v[i] = (t > 0) ? mu + sigma * noise->v[i] : mu;
    }
    return out;
}

}  // namespace moyun
