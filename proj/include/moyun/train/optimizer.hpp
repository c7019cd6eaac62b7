#pragma once

#include <stdexcept>
#include <vector>

#include "moyun/backbone/model.hpp"

namespace moyun {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam over the model's named parameter views. Moment buffers live here and
// are exposed for checkpointing.
template <class S>
class Adam {
public:
    Adam(DenoiserModel<S>& model, const AdamConfig& cfg) : model_(&model), cfg_(cfg) {
        for (auto& pv : model.param_views()) {
            m_.emplace_back(std::vector<S>(static_cast<size_t>(pv.size()), S(0)));
            v_.emplace_back(std::vector<S>(static_cast<size_t>(pv.size()), S(0)));
        }
    }

    int step_count() const { return t_; }

    void step(DenoiserModel<S>& grads) {
        auto params = model_->param_views();
        auto gviews = grads.param_views();
        if (gviews.size() != params.size()) {
            throw std::invalid_argument("Adam::step: gradient model shape mismatch");
        }
        ++t_;
        const double b1t = 1.0 - std::pow(cfg_.beta1, t_);
        const double b2t = 1.0 - std::pow(cfg_.beta2, t_);
        for (size_t k = 0; k < params.size(); ++k) {
            if (params[k].size() != gviews[k].size()) {
                throw std::invalid_argument("Adam::step: size mismatch for " + params[k].name);
            }
            S* w = params[k].data;
            const S* g = gviews[k].data;
            auto& m = m_[k];
            auto& v = v_[k];
            for (size_t i = 0; i < m.size(); ++i) {
                double gi = double(g[i]);
                double mi = cfg_.beta1 * double(m[i]) + (1.0 - cfg_.beta1) * gi;
                double vi = cfg_.beta2 * double(v[i]) + (1.0 - cfg_.beta2) * gi * gi;
                m[i] = S(mi);
                v[i] = S(vi);
                w[i] = S(double(w[i]) -
                         cfg_.lr * (mi / b1t) / (std::sqrt(vi / b2t) + cfg_.eps));
            }
        }
    }

    // checkpointing access: moments in param_views order
    std::vector<std::vector<S>>& first_moments() { return m_; }
    std::vector<std::vector<S>>& second_moments() { return v_; }
    void set_step_count(int t) { t_ = t; }

private:
    DenoiserModel<S>* model_;
    AdamConfig cfg_;
    int t_ = 0;
    std::vector<std::vector<S>> m_, v_;
};

// Exponential moving average of the weights. decay = 0 tracks the raw
// weights exactly; sampling from the EMA copy is optional.
template <class S>
class EmaTracker {
public:
    EmaTracker(const DenoiserModel<S>& model, double decay)
        : shadow_(model), decay_(decay) {
        if (decay < 0.0 || decay >= 1.0) {
            throw std::invalid_argument("EmaTracker: decay must be in [0,1)");
        }
    }

    void update(DenoiserModel<S>& model) {
        auto sv = shadow_.param_views();
        auto mv = model.param_views();
        for (size_t k = 0; k < sv.size(); ++k) {
            for (Eigen::Index i = 0; i < sv[k].size(); ++i) {
                sv[k].data[i] = S(decay_ * double(sv[k].data[i]) +
                                  (1.0 - decay_) * double(mv[k].data[i]));
            }
        }
    }

    const DenoiserModel<S>& model() const { return shadow_; }
    DenoiserModel<S>& model() { return shadow_; }

private:
    DenoiserModel<S> shadow_;
    double decay_;
};

}  // namespace moyun
