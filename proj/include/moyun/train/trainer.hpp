#pragma once

#include <chrono>
#include <memory>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "moyun/diffusion/schedule.hpp"
#include "moyun/train/checkpoint.hpp"
#include "moyun/train/optimizer.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace moyun {

struct TrainConfig {
    int max_steps = 20000;
    int batch_size = 64;
    double lr = 1e-4;
    uint64_t seed = 0;
    double ema_decay = 0.0;  // used only when use_ema is set; 0 tracks raw weights
    bool use_ema = false;
    int log_every = 100;
    int checkpoint_every = 0;                // 0 = only the final checkpoint
    std::filesystem::path checkpoint_dir;    // empty = never write checkpoints
};

struct TrainLogEntry {
    int step = 0;       // 1-based, the step just completed
    double loss = 0.0;
    double seconds = 0.0;  // wall time since run() started
};

namespace detail {
// splitmix64: decorrelates the per-step noise streams from the base seed
inline uint64_t mix_seed(uint64_t seed, uint64_t step) {
    uint64_t z = seed + 0x9E3779B97F4A7C15ull * (step + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}
}  // namespace detail

// Noise-prediction training loop over a preloaded set of encoded latents.
// Each step's randomness is derived from (seed, step) alone, so resuming
// from a checkpoint replays the exact same stream.
template <class S>
class Trainer {
public:
    Trainer(DenoiserModel<S>& model, const NoiseSchedule<S>& schedule,
            std::vector<Tensor3<S>> latents, std::vector<LabelTriple> labels,
            const TrainConfig& cfg, CheckpointMeta meta = {})
        : model_(&model),
          schedule_(&schedule),
          latents_(std::move(latents)),
          labels_(std::move(labels)),
          cfg_(cfg),
          meta_(meta),
          grads_(model.config()),
          opt_(model, AdamConfig{cfg.lr}) {
        if (latents_.empty() || latents_.size() != labels_.size()) {
            throw std::invalid_argument(
                "Trainer: latents and labels must be non-empty and equal length");
        }
        if (cfg_.batch_size < 1 || cfg_.max_steps < 0) {
            throw std::invalid_argument("Trainer: bad batch_size or max_steps");
        }
        if (cfg_.use_ema) ema_ = std::make_unique<EmaTracker<S>>(model, cfg_.ema_decay);
#if defined(__GLIBC__)
        // Each step churns through multi-megabyte activation temporaries;
        // keep them on the allocator's free lists instead of letting glibc
        // round-trip every one through mmap/munmap.
        mallopt(M_MMAP_THRESHOLD, 64 << 20);
#endif
        meta_.model = model.config();
        meta_.schedule_T = schedule.T;
        meta_.lr = cfg.lr;
        meta_.batch_size = cfg.batch_size;
        meta_.seed = cfg.seed;
    }

    // One optimization step; returns the batch loss.
    double step() {
        Rng rng(detail::mix_seed(cfg_.seed, static_cast<uint64_t>(step_)));
        const int B = cfg_.batch_size;
        std::vector<Tensor3<S>> x_ts(B), eps(B);
        std::vector<int> ts(B);
        std::vector<LabelTriple> batch_labels(B);
        for (int s = 0; s < B; ++s) {
            size_t pick = static_cast<size_t>(
                rng.uniform_int(0, static_cast<int64_t>(latents_.size()) - 1));
            ts[s] = static_cast<int>(rng.uniform_int(0, schedule_->T - 1));
            const Tensor3<S>& x0 = latents_[pick];
            eps[s] = Tensor3<S>::standard_normal(x0.c, x0.h, x0.w, rng);
            x_ts[s] = q_sample(x0, ts[s], eps[s], *schedule_,
                               NoisingForm::variance_preserving);
            batch_labels[s] = labels_[pick];
        }

        std::vector<Tensor3<S>> eps_hat = model_->forward(x_ts, ts, batch_labels, &ws_);
        double loss = 0.0;
        std::vector<Tensor3<S>> d_eps(B);
        for (int s = 0; s < B; ++s) {
            loss += double(training_loss(eps[s], eps_hat[s]));
            d_eps[s] = Tensor3<S>(eps[s].c, eps[s].h, eps[s].w);
            const double scale = 2.0 / (double(B) * double(eps[s].size()));
            for (size_t i = 0; i < eps[s].size(); ++i) {
                d_eps[s].v[i] = S(scale * (double(eps_hat[s].v[i]) - double(eps[s].v[i])));
            }
        }
        loss /= double(B);
        if (!std::isfinite(loss)) {
            throw std::runtime_error("training diverged: non-finite loss at step " +
                                     std::to_string(step_ + 1));
        }

        grads_.set_zero();
        model_->backward(ws_, d_eps, grads_);
        opt_.step(grads_);
        if (ema_) ema_->update(*model_);
        ++step_;
        return loss;
    }

    // Run to max_steps, logging and checkpointing along the way.
    void run(const std::function<void(const TrainLogEntry&)>& log = nullptr) {
        auto start = std::chrono::steady_clock::now();
        while (step_ < cfg_.max_steps) {
            double loss = step();
            bool log_now = cfg_.log_every > 0 &&
                           (step_ % cfg_.log_every == 0 || step_ == cfg_.max_steps);
            if (log && log_now) {
                std::chrono::duration<double> dt = std::chrono::steady_clock::now() - start;
                log({step_, loss, dt.count()});
            }
            if (!cfg_.checkpoint_dir.empty() && cfg_.checkpoint_every > 0 &&
                step_ % cfg_.checkpoint_every == 0 && step_ < cfg_.max_steps) {
                save(cfg_.checkpoint_dir);
            }
        }
        if (!cfg_.checkpoint_dir.empty()) save(cfg_.checkpoint_dir);
    }

    void save(const std::filesystem::path& dir) {
        meta_.step = step_;
        save_checkpoint(dir, meta_, *model_, &opt_);
    }

    // Restore weights, optimizer moments and step counter from a checkpoint.
    void resume(const std::filesystem::path& dir) {
        CheckpointMeta meta = load_checkpoint_meta(dir);
        load_checkpoint_weights(dir, *model_);
        load_checkpoint_optimizer(dir, opt_, *model_, meta.step);
        step_ = meta.step;
        if (ema_) ema_ = std::make_unique<EmaTracker<S>>(*model_, cfg_.ema_decay);
    }

    int current_step() const { return step_; }
    Adam<S>& optimizer() { return opt_; }
    const DenoiserModel<S>& sampling_model() const {
        return ema_ ? ema_->model() : *model_;
    }

private:
    DenoiserModel<S>* model_;
    const NoiseSchedule<S>* schedule_;
    std::vector<Tensor3<S>> latents_;
    std::vector<LabelTriple> labels_;
    TrainConfig cfg_;
    CheckpointMeta meta_;
    DenoiserModel<S> grads_;
    Adam<S> opt_;
    std::unique_ptr<EmaTracker<S>> ema_;
    Workspace<S> ws_;
    int step_ = 0;
};

}  // namespace moyun
