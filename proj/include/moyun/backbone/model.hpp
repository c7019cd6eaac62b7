#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "moyun/backbone/config.hpp"
#include "moyun/backbone/patchify.hpp"
#include "moyun/core/rng.hpp"
#include "moyun/diffusion/sampler.hpp"

namespace moyun {

namespace nn {

template <class S>
inline S sigmoid(S x) {
    return S(1) / (S(1) + std::exp(-x));
}

template <class S>
inline S silu(S x) {
    return x * sigmoid(x);
}

// d/dx silu(x)
template <class S>
inline S silu_grad(S x) {
    S s = sigmoid(x);
    return s * (S(1) + x * (S(1) - s));
}

template <class S>
inline S softplus(S x) {
    if (x > S(20)) return x;
    return std::log1p(std::exp(x));
}

// inverse of softplus for y > 0
template <class S>
inline S inv_softplus(S y) {
    return y + std::log1p(-std::exp(-y));
}

}  // namespace nn

// Named view over one parameter tensor; used by the optimizer and checkpoints.
template <class S>
struct ParamView {
    std::string name;
    S* data;
    Eigen::Index rows, cols;
    Eigen::Index size() const { return rows * cols; }
};

template <class S>
struct DirectionParams {
    Mat<S> w_dt_lo, w_dt_hi;  // (r x d), (d x r)
    Vec<S> b_dt;              // (d)
    Mat<S> w_b, w_c;          // (S x d)
    Mat<S> w_z_lo, w_z_hi;    // (r_g x d), (d x r_g) factorized gate projection
    Vec<S> b_z;               // (d)
    Vec<S> skip;              // D, (d)
};

template <class S>
struct BlockParams {
    Mat<S> w_mod;  // (3d x d): shift / scale / gate rows
    Vec<S> b_mod;  // (3d)
    DirectionParams<S> fwd, bwd;
};

template <class S>
struct DirActs {
    Mat<S> mid;            // (r x R)
    Mat<S> zmid;           // (r_g x R)
    Mat<S> dtpre, dt, a;   // (d x R)
    Mat<S> bm, cm;         // (S x R)
    Mat<S> zpre, zsig, g;  // (d x R); zsig caches logistic(zpre) for backward
    Mat<S> y;              // (d x R) pre-gate scan output
    Mat<S> states;         // (d*S x R), stored by scan step (see dir_forward_impl)
};

template <class S>
struct BlockActs {
    Mat<S> t_in;                  // (d x R)
    Vec<S> mu, inv_std;           // (R)
    Mat<S> ln;                    // (d x R)
    Mat<S> shift, scale, gate;    // (d x B)
    Mat<S> u;                     // (d x R) modulated tokens
    DirActs<S> fwd, bwd;
    Mat<S> mix;                   // (d x R)
};

template <class S>
struct Workspace {
    int batch = 0, n = 0;
    std::vector<int> ts;
    std::vector<LabelTriple> labels;
    Mat<S> xp;                     // (P x R)
    Mat<S> sin_feat, tm1, ta1;     // (d x B) timestep path
    Mat<S> cond, c_act;            // (d x B)
    std::vector<BlockActs<S>> blocks;
    Mat<S> t_final;                // (d x R) tokens entering the head
    Vec<S> mu_f, inv_std_f;        // (R)
    Mat<S> ln_f, u_f;              // (d x R)
    Mat<S> shift_f, scale_f;       // (d x B)
};

// Patchified epsilon-prediction backbone: token embedding + positional
// embedding, N bidirectional state-space mixer blocks with label/timestep
// scale-shift-gate modulation, final modulated projection back to patches.
template <class S>
class DenoiserModel {
public:
    explicit DenoiserModel(const ModelConfig& cfg) : cfg_(cfg) {
        cfg_.validate();
        const int d = cfg_.hidden_width;
        const int P = cfg_.patch_dim();
        const int n = cfg_.token_count();
        const int st = cfg_.state_dim;
        const int r = cfg_.dt_rank;
        const int rg = cfg_.gate_rank;
        w_in = Mat<S>::Zero(d, P);
        b_in = Vec<S>::Zero(d);
        pos = Mat<S>::Zero(d, n);
        e_cal = Mat<S>::Zero(d, cfg_.num_calligraphers);
        e_font = Mat<S>::Zero(d, cfg_.num_fonts);
        e_char = Mat<S>::Zero(d, cfg_.num_characters);
        t_w1 = Mat<S>::Zero(d, d);
        t_b1 = Vec<S>::Zero(d);
        t_w2 = Mat<S>::Zero(d, d);
        t_b2 = Vec<S>::Zero(d);
        blocks.resize(cfg_.depth);
        for (auto& b : blocks) {
            b.w_mod = Mat<S>::Zero(3 * d, d);
            b.b_mod = Vec<S>::Zero(3 * d);
            for (DirectionParams<S>* dp : {&b.fwd, &b.bwd}) {
                dp->w_dt_lo = Mat<S>::Zero(r, d);
                dp->w_dt_hi = Mat<S>::Zero(d, r);
                dp->b_dt = Vec<S>::Zero(d);
                dp->w_b = Mat<S>::Zero(st, d);
                dp->w_c = Mat<S>::Zero(st, d);
                dp->w_z_lo = Mat<S>::Zero(rg, d);
                dp->w_z_hi = Mat<S>::Zero(d, rg);
                dp->b_z = Vec<S>::Zero(d);
                dp->skip = Vec<S>::Zero(d);
            }
        }
        w_mod_f = Mat<S>::Zero(2 * d, d);
        b_mod_f = Vec<S>::Zero(2 * d);
        w_out = Mat<S>::Zero(P, d);
        b_out = Vec<S>::Zero(P);
    }

    const ModelConfig& config() const { return cfg_; }

    // Default initialization: zero modulation and zero output projection,
    // so every block starts as the identity and eps_hat starts at zero.
    void init_default(Rng& rng) {
        const S d = S(cfg_.hidden_width);
        const S P = S(cfg_.patch_dim());
        fill_gaussian(w_in, S(1) / std::sqrt(P), rng);
        // Positions at token scale and labels at the scale of the timestep
        // embedding: the conditioning sum must not be dominated by the
        // timestep path, or the label signal trains far too slowly for a
        // short-budget run.
        fill_gaussian(pos, S(1) / std::sqrt(P), rng);
        fill_gaussian(e_cal, S(1), rng);
        fill_gaussian(e_font, S(1), rng);
        fill_gaussian(e_char, S(1), rng);
        fill_gaussian(t_w1, S(1) / std::sqrt(d), rng);
        fill_gaussian(t_w2, S(1) / std::sqrt(d), rng);
        for (auto& b : blocks) {
            // Only the gate rows must start at zero for the block to be the
            // identity; shift/scale rows start small-random so the
            // conditioning pathway is wired up from the first step.
            fill_gaussian(b.w_mod, S(1) / std::sqrt(d), rng);
            b.w_mod.bottomRows(cfg_.hidden_width).setZero();
            b.b_mod.setZero();
            for (DirectionParams<S>* dp : {&b.fwd, &b.bwd}) {
                fill_gaussian(dp->w_dt_lo, S(1) / std::sqrt(d), rng);
                fill_gaussian(dp->w_dt_hi, S(1) / std::sqrt(S(cfg_.dt_rank)), rng);
                for (Eigen::Index i = 0; i < dp->b_dt.size(); ++i) {
                    // decay rates spread over [0.001, 0.1] at init
                    double u = rng.uniform();
                    double dt0 = std::exp(std::log(0.001) +
                                          u * (std::log(0.1) - std::log(0.001)));
                    dp->b_dt[i] = nn::inv_softplus(S(dt0));
                }
                fill_gaussian(dp->w_b, S(1) / std::sqrt(d), rng);
                fill_gaussian(dp->w_c, S(1) / std::sqrt(d), rng);
                fill_gaussian(dp->w_z_lo, S(1) / std::sqrt(d), rng);
                fill_gaussian(dp->w_z_hi, S(1) / std::sqrt(S(cfg_.gate_rank)), rng);
                dp->b_z.setZero();
                dp->skip.setOnes();
            }
        }
        // The final modulation and output projection start small but nonzero:
        // with both at zero the conditioning pathways receive no gradient at
        // all until the output projection has grown, which wastes a large
        // fraction of a short training budget.
        fill_gaussian(w_mod_f, S(1) / std::sqrt(d), rng);
        b_mod_f.setZero();
        fill_gaussian(w_out, S(0.5) / std::sqrt(d), rng);
        b_out.setZero();
    }

    // Every tensor random; used by conditioning/propagation probes where the
    // zero-initialized gates would mask the signal.
    void init_random_full(Rng& rng, S std_dev = S(0.05)) {
        for (auto& pv : param_views()) {
            for (Eigen::Index i = 0; i < pv.size(); ++i)
                pv.data[i] = S(rng.normal()) * std_dev;
        }
    }

    std::vector<ParamView<S>> param_views() {
        std::vector<ParamView<S>> out;
        auto add = [&out](const std::string& name, auto& m) {
            out.push_back({name, m.data(), m.rows(), m.cols()});
        };
        add("w_in", w_in);
        add("b_in", b_in);
        add("pos", pos);
        add("emb_calligrapher", e_cal);
        add("emb_font", e_font);
        add("emb_character", e_char);
        add("t_w1", t_w1);
        add("t_b1", t_b1);
        add("t_w2", t_w2);
        add("t_b2", t_b2);
        for (size_t l = 0; l < blocks.size(); ++l) {
            std::string pre = "block" + std::to_string(l) + ".";
            add(pre + "w_mod", blocks[l].w_mod);
            add(pre + "b_mod", blocks[l].b_mod);
            for (auto dir : {std::make_pair(std::string("fwd."), &blocks[l].fwd),
                             std::make_pair(std::string("bwd."), &blocks[l].bwd)}) {
                add(pre + dir.first + "w_dt_lo", dir.second->w_dt_lo);
                add(pre + dir.first + "w_dt_hi", dir.second->w_dt_hi);
                add(pre + dir.first + "b_dt", dir.second->b_dt);
                add(pre + dir.first + "w_b", dir.second->w_b);
                add(pre + dir.first + "w_c", dir.second->w_c);
                add(pre + dir.first + "w_z_lo", dir.second->w_z_lo);
                add(pre + dir.first + "w_z_hi", dir.second->w_z_hi);
                add(pre + dir.first + "b_z", dir.second->b_z);
                add(pre + dir.first + "skip", dir.second->skip);
            }
        }
        add("final.w_mod", w_mod_f);
        add("final.b_mod", b_mod_f);
        add("final.w_out", w_out);
        add("final.b_out", b_out);
        return out;
    }

    void set_zero() {
        for (auto& pv : param_views())
            for (Eigen::Index i = 0; i < pv.size(); ++i) pv.data[i] = S(0);
    }

    // Sinusoidal timestep features, [sin(t*w_k)..., cos(t*w_k)...].
    static Vec<S> sinusoidal_features(int t, int d) {
        if (d % 2 != 0) throw std::invalid_argument("timestep embedding width must be even");
        const int half = d / 2;
        Vec<S> f(d);
        for (int k = 0; k < half; ++k) {
            double w = std::exp(-std::log(10000.0) * double(k) / double(half));
            f[k] = S(std::sin(double(t) * w));
            f[half + k] = S(std::cos(double(t) * w));
        }
        return f;
    }

    // Learned projection of the sinusoidal features to width d.
    Vec<S> timestep_embedding(int t) const {
        Vec<S> f = sinusoidal_features(t, cfg_.hidden_width);
        Vec<S> h = t_w1 * f + t_b1;
        for (Eigen::Index i = 0; i < h.size(); ++i) h[i] = nn::silu(h[i]);
        return t_w2 * h + t_b2;
    }

    // Summed label embeddings plus the timestep embedding.
    Vec<S> embed_labels(const LabelTriple& l, int t) const {
        cfg_.validate_labels(l);
        return e_cal.col(l.calligrapher_id) + e_font.col(l.font_id) +
               e_char.col(l.character_id) + timestep_embedding(t);
    }

    // Batched epsilon prediction. If ws is null a scratch workspace is used.
    std::vector<Tensor3<S>> forward(const std::vector<Tensor3<S>>& x_ts,
                                    const std::vector<int>& ts,
                                    const std::vector<LabelTriple>& labels,
                                    Workspace<S>* ws = nullptr) const {
        Workspace<S> scratch;
        Workspace<S>& w = ws ? *ws : scratch;
        const int B = static_cast<int>(x_ts.size());
        if (B == 0 || ts.size() != x_ts.size() || labels.size() != x_ts.size()) {
            throw std::invalid_argument("forward: batch arrays must be non-empty and equal length");
        }
        const int d = cfg_.hidden_width;
        const int n = cfg_.token_count();
        const int P = cfg_.patch_dim();
        const int R = B * n;
        w.batch = B;
        w.n = n;
        w.ts = ts;
        w.labels = labels;

        w.xp.resize(P, R);
        for (int s = 0; s < B; ++s) {
            if (x_ts[s].c != cfg_.latent_channels || x_ts[s].h != cfg_.latent_side ||
                x_ts[s].w != cfg_.latent_side) {
                throw std::invalid_argument("forward: latent shape " + x_ts[s].shape_str() +
                                            " does not match model config");
            }
            cfg_.validate_labels(labels[s]);
            w.xp.middleCols(s * n, n) = patchify(x_ts[s], cfg_.patch_side);
        }

        // conditioning
        w.sin_feat.resize(d, B);
        for (int s = 0; s < B; ++s) w.sin_feat.col(s) = sinusoidal_features(ts[s], d);
        w.tm1.noalias() = t_w1 * w.sin_feat;
        w.tm1.colwise() += t_b1;
        w.ta1 = w.tm1.unaryExpr([](S x) { return nn::silu(x); });
        w.cond.noalias() = t_w2 * w.ta1;
        w.cond.colwise() += t_b2;
        for (int s = 0; s < B; ++s) {
            w.cond.col(s) += e_cal.col(labels[s].calligrapher_id) +
                             e_font.col(labels[s].font_id) +
                             e_char.col(labels[s].character_id);
        }
        w.c_act = w.cond.unaryExpr([](S x) { return nn::silu(x); });

        // token embedding + positions
        Mat<S> tokens = w_in * w.xp;
        tokens.colwise() += b_in;
        for (int s = 0; s < B; ++s) tokens.middleCols(s * n, n) += pos;

        w.blocks.resize(blocks.size());
        for (size_t l = 0; l < blocks.size(); ++l) {
            block_forward_impl(blocks[l], tokens, w.c_act, B, n, w.blocks[l]);
            tokens = w.blocks[l].t_in;  // t_in now holds the block output (see impl)
        }
        w.t_final = tokens;

        // final modulated head
        layer_norm(w.t_final, w.ln_f, w.mu_f, w.inv_std_f);
        Mat<S> modf = w_mod_f * w.c_act;
        modf.colwise() += b_mod_f;
        w.shift_f = modf.topRows(d);
        w.scale_f = modf.bottomRows(d);
        w.u_f.resize(d, R);
        for (int s = 0; s < B; ++s) {
            w.u_f.middleCols(s * n, n) =
                (w.ln_f.middleCols(s * n, n).array().colwise() *
                 (w.scale_f.col(s).array() + S(1)))
                    .matrix()
                    .colwise() +
                w.shift_f.col(s);
        }
        Mat<S> out = w_out * w.u_f;
        out.colwise() += b_out;

        std::vector<Tensor3<S>> eps(B);
        for (int s = 0; s < B; ++s) {
            eps[s] = unpatchify<S>(out.middleCols(s * n, n), cfg_.patch_side,
                                   cfg_.latent_side, cfg_.latent_channels);
        }
        return eps;
    }

    // Accumulate parameter gradients for d(loss)/d(eps_hat) into `grads`.
    void backward(const Workspace<S>& w, const std::vector<Tensor3<S>>& d_eps,
                  DenoiserModel<S>& grads) const {
        const int B = w.batch;
        const int n = w.n;
        const int d = cfg_.hidden_width;
        const int R = B * n;
        if (static_cast<int>(d_eps.size()) != B) {
            throw std::invalid_argument("backward: gradient batch size mismatch");
        }
        Mat<S> d_out(cfg_.patch_dim(), R);
        for (int s = 0; s < B; ++s) {
            d_out.middleCols(s * n, n) = patchify(d_eps[s], cfg_.patch_side);
        }

        Mat<S> dc_act = Mat<S>::Zero(d, B);

        // head
        grads.w_out.noalias() += d_out * w.u_f.transpose();
        grads.b_out.noalias() += d_out.rowwise().sum();
        Mat<S> du_f = w_out.transpose() * d_out;
        Mat<S> d_ln_f(d, R);
        Mat<S> dmodf(2 * d, B);
        for (int s = 0; s < B; ++s) {
            auto dub = du_f.middleCols(s * n, n);
            auto lnb = w.ln_f.middleCols(s * n, n);
            d_ln_f.middleCols(s * n, n) =
                (dub.array().colwise() * (w.scale_f.col(s).array() + S(1))).matrix();
            dmodf.col(s).head(d) = dub.rowwise().sum();
            dmodf.col(s).tail(d) = (dub.array() * lnb.array()).rowwise().sum().matrix();
        }
        grads.w_mod_f.noalias() += dmodf * w.c_act.transpose();
        grads.b_mod_f.noalias() += dmodf.rowwise().sum();
        dc_act.noalias() += w_mod_f.transpose() * dmodf;
        Mat<S> d_tokens = layer_norm_backward(d_ln_f, w.ln_f, w.inv_std_f);

        for (int l = static_cast<int>(blocks.size()) - 1; l >= 0; --l) {
            block_backward_impl(blocks[l], w.blocks[l], w.c_act, B, n, d_tokens,
                                grads.blocks[l], dc_act);
        }

        // positions and token embedding
        for (int s = 0; s < B; ++s) grads.pos += d_tokens.middleCols(s * n, n);
        grads.w_in.noalias() += d_tokens * w.xp.transpose();
        grads.b_in.noalias() += d_tokens.rowwise().sum();

        // conditioning
        Mat<S> dcond =
            dc_act.binaryExpr(w.cond, [](S g, S x) { return g * nn::silu_grad(x); });
        for (int s = 0; s < B; ++s) {
            grads.e_cal.col(w.labels[s].calligrapher_id) += dcond.col(s);
            grads.e_font.col(w.labels[s].font_id) += dcond.col(s);
            grads.e_char.col(w.labels[s].character_id) += dcond.col(s);
        }
        grads.t_w2.noalias() += dcond * w.ta1.transpose();
        grads.t_b2.noalias() += dcond.rowwise().sum();
        Mat<S> dta1 = t_w2.transpose() * dcond;
        Mat<S> dtm1 =
            dta1.binaryExpr(w.tm1, [](S g, S x) { return g * nn::silu_grad(x); });
        grads.t_w1.noalias() += dtm1 * w.sin_feat.transpose();
        grads.t_b1.noalias() += dtm1.rowwise().sum();
    }

    // Single-sequence block application; test surface for the block contract.
    Mat<S> block_forward(int block_index, const Mat<S>& tokens, const Vec<S>& cond) const {
        if (block_index < 0 || block_index >= static_cast<int>(blocks.size())) {
            throw std::out_of_range("block_forward: block index out of range");
        }
        if (tokens.rows() != cfg_.hidden_width || cond.size() != cfg_.hidden_width) {
            throw std::invalid_argument("block_forward: width mismatch");
        }
        Mat<S> c_act = cond.unaryExpr([](S x) { return nn::silu(x); });
        BlockActs<S> acts;
        Mat<S> t = tokens;
        block_forward_impl(blocks[block_index], t, c_act, 1,
                           static_cast<int>(tokens.cols()), acts);
        return acts.t_in;
    }

    // Gated bidirectional scan for one sequence with this model's parameters.
    Mat<S> mixer_forward(int block_index, const Mat<S>& u) const {
        DirActs<S> fa, ba;
        const int n = static_cast<int>(u.cols());
        dir_forward_impl(blocks[block_index].fwd, u, 1, n, false, fa);
        dir_forward_impl(blocks[block_index].bwd, u, 1, n, true, ba);
        return fa.y.cwiseProduct(fa.g) + ba.y.cwiseProduct(ba.g);
    }

    Denoiser<S> denoiser() const {
        return [this](const Tensor3<S>& x_t, int t, const LabelTriple& l) {
            return this->forward({x_t}, {t}, {l})[0];
        };
    }

    BatchDenoiser<S> batch_denoiser() const {
        return [this](const std::vector<Tensor3<S>>& x_ts, int t,
                      const std::vector<LabelTriple>& ls) {
            return this->forward(x_ts, std::vector<int>(x_ts.size(), t), ls);
        };
    }

    // parameters (public: the trainer, checkpoints and tests address them)
    Mat<S> w_in;
    Vec<S> b_in;
    Mat<S> pos;
    Mat<S> e_cal, e_font, e_char;
    Mat<S> t_w1, t_w2;
    Vec<S> t_b1, t_b2;
    std::vector<BlockParams<S>> blocks;
    Mat<S> w_mod_f;
    Vec<S> b_mod_f;
    Mat<S> w_out;
    Vec<S> b_out;

private:
    ModelConfig cfg_;

    static void fill_gaussian(Mat<S>& m, S std_dev, Rng& rng) {
        for (Eigen::Index i = 0; i < m.size(); ++i)
            m.data()[i] = S(rng.normal()) * std_dev;
    }

    // column-wise (per token) normalization over channels, no affine terms
    static void layer_norm(const Mat<S>& x, Mat<S>& y, Vec<S>& mu, Vec<S>& inv_std) {
        const S eps = S(1e-5);
        const Eigen::Index d = x.rows();
        mu = x.colwise().mean();
        y = x.rowwise() - mu.transpose();
        inv_std.resize(x.cols());
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            S var = y.col(j).squaredNorm() / S(d);
            inv_std[j] = S(1) / std::sqrt(var + eps);
            y.col(j) *= inv_std[j];
        }
    }

    static Mat<S> layer_norm_backward(const Mat<S>& dy, const Mat<S>& y,
                                      const Vec<S>& inv_std) {
        const Eigen::Index d = y.rows();
        Mat<S> dx(y.rows(), y.cols());
        for (Eigen::Index j = 0; j < y.cols(); ++j) {
            S m1 = dy.col(j).mean();
            S m2 = dy.col(j).dot(y.col(j)) / S(d);
            dx.col(j) = inv_std[j] * (dy.col(j).array() - m1 - y.col(j).array() * m2);
        }
        return dx;
    }

    void dir_forward_impl(const DirectionParams<S>& dp, const Mat<S>& u, int B, int n,
                          bool reverse, DirActs<S>& a) const {
        const int d = cfg_.hidden_width;
        const int st = cfg_.state_dim;
        const int R = B * n;
        a.mid.noalias() = dp.w_dt_lo * u;
        a.dtpre.noalias() = dp.w_dt_hi * a.mid;
        a.dtpre.colwise() += dp.b_dt;
        // vectorized stable softplus: log1p(exp(-|x|)) + max(x, 0)
        a.dt = ((-a.dtpre.array().abs()).exp().log1p() + a.dtpre.array().max(S(0)))
                   .matrix();
        // exp(-softplus(x)) = 1/(1+exp(x)) = logistic(-x)
        a.a = (-a.dtpre.array()).logistic().matrix();
        a.bm.noalias() = dp.w_b * u;
        a.cm.noalias() = dp.w_c * u;
        a.zmid.noalias() = dp.w_z_lo * u;
        a.zpre.noalias() = dp.w_z_hi * a.zmid;
        a.zpre.colwise() += dp.b_z;
        a.zsig = a.zpre.array().logistic().matrix();
        a.g = a.zpre.cwiseProduct(a.zsig);
        a.y.resize(d, R);
        a.states.resize(d * st, R);
        // The recurrence is sequential over tokens but independent across the
        // batch, so each time step updates all B samples at once through
        // strided views (token t of sample s lives in column s*n + t). The
        // running state is kept in a compact (d*st) x B buffer that stays
        // cache resident; the history the backward pass needs is spilled once
        // per step into `states`, stored contiguously by scan step k (block k
        // spans columns [k*B, (k+1)*B)), not by token index.
        auto view = [B, n](Mat<S>& m, int tok) {
            return Eigen::Map<Mat<S>, 0, Eigen::OuterStride<>>(
                m.data() + static_cast<Eigen::Index>(tok) * m.rows(), m.rows(), B,
                Eigen::OuterStride<>(static_cast<Eigen::Index>(n) * m.rows()));
        };
        auto cview = [B, n](const Mat<S>& m, int tok) {
            return Eigen::Map<const Mat<S>, 0, Eigen::OuterStride<>>(
                m.data() + static_cast<Eigen::Index>(tok) * m.rows(), m.rows(), B,
                Eigen::OuterStride<>(static_cast<Eigen::Index>(n) * m.rows()));
        };
        Mat<S> gx(d, B);
        Mat<S> hbuf(d * st, B);
        for (int k = 0; k < n; ++k) {
            const int tok = reverse ? n - 1 - k : k;
            auto u_k = cview(u, tok);
            auto a_k = cview(a.a, tok);
            auto bm_k = cview(a.bm, tok);
            auto cm_k = cview(a.cm, tok);
            auto y_k = view(a.y, tok);
            gx = cview(a.dt, tok).cwiseProduct(u_k);
            y_k = (u_k.array().colwise() * dp.skip.array()).matrix();
            for (int j = 0; j < st; ++j) {
                auto h_j = hbuf.middleRows(j * d, d);
                if (k == 0) {
                    h_j = (gx.array().rowwise() * bm_k.row(j).array()).matrix();
                } else {
                    h_j = (h_j.array() * a_k.array() +
                           gx.array().rowwise() * bm_k.row(j).array())
                              .matrix();
                }
                y_k += (h_j.array().rowwise() * cm_k.row(j).array()).matrix();
            }
            a.states.middleCols(static_cast<Eigen::Index>(k) * B, B) = hbuf;
        }
    }

    void dir_backward_impl(const DirectionParams<S>& dp, const DirActs<S>& a,
                           const Mat<S>& u, int B, int n, bool reverse,
                           const Mat<S>& dmix, Mat<S>& du,
                           DirectionParams<S>& g) const {
        const int d = cfg_.hidden_width;
        const int st = cfg_.state_dim;
        const int R = B * n;
        Mat<S> dy = dmix.cwiseProduct(a.g);
        Mat<S> dzpre;
        {
            auto sig = a.zsig.array();
            dzpre = (dmix.array() * a.y.array() *
                     (sig * (S(1) + a.zpre.array() * (S(1) - sig))))
                        .matrix();
        }

        // skip path
        g.skip.noalias() += (dy.array() * u.array()).rowwise().sum().matrix();
        du.noalias() += (dy.array().colwise() * dp.skip.array()).matrix();

        Mat<S> ddt(d, R), dbm(st, R), dcm(st, R);
        // batched reverse-time sweep, mirroring the forward scan's layout
        auto view = [B, n](Mat<S>& m, int tok) {
            return Eigen::Map<Mat<S>, 0, Eigen::OuterStride<>>(
                m.data() + static_cast<Eigen::Index>(tok) * m.rows(), m.rows(), B,
                Eigen::OuterStride<>(static_cast<Eigen::Index>(n) * m.rows()));
        };
        auto cview = [B, n](const Mat<S>& m, int tok) {
            return Eigen::Map<const Mat<S>, 0, Eigen::OuterStride<>>(
                m.data() + static_cast<Eigen::Index>(tok) * m.rows(), m.rows(), B,
                Eigen::OuterStride<>(static_cast<Eigen::Index>(n) * m.rows()));
        };
        // `states` is stored by scan step k (see dir_forward_impl), so each
        // history block is read exactly once. The decay gradient of step k+1
        // enters ddt only as -a_{k+1} * da_{k+1} = -sum_j dh_j * H_j(k), with
        // dh taken after step k+1's decay multiply, i.e. exactly the running
        // dh at the start of iteration k -- so it is folded into ddt one
        // iteration late (dda below) and the first scan step needs nothing.
        Mat<S> dh = Mat<S>::Zero(d * st, B);
        Mat<S> t(d, B), gx(d, B), dda(d, B);
        int pending_tok = -1;  // token whose decay term needs this step's state
        for (int k = n - 1; k >= 0; --k) {
            const int tok = reverse ? n - 1 - k : k;
            auto u_k = cview(u, tok);
            auto a_k = cview(a.a, tok);
            auto bm_k = cview(a.bm, tok);
            auto cm_k = cview(a.cm, tok);
            auto dy_k = cview(dy, tok);
            auto H = a.states.middleCols(static_cast<Eigen::Index>(k) * B, B);
            auto dcm_k = view(dcm, tok);
            auto dbm_k = view(dbm, tok);
            gx = cview(a.dt, tok).cwiseProduct(u_k);
            t.setZero();
            if (pending_tok >= 0) dda.setZero();
            for (int j = 0; j < st; ++j) {
                auto dh_j = dh.middleRows(j * d, d);
                auto H_j = H.middleRows(j * d, d);
                if (pending_tok >= 0) dda += dh_j.cwiseProduct(H_j);
                dh_j += (dy_k.array().rowwise() * cm_k.row(j).array()).matrix();
                dcm_k.row(j) = (H_j.array() * dy_k.array()).colwise().sum().matrix();
                t += (dh_j.array().rowwise() * bm_k.row(j).array()).matrix();
                dbm_k.row(j) = (dh_j.array() * gx.array()).colwise().sum().matrix();
                dh_j.array() *= a_k.array();
            }
            view(ddt, tok) = t.cwiseProduct(u_k);
            view(du, tok) += t.cwiseProduct(cview(a.dt, tok));
            if (pending_tok >= 0) view(ddt, pending_tok) -= dda;
            pending_tok = tok;
        }
        // logistic(dtpre) = 1 - a (see the forward pass)
        Mat<S> ddtpre = (ddt.array() * (S(1) - a.a.array())).matrix();

        Mat<S> dzmid = dp.w_z_hi.transpose() * dzpre;
        g.w_z_hi.noalias() += dzpre * a.zmid.transpose();
        g.b_z.noalias() += dzpre.rowwise().sum();
        g.w_z_lo.noalias() += dzmid * u.transpose();
        du.noalias() += dp.w_z_lo.transpose() * dzmid;
        g.w_b.noalias() += dbm * u.transpose();
        du.noalias() += dp.w_b.transpose() * dbm;
        g.w_c.noalias() += dcm * u.transpose();
        du.noalias() += dp.w_c.transpose() * dcm;
        Mat<S> dmid = dp.w_dt_hi.transpose() * ddtpre;
        g.w_dt_hi.noalias() += ddtpre * a.mid.transpose();
        g.b_dt.noalias() += ddtpre.rowwise().sum();
        g.w_dt_lo.noalias() += dmid * u.transpose();
        du.noalias() += dp.w_dt_lo.transpose() * dmid;
    }

    // On return acts.t_in holds the block OUTPUT; the block input is consumed
    // from `tokens` and preserved in acts via the residual path recomputation.
    void block_forward_impl(const BlockParams<S>& bp, const Mat<S>& tokens,
                            const Mat<S>& c_act, int B, int n, BlockActs<S>& acts) const {
        const int d = cfg_.hidden_width;
        const int R = B * n;
        acts.t_in = tokens;
        layer_norm(tokens, acts.ln, acts.mu, acts.inv_std);
        Mat<S> mod = bp.w_mod * c_act;
        mod.colwise() += bp.b_mod;
        acts.shift = mod.topRows(d);
        acts.scale = mod.middleRows(d, d);
        acts.gate = mod.bottomRows(d);
        acts.u.resize(d, R);
        for (int s = 0; s < B; ++s) {
            acts.u.middleCols(s * n, n) =
                (acts.ln.middleCols(s * n, n).array().colwise() *
                 (acts.scale.col(s).array() + S(1)))
                    .matrix()
                    .colwise() +
                acts.shift.col(s);
        }
        dir_forward_impl(bp.fwd, acts.u, B, n, false, acts.fwd);
        dir_forward_impl(bp.bwd, acts.u, B, n, true, acts.bwd);
        acts.mix = acts.fwd.y.cwiseProduct(acts.fwd.g) +
                   acts.bwd.y.cwiseProduct(acts.bwd.g);
        // residual with per-sample gate; overwrite t_in with the output
        for (int s = 0; s < B; ++s) {
            acts.t_in.middleCols(s * n, n) +=
                (acts.mix.middleCols(s * n, n).array().colwise() *
                 acts.gate.col(s).array())
                    .matrix();
        }
    }

    void block_backward_impl(const BlockParams<S>& bp, const BlockActs<S>& acts,
                             const Mat<S>& c_act, int B, int n, Mat<S>& d_tokens,
                             BlockParams<S>& g, Mat<S>& dc_act) const {
        const int d = cfg_.hidden_width;
        const int R = B * n;
        Mat<S> dmix(d, R);
        Mat<S> dmod(3 * d, B);
        for (int s = 0; s < B; ++s) {
            auto dtb = d_tokens.middleCols(s * n, n);
            dmix.middleCols(s * n, n) =
                (dtb.array().colwise() * acts.gate.col(s).array()).matrix();
            dmod.col(s).tail(d) =
                (dtb.array() * acts.mix.middleCols(s * n, n).array())
                    .rowwise()
                    .sum()
                    .matrix();
        }
        Mat<S> du = Mat<S>::Zero(d, R);
        dir_backward_impl(bp.fwd, acts.fwd, acts.u, B, n, false, dmix, du, g.fwd);
        dir_backward_impl(bp.bwd, acts.bwd, acts.u, B, n, true, dmix, du, g.bwd);
        Mat<S> d_ln(d, R);
        for (int s = 0; s < B; ++s) {
            auto dub = du.middleCols(s * n, n);
            auto lnb = acts.ln.middleCols(s * n, n);
            d_ln.middleCols(s * n, n) =
                (dub.array().colwise() * (acts.scale.col(s).array() + S(1))).matrix();
            dmod.col(s).head(d) = dub.rowwise().sum();
            dmod.col(s).segment(d, d) =
                (dub.array() * lnb.array()).rowwise().sum().matrix();
        }
        g.w_mod.noalias() += dmod * c_act.transpose();
        g.b_mod.noalias() += dmod.rowwise().sum();
        dc_act.noalias() += bp.w_mod.transpose() * dmod;
        // residual: d_tokens flows through unchanged plus the normalized path
        d_tokens += layer_norm_backward(d_ln, acts.ln, acts.inv_std);
    }
};

}  // namespace moyun
