#pragma once

#include <stdexcept>
#include <string>

namespace moyun {

// Conditioning signal: three independent class labels.
struct LabelTriple {
    int calligrapher_id = 0;
    int font_id = 0;
    int character_id = 0;
};

// Backbone hyperparameters. Token count n = (latent_side / patch_side)^2.
struct ModelConfig {
    int latent_side = 32;      // b
    int latent_channels = 1;   // c
    int patch_side = 4;        // p
    int hidden_width = 128;    // d
    int depth = 2;             // N block iterations
    int state_dim = 16;        // per-channel recurrence state size
    int dt_rank = 16;          // low-rank decay projection width
    int gate_rank = 16;        // low-rank gate projection width
    int num_calligraphers = 1;
    int num_fonts = 1;
    int num_characters = 1;

    int token_count() const {
        int g = latent_side / patch_side;
        return g * g;
    }
    int patch_dim() const { return patch_side * patch_side * latent_channels; }

    void validate() const {
        if (latent_side <= 0 || latent_channels <= 0 || patch_side <= 0 ||
            hidden_width <= 0 || depth <= 0 || state_dim <= 0 || dt_rank <= 0 ||
            gate_rank <= 0 || num_calligraphers <= 0 || num_fonts <= 0 ||
            num_characters <= 0) {
            throw std::invalid_argument("ModelConfig: all dimensions must be positive");
        }
        if (latent_side % patch_side != 0) {
            throw std::invalid_argument(
                "ModelConfig: latent_side " + std::to_string(latent_side) +
                " not divisible by patch_side " + std::to_string(patch_side));
        }
        if (hidden_width % 2 != 0) {
            throw std::invalid_argument("ModelConfig: hidden_width must be even");
        }
    }

    void validate_labels(const LabelTriple& l) const {
        auto check = [](int id, int vocab, const char* name) {
            if (id < 0 || id >= vocab) {
                throw std::out_of_range(std::string(name) + " id " + std::to_string(id) +
                                        " outside vocabulary [0," + std::to_string(vocab) + ")");
            }
        };
        check(l.calligrapher_id, num_calligraphers, "calligrapher");
        check(l.font_id, num_fonts, "font");
        check(l.character_id, num_characters, "character");
    }

    // Config used by the paper-scale experiments.
    static ModelConfig paper_scale() {
        ModelConfig c;
        c.latent_side = 32;
        c.latent_channels = 4;
        c.patch_side = 8;
        c.hidden_width = 512;
        c.depth = 4;
        c.state_dim = 64;
        c.dt_rank = 32;
        c.gate_rank = 32;
        return c;
    }
};

}  // namespace moyun
