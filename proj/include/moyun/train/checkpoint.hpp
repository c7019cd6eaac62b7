#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "moyun/backbone/model.hpp"
#include "moyun/codec/codec.hpp"
#include "moyun/train/optimizer.hpp"

namespace moyun {

// ------------------------------------------------------------ weights file
//
// Binary layout: magic "MYNW", u32 format version, u8 scalar byte width,
// u32 tensor count, then per tensor: u32 name length, name bytes, i64 rows,
// i64 cols, raw data.

inline constexpr uint32_t kWeightsVersion = 1;

template <class S>
inline void write_weights(const std::filesystem::path& path,
                          const std::vector<ParamView<S>>& views) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write weights file: " + path.string());
    f.write("MYNW", 4);
    uint32_t version = kWeightsVersion;
    f.write(reinterpret_cast<const char*>(&version), 4);
    uint8_t scalar_size = sizeof(S);
    f.write(reinterpret_cast<const char*>(&scalar_size), 1);
    uint32_t count = static_cast<uint32_t>(views.size());
    f.write(reinterpret_cast<const char*>(&count), 4);
    for (const auto& pv : views) {
        uint32_t len = static_cast<uint32_t>(pv.name.size());
        f.write(reinterpret_cast<const char*>(&len), 4);
        f.write(pv.name.data(), len);
        int64_t rows = pv.rows, cols = pv.cols;
        f.write(reinterpret_cast<const char*>(&rows), 8);
        f.write(reinterpret_cast<const char*>(&cols), 8);
        f.write(reinterpret_cast<const char*>(pv.data),
                static_cast<std::streamsize>(sizeof(S)) * pv.size());
    }
    if (!f) throw std::runtime_error("short write to weights file: " + path.string());
}

// Fill the given views from the file; every view must be present with the
// right shape, and the file may not contain unknown tensors.
template <class S>
inline void read_weights(const std::filesystem::path& path, std::vector<ParamView<S>> views) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read weights file: " + path.string());
    auto fail = [&path](const std::string& why) -> void {
        throw std::runtime_error("weights file " + path.string() + ": " + why);
    };
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "MYNW", 4) != 0) fail("bad magic");
    uint32_t version = 0;
    f.read(reinterpret_cast<char*>(&version), 4);
    if (version != kWeightsVersion) fail("unsupported version " + std::to_string(version));
    uint8_t scalar_size = 0;
    f.read(reinterpret_cast<char*>(&scalar_size), 1);
    if (scalar_size != sizeof(S)) {
        fail("scalar width " + std::to_string(scalar_size) + ", this build expects " +
             std::to_string(sizeof(S)));
    }
    uint32_t count = 0;
    f.read(reinterpret_cast<char*>(&count), 4);
    if (!f) fail("truncated header");

    std::map<std::string, ParamView<S>*> by_name;
    for (auto& pv : views) by_name[pv.name] = &pv;
    if (count != by_name.size()) {
        fail("holds " + std::to_string(count) + " tensors, expected " +
             std::to_string(by_name.size()));
    }
    std::map<std::string, bool> seen;
    for (uint32_t k = 0; k < count; ++k) {
        uint32_t len = 0;
        f.read(reinterpret_cast<char*>(&len), 4);
        if (!f || len > 4096) fail("corrupt tensor name length");
        std::string name(len, '\0');
        f.read(name.data(), len);
        int64_t rows = 0, cols = 0;
        f.read(reinterpret_cast<char*>(&rows), 8);
        f.read(reinterpret_cast<char*>(&cols), 8);
        if (!f) fail("truncated record for " + name);
        auto it = by_name.find(name);
        if (it == by_name.end()) fail("unknown tensor " + name);
        if (seen[name]) fail("duplicate tensor " + name);
        seen[name] = true;
        ParamView<S>& pv = *it->second;
        if (rows != pv.rows || cols != pv.cols) {
            fail("tensor " + name + " has shape " + std::to_string(rows) + "x" +
                 std::to_string(cols) + ", expected " + std::to_string(pv.rows) + "x" +
                 std::to_string(pv.cols));
        }
        f.read(reinterpret_cast<char*>(pv.data),
               static_cast<std::streamsize>(sizeof(S)) * pv.size());
        if (!f) fail("truncated data for " + name);
    }
    // anything left over means the count field lied
    f.peek();
    if (!f.eof()) fail("trailing bytes after last tensor");
}

// --------------------------------------------------------- checkpoint dirs

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = {{"latent_side", c.latent_side},
         {"latent_channels", c.latent_channels},
         {"patch_side", c.patch_side},
         {"hidden_width", c.hidden_width},
         {"depth", c.depth},
         {"state_dim", c.state_dim},
         {"dt_rank", c.dt_rank},
         {"gate_rank", c.gate_rank},
         {"num_calligraphers", c.num_calligraphers},
         {"num_fonts", c.num_fonts},
         {"num_characters", c.num_characters}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    j.at("latent_side").get_to(c.latent_side);
    j.at("latent_channels").get_to(c.latent_channels);
    j.at("patch_side").get_to(c.patch_side);
    j.at("hidden_width").get_to(c.hidden_width);
    j.at("depth").get_to(c.depth);
    j.at("state_dim").get_to(c.state_dim);
    j.at("dt_rank").get_to(c.dt_rank);
    j.at("gate_rank").get_to(c.gate_rank);
    j.at("num_calligraphers").get_to(c.num_calligraphers);
    j.at("num_fonts").get_to(c.num_fonts);
    j.at("num_characters").get_to(c.num_characters);
}

inline void to_json(nlohmann::json& j, const CodecSpec& s) {
    j = {{"image_side", s.image_side},
         {"image_channels", s.image_channels},
         {"latent_side", s.latent_side},
         {"latent_channels", s.latent_channels},
         {"kind", to_string(s.kind)}};
}

inline void from_json(const nlohmann::json& j, CodecSpec& s) {
    j.at("image_side").get_to(s.image_side);
    j.at("image_channels").get_to(s.image_channels);
    j.at("latent_side").get_to(s.latent_side);
    j.at("latent_channels").get_to(s.latent_channels);
    s.kind = codec_kind_from_string(j.at("kind").get<std::string>());
}

struct CheckpointMeta {
    int version = 1;
    int step = 0;
    ModelConfig model;
    int schedule_T = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    CodecSpec codec;
    double lr = 1e-4;
    int batch_size = 64;
    uint64_t seed = 0;
};

inline void to_json(nlohmann::json& j, const CheckpointMeta& m) {
    j = {{"version", m.version},     {"step", m.step},
         {"model", m.model},         {"schedule_T", m.schedule_T},
         {"beta_start", m.beta_start}, {"beta_end", m.beta_end},
         {"codec", m.codec},         {"lr", m.lr},
         {"batch_size", m.batch_size}, {"seed", m.seed}};
}

inline void from_json(const nlohmann::json& j, CheckpointMeta& m) {
    j.at("version").get_to(m.version);
    j.at("step").get_to(m.step);
    j.at("model").get_to(m.model);
    j.at("schedule_T").get_to(m.schedule_T);
    j.at("beta_start").get_to(m.beta_start);
    j.at("beta_end").get_to(m.beta_end);
    j.at("codec").get_to(m.codec);
    j.at("lr").get_to(m.lr);
    j.at("batch_size").get_to(m.batch_size);
    j.at("seed").get_to(m.seed);
}

// Optimizer moments as named views, so they share the weights file format.
template <class S>
inline std::vector<ParamView<S>> adam_views(Adam<S>& opt, DenoiserModel<S>& model) {
    std::vector<ParamView<S>> out;
    auto params = model.param_views();
    auto& m = opt.first_moments();
    auto& v = opt.second_moments();
    for (size_t k = 0; k < params.size(); ++k) {
        out.push_back({"adam.m." + params[k].name, m[k].data(),
                       static_cast<Eigen::Index>(m[k].size()), 1});
        out.push_back({"adam.v." + params[k].name, v[k].data(),
                       static_cast<Eigen::Index>(v[k].size()), 1});
    }
    return out;
}

// A checkpoint directory holds config.json, weights.bin and (when training
// state is saved) optimizer.bin.
template <class S>
inline void save_checkpoint(const std::filesystem::path& dir, const CheckpointMeta& meta,
                            DenoiserModel<S>& model, Adam<S>* opt = nullptr) {
    std::filesystem::create_directories(dir);
    nlohmann::json j = meta;
    std::ofstream cf(dir / "config.json");
    if (!cf) throw std::runtime_error("cannot write " + (dir / "config.json").string());
    cf << j.dump(2) << "\n";
    write_weights(dir / "weights.bin", model.param_views());
    if (opt) write_weights(dir / "optimizer.bin", adam_views(*opt, model));
}

inline CheckpointMeta load_checkpoint_meta(const std::filesystem::path& dir) {
    std::ifstream cf(dir / "config.json");
    if (!cf) throw std::runtime_error("cannot read " + (dir / "config.json").string());
    nlohmann::json j;
    try {
        cf >> j;
        return j.get<CheckpointMeta>();
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("corrupt checkpoint config " +
                                 (dir / "config.json").string() + ": " + e.what());
    }
}

template <class S>
inline void load_checkpoint_weights(const std::filesystem::path& dir,
                                    DenoiserModel<S>& model) {
    read_weights(dir / "weights.bin", model.param_views());
}

template <class S>
inline void load_checkpoint_optimizer(const std::filesystem::path& dir, Adam<S>& opt,
                                      DenoiserModel<S>& model, int step) {
    read_weights(dir / "optimizer.bin", adam_views(opt, model));
    opt.set_step_count(step);
}

}  // namespace moyun
