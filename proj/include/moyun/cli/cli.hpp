#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "moyun/data/binarize.hpp"
#include "moyun/data/corpus.hpp"
#include "moyun/data/png_io.hpp"
#include "moyun/data/synth.hpp"
#include "moyun/eval/evaluate.hpp"
#include "moyun/train/trainer.hpp"

namespace moyun::cli {

namespace fs = std::filesystem;

struct CommandResult {
    int exit_code = 0;
    std::vector<std::string> artifacts;
    std::string summary;
};

// stable exit codes per error class
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;    // bad flags / unknown subcommand
inline constexpr int kExitInput = 2;    // invalid data or arguments
inline constexpr int kExitRuntime = 3;  // IO or processing failure

using Scalar = float;  // the CLI trains and samples in single precision

namespace detail {

inline GrayImage load_at_side(const fs::path& path, int side) {
    GrayImage img = load_png_gray(path.string());
    if (img.width != side || img.height != side) img = resize_nearest(img, side, side);
    return img;
}

struct LoadedSplit {
    LabelRegistry registry;
    std::vector<CorpusRecord> records;
};

inline LoadedSplit load_records(const fs::path& prepared, const fs::path& manifest) {
    LoadedSplit out;
    out.registry = LabelRegistry::load(prepared / "labels.txt");
    out.records = read_manifest(manifest);
    return out;
}

inline LabelTriple resolve_labels(const LabelRegistry& reg, const std::string& cal,
                                  const std::string& font, const std::string& ch,
                                  int cal_id, int font_id, int char_id) {
    LabelTriple l;
    l.calligrapher_id = cal.empty() ? cal_id : reg.calligrapher_id(cal);
    l.font_id = font.empty() ? font_id : reg.font_id(font);
    l.character_id = ch.empty() ? char_id : reg.character_id(ch);
    if (l.calligrapher_id < 0 || l.font_id < 0 || l.character_id < 0) {
        throw std::invalid_argument(
            "labels incomplete: give --calligrapher/--font/--character names or "
            "--calligrapher-id/--font-id/--character-id");
    }
    return l;
}

}  // namespace detail

// ------------------------------------------------------------- subcommands

inline void cmd_synth(const fs::path& out_dir, int per_triple, int side, uint64_t seed,
                      CommandResult& res, std::ostream& out) {
    int n = write_synth_corpus(out_dir, per_triple, side, seed);
    res.artifacts.push_back(out_dir.string());
    res.summary = "wrote " + std::to_string(n) + " synthetic images under " + out_dir.string();
    out << res.summary << "\n";
}

inline void cmd_prepare(const fs::path& root, const fs::path& out_dir, uint64_t seed,
                        CommandResult& res, std::ostream& out, std::ostream& err) {
    ScanResult scan = scan_corpus(root);
    for (const auto& e : scan.errors) err << "warning: " << e << "\n";
    if (scan.records.empty()) {
        throw std::invalid_argument("prepare: no usable records under " + root.string());
    }
    FallbackSegmenter segmenter;
    fs::create_directories(out_dir);
    for (size_t i = 0; i < scan.records.size(); ++i) {
        const CorpusRecord& r = scan.records[i];
        GrayImage img = load_png_gray((root / r.rel_path).string());
        GrayImage norm = binarize_and_normalize(img, segmenter, seed + i, r.rel_path);
        fs::path dst = out_dir / r.rel_path;
        fs::create_directories(dst.parent_path());
        save_png_gray(dst.string(), norm);
    }
    write_manifest(scan.records, out_dir / "manifest.tsv");
    LabelRegistry::build(scan.records).save(out_dir / "labels.txt");
    res.artifacts = {(out_dir / "manifest.tsv").string(), (out_dir / "labels.txt").string(),
                     out_dir.string()};
    res.summary = "prepared " + std::to_string(scan.records.size()) + " images into " +
                  out_dir.string();
    out << res.summary << "\n";
}

inline void cmd_stats(const fs::path& root, CommandResult& res, std::ostream& out,
                      std::ostream& err) {
    ScanResult scan = scan_corpus(root);
    for (const auto& e : scan.errors) err << "warning: " << e << "\n";
    std::map<std::string, int> by_cal, by_font, by_char;
    for (const auto& r : scan.records) {
        ++by_cal[r.calligrapher];
        ++by_font[r.font];
        ++by_char[r.character];
    }
    auto print = [&out](const char* title, const std::map<std::string, int>& m) {
        out << title << " (" << m.size() << ")\n";
        for (const auto& [name, count] : m) out << "  " << name << "\t" << count << "\n";
    };
    out << "images: " << scan.records.size() << "\n";
    print("calligraphers", by_cal);
    print("fonts", by_font);
    print("characters", by_char);
    res.summary = std::to_string(scan.records.size()) + " images, " +
                  std::to_string(by_cal.size()) + " calligraphers, " +
                  std::to_string(by_font.size()) + " fonts, " +
                  std::to_string(by_char.size()) + " characters";
}

inline void cmd_split(const fs::path& manifest, const fs::path& out_dir, int n_cals,
                      int n_chars, double train_frac, int max_per_char, uint64_t seed,
                      CommandResult& res, std::ostream& out) {
    std::vector<CorpusRecord> records = read_manifest(manifest);
    ExperimentSplit split =
        build_experiment_split(records, n_cals, n_chars, train_frac, max_per_char, seed);
    fs::create_directories(out_dir);
    write_manifest(split.train, out_dir / "train.tsv");
    write_manifest(split.test, out_dir / "test.tsv");
    std::ofstream hf(out_dir / "heldout.tsv");
    for (const auto& [cal, ch] : split.held_out) hf << cal << '\t' << ch << '\n';
    res.artifacts = {(out_dir / "train.tsv").string(), (out_dir / "test.tsv").string(),
                     (out_dir / "heldout.tsv").string()};
    res.summary = "split: " + std::to_string(split.train.size()) + " train / " +
                  std::to_string(split.test.size()) + " test records, " +
                  std::to_string(split.held_out.size()) + " held-out pairs";
    out << res.summary << "\n";
}

struct TrainFlags {
    fs::path prepared, train_manifest, out_dir;
    int steps = 20000, batch = 64, side = 32;
    double lr = 1e-4, ema_decay = 0.0;
    bool use_ema = false;
    int width = 128, depth = 2, patch = 4, state_dim = 16, dt_rank = 16;
    int gate_rank = 16;
    int schedule_T = 1000;
    int log_every = 100, checkpoint_every = 0;
    uint64_t seed = 0;
};

inline void cmd_train(const TrainFlags& f, CommandResult& res, std::ostream& out) {
    fs::path manifest =
        f.train_manifest.empty() ? f.prepared / "manifest.tsv" : f.train_manifest;
    detail::LoadedSplit data = detail::load_records(f.prepared, manifest);
    if (data.records.empty()) {
        throw std::invalid_argument("train: manifest " + manifest.string() + " is empty");
    }

    ModelConfig cfg;
    cfg.latent_side = f.side;
    cfg.latent_channels = 1;
    cfg.patch_side = f.patch;
    cfg.hidden_width = f.width;
    cfg.depth = f.depth;
    cfg.state_dim = f.state_dim;
    cfg.dt_rank = f.dt_rank;
    cfg.gate_rank = f.gate_rank;
    cfg.num_calligraphers = data.registry.num_calligraphers();
    cfg.num_fonts = data.registry.num_fonts();
    cfg.num_characters = data.registry.num_characters();
    cfg.validate();

    CodecSpec cspec;
    cspec.image_side = f.side;
    cspec.image_channels = 1;
    cspec.latent_side = f.side;
    cspec.latent_channels = 1;
    cspec.kind = CodecKind::identity;
    LatentCodec<Scalar> codec(cspec);

    std::vector<Tensor3<Scalar>> latents;
    std::vector<LabelTriple> labels;
    for (const auto& r : data.records) {
        GrayImage img = detail::load_at_side(f.prepared / r.rel_path, f.side);
        latents.push_back(codec.encode(to_unit_tensor<Scalar>(img)));
        labels.push_back({data.registry.calligrapher_id(r.calligrapher),
                          data.registry.font_id(r.font),
                          data.registry.character_id(r.character)});
    }

    DenoiserModel<Scalar> model(cfg);
    Rng init_rng(f.seed);
    model.init_default(init_rng);
    NoiseSchedule<Scalar> schedule =
        make_linear_schedule<Scalar>(f.schedule_T, Scalar(1e-4), Scalar(0.02));

    TrainConfig tc;
    tc.max_steps = f.steps;
    tc.batch_size = f.batch;
    tc.lr = f.lr;
    tc.seed = f.seed;
    tc.use_ema = f.use_ema;
    tc.ema_decay = f.ema_decay;
    tc.log_every = f.log_every;
    tc.checkpoint_every = f.checkpoint_every;
    tc.checkpoint_dir = f.out_dir;

    CheckpointMeta meta;
    meta.codec = cspec;
    meta.beta_start = 1e-4;
    meta.beta_end = 0.02;
    Trainer<Scalar> trainer(model, schedule, std::move(latents), std::move(labels), tc, meta);
    trainer.run([&out](const TrainLogEntry& e) {
        out << "step " << e.step << "  loss " << e.loss << "  elapsed " << e.seconds
            << "s\n";
    });
    data.registry.save(f.out_dir / "labels.txt");  // sampling resolves names from here
    res.artifacts = {(f.out_dir / "config.json").string(),
                     (f.out_dir / "weights.bin").string(),
                     (f.out_dir / "labels.txt").string()};
    res.summary = "trained " + std::to_string(trainer.current_step()) + " steps into " +
                  f.out_dir.string();
    out << res.summary << "\n";
}

struct SampleFlags {
    fs::path checkpoint, out_png;
    std::string calligrapher, font, character;
    int calligrapher_id = -1, font_id = -1, character_id = -1;
    int steps = 50;
    double eta = 0.0;
    int upscale = 0;  // 0 = auto: scale identity-codec output up to 256
    bool no_metadata = false;
    uint64_t seed = 0;
};

inline void cmd_sample(const SampleFlags& f, CommandResult& res, std::ostream& out) {
    CheckpointMeta meta = load_checkpoint_meta(f.checkpoint);
    DenoiserModel<Scalar> model(meta.model);
    load_checkpoint_weights(f.checkpoint, model);
    LabelRegistry registry = LabelRegistry::load(f.checkpoint / "labels.txt");
    LabelTriple labels =
        detail::resolve_labels(registry, f.calligrapher, f.font, f.character,
                               f.calligrapher_id, f.font_id, f.character_id);
    meta.model.validate_labels(labels);

    NoiseSchedule<Scalar> schedule = make_linear_schedule<Scalar>(
        meta.schedule_T, Scalar(meta.beta_start), Scalar(meta.beta_end));
    LatentCodec<Scalar> codec(meta.codec);

    SampleRequest req;
    req.labels = labels;
    req.channels = meta.codec.latent_channels;
    req.height = meta.codec.latent_side;
    req.width = meta.codec.latent_side;
    req.seed = f.seed;
    Tensor3<Scalar> latent =
        ddim_sample<Scalar>(model.denoiser(), req, schedule, f.steps, Scalar(f.eta));
    GrayImage img = from_unit_tensor(codec.decode(latent));

    int upscale = f.upscale;
    if (upscale == 0) upscale = std::max(1, 256 / img.width);
    if (upscale > 1) img = upscale_nearest(img, upscale);

    std::vector<std::pair<std::string, std::string>> text;
    if (!f.no_metadata) {
        text = {{"calligrapher", registry.calligrapher_name(labels.calligrapher_id)},
                {"font", registry.font_name(labels.font_id)},
                {"character", registry.character_name(labels.character_id)},
                {"seed", std::to_string(f.seed)},
                {"upscale", std::to_string(upscale)}};
    }
    save_png_gray(f.out_png.string(), img, text);
    res.artifacts = {f.out_png.string()};
    res.summary = "sampled " + registry.character_name(labels.character_id) + " as " +
                  registry.calligrapher_name(labels.calligrapher_id) + "/" +
                  registry.font_name(labels.font_id) + " -> " + f.out_png.string();
    out << res.summary << "\n";
}

struct EvalFlags {
    fs::path checkpoint, prepared, test_manifest, out_tsv;
    int steps = 50, batch = 16;
    double eta = 0.0;
    uint64_t seed = 0;
};

inline void cmd_eval(const EvalFlags& f, CommandResult& res, std::ostream& out) {
    CheckpointMeta meta = load_checkpoint_meta(f.checkpoint);
    DenoiserModel<Scalar> model(meta.model);
    load_checkpoint_weights(f.checkpoint, model);
    LabelRegistry registry = LabelRegistry::load(f.checkpoint / "labels.txt");
    NoiseSchedule<Scalar> schedule = make_linear_schedule<Scalar>(
        meta.schedule_T, Scalar(meta.beta_start), Scalar(meta.beta_end));
    LatentCodec<Scalar> codec(meta.codec);
    std::vector<CorpusRecord> test = read_manifest(f.test_manifest);

    SplitEvalConfig ec;
    ec.ddim_steps = f.steps;
    ec.eta = f.eta;
    ec.batch = f.batch;
    ec.seed = f.seed;
    int side = meta.codec.image_side;
    fs::path prepared = f.prepared;
    MetricsReport report = evaluate_split<Scalar>(
        model, schedule, codec, registry, test,
        [&prepared, side](const CorpusRecord& r) {
            return detail::load_at_side(prepared / r.rel_path, side);
        },
        ec);
    out << report.table();
    if (!f.out_tsv.empty()) {
        std::ofstream tf(f.out_tsv);
        if (!tf) throw std::runtime_error("cannot write report: " + f.out_tsv.string());
        tf << report.tsv();
        res.artifacts = {f.out_tsv.string()};
    }
    res.summary = "evaluated " + std::to_string(report.samples.size()) +
                  " samples: mean IOU " + format3(report.mean_iou) + ", mean PSNR " +
                  format3(report.mean_psnr) + " dB";
}

// --------------------------------------------------------------- dispatch

inline CommandResult dispatch(const std::vector<std::string>& args,
                              std::ostream& out = std::cout,
                              std::ostream& err = std::cerr) {
    CommandResult res;
    CLI::App app{"label-conditioned calligraphy glyph generator"};
    app.require_subcommand(1);
    // default config file can come from the environment
    const char* env_cfg = std::getenv("MOYUN_CONFIG");
    app.set_config("--config", env_cfg ? env_cfg : "",
                   "TOML/INI file with default flag values");
    std::string workdir;
    app.add_option("--workdir", workdir, "resolve relative paths from this directory");

    // synth
    auto* synth = app.add_subcommand("synth", "generate the toy glyph corpus");
    fs::path synth_out;
    int synth_per = 40, synth_side = 32;
    uint64_t synth_seed = 7;
    synth->add_option("--out", synth_out, "corpus output directory")->required();
    synth->add_option("--per-triple", synth_per, "images per (calligrapher,font,character)");
    synth->add_option("--side", synth_side, "rendered image side in pixels");
    synth->add_option("--seed", synth_seed, "jitter seed");

    // prepare
    auto* prepare = app.add_subcommand("prepare", "binarize and normalize a corpus");
    fs::path prep_root, prep_out;
    uint64_t prep_seed = 0;
    prepare->add_option("--root", prep_root, "corpus root directory")->required();
    prepare->add_option("--out", prep_out, "output directory")->required();
    prepare->add_option("--seed", prep_seed, "prompt sampling seed");

    // stats
    auto* stats = app.add_subcommand("stats", "count images per label axis");
    fs::path stats_root;
    uint64_t stats_seed = 0;
    stats->add_option("--root", stats_root, "corpus root directory")->required();
    stats->add_option("--seed", stats_seed, "accepted for uniformity; unused");

    // split
    auto* split = app.add_subcommand("split", "build the train/test split");
    fs::path split_manifest, split_out;
    int split_cals = 4, split_chars = 10, split_cap = 40;
    double split_frac = 0.9;
    uint64_t split_seed = 0;
    split->add_option("--manifest", split_manifest, "input manifest")->required();
    split->add_option("--out", split_out, "output directory")->required();
    split->add_option("--calligraphers", split_cals, "calligraphers to keep");
    split->add_option("--characters", split_chars, "shared characters to keep");
    split->add_option("--train-frac", split_frac, "training fraction of characters");
    split->add_option("--max-per-char", split_cap, "image cap per (cal,font,char)");
    split->add_option("--seed", split_seed, "held-out selection seed");

    // train
    auto* train = app.add_subcommand("train", "train the denoiser");
    TrainFlags tf;
    train->add_option("--prepared", tf.prepared, "prepared data directory")->required();
    train->add_option("--train-manifest", tf.train_manifest,
                      "training manifest (default: prepared/manifest.tsv)");
    train->add_option("--out", tf.out_dir, "checkpoint directory")->required();
    train->add_option("--steps", tf.steps, "optimization steps");
    train->add_option("--batch", tf.batch, "batch size");
    train->add_option("--side", tf.side, "training image side (identity codec)");
    train->add_option("--lr", tf.lr, "Adam learning rate");
    train->add_option("--width", tf.width, "hidden width");
    train->add_option("--depth", tf.depth, "block count");
    train->add_option("--patch", tf.patch, "patch side");
    train->add_option("--state-dim", tf.state_dim, "scan state size");
    train->add_option("--dt-rank", tf.dt_rank, "decay projection rank");
    train->add_option("--gate-rank", tf.gate_rank, "gate projection rank");
    train->add_option("--schedule-steps", tf.schedule_T, "diffusion timesteps");
    train->add_flag("--ema", tf.use_ema, "track an EMA copy of the weights");
    train->add_option("--ema-decay", tf.ema_decay, "EMA decay");
    train->add_option("--log-every", tf.log_every, "steps between log lines");
    train->add_option("--checkpoint-every", tf.checkpoint_every,
                      "steps between checkpoints (0: final only)");
    train->add_option("--seed", tf.seed, "training seed");

    // sample
    auto* sample = app.add_subcommand("sample", "generate one glyph PNG");
    SampleFlags sf;
    sample->add_option("--checkpoint", sf.checkpoint, "checkpoint directory")->required();
    sample->add_option("--out", sf.out_png, "output PNG path")->required();
    sample->add_option("--calligrapher", sf.calligrapher, "calligrapher name");
    sample->add_option("--font", sf.font, "font name");
    sample->add_option("--character", sf.character, "character name");
    sample->add_option("--calligrapher-id", sf.calligrapher_id, "raw calligrapher id");
    sample->add_option("--font-id", sf.font_id, "raw font id");
    sample->add_option("--character-id", sf.character_id, "raw character id");
    sample->add_option("--steps", sf.steps, "DDIM steps");
    sample->add_option("--eta", sf.eta, "DDIM eta in [0,1]");
    sample->add_option("--upscale", sf.upscale, "nearest upscale factor (0: auto to 256)");
    sample->add_flag("--no-metadata", sf.no_metadata, "omit PNG text metadata");
    sample->add_option("--seed", sf.seed, "sampling seed");

    // eval
    auto* eval = app.add_subcommand("eval", "score generated glyphs on a test split");
    EvalFlags ef;
    eval->add_option("--checkpoint", ef.checkpoint, "checkpoint directory")->required();
    eval->add_option("--prepared", ef.prepared, "prepared data directory")->required();
    eval->add_option("--test-manifest", ef.test_manifest, "test manifest")->required();
    eval->add_option("--out", ef.out_tsv, "per-sample TSV report path");
    eval->add_option("--steps", ef.steps, "DDIM steps");
    eval->add_option("--eta", ef.eta, "DDIM eta in [0,1]");
    eval->add_option("--batch", ef.batch, "sampling batch size");
    eval->add_option("--seed", ef.seed, "sampling seed");

    std::vector<std::string> argv = args;
    argv.insert(argv.begin(), "moyun");
    std::vector<const char*> cargv;
    for (const auto& a : argv) cargv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(cargv.size()), cargv.data());
    } catch (const CLI::ParseError& e) {
        // CLI11 prints help itself; --help is exit 0, bad usage is nonzero
        int code = app.exit(e, out, err);
        res.exit_code = code == 0 ? kExitOk : kExitUsage;
        res.summary = code == 0 ? "help" : std::string("usage error: ") + e.what();
        return res;
    }

    try {
        if (!workdir.empty()) fs::current_path(workdir);
        if (synth->parsed()) {
            cmd_synth(synth_out, synth_per, synth_side, synth_seed, res, out);
        } else if (prepare->parsed()) {
            cmd_prepare(prep_root, prep_out, prep_seed, res, out, err);
        } else if (stats->parsed()) {
            cmd_stats(stats_root, res, out, err);
        } else if (split->parsed()) {
            cmd_split(split_manifest, split_out, split_cals, split_chars, split_frac,
                      split_cap, split_seed, res, out);
        } else if (train->parsed()) {
            cmd_train(tf, res, out);
        } else if (sample->parsed()) {
            cmd_sample(sf, res, out);
        } else if (eval->parsed()) {
            cmd_eval(ef, res, out);
        }
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << "\n";
        res.exit_code = kExitInput;
        res.summary = e.what();
    } catch (const std::out_of_range& e) {
        err << "error: " << e.what() << "\n";
        res.exit_code = kExitInput;
        res.summary = e.what();
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        res.exit_code = kExitRuntime;
        res.summary = e.what();
    }
    return res;
}

}  // namespace moyun::cli
