#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "moyun/eval/evaluate.hpp"
#include "test_util.hpp"

using namespace moyun;

namespace {

GrayImage white(int w, int h) { return GrayImage(w, h, 255); }

// brute-force IOU oracle over ink pixels (value < 128)
double oracle_iou(const GrayImage& a, const GrayImage& b) {
    double inter = 0, uni = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        bool ia = a.pixels[i] < 128, ib = b.pixels[i] < 128;
        if (ia && ib) inter += 1;
        if (ia || ib) uni += 1;
    }
    return uni == 0 ? 1.0 : inter / uni;
}

}  // namespace

TEST_CASE("iou of one-third overlap") {
    GrayImage a = white(10, 10), b = white(10, 10);
    // a inks columns 0..3 of row 0, b inks columns 2..5: |I|=2, |U|=6
    for (int x = 0; x < 4; ++x) a.at(0, x) = 0;
    for (int x = 2; x < 6; ++x) b.at(0, x) = 0;
    REQUIRE(iou_ink(a, b) == Catch::Approx(2.0 / 6.0).epsilon(1e-12));
    REQUIRE(iou_ink(b, a) == iou_ink(a, b));
}

TEST_CASE("iou endpoints") {
    GrayImage a = white(5, 5), b = white(5, 5);
    REQUIRE(iou_ink(a, b) == 1.0);  // blank pages agree
    a.at(1, 1) = 0;
    REQUIRE(iou_ink(a, a) == 1.0);
    REQUIRE(iou_ink(a, b) == 0.0);  // disjoint
    b.at(3, 3) = 0;
    REQUIRE(iou_ink(a, b) == 0.0);
}

TEST_CASE("iou matches brute-force oracle on random masks") {
    Rng rng(8);
    for (int trial = 0; trial < 10; ++trial) {
        GrayImage a(14, 9), b(14, 9);
        for (auto& p : a.pixels) p = rng.uniform() < 0.4 ? 0 : 255;
        for (auto& p : b.pixels) p = rng.uniform() < 0.4 ? 0 : 255;
        REQUIRE(iou_ink(a, b) == Catch::Approx(oracle_iou(a, b)).epsilon(1e-12));
    }
}

TEST_CASE("metrics reject mismatched shapes") {
    REQUIRE_THROWS_AS(iou_ink(white(4, 4), white(5, 4)), std::invalid_argument);
    REQUIRE_THROWS_AS(psnr(white(4, 4), white(4, 5)), std::invalid_argument);
    REQUIRE_THROWS_AS(iou_ink(GrayImage(), GrayImage()), std::invalid_argument);
}

TEST_CASE("psnr of a uniform unit difference is 48.131 dB") {
    GrayImage a(16, 16, 100), b(16, 16, 101);
    // MSE = 1 -> 10*log10(255^2) = 48.1308...
    REQUIRE(psnr(a, b) == Catch::Approx(10.0 * std::log10(255.0 * 255.0)).epsilon(1e-12));
    REQUIRE(format3(psnr(a, b)).substr(0, 6) == "48.131");
}

TEST_CASE("psnr endpoints and oracle") {
    GrayImage a(8, 8, 0), b(8, 8, 255);
    REQUIRE(psnr(a, b) == Catch::Approx(0.0).margin(1e-12));  // max possible error
    REQUIRE(std::isinf(psnr(a, a)));

    Rng rng(10);
    GrayImage x(11, 7), y(11, 7);
    for (auto& p : x.pixels) p = uint8_t(rng.uniform_int(0, 255));
    for (auto& p : y.pixels) p = uint8_t(rng.uniform_int(0, 255));
    double mse = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        double d = double(x.pixels[i]) - double(y.pixels[i]);
        mse += d * d;
    }
    mse /= double(x.size());
    REQUIRE(psnr(x, y) == Catch::Approx(10.0 * std::log10(255.0 * 255.0 / mse)).epsilon(1e-12));
    REQUIRE(psnr(x, y) == psnr(y, x));
}

TEST_CASE("rebinarize yields exact two-level output") {
    Rng rng(12);
    GrayImage img(20, 20);
    for (auto& p : img.pixels) {
        double v = rng.uniform() < 0.3 ? 50 + 10 * rng.normal() : 200 + 10 * rng.normal();
        p = uint8_t(std::clamp(v, 0.0, 255.0));
    }
    GrayImage out = rebinarize(img);
    int ink = 0;
    for (auto v : out.pixels) {
        REQUIRE((v == 0 || v == 255));
        ink += (v == 0);
    }
    REQUIRE(ink > 0);
    REQUIRE(ink < int(out.size()));
}

TEST_CASE("ocr accuracy aggregates per font with three-decimal ratios") {
    // 60 regular samples with 47 correct -> 0.783; 10 cursive with 5 correct
    // and 2 scripted failures excluded from the ratio
    std::vector<MockOcrClient::Scripted> script;
    std::vector<OcrSample> samples;
    GrayImage img = white(4, 4);
    for (int i = 0; i < 60; ++i) {
        samples.push_back({img, "regular", "glyph_x"});
        script.push_back({{i < 47 ? "glyph_x" : "glyph_o", 0.9}, false});
    }
    for (int i = 0; i < 12; ++i) {
        samples.push_back({img, "cursive", "glyph_t"});
        if (i < 2) script.push_back({{}, true});
        else script.push_back({{i < 7 ? "glyph_t" : "??", 0.5}, false});
    }
    MockOcrClient client(script);
    OcrReport rep = ocr_accuracy(samples, client);
    REQUIRE(rep.rows.size() == 2);
    REQUIRE(rep.rows[0].font == "cursive");
    REQUIRE(rep.rows[0].failures == 2);
    REQUIRE(rep.rows[0].recognized == 10);
    REQUIRE(rep.rows[0].correct == 5);
    REQUIRE(rep.rows[1].font == "regular");
    REQUIRE(format3(rep.rows[1].accuracy()) == "0.783");
    REQUIRE(rep.total_failures == 2);
    REQUIRE(rep.table().find("0.783") != std::string::npos);
    REQUIRE(client.calls() == 72);

    // exhausted script fails loudly
    REQUIRE_THROWS_WITH(client.recognize(img), Catch::Matchers::ContainsSubstring("exhausted"));
}

TEST_CASE("batched ddim equals per-request ddim under a pointwise denoiser") {
    auto s = make_linear_schedule<double>(40, 1e-4, 0.02);
    Denoiser<double> one = [](const Tensor3<double>& x, int t, const LabelTriple&) {
        Tensor3<double> e(x.c, x.h, x.w);
        for (size_t i = 0; i < x.size(); ++i) e.v[i] = 0.3 * x.v[i] + 0.01 * t;
        return e;
    };
    BatchDenoiser<double> batched = [&](const std::vector<Tensor3<double>>& xs, int t,
                                        const std::vector<LabelTriple>& ls) {
        std::vector<Tensor3<double>> out;
        for (size_t i = 0; i < xs.size(); ++i) out.push_back(one(xs[i], t, ls[i]));
        return out;
    };
    std::vector<SampleRequest> reqs(3);
    for (int i = 0; i < 3; ++i) {
        reqs[i].channels = 1;
        reqs[i].height = 6;
        reqs[i].width = 6;
        reqs[i].seed = 100 + i;
    }
    for (double eta : {0.0, 1.0}) {
        auto batch = ddim_sample_batch<double>(batched, reqs, s, 10, eta);
        REQUIRE(batch.size() == 3);
        for (int i = 0; i < 3; ++i) {
            auto single = ddim_sample<double>(one, reqs[i], s, 10, eta);
            REQUIRE(batch[i].v == single.v);  // bitwise
        }
    }
}

TEST_CASE("evaluate_split produces deterministic per-record metrics") {
    std::vector<CorpusRecord> recs = {
        {"wang", "regular", "glyph_x", 0, "a"},
        {"wang", "regular", "glyph_o", 0, "b"},
        {"yan", "regular", "glyph_x", 0, "c"},
    };
    LabelRegistry reg = LabelRegistry::build(recs);
    ModelConfig cfg;
    cfg.latent_side = 8;
    cfg.patch_side = 4;
    cfg.hidden_width = 16;
    cfg.depth = 1;
    cfg.state_dim = 4;
    cfg.dt_rank = 4;
    cfg.gate_rank = 4;
    cfg.num_calligraphers = reg.num_calligraphers();
    cfg.num_fonts = reg.num_fonts();
    cfg.num_characters = reg.num_characters();
    DenoiserModel<double> model(cfg);
    Rng rng(5);
    model.init_default(rng);

    CodecSpec spec;
    spec.image_side = 8;
    spec.image_channels = 1;
    spec.latent_side = 8;
    spec.latent_channels = 1;
    spec.kind = CodecKind::identity;
    LatentCodec<double> codec(spec);

    auto schedule = make_linear_schedule<double>(50, 1e-4, 0.02);
    SplitEvalConfig ec;
    ec.ddim_steps = 5;
    ec.batch = 2;
    ec.seed = 9;
    auto truth = [](const CorpusRecord&) {
        GrayImage g(8, 8, 255);
        for (int x = 0; x < 8; ++x) g.at(4, x) = 0;
        return g;
    };
    MetricsReport rep = evaluate_split(model, schedule, codec, reg, recs, truth, ec);
    REQUIRE(rep.samples.size() == 3);
    for (const auto& s : rep.samples) {
        REQUIRE(s.iou >= 0.0);
        REQUIRE(s.iou <= 1.0);
        REQUIRE(s.psnr <= kPsnrCap);
    }
    MetricsReport again = evaluate_split(model, schedule, codec, reg, recs, truth, ec);
    for (size_t i = 0; i < 3; ++i) {
        REQUIRE(rep.samples[i].iou == again.samples[i].iou);
        REQUIRE(rep.samples[i].psnr == again.samples[i].psnr);
    }
    REQUIRE(rep.tsv().find("wang\tregular\tglyph_x\t0\t") != std::string::npos);
    REQUIRE(rep.table().find("mean IOU") != std::string::npos);

    MetricsReport empty = evaluate_split(model, schedule, codec, reg, {}, truth, ec);
    REQUIRE(empty.samples.empty());
}
