#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <set>

#include "moyun/data/binarize.hpp"
#include "moyun/data/corpus.hpp"
#include "moyun/data/png_io.hpp"
#include "moyun/data/synth.hpp"
#include "test_util.hpp"

using namespace moyun;
namespace fs = std::filesystem;

namespace {

fs::path make_temp_dir(const std::string& tag) {
    fs::path p = fs::temp_directory_path() / ("moyun_test_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

// Independent Otsu oracle: between-class variance from direct pixel loops,
// no histogram, argmax with smallest-threshold tiebreak.
int oracle_otsu(const GrayImage& img) {
    int best_t = -1;
    double best = 0.0;
    const double n = double(img.size());
    for (int t = 0; t < 256; ++t) {
        double n0 = 0, s0 = 0, s1 = 0;
        for (uint8_t p : img.pixels) {
            if (p <= t) {
                n0 += 1;
                s0 += p;
            } else {
                s1 += p;
            }
        }
        double n1 = n - n0;
        if (n0 == 0 || n1 == 0) continue;
        double d = s0 / n0 - s1 / n1;
        double var = (n0 / n) * (n1 / n) * d * d;
        if (var > best + 1e-9) {
            best = var;
            best_t = t;
        }
    }
    return best_t;
}

// Independent connected-components oracle: depth-first flood fill.
std::vector<std::set<std::pair<int, int>>> oracle_components(const BinaryMask& mask) {
    std::vector<std::set<std::pair<int, int>>> out;
    std::vector<uint8_t> seen(mask.size(), 0);
    for (int sy = 0; sy < mask.height; ++sy) {
        for (int sx = 0; sx < mask.width; ++sx) {
            if (!mask.at(sy, sx) || seen[size_t(sy) * mask.width + sx]) continue;
            std::set<std::pair<int, int>> comp;
            std::vector<std::pair<int, int>> stack{{sx, sy}};
            seen[size_t(sy) * mask.width + sx] = 1;
            while (!stack.empty()) {
                auto [x, y] = stack.back();
                stack.pop_back();
                comp.insert({x, y});
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        int nx = x + dx, ny = y + dy;
                        if ((dx | dy) == 0 || nx < 0 || ny < 0 || nx >= mask.width ||
                            ny >= mask.height)
                            continue;
                        if (mask.at(ny, nx) && !seen[size_t(ny) * mask.width + nx]) {
                            seen[size_t(ny) * mask.width + nx] = 1;
                            stack.push_back({nx, ny});
                        }
                    }
            }
            out.push_back(std::move(comp));
        }
    }
    return out;
}

}  // namespace

TEST_CASE("otsu matches exhaustive oracle on random images") {
    Rng rng(41);
    for (int trial = 0; trial < 10; ++trial) {
        GrayImage img(17, 13);
        for (auto& p : img.pixels) {
            // bimodal mixture so the split is meaningful
            double v = rng.uniform() < 0.4 ? 40 + 25 * rng.normal() : 190 + 25 * rng.normal();
            p = static_cast<uint8_t>(std::clamp(v, 0.0, 255.0));
        }
        OtsuResult got = otsu_threshold(img);
        REQUIRE(got.threshold == oracle_otsu(img));
        for (size_t i = 0; i < img.size(); ++i) {
            REQUIRE(int(got.mask.pixels[i]) == (img.pixels[i] <= got.threshold ? 1 : 0));
        }
    }
}

TEST_CASE("otsu on a clean two-level image separates the levels") {
    GrayImage img(10, 10, 200);
    for (int y = 2; y < 6; ++y)
        for (int x = 2; x < 6; ++x) img.at(y, x) = 30;
    OtsuResult r = otsu_threshold(img);
    REQUIRE(r.threshold >= 30);
    REQUIRE(r.threshold < 200);
    int fg = 0;
    for (auto v : r.mask.pixels) fg += v;
    REQUIRE(fg == 16);  // the dark square is the foreground
}

TEST_CASE("otsu on a constant image yields empty foreground") {
    GrayImage img(8, 8, 77);
    OtsuResult r = otsu_threshold(img);
    REQUIRE(r.threshold == 77);
    for (auto v : r.mask.pixels) REQUIRE(v == 0);
    REQUIRE_THROWS_AS(otsu_threshold(GrayImage()), std::invalid_argument);
}

TEST_CASE("extract_regions matches flood-fill oracle") {
    Rng rng(42);
    for (int trial = 0; trial < 8; ++trial) {
        BinaryMask mask(25, 20, 0);
        for (auto& p : mask.pixels) p = rng.uniform() < 0.35 ? 1 : 0;
        auto oracle = oracle_components(mask);
        auto got = extract_regions(mask, 0);
        REQUIRE(got.size() == oracle.size());
        std::set<std::set<std::pair<int, int>>> got_sets, want_sets(oracle.begin(), oracle.end());
        for (const Region& r : got) {
            std::set<std::pair<int, int>> s;
            for (const Point& p : r.pixels) s.insert({p.x, p.y});
            REQUIRE(s.size() == r.pixels.size());  // no duplicates
            got_sets.insert(std::move(s));
        }
        REQUIRE(got_sets == want_sets);
    }
}

TEST_CASE("extract_regions min_area filter is strict") {
    // one 10x10 component (area 100) and one 101-pixel component
    BinaryMask mask(40, 20, 0);
    for (int y = 0; y < 10; ++y)
        for (int x = 0; x < 10; ++x) mask.at(y, x) = 1;
    for (int y = 0; y < 10; ++y)
        for (int x = 20; x < 30; ++x) mask.at(y, x) = 1;
    mask.at(10, 20) = 1;  // 101st pixel, 8-connected to the second block
    auto all = extract_regions(mask, 0);
    REQUIRE(all.size() == 2);
    auto filtered = extract_regions(mask, 100);
    REQUIRE(filtered.size() == 1);
    REQUIRE(filtered[0].area() == 101);
}

TEST_CASE("diagonal pixels are 8-connected") {
    BinaryMask mask(3, 3, 0);
    mask.at(0, 0) = 1;
    mask.at(1, 1) = 1;
    mask.at(2, 2) = 1;
    REQUIRE(extract_regions(mask, 0).size() == 1);
}

TEST_CASE("positive point budget follows the area ratio rule") {
    // floor(area*100/total) clamped to [1,20]
    REQUIRE(positive_point_count(76, 10000) == 1);    // 0.76% floors to 0, clamps to 1
    REQUIRE(positive_point_count(101, 10000) == 1);   // 1.01% floors to 1
    REQUIRE(positive_point_count(1000, 9994) == 10);  // 10.006% floors to 10
    REQUIRE(positive_point_count(2050, 10000) == 20); // 20.5% floors to 20
    REQUIRE(positive_point_count(10000, 10000) == 20);  // whole image clamps to 20
    REQUIRE(positive_point_count(1, 1000000) == 1);
}

TEST_CASE("prompt points land on strokes and background respectively") {
    BinaryMask mask(60, 60, 0);
    for (int y = 5; y < 25; ++y)
        for (int x = 5; x < 25; ++x) mask.at(y, x) = 1;  // area 400
    for (int y = 35; y < 55; ++y)
        for (int x = 30; x < 58; ++x) mask.at(y, x) = 1;  // area 560
    auto regions = extract_regions(mask, 100);
    REQUIRE(regions.size() == 2);
    SegmenterPrompt prompt = sample_prompt_points(regions, 60, 60, 5);

    // expected counts: floor(400*100/3600)=11, floor(560*100/3600)=15,
    // total 26 truncated to 20
    REQUIRE(prompt.positives.size() == 20);
    REQUIRE(prompt.negatives.size() == 50);
    for (const Point& p : prompt.positives) REQUIRE(mask.at(p.y, p.x) == 1);
    for (const Point& p : prompt.negatives) REQUIRE(mask.at(p.y, p.x) == 0);

    // deterministic under the seed
    SegmenterPrompt again = sample_prompt_points(regions, 60, 60, 5);
    REQUIRE(prompt.positives == again.positives);
    REQUIRE(prompt.negatives == again.negatives);

    REQUIRE_THROWS_AS(sample_prompt_points({}, 60, 60, 5), std::invalid_argument);
}

TEST_CASE("small region still receives one positive point") {
    BinaryMask mask(256, 256, 0);
    for (int y = 0; y < 11; ++y)
        for (int x = 0; x < 11; ++x) mask.at(y, x) = 1;  // 121 px, 0.18% of image
    auto regions = extract_regions(mask, 100);
    REQUIRE(regions.size() == 1);
    SegmenterPrompt prompt = sample_prompt_points(regions, 256, 256, 1);
    REQUIRE(prompt.positives.size() == 1);
    REQUIRE(prompt.negatives.size() == 50);
}

TEST_CASE("fallback segmenter keeps only components holding a positive point") {
    GrayImage img(30, 20, 230);
    for (int y = 2; y < 8; ++y)
        for (int x = 2; x < 8; ++x) img.at(y, x) = 20;
    for (int y = 12; y < 18; ++y)
        for (int x = 20; x < 26; ++x) img.at(y, x) = 20;
    FallbackSegmenter seg;
    BinaryMask out = seg.segment(img, {{3, 3}}, {});
    int fg = 0;
    for (auto v : out.pixels) fg += v;
    REQUIRE(fg == 36);
    REQUIRE(out.at(3, 3) == 1);
    REQUIRE(out.at(14, 22) == 0);

    BinaryMask both = seg.segment(img, {{3, 3}, {22, 14}}, {});
    fg = 0;
    for (auto v : both.pixels) fg += v;
    REQUIRE(fg == 72);
}

TEST_CASE("segment wrapper rejects wrong-sized masks") {
    struct BadSegmenter : Segmenter {
        BinaryMask segment(const GrayImage&, const std::vector<Point>&,
                           const std::vector<Point>&) override {
            return BinaryMask(2, 2, 0);
        }
    } bad;
    GrayImage img(10, 10, 128);
    REQUIRE_THROWS_WITH(segment(img, {}, bad), Catch::Matchers::ContainsSubstring("wrong size"));
}

TEST_CASE("binarize_and_normalize: 300x150 photo becomes centered 256x256") {
    GrayImage photo = render_noisy_calligraphy(synth::glyphs()[0].second, synth::hands()[0],
                                               synth::FontStyle::regular, 300, 150, 11);
    FallbackSegmenter seg;
    GrayImage out = binarize_and_normalize(photo, seg, 3, "photo");
    REQUIRE(out.width == 256);
    REQUIRE(out.height == 256);
    for (auto v : out.pixels) REQUIRE((v == 0 || v == 255));

    // 300x150 scales to 256x128, centered: rows [64,192) may hold ink
    bool any_ink = false;
    for (int y = 0; y < 256; ++y) {
        for (int x = 0; x < 256; ++x) {
            if (out.at(y, x) == 0) {
                any_ink = true;
                REQUIRE(y >= 64);
                REQUIRE(y < 192);
            }
        }
    }
    REQUIRE(any_ink);
}

TEST_CASE("binarize_and_normalize is deterministic and reports empty foreground") {
    GrayImage photo = render_noisy_calligraphy(synth::glyphs()[3].second, synth::hands()[1],
                                               synth::FontStyle::running, 200, 220, 21);
    FallbackSegmenter seg;
    GrayImage a = binarize_and_normalize(photo, seg, 9, "a");
    GrayImage b = binarize_and_normalize(photo, seg, 9, "a");
    REQUIRE(a.pixels == b.pixels);

    GrayImage blank(64, 64, 200);
    REQUIRE_THROWS_WITH(binarize_and_normalize(blank, seg, 1, "blank.png"),
                        Catch::Matchers::ContainsSubstring("blank.png"));
}

TEST_CASE("tiny specks alone fall back to the raw mask path") {
    // darker pixels exist but no component exceeds 100 px, so the pipeline
    // uses the Otsu mask directly instead of prompting a segmenter
    GrayImage img(64, 64, 220);
    for (int y = 10; y < 16; ++y)
        for (int x = 10; x < 16; ++x) img.at(y, x) = 15;  // 36 px
    struct NeverCalled : Segmenter {
        BinaryMask segment(const GrayImage&, const std::vector<Point>&,
                           const std::vector<Point>&) override {
            throw std::runtime_error("segmenter must not be called");
        }
    } seg;
    GrayImage out = binarize_and_normalize(img, seg, 1);
    REQUIRE(out.width == 256);
    int ink = 0;
    for (auto v : out.pixels) ink += (v == 0);
    REQUIRE(ink > 0);
}

TEST_CASE("png roundtrip preserves grayscale pixels") {
    fs::path dir = make_temp_dir("png");
    GrayImage img(33, 17);
    Rng rng(3);
    for (auto& p : img.pixels) p = static_cast<uint8_t>(rng.uniform_int(0, 255));
    save_png_gray((dir / "x.png").string(), img, {{"label", "demo"}});
    GrayImage back = load_png_gray((dir / "x.png").string());
    REQUIRE(back.width == 33);
    REQUIRE(back.height == 17);
    REQUIRE(back.pixels == img.pixels);
    REQUIRE_THROWS(load_png_gray((dir / "missing.png").string()));
    fs::remove_all(dir);
}

TEST_CASE("scan_corpus finds records in sorted order and reports strays") {
    fs::path root = make_temp_dir("scan");
    auto touch = [&](const fs::path& rel) {
        fs::create_directories(root / rel.parent_path());
        std::ofstream(root / rel).put('\0');
    };
    touch("wang/regular/glyph_x/01.png");
    touch("wang/regular/glyph_x/00.png");
    touch("liu/cursive/glyph_o/03.png");
    touch("wang/regular/glyph_x/notes.txt");   // wrong extension
    touch("wang/regular/glyph_x/extra.png");   // non-numeric index
    touch("wang/stray.png");                   // wrong depth

    ScanResult res = scan_corpus(root);
    REQUIRE(res.records.size() == 3);
    REQUIRE(res.records[0].calligrapher == "liu");
    REQUIRE(res.records[1].rel_path == "wang/regular/glyph_x/00.png");
    REQUIRE(res.records[2].index == 1);
    REQUIRE(res.errors.size() == 3);

    REQUIRE_THROWS_AS(scan_corpus(root / "nope"), std::invalid_argument);
    fs::remove_all(root);
}

TEST_CASE("manifest writes byte-stable sorted records and reads them back") {
    fs::path dir = make_temp_dir("manifest");
    std::vector<CorpusRecord> recs = {
        {"yan", "running", "glyph_t", 2, "yan/running/glyph_t/02.png"},
        {"liu", "regular", "glyph_h", 0, "liu/regular/glyph_h/00.png"},
    };
    write_manifest(recs, dir / "m.tsv");
    std::reverse(recs.begin(), recs.end());
    write_manifest(recs, dir / "m2.tsv");
    std::ifstream f1(dir / "m.tsv"), f2(dir / "m2.tsv");
    std::string s1((std::istreambuf_iterator<char>(f1)), {});
    std::string s2((std::istreambuf_iterator<char>(f2)), {});
    REQUIRE(s1 == s2);  // order-independent output
    REQUIRE(s1 == "liu\tregular\tglyph_h\t0\tliu/regular/glyph_h/00.png\n"
                  "yan\trunning\tglyph_t\t2\tyan/running/glyph_t/02.png\n");

    auto back = read_manifest(dir / "m.tsv");
    REQUIRE(back.size() == 2);
    REQUIRE(back[0].calligrapher == "liu");
    REQUIRE(back[1].index == 2);

    std::ofstream(dir / "bad.tsv") << "only\ttwo\n";
    REQUIRE_THROWS_WITH(read_manifest(dir / "bad.tsv"),
                        Catch::Matchers::ContainsSubstring("line 1"));
    fs::remove_all(dir);
}

TEST_CASE("label registry assigns dense sorted ids and round-trips") {
    std::vector<CorpusRecord> recs = {
        {"yan", "running", "glyph_t", 0, "p"},
        {"liu", "regular", "glyph_h", 0, "q"},
        {"liu", "running", "glyph_t", 1, "r"},
    };
    LabelRegistry reg = LabelRegistry::build(recs);
    REQUIRE(reg.num_calligraphers() == 2);
    REQUIRE(reg.num_fonts() == 2);
    REQUIRE(reg.num_characters() == 2);
    REQUIRE(reg.calligrapher_id("liu") == 0);
    REQUIRE(reg.calligrapher_id("yan") == 1);
    REQUIRE(reg.font_name(1) == "running");
    REQUIRE(reg.character_id("glyph_t") == 1);
    REQUIRE_THROWS_AS(reg.calligrapher_id("nobody"), std::out_of_range);
    REQUIRE_THROWS_AS(reg.font_name(5), std::out_of_range);
    REQUIRE_THROWS_AS(LabelRegistry::build({}), std::invalid_argument);

    fs::path dir = make_temp_dir("registry");
    reg.save(dir / "labels.txt");
    LabelRegistry back = LabelRegistry::load(dir / "labels.txt");
    REQUIRE(back == reg);

    std::ofstream(dir / "bad.txt") << "[calligraphers]\n1\tliu\n";
    REQUIRE_THROWS_WITH(LabelRegistry::load(dir / "bad.txt"),
                        Catch::Matchers::ContainsSubstring("dense"));
    fs::remove_all(dir);
}

TEST_CASE("experiment split holds out characters per calligrapher") {
    // 5 calligraphers x 10 shared characters, 2 fonts, 3 images each
    std::vector<CorpusRecord> recs;
    for (int c = 0; c < 5; ++c)
        for (int f = 0; f < 2; ++f)
            for (int ch = 0; ch < 10; ++ch)
                for (int i = 0; i < 3; ++i) {
                    CorpusRecord r;
                    r.calligrapher = "cal" + std::to_string(c);
                    r.font = "font" + std::to_string(f);
                    r.character = "ch" + std::to_string(ch);
                    r.index = i;
                    r.rel_path = r.calligrapher + "/" + r.font + "/" + r.character + "/" +
                                 std::to_string(i) + ".png";
                    recs.push_back(r);
                }

    ExperimentSplit split = build_experiment_split(recs, 5, 10, 0.9, 2, 77);
    // ceil(0.1*10)=1 held-out character per calligrapher
    REQUIRE(split.held_out.size() == 5);
    std::set<std::string> held_cals;
    for (const auto& [cal, ch] : split.held_out) held_cals.insert(cal);
    REQUIRE(held_cals.size() == 5);

    // max_per_character=2 caps each (cal,font,char) group from 3 to 2
    REQUIRE(split.train.size() == 5 * 2 * 9 * 2);
    REQUIRE(split.test.size() == 5 * 2 * 1 * 2);

    // (calligrapher, character) pairs never straddle the split
    std::set<std::pair<std::string, std::string>> train_pairs, test_pairs;
    for (const auto& r : split.train) train_pairs.insert({r.calligrapher, r.character});
    for (const auto& r : split.test) test_pairs.insert({r.calligrapher, r.character});
    for (const auto& p : test_pairs) REQUIRE(train_pairs.count(p) == 0);
    std::set<std::pair<std::string, std::string>> held(split.held_out.begin(),
                                                       split.held_out.end());
    REQUIRE(test_pairs == held);

    // deterministic under the seed
    ExperimentSplit again = build_experiment_split(recs, 5, 10, 0.9, 2, 77);
    REQUIRE(again.held_out == split.held_out);
    REQUIRE(again.train == split.train);

    // deficits fail loudly
    REQUIRE_THROWS_WITH(build_experiment_split(recs, 6, 10, 0.9, 2, 1),
                        Catch::Matchers::ContainsSubstring("calligraphers"));
    REQUIRE_THROWS_WITH(build_experiment_split(recs, 5, 11, 0.9, 2, 1),
                        Catch::Matchers::ContainsSubstring("share"));
    REQUIRE_THROWS_AS(build_experiment_split(recs, 5, 10, 1.5, 2, 1), std::invalid_argument);
}

TEST_CASE("synthetic corpus renders, scans, and feeds the registry") {
    fs::path root = make_temp_dir("synth");
    int n = write_synth_corpus(root, 2, 64, 5);
    REQUIRE(n == 4 * 3 * 10 * 2);

    ScanResult res = scan_corpus(root);
    REQUIRE(res.errors.empty());
    REQUIRE(res.records.size() == size_t(n));

    LabelRegistry reg = LabelRegistry::build(res.records);
    REQUIRE(reg.num_calligraphers() == 4);
    REQUIRE(reg.num_fonts() == 3);
    REQUIRE(reg.num_characters() == 10);

    // every image binarizes through the full pipeline
    GrayImage img = load_png_gray((root / res.records[0].rel_path).string());
    REQUIRE(img.width == 64);
    FallbackSegmenter seg;
    GrayImage norm = binarize_and_normalize(img, seg, 1, res.records[0].rel_path);
    REQUIRE(norm.width == 256);
    int ink = 0;
    for (auto v : norm.pixels) ink += (v == 0);
    REQUIRE(ink > 100);

    // hands are visually distinct: same glyph+font differs across calligraphers
    GrayImage a = synth::render_glyph(synth::glyphs()[0].second, synth::hands()[0],
                                      synth::FontStyle::regular, 64, 9);
    GrayImage b = synth::render_glyph(synth::glyphs()[0].second, synth::hands()[2],
                                      synth::FontStyle::regular, 64, 9);
    REQUIRE(a.pixels != b.pixels);
    fs::remove_all(root);
}
