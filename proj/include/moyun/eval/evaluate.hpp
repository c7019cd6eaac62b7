#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "moyun/backbone/model.hpp"
#include "moyun/codec/codec.hpp"
#include "moyun/data/binarize.hpp"
#include "moyun/data/corpus.hpp"
#include "moyun/diffusion/sampler.hpp"
#include "moyun/eval/metrics.hpp"
#include "moyun/eval/ocr.hpp"

namespace moyun {

inline std::string format3(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    return buf;
}

// ---------------------------------------------------------------- OCR study

struct OcrSample {
    GrayImage image;
    std::string font;
    std::string expected_character;
};

struct OcrFontRow {
    std::string font;
    int correct = 0;
    int recognized = 0;  // calls that returned a result
    int failures = 0;    // client errors, excluded from the accuracy ratio

    double accuracy() const { return recognized == 0 ? 0.0 : double(correct) / recognized; }
};

struct OcrReport {
    std::vector<OcrFontRow> rows;  // sorted by font name
    int total_correct = 0, total_recognized = 0, total_failures = 0;

    double overall_accuracy() const {
        return total_recognized == 0 ? 0.0 : double(total_correct) / total_recognized;
    }

    std::string table() const {
        std::ostringstream os;
        os << "font        accuracy  correct  recognized  failures\n";
        for (const auto& r : rows) {
            char line[128];
            std::snprintf(line, sizeof(line), "%-11s %8s %8d %11d %9d\n", r.font.c_str(),
                          format3(r.accuracy()).c_str(), r.correct, r.recognized, r.failures);
            os << line;
        }
        char line[128];
        std::snprintf(line, sizeof(line), "%-11s %8s %8d %11d %9d\n", "overall",
                      format3(overall_accuracy()).c_str(), total_correct, total_recognized,
                      total_failures);
        os << line;
        return os.str();
    }
};

// Run the recognizer over labeled samples and aggregate accuracy per font.
inline OcrReport ocr_accuracy(const std::vector<OcrSample>& samples, OcrClient& client) {
    std::map<std::string, OcrFontRow> rows;
    for (const OcrSample& s : samples) {
        OcrFontRow& row = rows[s.font];
        row.font = s.font;
        try {
            OcrResult res = client.recognize(s.image);
            ++row.recognized;
            if (res.text == s.expected_character) ++row.correct;
        } catch (const std::exception&) {
            ++row.failures;
        }
    }
    OcrReport rep;
    for (auto& [_, row] : rows) {
        rep.total_correct += row.correct;
        rep.total_recognized += row.recognized;
        rep.total_failures += row.failures;
        rep.rows.push_back(std::move(row));
    }
    return rep;
}

// -------------------------------------------------------- split evaluation

struct SplitEvalConfig {
    int ddim_steps = 50;
    double eta = 0.0;
    int batch = 16;
    uint64_t seed = 0;
};

struct SampleMetrics {
    CorpusRecord record;
    double iou = 0.0;
    double psnr = 0.0;
};

struct MetricsReport {
    std::vector<SampleMetrics> samples;
    double mean_iou = 0.0;
    double mean_psnr = 0.0;

    std::string table() const {
        std::ostringstream os;
        os << "samples: " << samples.size() << "\n"
           << "mean IOU:  " << format3(mean_iou) << "\n"
           << "mean PSNR: " << format3(mean_psnr) << " dB\n";
        return os.str();
    }

    std::string tsv() const {
        std::ostringstream os;
        os << "calligrapher\tfont\tcharacter\tindex\tiou\tpsnr\n";
        for (const auto& s : samples) {
            os << s.record.calligrapher << '\t' << s.record.font << '\t'
               << s.record.character << '\t' << s.record.index << '\t' << format3(s.iou)
               << '\t' << format3(s.psnr) << '\n';
        }
        return os.str();
    }
};

// Re-binarize a generated grayscale image to exact {0,255} ink-on-paper.
inline GrayImage rebinarize(const GrayImage& img) {
    OtsuResult o = otsu_threshold(img);
    GrayImage out(img.width, img.height, 255);
    for (size_t i = 0; i < img.size(); ++i)
        if (o.mask.pixels[i]) out.pixels[i] = 0;
    return out;
}

// Identical images give infinite PSNR; aggregate with a conventional cap so
// the mean stays finite.
inline constexpr double kPsnrCap = 99.0;

// Generate one image per test record (batched DDIM), compare against the
// ground-truth loader's image of the same size.
template <class Scalar>
inline MetricsReport evaluate_split(
    const DenoiserModel<Scalar>& model, const NoiseSchedule<Scalar>& schedule,
    const LatentCodec<Scalar>& codec, const LabelRegistry& registry,
    const std::vector<CorpusRecord>& test_records,
    const std::function<GrayImage(const CorpusRecord&)>& load_ground_truth,
    const SplitEvalConfig& cfg) {
    MetricsReport report;
    if (test_records.empty()) return report;
    BatchDenoiser<Scalar> denoiser = model.batch_denoiser();
    const auto& spec = codec.spec();

    for (size_t begin = 0; begin < test_records.size();
         begin += static_cast<size_t>(cfg.batch)) {
        size_t end = std::min(test_records.size(), begin + static_cast<size_t>(cfg.batch));
        std::vector<SampleRequest> reqs;
        for (size_t i = begin; i < end; ++i) {
            const CorpusRecord& r = test_records[i];
            SampleRequest req;
            req.labels = {registry.calligrapher_id(r.calligrapher),
                          registry.font_id(r.font), registry.character_id(r.character)};
            req.channels = spec.latent_channels;
            req.height = spec.latent_side;
            req.width = spec.latent_side;
            req.seed = cfg.seed + i;
            reqs.push_back(req);
        }
        std::vector<Tensor3<Scalar>> latents = ddim_sample_batch<Scalar>(
            denoiser, reqs, schedule, cfg.ddim_steps, static_cast<Scalar>(cfg.eta));
        for (size_t i = begin; i < end; ++i) {
            const CorpusRecord& r = test_records[i];
            GrayImage generated =
                rebinarize(from_unit_tensor(codec.decode(latents[i - begin])));
            GrayImage truth = load_ground_truth(r);
            SampleMetrics m;
            m.record = r;
            m.iou = iou_ink(generated, truth);
            m.psnr = std::min(psnr(generated, truth), kPsnrCap);
            report.samples.push_back(std::move(m));
        }
    }
    for (const auto& s : report.samples) {
        report.mean_iou += s.iou;
        report.mean_psnr += s.psnr;
    }
    report.mean_iou /= double(report.samples.size());
    report.mean_psnr /= double(report.samples.size());
    return report;
}

}  // namespace moyun
