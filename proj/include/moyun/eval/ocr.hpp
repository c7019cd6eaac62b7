#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <utility>

#include "moyun/data/image.hpp"

namespace moyun {

struct OcrResult {
    std::string text;
    double confidence = 0.0;
};

// Character recognizer contract. Production deployments plug in a real
// engine; tests use the scripted mock below.
class OcrClient {
public:
    virtual ~OcrClient() = default;
    virtual OcrResult recognize(const GrayImage& image) = 0;
};

// Scripted client: answers are queued per call in order; an entry with
// fail=true simulates a service failure.
class MockOcrClient : public OcrClient {
public:
    struct Scripted {
        OcrResult result;
        bool fail = false;
    };

    explicit MockOcrClient(std::vector<Scripted> script) : script_(std::move(script)) {}

    OcrResult recognize(const GrayImage&) override {
        if (next_ >= script_.size()) {
            throw std::runtime_error("MockOcrClient: script exhausted after " +
                                     std::to_string(next_) + " calls");
        }
        const Scripted& s = script_[next_++];
        if (s.fail) throw std::runtime_error("MockOcrClient: scripted failure");
        return s.result;
    }

    size_t calls() const { return next_; }

private:
    std::vector<Scripted> script_;
    size_t next_ = 0;
};

}  // namespace moyun
