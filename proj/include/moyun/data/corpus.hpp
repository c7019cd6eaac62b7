#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "moyun/core/rng.hpp"

namespace moyun {

namespace fs = std::filesystem;

// One annotated image in the calligrapher/font/character hierarchy.
struct CorpusRecord {
    std::string calligrapher;
    std::string font;
    std::string character;
    int index = 0;
    std::string rel_path;  // relative to the corpus root

    auto key() const { return std::tie(calligrapher, font, character, index); }
    bool operator<(const CorpusRecord& o) const { return key() < o.key(); }
    bool operator==(const CorpusRecord& o) const { return key() == o.key(); }
};

struct ScanResult {
    std::vector<CorpusRecord> records;
    std::vector<std::string> errors;  // malformed entries, reported not skipped silently
};

// Walk root/<calligrapher>/<font>/<character>/<index>.png deterministically.
inline ScanResult scan_corpus(const fs::path& root) {
    ScanResult out;
    if (!fs::exists(root)) {
        throw std::invalid_argument("scan_corpus: no such directory: " + root.string());
    }
    std::set<CorpusRecord> sorted;
    for (auto it = fs::recursive_directory_iterator(root);
         it != fs::recursive_directory_iterator(); ++it) {
        if (!it->is_regular_file()) continue;
        fs::path rel = fs::relative(it->path(), root);
        std::vector<std::string> parts;
        for (const auto& c : rel) parts.push_back(c.string());
        if (parts.size() != 4) {
            out.errors.push_back("not in calligrapher/font/character/NN.png layout: " +
                                 rel.generic_string());
            continue;
        }
        if (it->path().extension() != ".png") {
            out.errors.push_back("not a PNG file: " + rel.generic_string());
            continue;
        }
        std::string stem = it->path().stem().string();
        if (stem.empty() || stem.find_first_not_of("0123456789") != std::string::npos) {
            out.errors.push_back("non-numeric image index: " + rel.generic_string());
            continue;
        }
        CorpusRecord rec;
        rec.calligrapher = parts[0];
        rec.font = parts[1];
        rec.character = parts[2];
        rec.index = std::stoi(stem);
        rec.rel_path = rel.generic_string();
        if (!sorted.insert(rec).second) {
            out.errors.push_back("duplicate record: " + rel.generic_string());
        }
    }
    out.records.assign(sorted.begin(), sorted.end());
    std::sort(out.errors.begin(), out.errors.end());
    return out;
}

// One record per line: calligrapher, font, character, index, relative path,
// tab separated, byte-stable ordering.
inline void write_manifest(const std::vector<CorpusRecord>& records, const fs::path& path) {
    std::vector<CorpusRecord> sorted = records;
    std::sort(sorted.begin(), sorted.end());
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write manifest: " + path.string());
    for (const auto& r : sorted) {
        f << r.calligrapher << '\t' << r.font << '\t' << r.character << '\t' << r.index
          << '\t' << r.rel_path << '\n';
    }
}

inline std::vector<CorpusRecord> read_manifest(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read manifest: " + path.string());
    std::vector<CorpusRecord> out;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ss(line);
        CorpusRecord r;
        std::string index_str;
        if (!std::getline(ss, r.calligrapher, '\t') || !std::getline(ss, r.font, '\t') ||
            !std::getline(ss, r.character, '\t') || !std::getline(ss, index_str, '\t') ||
            !std::getline(ss, r.rel_path)) {
            throw std::runtime_error("manifest " + path.string() + ": malformed line " +
                                     std::to_string(lineno));
        }
        r.index = std::stoi(index_str);
        out.push_back(std::move(r));
    }
    return out;
}

// Bijective, dense, 0-based name<->id maps for the three label axes.
class LabelRegistry {
public:
    LabelRegistry() = default;

    static LabelRegistry build(const std::vector<CorpusRecord>& records) {
        if (records.empty()) {
            throw std::invalid_argument("build_label_registry: empty record list");
        }
        std::set<std::string> cals, fonts, chars;
        for (const auto& r : records) {
            cals.insert(r.calligrapher);
            fonts.insert(r.font);
            chars.insert(r.character);
        }
        LabelRegistry reg;
        reg.calligraphers_.assign(cals.begin(), cals.end());
        reg.fonts_.assign(fonts.begin(), fonts.end());
        reg.characters_.assign(chars.begin(), chars.end());
        reg.rebuild_indexes();
        return reg;
    }

    int num_calligraphers() const { return static_cast<int>(calligraphers_.size()); }
    int num_fonts() const { return static_cast<int>(fonts_.size()); }
    int num_characters() const { return static_cast<int>(characters_.size()); }

    int calligrapher_id(const std::string& name) const { return lookup(cal_ids_, name, "calligrapher"); }
    int font_id(const std::string& name) const { return lookup(font_ids_, name, "font"); }
    int character_id(const std::string& name) const { return lookup(char_ids_, name, "character"); }

    const std::string& calligrapher_name(int id) const { return name_of(calligraphers_, id, "calligrapher"); }
    const std::string& font_name(int id) const { return name_of(fonts_, id, "font"); }
    const std::string& character_name(int id) const { return name_of(characters_, id, "character"); }

    bool operator==(const LabelRegistry& o) const {
        return calligraphers_ == o.calligraphers_ && fonts_ == o.fonts_ &&
               characters_ == o.characters_;
    }

    void save(const fs::path& path) const {
        std::ofstream f(path);
        if (!f) throw std::runtime_error("cannot write label registry: " + path.string());
        auto section = [&f](const char* name, const std::vector<std::string>& items) {
            f << '[' << name << "]\n";
            for (size_t i = 0; i < items.size(); ++i) f << i << '\t' << items[i] << '\n';
        };
        section("calligraphers", calligraphers_);
        section("fonts", fonts_);
        section("characters", characters_);
    }

    static LabelRegistry load(const fs::path& path) {
        std::ifstream f(path);
        if (!f) throw std::runtime_error("cannot read label registry: " + path.string());
        LabelRegistry reg;
        std::vector<std::string>* current = nullptr;
        std::string line;
        while (std::getline(f, line)) {
            if (line.empty()) continue;
            if (line == "[calligraphers]") current = &reg.calligraphers_;
            else if (line == "[fonts]") current = &reg.fonts_;
            else if (line == "[characters]") current = &reg.characters_;
            else {
                auto tab = line.find('\t');
                if (!current || tab == std::string::npos) {
                    throw std::runtime_error("label registry " + path.string() +
                                             ": malformed line: " + line);
                }
                size_t id = std::stoul(line.substr(0, tab));
                if (id != current->size()) {
                    throw std::runtime_error("label registry " + path.string() +
                                             ": ids must be dense and in order");
                }
                current->push_back(line.substr(tab + 1));
            }
        }
        reg.rebuild_indexes();
        return reg;
    }

private:
    std::vector<std::string> calligraphers_, fonts_, characters_;
    std::map<std::string, int> cal_ids_, font_ids_, char_ids_;

    void rebuild_indexes() {
        auto index = [](const std::vector<std::string>& v, std::map<std::string, int>& m) {
            m.clear();
            for (size_t i = 0; i < v.size(); ++i) {
                if (!m.emplace(v[i], static_cast<int>(i)).second) {
                    throw std::runtime_error("label registry: duplicate name " + v[i]);
                }
            }
        };
        index(calligraphers_, cal_ids_);
        index(fonts_, font_ids_);
        index(characters_, char_ids_);
    }

    static int lookup(const std::map<std::string, int>& m, const std::string& name,
                      const char* what) {
        auto it = m.find(name);
        if (it == m.end()) {
            throw std::out_of_range(std::string("unknown ") + what + " name: " + name);
        }
        return it->second;
    }
    static const std::string& name_of(const std::vector<std::string>& v, int id,
                                      const char* what) {
        if (id < 0 || id >= static_cast<int>(v.size())) {
            throw std::out_of_range(std::string(what) + " id out of range: " +
                                    std::to_string(id));
        }
        return v[static_cast<size_t>(id)];
    }
};

struct ExperimentSplit {
    std::vector<CorpusRecord> train, test;
    // held-out (calligrapher, character) pairs, the "never written" test cases
    std::vector<std::pair<std::string, std::string>> held_out;
};

// The balanced-subset split: choose n_calligraphers calligraphers sharing at
// least n_characters characters, hold out ceil((1-train_frac)*n_characters)
// characters per calligrapher, cap images per (calligrapher,font,character)
// at max_per_character by seeded sampling.
inline ExperimentSplit build_experiment_split(const std::vector<CorpusRecord>& records,
                                              int n_calligraphers, int n_characters,
                                              double train_frac, int max_per_character,
                                              uint64_t seed) {
    if (train_frac < 0.0 || train_frac > 1.0) {
        throw std::invalid_argument("build_experiment_split: train_frac must be in [0,1]");
    }
    std::map<std::string, std::set<std::string>> chars_of;
    for (const auto& r : records) chars_of[r.calligrapher].insert(r.character);
    if (static_cast<int>(chars_of.size()) < n_calligraphers) {
        throw std::runtime_error("build_experiment_split: corpus has only " +
                                 std::to_string(chars_of.size()) + " calligraphers, need " +
                                 std::to_string(n_calligraphers));
    }
    // calligraphers with the largest repertoires first; name as tiebreak
    std::vector<std::string> cals;
    for (const auto& [name, _] : chars_of) cals.push_back(name);
    std::stable_sort(cals.begin(), cals.end(), [&](const auto& a, const auto& b) {
        return chars_of[a].size() != chars_of[b].size()
                   ? chars_of[a].size() > chars_of[b].size()
                   : a < b;
    });
    cals.resize(static_cast<size_t>(n_calligraphers));
    std::sort(cals.begin(), cals.end());

    std::set<std::string> shared = chars_of[cals[0]];
    for (const auto& c : cals) {
        std::set<std::string> next;
        std::set_intersection(shared.begin(), shared.end(), chars_of[c].begin(),
                              chars_of[c].end(), std::inserter(next, next.begin()));
        shared = std::move(next);
    }
    if (static_cast<int>(shared.size()) < n_characters) {
        throw std::runtime_error("build_experiment_split: selected calligraphers share only " +
                                 std::to_string(shared.size()) + " characters, need " +
                                 std::to_string(n_characters));
    }
    std::vector<std::string> chars(shared.begin(), shared.end());
    chars.resize(static_cast<size_t>(n_characters));

    Rng rng(seed);
    const int held = static_cast<int>(std::ceil((1.0 - train_frac) * n_characters));
    std::set<std::pair<std::string, std::string>> held_pairs;
    ExperimentSplit split;
    for (const auto& cal : cals) {
        for (size_t i : rng.sample_without_replacement(chars.size(), static_cast<size_t>(held))) {
            held_pairs.insert({cal, chars[i]});
        }
    }
    split.held_out.assign(held_pairs.begin(), held_pairs.end());

    std::set<std::string> cal_set(cals.begin(), cals.end());
    std::set<std::string> char_set(chars.begin(), chars.end());
    std::map<std::tuple<std::string, std::string, std::string>, std::vector<CorpusRecord>>
        groups;
    std::vector<CorpusRecord> sorted = records;
    std::sort(sorted.begin(), sorted.end());
    for (const auto& r : sorted) {
        if (cal_set.count(r.calligrapher) && char_set.count(r.character)) {
            groups[{r.calligrapher, r.font, r.character}].push_back(r);
        }
    }
    for (auto& [key, group] : groups) {
        std::vector<CorpusRecord> chosen;
        if (static_cast<int>(group.size()) > max_per_character) {
            auto idx = rng.sample_without_replacement(group.size(),
                                                      static_cast<size_t>(max_per_character));
            std::sort(idx.begin(), idx.end());
            for (size_t i : idx) chosen.push_back(group[i]);
        } else {
            chosen = group;
        }
        bool is_test = held_pairs.count({std::get<0>(key), std::get<2>(key)}) > 0;
        auto& dst = is_test ? split.test : split.train;
        dst.insert(dst.end(), chosen.begin(), chosen.end());
    }
    return split;
}

}  // namespace moyun
