#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "octforge/image.hpp"
#include "octforge/preprocess.hpp"

namespace octforge {

struct ManifestEntry {
    std::string path; // as listed in the manifest (relative to its directory)
    int label = 0;    // 0 real, 1 fake
    std::string domain;
};

inline const char* label_name(int label) { return label == 0 ? "real" : "fake"; }

namespace detail {
inline std::string lower(std::string s) {
    for (char& c : s)
        if (c >= 'A' && c <= 'Z') c = char(c - 'A' + 'a');
    return s;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}
} // namespace detail

// Reads and validates a `path,label,domain` manifest. Labels are
// case-insensitive real/fake; duplicate or missing files are errors.
inline std::vector<ManifestEntry> load_manifest(const std::string& manifest_path) {
    namespace fs = std::filesystem;
    std::ifstream f(manifest_path);
    if (!f) throw DataError("cannot open manifest: " + manifest_path);
    const fs::path root = fs::path(manifest_path).parent_path();
    std::string line;
    if (!std::getline(f, line)) throw DataError("manifest is empty: " + manifest_path);
    {
        auto header = detail::split_csv_line(line);
        if (header.size() != 3 || detail::lower(header[0]) != "path" ||
            detail::lower(header[1]) != "label" || detail::lower(header[2]) != "domain")
            throw DataError("manifest must start with header 'path,label,domain', got '" + line +
                            "'");
    }
    std::vector<ManifestEntry> entries;
    std::set<std::string> seen;
    int lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        auto fields = detail::split_csv_line(line);
        if (fields.size() != 3)
            throw DataError("manifest line " + std::to_string(lineno) + ": expected 3 fields");
        ManifestEntry e;
        e.path = fields[0];
        const std::string label = detail::lower(fields[1]);
        if (label == "real")
            e.label = 0;
        else if (label == "fake")
            e.label = 1;
        else
            throw DataError("manifest line " + std::to_string(lineno) + ": unknown label '" +
                            fields[1] + "' (expected real or fake)");
        e.domain = fields[2];
        if (e.domain.empty())
            throw DataError("manifest line " + std::to_string(lineno) + ": empty domain");
        if (!seen.insert(e.path).second)
            throw DataError("manifest contains duplicate path: " + e.path);
        if (!fs::exists(root / e.path))
            throw DataError("manifest references missing image file: " + (root / e.path).string());
        entries.push_back(std::move(e));
    }
    return entries;
}

struct SplitResult {
    std::vector<ManifestEntry> train, val, test;
};

// Stratified 6:2:2 split by (domain, label) cell, deterministic under seed.
inline SplitResult split_dataset(const std::vector<ManifestEntry>& entries, uint64_t seed) {
    std::map<std::pair<std::string, int>, std::vector<ManifestEntry>> cells;
    for (const auto& e : entries) cells[{e.domain, e.label}].push_back(e);
    SplitResult out;
    uint64_t cell_tag = 0;
    for (auto& [key, cell] : cells) {
        ++cell_tag;
        const int n = int(cell.size());
        if (n < 10)
            throw DataError("split: cell (" + key.first + "," + label_name(key.second) +
                            ") has only " + std::to_string(n) + " records, need >= 10");
        Rng rng(mix_seed(seed, mix_seed(0x5B117, cell_tag)));
        for (int i = n - 1; i > 0; --i)
            std::swap(cell[size_t(i)], cell[size_t(rng.below(uint64_t(i + 1)))]);
        const int n_train = int(std::lround(0.6 * n));
        const int n_val = int(std::lround(0.2 * n));
        for (int i = 0; i < n; ++i) {
            if (i < n_train)
                out.train.push_back(cell[size_t(i)]);
            else if (i < n_train + n_val)
                out.val.push_back(cell[size_t(i)]);
            else
                out.test.push_back(cell[size_t(i)]);
        }
    }
    return out;
}

// Lazy image loader that records every file whose bytes were read; the
// protocol runner uses the log to prove held-out domains were untouched
// during training.
class ImageStore {
public:
    explicit ImageStore(std::string root_dir) : root_(std::move(root_dir)) {}

    const RgbImage& get(const std::string& rel_path) {
        auto it = cache_.find(rel_path);
        if (it != cache_.end()) return it->second;
        namespace fs = std::filesystem;
        RgbImage img = load_png((fs::path(root_) / rel_path).string());
        read_log_.push_back(rel_path);
        return cache_.emplace(rel_path, std::move(img)).first->second;
    }

    const std::vector<std::string>& read_log() const { return read_log_; }
    size_t read_log_mark() const { return read_log_.size(); }
    const std::string& root() const { return root_; }

private:
    std::string root_;
    std::map<std::string, RgbImage> cache_;
    std::vector<std::string> read_log_;
};

// One 128x128 crop turned into network inputs.
struct CropSample {
    Tensor<float> cdi; // [3,128,128]
    Tensor<float> si;  // [1,128,128]
    int label = 0;
    std::string domain;
};

inline std::vector<CropSample> prepare_samples(ImageStore& store,
                                               const std::vector<ManifestEntry>& entries) {
    std::vector<CropSample> samples;
    for (const auto& e : entries) {
        const RgbImage& img = store.get(e.path);
        auto [grid, crops] = crop_parts(img);
        (void)grid;
        for (const RgbImage& crop : crops) {
            CropSample s;
            s.cdi = compute_cdi(crop).data;
            s.si = compute_si(crop).data;
            s.label = e.label;
            s.domain = e.domain;
            samples.push_back(std::move(s));
        }
    }
    return samples;
}

// Stacks samples into [B,3,128,128] / [B,1,128,128] batches.
inline Tensor<float> stack_cdi(const std::vector<const CropSample*>& batch) {
    check(!batch.empty(), "stack_cdi: empty batch");
    const int hw = kCropSize * kCropSize;
    Tensor<float> out({int(batch.size()), 3, kCropSize, kCropSize});
    for (size_t i = 0; i < batch.size(); ++i)
        std::copy(batch[i]->cdi.data(), batch[i]->cdi.data() + 3 * hw,
                  out.data() + int64_t(i) * 3 * hw);
    return out;
}

inline Tensor<float> stack_si(const std::vector<const CropSample*>& batch) {
    check(!batch.empty(), "stack_si: empty batch");
    const int hw = kCropSize * kCropSize;
    Tensor<float> out({int(batch.size()), 1, kCropSize, kCropSize});
    for (size_t i = 0; i < batch.size(); ++i)
        std::copy(batch[i]->si.data(), batch[i]->si.data() + hw, out.data() + int64_t(i) * hw);
    return out;
}

} // namespace octforge
