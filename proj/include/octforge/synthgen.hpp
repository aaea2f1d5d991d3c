#pragma once

#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "octforge/image.hpp"
#include "octforge/preprocess.hpp"

namespace octforge {
namespace synth {

constexpr int kBaseRes = 64;
constexpr int kOutRes = 128;

// Per-phase gain imbalance of the "nearest" family (uneven-overlap model of a
// transposed-conv upsampler); pure 2x replication would cancel the half-band
// replicas exactly.
constexpr double kNearestGainEps = 0.15;

inline const std::vector<std::string>& fake_families() {
    static const std::vector<std::string> fams = {"nearest", "bilinear", "checkerboard"};
    return fams;
}

inline bool is_fake_family(const std::string& name) {
    for (const auto& f : fake_families())
        if (f == name) return true;
    return false;
}

inline uint64_t family_tag(const std::string& name) {
    if (name == "camera") return 0;
    if (name == "nearest") return 1;
    if (name == "bilinear") return 2;
    if (name == "checkerboard") return 3;
    throw DataError("unknown synthesis family: " + name);
}

namespace detail {

struct Wave {
    double fx, fy, amp, phase;
};

// Adds amp*sin(2*pi*(fx*x + fy*y)/128 + phase) over an h x w grid whose pixel
// (r,c) sits at scene coordinates (x0 + c*step, y0 + r*step). Incremental
// complex rotation instead of per-pixel sin().
inline void add_wave(std::vector<double>& out, int h, int w, double x0, double y0, double step,
                     const Wave& wv) {
    const double two_pi_over = 2.0 * 3.14159265358979323846 / double(kOutRes);
    const double dcol = two_pi_over * wv.fx * step;
    const std::complex<double> rot(std::cos(dcol), std::sin(dcol));
    for (int r = 0; r < h; ++r) {
        const double start =
            two_pi_over * (wv.fx * x0 + wv.fy * (y0 + double(r) * step)) + wv.phase;
        std::complex<double> z(std::cos(start), std::sin(start));
        double* row = out.data() + size_t(r) * w;
        for (int c = 0; c < w; ++c) {
            row[c] += wv.amp * z.imag();
            z *= rot;
        }
    }
}

// RGGB site type: 0=R, 1=G, 2=B
inline int bayer_channel(int r, int c) {
    if ((r & 1) == 0 && (c & 1) == 0) return 0;
    if ((r & 1) == 1 && (c & 1) == 1) return 2;
    return 1;
}

inline double avg_at(const std::vector<double>& raw, int n, int r, int c,
                     std::initializer_list<std::pair<int, int>> offsets) {
    double sum = 0.0;
    int cnt = 0;
    for (auto [dr, dc] : offsets) {
        const int rr = r + dr, cc = c + dc;
        if (rr < 0 || rr >= n || cc < 0 || cc >= n) continue;
        sum += raw[size_t(rr) * n + cc];
        ++cnt;
    }
    return cnt ? sum / cnt : 0.0;
}

// Bilinear reconstruction of all three channels from the RGGB raw mosaic.
inline void demosaic_bilinear(const std::vector<double>& raw, int n,
                              std::vector<double> rgb[3]) {
    for (int ch = 0; ch < 3; ++ch) rgb[ch].assign(size_t(n) * n, 0.0);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) {
            const size_t i = size_t(r) * n + c;
            const bool er = (r & 1) == 0, ec = (c & 1) == 0;
            // red plane (sites at even,even)
            if (er && ec)
                rgb[0][i] = raw[i];
            else if (er && !ec)
                rgb[0][i] = avg_at(raw, n, r, c, {{0, -1}, {0, 1}});
            else if (!er && ec)
                rgb[0][i] = avg_at(raw, n, r, c, {{-1, 0}, {1, 0}});
            else
                rgb[0][i] = avg_at(raw, n, r, c, {{-1, -1}, {-1, 1}, {1, -1}, {1, 1}});
            // green plane (quincunx)
            if (er != ec)
                rgb[1][i] = raw[i];
            else
                rgb[1][i] = avg_at(raw, n, r, c, {{-1, 0}, {1, 0}, {0, -1}, {0, 1}});
            // blue plane (sites at odd,odd)
            if (!er && !ec)
                rgb[2][i] = raw[i];
            else if (!er && ec)
                rgb[2][i] = avg_at(raw, n, r, c, {{0, -1}, {0, 1}});
            else if (er && !ec)
                rgb[2][i] = avg_at(raw, n, r, c, {{-1, 0}, {1, 0}});
            else
                rgb[2][i] = avg_at(raw, n, r, c, {{-1, -1}, {-1, 1}, {1, -1}, {1, 1}});
        }
}

inline uint8_t quantize(double v) {
    return uint8_t(std::lround(std::min(255.0, std::max(0.0, v))));
}

// x2 nearest replication with the per-phase gain imbalance.
inline std::vector<double> upsample_nearest(const std::vector<double>& base) {
    std::vector<double> out(size_t(kOutRes) * kOutRes);
    const double gain[2] = {1.0 + kNearestGainEps, 1.0 - kNearestGainEps};
    for (int r = 0; r < kOutRes; ++r)
        for (int c = 0; c < kOutRes; ++c)
            out[size_t(r) * kOutRes + c] =
                base[size_t(r / 2) * kBaseRes + c / 2] * gain[r & 1] * gain[c & 1];
    return out;
}

// Separable zero-insertion + [1,2,1]/2 interpolation.
inline std::vector<double> upsample_bilinear(const std::vector<double>& base) {
    std::vector<double> out(size_t(kOutRes) * kOutRes);
    auto at = [&](int i, int j) {
        i = std::min(i, kBaseRes - 1);
        j = std::min(j, kBaseRes - 1);
        return base[size_t(i) * kBaseRes + j];
    };
    for (int i = 0; i < kBaseRes; ++i)
        for (int j = 0; j < kBaseRes; ++j) {
            out[size_t(2 * i) * kOutRes + 2 * j] = at(i, j);
            out[size_t(2 * i) * kOutRes + 2 * j + 1] = 0.5 * (at(i, j) + at(i, j + 1));
            out[size_t(2 * i + 1) * kOutRes + 2 * j] = 0.5 * (at(i, j) + at(i + 1, j));
            out[size_t(2 * i + 1) * kOutRes + 2 * j + 1] =
                0.25 * (at(i, j) + at(i, j + 1) + at(i + 1, j) + at(i + 1, j + 1));
        }
    return out;
}

// Zero insertion followed by a fixed 3x3 ones/4 smoothing; leaves the classic
// parity brightness pattern and full-strength spectral replicas.
inline std::vector<double> upsample_checkerboard(const std::vector<double>& base) {
    std::vector<double> z(size_t(kOutRes) * kOutRes, 0.0);
    for (int i = 0; i < kBaseRes; ++i)
        for (int j = 0; j < kBaseRes; ++j) z[size_t(2 * i) * kOutRes + 2 * j] = base[size_t(i) * kBaseRes + j];
    std::vector<double> out(size_t(kOutRes) * kOutRes, 0.0);
    for (int r = 0; r < kOutRes; ++r)
        for (int c = 0; c < kOutRes; ++c) {
            double sum = 0.0;
            for (int dr = -1; dr <= 1; ++dr)
                for (int dc = -1; dc <= 1; ++dc) {
                    const int rr = r + dr, cc = c + dc;
                    if (rr >= 0 && rr < kOutRes && cc >= 0 && cc < kOutRes)
                        sum += z[size_t(rr) * kOutRes + cc];
                }
            out[size_t(r) * kOutRes + c] = sum / 4.0;
        }
    return out;
}

} // namespace detail

// Camera-path image: a smooth scene (8 shared-frequency sinusoid slots per
// channel, low frequencies only) sampled through an RGGB mosaic with shot
// noise, then bilinearly demosaiced. Cross-channel high frequencies end up
// correlated, so channel differences are low-pass.
inline RgbImage make_real_image(uint64_t seed, int index) {
    Rng rng(mix_seed(seed, mix_seed(family_tag("camera"), uint64_t(index))));
    double base[3];
    for (double& b : base) b = rng.uniform(100.0, 160.0);
    std::vector<detail::Wave> waves[3];
    for (int k = 0; k < 8; ++k) {
        const double theta = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
        const double mag = rng.uniform(1.5, 8.0);
        for (int ch = 0; ch < 3; ++ch) {
            detail::Wave wv;
            wv.fx = mag * std::cos(theta);
            wv.fy = mag * std::sin(theta);
            wv.amp = rng.uniform(5.0, 18.0);
            wv.phase = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
            waves[ch].push_back(wv);
        }
    }
    std::vector<double> field[3];
    for (int ch = 0; ch < 3; ++ch) {
        field[ch].assign(size_t(kOutRes) * kOutRes, base[ch]);
        for (const auto& wv : waves[ch])
            detail::add_wave(field[ch], kOutRes, kOutRes, 0.0, 0.0, 1.0, wv);
    }
    // one sensor measurement per site, with shot noise
    std::vector<double> raw(size_t(kOutRes) * kOutRes);
    for (int r = 0; r < kOutRes; ++r)
        for (int c = 0; c < kOutRes; ++c)
            raw[size_t(r) * kOutRes + c] =
                field[detail::bayer_channel(r, c)][size_t(r) * kOutRes + c] + 2.0 * rng.normal();
    std::vector<double> rgb[3];
    detail::demosaic_bilinear(raw, kOutRes, rgb);
    RgbImage img(kOutRes, kOutRes);
    for (int r = 0; r < kOutRes; ++r)
        for (int c = 0; c < kOutRes; ++c)
            for (int ch = 0; ch < 3; ++ch)
                img.at(r, c, ch) = detail::quantize(rgb[ch][size_t(r) * kOutRes + c]);
    return img;
}

// Generator-path image: per-channel independent sinusoids rendered directly at
// base resolution (no mosaic), plus noise, then upsampled x2 by the family
// kernel. The upsampling replicates the base spectrum into the high bands.
inline RgbImage make_fake_image(const std::string& family, uint64_t seed, int index) {
    if (!is_fake_family(family)) throw DataError("unknown synthesis family: " + family);
    Rng rng(mix_seed(seed, mix_seed(family_tag(family), uint64_t(index))));
    std::vector<double> up[3];
    for (int ch = 0; ch < 3; ++ch) {
        const double level = rng.uniform(90.0, 170.0);
        std::vector<double> basefield(size_t(kBaseRes) * kBaseRes, level);
        for (int k = 0; k < 8; ++k) {
            detail::Wave wv;
            const double theta = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
            const double mag = rng.uniform(6.0, 28.0);
            wv.fx = mag * std::cos(theta);
            wv.fy = mag * std::sin(theta);
            wv.amp = rng.uniform(5.0, 15.0);
            wv.phase = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
            // base pixel m sits at scene coordinate 2m + 0.5
            detail::add_wave(basefield, kBaseRes, kBaseRes, 0.5, 0.5, 2.0, wv);
        }
        for (double& v : basefield) v += 2.0 * rng.normal();
        if (family == "nearest")
            up[ch] = detail::upsample_nearest(basefield);
        else if (family == "bilinear")
            up[ch] = detail::upsample_bilinear(basefield);
        else
            up[ch] = detail::upsample_checkerboard(basefield);
    }
    RgbImage img(kOutRes, kOutRes);
    for (int r = 0; r < kOutRes; ++r)
        for (int c = 0; c < kOutRes; ++c)
            for (int ch = 0; ch < 3; ++ch)
                img.at(r, c, ch) = detail::quantize(up[ch][size_t(r) * kOutRes + c]);
    return img;
}

// --------------------------------------------------------------- corpus ----

struct ManifestRecord {
    std::string path; // relative to the manifest's directory
    std::string label; // "real" | "fake"
    std::string domain; // family name or "camera"
};

struct CorpusOptions {
    std::string out_dir;
    int count = 10; // images per class per family
    uint64_t seed = 0;
    std::vector<std::string> families = fake_families();
};

inline std::vector<ManifestRecord> generate_corpus(const CorpusOptions& opt) {
    check(opt.count >= 1, "corpus count must be >= 1");
    for (const auto& fam : opt.families)
        if (!is_fake_family(fam)) throw DataError("unknown synthesis family: " + fam);
    namespace fs = std::filesystem;
    std::vector<ManifestRecord> records;

    auto emit = [&](const std::string& domain, const std::string& label, int index,
                    const RgbImage& img) {
        const fs::path dir = fs::path(opt.out_dir) / domain / label;
        std::error_code ec;
        fs::create_directories(dir, ec);
        if (ec) throw DataError("cannot create output directory " + dir.string());
        const std::string rel = domain + "/" + label + "/" + std::to_string(index) + ".png";
        save_png((fs::path(opt.out_dir) / rel).string(), img);
        records.push_back({rel, label, domain});
    };

    for (int i = 0; i < opt.count; ++i) emit("camera", "real", i, make_real_image(opt.seed, i));
    for (const auto& fam : opt.families)
        for (int i = 0; i < opt.count; ++i)
            emit(fam, "fake", i, make_fake_image(fam, opt.seed, i));

    std::ofstream manifest(fs::path(opt.out_dir) / "manifest.csv");
    if (!manifest) throw DataError("cannot write manifest under " + opt.out_dir);
    manifest << "path,label,domain\n";
    for (const auto& r : records) manifest << r.path << "," << r.label << "," << r.domain << "\n";
    return records;
}

} // namespace synth
} // namespace octforge
