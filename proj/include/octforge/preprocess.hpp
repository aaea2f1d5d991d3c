#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "octforge/fft.hpp"
#include "octforge/image.hpp"
#include "octforge/tensor.hpp"

namespace octforge {

constexpr int kCropSize = 128;

// Channel difference image: (R-G, B-G, R-B) scaled to [-1,1].
struct Cdi {
    Tensor<float> data; // [3,128,128]
};

// Log-magnitude luminance spectrum, DC centered, min-max scaled to [0,1].
struct SpectrumImage {
    Tensor<float> data; // [1,128,128]
};

struct CropGrid {
    std::vector<std::pair<int, int>> offsets; // (row, col) anchors of 128x128 windows
};

inline void require_crop(const RgbImage& img, const char* what) {
    check_shape(img.height == kCropSize && img.width == kCropSize,
                std::string(what) + ": expected a " + std::to_string(kCropSize) + "x" +
                    std::to_string(kCropSize) + " crop, got " + std::to_string(img.height) + "x" +
                    std::to_string(img.width));
}

inline Cdi compute_cdi(const RgbImage& crop) {
    require_crop(crop, "compute_cdi");
    Cdi out{Tensor<float>({3, kCropSize, kCropSize})};
    float* d = out.data.data();
    const int hw = kCropSize * kCropSize;
    for (int r = 0; r < kCropSize; ++r)
        for (int c = 0; c < kCropSize; ++c) {
            const int red = crop.at(r, c, 0), green = crop.at(r, c, 1), blue = crop.at(r, c, 2);
            const int i = r * kCropSize + c;
            d[i] = float(red - green) / 255.0f;
            d[hw + i] = float(blue - green) / 255.0f;
            d[2 * hw + i] = float(red - blue) / 255.0f;
        }
    return out;
}

inline std::vector<double> luminance(const RgbImage& img) {
    std::vector<double> y(size_t(img.height) * img.width);
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c)
            y[size_t(r) * img.width + c] = 0.299 * img.at(r, c, 0) + 0.587 * img.at(r, c, 1) +
                                           0.114 * img.at(r, c, 2);
    return y;
}

// Shifted log(1 + |DFT2(Y)|), before per-crop scaling.
inline std::vector<double> spectrum_log_magnitude(const RgbImage& crop) {
    require_crop(crop, "compute_si");
    std::vector<double> lum = luminance(crop);
    std::vector<double> mag = fft::magnitude2d(lum.data(), kCropSize, kCropSize);
    for (double& v : mag) v = std::log1p(v);
    return fft::fftshift2d(mag, kCropSize, kCropSize);
}

inline SpectrumImage scale_spectrum(const std::vector<double>& logmag) {
    double lo = logmag[0], hi = logmag[0];
    for (double v : logmag) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    SpectrumImage out{Tensor<float>({1, kCropSize, kCropSize})};
    const double span = hi - lo;
    if (span > 0.0)
        for (size_t i = 0; i < logmag.size(); ++i)
            out.data[int64_t(i)] = float((logmag[i] - lo) / span);
    return out;
}

inline SpectrumImage compute_si(const RgbImage& crop) {
    return scale_spectrum(spectrum_log_magnitude(crop));
}

// Mean of the per-image shifted log-magnitudes, scaled once at the end.
inline SpectrumImage average_spectrum(const std::vector<RgbImage>& images) {
    if (images.empty()) throw DataError("average_spectrum: empty image list");
    std::vector<double> acc(size_t(kCropSize) * kCropSize, 0.0);
    for (const RgbImage& img : images) {
        std::vector<double> lm = spectrum_log_magnitude(img);
        for (size_t i = 0; i < acc.size(); ++i) acc[i] += lm[i];
    }
    for (double& v : acc) v /= double(images.size());
    return scale_spectrum(acc);
}

// Raw averaged log-magnitudes, for peak diagnostics that need unscaled values.
inline std::vector<double> average_spectrum_logmag(const std::vector<RgbImage>& images) {
    if (images.empty()) throw DataError("average_spectrum: empty image list");
    std::vector<double> acc(size_t(kCropSize) * kCropSize, 0.0);
    for (const RgbImage& img : images) {
        std::vector<double> lm = spectrum_log_magnitude(img);
        for (size_t i = 0; i < acc.size(); ++i) acc[i] += lm[i];
    }
    for (double& v : acc) v /= double(images.size());
    return acc;
}

inline std::vector<int> crop_anchors(int dim) {
    std::vector<int> anchors;
    for (int a = 0; a + kCropSize <= dim; a += kCropSize) anchors.push_back(a);
    if (anchors.back() + kCropSize < dim) anchors.push_back(dim - kCropSize);
    return anchors;
}

// Tiles the image with 128x128 windows anchored at multiples of 128; when a
// dimension is not a multiple, one extra window is anchored at the far edge so
// every pixel is covered (only that window overlaps its neighbor).
inline std::pair<CropGrid, std::vector<RgbImage>> crop_parts(const RgbImage& img) {
    if (img.height < kCropSize || img.width < kCropSize)
        throw DataError("crop_parts: image " + std::to_string(img.height) + "x" +
                        std::to_string(img.width) + " smaller than " + std::to_string(kCropSize) +
                        " in some dimension");
    CropGrid grid;
    std::vector<RgbImage> crops;
    for (int r : crop_anchors(img.height))
        for (int c : crop_anchors(img.width)) {
            grid.offsets.emplace_back(r, c);
            RgbImage crop(kCropSize, kCropSize);
            for (int i = 0; i < kCropSize; ++i)
                for (int j = 0; j < kCropSize; ++j)
                    for (int ch = 0; ch < 3; ++ch)
                        crop.at(i, j, ch) = img.at(r + i, c + j, ch);
            crops.push_back(std::move(crop));
        }
    return {std::move(grid), std::move(crops)};
}

// Fraction of DFT magnitude energy outside the centered half-band box
// (|freq| < N/4 in both axes, i.e. the central N/2 x N/2 of the shifted
// spectrum). The scalar statistic behind the channel-difference clue.
inline double hf_energy_fraction(const std::vector<double>& map, int h, int w) {
    std::vector<double> mag = fft::magnitude2d(map.data(), h, w);
    std::vector<double> shifted = fft::fftshift2d(mag, h, w);
    double total = 0.0, inside = 0.0;
    const int r0 = h / 4, r1 = 3 * h / 4; // [r0, r1) is the half-band box
    const int c0 = w / 4, c1 = 3 * w / 4;
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const double e = shifted[size_t(r) * w + c] * shifted[size_t(r) * w + c];
            total += e;
            if (r >= r0 && r < r1 && c >= c0 && c < c1) inside += e;
        }
    if (total <= 0.0) return 0.0;
    return (total - inside) / total;
}

// HF statistic of one CDI channel (default: R-G).
inline double hf_of_cdi(const Cdi& cdi, int channel = 0) {
    check(channel >= 0 && channel < 3, "hf_of_cdi: channel out of range");
    const int hw = kCropSize * kCropSize;
    std::vector<double> map(static_cast<size_t>(hw));
    for (int i = 0; i < hw; ++i) map[size_t(i)] = double(cdi.data[int64_t(channel) * hw + i]);
    return hf_energy_fraction(map, kCropSize, kCropSize);
}

// Debug dumps: CDI [-1,1] -> [0,255], SI [0,1] -> [0,255].
inline RgbImage cdi_to_image(const Cdi& cdi) {
    RgbImage img(kCropSize, kCropSize);
    const int hw = kCropSize * kCropSize;
    for (int r = 0; r < kCropSize; ++r)
        for (int c = 0; c < kCropSize; ++c)
            for (int ch = 0; ch < 3; ++ch) {
                const double v = (double(cdi.data[int64_t(ch) * hw + r * kCropSize + c]) + 1.0) /
                                 2.0 * 255.0;
                img.at(r, c, ch) = uint8_t(std::lround(std::min(255.0, std::max(0.0, v))));
            }
    return img;
}

inline std::vector<uint8_t> si_to_gray(const SpectrumImage& si) {
    std::vector<uint8_t> px(size_t(kCropSize) * kCropSize);
    for (size_t i = 0; i < px.size(); ++i) {
        const double v = double(si.data[int64_t(i)]) * 255.0;
        px[i] = uint8_t(std::lround(std::min(255.0, std::max(0.0, v))));
    }
    return px;
}

} // namespace octforge
