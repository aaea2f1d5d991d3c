#pragma once

#include <cmath>
#include <complex>
#include <vector>

#include "octforge/common.hpp"

namespace octforge {
namespace fft {

inline bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

// Iterative radix-2 Cooley-Tukey, in place, forward transform (sign -1).
inline void fft_pow2(std::complex<double>* a, int n) {
    check(is_pow2(n), "fft: length must be a power of two, got " + std::to_string(n));
    // bit-reversal permutation
    for (int i = 1, j = 0; i < n; ++i) {
        int bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (int len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * 3.14159265358979323846 / len;
        const std::complex<double> wlen(std::cos(ang), std::sin(ang));
        for (int i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (int k = 0; k < len / 2; ++k) {
                const std::complex<double> u = a[i + k];
                const std::complex<double> v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
}

// 2D transform of an h x w row-major grid: rows, then columns.
inline void fft2d(std::complex<double>* grid, int h, int w) {
    check(is_pow2(h) && is_pow2(w), "fft2d: dims must be powers of two, got " +
                                        std::to_string(h) + "x" + std::to_string(w));
    for (int r = 0; r < h; ++r) fft_pow2(grid + int64_t(r) * w, w);
    std::vector<std::complex<double>> col(static_cast<size_t>(h));
    for (int c = 0; c < w; ++c) {
        for (int r = 0; r < h; ++r) col[size_t(r)] = grid[int64_t(r) * w + c];
        fft_pow2(col.data(), h);
        for (int r = 0; r < h; ++r) grid[int64_t(r) * w + c] = col[size_t(r)];
    }
}

// |DFT2(map)| of a real h x w map, unshifted.
inline std::vector<double> magnitude2d(const double* map, int h, int w) {
    std::vector<std::complex<double>> grid(size_t(h) * w);
    for (int64_t i = 0; i < int64_t(h) * w; ++i) grid[size_t(i)] = {map[i], 0.0};
    fft2d(grid.data(), h, w);
    std::vector<double> mag(size_t(h) * w);
    for (int64_t i = 0; i < int64_t(h) * w; ++i) mag[size_t(i)] = std::abs(grid[size_t(i)]);
    return mag;
}

// Moves DC to the center bin (h/2, w/2).
inline std::vector<double> fftshift2d(const std::vector<double>& m, int h, int w) {
    std::vector<double> out(m.size());
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            out[size_t(((r + h / 2) % h) * w + (c + w / 2) % w)] = m[size_t(r) * w + c];
    return out;
}

} // namespace fft
} // namespace octforge
