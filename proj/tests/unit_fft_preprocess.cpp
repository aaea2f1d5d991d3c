#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <complex>
#include <set>

#include "octforge/preprocess.hpp"

using namespace octforge;

namespace {

// Direct O(N^4) 2D DFT magnitude, the oracle for the radix-2 path.
std::vector<double> dft_magnitude_oracle(const std::vector<double>& x, int h, int w) {
    std::vector<double> mag(size_t(h) * w);
    for (int u = 0; u < h; ++u)
        for (int v = 0; v < w; ++v) {
            std::complex<double> acc(0, 0);
            for (int r = 0; r < h; ++r)
                for (int c = 0; c < w; ++c) {
                    const double ang =
                        -2.0 * 3.14159265358979323846 * (double(u) * r / h + double(v) * c / w);
                    acc += x[size_t(r) * w + c] * std::complex<double>(std::cos(ang), std::sin(ang));
                }
            mag[size_t(u) * w + v] = std::abs(acc);
        }
    return mag;
}

RgbImage solid_image(int h, int w, uint8_t r, uint8_t g, uint8_t b) {
    RgbImage img(h, w);
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            img.at(i, j, 0) = r;
            img.at(i, j, 1) = g;
            img.at(i, j, 2) = b;
        }
    return img;
}

RgbImage random_image(int h, int w, Rng& rng) {
    RgbImage img(h, w);
    for (size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = uint8_t(rng.below(256));
    return img;
}

} // namespace

TEST_CASE("fft2d: 2x2 toy input has magnitudes [[10,2],[4,0]]") {
    std::vector<double> x = {1, 2, 3, 4};
    std::vector<double> mag = fft::magnitude2d(x.data(), 2, 2);
    CHECK(mag[0] == doctest::Approx(10.0).epsilon(1e-12));
    CHECK(mag[1] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(mag[2] == doctest::Approx(4.0).epsilon(1e-12));
    CHECK(mag[3] == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
}

TEST_CASE("fft2d matches the direct DFT oracle on seeded random grids") {
    Rng rng(77);
    for (auto [h, w] : {std::pair{4, 4}, {8, 8}, {8, 4}, {16, 2}, {32, 32}}) {
        std::vector<double> x(size_t(h) * w);
        for (auto& v : x) v = rng.uniform(-5.0, 5.0);
        std::vector<double> got = fft::magnitude2d(x.data(), h, w);
        std::vector<double> want = dft_magnitude_oracle(x, h, w);
        for (size_t i = 0; i < x.size(); ++i)
            CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-9).scale(1.0));
    }
}

TEST_CASE("fft rejects non-power-of-two lengths") {
    std::vector<double> x(36, 1.0);
    CHECK_THROWS_AS(fft::magnitude2d(x.data(), 6, 6), std::invalid_argument);
}

TEST_CASE("compute_si: constant crop concentrates all energy at the shifted DC") {
    RgbImage img = solid_image(128, 128, 90, 90, 90);
    SpectrumImage si = compute_si(img);
    for (int r = 0; r < 128; ++r)
        for (int c = 0; c < 128; ++c) {
            const float v = si.data[int64_t(r) * 128 + c];
            if (r == 64 && c == 64)
                CHECK(v == 1.0f);
            else
                CHECK(v == 0.0f);
        }
}

TEST_CASE("compute_si: point symmetry about the center and [0,1] range") {
    Rng rng(123);
    for (int trial = 0; trial < 3; ++trial) {
        RgbImage img = random_image(128, 128, rng);
        SpectrumImage si = compute_si(img);
        for (int r = 0; r < 128; ++r)
            for (int c = 0; c < 128; ++c) {
                const float v = si.data[int64_t(r) * 128 + c];
                CHECK(v >= 0.0f);
                CHECK(v <= 1.0f);
                const int rr = (128 - r) % 128, cc = (128 - c) % 128;
                CHECK(std::abs(v - si.data[int64_t(rr) * 128 + cc]) < 1e-5);
            }
    }
}

TEST_CASE("compute_si rejects wrong crop sizes") {
    RgbImage img = solid_image(64, 128, 1, 2, 3);
    CHECK_THROWS_AS(compute_si(img), ShapeError);
}

TEST_CASE("compute_cdi: gray input gives the all-zero channel difference") {
    RgbImage img = solid_image(128, 128, 77, 77, 77);
    Cdi cdi = compute_cdi(img);
    CHECK(cdi.data.max_abs() == 0.0f);
}

TEST_CASE("compute_cdi: single pixel arithmetic and channel order") {
    RgbImage img = solid_image(128, 128, 200, 100, 50);
    Cdi cdi = compute_cdi(img);
    const int hw = 128 * 128;
    CHECK(double(cdi.data[0]) == doctest::Approx(100.0 / 255.0).epsilon(1e-6));   // R-G
    CHECK(double(cdi.data[hw]) == doctest::Approx(-50.0 / 255.0).epsilon(1e-6));  // B-G
    CHECK(double(cdi.data[2 * hw]) == doctest::Approx(150.0 / 255.0).epsilon(1e-6)); // R-B
}

TEST_CASE("compute_cdi: linear dependence (R-G) - (R-B) == (B-G) and [-1,1] range") {
    Rng rng(9);
    RgbImage img = random_image(128, 128, rng);
    Cdi cdi = compute_cdi(img);
    const int hw = 128 * 128;
    for (int i = 0; i < hw; ++i) {
        CHECK(std::abs(cdi.data[i]) <= 1.0f);
        // pre-normalization identity on the integer differences
        const int r = i / 128, c = i % 128;
        const int d0 = int(img.at(r, c, 0)) - int(img.at(r, c, 1));
        const int d1 = int(img.at(r, c, 2)) - int(img.at(r, c, 1));
        const int d2 = int(img.at(r, c, 0)) - int(img.at(r, c, 2));
        CHECK(d0 - d2 == d1);
        CHECK(float(d0) / 255.0f == cdi.data[i]);
        CHECK(float(d1) / 255.0f == cdi.data[hw + i]);
        CHECK(float(d2) / 255.0f == cdi.data[2 * hw + i]);
    }
}

TEST_CASE("crop_parts: exact tiling and the edge-anchored final window") {
    Rng rng(15);
    {
        auto [grid, crops] = crop_parts(random_image(128, 128, rng));
        CHECK(grid.offsets.size() == 1);
        CHECK(grid.offsets[0] == std::pair{0, 0});
        CHECK(crops.size() == 1);
    }
    {
        auto [grid, crops] = crop_parts(random_image(256, 256, rng));
        CHECK(crops.size() == 4);
        std::set<std::pair<int, int>> want = {{0, 0}, {0, 128}, {128, 0}, {128, 128}};
        CHECK(std::set(grid.offsets.begin(), grid.offsets.end()) == want);
    }
    {
        auto [grid, crops] = crop_parts(random_image(200, 300, rng));
        CHECK(crops.size() == 6);
        std::set<int> rows, cols;
        for (auto [r, c] : grid.offsets) {
            rows.insert(r);
            cols.insert(c);
        }
        CHECK(rows == std::set<int>{0, 72});
        CHECK(cols == std::set<int>{0, 128, 172});
    }
    CHECK_THROWS_AS(crop_parts(random_image(100, 140, rng)), DataError);
}

TEST_CASE("crop_parts: windows cover every pixel for assorted sizes") {
    Rng rng(16);
    for (auto [h, w] : {std::pair{128, 129}, {130, 128}, {257, 391}, {384, 200}}) {
        RgbImage img = random_image(h, w, rng);
        auto [grid, crops] = crop_parts(img);
        std::vector<uint8_t> covered(size_t(h) * w, 0);
        for (auto [r0, c0] : grid.offsets)
            for (int r = r0; r < r0 + 128; ++r)
                for (int c = c0; c < c0 + 128; ++c) covered[size_t(r) * w + c] = 1;
        int64_t total = 0;
        for (uint8_t v : covered) total += v;
        CHECK(total == int64_t(h) * w);
        // crops reproduce the underlying pixels
        for (size_t k = 0; k < crops.size(); ++k) {
            auto [r0, c0] = grid.offsets[k];
            CHECK(crops[k].at(5, 7, 1) == img.at(r0 + 5, c0 + 7, 1));
        }
    }
}

TEST_CASE("average_spectrum: mean of identical images equals the single SI") {
    Rng rng(31);
    RgbImage img = random_image(128, 128, rng);
    SpectrumImage one = compute_si(img);
    SpectrumImage avg = average_spectrum({img, img, img});
    for (int64_t i = 0; i < one.data.numel(); ++i)
        CHECK(std::abs(one.data[i] - avg.data[i]) < 1e-6);
}

TEST_CASE("average_spectrum: constants of different brightness keep center-only energy") {
    SpectrumImage avg =
        average_spectrum({solid_image(128, 128, 30, 30, 30), solid_image(128, 128, 200, 200, 200)});
    for (int r = 0; r < 128; ++r)
        for (int c = 0; c < 128; ++c) {
            const float v = avg.data[int64_t(r) * 128 + c];
            if (r == 64 && c == 64)
                CHECK(v == 1.0f);
            else
                CHECK(v == 0.0f);
        }
}

TEST_CASE("average_spectrum rejects an empty list") {
    CHECK_THROWS_AS(average_spectrum({}), DataError);
}

TEST_CASE("hf_energy_fraction separates low-band from high-band sinusoids") {
    const int n = 128;
    std::vector<double> low(size_t(n) * n), high(size_t(n) * n);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) {
            low[size_t(r) * n + c] = std::sin(2.0 * 3.14159265358979323846 * 5.0 * c / n);
            high[size_t(r) * n + c] = std::sin(2.0 * 3.14159265358979323846 * 50.0 * c / n);
        }
    CHECK(hf_energy_fraction(low, n, n) < 0.01);
    CHECK(hf_energy_fraction(high, n, n) > 0.99);
}
