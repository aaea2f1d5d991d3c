#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "octforge/alignment.hpp"
#include "octforge/fusion.hpp"

using namespace octforge;

namespace {

struct FuseResult {
    Tensor<float> fused;
    Tensor<float> weights;
};

FuseResult fuse(const Tensor<float>& v1, const Tensor<float>& v2, const Tensor<float>& q) {
    Tape<float> t;
    Tensor<float> weights;
    int id = t.attention_fuse(t.input(v1), t.input(v2), t.input(q), &weights);
    return {t.val(id), weights};
}

} // namespace

TEST_CASE("attention_fuse: zero kernel gives exactly uniform weights") {
    Tensor<float> v1({1, 4}, {1, 2, 3, 4});
    Tensor<float> v2({1, 4}, {-1, 5, 0.5f, 2});
    Tensor<float> q({4});
    FuseResult r = fuse(v1, v2, q);
    CHECK(r.weights[0] == 0.5f);
    CHECK(r.weights[1] == 0.5f);
    for (int i = 0; i < 4; ++i) {
        CHECK(r.fused[i] == v1[i] * 0.5f);
        CHECK(r.fused[4 + i] == v2[i] * 0.5f);
    }
}

TEST_CASE("attention_fuse: closed-form softmax for scores (1, 0)") {
    Tensor<float> v1({1, 2}, {1, 0});
    Tensor<float> v2({1, 2}, {0, 0});
    Tensor<float> q({2}, {1, 0});
    FuseResult r = fuse(v1, v2, q);
    CHECK(double(r.weights[0]) == doctest::Approx(0.73105857863).epsilon(1e-6));
    CHECK(double(r.weights[1]) == doctest::Approx(0.26894142137).epsilon(1e-6));
}

TEST_CASE("attention_fuse: swapping the streams swaps the weights exactly") {
    Rng rng(41);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor<float> v1({2, 6}), v2({2, 6}), q({6});
        fill_uniform_away_from_zero(v1, rng);
        fill_uniform_away_from_zero(v2, rng);
        fill_uniform_away_from_zero(q, rng);
        FuseResult a = fuse(v1, v2, q);
        FuseResult b = fuse(v2, v1, q);
        for (int i = 0; i < 2; ++i) {
            CHECK(a.weights[2 * i] == b.weights[2 * i + 1]);
            CHECK(a.weights[2 * i + 1] == b.weights[2 * i]);
        }
    }
}

TEST_CASE("attention_fuse: weights sum to one and stay in (0,1) for 10^4 random inputs") {
    Rng rng(43);
    const int batch = 100;
    for (int trial = 0; trial < 100; ++trial) {
        Tensor<float> v1({batch, 8}), v2({batch, 8}), q({8});
        for (int64_t i = 0; i < v1.numel(); ++i) v1[i] = float(rng.uniform(-1.5, 1.5));
        for (int64_t i = 0; i < v2.numel(); ++i) v2[i] = float(rng.uniform(-1.5, 1.5));
        for (int64_t i = 0; i < q.numel(); ++i) q[i] = float(rng.uniform(-1.5, 1.5));
        FuseResult r = fuse(v1, v2, q);
        for (int i = 0; i < batch; ++i) {
            const float w1 = r.weights[2 * i], w2 = r.weights[2 * i + 1];
            CHECK(std::abs(double(w1 + w2) - 1.0) < 1e-6);
            CHECK(w1 > 0.0f);
            CHECK(w2 > 0.0f);
        }
    }
}

TEST_CASE("attention_fuse: extreme score gaps saturate but never break normalization") {
    // beyond ~88 nats the loser underflows to 0 in f32; the pair still sums to 1
    Tensor<float> v1({1, 1}, {200.0f});
    Tensor<float> v2({1, 1}, {-200.0f});
    Tensor<float> q({1}, {1.0f});
    FuseResult r = fuse(v1, v2, q);
    CHECK(r.weights[0] == 1.0f);
    CHECK(r.weights[1] == 0.0f);
    CHECK(r.weights[0] + r.weights[1] == 1.0f);
}

TEST_CASE("attention_fuse: scaling q sharpens the weight toward the higher score") {
    Rng rng(47);
    for (int trial = 0; trial < 30; ++trial) {
        Tensor<float> v1({1, 5}), v2({1, 5}), q({5});
        fill_uniform_away_from_zero(v1, rng);
        fill_uniform_away_from_zero(v2, rng);
        fill_uniform_away_from_zero(q, rng);
        double s1 = 0, s2 = 0;
        for (int i = 0; i < 5; ++i) {
            s1 += double(q[i]) * v1[i];
            s2 += double(q[i]) * v2[i];
        }
        if (std::abs(s1 - s2) < 1e-3) continue;
        Tensor<float> q2(q.dims());
        for (int i = 0; i < 5; ++i) q2[i] = 2.5f * q[i];
        FuseResult a = fuse(v1, v2, q);
        FuseResult b = fuse(v1, v2, q2);
        if (s1 > s2)
            CHECK(b.weights[0] > a.weights[0]);
        else
            CHECK(b.weights[0] < a.weights[0]);
    }
}

TEST_CASE("attention_fuse: identical streams fuse into equal-norm halves") {
    Rng rng(53);
    Tensor<float> v({2, 6}), q({6});
    fill_uniform_away_from_zero(v, rng);
    fill_uniform_away_from_zero(q, rng);
    FuseResult r = fuse(v, v, q);
    for (int i = 0; i < 2; ++i) {
        CHECK(r.weights[2 * i] == 0.5f); // equal scores -> equal weights
        double n1 = 0, n2 = 0;
        for (int j = 0; j < 6; ++j) {
            n1 += double(r.fused[int64_t(i) * 12 + j]) * r.fused[int64_t(i) * 12 + j];
            n2 += double(r.fused[int64_t(i) * 12 + 6 + j]) * r.fused[int64_t(i) * 12 + 6 + j];
        }
        CHECK(n1 == doctest::Approx(n2).epsilon(1e-9));
    }
}

TEST_CASE("fusion head: zero input and zero biases give uniform class probabilities") {
    ParamStore<float> store;
    Rng rng(51);
    register_fusion_head(store, "fuse", 8, rng);
    Tape<float> t;
    int v_cdi = t.input(Tensor<float>({3, 8}));
    int v_si = t.input(Tensor<float>({3, 8}));
    FusionForward<float> out = fusion_forward(t, v_cdi, v_si, store, "fuse");
    // q starts at zero: weights exactly uniform
    for (int i = 0; i < 3; ++i) {
        CHECK(out.weights[2 * i] == 0.5f);
        CHECK(out.weights[2 * i + 1] == 0.5f);
    }
    // zero fused input, zero biases -> logits (0,0)
    CHECK(t.val(out.logits).max_abs() == 0.0f);
    CHECK(t.val(out.penultimate).dims() == std::vector<int>{3, 8});
    CHECK(t.val(out.fused).dims() == std::vector<int>{3, 16});
}

TEST_CASE("classify path: identity-like fc1 passes the first-half features through") {
    // fc1 = [I | 0], relu over non-negative features reproduces them
    const int d = 4;
    Tensor<float> fc1w({d, 2 * d});
    for (int i = 0; i < d; ++i) fc1w[int64_t(i) * 2 * d + i] = 1.0f;
    Tensor<float> fc1b({d});
    Tensor<float> fused({1, 2 * d}, {0.5f, 1.5f, 0.25f, 2.0f, 0, 0, 0, 0});
    Tape<float> t;
    int pen = t.relu(t.linear(t.input(fused), t.input(fc1w), t.input(fc1b)));
    for (int i = 0; i < d; ++i) CHECK(t.val(pen)[i] == fused[i]);
}

TEST_CASE("mmd_distance: identical domains give zero") {
    Tensor<double> f({3, 4}, {1, 2, 3, 4, -1, 0, 2, 5, 7, 7, 7, 7});
    std::vector<DomainBatch<double>> batches;
    for (int d = 0; d < 3; ++d) batches.push_back({d, f, {0, 1, 0}});
    CHECK(mmd_distance(batches) < 1e-12);
}

TEST_CASE("mmd_distance: K=2 closed form (means (0,0) and (1,1)) equals 2.0") {
    // two samples per domain so the mean is not a single row
    Tensor<double> a({2, 2}, {-1, 1, 1, -1}); // mean (0,0)
    Tensor<double> b({2, 2}, {0, 2, 2, 0});   // mean (1,1)
    std::vector<DomainBatch<double>> batches = {{0, a, {0, 0}}, {1, b, {1, 1}}};
    CHECK(std::abs(mmd_distance(batches) - 2.0) < 1e-9);
}

TEST_CASE("mmd_distance: K=3 closed form (1-D means 0, 1, 2) equals 2.0") {
    Tensor<double> a({2, 1}, {-1, 1});
    Tensor<double> b({1, 1}, {1});
    Tensor<double> c({3, 1}, {2, 2, 2});
    std::vector<DomainBatch<double>> batches = {{0, a, {0, 0}}, {1, b, {1}}, {2, c, {0, 1, 0}}};
    CHECK(std::abs(mmd_distance(batches) - 2.0) < 1e-9);
}

TEST_CASE("mmd_distance: K < 2 and empty batches are rejected") {
    Tensor<double> a({2, 2}, {0, 0, 1, 1});
    CHECK_THROWS_AS(mmd_distance<double>({{0, a, {0, 0}}}), std::invalid_argument);
    CHECK_THROWS_AS(mmd_distance<double>({}), std::invalid_argument);
}

TEST_CASE("mmd_distance invariants: permutation, translation, duplication are exact") {
    // integer-valued features keep every mean exact in floating point
    Tensor<double> a({3, 2}, {1, 2, 3, 4, 5, 0});
    Tensor<double> b({2, 2}, {7, 1, 3, 3});
    Tensor<double> c({4, 2}, {0, 0, 2, 6, 4, 2, 2, 0});
    std::vector<DomainBatch<double>> base = {{0, a, {}}, {1, b, {}}, {2, c, {}}};
    const double v = mmd_distance(base);

    // domain order permutation
    std::vector<DomainBatch<double>> perm = {{2, c, {}}, {0, a, {}}, {1, b, {}}};
    CHECK(mmd_distance(perm) == v);

    // sample order permutation within a domain
    Tensor<double> a2({3, 2}, {5, 0, 1, 2, 3, 4});
    std::vector<DomainBatch<double>> perm2 = {{0, a2, {}}, {1, b, {}}, {2, c, {}}};
    CHECK(mmd_distance(perm2) == v);

    // translation of every feature by the same integer vector
    auto shift = [](Tensor<double> t, double dx, double dy) {
        for (int i = 0; i < t.dim(0); ++i) {
            t[int64_t(i) * 2] += dx;
            t[int64_t(i) * 2 + 1] += dy;
        }
        return t;
    };
    std::vector<DomainBatch<double>> moved = {
        {0, shift(a, 10, -6), {}}, {1, shift(b, 10, -6), {}}, {2, shift(c, 10, -6), {}}};
    CHECK(mmd_distance(moved) == v);

    // duplicating every sample of one domain leaves the estimator unchanged
    Tensor<double> bdup({4, 2}, {7, 1, 3, 3, 7, 1, 3, 3});
    std::vector<DomainBatch<double>> dup = {{0, a, {}}, {1, bdup, {}}, {2, c, {}}};
    CHECK(mmd_distance(dup) == v);

    // shifting one domain away from a previously-equal pair strictly increases it
    Tensor<double> e1({2, 2}, {1, 1, 3, 3});
    Tensor<double> e2({2, 2}, {0, 2, 4, 2}); // same mean (2,2)
    std::vector<DomainBatch<double>> eq = {{0, e1, {}}, {1, e2, {}}};
    CHECK(mmd_distance(eq) < 1e-12);
    std::vector<DomainBatch<double>> off = {{0, shift(e1, 3, 0), {}}, {1, e2, {}}};
    CHECK(mmd_distance(off) > 0.0);
}

TEST_CASE("mmd_distance is non-negative on random domain batches") {
    Rng rng(83);
    for (int trial = 0; trial < 50; ++trial) {
        const int k = 2 + int(rng.below(3));
        const int d = 1 + int(rng.below(6));
        std::vector<DomainBatch<double>> batches;
        for (int dom = 0; dom < k; ++dom) {
            const int n = 1 + int(rng.below(5));
            Tensor<double> f({n, d});
            for (int64_t i = 0; i < f.numel(); ++i) f[i] = rng.uniform(-10.0, 10.0);
            batches.push_back({dom, std::move(f), {}});
        }
        CHECK(mmd_distance(batches) >= 0.0);
    }
}

TEST_CASE("total_loss: composition, lambda 0, the balanced-loss point, errors") {
    LossBreakdown<double> zero = total_loss(0.83, 4.0, 0.0);
    CHECK(zero.total == 0.83);
    LossBreakdown<double> bal = total_loss(0.7, 0.7, 1.0);
    CHECK(bal.total == doctest::Approx(1.4).epsilon(1e-12));
    LossBreakdown<double> mix = total_loss(0.5, 50.0, 0.01);
    CHECK(mix.total == doctest::Approx(1.0).epsilon(1e-12));
    CHECK_THROWS_AS(total_loss(0.5, 1.0, -0.1), std::invalid_argument);
}
