#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "octforge/backbone.hpp"
#include "octforge/grad_check.hpp"

using namespace octforge;

namespace {

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    REQUIRE(a.dims() == b.dims());
    double m = 0;
    for (int64_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(double(a[i]) - double(b[i])));
    return m;
}

// Plain-conv mirror of the backbone at alpha == 0, built directly from
// conv/pool/norm ops with the high->high weights transplanted by name.
int plain_backbone_forward(Tape<float>& t, int input, const BackboneConfig& cfg,
                           ParamStore<float>& store, const std::string& prefix, bool training) {
    auto bn = [&](int x, const std::string& layer) {
        return t.batchnorm(x, store.bind(t, layer + ".gamma"), store.bind(t, layer + ".beta"),
                           store.buffer(layer + ".running_mean"),
                           store.buffer(layer + ".running_var"), training);
    };
    int x = t.conv2d(input, store.bind(t, prefix + ".stem.conv.w"), -1, 2, cfg.stem_kernel / 2);
    x = t.relu(bn(x, prefix + ".stem.bn"));
    if (cfg.stem_pool) x = t.avg_pool2x2(x);
    for (const BlockShape& bs : backbone_blocks(cfg)) {
        const std::string p =
            prefix + ".s" + std::to_string(bs.stage) + ".b" + std::to_string(bs.block);
        int in = bs.stride == 2 ? t.avg_pool2x2(x) : x;
        int c1 = t.relu(bn(t.conv2d(in, store.bind(t, p + ".conv1.hh.w"), -1, 1, 1), p + ".bn1h"));
        int c2 = bn(t.conv2d(c1, store.bind(t, p + ".conv2.hh.w"), -1, 1, 1), p + ".bn2h");
        int sc = bs.projection
                     ? bn(t.conv2d(in, store.bind(t, p + ".short.hh.w"), -1, 1, 0), p + ".short_bnh")
                     : x;
        x = t.relu(t.add(c2, sc));
    }
    return t.global_avg_pool(x);
}

// Reference plain ResNet-34 backbone parameter count, summed independently
// from the well-known architecture definition (conv + batchnorm affine).
int64_t reference_resnet34_backbone_params() {
    int64_t total = 0;
    auto conv = [&](int cout, int cin, int k) { total += int64_t(cout) * cin * k * k; };
    auto bn = [&](int c) { total += 2 * int64_t(c); };
    conv(64, 3, 7);
    bn(64);
    const int widths[4] = {64, 128, 256, 512};
    const int blocks[4] = {3, 4, 6, 3};
    int in = 64;
    for (int s = 0; s < 4; ++s) {
        for (int b = 0; b < blocks[s]; ++b) {
            const int out = widths[s];
            conv(out, in, 3);
            bn(out);
            conv(out, out, 3);
            bn(out);
            if (in != out || (s > 0 && b == 0)) { // downsample projection
                conv(out, in, 1);
                bn(out);
            }
            in = out;
        }
    }
    return total;
}

} // namespace

TEST_CASE("oct_conv: hand evaluation with 1x1 all-ones paths") {
    Tape<float> t;
    OctIds x;
    x.high = t.input(Tensor<float>({1, 1, 2, 2}, {1, 2, 3, 4}));
    x.low = t.input(Tensor<float>({1, 1, 1, 1}, {10}));
    OctConvWeights w;
    w.hh = t.input(Tensor<float>::full({1, 1, 1, 1}, 1.0f));
    w.lh = t.input(Tensor<float>::full({1, 1, 1, 1}, 1.0f));
    w.ll = t.input(Tensor<float>::full({1, 1, 1, 1}, 1.0f));
    w.hl = t.input(Tensor<float>::full({1, 1, 1, 1}, 1.0f));
    OctIds y = oct_conv(t, x, w, 1, 0);
    const Tensor<float>& high = t.val(y.high);
    REQUIRE(high.numel() == 4);
    CHECK(high[0] == 11.0f);
    CHECK(high[1] == 12.0f);
    CHECK(high[2] == 13.0f);
    CHECK(high[3] == 14.0f);
    const Tensor<float>& low = t.val(y.low);
    REQUIRE(low.numel() == 1);
    CHECK(low[0] == 12.5f); // conv(10) + conv(pool([[1,2],[3,4]])) = 10 + 2.5
}

TEST_CASE("oct_conv: zero weights give a zero octave tensor") {
    Rng rng(3);
    Tape<float> t;
    Tensor<float> xh({1, 2, 4, 4});
    fill_uniform_away_from_zero(xh, rng);
    Tensor<float> xl({1, 1, 2, 2});
    fill_uniform_away_from_zero(xl, rng);
    OctIds x{t.input(xh), t.input(xl)};
    OctConvWeights w;
    w.hh = t.input(Tensor<float>({2, 2, 3, 3}));
    w.lh = t.input(Tensor<float>({2, 1, 3, 3}));
    w.ll = t.input(Tensor<float>({1, 1, 3, 3}));
    w.hl = t.input(Tensor<float>({1, 2, 3, 3}));
    OctIds y = oct_conv(t, x, w, 1, 1);
    CHECK(t.val(y.high).max_abs() == 0.0f);
    CHECK(t.val(y.low).max_abs() == 0.0f);
}

TEST_CASE("oct_conv: alpha 0 degenerates to plain conv2d on the high branch") {
    Rng rng(5);
    Tensor<float> x({1, 3, 8, 8});
    fill_uniform_away_from_zero(x, rng);
    Tensor<float> w({4, 3, 3, 3});
    fill_uniform_away_from_zero(w, rng);
    Tape<float> t;
    OctIds in{t.input(x), -1};
    OctConvWeights ow;
    ow.hh = t.input(w);
    OctIds y = oct_conv(t, in, ow, 1, 1);
    CHECK_FALSE(y.has_low());
    int plain = t.conv2d(t.input(x), t.input(w), -1, 1, 1);
    CHECK(max_abs_diff(t.val(y.high), t.val(plain)) < 1e-6);
}

TEST_CASE("oct_conv rejects a low branch at the wrong resolution") {
    Tape<float> t;
    OctIds x;
    x.high = t.input(Tensor<float>({1, 1, 8, 8}));
    x.low = t.input(Tensor<float>({1, 1, 3, 3})); // should be 4x4
    OctConvWeights w;
    w.hh = t.input(Tensor<float>({1, 1, 3, 3}));
    CHECK_THROWS_AS(oct_conv(t, x, w, 1, 1), ShapeError);
}

TEST_CASE("oct_split: channel arithmetic and alpha 0 passthrough") {
    CHECK(oct_split_low_channels(12, 0.25) == 4); // stem 16 total -> 12 high + 4 low
    CHECK(oct_split_low_channels(48, 0.25) == 16);
    CHECK(oct_split_low_channels(7, 0.0) == 0);

    Rng rng(6);
    Tensor<float> x({1, 12, 128, 128});
    fill_uniform_away_from_zero(x, rng);
    {
        Tape<float> t;
        int xi = t.input(x);
        OctIds o = oct_split(t, xi, -1);
        CHECK_FALSE(o.has_low());
        CHECK(max_abs_diff(t.val(o.high), x) == 0.0);
    }
    {
        Tape<float> t;
        int xi = t.input(x);
        Tensor<float> proj({4, 12, 1, 1});
        fill_uniform_away_from_zero(proj, rng);
        OctIds o = oct_split(t, xi, t.input(proj));
        CHECK(t.val(o.high).dims() == std::vector<int>{1, 12, 128, 128});
        CHECK(t.val(o.low).dims() == std::vector<int>{1, 4, 64, 64});
    }
}

TEST_CASE("finite differences: oct_split + oct_conv composite") {
    Tensor<double> x = grad_check_input({1, 2, 8, 8}, 71);
    Tensor<double> proj = grad_check_input({1, 2, 1, 1}, 72); // 1 low channel from 2 high
    Tensor<double> hh = grad_check_input({2, 2, 3, 3}, 73);
    Tensor<double> lh = grad_check_input({2, 1, 3, 3}, 74);
    Tensor<double> ll = grad_check_input({1, 1, 3, 3}, 75);
    Tensor<double> hl = grad_check_input({1, 2, 3, 3}, 76);
    double err = grad_check({&x, &proj, &hh, &lh, &ll, &hl},
                            [](Tape<double>& t, const std::vector<int>& ids) {
                                OctIds o = oct_split(t, ids[0], ids[1]);
                                OctConvWeights w{ids[2], ids[3], ids[4], ids[5]};
                                OctIds y = oct_conv(t, o, w, 1, 1);
                                return t.add(t.sum(t.mul(y.high, y.high)),
                                             t.sum(t.mul(y.low, y.low)));
                            });
    CHECK(err < 1e-4);
}

TEST_CASE("backbone_forward: output shape, determinism, both presets") {
    for (const char* preset : {"desk-10", "resnet-34"}) {
        const BackboneConfig cfg = BackboneConfig::make(preset, 0.25, 3);
        ParamStore<float> store;
        Rng rng(17);
        register_backbone(store, "bb", cfg, rng);
        Rng irng(18);
        Tensor<float> input({1, 3, 128, 128});
        for (int64_t i = 0; i < input.numel(); ++i) input[i] = float(irng.uniform(-1.0, 1.0));
        Tape<float> t1;
        int f1 = backbone_forward(t1, t1.input(input), cfg, store, "bb", false);
        CHECK(t1.val(f1).dims() == std::vector<int>{1, cfg.feature_dim});
        Tape<float> t2;
        int f2 = backbone_forward(t2, t2.input(input), cfg, store, "bb", false);
        CHECK(max_abs_diff(t1.val(f1), t2.val(f2)) == 0.0);
    }
}

TEST_CASE("alpha 0 backbone equals the plain-conv twin with transplanted weights") {
    const BackboneConfig cfg = BackboneConfig::make("desk-10", 0.0, 3);
    ParamStore<float> store;
    Rng rng(23);
    register_backbone(store, "bb", cfg, rng);
    Rng irng(24);
    Tensor<float> input({2, 3, 64, 64});
    for (int64_t i = 0; i < input.numel(); ++i) input[i] = float(irng.uniform(-1.0, 1.0));
    Tape<float> t1;
    int oct = backbone_forward(t1, t1.input(input), cfg, store, "bb", false);
    Tape<float> t2;
    int plain = plain_backbone_forward(t2, t2.input(input), cfg, store, "bb", false);
    CHECK(max_abs_diff(t1.val(oct), t2.val(plain)) < 1e-6);
}

TEST_CASE("resnet-34 preset at alpha 0 matches the reference parameter count") {
    const BackboneConfig cfg = BackboneConfig::make("resnet-34", 0.0, 3);
    ParamStore<float> store;
    Rng rng(29);
    register_backbone(store, "bb", cfg, rng);
    CHECK(store.trainable_count() == reference_resnet34_backbone_params());
    // and the well-known torchvision total (backbone share of 21,797,672)
    CHECK(reference_resnet34_backbone_params() == 21284672);
}

TEST_CASE("low branch reacts over a 2x larger input neighborhood than the high branch") {
    // one oct_conv after a split; cross paths silenced so each branch shows
    // its own receptive field
    auto run = [&](bool perturb) {
        Tape<float> t;
        Tensor<float> x({1, 1, 16, 16});
        if (perturb) x[8 * 16 + 8] = 1.0f;
        int xi = t.input(x);
        Tensor<float> proj = Tensor<float>::full({1, 1, 1, 1}, 1.0f);
        OctIds o = oct_split(t, xi, t.input(proj));
        OctConvWeights w;
        w.hh = t.input(Tensor<float>::full({1, 1, 3, 3}, 1.0f));
        w.hl = t.input(Tensor<float>::full({1, 1, 3, 3}, 1.0f));
        OctIds y = oct_conv(t, o, w, 1, 1);
        return std::pair{t.val(y.high), t.val(y.low)};
    };
    auto [h0, l0] = run(false);
    auto [h1, l1] = run(true);
    auto bbox_span = [](const Tensor<float>& a, const Tensor<float>& b, int w) {
        int rmin = 1 << 20, rmax = -1, cmin = 1 << 20, cmax = -1;
        for (int64_t i = 0; i < a.numel(); ++i)
            if (a[i] != b[i]) {
                const int r = int(i) / w, c = int(i) % w;
                rmin = std::min(rmin, r);
                rmax = std::max(rmax, r);
                cmin = std::min(cmin, c);
                cmax = std::max(cmax, c);
            }
        REQUIRE(rmax >= 0);
        return std::max(rmax - rmin + 1, cmax - cmin + 1);
    };
    const int high_span = bbox_span(h0, h1, 16);    // input-resolution units
    const int low_span = 2 * bbox_span(l0, l1, 8);  // low cell covers 2x2 input
    CHECK(high_span == 3);
    CHECK(low_span == 6);
    CHECK(low_span >= 2 * high_span);
}
