#pragma once

#include <string>
#include <vector>

#include "octforge/octconv.hpp"
#include "octforge/params.hpp"

namespace octforge {

// Oct-ResNet feature extractor. Two presets: the full-depth resnet-34 layout
// and a thin desk-10 layout with the same structure for desk-scale runs.
struct BackboneConfig {
    std::string preset = "desk-10";
    double alpha = 0.25;
    int input_channels = 3;

    int stem_kernel = 3;
    bool stem_pool = false; // extra pool between stem and stage 1
    std::vector<int> stage_widths;
    std::vector<int> stage_blocks;
    int feature_dim = 128;

    static BackboneConfig make(const std::string& preset, double alpha, int input_channels) {
        BackboneConfig cfg;
        cfg.preset = preset;
        cfg.alpha = alpha;
        cfg.input_channels = input_channels;
        if (preset == "desk-10") {
            cfg.stem_kernel = 3;
            cfg.stem_pool = false;
            cfg.stage_widths = {16, 32, 64, 128};
            cfg.stage_blocks = {1, 1, 1, 1};
        } else if (preset == "resnet-34") {
            cfg.stem_kernel = 7;
            cfg.stem_pool = true;
            cfg.stage_widths = {64, 128, 256, 512};
            cfg.stage_blocks = {3, 4, 6, 3};
        } else {
            throw DataError("unknown backbone preset: " + preset);
        }
        cfg.feature_dim = cfg.stage_widths.back();
        return cfg;
    }
};

struct BranchChannels {
    int high = 0;
    int low = 0;
};

inline BranchChannels split_width(int total, double alpha) {
    const int low = oct_low_channels(total, alpha);
    return {total - low, low};
}

// Static shape of one residual block.
struct BlockShape {
    int stage = 0, block = 0;
    BranchChannels in, mid, out;
    int stride = 1;
    bool merge = false;      // alpha_out == 0 on conv2 (last block of the net)
    bool projection = false; // shortcut is a 1x1 octave projection
};

inline std::vector<BlockShape> backbone_blocks(const BackboneConfig& cfg) {
    std::vector<BlockShape> plan;
    BranchChannels cur = split_width(cfg.stage_widths[0], cfg.alpha);
    const int n_stages = int(cfg.stage_widths.size());
    for (int s = 0; s < n_stages; ++s) {
        for (int b = 0; b < cfg.stage_blocks[size_t(s)]; ++b) {
            BlockShape bs;
            bs.stage = s + 1;
            bs.block = b + 1;
            bs.in = cur;
            bs.mid = split_width(cfg.stage_widths[size_t(s)], cfg.alpha);
            bs.merge = (s == n_stages - 1) && (b == cfg.stage_blocks[size_t(s)] - 1);
            bs.out = bs.merge ? BranchChannels{cfg.stage_widths[size_t(s)], 0} : bs.mid;
            bs.stride = (s > 0 && b == 0) ? 2 : 1;
            bs.projection =
                bs.stride != 1 || bs.in.high != bs.out.high || bs.in.low != bs.out.low;
            plan.push_back(bs);
            cur = bs.out;
        }
    }
    return plan;
}

namespace detail {

template <typename T>
void register_bn(ParamStore<T>& store, const std::string& layer, int channels) {
    store.add_param(layer + ".gamma", Tensor<T>::full({channels}, T(1)));
    store.add_param(layer + ".beta", Tensor<T>({channels}));
    store.add_buffer(layer + ".running_mean", Tensor<T>({channels}));
    store.add_buffer(layer + ".running_var", Tensor<T>::full({channels}, T(1)));
}

template <typename T>
void register_conv(ParamStore<T>& store, const std::string& name, int cout, int cin, int k,
                   Rng& rng) {
    store.add_param(name, kaiming_init<T>({cout, cin, k, k}, cin * k * k, rng));
}

// Registers the four path weights of one octave conv; absent branches get no
// parameters.
template <typename T>
void register_oct_conv(ParamStore<T>& store, const std::string& name, BranchChannels in,
                       BranchChannels out, int k, Rng& rng) {
    if (out.high > 0 && in.high > 0) register_conv(store, name + ".hh.w", out.high, in.high, k, rng);
    if (out.high > 0 && in.low > 0) register_conv(store, name + ".lh.w", out.high, in.low, k, rng);
    if (out.low > 0 && in.low > 0) register_conv(store, name + ".ll.w", out.low, in.low, k, rng);
    if (out.low > 0 && in.high > 0) register_conv(store, name + ".hl.w", out.low, in.high, k, rng);
}

template <typename T>
OctConvWeights bind_oct_conv(Tape<T>& tape, ParamStore<T>& store, const std::string& name) {
    OctConvWeights w;
    if (store.has_param(name + ".hh.w")) w.hh = store.bind(tape, name + ".hh.w");
    if (store.has_param(name + ".lh.w")) w.lh = store.bind(tape, name + ".lh.w");
    if (store.has_param(name + ".ll.w")) w.ll = store.bind(tape, name + ".ll.w");
    if (store.has_param(name + ".hl.w")) w.hl = store.bind(tape, name + ".hl.w");
    return w;
}

template <typename T>
int bn_forward(Tape<T>& tape, int x, ParamStore<T>& store, const std::string& layer,
               bool training) {
    return tape.batchnorm(x, store.bind(tape, layer + ".gamma"), store.bind(tape, layer + ".beta"),
                          store.buffer(layer + ".running_mean"),
                          store.buffer(layer + ".running_var"), training);
}

} // namespace detail

template <typename T>
void register_backbone(ParamStore<T>& store, const std::string& prefix, const BackboneConfig& cfg,
                       Rng& rng) {
    const BranchChannels stem = split_width(cfg.stage_widths[0], cfg.alpha);
    detail::register_conv(store, prefix + ".stem.conv.w", stem.high, cfg.input_channels,
                          cfg.stem_kernel, rng);
    detail::register_bn(store, prefix + ".stem.bn", stem.high);
    if (stem.low > 0)
        detail::register_conv(store, prefix + ".stem.split.w", stem.low, stem.high, 1, rng);

    for (const BlockShape& bs : backbone_blocks(cfg)) {
        const std::string p =
            prefix + ".s" + std::to_string(bs.stage) + ".b" + std::to_string(bs.block);
        detail::register_oct_conv(store, p + ".conv1", bs.in, bs.mid, 3, rng);
        detail::register_bn(store, p + ".bn1h", bs.mid.high);
        if (bs.mid.low > 0) detail::register_bn(store, p + ".bn1l", bs.mid.low);
        detail::register_oct_conv(store, p + ".conv2", bs.mid, bs.out, 3, rng);
        detail::register_bn(store, p + ".bn2h", bs.out.high);
        if (bs.out.low > 0) detail::register_bn(store, p + ".bn2l", bs.out.low);
        if (bs.projection) {
            detail::register_oct_conv(store, p + ".short", bs.in, bs.out, 1, rng);
            detail::register_bn(store, p + ".short_bnh", bs.out.high);
            if (bs.out.low > 0) detail::register_bn(store, p + ".short_bnl", bs.out.low);
        }
    }
}

// Runs the backbone on a [N,C,128,128] (or [C,128,128]) input node and returns
// the pooled feature node [N,D].
template <typename T>
int backbone_forward(Tape<T>& tape, int input, const BackboneConfig& cfg, ParamStore<T>& store,
                     const std::string& prefix, bool training) {
    const BranchChannels stem = split_width(cfg.stage_widths[0], cfg.alpha);
    {
        auto in_shape = kernels::as_nchw(tape.val(input).dims(), "backbone input");
        check_shape(in_shape.c == cfg.input_channels,
                    prefix + " backbone expects " + std::to_string(cfg.input_channels) +
                        " input channels, got " + std::to_string(in_shape.c));
    }
    int x = tape.conv2d(input, store.bind(tape, prefix + ".stem.conv.w"), -1, 2,
                        cfg.stem_kernel / 2);
    x = detail::bn_forward(tape, x, store, prefix + ".stem.bn", training);
    x = tape.relu(x);
    if (cfg.stem_pool) x = tape.avg_pool2x2(x);
    OctIds o = oct_split(tape, x,
                         stem.low > 0 ? store.bind(tape, prefix + ".stem.split.w") : -1);

    for (const BlockShape& bs : backbone_blocks(cfg)) {
        const std::string p =
            prefix + ".s" + std::to_string(bs.stage) + ".b" + std::to_string(bs.block);
        OctIds c1 = oct_conv(tape, o, detail::bind_oct_conv(tape, store, p + ".conv1"),
                             bs.stride, 1);
        c1.high = tape.relu(detail::bn_forward(tape, c1.high, store, p + ".bn1h", training));
        if (c1.has_low())
            c1.low = tape.relu(detail::bn_forward(tape, c1.low, store, p + ".bn1l", training));
        OctIds c2 = oct_conv(tape, c1, detail::bind_oct_conv(tape, store, p + ".conv2"), 1, 1);
        c2.high = detail::bn_forward(tape, c2.high, store, p + ".bn2h", training);
        if (c2.has_low())
            c2.low = detail::bn_forward(tape, c2.low, store, p + ".bn2l", training);

        OctIds sc = o;
        if (bs.projection) {
            sc = oct_conv(tape, o, detail::bind_oct_conv(tape, store, p + ".short"), bs.stride, 0);
            sc.high = detail::bn_forward(tape, sc.high, store, p + ".short_bnh", training);
            if (sc.has_low())
                sc.low = detail::bn_forward(tape, sc.low, store, p + ".short_bnl", training);
        }
        OctIds out;
        out.high = tape.relu(tape.add(c2.high, sc.high));
        if (c2.has_low()) out.low = tape.relu(tape.add(c2.low, sc.low));
        o = out;
    }
    return tape.global_avg_pool(o.high);
}

} // namespace octforge
