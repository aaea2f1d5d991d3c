#pragma once

#include <cmath>
#include <string>

#include "octforge/params.hpp"
#include "octforge/tape.hpp"

namespace octforge {

// Paired high-/low-frequency feature maps on a tape; the low branch runs at
// half the spatial resolution. low == -1 means the low branch is absent
// (alpha 0 at that point of the network).
struct OctIds {
    int high = -1;
    int low = -1;

    bool has_low() const { return low >= 0; }
};

// alpha channel split of a total width: C_L = round(alpha * C_total).
inline int oct_low_channels(int total, double alpha) {
    check(alpha >= 0.0 && alpha < 1.0, "alpha must be in [0,1)");
    return int(std::lround(alpha * total));
}

template <typename T>
void check_oct(Tape<T>& tape, const OctIds& x) {
    if (!x.has_low()) return;
    auto h = kernels::as_nchw(tape.val(x.high).dims(), "oct high");
    auto l = kernels::as_nchw(tape.val(x.low).dims(), "oct low");
    check_shape(l.h * 2 == h.h && l.w * 2 == h.w,
                "oct tensor: low branch " + tape.val(x.low).shape_str() +
                    " is not half the resolution of high " + tape.val(x.high).shape_str());
}

// The four cross-frequency path weights of one octave convolution; -1 marks
// paths absent because alpha is 0 on one side. Biases are folded into the
// following norm layers.
struct OctConvWeights {
    int hh = -1; // high -> high
    int lh = -1; // low  -> high
    int ll = -1; // low  -> low
    int hl = -1; // high -> low
};

// Octave convolution: intra-frequency updates plus inter-frequency exchange,
//   Y_H = conv_hh(X_H) + upsample(conv_lh(X_L))
//   Y_L = conv_ll(X_L) + conv_hl(pool(X_H))
// A stride-2 layer pools both branches first and then applies the unit-stride
// paths, preserving the 2:1 resolution ratio.
template <typename T>
OctIds oct_conv(Tape<T>& tape, OctIds x, const OctConvWeights& w, int stride, int pad) {
    check(stride == 1 || stride == 2, "oct_conv: stride must be 1 or 2");
    check_oct(tape, x);
    if (stride == 2) {
        x.high = tape.avg_pool2x2(x.high);
        if (x.has_low()) x.low = tape.avg_pool2x2(x.low);
    }
    OctIds y;
    if (w.hh >= 0) y.high = tape.conv2d(x.high, w.hh, -1, 1, pad);
    if (w.lh >= 0) {
        check(x.has_low(), "oct_conv: low->high path given but input has no low branch");
        int up = tape.upsample_nearest2x(tape.conv2d(x.low, w.lh, -1, 1, pad));
        y.high = y.high >= 0 ? tape.add(y.high, up) : up;
    }
    if (w.ll >= 0) {
        check(x.has_low(), "oct_conv: low->low path given but input has no low branch");
        y.low = tape.conv2d(x.low, w.ll, -1, 1, pad);
    }
    if (w.hl >= 0) {
        int pooled = tape.avg_pool2x2(x.high);
        int hl = tape.conv2d(pooled, w.hl, -1, 1, pad);
        y.low = y.low >= 0 ? tape.add(y.low, hl) : hl;
    }
    check(y.high >= 0, "oct_conv: no path produced a high-frequency output");
    return y;
}

// Stem entry adapter: the incoming tensor becomes the high branch unchanged;
// the low branch is an average-pooled learned 1x1 projection of it.
template <typename T>
OctIds oct_split(Tape<T>& tape, int x, int proj_w) {
    auto s = kernels::as_nchw(tape.val(x).dims(), "oct_split");
    check_shape(s.h % 2 == 0 && s.w % 2 == 0, "oct_split: spatial dims must be even, got " +
                                                  std::to_string(s.h) + "x" + std::to_string(s.w));
    OctIds out;
    out.high = x;
    if (proj_w >= 0) out.low = tape.avg_pool2x2(tape.conv2d(x, proj_w, -1, 1, 0));
    return out;
}

// Number of low channels oct_split derives next to C_H high channels so that
// C_L == round(alpha * (C_H + C_L)).
inline int oct_split_low_channels(int high_channels, double alpha) {
    check(alpha >= 0.0 && alpha < 1.0, "alpha must be in [0,1)");
    return int(std::lround(double(high_channels) * alpha / (1.0 - alpha)));
}

} // namespace octforge
