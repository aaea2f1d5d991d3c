#pragma once

#include <string>

#include "octforge/params.hpp"
#include "octforge/tape.hpp"

namespace octforge {

// Attention fusion head: a learned kernel scores each stream by dot product,
// softmax turns the two scores into weights, and the weighted features are
// concatenated and classified by a two-layer head. The fc1 output (penultimate
// features) is what the alignment loss sees.
template <typename T>
void register_fusion_head(ParamStore<T>& store, const std::string& prefix, int feature_dim,
                          Rng& rng) {
    // q starts at zero: the provable fixed point with uniform 0.5/0.5 weights
    store.add_param(prefix + ".q", Tensor<T>({feature_dim}));
    store.add_param(prefix + ".fc1.w",
                    kaiming_init<T>({feature_dim, 2 * feature_dim}, 2 * feature_dim, rng));
    store.add_param(prefix + ".fc1.b", Tensor<T>({feature_dim}));
    store.add_param(prefix + ".fc2.w", kaiming_init<T>({2, feature_dim}, feature_dim, rng));
    store.add_param(prefix + ".fc2.b", Tensor<T>({2}));
}

template <typename T>
struct FusionForward {
    int fused = -1;       // [N, 2D]
    int penultimate = -1; // [N, D], relu(fc1(fused))
    int logits = -1;      // [N, 2]
    Tensor<T> weights;    // [N, 2] attention weights (w_cdi, w_si)
};

template <typename T>
FusionForward<T> fusion_forward(Tape<T>& tape, int v_cdi, int v_si, ParamStore<T>& store,
                                const std::string& prefix = "fuse") {
    FusionForward<T> out;
    out.fused = tape.attention_fuse(v_cdi, v_si, store.bind(tape, prefix + ".q"), &out.weights);
    int pre = tape.linear(out.fused, store.bind(tape, prefix + ".fc1.w"),
                          store.bind(tape, prefix + ".fc1.b"));
    out.penultimate = tape.relu(pre);
    out.logits = tape.linear(out.penultimate, store.bind(tape, prefix + ".fc2.w"),
                             store.bind(tape, prefix + ".fc2.b"));
    return out;
}

} // namespace octforge
