#pragma once

#include <string>
#include <vector>

#include "octforge/backbone.hpp"
#include "octforge/checkpoint.hpp"
#include "octforge/fusion.hpp"
#include "octforge/tape.hpp"

namespace octforge {

// Full detector: identical octave backbones over the channel-difference and
// spectrum inputs, attention fusion, two-layer classification head.
template <typename T>
class DetectorModel {
public:
    DetectorModel(const std::string& preset, double alpha, uint64_t init_seed)
        : cdi_cfg_(BackboneConfig::make(preset, alpha, 3)),
          si_cfg_(BackboneConfig::make(preset, alpha, 1)) {
        Rng rng(mix_seed(init_seed, 0xA110C));
        register_backbone(store_, "cdi", cdi_cfg_, rng);
        register_backbone(store_, "si", si_cfg_, rng);
        register_fusion_head(store_, "fuse", cdi_cfg_.feature_dim, rng);
    }

    ParamStore<T>& store() { return store_; }
    const ParamStore<T>& store() const { return store_; }
    const BackboneConfig& cdi_config() const { return cdi_cfg_; }
    const BackboneConfig& si_config() const { return si_cfg_; }
    int feature_dim() const { return cdi_cfg_.feature_dim; }

    struct Output {
        int logits = -1;      // tape id, [N,2]
        int penultimate = -1; // tape id, [N,D]
        Tensor<T> fusion_weights; // [N,2]
    };

    Output forward(Tape<T>& tape, int cdi_batch, int si_batch, bool training) {
        int v_cdi = backbone_forward(tape, cdi_batch, cdi_cfg_, store_, "cdi", training);
        int v_si = backbone_forward(tape, si_batch, si_cfg_, store_, "si", training);
        FusionForward<T> ff = fusion_forward(tape, v_cdi, v_si, store_, "fuse");
        Output out;
        out.logits = ff.logits;
        out.penultimate = ff.penultimate;
        out.fusion_weights = std::move(ff.weights);
        return out;
    }

    // Stage 2 fine-tunes only the final residual block of each backbone plus
    // the fusion head; everything else is frozen.
    std::vector<std::string> stage2_trainable_prefixes() const {
        const int s = int(cdi_cfg_.stage_widths.size());
        const int b = cdi_cfg_.stage_blocks.back();
        const std::string tail = ".s" + std::to_string(s) + ".b" + std::to_string(b) + ".";
        return {"cdi" + tail, "si" + tail, "fuse."};
    }

    void set_stage(int stage) {
        check(stage == 1 || stage == 2, "model stage must be 1 or 2");
        if (stage == 1) {
            for (auto& p : store_.params()) p.trainable = true;
            return;
        }
        const auto prefixes = stage2_trainable_prefixes();
        for (auto& p : store_.params()) {
            p.trainable = false;
            for (const auto& pre : prefixes)
                if (p.name.rfind(pre, 0) == 0) {
                    p.trainable = true;
                    break;
                }
        }
    }

    // Model tensors (parameters + buffers) as checkpoint entries.
    CheckpointData snapshot_tensors() const {
        CheckpointData ckpt;
        for (const auto& p : store_.params()) ckpt.add(p.name, p.value.template cast<float>());
        for (const auto& [name, t] : store_.buffers()) ckpt.add(name, t.template cast<float>());
        return ckpt;
    }

    void restore_tensors(const CheckpointData& ckpt) {
        for (auto& p : store_.params()) {
            const Tensor<float>& t = ckpt.at(p.name);
            check(t.dims() == p.value.dims(), "checkpoint tensor " + p.name +
                                                  " has shape " + t.shape_str() + ", expected " +
                                                  p.value.shape_str());
            p.value = t.template cast<T>();
        }
        for (auto& [name, buf] : store_.buffers()) {
            const Tensor<float>& t = ckpt.at(name);
            check(t.dims() == buf.dims(), "checkpoint tensor " + name + " shape mismatch");
            buf = t.template cast<T>();
        }
    }

private:
    BackboneConfig cdi_cfg_;
    BackboneConfig si_cfg_;
    ParamStore<T> store_;
};

} // namespace octforge
