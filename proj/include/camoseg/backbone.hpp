#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "camoseg/tensor.hpp"

namespace camoseg::backbone {

struct DiffusionSchedule {
    std::vector<double> alphas;
    std::vector<double> sigmas;
    int64_t num_steps = 0;

    // linear alpha 1 -> 0, sigma = sqrt(1 - alpha^2) (variance preserving)
    static DiffusionSchedule linear(int64_t num_steps);
    void validate() const;
};

// z^t = alpha^t z + sigma^t eps
Tensor noise_latent(const Tensor& z, int64_t t, const Tensor& eps, const DiffusionSchedule& schedule);

struct CaptionEmbedding {
    Tensor vector;  // unit norm, dimension D_text
};

struct FeaturePyramid {
    Tensor level8;         // [C8,  H/8,  W/8]
    Tensor level16;        // [C16, H/16, W/16]
    Tensor level32;        // [C32, H/32, W/32]
    Tensor decoder_final;  // [Cdec, H/8, W/8]
};

struct BackboneConfig {
    std::string kind = "toy";  // toy | adapter
    std::string weights_path;  // adapter only
    uint64_t seed = 0;
    int64_t caption_dim = 16;
    std::vector<int64_t> channels = {32, 64, 128};  // at scales 1/8, 1/16, 1/32
    int64_t decoder_channels = 64;
    int64_t timestep = -1;  // -1 = num_steps/2
};

// Frozen, seeded convolutional surrogate with per-level caption gating.
class Backbone {
public:
    virtual ~Backbone() = default;
    virtual CaptionEmbedding implicit_caption(const Tensor& image) const = 0;
    virtual FeaturePyramid extract_features(const Tensor& image, const CaptionEmbedding& caption,
                                            int64_t t) const = 0;
    virtual const DiffusionSchedule& schedule() const = 0;
    virtual int64_t default_timestep() const = 0;
};

class ToyBackbone : public Backbone {
public:
    ToyBackbone(const BackboneConfig& cfg, DiffusionSchedule schedule);

    CaptionEmbedding implicit_caption(const Tensor& image) const override;
    FeaturePyramid extract_features(const Tensor& image, const CaptionEmbedding& caption,
                                    int64_t t) const override;
    const DiffusionSchedule& schedule() const override { return schedule_; }
    int64_t default_timestep() const override { return timestep_; }

    void save_weights(const std::string& path) const;
    void load_weights(const std::string& path);

    // test hook: frozen in training, but invariants poke single weights
    std::vector<Tensor*> weight_tensors();

private:
    struct Conv {
        Tensor w, b;
    };
    struct CaptionGate {
        Tensor wq;  // [d_attn, C]
        Tensor wk;  // [d_attn, D_text]
        Tensor wv;  // [C, D_text]
    };
    Tensor run_caption_gate(const Tensor& feat, const CaptionGate& gate, const Tensor& caption) const;

    BackboneConfig cfg_;
    DiffusionSchedule schedule_;
    int64_t timestep_;
    std::vector<Conv> stem_;       // stride-2 stack down to 1/8
    Conv stage16_, stage32_;       // further stride-2 stages
    Conv decoder_;                 // 1/32 -> 1/8 after upsample
    CaptionGate gate8_, gate16_, gate32_;
    std::vector<Tensor> time_embed_;  // per-level channel vectors scaled by alpha^t
    Tensor caption_proj_;             // [D_text, 192] image-stat projection
};

std::unique_ptr<Backbone> make_backbone(const BackboneConfig& cfg, int64_t schedule_steps = 50);

}  // namespace camoseg::backbone
