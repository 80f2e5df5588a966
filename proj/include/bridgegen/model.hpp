#pragma once

#include <cmath>
#include <optional>
#include <string>

#include "bridgegen/autograd.hpp"
#include "bridgegen/rng.hpp"
#include "bridgegen/tensor.hpp"

namespace bridgegen::model {

enum class MaskKind { A, B };

enum class HeadKind { Categorical, LogisticMixture };

struct ModelConfig {
    int image_h = 48;
    int image_w = 192;
    int channels = 1;
    int num_resnet = 3;
    int num_filters = 32;
    int receptive_rows = 5; // R; first layer kernel is (2R-1, receptive_cols)
    int receptive_cols = 7; // C, odd
    float dropout_p = 0.3f;
    HeadKind head = HeadKind::LogisticMixture;
    int num_categories = 256; // K, categorical head
    int num_components = 1;   // M, logistic mixture head

    int head_channels() const {
        return head == HeadKind::Categorical ? num_categories : 3 * num_components;
    }
    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

constexpr double kLogScaleFloor = -6.907755278982137; // log(1e-3)
constexpr double kLogScaleShift = 4.848116364598481;  // log(127.5)

// Raw-to-pixel-domain mapping for the logistic mixture head. Raw conv
// outputs near zero land on mean 127.5 and a wide scale, so an untrained
// head starts close to a flat distribution over 0..255.
inline float dlm_mean_from_raw(float raw) { return affine_scalar(raw, 127.5, 127.5); }
inline float dlm_log_scale_from_raw(float raw) {
    return clamp_min_scalar(affine_scalar(raw, 1.0, kLogScaleShift), kLogScaleFloor);
}

// Per-pixel head output: K logits, or (M mix logits, M means, M log scales).
struct PixelDistribution {
    HeadKind kind = HeadKind::Categorical;
    Tensor logits;             // [N,H,W,K]
    Tensor mix_logits;         // [N,H,W,M]
    Tensor means;              // [N,H,W,M]
    Tensor log_scales;         // [N,H,W,M]

    int batch() const;
};

// Same thing, still attached to a tape (training path).
struct HeadVals {
    HeadKind kind = HeadKind::Categorical;
    Val logits;
    Val mix_logits;
    Val means;
    Val log_scales;
};

// Parameter names used by init_params/forward, in layer order.
std::vector<std::string> param_names(const ModelConfig& cfg);

Tensor build_mask(int kh, int kw, MaskKind kind);

Val masked_conv(Val input, Val weights, Val bias, MaskKind kind);

// out = input + (1x1 conv to F/2 -> relu -> masked B 3x3 -> relu -> 1x1 conv to F)
Val residual_block(Val input, Val reduce_w, Val reduce_b, Val conv_w, Val conv_b,
                   Val expand_w, Val expand_b);

ParamSet init_params(const ModelConfig& cfg, uint64_t rng_seed);

// images scaled to [0,1]. dropout_rng must be non-null when training is
// set and dropout_p > 0; evaluation and sampling never drop.
HeadVals forward(Tape& tape, const Tensor& images, const ModelConfig& cfg,
                 const ParamSet& params, bool training, Pcg32* dropout_rng = nullptr);

// forward() on a gradient-free tape, values only.
PixelDistribution forward_infer(const Tensor& images, const ModelConfig& cfg, const ParamSet& params);

// Head parameters for one pixel, in tensor channel order.
struct PixelHead {
    HeadKind kind = HeadKind::Categorical;
    std::vector<float> values; // K logits, or M mix logits + M means + M log scales
};

PixelHead head_at(const PixelDistribution& dist, int n, int y, int x);

} // namespace bridgegen::model
