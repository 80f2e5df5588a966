#pragma once

#include <cstdint>
#include <vector>

#include "bridgegen/autograd.hpp"
#include "bridgegen/model.hpp"
#include "bridgegen/rng.hpp"

namespace bridgegen::likelihood {

// K contiguous intervals over 0..255, widths differing by at most one.
struct QuantizerConfig {
    int num_bins = 256;

    void validate() const;
};

int quantize(int value, const QuantizerConfig& cfg);
int dequantize(int bin, const QuantizerConfig& cfg); // rounded bin midpoint

struct NllReport {
    double total_nats = 0.0;
    int64_t pixel_count = 0;
    double bits_per_dim = 0.0;
};

NllReport make_report(double total_nats, int64_t pixel_count);

// ---- categorical head ------------------------------------------------------

// targets are bin indices in raster order matching logits [N,H,W,K]
NllReport categorical_nll(const Tensor& logits, const std::vector<int>& targets);

// scalar tape node holding total nats; gradient is softmax minus one-hot
Val categorical_nll_loss(Val logits, const std::vector<int>& targets);

// ---- discretized logistic mixture ------------------------------------------

// log probability of integer value v under a logistic with mean mu and
// scale exp(log_s), integrated over the unit bin; edge bins run to +-inf
double dlm_log_pmf(double mu, double log_s, int v);
double dlm_pmf(double mu, double log_s, int v);

// dist must carry the LogisticMixture head; targets are raw 0..255 values
NllReport mixture_nll(const model::PixelDistribution& dist, const std::vector<int>& targets);

Val mixture_nll_loss(Val mix_logits, Val means, Val log_scales, const std::vector<int>& targets);

// ---- sampling ----------------------------------------------------------------

// Draws a pixel value 0..255 from one pixel's head parameters. temperature 0
// decodes the argmax (ties resolve to the lowest value). The categorical head
// needs the quantizer to map the sampled bin back to a pixel value.
int sample_pixel(const model::PixelHead& head, double temperature, Pcg32& rng,
                 const QuantizerConfig& quant);

// 256-entry pmf materialized from one pixel's head (after temperature).
std::vector<double> pixel_pmf(const model::PixelHead& head, double temperature,
                              const QuantizerConfig& quant);

} // namespace bridgegen::likelihood
