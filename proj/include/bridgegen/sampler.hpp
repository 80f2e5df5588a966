#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "bridgegen/dataset.hpp"
#include "bridgegen/likelihood.hpp"
#include "bridgegen/model.hpp"
#include "bridgegen/rng.hpp"
#include "bridgegen/training.hpp"

namespace bridgegen::sampler {

struct SampleConfig {
    std::filesystem::path checkpoint;
    int count = 1;
    double temperature = 1.0;
    uint64_t rng_seed = 0;
    std::filesystem::path seed_image; // optional; top seed_rows rows are kept
    int seed_rows = 0;
    std::filesystem::path out_dir;
    bool fast_mode = false;
    std::filesystem::path train_data_dir; // optional, enables nearest-train-image hint
};

// Incremental forward state for one canvas. Holds per-layer activation
// buffers plus a copy of the canvas; once a prefix has been consumed it must
// not change (detected via a prefix hash).
class SamplerCache {
public:
    SamplerCache(const model::ModelConfig& cfg, const ParamSet& params);

    const model::ModelConfig& config() const { return cfg_; }

    bool primed() const { return primed_; }
    int frontier() const { return frontier_; }

private:
    friend model::PixelHead fast_forward_at(const dataset::RasterImage& canvas, int pixel_index,
                                            SamplerCache& cache);

    struct Rect {
        int y0, y1, x0, x1; // half-open
        bool empty() const { return y0 >= y1 || x0 >= x1; }
    };

    void prime(const dataset::RasterImage& canvas);
    void absorb(const dataset::RasterImage& canvas, int upto);
    void recompute(Rect changed);
    model::PixelHead head_at(int y, int x) const;

    model::ModelConfig cfg_;
    Tensor conv_in_w_, conv_in_b_; // pre-masked
    struct BlockParams {
        Tensor reduce_w, reduce_b, conv_w, conv_b, expand_w, expand_b; // conv_w pre-masked
    };
    std::vector<BlockParams> blocks_;
    Tensor post1_w_, post1_b_, post2_w_, post2_b_, head_w_, head_b_;

    Tensor input_; // [1,H,W,1], unit scale
    Tensor l0_;
    struct BlockBufs {
        Tensor t1, t2, t3, t4, t5, out;
    };
    std::vector<BlockBufs> bufs_;
    Tensor p1_, p1r_, p2_, p2r_, head_raw_;

    dataset::RasterImage canvas_copy_;
    bool primed_ = false;
    int frontier_ = 0;
    uint64_t prefix_hash_ = 0;
};

// Head parameters at pixel_index, bit-identical to a full forward pass over
// the same canvas; only activations whose receptive field covers changed
// pixels are recomputed. Rejects canvases whose already-consumed prefix
// changed since the last call.
model::PixelHead fast_forward_at(const dataset::RasterImage& canvas, int pixel_index, SamplerCache& cache);

struct DrawOptions {
    double temperature = 1.0;
    const dataset::RasterImage* seed = nullptr; // optional
    int seed_rows = 0;
    bool fast_mode = false;
};

// Raster-order pixel-by-pixel generation. Strictly sequential; pixels in the
// seed region are never overwritten.
dataset::RasterImage sample_image(const model::ModelConfig& cfg, const ParamSet& params,
                                  const DrawOptions& opts, Pcg32& rng);

struct SampleRunResult {
    std::vector<std::string> files;
    std::vector<uint64_t> seeds;
    std::vector<std::optional<double>> nearest_train_l1;
};

// CLI-level entry: loads the checkpoint, writes count PGMs plus run_manifest.json.
SampleRunResult run_sample(const SampleConfig& cfg);

} // namespace bridgegen::sampler
