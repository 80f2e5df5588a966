#include "bridgegen/sampler.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace bridgegen::sampler {

namespace {

uint64_t fnv1a(const uint8_t* data, size_t n) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (size_t i = 0; i < n; ++i) {
        h ^= data[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

Tensor premask(const Tensor& w, model::MaskKind kind) {
    const Tensor m = model::build_mask(w.shape[0], w.shape[1], kind);
    Tensor expanded = Tensor::zeros(w.shape);
    for (int r = 0; r < w.shape[0]; ++r)
        for (int c = 0; c < w.shape[1]; ++c)
            for (int i = 0; i < w.shape[2]; ++i)
                for (int o = 0; o < w.shape[3]; ++o) expanded.at4(r, c, i, o) = m.at2(r, c);
    return mul(w, expanded);
}

} // namespace

SamplerCache::SamplerCache(const model::ModelConfig& cfg, const ParamSet& params) : cfg_(cfg) {
    cfg_.validate();
    auto get = [&](const std::string& n) -> const Tensor& {
        auto it = params.find(n);
        if (it == params.end()) throw std::invalid_argument("SamplerCache: missing parameter " + n);
        return it->second;
    };
    conv_in_w_ = premask(get("conv_in.weight"), model::MaskKind::A);
    conv_in_b_ = get("conv_in.bias");
    for (int i = 0; i < cfg_.num_resnet; ++i) {
        const std::string p = "block" + std::to_string(i) + ".";
        BlockParams bp;
        bp.reduce_w = get(p + "reduce.weight");
        bp.reduce_b = get(p + "reduce.bias");
        bp.conv_w = premask(get(p + "conv.weight"), model::MaskKind::B);
        bp.conv_b = get(p + "conv.bias");
        bp.expand_w = get(p + "expand.weight");
        bp.expand_b = get(p + "expand.bias");
        blocks_.push_back(std::move(bp));
    }
    post1_w_ = get("post1.weight");
    post1_b_ = get("post1.bias");
    post2_w_ = get("post2.weight");
    post2_b_ = get("post2.bias");
    head_w_ = get("head.weight");
    head_b_ = get("head.bias");

    const int h = cfg_.image_h, w = cfg_.image_w, f = cfg_.num_filters;
    input_ = Tensor::zeros({1, h, w, 1});
    l0_ = Tensor::zeros({1, h, w, f});
    bufs_.resize(static_cast<size_t>(cfg_.num_resnet));
    for (auto& b : bufs_) {
        b.t1 = Tensor::zeros({1, h, w, f / 2});
        b.t2 = Tensor::zeros({1, h, w, f / 2});
        b.t3 = Tensor::zeros({1, h, w, f / 2});
        b.t4 = Tensor::zeros({1, h, w, f / 2});
        b.t5 = Tensor::zeros({1, h, w, f});
        b.out = Tensor::zeros({1, h, w, f});
    }
    p1_ = Tensor::zeros({1, h, w, f});
    p1r_ = Tensor::zeros({1, h, w, f});
    p2_ = Tensor::zeros({1, h, w, f});
    p2r_ = Tensor::zeros({1, h, w, f});
    head_raw_ = Tensor::zeros({1, h, w, cfg_.head_channels()});
}

void SamplerCache::recompute(Rect r) {
    const int h = cfg_.image_h, w = cfg_.image_w;
    auto clip = [&](Rect q) {
        q.y0 = std::max(0, q.y0);
        q.x0 = std::max(0, q.x0);
        q.y1 = std::min(h, q.y1);
        q.x1 = std::min(w, q.x1);
        return q;
    };
    auto dilate = [&](Rect q, int dy, int dx) {
        return clip(Rect{q.y0 - dy, q.y1 + dy, q.x0 - dx, q.x1 + dx});
    };
    auto conv_region = [&](const Tensor& in, const Tensor& kw, const Tensor& kb, Tensor& out, Rect q) {
        for (int y = q.y0; y < q.y1; ++y)
            for (int x = q.x0; x < q.x1; ++x) conv_accum_at(in, kw, kb, 0, y, x, &out.at4(0, y, x, 0));
    };
    auto relu_region = [&](const Tensor& in, Tensor& out, Rect q, int ch) {
        for (int y = q.y0; y < q.y1; ++y)
            for (int x = q.x0; x < q.x1; ++x)
                for (int c = 0; c < ch; ++c) out.at4(0, y, x, c) = relu_scalar(in.at4(0, y, x, c));
    };

    r = clip(r);
    if (r.empty()) return;

    // first layer dilates by its kernel radius, each residual 3x3 by one
    Rect cur = dilate(r, cfg_.receptive_rows - 1, (cfg_.receptive_cols - 1) / 2);
    conv_region(input_, conv_in_w_, conv_in_b_, l0_, cur);

    const int f = cfg_.num_filters;
    const Tensor* prev = &l0_;
    for (size_t i = 0; i < bufs_.size(); ++i) {
        BlockBufs& b = bufs_[i];
        const BlockParams& bp = blocks_[i];
        conv_region(*prev, bp.reduce_w, bp.reduce_b, b.t1, cur);
        relu_region(b.t1, b.t2, cur, f / 2);
        cur = dilate(cur, 1, 1);
        conv_region(b.t2, bp.conv_w, bp.conv_b, b.t3, cur);
        relu_region(b.t3, b.t4, cur, f / 2);
        conv_region(b.t4, bp.expand_w, bp.expand_b, b.t5, cur);
        for (int y = cur.y0; y < cur.y1; ++y)
            for (int x = cur.x0; x < cur.x1; ++x)
                for (int c = 0; c < f; ++c)
                    b.out.at4(0, y, x, c) =
                        static_cast<float>(static_cast<double>(prev->at4(0, y, x, c)) +
                                           static_cast<double>(b.t5.at4(0, y, x, c)));
        prev = &b.out;
    }
    conv_region(*prev, post1_w_, post1_b_, p1_, cur);
    relu_region(p1_, p1r_, cur, f);
    conv_region(p1r_, post2_w_, post2_b_, p2_, cur);
    relu_region(p2_, p2r_, cur, f);
    conv_region(p2r_, head_w_, head_b_, head_raw_, cur);
}

void SamplerCache::prime(const dataset::RasterImage& canvas) {
    canvas_copy_ = canvas;
    for (size_t i = 0; i < canvas.pixels.size(); ++i) input_.data[i] = unit_from_u8(canvas.pixels[i]);
    recompute(Rect{0, cfg_.image_h, 0, cfg_.image_w});
    primed_ = true;
}

void SamplerCache::absorb(const dataset::RasterImage& canvas, int upto) {
    // diff against the stored copy; changed pixels behind the frontier are the
    // caller's bug, ahead of it they are new content to fold in
    Rect changed{cfg_.image_h, 0, cfg_.image_w, 0};
    bool any = false;
    for (size_t i = static_cast<size_t>(frontier_); i < canvas.pixels.size(); ++i) {
        if (canvas.pixels[i] == canvas_copy_.pixels[i]) continue;
        const int y = static_cast<int>(i) / cfg_.image_w;
        const int x = static_cast<int>(i) % cfg_.image_w;
        changed.y0 = std::min(changed.y0, y);
        changed.y1 = std::max(changed.y1, y + 1);
        changed.x0 = std::min(changed.x0, x);
        changed.x1 = std::max(changed.x1, x + 1);
        canvas_copy_.pixels[i] = canvas.pixels[i];
        input_.data[i] = unit_from_u8(canvas.pixels[i]);
        any = true;
    }
    if (any) recompute(changed);
    frontier_ = std::max(frontier_, upto);
    prefix_hash_ = fnv1a(canvas_copy_.pixels.data(), static_cast<size_t>(frontier_));
}

model::PixelHead SamplerCache::head_at(int y, int x) const {
    model::PixelHead out;
    out.kind = cfg_.head;
    const int ch = cfg_.head_channels();
    if (cfg_.head == model::HeadKind::Categorical) {
        out.values.resize(static_cast<size_t>(ch));
        for (int c = 0; c < ch; ++c) out.values[static_cast<size_t>(c)] = head_raw_.at4(0, y, x, c);
    } else {
        const int m = cfg_.num_components;
        out.values.resize(static_cast<size_t>(3 * m));
        for (int c = 0; c < m; ++c) {
            out.values[static_cast<size_t>(c)] = head_raw_.at4(0, y, x, c);
            out.values[static_cast<size_t>(m + c)] = model::dlm_mean_from_raw(head_raw_.at4(0, y, x, m + c));
            out.values[static_cast<size_t>(2 * m + c)] =
                model::dlm_log_scale_from_raw(head_raw_.at4(0, y, x, 2 * m + c));
        }
    }
    return out;
}

model::PixelHead fast_forward_at(const dataset::RasterImage& canvas, int pixel_index, SamplerCache& cache) {
    const model::ModelConfig& cfg = cache.config();
    if (canvas.height != cfg.image_h || canvas.width != cfg.image_w)
        throw std::invalid_argument("fast_forward_at: canvas " + std::to_string(canvas.width) + "x" +
                                    std::to_string(canvas.height) + " does not match model");
    const int total = cfg.image_h * cfg.image_w;
    if (pixel_index < 0 || pixel_index >= total)
        throw std::out_of_range("fast_forward_at: pixel_index outside the canvas");

    if (!cache.primed_) {
        cache.prime(canvas);
        cache.frontier_ = pixel_index;
        cache.prefix_hash_ = fnv1a(canvas.pixels.data(), static_cast<size_t>(pixel_index));
    } else {
        const int prefix = std::min(cache.frontier_, pixel_index);
        if (fnv1a(canvas.pixels.data(), static_cast<size_t>(prefix)) !=
            fnv1a(cache.canvas_copy_.pixels.data(), static_cast<size_t>(prefix)))
            throw std::runtime_error("fast_forward_at: stale cache, canvas prefix hash mismatch before pixel " +
                                     std::to_string(prefix));
        cache.absorb(canvas, pixel_index);
    }
    return cache.head_at(pixel_index / cfg.image_w, pixel_index % cfg.image_w);
}

// ---- generation -------------------------------------------------------------------

dataset::RasterImage sample_image(const model::ModelConfig& cfg, const ParamSet& params,
                                  const DrawOptions& opts, Pcg32& rng) {
    cfg.validate();
    if (opts.seed_rows < 0 || opts.seed_rows > cfg.image_h)
        throw std::invalid_argument("sample_image: seed_region rows " + std::to_string(opts.seed_rows) +
                                    " exceed image height " + std::to_string(cfg.image_h));
    if (opts.seed_rows > 0 && opts.seed == nullptr)
        throw std::invalid_argument("sample_image: seed_rows set without a seed image");

    dataset::RasterImage canvas = dataset::RasterImage::blank(cfg.image_w, cfg.image_h, 0);
    if (opts.seed != nullptr) {
        if (opts.seed->width != cfg.image_w || opts.seed->height != cfg.image_h)
            throw std::invalid_argument("sample_image: seed image dims do not match model");
        canvas = *opts.seed;
    }

    const likelihood::QuantizerConfig quant{cfg.head == model::HeadKind::Categorical ? cfg.num_categories : 256};
    const int start = opts.seed_rows * cfg.image_w;
    const int total = cfg.image_h * cfg.image_w;

    if (opts.fast_mode) {
        SamplerCache cache(cfg, params);
        for (int p = start; p < total; ++p) {
            const model::PixelHead head = fast_forward_at(canvas, p, cache);
            canvas.pixels[static_cast<size_t>(p)] =
                static_cast<uint8_t>(likelihood::sample_pixel(head, opts.temperature, rng, quant));
        }
        return canvas;
    }

    Tensor input = Tensor::zeros({1, cfg.image_h, cfg.image_w, 1});
    for (int p = start; p < total; ++p) {
        for (size_t i = 0; i < canvas.pixels.size(); ++i) input.data[i] = unit_from_u8(canvas.pixels[i]);
        const model::PixelDistribution dist = model::forward_infer(input, cfg, params);
        const model::PixelHead head = model::head_at(dist, 0, p / cfg.image_w, p % cfg.image_w);
        canvas.pixels[static_cast<size_t>(p)] =
            static_cast<uint8_t>(likelihood::sample_pixel(head, opts.temperature, rng, quant));
    }
    return canvas;
}

namespace {

double mean_l1(const dataset::RasterImage& a, const dataset::RasterImage& b) {
    double acc = 0.0;
    for (size_t i = 0; i < a.pixels.size(); ++i)
        acc += std::abs(static_cast<double>(a.pixels[i]) - static_cast<double>(b.pixels[i]));
    return acc / static_cast<double>(a.pixels.size());
}

} // namespace

SampleRunResult run_sample(const SampleConfig& cfg) {
    if (cfg.count < 1) throw std::invalid_argument("run_sample: count must be >= 1");
    if (cfg.temperature < 0.0) throw std::invalid_argument("run_sample: temperature must be >= 0");
    const training::Checkpoint ckpt = training::load_checkpoint(cfg.checkpoint);

    dataset::RasterImage seed;
    DrawOptions opts;
    opts.temperature = cfg.temperature;
    opts.fast_mode = cfg.fast_mode;
    if (!cfg.seed_image.empty()) {
        seed = dataset::read_pgm(cfg.seed_image);
        opts.seed = &seed;
        opts.seed_rows = cfg.seed_rows;
    }

    std::optional<dataset::LoadedDataset> train_data;
    if (!cfg.train_data_dir.empty()) train_data = dataset::load_dataset(cfg.train_data_dir);

    std::filesystem::create_directories(cfg.out_dir);
    SampleRunResult result;
    for (int i = 0; i < cfg.count; ++i) {
        const uint64_t image_seed = seed_mix(cfg.rng_seed, static_cast<uint64_t>(i));
        Pcg32 rng(image_seed);
        const dataset::RasterImage img = sample_image(ckpt.config, ckpt.params, opts, rng);

        char name[32];
        std::snprintf(name, sizeof(name), "sample_%03d.pgm", i);
        dataset::write_pgm(cfg.out_dir / name, img);
        result.files.emplace_back(name);
        result.seeds.push_back(image_seed);

        std::optional<double> nearest;
        if (train_data && !train_data->images.empty() &&
            train_data->images[0].width == img.width && train_data->images[0].height == img.height) {
            double best = 1e300;
            for (const auto& t : train_data->images) best = std::min(best, mean_l1(img, t));
            nearest = best;
        }
        result.nearest_train_l1.push_back(nearest);
    }

    nlohmann::json j;
    j["checkpoint"] = cfg.checkpoint.string();
    j["temperature"] = cfg.temperature;
    j["seeds"] = result.seeds;
    j["files"] = result.files;
    nlohmann::json l1 = nlohmann::json::array();
    for (const auto& v : result.nearest_train_l1) {
        if (v) l1.push_back(*v);
        else l1.push_back(nullptr);
    }
    j["nearest_train_l1"] = l1;
    std::ofstream out(cfg.out_dir / "run_manifest.json", std::ios::binary);
    if (!out) throw std::runtime_error("run_sample: cannot write run manifest");
    out << j.dump(2) << "\n";
    return result;
}

} // namespace bridgegen::sampler
