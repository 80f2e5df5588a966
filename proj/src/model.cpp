#include "bridgegen/model.hpp"

#include <cmath>
#include <stdexcept>

namespace bridgegen::model {

void ModelConfig::validate() const {
    if (channels != 1) throw std::invalid_argument("ModelConfig: only single-channel images supported");
    if (image_h < 1 || image_w < 1) throw std::invalid_argument("ModelConfig: image dims must be positive");
    if (receptive_rows < 1) throw std::invalid_argument("ModelConfig: receptive_rows must be >= 1");
    if (receptive_cols % 2 == 0) throw std::invalid_argument("ModelConfig: receptive_cols must be odd");
    if (num_filters < 2 || num_filters % 2 != 0)
        throw std::invalid_argument("ModelConfig: num_filters must be even (residual blocks halve it)");
    if (head == HeadKind::Categorical && (num_categories < 2 || num_categories > 256))
        throw std::invalid_argument("ModelConfig: num_categories must be in 2..256");
    if (head == HeadKind::LogisticMixture && (num_components < 1 || num_components > 128))
        throw std::invalid_argument("ModelConfig: num_components must be in 1..128");
    if (dropout_p < 0.0f || dropout_p >= 1.0f)
        throw std::invalid_argument("ModelConfig: dropout_p must be in [0,1)");
}

int PixelDistribution::batch() const {
    return kind == HeadKind::Categorical ? logits.shape[0] : means.shape[0];
}

Tensor build_mask(int kh, int kw, MaskKind kind) {
    if (kh % 2 == 0 || kw % 2 == 0)
        throw std::invalid_argument("build_mask: dims must be odd, got (" + std::to_string(kh) + "," +
                                    std::to_string(kw) + ")");
    Tensor m = Tensor::zeros({kh, kw});
    const int cr = (kh - 1) / 2;
    const int cc = (kw - 1) / 2;
    for (int r = 0; r < kh; ++r)
        for (int c = 0; c < kw; ++c) {
            const bool before = r < cr || (r == cr && c < cc);
            const bool center = r == cr && c == cc;
            if (before || (center && kind == MaskKind::B)) m.at2(r, c) = 1.0f;
        }
    return m;
}

namespace {

// mask expanded to the kernel layout [kh,kw,Ci,Co]
Tensor expand_mask(const Tensor& mask, int ci, int co) {
    const int kh = mask.shape[0], kw = mask.shape[1];
    Tensor out = Tensor::zeros({kh, kw, ci, co});
    for (int r = 0; r < kh; ++r)
        for (int c = 0; c < kw; ++c) {
            const float v = mask.at2(r, c);
            for (int i = 0; i < ci; ++i)
                for (int o = 0; o < co; ++o) out.at4(r, c, i, o) = v;
        }
    return out;
}

std::string block_prefix(int i) { return "block" + std::to_string(i) + "."; }

} // namespace

Val masked_conv(Val input, Val weights, Val bias, MaskKind kind) {
    const Shape& ks = weights.shape();
    if (ks.size() != 4) throw std::invalid_argument("masked_conv: kernel must be rank 4");
    Tensor mask = expand_mask(build_mask(ks[0], ks[1], kind), ks[2], ks[3]);
    Val masked = mul(weights, input.tape->constant(std::move(mask)));
    return conv2d_same(input, masked, bias);
}

Val residual_block(Val input, Val reduce_w, Val reduce_b, Val conv_w, Val conv_b,
                   Val expand_w, Val expand_b) {
    const int f = input.shape().back();
    if (f % 2 != 0) throw std::invalid_argument("residual_block: channel count must be even, got " + std::to_string(f));
    Val h = conv2d_same(input, reduce_w, reduce_b);
    h = relu(h);
    h = masked_conv(h, conv_w, conv_b, MaskKind::B);
    h = relu(h);
    h = conv2d_same(h, expand_w, expand_b);
    return add(input, h);
}

std::vector<std::string> param_names(const ModelConfig& cfg) {
    std::vector<std::string> names;
    names.push_back("conv_in.weight");
    names.push_back("conv_in.bias");
    for (int i = 0; i < cfg.num_resnet; ++i) {
        const std::string p = block_prefix(i);
        names.push_back(p + "reduce.weight");
        names.push_back(p + "reduce.bias");
        names.push_back(p + "conv.weight");
        names.push_back(p + "conv.bias");
        names.push_back(p + "expand.weight");
        names.push_back(p + "expand.bias");
    }
    names.push_back("post1.weight");
    names.push_back("post1.bias");
    names.push_back("post2.weight");
    names.push_back("post2.bias");
    names.push_back("head.weight");
    names.push_back("head.bias");
    return names;
}

namespace {

struct ConvSpec {
    int kh, kw, ci, co;
    std::optional<MaskKind> mask;
    bool zero_init = false;
};

ConvSpec conv_spec_for(const ModelConfig& cfg, const std::string& name) {
    const int f = cfg.num_filters;
    if (name == "conv_in") return {2 * cfg.receptive_rows - 1, cfg.receptive_cols, cfg.channels, f, MaskKind::A};
    if (name.find("reduce") != std::string::npos) return {1, 1, f, f / 2, std::nullopt};
    if (name.find("conv") != std::string::npos) return {3, 3, f / 2, f / 2, MaskKind::B};
    if (name.find("expand") != std::string::npos) return {1, 1, f / 2, f, std::nullopt};
    if (name == "post1" || name == "post2") return {1, 1, f, f, std::nullopt};
    if (name == "head") return {1, 1, f, cfg.head_channels(), std::nullopt, true};
    throw std::logic_error("conv_spec_for: unknown layer " + name);
}

} // namespace

ParamSet init_params(const ModelConfig& cfg, uint64_t rng_seed) {
    cfg.validate();
    ParamSet params;
    for (const std::string& n : param_names(cfg)) {
        const std::string layer = n.substr(0, n.rfind('.'));
        const ConvSpec cs = conv_spec_for(cfg, layer);
        if (n.ends_with(".bias")) {
            params[n] = Tensor::zeros({cs.co});
            continue;
        }
        Tensor w = Tensor::zeros({cs.kh, cs.kw, cs.ci, cs.co});
        if (!cs.zero_init) {
            Tensor mask = cs.mask ? build_mask(cs.kh, cs.kw, *cs.mask) : Tensor::full({cs.kh, cs.kw}, 1.0f);
            double visible = 0.0;
            for (float v : mask.data) visible += v;
            const double bound = std::sqrt(6.0 / (visible * cs.ci));
            // one rng stream per tensor so layer order and mask pattern
            // cannot perturb each other's draws
            Pcg32 rng(seed_mix(rng_seed, std::hash<std::string>{}(n)));
            for (int r = 0; r < cs.kh; ++r)
                for (int c = 0; c < cs.kw; ++c) {
                    const bool vis = mask.at2(r, c) > 0.0f;
                    for (int i = 0; i < cs.ci; ++i)
                        for (int o = 0; o < cs.co; ++o) {
                            const double draw = rng.uniform(-bound, bound);
                            if (vis) w.at4(r, c, i, o) = static_cast<float>(draw);
                        }
                }
        }
        params[n] = std::move(w);
    }
    return params;
}

namespace {

Val pick(Tape& tape, const ParamSet& params, const std::string& name,
         std::map<std::string, Val>& leased) {
    auto it = leased.find(name);
    if (it != leased.end()) return it->second;
    auto p = params.find(name);
    if (p == params.end()) throw std::invalid_argument("forward: missing parameter " + name);
    Val v = tape.param(name, p->second);
    leased.emplace(name, v);
    return v;
}

Val dropout(Tape& tape, Val x, float p, Pcg32& rng) {
    Tensor mask = Tensor::zeros(x.shape());
    const double keep = 1.0 - static_cast<double>(p);
    for (float& v : mask.data) v = rng.next_unit() < p ? 0.0f : static_cast<float>(1.0 / keep);
    return mul(x, tape.constant(std::move(mask)));
}

} // namespace

HeadVals forward(Tape& tape, const Tensor& images, const ModelConfig& cfg,
                 const ParamSet& params, bool training, Pcg32* dropout_rng) {
    cfg.validate();
    if (images.rank() != 4 || images.shape[1] != cfg.image_h || images.shape[2] != cfg.image_w ||
        images.shape[3] != cfg.channels)
        throw std::invalid_argument("forward: image shape " + shape_str(images.shape) + " does not match config (" +
                                    std::to_string(cfg.image_h) + "," + std::to_string(cfg.image_w) + "," +
                                    std::to_string(cfg.channels) + ")");
    const bool drop = training && cfg.dropout_p > 0.0f;
    if (drop && dropout_rng == nullptr)
        throw std::invalid_argument("forward: training with dropout requires an rng");

    // every parameter is leased onto the tape so unused ones still report
    // zero gradients
    std::map<std::string, Val> leased;
    for (const std::string& n : param_names(cfg)) pick(tape, params, n, leased);

    Val x = tape.input(images);
    Val h = masked_conv(x, leased.at("conv_in.weight"), leased.at("conv_in.bias"), MaskKind::A);
    for (int i = 0; i < cfg.num_resnet; ++i) {
        const std::string p = "block" + std::to_string(i) + ".";
        h = residual_block(h, leased.at(p + "reduce.weight"), leased.at(p + "reduce.bias"),
                           leased.at(p + "conv.weight"), leased.at(p + "conv.bias"),
                           leased.at(p + "expand.weight"), leased.at(p + "expand.bias"));
        if (drop) h = dropout(tape, h, cfg.dropout_p, *dropout_rng);
    }
    h = relu(conv2d_same(h, leased.at("post1.weight"), leased.at("post1.bias")));
    h = relu(conv2d_same(h, leased.at("post2.weight"), leased.at("post2.bias")));
    Val raw = conv2d_same(h, leased.at("head.weight"), leased.at("head.bias"));

    HeadVals out;
    out.kind = cfg.head;
    if (cfg.head == HeadKind::Categorical) {
        out.logits = raw;
    } else {
        const int m = cfg.num_components;
        out.mix_logits = channel_slice(raw, 0, m);
        out.means = affine(channel_slice(raw, m, 2 * m), 127.5, 127.5);
        out.log_scales = clamp_min(affine(channel_slice(raw, 2 * m, 3 * m), 1.0, kLogScaleShift), kLogScaleFloor);
    }
    return out;
}

PixelDistribution forward_infer(const Tensor& images, const ModelConfig& cfg, const ParamSet& params) {
    Tape tape(false);
    HeadVals hv = forward(tape, images, cfg, params, false, nullptr);
    PixelDistribution out;
    out.kind = hv.kind;
    if (hv.kind == HeadKind::Categorical) {
        out.logits = hv.logits.value();
    } else {
        out.mix_logits = hv.mix_logits.value();
        out.means = hv.means.value();
        out.log_scales = hv.log_scales.value();
    }
    return out;
}

PixelHead head_at(const PixelDistribution& dist, int n, int y, int x) {
    PixelHead out;
    out.kind = dist.kind;
    if (dist.kind == HeadKind::Categorical) {
        const int k = dist.logits.shape[3];
        out.values.resize(static_cast<size_t>(k));
        for (int c = 0; c < k; ++c) out.values[static_cast<size_t>(c)] = dist.logits.at4(n, y, x, c);
    } else {
        const int m = dist.means.shape[3];
        out.values.resize(static_cast<size_t>(3 * m));
        for (int c = 0; c < m; ++c) {
            out.values[static_cast<size_t>(c)] = dist.mix_logits.at4(n, y, x, c);
            out.values[static_cast<size_t>(m + c)] = dist.means.at4(n, y, x, c);
            out.values[static_cast<size_t>(2 * m + c)] = dist.log_scales.at4(n, y, x, c);
        }
    }
    return out;
}

} // namespace bridgegen::model
