#include "bridgegen/checks.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <functional>
#include <sstream>

#include "bridgegen/autograd.hpp"
#include "bridgegen/dataset.hpp"
#include "bridgegen/likelihood.hpp"
#include "bridgegen/model.hpp"
#include "bridgegen/rng.hpp"
#include "bridgegen/sampler.hpp"

namespace bridgegen::checks {

namespace {

using model::HeadKind;
using model::MaskKind;
using model::ModelConfig;

Tensor random_tensor(const Shape& s, Pcg32& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t = Tensor::zeros(s);
    for (float& v : t.data) v = static_cast<float>(rng.uniform(lo, hi));
    return t;
}

std::string check_masks() {
    const Tensor a = model::build_mask(3, 3, MaskKind::A);
    const Tensor b = model::build_mask(3, 3, MaskKind::B);
    const float ea[9] = {1, 1, 1, 1, 0, 0, 0, 0, 0};
    const float eb[9] = {1, 1, 1, 1, 1, 0, 0, 0, 0};
    for (int i = 0; i < 9; ++i) {
        if (a.data[static_cast<size_t>(i)] != ea[i]) return "3x3 type A mask wrong at " + std::to_string(i);
        if (b.data[static_cast<size_t>(i)] != eb[i]) return "3x3 type B mask wrong at " + std::to_string(i);
    }
    if (model::build_mask(1, 1, MaskKind::A).data[0] != 0.0f) return "1x1 type A must be 0";
    if (model::build_mask(1, 1, MaskKind::B).data[0] != 1.0f) return "1x1 type B must be 1";
    // A + center indicator = B
    for (auto [kh, kw] : {std::pair{3, 3}, std::pair{5, 7}, std::pair{9, 7}}) {
        const Tensor ma = model::build_mask(kh, kw, MaskKind::A);
        const Tensor mb = model::build_mask(kh, kw, MaskKind::B);
        for (int r = 0; r < kh; ++r)
            for (int c = 0; c < kw; ++c) {
                const float center = (r == (kh - 1) / 2 && c == (kw - 1) / 2) ? 1.0f : 0.0f;
                if (ma.at2(r, c) + center != mb.at2(r, c))
                    return "mask algebra A+center!=B at (" + std::to_string(r) + "," + std::to_string(c) + ")";
            }
    }
    return {};
}

ModelConfig small_config() {
    ModelConfig cfg;
    cfg.image_h = 12;
    cfg.image_w = 24;
    cfg.num_resnet = 1;
    cfg.num_filters = 8;
    cfg.receptive_rows = 2;
    cfg.receptive_cols = 3;
    cfg.dropout_p = 0.0f;
    cfg.head = HeadKind::LogisticMixture;
    cfg.num_components = 1;
    return cfg;
}

ParamSet randomized_params(const ModelConfig& cfg, uint64_t seed) {
    ParamSet params = model::init_params(cfg, seed);
    Pcg32 rng(seed_mix(seed, 0xbead));
    for (float& v : params.at("head.weight").data) v = static_cast<float>(rng.uniform(-0.5, 0.5));
    for (float& v : params.at("head.bias").data) v = static_cast<float>(rng.uniform(-0.5, 0.5));
    return params;
}

std::string check_causality() {
    const ModelConfig cfg = small_config();
    const ParamSet params = randomized_params(cfg, 7);
    const int total = cfg.image_h * cfg.image_w;

    Pcg32 rng(99);
    Tensor base = Tensor::zeros({1, cfg.image_h, cfg.image_w, 1});
    for (float& v : base.data) v = static_cast<float>(rng.uniform(0.0, 1.0));
    const model::PixelDistribution base_dist = model::forward_infer(base, cfg, params);

    for (int j = 0; j < total; ++j) {
        Tensor perturbed = base;
        perturbed.data[static_cast<size_t>(j)] =
            perturbed.data[static_cast<size_t>(j)] > 0.5f ? 0.1f : 0.9f;
        const model::PixelDistribution dist = model::forward_infer(perturbed, cfg, params);
        for (int i = 0; i <= j; ++i) {
            const auto a = model::head_at(base_dist, 0, i / cfg.image_w, i % cfg.image_w);
            const auto b = model::head_at(dist, 0, i / cfg.image_w, i % cfg.image_w);
            if (std::memcmp(a.values.data(), b.values.data(), a.values.size() * sizeof(float)) != 0)
                return "perturbing pixel " + std::to_string(j) + " changed head at pixel " + std::to_string(i);
        }
    }
    return {};
}

std::string check_gradients() {
    // masked taps must stay exactly zero in the gradient
    {
        Pcg32 rng(5);
        Tape tape;
        Val x = tape.input(random_tensor({1, 6, 8, 1}, rng));
        Val w = tape.param("w", random_tensor({3, 3, 1, 4}, rng));
        Val b = tape.param("b", Tensor::zeros({4}));
        Val loss = sum(relu(model::masked_conv(x, w, b, MaskKind::A)));
        const GradMap grads = tape.backward(loss);
        const Tensor mask = model::build_mask(3, 3, MaskKind::A);
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c)
                for (int o = 0; o < 4; ++o)
                    if (mask.at2(r, c) == 0.0f && grads.at("w").at4(r, c, 0, o) != 0.0f)
                        return "masked tap has nonzero gradient";
    }
    // conv kernel gradient vs central differences, f64 evaluation route
    {
        Pcg32 rng(6);
        const Tensor x = random_tensor({1, 5, 7, 2}, rng);
        ParamSet params;
        params["k"] = random_tensor({3, 3, 2, 3}, rng);
        params["b"] = random_tensor({3}, rng);
        auto f = [&](const ParamSet& p) {
            const Tensor& k = p.at("k");
            const Tensor& b = p.at("b");
            double total = 0.0;
            for (int y = 0; y < 5; ++y)
                for (int xx = 0; xx < 7; ++xx)
                    for (int o = 0; o < 3; ++o) {
                        double acc = b.data[static_cast<size_t>(o)];
                        for (int ky = 0; ky < 3; ++ky)
                            for (int kx = 0; kx < 3; ++kx)
                                for (int c = 0; c < 2; ++c) {
                                    const int iy = y + ky - 1, ix = xx + kx - 1;
                                    if (iy < 0 || iy >= 5 || ix < 0 || ix >= 7) continue;
                                    acc += static_cast<double>(x.at4(0, iy, ix, c)) *
                                           static_cast<double>(k.at4(ky, kx, c, o));
                                }
                        total += acc;
                    }
            return total;
        };
        Tape tape;
        Val loss = sum(conv2d_same(tape.input(x), tape.param("k", params["k"]), tape.param("b", params["b"])));
        const GradMap analytic = tape.backward(loss);
        const GradMap fd = finite_diff_gradient(f, params, 1e-3);
        for (const auto& [name, g] : analytic)
            for (size_t i = 0; i < g.data.size(); ++i) {
                const double a = g.data[i], n = fd.at(name).data[i];
                if (std::abs(a) < 1e-6 && std::abs(n) < 1e-6) continue;
                if (std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-8}) > 1e-3)
                    return "conv gradient mismatch on " + name + "[" + std::to_string(i) + "]";
            }
    }
    // fused mixture loss vs central differences through the f64 report path
    {
        Pcg32 rng(8);
        ParamSet params;
        params["lam"] = random_tensor({1, 2, 3, 2}, rng);
        params["mu"] = random_tensor({1, 2, 3, 2}, rng, 0.0, 255.0);
        params["ls"] = random_tensor({1, 2, 3, 2}, rng, 0.5, 3.0);
        std::vector<int> targets = {0, 17, 128, 200, 254, 255};
        auto f = [&](const ParamSet& p) {
            model::PixelDistribution d;
            d.kind = HeadKind::LogisticMixture;
            d.mix_logits = p.at("lam");
            d.means = p.at("mu");
            d.log_scales = p.at("ls");
            return likelihood::mixture_nll(d, targets).total_nats;
        };
        Tape tape;
        Val loss = likelihood::mixture_nll_loss(tape.param("lam", params["lam"]), tape.param("mu", params["mu"]),
                                                tape.param("ls", params["ls"]), targets);
        const GradMap analytic = tape.backward(loss);
        const GradMap fd = finite_diff_gradient(f, params, 1e-3);
        for (const auto& [name, g] : analytic)
            for (size_t i = 0; i < g.data.size(); ++i) {
                const double a = g.data[i], n = fd.at(name).data[i];
                if (std::abs(a) < 1e-6 && std::abs(n) < 1e-6) continue;
                if (std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-8}) > 1e-3)
                    return "mixture gradient mismatch on " + name + "[" + std::to_string(i) + "]";
            }
    }
    return {};
}

std::string check_pmf() {
    Pcg32 rng(11);
    for (int trial = 0; trial < 1000; ++trial) {
        const double mu = rng.uniform(-50.0, 305.0);
        const double s = rng.uniform(0.05, 100.0);
        double total = 0.0;
        for (int v = 0; v < 256; ++v) {
            const double p = likelihood::dlm_pmf(mu, std::log(s), v);
            if (!(p >= 0.0)) return "negative pmf value";
            total += p;
        }
        if (std::abs(total - 1.0) > 1e-6)
            return "pmf sum " + std::to_string(total) + " for mu=" + std::to_string(mu) + " s=" + std::to_string(s);
    }
    for (int trial = 0; trial < 50; ++trial) {
        const double ls = rng.uniform(std::log(0.1), std::log(60.0));
        for (int v = 0; v < 128; ++v) {
            const double p1 = likelihood::dlm_pmf(127.5, ls, v);
            const double p2 = likelihood::dlm_pmf(127.5, ls, 255 - v);
            if (std::abs(p1 - p2) > 1e-9) return "pmf symmetry about the mean broken";
        }
    }
    return {};
}

std::string check_pgm() {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "bridgegen_check_pgm";
    fs::create_directories(dir);
    Pcg32 rng(13);
    for (int trial = 0; trial < 20; ++trial) {
        dataset::RasterImage img = dataset::RasterImage::blank(17 + trial, 9 + trial % 5);
        for (auto& p : img.pixels) p = static_cast<uint8_t>(rng.uniform_int(0, 255));
        const fs::path path = dir / "roundtrip.pgm";
        dataset::write_pgm(path, img);
        const dataset::RasterImage back = dataset::read_pgm(path);
        if (back.width != img.width || back.height != img.height || back.pixels != img.pixels)
            return "round trip not bit-identical";
    }
    // truncation must be reported
    {
        const fs::path path = dir / "trunc.pgm";
        dataset::RasterImage img = dataset::RasterImage::blank(8, 8);
        dataset::write_pgm(path, img);
        fs::resize_file(path, fs::file_size(path) - 10);
        try {
            dataset::read_pgm(path);
            return "truncated file accepted";
        } catch (const std::exception&) {
        }
    }
    fs::remove_all(dir);
    return {};
}

std::string check_fast_sampler() {
    const ModelConfig cfg = small_config();
    const ParamSet params = randomized_params(cfg, 21);
    Pcg32 rng_a(1234), rng_b(1234);
    const dataset::RasterImage slow =
        sampler::sample_image(cfg, params, sampler::DrawOptions{1.0, nullptr, 0, false}, rng_a);
    const dataset::RasterImage fast =
        sampler::sample_image(cfg, params, sampler::DrawOptions{1.0, nullptr, 0, true}, rng_b);
    if (slow.pixels != fast.pixels) return "fast and naive sampling disagree";
    return {};
}

bool report(std::ostream& out, const char* name, const std::string& err) {
    if (err.empty()) {
        out << "PASS " << name << "\n";
        return true;
    }
    out << "FAIL " << name << ": " << err << "\n";
    return false;
}

} // namespace

bool run_self_checks(std::ostream& out) {
    bool ok = true;
    ok &= report(out, "mask-construction", check_masks());
    ok &= report(out, "autoregressive-causality", check_causality());
    ok &= report(out, "gradient-check", check_gradients());
    ok &= report(out, "pmf-normalization", check_pmf());
    ok &= report(out, "pgm-roundtrip", check_pgm());
    ok &= report(out, "fast-sampler-equivalence", check_fast_sampler());
    return ok;
}

} // namespace bridgegen::checks
