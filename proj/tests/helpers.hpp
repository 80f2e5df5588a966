#pragma once

// Test-only oracles, independent of the library implementation path:
// a 6-nested-loop convolution and an f64 reference network used as the
// target of finite-difference gradient checks.

#include <cmath>
#include <stdexcept>
#include <vector>

#include "bridgegen/model.hpp"
#include "bridgegen/rng.hpp"
#include "bridgegen/tensor.hpp"

namespace oracle {

using bridgegen::ParamSet;
using bridgegen::Pcg32;
using bridgegen::Shape;
using bridgegen::Tensor;

inline Tensor random_tensor(const Shape& s, Pcg32& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t = Tensor::zeros(s);
    for (float& v : t.data) v = static_cast<float>(rng.uniform(lo, hi));
    return t;
}

// brute-force same-padded convolution, all loops explicit
inline Tensor naive_conv2d_same(const Tensor& in, const Tensor& k, const Tensor& b) {
    const int nb = in.shape[0], h = in.shape[1], w = in.shape[2], ci = in.shape[3];
    const int kh = k.shape[0], kw = k.shape[1], co = k.shape[3];
    Tensor out = Tensor::zeros({nb, h, w, co});
    for (int n = 0; n < nb; ++n)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int o = 0; o < co; ++o) {
                    double acc = b.data[static_cast<size_t>(o)];
                    for (int ky = 0; ky < kh; ++ky)
                        for (int kx = 0; kx < kw; ++kx)
                            for (int c = 0; c < ci; ++c) {
                                const int iy = y + ky - (kh - 1) / 2;
                                const int ix = x + kx - (kw - 1) / 2;
                                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                                acc += static_cast<double>(in.at4(n, iy, ix, c)) *
                                       static_cast<double>(k.at4(ky, kx, c, o));
                            }
                    out.at4(n, y, x, o) = static_cast<float>(acc);
                }
    return out;
}

// ---- f64 reference network ---------------------------------------------------

struct RefGrid {
    int h = 0, w = 0, c = 0;
    std::vector<double> v;

    static RefGrid zeros(int h, int w, int c) {
        RefGrid g;
        g.h = h;
        g.w = w;
        g.c = c;
        g.v.assign(static_cast<size_t>(h) * w * c, 0.0);
        return g;
    }
    double& at(int y, int x, int ch) { return v[(static_cast<size_t>(y) * w + x) * c + ch]; }
    double at(int y, int x, int ch) const { return v[(static_cast<size_t>(y) * w + x) * c + ch]; }
};

// mask recomputed here rather than taken from the library
inline bool ref_mask_visible(int r, int col, int kh, int kw, bool type_b) {
    const int cr = (kh - 1) / 2, cc = (kw - 1) / 2;
    if (r < cr) return true;
    if (r == cr && col < cc) return true;
    if (type_b && r == cr && col == cc) return true;
    return false;
}

inline RefGrid ref_conv(const RefGrid& in, const Tensor& k, const Tensor& b, int masked /*0 none,1 A,2 B*/) {
    const int kh = k.shape[0], kw = k.shape[1], ci = k.shape[2], co = k.shape[3];
    RefGrid out = RefGrid::zeros(in.h, in.w, co);
    for (int y = 0; y < in.h; ++y)
        for (int x = 0; x < in.w; ++x)
            for (int o = 0; o < co; ++o) {
                double acc = b.data[static_cast<size_t>(o)];
                for (int ky = 0; ky < kh; ++ky)
                    for (int kx = 0; kx < kw; ++kx) {
                        if (masked != 0 && !ref_mask_visible(ky, kx, kh, kw, masked == 2)) continue;
                        const int iy = y + ky - (kh - 1) / 2;
                        const int ix = x + kx - (kw - 1) / 2;
                        if (iy < 0 || iy >= in.h || ix < 0 || ix >= in.w) continue;
                        for (int c = 0; c < ci; ++c)
                            acc += in.at(iy, ix, c) * static_cast<double>(k.at4(ky, kx, c, o));
                    }
                out.at(y, x, o) = acc;
            }
    return out;
}

inline void ref_relu(RefGrid& g) {
    for (double& v : g.v) v = v > 0.0 ? v : 0.0;
}

inline double ref_softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
inline double ref_sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// whole-network NLL in f64, mirroring the architecture contract
inline double ref_forward_nll(const bridgegen::model::ModelConfig& cfg, const ParamSet& params,
                              const Tensor& images, const std::vector<int>& targets) {
    using bridgegen::model::HeadKind;
    const int h = cfg.image_h, w = cfg.image_w;
    if (images.shape[0] != 1) throw std::logic_error("ref_forward_nll: single image only");

    RefGrid x = RefGrid::zeros(h, w, 1);
    for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) x.at(y, xx, 0) = static_cast<double>(images.at4(0, y, xx, 0));

    RefGrid cur = ref_conv(x, params.at("conv_in.weight"), params.at("conv_in.bias"), 1);
    for (int i = 0; i < cfg.num_resnet; ++i) {
        const std::string p = "block" + std::to_string(i) + ".";
        RefGrid t = ref_conv(cur, params.at(p + "reduce.weight"), params.at(p + "reduce.bias"), 0);
        ref_relu(t);
        t = ref_conv(t, params.at(p + "conv.weight"), params.at(p + "conv.bias"), 2);
        ref_relu(t);
        t = ref_conv(t, params.at(p + "expand.weight"), params.at(p + "expand.bias"), 0);
        for (size_t q = 0; q < cur.v.size(); ++q) cur.v[q] += t.v[q];
    }
    RefGrid t = ref_conv(cur, params.at("post1.weight"), params.at("post1.bias"), 0);
    ref_relu(t);
    t = ref_conv(t, params.at("post2.weight"), params.at("post2.bias"), 0);
    ref_relu(t);
    RefGrid head = ref_conv(t, params.at("head.weight"), params.at("head.bias"), 0);

    double total = 0.0;
    if (cfg.head == HeadKind::Categorical) {
        const int k = cfg.num_categories;
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) {
                double mx = -1e300;
                for (int c = 0; c < k; ++c) mx = std::max(mx, head.at(y, xx, c));
                double z = 0.0;
                for (int c = 0; c < k; ++c) z += std::exp(head.at(y, xx, c) - mx);
                const int tgt = targets[static_cast<size_t>(y) * w + xx];
                total += mx + std::log(z) - head.at(y, xx, tgt);
            }
        return total;
    }
    const int m = cfg.num_components;
    for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) {
            const int v = targets[static_cast<size_t>(y) * w + xx];
            double lam_max = -1e300;
            for (int c = 0; c < m; ++c) lam_max = std::max(lam_max, head.at(y, xx, c));
            double lam_z = 0.0;
            for (int c = 0; c < m; ++c) lam_z += std::exp(head.at(y, xx, c) - lam_max);
            const double lam_lse = lam_max + std::log(lam_z);

            double mix = 0.0;
            for (int c = 0; c < m; ++c) {
                const double wgt = std::exp(head.at(y, xx, c) - lam_lse);
                const double mu = 127.5 + 127.5 * head.at(y, xx, m + c);
                const double ls = std::max(head.at(y, xx, 2 * m + c) + std::log(127.5), std::log(1e-3));
                const double s = std::exp(ls);
                double prob;
                if (v == 0) prob = ref_sigmoid((0.5 - mu) / s);
                else if (v == 255) prob = 1.0 - ref_sigmoid((254.5 - mu) / s);
                else prob = ref_sigmoid((v + 0.5 - mu) / s) - ref_sigmoid((v - 0.5 - mu) / s);
                mix += wgt * prob;
            }
            total += -std::log(std::max(mix, 1e-300));
        }
    return total;
}

struct GradCompare {
    double max_rel = 0.0;
    std::string worst;
};

inline GradCompare compare_grads(const bridgegen::GradMap& analytic, const bridgegen::GradMap& numeric,
                                 double floor = 1e-6) {
    GradCompare res;
    for (const auto& [name, g] : analytic) {
        const Tensor& n = numeric.at(name);
        for (size_t i = 0; i < g.data.size(); ++i) {
            const double a = g.data[i], b = n.data[i];
            if (std::abs(a) <= floor && std::abs(b) <= floor) continue;
            const double rel = std::abs(a - b) / std::max(std::abs(a), std::abs(b));
            if (rel > res.max_rel) {
                res.max_rel = rel;
                res.worst = name + "[" + std::to_string(i) + "]";
            }
        }
    }
    return res;
}

} // namespace oracle
