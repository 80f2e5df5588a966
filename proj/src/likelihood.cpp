#include "bridgegen/likelihood.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace bridgegen::likelihood {

void QuantizerConfig::validate() const {
    if (num_bins < 2 || num_bins > 256)
        throw std::invalid_argument("QuantizerConfig: num_bins must be in 2..256, got " + std::to_string(num_bins));
}

int quantize(int value, const QuantizerConfig& cfg) {
    cfg.validate();
    if (value < 0 || value > 255)
        throw std::out_of_range("quantize: value " + std::to_string(value) + " outside 0..255");
    return value * cfg.num_bins / 256;
}

int dequantize(int bin, const QuantizerConfig& cfg) {
    cfg.validate();
    if (bin < 0 || bin >= cfg.num_bins)
        throw std::out_of_range("dequantize: bin " + std::to_string(bin) + " outside 0.." +
                                std::to_string(cfg.num_bins - 1));
    // bin b holds v with floor(v*K/256) == b
    const int lo = (bin * 256 + cfg.num_bins - 1) / cfg.num_bins;
    const int hi = ((bin + 1) * 256 + cfg.num_bins - 1) / cfg.num_bins - 1;
    return (lo + hi + 1) / 2;
}

NllReport make_report(double total_nats, int64_t pixel_count) {
    NllReport r;
    r.total_nats = total_nats;
    r.pixel_count = pixel_count;
    r.bits_per_dim = pixel_count > 0 ? total_nats / (static_cast<double>(pixel_count) * std::log(2.0)) : 0.0;
    return r;
}

// ---- categorical -------------------------------------------------------------

namespace {

// per-pixel -log softmax(logits)[target] in f64; optionally fills softmax
double pixel_categorical_nll(const float* logits, int k, int target, double* softmax_out) {
    double mx = -1e300;
    for (int c = 0; c < k; ++c) mx = std::max(mx, static_cast<double>(logits[c]));
    double z = 0.0;
    for (int c = 0; c < k; ++c) z += std::exp(static_cast<double>(logits[c]) - mx);
    const double lse = mx + std::log(z);
    if (softmax_out) {
        for (int c = 0; c < k; ++c) softmax_out[c] = std::exp(static_cast<double>(logits[c]) - lse);
    }
    return lse - static_cast<double>(logits[target]);
}

void check_targets(int64_t pixels, size_t targets, const char* op) {
    if (static_cast<int64_t>(targets) != pixels)
        throw std::invalid_argument(std::string(op) + ": " + std::to_string(targets) + " targets for " +
                                    std::to_string(pixels) + " pixels");
}

} // namespace

NllReport categorical_nll(const Tensor& logits, const std::vector<int>& targets) {
    if (logits.rank() != 4) throw std::invalid_argument("categorical_nll: logits must be rank 4");
    const int k = logits.shape[3];
    const int64_t pixels = logits.numel() / k;
    check_targets(pixels, targets.size(), "categorical_nll");
    double total = 0.0;
    for (int64_t p = 0; p < pixels; ++p) {
        const int t = targets[static_cast<size_t>(p)];
        if (t < 0 || t >= k)
            throw std::out_of_range("categorical_nll: target " + std::to_string(t) + " outside 0.." +
                                    std::to_string(k - 1) + " at pixel " + std::to_string(p));
        total += pixel_categorical_nll(logits.data.data() + p * k, k, t, nullptr);
    }
    return make_report(total, pixels);
}

Val categorical_nll_loss(Val logits, const std::vector<int>& targets) {
    const NllReport rep = categorical_nll(logits.value(), targets); // validates and computes
    Tape& tape = *logits.tape;
    const int li = logits.id;
    std::vector<int> tgt = targets;
    return tape.make_node(Tensor::scalar(static_cast<float>(rep.total_nats)), {logits},
                          [li, tgt = std::move(tgt)](Tape& tp, const Tensor& og) {
                              const Tensor& lg = tp.value(li);
                              const int k = lg.shape[3];
                              const int64_t pixels = lg.numel() / k;
                              const double g = static_cast<double>(og.data[0]);
                              Tensor grad = Tensor::zeros(lg.shape);
                              std::vector<double> sm(static_cast<size_t>(k));
                              for (int64_t p = 0; p < pixels; ++p) {
                                  pixel_categorical_nll(lg.data.data() + p * k, k,
                                                        tgt[static_cast<size_t>(p)], sm.data());
                                  for (int c = 0; c < k; ++c) {
                                      double d = sm[static_cast<size_t>(c)];
                                      if (c == tgt[static_cast<size_t>(p)]) d -= 1.0;
                                      grad.data[static_cast<size_t>(p * k + c)] = static_cast<float>(g * d);
                                  }
                              }
                              tp.accumulate_grad(li, grad);
                          });
}

// ---- discretized logistic ------------------------------------------------------

namespace {

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double log_sigmoid(double x) { return -softplus(-x); }

struct DlmTerms {
    double log_p;    // log pmf
    double dlogp_da; // d log_p / d z_plus
    double dlogp_db; // d log_p / d z_minus
    bool has_a, has_b;
};

// z_plus = (v+0.5-mu)/s, z_minus = (v-0.5-mu)/s; edge bins drop one side.
DlmTerms dlm_terms(double mu, double log_s, int v) {
    const double ls = std::max(log_s, std::log(1e-3));
    const double s = std::exp(ls);
    const double a = (static_cast<double>(v) + 0.5 - mu) / s;
    const double b = (static_cast<double>(v) - 0.5 - mu) / s;
    DlmTerms t{};
    if (v <= 0) {
        t.log_p = log_sigmoid(a);
        t.dlogp_da = sigmoid(-a); // d log sigma(a) / da
        t.has_a = true;
    } else if (v >= 255) {
        t.log_p = log_sigmoid(-b); // log(1 - sigma(b))
        t.dlogp_db = -sigmoid(b);
        t.has_b = true;
    } else {
        // log(sigma(a) - sigma(b)) = -b - softplus(-a) - softplus(-b) + log1p(-exp(b-a))
        const double gap = a - b; // 1/s > 0
        t.log_p = -b - softplus(-a) - softplus(-b) + std::log1p(-std::exp(-gap));
        // d/da = sigma'(a)/delta, d/db = -sigma'(b)/delta, via logs for stability
        const double log_da = log_sigmoid(a) + log_sigmoid(-a) - t.log_p;
        const double log_db = log_sigmoid(b) + log_sigmoid(-b) - t.log_p;
        t.dlogp_da = std::exp(log_da);
        t.dlogp_db = -std::exp(log_db);
        t.has_a = t.has_b = true;
    }
    return t;
}

struct DlmGrad {
    double log_p;
    double dmu;     // d log_p / d mu
    double dlog_s;  // d log_p / d log_s (zero below the clamp floor)
};

DlmGrad dlm_grad(double mu, double log_s, int v) {
    const DlmTerms t = dlm_terms(mu, log_s, v);
    const double ls = std::max(log_s, std::log(1e-3));
    const double s = std::exp(ls);
    const double a = (static_cast<double>(v) + 0.5 - mu) / s;
    const double b = (static_cast<double>(v) - 0.5 - mu) / s;
    DlmGrad g{};
    g.log_p = t.log_p;
    // da/dmu = db/dmu = -1/s;  da/dlog_s = -a, db/dlog_s = -b
    if (t.has_a) {
        g.dmu += t.dlogp_da * (-1.0 / s);
        g.dlog_s += t.dlogp_da * (-a);
    }
    if (t.has_b) {
        g.dmu += t.dlogp_db * (-1.0 / s);
        g.dlog_s += t.dlogp_db * (-b);
    }
    if (log_s < std::log(1e-3)) g.dlog_s = 0.0;
    return g;
}

} // namespace

double dlm_log_pmf(double mu, double log_s, int v) {
    if (v < 0 || v > 255) throw std::out_of_range("dlm_log_pmf: value outside 0..255");
    return dlm_terms(mu, log_s, v).log_p;
}

double dlm_pmf(double mu, double log_s, int v) { return std::exp(dlm_log_pmf(mu, log_s, v)); }

namespace {

struct MixturePixel {
    double nll;
    // d nll / d (mix_logit m, mean m, log_scale m)
    std::vector<double> dlogit, dmean, dlogs;
};

MixturePixel mixture_pixel(const float* lam, const float* mu, const float* ls, int m, int v, bool want_grad) {
    // log weights = log softmax(lam)
    double mx = -1e300;
    for (int i = 0; i < m; ++i) mx = std::max(mx, static_cast<double>(lam[i]));
    double z = 0.0;
    for (int i = 0; i < m; ++i) z += std::exp(static_cast<double>(lam[i]) - mx);
    const double lse_lam = mx + std::log(z);

    std::vector<DlmGrad> comp(static_cast<size_t>(m));
    std::vector<double> joint(static_cast<size_t>(m)); // log w_i + log p_i
    double jmax = -1e300;
    for (int i = 0; i < m; ++i) {
        comp[static_cast<size_t>(i)] = dlm_grad(static_cast<double>(mu[i]), static_cast<double>(ls[i]), v);
        joint[static_cast<size_t>(i)] = (static_cast<double>(lam[i]) - lse_lam) + comp[static_cast<size_t>(i)].log_p;
        jmax = std::max(jmax, joint[static_cast<size_t>(i)]);
    }
    double jz = 0.0;
    for (int i = 0; i < m; ++i) jz += std::exp(joint[static_cast<size_t>(i)] - jmax);
    const double log_total = jmax + std::log(jz);

    MixturePixel out;
    out.nll = -log_total;
    if (!want_grad) return out;

    out.dlogit.resize(static_cast<size_t>(m));
    out.dmean.resize(static_cast<size_t>(m));
    out.dlogs.resize(static_cast<size_t>(m));
    for (int i = 0; i < m; ++i) {
        const double w = std::exp(static_cast<double>(lam[i]) - lse_lam);
        const double r = std::exp(joint[static_cast<size_t>(i)] - log_total); // responsibility
        out.dlogit[static_cast<size_t>(i)] = w - r;
        out.dmean[static_cast<size_t>(i)] = -r * comp[static_cast<size_t>(i)].dmu;
        out.dlogs[static_cast<size_t>(i)] = -r * comp[static_cast<size_t>(i)].dlog_s;
    }
    return out;
}

void check_mixture_shapes(const Tensor& lam, const Tensor& mu, const Tensor& ls) {
    if (lam.rank() != 4 || !same_shape(lam, mu) || !same_shape(lam, ls))
        throw std::invalid_argument("mixture_nll: mix_logits/means/log_scales must share shape [N,H,W,M]");
}

} // namespace

NllReport mixture_nll(const model::PixelDistribution& dist, const std::vector<int>& targets) {
    if (dist.kind != model::HeadKind::LogisticMixture)
        throw std::invalid_argument("mixture_nll: distribution does not carry a logistic mixture head");
    check_mixture_shapes(dist.mix_logits, dist.means, dist.log_scales);
    const int m = dist.mix_logits.shape[3];
    const int64_t pixels = dist.mix_logits.numel() / m;
    check_targets(pixels, targets.size(), "mixture_nll");
    double total = 0.0;
    for (int64_t p = 0; p < pixels; ++p) {
        const int v = targets[static_cast<size_t>(p)];
        if (v < 0 || v > 255)
            throw std::out_of_range("mixture_nll: target " + std::to_string(v) + " outside 0..255");
        total += mixture_pixel(dist.mix_logits.data.data() + p * m, dist.means.data.data() + p * m,
                               dist.log_scales.data.data() + p * m, m, v, false)
                     .nll;
    }
    return make_report(total, pixels);
}

Val mixture_nll_loss(Val mix_logits, Val means, Val log_scales, const std::vector<int>& targets) {
    const Tensor& lam = mix_logits.value();
    check_mixture_shapes(lam, means.value(), log_scales.value());
    const int m = lam.shape[3];
    const int64_t pixels = lam.numel() / m;
    check_targets(pixels, targets.size(), "mixture_nll_loss");

    double total = 0.0;
    for (int64_t p = 0; p < pixels; ++p)
        total += mixture_pixel(lam.data.data() + p * m, means.value().data.data() + p * m,
                               log_scales.value().data.data() + p * m, m,
                               targets[static_cast<size_t>(p)], false)
                     .nll;

    Tape& tape = *mix_logits.tape;
    const int li = mix_logits.id, mi = means.id, si = log_scales.id;
    std::vector<int> tgt = targets;
    return tape.make_node(
        Tensor::scalar(static_cast<float>(total)), {mix_logits, means, log_scales},
        [li, mi, si, tgt = std::move(tgt)](Tape& tp, const Tensor& og) {
            const Tensor& lamv = tp.value(li);
            const Tensor& muv = tp.value(mi);
            const Tensor& lsv = tp.value(si);
            const int m = lamv.shape[3];
            const int64_t pixels = lamv.numel() / m;
            const double g = static_cast<double>(og.data[0]);
            Tensor glam = Tensor::zeros(lamv.shape);
            Tensor gmu = Tensor::zeros(muv.shape);
            Tensor gls = Tensor::zeros(lsv.shape);
            for (int64_t p = 0; p < pixels; ++p) {
                const MixturePixel mp =
                    mixture_pixel(lamv.data.data() + p * m, muv.data.data() + p * m,
                                  lsv.data.data() + p * m, m, tgt[static_cast<size_t>(p)], true);
                for (int i = 0; i < m; ++i) {
                    glam.data[static_cast<size_t>(p * m + i)] = static_cast<float>(g * mp.dlogit[static_cast<size_t>(i)]);
                    gmu.data[static_cast<size_t>(p * m + i)] = static_cast<float>(g * mp.dmean[static_cast<size_t>(i)]);
                    gls.data[static_cast<size_t>(p * m + i)] = static_cast<float>(g * mp.dlogs[static_cast<size_t>(i)]);
                }
            }
            tp.accumulate_grad(li, glam);
            tp.accumulate_grad(mi, gmu);
            tp.accumulate_grad(si, gls);
        });
}

// ---- sampling ------------------------------------------------------------------

namespace {

std::vector<double> categorical_probs(const std::vector<float>& logits, double temperature) {
    const size_t k = logits.size();
    std::vector<double> p(k);
    double mx = -1e300;
    for (float v : logits) mx = std::max(mx, static_cast<double>(v));
    double z = 0.0;
    for (size_t i = 0; i < k; ++i) {
        p[i] = std::exp((static_cast<double>(logits[i]) - mx) / temperature);
        z += p[i];
    }
    for (double& v : p) v /= z;
    return p;
}

int argmax_lowest(const std::vector<double>& p) {
    size_t best = 0;
    for (size_t i = 1; i < p.size(); ++i)
        if (p[i] > p[best]) best = i;
    return static_cast<int>(best);
}

int draw_index(const std::vector<double>& p, Pcg32& rng) {
    double total = 0.0;
    for (double v : p) total += v;
    const double u = rng.next_unit() * total;
    double c = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        c += p[i];
        if (u < c) return static_cast<int>(i);
    }
    return static_cast<int>(p.size()) - 1;
}

} // namespace

std::vector<double> pixel_pmf(const model::PixelHead& head, double temperature,
                              const QuantizerConfig& quant) {
    if (temperature < 0.0) throw std::invalid_argument("pixel_pmf: temperature must be >= 0");
    std::vector<double> pmf(256, 0.0);
    if (head.kind == model::HeadKind::Categorical) {
        std::vector<double> p = categorical_probs(head.values, temperature == 0.0 ? 1.0 : temperature);
        if (temperature == 0.0) {
            const int best = argmax_lowest(p);
            std::fill(p.begin(), p.end(), 0.0);
            p[static_cast<size_t>(best)] = 1.0;
        }
        for (size_t b = 0; b < p.size(); ++b)
            pmf[static_cast<size_t>(dequantize(static_cast<int>(b), quant))] += p[b];
        return pmf;
    }
    const int m = static_cast<int>(head.values.size()) / 3;
    const float* lam = head.values.data();
    const float* mu = lam + m;
    const float* ls = mu + m;
    for (int v = 0; v < 256; ++v) {
        pmf[static_cast<size_t>(v)] =
            std::exp(-mixture_pixel(lam, mu, ls, m, v, false).nll);
    }
    if (temperature == 0.0) {
        const int best = argmax_lowest(pmf);
        std::fill(pmf.begin(), pmf.end(), 0.0);
        pmf[static_cast<size_t>(best)] = 1.0;
    } else if (temperature != 1.0) {
        double z = 0.0;
        for (double& v : pmf) {
            v = std::pow(v, 1.0 / temperature);
            z += v;
        }
        for (double& v : pmf) v /= z;
    }
    return pmf;
}

int sample_pixel(const model::PixelHead& head, double temperature, Pcg32& rng,
                 const QuantizerConfig& quant) {
    if (temperature < 0.0) throw std::invalid_argument("sample_pixel: temperature must be >= 0");
    if (head.kind == model::HeadKind::Categorical) {
        const std::vector<double> p = categorical_probs(head.values, temperature == 0.0 ? 1.0 : temperature);
        const int bin = temperature == 0.0 ? argmax_lowest(p) : draw_index(p, rng);
        return dequantize(bin, quant);
    }
    const std::vector<double> pmf = pixel_pmf(head, temperature, quant);
    if (temperature == 0.0) return argmax_lowest(pmf);
    return draw_index(pmf, rng);
}

} // namespace bridgegen::likelihood
