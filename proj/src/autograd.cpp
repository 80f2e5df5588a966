#include "bridgegen/autograd.hpp"

#include <stdexcept>

namespace bridgegen {

const Tensor& Val::value() const { return tape->value(id); }
const Shape& Val::shape() const { return tape->value(id).shape; }

int Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

Val Tape::param(const std::string& name, const Tensor& value) {
    Node n;
    n.value = value;
    n.requires_grad = track_;
    n.param_name = name;
    int id = push(std::move(n));
    param_ids_.push_back(id);
    return {this, id};
}

Val Tape::input(Tensor value) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = false;
    return {this, push(std::move(n))};
}

Val Tape::constant(Tensor value) { return input(std::move(value)); }

Val Tape::make_node(Tensor value, const std::vector<Val>& inputs, BackpropFn fn) {
    bool needs = false;
    for (const Val& v : inputs) {
        if (v.tape != this) throw std::invalid_argument("make_node: input from a different tape");
        needs = needs || nodes_[static_cast<size_t>(v.id)].requires_grad;
    }
    Node n;
    n.value = std::move(value);
    n.requires_grad = track_ && needs;
    if (n.requires_grad) n.backprop = std::move(fn);
    return {this, push(std::move(n))};
}

Tensor& Tape::grad_buffer(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.data.empty()) n.grad = Tensor::zeros(n.value.shape);
    return n.grad;
}

void Tape::accumulate_grad(int id, const Tensor& g) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.requires_grad) return;
    Tensor& buf = grad_buffer(id);
    if (!same_shape(buf, g)) throw std::invalid_argument("accumulate_grad: shape mismatch");
    for (size_t i = 0; i < buf.data.size(); ++i)
        buf.data[i] = static_cast<float>(static_cast<double>(buf.data[i]) + static_cast<double>(g.data[i]));
}

void Tape::accumulate_grad_at(int id, int64_t flat_index, double g) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.requires_grad) return;
    Tensor& buf = grad_buffer(id);
    float& slot = buf.data[static_cast<size_t>(flat_index)];
    slot = static_cast<float>(static_cast<double>(slot) + g);
}

GradMap Tape::backward(Val loss) {
    if (loss.tape != this) throw std::invalid_argument("backward: loss was not produced through this record");
    if (!loss.value().is_scalar())
        throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_str(loss.value().shape));
    if (!track_) throw std::logic_error("backward: tape was created without gradient tracking");

    for (Node& n : nodes_) n.grad = Tensor{};
    grad_buffer(loss.id).data[0] = 1.0f;

    for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (!n.requires_grad || !n.backprop) continue;
        if (n.grad.data.empty()) continue; // no path from the loss
        n.backprop(*this, n.grad);
    }

    GradMap out;
    for (int id : param_ids_) {
        Node& n = nodes_[static_cast<size_t>(id)];
        out[n.param_name] = n.grad.data.empty() ? Tensor::zeros(n.value.shape) : n.grad;
    }
    return out;
}

// ---- ops -------------------------------------------------------------------

namespace {

void check_same_tape(Val a, Val b, const char* op) {
    if (a.tape != b.tape) throw std::invalid_argument(std::string(op) + ": operands from different tapes");
}

} // namespace

Val conv2d_same(Val input, Val kernel, Val bias) {
    check_same_tape(input, kernel, "conv2d_same");
    check_same_tape(input, bias, "conv2d_same");
    Tape& t = *input.tape;
    Tensor out = conv2d_same(input.value(), kernel.value(), bias.value());

    const int xi = input.id, ki = kernel.id, bi = bias.id;
    return t.make_node(std::move(out), {input, kernel, bias}, [xi, ki, bi](Tape& tp, const Tensor& og) {
        const Tensor& x = tp.value(xi);
        const Tensor& k = tp.value(ki);
        const int nb = x.shape[0], h = x.shape[1], w = x.shape[2], ci = x.shape[3];
        const int kh = k.shape[0], kw = k.shape[1], co = k.shape[3];
        const int ph = (kh - 1) / 2, pw = (kw - 1) / 2;

        if (tp.requires_grad(xi)) {
            Tensor gx = Tensor::zeros(x.shape);
            for (int n = 0; n < nb; ++n)
                for (int iy = 0; iy < h; ++iy)
                    for (int ix = 0; ix < w; ++ix)
                        for (int c = 0; c < ci; ++c) {
                            double acc = 0.0;
                            for (int ky = 0; ky < kh; ++ky) {
                                const int oy = iy - ky + ph;
                                if (oy < 0 || oy >= h) continue;
                                for (int kx = 0; kx < kw; ++kx) {
                                    const int ox = ix - kx + pw;
                                    if (ox < 0 || ox >= w) continue;
                                    for (int o = 0; o < co; ++o)
                                        acc += static_cast<double>(og.at4(n, oy, ox, o)) *
                                               static_cast<double>(k.at4(ky, kx, c, o));
                                }
                            }
                            gx.at4(n, iy, ix, c) = static_cast<float>(acc);
                        }
            tp.accumulate_grad(xi, gx);
        }
        if (tp.requires_grad(ki)) {
            Tensor gk = Tensor::zeros(k.shape);
            for (int ky = 0; ky < kh; ++ky)
                for (int kx = 0; kx < kw; ++kx)
                    for (int c = 0; c < ci; ++c)
                        for (int o = 0; o < co; ++o) {
                            double acc = 0.0;
                            for (int n = 0; n < nb; ++n)
                                for (int oy = 0; oy < h; ++oy) {
                                    const int iy = oy + ky - ph;
                                    if (iy < 0 || iy >= h) continue;
                                    for (int ox = 0; ox < w; ++ox) {
                                        const int ix = ox + kx - pw;
                                        if (ix < 0 || ix >= w) continue;
                                        acc += static_cast<double>(og.at4(n, oy, ox, o)) *
                                               static_cast<double>(x.at4(n, iy, ix, c));
                                    }
                                }
                            gk.at4(ky, kx, c, o) = static_cast<float>(acc);
                        }
            tp.accumulate_grad(ki, gk);
        }
        if (tp.requires_grad(bi)) {
            Tensor gb = Tensor::zeros({co});
            for (int o = 0; o < co; ++o) {
                double acc = 0.0;
                for (int n = 0; n < nb; ++n)
                    for (int y = 0; y < h; ++y)
                        for (int xq = 0; xq < w; ++xq) acc += static_cast<double>(og.at4(n, y, xq, o));
                gb.data[static_cast<size_t>(o)] = static_cast<float>(acc);
            }
            tp.accumulate_grad(bi, gb);
        }
    });
}

Val relu(Val x) {
    Tape& t = *x.tape;
    Tensor out = relu(x.value());
    const int xi = x.id;
    return t.make_node(std::move(out), {x}, [xi](Tape& tp, const Tensor& og) {
        const Tensor& v = tp.value(xi);
        Tensor gx = Tensor::zeros(v.shape);
        for (size_t i = 0; i < v.data.size(); ++i)
            gx.data[i] = v.data[i] > 0.0f ? og.data[i] : 0.0f;
        tp.accumulate_grad(xi, gx);
    });
}

Val add(Val a, Val b) {
    check_same_tape(a, b, "add");
    Tape& t = *a.tape;
    Tensor out = add(a.value(), b.value());
    const int ai = a.id, bi = b.id;
    const bool broadcast = !same_shape(a.value(), b.value());
    return t.make_node(std::move(out), {a, b}, [ai, bi, broadcast](Tape& tp, const Tensor& og) {
        if (tp.requires_grad(ai)) tp.accumulate_grad(ai, og);
        if (tp.requires_grad(bi)) {
            if (!broadcast) {
                tp.accumulate_grad(bi, og);
            } else {
                const Tensor& bv = tp.value(bi);
                const size_t c = static_cast<size_t>(bv.shape[0]);
                Tensor gb = Tensor::zeros(bv.shape);
                std::vector<double> acc(c, 0.0);
                for (size_t i = 0; i < og.data.size(); ++i) acc[i % c] += static_cast<double>(og.data[i]);
                for (size_t i = 0; i < c; ++i) gb.data[i] = static_cast<float>(acc[i]);
                tp.accumulate_grad(bi, gb);
            }
        }
    });
}

Val mul(Val a, Val b) {
    check_same_tape(a, b, "mul");
    Tape& t = *a.tape;
    Tensor out = mul(a.value(), b.value());
    const int ai = a.id, bi = b.id;
    const bool broadcast = !same_shape(a.value(), b.value());
    return t.make_node(std::move(out), {a, b}, [ai, bi, broadcast](Tape& tp, const Tensor& og) {
        if (tp.requires_grad(ai)) {
            Tensor ga = mul(og, tp.value(bi)); // broadcast applies the same way
            tp.accumulate_grad(ai, ga);
        }
        if (tp.requires_grad(bi)) {
            if (!broadcast) {
                tp.accumulate_grad(bi, mul(og, tp.value(ai)));
            } else {
                const Tensor& av = tp.value(ai);
                const Tensor& bv = tp.value(bi);
                const size_t c = static_cast<size_t>(bv.shape[0]);
                std::vector<double> acc(c, 0.0);
                for (size_t i = 0; i < og.data.size(); ++i)
                    acc[i % c] += static_cast<double>(og.data[i]) * static_cast<double>(av.data[i]);
                Tensor gb = Tensor::zeros(bv.shape);
                for (size_t i = 0; i < c; ++i) gb.data[i] = static_cast<float>(acc[i]);
                tp.accumulate_grad(bi, gb);
            }
        }
    });
}

Val affine(Val x, double a, double b) {
    Tape& t = *x.tape;
    Tensor out = affine(x.value(), a, b);
    const int xi = x.id;
    return t.make_node(std::move(out), {x}, [xi, a](Tape& tp, const Tensor& og) {
        tp.accumulate_grad(xi, scale(og, a));
    });
}

Val scale(Val x, double a) { return affine(x, a, 0.0); }

Val clamp_min(Val x, double lo) {
    Tape& t = *x.tape;
    Tensor out = clamp_min(x.value(), lo);
    const int xi = x.id;
    return t.make_node(std::move(out), {x}, [xi, lo](Tape& tp, const Tensor& og) {
        const Tensor& v = tp.value(xi);
        Tensor gx = Tensor::zeros(v.shape);
        for (size_t i = 0; i < v.data.size(); ++i)
            gx.data[i] = static_cast<double>(v.data[i]) > lo ? og.data[i] : 0.0f;
        tp.accumulate_grad(xi, gx);
    });
}

Val channel_slice(Val x, int c0, int c1) {
    Tape& t = *x.tape;
    const Tensor& v = x.value();
    const int ch = v.shape.back();
    if (c0 < 0 || c1 > ch || c0 >= c1)
        throw std::invalid_argument("channel_slice: range [" + std::to_string(c0) + "," + std::to_string(c1) +
                                    ") invalid for " + std::to_string(ch) + " channels");
    Shape os = v.shape;
    os.back() = c1 - c0;
    Tensor out = Tensor::zeros(os);
    const size_t rows = static_cast<size_t>(v.numel() / ch);
    for (size_t r = 0; r < rows; ++r)
        for (int c = c0; c < c1; ++c)
            out.data[r * static_cast<size_t>(c1 - c0) + static_cast<size_t>(c - c0)] =
                v.data[r * static_cast<size_t>(ch) + static_cast<size_t>(c)];

    const int xi = x.id;
    return t.make_node(std::move(out), {x}, [xi, c0, c1, ch, rows](Tape& tp, const Tensor& og) {
        Tensor gx = Tensor::zeros(tp.value(xi).shape);
        for (size_t r = 0; r < rows; ++r)
            for (int c = c0; c < c1; ++c)
                gx.data[r * static_cast<size_t>(ch) + static_cast<size_t>(c)] =
                    og.data[r * static_cast<size_t>(c1 - c0) + static_cast<size_t>(c - c0)];
        tp.accumulate_grad(xi, gx);
    });
}

Val sum(Val x) {
    Tape& t = *x.tape;
    Tensor out = Tensor::scalar(static_cast<float>(sum_f64(x.value())));
    const int xi = x.id;
    return t.make_node(std::move(out), {x}, [xi](Tape& tp, const Tensor& og) {
        tp.accumulate_grad(xi, Tensor::full(tp.value(xi).shape, og.data[0]));
    });
}

GradMap finite_diff_gradient(const std::function<double(const ParamSet&)>& f,
                             const ParamSet& params, double h) {
    if (!(h > 0.0)) throw std::invalid_argument("finite_diff_gradient: h must be positive");
    GradMap out;
    ParamSet work = params;
    for (auto& [name, tensor] : work) {
        Tensor grad = Tensor::zeros(tensor.shape);
        for (size_t i = 0; i < tensor.data.size(); ++i) {
            const float orig = tensor.data[i];
            const float up = static_cast<float>(static_cast<double>(orig) + h);
            const float dn = static_cast<float>(static_cast<double>(orig) - h);
            tensor.data[i] = up;
            const double fp = f(work);
            tensor.data[i] = dn;
            const double fm = f(work);
            tensor.data[i] = orig;
            const double denom = static_cast<double>(up) - static_cast<double>(dn);
            grad.data[i] = static_cast<float>((fp - fm) / denom);
        }
        out[name] = std::move(grad);
    }
    return out;
}

} // namespace bridgegen
