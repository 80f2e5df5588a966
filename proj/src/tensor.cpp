#include "bridgegen/tensor.hpp"

#include <sstream>
#include <stdexcept>

namespace bridgegen {

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

Tensor::Tensor(Shape s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {
    for (int dim : shape) {
        if (dim <= 0) throw std::invalid_argument("Tensor: non-positive dim in shape " + shape_str(shape));
    }
    if (static_cast<int64_t>(data.size()) != shape_numel(shape)) {
        throw std::invalid_argument("Tensor: data length " + std::to_string(data.size()) +
                                    " does not match shape " + shape_str(shape));
    }
}

Tensor Tensor::zeros(const Shape& s) {
    return Tensor(s, std::vector<float>(static_cast<size_t>(shape_numel(s)), 0.0f));
}

Tensor Tensor::full(const Shape& s, float v) {
    return Tensor(s, std::vector<float>(static_cast<size_t>(shape_numel(s)), v));
}

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

void validate_conv_shapes(const Shape& input, const Shape& kernel, const Shape& bias) {
    if (input.size() != 4)
        throw std::invalid_argument("conv2d_same: input must be rank 4 (N,H,W,C), got " + shape_str(input));
    if (kernel.size() != 4)
        throw std::invalid_argument("conv2d_same: kernel must be rank 4 (kh,kw,Ci,Co), got " + shape_str(kernel));
    if (bias.size() != 1)
        throw std::invalid_argument("conv2d_same: bias must be rank 1 (Co), got " + shape_str(bias));
    if (kernel[0] % 2 == 0)
        throw std::invalid_argument("conv2d_same: kernel rows must be odd, got kh=" + std::to_string(kernel[0]));
    if (kernel[1] % 2 == 0)
        throw std::invalid_argument("conv2d_same: kernel cols must be odd, got kw=" + std::to_string(kernel[1]));
    if (kernel[2] != input[3])
        throw std::invalid_argument("conv2d_same: kernel input channels Ci=" + std::to_string(kernel[2]) +
                                    " do not match input channels C=" + std::to_string(input[3]));
    if (bias[0] != kernel[3])
        throw std::invalid_argument("conv2d_same: bias length " + std::to_string(bias[0]) +
                                    " does not match output channels Co=" + std::to_string(kernel[3]));
}

void conv_accum_at(const Tensor& input, const Tensor& kernel, const Tensor& bias,
                   int n, int oy, int ox, float* out) {
    const int h = input.shape[1];
    const int w = input.shape[2];
    const int ci = input.shape[3];
    const int kh = kernel.shape[0];
    const int kw = kernel.shape[1];
    const int co = kernel.shape[3];
    const int ph = (kh - 1) / 2;
    const int pw = (kw - 1) / 2;

    double acc[512];
    for (int c = 0; c < co; ++c) acc[c] = static_cast<double>(bias.data[static_cast<size_t>(c)]);

    const float* in = input.data.data() + (static_cast<int64_t>(n) * h) * w * ci;
    const float* kd = kernel.data.data();
    for (int ky = 0; ky < kh; ++ky) {
        const int iy = oy + ky - ph;
        if (iy < 0 || iy >= h) continue;
        for (int kx = 0; kx < kw; ++kx) {
            const int ix = ox + kx - pw;
            if (ix < 0 || ix >= w) continue;
            const float* xv = in + (static_cast<int64_t>(iy) * w + ix) * ci;
            const float* kv = kd + (static_cast<int64_t>(ky) * kw + kx) * ci * co;
            for (int c = 0; c < ci; ++c) {
                const double x = static_cast<double>(xv[c]);
                const float* kr = kv + static_cast<int64_t>(c) * co;
                for (int o = 0; o < co; ++o) acc[o] += x * static_cast<double>(kr[o]);
            }
        }
    }
    for (int c = 0; c < co; ++c) out[c] = static_cast<float>(acc[c]);
}

Tensor conv2d_same(const Tensor& input, const Tensor& kernel, const Tensor& bias) {
    validate_conv_shapes(input.shape, kernel.shape, bias.shape);
    if (kernel.shape[3] > 512)
        throw std::invalid_argument("conv2d_same: more than 512 output channels unsupported");
    const int nb = input.shape[0], h = input.shape[1], w = input.shape[2];
    const int co = kernel.shape[3];
    Tensor out = Tensor::zeros({nb, h, w, co});
    for (int n = 0; n < nb; ++n)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                conv_accum_at(input, kernel, bias, n, y, x, &out.at4(n, y, x, 0));
    return out;
}

Tensor relu(const Tensor& x) {
    Tensor out = x;
    for (float& v : out.data) v = relu_scalar(v);
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (same_shape(a, b)) {
        Tensor out = a;
        for (size_t i = 0; i < out.data.size(); ++i)
            out.data[i] = static_cast<float>(static_cast<double>(a.data[i]) + static_cast<double>(b.data[i]));
        return out;
    }
    if (b.rank() == 1 && a.rank() >= 1 && a.shape.back() == b.shape[0]) {
        Tensor out = a;
        const size_t c = static_cast<size_t>(b.shape[0]);
        for (size_t i = 0; i < out.data.size(); ++i)
            out.data[i] = static_cast<float>(static_cast<double>(a.data[i]) + static_cast<double>(b.data[i % c]));
        return out;
    }
    throw std::invalid_argument("add: incompatible shapes " + shape_str(a.shape) + " vs " + shape_str(b.shape));
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (same_shape(a, b)) {
        Tensor out = a;
        for (size_t i = 0; i < out.data.size(); ++i)
            out.data[i] = static_cast<float>(static_cast<double>(a.data[i]) * static_cast<double>(b.data[i]));
        return out;
    }
    if (b.rank() == 1 && a.rank() >= 1 && a.shape.back() == b.shape[0]) {
        Tensor out = a;
        const size_t c = static_cast<size_t>(b.shape[0]);
        for (size_t i = 0; i < out.data.size(); ++i)
            out.data[i] = static_cast<float>(static_cast<double>(a.data[i]) * static_cast<double>(b.data[i % c]));
        return out;
    }
    throw std::invalid_argument("mul: incompatible shapes " + shape_str(a.shape) + " vs " + shape_str(b.shape));
}

Tensor affine(const Tensor& x, double a, double b) {
    Tensor out = x;
    for (float& v : out.data) v = affine_scalar(v, a, b);
    return out;
}

Tensor scale(const Tensor& x, double a) { return affine(x, a, 0.0); }

Tensor clamp_min(const Tensor& x, double lo) {
    Tensor out = x;
    for (float& v : out.data) v = clamp_min_scalar(v, lo);
    return out;
}

double sum_f64(const Tensor& x) {
    double acc = 0.0;
    for (float v : x.data) acc += static_cast<double>(v);
    return acc;
}

} // namespace bridgegen
