#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace bridgegen {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Dense f32 tensor, row-major. Image batches are laid out NHWC.
struct Tensor {
    Shape shape;
    std::vector<float> data;

    Tensor() = default;
    Tensor(Shape s, std::vector<float> d);

    static Tensor zeros(const Shape& s);
    static Tensor full(const Shape& s, float v);
    static Tensor scalar(float v) { return full({1}, v); }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }
    bool is_scalar() const { return numel() == 1; }

    float& at4(int n, int y, int x, int c) {
        return data[static_cast<size_t>(((static_cast<int64_t>(n) * shape[1] + y) * shape[2] + x) * shape[3] + c)];
    }
    float at4(int n, int y, int x, int c) const {
        return data[static_cast<size_t>(((static_cast<int64_t>(n) * shape[1] + y) * shape[2] + x) * shape[3] + c)];
    }
    float& at2(int r, int c) { return data[static_cast<size_t>(r) * shape[1] + c]; }
    float at2(int r, int c) const { return data[static_cast<size_t>(r) * shape[1] + c]; }
};

// Named parameters. std::map keeps iteration sorted by name, which fixes
// the order of rng draws, serialization, and gradient reductions.
using ParamSet = std::map<std::string, Tensor>;

bool same_shape(const Tensor& a, const Tensor& b);

// ---- raw kernels (no autograd) -------------------------------------------
// These are the single source of truth for forward arithmetic: the tape ops
// and the incremental sampler both call them, which is what makes fast-mode
// sampling bit-identical to a full forward pass.

inline float unit_from_u8(uint8_t v) { return static_cast<float>(static_cast<double>(v) / 255.0); }

inline float relu_scalar(float v) { return v > 0.0f ? v : 0.0f; }

inline float affine_scalar(float v, double a, double b) {
    return static_cast<float>(a * static_cast<double>(v) + b);
}

inline float clamp_min_scalar(float v, double lo) {
    return v > lo ? v : static_cast<float>(lo);
}

// Accumulates one spatial position of a same-padded convolution for all
// output channels. f64 accumulators, f32 result. `out` must hold co floats.
void conv_accum_at(const Tensor& input, const Tensor& kernel, const Tensor& bias,
                   int n, int oy, int ox, float* out);

Tensor conv2d_same(const Tensor& input, const Tensor& kernel, const Tensor& bias);
Tensor relu(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b); // equal shapes, or b rank-1 over trailing dim
Tensor mul(const Tensor& a, const Tensor& b); // equal shapes, or b rank-1 over trailing dim
Tensor affine(const Tensor& x, double a, double b);
Tensor scale(const Tensor& x, double a);
Tensor clamp_min(const Tensor& x, double lo);
double sum_f64(const Tensor& x);

void validate_conv_shapes(const Shape& input, const Shape& kernel, const Shape& bias);

} // namespace bridgegen
