#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "bridgegen/tensor.hpp"

namespace bridgegen {

class Tape;

// Handle to a tensor recorded on a tape.
struct Val {
    Tape* tape = nullptr;
    int id = -1;

    const Tensor& value() const;
    const Shape& shape() const;
};

using GradMap = std::map<std::string, Tensor>;

// Record of one forward pass. Ops append nodes in execution order;
// backward() replays them once, in reverse, accumulating adjoints.
class Tape {
public:
    explicit Tape(bool track_gradients = true) : track_(track_gradients) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool tracking() const { return track_; }

    Val param(const std::string& name, const Tensor& value);
    Val input(Tensor value);    // leaf that gradients flow through but are not reported for
    Val constant(Tensor value); // leaf with no gradient

    // Fused ops from other modules attach here. The backprop function
    // receives the node's accumulated output gradient.
    using BackpropFn = std::function<void(Tape&, const Tensor& out_grad)>;
    Val make_node(Tensor value, const std::vector<Val>& inputs, BackpropFn fn);

    const Tensor& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
    bool requires_grad(int id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }

    // Adds `g` into the gradient buffer of node `id` (no-op if the node
    // does not require gradients).
    void accumulate_grad(int id, const Tensor& g);
    void accumulate_grad_at(int id, int64_t flat_index, double g);

    // d(loss)/d(param) for every param registered on this tape; params that
    // did not participate in the loss get zero gradients.
    GradMap backward(Val loss);

    size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad; // empty until touched during backward
        bool requires_grad = false;
        std::string param_name; // nonempty for param leaves
        BackpropFn backprop;    // null for leaves
    };

    friend struct Val;

    Tensor& grad_buffer(int id);
    int push(Node n);

    bool track_;
    std::vector<Node> nodes_;
    std::vector<int> param_ids_;
};

// ---- tape ops --------------------------------------------------------------

Val conv2d_same(Val input, Val kernel, Val bias);
Val relu(Val x);
Val add(Val a, Val b); // equal shapes, or b rank-1 broadcast over trailing dim
Val mul(Val a, Val b); // same shape rules as add
Val affine(Val x, double a, double b);
Val scale(Val x, double a);
Val clamp_min(Val x, double lo);
Val channel_slice(Val x, int c0, int c1); // [..., c0:c1) of the trailing dim
Val sum(Val x);                           // full reduction to a scalar

// Central differences, (f(p+h)-f(p-h)) / (p+h - p-h) per scalar entry.
// The denominator uses the actually representable perturbed values so the
// f32 rounding of the step cancels. `f` must be deterministic.
GradMap finite_diff_gradient(const std::function<double(const ParamSet&)>& f,
                             const ParamSet& params, double h);

} // namespace bridgegen
