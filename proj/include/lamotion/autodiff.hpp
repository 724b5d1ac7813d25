// autodiff.hpp - A small tape-based reverse-mode differentiation engine.
//
// A Tape records primitive applications in execution order; backward() walks them in exact
// reverse order, so gradients are deterministic. Tensors are dense row-major arrays of doubles.
// Volumetric tensors use the layout (N, C, Z, Y, X) so X is the fastest axis, matching Volume.
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "lamotion/field.hpp"

namespace lamotion::ad {

struct Tensor {
    std::vector<int64_t> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int64_t> s, double fill = 0.0);
    Tensor(std::vector<int64_t> s, std::vector<double> d);
    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    size_t size() const { return data.size(); }
    size_t rank() const { return shape.size(); }
    /// Negative axes count from the end.
    int64_t dim(int axis) const;
    double item() const;
    std::string shape_str() const;
    friend bool operator==(const Tensor &, const Tensor &) = default;
};

size_t shape_numel(const std::vector<int64_t> &shape);

class Tape;

struct Var {
    Tape *tape = nullptr;
    int id = -1;

    const Tensor &value() const;
    const Tensor &grad() const;
};

class Tape {
  public:
    using BackwardFn = std::function<void(Tape &, int node)>;

    Var constant(Tensor t);
    Var leaf(Tensor t, bool requires_grad = true);

    const Tensor &value(int id) const { return nodes_.at(static_cast<size_t>(id)).value; }
    /// Gradient accumulated by backward(); zeros if the node received none.
    const Tensor &grad(int id) const;
    bool requires_grad(int id) const { return nodes_.at(static_cast<size_t>(id)).requires_grad; }

    Var record(const char *op, Tensor value, std::vector<Var> inputs, BackwardFn fn);

    /// Seeds d(out)/d(out) = 1 for a scalar output.
    void backward(Var out);
    void backward(Var out, const Tensor &seed);
    bool consumed() const { return consumed_; }

    // Used by primitive backward functions.
    const Tensor &out_grad(int node) const { return nodes_[static_cast<size_t>(node)].grad; }
    const std::vector<int> &inputs(int node) const { return nodes_[static_cast<size_t>(node)].inputs; }
    /// Gradient buffer of an input, allocated on first use; nullptr if it does not need one.
    Tensor *grad_buffer(int id);

    /// Running hash of piecewise-linear branch decisions (relu signs, interpolation cells).
    /// Two forward passes with equal signatures lie on the same linear piece.
    void note_branch(uint64_t v) { signature_ = (signature_ ^ v) * 1099511628211ULL; }
    uint64_t branch_signature() const { return signature_; }

    size_t size() const { return nodes_.size(); }

  private:
    struct Node {
        const char *op = "";
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        bool has_grad = false;
        std::vector<int> inputs;
        BackwardFn fn;
    };
    std::vector<Node> nodes_;
    bool consumed_ = false;
    uint64_t signature_ = 1469598103934665603ULL;
    Tensor empty_;
};

// ---- primitives -------------------------------------------------------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
/// a * s for a one-element tensor s.
Var scale_by(Var a, Var s);
Var sum(Var a);
Var mean(Var a);
Var mse(Var a, Var b);
Var relu(Var a);
Var softplus(Var a);
Var add_scalar(Var a, double s);
Var reshape(Var a, std::vector<int64_t> shape);
Var concat(const std::vector<Var> &xs, int axis);
/// x: (..., in), w: (out, in), b: (out) -> (..., out).
Var dense(Var x, Var w, Var b);
/// (R, C) -> (C, R).
Var transpose2d(Var x);
/// x: (N, C, Z, Y, X), w: (O, C, k, k, k), b: (O); zero padding k/2; stride 1 or 2.
Var conv3d(Var x, Var w, Var b, int stride);
/// x: (N, C, Y, X), w: (O, C, k, k), b: (O); zero padding k/2; stride 1 or 2.
Var conv2d(Var x, Var w, Var b, int stride);
/// 2x mean pooling over the trailing spatial axes (odd trailing voxels dropped).
Var avg_pool3d(Var x);
Var avg_pool2d(Var x);
/// Nearest-neighbour resize of (N, C, z, y, x) to (N, C, Z, Y, X).
Var upsample_nearest3d(Var x, int64_t Z, int64_t Y, int64_t X);
/// Pull-warps a constant volume by a field (1, 3, Z, Y, X) in mm; returns (1, 1, Z, Y, X).
Var warp(Var field, const Volume &vol);
/// Smoothness penalty of a field (1, 3, Z, Y, X) in mm on `grid`.
Var smoothness(Var field, const Grid &grid);
/// 0.5 * sum(mu^2 + sigma^2 - 1 - log sigma^2).
Var kl_standard_normal(Var mu, Var sigma);
/// Mean squared error over rows whose `row_mask` entry is 1; 0 when no row is selected.
Var masked_row_mse(Var pred, Var target, std::span<const uint8_t> row_mask);

// ---- parameters -------------------------------------------------------------------------------

/// Named parameter tensors, iterated in name order.
using ParamSet = std::map<std::string, Tensor>;
using ParamVars = std::map<std::string, Var>;

ParamVars bind_params(Tape &tape, const ParamSet &params);
ParamSet collect_grads(const Tape &tape, const ParamVars &vars);

} // namespace lamotion::ad
