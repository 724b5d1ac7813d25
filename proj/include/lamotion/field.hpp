// field.hpp - Volumes, masks, displacement fields and the warping/differentiation operations on them.
//
// Conventions used throughout the library:
//  - displacements are in millimetres along the world axes;
//  - warping is backward (pull): out(x) = in(x + u(x)), with u defined on the output grid;
//  - sampling outside the grid clamps to the nearest boundary voxel.
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "lamotion/grid.hpp"

namespace lamotion {

struct Volume {
    Grid grid;
    std::vector<double> values;
    std::optional<int> frame_index;

    Volume() = default;
    explicit Volume(Grid g, double fill = 0.0);
    Volume(Grid g, std::vector<double> v);

    double &at(int64_t i, int64_t j, int64_t k) { return values[grid.linear(i, j, k)]; }
    double at(int64_t i, int64_t j, int64_t k) const { return values[grid.linear(i, j, k)]; }
};

struct Mask {
    Grid grid;
    std::vector<uint8_t> labels;

    Mask() = default;
    explicit Mask(Grid g);
    Mask(Grid g, std::vector<uint8_t> l);

    uint8_t &at(int64_t i, int64_t j, int64_t k) { return labels[grid.linear(i, j, k)]; }
    uint8_t at(int64_t i, int64_t j, int64_t k) const { return labels[grid.linear(i, j, k)]; }
    size_t count() const;
};

struct DisplacementField {
    Grid grid;
    std::vector<Vec3> vectors;
    int from_frame = 0;
    int to_frame = 0;

    DisplacementField() = default;
    explicit DisplacementField(Grid g, int from = 0, int to = 0);

    Vec3 &at(int64_t i, int64_t j, int64_t k) { return vectors[grid.linear(i, j, k)]; }
    const Vec3 &at(int64_t i, int64_t j, int64_t k) const { return vectors[grid.linear(i, j, k)]; }
    bool is_identity() const;
    double mean_magnitude() const;
};

/// Per-voxel J(r,c) = d u_r / d x_c, per millimetre.
struct JacobianField {
    Grid grid;
    std::vector<Mat3> tensors;
};

/// Throws if values are non-finite or the from/to frame stamps are inconsistent.
void validate(const Volume &v);
void validate(const Mask &m);
void validate(const DisplacementField &f);

Volume to_volume(const Mask &m);

/// Binary dilation with a (2r+1)^3 cube.
Mask dilate_mask(const Mask &m, int radius);

// ---- sampling -------------------------------------------------------------------------------

/// Trilinear sample at a continuous voxel index, clamped to the grid. When `grad` is given it
/// receives d(value)/d(index) (zero along axes where the point was clamped).
double sample_index(const Grid &g, std::span<const double> values, const Vec3 &ci, Vec3 *grad = nullptr);

double trilinear_sample(const Volume &vol, const Vec3 &p_world);
Vec3 sample_field(const DisplacementField &f, const Vec3 &p_world);
/// Same as sample_field but at a continuous voxel index.
Vec3 sample_field_index(const DisplacementField &f, const Vec3 &ci);

// ---- warping --------------------------------------------------------------------------------

Volume warp_volume(const Volume &vol, const DisplacementField &dvf);
Mask warp_mask(const Mask &mask, const DisplacementField &dvf, double threshold = 0.5);

/// Warp plus d(out)/d(u) per voxel (world-mm units), for losses that differentiate through the warp.
void warp_with_gradient(const Volume &vol, const DisplacementField &dvf, std::vector<double> &out,
                        std::vector<Vec3> &d_out_du);

/// result(x) = inner(x) + outer(x + inner(x)): apply inner, then outer.
DisplacementField compose(const DisplacementField &outer, const DisplacementField &inner);

// ---- differentiation ------------------------------------------------------------------------

JacobianField spatial_jacobian(const DisplacementField &dvf);

/// Mean over voxels of the squared Frobenius norm of the spatial Jacobian.
double smoothness_loss(const DisplacementField &dvf);

/// Smoothness loss and its gradient with respect to every displacement component.
double smoothness_loss_and_gradient(const DisplacementField &dvf, std::vector<Vec3> &grad);

/// Raw-buffer variants shared with the autodiff engine: `u` is channel-major (3 x N), X-fastest.
double smoothness_loss_raw(const Grid &g, std::span<const double> u, std::span<double> grad_out);

} // namespace lamotion
