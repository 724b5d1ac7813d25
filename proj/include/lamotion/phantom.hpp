// phantom.hpp - Synthetic beating-shell sequences with exact ground-truth displacement fields.
//
// Frame 0 is a thin ellipsoidal shell (bright wall around a darker pool) with a smooth seeded
// texture. Frame t is frame 0 pulled through
//     u(x, t) = w(t) [a (x - c) + tau z x (x - c)],   w(t) = (1 - cos(2 pi t / T)) / 2,
// so the imaged shell contracts and twists about the grid centre c, returning to rest at t = T.
#pragma once

#include <cstdint>
#include <vector>

#include "lamotion/field.hpp"
#include "lamotion/slices.hpp"

namespace lamotion {

struct PhantomConfig {
    Index3 dims{32, 32, 32};
    double spacing_mm = 1.8;
    int frames = 24;
    double wall_thickness_vox = 2.0;
    /// Radial factor a at peak phase; positive values contract the imaged shell.
    double amplitude = 0.12;
    /// Twist tau about z at peak phase, radians per unit radius.
    double twist_rad = 0.05;
    /// Noise standard deviation as a fraction of the 0.1..0.7 intensity range.
    double noise_std = 0.02;
    /// Standard deviation of the band-pass texture.
    double texture_scale = 0.05;
    int slice_steps = 8;
    uint64_t seed = 0;

    Grid grid() const;
    void validate() const;
};

struct PhantomCase {
    PhantomConfig config;
    std::vector<Volume> frames;
    std::vector<Mask> masks;
    /// gt_dvfs[t-1] maps frame 0 to frame t (pull from frame 0 on frame t's grid), t = 1..T-1.
    std::vector<DisplacementField> gt_dvfs;
    /// Myocardial-wall analogue of frame 0.
    Mask wall;
    int64_t slice_index = 0;
    std::vector<SliceSequence> sequences;
};

/// w(t) scaled so that analytic_dvf(cfg, t) = phase_weight(cfg, t) * [a (x - c) + tau z x (x - c)].
double phase_weight(const PhantomConfig &cfg, double t);
Vec3 phantom_center(const PhantomConfig &cfg);
Vec3 analytic_displacement(const PhantomConfig &cfg, double t, const Vec3 &p_world);
DisplacementField analytic_dvf(const PhantomConfig &cfg, int t);

/// Noise-free frame-0 intensity at a world point.
double reference_intensity(const PhantomConfig &cfg, const Vec3 &p_world);

/// Throws std::runtime_error if det(I + grad u) drops to 0.2 or below at any frame.
void check_injective(const PhantomConfig &cfg);

PhantomCase generate_case(const PhantomConfig &cfg);

/// Voxels within one voxel of the frame-0 wall; the region where registration accuracy is judged.
Mask shell_region(const PhantomCase &c);

struct EndpointError {
    double mean_mm = 0.0;
    double max_mm = 0.0;
};

EndpointError endpoint_error(const DisplacementField &est, const DisplacementField &gt, const Mask *region = nullptr);

} // namespace lamotion
