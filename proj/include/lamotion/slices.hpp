// slices.hpp - Short temporal sequences of one axial slice, the 2D+t observation stream.
#pragma once

#include <cstdint>
#include <vector>

#include "lamotion/field.hpp"

namespace lamotion {

struct SliceSequence {
    int64_t width = 0;   // X
    int64_t height = 0;  // Y
    double spacing_x = 1.0;
    double spacing_y = 1.0;
    int64_t slice_index = 0;
    /// Frame of slices[0]; slices[s] comes from frame (end_frame - s) mod T.
    int end_frame = 0;
    /// Each slice is width x height, X-fastest.
    std::vector<std::vector<double>> slices;

    int n_steps() const { return static_cast<int>(slices.size()); }
};

void validate(const SliceSequence &s);

/// Axial slice `z_index` of frames t, t-1, ..., t-n_steps+1, wrapping around the cycle.
SliceSequence make_slice_sequence(const std::vector<Volume> &frames, int t, int64_t z_index, int n_steps);

} // namespace lamotion
