// slices.cpp - Slice sequence extraction.

#include "lamotion/slices.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace lamotion {

void validate(const SliceSequence &s) {
    if (s.slices.empty()) throw std::invalid_argument("SliceSequence: n_steps must be >= 1");
    if (s.width < 1 || s.height < 1) throw std::invalid_argument("SliceSequence: empty slice shape");
    const size_t n = static_cast<size_t>(s.width * s.height);
    for (const auto &sl : s.slices) {
        if (sl.size() != n) throw std::invalid_argument("SliceSequence: slices differ in shape");
        for (double v : sl) {
            if (!std::isfinite(v)) throw std::invalid_argument("SliceSequence: non-finite value");
        }
    }
}

SliceSequence make_slice_sequence(const std::vector<Volume> &frames, int t, int64_t z_index, int n_steps) {
    if (frames.empty()) throw std::invalid_argument("make_slice_sequence: no frames");
    if (n_steps < 1) throw std::invalid_argument("make_slice_sequence: n_steps must be >= 1");
    const int T = static_cast<int>(frames.size());
    if (t < 0 || t >= T) throw std::invalid_argument("make_slice_sequence: frame " + std::to_string(t) + " out of range");
    const Grid &g = frames[0].grid;
    if (z_index < 0 || z_index >= g.dim(2)) throw std::invalid_argument("make_slice_sequence: slice index out of range");

    SliceSequence s;
    s.width = g.dim(0);
    s.height = g.dim(1);
    s.spacing_x = g.spacing().x;
    s.spacing_y = g.spacing().y;
    s.slice_index = z_index;
    s.end_frame = t;
    const size_t plane = static_cast<size_t>(s.width * s.height);
    for (int step = 0; step < n_steps; ++step) {
        const int f = ((t - step) % T + T) % T;
        if (!(frames[static_cast<size_t>(f)].grid == g)) throw std::invalid_argument("make_slice_sequence: frames differ in grid");
        const auto first = frames[static_cast<size_t>(f)].values.begin() + static_cast<std::ptrdiff_t>(plane * static_cast<size_t>(z_index));
        s.slices.emplace_back(first, first + static_cast<std::ptrdiff_t>(plane));
    }
    return s;
}

} // namespace lamotion
