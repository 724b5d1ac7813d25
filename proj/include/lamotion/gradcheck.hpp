// gradcheck.hpp - Finite-difference check of every autodiff primitive and the full model loss.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace lamotion {

struct GradCheckItem {
    std::string name;
    double max_rel_error = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

/// Primitives on random inputs at relative tolerance 1e-5; the end-to-end model loss (through
/// the warp) on an 8^3 phantom at 1e-4.
std::vector<GradCheckItem> run_gradcheck_suite(uint64_t seed = 0);

} // namespace lamotion
