// registration.hpp - Band-limited intensity registration of frame pairs and whole cycles.
#pragma once

#include <cstdint>
#include <vector>

#include "lamotion/bandlimited.hpp"
#include "lamotion/field.hpp"

namespace lamotion {

enum class SimilarityKind { MSE, LNCC };

struct Similarity {
    SimilarityKind kind = SimilarityKind::MSE;
    /// Cubic LNCC window edge in voxels at full resolution (odd).
    int window = 9;
};

struct RegConfig {
    Similarity similarity;
    double lambda_smooth = 0.01;
    Index3 cutoff{6, 6, 6};
    int levels = 3;
    int iters_per_level = 150;
    double lr = 0.05;
    uint64_t seed = 0;

    /// Throws std::invalid_argument describing the first violated constraint for this grid.
    void validate(const Grid &g) const;
};

struct LossTerms {
    double total = 0.0;
    double similarity = 0.0;
    double smoothness = 0.0;
};

struct RegResult {
    DisplacementField dvf;
    BandlimitedDVF coefficients;
    /// One entry per iteration: the objective of the pyramid level being optimised, before the step.
    std::vector<LossTerms> loss_trace;
    /// Pyramid level of each trace entry (0 = full resolution).
    std::vector<int> trace_level;
    /// Full-resolution objective at the starting and the returned coefficients.
    LossTerms initial_loss;
    LossTerms final_loss;
    bool converged = false;
};

/// MSE: mean squared difference. LNCC: 1 - mean over voxels of the squared local correlation
/// coefficient in a window x window x window box (truncated at the grid edge).
double similarity_loss(const Volume &a, const Volume &b, const Similarity &sim);

/// Similarity loss and its gradient with respect to the values of `a`.
double similarity_loss_and_gradient(const Volume &a, const Volume &b, const Similarity &sim, std::vector<double> &grad_a);

/// Level 0 is `vol`; each further level is 2x2x2 mean pooled with doubled spacing. Throws if a
/// level would have fewer than 2 voxels along an axis.
std::vector<Volume> build_pyramid(const Volume &vol, int levels);

/// Finds u minimising similarity(warp(moving, u), fixed) + lambda * smoothness(u), so that
/// warp(moving, u) resembles `fixed`. `init` warm-starts the coefficients.
RegResult register_pair(const Volume &fixed, const Volume &moving, const RegConfig &cfg, const BandlimitedDVF *init = nullptr);

/// Fields dvf_t for every t != ref, each pulling the reference frame onto frame t. Frames are
/// processed outward from the reference; each starts from its neighbour's solution.
std::vector<DisplacementField> track_cycle(const std::vector<Volume> &frames, int ref, const RegConfig &cfg);

} // namespace lamotion
