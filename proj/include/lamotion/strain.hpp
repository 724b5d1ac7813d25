// strain.hpp - Green-Lagrange strain of a displacement field.
#pragma once

#include <vector>

#include "lamotion/field.hpp"

namespace lamotion {

struct StrainField {
    Grid grid;
    /// E = (F^T F - I) / 2 with F = I + grad u, per voxel.
    std::vector<Mat3> tensors;

    std::vector<double> trace() const;
    std::vector<double> max_principal() const;
};

StrainField green_lagrange(const DisplacementField &dvf);

/// Eigenvalues of a symmetric 3x3 matrix in ascending order.
Vec3 symmetric_eigenvalues(const Mat3 &m);

} // namespace lamotion
