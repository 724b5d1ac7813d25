// strain.cpp - Green-Lagrange strain and symmetric eigenvalues.

#include "lamotion/strain.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace lamotion {

StrainField green_lagrange(const DisplacementField &dvf) {
    const auto J = spatial_jacobian(dvf);
    StrainField s{dvf.grid, std::vector<Mat3>(J.tensors.size())};
    for (size_t n = 0; n < J.tensors.size(); ++n) {
        Mat3 F = J.tensors[n];
        for (int a = 0; a < 3; ++a) F(a, a) += 1.0;
        Mat3 &E = s.tensors[n];
        for (int r = 0; r < 3; ++r)
            for (int c = r; c < 3; ++c) {
                double v = 0.0;
                for (int m = 0; m < 3; ++m) v += F(m, r) * F(m, c);
                v = 0.5 * (v - (r == c ? 1.0 : 0.0));
                E(r, c) = E(c, r) = v;
            }
    }
    return s;
}

std::vector<double> StrainField::trace() const {
    std::vector<double> out(tensors.size());
    for (size_t n = 0; n < tensors.size(); ++n) out[n] = tensors[n](0, 0) + tensors[n](1, 1) + tensors[n](2, 2);
    return out;
}

std::vector<double> StrainField::max_principal() const {
    std::vector<double> out(tensors.size());
    for (size_t n = 0; n < tensors.size(); ++n) out[n] = symmetric_eigenvalues(tensors[n]).z;
    return out;
}

Vec3 symmetric_eigenvalues(const Mat3 &m) {
    const double p1 = m(0, 1) * m(0, 1) + m(0, 2) * m(0, 2) + m(1, 2) * m(1, 2);
    if (p1 == 0.0) {
        std::array<double, 3> d{m(0, 0), m(1, 1), m(2, 2)};
        std::sort(d.begin(), d.end());
        return {d[0], d[1], d[2]};
    }
    // Trigonometric solution of the characteristic cubic.
    const double q = (m(0, 0) + m(1, 1) + m(2, 2)) / 3.0;
    const double p2 = (m(0, 0) - q) * (m(0, 0) - q) + (m(1, 1) - q) * (m(1, 1) - q) + (m(2, 2) - q) * (m(2, 2) - q) + 2.0 * p1;
    const double p = std::sqrt(p2 / 6.0);
    Mat3 B = m;
    for (int a = 0; a < 3; ++a) B(a, a) -= q;
    for (double &v : B.v) v /= p;
    const double r = std::clamp(B.determinant() / 2.0, -1.0, 1.0);
    const double phi = std::acos(r) / 3.0;
    const double hi = q + 2.0 * p * std::cos(phi);
    const double lo = q + 2.0 * p * std::cos(phi + 2.0 * std::numbers::pi / 3.0);
    return {lo, 3.0 * q - hi - lo, hi};
}

} // namespace lamotion
