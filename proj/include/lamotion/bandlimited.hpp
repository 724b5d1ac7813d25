// bandlimited.hpp - Displacement fields expressed as truncated trigonometric series.
//
// Each displacement component is
//     c(x) = sum_{k in [-K,K]^3} A_k cos(2 pi k . xh) + B_k sin(2 pi k . xh)
// with xh = (i/X, j/Y, k/Z) the normalised grid coordinate of a node. Synthesis is evaluated
// separably (one axis at a time) so the cost is far below the naive voxels x modes product.
#pragma once

#include <array>
#include <complex>
#include <span>
#include <vector>

#include "lamotion/field.hpp"

namespace lamotion {

struct BandlimitedDVF {
    Grid grid;
    Index3 cutoff{0, 0, 0};
    /// 3 channels x mode_count() each; mode index is kx-fastest over [-K,K].
    std::vector<double> cos_coeffs;
    std::vector<double> sin_coeffs;

    BandlimitedDVF() = default;
    BandlimitedDVF(Grid g, Index3 cutoff);

    size_t mode_count() const;
    size_t index(int channel, int64_t kx, int64_t ky, int64_t kz) const;
};

/// Throws unless 0 <= K_a < dims_a / 2 on every axis.
void check_cutoff(const Grid &g, const Index3 &cutoff);

/// Evaluates a coefficient set at an arbitrary separable lattice of normalised coordinates.
/// Used directly for the grid itself and for coarser pyramid levels of the same field.
class FourierSampler {
  public:
    FourierSampler(Index3 cutoff, std::array<std::vector<double>, 3> normalized_coords);

    /// Nodes of `g` at xh = i / dim.
    static FourierSampler for_grid(const Grid &g, Index3 cutoff);
    /// Nodes of a pyramid level obtained by 2^level mean pooling of `fine`; evaluated in the
    /// fine grid's normalised coordinates so coefficients transfer exactly across levels.
    static FourierSampler for_pooled_level(const Grid &fine, int level, Index3 coarse_dims, Index3 cutoff);

    size_t mode_count() const { return modes_[0] * modes_[1] * modes_[2]; }
    Index3 sample_dims() const;

    /// out: 3 x N channel-major displacements.
    void synthesize(std::span<const double> cos_coeffs, std::span<const double> sin_coeffs, std::span<double> out) const;
    /// Adjoint of synthesize: d_cos[k] = sum_x g(x) cos(phi_k(x)), d_sin[k] = sum_x g(x) sin(phi_k(x)).
    void adjoint(std::span<const double> g, std::span<double> d_cos, std::span<double> d_sin) const;

  private:
    Index3 cutoff_;
    std::array<size_t, 3> modes_{};
    std::array<size_t, 3> samples_{};
    // table_[a][m * samples + s] = exp(i 2 pi k_m xh_s)
    std::array<std::vector<std::complex<double>>, 3> table_;
};

DisplacementField synthesize_bandlimited(const BandlimitedDVF &b);

/// Least-squares projection of a field onto the band (exact inverse of synthesis for fields
/// that are already band-limited on this grid).
BandlimitedDVF project_bandlimited(const DisplacementField &f, Index3 cutoff);

} // namespace lamotion
