// bandlimited.cpp - Separable synthesis/adjoint of trigonometric displacement fields.

#include "lamotion/bandlimited.hpp"

#include <numbers>
#include <stdexcept>
#include <string>

namespace lamotion {

BandlimitedDVF::BandlimitedDVF(Grid g, Index3 c) : grid(g), cutoff(c) {
    check_cutoff(g, c);
    cos_coeffs.assign(3 * mode_count(), 0.0);
    sin_coeffs.assign(3 * mode_count(), 0.0);
}

size_t BandlimitedDVF::mode_count() const {
    return static_cast<size_t>((2 * cutoff[0] + 1) * (2 * cutoff[1] + 1) * (2 * cutoff[2] + 1));
}

size_t BandlimitedDVF::index(int channel, int64_t kx, int64_t ky, int64_t kz) const {
    const int64_t mx = 2 * cutoff[0] + 1, my = 2 * cutoff[1] + 1;
    const int64_t m = (kx + cutoff[0]) + mx * ((ky + cutoff[1]) + my * (kz + cutoff[2]));
    return static_cast<size_t>(channel) * mode_count() + static_cast<size_t>(m);
}

void check_cutoff(const Grid &g, const Index3 &cutoff) {
    for (int a = 0; a < 3; ++a) {
        const auto K = cutoff[static_cast<size_t>(a)];
        if (K < 0) throw std::invalid_argument("Band-limit cutoff must be non-negative");
        if (2 * K >= g.dim(a)) {
            throw std::invalid_argument("Band-limit cutoff " + std::to_string(K) + " on axis " + std::to_string(a) +
                                        " is too large for grid dimension " + std::to_string(g.dim(a)) +
                                        " (needs 2K < dim)");
        }
    }
}

FourierSampler::FourierSampler(Index3 cutoff, std::array<std::vector<double>, 3> coords) : cutoff_(cutoff) {
    for (size_t a = 0; a < 3; ++a) {
        modes_[a] = static_cast<size_t>(2 * cutoff[a] + 1);
        samples_[a] = coords[a].size();
        if (samples_[a] == 0) throw std::invalid_argument("FourierSampler: empty coordinate axis");
        table_[a].resize(modes_[a] * samples_[a]);
        for (size_t m = 0; m < modes_[a]; ++m) {
            const double k = static_cast<double>(static_cast<int64_t>(m) - cutoff[a]);
            for (size_t s = 0; s < samples_[a]; ++s) {
                const double phase = 2.0 * std::numbers::pi * k * coords[a][s];
                table_[a][m * samples_[a] + s] = {std::cos(phase), std::sin(phase)};
            }
        }
    }
}

FourierSampler FourierSampler::for_grid(const Grid &g, Index3 cutoff) {
    check_cutoff(g, cutoff);
    std::array<std::vector<double>, 3> coords;
    for (int a = 0; a < 3; ++a) {
        const auto n = g.dim(a);
        for (int64_t i = 0; i < n; ++i) coords[static_cast<size_t>(a)].push_back(static_cast<double>(i) / static_cast<double>(n));
    }
    return FourierSampler(cutoff, std::move(coords));
}

FourierSampler FourierSampler::for_pooled_level(const Grid &fine, int level, Index3 coarse_dims, Index3 cutoff) {
    std::array<std::vector<double>, 3> coords;
    const double factor = static_cast<double>(int64_t{1} << level);
    for (int a = 0; a < 3; ++a) {
        const double n = static_cast<double>(fine.dim(a));
        for (int64_t i = 0; i < coarse_dims[static_cast<size_t>(a)]; ++i) {
            // Centre of the fine-voxel block averaged into coarse voxel i.
            const double centre = static_cast<double>(i) * factor + 0.5 * (factor - 1.0);
            coords[static_cast<size_t>(a)].push_back(centre / n);
        }
    }
    return FourierSampler(cutoff, std::move(coords));
}

Index3 FourierSampler::sample_dims() const {
    return {static_cast<int64_t>(samples_[0]), static_cast<int64_t>(samples_[1]), static_cast<int64_t>(samples_[2])};
}

void FourierSampler::synthesize(std::span<const double> cos_coeffs, std::span<const double> sin_coeffs,
                                std::span<double> out) const {
    using cplx = std::complex<double>;
    const size_t M = mode_count();
    const size_t Mx = modes_[0], My = modes_[1], Mz = modes_[2];
    const size_t Sx = samples_[0], Sy = samples_[1], Sz = samples_[2];
    const size_t N = Sx * Sy * Sz;
    if (cos_coeffs.size() != 3 * M || sin_coeffs.size() != 3 * M || out.size() != 3 * N) {
        throw std::invalid_argument("FourierSampler::synthesize: buffer size mismatch");
    }
    std::vector<cplx> g1(Sx * My * Mz), g2(Sx * Sy * Mz);
    for (size_t c = 0; c < 3; ++c) {
        const double *A = cos_coeffs.data() + c * M;
        const double *B = sin_coeffs.data() + c * M;
        // x: g1[sx, my, mz] = sum_mx C[mx,my,mz] Ex[mx,sx]
        std::fill(g1.begin(), g1.end(), cplx{});
        for (size_t mz = 0; mz < Mz; ++mz) {
            for (size_t my = 0; my < My; ++my) {
                cplx *row = g1.data() + Sx * (my + My * mz);
                for (size_t mx = 0; mx < Mx; ++mx) {
                    const size_t m = mx + Mx * (my + My * mz);
                    const cplx C{A[m], -B[m]};
                    if (C == cplx{}) continue;
                    const cplx *E = table_[0].data() + mx * Sx;
                    for (size_t sx = 0; sx < Sx; ++sx) row[sx] += C * E[sx];
                }
            }
        }
        // y: g2[sx, sy, mz] = sum_my g1[sx,my,mz] Ey[my,sy]
        std::fill(g2.begin(), g2.end(), cplx{});
        for (size_t mz = 0; mz < Mz; ++mz) {
            for (size_t my = 0; my < My; ++my) {
                const cplx *src = g1.data() + Sx * (my + My * mz);
                const cplx *E = table_[1].data() + my * Sy;
                for (size_t sy = 0; sy < Sy; ++sy) {
                    cplx *dst = g2.data() + Sx * (sy + Sy * mz);
                    const cplx e = E[sy];
                    for (size_t sx = 0; sx < Sx; ++sx) dst[sx] += src[sx] * e;
                }
            }
        }
        // z: out[sx,sy,sz] = Re sum_mz g2[sx,sy,mz] Ez[mz,sz]
        double *o = out.data() + c * N;
        std::fill(o, o + N, 0.0);
        for (size_t mz = 0; mz < Mz; ++mz) {
            const cplx *E = table_[2].data() + mz * Sz;
            for (size_t sz = 0; sz < Sz; ++sz) {
                const double er = E[sz].real(), ei = E[sz].imag();
                double *dst = o + Sx * Sy * sz;
                const cplx *src = g2.data() + Sx * Sy * mz;
                for (size_t n = 0; n < Sx * Sy; ++n) dst[n] += src[n].real() * er - src[n].imag() * ei;
            }
        }
    }
}

void FourierSampler::adjoint(std::span<const double> g, std::span<double> d_cos, std::span<double> d_sin) const {
    using cplx = std::complex<double>;
    const size_t M = mode_count();
    const size_t Mx = modes_[0], My = modes_[1], Mz = modes_[2];
    const size_t Sx = samples_[0], Sy = samples_[1], Sz = samples_[2];
    const size_t N = Sx * Sy * Sz;
    if (g.size() != 3 * N || d_cos.size() != 3 * M || d_sin.size() != 3 * M) {
        throw std::invalid_argument("FourierSampler::adjoint: buffer size mismatch");
    }
    std::vector<cplx> h1(Sx * Sy * Mz), h2(Sx * My * Mz);
    for (size_t c = 0; c < 3; ++c) {
        const double *gc = g.data() + c * N;
        // z: h1[sx,sy,mz] = sum_sz g[sx,sy,sz] Ez[mz,sz]
        std::fill(h1.begin(), h1.end(), cplx{});
        for (size_t mz = 0; mz < Mz; ++mz) {
            const cplx *E = table_[2].data() + mz * Sz;
            cplx *dst = h1.data() + Sx * Sy * mz;
            for (size_t sz = 0; sz < Sz; ++sz) {
                const cplx e = E[sz];
                const double *src = gc + Sx * Sy * sz;
                for (size_t n = 0; n < Sx * Sy; ++n) dst[n] += src[n] * e;
            }
        }
        // y: h2[sx,my,mz] = sum_sy h1[sx,sy,mz] Ey[my,sy]
        std::fill(h2.begin(), h2.end(), cplx{});
        for (size_t mz = 0; mz < Mz; ++mz) {
            for (size_t my = 0; my < My; ++my) {
                const cplx *E = table_[1].data() + my * Sy;
                cplx *dst = h2.data() + Sx * (my + My * mz);
                for (size_t sy = 0; sy < Sy; ++sy) {
                    const cplx *src = h1.data() + Sx * (sy + Sy * mz);
                    const cplx e = E[sy];
                    for (size_t sx = 0; sx < Sx; ++sx) dst[sx] += src[sx] * e;
                }
            }
        }
        // x: H[mx,my,mz] = sum_sx h2[sx,my,mz] Ex[mx,sx]
        for (size_t mz = 0; mz < Mz; ++mz) {
            for (size_t my = 0; my < My; ++my) {
                const cplx *src = h2.data() + Sx * (my + My * mz);
                for (size_t mx = 0; mx < Mx; ++mx) {
                    const cplx *E = table_[0].data() + mx * Sx;
                    cplx acc{};
                    for (size_t sx = 0; sx < Sx; ++sx) acc += src[sx] * E[sx];
                    const size_t m = mx + Mx * (my + My * mz);
                    d_cos[c * M + m] = acc.real();
                    d_sin[c * M + m] = acc.imag();
                }
            }
        }
    }
}

DisplacementField synthesize_bandlimited(const BandlimitedDVF &b) {
    const auto sampler = FourierSampler::for_grid(b.grid, b.cutoff);
    const size_t N = b.grid.voxel_count();
    std::vector<double> u(3 * N);
    sampler.synthesize(b.cos_coeffs, b.sin_coeffs, u);
    DisplacementField f(b.grid);
    for (size_t n = 0; n < N; ++n) f.vectors[n] = {u[n], u[N + n], u[2 * N + n]};
    return f;
}

BandlimitedDVF project_bandlimited(const DisplacementField &f, Index3 cutoff) {
    BandlimitedDVF b(f.grid, cutoff);
    const auto sampler = FourierSampler::for_grid(f.grid, cutoff);
    const size_t N = f.grid.voxel_count();
    std::vector<double> u(3 * N);
    for (size_t n = 0; n < N; ++n) {
        u[n] = f.vectors[n].x;
        u[N + n] = f.vectors[n].y;
        u[2 * N + n] = f.vectors[n].z;
    }
    sampler.adjoint(u, b.cos_coeffs, b.sin_coeffs);
    const double inv = 1.0 / static_cast<double>(N);
    for (auto &v : b.cos_coeffs) v *= inv;
    for (auto &v : b.sin_coeffs) v *= inv;
    return b;
}

} // namespace lamotion
