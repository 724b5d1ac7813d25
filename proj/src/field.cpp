// field.cpp - Volumes, masks, displacement fields: sampling, warping, composition, derivatives.

#include "lamotion/field.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace lamotion {

Grid::Grid(Index3 dims, Vec3 spacing_mm, Vec3 origin_mm) : dims_(dims), spacing_(spacing_mm), origin_(origin_mm) {
    for (int a = 0; a < 3; ++a) {
        if (dims_[static_cast<size_t>(a)] < 2) {
            throw std::invalid_argument("Grid dimension " + std::to_string(a) + " must be >= 2, got " +
                                        std::to_string(dims_[static_cast<size_t>(a)]));
        }
        if (!(spacing_[a] > 0.0) || !std::isfinite(spacing_[a])) {
            throw std::invalid_argument("Grid spacing must be positive and finite");
        }
        if (!std::isfinite(origin_[a])) throw std::invalid_argument("Grid origin must be finite");
    }
}

double Grid::min_spacing() const { return std::min({spacing_.x, spacing_.y, spacing_.z}); }

Volume::Volume(Grid g, double fill) : grid(g), values(g.voxel_count(), fill) {}

Volume::Volume(Grid g, std::vector<double> v) : grid(g), values(std::move(v)) {
    if (values.size() != grid.voxel_count()) {
        throw std::invalid_argument("Volume value count " + std::to_string(values.size()) + " does not match grid (" +
                                    std::to_string(grid.voxel_count()) + ")");
    }
}

Mask::Mask(Grid g) : grid(g), labels(g.voxel_count(), 0) {}

Mask::Mask(Grid g, std::vector<uint8_t> l) : grid(g), labels(std::move(l)) {
    if (labels.size() != grid.voxel_count()) throw std::invalid_argument("Mask label count does not match grid");
}

size_t Mask::count() const {
    return static_cast<size_t>(std::count_if(labels.begin(), labels.end(), [](uint8_t v) { return v != 0; }));
}

DisplacementField::DisplacementField(Grid g, int from, int to)
    : grid(g), vectors(g.voxel_count(), Vec3{}), from_frame(from), to_frame(to) {}

bool DisplacementField::is_identity() const {
    return std::all_of(vectors.begin(), vectors.end(), [](const Vec3 &v) { return v.x == 0.0 && v.y == 0.0 && v.z == 0.0; });
}

double DisplacementField::mean_magnitude() const {
    double s = 0.0;
    for (const auto &v : vectors) s += norm(v);
    return vectors.empty() ? 0.0 : s / static_cast<double>(vectors.size());
}

void validate(const Volume &v) {
    if (v.values.size() != v.grid.voxel_count()) throw std::invalid_argument("Volume size does not match its grid");
    for (double x : v.values) {
        if (!std::isfinite(x)) throw std::invalid_argument("Volume contains non-finite values");
    }
}

void validate(const Mask &m) {
    if (m.labels.size() != m.grid.voxel_count()) throw std::invalid_argument("Mask size does not match its grid");
    for (auto l : m.labels) {
        if (l > 1) throw std::invalid_argument("Mask labels must be 0 or 1");
    }
}

void validate(const DisplacementField &f) {
    if (f.vectors.size() != f.grid.voxel_count()) throw std::invalid_argument("Displacement field size does not match its grid");
    for (const auto &v : f.vectors) {
        if (!is_finite(v)) throw std::invalid_argument("Displacement field contains non-finite components");
    }
    if (f.from_frame == f.to_frame && !f.is_identity()) {
        throw std::invalid_argument("Displacement field maps frame " + std::to_string(f.from_frame) +
                                    " onto itself but is not the identity");
    }
}

Mask dilate_mask(const Mask &m, int radius) {
    if (radius < 0) throw std::invalid_argument("dilate_mask: negative radius");
    const auto &g = m.grid;
    Mask out(g);
    const int64_t X = g.dim(0), Y = g.dim(1), Z = g.dim(2);
    for (int64_t k = 0; k < Z; ++k)
        for (int64_t j = 0; j < Y; ++j)
            for (int64_t i = 0; i < X; ++i) {
                if (!m.at(i, j, k)) continue;
                for (int64_t c = std::max<int64_t>(0, k - radius); c <= std::min(Z - 1, k + radius); ++c)
                    for (int64_t b = std::max<int64_t>(0, j - radius); b <= std::min(Y - 1, j + radius); ++b)
                        for (int64_t a = std::max<int64_t>(0, i - radius); a <= std::min(X - 1, i + radius); ++a) out.at(a, b, c) = 1;
            }
    return out;
}

Volume to_volume(const Mask &m) {
    Volume v(m.grid);
    for (size_t n = 0; n < m.labels.size(); ++n) v.values[n] = m.labels[n] ? 1.0 : 0.0;
    return v;
}

namespace {

void require_same_grid(const Grid &a, const Grid &b, const char *what) {
    if (!(a == b)) throw std::invalid_argument(std::string(what) + ": grid mismatch");
}

// Lower cell corner and fractional offset along one axis, clamped to [0, n-1].
struct AxisCell {
    int64_t i0;
    double t;
    bool clamped;
};

inline AxisCell axis_cell(double c, int64_t n) {
    AxisCell a{0, 0.0, false};
    const double hi = static_cast<double>(n - 1);
    if (c <= 0.0) {
        a.clamped = c < 0.0;
        c = 0.0;
    } else if (c >= hi) {
        a.clamped = c > hi;
        c = hi;
    }
    a.i0 = std::min<int64_t>(static_cast<int64_t>(std::floor(c)), n - 2);
    a.t = c - static_cast<double>(a.i0);
    return a;
}

inline double lerp(double a, double b, double t) { return (1.0 - t) * a + t * b; }

} // namespace

double sample_index(const Grid &g, std::span<const double> values, const Vec3 &ci, Vec3 *grad) {
    const auto ax = axis_cell(ci.x, g.dim(0));
    const auto ay = axis_cell(ci.y, g.dim(1));
    const auto az = axis_cell(ci.z, g.dim(2));
    const size_t sx = 1;
    const auto sy = static_cast<size_t>(g.dim(0));
    const auto sz = static_cast<size_t>(g.dim(0) * g.dim(1));
    const size_t base = g.linear(ax.i0, ay.i0, az.i0);

    const double v000 = values[base];
    const double v100 = values[base + sx];
    const double v010 = values[base + sy];
    const double v110 = values[base + sx + sy];
    const double v001 = values[base + sz];
    const double v101 = values[base + sx + sz];
    const double v011 = values[base + sy + sz];
    const double v111 = values[base + sx + sy + sz];

    const double c00 = lerp(v000, v100, ax.t);
    const double c10 = lerp(v010, v110, ax.t);
    const double c01 = lerp(v001, v101, ax.t);
    const double c11 = lerp(v011, v111, ax.t);
    const double c0 = lerp(c00, c10, ay.t);
    const double c1 = lerp(c01, c11, ay.t);

    if (grad != nullptr) {
        const double dx00 = v100 - v000, dx10 = v110 - v010, dx01 = v101 - v001, dx11 = v111 - v011;
        grad->x = ax.clamped ? 0.0 : lerp(lerp(dx00, dx10, ay.t), lerp(dx01, dx11, ay.t), az.t);
        grad->y = ay.clamped ? 0.0 : lerp(c10 - c00, c11 - c01, az.t);
        grad->z = az.clamped ? 0.0 : c1 - c0;
    }
    return lerp(c0, c1, az.t);
}

double trilinear_sample(const Volume &vol, const Vec3 &p) {
    if (!is_finite(p)) throw std::invalid_argument("trilinear_sample: non-finite sample point");
    return sample_index(vol.grid, vol.values, vol.grid.to_index(p));
}

Vec3 sample_field_index(const DisplacementField &f, const Vec3 &ci) {
    // Component-wise trilinear interpolation; weights shared across components.
    const auto &g = f.grid;
    const auto ax = axis_cell(ci.x, g.dim(0));
    const auto ay = axis_cell(ci.y, g.dim(1));
    const auto az = axis_cell(ci.z, g.dim(2));
    Vec3 out{};
    for (int dk = 0; dk < 2; ++dk) {
        const double wz = dk ? az.t : 1.0 - az.t;
        for (int dj = 0; dj < 2; ++dj) {
            const double wy = dj ? ay.t : 1.0 - ay.t;
            for (int di = 0; di < 2; ++di) {
                const double wx = di ? ax.t : 1.0 - ax.t;
                out += f.at(ax.i0 + di, ay.i0 + dj, az.i0 + dk) * (wx * wy * wz);
            }
        }
    }
    return out;
}

Vec3 sample_field(const DisplacementField &f, const Vec3 &p) {
    if (!is_finite(p)) throw std::invalid_argument("sample_field: non-finite sample point");
    return sample_field_index(f, f.grid.to_index(p));
}

namespace {

inline Vec3 displaced_index(const Grid &g, int64_t i, int64_t j, int64_t k, const Vec3 &u) {
    const auto &s = g.spacing();
    return {static_cast<double>(i) + u.x / s.x, static_cast<double>(j) + u.y / s.y, static_cast<double>(k) + u.z / s.z};
}

} // namespace

Volume warp_volume(const Volume &vol, const DisplacementField &dvf) {
    require_same_grid(vol.grid, dvf.grid, "warp_volume");
    Volume out(vol.grid);
    out.frame_index = dvf.to_frame;
    const auto &g = vol.grid;
    for (int64_t k = 0; k < g.dim(2); ++k) {
        for (int64_t j = 0; j < g.dim(1); ++j) {
            for (int64_t i = 0; i < g.dim(0); ++i) {
                const size_t n = g.linear(i, j, k);
                out.values[n] = sample_index(g, vol.values, displaced_index(g, i, j, k, dvf.vectors[n]));
            }
        }
    }
    return out;
}

void warp_with_gradient(const Volume &vol, const DisplacementField &dvf, std::vector<double> &out,
                        std::vector<Vec3> &d_out_du) {
    require_same_grid(vol.grid, dvf.grid, "warp_with_gradient");
    const auto &g = vol.grid;
    const auto &s = g.spacing();
    out.resize(g.voxel_count());
    d_out_du.resize(g.voxel_count());
    for (int64_t k = 0; k < g.dim(2); ++k) {
        for (int64_t j = 0; j < g.dim(1); ++j) {
            for (int64_t i = 0; i < g.dim(0); ++i) {
                const size_t n = g.linear(i, j, k);
                Vec3 gi;
                out[n] = sample_index(g, vol.values, displaced_index(g, i, j, k, dvf.vectors[n]), &gi);
                d_out_du[n] = {gi.x / s.x, gi.y / s.y, gi.z / s.z};
            }
        }
    }
}

Mask warp_mask(const Mask &mask, const DisplacementField &dvf, double threshold) {
    require_same_grid(mask.grid, dvf.grid, "warp_mask");
    if (!(threshold > 0.0 && threshold < 1.0)) throw std::invalid_argument("warp_mask: threshold must be in (0,1)");
    const Volume warped = warp_volume(to_volume(mask), dvf);
    Mask out(mask.grid);
    for (size_t n = 0; n < out.labels.size(); ++n) out.labels[n] = warped.values[n] >= threshold ? 1 : 0;
    return out;
}

DisplacementField compose(const DisplacementField &outer, const DisplacementField &inner) {
    require_same_grid(outer.grid, inner.grid, "compose");
    const auto &g = inner.grid;
    DisplacementField out(g, inner.from_frame, outer.to_frame);
    for (int64_t k = 0; k < g.dim(2); ++k) {
        for (int64_t j = 0; j < g.dim(1); ++j) {
            for (int64_t i = 0; i < g.dim(0); ++i) {
                const size_t n = g.linear(i, j, k);
                const Vec3 &u = inner.vectors[n];
                out.vectors[n] = u + sample_field_index(outer, displaced_index(g, i, j, k, u));
            }
        }
    }
    return out;
}

// ---- derivatives ------------------------------------------------------------------------------

namespace {

// Derivative of a strided line of values: central in the interior, one-sided at both ends.
inline double line_derivative(const double *u, size_t stride, int64_t n, int64_t i, double h) {
    if (i == 0) return (u[stride] - u[0]) / h;
    if (i == n - 1) return (u[static_cast<size_t>(i) * stride] - u[static_cast<size_t>(i - 1) * stride]) / h;
    return (u[static_cast<size_t>(i + 1) * stride] - u[static_cast<size_t>(i - 1) * stride]) / (2.0 * h);
}

// Adjoint of line_derivative: scatter d into the inputs that produced it.
inline void line_derivative_adjoint(double *g, size_t stride, int64_t n, int64_t i, double h, double d) {
    if (i == 0) {
        g[stride] += d / h;
        g[0] -= d / h;
    } else if (i == n - 1) {
        g[static_cast<size_t>(i) * stride] += d / h;
        g[static_cast<size_t>(i - 1) * stride] -= d / h;
    } else {
        g[static_cast<size_t>(i + 1) * stride] += d / (2.0 * h);
        g[static_cast<size_t>(i - 1) * stride] -= d / (2.0 * h);
    }
}

} // namespace

JacobianField spatial_jacobian(const DisplacementField &dvf) {
    const auto &g = dvf.grid;
    const size_t nvox = g.voxel_count();
    std::vector<double> chan(3 * nvox);
    for (size_t n = 0; n < nvox; ++n) {
        for (int c = 0; c < 3; ++c) chan[static_cast<size_t>(c) * nvox + n] = dvf.vectors[n][c];
    }
    JacobianField J{g, std::vector<Mat3>(nvox)};
    const size_t strides[3] = {1, static_cast<size_t>(g.dim(0)), static_cast<size_t>(g.dim(0) * g.dim(1))};
    for (int64_t k = 0; k < g.dim(2); ++k) {
        for (int64_t j = 0; j < g.dim(1); ++j) {
            for (int64_t i = 0; i < g.dim(0); ++i) {
                const size_t n = g.linear(i, j, k);
                const int64_t idx[3] = {i, j, k};
                for (int r = 0; r < 3; ++r) {
                    const double *u = chan.data() + static_cast<size_t>(r) * nvox;
                    for (int c = 0; c < 3; ++c) {
                        const double *line = u + n - static_cast<size_t>(idx[c]) * strides[c];
                        J.tensors[n](r, c) = line_derivative(line, strides[c], g.dim(c), idx[c], g.spacing()[c]);
                    }
                }
            }
        }
    }
    return J;
}

double smoothness_loss_raw(const Grid &g, std::span<const double> u, std::span<double> grad_out) {
    const size_t nvox = g.voxel_count();
    if (u.size() != 3 * nvox) throw std::invalid_argument("smoothness_loss_raw: buffer size mismatch");
    const bool want_grad = !grad_out.empty();
    if (want_grad) {
        if (grad_out.size() != 3 * nvox) throw std::invalid_argument("smoothness_loss_raw: gradient size mismatch");
        std::fill(grad_out.begin(), grad_out.end(), 0.0);
    }
    const size_t strides[3] = {1, static_cast<size_t>(g.dim(0)), static_cast<size_t>(g.dim(0) * g.dim(1))};
    const double inv_n = 1.0 / static_cast<double>(nvox);
    double total = 0.0;
    for (int r = 0; r < 3; ++r) {
        const double *ur = u.data() + static_cast<size_t>(r) * nvox;
        double *gr = want_grad ? grad_out.data() + static_cast<size_t>(r) * nvox : nullptr;
        for (int c = 0; c < 3; ++c) {
            const double h = g.spacing()[c];
            const int64_t len = g.dim(c);
            for (int64_t k = 0; k < g.dim(2); ++k) {
                for (int64_t j = 0; j < g.dim(1); ++j) {
                    for (int64_t i = 0; i < g.dim(0); ++i) {
                        const size_t n = g.linear(i, j, k);
                        const int64_t pos = c == 0 ? i : (c == 1 ? j : k);
                        const size_t line0 = n - static_cast<size_t>(pos) * strides[c];
                        const double d = line_derivative(ur + line0, strides[c], len, pos, h);
                        total += d * d;
                        if (gr != nullptr) line_derivative_adjoint(gr + line0, strides[c], len, pos, h, 2.0 * d * inv_n);
                    }
                }
            }
        }
    }
    return total * inv_n;
}

namespace {

std::vector<double> channel_major(const DisplacementField &f) {
    const size_t nvox = f.vectors.size();
    std::vector<double> u(3 * nvox);
    for (size_t n = 0; n < nvox; ++n) {
        u[n] = f.vectors[n].x;
        u[nvox + n] = f.vectors[n].y;
        u[2 * nvox + n] = f.vectors[n].z;
    }
    return u;
}

} // namespace

double smoothness_loss(const DisplacementField &dvf) {
    const auto u = channel_major(dvf);
    return smoothness_loss_raw(dvf.grid, u, {});
}

double smoothness_loss_and_gradient(const DisplacementField &dvf, std::vector<Vec3> &grad) {
    const auto u = channel_major(dvf);
    const size_t nvox = dvf.vectors.size();
    std::vector<double> g(3 * nvox);
    const double loss = smoothness_loss_raw(dvf.grid, u, g);
    grad.resize(nvox);
    for (size_t n = 0; n < nvox; ++n) grad[n] = {g[n], g[nvox + n], g[2 * nvox + n]};
    return loss;
}

} // namespace lamotion
