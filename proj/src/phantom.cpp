// phantom.cpp - Analytic beating-shell generator.

#include "lamotion/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

namespace lamotion {

namespace {

constexpr Vec3 kAxisFraction{0.32, 0.28, 0.25};
constexpr int kTextureWaves = 24;
constexpr int kTextureMaxFreq = 4;
constexpr double kBackground = 0.1, kPool = 0.3, kWall = 0.7;

struct Shape {
    Vec3 center, outer, inner;
    double outer_mean = 0.0, inner_mean = 0.0;
    double edge = 0.0;
};

struct Wave {
    Vec3 k;
    double phase;
};

Shape shape_of(const PhantomConfig &cfg) {
    Shape s;
    s.center = phantom_center(cfg);
    const double t = cfg.wall_thickness_vox * cfg.spacing_mm;
    for (int a = 0; a < 3; ++a) {
        const double fov = static_cast<double>(cfg.dims[static_cast<size_t>(a)]) * cfg.spacing_mm;
        s.outer[a] = kAxisFraction[a] * fov;
        s.inner[a] = s.outer[a] - t;
    }
    s.outer_mean = std::cbrt(s.outer.x * s.outer.y * s.outer.z);
    s.inner_mean = std::cbrt(s.inner.x * s.inner.y * s.inner.z);
    s.edge = 0.5 * cfg.spacing_mm;
    return s;
}

double radius(const Vec3 &d, const Vec3 &axes) {
    const double x = d.x / axes.x, y = d.y / axes.y, z = d.z / axes.z;
    return std::sqrt(x * x + y * y + z * z);
}

double soft_inside(double rho, double mean_axis, double edge) { return 1.0 / (1.0 + std::exp(-(1.0 - rho) * mean_axis / edge)); }

std::vector<Wave> draw_texture(std::mt19937_64 &rng) {
    std::uniform_int_distribution<int> freq(-kTextureMaxFreq, kTextureMaxFreq);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    std::vector<Wave> waves;
    while (static_cast<int>(waves.size()) < kTextureWaves) {
        Wave w{{double(freq(rng)), double(freq(rng)), double(freq(rng))}, 0.0};
        w.phase = phase(rng);
        if (w.k == Vec3{}) continue;
        waves.push_back(w);
    }
    return waves;
}

double intensity(const PhantomConfig &cfg, const Shape &s, const std::vector<Wave> &waves, const Vec3 &p) {
    const Vec3 d = p - s.center;
    const double in_outer = soft_inside(radius(d, s.outer), s.outer_mean, s.edge);
    const double in_inner = soft_inside(radius(d, s.inner), s.inner_mean, s.edge);
    double v = kBackground + (kWall - kBackground) * in_outer + (kPool - kWall) * in_inner;
    if (cfg.texture_scale > 0.0) {
        const double amp = cfg.texture_scale * std::sqrt(2.0 / kTextureWaves);
        for (const auto &w : waves) {
            double arg = w.phase;
            for (int a = 0; a < 3; ++a) arg += 2.0 * std::numbers::pi * w.k[a] * p[a] / (double(cfg.dims[size_t(a)]) * cfg.spacing_mm);
            v += amp * std::cos(arg);
        }
    }
    return v;
}

} // namespace

Grid PhantomConfig::grid() const { return Grid(dims, {spacing_mm, spacing_mm, spacing_mm}); }

void PhantomConfig::validate() const {
    for (auto d : dims) {
        if (d < 8) throw std::invalid_argument("PhantomConfig: dims must be >= 8");
    }
    if (!(spacing_mm > 0.0) || !std::isfinite(spacing_mm)) throw std::invalid_argument("PhantomConfig: spacing must be positive");
    if (frames < 2) throw std::invalid_argument("PhantomConfig: at least 2 frames required");
    if (!(wall_thickness_vox > 0.0)) throw std::invalid_argument("PhantomConfig: wall thickness must be positive");
    if (!std::isfinite(amplitude) || !std::isfinite(twist_rad)) throw std::invalid_argument("PhantomConfig: invalid deformation amplitude");
    if (!(noise_std >= 0.0) || !(texture_scale >= 0.0)) throw std::invalid_argument("PhantomConfig: noise and texture must be >= 0");
    if (slice_steps < 1) throw std::invalid_argument("PhantomConfig: slice_steps must be >= 1");
    const Shape s = shape_of(*this);
    if (std::min({s.inner.x, s.inner.y, s.inner.z}) <= spacing_mm) {
        throw std::invalid_argument("PhantomConfig: wall too thick for the grid");
    }
}

double phase_weight(const PhantomConfig &cfg, double t) {
    return 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * t / static_cast<double>(cfg.frames)));
}

Vec3 phantom_center(const PhantomConfig &cfg) {
    return cfg.grid().world(cfg.dims[0] / 2, cfg.dims[1] / 2, cfg.dims[2] / 2);
}

Vec3 analytic_displacement(const PhantomConfig &cfg, double t, const Vec3 &p) {
    const double w = phase_weight(cfg, t);
    const Vec3 d = p - phantom_center(cfg);
    return w * (cfg.amplitude * d + cfg.twist_rad * Vec3{-d.y, d.x, 0.0});
}

DisplacementField analytic_dvf(const PhantomConfig &cfg, int t) {
    const Grid g = cfg.grid();
    DisplacementField f(g, 0, t);
    for (int64_t k = 0; k < g.dim(2); ++k)
        for (int64_t j = 0; j < g.dim(1); ++j)
            for (int64_t i = 0; i < g.dim(0); ++i) f.at(i, j, k) = analytic_displacement(cfg, t, g.world(i, j, k));
    return f;
}

double reference_intensity(const PhantomConfig &cfg, const Vec3 &p) {
    std::mt19937_64 rng(cfg.seed);
    return intensity(cfg, shape_of(cfg), draw_texture(rng), p);
}

void check_injective(const PhantomConfig &cfg) {
    for (int t = 1; t < cfg.frames; ++t) {
        const auto J = spatial_jacobian(analytic_dvf(cfg, t));
        for (const auto &m : J.tensors) {
            Mat3 F = m;
            for (int a = 0; a < 3; ++a) F(a, a) += 1.0;
            if (F.determinant() <= 0.2) {
                throw std::runtime_error("phantom deformation is not injective at frame " + std::to_string(t) +
                                         "; reduce amplitude or twist");
            }
        }
    }
}

PhantomCase generate_case(const PhantomConfig &cfg) {
    cfg.validate();
    check_injective(cfg);

    PhantomCase c;
    c.config = cfg;
    const Grid g = cfg.grid();
    const Shape shape = shape_of(cfg);
    std::mt19937_64 rng(cfg.seed);
    const auto waves = draw_texture(rng);
    std::normal_distribution<double> noise(0.0, cfg.noise_std * (kWall - kBackground));

    for (int t = 0; t < cfg.frames; ++t) {
        Volume v(g);
        v.frame_index = t;
        Mask m(g);
        for (int64_t k = 0; k < g.dim(2); ++k)
            for (int64_t j = 0; j < g.dim(1); ++j)
                for (int64_t i = 0; i < g.dim(0); ++i) {
                    const Vec3 x = g.world(i, j, k);
                    const Vec3 src = x + analytic_displacement(cfg, t, x);
                    v.at(i, j, k) = intensity(cfg, shape, waves, src);
                    m.at(i, j, k) = radius(src - shape.center, shape.outer) <= 1.0 ? 1 : 0;
                }
        if (cfg.noise_std > 0.0) {
            for (auto &x : v.values) x += noise(rng);
        }
        c.frames.push_back(std::move(v));
        c.masks.push_back(std::move(m));
        if (t > 0) c.gt_dvfs.push_back(analytic_dvf(cfg, t));
    }

    c.wall = Mask(g);
    for (int64_t k = 0; k < g.dim(2); ++k)
        for (int64_t j = 0; j < g.dim(1); ++j)
            for (int64_t i = 0; i < g.dim(0); ++i) {
                const Vec3 d = g.world(i, j, k) - shape.center;
                c.wall.at(i, j, k) = (radius(d, shape.outer) <= 1.0 && radius(d, shape.inner) > 1.0) ? 1 : 0;
            }

    c.slice_index = cfg.dims[2] / 2;
    for (int t = 0; t < cfg.frames; ++t) c.sequences.push_back(make_slice_sequence(c.frames, t, c.slice_index, cfg.slice_steps));
    return c;
}

Mask shell_region(const PhantomCase &c) { return dilate_mask(c.wall, 1); }

EndpointError endpoint_error(const DisplacementField &est, const DisplacementField &gt, const Mask *region) {
    if (!(est.grid == gt.grid)) throw std::invalid_argument("endpoint_error: grid mismatch");
    if (region && !(region->grid == gt.grid)) throw std::invalid_argument("endpoint_error: region grid mismatch");
    EndpointError e;
    size_t n = 0;
    for (size_t v = 0; v < est.vectors.size(); ++v) {
        if (region && !region->labels[v]) continue;
        const double d = norm(est.vectors[v] - gt.vectors[v]);
        e.mean_mm += d;
        e.max_mm = std::max(e.max_mm, d);
        ++n;
    }
    if (n == 0) throw std::invalid_argument("endpoint_error: empty region");
    e.mean_mm /= static_cast<double>(n);
    return e;
}

} // namespace lamotion
