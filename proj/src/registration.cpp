// registration.cpp - Coarse-to-fine Adam optimisation of band-limited displacement coefficients.

#include "lamotion/registration.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "lamotion/nn.hpp"

namespace lamotion {

namespace {

constexpr double kLnccEps = 1e-8;
constexpr int kConvergenceWindow = 10;
constexpr double kConvergenceTol = 1e-6;
constexpr int kMaxBacktracks = 6;

void require_same_grid(const Grid &a, const Grid &b, const char *what) {
    if (!(a == b)) throw std::invalid_argument(std::string(what) + ": volumes are on different grids");
}

/// Sum over the (2r+1)^3 box around every voxel, truncated at the grid edge. The operator is
/// symmetric, so it is also its own adjoint.
void box_sum(const Index3 &dims, int64_t r, std::vector<double> &data) {
    std::vector<double> line, prefix;
    const int64_t X = dims[0], Y = dims[1], Z = dims[2];
    const size_t strides[3] = {1, static_cast<size_t>(X), static_cast<size_t>(X * Y)};
    for (int axis = 0; axis < 3; ++axis) {
        const int64_t n = dims[static_cast<size_t>(axis)];
        const size_t stride = strides[axis];
        prefix.assign(static_cast<size_t>(n) + 1, 0.0);
        const int64_t outer1 = axis == 0 ? Y : X;
        const int64_t outer2 = axis == 2 ? Y : Z;
        for (int64_t b = 0; b < outer2; ++b) {
            for (int64_t a = 0; a < outer1; ++a) {
                size_t base = 0;
                if (axis == 0) base = static_cast<size_t>(a * X + b * X * Y);
                if (axis == 1) base = static_cast<size_t>(a + b * X * Y);
                if (axis == 2) base = static_cast<size_t>(a + b * X);
                for (int64_t i = 0; i < n; ++i) prefix[static_cast<size_t>(i) + 1] = prefix[static_cast<size_t>(i)] + data[base + static_cast<size_t>(i) * stride];
                for (int64_t i = 0; i < n; ++i) {
                    const int64_t lo = std::max<int64_t>(0, i - r), hi = std::min(n - 1, i + r);
                    data[base + static_cast<size_t>(i) * stride] = prefix[static_cast<size_t>(hi) + 1] - prefix[static_cast<size_t>(lo)];
                }
            }
        }
    }
}

int64_t window_extent(int64_t i, int64_t n, int64_t r) { return std::min(n - 1, i + r) - std::max<int64_t>(0, i - r) + 1; }

struct LnccStats {
    std::vector<double> count, ma, mb, cov, va, vb;
};

LnccStats lncc_stats(const Volume &a, const Volume &b, int64_t r) {
    const auto &g = a.grid;
    const size_t N = g.voxel_count();
    LnccStats s;
    s.count.resize(N);
    for (int64_t k = 0; k < g.dim(2); ++k)
        for (int64_t j = 0; j < g.dim(1); ++j)
            for (int64_t i = 0; i < g.dim(0); ++i) {
                s.count[g.linear(i, j, k)] = static_cast<double>(window_extent(i, g.dim(0), r) * window_extent(j, g.dim(1), r) *
                                                                 window_extent(k, g.dim(2), r));
            }
    std::vector<double> saa(N), sbb(N), sab(N);
    s.ma = a.values;
    s.mb = b.values;
    for (size_t n = 0; n < N; ++n) {
        saa[n] = a.values[n] * a.values[n];
        sbb[n] = b.values[n] * b.values[n];
        sab[n] = a.values[n] * b.values[n];
    }
    for (auto *v : {&s.ma, &s.mb, &saa, &sbb, &sab}) box_sum(g.dims(), r, *v);
    s.cov.resize(N);
    s.va.resize(N);
    s.vb.resize(N);
    for (size_t n = 0; n < N; ++n) {
        const double c = s.count[n];
        s.ma[n] /= c;
        s.mb[n] /= c;
        s.cov[n] = sab[n] / c - s.ma[n] * s.mb[n];
        s.va[n] = std::max(0.0, saa[n] / c - s.ma[n] * s.ma[n]);
        s.vb[n] = std::max(0.0, sbb[n] / c - s.mb[n] * s.mb[n]);
    }
    return s;
}

void check_window(const Grid &g, int window) {
    if (window < 1 || window % 2 == 0) throw std::invalid_argument("LNCC window must be a positive odd number of voxels");
    for (int a = 0; a < 3; ++a) {
        if (window > g.dim(a)) {
            throw std::invalid_argument("LNCC window " + std::to_string(window) + " exceeds grid dimension " + std::to_string(g.dim(a)));
        }
    }
}

/// The window shrinks with the pyramid so that it covers the same physical extent.
Similarity similarity_at_level(const Similarity &s, const Grid &g, int level) {
    Similarity out = s;
    if (s.kind != SimilarityKind::LNCC) return out;
    int w = std::max(3, s.window >> level);
    if (w % 2 == 0) ++w;
    const int64_t min_dim = std::min({g.dim(0), g.dim(1), g.dim(2)});
    while (w > min_dim) w -= 2;
    out.window = std::max(1, w);
    return out;
}

Volume pool2(const Volume &v) {
    const auto &g = v.grid;
    const Index3 d{g.dim(0) / 2, g.dim(1) / 2, g.dim(2) / 2};
    const Vec3 s = g.spacing();
    const Grid cg(d, 2.0 * s, g.origin() + 0.5 * s);
    Volume out(cg);
    out.frame_index = v.frame_index;
    for (int64_t k = 0; k < d[2]; ++k)
        for (int64_t j = 0; j < d[1]; ++j)
            for (int64_t i = 0; i < d[0]; ++i) {
                double acc = 0.0;
                for (int c = 0; c < 8; ++c) acc += v.at(2 * i + (c & 1), 2 * j + ((c >> 1) & 1), 2 * k + ((c >> 2) & 1));
                out.at(i, j, k) = acc / 8.0;
            }
    return out;
}

/// Evaluates the registration objective and its gradient with respect to the coefficients.
class Objective {
  public:
    Objective(const Volume &fixed, const Volume &moving, const Grid &fine, int level, const Similarity &sim, double lambda,
              Index3 cutoff)
        : fixed_(fixed), moving_(moving), sim_(sim), lambda_(lambda),
          sampler_(level == 0 ? FourierSampler::for_grid(fine, cutoff)
                              : FourierSampler::for_pooled_level(fine, level, fixed.grid.dims(), cutoff)) {}

    LossTerms evaluate(const BandlimitedDVF &b, std::vector<double> *d_cos, std::vector<double> *d_sin) {
        const Grid &g = fixed_.grid;
        const size_t N = g.voxel_count();
        u_.resize(3 * N);
        sampler_.synthesize(b.cos_coeffs, b.sin_coeffs, u_);
        DisplacementField f(g);
        for (size_t n = 0; n < N; ++n) f.vectors[n] = {u_[n], u_[N + n], u_[2 * N + n]};

        LossTerms t;
        Volume warped(g);
        if (!d_cos) {
            warped = warp_volume(moving_, f);
            t.similarity = similarity_loss(warped, fixed_, sim_);
            t.smoothness = smoothness_loss_raw(g, u_, {});
            t.total = t.similarity + lambda_ * t.smoothness;
            return t;
        }
        warp_with_gradient(moving_, f, warped.values, d_warp_);
        t.similarity = similarity_loss_and_gradient(warped, fixed_, sim_, g_sim_);
        g_u_.assign(3 * N, 0.0);
        t.smoothness = smoothness_loss_raw(g, u_, g_u_);
        t.total = t.similarity + lambda_ * t.smoothness;
        for (size_t n = 0; n < N; ++n) {
            for (int c = 0; c < 3; ++c) g_u_[c * N + n] = lambda_ * g_u_[c * N + n] + g_sim_[n] * d_warp_[n][c];
        }
        d_cos->assign(b.cos_coeffs.size(), 0.0);
        d_sin->assign(b.sin_coeffs.size(), 0.0);
        sampler_.adjoint(g_u_, *d_cos, *d_sin);
        return t;
    }

  private:
    const Volume &fixed_;
    const Volume &moving_;
    Similarity sim_;
    double lambda_;
    FourierSampler sampler_;
    std::vector<double> u_, g_sim_, g_u_;
    std::vector<Vec3> d_warp_;
};

bool finite_terms(const LossTerms &t) { return std::isfinite(t.total) && std::isfinite(t.similarity) && std::isfinite(t.smoothness); }

} // namespace

void RegConfig::validate(const Grid &g) const {
    if (!(lambda_smooth >= 0.0) || !std::isfinite(lambda_smooth)) throw std::invalid_argument("RegConfig: lambda_smooth must be >= 0");
    if (levels < 1) throw std::invalid_argument("RegConfig: levels must be >= 1");
    if (iters_per_level < 1) throw std::invalid_argument("RegConfig: iters_per_level must be >= 1");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw std::invalid_argument("RegConfig: lr must be positive");
    for (int a = 0; a < 3; ++a) {
        if ((g.dim(a) >> (levels - 1)) < 4) {
            throw std::invalid_argument("RegConfig: " + std::to_string(levels) + " pyramid levels leave fewer than 4 voxels on axis " +
                                        std::to_string(a));
        }
    }
    check_cutoff(g, cutoff);
    if (similarity.kind == SimilarityKind::LNCC) check_window(g, similarity.window);
}

double similarity_loss(const Volume &a, const Volume &b, const Similarity &sim) {
    require_same_grid(a.grid, b.grid, "similarity_loss");
    const size_t N = a.values.size();
    if (sim.kind == SimilarityKind::MSE) {
        double acc = 0.0;
        for (size_t n = 0; n < N; ++n) {
            const double d = a.values[n] - b.values[n];
            acc += d * d;
        }
        return acc / static_cast<double>(N);
    }
    check_window(a.grid, sim.window);
    const auto s = lncc_stats(a, b, sim.window / 2);
    double acc = 0.0;
    for (size_t n = 0; n < N; ++n) acc += (s.cov[n] * s.cov[n] + kLnccEps) / (s.va[n] * s.vb[n] + kLnccEps);
    return 1.0 - acc / static_cast<double>(N);
}

double similarity_loss_and_gradient(const Volume &a, const Volume &b, const Similarity &sim, std::vector<double> &grad) {
    require_same_grid(a.grid, b.grid, "similarity_loss");
    const size_t N = a.values.size();
    const double inv_n = 1.0 / static_cast<double>(N);
    grad.resize(N);
    if (sim.kind == SimilarityKind::MSE) {
        double acc = 0.0;
        for (size_t n = 0; n < N; ++n) {
            const double d = a.values[n] - b.values[n];
            acc += d * d;
            grad[n] = 2.0 * d * inv_n;
        }
        return acc * inv_n;
    }
    check_window(a.grid, sim.window);
    const int64_t r = sim.window / 2;
    const auto s = lncc_stats(a, b, r);
    // d cc / d a_y gathers, over every window containing y, alpha (b_y - mb) - 2 beta (a_y - ma).
    std::vector<double> alpha(N), alpha_mb(N), beta(N), beta_ma(N);
    double acc = 0.0;
    for (size_t n = 0; n < N; ++n) {
        const double den = s.va[n] * s.vb[n] + kLnccEps;
        const double num = s.cov[n] * s.cov[n] + kLnccEps;
        acc += num / den;
        alpha[n] = 2.0 * s.cov[n] / (den * s.count[n]);
        beta[n] = num * s.vb[n] / (den * den * s.count[n]);
        alpha_mb[n] = alpha[n] * s.mb[n];
        beta_ma[n] = beta[n] * s.ma[n];
    }
    for (auto *v : {&alpha, &alpha_mb, &beta, &beta_ma}) box_sum(a.grid.dims(), r, *v);
    for (size_t n = 0; n < N; ++n) {
        const double dcc = b.values[n] * alpha[n] - alpha_mb[n] - 2.0 * (a.values[n] * beta[n] - beta_ma[n]);
        grad[n] = -dcc * inv_n;
    }
    return 1.0 - acc * inv_n;
}

std::vector<Volume> build_pyramid(const Volume &vol, int levels) {
    if (levels < 1) throw std::invalid_argument("build_pyramid: levels must be >= 1");
    for (int a = 0; a < 3; ++a) {
        if ((vol.grid.dim(a) >> (levels - 1)) < 2) {
            throw std::invalid_argument("build_pyramid: " + std::to_string(levels) + " levels leave fewer than 2 voxels on axis " +
                                        std::to_string(a));
        }
    }
    std::vector<Volume> out{vol};
    for (int l = 1; l < levels; ++l) out.push_back(pool2(out.back()));
    return out;
}

RegResult register_pair(const Volume &fixed, const Volume &moving, const RegConfig &cfg, const BandlimitedDVF *init) {
    require_same_grid(fixed.grid, moving.grid, "register_pair");
    validate(fixed);
    validate(moving);
    const Grid &grid = fixed.grid;
    cfg.validate(grid);

    RegResult res;
    res.coefficients = BandlimitedDVF(grid, cfg.cutoff);
    if (init) {
        if (!(init->grid == grid) || init->cutoff != cfg.cutoff) throw std::invalid_argument("register_pair: warm start has a different basis");
        res.coefficients = *init;
    }
    BandlimitedDVF &b = res.coefficients;

    const auto fixed_pyr = build_pyramid(fixed, cfg.levels);
    const auto moving_pyr = build_pyramid(moving, cfg.levels);
    Objective full(fixed, moving, grid, 0, cfg.similarity, cfg.lambda_smooth, cfg.cutoff);

    res.initial_loss = full.evaluate(b, nullptr, nullptr);
    if (!finite_terms(res.initial_loss)) throw std::runtime_error("register_pair: non-finite loss at iteration 0");
    const size_t M = b.mode_count();
    std::vector<double> grads(6 * M), direction(6 * M), d_cos, d_sin, trial_cos, trial_sin;
    BandlimitedDVF trial;
    int iteration = 0;

    for (int level = cfg.levels - 1; level >= 0; --level) {
        const Grid &lg = fixed_pyr[static_cast<size_t>(level)].grid;
        const Similarity sim = similarity_at_level(cfg.similarity, lg, level);
        Objective obj(fixed_pyr[static_cast<size_t>(level)], moving_pyr[static_cast<size_t>(level)], grid, level, sim, cfg.lambda_smooth,
                      cfg.cutoff);

        // Modes above the coarse grid's own band limit would alias; they stay frozen here. Active
        // modes are optimised in units scaled by 1/(1 + |k|^2), so an Adam step of a given size
        // moves high frequencies less than low ones.
        std::vector<double> weight(M, 0.0);
        for (int64_t kz = -cfg.cutoff[2]; kz <= cfg.cutoff[2]; ++kz)
            for (int64_t ky = -cfg.cutoff[1]; ky <= cfg.cutoff[1]; ++ky)
                for (int64_t kx = -cfg.cutoff[0]; kx <= cfg.cutoff[0]; ++kx) {
                    const int64_t k[3] = {kx, ky, kz};
                    bool ok = true;
                    for (int a = 0; a < 3; ++a) ok = ok && std::abs(k[a]) <= (lg.dim(a) + 1) / 2 - 1;
                    if (ok) weight[b.index(0, kx, ky, kz)] = 1.0 / static_cast<double>(1 + kx * kx + ky * ky + kz * kz);
                }

        ad::AdamState adam({.lr = cfg.lr}, 6 * M);
        const int warmup = std::max(1, cfg.iters_per_level / 10);
        std::vector<double> level_totals;
        LossTerms current = obj.evaluate(b, &d_cos, &d_sin);
        if (!finite_terms(current)) throw std::runtime_error("register_pair: non-finite loss at iteration " + std::to_string(iteration));
        for (int it = 0; it < cfg.iters_per_level; ++it, ++iteration) {
            res.loss_trace.push_back(current);
            res.trace_level.push_back(level);
            level_totals.push_back(current.total);

            for (int c = 0; c < 3; ++c) {
                for (size_t m = 0; m < M; ++m) {
                    const size_t src = static_cast<size_t>(c) * M + m;
                    grads[src] = weight[m] * d_cos[src];
                    grads[3 * M + src] = weight[m] * d_sin[src];
                }
            }
            adam.direction(grads, direction);

            // Safeguarded step: halve the step length until the objective does not increase.
            const double ramp = std::min(1.0, static_cast<double>(it + 1) / warmup);
            const double decay = 0.5 * (1.0 + std::cos(std::numbers::pi * it / cfg.iters_per_level));
            double step = cfg.lr * ramp * decay;
            for (int attempt = 0; attempt < kMaxBacktracks; ++attempt, step *= 0.5) {
                trial = b;
                for (int c = 0; c < 3; ++c) {
                    for (size_t m = 0; m < M; ++m) {
                        const size_t src = static_cast<size_t>(c) * M + m;
                        trial.cos_coeffs[src] -= step * weight[m] * direction[src];
                        trial.sin_coeffs[src] -= step * weight[m] * direction[3 * M + src];
                    }
                }
                const LossTerms t = obj.evaluate(trial, &trial_cos, &trial_sin);
                if (!finite_terms(t)) {
                    throw std::runtime_error("register_pair: non-finite loss at iteration " + std::to_string(iteration));
                }
                if (t.total <= current.total) {
                    std::swap(b, trial);
                    std::swap(d_cos, trial_cos);
                    std::swap(d_sin, trial_sin);
                    current = t;
                    break;
                }
            }

            const size_t n = level_totals.size();
            if (n > kConvergenceWindow) {
                const double prev = level_totals[n - 1 - kConvergenceWindow];
                if (prev - current.total <= kConvergenceTol * std::max(std::abs(prev), 1e-300)) {
                    if (level == 0) res.converged = true;
                    ++iteration;
                    break;
                }
            }
        }
    }

    res.final_loss = full.evaluate(b, nullptr, nullptr);
    if (!finite_terms(res.final_loss)) throw std::runtime_error("register_pair: non-finite loss at iteration " + std::to_string(iteration));
    res.dvf = synthesize_bandlimited(b);
    return res;
}

std::vector<DisplacementField> track_cycle(const std::vector<Volume> &frames, int ref, const RegConfig &cfg) {
    const int T = static_cast<int>(frames.size());
    if (T < 2) throw std::invalid_argument("track_cycle: at least 2 frames required");
    if (ref < 0 || ref >= T) throw std::invalid_argument("track_cycle: reference index out of range");
    for (const auto &f : frames) require_same_grid(frames[static_cast<size_t>(ref)].grid, f.grid, "track_cycle");

    std::vector<DisplacementField> out(static_cast<size_t>(T));
    BandlimitedDVF previous;
    bool have_previous = false;
    for (int step = 1; step < T; ++step) {
        const int t = (ref + step) % T;
        try {
            auto r = register_pair(frames[static_cast<size_t>(t)], frames[static_cast<size_t>(ref)], cfg, have_previous ? &previous : nullptr);
            r.dvf.from_frame = ref;
            r.dvf.to_frame = t;
            out[static_cast<size_t>(t)] = std::move(r.dvf);
            previous = std::move(r.coefficients);
            have_previous = true;
        } catch (const std::exception &e) {
            throw std::runtime_error("track_cycle: frame " + std::to_string(t) + ": " + e.what());
        }
    }
    out.erase(out.begin() + ref);
    return out;
}

} // namespace lamotion
