#include <cmath>
#include <random>

#include "doctest.h"
#include "lamotion/bandlimited.hpp"
#include "test_util.hpp"

using namespace lamotion;
using namespace testutil;

namespace {

BandlimitedDVF random_coeffs(const Grid &g, Index3 K, std::mt19937_64 &rng, double amp = 1.0) {
    BandlimitedDVF b(g, K);
    std::uniform_real_distribution<double> d(-amp, amp);
    for (auto &c : b.cos_coeffs) c = d(rng);
    for (auto &c : b.sin_coeffs) c = d(rng);
    return b;
}

// Direct sum over modes at a normalised coordinate.
Vec3 brute_force_at(const BandlimitedDVF &b, const double xh[3]) {
    Vec3 out;
    for (int c = 0; c < 3; ++c)
        for (int64_t kz = -b.cutoff[2]; kz <= b.cutoff[2]; ++kz)
            for (int64_t ky = -b.cutoff[1]; ky <= b.cutoff[1]; ++ky)
                for (int64_t kx = -b.cutoff[0]; kx <= b.cutoff[0]; ++kx) {
                    const double ph = 2 * M_PI * (kx * xh[0] + ky * xh[1] + kz * xh[2]);
                    const size_t n = b.index(c, kx, ky, kz);
                    out[c] += b.cos_coeffs[n] * std::cos(ph) + b.sin_coeffs[n] * std::sin(ph);
                }
    return out;
}

Vec3 brute_force(const BandlimitedDVF &b, int64_t i, int64_t j, int64_t k) {
    const auto &g = b.grid;
    const double xh[3] = {double(i) / g.dim(0), double(j) / g.dim(1), double(k) / g.dim(2)};
    return brute_force_at(b, xh);
}

}  // namespace

TEST_CASE("zero and constant coefficient sets") {
    const Grid g({8, 6, 10}, {1.0, 2.0, 1.5});
    BandlimitedDVF b(g, {2, 2, 2});
    for (const auto &v : synthesize_bandlimited(b).vectors) CHECK(v == Vec3{});
    b.cos_coeffs[b.index(0, 0, 0, 0)] = 1.25;
    for (const auto &v : synthesize_bandlimited(b).vectors) {
        CHECK(v.x == doctest::Approx(1.25).epsilon(1e-14));
        CHECK(std::abs(v.y) < 1e-15);
        CHECK(std::abs(v.z) < 1e-15);
    }
}

TEST_CASE("single mode along x") {
    const Grid g({8, 4, 4}, {1, 1, 1});
    BandlimitedDVF b(g, {2, 1, 1});
    b.cos_coeffs[b.index(0, 1, 0, 0)] = 1.0;
    const auto f = synthesize_bandlimited(b);
    for (int64_t k = 0; k < 4; ++k)
        for (int64_t j = 0; j < 4; ++j)
            for (int64_t i = 0; i < 8; ++i) {
                CHECK(std::abs(f.at(i, j, k).x - std::cos(2 * M_PI * i / 8.0)) < 1e-12);
                CHECK(std::abs(f.at(i, j, k).y) < 1e-12);
            }
}

TEST_CASE("synthesis matches the direct sum") {
    std::mt19937_64 rng(2);
    const Grid g({7, 6, 9}, {1.0, 1.0, 1.0});
    const auto b = random_coeffs(g, {2, 1, 3}, rng);
    const auto f = synthesize_bandlimited(b);
    for (size_t n = 0; n < f.vectors.size(); n += 5) {
        const auto idx = g.unravel(n);
        CHECK(norm(f.vectors[n] - brute_force(b, idx[0], idx[1], idx[2])) < 1e-10);
    }
}

TEST_CASE("synthesis is linear") {
    std::mt19937_64 rng(7);
    const Grid g = cube_grid(8);
    const Index3 K{2, 2, 2};
    const auto a = random_coeffs(g, K, rng), b = random_coeffs(g, K, rng);
    const double s = -1.7, t = 0.6;
    BandlimitedDVF mix(g, K);
    for (size_t n = 0; n < mix.cos_coeffs.size(); ++n) {
        mix.cos_coeffs[n] = s * a.cos_coeffs[n] + t * b.cos_coeffs[n];
        mix.sin_coeffs[n] = s * a.sin_coeffs[n] + t * b.sin_coeffs[n];
    }
    const auto fa = synthesize_bandlimited(a), fb = synthesize_bandlimited(b), fm = synthesize_bandlimited(mix);
    for (size_t n = 0; n < fm.vectors.size(); ++n) CHECK(norm(fm.vectors[n] - (s * fa.vectors[n] + t * fb.vectors[n])) < 1e-12 * 50);
}

TEST_CASE("adjoint satisfies the dot-product identity") {
    std::mt19937_64 rng(9);
    const Grid g({6, 8, 7}, {1, 1, 1});
    const Index3 K{2, 3, 2};
    const auto s = FourierSampler::for_grid(g, K);
    const auto b = random_coeffs(g, K, rng);
    const size_t N = g.voxel_count();
    std::vector<double> y(3 * N), gvec(3 * N);
    s.synthesize(b.cos_coeffs, b.sin_coeffs, y);
    std::uniform_real_distribution<double> d(-1, 1);
    for (auto &v : gvec) v = d(rng);
    std::vector<double> dc(b.cos_coeffs.size()), ds(b.sin_coeffs.size());
    s.adjoint(gvec, dc, ds);
    double lhs = 0, rhs = 0;
    for (size_t n = 0; n < y.size(); ++n) lhs += y[n] * gvec[n];
    for (size_t n = 0; n < dc.size(); ++n) rhs += b.cos_coeffs[n] * dc[n] + b.sin_coeffs[n] * ds[n];
    CHECK(std::abs(lhs - rhs) < 1e-10 * std::max(1.0, std::abs(lhs)));
}

TEST_CASE("projection round-trips band-limited fields") {
    std::mt19937_64 rng(13);
    const Grid g({10, 8, 12}, {1.5, 1.5, 2.0});
    const Index3 K{3, 2, 4};
    const auto f = synthesize_bandlimited(random_coeffs(g, K, rng));
    const auto back = synthesize_bandlimited(project_bandlimited(f, K));
    double worst = 0;
    for (size_t n = 0; n < f.vectors.size(); ++n) worst = std::max(worst, norm(f.vectors[n] - back.vectors[n]));
    CHECK(worst < 1e-10);
}

TEST_CASE("cutoff validation") {
    const Grid g({8, 8, 6}, {1, 1, 1});
    CHECK_NOTHROW(check_cutoff(g, {3, 3, 2}));
    CHECK_THROWS_AS(check_cutoff(g, {4, 3, 2}), std::invalid_argument);
    CHECK_THROWS_AS(check_cutoff(g, {3, 3, 3}), std::invalid_argument);
    CHECK_THROWS_AS(check_cutoff(g, {-1, 0, 0}), std::invalid_argument);
}

TEST_CASE("pooled-level sampler at level zero is the grid sampler") {
    std::mt19937_64 rng(1);
    const Grid g = cube_grid(8);
    const Index3 K{2, 2, 2};
    const auto b = random_coeffs(g, K, rng);
    const auto s0 = FourierSampler::for_grid(g, K);
    const auto s1 = FourierSampler::for_pooled_level(g, 0, g.dims(), K);
    std::vector<double> y0(3 * g.voxel_count()), y1(y0.size());
    s0.synthesize(b.cos_coeffs, b.sin_coeffs, y0);
    s1.synthesize(b.cos_coeffs, b.sin_coeffs, y1);
    for (size_t n = 0; n < y0.size(); ++n) CHECK(y0[n] == doctest::Approx(y1[n]).epsilon(1e-14));

    // At level 1 the samples sit at the centres of 2x2x2 fine blocks.
    const auto s2 = FourierSampler::for_pooled_level(g, 1, {4, 4, 4}, K);
    std::vector<double> yc(3 * 64);
    s2.synthesize(b.cos_coeffs, b.sin_coeffs, yc);
    for (int64_t k = 0; k < 4; ++k)
        for (int64_t j = 0; j < 4; ++j)
            for (int64_t i = 0; i < 4; ++i) {
                const double xh[3] = {(2 * i + 0.5) / 8.0, (2 * j + 0.5) / 8.0, (2 * k + 0.5) / 8.0};
                const Vec3 e = brute_force_at(b, xh);
                const size_t n = static_cast<size_t>(i + 4 * (j + 4 * k));
                for (int c = 0; c < 3; ++c) CHECK(std::abs(yc[c * 64 + n] - e[c]) < 1e-10);
            }
    CHECK(s2.sample_dims() == Index3{4, 4, 4});
}
