#include <cmath>
#include <random>

#include "doctest.h"
#include "lamotion/phantom.hpp"
#include "lamotion/registration.hpp"
#include "test_util.hpp"

using namespace lamotion;
using namespace testutil;

namespace {

// LNCC evaluated by looping over every window explicitly.
double brute_lncc(const Volume &a, const Volume &b, int window) {
    const auto &g = a.grid;
    const int64_t r = window / 2;
    double acc = 0.0;
    for (int64_t k = 0; k < g.dim(2); ++k)
        for (int64_t j = 0; j < g.dim(1); ++j)
            for (int64_t i = 0; i < g.dim(0); ++i) {
                double n = 0, sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
                for (int64_t z = std::max<int64_t>(0, k - r); z <= std::min(g.dim(2) - 1, k + r); ++z)
                    for (int64_t y = std::max<int64_t>(0, j - r); y <= std::min(g.dim(1) - 1, j + r); ++y)
                        for (int64_t x = std::max<int64_t>(0, i - r); x <= std::min(g.dim(0) - 1, i + r); ++x) {
                            const double va = a.at(x, y, z), vb = b.at(x, y, z);
                            n += 1;
                            sa += va;
                            sb += vb;
                            saa += va * va;
                            sbb += vb * vb;
                            sab += va * vb;
                        }
                const double ma = sa / n, mb = sb / n;
                const double cov = sab / n - ma * mb, var_a = saa / n - ma * ma, var_b = sbb / n - mb * mb;
                acc += (cov * cov + 1e-8) / (var_a * var_b + 1e-8);
            }
    return 1.0 - acc / static_cast<double>(g.voxel_count());
}

PhantomConfig small_phantom() {
    PhantomConfig c;
    c.dims = {16, 16, 16};
    c.frames = 8;
    c.seed = 2;
    return c;
}

// Smooth textured volume f(x + shift) evaluated analytically (no resampling).
Volume shifted_texture(const Grid &g, const Vec3 &shift) {
    // Smooth phantom rescaled to unit contrast between background and wall.
    const PhantomConfig c = small_phantom();
    return volume_from(g, [&](const Vec3 &p) { return (reference_intensity(c, p + shift) - 0.1) / 0.6; });
}

RegConfig quick_config() {
    RegConfig r;
    r.iters_per_level = 60;
    return r;
}

Vec3 mean_vector(const DisplacementField &f) {
    Vec3 m;
    for (const auto &v : f.vectors) m += v;
    return (1.0 / static_cast<double>(f.vectors.size())) * m;
}

}  // namespace

TEST_CASE("similarity_loss closed forms") {
    std::mt19937_64 rng(1);
    const Grid g({7, 6, 8}, {1, 1, 1});
    const auto a = random_volume(g, rng);
    const Similarity mse{}, lncc{SimilarityKind::LNCC, 3};
    CHECK(similarity_loss(a, a, mse) == 0.0);
    CHECK(similarity_loss(a, a, lncc) == 0.0);

    Volume b = a;
    for (auto &v : b.values) v += 0.4;
    CHECK(similarity_loss(a, b, mse) == doctest::Approx(0.16).epsilon(1e-12));
    CHECK(std::abs(similarity_loss(a, b, lncc)) < 1e-9);

    CHECK(similarity_loss(Volume(g, 0.0), Volume(g, 1.0), mse) == 1.0);
    CHECK_THROWS_AS(similarity_loss(a, Volume(cube_grid(4)), mse), std::invalid_argument);
    CHECK_THROWS_AS(similarity_loss(a, b, Similarity{SimilarityKind::LNCC, 7}), std::invalid_argument);
}

TEST_CASE("LNCC matches explicit window loops") {
    std::mt19937_64 rng(2);
    const Grid g({6, 7, 5}, {1, 1, 1});
    for (int w : {1, 3, 5}) {
        const auto a = random_volume(g, rng), b = random_volume(g, rng);
        CHECK(similarity_loss(a, b, {SimilarityKind::LNCC, w}) == doctest::Approx(brute_lncc(a, b, w)).epsilon(1e-12));
    }
}

TEST_CASE("similarity gradients match central differences") {
    std::mt19937_64 rng(3);
    const Grid g({6, 5, 6}, {1, 1, 1});
    const auto a = random_volume(g, rng), b = random_volume(g, rng);
    for (const Similarity sim : {Similarity{}, Similarity{SimilarityKind::LNCC, 3}, Similarity{SimilarityKind::LNCC, 5}}) {
        std::vector<double> grad;
        const double f0 = similarity_loss_and_gradient(a, b, sim, grad);
        CHECK(f0 == doctest::Approx(similarity_loss(a, b, sim)).epsilon(1e-14));
        double scale = 0.0;
        for (double v : grad) scale = std::max(scale, std::abs(v));
        double worst = 0.0;
        const double h = 1e-6;
        for (size_t n = 0; n < a.values.size(); ++n) {
            Volume ap = a, am = a;
            ap.values[n] += h;
            am.values[n] -= h;
            const double num = (similarity_loss(ap, b, sim) - similarity_loss(am, b, sim)) / (2 * h);
            worst = std::max(worst, std::abs(num - grad[n]) / std::max({std::abs(num), std::abs(grad[n]), 1e-3 * scale}));
        }
        CHECK(worst < 1e-5);
    }
}

TEST_CASE("build_pyramid") {
    const Grid g({4, 4, 4}, {1.0, 2.0, 1.5});
    Volume v(g);
    for (size_t n = 0; n < v.values.size(); ++n) v.values[n] = static_cast<double>(n);

    CHECK(build_pyramid(v, 1).size() == 1);
    const auto p = build_pyramid(Volume(cube_grid(16), 0.25), 3);
    REQUIRE(p.size() == 3);
    for (const auto &lvl : p)
        for (double x : lvl.values) CHECK(x == 0.25);
    CHECK(p[2].grid.dims() == Index3{4, 4, 4});
    CHECK(p[2].grid.spacing() == Vec3{4, 4, 4});

    // Eight octant means of 0..63, computed by enumeration.
    const auto pyr = build_pyramid(v, 2);
    REQUIRE(pyr[1].grid.dims() == Index3{2, 2, 2});
    CHECK(pyr[1].grid.spacing() == Vec3{2.0, 4.0, 3.0});
    for (int oct = 0; oct < 8; ++oct) {
        const int ox = oct & 1, oy = (oct >> 1) & 1, oz = (oct >> 2) & 1;
        double sum = 0;
        for (int z = 0; z < 2; ++z)
            for (int y = 0; y < 2; ++y)
                for (int x = 0; x < 2; ++x) sum += static_cast<double>((2 * ox + x) + 4 * (2 * oy + y) + 16 * (2 * oz + z));
        CHECK(pyr[1].at(ox, oy, oz) == sum / 8.0);
    }
    CHECK_THROWS_AS(build_pyramid(v, 3), std::invalid_argument);
    CHECK_THROWS_AS(build_pyramid(v, 0), std::invalid_argument);
}

TEST_CASE("RegConfig validation") {
    const Grid g = cube_grid(16);
    RegConfig c;
    CHECK_NOTHROW(c.validate(g));
    c.levels = 4;
    CHECK_THROWS_AS(c.validate(g), std::invalid_argument);
    c = RegConfig{};
    c.lambda_smooth = -1;
    CHECK_THROWS_AS(c.validate(g), std::invalid_argument);
    c = RegConfig{};
    c.cutoff = {8, 6, 6};
    CHECK_THROWS_AS(c.validate(g), std::invalid_argument);
    c = RegConfig{};
    c.similarity = {SimilarityKind::LNCC, 17};
    CHECK_THROWS_AS(c.validate(g), std::invalid_argument);
}

TEST_CASE("self-registration stays at the identity") {
    const auto p = generate_case(small_phantom());
    const auto r = register_pair(p.frames[0], p.frames[0], quick_config());
    CHECK(r.dvf.mean_magnitude() < 0.05 * p.frames[0].grid.min_spacing());
    CHECK(r.final_loss.total <= 1e-6);
    const auto propagated = warp_mask(p.masks[0], r.dvf);
    CHECK(propagated.labels == p.masks[0].labels);
}

TEST_CASE("one-voxel translation is recovered") {
    const Grid g = cube_grid(16, 1.8);
    const auto moving = shifted_texture(g, {});
    const auto fixed = shifted_texture(g, {1.8, 0, 0});
    const auto r = register_pair(fixed, moving, quick_config());
    DisplacementField truth(g);
    for (auto &v : truth.vectors) v = {1.8, 0, 0};
    const auto e = endpoint_error(r.dvf, truth);
    MESSAGE("translation mean endpoint error " << e.mean_mm / 1.8 << " voxel");
    CHECK(e.mean_mm < 0.25 * 1.8);
}

TEST_CASE("translation equivariance") {
    const Grid g = cube_grid(16, 1.8);
    const auto v0 = shifted_texture(g, {});
    const auto v1 = shifted_texture(g, {0, 1.8, 0});
    const auto v2 = shifted_texture(g, {0, 3.6, 0});
    const auto a = register_pair(v1, v0, quick_config());
    const auto b = register_pair(v2, v1, quick_config());
    CHECK(norm(mean_vector(a.dvf) - mean_vector(b.dvf)) < 0.1 * 1.8);
}

TEST_CASE("loss trace, band limit and regularisation") {
    const auto p = generate_case(small_phantom());
    RegConfig cfg = quick_config();
    const auto r = register_pair(p.frames[3], p.frames[0], cfg);

    REQUIRE(!r.loss_trace.empty());
    REQUIRE(r.loss_trace.size() == r.trace_level.size());
    for (const auto &t : r.loss_trace) {
        CHECK(std::isfinite(t.total));
        CHECK(t.smoothness >= 0.0);
    }
    // Non-increasing within each pyramid level once its first 10% of iterations have passed.
    size_t start = 0;
    for (size_t i = 1; i <= r.loss_trace.size(); ++i) {
        if (i == r.loss_trace.size() || r.trace_level[i] != r.trace_level[start]) {
            for (size_t j = start + std::max<size_t>(1, (i - start) / 10); j < i; ++j) CHECK(r.loss_trace[j].total <= r.loss_trace[j - 1].total);
            start = i;
        }
    }
    CHECK(r.final_loss.total < r.initial_loss.total);

    const auto back = synthesize_bandlimited(project_bandlimited(r.dvf, cfg.cutoff));
    double worst = 0;
    for (size_t n = 0; n < back.vectors.size(); ++n) worst = std::max(worst, norm(back.vectors[n] - r.dvf.vectors[n]));
    CHECK(worst < 1e-10);

    RegConfig stiff = cfg, loose = cfg;
    stiff.lambda_smooth = 1e6;
    loose.lambda_smooth = 0.0;
    const auto rs = register_pair(p.frames[3], p.frames[0], stiff);
    const auto rl = register_pair(p.frames[3], p.frames[0], loose);
    CHECK(smoothness_loss(rs.dvf) < smoothness_loss(rl.dvf));
}

TEST_CASE("LNCC registration also recovers the deformation") {
    const auto p = generate_case(small_phantom());
    RegConfig cfg = quick_config();
    cfg.similarity = {SimilarityKind::LNCC, 9};
    // LNCC losses are O(0.1) against O(1e-3) for MSE on this phantom, so the weight scales with them.
    cfg.lambda_smooth = 1.0;
    const auto r = register_pair(p.frames[2], p.frames[0], cfg);
    const auto region = shell_region(p);
    const auto before = endpoint_error(DisplacementField(p.frames[0].grid), p.gt_dvfs[1], &region);
    const auto after = endpoint_error(r.dvf, p.gt_dvfs[1], &region);
    CHECK(after.mean_mm < 0.5 * before.mean_mm);
}

TEST_CASE("track_cycle") {
    const auto p = generate_case(small_phantom());
    SUBCASE("identical frames give identity fields") {
        std::vector<Volume> same(3, p.frames[0]);
        const auto out = track_cycle(same, 1, quick_config());
        REQUIRE(out.size() == 2);
        CHECK(out[0].to_frame == 0);
        CHECK(out[1].to_frame == 2);
        for (const auto &f : out) {
            CHECK(f.from_frame == 1);
            CHECK(f.mean_magnitude() < 0.05 * 1.8);
        }
    }
    SUBCASE("argument errors") {
        CHECK_THROWS_AS(track_cycle({p.frames[0]}, 0, quick_config()), std::invalid_argument);
        CHECK_THROWS_AS(track_cycle(p.frames, 8, quick_config()), std::invalid_argument);
    }
    SUBCASE("failures name the frame") {
        std::vector<Volume> frames(p.frames.begin(), p.frames.begin() + 3);
        frames[2].values[10] = std::nan("");
        try {
            track_cycle(frames, 0, quick_config());
            FAIL("expected failure");
        } catch (const std::runtime_error &e) {
            CHECK(std::string(e.what()).find("frame 2") != std::string::npos);
        }
    }
    SUBCASE("cyclic consistency with the reverse registration") {
        std::vector<Volume> frames(p.frames.begin(), p.frames.begin() + 5);
        const auto fwd = track_cycle(frames, 0, quick_config());
        const auto &u = fwd[3];  // reference -> frame 4 (peak)
        const auto w = register_pair(frames[0], frames[4], quick_config()).dvf;
        const auto loop = compose(u, w);
        MESSAGE("cycle residual " << loop.mean_magnitude() / 1.8 << " voxel, gt magnitude " << p.gt_dvfs[3].mean_magnitude() / 1.8);
        CHECK(loop.mean_magnitude() < 0.5 * 1.8);
    }
}
