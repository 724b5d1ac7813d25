#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "doctest.h"
#include "lamotion/mesh.hpp"
#include "lamotion/strain.hpp"
#include "test_util.hpp"

using namespace lamotion;
using namespace testutil;

namespace {

void check_closed_surface(const TriMesh &m) {
    CHECK_NOTHROW(m.validate());
    CHECK(non_manifold_edges(m) == 0);
    CHECK(consistently_oriented(m));
    CHECK(signed_volume(m) > 0.0);
}

} // namespace

TEST_CASE("marching cubes basics") {
    const Grid g = cube_grid(5, 2.0);
    CHECK(marching_cubes(Mask(g)).empty());

    Mask one(g);
    one.at(2, 2, 2) = 1;
    const auto m = marching_cubes(one);
    check_closed_surface(m);
    CHECK(euler_characteristic(m) == 2);
    // Vertices sit at edge midpoints, one voxel from the centre along each axis.
    for (const auto &v : m.vertices) {
        const Vec3 d = v - g.world(2, 2, 2);
        CHECK(std::abs(d.x) + std::abs(d.y) + std::abs(d.z) == doctest::Approx(1.0));
    }

    Mask corner(g);
    corner.at(0, 0, 0) = 1;
    check_closed_surface(marching_cubes(corner));
}

TEST_CASE("random interior masks give watertight, oriented surfaces") {
    std::mt19937_64 rng(2);
    const Grid g = cube_grid(10);
    for (int n = 0; n < 20; ++n) {
        Mask m = random_mask(g, rng, 0.45);
        for (int64_t k = 0; k < 10; ++k)
            for (int64_t j = 0; j < 10; ++j)
                for (int64_t i = 0; i < 10; ++i)
                    if (i == 0 || j == 0 || k == 0 || i == 9 || j == 9 || k == 9) m.at(i, j, k) = 0;
        for (bool smooth : {false, true}) {
            const auto mesh = marching_cubes(m, {0.5, smooth});
            CHECK(non_manifold_edges(mesh) == 0);
            CHECK(consistently_oriented(mesh));
            CHECK_NOTHROW(mesh.validate());
        }
    }
}

TEST_CASE("sphere area") {
    const Grid g = cube_grid(28);
    const Mask s = sphere_mask(g, {13.5, 13.5, 13.5}, 10.0);
    const double exact = 4.0 * std::numbers::pi * 100.0;
    const double raw = surface_area(marching_cubes(s)) / exact;
    const double smooth = surface_area(marching_cubes(s, {0.5, true})) / exact;
    MESSAGE("area ratio raw " << raw << ", smoothed " << smooth);
    CHECK(std::abs(smooth - 1.0) < 0.05);
    CHECK(raw > 1.0);

    // A smooth scalar field is resolved far more accurately than a binary mask.
    const Volume dist = volume_from(g, [](const Vec3 &p) { return 10.0 - norm(p - Vec3{13.5, 13.5, 13.5}); });
    const auto iso = marching_cubes(dist, 0.0);
    check_closed_surface(iso);
    CHECK(surface_area(iso) == doctest::Approx(exact).epsilon(0.01));
    CHECK(signed_volume(iso) == doctest::Approx(4.0 / 3.0 * std::numbers::pi * 1000.0).epsilon(0.01));
}

TEST_CASE("warp_mesh") {
    const Grid g = cube_grid(20);
    const auto mesh = marching_cubes(sphere_mask(g, {10, 10, 10}, 4.0));
    CHECK(warp_mesh(mesh, DisplacementField(g)).vertices == mesh.vertices);

    DisplacementField c(g);
    for (auto &v : c.vectors) v = {0.5, -1.0, 2.0};
    const auto moved = warp_mesh(mesh, c);
    for (size_t n = 0; n < mesh.vertices.size(); ++n) CHECK(norm(moved.vertices[n] - mesh.vertices[n] - Vec3{0.5, -1.0, 2.0}) < 1e-12);
    CHECK(moved.triangles == mesh.triangles);

    const auto lin = field_from(g, [](const Vec3 &p) { return Vec3{0.1 * p.x, 0, 0}; });
    TriMesh probe;
    probe.vertices = {{10.0, 3.0, 4.0}, {7.25, 1.5, 2.0}};
    const auto out = warp_mesh(probe, lin);
    CHECK(out.vertices[0].x == doctest::Approx(11.0).epsilon(1e-12));
    CHECK(out.vertices[1].x == doctest::Approx(7.975).epsilon(1e-12));
}

TEST_CASE("OBJ round trip and validation") {
    const Grid g({7, 6, 5}, {1.3, 0.7, 2.1}, {-3.0, 1.0, 0.25});
    Mask m(g);
    m.at(2, 2, 2) = m.at(3, 2, 2) = m.at(3, 3, 2) = 1;
    const auto mesh = marching_cubes(m);
    std::stringstream ss;
    write_obj(ss, mesh);
    const std::string text = ss.str();
    CHECK(text.rfind("v ", 0) == 0);
    const auto back = read_obj(ss);
    CHECK(back.vertices == mesh.vertices);
    CHECK(back.triangles == mesh.triangles);

    std::istringstream quad("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1/1 2/2 3/3 4/4\n");
    CHECK(read_obj(quad).triangles.size() == 2);
    std::istringstream bad("v 0 0 0\nv 1 0 0\nf 1 2 5\n");
    CHECK_THROWS_AS(read_obj(bad), std::runtime_error);

    TriMesh degenerate;
    degenerate.vertices = {{0, 0, 0}, {1, 0, 0}};
    degenerate.triangles = {{0, 1, 1}};
    CHECK_THROWS_AS(degenerate.validate(), std::invalid_argument);
}

TEST_CASE("Green-Lagrange strain") {
    const Grid g = cube_grid(6, 1.5);
    SUBCASE("zero and translation fields are strain free") {
        for (const Vec3 t : {Vec3{}, Vec3{1.2, -0.4, 3.0}}) {
            DisplacementField f(g);
            for (auto &v : f.vectors) v = t;
            for (const auto &E : green_lagrange(f).tensors) CHECK(E.frobenius_sq() == 0.0);
        }
    }
    SUBCASE("uniaxial stretch") {
        const auto s = green_lagrange(field_from(g, [](const Vec3 &p) { return Vec3{0.1 * p.x, 0, 0}; }));
        for (const auto &E : s.tensors) {
            CHECK(std::abs(E(0, 0) - 0.105) < 1e-10);
            double off = 0;
            for (int r = 0; r < 3; ++r)
                for (int c = 0; c < 3; ++c)
                    if (r || c) off = std::max(off, std::abs(E(r, c)));
            CHECK(off < 1e-10);
        }
        for (double t : s.trace()) CHECK(t == doctest::Approx(0.105));
        for (double m : s.max_principal()) CHECK(m == doctest::Approx(0.105));
    }
    SUBCASE("random affine fields match the closed form") {
        std::mt19937_64 rng(4);
        std::uniform_real_distribution<double> d(-0.2, 0.2);
        for (int n = 0; n < 10; ++n) {
            Mat3 A;
            for (auto &a : A.v) a = d(rng);
            const Vec3 b{d(rng), d(rng), d(rng)};
            const auto f = field_from(g, [&](const Vec3 &p) {
                return Vec3{A(0, 0) * p.x + A(0, 1) * p.y + A(0, 2) * p.z, A(1, 0) * p.x + A(1, 1) * p.y + A(1, 2) * p.z,
                            A(2, 0) * p.x + A(2, 1) * p.y + A(2, 2) * p.z} + b;
            });
            for (const auto &E : green_lagrange(f).tensors)
                for (int r = 0; r < 3; ++r)
                    for (int c = 0; c < 3; ++c) {
                        double ata = 0;
                        for (int m = 0; m < 3; ++m) ata += A(m, r) * A(m, c);
                        CHECK(std::abs(E(r, c) - 0.5 * (A(r, c) + A(c, r) + ata)) < 1e-10);
                        CHECK(E(r, c) == E(c, r));
                    }
        }
    }
    SUBCASE("small rotations") {
        const double th = 0.01;
        const Vec3 ctr{4, 4, 4};
        const auto exact = field_from(g, [&](const Vec3 &p) {
            const Vec3 d = p - ctr;
            return Vec3{std::cos(th) * d.x - std::sin(th) * d.y - d.x, std::sin(th) * d.x + std::cos(th) * d.y - d.y, 0};
        });
        const auto linear = field_from(g, [&](const Vec3 &p) { return th * Vec3{-(p - ctr).y, (p - ctr).x, 0}; });
        for (const auto &E : green_lagrange(exact).tensors) CHECK(std::sqrt(E.frobenius_sq()) < 1e-12);
        for (const auto &E : green_lagrange(linear).tensors) CHECK(std::sqrt(E.frobenius_sq()) < 1e-4);
    }
}

TEST_CASE("symmetric eigenvalues") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> d(-1, 1);
    for (int n = 0; n < 20; ++n) {
        // Q D Q^T with Q a rotation built from a random axis-angle.
        Vec3 ax{d(rng), d(rng), d(rng)};
        ax = (1.0 / norm(ax)) * ax;
        const double a = 3.0 * d(rng), c = std::cos(a), s = std::sin(a);
        Mat3 Q;
        for (int r = 0; r < 3; ++r)
            for (int k = 0; k < 3; ++k) Q(r, k) = (r == k ? c : 0.0) + (1 - c) * ax[r] * ax[k];
        Q(0, 1) -= s * ax.z; Q(1, 0) += s * ax.z;
        Q(0, 2) += s * ax.y; Q(2, 0) -= s * ax.y;
        Q(1, 2) -= s * ax.x; Q(2, 1) += s * ax.x;
        std::array<double, 3> ev{d(rng), d(rng), d(rng)};
        if (n == 0) ev = {0.3, 0.3, -0.2};
        Mat3 M;
        for (int r = 0; r < 3; ++r)
            for (int k = 0; k < 3; ++k)
                for (int m = 0; m < 3; ++m) M(r, k) += Q(r, m) * ev[size_t(m)] * Q(k, m);
        std::sort(ev.begin(), ev.end());
        const Vec3 got = symmetric_eigenvalues(M);
        for (int i = 0; i < 3; ++i) CHECK(std::abs(got[i] - ev[size_t(i)]) < (n == 0 ? 1e-7 : 1e-9));
    }
}
