// grid.hpp - Axis-aligned voxel grids and small fixed-size vector/matrix types.
#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>

namespace lamotion {

struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    double &operator[](int axis) { return axis == 0 ? x : (axis == 1 ? y : z); }
    double operator[](int axis) const { return axis == 0 ? x : (axis == 1 ? y : z); }

    Vec3 &operator+=(const Vec3 &o) { x += o.x; y += o.y; z += o.z; return *this; }
    Vec3 &operator-=(const Vec3 &o) { x -= o.x; y -= o.y; z -= o.z; return *this; }
    Vec3 &operator*=(double s) { x *= s; y *= s; z *= s; return *this; }

    friend Vec3 operator+(Vec3 a, const Vec3 &b) { return a += b; }
    friend Vec3 operator-(Vec3 a, const Vec3 &b) { return a -= b; }
    friend Vec3 operator*(Vec3 a, double s) { return a *= s; }
    friend Vec3 operator*(double s, Vec3 a) { return a *= s; }
    friend bool operator==(const Vec3 &, const Vec3 &) = default;
};

inline double dot(const Vec3 &a, const Vec3 &b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(const Vec3 &a, const Vec3 &b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(const Vec3 &a) { return std::sqrt(dot(a, a)); }
inline bool is_finite(const Vec3 &a) { return std::isfinite(a.x) && std::isfinite(a.y) && std::isfinite(a.z); }

/// Row-major 3x3 matrix. m(r, c).
struct Mat3 {
    std::array<double, 9> v{};

    double &operator()(int r, int c) { return v[static_cast<size_t>(3 * r + c)]; }
    double operator()(int r, int c) const { return v[static_cast<size_t>(3 * r + c)]; }

    static Mat3 identity() {
        Mat3 m;
        m(0, 0) = m(1, 1) = m(2, 2) = 1.0;
        return m;
    }
    double frobenius_sq() const {
        double s = 0.0;
        for (double e : v) s += e * e;
        return s;
    }
    double determinant() const {
        const auto &m = *this;
        return m(0, 0) * (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1)) -
               m(0, 1) * (m(1, 0) * m(2, 2) - m(1, 2) * m(2, 0)) +
               m(0, 2) * (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0));
    }
    friend bool operator==(const Mat3 &, const Mat3 &) = default;
};

using Index3 = std::array<int64_t, 3>;

/// Regular, axis-aligned sampling lattice. Voxel (i,j,k) sits at origin + (i*sx, j*sy, k*sz);
/// linear storage is X-fastest.
class Grid {
  public:
    Grid() = default;
    Grid(Index3 dims, Vec3 spacing_mm, Vec3 origin_mm = {});

    const Index3 &dims() const { return dims_; }
    int64_t dim(int axis) const { return dims_[static_cast<size_t>(axis)]; }
    const Vec3 &spacing() const { return spacing_; }
    const Vec3 &origin() const { return origin_; }

    size_t voxel_count() const {
        return static_cast<size_t>(dims_[0] * dims_[1] * dims_[2]);
    }
    size_t linear(int64_t i, int64_t j, int64_t k) const {
        return static_cast<size_t>(i + dims_[0] * (j + dims_[1] * k));
    }
    Index3 unravel(size_t n) const {
        const auto s = static_cast<int64_t>(n);
        return {s % dims_[0], (s / dims_[0]) % dims_[1], s / (dims_[0] * dims_[1])};
    }
    Vec3 world(int64_t i, int64_t j, int64_t k) const {
        return {origin_.x + static_cast<double>(i) * spacing_.x,
                origin_.y + static_cast<double>(j) * spacing_.y,
                origin_.z + static_cast<double>(k) * spacing_.z};
    }
    /// Continuous voxel index of a world point.
    Vec3 to_index(const Vec3 &p) const {
        return {(p.x - origin_.x) / spacing_.x, (p.y - origin_.y) / spacing_.y, (p.z - origin_.z) / spacing_.z};
    }
    double min_spacing() const;
    bool contains(int64_t i, int64_t j, int64_t k) const {
        return i >= 0 && j >= 0 && k >= 0 && i < dims_[0] && j < dims_[1] && k < dims_[2];
    }

    friend bool operator==(const Grid &, const Grid &) = default;

  private:
    Index3 dims_{2, 2, 2};
    Vec3 spacing_{1.0, 1.0, 1.0};
    Vec3 origin_{};
};

} // namespace lamotion
