// mesh.hpp - Triangle surfaces from masks, DVF-driven mesh motion and Wavefront OBJ files.
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "lamotion/field.hpp"

namespace lamotion {

struct TriMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<uint32_t, 3>> triangles;
    /// Optional per-vertex scalar; empty or one value per vertex.
    std::vector<double> attribute;

    /// Throws std::invalid_argument on out-of-range or repeated indices, or a bad attribute size.
    void validate() const;
    bool empty() const { return triangles.empty(); }
};

struct MeshOptions {
    double iso = 0.5;
    /// One pass of 7-point (self + 6 neighbours) box smoothing before extraction.
    bool smooth = false;
};

/// Marching cubes over the mask as a 0/1 field, zero-padded so surfaces always close. Vertices are
/// in world mm; triangles wind counter-clockwise seen from outside.
TriMesh marching_cubes(const Mask &mask, const MeshOptions &opt = {});

/// Same on an arbitrary scalar volume; the "inside" is where the value exceeds `iso`.
TriMesh marching_cubes(const Volume &field, double iso);

/// Moves every vertex by the field sampled (trilinear, clamped) at its position.
TriMesh warp_mesh(const TriMesh &mesh, const DisplacementField &dvf);

double surface_area(const TriMesh &mesh);

/// Signed enclosed volume (positive for outward winding of a closed surface).
double signed_volume(const TriMesh &mesh);

/// Number of undirected edges used by other than exactly two triangles.
size_t non_manifold_edges(const TriMesh &mesh);

/// True when every directed edge occurs at most once and each has its reverse in another triangle.
bool consistently_oriented(const TriMesh &mesh);

int64_t euler_characteristic(const TriMesh &mesh);

void write_obj(std::ostream &os, const TriMesh &mesh);
TriMesh read_obj(std::istream &is);
void save_obj(const std::filesystem::path &path, const TriMesh &mesh);
TriMesh load_obj(const std::filesystem::path &path);

} // namespace lamotion
