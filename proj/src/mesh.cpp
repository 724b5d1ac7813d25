// mesh.cpp - Marching cubes, mesh motion and OBJ files.

#include "lamotion/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>

#include "lamotion/io.hpp"
#include "mc_tables.hpp"

namespace lamotion {

namespace {

using detail::kMcEdgeTable;
using detail::kMcTriTable;

constexpr std::array<std::array<int, 3>, 8> kCellCorner = {{
    {0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}, {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1},
}};
constexpr std::array<std::array<int, 2>, 12> kCellEdge = {{
    {0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6}, {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7},
}};

// Scalar field on the grid padded by one voxel per side; padded index p maps to grid index p - 1.
struct Padded {
    Grid grid;
    int64_t X = 0, Y = 0, Z = 0;
    std::vector<double> v;

    double at(int64_t i, int64_t j, int64_t k) const { return v[static_cast<size_t>(i + X * (j + Y * k))]; }
};

Padded pad(const Grid &g, const std::vector<double> &values, double fill) {
    Padded p;
    p.grid = g;
    p.X = g.dim(0) + 2;
    p.Y = g.dim(1) + 2;
    p.Z = g.dim(2) + 2;
    p.v.assign(static_cast<size_t>(p.X * p.Y * p.Z), fill);
    for (int64_t k = 0; k < g.dim(2); ++k)
        for (int64_t j = 0; j < g.dim(1); ++j)
            for (int64_t i = 0; i < g.dim(0); ++i)
                p.v[static_cast<size_t>((i + 1) + p.X * ((j + 1) + p.Y * (k + 1)))] = values[g.linear(i, j, k)];
    return p;
}

Vec3 padded_world(const Grid &g, double i, double j, double k) {
    return {g.origin().x + (i - 1.0) * g.spacing().x, g.origin().y + (j - 1.0) * g.spacing().y, g.origin().z + (k - 1.0) * g.spacing().z};
}

TriMesh extract(const Padded &f, double iso) {
    TriMesh mesh;
    std::unordered_map<uint64_t, uint32_t> edge_vertex;
    auto corner_value = [&](int64_t i, int64_t j, int64_t k, int c) {
        return f.at(i + kCellCorner[size_t(c)][0], j + kCellCorner[size_t(c)][1], k + kCellCorner[size_t(c)][2]);
    };
    auto vertex_on = [&](int64_t i, int64_t j, int64_t k, int e) -> uint32_t {
        const auto &c0 = kCellCorner[size_t(kCellEdge[size_t(e)][0])];
        const auto &c1 = kCellCorner[size_t(kCellEdge[size_t(e)][1])];
        const int64_t a0 = i + c0[0], b0 = j + c0[1], d0 = k + c0[2];
        const int64_t a1 = i + c1[0], b1 = j + c1[1], d1 = k + c1[2];
        const int axis = a0 != a1 ? 0 : (b0 != b1 ? 1 : 2);
        const int64_t la = std::min(a0, a1), lb = std::min(b0, b1), ld = std::min(d0, d1);
        const uint64_t key = static_cast<uint64_t>(la + f.X * (lb + f.Y * ld)) * 3 + static_cast<uint64_t>(axis);
        if (auto it = edge_vertex.find(key); it != edge_vertex.end()) return it->second;
        const double v0 = f.at(a0, b0, d0), v1 = f.at(a1, b1, d1);
        double t = (iso - v0) / (v1 - v0);
        t = std::clamp(t, 1e-6, 1.0 - 1e-6);
        const Vec3 p0 = padded_world(f.grid, double(a0), double(b0), double(d0));
        const Vec3 p1 = padded_world(f.grid, double(a1), double(b1), double(d1));
        const auto idx = static_cast<uint32_t>(mesh.vertices.size());
        mesh.vertices.push_back(p0 + t * (p1 - p0));
        edge_vertex.emplace(key, idx);
        return idx;
    };

    for (int64_t k = 0; k + 1 < f.Z; ++k)
        for (int64_t j = 0; j + 1 < f.Y; ++j)
            for (int64_t i = 0; i + 1 < f.X; ++i) {
                int cube = 0;
                for (int c = 0; c < 8; ++c)
                    if (corner_value(i, j, k, c) <= iso) cube |= 1 << c;
                if (kMcEdgeTable[size_t(cube)] == 0) continue;
                const auto &tri = kMcTriTable[cube];
                for (int n = 0; tri[n] != -1; n += 3) {
                    mesh.triangles.push_back({vertex_on(i, j, k, tri[n]), vertex_on(i, j, k, tri[n + 1]), vertex_on(i, j, k, tri[n + 2])});
                }
            }
    if (signed_volume(mesh) < 0.0) {
        for (auto &t : mesh.triangles) std::swap(t[1], t[2]);
    }
    return mesh;
}

uint64_t edge_key(uint32_t a, uint32_t b) { return (static_cast<uint64_t>(a) << 32) | b; }

} // namespace

void TriMesh::validate() const {
    const auto n = vertices.size();
    for (const auto &t : triangles) {
        for (auto i : t)
            if (i >= n) throw std::invalid_argument("TriMesh: triangle index out of range");
        if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2]) throw std::invalid_argument("TriMesh: degenerate triangle");
    }
    for (const auto &v : vertices)
        if (!is_finite(v)) throw std::invalid_argument("TriMesh: non-finite vertex");
    if (!attribute.empty() && attribute.size() != n) throw std::invalid_argument("TriMesh: attribute size does not match vertex count");
}

TriMesh marching_cubes(const Mask &mask, const MeshOptions &opt) {
    const auto &g = mask.grid;
    std::vector<double> v(mask.labels.size());
    for (size_t n = 0; n < v.size(); ++n) v[n] = mask.labels[n] ? 1.0 : 0.0;
    if (opt.smooth) {
        std::vector<double> s(v.size());
        const int64_t X = g.dim(0), Y = g.dim(1), Z = g.dim(2);
        auto get = [&](int64_t i, int64_t j, int64_t k) {
            return (i < 0 || j < 0 || k < 0 || i >= X || j >= Y || k >= Z) ? 0.0 : v[g.linear(i, j, k)];
        };
        for (int64_t k = 0; k < Z; ++k)
            for (int64_t j = 0; j < Y; ++j)
                for (int64_t i = 0; i < X; ++i) {
                    s[g.linear(i, j, k)] = (get(i, j, k) + get(i - 1, j, k) + get(i + 1, j, k) + get(i, j - 1, k) + get(i, j + 1, k) +
                                            get(i, j, k - 1) + get(i, j, k + 1)) / 7.0;
                }
        v = std::move(s);
    }
    return extract(pad(g, v, 0.0), opt.iso);
}

TriMesh marching_cubes(const Volume &field, double iso) {
    if (!std::isfinite(iso)) throw std::invalid_argument("marching_cubes: iso must be finite");
    double lo = iso;
    for (double x : field.values) {
        if (!std::isfinite(x)) throw std::invalid_argument("marching_cubes: non-finite value");
        lo = std::min(lo, x);
    }
    return extract(pad(field.grid, field.values, lo - 1.0), iso);
}

TriMesh warp_mesh(const TriMesh &mesh, const DisplacementField &dvf) {
    TriMesh out = mesh;
    for (auto &p : out.vertices) p += sample_field(dvf, p);
    return out;
}

double surface_area(const TriMesh &mesh) {
    double a = 0.0;
    for (const auto &t : mesh.triangles) {
        const Vec3 &p = mesh.vertices[t[0]], &q = mesh.vertices[t[1]], &r = mesh.vertices[t[2]];
        a += 0.5 * norm(cross(q - p, r - p));
    }
    return a;
}

double signed_volume(const TriMesh &mesh) {
    double v = 0.0;
    for (const auto &t : mesh.triangles) v += dot(mesh.vertices[t[0]], cross(mesh.vertices[t[1]], mesh.vertices[t[2]]));
    return v / 6.0;
}

size_t non_manifold_edges(const TriMesh &mesh) {
    std::unordered_map<uint64_t, int> uses;
    for (const auto &t : mesh.triangles)
        for (int e = 0; e < 3; ++e) {
            const uint32_t a = t[size_t(e)], b = t[size_t((e + 1) % 3)];
            ++uses[edge_key(std::min(a, b), std::max(a, b))];
        }
    return static_cast<size_t>(std::count_if(uses.begin(), uses.end(), [](const auto &kv) { return kv.second != 2; }));
}

bool consistently_oriented(const TriMesh &mesh) {
    std::unordered_map<uint64_t, int> directed;
    for (const auto &t : mesh.triangles)
        for (int e = 0; e < 3; ++e)
            if (++directed[edge_key(t[size_t(e)], t[size_t((e + 1) % 3)])] > 1) return false;
    for (const auto &[key, n] : directed) {
        const auto a = static_cast<uint32_t>(key >> 32), b = static_cast<uint32_t>(key & 0xffffffffu);
        if (!directed.contains(edge_key(b, a))) return false;
    }
    return true;
}

int64_t euler_characteristic(const TriMesh &mesh) {
    std::unordered_map<uint64_t, int> edges;
    for (const auto &t : mesh.triangles)
        for (int e = 0; e < 3; ++e) {
            const uint32_t a = t[size_t(e)], b = t[size_t((e + 1) % 3)];
            edges[edge_key(std::min(a, b), std::max(a, b))] = 1;
        }
    return static_cast<int64_t>(mesh.vertices.size()) - static_cast<int64_t>(edges.size()) + static_cast<int64_t>(mesh.triangles.size());
}

void write_obj(std::ostream &os, const TriMesh &mesh) {
    mesh.validate();
    os.precision(std::numeric_limits<double>::max_digits10);
    for (const auto &v : mesh.vertices) os << "v " << v.x << ' ' << v.y << ' ' << v.z << '\n';
    for (const auto &t : mesh.triangles) os << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
}

TriMesh read_obj(std::istream &is) {
    TriMesh mesh;
    std::string line;
    size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        std::istringstream ls(line);
        std::string tag;
        if (!(ls >> tag) || tag[0] == '#') continue;
        if (tag == "v") {
            Vec3 p;
            if (!(ls >> p.x >> p.y >> p.z)) throw std::runtime_error("OBJ line " + std::to_string(lineno) + ": malformed vertex");
            mesh.vertices.push_back(p);
        } else if (tag == "f") {
            std::vector<uint32_t> idx;
            std::string tok;
            while (ls >> tok) {
                const long i = std::stol(tok.substr(0, tok.find('/')));
                if (i < 1) throw std::runtime_error("OBJ line " + std::to_string(lineno) + ": only positive face indices are supported");
                idx.push_back(static_cast<uint32_t>(i - 1));
            }
            if (idx.size() < 3) throw std::runtime_error("OBJ line " + std::to_string(lineno) + ": face needs 3 vertices");
            for (size_t n = 1; n + 1 < idx.size(); ++n) mesh.triangles.push_back({idx[0], idx[n], idx[n + 1]});
        }
    }
    try {
        mesh.validate();
    } catch (const std::invalid_argument &e) {
        throw std::runtime_error(std::string("OBJ: ") + e.what());
    }
    return mesh;
}

void save_obj(const std::filesystem::path &path, const TriMesh &mesh) {
    std::ostringstream os;
    write_obj(os, mesh);
    io::write_file_atomic(path, os.str());
}

TriMesh load_obj(const std::filesystem::path &path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read " + path.string());
    return read_obj(is);
}

} // namespace lamotion
