// metrics.cpp - Dice, brute-force surface distances and cycle reports.

#include "lamotion/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "lamotion/mesh.hpp"

namespace lamotion {

namespace {

void require_same_grid(const Mask &a, const Mask &b, const char *what) {
    if (!(a.grid == b.grid)) throw std::invalid_argument(std::string(what) + ": grid mismatch");
}

// Distance from each point of `from` to its nearest point of `to`, appended to `out`.
void nearest_distances(const std::vector<Vec3> &from, const std::vector<Vec3> &to, std::vector<double> &out) {
    for (const auto &p : from) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto &q : to) {
            const Vec3 d = p - q;
            best = std::min(best, dot(d, d));
        }
        out.push_back(std::sqrt(best));
    }
}

std::vector<Vec3> boundary_points(const Mask &m) {
    std::vector<Vec3> pts;
    for (size_t n : boundary_voxels(m)) {
        const auto ijk = m.grid.unravel(n);
        pts.push_back(m.grid.world(ijk[0], ijk[1], ijk[2]));
    }
    return pts;
}

MeanStd mean_std(const std::vector<FrameReport> &rows, double FrameReport::*field) {
    MeanStd r;
    if (rows.empty()) return r;
    for (const auto &row : rows) r.mean += row.*field;
    r.mean /= static_cast<double>(rows.size());
    for (const auto &row : rows) r.std += (row.*field - r.mean) * (row.*field - r.mean);
    r.std = std::sqrt(r.std / static_cast<double>(rows.size()));
    return r;
}

std::string fixed(double v, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
    return buf;
}

} // namespace

double dice(const Mask &a, const Mask &b) {
    require_same_grid(a, b, "dice");
    size_t na = 0, nb = 0, both = 0;
    for (size_t n = 0; n < a.labels.size(); ++n) {
        const bool x = a.labels[n] != 0, y = b.labels[n] != 0;
        na += x;
        nb += y;
        both += x && y;
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

std::vector<size_t> boundary_voxels(const Mask &m) {
    const auto &g = m.grid;
    const int64_t X = g.dim(0), Y = g.dim(1), Z = g.dim(2);
    auto bg = [&](int64_t i, int64_t j, int64_t k) {
        if (i < 0 || j < 0 || k < 0 || i >= X || j >= Y || k >= Z) return true;
        return m.at(i, j, k) == 0;
    };
    std::vector<size_t> out;
    for (int64_t k = 0; k < Z; ++k)
        for (int64_t j = 0; j < Y; ++j)
            for (int64_t i = 0; i < X; ++i) {
                if (!m.at(i, j, k)) continue;
                if (bg(i - 1, j, k) || bg(i + 1, j, k) || bg(i, j - 1, k) || bg(i, j + 1, k) || bg(i, j, k - 1) || bg(i, j, k + 1))
                    out.push_back(g.linear(i, j, k));
            }
    return out;
}

std::vector<double> surface_distances_mm(const Mask &a, const Mask &b) {
    require_same_grid(a, b, "surface distance");
    const auto pa = boundary_points(a), pb = boundary_points(b);
    if (pa.empty() || pb.empty()) throw std::invalid_argument("surface distance: empty mask");
    std::vector<double> d;
    d.reserve(pa.size() + pb.size());
    nearest_distances(pa, pb, d);
    nearest_distances(pb, pa, d);
    return d;
}

double percentile_linear(std::vector<double> values, double p) {
    if (values.empty()) throw std::invalid_argument("percentile: empty sample");
    if (!(p >= 0.0 && p <= 100.0)) throw std::invalid_argument("percentile must lie in [0, 100]");
    std::sort(values.begin(), values.end());
    const double pos = p / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<size_t>(std::floor(pos));
    const size_t hi = std::min(lo + 1, values.size() - 1);
    const double f = pos - static_cast<double>(lo);
    return values[lo] + f * (values[hi] - values[lo]);
}

double hausdorff_mm(const Mask &a, const Mask &b, double percentile) {
    if (!(percentile >= 0.0 && percentile <= 100.0)) throw std::invalid_argument("hausdorff_mm: percentile must lie in [0, 100]");
    auto d = surface_distances_mm(a, b);
    if (percentile == 100.0) return *std::max_element(d.begin(), d.end());
    return percentile_linear(std::move(d), percentile);
}

double mean_surface_distance_mm(const Mask &a, const Mask &b) {
    const auto d = surface_distances_mm(a, b);
    double s = 0.0;
    for (double x : d) s += x;
    return s / static_cast<double>(d.size());
}

std::vector<FrameReport> evaluate_cycle(const std::vector<Mask> &gt_masks, const Mask &ref_mask,
                                        const std::vector<DisplacementField> &dvfs, int ref, double percentile) {
    const int T = static_cast<int>(gt_masks.size());
    if (ref < 0 || ref >= T) throw std::invalid_argument("evaluate_cycle: reference frame out of range");
    if (!(percentile >= 0.0 && percentile <= 100.0)) throw std::invalid_argument("evaluate_cycle: percentile must lie in [0, 100]");
    if (dvfs.size() + 1 != gt_masks.size()) {
        throw std::invalid_argument("evaluate_cycle: expected " + std::to_string(T - 1) + " fields, got " + std::to_string(dvfs.size()));
    }
    std::vector<bool> seen(static_cast<size_t>(T), false);
    std::vector<FrameReport> rows;
    for (const auto &f : dvfs) {
        const int t = f.to_frame;
        if (t < 0 || t >= T || t == ref || seen[static_cast<size_t>(t)]) {
            throw std::invalid_argument("evaluate_cycle: field for frame " + std::to_string(t) + " is out of range or duplicated");
        }
        if (f.from_frame != ref) throw std::invalid_argument("evaluate_cycle: field for frame " + std::to_string(t) + " does not start at the reference");
        seen[static_cast<size_t>(t)] = true;
        const Mask &gt = gt_masks[static_cast<size_t>(t)];
        if (!(gt.grid == ref_mask.grid) || !(f.grid == ref_mask.grid)) {
            throw std::invalid_argument("evaluate_cycle: grid mismatch at frame " + std::to_string(t));
        }
        const Mask pred = warp_mask(ref_mask, f);
        FrameReport r;
        r.frame = t;
        r.dice = dice(pred, gt);
        const auto d = surface_distances_mm(pred, gt);
        r.hd_mm = *std::max_element(d.begin(), d.end());
        r.hd95_mm = percentile_linear(d, percentile);
        double s = 0.0;
        for (double x : d) s += x;
        r.msd_mm = s / static_cast<double>(d.size());
        r.area_mm2 = surface_area(marching_cubes(pred));
        rows.push_back(r);
    }
    std::sort(rows.begin(), rows.end(), [](const FrameReport &a, const FrameReport &b) { return a.frame < b.frame; });
    return rows;
}

CycleSummary summarize(const std::vector<FrameReport> &rows) {
    return {mean_std(rows, &FrameReport::dice), mean_std(rows, &FrameReport::hd_mm), mean_std(rows, &FrameReport::hd95_mm),
            mean_std(rows, &FrameReport::msd_mm), mean_std(rows, &FrameReport::area_mm2)};
}

std::string format_mean_std(const MeanStd &m, int decimals) { return fixed(m.mean, decimals) + " ± " + fixed(m.std, decimals); }

std::string percentile_column(double percentile) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "hd%g_mm", percentile);
    return buf;
}

std::string report_csv(const std::vector<FrameReport> &rows, double percentile) {
    std::ostringstream os;
    os << "frame,dice,hd_mm," << percentile_column(percentile) << ",msd_mm,area_mm2\n";
    for (const auto &r : rows) {
        os << r.frame << ',' << fixed(r.dice, 6) << ',' << fixed(r.hd_mm, 6) << ',' << fixed(r.hd95_mm, 6) << ',' << fixed(r.msd_mm, 6)
           << ',' << fixed(r.area_mm2, 4) << '\n';
    }
    return os.str();
}

std::string summary_csv(const CycleSummary &s, double percentile) {
    std::ostringstream os;
    os << "dice,hd_mm," << percentile_column(percentile) << ",msd_mm,area_mm2\n";
    os << format_mean_std(s.dice) << ',' << format_mean_std(s.hd_mm, 2) << ',' << format_mean_std(s.hd95_mm, 2) << ','
       << format_mean_std(s.msd_mm, 2) << ',' << format_mean_std(s.area_mm2, 1) << '\n';
    return os.str();
}

} // namespace lamotion
