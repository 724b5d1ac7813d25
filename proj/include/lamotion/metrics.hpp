// metrics.hpp - Overlap and surface-distance metrics and per-frame cycle reports.
#pragma once

#include <string>
#include <vector>

#include "lamotion/field.hpp"

namespace lamotion {

/// 2|A n B| / (|A| + |B|); 1 when both masks are empty.
double dice(const Mask &a, const Mask &b);

/// Foreground voxels with at least one background 6-neighbour; the grid edge counts as background.
std::vector<size_t> boundary_voxels(const Mask &m);

/// Symmetric surface distances in mm: for every boundary voxel of each mask, the distance to the
/// nearest boundary voxel of the other. Both directions are pooled.
std::vector<double> surface_distances_mm(const Mask &a, const Mask &b);

/// Percentile (linear interpolation between order statistics) of the pooled surface distances.
/// percentile = 100 gives the classical Hausdorff distance. Throws on empty masks.
double hausdorff_mm(const Mask &a, const Mask &b, double percentile = 100.0);

/// Mean of the pooled surface distances.
double mean_surface_distance_mm(const Mask &a, const Mask &b);

/// Linear-interpolation percentile of an unsorted sample, p in [0, 100].
double percentile_linear(std::vector<double> values, double p);

struct FrameReport {
    int frame = 0;
    double dice = 0.0;
    double hd_mm = 0.0;
    /// Surface-distance percentile requested from evaluate_cycle (95 by default).
    double hd95_mm = 0.0;
    double msd_mm = 0.0;
    double area_mm2 = 0.0;
};

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;
};

struct CycleSummary {
    MeanStd dice, hd_mm, hd95_mm, msd_mm, area_mm2;
};

/// Scores warp_mask(ref_mask, dvf) against gt_masks[dvf.to_frame] for every field. Requires one
/// field per non-reference frame, each stamped from the reference. Rows are ordered by frame.
std::vector<FrameReport> evaluate_cycle(const std::vector<Mask> &gt_masks, const Mask &ref_mask,
                                        const std::vector<DisplacementField> &dvfs, int ref = 0, double percentile = 95.0);

/// Population mean and standard deviation of each column.
CycleSummary summarize(const std::vector<FrameReport> &rows);

/// "0.880 ± 0.027" style.
std::string format_mean_std(const MeanStd &m, int decimals = 3);

/// "hd95_mm" for 95.
std::string percentile_column(double percentile);
/// CSV with header frame,dice,hd_mm,hd95_mm,msd_mm,area_mm2 (the percentile column is renamed
/// for other percentiles).
std::string report_csv(const std::vector<FrameReport> &rows, double percentile = 95.0);

/// Two-line CSV with the same metric columns, each cell "mean ± std".
std::string summary_csv(const CycleSummary &s, double percentile = 95.0);

} // namespace lamotion
