// compare.hpp - Side-by-side evaluation of the encoder modes and classical registration.
#pragma once

#include <string>
#include <vector>

#include "lamotion/field.hpp"
#include "lamotion/mae.hpp"
#include "lamotion/metrics.hpp"
#include "lamotion/motion_model.hpp"
#include "lamotion/registration.hpp"
#include "lamotion/slices.hpp"

namespace lamotion {

/// One imaged cycle. gt_dvfs may be empty when the true motion is unknown.
struct CycleSet {
    std::vector<Volume> frames;
    std::vector<Mask> masks;
    std::vector<SliceSequence> sequences;
    std::vector<DisplacementField> gt_dvfs;
    int ref = 0;
};

struct CompareConfig {
    CvaeConfig arch;
    TrainConfig train;
    MaeConfig mae;
    MaeTrainConfig mae_train;
    RegConfig registration;
};

struct CompareRow {
    std::string method;
    std::vector<FrameReport> frames;
    CycleSummary summary;
    /// Per-frame mean endpoint error against the test cycle's ground truth (empty without one).
    std::vector<double> epe_mm;
};

/// Trains every encoder mode on `train` (its ground-truth fields, or registered ones when absent)
/// and scores one-step-ahead predictions on `test`; the classical row registers `test` directly.
/// Rows: classical, motion, mae, motion+mae.
std::vector<CompareRow> compare_methods(const CycleSet &train, const CycleSet &test, const CompareConfig &cfg);

/// Header method,dice,hd_mm,hd95_mm,msd_mm,area_mm2,epe_mm; cells are "mean ± std".
std::string compare_csv(const std::vector<CompareRow> &rows);

} // namespace lamotion
