// compare.cpp - Encoder-mode comparison harness.

#include "lamotion/compare.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "lamotion/phantom.hpp"

namespace lamotion {

namespace {

CompareRow score(std::string method, const CycleSet &test, std::vector<DisplacementField> dvfs) {
    CompareRow row;
    row.method = std::move(method);
    row.frames = evaluate_cycle(test.masks, test.masks[size_t(test.ref)], dvfs, test.ref);
    row.summary = summarize(row.frames);
    if (!test.gt_dvfs.empty()) {
        for (const auto &f : dvfs) {
            for (const auto &g : test.gt_dvfs)
                if (g.to_frame == f.to_frame) row.epe_mm.push_back(endpoint_error(f, g).mean_mm);
        }
    }
    return row;
}

MeanStd mean_std(const std::vector<double> &v) {
    MeanStd m;
    for (double x : v) m.mean += x;
    m.mean /= double(v.size());
    for (double x : v) m.std += (x - m.mean) * (x - m.mean);
    m.std = std::sqrt(m.std / double(v.size()));
    return m;
}

} // namespace

std::vector<CompareRow> compare_methods(const CycleSet &train, const CycleSet &test, const CompareConfig &cfg) {
    const int T = int(test.frames.size());
    if (T < 2 || test.masks.size() != size_t(T) || test.sequences.size() != size_t(T)) {
        throw std::invalid_argument("compare_methods: test cycle needs matching frames, masks and sequences");
    }
    std::vector<CompareRow> rows;
    rows.push_back(score("classical", test, track_cycle(test.frames, test.ref, cfg.registration)));

    const auto train_dvfs = train.gt_dvfs.empty() ? track_cycle(train.frames, train.ref, cfg.registration) : train.gt_dvfs;
    const auto samples = make_training_samples(train.frames, train.sequences, train_dvfs, train.ref);
    const MaeModel mae = pretrain_mae(train.sequences, cfg.mae, cfg.mae_train).model;

    for (EncoderMode mode : {EncoderMode::Motion, EncoderMode::MAE, EncoderMode::MotionMAE}) {
        TrainConfig tc = cfg.train;
        tc.encoder_mode = mode;
        const CvaeModel model = train_cvae(samples, cfg.arch, tc, mode == EncoderMode::Motion ? nullptr : &mae).model;
        std::vector<DisplacementField> dvfs;
        for (int t = 0; t < T; ++t) {
            if (t == test.ref) continue;
            const int prev = (t - 1 + T) % T;
            dvfs.push_back(predict_ahead(model, test.sequences[size_t(prev)], test.frames[size_t(test.ref)], 1).front());
        }
        rows.push_back(score(to_string(mode), test, std::move(dvfs)));
    }
    return rows;
}

std::string compare_csv(const std::vector<CompareRow> &rows) {
    std::ostringstream os;
    os << "method,dice,hd_mm,hd95_mm,msd_mm,area_mm2,epe_mm\n";
    for (const auto &r : rows) {
        const auto &s = r.summary;
        os << r.method << "," << format_mean_std(s.dice) << "," << format_mean_std(s.hd_mm) << "," << format_mean_std(s.hd95_mm) << ","
           << format_mean_std(s.msd_mm) << "," << format_mean_std(s.area_mm2) << ","
           << (r.epe_mm.empty() ? std::string("n/a") : format_mean_std(mean_std(r.epe_mm))) << "\n";
    }
    return os.str();
}

} // namespace lamotion
