#include <cmath>
#include <random>

#include "doctest.h"
#include "lamotion/mae.hpp"
#include "lamotion/motion_model.hpp"
#include "lamotion/phantom.hpp"
#include "test_util.hpp"

using namespace lamotion;
using namespace testutil;

namespace {

SliceSequence ramp_sequence(int64_t w, int64_t h, int steps) {
    SliceSequence s;
    s.width = w;
    s.height = h;
    for (int t = 0; t < steps; ++t) {
        std::vector<double> sl(size_t(w * h));
        for (size_t n = 0; n < sl.size(); ++n) sl[n] = double(n) + 1000.0 * t;
        s.slices.push_back(sl);
    }
    return s;
}

PhantomCase phantom16() {
    PhantomConfig c;
    c.dims = {16, 16, 16};
    c.frames = 8;
    c.seed = 4;
    return generate_case(c);
}

} // namespace

TEST_CASE("patchify layout") {
    const auto s = ramp_sequence(16, 8, 2);
    const auto t = patchify(s, 4);
    REQUIRE(t.shape == std::vector<int64_t>{16, 16});
    // Token 5 = step 0, tile (x=1, y=1); its pixel (x=2, y=3) is slice pixel (6, 7).
    CHECK(t.data[5 * 16 + 3 * 4 + 2] == 7 * 16 + 6);
    // Token 9 = step 1, tile (x=1, y=0).
    CHECK(t.data[9 * 16] == 1000.0 + 4);
    CHECK_THROWS_AS(patchify(ramp_sequence(10, 8, 1), 4), std::invalid_argument);
}

TEST_CASE("token masks") {
    std::mt19937_64 rng(1);
    const auto m = draw_token_mask(32, 0.75, rng);
    CHECK(std::count(m.begin(), m.end(), 1) == 24);
    const auto none = draw_token_mask(32, 0.0, rng);
    CHECK(std::count(none.begin(), none.end(), 1) == 0);
    CHECK_THROWS_AS(draw_token_mask(32, 1.0, rng), std::invalid_argument);
}

TEST_CASE("configuration errors") {
    MaeConfig c;
    c.mask_ratio = 1.0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c.mask_ratio = 0.75;
    c.width = 20;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("zero mask ratio is an empty loss and a skipped pretraining") {
    const auto p = phantom16();
    MaeConfig c;
    c.width = c.height = 16;
    c.mask_ratio = 0.0;
    const auto r = pretrain_mae(p.sequences, c, {});
    CHECK(r.epoch_loss.empty());
    REQUIRE(r.advisories.size() == 1);
    CHECK(r.advisories[0].find("mask_ratio") != std::string::npos);
    CHECK(mae_loss(r.model, p.sequences[0], std::vector<uint8_t>(size_t(c.tokens()), 0)) == 0.0);
}

TEST_CASE("constant-zero slices give zero loss with the zero-initialised head") {
    SliceSequence z;
    z.width = z.height = 16;
    z.slices.assign(8, std::vector<double>(256, 0.0));
    MaeConfig c;
    c.width = c.height = 16;
    const auto r = pretrain_mae({z}, c, {1, 1e-3, 0});
    std::mt19937_64 rng(2);
    CHECK(mae_loss(r.model, z, draw_token_mask(size_t(c.tokens()), 0.75, rng)) == 0.0);
    CHECK(r.epoch_loss[0] == 0.0);
}

TEST_CASE("pretraining on phantom slices") {
    const auto p = phantom16();
    MaeConfig c;
    c.width = c.height = 16;
    const auto r = pretrain_mae(p.sequences, c, {50, 2e-3, 0});
    REQUIRE(r.epoch_loss.size() == 50);
    MESSAGE("masked loss epoch 1 " << r.epoch_loss.front() << " -> epoch 50 " << r.epoch_loss.back());
    CHECK(r.epoch_loss.back() <= 0.5 * r.epoch_loss.front());
    CHECK(r.model.trained);
    const auto again = pretrain_mae(p.sequences, c, {50, 2e-3, 0});
    CHECK(again.epoch_loss == r.epoch_loss);

    const auto f = mae_features(r.model, p.sequences[0]);
    CHECK(f.size() == size_t(c.embed));
    CHECK(f == mae_features(r.model, p.sequences[0]));
}

TEST_CASE("conditioning features per encoder mode") {
    const auto p = phantom16();
    MaeConfig mc;
    mc.width = mc.height = 16;
    const auto mae = pretrain_mae(p.sequences, mc, {3, 2e-3, 0}).model;
    CvaeConfig a;
    a.dims = {16, 16, 16};
    const auto both = init_cvae(a, EncoderMode::MotionMAE, &mae);
    const auto &seq = p.sequences[2];
    const auto fm = condition_features(both, seq, p.frames[0], EncoderMode::Motion);
    const auto fa = condition_features(both, seq, p.frames[0], EncoderMode::MAE);
    const auto fb = condition_features(both, seq, p.frames[0], EncoderMode::MotionMAE);
    CHECK(fb.size() == fm.size() + fa.size());
    CHECK(fa == condition_features(both, seq, p.frames[3], EncoderMode::MAE));
    CHECK(fm != condition_features(both, seq, p.frames[3], EncoderMode::Motion));
    CHECK(fb == condition_features(both, seq, p.frames[0], EncoderMode::MotionMAE));

    const auto motion_only = init_cvae(a, EncoderMode::Motion);
    CHECK_THROWS_AS(condition_features(motion_only, seq, p.frames[0], EncoderMode::MAE), std::invalid_argument);
    const auto mae_only = init_cvae(a, EncoderMode::MAE, &mae);
    CHECK_THROWS_AS(condition_features(mae_only, seq, p.frames[0], EncoderMode::Motion), std::invalid_argument);
    MaeModel raw = init_mae(mc);
    CHECK_THROWS_AS(init_cvae(a, EncoderMode::MAE, &raw), std::invalid_argument);
}
