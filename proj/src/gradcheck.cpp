// gradcheck.cpp - The gradient-check suite.

#include "lamotion/gradcheck.hpp"

#include <functional>
#include <random>

#include "lamotion/autodiff.hpp"
#include "lamotion/motion_model.hpp"
#include "lamotion/nn.hpp"
#include "lamotion/phantom.hpp"

namespace lamotion {

using namespace ad;

namespace {

Tensor randn(std::vector<int64_t> shape, std::mt19937_64 &rng, double s = 1.0) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> d(0.0, s);
    for (auto &v : t.data) v = d(rng);
    return t;
}

struct Suite {
    std::mt19937_64 rng;
    std::vector<GradCheckItem> items;

    // Scalarises y with fixed random weights so every output entry gets its own gradient.
    Var probe(Tape &t, Var y) {
        std::mt19937_64 r(99);
        return sum(mul(y, t.constant(randn(y.value().shape, r))));
    }

    void run(const std::string &name, const ScalarGraph &g, const ParamSet &p, double tol = 1e-5, size_t max_coords = 0) {
        GradCheckOptions opt;
        opt.tolerance = tol;
        opt.max_coords = max_coords;
        const auto r = gradient_check(g, p, opt);
        items.push_back({name, r.max_rel_error(), tol, r.pass()});
    }

    void unary(const std::string &name, const std::function<Var(Var)> &fn, std::vector<int64_t> shape) {
        ParamSet p{{"a", randn(std::move(shape), rng)}};
        run(name, [&](Tape &t, const ParamVars &v) { return probe(t, fn(v.at("a"))); }, p);
    }

    void binary(const std::string &name, const std::function<Var(Var, Var)> &fn) {
        ParamSet p{{"a", randn({3, 4}, rng)}, {"b", randn({3, 4}, rng)}};
        run(name, [&](Tape &t, const ParamVars &v) { return probe(t, fn(v.at("a"), v.at("b"))); }, p);
    }
};

} // namespace

std::vector<GradCheckItem> run_gradcheck_suite(uint64_t seed) {
    Suite s{std::mt19937_64(seed), {}};
    s.binary("add", [](Var a, Var b) { return add(a, b); });
    s.binary("sub", [](Var a, Var b) { return sub(a, b); });
    s.binary("mul", [](Var a, Var b) { return mul(a, b); });
    s.binary("concat", [](Var a, Var b) { return concat({a, b}, 1); });
    s.binary("mse", [](Var a, Var b) { return mse(a, b); });
    s.unary("scale", [](Var a) { return scale(a, -1.7); }, {3, 4});
    s.unary("add_scalar", [](Var a) { return add_scalar(a, 0.3); }, {3, 4});
    s.unary("sum", [](Var a) { return sum(a); }, {3, 4});
    s.unary("mean", [](Var a) { return mean(a); }, {3, 4});
    s.unary("relu", [](Var a) { return relu(a); }, {3, 4});
    s.unary("softplus", [](Var a) { return softplus(a); }, {3, 4});
    s.unary("reshape", [](Var a) { return reshape(a, {2, 6}); }, {3, 4});
    s.unary("transpose2d", [](Var a) { return transpose2d(a); }, {3, 4});
    s.unary("avg_pool3d", [](Var a) { return avg_pool3d(a); }, {1, 2, 5, 4, 6});
    s.unary("avg_pool2d", [](Var a) { return avg_pool2d(a); }, {2, 1, 5, 4});
    s.unary("upsample_nearest3d", [](Var a) { return upsample_nearest3d(a, 5, 6, 7); }, {1, 2, 2, 3, 3});
    {
        ParamSet p{{"a", randn({3, 4}, s.rng)}, {"s", randn({1}, s.rng)}};
        s.run("scale_by", [&](Tape &t, const ParamVars &v) { return s.probe(t, scale_by(v.at("a"), v.at("s"))); }, p);
    }
    {
        ParamSet p{{"x", randn({2, 5}, s.rng)}, {"w", randn({4, 5}, s.rng)}, {"b", randn({4}, s.rng)}};
        s.run("dense", [&](Tape &t, const ParamVars &v) { return s.probe(t, dense(v.at("x"), v.at("w"), v.at("b"))); }, p);
    }
    for (int stride : {1, 2}) {
        ParamSet p3{{"x", randn({2, 2, 5, 4, 6}, s.rng)}, {"w", randn({3, 2, 3, 3, 3}, s.rng)}, {"b", randn({3}, s.rng)}};
        s.run("conv3d stride " + std::to_string(stride),
              [&](Tape &t, const ParamVars &v) { return s.probe(t, conv3d(v.at("x"), v.at("w"), v.at("b"), stride)); }, p3);
        ParamSet p2{{"x", randn({2, 3, 7, 6}, s.rng)}, {"w", randn({2, 3, 3, 3}, s.rng)}, {"b", randn({2}, s.rng)}};
        s.run("conv2d stride " + std::to_string(stride),
              [&](Tape &t, const ParamVars &v) { return s.probe(t, conv2d(v.at("x"), v.at("w"), v.at("b"), stride)); }, p2);
    }
    {
        ParamSet p{{"mu", randn({6}, s.rng)}, {"s", randn({6}, s.rng)}};
        s.run("kl_standard_normal",
              [](Tape &, const ParamVars &v) { return kl_standard_normal(v.at("mu"), add_scalar(softplus(v.at("s")), 1e-6)); }, p);
        ParamSet q{{"pred", randn({5, 3}, s.rng)}, {"target", randn({5, 3}, s.rng)}};
        const std::vector<uint8_t> rows{1, 0, 1, 1, 0};
        s.run("masked_row_mse", [&](Tape &, const ParamVars &v) { return masked_row_mse(v.at("pred"), v.at("target"), rows); }, q);
    }
    {
        const Grid g({6, 5, 4}, {1.5, 1.0, 2.0});
        Volume vol(g);
        std::uniform_real_distribution<double> u01(0.0, 1.0);
        for (auto &x : vol.values) x = u01(s.rng);
        ParamSet p{{"u", randn({1, 3, 4, 5, 6}, s.rng, 0.7)}};
        s.run("warp", [&](Tape &t, const ParamVars &v) { return s.probe(t, warp(v.at("u"), vol)); }, p);
        s.run("smoothness", [&](Tape &, const ParamVars &v) { return smoothness(v.at("u"), g); }, p);
    }
    {
        PhantomConfig pc;
        pc.dims = {8, 8, 8};
        pc.frames = 4;
        pc.wall_thickness_vox = 0.5;
        pc.seed = seed + 3;
        const PhantomCase c = generate_case(pc);
        CvaeConfig a;
        a.dims = pc.dims;
        a.spacing = {pc.spacing_mm, pc.spacing_mm, pc.spacing_mm};
        a.latent_dim = 4;
        a.channels = 4;
        a.features = 8;
        a.head_hidden = 8;
        a.cycle_frames = pc.frames;
        CvaeModel m = init_cvae(a, EncoderMode::Motion);
        // A non-zero decoder output lets gradients reach every layer.
        m.params["dec.gain"].data[0] = 0.7;
        std::uniform_real_distribution<double> d(-0.05, 0.05);
        for (auto &[name, t] : m.params)
            if (name.ends_with(".b"))
                for (auto &x : t.data) x += d(s.rng);
        const auto samples = make_training_samples(c.frames, c.sequences, c.gt_dvfs, 0);
        const std::vector<TrainSample> batch{samples[1], samples[2]};
        std::normal_distribution<double> n01(0.0, 1.0);
        std::vector<std::vector<double>> eps(2, std::vector<double>(4));
        for (auto &e : eps)
            for (auto &x : e) x = n01(s.rng);
        TrainConfig tc;
        tc.beta_kl = 0.5;
        tc.lambda_smooth = 0.1;
        s.run("cvae_loss end to end",
              [&](Tape &t, const ParamVars &v) { return cvae_loss_graph(t, v, m, batch, tc, tc.beta_kl, eps).total; }, m.params, 1e-4, 8);
    }
    return s.items;
}

} // namespace lamotion
