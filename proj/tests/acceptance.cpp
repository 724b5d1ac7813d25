// acceptance - one PASS/FAIL line per acceptance criterion; exits non-zero if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numbers>
#include <random>
#include <sstream>
#include <string>

#include "lamotion/compare.hpp"
#include "lamotion/gradcheck.hpp"
#include "lamotion/io.hpp"
#include "lamotion/mesh.hpp"
#include "lamotion/metrics.hpp"
#include "lamotion/motion_model.hpp"
#include "lamotion/phantom.hpp"
#include "lamotion/registration.hpp"
#include "lamotion/strain.hpp"
#include "test_util.hpp"

using namespace lamotion;
using namespace testutil;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::ostringstream detail;

    void require(bool ok, const std::string &what) {
        if (!ok) {
            pass = false;
            detail << " [failed: " << what << "]";
        }
    }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct TempDir {
    fs::path path;
    TempDir() {
        std::random_device rd;
        path = fs::temp_directory_path() / ("lamotion_acc_" + std::to_string(rd()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

bool same_tree(const fs::path &a, const fs::path &b) {
    size_t n = 0;
    for (const auto &e : fs::recursive_directory_iterator(a)) {
        if (!e.is_regular_file()) continue;
        const fs::path other = b / fs::relative(e.path(), a);
        if (!fs::exists(other) || io::read_file(e.path()) != io::read_file(other)) return false;
        ++n;
    }
    size_t m = 0;
    for (const auto &e : fs::recursive_directory_iterator(b)) m += e.is_regular_file() ? 1 : 0;
    return n == m && n > 0;
}

PhantomConfig phantom_16(uint64_t seed) {
    PhantomConfig c;
    c.dims = {16, 16, 16};
    c.frames = 8;
    c.seed = seed;
    return c;
}

CvaeConfig arch_16() {
    CvaeConfig a;
    a.dims = {16, 16, 16};
    a.cycle_frames = 8;
    return a;
}

// ---- criteria ---------------------------------------------------------------------------------

void gradient_integrity(Outcome &o) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto items = run_gradcheck_suite(0);
    const double secs = seconds_since(t0);
    double worst_prim = 0.0, e2e = 0.0;
    for (const auto &it : items) {
        o.require(it.pass, it.name);
        if (it.tolerance == 1e-5) worst_prim = std::max(worst_prim, it.max_rel_error);
        else e2e = it.max_rel_error;
    }
    o.require(secs < 60.0, "suite under 60 s");
    o.detail << items.size() << " checks, worst primitive rel err " << worst_prim << " (tol 1e-5), end-to-end " << e2e
             << " (tol 1e-4), " << secs << " s";
}

void warping_identities(Outcome &o) {
    std::mt19937_64 rng(11);
    const Grid g({7, 6, 5}, {1.5, 1.0, 2.0}, {0.3, -0.4, 1.0});
    const Volume v = random_volume(g, rng);
    const Volume w0 = warp_volume(v, DisplacementField(g, 0, 1));
    o.require(w0.values == v.values, "zero field warp is exact");

    const Vec3 a{0.7, -1.3, 0.4}, s{0.37, -0.81, 1.23};
    const Volume ramp = volume_from(g, [&](const Vec3 &p) { return dot(a, p) + 2.0; });
    const auto shift = field_from(g, [&](const Vec3 &) { return s; });
    const Volume w = warp_volume(ramp, shift);
    double worst = 0.0;
    size_t n = 0;
    for (int64_t k = 0; k < g.dim(2); ++k)
        for (int64_t j = 0; j < g.dim(1); ++j)
            for (int64_t i = 0; i < g.dim(0); ++i) {
                const Vec3 ci = g.to_index(g.world(i, j, k) + s);
                bool inside = true;
                for (int ax = 0; ax < 3; ++ax) inside = inside && ci[ax] >= 0.0 && ci[ax] <= double(g.dim(ax) - 1);
                if (!inside) continue;
                worst = std::max(worst, std::abs(w.at(i, j, k) - (dot(a, g.world(i, j, k) + s) + 2.0)));
                ++n;
            }
    o.require(n > 0 && worst < 1e-10, "shifted ramp within 1e-10");
    o.detail << "zero warp exact, shifted ramp max err " << worst << " over " << n << " interior voxels (tol 1e-10)";
}

void closed_forms(Outcome &o) {
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> d(-0.5, 0.5);
    const Grid g({6, 7, 5}, {1.2, 0.9, 1.7});
    double worst_smooth = 0.0;
    for (int n = 0; n < 10; ++n) {
        Mat3 A;
        for (auto &x : A.v) x = d(rng);
        const auto f = field_from(g, [&](const Vec3 &p) {
            return Vec3{A(0, 0) * p.x + A(0, 1) * p.y + A(0, 2) * p.z, A(1, 0) * p.x + A(1, 1) * p.y + A(1, 2) * p.z,
                        A(2, 0) * p.x + A(2, 1) * p.y + A(2, 2) * p.z};
        });
        worst_smooth = std::max(worst_smooth, std::abs(smoothness_loss(f) - A.frobenius_sq()));
    }
    o.require(worst_smooth < 1e-10, "smoothness on affine fields");

    std::uniform_real_distribution<double> mu_d(-2.0, 2.0), sg_d(0.1, 3.0);
    double worst_kl = 0.0;
    for (int n = 0; n < 100; ++n) {
        const double mu = mu_d(rng), sg = sg_d(rng);
        const double ref = 0.5 * (mu * mu + sg * sg - 1.0 - std::log(sg * sg));
        const std::vector<double> m{mu}, s{sg};
        worst_kl = std::max(worst_kl, std::abs(kl_gaussian(m, s) - ref));
    }
    o.require(worst_kl < 1e-12, "kl on 100 pairs");
    const std::vector<double> z{0.0, 0.0}, one{1.0, 1.0};
    o.require(kl_gaussian(z, one) == 0.0, "kl(0, 1) == 0");
    o.detail << "smoothness max err " << worst_smooth << " (tol 1e-10), kl max err " << worst_kl << " (tol 1e-12), kl(0,1) = "
             << kl_gaussian(z, one);
}

void registration_accuracy(Outcome &o, const PhantomCase &c) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto dvfs = track_cycle(c.frames, 0, RegConfig{});
    const double secs = seconds_since(t0);
    const Mask shell = shell_region(c);
    const double voxel = c.config.spacing_mm;
    double worst_epe = 0.0, worst_dice = 1.0;
    for (const auto &f : dvfs) {
        const double e = endpoint_error(f, c.gt_dvfs[size_t(f.to_frame - 1)], &shell).mean_mm / voxel;
        const double dc = dice(warp_mask(c.masks[0], f), c.masks[size_t(f.to_frame)]);
        worst_epe = std::max(worst_epe, e);
        worst_dice = std::min(worst_dice, dc);
        o.require(e < 0.5, "frame " + std::to_string(f.to_frame) + " endpoint error");
        o.require(dc >= 0.93, "frame " + std::to_string(f.to_frame) + " dice");
    }
    o.require(secs < 300.0, "runtime under 5 min");
    o.detail << "32^3 T=8: worst shell endpoint error " << worst_epe << " vox (< 0.5), worst dice " << worst_dice << " (>= 0.93), "
             << secs << " s";
}

void report_shape(Outcome &o, const PhantomCase &c) {
    const auto rows = evaluate_cycle(c.masks, c.masks[0], c.gt_dvfs, 0);
    const double hd_limit = 2.0 * c.config.spacing_mm;
    double worst_dice = 1.0, worst_hd = 0.0;
    for (const auto &r : rows) {
        worst_dice = std::min(worst_dice, r.dice);
        worst_hd = std::max(worst_hd, r.hd_mm);
        o.require(r.dice >= 0.95, "frame " + std::to_string(r.frame) + " dice");
        o.require(r.hd_mm <= hd_limit, "frame " + std::to_string(r.frame) + " hd");
    }
    const std::string report = report_csv(rows), summary = summary_csv(summarize(rows));
    const auto lines = std::count(report.begin(), report.end(), '\n');
    o.require(lines == c.config.frames, "header plus T-1 rows");
    o.require(summary.find(" ± ") != std::string::npos, "mean ± std summary row");
    o.detail << rows.size() << " frame rows, worst dice " << worst_dice << " (>= 0.95), worst hd " << worst_hd << " mm (<= " << hd_limit
             << "), summary dice " << format_mean_std(summarize(rows).dice);
}

struct Trained {
    CvaeModel model;
};

void training_signal(Outcome &o, const PhantomCase &c, CvaeModel &model_out) {
    const auto samples = make_training_samples(c.frames, c.sequences, c.gt_dvfs, 0);
    TrainConfig tc;
    tc.epochs = 30;
    const auto r = train_cvae(samples, arch_16(), tc);
    const double first = r.history.front().loss.total, last = r.history.back().loss.total;
    const double decrease = 1.0 - last / first;
    o.require(decrease >= 0.20, "epoch-mean total decreases by 20%");
    bool nonneg = true;
    for (const auto &s : r.steps) nonneg = nonneg && s.kl >= 0.0 && s.smooth >= 0.0;
    o.require(nonneg, "kl and smoothness nonnegative at every step");

    TempDir tmp;
    io::save_cvae(tmp.path / "ck", r.model);
    const auto a = io::load_cvae(tmp.path / "ck"), b = io::load_cvae(tmp.path / "ck");
    const auto pa = predict_ahead(a, c.sequences[2], c.frames[0], 1), pb = predict_ahead(b, c.sequences[2], c.frames[0], 1);
    const auto pc = predict_ahead(a, c.sequences[2], c.frames[0], 1);
    o.require(pa[0].vectors == pb[0].vectors && pa[0].vectors == pc[0].vectors, "bit-identical inference");
    o.detail << "16^3 T=8, 30 epochs: total " << first << " -> " << last << " (decrease " << 100.0 * decrease << "%, >= 20%), "
             << r.steps.size() << " steps with kl, smooth >= 0, inference bit-identical";
    model_out = r.model;
}

void beats_zero_motion(Outcome &o, const CvaeModel &model) {
    const PhantomCase held = generate_case(phantom_16(2));
    const int T = held.config.frames;
    double err = 0.0, mag = 0.0;
    std::ostringstream per;
    for (int t = 1; t < T; ++t) {
        const auto p = predict_ahead(model, held.sequences[size_t(t - 1)], held.frames[0], 1).front();
        const auto &gt = held.gt_dvfs[size_t(t - 1)];
        const double e = endpoint_error(p, gt).mean_mm, m = gt.mean_magnitude();
        err += e;
        mag += m;
        per << (t > 1 ? " " : "") << t << ":" << std::round(100 * e) / 100 << "/" << std::round(100 * m) / 100;
    }
    err /= T - 1;
    mag /= T - 1;
    o.require(err < mag, "mean endpoint error below mean ground-truth magnitude");
    o.detail << "held-out seed, h=1: mean endpoint error " << err << " mm vs zero-motion " << mag << " mm; per frame err/mag " << per.str();
}

void comparison_harness(Outcome &o, const PhantomCase &train) {
    const PhantomCase test = generate_case(phantom_16(2));
    CompareConfig cc;
    cc.arch = arch_16();
    cc.mae.width = cc.mae.height = 16;
    auto set = [](const PhantomCase &c) { return CycleSet{c.frames, c.masks, c.sequences, c.gt_dvfs, 0}; };
    const auto t0 = std::chrono::steady_clock::now();
    const auto rows = compare_methods(set(train), set(test), cc);
    const std::string csv = compare_csv(rows);
    o.require(std::count(csv.begin(), csv.end(), '\n') == 5, "header plus four rows");
    const char *names[] = {"classical", "motion", "mae", "motion+mae"};
    for (size_t i = 0; i < 4 && i < rows.size(); ++i) o.require(rows[i].method == names[i], std::string("row ") + names[i]);
    o.detail << "4 rows in " << seconds_since(t0) << " s; dice";
    for (const auto &r : rows) o.detail << " " << r.method << "=" << format_mean_std(r.summary.dice);
    o.detail << " (ordering reported, not gated)";
    std::printf("%s", csv.c_str());
}

void geometry(Outcome &o) {
    const Grid g = cube_grid(28);
    const Mask s = sphere_mask(g, {13.5, 13.5, 13.5}, 10.0);
    const double exact = 4.0 * std::numbers::pi * 100.0;
    const double ratio = surface_area(marching_cubes(s, {0.5, true})) / exact;
    o.require(std::abs(ratio - 1.0) < 0.05, "sphere area within 5%");

    size_t bad_edges = 0;
    for (const auto &m : {s, sphere_mask(cube_grid(12), {5.5, 5.5, 5.5}, 3.0), generate_case(phantom_16(1)).masks[3]}) {
        bad_edges += non_manifold_edges(marching_cubes(m));
        bad_edges += non_manifold_edges(marching_cubes(m, {0.5, true}));
    }
    o.require(bad_edges == 0, "watertight meshes");

    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> d(-0.2, 0.2);
    const Grid h({8, 8, 8}, {1.0, 1.0, 1.0});
    double worst_affine = 0.0;
    for (int n = 0; n < 10; ++n) {
        Mat3 A;
        for (auto &x : A.v) x = d(rng);
        const auto f = field_from(h, [&](const Vec3 &p) {
            return Vec3{A(0, 0) * p.x + A(0, 1) * p.y + A(0, 2) * p.z, A(1, 0) * p.x + A(1, 1) * p.y + A(1, 2) * p.z,
                        A(2, 0) * p.x + A(2, 1) * p.y + A(2, 2) * p.z};
        });
        for (const auto &E : green_lagrange(f).tensors)
            for (int r = 0; r < 3; ++r)
                for (int c = 0; c < 3; ++c) {
                    double ata = 0.0;
                    for (int m = 0; m < 3; ++m) ata += A(m, r) * A(m, c);
                    worst_affine = std::max(worst_affine, std::abs(E(r, c) - 0.5 * (A(r, c) + A(c, r) + ata)));
                }
    }
    o.require(worst_affine < 1e-10, "green-lagrange on affine fields");
    double worst_rigid = 0.0;
    for (double th : {0.005, 0.01, 0.02}) {
        const Vec3 ctr{3.5, 3.5, 3.5};
        const auto rot = field_from(h, [&](const Vec3 &p) {
            const Vec3 q = p - ctr;
            return Vec3{std::cos(th) * q.x - std::sin(th) * q.y - q.x, std::sin(th) * q.x + std::cos(th) * q.y - q.y, 0.0};
        });
        for (const auto &E : green_lagrange(rot).tensors) worst_rigid = std::max(worst_rigid, std::sqrt(E.frobenius_sq()));
    }
    o.require(worst_rigid < 1e-4, "green-lagrange on small rotations");
    o.detail << "sphere area ratio " << ratio << " (within 5%), " << bad_edges << " non-manifold edges, affine strain err " << worst_affine
             << " (tol 1e-10), rigid strain " << worst_rigid << " (< 1e-4)";
}

void metric_oracles(Outcome &o) {
    std::mt19937_64 rng(14);
    std::uniform_int_distribution<int> side(3, 12);
    std::uniform_real_distribution<double> fill(0.2, 0.8), sp(0.5, 2.0);
    size_t dice_mismatch = 0;
    double worst_hd = 0.0;
    for (int n = 0; n < 50; ++n) {
        const Grid g({side(rng), side(rng), side(rng)}, {sp(rng), sp(rng), sp(rng)});
        const Mask a = random_mask(g, rng, fill(rng)), b = random_mask(g, rng, fill(rng));
        if (dice(a, b) != brute_dice(a, b)) ++dice_mismatch;
        if (!std::any_of(a.labels.begin(), a.labels.end(), [](uint8_t x) { return x; }) ||
            !std::any_of(b.labels.begin(), b.labels.end(), [](uint8_t x) { return x; }))
            continue;
        for (double p : {95.0, 100.0}) worst_hd = std::max(worst_hd, std::abs(hausdorff_mm(a, b, p) - brute_hausdorff(a, b, p)));
    }
    o.require(dice_mismatch == 0, "dice exact");
    o.require(worst_hd < 1e-9, "hausdorff within 1e-9 mm");
    o.detail << "50 random pairs: " << dice_mismatch << " dice mismatches, hd max err " << worst_hd << " mm (tol 1e-9)";
}

void determinism_io(Outcome &o) {
    TempDir tmp;
    PhantomConfig pc = phantom_16(5);
    pc.dims = {8, 8, 8};
    pc.frames = 4;
    pc.wall_thickness_vox = 0.5;
    pc.slice_steps = 2;
    io::write_case(tmp.path / "case_a", generate_case(pc));
    io::write_case(tmp.path / "case_b", generate_case(pc));
    o.require(same_tree(tmp.path / "case_a", tmp.path / "case_b"), "case directories identical");

    const auto d = io::load_case(tmp.path / "case_a");
    const auto samples = make_training_samples(d.frames, d.sequences, d.gt_dvfs, 0);
    CvaeConfig a;
    a.dims = pc.dims;
    a.n_steps = 2;
    a.latent_dim = 4;
    a.channels = 2;
    a.features = 4;
    a.head_hidden = 4;
    a.cycle_frames = 4;
    TrainConfig tc;
    tc.epochs = 3;
    io::save_cvae(tmp.path / "ck_a", train_cvae(samples, a, tc).model);
    io::save_cvae(tmp.path / "ck_b", train_cvae(samples, a, tc).model);
    o.require(same_tree(tmp.path / "ck_a", tmp.path / "ck_b"), "checkpoints identical");

    const auto rows = evaluate_cycle(d.masks, d.masks[0], d.gt_dvfs, 0);
    o.require(report_csv(rows) == report_csv(evaluate_cycle(d.masks, d.masks[0], d.gt_dvfs, 0)), "reports identical");

    std::mt19937_64 rng(15);
    bool exact = true;
    const Grid g({5, 4, 3}, {1.1, 0.9, 1.3});
    for (auto dt : {io::DType::F32, io::DType::F64}) {
        const Volume v = random_volume(g, rng, -2, 2);
        io::write_volume(tmp.path / "v.raw", v, dt);
        const std::string first = io::read_file(tmp.path / "v.raw");
        io::write_volume(tmp.path / "v.raw", io::read_volume(tmp.path / "v.raw"), dt);
        exact = exact && first == io::read_file(tmp.path / "v.raw");
        DisplacementField f = random_field(g, rng, 3.0);
        io::write_dvf(tmp.path / "f.raw", f, dt);
        const std::string ff = io::read_file(tmp.path / "f.raw");
        io::write_dvf(tmp.path / "f.raw", io::read_dvf(tmp.path / "f.raw"), dt);
        exact = exact && ff == io::read_file(tmp.path / "f.raw");
    }
    const Mask m = random_mask(g, rng, 0.5);
    io::write_mask(tmp.path / "m.raw", m);
    exact = exact && io::read_mask(tmp.path / "m.raw").labels == m.labels;
    o.require(exact, "raw round trips bit-exact");
    o.detail << "case dirs, checkpoints and reports byte-identical across runs; f32/f64/u8 round trips bit-exact";
}

} // namespace

int main() {
    int failed = 0;
    auto run = [&](int id, const char *title, const std::function<void(Outcome &)> &fn) {
        Outcome o;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            fn(o);
        } catch (const std::exception &e) {
            o.pass = false;
            o.detail << " [exception: " << e.what() << "]";
        }
        std::printf("%s criterion %2d %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", id, title, o.detail.str().c_str(), seconds_since(t0));
        std::fflush(stdout);
        failed += o.pass ? 0 : 1;
    };

    PhantomConfig pc32;
    pc32.frames = 8;
    const PhantomCase c32 = generate_case(pc32);
    const PhantomCase c16 = generate_case(phantom_16(1));
    CvaeModel trained;

    run(1, "gradient integrity", gradient_integrity);
    run(2, "warping identities", warping_identities);
    run(3, "smoothness and KL closed forms", closed_forms);
    run(4, "classical registration accuracy", [&](Outcome &o) { registration_accuracy(o, c32); });
    run(5, "cycle report", [&](Outcome &o) { report_shape(o, c32); });
    run(6, "CVAE training signal", [&](Outcome &o) { training_signal(o, c16, trained); });
    run(7, "prediction beats zero motion", [&](Outcome &o) {
        if (!trained.trained) throw std::runtime_error("criterion 6 produced no model");
        beats_zero_motion(o, trained);
    });
    run(8, "encoder comparison harness", [&](Outcome &o) { comparison_harness(o, c16); });
    run(9, "geometry", geometry);
    run(10, "metric oracles", metric_oracles);
    run(11, "determinism and I/O", determinism_io);

    std::printf("%d of 11 criteria failed\n", failed);
    return failed == 0 ? 0 : 1;
}
