// lamotion - command-line front end: generate, register, train, predict, evaluate, mesh.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "lamotion/compare.hpp"
#include "lamotion/gradcheck.hpp"
#include "lamotion/io.hpp"
#include "lamotion/mesh.hpp"
#include "lamotion/metrics.hpp"
#include "lamotion/phantom.hpp"
#include "lamotion/registration.hpp"

using namespace lamotion;
namespace fs = std::filesystem;

namespace {

Index3 to_dims(const std::vector<int64_t> &v) {
    if (v.size() == 1) return {v[0], v[0], v[0]};
    return {v[0], v[1], v[2]};
}

struct RegOptions {
    double lambda = 0.01;
    std::vector<int64_t> cutoff{6};
    int levels = 3;
    int iters = 150;
    double lr = 0.05;
    std::string sim = "mse";
    int window = 9;

    void add_to(CLI::App *app) {
        app->add_option("--lambda", lambda, "Smoothness weight")->capture_default_str();
        app->add_option("--cutoff", cutoff, "Band-limit cutoff (one value or three)")->expected(1, 3)->capture_default_str();
        app->add_option("--levels", levels, "Pyramid levels")->capture_default_str();
        app->add_option("--iters", iters, "Iterations per level")->capture_default_str();
        app->add_option("--lr", lr, "Step size")->capture_default_str();
        app->add_option("--sim", sim, "Similarity")->check(CLI::IsMember({"mse", "lncc"}))->capture_default_str();
        app->add_option("--window", window, "LNCC window edge in voxels")->capture_default_str();
    }

    RegConfig config() const {
        RegConfig c;
        c.lambda_smooth = lambda;
        c.cutoff = to_dims(cutoff);
        c.levels = levels;
        c.iters_per_level = iters;
        c.lr = lr;
        c.similarity.kind = sim == "lncc" ? SimilarityKind::LNCC : SimilarityKind::MSE;
        c.similarity.window = window;
        return c;
    }
};

fs::path summary_path(const fs::path &report) {
    fs::path p = report;
    p.replace_filename(report.stem().string() + "_summary.csv");
    return p;
}

CycleSet cycle_of(const io::CaseData &d) {
    return {d.frames, d.masks, d.sequences, d.gt_dvfs, d.manifest.reference_frame};
}

MaeConfig mae_config_for(const io::CaseData &d, int patch, int embed, double ratio, uint64_t seed) {
    MaeConfig c;
    c.width = d.manifest.dims[0];
    c.height = d.manifest.dims[1];
    c.n_steps = d.manifest.n_steps;
    c.patch = patch;
    c.embed = embed;
    c.mask_ratio = ratio;
    c.seed = seed;
    return c;
}

CvaeConfig arch_for(const io::CaseData &d, int latent, int channels, int features, uint64_t seed) {
    CvaeConfig a;
    a.dims = d.manifest.dims;
    a.spacing = d.manifest.spacing_mm;
    a.n_steps = d.manifest.n_steps;
    a.latent_dim = latent;
    a.channels = channels;
    a.features = features;
    a.cycle_frames = d.manifest.frames;
    a.ref_frame = d.manifest.reference_frame;
    a.seed = seed;
    return a;
}

std::string one_line(std::string s) {
    std::replace(s.begin(), s.end(), '\n', ' ');
    return s;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Cardiac motion estimation, prediction and evaluation on voxel volumes", "lamotion"};
    app.require_subcommand(1);
    std::function<void()> action;

    // phantom gen
    auto *phantom = app.add_subcommand("phantom", "Synthetic cases")->require_subcommand(1);
    auto *gen = phantom->add_subcommand("gen", "Write a synthetic beating-shell case directory");
    PhantomConfig pc;
    std::vector<int64_t> pdims{32};
    fs::path gen_out;
    std::string subject = "phantom";
    gen->add_option("--out", gen_out, "Case directory")->required();
    gen->add_option("--dims", pdims, "Grid size (one value or three)")->expected(1, 3)->capture_default_str();
    gen->add_option("--frames", pc.frames, "Frames per cycle")->capture_default_str();
    gen->add_option("--seed", pc.seed, "Random seed")->capture_default_str();
    gen->add_option("--spacing", pc.spacing_mm, "Isotropic spacing in mm")->capture_default_str();
    gen->add_option("--wall", pc.wall_thickness_vox, "Wall thickness in voxels")->capture_default_str();
    gen->add_option("--amplitude", pc.amplitude, "Peak radial contraction factor")->capture_default_str();
    gen->add_option("--twist", pc.twist_rad, "Peak twist in radians")->capture_default_str();
    gen->add_option("--noise", pc.noise_std, "Noise level relative to the intensity range")->capture_default_str();
    gen->add_option("--texture", pc.texture_scale, "Texture standard deviation")->capture_default_str();
    gen->add_option("--steps", pc.slice_steps, "Slices per input sequence")->capture_default_str();
    gen->add_option("--subject", subject, "Subject id recorded in the manifest")->capture_default_str();
    gen->callback([&] {
        action = [&] {
            pc.dims = to_dims(pdims);
            io::write_case(gen_out, generate_case(pc), subject);
            std::cout << "wrote " << gen_out.string() << "\n";
        };
    });

    // register pair / cycle
    auto *reg = app.add_subcommand("register", "Classical registration")->require_subcommand(1);
    RegOptions reg_opts;
    auto *pair = reg->add_subcommand("pair", "Register one moving volume onto a fixed one");
    fs::path fixed_path, moving_path, pair_out;
    pair->add_option("--fixed", fixed_path, "Fixed volume (.raw)")->required();
    pair->add_option("--moving", moving_path, "Moving volume (.raw)")->required();
    pair->add_option("--out", pair_out, "Output field (.raw)")->required();
    reg_opts.add_to(pair);
    pair->callback([&] {
        action = [&] {
            const Volume fixed = io::read_volume(fixed_path), moving = io::read_volume(moving_path);
            RegResult r = register_pair(fixed, moving, reg_opts.config());
            r.dvf.from_frame = moving.frame_index.value_or(0);
            r.dvf.to_frame = fixed.frame_index.value_or(1);
            io::write_dvf(pair_out, r.dvf);
            std::printf("loss %.6g -> %.6g\n", r.initial_loss.total, r.final_loss.total);
        };
    });
    auto *cyc = reg->add_subcommand("cycle", "Register every frame of a case against the reference");
    fs::path cyc_case, cyc_out;
    std::optional<int> cyc_ref;
    cyc->add_option("--case", cyc_case, "Case directory")->required();
    cyc->add_option("--out", cyc_out, "Output field directory")->required();
    cyc->add_option("--ref", cyc_ref, "Reference frame (default: from the manifest)");
    reg_opts.add_to(cyc);
    cyc->callback([&] {
        action = [&] {
            const auto d = io::load_case(cyc_case);
            const int ref = cyc_ref.value_or(d.manifest.reference_frame);
            if (ref < 0 || ref >= d.manifest.frames) throw std::runtime_error("reference frame " + std::to_string(ref) + " out of range");
            io::write_dvf_dir(cyc_out, track_cycle(d.frames, ref, reg_opts.config()));
            std::cout << "wrote " << d.manifest.frames - 1 << " fields to " << cyc_out.string() << "\n";
        };
    });

    // mae pretrain
    auto *mae = app.add_subcommand("mae", "Masked autoencoder")->require_subcommand(1);
    auto *pre = mae->add_subcommand("pretrain", "Pretrain on a case's slice sequences");
    fs::path mae_case, mae_out;
    double mask_ratio = 0.75;
    int mae_steps = 8, mae_patch = 8, mae_embed = 32;
    MaeTrainConfig mae_train;
    pre->add_option("--case", mae_case, "Case directory")->required();
    pre->add_option("--out", mae_out, "Checkpoint directory")->required();
    pre->add_option("--mask-ratio", mask_ratio, "Fraction of tokens masked")->capture_default_str();
    pre->add_option("--steps", mae_steps, "Time steps per sequence (must match the case)")->capture_default_str();
    pre->add_option("--patch", mae_patch, "Patch edge in pixels")->capture_default_str();
    pre->add_option("--embed", mae_embed, "Token width")->capture_default_str();
    pre->add_option("--epochs", mae_train.epochs, "Epochs")->capture_default_str();
    pre->add_option("--lr", mae_train.lr, "Learning rate")->capture_default_str();
    pre->add_option("--seed", mae_train.seed, "Random seed")->capture_default_str();
    pre->callback([&] {
        action = [&] {
            const auto d = io::load_case(mae_case);
            if (mae_steps != d.manifest.n_steps) {
                throw std::runtime_error("--steps " + std::to_string(mae_steps) + " does not match the case's " +
                                         std::to_string(d.manifest.n_steps) + "-step sequences");
            }
            const auto r = pretrain_mae(d.sequences, mae_config_for(d, mae_patch, mae_embed, mask_ratio, mae_train.seed), mae_train);
            io::save_mae(mae_out, r.model);
            std::string losses = "epoch,loss\n";
            for (size_t e = 0; e < r.epoch_loss.size(); ++e) losses += std::to_string(e + 1) + "," + std::to_string(r.epoch_loss[e]) + "\n";
            io::write_file_atomic(mae_out / "history.csv", losses);
            if (!r.advisories.empty()) {
                io::write_file_atomic(mae_out / "advisory.json", nlohmann::json({{"advisories", r.advisories}}).dump(2) + "\n");
                for (const auto &a : r.advisories) std::cerr << "advisory: " << a << "\n";
            }
            std::cout << "wrote " << mae_out.string() << "\n";
        };
    });

    // train cvae
    auto *train = app.add_subcommand("train", "Model training")->require_subcommand(1);
    auto *cvae = train->add_subcommand("cvae", "Train the conditional motion model on a case");
    fs::path tr_case, tr_out, tr_dvfs, tr_mae;
    std::string encoder = "motion";
    TrainConfig tc;
    int latent = 32, channels = 8, features = 32;
    cvae->add_option("--case", tr_case, "Case directory")->required();
    cvae->add_option("--out", tr_out, "Checkpoint directory")->required();
    cvae->add_option("--encoder", encoder, "Conditioning")->check(CLI::IsMember({"motion", "mae", "motion+mae"}))->capture_default_str();
    cvae->add_option("--epochs", tc.epochs, "Epochs")->capture_default_str();
    cvae->add_option("--batch", tc.batch_size, "Batch size")->capture_default_str();
    cvae->add_option("--lr", tc.lr, "Learning rate")->capture_default_str();
    cvae->add_option("--latent-dim", latent, "Latent size")->capture_default_str();
    cvae->add_option("--channels", channels, "Decoder channels")->capture_default_str();
    cvae->add_option("--features", features, "Conditioning features per branch")->capture_default_str();
    cvae->add_option("--beta-kl", tc.beta_kl, "KL weight")->capture_default_str();
    cvae->add_option("--lambda", tc.lambda_smooth, "Smoothness weight")->capture_default_str();
    cvae->add_option("--seed", tc.seed, "Random seed")->capture_default_str();
    cvae->add_option("--dvfs", tr_dvfs, "Training fields (default: the case's ground truth)");
    cvae->add_option("--mae", tr_mae, "Pretrained MAE checkpoint (default: pretrain one)");
    cvae->callback([&] {
        action = [&] {
            const auto d = io::load_case(tr_case);
            std::vector<DisplacementField> dvfs;
            if (!tr_dvfs.empty()) dvfs = io::read_dvf_dir(tr_dvfs, d.manifest.frames, d.manifest.reference_frame);
            else if (!d.gt_dvfs.empty()) dvfs = d.gt_dvfs;
            else throw std::runtime_error("case has no ground-truth fields; pass --dvfs");
            tc.encoder_mode = parse_encoder_mode(encoder);
            std::optional<MaeModel> mae_model;
            if (tc.encoder_mode != EncoderMode::Motion) {
                mae_model = tr_mae.empty() ? pretrain_mae(d.sequences, mae_config_for(d, 8, 32, 0.75, tc.seed), MaeTrainConfig{}).model
                                           : io::load_mae(tr_mae);
            }
            const auto samples = make_training_samples(d.frames, d.sequences, dvfs, d.manifest.reference_frame);
            const auto r = train_cvae(samples, arch_for(d, latent, channels, features, tc.seed), tc, mae_model ? &*mae_model : nullptr);
            io::save_cvae(tr_out, r.model);
            io::write_file_atomic(tr_out / "history.csv", history_csv(r.history));
            std::printf("total loss %.6g -> %.6g\n", r.history.front().loss.total, r.history.back().loss.total);
        };
    });

    // predict
    auto *pred = app.add_subcommand("predict", "Predict the next frames' fields from a slice sequence");
    fs::path pr_ckpt, pr_case, pr_out;
    int horizon = 1;
    std::optional<int> end_frame;
    pred->add_option("--ckpt", pr_ckpt, "Model checkpoint directory")->required();
    pred->add_option("--case", pr_case, "Case directory")->required();
    pred->add_option("--horizon", horizon, "Frames ahead")->capture_default_str();
    pred->add_option("--end-frame", end_frame, "Frame of the newest input slice (default: the reference frame)");
    pred->add_option("--out", pr_out, "Output field directory")->required();
    pred->callback([&] {
        action = [&] {
            const auto d = io::load_case(pr_case);
            const auto model = io::load_cvae(pr_ckpt);
            const int T = d.manifest.frames;
            const int e = end_frame.value_or(d.manifest.reference_frame);
            if (e < 0 || e >= T) throw std::runtime_error("end frame " + std::to_string(e) + " out of range");
            if (horizon < 1 || horizon >= T) throw std::runtime_error("horizon must lie in [1, " + std::to_string(T - 1) + "]");
            io::write_dvf_dir(pr_out, predict_ahead(model, d.sequences[size_t(e)], d.frames[size_t(d.manifest.reference_frame)], horizon));
            std::cout << "wrote " << horizon << " fields to " << pr_out.string() << "\n";
        };
    });

    // eval cycle / compare
    auto *ev = app.add_subcommand("eval", "Evaluation")->require_subcommand(1);
    auto *evc = ev->add_subcommand("cycle", "Score propagated masks against a case's masks");
    fs::path ev_case, ev_dvfs, ev_out;
    double percentile = 95.0;
    evc->add_option("--case", ev_case, "Case directory")->required();
    evc->add_option("--dvfs", ev_dvfs, "Field directory (one field per non-reference frame)")->required();
    evc->add_option("--out", ev_out, "Per-frame report CSV; the summary goes to <stem>_summary.csv")->required();
    evc->add_option("--percentile", percentile, "Hausdorff percentile column")->check(CLI::Range(0.0, 100.0))->capture_default_str();
    evc->callback([&] {
        action = [&] {
            const auto d = io::load_case(ev_case);
            const int ref = d.manifest.reference_frame;
            const auto dvfs = io::read_dvf_dir(ev_dvfs, d.manifest.frames, ref);
            const auto rows = evaluate_cycle(d.masks, d.masks[size_t(ref)], dvfs, ref, percentile);
            const auto s = summarize(rows);
            if (!ev_out.parent_path().empty()) fs::create_directories(ev_out.parent_path());
            io::write_file_atomic(ev_out, report_csv(rows, percentile));
            io::write_file_atomic(summary_path(ev_out), summary_csv(s, percentile));
            std::cout << "dice " << format_mean_std(s.dice) << "  hd_mm " << format_mean_std(s.hd_mm) << "\n";
        };
    });
    auto *evx = ev->add_subcommand("compare", "Train every encoder mode on one case and score all methods on another");
    fs::path cx_train, cx_test, cx_out;
    CompareConfig cc;
    int cx_latent = 32;
    evx->add_option("--case", cx_train, "Training case directory")->required();
    evx->add_option("--test", cx_test, "Held-out case directory")->required();
    evx->add_option("--out", cx_out, "Comparison CSV")->required();
    evx->add_option("--epochs", cc.train.epochs, "CVAE epochs")->capture_default_str();
    evx->add_option("--mae-epochs", cc.mae_train.epochs, "MAE epochs")->capture_default_str();
    evx->add_option("--latent-dim", cx_latent, "Latent size")->capture_default_str();
    evx->add_option("--seed", cc.train.seed, "Random seed")->capture_default_str();
    reg_opts.add_to(evx);
    evx->callback([&] {
        action = [&] {
            const auto tr = io::load_case(cx_train), te = io::load_case(cx_test);
            cc.arch = arch_for(tr, cx_latent, 8, 32, cc.train.seed);
            cc.mae = mae_config_for(tr, 8, 32, 0.75, cc.train.seed);
            cc.mae_train.seed = cc.train.seed;
            cc.registration = reg_opts.config();
            const auto rows = compare_methods(cycle_of(tr), cycle_of(te), cc);
            if (!cx_out.parent_path().empty()) fs::create_directories(cx_out.parent_path());
            io::write_file_atomic(cx_out, compare_csv(rows));
            std::cout << compare_csv(rows);
        };
    });

    // mesh extract / warp
    auto *mesh = app.add_subcommand("mesh", "Surface meshes")->require_subcommand(1);
    auto *mx = mesh->add_subcommand("extract", "Marching-cubes surface of a mask");
    fs::path mx_mask, mx_out;
    MeshOptions mopt;
    mx->add_option("--mask", mx_mask, "Mask (.raw)")->required();
    mx->add_option("--out", mx_out, "Output OBJ")->required();
    mx->add_flag("--smooth", mopt.smooth, "Box-smooth the mask before extraction");
    mx->callback([&] {
        action = [&] {
            const auto m = marching_cubes(io::read_mask(mx_mask), mopt);
            save_obj(mx_out, m);
            std::printf("%zu vertices, %zu triangles, area %.4f mm^2\n", m.vertices.size(), m.triangles.size(), surface_area(m));
        };
    });
    auto *mw = mesh->add_subcommand("warp", "Move mesh vertices by a displacement field");
    fs::path mw_mesh, mw_dvf, mw_out;
    mw->add_option("--mesh", mw_mesh, "Input OBJ")->required();
    mw->add_option("--dvf", mw_dvf, "Field (.raw)")->required();
    mw->add_option("--out", mw_out, "Output OBJ")->required();
    mw->callback([&] { action = [&] { save_obj(mw_out, warp_mesh(load_obj(mw_mesh), io::read_dvf(mw_dvf))); }; });

    // gradcheck
    auto *gc = app.add_subcommand("gradcheck", "Finite-difference check of every autodiff primitive and the model loss");
    uint64_t gc_seed = 0;
    gc->add_option("--seed", gc_seed, "Random seed")->capture_default_str();
    gc->callback([&] {
        action = [&] {
            bool ok = true;
            for (const auto &it : run_gradcheck_suite(gc_seed)) {
                std::printf("%-4s %-24s max rel %.3g (tol %.0e)\n", it.pass ? "ok" : "FAIL", it.name.c_str(), it.max_rel_error, it.tolerance);
                ok = ok && it.pass;
            }
            if (!ok) throw std::runtime_error("gradient check failed");
        };
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp &e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp &e) {
        return app.exit(e);
    } catch (const CLI::ParseError &e) {
        std::cerr << "error: " << one_line(e.what()) << "\n";
        CLI::App *sub = &app;
        while (!sub->get_subcommands().empty()) sub = sub->get_subcommands().front();
        std::cerr << sub->help();
        return 1;
    }
    try {
        action();
    } catch (const std::exception &e) {
        std::cerr << "error: " << one_line(e.what()) << "\n";
        return 2;
    }
    return 0;
}
