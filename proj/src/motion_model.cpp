// motion_model.cpp - Conditional VAE motion model and ahead-of-time prediction.

#include "lamotion/motion_model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "lamotion/nn.hpp"

namespace lamotion {

using namespace ad;

namespace {

constexpr double kSigmaFloor = 1e-6;

bool uses_motion(EncoderMode m) { return m != EncoderMode::MAE; }
bool uses_mae(EncoderMode m) { return m != EncoderMode::Motion; }

int64_t coarse(int64_t n) { return n / 4; }

void add_conv3d(ParamSet &p, const std::string &name, int64_t in, int64_t out, std::mt19937_64 &rng) {
    p[name + ".w"] = glorot_uniform({out, in, 3, 3, 3}, in * 27, out * 27, rng);
    p[name + ".b"] = Tensor({out});
}

void add_conv2d(ParamSet &p, const std::string &name, int64_t in, int64_t out, std::mt19937_64 &rng) {
    p[name + ".w"] = glorot_uniform({out, in, 3, 3}, in * 9, out * 9, rng);
    p[name + ".b"] = Tensor({out});
}

void add_dense(ParamSet &p, const std::string &name, int64_t in, int64_t out, std::mt19937_64 &rng) {
    p[name + ".w"] = glorot_uniform({out, in}, in, out, rng);
    p[name + ".b"] = Tensor({out});
}

Var conv3d_layer(const ParamVars &v, const std::string &name, Var x, int stride) {
    return conv3d(x, v.at(name + ".w"), v.at(name + ".b"), stride);
}

Var dense_layer(const ParamVars &v, const std::string &name, Var x) { return dense(x, v.at(name + ".w"), v.at(name + ".b")); }

// Two stride-2 convolutions, flatten, dense: (1, C, Z, Y, X) -> (1, features).
Var branch3d(const ParamVars &v, const std::string &name, Var x) {
    Var h = relu(conv3d_layer(v, name + ".c1", x, 2));
    h = relu(conv3d_layer(v, name + ".c2", h, 2));
    h = reshape(h, {1, int64_t(h.value().size())});
    return relu(dense_layer(v, name + ".fc", h));
}

Var branch2d(const ParamVars &v, const std::string &name, Var x) {
    Var h = relu(conv2d(x, v.at(name + ".c1.w"), v.at(name + ".c1.b"), 2));
    h = relu(conv2d(h, v.at(name + ".c2.w"), v.at(name + ".c2.b"), 2));
    h = reshape(h, {1, int64_t(h.value().size())});
    return relu(dense_layer(v, name + ".fc", h));
}

Tensor volume_tensor(const Volume &v) { return Tensor({1, 1, v.grid.dim(2), v.grid.dim(1), v.grid.dim(0)}, v.values); }

Tensor field_tensor(const DisplacementField &f) {
    const size_t N = f.vectors.size();
    Tensor t({1, 3, f.grid.dim(2), f.grid.dim(1), f.grid.dim(0)});
    for (size_t n = 0; n < N; ++n)
        for (int c = 0; c < 3; ++c) t.data[size_t(c) * N + n] = f.vectors[n][c];
    return t;
}

DisplacementField tensor_field(const Tensor &t, const Grid &g, int from, int to) {
    DisplacementField f(g, from, to);
    const size_t N = f.vectors.size();
    for (size_t n = 0; n < N; ++n)
        for (int c = 0; c < 3; ++c) f.vectors[n][c] = t.data[size_t(c) * N + n];
    return f;
}

Tensor sequence_tensor(const SliceSequence &s) {
    Tensor t({1, int64_t(s.n_steps()), s.height, s.width});
    size_t o = 0;
    for (const auto &sl : s.slices)
        for (double x : sl) t.data[o++] = x;
    return t;
}

void check_inputs(const CvaeModel &m, const SliceSequence *iseq, const Volume *vref, const DisplacementField *dvf, const char *what) {
    const Grid g = m.config.grid();
    if (vref && !(vref->grid.dims() == g.dims())) throw std::invalid_argument(std::string(what) + ": reference volume does not match the model grid");
    if (dvf && !(dvf->grid.dims() == g.dims())) throw std::invalid_argument(std::string(what) + ": field does not match the model grid");
    if (iseq) {
        validate(*iseq);
        if (iseq->width != g.dim(0) || iseq->height != g.dim(1) || iseq->n_steps() != m.config.n_steps) {
            throw std::invalid_argument(std::string(what) + ": slice sequence does not match the model (" + std::to_string(g.dim(0)) + "x" +
                                        std::to_string(g.dim(1)) + ", " + std::to_string(m.config.n_steps) + " steps)");
        }
    }
}

Var condition_var(Tape &tape, const ParamVars &v, const CvaeModel &m, const SliceSequence &iseq, const Volume &vref, EncoderMode mode) {
    std::vector<Var> parts;
    if (uses_motion(mode)) {
        if (!v.contains("cond2d.fc.w")) throw std::invalid_argument("condition_features: model has no motion conditioning branch");
        parts.push_back(branch2d(v, "cond2d", tape.constant(sequence_tensor(iseq))));
        parts.push_back(branch3d(v, "cond3d", tape.constant(volume_tensor(vref))));
    }
    if (uses_mae(mode)) {
        if (!m.mae) throw std::invalid_argument("condition_features: " + to_string(mode) + " mode requires a pretrained MAE model");
        auto f = mae_features(*m.mae, iseq);
        const auto n = int64_t(f.size());
        parts.push_back(tape.constant(Tensor({1, n}, std::move(f))));
    }
    return parts.size() == 1 ? parts[0] : concat(parts, 1);
}

struct Posterior {
    Var mu, sigma;
};

Posterior posterior(Tape &tape, const ParamVars &v, const DisplacementField &dvf, const Volume &vref, Var cond) {
    Var x = concat({tape.constant(field_tensor(dvf)), tape.constant(volume_tensor(vref))}, 1);
    Var h = concat({branch3d(v, "post3d", x), cond}, 1);
    return {dense_layer(v, "post.mu", h), add_scalar(softplus(dense_layer(v, "post.sigma", h)), kSigmaFloor)};
}

Var head_mu(const ParamVars &v, Var cond) { return dense_layer(v, "head.mu", relu(dense_layer(v, "head.fc1", cond))); }

Var decoder(const ParamVars &v, const CvaeConfig &cfg, Var z, Var cond) {
    const int64_t X = cfg.dims[0], Y = cfg.dims[1], Z = cfg.dims[2];
    Var c = dense_layer(v, "dec.fc", concat({z, cond}, 1));
    c = reshape(c, {1, 3, coarse(Z), coarse(Y), coarse(X)});
    Var up = upsample_nearest3d(c, Z, Y, X);
    Var r = conv3d_layer(v, "dec.r2", relu(conv3d_layer(v, "dec.r1", up, 1)), 1);
    return scale_by(add(up, r), v.at("dec.gain"));
}

std::vector<double> to_vector(const Tensor &t) { return t.data; }

void require_finite(double x, const char *what) {
    if (!std::isfinite(x)) throw std::runtime_error(std::string(what) + ": non-finite loss");
}

} // namespace

Var condition_graph(Tape &tape, const ParamVars &vars, const CvaeModel &model, const SliceSequence &iseq, const Volume &vref) {
    check_inputs(model, &iseq, &vref, nullptr, "condition_graph");
    return condition_var(tape, vars, model, iseq, vref, model.mode);
}

Var posterior_mu_graph(Tape &tape, const ParamVars &vars, const DisplacementField &dvf, const Volume &vref, Var cond) {
    return posterior(tape, vars, dvf, vref, cond).mu;
}

Var decode_graph(const ParamVars &vars, const CvaeModel &model, Var z, Var cond) { return decoder(vars, model.config, z, cond); }

std::string to_string(EncoderMode m) {
    switch (m) {
    case EncoderMode::Motion: return "motion";
    case EncoderMode::MAE: return "mae";
    case EncoderMode::MotionMAE: return "motion+mae";
    }
    return "?";
}

EncoderMode parse_encoder_mode(const std::string &s) {
    if (s == "motion") return EncoderMode::Motion;
    if (s == "mae") return EncoderMode::MAE;
    if (s == "motion+mae") return EncoderMode::MotionMAE;
    throw std::invalid_argument("unknown encoder mode '" + s + "' (expected motion, mae or motion+mae)");
}

void CvaeConfig::validate() const {
    for (auto d : dims)
        if (d < 4 || d % 4) throw std::invalid_argument("CvaeConfig: grid dims must be positive multiples of 4");
    if (!(spacing.x > 0 && spacing.y > 0 && spacing.z > 0)) throw std::invalid_argument("CvaeConfig: spacing must be positive");
    if (n_steps < 1) throw std::invalid_argument("CvaeConfig: n_steps must be >= 1");
    const int64_t voxels = dims[0] * dims[1] * dims[2];
    if (latent_dim < 1 || latent_dim > voxels / 64) {
        throw std::invalid_argument("CvaeConfig: latent_dim must lie in [1, " + std::to_string(voxels / 64) + "] for this grid");
    }
    if (channels < 1 || features < 1 || head_hidden < 1) throw std::invalid_argument("CvaeConfig: layer widths must be positive");
    if (cycle_frames < 2) throw std::invalid_argument("CvaeConfig: cycle_frames must be >= 2");
    if (ref_frame < 0 || ref_frame >= cycle_frames) throw std::invalid_argument("CvaeConfig: ref_frame out of range");
}

size_t CvaeModel::condition_dim() const {
    size_t d = 0;
    if (uses_motion(mode)) d += 2 * size_t(config.features);
    if (uses_mae(mode)) d += mae ? size_t(mae->config.embed) : 0;
    return d;
}

CvaeModel init_cvae(const CvaeConfig &cfg, EncoderMode mode, const MaeModel *mae) {
    cfg.validate();
    CvaeModel m;
    m.config = cfg;
    m.mode = mode;
    if (uses_mae(mode)) {
        if (!mae) throw std::invalid_argument("init_cvae: " + to_string(mode) + " mode requires a pretrained MAE model");
        if (!mae->trained) throw std::invalid_argument("init_cvae: MAE model is not pretrained");
        if (mae->config.width != cfg.dims[0] || mae->config.height != cfg.dims[1] || mae->config.n_steps != cfg.n_steps) {
            throw std::invalid_argument("init_cvae: MAE slice shape or step count does not match the grid");
        }
        m.mae = *mae;
    }
    std::mt19937_64 rng(cfg.seed);
    const int64_t C = cfg.channels, F = cfg.features, d = cfg.latent_dim;
    const int64_t X = cfg.dims[0], Y = cfg.dims[1], Z = cfg.dims[2];
    const int64_t flat3 = C * coarse(X) * coarse(Y) * coarse(Z), flat2 = C * coarse(X) * coarse(Y);
    const auto cond = int64_t(m.condition_dim());
    auto &p = m.params;
    if (uses_motion(mode)) {
        add_conv2d(p, "cond2d.c1", cfg.n_steps, C, rng);
        add_conv2d(p, "cond2d.c2", C, C, rng);
        add_dense(p, "cond2d.fc", flat2, F, rng);
        add_conv3d(p, "cond3d.c1", 1, C, rng);
        add_conv3d(p, "cond3d.c2", C, C, rng);
        add_dense(p, "cond3d.fc", flat3, F, rng);
    }
    add_conv3d(p, "post3d.c1", 4, C, rng);
    add_conv3d(p, "post3d.c2", C, C, rng);
    add_dense(p, "post3d.fc", flat3, F, rng);
    add_dense(p, "post.mu", F + cond, d, rng);
    add_dense(p, "post.sigma", F + cond, d, rng);
    // softplus(b) = 1: the untrained posterior starts at unit scale.
    for (auto &b : p["post.sigma.b"].data) b = std::log(std::exp(1.0) - 1.0);
    add_dense(p, "head.fc1", cond, cfg.head_hidden, rng);
    add_dense(p, "head.mu", cfg.head_hidden, d, rng);
    add_dense(p, "dec.fc", d + cond, 3 * coarse(X) * coarse(Y) * coarse(Z), rng);
    add_conv3d(p, "dec.r1", 3, C, rng);
    add_conv3d(p, "dec.r2", C, 3, rng);
    p["dec.gain"] = Tensor({1});
    return m;
}

std::vector<double> condition_features(const CvaeModel &model, const SliceSequence &iseq, const Volume &vref, EncoderMode mode) {
    check_inputs(model, &iseq, uses_motion(mode) ? &vref : nullptr, nullptr, "condition_features");
    Tape tape;
    const auto vars = bind_params(tape, model.params);
    return to_vector(condition_var(tape, vars, model, iseq, vref, mode).value());
}

LatentCode encode(const CvaeModel &model, const DisplacementField &dvf, const SliceSequence &iseq, const Volume &vref) {
    check_inputs(model, &iseq, &vref, &dvf, "encode");
    Tape tape;
    const auto vars = bind_params(tape, model.params);
    const auto post = posterior(tape, vars, dvf, vref, condition_var(tape, vars, model, iseq, vref, model.mode));
    return {to_vector(post.mu.value()), to_vector(post.sigma.value()), {}};
}

std::vector<double> reparameterize(std::span<const double> mu, std::span<const double> sigma, std::span<const double> eps) {
    if (mu.size() != sigma.size() || mu.size() != eps.size()) throw std::invalid_argument("reparameterize: length mismatch");
    std::vector<double> z(mu.size());
    for (size_t i = 0; i < z.size(); ++i) z[i] = mu[i] + eps[i] * sigma[i];
    return z;
}

std::vector<double> reparameterize(std::span<const double> mu, std::span<const double> sigma, std::mt19937_64 &rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> eps(mu.size());
    for (auto &e : eps) e = n(rng);
    return reparameterize(mu, sigma, eps);
}

DisplacementField decode(const CvaeModel &model, std::span<const double> z, std::span<const double> features) {
    if (z.size() != size_t(model.config.latent_dim)) throw std::invalid_argument("decode: latent length mismatch");
    if (features.size() != model.condition_dim()) throw std::invalid_argument("decode: feature length mismatch");
    Tape tape;
    const auto vars = bind_params(tape, model.params);
    Var zv = tape.constant(Tensor({1, int64_t(z.size())}, {z.begin(), z.end()}));
    Var cv = tape.constant(Tensor({1, int64_t(features.size())}, {features.begin(), features.end()}));
    return tensor_field(decoder(vars, model.config, zv, cv).value(), model.config.grid(), model.config.ref_frame, model.config.ref_frame);
}

double kl_gaussian(std::span<const double> mu, std::span<const double> sigma) {
    if (mu.size() != sigma.size()) throw std::invalid_argument("kl_gaussian: length mismatch");
    double kl = 0.0;
    for (size_t i = 0; i < mu.size(); ++i) {
        if (!(sigma[i] > 0.0)) throw std::invalid_argument("kl_gaussian: sigma must be positive");
        kl += mu[i] * mu[i] + sigma[i] * sigma[i] - 1.0 - std::log(sigma[i] * sigma[i]);
    }
    return 0.5 * kl;
}

void TrainConfig::validate() const {
    if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (!(lr > 0.0)) throw std::invalid_argument("TrainConfig: lr must be positive");
    if (!(beta_kl >= 0.0)) throw std::invalid_argument("TrainConfig: beta_kl must be >= 0");
    if (!(lambda_smooth >= 0.0)) throw std::invalid_argument("TrainConfig: lambda_smooth must be >= 0");
    if (!(aux_dvf_weight >= 0.0)) throw std::invalid_argument("TrainConfig: aux_dvf_weight must be >= 0");
    if (!(beta_warmup >= 0.0 && beta_warmup <= 1.0)) throw std::invalid_argument("TrainConfig: beta_warmup must lie in [0, 1]");
}

CvaeLossVars cvae_loss_graph(Tape &tape, const ParamVars &vars, const CvaeModel &model, std::span<const TrainSample> batch,
                             const TrainConfig &cfg, double beta, std::span<const std::vector<double>> eps) {
    if (batch.empty()) throw std::invalid_argument("cvae_loss: empty batch");
    if (eps.size() != batch.size()) throw std::invalid_argument("cvae_loss: one noise vector per sample required");
    const Grid g = model.config.grid();
    const double inv = 1.0 / double(batch.size());
    std::vector<Var> sims, smooths, kls, auxes, heads;
    for (size_t b = 0; b < batch.size(); ++b) {
        const auto &s = batch[b];
        check_inputs(model, &s.iseq, &s.vref, &s.dvf, "cvae_loss");
        if (!(s.vt.grid.dims() == g.dims())) throw std::invalid_argument("cvae_loss: target volume does not match the model grid");
        if (eps[b].size() != size_t(model.config.latent_dim)) throw std::invalid_argument("cvae_loss: noise length mismatch");
        Var cond = condition_var(tape, vars, model, s.iseq, s.vref, model.mode);
        const auto post = posterior(tape, vars, s.dvf, s.vref, cond);
        Var z = add(post.mu, mul(post.sigma, tape.constant(Tensor({1, int64_t(eps[b].size())}, eps[b]))));
        Var field = decoder(vars, model.config, z, cond);
        sims.push_back(mse(warp(field, s.vref), tape.constant(volume_tensor(s.vt))));
        smooths.push_back(smoothness(field, g));
        kls.push_back(kl_standard_normal(post.mu, post.sigma));
        auxes.push_back(mse(field, tape.constant(field_tensor(s.dvf))));
        heads.push_back(mse(head_mu(vars, cond), tape.constant(post.mu.value())));
    }
    auto batch_mean = [&](const std::vector<Var> &xs) {
        Var acc = xs[0];
        for (size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
        return scale(acc, inv);
    };
    CvaeLossVars out;
    out.similarity = batch_mean(sims);
    out.smooth = batch_mean(smooths);
    out.kl = batch_mean(kls);
    out.aux = batch_mean(auxes);
    out.head = batch_mean(heads);
    out.rec = add(out.similarity, scale(out.smooth, cfg.lambda_smooth));
    out.total = add(out.rec, scale(out.kl, beta));
    if (cfg.aux_dvf_weight > 0.0) out.total = add(out.total, scale(out.aux, cfg.aux_dvf_weight));
    return out;
}

CvaeLoss cvae_loss(const CvaeModel &model, std::span<const TrainSample> batch, const TrainConfig &cfg, std::span<const std::vector<double>> eps) {
    Tape tape;
    const auto vars = bind_params(tape, model.params);
    const auto v = cvae_loss_graph(tape, vars, model, batch, cfg, cfg.beta_kl, eps);
    CvaeLoss l{v.total.value().item(), v.rec.value().item(), v.similarity.value().item(), v.smooth.value().item(), v.kl.value().item()};
    require_finite(l.total, "cvae_loss");
    return l;
}

std::vector<TrainSample> make_training_samples(const std::vector<Volume> &frames, const std::vector<SliceSequence> &sequences,
                                               const std::vector<DisplacementField> &dvfs, int ref) {
    const int T = int(frames.size());
    if (T < 2) throw std::invalid_argument("make_training_samples: at least 2 frames required");
    if (int(sequences.size()) != T) throw std::invalid_argument("make_training_samples: one slice sequence per frame required");
    if (ref < 0 || ref >= T) throw std::invalid_argument("make_training_samples: reference frame out of range");
    std::map<int, const DisplacementField *> by_frame;
    for (const auto &f : dvfs) {
        if (f.from_frame != ref) throw std::invalid_argument("make_training_samples: field for frame " + std::to_string(f.to_frame) + " does not start at the reference");
        by_frame[f.to_frame] = &f;
    }
    std::vector<TrainSample> out;
    for (int t = 0; t < T; ++t) {
        const int target = (t + 1) % T;
        TrainSample s;
        if (target == ref) {
            s.dvf = DisplacementField(frames[size_t(ref)].grid, ref, ref);
        } else {
            auto it = by_frame.find(target);
            if (it == by_frame.end()) throw std::invalid_argument("make_training_samples: no field for frame " + std::to_string(target));
            s.dvf = *it->second;
        }
        s.iseq = sequences[size_t(t)];
        if (s.iseq.end_frame != t) throw std::invalid_argument("make_training_samples: sequence " + std::to_string(t) + " does not end at frame " + std::to_string(t));
        s.vref = frames[size_t(ref)];
        s.vt = frames[size_t(target)];
        out.push_back(std::move(s));
    }
    return out;
}

namespace {

CvaeLoss train_step(CvaeModel &model, ParamAdam &adam, const std::vector<TrainSample> &batch, const TrainConfig &cfg, EpochRecord &rec,
                    const std::vector<std::vector<double>> &eps, double w) {
    Tape tape;
    const auto vars = bind_params(tape, model.params);
    const auto v = cvae_loss_graph(tape, vars, model, batch, cfg, rec.beta, eps);
    Var objective = add(v.total, v.head);
    const double total = v.total.value().item();
    if (!std::isfinite(total) || !std::isfinite(objective.value().item())) throw std::runtime_error("non-finite loss");
    const CvaeLoss step{total, v.rec.value().item(), v.similarity.value().item(), v.smooth.value().item(), v.kl.value().item()};
    rec.loss.total += w * step.total;
    rec.loss.rec += w * step.rec;
    rec.loss.similarity += w * step.similarity;
    rec.loss.smooth += w * step.smooth;
    rec.loss.kl += w * step.kl;
    rec.head += w * v.head.value().item();
    tape.backward(objective);
    adam.step(model.params, collect_grads(tape, vars));
    return step;
}

} // namespace

TrainResult train_cvae(const std::vector<TrainSample> &samples, const CvaeConfig &arch, const TrainConfig &cfg, const MaeModel *mae) {
    cfg.validate();
    if (samples.empty()) throw std::invalid_argument("train_cvae: no training samples");
    TrainResult res{init_cvae(arch, cfg.encoder_mode, mae), {}, {}};
    auto &model = res.model;
    ParamAdam adam({cfg.lr}, model.params);
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<size_t> order(samples.size());
    std::iota(order.begin(), order.end(), size_t{0});
    const int ramp = std::max(1, int(std::ceil(cfg.beta_warmup * cfg.epochs)));

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        EpochRecord rec;
        rec.epoch = epoch + 1;
        rec.beta = cfg.beta_kl * std::min(1.0, double(epoch + 1) / double(ramp));
        for (size_t start = 0; start < order.size(); start += size_t(cfg.batch_size)) {
            const size_t end = std::min(order.size(), start + size_t(cfg.batch_size));
            std::vector<TrainSample> batch;
            std::vector<std::vector<double>> eps;
            for (size_t i = start; i < end; ++i) {
                batch.push_back(samples[order[i]]);
                std::vector<double> e(size_t(arch.latent_dim));
                for (auto &x : e) x = normal(rng);
                eps.push_back(std::move(e));
            }
            try {
                res.steps.push_back(train_step(model, adam, batch, cfg, rec, eps, double(batch.size()) / double(samples.size())));
            } catch (const std::runtime_error &e) {
                throw std::runtime_error("train_cvae: loss diverged at epoch " + std::to_string(epoch + 1) + ": " + e.what());
            }
        }
        res.history.push_back(rec);
    }
    model.trained = true;
    return res;
}

std::string history_csv(const std::vector<EpochRecord> &history) {
    std::ostringstream os;
    os << "epoch,beta,total,rec,similarity,smooth,kl,head\n";
    char buf[512];
    for (const auto &h : history) {
        std::snprintf(buf, sizeof buf, "%d,%.9g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g\n", h.epoch, h.beta, h.loss.total, h.loss.rec,
                      h.loss.similarity, h.loss.smooth, h.loss.kl, h.head);
        os << buf;
    }
    return os.str();
}

std::vector<DisplacementField> predict_ahead(const CvaeModel &model, const SliceSequence &iseq, const Volume &vref, int horizon) {
    if (!model.trained) throw std::runtime_error("predict_ahead: model is untrained");
    if (horizon < 1) throw std::invalid_argument("predict_ahead: horizon must be >= 1");
    check_inputs(model, &iseq, &vref, nullptr, "predict_ahead");
    if (iseq.slice_index < 0 || iseq.slice_index >= vref.grid.dim(2)) throw std::invalid_argument("predict_ahead: slice index outside the volume");
    const int T = model.config.cycle_frames;
    SliceSequence seq = iseq;
    std::vector<DisplacementField> out;
    for (int k = 1; k <= horizon; ++k) {
        Tape tape;
        const auto vars = bind_params(tape, model.params);
        Var cond = condition_var(tape, vars, model, seq, vref, model.mode);
        Var field = decoder(vars, model.config, head_mu(vars, cond), cond);
        const int to = ((iseq.end_frame + k) % T + T) % T;
        out.push_back(tensor_field(field.value(), vref.grid, model.config.ref_frame, to));
        if (k == horizon) break;
        const Volume next = warp_volume(vref, out.back());
        std::vector<double> slice(size_t(seq.width * seq.height));
        for (int64_t j = 0; j < seq.height; ++j)
            for (int64_t i = 0; i < seq.width; ++i) slice[size_t(j * seq.width + i)] = next.at(i, j, seq.slice_index);
        seq.slices.insert(seq.slices.begin(), std::move(slice));
        seq.slices.pop_back();
        seq.end_frame = to;
    }
    return out;
}

} // namespace lamotion
