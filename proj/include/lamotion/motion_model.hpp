// motion_model.hpp - Conditional VAE over displacement fields with slice-sequence conditioning.
//
// Training: a posterior encoder sees the target field, the reference volume and the conditioning
// features and yields (mu, sigma); z = mu + eps * sigma is decoded, together with the conditioning
// features, into a field that warps the reference onto the target frame. A predictive head learns
// to regress mu from the conditioning features alone; inference decodes z = head(features), since
// the target field is unknown ahead of time.
#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lamotion/autodiff.hpp"
#include "lamotion/field.hpp"
#include "lamotion/mae.hpp"
#include "lamotion/slices.hpp"

namespace lamotion {

enum class EncoderMode { Motion, MAE, MotionMAE };

std::string to_string(EncoderMode m);
/// Accepts "motion", "mae" and "motion+mae".
EncoderMode parse_encoder_mode(const std::string &s);

struct CvaeConfig {
    Index3 dims{16, 16, 16};
    Vec3 spacing{1.8, 1.8, 1.8};
    int n_steps = 8;
    int latent_dim = 32;
    int channels = 8;
    /// Width of each dense feature vector (motion conditioning, posterior branch).
    int features = 32;
    int head_hidden = 64;
    /// Cycle length and reference frame, used to stamp predicted fields.
    int cycle_frames = 8;
    int ref_frame = 0;
    uint64_t seed = 0;

    Grid grid() const { return Grid(dims, spacing); }
    void validate() const;
};

struct CvaeModel {
    CvaeConfig config;
    EncoderMode mode = EncoderMode::Motion;
    ad::ParamSet params;
    std::optional<MaeModel> mae;
    bool trained = false;

    size_t condition_dim() const;
};

/// MAE modes require a pretrained MAE whose slice shape and n_steps match.
CvaeModel init_cvae(const CvaeConfig &cfg, EncoderMode mode, const MaeModel *mae = nullptr);

struct LatentCode {
    std::vector<double> mu;
    std::vector<double> sigma;
    std::vector<double> z;
};

std::vector<double> condition_features(const CvaeModel &model, const SliceSequence &iseq, const Volume &vref, EncoderMode mode);
inline std::vector<double> condition_features(const CvaeModel &model, const SliceSequence &iseq, const Volume &vref) {
    return condition_features(model, iseq, vref, model.mode);
}

/// Posterior (mu, sigma); z is left empty.
LatentCode encode(const CvaeModel &model, const DisplacementField &dvf, const SliceSequence &iseq, const Volume &vref);

std::vector<double> reparameterize(std::span<const double> mu, std::span<const double> sigma, std::span<const double> eps);
std::vector<double> reparameterize(std::span<const double> mu, std::span<const double> sigma, std::mt19937_64 &rng);

DisplacementField decode(const CvaeModel &model, std::span<const double> z, std::span<const double> features);

/// 0.5 * sum(mu^2 + sigma^2 - 1 - ln sigma^2) against a standard normal prior.
double kl_gaussian(std::span<const double> mu, std::span<const double> sigma);

struct TrainSample {
    DisplacementField dvf;  // reference -> target frame
    SliceSequence iseq;     // observations up to the frame before the target
    Volume vref;
    Volume vt;
};

struct TrainConfig {
    int epochs = 30;
    int batch_size = 2;
    double lr = 5e-3;
    double beta_kl = 0.01;
    double lambda_smooth = 0.01;
    uint64_t seed = 0;
    EncoderMode encoder_mode = EncoderMode::Motion;
    /// Weight of an auxiliary mean-squared error between decoded and supplied fields.
    double aux_dvf_weight = 0.0;
    /// Fraction of the epochs over which beta_kl ramps linearly from beta/ramp to beta.
    double beta_warmup = 0.2;

    void validate() const;
};

struct CvaeLoss {
    double total = 0.0;
    double rec = 0.0;
    double similarity = 0.0;
    double smooth = 0.0;
    double kl = 0.0;
};

struct CvaeLossVars {
    ad::Var total, rec, similarity, smooth, kl, aux;
    /// Squared error of the predictive head against the (detached) posterior mean.
    ad::Var head;
};

/// Graph-level pieces, for gradient checks. cond is (1, condition_dim), z is (1, latent_dim);
/// the decoded field is (1, 3, Z, Y, X) in mm.
ad::Var condition_graph(ad::Tape &tape, const ad::ParamVars &vars, const CvaeModel &model, const SliceSequence &iseq, const Volume &vref);
ad::Var posterior_mu_graph(ad::Tape &tape, const ad::ParamVars &vars, const DisplacementField &dvf, const Volume &vref, ad::Var cond);
ad::Var decode_graph(const ad::ParamVars &vars, const CvaeModel &model, ad::Var z, ad::Var cond);

/// total = mean_b[sim_b + lambda * smooth_b] + beta * mean_b[kl_b] (+ aux weight * mean field MSE).
/// eps holds one latent_dim noise vector per sample.
CvaeLossVars cvae_loss_graph(ad::Tape &tape, const ad::ParamVars &vars, const CvaeModel &model, std::span<const TrainSample> batch,
                             const TrainConfig &cfg, double beta, std::span<const std::vector<double>> eps);

CvaeLoss cvae_loss(const CvaeModel &model, std::span<const TrainSample> batch, const TrainConfig &cfg,
                   std::span<const std::vector<double>> eps);

struct EpochRecord {
    int epoch = 0;
    double beta = 0.0;
    CvaeLoss loss;  // epoch means
    double head = 0.0;
};

struct TrainResult {
    CvaeModel model;
    std::vector<EpochRecord> history;
    /// Batch losses of every optimisation step, in order.
    std::vector<CvaeLoss> steps;
};

/// Samples for frames t -> t+1: the sequence ending at t conditions the field from `ref` to t+1.
/// `dvfs` holds one field per non-reference frame, matched by to_frame.
std::vector<TrainSample> make_training_samples(const std::vector<Volume> &frames, const std::vector<SliceSequence> &sequences,
                                               const std::vector<DisplacementField> &dvfs, int ref);

TrainResult train_cvae(const std::vector<TrainSample> &samples, const CvaeConfig &arch, const TrainConfig &cfg,
                       const MaeModel *mae = nullptr);

std::string history_csv(const std::vector<EpochRecord> &history);

/// Fields for the next `horizon` frames after iseq.end_frame. Later steps feed the slice of the
/// previous prediction back into the sequence.
std::vector<DisplacementField> predict_ahead(const CvaeModel &model, const SliceSequence &iseq, const Volume &vref, int horizon);

} // namespace lamotion
