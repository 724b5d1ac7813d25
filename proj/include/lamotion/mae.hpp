// mae.hpp - Masked autoencoder over 2D+t slice sequences, used as a frozen conditioning encoder.
//
// Each slice is cut into patch x patch tiles; every (time step, tile) pair is one token. A token
// embedding with learned positions feeds one token-mixing and one channel-mixing residual layer,
// and a linear head reconstructs the pixels of each token. Only masked tokens enter the loss.
#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "lamotion/autodiff.hpp"
#include "lamotion/slices.hpp"

namespace lamotion {

struct MaeConfig {
    int64_t width = 32;
    int64_t height = 32;
    int n_steps = 8;
    int patch = 8;
    double mask_ratio = 0.75;
    int embed = 32;
    uint64_t seed = 0;

    int64_t tokens_per_slice() const { return (width / patch) * (height / patch); }
    int64_t tokens() const { return tokens_per_slice() * n_steps; }
    void validate() const;
};

struct MaeModel {
    MaeConfig config;
    ad::ParamSet params;
    bool trained = false;
};

MaeModel init_mae(const MaeConfig &cfg);

/// (tokens, patch * patch): time-major, then tiles in raster order, pixels X-fastest.
ad::Tensor patchify(const SliceSequence &seq, int patch);

/// Marks round(ratio * tokens) distinct tokens, chosen uniformly.
std::vector<uint8_t> draw_token_mask(size_t tokens, double ratio, std::mt19937_64 &rng);

struct MaeOutputs {
    ad::Var reconstruction;  // (tokens, patch * patch)
    ad::Var hidden;          // (tokens, embed)
};

/// Masked tokens are zeroed before embedding.
MaeOutputs mae_forward(ad::Tape &tape, const ad::ParamVars &vars, const MaeConfig &cfg, const ad::Tensor &tokens,
                       const std::vector<uint8_t> &mask);

/// Mean squared reconstruction error over masked tokens; 0 when none are masked.
double mae_loss(const MaeModel &model, const SliceSequence &seq, const std::vector<uint8_t> &mask);

/// Token-mean of the final hidden layer with nothing masked; length config.embed.
std::vector<double> mae_features(const MaeModel &model, const SliceSequence &seq);

struct MaeTrainConfig {
    int epochs = 50;
    double lr = 2e-3;
    uint64_t seed = 0;
};

struct MaePretrainResult {
    MaeModel model;
    /// Mean masked-token loss per epoch, measured before each step.
    std::vector<double> epoch_loss;
    /// Non-fatal conditions worth reporting, e.g. a zero mask ratio.
    std::vector<std::string> advisories;
};

MaePretrainResult pretrain_mae(const std::vector<SliceSequence> &sequences, const MaeConfig &cfg, const MaeTrainConfig &train);

} // namespace lamotion
