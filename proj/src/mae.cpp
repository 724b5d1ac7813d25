// mae.cpp - Masked autoencoder for slice sequences.

#include "lamotion/mae.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "lamotion/nn.hpp"

namespace lamotion {

using namespace ad;

void MaeConfig::validate() const {
    if (patch < 1) throw std::invalid_argument("MaeConfig: patch must be positive");
    if (width < patch || height < patch || width % patch || height % patch) {
        throw std::invalid_argument("MaeConfig: slice size " + std::to_string(width) + "x" + std::to_string(height) +
                                    " is not a multiple of the patch size " + std::to_string(patch));
    }
    if (n_steps < 1) throw std::invalid_argument("MaeConfig: n_steps must be >= 1");
    if (!(mask_ratio >= 0.0)) throw std::invalid_argument("MaeConfig: mask_ratio must be >= 0");
    if (!(mask_ratio < 1.0)) throw std::invalid_argument("MaeConfig: mask_ratio must be < 1");
    if (embed < 1) throw std::invalid_argument("MaeConfig: embed must be positive");
}

MaeModel init_mae(const MaeConfig &cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    const int64_t P = cfg.patch * cfg.patch, T = cfg.tokens(), E = cfg.embed;
    MaeModel m;
    m.config = cfg;
    m.params["embed.w"] = glorot_uniform({E, P}, P, E, rng);
    m.params["embed.b"] = Tensor({E});
    m.params["pos"] = glorot_uniform({T, E}, T, E, rng);
    m.params["mix_tokens.w"] = glorot_uniform({T, T}, T, T, rng);
    m.params["mix_tokens.b"] = Tensor({T});
    m.params["mix_channels.w"] = glorot_uniform({E, E}, E, E, rng);
    m.params["mix_channels.b"] = Tensor({E});
    m.params["head.w"] = Tensor({P, E});
    m.params["head.b"] = Tensor({P});
    return m;
}

Tensor patchify(const SliceSequence &seq, int patch) {
    validate(seq);
    if (patch < 1 || seq.width % patch || seq.height % patch) throw std::invalid_argument("patchify: slice size is not a multiple of the patch size");
    const int64_t tx = seq.width / patch, ty = seq.height / patch, P = int64_t(patch) * patch;
    Tensor out({int64_t(seq.n_steps()) * tx * ty, P});
    size_t row = 0;
    for (const auto &s : seq.slices)
        for (int64_t by = 0; by < ty; ++by)
            for (int64_t bx = 0; bx < tx; ++bx, ++row)
                for (int64_t y = 0; y < patch; ++y)
                    for (int64_t x = 0; x < patch; ++x)
                        out.data[row * size_t(P) + size_t(y * patch + x)] = s[size_t((by * patch + y) * seq.width + bx * patch + x)];
    return out;
}

std::vector<uint8_t> draw_token_mask(size_t tokens, double ratio, std::mt19937_64 &rng) {
    if (!(ratio >= 0.0 && ratio < 1.0)) throw std::invalid_argument("mask ratio must lie in [0, 1)");
    const auto n = std::min(tokens, static_cast<size_t>(std::lround(ratio * static_cast<double>(tokens))));
    std::vector<size_t> order(tokens);
    std::iota(order.begin(), order.end(), size_t{0});
    // Partial Fisher-Yates with explicit draws keeps the sequence independent of the library's shuffle.
    for (size_t i = 0; i < n; ++i) {
        std::uniform_int_distribution<size_t> pick(i, tokens - 1);
        std::swap(order[i], order[pick(rng)]);
    }
    std::vector<uint8_t> mask(tokens, 0);
    for (size_t i = 0; i < n; ++i) mask[order[i]] = 1;
    return mask;
}

MaeOutputs mae_forward(Tape &tape, const ParamVars &v, const MaeConfig &cfg, const Tensor &tokens, const std::vector<uint8_t> &mask) {
    const int64_t T = cfg.tokens(), P = int64_t(cfg.patch) * cfg.patch;
    if (tokens.rank() != 2 || tokens.shape[0] != T || tokens.shape[1] != P || mask.size() != size_t(T)) {
        throw std::invalid_argument("mae_forward: expected " + std::to_string(T) + " tokens of " + std::to_string(P) + " pixels, got " +
                                    tokens.shape_str());
    }
    Tensor visible = tokens;
    for (size_t r = 0; r < mask.size(); ++r)
        if (mask[r]) std::fill_n(visible.data.begin() + ptrdiff_t(r * size_t(P)), P, 0.0);
    Var e = relu(add(dense(tape.constant(std::move(visible)), v.at("embed.w"), v.at("embed.b")), v.at("pos")));
    Var mixed = transpose2d(relu(dense(transpose2d(e), v.at("mix_tokens.w"), v.at("mix_tokens.b"))));
    Var h1 = add(e, mixed);
    Var h2 = add(h1, relu(dense(h1, v.at("mix_channels.w"), v.at("mix_channels.b"))));
    return {dense(h2, v.at("head.w"), v.at("head.b")), h2};
}

double mae_loss(const MaeModel &model, const SliceSequence &seq, const std::vector<uint8_t> &mask) {
    Tape tape;
    const auto vars = bind_params(tape, model.params);
    const Tensor tok = patchify(seq, model.config.patch);
    const auto out = mae_forward(tape, vars, model.config, tok, mask);
    return masked_row_mse(out.reconstruction, tape.constant(tok), mask).value().item();
}

std::vector<double> mae_features(const MaeModel &model, const SliceSequence &seq) {
    Tape tape;
    const auto vars = bind_params(tape, model.params);
    const Tensor tok = patchify(seq, model.config.patch);
    const auto out = mae_forward(tape, vars, model.config, tok, std::vector<uint8_t>(size_t(model.config.tokens()), 0));
    const auto &h = out.hidden.value();
    const auto T = size_t(h.shape[0]), E = size_t(h.shape[1]);
    std::vector<double> f(E, 0.0);
    for (size_t r = 0; r < T; ++r)
        for (size_t c = 0; c < E; ++c) f[c] += h.data[r * E + c];
    for (auto &x : f) x /= double(T);
    return f;
}

MaePretrainResult pretrain_mae(const std::vector<SliceSequence> &sequences, const MaeConfig &cfg, const MaeTrainConfig &train) {
    cfg.validate();
    if (train.epochs < 1) throw std::invalid_argument("pretrain_mae: epochs must be >= 1");
    if (!(train.lr > 0.0)) throw std::invalid_argument("pretrain_mae: lr must be positive");
    if (sequences.empty()) throw std::invalid_argument("pretrain_mae: no sequences");
    for (const auto &s : sequences) {
        validate(s);
        if (s.width != cfg.width || s.height != cfg.height || s.n_steps() != cfg.n_steps) {
            throw std::invalid_argument("pretrain_mae: sequence shape does not match the model");
        }
    }
    MaePretrainResult res{init_mae(cfg), {}, {}};
    if (std::lround(cfg.mask_ratio * double(cfg.tokens())) == 0) {
        res.advisories.push_back("mask_ratio " + std::to_string(cfg.mask_ratio) + " masks no tokens; the loss is 0 and pretraining was skipped");
        return res;
    }
    std::mt19937_64 rng(train.seed);
    ParamAdam adam({train.lr}, res.model.params);
    std::vector<Tensor> tokens;
    for (const auto &s : sequences) tokens.push_back(patchify(s, cfg.patch));
    std::vector<size_t> order(sequences.size());
    std::iota(order.begin(), order.end(), size_t{0});
    for (int epoch = 0; epoch < train.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double acc = 0.0;
        for (size_t idx : order) {
            const auto mask = draw_token_mask(size_t(cfg.tokens()), cfg.mask_ratio, rng);
            Tape tape;
            const auto vars = bind_params(tape, res.model.params);
            const auto out = mae_forward(tape, vars, cfg, tokens[idx], mask);
            Var loss = masked_row_mse(out.reconstruction, tape.constant(tokens[idx]), mask);
            const double l = loss.value().item();
            if (!std::isfinite(l)) throw std::runtime_error("pretrain_mae: loss diverged at epoch " + std::to_string(epoch + 1));
            acc += l;
            tape.backward(loss);
            adam.step(res.model.params, collect_grads(tape, vars));
        }
        res.epoch_loss.push_back(acc / double(order.size()));
    }
    res.model.trained = true;
    return res;
}

} // namespace lamotion
