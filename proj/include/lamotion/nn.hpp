// nn.hpp - Parameter initialisation, the Adam optimiser and finite-difference gradient checking.
#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lamotion/autodiff.hpp"

namespace lamotion::ad {

/// Uniform in +-sqrt(6 / (fan_in + fan_out)).
Tensor glorot_uniform(std::vector<int64_t> shape, int64_t fan_in, int64_t fan_out, std::mt19937_64 &rng);

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam with bias correction over a flat parameter vector.
class AdamState {
  public:
    AdamState() = default;
    AdamState(AdamConfig cfg, size_t n) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {}

    /// Throws std::runtime_error on a non-finite gradient; parameters are left untouched then.
    void step(std::span<double> params, std::span<const double> grads);
    /// Updates the moments like step() but returns the bias-corrected direction m/(sqrt(v)+eps)
    /// instead of applying it; the caller applies params -= lr * dir at a step length of its choosing.
    void direction(std::span<const double> grads, std::span<double> dir);

    int64_t step_count() const { return t_; }
    const AdamConfig &config() const { return cfg_; }
    void set_lr(double lr) { cfg_.lr = lr; }

  private:
    AdamConfig cfg_;
    std::vector<double> m_, v_;
    int64_t t_ = 0;
};

/// Adam over a named ParamSet; one moment buffer per parameter, matched by name.
class ParamAdam {
  public:
    ParamAdam() = default;
    ParamAdam(AdamConfig cfg, const ParamSet &params);
    void step(ParamSet &params, const ParamSet &grads);
    int64_t step_count() const { return t_; }

  private:
    AdamConfig cfg_;
    std::map<std::string, AdamState> states_;
    int64_t t_ = 0;
};

// ---- gradient checking ------------------------------------------------------------------------

using ScalarGraph = std::function<Var(Tape &, const ParamVars &)>;

struct GradCheckEntry {
    std::string name;
    double max_rel_error = 0.0;
    size_t checked = 0;
    size_t skipped = 0;  // coordinates whose +-h perturbation crossed a kink
    bool pass = false;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double tolerance = 0.0;
    bool pass() const;
    double max_rel_error() const;
};

struct GradCheckOptions {
    double tolerance = 1e-5;
    double step = 1e-6;
    /// Coordinates per parameter to probe (evenly strided); 0 = all.
    size_t max_coords = 0;
};

/// Compares backward() with central differences for every parameter in `params`.
/// The relative error of a coordinate is |a - n| / max(|a|, |n|, 1e-3 * max_j |a_j|, 1e-9),
/// i.e. small entries are judged against the tensor's gradient scale.
GradCheckReport gradient_check(const ScalarGraph &graph, const ParamSet &params, const GradCheckOptions &opts = {});

} // namespace lamotion::ad
