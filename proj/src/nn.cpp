// nn.cpp - Initialisers, Adam, gradient checking.

#include "lamotion/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace lamotion::ad {

Tensor glorot_uniform(std::vector<int64_t> shape, int64_t fan_in, int64_t fan_out, std::mt19937_64 &rng) {
    Tensor t(std::move(shape));
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (auto &v : t.data) v = dist(rng);
    return t;
}

void AdamState::direction(std::span<const double> grads, std::span<double> dir) {
    if (grads.size() != m_.size() || dir.size() != m_.size()) {
        throw std::invalid_argument("AdamState: parameter/gradient size mismatch");
    }
    for (double g : grads) {
        if (!std::isfinite(g)) throw std::runtime_error("AdamState: non-finite gradient");
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t i = 0; i < grads.size(); ++i) {
        m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grads[i];
        v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grads[i] * grads[i];
        dir[i] = (m_[i] / bc1) / (std::sqrt(v_[i] / bc2) + cfg_.eps);
    }
}

void AdamState::step(std::span<double> params, std::span<const double> grads) {
    if (params.size() != m_.size()) throw std::invalid_argument("AdamState::step: parameter/gradient size mismatch");
    std::vector<double> dir(params.size());
    direction(grads, dir);
    for (size_t i = 0; i < params.size(); ++i) params[i] -= cfg_.lr * dir[i];
}

ParamAdam::ParamAdam(AdamConfig cfg, const ParamSet &params) : cfg_(cfg) {
    for (const auto &[name, t] : params) states_.emplace(name, AdamState(cfg, t.size()));
}

void ParamAdam::step(ParamSet &params, const ParamSet &grads) {
    // Validate everything first so a bad gradient leaves all parameters untouched.
    for (const auto &[name, t] : params) {
        const auto it = grads.find(name);
        if (it == grads.end()) throw std::invalid_argument("ParamAdam::step: missing gradient for " + name);
        if (it->second.shape != t.shape) throw std::invalid_argument("ParamAdam::step: gradient shape mismatch for " + name);
        for (double g : it->second.data) {
            if (!std::isfinite(g)) throw std::runtime_error("ParamAdam::step: non-finite gradient for " + name);
        }
    }
    for (auto &[name, t] : params) states_.at(name).step(t.data, grads.at(name).data);
    ++t_;
}

bool GradCheckReport::pass() const {
    return std::all_of(entries.begin(), entries.end(), [](const GradCheckEntry &e) { return e.pass; });
}

double GradCheckReport::max_rel_error() const {
    double m = 0.0;
    for (const auto &e : entries) m = std::max(m, e.max_rel_error);
    return m;
}

GradCheckReport gradient_check(const ScalarGraph &graph, const ParamSet &params, const GradCheckOptions &opts) {
    GradCheckReport report;
    report.tolerance = opts.tolerance;

    Tape base;
    const auto vars = bind_params(base, params);
    const Var out = graph(base, vars);
    const uint64_t base_sig = base.branch_signature();
    base.backward(out);
    const ParamSet analytic = collect_grads(base, vars);

    auto evaluate = [&](const ParamSet &p, uint64_t &sig) {
        Tape t;
        const auto v = bind_params(t, p);
        const double f = graph(t, v).value().item();
        sig = t.branch_signature();
        return f;
    };

    ParamSet work = params;
    for (const auto &[name, t] : params) {
        GradCheckEntry e;
        e.name = name;
        const auto &a = analytic.at(name).data;
        double scale = 0.0;
        for (double v : a) scale = std::max(scale, std::abs(v));
        const double floor = std::max(1e-3 * scale, 1e-9);
        const size_t n = t.size();
        const size_t stride = (opts.max_coords == 0 || n <= opts.max_coords) ? 1 : (n + opts.max_coords - 1) / opts.max_coords;
        auto &w = work.at(name).data;
        for (size_t i = 0; i < n; i += stride) {
            const double orig = w[i];
            uint64_t sp = 0, sm = 0;
            w[i] = orig + opts.step;
            const double fp = evaluate(work, sp);
            w[i] = orig - opts.step;
            const double fm = evaluate(work, sm);
            w[i] = orig;
            if (sp != base_sig || sm != base_sig) {
                ++e.skipped;
                continue;
            }
            const double num = (fp - fm) / (2.0 * opts.step);
            const double denom = std::max({std::abs(a[i]), std::abs(num), floor});
            e.max_rel_error = std::max(e.max_rel_error, std::abs(a[i] - num) / denom);
            ++e.checked;
        }
        e.pass = e.max_rel_error < opts.tolerance;
        report.entries.push_back(e);
    }
    return report;
}

} // namespace lamotion::ad
