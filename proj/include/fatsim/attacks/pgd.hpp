#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fatsim/autodiff/graph.hpp"
#include "fatsim/autodiff/ops.hpp"
#include "fatsim/data/dataset.hpp"
#include "fatsim/nn/model.hpp"
#include "fatsim/parallel.hpp"
#include "fatsim/rng.hpp"

namespace fatsim::attacks {

/// Untargeted L-infinity PGD settings. Pixel units, inputs live in [0,1].
struct PgdConfig {
    double epsilon = 0.3;
    double step_size = 0.01;
    int steps = 40;
    int restarts = 1;
    bool random_init = true;
    // When set, the attack loss is taken on logits / T.
    std::optional<double> logit_scale_T;

    void validate() const {
        if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw ConfigError("pgd: epsilon must be >= 0");
        if (!(step_size > 0.0)) throw ConfigError("pgd: step_size must be > 0");
        if (steps < 1) throw ConfigError("pgd: steps must be >= 1");
        if (restarts < 1) throw ConfigError("pgd: restarts must be >= 1");
        if (logit_scale_T && !(*logit_scale_T > 0.0)) throw ConfigError("pgd: logit_scale_T must be > 0");
    }
};

/// Per-sample cross-entropy of softmax(logits / T), in double.
template <typename S>
std::vector<double> per_sample_loss(const ad::BasicTensor<S>& logits, std::span<const int> labels, double temperature = 1.0) {
    const std::size_t n = logits.dim(0), c = logits.dim(1);
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const S* row = logits.data.data() + i * c;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, static_cast<double>(row[j]) / temperature);
        double total = 0.0;
        for (std::size_t j = 0; j < c; ++j) total += std::exp(static_cast<double>(row[j]) / temperature - mx);
        out[i] = mx + std::log(total) - static_cast<double>(row[labels[i]]) / temperature;
    }
    return out;
}

/// Crafts x_adv with ||x_adv - x||_inf <= eps and x_adv in [0,1].
/// Each step: x <- clip01(project_eps(x + step * sign(grad_x loss))). With several
/// restarts, each sample keeps the first restart that fools the model, otherwise
/// the one with the largest final attack loss.
template <typename S>
ad::BasicTensor<S> pgd_attack(const nn::Architecture& arch, const nn::BasicModelParams<S>& params,
                              const ad::BasicTensor<S>& x, std::span<const int> y, const PgdConfig& cfg, Rng& rng) {
    cfg.validate();
    if (x.rank() < 2 || x.dim(0) != y.size())
        throw ShapeError("pgd_attack: " + std::to_string(y.size()) + " labels for batch " + ad::shape_str(x.shape));
    for (S v : x.data)
        if (!(v >= S(0) && v <= S(1))) throw ConfigError("pgd_attack: inputs must lie in [0,1]");

    const double temperature = cfg.logit_scale_T.value_or(1.0);
    const S eps = static_cast<S>(cfg.epsilon);
    const S step = static_cast<S>(cfg.step_size);
    const std::size_t n = x.dim(0), per = x.numel() / n;

    ad::BasicTensor<S> best = x;
    std::vector<char> best_fooled(n, 0);
    std::vector<double> best_loss(n, -std::numeric_limits<double>::infinity());

    for (int r = 0; r < cfg.restarts; ++r) {
        ad::BasicTensor<S> xa = x;
        if (cfg.random_init) {
            for (std::size_t i = 0; i < xa.numel(); ++i) {
                const S u = static_cast<S>(2.0f * uniform01(rng) - 1.0f);
                xa.data[i] = std::clamp(x.data[i] + eps * u, S(0), S(1));
            }
        }
        for (int s = 0; s < cfg.steps; ++s) {
            ad::Graph<S> g;
            const auto vars = nn::bind_params(g, params, false);
            auto xv = g.leaf(xa, true);
            auto loss = ad::cross_entropy(nn::forward(arch, vars, xv), y, temperature, ad::Reduction::sum);
            g.backward(loss);
            const auto& grad = xv.grad();
            for (std::size_t i = 0; i < xa.numel(); ++i) {
                const S gi = grad.data[i];
                const S sign = gi > S(0) ? S(1) : (gi < S(0) ? S(-1) : S(0));
                const S moved = std::clamp(xa.data[i] + step * sign, x.data[i] - eps, x.data[i] + eps);
                xa.data[i] = std::clamp(moved, S(0), S(1));
            }
        }
        if (cfg.restarts == 1) return xa;

        const auto logits = nn::predict(arch, params, xa);
        const auto pred = nn::argmax_rows(logits);
        const auto loss = per_sample_loss(logits, y, temperature);
        for (std::size_t i = 0; i < n; ++i) {
            const bool fooled = pred[i] != y[i];
            const bool take = r == 0 || (!best_fooled[i] && (fooled || loss[i] > best_loss[i]));
            if (!take) continue;
            best_fooled[i] = fooled;
            best_loss[i] = loss[i];
            std::copy_n(xa.data.begin() + static_cast<std::ptrdiff_t>(i * per), per,
                        best.data.begin() + static_cast<std::ptrdiff_t>(i * per));
        }
    }
    return best;
}

/// PGD whose loss is taken on logits / T; sidesteps saturated (temperature-inflated) softmax gradients.
template <typename S>
ad::BasicTensor<S> logit_scaled_pgd(const nn::Architecture& arch, const nn::BasicModelParams<S>& params,
                                    const ad::BasicTensor<S>& x, std::span<const int> y, PgdConfig cfg, double temperature,
                                    Rng& rng) {
    if (!(temperature > 0.0)) throw ConfigError("logit_scaled_pgd: temperature must be > 0");
    cfg.logit_scale_T = temperature;
    return pgd_attack(arch, params, x, y, cfg, rng);
}

template <typename S>
std::size_t count_correct(const ad::BasicTensor<S>& logits, std::span<const int> y) {
    const auto pred = nn::argmax_rows(logits);
    std::size_t ok = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) ok += pred[i] == y[i];
    return ok;
}

struct Robustness {
    double clean_acc = 0.0;
    double adv_acc = 0.0;
};

struct EvalOptions {
    std::size_t batch_size = 250;
    int workers = 1;
};

/// Clean and adversarial accuracy of `target` on `ds`, with adversarial inputs
/// crafted on `surrogate` (pass the same model twice for a white-box evaluation).
/// Batch b uses the seed derive_seed({seed, b}), so results do not depend on `workers`.
inline Robustness evaluate_transfer(const nn::Architecture& surrogate_arch, const nn::ModelParams& surrogate,
                                    const nn::Architecture& target_arch, const nn::ModelParams& target,
                                    const data::Dataset& ds, const PgdConfig& cfg, std::uint64_t seed,
                                    EvalOptions opts = {}) {
    if (ds.size() == 0) throw DatasetError("evaluate: empty test set");
    if (surrogate_arch.input_shape != target_arch.input_shape || surrogate_arch.classes != target_arch.classes)
        throw ShapeError("transfer: surrogate and target disagree on input/output shapes");
    cfg.validate();
    const std::size_t bs = std::max<std::size_t>(1, opts.batch_size);
    const std::size_t batches = (ds.size() + bs - 1) / bs;
    std::vector<std::size_t> clean(batches), adv(batches);
    parallel_for(batches, opts.workers, [&](std::size_t b) {
        std::vector<std::size_t> idx;
        for (std::size_t i = b * bs; i < std::min(ds.size(), (b + 1) * bs); ++i) idx.push_back(i);
        const auto batch = data::gather(ds, idx);
        Rng rng(derive_seed({seed, b}));
        clean[b] = count_correct(nn::predict(target_arch, target, batch.x), batch.y);
        const auto xa = pgd_attack(surrogate_arch, surrogate, batch.x, batch.y, cfg, rng);
        adv[b] = count_correct(nn::predict(target_arch, target, xa), batch.y);
    });
    Robustness r;
    for (std::size_t b = 0; b < batches; ++b) {
        r.clean_acc += static_cast<double>(clean[b]);
        r.adv_acc += static_cast<double>(adv[b]);
    }
    r.clean_acc /= static_cast<double>(ds.size());
    r.adv_acc /= static_cast<double>(ds.size());
    return r;
}

/// White-box clean and adversarial accuracy.
inline Robustness evaluate_robustness(const nn::Architecture& arch, const nn::ModelParams& params, const data::Dataset& ds,
                                      const PgdConfig& cfg, std::uint64_t seed, EvalOptions opts = {}) {
    return evaluate_transfer(arch, params, arch, params, ds, cfg, seed, opts);
}

/// Fraction of `ds` the target still classifies correctly under PGD crafted on the surrogate.
inline double transfer_attack(const nn::Architecture& surrogate_arch, const nn::ModelParams& surrogate,
                              const nn::Architecture& target_arch, const nn::ModelParams& target, const data::Dataset& ds,
                              const PgdConfig& cfg, std::uint64_t seed, EvalOptions opts = {}) {
    return evaluate_transfer(surrogate_arch, surrogate, target_arch, target, ds, cfg, seed, opts).adv_acc;
}

/// Clean accuracy only.
inline double accuracy(const nn::Architecture& arch, const nn::ModelParams& params, const data::Dataset& ds,
                       std::size_t batch_size = 500) {
    if (ds.size() == 0) throw DatasetError("accuracy: empty dataset");
    std::size_t ok = 0;
    for (std::size_t start = 0; start < ds.size(); start += batch_size) {
        std::vector<std::size_t> idx;
        for (std::size_t i = start; i < std::min(ds.size(), start + batch_size); ++i) idx.push_back(i);
        const auto batch = data::gather(ds, idx);
        ok += count_correct(nn::predict(arch, params, batch.x), batch.y);
    }
    return static_cast<double>(ok) / static_cast<double>(ds.size());
}

}  // namespace fatsim::attacks
