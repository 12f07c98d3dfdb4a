#include "winq/adamw.hpp"

#include <cmath>

#include "winq/errors.hpp"

namespace winq {

void adamw_step(OptimizerState& state, std::span<double> params, std::span<const double> grad,
                const AdamWConfig& cfg, std::span<const unsigned char> decay_mask) {
    if (params.size() != grad.size() || state.m.size() != params.size() ||
        state.v.size() != params.size())
        throw ArgumentError("adamw_step: length mismatch");

    for (double g : grad)
        if (!std::isfinite(g))
            throw NumericalError("adamw_step: non-finite gradient at step " +
                                 std::to_string(state.step + 1));

    state.step += 1;
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));

    for (std::size_t i = 0; i < params.size(); ++i) {
        double g = grad[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        double mhat = state.m[i] / bc1;
        double vhat = state.v[i] / bc2;
        bool decay = decay_mask.empty() || decay_mask[i];
        if (decay) params[i] -= cfg.lr * cfg.weight_decay * params[i];
        params[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
}

}  // namespace winq
