#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace winq {

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

struct OptimizerState {
    std::vector<double> m;  // first moment
    std::vector<double> v;  // second moment
    std::int64_t step = 0;

    explicit OptimizerState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
    void reset(std::size_t n) {
        m.assign(n, 0.0);
        v.assign(n, 0.0);
        step = 0;
    }
};

// One decoupled-weight-decay Adam step, in place. Coordinates with
// decay_mask[i] == 0 are exempt from weight decay (mask may be empty for
// "decay everything"). Throws NumericalError on a non-finite gradient,
// naming the step index.
void adamw_step(OptimizerState& state, std::span<double> params, std::span<const double> grad,
                const AdamWConfig& config, std::span<const unsigned char> decay_mask = {});

}  // namespace winq
