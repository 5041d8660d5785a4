#pragma once
#include <cstdint>
#include <vector>

#include "metacl/tensor.hpp"

namespace metacl {

enum class OptKind : uint8_t { Sgd, Adam, Adadelta };

// Per-parameter-list optimizer state. Moment accumulators are allocated
// lazily on the first step and mirror the parameter shapes exactly.
struct OptimizerState {
    OptKind kind = OptKind::Sgd;
    double lr = 0.01;
    double beta1 = 0.9, beta2 = 0.999;  // adam
    double rho = 0.9;                   // adadelta
    double eps = 1e-8;
    int64_t step_count = 0;
    std::vector<Tensor> m1;  // adam: first moment; adadelta: squared-grad average
    std::vector<Tensor> m2;  // adam: second moment; adadelta: squared-delta average

    static OptimizerState sgd(double lr);
    static OptimizerState adam(double lr, double beta1 = 0.9, double beta2 = 0.999,
                               double eps = 1e-8);
    static OptimizerState adadelta(double lr, double rho = 0.9, double eps = 1e-6);
};

// Applies one update of state.kind to every parameter, in order. Throws
// ShapeError on any params/grads/state disagreement and NumericError on
// non-finite gradients (parameters are left untouched in both cases).
void optimizer_step(std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
                    OptimizerState& state);

}  // namespace metacl
