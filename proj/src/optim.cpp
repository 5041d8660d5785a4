#include "metacl/optim.hpp"

#include <cmath>

#include "metacl/errors.hpp"

namespace metacl {

OptimizerState OptimizerState::sgd(double lr) {
    OptimizerState s;
    s.kind = OptKind::Sgd;
    s.lr = lr;
    return s;
}

OptimizerState OptimizerState::adam(double lr, double beta1, double beta2, double eps) {
    OptimizerState s;
    s.kind = OptKind::Adam;
    s.lr = lr;
    s.beta1 = beta1;
    s.beta2 = beta2;
    s.eps = eps;
    return s;
}

OptimizerState OptimizerState::adadelta(double lr, double rho, double eps) {
    OptimizerState s;
    s.kind = OptKind::Adadelta;
    s.lr = lr;
    s.rho = rho;
    s.eps = eps;
    return s;
}

void optimizer_step(std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
                    OptimizerState& state) {
    if (params.size() != grads.size()) {
        throw ShapeError("optimizer_step: params/grads count mismatch");
    }
    for (size_t i = 0; i < params.size(); ++i) {
        if (!params[i]->same_shape(grads[i])) {
            throw ShapeError("optimizer_step: shape mismatch at parameter " + std::to_string(i));
        }
        if (!grads[i].all_finite()) {
            throw NumericError("optimizer_step: non-finite gradient at parameter " +
                               std::to_string(i) + "; step refused");
        }
    }
    bool needs_acc = state.kind != OptKind::Sgd;
    if (needs_acc && state.m1.empty()) {
        for (auto* p : params) {
            state.m1.push_back(Tensor::zeros(p->shape));
            state.m2.push_back(Tensor::zeros(p->shape));
        }
    }
    if (needs_acc && state.m1.size() != params.size()) {
        throw ShapeError("optimizer_step: accumulator count does not mirror parameters");
    }
    if (needs_acc) {
        for (size_t i = 0; i < params.size(); ++i) {
            if (!state.m1[i].same_shape(*params[i])) {
                throw ShapeError("optimizer_step: accumulator shape does not mirror parameter " +
                                 std::to_string(i));
            }
        }
    }

    state.step_count += 1;
    switch (state.kind) {
        case OptKind::Sgd: {
            for (size_t i = 0; i < params.size(); ++i) {
                Tensor& p = *params[i];
                const Tensor& g = grads[i];
                for (int64_t k = 0; k < p.numel(); ++k) p[k] -= state.lr * g[k];
            }
            break;
        }
        case OptKind::Adam: {
            double t = double(state.step_count);
            double bc1 = 1.0 - std::pow(state.beta1, t);
            double bc2 = 1.0 - std::pow(state.beta2, t);
            for (size_t i = 0; i < params.size(); ++i) {
                Tensor& p = *params[i];
                const Tensor& g = grads[i];
                Tensor& m = state.m1[i];
                Tensor& v = state.m2[i];
                for (int64_t k = 0; k < p.numel(); ++k) {
                    m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
                    v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
                    double mhat = m[k] / bc1;
                    double vhat = v[k] / bc2;
                    p[k] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
                }
            }
            break;
        }
        case OptKind::Adadelta: {
            for (size_t i = 0; i < params.size(); ++i) {
                Tensor& p = *params[i];
                const Tensor& g = grads[i];
                Tensor& sq = state.m1[i];
                Tensor& dl = state.m2[i];
                for (int64_t k = 0; k < p.numel(); ++k) {
                    sq[k] = state.rho * sq[k] + (1.0 - state.rho) * g[k] * g[k];
                    double update =
                        std::sqrt(dl[k] + state.eps) / std::sqrt(sq[k] + state.eps) * g[k];
                    p[k] -= state.lr * update;
                    dl[k] = state.rho * dl[k] + (1.0 - state.rho) * update * update;
                }
            }
            break;
        }
    }
}

}  // namespace metacl
