#pragma once
#include <cmath>
#include <functional>
#include <vector>

#include "metacl/graph.hpp"
#include "metacl/rng.hpp"
#include "metacl/tensor.hpp"

namespace metacl::testutil {

// Central finite difference of a scalar function at x, one coordinate at a time.
inline Tensor finite_diff(const std::function<double(const Tensor&)>& f, const Tensor& x,
                          double h = 1e-5) {
    Tensor g = Tensor::zeros(x.shape);
    Tensor probe = x;
    for (int64_t i = 0; i < x.numel(); ++i) {
        probe[i] = x[i] + h;
        double up = f(probe);
        probe[i] = x[i] - h;
        double down = f(probe);
        probe[i] = x[i];
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

// Largest relative error between analytic and finite-difference gradients.
inline double max_rel_error(const Tensor& analytic, const Tensor& fd) {
    double worst = 0.0;
    for (int64_t i = 0; i < analytic.numel(); ++i) {
        double denom = std::max({std::fabs(analytic[i]), std::fabs(fd[i]), 1e-3});
        worst = std::max(worst, std::fabs(analytic[i] - fd[i]) / denom);
    }
    return worst;
}

// Checks the gradient of `build` (a scalar-node graph builder over named leaf
// tensors) against finite differences for every leaf. Returns the worst
// relative error across all leaves.
struct GradCheck {
    // Builds the graph from leaf tensors and returns the scalar node.
    using Builder = std::function<NodeId(Graph&, const std::vector<NodeId>&)>;

    static double run(const Builder& build, std::vector<Tensor> leaves, double h = 1e-5) {
        Graph g;
        std::vector<NodeId> ids;
        for (auto& t : leaves) {
            Tensor copy = t;
            copy.requires_grad = true;
            ids.push_back(g.leaf(copy));
        }
        NodeId top = build(g, ids);
        GradMap grads = g.gradients(top);

        double worst = 0.0;
        for (size_t li = 0; li < leaves.size(); ++li) {
            auto f = [&](const Tensor& probe) {
                Graph g2;
                std::vector<NodeId> ids2;
                for (size_t k = 0; k < leaves.size(); ++k) {
                    ids2.push_back(g2.constant(k == li ? probe : leaves[k]));
                }
                return g2.value(build(g2, ids2)).item();
            };
            Tensor fd = finite_diff(f, leaves[li], h);
            worst = std::max(worst, max_rel_error(g.grad_or_zero(grads, ids[li]), fd));
        }
        return worst;
    }
};

inline Tensor random_tensor(Shape s, RngStream& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t = Tensor::zeros(std::move(s));
    for (auto& v : t.data) v = lo + (hi - lo) * rng.uniform();
    return t;
}

// Random values bounded away from zero (for leaky-relu kinks) or from clamp
// edges, so finite differences stay valid.
inline Tensor random_tensor_away_from(Shape s, RngStream& rng, double lo, double hi,
                                      double margin) {
    Tensor t = Tensor::zeros(std::move(s));
    for (auto& v : t.data) {
        do {
            v = lo + (hi - lo) * rng.uniform();
        } while (std::fabs(v) < margin);
    }
    return t;
}

}  // namespace metacl::testutil
