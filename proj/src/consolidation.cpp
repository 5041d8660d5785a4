#include "metacl/consolidation.hpp"

#include <cmath>

#include "metacl/errors.hpp"

namespace metacl {

void PriorStore::record(int64_t task_id, TaskPrior prior) {
    for (const auto& [id, p] : entries_) {
        if (id == task_id) {
            throw ContractError("prior store: task " + std::to_string(task_id) +
                                " already recorded");
        }
    }
    if (!entries_.empty() && task_id != entries_.back().first + 1) {
        throw ContractError("prior store: task " + std::to_string(task_id) +
                            " recorded out of arrival order");
    }
    entries_.emplace_back(task_id, std::move(prior));
}

const TaskPrior& PriorStore::at(int64_t task_id) const {
    for (const auto& [id, p] : entries_) {
        if (id == task_id) return p;
    }
    throw ContractError("prior store: no prior for task " + std::to_string(task_id));
}

void record_prior(PriorStore& store, int64_t task_id, const HyperParams& hyper) {
    TaskDescriptor t{task_id, hyper.dims.task_dim};
    store.record(task_id, prior_of(t, hyper));
}

TaskPrior aggregate_priors(const PriorStore& store) {
    if (store.size() == 0) throw ContractError("aggregate_priors: empty store");
    int64_t d = store.entries().front().second.mu.numel();
    Tensor mu = Tensor::zeros({d});
    Tensor var = Tensor::zeros({d});
    for (const auto& [id, p] : store.entries()) {
        for (int64_t j = 0; j < d; ++j) {
            mu[j] += p.mu[j];
            var[j] += std::exp(p.log_var[j]);
        }
    }
    double k = double(store.size());
    TaskPrior out;
    out.mu = Tensor::zeros({d});
    out.log_var = Tensor::zeros({d});
    for (int64_t j = 0; j < d; ++j) {
        out.mu[j] = mu[j] / k;
        out.log_var[j] = std::log(var[j] / k);
    }
    return out;
}

ConsolidationStats consolidation_pass(HyperParams& hyper, const PriorStore& store,
                                      const HyperTrainConfig& cfg, RngStream rng,
                                      OptimizerState* opt) {
    if (store.size() == 0) throw ContractError("consolidation: empty prior store");
    ConsolidationStats stats;
    OptimizerState local =
        OptimizerState::adadelta(cfg.adadelta_lr, cfg.adadelta_rho, cfg.adadelta_eps);
    OptimizerState& optimizer = opt != nullptr ? *opt : local;

    for (const auto& [task_id, prior] : store.entries()) {
        stats.visited.push_back(task_id);
        RngStream task_rng = rng.split(uint64_t(task_id));
        if (cfg.pseudo_models == 0) {
            stats.decodes_per_task.push_back(0);
            continue;
        }

        // Step 1a: one z per task from the stored prior.
        Tensor z = Tensor::zeros({hyper.dims.latent});
        for (int64_t i = 0; i < z.numel(); ++i) {
            z[i] = prior.mu[i] + std::exp(0.5 * prior.log_var[i]) * task_rng.normal();
        }
        Tensor t_cond = TaskDescriptor{task_id, hyper.dims.task_dim}.one_hot();

        // Step 1b: decode the pseudo-model; its chunks become fixed
        // reconstruction targets (no gradient through the sampling pass).
        std::vector<std::vector<double>> target_chunks;
        for (int64_t c = 0; c < hyper.dims.num_chunks; ++c) {
            target_chunks.push_back(decode(z, t_cond, c, hyper));
        }
        stats.decodes_per_task.push_back(cfg.pseudo_models);

        // Steps 1c-1d: loss summed over P estimates of the chunk ELBOs, one
        // encoder/decoder update per task.
        std::vector<Tensor> grad_acc;
        std::vector<Tensor*> ptrs;
        for (auto& e : hyper.params.entries) {
            if (e.name.rfind("h.enc.", 0) == 0 || e.name.rfind("h.dec.", 0) == 0) {
                ptrs.push_back(&e.value);
                grad_acc.push_back(Tensor::zeros(e.value.shape));
            }
        }
        for (int64_t i = 0; i < cfg.pseudo_models; ++i) {
            for (int64_t c = 0; c < hyper.dims.num_chunks; ++c) {
                Tensor eps =
                    Tensor::from({hyper.dims.latent}, task_rng.normal_vec(hyper.dims.latent));
                Graph g;
                HyperLeaves leaves = add_hyper_leaves(g, hyper, /*encdec_only=*/true);
                ElboNodes nodes = elbo_nodes(g, hyper, leaves, target_chunks[size_t(c)], t_cond, c,
                                             eps, prior);
                GradMap gm = g.gradients(g.scalar_mul(nodes.elbo, -1.0));
                size_t slot = 0;
                for (auto& e : hyper.params.entries) {
                    if (e.name.rfind("h.enc.", 0) == 0 || e.name.rfind("h.dec.", 0) == 0) {
                        Tensor gt = g.grad_or_zero(gm, leaves.map.at(e.name));
                        for (int64_t k = 0; k < gt.numel(); ++k) grad_acc[slot][k] += gt[k];
                        ++slot;
                    }
                }
            }
        }
        optimizer_step(ptrs, grad_acc, optimizer);
    }
    return stats;
}

ConsolidationStats consolidate(HyperParams& hyper, const PriorStore& store,
                               int64_t current_task_k, const HyperTrainConfig& cfg,
                               RngStream rng) {
    if (store.size() == 0) throw ContractError("consolidate: empty prior store");
    if (store.entries().back().first != current_task_k) {
        throw ContractError("consolidate: store does not cover tasks up to " +
                            std::to_string(current_task_k));
    }
    return consolidation_pass(hyper, store, cfg, rng, nullptr);
}

}  // namespace metacl
