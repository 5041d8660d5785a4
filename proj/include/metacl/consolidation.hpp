#pragma once
#include <cstdint>
#include <vector>

#include "metacl/hypernet.hpp"
#include "metacl/rng.hpp"

namespace metacl {

// Ordered snapshots of the task-specific priors, taken at the end of each
// task's hypernetwork training. Snapshots are copies: later training never
// alters stored values.
class PriorStore {
public:
    void record(int64_t task_id, TaskPrior prior);
    const TaskPrior& at(int64_t task_id) const;
    int64_t size() const { return int64_t(entries_.size()); }
    const std::vector<std::pair<int64_t, TaskPrior>>& entries() const { return entries_; }

private:
    std::vector<std::pair<int64_t, TaskPrior>> entries_;
};

// Snapshots prior_of(t_task) into the store; task_id must be the next unseen
// task.
void record_prior(PriorStore& store, int64_t task_id, const HyperParams& hyper);

// Mean of the stored means; covariances averaged in variance space.
TaskPrior aggregate_priors(const PriorStore& store);

struct ConsolidationStats {
    std::vector<int64_t> visited;           // task ids, in replay order
    std::vector<int64_t> decodes_per_task;  // pseudo-model decodes per visit
};

// One replay pass over every stored task: sample z from the stored prior,
// decode the pseudo-model, and take one encoder/decoder optimization step per
// task on the summed ELBO loss over `cfg.pseudo_models` estimates.
ConsolidationStats consolidation_pass(HyperParams& hyper, const PriorStore& store,
                                      const HyperTrainConfig& cfg, RngStream rng,
                                      OptimizerState* opt);

// The meta-consolidation procedure: replays tasks 1..k from the store to
// de-bias the hypernetwork after training on task k. The store must cover
// exactly the tasks seen so far.
ConsolidationStats consolidate(HyperParams& hyper, const PriorStore& store,
                               int64_t current_task_k, const HyperTrainConfig& cfg,
                               RngStream rng);

}  // namespace metacl
