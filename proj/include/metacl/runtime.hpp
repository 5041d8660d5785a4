#pragma once
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "metacl/acgan.hpp"
#include "metacl/bench.hpp"
#include "metacl/config.hpp"
#include "metacl/consolidation.hpp"
#include "metacl/hypernet.hpp"

namespace metacl {

// ---- exemplar buffer ---------------------------------------------------------

// Small retained subset of each task's data, used only for inference-time
// fine-tuning. Raw task data is discarded once a task finishes.
struct ExemplarBuffer {
    struct Slice {
        LabelledSet labelled;
        UnlabelledSet unlabelled;
    };
    std::vector<Slice> per_task;

    Slice joint() const;  // all tasks pooled
    bool empty() const;
};

// Class-balanced (within +-1) random labelled selection plus uniform random
// unlabelled selection. Capacities above the available counts keep everything.
ExemplarBuffer::Slice select_exemplars(const SemiTask& task, int64_t m_buf, int64_t n_buf,
                                       RngStream rng);

// ---- ensembling ----------------------------------------------------------------

// Per item, the most frequent label across models; ties resolve to the lowest
// class id. votes[model][item].
std::vector<int64_t> majority_vote(const std::vector<std::vector<int64_t>>& votes);

// Semi-ACGAN objective on the buffer contents; empty buffer is the identity.
void fine_tune(ModelParams& model, const AcganArch& arch, const ExemplarBuffer::Slice& buffer,
               const std::vector<int64_t>& fallback_classes, const InferenceConfig& cfg,
               int64_t batch_size, RngStream rng);

struct InferenceResult {
    std::vector<double> row;  // a_{k,j} for j = 1..k
    int64_t peak_models = 0;  // max simultaneously materialized ensemble members
};

// ---- MCSSL pipeline --------------------------------------------------------------

class McsslRunner {
public:
    McsslRunner(const RunConfig& cfg, RngStream init_rng);

    // Trains B base models on task k, trains + consolidates the hypernetwork,
    // records the task prior. Tasks must arrive strictly in order.
    void run_task(int64_t k, const SemiTask& task, const RngStream& task_rng);

    InferenceResult infer_task_agnostic(int64_t k, const TaskStream& stream,
                                        const ExemplarBuffer& buffer, const RngStream& rng) const;
    InferenceResult infer_task_aware(int64_t k, const TaskStream& stream,
                                     const ExemplarBuffer& buffer, const RngStream& rng) const;

    HyperParams& hyper() { return hyper_; }
    const HyperParams& hyper() const { return hyper_; }
    PriorStore& store() { return store_; }
    const PriorStore& store() const { return store_; }
    int64_t tasks_seen() const { return tasks_seen_; }
    void restore(HyperParams hyper, PriorStore store, int64_t tasks_seen);

private:
    ModelParams ensemble_member(const TaskPrior& prior, const Tensor& t_cond,
                                RngStream& rng) const;

    RunConfig cfg_;
    HyperParams hyper_;
    PriorStore store_;
    std::vector<ManifestEntry> manifest_;
    int64_t tasks_seen_ = 0;
};

// ---- baselines --------------------------------------------------------------------

// One Semi-ACGAN trained sequentially across tasks. With lambda > 0 a
// diagonal-Fisher quadratic penalty anchors D's parameters to their values
// after the previous task (the EWC adaptation).
class SequentialSslRunner {
public:
    SequentialSslRunner(const RunConfig& cfg, double ewc_lambda, RngStream init_rng);

    void run_task(int64_t k, const SemiTask& task, const RngStream& task_rng);
    InferenceResult evaluate(int64_t k, const TaskStream& stream, const ExemplarBuffer& buffer,
                             const RngStream& rng) const;

    const ModelParams& model() const { return model_; }
    const std::optional<EwcPenalty>& ewc_state() const { return ewc_; }
    int64_t tasks_seen() const { return tasks_seen_; }
    void restore(ModelParams model, std::optional<EwcPenalty> ewc, int64_t tasks_seen);

private:
    RunConfig cfg_;
    double lambda_;
    ModelParams model_;
    std::optional<EwcPenalty> ewc_;
    int64_t tasks_seen_ = 0;
};

// Convenience wrappers matching the benchmark protocol: train across the whole
// stream, evaluating after every task.
AccuracyMatrix baseline_single_ssl(const TaskStream& stream, const RunConfig& cfg);
AccuracyMatrix baseline_ewc_ssl(const TaskStream& stream, const RunConfig& cfg);
AccuracyMatrix run_mcssl(const TaskStream& stream, const RunConfig& cfg);

// ---- experiment driver ---------------------------------------------------------------

// Everything that survives between tasks: no raw task data, only the
// hypernetwork, stored priors, exemplar buffer, baseline models and matrices.
struct ExperimentState {
    RunConfig config;
    int64_t buffer_tasks = 0;
    std::map<std::string, AccuracyMatrix> matrices;
    std::map<std::string, int64_t> next_task;
};

class ExperimentDriver {
public:
    explicit ExperimentDriver(RunConfig cfg);

    // Runs every configured method over the stream, writing results.csv,
    // state.json, per-method matrix CSVs and checkpoints into out_dir.
    void run(const std::string& out_dir);
    // Continues an interrupted run from its serialized state.
    void resume(const std::string& out_dir);

    const TaskStream& stream() const { return stream_; }

private:
    void execute(const std::string& out_dir, bool resuming);
    void save_state(const std::string& out_dir) const;
    void load_state(const std::string& out_dir);
    void write_results(const std::string& out_dir) const;
    ExemplarBuffer buffer_upto(int64_t k) const;

    RunConfig cfg_;
    RngStream root_;
    TaskStream stream_;
    ExemplarBuffer buffer_;  // slices for tasks processed so far
    ExperimentState state_;
    std::optional<McsslRunner> mcssl_;
    std::optional<SequentialSslRunner> single_;
    std::optional<SequentialSslRunner> ewc_;
};

int64_t metacl_thread_cap();

}  // namespace metacl
