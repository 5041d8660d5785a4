#pragma once
#include <cstdint>
#include <optional>
#include <vector>

#include "metacl/acgan.hpp"
#include "metacl/codec.hpp"
#include "metacl/graph.hpp"
#include "metacl/optim.hpp"
#include "metacl/rng.hpp"

namespace metacl {

// One-hot task identity over a fixed maximum task count.
struct TaskDescriptor {
    int64_t task_id = 0;
    int64_t dim = 1;

    Tensor one_hot() const;  // (dim)
};

struct LatentPosterior {
    Tensor mu;       // (latent)
    Tensor log_var;  // (latent)
};

struct TaskPrior {
    Tensor mu;       // (latent)
    Tensor log_var;  // (latent); variances live in log space for positivity
};

struct HyperDims {
    int64_t chunk_size = 250;
    int64_t latent = 10;
    int64_t hidden = 30;
    int64_t chunk_embed = 8;
    int64_t task_dim = 1;
    int64_t num_chunks = 1;

    int64_t enc_in() const { return chunk_size + task_dim + chunk_embed; }
    int64_t dec_in() const { return latent + task_dim + chunk_embed; }
};

// VAE over weight chunks: encoder q(z|chunk,t), mirrored decoder p(chunk|z,t),
// linear-in-t Gaussian priors, and a learned chunk-embedding table.
struct HyperParams {
    HyperDims dims;
    ParamSet params;
};

HyperParams make_hyper_params(const HyperDims& dims);
// Small uniform (+-0.05) init; the prior variance map starts at zero so every
// task prior begins as a unit Gaussian.
HyperParams init_hyper_params(const HyperDims& dims, RngStream& rng);

// ---- spec-level operations --------------------------------------------------

TaskPrior prior_of(const TaskDescriptor& t, const HyperParams& hyper);
LatentPosterior encode(const std::vector<double>& chunk, const TaskDescriptor& t,
                       int64_t chunk_id, const HyperParams& hyper);
// z = mu + exp(log_var / 2) * eps
Tensor reparameterize(const LatentPosterior& post, const Tensor& eps);
std::vector<double> decode(const Tensor& z, const Tensor& t_cond, int64_t chunk_id,
                           const HyperParams& hyper);
// Closed-form KL(q || p) for diagonal Gaussians; always >= 0.
double kl_gaussians(const LatentPosterior& q, const TaskPrior& p);
// Single-sample ELBO: -KL(q||p(z|t)) - 0.5*||chunk - decode(z)||^2.
double elbo(const std::vector<double>& chunk, const TaskDescriptor& t, int64_t chunk_id,
            const HyperParams& hyper, const Tensor& eps);

// ---- graph builders (shared by training and the plain ops above) -----------

struct HyperLeaves {
    LeafMap map;
};

// grad_scope: "" trains everything, "h.enc|h.dec" restricts gradients to the
// encoder and decoder (the consolidation contract).
HyperLeaves add_hyper_leaves(Graph& g, const HyperParams& hyper, bool encdec_only);

struct ElboNodes {
    NodeId elbo;
    NodeId kl;
    NodeId recon;  // -0.5 * squared error
    NodeId mu_q, log_var_q;
};

// When `fixed_prior` is set it enters the graph as constants (replay against a
// stored snapshot); otherwise the prior comes from the trainable maps.
ElboNodes elbo_nodes(Graph& g, const HyperParams& hyper, const HyperLeaves& leaves,
                     const std::vector<double>& chunk, const Tensor& t_cond, int64_t chunk_id,
                     const Tensor& eps, const std::optional<TaskPrior>& fixed_prior);

// ---- training ---------------------------------------------------------------

struct HyperTrainConfig {
    int64_t epochs = 5;
    double adadelta_lr = 0.005;
    double adadelta_rho = 0.9;
    double adadelta_eps = 1e-6;
    int64_t pseudo_models = 5;  // P, decodes per task in a consolidation pass
};

struct HyperTrainLog {
    double initial_recon_mse = 0.0;
    double final_recon_mse = 0.0;
    double initial_kl = 0.0;
    double final_kl = 0.0;
};

// Splits every model into chunks; models must flatten to identical manifests.
std::vector<ChunkSet> chunks_of_models(const std::vector<ModelParams>& models,
                                       int64_t chunk_size);

class PriorStore;  // consolidation.hpp

// Trains the hypernetwork on the chunks of the given base models (batch size
// 1, Adadelta). If `replay_store` is non-null and non-empty, one consolidation
// pass over its stored tasks runs after each epoch.
HyperTrainLog train_hypernet(const std::vector<ModelParams>& models, const TaskDescriptor& t,
                             HyperParams& hyper, const HyperTrainConfig& cfg, RngStream rng,
                             const PriorStore* replay_store = nullptr);

// Draws one z from the prior and decodes every chunk into a full model.
ModelParams sample_one_model(const TaskPrior& prior, const Tensor& t_cond,
                             const HyperParams& hyper, const std::vector<ManifestEntry>& manifest,
                             RngStream& rng);
std::vector<ModelParams> sample_models(const TaskPrior& prior, const Tensor& t_cond,
                                       const HyperParams& hyper,
                                       const std::vector<ManifestEntry>& manifest, int64_t count,
                                       RngStream& rng);

// Mean reconstruction error and KL of a chunk set under the current
// hypernetwork, evaluated at the posterior mean (no sampling).
std::pair<double, double> hyper_fit_metrics(const std::vector<ChunkSet>& model_chunks,
                                            const TaskDescriptor& t, const HyperParams& hyper);

}  // namespace metacl
