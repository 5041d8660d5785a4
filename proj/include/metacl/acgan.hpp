#pragma once
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "metacl/codec.hpp"
#include "metacl/data.hpp"
#include "metacl/graph.hpp"
#include "metacl/optim.hpp"
#include "metacl/rng.hpp"

namespace metacl {

// Architecture of the Semi-ACGAN base network. The generator embeds the class
// id, gates the noise with it, projects to a low-resolution feature map and
// upsamples; the discriminator is a strided conv trunk with a validity head
// (sigmoid) and an auxiliary class head (softmax).
struct AcganArch {
    int64_t image_hw = 8;
    int64_t image_channels = 1;
    int64_t num_classes = 8;  // global class count; the class head is sized for all of them
    int64_t noise_dim = 64;
    int64_t embed_dim = 64;  // must equal noise_dim (noise is gated by the embedding)
    int64_t g_base_channels = 16;
    int64_t g_filters = 16;
    int64_t d_filters1 = 16;
    int64_t d_filters2 = 32;
    int64_t upsample_scale = 4;
    double leaky_slope = 0.2;
    double bn_eps = 1e-5;
    double dropout_p = 0.25;

    int64_t g_seed_hw() const { return image_hw / upsample_scale; }
    int64_t d_trunk_features() const;
};

// Zero-initialized parameter set with the canonical manifest order.
ModelParams make_acgan_params(const AcganArch& arch);
// He-style random initialization; batch-norm starts at identity.
ModelParams init_acgan_params(const AcganArch& arch, RngStream& rng);

// ---- forward passes -------------------------------------------------------

// Node handles for one application of G inside a graph.
struct GenNodes {
    NodeId images;                 // (N,C,H,W) in [-1,1]
    std::vector<NodeId> bn_nodes;  // train-mode batch norms, for running-stat updates
};

// Node handles for one application of D inside a graph.
struct DiscNodes {
    NodeId p_source;               // (N) validity probabilities in (0,1)
    NodeId p_class;                // (N,num_classes) softmax rows
    std::vector<NodeId> bn_nodes;  // train-mode batch norms
};

// Maps parameter names to their leaf node ids in one graph.
struct LeafMap {
    std::vector<std::pair<std::string, NodeId>> ids;
    NodeId at(std::string_view name) const;
};

// Adds every entry of `params` as a graph leaf. Trainable entries whose name
// starts with `grad_prefix` get requires_grad; pass "" to train everything,
// or a prefix like "g." / "d." to freeze the other network.
LeafMap add_param_leaves(Graph& g, const ModelParams& params, std::string_view grad_prefix);

GenNodes generator_nodes(Graph& g, const AcganArch& arch, const LeafMap& leaves, NodeId z,
                         const std::vector<int64_t>& labels, bool train_mode);
DiscNodes discriminator_nodes(Graph& g, const AcganArch& arch, const LeafMap& leaves,
                              NodeId images, bool train_mode, RngStream* rng);

// ---- spec-level operations (eval mode) -------------------------------------

Tensor generate(const AcganArch& arch, const ModelParams& params, const Tensor& z,
                const std::vector<int64_t>& labels);
// Returns (p_source (N), p_class (N,num_classes)).
std::pair<Tensor, Tensor> discriminate(const AcganArch& arch, const ModelParams& params,
                                       const Tensor& images);
// Argmax of the class head per item; ties resolve to the lowest class id.
std::vector<int64_t> predict(const AcganArch& arch, const ModelParams& params,
                             const Tensor& images);
double accuracy(const AcganArch& arch, const ModelParams& params, const LabelledSet& test);

// ---- losses (graph-building; all are means of clamped log-probabilities) ---

// L_s^L: E[log p(s=real|x_real)] + E[log p(s=fake|x_fake)].
NodeId loss_source_labelled(Graph& g, NodeId p_real_on_real, NodeId p_fake_on_fake,
                            double clamp_eps);
// L_c^L: E[log p(y=yhat|x_real)] + E[log p(y=yhat|x_fake)].
NodeId loss_class_labelled(Graph& g, NodeId p_class_on_real, const std::vector<int64_t>& y_real,
                           NodeId p_class_on_fake, const std::vector<int64_t>& y_fake,
                           double clamp_eps);
// L_s^U: E[log p(s=real|x_real)] over unlabelled reals.
NodeId loss_source_unlabelled(Graph& g, NodeId p_real_on_unlabelled, double clamp_eps);

// Negated-for-minimizer objectives. D maximizes Lc + Ls + Lu; G maximizes
// Lc - Ls. Pass the graph's constant(0) for terms absent from a step.
NodeId d_objective(Graph& g, NodeId loss_class_l, NodeId loss_source_l, NodeId loss_source_u);
NodeId g_objective(Graph& g, NodeId loss_class_l, NodeId loss_source_l);

// ---- training ---------------------------------------------------------------

// One step's sampled batches.
struct GanBatch {
    Tensor x_labelled;  // may be empty
    std::vector<int64_t> y_labelled;
    Tensor u_unlabelled;  // may be empty
    Tensor z_noise;
    std::vector<int64_t> y_fake;
};

struct BaseTrainConfig {
    int64_t epochs = 30;
    int64_t batch_size = 16;
    double adam_lr = 2e-4;
    double clamp_eps = 1e-7;
    double bn_momentum = 0.1;
    bool use_unlabelled = true;  // ablation switch for the L_s^U term
};

// Optional quadratic penalty on D's trainable parameters:
// (lambda/2) * sum_i F_i (theta_i - anchor_i)^2.
struct EwcPenalty {
    double lambda = 0.0;
    ParamSet fisher;  // D-trainable entries only
    ParamSet anchor;
};

double ewc_penalty_value(const ModelParams& params, const EwcPenalty& pen);

// Alternating D/G training on the given data. `classes` defines the pool fake
// labels are drawn from. Deterministic given the stream.
void train_gan_inplace(ModelParams& params, const AcganArch& arch, const LabelledSet& labelled,
                       const UnlabelledSet& unlabelled, const std::vector<int64_t>& classes,
                       const BaseTrainConfig& cfg, RngStream rng,
                       const EwcPenalty* ewc = nullptr);

// Trains a fresh base model on one task (the spec's train_base).
ModelParams train_base(const SemiTask& task, const AcganArch& arch, const BaseTrainConfig& cfg,
                       RngStream rng);
// Same, but starting from the given initialization.
ModelParams train_base_from(ModelParams init, const SemiTask& task, const AcganArch& arch,
                            const BaseTrainConfig& cfg, RngStream rng);

// Diagonal Fisher of the class log-likelihood over a labelled set, for the
// D-trainable parameters (used by the EWC baseline).
ParamSet estimate_class_fisher(const ModelParams& params, const AcganArch& arch,
                               const LabelledSet& data);

}  // namespace metacl
