#include "metacl/hypernet.hpp"

#include <algorithm>
#include <cmath>

#include "metacl/consolidation.hpp"
#include "metacl/errors.hpp"

namespace metacl {

Tensor TaskDescriptor::one_hot() const {
    if (task_id < 0 || task_id >= dim) {
        throw ContractError("task descriptor: id " + std::to_string(task_id) +
                            " outside dimension " + std::to_string(dim));
    }
    Tensor t = Tensor::zeros({dim});
    t[task_id] = 1.0;
    return t;
}

HyperParams make_hyper_params(const HyperDims& dims) {
    HyperParams h;
    h.dims = dims;
    auto add = [&](std::string name, Shape shape) {
        h.params.entries.push_back({std::move(name), Tensor::zeros(std::move(shape)), true});
    };
    add("h.enc.w1", {dims.enc_in(), dims.hidden});
    add("h.enc.b1", {dims.hidden});
    add("h.enc.mu.weight", {dims.hidden, dims.latent});
    add("h.enc.mu.bias", {dims.latent});
    add("h.enc.logvar.weight", {dims.hidden, dims.latent});
    add("h.enc.logvar.bias", {dims.latent});
    add("h.dec.w1", {dims.dec_in(), dims.hidden});
    add("h.dec.b1", {dims.hidden});
    add("h.dec.out.weight", {dims.hidden, dims.chunk_size});
    add("h.dec.out.bias", {dims.chunk_size});
    add("h.prior.w_mu", {dims.task_dim, dims.latent});
    add("h.prior.w_sigma", {dims.task_dim, dims.latent});
    add("h.chunk_embed", {dims.num_chunks, dims.chunk_embed});
    return h;
}

HyperParams init_hyper_params(const HyperDims& dims, RngStream& rng) {
    HyperParams h = make_hyper_params(dims);
    for (auto& e : h.params.entries) {
        if (e.name == "h.prior.w_sigma") continue;  // unit variance at start
        for (auto& v : e.value.data) v = -0.05 + 0.1 * rng.uniform();
    }
    return h;
}

namespace {

constexpr double kLeaky = 0.2;

void check_one_hot(const Tensor& t) {
    int64_t ones = 0;
    for (double v : t.data) {
        if (v == 1.0) {
            ++ones;
        } else if (v != 0.0) {
            throw ContractError("task vector is not one-hot");
        }
    }
    if (ones != 1) throw ContractError("task vector is not one-hot");
}

Tensor as_row(const Tensor& v) {
    Tensor r = v;
    r.shape = {1, v.numel()};
    return r;
}

struct EncoderOut {
    NodeId mu, log_var;  // (1, latent)
};

EncoderOut encoder_nodes(Graph& g, const HyperParams& hyper, const LeafMap& leaves,
                         NodeId chunk_row, NodeId t_row, int64_t chunk_id) {
    NodeId emb = g.embedding(leaves.at("h.chunk_embed"), {chunk_id});
    NodeId x = g.concat_cols({chunk_row, t_row, emb});
    NodeId h =
        g.leaky_relu(g.add_bias(g.matmul(x, leaves.at("h.enc.w1")), leaves.at("h.enc.b1")), kLeaky);
    EncoderOut out;
    out.mu = g.add_bias(g.matmul(h, leaves.at("h.enc.mu.weight")), leaves.at("h.enc.mu.bias"));
    out.log_var =
        g.add_bias(g.matmul(h, leaves.at("h.enc.logvar.weight")), leaves.at("h.enc.logvar.bias"));
    (void)hyper;
    return out;
}

NodeId decoder_nodes(Graph& g, const HyperParams& hyper, const LeafMap& leaves, NodeId z_row,
                     NodeId t_row, int64_t chunk_id) {
    NodeId emb = g.embedding(leaves.at("h.chunk_embed"), {chunk_id});
    NodeId x = g.concat_cols({z_row, t_row, emb});
    NodeId h =
        g.leaky_relu(g.add_bias(g.matmul(x, leaves.at("h.dec.w1")), leaves.at("h.dec.b1")), kLeaky);
    (void)hyper;
    return g.add_bias(g.matmul(h, leaves.at("h.dec.out.weight")), leaves.at("h.dec.out.bias"));
}

// KL(q || p) for diagonal Gaussians given (1,d) mean / log-variance rows.
NodeId kl_nodes(Graph& g, NodeId mu_q, NodeId log_var_q, NodeId mu_p, NodeId log_var_p) {
    NodeId d = g.sub(mu_q, mu_p);
    NodeId d2 = g.mul(d, d);
    NodeId var_q = g.exp(log_var_q);
    NodeId inv_var_p = g.exp(g.scalar_mul(log_var_p, -1.0));
    NodeId ratio = g.mul(g.add(var_q, d2), inv_var_p);
    NodeId inner = g.scalar_add(g.add(g.sub(log_var_p, log_var_q), ratio), -1.0);
    return g.scalar_mul(g.sum(inner), 0.5);
}

}  // namespace

HyperLeaves add_hyper_leaves(Graph& g, const HyperParams& hyper, bool encdec_only) {
    HyperLeaves out;
    for (const auto& e : hyper.params.entries) {
        Tensor t = e.value;
        bool grads = e.trainable;
        if (encdec_only) {
            grads = grads && (e.name.rfind("h.enc.", 0) == 0 || e.name.rfind("h.dec.", 0) == 0);
        }
        t.requires_grad = grads;
        out.map.ids.emplace_back(e.name, g.leaf(std::move(t)));
    }
    return out;
}

ElboNodes elbo_nodes(Graph& g, const HyperParams& hyper, const HyperLeaves& leaves,
                     const std::vector<double>& chunk, const Tensor& t_cond, int64_t chunk_id,
                     const Tensor& eps, const std::optional<TaskPrior>& fixed_prior) {
    if (int64_t(chunk.size()) != hyper.dims.chunk_size) {
        throw ShapeError("elbo: chunk length " + std::to_string(chunk.size()) +
                         " does not match chunk_size " + std::to_string(hyper.dims.chunk_size));
    }
    if (eps.numel() != hyper.dims.latent) {
        throw ShapeError("elbo: eps must have latent dimension");
    }
    NodeId chunk_row = g.constant(Tensor::from({1, hyper.dims.chunk_size}, chunk));
    NodeId t_row = g.constant(as_row(t_cond));

    EncoderOut q = encoder_nodes(g, hyper, leaves.map, chunk_row, t_row, chunk_id);
    NodeId std_row = g.exp(g.scalar_mul(q.log_var, 0.5));
    NodeId z = g.add(q.mu, g.mul(std_row, g.constant(as_row(eps))));
    NodeId recon = decoder_nodes(g, hyper, leaves.map, z, t_row, chunk_id);

    NodeId mu_p, log_var_p;
    if (fixed_prior.has_value()) {
        mu_p = g.constant(as_row(fixed_prior->mu));
        log_var_p = g.constant(as_row(fixed_prior->log_var));
    } else {
        mu_p = g.matmul(t_row, leaves.map.at("h.prior.w_mu"));
        log_var_p = g.matmul(t_row, leaves.map.at("h.prior.w_sigma"));
    }

    ElboNodes out;
    out.mu_q = q.mu;
    out.log_var_q = q.log_var;
    out.kl = kl_nodes(g, q.mu, q.log_var, mu_p, log_var_p);
    NodeId diff = g.sub(chunk_row, recon);
    out.recon = g.scalar_mul(g.sum(g.mul(diff, diff)), -0.5);
    out.elbo = g.sub(out.recon, out.kl);
    return out;
}

TaskPrior prior_of(const TaskDescriptor& t, const HyperParams& hyper) {
    Tensor one_hot = t.one_hot();
    check_one_hot(one_hot);
    if (t.dim != hyper.dims.task_dim) {
        throw ShapeError("prior_of: task dimension mismatch");
    }
    const Tensor& w_mu = hyper.params.at("h.prior.w_mu");
    const Tensor& w_sigma = hyper.params.at("h.prior.w_sigma");
    TaskPrior p;
    p.mu = Tensor::zeros({hyper.dims.latent});
    p.log_var = Tensor::zeros({hyper.dims.latent});
    for (int64_t j = 0; j < hyper.dims.latent; ++j) {
        p.mu[j] = w_mu.at(t.task_id, j);
        p.log_var[j] = w_sigma.at(t.task_id, j);
    }
    return p;
}

LatentPosterior encode(const std::vector<double>& chunk, const TaskDescriptor& t,
                       int64_t chunk_id, const HyperParams& hyper) {
    if (int64_t(chunk.size()) != hyper.dims.chunk_size) {
        throw ShapeError("encode: chunk length mismatch");
    }
    Graph g;
    HyperLeaves leaves = add_hyper_leaves(g, hyper, false);
    NodeId chunk_row = g.constant(Tensor::from({1, hyper.dims.chunk_size}, chunk));
    NodeId t_row = g.constant(as_row(t.one_hot()));
    EncoderOut q = encoder_nodes(g, hyper, leaves.map, chunk_row, t_row, chunk_id);
    LatentPosterior out;
    out.mu = g.value(q.mu);
    out.mu.shape = {hyper.dims.latent};
    out.log_var = g.value(q.log_var);
    out.log_var.shape = {hyper.dims.latent};
    return out;
}

Tensor reparameterize(const LatentPosterior& post, const Tensor& eps) {
    if (eps.numel() != post.mu.numel()) {
        throw ShapeError("reparameterize: eps dimension mismatch");
    }
    Tensor z = post.mu;
    for (int64_t i = 0; i < z.numel(); ++i) {
        z[i] += std::exp(0.5 * post.log_var[i]) * eps[i];
    }
    return z;
}

std::vector<double> decode(const Tensor& z, const Tensor& t_cond, int64_t chunk_id,
                           const HyperParams& hyper) {
    if (z.numel() != hyper.dims.latent) throw ShapeError("decode: z must have latent dimension");
    if (t_cond.numel() != hyper.dims.task_dim) {
        throw ShapeError("decode: task vector dimension mismatch");
    }
    Graph g;
    HyperLeaves leaves = add_hyper_leaves(g, hyper, false);
    NodeId z_row = g.constant(as_row(z));
    NodeId t_row = g.constant(as_row(t_cond));
    NodeId out = decoder_nodes(g, hyper, leaves.map, z_row, t_row, chunk_id);
    return g.value(out).data;
}

double kl_gaussians(const LatentPosterior& q, const TaskPrior& p) {
    if (q.mu.numel() != p.mu.numel()) throw ShapeError("kl_gaussians: dimension mismatch");
    double acc = 0.0;
    for (int64_t i = 0; i < q.mu.numel(); ++i) {
        double lvq = q.log_var[i], lvp = p.log_var[i];
        double d = q.mu[i] - p.mu[i];
        acc += lvp - lvq + (std::exp(lvq) + d * d) * std::exp(-lvp) - 1.0;
    }
    return 0.5 * acc;
}

double elbo(const std::vector<double>& chunk, const TaskDescriptor& t, int64_t chunk_id,
            const HyperParams& hyper, const Tensor& eps) {
    Graph g;
    HyperLeaves leaves = add_hyper_leaves(g, hyper, false);
    ElboNodes nodes = elbo_nodes(g, hyper, leaves, chunk, t.one_hot(), chunk_id, eps, std::nullopt);
    return g.value(nodes.elbo).item();
}

std::vector<ChunkSet> chunks_of_models(const std::vector<ModelParams>& models,
                                       int64_t chunk_size) {
    if (models.empty()) throw ContractError("chunks_of_models: no models");
    std::vector<ChunkSet> out;
    for (const auto& m : models) {
        out.push_back(chunk(flatten(m), chunk_size));
        if (out.back().manifest != out.front().manifest) {
            throw ContractError("chunks_of_models: manifest mismatch across models");
        }
    }
    return out;
}

std::pair<double, double> hyper_fit_metrics(const std::vector<ChunkSet>& model_chunks,
                                            const TaskDescriptor& t, const HyperParams& hyper) {
    double mse = 0.0, kl = 0.0;
    int64_t count = 0;
    TaskPrior prior = prior_of(t, hyper);
    Tensor t_cond = t.one_hot();
    for (const auto& cs : model_chunks) {
        for (size_t c = 0; c < cs.chunks.size(); ++c) {
            LatentPosterior q = encode(cs.chunks[c], t, int64_t(c), hyper);
            std::vector<double> rec = decode(q.mu, t_cond, int64_t(c), hyper);
            double err = 0.0;
            for (size_t i = 0; i < rec.size(); ++i) {
                double d = rec[i] - cs.chunks[c][i];
                err += d * d;
            }
            mse += err / double(rec.size());
            kl += kl_gaussians(q, prior);
            ++count;
        }
    }
    return {mse / double(count), kl / double(count)};
}

namespace {

std::vector<Tensor*> hyper_param_ptrs(HyperParams& hyper, bool encdec_only) {
    std::vector<Tensor*> out;
    for (auto& e : hyper.params.entries) {
        if (encdec_only &&
            !(e.name.rfind("h.enc.", 0) == 0 || e.name.rfind("h.dec.", 0) == 0)) {
            continue;
        }
        out.push_back(&e.value);
    }
    return out;
}

std::vector<Tensor> grads_for(HyperParams& hyper, Graph& g, const HyperLeaves& leaves,
                              const GradMap& grads, bool encdec_only) {
    std::vector<Tensor> out;
    for (auto& e : hyper.params.entries) {
        if (encdec_only &&
            !(e.name.rfind("h.enc.", 0) == 0 || e.name.rfind("h.dec.", 0) == 0)) {
            continue;
        }
        out.push_back(g.grad_or_zero(grads, leaves.map.at(e.name)));
    }
    return out;
}

}  // namespace

HyperTrainLog train_hypernet(const std::vector<ModelParams>& models, const TaskDescriptor& t,
                             HyperParams& hyper, const HyperTrainConfig& cfg, RngStream rng,
                             const PriorStore* replay_store) {
    std::vector<ChunkSet> model_chunks = chunks_of_models(models, hyper.dims.chunk_size);
    if (int64_t(model_chunks.front().chunks.size()) != hyper.dims.num_chunks) {
        throw ShapeError("train_hypernet: model has " +
                         std::to_string(model_chunks.front().chunks.size()) +
                         " chunks, hypernetwork expects " + std::to_string(hyper.dims.num_chunks));
    }

    HyperTrainLog log;
    std::tie(log.initial_recon_mse, log.initial_kl) = hyper_fit_metrics(model_chunks, t, hyper);
    log.final_recon_mse = log.initial_recon_mse;
    log.final_kl = log.initial_kl;
    if (cfg.epochs == 0) return log;

    Tensor t_cond = t.one_hot();
    OptimizerState opt =
        OptimizerState::adadelta(cfg.adadelta_lr, cfg.adadelta_rho, cfg.adadelta_eps);
    OptimizerState replay_opt =
        OptimizerState::adadelta(cfg.adadelta_lr, cfg.adadelta_rho, cfg.adadelta_eps);

    std::vector<std::pair<int64_t, int64_t>> order;  // (model, chunk)
    for (int64_t l = 0; l < int64_t(model_chunks.size()); ++l) {
        for (int64_t c = 0; c < hyper.dims.num_chunks; ++c) order.emplace_back(l, c);
    }

    for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        for (auto [l, c] : order) {
            Tensor eps = Tensor::from({hyper.dims.latent}, rng.normal_vec(hyper.dims.latent));
            Graph g;
            HyperLeaves leaves = add_hyper_leaves(g, hyper, false);
            ElboNodes nodes = elbo_nodes(g, hyper, leaves, model_chunks[size_t(l)].chunks[size_t(c)],
                                         t_cond, c, eps, std::nullopt);
            NodeId loss = g.scalar_mul(nodes.elbo, -1.0);
            GradMap gm = g.gradients(loss);
            std::vector<Tensor*> ptrs = hyper_param_ptrs(hyper, false);
            std::vector<Tensor> gv = grads_for(hyper, g, leaves, gm, false);
            optimizer_step(ptrs, gv, opt);
        }
        if (replay_store != nullptr && replay_store->size() > 0) {
            consolidation_pass(hyper, *replay_store, cfg, rng.split(uint64_t(1000 + epoch)),
                               &replay_opt);
        }
    }

    std::tie(log.final_recon_mse, log.final_kl) = hyper_fit_metrics(model_chunks, t, hyper);
    return log;
}

ModelParams sample_one_model(const TaskPrior& prior, const Tensor& t_cond,
                             const HyperParams& hyper, const std::vector<ManifestEntry>& manifest,
                             RngStream& rng) {
    int64_t total = 0;
    for (const auto& m : manifest) total += shape_numel(m.shape);
    int64_t expected_chunks = (total + hyper.dims.chunk_size - 1) / hyper.dims.chunk_size;
    if (expected_chunks != hyper.dims.num_chunks) {
        throw ShapeError("sample_one_model: manifest needs " + std::to_string(expected_chunks) +
                         " chunks, hypernetwork models " + std::to_string(hyper.dims.num_chunks));
    }
    Tensor z = Tensor::zeros({hyper.dims.latent});
    for (int64_t i = 0; i < z.numel(); ++i) {
        z[i] = prior.mu[i] + std::exp(0.5 * prior.log_var[i]) * rng.normal();
    }
    ChunkSet cs;
    cs.chunk_size = hyper.dims.chunk_size;
    cs.pad_len = hyper.dims.num_chunks * hyper.dims.chunk_size - total;
    cs.manifest = manifest;
    for (int64_t c = 0; c < hyper.dims.num_chunks; ++c) {
        cs.chunks.push_back(decode(z, t_cond, c, hyper));
    }
    return unflatten(unchunk(cs));
}

std::vector<ModelParams> sample_models(const TaskPrior& prior, const Tensor& t_cond,
                                       const HyperParams& hyper,
                                       const std::vector<ManifestEntry>& manifest, int64_t count,
                                       RngStream& rng) {
    if (count < 1) throw ContractError("sample_models: count must be >= 1");
    std::vector<ModelParams> out;
    for (int64_t i = 0; i < count; ++i) {
        out.push_back(sample_one_model(prior, t_cond, hyper, manifest, rng));
    }
    return out;
}

}  // namespace metacl
