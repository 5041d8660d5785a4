#include "metacl/acgan.hpp"

#include <algorithm>
#include <cmath>

#include "metacl/errors.hpp"

namespace metacl {

namespace {

int64_t conv_out(int64_t in, int64_t k, int64_t stride, int64_t pad) {
    return (in + 2 * pad - k) / stride + 1;
}

Tensor one_hot_rows(const std::vector<int64_t>& labels, int64_t num_classes) {
    Tensor t = Tensor::zeros({int64_t(labels.size()), num_classes});
    for (size_t i = 0; i < labels.size(); ++i) {
        t.data[size_t(int64_t(i) * num_classes + labels[i])] = 1.0;
    }
    return t;
}

}  // namespace

int64_t AcganArch::d_trunk_features() const {
    int64_t h1 = conv_out(image_hw, 3, 2, 1);
    int64_t h2 = conv_out(h1, 3, 2, 1);
    return d_filters2 * h2 * h2;
}

ModelParams make_acgan_params(const AcganArch& arch) {
    if (arch.image_hw % arch.upsample_scale != 0) {
        throw ConfigError("image size must be divisible by the generator upsample scale");
    }
    if (arch.embed_dim != arch.noise_dim) {
        throw ConfigError("class embedding dimension must equal the noise dimension");
    }
    int64_t s = arch.g_seed_hw();
    int64_t seed_len = arch.g_base_channels * s * s;
    int64_t F = arch.d_trunk_features();

    ModelParams p;
    auto add = [&](std::string name, Shape shape) {
        p.entries.push_back({name, Tensor::zeros(std::move(shape)), trainable_by_name(name)});
    };
    auto add_bn = [&](const std::string& prefix, int64_t c) {
        add(prefix + ".gamma", {c});
        add(prefix + ".beta", {c});
        add(prefix + ".running_mean", {c});
        add(prefix + ".running_var", {c});
    };

    add("g.class_embed", {arch.num_classes, arch.embed_dim});
    add("g.l1.weight", {arch.noise_dim, seed_len});
    add("g.l1.bias", {seed_len});
    add_bn("g.bn0", arch.g_base_channels);
    add("g.conv1.weight", {arch.g_filters, arch.g_base_channels, 3, 3});
    add("g.conv1.bias", {arch.g_filters});
    add_bn("g.bn1", arch.g_filters);
    add("g.conv2.weight", {arch.image_channels, arch.g_filters, 3, 3});
    add("g.conv2.bias", {arch.image_channels});

    add("d.conv1.weight", {arch.d_filters1, arch.image_channels, 3, 3});
    add("d.conv1.bias", {arch.d_filters1});
    add("d.conv2.weight", {arch.d_filters2, arch.d_filters1, 3, 3});
    add("d.conv2.bias", {arch.d_filters2});
    add_bn("d.bn", arch.d_filters2);
    add("d.val.weight", {F, 1});
    add("d.val.bias", {1});
    add("d.cls.weight", {F, arch.num_classes});
    add("d.cls.bias", {arch.num_classes});
    return p;
}

ModelParams init_acgan_params(const AcganArch& arch, RngStream& rng) {
    ModelParams p = make_acgan_params(arch);
    for (auto& e : p.entries) {
        const std::string& n = e.name;
        auto ends_with = [&](std::string_view suf) {
            return n.size() >= suf.size() && n.compare(n.size() - suf.size(), suf.size(), suf) == 0;
        };
        if (n == "g.class_embed") {
            for (auto& v : e.value.data) v = rng.normal();
        } else if (ends_with(".gamma") || ends_with(".running_var")) {
            for (auto& v : e.value.data) v = 1.0;
        } else if (ends_with(".beta") || ends_with(".running_mean") || ends_with(".bias")) {
            // zeros
        } else if (ends_with(".weight")) {
            int64_t fan_in;
            if (e.value.rank() == 4) {
                fan_in = e.value.shape[1] * e.value.shape[2] * e.value.shape[3];
            } else {
                fan_in = e.value.shape[0];
            }
            double std = std::sqrt(2.0 / double(fan_in));
            for (auto& v : e.value.data) v = std * rng.normal();
        }
    }
    return p;
}

NodeId LeafMap::at(std::string_view name) const {
    for (const auto& [n, id] : ids) {
        if (n == name) return id;
    }
    throw ContractError("no leaf named '" + std::string(name) + "'");
}

LeafMap add_param_leaves(Graph& g, const ModelParams& params, std::string_view grad_prefix) {
    LeafMap map;
    for (const auto& e : params.entries) {
        Tensor t = e.value;
        t.requires_grad =
            e.trainable && (grad_prefix.empty() || e.name.rfind(grad_prefix, 0) == 0);
        map.ids.emplace_back(e.name, g.leaf(std::move(t)));
    }
    return map;
}

GenNodes generator_nodes(Graph& g, const AcganArch& arch, const LeafMap& leaves, NodeId z,
                         const std::vector<int64_t>& labels, bool train_mode) {
    for (int64_t y : labels) {
        if (y < 0 || y >= arch.num_classes) {
            throw ContractError("generator: class id " + std::to_string(y) + " out of range");
        }
    }
    int64_t N = int64_t(labels.size());
    int64_t s = arch.g_seed_hw();

    NodeId emb = g.embedding(leaves.at("g.class_embed"), labels);
    NodeId h = g.mul(z, emb);  // noise gated by the class embedding
    NodeId seed = g.add_bias(g.matmul(h, leaves.at("g.l1.weight")), leaves.at("g.l1.bias"));
    NodeId x = g.reshape(seed, {N, arch.g_base_channels, s, s});

    GenNodes out;
    auto bn = [&](NodeId in, const std::string& prefix) {
        if (train_mode) {
            NodeId b = g.batch_norm_train(in, leaves.at(prefix + ".gamma"),
                                          leaves.at(prefix + ".beta"), arch.bn_eps);
            out.bn_nodes.push_back(b);
            return b;
        }
        return g.batch_norm_eval(in, leaves.at(prefix + ".gamma"), leaves.at(prefix + ".beta"),
                                 leaves.at(prefix + ".running_mean"),
                                 leaves.at(prefix + ".running_var"), arch.bn_eps);
    };

    x = bn(x, "g.bn0");
    x = g.upsample_nearest(x, int(arch.upsample_scale));
    x = g.add_channel_bias(g.conv2d(x, leaves.at("g.conv1.weight"), 1, 1),
                           leaves.at("g.conv1.bias"));
    x = bn(x, "g.bn1");
    x = g.leaky_relu(x, arch.leaky_slope);
    x = g.add_channel_bias(g.conv2d(x, leaves.at("g.conv2.weight"), 1, 1),
                           leaves.at("g.conv2.bias"));
    out.images = g.tanh(x);
    return out;
}

DiscNodes discriminator_nodes(Graph& g, const AcganArch& arch, const LeafMap& leaves,
                              NodeId images, bool train_mode, RngStream* rng) {
    if (train_mode && rng == nullptr) {
        throw ContractError("discriminator: train mode requires an RNG stream for dropout");
    }
    const Tensor& img = g.value(images);
    if (img.rank() != 4 || img.shape[1] != arch.image_channels || img.shape[2] != arch.image_hw ||
        img.shape[3] != arch.image_hw) {
        throw ShapeError("discriminator: input images have shape " + shape_str(img.shape));
    }
    int64_t N = img.shape[0];

    DiscNodes out;
    NodeId x = g.add_channel_bias(g.conv2d(images, leaves.at("d.conv1.weight"), 2, 1),
                                  leaves.at("d.conv1.bias"));
    x = g.leaky_relu(x, arch.leaky_slope);
    if (train_mode) x = g.dropout(x, arch.dropout_p, *rng);
    x = g.add_channel_bias(g.conv2d(x, leaves.at("d.conv2.weight"), 2, 1),
                           leaves.at("d.conv2.bias"));
    x = g.leaky_relu(x, arch.leaky_slope);
    if (train_mode) x = g.dropout(x, arch.dropout_p, *rng);
    if (train_mode) {
        NodeId b =
            g.batch_norm_train(x, leaves.at("d.bn.gamma"), leaves.at("d.bn.beta"), arch.bn_eps);
        out.bn_nodes.push_back(b);
        x = b;
    } else {
        x = g.batch_norm_eval(x, leaves.at("d.bn.gamma"), leaves.at("d.bn.beta"),
                              leaves.at("d.bn.running_mean"), leaves.at("d.bn.running_var"),
                              arch.bn_eps);
    }
    NodeId feat = g.reshape(x, {N, arch.d_trunk_features()});
    NodeId val = g.add_bias(g.matmul(feat, leaves.at("d.val.weight")), leaves.at("d.val.bias"));
    out.p_source = g.reshape(g.sigmoid(val), {N});
    NodeId cls = g.add_bias(g.matmul(feat, leaves.at("d.cls.weight")), leaves.at("d.cls.bias"));
    out.p_class = g.softmax(cls);
    return out;
}

Tensor generate(const AcganArch& arch, const ModelParams& params, const Tensor& z,
                const std::vector<int64_t>& labels) {
    if (z.rank() != 2 || z.shape[1] != arch.noise_dim || z.shape[0] != int64_t(labels.size())) {
        throw ShapeError("generate: noise must be (N, noise_dim) matching labels");
    }
    Graph g;
    LeafMap leaves = add_param_leaves(g, params, "~");  // no gradients
    NodeId zn = g.constant(z);
    GenNodes gen = generator_nodes(g, arch, leaves, zn, labels, /*train_mode=*/false);
    return g.value(gen.images);
}

std::pair<Tensor, Tensor> discriminate(const AcganArch& arch, const ModelParams& params,
                                       const Tensor& images) {
    Graph g;
    LeafMap leaves = add_param_leaves(g, params, "~");
    NodeId x = g.constant(images);
    DiscNodes d = discriminator_nodes(g, arch, leaves, x, /*train_mode=*/false, nullptr);
    return {g.value(d.p_source), g.value(d.p_class)};
}

std::vector<int64_t> predict(const AcganArch& arch, const ModelParams& params,
                             const Tensor& images) {
    Tensor p_class = discriminate(arch, params, images).second;
    int64_t N = p_class.shape[0], C = p_class.shape[1];
    std::vector<int64_t> out(static_cast<size_t>(N), 0);
    for (int64_t i = 0; i < N; ++i) {
        const double* row = p_class.data.data() + i * C;
        int64_t best = 0;
        for (int64_t j = 1; j < C; ++j) {
            if (row[j] > row[best]) best = j;  // strict: ties keep the lowest id
        }
        out[size_t(i)] = best;
    }
    return out;
}

double accuracy(const AcganArch& arch, const ModelParams& params, const LabelledSet& test) {
    if (test.empty()) throw ContractError("accuracy: empty test set");
    std::vector<int64_t> pred = predict(arch, params, test.images);
    int64_t hits = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] == test.labels[i]) ++hits;
    }
    return double(hits) / double(pred.size());
}

// ---- losses -----------------------------------------------------------------

namespace {

NodeId mean_log_clamped(Graph& g, NodeId probs, double eps) {
    if (g.value(probs).numel() == 0) throw ContractError("loss: empty batch");
    return g.mean(g.log(g.clamp(probs, eps, 1.0 - eps)));
}

// Probability assigned to the true label, per row.
NodeId picked_class_probs(Graph& g, NodeId p_class, const std::vector<int64_t>& labels,
                          int64_t num_classes) {
    if (labels.empty()) throw ContractError("loss: empty batch");
    NodeId mask = g.constant(one_hot_rows(labels, num_classes));
    return g.row_sum(g.mul(p_class, mask));
}

}  // namespace

NodeId loss_source_labelled(Graph& g, NodeId p_real_on_real, NodeId p_fake_on_fake,
                            double clamp_eps) {
    return g.add(mean_log_clamped(g, p_real_on_real, clamp_eps),
                 mean_log_clamped(g, p_fake_on_fake, clamp_eps));
}

NodeId loss_class_labelled(Graph& g, NodeId p_class_on_real, const std::vector<int64_t>& y_real,
                           NodeId p_class_on_fake, const std::vector<int64_t>& y_fake,
                           double clamp_eps) {
    int64_t C = g.value(p_class_on_real).shape[1];
    NodeId real_term = mean_log_clamped(g, picked_class_probs(g, p_class_on_real, y_real, C), clamp_eps);
    NodeId fake_term = mean_log_clamped(g, picked_class_probs(g, p_class_on_fake, y_fake, C), clamp_eps);
    return g.add(real_term, fake_term);
}

NodeId loss_source_unlabelled(Graph& g, NodeId p_real_on_unlabelled, double clamp_eps) {
    return mean_log_clamped(g, p_real_on_unlabelled, clamp_eps);
}

NodeId d_objective(Graph& g, NodeId loss_class_l, NodeId loss_source_l, NodeId loss_source_u) {
    return g.scalar_mul(g.add(g.add(loss_class_l, loss_source_l), loss_source_u), -1.0);
}

NodeId g_objective(Graph& g, NodeId loss_class_l, NodeId loss_source_l) {
    return g.scalar_mul(g.sub(loss_class_l, loss_source_l), -1.0);
}

// ---- training ---------------------------------------------------------------

namespace {

struct ParamRefs {
    std::vector<Tensor*> tensors;
    std::vector<NodeId> leaf_ids;
    std::vector<std::string> names;
};

// Trainable entries matching the prefix, in manifest order.
ParamRefs trainable_refs(ModelParams& params, const LeafMap& leaves, std::string_view prefix) {
    ParamRefs refs;
    for (auto& e : params.entries) {
        if (e.trainable && e.name.rfind(prefix, 0) == 0) {
            refs.tensors.push_back(&e.value);
            refs.leaf_ids.push_back(leaves.at(e.name));
            refs.names.push_back(e.name);
        }
    }
    return refs;
}

void update_running_stats(ModelParams& params, Graph& g, const std::vector<NodeId>& bn_nodes,
                          const std::vector<std::string>& bn_prefixes, double momentum) {
    for (size_t i = 0; i < bn_nodes.size(); ++i) {
        auto [mean, var] = g.batch_stats(bn_nodes[i]);
        const Tensor& x = g.value(bn_nodes[i]);
        int64_t R = x.numel() / mean.numel();
        double correction = R > 1 ? double(R) / double(R - 1) : 1.0;
        Tensor& rm = params.at(bn_prefixes[i] + ".running_mean");
        Tensor& rv = params.at(bn_prefixes[i] + ".running_var");
        for (int64_t c = 0; c < rm.numel(); ++c) {
            rm[c] = (1.0 - momentum) * rm[c] + momentum * mean[c];
            rv[c] = (1.0 - momentum) * rv[c] + momentum * var[c] * correction;
        }
    }
}

Tensor draw_noise(RngStream& rng, int64_t n, int64_t dim) {
    Tensor z = Tensor::zeros({n, dim});
    for (auto& v : z.data) v = rng.normal();
    return z;
}

std::vector<int64_t> draw_fake_labels(RngStream& rng, int64_t n,
                                      const std::vector<int64_t>& classes) {
    std::vector<int64_t> out(static_cast<size_t>(n), 0);
    for (auto& y : out) y = classes[size_t(rng.uniform_int(int64_t(classes.size())))];
    return out;
}

std::vector<int64_t> batch_indices(const std::vector<int64_t>& pool, int64_t step, int64_t nb) {
    std::vector<int64_t> out(static_cast<size_t>(nb), 0);
    int64_t L = int64_t(pool.size());
    for (int64_t t = 0; t < nb; ++t) out[size_t(t)] = pool[size_t((step * nb + t) % L)];
    return out;
}

std::vector<std::string> g_bn_prefixes() { return {"g.bn0", "g.bn1"}; }

}  // namespace

double ewc_penalty_value(const ModelParams& params, const EwcPenalty& pen) {
    double acc = 0.0;
    for (const auto& fe : pen.fisher.entries) {
        const Tensor& theta = params.at(fe.name);
        const Tensor& anchor = pen.anchor.at(fe.name);
        for (int64_t k = 0; k < theta.numel(); ++k) {
            double d = theta[k] - anchor[k];
            acc += fe.value[k] * d * d;
        }
    }
    return 0.5 * pen.lambda * acc;
}

void train_gan_inplace(ModelParams& params, const AcganArch& arch, const LabelledSet& labelled,
                       const UnlabelledSet& unlabelled, const std::vector<int64_t>& classes,
                       const BaseTrainConfig& cfg, RngStream rng, const EwcPenalty* ewc) {
    int64_t L = labelled.size();
    int64_t U = cfg.use_unlabelled ? unlabelled.size() : 0;
    if ((L == 0 && U == 0) || cfg.epochs == 0) return;
    if (classes.empty()) throw ContractError("train: no classes to sample fake labels from");

    int64_t nb = cfg.batch_size;
    int64_t steps = (std::max(L, U) + nb - 1) / nb;
    OptimizerState d_opt = OptimizerState::adam(cfg.adam_lr, 0.5, 0.999);
    OptimizerState g_opt = OptimizerState::adam(cfg.adam_lr, 0.5, 0.999);

    std::vector<int64_t> lab_pool(static_cast<size_t>(L), 0);
    for (int64_t i = 0; i < L; ++i) lab_pool[size_t(i)] = i;
    std::vector<int64_t> unl_pool(static_cast<size_t>(U), 0);
    for (int64_t i = 0; i < U; ++i) unl_pool[size_t(i)] = i;

    for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        if (L > 0) rng.shuffle(lab_pool);
        if (U > 0) rng.shuffle(unl_pool);
        for (int64_t step = 0; step < steps; ++step) {
            GanBatch batch;
            std::vector<int64_t> lab_rows, unl_rows;
            if (L > 0) {
                lab_rows = batch_indices(lab_pool, step, nb);
                batch.x_labelled = image_rows(labelled.images, lab_rows);
                for (int64_t r : lab_rows) batch.y_labelled.push_back(labelled.labels[size_t(r)]);
            }
            if (U > 0) {
                unl_rows = batch_indices(unl_pool, step, nb);
                batch.u_unlabelled = image_rows(unlabelled.images, unl_rows);
            }

            // --- D step: maximize Lc + Ls + Lu with G frozen ---
            batch.z_noise = draw_noise(rng, nb, arch.noise_dim);
            batch.y_fake = draw_fake_labels(rng, nb, classes);
            Tensor x_fake;
            {
                Graph g;
                LeafMap leaves = add_param_leaves(g, params, "~");
                NodeId zn = g.constant(batch.z_noise);
                GenNodes gen = generator_nodes(g, arch, leaves, zn, batch.y_fake, true);
                x_fake = g.value(gen.images);
            }
            {
                Graph g;
                LeafMap leaves = add_param_leaves(g, params, "d.");
                DiscNodes d_fake = discriminator_nodes(g, arch, leaves, g.constant(x_fake), true, &rng);
                NodeId p_fake_correct = g.scalar_affine(d_fake.p_source, -1.0, 1.0);
                NodeId lc = g.constant(0.0);
                NodeId ls;
                std::vector<NodeId> bn_nodes = d_fake.bn_nodes;
                if (L > 0) {
                    DiscNodes d_real =
                        discriminator_nodes(g, arch, leaves, g.constant(batch.x_labelled), true, &rng);
                    bn_nodes.insert(bn_nodes.begin(), d_real.bn_nodes.begin(), d_real.bn_nodes.end());
                    ls = loss_source_labelled(g, d_real.p_source, p_fake_correct, cfg.clamp_eps);
                    lc = loss_class_labelled(g, d_real.p_class, batch.y_labelled, d_fake.p_class,
                                             batch.y_fake, cfg.clamp_eps);
                } else {
                    ls = loss_source_unlabelled(g, p_fake_correct, cfg.clamp_eps);
                }
                NodeId lu = g.constant(0.0);
                if (U > 0) {
                    DiscNodes d_unl =
                        discriminator_nodes(g, arch, leaves, g.constant(batch.u_unlabelled), true, &rng);
                    bn_nodes.push_back(d_unl.bn_nodes.front());
                    lu = loss_source_unlabelled(g, d_unl.p_source, cfg.clamp_eps);
                }
                NodeId loss = d_objective(g, lc, ls, lu);
                GradMap grads = g.gradients(loss);
                ParamRefs refs = trainable_refs(params, leaves, "d.");
                std::vector<Tensor> gvals;
                for (size_t i = 0; i < refs.tensors.size(); ++i) {
                    Tensor gt = g.grad_or_zero(grads, refs.leaf_ids[i]);
                    if (ewc != nullptr && ewc->lambda > 0.0 && ewc->fisher.has(refs.names[i])) {
                        const Tensor& F = ewc->fisher.at(refs.names[i]);
                        const Tensor& anchor = ewc->anchor.at(refs.names[i]);
                        const Tensor& theta = *refs.tensors[i];
                        for (int64_t k = 0; k < gt.numel(); ++k) {
                            gt[k] += ewc->lambda * F[k] * (theta[k] - anchor[k]);
                        }
                    }
                    gvals.push_back(std::move(gt));
                }
                optimizer_step(refs.tensors, gvals, d_opt);
                update_running_stats(params, g, bn_nodes,
                                     std::vector<std::string>(bn_nodes.size(), "d.bn"),
                                     cfg.bn_momentum);
            }

            // --- G step: maximize Lc - Ls with D frozen ---
            Tensor z2 = draw_noise(rng, nb, arch.noise_dim);
            std::vector<int64_t> y_fake2 = draw_fake_labels(rng, nb, classes);
            {
                Graph g;
                LeafMap leaves = add_param_leaves(g, params, "g.");
                GenNodes gen = generator_nodes(g, arch, leaves, g.constant(z2), y_fake2, true);
                DiscNodes d_fake = discriminator_nodes(g, arch, leaves, gen.images, true, &rng);
                NodeId p_fake_correct = g.scalar_affine(d_fake.p_source, -1.0, 1.0);
                NodeId lc = g.constant(0.0);
                NodeId ls;
                if (L > 0) {
                    DiscNodes d_real =
                        discriminator_nodes(g, arch, leaves, g.constant(batch.x_labelled), true, &rng);
                    ls = loss_source_labelled(g, d_real.p_source, p_fake_correct, cfg.clamp_eps);
                    lc = loss_class_labelled(g, d_real.p_class, batch.y_labelled, d_fake.p_class,
                                             y_fake2, cfg.clamp_eps);
                } else {
                    ls = loss_source_unlabelled(g, p_fake_correct, cfg.clamp_eps);
                }
                NodeId loss = g_objective(g, lc, ls);
                GradMap grads = g.gradients(loss);
                ParamRefs refs = trainable_refs(params, leaves, "g.");
                std::vector<Tensor> gvals;
                for (size_t i = 0; i < refs.tensors.size(); ++i) {
                    gvals.push_back(g.grad_or_zero(grads, refs.leaf_ids[i]));
                }
                optimizer_step(refs.tensors, gvals, g_opt);
                update_running_stats(params, g, gen.bn_nodes, g_bn_prefixes(), cfg.bn_momentum);
            }
        }
    }
}

ModelParams train_base(const SemiTask& task, const AcganArch& arch, const BaseTrainConfig& cfg,
                       RngStream rng) {
    RngStream init_rng = rng.split("init");
    return train_base_from(init_acgan_params(arch, init_rng), task, arch, cfg,
                           rng.split("train"));
}

ModelParams train_base_from(ModelParams init, const SemiTask& task, const AcganArch& arch,
                            const BaseTrainConfig& cfg, RngStream rng) {
    for (int64_t c : task.classes) {
        bool found = false;
        for (int64_t y : task.train.labelled.labels) {
            if (y == c) {
                found = true;
                break;
            }
        }
        if (!found) {
            throw ConfigError("train_base: class " + std::to_string(c) +
                              " has no labelled examples");
        }
    }
    train_gan_inplace(init, arch, task.train.labelled, task.train.unlabelled, task.classes, cfg,
                      rng);
    return init;
}

ParamSet estimate_class_fisher(const ModelParams& params, const AcganArch& arch,
                               const LabelledSet& data) {
    ParamSet fisher;
    for (const auto& e : params.entries) {
        if (e.trainable && e.name.rfind("d.", 0) == 0) {
            fisher.entries.push_back({e.name, Tensor::zeros(e.value.shape), true});
        }
    }
    if (data.empty()) return fisher;
    for (int64_t i = 0; i < data.size(); ++i) {
        Graph g;
        LeafMap leaves = add_param_leaves(g, params, "d.");
        Tensor x = image_rows(data.images, {i});
        DiscNodes d = discriminator_nodes(g, arch, leaves, g.constant(x), false, nullptr);
        NodeId picked = picked_class_probs(g, d.p_class, {data.labels[size_t(i)]}, arch.num_classes);
        NodeId loglik = g.mean(g.log(g.clamp(picked, 1e-12, 1.0)));
        GradMap grads = g.gradients(loglik);
        for (auto& fe : fisher.entries) {
            Tensor gt = g.grad_or_zero(grads, leaves.at(fe.name));
            for (int64_t k = 0; k < gt.numel(); ++k) fe.value[k] += gt[k] * gt[k];
        }
    }
    for (auto& fe : fisher.entries) {
        for (auto& v : fe.value.data) v /= double(data.size());
    }
    return fisher;
}

}  // namespace metacl
