#include "metacl/runtime.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <thread>

#include <json.hpp>

#include "metacl/errors.hpp"

namespace metacl {

using nlohmann::json;

// ---- exemplar buffer -----------------------------------------------------------

ExemplarBuffer::Slice ExemplarBuffer::joint() const {
    Slice out;
    std::vector<int64_t> lab_rows, unl_rows;
    int64_t lab_total = 0, unl_total = 0;
    for (const auto& s : per_task) {
        lab_total += s.labelled.size();
        unl_total += s.unlabelled.size();
    }
    if (per_task.empty() || (lab_total == 0 && unl_total == 0)) return out;

    Shape img_shape;
    for (const auto& s : per_task) {
        if (s.labelled.size() > 0) img_shape = s.labelled.images.shape;
        if (s.unlabelled.size() > 0) img_shape = s.unlabelled.images.shape;
    }
    if (img_shape.empty()) return out;
    int64_t item = shape_numel(img_shape) / img_shape[0];

    img_shape[0] = lab_total;
    out.labelled.images = Tensor::zeros(img_shape);
    img_shape[0] = unl_total;
    out.unlabelled.images = Tensor::zeros(img_shape);
    int64_t li = 0, ui = 0;
    for (const auto& s : per_task) {
        for (int64_t i = 0; i < s.labelled.size(); ++i) {
            std::copy(s.labelled.images.data.begin() + i * item,
                      s.labelled.images.data.begin() + (i + 1) * item,
                      out.labelled.images.data.begin() + li * item);
            out.labelled.labels.push_back(s.labelled.labels[size_t(i)]);
            out.labelled.item_ids.push_back(s.labelled.item_ids[size_t(i)]);
            ++li;
        }
        for (int64_t i = 0; i < s.unlabelled.size(); ++i) {
            std::copy(s.unlabelled.images.data.begin() + i * item,
                      s.unlabelled.images.data.begin() + (i + 1) * item,
                      out.unlabelled.images.data.begin() + ui * item);
            out.unlabelled.item_ids.push_back(s.unlabelled.item_ids[size_t(i)]);
            ++ui;
        }
    }
    return out;
}

bool ExemplarBuffer::empty() const {
    for (const auto& s : per_task) {
        if (s.labelled.size() > 0 || s.unlabelled.size() > 0) return false;
    }
    return true;
}

ExemplarBuffer::Slice select_exemplars(const SemiTask& task, int64_t m_buf, int64_t n_buf,
                                       RngStream rng) {
    if (m_buf < 0 || n_buf < 0) throw ContractError("select_exemplars: negative capacity");
    ExemplarBuffer::Slice out;

    // Class-balanced labelled selection (+-1 across the task's classes).
    std::vector<int64_t> lab_rows;
    int64_t n_classes = int64_t(task.classes.size());
    if (m_buf > 0 && n_classes > 0 && task.train.labelled.size() > 0) {
        std::vector<int64_t> per_class(size_t(n_classes), m_buf / n_classes);
        for (int64_t i = 0; i < m_buf % n_classes; ++i) per_class[size_t(i)] += 1;
        for (int64_t ci = 0; ci < n_classes; ++ci) {
            int64_t cls = task.classes[size_t(ci)];
            std::vector<int64_t> rows;
            for (int64_t i = 0; i < task.train.labelled.size(); ++i) {
                if (task.train.labelled.labels[size_t(i)] == cls) rows.push_back(i);
            }
            RngStream crng = rng.split("labelled").split(uint64_t(cls));
            crng.shuffle(rows);
            int64_t take = std::min(per_class[size_t(ci)], int64_t(rows.size()));
            lab_rows.insert(lab_rows.end(), rows.begin(), rows.begin() + take);
        }
    }
    out.labelled.images = image_rows(task.train.labelled.images, lab_rows);
    for (int64_t r : lab_rows) {
        out.labelled.labels.push_back(task.train.labelled.labels[size_t(r)]);
        out.labelled.item_ids.push_back(task.train.labelled.item_ids[size_t(r)]);
    }

    std::vector<int64_t> unl_rows;
    if (n_buf > 0 && task.train.unlabelled.size() > 0) {
        std::vector<int64_t> rows(size_t(task.train.unlabelled.size()), 0);
        for (int64_t i = 0; i < task.train.unlabelled.size(); ++i) rows[size_t(i)] = i;
        RngStream urng = rng.split("unlabelled");
        urng.shuffle(rows);
        int64_t take = std::min(n_buf, int64_t(rows.size()));
        unl_rows.assign(rows.begin(), rows.begin() + take);
    }
    out.unlabelled.images = image_rows(task.train.unlabelled.images, unl_rows);
    for (int64_t r : unl_rows) {
        out.unlabelled.item_ids.push_back(task.train.unlabelled.item_ids[size_t(r)]);
    }
    return out;
}

// ---- ensembling ------------------------------------------------------------------

std::vector<int64_t> majority_vote(const std::vector<std::vector<int64_t>>& votes) {
    if (votes.empty()) throw ContractError("majority_vote: no models");
    size_t items = votes.front().size();
    for (const auto& v : votes) {
        if (v.size() != items) throw ContractError("majority_vote: unequal vote list lengths");
    }
    std::vector<int64_t> out(items, 0);
    for (size_t i = 0; i < items; ++i) {
        std::map<int64_t, int64_t> counts;
        for (const auto& v : votes) counts[v[i]] += 1;
        int64_t best_label = 0, best_count = -1;
        for (const auto& [label, count] : counts) {  // key order: lowest label wins ties
            if (count > best_count) {
                best_label = label;
                best_count = count;
            }
        }
        out[i] = best_label;
    }
    return out;
}

void fine_tune(ModelParams& model, const AcganArch& arch, const ExemplarBuffer::Slice& buffer,
               const std::vector<int64_t>& fallback_classes, const InferenceConfig& cfg,
               int64_t batch_size, RngStream rng) {
    if (buffer.labelled.size() == 0 && buffer.unlabelled.size() == 0) return;
    std::vector<int64_t> classes;
    for (int64_t y : buffer.labelled.labels) {
        if (std::find(classes.begin(), classes.end(), y) == classes.end()) classes.push_back(y);
    }
    std::sort(classes.begin(), classes.end());
    if (classes.empty()) classes = fallback_classes;

    BaseTrainConfig tc;
    tc.epochs = cfg.ft_epochs;
    tc.batch_size = batch_size;
    tc.adam_lr = cfg.ft_adam_lr;
    train_gan_inplace(model, arch, buffer.labelled, buffer.unlabelled, classes, tc, rng);
}

// ---- MCSSL pipeline -----------------------------------------------------------------

namespace {

HyperDims hyper_dims_for(const RunConfig& cfg, int64_t total_params) {
    HyperDims d;
    d.chunk_size = cfg.chunk_size;
    d.latent = cfg.latent_dim;
    d.hidden = cfg.hidden;
    d.chunk_embed = cfg.chunk_embed_dim;
    d.task_dim = cfg.max_tasks;
    d.num_chunks = (total_params + cfg.chunk_size - 1) / cfg.chunk_size;
    return d;
}

// Uniform mixture of the seen tasks' one-hot vectors, the conditioning used
// with the aggregated prior.
Tensor aggregate_task_vector(int64_t tasks_seen, int64_t dim) {
    Tensor t = Tensor::zeros({dim});
    for (int64_t i = 0; i < tasks_seen; ++i) t[i] = 1.0 / double(tasks_seen);
    return t;
}

struct PeakCounter {
    int64_t current = 0;
    int64_t peak = 0;
    void up() {
        ++current;
        peak = std::max(peak, current);
    }
    void down() { --current; }
};

}  // namespace

int64_t metacl_thread_cap() {
    if (const char* env = std::getenv("METACL_THREADS")) {
        int64_t v = std::atoll(env);
        if (v >= 1) return v;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : int64_t(hw);
}

McsslRunner::McsslRunner(const RunConfig& cfg, RngStream init_rng) : cfg_(cfg) {
    manifest_ = flatten(make_acgan_params(cfg.arch)).manifest;
    int64_t total = 0;
    for (const auto& m : manifest_) total += shape_numel(m.shape);
    RngStream hrng = init_rng.split("hyper_init");
    hyper_ = init_hyper_params(hyper_dims_for(cfg, total), hrng);
}

void McsslRunner::restore(HyperParams hyper, PriorStore store, int64_t tasks_seen) {
    hyper_ = std::move(hyper);
    store_ = std::move(store);
    tasks_seen_ = tasks_seen;
}

void McsslRunner::run_task(int64_t k, const SemiTask& task, const RngStream& task_rng) {
    if (k != tasks_seen_) {
        throw ContractError("run_task: task " + std::to_string(k) + " out of order, expected " +
                            std::to_string(tasks_seen_));
    }
    // B base models share one initialization; training streams are distinct so
    // the instances disagree only through data order, noise and dropout. This
    // keeps the weight posterior unimodal enough for the hypernetwork to model.
    RngStream init_rng = task_rng.split("init");
    ModelParams init = init_acgan_params(cfg_.arch, init_rng);

    int64_t B = cfg_.num_base_models;
    std::vector<ModelParams> models(size_t(B));
    int64_t workers = std::min<int64_t>(B, metacl_thread_cap());
    if (workers <= 1) {
        for (int64_t l = 0; l < B; ++l) {
            models[size_t(l)] = train_base_from(init, task, cfg_.arch, cfg_.base,
                                                task_rng.split("model").split(uint64_t(l)));
        }
    } else {
        std::vector<std::future<void>> futs;
        std::atomic<int64_t> next{0};
        for (int64_t w = 0; w < workers; ++w) {
            futs.push_back(std::async(std::launch::async, [&]() {
                for (int64_t l = next.fetch_add(1); l < B; l = next.fetch_add(1)) {
                    models[size_t(l)] = train_base_from(init, task, cfg_.arch, cfg_.base,
                                                        task_rng.split("model").split(uint64_t(l)));
                }
            }));
        }
        for (auto& f : futs) f.get();
    }

    TaskDescriptor t{k, hyper_.dims.task_dim};
    train_hypernet(models, t, hyper_, cfg_.hyper, task_rng.split("hyper"),
                   store_.size() > 0 ? &store_ : nullptr);
    record_prior(store_, k, hyper_);
    consolidate(hyper_, store_, k, cfg_.hyper, task_rng.split("consolidate"));
    tasks_seen_ = k + 1;
}

ModelParams McsslRunner::ensemble_member(const TaskPrior& prior, const Tensor& t_cond,
                                         RngStream& rng) const {
    return sample_one_model(prior, t_cond, hyper_, manifest_, rng);
}

InferenceResult McsslRunner::infer_task_agnostic(int64_t k, const TaskStream& stream,
                                                 const ExemplarBuffer& buffer,
                                                 const RngStream& rng) const {
    if (store_.size() == 0) throw ContractError("infer: no tasks completed");
    TaskPrior prior = aggregate_priors(store_);
    Tensor t_cond = aggregate_task_vector(store_.size(), hyper_.dims.task_dim);
    ExemplarBuffer::Slice joint = buffer.joint();

    std::vector<int64_t> all_classes;
    for (int64_t j = 0; j <= k; ++j) {
        all_classes.insert(all_classes.end(), stream.tasks[size_t(j)].classes.begin(),
                           stream.tasks[size_t(j)].classes.end());
    }
    std::sort(all_classes.begin(), all_classes.end());

    InferenceResult out;
    PeakCounter counter;
    int64_t E = cfg_.inference.ensemble_size;
    std::vector<std::vector<std::vector<int64_t>>> votes(size_t(k + 1));
    for (int64_t e = 0; e < E; ++e) {
        RngStream member_rng = rng.split(uint64_t(e));
        counter.up();
        {
            // One decoded member at a time; only its votes survive the scope.
            ModelParams member = ensemble_member(prior, t_cond, member_rng);
            fine_tune(member, cfg_.arch, joint, all_classes, cfg_.inference,
                      cfg_.base.batch_size, member_rng.split("ft"));
            for (int64_t j = 0; j <= k; ++j) {
                votes[size_t(j)].push_back(
                    predict(cfg_.arch, member, stream.tasks[size_t(j)].test.labelled.images));
            }
        }
        counter.down();
    }
    for (int64_t j = 0; j <= k; ++j) {
        std::vector<int64_t> labels = majority_vote(votes[size_t(j)]);
        const auto& truth = stream.tasks[size_t(j)].test.labelled.labels;
        int64_t hits = 0;
        for (size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] == truth[i]) ++hits;
        }
        out.row.push_back(double(hits) / double(labels.size()));
    }
    out.peak_models = counter.peak;
    return out;
}

InferenceResult McsslRunner::infer_task_aware(int64_t k, const TaskStream& stream,
                                              const ExemplarBuffer& buffer,
                                              const RngStream& rng) const {
    if (store_.size() == 0) throw ContractError("infer: no tasks completed");
    InferenceResult out;
    PeakCounter counter;
    int64_t E = cfg_.inference.ensemble_size;
    for (int64_t j = 0; j <= k; ++j) {
        const TaskPrior& prior = store_.at(j);
        Tensor t_cond = TaskDescriptor{j, hyper_.dims.task_dim}.one_hot();
        const auto& slice = buffer.per_task[size_t(j)];
        std::vector<std::vector<int64_t>> votes;
        for (int64_t e = 0; e < E; ++e) {
            RngStream member_rng = rng.split(uint64_t(j)).split(uint64_t(e));
            counter.up();
            {
                ModelParams member = ensemble_member(prior, t_cond, member_rng);
                fine_tune(member, cfg_.arch, slice, stream.tasks[size_t(j)].classes,
                          cfg_.inference, cfg_.base.batch_size, member_rng.split("ft"));
                votes.push_back(
                    predict(cfg_.arch, member, stream.tasks[size_t(j)].test.labelled.images));
            }
            counter.down();
        }
        std::vector<int64_t> labels = majority_vote(votes);
        const auto& truth = stream.tasks[size_t(j)].test.labelled.labels;
        int64_t hits = 0;
        for (size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] == truth[i]) ++hits;
        }
        out.row.push_back(double(hits) / double(labels.size()));
    }
    out.peak_models = counter.peak;
    return out;
}

// ---- baselines ------------------------------------------------------------------------

SequentialSslRunner::SequentialSslRunner(const RunConfig& cfg, double ewc_lambda,
                                         RngStream init_rng)
    : cfg_(cfg), lambda_(ewc_lambda) {
    RngStream irng = init_rng.split("init");
    model_ = init_acgan_params(cfg.arch, irng);
}

void SequentialSslRunner::restore(ModelParams model, std::optional<EwcPenalty> ewc,
                                  int64_t tasks_seen) {
    model_ = std::move(model);
    ewc_ = std::move(ewc);
    tasks_seen_ = tasks_seen;
}

void SequentialSslRunner::run_task(int64_t k, const SemiTask& task, const RngStream& task_rng) {
    if (k != tasks_seen_) {
        throw ContractError("run_task: task " + std::to_string(k) + " out of order, expected " +
                            std::to_string(tasks_seen_));
    }
    const EwcPenalty* pen = (ewc_.has_value() && lambda_ > 0.0) ? &*ewc_ : nullptr;
    train_gan_inplace(model_, cfg_.arch, task.train.labelled, task.train.unlabelled, task.classes,
                      cfg_.base, task_rng.split("train"), pen);

    // Fisher of the class log-likelihood on this task's labelled data, taken
    // while the data is still available; anchor at the post-task parameters.
    EwcPenalty next;
    next.lambda = lambda_;
    next.fisher = estimate_class_fisher(model_, cfg_.arch, task.train.labelled);
    for (const auto& e : model_.entries) {
        if (e.trainable && e.name.rfind("d.", 0) == 0) {
            next.anchor.entries.push_back({e.name, e.value, true});
        }
    }
    ewc_ = std::move(next);
    tasks_seen_ = k + 1;
}

InferenceResult SequentialSslRunner::evaluate(int64_t k, const TaskStream& stream,
                                              const ExemplarBuffer& buffer,
                                              const RngStream& rng) const {
    std::vector<int64_t> all_classes;
    for (int64_t j = 0; j <= k; ++j) {
        all_classes.insert(all_classes.end(), stream.tasks[size_t(j)].classes.begin(),
                           stream.tasks[size_t(j)].classes.end());
    }
    std::sort(all_classes.begin(), all_classes.end());

    ModelParams tuned = model_;
    RngStream ft_rng = rng.split("ft");
    fine_tune(tuned, cfg_.arch, buffer.joint(), all_classes, cfg_.inference, cfg_.base.batch_size,
              ft_rng);

    InferenceResult out;
    out.peak_models = 1;
    for (int64_t j = 0; j <= k; ++j) {
        out.row.push_back(accuracy(cfg_.arch, tuned, stream.tasks[size_t(j)].test.labelled));
    }
    return out;
}

// ---- whole-stream wrappers ---------------------------------------------------------------

namespace {

ExemplarBuffer build_buffer(const TaskStream& stream, const RunConfig& cfg, int64_t upto,
                            RngStream root) {
    ExemplarBuffer buf;
    for (int64_t k = 0; k < upto; ++k) {
        buf.per_task.push_back(select_exemplars(stream.tasks[size_t(k)],
                                                cfg.buffer.labelled_per_task,
                                                cfg.buffer.unlabelled_per_task,
                                                root.split("buffer").split(uint64_t(k))));
    }
    return buf;
}

AccuracyMatrix run_sequential(const TaskStream& stream, const RunConfig& cfg, double lambda) {
    RngStream root(cfg.seed);
    RngStream method_rng = root.split("baseline");
    SequentialSslRunner runner(cfg, lambda, method_rng);
    AccuracyMatrix matrix;
    for (int64_t k = 0; k < int64_t(stream.tasks.size()); ++k) {
        runner.run_task(k, stream.tasks[size_t(k)], method_rng.split(uint64_t(k)));
        ExemplarBuffer buf = build_buffer(stream, cfg, k + 1, root);
        InferenceResult res =
            runner.evaluate(k, stream, buf, method_rng.split(uint64_t(k)).split("infer"));
        matrix.append_row(res.row);
    }
    return matrix;
}

}  // namespace

AccuracyMatrix baseline_single_ssl(const TaskStream& stream, const RunConfig& cfg) {
    return run_sequential(stream, cfg, 0.0);
}

AccuracyMatrix baseline_ewc_ssl(const TaskStream& stream, const RunConfig& cfg) {
    return run_sequential(stream, cfg, cfg.ewc_lambda);
}

AccuracyMatrix run_mcssl(const TaskStream& stream, const RunConfig& cfg) {
    RngStream root(cfg.seed);
    RngStream method_rng = root.split("mcssl");
    McsslRunner runner(cfg, method_rng);
    AccuracyMatrix matrix;
    for (int64_t k = 0; k < int64_t(stream.tasks.size()); ++k) {
        runner.run_task(k, stream.tasks[size_t(k)], method_rng.split(uint64_t(k)));
        ExemplarBuffer buf = build_buffer(stream, cfg, k + 1, root);
        RngStream infer_rng = method_rng.split(uint64_t(k)).split("infer");
        InferenceResult res = cfg.task_aware
                                  ? runner.infer_task_aware(k, stream, buf, infer_rng)
                                  : runner.infer_task_agnostic(k, stream, buf, infer_rng);
        matrix.append_row(res.row);
    }
    return matrix;
}

// ---- experiment driver ----------------------------------------------------------------------

namespace fs = std::filesystem;

ExperimentDriver::ExperimentDriver(RunConfig cfg) : cfg_(std::move(cfg)), root_(cfg_.seed) {
    LabelledSet pool;
    if (cfg_.dataset.kind == "blobs") {
        pool = gen_synth_blobs(cfg_.dataset.num_classes, cfg_.dataset.per_class,
                               cfg_.dataset.image_size, cfg_.dataset.channels,
                               cfg_.dataset.noise_level, root_.split("dataset").next_u64());
    } else {
        pool = ingest_images(cfg_.dataset.path);
        int64_t file_classes = ssds_class_count(cfg_.dataset.path);
        if (file_classes != cfg_.dataset.num_classes) {
            throw ConfigError("dataset file declares " + std::to_string(file_classes) +
                              " classes, config says " + std::to_string(cfg_.dataset.num_classes));
        }
    }
    stream_ =
        build_semi_split(pool, cfg_.dataset.num_classes, cfg_.stream, root_.split("stream").next_u64());
    state_.config = cfg_;
    for (const auto& m : cfg_.methods) {
        state_.matrices.emplace(m, AccuracyMatrix{});
        state_.next_task.emplace(m, 0);
    }
}

ExemplarBuffer ExperimentDriver::buffer_upto(int64_t k) const {
    ExemplarBuffer buf;
    buf.per_task.assign(buffer_.per_task.begin(), buffer_.per_task.begin() + k);
    return buf;
}

void ExperimentDriver::run(const std::string& out_dir) {
    fs::create_directories(out_dir);
    execute(out_dir, /*resuming=*/false);
}

void ExperimentDriver::resume(const std::string& out_dir) {
    load_state(out_dir);
    execute(out_dir, /*resuming=*/true);
}

void ExperimentDriver::execute(const std::string& out_dir, bool resuming) {
    int64_t K = int64_t(stream_.tasks.size());

    // Exemplar slices are a pure function of (stream, seed); rebuilding them
    // keeps resumed runs bit-identical to uninterrupted ones.
    buffer_.per_task.clear();
    for (int64_t k = 0; k < K; ++k) {
        buffer_.per_task.push_back(select_exemplars(stream_.tasks[size_t(k)],
                                                    cfg_.buffer.labelled_per_task,
                                                    cfg_.buffer.unlabelled_per_task,
                                                    root_.split("buffer").split(uint64_t(k))));
    }
    state_.buffer_tasks = K;

    for (const auto& method : cfg_.methods) {
        RngStream method_rng =
            method == "mcssl" ? root_.split("mcssl") : root_.split("baseline");
        if (method == "mcssl") {
            if (!mcssl_.has_value()) mcssl_.emplace(cfg_, method_rng);
        } else {
            double lambda = method == "ewc-ssl" ? cfg_.ewc_lambda : 0.0;
            auto& slot = method == "ewc-ssl" ? ewc_ : single_;
            if (!slot.has_value()) slot.emplace(cfg_, lambda, method_rng);
        }
        (void)resuming;

        for (int64_t k = state_.next_task.at(method); k < K; ++k) {
            const SemiTask& task = stream_.tasks[size_t(k)];
            RngStream task_rng = method_rng.split(uint64_t(k));
            InferenceResult res;
            if (method == "mcssl") {
                mcssl_->run_task(k, task, task_rng);
                RngStream infer_rng = task_rng.split("infer");
                res = cfg_.task_aware
                          ? mcssl_->infer_task_aware(k, stream_, buffer_upto(k + 1), infer_rng)
                          : mcssl_->infer_task_agnostic(k, stream_, buffer_upto(k + 1), infer_rng);
            } else {
                auto& runner = method == "ewc-ssl" ? ewc_ : single_;
                runner->run_task(k, task, task_rng);
                res = runner->evaluate(k, stream_, buffer_upto(k + 1), task_rng.split("infer"));
            }
            state_.matrices.at(method).append_row(res.row);
            state_.next_task.at(method) = k + 1;
            save_state(out_dir);
        }
    }
    write_results(out_dir);
}

void ExperimentDriver::write_results(const std::string& out_dir) const {
    std::vector<ResultRow> rows;
    for (const auto& method : cfg_.methods) {
        const AccuracyMatrix& m = state_.matrices.at(method);
        if (m.tasks() == 0) continue;
        AccuracyReport acc = avg_accuracy(m);
        ForgettingReport fgt = avg_forgetting(m);
        for (int64_t k = 1; k <= m.tasks(); ++k) {
            rows.push_back({method, k, acc.per_step[size_t(k - 1)], fgt.per_step[size_t(k - 1)],
                            cfg_.seed});
        }
        write_matrix_csv(out_dir + "/matrix_" + method + ".csv", m);
    }
    write_results_csv(out_dir + "/results.csv", rows);
}

namespace {

json prior_store_to_json(const PriorStore& store) {
    json arr = json::array();
    for (const auto& [id, p] : store.entries()) {
        arr.push_back({{"task", id},
                       {"mu", p.mu.data},
                       {"log_var", p.log_var.data}});
    }
    return arr;
}

PriorStore prior_store_from_json(const json& arr) {
    PriorStore store;
    for (const auto& e : arr) {
        TaskPrior p;
        std::vector<double> mu = e.at("mu").get<std::vector<double>>();
        std::vector<double> lv = e.at("log_var").get<std::vector<double>>();
        p.mu = Tensor::from({int64_t(mu.size())}, mu);
        p.log_var = Tensor::from({int64_t(lv.size())}, lv);
        store.record(e.at("task").get<int64_t>(), std::move(p));
    }
    return store;
}

}  // namespace

void ExperimentDriver::save_state(const std::string& out_dir) const {
    json j;
    j["config"] = json::parse(config_to_json(cfg_));
    j["seed"] = cfg_.seed;
    j["buffer_tasks"] = state_.buffer_tasks;
    json methods = json::object();
    for (const auto& method : cfg_.methods) {
        json m;
        m["next_task"] = state_.next_task.at(method);
        m["matrix"] = state_.matrices.at(method).rows();
        if (method == "mcssl" && mcssl_.has_value()) {
            m["priors"] = prior_store_to_json(mcssl_->store());
            save_checkpoint(mcssl_->hyper().params, out_dir + "/mcssl_hyper.mcwt");
        }
        if (method == "single-ssl" && single_.has_value()) {
            save_checkpoint(single_->model(), out_dir + "/single-ssl_model.mcwt");
        }
        if (method == "ewc-ssl" && ewc_.has_value()) {
            save_checkpoint(ewc_->model(), out_dir + "/ewc-ssl_model.mcwt");
            if (ewc_->ewc_state().has_value()) {
                m["has_ewc_state"] = true;
                save_checkpoint(ewc_->ewc_state()->fisher, out_dir + "/ewc-ssl_fisher.mcwt");
                save_checkpoint(ewc_->ewc_state()->anchor, out_dir + "/ewc-ssl_anchor.mcwt");
            }
        }
        methods[method] = std::move(m);
    }
    j["methods"] = std::move(methods);

    // Exemplar slices, persisted for inspection: the only data that survives a
    // task. Unlabelled records carry the -1 sentinel.
    for (int64_t k = 0; k < int64_t(buffer_.per_task.size()); ++k) {
        const auto& s = buffer_.per_task[size_t(k)];
        write_ssds(out_dir + "/buffer_task" + std::to_string(k) + "_lab.ssds", s.labelled,
                   cfg_.dataset.num_classes);
        write_ssds_unlabelled(out_dir + "/buffer_task" + std::to_string(k) + "_unl.ssds",
                              s.unlabelled, cfg_.dataset.num_classes);
    }

    std::ofstream f(out_dir + "/state.json", std::ios::trunc);
    if (!f) throw Error("cannot write state to '" + out_dir + "'");
    f << j.dump(2) << "\n";
}

void ExperimentDriver::load_state(const std::string& out_dir) {
    std::ifstream f(out_dir + "/state.json");
    if (!f) throw Error("no state.json in '" + out_dir + "'");
    json j = json::parse(std::string((std::istreambuf_iterator<char>(f)),
                                     std::istreambuf_iterator<char>()));
    RunConfig file_cfg = parse_config(j.at("config").dump());
    if (config_to_json(file_cfg) != config_to_json(cfg_)) {
        throw ConfigError("resume: config does not match the saved state");
    }

    for (const auto& method : cfg_.methods) {
        const json& m = j.at("methods").at(method);
        int64_t next = m.at("next_task").get<int64_t>();
        state_.next_task.at(method) = next;
        AccuracyMatrix matrix;
        for (const auto& row : m.at("matrix")) {
            matrix.append_row(row.get<std::vector<double>>());
        }
        state_.matrices.at(method) = std::move(matrix);
        if (next == 0) continue;

        RngStream method_rng =
            method == "mcssl" ? root_.split("mcssl") : root_.split("baseline");
        if (method == "mcssl") {
            mcssl_.emplace(cfg_, method_rng);
            HyperParams hyper = mcssl_->hyper();
            hyper.params = load_checkpoint(out_dir + "/mcssl_hyper.mcwt");
            mcssl_->restore(std::move(hyper), prior_store_from_json(m.at("priors")), next);
        } else {
            double lambda = method == "ewc-ssl" ? cfg_.ewc_lambda : 0.0;
            auto& slot = method == "ewc-ssl" ? ewc_ : single_;
            slot.emplace(cfg_, lambda, method_rng);
            ModelParams model = load_checkpoint(out_dir + "/" + method + "_model.mcwt");
            std::optional<EwcPenalty> pen;
            if (method == "ewc-ssl" && m.value("has_ewc_state", false)) {
                EwcPenalty p;
                p.lambda = lambda;
                p.fisher = load_checkpoint(out_dir + "/ewc-ssl_fisher.mcwt");
                p.anchor = load_checkpoint(out_dir + "/ewc-ssl_anchor.mcwt");
                pen = std::move(p);
            }
            slot->restore(std::move(model), std::move(pen), next);
        }
    }
}

}  // namespace metacl
