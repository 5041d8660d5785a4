#include "metacl/config.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

#include "metacl/errors.hpp"

namespace metacl {

using nlohmann::json;

RunConfig blobs8_preset() {
    RunConfig cfg;
    cfg.seed = 1;
    cfg.methods = {"mcssl", "single-ssl", "ewc-ssl"};
    cfg.max_tasks = 4;
    cfg.num_base_models = 5;

    cfg.dataset.kind = "blobs";
    cfg.dataset.num_classes = 8;
    cfg.dataset.per_class = 250;
    cfg.dataset.image_size = 8;
    cfg.dataset.channels = 1;
    cfg.dataset.noise_level = 0.5;

    cfg.stream.tasks = 4;
    cfg.stream.classes_per_task = 2;
    cfg.stream.labelled_per_task = 50;
    cfg.stream.unlabelled_per_task = 200;
    cfg.stream.val_labelled_per_task = 20;
    cfg.stream.val_unlabelled_per_task = 20;
    cfg.stream.test_labelled_per_task = 100;
    cfg.stream.test_unlabelled_per_task = 20;

    cfg.base.epochs = 30;
    cfg.base.batch_size = 16;
    cfg.base.adam_lr = 2e-4;

    cfg.arch.image_hw = 8;
    cfg.arch.image_channels = 1;
    cfg.arch.num_classes = 8;

    cfg.hyper.epochs = 5;
    cfg.hyper.adadelta_lr = 0.005;
    cfg.hyper.pseudo_models = 5;
    cfg.chunk_size = 250;
    cfg.latent_dim = 10;
    cfg.hidden = 30;
    cfg.chunk_embed_dim = 8;

    cfg.buffer.labelled_per_task = 12;
    cfg.buffer.unlabelled_per_task = 48;

    cfg.inference.ensemble_size = 15;
    cfg.inference.ft_epochs = 2;
    cfg.inference.ft_adam_lr = 1e-4;

    cfg.ewc_lambda = 100.0;
    return cfg;
}

namespace {

void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (!allowed.count(it.key())) {
            throw ConfigError("unknown config key '" + it.key() + "' in " + where);
        }
    }
}

template <typename T>
void get_if(const json& obj, const char* key, T& out) {
    if (obj.contains(key)) {
        try {
            out = obj.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(std::string("bad value for config key '") + key + "': " + e.what());
        }
    }
}

}  // namespace

RunConfig parse_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config root must be a JSON object");

    RunConfig cfg = blobs8_preset();
    check_keys(j,
               {"seed", "methods", "task_aware", "max_tasks", "num_base_models", "dataset",
                "stream", "base", "hypernet", "buffer", "inference", "ewc"},
               "config root");
    get_if(j, "seed", cfg.seed);
    get_if(j, "methods", cfg.methods);
    get_if(j, "task_aware", cfg.task_aware);
    get_if(j, "max_tasks", cfg.max_tasks);
    get_if(j, "num_base_models", cfg.num_base_models);

    for (const auto& m : cfg.methods) {
        if (m != "mcssl" && m != "single-ssl" && m != "ewc-ssl") {
            throw ConfigError("unknown method '" + m + "'");
        }
    }

    if (j.contains("dataset")) {
        const json& d = j.at("dataset");
        check_keys(d,
                   {"kind", "path", "num_classes", "per_class", "image_size", "channels",
                    "noise_level"},
                   "dataset");
        get_if(d, "kind", cfg.dataset.kind);
        get_if(d, "path", cfg.dataset.path);
        get_if(d, "num_classes", cfg.dataset.num_classes);
        get_if(d, "per_class", cfg.dataset.per_class);
        get_if(d, "image_size", cfg.dataset.image_size);
        get_if(d, "channels", cfg.dataset.channels);
        get_if(d, "noise_level", cfg.dataset.noise_level);
        if (cfg.dataset.kind != "blobs" && cfg.dataset.kind != "ssds") {
            throw ConfigError("dataset.kind must be 'blobs' or 'ssds'");
        }
    }
    if (j.contains("stream")) {
        const json& s = j.at("stream");
        check_keys(s,
                   {"tasks", "classes_per_task", "labelled_per_task", "unlabelled_per_task",
                    "val_labelled_per_task", "val_unlabelled_per_task", "test_labelled_per_task",
                    "test_unlabelled_per_task"},
                   "stream");
        get_if(s, "tasks", cfg.stream.tasks);
        get_if(s, "classes_per_task", cfg.stream.classes_per_task);
        get_if(s, "labelled_per_task", cfg.stream.labelled_per_task);
        get_if(s, "unlabelled_per_task", cfg.stream.unlabelled_per_task);
        get_if(s, "val_labelled_per_task", cfg.stream.val_labelled_per_task);
        get_if(s, "val_unlabelled_per_task", cfg.stream.val_unlabelled_per_task);
        get_if(s, "test_labelled_per_task", cfg.stream.test_labelled_per_task);
        get_if(s, "test_unlabelled_per_task", cfg.stream.test_unlabelled_per_task);
    }
    if (j.contains("base")) {
        const json& b = j.at("base");
        check_keys(b,
                   {"epochs", "batch_size", "adam_lr", "clamp_eps", "noise_dim", "embed_dim",
                    "g_base_channels", "g_filters", "d_filters1", "d_filters2", "upsample_scale",
                    "leaky_slope", "bn_eps", "dropout_p"},
                   "base");
        get_if(b, "epochs", cfg.base.epochs);
        get_if(b, "batch_size", cfg.base.batch_size);
        get_if(b, "adam_lr", cfg.base.adam_lr);
        get_if(b, "clamp_eps", cfg.base.clamp_eps);
        get_if(b, "noise_dim", cfg.arch.noise_dim);
        get_if(b, "embed_dim", cfg.arch.embed_dim);
        get_if(b, "g_base_channels", cfg.arch.g_base_channels);
        get_if(b, "g_filters", cfg.arch.g_filters);
        get_if(b, "d_filters1", cfg.arch.d_filters1);
        get_if(b, "d_filters2", cfg.arch.d_filters2);
        get_if(b, "upsample_scale", cfg.arch.upsample_scale);
        get_if(b, "leaky_slope", cfg.arch.leaky_slope);
        get_if(b, "bn_eps", cfg.arch.bn_eps);
        get_if(b, "dropout_p", cfg.arch.dropout_p);
    }
    if (j.contains("hypernet")) {
        const json& h = j.at("hypernet");
        check_keys(h,
                   {"chunk_size", "latent_dim", "hidden", "chunk_embed_dim", "epochs",
                    "adadelta_lr", "pseudo_models"},
                   "hypernet");
        get_if(h, "chunk_size", cfg.chunk_size);
        get_if(h, "latent_dim", cfg.latent_dim);
        get_if(h, "hidden", cfg.hidden);
        get_if(h, "chunk_embed_dim", cfg.chunk_embed_dim);
        get_if(h, "epochs", cfg.hyper.epochs);
        get_if(h, "adadelta_lr", cfg.hyper.adadelta_lr);
        get_if(h, "pseudo_models", cfg.hyper.pseudo_models);
    }
    if (j.contains("buffer")) {
        const json& b = j.at("buffer");
        check_keys(b, {"labelled_per_task", "unlabelled_per_task"}, "buffer");
        get_if(b, "labelled_per_task", cfg.buffer.labelled_per_task);
        get_if(b, "unlabelled_per_task", cfg.buffer.unlabelled_per_task);
    }
    if (j.contains("inference")) {
        const json& i = j.at("inference");
        check_keys(i, {"ensemble_size", "ft_epochs", "ft_adam_lr"}, "inference");
        get_if(i, "ensemble_size", cfg.inference.ensemble_size);
        get_if(i, "ft_epochs", cfg.inference.ft_epochs);
        get_if(i, "ft_adam_lr", cfg.inference.ft_adam_lr);
    }
    if (j.contains("ewc")) {
        const json& e = j.at("ewc");
        check_keys(e, {"lambda"}, "ewc");
        get_if(e, "lambda", cfg.ewc_lambda);
    }

    cfg.arch.image_hw = cfg.dataset.image_size;
    cfg.arch.image_channels = cfg.dataset.channels;
    cfg.arch.num_classes = cfg.dataset.num_classes;
    if (cfg.max_tasks < cfg.stream.tasks) {
        throw ConfigError("max_tasks must cover the stream's task count");
    }
    if (cfg.ewc_lambda < 0.0) throw ConfigError("ewc.lambda must be >= 0");
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file '" + path + "'");
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return parse_config(text);
}

std::string config_to_json(const RunConfig& cfg) {
    json j;
    j["seed"] = cfg.seed;
    j["methods"] = cfg.methods;
    j["task_aware"] = cfg.task_aware;
    j["max_tasks"] = cfg.max_tasks;
    j["num_base_models"] = cfg.num_base_models;
    j["dataset"] = {{"kind", cfg.dataset.kind},
                    {"path", cfg.dataset.path},
                    {"num_classes", cfg.dataset.num_classes},
                    {"per_class", cfg.dataset.per_class},
                    {"image_size", cfg.dataset.image_size},
                    {"channels", cfg.dataset.channels},
                    {"noise_level", cfg.dataset.noise_level}};
    j["stream"] = {{"tasks", cfg.stream.tasks},
                   {"classes_per_task", cfg.stream.classes_per_task},
                   {"labelled_per_task", cfg.stream.labelled_per_task},
                   {"unlabelled_per_task", cfg.stream.unlabelled_per_task},
                   {"val_labelled_per_task", cfg.stream.val_labelled_per_task},
                   {"val_unlabelled_per_task", cfg.stream.val_unlabelled_per_task},
                   {"test_labelled_per_task", cfg.stream.test_labelled_per_task},
                   {"test_unlabelled_per_task", cfg.stream.test_unlabelled_per_task}};
    j["base"] = {{"epochs", cfg.base.epochs},
                 {"batch_size", cfg.base.batch_size},
                 {"adam_lr", cfg.base.adam_lr},
                 {"clamp_eps", cfg.base.clamp_eps},
                 {"noise_dim", cfg.arch.noise_dim},
                 {"embed_dim", cfg.arch.embed_dim},
                 {"g_base_channels", cfg.arch.g_base_channels},
                 {"g_filters", cfg.arch.g_filters},
                 {"d_filters1", cfg.arch.d_filters1},
                 {"d_filters2", cfg.arch.d_filters2},
                 {"upsample_scale", cfg.arch.upsample_scale},
                 {"leaky_slope", cfg.arch.leaky_slope},
                 {"bn_eps", cfg.arch.bn_eps},
                 {"dropout_p", cfg.arch.dropout_p}};
    j["hypernet"] = {{"chunk_size", cfg.chunk_size},
                     {"latent_dim", cfg.latent_dim},
                     {"hidden", cfg.hidden},
                     {"chunk_embed_dim", cfg.chunk_embed_dim},
                     {"epochs", cfg.hyper.epochs},
                     {"adadelta_lr", cfg.hyper.adadelta_lr},
                     {"pseudo_models", cfg.hyper.pseudo_models}};
    j["buffer"] = {{"labelled_per_task", cfg.buffer.labelled_per_task},
                   {"unlabelled_per_task", cfg.buffer.unlabelled_per_task}};
    j["inference"] = {{"ensemble_size", cfg.inference.ensemble_size},
                      {"ft_epochs", cfg.inference.ft_epochs},
                      {"ft_adam_lr", cfg.inference.ft_adam_lr}};
    j["ewc"] = {{"lambda", cfg.ewc_lambda}};
    return j.dump(2);
}

}  // namespace metacl
