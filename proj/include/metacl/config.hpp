#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "metacl/acgan.hpp"
#include "metacl/bench.hpp"
#include "metacl/hypernet.hpp"

namespace metacl {

struct DatasetConfig {
    std::string kind = "blobs";  // "blobs" | "ssds"
    std::string path;            // for "ssds"
    int64_t num_classes = 8;
    int64_t per_class = 250;
    int64_t image_size = 8;
    int64_t channels = 1;
    double noise_level = 0.5;
};

struct BufferConfig {
    int64_t labelled_per_task = 12;
    int64_t unlabelled_per_task = 48;
};

struct InferenceConfig {
    int64_t ensemble_size = 15;
    int64_t ft_epochs = 2;
    double ft_adam_lr = 1e-4;
};

struct RunConfig {
    uint64_t seed = 1;
    std::vector<std::string> methods = {"mcssl", "single-ssl", "ewc-ssl"};
    bool task_aware = false;
    int64_t max_tasks = 4;  // task one-hot dimension
    int64_t num_base_models = 5;
    DatasetConfig dataset;
    StreamSpec stream;
    BaseTrainConfig base;
    AcganArch arch;  // num_classes/image sizes filled from dataset
    HyperTrainConfig hyper;
    int64_t chunk_size = 250;
    int64_t latent_dim = 10;
    int64_t hidden = 30;
    int64_t chunk_embed_dim = 8;
    BufferConfig buffer;
    InferenceConfig inference;
    double ewc_lambda = 100.0;
};

// The desk-scale default: 8x8x1 synthetic blobs, 8 classes, 4 tasks x 2.
RunConfig blobs8_preset();

// Strict parser: unknown keys anywhere are configuration errors.
RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::string& path);
std::string config_to_json(const RunConfig& cfg);

}  // namespace metacl
