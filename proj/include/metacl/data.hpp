#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "metacl/tensor.hpp"

namespace metacl {

// Images are (N, C, H, W) with values in [-1, 1].
struct LabelledSet {
    Tensor images;
    std::vector<int64_t> labels;
    std::vector<int64_t> item_ids;  // provenance: source dataset indices

    int64_t size() const { return int64_t(labels.size()); }
    bool empty() const { return labels.empty(); }
};

struct UnlabelledSet {
    Tensor images;
    std::vector<int64_t> item_ids;

    int64_t size() const { return images.shape.empty() ? 0 : images.shape[0]; }
    bool empty() const { return size() == 0; }
};

struct SemiSplit {
    LabelledSet labelled;
    UnlabelledSet unlabelled;
};

// One semi-supervised task: labelled + unlabelled train data with val/test
// splits, covering a fixed set of global class ids.
struct SemiTask {
    SemiSplit train;
    SemiSplit val;
    SemiSplit test;
    std::vector<int64_t> classes;
};

struct StreamProvenance {
    std::string dataset_id;
    uint64_t seed = 0;
    int64_t labelled_per_task = 0;
    int64_t unlabelled_per_task = 0;
};

struct TaskStream {
    std::vector<SemiTask> tasks;
    int64_t num_classes = 0;  // global class count
    StreamProvenance provenance;
};

// Extracts rows [first, last) of a (N,C,H,W) image tensor.
Tensor image_rows(const Tensor& images, const std::vector<int64_t>& rows);

}  // namespace metacl
