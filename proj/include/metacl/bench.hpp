#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "metacl/data.hpp"
#include "metacl/rng.hpp"

namespace metacl {

// ---- synthetic data ----------------------------------------------------------

// Desk-scale image classes: each class is a fixed smooth spatial pattern plus
// Gaussian pixel noise, clipped to [-1, 1].
LabelledSet gen_synth_blobs(int64_t num_classes, int64_t per_class, int64_t image_size,
                            int64_t channels, double noise_level, uint64_t seed);

// ---- dataset container (SSDS) ------------------------------------------------
// magic "SSDS", version u16, u32 item count, u16 H, u16 W, u16 C,
// u16 class count, then per item: i16 label (-1 = unlabelled) followed by
// H*W*C unsigned bytes mapped linearly onto [-1, 1].

void write_ssds(const std::string& path, const LabelledSet& data, int64_t num_classes);
void write_ssds_unlabelled(const std::string& path, const UnlabelledSet& data,
                           int64_t num_classes);
// Reads a fully-labelled container; a -1 label here is a format error.
LabelledSet ingest_images(const std::string& path);
// Reads any container; items with the -1 sentinel come back unlabelled.
std::pair<LabelledSet, UnlabelledSet> read_ssds(const std::string& path);
int64_t ssds_class_count(const std::string& path);

// ---- stream building -----------------------------------------------------------

struct StreamSpec {
    int64_t tasks = 4;
    int64_t classes_per_task = 2;
    int64_t labelled_per_task = 50;
    int64_t unlabelled_per_task = 200;
    int64_t val_labelled_per_task = 20;
    int64_t val_unlabelled_per_task = 20;
    int64_t test_labelled_per_task = 100;
    int64_t test_unlabelled_per_task = 20;
};

// Splits the pool's classes into disjoint per-task groups (seed-determined
// order) and draws disjoint labelled/unlabelled/val/test items per task.
TaskStream build_semi_split(const LabelledSet& pool, int64_t num_classes, const StreamSpec& spec,
                            uint64_t seed);

// ---- metrics -------------------------------------------------------------------

// Lower-triangular accuracy records a_{k,j}: row k holds the accuracies on
// tasks 1..k after training on task k. Rows are append-only.
class AccuracyMatrix {
public:
    void append_row(std::vector<double> row);
    int64_t tasks() const { return int64_t(rows_.size()); }
    // 1-based task indices, j <= k.
    double at(int64_t k, int64_t j) const;
    const std::vector<std::vector<double>>& rows() const { return rows_; }

private:
    std::vector<std::vector<double>> rows_;
};

struct AccuracyReport {
    double A = 0.0;
    std::vector<double> per_step;  // A_k for k = 1..K
};

struct ForgettingReport {
    double F = 0.0;
    std::vector<double> per_step;  // F_k for k = 1..K; F_1 == 0 by convention
};

AccuracyReport avg_accuracy(const AccuracyMatrix& m);
ForgettingReport avg_forgetting(const AccuracyMatrix& m);

// ---- result files ---------------------------------------------------------------

struct ResultRow {
    std::string method;
    int64_t task_k = 0;
    double a_k = 0.0;
    double f_k = 0.0;
    uint64_t seed = 0;
};

// Deterministic shortest-round-trip formatting for doubles.
std::string format_double(double v);

void write_results_csv(const std::string& path, const std::vector<ResultRow>& rows);
void write_matrix_csv(const std::string& path, const AccuracyMatrix& m);
AccuracyMatrix read_matrix_csv(const std::string& path);

}  // namespace metacl
