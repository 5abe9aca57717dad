#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "cotrainlab/data.hpp"
#include "cotrainlab/learners.hpp"
#include "cotrainlab/matrix.hpp"

// Self-training and co-training over eras. At era t every class may hold
// floor(k * t * |U| / n) pseudo-labeled examples; models are retrained from
// their current weights on X plus the era's pool, and after the last era a
// fresh "standard" model is distilled from X plus the final pool.
namespace cotrainlab::engine {

using data::PoolEntry;
using data::PseudoLabelPool;
using learners::ModelParams;
using learners::TrainConfig;

struct EraSchedule {
    int eras = 20;
    double fraction_per_era = 0.05;
    int epochs_per_era = 0;  // 0: use the member's TrainConfig::epochs

    void validate() const;

    // floor(k * era * unlabeled / n_classes)
    std::size_t per_class_target(int era, std::size_t unlabeled, int n_classes) const;
};

// Labels and ids shared by every view of one semi-supervised problem.
struct Task {
    int n_classes = 0;
    std::vector<int> labeled_labels;
    std::vector<std::uint64_t> unlabeled_ids;
    std::vector<int> validation_labels;
    std::vector<int> test_labels;
};

// One prior's features of the task's splits; rows align with Task.
struct ViewData {
    learners::InputShape shape;
    Matrix labeled;
    Matrix unlabeled;
    Matrix validation;
    Matrix test;
};

struct Member {
    ModelParams params;
    const ViewData* view = nullptr;
    TrainConfig train;
};

struct Prediction {
    std::uint64_t example_id = 0;
    int label = 0;
    double confidence = 0.0;
};

std::vector<Prediction> predict(const ModelParams& params, const Matrix& features,
                                std::span<const std::uint64_t> ids);

// Candidates of each predicted class, most confident first, ties by
// ascending id.
std::vector<std::vector<Prediction>> rank_by_class(std::span<const Prediction> predictions,
                                                   int n_classes);

// Top `per_class_target` examples of every predicted class (all of them on a
// shortfall), tagged with `source`.
PseudoLabelPool select_top_confident(std::span<const Prediction> predictions, int n_classes,
                                     std::size_t per_class_target, int source = 0);

PseudoLabelPool select_top_confident(const ModelParams& params, const Matrix& unlabeled,
                                     std::span<const std::uint64_t> ids,
                                     std::size_t per_class_target, int source = 0);

// Round-robin pool construction for one era: per class, each model in turn
// appends its next most confident candidate; the unique-id count is checked
// after every full round, so a class may overshoot its target by up to
// (#models - 1). Models out of candidates are skipped.
PseudoLabelPool co_train_selection(std::span<const std::vector<Prediction>> per_model,
                                   int n_classes, std::size_t per_class_target);

struct PairPhi {
    int a = 0;
    int b = 0;
    std::optional<double> phi;  // empty when a correctness vector is constant
};

struct EraMetrics {
    int era = 0;
    std::size_t pool_entries = 0;
    std::size_t pool_unique = 0;
    std::vector<double> test_accuracy;        // per model
    std::vector<double> validation_accuracy;  // per model; empty without validation rows
    std::vector<std::vector<std::uint8_t>> test_correct;  // per model
    std::vector<PairPhi> phi;                 // every pair a < b
};

struct RunRecord {
    std::vector<EraMetrics> eras;  // eras[0] describes the incoming models
};

// Evaluates models on their views' test (and validation) rows.
EraMetrics evaluate(std::span<const Member> members, const Task& task, int era,
                    const PseudoLabelPool& pool);

struct RunOptions {
    int threads = 1;
    // Called after each era's training with the era's pool and models.
    std::function<void(int era, const PseudoLabelPool&, std::span<const Member>)> on_era;
};

struct SelfTrainResult {
    ModelParams model;
    PseudoLabelPool pool;
    RunRecord record;
};

SelfTrainResult self_train(const Member& member, const Task& task, const EraSchedule& schedule,
                           std::uint64_t seed, const RunOptions& options = {});

struct CoTrainResult {
    std::vector<ModelParams> models;
    PseudoLabelPool pool;
    RunRecord record;
};

// disjoint = true: model m trains on X plus entries whose source != m.
CoTrainResult co_train(std::span<const Member> members, const Task& task,
                       const EraSchedule& schedule, bool disjoint, std::uint64_t seed,
                       const RunOptions& options = {});

// Seed of model `model`'s warm-start fit in era `era`.
std::uint64_t era_fit_seed(std::uint64_t seed, int era, std::size_t model);

// X plus the pool entries usable by `model` (all of them when model < 0).
learners::LabeledRows training_rows(const ViewData& view, const Task& task,
                                    const PseudoLabelPool& pool, int model = -1);

// Fresh model trained on X plus every pool entry, duplicates included.
ModelParams distill_standard(const PseudoLabelPool& pool, const Task& task, const ViewData& view,
                             const learners::LearnerKind& kind, const TrainConfig& train,
                             std::uint64_t seed);

}  // namespace cotrainlab::engine
