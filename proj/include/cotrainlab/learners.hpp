#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cotrainlab/imagefx.hpp"
#include "cotrainlab/matrix.hpp"

// Small classifiers trained by mini-batch SGD with momentum:
//   Logistic  multinomial logistic regression on the flattened input
//   Mlp       one ReLU hidden layer
//   Patch     a Logistic or Mlp scorer applied to every patch_side x patch_side
//             window (at `stride`), logits averaged over windows before the
//             softmax. The receptive field is therefore one window.
namespace cotrainlab::learners {

enum class Arch : std::uint8_t { Logistic = 0, Mlp = 1, Patch = 2 };

std::string to_string(Arch arch);
Arch arch_from_string(const std::string& name);

struct LearnerKind {
    Arch arch = Arch::Logistic;
    int hidden_units = 0;  // Mlp, or Patch with an Mlp inner scorer
    int patch_side = 0;    // Patch only
    int stride = 1;        // Patch only
    Arch inner = Arch::Logistic;

    static LearnerKind logistic() { return {}; }
    static LearnerKind mlp(int hidden) { return {Arch::Mlp, hidden, 0, 1, Arch::Logistic}; }
    static LearnerKind patch(int side, int stride, Arch inner = Arch::Logistic, int hidden = 0) {
        return {Arch::Patch, hidden, side, stride, inner};
    }

    // Architecture of the per-window scorer (the model itself unless Patch).
    Arch scorer() const noexcept { return arch == Arch::Patch ? inner : arch; }

    friend bool operator==(const LearnerKind&, const LearnerKind&) = default;
};

struct InputShape {
    int height = 0;
    int width = 0;
    int channels = 1;

    std::size_t size() const noexcept {
        return static_cast<std::size_t>(height) * width * channels;
    }
    friend bool operator==(const InputShape&, const InputShape&) = default;
};

// Trained weights plus the geometry needed to interpret them. Weights are
// stored at single precision (the checkpoint precision); training runs in
// double and rounds once at the end of fit().
//
// Layout, scorer input dimension d, hidden h, classes c:
//   Logistic  W[d][c], b[c]
//   Mlp       W1[d][h], b1[h], W2[h][c], b2[c]
struct ModelParams {
    LearnerKind kind;
    InputShape input;
    int n_classes = 0;
    std::uint64_t seed = 0;
    std::vector<float> weights;

    // Scorer input dimension: window size for Patch, full input otherwise.
    std::size_t scorer_inputs() const noexcept;
    std::size_t patch_count() const noexcept;

    friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

struct TrainConfig {
    double lr = 0.05;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    int epochs = 30;
    int lr_drop_every = 0;  // K; 0 disables drops
    double lr_drop_factor = 1.0;  // gamma
    int batch_size = 64;
    imagefx::AugmentConfig augment;

    void validate() const;
    double lr_at_epoch(int epoch) const noexcept;
};

// Rows paired with labels. Rows are views into matrices owned by the caller
// and may repeat (multiset semantics).
struct LabeledRows {
    std::vector<std::span<const double>> rows;
    std::vector<int> labels;

    std::size_t size() const noexcept { return rows.size(); }
    void add(std::span<const double> row, int label) {
        rows.push_back(row);
        labels.push_back(label);
    }
};

std::size_t parameter_count(const LearnerKind& kind, const InputShape& input, int n_classes);

// Scaled-uniform init: weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases 0.
ModelParams init_learner(const LearnerKind& kind, const InputShape& input, int n_classes,
                         std::uint64_t seed);

// Bias entries of the flat parameter vector (true where the entry is a bias).
std::vector<bool> bias_mask(const ModelParams& params);

std::vector<double> softmax(std::span<const double> logits);

Matrix predict_logits(const ModelParams& params, const Matrix& batch);
Matrix predict_proba(const ModelParams& params, const Matrix& batch);

// argmax per row, ties to the lowest class index.
std::vector<int> argmax_rows(const Matrix& m);

// Windows of a flattened image in raster order of their top-left corner.
std::vector<std::vector<double>> extract_patches(std::span<const double> image,
                                                 const InputShape& input, int side, int stride);

// Scores each window with the Patch model's inner scorer and averages the
// logits. Order of `patches` does not matter.
std::vector<double> average_patch_logits(const ModelParams& params,
                                         const std::vector<std::vector<double>>& patches);

// Mean softmax cross-entropy of `weights` (same layout as params.weights) on
// the rows, and its gradient written to `grad`.
double loss_and_gradient(const ModelParams& geometry, std::span<const double> weights,
                         std::span<const std::span<const double>> rows,
                         std::span<const int> labels, std::span<double> grad);

double mean_loss(const ModelParams& params, const LabeledRows& data);

// One momentum step, in place:
//   g~ = g + weight_decay * w;  v = momentum * v + g~;  w -= lr * v
// Throws NumericError on non-finite gradients.
void sgd_step(std::span<double> weights, std::span<const double> grads,
              std::span<double> velocity, const TrainConfig& cfg);

// Mini-batch SGD on mean cross-entropy. warm_start=false re-initializes from
// derive_seed(seed, "init"); the shuffle stream is derive_seed(seed, "shuffle").
// Velocity always starts at zero.
ModelParams fit(const ModelParams& params, const LabeledRows& data, const TrainConfig& cfg,
                bool warm_start, std::uint64_t seed);

}  // namespace cotrainlab::learners
