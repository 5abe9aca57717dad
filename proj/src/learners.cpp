#include "cotrainlab/learners.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cotrainlab/error.hpp"
#include "cotrainlab/rng.hpp"

namespace cotrainlab::learners {

namespace {

// The scorer loops are element-wise over hidden units and classes, so a wider
// vector unit changes speed but not results. GCC picks the clone at load time.
#if defined(__GNUC__) && !defined(__clang__) && defined(__x86_64__) && defined(__linux__)
#define COTRAINLAB_VECTOR_CLONES __attribute__((target_clones("avx2", "default")))
#else
#define COTRAINLAB_VECTOR_CLONES
#endif

// Scorer over one input vector of dimension `in`. See ModelParams for the
// weight layout.
struct Scorer {
    Arch arch;
    std::size_t in;
    std::size_t hidden;
    std::size_t classes;

    std::size_t count() const noexcept {
        if (arch == Arch::Logistic) return in * classes + classes;
        return in * hidden + hidden + hidden * classes + classes;
    }

    // Writes logits; for Mlp also writes post-ReLU activations to `act`.
    COTRAINLAB_VECTOR_CLONES void forward(const double* w, const double* x, double* act, double* logits) const noexcept {
        if (arch == Arch::Logistic) {
            const double* b = w + in * classes;
            std::copy(b, b + classes, logits);
            for (std::size_t i = 0; i < in; ++i) {
                const double xi = x[i];
                if (xi == 0.0) continue;
                const double* wi = w + i * classes;
                for (std::size_t k = 0; k < classes; ++k) logits[k] += xi * wi[k];
            }
            return;
        }
        const double* b1 = w + in * hidden;
        const double* w2 = b1 + hidden;
        const double* b2 = w2 + hidden * classes;
        std::copy(b1, b1 + hidden, act);
        for (std::size_t i = 0; i < in; ++i) {
            const double xi = x[i];
            if (xi == 0.0) continue;
            const double* wi = w + i * hidden;
            for (std::size_t j = 0; j < hidden; ++j) act[j] += xi * wi[j];
        }
        for (std::size_t j = 0; j < hidden; ++j) act[j] = std::max(act[j], 0.0);
        std::copy(b2, b2 + classes, logits);
        for (std::size_t j = 0; j < hidden; ++j) {
            const double aj = act[j];
            if (aj == 0.0) continue;
            const double* wj = w2 + j * classes;
            for (std::size_t k = 0; k < classes; ++k) logits[k] += aj * wj[k];
        }
    }

    // Accumulates d(loss)/d(weights) given d(loss)/d(logits). `dact` is scratch.
    COTRAINLAB_VECTOR_CLONES void backward(const double* w, const double* x, const double* act, const double* dlogits,
                  double* grad, double* dact) const noexcept {
        if (arch == Arch::Logistic) {
            double* gb = grad + in * classes;
            for (std::size_t k = 0; k < classes; ++k) gb[k] += dlogits[k];
            for (std::size_t i = 0; i < in; ++i) {
                const double xi = x[i];
                if (xi == 0.0) continue;
                double* gi = grad + i * classes;
                for (std::size_t k = 0; k < classes; ++k) gi[k] += xi * dlogits[k];
            }
            return;
        }
        const double* w2 = w + in * hidden + hidden;
        double* gb1 = grad + in * hidden;
        double* gw2 = gb1 + hidden;
        double* gb2 = gw2 + hidden * classes;
        for (std::size_t k = 0; k < classes; ++k) gb2[k] += dlogits[k];
        for (std::size_t j = 0; j < hidden; ++j) {
            const double aj = act[j];
            if (aj <= 0.0) {
                dact[j] = 0.0;
                continue;
            }
            const double* wj = w2 + j * classes;
            double* gj = gw2 + j * classes;
            double d = 0.0;
            for (std::size_t k = 0; k < classes; ++k) {
                gj[k] += aj * dlogits[k];
                d += wj[k] * dlogits[k];
            }
            dact[j] = d;
        }
        for (std::size_t j = 0; j < hidden; ++j) gb1[j] += dact[j];
        for (std::size_t i = 0; i < in; ++i) {
            const double xi = x[i];
            if (xi == 0.0) continue;
            double* gi = grad + i * hidden;
            for (std::size_t j = 0; j < hidden; ++j) gi[j] += xi * dact[j];
        }
    }
};

Scorer scorer_for(const ModelParams& p) {
    const LearnerKind& k = p.kind;
    const std::size_t hidden = k.scorer() == Arch::Mlp ? static_cast<std::size_t>(k.hidden_units) : 0;
    return {k.scorer(), p.scorer_inputs(), hidden, static_cast<std::size_t>(p.n_classes)};
}

void copy_patch(const double* image, const InputShape& input, int side, int y0, int x0,
                double* out) {
    const std::size_t row_len = static_cast<std::size_t>(side) * input.channels;
    for (int dy = 0; dy < side; ++dy) {
        const double* src =
            image + (static_cast<std::size_t>(y0 + dy) * input.width + x0) * input.channels;
        std::copy(src, src + row_len, out + dy * row_len);
    }
}

// Per-example forward/backward with reusable buffers.
class Evaluator {
public:
    explicit Evaluator(const ModelParams& geometry)
        : geometry_(geometry), scorer_(scorer_for(geometry)) {
        const auto& k = geometry.kind;
        if (k.arch == Arch::Patch) {
            for (int y = 0; y + k.patch_side <= geometry.input.height; y += k.stride) {
                for (int x = 0; x + k.patch_side <= geometry.input.width; x += k.stride) {
                    corners_.emplace_back(y, x);
                }
            }
        }
        const std::size_t windows = std::max<std::size_t>(corners_.size(), 1);
        patches_.resize(corners_.empty() ? 0 : windows * scorer_.in);
        act_.resize(windows * std::max<std::size_t>(scorer_.hidden, 1));
        dact_.resize(std::max<std::size_t>(scorer_.hidden, 1));
        tmp_logits_.resize(scorer_.classes);
        dlogits_.resize(scorer_.classes);
    }

    void logits(const double* w, const double* x, double* out) {
        if (corners_.empty()) {
            scorer_.forward(w, x, act_.data(), out);
            return;
        }
        const auto& k = geometry_.kind;
        const std::size_t c = scorer_.classes;
        std::fill(out, out + c, 0.0);
        const std::size_t h = std::max<std::size_t>(scorer_.hidden, 1);
        for (std::size_t p = 0; p < corners_.size(); ++p) {
            double* patch = patches_.data() + p * scorer_.in;
            copy_patch(x, geometry_.input, k.patch_side, corners_[p].first, corners_[p].second,
                       patch);
            scorer_.forward(w, patch, act_.data() + p * h, tmp_logits_.data());
            for (std::size_t j = 0; j < c; ++j) out[j] += tmp_logits_[j];
        }
        const double inv = 1.0 / static_cast<double>(corners_.size());
        for (std::size_t j = 0; j < c; ++j) out[j] *= inv;
    }

    // Must follow logits() on the same input; uses cached activations.
    void backward(const double* w, const double* x, const double* dlogits, double* grad) {
        if (corners_.empty()) {
            scorer_.backward(w, x, act_.data(), dlogits, grad, dact_.data());
            return;
        }
        const double inv = 1.0 / static_cast<double>(corners_.size());
        for (std::size_t j = 0; j < scorer_.classes; ++j) dlogits_[j] = dlogits[j] * inv;
        const std::size_t h = std::max<std::size_t>(scorer_.hidden, 1);
        for (std::size_t p = 0; p < corners_.size(); ++p) {
            scorer_.backward(w, patches_.data() + p * scorer_.in, act_.data() + p * h,
                             dlogits_.data(), grad, dact_.data());
        }
    }

private:
    const ModelParams& geometry_;
    Scorer scorer_;
    std::vector<std::pair<int, int>> corners_;
    std::vector<double> patches_;
    std::vector<double> act_;
    std::vector<double> dact_;
    std::vector<double> tmp_logits_;
    std::vector<double> dlogits_;
};

std::vector<double> widen(const std::vector<float>& w) { return {w.begin(), w.end()}; }

void check_geometry(const LearnerKind& kind, const InputShape& input, int n_classes) {
    if (input.height < 1 || input.width < 1 || input.channels < 1 || n_classes < 1) {
        throw InvalidConfigError("learner: input dims and class count must be positive");
    }
    if (kind.scorer() == Arch::Mlp && kind.hidden_units < 1) {
        throw InvalidConfigError("learner: Mlp needs hidden_units >= 1");
    }
    if (kind.arch == Arch::Patch) {
        if (kind.inner == Arch::Patch) throw InvalidConfigError("learner: Patch inner must be Logistic or Mlp");
        if (kind.stride < 1) throw InvalidConfigError("learner: patch stride must be >= 1");
        if (kind.patch_side < 1 || kind.patch_side > input.height || kind.patch_side > input.width) {
            throw InvalidConfigError("learner: patch side " + std::to_string(kind.patch_side) +
                                     " does not fit a " + std::to_string(input.height) + "x" +
                                     std::to_string(input.width) + " input");
        }
    }
}

void check_batch(const ModelParams& params, const Matrix& batch) {
    if (batch.rows > 0 && batch.cols != params.input.size()) {
        throw InvalidInputError("learner: batch has " + std::to_string(batch.cols) +
                                " columns, model expects " + std::to_string(params.input.size()));
    }
}

}  // namespace

std::string to_string(Arch arch) {
    switch (arch) {
        case Arch::Logistic: return "logistic";
        case Arch::Mlp: return "mlp";
        case Arch::Patch: return "patch";
    }
    return "?";
}

Arch arch_from_string(const std::string& name) {
    if (name == "logistic") return Arch::Logistic;
    if (name == "mlp") return Arch::Mlp;
    if (name == "patch") return Arch::Patch;
    throw InvalidConfigError("unknown learner architecture '" + name + "'");
}

std::size_t ModelParams::scorer_inputs() const noexcept {
    if (kind.arch == Arch::Patch) {
        return static_cast<std::size_t>(kind.patch_side) * kind.patch_side * input.channels;
    }
    return input.size();
}

std::size_t ModelParams::patch_count() const noexcept {
    if (kind.arch != Arch::Patch) return 1;
    const auto along = [&](int n) { return static_cast<std::size_t>((n - kind.patch_side) / kind.stride + 1); };
    return along(input.height) * along(input.width);
}

void TrainConfig::validate() const {
    if (!(lr > 0)) throw InvalidConfigError("train: lr must be > 0");
    if (momentum < 0 || momentum >= 1) throw InvalidConfigError("train: momentum must be in [0, 1)");
    if (weight_decay < 0) throw InvalidConfigError("train: weight_decay must be >= 0");
    if (epochs < 1) throw InvalidConfigError("train: epochs must be >= 1");
    if (batch_size < 1) throw InvalidConfigError("train: batch_size must be >= 1");
    if (lr_drop_every < 0 || !(lr_drop_factor > 0)) {
        throw InvalidConfigError("train: lr_drop_every must be >= 0 and lr_drop_factor > 0");
    }
}

double TrainConfig::lr_at_epoch(int epoch) const noexcept {
    if (lr_drop_every <= 0) return lr;
    return lr * std::pow(lr_drop_factor, epoch / lr_drop_every);
}

std::size_t parameter_count(const LearnerKind& kind, const InputShape& input, int n_classes) {
    check_geometry(kind, input, n_classes);
    ModelParams geometry{kind, input, n_classes, 0, {}};
    return scorer_for(geometry).count();
}

ModelParams init_learner(const LearnerKind& kind, const InputShape& input, int n_classes,
                         std::uint64_t seed) {
    check_geometry(kind, input, n_classes);
    ModelParams p{kind, input, n_classes, seed, {}};
    const Scorer s = scorer_for(p);
    p.weights.assign(s.count(), 0.0f);
    Rng rng(seed);
    auto fill = [&](std::size_t offset, std::size_t n, std::size_t fan_in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (std::size_t i = 0; i < n; ++i) {
            p.weights[offset + i] = static_cast<float>(rng.uniform(-bound, bound));
        }
    };
    if (s.arch == Arch::Logistic) {
        fill(0, s.in * s.classes, s.in);
    } else {
        fill(0, s.in * s.hidden, s.in);
        fill(s.in * s.hidden + s.hidden, s.hidden * s.classes, s.hidden);
    }
    return p;
}

std::vector<bool> bias_mask(const ModelParams& params) {
    const Scorer s = scorer_for(params);
    std::vector<bool> mask(s.count(), false);
    if (s.arch == Arch::Logistic) {
        std::fill(mask.begin() + static_cast<std::ptrdiff_t>(s.in * s.classes), mask.end(), true);
    } else {
        const std::size_t b1 = s.in * s.hidden;
        std::fill(mask.begin() + static_cast<std::ptrdiff_t>(b1),
                  mask.begin() + static_cast<std::ptrdiff_t>(b1 + s.hidden), true);
        std::fill(mask.end() - static_cast<std::ptrdiff_t>(s.classes), mask.end(), true);
    }
    return mask;
}

std::vector<double> softmax(std::span<const double> logits) {
    std::vector<double> out(logits.begin(), logits.end());
    if (out.empty()) return out;
    const double mx = *std::max_element(out.begin(), out.end());
    double sum = 0.0;
    for (double& v : out) {
        v = std::exp(v - mx);
        sum += v;
    }
    for (double& v : out) v /= sum;
    return out;
}

Matrix predict_logits(const ModelParams& params, const Matrix& batch) {
    check_batch(params, batch);
    Matrix out(batch.rows, static_cast<std::size_t>(params.n_classes));
    const auto w = widen(params.weights);
    Evaluator eval(params);
    for (std::size_t i = 0; i < batch.rows; ++i) eval.logits(w.data(), batch.row(i).data(), out.row(i).data());
    return out;
}

Matrix predict_proba(const ModelParams& params, const Matrix& batch) {
    Matrix out = predict_logits(params, batch);
    for (std::size_t i = 0; i < out.rows; ++i) {
        const auto p = softmax(out.row(i));
        std::copy(p.begin(), p.end(), out.row(i).begin());
    }
    return out;
}

std::vector<int> argmax_rows(const Matrix& m) {
    std::vector<int> out(m.rows, 0);
    for (std::size_t i = 0; i < m.rows; ++i) {
        const auto r = m.row(i);
        out[i] = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
    }
    return out;
}

std::vector<std::vector<double>> extract_patches(std::span<const double> image,
                                                 const InputShape& input, int side, int stride) {
    if (image.size() != input.size()) throw InvalidInputError("extract_patches: image size mismatch");
    if (side < 1 || side > input.height || side > input.width || stride < 1) {
        throw InvalidInputError("extract_patches: bad window geometry");
    }
    std::vector<std::vector<double>> out;
    const std::size_t dim = static_cast<std::size_t>(side) * side * input.channels;
    for (int y = 0; y + side <= input.height; y += stride) {
        for (int x = 0; x + side <= input.width; x += stride) {
            std::vector<double> patch(dim);
            copy_patch(image.data(), input, side, y, x, patch.data());
            out.push_back(std::move(patch));
        }
    }
    return out;
}

std::vector<double> average_patch_logits(const ModelParams& params,
                                         const std::vector<std::vector<double>>& patches) {
    if (params.kind.arch != Arch::Patch) throw InvalidInputError("average_patch_logits: not a Patch model");
    if (patches.empty()) throw InvalidInputError("average_patch_logits: no patches");
    const Scorer s = scorer_for(params);
    const auto w = widen(params.weights);
    std::vector<double> act(std::max<std::size_t>(s.hidden, 1));
    std::vector<double> logits(s.classes);
    std::vector<double> sum(s.classes, 0.0);
    for (const auto& patch : patches) {
        if (patch.size() != s.in) throw InvalidInputError("average_patch_logits: patch size mismatch");
        s.forward(w.data(), patch.data(), act.data(), logits.data());
        for (std::size_t k = 0; k < s.classes; ++k) sum[k] += logits[k];
    }
    for (double& v : sum) v /= static_cast<double>(patches.size());
    return sum;
}

double loss_and_gradient(const ModelParams& geometry, std::span<const double> weights,
                         std::span<const std::span<const double>> rows,
                         std::span<const int> labels, std::span<double> grad) {
    const Scorer s = scorer_for(geometry);
    if (weights.size() != s.count() || grad.size() != s.count()) {
        throw InvalidInputError("loss_and_gradient: weight vector has wrong length");
    }
    if (rows.size() != labels.size()) throw InvalidInputError("loss_and_gradient: rows/labels mismatch");
    std::fill(grad.begin(), grad.end(), 0.0);
    if (rows.empty()) return 0.0;

    Evaluator eval(geometry);
    std::vector<double> logits(s.classes);
    std::vector<double> dlogits(s.classes);
    const double inv_n = 1.0 / static_cast<double>(rows.size());
    double loss = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != geometry.input.size()) {
            throw InvalidInputError("loss_and_gradient: row has wrong length");
        }
        eval.logits(weights.data(), rows[i].data(), logits.data());
        const double mx = *std::max_element(logits.begin(), logits.end());
        double z = 0.0;
        for (std::size_t k = 0; k < s.classes; ++k) z += std::exp(logits[k] - mx);
        const double log_z = mx + std::log(z);
        loss += (log_z - logits[static_cast<std::size_t>(labels[i])]) * inv_n;
        for (std::size_t k = 0; k < s.classes; ++k) dlogits[k] = std::exp(logits[k] - log_z) * inv_n;
        dlogits[static_cast<std::size_t>(labels[i])] -= inv_n;
        eval.backward(weights.data(), rows[i].data(), dlogits.data(), grad.data());
    }
    return loss;
}

double mean_loss(const ModelParams& params, const LabeledRows& data) {
    const auto w = widen(params.weights);
    std::vector<double> grad(w.size());
    return loss_and_gradient(params, w, data.rows, data.labels, grad);
}

void sgd_step(std::span<double> weights, std::span<const double> grads,
              std::span<double> velocity, const TrainConfig& cfg) {
    if (weights.size() != grads.size() || weights.size() != velocity.size()) {
        throw InvalidInputError("sgd_step: shape mismatch");
    }
    for (double g : grads) {
        if (!std::isfinite(g)) throw NumericError("sgd_step: non-finite gradient");
    }
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const double g = grads[i] + cfg.weight_decay * weights[i];
        velocity[i] = cfg.momentum * velocity[i] + g;
        weights[i] -= cfg.lr * velocity[i];
    }
}

ModelParams fit(const ModelParams& params, const LabeledRows& data, const TrainConfig& cfg,
                bool warm_start, std::uint64_t seed) {
    if (data.rows.empty()) throw InvalidInputError("fit: empty training set");
    if (data.rows.size() != data.labels.size()) throw InvalidInputError("fit: rows/labels mismatch");
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (data.labels[i] < 0 || data.labels[i] >= params.n_classes) {
            throw InvalidInputError("fit: label " + std::to_string(data.labels[i]) + " out of range");
        }
        if (data.rows[i].size() != params.input.size()) {
            throw InvalidInputError("fit: row " + std::to_string(i) + " has wrong length");
        }
    }
    if (cfg.epochs < 0 || cfg.batch_size < 1) throw InvalidInputError("fit: bad epochs/batch_size");

    ModelParams out = warm_start ? params
                                 : init_learner(params.kind, params.input, params.n_classes,
                                                derive_seed(seed, "init"));
    if (cfg.epochs == 0) return out;

    std::vector<double> w = widen(out.weights);
    std::vector<double> velocity(w.size(), 0.0);
    std::vector<double> grad(w.size(), 0.0);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(seed, "shuffle"));

    const bool augmenting = cfg.augment.enabled();
    const InputShape& shape = params.input;
    if (augmenting && shape.channels != 1 && shape.channels != 3) {
        throw InvalidInputError("fit: augmentation needs 1- or 3-channel image inputs");
    }
    std::vector<Image> augmented;
    std::vector<std::span<const double>> batch_rows;
    std::vector<int> batch_labels;
    const auto n = data.size();
    const auto bs = static_cast<std::size_t>(cfg.batch_size);

    TrainConfig step_cfg = cfg;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        step_cfg.lr = cfg.lr_at_epoch(epoch);
        shuffle_rng.shuffle(std::span<std::size_t>(order));
        for (std::size_t start = 0; start < n; start += bs) {
            const std::size_t end = std::min(n, start + bs);
            batch_rows.clear();
            batch_labels.clear();
            augmented.clear();
            augmented.reserve(end - start);
            for (std::size_t b = start; b < end; ++b) {
                const std::size_t idx = order[b];
                if (augmenting) {
                    Image img(shape.height, shape.width, shape.channels);
                    std::copy(data.rows[idx].begin(), data.rows[idx].end(), img.data.begin());
                    Rng aug_rng(derive_seed(seed, "augment",
                                            static_cast<std::uint64_t>(epoch) * n + idx));
                    augmented.push_back(imagefx::augment(img, aug_rng, cfg.augment));
                    batch_rows.emplace_back(augmented.back().data);
                } else {
                    batch_rows.push_back(data.rows[idx]);
                }
                batch_labels.push_back(data.labels[idx]);
            }
            loss_and_gradient(out, w, batch_rows, batch_labels, grad);
            sgd_step(w, grad, velocity, step_cfg);
        }
    }
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (!std::isfinite(w[i])) throw NumericError("fit: parameters diverged");
        out.weights[i] = static_cast<float>(w[i]);
    }
    out.seed = warm_start ? params.seed : derive_seed(seed, "init");
    return out;
}

}  // namespace cotrainlab::learners
