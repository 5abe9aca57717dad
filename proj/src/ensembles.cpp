#include "cotrainlab/ensembles.hpp"

#include <algorithm>
#include <numeric>

#include "cotrainlab/error.hpp"

namespace cotrainlab::ensembles {

namespace {

void check_members(std::span<const Matrix> members, const char* what) {
    if (members.empty()) throw InvalidInputError(std::string(what) + ": no members");
    for (const Matrix& m : members) {
        if (m.rows != members[0].rows || m.cols != members[0].cols) {
            throw InvalidInputError(std::string(what) + ": member matrices differ in shape");
        }
    }
}

double row_max(std::span<const double> r) { return *std::max_element(r.begin(), r.end()); }

int row_argmax(std::span<const double> r) {
    return static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
}

}  // namespace

std::string to_string(Method m) {
    switch (m) {
        case Method::TakeMax: return "takemax";
        case Method::Average: return "average";
        case Method::Rank: return "rank";
        case Method::Stacked: return "stacked";
    }
    return "?";
}

Method method_from_string(const std::string& name) {
    if (name == "takemax") return Method::TakeMax;
    if (name == "average") return Method::Average;
    if (name == "rank") return Method::Rank;
    if (name == "stacked") return Method::Stacked;
    throw InvalidConfigError("unknown ensemble method '" + name + "'");
}

std::vector<std::size_t> confidence_ranks(const Matrix& probs) {
    std::vector<std::size_t> order(probs.rows);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<double> conf(probs.rows);
    for (std::size_t i = 0; i < probs.rows; ++i) conf[i] = row_max(probs.row(i));
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return conf[a] > conf[b]; });
    std::vector<std::size_t> rank(probs.rows);
    for (std::size_t pos = 0; pos < order.size(); ++pos) rank[order[pos]] = pos + 1;
    return rank;
}

std::vector<int> combine(Method method, std::span<const Matrix> member_probs) {
    check_members(member_probs, "combine");
    const std::size_t rows = member_probs[0].rows;
    const std::size_t cols = member_probs[0].cols;
    std::vector<int> out(rows, 0);
    switch (method) {
        case Method::TakeMax:
            for (std::size_t i = 0; i < rows; ++i) {
                std::size_t best = 0;
                for (std::size_t m = 1; m < member_probs.size(); ++m) {
                    if (row_max(member_probs[m].row(i)) > row_max(member_probs[best].row(i))) best = m;
                }
                out[i] = row_argmax(member_probs[best].row(i));
            }
            break;
        case Method::Average: {
            std::vector<double> mean(cols);
            for (std::size_t i = 0; i < rows; ++i) {
                std::fill(mean.begin(), mean.end(), 0.0);
                for (const Matrix& m : member_probs) {
                    const auto r = m.row(i);
                    for (std::size_t k = 0; k < cols; ++k) mean[k] += r[k];
                }
                out[i] = row_argmax(mean);
            }
            break;
        }
        case Method::Rank: {
            std::vector<std::vector<std::size_t>> ranks;
            for (const Matrix& m : member_probs) ranks.push_back(confidence_ranks(m));
            for (std::size_t i = 0; i < rows; ++i) {
                std::size_t best = 0;
                for (std::size_t m = 1; m < member_probs.size(); ++m) {
                    if (ranks[m][i] < ranks[best][i]) best = m;
                }
                out[i] = row_argmax(member_probs[best].row(i));
            }
            break;
        }
        case Method::Stacked:
            throw InvalidInputError("combine: stacked ensembles need a fitted head (stacked_predict)");
    }
    return out;
}

Matrix stack_logits(std::span<const Matrix> member_logits) {
    check_members(member_logits, "stack_logits");
    const std::size_t rows = member_logits[0].rows;
    const std::size_t cols = member_logits[0].cols;
    Matrix out(rows, cols * member_logits.size());
    for (std::size_t i = 0; i < rows; ++i) {
        auto dst = out.row(i);
        for (std::size_t m = 0; m < member_logits.size(); ++m) {
            const auto src = member_logits[m].row(i);
            std::copy(src.begin(), src.end(), dst.begin() + static_cast<std::ptrdiff_t>(m * cols));
        }
    }
    return out;
}

StackedHead stacked_fit(std::span<const Matrix> member_logits, std::span<const int> labels,
                        int n_classes, const learners::TrainConfig& train, std::uint64_t seed) {
    const Matrix features = stack_logits(member_logits);
    if (features.rows == 0) throw InvalidInputError("stacked_fit: empty validation set");
    if (features.rows != labels.size()) throw InvalidInputError("stacked_fit: row/label count mismatch");

    const learners::InputShape shape{1, static_cast<int>(features.cols), 1};
    learners::ModelParams head = learners::init_learner(learners::LearnerKind::logistic(), shape,
                                                        n_classes, seed);
    std::fill(head.weights.begin(), head.weights.end(), 0.0f);
    learners::LabeledRows rows;
    for (std::size_t i = 0; i < features.rows; ++i) rows.add(features.row(i), labels[i]);
    if (train.epochs > 0) head = learners::fit(head, rows, train, true, seed);
    return {std::move(head), member_logits.size()};
}

std::vector<int> stacked_predict(const StackedHead& head, std::span<const Matrix> member_logits) {
    if (member_logits.size() != head.members) {
        throw InvalidInputError("stacked_predict: head expects " + std::to_string(head.members) +
                                " members, got " + std::to_string(member_logits.size()));
    }
    if (member_logits[0].rows == 0) return {};
    const Matrix features = stack_logits(member_logits);
    return learners::argmax_rows(learners::predict_proba(head.head, features));
}

}  // namespace cotrainlab::ensembles
