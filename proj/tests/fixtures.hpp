#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <span>
#include <vector>

#include "cotrainlab/engine.hpp"
#include "cotrainlab/learners.hpp"

// Fixtures shared by the unit tests and the acceptance binary.
namespace fixtures {

using namespace cotrainlab;
using namespace cotrainlab::engine;
using learners::LabeledRows;

constexpr int A = 0;
constexpr int B = 1;

// Frozen two-class scorer: logits (0, x) on a 1-D input, so P(B) = sigmoid(x).
// With zero training epochs the model never changes and pools can be traced
// by hand.
inline ModelParams frozen_scorer() {
    auto p = learners::init_learner(learners::LearnerKind::logistic(), {1, 1, 1}, 2, 0);
    p.weights = {0.0f, 1.0f, 0.0f, 0.0f};
    return p;
}

inline double feature_for(int label, double confidence) {
    const double logit = std::log(confidence / (1.0 - confidence));
    return label == B ? logit : -logit;
}

inline ViewData view_from(const std::vector<std::pair<int, double>>& unlabeled) {
    ViewData v;
    v.shape = {1, 1, 1};
    v.labeled = Matrix(2, 1);
    v.labeled.values = {-3.0, 3.0};
    v.unlabeled = Matrix(unlabeled.size(), 1);
    for (std::size_t i = 0; i < unlabeled.size(); ++i) v.unlabeled.values[i] = feature_for(unlabeled[i].first, unlabeled[i].second);
    v.test = Matrix(2, 1);
    v.test.values = {-1.0, 1.0};
    return v;
}

inline Task task_for(std::vector<std::uint64_t> ids) {
    Task t;
    t.n_classes = 2;
    t.labeled_labels = {A, B};
    t.unlabeled_ids = std::move(ids);
    t.test_labels = {A, B};
    return t;
}

inline TrainConfig frozen() {
    TrainConfig c;
    c.epochs = 0;
    return c;
}

inline std::multiset<std::pair<std::uint64_t, int>> contents(const PseudoLabelPool& pool) {
    std::multiset<std::pair<std::uint64_t, int>> out;
    for (const auto& e : pool.entries) out.insert({e.example_id, e.label});
    return out;
}

// Central differences of the mean loss against loss_and_gradient.
inline double max_relative_gradient_error(const ModelParams& p, const Matrix& x, const std::vector<int>& y) {
    std::vector<double> w(p.weights.begin(), p.weights.end());
    std::vector<std::span<const double>> rows;
    for (std::size_t i = 0; i < x.rows; ++i) rows.push_back(x.row(i));
    std::vector<double> grad(w.size()), scratch(w.size());
    learners::loss_and_gradient(p, w, rows, y, grad);
    const double eps = 1e-4;
    double worst = 0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double keep = w[i];
        w[i] = keep + eps;
        const double up = learners::loss_and_gradient(p, w, rows, y, scratch);
        w[i] = keep - eps;
        const double down = learners::loss_and_gradient(p, w, rows, y, scratch);
        w[i] = keep;
        const double numeric = (up - down) / (2 * eps);
        const double scale = std::max({std::abs(numeric), std::abs(grad[i]), 1e-6});
        worst = std::max(worst, std::abs(numeric - grad[i]) / scale);
    }
    return worst;
}


}  // namespace fixtures
