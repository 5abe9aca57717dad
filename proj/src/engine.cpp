#include "cotrainlab/engine.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_map>
#include <unordered_set>

#include "cotrainlab/diagnostics.hpp"
#include "cotrainlab/error.hpp"
#include "cotrainlab/parallel.hpp"
#include "cotrainlab/rng.hpp"

namespace cotrainlab::engine {

void EraSchedule::validate() const {
    if (eras < 1) throw InvalidConfigError("schedule: eras must be >= 1");
    if (fraction_per_era < 0) throw InvalidConfigError("schedule: fraction_per_era must be >= 0");
    if (fraction_per_era * eras > 1.0 + 1e-9) {
        throw InvalidConfigError("schedule: fraction_per_era * eras exceeds 1");
    }
    if (epochs_per_era < 0) throw InvalidConfigError("schedule: epochs_per_era must be >= 0");
}

std::size_t EraSchedule::per_class_target(int era, std::size_t unlabeled, int n_classes) const {
    if (n_classes < 1) return 0;
    const double exact = fraction_per_era * era * static_cast<double>(unlabeled) / n_classes;
    return static_cast<std::size_t>(std::floor(exact + 1e-9));
}

std::vector<Prediction> predict(const ModelParams& params, const Matrix& features,
                                std::span<const std::uint64_t> ids) {
    if (features.rows != ids.size()) throw InvalidInputError("predict: row/id count mismatch");
    const Matrix probs = learners::predict_proba(params, features);
    std::vector<Prediction> out(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto r = probs.row(i);
        const auto best = std::max_element(r.begin(), r.end());
        out[i] = {ids[i], static_cast<int>(best - r.begin()), *best};
    }
    return out;
}

std::vector<std::vector<Prediction>> rank_by_class(std::span<const Prediction> predictions,
                                                   int n_classes) {
    std::vector<std::vector<Prediction>> by_class(static_cast<std::size_t>(n_classes));
    for (const auto& p : predictions) {
        if (p.label < 0 || p.label >= n_classes) throw InvalidInputError("rank_by_class: label out of range");
        by_class[static_cast<std::size_t>(p.label)].push_back(p);
    }
    for (auto& list : by_class) {
        std::sort(list.begin(), list.end(), [](const Prediction& a, const Prediction& b) {
            if (a.confidence != b.confidence) return a.confidence > b.confidence;
            return a.example_id < b.example_id;
        });
    }
    return by_class;
}

PseudoLabelPool select_top_confident(std::span<const Prediction> predictions, int n_classes,
                                     std::size_t per_class_target, int source) {
    PseudoLabelPool pool;
    for (const auto& list : rank_by_class(predictions, n_classes)) {
        const std::size_t take = std::min(per_class_target, list.size());
        for (std::size_t k = 0; k < take; ++k) {
            pool.entries.push_back({list[k].example_id, list[k].label, source, list[k].confidence});
        }
    }
    return pool;
}

PseudoLabelPool select_top_confident(const ModelParams& params, const Matrix& unlabeled,
                                     std::span<const std::uint64_t> ids,
                                     std::size_t per_class_target, int source) {
    return select_top_confident(predict(params, unlabeled, ids), params.n_classes, per_class_target,
                                source);
}

PseudoLabelPool co_train_selection(std::span<const std::vector<Prediction>> per_model,
                                   int n_classes, std::size_t per_class_target) {
    std::vector<std::vector<std::vector<Prediction>>> ranked;
    ranked.reserve(per_model.size());
    for (const auto& preds : per_model) ranked.push_back(rank_by_class(preds, n_classes));

    PseudoLabelPool pool;
    for (int c = 0; c < n_classes; ++c) {
        const auto cls = static_cast<std::size_t>(c);
        std::vector<std::size_t> cursor(per_model.size(), 0);
        std::unordered_set<std::uint64_t> unique;
        while (unique.size() < per_class_target) {
            bool added = false;
            for (std::size_t m = 0; m < ranked.size(); ++m) {
                const auto& list = ranked[m][cls];
                if (cursor[m] >= list.size()) continue;
                const Prediction& p = list[cursor[m]++];
                pool.entries.push_back({p.example_id, c, static_cast<int>(m), p.confidence});
                unique.insert(p.example_id);
                added = true;
            }
            if (!added) break;
        }
    }
    return pool;
}

EraMetrics evaluate(std::span<const Member> members, const Task& task, int era,
                    const PseudoLabelPool& pool) {
    EraMetrics m;
    m.era = era;
    m.pool_entries = pool.size();
    m.pool_unique = data::pool_unique_count(pool);
    for (const Member& member : members) {
        const Matrix probs = learners::predict_proba(member.params, member.view->test);
        m.test_correct.push_back(diagnostics::correct_vector(probs, task.test_labels));
        m.test_accuracy.push_back(task.test_labels.empty() ? 0.0 : diagnostics::accuracy(m.test_correct.back()));
        if (!task.validation_labels.empty() && member.view->validation.rows > 0) {
            const Matrix vprobs = learners::predict_proba(member.params, member.view->validation);
            m.validation_accuracy.push_back(
                diagnostics::accuracy(diagnostics::correct_vector(vprobs, task.validation_labels)));
        }
    }
    for (std::size_t a = 0; a < members.size(); ++a) {
        for (std::size_t b = a + 1; b < members.size(); ++b) {
            PairPhi p{static_cast<int>(a), static_cast<int>(b), std::nullopt};
            try {
                p.phi = diagnostics::phi_correlation(m.test_correct[a], m.test_correct[b]).phi;
            } catch (const DegenerateInputError&) {
            } catch (const InvalidInputError&) {
            }
            m.phi.push_back(p);
        }
    }
    return m;
}

learners::LabeledRows training_rows(const ViewData& view, const Task& task,
                                    const PseudoLabelPool& pool, int model) {
    if (view.labeled.rows != task.labeled_labels.size() ||
        view.unlabeled.rows != task.unlabeled_ids.size()) {
        throw InvalidInputError("training_rows: view does not match the task");
    }
    std::unordered_map<std::uint64_t, std::size_t> row_of;
    row_of.reserve(task.unlabeled_ids.size());
    for (std::size_t i = 0; i < task.unlabeled_ids.size(); ++i) row_of.emplace(task.unlabeled_ids[i], i);

    learners::LabeledRows rows;
    rows.rows.reserve(view.labeled.rows + pool.size());
    rows.labels.reserve(view.labeled.rows + pool.size());
    for (std::size_t i = 0; i < view.labeled.rows; ++i) rows.add(view.labeled.row(i), task.labeled_labels[i]);
    for (const PoolEntry& e : pool.entries) {
        if (model >= 0 && e.source == model) continue;
        const auto it = row_of.find(e.example_id);
        if (it == row_of.end()) {
            throw InvalidInputError("training_rows: pool entry " + std::to_string(e.example_id) +
                                    " is not in the unlabeled split");
        }
        rows.add(view.unlabeled.row(it->second), e.label);
    }
    return rows;
}

namespace {

TrainConfig era_config(const TrainConfig& base, const EraSchedule& schedule) {
    TrainConfig cfg = base;
    if (schedule.epochs_per_era > 0) cfg.epochs = schedule.epochs_per_era;
    return cfg;
}

}  // namespace

std::uint64_t era_fit_seed(std::uint64_t seed, int era, std::size_t model) {
    return derive_seed(derive_seed(seed, "era", static_cast<std::uint64_t>(era)), "model", model);
}

SelfTrainResult self_train(const Member& member, const Task& task, const EraSchedule& schedule,
                           std::uint64_t seed, const RunOptions& options) {
    schedule.validate();
    if (member.view == nullptr) throw InvalidInputError("self_train: member has no view");
    std::vector<Member> current{member};
    SelfTrainResult result;
    result.record.eras.push_back(evaluate(current, task, 0, result.pool));

    const TrainConfig cfg = era_config(member.train, schedule);
    for (int era = 1; era <= schedule.eras; ++era) {
        const std::size_t target =
            schedule.per_class_target(era, task.unlabeled_ids.size(), task.n_classes);
        result.pool = select_top_confident(current[0].params, member.view->unlabeled,
                                           task.unlabeled_ids, target, 0);
        const auto rows = training_rows(*member.view, task, result.pool);
        current[0].params = learners::fit(current[0].params, rows, cfg, true, era_fit_seed(seed, era, 0));
        result.record.eras.push_back(evaluate(current, task, era, result.pool));
        if (options.on_era) options.on_era(era, result.pool, current);
    }
    result.model = current[0].params;
    return result;
}

CoTrainResult co_train(std::span<const Member> members, const Task& task,
                       const EraSchedule& schedule, bool disjoint, std::uint64_t seed,
                       const RunOptions& options) {
    schedule.validate();
    if (members.size() < 2) throw InvalidInputError("co_train: needs at least two models");
    for (const Member& m : members) {
        if (m.view == nullptr) throw InvalidInputError("co_train: member has no view");
        if (m.params.n_classes != task.n_classes) throw InvalidInputError("co_train: class count mismatch");
    }
    std::vector<Member> current(members.begin(), members.end());
    CoTrainResult result;
    result.record.eras.push_back(evaluate(current, task, 0, result.pool));

    for (int era = 1; era <= schedule.eras; ++era) {
        const std::size_t target =
            schedule.per_class_target(era, task.unlabeled_ids.size(), task.n_classes);
        std::vector<std::vector<Prediction>> preds(current.size());
        parallel_for(current.size(), options.threads, [&](std::size_t m) {
            preds[m] = predict(current[m].params, current[m].view->unlabeled, task.unlabeled_ids);
        });
        result.pool = co_train_selection(preds, task.n_classes, target);

        // Era barrier: the pool is complete before any model trains on it.
        std::vector<ModelParams> next(current.size());
        parallel_for(current.size(), options.threads, [&](std::size_t m) {
            const auto rows = training_rows(*current[m].view, task, result.pool,
                                            disjoint ? static_cast<int>(m) : -1);
            next[m] = learners::fit(current[m].params, rows, era_config(current[m].train, schedule),
                                    true, era_fit_seed(seed, era, m));
        });
        for (std::size_t m = 0; m < current.size(); ++m) current[m].params = std::move(next[m]);
        result.record.eras.push_back(evaluate(current, task, era, result.pool));
        if (options.on_era) options.on_era(era, result.pool, current);
    }
    for (const Member& m : current) result.models.push_back(m.params);
    return result;
}

ModelParams distill_standard(const PseudoLabelPool& pool, const Task& task, const ViewData& view,
                             const learners::LearnerKind& kind, const TrainConfig& train,
                             std::uint64_t seed) {
    const auto rows = training_rows(view, task, pool);
    if (rows.size() == 0) throw InvalidInputError("distill_standard: nothing to train on");
    const ModelParams geometry =
        learners::init_learner(kind, view.shape, task.n_classes, derive_seed(seed, "init"));
    return learners::fit(geometry, rows, train, false, seed);
}

}  // namespace cotrainlab::engine
