#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cotrainlab/learners.hpp"
#include "cotrainlab/matrix.hpp"

// Post-hoc combination of member predictions. Members may see different
// views of the same examples, so the combiners work on per-member
// probability (or logit) matrices whose rows are aligned.
//
// Tie rules: between members, the lower member index wins; between classes,
// the lower class index; in Rank, equal confidences are ordered by example
// index (row).
namespace cotrainlab::ensembles {

enum class Method { TakeMax, Average, Rank, Stacked };

std::string to_string(Method m);
Method method_from_string(const std::string& name);

// TakeMax: per row, the prediction of the member with the largest max-prob.
// Average: argmax of the mean probability vector.
// Rank: every member ranks all rows by its max-prob (1 = most confident);
// each row follows the member that ranks it best.
std::vector<int> combine(Method method, std::span<const Matrix> member_probs);

// Rank of every row under one member's max-probability ordering (1-based).
std::vector<std::size_t> confidence_ranks(const Matrix& probs);

struct StackedHead {
    learners::ModelParams head;  // Logistic over concatenated member logits
    std::size_t members = 0;
};

// Concatenates member logits row-wise: [m0 logits | m1 logits | ...].
Matrix stack_logits(std::span<const Matrix> member_logits);

// Multinomial logistic head fit on validation logits. The head starts from
// all-zero weights, so zero epochs gives uniform predictions.
StackedHead stacked_fit(std::span<const Matrix> member_logits, std::span<const int> labels,
                        int n_classes, const learners::TrainConfig& train, std::uint64_t seed);

std::vector<int> stacked_predict(const StackedHead& head, std::span<const Matrix> member_logits);

}  // namespace cotrainlab::ensembles
