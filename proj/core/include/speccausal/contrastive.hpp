#pragma once

#include "speccausal/linalg.hpp"

namespace speccausal {

// scores(i, j): left item i against right item j; positives on the diagonal.
struct LossResult {
  double value = 0.0;
  Matrix grad;  // d value / d scores
};

// Negated spectral L2 objective: -( (2/n) sum_i s_ii - 1/(n(n-1)) sum_{i!=j} s_ij^2 - 1 ).
LossResult contrastive_l2_loss(const Matrix& scores);

// -(1/n) sum_i log s_ii + (1/n) sum_i log sum_{j!=i} s_ij on strictly positive scores.
LossResult contrastive_mle_loss(const Matrix& scores);

// Elementwise log(1 + exp(s)) and its derivative.
Matrix softplus(const Matrix& s);
Matrix sigmoid(const Matrix& s);

enum class ContrastiveLoss { l2, mle };

ContrastiveLoss parse_loss(const std::string& name);
std::string to_string(ContrastiveLoss l);

// Loss on raw scores: the MLE loss goes through the softplus link first.
LossResult contrastive_loss(ContrastiveLoss kind, const Matrix& raw_scores);

}  // namespace speccausal
