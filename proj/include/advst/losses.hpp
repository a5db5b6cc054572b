#pragma once

#include <cstddef>
#include <vector>

#include "advst/tensor.hpp"

// Training objectives. The minimization loss combines cross-entropy with a
// supervised contrastive term and an entropy bonus; the maximization
// objective drives the per-sample ascent over transform parameters:
// prediction loss minus a feature-distance penalty plus an optional
// confusion (entropy) bonus.

namespace advst {

// Mean over the batch of -log softmax(logits) at the true class.
template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<std::size_t>& labels);

// Per-sample -log softmax at the true class; [B].
template <class T>
Tensor<T> cross_entropy_per_sample(const Tensor<T>& logits,
                                   const std::vector<std::size_t>& labels);

// Mean over the batch of the softmax entropy -sum_j p_j log p_j. The log
// argument is clamped at 1e-12 so 0 log 0 contributes 0.
template <class T>
Tensor<T> entropy(const Tensor<T>& logits);

// Per-sample softmax entropy; [B].
template <class T>
Tensor<T> entropy_per_sample(const Tensor<T>& logits);

// Per-sample squared Euclidean distance between embedding rows; [B]. When
// label vectors are supplied they must agree pairwise: the transport cost of
// moving mass between different classes is infinite.
template <class T>
Tensor<T> feature_distance(const Tensor<T>& v, const Tensor<T>& v_prime);
template <class T>
Tensor<T> feature_distance(const Tensor<T>& v, const Tensor<T>& v_prime,
                           const std::vector<std::size_t>& labels,
                           const std::vector<std::size_t>& labels_prime);

// Supervised contrastive loss over unit-norm projection rows, temperature 1:
// sum_i (-1/|P(i)|) sum_{p in P(i)} log( exp(u_i.u_p) / sum_{a != i} exp(u_i.u_a) )
// where P(i) holds the same-label samples other than i. Anchors without
// positives contribute 0. Requires B >= 2.
template <class T>
Tensor<T> contrastive(const Tensor<T>& u, const std::vector<std::size_t>& labels);

template <class T>
struct LossBreakdown {
    Tensor<T> total;          // cross_entropy + contrastive - eta * entropy
    Tensor<T> cross_entropy;  // scalar
    Tensor<T> contrastive;    // scalar (0 when B < 2)
    Tensor<T> entropy;        // scalar
};

template <class T>
LossBreakdown<T> minimization_loss(const Tensor<T>& logits,
                                   const std::vector<std::size_t>& labels,
                                   const Tensor<T>& u, double eta);

// Per-sample ascent objective: ce_i - lambda * d_i + epsilon * ent_i, where
// d_i is the feature distance between the frozen source embedding v and the
// transformed embedding v_prime. lambda and epsilon must be nonnegative.
template <class T>
Tensor<T> maximization_objective_per_sample(const Tensor<T>& logits_prime,
                                            const std::vector<std::size_t>& labels,
                                            const Tensor<T>& v, const Tensor<T>& v_prime,
                                            double lambda, double epsilon);

// Batch mean of the per-sample objective.
template <class T>
Tensor<T> maximization_objective(const Tensor<T>& logits_prime,
                                 const std::vector<std::size_t>& labels,
                                 const Tensor<T>& v, const Tensor<T>& v_prime,
                                 double lambda, double epsilon);

}  // namespace advst
