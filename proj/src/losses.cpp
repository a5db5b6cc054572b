#include "advst/losses.hpp"

#include <string>

#include "advst/errors.hpp"
#include "advst/ops.hpp"

namespace advst {

namespace o = ops;

namespace {

template <class T>
void check_logits(const char* who, const Tensor<T>& logits,
                  const std::vector<std::size_t>& labels) {
    if (!logits.defined() || logits.rank() != 2 || logits.dim(0) == 0)
        throw ContractError(std::string(who) + ": logits must be [B,C] with B >= 1");
    if (labels.size() != logits.dim(0))
        throw ContractError(std::string(who) + ": " + std::to_string(labels.size()) +
                            " labels for batch of " + std::to_string(logits.dim(0)));
}

template <class T>
void check_rows(const char* who, const Tensor<T>& a, const Tensor<T>& b) {
    if (!a.defined() || !b.defined() || a.rank() != 2 || a.shape() != b.shape())
        throw ContractError(std::string(who) + ": arguments must be rank-2 with " +
                            "matching shapes");
}

}  // namespace

template <class T>
Tensor<T> cross_entropy_per_sample(const Tensor<T>& logits,
                                   const std::vector<std::size_t>& labels) {
    check_logits("cross_entropy", logits, labels);
    return o::neg(o::gather_labels(o::log_softmax(logits), labels));
}

template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<std::size_t>& labels) {
    return o::mean_all(cross_entropy_per_sample(logits, labels));
}

template <class T>
Tensor<T> entropy_per_sample(const Tensor<T>& logits) {
    if (!logits.defined() || logits.rank() != 2 || logits.dim(0) == 0)
        throw ContractError("entropy: logits must be [B,C] with B >= 1");
    Tensor<T> p = o::softmax(logits);
    Tensor<T> logp = o::log(o::clamp(p, 1e-12, 1.0));
    return o::neg(o::sum_axis(o::mul(p, logp), 1));
}

template <class T>
Tensor<T> entropy(const Tensor<T>& logits) {
    return o::mean_all(entropy_per_sample(logits));
}

template <class T>
Tensor<T> feature_distance(const Tensor<T>& v, const Tensor<T>& v_prime) {
    check_rows("feature_distance", v, v_prime);
    return o::sum_axis(o::power(o::sub(v, v_prime), 2.0), 1);
}

template <class T>
Tensor<T> feature_distance(const Tensor<T>& v, const Tensor<T>& v_prime,
                           const std::vector<std::size_t>& labels,
                           const std::vector<std::size_t>& labels_prime) {
    check_rows("feature_distance", v, v_prime);
    if (labels.size() != v.dim(0) || labels_prime.size() != v.dim(0))
        throw ContractError("feature_distance: label vectors must match the batch");
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] != labels_prime[i])
            throw InfiniteCostError(
                "feature_distance: sample " + std::to_string(i) + " moves between " +
                "classes " + std::to_string(labels[i]) + " and " +
                std::to_string(labels_prime[i]));
    return feature_distance(v, v_prime);
}

template <class T>
Tensor<T> contrastive(const Tensor<T>& u, const std::vector<std::size_t>& labels) {
    if (!u.defined() || u.rank() != 2)
        throw ContractError("contrastive: projections must be [B,D]");
    const std::size_t b = u.dim(0);
    if (b < 2)
        throw ContractError("contrastive: need a batch of at least 2, got " +
                            std::to_string(b));
    if (labels.size() != b)
        throw ContractError("contrastive: " + std::to_string(labels.size()) +
                            " labels for batch of " + std::to_string(b));

    // Constant masks built from the labels: off-diagonal pairs for the
    // denominator, per-anchor positive weights 1/|P(i)| for the numerator.
    Tensor<T> off_diag = Tensor<T>::zeros({b, b});
    Tensor<T> pos_weight = Tensor<T>::zeros({b, b});
    Tensor<T> has_pos = Tensor<T>::zeros({b});
    for (std::size_t i = 0; i < b; ++i) {
        std::size_t npos = 0;
        for (std::size_t j = 0; j < b; ++j)
            if (j != i && labels[j] == labels[i]) ++npos;
        for (std::size_t j = 0; j < b; ++j) {
            if (j == i) continue;
            off_diag.at({i, j}) = T(1);
            if (labels[j] == labels[i])
                pos_weight.at({i, j}) = T(1) / static_cast<T>(npos);
        }
        has_pos.at({i}) = npos > 0 ? T(1) : T(0);
    }

    // Similarities are bounded by the unit rows, so plain exp is stable.
    Tensor<T> sims = o::matmul(u, o::transpose(u));
    Tensor<T> log_denom = o::log(o::sum_axis(o::mul(o::exp(sims), off_diag), 1));
    Tensor<T> pos_term = o::sum_all(o::mul(pos_weight, sims));
    Tensor<T> denom_term = o::sum_all(o::mul(has_pos, log_denom));
    return o::sub(denom_term, pos_term);
}

template <class T>
LossBreakdown<T> minimization_loss(const Tensor<T>& logits,
                                   const std::vector<std::size_t>& labels,
                                   const Tensor<T>& u, double eta) {
    LossBreakdown<T> out;
    out.cross_entropy = cross_entropy(logits, labels);
    out.contrastive = logits.dim(0) >= 2 ? contrastive(u, labels)
                                         : Tensor<T>::scalar(T(0));
    out.entropy = entropy(logits);
    out.total = o::add(o::add(out.cross_entropy, out.contrastive),
                       o::muls(out.entropy, -eta));
    return out;
}

template <class T>
Tensor<T> maximization_objective_per_sample(const Tensor<T>& logits_prime,
                                            const std::vector<std::size_t>& labels,
                                            const Tensor<T>& v, const Tensor<T>& v_prime,
                                            double lambda, double epsilon) {
    if (lambda < 0.0 || epsilon < 0.0)
        throw ContractError("maximization_objective: lambda and epsilon must be >= 0");
    check_logits("maximization_objective", logits_prime, labels);
    if (!v.defined() || v.rank() != 2 || v.dim(0) != logits_prime.dim(0))
        throw ContractError("maximization_objective: embeddings must be [B,D]");
    Tensor<T> obj = o::sub(cross_entropy_per_sample(logits_prime, labels),
                           o::muls(feature_distance(v, v_prime), lambda));
    if (epsilon > 0.0)
        obj = o::add(obj, o::muls(entropy_per_sample(logits_prime), epsilon));
    return obj;
}

template <class T>
Tensor<T> maximization_objective(const Tensor<T>& logits_prime,
                                 const std::vector<std::size_t>& labels,
                                 const Tensor<T>& v, const Tensor<T>& v_prime,
                                 double lambda, double epsilon) {
    return o::mean_all(maximization_objective_per_sample(logits_prime, labels, v,
                                                         v_prime, lambda, epsilon));
}

#define ADVST_LOSSES_INSTANTIATE(T)                                               \
    template Tensor<T> cross_entropy<T>(const Tensor<T>&,                         \
                                        const std::vector<std::size_t>&);         \
    template Tensor<T> cross_entropy_per_sample<T>(                               \
        const Tensor<T>&, const std::vector<std::size_t>&);                       \
    template Tensor<T> entropy<T>(const Tensor<T>&);                              \
    template Tensor<T> entropy_per_sample<T>(const Tensor<T>&);                   \
    template Tensor<T> feature_distance<T>(const Tensor<T>&, const Tensor<T>&);   \
    template Tensor<T> feature_distance<T>(                                       \
        const Tensor<T>&, const Tensor<T>&, const std::vector<std::size_t>&,      \
        const std::vector<std::size_t>&);                                         \
    template Tensor<T> contrastive<T>(const Tensor<T>&,                           \
                                      const std::vector<std::size_t>&);           \
    template LossBreakdown<T> minimization_loss<T>(                               \
        const Tensor<T>&, const std::vector<std::size_t>&, const Tensor<T>&,      \
        double);                                                                  \
    template Tensor<T> maximization_objective_per_sample<T>(                      \
        const Tensor<T>&, const std::vector<std::size_t>&, const Tensor<T>&,      \
        const Tensor<T>&, double, double);                                        \
    template Tensor<T> maximization_objective<T>(                                 \
        const Tensor<T>&, const std::vector<std::size_t>&, const Tensor<T>&,      \
        const Tensor<T>&, double, double);

ADVST_LOSSES_INSTANTIATE(float)
ADVST_LOSSES_INSTANTIATE(double)

#undef ADVST_LOSSES_INSTANTIATE

}  // namespace advst
