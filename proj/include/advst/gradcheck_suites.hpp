#pragma once

#include <string>
#include <vector>

// Named finite-difference suites run by the `gradcheck` command, the unit
// tests, and the acceptance harness. All suites run in double precision.

namespace advst {

struct SuiteResult {
    std::string name;
    double max_rel_err;
    double tol;
    bool pass() const { return max_rel_err <= tol; }
};

// One entry per differentiable primitive (straight-through ops are verified
// against their exact pass-through contract instead of differences).
std::vector<SuiteResult> run_primitive_gradchecks();

// One entry per transform kind with learnable parameters: d(mean pixel)/d(omega).
std::vector<SuiteResult> run_transform_gradchecks();

// Cross-entropy, entropy, contrastive, feature distance, and the combined
// minimization loss against finite differences.
std::vector<SuiteResult> run_loss_gradchecks();

// End-to-end: d(maximization objective)/d(omega) through transform chain,
// classifier, and losses.
std::vector<SuiteResult> run_pipeline_gradchecks();

}  // namespace advst
