#pragma once

#include <functional>
#include <string>
#include <vector>

#include "lcs/graph.hpp"
#include "lcs/rng.hpp"

namespace lcs {

// A differentiable scalar problem rebuildable from plain inputs, so central
// differences can re-run the forward pass per perturbed coordinate.
struct GradProblem {
    std::string name;
    std::function<std::vector<Tensor>(Rng&)> make_inputs;
    // records the inputs as leaves, returns (scalar root, leaf ids)
    std::function<std::pair<VarId, std::vector<VarId>>(Tape&, const std::vector<Tensor>&)> build;
};

// |autodiff - central difference| / (|autodiff| + 1e-8), maximized over
// every input coordinate
double max_relative_grad_error(const GradProblem& p, const std::vector<Tensor>& inputs, double h = 1e-5);

struct GradSuiteResult {
    std::string name;
    int instances = 0;
    double max_rel_err = 0.0;
    bool pass = false;
};

// one problem per registered differentiable operation
const std::vector<GradProblem>& op_gradient_problems();

std::vector<GradSuiteResult> run_gradient_suite(const std::vector<GradProblem>& problems,
                                                uint64_t seed, int instances_per_problem,
                                                double tol = 1e-4);

}  // namespace lcs
