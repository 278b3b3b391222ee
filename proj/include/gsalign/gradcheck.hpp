#pragma once

#include "gsalign/autodiff.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace gsalign {

struct GradcheckResult {
    std::string name;
    double rel_error = 0.0;  // max_i |a_i - n_i| / max(|a_i|, |n_i|, 1e-8)
    double tolerance = 0.0;
    bool passed = false;
};

/// Builds a scalar output from graph leaves for the given inputs.
using GradcheckFn = std::function<ad::Var(ad::Graph&, const std::vector<ad::Var>&)>;

/// Central differences with step `h` against one reverse pass. Non-scalar
/// outputs are reduced to a fixed random weighted sum.
GradcheckResult gradcheck(const std::string& name, const GradcheckFn& fn, const std::vector<ad::Tensor>& inputs,
                          double tolerance, std::uint64_t seed, double h = 1e-5);

/// Every op, each contrastive loss, and the full encode -> combined loss
/// path on a D=8, G=2, K=4 encoder.
std::vector<GradcheckResult> run_gradcheck_suite(std::uint64_t seed = 7);

} // namespace gsalign
