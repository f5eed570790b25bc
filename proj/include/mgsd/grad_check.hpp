// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <span>
#include <string>

#include "mgsd/tensor.hpp"

namespace mgsd {

struct GradCheckReport {
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    std::size_t checked = 0;
    std::string worst;  // "param#index" of the largest relative error
};

/// Builds the scalar to differentiate on a fresh graph. Called once with
/// recording on and twice per parameter element with recording off, so it
/// must be a pure function of the parameter values.
using GraphBuilder = std::function<Tensor(Graph&)>;

/// Compares analytic gradients against central differences
/// (f(x+h) - f(x-h)) / 2h for every element of every parameter.
/// Relative error is |a - n| / max(|a|, |n|, floor).
GradCheckReport grad_check(const GraphBuilder& build, std::span<Tensor> params, double h = 1e-5,
                           double floor = 1e-6);

}  // namespace mgsd
