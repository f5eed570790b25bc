// SPDX-License-Identifier: Apache-2.0
#include "mgsd/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "mgsd/errors.hpp"

namespace mgsd {

namespace {

double evaluate(const GraphBuilder& build) {
    Graph g(false);
    auto out = build(g);
    if (out.numel() != 1) {
        throw UsageError("grad_check: graph output must be scalar, got " + shape_str(out.shape()));
    }
    return out.item();
}

}  // namespace

GradCheckReport grad_check(const GraphBuilder& build, std::span<Tensor> params, double h,
                           double floor) {
    for (auto& p : params) p.zero_grad();
    {
        Graph g(true);
        auto out = build(g);
        if (out.numel() != 1) {
            throw UsageError("grad_check: graph output must be scalar, got " + shape_str(out.shape()));
        }
        g.backward(out);
    }

    GradCheckReport report;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& p = params[pi];
        std::vector<double> analytic(p.grad().begin(), p.grad().end());
        auto values = p.data();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            values[i] = saved + h;
            const double plus = evaluate(build);
            values[i] = saved - h;
            const double minus = evaluate(build);
            values[i] = saved;
            const double numeric = (plus - minus) / (2.0 * h);
            const double abs_err = std::abs(analytic[i] - numeric);
            const double rel_err =
                abs_err / std::max({std::abs(analytic[i]), std::abs(numeric), floor});
            report.max_abs_error = std::max(report.max_abs_error, abs_err);
            if (rel_err > report.max_rel_error || report.checked == 0) {
                report.max_rel_error = std::max(report.max_rel_error, rel_err);
                report.worst = "param" + std::to_string(pi) + "#" + std::to_string(i);
            }
            ++report.checked;
        }
    }
    return report;
}

}  // namespace mgsd
