// SPDX-License-Identifier: Apache-2.0
#include "mgsd/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>

#include "mgsd/errors.hpp"

namespace mgsd {

namespace {
std::atomic<std::uint64_t> next_node_id{1};
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto extent : shape) n *= extent;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    const auto n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    if (shape_numel(shape) != values.size()) {
        throw DimensionError("tensor shape " + shape_str(shape) + " does not hold " +
                             std::to_string(values.size()) + " values");
    }
    auto impl = std::make_shared<Impl>();
    impl->shape = std::move(shape);
    impl->grad.assign(values.size(), 0.0);
    impl->data = std::move(values);
    impl->requires_grad = requires_grad;
    impl->id = next_node_id.fetch_add(1, std::memory_order_relaxed);
    return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from({1}, {value}, requires_grad);
}

double Tensor::item() const {
    if (numel() != 1) {
        throw UsageError("item() on tensor of shape " + shape_str(shape()));
    }
    return impl_->data[0];
}

void Tensor::zero_grad() {
    std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::clone() const {
    auto copy = from(impl_->shape, impl_->data, impl_->requires_grad);
    std::copy(impl_->grad.begin(), impl_->grad.end(), copy.impl_->grad.begin());
    return copy;
}

Tensor Tensor::detach() const {
    return from(impl_->shape, impl_->data, false);
}

bool Graph::track(Tensor& output, std::initializer_list<const Tensor*> inputs) {
    bool needs = false;
    for (const auto* t : inputs) needs = needs || (t->defined() && t->requires_grad());
    needs = needs && recording_;
    output.set_requires_grad(needs);
    return needs;
}

bool Graph::track(Tensor& output, std::span<const Tensor> inputs) {
    bool needs = false;
    for (const auto& t : inputs) needs = needs || (t.defined() && t.requires_grad());
    needs = needs && recording_;
    output.set_requires_grad(needs);
    return needs;
}

void Graph::record(Tensor output, std::function<void()> backward) {
    ops_.push_back(Op{std::move(output), std::move(backward)});
}

void Graph::backward(Tensor root) {
    if (root.numel() != 1) {
        throw UsageError("backward() needs a scalar output, got shape " + shape_str(root.shape()));
    }
    if (!root.requires_grad()) return;
    root.grad()[0] += 1.0;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
        it->backward();
    }
}

}  // namespace mgsd
