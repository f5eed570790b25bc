// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mgsd {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major f64 tensor with a gradient accumulator.
///
/// Copies share storage (handle semantics), so a parameter captured by a
/// recorded operation and the copy held by the model refer to the same
/// values and gradient. Use clone() for a deep copy.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const noexcept { return impl_ != nullptr; }

    const Shape& shape() const { return impl_->shape; }
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
    std::size_t numel() const { return impl_->data.size(); }

    // Constness applies to the handle, not the shared storage.
    std::span<double> data() const { return impl_->data; }
    std::span<double> grad() const { return impl_->grad; }

    double item() const;

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool flag) { impl_->requires_grad = flag; }

    std::uint64_t id() const { return impl_->id; }

    void zero_grad();
    Tensor clone() const;
    Tensor detach() const;

    bool same_storage(const Tensor& other) const noexcept { return impl_ == other.impl_; }

private:
    struct Impl {
        Shape shape;
        std::vector<double> data;
        std::vector<double> grad;
        bool requires_grad = false;
        std::uint64_t id = 0;
    };

    explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}

    std::shared_ptr<Impl> impl_;
};

/// Tape of recorded operations for reverse-mode differentiation.
///
/// Operations append themselves in execution order, which is a topological
/// order of the computation. backward() replays their rules in reverse.
/// A graph built with recording off evaluates ops without storing anything.
/// The graph also carries the dropout context: whether dropout is active
/// and the (seed, step) pair that keys its masks.
class Graph {
public:
    explicit Graph(bool recording = true) : recording_(recording) {}

    bool recording() const noexcept { return recording_; }

    void set_training(bool training) noexcept { training_ = training; }
    bool training() const noexcept { return training_; }

    void set_rng(std::uint64_t seed, std::uint64_t step) noexcept {
        seed_ = seed;
        step_ = step;
    }
    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t step() const noexcept { return step_; }

    /// Sequence number for keyed randomness; advances once per call and is
    /// identical across rebuilds of the same graph.
    std::uint64_t next_key() noexcept { return key_counter_++; }

    /// Returns true when `output` should be tracked, i.e. recording is on and
    /// some input needs a gradient. Sets output.requires_grad accordingly.
    bool track(Tensor& output, std::initializer_list<const Tensor*> inputs);
    bool track(Tensor& output, std::span<const Tensor> inputs);

    void record(Tensor output, std::function<void()> backward);

    /// Seeds d(root)/d(root) = 1 and runs every recorded rule in reverse.
    void backward(Tensor root);

    std::size_t size() const noexcept { return ops_.size(); }
    void clear() { ops_.clear(); }

private:
    struct Op {
        Tensor output;
        std::function<void()> backward;
    };

    bool recording_;
    bool training_ = false;
    std::uint64_t seed_ = 0;
    std::uint64_t step_ = 0;
    std::uint64_t key_counter_ = 0;
    std::vector<Op> ops_;
};

}  // namespace mgsd
