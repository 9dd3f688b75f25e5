#pragma once

// Minimal reverse-mode autodiff over dense float tensors.
//
// A Tensor is a shared handle to a node holding data, an optional gradient
// buffer and the closure that propagates gradients to its parents. Graph
// edges are only recorded when at least one input requires a gradient and
// gradient mode is enabled, so frozen sub-networks cost nothing extra.

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace samlp {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct Node {
    std::vector<float> data;
    std::vector<float> grad;
    Shape shape;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;
};

class Tensor {
public:
    Tensor();
    Tensor(Shape shape, float fill = 0.0f);
    Tensor(Shape shape, std::vector<float> values);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0f); }
    static Tensor scalar(float v) { return Tensor(Shape{1}, std::vector<float>{v}); }

    const Shape& shape() const { return node_->shape; }
    std::int64_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t rank() const { return node_->shape.size(); }
    std::int64_t size() const { return static_cast<std::int64_t>(node_->data.size()); }
    /// Rows / cols of a 2-D tensor.
    std::int64_t rows() const;
    std::int64_t cols() const;

    std::span<float> data() { return node_->data; }
    std::span<const float> data() const { return node_->data; }
    std::vector<float>& values() { return node_->data; }
    const std::vector<float>& values() const { return node_->data; }
    float item() const;
    float at(std::int64_t i) const { return node_->data[static_cast<std::size_t>(i)]; }
    float at(std::int64_t r, std::int64_t c) const { return node_->data[static_cast<std::size_t>(r * cols() + c)]; }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool v) { node_->requires_grad = v; }
    /// Gradient buffer; empty until a backward pass reaches this tensor.
    std::span<const float> grad() const { return node_->grad; }
    std::vector<float>& grad_buffer() { return node_->grad; }
    void zero_grad() { node_->grad.clear(); }

    /// Same data, no graph history, new storage.
    Tensor detach() const;
    /// Independent deep copy of the data (never shares storage).
    Tensor clone() const;
    /// Reinterprets the data with a new shape of equal element count (copy).
    Tensor reshape(Shape shape) const;

    /// Seeds d(this)/d(this) = 1 and propagates to all reachable leaves.
    /// Requires a single-element tensor.
    void backward();

    bool same_node(const Tensor& other) const { return node_ == other.node_; }
    const std::shared_ptr<Node>& node() const { return node_; }

    static Tensor from_node(std::shared_ptr<Node> n);

private:
    std::shared_ptr<Node> node_;
};

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();

namespace ops {

// 2-D products. Shapes are [n x k] . [k x m].
Tensor matmul(const Tensor& a, const Tensor& b);
/// a . b^T with a [n x k], b [m x k].
Tensor matmul_nt(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);
/// Adds a length-m row vector to every row of an [n x m] tensor.
Tensor add_row(const Tensor& a, const Tensor& row);
/// Repeats a length-m vector into an [n x m] tensor.
Tensor broadcast_rows(const Tensor& row, std::int64_t n);

Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softmax_rows(const Tensor& a);
Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps = 1e-6f);

/// out[i] = in[index[i]], gradients scatter-add back.
Tensor gather(const Tensor& a, std::vector<std::int64_t> index, Shape out_shape);
Tensor slice_rows(const Tensor& a, std::int64_t begin, std::int64_t end);
Tensor slice_cols(const Tensor& a, std::int64_t begin, std::int64_t end);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor transpose(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

/// Grid rearrangements on [H*W x C] row-major token layouts.
/// space_to_depth(k): [H*W x C] -> [(H/k)*(W/k) x k*k*C]
Tensor space_to_depth(const Tensor& a, std::int64_t h, std::int64_t w, std::int64_t k);
/// depth_to_space(k): [H*W x k*k*C] -> [(k*H)*(k*W) x C]
Tensor depth_to_space(const Tensor& a, std::int64_t h, std::int64_t w, std::int64_t k);

}  // namespace ops

/// Builds a node from a custom forward value and backward closure. Used by
/// modules that provide analytic gradients for fused operations.
Tensor make_result(Shape shape, std::vector<float> values, std::vector<Tensor> parents,
                   std::function<void(Node&)> backward);

}  // namespace samlp
