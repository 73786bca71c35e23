// SPDX-License-Identifier: Apache-2.0
//
// Dense tensors with tape-based reverse-mode differentiation.

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace regformer {

using Shape = std::vector<std::size_t>;

/// Additive mask value marking positions that attention must ignore.
inline constexpr double kMaskValue = -1e9;

enum class Precision { f32, f64 };

/// Global storage precision. Under f32 every op output and every parameter
/// update is rounded to single precision; storage stays double so that the
/// f64 verification paths share the same code.
void set_precision(Precision p);
Precision precision();

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Disables graph recording on the current thread while alive.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

bool grad_enabled();

namespace detail {
struct Node;
}

class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor vector(std::vector<double> values, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const;
    std::span<const double> values() const;
    double operator[](std::size_t flat) const { return values()[flat]; }
    double item() const;
    bool requires_grad() const;

    /// Gradient accumulated by backward(); empty when none reached this node.
    std::span<const double> grad() const;

    /// Reverse pass from a scalar. Leaf gradients accumulate across calls.
    void backward() const;

    Tensor detach() const;

    // Leaf mutation, used only by initializers and optimizers between steps.
    std::span<double> mutable_values();
    void zero_grad();

    bool same_node(const Tensor& other) const { return node_ == other.node_; }

private:
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::Node> node_;

    friend Tensor make_op_result(const char* op, Shape shape, std::vector<double> values,
                                 std::vector<Tensor> parents,
                                 std::function<void(std::span<const double>, std::vector<Tensor>&)> backward);
    friend std::vector<double>& grad_buffer(const Tensor& t);
};

/// Builds an op output. The backward closure receives the output gradient and
/// the parent list; it accumulates into parents through grad_buffer().
Tensor make_op_result(const char* op, Shape shape, std::vector<double> values, std::vector<Tensor> parents,
                      std::function<void(std::span<const double>, std::vector<Tensor>&)> backward);

/// Lazily allocated gradient storage of a node (zero-filled on first use).
std::vector<double>& grad_buffer(const Tensor& t);

// Elementwise with numpy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }

Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
Tensor neg(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor clamp_min(const Tensor& x, double floor);

/// a [..., n, k] x b [..., k, m]. b may be rank 2 and is then shared by every batch.
Tensor matmul(const Tensor& a, const Tensor& b);

/// x [..., in] W [in, out] + b [out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor softmax(const Tensor& x, std::size_t axis);
/// softmax(x + mask) over `axis`; mask broadcasts against x.
Tensor masked_softmax(const Tensor& x, const Tensor& mask, std::size_t axis);

/// Normalizes over the last axis, then applies gamma/beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);

Tensor sum(const Tensor& x, std::size_t axis, bool keepdim = false);
Tensor mean(const Tensor& x, std::size_t axis, bool keepdim = false);
Tensor max(const Tensor& x, std::size_t axis, bool keepdim = false);
Tensor sum_all(const Tensor& x);

Tensor index_select(const Tensor& x, std::size_t axis, std::span<const std::size_t> indices);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);

/// Euclidean norm over the last axis; the gradient at a zero vector is zero.
Tensor l2_norm(const Tensor& x);

Tensor permute(const Tensor& x, const std::vector<std::size_t>& order);
Tensor transpose(const Tensor& x, std::size_t axis_a, std::size_t axis_b);
Tensor reshape(const Tensor& x, Shape shape);

/// Central-difference comparison of f's analytic gradient at x.
/// Returns max_i |analytic_i - numeric_i| / max(1, |numeric_i|); non-finite -> +inf.
double finite_difference_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                               double step = 1e-5);

}  // namespace regformer
