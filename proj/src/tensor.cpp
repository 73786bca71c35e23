// SPDX-License-Identifier: Apache-2.0

#include "regformer/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace regformer {

namespace {

std::atomic<Precision> g_precision{Precision::f64};
thread_local int t_no_grad_depth = 0;

inline double quantize(double v) {
    return g_precision.load(std::memory_order_relaxed) == Precision::f32 ? static_cast<double>(static_cast<float>(v))
                                                                         : v;
}

}  // namespace

namespace detail {

struct Node {
    const char* op = "leaf";
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;
    bool requires_grad = false;
    bool leaf = true;
    std::vector<Tensor> parents;
    std::function<void(std::span<const double>, std::vector<Tensor>&)> backward;
};

}  // namespace detail

void set_precision(Precision p) { g_precision.store(p); }
Precision precision() { return g_precision.load(); }

NoGradGuard::NoGradGuard() { ++t_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --t_no_grad_depth; }
bool grad_enabled() { return t_no_grad_depth == 0; }

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_string(a) + " and " + shape_string(b));
}

void check_finite(const char* op, const std::vector<double>& values) {
    for (double v : values) {
        if (!std::isfinite(v)) throw NumericalError(std::string("non-finite value produced by ") + op);
    }
}

}  // namespace

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
    if (shape_numel(shape) != values.size()) {
        throw ShapeError("tensor shape " + shape_string(shape) + " does not match " + std::to_string(values.size()) +
                         " values");
    }
    for (double& v : values) v = quantize(v);
    check_finite("tensor constructor", values);
    node_ = std::make_shared<detail::Node>();
    node_->shape = std::move(shape);
    node_->values = std::move(values);
    node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({}, {value}, requires_grad); }

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values), requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= node_->shape.size()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_string(node_->shape));
    }
    return node_->shape[axis];
}

std::size_t Tensor::numel() const { return node_->values.size(); }
std::span<const double> Tensor::values() const { return node_->values; }

double Tensor::item() const {
    if (node_->values.size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(node_->shape));
    return node_->values[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
std::span<const double> Tensor::grad() const { return node_->grad; }

std::span<double> Tensor::mutable_values() {
    if (!node_->leaf) throw std::logic_error("mutable_values() on a non-leaf tensor");
    return node_->values;
}

void Tensor::zero_grad() {
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return Tensor(node_->shape, node_->values, false); }

std::vector<double>& grad_buffer(const Tensor& t) {
    auto& g = t.node_->grad;
    if (g.size() != t.node_->values.size()) g.assign(t.node_->values.size(), 0.0);
    return g;
}

Tensor make_op_result(const char* op, Shape shape, std::vector<double> values, std::vector<Tensor> parents,
                      std::function<void(std::span<const double>, std::vector<Tensor>&)> backward) {
    for (double& v : values) v = quantize(v);
    check_finite(op, values);
    auto node = std::make_shared<detail::Node>();
    node->op = op;
    node->shape = std::move(shape);
    node->values = std::move(values);
    node->leaf = false;
    const bool needs = grad_enabled() &&
                       std::any_of(parents.begin(), parents.end(), [](const Tensor& p) { return p.requires_grad(); });
    if (needs) {
        node->requires_grad = true;
        node->parents = std::move(parents);
        node->backward = std::move(backward);
    }
    return Tensor(std::move(node));
}

void Tensor::backward() const {
    if (node_->values.size() != 1) {
        throw ShapeError("backward() requires a scalar loss, got shape " + shape_string(node_->shape));
    }
    if (!node_->requires_grad) return;

    // Iterative post-order DFS gives a topological order; reverse it for the sweep.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            detail::Node* p = n->parents[next++].node_.get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    for (detail::Node* n : order) {
        if (!n->leaf) n->grad.assign(n->values.size(), 0.0);
    }
    node_->grad.assign(1, 1.0);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* n = *it;
        if (n->leaf || !n->backward) continue;
        n->backward(n->grad, n->parents);
    }
}

// ---------------------------------------------------------------- broadcasting

namespace {

struct BroadcastPlan {
    Shape out;
    bool same = false;
    std::vector<std::size_t> a_index;
    std::vector<std::size_t> b_index;
};

BroadcastPlan plan_broadcast(const char* op, const Shape& a, const Shape& b) {
    BroadcastPlan plan;
    if (a == b) {
        plan.out = a;
        plan.same = true;
        return plan;
    }
    const std::size_t rank = std::max(a.size(), b.size());
    Shape pa(rank, 1), pb(rank, 1);
    std::copy(a.begin(), a.end(), pa.begin() + static_cast<std::ptrdiff_t>(rank - a.size()));
    std::copy(b.begin(), b.end(), pb.begin() + static_cast<std::ptrdiff_t>(rank - b.size()));
    plan.out.resize(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1) shape_fail(op, a, b);
        plan.out[i] = std::max(pa[i], pb[i]);
    }
    // Strides with zeros on broadcast axes.
    std::vector<std::size_t> sa(rank, 0), sb(rank, 0);
    std::size_t ra = 1, rb = 1;
    for (std::size_t i = rank; i-- > 0;) {
        sa[i] = pa[i] == 1 ? 0 : ra;
        sb[i] = pb[i] == 1 ? 0 : rb;
        ra *= pa[i];
        rb *= pb[i];
    }
    const std::size_t n = shape_numel(plan.out);
    plan.a_index.resize(n);
    plan.b_index.resize(n);
    std::vector<std::size_t> counter(rank, 0);
    std::size_t ia = 0, ib = 0;
    for (std::size_t k = 0; k < n; ++k) {
        plan.a_index[k] = ia;
        plan.b_index[k] = ib;
        for (std::size_t d = rank; d-- > 0;) {
            ++counter[d];
            ia += sa[d];
            ib += sb[d];
            if (counter[d] < plan.out[d]) break;
            ia -= sa[d] * counter[d];
            ib -= sb[d] * counter[d];
            counter[d] = 0;
        }
    }
    return plan;
}

template <typename Fwd, typename Bwd>
Tensor binary_op(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, Bwd bwd) {
    auto plan = std::make_shared<BroadcastPlan>(plan_broadcast(op, a.shape(), b.shape()));
    const auto av = a.values();
    const auto bv = b.values();
    const std::size_t n = shape_numel(plan->out);
    std::vector<double> out(n);
    if (plan->same) {
        for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[i], bv[i]);
    } else {
        for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[plan->a_index[i]], bv[plan->b_index[i]]);
    }
    return make_op_result(op, plan->out, std::move(out), {a, b},
                          [plan, bwd](std::span<const double> g, std::vector<Tensor>& ps) {
                              const auto av = ps[0].values();
                              const auto bv = ps[1].values();
                              std::vector<double>* ga = ps[0].requires_grad() ? &grad_buffer(ps[0]) : nullptr;
                              std::vector<double>* gb = ps[1].requires_grad() ? &grad_buffer(ps[1]) : nullptr;
                              for (std::size_t i = 0; i < g.size(); ++i) {
                                  const std::size_t ia = plan->same ? i : plan->a_index[i];
                                  const std::size_t ib = plan->same ? i : plan->b_index[i];
                                  double da = 0.0, db = 0.0;
                                  bwd(av[ia], bv[ib], g[i], da, db);
                                  if (ga) (*ga)[ia] += da;
                                  if (gb) (*gb)[ib] += db;
                              }
                          });
}

template <typename Fwd, typename Deriv>
Tensor unary_op(const char* op, const Tensor& x, Fwd fwd, Deriv deriv) {
    const auto xv = x.values();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
    return make_op_result(op, x.shape(), std::move(out), {x},
                          [deriv](std::span<const double> g, std::vector<Tensor>& ps) {
                              const auto xv = ps[0].values();
                              auto& gx = grad_buffer(ps[0]);
                              for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(xv[i]);
                          });
}

// Splits a shape around `axis` into (outer, length, inner).
struct AxisSplit {
    std::size_t outer = 1, length = 1, inner = 1;
};

AxisSplit split_axis(const char* op, const Shape& shape, std::size_t axis) {
    if (axis >= shape.size()) {
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for shape " +
                         shape_string(shape));
    }
    AxisSplit s;
    for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
    s.length = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(
        "add", a, b, [](double x, double y) { return x + y; },
        [](double, double, double g, double& da, double& db) {
            da = g;
            db = g;
        });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(
        "sub", a, b, [](double x, double y) { return x - y; },
        [](double, double, double g, double& da, double& db) {
            da = g;
            db = -g;
        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](double x, double y, double g, double& da, double& db) {
            da = g * y;
            db = g * x;
        });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary_op(
        "div", a, b, [](double x, double y) { return x / y; },
        [](double x, double y, double g, double& da, double& db) {
            da = g / y;
            db = -g * x / (y * y);
        });
}

Tensor scale(const Tensor& x, double factor) {
    return unary_op(
        "scale", x, [factor](double v) { return v * factor; }, [factor](double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
    return unary_op(
        "add_scalar", x, [value](double v) { return v + value; }, [](double) { return 1.0; });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor exp(const Tensor& x) {
    return unary_op(
        "exp", x, [](double v) { return std::exp(v); }, [](double v) { return std::exp(v); });
}

Tensor log(const Tensor& x) {
    return unary_op(
        "log", x, [](double v) { return std::log(v); }, [](double v) { return 1.0 / v; });
}

Tensor abs(const Tensor& x) {
    return unary_op(
        "abs", x, [](double v) { return std::abs(v); },
        [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor sqrt(const Tensor& x) {
    return unary_op(
        "sqrt", x, [](double v) { return std::sqrt(v); }, [](double v) { return 0.5 / std::sqrt(v); });
}

Tensor relu(const Tensor& x) {
    return unary_op(
        "relu", x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
    constexpr double kInvSqrt2 = 0.70710678118654752440;
    constexpr double kInvSqrt2Pi = 0.39894228040143267794;
    return unary_op(
        "gelu", x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
        [](double v) { return 0.5 * (1.0 + std::erf(v * kInvSqrt2)) + v * kInvSqrt2Pi * std::exp(-0.5 * v * v); });
}

Tensor clamp_min(const Tensor& x, double floor) {
    return unary_op(
        "clamp_min", x, [floor](double v) { return v < floor ? floor : v; },
        [floor](double v) { return v < floor ? 0.0 : 1.0; });
}

// ---------------------------------------------------------------- matmul

Tensor matmul(const Tensor& a, const Tensor& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() < 2 || sb.size() < 2) shape_fail("matmul", sa, sb);
    const std::size_t n = sa[sa.size() - 2], k = sa.back();
    const std::size_t kb = sb[sb.size() - 2], m = sb.back();
    if (k != kb) shape_fail("matmul", sa, sb);
    const bool shared_b = sb.size() == 2;
    if (!shared_b && (sb.size() != sa.size() || !std::equal(sa.begin(), sa.end() - 2, sb.begin()))) {
        shape_fail("matmul", sa, sb);
    }
    const std::size_t batch = shape_numel(Shape(sa.begin(), sa.end() - 2));
    Shape out_shape(sa.begin(), sa.end() - 2);
    out_shape.push_back(n);
    out_shape.push_back(m);

    const auto av = a.values();
    const auto bv = b.values();
    std::vector<double> out(batch * n * m, 0.0);
    for (std::size_t bt = 0; bt < batch; ++bt) {
        const double* A = av.data() + bt * n * k;
        const double* B = bv.data() + (shared_b ? 0 : bt * k * m);
        double* C = out.data() + bt * n * m;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
                const double aip = A[i * k + p];
                if (aip == 0.0) continue;
                const double* brow = B + p * m;
                double* crow = C + i * m;
                for (std::size_t j = 0; j < m; ++j) crow[j] += aip * brow[j];
            }
        }
    }
    return make_op_result(
        "matmul", std::move(out_shape), std::move(out), {a, b},
        [batch, n, k, m, shared_b](std::span<const double> g, std::vector<Tensor>& ps) {
            const auto av = ps[0].values();
            const auto bv = ps[1].values();
            std::vector<double>* ga = ps[0].requires_grad() ? &grad_buffer(ps[0]) : nullptr;
            std::vector<double>* gb = ps[1].requires_grad() ? &grad_buffer(ps[1]) : nullptr;
            for (std::size_t bt = 0; bt < batch; ++bt) {
                const double* A = av.data() + bt * n * k;
                const double* B = bv.data() + (shared_b ? 0 : bt * k * m);
                const double* G = g.data() + bt * n * m;
                if (ga) {
                    double* GA = ga->data() + bt * n * k;
                    for (std::size_t i = 0; i < n; ++i) {
                        for (std::size_t p = 0; p < k; ++p) {
                            double acc = 0.0;
                            const double* brow = B + p * m;
                            const double* grow = G + i * m;
                            for (std::size_t j = 0; j < m; ++j) acc += grow[j] * brow[j];
                            GA[i * k + p] += acc;
                        }
                    }
                }
                if (gb) {
                    double* GB = gb->data() + (shared_b ? 0 : bt * k * m);
                    for (std::size_t i = 0; i < n; ++i) {
                        const double* grow = G + i * m;
                        for (std::size_t p = 0; p < k; ++p) {
                            const double aip = A[i * k + p];
                            if (aip == 0.0) continue;
                            double* gbrow = GB + p * m;
                            for (std::size_t j = 0; j < m; ++j) gbrow[j] += aip * grow[j];
                        }
                    }
                }
            }
        });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    if (weight.rank() != 2 || x.rank() == 0 || x.shape().back() != weight.dim(0)) {
        shape_fail("linear", x.shape(), weight.shape());
    }
    const std::size_t in = weight.dim(0), out = weight.dim(1);
    Shape out_shape = x.shape();
    out_shape.back() = out;
    Tensor flat = x.rank() == 2 ? x : reshape(x, {x.numel() / in, in});
    Tensor y = matmul(flat, weight);
    if (bias.defined()) y = add(y, bias);
    return x.rank() == 2 ? y : reshape(y, std::move(out_shape));
}

// ---------------------------------------------------------------- softmax / norms

Tensor softmax(const Tensor& x, std::size_t axis) {
    const AxisSplit s = split_axis("softmax", x.shape(), axis);
    const auto xv = x.values();
    std::vector<double> out(xv.size());
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t in = 0; in < s.inner; ++in) {
            const std::size_t base = o * s.length * s.inner + in;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < s.length; ++j) mx = std::max(mx, xv[base + j * s.inner]);
            double total = 0.0;
            for (std::size_t j = 0; j < s.length; ++j) {
                const double e = std::exp(xv[base + j * s.inner] - mx);
                out[base + j * s.inner] = e;
                total += e;
            }
            for (std::size_t j = 0; j < s.length; ++j) out[base + j * s.inner] /= total;
        }
    }
    auto saved = std::make_shared<std::vector<double>>(out);
    return make_op_result("softmax", x.shape(), std::move(out), {x},
                          [s, saved](std::span<const double> g, std::vector<Tensor>& ps) {
                              auto& gx = grad_buffer(ps[0]);
                              const auto& y = *saved;
                              for (std::size_t o = 0; o < s.outer; ++o) {
                                  for (std::size_t in = 0; in < s.inner; ++in) {
                                      const std::size_t base = o * s.length * s.inner + in;
                                      double dot = 0.0;
                                      for (std::size_t j = 0; j < s.length; ++j) {
                                          const std::size_t idx = base + j * s.inner;
                                          dot += g[idx] * y[idx];
                                      }
                                      for (std::size_t j = 0; j < s.length; ++j) {
                                          const std::size_t idx = base + j * s.inner;
                                          gx[idx] += y[idx] * (g[idx] - dot);
                                      }
                                  }
                              }
                          });
}

Tensor masked_softmax(const Tensor& x, const Tensor& mask, std::size_t axis) {
    return softmax(add(x, mask), axis);
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    if (x.rank() == 0) shape_fail("layer_norm", x.shape(), gamma.shape());
    const std::size_t cols = x.shape().back();
    if (gamma.shape() != Shape{cols} || beta.shape() != Shape{cols}) shape_fail("layer_norm", x.shape(), gamma.shape());
    const std::size_t rows = x.numel() / cols;
    const auto xv = x.values();
    const auto gv = gamma.values();
    const auto bv = beta.values();
    auto xhat = std::make_shared<std::vector<double>>(xv.size());
    auto rstd = std::make_shared<std::vector<double>>(rows);
    std::vector<double> out(xv.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = xv.data() + r * cols;
        double mu = 0.0;
        for (std::size_t c = 0; c < cols; ++c) mu += row[c];
        mu /= static_cast<double>(cols);
        double var = 0.0;
        for (std::size_t c = 0; c < cols; ++c) var += (row[c] - mu) * (row[c] - mu);
        var /= static_cast<double>(cols);
        const double rs = 1.0 / std::sqrt(var + eps);
        (*rstd)[r] = rs;
        for (std::size_t c = 0; c < cols; ++c) {
            const double h = (row[c] - mu) * rs;
            (*xhat)[r * cols + c] = h;
            out[r * cols + c] = h * gv[c] + bv[c];
        }
    }
    return make_op_result(
        "layer_norm", x.shape(), std::move(out), {x, gamma, beta},
        [rows, cols, xhat, rstd](std::span<const double> g, std::vector<Tensor>& ps) {
            const auto gv = ps[1].values();
            const bool need_x = ps[0].requires_grad();
            std::vector<double>* gx = need_x ? &grad_buffer(ps[0]) : nullptr;
            std::vector<double>* gg = ps[1].requires_grad() ? &grad_buffer(ps[1]) : nullptr;
            std::vector<double>* gbeta = ps[2].requires_grad() ? &grad_buffer(ps[2]) : nullptr;
            std::vector<double> dxhat(cols);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* h = xhat->data() + r * cols;
                const double* gr = g.data() + r * cols;
                double mean_d = 0.0, mean_dh = 0.0;
                for (std::size_t c = 0; c < cols; ++c) {
                    if (gg) (*gg)[c] += gr[c] * h[c];
                    if (gbeta) (*gbeta)[c] += gr[c];
                    dxhat[c] = gr[c] * gv[c];
                    mean_d += dxhat[c];
                    mean_dh += dxhat[c] * h[c];
                }
                if (!gx) continue;
                mean_d /= static_cast<double>(cols);
                mean_dh /= static_cast<double>(cols);
                const double rs = (*rstd)[r];
                for (std::size_t c = 0; c < cols; ++c) {
                    (*gx)[r * cols + c] += rs * (dxhat[c] - mean_d - h[c] * mean_dh);
                }
            }
        });
}

Tensor l2_norm(const Tensor& x) {
    if (x.rank() == 0) throw ShapeError("l2_norm: scalar input");
    const std::size_t cols = x.shape().back();
    const std::size_t rows = cols == 0 ? 0 : x.numel() / cols;
    const auto xv = x.values();
    std::vector<double> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < cols; ++c) acc += xv[r * cols + c] * xv[r * cols + c];
        out[r] = std::sqrt(acc);
    }
    auto norms = std::make_shared<std::vector<double>>(out);
    Shape out_shape(x.shape().begin(), x.shape().end() - 1);
    return make_op_result("l2_norm", std::move(out_shape), std::move(out), {x},
                          [rows, cols, norms](std::span<const double> g, std::vector<Tensor>& ps) {
                              const auto xv = ps[0].values();
                              auto& gx = grad_buffer(ps[0]);
                              for (std::size_t r = 0; r < rows; ++r) {
                                  const double nr = (*norms)[r];
                                  if (nr == 0.0) continue;
                                  for (std::size_t c = 0; c < cols; ++c) {
                                      gx[r * cols + c] += g[r] * xv[r * cols + c] / nr;
                                  }
                              }
                          });
}

// ---------------------------------------------------------------- structural ops

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const Shape& first = parts.front().shape();
    if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + shape_string(first));
    Shape out_shape = first;
    out_shape[axis] = 0;
    for (const Tensor& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != first.size()) shape_fail("concat", first, s);
        for (std::size_t d = 0; d < s.size(); ++d) {
            if (d != axis && s[d] != first[d]) shape_fail("concat", first, s);
        }
        out_shape[axis] += s[axis];
    }
    const AxisSplit outer = split_axis("concat", out_shape, axis);
    std::vector<double> out(shape_numel(out_shape));
    std::vector<std::size_t> offsets;
    std::size_t offset = 0;
    for (const Tensor& p : parts) {
        offsets.push_back(offset);
        const std::size_t len = p.shape()[axis];
        const auto pv = p.values();
        const std::size_t block = len * outer.inner;
        for (std::size_t o = 0; o < outer.outer; ++o) {
            std::copy_n(pv.data() + o * block, block, out.data() + (o * outer.length + offset) * outer.inner);
        }
        offset += len;
    }
    return make_op_result("concat", out_shape, std::move(out), parts,
                          [outer, offsets, axis](std::span<const double> g, std::vector<Tensor>& ps) {
                              for (std::size_t i = 0; i < ps.size(); ++i) {
                                  if (!ps[i].requires_grad()) continue;
                                  auto& gp = grad_buffer(ps[i]);
                                  const std::size_t block = ps[i].shape()[axis] * outer.inner;
                                  for (std::size_t o = 0; o < outer.outer; ++o) {
                                      const double* src = g.data() + (o * outer.length + offsets[i]) * outer.inner;
                                      double* dst = gp.data() + o * block;
                                      for (std::size_t j = 0; j < block; ++j) dst[j] += src[j];
                                  }
                              }
                          });
}

namespace {

Shape reduced_shape(const Shape& shape, std::size_t axis, bool keepdim) {
    Shape out = shape;
    if (keepdim) {
        out[axis] = 1;
    } else {
        out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
    }
    return out;
}

}  // namespace

Tensor sum(const Tensor& x, std::size_t axis, bool keepdim) {
    const AxisSplit s = split_axis("sum", x.shape(), axis);
    const auto xv = x.values();
    std::vector<double> out(s.outer * s.inner, 0.0);
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t j = 0; j < s.length; ++j) {
            const double* src = xv.data() + (o * s.length + j) * s.inner;
            double* dst = out.data() + o * s.inner;
            for (std::size_t in = 0; in < s.inner; ++in) dst[in] += src[in];
        }
    }
    return make_op_result("sum", reduced_shape(x.shape(), axis, keepdim), std::move(out), {x},
                          [s](std::span<const double> g, std::vector<Tensor>& ps) {
                              auto& gx = grad_buffer(ps[0]);
                              for (std::size_t o = 0; o < s.outer; ++o) {
                                  for (std::size_t j = 0; j < s.length; ++j) {
                                      double* dst = gx.data() + (o * s.length + j) * s.inner;
                                      const double* src = g.data() + o * s.inner;
                                      for (std::size_t in = 0; in < s.inner; ++in) dst[in] += src[in];
                                  }
                              }
                          });
}

Tensor mean(const Tensor& x, std::size_t axis, bool keepdim) {
    const std::size_t len = x.dim(axis);
    if (len == 0) throw ShapeError("mean over empty axis of shape " + shape_string(x.shape()));
    return scale(sum(x, axis, keepdim), 1.0 / static_cast<double>(len));
}

Tensor max(const Tensor& x, std::size_t axis, bool keepdim) {
    const AxisSplit s = split_axis("max", x.shape(), axis);
    if (s.length == 0) throw ShapeError("max over empty axis of shape " + shape_string(x.shape()));
    const auto xv = x.values();
    std::vector<double> out(s.outer * s.inner);
    auto arg = std::make_shared<std::vector<std::size_t>>(out.size());
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t in = 0; in < s.inner; ++in) {
            std::size_t best = o * s.length * s.inner + in;
            for (std::size_t j = 1; j < s.length; ++j) {
                const std::size_t idx = (o * s.length + j) * s.inner + in;
                if (xv[idx] > xv[best]) best = idx;
            }
            out[o * s.inner + in] = xv[best];
            (*arg)[o * s.inner + in] = best;
        }
    }
    return make_op_result("max", reduced_shape(x.shape(), axis, keepdim), std::move(out), {x},
                          [arg](std::span<const double> g, std::vector<Tensor>& ps) {
                              auto& gx = grad_buffer(ps[0]);
                              for (std::size_t i = 0; i < g.size(); ++i) gx[(*arg)[i]] += g[i];
                          });
}

Tensor sum_all(const Tensor& x) {
    const auto xv = x.values();
    double total = 0.0;
    for (double v : xv) total += v;
    return make_op_result("sum_all", {}, {total}, {x}, [](std::span<const double> g, std::vector<Tensor>& ps) {
        auto& gx = grad_buffer(ps[0]);
        for (double& v : gx) v += g[0];
    });
}

Tensor index_select(const Tensor& x, std::size_t axis, std::span<const std::size_t> indices) {
    const AxisSplit s = split_axis("index_select", x.shape(), axis);
    for (std::size_t idx : indices) {
        if (idx >= s.length) {
            throw ShapeError("index_select: index " + std::to_string(idx) + " out of range for shape " +
                             shape_string(x.shape()));
        }
    }
    Shape out_shape = x.shape();
    out_shape[axis] = indices.size();
    const auto xv = x.values();
    std::vector<double> out(s.outer * indices.size() * s.inner);
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t j = 0; j < indices.size(); ++j) {
            std::copy_n(xv.data() + (o * s.length + indices[j]) * s.inner, s.inner,
                        out.data() + (o * indices.size() + j) * s.inner);
        }
    }
    auto idx = std::make_shared<std::vector<std::size_t>>(indices.begin(), indices.end());
    return make_op_result("index_select", std::move(out_shape), std::move(out), {x},
                          [s, idx](std::span<const double> g, std::vector<Tensor>& ps) {
                              auto& gx = grad_buffer(ps[0]);
                              const std::size_t count = idx->size();
                              for (std::size_t o = 0; o < s.outer; ++o) {
                                  for (std::size_t j = 0; j < count; ++j) {
                                      const double* src = g.data() + (o * count + j) * s.inner;
                                      double* dst = gx.data() + (o * s.length + (*idx)[j]) * s.inner;
                                      for (std::size_t in = 0; in < s.inner; ++in) dst[in] += src[in];
                                  }
                              }
                          });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
    if (axis >= x.rank() || start + length > x.shape()[axis]) {
        throw ShapeError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") out of range for shape " + shape_string(x.shape()));
    }
    std::vector<std::size_t> idx(length);
    std::iota(idx.begin(), idx.end(), start);
    return index_select(x, axis, idx);
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& order) {
    const Shape& in = x.shape();
    if (order.size() != in.size()) throw ShapeError("permute: order rank mismatch for shape " + shape_string(in));
    std::vector<bool> used(in.size(), false);
    for (std::size_t a : order) {
        if (a >= in.size() || used[a]) throw ShapeError("permute: invalid axis order for shape " + shape_string(in));
        used[a] = true;
    }
    const std::size_t rank = in.size();
    std::vector<std::size_t> in_strides(rank, 1);
    for (std::size_t d = rank; d-- > 1;) in_strides[d - 1] = in_strides[d] * in[d];
    Shape out_shape(rank);
    std::vector<std::size_t> strides(rank);
    for (std::size_t d = 0; d < rank; ++d) {
        out_shape[d] = in[order[d]];
        strides[d] = in_strides[order[d]];
    }
    const std::size_t n = x.numel();
    auto map = std::make_shared<std::vector<std::size_t>>(n);
    std::vector<std::size_t> counter(rank, 0);
    std::size_t src = 0;
    for (std::size_t k = 0; k < n; ++k) {
        (*map)[k] = src;
        for (std::size_t d = rank; d-- > 0;) {
            ++counter[d];
            src += strides[d];
            if (counter[d] < out_shape[d]) break;
            src -= strides[d] * counter[d];
            counter[d] = 0;
        }
    }
    const auto xv = x.values();
    std::vector<double> out(n);
    for (std::size_t k = 0; k < n; ++k) out[k] = xv[(*map)[k]];
    return make_op_result("permute", std::move(out_shape), std::move(out), {x},
                          [map](std::span<const double> g, std::vector<Tensor>& ps) {
                              auto& gx = grad_buffer(ps[0]);
                              for (std::size_t k = 0; k < g.size(); ++k) gx[(*map)[k]] += g[k];
                          });
}

Tensor transpose(const Tensor& x, std::size_t axis_a, std::size_t axis_b) {
    std::vector<std::size_t> order(x.rank());
    std::iota(order.begin(), order.end(), 0);
    if (axis_a >= order.size() || axis_b >= order.size()) {
        throw ShapeError("transpose: axis out of range for shape " + shape_string(x.shape()));
    }
    std::swap(order[axis_a], order[axis_b]);
    return permute(x, order);
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) shape_fail("reshape", x.shape(), shape);
    const auto xv = x.values();
    return make_op_result("reshape", std::move(shape), std::vector<double>(xv.begin(), xv.end()), {x},
                          [](std::span<const double> g, std::vector<Tensor>& ps) {
                              auto& gx = grad_buffer(ps[0]);
                              for (std::size_t k = 0; k < g.size(); ++k) gx[k] += g[k];
                          });
}

// ---------------------------------------------------------------- verification

double finite_difference_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double step) {
    const std::vector<double> base(x.values().begin(), x.values().end());
    Tensor probe(x.shape(), base, true);
    Tensor y = f(probe);
    if (y.numel() != 1) throw ShapeError("finite_difference_check: f must be scalar, got " + shape_string(y.shape()));
    y.backward();
    std::vector<double> analytic(base.size(), 0.0);
    if (!probe.grad().empty()) std::copy(probe.grad().begin(), probe.grad().end(), analytic.begin());

    NoGradGuard no_grad;
    double worst = 0.0;
    std::vector<double> shifted = base;
    for (std::size_t i = 0; i < base.size(); ++i) {
        double fp = 0.0, fm = 0.0;
        try {
            shifted[i] = base[i] + step;
            fp = f(Tensor(x.shape(), shifted)).item();
            shifted[i] = base[i] - step;
            fm = f(Tensor(x.shape(), shifted)).item();
        } catch (const NumericalError&) {
            return std::numeric_limits<double>::infinity();
        }
        shifted[i] = base[i];
        const double numeric = (fp - fm) / (2.0 * step);
        const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric));
        if (!std::isfinite(err)) return std::numeric_limits<double>::infinity();
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace regformer
