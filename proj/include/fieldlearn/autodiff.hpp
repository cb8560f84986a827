// Licensed under the Apache License, Version 2.0 (the "License"); you
// may not use this file except in compliance with the License.  You
// may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or
// implied.  See the License for the specific language governing
// permissions and limitations under the License.

// Forward-over-reverse automatic differentiation.
//
// Derivatives with respect to the *inputs* are carried forward as
// truncated second-order jets (value, gradient, Hessian).  Derivatives
// of a scalar result with respect to the *parameters* are obtained by a
// reverse sweep over a tape whose node values are jets.  Every lifted
// operation f on the jet ring has differential df = f'(a) (.) da, so the
// reverse sweep only needs the transpose of jet multiplication.

#pragma once

#include "fieldlearn/errors.hpp"

#include <array>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace fieldlearn {

/// Hard cap on the input dimension the jet engine supports.  The
/// operator matrices themselves are dimension-agnostic; only numerical
/// evaluation is capped.
inline constexpr int kMaxDim = 4;
inline constexpr int kMaxPacked = kMaxDim * (kMaxDim + 1) / 2;

/// Index of the (i, j) entry, i <= j, in the packed upper triangle of a
/// DxD symmetric matrix.
constexpr auto packed_index(int i, int j, int dim) -> int
{
    assert(i <= j && j < dim);
    return i * dim - i * (i - 1) / 2 + (j - i);
}

constexpr auto packed_size(int dim) -> int { return dim * (dim + 1) / 2; }

// ---------------------------------------------------------------------------
// Activations

enum class Activation : std::uint8_t { identity, tanh, sigmoid, relu, sin, exp };

inline auto activation_name(Activation a) -> std::string
{
    switch (a) {
    case Activation::identity: return "identity";
    case Activation::tanh: return "tanh";
    case Activation::sigmoid: return "sigmoid";
    case Activation::relu: return "relu";
    case Activation::sin: return "sin";
    case Activation::exp: return "exp";
    }
    return "?";
}

inline auto activation_from_name(std::string_view name) -> Activation
{
    if (name == "identity") { return Activation::identity; }
    if (name == "tanh") { return Activation::tanh; }
    if (name == "sigmoid") { return Activation::sigmoid; }
    if (name == "relu") { return Activation::relu; }
    if (name == "sin") { return Activation::sin; }
    if (name == "exp") { return Activation::exp; }
    throw ParseError("unknown activation '" + std::string(name) + "'");
}

/// Largest input-derivative order the engine can propagate through the
/// activation.  ReLU stops at 1 (its second derivative does not exist).
inline auto activation_max_jet_order(Activation a) -> int
{
    return a == Activation::relu ? 1 : 2;
}

/// True when every derivative of the activation from `order` 1 upward is
/// spatially constant, which makes a derivative transform degenerate
/// (identity and ReLU both have piecewise-constant first derivatives).
inline auto activation_derivative_is_constant(Activation a) -> bool
{
    return a == Activation::identity || a == Activation::relu;
}

/// f, f', f'', f''' at x.  Derivatives above the activation's supported
/// jet order are filled with zero and must not be read.
struct ActDerivs {
    double f0;
    double f1;
    double f2;
    double f3;
};

inline auto activation_derivs(Activation a, double x) -> ActDerivs
{
    switch (a) {
    case Activation::identity:
        return {x, 1.0, 0.0, 0.0};
    case Activation::tanh: {
        const double t = std::tanh(x);
        const double u = 1.0 - t * t;
        return {t, u, -2.0 * t * u, u * (6.0 * t * t - 2.0)};
    }
    case Activation::sigmoid: {
        const double s = 1.0 / (1.0 + std::exp(-x));
        const double u = s * (1.0 - s);
        return {s, u, u * (1.0 - 2.0 * s), u * (1.0 - 6.0 * s + 6.0 * s * s)};
    }
    case Activation::relu:
        return {x > 0.0 ? x : 0.0, x > 0.0 ? 1.0 : 0.0, 0.0, 0.0};
    case Activation::sin:
        return {std::sin(x), std::cos(x), -std::sin(x), -std::cos(x)};
    case Activation::exp: {
        const double e = std::exp(x);
        return {e, e, e, e};
    }
    }
    return {0, 0, 0, 0};
}

// ---------------------------------------------------------------------------
// Compile-time jets

/// Truncated Taylor expansion of a scalar quantity with respect to D
/// input coordinates, up to Order (0, 1 or 2).  The Hessian is stored
/// as a packed upper triangle, so symmetry is structural.
template <int D, int Order>
struct Jet {
    static_assert(D >= 1 && D <= kMaxDim);
    static_assert(Order >= 0 && Order <= 2);
    static constexpr int dim = D;
    static constexpr int order = Order;
    static constexpr int ng = Order >= 1 ? D : 0;
    static constexpr int nh = Order >= 2 ? packed_size(D) : 0;

    double v = 0.0;
    std::array<double, ng == 0 ? 1 : ng> g{};  // unused slot when Order == 0
    std::array<double, nh == 0 ? 1 : nh> h{};

    static auto constant(double value) -> Jet
    {
        Jet j;
        j.v = value;
        return j;
    }

    /// Seed coordinate `i` of the input point: value x_i, unit gradient.
    static auto variable(double value, int i) -> Jet
    {
        Jet j;
        j.v = value;
        if constexpr (Order >= 1) {
            j.g[i] = 1.0;
        }
        return j;
    }

    [[nodiscard]] auto grad(int i) const -> double
    {
        if constexpr (Order >= 1) {
            return g[i];
        } else {
            return 0.0;
        }
    }
    [[nodiscard]] auto hess(int i, int j) const -> double
    {
        if constexpr (Order >= 2) {
            return i <= j ? h[packed_index(i, j, D)] : h[packed_index(j, i, D)];
        } else {
            return 0.0;
        }
    }
};

template <int D, int Order>
inline auto operator+(const Jet<D, Order>& a, const Jet<D, Order>& b) -> Jet<D, Order>
{
    Jet<D, Order> r;
    r.v = a.v + b.v;
    if constexpr (Order >= 1) {
        for (int i = 0; i < D; ++i) { r.g[i] = a.g[i] + b.g[i]; }
    }
    if constexpr (Order >= 2) {
        for (int i = 0; i < Jet<D, Order>::nh; ++i) { r.h[i] = a.h[i] + b.h[i]; }
    }
    return r;
}

template <int D, int Order>
inline auto operator-(const Jet<D, Order>& a, const Jet<D, Order>& b) -> Jet<D, Order>
{
    Jet<D, Order> r;
    r.v = a.v - b.v;
    if constexpr (Order >= 1) {
        for (int i = 0; i < D; ++i) { r.g[i] = a.g[i] - b.g[i]; }
    }
    if constexpr (Order >= 2) {
        for (int i = 0; i < Jet<D, Order>::nh; ++i) { r.h[i] = a.h[i] - b.h[i]; }
    }
    return r;
}

template <int D, int Order>
inline auto operator*(const Jet<D, Order>& a, const Jet<D, Order>& b) -> Jet<D, Order>
{
    Jet<D, Order> r;
    r.v = a.v * b.v;
    if constexpr (Order >= 1) {
        for (int i = 0; i < D; ++i) { r.g[i] = a.v * b.g[i] + b.v * a.g[i]; }
    }
    if constexpr (Order >= 2) {
        for (int i = 0; i < D; ++i) {
            for (int j = i; j < D; ++j) {
                const int k = packed_index(i, j, D);
                r.h[k] = a.v * b.h[k] + b.v * a.h[k] + a.g[i] * b.g[j] + a.g[j] * b.g[i];
            }
        }
    }
    return r;
}

template <int D, int Order>
inline auto scale(const Jet<D, Order>& a, double c) -> Jet<D, Order>
{
    Jet<D, Order> r;
    r.v = c * a.v;
    if constexpr (Order >= 1) {
        for (int i = 0; i < D; ++i) { r.g[i] = c * a.g[i]; }
    }
    if constexpr (Order >= 2) {
        for (int i = 0; i < Jet<D, Order>::nh; ++i) { r.h[i] = c * a.h[i]; }
    }
    return r;
}

/// Lifted elementwise function: chain rule through value, gradient and
/// Hessian of the inner jet.
template <int D, int Order>
inline auto apply_activation(Activation act, const Jet<D, Order>& a) -> Jet<D, Order>
{
    const ActDerivs d = activation_derivs(act, a.v);
    Jet<D, Order> r;
    r.v = d.f0;
    if constexpr (Order >= 1) {
        for (int i = 0; i < D; ++i) { r.g[i] = d.f1 * a.g[i]; }
    }
    if constexpr (Order >= 2) {
        for (int i = 0; i < D; ++i) {
            for (int j = i; j < D; ++j) {
                const int k = packed_index(i, j, D);
                r.h[k] = d.f1 * a.h[k] + d.f2 * a.g[i] * a.g[j];
            }
        }
    }
    return r;
}

// ---------------------------------------------------------------------------
// Dynamic jet, the public result type of eval_jet / apply.

/// Value plus input-derivatives of one scalar output, with runtime
/// dimension and order.  Capacity is fixed at kMaxDim.
struct JetValue {
    int dim = 0;
    int order = 0;
    double value = 0.0;
    std::array<double, kMaxDim> grad{};
    std::array<double, kMaxPacked> hess{};

    [[nodiscard]] auto d1(int i) const -> double { return grad[i]; }
    [[nodiscard]] auto d2(int i, int j) const -> double
    {
        return i <= j ? hess[packed_index(i, j, dim)] : hess[packed_index(j, i, dim)];
    }

    /// Derivative component addressed by a flat index: 0 is the value,
    /// 1..D the gradient, then the packed Hessian.
    [[nodiscard]] auto component(int flat) const -> double
    {
        if (flat == 0) { return value; }
        if (flat <= dim) { return grad[flat - 1]; }
        return hess[flat - 1 - dim];
    }
};

/// Flat component index for a pure derivative of total order <= 2.
/// order 0 -> 0; d/dx_i -> 1 + i; d2/dx_i dx_j -> 1 + D + packed(i, j).
constexpr auto derivative_component(int dim, int i, int j) -> int
{
    if (i < 0) { return 0; }
    if (j < 0) { return 1 + i; }
    return i <= j ? 1 + dim + packed_index(i, j, dim) : 1 + dim + packed_index(j, i, dim);
}

constexpr auto component_count(int dim, int order) -> int
{
    return 1 + (order >= 1 ? dim : 0) + (order >= 2 ? packed_size(dim) : 0);
}

template <int D, int Order>
inline auto to_jet_value(const Jet<D, Order>& j) -> JetValue
{
    JetValue out;
    out.dim = D;
    out.order = Order;
    out.value = j.v;
    if constexpr (Order >= 1) {
        for (int i = 0; i < D; ++i) { out.grad[i] = j.g[i]; }
    }
    if constexpr (Order >= 2) {
        for (int i = 0; i < Jet<D, Order>::nh; ++i) { out.hess[i] = j.h[i]; }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Tape

using NodeId = std::int32_t;

/// One term of a fixed linear combination of derivative components of
/// other nodes (used to assemble operator-transformed predictions).
struct LinTerm {
    NodeId node;
    int component;  // flat derivative component, see derivative_component
    double coeff;
};

/// Record-and-replay tape for reverse-mode parameter gradients.  Node
/// values are jets in the input coordinates, so a single backward sweep
/// yields d(loss)/d(theta) even when the loss contains input-derivative
/// terms.  Single-threaded; one tape per training run.
template <int D, int Order>
class Tape {
  public:
    using JetT = Jet<D, Order>;

    explicit Tape(std::span<const double> params) : params_(params) {}

    /// Clears all nodes but keeps capacity; call between samples.
    void reset()
    {
        nodes_.clear();
        values_.clear();
        pool_args_.clear();
        pool_terms_.clear();
    }

    [[nodiscard]] auto size() const -> std::size_t { return nodes_.size(); }
    [[nodiscard]] auto value(NodeId id) const -> const JetT& { return values_[id]; }
    [[nodiscard]] auto params() const -> std::span<const double> { return params_; }

    auto constant(double c) -> NodeId { return push(Op::leaf, -1, -1, JetT::constant(c)); }
    auto input(const JetT& j) -> NodeId { return push(Op::leaf, -1, -1, j); }

    auto param(int param_index) -> NodeId
    {
        return push(Op::param, param_index, -1, JetT::constant(params_[param_index]));
    }

    auto add(NodeId a, NodeId b) -> NodeId
    {
        return push(Op::add, a, b, values_[a] + values_[b]);
    }
    auto sub(NodeId a, NodeId b) -> NodeId
    {
        return push(Op::sub, a, b, values_[a] - values_[b]);
    }
    auto mul(NodeId a, NodeId b) -> NodeId
    {
        return push(Op::mul, a, b, values_[a] * values_[b]);
    }
    auto scale(NodeId a, double c) -> NodeId
    {
        return push(Op::scale, a, -1, fieldlearn::scale(values_[a], c), c);
    }
    auto activation(Activation act, NodeId a) -> NodeId
    {
        if (Order > activation_max_jet_order(act)) {
            throw CapabilityError("activation " + activation_name(act)
                                  + " does not support jet order "
                                  + std::to_string(Order));
        }
        return push(Op::act, a, static_cast<NodeId>(act),
                    apply_activation(act, values_[a]));
    }
    auto abs(NodeId a) -> NodeId
    {
        JetT j = values_[a];
        const double s = j.v < 0.0 ? -1.0 : 1.0;  // subgradient sign(0) := +1
        return push(Op::scale, a, -1, fieldlearn::scale(j, s), s);
    }

    /// out = bias_param + sum_j weight_param[j] * in[j].  Parameter
    /// gradients of affine nodes are scattered directly in backward().
    auto affine(std::span<const NodeId> in, int weight_base, int bias_index) -> NodeId
    {
        JetT acc = JetT::constant(bias_index >= 0 ? params_[bias_index] : 0.0);
        for (std::size_t j = 0; j < in.size(); ++j) {
            const double w = params_[weight_base + static_cast<int>(j)];
            const JetT& x = values_[in[j]];
            acc.v += w * x.v;
            if constexpr (Order >= 1) {
                for (int i = 0; i < D; ++i) { acc.g[i] += w * x.g[i]; }
            }
            if constexpr (Order >= 2) {
                for (int i = 0; i < JetT::nh; ++i) { acc.h[i] += w * x.h[i]; }
            }
        }
        const auto off = static_cast<NodeId>(pool_args_.size());
        pool_args_.insert(pool_args_.end(), in.begin(), in.end());
        NodeId id = push(Op::affine, off, static_cast<NodeId>(in.size()), acc);
        nodes_[id].weight_base = weight_base;
        nodes_[id].bias_index = bias_index;
        return id;
    }

    /// Scalar node holding a fixed linear combination of derivative
    /// components of other nodes; its own gradient/Hessian slots are 0.
    auto linear_combination(std::span<const LinTerm> terms) -> NodeId
    {
        double acc = 0.0;
        for (const LinTerm& t : terms) {
            acc += t.coeff * component_of(values_[t.node], t.component);
        }
        const auto off = static_cast<NodeId>(pool_terms_.size());
        pool_terms_.insert(pool_terms_.end(), terms.begin(), terms.end());
        return push(Op::lincomb, off, static_cast<NodeId>(terms.size()),
                    JetT::constant(acc));
    }

    /// Reverse sweep.  Accumulates seed * d(value of `result`)/d(theta)
    /// into grad_out, which must have one slot per parameter.
    void backward(NodeId result, double seed, std::span<double> grad_out)
    {
        adjoints_.assign(nodes_.size(), JetT{});
        adjoints_[result].v = seed;
        for (auto id = static_cast<std::int64_t>(nodes_.size()) - 1; id >= 0; --id) {
            const Node& n = nodes_[id];
            const JetT& w = adjoints_[id];
            switch (n.op) {
            case Op::leaf:
                break;
            case Op::param:
                grad_out[n.a] += w.v;
                break;
            case Op::add:
                accumulate(n.a, w, 1.0);
                accumulate(n.b, w, 1.0);
                break;
            case Op::sub:
                accumulate(n.a, w, 1.0);
                accumulate(n.b, w, -1.0);
                break;
            case Op::scale:
                accumulate(n.a, w, n.aux);
                break;
            case Op::mul:
                mul_transpose(n.a, values_[n.b], w);
                mul_transpose(n.b, values_[n.a], w);
                break;
            case Op::act:
                act_transpose(n.a, static_cast<Activation>(n.b), w);
                break;
            case Op::affine: {
                for (NodeId j = 0; j < n.b; ++j) {
                    const NodeId arg = pool_args_[n.a + j];
                    const double wj = params_[n.weight_base + j];
                    accumulate(arg, w, wj);
                    grad_out[n.weight_base + j] += inner(values_[arg], w);
                }
                if (n.bias_index >= 0) { grad_out[n.bias_index] += w.v; }
                break;
            }
            case Op::lincomb:
                for (NodeId j = 0; j < n.b; ++j) {
                    const LinTerm& t = pool_terms_[n.a + j];
                    component_ref(adjoints_[t.node], t.component) += t.coeff * w.v;
                }
                break;
            }
        }
    }

  private:
    enum class Op : std::uint8_t { leaf, param, add, sub, mul, scale, act, affine, lincomb };

    struct Node {
        Op op;
        NodeId a;
        NodeId b;
        double aux;  // scale factor
        int weight_base = -1;
        int bias_index = -1;
    };

    auto push(Op op, NodeId a, NodeId b, const JetT& value, double aux = 0.0) -> NodeId
    {
        nodes_.push_back(Node{op, a, b, aux});
        values_.push_back(value);
        return static_cast<NodeId>(nodes_.size() - 1);
    }

    static auto component_of(const JetT& j, int flat) -> double
    {
        if (flat == 0) { return j.v; }
        if constexpr (Order >= 1) {
            if (flat <= D) { return j.g[flat - 1]; }
        }
        if constexpr (Order >= 2) {
            return j.h[flat - 1 - D];
        }
        throw CapabilityError("derivative component beyond jet order");
    }

    static auto component_ref(JetT& j, int flat) -> double&
    {
        if (flat == 0) { return j.v; }
        if constexpr (Order >= 1) {
            if (flat <= D) { return j.g[flat - 1]; }
        }
        if constexpr (Order >= 2) {
            return j.h[flat - 1 - D];
        }
        throw CapabilityError("derivative component beyond jet order");
    }

    void accumulate(NodeId target, const JetT& w, double c)
    {
        JetT& a = adjoints_[target];
        a.v += c * w.v;
        if constexpr (Order >= 1) {
            for (int i = 0; i < D; ++i) { a.g[i] += c * w.g[i]; }
        }
        if constexpr (Order >= 2) {
            for (int i = 0; i < JetT::nh; ++i) { a.h[i] += c * w.h[i]; }
        }
    }

    /// Packed inner product <u, w> over all stored jet components.
    static auto inner(const JetT& u, const JetT& w) -> double
    {
        double acc = u.v * w.v;
        if constexpr (Order >= 1) {
            for (int i = 0; i < D; ++i) { acc += u.g[i] * w.g[i]; }
        }
        if constexpr (Order >= 2) {
            for (int i = 0; i < JetT::nh; ++i) { acc += u.h[i] * w.h[i]; }
        }
        return acc;
    }

    /// adjoint[target] += transpose(multiply-by-u) applied to w,
    /// in packed coordinates.
    void mul_transpose(NodeId target, const JetT& u, const JetT& w)
    {
        JetT& a = adjoints_[target];
        a.v += inner(u, w);
        if constexpr (Order >= 1) {
            for (int k = 0; k < D; ++k) {
                double acc = u.v * w.g[k];
                if constexpr (Order >= 2) {
                    for (int i = 0; i <= k; ++i) {
                        acc += u.g[i] * w.h[packed_index(i, k, D)];
                    }
                    for (int j = k; j < D; ++j) {
                        acc += u.g[j] * w.h[packed_index(k, j, D)];
                    }
                }
                a.g[k] += acc;
            }
        }
        if constexpr (Order >= 2) {
            for (int i = 0; i < JetT::nh; ++i) { a.h[i] += u.v * w.h[i]; }
        }
    }

    /// Same as mul_transpose but for a lifted activation: the
    /// differential is multiplication by the lifted derivative, whose
    /// jet needs f', f'' and f''' at the argument value.
    void act_transpose(NodeId target, Activation act, const JetT& w)
    {
        const JetT& x = values_[target];
        const ActDerivs d = activation_derivs(act, x.v);
        JetT u;  // jet of f'(x)
        u.v = d.f1;
        if constexpr (Order >= 1) {
            for (int i = 0; i < D; ++i) { u.g[i] = d.f2 * x.g[i]; }
        }
        if constexpr (Order >= 2) {
            for (int i = 0; i < D; ++i) {
                for (int j = i; j < D; ++j) {
                    const int k = packed_index(i, j, D);
                    u.h[k] = d.f2 * x.h[k] + d.f3 * x.g[i] * x.g[j];
                }
            }
        }
        mul_transpose(target, u, w);
    }

    std::span<const double> params_;
    std::vector<Node> nodes_;
    std::vector<JetT> values_;
    std::vector<JetT> adjoints_;
    std::vector<NodeId> pool_args_;
    std::vector<LinTerm> pool_terms_;
};

/// d(loss)/d(theta) for a scalar loss assembled on a fresh tape by
/// `build(tape) -> NodeId`.
template <int D, int Order, class Build>
auto loss_gradient(std::span<const double> params, Build&& build) -> std::vector<double>
{
    Tape<D, Order> tape(params);
    const NodeId loss = build(tape);
    std::vector<double> grad(params.size(), 0.0);
    tape.backward(loss, 1.0, grad);
    return grad;
}

}  // namespace fieldlearn
