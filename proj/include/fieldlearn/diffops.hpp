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

// Matrices of constant-coefficient linear differential operators over
// exact rational coefficients.  Composition and the zero test are
// symbolic; coefficients only become floating point inside apply().

#pragma once

#include "fieldlearn/autodiff.hpp"
#include "fieldlearn/errors.hpp"
#include "fieldlearn/rational.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace fieldlearn {

/// A single partial-derivative monomial: entry i is the order of
/// d/dx_i.  Length equals the operator's input dimension; total degree
/// zero is the identity operator.
struct DiffMonomial {
    std::vector<int> orders;

    DiffMonomial() = default;
    explicit DiffMonomial(std::vector<int> o) : orders(std::move(o)) {}
    static auto identity(int dim) -> DiffMonomial
    {
        return DiffMonomial(std::vector<int>(dim, 0));
    }
    static auto d(int dim, int axis, int order = 1) -> DiffMonomial
    {
        DiffMonomial m = identity(dim);
        m.orders[axis] = order;
        return m;
    }

    [[nodiscard]] auto dim() const -> int { return static_cast<int>(orders.size()); }
    [[nodiscard]] auto total_degree() const -> int
    {
        return std::accumulate(orders.begin(), orders.end(), 0);
    }
    [[nodiscard]] auto times(const DiffMonomial& o) const -> DiffMonomial
    {
        DiffMonomial r = *this;
        for (std::size_t i = 0; i < orders.size(); ++i) { r.orders[i] += o.orders[i]; }
        return r;
    }

    friend auto operator==(const DiffMonomial& a, const DiffMonomial& b) -> bool = default;
};

/// Canonical ordering: total degree ascending, then lexicographically
/// descending on the multi-index, so for D = 2 and degree <= 1 the
/// order is [1, dx1, dx2].
struct MonomialOrder {
    auto operator()(const DiffMonomial& a, const DiffMonomial& b) const -> bool
    {
        const int da = a.total_degree();
        const int db = b.total_degree();
        if (da != db) { return da < db; }
        return a.orders > b.orders;
    }
};

/// Polynomial in the partial-derivative symbols with exact rational
/// coefficients.  Zero coefficients are never stored, so structural
/// equality is semantic equality.
class OperatorPoly {
  public:
    using TermMap = std::map<DiffMonomial, Rational, MonomialOrder>;

    OperatorPoly() = default;
    OperatorPoly(DiffMonomial m, Rational c) { add_term(std::move(m), std::move(c)); }

    void add_term(DiffMonomial m, Rational c)
    {
        if (c.is_zero()) { return; }
        if (auto it = terms_.find(m); it != terms_.end()) {
            it->second += c;
            if (it->second.is_zero()) { terms_.erase(it); }
        } else {
            terms_.emplace(std::move(m), std::move(c));
        }
    }

    [[nodiscard]] auto terms() const -> const TermMap& { return terms_; }
    [[nodiscard]] auto is_zero() const -> bool { return terms_.empty(); }
    [[nodiscard]] auto max_degree() const -> int
    {
        int deg = 0;
        for (const auto& [m, c] : terms_) { deg = std::max(deg, m.total_degree()); }
        return deg;
    }

    friend auto operator+(const OperatorPoly& a, const OperatorPoly& b) -> OperatorPoly
    {
        OperatorPoly r = a;
        for (const auto& [m, c] : b.terms_) { r.add_term(m, c); }
        return r;
    }
    friend auto operator*(const OperatorPoly& a, const OperatorPoly& b) -> OperatorPoly
    {
        OperatorPoly r;
        for (const auto& [ma, ca] : a.terms_) {
            for (const auto& [mb, cb] : b.terms_) { r.add_term(ma.times(mb), ca * cb); }
        }
        return r;
    }
    [[nodiscard]] auto scaled(const Rational& c) const -> OperatorPoly
    {
        OperatorPoly r;
        for (const auto& [m, coeff] : terms_) { r.add_term(m, coeff * c); }
        return r;
    }

    friend auto operator==(const OperatorPoly& a, const OperatorPoly& b) -> bool = default;

  private:
    TermMap terms_;
};

/// Rows x cols grid of operator polynomials acting on fields over R^D.
/// Immutable after construction in practice; safe to share.
class OperatorMatrix {
  public:
    OperatorMatrix(int rows, int cols, int input_dim)
        : rows_(rows), cols_(cols), input_dim_(input_dim),
          entries_(static_cast<std::size_t>(rows) * cols)
    {
        if (rows < 1 || cols < 1 || input_dim < 1) {
            throw ShapeError("OperatorMatrix: rows, cols and input_dim must be positive");
        }
    }

    static auto identity(int n, int input_dim) -> OperatorMatrix
    {
        OperatorMatrix m(n, n, input_dim);
        for (int i = 0; i < n; ++i) {
            m.at(i, i) = OperatorPoly(DiffMonomial::identity(input_dim), 1);
        }
        return m;
    }

    [[nodiscard]] auto rows() const -> int { return rows_; }
    [[nodiscard]] auto cols() const -> int { return cols_; }
    [[nodiscard]] auto input_dim() const -> int { return input_dim_; }

    auto at(int r, int c) -> OperatorPoly& { return entries_[idx(r, c)]; }
    [[nodiscard]] auto at(int r, int c) const -> const OperatorPoly& { return entries_[idx(r, c)]; }

    void set(int r, int c, OperatorPoly p)
    {
        for (const auto& [m, coeff] : p.terms()) {
            if (m.dim() != input_dim_) {
                throw ShapeError("OperatorMatrix: monomial dimension mismatch");
            }
        }
        entries_[idx(r, c)] = std::move(p);
    }

    [[nodiscard]] auto max_derivative_order() const -> int
    {
        int deg = 0;
        for (const auto& e : entries_) { deg = std::max(deg, e.max_degree()); }
        return deg;
    }

    friend auto operator==(const OperatorMatrix& a, const OperatorMatrix& b) -> bool = default;

    friend auto operator+(const OperatorMatrix& a, const OperatorMatrix& b) -> OperatorMatrix
    {
        if (a.rows_ != b.rows_ || a.cols_ != b.cols_ || a.input_dim_ != b.input_dim_) {
            throw ShapeError("OperatorMatrix: addition shape mismatch");
        }
        OperatorMatrix r = a;
        for (std::size_t i = 0; i < r.entries_.size(); ++i) {
            r.entries_[i] = r.entries_[i] + b.entries_[i];
        }
        return r;
    }

    [[nodiscard]] auto scaled(const Rational& c) const -> OperatorMatrix
    {
        OperatorMatrix r = *this;
        for (auto& e : r.entries_) { e = e.scaled(c); }
        return r;
    }

  private:
    [[nodiscard]] auto idx(int r, int c) const -> std::size_t
    {
        return static_cast<std::size_t>(r) * cols_ + c;
    }

    int rows_;
    int cols_;
    int input_dim_;
    std::vector<OperatorPoly> entries_;
};

/// Operator composition A o B: matrix product with polynomial
/// multiplication of entries, exact in the rationals.
inline auto compose(const OperatorMatrix& a, const OperatorMatrix& b) -> OperatorMatrix
{
    if (a.cols() != b.rows()) {
        throw ShapeError("compose: inner dimensions differ ("
                         + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + ")");
    }
    if (a.input_dim() != b.input_dim()) {
        throw ShapeError("compose: operators act on different input dimensions");
    }
    OperatorMatrix r(a.rows(), b.cols(), a.input_dim());
    for (int i = 0; i < a.rows(); ++i) {
        for (int j = 0; j < b.cols(); ++j) {
            OperatorPoly acc;
            for (int k = 0; k < a.cols(); ++k) { acc = acc + a.at(i, k) * b.at(k, j); }
            r.at(i, j) = std::move(acc);
        }
    }
    return r;
}

inline auto is_zero(const OperatorMatrix& a) -> bool
{
    for (int i = 0; i < a.rows(); ++i) {
        for (int j = 0; j < a.cols(); ++j) {
            if (!a.at(i, j).is_zero()) { return false; }
        }
    }
    return true;
}

// ---------------------------------------------------------------------------
// Built-in operators

/// Gradient of a scalar potential; the transform for curl-free fields.
inline auto grad(int dim) -> OperatorMatrix
{
    OperatorMatrix g(dim, 1, dim);
    for (int i = 0; i < dim; ++i) {
        g.at(i, 0) = OperatorPoly(DiffMonomial::d(dim, i), 1);
    }
    return g;
}

/// Divergence constraint row [d/dx_1 ... d/dx_D].
inline auto divergence(int dim) -> OperatorMatrix
{
    OperatorMatrix c(1, dim, dim);
    for (int i = 0; i < dim; ++i) {
        c.at(0, i) = OperatorPoly(DiffMonomial::d(dim, i), 1);
    }
    return c;
}

/// Curl of a 3D vector potential; the transform for divergence-free fields.
inline auto curl3d() -> OperatorMatrix
{
    OperatorMatrix g(3, 3, 3);
    const auto dx = [](int axis) { return DiffMonomial::d(3, axis); };
    g.at(0, 1) = OperatorPoly(dx(2), -1);
    g.at(0, 2) = OperatorPoly(dx(1), 1);
    g.at(1, 0) = OperatorPoly(dx(2), 1);
    g.at(1, 2) = OperatorPoly(dx(0), -1);
    g.at(2, 0) = OperatorPoly(dx(1), -1);
    g.at(2, 1) = OperatorPoly(dx(0), 1);
    return g;
}

/// Curl as a constraint matrix for curl-free fields (same matrix as the
/// divergence-free transform).
inline auto curl_constraint3d() -> OperatorMatrix { return curl3d(); }

/// Rotated 2D gradient [d/dx_2; -d/dx_1]; annihilated by divergence(2).
inline auto rot_grad2d() -> OperatorMatrix
{
    OperatorMatrix g(2, 1, 2);
    g.at(0, 0) = OperatorPoly(DiffMonomial::d(2, 1), 1);
    g.at(1, 0) = OperatorPoly(DiffMonomial::d(2, 0), -1);
    return g;
}

/// Airy stress function transform for plane-stress strain components
/// (eps_xx, eps_yy, eps_xy) from a scalar potential.
inline auto airy_strain(const Rational& nu) -> OperatorMatrix
{
    OperatorMatrix g(3, 1, 2);
    const DiffMonomial dxx = DiffMonomial::d(2, 0, 2);
    const DiffMonomial dyy = DiffMonomial::d(2, 1, 2);
    DiffMonomial dxy = DiffMonomial::identity(2);
    dxy.orders = {1, 1};
    OperatorPoly exx(dyy, 1);
    exx.add_term(dxx, -nu);
    OperatorPoly eyy(dxx, 1);
    eyy.add_term(dyy, -nu);
    OperatorPoly exy(dxy, -(nu + Rational(1)));
    g.at(0, 0) = std::move(exx);
    g.at(1, 0) = std::move(eyy);
    g.at(2, 0) = std::move(exy);
    return g;
}

/// Plane-stress equilibrium constraints on (eps_xx, eps_yy, eps_xy).
inline auto equilibrium_constraint(const Rational& nu) -> OperatorMatrix
{
    OperatorMatrix c(2, 3, 2);
    const DiffMonomial dx = DiffMonomial::d(2, 0);
    const DiffMonomial dy = DiffMonomial::d(2, 1);
    const Rational one_minus_nu = Rational(1) - nu;
    c.at(0, 0) = OperatorPoly(dx, 1);
    c.at(0, 1) = OperatorPoly(dx, nu);
    c.at(0, 2) = OperatorPoly(dy, one_minus_nu);
    c.at(1, 0) = OperatorPoly(dy, nu);
    c.at(1, 1) = OperatorPoly(dy, 1);
    c.at(1, 2) = OperatorPoly(dx, one_minus_nu);
    return c;
}

// ---------------------------------------------------------------------------
// Numerical application

/// Anything that can report its jets at a point: networks, analytic
/// test fields, transformed models.
class JetField {
  public:
    virtual ~JetField() = default;
    [[nodiscard]] virtual auto input_dim() const -> int = 0;
    [[nodiscard]] virtual auto output_dim() const -> int = 0;
    /// Fills out[j] with the order-`order` jet of output j at x.
    virtual void eval(std::span<const double> x, int order,
                      std::span<JetValue> out) const = 0;
};

/// One floating-point term of an unrolled operator row:
/// coeff * (derivative component `component` of field output `col`).
struct ApplyTerm {
    int col;
    int component;
    double coeff;
};

/// Operator matrix lowered to flat per-row term lists for fast repeated
/// application to jets.
struct ApplyPlan {
    int rows = 0;
    int cols = 0;
    int input_dim = 0;
    int order = 0;
    std::vector<std::vector<ApplyTerm>> row_terms;
};

inline auto make_apply_plan(const OperatorMatrix& op) -> ApplyPlan
{
    const int order = op.max_derivative_order();
    if (order > 2) {
        throw CapabilityError("operator requires derivative order "
                              + std::to_string(order) + "; engine supports <= 2");
    }
    if (op.input_dim() > kMaxDim) {
        throw CapabilityError("operator input dimension " + std::to_string(op.input_dim())
                              + " exceeds engine limit " + std::to_string(kMaxDim));
    }
    ApplyPlan plan;
    plan.rows = op.rows();
    plan.cols = op.cols();
    plan.input_dim = op.input_dim();
    plan.order = order;
    plan.row_terms.resize(op.rows());
    for (int r = 0; r < op.rows(); ++r) {
        for (int c = 0; c < op.cols(); ++c) {
            for (const auto& [mono, coeff] : op.at(r, c).terms()) {
                int i = -1;
                int j = -1;
                for (int axis = 0; axis < mono.dim(); ++axis) {
                    for (int rep = 0; rep < mono.orders[axis]; ++rep) {
                        (i < 0 ? i : j) = axis;
                    }
                }
                plan.row_terms[r].push_back(
                    {c, derivative_component(op.input_dim(), i, j), coeff.to_double()});
            }
        }
    }
    return plan;
}

inline auto apply(const ApplyPlan& plan, std::span<const JetValue> jets)
    -> std::vector<double>
{
    std::vector<double> out(plan.rows, 0.0);
    for (int r = 0; r < plan.rows; ++r) {
        double acc = 0.0;
        for (const ApplyTerm& t : plan.row_terms[r]) {
            acc += t.coeff * jets[t.col].component(t.component);
        }
        out[r] = acc;
    }
    return out;
}

/// (A g)(x): derivatives supplied by the autodiff engine, coefficients
/// converted to double at application time.
inline auto apply(const OperatorMatrix& op, const JetField& g, std::span<const double> x)
    -> std::vector<double>
{
    if (g.output_dim() != op.cols()) {
        throw ShapeError("apply: field output dimension " + std::to_string(g.output_dim())
                         + " != operator columns " + std::to_string(op.cols()));
    }
    if (g.input_dim() != op.input_dim()
        || static_cast<int>(x.size()) != op.input_dim()) {
        throw ShapeError("apply: input dimension mismatch");
    }
    const ApplyPlan plan = make_apply_plan(op);
    std::vector<JetValue> jets(g.output_dim());
    g.eval(x, plan.order, jets);
    return apply(plan, jets);
}

}  // namespace fieldlearn
