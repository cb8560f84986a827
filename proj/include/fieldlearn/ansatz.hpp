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

// Construction of a transform G with C o G == 0 from an ansatz G =
// Gamma xi: expand the product symbolically, require every resulting
// operator coefficient to vanish, and solve the homogeneous system for
// Gamma over the rationals.

#pragma once

#include "fieldlearn/diffops.hpp"
#include "fieldlearn/rational.hpp"

#include <map>
#include <optional>
#include <utility>
#include <vector>

namespace fieldlearn {

/// The candidate operator vector xi plus bookkeeping for assembling G.
struct AnsatzBasis {
    int input_dim = 0;
    int potential_dim = 1;   // columns of G
    int max_degree = 0;
    std::vector<DiffMonomial> monomials;  // sorted by MonomialOrder, distinct

    /// All derivative monomials of total degree <= max_degree.
    static auto standard(int input_dim, int max_degree, int potential_dim) -> AnsatzBasis
    {
        AnsatzBasis b;
        b.input_dim = input_dim;
        b.potential_dim = potential_dim;
        b.max_degree = max_degree;
        std::vector<int> orders(input_dim, 0);
        enumerate(orders, 0, max_degree, b.monomials);
        std::sort(b.monomials.begin(), b.monomials.end(), MonomialOrder{});
        return b;
    }

    /// User-supplied operator list (kept in the given order).
    static auto custom(int input_dim, std::vector<DiffMonomial> monomials,
                       int potential_dim) -> AnsatzBasis
    {
        AnsatzBasis b;
        b.input_dim = input_dim;
        b.potential_dim = potential_dim;
        for (const auto& m : monomials) { b.max_degree = std::max(b.max_degree, m.total_degree()); }
        b.monomials = std::move(monomials);
        return b;
    }

  private:
    static void enumerate(std::vector<int>& orders, int axis, int budget,
                          std::vector<DiffMonomial>& out)
    {
        if (axis == static_cast<int>(orders.size())) {
            out.emplace_back(orders);
            return;
        }
        for (int k = 0; k <= budget; ++k) {
            orders[axis] = k;
            enumerate(orders, axis + 1, budget - k, out);
        }
        orders[axis] = 0;
    }
};

/// Homogeneous linear system M gamma = 0 whose solutions are exactly
/// the coefficient matrices Gamma with C Gamma xi == 0.  One unknown
/// per (row of G, basis monomial), row-of-G major; one equation per
/// (output row of C G, resulting operator monomial).
struct CoefficientSystem {
    struct Unknown {
        int g_row;
        int monomial;
    };
    struct Equation {
        int out_row;
        DiffMonomial monomial;
    };

    int rows = 0;
    int cols = 0;
    std::vector<Rational> matrix;  // row-major, rows x cols
    std::vector<Unknown> unknowns;
    std::vector<Equation> equations;

    [[nodiscard]] auto at(int r, int c) const -> const Rational&
    {
        return matrix[static_cast<std::size_t>(r) * cols + c];
    }
    auto at(int r, int c) -> Rational&
    {
        return matrix[static_cast<std::size_t>(r) * cols + c];
    }
};

inline auto coefficient_system(const OperatorMatrix& constraint, const AnsatzBasis& basis)
    -> CoefficientSystem
{
    if (constraint.input_dim() != basis.input_dim) {
        throw ShapeError("coefficient_system: constraint and basis dimensions differ");
    }
    CoefficientSystem sys;
    const int k = constraint.cols();  // rows of the G column
    const int n_mono = static_cast<int>(basis.monomials.size());
    sys.cols = k * n_mono;
    for (int i = 0; i < k; ++i) {
        for (int m = 0; m < n_mono; ++m) { sys.unknowns.push_back({i, m}); }
    }

    // For each unknown, expand C(r, i) o xi_m and bucket the resulting
    // coefficients by (output row, result monomial).
    std::map<std::pair<int, DiffMonomial>,
             std::map<int, Rational>,
             bool (*)(const std::pair<int, DiffMonomial>&, const std::pair<int, DiffMonomial>&)>
        buckets([](const auto& a, const auto& b) {
            if (a.first != b.first) { return a.first < b.first; }
            return MonomialOrder{}(a.second, b.second);
        });
    for (int r = 0; r < constraint.rows(); ++r) {
        for (int i = 0; i < k; ++i) {
            const OperatorPoly& entry = constraint.at(r, i);
            for (int m = 0; m < n_mono; ++m) {
                const int unknown = i * n_mono + m;
                for (const auto& [mono, coeff] : entry.terms()) {
                    const DiffMonomial result = mono.times(basis.monomials[m]);
                    buckets[{r, result}][unknown] += coeff;
                }
            }
        }
    }

    sys.rows = static_cast<int>(buckets.size());
    sys.matrix.assign(static_cast<std::size_t>(sys.rows) * sys.cols, Rational());
    int row = 0;
    for (const auto& [key, entries] : buckets) {
        sys.equations.push_back({key.first, key.second});
        for (const auto& [col, coeff] : entries) { sys.at(row, col) = coeff; }
        ++row;
    }
    return sys;
}

/// Basis of the nullspace of the system, one vector per free column in
/// ascending column order (the special solutions with that free
/// unknown set to 1).  Elimination is fraction-free (Bareiss) over the
/// integers after clearing denominators row by row.
inline auto rational_nullspace(const CoefficientSystem& sys)
    -> std::vector<std::vector<Rational>>
{
    using Int = Rational::Int;
    const int rows = sys.rows;
    const int cols = sys.cols;

    // Clear denominators: each row scaled by the lcm of its denominators.
    std::vector<std::vector<Int>> m(rows, std::vector<Int>(cols));
    for (int r = 0; r < rows; ++r) {
        Int lcm = 1;
        for (int c = 0; c < cols; ++c) {
            const Int& den = sys.at(r, c).denominator();
            lcm = lcm / boost::multiprecision::gcd(lcm, den) * den;
        }
        for (int c = 0; c < cols; ++c) {
            const Rational& q = sys.at(r, c);
            m[r][c] = q.numerator() * (lcm / q.denominator());
        }
    }

    // Bareiss fraction-free elimination to row echelon form.
    std::vector<std::pair<int, int>> pivots;  // (row, col)
    Int prev_pivot = 1;
    int pivot_row = 0;
    for (int col = 0; col < cols && pivot_row < rows; ++col) {
        int sel = -1;
        for (int r = pivot_row; r < rows; ++r) {
            if (m[r][col] != 0) {
                sel = r;
                break;
            }
        }
        if (sel < 0) { continue; }
        std::swap(m[pivot_row], m[sel]);
        for (int r = pivot_row + 1; r < rows; ++r) {
            for (int c = col + 1; c < cols; ++c) {
                m[r][c] = (m[pivot_row][col] * m[r][c] - m[r][col] * m[pivot_row][c])
                          / prev_pivot;
            }
            m[r][col] = 0;
        }
        prev_pivot = m[pivot_row][col];
        pivots.emplace_back(pivot_row, col);
        ++pivot_row;
    }

    std::vector<bool> is_pivot_col(cols, false);
    for (const auto& [r, c] : pivots) { is_pivot_col[c] = true; }

    std::vector<std::vector<Rational>> basis;
    for (int free = 0; free < cols; ++free) {
        if (is_pivot_col[free]) { continue; }
        std::vector<Rational> x(cols, Rational());
        x[free] = Rational(1);
        for (auto it = pivots.rbegin(); it != pivots.rend(); ++it) {
            const auto [r, c] = *it;
            Rational acc;
            for (int j = c + 1; j < cols; ++j) {
                if (m[r][j] != 0 && !x[j].is_zero()) { acc += Rational(m[r][j]) * x[j]; }
            }
            x[c] = -acc / Rational(m[r][c]);
        }
        basis.push_back(std::move(x));
    }
    return basis;
}

/// Assembles G from the first `potential_dim` nullspace basis vectors,
/// each scaled so its first nonzero coefficient (in unknown order) is
/// +1.  Empty result when the nullspace is too small.
inline auto find_transformation(const OperatorMatrix& constraint, int max_degree,
                                int potential_dim) -> std::optional<OperatorMatrix>
{
    const AnsatzBasis basis =
        AnsatzBasis::standard(constraint.input_dim(), max_degree, potential_dim);
    const CoefficientSystem sys = coefficient_system(constraint, basis);
    const auto nullspace = rational_nullspace(sys);
    if (static_cast<int>(nullspace.size()) < potential_dim) { return std::nullopt; }

    const int k = constraint.cols();
    const int n_mono = static_cast<int>(basis.monomials.size());
    OperatorMatrix g(k, potential_dim, constraint.input_dim());
    for (int p = 0; p < potential_dim; ++p) {
        std::vector<Rational> v = nullspace[p];
        Rational lead;
        for (const Rational& q : v) {
            if (!q.is_zero()) {
                lead = q;
                break;
            }
        }
        for (Rational& q : v) { q /= lead; }
        for (int i = 0; i < k; ++i) {
            OperatorPoly poly;
            for (int m = 0; m < n_mono; ++m) {
                poly.add_term(basis.monomials[m], v[i * n_mono + m]);
            }
            g.set(i, p, std::move(poly));
        }
    }
    return g;
}

}  // namespace fieldlearn
