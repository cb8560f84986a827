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

// Textual operator matrices: rows separated by ';', entries by ',',
// each entry a sum of terms like `2*dx1^2*dx2` or `-7/25*dx1`.
// Decimal coefficients parse as exact rationals.

#pragma once

#include "fieldlearn/diffops.hpp"
#include "fieldlearn/errors.hpp"
#include "fieldlearn/rational.hpp"

#include <cctype>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace fieldlearn {

namespace dsl_detail {

struct RawTerm {
    Rational coeff;
    std::vector<std::pair<int, int>> partials;  // (axis, order), 0-based axis
};

class Parser {
  public:
    explicit Parser(std::string_view text) : text_(text) {}

    auto parse_matrix() -> std::vector<std::vector<std::vector<RawTerm>>>
    {
        skip_ws();
        expect('[');
        std::vector<std::vector<std::vector<RawTerm>>> rows;
        rows.push_back(parse_row());
        while (peek() == ';') {
            ++pos_;
            rows.push_back(parse_row());
        }
        expect(']');
        skip_ws();
        if (pos_ != text_.size()) { fail("trailing input after ']'"); }
        return rows;
    }

    [[nodiscard]] auto max_axis() const -> int { return max_axis_; }

  private:
    auto parse_row() -> std::vector<std::vector<RawTerm>>
    {
        std::vector<std::vector<RawTerm>> entries;
        entries.push_back(parse_entry());
        while (peek() == ',') {
            ++pos_;
            entries.push_back(parse_entry());
        }
        return entries;
    }

    auto parse_entry() -> std::vector<RawTerm>
    {
        std::vector<RawTerm> terms;
        bool negate = consume_sign();
        while (true) {
            RawTerm t = parse_term();
            if (negate) { t.coeff = -t.coeff; }
            terms.push_back(std::move(t));
            skip_ws();
            const char c = peek();
            if (c == '+' || c == '-') {
                negate = c == '-';
                ++pos_;
            } else {
                break;
            }
        }
        return terms;
    }

    auto parse_term() -> RawTerm
    {
        RawTerm t;
        t.coeff = Rational(1);
        bool any = false;
        while (true) {
            skip_ws();
            if (starts_with_number()) {
                t.coeff *= parse_number();
                any = true;
            } else if (starts_with_dx()) {
                t.partials.push_back(parse_partial());
                any = true;
            } else {
                break;
            }
            skip_ws();
            if (peek() == '*') {
                ++pos_;
            } else {
                break;
            }
        }
        if (!any) { fail("expected a coefficient or dx factor"); }
        return t;
    }

    auto parse_number() -> Rational
    {
        skip_ws();
        const std::size_t start = pos_;
        while (pos_ < text_.size()
               && (std::isdigit(static_cast<unsigned char>(text_[pos_])) != 0
                   || text_[pos_] == '.')) {
            ++pos_;
        }
        // allow an exact fraction "a/b"
        if (pos_ < text_.size() && text_[pos_] == '/') {
            ++pos_;
            while (pos_ < text_.size()
                   && std::isdigit(static_cast<unsigned char>(text_[pos_])) != 0) {
                ++pos_;
            }
        }
        try {
            return Rational::parse(text_.substr(start, pos_ - start));
        } catch (const std::invalid_argument& e) {
            fail(e.what());
        }
        return {};
    }

    auto parse_partial() -> std::pair<int, int>
    {
        pos_ += 2;  // "dx"
        const int axis = parse_int();
        if (axis < 1) { fail("dx index must be >= 1"); }
        int order = 1;
        if (peek_raw() == '^') {
            ++pos_;
            order = parse_int();
            if (order < 1) { fail("derivative order must be >= 1"); }
        }
        max_axis_ = std::max(max_axis_, axis);
        return {axis - 1, order};
    }

    auto parse_int() -> int
    {
        const std::size_t start = pos_;
        while (pos_ < text_.size()
               && std::isdigit(static_cast<unsigned char>(text_[pos_])) != 0) {
            ++pos_;
        }
        if (pos_ == start) { fail("expected an integer"); }
        return std::stoi(std::string(text_.substr(start, pos_ - start)));
    }

    auto consume_sign() -> bool
    {
        skip_ws();
        if (peek() == '-') {
            ++pos_;
            return true;
        }
        if (peek() == '+') { ++pos_; }
        return false;
    }

    [[nodiscard]] auto starts_with_number() -> bool
    {
        skip_ws();
        return pos_ < text_.size()
               && (std::isdigit(static_cast<unsigned char>(text_[pos_])) != 0
                   || text_[pos_] == '.');
    }

    [[nodiscard]] auto starts_with_dx() -> bool
    {
        skip_ws();
        return text_.substr(pos_, 2) == "dx";
    }

    auto peek() -> char
    {
        skip_ws();
        return pos_ < text_.size() ? text_[pos_] : '\0';
    }
    [[nodiscard]] auto peek_raw() const -> char
    {
        return pos_ < text_.size() ? text_[pos_] : '\0';
    }

    void expect(char c)
    {
        if (peek() != c) { fail(std::string("expected '") + c + "'"); }
        ++pos_;
    }

    void skip_ws()
    {
        while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_])) != 0) {
            ++pos_;
        }
    }

    [[noreturn]] void fail(const std::string& msg) const
    {
        throw ParseError("operator DSL: " + msg + " at offset " + std::to_string(pos_));
    }

    std::string_view text_;
    std::size_t pos_ = 0;
    int max_axis_ = 0;
};

}  // namespace dsl_detail

/// Parses an operator matrix.  The input dimension is inferred from the
/// highest dx index unless `dim` forces a larger one.
inline auto parse_operator_matrix(std::string_view text, std::optional<int> dim = {})
    -> OperatorMatrix
{
    dsl_detail::Parser parser(text);
    const auto rows = parser.parse_matrix();
    int input_dim = std::max(parser.max_axis(), dim.value_or(1));
    if (dim && *dim < parser.max_axis()) {
        throw ParseError("operator DSL: dx" + std::to_string(parser.max_axis())
                         + " exceeds requested dimension " + std::to_string(*dim));
    }
    const auto n_cols = rows.front().size();
    for (const auto& row : rows) {
        if (row.size() != n_cols) { throw ParseError("operator DSL: ragged rows"); }
    }
    OperatorMatrix m(static_cast<int>(rows.size()), static_cast<int>(n_cols), input_dim);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t c = 0; c < n_cols; ++c) {
            OperatorPoly poly;
            for (const auto& term : rows[r][c]) {
                DiffMonomial mono = DiffMonomial::identity(input_dim);
                for (const auto& [axis, order] : term.partials) {
                    mono.orders[axis] += order;
                }
                poly.add_term(std::move(mono), term.coeff);
            }
            m.set(static_cast<int>(r), static_cast<int>(c), std::move(poly));
        }
    }
    return m;
}

inline auto format_monomial(const DiffMonomial& m) -> std::string
{
    std::string s;
    for (int axis = 0; axis < m.dim(); ++axis) {
        if (m.orders[axis] == 0) { continue; }
        if (!s.empty()) { s += "*"; }
        s += "dx" + std::to_string(axis + 1);
        if (m.orders[axis] > 1) { s += "^" + std::to_string(m.orders[axis]); }
    }
    return s;
}

inline auto format_operator_poly(const OperatorPoly& p) -> std::string
{
    if (p.is_zero()) { return "0"; }
    std::string s;
    for (const auto& [mono, coeff] : p.terms()) {
        const bool neg = coeff < Rational(0);
        const Rational mag = neg ? -coeff : coeff;
        if (s.empty()) {
            if (neg) { s += "-"; }
        } else {
            s += neg ? " - " : " + ";
        }
        const std::string factors = format_monomial(mono);
        if (factors.empty()) {
            s += mag.str();
        } else if (mag == Rational(1)) {
            s += factors;
        } else {
            s += mag.str() + "*" + factors;
        }
    }
    return s;
}

inline auto format_operator_matrix(const OperatorMatrix& m) -> std::string
{
    std::string s = "[";
    for (int r = 0; r < m.rows(); ++r) {
        if (r > 0) { s += "; "; }
        for (int c = 0; c < m.cols(); ++c) {
            if (c > 0) { s += ", "; }
            s += format_operator_poly(m.at(r, c));
        }
    }
    s += "]";
    return s;
}

}  // namespace fieldlearn
