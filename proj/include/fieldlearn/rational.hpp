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

#pragma once

#include <boost/multiprecision/cpp_int.hpp>

#include <compare>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace fieldlearn {

/// Exact rational number with arbitrary-precision integer parts.
/// Always kept canonical: gcd(num, den) == 1 and den > 0.
class Rational {
  public:
    using Int = boost::multiprecision::cpp_int;

    Rational() : num_(0), den_(1) {}
    Rational(long long n) : num_(n), den_(1) {}  // NOLINT: implicit by design
    Rational(Int n) : num_(std::move(n)), den_(1) {}

    Rational(Int n, Int d) : num_(std::move(n)), den_(std::move(d))
    {
        if (den_ == 0) {
            throw std::domain_error("Rational: zero denominator");
        }
        normalize();
    }

    [[nodiscard]] auto numerator() const -> const Int& { return num_; }
    [[nodiscard]] auto denominator() const -> const Int& { return den_; }
    [[nodiscard]] auto is_zero() const -> bool { return num_ == 0; }
    [[nodiscard]] auto is_integer() const -> bool { return den_ == 1; }

    [[nodiscard]] auto to_double() const -> double
    {
        return static_cast<double>(num_) / static_cast<double>(den_);
    }

    friend auto operator+(const Rational& a, const Rational& b) -> Rational
    {
        return Rational(a.num_ * b.den_ + b.num_ * a.den_, a.den_ * b.den_);
    }
    friend auto operator-(const Rational& a, const Rational& b) -> Rational
    {
        return Rational(a.num_ * b.den_ - b.num_ * a.den_, a.den_ * b.den_);
    }
    friend auto operator*(const Rational& a, const Rational& b) -> Rational
    {
        return Rational(a.num_ * b.num_, a.den_ * b.den_);
    }
    friend auto operator/(const Rational& a, const Rational& b) -> Rational
    {
        if (b.num_ == 0) {
            throw std::domain_error("Rational: division by zero");
        }
        return Rational(a.num_ * b.den_, a.den_ * b.num_);
    }
    auto operator-() const -> Rational
    {
        Rational r = *this;
        r.num_ = -r.num_;
        return r;
    }
    auto operator+=(const Rational& o) -> Rational& { return *this = *this + o; }
    auto operator-=(const Rational& o) -> Rational& { return *this = *this - o; }
    auto operator*=(const Rational& o) -> Rational& { return *this = *this * o; }
    auto operator/=(const Rational& o) -> Rational& { return *this = *this / o; }

    friend auto operator==(const Rational& a, const Rational& b) -> bool
    {
        return a.num_ == b.num_ && a.den_ == b.den_;
    }
    friend auto operator<=>(const Rational& a, const Rational& b) -> std::strong_ordering
    {
        const Int lhs = a.num_ * b.den_;
        const Int rhs = b.num_ * a.den_;
        return lhs < rhs   ? std::strong_ordering::less
               : lhs > rhs ? std::strong_ordering::greater
                           : std::strong_ordering::equal;
    }

    /// Renders integers plainly and everything else as "num/den".
    [[nodiscard]] auto str() const -> std::string
    {
        std::string s = num_.str();
        if (den_ != 1) {
            s += "/" + den_.str();
        }
        return s;
    }

    friend auto operator<<(std::ostream& os, const Rational& r) -> std::ostream&
    {
        return os << r.str();
    }

    /// Parses "3", "-12", "7/25" or a decimal literal such as "0.28"
    /// (decimals become exact rationals, e.g. 0.28 -> 7/25).
    static auto parse(std::string_view text) -> Rational;

  private:
    void normalize()
    {
        if (den_ < 0) {
            num_ = -num_;
            den_ = -den_;
        }
        if (num_ == 0) {
            den_ = 1;
            return;
        }
        const Int g = boost::multiprecision::gcd(num_, den_);
        if (g > 1) {
            num_ /= g;
            den_ /= g;
        }
    }

    Int num_;
    Int den_;
};

inline auto Rational::parse(std::string_view text) -> Rational
{
    const auto bad = [&] {
        return std::invalid_argument("Rational: cannot parse '" + std::string(text) + "'");
    };
    if (text.empty()) {
        throw bad();
    }
    if (const auto slash = text.find('/'); slash != std::string_view::npos) {
        return parse(text.substr(0, slash)) / parse(text.substr(slash + 1));
    }
    bool negative = false;
    std::size_t pos = 0;
    if (text[pos] == '+' || text[pos] == '-') {
        negative = text[pos] == '-';
        ++pos;
    }
    Int scaled = 0;
    Int scale = 1;
    bool seen_digit = false;
    bool seen_dot = false;
    for (; pos < text.size(); ++pos) {
        const char c = text[pos];
        if (c == '.') {
            if (seen_dot) {
                throw bad();
            }
            seen_dot = true;
        } else if (c >= '0' && c <= '9') {
            scaled = scaled * 10 + (c - '0');
            if (seen_dot) {
                scale *= 10;
            }
            seen_digit = true;
        } else {
            throw bad();
        }
    }
    if (!seen_digit) {
        throw bad();
    }
    Rational r(scaled, scale);
    return negative ? -r : r;
}

}  // namespace fieldlearn
