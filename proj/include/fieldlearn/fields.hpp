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

#include "fieldlearn/errors.hpp"
#include "fieldlearn/network.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace fieldlearn {

/// Axis-aligned box domain.
struct Box {
    std::vector<double> lo;
    std::vector<double> hi;

    [[nodiscard]] auto dim() const -> int { return static_cast<int>(lo.size()); }

    static auto square(double a, double b, int dim = 2) -> Box
    {
        return {std::vector<double>(dim, a), std::vector<double>(dim, b)};
    }
};

/// Scattered observations: N points in R^D with targets in R^K.
struct Dataset {
    int n = 0;
    int d = 0;
    int k = 0;
    std::vector<double> inputs;   // n x d, row-major
    std::vector<double> targets;  // n x k, row-major
    double noise_sigma = 0.0;
    std::uint64_t seed = 0;

    [[nodiscard]] auto x(int i) const -> std::span<const double>
    {
        return {inputs.data() + static_cast<std::size_t>(i) * d, static_cast<std::size_t>(d)};
    }
    [[nodiscard]] auto y(int i) const -> std::span<const double>
    {
        return {targets.data() + static_cast<std::size_t>(i) * k, static_cast<std::size_t>(k)};
    }

    [[nodiscard]] auto slice(int begin, int end) const -> Dataset
    {
        Dataset out;
        out.n = end - begin;
        out.d = d;
        out.k = k;
        out.noise_sigma = noise_sigma;
        out.seed = seed;
        out.inputs.assign(inputs.begin() + static_cast<std::ptrdiff_t>(begin) * d,
                          inputs.begin() + static_cast<std::ptrdiff_t>(end) * d);
        out.targets.assign(targets.begin() + static_cast<std::ptrdiff_t>(begin) * k,
                           targets.begin() + static_cast<std::ptrdiff_t>(end) * k);
        return out;
    }
};

using FieldFn = std::function<std::vector<double>(std::span<const double>)>;

// ---------------------------------------------------------------------------
// Analytic fields

/// The simulated divergence-free field; `a` shapes the exponential
/// envelope and is exposed because the reference value is not pinned
/// anywhere.
inline auto divfree_field(std::span<const double> x, double a) -> std::array<double, 2>
{
    const double p = x[0] * x[1];
    const double e = std::exp(-a * p);
    const double s = std::sin(p);
    const double c = std::cos(p);
    return {e * (a * x[0] * s - x[0] * c), e * (x[1] * c - a * x[1] * s)};
}

/// Divergence-free field plus the affine part (1.1 x1, -0.3 x2), so the
/// divergence is the constant 0.8.
inline auto affine_field(std::span<const double> x, double a) -> std::array<double, 2>
{
    auto f = divfree_field(x, a);
    f[0] += 1.1 * x[0];
    f[1] += -0.3 * x[1];
    return f;
}

/// Saint-Venant cantilever beam material and geometry (SI units).
struct StrainParams {
    double load = 2e3;             // P [N]
    double elastic_modulus = 200e9;  // E [Pa]
    double poisson = 0.28;         // nu
    double length = 20e-3;         // l [m]
    double height = 10e-3;         // h [m]
    double width = 5e-3;           // t [m]

    [[nodiscard]] auto inertia() const -> double
    {
        return width * height * height * height / 12.0;
    }
    void check() const
    {
        if (load <= 0 || elastic_modulus <= 0 || length <= 0 || height <= 0 || width <= 0) {
            throw std::domain_error("StrainParams: geometry and load must be positive");
        }
        if (poisson <= 0.0 || poisson >= 0.5) {
            throw std::domain_error("StrainParams: Poisson ratio must be in (0, 0.5)");
        }
    }
};

/// Plane-stress cantilever strain components (eps_xx, eps_yy, eps_xy)
/// at a point inside the beam rectangle [0, l] x [-h/2, h/2].
inline auto saint_venant_strain(double x, double y, const StrainParams& p)
    -> std::array<double, 3>
{
    p.check();
    if (x < 0.0 || x > p.length || std::abs(y) > p.height / 2.0) {
        throw std::domain_error("saint_venant_strain: point outside the beam");
    }
    const double pei = p.load / (p.elastic_modulus * p.inertia());
    const double half_h = p.height / 2.0;
    return {pei * (p.length - x) * y,
            -p.poisson * pei * (p.length - x) * y,
            -(1.0 + p.poisson) * pei / 2.0 * (half_h * half_h - y * y)};
}

inline auto strain_domain(const StrainParams& p) -> Box
{
    return {{0.0, -p.height / 2.0}, {p.length, p.height / 2.0}};
}

// ---------------------------------------------------------------------------
// Sampling and grids

/// Inputs uniform over the box, targets field(x) plus N(0, sigma^2)
/// noise per component; deterministic per seed.
inline auto sample_dataset(const FieldFn& field, int n, const Box& box, double sigma,
                           std::uint64_t seed) -> Dataset
{
    if (n < 1) { throw std::domain_error("sample_dataset: n must be >= 1"); }
    if (sigma < 0.0) { throw std::domain_error("sample_dataset: sigma must be >= 0"); }
    Dataset ds;
    ds.n = n;
    ds.d = box.dim();
    ds.noise_sigma = sigma;
    ds.seed = seed;
    std::mt19937_64 gen(seed);
    std::vector<double> x(box.dim());
    for (int i = 0; i < n; ++i) {
        for (int c = 0; c < box.dim(); ++c) {
            x[c] = rng::uniform(gen, box.lo[c], box.hi[c]);
        }
        std::vector<double> y = field(x);
        if (i == 0) {
            ds.k = static_cast<int>(y.size());
            ds.targets.reserve(static_cast<std::size_t>(n) * ds.k);
            ds.inputs.reserve(static_cast<std::size_t>(n) * ds.d);
        }
        for (double& v : y) { v += sigma * rng::normal(gen); }
        ds.inputs.insert(ds.inputs.end(), x.begin(), x.end());
        ds.targets.insert(ds.targets.end(), y.begin(), y.end());
    }
    return ds;
}

/// Uniform inclusive grid of m points per axis over the box.
inline auto prediction_grid(const Box& box, int m) -> std::vector<std::vector<double>>
{
    if (m < 2) { throw std::domain_error("prediction_grid: need m >= 2 points per axis"); }
    const int dim = box.dim();
    std::vector<std::vector<double>> points;
    std::vector<int> index(dim, 0);
    while (true) {
        std::vector<double> x(dim);
        for (int c = 0; c < dim; ++c) {
            x[c] = box.lo[c] + (box.hi[c] - box.lo[c]) * index[c] / (m - 1);
        }
        points.push_back(std::move(x));
        int axis = dim - 1;
        while (axis >= 0 && ++index[axis] == m) {
            index[axis] = 0;
            --axis;
        }
        if (axis < 0) { break; }
    }
    return points;
}

// ---------------------------------------------------------------------------
// CSV I/O.  Header "x1,..,xD,y1,..,yK"; values written with 17
// significant digits so a save/load round trip is bit exact.

inline void save_field_csv(const std::string& path, const Dataset& ds)
{
    std::ofstream out(path);
    if (!out) { throw ParseError("cannot open " + path + " for writing"); }
    for (int c = 0; c < ds.d; ++c) { out << (c > 0 ? "," : "") << "x" << c + 1; }
    for (int c = 0; c < ds.k; ++c) { out << ",y" << c + 1; }
    out << "\n";
    char buf[40];
    for (int i = 0; i < ds.n; ++i) {
        for (int c = 0; c < ds.d; ++c) {
            std::snprintf(buf, sizeof buf, "%.17g", ds.x(i)[c]);
            out << (c > 0 ? "," : "") << buf;
        }
        for (int c = 0; c < ds.k; ++c) {
            std::snprintf(buf, sizeof buf, "%.17g", ds.y(i)[c]);
            out << "," << buf;
        }
        out << "\n";
    }
}

inline auto load_field_csv(const std::string& path) -> Dataset
{
    std::ifstream in(path);
    if (!in) { throw ParseError("cannot open " + path); }
    std::string line;
    if (!std::getline(in, line)) { throw ParseError(path + ": empty file"); }

    const auto split = [](const std::string& s) {
        std::vector<std::string> fields;
        std::size_t start = 0;
        while (true) {
            const auto comma = s.find(',', start);
            fields.push_back(s.substr(start, comma - start));
            if (comma == std::string::npos) { break; }
            start = comma + 1;
        }
        return fields;
    };

    const auto header = split(line);
    int d = 0;
    int k = 0;
    for (const auto& name : header) {
        if (name == "x" + std::to_string(d + 1) && k == 0) {
            ++d;
        } else if (name == "y" + std::to_string(k + 1)) {
            ++k;
        } else {
            throw ParseError(path + ": malformed header column '" + name + "'");
        }
    }
    if (d == 0 || k == 0) { throw ParseError(path + ": header must list x and y columns"); }

    Dataset ds;
    ds.d = d;
    ds.k = k;
    int row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) { continue; }
        const auto fields = split(line);
        if (static_cast<int>(fields.size()) != d + k) {
            throw ParseError(path + ": row " + std::to_string(row) + " has "
                             + std::to_string(fields.size()) + " columns, expected "
                             + std::to_string(d + k));
        }
        for (int c = 0; c < d + k; ++c) {
            double v = 0.0;
            const auto& f = fields[c];
            const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
            if (ec != std::errc{} || ptr != f.data() + f.size()) {
                throw ParseError(path + ": row " + std::to_string(row)
                                 + ": cannot parse value '" + f + "'");
            }
            if (!std::isfinite(v)) {
                throw ParseError(path + ": row " + std::to_string(row)
                                 + ": non-finite value '" + f + "'");
            }
            (c < d ? ds.inputs : ds.targets).push_back(v);
        }
        ++ds.n;
    }
    if (ds.n == 0) { throw ParseError(path + ": no data rows"); }
    return ds;
}

}  // namespace fieldlearn
