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

#include "fieldlearn/autodiff.hpp"
#include "fieldlearn/diffops.hpp"
#include "fieldlearn/errors.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <fstream>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace fieldlearn {

/// Fully connected network: layer_widths[0] inputs through L affine
/// layers, each followed by its activation.  The output activation is
/// always the identity.
struct MlpSpec {
    std::vector<int> widths;             // input, hidden..., output
    std::vector<Activation> activations; // one per affine layer

    [[nodiscard]] auto input_dim() const -> int { return widths.front(); }
    [[nodiscard]] auto output_dim() const -> int { return widths.back(); }
    [[nodiscard]] auto layer_count() const -> int
    {
        return static_cast<int>(widths.size()) - 1;
    }

    void check() const
    {
        if (widths.size() < 2) { throw ShapeError("MlpSpec: need at least input and output widths"); }
        for (const int w : widths) {
            if (w < 1) { throw ShapeError("MlpSpec: widths must be >= 1"); }
        }
        if (static_cast<int>(activations.size()) != layer_count()) {
            throw ShapeError("MlpSpec: one activation per affine layer required");
        }
        if (activations.back() != Activation::identity) {
            throw ShapeError("MlpSpec: output layer activation must be identity");
        }
    }
};

/// Hidden layers with a common activation, identity on the output.
inline auto make_mlp(std::vector<int> widths, Activation hidden = Activation::tanh) -> MlpSpec
{
    MlpSpec spec;
    spec.widths = std::move(widths);
    const int layers = static_cast<int>(spec.widths.size()) - 1;
    spec.activations.assign(layers, hidden);
    spec.activations.back() = Activation::identity;
    spec.check();
    return spec;
}

/// Offsets of each layer's weight block (row-major out x in) and bias
/// block within the flat parameter vector.
struct ParamLayout {
    struct Layer {
        int w_off;
        int b_off;
        int fan_in;
        int fan_out;
    };
    std::vector<Layer> layers;
    int total = 0;

    explicit ParamLayout(const MlpSpec& spec)
    {
        int off = 0;
        for (int l = 0; l < spec.layer_count(); ++l) {
            const int in = spec.widths[l];
            const int out = spec.widths[l + 1];
            layers.push_back({off, off + in * out, in, out});
            off += in * out + out;
        }
        total = off;
    }
};

inline auto param_count(const MlpSpec& spec) -> int { return ParamLayout(spec).total; }

namespace rng {

/// splitmix64; used to derive independent seed streams.
inline auto mix(std::uint64_t x) -> std::uint64_t
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline auto derive_seed(std::uint64_t base, std::uint64_t stream) -> std::uint64_t
{
    return mix(base ^ mix(stream));
}

/// Uniform double in [0, 1) with an explicit bit mapping, so results
/// do not depend on the standard library's distribution internals.
inline auto uniform01(std::mt19937_64& gen) -> double
{
    return static_cast<double>(gen() >> 11) * 0x1.0p-53;
}

inline auto uniform(std::mt19937_64& gen, double lo, double hi) -> double
{
    return lo + (hi - lo) * uniform01(gen);
}

/// Box-Muller standard normal (explicit for the same reason).
inline auto normal(std::mt19937_64& gen) -> double
{
    double u1 = uniform01(gen);
    while (u1 <= 0.0) { u1 = uniform01(gen); }
    const double u2 = uniform01(gen);
    constexpr double two_pi = 6.283185307179586476925286766559;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
}

}  // namespace rng

/// Glorot-uniform weights, zero biases; deterministic per seed.
inline auto init_params(const MlpSpec& spec, std::uint64_t seed) -> std::vector<double>
{
    spec.check();
    const ParamLayout layout(spec);
    std::vector<double> params(layout.total, 0.0);
    std::mt19937_64 gen(seed);
    for (const auto& layer : layout.layers) {
        const double bound = std::sqrt(6.0 / (layer.fan_in + layer.fan_out));
        for (int i = 0; i < layer.fan_in * layer.fan_out; ++i) {
            params[layer.w_off + i] = rng::uniform(gen, -bound, bound);
        }
    }
    return params;
}

/// Plain layered evaluation, no derivatives.
inline auto forward(const MlpSpec& spec, std::span<const double> params,
                    std::span<const double> x) -> std::vector<double>
{
    spec.check();
    if (static_cast<int>(x.size()) != spec.input_dim()) {
        throw ShapeError("forward: input size " + std::to_string(x.size())
                         + " != network input dim " + std::to_string(spec.input_dim()));
    }
    const ParamLayout layout(spec);
    std::vector<double> cur(x.begin(), x.end());
    std::vector<double> next;
    for (int l = 0; l < spec.layer_count(); ++l) {
        const auto& layer = layout.layers[l];
        next.assign(layer.fan_out, 0.0);
        for (int o = 0; o < layer.fan_out; ++o) {
            double acc = params[layer.b_off + o];
            const double* w = &params[layer.w_off + o * layer.fan_in];
            for (int i = 0; i < layer.fan_in; ++i) { acc += w[i] * cur[i]; }
            next[o] = activation_derivs(spec.activations[l], acc).f0;
        }
        cur.swap(next);
    }
    return cur;
}

/// Reusable jet-forward evaluator (keeps layer buffers between calls).
template <int D, int Order>
class MlpEvaluator {
  public:
    using JetT = Jet<D, Order>;

    explicit MlpEvaluator(const MlpSpec& spec) : spec_(spec), layout_(spec)
    {
        spec.check();
        if (spec.input_dim() != D) { throw ShapeError("MlpEvaluator: input dim mismatch"); }
        for (int l = 0; l + 1 < spec.layer_count(); ++l) {
            if (Order > activation_max_jet_order(spec.activations[l])) {
                throw CapabilityError("activation " + activation_name(spec.activations[l])
                                      + " cannot propagate jet order "
                                      + std::to_string(Order));
            }
        }
    }

    auto eval(std::span<const double> params, std::span<const double> x)
        -> std::span<const JetT>
    {
        cur_.clear();
        for (int i = 0; i < D; ++i) { cur_.push_back(JetT::variable(x[i], i)); }
        for (int l = 0; l < spec_.layer_count(); ++l) {
            const auto& layer = layout_.layers[l];
            next_.assign(layer.fan_out, JetT{});
            for (int o = 0; o < layer.fan_out; ++o) {
                JetT acc = JetT::constant(params[layer.b_off + o]);
                const double* w = &params[layer.w_off + o * layer.fan_in];
                for (int i = 0; i < layer.fan_in; ++i) {
                    const JetT& in = cur_[i];
                    acc.v += w[i] * in.v;
                    if constexpr (Order >= 1) {
                        for (int c = 0; c < D; ++c) { acc.g[c] += w[i] * in.g[c]; }
                    }
                    if constexpr (Order >= 2) {
                        for (int c = 0; c < JetT::nh; ++c) { acc.h[c] += w[i] * in.h[c]; }
                    }
                }
                next_[o] = apply_activation(spec_.activations[l], acc);
            }
            cur_.swap(next_);
        }
        return cur_;
    }

    [[nodiscard]] auto layout() const -> const ParamLayout& { return layout_; }

  private:
    const MlpSpec& spec_;
    ParamLayout layout_;
    std::vector<JetT> cur_;
    std::vector<JetT> next_;
};

/// Builds the network forward pass on a tape; returns the output nodes.
template <int D, int Order>
auto mlp_tape_forward(Tape<D, Order>& tape, const MlpSpec& spec, const ParamLayout& layout,
                      std::span<const NodeId> inputs) -> std::vector<NodeId>
{
    std::vector<NodeId> cur(inputs.begin(), inputs.end());
    std::vector<NodeId> next;
    for (int l = 0; l < spec.layer_count(); ++l) {
        const auto& layer = layout.layers[l];
        next.clear();
        for (int o = 0; o < layer.fan_out; ++o) {
            NodeId n = tape.affine(cur, layer.w_off + o * layer.fan_in, layer.b_off + o);
            if (spec.activations[l] != Activation::identity) {
                n = tape.activation(spec.activations[l], n);
            }
            next.push_back(n);
        }
        cur.swap(next);
    }
    return cur;
}

namespace detail {

template <class F>
auto dispatch_dim(int dim, F&& f)
{
    switch (dim) {
    case 1: return f(std::integral_constant<int, 1>{});
    case 2: return f(std::integral_constant<int, 2>{});
    case 3: return f(std::integral_constant<int, 3>{});
    case 4: return f(std::integral_constant<int, 4>{});
    default:
        throw CapabilityError("input dimension " + std::to_string(dim)
                              + " exceeds engine limit " + std::to_string(kMaxDim));
    }
}

template <class F>
auto dispatch_dim_order(int dim, int order, F&& f)
{
    return dispatch_dim(dim, [&](auto d) {
        switch (order) {
        case 0: return f(d, std::integral_constant<int, 0>{});
        case 1: return f(d, std::integral_constant<int, 1>{});
        case 2: return f(d, std::integral_constant<int, 2>{});
        default:
            throw CapabilityError("derivative order " + std::to_string(order)
                                  + " exceeds engine limit 2");
        }
    });
}

}  // namespace detail

/// Network outputs with input-derivatives up to `order` at x.
inline auto eval_jet(const MlpSpec& spec, std::span<const double> params,
                     std::span<const double> x, int order) -> std::vector<JetValue>
{
    spec.check();
    if (static_cast<int>(x.size()) != spec.input_dim()) {
        throw ShapeError("eval_jet: input size mismatch");
    }
    return detail::dispatch_dim_order(
        static_cast<int>(x.size()), order, [&](auto d, auto ord) {
            MlpEvaluator<d.value, ord.value> ev(spec);
            const auto jets = ev.eval(params, x);
            std::vector<JetValue> out;
            out.reserve(jets.size());
            for (const auto& j : jets) { out.push_back(to_jet_value(j)); }
            return out;
        });
}

/// Adapter exposing a network as a differentiable field.
class MlpField : public JetField {
  public:
    MlpField(const MlpSpec& spec, std::span<const double> params)
        : spec_(spec), params_(params)
    {
    }

    [[nodiscard]] auto input_dim() const -> int override { return spec_.input_dim(); }
    [[nodiscard]] auto output_dim() const -> int override { return spec_.output_dim(); }

    void eval(std::span<const double> x, int order, std::span<JetValue> out) const override
    {
        const auto jets = eval_jet(spec_, params_, x, order);
        std::copy(jets.begin(), jets.end(), out.begin());
    }

  private:
    const MlpSpec& spec_;
    std::span<const double> params_;
};

// ---------------------------------------------------------------------------
// Activation validation against a transform operator

struct Validation {
    bool ok;
    std::string reason;

    static auto pass() -> Validation { return {true, {}}; }
    static auto reject(std::string why) -> Validation { return {false, std::move(why)}; }
};

/// Rejects networks whose activations cannot support the derivative
/// order of `op`: an activation with a constant derivative makes the
/// transformed field lose its spatial dependence, which rules out ReLU
/// (and identity hidden layers) for any derivative transform.
inline auto validate_for_operator(const MlpSpec& spec, const OperatorMatrix& op) -> Validation
{
    spec.check();
    const int order = op.max_derivative_order();
    if (order == 0) { return Validation::pass(); }
    if (order > 2) {
        return Validation::reject("operator derivative order " + std::to_string(order)
                                  + " exceeds the autodiff engine's supported order 2");
    }
    for (int l = 0; l + 1 < spec.layer_count(); ++l) {
        const Activation act = spec.activations[l];
        if (activation_derivative_is_constant(act)) {
            return Validation::reject(
                "hidden activation " + activation_name(act)
                + " has a (piecewise) constant derivative; an order-"
                + std::to_string(order) + " transform of it cannot vary spatially");
        }
        if (order > activation_max_jet_order(act)) {
            return Validation::reject("hidden activation " + activation_name(act)
                                      + " is not differentiable to order "
                                      + std::to_string(order));
        }
    }
    return Validation::pass();
}

// ---------------------------------------------------------------------------
// Serialization

inline auto spec_to_json(const MlpSpec& spec) -> nlohmann::json
{
    nlohmann::json j;
    j["widths"] = spec.widths;
    auto& acts = j["activations"] = nlohmann::json::array();
    for (const Activation a : spec.activations) { acts.push_back(activation_name(a)); }
    return j;
}

inline auto spec_from_json(const nlohmann::json& j) -> MlpSpec
{
    MlpSpec spec;
    spec.widths = j.at("widths").get<std::vector<int>>();
    for (const auto& name : j.at("activations")) {
        spec.activations.push_back(activation_from_name(name.get<std::string>()));
    }
    spec.check();
    return spec;
}

/// Raw little-endian float64 blob plus a JSON sidecar describing it.
inline void save_params(const std::string& path_prefix, const MlpSpec& spec,
                        std::span<const double> params, std::uint64_t seed)
{
    std::ofstream bin(path_prefix + ".params.bin", std::ios::binary);
    if (!bin) { throw ParseError("cannot open " + path_prefix + ".params.bin for writing"); }
    bin.write(reinterpret_cast<const char*>(params.data()),
              static_cast<std::streamsize>(params.size() * sizeof(double)));
    nlohmann::json sidecar;
    sidecar["widths"] = spec.widths;
    sidecar["seed"] = seed;
    sidecar["count"] = params.size();
    std::ofstream meta(path_prefix + ".params.json");
    meta << sidecar.dump(2) << "\n";
}

inline auto load_params(const std::string& path_prefix) -> std::vector<double>
{
    std::ifstream meta(path_prefix + ".params.json");
    if (!meta) { throw ParseError("cannot open " + path_prefix + ".params.json"); }
    nlohmann::json sidecar = nlohmann::json::parse(meta);
    const auto count = sidecar.at("count").get<std::size_t>();
    std::vector<double> params(count);
    std::ifstream bin(path_prefix + ".params.bin", std::ios::binary);
    if (!bin) { throw ParseError("cannot open " + path_prefix + ".params.bin"); }
    bin.read(reinterpret_cast<char*>(params.data()),
             static_cast<std::streamsize>(count * sizeof(double)));
    if (bin.gcount() != static_cast<std::streamsize>(count * sizeof(double))) {
        throw ParseError("params blob shorter than sidecar count");
    }
    return params;
}

}  // namespace fieldlearn
