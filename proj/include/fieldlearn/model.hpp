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
#include "fieldlearn/network.hpp"
#include "fieldlearn/operator_dsl.hpp"

#include <nlohmann/json.hpp>

#include <span>
#include <string>
#include <variant>
#include <vector>

namespace fieldlearn {

/// One learned affine-tail coefficient: adds c * x[coord] to output
/// `component`.  Mapped through a constraint operator this produces a
/// constant, which is how prescribed-divergence fields are handled.
struct AffineTailTerm {
    int component;
    int coord;
};

/// f = G[g] (+ affine tail): a potential network g transformed by an
/// operator matrix chosen so the constraint holds identically.
/// Trainable parameters are the potential's parameters followed by the
/// tail coefficients.
struct ConstrainedModel {
    MlpSpec potential;
    OperatorMatrix transform;
    std::vector<AffineTailTerm> tail;

    [[nodiscard]] auto input_dim() const -> int { return transform.input_dim(); }
    [[nodiscard]] auto output_dim() const -> int { return transform.rows(); }
    [[nodiscard]] auto param_count() const -> int
    {
        return fieldlearn::param_count(potential) + static_cast<int>(tail.size());
    }

    void check() const
    {
        potential.check();
        if (potential.input_dim() != transform.input_dim()) {
            throw ShapeError("ConstrainedModel: potential input dim != transform input dim");
        }
        if (potential.output_dim() != transform.cols()) {
            throw ShapeError("ConstrainedModel: potential output dim "
                             + std::to_string(potential.output_dim())
                             + " != transform columns " + std::to_string(transform.cols()));
        }
        for (const auto& t : tail) {
            if (t.component < 0 || t.component >= output_dim() || t.coord < 0
                || t.coord >= input_dim()) {
                throw ShapeError("ConstrainedModel: affine tail index out of range");
            }
        }
        const Validation v = validate_for_operator(potential, transform);
        if (!v.ok) { throw ShapeError("ConstrainedModel: " + v.reason); }
    }
};

/// Unconstrained baseline: the network models the field directly.
struct StandardModel {
    MlpSpec net;

    [[nodiscard]] auto input_dim() const -> int { return net.input_dim(); }
    [[nodiscard]] auto output_dim() const -> int { return net.output_dim(); }
    [[nodiscard]] auto param_count() const -> int { return fieldlearn::param_count(net); }
};

using AnyModel = std::variant<StandardModel, ConstrainedModel>;

inline auto model_input_dim(const AnyModel& m) -> int
{
    return std::visit([](const auto& x) { return x.input_dim(); }, m);
}
inline auto model_output_dim(const AnyModel& m) -> int
{
    return std::visit([](const auto& x) { return x.output_dim(); }, m);
}
inline auto model_param_count(const AnyModel& m) -> int
{
    return std::visit([](const auto& x) { return x.param_count(); }, m);
}

/// Network weights Glorot-initialized, tail coefficients zero.
inline auto init_model_params(const AnyModel& m, std::uint64_t seed) -> std::vector<double>
{
    if (const auto* std_model = std::get_if<StandardModel>(&m)) {
        return init_params(std_model->net, seed);
    }
    const auto& cm = std::get<ConstrainedModel>(m);
    std::vector<double> params = init_params(cm.potential, seed);
    params.resize(params.size() + cm.tail.size(), 0.0);
    return params;
}

// ---------------------------------------------------------------------------
// Fast typed evaluation

/// Evaluates a constrained model's predictions at points; jet order is
/// fixed to the transform's derivative order.
template <int D, int Order>
class ConstrainedEvaluator {
  public:
    explicit ConstrainedEvaluator(const ConstrainedModel& model)
        : model_(model), plan_(make_apply_plan(model.transform)), net_(model.potential),
          n_net_params_(param_count(model.potential))
    {
        if (Order < plan_.order) {
            throw CapabilityError("ConstrainedEvaluator: transform needs jet order "
                                  + std::to_string(plan_.order));
        }
    }

    auto eval(std::span<const double> params, std::span<const double> x)
        -> std::vector<double>
    {
        const auto jets = net_.eval(params.first(n_net_params_), x);
        std::vector<double> out(plan_.rows, 0.0);
        for (int r = 0; r < plan_.rows; ++r) {
            double acc = 0.0;
            for (const ApplyTerm& t : plan_.row_terms[r]) {
                acc += t.coeff * jet_component(jets[t.col], t.component);
            }
            out[r] = acc;
        }
        for (std::size_t t = 0; t < model_.tail.size(); ++t) {
            out[model_.tail[t].component] +=
                params[n_net_params_ + t] * x[model_.tail[t].coord];
        }
        return out;
    }

  private:
    static auto jet_component(const Jet<D, Order>& j, int flat) -> double
    {
        if (flat == 0) { return j.v; }
        if constexpr (Order >= 1) {
            if (flat <= D) { return j.g[flat - 1]; }
        }
        if constexpr (Order >= 2) {
            return j.h[flat - 1 - D];
        }
        throw CapabilityError("jet component beyond evaluator order");
    }

    const ConstrainedModel& model_;
    ApplyPlan plan_;
    MlpEvaluator<D, Order> net_;
    int n_net_params_;
};

/// Model prediction at a point (runtime dispatch on dimension).
inline auto predict(const AnyModel& m, std::span<const double> params,
                    std::span<const double> x) -> std::vector<double>
{
    if (const auto* std_model = std::get_if<StandardModel>(&m)) {
        return forward(std_model->net, params, x);
    }
    const auto& cm = std::get<ConstrainedModel>(m);
    const int order = cm.transform.max_derivative_order();
    return detail::dispatch_dim_order(cm.input_dim(), order, [&](auto d, auto ord) {
        ConstrainedEvaluator<d.value, ord.value> ev(cm);
        return ev.eval(params, x);
    });
}

// ---------------------------------------------------------------------------
// Constraint residual

/// Flattened evaluation plan for C applied to a model's prediction
/// function.  For constrained models the plan expands C o G term by
/// term with no symbolic cancellation, so the result is honest
/// floating-point evidence rather than a restatement of the algebra.
struct ResidualPlan {
    int order = 0;                                   // jet order of the underlying network
    std::vector<std::vector<ApplyTerm>> row_terms;   // over network outputs
    struct TailTerm {
        int row;
        int tail_index;
        int coord;     // -1: contributes coeff * c; otherwise coeff * c * x[coord]
        double coeff;
    };
    std::vector<TailTerm> tail_terms;
    int n_net_params = 0;
    int rows = 0;
};

inline auto make_residual_plan(const StandardModel& model, const OperatorMatrix& constraint)
    -> ResidualPlan
{
    if (constraint.cols() != model.output_dim()) {
        throw ShapeError("constraint_residual: constraint columns != model outputs");
    }
    const ApplyPlan base = make_apply_plan(constraint);
    ResidualPlan plan;
    plan.order = base.order;
    plan.row_terms = base.row_terms;
    plan.rows = base.rows;
    plan.n_net_params = model.param_count();
    return plan;
}

inline auto make_residual_plan(const ConstrainedModel& model, const OperatorMatrix& constraint)
    -> ResidualPlan
{
    if (constraint.cols() != model.output_dim()) {
        throw ShapeError("constraint_residual: constraint columns != model outputs");
    }
    if (constraint.input_dim() != model.input_dim()) {
        throw ShapeError("constraint_residual: input dimension mismatch");
    }
    const int total_order =
        constraint.max_derivative_order() + model.transform.max_derivative_order();
    if (total_order > 2) {
        throw CapabilityError(
            "numerical residual of this constrained model needs derivative order "
            + std::to_string(total_order)
            + "; the annihilation C o G == 0 is checked symbolically instead");
    }
    ResidualPlan plan;
    plan.order = total_order;
    plan.rows = constraint.rows();
    plan.row_terms.resize(constraint.rows());
    plan.n_net_params = param_count(model.potential);
    const int dim = constraint.input_dim();
    for (int r = 0; r < constraint.rows(); ++r) {
        for (int k = 0; k < constraint.cols(); ++k) {
            for (const auto& [beta, c_beta] : constraint.at(r, k).terms()) {
                // derivative of the transformed potential
                for (int j = 0; j < model.transform.cols(); ++j) {
                    for (const auto& [alpha, g_alpha] : model.transform.at(k, j).terms()) {
                        const DiffMonomial combined = beta.times(alpha);
                        int i1 = -1;
                        int i2 = -1;
                        for (int axis = 0; axis < dim; ++axis) {
                            for (int rep = 0; rep < combined.orders[axis]; ++rep) {
                                (i1 < 0 ? i1 : i2) = axis;
                            }
                        }
                        plan.row_terms[r].push_back(
                            {j, derivative_component(dim, i1, i2),
                             c_beta.to_double() * g_alpha.to_double()});
                    }
                }
                // derivative of the affine tail
                for (std::size_t t = 0; t < model.tail.size(); ++t) {
                    if (model.tail[t].component != k) { continue; }
                    const int deg = beta.total_degree();
                    if (deg == 0) {
                        plan.tail_terms.push_back({r, static_cast<int>(t),
                                                   model.tail[t].coord, c_beta.to_double()});
                    } else if (deg == 1 && beta.orders[model.tail[t].coord] == 1) {
                        plan.tail_terms.push_back(
                            {r, static_cast<int>(t), -1, c_beta.to_double()});
                    }
                }
            }
        }
    }
    return plan;
}

template <int D, int Order>
auto eval_residual_plan(const ResidualPlan& plan, std::span<const double> params,
                        std::span<const double> x, MlpEvaluator<D, Order>& ev)
    -> std::vector<double>
{
    const auto jets = ev.eval(params.first(plan.n_net_params), x);
    std::vector<JetValue> vals(jets.size());
    for (std::size_t j = 0; j < jets.size(); ++j) { vals[j] = to_jet_value(jets[j]); }
    std::vector<double> out(plan.rows, 0.0);
    for (int r = 0; r < plan.rows; ++r) {
        double acc = 0.0;
        for (const ApplyTerm& t : plan.row_terms[r]) {
            acc += t.coeff * vals[t.col].component(t.component);
        }
        out[r] = acc;
    }
    for (const auto& t : plan.tail_terms) {
        const double c = params[plan.n_net_params + t.tail_index];
        out[t.row] += t.coord >= 0 ? t.coeff * c * x[t.coord] : t.coeff * c;
    }
    return out;
}

/// C applied to the model's prediction function at x.
inline auto constraint_residual(const AnyModel& m, const OperatorMatrix& constraint,
                                std::span<const double> params, std::span<const double> x)
    -> std::vector<double>
{
    const MlpSpec& net = std::holds_alternative<StandardModel>(m)
                             ? std::get<StandardModel>(m).net
                             : std::get<ConstrainedModel>(m).potential;
    const ResidualPlan plan =
        std::holds_alternative<StandardModel>(m)
            ? make_residual_plan(std::get<StandardModel>(m), constraint)
            : make_residual_plan(std::get<ConstrainedModel>(m), constraint);
    return detail::dispatch_dim_order(
        constraint.input_dim(), plan.order, [&](auto d, auto ord) {
            MlpEvaluator<d.value, ord.value> ev(net);
            return eval_residual_plan(plan, params, x, ev);
        });
}

// ---------------------------------------------------------------------------
// Tape construction (training support)

/// Builds prediction nodes for one sample on a tape.  `coords` are the
/// input jet nodes for the point's coordinates.
template <int D, int Order>
auto model_tape_predict(Tape<D, Order>& tape, const StandardModel& model,
                        const ParamLayout& layout, std::span<const NodeId> coords)
    -> std::vector<NodeId>
{
    return mlp_tape_forward(tape, model.net, layout, coords);
}

template <int D, int Order>
auto model_tape_predict(Tape<D, Order>& tape, const ConstrainedModel& model,
                        const ParamLayout& layout, const ApplyPlan& plan,
                        std::span<const NodeId> coords) -> std::vector<NodeId>
{
    const std::vector<NodeId> pot = mlp_tape_forward(tape, model.potential, layout, coords);
    const int n_net_params = layout.total;
    std::vector<NodeId> out(plan.rows);
    std::vector<LinTerm> terms;
    for (int r = 0; r < plan.rows; ++r) {
        terms.clear();
        for (const ApplyTerm& t : plan.row_terms[r]) {
            terms.push_back({pot[t.col], t.component, t.coeff});
        }
        out[r] = tape.linear_combination(terms);
    }
    for (std::size_t t = 0; t < model.tail.size(); ++t) {
        const NodeId c = tape.param(n_net_params + static_cast<int>(t));
        const NodeId contrib = tape.mul(c, coords[model.tail[t].coord]);
        out[model.tail[t].component] = tape.add(out[model.tail[t].component], contrib);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Bundle serialization: JSON manifest plus a params blob.

inline auto model_to_json(const AnyModel& m) -> nlohmann::json
{
    nlohmann::json j;
    if (const auto* std_model = std::get_if<StandardModel>(&m)) {
        j["model"] = "standard";
        j["network"] = spec_to_json(std_model->net);
        return j;
    }
    const auto& cm = std::get<ConstrainedModel>(m);
    j["model"] = "constrained";
    j["network"] = spec_to_json(cm.potential);
    j["transform"] = format_operator_matrix(cm.transform);
    auto& tail = j["affine_tail"] = nlohmann::json::array();
    for (const auto& t : cm.tail) {
        tail.push_back({{"component", t.component}, {"coord", t.coord}});
    }
    return j;
}

inline auto model_from_json(const nlohmann::json& j) -> AnyModel
{
    const auto kind = j.at("model").get<std::string>();
    if (kind == "standard") { return StandardModel{spec_from_json(j.at("network"))}; }
    if (kind != "constrained") { throw ParseError("unknown model kind '" + kind + "'"); }
    MlpSpec spec = spec_from_json(j.at("network"));
    OperatorMatrix transform =
        parse_operator_matrix(j.at("transform").get<std::string>(), spec.input_dim());
    ConstrainedModel cm{std::move(spec), std::move(transform), {}};
    if (j.contains("affine_tail")) {
        for (const auto& t : j.at("affine_tail")) {
            cm.tail.push_back({t.at("component").get<int>(), t.at("coord").get<int>()});
        }
    }
    cm.check();
    return cm;
}

inline void save_model_bundle(const std::string& path_prefix, const AnyModel& m,
                              std::span<const double> params, std::uint64_t seed)
{
    std::ofstream manifest(path_prefix + ".model.json");
    if (!manifest) { throw ParseError("cannot open " + path_prefix + ".model.json"); }
    manifest << model_to_json(m).dump(2) << "\n";
    const MlpSpec& net = std::holds_alternative<StandardModel>(m)
                             ? std::get<StandardModel>(m).net
                             : std::get<ConstrainedModel>(m).potential;
    save_params(path_prefix, net, params, seed);
}

inline auto load_model_bundle(const std::string& path_prefix)
    -> std::pair<AnyModel, std::vector<double>>
{
    std::ifstream manifest(path_prefix + ".model.json");
    if (!manifest) { throw ParseError("cannot open " + path_prefix + ".model.json"); }
    AnyModel m = model_from_json(nlohmann::json::parse(manifest));
    std::vector<double> params = load_params(path_prefix);
    if (static_cast<int>(params.size()) != model_param_count(m)) {
        throw ParseError("params blob size does not match the model manifest");
    }
    return {std::move(m), std::move(params)};
}

}  // namespace fieldlearn
