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

#include "fieldlearn/fields.hpp"
#include "fieldlearn/model.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

namespace fieldlearn {

struct PlateauConfig {
    int patience = 50;
    double factor = 0.5;
    double min_lr = 1e-5;
};

struct TrainConfig {
    double lr = 1e-2;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    int epochs = 2000;
    int batch_size = 0;  // 0: full batch when n <= 1000, else 256
    double weight_decay = 0.0;  // gamma, L2 on weights
    double lambda = 0.0;        // constraint penalty weight
    int constraint_points = 0;  // N_c
    bool squared_penalty = false;  // |c| by default; c^2 when set
    PlateauConfig plateau;
    std::uint64_t seed = 0;

    void check(bool has_constraint) const
    {
        if (lambda < 0.0 || weight_decay < 0.0) {
            throw std::domain_error("TrainConfig: lambda and weight_decay must be >= 0");
        }
        if (lambda > 0.0 && (constraint_points <= 0 || !has_constraint)) {
            throw std::domain_error(
                "TrainConfig: lambda > 0 requires constraint_points > 0 and a constraint");
        }
        if (plateau.factor <= 0.0 || plateau.factor >= 1.0) {
            throw std::domain_error("TrainConfig: plateau factor must be in (0, 1)");
        }
        if (epochs < 1) { throw std::domain_error("TrainConfig: epochs must be >= 1"); }
    }

    [[nodiscard]] auto effective_batch(int n) const -> int
    {
        if (batch_size > 0) { return std::min(batch_size, n); }
        return n <= 1000 ? n : 256;
    }
};

struct TrainReport {
    std::vector<double> train_loss;
    std::vector<double> val_loss;
    std::vector<double> lr_trace;
    std::vector<double> final_params;
    double wall_seconds = 0.0;
};

// ---------------------------------------------------------------------------
// Losses

/// (1/N) sum_i |y_i - yhat_i|^2, summed over output components.
inline auto mse_loss(std::span<const double> preds, std::span<const double> targets,
                     int n_samples) -> double
{
    if (n_samples < 1 || preds.empty()) {
        throw std::domain_error("mse_loss: empty input");
    }
    if (preds.size() != targets.size()) {
        throw ShapeError("mse_loss: size mismatch");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const double e = preds[i] - targets[i];
        acc += e * e;
    }
    return acc / n_samples;
}

/// Data MSE plus lambda times the mean (absolute or squared)
/// constraint violation at the sampled constraint points.
inline auto augmented_loss(std::span<const double> preds, std::span<const double> targets,
                           int n_samples, std::span<const double> residuals, double lambda,
                           bool squared = false) -> double
{
    const double base = mse_loss(preds, targets, n_samples);
    if (lambda == 0.0) { return base; }
    if (residuals.empty()) {
        throw std::domain_error("augmented_loss: lambda > 0 with no residuals");
    }
    double acc = 0.0;
    for (const double c : residuals) { acc += squared ? c * c : std::abs(c); }
    return base + lambda * acc / static_cast<double>(residuals.size());
}

/// base + gamma * sum of squared weights.  Biases are excluded; any
/// parameters beyond the network layout (affine tail coefficients)
/// count as weights.
inline auto l2_regularized_loss(double base, std::span<const double> params,
                                const ParamLayout& layout, double gamma) -> double
{
    if (gamma == 0.0) { return base; }
    double acc = 0.0;
    for (const auto& layer : layout.layers) {
        for (int i = 0; i < layer.fan_in * layer.fan_out; ++i) {
            const double w = params[layer.w_off + i];
            acc += w * w;
        }
    }
    for (std::size_t i = layout.total; i < params.size(); ++i) { acc += params[i] * params[i]; }
    return base + gamma * acc;
}

// ---------------------------------------------------------------------------
// ADAM

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    std::int64_t step = 0;

    static auto init(std::size_t n) -> AdamState
    {
        return {std::vector<double>(n, 0.0), std::vector<double>(n, 0.0), 0};
    }
};

inline void adam_step(std::span<double> params, std::span<const double> grads,
                      AdamState& state, double lr, double beta1 = 0.9, double beta2 = 0.999,
                      double eps = 1e-8)
{
    ++state.step;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * grads[i];
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * grads[i] * grads[i];
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        params[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

// ---------------------------------------------------------------------------
// Training loop

namespace train_detail {

/// Validation-loss plateau scheduler: halve the learning rate after
/// `patience` epochs without relative improvement.
class PlateauScheduler {
  public:
    PlateauScheduler(double lr, PlateauConfig cfg) : lr_(lr), cfg_(cfg) {}

    auto observe(double val_loss) -> double
    {
        constexpr double rel_threshold = 1e-4;
        if (val_loss < best_ * (1.0 - rel_threshold)) {
            best_ = val_loss;
            bad_epochs_ = 0;
        } else if (++bad_epochs_ > cfg_.patience) {
            lr_ = std::max(lr_ * cfg_.factor, cfg_.min_lr);
            bad_epochs_ = 0;
        }
        return lr_;
    }

  private:
    double lr_;
    PlateauConfig cfg_;
    double best_ = std::numeric_limits<double>::infinity();
    int bad_epochs_ = 0;
};

template <int D, int Order>
struct ModelTapePlan {
    const AnyModel* model;
    ParamLayout layout;
    std::optional<ApplyPlan> predict_plan;      // constrained only
    std::optional<ResidualPlan> residual_plan;  // lambda > 0 only

    ModelTapePlan(const AnyModel& m, const OperatorMatrix* constraint, double lambda)
        : model(&m), layout(std::holds_alternative<StandardModel>(m)
                                ? ParamLayout(std::get<StandardModel>(m).net)
                                : ParamLayout(std::get<ConstrainedModel>(m).potential))
    {
        if (const auto* cm = std::get_if<ConstrainedModel>(&m)) {
            predict_plan = make_apply_plan(cm->transform);
        }
        if (lambda > 0.0) {
            residual_plan = std::holds_alternative<StandardModel>(m)
                                ? make_residual_plan(std::get<StandardModel>(m), *constraint)
                                : make_residual_plan(std::get<ConstrainedModel>(m), *constraint);
        }
    }

    auto predict(Tape<D, Order>& tape, std::span<const NodeId> coords) const
        -> std::vector<NodeId>
    {
        if (const auto* sm = std::get_if<StandardModel>(model)) {
            return model_tape_predict(tape, *sm, layout, coords);
        }
        return model_tape_predict(tape, std::get<ConstrainedModel>(*model), layout,
                                  *predict_plan, coords);
    }

    /// Residual component nodes of the constraint at one point.
    auto residual(Tape<D, Order>& tape, std::span<const NodeId> coords) const
        -> std::vector<NodeId>
    {
        const ResidualPlan& plan = *residual_plan;
        std::vector<NodeId> net_out;
        if (const auto* sm = std::get_if<StandardModel>(model)) {
            net_out = mlp_tape_forward(tape, sm->net, layout, coords);
        } else {
            net_out = mlp_tape_forward(
                tape, std::get<ConstrainedModel>(*model).potential, layout, coords);
        }
        std::vector<NodeId> out(plan.rows);
        std::vector<LinTerm> terms;
        for (int r = 0; r < plan.rows; ++r) {
            terms.clear();
            for (const ApplyTerm& t : plan.row_terms[r]) {
                terms.push_back({net_out[t.col], t.component, t.coeff});
            }
            out[r] = tape.linear_combination(terms);
        }
        for (const auto& t : plan.tail_terms) {
            const NodeId c = tape.param(plan.n_net_params + t.tail_index);
            NodeId contrib = t.coord >= 0 ? tape.mul(c, coords[t.coord]) : c;
            contrib = tape.scale(contrib, t.coeff);
            out[t.row] = tape.add(out[t.row], contrib);
        }
        return out;
    }
};

/// Pure (tape-free) validation MSE.
template <int D, int Order>
auto validation_mse(const AnyModel& model, std::span<const double> params,
                    const Dataset& val) -> double
{
    double acc = 0.0;
    if (const auto* sm = std::get_if<StandardModel>(&model)) {
        MlpEvaluator<D, 0> ev(sm->net);
        for (int i = 0; i < val.n; ++i) {
            const auto jets = ev.eval(params, val.x(i));
            for (int c = 0; c < val.k; ++c) {
                const double e = jets[c].v - val.y(i)[c];
                acc += e * e;
            }
        }
    } else {
        ConstrainedEvaluator<D, Order> ev(std::get<ConstrainedModel>(model));
        for (int i = 0; i < val.n; ++i) {
            const auto pred = ev.eval(params, val.x(i));
            for (int c = 0; c < val.k; ++c) {
                const double e = pred[c] - val.y(i)[c];
                acc += e * e;
            }
        }
    }
    return acc / std::max(val.n, 1);
}

template <int D, int Order>
auto train_impl(const AnyModel& model, std::vector<double> params, const Dataset& train_set,
                const Dataset& val_set, const TrainConfig& cfg,
                const OperatorMatrix* constraint, const Box& domain) -> TrainReport
{
    const auto t_start = std::chrono::steady_clock::now();
    const ModelTapePlan<D, Order> plan(model, constraint, cfg.lambda);
    const int n = train_set.n;
    const int k = train_set.k;
    const int batch = cfg.effective_batch(n);

    // Constraint points: one fixed uniform sample per run, partitioned
    // across the epoch's batches.
    std::vector<double> cpoints;
    if (cfg.lambda > 0.0) {
        std::mt19937_64 gen(rng::derive_seed(cfg.seed, 0xC0115ULL));
        cpoints.resize(static_cast<std::size_t>(cfg.constraint_points) * D);
        for (std::size_t i = 0; i < cpoints.size(); ++i) {
            const int c = static_cast<int>(i) % D;
            cpoints[i] = rng::uniform(gen, domain.lo[c], domain.hi[c]);
        }
    }
    const int n_cpoints = cfg.constraint_points;

    Tape<D, Order> tape({params.data(), params.size()});
    std::vector<double> grad(params.size(), 0.0);
    AdamState adam = AdamState::init(params.size());
    PlateauScheduler scheduler(cfg.lr, cfg.plateau);
    double lr = cfg.lr;

    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 shuffle_gen(rng::derive_seed(cfg.seed, 0x5AFFULL));

    // Weight ranges for the decay term (biases excluded, tail included).
    std::vector<std::pair<int, int>> weight_ranges;
    if (cfg.weight_decay > 0.0) {
        for (const auto& layer : plan.layout.layers) {
            weight_ranges.emplace_back(layer.w_off, layer.fan_in * layer.fan_out);
        }
        if (static_cast<int>(params.size()) > plan.layout.total) {
            weight_ranges.emplace_back(plan.layout.total,
                                       static_cast<int>(params.size()) - plan.layout.total);
        }
    }

    TrainReport report;
    std::vector<NodeId> coords(D);
    const int n_batches = (n + batch - 1) / batch;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        // Deterministic Fisher-Yates using the explicit uniform mapping.
        for (int i = n - 1; i > 0; --i) {
            const auto j = static_cast<int>(rng::uniform01(shuffle_gen) * (i + 1));
            std::swap(order[i], order[j]);
        }

        double epoch_data_loss = 0.0;
        double epoch_penalty = 0.0;
        int cpoint_cursor = 0;

        for (int b = 0; b < n_batches; ++b) {
            const int begin = b * batch;
            const int end = std::min(begin + batch, n);
            const int batch_n = end - begin;
            std::fill(grad.begin(), grad.end(), 0.0);

            for (int s = begin; s < end; ++s) {
                const int i = order[s];
                tape.reset();
                const auto x = train_set.x(i);
                for (int c = 0; c < D; ++c) {
                    coords[c] = tape.input(Jet<D, Order>::variable(x[c], c));
                }
                const std::vector<NodeId> pred = plan.predict(tape, coords);
                NodeId loss = -1;
                for (int c = 0; c < k; ++c) {
                    const NodeId err = tape.sub(pred[c], tape.constant(train_set.y(i)[c]));
                    const NodeId sq = tape.mul(err, err);
                    loss = c == 0 ? sq : tape.add(loss, sq);
                }
                tape.backward(loss, 1.0 / batch_n, grad);
                epoch_data_loss += tape.value(loss).v;
            }

            if (cfg.lambda > 0.0) {
                // This batch's share of the fixed constraint set.
                const int share = (n_cpoints + n_batches - 1) / n_batches;
                const int cbegin = cpoint_cursor;
                const int cend = std::min(cbegin + share, n_cpoints);
                cpoint_cursor = cend;
                const int c_n = cend - cbegin;
                for (int p = cbegin; p < cend; ++p) {
                    tape.reset();
                    for (int c = 0; c < D; ++c) {
                        coords[c] = tape.input(
                            Jet<D, Order>::variable(cpoints[static_cast<std::size_t>(p) * D + c], c));
                    }
                    const std::vector<NodeId> res = plan.residual(tape, coords);
                    NodeId viol = -1;
                    for (std::size_t r = 0; r < res.size(); ++r) {
                        const NodeId term = cfg.squared_penalty ? tape.mul(res[r], res[r])
                                                                : tape.abs(res[r]);
                        viol = r == 0 ? term : tape.add(viol, term);
                    }
                    tape.backward(viol, cfg.lambda / std::max(c_n, 1), grad);
                    epoch_penalty += tape.value(viol).v;
                }
            }

            for (const auto& [off, len] : weight_ranges) {
                for (int i = off; i < off + len; ++i) {
                    grad[i] += 2.0 * cfg.weight_decay * params[i];
                }
            }

            adam_step(params, grad, adam, lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
        }

        double train_loss = epoch_data_loss / n;
        if (cfg.lambda > 0.0 && n_cpoints > 0) {
            train_loss += cfg.lambda * epoch_penalty / n_cpoints;
        }
        if (cfg.weight_decay > 0.0) {
            train_loss = l2_regularized_loss(train_loss, params, plan.layout, cfg.weight_decay);
        }
        const double val_loss =
            val_set.n > 0 ? validation_mse<D, Order>(model, params, val_set) : train_loss;

        if (!std::isfinite(train_loss) || !std::isfinite(val_loss)) {
            throw TrainingError("training diverged at epoch " + std::to_string(epoch)
                                + " (train loss " + std::to_string(train_loss)
                                + ", val loss " + std::to_string(val_loss) + ")");
        }

        report.train_loss.push_back(train_loss);
        report.val_loss.push_back(val_loss);
        report.lr_trace.push_back(lr);
        lr = scheduler.observe(val_loss);
    }

    report.final_params = std::move(params);
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return report;
}

}  // namespace train_detail

/// Jet order the training tape must carry for this model/penalty.
inline auto required_jet_order(const AnyModel& model, double lambda,
                               const OperatorMatrix* constraint) -> int
{
    int order = 0;
    if (const auto* cm = std::get_if<ConstrainedModel>(&model)) {
        order = cm->transform.max_derivative_order();
    }
    if (lambda > 0.0 && constraint != nullptr) {
        int c_order = constraint->max_derivative_order();
        if (std::holds_alternative<ConstrainedModel>(model)) {
            c_order += std::get<ConstrainedModel>(model).transform.max_derivative_order();
        }
        order = std::max(order, c_order);
    }
    return order;
}

/// Minibatch ADAM with the plateau schedule; deterministic per seed.
inline auto train(const AnyModel& model, std::vector<double> initial_params,
                  const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg,
                  const OperatorMatrix* constraint = nullptr,
                  std::optional<Box> domain = std::nullopt) -> TrainReport
{
    cfg.check(constraint != nullptr);
    if (train_set.n < 1) { throw std::domain_error("train: empty training set"); }
    if (train_set.d != model_input_dim(model) || train_set.k != model_output_dim(model)) {
        throw ShapeError("train: dataset dimensions do not match the model");
    }
    if (val_set.n > 0 && (val_set.d != train_set.d || val_set.k != train_set.k)) {
        throw ShapeError("train: validation set dimensions differ from training set");
    }
    if (static_cast<int>(initial_params.size()) != model_param_count(model)) {
        throw ShapeError("train: parameter vector size mismatch");
    }
    if (!domain) {
        Box b{std::vector<double>(train_set.d, 0.0), std::vector<double>(train_set.d, 0.0)};
        for (int c = 0; c < train_set.d; ++c) {
            double lo = train_set.x(0)[c];
            double hi = lo;
            for (int i = 1; i < train_set.n; ++i) {
                lo = std::min(lo, train_set.x(i)[c]);
                hi = std::max(hi, train_set.x(i)[c]);
            }
            b.lo[c] = lo;
            b.hi[c] = hi;
        }
        domain = std::move(b);
    }
    const int order = required_jet_order(model, cfg.lambda, constraint);
    return detail::dispatch_dim_order(train_set.d, order, [&](auto d, auto ord) {
        return train_detail::train_impl<d.value, ord.value>(
            model, std::move(initial_params), train_set, val_set, cfg, constraint, *domain);
    });
}

}  // namespace fieldlearn
