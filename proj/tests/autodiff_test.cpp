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

#include "fieldlearn/autodiff.hpp"
#include "fieldlearn/network.hpp"
#include "test_helpers.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

using namespace fieldlearn;

namespace {

/// Central finite difference of f over parameter p.
template <class F>
auto param_fd(F&& f, std::vector<double> params, std::size_t p, double step) -> double
{
    params[p] += step;
    const double fp = f(params);
    params[p] -= 2.0 * step;
    const double fm = f(params);
    return (fp - fm) / (2.0 * step);
}

}  // namespace

TEST_CASE("jet of a single linear layer has an exactly zero Hessian")
{
    const MlpSpec spec = make_mlp({2, 1}, Activation::identity);
    std::mt19937_64 gen(5);
    for (int trial = 0; trial < 5; ++trial) {
        const auto params = init_params(spec, gen());
        const std::vector<double> x{rng::uniform(gen, -3, 3), rng::uniform(gen, -3, 3)};
        const auto jets = eval_jet(spec, params, x, 2);
        REQUIRE(jets.size() == 1);
        for (int i = 0; i < 2; ++i) {
            for (int j = 0; j < 2; ++j) { CHECK(jets[0].d2(i, j) == 0.0); }
        }
    }
}

TEST_CASE("jet of tanh(2x) matches the closed-form derivative")
{
    // g(x) = tanh(2x + 0); dg/dx at 0.5 is 2 (1 - tanh(1)^2).
    MlpSpec spec;
    spec.widths = {1, 1, 1};
    spec.activations = {Activation::tanh, Activation::identity};
    std::vector<double> params(param_count(spec), 0.0);
    const ParamLayout layout(spec);
    params[layout.layers[0].w_off] = 2.0;  // w
    params[layout.layers[1].w_off] = 1.0;  // pass-through output layer

    const std::vector<double> x{0.5};
    const auto jets = eval_jet(spec, params, x, 2);
    const double t = std::tanh(1.0);
    CHECK(jets[0].value == Catch::Approx(t).epsilon(1e-12));
    CHECK(jets[0].d1(0) == Catch::Approx(2.0 * (1.0 - t * t)).epsilon(1e-12));
    CHECK(jets[0].d1(0) == Catch::Approx(0.8399486832280523).epsilon(1e-12));
    // second derivative: 4 * (-2 t (1 - t^2))
    CHECK(jets[0].d2(0, 0) == Catch::Approx(4.0 * -2.0 * t * (1.0 - t * t)).epsilon(1e-12));
}

TEST_CASE("jets match finite differences on random two-layer tanh networks")
{
    std::mt19937_64 gen(17);
    const MlpSpec spec = make_mlp({2, 7, 5, 2});
    for (int trial = 0; trial < 20; ++trial) {
        const auto params = init_params(spec, gen());
        const std::vector<double> x{rng::uniform(gen, -2, 2), rng::uniform(gen, -2, 2)};
        const auto jets = eval_jet(spec, params, x, 2);
        for (int out = 0; out < 2; ++out) {
            const auto f = [&](std::span<const double> p) {
                return forward(spec, params, p)[out];
            };
            CHECK(jets[out].value == Catch::Approx(f(x)).epsilon(1e-12));
            for (int i = 0; i < 2; ++i) {
                const double fd = testing::finite_difference(f, x, DiffMonomial::d(2, i));
                CHECK(testing::rel_error(jets[out].d1(i), fd) < 1e-4);
                for (int j = i; j < 2; ++j) {
                    DiffMonomial mono = DiffMonomial::identity(2);
                    mono.orders[i] += 1;
                    mono.orders[j] += 1;
                    const double fd2 = testing::finite_difference(f, x, mono);
                    CHECK(testing::rel_error(jets[out].d2(i, j), fd2) < 1e-4);
                }
            }
        }
    }
}

TEST_CASE("Hessian is symmetric bit-exactly")
{
    std::mt19937_64 gen(29);
    const MlpSpec spec = make_mlp({3, 6, 1});
    const auto params = init_params(spec, 1);
    for (int trial = 0; trial < 10; ++trial) {
        const std::vector<double> x{rng::uniform(gen, -2, 2), rng::uniform(gen, -2, 2),
                                    rng::uniform(gen, -2, 2)};
        const auto jets = eval_jet(spec, params, x, 2);
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 3; ++j) {
                CHECK(jets[0].d2(i, j) == jets[0].d2(j, i));
            }
        }
    }
}

TEST_CASE("eval_jet is linear in the field")
{
    // Combine two one-hidden-layer nets into one with block weights and
    // output weights scaled by a and b.
    std::mt19937_64 gen(31);
    const MlpSpec small = make_mlp({2, 4, 1});
    const auto p1 = init_params(small, 100);
    const auto p2 = init_params(small, 200);
    const double a = 1.7;
    const double b = -0.6;

    MlpSpec combined = make_mlp({2, 8, 1});
    std::vector<double> pc(param_count(combined), 0.0);
    const ParamLayout ls(small);
    const ParamLayout lc(combined);
    for (int h = 0; h < 4; ++h) {
        for (int i = 0; i < 2; ++i) {
            pc[lc.layers[0].w_off + h * 2 + i] = p1[ls.layers[0].w_off + h * 2 + i];
            pc[lc.layers[0].w_off + (4 + h) * 2 + i] = p2[ls.layers[0].w_off + h * 2 + i];
        }
        pc[lc.layers[0].b_off + h] = p1[ls.layers[0].b_off + h];
        pc[lc.layers[0].b_off + 4 + h] = p2[ls.layers[0].b_off + h];
        pc[lc.layers[1].w_off + h] = a * p1[ls.layers[1].w_off + h];
        pc[lc.layers[1].w_off + 4 + h] = b * p2[ls.layers[1].w_off + h];
    }
    pc[lc.layers[1].b_off] = a * p1[ls.layers[1].b_off] + b * p2[ls.layers[1].b_off];

    for (int trial = 0; trial < 10; ++trial) {
        const std::vector<double> x{rng::uniform(gen, -2, 2), rng::uniform(gen, -2, 2)};
        const auto j1 = eval_jet(small, p1, x, 2)[0];
        const auto j2 = eval_jet(small, p2, x, 2)[0];
        const auto jc = eval_jet(combined, pc, x, 2)[0];
        CHECK(jc.value == Catch::Approx(a * j1.value + b * j2.value).margin(1e-12));
        for (int i = 0; i < 2; ++i) {
            CHECK(jc.d1(i) == Catch::Approx(a * j1.d1(i) + b * j2.d1(i)).margin(1e-12));
            for (int j = 0; j < 2; ++j) {
                CHECK(jc.d2(i, j)
                      == Catch::Approx(a * j1.d2(i, j) + b * j2.d2(i, j)).margin(1e-12));
            }
        }
    }
}

TEST_CASE("ReLU jets stop at order 1")
{
    const MlpSpec spec = make_mlp({2, 4, 1}, Activation::relu);
    const auto params = init_params(spec, 3);
    const std::vector<double> x{0.3, -0.8};
    CHECK_NOTHROW(eval_jet(spec, params, x, 1));
    CHECK_THROWS_AS(eval_jet(spec, params, x, 2), CapabilityError);
}

TEST_CASE("loss_gradient of theta squared is 2 theta")
{
    const std::vector<double> params{3.0};
    const auto grad = loss_gradient<1, 0>(params, [](Tape<1, 0>& tape) {
        const NodeId theta = tape.param(0);
        return tape.mul(theta, theta);
    });
    CHECK(grad[0] == Catch::Approx(6.0).epsilon(1e-14));
}

TEST_CASE("loss_gradient of a linear-net MSE matches the closed form")
{
    // net(x) = w x + b on one sample: d/dw (wx + b - y)^2 = 2 (wx + b - y) x
    const double w = 1.3;
    const double b = -0.2;
    const double x = 0.7;
    const double y = 2.0;
    const std::vector<double> params{w, b};
    const auto grad = loss_gradient<1, 0>(params, [&](Tape<1, 0>& tape) {
        const NodeId xin = tape.input(Jet<1, 0>::variable(x, 0));
        const NodeId pred = tape.affine(std::array{xin}, 0, 1);
        const NodeId err = tape.sub(pred, tape.constant(y));
        return tape.mul(err, err);
    });
    const double resid = w * x + b - y;
    CHECK(grad[0] == Catch::Approx(2.0 * resid * x).epsilon(1e-12));
    CHECK(grad[1] == Catch::Approx(2.0 * resid).epsilon(1e-12));
}

TEST_CASE("parameter gradients of losses with input-derivative terms match FD")
{
    // loss = (dg/dx1)^2 + (dg/dx2)^2 + g^2 at a fixed point: exercises
    // the jet-valued reverse sweep end to end.
    std::mt19937_64 gen(37);
    const MlpSpec spec = make_mlp({2, 5, 1});
    const ParamLayout layout(spec);

    const auto loss_value = [&](const std::vector<double>& params) {
        std::vector<double> x{0.8, -0.4};
        const auto jets = eval_jet(spec, params, x, 1);
        return jets[0].d1(0) * jets[0].d1(0) + jets[0].d1(1) * jets[0].d1(1)
               + jets[0].value * jets[0].value;
    };

    for (int trial = 0; trial < 10; ++trial) {
        const auto params = init_params(spec, gen());
        const auto grad = loss_gradient<2, 1>(params, [&](Tape<2, 1>& tape) {
            std::array<NodeId, 2> coords{tape.input(Jet<2, 1>::variable(0.8, 0)),
                                         tape.input(Jet<2, 1>::variable(-0.4, 1))};
            const auto out = mlp_tape_forward(tape, spec, layout, coords);
            const NodeId g = out[0];
            const NodeId dx = tape.linear_combination(
                std::array{LinTerm{g, derivative_component(2, 0, -1), 1.0}});
            const NodeId dy = tape.linear_combination(
                std::array{LinTerm{g, derivative_component(2, 1, -1), 1.0}});
            const NodeId val = tape.linear_combination(
                std::array{LinTerm{g, 0, 1.0}});
            return tape.add(tape.add(tape.mul(dx, dx), tape.mul(dy, dy)),
                            tape.mul(val, val));
        });
        for (std::size_t p = 0; p < params.size(); ++p) {
            const double fd = param_fd(loss_value, params, p, 1e-5);
            CHECK(testing::rel_error(grad[p], fd) < 1e-4);
        }
    }
}

TEST_CASE("parameter gradients of second-order jet losses match FD")
{
    // loss = (d2g/dx1 dx2)^2: the strain-style path through order-2 jets.
    std::mt19937_64 gen(41);
    const MlpSpec spec = make_mlp({2, 4, 1});
    const ParamLayout layout(spec);
    const int comp = derivative_component(2, 0, 1);

    const auto loss_value = [&](const std::vector<double>& params) {
        std::vector<double> x{0.3, 0.9};
        const auto jets = eval_jet(spec, params, x, 2);
        return jets[0].d2(0, 1) * jets[0].d2(0, 1);
    };

    for (int trial = 0; trial < 10; ++trial) {
        const auto params = init_params(spec, gen());
        const auto grad = loss_gradient<2, 2>(params, [&](Tape<2, 2>& tape) {
            std::array<NodeId, 2> coords{tape.input(Jet<2, 2>::variable(0.3, 0)),
                                         tape.input(Jet<2, 2>::variable(0.9, 1))};
            const auto out = mlp_tape_forward(tape, spec, layout, coords);
            const NodeId dxy =
                tape.linear_combination(std::array{LinTerm{out[0], comp, 1.0}});
            return tape.mul(dxy, dxy);
        });
        for (std::size_t p = 0; p < params.size(); ++p) {
            const double fd = param_fd(loss_value, params, p, 1e-5);
            CHECK(testing::rel_error(grad[p], fd) < 1e-4);
        }
    }
}

TEST_CASE("abs node uses the subgradient sign")
{
    const std::vector<double> params{-2.5};
    const auto grad = loss_gradient<1, 0>(params, [](Tape<1, 0>& tape) {
        return tape.abs(tape.param(0));
    });
    CHECK(grad[0] == -1.0);

    const std::vector<double> pos{2.5};
    const auto grad2 = loss_gradient<1, 0>(pos, [](Tape<1, 0>& tape) {
        return tape.abs(tape.param(0));
    });
    CHECK(grad2[0] == 1.0);
}

TEST_CASE("tape multiplication backward matches the product rule through jets")
{
    // d/dw of [w * x]'s derivative component: (d/dx1)(w * g(x)) = w g'(x);
    // the adjoint of w must pick up the full inner product.
    const MlpSpec spec = make_mlp({1, 3, 1});
    const auto net_params = init_params(spec, 9);
    std::vector<double> params = net_params;
    params.push_back(1.4);  // scalar multiplier c
    const ParamLayout layout(spec);

    const auto loss_value = [&](const std::vector<double>& p) {
        const auto jets = eval_jet(spec, {p.data(), p.size() - 1}, std::vector<double>{0.6}, 1);
        const double c = p.back();
        return c * jets[0].d1(0) * (c * jets[0].d1(0));
    };

    const auto grad = loss_gradient<1, 1>(params, [&](Tape<1, 1>& tape) {
        const NodeId x = tape.input(Jet<1, 1>::variable(0.6, 0));
        const auto out = mlp_tape_forward(tape, spec, layout, std::array{x});
        const NodeId c = tape.param(static_cast<int>(params.size()) - 1);
        const NodeId scaled = tape.mul(c, out[0]);
        const NodeId d = tape.linear_combination(
            std::array{LinTerm{scaled, derivative_component(1, 0, -1), 1.0}});
        return tape.mul(d, d);
    });
    for (std::size_t p = 0; p < params.size(); ++p) {
        const double fd = param_fd(loss_value, params, p, 1e-6);
        CHECK(testing::rel_error(grad[p], fd) < 1e-4);
    }
}
