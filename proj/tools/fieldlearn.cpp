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

#include "fieldlearn/ansatz.hpp"
#include "fieldlearn/operator_dsl.hpp"
#include "fieldlearn/studies.hpp"
#include "fieldlearn/training.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace {

using namespace fieldlearn;

auto git_describe() -> std::string
{
    std::string out = "unknown";
#ifndef _WIN32
    if (FILE* pipe = popen("git describe --always --dirty 2>/dev/null", "r")) {
        char buf[128];
        if (fgets(buf, sizeof buf, pipe) != nullptr) {
            out = buf;
            while (!out.empty() && (out.back() == '\n' || out.back() == '\r')) {
                out.pop_back();
            }
        }
        pclose(pipe);
        if (out.empty()) { out = "unknown"; }
    }
#endif
    return out;
}

auto parse_widths(const std::string& text) -> std::vector<int>
{
    std::vector<int> widths;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) { widths.push_back(std::stoi(item)); }
    if (widths.empty()) { throw ParseError("--widths: expected a comma-separated list"); }
    return widths;
}

auto run_ansatz(const std::string& constraint_dsl, int max_degree, int potential_dim) -> int
{
    const OperatorMatrix constraint = parse_operator_matrix(constraint_dsl);
    // iterate the degree outward; the lowest degree admitting a
    // transform gives the simplest operator
    for (int degree = 0; degree <= max_degree; ++degree) {
        if (const auto g = find_transformation(constraint, degree, potential_dim)) {
            std::cout << format_operator_matrix(*g) << "\n";
            return 0;
        }
    }
    std::cout << "NOT FOUND\n";
    return 0;
}

auto run_study_cmd(const std::string& study_id, const std::string& config_path,
                   const std::string& out_dir) -> int
{
    StudyConfig cfg;
    if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) { throw ParseError("cannot open config " + config_path); }
        cfg = study_config_from_json(nlohmann::json::parse(in));
    }
    cfg.study = study_id;

    const StudyResult result = run_study(cfg);
    std::filesystem::create_directories(out_dir);
    const auto dir = std::filesystem::path(out_dir);
    write_study_csv(result, (dir / "results.csv").string());
    write_study_manifest(result, (dir / "manifest.json").string(), git_describe());

    int failed = 0;
    for (const auto& row : result.rows) {
        if (!row.error.empty()) { ++failed; }
    }
    std::cout << "study " << study_id << ": " << result.rows.size() << " rows ("
              << failed << " failed) in " << result.wall_seconds << " s -> "
              << (dir / "results.csv").string() << "\n";
    return failed == 0 ? 0 : 2;
}

struct TrainArgs {
    std::string model_family = "constrained";
    std::string field = "divfree";
    std::string transform_dsl;
    std::string constraint_dsl;
    std::vector<int> hidden = {100, 50};
    int n = 200;
    double sigma = -1.0;  // default depends on the field
    double field_a = 0.01;
    std::uint64_t seed = 0;
    std::string out_prefix;
    TrainConfig train;
    double val_fraction = 0.2;
    int grid = 20;
};

auto run_train_cmd(const TrainArgs& args) -> int
{
    Dataset full;
    std::optional<FieldFn> truth;
    Box domain = Box::square(0.0, 4.0);
    OperatorMatrix transform = rot_grad2d();
    OperatorMatrix constraint = divergence(2);
    std::vector<AffineTailTerm> tail;

    if (args.field == "divfree" || args.field == "affine") {
        const double a = args.field_a;
        const bool affine = args.field == "affine";
        truth = [a, affine](std::span<const double> x) {
            const auto f = affine ? affine_field(x, a) : divfree_field(x, a);
            return std::vector<double>{f[0], f[1]};
        };
        full = sample_dataset(*truth, args.n, domain, args.sigma < 0 ? 0.1 : args.sigma,
                              args.seed);
        if (affine) { tail = {{0, 0}, {1, 1}}; }
    } else if (args.field == "strain") {
        const StrainParams sp;
        domain = strain_domain(sp);
        truth = [sp](std::span<const double> x) {
            const auto e = saint_venant_strain(x[0], x[1], sp);
            return std::vector<double>{e[0], e[1], e[2]};
        };
        full = sample_dataset(*truth, args.n, domain,
                              args.sigma < 0 ? 2.5e-4 : args.sigma, args.seed);
        transform = airy_strain(Rational::parse("0.28"));
        constraint = equilibrium_constraint(Rational::parse("0.28"));
    } else if (args.field.rfind("csv:", 0) == 0) {
        full = load_field_csv(args.field.substr(4));
        domain.lo.assign(full.d, 0.0);
        domain.hi.assign(full.d, 0.0);
        for (int c = 0; c < full.d; ++c) {
            double lo = full.x(0)[c];
            double hi = lo;
            for (int i = 1; i < full.n; ++i) {
                lo = std::min(lo, full.x(i)[c]);
                hi = std::max(hi, full.x(i)[c]);
            }
            domain.lo[c] = lo;
            domain.hi[c] = hi;
        }
        transform = grad(full.d);
        constraint = full.d == 3 ? curl_constraint3d() : divergence(full.d);
    } else {
        throw ParseError("--field must be divfree|strain|affine|csv:<path>");
    }

    if (!args.transform_dsl.empty()) {
        transform = parse_operator_matrix(args.transform_dsl, full.d);
    }
    if (!args.constraint_dsl.empty()) {
        constraint = parse_operator_matrix(args.constraint_dsl, full.d);
    }

    std::vector<int> widths{full.d};
    widths.insert(widths.end(), args.hidden.begin(), args.hidden.end());
    AnyModel model = StandardModel{};
    if (args.model_family == "constrained") {
        widths.push_back(transform.cols());
        ConstrainedModel cm{make_mlp(widths), transform, tail};
        cm.check();
        model = std::move(cm);
    } else if (args.model_family == "standard") {
        widths.push_back(full.k);
        model = StandardModel{make_mlp(widths)};
    } else {
        throw ParseError("--model must be constrained or standard");
    }

    const int n_val = std::max(1, static_cast<int>(full.n * args.val_fraction));
    const Dataset train_set = full.slice(0, full.n - n_val);
    const Dataset val_set = full.slice(full.n - n_val, full.n);

    TrainConfig tc = args.train;
    tc.seed = args.seed;
    const auto report = train(model, init_model_params(model, args.seed), train_set,
                              val_set, tc, tc.lambda > 0 ? &constraint : nullptr, domain);

    std::cout << "trained " << args.model_family << " model on " << train_set.n
              << " samples: train loss " << report.train_loss.back() << ", val loss "
              << report.val_loss.back() << "\n";

    if (truth) {
        const auto grid = prediction_grid(domain, args.grid);
        const auto preds = study_detail::model_predictions(model, report.final_params, grid);
        const auto want = study_detail::truth_at(*truth, grid);
        const double scale = args.field == "strain" ? 1e6 : 1.0;
        std::cout << "grid RMSE" << (scale == 1e6 ? " (microstrain)" : "") << ": "
                  << study_detail::rmse_against(preds, want, scale) << "\n";
    }

    if (!args.out_prefix.empty()) {
        save_model_bundle(args.out_prefix, model, report.final_params, args.seed);
        std::ofstream csv(args.out_prefix + ".report.csv");
        csv << "epoch,train_loss,val_loss,lr\n";
        for (std::size_t e = 0; e < report.train_loss.size(); ++e) {
            csv << e << ',' << study_detail::fmt(report.train_loss[e]) << ','
                << study_detail::fmt(report.val_loss[e]) << ','
                << study_detail::fmt(report.lr_trace[e]) << "\n";
        }
        std::cout << "saved model bundle and report to " << args.out_prefix << ".*\n";
    }
    return 0;
}

}  // namespace

auto main(int argc, char** argv) -> int
{
    CLI::App app{"fieldlearn: linearly constrained neural network field learning"};
    app.require_subcommand(1);

    // ansatz
    auto* ansatz_cmd = app.add_subcommand(
        "ansatz", "find a transform G with C o G == 0 by coefficient matching");
    std::string constraint_dsl;
    int max_degree = 2;
    int potential_dim = 1;
    ansatz_cmd->add_option("--constraint", constraint_dsl, "constraint operator (DSL)")
        ->required();
    ansatz_cmd->add_option("--max-degree", max_degree, "highest ansatz degree to try");
    ansatz_cmd->add_option("--potential-dim", potential_dim, "columns of G");

    // study
    auto* study_cmd = app.add_subcommand("study", "run a reproducible experiment study");
    std::string study_id;
    std::string config_path;
    std::string out_dir = "study-out";
    study_cmd->add_option("id", study_id,
                          "data-size|net-size|lambda-sweep|regularization|strain-demo|"
                          "affine-demo|external-field")
        ->required();
    study_cmd->add_option("--config", config_path, "StudyConfig JSON");
    study_cmd->add_option("--out", out_dir, "output directory");

    // train
    auto* train_cmd = app.add_subcommand("train", "train a single model");
    TrainArgs targs;
    std::string widths_text = "100,50";
    train_cmd->add_option("--model", targs.model_family, "constrained|standard");
    train_cmd->add_option("--field", targs.field, "divfree|strain|affine|csv:<path>");
    train_cmd->add_option("--transform", targs.transform_dsl, "transform operator DSL");
    train_cmd->add_option("--constraint", targs.constraint_dsl, "constraint operator DSL");
    train_cmd->add_option("--widths", widths_text, "hidden layer widths, e.g. 100,50");
    train_cmd->add_option("--n", targs.n, "number of measurements (simulated fields)");
    train_cmd->add_option("--sigma", targs.sigma, "noise standard deviation");
    train_cmd->add_option("--a", targs.field_a, "field constant a");
    train_cmd->add_option("--seed", targs.seed, "random seed");
    train_cmd->add_option("--epochs", targs.train.epochs, "training epochs");
    train_cmd->add_option("--lr", targs.train.lr, "learning rate");
    train_cmd->add_option("--lambda", targs.train.lambda, "constraint penalty weight");
    train_cmd->add_option("--constraint-points", targs.train.constraint_points,
                          "penalty evaluation points");
    train_cmd->add_option("--weight-decay", targs.train.weight_decay, "L2 weight decay");
    train_cmd->add_option("--batch-size", targs.train.batch_size,
                          "minibatch size (0 = auto)");
    train_cmd->add_option("--grid", targs.grid, "evaluation grid points per axis");
    train_cmd->add_option("--out", targs.out_prefix, "output path prefix for the bundle");

    try {
        app.parse(argc, argv);
        if (ansatz_cmd->parsed()) {
            return run_ansatz(constraint_dsl, max_degree, potential_dim);
        }
        if (study_cmd->parsed()) { return run_study_cmd(study_id, config_path, out_dir); }
        targs.hidden = parse_widths(widths_text);
        return run_train_cmd(targs);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const TrainingError& e) {
        std::cerr << "training aborted: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
