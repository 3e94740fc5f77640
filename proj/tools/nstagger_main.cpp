#include "nstagger/errors.hpp"
#include "nstagger/experiment.hpp"
#include "nstagger/worker_pool.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>

namespace {

struct Options {
    std::string config;
    std::string out;
    std::string checkpoint;
    std::size_t workers = nstagger::WorkerPool::default_size();
    std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* sub, Options& o, bool needs_checkpoint) {
    sub->add_option("--config", o.config, "experiment config file")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", o.out, "output directory")->required();
    sub->add_option("--workers", o.workers, "worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--seed", o.seed, "override the config seed");
    if (needs_checkpoint) {
        sub->add_option("--checkpoint", o.checkpoint, "checkpoint directory")->required()->check(CLI::ExistingDirectory);
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Staggered physics-constrained neural PDE solvers"};
    app.require_subcommand(1);
    Options o;
    auto* gen = app.add_subcommand("generate", "oracle initial conditions, bootstraps and trajectories");
    auto* train = app.add_subcommand("train", "train the staggered ensemble");
    auto* eval = app.add_subcommand("evaluate", "Error-k of model rollouts against the oracle");
    auto* roll = app.add_subcommand("rollout", "write a model rollout and its oracle trajectory");
    auto* control = app.add_subcommand("control", "recover an initial condition through the model");
    auto* analyze = app.add_subcommand("analyze", "analytical studies");
    analyze->require_subcommand(1);
    auto* bw = analyze->add_subcommand("bandwidth", "transfer-matrix bandwidth growth");
    auto* p1 = analyze->add_subcommand("prop1", "decomposed least-squares rank check");
    auto* gm = analyze->add_subcommand("gmacs", "multiply-accumulate accounting");
    add_common(gen, o, false);
    add_common(train, o, false);
    add_common(eval, o, true);
    add_common(roll, o, true);
    add_common(control, o, true);
    for (auto* a : {bw, p1, gm}) add_common(a, o, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        nstagger::ExperimentConfig cfg = nstagger::load_config(o.config);
        if (o.seed) cfg.seed = *o.seed;
        nstagger::RunContext ctx;
        ctx.workers = o.workers;
        if (gen->parsed()) {
            ctx.command = "generate";
            nstagger::cmd_generate(cfg, o.out, ctx);
        } else if (train->parsed()) {
            ctx.command = "train";
            nstagger::cmd_train(cfg, o.out, ctx);
        } else if (eval->parsed()) {
            ctx.command = "evaluate";
            nstagger::cmd_evaluate(cfg, o.checkpoint, o.out, ctx);
        } else if (roll->parsed()) {
            ctx.command = "rollout";
            nstagger::cmd_rollout(cfg, o.checkpoint, o.out, ctx);
        } else if (control->parsed()) {
            ctx.command = "control";
            nstagger::cmd_control(cfg, o.checkpoint, o.out, ctx);
        } else {
            const std::string which = bw->parsed() ? "bandwidth" : p1->parsed() ? "prop1" : "gmacs";
            ctx.command = "analyze " + which;
            nstagger::cmd_analyze(cfg, which, o.out, ctx);
        }
    } catch (const nstagger::Error& e) {
        std::cerr << "error[" << e.category() << "]: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error[internal]: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
