#include "commands.hpp"

#include "CLI11.hpp"

#include <iostream>

namespace {

void add_model_flags(CLI::App* cmd, kcheck::cli::RunConfig& cfg) {
    cmd->add_option("--input", cfg.input, "headered numeric CSV")->required();
    cmd->add_option("--output", cfg.output, "output path, '-' for stdout")->required();
    cmd->add_option("--response", cfg.response, "response column");
    cmd->add_option("--term", cfg.terms, "smooth term: name:k, a*b:k or a*b:k1:k2")->required();
    cmd->add_option("--criterion", cfg.criterion, "smoothing criterion")->check(CLI::IsMember({"gcv", "reml"}));
}

} // namespace

int main(int argc, char** argv) {
    using namespace kcheck::cli;
    CLI::App app{"Penalized regression spline fitting with basis-dimension checks"};
    app.require_subcommand(1);
    RunConfig cfg;

    auto* fit = app.add_subcommand("fit", "fit an additive model and write a JSON report");
    add_model_flags(fit, cfg);

    auto* check = app.add_subcommand("check", "fit, then test each term's basis dimension");
    add_model_flags(check, cfg);
    check->add_option("--method", cfg.methods, "kappa or resmooth")->check(CLI::IsMember({"kappa", "resmooth"}));
    check->add_option("--alpha", cfg.alpha, "rejection level")->check(CLI::Range(0.0, 1.0));
    check->add_option("--perms", cfg.perms, "permutations")->check(CLI::Range(99, 1000000));
    check->add_option("--neighbours", cfg.neighbours, "neighbours for multi-covariate terms")->check(CLI::PositiveNumber);
    check->add_option("--threshold", cfg.threshold, "re-smoothing EDF threshold")->check(CLI::NonNegativeNumber);
    check->add_option("--seed", cfg.seed, "random seed");

    auto* sim = app.add_subcommand("simulate", "run a simulation scenario and write a CSV of selected k and MSE");
    sim->add_option("--scenario", cfg.scenario, "uni-f1, uni-f2, uni-f3, bivariate or additive")->required();
    sim->add_option("--output", cfg.output, "output path, '-' for stdout")->required();
    sim->add_option("--n", cfg.n, "sample size (default 100, 400 bivariate, 200 additive)")->check(CLI::NonNegativeNumber);
    sim->add_option("--replicates", cfg.replicates, "replicate count")->check(CLI::PositiveNumber);
    sim->add_option("--method", cfg.methods, "kappa, resmooth, gcv, reml (repeatable, default all)")
        ->check(CLI::IsMember({"kappa", "resmooth", "gcv", "reml"}));
    sim->add_option("--criterion", cfg.criterion, "smoothing criterion inside the doubling loops")
        ->check(CLI::IsMember({"gcv", "reml"}));
    sim->add_option("--sigma", cfg.sigma, "noise standard deviation")->check(CLI::NonNegativeNumber);
    sim->add_option("--alpha", cfg.alpha, "rejection level")->check(CLI::Range(0.0, 1.0));
    sim->add_option("--perms", cfg.perms, "permutations")->check(CLI::Range(99, 1000000));
    sim->add_option("--neighbours", cfg.neighbours, "neighbours for multi-covariate terms")->check(CLI::PositiveNumber);
    sim->add_option("--threshold", cfg.threshold, "re-smoothing EDF threshold")->check(CLI::NonNegativeNumber);
    sim->add_option("--seed", cfg.seed, "base seed");
    sim->add_option("--threads", cfg.threads, "worker threads")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return input_error;
    }

    if (fit->parsed()) {
        return cmd_fit(cfg);
    }
    if (check->parsed()) {
        return cmd_check(cfg);
    }
    return cmd_simulate(cfg);
}
