#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "ammu/config.hpp"
#include "commands.hpp"

int main(int argc, char** argv) {
    CLI::App app{"verification tools for the granular attention library"};
    app.require_subcommand(1);

    ammucli::Options opt;
    std::string config_path;
    app.add_option("--config", config_path, "run settings file, key = value lines");
    app.add_option("--seed", opt.seed, "seed fixing every random draw")->capture_default_str();
    app.add_option("--out", opt.out_dir, "directory for reports and artifacts")
        ->capture_default_str();
    app.add_option("--dtype", opt.dtype, "kernel floating type")
        ->check(CLI::IsMember({"f32", "f64"}))
        ->capture_default_str();
    app.add_option("--reps", opt.reps, "benchmark repetitions, parallel when above one")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();

    CLI::App* oracle =
        app.add_subcommand("oracle", "compare kernels against reference implementations");
    oracle
        ->add_option("--inject-fault", opt.inject_fault,
                     "corrupt one library input to prove the oracle catches it")
        ->check(CLI::IsMember({"none", "mask"}))
        ->capture_default_str();
    CLI::App* gradcheck = app.add_subcommand(
        "gradcheck", "finite-difference check of every parameter gradient of the batch loss");
    CLI::App* bench =
        app.add_subcommand("bench", "time the granular attention stage over a grid-size sweep");
    CLI::App* smoketrain =
        app.add_subcommand("smoketrain", "train on one synthetic batch and validate the loss curve");
    CLI::App* metrics =
        app.add_subcommand("metrics", "segmentation scores for prediction/reference label fixtures");
    metrics->add_option("--pred", opt.pred_path, "prediction label fixture")->required();
    metrics->add_option("--truth", opt.truth_path, "reference label fixture")->required();
    for (CLI::App* sub : {oracle, gradcheck, bench, smoketrain, metrics}) sub->fallthrough();

    CLI11_PARSE(app, argc, argv);

    try {
        if (!config_path.empty()) {
            opt.spec = ammu::load_run_spec(config_path);
            opt.spec.validate();
            opt.config_given = true;
        }
        if (oracle->parsed()) return ammucli::cmd_oracle(opt);
        if (gradcheck->parsed()) return ammucli::cmd_gradcheck(opt);
        if (bench->parsed()) return ammucli::cmd_bench(opt);
        if (smoketrain->parsed()) return ammucli::cmd_smoketrain(opt);
        if (metrics->parsed()) return ammucli::cmd_metrics(opt);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 2;
}
