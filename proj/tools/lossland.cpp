// Command-line front end: one subcommand per experiment pipeline.
#include <cstdio>
#include <exception>
#include <string>

#include "CLI11.hpp"
#include "lossland/experiments.hpp"

namespace {

struct CommonFlags {
    std::string config_path;
    std::string out_dir = "out";
    std::size_t jobs = 1;
    std::string preset = "desk";
    std::uint64_t seed = 0;
    bool seed_set = false;
};

void attach_common(CLI::App* sub, CommonFlags& flags) {
    sub->add_option("--config", flags.config_path, "key=value config file");
    sub->add_option("--out", flags.out_dir, "output directory");
    sub->add_option("--jobs", flags.jobs, "worker threads for independent runs");
    sub->add_option("--preset", flags.preset, "desk or paper defaults")
        ->check(CLI::IsMember({"desk", "paper"}));
    sub->add_option("--seed", flags.seed, "master seed override")
        ->each([&flags](const std::string&) { flags.seed_set = true; });
}

lossland::CommandContext make_context(const CommonFlags& flags) {
    lossland::CommandContext ctx;
    if (!flags.config_path.empty()) {
        ctx.config = lossland::ExperimentConfig::from_file(flags.config_path);
    }
    ctx.out_dir = flags.out_dir;
    ctx.jobs = flags.jobs;
    ctx.preset = flags.preset;
    ctx.seed_override = flags.seed_set;
    ctx.seed = flags.seed;
    return ctx;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"loss-landscape experiments: optimizer noise, Hessian spectra, free energy"};
    app.require_subcommand(1);

    CommonFlags noise_flags, train_flags, scatter_flags, linear_flags, spectrum_flags;
    CLI::App* noise = app.add_subcommand("noise-verify",
                                         "compare minibatch noise covariance formulas");
    attach_common(noise, noise_flags);
    CLI::App* train = app.add_subcommand("train-compare",
                                         "entropy of SGD vs Langevin vs GD solutions");
    attach_common(train, train_flags);
    CLI::App* scatter = app.add_subcommand("entropy-vs-error",
                                           "entropy against out-of-sample error over SGD runs");
    attach_common(scatter, scatter_flags);
    CLI::App* linear = app.add_subcommand("linear-suite",
                                          "deep linear student-teacher ensembles");
    attach_common(linear, linear_flags);
    CLI::App* spectrum = app.add_subcommand("spectrum",
                                            "Hessian spectrum and free energy of a checkpoint");
    attach_common(spectrum, spectrum_flags);

    CLI11_PARSE(app, argc, argv);

    try {
        if (noise->parsed()) return lossland::cmd_noise_verify(make_context(noise_flags));
        if (train->parsed()) return lossland::cmd_train_compare(make_context(train_flags));
        if (scatter->parsed()) return lossland::cmd_entropy_vs_error(make_context(scatter_flags));
        if (linear->parsed()) return lossland::cmd_linear_suite(make_context(linear_flags));
        if (spectrum->parsed()) return lossland::cmd_spectrum(make_context(spectrum_flags));
    } catch (const lossland::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const lossland::ExperimentFailure& e) {
        std::fprintf(stderr, "experiment failed: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
