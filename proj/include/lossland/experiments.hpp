#ifndef LOSSLAND_EXPERIMENTS_HPP
#define LOSSLAND_EXPERIMENTS_HPP

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "lossland/data.hpp"
#include "lossland/hessian.hpp"
#include "lossland/linear_net.hpp"
#include "lossland/model.hpp"
#include "lossland/optim.hpp"

namespace lossland {

// Raised on malformed configuration; the CLI maps it to exit code 2.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Raised when an experiment completes but trips its failure rule (for
// example too many divergent runs); the CLI maps it to exit code 3.
struct ExperimentFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Flat key=value configuration. Keys are validated against the subcommand's
// schema; unknown keys are rejected.
class ExperimentConfig {
public:
    static ExperimentConfig from_file(const std::string& path);
    static ExperimentConfig from_string(const std::string& text);

    void set(const std::string& key, const std::string& value);
    bool has(const std::string& key) const;
    void require_known_keys(const std::set<std::string>& allowed) const;

    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    std::size_t get_count(const std::string& key, std::size_t fallback) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;

private:
    std::map<std::string, std::string> values_;
};

// Per-run summary row shared by the training experiments. wall_seconds is
// reported in timing output only, never in the deterministic CSVs.
struct RunReport {
    std::size_t run_id = 0;
    std::string algorithm;
    std::uint64_t seed = 0;
    std::uint64_t stream_id = 0;
    bool diverged = false;
    bool converged = false;
    double grad_inf_norm = 0.0;
    double u = 0.0;
    double test_error = 0.0;
    double h = 0.0;
    double s = 0.0;
    double log_eigen_sum = 0.0;
    double free_energy = 0.0;
    double trace = 0.0;
    std::size_t retained = 0;
    double wall_seconds = 0.0;
};

struct TrainCompareParams {
    SyntheticConfig synthetic;
    NetworkSpec net;
    double init_std = 0.1;
    std::vector<Algorithm> algorithms = {Algorithm::sgd, Algorithm::langevin, Algorithm::gd};
    std::size_t runs_per_algorithm = 20;
    double learning_rate = 0.1;
    std::size_t batch_size = 20;
    std::size_t sgd_epochs = 1500;
    std::size_t iterations = 15000;   // gd / langevin
    std::size_t langevin_minibatch_count = 10;
    double refine_tolerance = kDefaultRefineTolerance;
    std::size_t refine_max_iterations = 30000;
    std::uint64_t master_seed = 1;
    std::size_t jobs = 1;
    double max_divergent_fraction = 0.2;
};

struct TrainCompareResult {
    std::vector<RunReport> runs;      // algorithm-major order, run index within
    std::size_t divergent_count = 0;
    bool flagged_failed = false;
};

// Trains runs_per_algorithm networks per algorithm on the synthetic task,
// refines each to the gradient tolerance, and measures the cleaned Hessian
// spectrum entropy and thermodynamic summary per run.
TrainCompareResult run_train_compare(const TrainCompareParams& params);

struct LinearSuiteParams {
    TeacherConfig teacher;
    InitConfig init;
    std::size_t runs = 50;
    double learning_rate = 0.01;
    std::size_t sgd_steps = 50000;
    std::size_t batch_size = 1;
    double refine_tolerance = 1e-8;
    std::size_t refine_max_iterations = 400000;
    std::uint64_t master_seed = 1;
    std::size_t jobs = 1;
};

struct LinearRunReport {
    std::size_t run_id = 0;
    std::uint64_t stream_id = 0;
    double e_g_actual = 0.0;
    double e_g_predicted = 0.0;   // NaN when the prediction precondition fails
    double s = 0.0;
    double trace_formula = 0.0;
    double trace_fd = 0.0;
    double product_sq_norm = 0.0;
    double w2_sq_norm = 0.0;
    double w1_sq_norm = 0.0;
    double balance_invariant = 0.0;
    double invariant_drift = 0.0;
    double residual = 0.0;
    double grad_inf_norm = 0.0;
    bool converged = false;
    double wall_seconds = 0.0;
};

struct LinearSuiteResult {
    std::vector<LinearRunReport> runs;
    TeacherStats teacher;
};

// One student-teacher ensemble (shared teacher and data, fresh init per run)
// trained with single-sample SGD and refined; reports the quantities behind
// the entropy / trace / weight-norm correlations.
LinearSuiteResult run_linear_ensemble(const LinearSuiteParams& params);

// Shared command-line context for every subcommand.
struct CommandContext {
    ExperimentConfig config;
    std::string out_dir = ".";
    std::size_t jobs = 1;
    std::string preset = "desk";
    bool seed_override = false;
    std::uint64_t seed = 0;
};

int cmd_noise_verify(const CommandContext& ctx);
int cmd_train_compare(const CommandContext& ctx);
int cmd_entropy_vs_error(const CommandContext& ctx);
int cmd_linear_suite(const CommandContext& ctx);
int cmd_spectrum(const CommandContext& ctx);

// Formatting used by every CSV writer: %.17g, locale independent.
std::string format_double(double v);

// Freedman-Diaconis histogram edges with a fixed 10-bin fallback when the
// IQR degenerates.
std::vector<double> histogram_edges(std::vector<double> values);

}  // namespace lossland

#endif
