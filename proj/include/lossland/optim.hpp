#ifndef LOSSLAND_OPTIM_HPP
#define LOSSLAND_OPTIM_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "lossland/model.hpp"
#include "lossland/numerics.hpp"

namespace lossland {

enum class Algorithm { sgd, gd, langevin };

// Stopping rule shared by every experiment: descend until the gradient's
// infinity norm falls below this.
inline constexpr double kDefaultRefineTolerance = 3e-5;

struct OptimizerConfig {
    Algorithm algorithm = Algorithm::sgd;
    double learning_rate = 0.1;
    std::size_t batch_size = 50;
    std::size_t iterations = 8000;   // epochs for sgd, iterations for gd/langevin
    std::uint64_t seed = 0;
    std::uint64_t stream_id = 0;
    double refine_tolerance = kDefaultRefineTolerance;
    std::size_t langevin_minibatch_count = 10;
    std::size_t log_every = 1;       // trajectory sampling stride
};

struct TrajectoryPoint {
    std::size_t iteration = 0;
    double loss = 0.0;           // optimizer objective at this point
    double grad_inf_norm = 0.0;
};

struct TrainResult {
    ParamVector theta;
    std::vector<TrajectoryPoint> trajectory;
    bool diverged = false;
};

struct RefineResult {
    ParamVector theta;
    double grad_inf_norm = 0.0;
    std::size_t iterations = 0;
    bool converged = false;
};

// The target every optimizer descends: mean per-sample data loss plus
// (lambda/2)*||theta||^2. For cross-entropy this equals loss(); for the
// half-quadratic loss it differs from loss() by the 1/P on the data term
// (loss() keeps the plain sum so the curvature formulas hold as written).
double objective(const NetworkSpec& spec, const ParamVector& theta, const Dataset& data);

// Gradient of objective().
ParamVector objective_gradient(const NetworkSpec& spec, const ParamVector& theta,
                               const Dataset& data);

// theta_0 entries drawn i.i.d. N(0, stddev^2).
ParamVector gaussian_init(const NetworkSpec& spec, double stddev, RngStream& rng);

// Minibatch SGD: each epoch shuffles the sample indices with the run's
// stream, partitions them into batches of cfg.batch_size (last batch may be
// short), and steps against the batch-mean gradient plus regularizer.
// batch_size == P reduces bit-exactly to run_gd.
TrainResult run_sgd(const NetworkSpec& spec, const ParamVector& theta0, const Dataset& data,
                    const OptimizerConfig& cfg);

// Deterministic full-batch steepest descent; stops early once the gradient
// infinity norm drops below cfg.refine_tolerance.
TrainResult run_gd(const NetworkSpec& spec, const ParamVector& theta0, const Dataset& data,
                   const OptimizerConfig& cfg);

// Gradient descent plus diagonal Gaussian noise matched to the SGD gradient
// spread: each iteration re-splits the samples into
// cfg.langevin_minibatch_count random minibatches, takes sigma_i as the
// per-coordinate standard deviation of the minibatch gradients around their
// mean, and adds zeta_i ~ N(0, (lr * sigma_i)^2) to the step. Zero spread
// reduces bit-exactly to run_gd.
TrainResult run_langevin(const NetworkSpec& spec, const ParamVector& theta0, const Dataset& data,
                         const OptimizerConfig& cfg);

// One pass of the Langevin variance estimator at fixed theta: per-coordinate
// standard deviation of the minibatch gradients across a fresh random
// k-way split.
std::vector<double> estimate_langevin_sigma(const NetworkSpec& spec, const ParamVector& theta,
                                            const Dataset& data, std::size_t minibatch_count,
                                            RngStream& rng);

// Steepest descent with backtracking (step halves on objective increase,
// re-expands after accepted steps) until ||grad||_inf < tolerance or the
// iteration cap. An unconverged result is flagged, never dropped.
RefineResult refine(const NetworkSpec& spec, const ParamVector& theta, const Dataset& data,
                    double tolerance, std::size_t max_iterations = 200000,
                    double initial_step = 0.1);

enum class NoiseCovKind { paper_asymptotic, exact_finite_p, empirical };

struct NoiseCovariance {
    DenseMatrix matrix;
    std::size_t batch_size = 0;
    std::size_t sample_count = 0;
    NoiseCovKind kind = NoiseCovKind::paper_asymptotic;
    double prefactor = 0.0;
};

// Large-P minibatch-noise covariance: (1/b)(1 - b/P) times the centered
// second-moment matrix of the per-sample gradients.
NoiseCovariance noise_cov_theoretical(const NetworkSpec& spec, const ParamVector& theta,
                                      const Dataset& data, std::size_t b);

// Exact finite-P covariance of the batch-mean gradient under
// without-replacement sampling: prefactor (P - b) / (b (P - 1)).
NoiseCovariance noise_cov_exact(const NetworkSpec& spec, const ParamVector& theta,
                                const Dataset& data, std::size_t b);

// Monte-Carlo estimate: second moment of (full gradient - batch gradient)
// over `draws` uniformly sampled without-replacement batches.
NoiseCovariance noise_cov_empirical(const NetworkSpec& spec, const ParamVector& theta,
                                    const Dataset& data, std::size_t b, std::size_t draws,
                                    RngStream& rng);

// Exhaustive version of the empirical estimate: every C(P, b) batch weighted
// equally. Refuses when the batch count exceeds ~2 million.
NoiseCovariance noise_cov_exhaustive(const NetworkSpec& spec, const ParamVector& theta,
                                     const Dataset& data, std::size_t b);

// Trajectory CSV: iteration,loss,grad_inf_norm.
void dump_trajectory_csv(const std::vector<TrajectoryPoint>& trajectory, const std::string& path);

// Matrix CSV plus a JSON sidecar (kind, b, P, prefactor) at path + ".json".
void dump_noise_covariance(const NoiseCovariance& cov, const std::string& csv_path);

}  // namespace lossland

#endif
