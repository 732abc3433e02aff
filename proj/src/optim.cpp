#include "lossland/optim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace lossland {

namespace {

double inf_norm(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

// Mean of the per-sample data gradients over `indices` (ascending order so
// the accumulation order never depends on the shuffle), plus lambda*theta.
void mean_gradient_over(NetworkEvaluator& eval, const ParamVector& theta, const Dataset& data,
                        const std::vector<std::size_t>& indices, std::vector<double>& out) {
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t idx : indices) {
        eval.accumulate_sample_gradient(theta, data.inputs.row(idx), data.targets[idx], out);
    }
    double inv = 1.0 / static_cast<double>(indices.size());
    const double lambda = eval.spec().l2_lambda;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] * inv + lambda * theta[i];
}

double objective_impl(NetworkEvaluator& eval, const ParamVector& theta, const Dataset& data) {
    double total = 0.0;
    for (std::size_t i = 0; i < data.sample_count(); ++i) {
        total += eval.sample_loss(theta, data.inputs.row(i), data.targets[i]);
    }
    return total / static_cast<double>(data.sample_count()) +
           0.5 * eval.spec().l2_lambda * theta.squared_norm();
}

std::vector<std::size_t> all_indices(std::size_t n) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    return idx;
}

// P x N matrix of per-sample data-term gradients.
DenseMatrix per_sample_gradient_matrix(const NetworkSpec& spec, const ParamVector& theta,
                                       const Dataset& data) {
    NetworkEvaluator eval(spec);
    DenseMatrix g(data.sample_count(), spec.param_count(), 0.0);
    for (std::size_t i = 0; i < data.sample_count(); ++i) {
        eval.accumulate_sample_gradient(theta, data.inputs.row(i), data.targets[i], g.row(i));
    }
    return g;
}

// Centered second-moment matrix (1/P) sum (g_i - mean)(g_i - mean)^T.
DenseMatrix centered_second_moment(const DenseMatrix& grads) {
    const std::size_t p = grads.rows();
    const std::size_t n = grads.cols();
    std::vector<double> mean_grad(n, 0.0);
    for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t j = 0; j < n; ++j) mean_grad[j] += grads(i, j);
    }
    for (double& v : mean_grad) v /= static_cast<double>(p);
    DenseMatrix c(n, n, 0.0);
    std::vector<double> centered(n);
    for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t j = 0; j < n; ++j) centered[j] = grads(i, j) - mean_grad[j];
        for (std::size_t a = 0; a < n; ++a) {
            double ca = centered[a];
            double* row = c.data() + a * n;
            for (std::size_t bi = 0; bi < n; ++bi) row[bi] += ca * centered[bi];
        }
    }
    c *= 1.0 / static_cast<double>(p);
    return c;
}

void validate_batch(std::size_t b, std::size_t p) {
    if (b == 0 || b > p) throw std::invalid_argument("batch size must satisfy 1 <= b <= P");
}

}  // namespace

double objective(const NetworkSpec& spec, const ParamVector& theta, const Dataset& data) {
    NetworkEvaluator eval(spec);
    return objective_impl(eval, theta, data);
}

ParamVector objective_gradient(const NetworkSpec& spec, const ParamVector& theta,
                               const Dataset& data) {
    NetworkEvaluator eval(spec);
    ParamVector g = zeros_like(spec);
    mean_gradient_over(eval, theta, data, all_indices(data.sample_count()), g.values);
    return g;
}

ParamVector gaussian_init(const NetworkSpec& spec, double stddev, RngStream& rng) {
    ParamVector theta = zeros_like(spec);
    for (double& v : theta.values) v = rng.gaussian(0.0, stddev);
    return theta;
}

TrainResult run_sgd(const NetworkSpec& spec, const ParamVector& theta0, const Dataset& data,
                    const OptimizerConfig& cfg) {
    if (cfg.algorithm != Algorithm::sgd) {
        throw std::invalid_argument("run_sgd: config algorithm mismatch");
    }
    validate_batch(cfg.batch_size, data.sample_count());
    NetworkEvaluator eval(spec);
    RngStream rng(cfg.seed, cfg.stream_id);
    const std::size_t p = data.sample_count();

    TrainResult result;
    result.theta = theta0;
    std::vector<std::size_t> order = all_indices(p);
    std::vector<std::size_t> batch;
    std::vector<double> grad(spec.param_count(), 0.0);

    // Trajectory entry k describes the state after k epochs.
    auto log_state = [&](std::size_t epoch) {
        mean_gradient_over(eval, result.theta, data, all_indices(p), grad);
        double obj = objective_impl(eval, result.theta, data);
        result.trajectory.push_back({epoch, obj, inf_norm(grad)});
        return std::isfinite(obj);
    };

    std::size_t completed = 0;
    for (std::size_t epoch = 0; epoch < cfg.iterations; ++epoch) {
        if (epoch % cfg.log_every == 0 && !log_state(epoch)) {
            result.diverged = true;
            return result;
        }
        rng.shuffle(order);
        for (std::size_t start = 0; start < p; start += cfg.batch_size) {
            std::size_t stop = std::min(start + cfg.batch_size, p);
            batch.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(stop));
            std::sort(batch.begin(), batch.end());
            mean_gradient_over(eval, result.theta, data, batch, grad);
            for (std::size_t i = 0; i < grad.size(); ++i) {
                result.theta[i] -= cfg.learning_rate * grad[i];
            }
        }
        completed = epoch + 1;
        if (!result.theta.all_finite()) {
            result.diverged = true;
            return result;
        }
    }
    if (result.trajectory.empty() || result.trajectory.back().iteration != completed) {
        if (!log_state(completed)) result.diverged = true;
    }
    return result;
}

TrainResult run_gd(const NetworkSpec& spec, const ParamVector& theta0, const Dataset& data,
                   const OptimizerConfig& cfg) {
    NetworkEvaluator eval(spec);
    const std::vector<std::size_t> everything = all_indices(data.sample_count());

    TrainResult result;
    result.theta = theta0;
    std::vector<double> grad(spec.param_count(), 0.0);

    std::size_t completed = 0;
    bool stopped_early = false;
    for (std::size_t iter = 0; iter < cfg.iterations; ++iter) {
        mean_gradient_over(eval, result.theta, data, everything, grad);
        double ginf = inf_norm(grad);
        if (!std::isfinite(ginf)) {
            result.diverged = true;
            return result;
        }
        // entry k describes the state after k updates
        if (iter % cfg.log_every == 0) {
            result.trajectory.push_back({iter, objective_impl(eval, result.theta, data), ginf});
        }
        if (ginf < cfg.refine_tolerance) {
            stopped_early = true;
            break;
        }
        for (std::size_t i = 0; i < grad.size(); ++i) {
            result.theta[i] -= cfg.learning_rate * grad[i];
        }
        completed = iter + 1;
        if (!result.theta.all_finite()) {
            result.diverged = true;
            return result;
        }
    }
    (void)stopped_early;
    if (result.trajectory.empty() || result.trajectory.back().iteration != completed) {
        mean_gradient_over(eval, result.theta, data, everything, grad);
        result.trajectory.push_back(
            {completed, objective_impl(eval, result.theta, data), inf_norm(grad)});
    }
    return result;
}

namespace {

// Random k-way split; bucket sizes differ by at most one. Returns the bucket
// id per sample index.
std::vector<std::size_t> random_partition(std::size_t p, std::size_t k, RngStream& rng,
                                          std::vector<std::size_t>& scratch_order) {
    scratch_order.resize(p);
    std::iota(scratch_order.begin(), scratch_order.end(), 0);
    rng.shuffle(scratch_order);
    std::vector<std::size_t> bucket_of(p, 0);
    std::size_t base = p / k, extra = p % k, pos = 0;
    for (std::size_t m = 0; m < k; ++m) {
        std::size_t size = base + (m < extra ? 1 : 0);
        for (std::size_t j = 0; j < size; ++j) bucket_of[scratch_order[pos++]] = m;
    }
    return bucket_of;
}

// One estimator pass: fills the full-data objective gradient (canonical
// sample order, identical bits to run_gd's) and the per-coordinate stddev of
// the minibatch gradients. Deviations are measured around the first
// minibatch so a spread of exactly zero stays exactly zero.
void langevin_sigma_pass(NetworkEvaluator& eval, const ParamVector& theta, const Dataset& data,
                         std::size_t k, RngStream& rng, std::vector<double>& full_grad,
                         std::vector<double>& sigma) {
    const std::size_t p = data.sample_count();
    const std::size_t n = full_grad.size();
    if (k < 2 || k > p) {
        throw std::invalid_argument("langevin: minibatch count must satisfy 2 <= k <= P");
    }
    std::vector<std::size_t> scratch;
    std::vector<std::size_t> bucket_of = random_partition(p, k, rng, scratch);
    std::vector<std::size_t> bucket_size(k, 0);
    for (std::size_t b : bucket_of) ++bucket_size[b];

    std::vector<std::vector<double>> bucket_sum(k, std::vector<double>(n, 0.0));
    std::vector<double> sample_grad(n, 0.0);
    std::fill(full_grad.begin(), full_grad.end(), 0.0);
    for (std::size_t i = 0; i < p; ++i) {
        std::fill(sample_grad.begin(), sample_grad.end(), 0.0);
        eval.accumulate_sample_gradient(theta, data.inputs.row(i), data.targets[i], sample_grad);
        std::vector<double>& bs = bucket_sum[bucket_of[i]];
        for (std::size_t j = 0; j < n; ++j) {
            full_grad[j] += sample_grad[j];
            bs[j] += sample_grad[j];
        }
    }
    const double lambda = eval.spec().l2_lambda;
    double inv_p = 1.0 / static_cast<double>(p);
    for (std::size_t j = 0; j < n; ++j) full_grad[j] = full_grad[j] * inv_p + lambda * theta[j];

    for (std::size_t m = 0; m < k; ++m) {
        double inv = 1.0 / static_cast<double>(bucket_size[m]);
        for (double& v : bucket_sum[m]) v *= inv;
    }
    // mean of minibatch gradients, centered on bucket 0
    std::vector<double> mean_dev(n, 0.0);
    for (std::size_t m = 1; m < k; ++m) {
        for (std::size_t j = 0; j < n; ++j) mean_dev[j] += bucket_sum[m][j] - bucket_sum[0][j];
    }
    double inv_k = 1.0 / static_cast<double>(k);
    for (double& v : mean_dev) v *= inv_k;

    sigma.assign(n, 0.0);
    for (std::size_t m = 0; m < k; ++m) {
        for (std::size_t j = 0; j < n; ++j) {
            double d = (bucket_sum[m][j] - bucket_sum[0][j]) - mean_dev[j];
            sigma[j] += d * d;
        }
    }
    for (double& v : sigma) v = std::sqrt(v * inv_k);
}

}  // namespace

TrainResult run_langevin(const NetworkSpec& spec, const ParamVector& theta0, const Dataset& data,
                         const OptimizerConfig& cfg) {
    if (cfg.algorithm != Algorithm::langevin) {
        throw std::invalid_argument("run_langevin: config algorithm mismatch");
    }
    NetworkEvaluator eval(spec);
    RngStream rng(cfg.seed, cfg.stream_id);

    TrainResult result;
    result.theta = theta0;
    std::vector<double> grad(spec.param_count(), 0.0);
    std::vector<double> sigma;

    std::size_t completed = 0;
    for (std::size_t iter = 0; iter < cfg.iterations; ++iter) {
        langevin_sigma_pass(eval, result.theta, data, cfg.langevin_minibatch_count, rng, grad,
                            sigma);
        if (iter % cfg.log_every == 0) {
            double obj = objective_impl(eval, result.theta, data);
            if (!std::isfinite(obj)) {
                result.diverged = true;
                return result;
            }
            result.trajectory.push_back({iter, obj, inf_norm(grad)});
        }
        for (std::size_t i = 0; i < grad.size(); ++i) {
            double zeta = rng.gaussian(0.0, cfg.learning_rate * sigma[i]);
            result.theta[i] += -cfg.learning_rate * grad[i] + zeta;
        }
        completed = iter + 1;
        if (!result.theta.all_finite()) {
            result.diverged = true;
            return result;
        }
    }
    if (result.trajectory.empty() || result.trajectory.back().iteration != completed) {
        NetworkEvaluator& ev = eval;
        std::vector<std::size_t> everything(data.sample_count());
        std::iota(everything.begin(), everything.end(), 0);
        mean_gradient_over(ev, result.theta, data, everything, grad);
        result.trajectory.push_back(
            {completed, objective_impl(ev, result.theta, data), inf_norm(grad)});
    }
    return result;
}

std::vector<double> estimate_langevin_sigma(const NetworkSpec& spec, const ParamVector& theta,
                                            const Dataset& data, std::size_t minibatch_count,
                                            RngStream& rng) {
    NetworkEvaluator eval(spec);
    std::vector<double> full_grad(spec.param_count(), 0.0);
    std::vector<double> sigma;
    langevin_sigma_pass(eval, theta, data, minibatch_count, rng, full_grad, sigma);
    return sigma;
}

RefineResult refine(const NetworkSpec& spec, const ParamVector& theta, const Dataset& data,
                    double tolerance, std::size_t max_iterations, double initial_step) {
    if (tolerance <= 0.0) throw std::invalid_argument("refine: tolerance must be > 0");
    NetworkEvaluator eval(spec);
    const std::vector<std::size_t> everything = all_indices(data.sample_count());

    RefineResult result;
    result.theta = theta;
    std::vector<double> grad(spec.param_count(), 0.0);
    ParamVector candidate = theta;
    double step = initial_step;
    constexpr double kMinStep = 1e-18;

    for (std::size_t iter = 0; iter < max_iterations; ++iter) {
        mean_gradient_over(eval, result.theta, data, everything, grad);
        result.grad_inf_norm = inf_norm(grad);
        result.iterations = iter;
        if (result.grad_inf_norm < tolerance) {
            result.converged = true;
            return result;
        }
        double f0 = objective_impl(eval, result.theta, data);
        bool accepted = false;
        while (step >= kMinStep) {
            for (std::size_t i = 0; i < grad.size(); ++i) {
                candidate[i] = result.theta[i] - step * grad[i];
            }
            double f1 = objective_impl(eval, candidate, data);
            if (std::isfinite(f1) && f1 <= f0) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break;   // stalled at the smallest step
        result.theta = candidate;
        // re-expand so flat valleys are crossed in few iterations
        step = std::min(step * 2.0, 1e3 * initial_step);
    }
    mean_gradient_over(eval, result.theta, data, everything, grad);
    result.grad_inf_norm = inf_norm(grad);
    result.converged = result.grad_inf_norm < tolerance;
    return result;
}

NoiseCovariance noise_cov_theoretical(const NetworkSpec& spec, const ParamVector& theta,
                                      const Dataset& data, std::size_t b) {
    const std::size_t p = data.sample_count();
    validate_batch(b, p);
    DenseMatrix grads = per_sample_gradient_matrix(spec, theta, data);
    NoiseCovariance cov;
    cov.batch_size = b;
    cov.sample_count = p;
    cov.kind = NoiseCovKind::paper_asymptotic;
    cov.prefactor = (1.0 / static_cast<double>(b)) *
                    (1.0 - static_cast<double>(b) / static_cast<double>(p));
    cov.matrix = centered_second_moment(grads);
    cov.matrix *= cov.prefactor;
    return cov;
}

NoiseCovariance noise_cov_exact(const NetworkSpec& spec, const ParamVector& theta,
                                const Dataset& data, std::size_t b) {
    const std::size_t p = data.sample_count();
    validate_batch(b, p);
    DenseMatrix grads = per_sample_gradient_matrix(spec, theta, data);
    NoiseCovariance cov;
    cov.batch_size = b;
    cov.sample_count = p;
    cov.kind = NoiseCovKind::exact_finite_p;
    cov.prefactor = (p == 1) ? 0.0
                             : static_cast<double>(p - b) /
                                   (static_cast<double>(b) * static_cast<double>(p - 1));
    cov.matrix = centered_second_moment(grads);
    cov.matrix *= cov.prefactor;
    return cov;
}

namespace {

NoiseCovariance second_moment_of_batch_deltas(const DenseMatrix& grads, std::size_t b,
                                              const std::vector<std::vector<std::size_t>>& batches) {
    const std::size_t p = grads.rows();
    const std::size_t n = grads.cols();
    std::vector<double> full_mean(n, 0.0);
    for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t j = 0; j < n; ++j) full_mean[j] += grads(i, j);
    }
    for (double& v : full_mean) v /= static_cast<double>(p);

    NoiseCovariance cov;
    cov.batch_size = b;
    cov.sample_count = p;
    cov.kind = NoiseCovKind::empirical;
    cov.prefactor = 1.0 / static_cast<double>(batches.size());
    cov.matrix = DenseMatrix(n, n, 0.0);
    std::vector<double> delta(n);
    for (const auto& batch : batches) {
        std::fill(delta.begin(), delta.end(), 0.0);
        for (std::size_t idx : batch) {
            for (std::size_t j = 0; j < n; ++j) delta[j] += grads(idx, j);
        }
        double inv_b = 1.0 / static_cast<double>(batch.size());
        for (std::size_t j = 0; j < n; ++j) delta[j] = full_mean[j] - delta[j] * inv_b;
        for (std::size_t a = 0; a < n; ++a) {
            double da = delta[a];
            double* row = cov.matrix.data() + a * n;
            for (std::size_t bi = 0; bi < n; ++bi) row[bi] += da * delta[bi];
        }
    }
    cov.matrix *= cov.prefactor;
    return cov;
}

}  // namespace

NoiseCovariance noise_cov_empirical(const NetworkSpec& spec, const ParamVector& theta,
                                    const Dataset& data, std::size_t b, std::size_t draws,
                                    RngStream& rng) {
    const std::size_t p = data.sample_count();
    validate_batch(b, p);
    if (draws < 2) throw std::invalid_argument("noise_cov_empirical: draws must be >= 2");
    DenseMatrix grads = per_sample_gradient_matrix(spec, theta, data);
    std::vector<std::size_t> order = all_indices(p);
    std::vector<std::vector<std::size_t>> batches(draws);
    for (auto& batch : batches) {
        // partial Fisher-Yates: the first b entries are a uniform
        // without-replacement sample
        for (std::size_t i = 0; i < b; ++i) {
            std::size_t j = i + static_cast<std::size_t>(rng.uniform_below(p - i));
            std::swap(order[i], order[j]);
        }
        batch.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(b));
    }
    return second_moment_of_batch_deltas(grads, b, batches);
}

NoiseCovariance noise_cov_exhaustive(const NetworkSpec& spec, const ParamVector& theta,
                                     const Dataset& data, std::size_t b) {
    const std::size_t p = data.sample_count();
    validate_batch(b, p);
    double count = 1.0;
    for (std::size_t i = 0; i < b; ++i) {
        count *= static_cast<double>(p - i) / static_cast<double>(i + 1);
    }
    if (count > 2e6) throw std::invalid_argument("noise_cov_exhaustive: too many batches");

    std::vector<std::vector<std::size_t>> batches;
    std::vector<std::size_t> combo(b);
    std::iota(combo.begin(), combo.end(), 0);
    while (true) {
        batches.push_back(combo);
        // next combination in lexicographic order
        std::size_t i = b;
        while (i > 0 && combo[i - 1] == p - b + i - 1) --i;
        if (i == 0) break;
        ++combo[i - 1];
        for (std::size_t j = i; j < b; ++j) combo[j] = combo[j - 1] + 1;
    }
    DenseMatrix grads = per_sample_gradient_matrix(spec, theta, data);
    return second_moment_of_batch_deltas(grads, b, batches);
}

void dump_trajectory_csv(const std::vector<TrajectoryPoint>& trajectory,
                         const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("dump_trajectory_csv: cannot open " + path);
    os << "iteration,loss,grad_inf_norm\n";
    char buf[64];
    for (const auto& pt : trajectory) {
        os << pt.iteration << ',';
        std::snprintf(buf, sizeof(buf), "%.17g", pt.loss);
        os << buf << ',';
        std::snprintf(buf, sizeof(buf), "%.17g", pt.grad_inf_norm);
        os << buf << '\n';
    }
}

void dump_noise_covariance(const NoiseCovariance& cov, const std::string& csv_path) {
    std::ofstream os(csv_path, std::ios::trunc);
    if (!os) throw std::runtime_error("dump_noise_covariance: cannot open " + csv_path);
    char buf[64];
    for (std::size_t i = 0; i < cov.matrix.rows(); ++i) {
        for (std::size_t j = 0; j < cov.matrix.cols(); ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g", cov.matrix(i, j));
            os << buf << (j + 1 < cov.matrix.cols() ? "," : "\n");
        }
    }
    const char* kind = cov.kind == NoiseCovKind::paper_asymptotic ? "paper-asymptotic"
                       : cov.kind == NoiseCovKind::exact_finite_p ? "exact-finite-p"
                                                                  : "empirical";
    std::ofstream js(csv_path + ".json", std::ios::trunc);
    js << "{\n  \"kind\": \"" << kind << "\",\n  \"b\": " << cov.batch_size
       << ",\n  \"P\": " << cov.sample_count << ",\n  \"prefactor\": ";
    std::snprintf(buf, sizeof(buf), "%.17g", cov.prefactor);
    js << buf << "\n}\n";
}

}  // namespace lossland
