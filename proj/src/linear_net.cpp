#include "lossland/linear_net.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace lossland {

namespace {

void recompute_covariances(LinearNetState& state) {
    state.sigma_x = matmul(state.x, state.x.transposed());
    DenseMatrix y_row(1, state.y.size());
    for (std::size_t i = 0; i < state.y.size(); ++i) y_row(0, i) = state.y[i];
    state.sigma_yx = matmul(y_row, state.x.transposed());
}

double squared_frobenius(const DenseMatrix& m) {
    double s = 0.0;
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) s += m(i, j) * m(i, j);
    }
    return s;
}

}  // namespace

LinearNetState generate_teacher(const TeacherConfig& cfg) {
    if (cfg.n_input == 0 || cfg.n_hidden == 0 || cfg.n_samples == 0) {
        throw std::invalid_argument("generate_teacher: counts must be >= 1");
    }
    if (cfg.noise_std < 0.0) {
        throw std::invalid_argument("generate_teacher: noise_std must be >= 0");
    }
    RngStream rng(cfg.seed, 0);
    LinearNetState state;
    state.noise_std = cfg.noise_std;
    state.teacher = DenseMatrix(1, cfg.n_input);
    for (std::size_t j = 0; j < cfg.n_input; ++j) state.teacher(0, j) = rng.gaussian(0.0, 1.0);

    const double input_std = 1.0 / std::sqrt(static_cast<double>(cfg.n_input));
    state.x = DenseMatrix(cfg.n_input, cfg.n_samples);
    for (std::size_t p = 0; p < cfg.n_samples; ++p) {
        for (std::size_t i = 0; i < cfg.n_input; ++i) state.x(i, p) = rng.gaussian(0.0, input_std);
    }
    state.y.resize(cfg.n_samples);
    for (std::size_t p = 0; p < cfg.n_samples; ++p) {
        double v = 0.0;
        for (std::size_t i = 0; i < cfg.n_input; ++i) v += state.teacher(0, i) * state.x(i, p);
        state.y[p] = v + rng.gaussian(0.0, cfg.noise_std);
    }
    state.w1 = DenseMatrix(cfg.n_hidden, cfg.n_input, 0.0);
    state.w2 = DenseMatrix(1, cfg.n_hidden, 0.0);
    recompute_covariances(state);
    return state;
}

Dataset to_dataset(const LinearNetState& state) {
    Dataset data;
    data.inputs = state.x.transposed();
    data.targets = state.y;
    return data;
}

ParamVector pack_params(const LinearNetState& state) {
    ParamVector theta;
    theta.values.reserve(state.w1.size() + state.w2.size());
    theta.values.insert(theta.values.end(), state.w1.data(),
                        state.w1.data() + state.w1.size());
    theta.values.insert(theta.values.end(), state.w2.data(),
                        state.w2.data() + state.w2.size());
    return theta;
}

void unpack_params(const ParamVector& theta, LinearNetState& state) {
    if (theta.size() != state.w1.size() + state.w2.size()) {
        throw std::invalid_argument("unpack_params: length mismatch");
    }
    std::copy(theta.values.begin(),
              theta.values.begin() + static_cast<std::ptrdiff_t>(state.w1.size()),
              state.w1.data());
    std::copy(theta.values.begin() + static_cast<std::ptrdiff_t>(state.w1.size()),
              theta.values.end(), state.w2.data());
}

FlowDerivative gradient_flow_rhs(const LinearNetState& state) {
    DenseMatrix product = matmul(state.w2, state.w1);           // 1 x Ni
    DenseMatrix residual = state.sigma_yx - matmul(product, state.sigma_x);
    FlowDerivative d;
    d.dw1 = matmul(state.w2.transposed(), residual);            // Nh x Ni
    d.dw2 = matmul(residual, state.w1.transposed());            // 1 x Nh
    return d;
}

FlowResult integrate_flow(const LinearNetState& state, double dt, std::size_t steps) {
    if (dt <= 0.0) throw std::invalid_argument("integrate_flow: dt must be > 0");
    FlowResult result;
    result.state = state;
    result.invariant_trajectory.reserve(steps + 1);
    result.invariant_trajectory.push_back(balance_invariant(result.state));

    LinearNetState stage = state;
    for (std::size_t step = 0; step < steps; ++step) {
        const DenseMatrix w1 = result.state.w1;
        const DenseMatrix w2 = result.state.w2;

        FlowDerivative k1 = gradient_flow_rhs(result.state);
        stage.w1 = w1 + 0.5 * dt * k1.dw1;
        stage.w2 = w2 + 0.5 * dt * k1.dw2;
        FlowDerivative k2 = gradient_flow_rhs(stage);
        stage.w1 = w1 + 0.5 * dt * k2.dw1;
        stage.w2 = w2 + 0.5 * dt * k2.dw2;
        FlowDerivative k3 = gradient_flow_rhs(stage);
        stage.w1 = w1 + dt * k3.dw1;
        stage.w2 = w2 + dt * k3.dw2;
        FlowDerivative k4 = gradient_flow_rhs(stage);

        result.state.w1 = w1 + (dt / 6.0) * (k1.dw1 + 2.0 * k2.dw1 + 2.0 * k3.dw1 + k4.dw1);
        result.state.w2 = w2 + (dt / 6.0) * (k1.dw2 + 2.0 * k2.dw2 + 2.0 * k3.dw2 + k4.dw2);
        if (!result.state.w1.all_finite() || !result.state.w2.all_finite()) {
            result.diverged = true;
            break;
        }
        result.invariant_trajectory.push_back(balance_invariant(result.state));
    }
    return result;
}

double balance_invariant(const LinearNetState& state) {
    return squared_frobenius(state.w2) - squared_frobenius(state.w1);
}

double hessian_trace_formula(const LinearNetState& state) {
    return squared_frobenius(state.w2) * squared_frobenius(state.x) +
           squared_frobenius(matmul(state.w1, state.x));
}

DenseMatrix scalar_chain_hessian(double w1, double w2, double sigma_x, double sigma_yx) {
    DenseMatrix h(2, 2);
    h(0, 0) = w2 * w2 * sigma_x;
    h(0, 1) = 2.0 * w2 * w1 * sigma_x - sigma_yx;
    h(1, 0) = h(0, 1);
    h(1, 1) = w1 * w1 * sigma_x;
    return h;
}

ParallelPerp decompose_parallel_perp(const DenseMatrix& w, const DenseMatrix& x) {
    if (w.cols() != x.rows()) {
        throw std::invalid_argument("decompose_parallel_perp: dimension mismatch");
    }
    const std::size_t n = x.rows();
    const std::size_t p = x.cols();

    // Orthonormal basis for the span of the input samples (columns of X),
    // pivoted modified Gram-Schmidt with a relative rank cutoff.
    std::vector<std::vector<double>> columns(p, std::vector<double>(n));
    for (std::size_t j = 0; j < p; ++j) {
        for (std::size_t i = 0; i < n; ++i) columns[j][i] = x(i, j);
    }
    double max_norm = 0.0;
    for (const auto& col : columns) {
        double s = 0.0;
        for (double v : col) s += v * v;
        max_norm = std::max(max_norm, std::sqrt(s));
    }
    std::vector<std::vector<double>> basis;
    if (max_norm > 0.0) {
        const double cutoff = 1e-10 * max_norm;
        for (std::size_t pass = 0; pass < p; ++pass) {
            // pick the remaining column with the largest residual norm
            std::size_t best = p;
            double best_norm = cutoff;
            for (std::size_t j = 0; j < p; ++j) {
                if (columns[j].empty()) continue;
                double s = 0.0;
                for (double v : columns[j]) s += v * v;
                double nrm = std::sqrt(s);
                if (nrm > best_norm) {
                    best_norm = nrm;
                    best = j;
                }
            }
            if (best == p) break;
            std::vector<double> q = columns[best];
            for (double& v : q) v /= best_norm;
            columns[best].clear();
            for (auto& col : columns) {
                if (col.empty()) continue;
                double dot = 0.0;
                for (std::size_t i = 0; i < n; ++i) dot += q[i] * col[i];
                for (std::size_t i = 0; i < n; ++i) col[i] -= dot * q[i];
            }
            basis.push_back(std::move(q));
        }
    }

    ParallelPerp out;
    out.parallel = DenseMatrix(w.rows(), w.cols(), 0.0);
    for (std::size_t r = 0; r < w.rows(); ++r) {
        for (const auto& q : basis) {
            double dot = 0.0;
            for (std::size_t i = 0; i < n; ++i) dot += w(r, i) * q[i];
            for (std::size_t i = 0; i < n; ++i) out.parallel(r, i) += dot * q[i];
        }
    }
    out.perpendicular = w - out.parallel;
    return out;
}

double generalization_exact(const LinearNetState& state) {
    DenseMatrix diff = state.teacher - matmul(state.w2, state.w1);
    return squared_frobenius(diff) / static_cast<double>(state.n_input()) +
           state.noise_std * state.noise_std;
}

TeacherStats teacher_stats(const LinearNetState& state) {
    ParallelPerp split = decompose_parallel_perp(state.teacher, state.x);
    TeacherStats stats;
    stats.parallel_sq_norm = squared_frobenius(split.parallel);
    stats.perp_sq_norm = squared_frobenius(split.perpendicular);
    return stats;
}

std::optional<double> generalization_predicted(const LinearNetState& state,
                                               const TeacherStats& stats,
                                               double training_residual,
                                               double residual_limit) {
    if (!(training_residual < residual_limit)) return std::nullopt;
    const double ni = static_cast<double>(state.n_input());
    double product_sq = squared_frobenius(matmul(state.w2, state.w1));
    return (stats.perp_sq_norm - stats.parallel_sq_norm) / ni + product_sq / ni +
           state.noise_std * state.noise_std;
}

void init_weights(LinearNetState& state, const InitConfig& cfg, RngStream& rng) {
    if (cfg.asymmetry_min < 1.0 || cfg.asymmetry_max < cfg.asymmetry_min) {
        throw std::invalid_argument("init_weights: need 1 <= asymmetry_min <= asymmetry_max");
    }
    const double w1_std = 1.0 / std::sqrt(static_cast<double>(state.n_input()));
    const double w2_std = 1.0 / std::sqrt(static_cast<double>(state.n_hidden()));
    for (std::size_t i = 0; i < state.w1.rows(); ++i) {
        for (std::size_t j = 0; j < state.w1.cols(); ++j) {
            state.w1(i, j) = rng.gaussian(0.0, w1_std);
        }
    }
    for (std::size_t j = 0; j < state.w2.cols(); ++j) state.w2(0, j) = rng.gaussian(0.0, w2_std);

    // Balance the layer norms without touching the product.
    double n1 = std::sqrt(squared_frobenius(state.w1));
    double n2 = std::sqrt(squared_frobenius(state.w2));
    double scale = std::sqrt(n1 / n2);
    state.w2 *= scale;
    state.w1 *= 1.0 / scale;

    if (cfg.balance == InitBalance::imbalanced) {
        double a = std::exp(rng.uniform(std::log(cfg.asymmetry_min), std::log(cfg.asymmetry_max)));
        state.w2 *= a;
        state.w1 *= 1.0 / a;
    }
}

double training_residual(const LinearNetState& state) {
    DenseMatrix product = matmul(state.w2, state.w1);     // 1 x Ni
    double total = 0.0;
    for (std::size_t p = 0; p < state.n_samples(); ++p) {
        double yhat = 0.0;
        for (std::size_t i = 0; i < state.n_input(); ++i) yhat += product(0, i) * state.x(i, p);
        double r = yhat - state.y[p];
        total += 0.5 * r * r;
    }
    return total;
}

}  // namespace lossland
