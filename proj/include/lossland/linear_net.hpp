#ifndef LOSSLAND_LINEAR_NET_HPP
#define LOSSLAND_LINEAR_NET_HPP

#include <cstdint>
#include <optional>
#include <vector>

#include "lossland/model.hpp"
#include "lossland/numerics.hpp"

namespace lossland {

// Student-teacher setup for the two-layer linear network: inputs are drawn
// N(0, I/Ni), the teacher row vector has unit-variance Gaussian entries, and
// targets are teacher outputs plus N(0, noise_std^2) noise.
struct TeacherConfig {
    std::size_t n_input = 10;
    std::size_t n_hidden = 7;
    std::size_t n_samples = 5;
    double noise_std = 1e-4;
    std::uint64_t seed = 0;
};

struct LinearNetState {
    DenseMatrix w1;        // Nh x Ni
    DenseMatrix w2;        // 1 x Nh
    DenseMatrix teacher;   // 1 x Ni
    DenseMatrix x;         // Ni x P (one sample per column)
    std::vector<double> y; // length P
    DenseMatrix sigma_x;   // X X^T
    DenseMatrix sigma_yx;  // y X^T
    double noise_std = 0.0;

    std::size_t n_input() const { return x.rows(); }
    std::size_t n_hidden() const { return w1.rows(); }
    std::size_t n_samples() const { return y.size(); }
};

LinearNetState generate_teacher(const TeacherConfig& cfg);

// The same data as a model-module Dataset (inputs one sample per row).
Dataset to_dataset(const LinearNetState& state);

// Pack (W1, W2) into the canonical flat layout of the Ni-Nh-1 network, and
// back.
ParamVector pack_params(const LinearNetState& state);
void unpack_params(const ParamVector& theta, LinearNetState& state);

struct FlowDerivative {
    DenseMatrix dw1;
    DenseMatrix dw2;
};

// Continuum gradient-flow right-hand side (time constant 1):
//   dW1 = W2^T (Sigma_yx - W2 W1 Sigma_x)
//   dW2 = (Sigma_yx - W2 W1 Sigma_x) W1^T
FlowDerivative gradient_flow_rhs(const LinearNetState& state);

struct FlowResult {
    LinearNetState state;
    std::vector<double> invariant_trajectory;   // balance invariant per step
    bool diverged = false;
};

// Classical fourth-order Runge-Kutta on the flow.
FlowResult integrate_flow(const LinearNetState& state, double dt, std::size_t steps);

// ||W2||^2 - ||W1||_F^2, conserved by the continuum flow.
double balance_invariant(const LinearNetState& state);

// tr H = ||W2||^2 ||X||_F^2 + ||W1 X||_F^2 for the half-quadratic loss.
double hessian_trace_formula(const LinearNetState& state);

// Hessian of the scalar two-weight chain:
//   [ w2^2 sx            2 w2 w1 sx - syx ]
//   [ 2 w2 w1 sx - syx   w1^2 sx          ]
DenseMatrix scalar_chain_hessian(double w1, double w2, double sigma_x, double sigma_yx);

struct ParallelPerp {
    DenseMatrix parallel;
    DenseMatrix perpendicular;
};

// Splits the rows of W into the component inside the span of the training
// inputs (columns of X) and the orthogonal remainder; parallel + perp == W
// exactly. Rank is decided by pivoted Gram-Schmidt with relative cutoff
// 1e-10; a zero X gives a zero projector.
ParallelPerp decompose_parallel_perp(const DenseMatrix& w, const DenseMatrix& x);

// e_g = (1/Ni) ||teacher - W2 W1||^2 + noise_std^2.
double generalization_exact(const LinearNetState& state);

struct TeacherStats {
    double perp_sq_norm = 0.0;     // ||teacher_perp||^2
    double parallel_sq_norm = 0.0; // ||teacher_par||^2
};

TeacherStats teacher_stats(const LinearNetState& state);

// Predicted mean generalization error,
//   (1/Ni)(<||teacher_perp||^2> - <||teacher_par||^2>) + (1/Ni)||W2 W1||^2
//   + noise_std^2,
// valid only after training drove the residual below `residual`; returns
// nullopt otherwise.
std::optional<double> generalization_predicted(const LinearNetState& state,
                                               const TeacherStats& stats,
                                               double training_residual,
                                               double residual_limit = 1e-6);

enum class InitBalance { balanced, imbalanced };

struct InitConfig {
    InitBalance balance = InitBalance::balanced;
    double asymmetry_min = 1.0;    // imbalanced: a drawn log-uniform in [min, max]
    double asymmetry_max = 100.0;
};

// Gaussian entries (std 1/sqrt(fan-in)), rescaled to the common norm
// sqrt(||W1|| ||W2||) so the product is untouched. Imbalanced mode then
// multiplies W2 by a and divides W1 by a.
void init_weights(LinearNetState& state, const InitConfig& cfg, RngStream& rng);

// Training residual 0.5 * sum_i (W2 W1 x_i - y_i)^2.
double training_residual(const LinearNetState& state);

}  // namespace lossland

#endif
