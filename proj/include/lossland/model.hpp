#ifndef LOSSLAND_MODEL_HPP
#define LOSSLAND_MODEL_HPP

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lossland/numerics.hpp"

namespace lossland {

enum class Activation { sigmoid, relu, identity };
enum class LossKind { cross_entropy, half_quadratic };

// Fully-connected network description: widths input -> ... -> output, one
// activation per weight layer, no bias terms anywhere.
struct NetworkSpec {
    std::vector<std::size_t> layer_widths;
    std::vector<Activation> activations;   // activations.size() == layer_widths.size() - 1
    LossKind loss = LossKind::cross_entropy;
    double l2_lambda = 0.0;

    std::size_t num_weight_layers() const { return layer_widths.empty() ? 0 : layer_widths.size() - 1; }
    std::size_t param_count() const;
    std::size_t weight_offset(std::size_t layer) const;
    std::size_t input_dim() const { return layer_widths.front(); }

    // Throws std::invalid_argument on a malformed spec (fewer than 2 layers,
    // zero widths, activation count mismatch, or cross-entropy without a
    // width-1 sigmoid output).
    void validate() const;

    // 100-10-10-10-10-1 sigmoid/relu/relu/relu/sigmoid net with cross-entropy
    // and lambda = 1e-7; N = 1310.
    static NetworkSpec binary_image_default();

    // Ni-Nh-1 identity-activation net with the half-quadratic loss.
    static NetworkSpec deep_linear(std::size_t n_input, std::size_t n_hidden,
                                   double l2_lambda = 0.0);
};

// Flat parameter vector theta. Canonical layout, frozen so Hessian rows and
// columns are comparable across runs: weight matrices in layer order
// (W_0 first), each stored row-major with shape (width[l+1] x width[l]).
struct ParamVector {
    std::vector<double> values;

    std::size_t size() const { return values.size(); }
    double& operator[](std::size_t i) { return values[i]; }
    double operator[](std::size_t i) const { return values[i]; }
    bool all_finite() const;
    double squared_norm() const;
};

ParamVector zeros_like(const NetworkSpec& spec);

// Inputs are one sample per row (P x N_i); targets are {0,1} labels for
// classification or reals for regression.
struct Dataset {
    DenseMatrix inputs;
    std::vector<double> targets;

    std::size_t sample_count() const { return targets.size(); }
    std::size_t feature_count() const { return inputs.cols(); }
    void validate(bool classification) const;
};

// Reusable forward/backward engine; keeps per-layer buffers so per-sample
// calls in optimizer loops do not allocate. Not thread-safe; use one
// evaluator per thread.
class NetworkEvaluator {
public:
    explicit NetworkEvaluator(const NetworkSpec& spec);

    const NetworkSpec& spec() const { return spec_; }

    double forward(const ParamVector& theta, std::span<const double> x);

    // Per-sample data loss l_i (no regularizer).
    double sample_loss(const ParamVector& theta, std::span<const double> x, double target);

    // Adds d l_i / d theta into grad (length param_count).
    void accumulate_sample_gradient(const ParamVector& theta, std::span<const double> x,
                                    double target, std::span<double> grad);

private:
    NetworkSpec spec_;
    std::vector<std::vector<double>> activations_;     // a_0 .. a_L
    std::vector<std::vector<double>> preactivations_;  // z_1 .. z_L
    std::vector<std::vector<double>> deltas_;
};

// Scalar network output for one input vector.
double forward(const NetworkSpec& spec, const ParamVector& theta, std::span<const double> x);

// Full training loss: mean cross-entropy or (1/2) * sum of squared residuals,
// plus (lambda/2) * ||theta||^2. Cross-entropy clamps predictions to
// [1e-12, 1 - 1e-12] before the logs.
double loss(const NetworkSpec& spec, const ParamVector& theta, const Dataset& data);

// Exact reverse-mode gradient of loss(). relu derivative at 0 is 0.
ParamVector gradient(const NetworkSpec& spec, const ParamVector& theta, const Dataset& data);

// Gradient of one sample's data term alone (no regularizer, no 1/P).
ParamVector per_sample_gradient(const NetworkSpec& spec, const ParamVector& theta,
                                std::size_t sample_index, const Dataset& data);

// Fraction of samples where (y >= 0.5) disagrees with the 0/1 label; a tie at
// exactly 0.5 predicts class 1.
double misclassification_rate(const NetworkSpec& spec, const ParamVector& theta,
                              const Dataset& data);

// Checkpoint file: little-endian binary, header (magic "LLCP", version,
// layer widths) followed by the flat ParamVector. Round-trips bit-exactly.
void save_checkpoint(const std::string& path, const NetworkSpec& spec, const ParamVector& theta);
ParamVector load_checkpoint(const std::string& path, const NetworkSpec& expected_spec);

}  // namespace lossland

#endif
