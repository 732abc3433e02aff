#include "lossland/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace lossland {

namespace {

constexpr double kProbClamp = 1e-12;

double apply_activation(Activation a, double z) {
    switch (a) {
        case Activation::sigmoid: return 1.0 / (1.0 + std::exp(-z));
        case Activation::relu: return z > 0.0 ? z : 0.0;
        case Activation::identity: return z;
    }
    return z;
}

// Derivative in terms of (z, value). relu derivative at exactly 0 is 0.
double activation_derivative(Activation a, double z, double value) {
    switch (a) {
        case Activation::sigmoid: return value * (1.0 - value);
        case Activation::relu: return z > 0.0 ? 1.0 : 0.0;
        case Activation::identity: return 1.0;
    }
    (void)z;
    return 1.0;
}

}  // namespace

std::size_t NetworkSpec::param_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < layer_widths.size(); ++l) {
        n += layer_widths[l + 1] * layer_widths[l];
    }
    return n;
}

std::size_t NetworkSpec::weight_offset(std::size_t layer) const {
    std::size_t off = 0;
    for (std::size_t l = 0; l < layer; ++l) off += layer_widths[l + 1] * layer_widths[l];
    return off;
}

void NetworkSpec::validate() const {
    if (layer_widths.size() < 2) {
        throw std::invalid_argument("NetworkSpec: need at least 2 layers");
    }
    for (std::size_t w : layer_widths) {
        if (w == 0) throw std::invalid_argument("NetworkSpec: layer widths must be >= 1");
    }
    if (activations.size() != layer_widths.size() - 1) {
        throw std::invalid_argument("NetworkSpec: one activation per weight layer required");
    }
    if (l2_lambda < 0.0) throw std::invalid_argument("NetworkSpec: l2_lambda must be >= 0");
    if (loss == LossKind::cross_entropy) {
        if (layer_widths.back() != 1 || activations.back() != Activation::sigmoid) {
            throw std::invalid_argument(
                "NetworkSpec: cross-entropy requires a width-1 sigmoid output");
        }
    }
}

NetworkSpec NetworkSpec::binary_image_default() {
    NetworkSpec spec;
    spec.layer_widths = {100, 10, 10, 10, 10, 1};
    spec.activations = {Activation::sigmoid, Activation::relu, Activation::relu,
                        Activation::relu, Activation::sigmoid};
    spec.loss = LossKind::cross_entropy;
    spec.l2_lambda = 1e-7;
    return spec;
}

NetworkSpec NetworkSpec::deep_linear(std::size_t n_input, std::size_t n_hidden,
                                     double l2_lambda) {
    NetworkSpec spec;
    spec.layer_widths = {n_input, n_hidden, 1};
    spec.activations = {Activation::identity, Activation::identity};
    spec.loss = LossKind::half_quadratic;
    spec.l2_lambda = l2_lambda;
    return spec;
}

bool ParamVector::all_finite() const {
    for (double v : values) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

double ParamVector::squared_norm() const {
    double s = 0.0;
    for (double v : values) s += v * v;
    return s;
}

ParamVector zeros_like(const NetworkSpec& spec) {
    return ParamVector{std::vector<double>(spec.param_count(), 0.0)};
}

void Dataset::validate(bool classification) const {
    if (targets.empty()) throw std::invalid_argument("Dataset: needs at least one sample");
    if (inputs.rows() != targets.size()) {
        throw std::invalid_argument("Dataset: inputs/targets sample count mismatch");
    }
    if (classification) {
        for (double t : targets) {
            if (t != 0.0 && t != 1.0) {
                throw std::invalid_argument("Dataset: classification targets must be 0 or 1");
            }
        }
    }
}

NetworkEvaluator::NetworkEvaluator(const NetworkSpec& spec) : spec_(spec) {
    spec_.validate();
    std::size_t layers = spec_.layer_widths.size();
    activations_.resize(layers);
    for (std::size_t l = 0; l < layers; ++l) activations_[l].resize(spec_.layer_widths[l]);
    preactivations_.resize(layers - 1);
    deltas_.resize(layers - 1);
    for (std::size_t l = 0; l + 1 < layers; ++l) {
        preactivations_[l].resize(spec_.layer_widths[l + 1]);
        deltas_[l].resize(spec_.layer_widths[l + 1]);
    }
}

double NetworkEvaluator::forward(const ParamVector& theta, std::span<const double> x) {
    if (theta.size() != spec_.param_count()) {
        throw std::invalid_argument("forward: parameter count mismatch");
    }
    if (x.size() != spec_.input_dim()) {
        throw std::invalid_argument("forward: input dimension mismatch");
    }
    std::copy(x.begin(), x.end(), activations_[0].begin());
    for (std::size_t l = 0; l < spec_.num_weight_layers(); ++l) {
        const std::size_t in = spec_.layer_widths[l];
        const std::size_t out = spec_.layer_widths[l + 1];
        const double* w = theta.values.data() + spec_.weight_offset(l);
        const double* a = activations_[l].data();
        for (std::size_t i = 0; i < out; ++i) {
            const double* row = w + i * in;
            double z = 0.0;
            for (std::size_t j = 0; j < in; ++j) z += row[j] * a[j];
            preactivations_[l][i] = z;
            activations_[l + 1][i] = apply_activation(spec_.activations[l], z);
        }
    }
    double y = activations_.back()[0];
    if (!std::isfinite(y)) throw std::runtime_error("forward: non-finite activation");
    return y;
}

double NetworkEvaluator::sample_loss(const ParamVector& theta, std::span<const double> x,
                                     double target) {
    double y = forward(theta, x);
    if (spec_.loss == LossKind::cross_entropy) {
        double p = std::min(std::max(y, kProbClamp), 1.0 - kProbClamp);
        return -target * std::log(p) - (1.0 - target) * std::log(1.0 - p);
    }
    double r = y - target;
    return 0.5 * r * r;
}

void NetworkEvaluator::accumulate_sample_gradient(const ParamVector& theta,
                                                  std::span<const double> x, double target,
                                                  std::span<double> grad) {
    double y = forward(theta, x);
    const std::size_t weight_layers = spec_.num_weight_layers();
    // Output delta = d l / d z_out. Sigmoid + cross-entropy collapses to
    // y - t, which stays exact even where the loss value is clamped.
    double out_delta;
    if (spec_.loss == LossKind::cross_entropy) {
        out_delta = y - target;
    } else {
        double dz = activation_derivative(spec_.activations.back(),
                                          preactivations_.back()[0], y);
        out_delta = (y - target) * dz;
    }
    deltas_[weight_layers - 1][0] = out_delta;

    for (std::size_t l = weight_layers - 1; l-- > 0;) {
        const std::size_t mid = spec_.layer_widths[l + 1];
        const std::size_t out = spec_.layer_widths[l + 2];
        const double* w_next = theta.values.data() + spec_.weight_offset(l + 1);
        for (std::size_t j = 0; j < mid; ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i < out; ++i) s += w_next[i * mid + j] * deltas_[l + 1][i];
            deltas_[l][j] = s * activation_derivative(spec_.activations[l],
                                                      preactivations_[l][j],
                                                      activations_[l + 1][j]);
        }
    }

    for (std::size_t l = 0; l < weight_layers; ++l) {
        const std::size_t in = spec_.layer_widths[l];
        const std::size_t out = spec_.layer_widths[l + 1];
        double* g = grad.data() + spec_.weight_offset(l);
        const double* a = activations_[l].data();
        for (std::size_t i = 0; i < out; ++i) {
            double d = deltas_[l][i];
            if (d == 0.0) continue;
            double* grow = g + i * in;
            for (std::size_t j = 0; j < in; ++j) grow[j] += d * a[j];
        }
    }
}

double forward(const NetworkSpec& spec, const ParamVector& theta, std::span<const double> x) {
    NetworkEvaluator eval(spec);
    return eval.forward(theta, x);
}

double loss(const NetworkSpec& spec, const ParamVector& theta, const Dataset& data) {
    NetworkEvaluator eval(spec);
    data.validate(spec.loss == LossKind::cross_entropy);
    double total = 0.0;
    for (std::size_t i = 0; i < data.sample_count(); ++i) {
        total += eval.sample_loss(theta, data.inputs.row(i), data.targets[i]);
    }
    if (spec.loss == LossKind::cross_entropy) total /= static_cast<double>(data.sample_count());
    return total + 0.5 * spec.l2_lambda * theta.squared_norm();
}

ParamVector gradient(const NetworkSpec& spec, const ParamVector& theta, const Dataset& data) {
    NetworkEvaluator eval(spec);
    data.validate(spec.loss == LossKind::cross_entropy);
    ParamVector grad = zeros_like(spec);
    for (std::size_t i = 0; i < data.sample_count(); ++i) {
        eval.accumulate_sample_gradient(theta, data.inputs.row(i), data.targets[i], grad.values);
    }
    if (spec.loss == LossKind::cross_entropy) {
        double inv_p = 1.0 / static_cast<double>(data.sample_count());
        for (double& g : grad.values) g *= inv_p;
    }
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += spec.l2_lambda * theta[i];
    if (!grad.all_finite()) throw std::runtime_error("gradient: non-finite result");
    return grad;
}

ParamVector per_sample_gradient(const NetworkSpec& spec, const ParamVector& theta,
                                std::size_t sample_index, const Dataset& data) {
    if (sample_index >= data.sample_count()) {
        throw std::out_of_range("per_sample_gradient: sample index out of range");
    }
    NetworkEvaluator eval(spec);
    ParamVector grad = zeros_like(spec);
    eval.accumulate_sample_gradient(theta, data.inputs.row(sample_index),
                                    data.targets[sample_index], grad.values);
    return grad;
}

double misclassification_rate(const NetworkSpec& spec, const ParamVector& theta,
                              const Dataset& data) {
    if (spec.loss != LossKind::cross_entropy) {
        throw std::invalid_argument("misclassification_rate: classification spec required");
    }
    data.validate(true);
    NetworkEvaluator eval(spec);
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < data.sample_count(); ++i) {
        double y = eval.forward(theta, data.inputs.row(i));
        double predicted = (y >= 0.5) ? 1.0 : 0.0;
        if (predicted != data.targets[i]) ++wrong;
    }
    return static_cast<double>(wrong) / static_cast<double>(data.sample_count());
}

namespace {

constexpr char kCheckpointMagic[4] = {'L', 'L', 'C', 'P'};
constexpr std::uint32_t kCheckpointVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw std::runtime_error("checkpoint: truncated header");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

void write_f64(std::ostream& os, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xFF);
    os.write(reinterpret_cast<const char*>(b), 8);
}

double read_f64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw std::runtime_error("checkpoint: truncated payload");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const NetworkSpec& spec, const ParamVector& theta) {
    spec.validate();
    if (theta.size() != spec.param_count()) {
        throw std::invalid_argument("save_checkpoint: parameter count mismatch");
    }
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
    os.write(kCheckpointMagic, 4);
    write_u32(os, kCheckpointVersion);
    write_u32(os, static_cast<std::uint32_t>(spec.layer_widths.size()));
    for (std::size_t w : spec.layer_widths) write_u32(os, static_cast<std::uint32_t>(w));
    for (double v : theta.values) write_f64(os, v);
    if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

ParamVector load_checkpoint(const std::string& path, const NetworkSpec& expected_spec) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
        throw std::runtime_error("load_checkpoint: bad magic in " + path);
    }
    std::uint32_t version = read_u32(is);
    if (version != kCheckpointVersion) {
        throw std::runtime_error("load_checkpoint: unsupported version");
    }
    std::uint32_t layers = read_u32(is);
    if (layers != expected_spec.layer_widths.size()) {
        throw std::runtime_error("load_checkpoint: layer count mismatch");
    }
    for (std::size_t l = 0; l < layers; ++l) {
        if (read_u32(is) != expected_spec.layer_widths[l]) {
            throw std::runtime_error("load_checkpoint: layer width mismatch");
        }
    }
    ParamVector theta;
    theta.values.resize(expected_spec.param_count());
    for (double& v : theta.values) v = read_f64(is);
    return theta;
}

}  // namespace lossland
