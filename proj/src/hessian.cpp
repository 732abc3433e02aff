#include "lossland/hessian.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace lossland {

DenseMatrix hessian_fd(const NetworkSpec& spec, const ParamVector& theta, const Dataset& data,
                       std::size_t max_params) {
    const std::size_t n = theta.size();
    if (n != spec.param_count()) {
        throw std::invalid_argument("hessian_fd: parameter count mismatch");
    }
    if (n > max_params) {
        throw std::invalid_argument("hessian_fd: parameter count exceeds cap");
    }
    DenseMatrix h(n, n, 0.0);
    ParamVector probe = theta;
    for (std::size_t j = 0; j < n; ++j) {
        const double eps = 1e-4 * std::max(1.0, std::abs(theta[j]));
        probe[j] = theta[j] + eps;
        ParamVector g_plus = gradient(spec, probe, data);
        probe[j] = theta[j] - eps;
        ParamVector g_minus = gradient(spec, probe, data);
        probe[j] = theta[j];
        const double inv = 1.0 / (2.0 * eps);
        for (std::size_t i = 0; i < n; ++i) h(i, j) = (g_plus[i] - g_minus[i]) * inv;
    }
    if (!h.all_finite()) throw std::runtime_error("hessian_fd: non-finite entries");
    // Symmetrize in place.
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            double v = 0.5 * (h(i, j) + h(j, i));
            h(i, j) = v;
            h(j, i) = v;
        }
    }
    return h;
}

Spectrum clean_spectrum_negmag(Spectrum spectrum) {
    if (spectrum.eigenvalues.empty()) {
        throw std::invalid_argument("clean_spectrum_negmag: empty spectrum");
    }
    double most_negative = spectrum.eigenvalues.back();   // sorted descending
    spectrum.threshold = most_negative < 0.0 ? -most_negative : 0.0;
    spectrum.retained.clear();
    for (std::size_t i = 0; i < spectrum.eigenvalues.size(); ++i) {
        if (spectrum.eigenvalues[i] > spectrum.threshold) spectrum.retained.push_back(i);
    }
    return spectrum;
}

Spectrum clean_spectrum_topk(Spectrum spectrum, std::size_t k) {
    if (k == 0) throw std::invalid_argument("clean_spectrum_topk: k must be >= 1");
    if (k > spectrum.eigenvalues.size()) {
        throw std::invalid_argument("clean_spectrum_topk: k exceeds eigenvalue count");
    }
    spectrum.retained.clear();
    for (std::size_t i = 0; i < k; ++i) spectrum.retained.push_back(i);
    spectrum.threshold = (k < spectrum.eigenvalues.size()) ? spectrum.eigenvalues[k] : 0.0;
    return spectrum;
}

double entropy(const Spectrum& spectrum, std::size_t n_total) {
    if (n_total == 0) throw std::invalid_argument("entropy: n_total must be >= 1");
    return -log_eigenvalue_sum(spectrum) / (2.0 * static_cast<double>(n_total));
}

double log_eigenvalue_sum(const Spectrum& spectrum) {
    if (spectrum.retained.empty()) {
        throw std::invalid_argument("log_eigenvalue_sum: retained set is empty");
    }
    double s = 0.0;
    for (std::size_t idx : spectrum.retained) {
        double lambda = spectrum.eigenvalues.at(idx);
        if (lambda <= 0.0) {
            throw std::invalid_argument("log_eigenvalue_sum: retained eigenvalue <= 0");
        }
        s += std::log(lambda);
    }
    return s;
}

ThermoReport thermo(const NetworkSpec& spec, const ParamVector& theta, const Dataset& train,
                    const Spectrum& cleaned_spectrum) {
    const std::size_t n = spec.param_count();
    const std::size_t p = train.sample_count();
    ThermoReport report;

    NetworkEvaluator eval(spec);
    double total = 0.0;
    for (std::size_t i = 0; i < p; ++i) {
        total += eval.sample_loss(theta, train.inputs.row(i), train.targets[i]);
    }
    report.u = total / static_cast<double>(p);
    report.h = (spec.l2_lambda / static_cast<double>(n)) * 0.5 * theta.squared_norm();
    report.log_eigen_sum = log_eigenvalue_sum(cleaned_spectrum);
    report.s = entropy(cleaned_spectrum, n);
    report.alpha = static_cast<double>(p) / static_cast<double>(n);
    report.free_energy = report.u + (report.h - report.s) / report.alpha;
    report.trace = 0.0;
    for (double lambda : cleaned_spectrum.eigenvalues) report.trace += lambda;
    report.retained_count = cleaned_spectrum.retained.size();
    return report;
}

void dump_spectrum_csv(const Spectrum& spectrum, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("dump_spectrum_csv: cannot open " + path);
    os << "index,eigenvalue,retained,threshold\n";
    std::vector<bool> kept(spectrum.eigenvalues.size(), false);
    for (std::size_t idx : spectrum.retained) kept[idx] = true;
    char buf[64];
    for (std::size_t i = 0; i < spectrum.eigenvalues.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g", spectrum.eigenvalues[i]);
        os << i << ',' << buf << ',' << (kept[i] ? 1 : 0) << ',';
        std::snprintf(buf, sizeof(buf), "%.17g", spectrum.threshold);
        os << buf << '\n';
    }
}

}  // namespace lossland
