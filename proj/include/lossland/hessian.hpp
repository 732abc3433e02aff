#ifndef LOSSLAND_HESSIAN_HPP
#define LOSSLAND_HESSIAN_HPP

#include <string>

#include "lossland/model.hpp"
#include "lossland/numerics.hpp"

namespace lossland {

// Per-minimum thermodynamic summary. free_energy always recomputes from its
// own fields: F = u + (h - s) / alpha.
struct ThermoReport {
    double u = 0.0;             // mean per-sample training error
    double h = 0.0;             // prior term (lambda/N) * ||theta||^2 / 2
    double s = 0.0;             // entropy over the cleaned spectrum
    double log_eigen_sum = 0.0; // unnormalized sum of log eigenvalues (retained)
    double free_energy = 0.0;
    double alpha = 0.0;         // P/N
    double trace = 0.0;         // sum of all (uncleaned) eigenvalues
    std::size_t retained_count = 0;
};

// Hessian of loss() by central differences of the analytic gradient,
// step eps_i = 1e-4 * max(1, |theta_i|), explicitly symmetrized. The
// regularizer's lambda*I rides along inside the gradient. Throws when the
// parameter count exceeds `max_params` or any entry comes out non-finite.
DenseMatrix hessian_fd(const NetworkSpec& spec, const ParamVector& theta, const Dataset& data,
                       std::size_t max_params = 2000);

// Cleaning rule for nonlinear nets: threshold at the magnitude of the most
// negative eigenvalue (0 if none are negative); keep everything above it.
Spectrum clean_spectrum_negmag(Spectrum spectrum);

// Cleaning rule for linear nets: keep the k largest eigenvalues; the
// recorded threshold is the (k+1)-th value, or 0 when k is the full length.
Spectrum clean_spectrum_topk(Spectrum spectrum, std::size_t k);

// s = -(1 / (2 n_total)) * sum of log(lambda_i) over retained eigenvalues.
// Throws when the retained set is empty or holds a non-positive eigenvalue.
double entropy(const Spectrum& spectrum, std::size_t n_total);

// Unnormalized sum of log(lambda_i) over the retained set.
double log_eigenvalue_sum(const Spectrum& spectrum);

// u, h, s and F = u + (h - s)/alpha for a solution, with alpha = P/N. For a
// half-quadratic spec u is the mean squared residual / 2 (unit noise scale);
// for classification u is the mean cross-entropy.
ThermoReport thermo(const NetworkSpec& spec, const ParamVector& theta, const Dataset& train,
                    const Spectrum& cleaned_spectrum);

// CSV dump: index,eigenvalue,retained,threshold.
void dump_spectrum_csv(const Spectrum& spectrum, const std::string& path);

}  // namespace lossland

#endif
