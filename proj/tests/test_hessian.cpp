#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "doctest.h"
#include "lossland/hessian.hpp"

using namespace lossland;

namespace {

Spectrum make_spectrum(std::vector<double> values) {
    Spectrum s;
    s.eigenvalues = std::move(values);
    return s;
}

}  // namespace

TEST_CASE("hessian_fd: one-layer quadratic matches the closed form sum x x^T") {
    // loss = 1/2 sum (w.x - y)^2 -> H = sum_i x_i x_i^T (plus lambda I)
    NetworkSpec spec;
    spec.layer_widths = {3, 1};
    spec.activations = {Activation::identity};
    spec.loss = LossKind::half_quadratic;
    spec.l2_lambda = 0.01;

    RngStream rng(17, 0);
    Dataset data;
    data.inputs = DenseMatrix(5, 3);
    data.targets.resize(5);
    for (std::size_t i = 0; i < 5; ++i) {
        for (double& v : data.inputs.row(i)) v = rng.gaussian(0.0, 1.0);
        data.targets[i] = rng.gaussian(0.0, 1.0);
    }
    ParamVector theta = zeros_like(spec);
    for (double& v : theta.values) v = rng.gaussian(0.0, 1.0);

    DenseMatrix analytic(3, 3, 0.0);
    for (std::size_t i = 0; i < 5; ++i) {
        for (std::size_t a = 0; a < 3; ++a) {
            for (std::size_t b = 0; b < 3; ++b) {
                analytic(a, b) += data.inputs(i, a) * data.inputs(i, b);
            }
        }
    }
    for (std::size_t a = 0; a < 3; ++a) analytic(a, a) += spec.l2_lambda;

    DenseMatrix h = hessian_fd(spec, theta, data);
    for (std::size_t a = 0; a < 3; ++a) {
        for (std::size_t b = 0; b < 3; ++b) {
            CHECK(std::abs(h(a, b) - analytic(a, b)) <= 1e-6 * std::max(1.0, std::abs(analytic(a, b))));
        }
    }
}

TEST_CASE("hessian_fd: lambda-only landscape gives lambda * I") {
    // zero inputs and targets: the data term is constant, H = lambda I
    NetworkSpec spec = NetworkSpec::deep_linear(2, 2, 0.25);
    Dataset data;
    data.inputs = DenseMatrix(3, 2, 0.0);
    data.targets = {0.0, 0.0, 0.0};
    ParamVector theta = zeros_like(spec);
    theta[0] = 0.4;
    theta[5] = -0.3;
    DenseMatrix h = hessian_fd(spec, theta, data);
    for (std::size_t i = 0; i < h.rows(); ++i) {
        for (std::size_t j = 0; j < h.cols(); ++j) {
            double expected = (i == j) ? 0.25 : 0.0;
            CHECK(std::abs(h(i, j) - expected) <= 1e-9);
        }
    }
}

TEST_CASE("hessian_fd: respects the parameter cap") {
    NetworkSpec spec = NetworkSpec::deep_linear(3, 2);
    Dataset data;
    data.inputs = DenseMatrix(1, 3, 0.5);
    data.targets = {1.0};
    ParamVector theta = zeros_like(spec);
    CHECK_THROWS_AS(hessian_fd(spec, theta, data, 4), std::invalid_argument);
}

TEST_CASE("negative-magnitude cleaning rule") {
    Spectrum s = clean_spectrum_negmag(make_spectrum({5.0, 2.0, 0.05, -0.02, -0.1}));
    CHECK(s.threshold == doctest::Approx(0.1));
    REQUIRE(s.retained.size() == 2);
    CHECK(s.eigenvalues[s.retained[0]] == doctest::Approx(5.0));
    CHECK(s.eigenvalues[s.retained[1]] == doctest::Approx(2.0));

    // idempotence
    Spectrum again = clean_spectrum_negmag(s);
    CHECK(again.threshold == s.threshold);
    CHECK(again.retained == s.retained);

    Spectrum all_pos = clean_spectrum_negmag(make_spectrum({3.0, 1.0, 0.5}));
    CHECK(all_pos.threshold == 0.0);
    CHECK(all_pos.retained.size() == 3);

    Spectrum all_neg = clean_spectrum_negmag(make_spectrum({-0.5, -1.0, -2.0}));
    CHECK(all_neg.retained.empty());   // flagged "no minimum" downstream
}

TEST_CASE("top-k cleaning rule") {
    Spectrum s = clean_spectrum_topk(make_spectrum({4.0, 3.0, 2.0, 1.0}), 2);
    REQUIRE(s.retained.size() == 2);
    CHECK(s.eigenvalues[s.retained[0]] == doctest::Approx(4.0));
    CHECK(s.eigenvalues[s.retained[1]] == doctest::Approx(3.0));
    CHECK(s.threshold == doctest::Approx(2.0));

    Spectrum full = clean_spectrum_topk(make_spectrum({4.0, 3.0}), 2);
    CHECK(full.retained.size() == 2);
    CHECK(full.threshold == 0.0);

    CHECK_THROWS_AS(clean_spectrum_topk(make_spectrum({1.0}), 0), std::invalid_argument);
    CHECK_THROWS_AS(clean_spectrum_topk(make_spectrum({1.0}), 2), std::invalid_argument);

    // linear-net convention: k = min(P, Ni)
    CHECK(std::min<std::size_t>(5, 10) == 5);
}

TEST_CASE("entropy arithmetic and scaling") {
    Spectrum ones = clean_spectrum_topk(make_spectrum({1.0, 1.0, 1.0}), 3);
    CHECK(entropy(ones, 3) == doctest::Approx(0.0));

    Spectrum pair = clean_spectrum_topk(make_spectrum({4.0, 1.0}), 2);
    CHECK(entropy(pair, 2) == doctest::Approx(-std::log(4.0) / 4.0));

    // scaling all eigenvalues by c shifts s by -(k / 2N) log c
    Spectrum scaled = clean_spectrum_topk(make_spectrum({4.0 * 7.0, 1.0 * 7.0}), 2);
    double shift = entropy(scaled, 2) - entropy(pair, 2);
    CHECK(shift == doctest::Approx(-(2.0 / 4.0) * std::log(7.0)).epsilon(1e-12));

    Spectrum empty = make_spectrum({1.0});
    CHECK_THROWS_AS(entropy(empty, 1), std::invalid_argument);
    Spectrum neg = clean_spectrum_topk(make_spectrum({1.0, -1.0}), 2);
    CHECK_THROWS_AS(entropy(neg, 2), std::invalid_argument);
}

TEST_CASE("entropy decreases when any retained eigenvalue grows") {
    Spectrum base = clean_spectrum_topk(make_spectrum({3.0, 2.0, 0.5}), 3);
    double s0 = entropy(base, 3);
    Spectrum bumped = clean_spectrum_topk(make_spectrum({3.0, 2.5, 0.5}), 3);
    CHECK(entropy(bumped, 3) < s0);
}

TEST_CASE("thermo report: structure and examples") {
    NetworkSpec spec = NetworkSpec::deep_linear(2, 1);
    // residuals (1, -1) with P = 2: u = (1/2) * (1/2 + 1/2) = 0.5
    ParamVector theta = zeros_like(spec);
    Dataset data;
    data.inputs = DenseMatrix(2, 2, 0.0);
    data.targets = {-1.0, 1.0};   // predictions are 0, residuals -(+/-1)
    Spectrum cleaned = clean_spectrum_topk(make_spectrum({1.0, 1.0, 1.0}), 3);
    ThermoReport report = thermo(spec, theta, data, cleaned);
    CHECK(report.u == doctest::Approx(0.5));
    CHECK(report.h == doctest::Approx(0.0));
    CHECK(report.s == doctest::Approx(0.0));
    CHECK(report.alpha == doctest::Approx(2.0 / 3.0));
    CHECK(report.free_energy ==
          doctest::Approx(report.u + (report.h - report.s) / report.alpha).epsilon(1e-15));

    // fixed u = 0, h = 0: halving alpha doubles |F|
    Dataset perfect;
    perfect.inputs = DenseMatrix(2, 2, 0.0);
    perfect.targets = {0.0, 0.0};
    Spectrum wide = clean_spectrum_topk(make_spectrum({2.0, 2.0, 2.0}), 3);
    ThermoReport f2 = thermo(spec, theta, perfect, wide);
    Dataset half;
    half.inputs = DenseMatrix(1, 2, 0.0);
    half.targets = {0.0};
    ThermoReport f1 = thermo(spec, theta, half, wide);
    CHECK(f1.free_energy == doctest::Approx(2.0 * f2.free_energy).epsilon(1e-12));
}

TEST_CASE("trace equals the eigenvalue sum for an FD Hessian") {
    NetworkSpec spec;
    spec.layer_widths = {3, 4, 1};
    spec.activations = {Activation::sigmoid, Activation::sigmoid};
    spec.loss = LossKind::cross_entropy;
    spec.l2_lambda = 1e-5;
    RngStream rng(27, 0);
    ParamVector theta = zeros_like(spec);
    for (double& v : theta.values) v = rng.gaussian(0.0, 0.5);
    Dataset data;
    data.inputs = DenseMatrix(6, 3);
    data.targets.resize(6);
    for (std::size_t i = 0; i < 6; ++i) {
        for (double& v : data.inputs.row(i)) v = rng.gaussian(0.0, 1.0);
        data.targets[i] = (i % 2 == 0) ? 0.0 : 1.0;
    }
    DenseMatrix h = hessian_fd(spec, theta, data);
    Spectrum s = symmetric_eigenvalues(h);
    double sum = 0.0;
    for (double v : s.eigenvalues) sum += v;
    CHECK(std::abs(sum - h.trace()) <= 1e-8 * (1.0 + std::abs(h.trace())));
}

TEST_CASE("raw FD Hessian is nearly symmetric on a smooth loss") {
    NetworkSpec spec;
    spec.layer_widths = {2, 3, 1};
    spec.activations = {Activation::sigmoid, Activation::sigmoid};
    spec.loss = LossKind::cross_entropy;
    spec.l2_lambda = 1e-6;
    RngStream rng(31, 0);
    ParamVector theta = zeros_like(spec);
    for (double& v : theta.values) v = rng.gaussian(0.0, 0.5);
    Dataset data;
    data.inputs = DenseMatrix(4, 2);
    data.targets.resize(4);
    for (std::size_t i = 0; i < 4; ++i) {
        for (double& v : data.inputs.row(i)) v = rng.gaussian(0.0, 1.0);
        data.targets[i] = (i % 2 == 0) ? 0.0 : 1.0;
    }
    // raw central differences of the analytic gradient, no symmetrization
    const std::size_t n = theta.size();
    DenseMatrix raw(n, n, 0.0);
    ParamVector probe = theta;
    for (std::size_t j = 0; j < n; ++j) {
        double eps = 1e-4 * std::max(1.0, std::abs(theta[j]));
        probe[j] = theta[j] + eps;
        ParamVector gp = gradient(spec, probe, data);
        probe[j] = theta[j] - eps;
        ParamVector gm = gradient(spec, probe, data);
        probe[j] = theta[j];
        for (std::size_t i = 0; i < n; ++i) raw(i, j) = (gp[i] - gm[i]) / (2.0 * eps);
    }
    double max_asym = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            max_asym = std::max(max_asym, std::abs(raw(i, j) - raw(j, i)));
        }
    }
    CHECK(max_asym < 1e-5 * (1.0 + raw.max_abs()));

    DenseMatrix h = hessian_fd(spec, theta, data);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            CHECK(h(i, j) == doctest::Approx(0.5 * (raw(i, j) + raw(j, i))).epsilon(1e-12));
        }
    }
}

TEST_CASE("spectrum CSV dump lists retained flags") {
    Spectrum s = clean_spectrum_negmag(make_spectrum({2.0, 0.5, -1.0}));
    auto path = std::filesystem::temp_directory_path() / "lossland_spectrum_test.csv";
    dump_spectrum_csv(s, path.string());
    std::ifstream is(path);
    std::string header, row0;
    std::getline(is, header);
    std::getline(is, row0);
    CHECK(header == "index,eigenvalue,retained,threshold");
    CHECK(row0 == "0,2,1,1");
    std::filesystem::remove(path);
}
