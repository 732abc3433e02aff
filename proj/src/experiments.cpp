#include "lossland/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace lossland {

namespace {

using nlohmann::json;

double now_seconds() {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

// Claims run indices from a shared counter; the caller stores results by
// index so output order never depends on scheduling.
void parallel_runs(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& work) {
    jobs = std::max<std::size_t>(1, jobs);
    if (jobs == 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) work(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    std::vector<std::thread> threads;
    threads.reserve(jobs);
    for (std::size_t t = 0; t < jobs; ++t) {
        threads.emplace_back([&] {
            while (true) {
                std::size_t i = next.fetch_add(1);
                if (i >= n) break;
                try {
                    work(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    }
    for (auto& th : threads) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

std::string algorithm_name(Algorithm a) {
    switch (a) {
        case Algorithm::sgd: return "sgd";
        case Algorithm::gd: return "gd";
        case Algorithm::langevin: return "langevin";
    }
    return "?";
}

Algorithm algorithm_from_name(const std::string& name) {
    if (name == "sgd") return Algorithm::sgd;
    if (name == "gd") return Algorithm::gd;
    if (name == "langevin") return Algorithm::langevin;
    throw ConfigError("unknown algorithm: " + name);
}

std::vector<std::string> split_list(const std::string& text, char sep) {
    std::vector<std::string> parts;
    std::string current;
    for (char c : text) {
        if (c == sep) {
            parts.push_back(current);
            current.clear();
        } else {
            current += c;
        }
    }
    parts.push_back(current);
    return parts;
}

double frobenius_relative_error(const DenseMatrix& a, const DenseMatrix& b) {
    double diff = 0.0, ref = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) {
            double d = a(i, j) - b(i, j);
            diff += d * d;
            ref += b(i, j) * b(i, j);
        }
    }
    if (ref == 0.0) return diff == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    return std::sqrt(diff / ref);
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw std::runtime_error("cannot create output directory " + dir);
}

std::ofstream open_out(const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open output file " + path);
    return os;
}

}  // namespace

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::vector<double> histogram_edges(std::vector<double> values) {
    values.erase(std::remove_if(values.begin(), values.end(),
                                [](double v) { return !std::isfinite(v); }),
                 values.end());
    if (values.empty()) return {};
    std::sort(values.begin(), values.end());
    double lo = values.front(), hi = values.back();
    if (lo == hi) return {lo, hi};

    auto quantile = [&](double q) {
        double pos = q * static_cast<double>(values.size() - 1);
        std::size_t i = static_cast<std::size_t>(pos);
        double frac = pos - static_cast<double>(i);
        if (i + 1 >= values.size()) return values.back();
        return values[i] * (1.0 - frac) + values[i + 1] * frac;
    };
    double iqr = quantile(0.75) - quantile(0.25);
    double width = 2.0 * iqr / std::cbrt(static_cast<double>(values.size()));
    std::size_t bins;
    if (width <= 0.0) {
        bins = 10;   // fixed fallback
    } else {
        bins = static_cast<std::size_t>(std::ceil((hi - lo) / width));
        bins = std::clamp<std::size_t>(bins, 1, 200);
    }
    std::vector<double> edges(bins + 1);
    for (std::size_t i = 0; i <= bins; ++i) {
        edges[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(bins);
    }
    return edges;
}

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file " + path);
    std::stringstream buffer;
    buffer << is.rdbuf();
    return from_string(buffer.str());
}

ExperimentConfig ExperimentConfig::from_string(const std::string& text) {
    ExperimentConfig cfg;
    std::istringstream is(text);
    std::string line;
    std::size_t line_no = 0;
    auto trim = [](std::string s) {
        std::size_t a = s.find_first_not_of(" \t\r");
        std::size_t b = s.find_last_not_of(" \t\r");
        return a == std::string::npos ? std::string{} : s.substr(a, b - a + 1);
    };
    while (std::getline(is, line)) {
        ++line_no;
        std::string trimmed = trim(line);
        if (trimmed.empty() || trimmed[0] == '#') continue;
        std::size_t eq = trimmed.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
        }
        std::string key = trim(trimmed.substr(0, eq));
        std::string value = trim(trimmed.substr(eq + 1));
        if (key.empty()) {
            throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
        }
        cfg.values_[key] = value;
    }
    return cfg;
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
    values_[key] = value;
}

bool ExperimentConfig::has(const std::string& key) const { return values_.count(key) != 0; }

void ExperimentConfig::require_known_keys(const std::set<std::string>& allowed) const {
    for (const auto& [key, value] : values_) {
        (void)value;
        if (allowed.count(key) == 0) {
            throw ConfigError("unknown config key: " + key);
        }
    }
}

std::string ExperimentConfig::get_string(const std::string& key,
                                         const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

double ExperimentConfig::get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
        std::size_t used = 0;
        double v = std::stod(it->second, &used);
        if (used != it->second.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": expected a number, got '" + it->second + "'");
    }
}

std::size_t ExperimentConfig::get_count(const std::string& key, std::size_t fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
        std::size_t used = 0;
        long long v = std::stoll(it->second, &used);
        if (used != it->second.size() || v < 0) throw std::invalid_argument("bad count");
        return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": expected a count, got '" + it->second + "'");
    }
}

std::uint64_t ExperimentConfig::get_u64(const std::string& key, std::uint64_t fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
        std::size_t used = 0;
        unsigned long long v = std::stoull(it->second, &used);
        if (used != it->second.size()) throw std::invalid_argument("trailing characters");
        return static_cast<std::uint64_t>(v);
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": expected an unsigned integer, got '" +
                          it->second + "'");
    }
}

bool ExperimentConfig::get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw ConfigError("config key " + key + ": expected true/false");
}

// ---------------------------------------------------------------------------
// train-compare engine
// ---------------------------------------------------------------------------

namespace {

// Stream-id scheme: run i of ensemble slot a (1-based across algorithms)
// gets base = (a << 32) + i; the init draw uses stream 2*base and the
// optimizer uses 2*base + 1, so ensembles extend without reshuffling
// earlier runs.
std::uint64_t run_stream_base(std::size_t ensemble_slot, std::size_t run_index) {
    return (static_cast<std::uint64_t>(ensemble_slot + 1) << 32) +
           static_cast<std::uint64_t>(run_index);
}

RunReport measure_trained_run(const TrainCompareParams& params, const Dataset& train,
                              const Dataset& test, Algorithm algo, std::size_t ensemble_slot,
                              std::size_t run_index, std::size_t run_id) {
    double t_start = now_seconds();
    RunReport report;
    report.run_id = run_id;
    report.algorithm = algorithm_name(algo);
    report.seed = params.master_seed;
    report.stream_id = run_stream_base(ensemble_slot, run_index);

    RngStream init_rng(params.master_seed, 2 * report.stream_id);
    ParamVector theta0 = gaussian_init(params.net, params.init_std, init_rng);

    OptimizerConfig cfg;
    cfg.algorithm = algo;
    cfg.learning_rate = params.learning_rate;
    cfg.batch_size = params.batch_size;
    cfg.iterations = (algo == Algorithm::sgd) ? params.sgd_epochs : params.iterations;
    cfg.seed = params.master_seed;
    cfg.stream_id = 2 * report.stream_id + 1;
    cfg.refine_tolerance = params.refine_tolerance;
    cfg.langevin_minibatch_count = params.langevin_minibatch_count;
    cfg.log_every = std::max<std::size_t>(1, cfg.iterations / 8);

    TrainResult trained;
    switch (algo) {
        case Algorithm::sgd: trained = run_sgd(params.net, theta0, train, cfg); break;
        case Algorithm::gd: trained = run_gd(params.net, theta0, train, cfg); break;
        case Algorithm::langevin: trained = run_langevin(params.net, theta0, train, cfg); break;
    }
    if (trained.diverged) {
        report.diverged = true;
        report.s = std::numeric_limits<double>::quiet_NaN();
        report.u = std::numeric_limits<double>::quiet_NaN();
        report.test_error = std::numeric_limits<double>::quiet_NaN();
        report.h = std::numeric_limits<double>::quiet_NaN();
        report.free_energy = std::numeric_limits<double>::quiet_NaN();
        report.log_eigen_sum = std::numeric_limits<double>::quiet_NaN();
        report.trace = std::numeric_limits<double>::quiet_NaN();
        report.wall_seconds = now_seconds() - t_start;
        return report;
    }

    RefineResult refined = refine(params.net, trained.theta, train, params.refine_tolerance,
                                  params.refine_max_iterations, params.learning_rate);
    report.converged = refined.converged;
    report.grad_inf_norm = refined.grad_inf_norm;

    DenseMatrix h = hessian_fd(params.net, refined.theta, train);
    Spectrum spectrum = clean_spectrum_negmag(symmetric_eigenvalues(h));
    if (spectrum.retained.empty()) {
        // no-minimum case: every eigenvalue fell below the noise threshold
        report.s = std::numeric_limits<double>::quiet_NaN();
        report.log_eigen_sum = std::numeric_limits<double>::quiet_NaN();
        report.free_energy = std::numeric_limits<double>::quiet_NaN();
        report.retained = 0;
        report.u = objective(params.net, refined.theta, train);
        report.trace = 0.0;
        for (double lambda : spectrum.eigenvalues) report.trace += lambda;
    } else {
        ThermoReport thermo_report = thermo(params.net, refined.theta, train, spectrum);
        report.u = thermo_report.u;
        report.h = thermo_report.h;
        report.s = thermo_report.s;
        report.log_eigen_sum = thermo_report.log_eigen_sum;
        report.free_energy = thermo_report.free_energy;
        report.trace = thermo_report.trace;
        report.retained = thermo_report.retained_count;
    }
    report.test_error = misclassification_rate(params.net, refined.theta, test);
    report.wall_seconds = now_seconds() - t_start;
    return report;
}

}  // namespace

TrainCompareResult run_train_compare(const TrainCompareParams& params) {
    params.net.validate();
    auto [train, test] = synthetic_classification(params.synthetic);
    if (params.batch_size > train.sample_count()) {
        throw ConfigError("batch size exceeds training sample count");
    }

    const std::size_t per_algo = params.runs_per_algorithm;
    const std::size_t total = params.algorithms.size() * per_algo;
    TrainCompareResult result;
    result.runs.resize(total);

    parallel_runs(total, params.jobs, [&](std::size_t i) {
        std::size_t slot = i / per_algo;
        std::size_t run_index = i % per_algo;
        result.runs[i] = measure_trained_run(params, train, test, params.algorithms[slot], slot,
                                             run_index, i);
    });

    for (const RunReport& r : result.runs) {
        if (r.diverged) ++result.divergent_count;
    }
    result.flagged_failed =
        static_cast<double>(result.divergent_count) >
        params.max_divergent_fraction * static_cast<double>(total);
    return result;
}

// ---------------------------------------------------------------------------
// linear-suite engine
// ---------------------------------------------------------------------------

LinearSuiteResult run_linear_ensemble(const LinearSuiteParams& params) {
    LinearNetState base = generate_teacher(params.teacher);
    LinearSuiteResult result;
    result.teacher = teacher_stats(base);
    result.runs.resize(params.runs);

    const NetworkSpec net = NetworkSpec::deep_linear(params.teacher.n_input,
                                                     params.teacher.n_hidden);
    const Dataset data = to_dataset(base);
    const std::size_t batches_per_epoch =
        (data.sample_count() + params.batch_size - 1) / params.batch_size;
    const std::size_t epochs =
        std::max<std::size_t>(1, params.sgd_steps / std::max<std::size_t>(1, batches_per_epoch));

    parallel_runs(params.runs, params.jobs, [&](std::size_t i) {
        double t_start = now_seconds();
        LinearRunReport report;
        report.run_id = i;
        report.stream_id = run_stream_base(0, i);

        LinearNetState state = base;
        RngStream init_rng(params.master_seed, 2 * report.stream_id);
        init_weights(state, params.init, init_rng);
        double invariant_init = balance_invariant(state);

        // Imbalanced starts can raise the curvature by orders of magnitude;
        // cap the step below the stability bound estimated from the trace.
        double trace_init = hessian_trace_formula(state);
        double lr = std::min(params.learning_rate, 0.5 / std::max(trace_init, 1e-12));

        OptimizerConfig cfg;
        cfg.algorithm = Algorithm::sgd;
        cfg.learning_rate = lr;
        cfg.batch_size = params.batch_size;
        cfg.iterations = epochs;
        cfg.seed = params.master_seed;
        cfg.stream_id = 2 * report.stream_id + 1;
        cfg.refine_tolerance = params.refine_tolerance;
        cfg.log_every = std::max<std::size_t>(1, epochs / 4);

        TrainResult trained = run_sgd(net, pack_params(state), data, cfg);
        RefineResult refined = refine(net, trained.theta, data, params.refine_tolerance,
                                      params.refine_max_iterations, lr);
        unpack_params(refined.theta, state);

        report.converged = !trained.diverged && refined.converged;
        report.grad_inf_norm = refined.grad_inf_norm;
        report.residual = training_residual(state);
        report.e_g_actual = generalization_exact(state);
        auto predicted = generalization_predicted(state, result.teacher, report.residual);
        report.e_g_predicted =
            predicted ? *predicted : std::numeric_limits<double>::quiet_NaN();

        DenseMatrix h = hessian_fd(net, refined.theta, data);
        Spectrum spectrum = symmetric_eigenvalues(h);
        report.trace_fd = 0.0;
        for (double lambda : spectrum.eigenvalues) report.trace_fd += lambda;
        std::size_t k = std::min(params.teacher.n_samples, params.teacher.n_input);
        spectrum = clean_spectrum_topk(std::move(spectrum), k);
        report.s = entropy(spectrum, net.param_count());

        report.trace_formula = hessian_trace_formula(state);
        DenseMatrix product = matmul(state.w2, state.w1);
        report.product_sq_norm = 0.0;
        for (std::size_t j = 0; j < product.cols(); ++j) {
            report.product_sq_norm += product(0, j) * product(0, j);
        }
        report.w2_sq_norm = 0.0;
        for (std::size_t j = 0; j < state.w2.cols(); ++j) {
            report.w2_sq_norm += state.w2(0, j) * state.w2(0, j);
        }
        report.w1_sq_norm = 0.0;
        for (std::size_t r = 0; r < state.w1.rows(); ++r) {
            for (std::size_t c = 0; c < state.w1.cols(); ++c) {
                report.w1_sq_norm += state.w1(r, c) * state.w1(r, c);
            }
        }
        report.balance_invariant = balance_invariant(state);
        report.invariant_drift = std::abs(report.balance_invariant - invariant_init);
        report.wall_seconds = now_seconds() - t_start;
        result.runs[i] = report;
    });
    return result;
}

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

namespace {

Dataset build_config_dataset(const ExperimentConfig& cfg, std::uint64_t default_seed,
                             Dataset* test_out) {
    std::string source = cfg.get_string("dataset", "synthetic");
    if (source == "synthetic") {
        SyntheticConfig sc;
        sc.n_features = cfg.get_count("features", 40);
        sc.n_train_per_class = cfg.get_count("train_per_class", 100);
        sc.n_test_per_class = cfg.get_count("test_per_class", 1000);
        sc.separation = cfg.get_double("separation", 3.0);
        sc.seed = cfg.get_u64("data_seed", default_seed);
        auto [train, test] = synthetic_classification(sc);
        if (test_out) *test_out = std::move(test);
        return std::move(train);
    }
    if (source == "cifar") {
        std::vector<RawImageRecord> records;
        for (const std::string& path : split_list(cfg.get_string("cifar_files", ""), ';')) {
            if (path.empty()) continue;
            auto batch = load_cifar_batch(path);
            records.insert(records.end(), batch.begin(), batch.end());
        }
        if (records.empty()) throw ConfigError("dataset=cifar requires cifar_files=path;path");
        SplitConfig split;
        auto classes = split_list(cfg.get_string("classes", "0,1"), ',');
        if (classes.size() != 2) throw ConfigError("classes must be two labels");
        split.classes = {static_cast<std::uint8_t>(std::stoul(classes[0])),
                         static_cast<std::uint8_t>(std::stoul(classes[1]))};
        split.n_train = cfg.get_count("n_train", 500);
        split.n_test = cfg.get_count("n_test", 2000);
        split.seed = cfg.get_u64("data_seed", default_seed);
        RngStream rng(split.seed, 0);
        auto [train, test] = make_split(records, split, rng);
        if (test_out) *test_out = std::move(test);
        return std::move(train);
    }
    if (source == "cache") {
        Dataset train = load_dataset_cache(cfg.get_string("cache_train", "train.bin"));
        if (test_out) *test_out = load_dataset_cache(cfg.get_string("cache_test", "test.bin"));
        return train;
    }
    throw ConfigError("dataset must be synthetic, cifar, or cache");
}

NetworkSpec network_from_config(const ExperimentConfig& cfg, const std::string& default_widths,
                                const std::string& default_activations) {
    NetworkSpec net;
    for (const std::string& part : split_list(cfg.get_string("widths", default_widths), ',')) {
        net.layer_widths.push_back(static_cast<std::size_t>(std::stoull(part)));
    }
    for (const std::string& part :
         split_list(cfg.get_string("activations", default_activations), ',')) {
        if (part == "sigmoid") net.activations.push_back(Activation::sigmoid);
        else if (part == "relu") net.activations.push_back(Activation::relu);
        else if (part == "identity") net.activations.push_back(Activation::identity);
        else throw ConfigError("unknown activation: " + part);
    }
    std::string loss_kind = cfg.get_string("loss", "cross_entropy");
    if (loss_kind == "cross_entropy") net.loss = LossKind::cross_entropy;
    else if (loss_kind == "half_quadratic") net.loss = LossKind::half_quadratic;
    else throw ConfigError("loss must be cross_entropy or half_quadratic");
    net.l2_lambda = cfg.get_double("lambda", 1e-7);
    try {
        net.validate();
    } catch (const std::exception& e) {
        throw ConfigError(std::string("invalid network: ") + e.what());
    }
    return net;
}

void write_runs_csv(const std::string& path, const std::vector<RunReport>& runs) {
    std::ofstream os = open_out(path);
    os << "run_id,algorithm,seed,stream_id,diverged,converged,grad_inf_norm,u,test_error,h,s,"
          "log_eigen_sum,free_energy,trace,retained\n";
    for (const RunReport& r : runs) {
        os << r.run_id << ',' << r.algorithm << ',' << r.seed << ',' << r.stream_id << ','
           << (r.diverged ? 1 : 0) << ',' << (r.converged ? 1 : 0) << ','
           << format_double(r.grad_inf_norm) << ',' << format_double(r.u) << ','
           << format_double(r.test_error) << ',' << format_double(r.h) << ','
           << format_double(r.s) << ',' << format_double(r.log_eigen_sum) << ','
           << format_double(r.free_energy) << ',' << format_double(r.trace) << ',' << r.retained
           << '\n';
    }
}

void write_histogram_csv(const std::string& path,
                         const std::vector<std::pair<std::string, std::vector<double>>>& series) {
    std::ofstream os = open_out(path);
    os << "algorithm,bin_lo,bin_hi,count\n";
    for (const auto& [name, values] : series) {
        std::vector<double> edges = histogram_edges(values);
        if (edges.size() < 2) continue;
        for (std::size_t b = 0; b + 1 < edges.size(); ++b) {
            std::size_t count = 0;
            for (double v : values) {
                if (!std::isfinite(v)) continue;
                bool last = (b + 2 == edges.size());
                if (v >= edges[b] && (v < edges[b + 1] || (last && v <= edges[b + 1]))) ++count;
            }
            os << name << ',' << format_double(edges[b]) << ',' << format_double(edges[b + 1])
               << ',' << count << '\n';
        }
    }
}

json algorithm_summary(const std::vector<RunReport>& runs, const std::string& name) {
    std::vector<double> s_values, u_values, test_values;
    std::size_t diverged = 0, unconverged = 0, no_minimum = 0;
    for (const RunReport& r : runs) {
        if (r.algorithm != name) continue;
        if (r.diverged) {
            ++diverged;
            continue;
        }
        if (!r.converged) ++unconverged;
        if (!std::isfinite(r.s)) {
            ++no_minimum;
            continue;
        }
        s_values.push_back(r.s);
        u_values.push_back(r.u);
        test_values.push_back(r.test_error);
    }
    json out;
    out["n_measured"] = s_values.size();
    out["n_diverged"] = diverged;
    out["n_unconverged"] = unconverged;
    out["n_no_minimum"] = no_minimum;
    if (!s_values.empty()) {
        out["mean_s"] = mean(s_values);
        out["mean_u"] = mean(u_values);
        out["mean_test_error"] = mean(test_values);
        if (s_values.size() >= 2) {
            out["std_s"] = sample_std(s_values);
            out["std_test_error"] = sample_std(test_values);
        }
    }
    return out;
}

std::vector<double> collect_s(const std::vector<RunReport>& runs, const std::string& name) {
    std::vector<double> values;
    for (const RunReport& r : runs) {
        if (r.algorithm == name && !r.diverged && std::isfinite(r.s)) values.push_back(r.s);
    }
    return values;
}

TrainCompareParams train_compare_params_from(const CommandContext& ctx) {
    const ExperimentConfig& cfg = ctx.config;
    TrainCompareParams params;
    bool paper = ctx.preset == "paper";

    params.synthetic.n_features = cfg.get_count("features", 40);
    params.synthetic.n_train_per_class = cfg.get_count("train_per_class", 100);
    params.synthetic.n_test_per_class = cfg.get_count("test_per_class", 1000);
    params.synthetic.separation = cfg.get_double("separation", 3.0);
    params.synthetic.seed = cfg.get_u64("data_seed", 42);

    std::string default_widths = paper ? "100,10,10,10,10,1" : "40,8,8,1";
    std::string default_acts = paper ? "sigmoid,relu,relu,relu,sigmoid" : "sigmoid,relu,sigmoid";
    params.net = network_from_config(cfg, default_widths, default_acts);
    params.init_std = cfg.get_double("init_std", 0.1);

    params.algorithms.clear();
    for (const std::string& name :
         split_list(cfg.get_string("algorithms", "sgd,langevin,gd"), ',')) {
        params.algorithms.push_back(algorithm_from_name(name));
    }
    params.runs_per_algorithm = cfg.get_count("runs", paper ? 50 : 20);
    params.learning_rate = cfg.get_double("learning_rate", 0.1);
    params.batch_size = cfg.get_count("batch", paper ? 50 : 20);
    params.sgd_epochs = cfg.get_count("epochs", paper ? 8000 : 1500);
    params.iterations = cfg.get_count("iterations", paper ? 80000 : 15000);
    params.langevin_minibatch_count = cfg.get_count("langevin_minibatches", 10);
    params.refine_tolerance = cfg.get_double("refine_tolerance", kDefaultRefineTolerance);
    params.refine_max_iterations = cfg.get_count("refine_max_iterations", 30000);
    params.master_seed = ctx.seed_override ? ctx.seed : cfg.get_u64("seed", 1);
    params.jobs = ctx.jobs;
    params.max_divergent_fraction = cfg.get_double("max_divergent_fraction", 0.2);
    return params;
}

const std::set<std::string> kTrainCompareKeys = {
    "features", "train_per_class", "test_per_class", "separation", "data_seed", "widths",
    "activations", "loss", "lambda", "init_std", "algorithms", "runs", "learning_rate", "batch",
    "epochs", "iterations", "langevin_minibatches", "refine_tolerance", "refine_max_iterations",
    "seed", "max_divergent_fraction", "dataset", "cifar_files", "classes", "n_train", "n_test",
    "u_threshold"};

}  // namespace

int cmd_train_compare(const CommandContext& ctx) {
    ctx.config.require_known_keys(kTrainCompareKeys);
    TrainCompareParams params = train_compare_params_from(ctx);
    ensure_dir(ctx.out_dir);

    double t_start = now_seconds();
    TrainCompareResult result = run_train_compare(params);
    double elapsed = now_seconds() - t_start;

    write_runs_csv(ctx.out_dir + "/runs.csv", result.runs);

    std::vector<std::pair<std::string, std::vector<double>>> series;
    for (Algorithm a : params.algorithms) {
        std::string name = algorithm_name(a);
        series.emplace_back(name, collect_s(result.runs, name));
    }
    write_histogram_csv(ctx.out_dir + "/histogram.csv", series);

    json summary;
    summary["master_seed"] = params.master_seed;
    summary["runs_per_algorithm"] = params.runs_per_algorithm;
    summary["divergent_count"] = result.divergent_count;
    summary["flagged_failed"] = result.flagged_failed;
    for (Algorithm a : params.algorithms) {
        std::string name = algorithm_name(a);
        summary["algorithms"][name] = algorithm_summary(result.runs, name);
    }
    auto s_sgd = collect_s(result.runs, "sgd");
    auto s_langevin = collect_s(result.runs, "langevin");
    auto s_gd = collect_s(result.runs, "gd");
    if (s_sgd.size() >= 2 && s_langevin.size() >= 2) {
        summary["rank_tests"]["p_sgd_gt_langevin"] = mann_whitney_one_sided_p(s_sgd, s_langevin);
    }
    if (s_sgd.size() >= 2 && s_gd.size() >= 2) {
        summary["rank_tests"]["p_sgd_gt_gd"] = mann_whitney_one_sided_p(s_sgd, s_gd);
    }
    if (s_langevin.size() >= 2 && s_gd.size() >= 2) {
        summary["rank_tests"]["p_langevin_gt_gd"] = mann_whitney_one_sided_p(s_langevin, s_gd);
    }
    open_out(ctx.out_dir + "/summary.json") << summary.dump(2) << '\n';

    json timing;
    timing["total_seconds"] = elapsed;
    open_out(ctx.out_dir + "/timing.json") << timing.dump(2) << '\n';

    if (result.flagged_failed) {
        throw ExperimentFailure("divergent run fraction exceeded " +
                                format_double(params.max_divergent_fraction));
    }
    return 0;
}

int cmd_entropy_vs_error(const CommandContext& ctx) {
    ctx.config.require_known_keys(kTrainCompareKeys);
    TrainCompareParams params = train_compare_params_from(ctx);
    params.algorithms = {Algorithm::sgd};
    if (!ctx.config.has("runs")) params.runs_per_algorithm = 50;
    double u_threshold = ctx.config.get_double("u_threshold", 1e-3);
    ensure_dir(ctx.out_dir);

    double t_start = now_seconds();
    TrainCompareResult result = run_train_compare(params);
    double elapsed = now_seconds() - t_start;

    std::vector<double> s_values, test_values;
    std::size_t excluded = 0;
    {
        std::ofstream os = open_out(ctx.out_dir + "/scatter.csv");
        os << "run_id,stream_id,s,test_error,u,included\n";
        for (const RunReport& r : result.runs) {
            bool included = !r.diverged && std::isfinite(r.s) && r.u < u_threshold;
            os << r.run_id << ',' << r.stream_id << ',' << format_double(r.s) << ','
               << format_double(r.test_error) << ',' << format_double(r.u) << ','
               << (included ? 1 : 0) << '\n';
            if (included) {
                s_values.push_back(r.s);
                test_values.push_back(r.test_error);
            } else {
                ++excluded;
            }
        }
    }

    json summary;
    summary["n_runs"] = result.runs.size();
    summary["n_excluded"] = excluded;
    summary["u_threshold"] = u_threshold;
    if (s_values.size() >= 2) {
        auto r = pearson(s_values, test_values);
        summary["pearson_defined"] = r.has_value();
        if (r) summary["pearson_r"] = *r;
    } else {
        summary["pearson_defined"] = false;
    }
    open_out(ctx.out_dir + "/summary.json") << summary.dump(2) << '\n';
    json timing;
    timing["total_seconds"] = elapsed;
    open_out(ctx.out_dir + "/timing.json") << timing.dump(2) << '\n';

    if (result.flagged_failed) {
        throw ExperimentFailure("divergent run fraction exceeded limit");
    }
    return 0;
}

namespace {

const std::set<std::string> kLinearSuiteKeys = {
    "ni", "nh", "p", "noise_std", "teacher_seed", "runs", "learning_rate", "steps", "batch",
    "refine_tolerance", "refine_max_iterations", "seed", "asymmetry_min", "asymmetry_max",
    "ensembles"};

void write_linear_csv(const std::string& path, const LinearSuiteResult& result,
                      std::uint64_t master_seed) {
    std::ofstream os = open_out(path);
    os << "run_id,seed,stream_id,e_g_actual,e_g_predicted,s,trace_h,trace_fd,product_sq_norm,"
          "w2_sq_norm,w1_sq_norm,balance_invariant,invariant_drift,residual,grad_inf_norm,"
          "converged\n";
    for (const LinearRunReport& r : result.runs) {
        os << r.run_id << ',' << master_seed << ',' << r.stream_id << ','
           << format_double(r.e_g_actual) << ',' << format_double(r.e_g_predicted) << ','
           << format_double(r.s) << ',' << format_double(r.trace_formula) << ','
           << format_double(r.trace_fd) << ',' << format_double(r.product_sq_norm) << ','
           << format_double(r.w2_sq_norm) << ',' << format_double(r.w1_sq_norm) << ','
           << format_double(r.balance_invariant) << ',' << format_double(r.invariant_drift)
           << ',' << format_double(r.residual) << ',' << format_double(r.grad_inf_norm) << ','
           << (r.converged ? 1 : 0) << '\n';
    }
}

json linear_ensemble_summary(const LinearSuiteResult& result) {
    std::vector<double> s, eg, eg_pred_actual, eg_pred, trace, product_sq, neg_log_trace;
    std::size_t unconverged = 0;
    double max_trace_mismatch = 0.0;
    for (const LinearRunReport& r : result.runs) {
        if (!r.converged) {
            ++unconverged;
            continue;
        }
        s.push_back(r.s);
        eg.push_back(r.e_g_actual);
        trace.push_back(r.trace_formula);
        neg_log_trace.push_back(-std::log(r.trace_formula));
        product_sq.push_back(r.product_sq_norm);
        if (std::isfinite(r.e_g_predicted)) {
            eg_pred.push_back(r.e_g_predicted);
            eg_pred_actual.push_back(r.e_g_actual);
        }
        double denom = std::max(std::abs(r.trace_formula), 1e-300);
        max_trace_mismatch =
            std::max(max_trace_mismatch, std::abs(r.trace_fd - r.trace_formula) / denom);
    }
    json out;
    out["n_runs"] = result.runs.size();
    out["n_unconverged"] = unconverged;
    out["n_predicted"] = eg_pred.size();
    out["max_trace_rel_mismatch"] = max_trace_mismatch;
    if (s.size() >= 2) {
        if (auto r = pearson(s, eg)) out["corr_s_eg"] = *r;
        if (auto r = spearman(neg_log_trace, s)) out["rank_corr_neg_log_trace_s"] = *r;
        if (auto r = pearson(neg_log_trace, s)) out["corr_neg_log_trace_s"] = *r;
        if (auto r = pearson(product_sq, eg)) out["corr_product_sq_eg"] = *r;
        LinearFit fit = linear_fit(product_sq, eg);
        out["eg_vs_product_sq_slope"] = fit.slope;
        out["eg_vs_product_sq_intercept"] = fit.intercept;
    }
    if (eg_pred.size() >= 2) {
        if (auto r = pearson(eg_pred, eg_pred_actual)) out["corr_predicted_actual"] = *r;
        LinearFit fit = linear_fit(eg_pred, eg_pred_actual);
        out["predicted_vs_actual_slope"] = fit.slope;
    }
    return out;
}

}  // namespace

int cmd_linear_suite(const CommandContext& ctx) {
    ctx.config.require_known_keys(kLinearSuiteKeys);
    const ExperimentConfig& cfg = ctx.config;

    LinearSuiteParams params;
    params.teacher.n_input = cfg.get_count("ni", 10);
    params.teacher.n_hidden = cfg.get_count("nh", 7);
    params.teacher.n_samples = cfg.get_count("p", 5);
    params.teacher.noise_std = cfg.get_double("noise_std", 1e-4);
    params.teacher.seed = cfg.get_u64("teacher_seed", 7);
    params.runs = cfg.get_count("runs", 50);
    params.learning_rate = cfg.get_double("learning_rate", 0.01);
    params.sgd_steps = cfg.get_count("steps", 50000);
    params.batch_size = cfg.get_count("batch", 1);
    params.refine_tolerance = cfg.get_double("refine_tolerance", 1e-8);
    params.refine_max_iterations = cfg.get_count("refine_max_iterations", 400000);
    params.master_seed = ctx.seed_override ? ctx.seed : cfg.get_u64("seed", 1);
    params.jobs = ctx.jobs;
    params.init.asymmetry_min = cfg.get_double("asymmetry_min", 1.0);
    params.init.asymmetry_max = cfg.get_double("asymmetry_max", 100.0);

    ensure_dir(ctx.out_dir);
    double t_start = now_seconds();

    json summary;
    summary["master_seed"] = params.master_seed;
    for (const std::string& ensemble : split_list(cfg.get_string("ensembles", "balanced,imbalanced"), ',')) {
        LinearSuiteParams run_params = params;
        if (ensemble == "balanced") {
            run_params.init.balance = InitBalance::balanced;
        } else if (ensemble == "imbalanced") {
            run_params.init.balance = InitBalance::imbalanced;
        } else {
            throw ConfigError("ensembles must list balanced and/or imbalanced");
        }
        LinearSuiteResult result = run_linear_ensemble(run_params);
        write_linear_csv(ctx.out_dir + "/" + ensemble + ".csv", result, params.master_seed);
        summary["ensembles"][ensemble] = linear_ensemble_summary(result);
        summary["ensembles"][ensemble]["teacher_perp_sq"] = result.teacher.perp_sq_norm;
        summary["ensembles"][ensemble]["teacher_parallel_sq"] = result.teacher.parallel_sq_norm;
    }
    summary["expected_slope"] = 1.0 / static_cast<double>(params.teacher.n_input);
    open_out(ctx.out_dir + "/fit_summary.json") << summary.dump(2) << '\n';

    json timing;
    timing["total_seconds"] = now_seconds() - t_start;
    open_out(ctx.out_dir + "/timing.json") << timing.dump(2) << '\n';
    return 0;
}

namespace {

const std::set<std::string> kNoiseVerifyKeys = {"features", "samples", "batch", "draws", "seed"};

}  // namespace

int cmd_noise_verify(const CommandContext& ctx) {
    ctx.config.require_known_keys(kNoiseVerifyKeys);
    const ExperimentConfig& cfg = ctx.config;
    std::size_t features = cfg.get_count("features", 2);
    std::size_t samples = cfg.get_count("samples", 6);
    std::size_t batch = cfg.get_count("batch", 2);
    std::size_t draws = cfg.get_count("draws", 10000);
    std::uint64_t seed = ctx.seed_override ? ctx.seed : cfg.get_u64("seed", 1);

    NetworkSpec net;
    net.layer_widths = {features, 1};
    net.activations = {Activation::identity};
    net.loss = LossKind::half_quadratic;
    net.l2_lambda = 0.0;
    if (net.param_count() > 200) throw ConfigError("noise-verify caps the model at 200 params");

    Dataset data;
    data.inputs = DenseMatrix(samples, features);
    data.targets.resize(samples);
    RngStream data_rng(seed, 0);
    for (std::size_t i = 0; i < samples; ++i) {
        for (double& v : data.inputs.row(i)) v = data_rng.gaussian(0.0, 1.0);
        data.targets[i] = data_rng.gaussian(0.0, 1.0);
    }
    RngStream theta_rng(seed, 1);
    ParamVector theta = gaussian_init(net, 1.0, theta_rng);

    ensure_dir(ctx.out_dir);
    NoiseCovariance theoretical = noise_cov_theoretical(net, theta, data, batch);
    NoiseCovariance exact = noise_cov_exact(net, theta, data, batch);
    RngStream draw_rng(seed, 2);
    NoiseCovariance empirical = noise_cov_empirical(net, theta, data, batch, draws, draw_rng);
    dump_noise_covariance(theoretical, ctx.out_dir + "/cov_theoretical.csv");
    dump_noise_covariance(exact, ctx.out_dir + "/cov_exact.csv");
    dump_noise_covariance(empirical, ctx.out_dir + "/cov_empirical.csv");

    json report;
    report["P"] = samples;
    report["b"] = batch;
    report["draws"] = draws;
    report["frob_rel_paper_vs_exact"] = frobenius_relative_error(theoretical.matrix, exact.matrix);
    report["frob_rel_empirical_vs_exact"] =
        frobenius_relative_error(empirical.matrix, exact.matrix);

    double batch_count = 1.0;
    for (std::size_t i = 0; i < batch; ++i) {
        batch_count *= static_cast<double>(samples - i) / static_cast<double>(i + 1);
    }
    if (batch_count <= 20000.0) {
        NoiseCovariance exhaustive = noise_cov_exhaustive(net, theta, data, batch);
        dump_noise_covariance(exhaustive, ctx.out_dir + "/cov_exhaustive.csv");
        report["frob_rel_exhaustive_vs_exact"] =
            frobenius_relative_error(exhaustive.matrix, exact.matrix);
        report["exhaustive_batches"] = static_cast<std::size_t>(batch_count + 0.5);
    }

    Spectrum psd_check = symmetric_eigenvalues(exact.matrix);
    report["exact_min_eigenvalue"] = psd_check.eigenvalues.back();
    report["exact_psd"] =
        psd_check.eigenvalues.back() >= -1e-12 * std::max(1.0, psd_check.eigenvalues.front());
    open_out(ctx.out_dir + "/noise_report.json") << report.dump(2) << '\n';
    return 0;
}

namespace {

const std::set<std::string> kSpectrumKeys = {
    "checkpoint", "widths", "activations", "loss", "lambda", "dataset", "cache_train",
    "cache_test", "features", "train_per_class", "test_per_class", "separation", "data_seed",
    "topk"};

json thermo_json(const ThermoReport& report) {
    json out;
    out["u"] = report.u;
    out["h"] = report.h;
    out["s"] = report.s;
    out["log_eigen_sum"] = report.log_eigen_sum;
    out["free_energy"] = report.free_energy;
    out["alpha"] = report.alpha;
    out["trace"] = report.trace;
    out["retained"] = report.retained_count;
    return out;
}

}  // namespace

int cmd_spectrum(const CommandContext& ctx) {
    ctx.config.require_known_keys(kSpectrumKeys);
    const ExperimentConfig& cfg = ctx.config;
    std::string checkpoint = cfg.get_string("checkpoint", "");
    if (checkpoint.empty()) throw ConfigError("spectrum requires checkpoint=path");

    NetworkSpec net = network_from_config(cfg, "40,8,8,1", "sigmoid,relu,sigmoid");
    ParamVector theta;
    try {
        theta = load_checkpoint(checkpoint, net);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("checkpoint mismatch: ") + e.what());
    }
    Dataset train = build_config_dataset(cfg, ctx.seed_override ? ctx.seed : 0, nullptr);

    ensure_dir(ctx.out_dir);
    DenseMatrix h = hessian_fd(net, theta, train);
    Spectrum raw = symmetric_eigenvalues(h);
    Spectrum negmag = clean_spectrum_negmag(raw);
    std::size_t k = cfg.get_count("topk", std::min(train.sample_count(), net.input_dim()));
    Spectrum topk = clean_spectrum_topk(raw, k);
    dump_spectrum_csv(negmag, ctx.out_dir + "/spectrum_negmag.csv");
    dump_spectrum_csv(topk, ctx.out_dir + "/spectrum_topk.csv");

    json out;
    out["checkpoint"] = checkpoint;
    if (!negmag.retained.empty()) out["negmag"] = thermo_json(thermo(net, theta, train, negmag));
    else out["negmag"] = {{"no_minimum", true}};
    if (!topk.retained.empty()) {
        bool positive = true;
        for (std::size_t idx : topk.retained) {
            if (topk.eigenvalues[idx] <= 0.0) positive = false;
        }
        if (positive) out["topk"] = thermo_json(thermo(net, theta, train, topk));
        else out["topk"] = {{"nonpositive_retained", true}};
    }
    open_out(ctx.out_dir + "/thermo.json") << out.dump(2) << '\n';
    return 0;
}

}  // namespace lossland
