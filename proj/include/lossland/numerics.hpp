#ifndef LOSSLAND_NUMERICS_HPP
#define LOSSLAND_NUMERICS_HPP

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace lossland {

// Row-major dense matrix of doubles. The one matrix type shared by every
// module; entries are expected to stay finite (ops that care validate).
class DenseMatrix {
public:
    DenseMatrix() = default;
    DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {
        if (rows == 0 || cols == 0) {
            throw std::invalid_argument("DenseMatrix: rows and cols must be >= 1");
        }
    }

    static DenseMatrix identity(std::size_t n);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
    std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }

    DenseMatrix transposed() const;
    double trace() const;
    double frobenius_norm() const;
    double max_abs() const;
    bool all_finite() const;

    DenseMatrix& operator+=(const DenseMatrix& other);
    DenseMatrix& operator-=(const DenseMatrix& other);
    DenseMatrix& operator*=(double scalar);

    friend DenseMatrix operator+(DenseMatrix a, const DenseMatrix& b) { return a += b; }
    friend DenseMatrix operator-(DenseMatrix a, const DenseMatrix& b) { return a -= b; }
    friend DenseMatrix operator*(DenseMatrix a, double s) { return a *= s; }
    friend DenseMatrix operator*(double s, DenseMatrix a) { return a *= s; }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);

// Solves a * x = b by Gaussian elimination with partial pivoting. Square,
// well-conditioned systems only (used for small covariance solves).
std::vector<double> solve_linear(DenseMatrix a, std::vector<double> b);

// Eigenvalues of a symmetric matrix plus the cleaning metadata filled in by
// the spectrum-cleaning rules. `retained` holds indices into `eigenvalues`.
struct Spectrum {
    std::vector<double> eigenvalues;   // sorted descending
    double threshold = 0.0;
    std::vector<std::size_t> retained;
};

// All eigenvalues of (m + m^T)/2, sorted descending. Cyclic Jacobi rotations,
// off-diagonal Frobenius tolerance 1e-12 relative to ||m||_F, at most 100
// sweeps; rotations are not accumulated (no eigenvectors anywhere in this
// project). Throws on non-square input, non-finite entries, or when the
// asymmetry exceeds 1e-8 * max|m| (callers symmetrize first).
Spectrum symmetric_eigenvalues(const DenseMatrix& m);

// Pearson correlation coefficient. Returns nullopt when either input has
// zero variance (undefined correlation, never a silent zero).
std::optional<double> pearson(std::span<const double> a, std::span<const double> b);

// Spearman rank correlation (midranks for ties); same undefined-result rule.
std::optional<double> spearman(std::span<const double> a, std::span<const double> b);

struct LinearFit {
    double slope = 0.0;
    double intercept = 0.0;
};

// Ordinary least-squares line through (x, y). Throws on degenerate x.
LinearFit linear_fit(std::span<const double> x, std::span<const double> y);

double mean(std::span<const double> values);
double sample_std(std::span<const double> values);

// One-sided Mann-Whitney rank-sum p-value for the alternative "a tends to be
// larger than b". Normal approximation with tie-corrected variance and a
// continuity correction; adequate for the group sizes used here (>= ~10).
double mann_whitney_one_sided_p(std::span<const double> a, std::span<const double> b);

// Deterministic seeded random stream. One stream per run, never shared.
//
// State setup and update rules, so any implementation can reproduce the
// streams bit for bit:
//   SplitMix64 step:  state += 0x9E3779B97F4A7C15;
//                     z = state;
//                     z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9;
//                     z = (z ^ (z >> 27)) * 0x94D049BB133111EB;
//                     output z ^ (z >> 31)
//   Seeding: a = first SplitMix64 output from state `seed`,
//            b = first SplitMix64 output from state `stream_id`,
//            run SplitMix64 from state (a ^ rotl(b, 32)) to draw the four
//            xoshiro256++ state words (if all four are zero, s[0] := 1).
//   xoshiro256++ step: result = rotl(s0 + s3, 23) + s0;
//                      t = s1 << 17; s2 ^= s0; s3 ^= s1; s1 ^= s2; s0 ^= s3;
//                      s2 ^= t; s3 = rotl(s3, 45)
//   uniform01: next_u64() >> 11, times 2^-53   (in [0, 1))
//   gaussian:  Box-Muller pair from two uniforms, second value cached;
//              stddev == 0 returns the mean without consuming the stream.
class RngStream {
public:
    RngStream(std::uint64_t seed, std::uint64_t stream_id);

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream_id() const { return stream_id_; }

    std::uint64_t next_u64();
    double uniform01();
    double uniform(double lo, double hi);
    std::uint64_t uniform_below(std::uint64_t n);   // unbiased, rejection sampled
    double gaussian(double mean, double stddev);

    // Fisher-Yates shuffle driven by uniform_below.
    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    std::uint64_t seed_ = 0;
    std::uint64_t stream_id_ = 0;
    std::uint64_t s_[4] = {0, 0, 0, 0};
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace lossland

#endif
