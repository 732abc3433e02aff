#ifndef LOSSLAND_DATA_HPP
#define LOSSLAND_DATA_HPP

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lossland/model.hpp"
#include "lossland/numerics.hpp"

namespace lossland {

// One record of the CIFAR-10 binary layout: a label byte followed by
// 32x32x3 pixel bytes in plane order R, G, B (row-major planes).
struct RawImageRecord {
    std::uint8_t label = 0;
    std::array<std::uint8_t, 3072> pixels{};
};

inline constexpr std::size_t kCifarRecordBytes = 3073;

struct SplitConfig {
    std::pair<std::uint8_t, std::uint8_t> classes{0, 1};   // airplane, automobile
    std::size_t n_train = 500;
    std::size_t n_test = 2000;
    std::uint64_t seed = 0;
};

// Parses one CIFAR-10 batch file. Throws with the byte offset on truncation
// or an invalid label byte.
std::vector<RawImageRecord> load_cifar_batch(const std::string& path);

// Grayscale (plain RGB mean, scaled to [0,1]) then 32 -> 10 by area-weighted
// box averaging with fractional edge weights. Returns 100 features.
std::vector<double> downsample_gray(const RawImageRecord& rec);

// The 10 x 32 one-dimensional resampling weights (each row sums to 1); the
// 2-D kernel is their outer product.
DenseMatrix downsample_kernel_weights();

// Filters to the two configured classes, relabels them 0/1, shuffles with
// the stream, and takes disjoint balanced train/test sets.
std::pair<Dataset, Dataset> make_split(const std::vector<RawImageRecord>& records,
                                       const SplitConfig& cfg, RngStream& rng);

struct SyntheticConfig {
    std::size_t n_features = 40;
    std::size_t n_train_per_class = 100;
    std::size_t n_test_per_class = 1000;
    double separation = 0.0;       // distance between the two blob centers
    std::uint64_t seed = 0;
};

// Two unit-variance Gaussian blobs at +-(separation/2) along a random unit
// direction; labels 0/1. Offline stand-in for the image task.
std::pair<Dataset, Dataset> synthetic_classification(const SyntheticConfig& cfg);

// Processed dataset cache: little-endian binary with a (magic, version,
// sample count, feature count) header, then real64 features row-major and
// one label byte per sample.
void save_dataset_cache(const std::string& path, const Dataset& data);
Dataset load_dataset_cache(const std::string& path);

}  // namespace lossland

#endif
