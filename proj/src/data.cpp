#include "lossland/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace lossland {

std::vector<RawImageRecord> load_cifar_batch(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_cifar_batch: cannot open " + path);
    is.seekg(0, std::ios::end);
    const std::size_t length = static_cast<std::size_t>(is.tellg());
    is.seekg(0, std::ios::beg);
    if (length % kCifarRecordBytes != 0) {
        std::size_t offset = (length / kCifarRecordBytes) * kCifarRecordBytes;
        throw std::runtime_error("load_cifar_batch: truncated file " + path + " at byte offset " +
                                 std::to_string(offset));
    }
    std::vector<RawImageRecord> records(length / kCifarRecordBytes);
    for (std::size_t r = 0; r < records.size(); ++r) {
        unsigned char label = 0;
        is.read(reinterpret_cast<char*>(&label), 1);
        is.read(reinterpret_cast<char*>(records[r].pixels.data()), 3072);
        if (!is) {
            throw std::runtime_error("load_cifar_batch: read failed at record " +
                                     std::to_string(r));
        }
        if (label >= 10) {
            throw std::runtime_error("load_cifar_batch: invalid label byte at offset " +
                                     std::to_string(r * kCifarRecordBytes));
        }
        records[r].label = label;
    }
    return records;
}

DenseMatrix downsample_kernel_weights() {
    constexpr std::size_t src = 32, dst = 10;
    const double cell = static_cast<double>(src) / static_cast<double>(dst);   // 3.2
    DenseMatrix w(dst, src, 0.0);
    for (std::size_t k = 0; k < dst; ++k) {
        double lo = cell * static_cast<double>(k);
        double hi = lo + cell;
        for (std::size_t j = 0; j < src; ++j) {
            double overlap = std::min(hi, static_cast<double>(j + 1)) -
                             std::max(lo, static_cast<double>(j));
            if (overlap > 0.0) w(k, j) = overlap / cell;
        }
    }
    return w;
}

std::vector<double> downsample_gray(const RawImageRecord& rec) {
    // grayscale in [0,1] by unweighted RGB mean
    std::array<double, 1024> gray;
    for (std::size_t i = 0; i < 1024; ++i) {
        double sum = static_cast<double>(rec.pixels[i]) + static_cast<double>(rec.pixels[1024 + i]) +
                     static_cast<double>(rec.pixels[2048 + i]);
        gray[i] = sum / (3.0 * 255.0);
    }
    static const DenseMatrix kernel = downsample_kernel_weights();
    std::vector<double> out(100, 0.0);
    for (std::size_t r = 0; r < 10; ++r) {
        for (std::size_t c = 0; c < 10; ++c) {
            double acc = 0.0;
            for (std::size_t i = 0; i < 32; ++i) {
                double wr = kernel(r, i);
                if (wr == 0.0) continue;
                double row_acc = 0.0;
                for (std::size_t j = 0; j < 32; ++j) {
                    double wc = kernel(c, j);
                    if (wc == 0.0) continue;
                    row_acc += wc * gray[i * 32 + j];
                }
                acc += wr * row_acc;
            }
            out[r * 10 + c] = acc;
        }
    }
    return out;
}

std::pair<Dataset, Dataset> make_split(const std::vector<RawImageRecord>& records,
                                       const SplitConfig& cfg, RngStream& rng) {
    if (cfg.n_train % 2 != 0 || cfg.n_test % 2 != 0) {
        throw std::invalid_argument("make_split: train/test sizes must be even (balanced split)");
    }
    std::vector<std::size_t> pool_a, pool_b;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (records[i].label == cfg.classes.first) pool_a.push_back(i);
        else if (records[i].label == cfg.classes.second) pool_b.push_back(i);
    }
    const std::size_t per_class_train = cfg.n_train / 2;
    const std::size_t per_class_test = cfg.n_test / 2;
    if (pool_a.size() < per_class_train + per_class_test ||
        pool_b.size() < per_class_train + per_class_test) {
        throw std::invalid_argument("make_split: not enough samples of the requested classes");
    }
    rng.shuffle(pool_a);
    rng.shuffle(pool_b);

    auto build = [&](std::size_t offset, std::size_t per_class) {
        Dataset d;
        d.inputs = DenseMatrix(2 * per_class, 100);
        d.targets.resize(2 * per_class);
        for (std::size_t i = 0; i < per_class; ++i) {
            std::vector<double> fa = downsample_gray(records[pool_a[offset + i]]);
            std::vector<double> fb = downsample_gray(records[pool_b[offset + i]]);
            std::copy(fa.begin(), fa.end(), d.inputs.row(2 * i).begin());
            d.targets[2 * i] = 0.0;
            std::copy(fb.begin(), fb.end(), d.inputs.row(2 * i + 1).begin());
            d.targets[2 * i + 1] = 1.0;
        }
        return d;
    };
    Dataset train = build(0, per_class_train);
    Dataset test = build(per_class_train, per_class_test);
    return {std::move(train), std::move(test)};
}

std::pair<Dataset, Dataset> synthetic_classification(const SyntheticConfig& cfg) {
    if (cfg.separation < 0.0) {
        throw std::invalid_argument("synthetic_classification: separation must be >= 0");
    }
    if (cfg.n_features == 0 || cfg.n_train_per_class == 0 || cfg.n_test_per_class == 0) {
        throw std::invalid_argument("synthetic_classification: counts must be >= 1");
    }
    RngStream rng(cfg.seed, 0);
    std::vector<double> direction(cfg.n_features);
    double norm = 0.0;
    while (norm == 0.0) {
        for (double& v : direction) v = rng.gaussian(0.0, 1.0);
        norm = 0.0;
        for (double v : direction) norm += v * v;
        norm = std::sqrt(norm);
    }
    for (double& v : direction) v /= norm;

    auto build = [&](std::size_t per_class) {
        Dataset d;
        d.inputs = DenseMatrix(2 * per_class, cfg.n_features);
        d.targets.resize(2 * per_class);
        for (std::size_t i = 0; i < 2 * per_class; ++i) {
            double label = static_cast<double>(i % 2);   // interleaved 0,1,0,1,...
            double sign = label == 0.0 ? -1.0 : 1.0;
            auto row = d.inputs.row(i);
            for (std::size_t j = 0; j < cfg.n_features; ++j) {
                row[j] = sign * 0.5 * cfg.separation * direction[j] + rng.gaussian(0.0, 1.0);
            }
            d.targets[i] = label;
        }
        return d;
    };
    Dataset train = build(cfg.n_train_per_class);
    Dataset test = build(cfg.n_test_per_class);
    return {std::move(train), std::move(test)};
}

namespace {

constexpr char kCacheMagic[4] = {'L', 'L', 'D', 'S'};
constexpr std::uint32_t kCacheVersion = 1;

template <typename T>
void write_le(std::ostream& os, T value) {
    unsigned char b[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        b[i] = static_cast<unsigned char>((value >> (8 * i)) & 0xFF);
    }
    os.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
    unsigned char b[sizeof(T)];
    is.read(reinterpret_cast<char*>(b), sizeof(T));
    if (!is) throw std::runtime_error("dataset cache: truncated header");
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(b[i]) << (8 * i);
    return v;
}

}  // namespace

void save_dataset_cache(const std::string& path, const Dataset& data) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("save_dataset_cache: cannot open " + path);
    os.write(kCacheMagic, 4);
    write_le<std::uint32_t>(os, kCacheVersion);
    write_le<std::uint64_t>(os, data.sample_count());
    write_le<std::uint64_t>(os, data.feature_count());
    for (std::size_t i = 0; i < data.sample_count(); ++i) {
        for (double v : data.inputs.row(i)) {
            std::uint64_t bits;
            std::memcpy(&bits, &v, 8);
            write_le<std::uint64_t>(os, bits);
        }
    }
    for (double t : data.targets) {
        unsigned char label = static_cast<unsigned char>(t);
        os.write(reinterpret_cast<const char*>(&label), 1);
    }
    if (!os) throw std::runtime_error("save_dataset_cache: write failed for " + path);
}

Dataset load_dataset_cache(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_dataset_cache: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kCacheMagic, 4) != 0) {
        throw std::runtime_error("load_dataset_cache: bad magic in " + path);
    }
    if (read_le<std::uint32_t>(is) != kCacheVersion) {
        throw std::runtime_error("load_dataset_cache: unsupported version");
    }
    std::uint64_t samples = read_le<std::uint64_t>(is);
    std::uint64_t features = read_le<std::uint64_t>(is);
    Dataset d;
    d.inputs = DenseMatrix(samples, features);
    d.targets.resize(samples);
    for (std::uint64_t i = 0; i < samples; ++i) {
        for (double& v : d.inputs.row(i)) {
            std::uint64_t bits = read_le<std::uint64_t>(is);
            std::memcpy(&v, &bits, 8);
        }
    }
    for (double& t : d.targets) {
        unsigned char label = 0;
        is.read(reinterpret_cast<char*>(&label), 1);
        if (!is) throw std::runtime_error("load_dataset_cache: truncated labels");
        t = static_cast<double>(label);
    }
    return d;
}

}  // namespace lossland
