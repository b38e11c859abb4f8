#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fatsim/autodiff/tensor.hpp"
#include "fatsim/error.hpp"
#include "fatsim/rng.hpp"

namespace fatsim::data {

/// Images [n, C, H, W] with values in [0,1]; labels in [0, classes).
struct Dataset {
    ad::Tensor images;
    std::vector<int> labels;
    std::size_t classes = 10;

    std::size_t size() const { return labels.size(); }
    ad::Shape sample_shape() const { return ad::Shape(images.shape.begin() + 1, images.shape.end()); }
    std::size_t sample_numel() const { return images.numel() / std::max<std::size_t>(1, size()); }
};

struct Batch {
    ad::Tensor x;
    std::vector<int> y;
};

inline Batch gather(const Dataset& ds, std::span<const std::size_t> indices) {
    if (indices.empty()) throw DatasetError("gather: empty index list");
    const std::size_t stride = ds.sample_numel();
    ad::Shape shape = ds.images.shape;
    shape[0] = indices.size();
    Batch b{ad::Tensor(shape), std::vector<int>(indices.size())};
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const std::size_t idx = indices[i];
        if (idx >= ds.size()) throw DatasetError("gather: index " + std::to_string(idx) + " out of range");
        std::copy_n(ds.images.data.begin() + static_cast<std::ptrdiff_t>(idx * stride), stride,
                    b.x.data.begin() + static_cast<std::ptrdiff_t>(i * stride));
        b.y[i] = ds.labels[idx];
    }
    return b;
}

inline Dataset select(const Dataset& ds, std::span<const std::size_t> indices) {
    auto b = gather(ds, indices);
    return Dataset{std::move(b.x), std::move(b.y), ds.classes};
}

/// First `k` samples after a seeded shuffle; k == 0 or k >= size keeps everything (shuffled).
inline Dataset subset(const Dataset& ds, std::size_t k, std::uint64_t seed) {
    std::vector<std::size_t> idx(ds.size());
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    if (k != 0 && k < idx.size()) idx.resize(k);
    return select(ds, idx);
}

namespace detail {

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DatasetError("idx: cannot open " + path.string());
    return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

inline std::uint32_t be32(const std::string& bytes, std::size_t off) {
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + off;
    return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | std::uint32_t{p[3]};
}

inline std::string hex32(std::uint32_t v) {
    char buf[11];
    std::snprintf(buf, sizeof buf, "0x%08x", v);
    return buf;
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// Parses an IDX image file (u8, 3 dims) and its label file (u8, 1 dim). Pixels are divided by 255.
inline Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                        std::size_t classes = 10) {
    const auto img = detail::read_file(images_path);
    const auto lab = detail::read_file(labels_path);
    if (img.size() < 16) throw DatasetError("idx: truncated image header in " + images_path.string());
    if (lab.size() < 8) throw DatasetError("idx: truncated label header in " + labels_path.string());
    if (auto m = detail::be32(img, 0); m != kIdxImagesMagic)
        throw DatasetError("idx: bad magic " + detail::hex32(m) + " in " + images_path.string() + ", expected " +
                           detail::hex32(kIdxImagesMagic));
    if (auto m = detail::be32(lab, 0); m != kIdxLabelsMagic)
        throw DatasetError("idx: bad magic " + detail::hex32(m) + " in " + labels_path.string() + ", expected " +
                           detail::hex32(kIdxLabelsMagic));
    const std::size_t n = detail::be32(img, 4), rows = detail::be32(img, 8), cols = detail::be32(img, 12);
    const std::size_t nl = detail::be32(lab, 4);
    if (n != nl)
        throw DatasetError("idx: count mismatch, " + std::to_string(n) + " images vs " + std::to_string(nl) + " labels");
    if (n == 0 || rows == 0 || cols == 0) throw DatasetError("idx: empty dataset in " + images_path.string());
    if (img.size() != 16 + n * rows * cols) throw DatasetError("idx: truncated image data in " + images_path.string());
    if (lab.size() != 8 + n) throw DatasetError("idx: truncated label data in " + labels_path.string());

    Dataset ds{ad::Tensor({n, 1, rows, cols}), std::vector<int>(n), classes};
    const auto* px = reinterpret_cast<const unsigned char*>(img.data()) + 16;
    for (std::size_t i = 0; i < n * rows * cols; ++i) ds.images.data[i] = static_cast<float>(px[i]) / 255.0f;
    const auto* lb = reinterpret_cast<const unsigned char*>(lab.data()) + 8;
    for (std::size_t i = 0; i < n; ++i) {
        if (lb[i] >= classes)
            throw DatasetError("idx: label " + std::to_string(lb[i]) + " at index " + std::to_string(i) + " outside [0," +
                               std::to_string(classes) + ")");
        ds.labels[i] = lb[i];
    }
    return ds;
}

struct TrainTest {
    Dataset train;
    Dataset test;
};

/// Loads the four standard MNIST-layout files from `dir`.
inline TrainTest load_idx_dir(const std::filesystem::path& dir) {
    const char* names[] = {"train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte",
                           "t10k-labels-idx1-ubyte"};
    for (const char* name : names)
        if (!std::filesystem::exists(dir / name)) throw DatasetError("dataset: missing " + (dir / name).string());
    return {load_idx(dir / names[0], dir / names[1]), load_idx(dir / names[2], dir / names[3])};
}

/// Gaussian blobs around random centroids in [0.2, 0.8]^dim, clipped to [0,1].
/// Images are shaped [n, 1, 1, dim]; samples are grouped by class.
inline Dataset synthetic_blobs(std::size_t n_classes, std::size_t n_per_class, std::size_t dim, std::uint64_t seed,
                               float spread = 0.05f) {
    if (n_classes < 2 || n_per_class == 0 || dim == 0)
        throw ConfigError("synthetic_blobs: need >= 2 classes, >= 1 sample per class and dim >= 1");
    if (!(spread >= 0.0f)) throw ConfigError("synthetic_blobs: spread must be non-negative");
    Rng rng(seed);
    std::vector<float> centroids(n_classes * dim);
    for (auto& c : centroids) c = 0.2f + 0.6f * uniform01(rng);
    std::normal_distribution<float> noise(0.0f, 1.0f);
    const std::size_t n = n_classes * n_per_class;
    Dataset ds{ad::Tensor({n, 1, 1, dim}), std::vector<int>(n), n_classes};
    for (std::size_t k = 0; k < n_classes; ++k)
        for (std::size_t i = 0; i < n_per_class; ++i) {
            const std::size_t s = k * n_per_class + i;
            ds.labels[s] = static_cast<int>(k);
            for (std::size_t d = 0; d < dim; ++d) {
                const float z = spread > 0.0f ? noise(rng) : 0.0f;
                ds.images.data[s * dim + d] = std::clamp(centroids[k * dim + d] + spread * z, 0.0f, 1.0f);
            }
        }
    return ds;
}

}  // namespace fatsim::data
