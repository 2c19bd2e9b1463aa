#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "rdcfa/error.hpp"
#include "rdcfa/tensor.hpp"

namespace rdcfa {

/// Multiscale activations of one image, one map per tap level.
struct FeatureMapSet {
    std::vector<Tensor3> maps;
    std::vector<std::size_t> strides;

    void validate() const {
        if (maps.empty()) throw ShapeError("feature map set is empty");
        if (strides.size() != maps.size()) throw ShapeError("feature map set: one stride per map required");
        for (std::size_t i = 0; i < maps.size(); ++i) {
            if (maps[i].channels() == 0) throw ShapeError("feature map set: tap with zero channels");
            if (i > 0 && (maps[i].height() > maps[i - 1].height() || maps[i].width() > maps[i - 1].width()))
                throw ShapeError("feature map set: spatial size must be non-increasing with level");
        }
    }
};

/// Concatenated patch features F of one image. Column t = y * width + x holds
/// the D-dimensional feature of patch t.
struct PatchFeatureMap {
    Matrix data;  // D x T
    std::size_t height = 0;
    std::size_t width = 0;

    std::size_t dim() const { return static_cast<std::size_t>(data.rows()); }
    std::size_t patches() const { return height * width; }
};

/// Bilinearly resizes every tap to the largest tap's grid and stacks channels.
inline PatchFeatureMap assemble_patch_features(const FeatureMapSet& set) {
    if (set.maps.empty()) throw ShapeError("assemble_patch_features: no feature maps");
    set.validate();
    const std::size_t h = set.maps.front().height();
    const std::size_t w = set.maps.front().width();
    std::size_t total = 0;
    for (const auto& m : set.maps) total += m.channels();

    PatchFeatureMap out;
    out.height = h;
    out.width = w;
    out.data.resize(static_cast<Eigen::Index>(total), static_cast<Eigen::Index>(h * w));
    Eigen::Index row = 0;
    for (const auto& m : set.maps) {
        for (std::size_t c = 0; c < m.channels(); ++c, ++row) {
            const auto plane = resize_bilinear(m.channel(c), m.height(), m.width(), h, w);
            for (std::size_t t = 0; t < plane.size(); ++t) out.data(row, static_cast<Eigen::Index>(t)) = plane[t];
        }
    }
    if (!out.data.allFinite()) throw NumericError("assemble_patch_features: non-finite patch feature");
    return out;
}

/// 2-D convolution lowered to a GEMM over an im2col buffer.
struct Conv2d {
    using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::size_t kernel = 1;
    std::size_t stride = 1;
    std::size_t padding = 0;
    RowMatrix weight;  // out x (in * kernel * kernel), [o][c][ky][kx]
    Vector bias;

    Conv2d() = default;
    Conv2d(std::size_t in, std::size_t out, std::size_t k, std::size_t s, std::size_t p)
        : in_channels(in), out_channels(out), kernel(k), stride(s), padding(p),
          weight(RowMatrix::Zero(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in * k * k))),
          bias(Vector::Zero(static_cast<Eigen::Index>(out))) {}

    std::size_t output_size(std::size_t in) const {
        if (in + 2 * padding < kernel) throw ShapeError("conv2d: input smaller than kernel");
        return (in + 2 * padding - kernel) / stride + 1;
    }

    Tensor3 forward(const Tensor3& x) const {
        if (x.channels() != in_channels)
            throw ShapeError("conv2d: expected " + std::to_string(in_channels) + " channels, got " +
                             std::to_string(x.channels()));
        const std::size_t oh = output_size(x.height());
        const std::size_t ow = output_size(x.width());
        const auto positions = static_cast<Eigen::Index>(oh * ow);
        Tensor3 y(out_channels, oh, ow);
        Eigen::Map<RowMatrix> out(y.data().data(), static_cast<Eigen::Index>(out_channels), positions);

        if (kernel == 1 && stride == 1 && padding == 0) {
            Eigen::Map<const RowMatrix> in(x.data().data(), static_cast<Eigen::Index>(in_channels), positions);
            out.noalias() = weight * in;
        } else {
            RowMatrix cols = RowMatrix::Zero(static_cast<Eigen::Index>(in_channels * kernel * kernel), positions);
            const auto h = static_cast<std::ptrdiff_t>(x.height());
            const auto w = static_cast<std::ptrdiff_t>(x.width());
            for (std::size_t c = 0; c < in_channels; ++c) {
                for (std::size_t ky = 0; ky < kernel; ++ky) {
                    for (std::size_t kx = 0; kx < kernel; ++kx) {
                        const auto r = static_cast<Eigen::Index>((c * kernel + ky) * kernel + kx);
                        double* dst = cols.row(r).data();
                        for (std::size_t oy = 0; oy < oh; ++oy) {
                            const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                            static_cast<std::ptrdiff_t>(padding);
                            if (iy < 0 || iy >= h) continue;
                            for (std::size_t ox = 0; ox < ow; ++ox) {
                                const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                                static_cast<std::ptrdiff_t>(padding);
                                if (ix < 0 || ix >= w) continue;
                                dst[oy * ow + ox] = x(c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
                            }
                        }
                    }
                }
            }
            out.noalias() = weight * cols;
        }
        out.colwise() += bias;
        return y;
    }
};

/// 64-bit FNV-1a over raw bytes; used to fingerprint frozen weights.
inline std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t h = 1469598103934665603ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::uint64_t fingerprint(const Conv2d& conv, std::uint64_t h) {
    h = fnv1a(conv.weight.data(), sizeof(double) * static_cast<std::size_t>(conv.weight.size()), h);
    return fnv1a(conv.bias.data(), sizeof(double) * static_cast<std::size_t>(conv.bias.size()), h);
}

/// Frozen multiscale feature extractor. Implementations are immutable after
/// construction, so extract() may be called concurrently.
class Backbone {
public:
    virtual ~Backbone() = default;
    virtual std::string name() const = 0;
    virtual std::vector<std::size_t> strides() const = 0;
    virtual std::vector<std::size_t> channels() const = 0;
    virtual FeatureMapSet extract(const Tensor3& image) const = 0;
    virtual std::uint64_t fingerprint() const = 0;

    std::size_t patch_dim() const {
        std::size_t d = 0;
        for (auto c : channels()) d += c;
        return d;
    }
};

inline FeatureMapSet extract_multiscale(const Tensor3& image, const Backbone& backbone) {
    if (image.channels() != 3) throw ShapeError("extract_multiscale: expected a 3-channel image, got " + image.shape_string());
    std::size_t largest = 1;
    for (auto s : backbone.strides()) largest = std::max(largest, s);
    if (image.height() % largest != 0 || image.width() % largest != 0)
        throw ShapeError("extract_multiscale: image size " + std::to_string(image.height()) + "x" +
                         std::to_string(image.width()) + " is not divisible by the largest stride " +
                         std::to_string(largest));
    auto set = backbone.extract(image);
    set.validate();
    for (const auto& m : set.maps)
        if (!m.all_finite()) throw NumericError("extract_multiscale: backbone produced non-finite activations");
    return set;
}

/// Three seeded random convolutions with tanh, taps at strides 4/8/16 with
/// 8/16/32 channels. Stands in for a pretrained network in tests.
class TinyBackbone final : public Backbone {
public:
    explicit TinyBackbone(std::uint64_t seed = 0) : seed_(seed) {
        std::mt19937_64 rng(seed);
        layers_[0] = Conv2d(3, 8, 6, 4, 1);
        layers_[1] = Conv2d(8, 16, 3, 2, 1);
        layers_[2] = Conv2d(16, 32, 3, 2, 1);
        for (auto& layer : layers_) {
            const double fan_in = static_cast<double>(layer.weight.cols());
            std::normal_distribution<double> w(0.0, 1.0 / std::sqrt(fan_in));
            std::normal_distribution<double> b(0.0, 0.1);
            for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = w(rng);
            for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias[i] = b(rng);
        }
    }

    std::string name() const override { return "tiny"; }
    std::vector<std::size_t> strides() const override { return {4, 8, 16}; }
    std::vector<std::size_t> channels() const override { return {8, 16, 32}; }
    std::uint64_t seed() const { return seed_; }

    FeatureMapSet extract(const Tensor3& image) const override {
        FeatureMapSet set;
        set.strides = strides();
        Tensor3 x = image;
        for (const auto& layer : layers_) {
            x = layer.forward(x);
            for (auto& v : x.data()) v = std::tanh(v);
            set.maps.push_back(x);
        }
        return set;
    }

    std::uint64_t fingerprint() const override {
        std::uint64_t h = 1469598103934665603ULL;
        for (const auto& layer : layers_) h = rdcfa::fingerprint(layer, h);
        return h;
    }

private:
    std::uint64_t seed_;
    std::array<Conv2d, 3> layers_;
};

/// Per-channel (x - mean) / std normalization of an RGB image in [0, 1].
inline void normalize_image(Tensor3& image, const std::array<double, 3>& mean, const std::array<double, 3>& stddev) {
    if (image.channels() != 3) throw ShapeError("normalize_image: expected 3 channels");
    for (std::size_t c = 0; c < 3; ++c)
        for (auto& v : image.channel(c)) v = (v - mean[c]) / stddev[c];
}

}  // namespace rdcfa
