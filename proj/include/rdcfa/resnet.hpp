#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "rdcfa/backbone.hpp"
#include "rdcfa/error.hpp"

namespace rdcfa {

/// Named float32 tensors in a flat binary file:
///   "RDCFAW01" | u32 count | { u32 name_len | name | u32 ndim | u64 dims[ndim] | f32 data[] }*
/// Little-endian. Names follow the torchvision state_dict keys.
class WeightArchive {
public:
    struct Entry {
        std::vector<std::uint64_t> dims;
        std::vector<float> values;
    };

    static constexpr char kMagic[8] = {'R', 'D', 'C', 'F', 'A', 'W', '0', '1'};

    void put(const std::string& name, std::vector<std::uint64_t> dims, std::vector<float> values) {
        std::uint64_t n = 1;
        for (auto d : dims) n *= d;
        if (n != values.size()) throw ShapeError("weight archive: '" + name + "' value count does not match dims");
        entries_[name] = Entry{std::move(dims), std::move(values)};
    }

    const Entry& get(const std::string& name) const {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw ShapeError("weight archive: missing tensor '" + name + "'");
        return it->second;
    }

    const Entry& get(const std::string& name, std::vector<std::uint64_t> expected_dims) const {
        const auto& e = get(name);
        if (e.dims != expected_dims) throw ShapeError("weight archive: tensor '" + name + "' has unexpected shape");
        return e;
    }

    bool contains(const std::string& name) const { return entries_.count(name) != 0; }
    std::size_t size() const { return entries_.size(); }

    void save(const std::filesystem::path& path) const {
        std::ofstream os(path, std::ios::binary);
        if (!os) throw MissingError("cannot write weight archive " + path.string());
        os.write(kMagic, sizeof(kMagic));
        write_u32(os, static_cast<std::uint32_t>(entries_.size()));
        for (const auto& [name, e] : entries_) {
            write_u32(os, static_cast<std::uint32_t>(name.size()));
            os.write(name.data(), static_cast<std::streamsize>(name.size()));
            write_u32(os, static_cast<std::uint32_t>(e.dims.size()));
            for (auto d : e.dims) os.write(reinterpret_cast<const char*>(&d), sizeof(d));
            os.write(reinterpret_cast<const char*>(e.values.data()),
                     static_cast<std::streamsize>(e.values.size() * sizeof(float)));
        }
    }

    static WeightArchive load(const std::filesystem::path& path) {
        std::ifstream is(path, std::ios::binary);
        if (!is) throw MissingError("weight archive not found: " + path.string());
        char magic[8];
        is.read(magic, sizeof(magic));
        if (!is || std::string(magic, 8) != std::string(kMagic, 8))
            throw ShapeError("not a weight archive (bad magic): " + path.string());
        WeightArchive archive;
        const auto count = read_u32(is);
        for (std::uint32_t i = 0; i < count; ++i) {
            std::string name(read_u32(is), '\0');
            is.read(name.data(), static_cast<std::streamsize>(name.size()));
            std::vector<std::uint64_t> dims(read_u32(is));
            std::uint64_t n = 1;
            for (auto& d : dims) {
                is.read(reinterpret_cast<char*>(&d), sizeof(d));
                n *= d;
            }
            std::vector<float> values(n);
            is.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(n * sizeof(float)));
            if (!is) throw ShapeError("weight archive truncated at tensor '" + name + "'");
            archive.entries_[name] = Entry{std::move(dims), std::move(values)};
        }
        return archive;
    }

private:
    static void write_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof(v)); }
    static std::uint32_t read_u32(std::istream& is) {
        std::uint32_t v = 0;
        is.read(reinterpret_cast<char*>(&v), sizeof(v));
        if (!is) throw ShapeError("weight archive truncated");
        return v;
    }

    std::map<std::string, Entry> entries_;
};

/// Wide-ResNet50-2 trunk up to layer3, eval-mode batch norm folded into the
/// convolutions. Taps: layer1 (C2, 256 ch, stride 4), layer2 (C3, 512 ch,
/// stride 8), layer3 (C4, 1024 ch, stride 16).
class WideResNet50 final : public Backbone {
public:
    struct LayerSpec {
        std::size_t blocks;
        std::size_t planes;
        std::size_t stride;
    };
    static constexpr std::array<LayerSpec, 3> kLayers{{{3, 64, 1}, {4, 128, 2}, {6, 256, 2}}};
    static constexpr std::size_t kWidthFactor = 2;
    static constexpr std::size_t kExpansion = 4;
    static constexpr double kBnEps = 1e-5;

    explicit WideResNet50(const WeightArchive& archive) {
        stem_ = load_conv_bn(archive, "conv1", "bn1", 3, 64, 7, 2, 3);
        std::size_t in = 64;
        for (std::size_t li = 0; li < kLayers.size(); ++li) {
            const auto& spec = kLayers[li];
            const std::size_t width = spec.planes * kWidthFactor;
            const std::size_t out = spec.planes * kExpansion;
            std::vector<Block> blocks;
            for (std::size_t b = 0; b < spec.blocks; ++b) {
                const std::string p = "layer" + std::to_string(li + 1) + "." + std::to_string(b) + ".";
                const std::size_t stride = b == 0 ? spec.stride : 1;
                Block block;
                block.conv1 = load_conv_bn(archive, p + "conv1", p + "bn1", in, width, 1, 1, 0);
                block.conv2 = load_conv_bn(archive, p + "conv2", p + "bn2", width, width, 3, stride, 1);
                block.conv3 = load_conv_bn(archive, p + "conv3", p + "bn3", width, out, 1, 1, 0);
                if (b == 0)
                    block.downsample = load_conv_bn(archive, p + "downsample.0", p + "downsample.1", in, out, 1, stride, 0);
                blocks.push_back(std::move(block));
                in = out;
            }
            layers_.push_back(std::move(blocks));
        }
        fingerprint_ = compute_fingerprint();
    }

    std::string name() const override { return "wide_resnet50_2"; }
    std::vector<std::size_t> strides() const override { return {4, 8, 16}; }
    std::vector<std::size_t> channels() const override { return {256, 512, 1024}; }
    std::uint64_t fingerprint() const override { return fingerprint_; }

    FeatureMapSet extract(const Tensor3& image) const override {
        FeatureMapSet set;
        set.strides = strides();
        Tensor3 x = relu(stem_.forward(image));
        x = max_pool_3x3_s2(x);
        for (const auto& layer : layers_) {
            for (const auto& block : layer) x = block.forward(x);
            set.maps.push_back(x);
        }
        return set;
    }

    /// Archive with He-initialized weights and identity batch norm; exercises
    /// the architecture without pretrained weights.
    static WeightArchive random_archive(std::uint64_t seed) {
        WeightArchive archive;
        std::mt19937_64 rng(seed);
        auto conv = [&](const std::string& name, std::size_t in, std::size_t out, std::size_t k) {
            std::normal_distribution<float> dist(0.0f, std::sqrt(2.0f / static_cast<float>(in * k * k)));
            std::vector<float> w(out * in * k * k);
            for (auto& v : w) v = dist(rng);
            archive.put(name + ".weight", {out, in, k, k}, std::move(w));
        };
        auto bn = [&](const std::string& name, std::size_t c, float gamma) {
            archive.put(name + ".weight", {c}, std::vector<float>(c, gamma));
            archive.put(name + ".bias", {c}, std::vector<float>(c, 0.0f));
            archive.put(name + ".running_mean", {c}, std::vector<float>(c, 0.0f));
            archive.put(name + ".running_var", {c}, std::vector<float>(c, 1.0f));
        };
        conv("conv1", 3, 64, 7);
        bn("bn1", 64, 1.0f);
        std::size_t in = 64;
        for (std::size_t li = 0; li < kLayers.size(); ++li) {
            const auto& spec = kLayers[li];
            const std::size_t width = spec.planes * kWidthFactor;
            const std::size_t out = spec.planes * kExpansion;
            for (std::size_t b = 0; b < spec.blocks; ++b) {
                const std::string p = "layer" + std::to_string(li + 1) + "." + std::to_string(b) + ".";
                conv(p + "conv1", in, width, 1);
                bn(p + "bn1", width, 1.0f);
                conv(p + "conv2", width, width, 3);
                bn(p + "bn2", width, 1.0f);
                conv(p + "conv3", width, out, 1);
                bn(p + "bn3", out, 0.2f);
                if (b == 0) {
                    conv(p + "downsample.0", in, out, 1);
                    bn(p + "downsample.1", out, 1.0f);
                }
                in = out;
            }
        }
        return archive;
    }

private:
    struct Block {
        Conv2d conv1, conv2, conv3;
        std::optional<Conv2d> downsample;

        Tensor3 forward(const Tensor3& x) const {
            Tensor3 y = relu(conv1.forward(x));
            y = relu(conv2.forward(y));
            y = conv3.forward(y);
            const Tensor3 identity = downsample ? downsample->forward(x) : x;
            for (std::size_t i = 0; i < y.size(); ++i) y.data()[i] += identity.data()[i];
            return relu(std::move(y));
        }
    };

    static Tensor3 relu(Tensor3 x) {
        for (auto& v : x.data()) v = v > 0.0 ? v : 0.0;
        return x;
    }

    static Tensor3 max_pool_3x3_s2(const Tensor3& x) {
        const std::size_t oh = (x.height() + 2 - 3) / 2 + 1;
        const std::size_t ow = (x.width() + 2 - 3) / 2 + 1;
        Tensor3 y(x.channels(), oh, ow, -std::numeric_limits<double>::infinity());
        for (std::size_t c = 0; c < x.channels(); ++c)
            for (std::size_t oy = 0; oy < oh; ++oy)
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    double best = -std::numeric_limits<double>::infinity();
                    for (std::size_t ky = 0; ky < 3; ++ky)
                        for (std::size_t kx = 0; kx < 3; ++kx) {
                            const auto iy = static_cast<std::ptrdiff_t>(oy * 2 + ky) - 1;
                            const auto ix = static_cast<std::ptrdiff_t>(ox * 2 + kx) - 1;
                            if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(x.height()) ||
                                ix >= static_cast<std::ptrdiff_t>(x.width()))
                                continue;
                            best = std::max(best, x(c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)));
                        }
                    y(c, oy, ox) = best;
                }
        return y;
    }

    static Conv2d load_conv_bn(const WeightArchive& archive, const std::string& conv_name, const std::string& bn_name,
                               std::size_t in, std::size_t out, std::size_t k, std::size_t stride, std::size_t pad) {
        Conv2d conv(in, out, k, stride, pad);
        const auto& w = archive.get(conv_name + ".weight", {out, in, k, k});
        const auto& gamma = archive.get(bn_name + ".weight", {out});
        const auto& beta = archive.get(bn_name + ".bias", {out});
        const auto& mean = archive.get(bn_name + ".running_mean", {out});
        const auto& var = archive.get(bn_name + ".running_var", {out});
        const std::size_t row = in * k * k;
        for (std::size_t o = 0; o < out; ++o) {
            const double scale = gamma.values[o] / std::sqrt(static_cast<double>(var.values[o]) + kBnEps);
            for (std::size_t j = 0; j < row; ++j)
                conv.weight(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(j)) = w.values[o * row + j] * scale;
            conv.bias[static_cast<Eigen::Index>(o)] = beta.values[o] - mean.values[o] * scale;
        }
        return conv;
    }

    std::uint64_t compute_fingerprint() const {
        std::uint64_t h = rdcfa::fingerprint(stem_, 1469598103934665603ULL);
        for (const auto& layer : layers_)
            for (const auto& b : layer) {
                h = rdcfa::fingerprint(b.conv1, h);
                h = rdcfa::fingerprint(b.conv2, h);
                h = rdcfa::fingerprint(b.conv3, h);
                if (b.downsample) h = rdcfa::fingerprint(*b.downsample, h);
            }
        return h;
    }

    Conv2d stem_;
    std::vector<std::vector<Block>> layers_;
    std::uint64_t fingerprint_ = 0;
};

/// Environment variable naming the directory holding pretrained weight archives.
inline constexpr const char* kBackboneCacheEnv = "RDCFA_BACKBONE_CACHE";

inline std::filesystem::path backbone_cache_dir(const std::string& configured = {}) {
    if (!configured.empty()) return configured;
    if (const char* env = std::getenv(kBackboneCacheEnv); env && *env) return env;
    if (const char* home = std::getenv("HOME"); home && *home)
        return std::filesystem::path(home) / ".cache" / "rdcfa";
    return ".rdcfa-cache";
}

/// Builds a backbone by name: "tiny" (seeded, self-contained) or
/// "wide_resnet50_2" (reads <cache>/wide_resnet50_2.rdw, produced by
/// tools/export_backbone.py).
inline std::unique_ptr<Backbone> make_backbone(const std::string& name, std::uint64_t seed,
                                               const std::string& cache_dir = {}) {
    if (name == "tiny") return std::make_unique<TinyBackbone>(seed);
    if (name == "wide_resnet50_2") {
        const auto path = backbone_cache_dir(cache_dir) / "wide_resnet50_2.rdw";
        if (!std::filesystem::exists(path))
            throw MissingError("pretrained weights not cached at " + path.string() +
                               "; run tools/export_backbone.py --out " + path.parent_path().string());
        return std::make_unique<WideResNet50>(WeightArchive::load(path));
    }
    throw ConfigError("unknown backbone '" + name + "' (expected tiny or wide_resnet50_2)");
}

}  // namespace rdcfa
