#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include "rdcfa/backbone.hpp"
#include "rdcfa/error.hpp"
#include "rdcfa/tensor.hpp"

namespace rdcfa {

struct DescriptorConfig {
    std::size_t input_dim = 0;   // D
    std::size_t output_dim = 0;  // D'
    bool use_coordinate_channels = false;

    void validate() const {
        if (input_dim < 1 || output_dim < 1) throw ConfigError("descriptor dimensions must be >= 1");
    }
    std::size_t effective_input_dim() const { return input_dim + (use_coordinate_channels ? 2 : 0); }
};

/// Adapted features phi(p_t). Column t holds the D'-vector of patch t.
struct TargetFeatureMap {
    Matrix data;  // D' x T
    std::size_t height = 0;
    std::size_t width = 0;

    std::size_t dim() const { return static_cast<std::size_t>(data.rows()); }
};

/// Per-location affine patch descriptor phi(p) = W p + b (a 1x1 convolution),
/// optionally fed two extra channels with the patch's normalized (x, y).
class PatchDescriptor {
public:
    struct Gradients {
        Matrix weight;
        Vector bias;
    };

    PatchDescriptor() = default;

    PatchDescriptor(DescriptorConfig config, std::uint64_t seed) : config_(config) {
        config_.validate();
        const auto in = static_cast<Eigen::Index>(config_.effective_input_dim());
        const auto out = static_cast<Eigen::Index>(config_.output_dim);
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(in)));
        weight_.resize(out, in);
        for (Eigen::Index i = 0; i < weight_.size(); ++i) weight_.data()[i] = dist(rng);
        bias_ = Vector::Zero(out);
    }

    /// Identity map with zero bias (requires D == D', no coordinate channels).
    static PatchDescriptor identity(std::size_t dim) {
        PatchDescriptor d;
        d.config_ = {dim, dim, false};
        d.weight_ = Matrix::Identity(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
        d.bias_ = Vector::Zero(static_cast<Eigen::Index>(dim));
        return d;
    }

    const DescriptorConfig& config() const { return config_; }
    Matrix& weight() { return weight_; }
    const Matrix& weight() const { return weight_; }
    Vector& bias() { return bias_; }
    const Vector& bias() const { return bias_; }

    /// Network input for one image: the patch features, plus coordinate rows
    /// when enabled.
    Matrix input_matrix(const PatchFeatureMap& features) const {
        if (features.dim() != config_.input_dim)
            throw ShapeError("describe: expected " + std::to_string(config_.input_dim) + " input channels, got " +
                             std::to_string(features.dim()));
        if (!config_.use_coordinate_channels) return features.data;
        const auto d = features.data.rows();
        Matrix in(d + 2, features.data.cols());
        in.topRows(d) = features.data;
        for (std::size_t y = 0; y < features.height; ++y)
            for (std::size_t x = 0; x < features.width; ++x) {
                const auto t = static_cast<Eigen::Index>(y * features.width + x);
                in(d, t) = (static_cast<double>(x) + 0.5) / static_cast<double>(features.width) * 2.0 - 1.0;
                in(d + 1, t) = (static_cast<double>(y) + 0.5) / static_cast<double>(features.height) * 2.0 - 1.0;
            }
        return in;
    }

    Matrix apply(const Matrix& input) const {
        Matrix out = weight_ * input;
        out.colwise() += bias_;
        return out;
    }

    TargetFeatureMap describe(const PatchFeatureMap& features) const {
        return {apply(input_matrix(features)), features.height, features.width};
    }

    /// Accumulates dL/dW and dL/db given the input matrix and dL/d(output).
    /// No input gradient: the backbone upstream is frozen.
    void accumulate(const Matrix& input, const Matrix& d_out, Gradients& g) const {
        if (g.weight.size() == 0) {
            g.weight = Matrix::Zero(weight_.rows(), weight_.cols());
            g.bias = Vector::Zero(bias_.size());
        }
        g.weight.noalias() += d_out * input.transpose();
        g.bias += d_out.rowwise().sum();
    }

private:
    DescriptorConfig config_;
    Matrix weight_;  // D' x D(+2)
    Vector bias_;
};

}  // namespace rdcfa
