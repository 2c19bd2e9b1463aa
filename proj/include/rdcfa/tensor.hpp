#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rdcfa/error.hpp"

namespace rdcfa {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Dense channels x height x width array, row-major within a channel.
class Tensor3 {
public:
    Tensor3() = default;
    Tensor3(std::size_t channels, std::size_t height, std::size_t width, double fill = 0.0)
        : channels_(channels), height_(height), width_(width), data_(channels * height * width, fill) {}

    std::size_t channels() const { return channels_; }
    std::size_t height() const { return height_; }
    std::size_t width() const { return width_; }
    std::size_t plane() const { return height_ * width_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t c, std::size_t y, std::size_t x) { return data_[(c * height_ + y) * width_ + x]; }
    double operator()(std::size_t c, std::size_t y, std::size_t x) const { return data_[(c * height_ + y) * width_ + x]; }

    std::span<double> channel(std::size_t c) { return {data_.data() + c * plane(), plane()}; }
    std::span<const double> channel(std::size_t c) const { return {data_.data() + c * plane(), plane()}; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

    std::string shape_string() const {
        std::ostringstream os;
        os << channels_ << "x" << height_ << "x" << width_;
        return os.str();
    }

    friend bool operator==(const Tensor3&, const Tensor3&) = default;

private:
    std::size_t channels_ = 0;
    std::size_t height_ = 0;
    std::size_t width_ = 0;
    std::vector<double> data_;
};

namespace detail {

struct LinearTap {
    std::size_t lo;
    std::size_t hi;
    double frac;
};

// Half-pixel-centre sampling (corner alignment off), clamped at the borders.
inline std::vector<LinearTap> linear_taps(std::size_t in, std::size_t out) {
    std::vector<LinearTap> taps(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t i = 0; i < out; ++i) {
        double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
        if (src < 0.0) src = 0.0;
        auto lo = static_cast<std::size_t>(std::floor(src));
        if (lo > in - 1) lo = in - 1;
        const std::size_t hi = std::min(lo + 1, in - 1);
        taps[i] = {lo, hi, src - static_cast<double>(lo)};
    }
    return taps;
}

}  // namespace detail

/// Bilinear resize of a single height x width plane.
inline std::vector<double> resize_bilinear(std::span<const double> src, std::size_t in_h, std::size_t in_w,
                                           std::size_t out_h, std::size_t out_w) {
    if (in_h == 0 || in_w == 0 || out_h == 0 || out_w == 0) throw ShapeError("resize_bilinear: empty plane");
    if (src.size() != in_h * in_w) throw ShapeError("resize_bilinear: plane size does not match its dimensions");
    if (in_h == out_h && in_w == out_w) return {src.begin(), src.end()};
    const auto ys = detail::linear_taps(in_h, out_h);
    const auto xs = detail::linear_taps(in_w, out_w);
    std::vector<double> out(out_h * out_w);
    for (std::size_t y = 0; y < out_h; ++y) {
        const auto& ty = ys[y];
        const double* r0 = src.data() + ty.lo * in_w;
        const double* r1 = src.data() + ty.hi * in_w;
        for (std::size_t x = 0; x < out_w; ++x) {
            const auto& tx = xs[x];
            const double top = r0[tx.lo] + (r0[tx.hi] - r0[tx.lo]) * tx.frac;
            const double bottom = r1[tx.lo] + (r1[tx.hi] - r1[tx.lo]) * tx.frac;
            out[y * out_w + x] = top + (bottom - top) * ty.frac;
        }
    }
    return out;
}

inline Tensor3 resize_bilinear(const Tensor3& src, std::size_t out_h, std::size_t out_w) {
    Tensor3 out(src.channels(), out_h, out_w);
    for (std::size_t c = 0; c < src.channels(); ++c) {
        auto plane = resize_bilinear(src.channel(c), src.height(), src.width(), out_h, out_w);
        std::copy(plane.begin(), plane.end(), out.channel(c).begin());
    }
    return out;
}

}  // namespace rdcfa
