#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "rdcfa/backbone.hpp"
#include "rdcfa/memory_bank.hpp"
#include "rdcfa/model.hpp"
#include "rdcfa/tensor.hpp"

namespace rdcfa {

/// Per-pixel abnormality at input resolution plus the image-level score.
struct AnomalyMap {
    std::vector<double> pixel_scores;  // height x width, row-major
    std::size_t height = 0;
    std::size_t width = 0;
    double image_score = 0.0;  // max of pixel_scores
};

/// Minimum squared distance of each patch query to the bank, row-major H x W.
inline std::vector<double> raw_score_map(const Matrix& queries, const MemoryBank& bank) {
    if (static_cast<std::size_t>(queries.rows()) != bank.width())
        throw ShapeError("raw_score_map: feature width " + std::to_string(queries.rows()) +
                         " does not match bank width " + std::to_string(bank.width()));
    std::vector<double> out(static_cast<std::size_t>(queries.cols()));
    for (Eigen::Index t = 0; t < queries.cols(); ++t) out[static_cast<std::size_t>(t)] = bank.min_distance(queries.col(t));
    return out;
}

inline std::vector<double> raw_score_map(const PatchFeatureMap& features, const RdCfaModel& model,
                                         const MemoryBank& bank) {
    if (bank.augmented() != model.augment_bank) throw ShapeError("raw_score_map: bank augmentation differs from model");
    return raw_score_map(model.queries(features), bank);
}

/// Unit-sum sampled Gaussian, truncated at 4 sigma.
inline std::vector<double> gaussian_kernel(double sigma) {
    const auto radius = static_cast<std::size_t>(std::max(1.0, std::floor(4.0 * sigma + 0.5)));
    std::vector<double> k(2 * radius + 1);
    double sum = 0.0;
    for (std::size_t i = 0; i < k.size(); ++i) {
        const double x = static_cast<double>(i) - static_cast<double>(radius);
        k[i] = std::exp(-0.5 * x * x / (sigma * sigma));
        sum += k[i];
    }
    for (auto& v : k) v /= sum;
    return k;
}

namespace detail {
// Mirror without repeating the edge sample (..., 2, 1 | 0, 1, 2, ...).
inline std::size_t reflect101(std::ptrdiff_t i, std::size_t n) {
    if (n == 1) return 0;
    const auto period = static_cast<std::ptrdiff_t>(2 * n - 2);
    i %= period;
    if (i < 0) i += period;
    if (i >= static_cast<std::ptrdiff_t>(n)) i = period - i;
    return static_cast<std::size_t>(i);
}
}  // namespace detail

/// Separable Gaussian blur with reflect-101 borders.
inline std::vector<double> gaussian_blur(const std::vector<double>& src, std::size_t h, std::size_t w, double sigma) {
    if (sigma <= 0.0) return src;
    const auto k = gaussian_kernel(sigma);
    const auto r = static_cast<std::ptrdiff_t>(k.size() / 2);
    std::vector<double> tmp(src.size()), out(src.size());
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            double acc = 0.0;
            for (std::ptrdiff_t d = -r; d <= r; ++d)
                acc += k[static_cast<std::size_t>(d + r)] *
                       src[y * w + detail::reflect101(static_cast<std::ptrdiff_t>(x) + d, w)];
            tmp[y * w + x] = acc;
        }
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            double acc = 0.0;
            for (std::ptrdiff_t d = -r; d <= r; ++d)
                acc += k[static_cast<std::size_t>(d + r)] *
                       tmp[detail::reflect101(static_cast<std::ptrdiff_t>(y) + d, h) * w + x];
            out[y * w + x] = acc;
        }
    return out;
}

/// Bilinear upsampling to the output size, then Gaussian smoothing
/// (sigma = 0 disables it). The image score is the map maximum.
inline AnomalyMap postprocess(const std::vector<double>& raw, std::size_t raw_h, std::size_t raw_w, std::size_t out_h,
                              std::size_t out_w, double sigma) {
    if (sigma < 0.0) throw ConfigError("postprocess: sigma must be >= 0");
    AnomalyMap map;
    map.height = out_h;
    map.width = out_w;
    map.pixel_scores = gaussian_blur(resize_bilinear(raw, raw_h, raw_w, out_h, out_w), out_h, out_w, sigma);
    for (auto& v : map.pixel_scores) v = std::max(v, 0.0);
    map.image_score = *std::max_element(map.pixel_scores.begin(), map.pixel_scores.end());
    return map;
}

/// Full inference for one image: backbone, model, bank distance, smoothing.
inline AnomalyMap score_image(const Tensor3& image, const Backbone& backbone, const RdCfaModel& model,
                              const MemoryBank& bank, double sigma) {
    const auto features = assemble_patch_features(extract_multiscale(image, backbone));
    const auto raw = raw_score_map(features, model, bank);
    return postprocess(raw, features.height, features.width, image.height(), image.width(), sigma);
}

}  // namespace rdcfa
