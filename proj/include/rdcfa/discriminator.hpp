#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "rdcfa/descriptor.hpp"
#include "rdcfa/error.hpp"
#include "rdcfa/tensor.hpp"

namespace rdcfa {

/// Per-patch diagonal Gaussian predicted by the discriminator. Column t holds
/// patch t; the covariance diagonal is exp(log_var).
struct GaussianField {
    Matrix mu;       // m x T
    Matrix log_var;  // m x T
    std::size_t height = 0;
    std::size_t width = 0;

    std::size_t latent_dim() const { return static_cast<std::size_t>(mu.rows()); }
    std::size_t patches() const { return static_cast<std::size_t>(mu.cols()); }
    Matrix covariance_diagonal() const { return log_var.array().exp().matrix(); }
};

/// Learnable class centres mu_1..mu_Nc, one row per class.
struct ClassMeans {
    Matrix means;  // Nc x m

    std::size_t classes() const { return static_cast<std::size_t>(means.rows()); }
    std::size_t latent_dim() const { return static_cast<std::size_t>(means.cols()); }

    /// Standard normal entries scaled by sqrt(rho) / 2.
    static ClassMeans random(std::size_t classes, std::size_t latent_dim, double rho, std::uint64_t seed) {
        if (classes < 1) throw ConfigError("class means: at least one class required");
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> dist(0.0, 1.0);
        ClassMeans cm;
        cm.means.resize(static_cast<Eigen::Index>(classes), static_cast<Eigen::Index>(latent_dim));
        const double scale = std::sqrt(rho) / 2.0;
        for (Eigen::Index i = 0; i < cm.means.size(); ++i) cm.means.data()[i] = dist(rng) * scale;
        return cm;
    }
};

/// Regularized discriminator Q: two per-location affine heads producing the
/// mean and log-variance of each patch's Gaussian.
class Discriminator {
public:
    struct Gradients {
        Matrix mu_weight, lv_weight;
        Vector mu_bias, lv_bias;
    };

    Discriminator() = default;

    Discriminator(std::size_t input_dim, std::size_t latent_dim, std::uint64_t seed) {
        if (input_dim < 1 || latent_dim < 1) throw ConfigError("discriminator dimensions must be >= 1");
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(input_dim)));
        const auto m = static_cast<Eigen::Index>(latent_dim);
        const auto d = static_cast<Eigen::Index>(input_dim);
        mu_weight_.resize(m, d);
        lv_weight_.resize(m, d);
        for (Eigen::Index i = 0; i < mu_weight_.size(); ++i) mu_weight_.data()[i] = dist(rng);
        // Small log-variance head so the initial covariance stays near identity.
        for (Eigen::Index i = 0; i < lv_weight_.size(); ++i) lv_weight_.data()[i] = 0.1 * dist(rng);
        mu_bias_ = Vector::Zero(m);
        lv_bias_ = Vector::Zero(m);
    }

    std::size_t input_dim() const { return static_cast<std::size_t>(mu_weight_.cols()); }
    std::size_t latent_dim() const { return static_cast<std::size_t>(mu_weight_.rows()); }

    Matrix& mu_weight() { return mu_weight_; }
    const Matrix& mu_weight() const { return mu_weight_; }
    Vector& mu_bias() { return mu_bias_; }
    const Vector& mu_bias() const { return mu_bias_; }
    Matrix& lv_weight() { return lv_weight_; }
    const Matrix& lv_weight() const { return lv_weight_; }
    Vector& lv_bias() { return lv_bias_; }
    const Vector& lv_bias() const { return lv_bias_; }

    GaussianField discriminate(const TargetFeatureMap& target) const {
        if (target.dim() != input_dim())
            throw ShapeError("discriminate: expected " + std::to_string(input_dim()) + " input channels, got " +
                             std::to_string(target.dim()));
        GaussianField f;
        f.mu = mu_weight_ * target.data;
        f.mu.colwise() += mu_bias_;
        f.log_var = lv_weight_ * target.data;
        f.log_var.colwise() += lv_bias_;
        f.height = target.height;
        f.width = target.width;
        return f;
    }

    /// Accumulates parameter gradients and returns dL/d(target features).
    Matrix backward(const Matrix& target, const Matrix& d_mu, const Matrix& d_log_var, Gradients& g) const {
        if (g.mu_weight.size() == 0) {
            g.mu_weight = Matrix::Zero(mu_weight_.rows(), mu_weight_.cols());
            g.lv_weight = Matrix::Zero(lv_weight_.rows(), lv_weight_.cols());
            g.mu_bias = Vector::Zero(mu_bias_.size());
            g.lv_bias = Vector::Zero(lv_bias_.size());
        }
        g.mu_weight.noalias() += d_mu * target.transpose();
        g.lv_weight.noalias() += d_log_var * target.transpose();
        g.mu_bias += d_mu.rowwise().sum();
        g.lv_bias += d_log_var.rowwise().sum();
        Matrix d_target = mu_weight_.transpose() * d_mu;
        d_target.noalias() += lv_weight_.transpose() * d_log_var;
        return d_target;
    }

private:
    Matrix mu_weight_, lv_weight_;  // m x D'
    Vector mu_bias_, lv_bias_;
};

// ---------------------------------------------------------------------------
// Supervised KL divergence toward the class means

struct KldGradient {
    double value = 0.0;
    std::vector<Matrix> d_mu;       // per sample, m x T
    std::vector<Matrix> d_log_var;  // per sample, m x T
    Matrix d_means;                 // Nc x m
};

namespace detail {
inline void check_labels(std::span<const std::size_t> labels, std::size_t classes) {
    for (auto l : labels)
        if (l >= classes)
            throw ShapeError("class label " + std::to_string(l) + " out of range (" + std::to_string(classes) +
                             " classes)");
}
}  // namespace detail

/// Per patch: |mu_Q - mu_l|^2 + tr(Sigma_Q) - log det(Sigma_Q) - m, averaged
/// over all patches of all samples.
inline KldGradient kld_loss_with_gradient(std::span<const GaussianField> fields, std::span<const std::size_t> labels,
                                          const ClassMeans& means) {
    if (fields.size() != labels.size()) throw ShapeError("kld_loss: one label per sample required");
    if (fields.empty()) throw ShapeError("kld_loss: empty batch");
    detail::check_labels(labels, means.classes());
    std::size_t total_patches = 0;
    for (const auto& f : fields) {
        if (f.latent_dim() != means.latent_dim()) throw ShapeError("kld_loss: latent dimension mismatch");
        total_patches += f.patches();
    }
    const double scale = 1.0 / static_cast<double>(total_patches);

    KldGradient out;
    out.d_means = Matrix::Zero(means.means.rows(), means.means.cols());
    for (std::size_t i = 0; i < fields.size(); ++i) {
        const auto& f = fields[i];
        const Vector centre = means.means.row(static_cast<Eigen::Index>(labels[i])).transpose();
        const Matrix diff = f.mu.colwise() - centre;
        // exp(v) - 1 - v >= 0 summed over dimensions equals tr - logdet - m.
        const Matrix excess = f.log_var.unaryExpr([](double v) { return std::expm1(v) - v; });
        out.value += diff.squaredNorm() + excess.sum();
        out.d_mu.push_back(2.0 * scale * diff);
        out.d_log_var.push_back(scale * f.log_var.unaryExpr([](double v) { return std::expm1(v); }));
        out.d_means.row(static_cast<Eigen::Index>(labels[i])) -= 2.0 * scale * diff.rowwise().sum().transpose();
    }
    out.value *= scale;
    return out;
}

inline double kld_loss(std::span<const GaussianField> fields, std::span<const std::size_t> labels,
                       const ClassMeans& means) {
    return kld_loss_with_gradient(fields, labels, means).value;
}

inline double kld_loss(const GaussianField& field, std::size_t label, const ClassMeans& means) {
    return kld_loss(std::span<const GaussianField>(&field, 1), std::span<const std::size_t>(&label, 1), means);
}

// ---------------------------------------------------------------------------
// Batch dissimilarity matrix

struct DissimilarityMatrix {
    Matrix values;  // N x N, symmetric, in [0, 1]
    bool degenerate = false;
};

inline constexpr double kDegenerateRangeTolerance = 1e-12;

/// Mean squared distance between all patch means of each sample pair,
/// min-max scaled to [0, 1]. Falls back to all ones when every entry is equal.
/// Built from current values only; it carries no gradient.
inline DissimilarityMatrix dissimilarity_matrix(std::span<const GaussianField> fields) {
    const std::size_t n = fields.size();
    if (n < 2) throw ShapeError("dissimilarity_matrix: at least two samples required, got " + std::to_string(n));
    const auto m = fields.front().mu.rows();
    const auto t = fields.front().mu.cols();
    for (const auto& f : fields)
        if (f.mu.rows() != m || f.mu.cols() != t || f.height != fields.front().height)
            throw ShapeError("dissimilarity_matrix: samples must share latent size and spatial grid");

    // mean_{a in i, b in j} |a - b|^2 = |mean_i - mean_j|^2 + spread_i + spread_j
    std::vector<Vector> centroid(n);
    std::vector<double> spread(n);
    for (std::size_t i = 0; i < n; ++i) {
        centroid[i] = fields[i].mu.rowwise().mean();
        spread[i] = (fields[i].mu.colwise() - centroid[i]).squaredNorm() / static_cast<double>(t);
    }
    Matrix pair = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i; j < n; ++j) {
            const double v = (centroid[i] - centroid[j]).squaredNorm() + spread[i] + spread[j];
            pair(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
            pair(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = v;
        }
    const double lo = pair.minCoeff();
    const double hi = pair.maxCoeff();
    DissimilarityMatrix dm;
    if (std::abs(hi - lo) <= kDegenerateRangeTolerance) {
        dm.values = Matrix::Ones(pair.rows(), pair.cols());
        dm.degenerate = true;
    } else {
        dm.values = (pair.array() - lo) / (hi - lo);
    }
    return dm;
}

// ---------------------------------------------------------------------------
// Distribution repulsion between class means

struct RepulsiveGradient {
    double value = 0.0;
    Matrix d_means;  // Nc x m
};

/// (1/rho) * sum over ordered sample pairs with different labels of
/// max(0, DM_ij * (rho - |mu_li - mu_lj|^2))^2.
inline RepulsiveGradient repulsive_loss_with_gradient(const ClassMeans& means, std::span<const std::size_t> labels,
                                                      const Matrix& dm, double rho) {
    if (!(rho > 0.0)) throw ConfigError("repulsive_loss: rho must be > 0");
    const auto n = static_cast<Eigen::Index>(labels.size());
    if (dm.rows() != n || dm.cols() != n) throw ShapeError("repulsive_loss: DM shape does not match label count");
    detail::check_labels(labels, means.classes());
    RepulsiveGradient out;
    out.d_means = Matrix::Zero(means.means.rows(), means.means.cols());
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) {
            const auto li = static_cast<Eigen::Index>(labels[static_cast<std::size_t>(i)]);
            const auto lj = static_cast<Eigen::Index>(labels[static_cast<std::size_t>(j)]);
            if (li == lj) continue;
            const Vector diff = (means.means.row(li) - means.means.row(lj)).transpose();
            const double hinge = dm(i, j) * (rho - diff.squaredNorm());
            if (hinge <= 0.0) continue;
            out.value += hinge * hinge;
            // d/d(mu_li) of hinge^2 / rho = (2 hinge / rho) * (-DM_ij) * 2 diff
            const Vector g = (-4.0 * hinge * dm(i, j) / rho) * diff;
            out.d_means.row(li) += g.transpose();
            out.d_means.row(lj) -= g.transpose();
        }
    out.value /= rho;
    return out;
}

inline double repulsive_loss(const ClassMeans& means, std::span<const std::size_t> labels, const Matrix& dm,
                             double rho) {
    return repulsive_loss_with_gradient(means, labels, dm, rho).value;
}

}  // namespace rdcfa
