#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "rdcfa/backbone.hpp"
#include "rdcfa/descriptor.hpp"
#include "rdcfa/discriminator.hpp"
#include "rdcfa/memory_bank.hpp"

namespace rdcfa {

struct ModelDims {
    std::size_t patch_dim = 0;   // D
    std::size_t target_dim = 0;  // D'
    std::size_t latent_dim = 0;  // m
    std::size_t classes = 0;     // Nc
    bool coordinate_channels = false;
    bool augment_bank = true;
};

/// Trainable part of the detector: descriptor phi, discriminator Q and the
/// class means. The frozen backbone lives outside.
class RdCfaModel {
public:
    struct Forward {
        Matrix input;  // descriptor input, D(+2) x T
        TargetFeatureMap target;
        GaussianField field;
        Matrix queries;  // E x T
    };

    struct Gradients {
        PatchDescriptor::Gradients descriptor;
        Discriminator::Gradients discriminator;
        Matrix class_means;
    };

    struct ParamRef {
        double* value;
        std::size_t size;
    };

    PatchDescriptor descriptor;
    Discriminator discriminator;
    ClassMeans class_means;
    bool augment_bank = true;

    RdCfaModel() = default;

    /// Seeds are derived from `seed` per component so that changing one
    /// dimension does not reshuffle the others.
    static RdCfaModel create(const ModelDims& dims, double rho, std::uint64_t seed) {
        RdCfaModel model;
        model.descriptor = PatchDescriptor({dims.patch_dim, dims.target_dim, dims.coordinate_channels}, seed * 4 + 1);
        model.discriminator = Discriminator(dims.target_dim, dims.latent_dim, seed * 4 + 2);
        model.class_means = ClassMeans::random(dims.classes, dims.latent_dim, rho, seed * 4 + 3);
        model.augment_bank = dims.augment_bank;
        return model;
    }

    ModelDims dims() const {
        return {descriptor.config().input_dim, descriptor.config().output_dim, discriminator.latent_dim(),
                class_means.classes(), descriptor.config().use_coordinate_channels, augment_bank};
    }

    std::size_t query_width() const {
        return entry_width(descriptor.config().output_dim, discriminator.latent_dim(), augment_bank);
    }

    Forward forward(const PatchFeatureMap& features) const {
        Forward f;
        f.input = descriptor.input_matrix(features);
        f.target = {descriptor.apply(f.input), features.height, features.width};
        f.field = discriminator.discriminate(f.target);
        f.queries = augment_features(f.target.data, f.field, augment_bank);
        return f;
    }

    Matrix queries(const PatchFeatureMap& features) const { return forward(features).queries; }

    /// Back-propagates dL/d(queries) plus direct dL/d(mu), dL/d(log_var)
    /// contributions (from the KL term) into parameter gradients.
    void backward(const Forward& f, const Matrix& d_queries, Matrix d_mu, Matrix d_log_var, Gradients& g) const {
        const auto d = f.target.data.rows();
        const auto m = f.field.mu.rows();
        Matrix d_target = d_queries.topRows(d);
        if (augment_bank) {
            d_mu += d_queries.middleRows(d, m);
            d_log_var += (d_queries.bottomRows(m).array() * f.field.log_var.array().exp()).matrix();
        }
        d_target += discriminator.backward(f.target.data, d_mu, d_log_var, g.discriminator);
        descriptor.accumulate(f.input, d_target, g.descriptor);
    }

    Gradients zero_gradients() const {
        Gradients g;
        g.descriptor.weight = Matrix::Zero(descriptor.weight().rows(), descriptor.weight().cols());
        g.descriptor.bias = Vector::Zero(descriptor.bias().size());
        g.discriminator.mu_weight = Matrix::Zero(discriminator.mu_weight().rows(), discriminator.mu_weight().cols());
        g.discriminator.lv_weight = Matrix::Zero(discriminator.lv_weight().rows(), discriminator.lv_weight().cols());
        g.discriminator.mu_bias = Vector::Zero(discriminator.mu_bias().size());
        g.discriminator.lv_bias = Vector::Zero(discriminator.lv_bias().size());
        g.class_means = Matrix::Zero(class_means.means.rows(), class_means.means.cols());
        return g;
    }

    /// Trainable tensors in a fixed order; Gradients::refs() uses the same order.
    std::vector<ParamRef> parameters() {
        return {ref(descriptor.weight()),          ref(descriptor.bias()),
                ref(discriminator.mu_weight()),    ref(discriminator.mu_bias()),
                ref(discriminator.lv_weight()),    ref(discriminator.lv_bias()),
                ref(class_means.means)};
    }

    static std::vector<ParamRef> gradient_refs(Gradients& g) {
        return {ref(g.descriptor.weight),       ref(g.descriptor.bias),       ref(g.discriminator.mu_weight),
                ref(g.discriminator.mu_bias),   ref(g.discriminator.lv_weight), ref(g.discriminator.lv_bias),
                ref(g.class_means)};
    }

private:
    template <class Derived>
    static ParamRef ref(Eigen::PlainObjectBase<Derived>& m) {
        return {m.data(), static_cast<std::size_t>(m.size())};
    }
};

/// Decoupled weight decay Adam.
class AdamW {
public:
    AdamW(double learning_rate, double weight_decay, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(learning_rate), wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(std::span<const RdCfaModel::ParamRef> params, std::span<const RdCfaModel::ParamRef> grads) {
        if (params.size() != grads.size()) throw ShapeError("AdamW: parameter/gradient count mismatch");
        if (first_.empty()) {
            for (const auto& p : params) {
                first_.emplace_back(p.size, 0.0);
                second_.emplace_back(p.size, 0.0);
            }
        }
        ++steps_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            double* p = params[i].value;
            const double* g = grads[i].value;
            if (grads[i].size != params[i].size || first_[i].size() != params[i].size)
                throw ShapeError("AdamW: tensor size changed between steps");
            for (std::size_t k = 0; k < params[i].size; ++k) {
                first_[i][k] = beta1_ * first_[i][k] + (1.0 - beta1_) * g[k];
                second_[i][k] = beta2_ * second_[i][k] + (1.0 - beta2_) * g[k] * g[k];
                p[k] *= 1.0 - lr_ * wd_;
                p[k] -= lr_ * (first_[i][k] / bc1) / (std::sqrt(second_[i][k] / bc2) + eps_);
            }
        }
    }

    std::size_t steps() const { return steps_; }

private:
    double lr_, wd_, beta1_, beta2_, eps_;
    std::size_t steps_ = 0;
    std::vector<std::vector<double>> first_, second_;
};

}  // namespace rdcfa
