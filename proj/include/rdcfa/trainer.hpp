#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rdcfa/cfa_losses.hpp"
#include "rdcfa/model.hpp"

namespace rdcfa {

struct TrainFlags {
    bool augment_bank = true;
    bool refresh_bank = true;
    bool use_dissimilarity = true;
};

struct TrainConfig {
    std::size_t epochs = 20;
    std::size_t batch_size = 8;
    double learning_rate = 1e-3;
    double weight_decay = 5e-4;
    std::uint64_t seed = 0;
    TrainFlags flags;
    CfaConfig cfa;
    std::size_t target_dim = 8;  // D'
    std::size_t latent_dim = 4;  // m
    bool coordinate_channels = false;
    double loss_limit = 1e6;

    void validate() const {
        if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
        if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
        if (flags.use_dissimilarity && batch_size < 2)
            throw ConfigError("train.batch_size must be >= 2 when the dissimilarity matrix is enabled");
        if (!(learning_rate >= 0.0) || !(weight_decay >= 0.0))
            throw ConfigError("learning rate and weight decay must be >= 0");
        if (target_dim < 1 || latent_dim < 1) throw ConfigError("descriptor/latent dimensions must be >= 1");
        cfa.validate();
    }
};

/// Backbone patch features of the normal training images with class labels.
struct TrainingSet {
    std::vector<PatchFeatureMap> features;
    std::vector<std::size_t> labels;
    std::vector<std::string> class_names;

    std::size_t size() const { return features.size(); }
    std::size_t classes() const { return class_names.size(); }
};

struct BatchLog {
    std::size_t epoch = 0;
    std::size_t batch = 0;
    std::size_t samples = 0;
    LossBreakdown loss;
    bool degenerate_dm = false;
};

struct TrainReport {
    std::vector<LossBreakdown> epochs;      // training epoch means
    std::vector<LossBreakdown> validation;  // held-out loss per epoch (empty without a validation set)
    std::vector<BatchLog> batches;
    std::size_t skipped_batches = 0;
    std::size_t degenerate_batches = 0;
    std::size_t final_epoch_stamp = 0;
    double wall_seconds = 0.0;
};

struct TrainResult {
    RdCfaModel model;
    MemoryBank bank;
    TrainReport report;
};

using Logger = std::function<void(std::string_view)>;

struct BatchResult {
    LossBreakdown loss;
    bool degenerate_dm = false;
    RdCfaModel::Gradients gradients;
};

/// Loss of one batch and, optionally, its parameter gradients.
inline BatchResult batch_loss(const RdCfaModel& model, const MemoryBank& bank, const TrainingSet& set,
                              std::span<const std::size_t> batch, const TrainConfig& cfg, bool with_gradients = true) {
    if (batch.empty()) throw ShapeError("batch_loss: empty batch");
    if (bank.width() != model.query_width() || bank.augmented() != model.augment_bank)
        throw ShapeError("batch_loss: bank width " + std::to_string(bank.width()) + " does not match model query width " +
                         std::to_string(model.query_width()));
    const auto& c = cfg.cfa;
    std::vector<RdCfaModel::Forward> fwd;
    std::vector<GaussianField> fields;
    std::vector<std::size_t> labels;
    fwd.reserve(batch.size());
    for (auto idx : batch) {
        fwd.push_back(model.forward(set.features.at(idx)));
        fields.push_back(fwd.back().field);
        labels.push_back(set.labels.at(idx));
    }
    const auto patches = fwd.front().queries.cols();
    Matrix queries(fwd.front().queries.rows(), patches * static_cast<Eigen::Index>(batch.size()));
    for (std::size_t i = 0; i < fwd.size(); ++i) {
        if (fwd[i].queries.cols() != patches) throw ShapeError("batch_loss: samples disagree on patch count");
        queries.middleCols(static_cast<Eigen::Index>(i) * patches, patches) = fwd[i].queries;
    }

    const auto hyper = coupled_hypersphere_losses(queries, bank, c.K, c.J, c.r2, c.alpha);
    const auto kld = kld_loss_with_gradient(fields, labels, model.class_means);

    BatchResult out;
    Matrix dm = Matrix::Ones(static_cast<Eigen::Index>(batch.size()), static_cast<Eigen::Index>(batch.size()));
    if (cfg.flags.use_dissimilarity && batch.size() >= 2) {
        auto d = dissimilarity_matrix(fields);
        out.degenerate_dm = d.degenerate;
        dm = std::move(d.values);
    }
    const auto rep = repulsive_loss_with_gradient(model.class_means, labels, dm, c.rho);
    out.loss = total_loss(hyper.f_att, hyper.f_rep, kld.value, rep.value, c.alpha_kl, c.alpha_dr);

    if (with_gradients) {
        out.gradients = model.zero_gradients();
        for (std::size_t i = 0; i < fwd.size(); ++i) {
            model.backward(fwd[i], hyper.d_queries.middleCols(static_cast<Eigen::Index>(i) * patches, patches),
                           c.alpha_kl * kld.d_mu[i], c.alpha_kl * kld.d_log_var[i], out.gradients);
        }
        out.gradients.class_means += c.alpha_kl * kld.d_means + c.alpha_dr * rep.d_means;
    }
    return out;
}

namespace detail {

inline void guard_loss(const LossBreakdown& l, double limit, const std::string& where) {
    const std::pair<const char*, double> parts[] = {
        {"f_att", l.f_att}, {"f_rep", l.f_rep}, {"kld", l.kld}, {"d_rep", l.d_rep}, {"total", l.total}};
    for (const auto& [name, v] : parts) {
        if (!std::isfinite(v)) throw NumericError("non-finite " + std::string(name) + " loss " + where);
        if (v > limit)
            throw NumericError(std::string(name) + " loss " + std::to_string(v) + " exceeds " + std::to_string(limit) +
                               " " + where);
    }
}

template <class Fn>
auto timed(Fn&& fn) {
    const auto start = std::chrono::steady_clock::now();
    fn();
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace detail

inline MemoryBank initialize_memory_bank(const RdCfaModel& model, const TrainingSet& set) {
    return build_memory_bank(
        set.labels, set.classes(), [&](std::size_t i) { return model.queries(set.features[i]); }, model.augment_bank, 0,
        set.class_names);
}

inline MemoryBank refresh_memory_bank(const MemoryBank& bank, const RdCfaModel& model, const TrainingSet& set) {
    return refresh_memory_bank(
        bank, set.labels, set.classes(), [&](std::size_t i) { return model.queries(set.features[i]); },
        set.class_names);
}

/// One pass over `batches`, one optimizer step per batch. Returns the mean of
/// the per-batch breakdowns; single-sample batches are skipped when the
/// dissimilarity matrix is enabled.
inline LossBreakdown train_epoch(RdCfaModel& model, const MemoryBank& bank, const TrainingSet& set,
                                 const std::vector<std::vector<std::size_t>>& batches, const TrainConfig& cfg,
                                 AdamW& optimizer, TrainReport& report, std::size_t epoch, const Logger& log = {}) {
    if (bank.width() != model.query_width()) throw ShapeError("train_epoch: bank width does not match the model");
    LossBreakdown sum;
    std::size_t used = 0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
        const auto& batch = batches[b];
        if (cfg.flags.use_dissimilarity && batch.size() < 2) {
            ++report.skipped_batches;
            if (log) log("epoch " + std::to_string(epoch) + " batch " + std::to_string(b) +
                         ": single-sample batch skipped (dissimilarity matrix needs pairs)");
            continue;
        }
        auto result = batch_loss(model, bank, set, batch, cfg);
        detail::guard_loss(result.loss, cfg.loss_limit,
                           "at epoch " + std::to_string(epoch) + " batch " + std::to_string(b));
        if (result.degenerate_dm) {
            ++report.degenerate_batches;
            if (log) log("epoch " + std::to_string(epoch) + " batch " + std::to_string(b) +
                         ": degenerate dissimilarity range, using uniform weights");
        }
        auto params = model.parameters();
        auto grads = RdCfaModel::gradient_refs(result.gradients);
        optimizer.step(params, grads);
        report.batches.push_back({epoch, b, batch.size(), result.loss, result.degenerate_dm});
        sum += result.loss;
        ++used;
    }
    if (used > 0) sum /= static_cast<double>(used);
    return sum;
}

/// Uniformly shuffled batches over all classes.
inline std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, std::mt19937_64& rng) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t i = 0; i < n; i += batch_size)
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                             order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch_size)));
    return batches;
}

inline ModelDims model_dims(const TrainConfig& cfg, const TrainingSet& set) {
    if (set.features.empty()) throw DataError("training set is empty");
    return {set.features.front().dim(), cfg.target_dim, cfg.latent_dim, set.classes(), cfg.coordinate_channels,
            cfg.flags.augment_bank};
}

/// Full optimization: bank initialized before the first epoch and, with
/// refresh on, rebuilt after every epoch. Deterministic for a fixed seed.
inline TrainResult train(const TrainConfig& cfg, const TrainingSet& set, const TrainingSet* validation = nullptr,
                         const Logger& log = {}) {
    cfg.validate();
    if (set.labels.size() != set.features.size()) throw DataError("training set: one label per sample required");
    TrainResult result;
    result.report.wall_seconds = detail::timed([&] {
        result.model = RdCfaModel::create(model_dims(cfg, set), cfg.cfa.rho, cfg.seed);
        result.bank = initialize_memory_bank(result.model, set);
        if (cfg.cfa.K + cfg.cfa.J > result.bank.size())
            throw ConfigError("cfa.K + cfa.J exceeds the memory bank size " + std::to_string(result.bank.size()));
        AdamW optimizer(cfg.learning_rate, cfg.weight_decay);
        std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
        for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
            const auto batches = make_batches(set.size(), cfg.batch_size, rng);
            const auto mean = train_epoch(result.model, result.bank, set, batches, cfg, optimizer, result.report, epoch, log);
            result.report.epochs.push_back(mean);
            if (validation && validation->size() > 0) {
                std::vector<std::size_t> all(validation->size());
                std::iota(all.begin(), all.end(), std::size_t{0});
                result.report.validation.push_back(
                    batch_loss(result.model, result.bank, *validation, all, cfg, false).loss);
            }
            if (cfg.flags.refresh_bank) result.bank = refresh_memory_bank(result.bank, result.model, set);
        }
        result.report.final_epoch_stamp = result.bank.epoch_stamp();
    });
    return result;
}

}  // namespace rdcfa
