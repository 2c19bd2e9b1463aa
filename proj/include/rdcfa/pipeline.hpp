#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "rdcfa/backbone.hpp"
#include "rdcfa/checkpoint.hpp"
#include "rdcfa/config.hpp"
#include "rdcfa/data.hpp"
#include "rdcfa/evaluator.hpp"
#include "rdcfa/resnet.hpp"
#include "rdcfa/scorer.hpp"
#include "rdcfa/trainer.hpp"

namespace rdcfa {

/// Image files to backbone patch features, memoized per path.
class FeatureExtractor {
public:
    FeatureExtractor(std::shared_ptr<const Backbone> backbone, const Config& cfg)
        : backbone_(std::move(backbone)), size_(cfg.image_size), mean_(cfg.norm_mean), std_(cfg.norm_std) {}

    static FeatureExtractor from_config(const Config& cfg) {
        return FeatureExtractor(make_backbone(cfg.backbone, cfg.backbone_seed, cfg.backbone_cache), cfg);
    }

    const Backbone& backbone() const { return *backbone_; }
    std::size_t image_size() const { return size_; }

    Tensor3 load(const fs::path& path) const {
        Tensor3 img = read_image(path, size_);
        normalize_image(img, mean_, std_);
        return img;
    }

    PatchFeatureMap features_of_image(const Tensor3& normalized) const {
        return assemble_patch_features(extract_multiscale(normalized, *backbone_));
    }

    const PatchFeatureMap& features(const fs::path& path) {
        const std::lock_guard lock(mutex_);
        auto it = cache_.find(path.string());
        if (it != cache_.end()) return it->second;
        return cache_.emplace(path.string(), features_of_image(load(path))).first->second;
    }

private:
    std::shared_ptr<const Backbone> backbone_;
    std::size_t size_;
    std::array<double, 3> mean_, std_;
    std::mutex mutex_;
    std::map<std::string, PatchFeatureMap> cache_;
};

struct TrainSplit {
    TrainingSet train;
    TrainingSet validation;
    std::vector<fs::path> train_paths;
};

/// Holds out round(fraction * n) images per class (at least one stays in
/// training), chosen by a seeded shuffle.
inline TrainSplit make_train_split(const Dataset& ds, FeatureExtractor& fx, double val_fraction, std::uint64_t seed) {
    if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ConfigError("data.val_fraction must be in [0, 1)");
    TrainSplit split;
    split.train.class_names = ds.class_names();
    split.validation.class_names = split.train.class_names;
    std::mt19937_64 rng(seed ^ 0x5bd1e995ULL);
    for (const auto& cd : ds.classes) {
        std::vector<std::size_t> order(cd.train.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        auto held = static_cast<std::size_t>(std::lround(val_fraction * static_cast<double>(cd.train.size())));
        held = std::min(held, cd.train.size() - 1);
        std::vector<bool> is_val(cd.train.size(), false);
        for (std::size_t i = 0; i < held; ++i) is_val[order[i]] = true;
        for (std::size_t i = 0; i < cd.train.size(); ++i) {
            const auto& s = cd.train[i];
            auto& dst = is_val[i] ? split.validation : split.train;
            dst.features.push_back(fx.features(s.image));
            dst.labels.push_back(s.label);
            if (!is_val[i]) split.train_paths.push_back(s.image);
        }
    }
    return split;
}

/// Trains one model and packages it as a checkpoint.
inline std::pair<Checkpoint, TrainReport> train_checkpoint(const Config& cfg, const Dataset& ds, FeatureExtractor& fx,
                                                           const Logger& log = {}) {
    auto split = make_train_split(ds, fx, cfg.val_fraction, cfg.seed);
    const auto tcfg = make_train_config(cfg, fx.backbone().patch_dim());
    const auto fingerprint = fx.backbone().fingerprint();
    auto result = train(tcfg, split.train, &split.validation, log);
    if (fx.backbone().fingerprint() != fingerprint) throw NumericError("backbone weights changed during training");
    Checkpoint ck;
    ck.config = config_snapshot(cfg);
    ck.config.erase("output.root");
    ck.class_names = ds.class_names();
    ck.backbone_name = fx.backbone().name();
    ck.backbone_seed = cfg.backbone_seed;
    ck.backbone_fingerprint = fingerprint;
    ck.model = std::move(result.model);
    ck.bank = std::move(result.bank);
    return {std::move(ck), std::move(result.report)};
}

inline AnomalyMap score_features(const PatchFeatureMap& features, const RdCfaModel& model, const MemoryBank& bank,
                                 std::size_t out_size, double sigma) {
    return postprocess(raw_score_map(features, model, bank), features.height, features.width, out_size, out_size,
                       sigma);
}

/// Detection and pooled-pixel localization AUROC per class, single run.
/// Classes lacking masks report no localization.
inline ReportTable evaluate(const RdCfaModel& model, const MemoryBank& bank, const Dataset& ds, FeatureExtractor& fx,
                            const Config& cfg) {
    if (model.descriptor.config().input_dim != fx.backbone().patch_dim())
        throw ShapeError("evaluate: model expects " + std::to_string(model.descriptor.config().input_dim) +
                         "-dim patch features, backbone yields " + std::to_string(fx.backbone().patch_dim()));
    if (bank.width() != model.query_width()) throw ShapeError("evaluate: bank width does not match the model");
    const std::size_t size = fx.image_size();
    std::vector<ClassReport> rows;
    for (const auto& cd : ds.classes) {
        std::vector<double> image_scores;
        std::vector<int> image_labels;
        std::vector<double> pixel_scores;
        std::vector<std::uint8_t> pixel_labels;
        const bool masks = cd.has_masks();
        for (const auto& s : cd.test) {
            const auto map = score_features(fx.features(s.image), model, bank, size, cfg.sigma);
            image_scores.push_back(map.image_score);
            image_labels.push_back(s.anomalous ? 1 : 0);
            if (!masks) continue;
            pixel_scores.insert(pixel_scores.end(), map.pixel_scores.begin(), map.pixel_scores.end());
            if (s.mask) {
                const auto m = read_mask(*s.mask, size);
                pixel_labels.insert(pixel_labels.end(), m.begin(), m.end());
            } else {
                pixel_labels.insert(pixel_labels.end(), size * size, 0);
            }
        }
        const auto positives = std::count(image_labels.begin(), image_labels.end(), 1);
        if (positives == 0 || positives == static_cast<std::ptrdiff_t>(image_labels.size()))
            throw DataError("class '" + cd.name + "': test set needs both normal and abnormal images");
        ClassReport row;
        row.name = cd.name;
        row.group = std::find(cfg.texture_classes.begin(), cfg.texture_classes.end(), cd.name) !=
                            cfg.texture_classes.end()
                        ? "texture"
                        : "object";
        row.detection_runs.push_back(auroc(std::span<const double>(image_scores), std::span<const int>(image_labels)));
        const auto pixel_pos = std::count(pixel_labels.begin(), pixel_labels.end(), 1);
        if (masks && pixel_pos > 0 && pixel_pos < static_cast<std::ptrdiff_t>(pixel_labels.size()))
            row.localization_runs.emplace_back(
                auroc(std::span<const double>(pixel_scores), std::span<const std::uint8_t>(pixel_labels)));
        else
            row.localization_runs.emplace_back(std::nullopt);
        rows.push_back(std::move(row));
    }
    return assemble_report(std::move(rows));
}

/// Trains and evaluates `runs` models (seeds seed, seed+1, ...) and merges the
/// reports.
inline ReportTable train_and_evaluate(const Config& cfg, const Dataset& ds, FeatureExtractor& fx, std::size_t runs,
                                      const Logger& log = {}) {
    if (runs < 1) throw ConfigError("experiment.runs must be >= 1");
    std::vector<ReportTable> tables;
    for (std::size_t r = 0; r < runs; ++r) {
        Config run_cfg = cfg;
        run_cfg.seed = cfg.seed + r;
        auto [ck, report] = train_checkpoint(run_cfg, ds, fx, log);
        tables.push_back(evaluate(ck.model, ck.bank, ds, fx, run_cfg));
    }
    return merge_runs(tables);
}

// ---------------------------------------------------------------------------
// Ablation grids

enum class AblationGrid { Flags, Dissimilarity, Hyperparameters };

struct AblationRow {
    bool augment_bank = false;
    bool refresh_bank = false;
    bool use_dissimilarity = false;
    double rho = 0.0, alpha_kl = 0.0, alpha_dr = 0.0;
    double detection = 0.0;
    std::optional<double> localization;
    std::vector<double> detection_runs;
    std::vector<std::optional<double>> localization_runs;
};

struct AblationTable {
    AblationGrid grid = AblationGrid::Flags;
    std::vector<AblationRow> rows;
};

inline const std::vector<double>& rho_choices() {
    static const std::vector<double> v{5, 10, 20, 50};
    return v;
}
inline const std::vector<double>& alpha_kl_choices() {
    static const std::vector<double> v{0.1, 0.25, 0.5, 0.75, 1};
    return v;
}
inline const std::vector<double>& alpha_dr_choices() {
    static const std::vector<double> v{0.1, 0.25, 0.5, 0.75, 1};
    return v;
}

/// Configurations of a grid, in table order. Flags: (extra feature, bank
/// update) = (off,off), (on,off), (off,on), (on,on). Dissimilarity: off, on.
/// Hyperparameters: rho x alpha_kl x alpha_dr.
inline std::vector<Config> ablation_configs(const Config& base, AblationGrid grid) {
    std::vector<Config> out;
    switch (grid) {
    case AblationGrid::Flags:
        for (auto [aug, ref] : {std::pair{false, false}, {true, false}, {false, true}, {true, true}}) {
            Config c = base;
            c.augment_bank = aug;
            c.refresh_bank = ref;
            out.push_back(c);
        }
        break;
    case AblationGrid::Dissimilarity:
        for (bool dm : {false, true}) {
            Config c = base;
            c.use_dissimilarity = dm;
            out.push_back(c);
        }
        break;
    case AblationGrid::Hyperparameters:
        for (double rho : rho_choices())
            for (double kl : alpha_kl_choices())
                for (double dr : alpha_dr_choices()) {
                    Config c = base;
                    c.rho = rho;
                    c.alpha_kl = kl;
                    c.alpha_dr = dr;
                    out.push_back(c);
                }
        break;
    }
    return out;
}

inline AblationRow summarize_row(const Config& c, const ReportTable& t) {
    AblationRow row{c.augment_bank, c.refresh_bank, c.use_dissimilarity, c.rho, c.alpha_kl, c.alpha_dr, 0.0, {}, {}, {}};
    row.detection = t.total().detection;
    row.localization = t.total().localization;
    for (std::size_t r = 0; r < t.runs; ++r) {
        double det = 0.0, loc = 0.0;
        std::size_t loc_n = 0;
        for (const auto& cls : t.classes) {
            det += cls.detection_runs[r];
            if (cls.localization_runs[r]) {
                loc += *cls.localization_runs[r];
                ++loc_n;
            }
        }
        row.detection_runs.push_back(det / static_cast<double>(t.classes.size()));
        row.localization_runs.push_back(loc_n ? std::optional(loc / static_cast<double>(loc_n)) : std::nullopt);
    }
    return row;
}

inline AblationTable ablation_table(const Dataset& ds, const Config& base, AblationGrid grid, FeatureExtractor& fx,
                                    const Logger& log = {}) {
    AblationTable table{grid, {}};
    for (const auto& c : ablation_configs(base, grid))
        table.rows.push_back(summarize_row(c, train_and_evaluate(c, ds, fx, c.runs, log)));
    return table;
}

inline void write_ablation_csv(std::ostream& os, const AblationTable& t) {
    os << "extra_feature,update_memory_bank,dissimilarity_matrix,rho,alpha_kl,alpha_dr,detection_auroc,"
          "localization_auroc,runs,detection_runs,localization_runs\n";
    for (const auto& r : t.rows)
        os << (r.augment_bank ? 1 : 0) << ',' << (r.refresh_bank ? 1 : 0) << ',' << (r.use_dissimilarity ? 1 : 0) << ','
           << detail::fmt(r.rho) << ',' << detail::fmt(r.alpha_kl) << ',' << detail::fmt(r.alpha_dr) << ','
           << detail::fmt(r.detection) << ',' << detail::fmt(r.localization) << ',' << r.detection_runs.size() << ','
           << detail::join(r.detection_runs) << ',' << detail::join(r.localization_runs) << '\n';
}

}  // namespace rdcfa
