#pragma once

#include <array>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rdcfa/error.hpp"
#include "rdcfa/trainer.hpp"

namespace rdcfa {

/// Every tunable of the tool. Serialized as flat dotted keys.
struct Config {
    // data
    std::string data_root;
    std::size_t image_size = 256;
    double val_fraction = 0.1;
    std::vector<std::string> texture_classes{"carpet", "grid", "leather", "tile", "wood"};
    std::array<double, 3> norm_mean{0.485, 0.456, 0.406};
    std::array<double, 3> norm_std{0.229, 0.224, 0.225};
    // backbone
    std::string backbone = "wide_resnet50_2";
    std::uint64_t backbone_seed = 0;
    std::string backbone_cache;
    // model
    std::size_t target_dim = 0;  // 0: same as the patch dimension D
    std::size_t latent_dim = 128;
    bool coordinate_channels = false;
    // cfa
    std::size_t K = 3;
    std::size_t J = 3;
    std::optional<double> r2;     // unset: 1e-5 * D'
    std::optional<double> alpha;  // unset: 0.1 * r2
    double alpha_kl = 0.5;
    double alpha_dr = 0.1;
    double rho = 10.0;
    // train
    std::size_t epochs = 30;
    std::size_t batch_size = 8;
    double learning_rate = 1e-3;
    double weight_decay = 5e-4;
    std::uint64_t seed = 0;
    bool augment_bank = true;
    bool refresh_bank = true;
    bool use_dissimilarity = true;
    // experiment / scoring / output
    std::size_t runs = 5;
    double sigma = 4.0;
    double threshold = 0.5;
    std::string output_root = "runs";
};

namespace config_detail {

inline std::string to_string(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, end);
}
inline std::string to_string(bool v) { return v ? "true" : "false"; }

inline double parse_double(const std::string& key, const std::string& s) {
    double v = 0.0;
    auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || end != s.data() + s.size()) throw ConfigError(key + ": not a number: '" + s + "'");
    return v;
}
inline std::uint64_t parse_uint(const std::string& key, const std::string& s) {
    std::uint64_t v = 0;
    auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || end != s.data() + s.size())
        throw ConfigError(key + ": not a non-negative integer: '" + s + "'");
    return v;
}
inline bool parse_bool(const std::string& key, const std::string& s) {
    if (s == "true" || s == "1" || s == "on" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "off" || s == "no") return false;
    throw ConfigError(key + ": not a boolean: '" + s + "'");
}
inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}
inline std::string join_list(const std::vector<std::string>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
    return s;
}
inline std::array<double, 3> parse_triple(const std::string& key, const std::string& s) {
    const auto parts = split_list(s);
    if (parts.size() != 3) throw ConfigError(key + ": expected three comma-separated numbers");
    return {parse_double(key, parts[0]), parse_double(key, parts[1]), parse_double(key, parts[2])};
}
inline std::string triple_string(const std::array<double, 3>& v) {
    return to_string(v[0]) + "," + to_string(v[1]) + "," + to_string(v[2]);
}

}  // namespace config_detail

struct ConfigKey {
    std::string key;
    std::string help;
    std::function<void(Config&, const std::string&)> set;
    std::function<std::string(const Config&)> get;
};

/// All config keys in display order.
inline const std::vector<ConfigKey>& config_keys() {
    using namespace config_detail;
    static const std::vector<ConfigKey> keys = [] {
        std::vector<ConfigKey> k;
        auto str = [&](std::string key, std::string help, std::string Config::*m) {
            k.push_back({key, help, [m](Config& c, const std::string& v) { c.*m = v; },
                         [m](const Config& c) { return c.*m; }});
        };
        auto num = [&](std::string key, std::string help, double Config::*m) {
            k.push_back({key, help, [m, key](Config& c, const std::string& v) { c.*m = parse_double(key, v); },
                         [m](const Config& c) { return to_string(c.*m); }});
        };
        auto size = [&](std::string key, std::string help, std::size_t Config::*m) {
            k.push_back({key, help, [m, key](Config& c, const std::string& v) { c.*m = parse_uint(key, v); },
                         [m](const Config& c) { return std::to_string(c.*m); }});
        };
        auto u64 = [&](std::string key, std::string help, std::uint64_t Config::*m) {
            k.push_back({key, help, [m, key](Config& c, const std::string& v) { c.*m = parse_uint(key, v); },
                         [m](const Config& c) { return std::to_string(c.*m); }});
        };
        auto flag = [&](std::string key, std::string help, bool Config::*m) {
            k.push_back({key, help, [m, key](Config& c, const std::string& v) { c.*m = parse_bool(key, v); },
                         [m](const Config& c) { return to_string(c.*m); }});
        };
        auto opt = [&](std::string key, std::string help, std::optional<double> Config::*m) {
            k.push_back({key, help,
                         [m, key](Config& c, const std::string& v) {
                             if (v == "auto")
                                 c.*m = std::nullopt;
                             else
                                 c.*m = parse_double(key, v);
                         },
                         [m](const Config& c) { return c.*m ? to_string(*(c.*m)) : std::string("auto"); }});
        };

        str("data.root", "dataset root (<class>/train/good, <class>/test/*, <class>/ground_truth/*)", &Config::data_root);
        size("data.image_size", "input resolution (square); must be divisible by the largest backbone stride",
             &Config::image_size);
        num("data.val_fraction", "fraction of each class's training images held out for loss monitoring",
            &Config::val_fraction);
        k.push_back({"data.texture_classes", "classes averaged as textures (others are objects); empty: total only",
                     [](Config& c, const std::string& v) { c.texture_classes = split_list(v); },
                     [](const Config& c) { return join_list(c.texture_classes); }});
        k.push_back({"data.norm_mean", "per-channel RGB normalization mean",
                     [](Config& c, const std::string& v) { c.norm_mean = parse_triple("data.norm_mean", v); },
                     [](const Config& c) { return triple_string(c.norm_mean); }});
        k.push_back({"data.norm_std", "per-channel RGB normalization standard deviation",
                     [](Config& c, const std::string& v) { c.norm_std = parse_triple("data.norm_std", v); },
                     [](const Config& c) { return triple_string(c.norm_std); }});
        str("backbone.name", "tiny | wide_resnet50_2", &Config::backbone);
        u64("backbone.seed", "weight seed of the tiny backbone", &Config::backbone_seed);
        str("backbone.cache_dir", "pretrained weight directory (default: $RDCFA_BACKBONE_CACHE, ~/.cache/rdcfa)",
            &Config::backbone_cache);
        size("model.target_dim", "descriptor output width D' (0: equal to the patch dimension D)", &Config::target_dim);
        size("model.latent_dim", "discriminator latent dimension m", &Config::latent_dim);
        flag("model.coordinate_channels", "append normalized (x, y) channels to the descriptor input",
             &Config::coordinate_channels);
        size("cfa.K", "attracting nearest neighbours", &Config::K);
        size("cfa.J", "hard negatives (neighbour ranks K+1..K+J)", &Config::J);
        opt("cfa.r2", "squared hypersphere radius (auto: 1e-5 * D')", &Config::r2);
        opt("cfa.alpha", "repulsion margin (auto: 0.1 * r2)", &Config::alpha);
        num("cfa.alpha_kl", "weight of the KL divergence term", &Config::alpha_kl);
        num("cfa.alpha_dr", "weight of the distribution repulsion term", &Config::alpha_dr);
        num("cfa.rho", "minimum squared distance between class means", &Config::rho);
        size("train.epochs", "training epochs", &Config::epochs);
        size("train.batch_size", "samples per batch (>= 2 with the dissimilarity matrix)", &Config::batch_size);
        num("train.learning_rate", "AdamW learning rate", &Config::learning_rate);
        num("train.weight_decay", "AdamW decoupled weight decay", &Config::weight_decay);
        u64("train.seed", "base seed (run i uses seed + i)", &Config::seed);
        flag("train.augment_bank", "append the latent mean and variance to memory bank entries", &Config::augment_bank);
        flag("train.refresh_bank", "rebuild the memory bank after every epoch", &Config::refresh_bank);
        flag("train.use_dissimilarity", "weight the repulsion by the batch dissimilarity matrix",
             &Config::use_dissimilarity);
        size("experiment.runs", "repetitions averaged by ablate", &Config::runs);
        num("score.sigma", "Gaussian smoothing sigma in pixels (0: off)", &Config::sigma);
        num("score.threshold", "raw-score threshold for binarized mask output", &Config::threshold);
        str("output.root", "output directory (default overridden by $RDCFA_OUTPUT_ROOT)", &Config::output_root);
        return k;
    }();
    return keys;
}

inline const ConfigKey& find_config_key(const std::string& key) {
    for (const auto& k : config_keys())
        if (k.key == key) return k;
    throw ConfigError("unknown config key '" + key + "'");
}

inline void set_config_value(Config& c, const std::string& key, const std::string& value) {
    find_config_key(key).set(c, value);
}

inline std::map<std::string, std::string> config_snapshot(const Config& c) {
    std::map<std::string, std::string> out;
    for (const auto& k : config_keys()) out[k.key] = k.get(c);
    return out;
}

inline void apply_assignment(Config& c, const std::string& line, const std::string& where) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key=value, got '" + line + "'");
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    try {
        set_config_value(c, key, value);
    } catch (const ConfigError& e) {
        throw ConfigError(where + ": " + e.what());
    }
}

/// Parses `key = value` lines ('#' starts a comment). A `.json` file is read
/// as a run manifest and its "config" object is applied instead.
inline void load_config_file(Config& c, const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw MissingError("config file not found: " + path.string());
    if (path.extension() == ".json") {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(is);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(path.string() + ": " + e.what());
        }
        if (!j.contains("config") || !j["config"].is_object()) throw ConfigError(path.string() + ": no config object");
        for (const auto& [key, value] : j["config"].items()) set_config_value(c, key, value.get<std::string>());
        return;
    }
    std::string line;
    std::size_t n = 0;
    while (std::getline(is, line)) {
        ++n;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        apply_assignment(c, line, path.string() + ":" + std::to_string(n));
    }
}

/// Resolves auto values against the patch dimension D of the backbone.
inline TrainConfig make_train_config(const Config& c, std::size_t patch_dim) {
    TrainConfig t;
    t.epochs = c.epochs;
    t.batch_size = c.batch_size;
    t.learning_rate = c.learning_rate;
    t.weight_decay = c.weight_decay;
    t.seed = c.seed;
    t.flags = {c.augment_bank, c.refresh_bank, c.use_dissimilarity};
    t.target_dim = c.target_dim == 0 ? patch_dim : c.target_dim;
    t.latent_dim = c.latent_dim;
    t.coordinate_channels = c.coordinate_channels;
    t.cfa.K = c.K;
    t.cfa.J = c.J;
    t.cfa.r2 = c.r2.value_or(1e-5 * static_cast<double>(t.target_dim));
    t.cfa.alpha = c.alpha.value_or(0.1 * t.cfa.r2);
    t.cfa.alpha_kl = c.alpha_kl;
    t.cfa.alpha_dr = c.alpha_dr;
    t.cfa.rho = c.rho;
    t.validate();
    return t;
}

}  // namespace rdcfa
