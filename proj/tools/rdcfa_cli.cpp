// rdcfa: train, evaluate, score, synth, ablate.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>

#include "rdcfa/rdcfa.hpp"

namespace fs = std::filesystem;
using rdcfa::Config;

namespace {

constexpr const char* kOutputRootEnv = "RDCFA_OUTPUT_ROOT";

std::string key_listing() {
    const Config defaults;
    std::ostringstream os;
    os << "Config keys (key = default  description):\n";
    for (const auto& k : rdcfa::config_keys()) {
        std::string line = "  " + k.key + " = " + k.get(defaults);
        if (line.size() < 44) line.resize(44, ' ');
        os << line << "  " << k.help << '\n';
    }
    os << "\nPrecedence: --set/flags > --config file > $" << kOutputRootEnv << " > defaults.\n"
       << "Exit codes: 1 generic, 2 config, 3 missing file, 4 shape/version, 5 data, 6 numeric.\n";
    return os.str();
}

/// Options shared by every subcommand that resolves a configuration.
struct ConfigArgs {
    std::string config_file;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    std::string data;
    std::string out;

    void attach(CLI::App* cmd, bool with_data = true) {
        cmd->add_option("--config", config_file, "config file (key = value lines) or a run manifest (.json)");
        cmd->add_option("--set", sets, "override, key=value (repeatable)");
        cmd->add_option("--seed", seed, "shorthand for --set train.seed=N");
        if (with_data) cmd->add_option("--data", data, "shorthand for --set data.root=DIR");
        cmd->add_option("--out", out, "shorthand for --set output.root=DIR");
    }

    void apply(Config& c) const {
        if (!config_file.empty()) rdcfa::load_config_file(c, config_file);
        for (const auto& s : sets) rdcfa::apply_assignment(c, s, "--set");
        if (seed) c.seed = *seed;
        if (!data.empty()) c.data_root = data;
        if (!out.empty()) c.output_root = out;
    }
};

Config base_config() {
    Config c;
    if (const char* env = std::getenv(kOutputRootEnv); env && *env) c.output_root = env;
    return c;
}

Config resolve(const ConfigArgs& args) {
    Config c = base_config();
    args.apply(c);
    return c;
}

/// Starts from the configuration stored in a checkpoint; command-line values
/// still take precedence.
Config resolve_from_checkpoint(const rdcfa::Checkpoint& ck, const ConfigArgs& args) {
    Config c = base_config();
    const auto out_root = c.output_root;
    for (const auto& [key, value] : ck.config) rdcfa::set_config_value(c, key, value);
    c.output_root = out_root;
    args.apply(c);
    return c;
}

rdcfa::Logger stderr_logger() {
    return [](std::string_view msg) { std::cerr << msg << '\n'; };
}

nlohmann::json loss_json(const rdcfa::LossBreakdown& l) {
    return {{"f_att", l.f_att}, {"f_rep", l.f_rep}, {"kld", l.kld}, {"d_rep", l.d_rep}, {"total", l.total}};
}

nlohmann::json report_json(const rdcfa::TrainReport& r) {
    nlohmann::json j;
    j["epochs"] = nlohmann::json::array();
    for (const auto& e : r.epochs) j["epochs"].push_back(loss_json(e));
    j["validation"] = nlohmann::json::array();
    for (const auto& e : r.validation) j["validation"].push_back(loss_json(e));
    j["skipped_batches"] = r.skipped_batches;
    j["degenerate_batches"] = r.degenerate_batches;
    j["final_epoch_stamp"] = r.final_epoch_stamp;
    j["wall_seconds"] = r.wall_seconds;
    return j;
}

void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    std::ofstream os(path);
    if (!os) throw rdcfa::MissingError("cannot write " + path.string());
    os << text;
}

std::string report_csv(const rdcfa::ReportTable& t) {
    std::ostringstream os;
    rdcfa::write_report_csv(os, t);
    return os.str();
}

std::string report_text(const rdcfa::ReportTable& t) {
    std::ostringstream os;
    rdcfa::write_report_text(os, t);
    return os.str();
}

void require_data_root(const Config& c) {
    if (c.data_root.empty()) throw rdcfa::ConfigError("data.root is not set (use --data or --set data.root=DIR)");
    if (!fs::is_directory(c.data_root)) throw rdcfa::MissingError("dataset root not found: " + c.data_root);
}

rdcfa::Checkpoint load_and_check(const std::string& path, rdcfa::FeatureExtractor& fx) {
    auto ck = rdcfa::load_checkpoint(path);
    if (ck.backbone_name != fx.backbone().name() || ck.backbone_fingerprint != fx.backbone().fingerprint())
        throw rdcfa::ShapeError(path + ": trained with backbone '" + ck.backbone_name +
                                "' whose weights differ from the configured one");
    return ck;
}

/// Manifest bookkeeping around one command body.
class Run {
public:
    Run(std::string command, int argc, char** argv) {
        m_.command = std::move(command);
        for (int i = 0; i < argc; ++i) m_.argv.emplace_back(argv[i]);
        m_.started = rdcfa::utc_timestamp();
    }

    rdcfa::RunManifest& manifest() { return m_; }

    void begin(const Config& c, fs::path dir, std::vector<std::uint64_t> seeds) {
        dir_ = std::move(dir);
        m_.config = rdcfa::config_snapshot(c);
        m_.seeds = std::move(seeds);
        rdcfa::write_manifest(path(), m_);
    }

    fs::path path() const { return dir_ / ("manifest_" + m_.command + ".json"); }

    void artifact(const fs::path& p) { m_.artifacts.push_back(p.string()); }

    void finish(const std::string& status) {
        m_.status = status;
        m_.finished = rdcfa::utc_timestamp();
        if (dir_.empty()) dir_ = base_config().output_root;
        try {
            rdcfa::write_manifest(path(), m_);
        } catch (const std::exception& e) {
            std::cerr << "warning: " << e.what() << '\n';
        }
    }

private:
    rdcfa::RunManifest m_;
    fs::path dir_;
};

// ---------------------------------------------------------------------------

void cmd_train(Run& run, const ConfigArgs& args) {
    const Config c = resolve(args);
    require_data_root(c);
    const fs::path out = c.output_root;
    const auto ck_path = out / "checkpoint.rdcfa";
    const auto report_path = out / "train_report.json";
    run.manifest().inputs = {c.data_root};
    run.artifact(ck_path);
    run.artifact(report_path);
    run.begin(c, out, {c.seed});

    const auto ds = rdcfa::load_dataset(c.data_root);
    auto fx = rdcfa::FeatureExtractor::from_config(c);
    auto [ck, report] = rdcfa::train_checkpoint(c, ds, fx, stderr_logger());
    rdcfa::save_checkpoint(ck_path, ck);
    write_text(report_path, report_json(report).dump(2) + "\n");
    std::cout << "checkpoint: " << ck_path.string() << '\n';
}

void cmd_evaluate(Run& run, const ConfigArgs& args, const std::vector<std::string>& checkpoints) {
    auto first = rdcfa::load_checkpoint(checkpoints.front());
    const Config c = resolve_from_checkpoint(first, args);
    require_data_root(c);
    const fs::path out = c.output_root;
    run.manifest().inputs = checkpoints;
    run.manifest().inputs.push_back(c.data_root);
    run.artifact(out / "report.csv");
    run.artifact(out / "report.txt");
    std::vector<std::uint64_t> seeds;
    for (const auto& p : checkpoints) {
        const auto ck = p == checkpoints.front() ? first : rdcfa::load_checkpoint(p);
        seeds.push_back(std::stoull(ck.config.at("train.seed")));
    }
    run.begin(c, out, seeds);

    const auto ds = rdcfa::load_dataset(c.data_root);
    auto fx = rdcfa::FeatureExtractor::from_config(c);
    std::vector<rdcfa::ReportTable> tables;
    for (const auto& p : checkpoints) {
        const auto ck = load_and_check(p, fx);
        if (ck.class_names != ds.class_names())
            throw rdcfa::DataError(p + ": checkpoint classes differ from the dataset's classes");
        tables.push_back(rdcfa::evaluate(ck.model, ck.bank, ds, fx, c));
    }
    const auto table = rdcfa::merge_runs(tables);
    write_text(out / "report.csv", report_csv(table));
    const auto text = report_text(table);
    write_text(out / "report.txt", text);
    std::cout << text;
}

void write_score_png(const fs::path& path, const rdcfa::AnomalyMap& map) {
    cv::Mat img(static_cast<int>(map.height), static_cast<int>(map.width), CV_16UC1);
    const double scale = map.image_score > 0.0 ? 65535.0 / map.image_score : 0.0;
    for (std::size_t y = 0; y < map.height; ++y)
        for (std::size_t x = 0; x < map.width; ++x) {
            const double v = std::clamp(map.pixel_scores[y * map.width + x] * scale, 0.0, 65535.0);
            img.at<std::uint16_t>(static_cast<int>(y), static_cast<int>(x)) = static_cast<std::uint16_t>(std::lround(v));
        }
    if (!cv::imwrite(path.string(), img)) throw rdcfa::DataError("cannot write " + path.string());
}

void write_mask_png(const fs::path& path, const rdcfa::AnomalyMap& map, double threshold) {
    cv::Mat img(static_cast<int>(map.height), static_cast<int>(map.width), CV_8UC1);
    for (std::size_t y = 0; y < map.height; ++y)
        for (std::size_t x = 0; x < map.width; ++x)
            img.at<std::uint8_t>(static_cast<int>(y), static_cast<int>(x)) =
                map.pixel_scores[y * map.width + x] >= threshold ? 255 : 0;
    if (!cv::imwrite(path.string(), img)) throw rdcfa::DataError("cannot write " + path.string());
}

void cmd_score(Run& run, const ConfigArgs& args, const std::string& checkpoint, const std::vector<std::string>& images,
               bool masks) {
    auto ck = rdcfa::load_checkpoint(checkpoint);
    const Config c = resolve_from_checkpoint(ck, args);
    const fs::path out = c.output_root;
    run.manifest().inputs = {checkpoint};
    run.manifest().inputs.insert(run.manifest().inputs.end(), images.begin(), images.end());
    for (const auto& img : images) {
        if (!fs::exists(img)) throw rdcfa::MissingError("image not found: " + img);
        const auto stem = fs::path(img).stem().string();
        run.artifact(out / (stem + "_score.png"));
        if (masks) run.artifact(out / (stem + "_mask.png"));
    }
    run.artifact(out / "scores.tsv");
    run.begin(c, out, {std::stoull(ck.config.at("train.seed"))});

    auto fx = rdcfa::FeatureExtractor::from_config(c);
    ck = load_and_check(checkpoint, fx);
    std::ostringstream tsv;
    tsv << "image\timage_score\n";
    for (const auto& img : images) {
        const auto map = rdcfa::score_features(fx.features(img), ck.model, ck.bank, c.image_size, c.sigma);
        const auto stem = fs::path(img).stem().string();
        write_score_png(out / (stem + "_score.png"), map);
        if (masks) write_mask_png(out / (stem + "_mask.png"), map, c.threshold);
        tsv << img << '\t' << rdcfa::detail::fmt(map.image_score) << '\n';
        std::cout << img << '\t' << rdcfa::detail::fmt(map.image_score) << '\n';
    }
    write_text(out / "scores.tsv", tsv.str());
}

void cmd_synth(Run& run, const rdcfa::SyntheticSpec& spec, const std::string& out_dir) {
    Config c = base_config();
    c.data_root = out_dir;
    c.image_size = spec.image_size;
    c.texture_classes.clear();
    run.artifact(out_dir);
    run.begin(c, c.output_root, {spec.seed});
    const auto result = rdcfa::generate_synthetic(spec, out_dir);
    std::cout << "wrote " << result.class_names.size() << " classes, " << result.placements.size()
              << " abnormal images to " << out_dir << '\n';
}

const char* grid_name(rdcfa::AblationGrid g) {
    switch (g) {
    case rdcfa::AblationGrid::Flags: return "flags";
    case rdcfa::AblationGrid::Dissimilarity: return "dissimilarity";
    case rdcfa::AblationGrid::Hyperparameters: return "hyper";
    }
    return "";
}

void cmd_ablate(Run& run, const ConfigArgs& args, const std::vector<std::string>& grid_names) {
    const Config c = resolve(args);
    require_data_root(c);
    std::vector<rdcfa::AblationGrid> grids;
    for (const auto& g : grid_names) {
        if (g == "flags" || g == "all") grids.push_back(rdcfa::AblationGrid::Flags);
        if (g == "dissimilarity" || g == "all") grids.push_back(rdcfa::AblationGrid::Dissimilarity);
        if (g == "hyper" || g == "all") grids.push_back(rdcfa::AblationGrid::Hyperparameters);
    }
    const fs::path out = c.output_root;
    for (auto g : grids) run.artifact(out / (std::string("ablation_") + grid_name(g) + ".csv"));
    std::vector<std::uint64_t> seeds;
    for (std::size_t r = 0; r < c.runs; ++r) seeds.push_back(c.seed + r);
    run.manifest().inputs = {c.data_root};
    run.begin(c, out, seeds);

    const auto ds = rdcfa::load_dataset(c.data_root);
    auto fx = rdcfa::FeatureExtractor::from_config(c);
    for (auto g : grids) {
        const auto table = rdcfa::ablation_table(ds, c, g, fx, stderr_logger());
        std::ostringstream csv;
        rdcfa::write_ablation_csv(csv, table);
        write_text(out / (std::string("ablation_") + grid_name(g) + ".csv"), csv.str());
        std::cout << "[" << grid_name(g) << "]\n" << csv.str();
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"rdcfa: multi-class anomaly detection with coupled hyperspheres and a regularized discriminator"};
    app.footer(key_listing());
    app.require_subcommand(1);

    ConfigArgs train_args, eval_args, score_args, ablate_args;
    auto* train = app.add_subcommand("train", "train one model; writes checkpoint.rdcfa and train_report.json");
    train_args.attach(train);
    train->footer(key_listing());

    std::vector<std::string> checkpoints;
    auto* evaluate = app.add_subcommand("evaluate", "detection/localization AUROC per class; report.csv and report.txt");
    eval_args.attach(evaluate);
    evaluate->add_option("--checkpoint", checkpoints, "checkpoint(s); several are averaged as runs")->required();
    evaluate->footer(key_listing());

    std::string score_ck;
    std::vector<std::string> images;
    bool masks = false;
    auto* score = app.add_subcommand("score", "anomaly maps for images: <stem>_score.png (16-bit, scaled by the map "
                                              "max), optional <stem>_mask.png, scores.tsv");
    score_args.attach(score, false);
    score->add_option("--checkpoint", score_ck, "trained checkpoint")->required();
    score->add_flag("--masks", masks, "also write masks binarized at score.threshold");
    score->add_option("images", images, "image files")->required();
    score->footer(key_listing());

    rdcfa::SyntheticSpec spec;
    std::string synth_out;
    auto* synth = app.add_subcommand("synth", "generate a synthetic multi-class dataset");
    synth->add_option("--out", synth_out, "output directory (must be empty or absent)")->required();
    synth->add_option("--classes", spec.n_classes, "number of classes")->capture_default_str();
    synth->add_option("--size", spec.image_size, "image side in pixels")->capture_default_str();
    synth->add_option("--train", spec.train_per_class, "normal training images per class")->capture_default_str();
    synth->add_option("--test", spec.test_per_class, "test images per class (half defective)")->capture_default_str();
    synth->add_option("--anomaly-min", spec.anomaly_min, "smallest defect side")->capture_default_str();
    synth->add_option("--anomaly-max", spec.anomaly_max, "largest defect side")->capture_default_str();
    synth->add_option("--seed", spec.seed, "generator seed")->capture_default_str();

    std::vector<std::string> grid{"flags", "dissimilarity"};
    auto* ablate = app.add_subcommand("ablate", "ablation grids; writes ablation_<grid>.csv");
    ablate_args.attach(ablate);
    ablate->add_option("--grid", grid, "flags | dissimilarity | hyper | all (repeatable)")
        ->check(CLI::IsMember({"flags", "dissimilarity", "hyper", "all"}))
        ->capture_default_str();
    ablate->footer(key_listing());

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : static_cast<int>(rdcfa::Error::Category::Config);
    }

    auto* cmd = app.get_subcommands().front();
    Run run(cmd->get_name(), argc, argv);
    try {
        if (cmd == train) cmd_train(run, train_args);
        else if (cmd == evaluate) cmd_evaluate(run, eval_args, checkpoints);
        else if (cmd == score) cmd_score(run, score_args, score_ck, images, masks);
        else if (cmd == synth) cmd_synth(run, spec, synth_out);
        else if (cmd == ablate) cmd_ablate(run, ablate_args, grid);
        run.finish("ok");
        return 0;
    } catch (const rdcfa::Error& e) {
        run.finish(std::string("failed: ") + e.what());
        std::cerr << "error [" << rdcfa::exit_code(e) << "]: " << e.what() << '\n';
        return rdcfa::exit_code(e);
    } catch (const std::exception& e) {
        run.finish(std::string("failed: ") + e.what());
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
