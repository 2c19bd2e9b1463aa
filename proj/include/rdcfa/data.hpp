#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "rdcfa/error.hpp"
#include "rdcfa/tensor.hpp"

namespace rdcfa {

namespace fs = std::filesystem;

enum class Split { Train, Test };

struct Sample {
    fs::path image;
    std::size_t label = 0;
    Split split = Split::Train;
    bool anomalous = false;
    std::optional<fs::path> mask;
    std::string defect = "good";
};

struct ClassData {
    std::string name;
    std::vector<Sample> train;
    std::vector<Sample> test;

    /// True when every abnormal test image has a mask.
    bool has_masks() const {
        return std::all_of(test.begin(), test.end(), [](const Sample& s) { return !s.anomalous || s.mask; });
    }
};

/// Multi-class dataset: one shared class index space, per-class test sets.
struct Dataset {
    fs::path root;
    std::vector<ClassData> classes;

    std::vector<std::string> class_names() const {
        std::vector<std::string> names;
        for (const auto& c : classes) names.push_back(c.name);
        return names;
    }

    /// Union of all classes' normal training images.
    std::vector<Sample> training_pool() const {
        std::vector<Sample> pool;
        for (const auto& c : classes) pool.insert(pool.end(), c.train.begin(), c.train.end());
        return pool;
    }
};

inline bool is_image_file(const fs::path& p) {
    static const std::set<std::string> exts = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"};
    auto ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return exts.count(ext) != 0;
}

inline std::vector<fs::path> list_images(const fs::path& dir) {
    std::vector<fs::path> out;
    if (!fs::is_directory(dir)) return out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && is_image_file(e.path())) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

inline std::vector<fs::path> list_dirs(const fs::path& dir) {
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_directory()) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

/// Reads `<class>/train/good/*`, `<class>/test/<defect-or-good>/*` and
/// `<class>/ground_truth/<defect>/*` (mask stem = image stem or stem + "_mask").
/// Classes are indexed in sorted directory order.
inline Dataset load_dataset(const fs::path& root) {
    if (!fs::is_directory(root)) throw MissingError("dataset root not found: " + root.string());
    Dataset ds;
    ds.root = root;
    for (const auto& class_dir : list_dirs(root)) {
        ClassData cd;
        cd.name = class_dir.filename().string();
        const std::size_t label = ds.classes.size();
        const auto train_dir = class_dir / "train" / "good";
        if (!fs::is_directory(train_dir)) throw DataError("class '" + cd.name + "': missing train/good");
        for (const auto& p : list_images(train_dir)) cd.train.push_back({p, label, Split::Train, false, std::nullopt, "good"});
        if (cd.train.empty()) throw DataError("class '" + cd.name + "': train/good holds no images");

        const auto test_root = class_dir / "test";
        if (fs::is_directory(test_root)) {
            for (const auto& defect_dir : list_dirs(test_root)) {
                const std::string defect = defect_dir.filename().string();
                const bool anomalous = defect != "good";
                const auto images = list_images(defect_dir);
                const auto gt_dir = class_dir / "ground_truth" / defect;
                if (!anomalous || !fs::is_directory(gt_dir)) {
                    for (const auto& p : images) cd.test.push_back({p, label, Split::Test, anomalous, std::nullopt, defect});
                    continue;
                }
                auto masks = list_images(gt_dir);
                std::vector<std::string> offenders;
                std::set<fs::path> used;
                for (const auto& p : images) {
                    const auto stem = p.stem().string();
                    auto it = std::find_if(masks.begin(), masks.end(), [&](const fs::path& m) {
                        return m.stem() == stem + "_mask" || m.stem() == stem;
                    });
                    if (it == masks.end()) {
                        offenders.push_back(p.string() + " (no mask)");
                        continue;
                    }
                    used.insert(*it);
                    cd.test.push_back({p, label, Split::Test, true, *it, defect});
                }
                for (const auto& m : masks)
                    if (!used.count(m)) offenders.push_back(m.string() + " (no image)");
                if (!offenders.empty() || masks.size() != images.size()) {
                    std::string msg = "class '" + cd.name + "', defect '" + defect + "': " +
                                      std::to_string(images.size()) + " images vs " + std::to_string(masks.size()) +
                                      " masks; offenders:";
                    for (const auto& o : offenders) msg += "\n  " + o;
                    throw DataError(msg);
                }
            }
        }
        ds.classes.push_back(std::move(cd));
    }
    if (ds.classes.empty()) throw DataError("dataset root holds no class directories: " + root.string());
    return ds;
}

/// 8-bit image file to an RGB tensor in [0, 1] at size x size.
inline Tensor3 read_image(const fs::path& path, std::size_t size) {
    cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (bgr.empty()) throw MissingError("cannot read image " + path.string());
    if (static_cast<std::size_t>(bgr.rows) != size || static_cast<std::size_t>(bgr.cols) != size)
        cv::resize(bgr, bgr, cv::Size(static_cast<int>(size), static_cast<int>(size)), 0, 0, cv::INTER_LINEAR);
    Tensor3 t(3, size, size);
    for (std::size_t y = 0; y < size; ++y) {
        const auto* row = bgr.ptr<cv::Vec3b>(static_cast<int>(y));
        for (std::size_t x = 0; x < size; ++x)
            for (std::size_t c = 0; c < 3; ++c) t(c, y, x) = row[x][2 - c] / 255.0;
    }
    return t;
}

/// Binary mask (nonzero = anomalous) at size x size, nearest-neighbour resized.
inline std::vector<std::uint8_t> read_mask(const fs::path& path, std::size_t size) {
    cv::Mat m = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
    if (m.empty()) throw MissingError("cannot read mask " + path.string());
    if (static_cast<std::size_t>(m.rows) != size || static_cast<std::size_t>(m.cols) != size)
        cv::resize(m, m, cv::Size(static_cast<int>(size), static_cast<int>(size)), 0, 0, cv::INTER_NEAREST);
    std::vector<std::uint8_t> out(size * size);
    for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) out[y * size + x] = m.at<std::uint8_t>(static_cast<int>(y), static_cast<int>(x)) ? 1 : 0;
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic multi-class texture data

struct SyntheticSpec {
    std::size_t n_classes = 3;
    std::size_t image_size = 64;
    std::size_t train_per_class = 20;
    std::size_t test_per_class = 10;  // half good, half defective
    std::size_t anomaly_min = 10;
    std::size_t anomaly_max = 20;
    std::uint64_t seed = 0;

    void validate() const {
        if (n_classes < 2) throw ConfigError("synthetic: n_classes must be >= 2");
        if (image_size < 1 || train_per_class < 1 || test_per_class < 2)
            throw ConfigError("synthetic: sizes must be positive (test_per_class >= 2)");
        if (anomaly_min < 1 || anomaly_min > anomaly_max || anomaly_max > image_size)
            throw ConfigError("synthetic: anomaly size range must satisfy 1 <= min <= max <= image_size");
    }
};

struct AnomalyPlacement {
    std::string class_name;
    fs::path image;
    fs::path mask;
    std::size_t x = 0, y = 0, width = 0, height = 0;
};

struct SyntheticResult {
    fs::path root;
    std::vector<std::string> class_names;
    std::vector<AnomalyPlacement> placements;
};

/// Parametric texture: stripes, checkerboard or dots between two colours.
struct Texture {
    enum class Kind { Stripes, Checkerboard, Dots } kind = Kind::Stripes;
    double period = 8.0;
    double angle = 0.0;
    double phase_x = 0.0, phase_y = 0.0;
    std::array<double, 3> fg{1, 1, 1}, bg{0, 0, 0};

    static Texture random(Kind kind, std::mt19937_64& rng) {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        Texture t;
        t.kind = kind;
        t.period = 6.0 + 8.0 * u(rng);
        t.angle = 3.14159265358979 * u(rng);
        t.phase_x = t.period * u(rng);
        t.phase_y = t.period * u(rng);
        for (auto& c : t.fg) c = 0.55 + 0.45 * u(rng);
        for (auto& c : t.bg) c = 0.35 * u(rng);
        return t;
    }

    /// Foreground weight in [0, 1] at pixel (x, y), anti-aliased.
    double weight(double x, double y) const {
        const double px = x + phase_x, py = y + phase_y;
        auto soft = [](double v) { return 0.5 + 0.5 * std::tanh(4.0 * v); };
        switch (kind) {
        case Kind::Stripes: {
            const double u = px * std::cos(angle) + py * std::sin(angle);
            return soft(std::sin(2.0 * 3.14159265358979 * u / period));
        }
        case Kind::Checkerboard:
            return soft(std::sin(2.0 * 3.14159265358979 * px / period) *
                        std::sin(2.0 * 3.14159265358979 * py / period) * 2.0);
        case Kind::Dots: {
            const double cx = std::fmod(px, period) - period / 2.0;
            const double cy = std::fmod(py, period) - period / 2.0;
            return soft(period * 0.3 - std::sqrt(cx * cx + cy * cy));
        }
        }
        return 0.0;
    }

    std::array<double, 3> colour(double x, double y) const {
        const double w = weight(x, y);
        return {bg[0] + (fg[0] - bg[0]) * w, bg[1] + (fg[1] - bg[1]) * w, bg[2] + (fg[2] - bg[2]) * w};
    }
};

namespace detail {

inline cv::Mat render(const Texture& tex, std::size_t size, double jitter_x, double jitter_y, double gain,
                      std::mt19937_64& rng) {
    std::normal_distribution<double> noise(0.0, 0.02);
    cv::Mat img(static_cast<int>(size), static_cast<int>(size), CV_8UC3);
    for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
            const auto c = tex.colour(static_cast<double>(x) + jitter_x, static_cast<double>(y) + jitter_y);
            auto& px = img.at<cv::Vec3b>(static_cast<int>(y), static_cast<int>(x));
            for (int ch = 0; ch < 3; ++ch) {
                const double v = std::clamp(c[static_cast<std::size_t>(ch)] * gain + noise(rng), 0.0, 1.0);
                px[2 - ch] = static_cast<std::uint8_t>(std::lround(v * 255.0));  // BGR storage
            }
        }
    return img;
}

inline void write_png(const fs::path& path, const cv::Mat& img) {
    fs::create_directories(path.parent_path());
    if (!cv::imwrite(path.string(), img)) throw DataError("cannot write " + path.string());
}

inline std::string index_name(std::size_t i) {
    std::string s = std::to_string(i);
    return std::string(s.size() < 3 ? 3 - s.size() : 0, '0') + s;
}

}  // namespace detail

/// Writes a dataset in the standard layout. Class c is a fixed procedural
/// texture (kind cycles stripes/checkerboard/dots); samples differ by noise,
/// gain and a sub-pixel shift. Defective test images carry one rectangle of a
/// foreign texture, recorded exactly in the mask. Fully determined by the seed.
inline SyntheticResult generate_synthetic(const SyntheticSpec& spec, const fs::path& root) {
    spec.validate();
    if (fs::exists(root) && !fs::is_empty(root)) throw DataError("synthetic output directory is not empty: " + root.string());
    fs::create_directories(root);
    SyntheticResult result;
    result.root = root;
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const std::size_t n_good = spec.test_per_class / 2;
    const std::size_t n_bad = spec.test_per_class - n_good;
    constexpr Texture::Kind kinds[] = {Texture::Kind::Stripes, Texture::Kind::Checkerboard, Texture::Kind::Dots};
    static const char* kind_names[] = {"stripes", "checker", "dots"};

    for (std::size_t c = 0; c < spec.n_classes; ++c) {
        const std::string name = "class" + std::to_string(c) + "_" + kind_names[c % 3];
        result.class_names.push_back(name);
        const Texture tex = Texture::random(kinds[c % 3], rng);
        const auto class_dir = root / name;
        auto normal = [&] {
            const double jx = u(rng) - 0.5, jy = u(rng) - 0.5, gain = 0.95 + 0.1 * u(rng);
            return detail::render(tex, spec.image_size, jx, jy, gain, rng);
        };
        for (std::size_t i = 0; i < spec.train_per_class; ++i)
            detail::write_png(class_dir / "train" / "good" / (detail::index_name(i) + ".png"), normal());
        for (std::size_t i = 0; i < n_good; ++i)
            detail::write_png(class_dir / "test" / "good" / (detail::index_name(i) + ".png"), normal());
        for (std::size_t i = 0; i < n_bad; ++i) {
            cv::Mat img = normal();
            const auto span = spec.anomaly_max - spec.anomaly_min + 1;
            const auto w = spec.anomaly_min + static_cast<std::size_t>(u(rng) * static_cast<double>(span)) % span;
            const auto h = spec.anomaly_min + static_cast<std::size_t>(u(rng) * static_cast<double>(span)) % span;
            const auto x0 = static_cast<std::size_t>(u(rng) * static_cast<double>(spec.image_size - w + 1)) %
                            (spec.image_size - w + 1);
            const auto y0 = static_cast<std::size_t>(u(rng) * static_cast<double>(spec.image_size - h + 1)) %
                            (spec.image_size - h + 1);
            Texture foreign = Texture::random(kinds[static_cast<std::size_t>(u(rng) * 3.0) % 3], rng);
            foreign.period *= 0.5;
            cv::Mat patch = detail::render(foreign, spec.image_size, 0.0, 0.0, 1.0, rng);
            cv::Mat mask = cv::Mat::zeros(static_cast<int>(spec.image_size), static_cast<int>(spec.image_size), CV_8UC1);
            const cv::Rect rect(static_cast<int>(x0), static_cast<int>(y0), static_cast<int>(w), static_cast<int>(h));
            patch(rect).copyTo(img(rect));
            mask(rect).setTo(255);
            const auto image_path = class_dir / "test" / "defect" / (detail::index_name(i) + ".png");
            const auto mask_path = class_dir / "ground_truth" / "defect" / (detail::index_name(i) + "_mask.png");
            detail::write_png(image_path, img);
            detail::write_png(mask_path, mask);
            result.placements.push_back({name, image_path, mask_path, x0, y0, w, h});
        }
    }
    std::ofstream csv(root / "placements.csv");
    csv << "class,image,mask,x,y,width,height\n";
    for (const auto& p : result.placements)
        csv << p.class_name << ',' << fs::relative(p.image, root).string() << ',' << fs::relative(p.mask, root).string()
            << ',' << p.x << ',' << p.y << ',' << p.width << ',' << p.height << '\n';
    return result;
}

}  // namespace rdcfa
