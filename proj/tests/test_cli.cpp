#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <iterator>
#include <sstream>

#include <nlohmann/json.hpp>

#include "oracles.hpp"

namespace fs = std::filesystem;

namespace {

struct Cli {
    int code = -1;
    std::string out;
};

const fs::path& workdir() {
    static const fs::path dir = oracle::scratch_dir("cli");
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), {}};
}

Cli run(const std::string& args) {
    const auto log = workdir() / "last.log";
    const std::string cmd = "cd '" + workdir().string() + "' && RDCFA_OUTPUT_ROOT='" + (workdir() / "default").string() +
                            "' '" RDCFA_CLI_PATH "' " + args + " > '" + log.string() + "' 2>&1";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(log)};
}

const fs::path& data() {
    static const fs::path root = [] {
        const auto dir = workdir() / "data";
        const auto r = run("synth --out '" + dir.string() + "' --classes 2 --size 32 --train 6 --test 4 --anomaly-min 4 "
                           "--anomaly-max 8 --seed 1");
        if (r.code != 0) throw std::runtime_error(r.out);
        return dir;
    }();
    return root;
}

std::string small(const fs::path& out) {
    return "--data '" + data().string() + "' --out '" + out.string() +
           "' --set backbone.name=tiny --set data.image_size=32 --set model.target_dim=8 --set model.latent_dim=4 "
           "--set train.epochs=2 --set experiment.runs=1 --set data.texture_classes=";
}

}  // namespace

TEST(Cli, HelpListsEveryKey) {
    const auto r = run("--help");
    EXPECT_EQ(r.code, 0);
    for (const auto& k : rdcfa::config_keys()) EXPECT_NE(r.out.find(k.key), std::string::npos) << k.key;
    const auto sub = run("train --help");
    EXPECT_EQ(sub.code, 0);
    EXPECT_NE(sub.out.find("cfa.alpha_dr"), std::string::npos);
}

TEST(Cli, SynthWritesManifestOutsideDataset) {
    data();
    EXPECT_TRUE(fs::exists(workdir() / "default" / "manifest_synth.json"));
    EXPECT_FALSE(fs::exists(data() / "manifest_synth.json"));
}

TEST(Cli, TrainIsReproducibleAndEvaluates) {
    const auto a = workdir() / "a", b = workdir() / "b";
    ASSERT_EQ(run("train --seed 7 " + small(a)).code, 0);
    ASSERT_EQ(run("train --seed 7 " + small(b)).code, 0);
    EXPECT_EQ(slurp(a / "checkpoint.rdcfa"), slurp(b / "checkpoint.rdcfa"));
    EXPECT_TRUE(fs::exists(a / "train_report.json"));

    const auto manifest = nlohmann::json::parse(slurp(a / "manifest_train.json"));
    EXPECT_EQ(manifest["status"], "ok");
    EXPECT_EQ(manifest["config"]["train.seed"], "7");
    EXPECT_EQ(manifest["seeds"][0], 7);

    // A manifest reproduces the run it describes.
    const auto c = workdir() / "c";
    ASSERT_EQ(run("train --config '" + (a / "manifest_train.json").string() + "' --out '" + c.string() + "'").code, 0);
    EXPECT_EQ(slurp(a / "checkpoint.rdcfa"), slurp(c / "checkpoint.rdcfa"));

    const auto e = workdir() / "eval";
    const auto r = run("evaluate --checkpoint '" + (a / "checkpoint.rdcfa").string() + "' --checkpoint '" +
                       (b / "checkpoint.rdcfa").string() + "' --out '" + e.string() + "'");
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_NE(slurp(e / "report.csv").find("avg. total"), std::string::npos);
    EXPECT_NE(slurp(e / "report.txt").find("(mean over 2 runs)"), std::string::npos);

    const auto s = workdir() / "score";
    const auto image = *fs::directory_iterator(data() / "class0_stripes" / "test" / "defect");
    const auto sr = run("score --masks --checkpoint '" + (a / "checkpoint.rdcfa").string() + "' --out '" + s.string() +
                        "' '" + image.path().string() + "'");
    ASSERT_EQ(sr.code, 0) << sr.out;
    const auto stem = image.path().stem().string();
    EXPECT_TRUE(fs::exists(s / (stem + "_score.png")));
    EXPECT_TRUE(fs::exists(s / (stem + "_mask.png")));
    EXPECT_NE(slurp(s / "scores.tsv").find("image\timage_score"), std::string::npos);

    // Other backbone weights than the checkpoint was trained with.
    const auto bad = run("evaluate --checkpoint '" + (a / "checkpoint.rdcfa").string() + "' --set backbone.seed=3 --out '" +
                         (workdir() / "bad").string() + "'");
    EXPECT_EQ(bad.code, 4) << bad.out;
}

TEST(Cli, ErrorCategoriesMapToExitCodes) {
    EXPECT_EQ(run("evaluate --checkpoint '" + (workdir() / "nothing.rdcfa").string() + "' --data '" + data().string() + "'").code, 3);
    std::ofstream(workdir() / "junk.rdcfa") << "not a checkpoint";
    EXPECT_EQ(run("evaluate --checkpoint '" + (workdir() / "junk.rdcfa").string() + "'").code, 4);
    EXPECT_EQ(run("train --set cfa.bogus=1 " + small(workdir() / "x")).code, 2);
    EXPECT_EQ(run("train --set train.batch_size=1 " + small(workdir() / "x")).code, 2);
    EXPECT_EQ(run("train --frobnicate").code, 2);
    EXPECT_EQ(run("train --out '" + (workdir() / "x").string() + "'").code, 2);
    EXPECT_EQ(run("synth --out '" + data().string() + "'").code, 5);
}

TEST(Cli, AblateFlagsGridHasFourRows) {
    const auto out = workdir() / "ablate";
    const auto r = run("ablate --grid flags " + small(out));
    ASSERT_EQ(r.code, 0) << r.out;
    std::istringstream csv(slurp(out / "ablation_flags.csv"));
    std::string line;
    std::size_t rows = 0;
    std::getline(csv, line);
    while (std::getline(csv, line))
        if (!line.empty()) ++rows;
    EXPECT_EQ(rows, 4u);
}
