#pragma once

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rdcfa/error.hpp"

namespace rdcfa {

/// Record of one CLI invocation: enough to rerun it (`--config manifest.json`
/// restores the configuration).
struct RunManifest {
    std::string command;
    std::vector<std::string> argv;
    std::map<std::string, std::string> config;
    std::vector<std::uint64_t> seeds;
    std::vector<std::string> inputs;
    std::string started;
    std::string finished;
    std::string status = "running";
    std::vector<std::string> artifacts;
};

inline std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

inline nlohmann::json to_json(const RunManifest& m) {
    return {{"command", m.command}, {"argv", m.argv},     {"config", m.config},
            {"seeds", m.seeds},     {"inputs", m.inputs},   {"started", m.started}, {"finished", m.finished},
            {"status", m.status},   {"artifacts", m.artifacts}};
}

inline void write_manifest(const std::filesystem::path& path, const RunManifest& m) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path);
    if (!os) throw MissingError("cannot write manifest " + path.string());
    os << to_json(m).dump(2) << '\n';
}

inline RunManifest read_manifest(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw MissingError("manifest not found: " + path.string());
    const auto j = nlohmann::json::parse(is);
    RunManifest m;
    m.command = j.at("command").get<std::string>();
    m.argv = j.at("argv").get<std::vector<std::string>>();
    m.config = j.at("config").get<std::map<std::string, std::string>>();
    m.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    m.inputs = j.value("inputs", std::vector<std::string>{});
    m.started = j.value("started", "");
    m.finished = j.value("finished", "");
    m.status = j.value("status", "");
    m.artifacts = j.value("artifacts", std::vector<std::string>{});
    return m;
}

}  // namespace rdcfa
