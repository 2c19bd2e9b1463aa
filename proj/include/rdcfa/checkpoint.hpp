#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rdcfa/error.hpp"
#include "rdcfa/memory_bank.hpp"
#include "rdcfa/model.hpp"

namespace rdcfa {

inline constexpr int kCheckpointVersion = 1;
inline constexpr const char* kCheckpointFormat = "rdcfa-checkpoint";

/// Everything needed to score images: trained parameters, the memory bank,
/// and the configuration that produced them.
struct Checkpoint {
    std::map<std::string, std::string> config;
    std::vector<std::string> class_names;
    std::string backbone_name;
    std::uint64_t backbone_seed = 0;
    std::uint64_t backbone_fingerprint = 0;
    RdCfaModel model;
    MemoryBank bank;
};

namespace checkpoint_detail {

using json = nlohmann::json;

template <class Derived>
json encode(const Eigen::PlainObjectBase<Derived>& m) {
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(m.size()) * sizeof(double));
    if (!bytes.empty()) std::memcpy(bytes.data(), m.data(), bytes.size());
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", json::binary(std::move(bytes))}};
}

inline Matrix decode_matrix(const json& j, const std::string& what) {
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const auto& bytes = j.at("data").get_binary();
    if (bytes.size() != static_cast<std::size_t>(rows * cols) * sizeof(double))
        throw ShapeError("checkpoint: " + what + " payload size does not match its shape");
    Matrix m(rows, cols);
    if (!bytes.empty()) std::memcpy(m.data(), bytes.data(), bytes.size());
    return m;
}

inline Vector decode_vector(const json& j, const std::string& what) {
    Matrix m = decode_matrix(j, what);
    if (m.cols() != 1) throw ShapeError("checkpoint: " + what + " is not a vector");
    return m.col(0);
}

}  // namespace checkpoint_detail

inline std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ck) {
    using checkpoint_detail::encode;
    using checkpoint_detail::json;
    const auto& m = ck.model;
    json j;
    j["format"] = kCheckpointFormat;
    j["version"] = kCheckpointVersion;
    j["config"] = ck.config;
    j["class_names"] = ck.class_names;
    j["backbone"] = {{"name", ck.backbone_name}, {"seed", ck.backbone_seed}, {"fingerprint", ck.backbone_fingerprint}};
    j["descriptor"] = {{"input_dim", m.descriptor.config().input_dim},
                       {"output_dim", m.descriptor.config().output_dim},
                       {"coordinate_channels", m.descriptor.config().use_coordinate_channels},
                       {"weight", encode(m.descriptor.weight())},
                       {"bias", encode(m.descriptor.bias())}};
    j["discriminator"] = {{"mu_weight", encode(m.discriminator.mu_weight())},
                          {"mu_bias", encode(m.discriminator.mu_bias())},
                          {"lv_weight", encode(m.discriminator.lv_weight())},
                          {"lv_bias", encode(m.discriminator.lv_bias())}};
    j["class_means"] = encode(m.class_means.means);
    j["augment_bank"] = m.augment_bank;
    j["bank"] = {{"augmented", ck.bank.augmented()},
                 {"epoch_stamp", ck.bank.epoch_stamp()},
                 {"entries", encode(ck.bank.entries())}};
    return json::to_cbor(j);
}

/// Rejects foreign formats, other versions, and banks whose width disagrees
/// with the model configuration.
inline Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
    using namespace checkpoint_detail;
    json j;
    try {
        j = json::from_cbor(bytes);
    } catch (const json::exception& e) {
        throw ShapeError(std::string("checkpoint: unreadable container: ") + e.what());
    }
    try {
        if (!j.contains("format") || j["format"] != kCheckpointFormat) throw ShapeError("checkpoint: not an rdcfa checkpoint");
        const int version = j.at("version").get<int>();
        if (version != kCheckpointVersion)
            throw ShapeError("checkpoint: format version " + std::to_string(version) + " unsupported (expected " +
                             std::to_string(kCheckpointVersion) + ")");
        Checkpoint ck;
        ck.config = j.at("config").get<std::map<std::string, std::string>>();
        ck.class_names = j.at("class_names").get<std::vector<std::string>>();
        ck.backbone_name = j.at("backbone").at("name").get<std::string>();
        ck.backbone_seed = j.at("backbone").at("seed").get<std::uint64_t>();
        ck.backbone_fingerprint = j.at("backbone").at("fingerprint").get<std::uint64_t>();

        const auto& d = j.at("descriptor");
        DescriptorConfig dc{d.at("input_dim").get<std::size_t>(), d.at("output_dim").get<std::size_t>(),
                            d.at("coordinate_channels").get<bool>()};
        ck.model.descriptor = PatchDescriptor(dc, 0);
        ck.model.descriptor.weight() = decode_matrix(d.at("weight"), "descriptor weight");
        ck.model.descriptor.bias() = decode_vector(d.at("bias"), "descriptor bias");
        if (static_cast<std::size_t>(ck.model.descriptor.weight().rows()) != dc.output_dim ||
            static_cast<std::size_t>(ck.model.descriptor.weight().cols()) != dc.effective_input_dim())
            throw ShapeError("checkpoint: descriptor weight shape disagrees with its configuration");

        const auto& q = j.at("discriminator");
        ck.model.discriminator = Discriminator(dc.output_dim, 1, 0);
        ck.model.discriminator.mu_weight() = decode_matrix(q.at("mu_weight"), "discriminator mean weight");
        ck.model.discriminator.mu_bias() = decode_vector(q.at("mu_bias"), "discriminator mean bias");
        ck.model.discriminator.lv_weight() = decode_matrix(q.at("lv_weight"), "discriminator log-variance weight");
        ck.model.discriminator.lv_bias() = decode_vector(q.at("lv_bias"), "discriminator log-variance bias");
        const auto latent = ck.model.discriminator.latent_dim();
        if (ck.model.discriminator.input_dim() != dc.output_dim ||
            static_cast<std::size_t>(ck.model.discriminator.lv_weight().rows()) != latent)
            throw ShapeError("checkpoint: discriminator shape disagrees with the descriptor");

        ck.model.class_means.means = decode_matrix(j.at("class_means"), "class means");
        if (ck.model.class_means.latent_dim() != latent || ck.model.class_means.classes() != ck.class_names.size())
            throw ShapeError("checkpoint: class means shape disagrees with the model");
        ck.model.augment_bank = j.at("augment_bank").get<bool>();

        const auto& b = j.at("bank");
        const bool augmented = b.at("augmented").get<bool>();
        Matrix entries = decode_matrix(b.at("entries"), "memory bank");
        const auto expected = entry_width(dc.output_dim, latent, ck.model.augment_bank);
        if (augmented != ck.model.augment_bank || static_cast<std::size_t>(entries.rows()) != expected)
            throw ShapeError("checkpoint: memory bank width " + std::to_string(entries.rows()) +
                             " does not match the model's query width " + std::to_string(expected));
        ck.bank = MemoryBank(std::move(entries), augmented, b.at("epoch_stamp").get<std::size_t>());
        return ck;
    } catch (const json::exception& e) {
        throw ShapeError(std::string("checkpoint: malformed field: ") + e.what());
    }
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto bytes = serialize_checkpoint(ck);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw MissingError("cannot write checkpoint " + path.string());
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw MissingError("checkpoint not found: " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint(bytes);
}

}  // namespace rdcfa
