#include "bridgets/checkpoint.hpp"

#include <cstdio>
#include <fstream>

namespace bridgets {

namespace {
constexpr char kMagic[] = "BTSCKPT1";
}

const CheckpointBlock& Checkpoint::block(const std::string& name) const {
    for (const auto& b : blocks)
        if (b.name == name) return b;
    throw DataError("checkpoint: missing block '" + name + "'");
}

bool Checkpoint::has_block(const std::string& name) const {
    for (const auto& b : blocks)
        if (b.name == name) return true;
    return false;
}

std::string config_hash_hex(const nlohmann::json& config) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(config.dump())));
    return buf;
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    nlohmann::json header;
    header["config"] = ck.config;
    header["config_hash"] = config_hash_hex(ck.config);
    header["seed"] = ck.seed;
    header["blocks"] = nlohmann::json::array();
    size_t offset = 0;
    for (const auto& b : ck.blocks) {
        header["blocks"].push_back({{"name", b.name},
                                    {"meta", b.meta},
                                    {"offset", offset},
                                    {"count", b.values.size()}});
        offset += b.values.size();
    }

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint: " + path);
    out << kMagic << "\n" << header.dump() << "\n";
    for (const auto& b : ck.blocks)
        out.write(reinterpret_cast<const char*>(b.values.data()),
                  static_cast<std::streamsize>(b.values.size() * sizeof(double)));
    if (!out) throw DataError("short write on checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);

    std::string magic, header_line;
    if (!std::getline(in, magic) || magic != kMagic)
        throw DataError(path + ": not a checkpoint file");
    if (!std::getline(in, header_line)) throw DataError(path + ": missing header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_line);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path + ": corrupt header: " + e.what());
    }

    Checkpoint ck;
    ck.config = header.at("config");
    ck.seed = header.value("seed", uint64_t{0});
    const std::string stored_hash = header.at("config_hash").get<std::string>();
    if (stored_hash != config_hash_hex(ck.config))
        throw DataError(path + ": config hash mismatch (stored " + stored_hash +
                        ", computed " + config_hash_hex(ck.config) + ")");

    for (const auto& b : header.at("blocks")) {
        CheckpointBlock block;
        block.name = b.at("name").get<std::string>();
        block.meta = b.at("meta");
        block.values.resize(b.at("count").get<size_t>());
        ck.blocks.push_back(std::move(block));
    }
    for (auto& b : ck.blocks) {
        in.read(reinterpret_cast<char*>(b.values.data()),
                static_cast<std::streamsize>(b.values.size() * sizeof(double)));
        if (!in) throw DataError(path + ": truncated parameter data");
        if (!all_finite(b.values)) throw DataError(path + ": non-finite parameters");
    }
    return ck;
}

}  // namespace bridgets
