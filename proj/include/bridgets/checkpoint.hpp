#ifndef BRIDGETS_CHECKPOINT_HPP
#define BRIDGETS_CHECKPOINT_HPP

#include <string>
#include <vector>

#include <json.hpp>

#include "bridgets/common.hpp"

namespace bridgets {

/// One named parameter block inside a checkpoint file.
struct CheckpointBlock {
    std::string name;
    nlohmann::json meta;
    std::vector<double> values;
};

/// Checkpoint file contents: a JSON text header followed by the raw
/// little-endian float64 parameter data of all blocks back to back.
///
///   BTSCKPT1\n
///   {"config": ..., "config_hash": "...", "blocks": [...]}\n
///   <values>
///
/// The header's config_hash fingerprints the canonical config JSON; loading
/// re-computes it and rejects the file on mismatch.
struct Checkpoint {
    nlohmann::json config;  // canonical configuration the parameters belong to
    uint64_t seed = 0;
    std::vector<CheckpointBlock> blocks;

    const CheckpointBlock& block(const std::string& name) const;
    bool has_block(const std::string& name) const;
};

std::string config_hash_hex(const nlohmann::json& config);

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace bridgets

#endif  // BRIDGETS_CHECKPOINT_HPP
