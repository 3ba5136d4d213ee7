#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "leq/nn/mlp.hpp"

namespace leq::nn {

/// Named f64 arrays behind a JSON header.
///
/// File layout (all integers little-endian):
///   "LEQC" | u32 version | u64 header length | header JSON |
///   per array: u64 length, f64 values | u32 CRC32 of everything before it.
/// The header lists the array names in order under "arrays".
struct Checkpoint {
    nlohmann::json header = nlohmann::json::object();
    std::vector<std::pair<std::string, Vector>> arrays;

    void add(std::string name, Vector values);
    const Vector& get(const std::string& name) const;
    bool has(const std::string& name) const;

    std::string encode() const;
    static Checkpoint decode(std::string_view bytes);

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Single-network checkpoint: header carries spec, layout and init seed.
Checkpoint mlp_checkpoint(const Mlp& net, std::uint64_t seed);
Mlp mlp_from_checkpoint(const Checkpoint& ckpt, const std::string& prefix = "");

/// Embeds a network (spec in header[prefix], params in arrays[prefix]) into a bundle.
void add_network(Checkpoint& ckpt, const std::string& name, const Mlp& net);
Mlp get_network(const Checkpoint& ckpt, const std::string& name);

}  // namespace leq::nn
