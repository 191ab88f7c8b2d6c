#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "cbformer/autoformer.hpp"
#include "json.hpp"

namespace cbf {

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct AdamState {
    std::uint64_t step = 0;
    std::map<std::string, std::vector<double>> m;
    std::map<std::string, std::vector<double>> v;
};

// Binary container: magic "CBFCKPT\0", u32 version, u64 header length, JSON
// header (configs, parameter table, metadata), then little-endian f64
// payload in header order.
struct Checkpoint {
    ModelConfig model;
    BottleneckSpec spec;
    std::uint64_t seed = 0;
    std::vector<std::string> names;
    std::map<std::string, Shape> shapes;
    std::map<std::string, std::vector<double>> parameters;
    AdamState optimizer;
    nlohmann::json metadata = nlohmann::json::object();

    static Checkpoint capture(const Autoformer& model, std::uint64_t seed, const AdamState* optimizer = nullptr);
    std::unique_ptr<Autoformer> instantiate() const;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// FNV-1a 64 over the file bytes, as 16 hex digits.
std::string file_hash(const std::filesystem::path& path);
std::string fnv1a_hex(const void* data, std::size_t size);

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const BottleneckSpec& spec);
BottleneckSpec bottleneck_from_json(const nlohmann::json& j);

}  // namespace cbf
