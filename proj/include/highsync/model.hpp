#pragma once

#include "highsync/nets.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace highsync {

using Json = nlohmann::ordered_json;

Json config_to_json(const nets::ModelConfig& cfg);
nets::ModelConfig config_from_json(const Json& j);
std::string config_hash(const nets::ModelConfig& cfg);

// The full parameter set, partitioned into the named groups that the stages train or freeze.
struct Model {
    explicit Model(const nets::ModelConfig& cfg);

    nets::ModelConfig cfg;
    nets::Autoencoder autoencoder;
    nets::Denoiser denoiser;
    nets::ReferenceNet reference_net;
    nets::AudioEncoder audio_encoder;
    nets::MotionStack motion;

    static const std::vector<std::string>& group_names();
    torch::nn::Module& group(const std::string& name);
    // SHA-256 over the group's parameter and buffer bytes in registration order.
    std::string group_hash(const std::string& name);
    std::map<std::string, std::string> group_hashes();

    void set_trainable(const std::vector<std::string>& groups);
    void train(bool on);
    void to(torch::Dtype dtype);
};

// Throws ConfigurationError unless the reference network has one exported feature per denoiser
// transformer block, with matching widths.
void check_reference_mirror(const nets::ReferenceNetImpl& reference, const nets::DenoiserImpl& denoiser);

// Single-file checkpoint: "HSCK", u32 header length, JSON header (config, config hash, group
// hashes, tensor index), raw little-endian tensor bytes. Written atomically.
struct CheckpointInfo {
    Json header;
    std::map<std::string, std::string> group_hashes;
};

void save_checkpoint(Model& model, const std::filesystem::path& path, const Json& extra = Json::object());
// Reads the config from the file and builds a model. Throws PreconditionError if missing,
// DecodeError if corrupt.
Model load_checkpoint(const std::filesystem::path& path, CheckpointInfo* info = nullptr);
// Loads only the listed groups into an existing model (config hashes must agree).
void load_groups(Model& model, const std::filesystem::path& path, const std::vector<std::string>& groups);
CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);

} // namespace highsync
