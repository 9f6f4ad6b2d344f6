// Checkpoint directories:
//   manifest.json  {"tensors": [{"name", "shape": [rows, cols], "dtype": "f32", "offset"}]}
//   weights.bin    little-endian float32, row-major, tensors in manifest order
// plus config.json + vocab.txt (pretrain) or plugin.json (plugin).

#ifndef PPVAE_CHECKPOINT_HPP_
#define PPVAE_CHECKPOINT_HPP_

#include "ppvae/corpus.hpp"
#include "ppvae/parameters.hpp"
#include "ppvae/plugin_vae.hpp"
#include "ppvae/pretrain_vae.hpp"

#include <json.hpp>

#include <filesystem>
#include <stdexcept>
#include <string>

namespace ppvae {

class CheckpointError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class DigestMismatch : public CheckpointError {
  public:
    DigestMismatch()
        : CheckpointError("plugin/pretrain mismatch")
    {
    }
};

struct SerializedParameters {
    std::string manifest;
    std::string weights;
};

SerializedParameters serialize_parameters(const ParameterSet<float> &params);

/// Hex SHA-256 over the serialized manifest followed by the weight bytes.
std::string parameter_digest(const ParameterSet<float> &params);

void save_parameters(const ParameterSet<float> &params, const std::filesystem::path &dir);

/// Loads into an already-shaped set; names, order and shapes must match.
void load_parameters(ParameterSet<float> &params, const std::filesystem::path &dir);

nlohmann::json to_json(const PretrainConfig &c);
PretrainConfig pretrain_config_from_json(const nlohmann::json &j, PretrainConfig base = {});
nlohmann::json to_json(const PluginConfig &c);
PluginConfig plugin_config_from_json(const nlohmann::json &j, PluginConfig base = {});

struct PretrainCheckpoint {
    Vocabulary vocab;
    PretrainVae<float> model;
    std::string digest;
};

struct PluginCheckpoint {
    PluginVae<float> model;
    PluginMeta meta;
};

void save_pretrain(const PretrainVae<float> &model, const Vocabulary &vocab, const std::filesystem::path &dir);
PretrainCheckpoint load_pretrain(const std::filesystem::path &dir);

void save_plugin(const PluginVae<float> &model, const PluginMeta &meta, const std::filesystem::path &dir);
/// Throws DigestMismatch when the plugin was trained against another
/// pretrain checkpoint.
PluginCheckpoint load_plugin(const std::filesystem::path &dir, const std::string &pretrain_digest);

} // namespace ppvae

#endif // PPVAE_CHECKPOINT_HPP_
