#include "ppvae/generation.hpp"

#include <algorithm>
#include <fstream>

namespace ppvae {

namespace {

constexpr Eigen::Index kDecodeChunk = 256;

} // namespace

std::vector<std::string> decode_latents(const PretrainCheckpoint &pretrain, const Matrix<float> &z_g, int max_len)
{
    std::vector<std::string> out;
    out.reserve(static_cast<std::size_t>(z_g.rows()));
    for (Eigen::Index start = 0; start < z_g.rows(); start += kDecodeChunk) {
        const auto n = std::min(kDecodeChunk, z_g.rows() - start);
        for (const auto &seq : pretrain.model.greedy_decode(z_g.middleRows(start, n), max_len)) {
            out.push_back(decode_tokens(seq, pretrain.vocab));
        }
    }
    return out;
}

std::vector<std::string> plugin_generate(const PluginCheckpoint &plugin, const PretrainCheckpoint &pretrain,
    const GenerationRequest &request)
{
    if (plugin.meta.pretrain_digest != pretrain.digest) {
        throw DigestMismatch();
    }
    if (plugin.model.global_dim() != pretrain.model.latent_dim()) {
        throw ShapeError("plugin global dimension does not match the pretrain latent space");
    }
    const auto z_c = sample_conditional_prior<float>(request.n, plugin.model.condition_dim(), request.seed);
    if (request.n == 0) {
        return {};
    }
    return decode_latents(pretrain, plugin.model.decode(z_c), request.max_len);
}

std::vector<std::string> unconditional_generate(const PretrainCheckpoint &pretrain, int n, std::uint64_t seed,
    int max_len)
{
    const auto z_g = sample_conditional_prior<float>(n, pretrain.model.latent_dim(), seed);
    if (n == 0) {
        return {};
    }
    return decode_latents(pretrain, z_g, max_len);
}

void write_generations(const std::filesystem::path &path, std::span<const std::string> texts,
    const std::string &condition, bool json_lines)
{
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    for (std::size_t i = 0; i < texts.size(); ++i) {
        if (json_lines) {
            out << nlohmann::json{ { "condition", condition }, { "seed_index", i }, { "text", texts[i] } }.dump()
                << '\n';
        } else {
            out << texts[i] << '\n';
        }
    }
}

} // namespace ppvae
