// Plug-in generation: z_c ~ N(0, I) -> plugin decoder -> global decoder.

#ifndef PPVAE_GENERATION_HPP_
#define PPVAE_GENERATION_HPP_

#include "ppvae/checkpoint.hpp"
#include "ppvae/rng.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace ppvae {

inline constexpr std::string_view kUnconditional = "unconditional";

struct GenerationRequest {
    std::string condition;
    int n = 0;
    std::uint64_t seed = 0;
    int max_len = 15;
};

/// n x dim standard-normal rows from the seed's "generation-prior" stream.
template <typename Scalar>
Matrix<Scalar> sample_conditional_prior(int n, int dim, std::uint64_t seed)
{
    if (n < 0) {
        throw std::invalid_argument("sample count must be >= 0");
    }
    auto rng = make_stream(seed, "generation-prior");
    return standard_normal<Scalar>(n, dim, rng);
}

/// Greedy-decodes every row of `z_g` into detokenized text, in row order.
std::vector<std::string> decode_latents(const PretrainCheckpoint &pretrain, const Matrix<float> &z_g, int max_len);

/// Throws DigestMismatch when the plugin belongs to another pretrain.
std::vector<std::string> plugin_generate(const PluginCheckpoint &plugin, const PretrainCheckpoint &pretrain,
    const GenerationRequest &request);

/// Samples z_g ~ N(0, I) directly: the condition-free baseline.
std::vector<std::string> unconditional_generate(const PretrainCheckpoint &pretrain, int n, std::uint64_t seed,
    int max_len);

/// One sentence per line, or JSON lines {condition, seed_index, text}.
void write_generations(const std::filesystem::path &path, std::span<const std::string> texts,
    const std::string &condition, bool json_lines);

} // namespace ppvae

#endif // PPVAE_GENERATION_HPP_
