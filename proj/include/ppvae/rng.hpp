#ifndef PPVAE_RNG_HPP_
#define PPVAE_RNG_HPP_

#include <cstdint>
#include <random>
#include <string_view>

namespace ppvae {

/// Derives an independent generator for a named purpose from one run seed,
/// so that e.g. changing how many noise draws a step makes does not shift
/// the data-sampling stream.
inline std::mt19937_64 make_stream(std::uint64_t seed, std::string_view name)
{
    // FNV-1a over the stream name, mixed with the seed.
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : name) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    std::seed_seq seq{ static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
        static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32) };
    return std::mt19937_64(seq);
}

} // namespace ppvae

#endif // PPVAE_RNG_HPP_
