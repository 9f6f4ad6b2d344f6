// Seeded toy corpus: first-order Markov sentences over a small vocabulary with
// lengths spread uniformly over [min_len, max_len].

#ifndef PPVAE_SYNTHETIC_HPP_
#define PPVAE_SYNTHETIC_HPP_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ppvae {

struct SyntheticConfig {
    int n_unlabeled = 10000;
    int n_labeled_per_condition = 200;
    int vocab_words = 300;
    int branching = 10;
    int min_len = 1;
    int max_len = 15;
    std::uint64_t seed = 0;

    void validate() const;
};

struct SyntheticCorpus {
    std::vector<std::string> unlabeled;
    /// (label, sentence) with labels short / medium / long.
    std::vector<std::pair<std::string, std::string>> labeled;
};

SyntheticCorpus make_synthetic(const SyntheticConfig &config);

/// Writes `unlabeled.txt` and `labeled.tsv` under `dir`.
void write_synthetic(const SyntheticCorpus &corpus, const std::filesystem::path &dir);

} // namespace ppvae

#endif // PPVAE_SYNTHETIC_HPP_
