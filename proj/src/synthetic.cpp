#include "ppvae/synthetic.hpp"

#include "ppvae/corpus.hpp"
#include "ppvae/rng.hpp"

#include <array>
#include <fstream>
#include <random>
#include <stdexcept>

namespace ppvae {

namespace {

std::vector<std::string> make_words(int n)
{
    constexpr std::array<char, 12> kOnsets = { 'b', 'd', 'f', 'g', 'k', 'l', 'm', 'n', 'p', 'r', 's', 't' };
    constexpr std::array<char, 5> kVowels = { 'a', 'e', 'i', 'o', 'u' };
    std::vector<std::string> words;
    for (std::size_t i = 0; static_cast<int>(words.size()) < n; ++i) {
        const auto a = i % 60;
        const auto b = (i * 13 + i / 60) % 60;
        std::string w;
        w += kOnsets[a / 5];
        w += kVowels[a % 5];
        w += kOnsets[b / 5];
        w += kVowels[b % 5];
        words.push_back(std::move(w));
    }
    return words;
}

class MarkovGrammar {
  public:
    MarkovGrammar(const SyntheticConfig &c, std::mt19937_64 &rng)
        : words_(make_words(c.vocab_words))
        , next_(static_cast<std::size_t>(c.vocab_words))
    {
        std::uniform_int_distribution<int> pick(0, c.vocab_words - 1);
        for (auto &succ : next_) {
            for (int k = 0; k < c.branching; ++k) {
                succ.push_back(pick(rng));
            }
        }
    }

    std::string sentence(int len, std::mt19937_64 &rng) const
    {
        std::uniform_int_distribution<int> first(0, static_cast<int>(words_.size()) - 1);
        std::uniform_int_distribution<std::size_t> branch(0, next_[0].size() - 1);
        int w = first(rng);
        std::string out = words_[static_cast<std::size_t>(w)];
        for (int i = 1; i < len; ++i) {
            w = next_[static_cast<std::size_t>(w)][branch(rng)];
            out += ' ';
            out += words_[static_cast<std::size_t>(w)];
        }
        return out;
    }

  private:
    std::vector<std::string> words_;
    std::vector<std::vector<int>> next_;
};

} // namespace

void SyntheticConfig::validate() const
{
    if (n_unlabeled < 0 || n_labeled_per_condition < 0) {
        throw std::invalid_argument("sample counts must be >= 0");
    }
    if (vocab_words < 2 || vocab_words > 3600) {
        throw std::invalid_argument("vocab_words must be in [2, 3600]");
    }
    if (branching < 1) {
        throw std::invalid_argument("branching must be >= 1");
    }
    if (min_len < 1 || max_len < 12 || min_len > 3) {
        throw std::invalid_argument("length range must reach every length bin (min_len <= 3, max_len >= 12)");
    }
}

SyntheticCorpus make_synthetic(const SyntheticConfig &config)
{
    config.validate();
    auto grammar_rng = make_stream(config.seed, "synthetic-grammar");
    const MarkovGrammar grammar(config, grammar_rng);

    SyntheticCorpus corpus;
    auto rng = make_stream(config.seed, "synthetic-unlabeled");
    std::uniform_int_distribution<int> length(config.min_len, config.max_len);
    corpus.unlabeled.reserve(static_cast<std::size_t>(config.n_unlabeled));
    for (int i = 0; i < config.n_unlabeled; ++i) {
        corpus.unlabeled.push_back(grammar.sentence(length(rng), rng));
    }

    auto lrng = make_stream(config.seed, "synthetic-labeled");
    const std::array<std::pair<std::string_view, std::pair<int, int>>, 3> bins = { {
        { kShort, { config.min_len, 3 } },
        { kMedium, { 4, 11 } },
        { kLong, { 12, config.max_len } },
    } };
    for (const auto &[label, range] : bins) {
        std::uniform_int_distribution<int> len(range.first, range.second);
        for (int i = 0; i < config.n_labeled_per_condition; ++i) {
            corpus.labeled.emplace_back(std::string(label), grammar.sentence(len(lrng), lrng));
        }
    }
    return corpus;
}

void write_synthetic(const SyntheticCorpus &corpus, const std::filesystem::path &dir)
{
    std::filesystem::create_directories(dir);
    std::ofstream un(dir / "unlabeled.txt", std::ios::binary);
    std::ofstream lab(dir / "labeled.tsv", std::ios::binary);
    if (!un || !lab) {
        throw std::runtime_error("cannot write corpus files under " + dir.string());
    }
    for (const auto &s : corpus.unlabeled) {
        un << s << '\n';
    }
    for (const auto &[label, s] : corpus.labeled) {
        lab << label << '\t' << s << '\n';
    }
}

} // namespace ppvae
