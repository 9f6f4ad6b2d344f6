#ifndef PPVAE_CORPUS_HPP_
#define PPVAE_CORPUS_HPP_

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace ppvae {

class CorpusError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kUnkId = 3;
inline constexpr int kNumSpecials = 4;

/// Bidirectional token <-> id map. Ids 0..3 are pad, bos, eos, unk.
class Vocabulary {
  public:
    Vocabulary();

    /// Builds from a full token list whose first four entries are the specials.
    static Vocabulary from_tokens(std::vector<std::string> tokens);

    int id(std::string_view token) const;
    const std::string &token(int id) const;
    bool contains(std::string_view token) const;
    int size() const { return static_cast<int>(tokens_.size()); }
    const std::vector<std::string> &tokens() const { return tokens_; }

    void save(const std::filesystem::path &path) const;
    static Vocabulary load(const std::filesystem::path &path);

    bool operator==(const Vocabulary &other) const { return tokens_ == other.tokens_; }

  private:
    void assign(std::vector<std::string> tokens);

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
};

/// Token ids including the leading bos and trailing eos.
using TokenSequence = std::vector<int>;

struct LabeledSample {
    TokenSequence text;
    std::string condition;
};

/// Lowercases, splits on whitespace and isolates ASCII punctuation.
std::vector<std::string> tokenize(std::string_view raw_text);

/// Specials followed by the (max_vocab - 4) most frequent tokens; ties go to
/// the token seen first.
Vocabulary build_vocabulary(std::span<const std::vector<std::string>> corpus, int max_vocab);

/// bos + ids + eos with content truncated to `max_len` ids.
TokenSequence encode_text(std::span<const std::string> tokens, const Vocabulary &vocab, int max_len);

/// Drops specials and joins the remaining tokens with single spaces.
std::string decode_tokens(std::span<const int> seq, const Vocabulary &vocab);

/// Number of ids that are not pad/bos/eos. Content stops at the first eos.
int content_length(std::span<const int> seq);

inline constexpr std::string_view kShort = "short";
inline constexpr std::string_view kMedium = "medium";
inline constexpr std::string_view kLong = "long";

/// short: len <= 3, long: len >= 12, medium otherwise.
std::string_view length_label_for(int content_len);
std::string_view length_label(std::span<const int> seq);

struct ConditionSets {
    std::vector<TokenSequence> positives;
    std::vector<TokenSequence> negatives;
};

struct ConditionSetOptions {
    int n_per_condition = 200;
    std::uint64_t seed = 0;
    /// Subsample negatives down to the positive count.
    bool balance_negatives = false;
};

/// Positives: up to n samples carrying `condition`; negatives: every sample
/// with a different label.
ConditionSets make_condition_sets(std::span<const LabeledSample> labeled, std::string_view condition,
    const ConditionSetOptions &options);

// File formats --------------------------------------------------------------

/// One sentence per line, tokenized; lines with no tokens or more than
/// `max_len` tokens are dropped.
std::vector<std::vector<std::string>> load_unlabeled(const std::filesystem::path &path, int max_len);

struct RawLabeled {
    std::string label;
    std::vector<std::string> tokens;
};

/// `label<TAB>sentence` lines, same filtering as load_unlabeled.
std::vector<RawLabeled> load_labeled(const std::filesystem::path &path, int max_len);

std::vector<LabeledSample> encode_labeled(std::span<const RawLabeled> raw, const Vocabulary &vocab, int max_len);

} // namespace ppvae

#endif // PPVAE_CORPUS_HPP_
