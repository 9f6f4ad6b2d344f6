#include "ppvae/corpus.hpp"

#include "ppvae/rng.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <random>

namespace ppvae {

namespace {

const std::vector<std::string> kSpecials = { "<pad>", "<bos>", "<eos>", "<unk>" };

bool is_special(int id)
{
    return id == kPadId || id == kBosId || id == kEosId;
}

std::ifstream open_input(const std::filesystem::path &path)
{
    std::ifstream in(path);
    if (!in) {
        throw CorpusError("cannot open " + path.string());
    }
    return in;
}

} // namespace

Vocabulary::Vocabulary()
{
    assign(kSpecials);
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens)
{
    Vocabulary v;
    v.assign(std::move(tokens));
    return v;
}

void Vocabulary::assign(std::vector<std::string> tokens)
{
    if (tokens.size() < kSpecials.size() || !std::equal(kSpecials.begin(), kSpecials.end(), tokens.begin())) {
        throw CorpusError("vocabulary must start with <pad> <bos> <eos> <unk>");
    }
    auto &v = *this;
    v.tokens_.clear();
    v.index_.clear();
    for (auto &tok : tokens) {
        const int id = static_cast<int>(v.tokens_.size());
        if (!v.index_.emplace(tok, id).second) {
            throw CorpusError("duplicate vocabulary token: " + tok);
        }
        v.tokens_.push_back(std::move(tok));
    }
}

int Vocabulary::id(std::string_view token) const
{
    auto it = index_.find(std::string(token));
    return it == index_.end() ? kUnkId : it->second;
}

const std::string &Vocabulary::token(int id) const
{
    if (id < 0 || id >= size()) {
        throw CorpusError("id out of range");
    }
    return tokens_[static_cast<std::size_t>(id)];
}

bool Vocabulary::contains(std::string_view token) const
{
    return index_.contains(std::string(token));
}

void Vocabulary::save(const std::filesystem::path &path) const
{
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw CorpusError("cannot write " + path.string());
    }
    for (const auto &t : tokens_) {
        out << t << '\n';
    }
}

Vocabulary Vocabulary::load(const std::filesystem::path &path)
{
    auto in = open_input(path);
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) {
        tokens.push_back(line);
    }
    return from_tokens(std::move(tokens));
}

std::vector<std::string> tokenize(std::string_view raw_text)
{
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    };
    constexpr std::string_view unk = "<unk>";
    for (std::size_t i = 0; i < raw_text.size(); ++i) {
        const char ch = raw_text[i];
        const auto c = static_cast<unsigned char>(ch);
        // Generated text spells unknown words as <unk>; keep it whole.
        if (raw_text.substr(i).starts_with(unk)) {
            flush();
            out.emplace_back(unk);
            i += unk.size() - 1;
        } else if (std::isspace(c)) {
            flush();
        } else if (c < 0x80 && std::ispunct(c)) {
            flush();
            out.emplace_back(1, ch);
        } else {
            cur.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
        }
    }
    flush();
    return out;
}

Vocabulary build_vocabulary(std::span<const std::vector<std::string>> corpus, int max_vocab)
{
    if (max_vocab <= kNumSpecials) {
        throw CorpusError("max_vocab must exceed the number of special tokens");
    }
    if (corpus.empty()) {
        throw CorpusError("empty corpus");
    }
    struct Entry {
        std::string token;
        long long count;
        std::size_t first;
    };
    std::unordered_map<std::string, std::size_t> where;
    std::vector<Entry> entries;
    for (const auto &sentence : corpus) {
        for (const auto &tok : sentence) {
            if (std::find(kSpecials.begin(), kSpecials.end(), tok) != kSpecials.end()) {
                continue;
            }
            auto [it, inserted] = where.emplace(tok, entries.size());
            if (inserted) {
                entries.push_back({ tok, 0, entries.size() });
            }
            ++entries[it->second].count;
        }
    }
    std::stable_sort(entries.begin(), entries.end(), [](const Entry &a, const Entry &b) {
        return a.count > b.count;
    });
    std::vector<std::string> tokens = kSpecials;
    const auto keep = std::min<std::size_t>(entries.size(), static_cast<std::size_t>(max_vocab - kNumSpecials));
    for (std::size_t i = 0; i < keep; ++i) {
        tokens.push_back(entries[i].token);
    }
    return Vocabulary::from_tokens(std::move(tokens));
}

TokenSequence encode_text(std::span<const std::string> tokens, const Vocabulary &vocab, int max_len)
{
    TokenSequence seq;
    const auto n = std::min<std::size_t>(tokens.size(), static_cast<std::size_t>(std::max(max_len, 0)));
    seq.reserve(n + 2);
    seq.push_back(kBosId);
    for (std::size_t i = 0; i < n; ++i) {
        seq.push_back(vocab.id(tokens[i]));
    }
    seq.push_back(kEosId);
    return seq;
}

std::string decode_tokens(std::span<const int> seq, const Vocabulary &vocab)
{
    std::string out;
    for (int id : seq) {
        const auto &tok = vocab.token(id);
        if (id == kEosId) {
            break;
        }
        if (is_special(id)) {
            continue;
        }
        if (!out.empty()) {
            out.push_back(' ');
        }
        out += tok;
    }
    return out;
}

int content_length(std::span<const int> seq)
{
    int n = 0;
    for (int id : seq) {
        if (id == kEosId) {
            break;
        }
        if (!is_special(id)) {
            ++n;
        }
    }
    return n;
}

std::string_view length_label_for(int content_len)
{
    if (content_len < 1) {
        throw CorpusError("length label needs non-empty content");
    }
    if (content_len <= 3) {
        return kShort;
    }
    if (content_len >= 12) {
        return kLong;
    }
    return kMedium;
}

std::string_view length_label(std::span<const int> seq)
{
    return length_label_for(content_length(seq));
}

ConditionSets make_condition_sets(std::span<const LabeledSample> labeled, std::string_view condition,
    const ConditionSetOptions &options)
{
    std::vector<std::size_t> pos_idx;
    std::vector<std::size_t> neg_idx;
    for (std::size_t i = 0; i < labeled.size(); ++i) {
        (labeled[i].condition == condition ? pos_idx : neg_idx).push_back(i);
    }
    if (pos_idx.empty()) {
        throw CorpusError("unknown condition: " + std::string(condition));
    }
    auto rng = make_stream(options.seed, "condition-sets");
    std::shuffle(pos_idx.begin(), pos_idx.end(), rng);
    if (options.n_per_condition >= 0 && pos_idx.size() > static_cast<std::size_t>(options.n_per_condition)) {
        pos_idx.resize(static_cast<std::size_t>(options.n_per_condition));
    }
    std::sort(pos_idx.begin(), pos_idx.end());
    if (options.balance_negatives && neg_idx.size() > pos_idx.size()) {
        std::shuffle(neg_idx.begin(), neg_idx.end(), rng);
        neg_idx.resize(pos_idx.size());
        std::sort(neg_idx.begin(), neg_idx.end());
    }
    ConditionSets out;
    for (auto i : pos_idx) {
        out.positives.push_back(labeled[i].text);
    }
    for (auto i : neg_idx) {
        out.negatives.push_back(labeled[i].text);
    }
    return out;
}

std::vector<std::vector<std::string>> load_unlabeled(const std::filesystem::path &path, int max_len)
{
    auto in = open_input(path);
    std::vector<std::vector<std::string>> out;
    std::string line;
    while (std::getline(in, line)) {
        auto toks = tokenize(line);
        if (toks.empty() || static_cast<int>(toks.size()) > max_len) {
            continue;
        }
        out.push_back(std::move(toks));
    }
    return out;
}

std::vector<RawLabeled> load_labeled(const std::filesystem::path &path, int max_len)
{
    auto in = open_input(path);
    std::vector<RawLabeled> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        const auto tab = line.find('\t');
        if (tab == std::string::npos || tab == 0) {
            throw CorpusError(path.string() + ":" + std::to_string(lineno) + ": expected label<TAB>sentence");
        }
        auto toks = tokenize(std::string_view(line).substr(tab + 1));
        if (toks.empty() || static_cast<int>(toks.size()) > max_len) {
            continue;
        }
        out.push_back({ line.substr(0, tab), std::move(toks) });
    }
    return out;
}

std::vector<LabeledSample> encode_labeled(std::span<const RawLabeled> raw, const Vocabulary &vocab, int max_len)
{
    std::vector<LabeledSample> out;
    out.reserve(raw.size());
    for (const auto &r : raw) {
        out.push_back({ encode_text(r.tokens, vocab, max_len), r.label });
    }
    return out;
}

} // namespace ppvae
