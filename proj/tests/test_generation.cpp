#include "ppvae/generation.hpp"

#include "support.hpp"

#include <doctest.h>

using namespace ppvae;

namespace {

PretrainCheckpoint make_pretrain(std::uint64_t seed)
{
    PretrainConfig c;
    c.d_g = 6;
    c.emb_dim = 8;
    c.gru_hidden = 8;
    c.dec_layers = 1;
    c.dec_heads = 2;
    c.dec_ffn = 8;
    c.disc_hidden = 4;
    c.max_len = 8;
    c.seed = seed;
    std::vector<std::vector<std::string>> corpus = { { "a", "b", "c", "d", "e" } };
    auto vocab = build_vocabulary(corpus, 100);
    PretrainVae<float> m(c, vocab.size());
    auto digest = parameter_digest(m.parameters());
    return { std::move(vocab), std::move(m), std::move(digest) };
}

PluginCheckpoint make_plugin(const std::string &digest)
{
    PluginConfig pc;
    pc.d_g = 6;
    pc.d_c = 2;
    return { PluginVae<float>(pc), PluginMeta{ "short", 0, 5, 10, 20, false, digest } };
}

} // namespace

TEST_SUITE("generation")
{
    TEST_CASE("conditional prior")
    {
        CHECK(sample_conditional_prior<float>(0, 20, 1).rows() == 0);
        CHECK(sample_conditional_prior<float>(5, 20, 1) == sample_conditional_prior<float>(5, 20, 1));
        CHECK(sample_conditional_prior<float>(5, 20, 1) != sample_conditional_prior<float>(5, 20, 2));
        const auto big = sample_conditional_prior<double>(10000, 20, 3);
        const RowVector<double> means = big.colwise().mean();
        CHECK(means.cwiseAbs().maxCoeff() < 0.05);
        CHECK_THROWS(sample_conditional_prior<float>(-1, 2, 0));
    }

    TEST_CASE("plugin generation")
    {
        const auto pretrain = make_pretrain(1);
        const auto plugin = make_plugin(pretrain.digest);
        CHECK(plugin_generate(plugin, pretrain, { "short", 0, 1, 8 }).empty());
        const auto a = plugin_generate(plugin, pretrain, { "short", 40, 7, 8 });
        const auto b = plugin_generate(plugin, pretrain, { "short", 40, 7, 8 });
        CHECK(a.size() == 40);
        CHECK(a == b);
        for (const auto &s : plugin_generate(plugin, pretrain, { "short", 40, 7, 3 })) {
            CHECK(tokenize(s).size() <= 3);
        }

        const auto other = make_pretrain(2);
        CHECK_THROWS_AS(plugin_generate(plugin, other, { "short", 3, 1, 8 }), DigestMismatch);
    }

    TEST_CASE("unconditional generation")
    {
        const auto pretrain = make_pretrain(1);
        CHECK(unconditional_generate(pretrain, 0, 1, 8).empty());
        const auto a = unconditional_generate(pretrain, 300, 1, 4);
        CHECK(a == unconditional_generate(pretrain, 300, 1, 4));
        CHECK(a.size() == 300);
        for (const auto &s : a) {
            CHECK(tokenize(s).size() <= 4);
        }
    }

    TEST_CASE("chunked decoding matches one-shot decoding")
    {
        const auto pretrain = make_pretrain(3);
        const auto z = sample_conditional_prior<float>(600, 6, 9);
        const auto chunked = decode_latents(pretrain, z, 8);
        const auto whole = pretrain.model.greedy_decode(z, 8);
        REQUIRE(chunked.size() == whole.size());
        for (std::size_t i = 0; i < whole.size(); ++i) {
            CHECK(chunked[i] == decode_tokens(whole[i], pretrain.vocab));
        }
    }

    TEST_CASE("writing generations")
    {
        const auto dir = test::scratch_dir("generations");
        const std::vector<std::string> texts = { "a b", "", "c" };
        write_generations(dir / "plain.txt", texts, "short", false);
        CHECK(test::slurp(dir / "plain.txt") == "a b\n\nc\n");
        write_generations(dir / "lines.jsonl", texts, "short", true);
        std::ifstream in(dir / "lines.jsonl");
        std::string line;
        std::getline(in, line);
        const auto j = nlohmann::json::parse(line);
        CHECK(j["condition"] == "short");
        CHECK(j["seed_index"] == 0);
        CHECK(j["text"] == "a b");
        write_generations(dir / "empty.txt", {}, "short", false);
        CHECK(test::slurp(dir / "empty.txt").empty());
    }
}
