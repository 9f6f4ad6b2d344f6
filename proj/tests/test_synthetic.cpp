#include "ppvae/synthetic.hpp"

#include "ppvae/corpus.hpp"
#include "support.hpp"

#include <doctest.h>

#include <map>
#include <set>

using namespace ppvae;

TEST_SUITE("synthetic")
{
    TEST_CASE("default corpus sizes and length coverage")
    {
        const auto c = make_synthetic({});
        CHECK(c.unlabeled.size() >= 10000);
        std::map<std::string, int> per_label;
        for (const auto &[label, text] : c.labeled) {
            ++per_label[label];
            CHECK(length_label_for(static_cast<int>(tokenize(text).size())) == label);
        }
        CHECK(per_label["short"] == 200);
        CHECK(per_label["medium"] == 200);
        CHECK(per_label["long"] == 200);

        std::set<std::string_view> bins;
        std::set<std::string> words;
        for (const auto &s : c.unlabeled) {
            const auto toks = tokenize(s);
            REQUIRE(!toks.empty());
            CHECK(toks.size() <= 15);
            bins.insert(length_label_for(static_cast<int>(toks.size())));
            words.insert(toks.begin(), toks.end());
        }
        CHECK(bins.size() == 3);
        CHECK(words.size() <= 300);
    }

    TEST_CASE("seeded output is reproducible")
    {
        SyntheticConfig cfg;
        cfg.n_unlabeled = 500;
        cfg.seed = 5;
        const auto dir_a = test::scratch_dir("synthetic-a");
        const auto dir_b = test::scratch_dir("synthetic-b");
        write_synthetic(make_synthetic(cfg), dir_a);
        write_synthetic(make_synthetic(cfg), dir_b);
        CHECK(test::slurp(dir_a / "unlabeled.txt") == test::slurp(dir_b / "unlabeled.txt"));
        CHECK(test::slurp(dir_a / "labeled.tsv") == test::slurp(dir_b / "labeled.tsv"));
        cfg.seed = 6;
        CHECK(make_synthetic(cfg).unlabeled != make_synthetic(SyntheticConfig{ 500, 200, 300, 10, 1, 15, 5 }).unlabeled);
    }

    TEST_CASE("invalid settings")
    {
        SyntheticConfig cfg;
        cfg.max_len = 10;
        CHECK_THROWS_AS(make_synthetic(cfg), std::invalid_argument);
        cfg = {};
        cfg.vocab_words = 1;
        CHECK_THROWS_AS(make_synthetic(cfg), std::invalid_argument);
        cfg.vocab_words = 3601;
        CHECK_THROWS_AS(make_synthetic(cfg), std::invalid_argument);
    }

    TEST_CASE("word inventory and bigram support")
    {
        SyntheticConfig cfg;
        cfg.n_unlabeled = 20000;
        cfg.n_labeled_per_condition = 0;
        cfg.vocab_words = 3600;
        cfg.branching = 2;
        std::set<std::string> words;
        std::map<std::string, std::set<std::string>> successors;
        for (const auto &s : make_synthetic(cfg).unlabeled) {
            std::string prev;
            for (const auto &w : tokenize(s)) {
                CHECK(w.size() == 4);
                words.insert(w);
                if (!prev.empty()) {
                    successors[prev].insert(w);
                }
                prev = w;
            }
        }
        // Nearly all 3600 spellings show up; no word ever has more than
        // `branching` distinct successors.
        CHECK(words.size() > 3000);
        CHECK(words.size() <= 3600);
        for (const auto &[w, next] : successors) {
            CHECK(next.size() <= 2);
        }
    }
}
