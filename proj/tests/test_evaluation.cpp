#include "ppvae/evaluation.hpp"

#include "support.hpp"

#include <doctest.h>

#include <random>

using namespace ppvae;

namespace {

// Quadratic-time reference: every n-gram compared against every earlier one.
double distinct_oracle(const std::vector<std::string> &texts, int n)
{
    std::vector<std::vector<std::string>> grams;
    for (const auto &text : texts) {
        std::vector<std::string> words;
        std::istringstream in(text);
        for (std::string w; in >> w;) {
            words.push_back(w);
        }
        for (int i = 0; i + n <= static_cast<int>(words.size()); ++i) {
            grams.emplace_back(words.begin() + i, words.begin() + i + n);
        }
    }
    int unique = 0;
    for (std::size_t i = 0; i < grams.size(); ++i) {
        bool seen = false;
        for (std::size_t j = 0; j < i && !seen; ++j) {
            seen = grams[j] == grams[i];
        }
        unique += seen ? 0 : 1;
    }
    return static_cast<double>(unique) / static_cast<double>(grams.size());
}

std::vector<LabeledText> separable_corpus(int per_class, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    const std::vector<std::string> pos = { "good", "great", "tasty", "lovely", "fresh", "kind" };
    const std::vector<std::string> neg = { "bad", "awful", "stale", "rude", "cold", "slow" };
    const std::vector<std::string> filler = { "the", "food", "was", "and", "staff", "very" };
    std::uniform_int_distribution<int> len(3, 10);
    std::uniform_int_distribution<std::size_t> pick(0, 5);
    std::vector<LabeledText> out;
    for (int i = 0; i < 2 * per_class; ++i) {
        const bool positive = i % 2 == 0;
        std::string text;
        const int n = len(rng);
        for (int k = 0; k < n; ++k) {
            const auto &w = k % 2 == 0 ? (positive ? pos : neg)[pick(rng)] : filler[pick(rng)];
            text += (k ? " " : "") + w;
        }
        out.push_back({ positive ? "positive" : "negative", text });
    }
    return out;
}

} // namespace

TEST_SUITE("evaluation")
{
    TEST_CASE("distinct-n examples")
    {
        const std::vector<std::string> a = { "a b a" };
        CHECK(distinct_n(a, 1) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
        const std::vector<std::string> b = { "a b", "a b" };
        CHECK(distinct_n(b, 2) == 0.5);
        const std::vector<std::string> c = { "x y z", "u v w" };
        CHECK(distinct_n(c, 1) == 1.0);
        CHECK(distinct_n(c, 2) == 1.0);
        const std::vector<std::string> empty = { "", "a" };
        CHECK_THROWS_AS(distinct_n(empty, 2), EvaluationError);
    }

    TEST_CASE("distinct-n agrees with a brute-force count")
    {
        std::mt19937_64 rng(17);
        std::uniform_int_distribution<int> n_texts(1, 8), n_words(2, 9), word(0, 4);
        for (int trial = 0; trial < 100; ++trial) {
            std::vector<std::string> texts;
            const int m = n_texts(rng);
            for (int i = 0; i < m; ++i) {
                std::string s;
                const int k = n_words(rng);
                for (int j = 0; j < k; ++j) {
                    s += (j ? " w" : "w") + std::to_string(word(rng));
                }
                texts.push_back(s);
            }
            for (int n : { 1, 2 }) {
                CHECK(std::abs(distinct_n(texts, n) - distinct_oracle(texts, n)) <= 1e-6);
            }
        }
    }

    TEST_CASE("length accuracy")
    {
        const std::vector<std::string> one = { "great pricing !" };
        CHECK(length_accuracy(one, "short") == 1.0);
        const std::vector<std::string> mixed = { "a b c", "a b c d e f g h i j k l m" };
        CHECK(length_accuracy(mixed, "short") == 0.5);
        CHECK(length_accuracy(mixed, "long") == 0.5);
        CHECK(length_accuracy(mixed, "medium") == 0.0);
        const std::vector<std::string> with_empty = { "", "a" };
        CHECK(length_accuracy(with_empty, "short") == 0.5);
        CHECK_THROWS_AS(length_accuracy(one, "tiny"), EvaluationError);
        const std::vector<std::string> none;
        CHECK_THROWS_AS(length_accuracy(none, "short"), EvaluationError);
    }

    TEST_CASE("log-variance")
    {
        const std::vector<double> a = { 0.8, 0.9 };
        const auto lv = accuracy_log_variance(a);
        REQUIRE(lv.has_value());
        CHECK(*lv == doctest::Approx(std::log(0.0025)).epsilon(1e-9));
        CHECK(*lv == doctest::Approx(-5.99).epsilon(1e-3));
        const std::vector<double> same = { 0.5, 0.5 };
        CHECK_FALSE(accuracy_log_variance(same).has_value());
        const std::vector<double> single = { 0.5 };
        CHECK_THROWS_AS(accuracy_log_variance(single), EvaluationError);
    }

    TEST_CASE("length task report")
    {
        std::map<std::string, std::vector<std::string>> gen = {
            { "short", { "a b", "c" } },
            { "long", { "a b c d e f g h i j k l", "m n o p q r s t u v w x y" } },
        };
        const auto r = evaluate(gen, {});
        CHECK(r.accuracy.at("short") == 1.0);
        CHECK(r.accuracy.at("long") == 1.0);
        CHECK_FALSE(r.log_variance.has_value());
        CHECK(r.distinct1 > 0);
        CHECK(r.distinct1_per_condition.count("short") == 1);
        CHECK(r.distinct2_per_condition.count("long") == 1);

        const auto j = to_json(r);
        for (const char *key : { "accuracy", "log_variance", "distinct1", "distinct2", "distinct1_per_condition",
                 "distinct2_per_condition" }) {
            CHECK(j.contains(key));
        }
        CHECK(j["log_variance"] == "all-equal");
        const auto table = format_table(r);
        for (const char *col : { "Accuracy", "Log-Variance", "Distinct-1", "Distinct-2" }) {
            CHECK(table.find(col) != std::string::npos);
        }

        gen["short"].push_back("a b c d e");
        const auto r2 = evaluate(gen, {});
        REQUIRE(r2.log_variance.has_value());
        CHECK(to_json(r2)["log_variance"].is_number());
        CHECK_THROWS_AS(evaluate({}, {}), EvaluationError);
    }

    TEST_CASE("classifier on separable data")
    {
        const auto data = separable_corpus(200, 3);
        ClassifierConfig cfg;
        cfg.epochs = 5;
        cfg.seed = 1;
        const auto clf = train_condition_classifier(data, cfg);
        CHECK(clf.labels() == std::vector<std::string>{ "negative", "positive" });
        CHECK(clf.validation_accuracy() >= 0.95);

        const auto again = train_condition_classifier(data, cfg);
        CHECK(again.validation_accuracy() == clf.validation_accuracy());
        const std::vector<std::string> probe = { "good food", "awful staff", "", "the was" };
        const auto pred = clf.predict(probe);
        CHECK(pred == again.predict(probe));
        CHECK(pred[2] == -1);
        CHECK(clf.labels()[static_cast<std::size_t>(pred[0])] == "positive");
        CHECK(clf.labels()[static_cast<std::size_t>(pred[1])] == "negative");

        const std::vector<std::string> none;
        CHECK_THROWS_AS(classifier_accuracy(none, "positive", clf), EvaluationError);
        CHECK_THROWS_AS(classifier_accuracy(probe, "neutral", clf), EvaluationError);

        std::vector<LabeledText> one_label = { { "x", "a b c" }, { "x", "d e f" } };
        CHECK_THROWS_AS(train_condition_classifier(one_label, cfg), EvaluationError);
    }

    TEST_CASE("a classifier that always predicts the condition scores 1")
    {
        ClassifierConfig cfg;
        std::vector<std::vector<std::string>> corpus = { { "a", "b" } };
        ConditionClassifier clf(build_vocabulary(corpus, 100), { "neg", "pos" }, cfg);
        clf.parameters().at("output.bias").value(0, 1) = 1e6F;
        const std::vector<std::string> texts = { "a", "b a", "zzz q r s t u" };
        CHECK(classifier_accuracy(texts, "pos", clf) == 1.0);
        CHECK(classifier_accuracy(texts, "neg", clf) == 0.0);

        std::map<std::string, std::vector<std::string>> gen = { { "pos", texts } };
        TaskSpec spec{ TaskSpec::Kind::classifier, &clf };
        CHECK(evaluate(gen, spec).accuracy.at("pos") == 1.0);
    }
}
