#ifndef PPVAE_EVALUATION_HPP_
#define PPVAE_EVALUATION_HPP_

#include "ppvae/corpus.hpp"
#include "ppvae/parameters.hpp"

#include <json.hpp>

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ppvae {

class EvaluationError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Distinct n-grams over total n-gram tokens, pooled over all texts.
double distinct_n(std::span<const std::string> texts, int n);

/// Fraction of texts whose word count falls in `condition`'s length bin.
/// Empty texts count as misses.
double length_accuracy(std::span<const std::string> texts, std::string_view condition);

struct LengthHistogram {
    double short_fraction = 0;
    double medium_fraction = 0;
    double long_fraction = 0;
    double empty_fraction = 0;
};

LengthHistogram length_histogram(std::span<const std::string> texts);

/// ln of the population variance; nullopt when every accuracy is equal.
std::optional<double> accuracy_log_variance(std::span<const double> accuracies);

struct ClassifierConfig {
    int emb_dim = 64;
    std::vector<int> windows = { 3, 4, 5 };
    int feature_maps = 100;
    int epochs = 10;
    int batch = 50;
    double lr = 1e-3;
    int max_vocab = 10000;
    int max_len = 15;
    double validation_fraction = 0.1;
    std::uint64_t seed = 0;
};

/// Convolutional sentence classifier: embeddings, parallel convolutions over
/// several window widths, max-pool over time, linear softmax.
class ConditionClassifier {
  public:
    ConditionClassifier(Vocabulary vocab, std::vector<std::string> labels, const ClassifierConfig &config);

    const std::vector<std::string> &labels() const { return labels_; }
    bool has_label(std::string_view label) const;
    double validation_accuracy() const { return validation_accuracy_; }
    const ClassifierConfig &config() const { return config_; }

    /// Label index per text; empty texts get -1.
    std::vector<int> predict(std::span<const std::string> texts) const;

    // Training internals.
    ParameterSet<float> &parameters() { return params_; }
    Var<float> logits(Tape<float> &t, const std::vector<std::vector<int>> &batch) const;
    std::vector<int> encode(const std::string &text) const;
    void set_validation_accuracy(double a) { validation_accuracy_ = a; }

  private:
    Vocabulary vocab_;
    std::vector<std::string> labels_;
    ClassifierConfig config_;
    ParameterSet<float> params_;
    Parameter<float> *embedding_ = nullptr;
    std::vector<Linear<float>> convs_;
    Linear<float> output_;
    double validation_accuracy_ = 0;
};

struct LabeledText {
    std::string label;
    std::string text;
};

/// Throws EvaluationError when fewer than two labels are present.
ConditionClassifier train_condition_classifier(std::span<const LabeledText> labeled, const ClassifierConfig &config);

/// Fraction of texts the classifier assigns to `condition`.
double classifier_accuracy(std::span<const std::string> texts, std::string_view condition,
    const ConditionClassifier &classifier);

struct TaskSpec {
    enum class Kind { length, classifier };
    Kind kind = Kind::length;
    const ConditionClassifier *classifier = nullptr;
};

struct EvaluationReport {
    std::map<std::string, double> accuracy;
    std::optional<double> log_variance;
    double distinct1 = 0;
    double distinct2 = 0;
    std::map<std::string, double> distinct1_per_condition;
    std::map<std::string, double> distinct2_per_condition;
    std::map<std::string, std::size_t> sample_counts;

    double mean_accuracy() const;
};

EvaluationReport evaluate(const std::map<std::string, std::vector<std::string>> &generated, const TaskSpec &task);

nlohmann::json to_json(const EvaluationReport &report);

/// Aligned text table: Accuracy, Log-Variance, Distinct-1, Distinct-2.
std::string format_table(const EvaluationReport &report);

} // namespace ppvae

#endif // PPVAE_EVALUATION_HPP_
