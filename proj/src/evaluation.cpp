#include "ppvae/evaluation.hpp"

#include "ppvae/rng.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_set>

namespace ppvae {

double distinct_n(std::span<const std::string> texts, int n)
{
    if (n < 1) {
        throw EvaluationError("n must be >= 1");
    }
    std::unordered_set<std::string> seen;
    long long total = 0;
    for (const auto &text : texts) {
        const auto toks = tokenize(text);
        for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= toks.size(); ++i) {
            std::string key;
            for (int k = 0; k < n; ++k) {
                key += toks[i + static_cast<std::size_t>(k)];
                key.push_back('\x1f');
            }
            seen.insert(std::move(key));
            ++total;
        }
    }
    if (total == 0) {
        throw EvaluationError("no n-grams");
    }
    return static_cast<double>(seen.size()) / static_cast<double>(total);
}

LengthHistogram length_histogram(std::span<const std::string> texts)
{
    if (texts.empty()) {
        throw EvaluationError("no texts to evaluate");
    }
    LengthHistogram h;
    for (const auto &text : texts) {
        const auto len = static_cast<int>(tokenize(text).size());
        if (len == 0) {
            h.empty_fraction += 1;
            continue;
        }
        const auto label = length_label_for(len);
        (label == kShort ? h.short_fraction : label == kLong ? h.long_fraction : h.medium_fraction) += 1;
    }
    const auto n = static_cast<double>(texts.size());
    h.short_fraction /= n;
    h.medium_fraction /= n;
    h.long_fraction /= n;
    h.empty_fraction /= n;
    return h;
}

double length_accuracy(std::span<const std::string> texts, std::string_view condition)
{
    const auto h = length_histogram(texts);
    if (condition == kShort) {
        return h.short_fraction;
    }
    if (condition == kMedium) {
        return h.medium_fraction;
    }
    if (condition == kLong) {
        return h.long_fraction;
    }
    throw EvaluationError("unknown length condition: " + std::string(condition));
}

std::optional<double> accuracy_log_variance(std::span<const double> accuracies)
{
    if (accuracies.size() < 2) {
        throw EvaluationError("log-variance needs at least two accuracies");
    }
    const double n = static_cast<double>(accuracies.size());
    const double mu = std::accumulate(accuracies.begin(), accuracies.end(), 0.0) / n;
    double var = 0;
    for (double a : accuracies) {
        var += (a - mu) * (a - mu);
    }
    var /= n;
    if (var == 0.0) {
        return std::nullopt;
    }
    return std::log(var);
}

// ---------------------------------------------------------------------------

ConditionClassifier::ConditionClassifier(Vocabulary vocab, std::vector<std::string> labels,
    const ClassifierConfig &config)
    : vocab_(std::move(vocab))
    , labels_(std::move(labels))
    , config_(config)
{
    auto rng = make_stream(config_.seed, "classifier-init");
    embedding_ = &params_.add("embedding", gaussian<float>(vocab_.size(), config_.emb_dim, 0.1, rng));
    for (int w : config_.windows) {
        convs_.push_back(Linear<float>::create(params_, "conv" + std::to_string(w),
            static_cast<Eigen::Index>(w) * config_.emb_dim, config_.feature_maps, rng));
    }
    output_ = Linear<float>::create(params_, "output",
        static_cast<Eigen::Index>(config_.feature_maps * config_.windows.size()),
        static_cast<Eigen::Index>(labels_.size()), rng);
}

bool ConditionClassifier::has_label(std::string_view label) const
{
    return std::find(labels_.begin(), labels_.end(), label) != labels_.end();
}

std::vector<int> ConditionClassifier::encode(const std::string &text) const
{
    std::vector<int> ids;
    for (const auto &tok : tokenize(text)) {
        if (static_cast<int>(ids.size()) >= config_.max_len) {
            break;
        }
        ids.push_back(vocab_.id(tok));
    }
    return ids;
}

Var<float> ConditionClassifier::logits(Tape<float> &t, const std::vector<std::vector<int>> &batch) const
{
    const int widest = *std::max_element(config_.windows.begin(), config_.windows.end());
    Eigen::Index len = widest;
    for (const auto &ids : batch) {
        len = std::max<Eigen::Index>(len, static_cast<Eigen::Index>(ids.size()));
    }
    const auto b = static_cast<Eigen::Index>(batch.size());
    std::vector<int> flat(static_cast<std::size_t>(b * len), kPadId);
    for (std::size_t i = 0; i < batch.size(); ++i) {
        std::copy(batch[i].begin(), batch[i].end(), flat.begin() + static_cast<std::ptrdiff_t>(i * len));
    }
    auto x = gather_rows(t.parameter(*embedding_), std::move(flat));
    std::optional<Var<float>> features;
    for (std::size_t k = 0; k < convs_.size(); ++k) {
        const Eigen::Index w = config_.windows[k];
        auto conv = relu(convs_[k](t, unfold_windows(x, b, len, w)));
        auto pooled = max_pool_segments(conv, b, len - w + 1);
        features = features ? concat_cols(*features, pooled) : pooled;
    }
    return output_(t, *features);
}

std::vector<int> ConditionClassifier::predict(std::span<const std::string> texts) const
{
    std::vector<int> out(texts.size(), -1);
    std::vector<std::vector<int>> batch;
    std::vector<std::size_t> where;
    auto flush = [&] {
        if (batch.empty()) {
            return;
        }
        Tape<float> t(false);
        const Matrix<float> &l = logits(t, batch).value();
        for (std::size_t i = 0; i < where.size(); ++i) {
            Eigen::Index best = 0;
            l.row(static_cast<Eigen::Index>(i)).maxCoeff(&best);
            out[where[i]] = static_cast<int>(best);
        }
        batch.clear();
        where.clear();
    };
    for (std::size_t i = 0; i < texts.size(); ++i) {
        auto ids = encode(texts[i]);
        if (ids.empty()) {
            continue;
        }
        batch.push_back(std::move(ids));
        where.push_back(i);
        if (batch.size() == 256) {
            flush();
        }
    }
    flush();
    return out;
}

ConditionClassifier train_condition_classifier(std::span<const LabeledText> labeled, const ClassifierConfig &config)
{
    std::vector<std::string> labels;
    for (const auto &s : labeled) {
        if (std::find(labels.begin(), labels.end(), s.label) == labels.end()) {
            labels.push_back(s.label);
        }
    }
    if (labels.size() < 2) {
        throw EvaluationError("classifier needs at least two distinct labels");
    }
    std::sort(labels.begin(), labels.end());

    auto rng = make_stream(config.seed, "classifier-data");
    std::vector<std::size_t> order(labeled.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_val = static_cast<std::size_t>(std::floor(config.validation_fraction * static_cast<double>(labeled.size())));
    std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());

    std::vector<std::vector<std::string>> corpus;
    for (auto i : train) {
        corpus.push_back(tokenize(labeled[i].text));
    }
    ConditionClassifier clf(build_vocabulary(corpus, config.max_vocab), labels, config);
    auto label_index = [&](const std::string &l) {
        return static_cast<int>(std::find(labels.begin(), labels.end(), l) - labels.begin());
    };

    Adam<float> opt(clf.parameters().all(), AdamOptions{ config.lr, 0.9, 0.999 });
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(train.begin(), train.end(), rng);
        for (std::size_t start = 0; start < train.size(); start += static_cast<std::size_t>(config.batch)) {
            const auto end = std::min(train.size(), start + static_cast<std::size_t>(config.batch));
            std::vector<std::vector<int>> batch;
            std::vector<int> targets;
            for (std::size_t k = start; k < end; ++k) {
                auto ids = clf.encode(labeled[train[k]].text);
                if (ids.empty()) {
                    continue;
                }
                batch.push_back(std::move(ids));
                targets.push_back(label_index(labeled[train[k]].label));
            }
            if (batch.empty()) {
                continue;
            }
            Tape<float> t;
            const auto n = static_cast<float>(batch.size());
            std::vector<float> weights(targets.size(), 1.0F);
            auto loss = cross_entropy(clf.logits(t, batch), std::move(targets), std::move(weights), n);
            t.backward(loss);
            opt.step();
        }
    }

    const auto &eval_set = val.empty() ? train : val;
    std::vector<std::string> texts;
    for (auto i : eval_set) {
        texts.push_back(labeled[i].text);
    }
    const auto pred = clf.predict(texts);
    std::size_t correct = 0;
    for (std::size_t k = 0; k < eval_set.size(); ++k) {
        correct += pred[k] == label_index(labeled[eval_set[k]].label) ? 1 : 0;
    }
    clf.set_validation_accuracy(eval_set.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(eval_set.size()));
    return clf;
}

double classifier_accuracy(std::span<const std::string> texts, std::string_view condition,
    const ConditionClassifier &classifier)
{
    if (texts.empty()) {
        throw EvaluationError("no texts to evaluate");
    }
    const auto &labels = classifier.labels();
    const auto it = std::find(labels.begin(), labels.end(), condition);
    if (it == labels.end()) {
        throw EvaluationError("unknown condition: " + std::string(condition));
    }
    const int target = static_cast<int>(it - labels.begin());
    const auto pred = classifier.predict(texts);
    const auto hits = std::count(pred.begin(), pred.end(), target);
    return static_cast<double>(hits) / static_cast<double>(texts.size());
}

// ---------------------------------------------------------------------------

double EvaluationReport::mean_accuracy() const
{
    if (accuracy.empty()) {
        return 0;
    }
    double s = 0;
    for (const auto &[_, a] : accuracy) {
        s += a;
    }
    return s / static_cast<double>(accuracy.size());
}

EvaluationReport evaluate(const std::map<std::string, std::vector<std::string>> &generated, const TaskSpec &task)
{
    if (generated.empty()) {
        throw EvaluationError("no conditions to evaluate");
    }
    if (task.kind == TaskSpec::Kind::classifier && task.classifier == nullptr) {
        throw EvaluationError("classifier task without a classifier");
    }
    EvaluationReport r;
    std::vector<std::string> pooled;
    std::vector<double> accs;
    for (const auto &[cond, texts] : generated) {
        if (texts.empty()) {
            throw EvaluationError("condition " + cond + " has no generated texts");
        }
        const double acc = task.kind == TaskSpec::Kind::length ? length_accuracy(texts, cond)
                                                               : classifier_accuracy(texts, cond, *task.classifier);
        r.accuracy[cond] = acc;
        accs.push_back(acc);
        r.sample_counts[cond] = texts.size();
        r.distinct1_per_condition[cond] = distinct_n(texts, 1);
        r.distinct2_per_condition[cond] = distinct_n(texts, 2);
        pooled.insert(pooled.end(), texts.begin(), texts.end());
    }
    if (accs.size() >= 2) {
        r.log_variance = accuracy_log_variance(accs);
    }
    r.distinct1 = distinct_n(pooled, 1);
    r.distinct2 = distinct_n(pooled, 2);
    return r;
}

nlohmann::json to_json(const EvaluationReport &report)
{
    nlohmann::json j;
    j["accuracy"] = report.accuracy;
    j["mean_accuracy"] = report.mean_accuracy();
    if (report.accuracy.size() < 2) {
        j["log_variance"] = nullptr;
    } else if (report.log_variance) {
        j["log_variance"] = *report.log_variance;
    } else {
        j["log_variance"] = "all-equal";
    }
    j["distinct1"] = report.distinct1;
    j["distinct2"] = report.distinct2;
    j["distinct1_per_condition"] = report.distinct1_per_condition;
    j["distinct2_per_condition"] = report.distinct2_per_condition;
    j["sample_counts"] = report.sample_counts;
    return j;
}

std::string format_table(const EvaluationReport &report)
{
    std::ostringstream out;
    out << std::fixed;
    out << std::left << std::setw(16) << "Condition" << std::right << std::setw(10) << "Accuracy" << std::setw(14)
        << "Log-Variance" << std::setw(12) << "Distinct-1" << std::setw(12) << "Distinct-2" << std::setw(10) << "Samples"
        << '\n';
    for (const auto &[cond, acc] : report.accuracy) {
        out << std::left << std::setw(16) << cond << std::right << std::setprecision(4) << std::setw(10) << acc
            << std::setw(14) << "" << std::setw(12) << report.distinct1_per_condition.at(cond) << std::setw(12)
            << report.distinct2_per_condition.at(cond) << std::setw(10) << report.sample_counts.at(cond) << '\n';
    }
    std::ostringstream lv;
    if (report.accuracy.size() < 2) {
        lv << "-";
    } else if (report.log_variance) {
        lv << std::fixed << std::setprecision(2) << *report.log_variance;
    } else {
        lv << "all-equal";
    }
    std::size_t total = 0;
    for (const auto &[_, c] : report.sample_counts) {
        total += c;
    }
    out << std::left << std::setw(16) << "overall" << std::right << std::setprecision(4) << std::setw(10)
        << report.mean_accuracy() << std::setw(14) << lv.str() << std::setw(12) << report.distinct1 << std::setw(12)
        << report.distinct2 << std::setw(10) << total << '\n';
    return out.str();
}

} // namespace ppvae
