#include "ppvae/cli.hpp"

#include "ppvae/checkpoint.hpp"
#include "ppvae/evaluation.hpp"
#include "ppvae/generation.hpp"
#include "ppvae/plugin_vae.hpp"
#include "ppvae/pretrain_vae.hpp"
#include "ppvae/synthetic.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <future>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <set>

namespace ppvae::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class UsageError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

fs::path checkpoint_root()
{
    const char *root = std::getenv(kCheckpointRootEnv);
    return root != nullptr && *root != '\0' ? fs::path(root) : fs::path("checkpoints");
}

json read_config_file(const std::string &path)
{
    if (path.empty()) {
        return json::object();
    }
    std::ifstream in(path);
    if (!in) {
        throw UsageError("cannot open config file " + path);
    }
    try {
        auto j = json::parse(in);
        if (!j.is_object()) {
            throw UsageError("config file must hold a JSON object: " + path);
        }
        return j;
    } catch (const json::exception &e) {
        throw UsageError("bad config file " + path + ": " + e.what());
    }
}

template <typename T, typename U>
void apply(const std::optional<T> &flag, U &field)
{
    if (flag) {
        field = static_cast<U>(*flag);
    }
}

void require_file(const fs::path &p, const char *what)
{
    if (!fs::is_regular_file(p)) {
        throw UsageError(std::string(what) + " not found: " + p.string());
    }
}

// pretrain -------------------------------------------------------------------

struct PretrainArgs {
    std::string corpus;
    std::string out;
    std::string config;
    std::optional<int> d_g, emb_dim, gru_hidden, dec_layers, dec_heads, dec_ffn, disc_hidden;
    std::optional<double> lambda, wdiv_k, wdiv_p, lr, adam_beta1, adam_beta2;
    std::optional<int> batch, max_len, max_vocab, steps;
    std::optional<std::uint64_t> seed;

    void attach(CLI::App &app)
    {
        app.add_option("--corpus", corpus, "Unlabeled corpus, one sentence per line")->required();
        app.add_option("--out", out, "Checkpoint directory [$" + std::string(kCheckpointRootEnv) + "/pretrain]");
        app.add_option("--config", config, "JSON file with config fields");
        app.add_option("--d-g", d_g, "Global latent size");
        app.add_option("--emb-dim", emb_dim);
        app.add_option("--gru-hidden", gru_hidden);
        app.add_option("--dec-layers", dec_layers);
        app.add_option("--dec-heads", dec_heads);
        app.add_option("--dec-ffn", dec_ffn);
        app.add_option("--disc-hidden", disc_hidden);
        app.add_option("--lambda", lambda, "Adversarial weight");
        app.add_option("--wdiv-k", wdiv_k);
        app.add_option("--wdiv-p", wdiv_p);
        app.add_option("--batch", batch);
        app.add_option("--lr", lr);
        app.add_option("--adam-beta1", adam_beta1);
        app.add_option("--adam-beta2", adam_beta2);
        app.add_option("--max-len", max_len);
        app.add_option("--max-vocab", max_vocab);
        app.add_option("--steps", steps);
        app.add_option("--seed", seed);
    }

    PretrainConfig resolve() const
    {
        auto c = pretrain_config_from_json(read_config_file(config));
        apply(d_g, c.d_g);
        apply(emb_dim, c.emb_dim);
        apply(gru_hidden, c.gru_hidden);
        apply(dec_layers, c.dec_layers);
        apply(dec_heads, c.dec_heads);
        apply(dec_ffn, c.dec_ffn);
        apply(disc_hidden, c.disc_hidden);
        apply(lambda, c.lambda);
        apply(wdiv_k, c.wdiv_k);
        apply(wdiv_p, c.wdiv_p);
        apply(batch, c.batch);
        apply(lr, c.lr);
        apply(adam_beta1, c.adam_beta1);
        apply(adam_beta2, c.adam_beta2);
        apply(max_len, c.max_len);
        apply(max_vocab, c.max_vocab);
        apply(steps, c.steps);
        apply(seed, c.seed);
        return c;
    }
};

int cmd_pretrain(const PretrainArgs &args, std::ostream &out)
{
    const auto config = args.resolve();
    try {
        config.validate();
    } catch (const std::invalid_argument &e) {
        throw UsageError(e.what());
    }
    require_file(args.corpus, "corpus");
    const fs::path dir = args.out.empty() ? checkpoint_root() / "pretrain" : fs::path(args.out);

    const auto tokens = load_unlabeled(args.corpus, config.max_len);
    const auto vocab = build_vocabulary(tokens, config.max_vocab);
    std::vector<TokenSequence> data;
    data.reserve(tokens.size());
    for (const auto &t : tokens) {
        data.push_back(encode_text(t, vocab, config.max_len));
    }
    out << "corpus: " << data.size() << " sentences, vocabulary " << vocab.size() << '\n';

    PretrainVae<float> model(config, vocab.size());
    out << "parameters: " << model.count_parameters() << '\n';
    PretrainTrainer<float> trainer(model);
    out << std::fixed << std::setprecision(4);
    trainer.fit(data, config.steps, [&](int epoch, const PretrainLosses<float> &l) {
        out << "epoch " << epoch << " reconstruction " << l.reconstruction << " adversarial " << l.adversarial
            << " critic " << l.discriminator << '\n'
            << std::flush;
    });
    save_pretrain(model, vocab, dir);
    out << "saved " << dir.string() << " digest " << parameter_digest(model.parameters()) << '\n';
    return kExitOk;
}

// train-plugin -----------------------------------------------------------------

struct PluginArgs {
    std::string pretrain;
    std::string labeled;
    std::vector<std::string> conditions;
    std::string out;
    std::string config;
    std::string task;
    bool no_negatives = false;
    bool use_negatives = false;
    int n_per_condition = 200;
    std::optional<int> d_c, enc_hidden1, enc_hidden2, dec_hidden1, dec_hidden2;
    std::optional<double> gamma, beta_max, lr, adam_beta1, adam_beta2, clamp_factor;
    std::optional<int> beta_warmup_iters, total_iters, batch;
    bool clamp_negatives = false;
    std::optional<std::uint64_t> seed;

    void attach(CLI::App &app)
    {
        app.add_option("--pretrain", pretrain, "Pretrain checkpoint [$" + std::string(kCheckpointRootEnv) + "/pretrain]");
        app.add_option("--labeled", labeled, "Labeled TSV: label<TAB>sentence")->required();
        app.add_option("--condition", conditions, "Condition(s) to train; several train concurrently")->required();
        app.add_option("--out", out, "Directory receiving one plugin per condition [$"
                + std::string(kCheckpointRootEnv) + "/plugins]");
        app.add_option("--config", config, "JSON file with config fields");
        app.add_option("--task", task, "Task family presetting gamma")
            ->check(CLI::IsMember({ "sentiment", "topic", "categorical", "length" }));
        auto *no = app.add_flag("--no-negatives", no_negatives, "Single-condition objective");
        auto *yes = app.add_flag("--use-negatives", use_negatives, "Repel the other conditions (default)");
        no->excludes(yes);
        app.add_option("--n-per-condition", n_per_condition, "Positive samples per condition")
            ->check(CLI::PositiveNumber);
        app.add_option("--d-c", d_c, "Conditional latent size");
        app.add_option("--enc-hidden1", enc_hidden1);
        app.add_option("--enc-hidden2", enc_hidden2);
        app.add_option("--dec-hidden1", dec_hidden1);
        app.add_option("--dec-hidden2", dec_hidden2);
        app.add_option("--gamma", gamma, "Negative-sample weight");
        app.add_option("--beta-max", beta_max);
        app.add_option("--beta-warmup-iters", beta_warmup_iters);
        app.add_option("--total-iters", total_iters);
        app.add_option("--batch", batch);
        app.add_option("--lr", lr);
        app.add_option("--adam-beta1", adam_beta1);
        app.add_option("--adam-beta2", adam_beta2);
        app.add_flag("--clamp-negatives", clamp_negatives);
        app.add_option("--clamp-factor", clamp_factor);
        app.add_option("--seed", seed);
    }

    PluginConfig resolve(int d_g) const
    {
        PluginConfig base;
        if (!task.empty()) {
            base.gamma = default_gamma(task);
        }
        const auto file = read_config_file(config);
        auto c = plugin_config_from_json(file, base);
        if (file.contains("d_g") && c.d_g != d_g) {
            throw UsageError("config d_g does not match the pretrain latent size");
        }
        c.d_g = d_g;
        apply(d_c, c.d_c);
        apply(enc_hidden1, c.enc_hidden1);
        apply(enc_hidden2, c.enc_hidden2);
        apply(dec_hidden1, c.dec_hidden1);
        apply(dec_hidden2, c.dec_hidden2);
        apply(gamma, c.gamma);
        apply(beta_max, c.beta_max);
        apply(beta_warmup_iters, c.beta_warmup_iters);
        apply(total_iters, c.total_iters);
        apply(batch, c.batch);
        apply(lr, c.lr);
        apply(adam_beta1, c.adam_beta1);
        apply(adam_beta2, c.adam_beta2);
        if (clamp_negatives) {
            c.clamp_negatives = true;
        }
        apply(clamp_factor, c.clamp_factor);
        apply(seed, c.seed);
        return c;
    }
};

int cmd_train_plugin(const PluginArgs &args, std::ostream &out)
{
    const fs::path pretrain_dir = args.pretrain.empty() ? checkpoint_root() / "pretrain" : fs::path(args.pretrain);
    const fs::path out_dir = args.out.empty() ? checkpoint_root() / "plugins" : fs::path(args.out);
    require_file(args.labeled, "labeled data");
    const auto pretrain = load_pretrain(pretrain_dir);
    const auto config = args.resolve(pretrain.model.latent_dim());
    try {
        config.validate();
    } catch (const std::invalid_argument &e) {
        throw UsageError(e.what());
    }

    const int max_len = pretrain.model.config().max_len;
    const auto labeled = encode_labeled(load_labeled(args.labeled, max_len), pretrain.vocab, max_len);
    std::set<std::string> known;
    for (const auto &s : labeled) {
        known.insert(s.condition);
    }
    std::vector<std::string> conditions;
    for (const auto &c : args.conditions) {
        if (known.count(c) == 0) {
            throw UsageError("unknown condition: " + c);
        }
        if (std::find(conditions.begin(), conditions.end(), c) == conditions.end()) {
            conditions.push_back(c);
        }
    }
    const bool negatives = !args.no_negatives;

    std::vector<ConditionDataset<float>> datasets;
    for (const auto &cond : conditions) {
        ConditionSetOptions opts;
        opts.n_per_condition = args.n_per_condition;
        opts.seed = config.seed;
        const auto sets = make_condition_sets(labeled, cond, opts);
        ConditionDataset<float> ds{ cond, pretrain.model.encode(sets.positives).mean, std::nullopt };
        if (negatives && !sets.negatives.empty()) {
            ds.negatives = pretrain.model.encode(sets.negatives).mean;
        }
        out << "condition " << cond << ": " << sets.positives.size() << " positives, "
            << (ds.negatives ? sets.negatives.size() : 0) << " negatives\n";
        datasets.push_back(std::move(ds));
    }

    std::vector<std::future<PluginTrainingResult<float>>> jobs;
    for (const auto &ds : datasets) {
        jobs.push_back(std::async(std::launch::async, [&ds, &config] { return train_plugin(ds, config); }));
    }
    std::vector<PluginTrainingResult<float>> results;
    std::exception_ptr failure;
    for (auto &job : jobs) {
        try {
            results.push_back(job.get());
        } catch (...) {
            failure = failure ? failure : std::current_exception();
        }
    }
    if (failure) {
        std::rethrow_exception(failure);
    }

    out << std::fixed << std::setprecision(4);
    for (std::size_t i = 0; i < results.size(); ++i) {
        const auto &ds = datasets[i];
        PluginMeta meta{ ds.name, ds.negatives ? config.gamma : 0.0, config.beta_max, config.beta_warmup_iters,
            config.total_iters, ds.negatives.has_value(), pretrain.digest };
        const auto dir = out_dir / ds.name;
        save_plugin(results[i].model, meta, dir);
        out << "plugin " << ds.name << ": parameters " << results[i].model.count_parameters() << ", final loss "
            << results[i].loss_trace.back() << ", saved " << dir.string() << '\n';
    }
    return kExitOk;
}

// generate ---------------------------------------------------------------------

struct GenerateArgs {
    std::string pretrain;
    std::string plugin;
    std::string condition;
    bool unconditional = false;
    int n = 10000;
    std::uint64_t seed = 0;
    std::optional<int> max_len;
    std::string out;
    bool jsonl = false;

    void attach(CLI::App &app)
    {
        app.add_option("--pretrain", pretrain, "Pretrain checkpoint [$" + std::string(kCheckpointRootEnv) + "/pretrain]");
        auto *p = app.add_option("--plugin", plugin, "Plugin checkpoint directory");
        auto *c = app.add_option("--condition", condition,
            "Plugin under $" + std::string(kCheckpointRootEnv) + "/plugins/<condition>");
        auto *u = app.add_flag("--unconditional", unconditional, "Sample the global prior directly");
        p->excludes(c)->excludes(u);
        c->excludes(u);
        app.add_option("--n", n, "Number of sentences")->check(CLI::NonNegativeNumber);
        app.add_option("--seed", seed);
        app.add_option("--max-len", max_len, "Maximum content tokens");
        app.add_option("--out", out, "Output file")->required();
        app.add_flag("--jsonl", jsonl, "Write JSON lines instead of plain text");
    }
};

int cmd_generate(const GenerateArgs &args, std::ostream &out)
{
    if (!args.unconditional && args.plugin.empty() && args.condition.empty()) {
        throw UsageError("generate needs --plugin, --condition or --unconditional");
    }
    const fs::path pretrain_dir = args.pretrain.empty() ? checkpoint_root() / "pretrain" : fs::path(args.pretrain);
    const auto pretrain = load_pretrain(pretrain_dir);
    const int max_len = args.max_len.value_or(pretrain.model.config().max_len);
    if (max_len < 1 || max_len > pretrain.model.config().max_len) {
        throw UsageError("--max-len must be in [1, " + std::to_string(pretrain.model.config().max_len) + "]");
    }

    std::vector<std::string> texts;
    std::string condition(kUnconditional);
    if (args.unconditional) {
        texts = unconditional_generate(pretrain, args.n, args.seed, max_len);
    } else {
        const fs::path dir = args.plugin.empty() ? checkpoint_root() / "plugins" / args.condition : fs::path(args.plugin);
        const auto plugin = load_plugin(dir, pretrain.digest);
        condition = plugin.meta.condition;
        texts = plugin_generate(plugin, pretrain, GenerationRequest{ condition, args.n, args.seed, max_len });
    }
    write_generations(args.out, texts, condition, args.jsonl);
    out << "wrote " << texts.size() << " sentences (" << condition << ") to " << args.out << '\n';
    return kExitOk;
}

// evaluate ---------------------------------------------------------------------

struct EvaluateArgs {
    std::string task = "length";
    std::vector<std::string> inputs;
    std::string labeled;
    std::string out;
    std::uint64_t seed = 0;
    int classifier_epochs = ClassifierConfig{}.epochs;

    void attach(CLI::App &app)
    {
        app.add_option("--task", task, "length or classifier")->check(CLI::IsMember({ "length", "classifier" }));
        app.add_option("--input", inputs, "condition=path of generated text")->required();
        app.add_option("--labeled", labeled, "Labeled TSV for training the classifier");
        app.add_option("--out", out, "Report directory")->required();
        app.add_option("--seed", seed);
        app.add_option("--classifier-epochs", classifier_epochs)->check(CLI::PositiveNumber);
    }
};

std::vector<std::string> read_generated(const fs::path &path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open generated file " + path.string());
    }
    std::vector<std::string> texts;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.front() == '{') {
            try {
                texts.push_back(json::parse(line).at("text").get<std::string>());
                continue;
            } catch (const json::exception &) {
                // Plain text that happens to start with a brace.
            }
        }
        texts.push_back(line);
    }
    return texts;
}

int cmd_evaluate(const EvaluateArgs &args, std::ostream &out)
{
    std::map<std::string, std::vector<std::string>> generated;
    for (const auto &spec : args.inputs) {
        const auto eq = spec.find('=');
        if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size()) {
            throw UsageError("--input expects condition=path, got " + spec);
        }
        const std::string cond = spec.substr(0, eq);
        const fs::path path = spec.substr(eq + 1);
        if (!fs::is_regular_file(path)) {
            throw std::runtime_error("generated file not found: " + path.string());
        }
        if (generated.count(cond) != 0) {
            throw UsageError("condition given twice: " + cond);
        }
        generated[cond] = read_generated(path);
    }

    TaskSpec spec;
    std::optional<ConditionClassifier> classifier;
    json extra = json::object();
    if (args.task == "classifier") {
        if (args.labeled.empty()) {
            throw UsageError("--task classifier needs --labeled");
        }
        require_file(args.labeled, "labeled data");
        ClassifierConfig cc;
        cc.seed = args.seed;
        cc.epochs = args.classifier_epochs;
        std::vector<LabeledText> rows;
        for (const auto &r : load_labeled(args.labeled, cc.max_len)) {
            std::string text;
            for (const auto &t : r.tokens) {
                text += text.empty() ? t : " " + t;
            }
            rows.push_back({ r.label, std::move(text) });
        }
        classifier = train_condition_classifier(rows, cc);
        for (const auto &[cond, _] : generated) {
            if (!classifier->has_label(cond)) {
                throw UsageError("condition " + cond + " is not a classifier label");
            }
        }
        spec.kind = TaskSpec::Kind::classifier;
        spec.classifier = &*classifier;
        extra["classifier_validation_accuracy"] = classifier->validation_accuracy();
        out << "classifier validation accuracy " << std::fixed << std::setprecision(4)
            << classifier->validation_accuracy() << '\n';
    }

    const auto report = evaluate(generated, spec);
    auto j = to_json(report);
    j["task"] = args.task;
    j.update(extra);
    const fs::path dir(args.out);
    fs::create_directories(dir);
    std::ofstream(dir / "report.json", std::ios::binary) << j.dump(2) << '\n';
    const auto table = format_table(report);
    std::ofstream(dir / "report.txt", std::ios::binary) << table;
    out << table;
    return kExitOk;
}

// make-synthetic -----------------------------------------------------------------

struct SyntheticArgs {
    std::string out;
    std::string config;
    std::optional<int> n_unlabeled, n_labeled_per_condition, vocab_words, branching, min_len, max_len;
    std::optional<std::uint64_t> seed;

    void attach(CLI::App &app)
    {
        app.add_option("--out", out, "Directory for unlabeled.txt and labeled.tsv")->required();
        app.add_option("--config", config, "JSON file with config fields");
        app.add_option("--n-unlabeled", n_unlabeled);
        app.add_option("--n-labeled-per-condition", n_labeled_per_condition);
        app.add_option("--vocab-words", vocab_words);
        app.add_option("--branching", branching);
        app.add_option("--min-len", min_len);
        app.add_option("--max-len", max_len);
        app.add_option("--seed", seed);
    }

    SyntheticConfig resolve() const
    {
        const auto j = read_config_file(config);
        SyntheticConfig c;
        auto get = [&](const char *key, auto &field) {
            if (j.contains(key)) {
                j.at(key).get_to(field);
            }
        };
        get("n_unlabeled", c.n_unlabeled);
        get("n_labeled_per_condition", c.n_labeled_per_condition);
        get("vocab_words", c.vocab_words);
        get("branching", c.branching);
        get("min_len", c.min_len);
        get("max_len", c.max_len);
        get("seed", c.seed);
        apply(n_unlabeled, c.n_unlabeled);
        apply(n_labeled_per_condition, c.n_labeled_per_condition);
        apply(vocab_words, c.vocab_words);
        apply(branching, c.branching);
        apply(min_len, c.min_len);
        apply(max_len, c.max_len);
        apply(seed, c.seed);
        return c;
    }
};

int cmd_make_synthetic(const SyntheticArgs &args, std::ostream &out)
{
    const auto config = args.resolve();
    try {
        config.validate();
    } catch (const std::invalid_argument &e) {
        throw UsageError(e.what());
    }
    const auto corpus = make_synthetic(config);
    write_synthetic(corpus, args.out);
    out << "wrote " << corpus.unlabeled.size() << " unlabeled and " << corpus.labeled.size()
        << " labeled sentences to " << args.out << '\n';
    return kExitOk;
}

} // namespace

int run(const std::vector<std::string> &args, std::ostream &out, std::ostream &err)
{
    CLI::App app("Pre-trained text autoencoder with plug-in conditional VAEs", "ppvae");
    app.require_subcommand(1);

    PretrainArgs pretrain;
    PluginArgs plugin;
    GenerateArgs generate;
    EvaluateArgs evaluation;
    SyntheticArgs synthetic;
    auto *c_pretrain = app.add_subcommand("pretrain", "Train the global autoencoder on unlabeled text");
    auto *c_plugin = app.add_subcommand("train-plugin", "Train plug-in VAEs for one or more conditions");
    auto *c_generate = app.add_subcommand("generate", "Generate sentences from a plugin or the global prior");
    auto *c_evaluate = app.add_subcommand("evaluate", "Score generated text");
    auto *c_synthetic = app.add_subcommand("make-synthetic", "Write a seeded toy corpus");
    pretrain.attach(*c_pretrain);
    plugin.attach(*c_plugin);
    generate.attach(*c_generate);
    evaluation.attach(*c_evaluate);
    synthetic.attach(*c_synthetic);

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (c_pretrain->parsed()) {
            return cmd_pretrain(pretrain, out);
        }
        if (c_plugin->parsed()) {
            return cmd_train_plugin(plugin, out);
        }
        if (c_generate->parsed()) {
            return cmd_generate(generate, out);
        }
        if (c_evaluate->parsed()) {
            return cmd_evaluate(evaluation, out);
        }
        return cmd_make_synthetic(synthetic, out);
    } catch (const UsageError &e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception &e) {
        err << "error: " << e.what() << '\n';
        return kExitFailure;
    }
}

int run(int argc, const char *const *argv, std::ostream &out, std::ostream &err)
{
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) {
        args.emplace_back(argv[i]);
    }
    return run(args, out, err);
}

} // namespace ppvae::cli
