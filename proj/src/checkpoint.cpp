#include "ppvae/checkpoint.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>

namespace ppvae {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void put_f32(std::string &out, float v)
{
    std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFFu));
    }
}

float get_f32(const std::string &in, std::size_t at)
{
    std::uint32_t bits = 0;
    for (int i = 0; i < 4; ++i) {
        bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + static_cast<std::size_t>(i)])) << (8 * i);
    }
    return std::bit_cast<float>(bits);
}

std::string read_file(const fs::path &path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw CheckpointError("cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path &path, const std::string &data)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw CheckpointError("cannot write " + path.string());
    }
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
}

json read_json(const fs::path &path)
{
    try {
        return json::parse(read_file(path));
    } catch (const json::exception &e) {
        throw CheckpointError(path.string() + ": " + e.what());
    }
}

std::string sha256_hex(const std::string &a, const std::string &b)
{
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1
        || EVP_DigestUpdate(ctx.get(), a.data(), a.size()) != 1
        || EVP_DigestUpdate(ctx.get(), b.data(), b.size()) != 1 || EVP_DigestFinal_ex(ctx.get(), md, &len) != 1) {
        throw CheckpointError("sha256 failed");
    }
    std::ostringstream hex;
    for (unsigned int i = 0; i < len; ++i) {
        hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
    }
    return hex.str();
}

} // namespace

SerializedParameters serialize_parameters(const ParameterSet<float> &params)
{
    SerializedParameters out;
    json tensors = json::array();
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto &p = params[i];
        tensors.push_back({ { "name", p.name }, { "shape", { p.value.rows(), p.value.cols() } }, { "dtype", "f32" },
            { "offset", out.weights.size() } });
        for (Eigen::Index r = 0; r < p.value.rows(); ++r) {
            for (Eigen::Index c = 0; c < p.value.cols(); ++c) {
                put_f32(out.weights, p.value(r, c));
            }
        }
    }
    out.manifest = json{ { "tensors", tensors } }.dump(2) + "\n";
    return out;
}

std::string parameter_digest(const ParameterSet<float> &params)
{
    const auto s = serialize_parameters(params);
    return sha256_hex(s.manifest, s.weights);
}

void save_parameters(const ParameterSet<float> &params, const fs::path &dir)
{
    fs::create_directories(dir);
    const auto s = serialize_parameters(params);
    write_file(dir / "manifest.json", s.manifest);
    write_file(dir / "weights.bin", s.weights);
}

void load_parameters(ParameterSet<float> &params, const fs::path &dir)
{
    const json manifest = read_json(dir / "manifest.json");
    const std::string weights = read_file(dir / "weights.bin");
    const auto &tensors = manifest.at("tensors");
    if (tensors.size() != params.size()) {
        throw CheckpointError("checkpoint tensor count does not match the model");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto &p = params[i];
        const auto &entry = tensors[i];
        if (entry.at("name").get<std::string>() != p.name) {
            throw CheckpointError("unexpected tensor " + entry.at("name").get<std::string>() + ", wanted " + p.name);
        }
        if (entry.at("dtype").get<std::string>() != "f32") {
            throw CheckpointError("unsupported dtype for " + p.name);
        }
        const auto rows = entry.at("shape").at(0).get<Eigen::Index>();
        const auto cols = entry.at("shape").at(1).get<Eigen::Index>();
        if (rows != p.value.rows() || cols != p.value.cols()) {
            throw CheckpointError("shape mismatch for " + p.name);
        }
        auto offset = entry.at("offset").get<std::size_t>();
        if (offset + static_cast<std::size_t>(rows * cols) * 4 > weights.size()) {
            throw CheckpointError("weights.bin is truncated");
        }
        for (Eigen::Index r = 0; r < rows; ++r) {
            for (Eigen::Index c = 0; c < cols; ++c) {
                p.value(r, c) = get_f32(weights, offset);
                offset += 4;
            }
        }
        p.zero_grad();
    }
}

json to_json(const PretrainConfig &c)
{
    return json{ { "d_g", c.d_g }, { "emb_dim", c.emb_dim }, { "gru_hidden", c.gru_hidden },
        { "dec_layers", c.dec_layers }, { "dec_heads", c.dec_heads }, { "dec_ffn", c.dec_ffn },
        { "disc_hidden", c.disc_hidden }, { "lambda", c.lambda }, { "wdiv_k", c.wdiv_k }, { "wdiv_p", c.wdiv_p },
        { "batch", c.batch }, { "lr", c.lr }, { "adam_beta1", c.adam_beta1 }, { "adam_beta2", c.adam_beta2 },
        { "max_len", c.max_len }, { "max_vocab", c.max_vocab }, { "steps", c.steps }, { "seed", c.seed } };
}

PretrainConfig pretrain_config_from_json(const json &j, PretrainConfig c)
{
    auto get = [&](const char *key, auto &field) {
        if (j.contains(key)) {
            j.at(key).get_to(field);
        }
    };
    get("d_g", c.d_g);
    get("emb_dim", c.emb_dim);
    get("gru_hidden", c.gru_hidden);
    get("dec_layers", c.dec_layers);
    get("dec_heads", c.dec_heads);
    get("dec_ffn", c.dec_ffn);
    get("disc_hidden", c.disc_hidden);
    get("lambda", c.lambda);
    get("wdiv_k", c.wdiv_k);
    get("wdiv_p", c.wdiv_p);
    get("batch", c.batch);
    get("lr", c.lr);
    get("adam_beta1", c.adam_beta1);
    get("adam_beta2", c.adam_beta2);
    get("max_len", c.max_len);
    get("max_vocab", c.max_vocab);
    get("steps", c.steps);
    get("seed", c.seed);
    return c;
}

json to_json(const PluginConfig &c)
{
    return json{ { "d_g", c.d_g }, { "d_c", c.d_c }, { "enc_hidden1", c.enc_hidden1 },
        { "enc_hidden2", c.enc_hidden2 }, { "dec_hidden1", c.dec_hidden1 }, { "dec_hidden2", c.dec_hidden2 },
        { "gamma", c.gamma }, { "beta_max", c.beta_max }, { "beta_warmup_iters", c.beta_warmup_iters },
        { "total_iters", c.total_iters }, { "batch", c.batch }, { "lr", c.lr }, { "adam_beta1", c.adam_beta1 },
        { "adam_beta2", c.adam_beta2 }, { "clamp_negatives", c.clamp_negatives },
        { "clamp_factor", c.clamp_factor }, { "seed", c.seed } };
}

PluginConfig plugin_config_from_json(const json &j, PluginConfig c)
{
    auto get = [&](const char *key, auto &field) {
        if (j.contains(key)) {
            j.at(key).get_to(field);
        }
    };
    get("d_g", c.d_g);
    get("d_c", c.d_c);
    get("enc_hidden1", c.enc_hidden1);
    get("enc_hidden2", c.enc_hidden2);
    get("dec_hidden1", c.dec_hidden1);
    get("dec_hidden2", c.dec_hidden2);
    get("gamma", c.gamma);
    get("beta_max", c.beta_max);
    get("beta_warmup_iters", c.beta_warmup_iters);
    get("total_iters", c.total_iters);
    get("batch", c.batch);
    get("lr", c.lr);
    get("adam_beta1", c.adam_beta1);
    get("adam_beta2", c.adam_beta2);
    get("clamp_negatives", c.clamp_negatives);
    get("clamp_factor", c.clamp_factor);
    get("seed", c.seed);
    return c;
}

void save_pretrain(const PretrainVae<float> &model, const Vocabulary &vocab, const fs::path &dir)
{
    save_parameters(model.parameters(), dir);
    json cfg = to_json(model.config());
    cfg["vocab_size"] = vocab.size();
    write_file(dir / "config.json", cfg.dump(2) + "\n");
    vocab.save(dir / "vocab.txt");
}

PretrainCheckpoint load_pretrain(const fs::path &dir)
{
    const json cfg = read_json(dir / "config.json");
    auto vocab = Vocabulary::load(dir / "vocab.txt");
    if (cfg.contains("vocab_size") && cfg.at("vocab_size").get<int>() != vocab.size()) {
        throw CheckpointError("vocab.txt does not match config.json");
    }
    PretrainVae<float> model(pretrain_config_from_json(cfg), vocab.size());
    load_parameters(model.parameters(), dir);
    auto digest = parameter_digest(model.parameters());
    return { std::move(vocab), std::move(model), std::move(digest) };
}

void save_plugin(const PluginVae<float> &model, const PluginMeta &meta, const fs::path &dir)
{
    save_parameters(model.parameters(), dir);
    json j{ { "condition", meta.condition }, { "gamma", meta.gamma },
        { "beta_schedule",
            { { "beta_max", meta.beta_max }, { "warmup_iters", meta.beta_warmup_iters }, { "shape", "linear" } } },
        { "iterations", meta.total_iters }, { "used_negatives", meta.used_negatives },
        { "pretrain_digest", meta.pretrain_digest }, { "parameter_count", model.count_parameters() },
        { "config", to_json(model.config()) } };
    write_file(dir / "plugin.json", j.dump(2) + "\n");
}

PluginCheckpoint load_plugin(const fs::path &dir, const std::string &pretrain_digest)
{
    const json j = read_json(dir / "plugin.json");
    PluginMeta meta;
    meta.condition = j.at("condition").get<std::string>();
    meta.gamma = j.at("gamma").get<double>();
    meta.beta_max = j.at("beta_schedule").at("beta_max").get<double>();
    meta.beta_warmup_iters = j.at("beta_schedule").at("warmup_iters").get<int>();
    meta.total_iters = j.at("iterations").get<int>();
    meta.used_negatives = j.value("used_negatives", false);
    meta.pretrain_digest = j.at("pretrain_digest").get<std::string>();
    if (meta.pretrain_digest != pretrain_digest) {
        throw DigestMismatch();
    }
    PluginVae<float> model(plugin_config_from_json(j.at("config")));
    load_parameters(model.parameters(), dir);
    return { std::move(model), std::move(meta) };
}

} // namespace ppvae
