#include "ppvae/plugin_vae.hpp"

#include "ppvae/rng.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ppvae {

void PluginConfig::validate() const
{
    if (d_g <= 0 || d_c <= 0 || enc_hidden1 <= 0 || enc_hidden2 <= 0 || dec_hidden1 <= 0 || dec_hidden2 <= 0) {
        throw std::invalid_argument("plugin dimensions must be positive");
    }
    if (d_c >= d_g) {
        throw std::invalid_argument("d_c must be smaller than d_g");
    }
    if (!(gamma >= 0)) {
        throw std::invalid_argument("gamma must be >= 0");
    }
    if (!(beta_max >= 0)) {
        throw std::invalid_argument("beta_max must be >= 0");
    }
    if (beta_warmup_iters < 0 || total_iters < 0 || beta_warmup_iters > total_iters) {
        throw std::invalid_argument("need 0 <= beta_warmup_iters <= total_iters");
    }
    if (batch <= 0 || !(lr > 0)) {
        throw std::invalid_argument("batch and lr must be positive");
    }
}

double default_gamma(std::string_view task)
{
    if (task == "sentiment") {
        return 0.1;
    }
    if (task == "topic" || task == "categorical") {
        return 0.05;
    }
    if (task == "length") {
        return 3e-3;
    }
    throw std::invalid_argument("unknown task: " + std::string(task));
}

double beta_at(long long iteration, const PluginConfig &config)
{
    if (iteration < 0) {
        throw std::invalid_argument("iteration must be >= 0");
    }
    if (config.beta_warmup_iters <= 0) {
        return config.beta_max;
    }
    const double frac = std::min(static_cast<double>(iteration) / config.beta_warmup_iters, 1.0);
    return frac * config.beta_max;
}

template <typename Scalar>
PluginVae<Scalar>::PluginVae(const PluginConfig &config)
    : config_(config)
{
    config_.validate();
    auto rng = make_stream(config_.seed, "plugin-init");
    enc1_ = Linear<Scalar>::create(params_, "encoder.l1", config_.d_g, config_.enc_hidden1, rng);
    enc2_ = Linear<Scalar>::create(params_, "encoder.l2", config_.enc_hidden1, config_.enc_hidden2, rng);
    mean_head_ = Linear<Scalar>::create(params_, "encoder.mean", config_.enc_hidden2, config_.d_c, rng);
    logvar_head_ = Linear<Scalar>::create(params_, "encoder.logvar", config_.enc_hidden2, config_.d_c, rng);
    dec1_ = Linear<Scalar>::create(params_, "decoder.l1", config_.d_c, config_.dec_hidden1, rng);
    dec2_ = Linear<Scalar>::create(params_, "decoder.l2", config_.dec_hidden1, config_.dec_hidden2, rng);
    dec_out_ = Linear<Scalar>::create(params_, "decoder.out", config_.dec_hidden2, config_.d_g, rng);
}

template <typename Scalar>
PosteriorVars<Scalar> PluginVae<Scalar>::encode(Tape<Scalar> &t, Var<Scalar> v) const
{
    if (v.cols() != config_.d_g) {
        throw ShapeError("plugin encode: expected global-latent rows");
    }
    auto h = leaky_relu(enc2_(t, leaky_relu(enc1_(t, v))));
    return { mean_head_(t, h), logvar_head_(t, h) };
}

template <typename Scalar>
Var<Scalar> PluginVae<Scalar>::decode(Tape<Scalar> &t, Var<Scalar> z) const
{
    if (z.cols() != config_.d_c) {
        throw ShapeError("plugin decode: expected condition-latent rows");
    }
    return dec_out_(t, leaky_relu(dec2_(t, leaky_relu(dec1_(t, z)))));
}

template <typename Scalar>
GaussianPosterior<Scalar> PluginVae<Scalar>::encode(const Matrix<Scalar> &v) const
{
    Tape<Scalar> t(false);
    auto post = encode(t, t.constant(v));
    return { post.mean.value(), post.log_variance.value() };
}

template <typename Scalar>
Matrix<Scalar> PluginVae<Scalar>::decode(const Matrix<Scalar> &z) const
{
    Tape<Scalar> t(false);
    return decode(t, t.constant(z)).value();
}

template <typename Scalar>
Var<Scalar> PluginVae<Scalar>::loss_single(Tape<Scalar> &t, const Matrix<Scalar> &v, Scalar beta,
    const Matrix<Scalar> &noise) const
{
    auto input = t.constant(v);
    auto post = encode(t, input);
    auto recon = decode(t, reparameterize(post, noise));
    auto err = mean(row_sum(square(sub(recon, input))));
    auto kl = mean(kl_to_standard_normal(post));
    return add(err, abs(affine(kl, Scalar(1), -beta)));
}

template <typename Scalar>
Scalar PluginVae<Scalar>::loss_single(const Matrix<Scalar> &v, Scalar beta, const Matrix<Scalar> &noise) const
{
    Tape<Scalar> t(false);
    return loss_single(t, v, beta, noise).item();
}

template <typename Scalar>
Var<Scalar> PluginVae<Scalar>::loss_with_negatives(Tape<Scalar> &t, const Matrix<Scalar> &v_pos,
    const Matrix<Scalar> &v_neg, Scalar beta, Scalar gamma, const Matrix<Scalar> &noise_pos,
    const Matrix<Scalar> &noise_neg) const
{
    auto pos = loss_single(t, v_pos, beta, noise_pos);
    auto neg = scale(loss_single(t, v_neg, beta, noise_neg), gamma);
    if (config_.clamp_negatives) {
        const Scalar ceiling = static_cast<Scalar>(config_.clamp_factor) * pos.item();
        if (neg.item() > ceiling) {
            neg = t.constant(Matrix<Scalar>::Constant(1, 1, ceiling));
        }
    }
    return sub(pos, neg);
}

template <typename Scalar>
Scalar PluginVae<Scalar>::loss_with_negatives(const Matrix<Scalar> &v_pos, const Matrix<Scalar> &v_neg, Scalar beta,
    Scalar gamma, const Matrix<Scalar> &noise_pos, const Matrix<Scalar> &noise_neg) const
{
    Tape<Scalar> t(false);
    return loss_with_negatives(t, v_pos, v_neg, beta, gamma, noise_pos, noise_neg).item();
}

namespace {

template <typename Scalar>
Matrix<Scalar> sample_rows(const Matrix<Scalar> &source, int count, std::mt19937_64 &rng)
{
    std::uniform_int_distribution<Eigen::Index> pick(0, source.rows() - 1);
    Matrix<Scalar> out(count, source.cols());
    for (int i = 0; i < count; ++i) {
        out.row(i) = source.row(pick(rng));
    }
    return out;
}

} // namespace

template <typename Scalar>
PluginTrainingResult<Scalar> train_plugin(const ConditionDataset<Scalar> &dataset, const PluginConfig &config)
{
    if (dataset.positives.rows() == 0) {
        throw std::invalid_argument("plugin training needs at least one positive");
    }
    PluginConfig cfg = config;
    cfg.d_g = static_cast<int>(dataset.positives.cols());
    PluginTrainingResult<Scalar> result{ PluginVae<Scalar>(cfg), {} };
    auto &model = result.model;
    const bool with_negatives = dataset.negatives.has_value() && dataset.negatives->rows() > 0;
    if (with_negatives && dataset.negatives->cols() != dataset.positives.cols()) {
        throw ShapeError("negatives and positives differ in dimension");
    }

    Adam<Scalar> opt(model.parameters().all(), AdamOptions{ cfg.lr, cfg.adam_beta1, cfg.adam_beta2 });
    auto batch_rng = make_stream(cfg.seed, "plugin-batches");
    auto noise_rng = make_stream(cfg.seed, "plugin-noise");
    result.loss_trace.reserve(static_cast<std::size_t>(cfg.total_iters));

    for (int it = 0; it < cfg.total_iters; ++it) {
        const auto beta = static_cast<Scalar>(beta_at(it, cfg));
        const Matrix<Scalar> vp = sample_rows(dataset.positives, cfg.batch, batch_rng);
        const Matrix<Scalar> np = standard_normal<Scalar>(cfg.batch, cfg.d_c, noise_rng);
        Tape<Scalar> t;
        Var<Scalar> loss;
        if (with_negatives) {
            const Matrix<Scalar> vn = sample_rows(*dataset.negatives, cfg.batch, batch_rng);
            const Matrix<Scalar> nn = standard_normal<Scalar>(cfg.batch, cfg.d_c, noise_rng);
            loss = model.loss_with_negatives(t, vp, vn, beta, static_cast<Scalar>(cfg.gamma), np, nn);
        } else {
            loss = model.loss_single(t, vp, beta, np);
        }
        const double value = static_cast<double>(loss.item());
        if (!std::isfinite(value)) {
            throw TrainingDiverged("plugin training diverged");
        }
        result.loss_trace.push_back(value);
        t.backward(loss);
        opt.step();
    }
    return result;
}

template class PluginVae<float>;
template class PluginVae<double>;
template PluginTrainingResult<float> train_plugin(const ConditionDataset<float> &, const PluginConfig &);
template PluginTrainingResult<double> train_plugin(const ConditionDataset<double> &, const PluginConfig &);

} // namespace ppvae
