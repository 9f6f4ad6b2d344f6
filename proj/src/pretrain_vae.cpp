#include "ppvae/pretrain_vae.hpp"

#include "ppvae/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ppvae {

void PretrainConfig::validate() const
{
    auto positive = [](int v, const char *name) {
        if (v <= 0) {
            throw std::invalid_argument(std::string(name) + " must be positive");
        }
    };
    positive(d_g, "d_g");
    positive(emb_dim, "emb_dim");
    positive(gru_hidden, "gru_hidden");
    positive(dec_layers, "dec_layers");
    positive(dec_heads, "dec_heads");
    positive(dec_ffn, "dec_ffn");
    positive(disc_hidden, "disc_hidden");
    positive(batch, "batch");
    positive(max_len, "max_len");
    positive(steps, "steps");
    if (emb_dim % dec_heads != 0) {
        throw std::invalid_argument("emb_dim must be divisible by dec_heads");
    }
    if (!(lambda >= 0)) {
        throw std::invalid_argument("lambda must be >= 0");
    }
    if (!(wdiv_k >= 0) || !(wdiv_p >= 2)) {
        throw std::invalid_argument("wdiv_k must be >= 0 and wdiv_p >= 2");
    }
    if (!(lr > 0)) {
        throw std::invalid_argument("lr must be positive");
    }
    if (max_vocab <= kNumSpecials) {
        throw std::invalid_argument("max_vocab must exceed the special tokens");
    }
}

DecoderBatch make_decoder_batch(std::span<const TokenSequence> sequences)
{
    if (sequences.empty()) {
        throw ShapeError("empty batch");
    }
    DecoderBatch db;
    db.batch = static_cast<Eigen::Index>(sequences.size());
    for (const auto &s : sequences) {
        if (s.size() < 2) {
            throw ShapeError("sequence must contain at least bos and eos");
        }
        db.steps = std::max<Eigen::Index>(db.steps, static_cast<Eigen::Index>(s.size()) - 1);
    }
    const auto rows = static_cast<std::size_t>(db.batch * db.steps);
    db.inputs.assign(rows, kPadId);
    db.targets.assign(rows, kPadId);
    db.positions.resize(rows);
    db.mask.assign(rows, 0.0);
    for (std::size_t b = 0; b < sequences.size(); ++b) {
        const auto &s = sequences[b];
        for (Eigen::Index t = 0; t < db.steps; ++t) {
            const auto r = b * static_cast<std::size_t>(db.steps) + static_cast<std::size_t>(t);
            db.positions[r] = static_cast<int>(t);
            if (static_cast<std::size_t>(t) + 1 < s.size()) {
                db.inputs[r] = s[static_cast<std::size_t>(t)];
                db.targets[r] = s[static_cast<std::size_t>(t) + 1];
                db.mask[r] = 1.0;
            }
        }
    }
    return db;
}

template <typename Scalar>
Var<Scalar> reconstruction_loss(Var<Scalar> logits, const DecoderBatch &batch)
{
    std::vector<Scalar> weights(batch.mask.begin(), batch.mask.end());
    return cross_entropy(logits, batch.targets, std::move(weights), static_cast<Scalar>(batch.batch));
}

template <typename Scalar>
Scalar reconstruction_loss(const Matrix<Scalar> &logits, const DecoderBatch &batch)
{
    Tape<Scalar> t(false);
    return reconstruction_loss(t.constant(logits), batch).item();
}

// ---------------------------------------------------------------------------

template <typename Scalar>
PretrainVae<Scalar>::PretrainVae(const PretrainConfig &config, int vocab_size)
    : config_(config)
    , vocab_size_(vocab_size)
{
    config_.validate();
    if (vocab_size <= kNumSpecials) {
        throw std::invalid_argument("vocabulary too small");
    }
    auto rng = make_stream(config_.seed, "pretrain-init");
    const int e = config_.emb_dim;
    const int h = config_.gru_hidden;
    const int dg = config_.d_g;

    embedding_ = &params_.add("embedding", gaussian<Scalar>(vocab_size, e, 0.1, rng));

    auto make_gru = [&](const std::string &prefix) {
        GruDirection d;
        d.input = Linear<Scalar>::create(params_, prefix + ".input", e, 3 * h, rng);
        d.hidden = Linear<Scalar>::create(params_, prefix + ".hidden", h, 3 * h, rng);
        return d;
    };
    gru_fwd_ = make_gru("encoder.gru_fwd");
    gru_bwd_ = make_gru("encoder.gru_bwd");
    post_mean_ = Linear<Scalar>::create(params_, "encoder.mean", 2 * h, dg, rng);
    post_logvar_ = Linear<Scalar>::create(params_, "encoder.logvar", 2 * h, dg, rng);

    for (int b = 0; b < config_.dec_layers; ++b) {
        const std::string p = "decoder.block" + std::to_string(b);
        DecoderBlock blk;
        blk.positional = &params_.add(p + ".positional", gaussian<Scalar>(max_positions(), e, 0.1, rng));
        blk.latent = Linear<Scalar>::create(params_, p + ".latent", dg, e, rng);
        blk.ln1_gain = &params_.add(p + ".ln1.gain", Matrix<Scalar>::Ones(1, e));
        blk.ln1_bias = &params_.add(p + ".ln1.bias", Matrix<Scalar>::Zero(1, e));
        blk.qkv = Linear<Scalar>::create(params_, p + ".qkv", e, 3 * e, rng);
        blk.attn_out = Linear<Scalar>::create(params_, p + ".attn_out", e, e, rng);
        blk.ln2_gain = &params_.add(p + ".ln2.gain", Matrix<Scalar>::Ones(1, e));
        blk.ln2_bias = &params_.add(p + ".ln2.bias", Matrix<Scalar>::Zero(1, e));
        blk.ffn_in = Linear<Scalar>::create(params_, p + ".ffn_in", e, config_.dec_ffn, rng);
        blk.ffn_out = Linear<Scalar>::create(params_, p + ".ffn_out", config_.dec_ffn, e, rng);
        blocks_.push_back(blk);
    }
    final_gain_ = &params_.add("decoder.final_ln.gain", Matrix<Scalar>::Ones(1, e));
    final_bias_ = &params_.add("decoder.final_ln.bias", Matrix<Scalar>::Zero(1, e));
    output_bias_ = &params_.add("decoder.output_bias", Matrix<Scalar>::Zero(1, vocab_size));

    const int dh = config_.disc_hidden;
    disc1_ = Linear<Scalar>::create(params_, "discriminator.l1", dg, dh, rng);
    disc2_ = Linear<Scalar>::create(params_, "discriminator.l2", dh, dh, rng);
    disc3_ = Linear<Scalar>::create(params_, "discriminator.out", dh, 1, rng, /*with_bias=*/false);
}

template <typename Scalar>
Var<Scalar> PretrainVae<Scalar>::run_gru(Tape<Scalar> &t, const GruDirection &dir,
    std::span<const TokenSequence> batch, bool reversed) const
{
    const auto n = static_cast<Eigen::Index>(batch.size());
    const Eigen::Index h = config_.gru_hidden;
    std::size_t steps = 0;
    for (const auto &s : batch) {
        steps = std::max(steps, s.size());
    }
    std::vector<int> ids(steps * batch.size(), kPadId);
    std::vector<std::vector<bool>> keep(steps, std::vector<bool>(batch.size(), false));
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const auto &s = batch[b];
        for (std::size_t k = 0; k < s.size(); ++k) {
            ids[k * batch.size() + b] = reversed ? s[s.size() - 1 - k] : s[k];
            keep[k][b] = true;
        }
    }
    auto x = gather_rows(t.parameter(*embedding_), std::move(ids));
    auto xi = dir.input(t, x);
    auto state = t.constant(Matrix<Scalar>::Zero(n, h));
    for (std::size_t k = 0; k < steps; ++k) {
        auto xk = slice_rows(xi, static_cast<Eigen::Index>(k) * n, n);
        auto hk = dir.hidden(t, state);
        auto reset = sigmoid(add(slice_cols(xk, 0, h), slice_cols(hk, 0, h)));
        auto update = sigmoid(add(slice_cols(xk, h, h), slice_cols(hk, h, h)));
        auto cand = tanh(add(slice_cols(xk, 2 * h, h), mul(reset, slice_cols(hk, 2 * h, h))));
        auto next = add(cand, mul(update, sub(state, cand)));
        state = select_rows(keep[k], next, state);
    }
    return state;
}

template <typename Scalar>
PosteriorVars<Scalar> PretrainVae<Scalar>::encode(Tape<Scalar> &t, std::span<const TokenSequence> batch) const
{
    if (batch.empty()) {
        throw ShapeError("encode: empty batch");
    }
    auto fwd = run_gru(t, gru_fwd_, batch, false);
    auto bwd = run_gru(t, gru_bwd_, batch, true);
    auto both = concat_cols(fwd, bwd);
    return { post_mean_(t, both), post_logvar_(t, both) };
}

template <typename Scalar>
Var<Scalar> PretrainVae<Scalar>::decoder_forward(Tape<Scalar> &t, Var<Scalar> z, const std::vector<int> &inputs,
    const std::vector<int> &positions, Eigen::Index batch, Eigen::Index steps) const
{
    if (z.rows() != batch || z.cols() != config_.d_g) {
        throw ShapeError("decode: latent batch does not match teacher batch");
    }
    for (int p : positions) {
        if (p >= max_positions()) {
            throw ShapeError("decode: sequence longer than max_len");
        }
    }
    const Eigen::Index e = config_.emb_dim;
    auto emb = t.parameter(*embedding_);
    auto x = gather_rows(emb, inputs);
    for (const auto &blk : blocks_) {
        x = add(x, gather_rows(t.parameter(*blk.positional), positions));
        x = add(x, repeat_rows(blk.latent(t, z), steps));
        auto a = layer_norm(x, t.parameter(*blk.ln1_gain), t.parameter(*blk.ln1_bias));
        auto qkv = blk.qkv(t, a);
        auto att = causal_attention(slice_cols(qkv, 0, e), slice_cols(qkv, e, e), slice_cols(qkv, 2 * e, e), batch,
            steps, config_.dec_heads);
        x = add(x, blk.attn_out(t, att));
        auto f = layer_norm(x, t.parameter(*blk.ln2_gain), t.parameter(*blk.ln2_bias));
        x = add(x, blk.ffn_out(t, relu(blk.ffn_in(t, f))));
    }
    auto hfin = layer_norm(x, t.parameter(*final_gain_), t.parameter(*final_bias_));
    return add_row(matmul_nt(hfin, emb), t.parameter(*output_bias_));
}

template <typename Scalar>
Var<Scalar> PretrainVae<Scalar>::decode_logits(Tape<Scalar> &t, Var<Scalar> z, const DecoderBatch &batch) const
{
    return decoder_forward(t, z, batch.inputs, batch.positions, batch.batch, batch.steps);
}

template <typename Scalar>
Var<Scalar> PretrainVae<Scalar>::discriminate(Tape<Scalar> &t, Var<Scalar> z, bool trainable) const
{
    if (z.cols() != config_.d_g) {
        throw ShapeError("discriminator: latent dimension mismatch");
    }
    auto p = [&](Parameter<Scalar> *param) { return trainable ? t.parameter(*param) : t.frozen(*param); };
    auto h1 = leaky_relu(add_row(matmul(z, p(disc1_.weight)), p(disc1_.bias)));
    auto h2 = leaky_relu(add_row(matmul(h1, p(disc2_.weight)), p(disc2_.bias)));
    return matmul(h2, p(disc3_.weight));
}

template <typename Scalar>
Var<Scalar> PretrainVae<Scalar>::gradient_penalty(Tape<Scalar> &t, const Matrix<Scalar> &z_hat) const
{
    // LeakyReLU is piecewise linear, so grad_z D = W1 M1 W2 M2 w3 with the
    // activation masks M held fixed; the masks carry no gradient.
    const Matrix<Scalar> a1 = disc1_.apply(z_hat);
    const Matrix<Scalar> h1 = (a1.array() > Scalar(0)).select(a1, Scalar(kLeakySlope) * a1);
    const Matrix<Scalar> a2 = disc2_.apply(h1);
    auto w3 = t.parameter(*disc3_.weight);
    auto ones = t.constant(Matrix<Scalar>::Ones(z_hat.rows(), 1));
    auto g2 = mul(matmul_nt(ones, w3), t.constant(leaky_relu_mask<Scalar>(a2)));
    auto g1 = mul(matmul_nt(g2, t.parameter(*disc2_.weight)), t.constant(leaky_relu_mask<Scalar>(a1)));
    auto gz = matmul_nt(g1, t.parameter(*disc1_.weight));
    auto norm_p = pow(row_sum(square(gz)), static_cast<Scalar>(config_.wdiv_p / 2.0));
    return scale(mean(norm_p), static_cast<Scalar>(config_.wdiv_k));
}

template <typename Scalar>
Var<Scalar> PretrainVae<Scalar>::discriminator_loss(Tape<Scalar> &t, const Matrix<Scalar> &z_posterior,
    const Matrix<Scalar> &z_prior, const Vector<Scalar> &mix) const
{
    if (z_posterior.rows() != z_prior.rows() || mix.size() != z_posterior.rows()) {
        throw ShapeError("discriminator_loss: batch size mismatch");
    }
    if (z_posterior.cols() != config_.d_g || z_prior.cols() != config_.d_g) {
        throw ShapeError("discriminator_loss: latent dimension mismatch");
    }
    const Matrix<Scalar> z_hat = mix.asDiagonal() * z_posterior
        + (Vector<Scalar>::Ones(mix.size()) - mix).asDiagonal() * z_prior;
    auto d_post = mean(discriminate(t, t.constant(z_posterior), true));
    auto d_prior = mean(discriminate(t, t.constant(z_prior), true));
    return add(sub(d_post, d_prior), gradient_penalty(t, z_hat));
}

template <typename Scalar>
typename PretrainVae<Scalar>::AutoencoderTerms PretrainVae<Scalar>::autoencoder_loss(Tape<Scalar> &t,
    std::span<const TokenSequence> batch, const Matrix<Scalar> &noise) const
{
    auto post = encode(t, batch);
    auto z = reparameterize(post, noise);
    const auto db = make_decoder_batch(batch);
    auto rec = reconstruction_loss(decode_logits(t, z, db), db);
    auto adv = affine(mean(discriminate(t, z, false)), Scalar(-1));
    auto total = add(rec, scale(adv, static_cast<Scalar>(config_.lambda)));
    return { total, rec, adv, z.value() };
}

template <typename Scalar>
GaussianPosterior<Scalar> PretrainVae<Scalar>::encode(std::span<const TokenSequence> batch) const
{
    Tape<Scalar> t(false);
    auto post = encode(t, batch);
    return { post.mean.value(), post.log_variance.value() };
}

template <typename Scalar>
Matrix<Scalar> PretrainVae<Scalar>::decode_logits(const Matrix<Scalar> &z, std::span<const TokenSequence> teacher) const
{
    if (static_cast<std::size_t>(z.rows()) != teacher.size()) {
        throw ShapeError("decode_logits: size mismatch");
    }
    Tape<Scalar> t(false);
    const auto db = make_decoder_batch(teacher);
    return decode_logits(t, t.constant(z), db).value();
}

template <typename Scalar>
Vector<Scalar> PretrainVae<Scalar>::discriminator_score(const Matrix<Scalar> &z) const
{
    Tape<Scalar> t(false);
    return discriminate(t, t.constant(z), false).value().col(0);
}

template <typename Scalar>
std::vector<TokenSequence> PretrainVae<Scalar>::greedy_decode(const Matrix<Scalar> &z, int max_len) const
{
    if (z.cols() != config_.d_g) {
        throw ShapeError("greedy_decode: latent dimension mismatch");
    }
    if (max_len > config_.max_len) {
        throw ShapeError("greedy_decode: max_len exceeds the trained maximum");
    }
    const auto n = static_cast<std::size_t>(z.rows());
    std::vector<TokenSequence> out(n, TokenSequence{ kBosId });
    std::vector<std::size_t> active(n);
    std::iota(active.begin(), active.end(), 0);
    for (int step = 0; step < max_len && !active.empty(); ++step) {
        const auto len = static_cast<Eigen::Index>(step + 1);
        const auto na = static_cast<Eigen::Index>(active.size());
        Matrix<Scalar> za(na, z.cols());
        std::vector<int> inputs;
        std::vector<int> positions;
        inputs.reserve(active.size() * static_cast<std::size_t>(len));
        for (Eigen::Index a = 0; a < na; ++a) {
            const auto &seq = out[active[static_cast<std::size_t>(a)]];
            za.row(a) = z.row(static_cast<Eigen::Index>(active[static_cast<std::size_t>(a)]));
            for (Eigen::Index p = 0; p < len; ++p) {
                inputs.push_back(seq[static_cast<std::size_t>(p)]);
                positions.push_back(static_cast<int>(p));
            }
        }
        Tape<Scalar> t(false);
        const Matrix<Scalar> &logits = decoder_forward(t, t.constant(za), inputs, positions, na, len).value();
        std::vector<std::size_t> still;
        for (Eigen::Index a = 0; a < na; ++a) {
            const auto row = logits.row(a * len + len - 1);
            int best = 0;
            for (int v = 1; v < row.size(); ++v) {
                if (row(v) > row(best)) {
                    best = v;
                }
            }
            auto &seq = out[active[static_cast<std::size_t>(a)]];
            seq.push_back(best);
            if (best != kEosId) {
                still.push_back(active[static_cast<std::size_t>(a)]);
            }
        }
        active = std::move(still);
    }
    for (auto i : active) {
        out[i].push_back(kEosId);
    }
    return out;
}

// ---------------------------------------------------------------------------

namespace {

template <typename Scalar>
std::vector<Parameter<Scalar> *> non_critic(ParameterSet<Scalar> &ps)
{
    std::vector<Parameter<Scalar> *> out;
    for (auto *p : ps.all()) {
        if (!p->name.starts_with("discriminator.")) {
            out.push_back(p);
        }
    }
    return out;
}

template <typename Scalar>
bool finite(Scalar v)
{
    return std::isfinite(static_cast<double>(v));
}

} // namespace

template <typename Scalar>
PretrainTrainer<Scalar>::PretrainTrainer(PretrainVae<Scalar> &model)
    : model_(model)
    , ae_opt_(non_critic(model.parameters()),
          AdamOptions{ model.config().lr, model.config().adam_beta1, model.config().adam_beta2 })
    , disc_opt_(model.parameters().group("discriminator."),
          AdamOptions{ model.config().lr, model.config().adam_beta1, model.config().adam_beta2 })
    , noise_rng_(make_stream(model.config().seed, "pretrain-noise"))
    , data_rng_(make_stream(model.config().seed, "pretrain-data"))
{
}

template <typename Scalar>
PretrainLosses<Scalar> PretrainTrainer<Scalar>::step(std::span<const TokenSequence> batch)
{
    const auto n = static_cast<Eigen::Index>(batch.size());
    const auto dg = model_.latent_dim();
    const Matrix<Scalar> noise = standard_normal<Scalar>(n, dg, noise_rng_);
    const Matrix<Scalar> prior = standard_normal<Scalar>(n, dg, noise_rng_);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    Vector<Scalar> mix(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        mix(i) = static_cast<Scalar>(unif(noise_rng_));
    }

    PretrainLosses<Scalar> losses;

    // Critic update on posterior samples from the current encoder.
    {
        const Matrix<Scalar> z_post = reparameterize(model_.encode(batch), noise);
        disc_opt_.zero_grad();
        Tape<Scalar> t;
        auto dl = model_.discriminator_loss(t, z_post, prior, mix);
        losses.discriminator = dl.item();
        if (!finite(losses.discriminator)) {
            throw TrainingDiverged("training diverged");
        }
        t.backward(dl);
        disc_opt_.step();
    }

    // Autoencoder update against the refreshed critic.
    {
        ae_opt_.zero_grad();
        Tape<Scalar> t;
        auto terms = model_.autoencoder_loss(t, batch, noise);
        losses.reconstruction = terms.reconstruction.item();
        losses.adversarial = terms.adversarial.item();
        if (!finite(terms.total.item())) {
            throw TrainingDiverged("training diverged");
        }
        t.backward(terms.total);
        ae_opt_.step();
    }
    return losses;
}

template <typename Scalar>
void PretrainTrainer<Scalar>::fit(std::span<const TokenSequence> data, int steps,
    const std::function<void(int, const PretrainLosses<Scalar> &)> &on_epoch,
    const std::function<bool(int)> &should_stop)
{
    if (data.empty()) {
        throw std::invalid_argument("no training data");
    }
    const std::size_t bs = std::min<std::size_t>(data.size(), static_cast<std::size_t>(model_.config().batch));
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), data_rng_);
    std::size_t cursor = 0;
    int epoch = 0;
    PretrainLosses<Scalar> acc;
    int in_epoch = 0;
    auto report = [&] {
        if (in_epoch > 0 && on_epoch) {
            const auto k = static_cast<Scalar>(in_epoch);
            on_epoch(epoch, PretrainLosses<Scalar>{ acc.reconstruction / k, acc.adversarial / k, acc.discriminator / k });
        }
        acc = {};
        in_epoch = 0;
    };
    std::vector<TokenSequence> batch;
    for (int s = 0; s < steps; ++s) {
        if (cursor + bs > data.size()) {
            report();
            ++epoch;
            std::shuffle(order.begin(), order.end(), data_rng_);
            cursor = 0;
        }
        batch.clear();
        for (std::size_t i = 0; i < bs; ++i) {
            batch.push_back(data[order[cursor + i]]);
        }
        cursor += bs;
        const auto l = step(batch);
        acc.reconstruction += l.reconstruction;
        acc.adversarial += l.adversarial;
        acc.discriminator += l.discriminator;
        ++in_epoch;
        if (should_stop && should_stop(s + 1)) {
            break;
        }
    }
    report();
}

template Var<float> reconstruction_loss(Var<float>, const DecoderBatch &);
template Var<double> reconstruction_loss(Var<double>, const DecoderBatch &);
template float reconstruction_loss(const Matrix<float> &, const DecoderBatch &);
template double reconstruction_loss(const Matrix<double> &, const DecoderBatch &);
template class PretrainVae<float>;
template class PretrainVae<double>;
template class PretrainTrainer<float>;
template class PretrainTrainer<double>;

} // namespace ppvae
