// Global text autoencoder: bidirectional GRU encoder, latent-conditioned
// causal transformer decoder with tied output embedding, and a latent
// critic trained with the Wasserstein divergence (WAE-GAN).

#ifndef PPVAE_PRETRAIN_VAE_HPP_
#define PPVAE_PRETRAIN_VAE_HPP_

#include "ppvae/autodiff.hpp"
#include "ppvae/corpus.hpp"
#include "ppvae/parameters.hpp"

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

namespace ppvae {

class TrainingDiverged : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct PretrainConfig {
    int d_g = 128;
    int emb_dim = 256;
    int gru_hidden = 256;
    int dec_layers = 3;
    int dec_heads = 8;
    int dec_ffn = 1024;
    int disc_hidden = 128;
    double lambda = 20.0;
    double wdiv_k = 2.0;
    double wdiv_p = 6.0;
    int batch = 512;
    double lr = 5e-4;
    double adam_beta1 = 0.0;
    double adam_beta2 = 0.999;
    int max_len = 15;
    int max_vocab = 8900;
    int steps = 10000;
    std::uint64_t seed = 0;

    /// Throws std::invalid_argument on non-positive sizes or lambda < 0.
    void validate() const;
};

template <typename Scalar>
struct GaussianPosterior {
    Matrix<Scalar> mean;
    Matrix<Scalar> log_variance;

    Eigen::Index dim() const { return mean.cols(); }
};

/// mean + exp(log_variance / 2) * noise, row by row.
template <typename Scalar>
Matrix<Scalar> reparameterize(const GaussianPosterior<Scalar> &post, const Matrix<Scalar> &noise)
{
    if (noise.rows() != post.mean.rows() || noise.cols() != post.mean.cols()
        || post.log_variance.rows() != post.mean.rows() || post.log_variance.cols() != post.mean.cols()) {
        throw ShapeError("reparameterize: dimension mismatch");
    }
    return post.mean + ((post.log_variance.array() * Scalar(0.5)).exp() * noise.array()).matrix();
}

template <typename Scalar>
struct PosteriorVars {
    Var<Scalar> mean;
    Var<Scalar> log_variance;
};

template <typename Scalar>
Var<Scalar> reparameterize(const PosteriorVars<Scalar> &post, const Matrix<Scalar> &noise)
{
    auto &t = *post.mean.tape;
    if (noise.rows() != post.mean.rows() || noise.cols() != post.mean.cols()) {
        throw ShapeError("reparameterize: dimension mismatch");
    }
    auto stddev = exp(affine(post.log_variance, Scalar(0.5)));
    return add(post.mean, mul(stddev, t.constant(noise)));
}

template <typename Scalar>
Matrix<Scalar> standard_normal(Eigen::Index rows, Eigen::Index cols, std::mt19937_64 &rng)
{
    return gaussian<Scalar>(rows, cols, 1.0, rng);
}

/// Teacher-forcing layout for a batch: row b*steps+t holds the input token
/// at position t and the token to predict after it.
struct DecoderBatch {
    Eigen::Index batch = 0;
    Eigen::Index steps = 0;
    std::vector<int> inputs;
    std::vector<int> targets;
    std::vector<int> positions;
    /// 1 where the target is real (up to and including eos), 0 on padding.
    std::vector<double> mask;
};

DecoderBatch make_decoder_batch(std::span<const TokenSequence> sequences);

/// Token cross-entropy summed over time and averaged over the batch,
/// ignoring padded positions. `logits` is (batch*steps) x vocab.
template <typename Scalar>
Scalar reconstruction_loss(const Matrix<Scalar> &logits, const DecoderBatch &batch);

template <typename Scalar>
Var<Scalar> reconstruction_loss(Var<Scalar> logits, const DecoderBatch &batch);

template <typename Scalar>
class PretrainVae {
  public:
    PretrainVae(const PretrainConfig &config, int vocab_size);

    PretrainVae(const PretrainVae &) = delete;
    PretrainVae &operator=(const PretrainVae &) = delete;
    PretrainVae(PretrainVae &&) noexcept = default;
    PretrainVae &operator=(PretrainVae &&) noexcept = default;

    const PretrainConfig &config() const { return config_; }
    int vocab_size() const { return vocab_size_; }
    int latent_dim() const { return config_.d_g; }
    int max_positions() const { return config_.max_len + 2; }

    ParameterSet<Scalar> &parameters() { return params_; }
    const ParameterSet<Scalar> &parameters() const { return params_; }
    long long count_parameters() const { return params_.count(); }

    const Parameter<Scalar> &embedding() const { return *embedding_; }
    /// The softmax projection. Tied: this is the embedding parameter itself.
    const Parameter<Scalar> &output_projection() const { return *embedding_; }

    // Tape-level building blocks ------------------------------------------

    PosteriorVars<Scalar> encode(Tape<Scalar> &t, std::span<const TokenSequence> batch) const;
    Var<Scalar> decode_logits(Tape<Scalar> &t, Var<Scalar> z, const DecoderBatch &batch) const;
    /// d_g -> h -> h -> 1 critic; `trainable` controls whether its weights
    /// receive gradients on this tape.
    Var<Scalar> discriminate(Tape<Scalar> &t, Var<Scalar> z, bool trainable) const;
    /// k * mean ||grad_z D(z_hat)||^p, differentiable in the critic weights.
    Var<Scalar> gradient_penalty(Tape<Scalar> &t, const Matrix<Scalar> &z_hat) const;

    /// mean D(z_post) - mean D(z_prior) + penalty on interpolates
    /// mix*z_post + (1-mix)*z_prior, with one mix weight per row.
    Var<Scalar> discriminator_loss(Tape<Scalar> &t, const Matrix<Scalar> &z_posterior,
        const Matrix<Scalar> &z_prior, const Vector<Scalar> &mix) const;

    struct AutoencoderTerms {
        Var<Scalar> total;
        Var<Scalar> reconstruction;
        Var<Scalar> adversarial;
        Matrix<Scalar> z_posterior;
    };

    /// reconstruction + lambda * (-mean D(z)) with z reparameterized by
    /// `noise`. The critic is frozen on this tape.
    AutoencoderTerms autoencoder_loss(Tape<Scalar> &t, std::span<const TokenSequence> batch,
        const Matrix<Scalar> &noise) const;

    // Tape-free inference -------------------------------------------------

    GaussianPosterior<Scalar> encode(std::span<const TokenSequence> batch) const;
    /// (batch*steps) x vocab logits for next-token prediction.
    Matrix<Scalar> decode_logits(const Matrix<Scalar> &z, std::span<const TokenSequence> teacher) const;
    Vector<Scalar> discriminator_score(const Matrix<Scalar> &z) const;
    /// Argmax decoding from bos; ties pick the lowest id; stops at eos or
    /// after `max_len` content tokens. Output includes bos and eos.
    std::vector<TokenSequence> greedy_decode(const Matrix<Scalar> &z, int max_len) const;

  private:
    struct GruDirection {
        Linear<Scalar> input;
        Linear<Scalar> hidden;
    };
    struct DecoderBlock {
        Parameter<Scalar> *positional;
        Linear<Scalar> latent;
        Parameter<Scalar> *ln1_gain;
        Parameter<Scalar> *ln1_bias;
        Linear<Scalar> qkv;
        Linear<Scalar> attn_out;
        Parameter<Scalar> *ln2_gain;
        Parameter<Scalar> *ln2_bias;
        Linear<Scalar> ffn_in;
        Linear<Scalar> ffn_out;
    };

    Var<Scalar> run_gru(Tape<Scalar> &t, const GruDirection &dir, std::span<const TokenSequence> batch,
        bool reversed) const;
    Var<Scalar> decoder_forward(Tape<Scalar> &t, Var<Scalar> z, const std::vector<int> &inputs,
        const std::vector<int> &positions, Eigen::Index batch, Eigen::Index steps) const;

    PretrainConfig config_;
    int vocab_size_;
    ParameterSet<Scalar> params_;
    Parameter<Scalar> *embedding_;
    GruDirection gru_fwd_;
    GruDirection gru_bwd_;
    Linear<Scalar> post_mean_;
    Linear<Scalar> post_logvar_;
    std::vector<DecoderBlock> blocks_;
    Parameter<Scalar> *final_gain_;
    Parameter<Scalar> *final_bias_;
    Parameter<Scalar> *output_bias_;
    Linear<Scalar> disc1_;
    Linear<Scalar> disc2_;
    Linear<Scalar> disc3_;
};

template <typename Scalar>
struct PretrainLosses {
    Scalar reconstruction = 0;
    Scalar adversarial = 0;
    Scalar discriminator = 0;
};

/// Alternating WAE-GAN optimization: one critic step, then one autoencoder
/// step on the same batch. Owns both Adam states and the noise stream.
template <typename Scalar>
class PretrainTrainer {
  public:
    explicit PretrainTrainer(PretrainVae<Scalar> &model);

    /// Throws TrainingDiverged on a non-finite loss.
    PretrainLosses<Scalar> step(std::span<const TokenSequence> batch);

    /// Runs `steps` steps over shuffled epochs of `data`. `on_epoch` gets the
    /// epoch index and the mean losses over the steps of that epoch.
    void fit(std::span<const TokenSequence> data, int steps,
        const std::function<void(int, const PretrainLosses<Scalar> &)> &on_epoch = {},
        const std::function<bool(int)> &should_stop = {});

    long long steps_taken() const { return ae_opt_.steps(); }

  private:
    PretrainVae<Scalar> &model_;
    Adam<Scalar> ae_opt_;
    Adam<Scalar> disc_opt_;
    std::mt19937_64 noise_rng_;
    std::mt19937_64 data_rng_;
};

} // namespace ppvae

#endif // PPVAE_PRETRAIN_VAE_HPP_
