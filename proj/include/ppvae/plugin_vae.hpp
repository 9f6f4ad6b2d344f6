// Per-condition plug-in VAE operating purely on global-latent vectors.

#ifndef PPVAE_PLUGIN_VAE_HPP_
#define PPVAE_PLUGIN_VAE_HPP_

#include "ppvae/autodiff.hpp"
#include "ppvae/parameters.hpp"
#include "ppvae/pretrain_vae.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ppvae {

struct PluginConfig {
    int d_g = 128;
    int d_c = 20;
    int enc_hidden1 = 64;
    int enc_hidden2 = 32;
    int dec_hidden1 = 32;
    int dec_hidden2 = 64;
    double gamma = 0.1;
    double beta_max = 5.0;
    int beta_warmup_iters = 10000;
    int total_iters = 20000;
    int batch = 128;
    double lr = 3e-4;
    double adam_beta1 = 0.5;
    double adam_beta2 = 0.999;
    /// When set, gamma * L(negatives) is capped at clamp_factor * L(positives).
    bool clamp_negatives = false;
    double clamp_factor = 10.0;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Negative-sample weight used for each task family.
double default_gamma(std::string_view task);

/// Linear warm-up of the capacity target from 0 to beta_max.
double beta_at(long long iteration, const PluginConfig &config);

/// Per-row KL(N(mean, exp(log_variance)) || N(0, I)), summed over dimensions.
template <typename Scalar>
Vector<Scalar> kl_to_standard_normal(const GaussianPosterior<Scalar> &post)
{
    return ((post.mean.array().square() + post.log_variance.array().exp() - Scalar(1) - post.log_variance.array())
               * Scalar(0.5))
        .rowwise()
        .sum();
}

template <typename Scalar>
Var<Scalar> kl_to_standard_normal(const PosteriorVars<Scalar> &post)
{
    auto terms = add(square(post.mean), sub(exp(post.log_variance), post.log_variance));
    return row_sum(affine(terms, Scalar(0.5), Scalar(-0.5)));
}

template <typename Scalar>
class PluginVae {
  public:
    explicit PluginVae(const PluginConfig &config);

    PluginVae(const PluginVae &) = delete;
    PluginVae &operator=(const PluginVae &) = delete;
    PluginVae(PluginVae &&) noexcept = default;
    PluginVae &operator=(PluginVae &&) noexcept = default;

    const PluginConfig &config() const { return config_; }
    int global_dim() const { return config_.d_g; }
    int condition_dim() const { return config_.d_c; }
    ParameterSet<Scalar> &parameters() { return params_; }
    const ParameterSet<Scalar> &parameters() const { return params_; }
    long long count_parameters() const { return params_.count(); }

    PosteriorVars<Scalar> encode(Tape<Scalar> &t, Var<Scalar> v) const;
    Var<Scalar> decode(Tape<Scalar> &t, Var<Scalar> z) const;

    GaussianPosterior<Scalar> encode(const Matrix<Scalar> &v) const;
    Matrix<Scalar> decode(const Matrix<Scalar> &z) const;

    /// mean_b ||v_b - dec(z_b)||^2 + |mean_b KL_b - beta|, z reparameterized
    /// from enc(v) with `noise`.
    Var<Scalar> loss_single(Tape<Scalar> &t, const Matrix<Scalar> &v, Scalar beta, const Matrix<Scalar> &noise) const;
    Scalar loss_single(const Matrix<Scalar> &v, Scalar beta, const Matrix<Scalar> &noise) const;

    /// loss_single(positives) - gamma * loss_single(negatives).
    Var<Scalar> loss_with_negatives(Tape<Scalar> &t, const Matrix<Scalar> &v_pos, const Matrix<Scalar> &v_neg,
        Scalar beta, Scalar gamma, const Matrix<Scalar> &noise_pos, const Matrix<Scalar> &noise_neg) const;
    Scalar loss_with_negatives(const Matrix<Scalar> &v_pos, const Matrix<Scalar> &v_neg, Scalar beta, Scalar gamma,
        const Matrix<Scalar> &noise_pos, const Matrix<Scalar> &noise_neg) const;

  private:
    PluginConfig config_;
    ParameterSet<Scalar> params_;
    Linear<Scalar> enc1_;
    Linear<Scalar> enc2_;
    Linear<Scalar> mean_head_;
    Linear<Scalar> logvar_head_;
    Linear<Scalar> dec1_;
    Linear<Scalar> dec2_;
    Linear<Scalar> dec_out_;
};

/// Encoded samples of one condition in the global latent space.
template <typename Scalar>
struct ConditionDataset {
    std::string name;
    Matrix<Scalar> positives;
    std::optional<Matrix<Scalar>> negatives;
};

template <typename Scalar>
struct PluginTrainingResult {
    PluginVae<Scalar> model;
    std::vector<double> loss_trace;
};

/// Adam over total_iters batches drawn with replacement. Without negatives the
/// objective is the single-condition loss throughout. Throws TrainingDiverged.
template <typename Scalar>
PluginTrainingResult<Scalar> train_plugin(const ConditionDataset<Scalar> &dataset, const PluginConfig &config);

/// What a plugin checkpoint records next to its weights.
struct PluginMeta {
    std::string condition;
    double gamma = 0;
    double beta_max = 0;
    int beta_warmup_iters = 0;
    int total_iters = 0;
    bool used_negatives = false;
    std::string pretrain_digest;
};

} // namespace ppvae

#endif // PPVAE_PLUGIN_VAE_HPP_
