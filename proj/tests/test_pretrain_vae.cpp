#include "ppvae/pretrain_vae.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cmath>

using namespace ppvae;

namespace {

PretrainConfig tiny_config()
{
    PretrainConfig c;
    c.d_g = 4;
    c.emb_dim = 8;
    c.gru_hidden = 6;
    c.dec_layers = 2;
    c.dec_heads = 2;
    c.dec_ffn = 8;
    c.disc_hidden = 5;
    c.max_len = 6;
    c.batch = 4;
    c.seed = 3;
    return c;
}

std::vector<TokenSequence> tiny_batch()
{
    return { { 1, 4, 5, 6, 2 }, { 1, 7, 2 }, { 1, 9, 8, 4, 5, 6, 2 }, { 1, 2 } };
}

// Independent tally of the architecture's tensor sizes.
long long expected_parameter_count(const PretrainConfig &c, long long vocab)
{
    const long long e = c.emb_dim, h = c.gru_hidden, dg = c.d_g, f = c.dec_ffn, dh = c.disc_hidden;
    const long long positions = c.max_len + 2;
    const long long gru = 2 * ((e * 3 * h + 3 * h) + (h * 3 * h + 3 * h));
    const long long heads = 2 * (2 * h * dg + dg);
    const long long block = positions * e + (dg * e + e) + 2 * e + (e * 3 * e + 3 * e) + (e * e + e) + 2 * e
        + (e * f + f) + (f * e + e);
    const long long critic = (dg * dh + dh) + (dh * dh + dh) + dh;
    return vocab * e + gru + heads + c.dec_layers * block + 2 * e + vocab + critic;
}

} // namespace

TEST_SUITE("pretrain_vae")
{
    TEST_CASE("defaults")
    {
        const PretrainConfig c;
        CHECK(c.d_g == 128);
        CHECK(c.lambda == 20.0);
        CHECK(c.wdiv_k == 2.0);
        CHECK(c.wdiv_p == 6.0);
        CHECK(c.batch == 512);
        CHECK(c.lr == doctest::Approx(5e-4));
        CHECK(c.adam_beta1 == 0.0);
        CHECK(c.max_len == 15);
    }

    TEST_CASE("reparameterize closed forms")
    {
        GaussianPosterior<double> post{ Matrix<double>::Constant(1, 1, 1.0),
            Matrix<double>::Constant(1, 1, 2 * std::log(2.0)) };
        const Matrix<double> one = Matrix<double>::Constant(1, 1, 1.0);
        const Matrix<double> zero = Matrix<double>::Zero(1, 1);
        CHECK(reparameterize(post, one)(0, 0) == doctest::Approx(3.0).epsilon(1e-12));
        CHECK(reparameterize(post, zero)(0, 0) == 1.0);

        std::mt19937_64 rng(1);
        const Matrix<double> noise = standard_normal<double>(3, 4, rng);
        GaussianPosterior<double> std_post{ Matrix<double>::Zero(3, 4), Matrix<double>::Zero(3, 4) };
        CHECK(reparameterize(std_post, noise) == noise);
    }

    TEST_CASE("encoder shapes and determinism")
    {
        PretrainConfig c;
        c.emb_dim = 16;
        c.gru_hidden = 16;
        c.dec_layers = 1;
        c.dec_heads = 2;
        c.dec_ffn = 16;
        c.disc_hidden = 8;
        PretrainVae<float> m(c, 20);
        std::vector<TokenSequence> batch = { { 1, 4, 5, 2 }, { 1, 6, 2 }, { 1, 4, 5, 2 } };
        const auto post = m.encode(batch);
        CHECK(post.mean.rows() == 3);
        CHECK(post.mean.cols() == 128);
        CHECK(post.mean.row(0) == post.mean.row(2));
        CHECK(post.mean.row(0) != post.mean.row(1));
        CHECK(post.log_variance.allFinite());
    }

    TEST_CASE("decoder logits shape and causal mask")
    {
        PretrainVae<double> m(tiny_config(), 10);
        std::mt19937_64 rng(4);
        const Matrix<double> z = standard_normal<double>(1, 4, rng);
        const std::vector<TokenSequence> teacher = { { 1, 4, 5, 6, 7, 2 } };
        const auto base = m.decode_logits(z, teacher);
        CHECK(base.rows() == 5);
        CHECK(base.cols() == 10);
        for (std::size_t pos = 1; pos + 1 < teacher[0].size(); ++pos) {
            auto changed = teacher;
            changed[0][pos] = 9;
            const auto out = m.decode_logits(z, changed);
            for (Eigen::Index s = 0; s < static_cast<Eigen::Index>(pos); ++s) {
                CHECK(out.row(s) == base.row(s));
            }
            CHECK((out.row(static_cast<Eigen::Index>(pos)) - base.row(static_cast<Eigen::Index>(pos))).norm() > 0);
        }
        const Matrix<double> z2 = standard_normal<double>(1, 4, rng);
        CHECK((m.decode_logits(z2, teacher) - base).norm() > 0);
    }

    TEST_CASE("output projection is tied to the embedding")
    {
        PretrainVae<double> m(tiny_config(), 10);
        CHECK(&m.embedding() == &m.output_projection());
        int tables = 0;
        for (const auto *p : m.parameters().all()) {
            tables += p->value.rows() == 10 && p->value.cols() == 8 ? 1 : 0;
        }
        CHECK(tables == 1);

        // Perturbing one embedding row moves that token's logit even when the
        // token never appears in the input.
        std::mt19937_64 rng(5);
        const Matrix<double> z = standard_normal<double>(1, 4, rng);
        const std::vector<TokenSequence> teacher = { { 1, 4, 2 } };
        const auto before = m.decode_logits(z, teacher);
        m.parameters().at("embedding").value.row(9).array() += 0.5;
        const auto after = m.decode_logits(z, teacher);
        CHECK(after(0, 9) != before(0, 9));
        CHECK(after(0, 5) == before(0, 5));
    }

    TEST_CASE("parameter count")
    {
        const PretrainConfig c;
        PretrainVae<float> m(c, 8900);
        CHECK(m.count_parameters() == expected_parameter_count(c, 8900));
        CHECK(m.count_parameters() >= 5'000'000);
        CHECK(m.count_parameters() <= 8'000'000);
        CHECK(ParameterSet<float>{}.count() == 0);
        CHECK(m.parameters().find("discriminator.out.bias") == nullptr);
    }

    TEST_CASE("reconstruction loss closed forms")
    {
        const std::vector<TokenSequence> seqs = { { 1, 4, 5, 2 }, { 1, 6, 2 } };
        const auto db = make_decoder_batch(seqs);
        REQUIRE(db.steps == 3);
        const int vocab = 8;

        Matrix<double> uniform = Matrix<double>::Zero(db.batch * db.steps, vocab);
        const double expected = (3 + 2) * std::log(8.0) / 2;
        CHECK(reconstruction_loss(uniform, db) == doctest::Approx(expected).epsilon(1e-12));

        Matrix<double> perfect = Matrix<double>::Zero(db.batch * db.steps, vocab);
        for (std::size_t r = 0; r < db.targets.size(); ++r) {
            perfect(static_cast<Eigen::Index>(r), db.targets[r]) = 1e4;
        }
        CHECK(reconstruction_loss(perfect, db) == doctest::Approx(0.0));

        Matrix<double> padded = uniform;
        padded.row(5).setConstant(3.0); // second sequence, step 2: padding
        padded(5, 0) = 50;
        CHECK(reconstruction_loss(padded, db) == reconstruction_loss(uniform, db));
    }

    TEST_CASE("discriminator")
    {
        PretrainVae<double> m(tiny_config(), 10);
        std::mt19937_64 rng(6);
        const Matrix<double> z = standard_normal<double>(7, 4, rng);
        CHECK(m.discriminator_score(z).size() == 7);
        const Matrix<double> z_prior = standard_normal<double>(7, 4, rng);
        Vector<double> mix = Vector<double>::Constant(7, 0.3);
        {
            Tape<double> t;
            CHECK(m.gradient_penalty(t, z).item() >= 0);
        }
        CHECK((m.discriminator_score(2 * z) - m.discriminator_score(z)).norm() > 0);

        for (const char *name : { "discriminator.l1.weight", "discriminator.l1.bias", "discriminator.l2.weight",
                 "discriminator.l2.bias", "discriminator.out.weight" }) {
            m.parameters().at(name).value.setZero();
        }
        CHECK(m.discriminator_score(z).isZero());
        Tape<double> t;
        CHECK(m.discriminator_loss(t, z, z_prior, mix).item() == 0.0);
    }

    TEST_CASE("gradient check on a tiny model")
    {
        PretrainVae<double> m(tiny_config(), 10);
        const auto batch = tiny_batch();
        std::mt19937_64 rng(7);
        const Matrix<double> noise = standard_normal<double>(4, 4, rng);
        const Matrix<double> z_prior = standard_normal<double>(4, 4, rng);
        const Matrix<double> z_post = standard_normal<double>(4, 4, rng);
        Vector<double> mix(4);
        mix << 0.1, 0.5, 0.7, 0.9;

        // The critic is frozen on the autoencoder tape.
        const auto ae = test::check_gradients(
            m.parameters(), [&](Tape<double> &t) { return m.autoencoder_loss(t, batch, noise).total; }, 6, 1e-6,
            1e-6, [](const std::string &name) { return !name.starts_with("discriminator."); });
        INFO("worst " << ae.worst_name);
        CHECK(ae.worst_relative <= 1e-3);

        const auto critic = test::check_gradients(
            m.parameters(), [&](Tape<double> &t) { return m.discriminator_loss(t, z_post, z_prior, mix); }, 6, 1e-6,
            1e-6, [](const std::string &name) { return name.starts_with("discriminator."); });
        INFO("worst " << critic.worst_name);
        CHECK(critic.worst_relative <= 1e-3);
    }

    TEST_CASE("autoencoder loss leaves the critic untouched and lambda 0 drops the adversary")
    {
        auto c = tiny_config();
        c.lambda = 0;
        PretrainVae<double> m(c, 10);
        const auto batch = tiny_batch();
        std::mt19937_64 rng(8);
        const Matrix<double> noise = standard_normal<double>(4, 4, rng);

        m.parameters().zero_grad();
        {
            Tape<double> t;
            t.backward(m.autoencoder_loss(t, batch, noise).total);
        }
        std::vector<Matrix<double>> full;
        for (const auto *p : m.parameters().all()) {
            full.push_back(p->grad);
        }
        m.parameters().zero_grad();
        {
            Tape<double> t;
            t.backward(m.autoencoder_loss(t, batch, noise).reconstruction);
        }
        const auto all = m.parameters().all();
        for (std::size_t i = 0; i < all.size(); ++i) {
            CHECK(all[i]->grad == full[i]);
            if (all[i]->name.rfind("discriminator.", 0) == 0) {
                CHECK(full[i].isZero());
            }
        }
    }

    TEST_CASE("a training step is deterministic")
    {
        auto run = [] {
            PretrainVae<float> m(tiny_config(), 10);
            PretrainTrainer<float> tr(m);
            const auto batch = tiny_batch();
            tr.step(batch);
            return tr.step(batch);
        };
        const auto a = run();
        const auto b = run();
        CHECK(a.reconstruction == b.reconstruction);
        CHECK(a.adversarial == b.adversarial);
        CHECK(a.discriminator == b.discriminator);
    }

    TEST_CASE("greedy decoding")
    {
        PretrainVae<float> m(tiny_config(), 10);
        std::mt19937_64 rng(9);
        const Matrix<float> z = standard_normal<float>(16, 4, rng);
        const auto a = m.greedy_decode(z, 6);
        const auto b = m.greedy_decode(z, 6);
        CHECK(a == b);
        for (const auto &s : a) {
            CHECK(s.front() == kBosId);
            CHECK(content_length(s) <= 6);
        }
        for (const auto &s : m.greedy_decode(z, 2)) {
            CHECK(content_length(s) <= 2);
        }
        CHECK_THROWS_AS(m.greedy_decode(z, 7), ShapeError);

        m.parameters().at("decoder.output_bias").value(0, kEosId) = 1e4F;
        for (const auto &s : m.greedy_decode(z, 6)) {
            CHECK(s == TokenSequence{ kBosId, kEosId });
        }
    }

    TEST_CASE("invalid configuration")
    {
        auto c = tiny_config();
        c.emb_dim = 7;
        CHECK_THROWS_AS(c.validate(), std::invalid_argument);
        c = tiny_config();
        c.lambda = -1;
        CHECK_THROWS_AS(c.validate(), std::invalid_argument);
        CHECK_THROWS_AS(PretrainVae<float>(tiny_config(), 4), std::invalid_argument);
    }
}
