#include "ppvae/plugin_vae.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cmath>

using namespace ppvae;

namespace {

PluginConfig small_config()
{
    PluginConfig c;
    c.d_g = 8;
    c.d_c = 3;
    c.enc_hidden1 = 6;
    c.enc_hidden2 = 5;
    c.dec_hidden1 = 5;
    c.dec_hidden2 = 6;
    c.seed = 11;
    return c;
}

void zero_all(ParameterSet<double> &ps)
{
    for (auto *p : ps.all()) {
        p->value.setZero();
    }
}

} // namespace

TEST_SUITE("plugin_vae")
{
    TEST_CASE("defaults")
    {
        const PluginConfig c;
        CHECK(c.d_g == 128);
        CHECK(c.d_c == 20);
        CHECK(c.beta_max == 5.0);
        CHECK(c.beta_warmup_iters == 10000);
        CHECK(c.total_iters == 20000);
        CHECK(c.lr == doctest::Approx(3e-4));
        CHECK(c.adam_beta1 == 0.5);
        CHECK_FALSE(c.clamp_negatives);
        CHECK(default_gamma("sentiment") == 0.1);
        CHECK(default_gamma("topic") == 0.05);
        CHECK(default_gamma("length") == 3e-3);
        CHECK_THROWS_AS(default_gamma("nope"), std::invalid_argument);
    }

    TEST_CASE("KL closed forms")
    {
        auto kl = [](double m, double lv) {
            GaussianPosterior<double> p{ Matrix<double>::Constant(1, 1, m), Matrix<double>::Constant(1, 1, lv) };
            return kl_to_standard_normal(p)(0);
        };
        CHECK(kl(0, 0) == 0.0);
        CHECK(std::abs(kl(1, 0) - 0.5) < 1e-12);
        CHECK(std::abs(kl(0, std::log(2.0)) - 0.5 * (2 - 1 - std::log(2.0))) < 1e-12);
        CHECK(kl(0, std::log(2.0)) == doctest::Approx(0.1534).epsilon(1e-3));
    }

    TEST_CASE("beta schedule")
    {
        const PluginConfig c;
        CHECK(beta_at(0, c) == 0.0);
        CHECK(beta_at(5000, c) == doctest::Approx(2.5).epsilon(1e-12));
        CHECK(beta_at(10000, c) == 5.0);
        CHECK(beta_at(15000, c) == 5.0);
        for (int i = 1; i < 12000; i += 97) {
            CHECK(beta_at(i, c) >= beta_at(i - 1, c));
        }
    }

    TEST_CASE("shapes and zero weights")
    {
        PluginVae<double> m{ PluginConfig{} };
        std::mt19937_64 rng(1);
        const Matrix<double> v = standard_normal<double>(5, 128, rng);
        const auto post = m.encode(v);
        CHECK(post.mean.rows() == 5);
        CHECK(post.mean.cols() == 20);
        CHECK(m.decode(post.mean).cols() == 128);

        Matrix<double> same(2, 128);
        same.row(0) = v.row(0);
        same.row(1) = v.row(0);
        const auto p2 = m.encode(same);
        CHECK(p2.mean.row(0) == p2.mean.row(1));
        CHECK(m.decode(post.mean) == m.decode(post.mean));

        zero_all(m.parameters());
        const auto z = m.encode(v);
        CHECK(z.mean.isZero());
        CHECK(z.log_variance.isZero());
        CHECK(m.decode(z.mean).isZero());
    }

    TEST_CASE("loss_single special cases")
    {
        PluginVae<double> m(small_config());
        zero_all(m.parameters());
        // Zero weights: posterior is N(0, I) so KL = 0 and reconstruction is 0
        // for v = 0. The capacity term is then |0 - beta|.
        const Matrix<double> v = Matrix<double>::Zero(4, 8);
        const Matrix<double> noise = Matrix<double>::Ones(4, 3);
        CHECK(m.loss_single(v, 0.0, noise) == 0.0);
        CHECK(m.loss_single(v, 5.0, noise) == doctest::Approx(5.0).epsilon(1e-12));

        // KL = 2 with beta = 5 gives capacity 3: mean offset of 2 in one
        // posterior dimension via the bias of the mean head.
        m.parameters().at("encoder.mean.bias").value(0, 0) = 2.0;
        m.parameters().at("decoder.out.bias").value.setZero();
        const double rec_free = m.loss_single(v, 5.0, noise);
        CHECK(rec_free == doctest::Approx(3.0).epsilon(1e-12));

        // beta = 0 reduces the capacity term to the plain KL.
        CHECK(m.loss_single(v, 0.0, noise) == doctest::Approx(2.0).epsilon(1e-12));
    }

    TEST_CASE("negative-sample loss identities")
    {
        PluginVae<double> m(small_config());
        std::mt19937_64 rng(2);
        for (int i = 0; i < 50; ++i) {
            const Matrix<double> v = standard_normal<double>(6, 8, rng);
            const Matrix<double> noise = standard_normal<double>(6, 3, rng);
            const double beta = std::uniform_real_distribution<double>(0, 5)(rng);
            const double gamma = std::uniform_real_distribution<double>(0, 1)(rng);
            const double single = m.loss_single(v, beta, noise);
            CHECK(std::abs(m.loss_with_negatives(v, v, beta, gamma, noise, noise) - (1 - gamma) * single) <= 1e-6);
            const Matrix<double> other = standard_normal<double>(6, 8, rng);
            CHECK(m.loss_with_negatives(v, other, beta, 0.0, noise, noise) == single);
        }
    }

    TEST_CASE("clamp caps the negative term")
    {
        auto c = small_config();
        c.clamp_negatives = true;
        c.clamp_factor = 1.0;
        PluginVae<double> m(c);
        std::mt19937_64 rng(3);
        const Matrix<double> v = standard_normal<double>(6, 8, rng);
        const Matrix<double> far = 100 * standard_normal<double>(6, 8, rng);
        const Matrix<double> noise = standard_normal<double>(6, 3, rng);
        const double pos = m.loss_single(v, 1.0, noise);
        CHECK(m.loss_with_negatives(v, far, 1.0, 0.5, noise, noise) == doctest::Approx(0.0).epsilon(1e-12));
        CHECK(pos > 0);
    }

    TEST_CASE("gradient check on both objectives")
    {
        PluginVae<double> m(small_config());
        std::mt19937_64 rng(4);
        const Matrix<double> vp = standard_normal<double>(5, 8, rng);
        const Matrix<double> vn = standard_normal<double>(5, 8, rng);
        const Matrix<double> np = standard_normal<double>(5, 3, rng);
        const Matrix<double> nn = standard_normal<double>(5, 3, rng);
        const auto single = test::check_gradients(m.parameters(),
            [&](Tape<double> &t) { return m.loss_single(t, vp, 2.0, np); }, 20);
        INFO(single.worst_name);
        CHECK(single.worst_relative <= 1e-3);
        const auto neg = test::check_gradients(m.parameters(),
            [&](Tape<double> &t) { return m.loss_with_negatives(t, vp, vn, 2.0, 0.1, np, nn); }, 20);
        INFO(neg.worst_name);
        CHECK(neg.worst_relative <= 1e-3);
    }

    TEST_CASE("parameter count at the default widths")
    {
        const PluginVae<float> m{ PluginConfig{} };
        const long long expected = (128 * 64 + 64) + (64 * 32 + 32) + 2 * (32 * 20 + 20) + (20 * 32 + 32)
            + (32 * 64 + 64) + (64 * 128 + 128);
        CHECK(m.count_parameters() == expected);
        CHECK(m.count_parameters() >= 20000);
        CHECK(m.count_parameters() <= 26000);
    }

    TEST_CASE("training is deterministic and uses negatives only when present")
    {
        auto c = small_config();
        c.total_iters = 50;
        c.beta_warmup_iters = 25;
        c.batch = 8;
        std::mt19937_64 rng(5);
        ConditionDataset<float> ds{ "a", standard_normal<float>(20, 8, rng), std::nullopt };
        const auto a = train_plugin(ds, c);
        const auto b = train_plugin(ds, c);
        REQUIRE(a.loss_trace.size() == 50);
        CHECK(a.loss_trace == b.loss_trace);
        const auto pa = a.model.parameters().all();
        const auto pb = b.model.parameters().all();
        for (std::size_t i = 0; i < pa.size(); ++i) {
            CHECK(pa[i]->value == pb[i]->value);
        }

        ds.negatives = standard_normal<float>(30, 8, rng);
        const auto with_neg = train_plugin(ds, c);
        CHECK(with_neg.loss_trace != a.loss_trace);
    }

    TEST_CASE("invalid configuration")
    {
        auto c = small_config();
        c.d_c = 0;
        CHECK_THROWS_AS(c.validate(), std::invalid_argument);
        c = small_config();
        c.gamma = -1;
        CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    }
}
