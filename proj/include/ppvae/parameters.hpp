#ifndef PPVAE_PARAMETERS_HPP_
#define PPVAE_PARAMETERS_HPP_

#include "ppvae/autodiff.hpp"

#include <cmath>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ppvae {

/// Ordered collection of named parameters with stable addresses.
template <typename Scalar>
class ParameterSet {
  public:
    ParameterSet() = default;
    ParameterSet(const ParameterSet &) = delete;
    ParameterSet &operator=(const ParameterSet &) = delete;
    ParameterSet(ParameterSet &&) noexcept = default;
    ParameterSet &operator=(ParameterSet &&) noexcept = default;

    Parameter<Scalar> &add(std::string name, Matrix<Scalar> value)
    {
        if (find(name) != nullptr) {
            throw std::invalid_argument("duplicate parameter name: " + name);
        }
        params_.push_back(std::make_unique<Parameter<Scalar>>(std::move(name), std::move(value)));
        return *params_.back();
    }

    Parameter<Scalar> *find(std::string_view name)
    {
        for (auto &p : params_) {
            if (p->name == name) {
                return p.get();
            }
        }
        return nullptr;
    }

    const Parameter<Scalar> *find(std::string_view name) const
    {
        for (const auto &p : params_) {
            if (p->name == name) {
                return p.get();
            }
        }
        return nullptr;
    }

    Parameter<Scalar> &at(std::string_view name)
    {
        auto *p = find(name);
        if (p == nullptr) {
            throw std::out_of_range("no parameter named " + std::string(name));
        }
        return *p;
    }

    std::size_t size() const { return params_.size(); }
    Parameter<Scalar> &operator[](std::size_t i) { return *params_[i]; }
    const Parameter<Scalar> &operator[](std::size_t i) const { return *params_[i]; }

    /// Parameters whose names start with `prefix`, in insertion order.
    std::vector<Parameter<Scalar> *> group(std::string_view prefix)
    {
        std::vector<Parameter<Scalar> *> out;
        for (auto &p : params_) {
            if (std::string_view(p->name).starts_with(prefix)) {
                out.push_back(p.get());
            }
        }
        return out;
    }

    std::vector<Parameter<Scalar> *> all()
    {
        std::vector<Parameter<Scalar> *> out;
        for (auto &p : params_) {
            out.push_back(p.get());
        }
        return out;
    }

    std::vector<const Parameter<Scalar> *> all() const
    {
        std::vector<const Parameter<Scalar> *> out;
        for (const auto &p : params_) {
            out.push_back(p.get());
        }
        return out;
    }

    /// Total number of scalar weights. Shared parameters are stored once,
    /// so they are counted once.
    long long count() const
    {
        long long n = 0;
        for (const auto &p : params_) {
            n += static_cast<long long>(p->size());
        }
        return n;
    }

    void zero_grad()
    {
        for (auto &p : params_) {
            p->zero_grad();
        }
    }

  private:
    std::vector<std::unique_ptr<Parameter<Scalar>>> params_;
};

/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for an in x out weight.
template <typename Scalar, typename Rng>
Matrix<Scalar> fan_in_uniform(Eigen::Index fan_in, Eigen::Index fan_out, Rng &rng)
{
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Matrix<Scalar> m(fan_in, fan_out);
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            m(i, j) = static_cast<Scalar>(dist(rng));
        }
    }
    return m;
}

template <typename Scalar, typename Rng>
Matrix<Scalar> gaussian(Eigen::Index rows, Eigen::Index cols, double stddev, Rng &rng)
{
    std::normal_distribution<double> dist(0.0, stddev);
    Matrix<Scalar> m(rows, cols);
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            m(i, j) = static_cast<Scalar>(dist(rng));
        }
    }
    return m;
}

/// Fully connected layer y = x W + b with W stored in x out.
template <typename Scalar>
struct Linear {
    Parameter<Scalar> *weight = nullptr;
    Parameter<Scalar> *bias = nullptr;

    template <typename Rng>
    static Linear create(ParameterSet<Scalar> &ps, const std::string &name, Eigen::Index in, Eigen::Index out,
        Rng &rng, bool with_bias = true)
    {
        Linear l;
        l.weight = &ps.add(name + ".weight", fan_in_uniform<Scalar>(in, out, rng));
        if (with_bias) {
            l.bias = &ps.add(name + ".bias", Matrix<Scalar>::Zero(1, out));
        }
        return l;
    }

    Eigen::Index in_features() const { return weight->value.rows(); }
    Eigen::Index out_features() const { return weight->value.cols(); }

    Var<Scalar> operator()(Tape<Scalar> &t, Var<Scalar> x) const
    {
        auto y = matmul(x, t.parameter(*weight));
        if (bias != nullptr) {
            y = add_row(y, t.parameter(*bias));
        }
        return y;
    }

    /// Tape-free evaluation.
    Matrix<Scalar> apply(const Matrix<Scalar> &x) const
    {
        Matrix<Scalar> y = x * weight->value;
        if (bias != nullptr) {
            y.rowwise() += RowVector<Scalar>(bias->value);
        }
        return y;
    }
};

struct AdamOptions {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Adam over a fixed list of parameters; reads and clears `grad`.
template <typename Scalar>
class Adam {
  public:
    Adam(std::vector<Parameter<Scalar> *> params, AdamOptions opts)
        : params_(std::move(params))
        , opts_(opts)
    {
        for (auto *p : params_) {
            m_.push_back(Matrix<Scalar>::Zero(p->value.rows(), p->value.cols()));
            v_.push_back(Matrix<Scalar>::Zero(p->value.rows(), p->value.cols()));
        }
    }

    void zero_grad()
    {
        for (auto *p : params_) {
            p->zero_grad();
        }
    }

    void step()
    {
        ++t_;
        const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
        const auto b1 = static_cast<Scalar>(opts_.beta1);
        const auto b2 = static_cast<Scalar>(opts_.beta2);
        const auto lr = static_cast<Scalar>(opts_.learning_rate / bc1);
        const auto eps = static_cast<Scalar>(opts_.epsilon);
        const auto inv_sqrt_bc2 = static_cast<Scalar>(1.0 / std::sqrt(bc2));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto &g = params_[i]->grad;
            m_[i] = b1 * m_[i] + (Scalar(1) - b1) * g;
            v_[i] = b2 * v_[i] + (Scalar(1) - b2) * g.cwiseProduct(g);
            params_[i]->value.array() -= lr * m_[i].array() / ((v_[i].array().sqrt() * inv_sqrt_bc2) + eps);
        }
        zero_grad();
    }

    long long steps() const { return t_; }
    const AdamOptions &options() const { return opts_; }

  private:
    std::vector<Parameter<Scalar> *> params_;
    AdamOptions opts_;
    std::vector<Matrix<Scalar>> m_;
    std::vector<Matrix<Scalar>> v_;
    long long t_ = 0;
};

} // namespace ppvae

#endif // PPVAE_PARAMETERS_HPP_
