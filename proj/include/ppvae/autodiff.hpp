// Reverse-mode automatic differentiation over dense Eigen matrices.
//
// A Tape records eagerly evaluated operations. Each operation stores its
// value and a closure that propagates the adjoint of its output to its
// inputs. Values are always row-major in meaning: one sample per row.

#ifndef PPVAE_AUTODIFF_HPP_
#define PPVAE_AUTODIFF_HPP_

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ppvae {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

class ShapeError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

/// A named trainable tensor. `grad` is owned by the parameter and is
/// accumulated into by every tape that touches it.
template <typename Scalar>
struct Parameter {
    std::string name;
    Matrix<Scalar> value;
    Matrix<Scalar> grad;

    Parameter(std::string n, Matrix<Scalar> v)
        : name(std::move(n))
        , value(std::move(v))
        , grad(Matrix<Scalar>::Zero(value.rows(), value.cols()))
    {
    }

    Eigen::Index size() const { return value.size(); }
    void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

template <typename Scalar>
class Tape;

/// Handle to a value recorded on a tape.
template <typename Scalar>
struct Var {
    Tape<Scalar> *tape = nullptr;
    int index = -1;

    const Matrix<Scalar> &value() const { return tape->value(*this); }
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
    Scalar item() const { return value()(0, 0); }
};

template <typename Scalar>
class Tape {
  public:
    using Mat = Matrix<Scalar>;

    /// With `record == false` no backward closures are kept, which is what
    /// inference paths want.
    explicit Tape(bool record = true)
        : record_(record)
    {
        nodes_.reserve(256);
    }

    Tape(const Tape &) = delete;
    Tape &operator=(const Tape &) = delete;

    bool recording() const { return record_; }

    Var<Scalar> constant(Mat value)
    {
        nodes_.push_back(Node{ std::move(value), nullptr, Mat(), nullptr, false, {} });
        return Var<Scalar>{ this, static_cast<int>(nodes_.size()) - 1 };
    }

    /// Leaf that reads the parameter in place and accumulates its gradient
    /// directly into `p.grad`.
    Var<Scalar> parameter(Parameter<Scalar> &p)
    {
        nodes_.push_back(Node{ Mat(), &p, Mat(), nullptr, record_, {} });
        return Var<Scalar>{ this, static_cast<int>(nodes_.size()) - 1 };
    }

    /// Like `parameter` but the value is frozen: no gradient flows into it.
    Var<Scalar> frozen(const Parameter<Scalar> &p)
    {
        nodes_.push_back(Node{ Mat(), nullptr, Mat(), &p.value, false, {} });
        return Var<Scalar>{ this, static_cast<int>(nodes_.size()) - 1 };
    }

    const Mat &value(Var<Scalar> v) const
    {
        const Node &n = nodes_[v.index];
        if (n.param != nullptr) {
            return n.param->value;
        }
        if (n.external != nullptr) {
            return *n.external;
        }
        return n.value;
    }

    bool requires_grad(Var<Scalar> v) const { return nodes_[v.index].requires_grad; }

    /// Adjoint of a node after `backward`; empty if nothing reached it.
    const Mat &grad(Var<Scalar> v) const { return nodes_[v.index].grad; }

    /// Records an operation. `inputs` decides whether the output needs a
    /// gradient; `fn` is dropped when no input does.
    template <typename Fn>
    Var<Scalar> record(Mat value, std::initializer_list<Var<Scalar>> inputs, Fn &&fn)
    {
        bool needs = false;
        if (record_) {
            for (const auto &in : inputs) {
                needs = needs || nodes_[in.index].requires_grad;
            }
        }
        Node n{ std::move(value), nullptr, Mat(), nullptr, needs, {} };
        if (needs) {
            n.backward = std::forward<Fn>(fn);
        }
        nodes_.push_back(std::move(n));
        return Var<Scalar>{ this, static_cast<int>(nodes_.size()) - 1 };
    }

    /// Adds `g` to the adjoint of `v` (no-op for nodes without gradient).
    template <typename Expr>
    void accumulate(Var<Scalar> v, const Expr &g)
    {
        Node &n = nodes_[v.index];
        if (!n.requires_grad) {
            return;
        }
        if (n.param != nullptr) {
            n.param->grad += g;
            return;
        }
        if (n.grad.size() == 0) {
            n.grad = g;
        } else {
            n.grad += g;
        }
    }

    /// Adds `g` into rows [start, start+g.rows()) of the adjoint of `v`.
    void accumulate_rows(Var<Scalar> v, Eigen::Index start, const Mat &g)
    {
        Node &n = nodes_[v.index];
        if (!n.requires_grad) {
            return;
        }
        if (n.param != nullptr) {
            n.param->grad.middleRows(start, g.rows()) += g;
            return;
        }
        if (n.grad.size() == 0) {
            const Mat &val = value(v);
            n.grad = Mat::Zero(val.rows(), val.cols());
        }
        n.grad.middleRows(start, g.rows()) += g;
    }

    /// Adds `g` into columns [start, start+g.cols()) of the adjoint of `v`.
    void accumulate_cols(Var<Scalar> v, Eigen::Index start, const Mat &g)
    {
        Node &n = nodes_[v.index];
        if (!n.requires_grad) {
            return;
        }
        if (n.param != nullptr) {
            n.param->grad.middleCols(start, g.cols()) += g;
            return;
        }
        if (n.grad.size() == 0) {
            const Mat &val = value(v);
            n.grad = Mat::Zero(val.rows(), val.cols());
        }
        n.grad.middleCols(start, g.cols()) += g;
    }

    /// Seeds d(root)/d(root) = 1 for a 1x1 root and propagates.
    void backward(Var<Scalar> root)
    {
        if (!record_) {
            throw std::logic_error("backward on a non-recording tape");
        }
        const Mat &rv = value(root);
        if (rv.rows() != 1 || rv.cols() != 1) {
            throw ShapeError("backward root must be a scalar");
        }
        if (!nodes_[root.index].requires_grad) {
            return;
        }
        accumulate(root, Mat::Ones(1, 1));
        for (int i = root.index; i >= 0; --i) {
            Node &n = nodes_[i];
            if (n.backward && n.grad.size() != 0) {
                n.backward(n.grad);
            }
        }
    }

    std::size_t size() const { return nodes_.size(); }

  private:
    struct Node {
        Mat value;
        Parameter<Scalar> *param;
        Mat grad;
        const Mat *external;
        bool requires_grad;
        std::function<void(const Mat &)> backward;
    };

    bool record_;
    std::vector<Node> nodes_;
};

namespace detail {

inline void require(bool cond, const char *what)
{
    if (!cond) {
        throw ShapeError(what);
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

/// a * b
template <typename Scalar>
Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b)
{
    auto *t = a.tape;
    detail::require(a.cols() == b.rows(), "matmul: inner dimensions differ");
    return t->record(a.value() * b.value(), { a, b }, [t, a, b](const Matrix<Scalar> &g) {
        if (t->requires_grad(a)) {
            t->accumulate(a, g * b.value().transpose());
        }
        if (t->requires_grad(b)) {
            t->accumulate(b, a.value().transpose() * g);
        }
    });
}

/// a * b^T
template <typename Scalar>
Var<Scalar> matmul_nt(Var<Scalar> a, Var<Scalar> b)
{
    auto *t = a.tape;
    detail::require(a.cols() == b.cols(), "matmul_nt: inner dimensions differ");
    return t->record(a.value() * b.value().transpose(), { a, b }, [t, a, b](const Matrix<Scalar> &g) {
        if (t->requires_grad(a)) {
            t->accumulate(a, g * b.value());
        }
        if (t->requires_grad(b)) {
            t->accumulate(b, g.transpose() * a.value());
        }
    });
}

template <typename Scalar>
Var<Scalar> add(Var<Scalar> a, Var<Scalar> b)
{
    auto *t = a.tape;
    detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
    return t->record(a.value() + b.value(), { a, b }, [t, a, b](const Matrix<Scalar> &g) {
        t->accumulate(a, g);
        t->accumulate(b, g);
    });
}

template <typename Scalar>
Var<Scalar> sub(Var<Scalar> a, Var<Scalar> b)
{
    auto *t = a.tape;
    detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
    return t->record(a.value() - b.value(), { a, b }, [t, a, b](const Matrix<Scalar> &g) {
        t->accumulate(a, g);
        t->accumulate(b, -g);
    });
}

/// Adds a 1 x n row to every row of a.
template <typename Scalar>
Var<Scalar> add_row(Var<Scalar> a, Var<Scalar> row)
{
    auto *t = a.tape;
    detail::require(row.rows() == 1 && row.cols() == a.cols(), "add_row: shape mismatch");
    Matrix<Scalar> out = a.value().rowwise() + RowVector<Scalar>(row.value());
    return t->record(std::move(out), { a, row }, [t, a, row](const Matrix<Scalar> &g) {
        t->accumulate(a, g);
        if (t->requires_grad(row)) {
            t->accumulate(row, g.colwise().sum());
        }
    });
}

/// Elementwise product.
template <typename Scalar>
Var<Scalar> mul(Var<Scalar> a, Var<Scalar> b)
{
    auto *t = a.tape;
    detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "mul: shape mismatch");
    return t->record(a.value().cwiseProduct(b.value()), { a, b }, [t, a, b](const Matrix<Scalar> &g) {
        if (t->requires_grad(a)) {
            t->accumulate(a, g.cwiseProduct(b.value()));
        }
        if (t->requires_grad(b)) {
            t->accumulate(b, g.cwiseProduct(a.value()));
        }
    });
}

/// Multiplies row i of a by column entry i of the n x 1 `col`.
template <typename Scalar>
Var<Scalar> mul_col(Var<Scalar> a, Var<Scalar> col)
{
    auto *t = a.tape;
    detail::require(col.cols() == 1 && col.rows() == a.rows(), "mul_col: shape mismatch");
    Matrix<Scalar> out = a.value().array().colwise() * col.value().col(0).array();
    return t->record(std::move(out), { a, col }, [t, a, col](const Matrix<Scalar> &g) {
        if (t->requires_grad(a)) {
            t->accumulate(a, (g.array().colwise() * col.value().col(0).array()).matrix());
        }
        if (t->requires_grad(col)) {
            t->accumulate(col, g.cwiseProduct(a.value()).rowwise().sum());
        }
    });
}

/// alpha * a + beta
template <typename Scalar>
Var<Scalar> affine(Var<Scalar> a, Scalar alpha, Scalar beta = Scalar(0))
{
    auto *t = a.tape;
    Matrix<Scalar> out = (alpha * a.value().array() + beta).matrix();
    return t->record(std::move(out), { a }, [t, a, alpha](const Matrix<Scalar> &g) {
        t->accumulate(a, alpha * g);
    });
}

template <typename Scalar>
Var<Scalar> scale(Var<Scalar> a, Scalar alpha)
{
    return affine(a, alpha);
}

// ---------------------------------------------------------------------------
// Elementwise nonlinearities

template <typename Scalar>
Var<Scalar> sigmoid(Var<Scalar> a)
{
    auto *t = a.tape;
    Matrix<Scalar> y = (Scalar(1) / (Scalar(1) + (-a.value().array()).exp())).matrix();
    Matrix<Scalar> yc = y;
    return t->record(std::move(y), { a }, [t, a, yc = std::move(yc)](const Matrix<Scalar> &g) {
        t->accumulate(a, (g.array() * yc.array() * (Scalar(1) - yc.array())).matrix());
    });
}

template <typename Scalar>
Var<Scalar> tanh(Var<Scalar> a)
{
    auto *t = a.tape;
    Matrix<Scalar> y = a.value().array().tanh().matrix();
    Matrix<Scalar> yc = y;
    return t->record(std::move(y), { a }, [t, a, yc = std::move(yc)](const Matrix<Scalar> &g) {
        t->accumulate(a, (g.array() * (Scalar(1) - yc.array().square())).matrix());
    });
}

template <typename Scalar>
Var<Scalar> relu(Var<Scalar> a)
{
    auto *t = a.tape;
    Matrix<Scalar> y = a.value().cwiseMax(Scalar(0));
    return t->record(std::move(y), { a }, [t, a](const Matrix<Scalar> &g) {
        t->accumulate(a, (a.value().array() > Scalar(0)).select(g, Scalar(0)));
    });
}

/// Slope of LeakyReLU on the negative side.
inline constexpr double kLeakySlope = 0.2;

template <typename Scalar>
Matrix<Scalar> leaky_relu_mask(const Matrix<Scalar> &pre)
{
    return (pre.array() > Scalar(0)).select(Matrix<Scalar>::Ones(pre.rows(), pre.cols()), Scalar(kLeakySlope));
}

template <typename Scalar>
Var<Scalar> leaky_relu(Var<Scalar> a)
{
    auto *t = a.tape;
    Matrix<Scalar> y = (a.value().array() > Scalar(0)).select(a.value(), Scalar(kLeakySlope) * a.value());
    return t->record(std::move(y), { a }, [t, a](const Matrix<Scalar> &g) {
        t->accumulate(a, g.cwiseProduct(leaky_relu_mask<Scalar>(a.value())));
    });
}

template <typename Scalar>
Var<Scalar> exp(Var<Scalar> a)
{
    auto *t = a.tape;
    Matrix<Scalar> y = a.value().array().exp().matrix();
    Matrix<Scalar> yc = y;
    return t->record(std::move(y), { a }, [t, a, yc = std::move(yc)](const Matrix<Scalar> &g) {
        t->accumulate(a, g.cwiseProduct(yc));
    });
}

template <typename Scalar>
Var<Scalar> square(Var<Scalar> a)
{
    auto *t = a.tape;
    return t->record(a.value().array().square().matrix(), { a }, [t, a](const Matrix<Scalar> &g) {
        t->accumulate(a, (Scalar(2) * g.array() * a.value().array()).matrix());
    });
}

/// |a|, with subgradient 0 at 0.
template <typename Scalar>
Var<Scalar> abs(Var<Scalar> a)
{
    auto *t = a.tape;
    return t->record(a.value().cwiseAbs(), { a }, [t, a](const Matrix<Scalar> &g) {
        t->accumulate(a, g.cwiseProduct(a.value().unaryExpr([](Scalar x) {
            return x > Scalar(0) ? Scalar(1) : (x < Scalar(0) ? Scalar(-1) : Scalar(0));
        })));
    });
}

/// a^p for a >= 0 and p >= 1.
template <typename Scalar>
Var<Scalar> pow(Var<Scalar> a, Scalar p)
{
    auto *t = a.tape;
    detail::require(p >= Scalar(1), "pow: exponent must be >= 1");
    Matrix<Scalar> y = a.value().array().pow(p).matrix();
    return t->record(std::move(y), { a }, [t, a, p](const Matrix<Scalar> &g) {
        t->accumulate(a, (g.array() * p * a.value().array().pow(p - Scalar(1))).matrix());
    });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename Scalar>
Var<Scalar> sum(Var<Scalar> a)
{
    auto *t = a.tape;
    Matrix<Scalar> y(1, 1);
    y(0, 0) = a.value().sum();
    const auto r = a.rows();
    const auto c = a.cols();
    return t->record(std::move(y), { a }, [t, a, r, c](const Matrix<Scalar> &g) {
        t->accumulate(a, Matrix<Scalar>::Constant(r, c, g(0, 0)));
    });
}

template <typename Scalar>
Var<Scalar> mean(Var<Scalar> a)
{
    detail::require(a.value().size() > 0, "mean: empty input");
    return scale(sum(a), Scalar(1) / static_cast<Scalar>(a.value().size()));
}

/// n x m -> n x 1
template <typename Scalar>
Var<Scalar> row_sum(Var<Scalar> a)
{
    auto *t = a.tape;
    const auto c = a.cols();
    return t->record(a.value().rowwise().sum(), { a }, [t, a, c](const Matrix<Scalar> &g) {
        t->accumulate(a, g.replicate(1, c));
    });
}

// ---------------------------------------------------------------------------
// Structural

template <typename Scalar>
Var<Scalar> concat_cols(Var<Scalar> a, Var<Scalar> b)
{
    auto *t = a.tape;
    detail::require(a.rows() == b.rows(), "concat_cols: row mismatch");
    Matrix<Scalar> y(a.rows(), a.cols() + b.cols());
    y << a.value(), b.value();
    const auto ac = a.cols();
    const auto bc = b.cols();
    return t->record(std::move(y), { a, b }, [t, a, b, ac, bc](const Matrix<Scalar> &g) {
        t->accumulate(a, g.leftCols(ac));
        t->accumulate(b, g.rightCols(bc));
    });
}

template <typename Scalar>
Var<Scalar> slice_cols(Var<Scalar> a, Eigen::Index start, Eigen::Index n)
{
    auto *t = a.tape;
    detail::require(start >= 0 && start + n <= a.cols(), "slice_cols: out of range");
    return t->record(a.value().middleCols(start, n), { a }, [t, a, start](const Matrix<Scalar> &g) {
        t->accumulate_cols(a, start, g);
    });
}

template <typename Scalar>
Var<Scalar> slice_rows(Var<Scalar> a, Eigen::Index start, Eigen::Index n)
{
    auto *t = a.tape;
    detail::require(start >= 0 && start + n <= a.rows(), "slice_rows: out of range");
    return t->record(a.value().middleRows(start, n), { a }, [t, a, start](const Matrix<Scalar> &g) {
        t->accumulate_rows(a, start, g);
    });
}

/// Row lookup: out.row(i) = table.row(ids[i]).
template <typename Scalar>
Var<Scalar> gather_rows(Var<Scalar> table, std::vector<int> ids)
{
    auto *t = table.tape;
    const Matrix<Scalar> &tv = table.value();
    Matrix<Scalar> y(static_cast<Eigen::Index>(ids.size()), tv.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        detail::require(ids[i] >= 0 && ids[i] < tv.rows(), "gather_rows: id out of range");
        y.row(static_cast<Eigen::Index>(i)) = tv.row(ids[i]);
    }
    const auto r = tv.rows();
    const auto c = tv.cols();
    return t->record(std::move(y), { table }, [t, table, ids = std::move(ids), r, c](const Matrix<Scalar> &g) {
        Matrix<Scalar> full = Matrix<Scalar>::Zero(r, c);
        for (std::size_t i = 0; i < ids.size(); ++i) {
            full.row(ids[i]) += g.row(static_cast<Eigen::Index>(i));
        }
        t->accumulate(table, full);
    });
}

/// Repeats each row `times` times consecutively: out.row(i*times+k) = a.row(i).
template <typename Scalar>
Var<Scalar> repeat_rows(Var<Scalar> a, Eigen::Index times)
{
    auto *t = a.tape;
    const auto n = a.rows();
    Matrix<Scalar> y(n * times, a.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
        y.middleRows(i * times, times) = a.value().row(i).replicate(times, 1);
    }
    return t->record(std::move(y), { a }, [t, a, n, times](const Matrix<Scalar> &g) {
        Matrix<Scalar> out(n, g.cols());
        for (Eigen::Index i = 0; i < n; ++i) {
            out.row(i) = g.middleRows(i * times, times).colwise().sum();
        }
        t->accumulate(a, out);
    });
}

/// Row-wise select: out.row(i) = keep[i] ? next.row(i) : prev.row(i).
template <typename Scalar>
Var<Scalar> select_rows(const std::vector<bool> &keep, Var<Scalar> next, Var<Scalar> prev)
{
    auto *t = next.tape;
    detail::require(next.rows() == prev.rows() && next.cols() == prev.cols()
                        && static_cast<Eigen::Index>(keep.size()) == next.rows(),
        "select_rows: shape mismatch");
    Matrix<Scalar> y = prev.value();
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
        if (keep[i]) {
            y.row(i) = next.value().row(i);
        }
    }
    return t->record(std::move(y), { next, prev }, [t, keep, next, prev](const Matrix<Scalar> &g) {
        Matrix<Scalar> gn = g;
        Matrix<Scalar> gp = g;
        for (Eigen::Index i = 0; i < g.rows(); ++i) {
            if (keep[i]) {
                gp.row(i).setZero();
            } else {
                gn.row(i).setZero();
            }
        }
        t->accumulate(next, gn);
        t->accumulate(prev, gp);
    });
}

/// Unfolds `batch` sequences of length `len` (rows b*len+t) into sliding
/// windows of `width` rows concatenated: (batch*(len-width+1)) x (width*cols).
template <typename Scalar>
Var<Scalar> unfold_windows(Var<Scalar> a, Eigen::Index batch, Eigen::Index len, Eigen::Index width)
{
    auto *t = a.tape;
    detail::require(a.rows() == batch * len && width <= len, "unfold_windows: shape mismatch");
    const auto c = a.cols();
    const auto windows = len - width + 1;
    Matrix<Scalar> y(batch * windows, width * c);
    for (Eigen::Index b = 0; b < batch; ++b) {
        for (Eigen::Index w = 0; w < windows; ++w) {
            for (Eigen::Index k = 0; k < width; ++k) {
                y.block(b * windows + w, k * c, 1, c) = a.value().row(b * len + w + k);
            }
        }
    }
    return t->record(std::move(y), { a }, [t, a, batch, len, width, c, windows](const Matrix<Scalar> &g) {
        Matrix<Scalar> out = Matrix<Scalar>::Zero(batch * len, c);
        for (Eigen::Index b = 0; b < batch; ++b) {
            for (Eigen::Index w = 0; w < windows; ++w) {
                for (Eigen::Index k = 0; k < width; ++k) {
                    out.row(b * len + w + k) += g.block(b * windows + w, k * c, 1, c);
                }
            }
        }
        t->accumulate(a, out);
    });
}

/// Max over consecutive groups of `len` rows: (batch*len) x c -> batch x c.
template <typename Scalar>
Var<Scalar> max_pool_segments(Var<Scalar> a, Eigen::Index batch, Eigen::Index len)
{
    auto *t = a.tape;
    detail::require(a.rows() == batch * len, "max_pool_segments: shape mismatch");
    const auto c = a.cols();
    Matrix<Scalar> y(batch, c);
    std::vector<Eigen::Index> arg(static_cast<std::size_t>(batch * c));
    for (Eigen::Index b = 0; b < batch; ++b) {
        for (Eigen::Index j = 0; j < c; ++j) {
            Eigen::Index best = 0;
            Scalar bv = a.value()(b * len, j);
            for (Eigen::Index k = 1; k < len; ++k) {
                if (a.value()(b * len + k, j) > bv) {
                    bv = a.value()(b * len + k, j);
                    best = k;
                }
            }
            y(b, j) = bv;
            arg[static_cast<std::size_t>(b * c + j)] = best;
        }
    }
    return t->record(std::move(y), { a }, [t, a, batch, len, c, arg = std::move(arg)](const Matrix<Scalar> &g) {
        Matrix<Scalar> out = Matrix<Scalar>::Zero(batch * len, c);
        for (Eigen::Index b = 0; b < batch; ++b) {
            for (Eigen::Index j = 0; j < c; ++j) {
                out(b * len + arg[static_cast<std::size_t>(b * c + j)], j) = g(b, j);
            }
        }
        t->accumulate(a, out);
    });
}

// ---------------------------------------------------------------------------
// Fused layers

/// Row-wise layer normalization with learned 1 x d gain and bias.
template <typename Scalar>
Var<Scalar> layer_norm(Var<Scalar> x, Var<Scalar> gain, Var<Scalar> bias, Scalar eps = Scalar(1e-5))
{
    auto *t = x.tape;
    const auto n = x.rows();
    const auto d = x.cols();
    detail::require(gain.cols() == d && bias.cols() == d, "layer_norm: shape mismatch");
    const Matrix<Scalar> &xv = x.value();
    Vector<Scalar> mu = xv.rowwise().mean();
    Matrix<Scalar> centered = xv.colwise() - mu;
    Vector<Scalar> inv_std = ((centered.array().square().rowwise().sum() / Scalar(d)) + eps).rsqrt().matrix();
    Matrix<Scalar> xhat = centered.array().colwise() * inv_std.array();
    Matrix<Scalar> y = (xhat.array().rowwise() * gain.value().row(0).array()).rowwise() + bias.value().row(0).array();
    return t->record(std::move(y), { x, gain, bias },
        [t, x, gain, bias, d, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](const Matrix<Scalar> &g) {
            if (t->requires_grad(gain)) {
                t->accumulate(gain, g.cwiseProduct(xhat).colwise().sum());
            }
            if (t->requires_grad(bias)) {
                t->accumulate(bias, g.colwise().sum());
            }
            if (t->requires_grad(x)) {
                Matrix<Scalar> dxhat = g.array().rowwise() * gain.value().row(0).array();
                Vector<Scalar> m1 = dxhat.rowwise().mean();
                Vector<Scalar> m2 = dxhat.cwiseProduct(xhat).rowwise().mean();
                Matrix<Scalar> dx(n, d);
                dx = ((dxhat.colwise() - m1) - (xhat.array().colwise() * m2.array()).matrix());
                dx = dx.array().colwise() * inv_std.array();
                t->accumulate(x, dx);
            }
        });
}

/// Causally masked multi-head scaled dot-product attention. q, k, v are
/// (batch*len) x d with rows b*len+t; heads split the columns evenly.
template <typename Scalar>
Var<Scalar> causal_attention(Var<Scalar> q, Var<Scalar> k, Var<Scalar> v, Eigen::Index batch, Eigen::Index len, int heads)
{
    auto *t = q.tape;
    const auto d = q.cols();
    detail::require(q.rows() == batch * len && k.rows() == q.rows() && v.rows() == q.rows(),
        "causal_attention: row mismatch");
    detail::require(k.cols() == d && v.cols() == d && d % heads == 0, "causal_attention: column mismatch");
    const Eigen::Index dh = d / heads;
    const Scalar scale_factor = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));

    Matrix<Scalar> out(batch * len, d);
    std::vector<Matrix<Scalar>> probs(static_cast<std::size_t>(batch * heads));
    for (Eigen::Index b = 0; b < batch; ++b) {
        for (int h = 0; h < heads; ++h) {
            auto qb = q.value().block(b * len, h * dh, len, dh);
            auto kb = k.value().block(b * len, h * dh, len, dh);
            auto vb = v.value().block(b * len, h * dh, len, dh);
            Matrix<Scalar> s = (qb * kb.transpose()) * scale_factor;
            for (Eigen::Index i = 0; i < len; ++i) {
                const Scalar m = s.row(i).head(i + 1).maxCoeff();
                Scalar z = 0;
                for (Eigen::Index j = 0; j < len; ++j) {
                    if (j <= i) {
                        s(i, j) = std::exp(s(i, j) - m);
                        z += s(i, j);
                    } else {
                        s(i, j) = 0;
                    }
                }
                s.row(i) /= z;
            }
            out.block(b * len, h * dh, len, dh) = s * vb;
            probs[static_cast<std::size_t>(b * heads + h)] = std::move(s);
        }
    }
    return t->record(std::move(out), { q, k, v },
        [t, q, k, v, batch, len, heads, dh, scale_factor, probs = std::move(probs)](const Matrix<Scalar> &g) {
            const auto rows = batch * len;
            const auto d = q.cols();
            Matrix<Scalar> dq = Matrix<Scalar>::Zero(rows, d);
            Matrix<Scalar> dk = Matrix<Scalar>::Zero(rows, d);
            Matrix<Scalar> dv = Matrix<Scalar>::Zero(rows, d);
            for (Eigen::Index b = 0; b < batch; ++b) {
                for (int h = 0; h < heads; ++h) {
                    const Matrix<Scalar> &p = probs[static_cast<std::size_t>(b * heads + h)];
                    auto qb = q.value().block(b * len, h * dh, len, dh);
                    auto kb = k.value().block(b * len, h * dh, len, dh);
                    auto vb = v.value().block(b * len, h * dh, len, dh);
                    auto gb = g.block(b * len, h * dh, len, dh);
                    dv.block(b * len, h * dh, len, dh) = p.transpose() * gb;
                    Matrix<Scalar> dp = gb * vb.transpose();
                    Vector<Scalar> rs = dp.cwiseProduct(p).rowwise().sum();
                    Matrix<Scalar> ds = (p.array() * (dp.colwise() - rs).array()).matrix() * scale_factor;
                    dq.block(b * len, h * dh, len, dh) = ds * kb;
                    dk.block(b * len, h * dh, len, dh) = ds.transpose() * qb;
                }
            }
            t->accumulate(q, dq);
            t->accumulate(k, dk);
            t->accumulate(v, dv);
        });
}

/// Softmax cross-entropy summed over rows with weight[i] (0 masks a row),
/// divided by `normalizer`. Returns a 1x1 value.
template <typename Scalar>
Var<Scalar> cross_entropy(Var<Scalar> logits, std::vector<int> targets, std::vector<Scalar> weights, Scalar normalizer)
{
    auto *t = logits.tape;
    const Matrix<Scalar> &lv = logits.value();
    detail::require(static_cast<Eigen::Index>(targets.size()) == lv.rows() && weights.size() == targets.size(),
        "cross_entropy: target count mismatch");
    Matrix<Scalar> probs(lv.rows(), lv.cols());
    Scalar total = 0;
    for (Eigen::Index i = 0; i < lv.rows(); ++i) {
        const Scalar m = lv.row(i).maxCoeff();
        probs.row(i) = (lv.row(i).array() - m).exp();
        const Scalar z = probs.row(i).sum();
        probs.row(i) /= z;
        const auto w = weights[static_cast<std::size_t>(i)];
        if (w != Scalar(0)) {
            const int tgt = targets[static_cast<std::size_t>(i)];
            detail::require(tgt >= 0 && tgt < lv.cols(), "cross_entropy: target out of range");
            total += w * (m + std::log(z) - lv(i, tgt));
        }
    }
    Matrix<Scalar> y(1, 1);
    y(0, 0) = total / normalizer;
    return t->record(std::move(y), { logits },
        [t, logits, targets = std::move(targets), weights = std::move(weights), normalizer,
            probs = std::move(probs)](const Matrix<Scalar> &g) {
            Matrix<Scalar> d = probs;
            for (Eigen::Index i = 0; i < d.rows(); ++i) {
                const auto w = weights[static_cast<std::size_t>(i)];
                if (w == Scalar(0)) {
                    d.row(i).setZero();
                    continue;
                }
                d(i, targets[static_cast<std::size_t>(i)]) -= Scalar(1);
                d.row(i) *= w;
            }
            t->accumulate(logits, d * (g(0, 0) / normalizer));
        });
}

} // namespace ppvae

#endif // PPVAE_AUTODIFF_HPP_
