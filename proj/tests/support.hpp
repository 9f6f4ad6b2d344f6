#ifndef PPVAE_TESTS_SUPPORT_HPP_
#define PPVAE_TESTS_SUPPORT_HPP_

#include "ppvae/autodiff.hpp"
#include "ppvae/parameters.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>

namespace ppvae::test {

/// Fresh scratch directory under $PPVAE_TEST_TMP (or the system temp dir).
inline std::filesystem::path scratch_dir(const std::string &name)
{
    const char *root = std::getenv("PPVAE_TEST_TMP");
    auto dir = (root != nullptr ? std::filesystem::path(root) : std::filesystem::temp_directory_path() / "ppvae-tests")
        / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline std::string slurp(const std::filesystem::path &p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct GradCheck {
    double worst_relative = 0;
    std::string worst_name;
    int checked = 0;
};

/// Central finite differences against the tape gradient for up to
/// `per_param` entries of every parameter. Relative error uses a floor of
/// `floor` in the denominator so exact zeros compare absolutely. Parameters
/// for which `include` returns false are skipped (e.g. frozen ones).
inline GradCheck check_gradients(ParameterSet<double> &params,
    const std::function<Var<double>(Tape<double> &)> &loss, int per_param = 6, double h = 1e-6,
    double floor = 1e-6, const std::function<bool(const std::string &)> &include = {})
{
    params.zero_grad();
    {
        Tape<double> t;
        t.backward(loss(t));
    }
    GradCheck out;
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto &p = params[i];
        if (include && !include(p.name)) {
            continue;
        }
        const auto n = p.value.size();
        const auto stride = std::max<Eigen::Index>(1, n / per_param);
        for (Eigen::Index k = 0; k < n; k += stride) {
            const double saved = p.value.data()[k];
            p.value.data()[k] = saved + h;
            Tape<double> tp(false);
            const double up = loss(tp).item();
            p.value.data()[k] = saved - h;
            Tape<double> tm(false);
            const double down = loss(tm).item();
            p.value.data()[k] = saved;
            const double numeric = (up - down) / (2 * h);
            const double analytic = p.grad.data()[k];
            const double rel = std::abs(numeric - analytic) / std::max({ std::abs(numeric), std::abs(analytic), floor });
            ++out.checked;
            if (rel > out.worst_relative) {
                out.worst_relative = rel;
                out.worst_name = p.name + "[" + std::to_string(k) + "]";
            }
        }
    }
    return out;
}

} // namespace ppvae::test

#endif // PPVAE_TESTS_SUPPORT_HPP_
