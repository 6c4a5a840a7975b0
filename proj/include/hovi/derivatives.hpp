#pragma once

// Derivative provider for window functions: analytic partials when the
// function supplies them, central finite differences otherwise.

#include <algorithm>
#include <cmath>
#include <string>
#include <tuple>
#include <vector>

#include "hovi/core.hpp"

namespace hovi {

struct DerivativeConfig {
    /// Relative central-difference step for first derivatives.
    double fd_step = 1e-6;
    /// Relative step for second differences of a value-only function.
    double hess_step = 1e-4;
    /// Tolerance used by callers comparing check_gradient output.
    double check_tol = 1e-5;

    void validate() const
    {
        if (!(fd_step > 0.0) || !(hess_step > 0.0) || !(check_tol > 0.0)) {
            throw InvalidArgument("derivative steps and tolerances must be positive");
        }
    }
};

namespace detail {

inline double relative_step(double x, double base) { return base * std::max(1.0, std::abs(x)); }

inline void check_factor(const WindowFunction& f, int j)
{
    if (j < 1 || j > f.factors()) {
        throw InvalidArgument("factor index " + std::to_string(j) + " outside 1.." + std::to_string(f.factors()));
    }
}

inline void require_finite(const Vector& v, const char* what)
{
    if (!v.allFinite()) {
        throw NumericError(std::string(what) + " produced non-finite values");
    }
}

inline void require_finite(const Matrix& m, const char* what)
{
    if (!m.allFinite()) {
        throw NumericError(std::string(what) + " produced non-finite values");
    }
}

/// Central difference of the value with respect to coordinate c of factor j.
inline double fd_first(const WindowFunction& f, std::vector<ConfigPoint>& w, int j, int c, double base)
{
    auto& x = w[static_cast<std::size_t>(j - 1)][c];
    const double x0 = x;
    const double s = relative_step(x0, base);
    x = x0 + s;
    const double up = x;
    const double fp = f.value(w);
    x = x0 - s;
    const double down = x;
    const double fm = f.value(w);
    x = x0;
    return (fp - fm) / (up - down);
}

inline Vector fd_partial(const WindowFunction& f, WindowView window, int j, double base)
{
    auto w = to_points(window);
    Vector out(f.dim);
    for (int c = 0; c < f.dim; ++c) {
        out[c] = fd_first(f, w, j, c, base);
    }
    return out;
}

}  // namespace detail

/// D_j f(window), j in 1..k+1.
inline Vector partial(const WindowFunction& f, int j, WindowView window, const DerivativeConfig& cfg = {})
{
    detail::check_factor(f, j);
    validate_window(f, window);
    if (!f.reads(j)) {
        return Vector::Zero(f.dim);
    }
    Vector out = f.has_partials() ? f.partial(window, j) : detail::fd_partial(f, window, j, cfg.fd_step);
    if (out.size() != f.dim) {
        throw InvalidArgument("analytic partial returned a vector of the wrong length");
    }
    detail::require_finite(out, "partial derivative");
    return out;
}

/// All partials stacked factor-major: (D_1 f, ..., D_{k+1} f).
inline Vector gradient(const WindowFunction& f, WindowView window, const DerivativeConfig& cfg = {})
{
    Vector g(f.window_size());
    for (int j = 1; j <= f.factors(); ++j) {
        g.segment(static_cast<Eigen::Index>(j - 1) * f.dim, f.dim) = partial(f, j, window, cfg);
    }
    return g;
}

/// Full second-derivative matrix over the stacked window coordinates.
inline Matrix hessian(const WindowFunction& f, WindowView window, const DerivativeConfig& cfg = {})
{
    validate_window(f, window);
    const int size = f.window_size();
    if (f.has_hessian()) {
        Matrix H = f.hessian(window);
        if (H.rows() != size || H.cols() != size) {
            throw InvalidArgument("analytic hessian has the wrong shape");
        }
        detail::require_finite(H, "hessian");
        return H;
    }

    auto w = to_points(window);
    Matrix H = Matrix::Zero(size, size);
    const int n = f.dim;
    auto coord = [&](int idx) -> double& { return w[static_cast<std::size_t>(idx / n)][idx % n]; };
    auto factor_read = [&](int idx) { return f.reads(idx / n + 1); };

    if (f.has_partials()) {
        // Difference the analytic gradient, then symmetrize.
        for (int b = 0; b < size; ++b) {
            if (!factor_read(b)) {
                continue;
            }
            double& x = coord(b);
            const double x0 = x;
            const double s = detail::relative_step(x0, cfg.fd_step);
            x = x0 + s;
            const double up = x;
            const Vector gp = gradient(f, w, cfg);
            x = x0 - s;
            const double down = x;
            const Vector gm = gradient(f, w, cfg);
            x = x0;
            H.col(b) = (gp - gm) / (up - down);
        }
        H = (0.5 * (H + H.transpose())).eval();
    } else {
        const double f0 = f.value(w);
        for (int a = 0; a < size; ++a) {
            if (!factor_read(a)) {
                continue;
            }
            double& xa = coord(a);
            const double a0 = xa;
            const double sa = detail::relative_step(a0, cfg.hess_step);
            xa = a0 + sa;
            const double fp = f.value(w);
            xa = a0 - sa;
            const double fm = f.value(w);
            xa = a0;
            H(a, a) = (fp - 2.0 * f0 + fm) / (sa * sa);
            for (int b = a + 1; b < size; ++b) {
                if (!factor_read(b)) {
                    continue;
                }
                double& xb = coord(b);
                const double b0 = xb;
                const double sb = detail::relative_step(b0, cfg.hess_step);
                double acc = 0.0;
                for (const auto& [da, db, sign] : {std::tuple{1.0, 1.0, 1.0}, std::tuple{1.0, -1.0, -1.0},
                                                   std::tuple{-1.0, 1.0, -1.0}, std::tuple{-1.0, -1.0, 1.0}}) {
                    xa = a0 + da * sa;
                    xb = b0 + db * sb;
                    acc += sign * f.value(w);
                }
                xa = a0;
                xb = b0;
                H(a, b) = H(b, a) = acc / (4.0 * sa * sb);
            }
        }
    }
    detail::require_finite(H, "hessian");
    return H;
}

/// n x n block of second derivatives d^2 f / d(factor j1) d(factor j2).
inline Matrix cross_partial(const WindowFunction& f, int j1, int j2, WindowView window,
                            const DerivativeConfig& cfg = {})
{
    detail::check_factor(f, j1);
    detail::check_factor(f, j2);
    validate_window(f, window);
    const int n = f.dim;
    if (f.has_hessian() || !f.has_partials()) {
        return hessian(f, window, cfg).block(static_cast<Eigen::Index>(j1 - 1) * n,
                                             static_cast<Eigen::Index>(j2 - 1) * n, n, n);
    }
    // Difference D_{j2} f with respect to the coordinates of factor j1.
    Matrix block = Matrix::Zero(n, n);
    if (!f.reads(j1) || !f.reads(j2)) {
        return block;
    }
    auto w = to_points(window);
    for (int a = 0; a < n; ++a) {
        double& x = w[static_cast<std::size_t>(j1 - 1)][a];
        const double x0 = x;
        const double s = detail::relative_step(x0, cfg.fd_step);
        x = x0 + s;
        const double up = x;
        const Vector gp = partial(f, j2, w, cfg);
        x = x0 - s;
        const double down = x;
        const Vector gm = partial(f, j2, w, cfg);
        x = x0;
        block.row(a) = ((gp - gm) / (up - down)).transpose();
    }
    detail::require_finite(block, "cross partial");
    return block;
}

/// Max over factors and components of |analytic - central difference| / (1 + |analytic|).
inline double check_gradient(const WindowFunction& f, WindowView window, const DerivativeConfig& cfg = {})
{
    cfg.validate();
    validate_window(f, window);
    if (!f.has_partials()) {
        throw InvalidArgument("check_gradient needs analytic partials");
    }
    double worst = 0.0;
    for (int j = 1; j <= f.factors(); ++j) {
        const Vector analytic = f.partial(window, j);
        const Vector numeric = detail::fd_partial(f, window, j, cfg.fd_step);
        for (int c = 0; c < f.dim; ++c) {
            worst = std::max(worst, std::abs(analytic[c] - numeric[c]) / (1.0 + std::abs(analytic[c])));
        }
    }
    return worst;
}

}  // namespace hovi
