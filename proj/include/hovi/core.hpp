#pragma once

// Domain types for higher-order discrete Lagrangian systems with constraints:
// window functions on Q^{k+1}, constrained systems, discrete paths and
// multiplier sequences, plus the augmented Lagrangian and discrete action.

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace hovi {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// A configuration q in the global chart Q = R^n.
using ConfigPoint = Vector;

/// A (k+1)-tuple of consecutive configuration points.
using WindowView = std::span<const ConfigPoint>;

// ---------------------------------------------------------------------------
// Errors

class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// WindowFunction

/**
 * Scalar function on a window of k+1 consecutive configurations.
 *
 * Used both for discrete Lagrangians and for constraint functions. The factor
 * index j of a partial D_j is 1-based (j = 1..k+1). `partial`, when set,
 * returns D_j f as a length-n vector. `hessian`, when set, returns the full
 * symmetric ((k+1)n x (k+1)n) matrix of second derivatives, factor-major.
 *
 * `support` lists, per factor, whether the function reads that factor at
 * all. An empty support means every factor is read. Solvers use it to decide
 * which constraint windows touch unknown nodes.
 */
struct WindowFunction {
    int order = 1;
    int dim = 1;
    std::function<double(WindowView)> value;
    std::function<Vector(WindowView, int)> partial;
    std::function<Matrix(WindowView)> hessian;
    std::vector<bool> support;

    [[nodiscard]] int factors() const noexcept { return order + 1; }
    [[nodiscard]] int window_size() const noexcept { return factors() * dim; }
    [[nodiscard]] bool has_partials() const noexcept { return static_cast<bool>(partial); }
    [[nodiscard]] bool has_hessian() const noexcept { return static_cast<bool>(hessian); }

    /// True if the function depends on factor j (1-based).
    [[nodiscard]] bool reads(int j) const
    {
        return support.empty() || support.at(static_cast<std::size_t>(j - 1));
    }
};

/// Throws InvalidArgument unless the window has order+1 points of length dim.
inline void validate_window(const WindowFunction& f, WindowView window)
{
    if (static_cast<int>(window.size()) != f.factors()) {
        throw InvalidArgument("window has " + std::to_string(window.size()) + " points, expected " +
                              std::to_string(f.factors()));
    }
    for (const auto& q : window) {
        if (q.size() != f.dim) {
            throw InvalidArgument("window point has dimension " + std::to_string(q.size()) +
                                  ", expected " + std::to_string(f.dim));
        }
    }
}

inline double evaluate(const WindowFunction& f, WindowView window)
{
    validate_window(f, window);
    const double v = f.value(window);
    if (!std::isfinite(v)) {
        throw NumericError("window function evaluated to a non-finite value");
    }
    return v;
}

/// The function identically equal to `c` (reads no factor).
inline WindowFunction constant_window_function(int order, int dim, double c)
{
    WindowFunction f;
    f.order = order;
    f.dim = dim;
    f.value = [c](WindowView) { return c; };
    f.partial = [dim](WindowView, int) { return Vector::Zero(dim).eval(); };
    f.hessian = [n = (order + 1) * dim](WindowView) { return Matrix::Zero(n, n).eval(); };
    f.support.assign(static_cast<std::size_t>(order + 1), false);
    return f;
}

// ---------------------------------------------------------------------------
// ConstrainedSystem

/**
 * A discrete Lagrangian L_d together with m constraint functions Phi^alpha_d,
 * all defined on windows of k+1 points in R^n.
 *
 * `closing_constraints` optionally replaces the constraints in the one-step
 * map only: the step solves the Euler-Lagrange equation at the middle node
 * together with closing_constraints on the newest window. It must have the
 * same count m. Holonomic constraints that read a single node need it,
 * because the constraint on the newest window does not read the new node.
 */
struct ConstrainedSystem {
    int order = 1;
    int dim = 1;
    WindowFunction lagrangian;
    std::vector<WindowFunction> constraints;
    std::vector<WindowFunction> closing_constraints;
    std::vector<std::string> labels;

    [[nodiscard]] int multiplier_count() const noexcept { return static_cast<int>(constraints.size()); }

    [[nodiscard]] const std::vector<WindowFunction>& step_constraints() const noexcept
    {
        return closing_constraints.empty() ? constraints : closing_constraints;
    }
};

inline void validate_system(const ConstrainedSystem& system)
{
    if (system.order < 1 || system.dim < 1) {
        throw InvalidArgument("system order and dimension must be positive");
    }
    auto check = [&](const WindowFunction& f, const char* what) {
        if (f.order != system.order || f.dim != system.dim) {
            throw InvalidArgument(std::string(what) + " does not share the system order/dimension");
        }
        if (!f.value) {
            throw InvalidArgument(std::string(what) + " has no value function");
        }
        if (!f.support.empty() && static_cast<int>(f.support.size()) != f.factors()) {
            throw InvalidArgument(std::string(what) + " support mask has the wrong length");
        }
    };
    check(system.lagrangian, "lagrangian");
    for (const auto& c : system.constraints) {
        check(c, "constraint");
    }
    for (const auto& c : system.closing_constraints) {
        check(c, "closing constraint");
    }
    if (!system.closing_constraints.empty() &&
        system.closing_constraints.size() != system.constraints.size()) {
        throw InvalidArgument("closing constraints must match the constraint count");
    }
    if (system.multiplier_count() >= system.dim * (system.order + 1)) {
        throw InvalidArgument("too many constraints for the window dimension");
    }
}

// ---------------------------------------------------------------------------
// Paths and multipliers

/// Node configurations q_0..q_N.
struct DiscretePath {
    std::vector<ConfigPoint> nodes;

    [[nodiscard]] int last_index() const noexcept { return static_cast<int>(nodes.size()) - 1; }
    [[nodiscard]] WindowView window(int start, int order) const
    {
        return WindowView(nodes).subspan(static_cast<std::size_t>(start),
                                         static_cast<std::size_t>(order + 1));
    }
};

/// Multipliers lambda^0..lambda^{N-k}, one length-m vector per window.
struct MultiplierSequence {
    std::vector<Vector> lambdas;

    static MultiplierSequence zeros(int windows, int m)
    {
        return MultiplierSequence{std::vector<Vector>(static_cast<std::size_t>(windows), Vector::Zero(m))};
    }
};

inline void validate_path(const ConstrainedSystem& system, const DiscretePath& path)
{
    const int N = path.last_index();
    if (N < 2 * system.order) {
        throw InvalidArgument("path needs at least 2k+1 nodes");
    }
    for (const auto& q : path.nodes) {
        if (q.size() != system.dim) {
            throw InvalidArgument("path node has the wrong dimension");
        }
        if (!q.allFinite()) {
            throw InvalidArgument("path node has non-finite entries");
        }
    }
}

inline void validate_multipliers(const ConstrainedSystem& system, const DiscretePath& path,
                                 const MultiplierSequence& multipliers)
{
    const int windows = path.last_index() - system.order + 1;
    if (static_cast<int>(multipliers.lambdas.size()) != windows) {
        throw InvalidArgument("multiplier sequence length " + std::to_string(multipliers.lambdas.size()) +
                              " does not match window count " + std::to_string(windows));
    }
    for (const auto& l : multipliers.lambdas) {
        if (l.size() != system.multiplier_count()) {
            throw InvalidArgument("multiplier has the wrong length");
        }
    }
}

// ---------------------------------------------------------------------------
// Augmented Lagrangian and action

/// L_d(window) + sum_alpha lambda_alpha Phi^alpha_d(window).
inline double augmented_window_value(const ConstrainedSystem& system, WindowView window, const Vector& lambda)
{
    if (lambda.size() != system.multiplier_count()) {
        throw InvalidArgument("multiplier length does not match the constraint count");
    }
    double value = evaluate(system.lagrangian, window);
    for (int a = 0; a < system.multiplier_count(); ++a) {
        value += lambda[a] * evaluate(system.constraints[static_cast<std::size_t>(a)], window);
    }
    return value;
}

/// Sum of augmented window values over windows i = 0..N-k.
inline double discrete_action(const ConstrainedSystem& system, const DiscretePath& path,
                              const MultiplierSequence& multipliers)
{
    validate_path(system, path);
    validate_multipliers(system, path, multipliers);
    double total = 0.0;
    const int windows = path.last_index() - system.order + 1;
    for (int i = 0; i < windows; ++i) {
        total += augmented_window_value(system, path.window(i, system.order),
                                        multipliers.lambdas[static_cast<std::size_t>(i)]);
    }
    return total;
}

/// Copy of a window as an owning vector (convenient for tests and perturbations).
inline std::vector<ConfigPoint> to_points(WindowView window)
{
    return {window.begin(), window.end()};
}

/// Stacks the points of a window into one vector, factor-major.
inline Vector stack(WindowView window)
{
    Eigen::Index total = 0;
    for (const auto& q : window) {
        total += q.size();
    }
    Vector out(total);
    Eigen::Index offset = 0;
    for (const auto& q : window) {
        out.segment(offset, q.size()) = q;
        offset += q.size();
    }
    return out;
}

/// Inverse of stack for `factors` points of dimension `dim`.
inline std::vector<ConfigPoint> unstack(const Vector& z, int factors, int dim)
{
    std::vector<ConfigPoint> out;
    out.reserve(static_cast<std::size_t>(factors));
    for (int j = 0; j < factors; ++j) {
        out.emplace_back(z.segment(static_cast<Eigen::Index>(j) * dim, dim));
    }
    return out;
}

}  // namespace hovi
