#pragma once

// Time-dependent discrete Lagrangians on R x Q. Extended nodes store the time
// as coordinate 0, followed by the n configuration coordinates.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <boost/math/tools/toms748_solve.hpp>

#include "hovi/core.hpp"
#include "hovi/del.hpp"
#include "hovi/derivatives.hpp"

namespace hovi {

using TimeView = std::span<const double>;

/// Strictly increasing times t_0..t_N with nodes q_0..q_N.
struct TimedPath {
    std::vector<double> times;
    std::vector<ConfigPoint> nodes;

    [[nodiscard]] int last_index() const noexcept { return static_cast<int>(nodes.size()) - 1; }
};

inline void validate_timed_path(const TimedPath& path, int dim)
{
    if (path.times.size() != path.nodes.size() || path.nodes.empty()) {
        throw InvalidArgument("timed path needs one time per node");
    }
    for (std::size_t i = 0; i < path.nodes.size(); ++i) {
        if (!std::isfinite(path.times[i]) || path.nodes[i].size() != dim || !path.nodes[i].allFinite()) {
            throw InvalidArgument("timed path has non-finite entries or the wrong dimension");
        }
        if (i > 0 && !(path.times[i] > path.times[i - 1])) {
            throw InvalidArgument("times must be strictly increasing");
        }
    }
}

/**
 * L_d(t_0..t_k, q_0..q_k). `partial(t, q, j)`, when set, returns the
 * (n+1)-vector (dL/dt_j, dL/dq_j) for factor j = 1..k+1.
 */
struct TimeDependentLagrangian {
    int order = 1;
    int dim = 1;
    std::function<double(TimeView, WindowView)> value;
    std::function<Vector(TimeView, WindowView, int)> partial;

    [[nodiscard]] bool has_partials() const noexcept { return static_cast<bool>(partial); }
};

// ---------------------------------------------------------------------------
// Extended coordinates

inline ConfigPoint extended_point(double t, const ConfigPoint& q)
{
    ConfigPoint x(q.size() + 1);
    x[0] = t;
    x.tail(q.size()) = q;
    return x;
}

inline DiscretePath to_extended(const TimedPath& path)
{
    DiscretePath out;
    for (std::size_t i = 0; i < path.nodes.size(); ++i) {
        out.nodes.push_back(extended_point(path.times[i], path.nodes[i]));
    }
    return out;
}

inline TimedPath from_extended(const DiscretePath& path)
{
    TimedPath out;
    for (const auto& x : path.nodes) {
        out.times.push_back(x[0]);
        out.nodes.emplace_back(x.tail(x.size() - 1));
    }
    return out;
}

namespace detail {

struct SplitWindow {
    std::vector<double> t;
    std::vector<ConfigPoint> q;
};

inline SplitWindow split(WindowView window)
{
    SplitWindow s;
    for (const auto& x : window) {
        s.t.push_back(x[0]);
        s.q.emplace_back(x.tail(x.size() - 1));
    }
    return s;
}

/// split() for evaluation of the weighted action; time must run forward inside the window.
inline SplitWindow split_forward(WindowView window)
{
    auto s = split(window);
    for (std::size_t i = 1; i < s.t.size(); ++i) {
        if (!(s.t[i] > s.t[i - 1])) {
            throw NumericError("window times are not increasing");
        }
    }
    return s;
}

}  // namespace detail

/**
 * Constrained system on R x Q (dimension n+1) whose window Lagrangian is
 * (t_k - t_0) L_d. The time row of the Euler-Lagrange residual is then the
 * time-node equation. Constraints must already be on extended windows.
 */
inline ConstrainedSystem extend(const TimeDependentLagrangian& lagrangian,
                                std::vector<WindowFunction> constraints = {},
                                std::vector<WindowFunction> closing_constraints = {})
{
    if (lagrangian.order < 1 || lagrangian.dim < 1 || !lagrangian.value) {
        throw InvalidArgument("time-dependent lagrangian is incomplete");
    }
    const int k = lagrangian.order;
    const int n = lagrangian.dim;
    ConstrainedSystem sys;
    sys.order = k;
    sys.dim = n + 1;
    sys.lagrangian.order = k;
    sys.lagrangian.dim = n + 1;
    sys.lagrangian.value = [lagrangian, k](WindowView w) {
        const auto s = detail::split_forward(w);
        return (s.t[static_cast<std::size_t>(k)] - s.t[0]) * lagrangian.value(s.t, s.q);
    };
    if (lagrangian.has_partials()) {
        sys.lagrangian.partial = [lagrangian, k](WindowView w, int j) -> Vector {
            const auto s = detail::split_forward(w);
            const double weight = s.t[static_cast<std::size_t>(k)] - s.t[0];
            Vector d = weight * lagrangian.partial(s.t, s.q, j);
            if (j == 1 || j == k + 1) {
                d[0] += (j == 1 ? -1.0 : 1.0) * lagrangian.value(s.t, s.q);
            }
            return d;
        };
    }
    sys.constraints = std::move(constraints);
    sys.closing_constraints = std::move(closing_constraints);
    sys.labels.push_back("t");
    for (int c = 1; c <= n; ++c) {
        sys.labels.push_back("q" + std::to_string(c));
    }
    validate_system(sys);
    return sys;
}

/// Free mask over extended coordinates: interior q coordinates, and interior times when free_times.
inline std::vector<bool> timed_free_mask(int N, int order, int dim, bool free_times)
{
    std::vector<bool> mask(static_cast<std::size_t>((N + 1) * (dim + 1)), false);
    for (int p = order; p <= N - order; ++p) {
        for (int c = free_times ? 0 : 1; c <= dim; ++c) {
            mask[static_cast<std::size_t>(p * (dim + 1) + c)] = true;
        }
    }
    return mask;
}

// ---------------------------------------------------------------------------
// Energy

namespace detail {

/// (dL/dt_j, dL/dq_j) of the unweighted lagrangian, analytic or by central differences.
inline Vector td_partial(const TimeDependentLagrangian& L, TimeView t, WindowView q, int j, const DerivativeConfig& cfg)
{
    if (L.has_partials()) {
        return L.partial(t, q, j);
    }
    WindowFunction f;
    f.order = L.order;
    f.dim = L.dim + 1;
    f.value = [&L](WindowView w) {
        const auto s = split(w);
        return L.value(s.t, s.q);
    };
    std::vector<ConfigPoint> ext;
    for (std::size_t i = 0; i < q.size(); ++i) {
        ext.push_back(extended_point(t[i], q[i]));
    }
    return hovi::partial(f, j, ext, cfg);
}

}  // namespace detail

/**
 * Discrete energy conjugate to the step h_i = t_{i+1} - t_i:
 *   E_i = -sum_{w=i-k+1}^{i} [ (sum_{l=i-w+1}^{k} dL_w/dt_{w+l}) (t_{w+k} - t_w) + L_w ].
 * Defined for k-1 <= i <= N-k. For autonomous L_d the time equation at node p
 * reads E_p = E_{p-1}.
 */
inline double discrete_energy(const TimeDependentLagrangian& L, const TimedPath& path, int i,
                              const DerivativeConfig& cfg = {})
{
    validate_timed_path(path, L.dim);
    const int k = L.order;
    const int N = path.last_index();
    if (i < k - 1 || i > N - k) {
        throw InvalidArgument("energy index " + std::to_string(i) + " outside " + std::to_string(k - 1) + ".." +
                              std::to_string(N - k));
    }
    double e = 0.0;
    for (int w = i - k + 1; w <= i; ++w) {
        const auto ws = static_cast<std::size_t>(w);
        const TimeView t = TimeView(path.times).subspan(ws, static_cast<std::size_t>(k + 1));
        const WindowView q = WindowView(path.nodes).subspan(ws, static_cast<std::size_t>(k + 1));
        double dt = 0.0;
        for (int l = i - w + 1; l <= k; ++l) {
            dt += detail::td_partial(L, t, q, l + 1, cfg)[0];
        }
        const double value = L.value(t, q);
        if (!std::isfinite(value) || !std::isfinite(dt)) {
            throw NumericError("energy evaluation produced non-finite values");
        }
        e -= dt * (t[static_cast<std::size_t>(k)] - t[0]) + value;
    }
    return e;
}

/// E_{k-1}..E_{N-k}.
inline std::vector<double> energy_series(const TimeDependentLagrangian& L, const TimedPath& path,
                                         const DerivativeConfig& cfg = {})
{
    std::vector<double> out;
    for (int i = L.order - 1; i <= path.last_index() - L.order; ++i) {
        out.push_back(discrete_energy(L, path, i, cfg));
    }
    return out;
}

inline double max_drift(const std::vector<double>& series)
{
    double drift = 0.0;
    for (double e : series) {
        drift = std::max(drift, std::abs(e - series.front()));
    }
    return drift;
}

// ---------------------------------------------------------------------------
// Step-size constraints (k = 2, extended dimension n+1)

/// Phi^(1) = t_1 - t_0 - h and Phi^(2) = t_2 - t_1 - h.
inline std::vector<WindowFunction> fixed_step_constraints(double h, int dim)
{
    if (!(h > 0.0) || !std::isfinite(h)) {
        throw InvalidArgument("step size must be positive");
    }
    if (dim < 1) {
        throw InvalidArgument("dimension must be positive");
    }
    std::vector<WindowFunction> out;
    for (int which = 1; which <= 2; ++which) {
        WindowFunction f;
        f.order = 2;
        f.dim = dim + 1;
        const auto a = static_cast<std::size_t>(which - 1);
        f.value = [h, a](WindowView w) { return w[a + 1][0] - w[a][0] - h; };
        f.partial = [a, dim](WindowView, int j) -> Vector {
            Vector d = Vector::Zero(dim + 1);
            if (static_cast<std::size_t>(j - 1) == a + 1) {
                d[0] = 1.0;
            } else if (static_cast<std::size_t>(j - 1) == a) {
                d[0] = -1.0;
            }
            return d;
        };
        f.hessian = [dim](WindowView) { return Matrix::Zero(3 * (dim + 1), 3 * (dim + 1)).eval(); };
        f.support = {a == 0, true, a == 1};
        out.push_back(std::move(f));
    }
    return out;
}

/// Step size as a function of the configuration window (q_0, q_1, q_2), optional gradient (3n-vector).
struct StepSizeFunction {
    std::function<double(WindowView)> value;
    std::function<Vector(WindowView)> gradient;
};

/**
 * Phi^(1) = t_1 - t_0 - h(q_0, q_1, q_2) and Phi^(2) = t_2 - t_1 - h(q_0, q_1, q_2).
 * The q-partials are -D h.
 */
inline std::vector<WindowFunction> adaptive_step_constraints(const StepSizeFunction& step_size, int dim,
                                                             const DerivativeConfig& cfg = {})
{
    if (!step_size.value || dim < 1) {
        throw InvalidArgument("adaptive step size needs a value function and positive dimension");
    }
    auto h_of = [step_size](WindowView w) {
        const auto s = detail::split(w);
        const double h = step_size.value(s.q);
        if (!(h > 0.0) || !std::isfinite(h)) {
            throw NumericError("step size function returned a nonpositive value");
        }
        return h;
    };
    auto dh_of = [step_size, dim, cfg](WindowView w, int j) -> Vector {
        const auto s = detail::split(w);
        if (step_size.gradient) {
            return step_size.gradient(s.q).segment((j - 1) * dim, dim);
        }
        WindowFunction hf;
        hf.order = 2;
        hf.dim = dim;
        hf.value = step_size.value;
        return hovi::partial(hf, j, s.q, cfg);
    };
    std::vector<WindowFunction> out;
    for (int which = 1; which <= 2; ++which) {
        WindowFunction f;
        f.order = 2;
        f.dim = dim + 1;
        const auto a = static_cast<std::size_t>(which - 1);
        f.value = [h_of, a](WindowView w) { return w[a + 1][0] - w[a][0] - h_of(w); };
        f.partial = [dh_of, a, dim](WindowView w, int j) -> Vector {
            Vector d = Vector::Zero(dim + 1);
            d.tail(dim) = -dh_of(w, j);
            if (static_cast<std::size_t>(j - 1) == a + 1) {
                d[0] = 1.0;
            } else if (static_cast<std::size_t>(j - 1) == a) {
                d[0] = -1.0;
            }
            return d;
        };
        out.push_back(std::move(f));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Free-time stepping

namespace detail {

struct TimedTrial {
    double time_residual = 0.0;
    ConfigPoint node;
    double condition_estimate = 0.0;
};

/**
 * Pins the new time at t_prev + s h_prev and solves the configuration rows of
 * the Euler-Lagrange equation at node k for q_{2k}. Empty when that fails.
 */
inline std::optional<TimedTrial> timed_trial(const ConstrainedSystem& system, std::vector<ConfigPoint> nodes, double s,
                                             const ConfigPoint& q_start, const SolverOptions& opts)
{
    const int k = system.order;
    const int n = system.dim - 1;
    const auto last = static_cast<std::size_t>(2 * k);
    const double t_prev = nodes[last - 1][0];
    const double h_prev = t_prev - nodes[last - 2][0];
    nodes[last][0] = t_prev + s * h_prev;

    auto del = [&](const Vector& q) {
        nodes[last].tail(n) = q;
        Vector r = Vector::Zero(n + 1);
        for (int j = 1; j <= k + 1; ++j) {
            const auto w = static_cast<std::size_t>(k - j + 1);
            r += partial(system.lagrangian, j, WindowView(nodes).subspan(w, static_cast<std::size_t>(k + 1)), opts.deriv);
        }
        return r;
    };
    auto residual = [&](const Vector& q) { return Vector(del(q).tail(n)); };
    auto jacobian = [&](const Vector& q) {
        nodes[last].tail(n) = q;
        const Matrix H = cross_partial(system.lagrangian, 1, k + 1,
                                       WindowView(nodes).subspan(static_cast<std::size_t>(k)), opts.deriv);
        return Matrix(H.bottomRightCorner(n, n));
    };
    try {
        auto out = newton(residual, jacobian, q_start, opts);
        auto* ok = std::get_if<NewtonResult>(&out);
        if (ok == nullptr) {
            return std::nullopt;
        }
        const double rt = del(ok->x)[0];
        if (!std::isfinite(rt)) {
            return std::nullopt;
        }
        return TimedTrial{rt, nodes[last], ok->report.jacobian_condition_estimate};
    } catch (const NumericError&) {
        return std::nullopt;
    } catch (const RegularityError&) {
        return std::nullopt;
    }
}

}  // namespace detail

/**
 * Step of an unconstrained extended system (see extend) with the new time
 * free. For fixed new time the configuration rows are solved by Newton; the
 * time row is then a scalar function of the step ratio s = h_new / h_prev,
 * bracketed around s = 1 and solved with TOMS 748. Solving both together is
 * poorly conditioned since both rows of D_1 L_d depend on the newest node
 * mostly through the same divided difference.
 */
inline StepResult step_free_time(const ConstrainedSystem& system, const StepState& state,
                                 const SolverOptions& opts = {})
{
    validate_system(system);
    validate_state(system, state);
    if (system.multiplier_count() != 0 || system.dim < 2) {
        throw InvalidArgument("free-time stepping needs an unconstrained extended system");
    }
    const int k = system.order;
    const int n = system.dim - 1;
    const auto last = static_cast<std::size_t>(2 * k);
    std::vector<ConfigPoint> nodes = state.configs;
    const ConfigPoint a = nodes[last - 2];
    const ConfigPoint b = nodes[last - 1];
    nodes.push_back(ConfigPoint(2.0 * b - a));

    SolveReport report;
    auto fail = [&](const std::string& why) {
        report.final_residual_norm = report.residual_history.empty() ? 0.0 : report.residual_history.back();
        DiscretePath path{nodes};
        throw NonConvergenceError("free-time step did not converge: " + why, report,
                                  path, MultiplierSequence::zeros(k + 1, 0));
    };
    auto trial = [&](double s) {
        const ConfigPoint q0 = b.tail(n) + s * (b.tail(n) - a.tail(n));
        auto t = detail::timed_trial(system, nodes, s, q0, opts);
        if (t) {
            report.residual_history.push_back(std::abs(t->time_residual));
        }
        return t;
    };

    // Walk outward from s = 1 until the time row changes sign between neighbours.
    constexpr double grow = 1.2;
    constexpr int max_expansions = 60;
    auto centre = trial(1.0);
    if (!centre) {
        fail("configuration rows failed at the extrapolated time");
    }
    std::optional<std::pair<double, double>> bracket;
    double fa = 0.0;
    double fb = 0.0;
    if (centre->time_residual == 0.0) {
        bracket = std::pair{1.0, 1.0};
    }
    std::optional<detail::TimedTrial> up = centre;
    std::optional<detail::TimedTrial> down = centre;
    double s_up = 1.0;
    double s_down = 1.0;
    for (int i = 0; i < max_expansions && !bracket; ++i) {
        if (up) {
            auto next = trial(s_up * grow);
            if (next && (next->time_residual > 0.0) != (up->time_residual > 0.0)) {
                bracket = std::pair{s_up, s_up * grow};
                fa = up->time_residual;
                fb = next->time_residual;
                break;
            }
            s_up *= grow;
            up = next;
        }
        if (down) {
            auto next = trial(s_down / grow);
            if (next && (next->time_residual > 0.0) != (down->time_residual > 0.0)) {
                bracket = std::pair{s_down / grow, s_down};
                fa = next->time_residual;
                fb = down->time_residual;
                break;
            }
            s_down /= grow;
            down = next;
        }
        if (!up && !down) {
            break;
        }
    }
    if (!bracket) {
        fail("no sign change of the time equation near the previous step");
    }

    double root = bracket->first;
    if (bracket->first != bracket->second) {
        auto f = [&](double s) {
            auto t = trial(s);
            if (!t) {
                throw NumericError("configuration rows failed inside the bracket");
            }
            return t->time_residual;
        };
        std::uintmax_t iters = static_cast<std::uintmax_t>(opts.max_iter) * 2;
        try {
            const auto [lo, hi] = boost::math::tools::toms748_solve(f, bracket->first, bracket->second, fa, fb,
                                                                    boost::math::tools::eps_tolerance<double>(), iters);
            const auto tlo = trial(lo);
            const auto thi = trial(hi);
            root = (tlo && thi && std::abs(thi->time_residual) < std::abs(tlo->time_residual)) ? hi : lo;
        } catch (const NumericError& e) {
            fail(e.what());
        }
        report.iterations = static_cast<int>(iters);
    }
    const auto best = trial(root);
    if (!best) {
        fail("configuration rows failed at the root");
    }
    nodes[last] = best->node;
    report.final_residual_norm = std::abs(best->time_residual);
    report.jacobian_condition_estimate = best->condition_estimate;
    if (report.final_residual_norm > opts.tol) {
        fail("time equation residual above tolerance");
    }
    report.converged = true;

    StepState next;
    next.configs.assign(nodes.begin() + 1, nodes.end());
    next.multipliers.assign(static_cast<std::size_t>(k), Vector(0));
    return {std::move(next), std::move(report)};
}

/// Repeated step_free_time; includes the initial state.
inline std::vector<StepState> integrate_free_time(const ConstrainedSystem& system, StepState state, int steps,
                                                  const SolverOptions& opts = {})
{
    std::vector<StepState> out;
    out.reserve(static_cast<std::size_t>(steps + 1));
    out.push_back(state);
    for (int s = 0; s < steps; ++s) {
        state = step_free_time(system, state, opts).state;
        out.push_back(state);
    }
    return out;
}

}  // namespace hovi
