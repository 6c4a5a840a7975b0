#pragma once

// Concrete systems: cubic splines on a sphere with interpolation pins, the
// elastic beam, and the reduction of an underactuated optimal control
// problem to a constrained second-order variational problem.

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "hovi/core.hpp"
#include "hovi/del.hpp"
#include "hovi/derivatives.hpp"
#include "hovi/timedep.hpp"

namespace hovi {

// ---------------------------------------------------------------------------
// Sphere splines

/**
 * k=2, n=3: L_d = h/2 |(q_2 - 2q_1 + q_0)/h²|² with Phi_d = q_0·q_0 - r² on
 * the first node of each window. The step map closes with q_2·q_2 - r² on
 * the newest window instead, since Phi_d never reads the new node.
 */
inline ConstrainedSystem sphere_spline_system(double r, double h)
{
    if (!(r > 0.0) || !(h > 0.0) || !std::isfinite(r) || !std::isfinite(h)) {
        throw InvalidArgument("sphere radius and step must be positive");
    }
    const double s = 1.0 / (h * h * h);
    ConstrainedSystem sys;
    sys.order = 2;
    sys.dim = 3;
    sys.labels = {"x", "y", "z"};

    WindowFunction& L = sys.lagrangian;
    L.order = 2;
    L.dim = 3;
    L.value = [s](WindowView w) { return 0.5 * s * (w[2] - 2.0 * w[1] + w[0]).squaredNorm(); };
    L.partial = [s](WindowView w, int j) -> Vector {
        const double c = j == 2 ? -2.0 : 1.0;
        return c * s * (w[2] - 2.0 * w[1] + w[0]);
    };
    L.hessian = [s](WindowView) {
        const double c[3] = {1.0, -2.0, 1.0};
        Matrix H(9, 9);
        for (int a = 0; a < 3; ++a) {
            for (int b = 0; b < 3; ++b) {
                H.block(3 * a, 3 * b, 3, 3) = c[a] * c[b] * s * Matrix::Identity(3, 3);
            }
        }
        return H;
    };

    auto on_node = [r](std::size_t node) {
        WindowFunction f;
        f.order = 2;
        f.dim = 3;
        f.value = [r, node](WindowView w) { return w[node].squaredNorm() - r * r; };
        f.partial = [node](WindowView w, int j) -> Vector {
            return static_cast<std::size_t>(j - 1) == node ? Vector(2.0 * w[node]) : Vector::Zero(3).eval();
        };
        f.hessian = [node](WindowView) {
            Matrix H = Matrix::Zero(9, 9);
            H.block(3 * static_cast<Eigen::Index>(node), 3 * static_cast<Eigen::Index>(node), 3, 3) =
                2.0 * Matrix::Identity(3, 3);
            return H;
        };
        f.support = {node == 0, node == 1, node == 2};
        return f;
    };
    sys.constraints.push_back(on_node(0));
    sys.closing_constraints.push_back(on_node(2));
    return sys;
}

/// lambda^k = -(q_{k+2}·q_k - 4 q_{k+1}·q_k + q_{k-2}·q_k - 4 q_{k-1}·q_k + 6r²) / (2 r² h³)
inline double sphere_multiplier(WindowView five, double r, double h)
{
    if (five.size() != 5) {
        throw InvalidArgument("sphere multiplier needs q_{k-2}..q_{k+2}");
    }
    for (const auto& q : five) {
        if (q.size() != 3) {
            throw InvalidArgument("sphere multiplier needs points in R^3");
        }
    }
    const ConfigPoint& qk = five[2];
    const double bracket =
        five[4].dot(qk) - 4.0 * five[3].dot(qk) + five[0].dot(qk) - 4.0 * five[1].dot(qk) + 6.0 * r * r;
    return -bracket / (2.0 * r * r * h * h * h);
}

// ---------------------------------------------------------------------------
// Interpolation

/**
 * Boundary pairs (q_0, q_1), (q_{N-1}, q_N) and pinned nodes I in 2..N-2.
 * `manifold`, when set, must vanish at every boundary and pinned point.
 */
struct InterpolationSpec {
    int N = 0;
    std::vector<ConfigPoint> head;
    std::vector<ConfigPoint> tail;
    std::map<int, ConfigPoint> pins;
    std::function<double(const ConfigPoint&)> manifold;
    double manifold_tol = 1e-12;
};

inline std::function<double(const ConfigPoint&)> sphere_manifold(double r)
{
    return [r](const ConfigPoint& q) { return q.squaredNorm() - r * r; };
}

inline void validate_interpolation(const ConstrainedSystem& system, const InterpolationSpec& spec)
{
    BoundaryData bd{spec.head, spec.tail, spec.N};
    validate_boundary(system, bd);
    const int k = system.order;
    for (const auto& [i, q] : spec.pins) {
        if (i < k || i > spec.N - k) {
            throw InvalidArgument("pin index " + std::to_string(i) + " is not an interior node");
        }
        if (q.size() != system.dim || !q.allFinite()) {
            throw InvalidArgument("pinned point has the wrong dimension or non-finite entries");
        }
    }
    if (spec.manifold) {
        auto check = [&](const ConfigPoint& q, const std::string& what) {
            if (!(std::abs(spec.manifold(q)) <= spec.manifold_tol)) {
                throw InvalidArgument(what + " is not on the constraint manifold");
            }
        };
        for (const auto& q : spec.head) {
            check(q, "boundary point");
        }
        for (const auto& q : spec.tail) {
            check(q, "boundary point");
        }
        for (const auto& [i, q] : spec.pins) {
            check(q, "pinned point " + std::to_string(i));
        }
    }
}

/**
 * Boundary solve with pinned nodes eliminated from the unknowns; their
 * Euler-Lagrange equations are dropped. Unpinned interior nodes start from the
 * piecewise-linear interpolant through boundary and pins.
 */
inline PathSolution solve_interpolation(const ConstrainedSystem& system, const InterpolationSpec& spec,
                                        const SolverOptions& opts = {})
{
    validate_system(system);
    validate_interpolation(system, spec);
    const int k = system.order;
    const int n = system.dim;
    const int N = spec.N;

    std::map<int, ConfigPoint> anchors = spec.pins;
    anchors.emplace(k - 1, spec.head.back());
    anchors.emplace(N - k + 1, spec.tail.front());
    DiscretePath path = linear_initial_path(system, BoundaryData{spec.head, spec.tail, N});
    for (int p = k; p <= N - k; ++p) {
        auto hi = anchors.lower_bound(p);
        if (hi->first == p) {
            path.nodes[static_cast<std::size_t>(p)] = hi->second;
            continue;
        }
        auto lo = std::prev(hi);
        const double s = static_cast<double>(p - lo->first) / (hi->first - lo->first);
        path.nodes[static_cast<std::size_t>(p)] = (1.0 - s) * lo->second + s * hi->second;
    }
    auto mask = interior_free_mask(N, k, n);
    for (const auto& [i, q] : spec.pins) {
        for (int c = 0; c < n; ++c) {
            mask[static_cast<std::size_t>(i * n + c)] = false;
        }
    }
    return solve_path(system, std::move(path), MultiplierSequence::zeros(N - k + 1, system.multiplier_count()), mask,
                      opts);
}

// ---------------------------------------------------------------------------
// Elastic beam

/// Scalar coefficient of time with optional derivative.
struct Coefficient {
    std::function<double(double)> value;
    std::function<double(double)> derivative;

    static Coefficient constant(double c)
    {
        return {[c](double) { return c; }, [](double) { return 0.0; }};
    }
    /// c_0 + c_1 t + c_2 t² + ...
    static Coefficient polynomial(std::vector<double> c)
    {
        Coefficient out;
        out.value = [c](double t) {
            double v = 0.0;
            for (auto it = c.rbegin(); it != c.rend(); ++it) {
                v = v * t + *it;
            }
            return v;
        };
        out.derivative = [c](double t) {
            double v = 0.0;
            for (std::size_t i = c.size(); i-- > 1;) {
                v = v * t + static_cast<double>(i) * c[i];
            }
            return v;
        };
        return out;
    }
};

/**
 * k=2, n=1 beam Lagrangian ½ mu(tbar) a² + rho(tbar) qbar with tbar, qbar the
 * window means and the divided-difference acceleration
 *   a = (q_2 - q_1)/d_2² - (q_1 - q_0)/(d_1 d_2),  d_1 = t_1 - t_0, d_2 = t_2 - t_1.
 * Analytic partials are supplied when both coefficients carry derivatives.
 */
inline TimeDependentLagrangian beam_system(const Coefficient& mu, const Coefficient& rho)
{
    if (!mu.value || !rho.value) {
        throw InvalidArgument("beam coefficients need value functions");
    }
    TimeDependentLagrangian L;
    L.order = 2;
    L.dim = 1;
    auto mu_at = [mu](double t) {
        const double m = mu.value(t);
        if (m == 0.0 || !std::isfinite(m)) {
            throw NumericError("beam stiffness vanished");
        }
        return m;
    };
    L.value = [mu_at, rho](TimeView t, WindowView q) {
        const double d1 = t[1] - t[0];
        const double d2 = t[2] - t[1];
        const double a = (q[2][0] - q[1][0]) / (d2 * d2) - (q[1][0] - q[0][0]) / (d1 * d2);
        const double tbar = (t[0] + t[1] + t[2]) / 3.0;
        const double qbar = (q[0][0] + q[1][0] + q[2][0]) / 3.0;
        return 0.5 * mu_at(tbar) * a * a + rho.value(tbar) * qbar;
    };
    if (mu.derivative && rho.derivative) {
        L.partial = [mu_at, mu, rho](TimeView t, WindowView q, int j) -> Vector {
            const double d1 = t[1] - t[0];
            const double d2 = t[2] - t[1];
            const double q0 = q[0][0], q1 = q[1][0], q2 = q[2][0];
            const double a = (q2 - q1) / (d2 * d2) - (q1 - q0) / (d1 * d2);
            const double tbar = (t[0] + t[1] + t[2]) / 3.0;
            const double qbar = (q0 + q1 + q2) / 3.0;
            const double m = mu_at(tbar);
            const double da_dq[3] = {1.0 / (d1 * d2), -1.0 / (d2 * d2) - 1.0 / (d1 * d2), 1.0 / (d2 * d2)};
            const double da_dd1 = (q1 - q0) / (d1 * d1 * d2);
            const double da_dd2 = -2.0 * (q2 - q1) / (d2 * d2 * d2) + (q1 - q0) / (d1 * d2 * d2);
            // d1 = t1 - t0, d2 = t2 - t1
            const double da_dt[3] = {-da_dd1, da_dd1 - da_dd2, da_dd2};
            const double explicit_t = (0.5 * mu.derivative(tbar) * a * a + rho.derivative(tbar) * qbar) / 3.0;
            Vector d(2);
            d[0] = explicit_t + m * a * da_dt[j - 1];
            d[1] = m * a * da_dq[j - 1] + rho.value(tbar) / 3.0;
            return d;
        };
    }
    return L;
}

// ---------------------------------------------------------------------------
// Underactuated optimal control

/**
 * Controlled first-order system on R x Q, Q = R^n, with the first r
 * coordinates actuated. The forced equations at node i read
 *   (t_i - t_{i-1}) D_{q_1} L_d(i-1, i) + (t_{i+1} - t_i) D_{q_0} L_d(i, i+1) = (u_i, 0).
 * `cost(t_0, q_0, t_1, q_1, u)` is the running cost.
 */
struct UnderactuatedSpec {
    int dim = 2;
    int actuated = 1;
    TimeDependentLagrangian lagrangian;
    std::function<double(double, const ConfigPoint&, double, const ConfigPoint&, const Vector&)> cost;
};

inline void validate_underactuated(const UnderactuatedSpec& spec)
{
    if (spec.actuated < 1 || spec.actuated >= spec.dim) {
        throw InvalidArgument("need 1 <= actuated < dim");
    }
    if (spec.lagrangian.order != 1 || spec.lagrangian.dim != spec.dim || !spec.lagrangian.value) {
        throw InvalidArgument("controlled lagrangian must be first order on Q");
    }
    if (!spec.cost) {
        throw InvalidArgument("cost function missing");
    }
}

namespace detail {

/// Left-hand side of the forced equations at the middle node of an extended three-node window.
inline Vector forced_expression(const UnderactuatedSpec& spec, WindowView w, const DerivativeConfig& cfg)
{
    const auto s = split(w);
    const std::vector<double> t01{s.t[0], s.t[1]};
    const std::vector<double> t12{s.t[1], s.t[2]};
    const std::vector<ConfigPoint> q01{s.q[0], s.q[1]};
    const std::vector<ConfigPoint> q12{s.q[1], s.q[2]};
    const Vector left = td_partial(spec.lagrangian, t01, q01, 2, cfg);
    const Vector right = td_partial(spec.lagrangian, t12, q12, 1, cfg);
    return ((s.t[1] - s.t[0]) * left + (s.t[2] - s.t[1]) * right).tail(spec.dim);
}

}  // namespace detail

/**
 * Constrained k=2 system on R x Q: L~ = C(t_0, q_0, t_1, q_1, u) with u the
 * actuated part of the forced expression, and one constraint per unactuated
 * coordinate. Derivatives are finite differences.
 */
inline ConstrainedSystem underactuated_to_constrained(const UnderactuatedSpec& spec, const DerivativeConfig& cfg = {})
{
    validate_underactuated(spec);
    const int n = spec.dim;
    const int r = spec.actuated;
    ConstrainedSystem sys;
    sys.order = 2;
    sys.dim = n + 1;
    sys.lagrangian.order = 2;
    sys.lagrangian.dim = n + 1;
    sys.lagrangian.value = [spec, cfg, r, n](WindowView w) {
        const Vector u = detail::forced_expression(spec, w, cfg).head(r);
        return spec.cost(w[0][0], w[0].tail(n), w[1][0], w[1].tail(n), u);
    };
    for (int alpha = r; alpha < n; ++alpha) {
        WindowFunction phi;
        phi.order = 2;
        phi.dim = n + 1;
        phi.value = [spec, cfg, alpha](WindowView w) { return detail::forced_expression(spec, w, cfg)[alpha]; };
        sys.constraints.push_back(std::move(phi));
    }
    sys.labels.push_back("t");
    for (int c = 1; c <= n; ++c) {
        sys.labels.push_back("q" + std::to_string(c));
    }
    return sys;
}

/// Forced expressions at nodes 1..N-1 (all n components).
inline std::vector<Vector> forced_residuals(const UnderactuatedSpec& spec, const TimedPath& path,
                                           const DerivativeConfig& cfg = {})
{
    validate_underactuated(spec);
    validate_timed_path(path, spec.dim);
    if (path.last_index() < 2) {
        throw InvalidArgument("control recovery needs at least three nodes");
    }
    const DiscretePath ext = to_extended(path);
    std::vector<Vector> out;
    for (int i = 1; i < path.last_index(); ++i) {
        out.push_back(detail::forced_expression(spec, ext.window(i - 1, 2), cfg));
    }
    return out;
}

/// u_1..u_{N-1}: actuated components of the forced expressions.
inline std::vector<Vector> recover_controls(const UnderactuatedSpec& spec, const TimedPath& path,
                                            const DerivativeConfig& cfg = {})
{
    auto all = forced_residuals(spec, path, cfg);
    for (auto& v : all) {
        v = v.head(spec.actuated).eval();
    }
    return all;
}

/**
 * Desk instance on Q = R²: L_d = ½|(q_1 - q_0)/(t_1 - t_0)|² - V((q_0 + q_1)/2)
 * with V = ½ omega² q_2² + kappa q_1 q_2, q_1 actuated, C = ½|u|² (t_1 - t_0).
 */
inline UnderactuatedSpec coupled_oscillator_spec(double omega, double kappa)
{
    UnderactuatedSpec spec;
    spec.dim = 2;
    spec.actuated = 1;
    TimeDependentLagrangian& L = spec.lagrangian;
    L.order = 1;
    L.dim = 2;
    L.value = [omega, kappa](TimeView t, WindowView q) {
        const Vector v = (q[1] - q[0]) / (t[1] - t[0]);
        const Vector m = 0.5 * (q[0] + q[1]);
        return 0.5 * v.squaredNorm() - (0.5 * omega * omega * m[1] * m[1] + kappa * m[0] * m[1]);
    };
    L.partial = [omega, kappa](TimeView t, WindowView q, int j) -> Vector {
        const double dt = t[1] - t[0];
        const Vector v = (q[1] - q[0]) / dt;
        const Vector m = 0.5 * (q[0] + q[1]);
        Vector gradV(2);
        gradV << kappa * m[1], omega * omega * m[1] + kappa * m[0];
        Vector d(3);
        const double sign = j == 1 ? -1.0 : 1.0;
        d[0] = -sign * v.squaredNorm() / dt;
        d.tail(2) = sign * v / dt - 0.5 * gradV;
        return d;
    };
    spec.cost = [](double t0, const ConfigPoint&, double t1, const ConfigPoint&, const Vector& u) {
        return 0.5 * u.squaredNorm() * (t1 - t0);
    };
    return spec;
}

}  // namespace hovi
