#pragma once

// Discrete Poincare-Cartan forms on Q^{2k} x R^{km}, symplecticity defect of
// the one-step map, discrete Legendre transforms and momentum maps.

#include <algorithm>
#include <functional>
#include <utility>
#include <vector>

#include "hovi/core.hpp"
#include "hovi/del.hpp"
#include "hovi/derivatives.hpp"

namespace hovi {

enum class Side { minus, plus };

namespace detail {

inline void validate_point(const ConstrainedSystem& system, const ExtendedPoint& point)
{
    validate_system(system);
    validate_state(system, point);
}

/// D_j L~ on window w of the point (nodes w..w+k, multiplier lambda^w).
inline Vector augmented_partial(const ConstrainedSystem& system, const ExtendedPoint& point, int w, int j,
                                const DerivativeConfig& cfg)
{
    const int k = system.order;
    const WindowView window =
        WindowView(point.configs).subspan(static_cast<std::size_t>(w), static_cast<std::size_t>(k + 1));
    Vector out = partial(system.lagrangian, j, window, cfg);
    const Vector& lambda = point.multipliers[static_cast<std::size_t>(w)];
    for (int a = 0; a < system.multiplier_count(); ++a) {
        if (lambda[a] != 0.0) {
            out += lambda[a] * partial(system.constraints[static_cast<std::size_t>(a)], j, window, cfg);
        }
    }
    return out;
}

}  // namespace detail

/// Coefficients of Theta^- on dq_0..dq_{2k-1}; nonzero only on the first k nodes.
inline Vector theta_minus(const ConstrainedSystem& system, const ExtendedPoint& point, const DerivativeConfig& cfg = {})
{
    detail::validate_point(system, point);
    const int k = system.order;
    const int n = system.dim;
    Vector theta = Vector::Zero(2 * k * n);
    for (int i = 0; i < k; ++i) {
        for (int w = 0; w <= i; ++w) {
            theta.segment(i * n, n) -= detail::augmented_partial(system, point, w, i - w + 1, cfg);
        }
    }
    return theta;
}

/// Coefficients of Theta^+ on dq_0..dq_{2k-1}; nonzero only on the last k nodes.
inline Vector theta_plus(const ConstrainedSystem& system, const ExtendedPoint& point, const DerivativeConfig& cfg = {})
{
    detail::validate_point(system, point);
    const int k = system.order;
    const int n = system.dim;
    Vector theta = Vector::Zero(2 * k * n);
    for (int i = k; i < 2 * k; ++i) {
        for (int w = std::max(0, i - k); w <= k - 1; ++w) {
            theta.segment(i * n, n) += detail::augmented_partial(system, point, w, i - w + 1, cfg);
        }
    }
    return theta;
}

/// Flattens a point as (q_0..q_{2k-1}, lambda^0..lambda^{k-1}).
inline Vector flatten(const ExtendedPoint& point)
{
    Eigen::Index size = 0;
    for (const auto& q : point.configs) {
        size += q.size();
    }
    for (const auto& l : point.multipliers) {
        size += l.size();
    }
    Vector z(size);
    Eigen::Index at = 0;
    for (const auto& q : point.configs) {
        z.segment(at, q.size()) = q;
        at += q.size();
    }
    for (const auto& l : point.multipliers) {
        z.segment(at, l.size()) = l;
        at += l.size();
    }
    return z;
}

inline ExtendedPoint unflatten(const ConstrainedSystem& system, const Vector& z)
{
    const int k = system.order;
    const int n = system.dim;
    const int m = system.multiplier_count();
    if (z.size() != 2 * k * n + k * m) {
        throw InvalidArgument("flat point has the wrong length");
    }
    ExtendedPoint p;
    for (int i = 0; i < 2 * k; ++i) {
        p.configs.emplace_back(z.segment(i * n, n));
    }
    for (int w = 0; w < k; ++w) {
        p.multipliers.emplace_back(z.segment(2 * k * n + w * m, m));
    }
    return p;
}

/**
 * Omega = -d Theta over all 2kn + km coordinates, by central differences of
 * the Theta coefficients, antisymmetrized. Theta has no dlambda component.
 */
inline Matrix omega_matrix(const ConstrainedSystem& system, const ExtendedPoint& point, Side side = Side::minus,
                           const DerivativeConfig& cfg = {})
{
    detail::validate_point(system, point);
    const Vector z0 = flatten(point);
    const Eigen::Index size = z0.size();
    const Eigen::Index qsize = 2 * system.order * system.dim;
    auto theta = [&](const Vector& z) {
        const auto p = unflatten(system, z);
        return side == Side::minus ? theta_minus(system, p, cfg) : theta_plus(system, p, cfg);
    };
    // D(a, b) = d theta_b / d z_a
    Matrix D = Matrix::Zero(size, size);
    Vector z = z0;
    for (Eigen::Index a = 0; a < size; ++a) {
        const double s = detail::relative_step(z0[a], cfg.fd_step);
        z[a] = z0[a] + s;
        const double up = z[a];
        const Vector tp = theta(z);
        z[a] = z0[a] - s;
        const double down = z[a];
        const Vector tm = theta(z);
        z[a] = z0[a];
        D.row(a).head(qsize) = ((tp - tm) / (up - down)).transpose();
    }
    Matrix omega = -(D - D.transpose());
    detail::require_finite(omega, "omega");
    return omega;
}

// ---------------------------------------------------------------------------
// Symplecticity

struct SymplecticOptions {
    /// Relative central-difference step for the Jacobian of the step map.
    double map_step = 1e-5;
    SolverOptions solver;
};

struct SymplecticReport {
    double defect_norm = 0.0;
    /// defect_norm divided by the Frobenius norm of the (restricted) Omega.
    double relative_defect = 0.0;
    bool restricted = false;
    /// Dimension of the tangent space the defect was evaluated on.
    int tangent_dimension = 0;
};

/**
 * Rows: gradients of the constraints that define the state manifold, over
 * the flat coordinates. These are Phi on windows 0..k-1 and, when the system
 * has distinct closing constraints, those on the same windows.
 */
inline Matrix state_constraint_jacobian(const ConstrainedSystem& system, const ExtendedPoint& point,
                                        const DerivativeConfig& cfg = {})
{
    const int k = system.order;
    const int n = system.dim;
    const int m = system.multiplier_count();
    const bool closing = !system.closing_constraints.empty();
    const int rows = (closing ? 2 : 1) * k * m;
    Matrix C = Matrix::Zero(rows, 2 * k * n + k * m);
    int r = 0;
    for (const auto* set : {&system.constraints, &system.closing_constraints}) {
        if (set->empty()) {
            continue;
        }
        for (int w = 0; w < k; ++w) {
            const WindowView window =
                WindowView(point.configs).subspan(static_cast<std::size_t>(w), static_cast<std::size_t>(k + 1));
            for (const auto& phi : *set) {
                C.row(r).segment(w * n, (k + 1) * n) = gradient(phi, window, cfg).transpose();
                ++r;
            }
        }
    }
    return C;
}

/// Orthonormal basis of ker C from a column-pivoted QR of C^T.
inline Matrix kernel_basis(const Matrix& C)
{
    const Eigen::Index size = C.cols();
    if (C.rows() == 0) {
        return Matrix::Identity(size, size);
    }
    Eigen::ColPivHouseholderQR<Matrix> qr(C.transpose());
    const Eigen::Index rank = qr.rank();
    const Matrix Q = qr.householderQ() * Matrix::Identity(size, size);
    return Q.rightCols(size - rank);
}

/// Jacobian of the one-step map in flat coordinates, by central differences.
inline Matrix step_map_jacobian(const ConstrainedSystem& system, const ExtendedPoint& point,
                                const SymplecticOptions& opts = {})
{
    const Vector z0 = flatten(point);
    const ConfigPoint guess = step(system, point, opts.solver).state.configs.back();
    Matrix A(z0.size(), z0.size());
    Vector z = z0;
    for (Eigen::Index a = 0; a < z0.size(); ++a) {
        const double s = detail::relative_step(z0[a], opts.map_step);
        z[a] = z0[a] + s;
        const double up = z[a];
        const Vector fp = flatten(step(system, unflatten(system, z), opts.solver, guess).state);
        z[a] = z0[a] - s;
        const double down = z[a];
        const Vector fm = flatten(step(system, unflatten(system, z), opts.solver, guess).state);
        z[a] = z0[a];
        A.col(a) = (fp - fm) / (up - down);
    }
    return A;
}

/**
 * Compares Omega at the state with the pullback of Omega at step(state). With
 * constraints the comparison is restricted to the tangent space of the state
 * manifold and expressed in an orthonormal kernel basis.
 */
inline SymplecticReport check_symplecticity(const ConstrainedSystem& system, const StepState& state,
                                            const SymplecticOptions& opts = {})
{
    detail::validate_point(system, state);
    const auto next = step(system, state, opts.solver).state;
    const Matrix A = step_map_jacobian(system, state, opts);
    const Matrix omega = omega_matrix(system, state, Side::minus, opts.solver.deriv);
    const Matrix omega_next = omega_matrix(system, next, Side::minus, opts.solver.deriv);

    SymplecticReport report;
    report.restricted = system.multiplier_count() > 0;
    Matrix B = report.restricted ? kernel_basis(state_constraint_jacobian(system, state, opts.solver.deriv))
                                 : Matrix::Identity(A.cols(), A.cols());
    const Matrix AB = A * B;
    const Matrix base = B.transpose() * omega * B;
    const Matrix pulled = AB.transpose() * omega_next * AB;
    report.tangent_dimension = static_cast<int>(B.cols());
    report.defect_norm = (pulled - base).norm();
    const double scale = base.norm();
    report.relative_defect = scale > 0.0 ? report.defect_norm / scale : report.defect_norm;
    return report;
}

// ---------------------------------------------------------------------------
// Legendre transforms (k = 1)

struct CotangentPoint {
    ConfigPoint q;
    Vector p;
};

inline void require_first_order(const ConstrainedSystem& system)
{
    validate_system(system);
    if (system.order != 1) {
        throw InvalidArgument("discrete Legendre transforms need a first-order system");
    }
}

/// (q_0, -D_1 L_d(q_0, q_1))
inline CotangentPoint legendre_minus(const ConstrainedSystem& system, const ConfigPoint& q0, const ConfigPoint& q1,
                                     const DerivativeConfig& cfg = {})
{
    require_first_order(system);
    const std::vector<ConfigPoint> w{q0, q1};
    return {q0, -partial(system.lagrangian, 1, w, cfg)};
}

/// (q_1, D_2 L_d(q_0, q_1))
inline CotangentPoint legendre_plus(const ConstrainedSystem& system, const ConfigPoint& q0, const ConfigPoint& q1,
                                    const DerivativeConfig& cfg = {})
{
    require_first_order(system);
    const std::vector<ConfigPoint> w{q0, q1};
    return {q1, partial(system.lagrangian, 2, w, cfg)};
}

// ---------------------------------------------------------------------------
// Momentum maps

/// Infinitesimal generators xi_a(q), a = 1..d, of a group action on R^n.
struct GroupAction {
    std::vector<std::function<Vector(const ConfigPoint&)>> generators;

    [[nodiscard]] int dimension() const noexcept { return static_cast<int>(generators.size()); }

    /// SO(3) on R^3: xi_a(q) = e_a x q.
    static GroupAction rotations()
    {
        GroupAction g;
        for (int a = 0; a < 3; ++a) {
            g.generators.emplace_back([a](const ConfigPoint& q) -> Vector {
                if (q.size() != 3) {
                    throw InvalidArgument("rotation action needs points in R^3");
                }
                const Eigen::Vector3d e = Eigen::Vector3d::Unit(a);
                return e.cross(Eigen::Vector3d(q));
            });
        }
        return g;
    }

    /// R^n acting by translation: xi_a(q) = e_a.
    static GroupAction translations(int n)
    {
        GroupAction g;
        for (int a = 0; a < n; ++a) {
            g.generators.emplace_back([a, n](const ConfigPoint& q) -> Vector {
                if (q.size() != n) {
                    throw InvalidArgument("translation action dimension mismatch");
                }
                return Vector::Unit(n, a);
            });
        }
        return g;
    }
};

/// J^±_a = sum_i <Theta^±_i, xi_a(q_i)>
inline Vector momentum(const ConstrainedSystem& system, const GroupAction& action, const ExtendedPoint& point,
                       Side side = Side::plus, const DerivativeConfig& cfg = {})
{
    const Vector theta = side == Side::minus ? theta_minus(system, point, cfg) : theta_plus(system, point, cfg);
    const int n = system.dim;
    Vector J = Vector::Zero(action.dimension());
    for (int a = 0; a < action.dimension(); ++a) {
        for (std::size_t i = 0; i < point.configs.size(); ++i) {
            const Vector xi = action.generators[static_cast<std::size_t>(a)](point.configs[i]);
            if (xi.size() != n) {
                throw InvalidArgument("generator returned a vector of the wrong length");
            }
            J[a] += theta.segment(static_cast<Eigen::Index>(i) * n, n).dot(xi);
        }
    }
    return J;
}

/// Max over consecutive states of |J^+(next) - J^+(current)|_inf.
inline double check_momentum_conservation(const ConstrainedSystem& system, const GroupAction& action,
                                          const std::vector<StepState>& trajectory, const DerivativeConfig& cfg = {})
{
    double drift = 0.0;
    for (std::size_t t = 1; t < trajectory.size(); ++t) {
        const Vector a = momentum(system, action, trajectory[t - 1], Side::plus, cfg);
        const Vector b = momentum(system, action, trajectory[t], Side::plus, cfg);
        drift = std::max(drift, (b - a).lpNorm<Eigen::Infinity>());
    }
    return drift;
}

}  // namespace hovi
