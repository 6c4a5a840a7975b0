#pragma once

// Constrained higher-order discrete Euler-Lagrange equations: residual
// assembly, the boundary-value solver and the one-step map.

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "hovi/core.hpp"
#include "hovi/derivatives.hpp"
#include "hovi/newton.hpp"

namespace hovi {

/// Fixed head q_0..q_{k-1} and tail q_{N-k+1}..q_N.
struct BoundaryData {
    std::vector<ConfigPoint> head;
    std::vector<ConfigPoint> tail;
    int N = 0;
};

/// A point of Q^{2k} x R^{km}: 2k consecutive nodes and the k multipliers of
/// the windows starting at those nodes' first k positions.
struct StepState {
    std::vector<ConfigPoint> configs;
    std::vector<Vector> multipliers;
};
using ExtendedPoint = StepState;

struct PathSolution {
    DiscretePath path;
    MultiplierSequence multipliers;
    SolveReport report;
};

struct StepResult {
    StepState state;
    SolveReport report;
};

// ---------------------------------------------------------------------------
// Residuals

namespace detail {

/// Gradient of the augmented Lagrangian of one window.
inline Vector augmented_gradient(const ConstrainedSystem& system, WindowView window, const Vector& lambda,
                                 const DerivativeConfig& cfg)
{
    Vector g = gradient(system.lagrangian, window, cfg);
    for (int a = 0; a < system.multiplier_count(); ++a) {
        if (lambda[a] != 0.0) {
            g += lambda[a] * gradient(system.constraints[static_cast<std::size_t>(a)], window, cfg);
        }
    }
    return g;
}

}  // namespace detail

/// Constrained discrete Euler-Lagrange residual at interior node p (k <= p <= N-k).
inline Vector del_residual(const ConstrainedSystem& system, const DiscretePath& path,
                           const MultiplierSequence& multipliers, int p, const DerivativeConfig& cfg = {})
{
    validate_system(system);
    validate_path(system, path);
    validate_multipliers(system, path, multipliers);
    const int k = system.order;
    const int N = path.last_index();
    if (p < k || p > N - k) {
        throw InvalidArgument("node " + std::to_string(p) + " is not interior (" + std::to_string(k) + ".." +
                              std::to_string(N - k) + ")");
    }
    Vector r = Vector::Zero(system.dim);
    for (int j = 1; j <= k + 1; ++j) {
        const int w = p - j + 1;
        const auto window = path.window(w, k);
        const Vector& lambda = multipliers.lambdas[static_cast<std::size_t>(w)];
        r += partial(system.lagrangian, j, window, cfg);
        for (int a = 0; a < system.multiplier_count(); ++a) {
            r += lambda[a] * partial(system.constraints[static_cast<std::size_t>(a)], j, window, cfg);
        }
    }
    return r;
}

/// (Phi^1_d, ..., Phi^m_d) on window i.
inline Vector constraint_residual(const ConstrainedSystem& system, const DiscretePath& path, int i)
{
    validate_system(system);
    const int k = system.order;
    if (i < 0 || i > path.last_index() - k) {
        throw InvalidArgument("window index " + std::to_string(i) + " out of range");
    }
    const auto window = path.window(i, k);
    Vector out(system.multiplier_count());
    for (int a = 0; a < system.multiplier_count(); ++a) {
        out[a] = evaluate(system.constraints[static_cast<std::size_t>(a)], window);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Path solver

namespace detail {

/**
 * Index bookkeeping for the stacked Newton system of a path problem.
 *
 * Unknowns are the free node coordinates (node-major) followed by the
 * multipliers of active constraint windows (window-major). A constraint on
 * window w is active when it reads a node that has a free coordinate; its
 * multiplier then enters the Euler-Lagrange row of that node, so rows and
 * unknowns always match.
 */
class PathAssembler {
public:
    PathAssembler(const ConstrainedSystem& system, int N, std::vector<bool> free_coords, DerivativeConfig cfg)
        : system_(system), N_(N), k_(system.order), n_(system.dim), m_(system.multiplier_count()),
          free_(std::move(free_coords)), cfg_(cfg)
    {
        q_index_.assign(free_.size(), -1);
        node_free_.assign(static_cast<std::size_t>(N_ + 1), false);
        int next = 0;
        for (int p = 0; p <= N_; ++p) {
            for (int c = 0; c < n_; ++c) {
                if (free_[flat(p, c)]) {
                    if (p < k_ || p > N_ - k_) {
                        throw InvalidArgument("boundary node " + std::to_string(p) + " cannot be free");
                    }
                    q_index_[flat(p, c)] = next++;
                    node_free_[static_cast<std::size_t>(p)] = true;
                }
            }
        }
        q_unknowns_ = next;
        const int windows = N_ - k_ + 1;
        lambda_index_.assign(static_cast<std::size_t>(windows * m_), -1);
        for (int w = 0; w < windows; ++w) {
            for (int a = 0; a < m_; ++a) {
                const auto& phi = system_.constraints[static_cast<std::size_t>(a)];
                bool active = false;
                for (int j = 1; j <= k_ + 1; ++j) {
                    active = active || (phi.reads(j) && node_free_[static_cast<std::size_t>(w + j - 1)]);
                }
                if (active) {
                    lambda_index_[static_cast<std::size_t>(w * m_ + a)] = next++;
                }
            }
        }
        unknowns_ = next;
    }

    [[nodiscard]] int unknowns() const noexcept { return unknowns_; }

    [[nodiscard]] Vector pack(const DiscretePath& path, const MultiplierSequence& mult) const
    {
        Vector x(unknowns_);
        for (int p = 0; p <= N_; ++p) {
            for (int c = 0; c < n_; ++c) {
                if (const int idx = q_index_[flat(p, c)]; idx >= 0) {
                    x[idx] = path.nodes[static_cast<std::size_t>(p)][c];
                }
            }
        }
        for (std::size_t s = 0; s < lambda_index_.size(); ++s) {
            if (const int idx = lambda_index_[s]; idx >= 0) {
                x[idx] = mult.lambdas[s / static_cast<std::size_t>(m_)][static_cast<Eigen::Index>(s % m_)];
            }
        }
        return x;
    }

    /// Writes unknowns into path/multipliers; inactive multipliers are zeroed.
    void unpack(const Vector& x, DiscretePath& path, MultiplierSequence& mult) const
    {
        for (int p = 0; p <= N_; ++p) {
            for (int c = 0; c < n_; ++c) {
                if (const int idx = q_index_[flat(p, c)]; idx >= 0) {
                    path.nodes[static_cast<std::size_t>(p)][c] = x[idx];
                }
            }
        }
        for (std::size_t s = 0; s < lambda_index_.size(); ++s) {
            const int idx = lambda_index_[s];
            mult.lambdas[s / static_cast<std::size_t>(m_)][static_cast<Eigen::Index>(s % m_)] =
                idx >= 0 ? x[idx] : 0.0;
        }
    }

    [[nodiscard]] Vector residual(const DiscretePath& path, const MultiplierSequence& mult) const
    {
        Vector r = Vector::Zero(unknowns_);
        const int windows = N_ - k_ + 1;
        for (int w = 0; w < windows; ++w) {
            if (!window_touches_free(w)) {
                continue;
            }
            const auto window = path.window(w, k_);
            const Vector& lambda = mult.lambdas[static_cast<std::size_t>(w)];
            const Vector g = augmented_gradient(system_, window, lambda, cfg_);
            for (int j = 1; j <= k_ + 1; ++j) {
                for (int c = 0; c < n_; ++c) {
                    if (const int row = q_index_[flat(w + j - 1, c)]; row >= 0) {
                        r[row] += g[(j - 1) * n_ + c];
                    }
                }
            }
            for (int a = 0; a < m_; ++a) {
                if (const int row = lambda_index_[static_cast<std::size_t>(w * m_ + a)]; row >= 0) {
                    r[row] = evaluate(system_.constraints[static_cast<std::size_t>(a)], window);
                }
            }
        }
        return r;
    }

    [[nodiscard]] Matrix jacobian(const DiscretePath& path, const MultiplierSequence& mult) const
    {
        Matrix J = Matrix::Zero(unknowns_, unknowns_);
        const int windows = N_ - k_ + 1;
        const int size = (k_ + 1) * n_;
        for (int w = 0; w < windows; ++w) {
            if (!window_touches_free(w)) {
                continue;
            }
            const auto window = path.window(w, k_);
            const Vector& lambda = mult.lambdas[static_cast<std::size_t>(w)];
            Matrix H = hessian(system_.lagrangian, window, cfg_);
            std::vector<Vector> grads(static_cast<std::size_t>(m_));
            for (int a = 0; a < m_; ++a) {
                const auto& phi = system_.constraints[static_cast<std::size_t>(a)];
                if (lambda[a] != 0.0) {
                    H += lambda[a] * hessian(phi, window, cfg_);
                }
                grads[static_cast<std::size_t>(a)] = gradient(phi, window, cfg_);
            }
            // Map local window coordinates to unknown indices.
            std::vector<int> local(static_cast<std::size_t>(size));
            for (int z = 0; z < size; ++z) {
                local[static_cast<std::size_t>(z)] = q_index_[flat(w + z / n_, z % n_)];
            }
            for (int a = 0; a < size; ++a) {
                const int row = local[static_cast<std::size_t>(a)];
                if (row < 0) {
                    continue;
                }
                for (int b = 0; b < size; ++b) {
                    if (const int col = local[static_cast<std::size_t>(b)]; col >= 0) {
                        J(row, col) += H(a, b);
                    }
                }
            }
            for (int a = 0; a < m_; ++a) {
                const int lam = lambda_index_[static_cast<std::size_t>(w * m_ + a)];
                if (lam < 0) {
                    continue;
                }
                const Vector& g = grads[static_cast<std::size_t>(a)];
                for (int z = 0; z < size; ++z) {
                    if (const int q = local[static_cast<std::size_t>(z)]; q >= 0) {
                        J(q, lam) += g[z];
                        J(lam, q) += g[z];
                    }
                }
            }
        }
        return J;
    }

    /// Largest |Phi| over constraint windows that read no free node.
    [[nodiscard]] double inactive_violation(const DiscretePath& path) const
    {
        double worst = 0.0;
        const int windows = N_ - k_ + 1;
        for (int w = 0; w < windows; ++w) {
            for (int a = 0; a < m_; ++a) {
                if (lambda_index_[static_cast<std::size_t>(w * m_ + a)] < 0) {
                    worst = std::max(worst, std::abs(evaluate(system_.constraints[static_cast<std::size_t>(a)],
                                                              path.window(w, k_))));
                }
            }
        }
        return worst;
    }

private:
    [[nodiscard]] std::size_t flat(int p, int c) const
    {
        return static_cast<std::size_t>(p) * static_cast<std::size_t>(n_) + static_cast<std::size_t>(c);
    }

    [[nodiscard]] bool window_touches_free(int w) const
    {
        for (int j = 0; j <= k_; ++j) {
            if (node_free_[static_cast<std::size_t>(w + j)]) {
                return true;
            }
        }
        return false;
    }

    const ConstrainedSystem& system_;
    int N_;
    int k_;
    int n_;
    int m_;
    std::vector<bool> free_;
    DerivativeConfig cfg_;
    std::vector<int> q_index_;
    std::vector<bool> node_free_;
    std::vector<int> lambda_index_;
    int q_unknowns_ = 0;
    int unknowns_ = 0;
};

}  // namespace detail

/// Free-coordinate mask with every coordinate of nodes k..N-k free.
inline std::vector<bool> interior_free_mask(int N, int order, int dim)
{
    std::vector<bool> mask(static_cast<std::size_t>((N + 1) * dim), false);
    for (int p = order; p <= N - order; ++p) {
        for (int c = 0; c < dim; ++c) {
            mask[static_cast<std::size_t>(p * dim + c)] = true;
        }
    }
    return mask;
}

/**
 * Solves the constrained discrete Euler-Lagrange equations for the free
 * coordinates in `free_coords` and the multipliers of active windows; every
 * other coordinate keeps its value from `initial`.
 *
 * Rows of fixed coordinates are dropped together with the coordinates. Throws
 * NonConvergenceError (with the last iterate) or RegularityError.
 */
inline PathSolution solve_path(const ConstrainedSystem& system, DiscretePath initial,
                               MultiplierSequence initial_multipliers, const std::vector<bool>& free_coords,
                               const SolverOptions& opts = {})
{
    validate_system(system);
    validate_path(system, initial);
    validate_multipliers(system, initial, initial_multipliers);
    opts.deriv.validate();
    const int N = initial.last_index();
    if (free_coords.size() != static_cast<std::size_t>((N + 1) * system.dim)) {
        throw InvalidArgument("free-coordinate mask has the wrong length");
    }

    detail::PathAssembler assembler(system, N, free_coords, opts.deriv);
    DiscretePath path = std::move(initial);
    MultiplierSequence mult = std::move(initial_multipliers);
    assembler.unpack(assembler.pack(path, mult), path, mult);

    const double fixed_violation = assembler.inactive_violation(path);
    if (fixed_violation > opts.tol) {
        SolveReport report;
        report.final_residual_norm = fixed_violation;
        throw NonConvergenceError("fixed nodes violate the constraints (|Phi| = " + std::to_string(fixed_violation) +
                                      ")",
                                  std::move(report), std::move(path), std::move(mult));
    }

    DiscretePath work = path;
    MultiplierSequence work_mult = mult;
    auto residual = [&](const Vector& x) {
        assembler.unpack(x, work, work_mult);
        return assembler.residual(work, work_mult);
    };
    auto jacobian = [&](const Vector& x) {
        assembler.unpack(x, work, work_mult);
        return assembler.jacobian(work, work_mult);
    };

    auto outcome = detail::newton(residual, jacobian, assembler.pack(path, mult), opts);
    if (auto* fail = std::get_if<detail::NewtonFailure>(&outcome)) {
        assembler.unpack(fail->x, path, mult);
        fail->report.final_residual_norm = std::max(fail->report.final_residual_norm, fixed_violation);
        throw NonConvergenceError("path solve did not converge: " + fail->reason, std::move(fail->report),
                                  std::move(path), std::move(mult));
    }
    auto& done = std::get<detail::NewtonResult>(outcome);
    assembler.unpack(done.x, path, mult);
    done.report.final_residual_norm = std::max(done.report.final_residual_norm, fixed_violation);
    return PathSolution{std::move(path), std::move(mult), std::move(done.report)};
}

inline void validate_boundary(const ConstrainedSystem& system, const BoundaryData& boundary)
{
    const int k = system.order;
    if (static_cast<int>(boundary.head.size()) != k || static_cast<int>(boundary.tail.size()) != k) {
        throw InvalidArgument("boundary data needs k head and k tail points");
    }
    if (boundary.N <= 2 * k) {
        throw InvalidArgument("boundary problem needs N > 2k");
    }
    for (const auto* part : {&boundary.head, &boundary.tail}) {
        for (const auto& q : *part) {
            if (q.size() != system.dim || !q.allFinite()) {
                throw InvalidArgument("boundary point has the wrong dimension or non-finite entries");
            }
        }
    }
}

/// Boundary nodes in place, interior nodes interpolated linearly between q_{k-1} and q_{N-k+1}.
inline DiscretePath linear_initial_path(const ConstrainedSystem& system, const BoundaryData& boundary)
{
    validate_boundary(system, boundary);
    const int k = system.order;
    const int N = boundary.N;
    DiscretePath path;
    path.nodes.resize(static_cast<std::size_t>(N + 1));
    for (int i = 0; i < k; ++i) {
        path.nodes[static_cast<std::size_t>(i)] = boundary.head[static_cast<std::size_t>(i)];
        path.nodes[static_cast<std::size_t>(N - k + 1 + i)] = boundary.tail[static_cast<std::size_t>(i)];
    }
    const ConfigPoint& a = boundary.head.back();
    const ConfigPoint& b = boundary.tail.front();
    const int span = (N - k + 1) - (k - 1);
    for (int p = k; p <= N - k; ++p) {
        const double s = static_cast<double>(p - (k - 1)) / span;
        path.nodes[static_cast<std::size_t>(p)] = (1.0 - s) * a + s * b;
    }
    return path;
}

struct PathGuess {
    DiscretePath path;
    MultiplierSequence multipliers;
};

/// Boundary-value solve with every interior node free.
inline PathSolution solve_bvp(const ConstrainedSystem& system, const BoundaryData& boundary,
                              const SolverOptions& opts = {}, const std::optional<PathGuess>& guess = std::nullopt)
{
    validate_system(system);
    validate_boundary(system, boundary);
    const int k = system.order;
    const int N = boundary.N;
    DiscretePath path = linear_initial_path(system, boundary);
    MultiplierSequence mult = MultiplierSequence::zeros(N - k + 1, system.multiplier_count());
    if (guess) {
        if (guess->path.last_index() != N) {
            throw InvalidArgument("guess path length does not match N");
        }
        for (int p = k; p <= N - k; ++p) {
            path.nodes[static_cast<std::size_t>(p)] = guess->path.nodes[static_cast<std::size_t>(p)];
        }
        if (!guess->multipliers.lambdas.empty()) {
            mult = guess->multipliers;
        }
    }
    return solve_path(system, std::move(path), std::move(mult), interior_free_mask(N, k, system.dim), opts);
}

// ---------------------------------------------------------------------------
// Regularity matrices and the one-step map

/**
 * Bordered matrix [[D_(1,k+1) L~, D_{k+1} Phi], [(D_1 Phi)^T, 0]] of size
 * n+m, where D_(1,k+1) L~ has entries d^2 L~ / dq_1^a dq_{k+1}^b.
 */
inline Matrix regularity_matrix(const ConstrainedSystem& system, WindowView window, const Vector& lambda,
                                const DerivativeConfig& cfg = {})
{
    validate_system(system);
    const int k = system.order;
    const int n = system.dim;
    const int m = system.multiplier_count();
    if (lambda.size() != m) {
        throw InvalidArgument("multiplier length does not match the constraint count");
    }
    Matrix R = Matrix::Zero(n + m, n + m);
    R.topLeftCorner(n, n) = cross_partial(system.lagrangian, 1, k + 1, window, cfg);
    for (int a = 0; a < m; ++a) {
        const auto& phi = system.constraints[static_cast<std::size_t>(a)];
        R.topLeftCorner(n, n) += lambda[a] * cross_partial(phi, 1, k + 1, window, cfg);
        R.block(0, n + a, n, 1) = partial(phi, k + 1, window, cfg);
        R.block(n + a, 0, 1, n) = partial(phi, 1, window, cfg).transpose();
    }
    return R;
}

/**
 * Linearization of the one-step equations with respect to (q_new, lambda_new):
 * [[D_(1,k+1) L~, D_1 Phi], [(D_{k+1} Psi)^T, 0]] where Psi are the step's
 * closing constraints.
 */
inline Matrix step_jacobian(const ConstrainedSystem& system, WindowView window, const Vector& lambda,
                            const DerivativeConfig& cfg = {})
{
    const int k = system.order;
    const int n = system.dim;
    const int m = system.multiplier_count();
    Matrix J = Matrix::Zero(n + m, n + m);
    J.topLeftCorner(n, n) = cross_partial(system.lagrangian, 1, k + 1, window, cfg);
    const auto& closing = system.step_constraints();
    for (int a = 0; a < m; ++a) {
        const auto& phi = system.constraints[static_cast<std::size_t>(a)];
        if (lambda[a] != 0.0) {
            J.topLeftCorner(n, n) += lambda[a] * cross_partial(phi, 1, k + 1, window, cfg);
        }
        J.block(0, n + a, n, 1) = partial(phi, 1, window, cfg);
        J.block(n + a, 0, 1, n) = partial(closing[static_cast<std::size_t>(a)], k + 1, window, cfg).transpose();
    }
    return J;
}

inline void validate_state(const ConstrainedSystem& system, const StepState& state)
{
    const int k = system.order;
    if (static_cast<int>(state.configs.size()) != 2 * k || static_cast<int>(state.multipliers.size()) != k) {
        throw InvalidArgument("step state needs 2k configurations and k multipliers");
    }
    for (const auto& q : state.configs) {
        if (q.size() != system.dim || !q.allFinite()) {
            throw InvalidArgument("step state configuration has the wrong dimension or non-finite entries");
        }
    }
    for (const auto& l : state.multipliers) {
        if (l.size() != system.multiplier_count() || !l.allFinite()) {
            throw InvalidArgument("step state multiplier has the wrong length or non-finite entries");
        }
    }
}

/**
 * One application of the discrete flow: given (q_i..q_{i+2k-1}, lambda^i..
 * lambda^{i+k-1}), solves the Euler-Lagrange equation at node i+k together
 * with the closing constraints on window (q_{i+k}..q_{i+2k}) for
 * (q_{i+2k}, lambda^{i+k}) and returns the shifted state.
 */
inline StepResult step(const ConstrainedSystem& system, const StepState& state, const SolverOptions& opts = {},
                       const std::optional<ConfigPoint>& guess = std::nullopt)
{
    validate_system(system);
    validate_state(system, state);
    const int k = system.order;
    const int n = system.dim;
    const int m = system.multiplier_count();
    const auto& closing = system.step_constraints();

    std::vector<ConfigPoint> nodes = state.configs;
    nodes.push_back(guess ? *guess : ConfigPoint(2.0 * state.configs[2 * k - 1] - state.configs[2 * k - 2]));
    std::vector<Vector> lambdas = state.multipliers;
    lambdas.push_back(m > 0 ? state.multipliers.back() : Vector(0));

    auto load = [&](const Vector& x) {
        nodes[static_cast<std::size_t>(2 * k)] = x.head(n);
        lambdas[static_cast<std::size_t>(k)] = x.tail(m);
    };
    auto residual = [&](const Vector& x) {
        load(x);
        Vector r(n + m);
        Vector del = Vector::Zero(n);
        for (int j = 1; j <= k + 1; ++j) {
            const int w = k - j + 1;
            const WindowView window = WindowView(nodes).subspan(static_cast<std::size_t>(w),
                                                                static_cast<std::size_t>(k + 1));
            del += partial(system.lagrangian, j, window, opts.deriv);
            for (int a = 0; a < m; ++a) {
                del += lambdas[static_cast<std::size_t>(w)][a] *
                       partial(system.constraints[static_cast<std::size_t>(a)], j, window, opts.deriv);
            }
        }
        r.head(n) = del;
        const WindowView newest = WindowView(nodes).subspan(static_cast<std::size_t>(k));
        for (int a = 0; a < m; ++a) {
            r[n + a] = evaluate(closing[static_cast<std::size_t>(a)], newest);
        }
        return r;
    };
    auto jacobian = [&](const Vector& x) {
        load(x);
        return step_jacobian(system, WindowView(nodes).subspan(static_cast<std::size_t>(k)),
                             lambdas[static_cast<std::size_t>(k)], opts.deriv);
    };

    Vector x0(n + m);
    x0.head(n) = nodes.back();
    x0.tail(m) = lambdas.back();
    auto outcome = detail::newton(residual, jacobian, x0, opts);

    auto shifted = [&](const Vector& x) {
        load(x);
        StepState next;
        next.configs.assign(nodes.begin() + 1, nodes.end());
        next.multipliers.assign(lambdas.begin() + 1, lambdas.end());
        return next;
    };
    if (auto* fail = std::get_if<detail::NewtonFailure>(&outcome)) {
        load(fail->x);
        throw NonConvergenceError("step did not converge: " + fail->reason, std::move(fail->report),
                                  DiscretePath{nodes}, MultiplierSequence{lambdas});
    }
    auto& done = std::get<detail::NewtonResult>(outcome);
    return StepResult{shifted(done.x), std::move(done.report)};
}

/// State (q_i..q_{i+2k-1}, lambda^i..lambda^{i+k-1}) read from a path.
inline StepState state_at(const ConstrainedSystem& system, const DiscretePath& path,
                          const MultiplierSequence& multipliers, int i)
{
    const int k = system.order;
    if (i < 0 || i + 2 * k - 1 > path.last_index() || i + k - 1 >= static_cast<int>(multipliers.lambdas.size())) {
        throw InvalidArgument("state index out of range");
    }
    StepState s;
    s.configs.assign(path.nodes.begin() + i, path.nodes.begin() + i + 2 * k);
    s.multipliers.assign(multipliers.lambdas.begin() + i, multipliers.lambdas.begin() + i + k);
    return s;
}

/// Repeated steps; returns the visited states including the initial one.
inline std::vector<StepState> integrate(const ConstrainedSystem& system, StepState state, int steps,
                                        const SolverOptions& opts = {})
{
    std::vector<StepState> out;
    out.reserve(static_cast<std::size_t>(steps + 1));
    out.push_back(state);
    for (int s = 0; s < steps; ++s) {
        state = step(system, state, opts).state;
        out.push_back(state);
    }
    return out;
}

}  // namespace hovi
