#pragma once

// Damped Newton iteration on a square nonlinear system with dense LU.

#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <variant>
#include <vector>

#include "hovi/core.hpp"
#include "hovi/derivatives.hpp"

namespace hovi {

struct SolverOptions {
    /// Max-norm tolerance on the full stacked residual.
    double tol = 1e-10;
    int max_iter = 50;
    /// Backtracking halvings per Newton step.
    int max_halvings = 30;
    /// Reciprocal condition estimate below which the Jacobian counts as singular.
    double singular_rcond = 1e-14;
    DerivativeConfig deriv;
};

struct SolveReport {
    int iterations = 0;
    double final_residual_norm = std::numeric_limits<double>::infinity();
    double jacobian_condition_estimate = 0.0;
    bool converged = false;
    /// Max-norm residual after each accepted iterate, starting with the initial guess.
    std::vector<double> residual_history;
};

/// The linearization is singular; the regularity hypothesis fails.
class RegularityError : public std::runtime_error {
public:
    RegularityError(const std::string& what, double condition_estimate)
        : std::runtime_error(what), condition_estimate_(condition_estimate)
    {
    }
    [[nodiscard]] double condition_estimate() const noexcept { return condition_estimate_; }

private:
    double condition_estimate_;
};

/// Newton did not reach the tolerance. Carries the last iterate.
class NonConvergenceError : public std::runtime_error {
public:
    NonConvergenceError(const std::string& what, SolveReport report, DiscretePath path,
                        MultiplierSequence multipliers)
        : std::runtime_error(what),
          report_(std::move(report)),
          path_(std::move(path)),
          multipliers_(std::move(multipliers))
    {
    }
    [[nodiscard]] const SolveReport& report() const noexcept { return report_; }
    [[nodiscard]] const DiscretePath& path() const noexcept { return path_; }
    [[nodiscard]] const MultiplierSequence& multipliers() const noexcept { return multipliers_; }

private:
    SolveReport report_;
    DiscretePath path_;
    MultiplierSequence multipliers_;
};

namespace detail {

struct LinearSolve {
    Vector solution;
    double condition_estimate;
};

/// Solves J dx = rhs by LU with partial pivoting; throws RegularityError if J is singular.
inline LinearSolve solve_dense(const Matrix& J, const Vector& rhs, double singular_rcond)
{
    if (J.rows() == 0) {
        return {Vector(0), 1.0};
    }
    Eigen::PartialPivLU<Matrix> lu(J);
    const Vector pivots = lu.matrixLU().diagonal();
    const double rcond = lu.rcond();
    const bool zero_pivot = (pivots.array().abs() == 0.0).any() || !pivots.allFinite();
    if (zero_pivot || !(rcond >= singular_rcond)) {
        const double cond = (zero_pivot || !(rcond > 0.0)) ? std::numeric_limits<double>::infinity() : 1.0 / rcond;
        throw RegularityError("singular Jacobian (condition estimate " + std::to_string(cond) + ")", cond);
    }
    Vector dx = lu.solve(rhs);
    if (!dx.allFinite()) {
        throw RegularityError("Newton correction is not finite", std::numeric_limits<double>::infinity());
    }
    return {std::move(dx), 1.0 / rcond};
}

struct NewtonResult {
    Vector x;
    SolveReport report;
};

struct NewtonFailure {
    Vector x;
    SolveReport report;
    std::string reason;
};

inline double max_norm(const Vector& r) { return r.size() == 0 ? 0.0 : r.lpNorm<Eigen::Infinity>(); }

/**
 * Damped Newton with backtracking on the residual 2-norm. On reaching the
 * tolerance one extra correction is tried and kept only if it lowers the
 * residual; this also guarantees the Jacobian is factorized at least once.
 *
 * Returns either a converged result or a failure record; regularity errors
 * propagate as exceptions.
 */
template <class Residual, class Jacobian>
std::variant<NewtonResult, NewtonFailure> newton(Residual&& residual, Jacobian&& jacobian, Vector x,
                                                 const SolverOptions& opts)
{
    SolveReport report;
    Vector r = residual(x);
    report.residual_history.push_back(max_norm(r));

    auto attempt = [&](const Vector& dx, Vector& x_out, Vector& r_out) {
        double t = 1.0;
        const double merit = r.norm();
        for (int h = 0; h <= opts.max_halvings; ++h, t *= 0.5) {
            Vector trial = x + t * dx;
            Vector rt;
            try {
                rt = residual(trial);
            } catch (const NumericError&) {
                continue;
            }
            if (rt.allFinite() && rt.norm() < merit) {
                x_out = std::move(trial);
                r_out = std::move(rt);
                return true;
            }
        }
        return false;
    };

    for (int iter = 0;; ++iter) {
        const double norm = max_norm(r);
        if (norm <= opts.tol) {
            if (x.size() > 0 && norm > 0.0) {
                const auto lin = solve_dense(jacobian(x), -r, opts.singular_rcond);
                report.jacobian_condition_estimate = lin.condition_estimate;
                Vector rp;
                Vector trial = x + lin.solution;
                try {
                    rp = residual(trial);
                    if (rp.allFinite() && rp.norm() < r.norm()) {
                        x = std::move(trial);
                        r = std::move(rp);
                        ++report.iterations;
                        report.residual_history.push_back(max_norm(r));
                    }
                } catch (const NumericError&) {
                }
            } else if (x.size() > 0) {
                report.jacobian_condition_estimate =
                    solve_dense(jacobian(x), Vector::Zero(x.size()), opts.singular_rcond).condition_estimate;
            }
            report.converged = true;
            report.final_residual_norm = max_norm(r);
            return NewtonResult{std::move(x), std::move(report)};
        }
        if (iter >= opts.max_iter) {
            report.final_residual_norm = norm;
            return NewtonFailure{std::move(x), std::move(report), "maximum iterations exceeded"};
        }
        const auto lin = solve_dense(jacobian(x), -r, opts.singular_rcond);
        report.jacobian_condition_estimate = lin.condition_estimate;
        Vector xn;
        Vector rn;
        if (!attempt(lin.solution, xn, rn)) {
            report.final_residual_norm = norm;
            return NewtonFailure{std::move(x), std::move(report), "line search stagnated"};
        }
        x = std::move(xn);
        r = std::move(rn);
        ++report.iterations;
        report.residual_history.push_back(max_norm(r));
    }
}

}  // namespace detail
}  // namespace hovi
