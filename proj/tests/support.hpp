#pragma once

// Shared test systems and finite-difference oracles.

#include <cmath>
#include <random>
#include <vector>

#include "hovi/del.hpp"

namespace hovi::fixtures {

/// ½|q_1 - q_0|² / h on R^n, analytic partials and hessian.
inline WindowFunction free_particle(double h, int n = 1)
{
    WindowFunction f;
    f.order = 1;
    f.dim = n;
    f.value = [h](WindowView w) { return 0.5 * (w[1] - w[0]).squaredNorm() / h; };
    f.partial = [h](WindowView w, int j) -> Vector {
        const Vector d = (w[1] - w[0]) / h;
        return j == 1 ? Vector(-d) : d;
    };
    f.hessian = [h, n](WindowView) {
        Matrix H(2 * n, 2 * n);
        const Matrix I = Matrix::Identity(n, n) / h;
        H << I, -I, -I, I;
        return H;
    };
    return f;
}

/// h/2 |(q_2 - 2q_1 + q_0)/h²|² on R^n, optionally without analytic derivatives.
inline WindowFunction cubic_spline_lagrangian(double h, int n = 1, bool analytic = true)
{
    WindowFunction f;
    f.order = 2;
    f.dim = n;
    const double s = 1.0 / (h * h * h);
    f.value = [s](WindowView w) { return 0.5 * s * (w[2] - 2.0 * w[1] + w[0]).squaredNorm(); };
    if (analytic) {
        f.partial = [s](WindowView w, int j) -> Vector {
            const double c[3] = {1.0, -2.0, 1.0};
            return c[j - 1] * s * (w[2] - 2.0 * w[1] + w[0]);
        };
        f.hessian = [s, n](WindowView) {
            const double c[3] = {1.0, -2.0, 1.0};
            Matrix H(3 * n, 3 * n);
            for (int a = 0; a < 3; ++a) {
                for (int b = 0; b < 3; ++b) {
                    H.block(a * n, b * n, n, n) = c[a] * c[b] * s * Matrix::Identity(n, n);
                }
            }
            return H;
        };
    }
    return f;
}

inline ConstrainedSystem unconstrained(WindowFunction lagrangian)
{
    ConstrainedSystem s;
    s.order = lagrangian.order;
    s.dim = lagrangian.dim;
    s.lagrangian = std::move(lagrangian);
    return s;
}

/// Random polynomial of total degree <= 3 in the stacked window coordinates, value only.
inline WindowFunction random_polynomial(int order, int dim, std::mt19937& rng, double scale = 1.0)
{
    std::uniform_real_distribution<double> coef(-scale, scale);
    const int size = (order + 1) * dim;
    struct Term {
        double c;
        int a, b, d;  // indices, -1 for absent
    };
    std::vector<Term> terms;
    std::uniform_int_distribution<int> idx(-1, size - 1);
    const int count = 3 + size;
    for (int t = 0; t < count; ++t) {
        terms.push_back({coef(rng), idx(rng), idx(rng), idx(rng)});
    }
    WindowFunction f;
    f.order = order;
    f.dim = dim;
    f.value = [terms, dim](WindowView w) {
        auto x = [&](int i) { return i < 0 ? 1.0 : w[static_cast<std::size_t>(i / dim)][i % dim]; };
        double v = 0.0;
        for (const auto& t : terms) {
            v += t.c * x(t.a) * x(t.b) * x(t.d);
        }
        return v;
    };
    return f;
}

inline std::vector<ConfigPoint> random_points(int count, int dim, std::mt19937& rng, double scale = 1.0)
{
    std::uniform_real_distribution<double> u(-scale, scale);
    std::vector<ConfigPoint> out;
    for (int i = 0; i < count; ++i) {
        ConfigPoint q(dim);
        for (int c = 0; c < dim; ++c) {
            q[c] = u(rng);
        }
        out.push_back(q);
    }
    return out;
}

/// Central difference of the discrete action with respect to node p.
inline Vector action_gradient_fd(const ConstrainedSystem& system, DiscretePath path,
                                 const MultiplierSequence& mult, int p, double step = 1e-5)
{
    Vector g(system.dim);
    for (int c = 0; c < system.dim; ++c) {
        double& x = path.nodes[static_cast<std::size_t>(p)][c];
        const double x0 = x;
        x = x0 + step;
        const double up = discrete_action(system, path, mult);
        x = x0 - step;
        const double down = discrete_action(system, path, mult);
        x = x0;
        g[c] = (up - down) / (2.0 * step);
    }
    return g;
}

inline double relative_error(const Vector& a, const Vector& b)
{
    return (a - b).lpNorm<Eigen::Infinity>() / std::max(1.0, b.lpNorm<Eigen::Infinity>());
}

inline Vector vec(std::initializer_list<double> v)
{
    Vector out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) {
        out[i++] = x;
    }
    return out;
}

/**
 * Sphere-spline state sampled from a great circle with angular step theta in
 * the plane spanned by u and v, the last node pushed off the plane by eps.
 * Forward stepping of the spline recurrence amplifies perturbations
 * polynomially, so long runs need data close to an exact solution.
 */
inline StepState sphere_circle_state(double r, double theta, double eps, Vector u, Vector v)
{
    u.normalize();
    v = (v - v.dot(u) * u).normalized();
    const Vector normal = Eigen::Vector3d(u).cross(Eigen::Vector3d(v));
    StepState s;
    for (int j = 0; j < 4; ++j) {
        Vector q = std::cos(j * theta) * u + std::sin(j * theta) * v;
        if (j == 3) {
            q += eps * normal;
        }
        s.configs.push_back(r * q.normalized());
    }
    s.multipliers = {Vector::Zero(1), Vector::Zero(1)};
    return s;
}

}  // namespace hovi::fixtures
